//! Relations between a campaign's seeds and tagged entities in the
//! exploration graph, plus oracle tagging of graph addresses.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chain::ChainStore;
use crate::cluster::{ClusterId, ClusterMap};
use crate::error::RelationError;
use crate::explorer::{address_node_id, tx_node_id, AddrKind, EdgeDir, ExplorationGraph, OracleHit};
use crate::oracles::Oracle;
use crate::tags::{Category, ResolvedTag, TagDb, TagKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub address: String,
    pub family: String,
}

/// Runs every oracle on every graph address. Positives gain a
/// `malware:<family>` hit; traced non-seed addresses become
/// [`AddrKind::OracleDetected`].
pub fn apply_oracles(
    graph: &mut ExplorationGraph,
    store: &ChainStore,
    oracles: &[&dyn Oracle],
) -> Vec<Detection> {
    let mut found = Vec::new();
    for (address, node) in graph.addresses.iter_mut() {
        for o in oracles {
            let r = o.check(store, address);
            if !r.is_signaling {
                continue;
            }
            let family = o.family().to_string();
            node.oracle.retain(|h| h.family != family);
            node.oracle.push(OracleHit {
                family: family.clone(),
                evidence: r.evidence,
            });
            if matches!(node.kind, AddrKind::Explored | AddrKind::Unexplored) {
                node.kind = AddrKind::OracleDetected;
            }
            found.push(Detection {
                address: address.clone(),
                family,
            });
        }
    }
    found
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelDirection {
    /// Funds flow from the seed towards the entity.
    SeedToEntity,
    /// Funds flow from the entity towards the seed.
    EntityToSeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discovery {
    Exploration,
    /// Tagged member of a seed's own multi-input cluster.
    Mi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Owner,
    Beneficiary,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationKey {
    pub seed_cluster: ClusterId,
    pub tag: TagKey,
    pub direction: RelDirection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub seed: String,
    pub seed_cluster: ClusterId,
    pub target: String,
    pub tag: TagKey,
    pub role: Role,
    pub direction: RelDirection,
    pub discovery: Discovery,
    /// Node ids from the seed to the target, in traversal order. Empty for
    /// cluster relations.
    pub path: Vec<String>,
    /// Value on the edge that reaches the target.
    pub satoshis: u64,
}

impl Relation {
    pub fn key(&self) -> RelationKey {
        RelationKey {
            seed_cluster: self.seed_cluster,
            tag: self.tag.clone(),
            direction: self.direction,
        }
    }

    fn rank(&self) -> (Discovery, usize, &[String], &str, &str) {
        (self.discovery, self.path.len(), &self.path, &self.seed, &self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationReport {
    pub seeds: Vec<String>,
    /// One representative per key: exploration before clustering, then the
    /// shortest path, then lexicographic order.
    pub relations: Vec<Relation>,
    /// Every path found, for auditing.
    pub evidence: Vec<Relation>,
}

impl RelationReport {
    pub fn keys(&self) -> BTreeSet<RelationKey> {
        self.relations.iter().map(Relation::key).collect()
    }

    /// Distinct tags; the flag is set when only cluster membership found
    /// the tag.
    pub fn tag_summary(&self) -> Vec<(TagKey, bool)> {
        let mut m: BTreeMap<&TagKey, bool> = BTreeMap::new();
        for r in &self.evidence {
            let mi = r.discovery == Discovery::Mi;
            m.entry(&r.tag).and_modify(|v| *v &= mi).or_insert(mi);
        }
        m.into_iter().map(|(k, v)| (k.clone(), v)).collect()
    }

    /// `family, count, tag1, ...` with `*` on cluster-only tags.
    pub fn summary_row(&self, family: &str) -> Vec<String> {
        let tags = self.tag_summary();
        let mut row = alloc::vec![family.to_string(), tags.len().to_string()];
        for (k, mi) in tags {
            let mut s = k.to_string();
            if mi {
                s.push('*');
            }
            row.push(s);
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationDiff {
    pub only_left: Vec<RelationKey>,
    pub only_right: Vec<RelationKey>,
    pub common: usize,
}

/// Compares two reports built from the same seeds.
pub fn diff_reports(a: &RelationReport, b: &RelationReport) -> Result<RelationDiff, RelationError> {
    let sa: BTreeSet<&String> = a.seeds.iter().collect();
    let sb: BTreeSet<&String> = b.seeds.iter().collect();
    if sa != sb {
        return Err(RelationError::SeedMismatch);
    }
    let ka = a.keys();
    let kb = b.keys();
    Ok(RelationDiff {
        only_left: ka.difference(&kb).cloned().collect(),
        only_right: kb.difference(&ka).cloned().collect(),
        common: ka.intersection(&kb).count(),
    })
}

fn tagged_keys(tag: &ResolvedTag) -> Vec<(TagKey, Role)> {
    let mut v = alloc::vec![(tag.owner.key(), Role::Owner)];
    if let Some(b) = &tag.beneficiary {
        v.push((b.key(), Role::Beneficiary));
    }
    v
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Node<'g> {
    Addr(&'g str),
    Tx(&'g str),
}

impl Node<'_> {
    fn id(&self) -> String {
        match self {
            Node::Addr(a) => address_node_id(a),
            Node::Tx(t) => tx_node_id(t),
        }
    }
}

struct Adjacency<'g> {
    fwd: BTreeMap<Node<'g>, Vec<(Node<'g>, u64)>>,
    back: BTreeMap<Node<'g>, Vec<(Node<'g>, u64)>>,
}

impl<'g> Adjacency<'g> {
    fn new(g: &'g ExplorationGraph) -> Self {
        let mut fwd: BTreeMap<Node<'g>, Vec<(Node<'g>, u64)>> = BTreeMap::new();
        let mut back: BTreeMap<Node<'g>, Vec<(Node<'g>, u64)>> = BTreeMap::new();
        for (k, e) in &g.edges {
            let a = Node::Addr(k.address.as_str());
            let t = Node::Tx(k.txid.as_str());
            let (from, to) = match k.dir {
                EdgeDir::In => (a, t),
                EdgeDir::Out => (t, a),
            };
            fwd.entry(from).or_default().push((to, e.satoshis));
            back.entry(to).or_default().push((from, e.satoshis));
        }
        for v in fwd.values_mut().chain(back.values_mut()) {
            v.sort();
        }
        Adjacency { fwd, back }
    }
}

/// Extracts relations for the graph's seeds. Tags come from `tagdb` (falling
/// back to the tag stored on the node) plus oracle hits. Tags shared with the
/// campaign itself (seed tags and `malware:<family>` for `families`) are not
/// relations. Stop nodes end a path; classifier stops carry no tag and so
/// never become targets by themselves.
pub fn find_relations(
    graph: &ExplorationGraph,
    tagdb: &TagDb,
    clusters: &ClusterMap,
    families: &[String],
) -> RelationReport {
    let tags_of = |addr: &str| -> Vec<(TagKey, Role)> {
        let mut v = Vec::new();
        let node = graph.addresses.get(addr);
        if let Some(t) = tagdb.lookup(addr, clusters).or_else(|| node.and_then(|n| n.tag.clone())) {
            v.extend(tagged_keys(&t));
        }
        if let Some(n) = node {
            for h in &n.oracle {
                v.push((h.tag_key(), Role::Owner));
            }
        }
        v
    };

    let seeds: Vec<String> = graph.seeds().map(|s| s.to_string()).collect();
    let mut campaign: BTreeSet<TagKey> = families
        .iter()
        .map(|f| TagKey {
            category: Category::Malware,
            label: f.clone(),
        })
        .collect();
    for s in &seeds {
        let tag = tagdb.lookup(s, clusters).or_else(|| graph.addresses[s].tag.clone());
        if let Some(t) = tag {
            if !t.owner.category.is_service() {
                campaign.insert(t.owner.key());
            }
            if let Some(b) = &t.beneficiary {
                campaign.insert(b.key());
            }
        }
    }

    let adj = Adjacency::new(graph);
    let mut evidence = Vec::new();
    for seed in &seeds {
        let seed_cluster = clusters.cluster_of(seed);
        for (direction, edges) in [
            (RelDirection::SeedToEntity, &adj.fwd),
            (RelDirection::EntityToSeed, &adj.back),
        ] {
            let start = Node::Addr(seed.as_str());
            let mut parent: BTreeMap<Node, (Node, u64)> = BTreeMap::new();
            let mut queue = VecDeque::from([start]);
            let mut seen = BTreeSet::from([start]);
            while let Some(n) = queue.pop_front() {
                if let Node::Addr(a) = n {
                    if n != start {
                        for (tag, role) in tags_of(a) {
                            if campaign.contains(&tag) {
                                continue;
                            }
                            let mut path = alloc::vec![n.id()];
                            let mut cur = n;
                            let mut satoshis = 0;
                            let mut first = true;
                            while let Some(&(p, v)) = parent.get(&cur) {
                                if first {
                                    satoshis = v;
                                    first = false;
                                }
                                path.push(p.id());
                                cur = p;
                            }
                            path.reverse();
                            evidence.push(Relation {
                                seed: seed.clone(),
                                seed_cluster,
                                target: a.to_string(),
                                tag,
                                role,
                                direction,
                                discovery: Discovery::Exploration,
                                path,
                                satoshis,
                            });
                        }
                        if graph.addresses.get(a).is_some_and(|x| x.kind.is_stop()) {
                            continue;
                        }
                    }
                }
                if let Some(next) = edges.get(&n) {
                    for &(m, v) in next {
                        if seen.insert(m) {
                            parent.insert(m, (n, v));
                            queue.push_back(m);
                        }
                    }
                }
            }
        }
        let members: Vec<String> = if clusters.size(seed_cluster) > 0 {
            clusters.members(seed_cluster).to_vec()
        } else {
            alloc::vec![seed.clone()]
        };
        for m in members {
            let Some(t) = tagdb.lookup(&m, clusters) else {
                continue;
            };
            for (tag, role) in tagged_keys(&t) {
                if campaign.contains(&tag) {
                    continue;
                }
                evidence.push(Relation {
                    seed: seed.clone(),
                    seed_cluster,
                    target: m.clone(),
                    tag,
                    role,
                    direction: RelDirection::SeedToEntity,
                    discovery: Discovery::Mi,
                    path: Vec::new(),
                    satoshis: 0,
                });
            }
        }
    }

    evidence.sort_by(|a, b| a.key().cmp(&b.key()).then_with(|| a.rank().cmp(&b.rank())));
    evidence.dedup();
    let mut relations: Vec<Relation> = Vec::new();
    for r in &evidence {
        if relations.last().is_none_or(|l| l.key() != r.key()) {
            relations.push(r.clone());
        }
    }
    RelationReport {
        seeds,
        relations,
        evidence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::SetClassifier;
    use crate::explorer::{explore, Direction, ExplorationConfig, NoClock};
    use crate::fixtures;
    use crate::oracles::{CerberOracle, OracleResult};
    use crate::tags::TagRecord;
    use alloc::vec;

    fn fig2_report(direction: Direction) -> RelationReport {
        let f = fixtures::fig2();
        let set = SetClassifier::new(f.classifier_exchanges.iter().cloned());
        let cfg = ExplorationConfig {
            direction,
            classifier_enabled: true,
            ..ExplorationConfig::default()
        };
        let e = explore(&f.store, &f.clusters, &f.tagdb, Some(&set), &f.seeds, &cfg, &NoClock).unwrap();
        find_relations(&e.graph, &f.tagdb, &f.clusters, &[])
    }

    #[test]
    fn fig2_single_relation_in_both_modes() {
        for d in [Direction::BackAndForth, Direction::ForwardOnly] {
            let r = fig2_report(d);
            assert_eq!(r.relations.len(), 1, "{d:?}");
            let rel = &r.relations[0];
            assert_eq!(rel.seed, "s1");
            assert_eq!(rel.target, "c");
            assert_eq!(rel.tag.to_string(), "exchange:poloniex");
            assert_eq!(rel.direction, RelDirection::SeedToEntity);
            assert_eq!(rel.discovery, Discovery::Exploration);
            assert_eq!(rel.path.first().unwrap(), "a:s1");
            assert_eq!(rel.path.last().unwrap(), "a:c");
            assert_eq!(rel.path.len(), 7);
            assert_eq!(rel.satoshis, 67_000);
            assert!(r.evidence.iter().all(|e| e.target != "b"));
            assert_eq!(r.summary_row("fig2"), vec!["fig2", "1", "exchange:poloniex"]);
        }
    }

    #[test]
    fn mi_relation_and_diff() {
        let f = fixtures::fig2();
        let mut db = f.tagdb.clone();
        // Tagging a traced address adds a relation and removes none.
        db.insert_direct(ResolvedTag::direct(TagRecord::new("h", Category::Scam, "scamco")));
        let set = SetClassifier::new(f.classifier_exchanges.iter().cloned());
        let cfg = ExplorationConfig {
            classifier_enabled: true,
            ..ExplorationConfig::default()
        };
        let e = explore(&f.store, &f.clusters, &f.tagdb, Some(&set), &f.seeds, &cfg, &NoClock).unwrap();
        let before = find_relations(&e.graph, &f.tagdb, &f.clusters, &[]);
        let after = find_relations(&e.graph, &db, &f.clusters, &[]);
        let d = diff_reports(&before, &after).unwrap();
        assert!(d.only_left.is_empty());
        assert_eq!(d.only_right.len(), 1);
        assert_eq!(d.only_right[0].tag.to_string(), "scam:scamco");

        // A tag on a seed's cluster mate is a clustering relation.
        let mut db2 = f.tagdb.clone();
        db2.insert_direct(ResolvedTag::direct(TagRecord::new("s1", Category::Exchange, "coincola")));
        let r = find_relations(&e.graph, &db2, &f.clusters, &[]);
        let mi: Vec<_> = r.relations.iter().filter(|x| x.discovery == Discovery::Mi).collect();
        assert_eq!(mi.len(), 1);
        assert!(mi[0].path.is_empty());
        // s2 also reaches s1 by tracing back, so the tag is not cluster-only.
        assert!(r.summary_row("x").contains(&"exchange:coincola".to_string()));
        let fwd = ExplorationConfig {
            direction: Direction::ForwardOnly,
            ..ExplorationConfig::default()
        };
        let e1 = explore(&f.store, &f.clusters, &db2, None, &["s1".into()], &fwd, &NoClock).unwrap();
        let r = find_relations(&e1.graph, &db2, &f.clusters, &[]);
        assert!(r.summary_row("x").contains(&"exchange:coincola*".to_string()));

        let mut other = after.clone();
        other.seeds.pop();
        assert_eq!(diff_reports(&before, &other).unwrap_err(), RelationError::SeedMismatch);
    }

    struct Always(&'static str);
    impl Oracle for Always {
        fn family(&self) -> &str {
            self.0
        }
        fn check(&self, _store: &ChainStore, address: &str) -> OracleResult {
            OracleResult {
                is_signaling: address == "h" || address == "s1",
                ..OracleResult::default()
            }
        }
    }

    #[test]
    fn oracle_tags_are_campaign_tags() {
        let f = fixtures::fig2();
        let cfg = ExplorationConfig::default();
        let mut e = explore(&f.store, &f.clusters, &f.tagdb, None, &f.seeds, &cfg, &NoClock).unwrap();
        let hits = apply_oracles(&mut e.graph, &f.store, &[&Always("cerber"), &CerberOracle]);
        assert_eq!(hits.len(), 2);
        assert_eq!(e.graph.addresses["h"].kind, AddrKind::OracleDetected);
        assert_eq!(e.graph.addresses["s1"].kind, AddrKind::Seed);
        let r = find_relations(&e.graph, &f.tagdb, &f.clusters, &["cerber".into()]);
        assert!(r.evidence.iter().all(|x| x.tag.label != "cerber"));
        let r = find_relations(&e.graph, &f.tagdb, &f.clusters, &[]);
        assert!(r.evidence.iter().any(|x| x.target == "h" && x.tag.to_string() == "malware:cerber"));
        assert!(!r.evidence.iter().any(|x| x.target == "s1" && x.seed == "s1"));
    }
}
