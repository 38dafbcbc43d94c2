//! Cross-module invariants checked on random chains.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use txgraph_core::classifier::SetClassifier;
use txgraph_core::explorer::{explore, AddrKind, Direction, EdgeDir, Exploration, ExplorationConfig, NoClock};
use txgraph_core::features::{extract_features, feature_index, AMOUNT_FEATURES, N_FEATURES};
use txgraph_core::fixtures::random_chain;
use txgraph_core::relations::{find_relations, Discovery};
use txgraph_core::tags::{Provenance, ResolvedTag, TagDbOptions};
use txgraph_core::{Category, ChainStore, ClusterMap, IngestOptions, TagDb, TagRecord, Transaction};

fn store_of(txs: Vec<Transaction>) -> ChainStore {
    ChainStore::build(txs, &IngestOptions::default()).unwrap()
}

/// Independent restatement of the equal-output mixing heuristic.
fn looks_like_coinjoin(tx: &Transaction) -> bool {
    if tx.coinbase {
        return false;
    }
    let mut by_value: BTreeMap<u64, usize> = BTreeMap::new();
    for o in &tx.outputs {
        if o.address().is_some() {
            *by_value.entry(o.value).or_default() += 1;
        }
    }
    by_value
        .values()
        .any(|&n| n >= 3 && n <= tx.inputs.len() && tx.outputs.len() + 1 >= 2 * n)
}

/// Connected components of the co-spend graph by depth-first search.
fn brute_force_partition(txs: &[Transaction]) -> BTreeSet<Vec<String>> {
    let mut adj: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for tx in txs {
        let addrs: Vec<&str> = tx
            .inputs
            .iter()
            .chain(&tx.outputs)
            .filter_map(|s| s.address())
            .collect();
        for a in &addrs {
            adj.entry(a.to_string()).or_default();
        }
        if tx.coinbase || looks_like_coinjoin(tx) {
            continue;
        }
        let ins: Vec<&str> = tx.inputs.iter().filter_map(|s| s.address()).collect();
        for a in &ins {
            for b in &ins {
                if a != b {
                    adj.get_mut(*a).unwrap().insert(b.to_string());
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut parts = BTreeSet::new();
    for start in adj.keys() {
        if !seen.insert(start.clone()) {
            continue;
        }
        let mut comp = vec![start.clone()];
        let mut stack = vec![start.clone()];
        while let Some(a) = stack.pop() {
            for b in &adj[&a] {
                if seen.insert(b.clone()) {
                    comp.push(b.clone());
                    stack.push(b.clone());
                }
            }
        }
        comp.sort();
        parts.insert(comp);
    }
    parts
}

fn partition(clusters: &ClusterMap) -> BTreeSet<Vec<String>> {
    clusters
        .clusters()
        .map(|(_, m)| {
            let mut v = m.to_vec();
            v.sort();
            v
        })
        .collect()
}

const CATEGORIES: [Category; 8] = [
    Category::Exchange,
    Category::Gambling,
    Category::Mixer,
    Category::Ransomware,
    Category::Scam,
    Category::Clipper,
    Category::Donation,
    Category::Ponzi,
];

fn random_tags(rng: &mut ChaCha8Rng, addresses: &[String], rate: f64) -> Vec<TagRecord> {
    let mut out = Vec::new();
    for a in addresses {
        if rng.gen_bool(rate) {
            let c = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
            out.push(TagRecord::new(a, c, &format!("l{}", rng.gen_range(0..4))));
            if rng.gen_bool(0.2) {
                let c = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
                out.push(TagRecord::new(a, c, &format!("l{}", rng.gen_range(0..4))));
            }
        }
    }
    out
}

/// A random chain with tags, seeds and a classifier that marks whole
/// clusters.
struct World {
    store: ChainStore,
    clusters: ClusterMap,
    tagdb: TagDb,
    seeds: Vec<String>,
    exchanges: SetClassifier,
}

fn world(seed: u64, n_tx: usize, n_addr: usize) -> World {
    let store = store_of(random_chain(seed, n_tx, n_addr));
    let clusters = ClusterMap::build(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let addrs: Vec<String> = store.addresses().map(str::to_string).collect();
    let mut tagdb = TagDb::build(&random_tags(&mut rng, &addrs, 0.04), &TagDbOptions::default());
    tagdb.propagate_to_clusters(&clusters);
    let n_seeds = rng.gen_range(1..=3);
    let seeds: Vec<String> = addrs.choose_multiple(&mut rng, n_seeds).cloned().collect();
    let mut exchanges = BTreeSet::new();
    for (_, members) in clusters.clusters() {
        if rng.gen_bool(0.08) {
            exchanges.extend(members.iter().cloned());
        }
    }
    World {
        store,
        clusters,
        tagdb,
        seeds,
        exchanges: SetClassifier { exchanges },
    }
}

fn run(w: &World, direction: Direction, classifier: bool, sdd: bool) -> Exploration {
    let cfg = ExplorationConfig {
        direction,
        sdd,
        classifier_enabled: classifier,
        ..ExplorationConfig::default()
    };
    let c: Option<&dyn txgraph_core::classifier::ExchangeClassifier> =
        if classifier { Some(&w.exchanges) } else { None };
    explore(&w.store, &w.clusters, &w.tagdb, c, &w.seeds, &cfg, &NoClock).unwrap()
}

fn node_ids(e: &Exploration) -> BTreeSet<String> {
    e.graph
        .addresses
        .keys()
        .map(|a| format!("a:{a}"))
        .chain(e.graph.txs.keys().map(|t| format!("t:{t}")))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn union_find_matches_brute_force(seed in any::<u64>(), n_tx in 10usize..800, n_addr in 20usize..400) {
        let txs = random_chain(seed, n_tx, n_addr);
        let expected = brute_force_partition(&txs);
        let clusters = ClusterMap::build(&store_of(txs));
        prop_assert_eq!(partition(&clusters), expected);
    }

    #[test]
    fn clustering_ignores_transaction_order(seed in any::<u64>(), n_tx in 10usize..400) {
        let txs = random_chain(seed, n_tx, 150);
        let a = ClusterMap::build(&store_of(txs.clone()));
        let mut shuffled = txs;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
        let b = ClusterMap::build(&store_of(shuffled));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn coinjoin_never_merges(seed in any::<u64>(), n_tx in 20usize..400, k in 3usize..6) {
        let txs = random_chain(seed, n_tx, 200);
        let before = ClusterMap::build(&store_of(txs.clone()));
        let addrs: Vec<String> = before.assignments().map(|(a, _)| a.to_string()).collect();
        prop_assume!(addrs.len() >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked: Vec<String> = addrs.choose_multiple(&mut rng, k).cloned().collect();
        let ins: Vec<(&str, u64)> = picked.iter().map(|a| (a.as_str(), 1_000_000)).collect();
        let names: Vec<String> = (0..k).map(|i| format!("mix{i}")).collect();
        let changes: Vec<String> = (0..k).map(|i| format!("chg{i}")).collect();
        let mut outs: Vec<(&str, u64)> = names.iter().map(|n| (n.as_str(), 500_000)).collect();
        outs.extend(changes.iter().map(|n| (n.as_str(), 499_000)));
        let height = txs.iter().map(|t| t.height).max().unwrap_or(0) + 1;
        let cj = Transaction::new("c".repeat(64), height, 1_700_000_000, &ins, &outs);
        prop_assert!(looks_like_coinjoin(&cj));
        let mut more = txs;
        more.push(cj);
        let after = ClusterMap::build(&store_of(more));
        for a in &addrs {
            prop_assert_eq!(
                before.members(before.cluster_of(a)).len(),
                after.members(after.cluster_of(a)).len()
            );
        }
    }

    #[test]
    fn chain_index_is_sound(seed in any::<u64>(), n_tx in 1usize..300) {
        let store = store_of(random_chain(seed, n_tx, 100));
        for a in store.addresses() {
            for &i in store.deposit_indices(a) {
                prop_assert!(store.tx(i).has_output(a));
            }
            for &i in store.withdrawal_indices(a) {
                prop_assert!(store.tx(i).has_input(a));
            }
        }
        for (i, tx) in store.transactions().iter().enumerate() {
            prop_assert_eq!(store.tx_index(&tx.txid), Some(i as u32));
            for a in tx.outputs.iter().filter_map(|s| s.address()) {
                prop_assert!(store.deposit_indices(a).contains(&(i as u32)));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn forward_is_dominated(seed in any::<u64>(), n_tx in 20usize..1500, classifier in any::<bool>(), sdd in any::<bool>()) {
        let w = world(seed, n_tx, n_tx / 3 + 10);
        let bnf = run(&w, Direction::BackAndForth, classifier, sdd);
        let fwd = run(&w, Direction::ForwardOnly, classifier, sdd);
        prop_assert!(node_ids(&fwd).is_subset(&node_ids(&bnf)));
        for k in fwd.graph.edges.keys() {
            prop_assert!(bnf.graph.edges.contains_key(k));
        }
    }

    #[test]
    fn exploration_invariants(seed in any::<u64>(), n_tx in 20usize..1200, classifier in any::<bool>(), forward in any::<bool>()) {
        let w = world(seed, n_tx, n_tx / 3 + 10);
        let dir = if forward { Direction::ForwardOnly } else { Direction::BackAndForth };
        let e = run(&w, dir, classifier, false);
        prop_assert_eq!(e.graph.seedless_components(), 0);
        prop_assert_eq!(e.graph.components(), e.stats.components);
        // Every transaction was reached through an address that was traced.
        for txid in e.graph.txs.keys() {
            let traced = e.graph.edges.keys().any(|k| {
                &k.txid == txid
                    && matches!(e.graph.addresses[&k.address].kind, AddrKind::Seed | AddrKind::Explored)
            });
            prop_assert!(traced, "tx {} has no traced neighbour", txid);
        }
        // Forward never walks backwards from a traced address.
        if forward {
            for k in e.graph.edges.keys().filter(|k| k.dir == EdgeDir::Out) {
                let spenders = e.graph.edges.keys().filter(|j| j.txid == k.txid && j.dir == EdgeDir::In);
                prop_assert!(spenders.count() > 0);
            }
        }
        for (a, n) in &e.graph.addresses {
            prop_assert_ne!(n.kind, AddrKind::Unexplored);
            if n.kind == AddrKind::TaggedStop {
                prop_assert!(w.tagdb.lookup(a, &w.clusters).is_some_and(|t| t.owner.category.is_service()));
            }
            if n.kind == AddrKind::ClassifierStop {
                prop_assert!(classifier && w.exchanges.exchanges.contains(a));
            }
        }
        let again = run(&w, dir, classifier, false);
        prop_assert_eq!(&again.graph, &e.graph);
    }

    #[test]
    fn classifier_only_shrinks_the_graph(seed in any::<u64>(), n_tx in 20usize..1200) {
        let w = world(seed, n_tx, n_tx / 3 + 10);
        let on = run(&w, Direction::BackAndForth, true, false);
        let off = run(&w, Direction::BackAndForth, false, false);
        prop_assert!(node_ids(&on).is_subset(&node_ids(&off)));
    }

    #[test]
    fn relations_are_well_formed_and_monotone(seed in any::<u64>(), n_tx in 20usize..800) {
        let w = world(seed, n_tx, n_tx / 3 + 10);
        let e = run(&w, Direction::BackAndForth, true, false);
        let report = find_relations(&e.graph, &w.tagdb, &w.clusters, &[]);
        let seed_tags: BTreeSet<_> = w
            .seeds
            .iter()
            .filter_map(|s| w.tagdb.lookup(s, &w.clusters))
            .flat_map(|t| {
                let mut k = t.beneficiary.iter().map(|b| b.key()).collect::<Vec<_>>();
                if !t.owner.category.is_service() {
                    k.push(t.owner.key());
                }
                k
            })
            .collect();
        let linked = |x: &str, y: &str| {
            let (a, t) = if let Some(a) = x.strip_prefix("a:") { (a, y.strip_prefix("t:")) } else { (y.strip_prefix("a:").unwrap_or(""), x.strip_prefix("t:")) };
            t.is_some_and(|t| e.graph.edges.keys().any(|k| k.address == a && k.txid == t))
        };
        for r in &report.evidence {
            prop_assert!(!seed_tags.contains(&r.tag));
            if r.discovery == Discovery::Mi {
                prop_assert!(r.path.is_empty());
                prop_assert_eq!(w.clusters.cluster_of(&r.target), r.seed_cluster);
                continue;
            }
            prop_assert_eq!(r.path.first().cloned(), Some(format!("a:{}", r.seed)));
            prop_assert_eq!(r.path.last().cloned(), Some(format!("a:{}", r.target)));
            prop_assert!(r.path.len() >= 3 && r.path.len() % 2 == 1);
            for (i, id) in r.path.iter().enumerate() {
                prop_assert_eq!(id.starts_with("a:"), i % 2 == 0);
                if i > 0 && i + 1 < r.path.len() && i % 2 == 0 {
                    prop_assert!(!e.graph.addresses[&id[2..]].kind.is_stop());
                }
            }
            for p in r.path.windows(2) {
                prop_assert!(linked(&p[0], &p[1]));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let untagged: Vec<&String> = e
            .graph
            .addresses
            .iter()
            .filter(|(a, n)| !n.seed && w.tagdb.lookup(a, &w.clusters).is_none())
            .map(|(a, _)| a)
            .collect();
        prop_assume!(!untagged.is_empty());
        let target = untagged[rng.gen_range(0..untagged.len())];
        let mut more = w.tagdb.clone();
        more.insert_direct(ResolvedTag::direct(TagRecord::new(target, Category::Theft, "added")));
        let after = find_relations(&e.graph, &more, &w.clusters, &[]);
        prop_assert!(report.keys().is_subset(&after.keys()));
    }

    #[test]
    fn tag_database_invariants(seed in any::<u64>(), n_tx in 10usize..400) {
        let store = store_of(random_chain(seed, n_tx, 120));
        let clusters = ClusterMap::build(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let addrs: Vec<String> = store.addresses().map(str::to_string).collect();
        let mut records = random_tags(&mut rng, &addrs, 0.2);
        let db = TagDb::build(&records, &TagDbOptions::default());
        records.shuffle(&mut rng);
        prop_assert_eq!(&TagDb::build(&records, &TagDbOptions::default()), &db);

        let mut prop = db.clone();
        prop.propagate_to_clusters(&clusters);
        for (a, t) in db.direct_tags() {
            prop_assert_eq!(prop.direct_tag(a), Some(t));
            let looked = prop.lookup(a, &clusters);
            prop_assert_eq!(looked.as_ref(), Some(t));
            prop_assert_eq!(t.provenance, Provenance::Direct);
        }
        let all = prop.direct_tags().map(|(_, t)| t).chain(prop.propagated_tags().map(|(_, t)| t));
        for t in all {
            if t.beneficiary.is_some() {
                prop_assert!(t.owner.category.is_service());
            }
        }
        // Each reviewed record's address has no direct tag.
        for r in db.review() {
            prop_assert!(db.direct_tag(&r.record.address).is_none());
        }
    }

    #[test]
    fn amount_features_scale_linearly(seed in any::<u64>(), n_tx in 10usize..300, k in 2u64..6) {
        let txs = random_chain(seed, n_tx, 80);
        let scaled: Vec<Transaction> = txs
            .iter()
            .cloned()
            .map(|mut t| {
                for s in t.inputs.iter_mut().chain(t.outputs.iter_mut()) {
                    s.value *= k;
                }
                t
            })
            .collect();
        let (a, b) = (store_of(txs), store_of(scaled));
        let amount: BTreeSet<usize> = AMOUNT_FEATURES.iter().map(|n| feature_index(n).unwrap()).collect();
        for addr in a.addresses().take(40) {
            let fa = extract_features(&a, addr);
            prop_assert_eq!(&fa, &extract_features(&a, addr));
            let fb = extract_features(&b, addr);
            for i in 0..N_FEATURES {
                let (x, y) = (fa.as_slice()[i], fb.as_slice()[i]);
                let want = if amount.contains(&i) { x * k as f64 } else { x };
                prop_assert!((y - want).abs() <= 1e-9 * want.abs().max(1.0), "feature {} of {}: {} vs {}", i, addr, y, want);
            }
        }
    }
}
