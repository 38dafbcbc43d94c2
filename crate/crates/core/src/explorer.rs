//! Worklist exploration from seed addresses.
//!
//! Addresses are popped by priority (fewest transaction slots first), their
//! filtered transactions are added to a bipartite address/transaction graph,
//! and every newly discovered address is checked for a change of ownership
//! (service tag or exchange classifier) before it may be expanded in turn.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainStore, Transaction};
use crate::classifier::ExchangeClassifier;
use crate::cluster::{detect_coinjoin, detect_dust_with, ClusterId, ClusterMap, UnionFind, DUST_MIN_OUTPUTS};
use crate::error::ExploreError;
use crate::oracles::Evidence;
use crate::tags::{is_exploration_stop, ResolvedTag, TagDb, TagKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    BackAndForth,
    ForwardOnly,
    BackwardsOnly,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::BackAndForth => "back_and_forth",
            Direction::ForwardOnly => "forward_only",
            Direction::BackwardsOnly => "backwards_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.replace('-', "_").as_str() {
            "back_and_forth" => Some(Direction::BackAndForth),
            "forward_only" | "forward" => Some(Direction::ForwardOnly),
            "backwards_only" | "backward_only" | "backwards" => Some(Direction::BackwardsOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub direction: Direction,
    /// Skip deposit transactions of seeds.
    pub sdd: bool,
    pub max_addresses: Option<usize>,
    pub max_seconds: Option<u64>,
    pub classifier_enabled: bool,
    pub dust_filter_enabled: bool,
    pub coinjoin_filter_enabled: bool,
    pub dust_threshold: usize,
    /// Transactions never added to the graph (e.g. researcher-injected).
    pub denylist: BTreeSet<String>,
    pub rng_seed: u64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            direction: Direction::BackAndForth,
            sdd: false,
            max_addresses: None,
            max_seconds: None,
            classifier_enabled: false,
            dust_filter_enabled: true,
            coinjoin_filter_enabled: true,
            dust_threshold: DUST_MIN_OUTPUTS,
            denylist: BTreeSet::new(),
            rng_seed: 0,
        }
    }
}

/// Monotonic time source used for the time limit and runtime statistics.
pub trait Clock {
    fn now_micros(&self) -> u64;
}

/// A clock that never advances.
pub struct NoClock;

impl Clock for NoClock {
    fn now_micros(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AddrKind {
    Seed,
    Explored,
    TaggedStop,
    ClassifierStop,
    Unexplored,
    OracleDetected,
}

impl AddrKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AddrKind::Seed => "seed",
            AddrKind::Explored => "explored",
            AddrKind::TaggedStop => "tagged-stop",
            AddrKind::ClassifierStop => "classifier-stop",
            AddrKind::Unexplored => "unexplored",
            AddrKind::OracleDetected => "oracle-detected",
        }
    }

    pub fn is_stop(self) -> bool {
        matches!(self, AddrKind::TaggedStop | AddrKind::ClassifierStop)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleHit {
    pub family: String,
    pub evidence: Vec<Evidence>,
}

impl OracleHit {
    pub fn tag_key(&self) -> TagKey {
        TagKey {
            category: crate::tags::Category::Malware,
            label: self.family.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddressNode {
    pub kind: AddrKind,
    pub seed: bool,
    pub tag: Option<ResolvedTag>,
    pub cluster: ClusterId,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oracle: Vec<OracleHit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxNode {
    /// Sum of all output values.
    pub satoshis: u64,
    pub height: u64,
    pub time: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeDir {
    /// Address → transaction (the address spends).
    In,
    /// Transaction → address (the address receives).
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub address: String,
    pub txid: String,
    pub dir: EdgeDir,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeAttrs {
    /// Slot indices occupied by the address on this side of the transaction.
    pub slots: Vec<u32>,
    pub satoshis: u64,
}

/// Bipartite address/transaction graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationGraph {
    pub addresses: BTreeMap<String, AddressNode>,
    pub txs: BTreeMap<String, TxNode>,
    pub edges: BTreeMap<EdgeKey, EdgeAttrs>,
}

pub fn address_node_id(address: &str) -> String {
    format!("a:{address}")
}

pub fn tx_node_id(txid: &str) -> String {
    format!("t:{txid}")
}

impl ExplorationGraph {
    pub fn seeds(&self) -> impl Iterator<Item = &str> {
        self.addresses
            .iter()
            .filter(|(_, n)| n.seed)
            .map(|(a, _)| a.as_str())
    }

    /// Weakly connected components.
    pub fn components(&self) -> usize {
        let n_addr = self.addresses.len();
        let index: BTreeMap<&str, u32> = self
            .addresses
            .keys()
            .enumerate()
            .map(|(i, a)| (a.as_str(), i as u32))
            .collect();
        let tindex: BTreeMap<&str, u32> = self
            .txs
            .keys()
            .enumerate()
            .map(|(i, t)| (t.as_str(), (n_addr + i) as u32))
            .collect();
        let mut uf = UnionFind::new(n_addr + self.txs.len());
        for k in self.edges.keys() {
            if let (Some(&a), Some(&t)) = (index.get(k.address.as_str()), tindex.get(k.txid.as_str())) {
                uf.union(a, t);
            }
        }
        let mut roots = BTreeSet::new();
        for i in 0..(n_addr + self.txs.len()) as u32 {
            roots.insert(uf.find(i));
        }
        roots.len()
    }

    /// Components that contain no seed.
    pub fn seedless_components(&self) -> usize {
        let n_addr = self.addresses.len();
        let names: Vec<&String> = self.addresses.keys().collect();
        let index: BTreeMap<&str, u32> = names.iter().enumerate().map(|(i, a)| (a.as_str(), i as u32)).collect();
        let tindex: BTreeMap<&str, u32> = self
            .txs
            .keys()
            .enumerate()
            .map(|(i, t)| (t.as_str(), (n_addr + i) as u32))
            .collect();
        let mut uf = UnionFind::new(n_addr + self.txs.len());
        for k in self.edges.keys() {
            uf.union(index[k.address.as_str()], tindex[k.txid.as_str()]);
        }
        let mut with_seed = BTreeSet::new();
        let mut all = BTreeSet::new();
        for i in 0..(n_addr + self.txs.len()) as u32 {
            all.insert(uf.find(i));
        }
        for (i, a) in names.iter().enumerate() {
            if self.addresses[*a].seed {
                with_seed.insert(uf.find(i as u32));
            }
        }
        all.len() - with_seed.len()
    }

    /// Canonical DOT rendering: circles for addresses, boxes for
    /// transactions, fill by node kind.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph exploration {\n  rankdir=LR;\n");
        for (a, n) in &self.addresses {
            let (fill, font) = match n.kind {
                AddrKind::Seed => ("gray", "black"),
                AddrKind::TaggedStop | AddrKind::ClassifierStop => ("black", "white"),
                AddrKind::OracleDetected => ("red", "white"),
                AddrKind::Unexplored => ("lightyellow", "black"),
                AddrKind::Explored => ("white", "black"),
            };
            let tag = n
                .tag
                .as_ref()
                .map(|t| format!("\\n{}", t.owner.key()))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "  \"{}\" [shape=circle, style=filled, fillcolor={fill}, fontcolor={font}, label=\"{}{}\", kind=\"{}\"];",
                address_node_id(a),
                dot_escape(a),
                dot_escape(&tag),
                n.kind.as_str()
            );
        }
        for (t, n) in &self.txs {
            let _ = writeln!(
                s,
                "  \"{}\" [shape=box, label=\"{}\\n{} sat\"];",
                tx_node_id(t),
                &t[..t.len().min(8)],
                n.satoshis
            );
        }
        for (k, e) in &self.edges {
            let (from, to) = match k.dir {
                EdgeDir::In => (address_node_id(&k.address), tx_node_id(&k.txid)),
                EdgeDir::Out => (tx_node_id(&k.txid), address_node_id(&k.address)),
            };
            let _ = writeln!(s, "  \"{from}\" -> \"{to}\" [label=\"{}\"];", e.satoshis);
        }
        s.push_str("}\n");
        s
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('"', "\\\"")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreStatus {
    Completed,
    LimitReached,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationStats {
    pub seeds: usize,
    pub seeds_in_online_wallets: usize,
    pub explored_seeds: usize,
    pub components: usize,
    pub addresses: usize,
    pub txes: usize,
    pub unexplored: usize,
    pub tagged: usize,
    pub classifier_exchanges: usize,
    pub classifier_calls: usize,
    pub runtime_us: u64,
    pub status: ExploreStatus,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    pub graph: ExplorationGraph,
    pub stats: ExplorationStats,
}

/// `1 / (1 + slots)`: addresses in small transactions pop first.
pub fn compute_priority(total_slots: u64) -> f64 {
    1.0 / (1.0 + total_slots as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Trace(Option<ResolvedTag>),
    TagStop(ResolvedTag),
    ClassifierStop,
}

/// Clusters already found to be exchanges, and how often the model ran.
#[derive(Debug, Clone, Default)]
pub struct ClassifierCache {
    pub exchange_clusters: BTreeSet<ClusterId>,
    pub calls: usize,
}

/// Change-of-ownership check for one address. Tags come first; the
/// classifier only runs for untagged addresses whose cluster is not already
/// known to be an exchange. Returns the decision and whether the cluster was
/// newly marked as an exchange.
pub fn classify_address(
    store: &ChainStore,
    address: &str,
    tagdb: &TagDb,
    clusters: &ClusterMap,
    classifier: Option<&dyn ExchangeClassifier>,
    cache: &mut ClassifierCache,
) -> (Decision, bool) {
    if let Some(tag) = tagdb.lookup(address, clusters) {
        if is_exploration_stop(&tag) {
            return (Decision::TagStop(tag), false);
        }
        return (Decision::Trace(Some(tag)), false);
    }
    let Some(model) = classifier else {
        return (Decision::Trace(None), false);
    };
    let c = clusters.cluster_of(address);
    if cache.exchange_clusters.contains(&c) {
        return (Decision::ClassifierStop, false);
    }
    cache.calls += 1;
    if model.is_exchange(store, address) {
        cache.exchange_clusters.insert(c);
        (Decision::ClassifierStop, true)
    } else {
        (Decision::Trace(None), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Unseen,
    Queued,
    Expanded,
    Stopped,
}

struct AddrState {
    name: String,
    status: Status,
    kind: AddrKind,
    tag: Option<ResolvedTag>,
    cluster: ClusterId,
    seed: bool,
    generation: u32,
    in_graph: bool,
}

#[derive(Default)]
struct Contribution {
    txs: Vec<u32>,
    edges: Vec<(u32, u32, EdgeDir)>,
    addrs: Vec<u32>,
}

struct Explorer<'a> {
    store: &'a ChainStore,
    clusters: &'a ClusterMap,
    tagdb: &'a TagDb,
    classifier: Option<&'a dyn ExchangeClassifier>,
    config: &'a ExplorationConfig,
    ids: BTreeMap<String, u32>,
    st: Vec<AddrState>,
    heap: BinaryHeap<(Reverse<u64>, Reverse<u64>, u32, u32)>,
    seq: u64,
    cache: ClassifierCache,
    contrib: BTreeMap<u32, Contribution>,
    txs_in: BTreeSet<u32>,
    edges_in: BTreeSet<(u32, u32, EdgeDir)>,
    n_addr_in: usize,
    filtered: BTreeMap<u32, bool>,
    pending_rollback: Vec<ClusterId>,
}

impl<'a> Explorer<'a> {
    fn id(&mut self, address: &str) -> u32 {
        if let Some(&i) = self.ids.get(address) {
            return i;
        }
        let i = self.st.len() as u32;
        self.ids.insert(address.to_string(), i);
        self.st.push(AddrState {
            name: address.to_string(),
            status: Status::Unseen,
            kind: AddrKind::Unexplored,
            tag: None,
            cluster: self.clusters.cluster_of(address),
            seed: false,
            generation: 0,
            in_graph: false,
        });
        i
    }

    fn is_filtered(&mut self, ti: u32) -> bool {
        if let Some(&f) = self.filtered.get(&ti) {
            return f;
        }
        let tx = self.store.tx(ti);
        let f = self.config.denylist.contains(&tx.txid)
            || (self.config.coinjoin_filter_enabled && !tx.coinbase && detect_coinjoin(tx))
            || (self.config.dust_filter_enabled && detect_dust_with(tx, self.config.dust_threshold));
        self.filtered.insert(ti, f);
        f
    }

    fn slot_count(&mut self, address: &str) -> u64 {
        let mut total = 0u64;
        for ti in self.store.tx_indices(address) {
            if !self.is_filtered(ti) {
                let tx = self.store.tx(ti);
                total += (tx.inputs.len() + tx.outputs.len()) as u64;
            }
        }
        total
    }

    fn enqueue(&mut self, i: u32) {
        let name = self.st[i as usize].name.clone();
        let slots = self.slot_count(&name);
        let s = &mut self.st[i as usize];
        s.status = Status::Queued;
        s.generation += 1;
        self.heap.push((Reverse(slots), Reverse(self.seq), i, s.generation));
        self.seq += 1;
    }

    fn add_to_graph(&mut self, i: u32) {
        let s = &mut self.st[i as usize];
        if !s.in_graph {
            s.in_graph = true;
            self.n_addr_in += 1;
        }
    }

    /// First sighting of a non-seed address.
    fn discover(&mut self, i: u32) {
        let name = self.st[i as usize].name.clone();
        let (decision, newly_cached) = classify_address(
            self.store,
            &name,
            self.tagdb,
            self.clusters,
            self.classifier,
            &mut self.cache,
        );
        self.add_to_graph(i);
        let s = &mut self.st[i as usize];
        match decision {
            Decision::TagStop(tag) => {
                s.kind = AddrKind::TaggedStop;
                s.tag = Some(tag);
                s.status = Status::Stopped;
            }
            Decision::ClassifierStop => {
                s.kind = AddrKind::ClassifierStop;
                s.tag = None;
                s.status = Status::Stopped;
                if newly_cached {
                    self.pending_rollback.push(s.cluster);
                }
            }
            Decision::Trace(tag) => {
                s.kind = AddrKind::Unexplored;
                s.tag = tag;
                self.enqueue(i);
            }
        }
    }

    /// Transactions `address` expands into, with which sides to add.
    fn plan(&mut self, i: u32) -> Vec<(u32, bool, bool)> {
        let s = &self.st[i as usize];
        let name = s.name.clone();
        let seed = s.seed;
        let online_wallet = seed && s.tag.as_ref().is_some_and(is_exploration_stop);
        let sdd = seed && self.config.sdd;
        let mut out = Vec::new();
        for ti in self.store.tx_indices(&name) {
            if self.is_filtered(ti) {
                continue;
            }
            let tx = self.store.tx(ti);
            let is_in = tx.has_input(&name);
            let is_out = tx.has_output(&name);
            let pure_deposit = is_out && !is_in;
            // (tx, add inputs, add outputs)
            let step = match self.config.direction {
                Direction::BackAndForth => {
                    if online_wallet {
                        (is_out && !sdd).then_some((true, true))
                    } else if sdd && pure_deposit {
                        None
                    } else {
                        Some((true, true))
                    }
                }
                Direction::ForwardOnly => (is_in && !online_wallet).then_some((false, true)),
                Direction::BackwardsOnly => (is_out && !sdd).then_some((true, false)),
            };
            if let Some((ins, outs)) = step {
                out.push((ti, ins, outs));
            }
        }
        out
    }

    fn expand(&mut self, i: u32) {
        let plan = self.plan(i);
        let own = self.st[i as usize].name.clone();
        let mut c = Contribution::default();
        for (ti, add_ins, add_outs) in plan {
            let tx: &Transaction = self.store.tx(ti);
            c.txs.push(ti);
            self.txs_in.insert(ti);
            let mut touch: Vec<(String, EdgeDir)> = Vec::new();
            if add_ins {
                touch.extend(tx.inputs.iter().filter_map(|s| s.address()).map(|a| (a.to_string(), EdgeDir::In)));
            } else {
                // Forward-only still records the expanding address's own spend.
                touch.extend(
                    tx.inputs
                        .iter()
                        .filter_map(|s| s.address())
                        .filter(|a| *a == own)
                        .map(|a| (a.to_string(), EdgeDir::In)),
                );
            }
            if add_outs {
                touch.extend(tx.outputs.iter().filter_map(|s| s.address()).map(|a| (a.to_string(), EdgeDir::Out)));
            } else {
                touch.extend(
                    tx.outputs
                        .iter()
                        .filter_map(|s| s.address())
                        .filter(|a| *a == own)
                        .map(|a| (a.to_string(), EdgeDir::Out)),
                );
            }
            touch.sort();
            touch.dedup();
            for (a, dir) in touch {
                let j = self.id(&a);
                if self.st[j as usize].status == Status::Unseen {
                    self.discover(j);
                } else if !self.st[j as usize].in_graph {
                    self.add_to_graph(j);
                }
                c.addrs.push(j);
                c.edges.push((j, ti, dir));
                self.edges_in.insert((j, ti, dir));
            }
        }
        self.st[i as usize].status = Status::Expanded;
        self.st[i as usize].kind = if self.st[i as usize].seed {
            AddrKind::Seed
        } else {
            AddrKind::Explored
        };
        self.contrib.insert(i, c);
    }

    /// Reclassifies traced, untagged, non-seed members of `cluster` as
    /// classifier stops and prunes what only they supported.
    fn rollback(&mut self, cluster: ClusterId) {
        let mut reverted = false;
        for s in self.st.iter_mut() {
            if s.cluster != cluster || s.seed || s.tag.is_some() || !s.in_graph {
                continue;
            }
            match s.status {
                Status::Queued | Status::Expanded => {
                    s.status = Status::Stopped;
                    s.kind = AddrKind::ClassifierStop;
                    reverted = true;
                }
                Status::Unseen | Status::Stopped => {}
            }
        }
        if reverted {
            self.collect_garbage();
        }
    }

    /// Keeps only what is reachable from the seeds through the
    /// contributions of still-expanded addresses.
    fn collect_garbage(&mut self) {
        let n = self.st.len();
        let mut live = alloc::vec![false; n];
        let mut stack: Vec<u32> = Vec::new();
        for (i, s) in self.st.iter().enumerate() {
            if s.seed {
                live[i] = true;
                stack.push(i as u32);
            }
        }
        let mut txs = BTreeSet::new();
        let mut edges = BTreeSet::new();
        while let Some(i) = stack.pop() {
            if self.st[i as usize].status != Status::Expanded {
                continue;
            }
            if let Some(c) = self.contrib.get(&i) {
                txs.extend(c.txs.iter().copied());
                edges.extend(c.edges.iter().copied());
                for &j in &c.addrs {
                    if !live[j as usize] {
                        live[j as usize] = true;
                        stack.push(j);
                    }
                }
            }
        }
        let mut count = 0;
        for (i, s) in self.st.iter_mut().enumerate() {
            if live[i] {
                s.in_graph = true;
                count += 1;
                continue;
            }
            s.in_graph = false;
            if s.status != Status::Unseen {
                // Forgotten entirely; a later sighting classifies it afresh.
                s.status = Status::Unseen;
                s.generation += 1;
                s.tag = None;
                s.kind = AddrKind::Unexplored;
                self.contrib.remove(&(i as u32));
            }
        }
        // Reverted addresses keep their stop state but lose their own
        // contributions.
        let st = &self.st;
        self.contrib
            .retain(|&i, _| st[i as usize].status == Status::Expanded);
        self.n_addr_in = count;
        self.txs_in = txs;
        self.edges_in = edges;
    }

    fn finish(self, stats_base: ExplorationStats) -> Exploration {
        let mut g = ExplorationGraph::default();
        for s in &self.st {
            if !s.in_graph {
                continue;
            }
            let kind = if s.seed {
                AddrKind::Seed
            } else if s.status == Status::Queued {
                AddrKind::Unexplored
            } else {
                s.kind
            };
            g.addresses.insert(
                s.name.clone(),
                AddressNode {
                    kind,
                    seed: s.seed,
                    tag: s.tag.clone(),
                    cluster: s.cluster,
                    oracle: Vec::new(),
                },
            );
        }
        for &ti in &self.txs_in {
            let tx = self.store.tx(ti);
            g.txs.insert(
                tx.txid.clone(),
                TxNode {
                    satoshis: tx.output_value(),
                    height: tx.height,
                    time: tx.time,
                },
            );
        }
        for &(ai, ti, dir) in &self.edges_in {
            let tx = self.store.tx(ti);
            let name = &self.st[ai as usize].name;
            let side = match dir {
                EdgeDir::In => &tx.inputs,
                EdgeDir::Out => &tx.outputs,
            };
            let mut slots = Vec::new();
            let mut satoshis = 0;
            for sl in side.iter().filter(|sl| sl.address() == Some(name.as_str())) {
                slots.push(sl.index);
                satoshis += sl.value;
            }
            g.edges.insert(
                EdgeKey {
                    address: name.clone(),
                    txid: tx.txid.clone(),
                    dir,
                },
                EdgeAttrs { slots, satoshis },
            );
        }
        let mut stats = stats_base;
        stats.components = g.components();
        stats.addresses = g.addresses.len();
        stats.txes = g.txs.len();
        stats.unexplored = g.addresses.values().filter(|n| n.kind == AddrKind::Unexplored).count();
        stats.tagged = g.addresses.values().filter(|n| n.tag.is_some()).count();
        stats.classifier_exchanges = g
            .addresses
            .values()
            .filter(|n| n.kind == AddrKind::ClassifierStop)
            .count();
        stats.classifier_calls = self.cache.calls;
        Exploration { graph: g, stats }
    }
}

/// Runs the exploration loop from `seeds`.
pub fn explore(
    store: &ChainStore,
    clusters: &ClusterMap,
    tagdb: &TagDb,
    classifier: Option<&dyn ExchangeClassifier>,
    seeds: &[String],
    config: &ExplorationConfig,
    clock: &dyn Clock,
) -> Result<Exploration, ExploreError> {
    let start = clock.now_micros();
    if seeds.is_empty() {
        return Err(ExploreError::NoSeeds);
    }
    if config.classifier_enabled && classifier.is_none() {
        return Err(ExploreError::ModelRequired);
    }
    let mut ex = Explorer {
        store,
        clusters,
        tagdb,
        classifier: if config.classifier_enabled { classifier } else { None },
        config,
        ids: BTreeMap::new(),
        st: Vec::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        cache: ClassifierCache::default(),
        contrib: BTreeMap::new(),
        txs_in: BTreeSet::new(),
        edges_in: BTreeSet::new(),
        n_addr_in: 0,
        filtered: BTreeMap::new(),
        pending_rollback: Vec::new(),
    };
    let mut warnings = Vec::new();
    let mut seen = BTreeSet::new();
    let mut n_seeds = 0;
    let mut online = 0;
    let mut on_chain = 0;
    for s in seeds {
        if !seen.insert(s.as_str()) {
            continue;
        }
        n_seeds += 1;
        let i = ex.id(s);
        let tag = tagdb.lookup(s, clusters);
        if tag.as_ref().is_some_and(is_exploration_stop) {
            online += 1;
        }
        if store.contains_address(s) {
            on_chain += 1;
        } else {
            warnings.push(format!("seed {s} has no transactions"));
        }
        let st = &mut ex.st[i as usize];
        st.seed = true;
        st.kind = AddrKind::Seed;
        st.tag = tag;
        ex.add_to_graph(i);
        ex.enqueue(i);
    }

    let mut status = ExploreStatus::Completed;
    while let Some((_, _, i, generation)) = ex.heap.pop() {
        let s = &ex.st[i as usize];
        if s.status != Status::Queued || s.generation != generation {
            continue;
        }
        if config.max_addresses.is_some_and(|m| ex.n_addr_in >= m) {
            status = ExploreStatus::LimitReached;
            ex.heap.push((Reverse(0), Reverse(0), i, generation));
            break;
        }
        if let Some(limit) = config.max_seconds {
            if clock.now_micros().saturating_sub(start) >= limit.saturating_mul(1_000_000) {
                status = ExploreStatus::TimeLimit;
                break;
            }
        }
        ex.expand(i);
        while let Some(c) = ex.pending_rollback.pop() {
            ex.rollback(c);
        }
    }

    let stats = ExplorationStats {
        seeds: n_seeds,
        seeds_in_online_wallets: online,
        explored_seeds: on_chain,
        components: 0,
        addresses: 0,
        txes: 0,
        unexplored: 0,
        tagged: 0,
        classifier_exchanges: 0,
        classifier_calls: 0,
        runtime_us: 0,
        status,
        warnings,
    };
    let mut out = ex.finish(stats);
    out.stats.runtime_us = clock.now_micros().saturating_sub(start);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::IngestOptions;
    use crate::classifier::SetClassifier;
    use crate::fixtures;
    use crate::tags::{Category, TagDbOptions, TagRecord};
    use alloc::vec;

    fn addr_set(g: &ExplorationGraph) -> BTreeSet<String> {
        g.addresses.keys().cloned().collect()
    }

    fn run(dir: Direction, sdd: bool, classifier: bool) -> Exploration {
        let f = fixtures::fig2();
        let set = SetClassifier::new(f.classifier_exchanges.iter().cloned());
        let config = ExplorationConfig {
            direction: dir,
            sdd,
            classifier_enabled: classifier,
            ..ExplorationConfig::default()
        };
        explore(
            &f.store,
            &f.clusters,
            &f.tagdb,
            Some(&set),
            &f.seeds,
            &config,
            &NoClock,
        )
        .unwrap()
    }

    #[test]
    fn fig2_back_and_forth() {
        let f = fixtures::fig2();
        let e = run(Direction::BackAndForth, false, true);
        assert_eq!(addr_set(&e.graph), f.expected_back_and_forth.iter().cloned().collect());
        assert_eq!(e.graph.addresses["c"].kind, AddrKind::TaggedStop);
        assert_eq!(e.graph.addresses["b"].kind, AddrKind::ClassifierStop);
        let txs: BTreeSet<String> = e.graph.txs.keys().cloned().collect();
        assert_eq!(txs, f.expected_back_and_forth_txs.iter().cloned().collect());
        assert_eq!(e.stats.components, 1);
        assert_eq!(e.graph.seedless_components(), 0);
    }

    #[test]
    fn fig2_forward_only() {
        let f = fixtures::fig2();
        let e = run(Direction::ForwardOnly, false, true);
        assert_eq!(addr_set(&e.graph), f.expected_forward.iter().cloned().collect());
        let txs: BTreeSet<String> = e.graph.txs.keys().cloned().collect();
        assert_eq!(txs, f.expected_forward_txs.iter().cloned().collect());
    }

    #[test]
    fn fig2_sdd_same_graph() {
        let a = run(Direction::BackAndForth, false, true);
        let b = run(Direction::BackAndForth, true, true);
        assert_eq!(a.graph, b.graph);
    }

    #[test]
    fn lone_seed() {
        let store = ChainStore::build(vec![], &IngestOptions::default()).unwrap();
        let clusters = ClusterMap::build(&store);
        let e = explore(
            &store,
            &clusters,
            &TagDb::default(),
            None,
            &["1Lonely".to_string()],
            &ExplorationConfig::default(),
            &NoClock,
        )
        .unwrap();
        assert_eq!(e.graph.addresses.len(), 1);
        assert!(e.graph.txs.is_empty());
        assert_eq!(e.stats.warnings.len(), 1);
        assert_eq!(e.stats.explored_seeds, 0);
    }

    #[test]
    fn errors() {
        let store = ChainStore::build(vec![], &IngestOptions::default()).unwrap();
        let clusters = ClusterMap::build(&store);
        let cfg = ExplorationConfig::default();
        assert_eq!(
            explore(&store, &clusters, &TagDb::default(), None, &[], &cfg, &NoClock).unwrap_err(),
            ExploreError::NoSeeds
        );
        let cfg = ExplorationConfig {
            classifier_enabled: true,
            ..cfg
        };
        assert_eq!(
            explore(&store, &clusters, &TagDb::default(), None, &["x".into()], &cfg, &NoClock).unwrap_err(),
            ExploreError::ModelRequired
        );
    }

    #[test]
    fn priority_formula() {
        assert_eq!(compute_priority(0), 1.0);
        assert!((compute_priority(9) - 0.1).abs() < 1e-15);
        assert!(compute_priority(10) > compute_priority(10_000));
    }

    fn txid(n: u32) -> String {
        format!("{:064x}", n)
    }

    #[test]
    fn classification_order_and_cache() {
        // X1 and X2 co-spend, so they share a cluster.
        let txs = vec![
            Transaction::new(txid(1), 1, 0, &[], &[("X1", 100), ("X2", 100)]),
            Transaction::new(txid(2), 2, 10, &[("X1", 100), ("X2", 100)], &[("Y", 150)]),
        ];
        let store = ChainStore::build(txs, &IngestOptions::default()).unwrap();
        let clusters = ClusterMap::build(&store);
        let db = TagDb::build(
            &[
                TagRecord::new("M", Category::Mixer, "bitcoinfog"),
                TagRecord::new("C", Category::Clipper, "clipsa"),
            ],
            &TagDbOptions::default(),
        );
        let set = SetClassifier::new(["X1"]);
        let mut cache = ClassifierCache::default();
        let model: &dyn ExchangeClassifier = &set;
        let (d, _) = classify_address(&store, "M", &db, &clusters, Some(model), &mut cache);
        assert!(matches!(d, Decision::TagStop(_)));
        let (d, _) = classify_address(&store, "C", &db, &clusters, Some(model), &mut cache);
        assert!(matches!(d, Decision::Trace(Some(_))));
        assert_eq!(cache.calls, 0);
        let (d, newly) = classify_address(&store, "X1", &db, &clusters, Some(model), &mut cache);
        assert_eq!((d, newly), (Decision::ClassifierStop, true));
        // X2 is not in the set, but its cluster is already known.
        let (d, _) = classify_address(&store, "X2", &db, &clusters, Some(model), &mut cache);
        assert_eq!(d, Decision::ClassifierStop);
        assert_eq!(cache.calls, 1);
    }

    #[test]
    fn rollback_prunes_late_exchange_paths() {
        // S pays A. A later co-spends with E, which the classifier flags.
        // A was traced and expanded before E was seen.
        let txs = vec![
            Transaction::new(txid(1), 1, 0, &[], &[("S", 1_000)]),
            Transaction::new(txid(2), 2, 10, &[("S", 1_000)], &[("A", 990)]),
            Transaction::new(txid(3), 3, 20, &[("A", 990)], &[("P", 100), ("Q", 800)]),
            Transaction::new(txid(4), 4, 30, &[("Z", 5_000)], &[("E", 5_000)]),
            Transaction::new(txid(5), 5, 40, &[("E", 5_000), ("A2", 10)], &[("W", 5_000)]),
            Transaction::new(txid(6), 6, 50, &[("A", 10), ("A2", 10)], &[("R", 15)]),
        ];
        let store = ChainStore::build(txs, &IngestOptions::default()).unwrap();
        let clusters = ClusterMap::build(&store);
        assert_eq!(clusters.cluster_of("A"), clusters.cluster_of("E"));
        let set = SetClassifier::new(["E"]);
        let cfg = ExplorationConfig {
            classifier_enabled: true,
            ..ExplorationConfig::default()
        };
        let e = explore(&store, &clusters, &TagDb::default(), Some(&set), &["S".into()], &cfg, &NoClock).unwrap();
        let g = &e.graph;
        assert_eq!(g.addresses["A"].kind, AddrKind::ClassifierStop);
        // P and Q were only reachable through A's expansion.
        assert!(!g.addresses.contains_key("P"));
        assert!(!g.addresses.contains_key("Q"));
        assert_eq!(g.seedless_components(), 0);
        // Stop soundness: every transaction touches a traced address.
        for t in g.txs.keys() {
            let traced = g.edges.keys().filter(|k| &k.txid == t).any(|k| !g.addresses[&k.address].kind.is_stop());
            assert!(traced, "{t}");
        }
    }

    #[test]
    fn limit_counts_addresses() {
        let mut txs = vec![Transaction::new(txid(1), 1, 0, &[], &[("S", 1_000_000)])];
        let outs: Vec<(String, u64)> = (0..50).map(|i| (format!("O{i:02}"), 10 + i)).collect();
        let refs: Vec<(&str, u64)> = outs.iter().map(|(a, v)| (a.as_str(), *v)).collect();
        txs.push(Transaction::new(txid(2), 2, 10, &[("S", 1_000_000)], &refs));
        for (k, (a, v)) in outs.iter().enumerate() {
            txs.push(Transaction::new(txid(10 + k as u32), 3, 20, &[(a.as_str(), *v)], &[(format!("N{k}").as_str(), *v)]));
        }
        let store = ChainStore::build(txs, &IngestOptions::default()).unwrap();
        let clusters = ClusterMap::build(&store);
        let cfg = ExplorationConfig {
            max_addresses: Some(20),
            ..ExplorationConfig::default()
        };
        let e = explore(&store, &clusters, &TagDb::default(), None, &["S".into()], &cfg, &NoClock).unwrap();
        assert_eq!(e.stats.status, ExploreStatus::LimitReached);
        assert!(e.stats.addresses >= 20);
        assert!(e.stats.unexplored > 0);
    }
}
