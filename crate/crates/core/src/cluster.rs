//! Multi-input clustering and transaction filters.
//!
//! Input addresses of the same transaction are assumed to share an owner.
//! CoinJoin transactions break that assumption and contribute no merges.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainStore, Transaction};

/// Minimum number of equal-valued output slots for a forced address reuse
/// (dust) transaction.
pub const DUST_MIN_OUTPUTS: usize = 100;

/// Minimum size of an equal-output group for the CoinJoin heuristic.
pub const COINJOIN_MIN_GROUP: usize = 3;

/// Cluster identifier, derived from the cluster's smallest member address.
pub type ClusterId = u64;

/// Count of address-bearing outputs per exact value.
fn equal_value_groups(tx: &Transaction) -> BTreeMap<u64, usize> {
    let mut groups: BTreeMap<u64, usize> = BTreeMap::new();
    for slot in &tx.outputs {
        if slot.address().is_some() {
            *groups.entry(slot.value).or_default() += 1;
        }
    }
    groups
}

/// Equal-output CoinJoin heuristic: some value is shared by `n >= 3` outputs,
/// there are at least `n` inputs, and at least `2n - 1` outputs in total.
pub fn detect_coinjoin(tx: &Transaction) -> bool {
    if tx.coinbase {
        return false;
    }
    let inputs = tx.inputs.len();
    let outputs = tx.outputs.len();
    equal_value_groups(tx)
        .values()
        .any(|&n| n >= COINJOIN_MIN_GROUP && n <= inputs && outputs + 1 >= 2 * n)
}

/// Forced address reuse: one value sent to at least `threshold` address
/// outputs.
pub fn detect_dust_with(tx: &Transaction, threshold: usize) -> bool {
    equal_value_groups(tx).values().any(|&n| n >= threshold)
}

pub fn detect_dust(tx: &Transaction) -> bool {
    detect_dust_with(tx, DUST_MIN_OUTPUTS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxFlags {
    pub is_coinjoin: bool,
    pub is_dust: bool,
}

impl TxFlags {
    pub fn of(tx: &Transaction, dust_threshold: usize) -> Self {
        TxFlags {
            is_coinjoin: detect_coinjoin(tx),
            is_dust: detect_dust_with(tx, dust_threshold),
        }
    }
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Id of the singleton cluster `{address}`; also the id of any cluster whose
/// smallest member is `address`.
pub fn singleton_id(address: &str) -> ClusterId {
    fnv1a(address.as_bytes())
}

/// Union by size with path halving over dense indices.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: alloc::vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    /// Returns true if `a` and `b` were in different sets.
    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            core::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        true
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClusterOptions {
    /// Let CoinJoin inputs merge too. Off by default.
    pub include_coinjoins: bool,
}

/// Frozen partition of all store addresses into multi-input clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    of: BTreeMap<String, ClusterId>,
    members: BTreeMap<ClusterId, Vec<String>>,
}

impl ClusterMap {
    /// Multi-input clustering over every non-coinbase, non-CoinJoin
    /// transaction.
    pub fn build(store: &ChainStore) -> Self {
        Self::build_with(store, &ClusterOptions::default())
    }

    pub fn build_with(store: &ChainStore, options: &ClusterOptions) -> Self {
        // Dense indices follow lexicographic address order.
        let names: Vec<&str> = store.addresses().collect();
        let index: BTreeMap<&str, u32> = names
            .iter()
            .enumerate()
            .map(|(i, a)| (*a, i as u32))
            .collect();
        let mut uf = UnionFind::new(names.len());
        for tx in store.transactions() {
            if tx.coinbase || (!options.include_coinjoins && detect_coinjoin(tx)) {
                continue;
            }
            let mut first: Option<u32> = None;
            for slot in &tx.inputs {
                if let Some(a) = slot.address() {
                    let i = index[a];
                    match first {
                        None => first = Some(i),
                        Some(f) => {
                            uf.union(f, i);
                        }
                    }
                }
            }
        }

        // Smallest member of each root: iteration is in lexicographic order,
        // so the first index seen for a root is its smallest member.
        let mut root_min: BTreeMap<u32, u32> = BTreeMap::new();
        let mut roots = Vec::with_capacity(names.len());
        for i in 0..names.len() as u32 {
            let r = uf.find(i);
            root_min.entry(r).or_insert(i);
            roots.push(r);
        }
        let mut used: BTreeMap<ClusterId, u32> = BTreeMap::new();
        let mut root_id: BTreeMap<u32, ClusterId> = BTreeMap::new();
        // Assign ids by smallest member so collision handling is order-free.
        let mut by_min: Vec<(u32, u32)> = root_min.iter().map(|(&r, &m)| (m, r)).collect();
        by_min.sort_unstable();
        for (min, root) in by_min {
            let mut id = singleton_id(names[min as usize]);
            while used.contains_key(&id) {
                id = id.wrapping_add(1);
            }
            used.insert(id, root);
            root_id.insert(root, id);
        }

        let mut of = BTreeMap::new();
        let mut members: BTreeMap<ClusterId, Vec<String>> = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            let id = root_id[&roots[i]];
            of.insert(name.to_string(), id);
            members.entry(id).or_default().push(name.to_string());
        }
        ClusterMap { of, members }
    }

    /// Cluster of `address`; addresses absent from the store get their
    /// singleton id.
    pub fn cluster_of(&self, address: &str) -> ClusterId {
        self.of
            .get(address)
            .copied()
            .unwrap_or_else(|| singleton_id(address))
    }

    /// Members in lexicographic order. Unknown clusters have no members.
    pub fn members(&self, id: ClusterId) -> &[String] {
        self.members.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn size(&self, id: ClusterId) -> usize {
        self.members(id).len()
    }

    pub fn cluster_count(&self) -> usize {
        self.members.len()
    }

    /// `(address, cluster)` pairs sorted by address.
    pub fn assignments(&self) -> impl Iterator<Item = (&str, ClusterId)> {
        self.of.iter().map(|(a, c)| (a.as_str(), *c))
    }

    pub fn clusters(&self) -> impl Iterator<Item = (ClusterId, &[String])> {
        self.members.iter().map(|(c, m)| (*c, m.as_slice()))
    }
}
