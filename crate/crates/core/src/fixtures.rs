//! Small hand-built chains with known exploration outcomes.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{ChainStore, IngestOptions, Transaction};
use crate::cluster::ClusterMap;
use crate::tags::{Category, TagDb, TagDbOptions, TagRecord};

/// Deterministic 64-hex txid for a small integer.
pub fn txid(n: u64) -> String {
    format!("{n:064x}")
}

fn refs(v: &[(String, u64)]) -> Vec<(&str, u64)> {
    v.iter().map(|(a, x)| (a.as_str(), *x)).collect()
}

pub struct Fig2 {
    pub store: ChainStore,
    pub clusters: ClusterMap,
    pub tagdb: TagDb,
    pub seeds: Vec<String>,
    /// Addresses the ground-truth classifier flags as exchanges.
    pub classifier_exchanges: Vec<String>,
    pub expected_back_and_forth: Vec<String>,
    pub expected_back_and_forth_txs: Vec<String>,
    pub expected_forward: Vec<String>,
    pub expected_forward_txs: Vec<String>,
}

/// Two-seed reference transactions with every address name prefixed by `prefix`, at
/// heights `base_height + 1 ..= base_height + 11`. Transaction `Tk` gets txid
/// `txid(txid_base + k)`.
pub fn fig2_transactions(prefix: &str, base_height: u64, txid_base: u64) -> Vec<Transaction> {
    let t = |k: u64, h: u64, ins: &[(&str, u64)], outs: &[(&str, u64)]| {
        let name = |v: &[(&str, u64)]| v.iter().map(|(a, x)| (format!("{prefix}{a}"), *x)).collect::<Vec<_>>();
        let (ins, outs) = (name(ins), name(outs));
        let h = base_height + h;
        Transaction::new(txid(txid_base + k), h, 1_600_000_000 + 600 * h as i64, &refs(&ins), &refs(&outs))
    };
    alloc::vec![
        t(10, 1, &[("i", 50_000), ("f", 50_000)], &[("e", 99_000)]),
        t(9, 2, &[("e", 30_000)], &[("d", 29_000)]),
        t(7, 3, &[("e", 60_000)], &[("s1", 59_000)]),
        t(8, 4, &[("d", 20_000)], &[("s1", 19_000)]),
        t(6, 5, &[("f", 40_000)], &[("s1", 39_000)]),
        t(1, 6, &[("s1", 100_000)], &[("a", 60_000), ("g", 39_000)]),
        t(5, 7, &[("g", 39_000)], &[("s2", 38_000)]),
        t(3, 8, &[("s2", 38_000)], &[("b", 37_000)]),
        t(2, 9, &[("a", 60_000), ("d", 9_000)], &[("h", 68_000)]),
        t(4, 10, &[("h", 68_000)], &[("c", 67_000)]),
        t(11, 11, &[("b", 37_000), ("c", 67_000)], &[("c", 103_000)]),
    ]
}

/// Tags of the two-seed reference topology under `prefix`.
pub fn fig2_tags(prefix: &str) -> Vec<TagRecord> {
    alloc::vec![
        TagRecord::new(&format!("{prefix}c"), Category::Exchange, "poloniex"),
        TagRecord::new(&format!("{prefix}s1"), Category::Ransomware, "fig2"),
        TagRecord::new(&format!("{prefix}s2"), Category::Ransomware, "fig2"),
    ]
}

/// Two seeds `s1`, `s2`; `c` is a tagged exchange, `b` an exchange only the
/// classifier knows about. Transaction `Tk` has txid `txid(k)`.
///
/// ```text
/// T1: s1 -> a, g      T2: a, d -> h     T3: s2 -> b      T4: h -> c
/// T5: g -> s2         T6: f -> s1       T7: e -> s1      T8: d -> s1
/// T9: e -> d          T10: i, f -> e    T11: b, c -> c
/// ```
pub fn fig2() -> Fig2 {
    let store = ChainStore::build(fig2_transactions("", 0, 0), &IngestOptions::default()).expect("valid fixture");
    let clusters = ClusterMap::build(&store);
    let tagdb = TagDb::build(&fig2_tags(""), &TagDbOptions::default());
    let strs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let ids = |v: &[u64]| v.iter().map(|&k| txid(k)).collect::<Vec<_>>();
    Fig2 {
        store,
        clusters,
        tagdb,
        seeds: strs(&["s1", "s2"]),
        classifier_exchanges: strs(&["b"]),
        expected_back_and_forth: strs(&["s1", "s2", "a", "b", "c", "d", "e", "f", "g", "h", "i"]),
        expected_back_and_forth_txs: ids(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]),
        expected_forward: strs(&["s1", "s2", "a", "b", "c", "g", "h"]),
        expected_forward_txs: ids(&[1, 2, 3, 4, 5]),
    }
}

/// A chain plus the seeds, tags and ground-truth exchange set for one
/// experiment.
pub struct Scenario {
    pub store: ChainStore,
    pub clusters: ClusterMap,
    pub tagdb: TagDb,
    pub seeds: Vec<String>,
    pub exchanges: Vec<String>,
}

impl Scenario {
    fn new(txs: Vec<Transaction>, tags: &[TagRecord], seeds: Vec<String>, exchanges: Vec<String>) -> Self {
        let store = ChainStore::build(txs, &IngestOptions::default()).expect("valid fixture");
        let clusters = ClusterMap::build(&store);
        let mut tagdb = TagDb::build(tags, &TagDbOptions::default());
        tagdb.propagate_to_clusters(&clusters);
        Scenario {
            store,
            clusters,
            tagdb,
            seeds,
            exchanges,
        }
    }
}

struct TxSeq(u64);

impl TxSeq {
    fn tx(&mut self, height: u64, ins: &[(&str, u64)], outs: &[(&str, u64)]) -> Transaction {
        self.0 += 1;
        Transaction::new(txid(self.0), height, 1_600_000_000 + 600 * height as i64, ins, outs)
    }
}

const SERVICE_CATEGORIES: [Category; 5] = [
    Category::Exchange,
    Category::Gambling,
    Category::Mixer,
    Category::OnlineWallet,
    Category::Payment,
];

/// Relation-rich chain for the error-injection study. Each of `n_seeds`
/// seeds reaches five tagged services forward through two untagged hops,
/// is funded by two tagged services through one hop, and pays two untagged
/// exchange-like addresses `X` (ground-truth exchanges) that in turn pay a
/// tagged gambling service found only when `X` is missed.
pub fn epsilon_fixture(n_seeds: usize) -> Scenario {
    let mut q = TxSeq(0);
    let mut txs = Vec::new();
    let mut tags = Vec::new();
    let mut seeds = Vec::new();
    let mut exchanges = Vec::new();
    for k in 0..n_seeds {
        let seed = format!("S{k}");
        tags.push(TagRecord::new(&seed, Category::Ransomware, "epsfix"));
        seeds.push(seed.clone());
        let mut funded = 0;
        for j in 0..2 {
            let t = format!("F{k}_{j}");
            let b = format!("B{k}_{j}");
            tags.push(TagRecord::new(&t, SERVICE_CATEGORIES[(k + j) % 5], &format!("src{k}{j}")));
            let v = 1_000_000 + 10_000 * j as u64;
            txs.push(q.tx(1, &[], &[(t.as_str(), v)]));
            txs.push(q.tx(2, &[(t.as_str(), v)], &[(b.as_str(), v - 1_000)]));
            txs.push(q.tx(3, &[(b.as_str(), v - 1_000)], &[(seed.as_str(), v - 2_000)]));
            funded += v - 2_000;
        }
        let mut outs: Vec<(String, u64)> = Vec::new();
        for j in 0..5 {
            outs.push((format!("M{k}_{j}"), 100_000 + 1_000 * j as u64));
        }
        for j in 0..2 {
            outs.push((format!("X{k}_{j}"), 200_000 + 1_000 * j as u64));
        }
        let spent: u64 = outs.iter().map(|o| o.1).sum();
        assert!(spent < funded);
        let r: Vec<(&str, u64)> = outs.iter().map(|(a, v)| (a.as_str(), *v)).collect();
        txs.push(q.tx(4, &[(seed.as_str(), funded)], &r));
        for j in 0..5 {
            let (m1, m2, t) = (format!("M{k}_{j}"), format!("N{k}_{j}"), format!("T{k}_{j}"));
            let v = 100_000 + 1_000 * j as u64;
            txs.push(q.tx(5, &[(m1.as_str(), v)], &[(m2.as_str(), v - 500)]));
            txs.push(q.tx(6, &[(m2.as_str(), v - 500)], &[(t.as_str(), v - 1_000)]));
            tags.push(TagRecord::new(&t, SERVICE_CATEGORIES[(k + j) % 5], &format!("dst{k}{j}")));
        }
        for j in 0..2 {
            let (x, g) = (format!("X{k}_{j}"), format!("G{k}_{j}"));
            let v = 200_000 + 1_000 * j as u64;
            txs.push(q.tx(7, &[(x.as_str(), v)], &[(g.as_str(), v - 500)]));
            tags.push(TagRecord::new(&g, Category::Gambling, &format!("hidden{k}{j}")));
            exchanges.push(x);
        }
    }
    Scenario::new(txs, &tags, seeds, exchanges)
}

/// Seeds paying into `n_hubs` untagged exchange-like hubs, each of which
/// pays out `batches` transactions of `fanout` fresh addresses.
pub fn hub_fixture(n_hubs: usize, batches: usize, fanout: usize) -> Scenario {
    let mut q = TxSeq(0);
    let mut txs = Vec::new();
    let mut tags = Vec::new();
    let mut seeds = Vec::new();
    let mut hubs = Vec::new();
    for h in 0..n_hubs {
        let hub = format!("H{h}");
        let seed = format!("S{h}");
        tags.push(TagRecord::new(&seed, Category::Ransomware, "hubfix"));
        txs.push(q.tx(1, &[], &[(seed.as_str(), 10_000_000)]));
        txs.push(q.tx(2, &[(seed.as_str(), 10_000_000)], &[(hub.as_str(), 9_990_000)]));
        let mut balance = 9_990_000 + 1_000_000_000;
        txs.push(q.tx(2, &[], &[(hub.as_str(), 1_000_000_000)]));
        for b in 0..batches {
            let outs: Vec<(String, u64)> = (0..fanout)
                .map(|i| (format!("U{h}_{b}_{i}"), 10_000 + (b * fanout + i) as u64))
                .collect();
            let paid: u64 = outs.iter().map(|o| o.1).sum();
            let mut r: Vec<(&str, u64)> = outs.iter().map(|(a, v)| (a.as_str(), *v)).collect();
            let change = balance - paid - 1_000;
            r.push((hub.as_str(), change));
            txs.push(q.tx(3 + b as u64, &[(hub.as_str(), balance)], &r));
            balance = change;
        }
        seeds.push(seed);
        hubs.push(hub);
    }
    Scenario::new(txs, &tags, seeds, hubs)
}

/// An exchange `E` funds the signaling seed `C`; `C` pays `S`, and `S`
/// later co-spends with `C`. Only tracing backwards from `C` finds `E`.
pub fn cc_funding_fixture() -> Scenario {
    let mut q = TxSeq(0);
    let txs = alloc::vec![
        q.tx(1, &[], &[("E", 50_000_000)]),
        q.tx(2, &[("E", 50_000_000)], &[("C", 1_000_000), ("E", 48_990_000)]),
        q.tx(3, &[("C", 1_000_000)], &[("S", 400_000), ("C", 590_000)]),
        q.tx(4, &[("C", 590_000), ("S", 400_000)], &[("P", 980_000)]),
    ];
    let tags = [
        TagRecord::new("E", Category::Exchange, "bitfund"),
        TagRecord::new("C", Category::Malware, "glupteba"),
    ];
    Scenario::new(txs, &tags, alloc::vec!["C".to_string()], Vec::new())
}

type Slot = (String, u64);

/// Random but valid chain of `n_tx` transactions over addresses `r0..r{n_addr}`.
/// Mostly ordinary payments (1-3 inputs, 1-4 outputs); about 8% coinbase,
/// 3% equal-output CoinJoins and 2% 100-output dust transactions. Outputs
/// are spent at most once.
pub fn random_chain(seed: u64, n_tx: usize, n_addr: usize) -> Vec<Transaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_addr = n_addr.max(2);
    let mut pool: Vec<(String, u64)> = Vec::new();
    let mut txs = Vec::with_capacity(n_tx);
    let addr = |rng: &mut ChaCha8Rng| format!("r{}", rng.gen_range(0..n_addr));
    let take = |rng: &mut ChaCha8Rng, pool: &mut Vec<(String, u64)>| {
        let i = rng.gen_range(0..pool.len());
        pool.swap_remove(i)
    };
    for i in 0..n_tx {
        let height = 1 + (i / 5) as u64;
        let id = txid(i as u64 + 1);
        let time = 1_600_000_000 + 600 * height as i64;
        let r: f64 = rng.gen();
        let (ins, outs): (Vec<Slot>, Vec<Slot>) = if pool.len() < 4 || r < 0.08 {
            let n = rng.gen_range(1..=2);
            let outs = (0..n).map(|_| (addr(&mut rng), rng.gen_range(10_000_000..50_000_000))).collect();
            (Vec::new(), outs)
        } else if r < 0.11 {
            let k = rng.gen_range(3..=pool.len().min(5));
            let ins: Vec<(String, u64)> = (0..k).map(|_| take(&mut rng, &mut pool)).collect();
            let d = ins.iter().map(|x| x.1).min().unwrap_or(0) / 2;
            let mut outs = Vec::new();
            for (_, v) in &ins {
                outs.push((addr(&mut rng), d));
                outs.push((addr(&mut rng), v - d - 1_000));
            }
            (ins, outs)
        } else if r < 0.13 {
            let (a, v) = take(&mut rng, &mut pool);
            let mut outs: Vec<(String, u64)> = (0..100).map(|_| (addr(&mut rng), 546)).collect();
            outs.push((a.clone(), v - 100 * 546 - 1_000));
            (alloc::vec![(a, v)], outs)
        } else {
            let k = rng.gen_range(1..=3.min(pool.len()));
            let ins: Vec<(String, u64)> = (0..k).map(|_| take(&mut rng, &mut pool)).collect();
            let total: u64 = ins.iter().map(|x| x.1).sum::<u64>() - 1_000;
            let m = rng.gen_range(1..=4);
            let mut cuts: Vec<u64> = (1..m).map(|_| rng.gen_range(1..total)).collect();
            cuts.sort_unstable();
            cuts.dedup();
            let mut outs = Vec::new();
            let mut last = 0;
            for c in cuts.into_iter().chain(core::iter::once(total)) {
                outs.push((addr(&mut rng), c - last));
                last = c;
            }
            (ins, outs)
        };
        for (a, v) in &outs {
            // Keep small outputs out of circulation so every spend can pay
            // its fee and the dust and CoinJoin shapes stay valid.
            if *v >= 200_000 {
                pool.push((a.clone(), *v));
            }
        }
        txs.push(Transaction::new(id, height, time, &refs(&ins), &refs(&outs)));
    }
    txs
}
