//! Desk-scale experiments: synthetic chains with planted structures, the
//! classifier error-injection study, the classifier ablation and the
//! back-and-forth versus forward-only comparison.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainStore, Transaction};
use crate::classifier::{ErrorInjector, ExchangeClassifier, InjectMode};
use crate::cluster::ClusterMap;
use crate::error::ExploreError;
use crate::explorer::{explore, Clock, Direction, ExplorationConfig, ExploreStatus};
use crate::fixtures::{fig2_tags, fig2_transactions};
use crate::oracles::{aes_gcm_seal_hex, is_public, Ipv4};
use crate::relations::{diff_reports, find_relations, RelationDiff, RelationKey};
use crate::tags::{Category, TagDb, TagRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    CerberCycle,
    PonyPairSeries,
    GluptebaOpreturn,
    DustBlast,
    Coinjoin,
    RelationPath,
    Fig2Topology,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub kind: PlantKind,
    pub count: usize,
    /// Pairs for Pony, outputs for dust, participants for CoinJoin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub users: usize,
    pub exchanges: usize,
    /// Hot-wallet addresses per exchange.
    pub hot_addresses: usize,
    pub blocks: u64,
    /// Background transactions, excluding initial funding.
    pub transactions: usize,
    /// Background payments carrying an undecryptable data output.
    pub data_outputs: usize,
    #[serde(default)]
    pub planted: Vec<PlantSpec>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            users: 2_000,
            exchanges: 5,
            hot_addresses: 4,
            blocks: 1_000,
            transactions: 3_000,
            data_outputs: 10,
            planted: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedRelation {
    pub seed: String,
    pub target: String,
    pub tag: String,
    pub direction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planted {
    pub kind: PlantKind,
    /// Signaling addresses, dust recipients, CoinJoin participants, or the
    /// expected node set of a two-seed reference copy.
    pub addresses: Vec<String>,
    pub txids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub payloads: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relations: Vec<PlantedRelation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub transactions: usize,
    pub addresses: usize,
    pub exchange_hot_addresses: Vec<String>,
    /// Every exchange-owned address, hot wallets included.
    pub exchange_addresses: Vec<String>,
    pub user_addresses: Vec<String>,
    /// Untagged exchanges known only to a classifier (from two-seed reference copies).
    pub classifier_exchanges: Vec<String>,
    pub glupteba_key: String,
    pub seeds: Vec<String>,
    pub planted: Vec<Planted>,
}

impl SynthManifest {
    pub fn planted_of(&self, kind: PlantKind) -> impl Iterator<Item = &Planted> {
        self.planted.iter().filter(move |p| p.kind == kind)
    }

    /// Planted signaling addresses of one oracle family.
    pub fn signaling(&self, family: &str) -> BTreeSet<String> {
        self.planted
            .iter()
            .filter(|p| p.family.as_deref() == Some(family))
            .flat_map(|p| p.addresses.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthChain {
    pub transactions: Vec<Transaction>,
    pub tags: Vec<TagRecord>,
    pub manifest: SynthManifest,
}

const T0: i64 = 1_600_000_000;
const BASE58: &[u8] = b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";
const BECH32: &[u8] = b"qpzry9x8gf2tvdw0s3jn54khce6mua7l";
const EXCHANGE_NAMES: [&str; 10] = [
    "kraken", "bitstamp", "binance", "bittrex", "huobi", "okex", "gemini", "coinbase", "bitfinex", "hitbtc",
];
const PLANT_SPAN: u64 = 16;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Gen {
    rng: ChaCha8Rng,
    seed: u64,
    n_tx: u64,
    txs: Vec<Transaction>,
}

impl Gen {
    fn txid(&mut self) -> String {
        self.n_tx += 1;
        let c = self.n_tx;
        format!(
            "{:016x}{:016x}{:016x}{:016x}",
            splitmix(self.seed ^ 0x5eed),
            splitmix(c),
            splitmix(c ^ self.seed),
            c
        )
    }

    fn address(&mut self) -> String {
        if self.rng.gen_bool(0.3) {
            let mut s = String::from("bc1q");
            for _ in 0..38 {
                s.push(BECH32[self.rng.gen_range(0..BECH32.len())] as char);
            }
            s
        } else {
            let mut s = String::from(if self.rng.gen_bool(0.8) { "1" } else { "3" });
            for _ in 0..33 {
                s.push(BASE58[self.rng.gen_range(0..BASE58.len())] as char);
            }
            s
        }
    }

    fn push(&mut self, height: u64, ins: &[(&str, u64)], outs: &[(&str, u64)]) -> String {
        let id = self.txid();
        let time = T0 + 600 * height as i64 + self.rng.gen_range(0..60);
        self.txs.push(Transaction::new(id.clone(), height, time, ins, outs));
        id
    }

    fn push_owned(&mut self, height: u64, ins: &[(String, u64)], outs: &[(String, u64)]) -> String {
        self.push(height, &refs(ins), &refs(outs))
    }
}

fn refs(v: &[(String, u64)]) -> Vec<(&str, u64)> {
    v.iter().map(|(a, x)| (a.as_str(), *x)).collect()
}

struct Exchange {
    hot: Vec<(String, u64)>,
    pending: Vec<(String, u64)>,
}

#[derive(Default)]
struct User {
    funded: Vec<(String, u64)>,
    known: Vec<String>,
}

/// Generates a valid chain, its tags and the ground-truth manifest.
/// Identical specs give identical output.
pub fn generate_chain(spec: &SynthSpec) -> SynthChain {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        seed: spec.seed,
        n_tx: 0,
        txs: Vec::new(),
    };
    let blocks = spec.blocks.max(PLANT_SPAN * 2);
    let mut tags = Vec::new();
    let mut exchange_addresses = Vec::new();
    let mut hot_addresses = Vec::new();
    let mut user_addresses = Vec::new();

    let mut exchanges: Vec<Exchange> = Vec::new();
    for e in 0..spec.exchanges.max(1) {
        let name = if e < EXCHANGE_NAMES.len() {
            EXCHANGE_NAMES[e].to_string()
        } else {
            format!("{}{}", EXCHANGE_NAMES[e % EXCHANGE_NAMES.len()], e / EXCHANGE_NAMES.len())
        };
        let mut hot = Vec::new();
        for j in 0..spec.hot_addresses.max(1) {
            let a = g.address();
            let v = 100_000_000_000;
            g.push(0, &[], &[(a.as_str(), v)]);
            if j < 2 {
                tags.push(TagRecord::new(&a, Category::Exchange, &name));
            }
            hot_addresses.push(a.clone());
            exchange_addresses.push(a.clone());
            hot.push((a, v));
        }
        exchanges.push(Exchange {
            hot,
            pending: Vec::new(),
        });
    }
    let mut users: Vec<User> = (0..spec.users.max(2)).map(|_| User::default()).collect();
    let mut funded_users: Vec<usize> = Vec::new();
    let mut data_left = spec.data_outputs;
    let n = spec.transactions.max(1);

    for i in 0..n {
        let h = 1 + (i as u64 * blocks) / n as u64;
        let busy = exchanges.iter().position(|x| x.pending.len() >= 8);
        let r: f64 = g.rng.gen();
        if let Some(e) = busy {
            // Consolidation: deposit addresses swept into a hot wallet.
            let x = &mut exchanges[e];
            let j = g.rng.gen_range(0..x.hot.len());
            let take = x.pending.len().min(20);
            let mut ins: Vec<(String, u64)> = x.pending.drain(..take).collect();
            let hot = x.hot[j].clone();
            ins.push(hot.clone());
            let total: u64 = ins.iter().map(|p| p.1).sum();
            let out = total - 10_000;
            x.hot[j].1 = out;
            g.push_owned(h, &ins, &[(hot.0, out)]);
        } else if funded_users.is_empty() || r < 0.3 {
            // Batched withdrawal from a hot wallet.
            let e = g.rng.gen_range(0..exchanges.len());
            let j = g.rng.gen_range(0..exchanges[e].hot.len());
            let k = g.rng.gen_range(8..=25);
            let mut outs: Vec<(String, u64)> = Vec::new();
            for _ in 0..k {
                let u = g.rng.gen_range(0..users.len());
                let reuse = !users[u].known.is_empty() && g.rng.gen_bool(0.5);
                let a = if reuse {
                    let idx = g.rng.gen_range(0..users[u].known.len());
                    users[u].known[idx].clone()
                } else {
                    let a = g.address();
                    users[u].known.push(a.clone());
                    user_addresses.push(a.clone());
                    a
                };
                let v = g.rng.gen_range(50_000..5_000_000);
                if users[u].funded.is_empty() {
                    funded_users.push(u);
                }
                users[u].funded.push((a.clone(), v));
                outs.push((a, v));
            }
            let (hot, bal) = exchanges[e].hot[j].clone();
            let paid: u64 = outs.iter().map(|o| o.1).sum();
            let fee = 5_000 + 100 * k as u64;
            let change = bal - paid - fee;
            exchanges[e].hot[j].1 = change;
            outs.push((hot.clone(), change));
            g.push_owned(h, &[(hot, bal)], &outs);
        } else {
            // A user pays another user or deposits to an exchange.
            let fi = g.rng.gen_range(0..funded_users.len());
            let u = funded_users[fi];
            let mut ins = Vec::new();
            let take = if users[u].funded.len() >= 2 && g.rng.gen_bool(0.3) { 2 } else { 1 };
            for _ in 0..take {
                let idx = g.rng.gen_range(0..users[u].funded.len());
                ins.push(users[u].funded.swap_remove(idx));
            }
            if users[u].funded.is_empty() {
                funded_users.swap_remove(fi);
            }
            let total: u64 = ins.iter().map(|p| p.1).sum();
            let fee = 2_000;
            if total < 30_000 {
                // Too small to split into payment, change and fee; left unspent.
                continue;
            }
            let pay = g
                .rng
                .gen_range(total / 10..=total * 9 / 10)
                .clamp(10_000, total - fee - 10_000);
            let change = total - pay - fee;
            let to_exchange = r < 0.55;
            let dest = g.address();
            if to_exchange {
                let e = g.rng.gen_range(0..exchanges.len());
                exchanges[e].pending.push((dest.clone(), pay));
                exchange_addresses.push(dest.clone());
            } else {
                let v = loop {
                    let v = g.rng.gen_range(0..users.len());
                    if v != u {
                        break v;
                    }
                };
                users[v].known.push(dest.clone());
                if users[v].funded.is_empty() {
                    funded_users.push(v);
                }
                users[v].funded.push((dest.clone(), pay));
                user_addresses.push(dest.clone());
            }
            let ch = g.address();
            users[u].known.push(ch.clone());
            if users[u].funded.is_empty() {
                funded_users.push(u);
            }
            users[u].funded.push((ch.clone(), change));
            user_addresses.push(ch.clone());
            let id = g.txid();
            let time = T0 + 600 * h as i64 + g.rng.gen_range(0..60);
            let mut tx = Transaction::new(id, h, time, &refs(&ins), &[(dest.as_str(), pay), (ch.as_str(), change)]);
            if data_left > 0 && !to_exchange && g.rng.gen_bool(0.2) {
                data_left -= 1;
                let bytes: Vec<u8> = (0..40).map(|_| g.rng.gen()).collect();
                tx = tx.with_data_output(hex::encode(bytes), 0);
            }
            g.txs.push(tx);
        }
    }

    let mut planted = Vec::new();
    let mut seeds = Vec::new();
    let mut classifier_exchanges = Vec::new();
    let key: [u8; 32] = g.rng.gen();
    let known_users: Vec<String> = user_addresses.clone();
    let mut plant_no = 0u64;
    for p in &spec.planted {
        for i in 0..p.count {
            plant_no += 1;
            let h = g.rng.gen_range(1..blocks - PLANT_SPAN);
            let item = match p.kind {
                PlantKind::CerberCycle => {
                    let v = g.address();
                    let label: String = (0..5)
                        .map(|_| (b'a' + g.rng.gen_range(0..26u8)) as char)
                        .collect();
                    let mut o = format!("1{label}");
                    let tail = g.address();
                    o.push_str(&tail[tail.len() - 28..]);
                    let x = g.rng.gen_range(1_000_000..50_000_000);
                    g.push(h, &[], &[(v.as_str(), x)]);
                    let t1 = g.push(h + 1, &[(v.as_str(), x)], &[(o.as_str(), x - 1_000)]);
                    let t2 = g.push(h + 2, &[(o.as_str(), x - 1_000)], &[(v.as_str(), x - 2_000)]);
                    Planted {
                        kind: p.kind,
                        addresses: alloc::vec![v],
                        txids: alloc::vec![t1, t2],
                        family: Some("cerber".into()),
                        payloads: alloc::vec![o.chars().take(6).collect()],
                        seeds: Vec::new(),
                        relations: Vec::new(),
                    }
                }
                PlantKind::PonyPairSeries => {
                    let target = g.address();
                    let pairs = p.size.unwrap_or(3).max(1) as u64;
                    let mut txids = Vec::new();
                    let mut payloads = Vec::new();
                    for k in 0..pairs {
                        let ip = loop {
                            let ip = Ipv4(g.rng.gen());
                            if is_public(ip) {
                                break ip;
                            }
                        };
                        payloads.push(ip.to_string());
                        let hi = [u64::from(ip.0[0]) << 8 | u64::from(ip.0[1]), u64::from(ip.0[2]) << 8 | u64::from(ip.0[3])];
                        for (m, low) in hi.iter().enumerate() {
                            let value = g.rng.gen_range(1..40u64) * 65_536 + low;
                            let f = g.address();
                            let change = g.address();
                            let fund = value + 100_000;
                            g.push(h, &[], &[(f.as_str(), fund)]);
                            let id = g.push(
                                h + 1 + 2 * k + m as u64,
                                &[(f.as_str(), fund)],
                                &[(target.as_str(), value), (change.as_str(), fund - value - 2_000)],
                            );
                            txids.push(id);
                        }
                    }
                    Planted {
                        kind: p.kind,
                        addresses: alloc::vec![target],
                        txids,
                        family: Some("pony".into()),
                        payloads,
                        seeds: Vec::new(),
                        relations: Vec::new(),
                    }
                }
                PlantKind::GluptebaOpreturn => {
                    let a = g.address();
                    let change = g.address();
                    let label: String = (0..g.rng.gen_range(6..12))
                        .map(|_| (b'a' + g.rng.gen_range(0..26u8)) as char)
                        .collect();
                    let host = format!("{label}.{}", ["com", "net", "org", "info"][g.rng.gen_range(0..4)]);
                    let iv: [u8; 12] = g.rng.gen();
                    let payload = aes_gcm_seal_hex(&key, &iv, host.as_bytes());
                    g.push(h, &[], &[(a.as_str(), 1_000_000)]);
                    let id = g.txid();
                    let hh = h + 12;
                    let time = T0 + 600 * hh as i64;
                    let tx = Transaction::new(id.clone(), hh, time, &[(a.as_str(), 1_000_000)], &[(change.as_str(), 998_000)])
                        .with_data_output(payload, 0);
                    g.txs.push(tx);
                    Planted {
                        kind: p.kind,
                        addresses: alloc::vec![a],
                        txids: alloc::vec![id],
                        family: Some("glupteba".into()),
                        payloads: alloc::vec![host],
                        seeds: Vec::new(),
                        relations: Vec::new(),
                    }
                }
                PlantKind::DustBlast => {
                    let n_out = p.size.unwrap_or(100);
                    let d = g.address();
                    let change = g.address();
                    let mut recipients: Vec<String> = known_users
                        .choose_multiple(&mut g.rng, n_out.min(known_users.len()))
                        .cloned()
                        .collect();
                    while recipients.len() < n_out {
                        recipients.push(g.address());
                    }
                    let fund = 546 * n_out as u64 + 1_000_000;
                    g.push(h, &[], &[(d.as_str(), fund)]);
                    let mut outs: Vec<(String, u64)> = recipients.iter().map(|a| (a.clone(), 546)).collect();
                    outs.push((change, fund - 546 * n_out as u64 - 5_000));
                    let id = g.push_owned(h + 1, &[(d, fund)], &outs);
                    Planted {
                        kind: p.kind,
                        addresses: recipients,
                        txids: alloc::vec![id],
                        family: None,
                        payloads: Vec::new(),
                        seeds: Vec::new(),
                        relations: Vec::new(),
                    }
                }
                PlantKind::Coinjoin => {
                    let n_p = p.size.unwrap_or(5).max(3);
                    let mut ins = Vec::new();
                    let mut outs = Vec::new();
                    for _ in 0..n_p {
                        let a = g.address();
                        let v = 1_000_000 + g.rng.gen_range(0..500_000);
                        g.push(h, &[], &[(a.as_str(), v)]);
                        ins.push((a, v));
                    }
                    for (_, v) in &ins {
                        let mixed = g.address();
                        let change = g.address();
                        outs.push((mixed, 500_000));
                        outs.push((change, v - 500_000 - 1_000));
                    }
                    let id = g.push_owned(h + 1, &ins, &outs);
                    Planted {
                        kind: p.kind,
                        addresses: ins.into_iter().map(|x| x.0).collect(),
                        txids: alloc::vec![id],
                        family: None,
                        payloads: Vec::new(),
                        seeds: Vec::new(),
                        relations: Vec::new(),
                    }
                }
                PlantKind::RelationPath => {
                    let (seed, p1, p2, t, u, q) = (g.address(), g.address(), g.address(), g.address(), g.address(), g.address());
                    let cat = [Category::Exchange, Category::Gambling, Category::Mixer, Category::Payment][i % 4];
                    let dst = format!("target{plant_no}");
                    let src = format!("source{plant_no}");
                    tags.push(TagRecord::new(&seed, Category::Ransomware, "synthrel"));
                    tags.push(TagRecord::new(&t, cat, &dst));
                    tags.push(TagRecord::new(&u, Category::Exchange, &src));
                    let v = g.rng.gen_range(1_000_000..10_000_000);
                    let ids = alloc::vec![
                        g.push(h, &[], &[(u.as_str(), v)]),
                        g.push(h + 1, &[(u.as_str(), v)], &[(q.as_str(), v - 1_000)]),
                        g.push(h + 2, &[(q.as_str(), v - 1_000)], &[(seed.as_str(), v - 2_000)]),
                        g.push(h + 3, &[(seed.as_str(), v - 2_000)], &[(p1.as_str(), v - 3_000)]),
                        g.push(h + 4, &[(p1.as_str(), v - 3_000)], &[(p2.as_str(), v - 4_000)]),
                        g.push(h + 5, &[(p2.as_str(), v - 4_000)], &[(t.as_str(), v - 5_000)]),
                    ];
                    seeds.push(seed.clone());
                    Planted {
                        kind: p.kind,
                        addresses: alloc::vec![seed.clone(), t.clone(), u.clone()],
                        txids: ids,
                        family: None,
                        payloads: Vec::new(),
                        seeds: alloc::vec![seed.clone()],
                        relations: alloc::vec![
                            PlantedRelation {
                                seed: seed.clone(),
                                target: t,
                                tag: format!("{}:{dst}", cat.as_str()),
                                direction: "seed_to_entity".into(),
                            },
                            PlantedRelation {
                                seed,
                                target: u,
                                tag: format!("exchange:{src}"),
                                direction: "entity_to_seed".into(),
                            },
                        ],
                    }
                }
                PlantKind::Fig2Topology => {
                    let prefix = format!("fig2_{plant_no}_");
                    let base = splitmix(spec.seed ^ plant_no) & 0xffff_ffff_0000_0000;
                    g.txs.extend(fig2_transactions(&prefix, h, base));
                    tags.extend(fig2_tags(&prefix));
                    let names = |v: &[&str]| v.iter().map(|s| format!("{prefix}{s}")).collect::<Vec<_>>();
                    let s = names(&["s1", "s2"]);
                    seeds.extend(s.iter().cloned());
                    classifier_exchanges.push(format!("{prefix}b"));
                    Planted {
                        kind: p.kind,
                        addresses: names(&["s1", "s2", "a", "b", "c", "d", "e", "f", "g", "h", "i"]),
                        txids: (1..=11).map(|k| crate::fixtures::txid(base + k)).collect(),
                        family: None,
                        payloads: Vec::new(),
                        seeds: s,
                        relations: alloc::vec![PlantedRelation {
                            seed: format!("{prefix}s1"),
                            target: format!("{prefix}c"),
                            tag: "exchange:poloniex".into(),
                            direction: "seed_to_entity".into(),
                        }],
                    }
                }
            };
            planted.push(item);
        }
    }

    let n_addr = {
        let mut set = BTreeSet::new();
        for tx in &g.txs {
            for s in tx.inputs.iter().chain(tx.outputs.iter()) {
                if let Some(a) = s.address() {
                    set.insert(a);
                }
            }
        }
        set.len()
    };
    SynthChain {
        manifest: SynthManifest {
            spec: spec.clone(),
            transactions: g.txs.len(),
            addresses: n_addr,
            exchange_hot_addresses: hot_addresses,
            exchange_addresses,
            user_addresses,
            classifier_exchanges,
            glupteba_key: hex::encode(key),
            seeds,
            planted,
        },
        transactions: g.txs,
        tags,
    }
}

/// Relation-level precision, recall and F1 against a baseline key set. Two
/// empty sets agree perfectly.
pub fn relation_scores(baseline: &BTreeSet<RelationKey>, found: &BTreeSet<RelationKey>) -> (f64, f64, f64) {
    let tp = baseline.intersection(found).count() as f64;
    let p = if found.is_empty() { 1.0 } else { tp / found.len() as f64 };
    let r = if baseline.is_empty() { 1.0 } else { tp / baseline.len() as f64 };
    let f1 = if baseline.is_empty() && found.is_empty() {
        1.0
    } else if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f1)
}

/// Chain, clusters, tags and seeds shared by every run of a study.
pub struct StudyInput<'a> {
    pub store: &'a ChainStore,
    pub clusters: &'a ClusterMap,
    pub tagdb: &'a TagDb,
    pub seeds: &'a [String],
    pub config: &'a ExplorationConfig,
    pub families: &'a [String],
}

impl StudyInput<'_> {
    fn relations(&self, classifier: &dyn ExchangeClassifier) -> Result<BTreeSet<RelationKey>, ExploreError> {
        let cfg = ExplorationConfig {
            classifier_enabled: true,
            ..self.config.clone()
        };
        let e = explore(
            self.store,
            self.clusters,
            self.tagdb,
            Some(classifier),
            self.seeds,
            &cfg,
            &crate::explorer::NoClock,
        )?;
        Ok(find_relations(&e.graph, self.tagdb, self.clusters, self.families).keys())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonJob {
    pub epsilon: f64,
    pub mode: InjectMode,
    pub repeat: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub mode: InjectMode,
    pub repeat: usize,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub relations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub mode: InjectMode,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub runs: usize,
}

pub const DEFAULT_EPSILONS: [f64; 8] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40];
pub const DEFAULT_REPEATS: usize = 20;

/// One job per (epsilon, mode, repeat). Repeat `r` uses seed `seed + r` at
/// every epsilon, so a repeat's flipped set only grows with epsilon.
pub fn epsilon_jobs(epsilons: &[f64], modes: &[InjectMode], repeats: usize, seed: u64) -> Vec<EpsilonJob> {
    let mut v = Vec::new();
    for &mode in modes {
        for &epsilon in epsilons {
            for repeat in 0..repeats {
                v.push(EpsilonJob {
                    epsilon,
                    mode,
                    repeat,
                    seed: seed.wrapping_add(repeat as u64),
                });
            }
        }
    }
    v
}

pub fn run_epsilon_job<C: ExchangeClassifier>(
    input: &StudyInput<'_>,
    base: &C,
    baseline: &BTreeSet<RelationKey>,
    job: &EpsilonJob,
) -> Result<EpsilonRun, ExploreError> {
    let inj = ErrorInjector {
        inner: base,
        epsilon: job.epsilon,
        mode: job.mode,
        seed: job.seed,
    };
    let found = input.relations(&inj)?;
    let (precision, recall, f1) = relation_scores(baseline, &found);
    Ok(EpsilonRun {
        epsilon: job.epsilon,
        mode: job.mode,
        repeat: job.repeat,
        seed: job.seed,
        precision,
        recall,
        f1,
        relations: found.len(),
    })
}

/// Mean and sample standard deviation of F1 per (epsilon, mode), in job
/// order.
pub fn summarize_curve(runs: &[EpsilonRun]) -> Vec<CurvePoint> {
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut groups: Vec<((u64, InjectMode), Vec<f64>)> = Vec::new();
    for r in runs {
        let k = (r.epsilon.to_bits(), r.mode);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r.f1),
            None => groups.push((k, alloc::vec![r.f1])),
        }
    }
    for ((eps, mode), v) in groups {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        points.push(CurvePoint {
            epsilon: f64::from_bits(eps),
            mode,
            mean_f1: mean,
            std_f1: libm::sqrt(var),
            runs: v.len(),
        });
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStudy {
    pub baseline_relations: usize,
    pub runs: Vec<EpsilonRun>,
    pub curve: Vec<CurvePoint>,
}

/// Relations of the uninjected run that every job is scored against.
pub fn epsilon_baseline<C: ExchangeClassifier>(
    input: &StudyInput<'_>,
    base: &C,
) -> Result<BTreeSet<RelationKey>, ExploreError> {
    input.relations(base)
}

/// Sequential study: baseline first, then every job in order.
pub fn run_epsilon_study<C: ExchangeClassifier>(
    input: &StudyInput<'_>,
    base: &C,
    jobs: &[EpsilonJob],
) -> Result<EpsilonStudy, ExploreError> {
    let baseline = epsilon_baseline(input, base)?;
    let runs = jobs
        .iter()
        .map(|j| run_epsilon_job(input, base, &baseline, j))
        .collect::<Result<Vec<_>, _>>()?;
    let curve = summarize_curve(&runs);
    Ok(EpsilonStudy {
        baseline_relations: baseline.len(),
        runs,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRun {
    pub classifier_enabled: bool,
    pub addresses: usize,
    pub txes: usize,
    pub runtime_us: u64,
    pub status: ExploreStatus,
    pub limit_hit: bool,
    pub classifier_calls: usize,
    pub classifier_exchanges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub limit: usize,
    pub enabled: AblationRun,
    pub disabled: AblationRun,
    /// Disabled over enabled.
    pub address_factor: f64,
    pub runtime_factor: f64,
}

/// Explores with the classifier on, then off with the address cap.
pub fn run_ablation(
    input: &StudyInput<'_>,
    classifier: &dyn ExchangeClassifier,
    limit: usize,
    clock: &dyn Clock,
) -> Result<AblationReport, ExploreError> {
    let run = |enabled: bool| -> Result<AblationRun, ExploreError> {
        let cfg = ExplorationConfig {
            classifier_enabled: enabled,
            max_addresses: if enabled { input.config.max_addresses } else { Some(limit) },
            ..input.config.clone()
        };
        let e = explore(
            input.store,
            input.clusters,
            input.tagdb,
            enabled.then_some(classifier),
            input.seeds,
            &cfg,
            clock,
        )?;
        Ok(AblationRun {
            classifier_enabled: enabled,
            addresses: e.stats.addresses,
            txes: e.stats.txes,
            runtime_us: e.stats.runtime_us,
            status: e.stats.status,
            limit_hit: e.stats.status == ExploreStatus::LimitReached,
            classifier_calls: e.stats.classifier_calls,
            classifier_exchanges: e.stats.classifier_exchanges,
        })
    };
    let enabled = run(true)?;
    let disabled = run(false)?;
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    Ok(AblationReport {
        limit,
        address_factor: ratio(disabled.addresses as f64, enabled.addresses as f64),
        runtime_factor: ratio(disabled.runtime_us as f64, enabled.runtime_us as f64),
        enabled,
        disabled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSize {
    pub addresses: usize,
    pub txes: usize,
    pub edges: usize,
    pub relations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionComparison {
    pub back_and_forth: GraphSize,
    pub forward_only: GraphSize,
    /// Forward-only over back-and-forth.
    pub address_ratio: f64,
    pub tx_ratio: f64,
    pub edge_ratio: f64,
    /// Whether every forward-only node and edge is in the back-and-forth graph.
    pub forward_subset: bool,
    /// Left: back-and-forth; right: forward-only.
    pub relations: RelationDiff,
}

/// Runs both directions with otherwise identical configuration.
pub fn compare_directions(
    input: &StudyInput<'_>,
    classifier: Option<&dyn ExchangeClassifier>,
) -> Result<DirectionComparison, ExploreError> {
    let run = |direction: Direction| {
        let cfg = ExplorationConfig {
            direction,
            classifier_enabled: input.config.classifier_enabled && classifier.is_some(),
            ..input.config.clone()
        };
        explore(
            input.store,
            input.clusters,
            input.tagdb,
            classifier,
            input.seeds,
            &cfg,
            &crate::explorer::NoClock,
        )
    };
    let b = run(Direction::BackAndForth)?;
    let f = run(Direction::ForwardOnly)?;
    let rb = find_relations(&b.graph, input.tagdb, input.clusters, input.families);
    let rf = find_relations(&f.graph, input.tagdb, input.clusters, input.families);
    let size = |g: &crate::explorer::ExplorationGraph, r: usize| GraphSize {
        addresses: g.addresses.len(),
        txes: g.txs.len(),
        edges: g.edges.len(),
        relations: r,
    };
    let sb = size(&b.graph, rb.relations.len());
    let sf = size(&f.graph, rf.relations.len());
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let forward_subset = f.graph.addresses.keys().all(|a| b.graph.addresses.contains_key(a))
        && f.graph.txs.keys().all(|t| b.graph.txs.contains_key(t))
        && f.graph.edges.keys().all(|e| b.graph.edges.contains_key(e));
    Ok(DirectionComparison {
        address_ratio: ratio(sf.addresses, sb.addresses),
        tx_ratio: ratio(sf.txes, sb.txes),
        edge_ratio: ratio(sf.edges, sb.edges),
        back_and_forth: sb,
        forward_only: sf,
        forward_subset,
        relations: diff_reports(&rb, &rf).expect("both runs share seeds"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::IngestOptions;
    use crate::classifier::SetClassifier;
    use crate::explorer::{AddrKind, NoClock};
    use crate::fixtures;
    use crate::oracles::{cerber_oracle, glupteba_oracle, pony_oracle, GluptebaOptions, Low16Codec};
    use crate::tags::TagDbOptions;
    use alloc::vec;

    fn small_spec(planted: Vec<PlantSpec>) -> SynthSpec {
        SynthSpec {
            seed: 11,
            users: 200,
            exchanges: 3,
            hot_addresses: 3,
            blocks: 300,
            transactions: 800,
            data_outputs: 5,
            planted,
        }
    }

    fn plant(kind: PlantKind, count: usize) -> PlantSpec {
        PlantSpec { kind, count, size: None }
    }

    #[test]
    fn synth_is_valid_and_deterministic() {
        let spec = small_spec(vec![
            plant(PlantKind::CerberCycle, 3),
            plant(PlantKind::PonyPairSeries, 2),
            plant(PlantKind::GluptebaOpreturn, 2),
            plant(PlantKind::DustBlast, 1),
            plant(PlantKind::Coinjoin, 1),
            plant(PlantKind::RelationPath, 2),
        ]);
        let a = generate_chain(&spec);
        let b = generate_chain(&spec);
        assert_eq!(a.transactions, b.transactions);
        assert_eq!(a.manifest, b.manifest);
        let store = ChainStore::build(a.transactions.clone(), &IngestOptions { strict_timestamps: false }).unwrap();
        assert_eq!(a.manifest.signaling("cerber").len(), 3);
        for v in a.manifest.signaling("cerber") {
            assert!(cerber_oracle(&store, &v).is_signaling);
        }
        for v in a.manifest.signaling("pony") {
            assert!(pony_oracle(&store, &v, &Low16Codec).is_signaling);
        }
        let key = crate::oracles::parse_key(&a.manifest.glupteba_key).unwrap();
        for v in a.manifest.signaling("glupteba") {
            assert!(glupteba_oracle(&store, &v, &[key], &GluptebaOptions::default()).is_signaling);
        }
        let other = generate_chain(&SynthSpec { seed: 12, ..spec });
        assert_ne!(a.transactions, other.transactions);
    }

    #[test]
    fn synth_fig2_copy_explores_like_fig2() {
        let s = generate_chain(&small_spec(vec![plant(PlantKind::Fig2Topology, 1)]));
        let store = ChainStore::build(s.transactions, &IngestOptions::default()).unwrap();
        let clusters = ClusterMap::build(&store);
        let db = TagDb::build(&s.tags, &TagDbOptions::default());
        let set = SetClassifier::new(s.manifest.classifier_exchanges.iter().cloned());
        let cfg = ExplorationConfig {
            classifier_enabled: true,
            ..ExplorationConfig::default()
        };
        let p = &s.manifest.planted[0];
        let e = explore(&store, &clusters, &db, Some(&set), &p.seeds, &cfg, &NoClock).unwrap();
        let got: BTreeSet<&String> = e.graph.addresses.keys().collect();
        let want: BTreeSet<&String> = p.addresses.iter().collect();
        assert_eq!(got, want);
        let r = find_relations(&e.graph, &db, &clusters, &[]);
        assert_eq!(r.relations.len(), 1);
        assert_eq!(r.relations[0].target, p.relations[0].target);
    }

    #[test]
    fn scores_edge_cases() {
        let e = BTreeSet::new();
        assert_eq!(relation_scores(&e, &e), (1.0, 1.0, 1.0));
        let f = fixtures::fig2();
        let cfg = ExplorationConfig::default();
        let input = StudyInput {
            store: &f.store,
            clusters: &f.clusters,
            tagdb: &f.tagdb,
            seeds: &f.seeds,
            config: &cfg,
            families: &[],
        };
        let base = epsilon_baseline(&input, &SetClassifier::new(f.classifier_exchanges.clone())).unwrap();
        assert_eq!(relation_scores(&base, &e).2, 0.0);
        assert_eq!(relation_scores(&base, &base).2, 1.0);
    }

    #[test]
    fn epsilon_curve_shape_small() {
        let sc = fixtures::epsilon_fixture(3);
        let cfg = ExplorationConfig::default();
        let input = StudyInput {
            store: &sc.store,
            clusters: &sc.clusters,
            tagdb: &sc.tagdb,
            seeds: &sc.seeds,
            config: &cfg,
            families: &[],
        };
        let truth = SetClassifier::new(sc.exchanges.iter().cloned());
        let jobs = epsilon_jobs(&[0.0, 0.2, 0.4], &[InjectMode::InjectCfp, InjectMode::InjectCfn], 5, 1);
        let st = run_epsilon_study(&input, &truth, &jobs).unwrap();
        assert_eq!(st.baseline_relations, 3 * 7);
        let pt = |e: f64, m| st.curve.iter().find(|p| p.epsilon == e && p.mode == m).unwrap().mean_f1;
        for m in [InjectMode::InjectCfp, InjectMode::InjectCfn] {
            assert_eq!(pt(0.0, m), 1.0);
            assert!(pt(0.4, m) <= pt(0.2, m) + 1e-12);
        }
        assert!(pt(0.4, InjectMode::InjectCfp) <= pt(0.4, InjectMode::InjectCfn));
    }

    #[test]
    fn ablation_on_small_hub() {
        let sc = fixtures::hub_fixture(3, 10, 20);
        let cfg = ExplorationConfig::default();
        let input = StudyInput {
            store: &sc.store,
            clusters: &sc.clusters,
            tagdb: &sc.tagdb,
            seeds: &sc.seeds,
            config: &cfg,
            families: &[],
        };
        let truth = SetClassifier::new(sc.exchanges.iter().cloned());
        let r = run_ablation(&input, &truth, 400, &NoClock).unwrap();
        assert!(r.disabled.addresses > r.enabled.addresses);
        assert!(r.disabled.limit_hit);
        assert!(!r.enabled.limit_hit);
        assert_eq!(r.enabled.classifier_exchanges, 3);
    }

    #[test]
    fn directions_on_fixtures() {
        let f = fixtures::fig2();
        let cfg = ExplorationConfig {
            classifier_enabled: true,
            ..ExplorationConfig::default()
        };
        let set = SetClassifier::new(f.classifier_exchanges.clone());
        let input = StudyInput {
            store: &f.store,
            clusters: &f.clusters,
            tagdb: &f.tagdb,
            seeds: &f.seeds,
            config: &cfg,
            families: &[],
        };
        let c = compare_directions(&input, Some(&set)).unwrap();
        assert!(c.forward_subset);
        assert!(c.address_ratio < 1.0);
        assert_eq!(c.relations.common, 1);

        let sc = fixtures::cc_funding_fixture();
        let input = StudyInput {
            store: &sc.store,
            clusters: &sc.clusters,
            tagdb: &sc.tagdb,
            seeds: &sc.seeds,
            config: &cfg,
            families: &["glupteba".to_string()],
        };
        let c = compare_directions(&input, None).unwrap();
        assert_eq!(c.relations.only_left.len(), 1);
        assert_eq!(c.relations.only_left[0].tag.to_string(), "exchange:bitfund");
        assert!(c.relations.only_right.is_empty());
        let _ = AddrKind::Seed;
    }
}
