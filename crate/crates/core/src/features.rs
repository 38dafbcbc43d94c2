//! Per-address classifier features, z-score normalization and
//! mutual-information ranking.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chain::{tx_fee, ChainStore, Transaction, DAY_SECONDS};
use crate::cluster::detect_coinjoin;
use crate::error::ClassifierError;

pub const N_FEATURES: usize = 42;

/// Seconds in a Julian year (365.25 days).
pub const YEAR_SECONDS: f64 = 31_557_600.0;

/// Default number of equal-frequency bins for MI estimation.
pub const DEFAULT_MI_BINS: usize = 20;

/// Canonical feature names, in export order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "type",
    "equiv_addrs",
    "lifetime",
    "timespan_d",
    "timespan_w",
    "activity",
    "activity_d",
    "activity_w",
    "idle_time",
    "daily_d_rate",
    "daily_w_rate",
    "yearly_d_txes",
    "yearly_w_txes",
    "balance",
    "deposited",
    "withdrawn",
    "txes",
    "txes_out",
    "txes_in",
    "addr_as_change",
    "outputs",
    "inputs",
    "utxos",
    "tx_size_mean",
    "tx_weight_mean",
    "tx_fee_mean",
    "ins_age_mean",
    "coinbase",
    "coinjoin",
    "coinjoin_out",
    "coinjoin_in",
    "tx_ratio",
    "outs_per_tx",
    "ins_per_tx",
    "outs_per_out",
    "ins_per_out",
    "outs_per_in",
    "ins_per_in",
    "profit_rate",
    "expense_rate",
    "d_per_tx",
    "w_per_tx",
];

/// Features measured in satoshis; they scale linearly with transaction
/// values.
pub const AMOUNT_FEATURES: [&str; 8] = [
    "balance",
    "deposited",
    "withdrawn",
    "tx_fee_mean",
    "profit_rate",
    "expense_rate",
    "d_per_tx",
    "w_per_tx",
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn get(&self, name: &str) -> f64 {
        self.0[feature_index(name).expect("unknown feature name")]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Deposit/withdrawal statistics of one address, accumulated in one pass.
#[derive(Default)]
struct Accum {
    count: usize,
    first_time: i64,
    last_time: i64,
    days: BTreeSet<i64>,
    outs: usize,
    ins: usize,
}

impl Accum {
    fn add(&mut self, tx: &Transaction) {
        if self.count == 0 {
            self.first_time = tx.time;
            self.last_time = tx.time;
        }
        self.first_time = self.first_time.min(tx.time);
        self.last_time = self.last_time.max(tx.time);
        self.count += 1;
        self.days.insert(tx.time.div_euclid(DAY_SECONDS));
        self.outs += tx.outputs.len();
        self.ins += tx.inputs.len();
    }

    fn span(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.last_time - self.first_time) as f64
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Extracts the feature vector of `address`. Addresses without transactions
/// get an all-zero vector apart from the type code.
pub fn extract_features(store: &ChainStore, address: &str) -> FeatureVector {
    let mut f = [0.0; N_FEATURES];
    f[0] = f64::from(store.addr_type(address).code());
    f[1] = f64::from(store.equiv_count(address));

    let deposits = store.deposit_indices(address);
    let withdrawals = store.withdrawal_indices(address);
    let all = store.tx_indices(address);

    let (mut t, mut d, mut w) = (Accum::default(), Accum::default(), Accum::default());
    let mut deposited: u64 = 0;
    let mut withdrawn: u64 = 0;
    let mut out_slots = 0usize;
    let mut in_slots = 0usize;
    let (mut size_sum, mut weight_sum, mut fee_sum) = (0u64, 0u64, 0u64);
    let (mut coinbase, mut coinjoin, mut coinjoin_out, mut coinjoin_in) = (0, 0, 0, 0);
    let mut both = 0usize;
    let (mut tx_outs, mut tx_ins) = (0usize, 0usize);
    // Heights of this address's unspent outputs, oldest first.
    let mut pending: alloc::collections::VecDeque<u64> = alloc::collections::VecDeque::new();
    let (mut age_sum, mut age_n) = (0u64, 0u64);

    for &i in &all {
        let tx = store.tx(i);
        t.add(tx);
        tx_outs += tx.outputs.len();
        tx_ins += tx.inputs.len();
        let is_dep = tx.has_output(address);
        let is_wd = tx.has_input(address);
        let cj = !tx.coinbase && detect_coinjoin(tx);
        if is_dep {
            d.add(tx);
        }
        if is_wd {
            w.add(tx);
        }
        if is_dep && is_wd {
            both += 1;
        }
        size_sum += tx.size.unwrap_or(0);
        weight_sum += tx.weight.unwrap_or(0);
        fee_sum += tx_fee(tx).unwrap_or(0);
        if tx.coinbase {
            coinbase += 1;
        }
        if cj {
            coinjoin += 1;
            coinjoin_out += usize::from(is_dep);
            coinjoin_in += usize::from(is_wd);
        }
        // Inputs are spent before this transaction's outputs exist.
        for s in tx.inputs.iter().filter(|s| s.address() == Some(address)) {
            withdrawn += s.value;
            in_slots += 1;
            if let Some(h) = pending.pop_front() {
                age_sum += tx.height.saturating_sub(h);
                age_n += 1;
            }
        }
        for s in tx.outputs.iter().filter(|s| s.address() == Some(address)) {
            deposited += s.value;
            out_slots += 1;
            pending.push_back(tx.height);
        }
    }
    debug_assert_eq!(d.count, deposits.len());
    debug_assert_eq!(w.count, withdrawals.len());

    let n_t = t.count as f64;
    let n_d = d.count as f64;
    let n_w = w.count as f64;
    let lifetime = t.span();
    let life_den = lifetime.max(1.0);

    f[2] = lifetime;
    f[3] = d.span();
    f[4] = w.span();
    f[5] = t.days.len() as f64;
    f[6] = d.days.len() as f64;
    f[7] = w.days.len() as f64;
    f[8] = match (t.days.first(), t.days.last()) {
        (Some(a), Some(b)) => (b - a + 1) as f64 - t.days.len() as f64,
        _ => 0.0,
    };
    if t.count > 0 {
        f[9] = n_d / life_den * DAY_SECONDS as f64;
        f[10] = n_w / life_den * DAY_SECONDS as f64;
        f[11] = n_d / life_den * YEAR_SECONDS;
        f[12] = n_w / life_den * YEAR_SECONDS;
    }
    f[13] = deposited as f64 - withdrawn as f64;
    f[14] = deposited as f64;
    f[15] = withdrawn as f64;
    f[16] = n_t;
    f[17] = n_d;
    f[18] = n_w;
    f[19] = ratio(both as f64, n_t);
    f[20] = out_slots as f64;
    f[21] = in_slots as f64;
    f[22] = out_slots.saturating_sub(in_slots) as f64;
    f[23] = ratio(size_sum as f64, n_t);
    f[24] = ratio(weight_sum as f64, n_t);
    f[25] = ratio(fee_sum as f64, n_t);
    f[26] = ratio(age_sum as f64, age_n as f64);
    f[27] = coinbase as f64;
    f[28] = coinjoin as f64;
    f[29] = coinjoin_out as f64;
    f[30] = coinjoin_in as f64;
    f[31] = ratio(n_w, n_d);
    f[32] = ratio(tx_outs as f64, n_t);
    f[33] = ratio(tx_ins as f64, n_t);
    f[34] = ratio(d.outs as f64, n_d);
    f[35] = ratio(d.ins as f64, n_d);
    f[36] = ratio(w.outs as f64, n_w);
    f[37] = ratio(w.ins as f64, n_w);
    if t.count > 0 {
        f[38] = deposited as f64 / life_den;
        f[39] = withdrawn as f64 / life_den;
    }
    f[40] = ratio(deposited as f64, n_t);
    f[41] = ratio(withdrawn as f64, n_t);
    FeatureVector(f)
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, ClassifierError> {
        if rows.len() < 2 {
            return Err(ClassifierError::InsufficientData(
                "normalization needs at least two rows".to_string(),
            ));
        }
        let d = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(ClassifierError::DimensionMismatch {
                expected: d,
                found: r.len(),
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                let e = r[j] - mean[j];
                var[j] += e * e;
            }
        }
        let std = var.into_iter().map(|v| libm::sqrt(v / n)).collect();
        Ok(Normalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        if x.len() != self.dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s == 0.0 { 0.0 } else { (v - m) / s })
            .collect())
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ClassifierError> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

/// Equal-frequency bin index of every value. Cut points are taken at the
/// `i·n/bins` order statistics and deduplicated, so equal values always
/// share a bin.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..bins)
        .filter_map(|i| sorted.get(i * n / bins).copied())
        .collect();
    cuts.dedup_by(|a, b| a == b);
    values
        .iter()
        .map(|v| cuts.partition_point(|c| *c <= *v))
        .collect()
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * libm::log(p)
        })
        .sum()
}

/// Mutual information in nats between two discrete sequences.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            let px = ca[x] as f64 / n;
            let py = cb[y] as f64 / n;
            mi += pxy * libm::log(pxy / (px * py));
        }
    }
    mi.max(0.0)
}

/// Shannon entropy in nats of a discrete sequence.
pub fn discrete_entropy(a: &[usize]) -> f64 {
    let k = a.iter().max().map_or(0, |m| m + 1);
    let mut c = vec![0usize; k];
    for &x in a {
        c[x] += 1;
    }
    entropy(&c, a.len() as f64)
}

/// Ranks features by MI gain with the binary label, descending, ties broken
/// by name.
pub fn rank_features_mi(
    rows: &[Vec<f64>],
    labels: &[bool],
    names: &[&str],
    bins: usize,
) -> Result<Vec<(String, f64)>, ClassifierError> {
    if rows.len() < 2 || rows.len() != labels.len() {
        return Err(ClassifierError::InsufficientData(
            "MI ranking needs at least two labelled rows".to_string(),
        ));
    }
    if bins < 2 {
        return Err(ClassifierError::InvalidParameter("bins must be at least 2".to_string()));
    }
    let y: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let mut out: Vec<(String, f64)> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let binned = equal_frequency_bins(&col, bins);
            (name.to_string(), mutual_information(&binned, &y))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{IngestOptions, Transaction};
    use alloc::format;
    use proptest::prelude::*;

    fn txid(n: u32) -> String {
        format!("{:064x}", n)
    }

    #[test]
    fn names_are_unique_and_complete() {
        let set: BTreeSet<&str> = FEATURE_NAMES.iter().copied().collect();
        assert_eq!(set.len(), 42);
        for a in AMOUNT_FEATURES {
            assert!(feature_index(a).is_some());
        }
    }

    #[test]
    fn single_deposit() {
        let tx = Transaction::new(txid(1), 1, 1_000, &[("X", 200_000_000)], &[("A", 100_000_000), ("X", 99_000_000)]);
        let store = ChainStore::build(vec![tx], &IngestOptions::default()).unwrap();
        let f = extract_features(&store, "A");
        assert_eq!(f.get("deposited"), 100_000_000.0);
        assert_eq!(f.get("withdrawn"), 0.0);
        assert_eq!(f.get("balance"), 100_000_000.0);
        assert_eq!(f.get("txes"), 1.0);
        assert_eq!(f.get("tx_ratio"), 0.0);
        assert_eq!(f.get("tx_fee_mean"), 1_000_000.0);
        assert_eq!(f.get("utxos"), 1.0);
        // X spends and receives change in the same transaction.
        let x = extract_features(&store, "X");
        assert_eq!(x.get("addr_as_change"), 1.0);
        assert_eq!(x.get("outs_per_tx"), 2.0);
        assert_eq!(x.get("ins_per_tx"), 1.0);
    }

    #[test]
    fn empty_context() {
        let store = ChainStore::build(vec![], &IngestOptions::default()).unwrap();
        let f = extract_features(&store, "3nothing");
        for (i, v) in f.0.iter().enumerate() {
            if i == 0 {
                assert_eq!(*v, 1.0);
            } else {
                assert_eq!(*v, 0.0, "{}", FEATURE_NAMES[i]);
            }
        }
    }

    /// Five transactions touching A, with every feature worked out by hand.
    #[test]
    fn hand_computed_fixture() {
        let day = DAY_SECONDS;
        let mut t1 = Transaction::new(txid(1), 10, 0, &[], &[("A", 5_000), ("B", 1_000)]);
        t1.size = Some(200);
        t1.weight = Some(800);
        let mut t2 = Transaction::new(txid(2), 12, 3_600, &[("C", 3_000)], &[("A", 2_500)]);
        t2.size = Some(300);
        let t3 = Transaction::new(txid(3), 20, 2 * day, &[("A", 5_000), ("A", 2_500)], &[("D", 4_000), ("A", 3_000)]);
        // CoinJoin: three equal outputs of 900 plus two change outputs.
        let t4 = Transaction::new(
            txid(4),
            25,
            2 * day + 60,
            &[("E", 1_000), ("F", 1_000), ("G", 1_000)],
            &[("A", 900), ("M", 900), ("N", 900), ("O", 50), ("P", 50)],
        );
        let t5 = Transaction::new(txid(5), 30, 4 * day, &[("A", 3_000)], &[("K", 2_000)]);
        let unrelated = Transaction::new(txid(6), 31, 5 * day, &[("L", 100)], &[("Q", 100)]);
        let s = vec![t1, t2, t3, t4, t5, unrelated];
        let store = ChainStore::build(s, &IngestOptions::default()).unwrap();
        let f = extract_features(&store, "A");

        // T = {t1..t5}; D = {t1, t2, t3, t4}; W = {t3, t5}.
        let lifetime = (4 * day) as f64;
        let expect: [(&str, f64); 41] = [
            ("equiv_addrs", 0.0),
            ("lifetime", lifetime),
            ("timespan_d", (2 * day + 60) as f64),
            ("timespan_w", (2 * day) as f64),
            ("activity", 3.0),
            ("activity_d", 2.0),
            ("activity_w", 2.0),
            ("idle_time", 2.0),
            ("daily_d_rate", 4.0 / lifetime * 86_400.0),
            ("daily_w_rate", 2.0 / lifetime * 86_400.0),
            ("yearly_d_txes", 4.0 / lifetime * YEAR_SECONDS),
            ("yearly_w_txes", 2.0 / lifetime * YEAR_SECONDS),
            ("balance", 11_400.0 - 10_500.0),
            ("deposited", 11_400.0),
            ("withdrawn", 10_500.0),
            ("txes", 5.0),
            ("txes_out", 4.0),
            ("txes_in", 2.0),
            ("addr_as_change", 1.0 / 5.0),
            ("outputs", 4.0),
            ("inputs", 3.0),
            ("utxos", 1.0),
            ("tx_size_mean", 100.0),
            ("tx_weight_mean", 160.0),
            // fees: t1 0, t2 500, t3 500, t4 200, t5 1000
            ("tx_fee_mean", 2_200.0 / 5.0),
            // t3 spends outputs from heights 10 and 12; t5 spends the one
            // from height 20: (10 + 8 + 10) / 3.
            ("ins_age_mean", 28.0 / 3.0),
            ("coinbase", 1.0),
            ("coinjoin", 1.0),
            ("coinjoin_out", 1.0),
            ("coinjoin_in", 0.0),
            ("tx_ratio", 0.5),
            // outputs per tx: 2, 1, 2, 5, 1
            ("outs_per_tx", 11.0 / 5.0),
            // inputs per tx: 0, 1, 2, 3, 1
            ("ins_per_tx", 7.0 / 5.0),
            ("outs_per_out", 10.0 / 4.0),
            ("ins_per_out", 6.0 / 4.0),
            ("outs_per_in", 3.0 / 2.0),
            ("ins_per_in", 3.0 / 2.0),
            ("profit_rate", 11_400.0 / lifetime),
            ("expense_rate", 10_500.0 / lifetime),
            ("d_per_tx", 11_400.0 / 5.0),
            ("w_per_tx", 10_500.0 / 5.0),
        ];
        // A is not a real address prefix, so the type code is "other".
        assert_eq!(f.get("type"), 4.0);
        for (name, want) in expect {
            let got = f.get(name);
            assert!((got - want).abs() < 1e-9, "{name}: got {got}, want {want}");
        }
    }

    #[test]
    fn normalizer_basics() {
        let n = Normalizer::fit(&[vec![0.0, 3.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(n.mean, vec![1.0, 3.0]);
        assert_eq!(n.std, vec![1.0, 0.0]);
        assert_eq!(n.transform(&[0.0, 3.0]).unwrap(), vec![-1.0, 0.0]);
        assert_eq!(n.transform(&[2.0, 7.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            Normalizer::fit(&[vec![1.0]]),
            Err(ClassifierError::InsufficientData(_))
        ));
    }

    #[test]
    fn mi_perfect_and_constant() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 2) as f64, 7.0]).collect();
        let labels: Vec<bool> = (0..100).map(|i| i % 2 == 1).collect();
        let r = rank_features_mi(&rows, &labels, &["copy", "const"], 20).unwrap();
        assert_eq!(r[0].0, "copy");
        assert!((r[0].1 - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(r[1].1, 0.0);
    }

    proptest! {
        #[test]
        fn normalized_columns_are_standard(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..100)
                .map(|_| (0..42).map(|_| rng.gen_range(-1e3..1e3)).collect())
                .collect();
            let n = Normalizer::fit(&rows).unwrap();
            let z = n.transform_all(&rows).unwrap();
            for j in 0..42 {
                let mean: f64 = z.iter().map(|r| r[j]).sum::<f64>() / 100.0;
                let var: f64 = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 100.0;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn mi_bounds(xs in proptest::collection::vec(0u8..6, 10..200), seed in any::<u64>()) {
            let labels: Vec<bool> = xs.iter().enumerate().map(|(i, x)| (u64::from(*x) ^ seed ^ i as u64) & 1 == 1).collect();
            let col: Vec<f64> = xs.iter().map(|&x| f64::from(x)).collect();
            let bins = equal_frequency_bins(&col, 20);
            let y: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
            let mi = mutual_information(&bins, &y);
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= discrete_entropy(&bins).min(discrete_entropy(&y)) + 1e-12);
        }

        #[test]
        fn amounts_scale_and_counts_do_not(k in 2u64..50, v1 in 1_000u64..100_000, v2 in 1_000u64..100_000) {
            let build = |m: u64| {
                let txs = vec![
                    Transaction::new(txid(1), 1, 0, &[], &[("A", v1 * m)]),
                    Transaction::new(txid(2), 2, 7_200, &[("A", v1 * m)], &[("B", (v1 / 2) * m), ("A", (v1 / 4) * m)]),
                    Transaction::new(txid(3), 3, 90_000, &[("C", v2 * m)], &[("A", (v2 / 3) * m)]),
                ];
                ChainStore::build(txs, &IngestOptions::default()).unwrap()
            };
            let base = extract_features(&build(1), "A");
            let scaled = extract_features(&build(k), "A");
            for (i, name) in FEATURE_NAMES.iter().enumerate() {
                if AMOUNT_FEATURES.contains(name) {
                    let want = base.0[i] * k as f64;
                    prop_assert!((scaled.0[i] - want).abs() <= 1e-9 * want.abs().max(1.0), "{}", name);
                } else {
                    prop_assert_eq!(scaled.0[i], base.0[i], "{}", name);
                }
            }
        }

        #[test]
        fn feature_invariants(values in proptest::collection::vec(1u64..1_000_000, 1..12)) {
            let mut txs = vec![Transaction::new(txid(0), 0, 0, &[], &[("A", values.iter().sum::<u64>() * 2)])];
            let mut bal = values.iter().sum::<u64>() * 2;
            for (i, v) in values.iter().enumerate() {
                let tx = if i % 2 == 0 {
                    bal -= v;
                    Transaction::new(txid(i as u32 + 1), i as u64 + 1, i as i64 * 5_000, &[("A", bal + v)], &[("A", bal), ("Z", *v)])
                } else {
                    bal += v;
                    Transaction::new(txid(i as u32 + 1), i as u64 + 1, i as i64 * 5_000, &[("Y", *v)], &[("A", *v)])
                };
                txs.push(tx);
            }
            let store = ChainStore::build(txs, &IngestOptions::default()).unwrap();
            let f = extract_features(&store, "A");
            prop_assert_eq!(f.get("deposited") - f.get("withdrawn"), f.get("balance"));
            prop_assert_eq!(f.get("txes"), store.tx_indices("A").len() as f64);
            for (i, v) in f.0.iter().enumerate() {
                prop_assert!(v.is_finite() && *v >= 0.0, "{}", FEATURE_NAMES[i]);
            }
        }
    }
}
