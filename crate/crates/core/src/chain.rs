//! Immutable, indexed transaction store.
//!
//! The store is built once from a list of [`Transaction`]s and then only
//! read. Every address gets a deposit list (transactions where it occupies an
//! output slot) and a withdrawal list (transactions where it occupies an input
//! slot), both ordered by block height and then by position in the input.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ChainError;

/// Seconds in a UTC day.
pub const DAY_SECONDS: i64 = 86_400;

/// Address script type, as far as the algorithms care.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AddrType {
    PubKeyHash,
    ScriptHash,
    Multisig,
    Segwit,
    Other,
}

impl AddrType {
    pub const ALL: [AddrType; 5] = [
        AddrType::PubKeyHash,
        AddrType::ScriptHash,
        AddrType::Multisig,
        AddrType::Segwit,
        AddrType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AddrType::PubKeyHash => "pubkeyhash",
            AddrType::ScriptHash => "scripthash",
            AddrType::Multisig => "multisig",
            AddrType::Segwit => "segwit",
            AddrType::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Fixed integer encoding used by the feature extractor.
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Best-effort type from the address prefix, used when the input does not
    /// declare one.
    pub fn infer(address: &str) -> Self {
        if address.starts_with("bc1") || address.starts_with("tb1") {
            AddrType::Segwit
        } else if address.starts_with('1') {
            AddrType::PubKeyHash
        } else if address.starts_with('3') {
            AddrType::ScriptHash
        } else {
            AddrType::Other
        }
    }
}

impl fmt::Display for AddrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a slot pays to or spends from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotTarget {
    Address(String),
    /// OP_RETURN-style payload, lowercase hex as found in the input. Not
    /// validated here; consumers decide how to treat malformed hex.
    Data(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxSlot {
    pub target: SlotTarget,
    pub value: u64,
    pub index: u32,
}

impl TxSlot {
    pub fn address(&self) -> Option<&str> {
        match &self.target {
            SlotTarget::Address(a) => Some(a),
            SlotTarget::Data(_) => None,
        }
    }

    pub fn data(&self) -> Option<&str> {
        match &self.target {
            SlotTarget::Data(d) => Some(d),
            SlotTarget::Address(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub txid: String,
    pub height: u64,
    pub time: i64,
    pub coinbase: bool,
    pub inputs: Vec<TxSlot>,
    pub outputs: Vec<TxSlot>,
    /// Optional serialized size in bytes.
    pub size: Option<u64>,
    /// Optional weight units.
    pub weight: Option<u64>,
    /// Address types declared alongside this transaction.
    pub addr_types: BTreeMap<String, AddrType>,
    /// Equivalent-address counts declared alongside this transaction.
    pub equiv: BTreeMap<String, u32>,
}

impl Transaction {
    /// Convenience constructor for address-only slots; indices are assigned
    /// from positions.
    pub fn new(
        txid: impl Into<String>,
        height: u64,
        time: i64,
        inputs: &[(&str, u64)],
        outputs: &[(&str, u64)],
    ) -> Self {
        let slots = |list: &[(&str, u64)]| {
            list.iter()
                .enumerate()
                .map(|(i, (a, v))| TxSlot {
                    target: SlotTarget::Address((*a).to_string()),
                    value: *v,
                    index: i as u32,
                })
                .collect::<Vec<_>>()
        };
        Transaction {
            txid: txid.into(),
            height,
            time,
            coinbase: inputs.is_empty(),
            inputs: slots(inputs),
            outputs: slots(outputs),
            size: None,
            weight: None,
            addr_types: BTreeMap::new(),
            equiv: BTreeMap::new(),
        }
    }

    /// Appends a data output carrying `hex_payload`.
    pub fn with_data_output(mut self, hex_payload: impl Into<String>, value: u64) -> Self {
        let index = self.outputs.len() as u32;
        self.outputs.push(TxSlot {
            target: SlotTarget::Data(hex_payload.into()),
            value,
            index,
        });
        self
    }

    pub fn input_value(&self) -> u64 {
        self.inputs.iter().map(|s| s.value).sum()
    }

    pub fn output_value(&self) -> u64 {
        self.outputs.iter().map(|s| s.value).sum()
    }

    pub fn has_input(&self, address: &str) -> bool {
        self.inputs.iter().any(|s| s.address() == Some(address))
    }

    pub fn has_output(&self, address: &str) -> bool {
        self.outputs.iter().any(|s| s.address() == Some(address))
    }

    /// Checks the per-transaction invariants. Returns a human-readable reason
    /// on failure.
    pub fn validate(&self) -> Result<(), String> {
        if self.txid.len() != 64
            || !self
                .txid
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err("txid must be 64 lowercase hex characters".into());
        }
        if self.coinbase != self.inputs.is_empty() {
            return Err("coinbase flag must be set exactly when there are no inputs".into());
        }
        for (i, s) in self.inputs.iter().enumerate() {
            if s.index as usize != i {
                return Err("input slot index does not match its position".into());
            }
            match &s.target {
                SlotTarget::Address(a) if !a.is_empty() => {}
                SlotTarget::Address(_) => return Err("empty input address".into()),
                SlotTarget::Data(_) => return Err("inputs cannot carry data".into()),
            }
        }
        for (i, s) in self.outputs.iter().enumerate() {
            if s.index as usize != i {
                return Err("output slot index does not match its position".into());
            }
            if let SlotTarget::Address(a) = &s.target {
                if a.is_empty() {
                    return Err("empty output address".into());
                }
            }
        }
        if !self.coinbase && self.output_value() > self.input_value() {
            return Err("outputs exceed inputs".into());
        }
        Ok(())
    }
}

/// Fee paid by `tx`: inputs minus outputs, zero for coinbase transactions.
pub fn tx_fee(tx: &Transaction) -> Result<u64, ChainError> {
    if tx.coinbase {
        return Ok(0);
    }
    tx.input_value()
        .checked_sub(tx.output_value())
        .ok_or_else(|| ChainError::NegativeFee(tx.txid.clone()))
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Reject transactions whose timestamp decreases with block height.
    pub strict_timestamps: bool,
}

/// Per-address summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressRecord {
    pub address: String,
    pub deposit_txids: Vec<String>,
    pub withdrawal_txids: Vec<String>,
    pub addr_type: AddrType,
    pub equiv_count: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct AddressEntry {
    deposits: Vec<u32>,
    withdrawals: Vec<u32>,
    addr_type: Option<AddrType>,
    equiv: u32,
}

/// Deposit and withdrawal transactions of one address, chronological.
#[derive(Debug, Clone)]
pub struct AddressContext<'a> {
    pub deposits: Vec<&'a Transaction>,
    pub withdrawals: Vec<&'a Transaction>,
    pub record: AddressRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainStore {
    txs: Vec<Transaction>,
    by_txid: BTreeMap<String, u32>,
    addresses: BTreeMap<String, AddressEntry>,
}

impl ChainStore {
    /// Builds all indexes. The whole input is rejected on the first invalid
    /// transaction; the error carries its zero-based position.
    pub fn build(txs: Vec<Transaction>, options: &IngestOptions) -> Result<Self, ChainError> {
        let mut by_txid = BTreeMap::new();
        for (i, tx) in txs.iter().enumerate() {
            tx.validate()
                .map_err(|reason| ChainError::InvalidTransaction { index: i, reason })?;
            if by_txid.insert(tx.txid.clone(), i as u32).is_some() {
                return Err(ChainError::DuplicateTxid(tx.txid.clone()));
            }
        }

        // Chronological order: height, then input position.
        let mut order: Vec<u32> = (0..txs.len() as u32).collect();
        order.sort_by_key(|&i| (txs[i as usize].height, i));

        if options.strict_timestamps {
            let mut last = i64::MIN;
            for &i in &order {
                let tx = &txs[i as usize];
                if tx.time < last {
                    return Err(ChainError::NonMonotonicTimestamp(tx.txid.clone()));
                }
                last = tx.time;
            }
        }

        let mut addresses: BTreeMap<String, AddressEntry> = BTreeMap::new();
        for &i in &order {
            let tx = &txs[i as usize];
            for slot in &tx.inputs {
                if let Some(a) = slot.address() {
                    let e = addresses.entry(a.to_string()).or_default();
                    if e.withdrawals.last() != Some(&i) {
                        e.withdrawals.push(i);
                    }
                }
            }
            for slot in &tx.outputs {
                if let Some(a) = slot.address() {
                    let e = addresses.entry(a.to_string()).or_default();
                    if e.deposits.last() != Some(&i) {
                        e.deposits.push(i);
                    }
                }
            }
        }
        // Declarations apply in input order; the first one wins.
        for tx in &txs {
            for (a, t) in &tx.addr_types {
                let e = addresses.entry(a.clone()).or_default();
                e.addr_type.get_or_insert(*t);
            }
            for (a, n) in &tx.equiv {
                let e = addresses.entry(a.clone()).or_default();
                if e.equiv == 0 {
                    e.equiv = *n;
                }
            }
        }

        Ok(ChainStore {
            txs,
            by_txid,
            addresses,
        })
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    /// Transactions in input order.
    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn tx(&self, index: u32) -> &Transaction {
        &self.txs[index as usize]
    }

    pub fn tx_index(&self, txid: &str) -> Option<u32> {
        self.by_txid.get(txid).copied()
    }

    pub fn get_tx(&self, txid: &str) -> Option<&Transaction> {
        self.tx_index(txid).map(|i| self.tx(i))
    }

    /// All known addresses in lexicographic order.
    pub fn addresses(&self) -> impl Iterator<Item = &str> {
        self.addresses.keys().map(String::as_str)
    }

    pub fn address_count(&self) -> usize {
        self.addresses.len()
    }

    pub fn contains_address(&self, address: &str) -> bool {
        self.addresses.contains_key(address)
    }

    /// Indices of deposit transactions, chronological.
    pub fn deposit_indices(&self, address: &str) -> &[u32] {
        self.addresses
            .get(address)
            .map(|e| e.deposits.as_slice())
            .unwrap_or(&[])
    }

    /// Indices of withdrawal transactions, chronological.
    pub fn withdrawal_indices(&self, address: &str) -> &[u32] {
        self.addresses
            .get(address)
            .map(|e| e.withdrawals.as_slice())
            .unwrap_or(&[])
    }

    /// Union of deposit and withdrawal indices, chronological and
    /// duplicate-free.
    pub fn tx_indices(&self, address: &str) -> Vec<u32> {
        let d = self.deposit_indices(address);
        let w = self.withdrawal_indices(address);
        let mut out = Vec::with_capacity(d.len() + w.len());
        let (mut i, mut j) = (0, 0);
        while i < d.len() || j < w.len() {
            let next = match (d.get(i), w.get(j)) {
                (Some(&a), Some(&b)) => {
                    let ka = self.order_key(a);
                    let kb = self.order_key(b);
                    if ka <= kb {
                        i += 1;
                        if a == b {
                            j += 1;
                        }
                        a
                    } else {
                        j += 1;
                        b
                    }
                }
                (Some(&a), None) => {
                    i += 1;
                    a
                }
                (None, Some(&b)) => {
                    j += 1;
                    b
                }
                (None, None) => unreachable!(),
            };
            out.push(next);
        }
        out
    }

    /// Sort key giving chronological order.
    pub fn order_key(&self, index: u32) -> (u64, u32) {
        (self.txs[index as usize].height, index)
    }

    pub fn addr_type(&self, address: &str) -> AddrType {
        self.addresses
            .get(address)
            .and_then(|e| e.addr_type)
            .unwrap_or_else(|| AddrType::infer(address))
    }

    pub fn equiv_count(&self, address: &str) -> u32 {
        self.addresses.get(address).map(|e| e.equiv).unwrap_or(0)
    }

    /// Deposit and withdrawal transactions of `address`. Unknown addresses
    /// yield empty lists and a zero-activity record.
    pub fn get_address_context(&self, address: &str) -> AddressContext<'_> {
        let deposits: Vec<&Transaction> = self
            .deposit_indices(address)
            .iter()
            .map(|&i| self.tx(i))
            .collect();
        let withdrawals: Vec<&Transaction> = self
            .withdrawal_indices(address)
            .iter()
            .map(|&i| self.tx(i))
            .collect();
        let record = AddressRecord {
            address: address.to_string(),
            deposit_txids: deposits.iter().map(|t| t.txid.clone()).collect(),
            withdrawal_txids: withdrawals.iter().map(|t| t.txid.clone()).collect(),
            addr_type: self.addr_type(address),
            equiv_count: self.equiv_count(address),
        };
        AddressContext {
            deposits,
            withdrawals,
            record,
        }
    }

    /// Consumes the store, returning the transactions in input order.
    pub fn into_transactions(self) -> Vec<Transaction> {
        self.txs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    pub(crate) fn txid(n: u32) -> String {
        format!("{:064x}", n)
    }

    #[test]
    fn single_coinbase() {
        let tx = Transaction::new(txid(1), 0, 1_000, &[], &[("A", 5_000_000_000)]);
        let store = ChainStore::build(vec![tx], &IngestOptions::default()).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.address_count(), 1);
        let ctx = store.get_address_context("A");
        assert_eq!(ctx.record.deposit_txids, vec![txid(1)]);
        assert!(ctx.withdrawals.is_empty());
    }

    #[test]
    fn unknown_address_has_empty_context() {
        let store = ChainStore::build(vec![], &IngestOptions::default()).unwrap();
        let ctx = store.get_address_context("nowhere");
        assert!(ctx.deposits.is_empty() && ctx.withdrawals.is_empty());
        assert_eq!(ctx.record.equiv_count, 0);
        assert_eq!(ctx.record.addr_type, AddrType::Other);
    }

    #[test]
    fn duplicate_txid_rejected() {
        let a = Transaction::new(txid(1), 0, 0, &[], &[("A", 1)]);
        let err = ChainStore::build(vec![a.clone(), a], &IngestOptions::default()).unwrap_err();
        assert_eq!(err, ChainError::DuplicateTxid(txid(1)));
    }

    #[test]
    fn strict_timestamps() {
        let a = Transaction::new(txid(1), 1, 100, &[], &[("A", 1)]);
        let b = Transaction::new(txid(2), 2, 50, &[], &[("B", 1)]);
        let txs = vec![a, b];
        assert!(ChainStore::build(txs.clone(), &IngestOptions::default()).is_ok());
        let err = ChainStore::build(
            txs,
            &IngestOptions {
                strict_timestamps: true,
            },
        )
        .unwrap_err();
        assert_eq!(err, ChainError::NonMonotonicTimestamp(txid(2)));
    }

    #[test]
    fn repeated_slots_collapse_and_order_is_chronological() {
        let cb = Transaction::new(txid(9), 0, 0, &[], &[("A", 100), ("A", 50)]);
        // Listed before `cb` in the input but mined later.
        let spend = Transaction::new(txid(3), 5, 10, &[("A", 100), ("A", 50)], &[("B", 140)]);
        let store = ChainStore::build(vec![spend, cb], &IngestOptions::default()).unwrap();
        assert_eq!(store.get_address_context("A").record.deposit_txids, vec![txid(9)]);
        assert_eq!(store.get_address_context("A").record.withdrawal_txids, vec![txid(3)]);
        assert_eq!(store.tx_indices("A"), vec![1, 0]);
    }

    #[test]
    fn fee_arithmetic() {
        let tx = Transaction::new(txid(1), 1, 0, &[("A", 100_000_000)], &[("B", 99_900_000)]);
        assert_eq!(tx_fee(&tx).unwrap(), 100_000);
        let cb = Transaction::new(txid(2), 0, 0, &[], &[("A", 50)]);
        assert_eq!(tx_fee(&cb).unwrap(), 0);
        let bad = Transaction::new(txid(3), 1, 0, &[("A", 1)], &[("B", 2)]);
        assert_eq!(tx_fee(&bad).unwrap_err(), ChainError::NegativeFee(txid(3)));
    }

    #[test]
    fn validation_reasons() {
        let mut tx = Transaction::new("xyz", 0, 0, &[], &[("A", 1)]);
        assert!(tx.validate().is_err());
        tx.txid = txid(1);
        assert!(tx.validate().is_ok());
        tx.coinbase = false;
        assert!(tx.validate().unwrap_err().contains("coinbase"));
        let over = Transaction::new(txid(2), 0, 0, &[("A", 1)], &[("B", 5)]);
        let err = ChainStore::build(vec![over], &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, ChainError::InvalidTransaction { index: 0, .. }));
    }

    #[test]
    fn declared_types_and_equiv() {
        let mut tx = Transaction::new(txid(1), 0, 0, &[], &[("3abc", 1)]);
        tx.addr_types.insert("3abc".into(), AddrType::Multisig);
        tx.equiv.insert("3abc".into(), 3);
        let store = ChainStore::build(vec![tx], &IngestOptions::default()).unwrap();
        assert_eq!(store.addr_type("3abc"), AddrType::Multisig);
        assert_eq!(store.equiv_count("3abc"), 3);
        assert_eq!(store.addr_type("1xyz"), AddrType::PubKeyHash);
        assert_eq!(store.addr_type("bc1q"), AddrType::Segwit);
    }
}
