//! JSON Lines transaction files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use txgraph_core::chain::{SlotTarget, TxSlot};
use txgraph_core::{AddrType, ChainError, ChainStore, IngestOptions, Transaction};

use crate::error::{DataError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonIn {
    addr: String,
    value: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonOut {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    addr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<String>,
    value: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonTx {
    txid: String,
    height: u64,
    time: i64,
    coinbase: bool,
    #[serde(rename = "in")]
    inputs: Vec<JsonIn>,
    #[serde(rename = "out")]
    outputs: Vec<JsonOut>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    addr_types: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    equiv: Option<BTreeMap<String, u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<u64>,
}

impl JsonTx {
    fn into_tx(self) -> std::result::Result<Transaction, String> {
        let inputs = self
            .inputs
            .into_iter()
            .enumerate()
            .map(|(i, s)| TxSlot {
                target: SlotTarget::Address(s.addr),
                value: s.value,
                index: i as u32,
            })
            .collect();
        let outputs = self
            .outputs
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let target = match (s.addr, s.data) {
                    (Some(a), None) => SlotTarget::Address(a),
                    (None, Some(d)) => SlotTarget::Data(d),
                    _ => return Err(format!("output {i} needs exactly one of addr and data")),
                };
                Ok(TxSlot {
                    target,
                    value: s.value,
                    index: i as u32,
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut addr_types = BTreeMap::new();
        for (a, t) in self.addr_types.unwrap_or_default() {
            let t = AddrType::parse(&t).ok_or_else(|| format!("unknown address type {t:?} for {a}"))?;
            addr_types.insert(a, t);
        }
        Ok(Transaction {
            txid: self.txid,
            height: self.height,
            time: self.time,
            coinbase: self.coinbase,
            inputs,
            outputs,
            size: self.size,
            weight: self.weight,
            addr_types,
            equiv: self.equiv.unwrap_or_default(),
        })
    }

    fn from_tx(tx: &Transaction) -> Self {
        JsonTx {
            txid: tx.txid.clone(),
            height: tx.height,
            time: tx.time,
            coinbase: tx.coinbase,
            inputs: tx
                .inputs
                .iter()
                .map(|s| JsonIn {
                    addr: s.address().unwrap_or_default().to_string(),
                    value: s.value,
                })
                .collect(),
            outputs: tx
                .outputs
                .iter()
                .map(|s| JsonOut {
                    addr: s.address().map(str::to_string),
                    data: s.data().map(str::to_string),
                    value: s.value,
                })
                .collect(),
            addr_types: (!tx.addr_types.is_empty())
                .then(|| tx.addr_types.iter().map(|(a, t)| (a.clone(), t.as_str().to_string())).collect()),
            equiv: (!tx.equiv.is_empty()).then(|| tx.equiv.clone()),
            size: tx.size,
            weight: tx.weight,
        }
    }
}

/// Parses one transaction line.
pub fn parse_tx_line(line: &str) -> std::result::Result<Transaction, String> {
    let j: JsonTx = serde_json::from_str(line).map_err(|e| e.to_string())?;
    j.into_tx()
}

pub fn tx_to_line(tx: &Transaction) -> String {
    serde_json::to_string(&JsonTx::from_tx(tx)).expect("transaction serializes")
}

/// Reads every transaction of a JSONL file, with 1-based line numbers.
/// Blank lines are skipped.
pub fn read_transactions(path: &Path) -> Result<Vec<(usize, Transaction)>> {
    let f = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DataError::at_line(path, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let tx = parse_tx_line(&line).map_err(|r| DataError::at_line(path, i + 1, r))?;
        out.push((i + 1, tx));
    }
    Ok(out)
}

/// Reads and indexes a chain file. The whole file is rejected on the first
/// bad line.
pub fn read_chain(path: &Path, options: &IngestOptions) -> Result<ChainStore> {
    let numbered = read_transactions(path)?;
    let lines: Vec<usize> = numbered.iter().map(|(l, _)| *l).collect();
    let txs: Vec<Transaction> = numbered.into_iter().map(|(_, t)| t).collect();
    let ids: Vec<String> = txs.iter().map(|t| t.txid.clone()).collect();
    ChainStore::build(txs, options).map_err(|e| {
        let line = match &e {
            ChainError::InvalidTransaction { index, .. } => Some(lines[*index]),
            ChainError::DuplicateTxid(t) | ChainError::NonMonotonicTimestamp(t) | ChainError::NegativeFee(t) => {
                ids.iter().rposition(|x| x == t).map(|i| lines[i])
            }
        };
        match line {
            Some(l) => DataError::at_line(path, l, e.to_string()),
            None => DataError::at(path, e.to_string()),
        }
    })
}

pub fn write_transactions(path: &Path, txs: &[Transaction]) -> Result<()> {
    let f = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for tx in txs {
        writeln!(w, "{}", tx_to_line(tx)).map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}
