//! Per-family C&C signaling oracles.
//!
//! Each oracle looks only at one address's transactions and answers whether
//! they show the family's signaling behaviour, together with the decoded
//! payloads as evidence.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use serde::{Deserialize, Serialize};

use crate::chain::{tx_fee, ChainStore, SlotTarget, Transaction};

/// Minimum payload length, in hex characters, for a Glupteba candidate.
pub const GLUPTEBA_MIN_HEX: usize = 56;

/// Maximum delay between the two deposits of a Pony value pair.
pub const PONY_MAX_PAIR_SECONDS: i64 = 3600;

/// Pony's decision threshold on `2·|ips| / |deposits|`.
pub const PONY_RATIO_THRESHOLD: f64 = 0.5;

/// Subtype given to oracle-detected addresses.
pub const SIGNALING_SUBTYPE: &str = "C&C signaling";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    /// Decoded domain label, domain or IP.
    pub payload: String,
    pub txids: Vec<String>,
    pub time: i64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleResult {
    pub is_signaling: bool,
    pub evidence: Vec<Evidence>,
    /// Pony only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

pub trait Oracle {
    /// Family name the oracle was registered under.
    fn family(&self) -> &str;
    fn check(&self, store: &ChainStore, address: &str) -> OracleResult;
}

fn out_to(tx: &Transaction, i: usize) -> Option<&str> {
    tx.outputs.get(i).and_then(|s| s.address())
}

/// Cerber: the address sends its whole balance to a fresh temporary address
/// whose only activity is returning the amount minus the return fee. The
/// temporary address's first six characters carry a domain label.
pub fn cerber_oracle(store: &ChainStore, address: &str) -> OracleResult {
    let mut res = OracleResult::default();
    for &ti in store.withdrawal_indices(address) {
        let tx = store.tx(ti);
        if !(tx.inputs.len() == 1 && tx.outputs.len() == 1) {
            continue;
        }
        let Some(o) = out_to(tx, 0) else { continue };
        let n_with = store.withdrawal_indices(o).len();
        let n_dep = store.deposit_indices(o).len();
        if !(n_with == 1 && n_dep == 1) {
            continue;
        }
        let tx_r = store.tx(store.withdrawal_indices(o)[0]);
        if !(tx_r.inputs.len() == 1 && tx_r.outputs.len() == 1) {
            continue;
        }
        if out_to(tx_r, 0) != Some(address) {
            continue;
        }
        let Ok(fee) = tx_fee(tx_r) else { continue };
        let r_val = fee + tx_r.output_value();
        if tx.output_value() == r_val {
            res.is_signaling = true;
            res.evidence.push(Evidence {
                payload: o.chars().take(6).collect(),
                txids: alloc::vec![tx.txid.clone(), tx_r.txid.clone()],
                time: tx_r.time,
            });
        }
    }
    res
}

/// IPv4 address as four octets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ipv4(pub [u8; 4]);

impl Ipv4 {
    pub fn to_u32(self) -> u32 {
        u32::from_be_bytes(self.0)
    }
}

impl fmt::Display for Ipv4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a}.{b}.{c}.{d}")
    }
}

/// Turns a pair of deposit values into an IPv4 address.
pub trait IpCodec {
    fn decode(&self, v1: u64, v2: u64) -> Option<Ipv4>;
}

/// Two big-endian octets from the low 16 bits of each value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Low16Codec;

impl IpCodec for Low16Codec {
    fn decode(&self, v1: u64, v2: u64) -> Option<Ipv4> {
        Some(Ipv4([
            (v1 >> 8 & 0xff) as u8,
            (v1 & 0xff) as u8,
            (v2 >> 8 & 0xff) as u8,
            (v2 & 0xff) as u8,
        ]))
    }
}

pub fn decode_ip(v1: u64, v2: u64) -> Ipv4 {
    Low16Codec.decode(v1, v2).expect("low-16 codec always decodes")
}

const NON_PUBLIC: [(u32, u32); 9] = [
    (0x0000_0000, 8),
    (0x0a00_0000, 8),
    (0x6440_0000, 10),
    (0x7f00_0000, 8),
    (0xa9fe_0000, 16),
    (0xac10_0000, 12),
    (0xc0a8_0000, 16),
    (0xe000_0000, 4),
    (0xf000_0000, 4),
];

/// False for unspecified, private, shared, loopback, link-local, multicast
/// and reserved ranges.
pub fn is_public(ip: Ipv4) -> bool {
    let v = ip.to_u32();
    !NON_PUBLIC
        .iter()
        .any(|&(net, bits)| v >> (32 - bits) == net >> (32 - bits))
}

fn value_to(tx: &Transaction, address: &str) -> u64 {
    tx.outputs
        .iter()
        .filter(|s| s.address() == Some(address))
        .map(|s| s.value)
        .sum()
}

/// Pony/Skidmap: consecutive small deposits less than an hour apart whose
/// values encode a public IPv4 address.
pub fn pony_oracle(store: &ChainStore, address: &str, codec: &dyn IpCodec) -> OracleResult {
    let mut res = OracleResult::default();
    let mut ips: Vec<Evidence> = Vec::new();
    let mut tx1: Option<(&Transaction, u64)> = None;
    for ti in store.tx_indices(address) {
        let tx = store.tx(ti);
        if !tx.has_output(address) {
            tx1 = None;
            continue;
        }
        if !(tx.inputs.len() <= 3 && tx.outputs.len() <= 2) {
            tx1 = None;
            continue;
        }
        let value = value_to(tx, address);
        match tx1 {
            Some((first, first_value)) => {
                let delta = tx.time - first.time;
                if delta <= PONY_MAX_PAIR_SECONDS {
                    if let Some(ip) = codec.decode(first_value, value) {
                        if is_public(ip) {
                            ips.push(Evidence {
                                payload: ip.to_string(),
                                txids: alloc::vec![first.txid.clone(), tx.txid.clone()],
                                time: tx.time,
                            });
                        }
                    }
                }
                tx1 = None;
            }
            None => tx1 = Some((tx, value)),
        }
    }
    let deposits = store.deposit_indices(address).len();
    let ratio = if deposits == 0 {
        0.0
    } else {
        2.0 * ips.len() as f64 / deposits as f64
    };
    res.is_signaling = deposits > 0 && ratio >= PONY_RATIO_THRESHOLD;
    res.ratio = Some(ratio);
    res.evidence = ips;
    res
}

/// Checks a decrypted plaintext against a permissive hostname pattern:
/// dot-separated labels of letters, digits, `-` and `_`, at least two labels.
pub fn looks_like_hostname(s: &str) -> bool {
    if s.is_empty() || s.len() > 253 {
        return false;
    }
    let labels: Vec<&str> = s.split('.').collect();
    labels.len() >= 2
        && labels.iter().all(|l| {
            !l.is_empty()
                && l.len() <= 63
                && l.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
        })
}

/// Decrypts an `iv ‖ ciphertext ‖ tag` payload.
pub fn aes_gcm_open(key: &[u8; 32], payload: &[u8]) -> Option<Vec<u8>> {
    if payload.len() < 28 {
        return None;
    }
    let (iv, rest) = payload.split_at(12);
    let (ct, tag) = rest.split_at(rest.len() - 16);
    let cipher = Aes256Gcm::new(key.into());
    let mut buf = ct.to_vec();
    cipher
        .decrypt_in_place_detached(Nonce::from_slice(iv), b"", &mut buf, Tag::from_slice(tag))
        .ok()?;
    Some(buf)
}

/// Encrypts `plaintext` into the `iv ‖ ciphertext ‖ tag` layout, hex
/// encoded.
pub fn aes_gcm_seal_hex(key: &[u8; 32], iv: &[u8; 12], plaintext: &[u8]) -> String {
    let cipher = Aes256Gcm::new(key.into());
    let mut buf = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(iv), b"", &mut buf)
        .expect("plaintext length within GCM limits");
    let mut out = Vec::with_capacity(28 + buf.len());
    out.extend_from_slice(iv);
    out.extend_from_slice(&buf);
    out.extend_from_slice(&tag);
    hex::encode(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GluptebaOptions {
    /// Count any authenticated decryption, without the hostname check.
    pub strict: bool,
}

/// Glupteba: a data output of at least 56 hex characters sent by the address
/// that decrypts under one of the known AES-GCM-256 keys.
pub fn glupteba_oracle(
    store: &ChainStore,
    address: &str,
    keys: &[[u8; 32]],
    options: &GluptebaOptions,
) -> OracleResult {
    let mut res = OracleResult::default();
    for &ti in store.withdrawal_indices(address) {
        let tx = store.tx(ti);
        for o in &tx.outputs {
            let SlotTarget::Data(data) = &o.target else { continue };
            if data.len() < GLUPTEBA_MIN_HEX {
                continue;
            }
            let bytes = match hex::decode(data) {
                Ok(b) => b,
                Err(e) => {
                    res.warnings
                        .push(format!("{} output {}: malformed hex ({e})", tx.txid, o.index));
                    continue;
                }
            };
            for key in keys {
                let Some(plain) = aes_gcm_open(key, &bytes) else { continue };
                let text = String::from_utf8_lossy(&plain).into_owned();
                if !options.strict && !(core::str::from_utf8(&plain).is_ok() && looks_like_hostname(&text)) {
                    res.warnings.push(format!(
                        "{} output {}: decrypted payload is not a hostname",
                        tx.txid, o.index
                    ));
                    continue;
                }
                res.is_signaling = true;
                res.evidence.push(Evidence {
                    payload: text,
                    txids: alloc::vec![tx.txid.clone()],
                    time: tx.time,
                });
                break;
            }
        }
    }
    res
}

pub struct CerberOracle;

impl Oracle for CerberOracle {
    fn family(&self) -> &str {
        "cerber"
    }

    fn check(&self, store: &ChainStore, address: &str) -> OracleResult {
        cerber_oracle(store, address)
    }
}

pub struct PonyOracle {
    pub family: String,
    pub codec: Box<dyn IpCodec + Send + Sync>,
}

impl Oracle for PonyOracle {
    fn family(&self) -> &str {
        &self.family
    }

    fn check(&self, store: &ChainStore, address: &str) -> OracleResult {
        pony_oracle(store, address, self.codec.as_ref())
    }
}

pub struct GluptebaOracle {
    pub keys: Vec<[u8; 32]>,
    pub options: GluptebaOptions,
}

impl Oracle for GluptebaOracle {
    fn family(&self) -> &str {
        "glupteba"
    }

    fn check(&self, store: &ChainStore, address: &str) -> OracleResult {
        glupteba_oracle(store, address, &self.keys, &self.options)
    }
}

/// Oracle parameters as stored in a parameter file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OracleParams {
    /// Glupteba keys, 64 hex characters each.
    #[serde(default)]
    pub keys: Vec<String>,
    /// Pony codec name; only `low16` is built in.
    #[serde(default)]
    pub codec: Option<String>,
    /// Glupteba: skip the hostname check.
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleConfigError {
    UnknownFamily(String),
    UnknownCodec(String),
    BadKey(String),
    MissingKeys,
}

impl fmt::Display for OracleConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleConfigError::UnknownFamily(s) => write!(f, "no oracle for family {s:?}"),
            OracleConfigError::UnknownCodec(s) => write!(f, "unknown IP codec {s:?}"),
            OracleConfigError::BadKey(s) => write!(f, "key {s:?} is not 32 bytes of hex"),
            OracleConfigError::MissingKeys => f.write_str("glupteba oracle needs at least one key"),
        }
    }
}

pub fn parse_key(s: &str) -> Result<[u8; 32], OracleConfigError> {
    let v = hex::decode(s.trim()).map_err(|_| OracleConfigError::BadKey(s.to_string()))?;
    v.try_into().map_err(|_| OracleConfigError::BadKey(s.to_string()))
}

/// Family names with a registered oracle. Skidmap reuses the Pony oracle.
pub const FAMILIES: [&str; 4] = ["cerber", "glupteba", "pony", "skidmap"];

/// Builds the oracle registered for `family`.
pub fn make_oracle(
    family: &str,
    params: &OracleParams,
) -> Result<Box<dyn Oracle + Send + Sync>, OracleConfigError> {
    match family {
        "cerber" => Ok(Box::new(CerberOracle)),
        "pony" | "skidmap" => {
            match params.codec.as_deref() {
                None | Some("low16") => {}
                Some(other) => return Err(OracleConfigError::UnknownCodec(other.to_string())),
            }
            Ok(Box::new(PonyOracle {
                family: family.to_string(),
                codec: Box::new(Low16Codec),
            }))
        }
        "glupteba" => {
            if params.keys.is_empty() {
                return Err(OracleConfigError::MissingKeys);
            }
            let keys = params
                .keys
                .iter()
                .map(|k| parse_key(k))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Box::new(GluptebaOracle {
                keys,
                options: GluptebaOptions {
                    strict: params.strict,
                },
            }))
        }
        other => Err(OracleConfigError::UnknownFamily(other.to_string())),
    }
}
