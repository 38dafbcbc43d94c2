//! Oracle selection: `family[:params.json]` flags and registry files mapping
//! family names to an oracle implementation plus a parameter file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use txgraph_core::chain::ChainStore;
use txgraph_core::oracles::{make_oracle, Oracle, OracleParams, OracleResult};

use crate::error::{DataError, Result};
use crate::jsonio::read_json;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    /// Oracle implementation id (`cerber`, `pony`, `glupteba`).
    pub oracle: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OracleRegistry {
    pub families: BTreeMap<String, RegistryEntry>,
}

/// A family and the oracle that checks it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleSpec {
    pub family: String,
    pub oracle: String,
    pub params: Option<PathBuf>,
}

/// `family` or `family:params-file`; the oracle id is the family name.
pub fn parse_oracle_flag(s: &str) -> std::result::Result<OracleSpec, String> {
    let (family, params) = match s.split_once(':') {
        Some((f, p)) if !p.is_empty() => (f, Some(PathBuf::from(p))),
        Some((f, _)) => (f, None),
        None => (s, None),
    };
    if family.is_empty() {
        return Err(format!("oracle flag {s:?} has no family"));
    }
    Ok(OracleSpec {
        family: family.to_ascii_lowercase(),
        oracle: family.to_ascii_lowercase(),
        params,
    })
}

/// Registry entries, parameter paths resolved against the registry's folder.
pub fn read_registry(path: &Path) -> Result<Vec<OracleSpec>> {
    let reg: OracleRegistry = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(reg
        .families
        .into_iter()
        .map(|(family, e)| OracleSpec {
            family,
            oracle: e.oracle,
            params: e.params.map(|p| if p.is_absolute() { p } else { base.join(p) }),
        })
        .collect())
}

struct Named {
    family: String,
    inner: Box<dyn Oracle + Send + Sync>,
}

impl Oracle for Named {
    fn family(&self) -> &str {
        &self.family
    }

    fn check(&self, store: &ChainStore, address: &str) -> OracleResult {
        self.inner.check(store, address)
    }
}

pub fn build_oracle(spec: &OracleSpec) -> Result<Box<dyn Oracle + Send + Sync>> {
    let params: OracleParams = match &spec.params {
        Some(p) => read_json(p)?,
        None => OracleParams::default(),
    };
    let inner = make_oracle(&spec.oracle, &params).map_err(|e| {
        let msg = format!("oracle for family {}: {e}", spec.family);
        match &spec.params {
            Some(p) => DataError::at(p, msg),
            None => DataError::new(msg),
        }
    })?;
    Ok(Box::new(Named {
        family: spec.family.clone(),
        inner,
    }))
}
