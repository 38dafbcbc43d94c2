//! Graph JSON export and import.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use txgraph_core::explorer::{
    address_node_id, tx_node_id, AddrKind, AddressNode, EdgeAttrs, EdgeDir, EdgeKey, Exploration, ExplorationGraph,
    ExplorationStats, ExploreStatus, OracleHit, TxNode,
};
use txgraph_core::ResolvedTag;

use crate::error::{DataError, Result};
use crate::jsonio::{read_json, write_json};
use crate::tables::{format_cluster, parse_cluster};

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Address,
    Tx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addr_kind: Option<AddrKind>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<String>,
    /// Addresses: value received over edges in the graph. Transactions: total
    /// output value.
    pub total_btc: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub seed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<ResolvedTag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oracle: Vec<OracleHit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satoshis: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
    pub txid: String,
    /// First slot index; all slots are in `slots`.
    pub slot: u32,
    pub slots: Vec<u32>,
    pub satoshis: u64,
}

/// Exploration statistics as exported. Runtime is left out so the graph file
/// is reproducible; it is recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsDoc {
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
    pub status: ExploreStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl From<&ExplorationStats> for StatsDoc {
    fn from(s: &ExplorationStats) -> Self {
        StatsDoc {
            seeds: s.seeds,
            seeds_in_online_wallets: s.seeds_in_online_wallets,
            explored_seeds: s.explored_seeds,
            components: s.components,
            addresses: s.addresses,
            txes: s.txes,
            unexplored: s.unexplored,
            tagged: s.tagged,
            classifier_exchanges: s.classifier_exchanges,
            classifier_calls: s.classifier_calls,
            status: s.status,
            warnings: s.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub version: u32,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
    pub stats: StatsDoc,
}

fn btc(sat: u64) -> f64 {
    sat as f64 / 1e8
}

impl GraphDoc {
    pub fn from_exploration(e: &Exploration) -> Self {
        Self::new(&e.graph, StatsDoc::from(&e.stats))
    }

    pub fn new(g: &ExplorationGraph, stats: StatsDoc) -> Self {
        let mut received: BTreeMap<&str, u64> = BTreeMap::new();
        for (k, a) in &g.edges {
            if k.dir == EdgeDir::Out {
                *received.entry(k.address.as_str()).or_default() += a.satoshis;
            }
        }
        let mut nodes = Vec::with_capacity(g.addresses.len() + g.txs.len());
        for (addr, n) in &g.addresses {
            let mut tags: Vec<String> = n.tag.iter().flat_map(|t| t.keys()).map(|k| k.to_string()).collect();
            tags.extend(n.oracle.iter().map(|h| h.tag_key().to_string()));
            nodes.push(NodeDoc {
                id: address_node_id(addr),
                kind: NodeKind::Address,
                addr_kind: Some(n.kind),
                tags,
                cluster: Some(format_cluster(n.cluster)),
                total_btc: btc(received.get(addr.as_str()).copied().unwrap_or(0)),
                seed: n.seed,
                tag: n.tag.clone(),
                oracle: n.oracle.clone(),
                height: None,
                time: None,
                satoshis: None,
            });
        }
        for (txid, t) in &g.txs {
            nodes.push(NodeDoc {
                id: tx_node_id(txid),
                kind: NodeKind::Tx,
                addr_kind: None,
                tags: Vec::new(),
                cluster: None,
                total_btc: btc(t.satoshis),
                seed: false,
                tag: None,
                oracle: Vec::new(),
                height: Some(t.height),
                time: Some(t.time),
                satoshis: Some(t.satoshis),
            });
        }
        let edges = g
            .edges
            .iter()
            .map(|(k, a)| {
                let (an, tn) = (address_node_id(&k.address), tx_node_id(&k.txid));
                let (from, to) = match k.dir {
                    EdgeDir::In => (an, tn),
                    EdgeDir::Out => (tn, an),
                };
                EdgeDoc {
                    from,
                    to,
                    txid: k.txid.clone(),
                    slot: a.slots.first().copied().unwrap_or(0),
                    slots: a.slots.clone(),
                    satoshis: a.satoshis,
                }
            })
            .collect();
        GraphDoc {
            version: GRAPH_FORMAT_VERSION,
            nodes,
            edges,
            stats,
        }
    }

    /// Rebuilds the in-memory graph.
    pub fn to_graph(&self) -> std::result::Result<ExplorationGraph, String> {
        let mut g = ExplorationGraph::default();
        for n in &self.nodes {
            match n.kind {
                NodeKind::Address => {
                    let addr = n.id.strip_prefix("a:").ok_or_else(|| format!("bad address node id {:?}", n.id))?;
                    let cluster = n
                        .cluster
                        .as_deref()
                        .and_then(parse_cluster)
                        .ok_or_else(|| format!("node {} has no valid cluster", n.id))?;
                    g.addresses.insert(
                        addr.to_string(),
                        AddressNode {
                            kind: n.addr_kind.ok_or_else(|| format!("node {} has no addr_kind", n.id))?,
                            seed: n.seed,
                            tag: n.tag.clone(),
                            cluster,
                            oracle: n.oracle.clone(),
                        },
                    );
                }
                NodeKind::Tx => {
                    let txid = n.id.strip_prefix("t:").ok_or_else(|| format!("bad tx node id {:?}", n.id))?;
                    g.txs.insert(
                        txid.to_string(),
                        TxNode {
                            satoshis: n.satoshis.unwrap_or_default(),
                            height: n.height.unwrap_or_default(),
                            time: n.time.unwrap_or_default(),
                        },
                    );
                }
            }
        }
        for e in &self.edges {
            let (address, dir) = if let Some(a) = e.from.strip_prefix("a:") {
                (a, EdgeDir::In)
            } else if let Some(a) = e.to.strip_prefix("a:") {
                (a, EdgeDir::Out)
            } else {
                return Err(format!("edge {} -> {} has no address end", e.from, e.to));
            };
            if !g.addresses.contains_key(address) || !g.txs.contains_key(&e.txid) {
                return Err(format!("edge {} -> {} references a missing node", e.from, e.to));
            }
            g.edges.insert(
                EdgeKey {
                    address: address.to_string(),
                    txid: e.txid.clone(),
                    dir,
                },
                EdgeAttrs {
                    slots: e.slots.clone(),
                    satoshis: e.satoshis,
                },
            );
        }
        Ok(g)
    }
}

pub fn write_graph(path: &Path, e: &Exploration) -> Result<()> {
    write_json(path, &GraphDoc::from_exploration(e))
}

pub fn write_graph_doc(path: &Path, doc: &GraphDoc) -> Result<()> {
    write_json(path, doc)
}

pub fn read_graph(path: &Path) -> Result<(GraphDoc, ExplorationGraph)> {
    let doc: GraphDoc = read_json(path)?;
    if doc.version != GRAPH_FORMAT_VERSION {
        return Err(DataError::at(path, format!("unsupported graph version {}", doc.version)));
    }
    let g = doc.to_graph().map_err(|m| DataError::at(path, m))?;
    Ok((doc, g))
}
