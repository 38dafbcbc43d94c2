//! File format round trips.

use proptest::prelude::*;
use txgraph::chainio::{parse_tx_line, read_chain, read_transactions, tx_to_line, write_transactions};
use txgraph::graphio::{read_graph, write_graph, GraphDoc};
use txgraph::model::{load_model, save_model};
use txgraph::tables::{
    parse_address_list, read_clusters, read_features, read_tags, write_clusters, write_features, write_tags,
};
use txgraph_core::classifier::{ExchangeModel, ForestParams};
use txgraph_core::explorer::{explore, ExplorationConfig, NoClock};
use txgraph_core::features::{extract_features, FEATURE_NAMES};
use txgraph_core::fixtures::{fig2, random_chain};
use txgraph_core::tags::Trust;
use txgraph_core::{Category, ChainStore, ClusterMap, IngestOptions, TagRecord};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chain_lines_round_trip(seed in any::<u64>(), n in 1usize..200) {
        for tx in random_chain(seed, n, 60) {
            prop_assert_eq!(parse_tx_line(&tx_to_line(&tx)).unwrap(), tx);
        }
    }

    #[test]
    fn address_lists_ignore_comments_and_blank_lines(addrs in proptest::collection::vec("[a-z0-9]{1,12}", 0..20)) {
        let mut text = String::from("# header\n\n");
        for a in &addrs {
            text.push_str(&format!("  {a} # note\n"));
        }
        let mut want: Vec<String> = Vec::new();
        for a in &addrs {
            if !want.contains(a) {
                want.push(a.clone());
            }
        }
        prop_assert_eq!(parse_address_list(&text), want);
    }
}

#[test]
fn chain_file_round_trip_keeps_optional_fields() {
    let d = tempfile::tempdir().unwrap();
    let mut txs = random_chain(4, 50, 30);
    txs[0].addr_types.insert("r1".into(), txgraph_core::AddrType::parse("segwit").unwrap());
    txs[0].equiv.insert("r1".into(), 2);
    txs[1] = txs[1].clone().with_data_output("ab".repeat(30), 0);
    let p = d.path().join("c.jsonl");
    write_transactions(&p, &txs).unwrap();
    let back: Vec<_> = read_transactions(&p).unwrap().into_iter().map(|(_, t)| t).collect();
    assert_eq!(back, txs);
    let store = read_chain(&p, &IngestOptions::default()).unwrap();
    assert_eq!(store.len(), 50);
}

#[test]
fn unknown_fields_are_rejected() {
    let line = format!(
        r#"{{"txid":"{}","height":1,"time":0,"coinbase":true,"in":[],"out":[{{"addr":"A","value":1}}],"fee":3}}"#,
        "a".repeat(64)
    );
    assert!(parse_tx_line(&line).unwrap_err().contains("fee"));
    let both = format!(
        r#"{{"txid":"{}","height":1,"time":0,"coinbase":true,"in":[],"out":[{{"addr":"A","data":"00","value":1}}]}}"#,
        "a".repeat(64)
    );
    assert!(parse_tx_line(&both).is_err());
}

#[test]
fn tags_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let mut a = TagRecord::new("1Ex", Category::Exchange, "binance").with_subtype("hot wallet");
    a.urls = vec!["https://a".into(), "https://b".into()];
    let b = TagRecord::new("1Rw", Category::Ransomware, "cerber").with_trust(Trust::Crowd);
    let p = d.path().join("t.csv");
    write_tags(&p, &[a.clone(), b.clone()]).unwrap();
    assert!(std::fs::read_to_string(&p).unwrap().starts_with("address,class,category,label,subtype,urls,trust\n"));
    assert_eq!(read_tags(&p).unwrap(), vec![a, b]);
}

#[test]
fn clusters_and_features_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let store = ChainStore::build(random_chain(8, 300, 80), &IngestOptions::default()).unwrap();
    let clusters = ClusterMap::build(&store);
    let p = d.path().join("c.csv");
    write_clusters(&p, &clusters).unwrap();
    let rows = read_clusters(&p).unwrap();
    assert_eq!(rows.len(), store.address_count());
    assert!(rows.windows(2).all(|w| w[0].0 < w[1].0));
    for (a, c) in &rows {
        assert_eq!(clusters.cluster_of(a), *c);
    }

    let addrs: Vec<&str> = store.addresses().take(25).collect();
    let fv: Vec<_> = addrs.iter().map(|a| extract_features(&store, a)).collect();
    let p = d.path().join("f.csv");
    write_features(&p, &fv).unwrap();
    let header = std::fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, FEATURE_NAMES.join(","));
    let back = read_features(&p).unwrap();
    for (r, v) in back.iter().zip(&fv) {
        assert_eq!(r.as_slice(), v.as_slice());
    }
}

#[test]
fn graph_json_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let f = fig2();
    let e = explore(&f.store, &f.clusters, &f.tagdb, None, &f.seeds, &ExplorationConfig::default(), &NoClock).unwrap();
    let p = d.path().join("g.json");
    write_graph(&p, &e).unwrap();
    let (doc, g) = read_graph(&p).unwrap();
    assert_eq!(g, e.graph);
    assert_eq!(doc, GraphDoc::from_exploration(&e));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
    let node = &v["nodes"][0];
    for k in ["id", "kind", "addr_kind", "tags", "cluster", "total_btc"] {
        assert!(node.get(k).is_some(), "node lacks {k}");
    }
    let edge = &v["edges"][0];
    for k in ["from", "to", "txid", "slot", "satoshis"] {
        assert!(edge.get(k).is_some(), "edge lacks {k}");
    }
    assert!(v["stats"].get("runtime_us").is_none());
}

#[test]
fn model_round_trip_and_version_check() {
    let d = tempfile::tempdir().unwrap();
    let store = ChainStore::build(random_chain(12, 400, 100), &IngestOptions::default()).unwrap();
    let rows: Vec<Vec<f64>> = store.addresses().map(|a| extract_features(&store, a).as_slice().to_vec()).collect();
    let labels: Vec<bool> = (0..rows.len()).map(|i| i % 3 == 0).collect();
    let params = ForestParams {
        n_trees: 15,
        ..ForestParams::default()
    };
    let m = ExchangeModel::train_forest(&rows, &labels, &params, 3).unwrap();
    let p = d.path().join("m.json");
    save_model(&p, &m).unwrap();
    let back = load_model(&p).unwrap();
    assert_eq!(back, m);
    for r in &rows {
        assert_eq!(back.predict(r).unwrap(), m.predict(r).unwrap());
    }

    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
    v["version"] = serde_json::json!(999);
    std::fs::write(&p, serde_json::to_vec(&v).unwrap()).unwrap();
    assert!(load_model(&p).unwrap_err().to_string().contains("version"));
}
