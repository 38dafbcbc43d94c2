//! CSV and plain-text tables.

use std::fs;
use std::path::Path;

use txgraph_core::classifier::RocPoint;
use txgraph_core::evaluation::CurvePoint;
use txgraph_core::features::{FeatureVector, FEATURE_NAMES};
use txgraph_core::tags::{ReviewEntry, TagClass, Trust};
use txgraph_core::{Category, ClusterMap, TagRecord};

use crate::error::{DataError, Result};

pub const TAG_HEADER: [&str; 7] = ["address", "class", "category", "label", "subtype", "urls", "trust"];

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DataError::at(path, e.to_string()))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| DataError::at(path, e.to_string()))
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    match e.position() {
        Some(p) => DataError::at_line(path, p.line() as usize, e.to_string()),
        None => DataError::at(path, e.to_string()),
    }
}

fn parse_tag_row(row: &csv::StringRecord) -> std::result::Result<TagRecord, String> {
    let field = |i: usize| row.get(i).unwrap_or("").trim();
    if row.len() < 7 {
        return Err(format!("expected 7 columns, found {}", row.len()));
    }
    let class: TagClass = field(1).parse().map_err(|e: txgraph_core::TagError| e.to_string())?;
    let category: Category = field(2).parse().map_err(|e: txgraph_core::TagError| e.to_string())?;
    let trust: Trust = field(6).parse().map_err(|e: txgraph_core::TagError| e.to_string())?;
    let rec = TagRecord {
        address: field(0).to_string(),
        category,
        label: field(3).to_string(),
        subtype: Some(field(4)).filter(|s| !s.is_empty()).map(str::to_string),
        urls: field(5)
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect(),
        trust,
    };
    if rec.address.is_empty() {
        return Err("empty address".into());
    }
    rec.check_class(class).map_err(|e| e.to_string())?;
    Ok(rec)
}

/// Reads raw tag rows; any malformed row rejects the file.
pub fn read_tags(path: &Path) -> Result<Vec<TagRecord>> {
    let mut rd = reader(path)?;
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        out.push(parse_tag_row(&row).map_err(|m| DataError::at_line(path, line, m))?);
    }
    Ok(out)
}

fn tag_fields(r: &TagRecord) -> Vec<String> {
    vec![
        r.address.clone(),
        r.class().to_string(),
        r.category.to_string(),
        r.label.clone(),
        r.subtype.clone().unwrap_or_default(),
        r.urls.join("|"),
        r.trust.as_str().to_string(),
    ]
}

pub fn write_tags(path: &Path, records: &[TagRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TAG_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record(tag_fields(r)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn write_review(path: &Path, entries: &[ReviewEntry]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = TAG_HEADER.to_vec();
    header.push("reason");
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for e in entries {
        let mut f = tag_fields(&e.record);
        f.push(e.reason.clone());
        w.write_record(f).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// `address,cluster_id`, sorted by address. Ids are written as 16 hex
/// digits.
pub fn write_clusters(path: &Path, clusters: &ClusterMap) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["address", "cluster_id"]).map_err(|e| csv_err(path, e))?;
    for (a, c) in clusters.assignments() {
        w.write_record([a, &format_cluster(c)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn format_cluster(c: u64) -> String {
    format!("{c:016x}")
}

pub fn parse_cluster(s: &str) -> Option<u64> {
    u64::from_str_radix(s, 16).ok()
}

pub fn read_clusters(path: &Path) -> Result<Vec<(String, u64)>> {
    let mut rd = reader(path)?;
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let c = row
            .get(1)
            .and_then(parse_cluster)
            .ok_or_else(|| DataError::at_line(path, line, "bad cluster id"))?;
        out.push((row.get(0).unwrap_or("").to_string(), c));
    }
    Ok(out)
}

/// Feature matrix: the 42 feature names as header, rows in input order.
pub fn write_features(path: &Path, rows: &[FeatureVector]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(FEATURE_NAMES).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r.as_slice().iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rd = reader(path)?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(FEATURE_NAMES.iter().copied()) {
        return Err(DataError::at_line(path, 1, "header is not the canonical feature list"));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let v = row
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| DataError::at_line(path, line, e.to_string()))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_roc(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["threshold", "tpr", "fpr"]).map_err(|e| csv_err(path, e))?;
    for p in points {
        w.write_record([p.threshold.to_string(), p.tpr.to_string(), p.fpr.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epsilon", "mode", "mean_f1", "std_f1"]).map_err(|e| csv_err(path, e))?;
    for p in points {
        w.write_record([
            p.epsilon.to_string(),
            p.mode.as_str().to_string(),
            p.mean_f1.to_string(),
            p.std_f1.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// Relation summary rows `family,count,tag1,...` (no header; rows differ in
/// length).
pub fn write_report(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .has_headers(false)
        .from_path(path)
        .map_err(|e| DataError::at(path, e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// One address per line; `#` starts a comment; blank lines are ignored.
/// Duplicates are dropped, first occurrence wins.
pub fn parse_address_list(text: &str) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        let a = line.split('#').next().unwrap_or("").trim();
        if !a.is_empty() && seen.insert(a.to_string()) {
            out.push(a.to_string());
        }
    }
    out
}

pub fn read_address_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Ok(parse_address_list(&text))
}

pub fn write_address_list(path: &Path, addresses: &[String]) -> Result<()> {
    let mut s = String::new();
    for a in addresses {
        s.push_str(a);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_list_comments() {
        let v = parse_address_list("# seeds\nA\n\n  B  # second\nA\n#C\n");
        assert_eq!(v, vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn tag_rows() {
        let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(
            "1NDy,service,exchange,binance,hot wallet,https://a|https://b,trusted\n1X,malware,exchange,x,,,\n1Y,malware,clipper,masad,,,crowd\n"
                .as_bytes(),
        );
        let rows: Vec<_> = rd.records().map(|r| r.unwrap()).collect();
        let r = parse_tag_row(&rows[0]).unwrap();
        assert_eq!(r.subtype.as_deref(), Some("hot wallet"));
        assert_eq!(r.urls.len(), 2);
        assert!(parse_tag_row(&rows[1]).unwrap_err().contains("class"));
        assert_eq!(parse_tag_row(&rows[2]).unwrap().trust, Trust::Crowd);
    }
}
