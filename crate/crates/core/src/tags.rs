//! Tag records, address-level disambiguation and cluster propagation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterId, ClusterMap};
use crate::error::TagError;

/// Maximum label edit distance for two non-service tags to be merged as
/// aliases.
pub const ALIAS_MAX_DISTANCE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagClass {
    Malware,
    Abuse,
    Service,
    Individual,
    Benign,
}

impl TagClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TagClass::Malware => "malware",
            TagClass::Abuse => "abuse",
            TagClass::Service => "service",
            TagClass::Individual => "individual",
            TagClass::Benign => "benign",
        }
    }
}

impl FromStr for TagClass {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, TagError> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "malware" => TagClass::Malware,
            "abuse" => TagClass::Abuse,
            "service" | "services" => TagClass::Service,
            "individual" | "individuals" | "individ." => TagClass::Individual,
            "benign" => TagClass::Benign,
            _ => return Err(TagError::UnknownClass(s.to_string())),
        })
    }
}

impl fmt::Display for TagClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! categories {
    ($($variant:ident => $name:literal, $class:ident;)*) => {
        /// The 28 tag categories.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum Category {
            $(#[serde(rename = $name)] $variant,)*
        }

        impl Category {
            pub const ALL: &'static [Category] = &[$(Category::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Category::$variant => $name,)*
                }
            }

            pub fn class(self) -> TagClass {
                match self {
                    $(Category::$variant => TagClass::$class,)*
                }
            }
        }
    };
}

categories! {
    Sextortion => "sextortion", Abuse;
    MiscAbuse => "miscabuse", Abuse;
    Mining => "mining", Service;
    MixUser => "mixuser", Individual;
    Ransomware => "ransomware", Malware;
    Clipper => "clipper", Malware;
    Username => "username", Individual;
    Exchange => "exchange", Service;
    Terrorism => "terrorism", Abuse;
    Theft => "theft", Abuse;
    Gambling => "gambling", Service;
    OnlineWallet => "onlinewallet", Service;
    Defi => "defi", Service;
    Scam => "scam", Abuse;
    Mixer => "mixer", Service;
    Ponzi => "ponzi", Abuse;
    ServiceMisc => "service", Service;
    Malware => "malware", Malware;
    TorMarket => "tormarket", Service;
    Payment => "payment", Service;
    Donation => "donation", Benign;
    StateSponsored => "state-sponsored", Abuse;
    DrugTrafficking => "drugtrafficking", Abuse;
    BankingTrojan => "bankingtrojan", Malware;
    Cryptojacking => "cryptojacking", Malware;
    MiscBenign => "miscbenign", Benign;
    WebSkimming => "webskimming", Malware;
    UsGov => "usgov", Benign;
}

impl Category {
    /// Categories that stop exploration: every Service-class category.
    pub fn is_service(self) -> bool {
        self.class() == TagClass::Service
    }
}

impl FromStr for Category {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, TagError> {
        let lower = s.to_ascii_lowercase();
        if lower == "user" {
            return Ok(Category::Username);
        }
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == lower)
            .ok_or_else(|| TagError::UnknownCategory(s.to_string()))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reliability of the source a tag came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trust {
    /// Crowd-sourced reports with uneven quality.
    Crowd,
    Trusted,
}

impl FromStr for Trust {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, TagError> {
        match s.to_ascii_lowercase().as_str() {
            "" | "trusted" => Ok(Trust::Trusted),
            "crowd" => Ok(Trust::Crowd),
            _ => Err(TagError::UnknownTrust(s.to_string())),
        }
    }
}

impl Trust {
    pub fn as_str(self) -> &'static str {
        match self {
            Trust::Crowd => "crowd",
            Trust::Trusted => "trusted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TagRecord {
    pub address: String,
    pub category: Category,
    pub label: String,
    pub subtype: Option<String>,
    pub urls: Vec<String>,
    pub trust: Trust,
}

impl TagRecord {
    pub fn new(address: &str, category: Category, label: &str) -> Self {
        TagRecord {
            address: address.to_string(),
            category,
            label: label.to_string(),
            subtype: None,
            urls: Vec::new(),
            trust: Trust::Trusted,
        }
    }

    pub fn with_subtype(mut self, subtype: &str) -> Self {
        self.subtype = Some(subtype.to_string());
        self
    }

    pub fn with_trust(mut self, trust: Trust) -> Self {
        self.trust = trust;
        self
    }

    pub fn class(&self) -> TagClass {
        self.category.class()
    }

    pub fn key(&self) -> TagKey {
        TagKey {
            category: self.category,
            label: self.label.clone(),
        }
    }

    /// Checks the record against the class table; `class` is the class
    /// column as read from the source.
    pub fn check_class(&self, class: TagClass) -> Result<(), TagError> {
        if self.label.is_empty() {
            return Err(TagError::EmptyLabel(self.address.clone()));
        }
        if class != self.category.class() {
            return Err(TagError::ClassMismatch {
                category: self.category.to_string(),
                expected: self.category.class().to_string(),
                found: class.to_string(),
            });
        }
        Ok(())
    }
}

/// `category:label`, the identity of a tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TagKey {
    pub category: Category,
    pub label: String,
}

impl fmt::Display for TagKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.category, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Direct,
    ClusterPropagated,
}

/// The single tag an address resolves to. A beneficiary is only present when
/// the owner is a service (double ownership).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedTag {
    pub owner: TagRecord,
    pub beneficiary: Option<TagRecord>,
    pub provenance: Provenance,
}

impl ResolvedTag {
    pub fn direct(owner: TagRecord) -> Self {
        ResolvedTag {
            owner,
            beneficiary: None,
            provenance: Provenance::Direct,
        }
    }

    /// Owner key followed by the beneficiary key, if any.
    pub fn keys(&self) -> Vec<TagKey> {
        let mut v = alloc::vec![self.owner.key()];
        if let Some(b) = &self.beneficiary {
            v.push(b.key());
        }
        v
    }

    fn relabel(&self, address: &str, provenance: Provenance) -> Self {
        let mut t = self.clone();
        t.owner.address = address.to_string();
        if let Some(b) = t.beneficiary.as_mut() {
            b.address = address.to_string();
        }
        t.provenance = provenance;
        t
    }
}

/// Whether exploration stops at an address carrying `tag`.
pub fn is_exploration_stop(tag: &ResolvedTag) -> bool {
    tag.owner.category.is_service()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Resolved(ResolvedTag),
    Unresolvable { reason: String },
}

fn info_rank(r: &TagRecord) -> (bool, usize, usize, usize) {
    (
        r.subtype.is_some(),
        r.subtype.as_ref().map_or(0, String::len),
        r.label.len(),
        r.urls.len(),
    )
}

/// Resolves the tags collected for one address into at most one tag.
///
/// Rules, in order: identical `category:label` records collapse to the most
/// informative one; with several distinct tags, crowd-sourced records yield
/// to trusted ones; mining tags merge their labels; one service tag plus one
/// other tag is double ownership. Anything else is unresolvable.
pub fn disambiguate_address(tags: &[TagRecord]) -> Resolution {
    if tags.is_empty() {
        return Resolution::Unresolvable {
            reason: "no tags".into(),
        };
    }
    let address = tags[0].address.clone();

    // Rule 1: collapse records sharing category and label.
    let mut groups: BTreeMap<TagKey, TagRecord> = BTreeMap::new();
    let mut sorted: Vec<&TagRecord> = tags.iter().collect();
    sorted.sort();
    for r in sorted {
        match groups.get_mut(&r.key()) {
            None => {
                groups.insert(r.key(), r.clone());
            }
            Some(kept) => {
                let mut urls: BTreeSet<String> = kept.urls.iter().cloned().collect();
                urls.extend(r.urls.iter().cloned());
                let trust = kept.trust.max(r.trust);
                if info_rank(r) > info_rank(kept) {
                    *kept = r.clone();
                }
                kept.urls = urls.into_iter().collect();
                kept.trust = trust;
            }
        }
    }
    let mut remaining: Vec<TagRecord> = groups.into_values().collect();

    // Rule 2: crowd-sourced tags lose against trusted ones.
    if remaining.len() > 1 && remaining.iter().any(|r| r.trust == Trust::Trusted) {
        remaining.retain(|r| r.trust == Trust::Trusted);
    }

    // Rule 3: merge mining pools.
    let mining: Vec<TagRecord> = remaining
        .iter()
        .filter(|r| r.category == Category::Mining)
        .cloned()
        .collect();
    if mining.len() > 1 {
        let labels: BTreeSet<&str> = mining.iter().map(|r| r.label.as_str()).collect();
        let urls: BTreeSet<String> = mining.iter().flat_map(|r| r.urls.iter().cloned()).collect();
        let merged = TagRecord {
            address: address.clone(),
            category: Category::Mining,
            label: labels.into_iter().collect::<Vec<_>>().join(","),
            subtype: None,
            urls: urls.into_iter().collect(),
            trust: mining.iter().map(|r| r.trust).max().unwrap_or(Trust::Trusted),
        };
        remaining.retain(|r| r.category != Category::Mining);
        remaining.push(merged);
        remaining.sort();
    }

    match remaining.len() {
        1 => Resolution::Resolved(ResolvedTag::direct(remaining.pop().unwrap())),
        2 => {
            let services: Vec<&TagRecord> =
                remaining.iter().filter(|r| r.category.is_service()).collect();
            if services.len() == 1 {
                let owner = services[0].clone();
                let beneficiary = remaining
                    .iter()
                    .find(|r| !r.category.is_service())
                    .cloned();
                Resolution::Resolved(ResolvedTag {
                    owner,
                    beneficiary,
                    provenance: Provenance::Direct,
                })
            } else {
                Resolution::Unresolvable {
                    reason: conflict_reason(&remaining),
                }
            }
        }
        _ => Resolution::Unresolvable {
            reason: conflict_reason(&remaining),
        },
    }
}

fn conflict_reason(records: &[TagRecord]) -> String {
    let keys: Vec<String> = records.iter().map(|r| r.key().to_string()).collect();
    format!("conflicting tags {}", keys.join(" "))
}

/// Levenshtein distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = alloc::vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn normalize_label(label: &str) -> String {
    label
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Whether two labels name the same entity under the alias rule.
pub fn are_aliases(a: &str, b: &str, max_distance: usize) -> bool {
    edit_distance(&normalize_label(a), &normalize_label(b)) <= max_distance
}

/// A record excluded from the database, with the reason it was excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub record: TagRecord,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct TagDbOptions {
    pub alias_max_distance: usize,
}

impl Default for TagDbOptions {
    fn default() -> Self {
        TagDbOptions {
            alias_max_distance: ALIAS_MAX_DISTANCE,
        }
    }
}

/// Address tags plus cluster-level propagated tags.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagDb {
    direct: BTreeMap<String, ResolvedTag>,
    propagated: BTreeMap<ClusterId, ResolvedTag>,
    review: Vec<ReviewEntry>,
    alias_max_distance: usize,
}

impl TagDb {
    /// Runs address-level disambiguation over raw records (any order).
    pub fn build(records: &[TagRecord], options: &TagDbOptions) -> Self {
        let mut by_address: BTreeMap<&str, Vec<TagRecord>> = BTreeMap::new();
        for r in records {
            by_address.entry(r.address.as_str()).or_default().push(r.clone());
        }
        let mut direct = BTreeMap::new();
        let mut review = Vec::new();
        for (address, mut recs) in by_address {
            recs.sort();
            match disambiguate_address(&recs) {
                Resolution::Resolved(t) => {
                    direct.insert(address.to_string(), t);
                }
                Resolution::Unresolvable { reason } => {
                    review.extend(recs.into_iter().map(|record| ReviewEntry {
                        record,
                        reason: reason.clone(),
                    }));
                }
            }
        }
        TagDb {
            direct,
            propagated: BTreeMap::new(),
            review,
            alias_max_distance: options.alias_max_distance,
        }
    }

    /// Expands direct tags to the multi-input clusters of their addresses.
    ///
    /// A cluster with one distinct tag propagates it. With several tags:
    /// exactly one service tag makes it the owner and the (alias-merged)
    /// remainder the beneficiary; only non-service tags that are all aliases
    /// of each other merge; anything else is sent to review and not
    /// propagated.
    pub fn propagate_to_clusters(&mut self, clusters: &ClusterMap) {
        let mut per_cluster: BTreeMap<ClusterId, Vec<&ResolvedTag>> = BTreeMap::new();
        for (address, tag) in &self.direct {
            per_cluster
                .entry(clusters.cluster_of(address))
                .or_default()
                .push(tag);
        }
        let mut propagated = BTreeMap::new();
        let mut review = Vec::new();
        for (cluster, tags) in per_cluster {
            let mut owners: BTreeMap<TagKey, &TagRecord> = BTreeMap::new();
            let mut others: BTreeMap<TagKey, &TagRecord> = BTreeMap::new();
            for t in &tags {
                if t.owner.category.is_service() {
                    owners.entry(t.owner.key()).or_insert(&t.owner);
                } else {
                    others.entry(t.owner.key()).or_insert(&t.owner);
                }
                if let Some(b) = &t.beneficiary {
                    others.entry(b.key()).or_insert(b);
                }
            }
            let merged_other = self.merge_aliases(others.values().copied().collect());
            let resolved = match (owners.len(), others.len()) {
                (1, 0) => Ok(ResolvedTag::direct(owners.values().next().copied().cloned().unwrap())),
                (1, _) => match merged_other {
                    Some(b) => Ok(ResolvedTag {
                        owner: owners.values().next().copied().cloned().unwrap(),
                        beneficiary: Some(b),
                        provenance: Provenance::Direct,
                    }),
                    None => Err("service tag with unrelated non-service tags"),
                },
                (0, _) => merged_other.map(ResolvedTag::direct).ok_or("non-service tags are not aliases"),
                _ => Err("multiple service tags"),
            };
            match resolved {
                Ok(t) => {
                    propagated.insert(cluster, t.relabel("", Provenance::ClusterPropagated));
                }
                Err(reason) => {
                    for t in &tags {
                        review.push(ReviewEntry {
                            record: t.owner.clone(),
                            reason: format!("cluster {cluster:016x}: {reason}"),
                        });
                    }
                }
            }
        }
        self.propagated = propagated;
        self.review.retain(|r| !r.reason.starts_with("cluster "));
        self.review.extend(review);
    }

    /// Collapses alias labels of one category into the longest label.
    fn merge_aliases(&self, records: Vec<&TagRecord>) -> Option<TagRecord> {
        let first = records.first()?;
        let all_alias = records.iter().all(|r| {
            r.category == first.category
                && records
                    .iter()
                    .all(|o| are_aliases(&r.label, &o.label, self.alias_max_distance))
        });
        if !all_alias {
            return None;
        }
        let mut best = (*first).clone();
        let mut urls: BTreeSet<String> = BTreeSet::new();
        for r in &records {
            urls.extend(r.urls.iter().cloned());
            if (r.label.len(), core::cmp::Reverse(&r.label)) > (best.label.len(), core::cmp::Reverse(&best.label)) {
                best = (*r).clone();
            }
        }
        best.urls = urls.into_iter().collect();
        Some(best)
    }

    /// Direct tag first, then the tag propagated to the address's cluster.
    pub fn lookup(&self, address: &str, clusters: &ClusterMap) -> Option<ResolvedTag> {
        if let Some(t) = self.direct.get(address) {
            return Some(t.clone());
        }
        self.propagated
            .get(&clusters.cluster_of(address))
            .map(|t| t.relabel(address, Provenance::ClusterPropagated))
    }

    pub fn direct_tag(&self, address: &str) -> Option<&ResolvedTag> {
        self.direct.get(address)
    }

    pub fn direct_tags(&self) -> impl Iterator<Item = (&str, &ResolvedTag)> {
        self.direct.iter().map(|(a, t)| (a.as_str(), t))
    }

    pub fn propagated_tags(&self) -> impl Iterator<Item = (ClusterId, &ResolvedTag)> {
        self.propagated.iter().map(|(c, t)| (*c, t))
    }

    /// Records held back for manual review.
    pub fn review(&self) -> &[ReviewEntry] {
        &self.review
    }

    pub fn alias_max_distance(&self) -> usize {
        self.alias_max_distance
    }

    pub fn len(&self) -> usize {
        self.direct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.direct.is_empty()
    }

    /// Adds or replaces a direct tag, bypassing disambiguation.
    pub fn insert_direct(&mut self, tag: ResolvedTag) {
        self.direct.insert(tag.owner.address.clone(), tag);
    }
}
