//! The `txgraph` command line.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use txgraph_core::classifier::dataset::Split;
use txgraph_core::classifier::{
    assemble_dataset, roc_curve, Confusion, ExchangeClassifier, ExchangeModel, ForestParams, InjectMode, Scores,
    SetClassifier, TreeParams,
};
use txgraph_core::cluster::{detect_coinjoin, detect_dust_with, ClusterOptions, DUST_MIN_OUTPUTS};
use txgraph_core::evaluation::{
    compare_directions, epsilon_jobs, generate_chain, run_ablation, PlantKind, PlantSpec, StudyInput, SynthSpec,
    DEFAULT_EPSILONS, DEFAULT_REPEATS,
};
use txgraph_core::explorer::{explore, Direction, ExplorationConfig};
use txgraph_core::features::{extract_features, rank_features_mi, FEATURE_NAMES};
use txgraph_core::fixtures::{cc_funding_fixture, epsilon_fixture, fig2, hub_fixture, Scenario};
use txgraph_core::relations::{apply_oracles, find_relations};
use txgraph_core::tags::{TagDbOptions, ALIAS_MAX_DISTANCE};
use txgraph_core::{ChainStore, ClusterMap, IngestOptions, TagDb, TagRecord};

use crate::chainio::{read_chain, write_transactions};
use crate::clock::SystemClock;
use crate::error::DataError;
use crate::graphio::{read_graph, write_graph, GraphDoc};
use crate::jsonio::write_json;
use crate::manifest::{manifest_path_for, RunManifest};
use crate::model::{load_model, save_model};
use crate::oracle_registry::{build_oracle, parse_oracle_flag, read_registry, OracleSpec};
use crate::parallel;
use crate::tables::{
    read_address_list, read_tags, write_address_list, write_clusters, write_curve, write_features, write_report,
    write_review, write_roc, write_tags,
};

/// Environment variable that relocates relative output paths.
pub const OUT_DIR_ENV: &str = "TXGRAPH_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "txgraph", version, about = "Transaction-graph exploration for malware campaign forensics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a JSONL chain and summarize it.
    Ingest(IngestArgs),
    /// Multi-input clustering; writes address,cluster_id.
    Cluster(ClusterArgs),
    /// Resolve raw tags into one tag per address (and per cluster).
    Tagdb(TagdbArgs),
    /// Export the 42-feature matrix for a list of addresses.
    Features(FeaturesArgs),
    /// Train and evaluate the exchange classifier.
    Train(TrainArgs),
    /// Explore the transaction graph from seed addresses.
    Explore(ExploreArgs),
    /// Run signaling oracles and extract relations from an exploration graph.
    Relations(RelationsArgs),
    /// Evaluation studies.
    Eval(EvalArgs),
    /// Generate a synthetic chain with planted ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CommonOut {
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// Reject timestamps that decrease with height.
    #[arg(long)]
    pub strict_timestamps: bool,
    /// Summary JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the chain back in canonical form.
    #[arg(long)]
    pub canonical: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonOut,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Let CoinJoin inputs merge clusters (off by default).
    #[arg(long)]
    pub include_coinjoins: bool,
    #[command(flatten)]
    pub common: CommonOut,
}

#[derive(Debug, Args)]
pub struct TagdbArgs {
    /// Raw tag CSV.
    #[arg(long)]
    pub tags: PathBuf,
    /// Resolved per-address tags.
    #[arg(long)]
    pub out: PathBuf,
    /// Records that could not be resolved, with the reason.
    #[arg(long)]
    pub review: Option<PathBuf>,
    /// Chain used to propagate tags over multi-input clusters.
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// Cluster-propagated tags as cluster_id plus the tag columns.
    #[arg(long, requires = "chain")]
    pub propagated: Option<PathBuf>,
    #[arg(long, default_value_t = ALIAS_MAX_DISTANCE)]
    pub alias_distance: usize,
    #[command(flatten)]
    pub common: CommonOut,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// Address list; default is every address in the chain, sorted.
    #[arg(long)]
    pub addresses: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelType {
    Forest,
    Tree,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// Exchange addresses (positive seeds).
    #[arg(long)]
    pub positives: PathBuf,
    /// Non-exchange addresses (negative seeds).
    #[arg(long)]
    pub negatives: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Total dataset size, half per class. Default: as many as the smaller
    /// class allows.
    #[arg(long)]
    pub target_size: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModelType::Forest)]
    pub model_type: ModelType,
    #[arg(long, default_value_t = 600)]
    pub trees: usize,
    #[arg(long, default_value_t = 40)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub max_features: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub roc: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonOut,
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long)]
    pub seeds: PathBuf,
    /// Exchange classifier model.
    #[arg(long, conflicts_with = "no_classifier")]
    pub model: Option<PathBuf>,
    /// Explore without the exchange classifier.
    #[arg(long)]
    pub no_classifier: bool,
    /// back-and-forth, forward-only or backwards-only.
    #[arg(long, default_value = "back-and-forth", value_parser = parse_direction)]
    pub direction: Direction,
    /// Skip deposit transactions of seeds (for victim-paid seeds).
    #[arg(long)]
    pub sdd: bool,
    #[arg(long)]
    pub max_addresses: Option<usize>,
    #[arg(long)]
    pub max_seconds: Option<u64>,
    #[arg(long)]
    pub no_dust_filter: bool,
    #[arg(long)]
    pub no_coinjoin_filter: bool,
    #[arg(long, default_value_t = DUST_MIN_OUTPUTS)]
    pub dust_threshold: usize,
    /// Transactions never to add to the graph, one txid per line.
    #[arg(long)]
    pub denylist: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dot: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonOut,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    Direction::parse(s).ok_or_else(|| format!("unknown direction {s:?}; use back-and-forth, forward-only or backwards-only"))
}

#[derive(Debug, Args)]
pub struct RelationsArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Chain the graph was explored on (needed for clusters and oracles).
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// `family[:params.json]`, repeatable.
    #[arg(long = "oracle")]
    pub oracles: Vec<String>,
    /// JSON registry mapping family names to an oracle and parameter file.
    #[arg(long)]
    pub oracle_registry: Option<PathBuf>,
    /// Campaign family names; default: the oracle families.
    #[arg(long = "family")]
    pub families: Vec<String>,
    #[arg(long)]
    pub report: PathBuf,
    /// Evidence annex (default: `<report>.evidence.json`).
    #[arg(long)]
    pub evidence: Option<PathBuf>,
    /// Graph with oracle detections marked.
    #[arg(long)]
    pub graph_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonOut,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(subcommand)]
    pub study: Study,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fixture {
    Epsilon,
    Hub,
    Fig2,
    CcFunding,
}

/// Where a study's chain, tags, seeds and ground-truth exchanges come from.
#[derive(Debug, Args)]
pub struct StudySource {
    #[arg(long, value_enum, conflicts_with_all = ["chain", "tags", "seeds", "exchanges"])]
    pub fixture: Option<Fixture>,
    #[arg(long)]
    pub chain: Option<PathBuf>,
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    /// Ground-truth exchange addresses, one per line.
    #[arg(long)]
    pub exchanges: Option<PathBuf>,
    #[arg(long, default_value = "back-and-forth", value_parser = parse_direction)]
    pub direction: Direction,
    #[arg(long)]
    pub sdd: bool,
    /// Campaign family names excluded from relations.
    #[arg(long = "family")]
    pub families: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Study {
    /// F1 of relations under injected classifier errors.
    Epsilon {
        #[command(flatten)]
        source: StudySource,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
        /// Comma-separated error rates.
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Per-run scores as JSON.
        #[arg(long)]
        runs: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOut,
    },
    /// Classifier on versus off under an address cap.
    Ablation {
        #[command(flatten)]
        source: StudySource,
        #[arg(long, default_value_t = 20_000)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOut,
    },
    /// Back-and-forth versus forward-only on the same seeds.
    Directions {
        #[command(flatten)]
        source: StudySource,
        #[arg(long)]
        no_classifier: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOut,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    /// Full generator spec as JSON; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub exchanges: Option<usize>,
    #[arg(long)]
    pub hot_addresses: Option<usize>,
    #[arg(long)]
    pub blocks: Option<u64>,
    #[arg(long)]
    pub transactions: Option<usize>,
    /// `kind:count[:size]`, repeatable; kinds are cerber_cycle,
    /// pony_pair_series, glupteba_opreturn, dust_blast, coinjoin,
    /// relation_path and fig2_topology.
    #[arg(long = "plant", value_parser = parse_plant)]
    pub plants: Vec<PlantSpec>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_plant(s: &str) -> Result<PlantSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(format!("expected kind:count[:size], got {s:?}"));
    }
    let kind: PlantKind = serde_json::from_value(json!(parts[0].replace('-', "_")))
        .map_err(|_| format!("unknown plant kind {:?}", parts[0]))?;
    let count = parts[1].parse().map_err(|_| format!("bad count {:?}", parts[1]))?;
    let size = match parts.get(2) {
        Some(x) => Some(x.parse().map_err(|_| format!("bad size {x:?}"))?),
        None => None,
    };
    Ok(PlantSpec { kind, count, size })
}

/// Why a command failed, and so which exit status it gets.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(DataError),
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(DataError::new(e.to_string()))
}

fn data_at(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(DataError::at(path, e.to_string()))
}

/// Output locations. Relative paths go under `TXGRAPH_OUT_DIR` when it is
/// set.
#[derive(Debug, Clone, Default)]
pub struct OutDir(Option<PathBuf>);

impl OutDir {
    pub fn from_env() -> Self {
        OutDir(std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
    }

    pub fn resolve(&self, p: &Path) -> CliResult<PathBuf> {
        let full = match &self.0 {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        };
        if let Some(parent) = full.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| data_at(parent, e))?;
        }
        Ok(full)
    }
}

struct Ctx {
    out: OutDir,
}

impl Ctx {
    fn finish(&self, m: RunManifest, explicit: &Option<PathBuf>, primary: &Path) -> CliResult<()> {
        let path = match explicit {
            Some(p) => self.out.resolve(p)?,
            None => manifest_path_for(primary),
        };
        m.write(&path)?;
        Ok(())
    }
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit status.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 1,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, OutDir::from_env()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: OutDir) -> CliResult<()> {
    let ctx = Ctx { out };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a),
        Command::Cluster(a) => cmd_cluster(&ctx, a),
        Command::Tagdb(a) => cmd_tagdb(&ctx, a),
        Command::Features(a) => cmd_features(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Explore(a) => cmd_explore(&ctx, a),
        Command::Relations(a) => cmd_relations(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
    }
}

fn load_chain(m: &mut RunManifest, path: &Path, options: &IngestOptions) -> CliResult<ChainStore> {
    m.input("chain", path)?;
    Ok(m.time("ingest", || read_chain(path, options))?)
}

fn load_tagdb(m: &mut RunManifest, path: Option<&Path>, clusters: &ClusterMap) -> CliResult<TagDb> {
    let records = match path {
        Some(p) => {
            m.input("tags", p)?;
            read_tags(p)?
        }
        None => Vec::new(),
    };
    let mut db = TagDb::build(&records, &TagDbOptions::default());
    m.time("tag propagation", || db.propagate_to_clusters(clusters));
    Ok(db)
}

#[derive(Serialize)]
struct ChainSummary {
    transactions: usize,
    addresses: usize,
    coinbase: usize,
    coinjoin: usize,
    dust: usize,
    data_outputs: usize,
    first_height: Option<u64>,
    last_height: Option<u64>,
}

fn cmd_ingest(ctx: &Ctx, a: IngestArgs) -> CliResult<()> {
    let mut m = RunManifest::new(
        "ingest",
        json!({"strict_timestamps": a.strict_timestamps, "canonical": a.canonical.is_some()}),
    );
    let store = load_chain(&mut m, &a.chain, &IngestOptions { strict_timestamps: a.strict_timestamps })?;
    let txs = store.transactions();
    let summary = ChainSummary {
        transactions: txs.len(),
        addresses: store.address_count(),
        coinbase: txs.iter().filter(|t| t.coinbase).count(),
        coinjoin: txs.iter().filter(|t| detect_coinjoin(t)).count(),
        dust: txs.iter().filter(|t| detect_dust_with(t, DUST_MIN_OUTPUTS)).count(),
        data_outputs: txs.iter().flat_map(|t| &t.outputs).filter(|s| s.data().is_some()).count(),
        first_height: txs.iter().map(|t| t.height).min(),
        last_height: txs.iter().map(|t| t.height).max(),
    };
    let out = ctx.out.resolve(&a.out)?;
    write_json(&out, &summary)?;
    m.output("summary", &out)?;
    if let Some(c) = &a.canonical {
        let c = ctx.out.resolve(c)?;
        write_transactions(&c, txs)?;
        m.output("canonical", &c)?;
    }
    ctx.finish(m, &a.common.manifest, &out)
}

fn cmd_cluster(ctx: &Ctx, a: ClusterArgs) -> CliResult<()> {
    let mut m = RunManifest::new("cluster", json!({"include_coinjoins": a.include_coinjoins}));
    let store = load_chain(&mut m, &a.chain, &IngestOptions::default())?;
    let opts = ClusterOptions {
        include_coinjoins: a.include_coinjoins,
    };
    let clusters = m.time("cluster", || ClusterMap::build_with(&store, &opts));
    let out = ctx.out.resolve(&a.out)?;
    write_clusters(&out, &clusters)?;
    m.output("clusters", &out)?;
    ctx.finish(m, &a.common.manifest, &out)
}

fn resolved_records(db: &TagDb) -> Vec<TagRecord> {
    let mut v = Vec::new();
    for (_, t) in db.direct_tags() {
        v.push(t.owner.clone());
        v.extend(t.beneficiary.clone());
    }
    v
}

fn cmd_tagdb(ctx: &Ctx, a: TagdbArgs) -> CliResult<()> {
    let mut m = RunManifest::new(
        "tagdb",
        json!({"alias_distance": a.alias_distance, "propagate": a.chain.is_some()}),
    );
    m.input("tags", &a.tags)?;
    let records = read_tags(&a.tags)?;
    let mut db = m.time("resolve", || {
        TagDb::build(
            &records,
            &TagDbOptions {
                alias_max_distance: a.alias_distance,
            },
        )
    });
    let mut clusters = None;
    if let Some(chain) = &a.chain {
        let store = load_chain(&mut m, chain, &IngestOptions::default())?;
        let c = m.time("cluster", || ClusterMap::build(&store));
        m.time("propagate", || db.propagate_to_clusters(&c));
        clusters = Some(c);
    }
    let out = ctx.out.resolve(&a.out)?;
    write_tags(&out, &resolved_records(&db))?;
    m.output("resolved", &out)?;
    if let Some(r) = &a.review {
        let r = ctx.out.resolve(r)?;
        write_review(&r, db.review())?;
        m.output("review", &r)?;
    }
    if let (Some(p), Some(_)) = (&a.propagated, &clusters) {
        let p = ctx.out.resolve(p)?;
        let mut w = csv::Writer::from_path(&p).map_err(|e| data_at(&p, e))?;
        let mut header = vec!["cluster_id"];
        header.extend(crate::tables::TAG_HEADER);
        header.push("role");
        w.write_record(&header).map_err(|e| data_at(&p, e))?;
        for (c, t) in db.propagated_tags() {
            let mut roles = vec![(&t.owner, "owner")];
            if let Some(b) = &t.beneficiary {
                roles.push((b, "beneficiary"));
            }
            for (r, role) in roles {
                w.write_record([
                    crate::tables::format_cluster(c),
                    String::new(),
                    r.class().to_string(),
                    r.category.to_string(),
                    r.label.clone(),
                    r.subtype.clone().unwrap_or_default(),
                    r.urls.join("|"),
                    r.trust.as_str().to_string(),
                    role.to_string(),
                ])
                .map_err(|e| data_at(&p, e))?;
            }
        }
        w.flush().map_err(|e| data_at(&p, e))?;
        m.output("propagated", &p)?;
    }
    ctx.finish(m, &a.common.manifest, &out)
}

fn cmd_features(ctx: &Ctx, a: FeaturesArgs) -> CliResult<()> {
    let mut m = RunManifest::new("features", json!({"addresses": a.addresses.is_some()}));
    let store = load_chain(&mut m, &a.chain, &IngestOptions::default())?;
    let addrs = match &a.addresses {
        Some(p) => {
            m.input("addresses", p)?;
            read_address_list(p)?
        }
        None => store.addresses().map(str::to_string).collect(),
    };
    if let Some(missing) = addrs.iter().find(|x| !store.contains_address(x)) {
        return Err(data_at(
            a.addresses.as_deref().unwrap_or(&a.chain),
            format!("address {missing} does not occur in the chain"),
        ));
    }
    let rows = m.time("extract", || addrs.iter().map(|x| extract_features(&store, x)).collect::<Vec<_>>());
    let out = ctx.out.resolve(&a.out)?;
    write_features(&out, &rows)?;
    m.output("features", &out)?;
    ctx.finish(m, &a.common.manifest, &out)
}

#[derive(Serialize)]
struct SplitMetrics {
    precision: f64,
    recall: f64,
    f1: f64,
    accuracy: f64,
    confusion: Confusion,
}

impl SplitMetrics {
    fn of(c: Confusion) -> Self {
        let s: Scores = c.scores();
        SplitMetrics {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            accuracy: c.accuracy(),
            confusion: c,
        }
    }
}

#[derive(Serialize)]
struct FoldMetrics {
    fold: usize,
    #[serde(flatten)]
    metrics: SplitMetrics,
}

#[derive(Serialize)]
struct TrainMetrics {
    model_type: String,
    seed: u64,
    dataset_size: usize,
    train_size: usize,
    test_size: usize,
    folds: Vec<FoldMetrics>,
    cv_mean: Scores,
    test: SplitMetrics,
    auc: f64,
    feature_ranking_mi: Vec<(String, f64)>,
}

/// Addresses a seed list can contribute through its clusters, not counting
/// `exclude`.
fn available(seeds: &[String], clusters: &ClusterMap, exclude: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for s in seeds {
        if !exclude.contains(s) {
            out.insert(s.clone());
        }
        for x in clusters.members(clusters.cluster_of(s)) {
            if !exclude.contains(x) {
                out.insert(x.clone());
            }
        }
    }
    out
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::Usage(format!("--threshold {} must lie in [0, 1]", a.threshold)));
    }
    if a.folds < 2 {
        return Err(CliError::Usage(format!("--folds {} must be at least 2", a.folds)));
    }
    let params = ForestParams {
        n_trees: a.trees,
        max_depth: a.depth,
        min_samples_leaf: 1,
        max_features: a.max_features,
        threshold: a.threshold,
    };
    let mut m = RunManifest::new(
        "train",
        json!({"seed": a.seed, "model_type": format!("{:?}", a.model_type).to_lowercase(), "forest": params, "folds": a.folds, "target_size": a.target_size}),
    );
    let store = load_chain(&mut m, &a.chain, &IngestOptions::default())?;
    m.input("positives", &a.positives)?;
    m.input("negatives", &a.negatives)?;
    let pos = read_address_list(&a.positives)?;
    let neg = read_address_list(&a.negatives)?;
    let clusters = m.time("cluster", || ClusterMap::build(&store));
    let target = match a.target_size {
        Some(t) => t,
        None => {
            let neg_seeds: BTreeSet<String> = neg.iter().cloned().collect();
            let p = available(&pos, &clusters, &neg_seeds);
            let n = available(&neg, &clusters, &p);
            2 * p.len().min(n.len())
        }
    };
    let ds = m
        .time("dataset", || assemble_dataset(&store, &clusters, &pos, &neg, target, a.seed))
        .map_err(data)?;
    let (xtr, ytr) = ds.train();
    let (xte, yte) = ds.test();
    let model = m
        .time("fit", || match a.model_type {
            ModelType::Forest => parallel::train_forest(&xtr, &ytr, &params, a.seed),
            ModelType::Tree => ExchangeModel::train_tree(
                &xtr,
                &ytr,
                &TreeParams {
                    max_depth: a.depth,
                    min_samples_leaf: 1,
                    max_features: a.max_features,
                },
                a.threshold,
                a.seed,
            ),
        })
        .map_err(data)?;
    let cv = m
        .time("cross-validate", || parallel::cross_validate(&xtr, &ytr, a.folds, &params, a.seed))
        .map_err(data)?;
    let preds = model.predict_all(&xte).map_err(data)?;
    let confusion = Confusion::from_predictions(&yte, &preds.iter().map(|p| p.1).collect::<Vec<_>>());
    let roc = roc_curve(&yte, &preds.iter().map(|p| p.0).collect::<Vec<_>>());
    let ranking = rank_features_mi(&xtr, &ytr, &FEATURE_NAMES, 10).map_err(data)?;
    let metrics = TrainMetrics {
        model_type: format!("{:?}", a.model_type).to_lowercase(),
        seed: a.seed,
        dataset_size: ds.len(),
        train_size: ds.split.iter().filter(|s| **s == Split::Train).count(),
        test_size: ds.split.iter().filter(|s| **s == Split::Test).count(),
        folds: cv
            .folds
            .iter()
            .map(|f| FoldMetrics {
                fold: f.fold,
                metrics: SplitMetrics::of(f.confusion),
            })
            .collect(),
        cv_mean: cv.mean,
        test: SplitMetrics::of(confusion),
        auc: txgraph_core::classifier::metrics::auc(&roc),
        feature_ranking_mi: ranking,
    };
    let model_path = ctx.out.resolve(&a.model)?;
    save_model(&model_path, &model)?;
    m.output("model", &model_path)?;
    let metrics_path = ctx.out.resolve(&a.metrics)?;
    write_json(&metrics_path, &metrics)?;
    m.output("metrics", &metrics_path)?;
    if let Some(r) = &a.roc {
        let r = ctx.out.resolve(r)?;
        write_roc(&r, &roc)?;
        m.output("roc", &r)?;
    }
    ctx.finish(m, &a.common.manifest, &model_path)
}

fn cmd_explore(ctx: &Ctx, a: ExploreArgs) -> CliResult<()> {
    if a.model.is_none() && !a.no_classifier {
        return Err(CliError::Usage(
            "--model or --no-classifier is required: say whether exploration uses the exchange classifier".into(),
        ));
    }
    let mut m_config = json!({});
    let mut denylist = BTreeSet::new();
    if let Some(d) = &a.denylist {
        denylist = read_address_list(d)?.into_iter().collect();
    }
    let config = ExplorationConfig {
        direction: a.direction,
        sdd: a.sdd,
        max_addresses: a.max_addresses,
        max_seconds: a.max_seconds,
        classifier_enabled: a.model.is_some(),
        dust_filter_enabled: !a.no_dust_filter,
        coinjoin_filter_enabled: !a.no_coinjoin_filter,
        dust_threshold: a.dust_threshold,
        denylist,
        rng_seed: 0,
    };
    if let serde_json::Value::Object(o) = &mut m_config {
        o.insert("exploration".into(), serde_json::to_value(&config).expect("config serializes"));
    }
    let mut m = RunManifest::new("explore", m_config);
    if let Some(d) = &a.denylist {
        m.input("denylist", d)?;
    }
    let store = load_chain(&mut m, &a.chain, &IngestOptions::default())?;
    let clusters = m.time("cluster", || ClusterMap::build(&store));
    let tagdb = load_tagdb(&mut m, a.tags.as_deref(), &clusters)?;
    m.input("seeds", &a.seeds)?;
    let seeds = read_address_list(&a.seeds)?;
    let model = match &a.model {
        Some(p) => {
            m.input("model", p)?;
            Some(load_model(p)?)
        }
        None => None,
    };
    let clock = SystemClock::new();
    let e = m
        .time("explore", || {
            explore(
                &store,
                &clusters,
                &tagdb,
                model.as_ref().map(|x| x as &dyn ExchangeClassifier),
                &seeds,
                &config,
                &clock,
            )
        })
        .map_err(|e| data_at(&a.seeds, e))?;
    for w in &e.stats.warnings {
        eprintln!("warning: {w}");
    }
    let out = ctx.out.resolve(&a.out)?;
    write_graph(&out, &e)?;
    m.output("graph", &out)?;
    if let Some(d) = &a.dot {
        let d = ctx.out.resolve(d)?;
        fs::write(&d, e.graph.to_dot()).map_err(|x| data_at(&d, x))?;
        m.output("dot", &d)?;
    }
    m.timings_ms.insert("exploration_runtime".into(), e.stats.runtime_us as f64 / 1e3);
    ctx.finish(m, &a.common.manifest, &out)
}

fn cmd_relations(ctx: &Ctx, a: RelationsArgs) -> CliResult<()> {
    let mut specs: Vec<OracleSpec> = Vec::new();
    for o in &a.oracles {
        specs.push(parse_oracle_flag(o).map_err(|e| CliError::Usage(format!("--oracle {o}: {e}")))?);
    }
    let mut m = RunManifest::new("relations", json!({}));
    if let Some(r) = &a.oracle_registry {
        m.input("oracle_registry", r)?;
        specs.extend(read_registry(r)?);
    }
    for s in &specs {
        if let Some(p) = &s.params {
            m.input(&format!("oracle_params:{}", s.family), p)?;
        }
    }
    let families: Vec<String> = if a.families.is_empty() {
        let mut f: Vec<String> = specs.iter().map(|s| s.family.clone()).collect();
        f.dedup();
        f
    } else {
        a.families.iter().map(|f| f.to_ascii_lowercase()).collect()
    };
    m.config = json!({
        "oracles": specs.iter().map(|s| json!({"family": s.family, "oracle": s.oracle})).collect::<Vec<_>>(),
        "families": families,
    });
    let oracles = specs.iter().map(build_oracle).collect::<Result<Vec<_>, _>>()?;
    m.input("graph", &a.graph)?;
    let (doc, mut graph) = read_graph(&a.graph)?;
    let store = load_chain(&mut m, &a.chain, &IngestOptions::default())?;
    if let Some(missing) = graph.txs.keys().find(|t| store.tx_index(t).is_none()) {
        return Err(data_at(&a.graph, format!("transaction {missing} is not in {}", a.chain.display())));
    }
    let clusters = m.time("cluster", || ClusterMap::build(&store));
    let tagdb = load_tagdb(&mut m, a.tags.as_deref(), &clusters)?;
    let refs: Vec<&dyn txgraph_core::oracles::Oracle> =
        oracles.iter().map(|o| o.as_ref() as &dyn txgraph_core::oracles::Oracle).collect();
    let detections = m.time("oracles", || apply_oracles(&mut graph, &store, &refs));
    let report = m.time("relations", || find_relations(&graph, &tagdb, &clusters, &families));
    let label = if families.is_empty() { "campaign".to_string() } else { families.join("+") };
    let out = ctx.out.resolve(&a.report)?;
    write_report(&out, &[report.summary_row(&label)])?;
    m.output("report", &out)?;
    let ev = match &a.evidence {
        Some(p) => ctx.out.resolve(p)?,
        None => {
            let mut s = out.as_os_str().to_owned();
            s.push(".evidence.json");
            PathBuf::from(s)
        }
    };
    write_json(&ev, &json!({"detections": detections, "report": report}))?;
    m.output("evidence", &ev)?;
    if let Some(g) = &a.graph_out {
        let g = ctx.out.resolve(g)?;
        write_json(&g, &GraphDoc::new(&graph, doc.stats.clone()))?;
        m.output("graph", &g)?;
    }
    ctx.finish(m, &a.common.manifest, &out)
}

/// A study's inputs, owned.
struct LoadedStudy {
    scenario: Scenario,
    families: Vec<String>,
    config: ExplorationConfig,
}

fn load_study(m: &mut RunManifest, s: &StudySource, fallback: Fixture) -> CliResult<LoadedStudy> {
    let mut families: Vec<String> = s.families.iter().map(|f| f.to_ascii_lowercase()).collect();
    let scenario = match &s.chain {
        None => match s.fixture.unwrap_or(fallback) {
            Fixture::Epsilon => epsilon_fixture(10),
            Fixture::Hub => hub_fixture(5, 100, 50),
            Fixture::Fig2 => {
                let x = fig2();
                Scenario {
                    store: x.store,
                    clusters: x.clusters,
                    tagdb: x.tagdb,
                    seeds: x.seeds,
                    exchanges: x.classifier_exchanges,
                }
            }
            Fixture::CcFunding => {
                if families.is_empty() {
                    families.push("glupteba".into());
                }
                cc_funding_fixture()
            }
        },
        Some(chain) => {
            let seeds_path = s.seeds.as_ref().ok_or_else(|| CliError::Usage("--seeds is required with --chain".into()))?;
            let store = load_chain(m, chain, &IngestOptions::default())?;
            let clusters = m.time("cluster", || ClusterMap::build(&store));
            let tagdb = load_tagdb(m, s.tags.as_deref(), &clusters)?;
            m.input("seeds", seeds_path)?;
            let seeds = read_address_list(seeds_path)?;
            let exchanges = match &s.exchanges {
                Some(p) => {
                    m.input("exchanges", p)?;
                    read_address_list(p)?
                }
                None => Vec::new(),
            };
            Scenario {
                store,
                clusters,
                tagdb,
                seeds,
                exchanges,
            }
        }
    };
    let config = ExplorationConfig {
        direction: s.direction,
        sdd: s.sdd,
        classifier_enabled: true,
        ..ExplorationConfig::default()
    };
    Ok(LoadedStudy {
        scenario,
        families,
        config,
    })
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> CliResult<()> {
    match a.study {
        Study::Epsilon {
            source,
            seed,
            repeats,
            epsilons,
            out,
            runs,
            common,
        } => {
            let epsilons = if epsilons.is_empty() { DEFAULT_EPSILONS.to_vec() } else { epsilons };
            if let Some(e) = epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
                return Err(CliError::Usage(format!("--epsilons: {e} is not in [0, 1]")));
            }
            if repeats == 0 {
                return Err(CliError::Usage("--repeats must be positive".into()));
            }
            let mut m = RunManifest::new(
                "eval epsilon",
                json!({"seed": seed, "repeats": repeats, "epsilons": epsilons, "fixture": source.fixture.map(|f| format!("{f:?}"))}),
            );
            let st = load_study(&mut m, &source, Fixture::Epsilon)?;
            let input = StudyInput {
                store: &st.scenario.store,
                clusters: &st.scenario.clusters,
                tagdb: &st.scenario.tagdb,
                seeds: &st.scenario.seeds,
                config: &st.config,
                families: &st.families,
            };
            let base = SetClassifier::new(st.scenario.exchanges.iter().cloned());
            let jobs = epsilon_jobs(&epsilons, &[InjectMode::InjectCfp, InjectMode::InjectCfn], repeats, seed);
            let study = m
                .time("study", || parallel::epsilon_study(&input, &base, &jobs))
                .map_err(data)?;
            let out = ctx.out.resolve(&out)?;
            write_curve(&out, &study.curve)?;
            m.output("curve", &out)?;
            if let Some(r) = &runs {
                let r = ctx.out.resolve(r)?;
                write_json(&r, &study)?;
                m.output("runs", &r)?;
            }
            ctx.finish(m, &common.manifest, &out)
        }
        Study::Ablation {
            source,
            limit,
            out,
            common,
        } => {
            let mut m = RunManifest::new(
                "eval ablation",
                json!({"limit": limit, "fixture": source.fixture.map(|f| format!("{f:?}"))}),
            );
            let st = load_study(&mut m, &source, Fixture::Hub)?;
            let input = StudyInput {
                store: &st.scenario.store,
                clusters: &st.scenario.clusters,
                tagdb: &st.scenario.tagdb,
                seeds: &st.scenario.seeds,
                config: &st.config,
                families: &st.families,
            };
            let base = SetClassifier::new(st.scenario.exchanges.iter().cloned());
            let clock = SystemClock::new();
            let report = m
                .time("study", || run_ablation(&input, &base, limit, &clock))
                .map_err(data)?;
            // Wall-clock figures go to the manifest so the report itself is
            // reproducible.
            m.timings_ms.insert("enabled_runtime".into(), report.enabled.runtime_us as f64 / 1e3);
            m.timings_ms.insert("disabled_runtime".into(), report.disabled.runtime_us as f64 / 1e3);
            let mut doc = serde_json::to_value(&report).expect("report serializes");
            if let serde_json::Value::Object(o) = &mut doc {
                o.remove("runtime_factor");
                for k in ["enabled", "disabled"] {
                    if let Some(serde_json::Value::Object(r)) = o.get_mut(k) {
                        r.remove("runtime_us");
                    }
                }
            }
            let out = ctx.out.resolve(&out)?;
            write_json(&out, &doc)?;
            m.output("ablation", &out)?;
            ctx.finish(m, &common.manifest, &out)
        }
        Study::Directions {
            source,
            no_classifier,
            out,
            common,
        } => {
            let mut m = RunManifest::new(
                "eval directions",
                json!({"classifier": !no_classifier, "fixture": source.fixture.map(|f| format!("{f:?}"))}),
            );
            let st = load_study(&mut m, &source, Fixture::Fig2)?;
            let input = StudyInput {
                store: &st.scenario.store,
                clusters: &st.scenario.clusters,
                tagdb: &st.scenario.tagdb,
                seeds: &st.scenario.seeds,
                config: &st.config,
                families: &st.families,
            };
            let base = SetClassifier::new(st.scenario.exchanges.iter().cloned());
            let cls = (!no_classifier).then_some(&base as &dyn ExchangeClassifier);
            let cmp = m.time("study", || compare_directions(&input, cls)).map_err(data)?;
            let out = ctx.out.resolve(&out)?;
            write_json(&out, &cmp)?;
            m.output("comparison", &out)?;
            ctx.finish(m, &common.manifest, &out)
        }
    }
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => crate::jsonio::read_json::<SynthSpec>(p)?,
        None => SynthSpec::default(),
    };
    spec.seed = a.seed;
    if let Some(v) = a.users {
        spec.users = v;
    }
    if let Some(v) = a.exchanges {
        spec.exchanges = v;
    }
    if let Some(v) = a.hot_addresses {
        spec.hot_addresses = v;
    }
    if let Some(v) = a.blocks {
        spec.blocks = v;
    }
    if let Some(v) = a.transactions {
        spec.transactions = v;
    }
    spec.planted.extend(a.plants.iter().cloned());
    if spec.users < 2 || spec.exchanges == 0 || spec.hot_addresses == 0 || spec.blocks == 0 {
        return Err(CliError::Usage(
            "--users must be at least 2 and --exchanges, --hot-addresses, --blocks positive".into(),
        ));
    }
    let mut m = RunManifest::new("synth", serde_json::to_value(&spec).expect("spec serializes"));
    if let Some(p) = &a.spec {
        m.input("spec", p)?;
    }
    let chain = m.time("generate", || generate_chain(&spec));
    let dir = ctx.out.resolve(&a.out_dir.join("chain.jsonl"))?;
    let dir = dir.parent().map(Path::to_path_buf).unwrap_or_default();
    let files = [
        ("chain", dir.join("chain.jsonl")),
        ("tags", dir.join("tags.csv")),
        ("manifest", dir.join("manifest.json")),
        ("seeds", dir.join("seeds.txt")),
        ("exchanges", dir.join("exchanges.txt")),
        ("glupteba_params", dir.join("glupteba.json")),
    ];
    write_transactions(&files[0].1, &chain.transactions)?;
    write_tags(&files[1].1, &chain.tags)?;
    write_json(&files[2].1, &chain.manifest)?;
    write_address_list(&files[3].1, &chain.manifest.seeds)?;
    write_address_list(&files[4].1, &chain.manifest.classifier_exchanges)?;
    write_json(&files[5].1, &json!({"keys": [chain.manifest.glupteba_key]}))?;
    for (role, p) in &files {
        m.output(role, p)?;
    }
    m.write(&dir.join("run.manifest.json"))?;
    Ok(())
}
