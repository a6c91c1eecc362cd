//! `floorid` command line: synthetic data generation, the individual
//! pipeline stages, and full runs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use floorid::clustering::Clustering;
use floorid::ingest::load_dataset;
use floorid::pipeline::{
    self, cluster_stage, embed_stage, eval_stage, index_stage, read_clustering, read_embeddings, read_labels,
    write_labels, write_report, PipelineConfig, PipelineError, RssOffset,
};
use floorid::synth::{self, BuildingSpec, SynthError};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "floorid", version, about = "Floor identification for crowdsourced RF scans")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Serial execution with fixed reduction order.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic building (or a suite of them with --suite).
    Generate(GenerateArgs),
    /// Train the GNN and write the embedding table.
    Embed(StageArgs),
    /// Cluster sample embeddings into floors.
    Cluster(StageArgs),
    /// Order clusters into floors and write per-record labels.
    Index(StageArgs),
    /// Score a label file against the dataset's ground truth.
    Eval(EvalArgs),
    /// Every stage end to end.
    Run(StageArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Building spec as JSON; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of floors.
    #[arg(long)]
    floors: Option<usize>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Floor of the labeled scan (default 1).
    #[arg(long)]
    anchor_floor: Option<u32>,
    #[arg(long)]
    samples_per_floor: Option<usize>,
    #[arg(long)]
    aps_per_floor: Option<usize>,
    /// Output file, or directory with --suite.
    #[arg(long, short)]
    out: PathBuf,
    /// Generate every floor count in --suite-floors under every seed in
    /// --suite-seeds and write a manifest.
    #[arg(long)]
    suite: bool,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6,7,8")]
    suite_floors: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    suite_seeds: Vec<u64>,
}

/// Pipeline settings; any flag given overrides the --config file.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON pipeline config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON Lines scan file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of floors to find.
    #[arg(long)]
    floors: Option<usize>,
    /// bottom | arbitrary
    #[arg(long, value_parser = parse_enum::<pipeline::AnchorMode>)]
    mode: Option<pipeline::AnchorMode>,
    /// hierarchical | kmeans
    #[arg(long, value_parser = parse_enum::<floorid::clustering::ClusteringMethod>)]
    clustering: Option<floorid::clustering::ClusteringMethod>,
    /// adapted | plain
    #[arg(long, value_parser = parse_enum::<floorid::indexing::SimilarityMethod>)]
    similarity: Option<floorid::indexing::SimilarityMethod>,
    /// exact | two_opt | auto
    #[arg(long, value_parser = parse_enum::<floorid::indexing::Solver>)]
    solver: Option<floorid::indexing::Solver>,
    /// Random starts for 2-opt.
    #[arg(long)]
    restarts: Option<usize>,
    /// weighted | uniform
    #[arg(long, value_parser = parse_enum::<floorid::gnn::Aggregator>)]
    aggregator: Option<floorid::gnn::Aggregator>,
    /// Seeds training, k-means and 2-opt.
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Per-hop neighbor counts, e.g. 10,10.
    #[arg(long, value_delimiter = ',')]
    fanout: Option<Vec<usize>>,
    /// Random walks started at every node.
    #[arg(long)]
    walks_per_node: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// dBm offset for edge weights, or "tight".
    #[arg(long)]
    rss_offset: Option<RssOffset>,
    /// Drop floors with fewer labeled samples than this.
    #[arg(long)]
    min_floor_samples: Option<usize>,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Embedding table from `embed`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Cluster assignment from `cluster`.
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Output file (stages) or directory (`run`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON Lines scan file with ground-truth floors.
    #[arg(long)]
    dataset: PathBuf,
    /// Number of floors.
    #[arg(long)]
    floors: usize,
    /// "sample_id floor" per line.
    #[arg(long)]
    labels: PathBuf,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

impl ConfigArgs {
    fn resolve(&self, deterministic: bool) -> anyhow::Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::from_json_file(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone(); })*
            };
        }
        set!(
            dataset => dataset, floors => floor_count, mode => mode, clustering => clustering,
            similarity => similarity, solver => solver, restarts => solver_restarts,
            aggregator => aggregator, seed => seed, dim => gnn.dim, fanout => gnn.fanout,
            walks_per_node => gnn.walks_per_node, epochs => gnn.epochs, batch_size => gnn.batch_size,
            learning_rate => gnn.learning_rate, rss_offset => rss_offset,
        );
        if self.min_floor_samples.is_some() {
            c.min_floor_samples = self.min_floor_samples;
        }
        c.deterministic |= deterministic;
        if c.dataset.as_os_str().is_empty() {
            bail!(PipelineError::InvalidConfig("no dataset given (--dataset or config file)".into()));
        }
        Ok(c)
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| PipelineError::InvalidConfig(format!("--{flag} is required")).into())
}

fn generate(args: &GenerateArgs) -> anyhow::Result<()> {
    let mut spec = match &args.spec {
        Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?,
        None => BuildingSpec::default(),
    };
    if let Some(v) = args.floors {
        spec.floors = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.anchor_floor {
        spec.anchor_floor = v;
    }
    if let Some(v) = args.samples_per_floor {
        spec.samples_per_floor = v;
    }
    if let Some(v) = args.aps_per_floor {
        spec.aps_per_floor = v;
    }
    if args.suite {
        let specs: Vec<BuildingSpec> =
            args.suite_floors.iter().map(|&floors| BuildingSpec { floors, ..spec.clone() }).collect();
        let entries = synth::generate_suite(&specs, &args.suite_seeds)?;
        let manifest = synth::write_suite(&entries, &args.out)?;
        println!("wrote {} datasets and manifest.json to {}", manifest.len(), args.out.display());
    } else {
        let ds = synth::generate(&spec)?;
        ds.write_jsonl(create(&args.out)?)?;
        println!("wrote {} records to {}", ds.records().len(), args.out.display());
    }
    Ok(())
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Embed(args) => {
            let config = args.config.resolve(cli.deterministic)?;
            let ds = pipeline::load(&config)?;
            let (table, report) = embed_stage(&ds, &config)?;
            table.write_text(create(required(&args.out, "out")?)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Cluster(args) => {
            let config = args.config.resolve(cli.deterministic)?;
            let ds = pipeline::load(&config)?;
            let table = read_embeddings(required(&args.embeddings, "embeddings")?)?;
            let clustering = cluster_stage(&ds, &table, &config)?;
            clustering.write_assignment(&ds, create(required(&args.out, "out")?)?)?;
            println!("cluster sizes {:?}", clustering.sizes());
            Ok(())
        }
        Command::Index(args) => {
            let config = args.config.resolve(cli.deterministic)?;
            let ds = pipeline::load(&config)?;
            let table = read_embeddings(required(&args.embeddings, "embeddings")?)?;
            let clustering: Clustering = read_clustering(&ds, required(&args.clusters, "clusters")?)?;
            let (ordering, labels) = index_stage(&ds, &table, &clustering, &config)?;
            write_labels(&ds, &labels, create(required(&args.out, "out")?)?)?;
            println!("{}", serde_json::to_string_pretty(&ordering)?);
            Ok(())
        }
        Command::Eval(args) => {
            let ds = load_dataset(&args.dataset, args.floors, None).map_err(PipelineError::from)?;
            let labels = read_labels(&ds, BufReader::new(File::open(&args.labels)?))?;
            let Some(report) = eval_stage(&ds, &labels)? else {
                bail!(PipelineError::InvalidConfig("dataset has no ground-truth floors".into()));
            };
            match &args.out {
                Some(path) => write_report(&report, path)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            Ok(())
        }
        Command::Run(args) => {
            let mut config = args.config.resolve(cli.deterministic)?;
            if args.out.is_some() {
                config.output = args.out.clone();
            }
            let run = pipeline::run_pipeline(&config)?;
            if config.output.is_none() {
                let mut out = std::io::stdout().lock();
                write_labels(&pipeline::load(&config)?, &run.labels, &mut out)?;
                out.flush()?;
            }
            eprintln!("{}", serde_json::to_string_pretty(&run.report)?);
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<PipelineError>() {
        return e.exit_code() as u8;
    }
    match err.downcast_ref::<SynthError>() {
        Some(SynthError::Io(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
