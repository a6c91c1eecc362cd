//! End-to-end runs: ingest, graph, training, clustering, indexing, labels
//! and (with ground truth) metrics.
//!
//! Each stage is a plain function so a run can be replayed piecewise from
//! files; [`run_pipeline`] is their composition.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster, mac_frequency_profile, Clustering, ClusteringError, ClusteringMethod};
use crate::gnn::{train, Aggregator, EmbeddingTable, GnnConfig, GnnError, TrainReport};
use crate::graph::{build_graph, GraphError};
use crate::indexing::{
    assign_labels, build_similarity, index_arbitrary_anchor, index_bottom_anchor, FloorOrdering, IndexingError,
    SimilarityMethod, Solver, SolverConfig,
};
use crate::ingest::{load_dataset, Dataset, IngestError, RSS_OFFSET_DBM};
use crate::metrics::{evaluate, MetricsError, MetricsReport};

/// Where the labeled scan is assumed to be.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// The anchor is on floor 1 and takes part in clustering.
    #[default]
    Bottom,
    /// The anchor may be on any floor; it is held out of clustering.
    Arbitrary,
}

/// The constant added to every reading to form an edge weight. Serialized
/// as a number or the string `"tight"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RssOffset {
    Fixed(f64),
    /// One more than the weakest reading's magnitude, so the weakest edge
    /// weighs 1.
    Rule(OffsetRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetRule {
    Tight,
}

impl Default for RssOffset {
    fn default() -> Self {
        Self::Fixed(RSS_OFFSET_DBM)
    }
}

impl RssOffset {
    pub const TIGHT: Self = Self::Rule(OffsetRule::Tight);

    pub fn resolve(self, dataset: &Dataset) -> f64 {
        match self {
            Self::Fixed(c) => c,
            Self::Rule(OffsetRule::Tight) => {
                let weakest =
                    dataset.records().iter().flat_map(|r| r.readings.iter().map(|x| x.rss)).fold(0.0, f64::min);
                1.0 - weakest
            }
        }
    }
}

impl std::str::FromStr for RssOffset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tight" => Ok(Self::TIGHT),
            _ => s.parse().map(Self::Fixed).map_err(|_| format!("expected a number or \"tight\", got {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub floor_count: usize,
    pub mode: AnchorMode,
    pub gnn: GnnConfig,
    pub clustering: ClusteringMethod,
    pub similarity: SimilarityMethod,
    pub solver: Solver,
    pub solver_restarts: usize,
    /// Overrides `gnn.aggregator`.
    pub aggregator: Aggregator,
    /// Seeds training, k-means and 2-opt.
    pub seed: u64,
    /// Directory for artifacts; nothing is written when absent.
    pub output: Option<PathBuf>,
    /// dBm offset turning readings into edge weights.
    pub rss_offset: RssOffset,
    pub min_floor_samples: Option<usize>,
    /// Serial execution and reductions everywhere.
    pub deterministic: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            floor_count: 5,
            mode: AnchorMode::Bottom,
            gnn: GnnConfig::default(),
            clustering: ClusteringMethod::Hierarchical,
            similarity: SimilarityMethod::Adapted,
            solver: Solver::Auto,
            solver_restarts: SolverConfig::default().restarts,
            aggregator: Aggregator::Weighted,
            seed: 0,
            output: None,
            rss_offset: RssOffset::default(),
            min_floor_samples: None,
            deterministic: false,
        }
    }
}

impl PipelineConfig {
    /// The GNN settings actually used: seed, aggregator and determinism
    /// come from the top level.
    pub fn effective_gnn(&self) -> GnnConfig {
        GnnConfig {
            seed: self.seed,
            aggregator: self.aggregator,
            deterministic: self.deterministic || self.gnn.deterministic,
            ..self.gnn.clone()
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { solver: self.solver, restarts: self.solver_restarts, seed: self.seed }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    InvalidConfig(String),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("train: {0}")]
    Gnn(#[from] GnnError),
    #[error("cluster: {0}")]
    Clustering(#[from] ClusteringError),
    #[error("index: {0}")]
    Indexing(#[from] IndexingError),
    #[error("eval: {0}")]
    Metrics(#[from] MetricsError),
    #[error("labels line {line}: {message}")]
    Labels { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// 0 is success; 1 I/O, 2 invalid input, 3 unindexable anchor floor,
    /// 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io(_) | Self::Json(_) => 1,
            Self::Ingest(IngestError::Io(_))
            | Self::Gnn(GnnError::Io(_))
            | Self::Clustering(ClusteringError::Io(_)) => 1,
            Self::Indexing(IndexingError::MiddleFloorAnchor { .. }) => 3,
            Self::Indexing(IndexingError::AmbiguousOrientation { .. }) => 4,
            Self::Gnn(GnnError::NonFiniteLoss { .. }) => 4,
            _ => 2,
        }
    }
}

/// Rejects configs that contradict the data.
pub fn check_consistency(dataset: &Dataset, config: &PipelineConfig) -> Result<(), PipelineError> {
    let anchor_floor = dataset.anchor().floor.expect("validated anchor carries a floor");
    if config.mode == AnchorMode::Bottom && anchor_floor != 1 {
        return Err(PipelineError::InvalidConfig(format!(
            "bottom mode needs the anchor on floor 1, found floor {anchor_floor}"
        )));
    }
    if dataset.floor_count() != config.floor_count {
        return Err(PipelineError::InvalidConfig(format!(
            "dataset loaded for {} floors but config asks for {}",
            dataset.floor_count(),
            config.floor_count
        )));
    }
    Ok(())
}

pub fn load(config: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let ds = load_dataset(&config.dataset, config.floor_count, config.min_floor_samples)?;
    check_consistency(&ds, config)?;
    Ok(ds)
}

/// Graph construction and training.
pub fn embed_stage(dataset: &Dataset, config: &PipelineConfig) -> Result<(EmbeddingTable, TrainReport), PipelineError> {
    let graph = build_graph(dataset, config.rss_offset.resolve(dataset))?;
    let (_, table, report) = train(&graph, &config.effective_gnn())?;
    Ok((table, report))
}

fn holdout(dataset: &Dataset, config: &PipelineConfig) -> Option<usize> {
    (config.mode == AnchorMode::Arbitrary).then(|| dataset.anchor_index())
}

pub fn cluster_stage(
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    config: &PipelineConfig,
) -> Result<Clustering, PipelineError> {
    let rows = embeddings.sample_rows();
    if rows.len() != dataset.records().len() {
        return Err(PipelineError::InvalidConfig(format!(
            "{} embedding rows for {} records",
            rows.len(),
            dataset.records().len()
        )));
    }
    Ok(cluster(config.clustering, &rows, config.floor_count, holdout(dataset, config), config.seed)?)
}

/// Similarity, path solving and per-record floors.
pub fn index_stage(
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    clustering: &Clustering,
    config: &PipelineConfig,
) -> Result<(FloorOrdering, Vec<u32>), PipelineError> {
    let profile = mac_frequency_profile(clustering, dataset);
    let sim = build_similarity(&profile, config.similarity);
    let solver = config.solver_config();
    let anchor = dataset.anchor_index();
    match config.mode {
        AnchorMode::Bottom => {
            let cluster = clustering
                .cluster_of(anchor)
                .ok_or_else(|| PipelineError::InvalidConfig("anchor was held out in bottom mode".into()))?;
            let ordering = index_bottom_anchor(&sim, cluster, &solver)?;
            let labels = assign_labels(&ordering, clustering, None);
            Ok((ordering, labels))
        }
        AnchorMode::Arbitrary => {
            let floor = dataset.anchor().floor.expect("validated anchor carries a floor");
            let rows = embeddings.sample_rows();
            let ordering =
                index_arbitrary_anchor(clustering, &sim, &rows, embeddings.sample_row(anchor), floor, &solver)?;
            let labels = assign_labels(&ordering, clustering, Some((anchor, floor)));
            Ok((ordering, labels))
        }
    }
}

/// Scores labels when every record carries a ground-truth floor.
pub fn eval_stage(dataset: &Dataset, labels: &[u32]) -> Result<Option<MetricsReport>, PipelineError> {
    if !dataset.has_ground_truth() {
        return Ok(None);
    }
    Ok(Some(evaluate(labels, &dataset.ground_truth()?)?))
}

/// "sample_id floor" per record, in dataset order.
pub fn write_labels<W: Write>(dataset: &Dataset, labels: &[u32], mut out: W) -> std::io::Result<()> {
    for (r, f) in dataset.records().iter().zip(labels) {
        writeln!(out, "{} {}", r.id, f)?;
    }
    out.flush()
}

pub fn read_labels<R: BufRead>(dataset: &Dataset, reader: R) -> Result<Vec<u32>, PipelineError> {
    let index: BTreeMap<&str, usize> = dataset.records().iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut labels = vec![None; dataset.records().len()];
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |message: String| PipelineError::Labels { line: n + 1, message };
        let mut parts = line.split_whitespace();
        let (Some(id), Some(floor), None) = (parts.next(), parts.next(), parts.next()) else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(bad("expected `sample_id floor`".into()));
        };
        let &i = index.get(id).ok_or_else(|| bad(format!("unknown sample {id}")))?;
        let floor: u32 = floor.parse().map_err(|_| bad(format!("bad floor {floor}")))?;
        if labels[i].replace(floor).is_some() {
            return Err(bad(format!("sample {id} labeled twice")));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            f.ok_or_else(|| PipelineError::Labels {
                line: 0,
                message: format!("sample {} has no label", dataset.records()[i].id),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub seed: u64,
    pub records: usize,
    pub macs: usize,
    pub training: TrainReport,
    pub cluster_sizes: Vec<usize>,
    pub ordering: FloorOrdering,
    pub metrics: Option<MetricsReport>,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub timings: Vec<StageTiming>,
}

impl RunReport {
    /// The report with timings cleared, for comparing runs.
    pub fn without_timings(&self) -> Self {
        Self { timings: Vec::new(), ..self.clone() }
    }
}

/// Everything a run produced, in memory.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub report: RunReport,
    pub embeddings: EmbeddingTable,
    pub clustering: Clustering,
    pub labels: Vec<u32>,
}

struct Stopwatch(Vec<StageTiming>, Instant);

impl Stopwatch {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.0.push(StageTiming { stage: stage.into(), seconds: (now - self.1).as_secs_f64() });
        self.1 = now;
    }
}

/// Runs every stage from the dataset file named in `config`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    let mut clock = Stopwatch(Vec::new(), Instant::now());
    let dataset = load(config)?;
    clock.lap("ingest");
    embed_and_finish(&dataset, config, clock)
}

/// Runs every stage after ingest on an already loaded dataset.
pub fn run_on_dataset(dataset: &Dataset, config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    embed_and_finish(dataset, config, Stopwatch(Vec::new(), Instant::now()))
}

fn embed_and_finish(
    dataset: &Dataset,
    config: &PipelineConfig,
    mut clock: Stopwatch,
) -> Result<PipelineRun, PipelineError> {
    check_consistency(dataset, config)?;
    let (embeddings, training) = embed_stage(dataset, config)?;
    clock.lap("embed");
    finish(dataset, embeddings, training, config, clock)
}

/// Clustering, indexing, labels and metrics over precomputed embeddings.
/// Writes artifacts when `config.output` is set.
pub fn run_from_embeddings(
    dataset: &Dataset,
    embeddings: EmbeddingTable,
    training: TrainReport,
    config: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    finish(dataset, embeddings, training, config, Stopwatch(Vec::new(), Instant::now()))
}

fn finish(
    dataset: &Dataset,
    embeddings: EmbeddingTable,
    training: TrainReport,
    config: &PipelineConfig,
    mut clock: Stopwatch,
) -> Result<PipelineRun, PipelineError> {
    let clustering = cluster_stage(dataset, &embeddings, config)?;
    clock.lap("cluster");
    let (ordering, labels) = index_stage(dataset, &embeddings, &clustering, config)?;
    clock.lap("index");
    let metrics = eval_stage(dataset, &labels)?;
    clock.lap("eval");

    let mut report = RunReport {
        config: config.clone(),
        seed: config.seed,
        records: dataset.records().len(),
        macs: dataset.mac_universe().len(),
        training,
        cluster_sizes: clustering.sizes(),
        ordering,
        metrics,
        artifacts: BTreeMap::new(),
        timings: Vec::new(),
    };
    if let Some(dir) = &config.output {
        report.artifacts = write_artifacts(dir, dataset, &embeddings, &clustering, &labels)?;
        clock.lap("write");
    }
    report.timings = clock.0;
    if let Some(dir) = &config.output {
        write_report(&report, dir.join(REPORT_FILE))?;
    }
    Ok(PipelineRun { report, embeddings, clustering, labels })
}

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const CLUSTERS_FILE: &str = "clusters.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const REPORT_FILE: &str = "report.json";

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_artifacts(
    dir: &Path,
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    clustering: &Clustering,
    labels: &[u32],
) -> Result<BTreeMap<String, PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut paths = BTreeMap::new();
    let path = dir.join(EMBEDDINGS_FILE);
    embeddings.write_text(create(&path)?)?;
    paths.insert("embeddings".into(), path);
    let path = dir.join(CLUSTERS_FILE);
    clustering.write_assignment(dataset, create(&path)?)?;
    paths.insert("clusters".into(), path);
    let path = dir.join(LABELS_FILE);
    write_labels(dataset, labels, create(&path)?)?;
    paths.insert("labels".into(), path);
    paths.insert("report".into(), dir.join(REPORT_FILE));
    Ok(paths)
}

pub fn write_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let mut out = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut out, report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, PipelineError> {
    Ok(EmbeddingTable::read_text(BufReader::new(File::open(path)?))?)
}

pub fn read_clustering(dataset: &Dataset, path: impl AsRef<Path>) -> Result<Clustering, PipelineError> {
    Ok(Clustering::read_assignment(dataset, BufReader::new(File::open(path)?))?)
}
