//! Crowdsourced scan datasets: JSON Lines parsing, validation and summaries.
//!
//! One record per line:
//!
//! ```text
//! {"id": "s17", "floor": 3, "anchor": false, "scan": [{"mac": "aa:bb:cc:dd:ee:ff", "rss": -61.0}]}
//! ```
//!
//! `floor` may be `null` or absent, `anchor` defaults to `false`. Every load
//! path enforces the single-anchor contract.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

/// Offset `c` in dBm such that `rss + c > 0` for every admissible reading.
pub const RSS_OFFSET_DBM: f64 = 120.0;

/// Smallest building height accepted; two-story buildings are trivially indexed.
pub const MIN_FLOOR_COUNT: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("record {id}: empty readings")]
    EmptyReadings { id: String },
    #[error("record {id}: mac {mac} appears more than once")]
    DuplicateMac { id: String, mac: String },
    #[error("record {id}: duplicate record id")]
    DuplicateId { id: String },
    #[error("record {id}: rss out of range for mac {mac}: {rss} (expected within (-{RSS_OFFSET_DBM}, 0])")]
    RssOutOfRange { id: String, mac: String, rss: f64 },
    #[error("record {id}: anchor record must carry a floor")]
    AnchorWithoutFloor { id: String },
    #[error("exactly one anchor required, found {0}")]
    AnchorCount(usize),
    #[error("floor count must be at least {MIN_FLOOR_COUNT}, got {0}")]
    FloorCountTooSmall(usize),
    #[error("{records} records cannot fill {floors} floors")]
    TooFewRecords { records: usize, floors: usize },
    #[error("ground-truth floors required but record {id} has none")]
    MissingGroundTruth { id: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub mac: String,
    pub rss: f64,
}

/// One crowdsourced RF scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub id: String,
    /// Ground-truth floor, 1 = bottom.
    #[serde(default)]
    pub floor: Option<u32>,
    #[serde(default)]
    pub anchor: bool,
    #[serde(rename = "scan")]
    pub readings: Vec<Reading>,
}

impl ScanRecord {
    fn validate(&self) -> Result<(), IngestError> {
        if self.readings.is_empty() {
            return Err(IngestError::EmptyReadings { id: self.id.clone() });
        }
        let mut seen = HashSet::with_capacity(self.readings.len());
        for r in &self.readings {
            if !seen.insert(r.mac.as_str()) {
                return Err(IngestError::DuplicateMac { id: self.id.clone(), mac: r.mac.clone() });
            }
            // NaN fails both comparisons.
            if !(r.rss > -RSS_OFFSET_DBM && r.rss <= 0.0) {
                return Err(IngestError::RssOutOfRange { id: self.id.clone(), mac: r.mac.clone(), rss: r.rss });
            }
        }
        if self.anchor && self.floor.is_none() {
            return Err(IngestError::AnchorWithoutFloor { id: self.id.clone() });
        }
        Ok(())
    }
}

/// A validated, immutable collection of scans for one building.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<ScanRecord>,
    mac_universe: IndexSet<String>,
    floor_count: usize,
    anchor: usize,
}

impl Dataset {
    /// Validates `records` against every dataset invariant.
    pub fn new(records: Vec<ScanRecord>, floor_count: usize) -> Result<Self, IngestError> {
        if floor_count < MIN_FLOOR_COUNT {
            return Err(IngestError::FloorCountTooSmall(floor_count));
        }
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !ids.insert(r.id.as_str()) {
                return Err(IngestError::DuplicateId { id: r.id.clone() });
            }
        }
        let anchors: Vec<usize> = records.iter().enumerate().filter(|(_, r)| r.anchor).map(|(i, _)| i).collect();
        if anchors.len() != 1 {
            return Err(IngestError::AnchorCount(anchors.len()));
        }
        if records.len() < floor_count {
            return Err(IngestError::TooFewRecords { records: records.len(), floors: floor_count });
        }
        let mut mac_universe = IndexSet::new();
        for r in &records {
            for reading in &r.readings {
                if !mac_universe.contains(reading.mac.as_str()) {
                    mac_universe.insert(reading.mac.clone());
                }
            }
        }
        Ok(Self { records, mac_universe, floor_count, anchor: anchors[0] })
    }

    pub fn records(&self) -> &[ScanRecord] {
        &self.records
    }

    /// Distinct MACs in first-seen order.
    pub fn mac_universe(&self) -> &IndexSet<String> {
        &self.mac_universe
    }

    pub fn floor_count(&self) -> usize {
        self.floor_count
    }

    /// Index of the single anchor record.
    pub fn anchor_index(&self) -> usize {
        self.anchor
    }

    pub fn anchor(&self) -> &ScanRecord {
        &self.records[self.anchor]
    }

    pub fn reading_count(&self) -> usize {
        self.records.iter().map(|r| r.readings.len()).sum()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.records.iter().all(|r| r.floor.is_some())
    }

    /// Ground-truth floor of every record, or the first record lacking one.
    pub fn ground_truth(&self) -> Result<Vec<u32>, IngestError> {
        self.records
            .iter()
            .map(|r| r.floor.ok_or_else(|| IngestError::MissingGroundTruth { id: r.id.clone() }))
            .collect()
    }

    /// Writes the dataset back out as JSON Lines.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()
    }
}

/// Parses JSON Lines records. Blank lines are skipped; line numbers are 1-based.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<ScanRecord>, IngestError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScanRecord =
            serde_json::from_str(&line).map_err(|source| IngestError::Malformed { line: idx + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

/// Drops labeled records whose floor has fewer than `min_samples` records.
/// Unlabeled records are kept.
pub fn filter_sparse_floors(records: Vec<ScanRecord>, min_samples: usize) -> Vec<ScanRecord> {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for r in &records {
        if let Some(f) = r.floor {
            *counts.entry(f).or_default() += 1;
        }
    }
    records.into_iter().filter(|r| r.floor.is_none_or(|f| counts[&f] >= min_samples)).collect()
}

/// Loads and validates a JSON Lines dataset.
pub fn load_dataset(
    path: impl AsRef<Path>,
    floor_count: usize,
    min_samples_per_floor: Option<usize>,
) -> Result<Dataset, IngestError> {
    let file = File::open(path)?;
    read_dataset(BufReader::new(file), floor_count, min_samples_per_floor)
}

pub fn read_dataset<R: BufRead>(
    reader: R,
    floor_count: usize,
    min_samples_per_floor: Option<usize>,
) -> Result<Dataset, IngestError> {
    let mut records = parse_records(reader)?;
    if let Some(min) = min_samples_per_floor {
        records = filter_sparse_floors(records, min);
    }
    Dataset::new(records, floor_count)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub macs: usize,
    pub readings: usize,
    /// Records per ground-truth floor, present when every record is labeled.
    pub floor_counts: Option<BTreeMap<u32, usize>>,
    /// `span_histogram[k]` = number of MACs detected on exactly `k` floors.
    pub span_histogram: Option<Vec<usize>>,
    /// `shared_by_gap[g]` = mean number of MACs shared by floor pairs `g` apart.
    pub shared_by_gap: Option<Vec<f64>>,
}

pub fn summarize(dataset: &Dataset) -> DatasetSummary {
    let labeled = dataset.has_ground_truth();
    let floor_counts = labeled.then(|| {
        let mut counts = BTreeMap::new();
        for r in dataset.records() {
            *counts.entry(r.floor.unwrap_or_default()).or_default() += 1;
        }
        counts
    });
    DatasetSummary {
        records: dataset.records().len(),
        macs: dataset.mac_universe().len(),
        readings: dataset.reading_count(),
        floor_counts,
        span_histogram: span_histogram(dataset).ok(),
        shared_by_gap: shared_macs_by_gap(dataset).ok(),
    }
}

/// Floors on which each MAC is detected, keyed by MAC universe index.
fn floors_per_mac(dataset: &Dataset) -> Result<Vec<BTreeSet<u32>>, IngestError> {
    let mut floors = vec![BTreeSet::new(); dataset.mac_universe().len()];
    for r in dataset.records() {
        let f = r.floor.ok_or_else(|| IngestError::MissingGroundTruth { id: r.id.clone() })?;
        for reading in &r.readings {
            let k =
                dataset.mac_universe().get_index_of(reading.mac.as_str()).expect("mac universe covers every reading");
            floors[k].insert(f);
        }
    }
    Ok(floors)
}

/// Histogram of how many floors each MAC spans. A MAC seen on `k` distinct
/// floors is counted once, in bin `k`. Bin 0 is always empty.
pub fn span_histogram(dataset: &Dataset) -> Result<Vec<usize>, IngestError> {
    let floors = floors_per_mac(dataset)?;
    let distinct: BTreeSet<u32> = floors.iter().flatten().copied().collect();
    let mut bins = vec![0usize; distinct.len() + 1];
    for set in &floors {
        bins[set.len()] += 1;
    }
    Ok(bins)
}

/// Mean count of MACs detected on both floors of a pair, grouped by the
/// floor gap `|a - b|`. Index 0 holds the mean per-floor MAC count.
pub fn shared_macs_by_gap(dataset: &Dataset) -> Result<Vec<f64>, IngestError> {
    let floors = floors_per_mac(dataset)?;
    let distinct: Vec<u32> = floors.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let max_gap = distinct.len().saturating_sub(1);
    let mut sums = vec![0.0; max_gap + 1];
    let mut pairs = vec![0usize; max_gap + 1];
    for (ai, &a) in distinct.iter().enumerate() {
        for &b in &distinct[ai..] {
            let gap = (b - a) as usize;
            if gap > max_gap {
                continue;
            }
            let shared = floors.iter().filter(|s| s.contains(&a) && s.contains(&b)).count();
            sums[gap] += shared as f64;
            pairs[gap] += 1;
        }
    }
    Ok(sums.into_iter().zip(pairs).map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 }).collect())
}
