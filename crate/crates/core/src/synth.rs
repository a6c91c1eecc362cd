//! Synthetic multi-floor buildings with tunable signal spillover.
//!
//! Access points and scan positions are drawn uniformly over each floor's
//! footprint. Received strength follows a log-distance law with a fixed
//! loss per concrete slab crossed:
//!
//! ```text
//! rss = p0 - 10 n log10(max(d, 1)) - faf * slabs + N(0, sigma)
//! ```
//!
//! A slab crossed inside the optional atrium disc costs nothing.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{Dataset, IngestError, Reading, ScanRecord, MIN_FLOOR_COUNT, RSS_OFFSET_DBM};

/// Access-point mounting height above the floor, meters.
const AP_HEIGHT: f64 = 2.5;
/// Handheld device height above the floor, meters.
const DEVICE_HEIGHT: f64 = 1.2;
/// Strongest reading emitted.
const RSS_CEILING: f64 = -0.01;
/// Weakest reading emitted; stays inside the ingest range.
const RSS_FLOOR: f64 = -(RSS_OFFSET_DBM - 0.01);

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid building spec: {0}")]
    InvalidSpec(String),
    #[error("floor {floor} produced no detections; parameters are infeasible")]
    EmptyFloor { floor: u32 },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest encoding: {0}")]
    Json(#[from] serde_json::Error),
}

/// Open vertical shaft through every slab, as an `(x, y)` disc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atrium {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

impl Atrium {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center_x, y - self.center_y);
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildingSpec {
    pub floors: usize,
    pub floor_height: f64,
    pub width: f64,
    pub depth: f64,
    pub aps_per_floor: usize,
    pub samples_per_floor: usize,
    /// Received power at 1 m, dBm.
    pub tx_power: f64,
    pub path_loss_exponent: f64,
    /// Loss per slab crossed, dB.
    pub floor_attenuation: f64,
    pub noise_sigma: f64,
    /// Weakest detectable reading, dBm.
    pub detect_threshold: f64,
    pub atrium: Option<Atrium>,
    /// Floor of the single labeled record.
    pub anchor_floor: u32,
    pub seed: u64,
}

impl Default for BuildingSpec {
    fn default() -> Self {
        Self {
            floors: 5,
            floor_height: 4.0,
            width: 80.0,
            depth: 40.0,
            aps_per_floor: 20,
            samples_per_floor: 200,
            tx_power: -40.0,
            path_loss_exponent: 3.0,
            floor_attenuation: 15.0,
            noise_sigma: 4.0,
            detect_threshold: -100.0,
            atrium: None,
            anchor_floor: 1,
            seed: 0,
        }
    }
}

impl BuildingSpec {
    /// Default building with `floors` floors.
    pub fn with_floors(floors: usize) -> Self {
        Self { floors, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.floors < MIN_FLOOR_COUNT {
            return bad(format!("at least {MIN_FLOOR_COUNT} floors required, got {}", self.floors));
        }
        let positive = [
            ("floor_height", self.floor_height),
            ("width", self.width),
            ("depth", self.depth),
            ("path_loss_exponent", self.path_loss_exponent),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("floor_attenuation", self.floor_attenuation), ("noise_sigma", self.noise_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !self.tx_power.is_finite() || !self.detect_threshold.is_finite() {
            return bad("tx_power and detect_threshold must be finite".into());
        }
        if self.aps_per_floor == 0 || self.samples_per_floor == 0 {
            return bad("aps_per_floor and samples_per_floor must be positive".into());
        }
        if let Some(a) = self.atrium {
            if !(a.radius >= 0.0 && a.radius.is_finite() && a.center_x.is_finite() && a.center_y.is_finite()) {
                return bad("atrium must have finite center and non-negative radius".into());
            }
        }
        if self.anchor_floor == 0 || self.anchor_floor as usize > self.floors {
            return bad(format!("anchor_floor {} outside 1..={}", self.anchor_floor, self.floors));
        }
        Ok(())
    }

    /// Slabs between the two points that attenuate, i.e. are crossed outside
    /// the atrium.
    fn attenuating_slabs(&self, a: [f64; 3], b: [f64; 3]) -> usize {
        let (lo, hi) = if a[2] <= b[2] { (a, b) } else { (b, a) };
        let first = (lo[2] / self.floor_height).floor() as usize + 1;
        let last = (hi[2] / self.floor_height).floor() as usize;
        (first..=last)
            .filter(|&s| {
                let z = s as f64 * self.floor_height;
                let t = (z - lo[2]) / (hi[2] - lo[2]);
                let x = lo[0] + t * (hi[0] - lo[0]);
                let y = lo[1] + t * (hi[1] - lo[1]);
                !self.atrium.is_some_and(|at| at.contains(x, y))
            })
            .count()
    }

    /// Mean received strength, before noise, from `ap` at `at`.
    pub fn mean_rss(&self, ap: [f64; 3], at: [f64; 3]) -> f64 {
        let d = ap.iter().zip(&at).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        self.tx_power
            - 10.0 * self.path_loss_exponent * d.max(1.0).log10()
            - self.floor_attenuation * self.attenuating_slabs(ap, at) as f64
    }
}

fn mac_name(index: usize) -> String {
    let b = (index as u32).to_be_bytes();
    format!("02:00:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3])
}

/// Generates one labeled building. Records are shuffled and exactly one
/// record on `anchor_floor` is the anchor.
pub fn generate(spec: &BuildingSpec) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let base = |f: usize| f as f64 * spec.floor_height;
    let place = |rng: &mut ChaCha8Rng, f: usize, h: f64| {
        [rng.random_range(0.0..spec.width), rng.random_range(0.0..spec.depth), base(f) + h]
    };

    let aps: Vec<[f64; 3]> = (0..spec.floors)
        .flat_map(|f| (0..spec.aps_per_floor).map(move |_| f))
        .map(|f| place(&mut rng, f, AP_HEIGHT))
        .collect();

    let mut records = Vec::with_capacity(spec.floors * spec.samples_per_floor);
    for f in 0..spec.floors {
        let mut kept = 0;
        for _ in 0..spec.samples_per_floor {
            let at = place(&mut rng, f, DEVICE_HEIGHT);
            let readings: Vec<Reading> = aps
                .iter()
                .enumerate()
                .filter_map(|(k, &ap)| {
                    let rss = spec.mean_rss(ap, at) + noise.sample(&mut rng);
                    (rss >= spec.detect_threshold)
                        .then(|| Reading { mac: mac_name(k), rss: rss.clamp(RSS_FLOOR, RSS_CEILING) })
                })
                .collect();
            if !readings.is_empty() {
                kept += 1;
                records.push(ScanRecord { id: String::new(), floor: Some(f as u32 + 1), anchor: false, readings });
            }
        }
        if kept == 0 {
            return Err(SynthError::EmptyFloor { floor: f as u32 + 1 });
        }
    }

    records.shuffle(&mut rng);
    for (i, r) in records.iter_mut().enumerate() {
        r.id = format!("s{i:05}");
    }
    let candidates: Vec<usize> = (0..records.len()).filter(|&i| records[i].floor == Some(spec.anchor_floor)).collect();
    let anchor = candidates[rng.random_range(0..candidates.len())];
    records[anchor].anchor = true;
    Ok(Dataset::new(records, spec.floors)?)
}

/// One generated building of a suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub spec: BuildingSpec,
    pub dataset: Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub spec: BuildingSpec,
    pub seed: u64,
    pub path: PathBuf,
}

/// Every spec under every seed, spec-major. The seed overrides `spec.seed`.
pub fn generate_suite(specs: &[BuildingSpec], seeds: &[u64]) -> Result<Vec<SuiteEntry>, SynthError> {
    let mut out = Vec::with_capacity(specs.len() * seeds.len());
    for spec in specs {
        for &seed in seeds {
            let spec = BuildingSpec { seed, ..spec.clone() };
            let dataset = generate(&spec)?;
            out.push(SuiteEntry { spec, dataset });
        }
    }
    Ok(out)
}

/// Writes each dataset as `building-<N>f-seed<S>[-<i>].jsonl` under `dir`
/// together with `manifest.json`, and returns the manifest.
pub fn write_suite(entries: &[SuiteEntry], dir: &Path) -> Result<Vec<ManifestEntry>, SynthError> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let mut name = format!("building-{}f-seed{}", e.spec.floors, e.spec.seed);
        if manifest.iter().any(|m: &ManifestEntry| m.path.file_stem().is_some_and(|s| s == name.as_str())) {
            name = format!("{name}-{i}");
        }
        let path = dir.join(format!("{name}.jsonl"));
        e.dataset.save(&path)?;
        manifest.push(ManifestEntry { spec: e.spec.clone(), seed: e.spec.seed, path });
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
