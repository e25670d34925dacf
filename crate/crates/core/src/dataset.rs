//! Sample assembly, splits, class weights, demographic normalization and the
//! on-disk dataset container.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featurize::{FeatureTable, N_FEATURES, TimeWindow};
use crate::geoindex::{RegionId, ZipCentroid, assign_zip, region_tile};
use crate::ingest::{
    DEMO_DIM, DemographicRecord, TileSource, fetch_tile, format_timestamp, parse_timestamp, tile_cache_path,
};
use crate::{Error, Result};

pub const CONTAINER_VERSION: u32 = 1;

/// Ratio of the pre-cutoff windows (temporal) or train-side samples
/// (spatial) held out for validation.
pub const VAL_CARVE: f64 = 1.0 / 8.0;

/// One training example: the K windows before `target_window` in `region`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub region: RegionId,
    pub target_window: TimeWindow,
    /// K × 27, oldest window first.
    pub history: Vec<f32>,
    /// Index into the dataset's region/tile table.
    pub tile_ref: usize,
    /// Normalized demographics; empty until attached.
    pub demo: Vec<f32>,
    pub label: u8,
}

/// One sample per (region, window) with window ≥ K.
pub fn assemble_samples(table: &FeatureTable, k: usize) -> Result<Vec<Sample>> {
    if k == 0 {
        return Err(Error::validation("history length K must be at least 1"));
    }
    if k >= table.n_windows {
        return Err(Error::validation(format!(
            "history length {k} needs more than {} windows",
            table.n_windows
        )));
    }
    let mut out = Vec::with_capacity(table.n_regions() * (table.n_windows - k));
    for (ri, &region) in table.regions.iter().enumerate() {
        for w in k..table.n_windows {
            let mut history = Vec::with_capacity(k * N_FEATURES);
            for h in w - k..w {
                history.extend_from_slice(table.row(ri, h));
            }
            out.push(Sample {
                region,
                target_window: table.window(w),
                history,
                tile_ref: ri,
                demo: Vec::new(),
                label: table.label(ri, w),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitKind {
    Random { train: f64, val: f64, test: f64 },
    /// Targets starting before `cutoff` train (the last eighth of those
    /// windows validates); the rest test.
    Temporal {
        #[serde(with = "timestamp_serde")]
        cutoff: NaiveDateTime,
    },
    /// A `region_fraction` share of regions trains, the rest test.
    Spatial { region_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSplitSpec")]
pub struct SplitSpec {
    #[serde(flatten)]
    pub kind: SplitKind,
    pub seed: u64,
}

// serde cannot combine `flatten` with `deny_unknown_fields`, so parsing
// goes through a flat struct that rejects unknown keys.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplitSpec {
    kind: String,
    seed: u64,
    train: Option<f64>,
    val: Option<f64>,
    test: Option<f64>,
    cutoff: Option<String>,
    region_fraction: Option<f64>,
}

impl TryFrom<RawSplitSpec> for SplitSpec {
    type Error = String;

    fn try_from(r: RawSplitSpec) -> std::result::Result<Self, String> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("split kind {:?} needs {name}", r.kind));
        let kind = match r.kind.as_str() {
            "random" => {
                if r.cutoff.is_some() || r.region_fraction.is_some() {
                    return Err("random split takes only train, val, test".into());
                }
                SplitKind::Random {
                    train: need(r.train, "train")?,
                    val: need(r.val, "val")?,
                    test: need(r.test, "test")?,
                }
            }
            "temporal" => {
                if r.train.is_some() || r.val.is_some() || r.test.is_some() || r.region_fraction.is_some() {
                    return Err("temporal split takes only cutoff".into());
                }
                let c = r.cutoff.as_deref().ok_or("temporal split needs cutoff")?;
                SplitKind::Temporal {
                    cutoff: crate::ingest::parse_timestamp(c).map_err(|e| e.to_string())?,
                }
            }
            "spatial" => {
                if r.train.is_some() || r.val.is_some() || r.test.is_some() || r.cutoff.is_some() {
                    return Err("spatial split takes only region_fraction".into());
                }
                SplitKind::Spatial {
                    region_fraction: need(r.region_fraction, "region_fraction")?,
                }
            }
            other => return Err(format!("unknown split kind {other:?}")),
        };
        Ok(SplitSpec { kind, seed: r.seed })
    }
}

impl SplitSpec {
    pub fn random(seed: u64) -> Self {
        Self {
            kind: SplitKind::Random {
                train: 0.7,
                val: 0.1,
                test: 0.2,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SplitKind::Random { train, val, test } => {
                if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r))
                    || (train + val + test - 1.0).abs() > 1e-9
                {
                    return Err(Error::validation("split ratios must be in [0,1] and sum to 1"));
                }
            }
            SplitKind::Temporal { .. } => {}
            SplitKind::Spatial { region_fraction } => {
                if !(region_fraction > 0.0 && region_fraction < 1.0) {
                    return Err(Error::validation("region_fraction must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }
}

pub(crate) mod timestamp_serde {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::ingest::format_timestamp(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let s = String::deserialize(d)?;
        crate::ingest::parse_timestamp(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Part {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Part {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Part::Train),
            1 => Ok(Part::Val),
            2 => Ok(Part::Test),
            _ => Err(Error::Container(format!("bad split code {v}"))),
        }
    }
}

/// Assigns every sample to a part. Deterministic in `spec.seed`.
pub fn split(samples: &[Sample], spec: &SplitSpec) -> Result<Vec<Part>> {
    spec.validate()?;
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts = vec![Part::Test; n];
    match spec.kind {
        SplitKind::Random { train, val, .. } => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let n_train = (n as f64 * train).round() as usize;
            let n_val = ((n as f64 * val).round() as usize).min(n - n_train);
            for (pos, &i) in idx.iter().enumerate() {
                parts[i] = if pos < n_train {
                    Part::Train
                } else if pos < n_train + n_val {
                    Part::Val
                } else {
                    Part::Test
                };
            }
        }
        SplitKind::Temporal { cutoff } => {
            let pre: BTreeSet<u32> = samples
                .iter()
                .filter(|s| s.target_window.start() < cutoff)
                .map(|s| s.target_window.index)
                .collect();
            let n_val = (pre.len() as f64 * VAL_CARVE).round() as usize;
            let val_from = pre.iter().rev().nth(n_val.saturating_sub(1)).copied();
            for (p, s) in parts.iter_mut().zip(samples) {
                *p = if !pre.contains(&s.target_window.index) {
                    Part::Test
                } else if n_val > 0 && Some(s.target_window.index) >= val_from {
                    Part::Val
                } else {
                    Part::Train
                };
            }
        }
        SplitKind::Spatial { region_fraction } => {
            let mut regions: Vec<RegionId> =
                samples.iter().map(|s| s.region).collect::<BTreeSet<_>>().into_iter().collect();
            regions.shuffle(&mut rng);
            let n_train = (regions.len() as f64 * region_fraction).round() as usize;
            // validation regions are unseen by training too, so early stopping
            // tracks generalization to new regions
            let n_val = ((n_train as f64 * VAL_CARVE).round() as usize).max(1);
            let val: BTreeSet<RegionId> = regions[..n_val.min(n_train)].iter().copied().collect();
            let train: BTreeSet<RegionId> = regions[n_val.min(n_train)..n_train].iter().copied().collect();
            for (p, s) in parts.iter_mut().zip(samples) {
                if val.contains(&s.region) {
                    *p = Part::Val;
                } else if train.contains(&s.region) {
                    *p = Part::Train;
                }
            }
        }
    }
    for part in [Part::Train, Part::Val, Part::Test] {
        if !parts.contains(&part) {
            return Err(Error::validation(format!("degenerate split: {part:?} part is empty")));
        }
    }
    Ok(parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub w0: f64,
    pub w1: f64,
}

impl ClassWeights {
    /// Empirical weights used for the Houston extract.
    pub const HOUSTON: ClassWeights = ClassWeights { w0: 0.516, w1: 15.327 };

    pub fn as_array(&self) -> [f64; 2] {
        [self.w0, self.w1]
    }
}

/// Inverse-frequency weights `w_c = N / (2 N_c)`.
pub fn class_weights(labels: impl IntoIterator<Item = u8>) -> Result<ClassWeights> {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[usize::from(l != 0)] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::validation("training set contains a single class"));
    }
    let n = (counts[0] + counts[1]) as f64;
    Ok(ClassWeights {
        w0: n / (2.0 * counts[0] as f64),
        w1: n / (2.0 * counts[1] as f64),
    })
}

/// Per-feature z-score parameters fitted on training regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DemoStats {
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| if x.is_nan() || s == 0.0 { 0.0 } else { (x - m) / s })
            .collect()
    }
}

/// Z-scores every region's raw vector with population mean/std taken over
/// `train_regions` only. Missing values (NaN) are skipped when fitting and
/// map to 0.
pub fn normalize_demographics(
    raw: &BTreeMap<RegionId, Vec<f64>>,
    train_regions: &BTreeSet<RegionId>,
) -> Result<(BTreeMap<RegionId, Vec<f64>>, DemoStats)> {
    let fit: Vec<&Vec<f64>> = train_regions.iter().filter_map(|r| raw.get(r)).collect();
    if fit.len() < 2 {
        return Err(Error::validation("demographic normalization needs two training regions"));
    }
    let dim = fit[0].len();
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for j in 0..dim {
        let vals: Vec<f64> = fit.iter().map(|v| v[j]).filter(|x| !x.is_nan()).collect();
        if vals.is_empty() {
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        mean[j] = m;
        std[j] = var.sqrt();
    }
    let stats = DemoStats { mean, std };
    let out = raw.iter().map(|(&r, v)| (r, stats.apply(v))).collect();
    Ok((out, stats))
}

/// Raw demographic vector of each region, taken from the zip whose centroid
/// is nearest the region center.
pub fn region_demographics(
    regions: &[RegionId],
    zips: &BTreeMap<String, DemographicRecord>,
) -> Result<BTreeMap<RegionId, Vec<f64>>> {
    let table: Vec<ZipCentroid> = zips
        .values()
        .map(|z| ZipCentroid::new(z.zip.clone(), z.lat, z.lon))
        .collect::<Result<_>>()?;
    regions
        .iter()
        .map(|&r| {
            let zip = assign_zip(r, &table)?;
            Ok((r, zips[zip].features.clone()))
        })
        .collect()
}

/// Cache path of each region's tile. Misses are fetched from `source`, so
/// with [`TileSource::Offline`] a cold cache fails with `MissingTile`.
pub fn region_tiles(
    regions: &[RegionId],
    cache_dir: &Path,
    source: &TileSource,
) -> Result<BTreeMap<RegionId, PathBuf>> {
    regions
        .iter()
        .map(|&r| {
            let path = tile_cache_path(cache_dir, region_tile(r)?);
            if !path.exists() {
                fetch_tile(r, cache_dir, source)?;
            }
            Ok((r, path))
        })
        .collect()
}

/// Samples plus everything needed to train and evaluate on them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub epoch: NaiveDateTime,
    pub samples: Vec<Sample>,
    pub parts: Vec<Part>,
    /// Indexed by `Sample::tile_ref`.
    pub regions: Vec<RegionId>,
    pub tiles: Vec<PathBuf>,
    pub tile_shape: [usize; 2],
    pub demo_stats: DemoStats,
    pub class_weights: ClassWeights,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, part: Part) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.parts[i] == part).collect()
    }
}

/// Inputs for [`build_dataset`] beyond the feature table.
pub struct DatasetInputs<'a> {
    pub k: usize,
    pub split: &'a SplitSpec,
    /// Raw demographics per table region (already matched by zip).
    pub demographics: &'a BTreeMap<RegionId, Vec<f64>>,
    pub tiles: &'a BTreeMap<RegionId, PathBuf>,
    pub tile_shape: [usize; 2],
    pub class_weights: Option<ClassWeights>,
    /// Drops samples whose target window index is below this.
    pub min_target_window: usize,
}

/// Assembles, splits, normalizes and weights in one go.
pub fn build_dataset(table: &FeatureTable, inputs: &DatasetInputs) -> Result<Dataset> {
    let mut samples = assemble_samples(table, inputs.k)?;
    samples.retain(|s| s.target_window.index as usize >= inputs.min_target_window);
    let parts = split(&samples, inputs.split)?;
    let train_regions: BTreeSet<RegionId> = samples
        .iter()
        .zip(&parts)
        .filter(|(_, p)| **p == Part::Train)
        .map(|(s, _)| s.region)
        .collect();
    for r in &table.regions {
        if !inputs.demographics.contains_key(r) {
            return Err(Error::validation(format!("no demographics for region {r}")));
        }
    }
    let (norm, demo_stats) = normalize_demographics(inputs.demographics, &train_regions)?;
    let demo32: BTreeMap<RegionId, Vec<f32>> =
        norm.into_iter().map(|(r, v)| (r, v.into_iter().map(|x| x as f32).collect())).collect();
    for s in &mut samples {
        s.demo = demo32[&s.region].clone();
    }
    let class_weights = match inputs.class_weights {
        Some(w) => w,
        None => class_weights(samples.iter().zip(&parts).filter(|(_, p)| **p == Part::Train).map(|(s, _)| s.label))?,
    };
    let tiles = table
        .regions
        .iter()
        .map(|r| {
            inputs
                .tiles
                .get(r)
                .cloned()
                .ok_or_else(|| Error::validation(format!("no tile for region {r}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        k: inputs.k,
        epoch: table.epoch,
        samples,
        parts,
        regions: table.regions.clone(),
        tiles,
        tile_shape: inputs.tile_shape,
        demo_stats,
        class_weights,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    n_samples: usize,
    k: usize,
    n_features: usize,
    demo_dim: usize,
    epoch: String,
    tile_shape: [usize; 2],
    splits: Vec<u8>,
    normalization: DemoStats,
    class_weights: ClassWeights,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Container(format!("{name} has {got} bytes, manifest implies {want}")));
    }
    Ok(())
}

/// Writes the container: `manifest.json`, `seq.f32`, `demo.f32`,
/// `labels.u8`, `regions.u64`, `windows.u32` and `tiles.json`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        version: CONTAINER_VERSION,
        n_samples: ds.len(),
        k: ds.k,
        n_features: N_FEATURES,
        demo_dim: DEMO_DIM,
        epoch: format_timestamp(&ds.epoch),
        tile_shape: ds.tile_shape,
        splits: ds.parts.iter().map(|&p| p as u8).collect(),
        normalization: ds.demo_stats.clone(),
        class_weights: ds.class_weights,
    };
    // Value maps are BTreeMaps, so keys come out sorted.
    let json = serde_json::to_string_pretty(&serde_json::to_value(&manifest)?)?;
    write_file(&dir.join("manifest.json"), json.as_bytes())?;

    let mut seq = Vec::with_capacity(ds.len() * ds.k * N_FEATURES * 4);
    let mut demo = Vec::with_capacity(ds.len() * DEMO_DIM * 4);
    let mut regions = Vec::with_capacity(ds.len() * 8);
    let mut windows = Vec::with_capacity(ds.len() * 4);
    for s in &ds.samples {
        if s.history.len() != ds.k * N_FEATURES || s.demo.len() != DEMO_DIM {
            return Err(Error::Container("sample arrays do not match K / demo width".into()));
        }
        seq.extend(s.history.iter().flat_map(|v| v.to_le_bytes()));
        demo.extend(s.demo.iter().flat_map(|v| v.to_le_bytes()));
        regions.extend(s.region.cell().to_le_bytes());
        windows.extend(s.target_window.index.to_le_bytes());
    }
    write_file(&dir.join("seq.f32"), &seq)?;
    write_file(&dir.join("demo.f32"), &demo)?;
    let labels: Vec<u8> = ds.samples.iter().map(|s| s.label).collect();
    write_file(&dir.join("labels.u8"), &labels)?;
    write_file(&dir.join("regions.u64"), &regions)?;
    write_file(&dir.join("windows.u32"), &windows)?;

    let tiles: BTreeMap<String, String> = ds
        .regions
        .iter()
        .zip(&ds.tiles)
        .map(|(r, p)| (r.to_string(), p.display().to_string()))
        .collect();
    write_file(&dir.join("tiles.json"), serde_json::to_string_pretty(&tiles)?.as_bytes())
}

fn f32s(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m: Manifest = serde_json::from_slice(&read_file(&dir.join("manifest.json"))?)?;
    if m.version != CONTAINER_VERSION {
        return Err(Error::Container(format!(
            "version {} not supported (expected {CONTAINER_VERSION})",
            m.version
        )));
    }
    if m.n_features != N_FEATURES || m.demo_dim != DEMO_DIM {
        return Err(Error::Container("feature or demographic width mismatch".into()));
    }
    let n = m.n_samples;
    if m.splits.len() != n {
        return Err(Error::Container("split list length differs from n_samples".into()));
    }
    let seq = read_file(&dir.join("seq.f32"))?;
    check_len("seq.f32", seq.len(), n * m.k * N_FEATURES * 4)?;
    let demo = read_file(&dir.join("demo.f32"))?;
    check_len("demo.f32", demo.len(), n * DEMO_DIM * 4)?;
    let labels = read_file(&dir.join("labels.u8"))?;
    check_len("labels.u8", labels.len(), n)?;
    let regions_raw = read_file(&dir.join("regions.u64"))?;
    check_len("regions.u64", regions_raw.len(), n * 8)?;
    let windows_raw = read_file(&dir.join("windows.u32"))?;
    check_len("windows.u32", windows_raw.len(), n * 4)?;
    let tiles: BTreeMap<String, String> = serde_json::from_slice(&read_file(&dir.join("tiles.json"))?)?;

    let mut regions = Vec::with_capacity(tiles.len());
    let mut tile_paths = Vec::with_capacity(tiles.len());
    for (r, p) in tiles {
        regions.push(r.parse::<RegionId>()?);
        tile_paths.push(PathBuf::from(p));
    }
    regions.sort();

    let epoch = parse_timestamp(&m.epoch)?;
    let row = m.k * N_FEATURES;
    let mut seq_it = f32s(&seq);
    let mut demo_it = f32s(&demo);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let cell = u64::from_le_bytes(regions_raw[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        let region = RegionId::from_cell(cell)?;
        let tile_ref = regions
            .binary_search(&region)
            .map_err(|_| Error::Container(format!("region {region} missing from tiles.json")))?;
        let index = u32::from_le_bytes(windows_raw[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
        let label = labels[i];
        if label > 1 {
            return Err(Error::Container(format!("label {label} at sample {i}")));
        }
        samples.push(Sample {
            region,
            target_window: TimeWindow { index, epoch },
            history: seq_it.by_ref().take(row).collect(),
            tile_ref,
            demo: demo_it.by_ref().take(DEMO_DIM).collect(),
            label,
        });
    }
    Ok(Dataset {
        k: m.k,
        epoch,
        samples,
        parts: m.splits.into_iter().map(Part::from_u8).collect::<Result<_>>()?,
        regions,
        tiles: tile_paths,
        tile_shape: m.tile_shape,
        demo_stats: m.normalization,
        class_weights: m.class_weights,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionRate {
    pub n: usize,
    pub positive: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n_samples: usize,
    pub n_positive: usize,
    pub positive_rate: f64,
    pub n_regions: usize,
    pub per_region: BTreeMap<RegionId, RegionRate>,
}

impl DatasetStats {
    /// Positive share as a percentage rounded to two decimals.
    pub fn positive_percent(&self) -> String {
        percent_2dp(self.n_positive, self.n_samples)
    }
}

pub fn percent_2dp(part: usize, total: usize) -> String {
    if total == 0 {
        return "0.00".into();
    }
    format!("{:.2}", 100.0 * part as f64 / total as f64)
}

pub fn stats_report(samples: &[Sample]) -> DatasetStats {
    let mut per_region: BTreeMap<RegionId, RegionRate> = BTreeMap::new();
    for s in samples {
        let e = per_region.entry(s.region).or_insert(RegionRate { n: 0, positive: 0, rate: 0.0 });
        e.n += 1;
        e.positive += s.label as usize;
    }
    for e in per_region.values_mut() {
        e.rate = e.positive as f64 / e.n as f64;
    }
    let n_positive: usize = per_region.values().map(|e| e.positive).sum();
    DatasetStats {
        n_samples: samples.len(),
        n_positive,
        positive_rate: if samples.is_empty() { 0.0 } else { n_positive as f64 / samples.len() as f64 },
        n_regions: per_region.len(),
        per_region,
    }
}
