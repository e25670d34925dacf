//! Command surface: one subcommand per pipeline stage, composed through the
//! filesystem.
//!
//! Layout under the output directory:
//! `ingest.json`, `table/`, `dataset/`, `train/`, `eval/`,
//! `experiment-<kind>/` and `report/`. Each stage also writes
//! `config.json` with the resolved configuration and code version.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{
    Dataset, DatasetInputs, Part, SplitSpec, build_dataset, read_dataset, region_demographics, region_tiles,
    stats_report, write_dataset,
};
use crate::eval::{
    ExperimentConfig, ExperimentData, ExperimentKind, argmax_labels, f1_per_class, fixtures, load_network,
    read_report, report_render, run_experiment, write_predictions,
};
use crate::featurize::{CityData, DEFAULT_WEATHER_RADIUS_KM, FeatureTable, build_feature_table, read_table, write_table};
use crate::geoindex::{RegionId, locate_region};
use crate::ingest::{DemographicRecord, TileSource, load_accidents, load_demographics, load_weather};
use crate::model::{Ablation, CrashFormer, ModelConfig, TileBank};
use crate::synth::{WorldConfig, generate_world, world_oracle};
use crate::train::{TrainConfig, predict_indices, train_network};
use crate::{Error, Result};

pub const CODE_VERSION: &str = concat!("crashformer ", env!("CARGO_PKG_VERSION"));
/// Overrides the tile cache location.
pub const CACHE_ENV: &str = "CRASHFORMER_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Holds `accidents.csv`, `weather.csv` and `demographics.csv`.
    pub data_dir: PathBuf,
    /// Defaults to `<data_dir>/tiles`.
    pub tile_cache: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            tile_cache: None,
            out_dir: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoConfig {
    /// `{z}/{x}/{y}` URL template, or `offline`.
    pub tile_source: String,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            tile_source: "https://tile.openstreetmap.org/{z}/{x}/{y}.png".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizeConfig {
    /// First study day; the first accident's day when absent.
    pub start: Option<NaiveDate>,
    /// Study length; runs through the last accident's day when absent.
    pub n_days: Option<usize>,
    pub weather_radius_km: f64,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        Self {
            start: None,
            n_days: None,
            weather_radius_km: DEFAULT_WEATHER_RADIUS_KM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub split: SplitSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { split: SplitSpec::random(0) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub geoindex: GeoConfig,
    pub featurize: FeaturizeConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
    /// World generated by the `synth` command.
    pub synth: WorldConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.dataset.split.validate()?;
        self.synth.validate()?;
        if self.geoindex.tile_source != "offline" {
            TileSource::parse(&self.geoindex.tile_source)?;
        }
        if self.featurize.weather_radius_km.is_nan() || self.featurize.weather_radius_km <= 0.0 {
            return Err(Error::validation("weather_radius_km must be positive"));
        }
        Ok(())
    }

    /// Loads `path` (or the defaults), applies `key.path=value` overrides
    /// and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut v = match path {
            Some(p) => serde_json::from_slice(&std::fs::read(p).map_err(|e| Error::io(p, e))?)?,
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sorted-key JSON with the code version.
    pub fn canonical_echo(&self) -> Result<String> {
        // serde_json::Value keeps object keys sorted
        let v = serde_json::json!({ "code_version": CODE_VERSION, "config": serde_json::to_value(self)? });
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }

    pub fn tile_cache(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => self.paths.tile_cache.clone().unwrap_or_else(|| self.paths.data_dir.join("tiles")),
        }
    }

    pub fn tile_source(&self) -> Result<TileSource> {
        TileSource::parse(&self.geoindex.tile_source)
    }
}

/// Sets `a.b.c=value`, reading `value` as JSON when it parses and as a
/// string otherwise.
pub fn apply_override(v: &mut Value, o: &str) -> Result<()> {
    let (key, raw) = o
        .split_once('=')
        .ok_or_else(|| Error::validation(format!("override {o:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = v;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::validation(format!("override key {key:?} has an empty segment")));
        }
        let obj = match cur {
            Value::Object(m) => m,
            _ => return Err(Error::validation(format!("override {key:?} descends into a non-object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "crashformer", version, about = "Multimodal accident-risk prediction pipeline")]
pub struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
    /// Seed for splits, initialization, batching and synthetic worlds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Use only cached tiles.
    #[arg(long, global = true)]
    pub offline: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic city into the data directory.
    Synth,
    /// Validate the input CSVs and fill the tile cache.
    Ingest,
    /// Build the region × window feature table.
    Featurize,
    /// Assemble, split and normalize samples into a dataset container.
    BuildDataset,
    /// Train the full model on the dataset.
    Train,
    /// Score a checkpoint on the test part.
    Evaluate {
        /// Defaults to `<out>/train/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run one experiment protocol end to end.
    Experiment {
        #[arg(long)]
        kind: ExperimentKind,
    },
    /// Re-render a report directory, or the stored reference results.
    Report {
        /// Directory holding `report.json`.
        #[arg(long, conflicts_with = "fixtures")]
        from: Option<PathBuf>,
        /// Render the stored reference results instead.
        #[arg(long)]
        fixtures: bool,
    },
}

impl Cli {
    /// Resolved config: file, then `--set`, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.dataset.split.seed = s;
            cfg.synth.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.paths.out_dir = o.clone();
            if matches!(self.command, Command::Synth) {
                cfg.paths.data_dir = o.clone();
            }
        }
        if self.offline {
            cfg.geoindex.tile_source = "offline".into();
        }
        Ok(cfg)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(&serde_json::to_value(v)?)? + "\n"))
}

fn echo(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join("config.json"), &cfg.canonical_echo()?)
}

/// The three input files, validated.
pub struct Inputs {
    pub city: CityData,
    pub zips: BTreeMap<String, DemographicRecord>,
    pub summary: Value,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let d = &cfg.paths.data_dir;
    let acc = load_accidents(d.join("accidents.csv"))?;
    let wx = load_weather(d.join("weather.csv"))?;
    let (zips, demo) = load_demographics(d.join("demographics.csv"))?;
    let first = acc.records.iter().map(|a| a.timestamp.date()).min();
    let last = acc.records.iter().map(|a| a.timestamp.date()).max();
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::validation("accidents.csv has no rows"));
    };
    let start = cfg.featurize.start.unwrap_or(first);
    let n_days = cfg.featurize.n_days.unwrap_or_else(|| ((last - start).num_days() + 1).max(1) as usize);
    let reject = |r: &[(usize, String)]| r.iter().map(|(i, m)| format!("row {i}: {m}")).collect::<Vec<_>>();
    let summary = serde_json::json!({
        "accidents": { "accepted": acc.accepted, "rejected": reject(&acc.rejected) },
        "weather": { "accepted": wx.accepted, "rejected": reject(&wx.rejected) },
        "demographics": { "accepted": demo.accepted, "rejected": reject(&demo.rejected) },
        "start": start.to_string(),
        "n_days": n_days,
    });
    Ok(Inputs {
        city: CityData {
            accidents: acc.records,
            weather: wx.records,
            epoch: start.and_hms_opt(0, 0, 0).expect("midnight"),
            n_windows: n_days * crate::featurize::WINDOWS_PER_DAY,
            weather_radius_km: cfg.featurize.weather_radius_km,
        },
        zips,
        summary,
    })
}

type RegionDemographics = BTreeMap<RegionId, Vec<f64>>;
type RegionTiles = BTreeMap<RegionId, PathBuf>;

/// Region-keyed side inputs for a table.
pub fn side_inputs(
    cfg: &RunConfig,
    table: &FeatureTable,
    zips: &BTreeMap<String, DemographicRecord>,
) -> Result<(RegionDemographics, RegionTiles)> {
    let demo = region_demographics(&table.regions, zips)?;
    let tiles = region_tiles(&table.regions, &cfg.tile_cache(), &cfg.tile_source()?)?;
    Ok((demo, tiles))
}

fn table_for(cfg: &RunConfig, inputs: &Inputs) -> Result<FeatureTable> {
    let dir = cfg.paths.out_dir.join("table");
    if dir.join("table.json").exists() {
        return read_table(&dir);
    }
    let table = build_feature_table(&inputs.city)?;
    write_table(&table, &dir)?;
    Ok(table)
}

fn dataset_for(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.paths.out_dir.join("dataset");
    if dir.join("manifest.json").exists() {
        return read_dataset(&dir);
    }
    cmd_build_dataset(cfg)?;
    read_dataset(&dir)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.paths.data_dir;
    let m = generate_world(&cfg.synth, dir)?;
    let oracle = world_oracle(dir)?;
    write_json(&dir.join("oracle.json"), &oracle)?;
    echo(cfg, dir)?;
    log::info!(
        "synthetic world: {} regions, {} windows, positive rate {:.4}, oracle F1_1 {:.4}",
        m.regions.len(),
        m.n_windows,
        m.positive_rate(),
        oracle.optimal_f1_1
    );
    Ok(())
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let regions: Vec<RegionId> = inputs
        .city
        .accidents
        .iter()
        .map(|a| locate_region(a.lat, a.lon))
        .collect::<Result<std::collections::BTreeSet<_>>>()?
        .into_iter()
        .collect();
    let tiles = region_tiles(&regions, &cfg.tile_cache(), &cfg.tile_source()?)?;
    let mut summary = inputs.summary;
    summary["regions"] = regions.len().into();
    summary["tiles"] = tiles.len().into();
    write_json(&cfg.paths.out_dir.join("ingest.json"), &summary)?;
    echo(cfg, &cfg.paths.out_dir)?;
    log::info!("ingested {} accidents over {} regions", inputs.city.accidents.len(), regions.len());
    Ok(())
}

pub fn cmd_featurize(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let table = build_feature_table(&inputs.city)?;
    let dir = cfg.paths.out_dir.join("table");
    write_table(&table, &dir)?;
    echo(cfg, &dir)?;
    log::info!("table: {} regions × {} windows", table.n_regions(), table.n_windows);
    Ok(())
}

pub fn cmd_build_dataset(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let table = table_for(cfg, &inputs)?;
    let (demo, tiles) = side_inputs(cfg, &table, &inputs.zips)?;
    let ds = build_dataset(
        &table,
        &DatasetInputs {
            k: cfg.model.history_len,
            split: &cfg.dataset.split,
            demographics: &demo,
            tiles: &tiles,
            tile_shape: [cfg.model.img_size, cfg.model.img_size],
            class_weights: cfg.train.class_weights,
            min_target_window: 0,
        },
    )?;
    let dir = cfg.paths.out_dir.join("dataset");
    write_dataset(&ds, &dir)?;
    write_json(&dir.join("stats.json"), &stats_report(&ds.samples))?;
    echo(cfg, &dir)?;
    log::info!("dataset: {} samples", ds.len());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = dataset_for(cfg)?;
    let bank = TileBank::load(&ds, cfg.model.img_size)?;
    let net = CrashFormer::new(cfg.model.clone(), Ablation::FULL, cfg.train.seed)?;
    let (net, history) = train_network(net, &ds, &bank, &cfg.train)?;
    let dir = cfg.paths.out_dir.join("train");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    net.save(&dir.join("model.ckpt"))?;
    history.write_jsonl(&dir.join("history.jsonl"))?;
    echo(cfg, &dir)?;
    log::info!("best epoch {} with validation loss {:.5}", history.best_epoch, history.best_val_loss);
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let ds = dataset_for(cfg)?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.out_dir.join("train/model.ckpt"));
    let net = load_network(&ckpt)?;
    let bank = TileBank::load(&ds, cfg.model.img_size)?;
    let test = ds.indices(Part::Test);
    let probs = predict_indices(net.as_ref(), &ds, &bank, &test);
    let labels: Vec<u8> = test.iter().map(|&i| ds.samples[i].label).collect();
    let metrics = f1_per_class(&argmax_labels(&probs), &labels)?;
    let dir = cfg.paths.out_dir.join("eval");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_predictions(&dir, &probs, &labels)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    echo(cfg, &dir)?;
    log::info!("test F1_1 {:.4}, F1_0 {:.4} over {} samples", metrics.f1_1, metrics.f1_0, metrics.n());
    Ok(())
}

pub fn cmd_experiment(cfg: &RunConfig, kind: ExperimentKind) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let table = table_for(cfg, &inputs)?;
    let (demo, tiles) = side_inputs(cfg, &table, &inputs.zips)?;
    let name = serde_json::to_value(kind)?.as_str().unwrap_or_default().to_string();
    let dir = cfg.paths.out_dir.join(format!("experiment-{name}"));
    let data = ExperimentData {
        table: &table,
        demographics: &demo,
        tiles: &tiles,
        bank: None,
    };
    let report = run_experiment(kind, &data, &cfg.model, &cfg.train, &cfg.experiment, &dir)?;
    report_render(&report, &dir, &name)?;
    echo(cfg, &dir)?;
    for a in &report.arms {
        log::info!("{}: F1_1 {:.4}, F1_0 {:.4}", a.name, a.f1_1, a.f1_0);
    }
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig, from: Option<&Path>, use_fixtures: bool) -> Result<()> {
    let out = cfg.paths.out_dir.join("report");
    if use_fixtures {
        for (name, r) in [
            ("seq_sweep", fixtures::seq_sweep_report()),
            ("ablation", fixtures::ablation_report()),
            ("houston_spatial", fixtures::houston_spatial_report()),
        ] {
            report_render(&r, &out.join(name), name)?;
        }
    } else {
        let from = from.ok_or_else(|| Error::validation("report needs --from DIR or --fixtures"))?;
        let r = read_report(from)?;
        let title = serde_json::to_value(r.kind)?.as_str().unwrap_or_default().to_string();
        report_render(&r, &out, &title)?;
    }
    echo(cfg, &out)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Ingest => cmd_ingest(&cfg),
        Command::Featurize => cmd_featurize(&cfg),
        Command::BuildDataset => cmd_build_dataset(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate { checkpoint } => cmd_evaluate(&cfg, checkpoint.as_deref()),
        Command::Experiment { kind } => cmd_experiment(&cfg, *kind),
        Command::Report { from, fixtures } => cmd_report(&cfg, from.as_deref(), *fixtures),
    }
}

/// Parses `args` and runs; returns the process exit code. Validation and
/// usage errors give 1, runtime failures 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() { 1 } else { 2 }
        }
    }
}
