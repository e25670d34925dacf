use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::baselines::{DLinear, DLinearConfig, TransformerConfig, VanillaTransformer};
use super::metrics::{Metrics, argmax_labels, f1_per_class, relative_improvement};
use super::{save_network, write_predictions};
use crate::dataset::{Dataset, DatasetInputs, Part, SplitKind, SplitSpec, build_dataset};
use crate::featurize::FeatureTable;
use crate::geoindex::RegionId;
use crate::model::{Ablation, CrashFormer, ModelConfig, Network, TileBank};
use crate::train::{TrainConfig, TrainHistory, predict_indices, train_network};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SeqSweep,
    Ablation,
    Temporal,
    Spatial,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq_sweep" => Ok(Self::SeqSweep),
            "ablation" => Ok(Self::Ablation),
            "temporal" => Ok(Self::Temporal),
            "spatial" => Ok(Self::Spatial),
            _ => Err(Error::validation(format!("unknown experiment kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seq_lengths: Vec<usize>,
    /// Split ratios for the sweep and ablation runs.
    pub random_split: [f64; 3],
    /// Targets starting before this go to training in the temporal run.
    /// Defaults to the window at 80% of the study period.
    #[serde(with = "opt_timestamp")]
    pub temporal_cutoff: Option<NaiveDateTime>,
    pub region_fraction: f64,
    pub dlinear: DLinearConfig,
    pub transformer: TransformerConfig,
}

mod opt_timestamp {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Option<NaiveDateTime>, s: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => s.serialize_str(&crate::ingest::format_timestamp(t)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<NaiveDateTime>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| crate::ingest::parse_timestamp(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seq_lengths: vec![4, 8, 12, 16],
            random_split: [0.7, 0.1, 0.2],
            temporal_cutoff: None,
            region_fraction: 0.7,
            dlinear: DLinearConfig::default(),
            transformer: TransformerConfig::default(),
        }
    }
}

/// Everything an experiment needs besides configuration.
pub struct ExperimentData<'a> {
    pub table: &'a FeatureTable,
    /// Raw demographics per table region.
    pub demographics: &'a BTreeMap<RegionId, Vec<f64>>,
    pub tiles: &'a BTreeMap<RegionId, PathBuf>,
    /// Preloaded tiles in table-region order; loaded from `tiles` if absent.
    pub bank: Option<&'a TileBank>,
}

/// Split identity shared by the arms of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub split: SplitSpec,
    /// FNV-1a over (region, target window, part) of every sample.
    pub split_fingerprint: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub f1_1: f64,
    pub f1_0: f64,
    pub precision_1: Option<f64>,
    pub recall_1: Option<f64>,
    pub n: usize,
    pub metrics: Option<Metrics>,
    pub history_len: Option<usize>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub provenance: Option<Provenance>,
}

impl ArmResult {
    pub fn from_metrics(name: &str, m: Metrics) -> Self {
        Self {
            name: name.to_string(),
            f1_1: m.f1_1,
            f1_0: m.f1_0,
            precision_1: Some(m.precision_1),
            recall_1: Some(m.recall_1),
            n: m.n(),
            metrics: Some(m),
            history_len: None,
            best_epoch: None,
            epochs_run: None,
            provenance: None,
        }
    }

    /// An arm known only by its reported scores.
    pub fn from_scores(name: &str, f1_1: f64, f1_0: f64) -> Self {
        Self {
            name: name.to_string(),
            f1_1,
            f1_0,
            precision_1: None,
            recall_1: None,
            n: 0,
            metrics: None,
            history_len: None,
            best_epoch: None,
            epochs_run: None,
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub reference: String,
    pub arm: String,
    pub reference_f1_1: f64,
    pub arm_f1_1: f64,
    /// Relative gain of the reference over the arm, in percent.
    pub percent: f64,
}

impl Improvement {
    pub fn new(reference: &ArmResult, arm: &ArmResult) -> Self {
        Self {
            reference: reference.name.clone(),
            arm: arm.name.clone(),
            reference_f1_1: reference.f1_1,
            arm_f1_1: arm.f1_1,
            percent: relative_improvement(reference.f1_1, arm.f1_1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub arms: Vec<ArmResult>,
    pub improvements: Vec<Improvement>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
}

impl ExperimentReport {
    /// Reference arm is the first; it is compared with every other arm, and
    /// for baseline comparisons with several baselines also with the best one.
    pub fn from_arms(kind: ExperimentKind, arms: Vec<ArmResult>) -> Self {
        let mut improvements: Vec<Improvement> = arms.iter().skip(1).map(|a| Improvement::new(&arms[0], a)).collect();
        if matches!(kind, ExperimentKind::Temporal | ExperimentKind::Spatial) && arms.len() > 2 {
            let best = arms[1..]
                .iter()
                .max_by(|a, b| a.f1_1.total_cmp(&b.f1_1))
                .expect("at least one baseline");
            let mut imp = Improvement::new(&arms[0], best);
            imp.arm = format!("best_baseline:{}", best.name);
            improvements.push(imp);
        }
        Self { kind, arms, improvements, model: None, train: None }
    }

    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.name == name)
    }

    /// True when every trained arm saw the same split.
    pub fn shared_provenance(&self) -> bool {
        let p: Vec<&Provenance> = self.arms.iter().filter_map(|a| a.provenance.as_ref()).collect();
        p.windows(2).all(|w| w[0] == w[1])
    }
}

fn fnv1a(bytes: impl Iterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn provenance(ds: &Dataset, spec: &SplitSpec) -> Provenance {
    let mut h = 0xcbf2_9ce4_8422_2325;
    for (s, p) in ds.samples.iter().zip(&ds.parts) {
        h = fnv1a(s.region.cell().to_le_bytes().into_iter(), h);
        h = fnv1a(s.target_window.index.to_le_bytes().into_iter(), h);
        h = fnv1a(std::iter::once(*p as u8), h);
    }
    Provenance {
        seed: spec.seed,
        split: spec.clone(),
        split_fingerprint: format!("{h:016x}"),
        n_train: ds.indices(Part::Train).len(),
        n_val: ds.indices(Part::Val).len(),
        n_test: ds.indices(Part::Test).len(),
    }
}

struct Runner<'a> {
    data: &'a ExperimentData<'a>,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    out: &'a Path,
    bank: Option<TileBank>,
}

impl Runner<'_> {
    fn dataset(&self, k: usize, split: &SplitSpec, min_target: usize) -> Result<Dataset> {
        build_dataset(
            self.data.table,
            &DatasetInputs {
                k,
                split,
                demographics: self.data.demographics,
                tiles: self.data.tiles,
                tile_shape: [self.model.img_size, self.model.img_size],
                class_weights: self.train.class_weights,
                min_target_window: min_target,
            },
        )
    }

    fn bank(&mut self, ds: &Dataset) -> Result<TileBank> {
        if let Some(b) = self.data.bank {
            return Ok(b.clone());
        }
        if self.bank.is_none() {
            self.bank = Some(TileBank::load(ds, self.model.img_size)?);
        }
        Ok(self.bank.clone().expect("loaded above"))
    }

    fn run_arm<N: Network>(
        &mut self,
        name: &str,
        net: N,
        ds: &Dataset,
        spec: &SplitSpec,
        bank: &TileBank,
    ) -> Result<ArmResult> {
        log::info!("training arm {name}");
        let (net, history): (N, TrainHistory) = train_network(net, ds, bank, self.train)?;
        let test = ds.indices(Part::Test);
        let probs = predict_indices(&net, ds, bank, &test);
        let labels: Vec<u8> = test.iter().map(|&i| ds.samples[i].label).collect();
        let dir = self.out.join("arms").join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_predictions(&dir, &probs, &labels)?;
        history.write_jsonl(&dir.join("history.jsonl"))?;
        save_network(&net, &dir.join("model.ckpt"))?;
        let metrics = f1_per_class(&argmax_labels(&probs), &labels)?;
        let mut arm = ArmResult::from_metrics(name, metrics);
        arm.history_len = Some(ds.k);
        arm.best_epoch = Some(history.best_epoch);
        arm.epochs_run = Some(history.epochs.len());
        arm.provenance = Some(provenance(ds, spec));
        Ok(arm)
    }

    fn baselines(&mut self, ds: &Dataset, spec: &SplitSpec, bank: &TileBank, cfg: &ExperimentConfig) -> Result<Vec<ArmResult>> {
        let k = self.model.history_len;
        let seed = self.train.seed;
        let dl = DLinear::new(DLinearConfig { history_len: k, ..cfg.dlinear.clone() }, seed)?;
        let tf = VanillaTransformer::new(TransformerConfig { history_len: k, ..cfg.transformer.clone() }, seed)?;
        Ok(vec![
            self.run_arm("dlinear", dl, ds, spec, bank)?,
            self.run_arm("transformer", tf, ds, spec, bank)?,
        ])
    }
}

fn default_cutoff(table: &FeatureTable) -> NaiveDateTime {
    table.window(table.n_windows * 4 / 5).start()
}

/// Trains and evaluates every arm of `kind`, writing predictions, histories
/// and checkpoints under `out/arms/<name>/`.
pub fn run_experiment(
    kind: ExperimentKind,
    data: &ExperimentData,
    model: &ModelConfig,
    train: &TrainConfig,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<ExperimentReport> {
    model.validate()?;
    train.validate()?;
    let [a, b, c] = cfg.random_split;
    let random = SplitSpec {
        kind: SplitKind::Random { train: a, val: b, test: c },
        seed: train.seed,
    };
    let mut r = Runner { data, model, train, out, bank: None };
    let mut arms = Vec::new();
    match kind {
        ExperimentKind::SeqSweep => {
            if cfg.seq_lengths.is_empty() {
                return Err(Error::validation("seq_sweep needs at least one history length"));
            }
            // every arm predicts the same targets
            let max_k = *cfg.seq_lengths.iter().max().expect("non-empty");
            for &k in &cfg.seq_lengths {
                let ds = r.dataset(k, &random, max_k)?;
                let bank = r.bank(&ds)?;
                let mc = ModelConfig {
                    history_len: k,
                    n_modes: model.n_modes.min(k / 2 + 1),
                    ..model.clone()
                };
                let net = CrashFormer::new(mc, Ablation::FULL, train.seed)?;
                let mut arm = r.run_arm(&format!("len={k}"), net, &ds, &random, &bank)?;
                // provenance compares split identity, not K
                arm.history_len = Some(k);
                arms.push(arm);
            }
        }
        ExperimentKind::Ablation => {
            let ds = r.dataset(model.history_len, &random, 0)?;
            let bank = r.bank(&ds)?;
            for (name, ab) in Ablation::ARMS {
                let net = CrashFormer::new(model.clone(), ab, train.seed)?;
                arms.push(r.run_arm(name, net, &ds, &random, &bank)?);
            }
        }
        ExperimentKind::Temporal | ExperimentKind::Spatial => {
            let spec = SplitSpec {
                kind: if kind == ExperimentKind::Temporal {
                    SplitKind::Temporal {
                        cutoff: cfg.temporal_cutoff.unwrap_or_else(|| default_cutoff(data.table)),
                    }
                } else {
                    SplitKind::Spatial { region_fraction: cfg.region_fraction }
                },
                seed: train.seed,
            };
            let ds = r.dataset(model.history_len, &spec, 0)?;
            let bank = r.bank(&ds)?;
            let net = CrashFormer::new(model.clone(), Ablation::FULL, train.seed)?;
            arms.push(r.run_arm("crashformer", net, &ds, &spec, &bank)?);
            arms.extend(r.baselines(&ds, &spec, &bank, cfg)?);
        }
    }
    let mut report = ExperimentReport::from_arms(kind, arms);
    report.model = Some(model.clone());
    report.train = Some(train.clone());
    if !report.shared_provenance() {
        return Err(Error::validation("experiment arms saw different splits"));
    }
    Ok(report)
}
