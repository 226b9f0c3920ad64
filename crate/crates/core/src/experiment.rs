//! Ablation matrix runner: mean listener x listener embedding x text proxy
//! x {DAS, CL}, repeated over seeds (system-level task) or grouped folds
//! (utterance-level task).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::evaluate_system_level;
use crate::dataset::{augment_mean_listener, split_grouped_kfold, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{lcc, srcc};
use crate::scorer::{
    train, Activation, AdamParams, Checkpoint, Regime, ScorerConfig, ScorerModel, TrainOptions,
    TrainingSet,
};
use crate::simulator::{generate_dataset, SimConfig, SimOutput, TruthTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "sqa")]
    Sqa,
    #[serde(rename = "cser")]
    Cser,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "DAS")]
    Das,
    #[serde(rename = "CL")]
    Cl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub model: ModelKind,
    pub mean_listener: bool,
    pub listener_embedding: bool,
    #[serde(default)]
    pub text_proxy: bool,
}

impl RegimeSpec {
    pub const fn new(
        model: ModelKind,
        mean_listener: bool,
        listener_embedding: bool,
        text_proxy: bool,
    ) -> Self {
        RegimeSpec {
            model,
            mean_listener,
            listener_embedding,
            text_proxy,
        }
    }

    pub fn label(&self) -> String {
        let mut s = match self.model {
            ModelKind::Das => "DAS".to_string(),
            ModelKind::Cl => "CL".to_string(),
        };
        if self.mean_listener {
            s.push_str("+mean");
        }
        if self.text_proxy {
            s.push_str("+text");
        }
        if self.listener_embedding {
            s.push_str("+emb");
        }
        s
    }

    /// Row order of the report tables: DAS block then CL block.
    fn table_key(&self) -> (ModelKind, bool, bool, bool) {
        (
            self.model,
            self.listener_embedding,
            self.mean_listener,
            self.text_proxy,
        )
    }
}

/// Listener scale used when scoring test utterances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoringScale {
    /// No listener input; the model's single shared scale.
    Unified,
    /// The mean listener's embedding row.
    MeanListener,
}

pub fn inference_policy(regime: &RegimeSpec) -> Result<ScoringScale> {
    match (regime.listener_embedding, regime.mean_listener) {
        (false, _) => Ok(ScoringScale::Unified),
        (true, true) => Ok(ScoringScale::MeanListener),
        (true, false) => Err(Error::Config(format!(
            "regime {}: listener embedding without the mean listener has no test-time listener",
            regime.label()
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerSettings {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub pairs_per_epoch: Option<usize>,
}

impl Default for ScorerSettings {
    fn default() -> Self {
        ScorerSettings {
            hidden_dims: vec![16, 16],
            activation: Activation::Tanh,
            embedding_dim: 4,
            epochs: 300,
            batch_size: 32,
            lr: 1e-3,
            pairs_per_epoch: None,
        }
    }
}

impl ScorerSettings {
    /// Shorter, faster schedule used by the experiment presets so a full
    /// matrix finishes in minutes on one core.
    pub fn desk_scale() -> Self {
        ScorerSettings {
            epochs: 40,
            lr: 5e-3,
            ..Self::default()
        }
    }
}

/// How DAS models turn utterance predictions into system scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DasSystemScoring {
    /// Mean of the system's utterance predictions.
    Average,
    /// The same balanced-pair comparison aggregation CL models use.
    Comparison,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub sim: SimConfig,
    pub regimes: Vec<RegimeSpec>,
    /// Seeds for the system-level task.
    pub repeats: usize,
    /// Folds for the utterance-level task.
    pub folds: usize,
    /// Independent dataset draws, each split into `folds` (utterance-level task).
    #[serde(default = "one")]
    pub fold_seeds: usize,
    pub base_seed: u64,
    pub scorer: ScorerSettings,
    pub pairs_per_system_pair: usize,
    /// Share of each system's utterances held out for system-level testing;
    /// `None` trains and evaluates on the whole generated dataset.
    #[serde(default)]
    pub test_fraction: Option<f64>,
    pub das_system_scoring: DasSystemScoring,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn sqa_preset() -> Self {
        use ModelKind::*;
        ExperimentConfig {
            task: Task::Sqa,
            sim: SimConfig::sqa_preset(0),
            regimes: vec![
                RegimeSpec::new(Das, false, false, false),
                RegimeSpec::new(Das, true, false, false),
                RegimeSpec::new(Das, true, true, false),
                RegimeSpec::new(Cl, false, false, false),
                RegimeSpec::new(Cl, true, false, false),
                RegimeSpec::new(Cl, true, true, false),
            ],
            repeats: 10,
            folds: 5,
            fold_seeds: 1,
            base_seed: 0,
            scorer: ScorerSettings::desk_scale(),
            pairs_per_system_pair: 25,
            test_fraction: None,
            das_system_scoring: DasSystemScoring::Comparison,
        }
    }

    pub fn cser_preset() -> Self {
        use ModelKind::*;
        let mut regimes = Vec::new();
        for model in [Das, Cl] {
            for (mean, emb) in [(false, false), (true, false), (true, true)] {
                for text in [false, true] {
                    regimes.push(RegimeSpec::new(model, mean, emb, text));
                }
            }
        }
        ExperimentConfig {
            task: Task::Cser,
            sim: SimConfig::cser_preset(0),
            regimes,
            repeats: 1,
            folds: 5,
            fold_seeds: 1,
            base_seed: 0,
            scorer: ScorerSettings::desk_scale(),
            pairs_per_system_pair: 5,
            test_fraction: None,
            das_system_scoring: DasSystemScoring::Comparison,
        }
    }

    pub fn preset(task: Task) -> Self {
        match task {
            Task::Sqa => Self::sqa_preset(),
            Task::Cser => Self::cser_preset(),
        }
    }

    /// Overlays a (possibly partial) JSON object on the preset named by its
    /// `task` field, which defaults to `sqa`.
    pub fn from_json_overrides(overrides: &serde_json::Value) -> Result<Self> {
        let task = match overrides.get("task") {
            None => Task::Sqa,
            Some(t) => serde_json::from_value(t.clone())
                .map_err(|e| Error::Config(format!("task: {e}")))?,
        };
        let mut base = serde_json::to_value(Self::preset(task)).expect("config serializes");
        merge_json(&mut base, overrides);
        let cfg: ExperimentConfig = serde_json::from_value(base)
            .map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.regimes.is_empty() {
            return Err(Error::Config("no regimes configured".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.regimes {
            inference_policy(r)?;
            if !seen.insert(*r) {
                return Err(Error::Config(format!("regime {} listed twice", r.label())));
            }
        }
        match self.task {
            Task::Sqa if self.repeats == 0 => {
                return Err(Error::Config("repeats must be >= 1".into()))
            }
            Task::Cser if self.folds < 2 => return Err(Error::Config("folds must be >= 2".into())),
            Task::Cser if self.fold_seeds == 0 => {
                return Err(Error::Config("fold_seeds must be >= 1".into()))
            }
            _ => {}
        }
        if self.regimes.iter().any(|r| r.text_proxy) && !self.sim.text_proxy_enabled {
            return Err(Error::Config(
                "text_proxy regimes need sim.text_proxy_enabled".into(),
            ));
        }
        if self.test_fraction.is_some_and(|f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.pairs_per_system_pair == 0 {
            return Err(Error::Config("pairs_per_system_pair must be >= 1".into()));
        }
        let sc = &self.scorer;
        if sc.batch_size == 0 || sc.embedding_dim == 0 || sc.hidden_dims.contains(&0) {
            return Err(Error::Config("scorer sizes must be >= 1".into()));
        }
        if !(sc.lr > 0.0 && sc.lr.is_finite()) {
            return Err(Error::Config("scorer lr must be positive".into()));
        }
        Ok(())
    }
}

/// Recursive object merge; non-object values in `overrides` replace `base`.
pub fn merge_json(base: &mut serde_json::Value, overrides: &serde_json::Value) {
    match (base, overrides) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores {
    pub srcc: f64,
    pub lcc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Repeat index (system-level) or `seed_index * folds + fold` (utterance-level).
    pub index: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub scores: BTreeMap<String, AttributeScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub srcc_mean: f64,
    pub srcc_sd: f64,
    pub lcc_mean: f64,
    pub lcc_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub label: String,
    pub regime: RegimeSpec,
    pub runs: Vec<RunRecord>,
    pub summary: BTreeMap<String, Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: Task,
    pub attributes: Vec<String>,
    pub regimes: Vec<RegimeReport>,
    /// Checksum of each shared dataset, identical before and after all cells ran.
    pub dataset_checksums: Vec<String>,
    pub config: ExperimentConfig,
    /// Wall-clock seconds; kept out of the serialized report so that it stays byte-stable.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn regime(&self, label: &str) -> Option<&RegimeReport> {
        self.regimes.iter().find(|r| r.label == label)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|source| Error::Json {
                context: "serializing report".into(),
                source,
            })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|source| Error::Json {
            context: "parsing report".into(),
            source,
        })
    }

    /// Markdown table. Each attribute gets an SRCC and an LCC column; with a
    /// single attribute the two are shown together in one `SRCC / LCC` column.
    pub fn to_markdown(&self) -> String {
        let mut rows: Vec<&RegimeReport> = self.regimes.iter().collect();
        rows.sort_by_key(|r| r.regime.table_key());
        let with_text = self.regimes.iter().any(|r| r.regime.text_proxy) || self.task == Task::Cser;
        let mut out = String::new();
        let mut header = vec!["Model", "Mean Listener"];
        if with_text {
            header.push("Text");
        }
        header.push("Listener Embedding");
        let mut header: Vec<String> = header.into_iter().map(String::from).collect();
        let single = self.attributes.len() == 1;
        if single {
            header.push("SRCC / LCC".into());
        } else {
            for a in &self.attributes {
                header.push(format!("{a} SRCC"));
                header.push(format!("{a} LCC"));
            }
        }
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}|", vec!["---"; header.len()].join("|"));
        let mark = |b: bool| if b { "✓" } else { "" };
        for r in rows {
            let model = match r.regime.model {
                ModelKind::Das => "DAS",
                ModelKind::Cl => "CL",
            };
            let mut cells = vec![model.to_string(), mark(r.regime.mean_listener).to_string()];
            if with_text {
                cells.push(mark(r.regime.text_proxy).to_string());
            }
            cells.push(mark(r.regime.listener_embedding).to_string());
            for a in &self.attributes {
                let s = &r.summary[a];
                if single {
                    cells.push(format!("{:.6} / {:.6}", s.srcc_mean, s.lcc_mean));
                } else {
                    cells.push(format!("{:.6}", s.srcc_mean));
                    cells.push(format!("{:.6}", s.lcc_mean));
                }
            }
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        let runs = self.regimes.first().map_or(0, |r| r.runs.len());
        let unit = match self.task {
            Task::Sqa => "repeats",
            Task::Cser => "folds",
        };
        let _ = writeln!(out, "\nMeans over {runs} {unit}.");
        out
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(runs: &[RunRecord], attributes: &[String]) -> BTreeMap<String, Summary> {
    attributes
        .iter()
        .map(|a| {
            let s: Vec<f64> = runs.iter().map(|r| r.scores[a].srcc).collect();
            let l: Vec<f64> = runs.iter().map(|r| r.scores[a].lcc).collect();
            let (srcc_mean, srcc_sd) = mean_sd(&s);
            let (lcc_mean, lcc_sd) = mean_sd(&l);
            (
                a.clone(),
                Summary {
                    srcc_mean,
                    srcc_sd,
                    lcc_mean,
                    lcc_sd,
                },
            )
        })
        .collect()
}

/// FNV-1a over the regime label and cell index, mixed into the base seed.
pub fn cell_seed(base_seed: u64, regime: &RegimeSpec, index: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in regime.label().bytes().chain((index as u64).to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    base_seed ^ h
}

/// A trained cell: its record plus the checkpoint to persist.
#[derive(Clone, Debug)]
pub struct CellOutput {
    pub regime: RegimeSpec,
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

/// One shared dataset: the ratings to train on and what to evaluate against.
struct SharedData {
    train: Dataset,
    test: Dataset,
    truth: TruthTable,
    text_channel: Option<usize>,
    eval_seed: u64,
}

impl SharedData {
    fn checksum(&self) -> String {
        format!("{}:{}", self.train.checksum(), self.test.checksum())
    }
}

/// Drops the text channel unless the regime uses it.
fn regime_view(ds: &Dataset, text_channel: Option<usize>, regime: &RegimeSpec) -> Result<Dataset> {
    match text_channel {
        Some(c) if !regime.text_proxy => {
            let dim = ds.require_features()?;
            let keep: Vec<usize> = (0..dim).filter(|&i| i != c).collect();
            ds.select_feature_channels(&keep)
        }
        _ => Ok(ds.clone()),
    }
}

/// A trained scorer with the listener row used at inference.
#[derive(Clone, Debug)]
pub struct FittedScorer {
    pub model: ScorerModel,
    pub loss_curve: Vec<f64>,
    /// `None` for the unified-scale models; the mean listener's row otherwise.
    pub inference_listener: Option<usize>,
    pub checkpoint: Checkpoint,
}

impl FittedScorer {
    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().copied().unwrap_or(f64::NAN)
    }
}

/// Trains one scorer on `ds`, augmenting with the mean listener first when
/// asked. Embedding without the mean listener is a config error because
/// inference has no listener row to use.
pub fn fit_scorer(
    ds: &Dataset,
    regime: Regime,
    mean_listener: bool,
    listener_embedding: bool,
    settings: &ScorerSettings,
    seed: u64,
) -> Result<FittedScorer> {
    if listener_embedding && !mean_listener {
        return Err(Error::Config(
            "listener embedding needs the mean listener: inference uses its embedding".into(),
        ));
    }
    let ds = if mean_listener {
        augment_mean_listener(ds)?
    } else {
        ds.clone()
    };
    let set = TrainingSet::from_dataset(&ds)?;
    let mut scfg = ScorerConfig::new(ds.require_features()?, ds.attributes().len());
    scfg.hidden_dims = settings.hidden_dims.clone();
    scfg.activation = settings.activation;
    scfg.embedding_dim = settings.embedding_dim;
    scfg.seed = seed;
    if listener_embedding {
        scfg = scfg.with_listener_embedding(set.vocab.len());
    }
    let model = ScorerModel::new(scfg)?;
    let opts = TrainOptions {
        regime,
        epochs: settings.epochs,
        batch_size: settings.batch_size,
        adam: AdamParams {
            lr: settings.lr,
            ..AdamParams::default()
        },
        seed: seed.wrapping_add(1),
        pairs_per_epoch: settings.pairs_per_epoch,
        include_mean_listener: mean_listener,
    };
    let out = train(model, &set, &opts)?;
    if out.loss_curve.iter().any(|l| !l.is_finite()) {
        return Err(Error::Contract("training loss diverged".into()));
    }
    let inference_listener = if listener_embedding {
        Some(
            set.vocab
                .mean_listener()
                .ok_or_else(|| Error::Contract("mean listener missing from vocabulary".into()))?,
        )
    } else {
        None
    };
    let checkpoint = out
        .model
        .to_checkpoint(Some(&out.optimizer), set.vocab.ids());
    Ok(FittedScorer {
        model: out.model,
        loss_curve: out.loss_curve,
        inference_listener,
        checkpoint,
    })
}

fn train_regime(
    cfg: &ExperimentConfig,
    regime: &RegimeSpec,
    train_ds: &Dataset,
    seed: u64,
) -> Result<FittedScorer> {
    let kind = match (regime.model, cfg.task) {
        (ModelKind::Cl, _) => Regime::Comparison,
        (ModelKind::Das, Task::Sqa) => Regime::DasMse,
        (ModelKind::Das, Task::Cser) => Regime::DasCcc,
    };
    inference_policy(regime)?;
    fit_scorer(
        train_ds,
        kind,
        regime.mean_listener,
        regime.listener_embedding,
        &cfg.scorer,
        seed,
    )
}

fn correlation_pair(pred: &[f64], truth: &[f64]) -> Result<AttributeScores> {
    Ok(AttributeScores {
        srcc: srcc(pred, truth)?,
        lcc: lcc(pred, truth)?,
    })
}

fn run_sqa_cell(
    cfg: &ExperimentConfig,
    regime: &RegimeSpec,
    data: &SharedData,
    index: usize,
) -> Result<CellOutput> {
    let seed = cell_seed(cfg.base_seed, regime, index);
    let train_ds = regime_view(&data.train, data.text_channel, regime)?;
    let test_ds = regime_view(&data.test, data.text_channel, regime)?;
    let out = train_regime(cfg, regime, &train_ds, seed)?;
    let model = &out.model;
    // Every regime of a repeat is scored on the same balanced pair draw, so
    // regime differences are not masked by evaluation sampling noise.
    let mut rng = ChaCha8Rng::seed_from_u64(data.eval_seed);
    let attr = 0;
    let system_scores = match (regime.model, cfg.das_system_scoring) {
        (ModelKind::Das, DasSystemScoring::Average) => {
            let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for (utt, sys) in test_ds.utterance_systems() {
                let x = test_ds.feature(utt).expect("test features present");
                let e = acc.entry(sys).or_insert((0.0, 0));
                e.0 += model.forward(x, out.inference_listener)?[attr];
                e.1 += 1;
            }
            acc.into_iter()
                .map(|(k, (s, n))| (k.to_string(), s / n as f64))
                .collect()
        }
        _ => evaluate_system_level(
            model,
            &test_ds,
            attr,
            cfg.pairs_per_system_pair,
            out.inference_listener,
            &mut rng,
        )?,
    };
    let truth = data.truth.system_scores(attr);
    let (pred, reference): (Vec<f64>, Vec<f64>) = system_scores
        .iter()
        .map(|(sys, s)| (*s, truth[sys]))
        .unzip();
    let mut scores = BTreeMap::new();
    scores.insert(
        test_ds.attributes()[attr].to_string(),
        correlation_pair(&pred, &reference)?,
    );
    Ok(CellOutput {
        regime: *regime,
        record: RunRecord {
            index,
            seed,
            final_loss: out.final_loss(),
            scores,
        },
        checkpoint: out.checkpoint,
    })
}

fn run_cser_cell(
    cfg: &ExperimentConfig,
    regime: &RegimeSpec,
    data: &SharedData,
    index: usize,
) -> Result<CellOutput> {
    let seed = cell_seed(cfg.base_seed, regime, index);
    let train_ds = regime_view(&data.train, data.text_channel, regime)?;
    let test_ds = regime_view(&data.test, data.text_channel, regime)?;
    let out = train_regime(cfg, regime, &train_ds, seed)?;
    let model = &out.model;
    let n_attr = test_ds.attributes().len();
    let mut pred = vec![Vec::new(); n_attr];
    let mut reference = vec![Vec::new(); n_attr];
    for utt in test_ds.utterance_ids() {
        let p = model.forward(
            test_ds.feature(utt).expect("test features present"),
            out.inference_listener,
        )?;
        let t = &data.truth.utterances[utt].scores;
        for k in 0..n_attr {
            pred[k].push(p[k]);
            reference[k].push(t[k]);
        }
    }
    let mut scores = BTreeMap::new();
    for (k, a) in test_ds.attributes().iter().enumerate() {
        scores.insert(a.to_string(), correlation_pair(&pred[k], &reference[k])?);
    }
    Ok(CellOutput {
        regime: *regime,
        record: RunRecord {
            index,
            seed,
            final_loss: out.final_loss(),
            scores,
        },
        checkpoint: out.checkpoint,
    })
}

/// Holds out `test_fraction` of each system's utterances by seeded shuffle.
fn split_by_system(ds: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut by_system: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (utt, sys) in ds.utterance_systems() {
        by_system.entry(sys).or_default().push(utt);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test: HashSet<String> = HashSet::new();
    for utts in by_system.values_mut() {
        utts.shuffle(&mut rng);
        let n_test = ((utts.len() as f64 * test_fraction).round() as usize).clamp(1, utts.len());
        test.extend(utts[..n_test].iter().map(|u| u.to_string()));
    }
    (
        ds.filter_utterances(|u| !test.contains(u)),
        ds.filter_utterances(|u| test.contains(u)),
    )
}

fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<SimOutput> {
    let mut sim = cfg.sim.clone();
    sim.seed = seed;
    generate_dataset(&sim)
}

/// Runs `f` over work items on `jobs` threads, returning results in item order.
fn run_cells<T, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<CellOutput>>
where
    T: Sync,
    F: Fn(&T) -> Result<CellOutput> + Sync + Send,
{
    if jobs <= 1 {
        return items.iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

fn assemble(
    cfg: &ExperimentConfig,
    attributes: Vec<String>,
    cells: Vec<CellOutput>,
    checksums: Vec<String>,
    started: Instant,
) -> (ExperimentReport, Vec<CellOutput>) {
    let regimes = cfg
        .regimes
        .iter()
        .map(|r| {
            let mut runs: Vec<RunRecord> = cells
                .iter()
                .filter(|c| c.regime == *r)
                .map(|c| c.record.clone())
                .collect();
            runs.sort_by_key(|c| c.index);
            RegimeReport {
                label: r.label(),
                regime: *r,
                summary: summarize(&runs, &attributes),
                runs,
            }
        })
        .collect();
    (
        ExperimentReport {
            task: cfg.task,
            attributes,
            regimes,
            dataset_checksums: checksums,
            config: cfg.clone(),
            runtime_seconds: started.elapsed().as_secs_f64(),
        },
        cells,
    )
}

fn wrap_cell(regime: &RegimeSpec, seed: u64) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Cell {
        regime: regime.label(),
        seed,
        source: Box::new(e),
    }
}

/// System-level experiment: per repeat a fresh dataset, a per-system
/// held-out split, and one trained model per regime.
pub fn run_sqa_experiment_cells(
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<(ExperimentReport, Vec<CellOutput>)> {
    if cfg.task != Task::Sqa {
        return Err(Error::Config("run_sqa_experiment needs task = sqa".into()));
    }
    cfg.validate()?;
    let started = Instant::now();
    let mut shared = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let seed = cfg.base_seed.wrapping_add(r as u64);
        let sim = generate(cfg, seed)?;
        let (train, test) = match cfg.test_fraction {
            Some(f) => split_by_system(&sim.dataset, f, seed),
            None => (sim.dataset.clone(), sim.dataset),
        };
        shared.push(SharedData {
            train,
            test,
            truth: sim.truth,
            text_channel: sim.text_channel,
            eval_seed: seed ^ 0x9e37_79b9_7f4a_7c15,
        });
    }
    let before: Vec<String> = shared.iter().map(SharedData::checksum).collect();
    let items: Vec<(usize, RegimeSpec)> = (0..cfg.repeats)
        .flat_map(|r| cfg.regimes.iter().map(move |g| (r, *g)))
        .collect();
    let cells = run_cells(&items, jobs, |(r, g)| {
        run_sqa_cell(cfg, g, &shared[*r], *r).map_err(wrap_cell(g, cell_seed(cfg.base_seed, g, *r)))
    })?;
    let after: Vec<String> = shared.iter().map(SharedData::checksum).collect();
    if before != after {
        return Err(Error::Contract(
            "shared dataset changed during the experiment".into(),
        ));
    }
    let attributes = vec![cfg.sim.attributes[0].to_string()];
    Ok(assemble(cfg, attributes, cells, before, started))
}

pub fn run_sqa_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_sqa_experiment_cells(cfg, 1).map(|(r, _)| r)
}

/// Utterance-level experiment over grouped folds, repeated for `fold_seeds`
/// dataset draws.
pub fn run_cser_experiment_cells(
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<(ExperimentReport, Vec<CellOutput>)> {
    if cfg.task != Task::Cser {
        return Err(Error::Config(
            "run_cser_experiment needs task = cser".into(),
        ));
    }
    cfg.validate()?;
    let started = Instant::now();
    let mut shared = Vec::new();
    for s in 0..cfg.fold_seeds {
        let seed = cfg.base_seed.wrapping_add(s as u64);
        let sim = generate(cfg, seed)?;
        for fold in split_grouped_kfold(&sim.dataset, cfg.folds, seed)? {
            shared.push(SharedData {
                train: fold.train,
                test: fold.test,
                truth: sim.truth.clone(),
                text_channel: sim.text_channel,
                eval_seed: seed,
            });
        }
    }
    let before: Vec<String> = shared.iter().map(SharedData::checksum).collect();
    let items: Vec<(usize, RegimeSpec)> = (0..shared.len())
        .flat_map(|i| cfg.regimes.iter().map(move |g| (i, *g)))
        .collect();
    let cells = run_cells(&items, jobs, |(i, g)| {
        run_cser_cell(cfg, g, &shared[*i], *i)
            .map_err(wrap_cell(g, cell_seed(cfg.base_seed, g, *i)))
    })?;
    let after: Vec<String> = shared.iter().map(SharedData::checksum).collect();
    if before != after {
        return Err(Error::Contract(
            "shared dataset changed during the experiment".into(),
        ));
    }
    let attributes = cfg.sim.attributes.iter().map(|a| a.to_string()).collect();
    Ok(assemble(cfg, attributes, cells, before, started))
}

pub fn run_cser_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_cser_experiment_cells(cfg, 1).map(|(r, _)| r)
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<(ExperimentReport, Vec<CellOutput>)> {
    match cfg.task {
        Task::Sqa => run_sqa_experiment_cells(cfg, jobs),
        Task::Cser => run_cser_experiment_cells(cfg, jobs),
    }
}
