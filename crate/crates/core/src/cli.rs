//! Command-line front end: `simulate`, `train`, `eval`, `metrics`, `matrix`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::comparison::evaluate_system_level;
use crate::dataset::{
    load_features_csv, load_ratings_csv, system_ground_truth, AttributeName, Dataset, MEAN_LISTENER,
};
use crate::error::{Error, Result};
use crate::experiment::{
    fit_scorer, merge_json, run_experiment, ExperimentConfig, ScorerSettings, Task,
};
use crate::metrics::summarize;
use crate::scorer::{Activation, Checkpoint, Regime, ScorerModel};
use crate::simulator::{generate_dataset, write_simulation, SimConfig, TruthTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "listener-scale",
    version,
    about = "Listener-aware preference scoring toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic rating corpus.
    Simulate(SimulateArgs),
    /// Train a scorer on a ratings + features corpus.
    Train(TrainArgs),
    /// Score a corpus with a trained model and correlate with ground truth.
    Eval(EvalArgs),
    /// SRCC / LCC / CCC between two score columns.
    Metrics(MetricsArgs),
    /// Run the ablation matrix and write report.json, report.md and checkpoints.
    Matrix(MatrixArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Sqa,
    Cser,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "sqa")]
    pub preset: Preset,
    /// JSON object overriding preset fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for ratings.csv, features.csv, truth.csv and sim_config.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Comma-separated attribute columns; all attribute columns of the file when omitted.
    #[arg(long)]
    pub attributes: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub likert: u32,
    /// DAS-MSE, DAS-CCC or CL.
    #[arg(long, default_value = "CL")]
    pub regime: String,
    /// Augment with the mean listener (and train on its pairs under CL).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub mean_listener: Option<bool>,
    /// Condition the scorer on a learned listener embedding.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub listener_embedding: Option<bool>,
    /// JSON object with any of: hidden_dims, activation, embedding_dim, epochs,
    /// batch_size, lr, pairs_per_epoch.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hidden_dims: Option<String>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub pairs_per_epoch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// Balanced system pairs, No-Draw thresholding, differential count.
    Comparison,
    /// Mean utterance prediction per system.
    Average,
    /// Utterance-level predictions.
    Utterance,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Attribute to evaluate; the first attribute when omitted.
    #[arg(long)]
    pub attribute: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub likert: u32,
    #[arg(long, value_enum, default_value = "comparison")]
    pub mode: EvalMode,
    #[arg(long, default_value_t = 5)]
    pub pairs_per_system_pair: usize,
    /// Latent truth CSV; rating means are the reference when omitted.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for scores.csv and eval.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// CSV `id,value` of predictions.
    #[arg(long, requires = "reference", conflicts_with = "input")]
    pub pred: Option<PathBuf>,
    /// CSV `id,value` of reference scores, joined to --pred by id.
    #[arg(long = "ref", requires = "pred")]
    pub reference: Option<PathBuf>,
    /// Two-column CSV (predicted, reference) with a header row.
    #[arg(long, required_unless_present = "pred")]
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MatrixArgs {
    /// JSON object layered over the preset named by its `task` field.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset used when the config does not name a task.
    #[arg(long, value_enum)]
    pub task: Option<Preset>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides base_seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args` (program name first) and runs the subcommand, returning
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Matrix(a) => matrix_cmd(a),
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_json_string<T: Serialize>(v: &T, what: &str) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|source| Error::Json {
            context: what.into(),
            source,
        })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let preset = match a.preset {
        Preset::Sqa => SimConfig::sqa_preset(0),
        Preset::Cser => SimConfig::cser_preset(0),
    };
    let mut value = serde_json::to_value(&preset).expect("sim config serializes");
    if let Some(path) = &a.config {
        merge_json(&mut value, &read_json(path)?);
    }
    let mut cfg: SimConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("sim config: {e}")))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    info!(
        "simulate: {}",
        serde_json::to_string(&cfg).unwrap_or_default()
    );
    let out = generate_dataset(&cfg)?;
    write_simulation(&out, &cfg, &a.out)?;
    info!(
        "wrote {} ratings over {} utterances to {}",
        out.dataset.ratings().len(),
        out.dataset.utterance_ids().len(),
        a.out.display()
    );
    Ok(())
}

fn load_corpus(
    ratings: &Path,
    features: &Path,
    attributes: &[AttributeName],
    likert: u32,
) -> Result<Dataset> {
    let ds = load_ratings_csv(ratings, attributes, likert)?;
    ds.with_features(load_features_csv(features)?)
}

fn train_settings(a: &TrainArgs) -> Result<ScorerSettings> {
    let d = ScorerSettings::default();
    let mut value = serde_json::to_value(&d).expect("settings serialize");
    if let Some(path) = &a.config {
        merge_json(&mut value, &read_json(path)?);
    }
    let mut s: ScorerSettings =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("train config: {e}")))?;
    if let Some(h) = &a.hidden_dims {
        s.hidden_dims = h
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("--hidden-dims: bad width {p:?}")))
            })
            .collect::<Result<_>>()?;
    }
    if let Some(act) = a.activation {
        s.activation = match act {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Relu => Activation::Relu,
        };
    }
    s.embedding_dim = a.embedding_dim.unwrap_or(s.embedding_dim);
    s.epochs = a.epochs.unwrap_or(s.epochs);
    s.batch_size = a.batch_size.unwrap_or(s.batch_size);
    s.lr = a.lr.unwrap_or(s.lr);
    s.pairs_per_epoch = a.pairs_per_epoch.or(s.pairs_per_epoch);
    if s.batch_size == 0 || s.embedding_dim == 0 || !(s.lr > 0.0 && s.lr.is_finite()) {
        return Err(Error::Config(
            "batch_size, embedding_dim and lr must be positive".into(),
        ));
    }
    Ok(s)
}

fn parse_attributes(s: Option<&str>) -> Result<Vec<AttributeName>> {
    match s {
        None => Ok(Vec::new()),
        Some(s) => {
            AttributeName::parse_list(s).map_err(|e| Error::Config(format!("--attributes: {e}")))
        }
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let regime = Regime::parse(&a.regime).map_err(|e| Error::Config(e.to_string()))?;
    let mean = a.mean_listener.unwrap_or(false);
    let emb = a.listener_embedding.unwrap_or(false);
    if emb && !mean {
        return Err(Error::Config(
            "--listener-embedding needs --mean-listener: inference uses the mean listener's embedding".into(),
        ));
    }
    let settings = train_settings(&a)?;
    let attributes = parse_attributes(a.attributes.as_deref())?;
    info!(
        "train: regime={:?} mean_listener={mean} listener_embedding={emb} seed={} settings={}",
        regime,
        a.seed,
        serde_json::to_string(&settings).unwrap_or_default()
    );
    let ds = load_corpus(&a.ratings, &a.features, &attributes, a.likert)?;
    let fitted = fit_scorer(&ds, regime, mean, emb, &settings, a.seed)?;
    info!("final epoch loss {}", fitted.final_loss());
    let ck = fitted.checkpoint;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    ck.save(&a.out)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    attribute: String,
    mode: &'static str,
    reference: &'static str,
    listener: Option<String>,
    n: usize,
    srcc: f64,
    lcc: f64,
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.model)?;
    let model = ScorerModel::from_checkpoint(&ck)?;
    let ds = load_corpus(&a.ratings, &a.features, &[], a.likert)?;
    let attribute = match &a.attribute {
        Some(s) => AttributeName::new(s.as_str())
            .map_err(|e| Error::Config(format!("--attribute: {e}")))?,
        None => ds.attributes()[0].clone(),
    };
    let attr_idx = ds.attribute_index(&attribute)?;
    if ds.attributes().len() != model.config().n_attributes {
        return Err(Error::Dimension {
            expected: model.config().n_attributes,
            actual: ds.attributes().len(),
        });
    }
    let listener = if model.config().use_listener_embedding {
        let idx = ck
            .listeners
            .iter()
            .position(|l| l == MEAN_LISTENER)
            .ok_or_else(|| {
                Error::Config("embedding model has no mean-listener row to score with".into())
            })?;
        Some(idx)
    } else {
        None
    };
    info!(
        "eval: model={} attribute={attribute} mode={:?} pairs_per_system_pair={} seed={}",
        a.model.display(),
        a.mode,
        a.pairs_per_system_pair,
        a.seed
    );
    let truth = a.truth.as_ref().map(TruthTable::read_csv).transpose()?;
    let truth_idx = match &truth {
        Some(t) => Some(
            t.attributes
                .iter()
                .position(|x| *x == attribute)
                .ok_or_else(|| {
                    Error::Schema(format!("truth file has no column for {attribute}"))
                })?,
        ),
        None => None,
    };

    let (header, scores, reference): (&str, BTreeMap<String, f64>, BTreeMap<String, f64>) =
        match a.mode {
            EvalMode::Utterance => {
                let mut scores = BTreeMap::new();
                for utt in ds.utterance_ids() {
                    let x = ds.feature(utt).expect("features cover ratings");
                    scores.insert(utt.to_string(), model.forward(x, listener)?[attr_idx]);
                }
                let reference = match (&truth, truth_idx) {
                    (Some(t), Some(k)) => t
                        .utterances
                        .iter()
                        .map(|(u, v)| (u.clone(), v.scores[k]))
                        .collect(),
                    _ => utterance_rating_means(&ds, attr_idx),
                };
                ("utterance_id", scores, reference)
            }
            mode => {
                let scores = if mode == EvalMode::Comparison {
                    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                    evaluate_system_level(
                        &model,
                        &ds,
                        attr_idx,
                        a.pairs_per_system_pair,
                        listener,
                        &mut rng,
                    )?
                } else {
                    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
                    for (utt, sys) in ds.utterance_systems() {
                        let x = ds.feature(utt).expect("features cover ratings");
                        let e = acc.entry(sys.to_string()).or_insert((0.0, 0));
                        e.0 += model.forward(x, listener)?[attr_idx];
                        e.1 += 1;
                    }
                    acc.into_iter()
                        .map(|(k, (s, n))| (k, s / n as f64))
                        .collect()
                };
                let reference = match (&truth, truth_idx) {
                    (Some(t), Some(k)) => t.system_scores(k),
                    _ => system_ground_truth(&ds, &attribute)?,
                };
                ("system_id", scores, reference)
            }
        };
    let (pred, refs): (Vec<f64>, Vec<f64>) = scores
        .iter()
        .map(|(id, s)| {
            reference
                .get(id)
                .map(|r| (*s, *r))
                .ok_or_else(|| Error::Dataset(format!("no reference score for {id}")))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let summary = summarize(&pred, &refs)?;

    create_dir(&a.out)?;
    let mut csv = format!("{header},score\n");
    for (id, s) in &scores {
        csv.push_str(&format!("{id},{s}\n"));
    }
    write_file(&a.out.join("scores.csv"), &csv)?;
    let report = EvalReport {
        attribute: attribute.to_string(),
        mode: match a.mode {
            EvalMode::Comparison => "comparison",
            EvalMode::Average => "average",
            EvalMode::Utterance => "utterance",
        },
        reference: if truth.is_some() {
            "truth"
        } else {
            "rating_mean"
        },
        listener: listener.map(|i| ck.listeners[i].clone()),
        n: summary.n,
        srcc: summary.srcc,
        lcc: summary.lcc,
    };
    let json = to_json_string(&report, "eval report")?;
    write_file(&a.out.join("eval.json"), &json)?;
    print!("{json}");
    Ok(())
}

fn utterance_rating_means(ds: &Dataset, attr: usize) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in ds.ratings().iter().filter(|r| !r.is_mean_listener()) {
        let e = acc.entry(r.utterance_id.clone()).or_insert((0.0, 0));
        e.0 += r.scores[attr];
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

fn read_id_values(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            context: path.display().to_string(),
            source,
        })?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|source| Error::Csv {
            context: path.display().to_string(),
            source,
        })?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!(
                    "{}: expected 2 columns (id,value), found {}",
                    path.display(),
                    rec.len()
                ),
            });
        }
        let v: f64 = rec[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("{}: bad number {:?}", path.display(), &rec[1]),
        })?;
        if out.insert(rec[0].to_string(), v).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("{}: duplicate id {:?}", path.display(), &rec[0]),
            });
        }
    }
    Ok(out)
}

fn read_two_columns(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            context: path.display().to_string(),
            source,
        })?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|source| Error::Csv {
            context: path.display().to_string(),
            source,
        })?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("bad number {s:?}"),
            })
        };
        x.push(parse(&rec[0])?);
        y.push(parse(&rec[1])?);
    }
    Ok((x, y))
}

fn metrics_cmd(a: MetricsArgs) -> Result<()> {
    let (x, y) = match (&a.pred, &a.reference, &a.input) {
        (Some(p), Some(r), _) => {
            let pred = read_id_values(p)?;
            let reference = read_id_values(r)?;
            let mut x = Vec::with_capacity(pred.len());
            let mut y = Vec::with_capacity(pred.len());
            for (id, v) in &pred {
                let r = reference.get(id).ok_or_else(|| {
                    Error::Dataset(format!("id {id:?} missing from {}", r.display()))
                })?;
                x.push(*v);
                y.push(*r);
            }
            if reference.len() != pred.len() {
                return Err(Error::Dataset(format!(
                    "{} has ids not present in {}",
                    r.display(),
                    p.display()
                )));
            }
            (x, y)
        }
        (_, _, Some(input)) => read_two_columns(input)?,
        _ => return Err(Error::Config("give --pred and --ref, or --input".into())),
    };
    let summary = summarize(&x, &y)?;
    print!("{}", to_json_string(&summary, "metrics")?);
    Ok(())
}

fn matrix_cmd(a: MatrixArgs) -> Result<()> {
    let mut overrides = match &a.config {
        Some(p) => read_json(p)?,
        None => serde_json::json!({}),
    };
    if !overrides.is_object() {
        return Err(Error::Config("matrix config must be a JSON object".into()));
    }
    if let Some(task) = a.task {
        let name = match task {
            Preset::Sqa => "sqa",
            Preset::Cser => "cser",
        };
        overrides["task"] = serde_json::json!(name);
    }
    if let Some(seed) = a.seed {
        overrides["base_seed"] = serde_json::json!(seed);
    }
    if a.jobs == 0 {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    let cfg = ExperimentConfig::from_json_overrides(&overrides)?;
    info!(
        "matrix: jobs={} config={}",
        a.jobs,
        serde_json::to_string(&cfg).unwrap_or_default()
    );
    let (report, cells) = run_experiment(&cfg, a.jobs)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("report.json"), &report.to_json()?)?;
    write_file(&a.out.join("report.md"), &report.to_markdown())?;
    let dir = a.out.join("checkpoints");
    create_dir(&dir)?;
    let unit = match cfg.task {
        Task::Sqa => "r",
        Task::Cser => "f",
    };
    for c in &cells {
        c.checkpoint.save(dir.join(format!(
            "{}_{unit}{:02}.json",
            c.regime.label(),
            c.record.index
        )))?;
    }
    info!(
        "matrix: {} cells in {:.1}s, wrote {}",
        cells.len(),
        report.runtime_seconds,
        a.out.display()
    );
    Ok(())
}
