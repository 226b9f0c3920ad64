use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ccc_gradient, loss_ccc, loss_das_mse, mse_gradient};
use super::{adam_step, AdamParams, AdamState, ForwardTrace, Gradients, ScorerModel};
use crate::comparison::{
    comparison_derivative, comparison_function, ground_truth_comparison, PairSampler,
};
use crate::dataset::{Dataset, MEAN_LISTENER};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "DAS-MSE")]
    DasMse,
    #[serde(rename = "DAS-CCC")]
    DasCcc,
    #[serde(rename = "CL")]
    Comparison,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DAS" | "DAS-MSE" => Ok(Regime::DasMse),
            "DAS-CCC" => Ok(Regime::DasCcc),
            "CL" => Ok(Regime::Comparison),
            _ => Err(Error::Config(format!(
                "unknown regime {s:?} (DAS-MSE, DAS-CCC or CL)"
            ))),
        }
    }
}

/// Sorted listener ids; position is the embedding row.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ListenerVocab {
    ids: Vec<String>,
}

impl ListenerVocab {
    pub fn from_dataset(ds: &Dataset) -> Self {
        ListenerVocab {
            ids: ds.listener_ids().into_iter().map(str::to_string).collect(),
        }
    }

    pub fn from_ids(mut ids: Vec<String>) -> Self {
        ids.sort();
        ids.dedup();
        ListenerVocab { ids }
    }

    pub fn index(&self, listener_id: &str) -> Option<usize> {
        self.ids
            .binary_search_by(|p| p.as_str().cmp(listener_id))
            .ok()
    }

    pub fn mean_listener(&self) -> Option<usize> {
        self.index(MEAN_LISTENER)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// Row in [`TrainingSet::features`].
    pub utterance: usize,
    pub listener: usize,
    pub is_mean_listener: bool,
    pub targets: Vec<f64>,
}

/// Indexed view of a dataset ready for optimization.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub samples: Vec<TrainingSample>,
    pub vocab: ListenerVocab,
}

impl TrainingSet {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        ds.require_features()?;
        let vocab = ListenerVocab::from_dataset(ds);
        let mut row_of = std::collections::HashMap::new();
        let mut features = Vec::new();
        let mut samples = Vec::with_capacity(ds.ratings().len());
        for r in ds.ratings() {
            let row = *row_of.entry(r.utterance_id.as_str()).or_insert_with(|| {
                features.push(
                    ds.feature(&r.utterance_id)
                        .expect("validated coverage")
                        .to_vec(),
                );
                features.len() - 1
            });
            samples.push(TrainingSample {
                utterance: row,
                listener: vocab
                    .index(&r.listener_id)
                    .expect("vocab built from ratings"),
                is_mean_listener: r.is_mean_listener(),
                targets: r.scores.clone(),
            });
        }
        Ok(TrainingSet {
            features,
            samples,
            vocab,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub seed: u64,
    /// Comparison pairs drawn per epoch; defaults to the number of samples.
    pub pairs_per_epoch: Option<usize>,
    /// Whether the mean listener contributes comparison pairs.
    pub include_mean_listener: bool,
}

impl TrainOptions {
    pub fn new(regime: Regime) -> Self {
        TrainOptions {
            regime,
            epochs: 300,
            batch_size: 32,
            adam: AdamParams::default(),
            seed: 0,
            pairs_per_epoch: None,
            include_mean_listener: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ScorerModel,
    pub loss_curve: Vec<f64>,
    pub optimizer: AdamState,
}

/// Consecutive batch ranges; a trailing singleton joins the previous batch.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = (0..n)
        .step_by(batch_size)
        .map(|s| s..(s + batch_size).min(n))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

impl ScorerModel {
    fn listener_arg(&self, listener: usize) -> Option<usize> {
        self.config().use_listener_embedding.then_some(listener)
    }
}

/// Seeded mini-batch Adam training. Ratings drive the DAS regimes; the
/// comparison regime draws fresh same-listener pairs every epoch and feeds
/// both members through the same weights.
pub fn train(
    mut model: ScorerModel,
    set: &TrainingSet,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if set.samples.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let cfg = model.config().clone();
    if let Some(f) = set.features.iter().find(|f| f.len() != cfg.input_dim) {
        return Err(Error::Dimension {
            expected: cfg.input_dim,
            actual: f.len(),
        });
    }
    if let Some(s) = set
        .samples
        .iter()
        .find(|s| s.targets.len() != cfg.n_attributes)
    {
        return Err(Error::Dimension {
            expected: cfg.n_attributes,
            actual: s.targets.len(),
        });
    }
    if opts.regime == Regime::DasCcc {
        let first = &set.samples[0].targets;
        for (k, v) in first.iter().enumerate() {
            if set.samples.iter().all(|s| s.targets[k] == *v) {
                return Err(Error::DegenerateBatch);
            }
        }
    }
    let sampler = match opts.regime {
        Regime::Comparison => Some(PairSampler::new(
            set.samples.iter().map(|s| (s.listener, s.is_mean_listener)),
            |(_, is_mean)| opts.include_mean_listener || !is_mean,
        )?),
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = AdamState::new(model.n_params());
    let mut curve = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..set.samples.len()).collect();
    for _ in 0..opts.epochs {
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        match &sampler {
            None => {
                order.shuffle(&mut rng);
                for range in batch_ranges(order.len(), opts.batch_size) {
                    let batch = &order[range];
                    if let Some(loss) = das_step(&mut model, set, batch, opts, &mut state)? {
                        epoch_loss += loss;
                        n_batches += 1;
                    }
                }
            }
            Some(sampler) => {
                let n = opts.pairs_per_epoch.unwrap_or(set.samples.len());
                let pairs = sampler.sample_n(n, &mut rng);
                for range in batch_ranges(pairs.len(), opts.batch_size) {
                    epoch_loss +=
                        comparison_step(&mut model, set, &pairs[range], opts, &mut state)?;
                    n_batches += 1;
                }
            }
        }
        curve.push(if n_batches == 0 {
            f64::NAN
        } else {
            epoch_loss / n_batches as f64
        });
    }
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
        optimizer: state,
    })
}

fn das_step(
    model: &mut ScorerModel,
    set: &TrainingSet,
    batch: &[usize],
    opts: &TrainOptions,
    state: &mut AdamState,
) -> Result<Option<f64>> {
    let mut traces: Vec<ForwardTrace> = Vec::with_capacity(batch.len());
    let mut preds = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for &i in batch {
        let s = &set.samples[i];
        let t = model.trace(&set.features[s.utterance], model.listener_arg(s.listener))?;
        preds.push(t.output().to_vec());
        targets.push(s.targets.clone());
        traces.push(t);
    }
    let (loss, upstream) = match opts.regime {
        Regime::DasMse => (
            loss_das_mse(&preds, &targets)?,
            mse_gradient(&preds, &targets),
        ),
        Regime::DasCcc => match loss_ccc(&preds, &targets) {
            Ok(l) => (l, ccc_gradient(&preds, &targets)),
            Err(Error::DegenerateBatch) => return Ok(None),
            Err(e) => return Err(e),
        },
        Regime::Comparison => unreachable!("comparison batches use comparison_step"),
    };
    let grads = model.backward_batch(&traces, &upstream);
    adam_step(model, &grads, state, &opts.adam);
    Ok(Some(loss.total))
}

fn comparison_step(
    model: &mut ScorerModel,
    set: &TrainingSet,
    pairs: &[(usize, usize)],
    opts: &TrainOptions,
    state: &mut AdamState,
) -> Result<f64> {
    let n_attr = model.config().n_attributes;
    let scale = 2.0 / (pairs.len() * n_attr) as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for &(i, j) in pairs {
        let (a, b) = (&set.samples[i], &set.samples[j]);
        let listener = model.listener_arg(a.listener);
        let ta = model.trace(&set.features[a.utterance], listener)?;
        let tb = model.trace(&set.features[b.utterance], listener)?;
        let mut up_a = vec![0.0; n_attr];
        let mut up_b = vec![0.0; n_attr];
        for k in 0..n_attr {
            let (sa, sb) = (ta.output()[k], tb.output()[k]);
            let gt = f64::from(ground_truth_comparison(a.targets[k], b.targets[k]));
            let residual = comparison_function(sa, sb) - gt;
            loss += residual * residual;
            let g = scale * residual * comparison_derivative(sa, sb);
            up_a[k] = g;
            up_b[k] = -g;
        }
        model.backward(&ta, &up_a, &mut grads);
        model.backward(&tb, &up_b, &mut grads);
    }
    adam_step(model, &grads, state, &opts.adam);
    Ok(loss / (pairs.len() * n_attr) as f64)
}
