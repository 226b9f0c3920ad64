//! Comparison learning: same-listener training pairs, the comparison
//! function and its sign target, the pairwise MSE loss, and system-level
//! evaluation by balanced cross-system pairs, sign thresholding and
//! win-minus-loss counting.

use std::collections::{BTreeMap, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::dataset::{Dataset, Rating, MEAN_LISTENER};
use crate::error::{Error, Result};
use crate::scorer::{LossReport, ScorerModel};

/// `2 * sigmoid(sc_1 - sc_2) - 1`, evaluated as `tanh((sc_1 - sc_2) / 2)`
/// which is the same function and exactly odd in floating point.
pub fn comparison_function(sc_1: f64, sc_2: f64) -> f64 {
    ((sc_1 - sc_2) * 0.5).tanh()
}

/// Derivative of [`comparison_function`] with respect to `sc_1`.
pub fn comparison_derivative(sc_1: f64, sc_2: f64) -> f64 {
    let a = comparison_function(sc_1, sc_2);
    0.5 * (1.0 - a * a)
}

/// Sign of `gt_1 - gt_2`; exact ties give 0.
pub fn ground_truth_comparison(gt_1: f64, gt_2: f64) -> i8 {
    match gt_1.partial_cmp(&gt_2) {
        Some(std::cmp::Ordering::Greater) => 1,
        Some(std::cmp::Ordering::Less) => -1,
        _ => 0,
    }
}

/// Two ratings by one listener with their per-attribute sign targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonPair<'a> {
    pub rating_1: &'a Rating,
    pub rating_2: &'a Rating,
    pub listener_id: &'a str,
    pub gt_comparison: Vec<i8>,
}

impl<'a> ComparisonPair<'a> {
    pub fn new(rating_1: &'a Rating, rating_2: &'a Rating) -> Result<Self> {
        if rating_1.listener_id != rating_2.listener_id {
            return Err(Error::Contract(format!(
                "comparison pair mixes listeners {:?} and {:?}",
                rating_1.listener_id, rating_2.listener_id
            )));
        }
        Ok(ComparisonPair {
            rating_1,
            rating_2,
            listener_id: &rating_1.listener_id,
            gt_comparison: rating_1
                .scores
                .iter()
                .zip(&rating_2.scores)
                .map(|(a, b)| ground_truth_comparison(*a, *b))
                .collect(),
        })
    }
}

/// Predicted scores of both pair members and the sign target, per attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub sc_1: Vec<f64>,
    pub sc_2: Vec<f64>,
    pub gt: Vec<i8>,
}

/// Per-attribute mean of `(comp_dv - comp_gt)^2`, averaged over attributes.
pub fn comparison_loss(pairs: &[PairPrediction]) -> Result<LossReport> {
    let first = pairs.first().ok_or(Error::EmptyBatch)?;
    let a = first.gt.len();
    if a == 0 {
        return Err(Error::Contract("pairs carry no attributes".into()));
    }
    let mut per = vec![0.0; a];
    for p in pairs {
        if p.sc_1.len() != a || p.sc_2.len() != a || p.gt.len() != a {
            return Err(Error::Dimension {
                expected: a,
                actual: p.gt.len().min(p.sc_1.len()).min(p.sc_2.len()),
            });
        }
        for (k, acc) in per.iter_mut().enumerate() {
            let r = comparison_function(p.sc_1[k], p.sc_2[k]) - f64::from(p.gt[k]);
            *acc += r * r;
        }
    }
    let n = pairs.len() as f64;
    Ok(LossReport::from_parts(
        per.into_iter().map(|s| s / n).collect(),
    ))
}

/// Samples same-listener rating pairs. A listener is chosen with
/// probability proportional to its number of distinct rating pairs, then a
/// pair of its ratings uniformly, in random order.
#[derive(Clone, Debug)]
pub struct PairSampler {
    /// Rating indices per eligible listener.
    groups: Vec<Vec<usize>>,
    picker: WeightedIndex<f64>,
}

impl PairSampler {
    /// `listener_of[i]` identifies the listener of rating `i`; ratings for
    /// which `eligible` is false are ignored.
    pub fn new<K: std::hash::Hash + Eq>(
        listener_of: impl IntoIterator<Item = K>,
        eligible: impl Fn(&K) -> bool,
    ) -> Result<Self> {
        let mut slot: HashMap<K, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, key) in listener_of.into_iter().enumerate() {
            if !eligible(&key) {
                continue;
            }
            let next = groups.len();
            let g = *slot.entry(key).or_insert(next);
            if g == groups.len() {
                groups.push(Vec::new());
            }
            groups[g].push(i);
        }
        groups.retain(|g| g.len() >= 2);
        if groups.is_empty() {
            return Err(Error::NoEligibleListener);
        }
        let weights = groups.iter().map(|g| {
            let n = g.len() as f64;
            n * (n - 1.0) / 2.0
        });
        let picker = WeightedIndex::new(weights).map_err(|e| Error::Contract(e.to_string()))?;
        Ok(PairSampler { groups, picker })
    }

    /// Builds a sampler over a dataset's ratings. The mean listener takes
    /// part only when `include_mean_listener` is set.
    pub fn for_dataset(ds: &Dataset, include_mean_listener: bool) -> Result<Self> {
        PairSampler::new(ds.ratings().iter().map(|r| r.listener_id.as_str()), |l| {
            include_mean_listener || *l != MEAN_LISTENER
        })
    }

    pub fn n_listeners(&self) -> usize {
        self.groups.len()
    }

    /// One pair of rating indices.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let g = &self.groups[self.picker.sample(rng)];
        let i = rng.random_range(0..g.len());
        let mut j = rng.random_range(0..g.len() - 1);
        if j >= i {
            j += 1;
        }
        (g[i], g[j])
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(usize, usize)> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

pub fn generate_training_pairs<'a, R: Rng + ?Sized>(
    ds: &'a Dataset,
    pairs_per_epoch: usize,
    include_mean_listener: bool,
    rng: &mut R,
) -> Result<Vec<ComparisonPair<'a>>> {
    let sampler =
        PairSampler::for_dataset(ds, include_mean_listener && ds.mean_listener_present())?;
    let ratings = ds.ratings();
    sampler
        .sample_n(pairs_per_epoch, rng)
        .into_iter()
        .map(|(i, j)| ComparisonPair::new(&ratings[i], &ratings[j]))
        .collect()
}

/// A cross-system utterance pair selected for evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemPairSample {
    pub system_1: String,
    pub system_2: String,
    pub utterance_1: String,
    pub utterance_2: String,
}

/// For every unordered system pair, `min(k, |A|*|B|)` distinct
/// cross-system utterance pairs drawn uniformly without replacement.
pub fn generate_balanced_system_pairs<R: Rng + ?Sized>(
    ds: &Dataset,
    pairs_per_system_pair: usize,
    rng: &mut R,
) -> Result<Vec<SystemPairSample>> {
    let mut by_system: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (utt, sys) in ds.utterance_systems() {
        by_system.entry(sys).or_default().push(utt);
    }
    if by_system.len() < 2 {
        return Err(Error::Dataset(format!(
            "balanced system pairs need >= 2 systems, found {}",
            by_system.len()
        )));
    }
    let systems: Vec<(&str, Vec<&str>)> = by_system.into_iter().collect();
    let mut out = Vec::new();
    for (i, (sa, ua)) in systems.iter().enumerate() {
        for (sb, ub) in &systems[i + 1..] {
            let total = ua.len() * ub.len();
            let m = pairs_per_system_pair.min(total);
            let mut picks = rand::seq::index::sample(rng, total, m).into_vec();
            picks.sort_unstable();
            for p in picks {
                out.push(SystemPairSample {
                    system_1: sa.to_string(),
                    system_2: sb.to_string(),
                    utterance_1: ua[p / ub.len()].to_string(),
                    utterance_2: ub[p % ub.len()].to_string(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonOutcome {
    pub system_1: String,
    pub system_2: String,
    pub comp_dv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Win1,
    Win2,
    Discard,
}

/// Keeps every comparison and uses only its sign; exact zero is discarded.
pub fn threshold_no_draw(outcome: &ComparisonOutcome) -> Direction {
    if outcome.comp_dv > 0.0 {
        Direction::Win1
    } else if outcome.comp_dv < 0.0 {
        Direction::Win2
    } else {
        Direction::Discard
    }
}

/// Wins minus losses per system.
pub fn differential_count<S: AsRef<str>>(
    directions: &[(S, S, Direction)],
) -> BTreeMap<String, i64> {
    let mut scores: BTreeMap<String, i64> = BTreeMap::new();
    for (a, b, d) in directions {
        let delta = match d {
            Direction::Win1 => 1,
            Direction::Win2 => -1,
            Direction::Discard => 0,
        };
        *scores.entry(a.as_ref().to_string()).or_default() += delta;
        *scores.entry(b.as_ref().to_string()).or_default() -= delta;
    }
    scores
}

/// Comparison-mode system scoring with an arbitrary utterance scorer.
pub fn evaluate_system_level_with<R, F>(
    score_utterance: F,
    ds: &Dataset,
    pairs_per_system_pair: usize,
    rng: &mut R,
) -> Result<BTreeMap<String, f64>>
where
    R: Rng + ?Sized,
    F: Fn(&str) -> Result<f64>,
{
    let pairs = generate_balanced_system_pairs(ds, pairs_per_system_pair, rng)?;
    let mut cache: HashMap<&str, f64> = HashMap::new();
    let mut directions = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let sc_1 = score_cached(&score_utterance, &p.utterance_1, &mut cache)?;
        let sc_2 = score_cached(&score_utterance, &p.utterance_2, &mut cache)?;
        let outcome = ComparisonOutcome {
            system_1: p.system_1.clone(),
            system_2: p.system_2.clone(),
            comp_dv: comparison_function(sc_1, sc_2),
        };
        directions.push((
            p.system_1.as_str(),
            p.system_2.as_str(),
            threshold_no_draw(&outcome),
        ));
    }
    Ok(differential_count(&directions)
        .into_iter()
        .map(|(k, v)| (k, v as f64))
        .collect())
}

fn score_cached<'a, F: Fn(&str) -> Result<f64>>(
    score: &F,
    utterance: &'a str,
    cache: &mut HashMap<&'a str, f64>,
) -> Result<f64> {
    if let Some(&s) = cache.get(utterance) {
        return Ok(s);
    }
    let s = score(utterance)?;
    cache.insert(utterance, s);
    Ok(s)
}

/// Comparison-mode system scoring with a trained model on `attribute`.
pub fn evaluate_system_level<R: Rng + ?Sized>(
    model: &ScorerModel,
    ds: &Dataset,
    attribute: usize,
    pairs_per_system_pair: usize,
    listener: Option<usize>,
    rng: &mut R,
) -> Result<BTreeMap<String, f64>> {
    ds.require_features()?;
    if attribute >= model.config().n_attributes {
        return Err(Error::Dimension {
            expected: model.config().n_attributes,
            actual: attribute + 1,
        });
    }
    evaluate_system_level_with(
        |u| {
            let x = ds
                .feature(u)
                .ok_or_else(|| Error::Dataset(format!("utterance {u:?} has no features")))?;
            Ok(model.forward(x, listener)?[attribute])
        },
        ds,
        pairs_per_system_pair,
        rng,
    )
}
