//! Synthetic listener-rating datasets with known latent scores.
//!
//! Each listener distorts an utterance's latent score with an affine map,
//! adds Gaussian noise, then rounds and clamps onto the Likert grid. Listener
//! membership follows one of two topologies: disjoint fixed-size groups, or
//! overlapping small sets drawn with per-set weights.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_features_csv, write_ratings_csv, AttributeName, Dataset, Rating};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ListenerProfile {
    pub listener_id: String,
    pub bias: f64,
    pub scale: f64,
    pub noise_sd: f64,
    pub likert_levels: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ListenerSet {
    pub listeners: Vec<String>,
    pub weight: f64,
}

/// How utterances are dealt to disjoint listener groups.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAssignment {
    /// Utterances are shuffled and dealt round-robin, so every system is
    /// spread over all groups.
    #[default]
    Utterance,
    /// Systems are shuffled and dealt round-robin; a group rates every
    /// utterance of its systems, so group bias is shared within a system.
    System,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GroupingScheme {
    /// Fixed groups with no shared members; every utterance is rated by
    /// all members of exactly one group.
    DisjointGroups {
        n_groups: usize,
        group_size: usize,
        #[serde(default)]
        utterances_per_group_min: Option<usize>,
        #[serde(default)]
        utterances_per_group_max: Option<usize>,
        #[serde(default)]
        assignment: GroupAssignment,
    },
    /// Small listener sets that may share members; each utterance draws one
    /// set with probability equal to its weight.
    OverlappingSets { sets: Vec<ListenerSet> },
}

impl GroupingScheme {
    /// All listener ids in a stable order.
    pub fn listener_ids(&self) -> Vec<String> {
        match self {
            GroupingScheme::DisjointGroups {
                n_groups,
                group_size,
                ..
            } => (0..*n_groups)
                .flat_map(|g| (0..*group_size).map(move |m| group_member_id(g, m)))
                .collect(),
            GroupingScheme::OverlappingSets { sets } => {
                let mut seen = HashSet::new();
                sets.iter()
                    .flat_map(|s| s.listeners.iter())
                    .filter(|l| seen.insert(l.as_str()))
                    .cloned()
                    .collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GroupingScheme::DisjointGroups {
                n_groups,
                group_size,
                utterances_per_group_min,
                utterances_per_group_max,
                ..
            } => {
                if *n_groups == 0 || *group_size == 0 {
                    return Err(Error::Config(
                        "disjoint groups need n_groups, group_size >= 1".into(),
                    ));
                }
                if let (Some(lo), Some(hi)) = (utterances_per_group_min, utterances_per_group_max) {
                    if lo > hi {
                        return Err(Error::Config("utterances_per_group_min > max".into()));
                    }
                }
            }
            GroupingScheme::OverlappingSets { sets } => {
                if sets.is_empty() {
                    return Err(Error::Config("overlapping sets: no sets given".into()));
                }
                for (i, s) in sets.iter().enumerate() {
                    if !(2..=4).contains(&s.listeners.len()) {
                        return Err(Error::Config(format!(
                            "listener set {i} has {} members (expected 2..=4)",
                            s.listeners.len()
                        )));
                    }
                    let unique: HashSet<&String> = s.listeners.iter().collect();
                    if unique.len() != s.listeners.len() {
                        return Err(Error::Config(format!("listener set {i} repeats a member")));
                    }
                    if !(s.weight >= 0.0 && s.weight.is_finite()) {
                        return Err(Error::Config(format!(
                            "listener set {i} has invalid weight"
                        )));
                    }
                }
                let total: f64 = sets.iter().map(|s| s.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "listener set weights sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn group_member_id(group: usize, member: usize) -> String {
    format!("g{group:02}_l{member}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_systems: usize,
    pub utterances_per_system: usize,
    pub attributes: Vec<AttributeName>,
    pub true_score_range: [f64; 2],
    pub within_system_sd: f64,
    /// Acoustic feature dimension: attribute signal channels followed by
    /// Normal(0, 1) distractors. The text proxy channel comes on top.
    pub feature_dim: usize,
    /// Noise on the first attribute's signal channel.
    pub feature_noise_sd: f64,
    /// Noise on the signal channels of the remaining attributes.
    pub secondary_feature_noise_sd: f64,
    /// Channels after the attribute channels that carry a per-system
    /// Normal(0, 1) signature plus per-utterance jitter, standing in for the
    /// system identity that real acoustic features expose.
    #[serde(default)]
    pub system_signature_dims: usize,
    #[serde(default)]
    pub system_signature_jitter_sd: f64,
    pub text_proxy_enabled: bool,
    pub text_noise_sd: f64,
    pub grouping: GroupingScheme,
    pub listener_bias_sd: f64,
    pub listener_scale_sd: f64,
    pub listener_noise_sd: f64,
    pub likert_levels: u32,
    /// When set, systems are dealt round-robin into this many sessions and
    /// the session becomes the rating's group key. Otherwise the group key
    /// is the system id.
    #[serde(default)]
    pub n_sessions: Option<usize>,
    pub seed: u64,
}

impl SimConfig {
    /// Speech-quality-like topology: 40 systems of 25 utterances rated by
    /// 8 disjoint groups of 8 listeners, each group covering whole systems.
    pub fn sqa_preset(seed: u64) -> Self {
        SimConfig {
            n_systems: 40,
            utterances_per_system: 25,
            attributes: vec![AttributeName::new("quality").unwrap()],
            true_score_range: [1.5, 4.5],
            within_system_sd: 0.4,
            feature_dim: 8,
            feature_noise_sd: 0.1,
            secondary_feature_noise_sd: 0.3,
            system_signature_dims: 4,
            system_signature_jitter_sd: 0.2,
            text_proxy_enabled: false,
            text_noise_sd: 0.5,
            grouping: GroupingScheme::DisjointGroups {
                n_groups: 8,
                group_size: 8,
                utterances_per_group_min: None,
                utterances_per_group_max: None,
                assignment: GroupAssignment::System,
            },
            listener_bias_sd: 0.5,
            listener_scale_sd: 0.2,
            listener_noise_sd: 0.4,
            likert_levels: 5,
            n_sessions: None,
            seed,
        }
    }

    /// Emotion-like topology: 10 speakers in 5 sessions, 12 listeners in
    /// overlapping sets of 2 to 4 with one set covering half the utterances.
    pub fn cser_preset(seed: u64) -> Self {
        let set = |ids: &[&str], weight: f64| ListenerSet {
            listeners: ids.iter().map(|s| s.to_string()).collect(),
            weight,
        };
        SimConfig {
            n_systems: 10,
            utterances_per_system: 200,
            attributes: vec![
                AttributeName::new("arousal").unwrap(),
                AttributeName::new("valence").unwrap(),
            ],
            true_score_range: [1.5, 4.5],
            within_system_sd: 0.8,
            feature_dim: 8,
            feature_noise_sd: 0.4,
            secondary_feature_noise_sd: 0.9,
            system_signature_dims: 0,
            system_signature_jitter_sd: 0.0,
            text_proxy_enabled: true,
            text_noise_sd: 0.5,
            grouping: GroupingScheme::OverlappingSets {
                sets: vec![
                    set(&["E01", "E02"], 0.5),
                    set(&["E01", "E03", "E04"], 0.08),
                    set(&["E02", "E05"], 0.07),
                    set(&["E03", "E06", "E07"], 0.06),
                    set(&["E04", "E08"], 0.06),
                    set(&["E05", "E09", "E10", "E01"], 0.05),
                    set(&["E06", "E11"], 0.05),
                    set(&["E07", "E12", "E02"], 0.05),
                    set(&["E08", "E09"], 0.04),
                    set(&["E10", "E11", "E12"], 0.04),
                ],
            },
            listener_bias_sd: 0.5,
            listener_scale_sd: 0.2,
            listener_noise_sd: 0.4,
            likert_levels: 5,
            n_sessions: Some(5),
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "sqa" | "sqa-like" => Ok(Self::sqa_preset(seed)),
            "cser" | "cser-like" => Ok(Self::cser_preset(seed)),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected sqa or cser)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.true_score_range;
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config(format!(
                "true_score_range requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        let sds = [
            ("within_system_sd", self.within_system_sd),
            ("feature_noise_sd", self.feature_noise_sd),
            (
                "secondary_feature_noise_sd",
                self.secondary_feature_noise_sd,
            ),
            ("text_noise_sd", self.text_noise_sd),
            ("listener_bias_sd", self.listener_bias_sd),
            ("listener_scale_sd", self.listener_scale_sd),
            ("listener_noise_sd", self.listener_noise_sd),
            (
                "system_signature_jitter_sd",
                self.system_signature_jitter_sd,
            ),
        ];
        if let Some((name, v)) = sds.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!(
                "{name} must be a finite value >= 0, got {v}"
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if self.attributes.len() + self.system_signature_dims > self.feature_dim {
            return Err(Error::Config(format!(
                "feature_dim {} cannot hold {} attribute and {} signature channels",
                self.feature_dim,
                self.attributes.len(),
                self.system_signature_dims
            )));
        }
        if self.n_systems == 0 || self.utterances_per_system == 0 {
            return Err(Error::Config(
                "n_systems and utterances_per_system must be >= 1".into(),
            ));
        }
        if self.likert_levels < 2 {
            return Err(Error::Config("likert_levels must be >= 2".into()));
        }
        if self.attributes.is_empty() {
            return Err(Error::Config("at least one attribute is required".into()));
        }
        let unique: HashSet<&AttributeName> = self.attributes.iter().collect();
        if unique.len() != self.attributes.len() {
            return Err(Error::Config("duplicate attribute names".into()));
        }
        if self.n_sessions == Some(0) {
            return Err(Error::Config("n_sessions must be >= 1".into()));
        }
        self.grouping.validate()
    }

    /// Index of the attribute the text proxy channel tracks: `valence` if
    /// present, else the last attribute.
    pub fn text_attribute(&self) -> usize {
        self.attributes
            .iter()
            .position(|a| a.as_str() == "valence")
            .unwrap_or(self.attributes.len() - 1)
    }
}

/// Latent scores behind a generated dataset, per attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthTable {
    pub attributes: Vec<AttributeName>,
    pub utterances: BTreeMap<String, UtteranceTruth>,
    pub systems: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceTruth {
    pub system_id: String,
    pub scores: Vec<f64>,
}

impl TruthTable {
    pub fn system_scores(&self, attribute: usize) -> BTreeMap<String, f64> {
        self.systems
            .iter()
            .map(|(k, v)| (k.clone(), v[attribute]))
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
            context: path.display().to_string(),
            source,
        })?;
        let ctx = |source| Error::Csv {
            context: "writing truth table".into(),
            source,
        };
        let mut header = vec!["utterance_id".to_string(), "system_id".to_string()];
        header.extend(self.attributes.iter().map(|a| format!("true_{a}")));
        w.write_record(&header).map_err(ctx)?;
        for (utt, t) in &self.utterances {
            let mut row = vec![utt.clone(), t.system_id.clone()];
            row.extend(t.scores.iter().map(|s| s.to_string()));
            w.write_record(&row).map_err(ctx)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a truth table written by [`TruthTable::write_csv`]. System
    /// scores are the means of their utterances' latent scores.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|source| Error::Csv {
            context: path.display().to_string(),
            source,
        })?;
        let header = rdr
            .headers()
            .map_err(|source| Error::Csv {
                context: path.display().to_string(),
                source,
            })?
            .clone();
        if header.len() < 3 || &header[0] != "utterance_id" || &header[1] != "system_id" {
            return Err(Error::Schema(
                "truth header must be utterance_id,system_id,true_<attr>...".into(),
            ));
        }
        let attributes = header
            .iter()
            .skip(2)
            .map(|h| {
                h.strip_prefix("true_")
                    .ok_or_else(|| Error::Schema(format!("truth column {h:?} lacks true_ prefix")))
                    .and_then(AttributeName::new)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut utterances = BTreeMap::new();
        let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|source| Error::Csv {
                context: path.display().to_string(),
                source,
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let scores = rec
                .iter()
                .skip(2)
                .map(|x| {
                    x.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("invalid truth value {x:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let e = sums
                .entry(rec[1].to_string())
                .or_insert_with(|| (vec![0.0; scores.len()], 0));
            e.0.iter_mut().zip(&scores).for_each(|(a, b)| *a += b);
            e.1 += 1;
            utterances.insert(
                rec[0].to_string(),
                UtteranceTruth {
                    system_id: rec[1].to_string(),
                    scores,
                },
            );
        }
        let systems = sums
            .into_iter()
            .map(|(k, (s, n))| (k, s.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        Ok(TruthTable {
            attributes,
            utterances,
            systems,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub truth: TruthTable,
    pub listeners: Vec<ListenerProfile>,
    /// Feature column carrying the text proxy signal, when enabled.
    pub text_channel: Option<usize>,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("standard deviation validated as finite and non-negative")
}

pub fn sample_listeners<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Vec<ListenerProfile> {
    let bias = normal(cfg.listener_bias_sd);
    let log_scale = normal(cfg.listener_scale_sd);
    cfg.grouping
        .listener_ids()
        .into_iter()
        .map(|listener_id| ListenerProfile {
            listener_id,
            bias: bias.sample(rng),
            scale: log_scale.sample(rng).exp(),
            noise_sd: cfg.listener_noise_sd,
            likert_levels: cfg.likert_levels,
        })
        .collect()
}

/// `clamp(round(scale * s + bias + noise), 1, K)` with rounding half away from zero.
pub fn render_rating<R: Rng + ?Sized>(
    profile: &ListenerProfile,
    true_score: f64,
    rng: &mut R,
) -> f64 {
    let noise = if profile.noise_sd > 0.0 {
        normal(profile.noise_sd).sample(rng)
    } else {
        0.0
    };
    let raw = profile.scale * true_score + profile.bias + noise;
    raw.round().clamp(1.0, profile.likert_levels as f64)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generates a dataset, its latent truth and the listener profiles used.
///
/// Independent random streams feed the latent scores, listeners, set
/// assignment, rating noise, acoustic features and the text channel, so
/// toggling the text proxy leaves every other draw unchanged.
pub fn generate_dataset(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let n_attr = cfg.attributes.len();
    let [lo, hi] = cfg.true_score_range;

    let mut truth_rng = stream(cfg.seed, 0);
    let uniform = Uniform::new_inclusive(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
    let within = normal(cfg.within_system_sd);
    let mut systems = BTreeMap::new();
    // (utterance_id, system_id, group_key, latent scores)
    let mut utterances: Vec<(String, String, String, Vec<f64>)> = Vec::new();
    for s in 0..cfg.n_systems {
        let system_id = format!("sys{s:03}");
        let means: Vec<f64> = (0..n_attr)
            .map(|_| uniform.sample(&mut truth_rng))
            .collect();
        let group_key = match cfg.n_sessions {
            Some(n) => format!("session{}", s % n),
            None => system_id.clone(),
        };
        for u in 0..cfg.utterances_per_system {
            let scores = means
                .iter()
                .map(|m| (m + within.sample(&mut truth_rng)).clamp(lo, hi))
                .collect();
            utterances.push((
                format!("{system_id}_u{u:03}"),
                system_id.clone(),
                group_key.clone(),
                scores,
            ));
        }
        systems.insert(system_id, means);
    }

    let listeners = sample_listeners(cfg, &mut stream(cfg.seed, 1));
    let profile_of: BTreeMap<&str, &ListenerProfile> = listeners
        .iter()
        .map(|p| (p.listener_id.as_str(), p))
        .collect();

    let ids = cfg.grouping.listener_ids();
    let mut assign_rng = stream(cfg.seed, 2);
    let rater_sets: Vec<Vec<&str>> = match &cfg.grouping {
        GroupingScheme::DisjointGroups {
            n_groups,
            group_size,
            utterances_per_group_min,
            utterances_per_group_max,
            assignment,
        } => {
            let group_of: Vec<usize> = match assignment {
                GroupAssignment::Utterance => {
                    let mut order: Vec<usize> = (0..utterances.len()).collect();
                    order.shuffle(&mut assign_rng);
                    let mut group_of = vec![0; utterances.len()];
                    for (pos, &u) in order.iter().enumerate() {
                        group_of[u] = pos % n_groups;
                    }
                    group_of
                }
                GroupAssignment::System => {
                    let mut order: Vec<&str> = systems.keys().map(String::as_str).collect();
                    order.shuffle(&mut assign_rng);
                    let slot: BTreeMap<&str, usize> = order
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (*s, i % n_groups))
                        .collect();
                    utterances.iter().map(|u| slot[u.1.as_str()]).collect()
                }
            };
            let mut counts = vec![0usize; *n_groups];
            for &g in &group_of {
                counts[g] += 1;
            }
            let (fewest, most) = (
                counts.iter().copied().min().unwrap_or(0),
                counts.iter().copied().max().unwrap_or(0),
            );
            if utterances_per_group_min.is_some_and(|m| fewest < m)
                || utterances_per_group_max.is_some_and(|m| most > m)
            {
                return Err(Error::Config(format!(
                    "{} utterances over {n_groups} groups gives {fewest}..={most} per group, outside configured bounds",
                    utterances.len()
                )));
            }
            group_of
                .iter()
                .map(|&g| {
                    ids[g * group_size..(g + 1) * group_size]
                        .iter()
                        .map(String::as_str)
                        .collect()
                })
                .collect()
        }
        GroupingScheme::OverlappingSets { sets } => {
            let picker = WeightedIndex::new(sets.iter().map(|s| s.weight))
                .map_err(|e| Error::Config(format!("listener set weights: {e}")))?;
            (0..utterances.len())
                .map(|_| {
                    sets[picker.sample(&mut assign_rng)]
                        .listeners
                        .iter()
                        .map(String::as_str)
                        .collect()
                })
                .collect()
        }
    };

    let mut rating_rng = stream(cfg.seed, 3);
    let mut ratings = Vec::new();
    for ((utt, sys, group, scores), raters) in utterances.iter().zip(&rater_sets) {
        for &listener in raters {
            let profile = profile_of[listener];
            ratings.push(Rating {
                utterance_id: utt.clone(),
                system_id: sys.clone(),
                listener_id: listener.to_string(),
                group_key: group.clone(),
                scores: scores
                    .iter()
                    .map(|&s| render_rating(profile, s, &mut rating_rng))
                    .collect(),
            });
        }
    }

    let mut feature_rng = stream(cfg.seed, 4);
    let mut text_rng = stream(cfg.seed, 5);
    let primary = normal(cfg.feature_noise_sd);
    let secondary = normal(cfg.secondary_feature_noise_sd);
    let text_noise = normal(cfg.text_noise_sd);
    let unit = normal(1.0);
    let text_attr = cfg.text_attribute();
    let mut signature_rng = stream(cfg.seed, 6);
    let signatures: BTreeMap<&str, Vec<f64>> = systems
        .keys()
        .map(|s| {
            let sig = (0..cfg.system_signature_dims)
                .map(|_| unit.sample(&mut signature_rng))
                .collect();
            (s.as_str(), sig)
        })
        .collect();
    let jitter = normal(cfg.system_signature_jitter_sd);
    let mut features = BTreeMap::new();
    for (utt, sys, _, scores) in &utterances {
        let sig = &signatures[sys.as_str()];
        let mut v: Vec<f64> = (0..cfg.feature_dim)
            .map(|c| match c {
                0 => scores[0] + primary.sample(&mut feature_rng),
                c if c < n_attr => scores[c] + secondary.sample(&mut feature_rng),
                c if c < n_attr + sig.len() => sig[c - n_attr] + jitter.sample(&mut signature_rng),
                _ => unit.sample(&mut feature_rng),
            })
            .collect();
        if cfg.text_proxy_enabled {
            v.push(scores[text_attr] + text_noise.sample(&mut text_rng));
        }
        features.insert(utt.clone(), v);
    }

    let truth = TruthTable {
        attributes: cfg.attributes.clone(),
        utterances: utterances
            .iter()
            .map(|(u, s, _, scores)| {
                (
                    u.clone(),
                    UtteranceTruth {
                        system_id: s.clone(),
                        scores: scores.clone(),
                    },
                )
            })
            .collect(),
        systems,
    };
    let dataset = Dataset::new(cfg.attributes.clone(), cfg.likert_levels, ratings, features)?;
    Ok(SimOutput {
        dataset,
        truth,
        listeners,
        text_channel: cfg.text_proxy_enabled.then_some(cfg.feature_dim),
    })
}

/// Writes `ratings.csv`, `features.csv`, `truth.csv` and `sim_config.json` into `dir`.
pub fn write_simulation(out: &SimOutput, cfg: &SimConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ratings_csv(&out.dataset, dir.join("ratings.csv"))?;
    write_features_csv(out.dataset.features(), dir.join("features.csv"))?;
    out.truth.write_csv(dir.join("truth.csv"))?;
    let json = serde_json::to_string_pretty(cfg).map_err(|source| Error::Json {
        context: "serializing sim config".into(),
        source,
    })?;
    let path = dir.join("sim_config.json");
    fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}
