//! Rating data model: ratings, attributes, feature vectors and the
//! operations that derive new datasets from existing ones (mean-listener
//! augmentation, grouped folds, system-level ground truth).

mod folds;
mod io;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use folds::{split_grouped_kfold, FoldSplit};
pub use io::{
    load_features_csv, load_ratings_csv, read_features, read_ratings, write_features,
    write_features_csv, write_ratings, write_ratings_csv,
};

/// Reserved listener id of the virtual mean listener.
pub const MEAN_LISTENER: &str = "__MEAN__";

/// Name of a rated attribute such as `quality`, `arousal` or `valence`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AttributeName(String);

impl AttributeName {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Schema("attribute name must be non-empty".into()));
        }
        Ok(AttributeName(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parses a comma separated list such as `arousal,valence`.
    pub fn parse_list(s: &str) -> Result<Vec<AttributeName>> {
        s.split(',').map(|p| AttributeName::new(p.trim())).collect()
    }
}

impl TryFrom<String> for AttributeName {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        AttributeName::new(s)
    }
}

impl From<AttributeName> for String {
    fn from(a: AttributeName) -> String {
        a.0
    }
}

impl fmt::Display for AttributeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One listener's scores for one utterance. `scores` is aligned with the
/// owning dataset's attribute list.
#[derive(Clone, Debug, PartialEq)]
pub struct Rating {
    pub utterance_id: String,
    pub system_id: String,
    pub listener_id: String,
    pub group_key: String,
    pub scores: Vec<f64>,
}

impl Rating {
    pub fn is_mean_listener(&self) -> bool {
        self.listener_id == MEAN_LISTENER
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    attributes: Vec<AttributeName>,
    likert_levels: u32,
    ratings: Vec<Rating>,
    features: BTreeMap<String, Vec<f64>>,
}

fn validate_attributes(attributes: &[AttributeName]) -> Result<()> {
    if attributes.is_empty() {
        return Err(Error::Schema("at least one attribute is required".into()));
    }
    let mut seen = HashSet::new();
    for a in attributes {
        if !seen.insert(a.as_str()) {
            return Err(Error::Schema(format!("duplicate attribute {a}")));
        }
    }
    Ok(())
}

pub(crate) fn on_likert_grid(score: f64, likert_levels: u32) -> bool {
    score.fract() == 0.0 && score >= 1.0 && score <= likert_levels as f64
}

impl Dataset {
    /// Builds a validated dataset.
    ///
    /// `features` may be empty, in which case features are expected to be
    /// attached later with [`Dataset::with_features`]. When non-empty, every
    /// rated utterance must have a vector and all vectors must share one
    /// dimension.
    pub fn new(
        attributes: Vec<AttributeName>,
        likert_levels: u32,
        ratings: Vec<Rating>,
        features: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        validate_attributes(&attributes)?;
        if likert_levels < 2 {
            return Err(Error::Schema(format!(
                "likert_levels must be >= 2, got {likert_levels}"
            )));
        }
        let mut seen = HashSet::new();
        for (i, r) in ratings.iter().enumerate() {
            if r.scores.len() != attributes.len() {
                return Err(Error::Dataset(format!(
                    "rating {i} has {} scores for {} attributes",
                    r.scores.len(),
                    attributes.len()
                )));
            }
            if r.scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::Dataset(format!("rating {i} has a non-finite score")));
            }
            if !r.is_mean_listener() {
                if let Some(s) = r
                    .scores
                    .iter()
                    .find(|&&s| !on_likert_grid(s, likert_levels))
                {
                    return Err(Error::Dataset(format!(
                        "rating {i}: score {s} off Likert grid 1..={likert_levels}"
                    )));
                }
            }
            if !seen.insert((r.utterance_id.as_str(), r.listener_id.as_str())) {
                return Err(Error::Duplicate {
                    utterance_id: r.utterance_id.clone(),
                    listener_id: r.listener_id.clone(),
                    line: i as u64,
                });
            }
        }
        let ds = Dataset {
            attributes,
            likert_levels,
            ratings,
            features: BTreeMap::new(),
        };
        if features.is_empty() {
            Ok(ds)
        } else {
            ds.with_features(features)
        }
    }

    /// Returns a copy with `features` attached, validating coverage and dimension.
    pub fn with_features(mut self, features: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut dim = None;
        for (utt, v) in &features {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Dataset(format!(
                        "feature vector of {utt:?} has dimension {} (expected {d})",
                        v.len()
                    )))
                }
                _ => {}
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dataset(format!(
                    "feature vector of {utt:?} is not finite"
                )));
            }
        }
        if dim == Some(0) {
            return Err(Error::Dataset(
                "feature vectors must have dimension >= 1".into(),
            ));
        }
        if let Some(r) = self
            .ratings
            .iter()
            .find(|r| !features.contains_key(&r.utterance_id))
        {
            return Err(Error::Dataset(format!(
                "utterance {:?} has no feature vector",
                r.utterance_id
            )));
        }
        self.features = features;
        Ok(self)
    }

    pub fn attributes(&self) -> &[AttributeName] {
        &self.attributes
    }

    pub fn likert_levels(&self) -> u32 {
        self.likert_levels
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn features(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.features
    }

    pub fn feature(&self, utterance_id: &str) -> Option<&[f64]> {
        self.features.get(utterance_id).map(Vec::as_slice)
    }

    /// Feature dimension, or `None` when no features are attached.
    pub fn feature_dim(&self) -> Option<usize> {
        self.features.values().next().map(Vec::len)
    }

    pub fn has_features(&self) -> bool {
        !self.features.is_empty() || self.ratings.is_empty()
    }

    pub fn require_features(&self) -> Result<usize> {
        self.feature_dim()
            .ok_or_else(|| Error::Dataset("dataset has no feature vectors attached".into()))
    }

    pub fn attribute_index(&self, attribute: &AttributeName) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a == attribute)
            .ok_or_else(|| Error::Schema(format!("unknown attribute {attribute}")))
    }

    pub fn listener_ids(&self) -> BTreeSet<&str> {
        self.ratings
            .iter()
            .map(|r| r.listener_id.as_str())
            .collect()
    }

    pub fn mean_listener_present(&self) -> bool {
        self.ratings.iter().any(Rating::is_mean_listener)
    }

    /// Unique utterance ids in order of first appearance.
    pub fn utterance_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.ratings
            .iter()
            .map(|r| r.utterance_id.as_str())
            .filter(|u| seen.insert(*u))
            .collect()
    }

    /// Unique utterances with their system id, in order of first appearance.
    pub fn utterance_systems(&self) -> Vec<(&str, &str)> {
        let mut seen = HashSet::new();
        self.ratings
            .iter()
            .filter(|r| seen.insert(r.utterance_id.as_str()))
            .map(|r| (r.utterance_id.as_str(), r.system_id.as_str()))
            .collect()
    }

    pub fn system_ids(&self) -> BTreeSet<&str> {
        self.ratings.iter().map(|r| r.system_id.as_str()).collect()
    }

    pub fn group_keys(&self) -> BTreeSet<&str> {
        self.ratings.iter().map(|r| r.group_key.as_str()).collect()
    }

    /// Keeps the ratings whose group key satisfies `keep`, along with the
    /// features of the utterances they reference.
    pub fn filter_groups(&self, keep: impl Fn(&str) -> bool) -> Dataset {
        let ratings: Vec<Rating> = self
            .ratings
            .iter()
            .filter(|r| keep(&r.group_key))
            .cloned()
            .collect();
        self.restricted_to(ratings)
    }

    /// Keeps the ratings of the utterances for which `keep` holds.
    pub fn filter_utterances(&self, keep: impl Fn(&str) -> bool) -> Dataset {
        let ratings: Vec<Rating> = self
            .ratings
            .iter()
            .filter(|r| keep(&r.utterance_id))
            .cloned()
            .collect();
        self.restricted_to(ratings)
    }

    fn restricted_to(&self, ratings: Vec<Rating>) -> Dataset {
        let used: HashSet<&str> = ratings.iter().map(|r| r.utterance_id.as_str()).collect();
        let features = self
            .features
            .iter()
            .filter(|(k, _)| used.contains(k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Dataset {
            attributes: self.attributes.clone(),
            likert_levels: self.likert_levels,
            ratings,
            features,
        }
    }

    /// Keeps only the feature channels listed in `channels`, in that order.
    pub fn select_feature_channels(&self, channels: &[usize]) -> Result<Dataset> {
        let dim = self.require_features()?;
        if let Some(&c) = channels.iter().find(|&&c| c >= dim) {
            return Err(Error::Dimension {
                expected: dim,
                actual: c + 1,
            });
        }
        let features = self
            .features
            .iter()
            .map(|(k, v)| (k.clone(), channels.iter().map(|&c| v[c]).collect()))
            .collect();
        Dataset {
            features,
            ..self.clone()
        }
        .with_checked_features()
    }

    fn with_checked_features(self) -> Result<Dataset> {
        let features = self.features.clone();
        Dataset {
            features: BTreeMap::new(),
            ..self
        }
        .with_features(features)
    }

    /// SHA-256 over a canonical serialization of ratings and features.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for a in &self.attributes {
            h.update(a.as_str().as_bytes());
            h.update([0u8]);
        }
        h.update(self.likert_levels.to_le_bytes());
        for r in &self.ratings {
            for s in [&r.utterance_id, &r.system_id, &r.listener_id, &r.group_key] {
                h.update(s.as_bytes());
                h.update([0u8]);
            }
            for s in &r.scores {
                h.update(s.to_bits().to_le_bytes());
            }
        }
        for (k, v) in &self.features {
            h.update(k.as_bytes());
            h.update([0u8]);
            for x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Appends one `__MEAN__` rating per unique utterance holding the
/// per-attribute arithmetic mean of that utterance's ratings.
pub fn augment_mean_listener(ds: &Dataset) -> Result<Dataset> {
    if ds.mean_listener_present() {
        return Err(Error::Dataset(
            "dataset is already augmented with the mean listener".into(),
        ));
    }
    let n_attr = ds.attributes.len();
    let mut order: Vec<&Rating> = Vec::new();
    let mut acc: HashMap<&str, (Vec<f64>, usize)> = HashMap::new();
    for r in &ds.ratings {
        let entry = acc.entry(r.utterance_id.as_str()).or_insert_with(|| {
            order.push(r);
            (vec![0.0; n_attr], 0)
        });
        for (sum, s) in entry.0.iter_mut().zip(&r.scores) {
            *sum += s;
        }
        entry.1 += 1;
    }
    let mut ratings = ds.ratings.clone();
    for first in order {
        let (sums, n) = &acc[first.utterance_id.as_str()];
        ratings.push(Rating {
            utterance_id: first.utterance_id.clone(),
            system_id: first.system_id.clone(),
            listener_id: MEAN_LISTENER.to_string(),
            group_key: first.group_key.clone(),
            scores: sums.iter().map(|s| s / *n as f64).collect(),
        });
    }
    Ok(Dataset {
        ratings,
        ..ds.clone()
    })
}

/// Mean rating per system on `attribute`, ignoring the mean listener.
pub fn system_ground_truth(
    ds: &Dataset,
    attribute: &AttributeName,
) -> Result<BTreeMap<String, f64>> {
    let a = ds.attribute_index(attribute)?;
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in ds.ratings.iter().filter(|r| !r.is_mean_listener()) {
        let e = acc.entry(r.system_id.as_str()).or_insert((0.0, 0));
        e.0 += r.scores[a];
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, (sum, n))| (k.to_string(), sum / n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(s: &str) -> AttributeName {
        AttributeName::new(s).unwrap()
    }

    fn rating(utt: &str, sys: &str, listener: &str, scores: &[f64]) -> Rating {
        Rating {
            utterance_id: utt.into(),
            system_id: sys.into(),
            listener_id: listener.into(),
            group_key: sys.into(),
            scores: scores.to_vec(),
        }
    }

    fn small() -> Dataset {
        Dataset::new(
            vec![attr("quality")],
            5,
            vec![
                rating("u1", "A", "l1", &[3.0]),
                rating("u1", "A", "l2", &[4.0]),
                rating("u1", "A", "l3", &[5.0]),
                rating("u2", "B", "l1", &[2.0]),
            ],
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn mean_listener_appends_means() {
        let ds = small();
        let aug = augment_mean_listener(&ds).unwrap();
        assert_eq!(aug.ratings().len(), ds.ratings().len() + 2);
        assert_eq!(&aug.ratings()[..4], ds.ratings());
        let means: Vec<_> = aug.ratings()[4..].iter().map(|r| r.scores[0]).collect();
        assert_eq!(means, vec![4.0, 2.0]);
        assert!(aug.mean_listener_present());
        assert!(augment_mean_listener(&aug).is_err());
    }

    #[test]
    fn ground_truth_ignores_mean_listener() {
        let ds = small();
        let q = attr("quality");
        let gt = system_ground_truth(&ds, &q).unwrap();
        assert_eq!(gt["A"], 4.0);
        assert_eq!(gt["B"], 2.0);
        let aug = augment_mean_listener(&ds).unwrap();
        assert_eq!(system_ground_truth(&aug, &q).unwrap(), gt);
        assert!(system_ground_truth(&ds, &attr("valence")).is_err());
    }

    #[test]
    fn rejects_off_grid_and_duplicates() {
        let off = Dataset::new(
            vec![attr("quality")],
            5,
            vec![rating("u1", "A", "l1", &[6.0])],
            BTreeMap::new(),
        );
        assert!(matches!(off, Err(Error::Dataset(m)) if m.contains("off Likert grid")));
        let dup = Dataset::new(
            vec![attr("quality")],
            5,
            vec![
                rating("u1", "A", "l1", &[2.0]),
                rating("u1", "A", "l1", &[3.0]),
            ],
            BTreeMap::new(),
        );
        assert!(matches!(dup, Err(Error::Duplicate { .. })));
    }

    #[test]
    fn attribute_names_must_be_unique_and_non_empty() {
        assert!(AttributeName::new("").is_err());
        let r = Dataset::new(vec![attr("a"), attr("a")], 5, vec![], BTreeMap::new());
        assert!(r.is_err());
        assert_eq!(
            AttributeName::parse_list("arousal, valence").unwrap(),
            vec![attr("arousal"), attr("valence")]
        );
    }

    #[test]
    fn features_must_cover_ratings() {
        let ds = small();
        let mut f = BTreeMap::new();
        f.insert("u1".to_string(), vec![1.0, 2.0]);
        assert!(ds.clone().with_features(f.clone()).is_err());
        f.insert("u2".to_string(), vec![1.0]);
        assert!(ds.clone().with_features(f.clone()).is_err());
        f.insert("u2".to_string(), vec![1.0, 0.5]);
        let ds = ds.with_features(f).unwrap();
        assert_eq!(ds.feature_dim(), Some(2));
        let sel = ds.select_feature_channels(&[1]).unwrap();
        assert_eq!(sel.feature("u2"), Some(&[0.5][..]));
    }

    #[test]
    fn checksum_tracks_content() {
        let ds = small();
        assert_eq!(ds.checksum(), small().checksum());
        let aug = augment_mean_listener(&ds).unwrap();
        assert_ne!(ds.checksum(), aug.checksum());
    }
}
