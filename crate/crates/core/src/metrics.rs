//! Correlation statistics: Spearman (average ranks for ties), Pearson and
//! Lin's concordance correlation. All moments are population (1/N) moments.

use crate::error::{Error, Result};

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::UndefinedCorrelation(format!(
            "length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 samples, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite input".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variances and covariance of two equal-length samples.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let n = x.len() as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (mx, my, sxx / n, syy / n, sxy / n)
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        // positions i+1 ..= j share their mean rank
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Pearson product-moment correlation.
pub fn lcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Err(Error::UndefinedCorrelation("constant input vector".into()));
    }
    let (_, _, vx, vy, cxy) = moments(x, y);
    // sqrt(vx * vy) is exact when vx == vy, so identical or reversed inputs give exactly +-1
    let denom = match vx * vy {
        p if p.is_normal() => p.sqrt(),
        _ => vx.sqrt() * vy.sqrt(),
    };
    Ok((cxy / denom).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    lcc(&average_ranks(x), &average_ranks(y))
}

/// Lin's concordance correlation coefficient.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    if is_constant(x) && is_constant(y) {
        return Err(Error::UndefinedCorrelation(
            "both input vectors constant".into(),
        ));
    }
    let (mx, my, vx, vy, cxy) = moments(x, y);
    let gap = mx - my;
    Ok((2.0 * cxy / (vx + vy + gap * gap)).clamp(-1.0, 1.0))
}

/// All three metrics for one prediction/reference pair.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrelationSummary {
    pub srcc: f64,
    pub lcc: f64,
    pub ccc: f64,
    pub n: usize,
}

pub fn summarize(predicted: &[f64], reference: &[f64]) -> Result<CorrelationSummary> {
    Ok(CorrelationSummary {
        srcc: srcc(predicted, reference)?,
        lcc: lcc(predicted, reference)?,
        ccc: ccc(predicted, reference)?,
        n: predicted.len(),
    })
}
