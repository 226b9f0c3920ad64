use crate::error::{Error, Result};

/// Loss broken down per attribute; `total` is the mean of `per_attribute`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_attribute: Vec<f64>,
}

impl LossReport {
    pub fn from_parts(per_attribute: Vec<f64>) -> Self {
        let total = per_attribute.iter().sum::<f64>() / per_attribute.len() as f64;
        LossReport {
            total,
            per_attribute,
        }
    }
}

fn check_batch(pred: &[Vec<f64>], target: &[Vec<f64>], min_len: usize) -> Result<usize> {
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            expected: pred.len(),
            actual: target.len(),
        });
    }
    if pred.len() < min_len {
        return Err(Error::DegenerateBatch);
    }
    let a = pred[0].len();
    if a == 0 {
        return Err(Error::Contract("predictions have no attributes".into()));
    }
    if let Some(bad) = pred.iter().chain(target).find(|v| v.len() != a) {
        return Err(Error::Dimension {
            expected: a,
            actual: bad.len(),
        });
    }
    Ok(a)
}

/// Per-attribute mean squared error.
pub fn loss_das_mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<LossReport> {
    let a = check_batch(pred, target, 1)?;
    let n = pred.len() as f64;
    let per = (0..a)
        .map(|k| {
            pred.iter()
                .zip(target)
                .map(|(p, t)| (p[k] - t[k]).powi(2))
                .sum::<f64>()
                / n
        })
        .collect();
    Ok(LossReport::from_parts(per))
}

/// d total / d pred for [`loss_das_mse`].
pub fn mse_gradient(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scale = 2.0 / (pred.len() * pred[0].len()) as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| scale * (a - b)).collect())
        .collect()
}

struct ColumnMoments {
    mean_p: f64,
    mean_t: f64,
    var_p: f64,
    var_t: f64,
    cov: f64,
}

fn column_moments(pred: &[Vec<f64>], target: &[Vec<f64>], k: usize) -> ColumnMoments {
    let n = pred.len() as f64;
    let mean_p = pred.iter().map(|p| p[k]).sum::<f64>() / n;
    let mean_t = target.iter().map(|t| t[k]).sum::<f64>() / n;
    let (mut var_p, mut var_t, mut cov) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (dp, dt) = (p[k] - mean_p, t[k] - mean_t);
        var_p += dp * dp;
        var_t += dt * dt;
        cov += dp * dt;
    }
    ColumnMoments {
        mean_p,
        mean_t,
        var_p: var_p / n,
        var_t: var_t / n,
        cov: cov / n,
    }
}

fn degenerate_target(target: &[Vec<f64>], k: usize) -> bool {
    target.iter().all(|t| t[k] == target[0][k])
}

/// Per-attribute `1 - CCC(pred, target)` with population moments.
pub fn loss_ccc(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<LossReport> {
    let a = check_batch(pred, target, 2)?;
    let mut per = Vec::with_capacity(a);
    for k in 0..a {
        if degenerate_target(target, k) {
            return Err(Error::DegenerateBatch);
        }
        let m = column_moments(pred, target, k);
        let gap = m.mean_p - m.mean_t;
        per.push(1.0 - 2.0 * m.cov / (m.var_p + m.var_t + gap * gap));
    }
    Ok(LossReport::from_parts(per))
}

/// d total / d pred for [`loss_ccc`]. Callers must have validated the batch.
pub fn ccc_gradient(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = pred.len() as f64;
    let a = pred[0].len();
    let mut grad = vec![vec![0.0; a]; pred.len()];
    for k in 0..a {
        let m = column_moments(pred, target, k);
        let gap = m.mean_p - m.mean_t;
        let denom = m.var_p + m.var_t + gap * gap;
        let numer = 2.0 * m.cov;
        for (i, (p, t)) in pred.iter().zip(target).enumerate() {
            // d cov / d p_i = (t_i - mean_t)/n ; d denom / d p_i = 2 (p_i - mean_p)/n + 2 gap/n
            let d_numer = 2.0 * (t[k] - m.mean_t) / n;
            let d_denom = 2.0 * (p[k] - m.mean_p) / n + 2.0 * gap / n;
            let d_ccc = (d_numer * denom - numer * d_denom) / (denom * denom);
            grad[i][k] = -d_ccc / a as f64;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn mse_examples() {
        let t = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(loss_das_mse(&t, &t).unwrap().total, 0.0);
        assert_eq!(loss_das_mse(&col(&[0.0]), &col(&[2.0])).unwrap().total, 4.0);
        // attribute losses 2 and 4
        let r = loss_das_mse(&[vec![0.0, 0.0]], &[vec![2f64.sqrt(), 2.0]]).unwrap();
        assert!((r.per_attribute[0] - 2.0).abs() < 1e-15);
        assert!((r.total - 3.0).abs() < 1e-15);
        assert!(matches!(loss_das_mse(&[], &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn ccc_examples() {
        let x = col(&[1.0, 2.0, 3.0]);
        assert!(loss_ccc(&x, &x).unwrap().total.abs() < 1e-15);
        let r = loss_ccc(&x, &col(&[2.0, 3.0, 4.0])).unwrap();
        assert!((r.total - (1.0 - 4.0 / 7.0)).abs() < 1e-12);
        assert!((r.total - 0.428571).abs() < 1e-6);
        let neg = loss_ccc(&col(&[-1.0, 0.0, 1.0]), &col(&[1.0, 0.0, -1.0])).unwrap();
        assert!(neg.total <= 2.0 && neg.total > 1.9);
        assert!(matches!(
            loss_ccc(&col(&[1.0, 2.0]), &col(&[3.0, 3.0])),
            Err(Error::DegenerateBatch)
        ));
        assert!(loss_ccc(&col(&[1.0]), &col(&[3.0])).is_err());
    }

    type LossFn = fn(&[Vec<f64>], &[Vec<f64>]) -> Result<LossReport>;

    fn finite_difference(f: LossFn, p: &[Vec<f64>], t: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = 1e-6;
        let mut out = vec![vec![0.0; p[0].len()]; p.len()];
        for i in 0..p.len() {
            for k in 0..p[0].len() {
                let mut up = p.to_vec();
                let mut dn = p.to_vec();
                up[i][k] += h;
                dn[i][k] -= h;
                out[i][k] = (f(&up, t).unwrap().total - f(&dn, t).unwrap().total) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let p = vec![
            vec![0.3, -1.0],
            vec![1.2, 0.4],
            vec![-0.7, 2.2],
            vec![0.1, 0.0],
        ];
        let t = vec![
            vec![1.0, 2.0],
            vec![3.0, 1.0],
            vec![2.0, 5.0],
            vec![4.0, 3.0],
        ];
        for (f, g) in [
            (
                loss_das_mse as fn(&_, &_) -> _,
                mse_gradient as fn(&_, &_) -> _,
            ),
            (loss_ccc, ccc_gradient),
        ] {
            let fd = finite_difference(f, &p, &t);
            let an = g(&p, &t);
            for (a, b) in fd.iter().flatten().zip(an.iter().flatten()) {
                assert!((a - b).abs() < 1e-7, "{a} vs {b}");
            }
        }
    }
}
