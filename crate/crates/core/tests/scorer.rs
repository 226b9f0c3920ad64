use listener_scale::scorer::{
    train, Checkpoint, ListenerVocab, Regime, ScorerConfig, ScorerModel, TrainOptions,
    TrainingSample, TrainingSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `y = 1.5 x0 - 0.5 x1 + 3 + noise` on 200 points.
fn linear_set(noise_sd: f64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, noise_sd).unwrap();
    let features: Vec<Vec<f64>> = (0..200)
        .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let samples = features
        .iter()
        .enumerate()
        .map(|(i, x)| TrainingSample {
            utterance: i,
            listener: 0,
            is_mean_listener: false,
            targets: vec![1.5 * x[0] - 0.5 * x[1] + 3.0 + noise.sample(&mut rng)],
        })
        .collect();
    TrainingSet {
        features,
        samples,
        vocab: ListenerVocab::from_ids(vec!["l0".into()]),
    }
}

/// Least-squares residual MSE via the 3x3 normal equations (Cramer's rule).
fn ols_mse(set: &TrainingSet) -> f64 {
    let rows: Vec<[f64; 3]> = set
        .samples
        .iter()
        .map(|s| {
            let x = &set.features[s.utterance];
            [1.0, x[0], x[1]]
        })
        .collect();
    let ys: Vec<f64> = set.samples.iter().map(|s| s.targets[0]).collect();
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (r, y) in rows.iter().zip(&ys) {
        for i in 0..3 {
            b[i] += r[i] * y;
            for j in 0..3 {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    let beta: Vec<f64> = (0..3)
        .map(|c| {
            let mut m = a;
            for i in 0..3 {
                m[i][c] = b[i];
            }
            det(&m) / d
        })
        .collect();
    rows.iter()
        .zip(&ys)
        .map(|(r, y)| (y - (beta[0] + beta[1] * r[1] + beta[2] * r[2])).powi(2))
        .sum::<f64>()
        / ys.len() as f64
}

fn model_mse(model: &ScorerModel, set: &TrainingSet) -> f64 {
    set.samples
        .iter()
        .map(|s| {
            (model.forward(&set.features[s.utterance], None).unwrap()[0] - s.targets[0]).powi(2)
        })
        .sum::<f64>()
        / set.samples.len() as f64
}

fn small_config() -> ScorerConfig {
    let mut cfg = ScorerConfig::new(2, 1);
    cfg.hidden_dims = vec![8];
    cfg.seed = 4;
    cfg
}

fn options(regime: Regime, epochs: usize, lr: f64) -> TrainOptions {
    let mut opts = TrainOptions::new(regime);
    opts.epochs = epochs;
    opts.adam.lr = lr;
    opts.seed = 9;
    opts
}

#[test]
fn das_mse_fits_a_linear_target() {
    let set = linear_set(0.05);
    let floor = ols_mse(&set);
    let model = ScorerModel::new(small_config()).unwrap();
    let out = train(model, &set, &options(Regime::DasMse, 200, 1e-2)).unwrap();
    let mse = model_mse(&out.model, &set);
    assert!(floor < 0.004, "oracle floor {floor}");
    assert!(mse < 0.01, "trained mse {mse}, oracle {floor}");
    assert_eq!(out.loss_curve.len(), 200);
    assert!(out.loss_curve[199] < out.loss_curve[0]);
}

#[test]
fn comparison_training_orders_a_monotone_target() {
    let set = linear_set(0.0);
    let model = ScorerModel::new(small_config()).unwrap();
    let out = train(model, &set, &options(Regime::Comparison, 60, 1e-2)).unwrap();
    let (pred, truth): (Vec<f64>, Vec<f64>) = set
        .samples
        .iter()
        .map(|s| {
            (
                out.model.forward(&set.features[s.utterance], None).unwrap()[0],
                s.targets[0],
            )
        })
        .unzip();
    let rho = listener_scale::metrics::srcc(&pred, &truth).unwrap();
    assert!(rho > 0.98, "srcc {rho}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let set = linear_set(0.05);
    let run = |seed| {
        let mut opts = options(Regime::Comparison, 5, 1e-2);
        opts.seed = seed;
        train(ScorerModel::new(small_config()).unwrap(), &set, &opts).unwrap()
    };
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let set = linear_set(0.05);
    let out = train(
        ScorerModel::new(small_config().with_listener_embedding(3)).unwrap(),
        &set,
        &options(Regime::DasMse, 3, 1e-2),
    )
    .unwrap();
    let ids = vec!["a".to_string(), "b".into(), "__MEAN__".into()];
    let ck = out.model.to_checkpoint(Some(&out.optimizer), &ids);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let restored = ScorerModel::from_checkpoint(&back).unwrap();
    assert_eq!(restored.params(), out.model.params());
    for l in 0..3 {
        assert_eq!(
            restored.forward(&[0.3, -0.7], Some(l)).unwrap(),
            out.model.forward(&[0.3, -0.7], Some(l)).unwrap()
        );
    }
}

#[test]
fn listener_index_out_of_range_is_rejected() {
    let model = ScorerModel::new(small_config().with_listener_embedding(2)).unwrap();
    assert!(model.forward(&[0.0, 0.0], Some(2)).is_err());
    assert!(model.forward(&[0.0], Some(0)).is_err());
}
