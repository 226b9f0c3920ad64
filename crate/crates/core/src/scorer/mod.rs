//! Feedforward attribute scorer with an optional listener-embedding input.
//!
//! Parameters live in one flat vector so that optimizers, checkpoints and
//! finite-difference checks can treat them uniformly. Layout, in order: for
//! each dense layer its row-major `n_out x n_in` weights then its biases,
//! followed by the `n_listeners x embedding_dim` embedding table if enabled.

mod loss;
mod train;

use std::fs;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::{ccc_gradient, loss_ccc, loss_das_mse, mse_gradient, LossReport};
pub use train::{
    train, ListenerVocab, Regime, TrainOptions, TrainOutcome, TrainingSample, TrainingSet,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub n_attributes: usize,
    pub use_listener_embedding: bool,
    pub embedding_dim: usize,
    pub n_listeners: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl ScorerConfig {
    /// Defaults: two tanh hidden layers of 16 units, 4-d embedding (disabled).
    pub fn new(input_dim: usize, n_attributes: usize) -> Self {
        ScorerConfig {
            input_dim,
            hidden_dims: vec![16, 16],
            n_attributes,
            use_listener_embedding: false,
            embedding_dim: 4,
            n_listeners: 0,
            activation: Activation::Tanh,
            seed: 0,
        }
    }

    pub fn with_listener_embedding(mut self, n_listeners: usize) -> Self {
        self.use_listener_embedding = true;
        self.n_listeners = n_listeners;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_attributes == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("scorer dimensions must be >= 1".into()));
        }
        if self.use_listener_embedding && (self.embedding_dim == 0 || self.n_listeners == 0) {
            return Err(Error::Config(
                "listener embedding requires embedding_dim >= 1 and n_listeners >= 1".into(),
            ));
        }
        Ok(())
    }

    fn layer_widths(&self) -> Vec<usize> {
        let emb = if self.use_listener_embedding {
            self.embedding_dim
        } else {
            0
        };
        let mut w = vec![self.input_dim + emb];
        w.extend(&self.hidden_dims);
        w.push(self.n_attributes);
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerSpan {
    n_in: usize,
    n_out: usize,
    weights: usize,
    biases: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    layers: Vec<LayerSpan>,
    embedding: Option<usize>,
    len: usize,
}

impl Layout {
    fn of(cfg: &ScorerConfig) -> Layout {
        let widths = cfg.layer_widths();
        let mut off = 0;
        let layers = widths
            .windows(2)
            .map(|w| {
                let span = LayerSpan {
                    n_in: w[0],
                    n_out: w[1],
                    weights: off,
                    biases: off + w[0] * w[1],
                };
                off += w[0] * w[1] + w[1];
                span
            })
            .collect();
        let embedding = cfg.use_listener_embedding.then(|| {
            let e = off;
            off += cfg.n_listeners * cfg.embedding_dim;
            e
        });
        Layout {
            layers,
            embedding,
            len: off,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerModel {
    config: ScorerConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Gradients, laid out exactly like [`ScorerModel::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros_like(model: &ScorerModel) -> Self {
        Gradients(vec![0.0; model.params.len()])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&g| g == 0.0)
    }
}

/// Activations recorded by a forward pass, consumed by [`ScorerModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    listener: Option<usize>,
    /// `activations[0]` is the network input, the last entry the output.
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has an output layer")
    }
}

impl ScorerModel {
    /// Seeded initialization: dense weights and biases uniform in
    /// `±1/sqrt(fan_in)`, embedding rows standard normal.
    pub fn new(config: ScorerConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::of(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.len];
        for l in &layout.layers {
            let bound = 1.0 / (l.n_in as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for p in &mut params[l.weights..l.biases + l.n_out] {
                *p = u.sample(&mut rng);
            }
        }
        if let Some(e) = layout.embedding {
            for p in &mut params[e..] {
                *p = StandardNormal.sample(&mut rng);
            }
        }
        Ok(ScorerModel {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Range of the embedding row of `listener` inside the flat parameter vector.
    pub fn embedding_row(&self, listener: usize) -> Option<std::ops::Range<usize>> {
        let e = self.layout.embedding?;
        (listener < self.config.n_listeners).then(|| {
            let start = e + listener * self.config.embedding_dim;
            start..start + self.config.embedding_dim
        })
    }

    fn check_inputs(&self, features: &[f64], listener: Option<usize>) -> Result<()> {
        if features.len() != self.config.input_dim {
            return Err(Error::Dimension {
                expected: self.config.input_dim,
                actual: features.len(),
            });
        }
        match (self.config.use_listener_embedding, listener) {
            (true, None) => Err(Error::Contract(
                "model uses listener embeddings; a listener index is required".into(),
            )),
            (false, Some(_)) => Err(Error::Contract(
                "model has no listener embedding; listener index must not be given".into(),
            )),
            (true, Some(i)) if i >= self.config.n_listeners => Err(Error::ListenerOutOfRange {
                index: i,
                len: self.config.n_listeners,
            }),
            _ => Ok(()),
        }
    }

    /// Attribute scores for one utterance.
    pub fn forward(&self, features: &[f64], listener: Option<usize>) -> Result<Vec<f64>> {
        Ok(self
            .trace(features, listener)?
            .activations
            .pop()
            .unwrap_or_default())
    }

    pub fn trace(&self, features: &[f64], listener: Option<usize>) -> Result<ForwardTrace> {
        self.check_inputs(features, listener)?;
        let mut input = features.to_vec();
        if let Some(i) = listener {
            let row = self.embedding_row(i).expect("checked above");
            input.extend_from_slice(&self.params[row]);
        }
        let mut activations = Vec::with_capacity(self.layout.layers.len() + 1);
        activations.push(input);
        let last = self.layout.layers.len() - 1;
        for (k, l) in self.layout.layers.iter().enumerate() {
            let x = &activations[k];
            let w = &self.params[l.weights..l.biases];
            let b = &self.params[l.biases..l.biases + l.n_out];
            let out: Vec<f64> = (0..l.n_out)
                .map(|o| {
                    let row = &w[o * l.n_in..(o + 1) * l.n_in];
                    let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    if k == last {
                        z
                    } else {
                        self.config.activation.apply(z)
                    }
                })
                .collect();
            activations.push(out);
        }
        Ok(ForwardTrace {
            listener,
            activations,
        })
    }

    /// Accumulates into `grads` the gradient of a scalar loss given its
    /// gradient `upstream` with respect to this trace's outputs.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64], grads: &mut Gradients) {
        debug_assert_eq!(upstream.len(), self.config.n_attributes);
        debug_assert_eq!(grads.0.len(), self.params.len());
        let mut delta = upstream.to_vec();
        for (k, l) in self.layout.layers.iter().enumerate().rev() {
            let x = &trace.activations[k];
            for (o, &d) in delta.iter().enumerate().take(l.n_out) {
                if d == 0.0 {
                    continue;
                }
                grads.0[l.biases + o] += d;
                let row = &mut grads.0[l.weights + o * l.n_in..l.weights + (o + 1) * l.n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let w = &self.params[l.weights..l.biases];
            let mut prev = vec![0.0; l.n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * l.n_in..(o + 1) * l.n_in]) {
                    *p += d * wi;
                }
            }
            if k > 0 {
                let act = self.config.activation;
                for (p, a) in prev.iter_mut().zip(x) {
                    *p *= act.derivative_from_output(*a);
                }
            }
            delta = prev;
        }
        // delta now holds d loss / d input; the tail belongs to the embedding row
        if let Some(i) = trace.listener {
            let row = self
                .embedding_row(i)
                .expect("trace listener validated at forward");
            for (g, d) in grads.0[row].iter_mut().zip(&delta[self.config.input_dim..]) {
                *g += d;
            }
        }
    }

    /// Gradient over a batch of traces, each with its upstream gradient.
    pub fn backward_batch(&self, traces: &[ForwardTrace], upstream: &[Vec<f64>]) -> Gradients {
        let mut g = Gradients::zeros_like(self);
        for (t, u) in traces.iter().zip(upstream) {
            self.backward(t, u, &mut g);
        }
        g
    }

    pub fn to_checkpoint(&self, optimizer: Option<&AdamState>, listeners: &[String]) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            layers: self
                .layout
                .layers
                .iter()
                .map(|l| DenseWeights {
                    n_in: l.n_in,
                    n_out: l.n_out,
                    weights: self.params[l.weights..l.biases].to_vec(),
                    biases: self.params[l.biases..l.biases + l.n_out].to_vec(),
                })
                .collect(),
            embedding: self.layout.embedding.map(|e| self.params[e..].to_vec()),
            optimizer: optimizer.cloned(),
            listeners: listeners.to_vec(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        let layout = Layout::of(&ck.config);
        if ck.layers.len() != layout.layers.len() {
            return Err(Error::Dimension {
                expected: layout.layers.len(),
                actual: ck.layers.len(),
            });
        }
        let mut params = Vec::with_capacity(layout.len);
        for (span, layer) in layout.layers.iter().zip(&ck.layers) {
            if layer.weights.len() != span.n_in * span.n_out || layer.biases.len() != span.n_out {
                return Err(Error::Dimension {
                    expected: span.n_in * span.n_out + span.n_out,
                    actual: layer.weights.len() + layer.biases.len(),
                });
            }
            params.extend(&layer.weights);
            params.extend(&layer.biases);
        }
        match (&ck.embedding, layout.embedding) {
            (Some(e), Some(_)) => params.extend(e),
            (None, None) => {}
            _ => {
                return Err(Error::Contract(
                    "checkpoint embedding table does not match config".into(),
                ))
            }
        }
        if params.len() != layout.len {
            return Err(Error::Dimension {
                expected: layout.len,
                actual: params.len(),
            });
        }
        if let Some(opt) = &ck.optimizer {
            if opt.m.len() != layout.len || opt.v.len() != layout.len {
                return Err(Error::Dimension {
                    expected: layout.len,
                    actual: opt.m.len(),
                });
            }
        }
        Ok(ScorerModel {
            config: ck.config.clone(),
            layout,
            params,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseWeights {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// JSON model checkpoint. Floats are written in shortest round-trip form
/// and parsed exactly, so save/load is bit-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ScorerConfig,
    pub layers: Vec<DenseWeights>,
    pub embedding: Option<Vec<f64>>,
    pub optimizer: Option<AdamState>,
    /// Listener ids by embedding row.
    #[serde(default)]
    pub listeners: Vec<String>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|source| Error::Json {
            context: "serializing checkpoint".into(),
            source,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|source| Error::Json {
            context: "parsing checkpoint".into(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    model: &mut ScorerModel,
    grads: &Gradients,
    state: &mut AdamState,
    hp: &AdamParams,
) {
    assert_eq!(grads.0.len(), model.params.len(), "gradient shape");
    assert_eq!(state.m.len(), model.params.len(), "optimizer state shape");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..model.params.len() {
        let g = grads.0[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        model.params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(emb: bool) -> ScorerConfig {
        let mut c = ScorerConfig::new(3, 2);
        c.seed = 7;
        if emb {
            c = c.with_listener_embedding(5);
        }
        c
    }

    #[test]
    fn layout_counts() {
        let m = ScorerModel::new(cfg(true)).unwrap();
        // (3+4)*16+16 + 16*16+16 + 16*2+2 + 5*4
        assert_eq!(m.n_params(), 128 + 272 + 34 + 20);
        assert_eq!(m.embedding_row(0), Some(434..438));
        assert_eq!(m.embedding_row(4), Some(450..454));
        assert_eq!(m.embedding_row(5), None);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = ScorerModel::new(cfg(true)).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(
            m.forward(&[1.0, -2.0, 3.0], Some(1)).unwrap(),
            vec![0.0, 0.0]
        );
        let mut r = cfg(false);
        r.activation = Activation::Relu;
        let mut m = ScorerModel::new(r).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(m.forward(&[1.0, 2.0, 3.0], None).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_contract_errors() {
        let m = ScorerModel::new(cfg(false)).unwrap();
        assert!(matches!(
            m.forward(&[1.0, 2.0, 3.0], Some(0)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            m.forward(&[1.0, 2.0], None),
            Err(Error::Dimension { .. })
        ));
        let e = ScorerModel::new(cfg(true)).unwrap();
        assert!(matches!(
            e.forward(&[1.0, 2.0, 3.0], None),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            e.forward(&[1.0, 2.0, 3.0], Some(5)),
            Err(Error::ListenerOutOfRange { index: 5, len: 5 })
        ));
        let mut bad = cfg(true);
        bad.embedding_dim = 0;
        assert!(ScorerModel::new(bad).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = ScorerModel::new(cfg(true)).unwrap();
        let b = ScorerModel::new(cfg(true)).unwrap();
        let x = [0.3, -0.2, 1.5];
        assert_eq!(
            a.forward(&x, Some(2)).unwrap(),
            b.forward(&x, Some(2)).unwrap()
        );
        let bound = 1.0 / 7f64.sqrt();
        assert!(a.params()[..128].iter().all(|p| p.abs() <= bound));
    }

    #[test]
    fn zero_upstream_and_unused_rows() {
        let m = ScorerModel::new(cfg(true)).unwrap();
        let t = m.trace(&[0.1, 0.2, 0.3], Some(1)).unwrap();
        let g = m.backward_batch(std::slice::from_ref(&t), &[vec![0.0, 0.0]]);
        assert!(g.is_zero());
        let g = m.backward_batch(&[t], &[vec![1.0, -0.5]]);
        for listener in [0, 2, 3, 4] {
            assert!(g.0[m.embedding_row(listener).unwrap()]
                .iter()
                .all(|&x| x == 0.0));
        }
        assert!(g.0[m.embedding_row(1).unwrap()].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut m = ScorerModel::new(cfg(false)).unwrap();
        let before = m.params().to_vec();
        let mut st = AdamState::new(m.n_params());
        let zero = Gradients::zeros_like(&m);
        adam_step(&mut m, &zero, &mut st, &AdamParams::default());
        assert_eq!(m.params(), &before[..]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut c = ScorerConfig::new(1, 1);
        c.hidden_dims = vec![];
        let mut m = ScorerModel::new(c).unwrap();
        let before = m.params().to_vec();
        let mut st = AdamState::new(2);
        let hp = AdamParams {
            lr: 0.1,
            ..AdamParams::default()
        };
        adam_step(&mut m, &Gradients(vec![1.0, 0.0]), &mut st, &hp);
        // m_hat = 1, v_hat = 1 at t = 1
        let moved = before[0] - m.params()[0];
        assert!((moved - 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{moved}");
        assert_eq!(m.params()[1], before[1]);
    }

    #[test]
    fn adam_is_deterministic() {
        let g = Gradients((0..34 + 272 + 64).map(|i| (i as f64).sin()).collect());
        let run = || {
            let mut m = ScorerModel::new(cfg(false)).unwrap();
            let mut st = AdamState::new(m.n_params());
            for _ in 0..3 {
                adam_step(&mut m, &g, &mut st, &AdamParams::default());
            }
            (m, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = ScorerModel::new(cfg(true)).unwrap();
        let mut st = AdamState::new(m.n_params());
        st.step = 3;
        st.m.iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = 1.0 / (i as f64 + 3.0));
        st.v.iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = (i as f64).sqrt() * 1e-9);
        let listeners: Vec<String> = (0..5).map(|i| format!("l{i}")).collect();
        let ck = m.to_checkpoint(Some(&st), &listeners);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let m2 = ScorerModel::from_checkpoint(&back).unwrap();
        assert!(m
            .params()
            .iter()
            .zip(m2.params())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(st
            .m
            .iter()
            .zip(&back.optimizer.unwrap().m)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
