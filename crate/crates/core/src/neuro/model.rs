use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// Fully connected layer: `y = act(x·W + b)`, followed by dropout at
/// training time.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `inputs × outputs`.
    pub(crate) weights: Array2<T>,
    pub(crate) bias: Array1<T>,
    pub(crate) activation: Activation,
    pub(crate) dropout: f64,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>, activation: Activation, dropout: f64) -> Result<Self> {
        if weights.ncols() != bias.len() {
            return Err(Error::DimensionMismatch(format!(
                "weights have {} outputs, bias has {}",
                weights.ncols(),
                bias.len()
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {dropout}")));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias,
            activation,
            dropout,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }
}

/// Layer schedule shared by every head of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    /// Hidden layer widths, ReLU activated.
    pub hidden: Vec<usize>,
    /// Dropout rate after each hidden layer, in per-mille.
    pub dropout_permille: Vec<u16>,
    /// Number of parallel single-output heads.
    pub heads: usize,
}

impl ArchitectureSpec {
    /// Single-output regressor: 2048 → 1024 → 256 → 1 with dropout
    /// 0.25, 0.25, 0.5.
    pub fn regressor(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![2048, 1024, 256],
            dropout_permille: vec![250, 250, 500],
            heads: 1,
        }
    }

    /// `heads` parallel task heads, each 512 → 256 → 1 with dropout 0.25, 0.5.
    pub fn mtl(input_dim: usize, heads: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![512, 256],
            dropout_permille: vec![250, 500],
            heads,
        }
    }

    pub fn param_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut per_head = 0;
        for &w in self.hidden.iter().chain(std::iter::once(&1)) {
            per_head += fan_in * w + w;
            fan_in = w;
        }
        per_head * self.heads
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.heads == 0 {
            return Err(Error::invalid("input dim and head count must be positive"));
        }
        if self.hidden.len() != self.dropout_permille.len() {
            return Err(Error::invalid("one dropout rate per hidden layer is required"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if self.dropout_permille.iter().any(|&d| d >= 1000) {
            return Err(Error::invalid("dropout rate must be below 1"));
        }
        Ok(())
    }
}

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

/// One or more single-output MLP heads reading the same input vector.
#[derive(Debug)]
pub struct NetworkModel<T> {
    input_dim: usize,
    heads: Vec<Vec<Dense<T>>>,
    /// Identity of this parameter set; changes whenever parameters do so
    /// that caches from earlier forward passes are rejected.
    id: u64,
    version: u64,
}

impl<T: Scalar> Clone for NetworkModel<T> {
    fn clone(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            heads: self.heads.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl<T: Scalar> PartialEq for NetworkModel<T> {
    /// Parameter equality; identity and version are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.heads == other.heads
    }
}

/// Forward-pass mode: `Train` applies dropout drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    /// Pre-activation `x·W + b`.
    pre: Array2<T>,
    /// Output after activation and dropout; input to the next layer.
    out: Array2<T>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)).
    mask: Option<Array2<T>>,
}

/// Activations kept by [`NetworkModel::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    model_id: u64,
    version: u64,
    input: Array2<T>,
    heads: Vec<Vec<LayerCache<T>>>,
}

/// Parameter gradients with the model's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub heads: Vec<Vec<LayerGradient<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &NetworkModel<T>) -> Self {
        Self {
            heads: model
                .heads
                .iter()
                .map(|h| {
                    h.iter()
                        .map(|l| LayerGradient {
                            weights: Array2::zeros(l.weights.raw_dim()),
                            bias: Array1::zeros(l.bias.len()),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.heads
            .iter()
            .flatten()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()))
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

impl<T: Scalar> NetworkModel<T> {
    /// Builds a network from explicit heads. Each head must end in a single
    /// linear output.
    pub fn from_heads(input_dim: usize, heads: Vec<Vec<Dense<T>>>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::invalid("a network needs at least one head"));
        }
        for (h, layers) in heads.iter().enumerate() {
            let mut fan_in = input_dim;
            for (l, layer) in layers.iter().enumerate() {
                if layer.inputs() != fan_in {
                    return Err(Error::DimensionMismatch(format!(
                        "head {h} layer {l} expects {} inputs, previous layer gives {fan_in}",
                        layer.inputs()
                    )));
                }
                fan_in = layer.outputs();
            }
            match layers.last() {
                Some(last) if last.outputs() == 1 => {}
                _ => {
                    return Err(Error::invalid(format!("head {h} must end in exactly one output neuron")))
                }
            }
        }
        Ok(Self {
            input_dim,
            heads,
            id: fresh_id(),
            version: 0,
        })
    }

    /// He-normal weights (`N(0, 2/fan_in)`), zero biases, seeded.
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut heads = Vec::with_capacity(spec.heads);
        for _ in 0..spec.heads {
            let mut layers = Vec::new();
            let mut fan_in = spec.input_dim;
            let widths = spec.hidden.iter().copied().chain(std::iter::once(1));
            for (i, width) in widths.enumerate() {
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let weights = Array2::from_shape_simple_fn((fan_in, width), || lit(normal.sample(&mut rng)));
                let (activation, dropout) = match spec.dropout_permille.get(i) {
                    Some(&d) => (Activation::Relu, f64::from(d) / 1000.0),
                    None => (Activation::Linear, 0.0),
                };
                layers.push(Dense::new(weights, Array1::zeros(width), activation, dropout)?);
                fan_in = width;
            }
            heads.push(layers);
        }
        Self::from_heads(spec.input_dim, heads)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head(&self, h: usize) -> &[Dense<T>] {
        &self.heads[h]
    }

    /// Mutable access to one layer; invalidates outstanding caches.
    pub fn layer_mut(&mut self, head: usize, layer: usize) -> &mut Dense<T> {
        self.version += 1;
        &mut self.heads[head][layer]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub(crate) fn heads_mut(&mut self) -> &mut [Vec<Dense<T>>] {
        &mut self.heads
    }

    pub fn param_count(&self) -> usize {
        self.heads
            .iter()
            .flatten()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Layer widths of head 0, input first.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.heads[0].iter().map(Dense::outputs));
        dims
    }

    pub fn cast<U: Scalar>(&self) -> NetworkModel<U> {
        let conv = |v: &T| U::from_f64(v.to_f64().unwrap()).unwrap();
        NetworkModel {
            input_dim: self.input_dim,
            heads: self
                .heads
                .iter()
                .map(|h| {
                    h.iter()
                        .map(|l| Dense {
                            weights: l.weights.map(conv),
                            bias: l.bias.map(conv),
                            activation: l.activation,
                            dropout: l.dropout,
                        })
                        .collect()
                })
                .collect(),
            id: fresh_id(),
            version: 0,
        }
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "batch has {} features, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Predictions (`batch × heads`) and the cache needed by [`Self::backward`].
    pub fn forward(&self, x: ArrayView2<T>, mode: Mode) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_input(&x)?;
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let input = x.to_owned();
        let mut preds = Array2::zeros((x.nrows(), self.heads.len()));
        let mut caches = Vec::with_capacity(self.heads.len());
        for (h, layers) in self.heads.iter().enumerate() {
            let mut head_cache: Vec<LayerCache<T>> = Vec::with_capacity(layers.len());
            for layer in layers {
                let prev = head_cache.last().map_or(input.view(), |c| c.out.view());
                let pre = prev.dot(&layer.weights) + &layer.bias;
                let mut out = match layer.activation {
                    Activation::Relu => pre.mapv(|v| v.max(T::zero())),
                    Activation::Linear => pre.clone(),
                };
                let mask = match rng.as_mut() {
                    Some(rng) if layer.dropout > 0.0 => {
                        let keep = lit::<T>(1.0 / (1.0 - layer.dropout));
                        let m = Array2::from_shape_simple_fn(out.raw_dim(), || {
                            if rng.random::<f64>() < layer.dropout {
                                T::zero()
                            } else {
                                keep
                            }
                        });
                        out = out * &m;
                        Some(m)
                    }
                    _ => None,
                };
                head_cache.push(LayerCache { pre, out, mask });
            }
            preds.column_mut(h).assign(&head_cache.last().unwrap().out.column(0));
            caches.push(head_cache);
        }
        let cache = ForwardCache {
            model_id: self.id,
            version: self.version,
            input,
            heads: caches,
        };
        Ok((preds, cache))
    }

    /// Eval-mode predictions without keeping a cache.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut preds = Array2::zeros((x.nrows(), self.heads.len()));
        for (h, layers) in self.heads.iter().enumerate() {
            let mut a: Option<Array2<T>> = None;
            for layer in layers {
                let z = a.as_ref().map_or(x, |a| a.view()).dot(&layer.weights) + &layer.bias;
                a = Some(match layer.activation {
                    Activation::Relu => z.mapv_into(|v| v.max(T::zero())),
                    Activation::Linear => z,
                });
            }
            preds.column_mut(h).assign(&a.unwrap().column(0));
        }
        Ok(preds)
    }

    /// Back-propagates `grad_out` (`batch × heads`, dL/dprediction) through
    /// the activations in `cache`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: ArrayView2<T>) -> Result<Gradients<T>> {
        if cache.model_id != self.id || cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                model: self.version,
            });
        }
        let batch = cache.input.nrows();
        if grad_out.dim() != (batch, self.heads.len()) {
            return Err(Error::DimensionMismatch(format!(
                "loss gradient is {:?}, expected ({batch}, {})",
                grad_out.dim(),
                self.heads.len()
            )));
        }
        let mut grads = Vec::with_capacity(self.heads.len());
        for (h, layers) in self.heads.iter().enumerate() {
            let lc = &cache.heads[h];
            let mut head_grads = Vec::with_capacity(layers.len());
            // dL/d(out) of the current layer.
            let mut d_out = grad_out.column(h).to_owned().insert_axis(Axis(1));
            for l in (0..layers.len()).rev() {
                let layer = &layers[l];
                let c = &lc[l];
                if let Some(m) = &c.mask {
                    d_out = d_out * m;
                }
                let delta = match layer.activation {
                    Activation::Relu => {
                        ndarray::Zip::from(&mut d_out).and(&c.pre).for_each(|d, &z| {
                            if z <= T::zero() {
                                *d = T::zero();
                            }
                        });
                        d_out
                    }
                    Activation::Linear => d_out,
                };
                let prev = if l == 0 { cache.input.view() } else { lc[l - 1].out.view() };
                let gw = prev.t().dot(&delta);
                let gb = delta.sum_axis(Axis(0));
                d_out = if l > 0 { delta.dot(&layer.weights.t()) } else { Array2::zeros((0, 0)) };
                head_grads.push(LayerGradient { weights: gw, bias: gb });
            }
            head_grads.reverse();
            grads.push(head_grads);
        }
        Ok(Gradients { heads: grads })
    }
}

/// Builds a K-head MTL network (512 → 256 → 1 per head), He-initialized.
pub fn build_mtl_head<T: Scalar>(input_dim: usize, tasks: usize, seed: u64) -> Result<NetworkModel<T>> {
    NetworkModel::build(&ArchitectureSpec::mtl(input_dim, tasks), seed)
}

/// Builds the single-output regressor (2048 → 1024 → 256 → 1), He-initialized.
pub fn build_regressor<T: Scalar>(input_dim: usize, seed: u64) -> Result<NetworkModel<T>> {
    NetworkModel::build(&ArchitectureSpec::regressor(input_dim), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn regressor_param_count() {
        let expected = 16928 * 2048 + 2048 + 2048 * 1024 + 1024 + 1024 * 256 + 256 + 256 + 1;
        assert_eq!(expected, 37_031_425);
        assert_eq!(ArchitectureSpec::regressor(16928).param_count(), expected);
        let m = build_regressor::<f64>(12, 0).unwrap();
        assert_eq!(m.param_count(), ArchitectureSpec::regressor(12).param_count());
    }

    #[test]
    fn mtl_layer_schedule() {
        let m = build_mtl_head::<f32>(1536, 1, 3).unwrap();
        assert_eq!(m.layer_dims(), vec![1536, 512, 256, 1]);
        let dropouts: Vec<f64> = m.head(0).iter().map(Dense::dropout).collect();
        assert_eq!(dropouts, vec![0.25, 0.5, 0.0]);
        let k = build_mtl_head::<f64>(8, 11, 3).unwrap();
        assert_eq!(k.head_count(), 11);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_mtl_head::<f64>(20, 3, 9).unwrap();
        let b = build_mtl_head::<f64>(20, 3, 9).unwrap();
        let c = build_mtl_head::<f64>(20, 3, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn he_init_scale() {
        let m = build_regressor::<f64>(400, 1).unwrap();
        let w = &m.head(0)[0].weights;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / 400.0).abs() < 0.05 * 2.0 / 400.0, "{var}");
    }

    fn linear(w: f64, b: f64) -> NetworkModel<f64> {
        let layer = Dense::new(array![[w]], array![b], Activation::Linear, 0.0).unwrap();
        NetworkModel::from_heads(1, vec![vec![layer]]).unwrap()
    }

    #[test]
    fn single_linear_layer() {
        let m = linear(2.0, 1.0);
        let (p, _) = m.forward(array![[3.0]].view(), Mode::Eval).unwrap();
        assert_eq!(p, array![[7.0]]);
    }

    #[test]
    fn zero_weights_predict_bias() {
        let mut m = build_mtl_head::<f64>(5, 2, 0).unwrap();
        for h in 0..2 {
            for l in 0..3 {
                let layer = m.layer_mut(h, l);
                layer.weights.fill(0.0);
                layer.bias.fill(0.0);
            }
            m.layer_mut(h, 2).bias[0] = h as f64 + 0.5;
        }
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * j) as f64);
        let p = m.predict(x.view()).unwrap();
        assert!(p.column(0).iter().all(|&v| v == 0.5));
        assert!(p.column(1).iter().all(|&v| v == 1.5));
    }

    #[test]
    fn eval_is_deterministic_and_train_drops() {
        let m = build_mtl_head::<f64>(6, 1, 4).unwrap();
        let x = Array2::from_shape_fn((8, 6), |(i, j)| ((i + 2 * j) % 5) as f64 * 0.3);
        let (a, _) = m.forward(x.view(), Mode::Eval).unwrap();
        let (b, _) = m.forward(x.view(), Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, m.predict(x.view()).unwrap());
        let (t1, _) = m.forward(x.view(), Mode::Train { seed: 1 }).unwrap();
        let (t2, _) = m.forward(x.view(), Mode::Train { seed: 1 }).unwrap();
        let (t3, _) = m.forward(x.view(), Mode::Train { seed: 2 }).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, t3);
    }

    #[test]
    fn linear_mse_gradient_by_hand() {
        // L = (w·x + b - y)², dL/dw = 2(pred - y)·x.
        let m = linear(0.5, 0.25);
        let x = array![[3.0]];
        let y = 4.0;
        let (p, cache) = m.forward(x.view(), Mode::Eval).unwrap();
        let g = 2.0 * (p[[0, 0]] - y);
        let grads = m.backward(&cache, array![[g]].view()).unwrap();
        assert_eq!(grads.heads[0][0].weights[[0, 0]], 2.0 * (1.75 - 4.0) * 3.0);
        assert_eq!(grads.heads[0][0].bias[0], 2.0 * (1.75 - 4.0));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let m = build_regressor::<f64>(7, 2).unwrap();
        let x = Array2::from_elem((3, 7), 0.5);
        let (_, cache) = m.forward(x.view(), Mode::Train { seed: 3 }).unwrap();
        let grads = m.backward(&cache, Array2::zeros((3, 1)).view()).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut m = linear(1.0, 0.0);
        let (_, cache) = m.forward(array![[1.0]].view(), Mode::Eval).unwrap();
        m.layer_mut(0, 0).bias[0] = 1.0;
        let err = m.backward(&cache, array![[1.0]].view()).unwrap_err();
        assert!(matches!(err, Error::StaleCache { .. }));
        let other = linear(1.0, 0.0);
        assert!(other.backward(&cache, array![[1.0]].view()).is_err());
    }

    #[test]
    fn bad_shapes_rejected() {
        let m = linear(1.0, 0.0);
        assert!(m.forward(Array2::zeros((2, 3)).view(), Mode::Eval).is_err());
        let wide = Dense::new(Array2::<f64>::zeros((1, 2)), Array1::zeros(2), Activation::Linear, 0.0).unwrap();
        assert!(NetworkModel::from_heads(1, vec![vec![wide]]).is_err());
        assert!(Dense::new(Array2::<f64>::zeros((1, 1)), Array1::zeros(1), Activation::Relu, 1.0).is_err());
    }
}
