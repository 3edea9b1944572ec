use ndarray::{Array1, Array2, Zip};

use super::model::{Gradients, NetworkModel};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for every parameter of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    step: u64,
    first: Gradients<T>,
    second: Gradients<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &NetworkModel<T>) -> Self {
        Self {
            step: 0,
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

fn same_shape<T>(a: &Gradients<T>, b: &Gradients<T>) -> bool {
    a.heads.len() == b.heads.len()
        && a.heads.iter().zip(&b.heads).all(|(x, y)| {
            x.len() == y.len()
                && x.iter()
                    .zip(y)
                    .all(|(p, q)| p.weights.dim() == q.weights.dim() && p.bias.len() == q.bias.len())
        })
}

fn matches_model<T: Scalar>(g: &Gradients<T>, model: &NetworkModel<T>) -> bool {
    g.heads.len() == model.head_count()
        && g.heads.iter().enumerate().all(|(h, layers)| {
            let head = model.head(h);
            layers.len() == head.len()
                && layers
                    .iter()
                    .zip(head)
                    .all(|(gl, l)| gl.weights.dim() == l.weights().dim() && gl.bias.len() == l.bias().len())
        })
}

/// One bias-corrected Adam update of `model` with learning rate `lr`.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    model: &mut NetworkModel<T>,
    grads: &Gradients<T>,
    lr: T,
) -> Result<()> {
    if !same_shape(&state.first, grads) || !matches_model(grads, model) {
        return Err(Error::DimensionMismatch("optimizer state, gradients and model differ in shape".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (lit::<T>(BETA1), lit::<T>(BETA2), lit::<T>(EPSILON));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let one = T::one();
    let update = |p: &mut T, g: &T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (one - b1) * *g;
        *v = b2 * *v + (one - b2) * *g * *g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (h, layers) in model.heads_mut().iter_mut().enumerate() {
        for (l, layer) in layers.iter_mut().enumerate() {
            let g = &grads.heads[h][l];
            let m = &mut state.first.heads[h][l];
            let v = &mut state.second.heads[h][l];
            step2(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights, update);
            step1(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, update);
        }
    }
    model.bump_version();
    Ok(())
}

fn step2<T: Scalar>(
    p: &mut Array2<T>,
    g: &Array2<T>,
    m: &mut Array2<T>,
    v: &mut Array2<T>,
    f: impl Fn(&mut T, &T, &mut T, &mut T),
) {
    Zip::from(p).and(g).and(m).and(v).for_each(|p, g, m, v| f(p, g, m, v));
}

fn step1<T: Scalar>(
    p: &mut Array1<T>,
    g: &Array1<T>,
    m: &mut Array1<T>,
    v: &mut Array1<T>,
    f: impl Fn(&mut T, &T, &mut T, &mut T),
) {
    Zip::from(p).and(g).and(m).and(v).for_each(|p, g, m, v| f(p, g, m, v));
}
