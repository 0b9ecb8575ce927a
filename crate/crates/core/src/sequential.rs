//! Standalone single-MLP baseline.
//!
//! This is both the "train one model at a time" timing strategy and the
//! correctness oracle for the fused bank: its forward/backward reduce in
//! the same ascending order as the bank kernels, so a bank slice and its
//! extracted twin agree bit-for-bit within one precision.

use crate::error::{Error, Result};
use crate::ops::{matmul_n, matmul_t, matmul_ta, Activation};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One two-layer MLP: `y = f(x·W1ᵀ + b1)·W2ᵀ + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialMlp<T> {
    w1: Tensor<T>, // [hidden, in]
    w2: Tensor<T>, // [out, hidden]
    b1: Option<Tensor<T>>,
    b2: Option<Tensor<T>>,
    activation: Activation,
}

/// Freshly drawn parameters for one model, in draw order.
pub(crate) struct InitParams<T> {
    pub w1: Vec<T>,
    pub w2: Vec<T>,
    pub b1: Option<Vec<T>>,
    pub b2: Option<Vec<T>>,
}

/// Draws one model's parameters from `rng`: W1 row-major, then W2
/// row-major, then the biases. Uniform `±1/√fan_in` per layer, with
/// `fan_in = in_dim` for the first layer and `hidden` for the second.
/// The bank builder uses this same routine, so fused and standalone models
/// built from the same per-model seed share bits.
pub(crate) fn init_layer_params<T: Scalar>(
    rng: &mut SplitMix64,
    hidden: usize,
    in_dim: usize,
    out_dim: usize,
    biases: bool,
) -> InitParams<T> {
    let bound1 = 1.0 / (in_dim as f64).sqrt();
    let bound2 = 1.0 / (hidden as f64).sqrt();
    let w1 = (0..hidden * in_dim)
        .map(|_| T::from_f64(rng.uniform(-bound1, bound1)))
        .collect();
    let w2 = (0..out_dim * hidden)
        .map(|_| T::from_f64(rng.uniform(-bound2, bound2)))
        .collect();
    let (b1, b2) = if biases {
        (
            Some(
                (0..hidden)
                    .map(|_| T::from_f64(rng.uniform(-bound1, bound1)))
                    .collect(),
            ),
            Some(
                (0..out_dim)
                    .map(|_| T::from_f64(rng.uniform(-bound2, bound2)))
                    .collect(),
            ),
        )
    } else {
        (None, None)
    };
    InitParams { w1, w2, b1, b2 }
}

/// Saved forward intermediates.
#[derive(Debug, Clone)]
pub struct SeqCache<T> {
    x: Tensor<T>,
    h: Tensor<T>,
    h_act: Tensor<T>,
}

/// Parameter gradients of one model.
#[derive(Debug, Clone)]
pub struct SeqGradients<T> {
    pub d_w1: Tensor<T>,
    pub d_w2: Tensor<T>,
    pub d_b1: Option<Tensor<T>>,
    pub d_b2: Option<Tensor<T>>,
}

impl<T: Scalar> SequentialMlp<T> {
    /// Builds a model from a seeded stream.
    pub fn build(
        hidden: usize,
        activation: Activation,
        in_dim: usize,
        out_dim: usize,
        seed: u64,
        biases: bool,
    ) -> Result<Self> {
        if hidden == 0 || in_dim == 0 || out_dim == 0 {
            return Err(Error::Build(format!(
                "dimensions must be >= 1: hidden {hidden}, in {in_dim}, out {out_dim}"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let params = init_layer_params::<T>(&mut rng, hidden, in_dim, out_dim, biases);
        let w1 = Tensor::new(vec![hidden, in_dim], params.w1)?;
        let w2 = Tensor::new(vec![out_dim, hidden], params.w2)?;
        let b1 = params.b1.map(|d| Tensor::new(vec![hidden], d)).transpose()?;
        let b2 = params
            .b2
            .map(|d| Tensor::new(vec![out_dim], d))
            .transpose()?;
        Self::from_parts(w1, w2, b1, b2, activation)
    }

    /// Assembles a model from existing tensors, validating shapes.
    pub fn from_parts(
        w1: Tensor<T>,
        w2: Tensor<T>,
        b1: Option<Tensor<T>>,
        b2: Option<Tensor<T>>,
        activation: Activation,
    ) -> Result<Self> {
        if w1.rank() != 2 || w2.rank() != 2 || w2.extent(1) != w1.extent(0) {
            return Err(Error::DimMismatch {
                op: "mlp_from_parts",
                lhs: w1.shape().to_vec(),
                rhs: w2.shape().to_vec(),
            });
        }
        if let Some(b1) = &b1 {
            if b1.shape() != [w1.extent(0)] {
                return Err(Error::DimMismatch {
                    op: "mlp_from_parts",
                    lhs: b1.shape().to_vec(),
                    rhs: vec![w1.extent(0)],
                });
            }
        }
        if let Some(b2) = &b2 {
            if b2.shape() != [w2.extent(0)] {
                return Err(Error::DimMismatch {
                    op: "mlp_from_parts",
                    lhs: b2.shape().to_vec(),
                    rhs: vec![w2.extent(0)],
                });
            }
        }
        Ok(Self {
            w1,
            w2,
            b1,
            b2,
            activation,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.extent(0)
    }
    pub fn in_dim(&self) -> usize {
        self.w1.extent(1)
    }
    pub fn out_dim(&self) -> usize {
        self.w2.extent(0)
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn w1(&self) -> &Tensor<T> {
        &self.w1
    }
    pub fn w2(&self) -> &Tensor<T> {
        &self.w2
    }
    pub fn b1(&self) -> Option<&Tensor<T>> {
        self.b1.as_ref()
    }
    pub fn b2(&self) -> Option<&Tensor<T>> {
        self.b2.as_ref()
    }
    pub fn w1_mut(&mut self) -> &mut Tensor<T> {
        &mut self.w1
    }
    pub fn w2_mut(&mut self) -> &mut Tensor<T> {
        &mut self.w2
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, SeqCache<T>)> {
        if x.rank() != 2 || x.extent(1) != self.in_dim() {
            return Err(Error::DimMismatch {
                op: "mlp_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![x.extent(0), self.in_dim()],
            });
        }
        let mut h = matmul_t(x, &self.w1)?;
        if let Some(b1) = &self.b1 {
            add_row_bias(&mut h, b1);
        }
        let mut h_act = h.clone();
        for v in h_act.data_mut() {
            *v = self.activation.apply(*v);
        }
        let mut y = matmul_t(&h_act, &self.w2)?;
        if let Some(b2) = &self.b2 {
            add_row_bias(&mut y, b2);
        }
        Ok((
            y,
            SeqCache {
                x: x.clone(),
                h,
                h_act,
            },
        ))
    }

    pub fn backward(&self, cache: &SeqCache<T>, d_y: &Tensor<T>) -> Result<SeqGradients<T>> {
        let batch = cache.x.extent(0);
        if cache.h.shape() != [batch, self.hidden_dim()] || cache.x.extent(1) != self.in_dim() {
            return Err(Error::State(format!(
                "forward cache (x {:?}, h {:?}) does not match model (in {}, hidden {})",
                cache.x.shape(),
                cache.h.shape(),
                self.in_dim(),
                self.hidden_dim()
            )));
        }
        if d_y.shape() != [batch, self.out_dim()] {
            return Err(Error::DimMismatch {
                op: "mlp_backward",
                lhs: d_y.shape().to_vec(),
                rhs: vec![batch, self.out_dim()],
            });
        }
        // d_w2[o,h] = Σ_b d_y[b,o] · h_act[b,h]
        let d_w2 = matmul_ta(d_y, &cache.h_act)?;
        // d_hact[b,h] = Σ_o d_y[b,o] · w2[o,h]
        let mut d_h = matmul_n(d_y, &self.w2)?;
        // d_h = d_hact ⊙ f'(h), derivative evaluated against the saved
        // activations exactly like the bank's segment backward.
        for ((g, &pre), &post) in d_h
            .data_mut()
            .iter_mut()
            .zip(cache.h.data().iter())
            .zip(cache.h_act.data().iter())
        {
            *g *= self.activation.grad_with_output(pre, post);
        }
        // d_w1[h,i] = Σ_b d_h[b,h] · x[b,i]
        let d_w1 = matmul_ta(&d_h, &cache.x)?;
        let d_b1 = match &self.b1 {
            Some(_) => Some(column_sums(&d_h)?),
            None => None,
        };
        let d_b2 = match &self.b2 {
            Some(_) => Some(column_sums(d_y)?),
            None => None,
        };
        Ok(SeqGradients {
            d_w1,
            d_w2,
            d_b1,
            d_b2,
        })
    }

    pub fn apply_sgd(&mut self, grads: &SeqGradients<T>, lr: T) -> Result<()> {
        sgd_step(&mut self.w1, &grads.d_w1, lr)?;
        sgd_step(&mut self.w2, &grads.d_w2, lr)?;
        match (&mut self.b1, &grads.d_b1) {
            (Some(b), Some(g)) => sgd_step(b, g, lr)?,
            (None, None) => {}
            _ => return Err(Error::State("bias gradients do not match model".into())),
        }
        match (&mut self.b2, &grads.d_b2) {
            (Some(b), Some(g)) => sgd_step(b, g, lr)?,
            (None, None) => {}
            _ => return Err(Error::State("bias gradients do not match model".into())),
        }
        Ok(())
    }
}

/// In-place `p -= lr · g`.
pub fn sgd_step<T: Scalar>(params: &mut Tensor<T>, grads: &Tensor<T>, lr: T) -> Result<()> {
    if params.shape() != grads.shape() {
        return Err(Error::DimMismatch {
            op: "sgd_step",
            lhs: params.shape().to_vec(),
            rhs: grads.shape().to_vec(),
        });
    }
    for (p, &g) in params.data_mut().iter_mut().zip(grads.data().iter()) {
        *p -= lr * g;
    }
    Ok(())
}

fn add_row_bias<T: Scalar>(t: &mut Tensor<T>, bias: &Tensor<T>) {
    let cols = t.extent(1);
    debug_assert_eq!(bias.len(), cols);
    let bd = bias.data();
    for row in t.data_mut().chunks_mut(cols) {
        for (v, &b) in row.iter_mut().zip(bd.iter()) {
            *v += b;
        }
    }
}

fn column_sums<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = (t.extent(0), t.extent(1));
    let mut out = Tensor::zeros(vec![cols])?;
    let td = t.data();
    let od = out.data_mut();
    for r in 0..rows {
        let row = &td[r * cols..(r + 1) * cols];
        for (o, &v) in od.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
    Ok(out)
}
