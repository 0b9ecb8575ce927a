//! The fused model bank: N independent single-hidden-layer MLPs stored as
//! one parameter set.
//!
//! Fusion layout: input width is shared, hidden widths are concatenated
//! (`hidden_total = Σ hidden_m`), and the fused output count is
//! `n_models · out_dim`. Each hidden column belongs to exactly one model,
//! recorded in the `owner` vector — the compact form of the index tensor
//! that drives the scatter-add; it is expanded to full rank only when the
//! materializing forward path asks for it.
//!
//! Two hidden-to-output realizations are provided and must agree
//! bit-for-bit:
//!
//! - [`ForwardPath::Materialized`] follows the four-step recipe literally:
//!   hidden matmul, segment activation, broadcast multiply into
//!   `S[batch, out, hidden_total]`, scatter-add into per-model outputs.
//! - [`ForwardPath::Fused`] reduces each model's hidden slice directly and
//!   never materializes `S`. This is the path that keeps memory flat when
//!   `hidden_total` reaches the hundreds of thousands.
//!
//! Both paths reduce every output cell in ascending hidden order, which is
//! also the order the standalone baseline uses, so fused-vs-sequential
//! equivalence holds to the last bit within one precision.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::{
    broadcast_mul, matmul_t, matmul_ta, scatter_add, scatter_add_backward,
    segment_activate_backward, segment_activate_rows, validate_segments, Activation, Segment,
};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::sequential::{init_layer_params, SequentialMlp};
use crate::tensor::Tensor;

const PAR_MIN_ELEMS: usize = 1 << 15;
const GRAD_CHUNK: usize = 2048;

/// (d_w1, d_w2, d_b1) as produced by one backward realization.
type WeightGrads<T> = (Tensor<T>, Tensor<T>, Option<Tensor<T>>);

/// Architecture of one internal model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub hidden: usize,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(hidden: usize, activation: Activation) -> Self {
        Self { hidden, activation }
    }
}

/// Builds the spec list for a (widths × activations × repeats) grid.
///
/// Ordering is fixed and documented: repeats outermost, then activations in
/// the given order, then widths in the given order, so model id
/// `r·|A|·|W| + a·|W| + w` identifies (repeat, activation, width).
pub fn grid_specs(
    widths: &[usize],
    activations: &[Activation],
    repeats: usize,
) -> Result<Vec<ModelSpec>> {
    if widths.is_empty() || activations.is_empty() || repeats == 0 {
        return Err(Error::Build(
            "grid_specs: widths, activations and repeats must all be non-empty".into(),
        ));
    }
    if widths.contains(&0) {
        return Err(Error::Build("grid_specs: zero hidden width".into()));
    }
    let mut specs = Vec::with_capacity(widths.len() * activations.len() * repeats);
    for _ in 0..repeats {
        for &act in activations {
            for &w in widths {
                specs.push(ModelSpec::new(w, act));
            }
        }
    }
    Ok(specs)
}

/// Fused layout: who owns which hidden column, where each model's slice
/// lives, and the maximal same-activation runs.
#[derive(Debug, Clone, PartialEq)]
pub struct BankLayout {
    n_models: usize,
    in_dim: usize,
    out_dim: usize,
    hidden_total: usize,
    owner: Vec<u32>,
    segments: Vec<Segment>,
    model_slices: Vec<(usize, usize)>,
    activations: Vec<Activation>,
}

impl BankLayout {
    pub fn build(specs: &[ModelSpec], in_dim: usize, out_dim: usize) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Build("bank needs at least one model spec".into()));
        }
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Build(format!(
                "in_dim and out_dim must be >= 1, got {in_dim} and {out_dim}"
            )));
        }
        if specs.len() > u32::MAX as usize {
            return Err(Error::Build("more than u32::MAX models".into()));
        }

        let mut owner = Vec::new();
        let mut model_slices = Vec::with_capacity(specs.len());
        let mut segments: Vec<Segment> = Vec::new();
        let mut cursor = 0usize;
        for (m, spec) in specs.iter().enumerate() {
            if spec.hidden == 0 {
                return Err(Error::Build(format!("model {m} has zero hidden width")));
            }
            let start = cursor;
            cursor = cursor
                .checked_add(spec.hidden)
                .ok_or_else(|| Error::Build("hidden_total overflows usize".into()))?;
            owner.resize(cursor, m as u32);
            model_slices.push((start, cursor));
            // Adjacent models sharing an activation merge into one run.
            match segments.last_mut() {
                Some(last) if last.activation == spec.activation => last.end = cursor,
                _ => segments.push(Segment {
                    start,
                    end: cursor,
                    activation: spec.activation,
                }),
            }
        }
        let layout = Self {
            n_models: specs.len(),
            in_dim,
            out_dim,
            hidden_total: cursor,
            owner,
            segments,
            model_slices,
            activations: specs.iter().map(|s| s.activation).collect(),
        };
        layout.check_invariants()?;
        Ok(layout)
    }

    fn check_invariants(&self) -> Result<()> {
        validate_segments(&self.segments, self.hidden_total)?;
        if self.owner.len() != self.hidden_total {
            return Err(Error::Layout("owner length != hidden_total".into()));
        }
        if self.owner.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Layout("owner vector is not non-decreasing".into()));
        }
        for (m, &(s, e)) in self.model_slices.iter().enumerate() {
            if e <= s || self.owner[s..e].iter().any(|&o| o as usize != m) {
                return Err(Error::Layout(format!("model {m} slice is not contiguous")));
            }
            let act = self.activations[m];
            let covered = self
                .segments
                .iter()
                .any(|seg| seg.start <= s && e <= seg.end && seg.activation == act);
            if !covered {
                return Err(Error::Layout(format!(
                    "model {m} is not covered by a single-activation segment"
                )));
            }
        }
        Ok(())
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
    pub fn hidden_total(&self) -> usize {
        self.hidden_total
    }
    pub fn owner(&self) -> &[u32] {
        &self.owner
    }
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }
    pub fn model_slice(&self, m: usize) -> (usize, usize) {
        self.model_slices[m]
    }
    pub fn model_activation(&self, m: usize) -> Activation {
        self.activations[m]
    }
    pub fn fused_output_count(&self) -> usize {
        self.n_models * self.out_dim
    }

    /// Expands the owner vector to the `[batch, out, hidden_total]` index
    /// tensor the materializing path scatters with.
    pub fn expand_index(&self, batch: usize) -> Result<Tensor<u32>> {
        let h = self.hidden_total;
        let rows = batch * self.out_dim;
        let mut data = Vec::with_capacity(rows * h);
        for _ in 0..rows {
            data.extend_from_slice(&self.owner);
        }
        Tensor::new(vec![batch, self.out_dim, h], data)
    }

    /// Bytes for parameters plus one gradient set at the given precision.
    pub fn param_bytes(&self, elem_size: usize, biases: bool) -> usize {
        let mut n = self.hidden_total * self.in_dim + self.out_dim * self.hidden_total;
        if biases {
            n += self.hidden_total + self.n_models * self.out_dim;
        }
        2 * n * elem_size
    }

    /// Bytes for the per-batch activations and cotangents of one
    /// forward/backward step on the given path.
    pub fn step_bytes(&self, batch: usize, elem_size: usize, path: ForwardPath) -> usize {
        let hidden = 4 * batch * self.hidden_total; // h, h_act, d_h, d_hact
        let outputs = 2 * batch * self.fused_output_count(); // y, d_y
        let materialized = match path {
            ForwardPath::Fused => 0,
            // s, d_s and the expanded u32 index
            ForwardPath::Materialized => {
                2 * batch * self.out_dim * self.hidden_total
                    + batch * self.out_dim * self.hidden_total * std::mem::size_of::<u32>()
                        / elem_size.max(1)
            }
        };
        (hidden + outputs + materialized) * elem_size
    }
}

/// Initialization settings. Model `m` draws from a stream seeded with
/// `seed ^ m`, so it equals a standalone model built with that seed.
#[derive(Debug, Clone, Copy, Default)]
pub struct InitConfig {
    pub seed: u64,
    pub biases: bool,
}

/// Which hidden-to-output realization to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardPath {
    /// Reduce each model's hidden slice directly; nothing materialized.
    Fused,
    /// Broadcast multiply into `S[batch, out, hidden_total]`, then
    /// scatter-add. The reference realization.
    Materialized,
}

/// The fused parameter set.
#[derive(Debug, Clone)]
pub struct FusedBank<T> {
    layout: BankLayout,
    w1: Tensor<T>,
    w2: Tensor<T>,
    b1: Option<Tensor<T>>,
    b2: Option<Tensor<T>>,
}

/// Intermediates saved by the forward pass for the backward pass.
///
/// The hidden tensors live in transposed `[hidden_total, batch]` layout:
/// one row per hidden unit, so model slices and activation segments are
/// contiguous *row ranges* and every kernel walks contiguous memory.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    x: Tensor<T>,
    h_t: Tensor<T>,
    h_act_t: Tensor<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.x.extent(0)
    }
}

/// Gradients of the fused parameters.
#[derive(Debug, Clone)]
pub struct BankGradients<T> {
    pub d_w1: Tensor<T>,
    pub d_w2: Tensor<T>,
    pub d_b1: Option<Tensor<T>>,
    pub d_b2: Option<Tensor<T>>,
}

impl<T: Scalar> FusedBank<T> {
    /// Builds the bank with per-model seeded initialization: layer weights
    /// are uniform in `±1/√fan_in`, drawn per model in a fixed order.
    pub fn build(
        specs: &[ModelSpec],
        in_dim: usize,
        out_dim: usize,
        init: &InitConfig,
    ) -> Result<Self> {
        let layout = BankLayout::build(specs, in_dim, out_dim)?;
        let h_total = layout.hidden_total;
        let mut w1 = Tensor::zeros(vec![h_total, in_dim])?;
        let mut w2 = Tensor::zeros(vec![out_dim, h_total])?;
        let mut b1 = if init.biases {
            Some(Tensor::zeros(vec![h_total])?)
        } else {
            None
        };
        let mut b2 = if init.biases {
            Some(Tensor::zeros(vec![layout.n_models, out_dim])?)
        } else {
            None
        };

        for (m, spec) in specs.iter().enumerate() {
            let mut rng = SplitMix64::new(init.seed ^ m as u64);
            let (start, end) = layout.model_slices[m];
            let params =
                init_layer_params::<T>(&mut rng, spec.hidden, in_dim, out_dim, init.biases);

            // This model's W1 rows form one contiguous block.
            w1.data_mut()[start * in_dim..end * in_dim].copy_from_slice(&params.w1);
            // Its W2 columns land strided, one run per output row.
            for o in 0..out_dim {
                w2.data_mut()[o * h_total + start..o * h_total + end]
                    .copy_from_slice(&params.w2[o * spec.hidden..(o + 1) * spec.hidden]);
            }
            if let (Some(b1), Some(vals)) = (b1.as_mut(), params.b1.as_ref()) {
                b1.data_mut()[start..end].copy_from_slice(vals);
            }
            if let (Some(b2), Some(vals)) = (b2.as_mut(), params.b2.as_ref()) {
                b2.data_mut()[m * out_dim..(m + 1) * out_dim].copy_from_slice(vals);
            }
        }

        Ok(Self {
            layout,
            w1,
            w2,
            b1,
            b2,
        })
    }

    pub fn layout(&self) -> &BankLayout {
        &self.layout
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
    pub fn b1_mut(&mut self) -> Option<&mut Tensor<T>> {
        self.b1.as_mut()
    }
    pub fn b2_mut(&mut self) -> Option<&mut Tensor<T>> {
        self.b2.as_mut()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len()
            + self.w2.len()
            + self.b1.as_ref().map_or(0, Tensor::len)
            + self.b2.as_ref().map_or(0, Tensor::len)
    }

    /// Forward pass on the fused (non-materializing) path.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.forward_path(x, ForwardPath::Fused)
    }

    pub fn forward_path(
        &self,
        x: &Tensor<T>,
        path: ForwardPath,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        if x.rank() != 2 || x.extent(1) != self.layout.in_dim {
            return Err(Error::DimMismatch {
                op: "bank_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![x.extent(0), self.layout.in_dim],
            });
        }
        // h_t[h,b] = Σ_k w1[h,k]·x[b,k]: the shared matmul kernel with the
        // operands swapped streams W1 exactly once per batch.
        let mut h_t = matmul_t(&self.w1, x)?;
        if let Some(b1) = &self.b1 {
            let batch = x.extent(0);
            let bd = b1.data();
            for (h, row) in h_t.data_mut().chunks_mut(batch).enumerate() {
                let bias = bd[h];
                for v in row.iter_mut() {
                    *v += bias;
                }
            }
        }
        let h_act_t = segment_activate_rows(&h_t, &self.layout.segments)?;

        let y = match path {
            ForwardPath::Fused => self.project_fused(&h_act_t)?,
            ForwardPath::Materialized => self.project_materialized(&h_act_t)?,
        };
        Ok((
            y,
            ForwardCache {
                x: x.clone(),
                h_t,
                h_act_t,
            },
        ))
    }

    /// `y[b,m,o] = Σ_{h in slice(m)} h_act[b,h] · w2[o,h] (+ b2[m,o])`,
    /// reduced in ascending `h`. Internally accumulates into a
    /// `[n_models·out, batch]` buffer so every inner loop is a contiguous
    /// scaled add, then transposes into the public `[batch, models, out]`
    /// shape.
    fn project_fused(&self, h_act_t: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = h_act_t.extent(1);
        let (n_models, out_dim, h_total) = (
            self.layout.n_models,
            self.layout.out_dim,
            self.layout.hidden_total,
        );
        let mut y_t = Tensor::zeros(vec![n_models * out_dim, batch])?;
        let hd = h_act_t.data();
        let wd = self.w2.data();
        let b2 = self.b2.as_ref().map(|t| t.data());
        let slices = &self.layout.model_slices;

        // One task per model: writes its own out_dim rows of y_t. The
        // hidden loop is outermost and groups of four hidden rows share one
        // pass over the output row; the four adds stay in ascending hidden
        // order within each cell, so the result is bit-identical to the
        // plain loop while the loop setup amortizes.
        let fill = |m: usize, yrows: &mut [T]| {
            let (s, e) = slices[m];
            let mut yrow_refs: Vec<&mut [T]> = yrows.chunks_mut(batch).collect();
            let mut h = s;
            while h + 4 <= e {
                let h0 = &hd[h * batch..(h + 1) * batch];
                let h1 = &hd[(h + 1) * batch..(h + 2) * batch];
                let h2 = &hd[(h + 2) * batch..(h + 3) * batch];
                let h3 = &hd[(h + 3) * batch..(h + 4) * batch];
                for (o, yrow) in yrow_refs.iter_mut().enumerate() {
                    let w0 = wd[o * h_total + h];
                    let w1 = wd[o * h_total + h + 1];
                    let w2 = wd[o * h_total + h + 2];
                    let w3 = wd[o * h_total + h + 3];
                    for (b, yv) in yrow.iter_mut().enumerate() {
                        let mut acc = *yv;
                        acc += w0 * h0[b];
                        acc += w1 * h1[b];
                        acc += w2 * h2[b];
                        acc += w3 * h3[b];
                        *yv = acc;
                    }
                }
                h += 4;
            }
            while h < e {
                let hrow = &hd[h * batch..(h + 1) * batch];
                for (o, yrow) in yrow_refs.iter_mut().enumerate() {
                    let wv = wd[o * h_total + h];
                    for (yv, &hv) in yrow.iter_mut().zip(hrow.iter()) {
                        *yv += wv * hv;
                    }
                }
                h += 1;
            }
            if let Some(b2) = b2 {
                for (o, yrow) in yrow_refs.iter_mut().enumerate() {
                    let bias = b2[m * out_dim + o];
                    for yv in yrow.iter_mut() {
                        *yv += bias;
                    }
                }
            }
        };

        if batch * h_total * out_dim < PAR_MIN_ELEMS {
            for (m, yrows) in y_t.data_mut().chunks_mut(out_dim * batch).enumerate() {
                fill(m, yrows);
            }
        } else {
            y_t.data_mut()
                .par_chunks_mut(out_dim * batch)
                .enumerate()
                .for_each(|(m, yrows)| fill(m, yrows));
        }
        y_t.transpose2()?.into_shape(vec![batch, n_models, out_dim])
    }

    /// Reference realization: broadcast multiply, scatter-add, transpose.
    fn project_materialized(&self, h_act_t: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = h_act_t.extent(1);
        let (n_models, out_dim, h_total) = (
            self.layout.n_models,
            self.layout.out_dim,
            self.layout.hidden_total,
        );
        let h_act = h_act_t.transpose2()?; // [batch, hidden_total]
        let hp = h_act.into_shape(vec![batch, 1, h_total])?;
        let w2b = self.w2.clone().into_shape(vec![1, out_dim, h_total])?;
        let s = broadcast_mul(&hp, &w2b)?;
        let index = self.layout.expand_index(batch)?;
        let r = scatter_add(2, &s, &index, n_models)?; // [batch, out, n_models]
        let mut y = r.swap_axes_12()?; // [batch, n_models, out]
        if let Some(b2) = &self.b2 {
            let bd = b2.data();
            let row_len = n_models * out_dim;
            for yrow in y.data_mut().chunks_mut(row_len) {
                for (v, &bias) in yrow.iter_mut().zip(bd.iter()) {
                    *v += bias;
                }
            }
        }
        Ok(y)
    }

    /// Backward pass on the fused path.
    pub fn backward(&self, cache: &ForwardCache<T>, d_y: &Tensor<T>) -> Result<BankGradients<T>> {
        self.backward_path(cache, d_y, ForwardPath::Fused)
    }

    pub fn backward_path(
        &self,
        cache: &ForwardCache<T>,
        d_y: &Tensor<T>,
        path: ForwardPath,
    ) -> Result<BankGradients<T>> {
        let batch = cache.x.extent(0);
        let (n_models, out_dim, h_total) = (
            self.layout.n_models,
            self.layout.out_dim,
            self.layout.hidden_total,
        );
        if cache.h_t.shape() != [h_total, batch] || cache.x.extent(1) != self.layout.in_dim {
            return Err(Error::State(format!(
                "forward cache (x {:?}, h {:?}) does not match bank (in {}, hidden {})",
                cache.x.shape(),
                cache.h_t.shape(),
                self.layout.in_dim,
                h_total
            )));
        }
        if d_y.shape() != [batch, n_models, out_dim] {
            return Err(Error::DimMismatch {
                op: "bank_backward",
                lhs: d_y.shape().to_vec(),
                rhs: vec![batch, n_models, out_dim],
            });
        }

        let (d_w1, d_w2, d_b1) = match path {
            ForwardPath::Fused => self.grads_fused(cache, d_y)?,
            ForwardPath::Materialized => self.grads_materialized(cache, d_y)?,
        };

        let d_b2 = match &self.b2 {
            Some(_) => {
                // d_b2[m,o] = Σ_b d_y[b,m,o], ascending b.
                let mut acc = Tensor::zeros(vec![n_models, out_dim])?;
                let dd = d_y.data();
                let row_len = n_models * out_dim;
                for b in 0..batch {
                    let drow = &dd[b * row_len..(b + 1) * row_len];
                    for (a, &v) in acc.data_mut().iter_mut().zip(drow.iter()) {
                        *a += v;
                    }
                }
                Some(acc)
            }
            None => None,
        };

        Ok(BankGradients {
            d_w1,
            d_w2,
            d_b1,
            d_b2,
        })
    }

    /// Fused-path weight gradients in one blocked sweep over hidden rows.
    ///
    /// For each hidden unit `h` (owned by model `m = owner[h]`):
    /// `d_w2[o,h] = Σ_b d_y[b,m,o]·h_act[b,h]` (ascending b),
    /// `d_hact[b]  = Σ_o d_y[b,m,o]·w2[o,h]` (ascending o),
    /// `d_h[b]    = d_hact[b]·f'(pre)` against the saved activation,
    /// `d_w1[h,k] = Σ_b d_h[b]·x[b,k]` (ascending b),
    /// `d_b1[h]   = Σ_b d_h[b]` (ascending b).
    ///
    /// The cotangent is first transposed to `[models·out, batch]` rows so
    /// every read is contiguous; `d_h` never materializes beyond one row.
    fn grads_fused(&self, cache: &ForwardCache<T>, d_y: &Tensor<T>) -> Result<WeightGrads<T>> {
        let batch = cache.x.extent(0);
        let (n_models, out_dim, h_total, in_dim) = (
            self.layout.n_models,
            self.layout.out_dim,
            self.layout.hidden_total,
            self.layout.in_dim,
        );
        let d_y_t = d_y
            .clone()
            .into_shape(vec![batch, n_models * out_dim])?
            .transpose2()?; // [models·out, batch]

        let owner = &self.layout.owner;
        let acts = &self.layout.activations;
        let hd = cache.h_t.data();
        let ad = cache.h_act_t.data();
        let xd = cache.x.data();
        let wd = self.w2.data();
        let dyd = d_y_t.data();

        let mut d_w1 = Tensor::zeros(vec![h_total, in_dim])?;
        let mut d_w2_t = Tensor::zeros(vec![h_total, out_dim])?;
        let mut d_b1 = match &self.b1 {
            Some(_) => Some(Tensor::zeros(vec![h_total])?),
            None => None,
        };

        let sweep = |h0: usize, w1_chunk: &mut [T], w2_chunk: &mut [T], b1_chunk: &mut [T]| {
            let rows = w1_chunk.len() / in_dim;
            let mut d_h = vec![T::ZERO; batch];
            for r in 0..rows {
                let h = h0 + r;
                let m = owner[h] as usize;
                let act = acts[m];
                let pre = &hd[h * batch..(h + 1) * batch];
                let post = &ad[h * batch..(h + 1) * batch];

                // d_w2 row and d_hact row from the same cotangent rows.
                // The reduction chain and the lane-wise update are kept in
                // separate loops so the latter vectorizes.
                for v in d_h.iter_mut() {
                    *v = T::ZERO;
                }
                for o in 0..out_dim {
                    let dyrow = &dyd[(m * out_dim + o) * batch..(m * out_dim + o + 1) * batch];
                    let wv = wd[o * h_total + h];
                    let mut acc = T::ZERO;
                    for (&dv, &pv) in dyrow.iter().zip(post.iter()) {
                        acc += dv * pv;
                    }
                    w2_chunk[r * out_dim + o] = acc;
                    for (g, &dv) in d_h.iter_mut().zip(dyrow.iter()) {
                        *g += dv * wv;
                    }
                }
                // Through the activation.
                for (v, (&p, &q)) in d_h.iter_mut().zip(pre.iter().zip(post.iter())) {
                    *v *= act.grad_with_output(p, q);
                }
                if !b1_chunk.is_empty() {
                    let mut acc = T::ZERO;
                    for &v in &d_h {
                        acc += v;
                    }
                    b1_chunk[r] = acc;
                }
                // d_w1 row: ascending b, contiguous x rows.
                let w1_row = &mut w1_chunk[r * in_dim..(r + 1) * in_dim];
                for (b, &dv) in d_h.iter().enumerate() {
                    let xrow = &xd[b * in_dim..(b + 1) * in_dim];
                    for (g, &xv) in w1_row.iter_mut().zip(xrow.iter()) {
                        *g += dv * xv;
                    }
                }
            }
        };

        let chunks1 = d_w1.data_mut().chunks_mut(GRAD_CHUNK * in_dim);
        let chunks2 = d_w2_t.data_mut().chunks_mut(GRAD_CHUNK * out_dim);
        let mut empty: [T; 0] = [];
        if batch * h_total < PAR_MIN_ELEMS {
            match &mut d_b1 {
                Some(b1) => {
                    for ((ci, c1), (c2, cb)) in chunks1
                        .enumerate()
                        .zip(chunks2.zip(b1.data_mut().chunks_mut(GRAD_CHUNK)))
                    {
                        sweep(ci * GRAD_CHUNK, c1, c2, cb);
                    }
                }
                None => {
                    for ((ci, c1), c2) in chunks1.enumerate().zip(chunks2) {
                        sweep(ci * GRAD_CHUNK, c1, c2, &mut empty);
                    }
                }
            }
        } else {
            let chunks1 = d_w1.data_mut().par_chunks_mut(GRAD_CHUNK * in_dim);
            let chunks2 = d_w2_t.data_mut().par_chunks_mut(GRAD_CHUNK * out_dim);
            match &mut d_b1 {
                Some(b1) => {
                    chunks1
                        .zip(chunks2.zip(b1.data_mut().par_chunks_mut(GRAD_CHUNK)))
                        .enumerate()
                        .for_each(|(ci, (c1, (c2, cb)))| sweep(ci * GRAD_CHUNK, c1, c2, cb));
                }
                None => {
                    chunks1
                        .zip(chunks2)
                        .enumerate()
                        .for_each(|(ci, (c1, c2))| {
                            let mut none: [T; 0] = [];
                            sweep(ci * GRAD_CHUNK, c1, c2, &mut none);
                        });
                }
            }
        }

        Ok((d_w1, d_w2_t.transpose2()?, d_b1))
    }

    /// Materialized-path gradients: gather `dS` through the scatter's
    /// backward, contract it the same way the forward contracted `S`, then
    /// finish through the batch-major segment backward and matmul kernels.
    fn grads_materialized(
        &self,
        cache: &ForwardCache<T>,
        d_y: &Tensor<T>,
    ) -> Result<WeightGrads<T>> {
        let batch = cache.x.extent(0);
        let (out_dim, h_total) = (self.layout.out_dim, self.layout.hidden_total);
        let d_r = d_y.swap_axes_12()?; // [batch, out, n_models]
        let index = self.layout.expand_index(batch)?;
        let d_s = scatter_add_backward(2, &d_r, &index)?; // [batch, out, hidden]

        let h = cache.h_t.transpose2()?; // [batch, hidden]
        let h_act = cache.h_act_t.transpose2()?;
        let hd = h_act.data();
        let sd = d_s.data();
        let wd = self.w2.data();

        // d_w2[o,h] = Σ_b d_s[b,o,h] · h_act[b,h]
        let mut d_w2 = Tensor::zeros(vec![out_dim, h_total])?;
        for o in 0..out_dim {
            let row = &mut d_w2.data_mut()[o * h_total..(o + 1) * h_total];
            for b in 0..batch {
                let srow = &sd[(b * out_dim + o) * h_total..(b * out_dim + o + 1) * h_total];
                let hrow = &hd[b * h_total..(b + 1) * h_total];
                for h in 0..h_total {
                    row[h] += srow[h] * hrow[h];
                }
            }
        }

        // d_hact[b,h] = Σ_o d_s[b,o,h] · w2[o,h]
        let mut d_hact = Tensor::zeros(vec![batch, h_total])?;
        for b in 0..batch {
            let grow = &mut d_hact.data_mut()[b * h_total..(b + 1) * h_total];
            for hh in 0..h_total {
                let mut acc = T::ZERO;
                for o in 0..out_dim {
                    acc += sd[(b * out_dim + o) * h_total + hh] * wd[o * h_total + hh];
                }
                grow[hh] = acc;
            }
        }

        let d_h = segment_activate_backward(&d_hact, &h, &h_act, &self.layout.segments)?;
        let d_w1 = matmul_ta(&d_h, &cache.x)?;
        let d_b1 = match &self.b1 {
            Some(_) => Some(column_sums(&d_h)?),
            None => None,
        };
        Ok((d_w1, d_w2, d_b1))
    }

    /// `p -= lr · g` over every fused parameter.
    pub fn apply_sgd(&mut self, grads: &BankGradients<T>, lr: T) -> Result<()> {
        sgd_update("bank_sgd", &mut self.w1, &grads.d_w1, lr)?;
        sgd_update("bank_sgd", &mut self.w2, &grads.d_w2, lr)?;
        match (&mut self.b1, &grads.d_b1) {
            (Some(b1), Some(g)) => sgd_update("bank_sgd", b1, g, lr)?,
            (None, None) => {}
            _ => {
                return Err(Error::State(
                    "bias gradients do not match bank biases".into(),
                ))
            }
        }
        match (&mut self.b2, &grads.d_b2) {
            (Some(b2), Some(g)) => sgd_update("bank_sgd", b2, g, lr)?,
            (None, None) => {}
            _ => {
                return Err(Error::State(
                    "bias gradients do not match bank biases".into(),
                ))
            }
        }
        Ok(())
    }

    /// Copies model `model_id` out of the bank as a standalone MLP.
    pub fn extract(&self, model_id: usize) -> Result<SequentialMlp<T>> {
        let n = self.layout.n_models;
        if model_id >= n {
            return Err(Error::IndexOutOfRange {
                op: "bank_extract",
                index: model_id,
                extent: n,
                pos: vec![model_id],
            });
        }
        let (s, e) = self.layout.model_slices[model_id];
        let hidden = e - s;
        let (in_dim, out_dim, h_total) = (
            self.layout.in_dim,
            self.layout.out_dim,
            self.layout.hidden_total,
        );

        let w1 = Tensor::new(
            vec![hidden, in_dim],
            self.w1.data()[s * in_dim..e * in_dim].to_vec(),
        )?;
        let mut w2_data = Vec::with_capacity(out_dim * hidden);
        for o in 0..out_dim {
            w2_data.extend_from_slice(&self.w2.data()[o * h_total + s..o * h_total + e]);
        }
        let w2 = Tensor::new(vec![out_dim, hidden], w2_data)?;
        let b1 = match &self.b1 {
            Some(b1) => Some(Tensor::new(vec![hidden], b1.data()[s..e].to_vec())?),
            None => None,
        };
        let b2 = match &self.b2 {
            Some(b2) => Some(Tensor::new(
                vec![out_dim],
                b2.data()[model_id * out_dim..(model_id + 1) * out_dim].to_vec(),
            )?),
            None => None,
        };
        SequentialMlp::from_parts(w1, w2, b1, b2, self.layout.activations[model_id])
    }

    /// Test hook: rewrites one owner entry to break model isolation on
    /// purpose. The verification suites use this as a negative control.
    #[doc(hidden)]
    pub fn corrupt_owner_entry(&mut self, h: usize, new_owner: u32) {
        self.layout.owner[h] = new_owner;
    }
}

/// Column sums of a rank-2 tensor, accumulated in ascending row order.
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

fn sgd_update<T: Scalar>(
    op: &'static str,
    params: &mut Tensor<T>,
    grads: &Tensor<T>,
    lr: T,
) -> Result<()> {
    if params.shape() != grads.shape() {
        return Err(Error::DimMismatch {
            op,
            lhs: params.shape().to_vec(),
            rhs: grads.shape().to_vec(),
        });
    }
    // Purely elementwise, so threading cannot change the result.
    if params.len() < PAR_MIN_ELEMS {
        for (p, &g) in params.data_mut().iter_mut().zip(grads.data().iter()) {
            *p -= lr * g;
        }
    } else {
        params
            .data_mut()
            .par_chunks_mut(GRAD_CHUNK)
            .zip(grads.data().par_chunks(GRAD_CHUNK))
            .for_each(|(ps, gs)| {
                for (p, &g) in ps.iter_mut().zip(gs.iter()) {
                    *p -= lr * g;
                }
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn sig(hidden: usize) -> ModelSpec {
        ModelSpec::new(hidden, Activation::Sigmoid)
    }

    #[test]
    fn two_model_fusion_layout() {
        let layout = BankLayout::build(&[sig(1), sig(2)], 4, 2).unwrap();
        assert_eq!(layout.hidden_total(), 3);
        assert_eq!(layout.fused_output_count(), 4);
        assert_eq!(layout.owner(), &[0, 1, 1]);
        assert_eq!(layout.model_slice(0), (0, 1));
        assert_eq!(layout.model_slice(1), (1, 3));
        // Same activation everywhere -> one maximal run.
        assert_eq!(layout.segments().len(), 1);
    }

    #[test]
    fn degenerate_single_model_layout() {
        let layout = BankLayout::build(&[ModelSpec::new(3, Activation::Identity)], 4, 2).unwrap();
        assert_eq!(layout.hidden_total(), 3);
        assert_eq!(layout.owner(), &[0, 0, 0]);
        assert_eq!(layout.fused_output_count(), 2);
    }

    #[test]
    fn full_scale_grid_is_ten_thousand_models() {
        let widths: Vec<usize> = (1..=100).collect();
        let specs = grid_specs(&widths, &Activation::ALL, 10).unwrap();
        assert_eq!(specs.len(), 10_000);
        let layout = BankLayout::build(&specs, 100, 2).unwrap();
        assert_eq!(layout.hidden_total(), 505_000);
    }

    #[test]
    fn grid_specs_ordering_and_errors() {
        let specs = grid_specs(&[3, 19, 200], &[Activation::Relu], 1).unwrap();
        assert_eq!(
            specs.iter().map(|s| s.hidden).collect::<Vec<_>>(),
            vec![3, 19, 200]
        );
        assert_eq!(grid_specs(&[1], &[Activation::Identity], 1).unwrap().len(), 1);

        // repeats outermost, then activation, then width
        let specs = grid_specs(&[1, 2], &[Activation::Relu, Activation::Tanh], 2).unwrap();
        let got: Vec<(usize, Activation)> =
            specs.iter().map(|s| (s.hidden, s.activation)).collect();
        assert_eq!(
            got,
            vec![
                (1, Activation::Relu),
                (2, Activation::Relu),
                (1, Activation::Tanh),
                (2, Activation::Tanh),
                (1, Activation::Relu),
                (2, Activation::Relu),
                (1, Activation::Tanh),
                (2, Activation::Tanh),
            ]
        );

        assert!(grid_specs(&[], &[Activation::Relu], 1).is_err());
        assert!(grid_specs(&[1], &[], 1).is_err());
        assert!(grid_specs(&[1], &[Activation::Relu], 0).is_err());
        assert!(grid_specs(&[0], &[Activation::Relu], 1).is_err());
    }

    #[test]
    fn build_rejects_bad_specs() {
        assert!(matches!(
            FusedBank::<f64>::build(&[], 4, 2, &InitConfig::default()),
            Err(Error::Build(_))
        ));
        assert!(matches!(
            FusedBank::<f64>::build(
                &[ModelSpec::new(0, Activation::Relu)],
                4,
                2,
                &InitConfig::default()
            ),
            Err(Error::Build(_))
        ));
        assert!(FusedBank::<f64>::build(&[sig(1)], 0, 2, &InitConfig::default()).is_err());
    }

    #[test]
    fn segments_merge_only_adjacent_same_activation_runs() {
        let specs = [
            ModelSpec::new(2, Activation::Relu),
            ModelSpec::new(3, Activation::Relu),
            ModelSpec::new(1, Activation::Tanh),
            ModelSpec::new(2, Activation::Relu),
        ];
        let layout = BankLayout::build(&specs, 3, 1).unwrap();
        let segs = layout.segments();
        assert_eq!(segs.len(), 3);
        assert_eq!((segs[0].start, segs[0].end), (0, 5));
        assert_eq!((segs[1].start, segs[1].end), (5, 6));
        assert_eq!((segs[2].start, segs[2].end), (6, 8));
    }

    #[test]
    fn layout_invariants_hold_for_random_spec_lists() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..200 {
            let n = 1 + (rng.next_u64() % 10) as usize;
            let specs: Vec<ModelSpec> = (0..n)
                .map(|_| {
                    let hidden = 1 + (rng.next_u64() % 8) as usize;
                    let act = Activation::ALL[(rng.next_u64() % 10) as usize];
                    ModelSpec::new(hidden, act)
                })
                .collect();
            // build() re-checks every invariant internally.
            let layout = BankLayout::build(&specs, 3, 2).unwrap();
            assert_eq!(
                layout.hidden_total(),
                specs.iter().map(|s| s.hidden).sum::<usize>()
            );
            assert_eq!(layout.fused_output_count(), specs.len() * 2);
            for (m, spec) in specs.iter().enumerate() {
                let (s, e) = layout.model_slice(m);
                assert_eq!(e - s, spec.hidden);
            }
        }
    }

    #[test]
    fn expand_index_repeats_owner_per_row() {
        let layout = BankLayout::build(&[sig(1), sig(2)], 4, 2).unwrap();
        let idx = layout.expand_index(3).unwrap();
        assert_eq!(idx.shape(), &[3, 2, 3]);
        for b in 0..3 {
            for o in 0..2 {
                for h in 0..3 {
                    assert_eq!(idx.at3(b, o, h), layout.owner()[h]);
                }
            }
        }
    }

    #[test]
    fn extract_round_trips_single_model_bank() {
        let bank = FusedBank::<f64>::build(
            &[ModelSpec::new(3, Activation::Tanh)],
            4,
            2,
            &InitConfig {
                seed: 5,
                biases: true,
            },
        )
        .unwrap();
        let model = bank.extract(0).unwrap();
        assert_eq!(model.w1(), bank.w1());
        assert_eq!(model.w2(), bank.w2());
        assert_eq!(model.b1().unwrap().data(), bank.b1().unwrap().data());
        assert_eq!(model.b2().unwrap().data(), bank.b2().unwrap().data());
        assert!(bank.extract(1).is_err());
    }

    #[test]
    fn per_model_init_matches_standalone_build() {
        let init = InitConfig {
            seed: 77,
            biases: true,
        };
        let specs = [sig(2), ModelSpec::new(4, Activation::Relu), sig(1)];
        let bank = FusedBank::<f64>::build(&specs, 5, 3, &init).unwrap();
        for (m, spec) in specs.iter().enumerate() {
            let standalone = SequentialMlp::<f64>::build(
                spec.hidden,
                spec.activation,
                5,
                3,
                init.seed ^ m as u64,
                true,
            )
            .unwrap();
            let extracted = bank.extract(m).unwrap();
            assert_eq!(extracted.w1(), standalone.w1());
            assert_eq!(extracted.w2(), standalone.w2());
            assert_eq!(extracted.b1().unwrap(), standalone.b1().unwrap());
            assert_eq!(extracted.b2().unwrap(), standalone.b2().unwrap());
        }
    }

    #[test]
    fn zero_input_gives_zero_output_for_origin_fixing_activations() {
        for act in [
            Activation::Relu,
            Activation::Tanh,
            Activation::Identity,
            Activation::Mish,
        ] {
            let bank = FusedBank::<f64>::build(
                &[ModelSpec::new(3, act), ModelSpec::new(2, act)],
                4,
                2,
                &InitConfig::default(),
            )
            .unwrap();
            let x = Tensor::zeros(vec![2, 4]).unwrap();
            let (y, _) = bank.forward(&x).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0), "{act}");
        }
    }

    #[test]
    fn hand_set_weights_match_standalone_forwards_exactly() {
        // A 4-1-2 and a 4-2-2 model fused as 4-3-4, every weight set by
        // hand, against standalone models carrying the same numbers.
        let mut bank =
            FusedBank::<f64>::build(&[sig(1), sig(2)], 4, 2, &InitConfig::default()).unwrap();
        let w1_rows = [
            [0.1, -0.2, 0.3, 0.4],   // model 0, hidden 0
            [-0.5, 0.6, 0.7, -0.8],  // model 1, hidden 0
            [0.9, -1.0, 1.1, -1.2],  // model 1, hidden 1
        ];
        for (h, row) in w1_rows.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                bank.w1_mut().set2(h, i, v);
            }
        }
        let w2_rows = [[1.5, -0.25, 0.75], [-1.25, 0.5, 2.0]];
        for (o, row) in w2_rows.iter().enumerate() {
            for (h, &v) in row.iter().enumerate() {
                bank.w2_mut().set2(o, h, v);
            }
        }

        let m0 = SequentialMlp::from_parts(
            Tensor::new(vec![1, 4], w1_rows[0].to_vec()).unwrap(),
            Tensor::new(vec![2, 1], vec![w2_rows[0][0], w2_rows[1][0]]).unwrap(),
            None,
            None,
            Activation::Sigmoid,
        )
        .unwrap();
        let m1 = SequentialMlp::from_parts(
            Tensor::new(vec![2, 4], w1_rows[1].iter().chain(&w1_rows[2]).copied().collect())
                .unwrap(),
            Tensor::new(
                vec![2, 2],
                vec![w2_rows[0][1], w2_rows[0][2], w2_rows[1][1], w2_rows[1][2]],
            )
            .unwrap(),
            None,
            None,
            Activation::Sigmoid,
        )
        .unwrap();

        let mut rng = SplitMix64::new(40);
        let x = Tensor::from_fn(vec![5, 4], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let (y, _) = bank.forward(&x).unwrap();
        let (y0, _) = m0.forward(&x).unwrap();
        let (y1, _) = m1.forward(&x).unwrap();
        for b in 0..5 {
            for o in 0..2 {
                assert_eq!(y.at3(b, 0, o), y0.at2(b, o));
                assert_eq!(y.at3(b, 1, o), y1.at2(b, o));
            }
        }
    }

    #[test]
    fn outputs_depend_only_on_own_batch_row() {
        let bank =
            FusedBank::<f64>::build(&[sig(2), sig(3)], 4, 2, &InitConfig { seed: 2, biases: true })
                .unwrap();
        let mut rng = SplitMix64::new(8);
        let x = Tensor::from_fn(vec![4, 4], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let (y, _) = bank.forward(&x).unwrap();
        let mut x2 = x.clone();
        for v in x2.row_mut(2) {
            *v += 1.0;
        }
        let (y2, _) = bank.forward(&x2).unwrap();
        for b in 0..4 {
            for m in 0..2 {
                for o in 0..2 {
                    if b == 2 {
                        continue;
                    }
                    assert_eq!(y.at3(b, m, o), y2.at3(b, m, o), "row {b} must not move");
                }
            }
        }
    }

    #[test]
    fn fused_and_materialized_paths_agree_exactly() {
        let mut rng = SplitMix64::new(12);
        for biases in [false, true] {
            let specs = [
                ModelSpec::new(2, Activation::Mish),
                ModelSpec::new(3, Activation::Relu),
                ModelSpec::new(1, Activation::Gelu),
            ];
            let bank =
                FusedBank::<f64>::build(&specs, 4, 2, &InitConfig { seed: 3, biases }).unwrap();
            let x = Tensor::from_fn(vec![5, 4], |_| rng.uniform(-1.0, 1.0)).unwrap();
            let (y_fused, cache_f) = bank.forward_path(&x, ForwardPath::Fused).unwrap();
            let (y_mat, cache_m) = bank.forward_path(&x, ForwardPath::Materialized).unwrap();
            assert_eq!(y_fused, y_mat);

            let d_y = Tensor::from_fn(vec![5, 3, 2], |_| rng.uniform(-1.0, 1.0)).unwrap();
            let g_fused = bank
                .backward_path(&cache_f, &d_y, ForwardPath::Fused)
                .unwrap();
            let g_mat = bank
                .backward_path(&cache_m, &d_y, ForwardPath::Materialized)
                .unwrap();
            assert_eq!(g_fused.d_w1, g_mat.d_w1);
            assert_eq!(g_fused.d_w2, g_mat.d_w2);
            assert_eq!(g_fused.d_b1, g_mat.d_b1);
            assert_eq!(g_fused.d_b2, g_mat.d_b2);
        }
    }

    #[test]
    fn cotangent_at_one_model_leaves_other_gradients_zero() {
        let specs = [sig(2), sig(3), sig(1)];
        let bank = FusedBank::<f64>::build(
            &specs,
            4,
            2,
            &InitConfig {
                seed: 9,
                biases: false,
            },
        )
        .unwrap();
        let mut rng = SplitMix64::new(4);
        let x = Tensor::from_fn(vec![3, 4], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let (_, cache) = bank.forward(&x).unwrap();

        let mut d_y = Tensor::<f64>::zeros(vec![3, 3, 2]).unwrap();
        for b in 0..3 {
            for o in 0..2 {
                d_y.set3(b, 1, o, 1.0);
            }
        }
        let grads = bank.backward(&cache, &d_y).unwrap();
        let (s, e) = bank.layout().model_slice(1);
        for h in 0..bank.layout().hidden_total() {
            if h >= s && h < e {
                continue;
            }
            assert!(
                grads.d_w1.row(h).iter().all(|&v| v == 0.0),
                "d_w1 row {h} should be exactly zero"
            );
            for o in 0..2 {
                assert_eq!(grads.d_w2.at2(o, h), 0.0, "d_w2[{o},{h}]");
            }
        }
    }

    #[test]
    fn backward_rejects_mismatched_cache_or_cotangent() {
        let bank = FusedBank::<f64>::build(&[sig(2)], 4, 2, &InitConfig::default()).unwrap();
        let x = Tensor::<f64>::zeros(vec![3, 4]).unwrap();
        let (_, cache) = bank.forward(&x).unwrap();
        let d_y = Tensor::<f64>::zeros(vec![2, 1, 2]).unwrap(); // wrong batch
        assert!(matches!(
            bank.backward(&cache, &d_y),
            Err(Error::DimMismatch { .. })
        ));

        let other = FusedBank::<f64>::build(&[sig(5)], 4, 2, &InitConfig::default()).unwrap();
        let d_y = Tensor::<f64>::zeros(vec![3, 1, 2]).unwrap();
        assert!(matches!(other.backward(&cache, &d_y), Err(Error::State(_))));
    }
}
