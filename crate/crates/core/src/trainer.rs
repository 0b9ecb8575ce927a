//! Training loops for both strategies, with the timing protocol.
//!
//! The fused loop trains the whole bank with one forward/backward per
//! batch; the sequential loop trains each model to completion, one after
//! another. Both derive the same per-epoch batch order from the same seed
//! and share the same per-row loss routines, so with equal per-model seeds
//! their parameter trajectories coincide within one precision.
//!
//! Wall-clock is recorded per epoch (for the sequential strategy each
//! model's share of an epoch is summed into that epoch's total). Timings
//! cover the full step — batch slicing, forward, loss, backward, update —
//! but never dataset generation or model construction. Warm-up epochs are
//! timed too, yet excluded from the reported mean.
//!
//! The total training loss is the *sum* of per-model losses, never the
//! mean, so each model's gradient equals its standalone gradient.

use std::time::Instant;

use rayon::prelude::*;

use crate::bank::{FusedBank, InitConfig, ModelSpec};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::rng::{mix, SplitMix64};
use crate::scalar::Scalar;
use crate::sequential::SequentialMlp;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    SoftmaxCrossEntropy,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::SoftmaxCrossEntropy => "xent",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "xent" => Ok(LossKind::SoftmaxCrossEntropy),
            other => Err(format!("unknown loss `{other}` (expected mse or xent)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub drop_last: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 12,
            warmup_epochs: 2,
            lr: 0.01,
            seed: 0,
            loss: LossKind::Mse,
            drop_last: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "need warmup_epochs < epochs, got {} and {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Per-epoch wall-clock durations; the first `warmup_epochs` entries are
/// excluded from the mean.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochTiming {
    pub per_epoch_secs: Vec<f64>,
    pub warmup_epochs: usize,
}

impl EpochTiming {
    /// The entries that count toward the reported statistics.
    pub fn counted(&self) -> &[f64] {
        &self.per_epoch_secs[self.warmup_epochs..]
    }

    pub fn mean_secs(&self) -> f64 {
        let c = self.counted();
        c.iter().sum::<f64>() / c.len() as f64
    }

    pub fn std_secs(&self) -> f64 {
        let c = self.counted();
        let mean = self.mean_secs();
        (c.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c.len() as f64).sqrt()
    }
}

/// A seeded shuffled permutation of `0..n_samples`, split into consecutive
/// batches. Identical arguments give identical batches, which is what lets
/// the fused and sequential strategies see the same data order.
pub fn make_batches(
    n_samples: usize,
    batch_size: usize,
    seed: u64,
    drop_last: bool,
) -> Result<Vec<Vec<usize>>> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut perm: Vec<usize> = (0..n_samples).collect();
    SplitMix64::new(seed).shuffle(&mut perm);
    let mut batches: Vec<Vec<usize>> = perm.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if drop_last && !n_samples.is_multiple_of(batch_size) {
        batches.pop();
    }
    Ok(batches)
}

/// Where one row's cross-entropy target comes from.
enum RowTarget<'a, T> {
    Dense(&'a [T]),
    Index(usize),
}

/// Squared-error row: returns this row's contribution to
/// `L = Σ (y−t)²/(batch·out)` and writes `d = 2(y−t)/(batch·out)`.
#[inline]
fn mse_row<T: Scalar>(y: &[T], t: &[T], inv_n: T, d: &mut [T]) -> T {
    let two = T::ONE + T::ONE;
    let mut acc = T::ZERO;
    for o in 0..y.len() {
        let diff = y[o] - t[o];
        acc += diff * diff * inv_n;
        d[o] = two * diff * inv_n;
    }
    acc
}

/// Softmax cross-entropy row: returns `nll/batch` and writes
/// `d = (softmax − target)/batch`. The softmax is max-shifted.
#[inline]
fn xent_row<T: Scalar>(y: &[T], target: RowTarget<'_, T>, inv_b: T, d: &mut [T]) -> T {
    let mut m = y[0];
    for &v in &y[1..] {
        if v > m {
            m = v;
        }
    }
    let mut z = T::ZERO;
    for (o, &v) in y.iter().enumerate() {
        let e = (v - m).exp();
        d[o] = e;
        z += e;
    }
    let log_z = z.ln();
    let mut nll = T::ZERO;
    match target {
        RowTarget::Dense(t) => {
            for (o, &tv) in t.iter().enumerate() {
                nll += tv * (log_z - (y[o] - m));
                d[o] = (d[o] / z - tv) * inv_b;
            }
        }
        RowTarget::Index(k) => {
            nll = log_z - (y[k] - m);
            for (o, dv) in d.iter_mut().enumerate() {
                let t = if o == k { T::ONE } else { T::ZERO };
                *dv = (*dv / z - t) * inv_b;
            }
        }
    }
    nll * inv_b
}

/// Resolves the target form for row `i` and validates index labels.
fn row_target<'a, T: Scalar>(
    t: &'a Tensor<T>,
    i: usize,
    out_dim: usize,
    index_mode: bool,
) -> Result<RowTarget<'a, T>> {
    if !index_mode {
        return Ok(RowTarget::Dense(t.row(i)));
    }
    let raw = t.row(i)[0].to_f64();
    let k = raw as usize;
    if raw < 0.0 || raw.fract() != 0.0 || k >= out_dim {
        return Err(Error::Data(format!(
            "row {i}: class label {raw} out of range for {out_dim} outputs"
        )));
    }
    Ok(RowTarget::Index(k))
}

fn check_loss_shapes<T: Scalar>(
    op: &'static str,
    batch: usize,
    out_dim: usize,
    t: &Tensor<T>,
    kind: LossKind,
) -> Result<bool> {
    if t.rank() == 2 && t.extent(0) == batch {
        if t.extent(1) == out_dim {
            return Ok(false);
        }
        // A single column of class indices is accepted for cross-entropy.
        if t.extent(1) == 1 && kind == LossKind::SoftmaxCrossEntropy && out_dim > 1 {
            return Ok(true);
        }
    }
    Err(Error::DimMismatch {
        op,
        lhs: t.shape().to_vec(),
        rhs: vec![batch, out_dim],
    })
}

/// Per-model losses and the cotangent of the fused output.
///
/// `losses[m]` is model m's own loss on this batch; `d_y` is the gradient
/// of `Σ_m losses[m]`, whose block for model m equals the standalone
/// gradient of `losses[m]` alone.
pub fn per_model_loss<T: Scalar>(
    y: &Tensor<T>,
    t: &Tensor<T>,
    kind: LossKind,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if y.rank() != 3 {
        return Err(Error::DimMismatch {
            op: "per_model_loss",
            lhs: y.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (batch, n_models, out_dim) = (y.extent(0), y.extent(1), y.extent(2));
    let index_mode = check_loss_shapes("per_model_loss", batch, out_dim, t, kind)?;

    let mut losses = Tensor::zeros(vec![n_models])?;
    let mut d_y = Tensor::zeros(vec![batch, n_models, out_dim])?;
    let inv = match kind {
        LossKind::Mse => T::ONE / T::from_usize(batch * out_dim),
        LossKind::SoftmaxCrossEntropy => T::ONE / T::from_usize(batch),
    };

    let yd = y.data();
    let dd = d_y.data_mut();
    let ld = losses.data_mut();
    for i in 0..batch {
        for (m, loss) in ld.iter_mut().enumerate() {
            let base = (i * n_models + m) * out_dim;
            let yrow = &yd[base..base + out_dim];
            let drow = &mut dd[base..base + out_dim];
            *loss += match kind {
                LossKind::Mse => mse_row(yrow, t.row(i), inv, drow),
                LossKind::SoftmaxCrossEntropy => {
                    xent_row(yrow, row_target(t, i, out_dim, index_mode)?, inv, drow)
                }
            };
        }
    }
    Ok((losses, d_y))
}

/// Single-model counterpart of [`per_model_loss`], used by the sequential
/// strategy. Shares the per-row routines so both paths compute the same
/// floating-point sequence.
pub fn single_model_loss<T: Scalar>(
    y: &Tensor<T>,
    t: &Tensor<T>,
    kind: LossKind,
) -> Result<(T, Tensor<T>)> {
    if y.rank() != 2 {
        return Err(Error::DimMismatch {
            op: "single_model_loss",
            lhs: y.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (batch, out_dim) = (y.extent(0), y.extent(1));
    let index_mode = check_loss_shapes("single_model_loss", batch, out_dim, t, kind)?;

    let mut d_y = Tensor::zeros(vec![batch, out_dim])?;
    let inv = match kind {
        LossKind::Mse => T::ONE / T::from_usize(batch * out_dim),
        LossKind::SoftmaxCrossEntropy => T::ONE / T::from_usize(batch),
    };
    let mut loss = T::ZERO;
    for i in 0..batch {
        let drow = &mut d_y.data_mut()[i * out_dim..(i + 1) * out_dim];
        loss += match kind {
            LossKind::Mse => mse_row(y.row(i), t.row(i), inv, drow),
            LossKind::SoftmaxCrossEntropy => {
                xent_row(y.row(i), row_target(t, i, out_dim, index_mode)?, inv, drow)
            }
        };
    }
    Ok((loss, d_y))
}

/// Everything a training run reports besides the models themselves.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub timing: EpochTiming,
    /// `loss_curve[epoch][model]`: mean per-batch loss of that model.
    pub loss_curve: Vec<Vec<T>>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn final_losses(&self) -> &[T] {
        self.loss_curve.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    mix(seed, epoch as u64 + 1)
}

fn check_dataset<T: Scalar>(data: &Dataset<T>, in_dim: usize) -> Result<()> {
    if data.n_features() != in_dim {
        return Err(Error::Data(format!(
            "dataset has {} features, model expects {}",
            data.n_features(),
            in_dim
        )));
    }
    Ok(())
}

/// Trains the whole bank in place.
pub fn train_fused<T: Scalar>(
    bank: &mut FusedBank<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_dataset(data, bank.layout().in_dim())?;
    let n = data.n_samples();
    let n_models = bank.layout().n_models();
    let lr = T::from_f64(cfg.lr);

    let mut per_epoch_secs = Vec::with_capacity(cfg.epochs);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let batches = make_batches(n, cfg.batch_size, epoch_seed(cfg.seed, epoch), cfg.drop_last)?;
        if batches.is_empty() {
            return Err(Error::Config(
                "drop_last removed every batch; dataset smaller than batch_size".into(),
            ));
        }
        let mut epoch_losses = vec![T::ZERO; n_models];
        for batch in &batches {
            let xb = data.x.gather_rows(batch)?;
            let tb = data.t.gather_rows(batch)?;
            let (y, cache) = bank.forward(&xb)?;
            let (losses, d_y) = per_model_loss(&y, &tb, cfg.loss)?;
            let grads = bank.backward(&cache, &d_y)?;
            bank.apply_sgd(&grads, lr)?;
            for (acc, &l) in epoch_losses.iter_mut().zip(losses.data().iter()) {
                *acc += l;
            }
        }
        per_epoch_secs.push(started.elapsed().as_secs_f64());
        let inv_nb = T::ONE / T::from_usize(batches.len());
        for l in &mut epoch_losses {
            *l *= inv_nb;
        }
        loss_curve.push(epoch_losses);
    }

    Ok(TrainOutcome {
        timing: EpochTiming {
            per_epoch_secs,
            warmup_epochs: cfg.warmup_epochs,
        },
        loss_curve,
    })
}

fn train_one_model<T: Scalar>(
    model: &mut SequentialMlp<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Vec<T>)> {
    let n = data.n_samples();
    let lr = T::from_f64(cfg.lr);
    let mut epoch_secs = Vec::with_capacity(cfg.epochs);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let batches = make_batches(n, cfg.batch_size, epoch_seed(cfg.seed, epoch), cfg.drop_last)?;
        if batches.is_empty() {
            return Err(Error::Config(
                "drop_last removed every batch; dataset smaller than batch_size".into(),
            ));
        }
        let mut acc = T::ZERO;
        for batch in &batches {
            let xb = data.x.gather_rows(batch)?;
            let tb = data.t.gather_rows(batch)?;
            let (y, cache) = model.forward(&xb)?;
            let (loss, d_y) = single_model_loss(&y, &tb, cfg.loss)?;
            let grads = model.backward(&cache, &d_y)?;
            model.apply_sgd(&grads, lr)?;
            acc += loss;
        }
        epoch_secs.push(started.elapsed().as_secs_f64());
        epoch_losses.push(acc * (T::ONE / T::from_usize(batches.len())));
    }
    Ok((epoch_secs, epoch_losses))
}

/// Trains one standalone model per spec, sequentially, with the same
/// per-model seeds and batch order as [`train_fused`]. The reported
/// per-epoch time is the sum over models of their share of that epoch.
pub fn train_sequential<T: Scalar>(
    specs: &[ModelSpec],
    in_dim: usize,
    out_dim: usize,
    init: &InitConfig,
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(Vec<SequentialMlp<T>>, TrainOutcome<T>)> {
    cfg.validate()?;
    check_dataset(data, in_dim)?;
    if specs.is_empty() {
        return Err(Error::Build("no model specs".into()));
    }

    let mut models: Vec<SequentialMlp<T>> = specs
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            SequentialMlp::build(
                spec.hidden,
                spec.activation,
                in_dim,
                out_dim,
                init.seed ^ m as u64,
                init.biases,
            )
        })
        .collect::<Result<_>>()?;

    let mut per_epoch_secs = vec![0.0; cfg.epochs];
    let mut loss_curve = vec![vec![T::ZERO; specs.len()]; cfg.epochs];
    for (m, model) in models.iter_mut().enumerate() {
        let (secs, losses) = train_one_model(model, data, cfg)?;
        for (e, s) in secs.into_iter().enumerate() {
            per_epoch_secs[e] += s;
        }
        for (e, l) in losses.into_iter().enumerate() {
            loss_curve[e][m] = l;
        }
    }

    Ok((
        models,
        TrainOutcome {
            timing: EpochTiming {
                per_epoch_secs,
                warmup_epochs: cfg.warmup_epochs,
            },
            loss_curve,
        },
    ))
}

/// Opt-in thread-pool variant of [`train_sequential`]: disjoint models
/// train on rayon workers. Final parameters are identical to the
/// single-threaded strategy (models are independent); only the wall-clock
/// accounting differs, so this mode is not used for protocol benchmarks.
pub fn train_sequential_threaded<T: Scalar>(
    specs: &[ModelSpec],
    in_dim: usize,
    out_dim: usize,
    init: &InitConfig,
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(Vec<SequentialMlp<T>>, TrainOutcome<T>)> {
    cfg.validate()?;
    check_dataset(data, in_dim)?;
    if specs.is_empty() {
        return Err(Error::Build("no model specs".into()));
    }

    let trained: Vec<(SequentialMlp<T>, Vec<f64>, Vec<T>)> = specs
        .par_iter()
        .enumerate()
        .map(|(m, spec)| {
            let mut model = SequentialMlp::build(
                spec.hidden,
                spec.activation,
                in_dim,
                out_dim,
                init.seed ^ m as u64,
                init.biases,
            )?;
            let (secs, losses) = train_one_model(&mut model, data, cfg)?;
            Ok((model, secs, losses))
        })
        .collect::<Result<_>>()?;

    let mut per_epoch_secs = vec![0.0; cfg.epochs];
    let mut loss_curve = vec![vec![T::ZERO; specs.len()]; cfg.epochs];
    let mut models = Vec::with_capacity(specs.len());
    for (m, (model, secs, losses)) in trained.into_iter().enumerate() {
        for (e, s) in secs.into_iter().enumerate() {
            per_epoch_secs[e] += s;
        }
        for (e, l) in losses.into_iter().enumerate() {
            loss_curve[e][m] = l;
        }
        models.push(model);
    }

    Ok((
        models,
        TrainOutcome {
            timing: EpochTiming {
                per_epoch_secs,
                warmup_epochs: cfg.warmup_epochs,
            },
            loss_curve,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Activation;

    #[test]
    fn batches_partition_all_indices_once() {
        let batches = make_batches(4, 2, 7, false).unwrap();
        assert_eq!(batches.len(), 2);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn partial_final_batch_kept_unless_dropped() {
        let batches = make_batches(5, 2, 1, false).unwrap();
        assert_eq!(
            batches.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![2, 2, 1]
        );
        let dropped = make_batches(5, 2, 1, true).unwrap();
        assert_eq!(
            dropped.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![2, 2]
        );
    }

    #[test]
    fn same_seed_same_batches() {
        assert_eq!(
            make_batches(100, 32, 5, false).unwrap(),
            make_batches(100, 32, 5, false).unwrap()
        );
        assert_ne!(
            make_batches(100, 32, 5, false).unwrap(),
            make_batches(100, 32, 6, false).unwrap()
        );
        assert!(make_batches(10, 0, 1, false).is_err());
        assert!(make_batches(0, 4, 1, false).is_err());
    }

    #[test]
    fn mse_scalar_example() {
        let y = Tensor::new(vec![1, 1, 1], vec![3.0f64]).unwrap();
        let t = Tensor::new(vec![1, 1], vec![1.0f64]).unwrap();
        let (losses, d_y) = per_model_loss(&y, &t, LossKind::Mse).unwrap();
        assert_eq!(losses.data(), &[4.0]);
        assert_eq!(d_y.data(), &[4.0]);
    }

    #[test]
    fn exact_prediction_gives_zero_loss_and_gradient() {
        let t = Tensor::new(vec![2, 2], vec![0.1, 0.9, -0.3, 0.4]).unwrap();
        // Model 0 predicts exactly t, model 1 is off.
        let mut y = Tensor::<f64>::zeros(vec![2, 2, 2]).unwrap();
        for i in 0..2 {
            for o in 0..2 {
                y.set3(i, 0, o, t.at2(i, o));
                y.set3(i, 1, o, t.at2(i, o) + 1.0);
            }
        }
        let (losses, d_y) = per_model_loss(&y, &t, LossKind::Mse).unwrap();
        assert_eq!(losses.data()[0], 0.0);
        assert!(losses.data()[1] > 0.0);
        for i in 0..2 {
            for o in 0..2 {
                assert_eq!(d_y.at3(i, 0, o), 0.0);
                assert_ne!(d_y.at3(i, 1, o), 0.0);
            }
        }
    }

    #[test]
    fn per_model_loss_matches_single_model_loss_bitwise() {
        let mut rng = crate::rng::SplitMix64::new(3);
        for kind in [LossKind::Mse, LossKind::SoftmaxCrossEntropy] {
            let (b, m, o) = (4, 3, 2);
            let y = Tensor::from_fn(vec![b, m, o], |_| rng.uniform(-1.0, 1.0)).unwrap();
            let t = match kind {
                LossKind::Mse => Tensor::from_fn(vec![b, o], |_| rng.uniform(-1.0, 1.0)).unwrap(),
                LossKind::SoftmaxCrossEntropy => Tensor::from_fn(vec![b, o], |i| {
                    // one-hot rows
                    if i % o == (i / o) % o {
                        1.0
                    } else {
                        0.0
                    }
                })
                .unwrap(),
            };
            let (losses, d_y) = per_model_loss(&y, &t, kind).unwrap();
            for mm in 0..m {
                let mut ym = Tensor::<f64>::zeros(vec![b, o]).unwrap();
                for i in 0..b {
                    for oo in 0..o {
                        ym.set2(i, oo, y.at3(i, mm, oo));
                    }
                }
                let (l, d) = single_model_loss(&ym, &t, kind).unwrap();
                assert_eq!(l, losses.data()[mm]);
                for i in 0..b {
                    for oo in 0..o {
                        assert_eq!(d.at2(i, oo), d_y.at3(i, mm, oo));
                    }
                }
            }
        }
    }

    #[test]
    fn xent_accepts_class_indices_and_validates_them() {
        let y = Tensor::new(vec![2, 1, 3], vec![0.1, 0.7, 0.2, 0.9, 0.0, 0.1]).unwrap();
        let labels = Tensor::new(vec![2, 1], vec![1.0f64, 0.0]).unwrap();
        let (losses, d_y) = per_model_loss(&y, &labels, LossKind::SoftmaxCrossEntropy).unwrap();
        assert!(losses.data()[0] > 0.0);
        // Gradients per row sum to zero (softmax minus one-hot).
        for i in 0..2 {
            let s: f64 = (0..3).map(|o| d_y.at3(i, 0, o)).sum();
            assert!(s.abs() < 1e-12);
        }

        let bad = Tensor::new(vec![2, 1], vec![3.0f64, 0.0]).unwrap();
        assert!(matches!(
            per_model_loss(&y, &bad, LossKind::SoftmaxCrossEntropy),
            Err(Error::Data(_))
        ));
        let frac = Tensor::new(vec![2, 1], vec![0.5f64, 0.0]).unwrap();
        assert!(matches!(
            per_model_loss(&y, &frac, LossKind::SoftmaxCrossEntropy),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn xent_gradient_matches_finite_differences() {
        let mut rng = crate::rng::SplitMix64::new(9);
        let y = Tensor::from_fn(vec![3, 1, 4], |_| rng.uniform(-2.0, 2.0)).unwrap();
        let t = Tensor::from_fn(vec![3, 4], |i| if i % 4 == 2 { 1.0 } else { 0.0 }).unwrap();
        let (_, d_y) = per_model_loss(&y, &t, LossKind::SoftmaxCrossEntropy).unwrap();
        let h = 1e-6;
        for p in 0..y.len() {
            let mut up = y.clone();
            up.data_mut()[p] += h;
            let mut down = y.clone();
            down.data_mut()[p] -= h;
            let lu: f64 = per_model_loss(&up, &t, LossKind::SoftmaxCrossEntropy)
                .unwrap()
                .0
                .data()
                .iter()
                .sum();
            let ld: f64 = per_model_loss(&down, &t, LossKind::SoftmaxCrossEntropy)
                .unwrap()
                .0
                .data()
                .iter()
                .sum();
            let fd = (lu - ld) / (2.0 * h);
            assert!(
                (fd - d_y.data()[p]).abs() < 1e-8,
                "param {p}: fd {fd} vs {}",
                d_y.data()[p]
            );
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.warmup_epochs = cfg.epochs;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.batch_size = 1;
        cfg.lr = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn timing_mean_covers_exactly_counted_epochs() {
        let timing = EpochTiming {
            per_epoch_secs: vec![9.0, 9.0, 1.0, 2.0, 3.0],
            warmup_epochs: 2,
        };
        assert_eq!(timing.counted().len(), 3);
        assert!((timing.mean_secs() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_model_fused_and_sequential_trajectories_coincide() {
        let specs = [ModelSpec::new(3, Activation::Tanh)];
        let init = InitConfig {
            seed: 11,
            biases: true,
        };
        let data = crate::datagen::synth_dataset::<f64>(40, 4, 2, 5, crate::datagen::Task::Regression)
            .unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            warmup_epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };

        let mut bank = FusedBank::<f64>::build(&specs, 4, 2, &init).unwrap();
        let fused_out = train_fused(&mut bank, &data, &cfg).unwrap();
        let (models, seq_out) = train_sequential(&specs, 4, 2, &init, &data, &cfg).unwrap();

        let twin = bank.extract(0).unwrap();
        assert_eq!(twin.w1(), models[0].w1());
        assert_eq!(twin.w2(), models[0].w2());
        assert_eq!(twin.b1(), models[0].b1());
        assert_eq!(twin.b2(), models[0].b2());
        // Loss curves coincide as well.
        for e in 0..cfg.epochs {
            assert_eq!(fused_out.loss_curve[e][0], seq_out.loss_curve[e][0]);
        }
    }

    #[test]
    fn threaded_sequential_matches_single_threaded_parameters() {
        let specs = [
            ModelSpec::new(2, Activation::Relu),
            ModelSpec::new(3, Activation::Sigmoid),
            ModelSpec::new(1, Activation::Gelu),
        ];
        let init = InitConfig {
            seed: 3,
            biases: false,
        };
        let data =
            crate::datagen::synth_dataset::<f64>(30, 5, 2, 8, crate::datagen::Task::Regression)
                .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            warmup_epochs: 1,
            batch_size: 10,
            ..TrainConfig::default()
        };
        let (serial, _) = train_sequential(&specs, 5, 2, &init, &data, &cfg).unwrap();
        let (threaded, _) = train_sequential_threaded(&specs, 5, 2, &init, &data, &cfg).unwrap();
        for (a, b) in serial.iter().zip(threaded.iter()) {
            assert_eq!(a.w1(), b.w1());
            assert_eq!(a.w2(), b.w2());
        }
    }
}
