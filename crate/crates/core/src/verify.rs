//! Runtime verification suites.
//!
//! Each suite re-derives an expected answer from an independent oracle
//! (brute-force loops, central finite differences, or the standalone
//! baseline) and reports the worst observed deviation against its
//! tolerance. The `verify` CLI subcommand runs them all; the acceptance
//! tests call the same functions.
//!
//! Everything here runs in double precision.

use crate::bank::{ForwardPath, FusedBank, InitConfig, ModelSpec};
use crate::datagen::{synth_dataset, Task};
use crate::error::Result;
use crate::ops::{scatter_add, scatter_add_backward, Activation};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::trainer::{per_model_loss, train_fused, train_sequential, LossKind, TrainConfig};

/// One suite's verdict.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub max_dev: f64,
    pub tol: f64,
    pub detail: String,
}

impl SuiteOutcome {
    fn from_dev(name: &'static str, max_dev: f64, tol: f64, detail: String) -> Self {
        Self {
            name,
            passed: max_dev.is_finite() && max_dev <= tol,
            max_dev,
            tol,
            detail,
        }
    }

    fn failed(name: &'static str, tol: f64, detail: String) -> Self {
        Self {
            name,
            passed: false,
            max_dev: f64::INFINITY,
            tol,
            detail,
        }
    }
}

/// Runs every suite with its standard configuration.
pub fn run_all() -> Vec<SuiteOutcome> {
    vec![
        scatter_oracle(1_000, 2024),
        activation_gradcheck(),
        bank_gradcheck(),
        fusion_equivalence(50, 7),
        independence_perturbation(),
        trajectory_equivalence(),
    ]
}

/// Scatter-add against a brute-force accumulation loop: the 1x6 worked
/// example, then `n_instances` randomized rank-2/rank-3 cases with extents
/// up to 8, plus the gather backward. Exact equality required.
pub fn scatter_oracle(n_instances: usize, seed: u64) -> SuiteOutcome {
    let run = || -> Result<f64> {
        let mut max_dev: f64 = 0.0;

        let s = Tensor::new(vec![1, 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])?;
        let i = Tensor::new(vec![1, 6], vec![0u32, 1, 1, 2, 2, 2])?;
        let r = scatter_add(1, &s, &i, 3)?;
        max_dev = max_dev.max(max_abs_diff(
            r.data(),
            &[1.0, 5.0, 15.0],
        ));
        let back = scatter_add_backward(1, &r, &i)?;
        max_dev = max_dev.max(max_abs_diff(
            back.data(),
            &[1.0, 5.0, 5.0, 15.0, 15.0, 15.0],
        ));

        let mut rng = SplitMix64::new(seed);
        for _ in 0..n_instances {
            let rows = 1 + (rng.next_u64() % 8) as usize;
            let cols = 1 + (rng.next_u64() % 8) as usize;
            let ext = 1 + (rng.next_u64() % 8) as usize;
            let rank3 = rng.next_u64().is_multiple_of(2);
            if rank3 {
                let inner = 1 + (rng.next_u64() % 8) as usize;
                let src =
                    Tensor::from_fn(vec![rows, cols, inner], |_| rng.uniform(-2.0, 2.0))?;
                let idx = Tensor::from_fn(vec![rows, cols, inner], |_| {
                    (rng.next_u64() % ext as u64) as u32
                })?;
                let got = scatter_add(2, &src, &idx, ext)?;
                let mut want = Tensor::zeros(vec![rows, cols, ext])?;
                for a in 0..rows {
                    for b in 0..cols {
                        for c in 0..inner {
                            let d = idx.at3(a, b, c) as usize;
                            want.set3(a, b, d, want.at3(a, b, d) + src.at3(a, b, c));
                        }
                    }
                }
                max_dev = max_dev.max(max_abs_diff(got.data(), want.data()));
            } else {
                let dim = (rng.next_u64() % 2) as usize;
                let src = Tensor::from_fn(vec![rows, cols], |_| rng.uniform(-2.0, 2.0))?;
                let idx = Tensor::from_fn(vec![rows, cols], |_| {
                    (rng.next_u64() % ext as u64) as u32
                })?;
                let got = scatter_add(dim, &src, &idx, ext)?;
                let shape = if dim == 0 {
                    vec![ext, cols]
                } else {
                    vec![rows, ext]
                };
                let mut want = Tensor::zeros(shape)?;
                for r in 0..rows {
                    for c in 0..cols {
                        let d = idx.at2(r, c) as usize;
                        if dim == 0 {
                            want.set2(d, c, want.at2(d, c) + src.at2(r, c));
                        } else {
                            want.set2(r, d, want.at2(r, d) + src.at2(r, c));
                        }
                    }
                }
                max_dev = max_dev.max(max_abs_diff(got.data(), want.data()));

                // Gather backward oracle on the dim=1 case.
                if dim == 1 {
                    let d_r = Tensor::from_fn(vec![rows, ext], |_| rng.uniform(-1.0, 1.0))?;
                    let d_s = scatter_add_backward(1, &d_r, &idx)?;
                    for r in 0..rows {
                        for c in 0..cols {
                            let want = d_r.at2(r, idx.at2(r, c) as usize);
                            max_dev = max_dev.max((d_s.at2(r, c) - want).abs());
                        }
                    }
                }
            }
        }
        Ok(max_dev)
    };
    match run() {
        Ok(dev) => SuiteOutcome::from_dev(
            "scatter-add oracle",
            dev,
            0.0,
            format!("{n_instances} randomized instances plus the 1x6 example, bit-exact"),
        ),
        Err(e) => SuiteOutcome::failed("scatter-add oracle", 0.0, e.to_string()),
    }
}

/// Every activation's derivative against central differences at 21 probe
/// points in [-3, 3] (the origin sample is nudged off ReLU-family kinks).
pub fn activation_gradcheck() -> SuiteOutcome {
    let h = 1e-5;
    let mut max_dev: f64 = 0.0;
    let mut worst = String::new();
    for a in Activation::ALL {
        for i in 0..21 {
            let x = {
                let x = -3.0 + 0.3 * i as f64;
                if x.abs() < 1e-12 {
                    0.15
                } else {
                    x
                }
            };
            let fd = (a.apply(x + h) - a.apply(x - h)) / (2.0 * h);
            let an: f64 = a.grad(x);
            let err = if an == 0.0 {
                fd.abs()
            } else {
                (fd - an).abs() / an.abs()
            };
            if err > max_dev {
                max_dev = err;
                worst = format!("worst: {a} at x={x}");
            }
        }
    }
    SuiteOutcome::from_dev("activation gradcheck", max_dev, 1e-7, worst)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Places every bank parameter behind one flat index for the FD loop.
struct ParamCursor {
    w1_len: usize,
    w2_len: usize,
    b1_len: usize,
    b2_len: usize,
}

impl ParamCursor {
    fn new(bank: &FusedBank<f64>) -> Self {
        Self {
            w1_len: bank.w1().len(),
            w2_len: bank.w2().len(),
            b1_len: bank.b1().map_or(0, Tensor::len),
            b2_len: bank.b2().map_or(0, Tensor::len),
        }
    }

    fn len(&self) -> usize {
        self.w1_len + self.w2_len + self.b1_len + self.b2_len
    }

    fn add(&self, bank: &mut FusedBank<f64>, flat: usize, delta: f64) {
        if flat < self.w1_len {
            bank.w1_mut().data_mut()[flat] += delta;
        } else if flat < self.w1_len + self.w2_len {
            bank.w2_mut().data_mut()[flat - self.w1_len] += delta;
        } else if flat < self.w1_len + self.w2_len + self.b1_len {
            bank.b1_mut().unwrap().data_mut()[flat - self.w1_len - self.w2_len] += delta;
        } else {
            bank.b2_mut().unwrap().data_mut()[flat - self.w1_len - self.w2_len - self.b1_len] +=
                delta;
        }
    }

    fn analytic(&self, grads: &crate::bank::BankGradients<f64>, flat: usize) -> f64 {
        if flat < self.w1_len {
            grads.d_w1.data()[flat]
        } else if flat < self.w1_len + self.w2_len {
            grads.d_w2.data()[flat - self.w1_len]
        } else if flat < self.w1_len + self.w2_len + self.b1_len {
            grads.d_b1.as_ref().unwrap().data()[flat - self.w1_len - self.w2_len]
        } else {
            grads.d_b2.as_ref().unwrap().data()[flat - self.w1_len - self.w2_len - self.b1_len]
        }
    }
}

/// Every parameter gradient of the summed per-model MSE loss on a 3-model
/// bank (widths 1/2/3, Sigmoid/ReLU/Mish, 5 inputs, 2 outputs, batch 4)
/// against central differences with h = 1e-5.
pub fn bank_gradcheck() -> SuiteOutcome {
    let run = || -> Result<(f64, usize)> {
        let specs = [
            ModelSpec::new(1, Activation::Sigmoid),
            ModelSpec::new(2, Activation::Relu),
            ModelSpec::new(3, Activation::Mish),
        ];
        let init = InitConfig {
            seed: 42,
            biases: true,
        };
        let mut bank = FusedBank::<f64>::build(&specs, 5, 2, &init)?;
        let mut rng = SplitMix64::new(8);
        let x = Tensor::from_fn(vec![4, 5], |_| rng.uniform(-1.0, 1.0))?;
        let t = Tensor::from_fn(vec![4, 2], |_| rng.uniform(-1.0, 1.0))?;

        let (y, cache) = bank.forward(&x)?;
        let (_, d_y) = per_model_loss(&y, &t, LossKind::Mse)?;
        let grads = bank.backward(&cache, &d_y)?;

        let cursor = ParamCursor::new(&bank);
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for flat in 0..cursor.len() {
            cursor.add(&mut bank, flat, h);
            let up = total_loss(&bank, &x, &t)?;
            cursor.add(&mut bank, flat, -2.0 * h);
            let down = total_loss(&bank, &x, &t)?;
            cursor.add(&mut bank, flat, h);
            let fd = (up - down) / (2.0 * h);
            let an = cursor.analytic(&grads, flat);
            let scale = an.abs().max(fd.abs());
            let rel = if scale < 1e-9 {
                0.0
            } else {
                (fd - an).abs() / scale
            };
            max_rel = max_rel.max(rel);
        }
        Ok((max_rel, cursor.len()))
    };
    match run() {
        Ok((dev, n)) => SuiteOutcome::from_dev(
            "bank gradcheck",
            dev,
            1e-6,
            format!("{n} parameters, central differences h=1e-5"),
        ),
        Err(e) => SuiteOutcome::failed("bank gradcheck", 1e-6, e.to_string()),
    }
}

fn total_loss(bank: &FusedBank<f64>, x: &Tensor<f64>, t: &Tensor<f64>) -> Result<f64> {
    let (y, _) = bank.forward(x)?;
    let (losses, _) = per_model_loss(&y, t, LossKind::Mse)?;
    Ok(losses.data().iter().sum())
}

/// Bank forward slices against standalone forwards of the extracted
/// models, over randomized spec lists of up to 8 models. Double precision,
/// tolerance 1e-12 absolute.
pub fn fusion_equivalence(n_lists: usize, seed: u64) -> SuiteOutcome {
    let run = || -> Result<f64> {
        let mut rng = SplitMix64::new(seed);
        let mut max_dev: f64 = 0.0;
        for _ in 0..n_lists {
            let n_models = 1 + (rng.next_u64() % 8) as usize;
            let specs: Vec<ModelSpec> = (0..n_models)
                .map(|_| {
                    ModelSpec::new(
                        1 + (rng.next_u64() % 8) as usize,
                        Activation::ALL[(rng.next_u64() % 10) as usize],
                    )
                })
                .collect();
            let in_dim = 1 + (rng.next_u64() % 6) as usize;
            let out_dim = 1 + (rng.next_u64() % 4) as usize;
            let batch = 1 + (rng.next_u64() % 6) as usize;
            let init = InitConfig {
                seed: rng.next_u64(),
                biases: rng.next_u64().is_multiple_of(2),
            };
            let bank = FusedBank::<f64>::build(&specs, in_dim, out_dim, &init)?;
            let x = Tensor::from_fn(vec![batch, in_dim], |_| rng.uniform(-1.0, 1.0))?;
            let (y, _) = bank.forward(&x)?;
            for m in 0..n_models {
                let standalone = bank.extract(m)?;
                let (ym, _) = standalone.forward(&x)?;
                for b in 0..batch {
                    for o in 0..out_dim {
                        max_dev = max_dev.max((y.at3(b, m, o) - ym.at2(b, o)).abs());
                    }
                }
            }
        }
        Ok(max_dev)
    };
    match run() {
        Ok(dev) => SuiteOutcome::from_dev(
            "fusion equivalence",
            dev,
            1e-12,
            format!("{n_lists} random spec lists vs extracted standalone forwards"),
        ),
        Err(e) => SuiteOutcome::failed("fusion equivalence", 1e-12, e.to_string()),
    }
}

/// Max absolute output/gradient leak across model boundaries after
/// perturbing one parameter (forward, both paths) and after concentrating
/// the cotangent on one model (backward). Zero means fully independent.
pub fn independence_leak(bank: &FusedBank<f64>, x: &Tensor<f64>) -> Result<f64> {
    let n_models = bank.layout().n_models();
    let out_dim = bank.layout().out_dim();
    let batch = x.extent(0);
    let mut leak: f64 = 0.0;

    // Forward: bump the first W1 weight of each model by 0.1.
    for m in 0..n_models {
        let (y0_f, _) = bank.forward_path(x, ForwardPath::Fused)?;
        let (y0_m, _) = bank.forward_path(x, ForwardPath::Materialized)?;
        let mut bumped = bank.clone();
        let (s, _) = bank.layout().model_slice(m);
        let in_dim = bank.layout().in_dim();
        bumped.w1_mut().data_mut()[s * in_dim] += 0.1;
        let (y1_f, _) = bumped.forward_path(x, ForwardPath::Fused)?;
        let (y1_m, _) = bumped.forward_path(x, ForwardPath::Materialized)?;
        for b in 0..batch {
            for mm in 0..n_models {
                if mm == m {
                    continue;
                }
                for o in 0..out_dim {
                    leak = leak.max((y1_f.at3(b, mm, o) - y0_f.at3(b, mm, o)).abs());
                    leak = leak.max((y1_m.at3(b, mm, o) - y0_m.at3(b, mm, o)).abs());
                }
            }
        }
    }

    // Backward: cotangent concentrated at one model must leave everyone
    // else's gradients exactly zero.
    let (_, cache) = bank.forward(x)?;
    for m in 0..n_models {
        let mut d_y = Tensor::<f64>::zeros(vec![batch, n_models, out_dim])?;
        for b in 0..batch {
            for o in 0..out_dim {
                d_y.set3(b, m, o, 1.0);
            }
        }
        let grads = bank.backward_path(&cache, &d_y, ForwardPath::Fused)?;
        let (s, e) = bank.layout().model_slice(m);
        for h in 0..bank.layout().hidden_total() {
            if h >= s && h < e {
                continue;
            }
            for v in grads.d_w1.row(h) {
                leak = leak.max(v.abs());
            }
            for o in 0..out_dim {
                leak = leak.max(grads.d_w2.at2(o, h).abs());
            }
        }
    }
    Ok(leak)
}

/// Exact-zero cross-model leak on a mixed 4-model bank.
pub fn independence_perturbation() -> SuiteOutcome {
    let run = || -> Result<f64> {
        let specs = [
            ModelSpec::new(2, Activation::Tanh),
            ModelSpec::new(3, Activation::Relu),
            ModelSpec::new(1, Activation::Gelu),
            ModelSpec::new(4, Activation::Sigmoid),
        ];
        let init = InitConfig {
            seed: 17,
            biases: true,
        };
        let bank = FusedBank::<f64>::build(&specs, 5, 2, &init)?;
        let mut rng = SplitMix64::new(55);
        let x = Tensor::from_fn(vec![4, 5], |_| rng.uniform(-1.0, 1.0))?;
        independence_leak(&bank, &x)
    };
    match run() {
        Ok(dev) => SuiteOutcome::from_dev(
            "independence perturbation",
            dev,
            0.0,
            "delta 0.1 on one weight; other models' outputs and gradients must not move".into(),
        ),
        Err(e) => SuiteOutcome::failed("independence perturbation", 0.0, e.to_string()),
    }
}

/// Eight heterogeneous models trained fused and sequentially for 5 epochs
/// on 200x8 synthetic data (batch 32, lr 0.01, double precision): every
/// parameter of every model must match within 1e-8 absolute.
pub fn trajectory_equivalence() -> SuiteOutcome {
    let run = || -> Result<f64> {
        let widths = [1usize, 2, 3, 4, 5, 6, 7, 8];
        let acts = [
            Activation::Identity,
            Activation::Sigmoid,
            Activation::Tanh,
            Activation::Relu,
            Activation::Elu,
            Activation::Selu,
            Activation::Gelu,
            Activation::Mish,
        ];
        let specs: Vec<ModelSpec> = widths
            .iter()
            .zip(acts.iter())
            .map(|(&w, &a)| ModelSpec::new(w, a))
            .collect();
        let init = InitConfig {
            seed: 99,
            biases: true,
        };
        let data = synth_dataset::<f64>(200, 8, 2, 31, Task::Regression)?;
        let cfg = TrainConfig {
            batch_size: 32,
            epochs: 5,
            warmup_epochs: 1,
            lr: 0.01,
            seed: 13,
            loss: LossKind::Mse,
            drop_last: false,
        };

        let mut bank = FusedBank::<f64>::build(&specs, 8, 2, &init)?;
        train_fused(&mut bank, &data, &cfg)?;
        let (models, _) = train_sequential(&specs, 8, 2, &init, &data, &cfg)?;

        let mut max_dev: f64 = 0.0;
        for (m, model) in models.iter().enumerate() {
            let twin = bank.extract(m)?;
            max_dev = max_dev.max(max_abs_diff(twin.w1().data(), model.w1().data()));
            max_dev = max_dev.max(max_abs_diff(twin.w2().data(), model.w2().data()));
            max_dev = max_dev.max(max_abs_diff(
                twin.b1().unwrap().data(),
                model.b1().unwrap().data(),
            ));
            max_dev = max_dev.max(max_abs_diff(
                twin.b2().unwrap().data(),
                model.b2().unwrap().data(),
            ));
        }
        Ok(max_dev)
    };
    match run() {
        Ok(dev) => SuiteOutcome::from_dev(
            "trajectory equivalence",
            dev,
            1e-8,
            "8 models, 200x8 data, 5 epochs, fused vs sequential twins".into(),
        ),
        Err(e) => SuiteOutcome::failed("trajectory equivalence", 1e-8, e.to_string()),
    }
}
