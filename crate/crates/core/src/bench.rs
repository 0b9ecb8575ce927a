//! Benchmark grid: trains the same model population on every
//! (samples × features × batch size) cell with the requested strategies
//! and collects per-epoch timings.
//!
//! Both strategies within one cell see the same seeds, the same dataset
//! and the same batch order. Warm-up epochs are timed but excluded from
//! the reported means. A ratio row (parallel as a percentage of
//! sequential) is emitted only for cells where both strategies ran.

use crate::bank::{FusedBank, InitConfig, ModelSpec};
use crate::datagen::{synth_dataset, Task};
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::trainer::{train_fused, train_sequential, LossKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Parallel,
    Sequential,
    Both,
}

impl Strategy {
    pub fn runs_parallel(self) -> bool {
        matches!(self, Strategy::Parallel | Strategy::Both)
    }
    pub fn runs_sequential(self) -> bool {
        matches!(self, Strategy::Sequential | Strategy::Both)
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "parallel" => Ok(Strategy::Parallel),
            "sequential" => Ok(Strategy::Sequential),
            "both" => Ok(Strategy::Both),
            other => Err(format!(
                "unknown strategy `{other}` (expected parallel, sequential or both)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub samples: Vec<usize>,
    pub features: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub specs: Vec<ModelSpec>,
    pub out_dim: usize,
    pub epochs: usize,
    pub warmup: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub biases: bool,
    pub strategy: Strategy,
    /// Refuse cells whose estimated footprint exceeds this many bytes.
    /// `None` checks against the machine's available memory when that can
    /// be read, and is permissive otherwise.
    pub mem_limit_bytes: Option<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            samples: vec![100, 1_000],
            features: vec![5, 10],
            batch_sizes: vec![32, 256],
            specs: Vec::new(),
            out_dim: 2,
            epochs: 12,
            warmup: 2,
            lr: 0.01,
            loss: LossKind::Mse,
            seed: 42,
            biases: false,
            strategy: Strategy::Both,
            mem_limit_bytes: None,
        }
    }
}

/// One strategy's measurements on one grid cell.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchRow {
    pub strategy: &'static str,
    pub n_samples: usize,
    pub n_features: usize,
    pub batch_size: usize,
    pub n_models: usize,
    pub dtype: DType,
    pub threads: usize,
    pub epochs: usize,
    pub warmup: usize,
    pub epochs_counted: usize,
    pub mean_secs: f64,
    pub std_secs: f64,
    pub per_epoch_secs: Vec<f64>,
}

/// `100 · parallel_mean / sequential_mean` for one cell.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RatioRow {
    pub n_samples: usize,
    pub n_features: usize,
    pub batch_size: usize,
    pub ratio_pct: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchMeta {
    pub n_models: usize,
    pub dtype: DType,
    pub threads: usize,
    pub epochs: usize,
    pub warmup: usize,
    pub loss: String,
    pub seed: u64,
    pub biases: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchReport {
    pub meta: BenchMeta,
    pub rows: Vec<BenchRow>,
    pub ratios: Vec<RatioRow>,
}

fn available_memory_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("MemAvailable:") {
            let kb: u64 = rest.trim().trim_end_matches(" kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

/// Estimated resident footprint of one cell: parameters + gradients,
/// per-step activations on the fused path, and the dataset itself.
fn estimate_cell_bytes<T: Scalar>(
    layout: &crate::bank::BankLayout,
    n_samples: usize,
    batch: usize,
    out_dim: usize,
    biases: bool,
) -> usize {
    let elem = std::mem::size_of::<T>();
    layout.param_bytes(elem, biases)
        + layout.step_bytes(batch.min(n_samples), elem, crate::bank::ForwardPath::Fused)
        + n_samples * (layout.in_dim() + out_dim) * elem
}

/// Runs the whole grid. Cells run one at a time; kernels use the ambient
/// rayon pool.
pub fn run_bench_grid<T: Scalar>(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.samples.is_empty() || cfg.features.is_empty() || cfg.batch_sizes.is_empty() {
        return Err(Error::Config(
            "samples, features and batch-sizes must be non-empty".into(),
        ));
    }
    if cfg.specs.is_empty() {
        return Err(Error::Config("no model specs for the benchmark".into()));
    }
    let task = match cfg.loss {
        LossKind::Mse => Task::Regression,
        LossKind::SoftmaxCrossEntropy => Task::Classification,
    };
    let threads = rayon::current_num_threads();
    let mem_limit = cfg.mem_limit_bytes.or_else(available_memory_bytes);

    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &n_samples in &cfg.samples {
        for &n_features in &cfg.features {
            for &batch_size in &cfg.batch_sizes {
                let train_cfg = TrainConfig {
                    batch_size,
                    epochs: cfg.epochs,
                    warmup_epochs: cfg.warmup,
                    lr: cfg.lr,
                    seed: cfg.seed,
                    loss: cfg.loss,
                    drop_last: false,
                };
                train_cfg.validate()?;

                let layout = crate::bank::BankLayout::build(&cfg.specs, n_features, cfg.out_dim)?;
                let estimate =
                    estimate_cell_bytes::<T>(&layout, n_samples, batch_size, cfg.out_dim, cfg.biases);
                if let Some(limit) = mem_limit {
                    if estimate as u64 > limit {
                        return Err(Error::Config(format!(
                            "cell (samples {n_samples}, features {n_features}, batch {batch_size}): \
                             estimated {estimate} bytes exceeds the {limit} byte memory limit"
                        )));
                    }
                }

                // Dataset generation is outside every timed region.
                let data = synth_dataset::<T>(n_samples, n_features, cfg.out_dim, cfg.seed, task)?;
                let init = InitConfig {
                    seed: cfg.seed,
                    biases: cfg.biases,
                };

                let mut parallel_mean = None;
                if cfg.strategy.runs_parallel() {
                    let mut bank = FusedBank::<T>::build(&cfg.specs, n_features, cfg.out_dim, &init)?;
                    let outcome = train_fused(&mut bank, &data, &train_cfg)?;
                    parallel_mean = Some(outcome.timing.mean_secs());
                    rows.push(make_row::<T>(
                        "parallel", n_samples, n_features, batch_size, cfg, threads,
                        outcome.timing.per_epoch_secs, outcome.timing.warmup_epochs,
                    ));
                }
                let mut sequential_mean = None;
                if cfg.strategy.runs_sequential() {
                    let (_, outcome) = train_sequential(
                        &cfg.specs,
                        n_features,
                        cfg.out_dim,
                        &init,
                        &data,
                        &train_cfg,
                    )?;
                    sequential_mean = Some(outcome.timing.mean_secs());
                    rows.push(make_row::<T>(
                        "sequential", n_samples, n_features, batch_size, cfg, threads,
                        outcome.timing.per_epoch_secs, outcome.timing.warmup_epochs,
                    ));
                }
                if let (Some(p), Some(s)) = (parallel_mean, sequential_mean) {
                    ratios.push(RatioRow {
                        n_samples,
                        n_features,
                        batch_size,
                        ratio_pct: 100.0 * p / s,
                    });
                }
            }
        }
    }

    Ok(BenchReport {
        meta: BenchMeta {
            n_models: cfg.specs.len(),
            dtype: T::DTYPE,
            threads,
            epochs: cfg.epochs,
            warmup: cfg.warmup,
            loss: cfg.loss.to_string(),
            seed: cfg.seed,
            biases: cfg.biases,
        },
        rows,
        ratios,
    })
}

#[allow(clippy::too_many_arguments)]
fn make_row<T: Scalar>(
    strategy: &'static str,
    n_samples: usize,
    n_features: usize,
    batch_size: usize,
    cfg: &BenchConfig,
    threads: usize,
    per_epoch_secs: Vec<f64>,
    warmup: usize,
) -> BenchRow {
    let counted = &per_epoch_secs[warmup..];
    let mean = counted.iter().sum::<f64>() / counted.len() as f64;
    let std = (counted.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
        / counted.len() as f64)
        .sqrt();
    BenchRow {
        strategy,
        n_samples,
        n_features,
        batch_size,
        n_models: cfg.specs.len(),
        dtype: T::DTYPE,
        threads,
        epochs: cfg.epochs,
        warmup,
        epochs_counted: counted.len(),
        mean_secs: mean,
        std_secs: std,
        per_epoch_secs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::grid_specs;
    use crate::ops::Activation;

    fn tiny_config() -> BenchConfig {
        BenchConfig {
            samples: vec![48],
            features: vec![4],
            batch_sizes: vec![16],
            specs: grid_specs(&[1, 2, 3], &[Activation::Relu, Activation::Tanh], 1).unwrap(),
            epochs: 4,
            warmup: 1,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn grid_emits_rows_and_ratios_per_cell() {
        let report = run_bench_grid::<f32>(&tiny_config()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.ratios.len(), 1);
        for row in &report.rows {
            assert_eq!(row.per_epoch_secs.len(), 4);
            assert_eq!(row.epochs_counted, 3);
            let mean = row.per_epoch_secs[1..].iter().sum::<f64>() / 3.0;
            assert!((row.mean_secs - mean).abs() < 1e-12);
        }
        assert!(report.ratios[0].ratio_pct > 0.0);
    }

    #[test]
    fn parallel_only_has_no_ratio_rows() {
        let cfg = BenchConfig {
            strategy: Strategy::Parallel,
            ..tiny_config()
        };
        let report = run_bench_grid::<f32>(&cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].strategy, "parallel");
        assert!(report.ratios.is_empty());
    }

    #[test]
    fn memory_guard_names_the_offending_cell() {
        let cfg = BenchConfig {
            mem_limit_bytes: Some(1),
            ..tiny_config()
        };
        match run_bench_grid::<f32>(&cfg) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("samples 48"), "{msg}");
                assert!(msg.contains("features 4"), "{msg}");
                assert!(msg.contains("memory limit"), "{msg}");
            }
            other => panic!("expected memory-limit error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_grid_axes() {
        let cfg = BenchConfig {
            samples: vec![],
            ..tiny_config()
        };
        assert!(run_bench_grid::<f32>(&cfg).is_err());
        let cfg = BenchConfig {
            specs: vec![],
            ..tiny_config()
        };
        assert!(run_bench_grid::<f32>(&cfg).is_err());
    }
}
