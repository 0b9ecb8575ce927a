//! Fused CPU training of many independent single-hidden-layer MLPs.
//!
//! Instead of training N heterogeneous MLPs one at a time, the bank fuses
//! them into one parameter set: hidden layers are concatenated, outputs are
//! kept per-model, and the hidden-to-output projection is performed as a
//! broadcast element-wise product followed by a scatter-add keyed by an
//! owner index. Because the scatter's backward pass is a pure gather,
//! every internal model's gradients stay exactly independent, so the fused
//! bank follows the same training trajectory as N standalone models while
//! running on large, cache-friendly, thread-parallel kernels.
//!
//! Module map:
//! - [`tensor`], [`scalar`], [`ops`]: dense rank-1..3 tensors and the
//!   numeric kernels with their backward forms.
//! - [`bank`]: fused-bank layout, construction, forward/backward.
//! - [`sequential`]: the standalone single-MLP baseline and oracle.
//! - [`trainer`]: batching, per-model losses, fused/sequential loops,
//!   epoch timing with warm-up exclusion.
//! - [`datagen`]: seeded synthetic datasets.
//! - [`verify`]: the runtime verification suites behind `mlpbank verify`.
//! - [`bench`], [`report`]: the benchmark grid and its table renderings.

pub mod bank;
pub mod bench;
pub mod datagen;
pub mod error;
pub mod ops;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod sequential;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use bank::{
    grid_specs, BankGradients, BankLayout, ForwardCache, ForwardPath, FusedBank, InitConfig,
    ModelSpec,
};
pub use bench::{run_bench_grid, BenchConfig, BenchReport, BenchRow, RatioRow, Strategy};
pub use datagen::{synth_dataset, Dataset, Task};
pub use error::{Error, Result};
pub use ops::{
    broadcast_mul, matmul_t, scatter_add, scatter_add_backward, segment_activate, Activation,
    Segment,
};
pub use scalar::{DType, Scalar};
pub use sequential::{sgd_step, SequentialMlp};
pub use tensor::Tensor;
pub use trainer::{
    make_batches, per_model_loss, single_model_loss, train_fused, train_sequential,
    train_sequential_threaded, EpochTiming, LossKind, TrainConfig, TrainOutcome,
};
