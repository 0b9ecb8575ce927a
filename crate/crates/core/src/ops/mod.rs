//! Numeric kernels: matrix products, broadcast multiply, scatter-add and
//! segment-wise activation, each with a fixed per-cell accumulation order.
//!
//! The determinism contract shared by every kernel: parallelism is only
//! ever over independent destination cells, and the reduction feeding one
//! cell always runs in ascending source order. Results are therefore
//! bit-identical regardless of thread count.

mod activation;
mod broadcast;
mod matmul;
mod scatter;
mod segment;

pub use activation::Activation;
pub use broadcast::broadcast_mul;
pub use matmul::{matmul_n, matmul_t, matmul_ta};
pub use scatter::{scatter_add, scatter_add_backward};
pub use segment::{
    segment_activate, segment_activate_backward, segment_activate_rows, validate_segments, Segment,
};
