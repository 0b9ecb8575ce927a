//! Scatter-add and its backward gather.
//!
//! `scatter_add(dim, src, index, out_extent)` accumulates `src` into a
//! zero-initialized result whose extent along `dim` is `out_extent`:
//!
//! - rank 2, dim 0: `out[index[i,j], j] += src[i,j]`
//! - rank 2, dim 1: `out[i, index[i,j]] += src[i,j]`
//! - rank 3, dim 2: `out[i, j, index[i,j,k]] += src[i,j,k]`
//!
//! Sources landing in the same destination cell are added in ascending
//! source order, so results do not depend on thread count. The backward
//! pass is a pure gather — every source position receives the cotangent of
//! its destination, and nothing is ever summed across source positions —
//! which is exactly why gradients of distinct destinations never mix.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const PAR_MIN_ELEMS: usize = 1 << 15;

fn check_index_shape<T: Scalar>(
    op: &'static str,
    src: &Tensor<T>,
    index: &Tensor<u32>,
) -> Result<()> {
    if src.shape() != index.shape() {
        return Err(Error::DimMismatch {
            op,
            lhs: src.shape().to_vec(),
            rhs: index.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_dim(op: &'static str, rank: usize, dim: usize) -> Result<()> {
    let supported = matches!((rank, dim), (2, 0) | (2, 1) | (3, 2));
    if !supported {
        return Err(Error::Config(format!(
            "{op}: unsupported dim {dim} for rank {rank} (supported: rank 2 dims 0/1, rank 3 dim 2)"
        )));
    }
    Ok(())
}

/// Validates every index against `extent`, reporting the first offender's
/// multi-dimensional position.
fn check_index_values(
    op: &'static str,
    index: &Tensor<u32>,
    extent: usize,
) -> Result<()> {
    for (linear, &ix) in index.data().iter().enumerate() {
        if ix as usize >= extent {
            let pos = unravel(linear, index.shape());
            return Err(Error::IndexOutOfRange {
                op,
                index: ix as usize,
                extent,
                pos,
            });
        }
    }
    Ok(())
}

fn unravel(mut linear: usize, shape: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; shape.len()];
    for (axis, &e) in shape.iter().enumerate().rev() {
        pos[axis] = linear % e;
        linear /= e;
    }
    pos
}

/// Scatter-add of `src` guided by `index`, along `dim`, into a result of
/// extent `out_extent` on that axis.
pub fn scatter_add<T: Scalar>(
    dim: usize,
    src: &Tensor<T>,
    index: &Tensor<u32>,
    out_extent: usize,
) -> Result<Tensor<T>> {
    check_index_shape("scatter_add", src, index)?;
    check_dim("scatter_add", src.rank(), dim)?;
    if out_extent == 0 {
        return Err(Error::Config("scatter_add: out_extent must be >= 1".into()));
    }
    check_index_values("scatter_add", index, out_extent)?;

    let sd = src.data();
    let id = index.data();

    match (src.rank(), dim) {
        (2, 1) => {
            let (rows, cols) = (src.extent(0), src.extent(1));
            let mut out = Tensor::zeros(vec![rows, out_extent])?;
            let fill = |i: usize, orow: &mut [T]| {
                for j in 0..cols {
                    orow[id[i * cols + j] as usize] += sd[i * cols + j];
                }
            };
            if rows * cols < PAR_MIN_ELEMS {
                for (i, orow) in out.data_mut().chunks_mut(out_extent).enumerate() {
                    fill(i, orow);
                }
            } else {
                out.data_mut()
                    .par_chunks_mut(out_extent)
                    .enumerate()
                    .for_each(|(i, orow)| fill(i, orow));
            }
            Ok(out)
        }
        (2, 0) => {
            // Destination rows are shared between source rows, so this case
            // stays serial; source order (i, j) ascending is the contract.
            let (rows, cols) = (src.extent(0), src.extent(1));
            let mut out = Tensor::zeros(vec![out_extent, cols])?;
            let od = out.data_mut();
            for i in 0..rows {
                for j in 0..cols {
                    od[id[i * cols + j] as usize * cols + j] += sd[i * cols + j];
                }
            }
            Ok(out)
        }
        (3, 2) => {
            let (a, b, c) = (src.extent(0), src.extent(1), src.extent(2));
            let mut out = Tensor::zeros(vec![a, b, out_extent])?;
            let fill = |row: usize, orow: &mut [T]| {
                let base = row * c;
                for k in 0..c {
                    orow[id[base + k] as usize] += sd[base + k];
                }
            };
            if a * b * c < PAR_MIN_ELEMS {
                for (r, orow) in out.data_mut().chunks_mut(out_extent).enumerate() {
                    fill(r, orow);
                }
            } else {
                out.data_mut()
                    .par_chunks_mut(out_extent)
                    .enumerate()
                    .for_each(|(r, orow)| fill(r, orow));
            }
            Ok(out)
        }
        _ => unreachable!("check_dim covers the supported cases"),
    }
}

/// Backward of [`scatter_add`]: gathers the destination cotangent back to
/// every source position. Output has the shape of the original source.
pub fn scatter_add_backward<T: Scalar>(
    dim: usize,
    d_out: &Tensor<T>,
    index: &Tensor<u32>,
) -> Result<Tensor<T>> {
    check_dim("scatter_add_backward", index.rank(), dim)?;
    if d_out.rank() != index.rank() {
        return Err(Error::DimMismatch {
            op: "scatter_add_backward",
            lhs: d_out.shape().to_vec(),
            rhs: index.shape().to_vec(),
        });
    }
    // Axes other than `dim` must agree between cotangent and index.
    for axis in 0..index.rank() {
        if axis != dim && d_out.extent(axis) != index.extent(axis) {
            return Err(Error::DimMismatch {
                op: "scatter_add_backward",
                lhs: d_out.shape().to_vec(),
                rhs: index.shape().to_vec(),
            });
        }
    }
    check_index_values("scatter_add_backward", index, d_out.extent(dim))?;

    let dd = d_out.data();
    let id = index.data();
    let mut d_src = Tensor::zeros(index.shape().to_vec())?;

    match (index.rank(), dim) {
        (2, 1) => {
            let (rows, cols) = (index.extent(0), index.extent(1));
            let ext = d_out.extent(1);
            let fill = |i: usize, srow: &mut [T]| {
                for j in 0..cols {
                    srow[j] = dd[i * ext + id[i * cols + j] as usize];
                }
            };
            if rows * cols < PAR_MIN_ELEMS {
                for (i, srow) in d_src.data_mut().chunks_mut(cols).enumerate() {
                    fill(i, srow);
                }
            } else {
                d_src
                    .data_mut()
                    .par_chunks_mut(cols)
                    .enumerate()
                    .for_each(|(i, srow)| fill(i, srow));
            }
        }
        (2, 0) => {
            let (rows, cols) = (index.extent(0), index.extent(1));
            let sd = d_src.data_mut();
            for i in 0..rows {
                for j in 0..cols {
                    sd[i * cols + j] = dd[id[i * cols + j] as usize * cols + j];
                }
            }
        }
        (3, 2) => {
            let (a, b, c) = (index.extent(0), index.extent(1), index.extent(2));
            let ext = d_out.extent(2);
            let fill = |row: usize, srow: &mut [T]| {
                let base = row * c;
                let drow = &dd[row * ext..row * ext + ext];
                for k in 0..c {
                    srow[k] = drow[id[base + k] as usize];
                }
            };
            if a * b * c < PAR_MIN_ELEMS {
                for (r, srow) in d_src.data_mut().chunks_mut(c).enumerate() {
                    fill(r, srow);
                }
            } else {
                d_src
                    .data_mut()
                    .par_chunks_mut(c)
                    .enumerate()
                    .for_each(|(r, srow)| fill(r, srow));
            }
        }
        _ => unreachable!(),
    }
    Ok(d_src)
}
