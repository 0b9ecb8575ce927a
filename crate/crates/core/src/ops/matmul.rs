//! Dense matrix products over row-major buffers.
//!
//! Three orientations cover the whole training graph, so no transposed
//! copies are ever materialized:
//!
//! - [`matmul_t`]:  `out[i,j] = Σ_k a[i,k]·b[j,k]` (a · bᵀ) — forward projections
//! - [`matmul_ta`]: `out[i,j] = Σ_k a[k,i]·b[k,j]` (aᵀ · b) — weight gradients
//! - [`matmul_n`]:  `out[i,j] = Σ_k a[i,k]·b[k,j]` (a · b)  — input gradients
//!
//! Every output cell is accumulated from zero in ascending `k`, serial and
//! parallel alike.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Below this many multiply-adds the rayon dispatch costs more than it buys.
const PAR_MIN_WORK: usize = 1 << 15;

/// Rows of `a` processed together so a streamed row of `b` is reused.
const ROW_BLOCK: usize = 4;

fn check_2d(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::DimMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `out[i,j] = Σ_k x[i,k] · w[j,k]` for `x: [b,k]`, `w: [n,k]`.
///
/// Both operands are read along contiguous rows; `w` rows stream once per
/// block of `ROW_BLOCK` output rows.
pub fn matmul_t<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    check_2d("matmul_t", x, w)?;
    let (rows, k) = (x.extent(0), x.extent(1));
    let (n, wk) = (w.extent(0), w.extent(1));
    if k != wk {
        return Err(Error::DimMismatch {
            op: "matmul_t",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(vec![rows, n])?;
    let xd = x.data();
    let wd = w.data();

    let fill_block = |block_idx: usize, out_chunk: &mut [T]| {
        let i0 = block_idx * ROW_BLOCK;
        let nrows = out_chunk.len() / n;
        for j in 0..n {
            let wrow = &wd[j * k..j * k + k];
            if nrows == ROW_BLOCK {
                // Four independent accumulator chains hide the add latency.
                let x0 = &xd[i0 * k..i0 * k + k];
                let x1 = &xd[(i0 + 1) * k..(i0 + 1) * k + k];
                let x2 = &xd[(i0 + 2) * k..(i0 + 2) * k + k];
                let x3 = &xd[(i0 + 3) * k..(i0 + 3) * k + k];
                let (mut a0, mut a1, mut a2, mut a3) = (T::ZERO, T::ZERO, T::ZERO, T::ZERO);
                for kk in 0..k {
                    let wv = wrow[kk];
                    a0 += x0[kk] * wv;
                    a1 += x1[kk] * wv;
                    a2 += x2[kk] * wv;
                    a3 += x3[kk] * wv;
                }
                out_chunk[j] = a0;
                out_chunk[n + j] = a1;
                out_chunk[2 * n + j] = a2;
                out_chunk[3 * n + j] = a3;
            } else {
                for r in 0..nrows {
                    let xrow = &xd[(i0 + r) * k..(i0 + r) * k + k];
                    let mut acc = T::ZERO;
                    for kk in 0..k {
                        acc += xrow[kk] * wrow[kk];
                    }
                    out_chunk[r * n + j] = acc;
                }
            }
        }
    };

    if rows * n * k < PAR_MIN_WORK {
        for (bi, chunk) in out.data_mut().chunks_mut(ROW_BLOCK * n).enumerate() {
            fill_block(bi, chunk);
        }
    } else {
        out.data_mut()
            .par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(bi, chunk)| fill_block(bi, chunk));
    }
    Ok(out)
}

/// Output rows processed per task in [`matmul_ta`]; keeps the block of
/// accumulators cache-resident while `a` rows stream contiguously.
const TA_ROW_CHUNK: usize = 1024;

/// `out[i,j] = Σ_k a[k,i] · b[k,j]` for `a: [m,rows]`, `b: [m,cols]`.
///
/// The reduction axis is the shared leading extent, accumulated in
/// ascending order (`k` is the outermost loop, so every cell still sums
/// ascending `k`). Both inputs are read along contiguous rows.
pub fn matmul_ta<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_2d("matmul_ta", a, b)?;
    let (m, rows) = (a.extent(0), a.extent(1));
    let (bm, cols) = (b.extent(0), b.extent(1));
    if m != bm {
        return Err(Error::DimMismatch {
            op: "matmul_ta",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(vec![rows, cols])?;
    let ad = a.data();
    let bd = b.data();

    let fill_block = |block_idx: usize, out_chunk: &mut [T]| {
        let i0 = block_idx * TA_ROW_CHUNK;
        let nrows = out_chunk.len() / cols;
        for kk in 0..m {
            let arow = &ad[kk * rows + i0..kk * rows + i0 + nrows];
            let brow = &bd[kk * cols..kk * cols + cols];
            for (r, &av) in arow.iter().enumerate() {
                let orow = &mut out_chunk[r * cols..r * cols + cols];
                for j in 0..cols {
                    orow[j] += av * brow[j];
                }
            }
        }
    };

    if rows * cols * m < PAR_MIN_WORK {
        for (bi, chunk) in out.data_mut().chunks_mut(TA_ROW_CHUNK * cols).enumerate() {
            fill_block(bi, chunk);
        }
    } else {
        out.data_mut()
            .par_chunks_mut(TA_ROW_CHUNK * cols)
            .enumerate()
            .for_each(|(bi, chunk)| fill_block(bi, chunk));
    }
    Ok(out)
}

/// `out[i,j] = Σ_k a[i,k] · b[k,j]` for `a: [rows,m]`, `b: [m,cols]`.
pub fn matmul_n<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_2d("matmul_n", a, b)?;
    let (rows, m) = (a.extent(0), a.extent(1));
    let (bm, cols) = (b.extent(0), b.extent(1));
    if m != bm {
        return Err(Error::DimMismatch {
            op: "matmul_n",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(vec![rows, cols])?;
    let ad = a.data();
    let bd = b.data();

    let fill_row = |i: usize, orow: &mut [T]| {
        let arow = &ad[i * m..i * m + m];
        for kk in 0..m {
            let av = arow[kk];
            let brow = &bd[kk * cols..kk * cols + cols];
            for j in 0..cols {
                orow[j] += av * brow[j];
            }
        }
    };

    if rows * cols * m < PAR_MIN_WORK {
        for (i, orow) in out.data_mut().chunks_mut(cols).enumerate() {
            fill_row(i, orow);
        }
    } else {
        out.data_mut()
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, orow)| fill_row(i, orow));
    }
    Ok(out)
}
