//! Dense row-major tensors of rank 1 to 3.
//!
//! This is deliberately not a general tensor library: no views, no strides,
//! no broadcasting machinery. Each value owns its buffer, shapes are
//! validated on construction, and the handful of layout helpers the
//! kernels need (row slicing, rank-3 axis swap, row gather) are provided
//! directly.

use crate::error::{Error, Result};
use crate::scalar::Element;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::Build(format!(
            "tensor rank must be 1..=3, got shape {shape:?}"
        )));
    }
    let mut numel = 1usize;
    for &e in shape {
        if e == 0 {
            return Err(Error::Build(format!("zero extent in shape {shape:?}")));
        }
        numel = numel
            .checked_mul(e)
            .ok_or_else(|| Error::Build(format!("shape {shape:?} overflows usize")))?;
    }
    Ok(numel)
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        if numel != data.len() {
            return Err(Error::DimMismatch {
                op: "tensor_new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: vec![T::default(); numel],
        })
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; numel],
        })
    }

    /// Builds a tensor by calling `f` with each row-major linear index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        Ok(Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn extent(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Extents are >= 1, so a tensor is never empty; kept for clippy's sake.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the buffer under a new shape of equal element count.
    pub fn into_shape(self, shape: Vec<usize>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        if numel != self.data.len() {
            return Err(Error::DimMismatch {
                op: "into_shape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> T {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        self.data[i * cols + j] = v;
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: T) {
        debug_assert_eq!(self.rank(), 3);
        let idx = (i * self.shape[1] + j) * self.shape[2] + k;
        self.data[idx] = v;
    }

    /// Row `i` of a rank-2 tensor.
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    /// Gathers rows of a rank-2 tensor into a new tensor, in `idx` order.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::DimMismatch {
                op: "gather_rows",
                lhs: self.shape.clone(),
                rhs: vec![idx.len()],
            });
        }
        let cols = self.shape[1];
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= self.shape[0] {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    extent: self.shape[0],
                    pos: vec![i],
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![idx.len(), cols], data)
    }

    /// Materialized transpose of a rank-2 tensor.
    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::DimMismatch {
                op: "transpose2",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(vec![c, r])?;
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// `[a, b, c] -> [a, c, b]` materialized transpose of the trailing axes.
    pub fn swap_axes_12(&self) -> Result<Self> {
        if self.rank() != 3 {
            return Err(Error::DimMismatch {
                op: "swap_axes_12",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let (a, b, c) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = Tensor::zeros(vec![a, c, b])?;
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    out.data[(i * c + k) * b + j] = self.data[(i * b + j) * c + k];
                }
            }
        }
        Ok(out)
    }
}
