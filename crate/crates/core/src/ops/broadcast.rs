//! Broadcasted element-wise product for the one pattern the forward pass
//! needs: `[b,1,h] ⊙ [1,o,h] -> [b,o,h]`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const PAR_MIN_ELEMS: usize = 1 << 15;

/// `out[i,j,k] = hp[i,0,k] · w[0,j,k]`.
pub fn broadcast_mul<T: Scalar>(hp: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let bad = |op| Error::DimMismatch {
        op,
        lhs: hp.shape().to_vec(),
        rhs: w.shape().to_vec(),
    };
    if hp.rank() != 3 || w.rank() != 3 || hp.extent(1) != 1 || w.extent(0) != 1 {
        return Err(bad("broadcast_mul"));
    }
    let (b, h) = (hp.extent(0), hp.extent(2));
    let o = w.extent(1);
    if w.extent(2) != h {
        return Err(bad("broadcast_mul"));
    }

    let hd = hp.data();
    let wd = w.data();
    let mut out = Tensor::zeros(vec![b, o, h])?;

    let fill = |row_idx: usize, orow: &mut [T]| {
        let (i, j) = (row_idx / o, row_idx % o);
        let hrow = &hd[i * h..i * h + h];
        let wrow = &wd[j * h..j * h + h];
        for k in 0..h {
            orow[k] = hrow[k] * wrow[k];
        }
    };

    if b * o * h < PAR_MIN_ELEMS {
        for (r, orow) in out.data_mut().chunks_mut(h).enumerate() {
            fill(r, orow);
        }
    } else {
        out.data_mut()
            .par_chunks_mut(h)
            .enumerate()
            .for_each(|(r, orow)| fill(r, orow));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn scalar_rows_example() {
        let hp = Tensor::new(vec![1, 1, 2], vec![2.0, 3.0]).unwrap();
        let w = Tensor::new(vec![1, 2, 2], vec![1.0, 1.0, 10.0, 10.0]).unwrap();
        let out = broadcast_mul(&hp, &w).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[2.0, 3.0, 20.0, 30.0]);
    }

    #[test]
    fn ones_replicate_w_along_batch() {
        let hp = Tensor::filled(vec![3, 1, 4], 1.0f64).unwrap();
        let w = Tensor::from_fn(vec![1, 2, 4], |i| i as f64).unwrap();
        let out = broadcast_mul(&hp, &w).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    assert_eq!(out.at3(i, j, k), w.at3(0, j, k));
                }
            }
        }
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = SplitMix64::new(5);
        let hp = Tensor::from_fn(vec![3, 1, 5], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let w = Tensor::from_fn(vec![1, 2, 5], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let out = broadcast_mul(&hp, &w).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..5 {
                    assert_eq!(out.at3(i, j, k), hp.at3(i, 0, k) * w.at3(0, j, k));
                }
            }
        }
    }

    #[test]
    fn rejects_non_broadcastable_shapes() {
        let hp = Tensor::<f64>::zeros(vec![3, 2, 5]).unwrap();
        let w = Tensor::<f64>::zeros(vec![1, 2, 5]).unwrap();
        assert!(matches!(
            broadcast_mul(&hp, &w),
            Err(Error::DimMismatch { .. })
        ));
        let hp = Tensor::<f64>::zeros(vec![3, 1, 5]).unwrap();
        let w = Tensor::<f64>::zeros(vec![1, 2, 4]).unwrap();
        assert!(matches!(
            broadcast_mul(&hp, &w),
            Err(Error::DimMismatch { .. })
        ));
    }
}
