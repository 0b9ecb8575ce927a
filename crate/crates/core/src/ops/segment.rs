//! Segment-wise activation: split the hidden axis into contiguous runs,
//! apply one activation per run, concatenate. The backward form multiplies
//! an incoming cotangent by the per-segment derivative at the saved
//! pre-activation values.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::Activation;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const PAR_MIN_ELEMS: usize = 1 << 15;

/// One maximal run of hidden columns sharing an activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub activation: Activation,
}

/// Segments must tile `[0, width)` in order, without gaps or overlap.
pub fn validate_segments(segments: &[Segment], width: usize) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::Layout("no segments".into()));
    }
    let mut cursor = 0;
    for (i, seg) in segments.iter().enumerate() {
        if seg.start != cursor || seg.end <= seg.start {
            return Err(Error::Layout(format!(
                "segment {i} covers [{}, {}) but the previous one ended at {cursor}",
                seg.start, seg.end
            )));
        }
        cursor = seg.end;
    }
    if cursor != width {
        return Err(Error::Layout(format!(
            "segments end at {cursor}, hidden width is {width}"
        )));
    }
    Ok(())
}

fn check_input<T: Scalar>(op: &'static str, h: &Tensor<T>, segments: &[Segment]) -> Result<()> {
    if h.rank() != 2 {
        return Err(Error::DimMismatch {
            op,
            lhs: h.shape().to_vec(),
            rhs: vec![],
        });
    }
    validate_segments(segments, h.extent(1))
}

/// Applies each segment's activation to its column range of `h`.
pub fn segment_activate<T: Scalar>(h: &Tensor<T>, segments: &[Segment]) -> Result<Tensor<T>> {
    check_input("segment_activate", h, segments)?;
    let (rows, width) = (h.extent(0), h.extent(1));
    let hd = h.data();
    let mut out = Tensor::zeros(vec![rows, width])?;

    let fill = |i: usize, orow: &mut [T]| {
        let hrow = &hd[i * width..i * width + width];
        for seg in segments {
            let act = seg.activation;
            for c in seg.start..seg.end {
                orow[c] = act.apply(hrow[c]);
            }
        }
    };

    if rows * width < PAR_MIN_ELEMS {
        for (i, orow) in out.data_mut().chunks_mut(width).enumerate() {
            fill(i, orow);
        }
    } else {
        out.data_mut()
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, orow)| fill(i, orow));
    }
    Ok(out)
}

/// Transposed-layout twin of [`segment_activate`]: here the tensor is
/// `[hidden, batch]` and segments partition the *row* axis, so each row is
/// one hidden unit and its activation is constant along the row. Values
/// equal `segment_activate` on the transposed input. This is the layout
/// the fused training path runs on.
pub fn segment_activate_rows<T: Scalar>(
    h_t: &Tensor<T>,
    segments: &[Segment],
) -> Result<Tensor<T>> {
    if h_t.rank() != 2 {
        return Err(Error::DimMismatch {
            op: "segment_activate_rows",
            lhs: h_t.shape().to_vec(),
            rhs: vec![],
        });
    }
    validate_segments(segments, h_t.extent(0))?;
    let (height, batch) = (h_t.extent(0), h_t.extent(1));
    let hd = h_t.data();
    let mut out = Tensor::zeros(vec![height, batch])?;

    // Rows of one segment share an activation; resolve it per row by a
    // linear scan over the (few) segments.
    let act_of = |row: usize| {
        segments
            .iter()
            .find(|s| row >= s.start && row < s.end)
            .map(|s| s.activation)
            .expect("validated segments cover every row")
    };

    let fill = |row: usize, orow: &mut [T]| {
        let act = act_of(row);
        let hrow = &hd[row * batch..row * batch + batch];
        for (o, &v) in orow.iter_mut().zip(hrow.iter()) {
            *o = act.apply(v);
        }
    };

    if height * batch < PAR_MIN_ELEMS {
        for (row, orow) in out.data_mut().chunks_mut(batch).enumerate() {
            fill(row, orow);
        }
    } else {
        out.data_mut()
            .par_chunks_mut(batch)
            .enumerate()
            .for_each(|(row, orow)| fill(row, orow));
    }
    Ok(out)
}

/// `d_h[b,c] = d_act[b,c] · f'_seg(c)(pre[b,c])`, where the derivative is
/// evaluated through [`Activation::grad_with_output`] against the saved
/// activated values `post`.
pub fn segment_activate_backward<T: Scalar>(
    d_act: &Tensor<T>,
    pre: &Tensor<T>,
    post: &Tensor<T>,
    segments: &[Segment],
) -> Result<Tensor<T>> {
    check_input("segment_activate_backward", pre, segments)?;
    if d_act.shape() != pre.shape() || post.shape() != pre.shape() {
        return Err(Error::DimMismatch {
            op: "segment_activate_backward",
            lhs: d_act.shape().to_vec(),
            rhs: pre.shape().to_vec(),
        });
    }
    let (rows, width) = (pre.extent(0), pre.extent(1));
    let dd = d_act.data();
    let pd = pre.data();
    let od = post.data();
    let mut out = Tensor::zeros(vec![rows, width])?;

    let fill = |i: usize, orow: &mut [T]| {
        let drow = &dd[i * width..i * width + width];
        let prow = &pd[i * width..i * width + width];
        let postrow = &od[i * width..i * width + width];
        for seg in segments {
            let act = seg.activation;
            for c in seg.start..seg.end {
                orow[c] = drow[c] * act.grad_with_output(prow[c], postrow[c]);
            }
        }
    };

    if rows * width < PAR_MIN_ELEMS {
        for (i, orow) in out.data_mut().chunks_mut(width).enumerate() {
            fill(i, orow);
        }
    } else {
        out.data_mut()
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, orow)| fill(i, orow));
    }
    Ok(out)
}
