//! Temporal convolution kernels shared by the plain and the taped paths.
//!
//! Layouts: activations are `[channels × frames]`, kernels are
//! `[out × in × K]`. The "valid" kernels here never pad; callers pad with
//! [`reflect_pad_index`] first.

use thiserror::Error;

use super::{Support, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalConvError {
    #[error("kernel size {0} must be odd")]
    EvenKernel(usize),
    #[error("input has zero frames")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Source index for padded position `i` (which may be negative or past the
/// end) under reflection without repeating the edge sample:
/// `[a, b, c]` padded by 1 reads as `[b, a, b, c, b]`.
pub fn reflect_pad_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Reflect-padded, length-preserving temporal convolution with a skeletal
/// support mask (`support[o * C_in + i]` selects which channel pairs
/// interact).
pub fn temporal_conv(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    support: &[bool],
) -> Result<Tensor, TemporalConvError> {
    if input.shape().len() != 2 || kernels.shape().len() != 3 {
        return Err(TemporalConvError::Shape(format!(
            "input {:?}, kernels {:?}",
            input.shape(),
            kernels.shape()
        )));
    }
    let (c_in, t) = (input.rows(), input.cols());
    let (c_out, k_in, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if k % 2 == 0 {
        return Err(TemporalConvError::EvenKernel(k));
    }
    if t == 0 {
        return Err(TemporalConvError::Empty);
    }
    if k_in != c_in || bias.len() != c_out || support.len() != c_out * c_in {
        return Err(TemporalConvError::Shape(format!(
            "input {:?}, kernels {:?}, bias {:?}, mask {}",
            input.shape(),
            kernels.shape(),
            bias.shape(),
            support.len()
        )));
    }
    let pad = (k - 1) / 2;
    let padded = pad_time(input, pad);
    let sup = Support::from_mask(c_out, c_in, support);
    let mut out = valid_conv(&padded, kernels, Some(&sup));
    for o in 0..c_out {
        let b = bias.data()[o];
        for v in out.row_mut(o) {
            *v += b;
        }
    }
    Ok(out)
}

pub(crate) fn pad_time(x: &Tensor, pad: usize) -> Tensor {
    let (rows, t) = (x.rows(), x.cols());
    let tp = t + 2 * pad;
    let mut data = Vec::with_capacity(rows * tp);
    for r in 0..rows {
        let row = x.row(r);
        for i in 0..tp {
            data.push(row[reflect_pad_index(i as isize - pad as isize, t)]);
        }
    }
    Tensor::matrix(rows, tp, data).expect("padded shape")
}

fn for_each_pair(c_out: usize, c_in: usize, support: Option<&Support>, mut f: impl FnMut(usize, usize)) {
    match support {
        Some(s) => {
            for o in 0..c_out {
                for &i in s.inputs(o) {
                    f(o, i);
                }
            }
        }
        None => {
            for o in 0..c_out {
                for i in 0..c_in {
                    f(o, i);
                }
            }
        }
    }
}

/// `y[o, t] = Σ_{i, k} w[o, i, k] · x[i, t + k]` with no padding.
pub(crate) fn valid_conv(x: &Tensor, w: &Tensor, support: Option<&Support>) -> Tensor {
    let (c_in, tp) = (x.rows(), x.cols());
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    assert_eq!(w.shape()[1], c_in, "conv: kernel/input channel mismatch");
    assert!(tp >= k, "conv: sequence shorter than kernel");
    let t_out = tp - k + 1;
    let mut y = vec![0.0; c_out * t_out];
    let wd = w.data();
    let xd = x.data();
    for_each_pair(c_out, c_in, support, |o, i| {
        let yrow = &mut y[o * t_out..(o + 1) * t_out];
        let xrow = &xd[i * tp..(i + 1) * tp];
        let base = (o * c_in + i) * k;
        for kk in 0..k {
            let wv = wd[base + kk];
            let xs = &xrow[kk..kk + t_out];
            for (yv, xv) in yrow.iter_mut().zip(xs) {
                *yv += wv * xv;
            }
        }
    });
    Tensor::matrix(c_out, t_out, y).expect("conv shape")
}

/// Adjoint of [`valid_conv`] with respect to its input:
/// `x̄[i, t + k] += w[o, i, k] · ȳ[o, t]`.
pub(crate) fn conv_input_grad(g: &Tensor, w: &Tensor, support: Option<&Support>, tp: usize) -> Tensor {
    let (c_out, t_out) = (g.rows(), g.cols());
    let (c_in, k) = (w.shape()[1], w.shape()[2]);
    assert_eq!(w.shape()[0], c_out, "conv input grad: channel mismatch");
    assert_eq!(tp, t_out + k - 1, "conv input grad: length mismatch");
    let mut xg = vec![0.0; c_in * tp];
    let wd = w.data();
    let gd = g.data();
    for_each_pair(c_out, c_in, support, |o, i| {
        let grow = &gd[o * t_out..(o + 1) * t_out];
        let xrow = &mut xg[i * tp..(i + 1) * tp];
        let base = (o * c_in + i) * k;
        for kk in 0..k {
            let wv = wd[base + kk];
            for (xv, gv) in xrow[kk..kk + t_out].iter_mut().zip(grow) {
                *xv += wv * gv;
            }
        }
    });
    Tensor::matrix(c_in, tp, xg).expect("conv input grad shape")
}

/// Adjoint of [`valid_conv`] with respect to its kernel:
/// `w̄[o, i, k] = Σ_t ȳ[o, t] · x[i, t + k]`. Entries outside the support
/// are zero.
pub(crate) fn conv_weight_grad(x: &Tensor, g: &Tensor, support: Option<&Support>, k: usize) -> Tensor {
    let (c_in, tp) = (x.rows(), x.cols());
    let (c_out, t_out) = (g.rows(), g.cols());
    assert_eq!(tp, t_out + k - 1, "conv weight grad: length mismatch");
    let mut wg = vec![0.0; c_out * c_in * k];
    let xd = x.data();
    let gd = g.data();
    for_each_pair(c_out, c_in, support, |o, i| {
        let grow = &gd[o * t_out..(o + 1) * t_out];
        let xrow = &xd[i * tp..(i + 1) * tp];
        let base = (o * c_in + i) * k;
        for kk in 0..k {
            let mut acc = 0.0;
            for (gv, xv) in grow.iter().zip(&xrow[kk..kk + t_out]) {
                acc += gv * xv;
            }
            wg[base + kk] = acc;
        }
    });
    Tensor::new(vec![c_out, c_in, k], wg).expect("conv weight grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn reflect_indices_do_not_repeat_edges() {
        let idx: Vec<usize> = (-2..5).map(|i| reflect_pad_index(i, 3)).collect();
        assert_eq!(idx, vec![2, 1, 0, 1, 2, 1, 0]);
        assert_eq!(reflect_pad_index(-3, 1), 0);
    }

    #[test]
    fn box_kernel_hand_convolution() {
        let x = mat(1, 3, &[1.0, 2.0, 3.0]);
        let w = Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.0]).unwrap();
        let y = temporal_conv(&x, &w, &b, &[true]).unwrap();
        // padded input reads [2, 1, 2, 3, 2]
        assert_eq!(y.data(), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn zero_kernels_give_bias() {
        let x = mat(2, 4, &[1.0, -2.0, 3.0, 0.5, 7.0, 1.0, 1.0, 2.0]);
        let w = Tensor::zeros(&[3, 2, 5]);
        let b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = temporal_conv(&x, &w, &b, &[true; 6]).unwrap();
        for o in 0..3 {
            assert!(y.row(o).iter().all(|&v| v == b.data()[o]));
        }
    }

    #[test]
    fn identity_kernel_passes_input() {
        let x = mat(2, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.0]);
        let w = Tensor::new(vec![2, 2, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        let y = temporal_conv(&x, &w, &b, &[true; 4]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn error_cases() {
        let x = mat(1, 3, &[1.0, 2.0, 3.0]);
        let b = Tensor::zeros(&[1]);
        let even = Tensor::zeros(&[1, 1, 4]);
        assert_eq!(
            temporal_conv(&x, &even, &b, &[true]),
            Err(TemporalConvError::EvenKernel(4))
        );
        let empty = Tensor::zeros(&[1, 0]);
        let w = Tensor::zeros(&[1, 1, 3]);
        assert_eq!(temporal_conv(&empty, &w, &b, &[true]), Err(TemporalConvError::Empty));
        let wrong = Tensor::zeros(&[1, 2, 3]);
        assert!(matches!(
            temporal_conv(&x, &wrong, &b, &[true, true]),
            Err(TemporalConvError::Shape(_))
        ));
    }

    #[test]
    fn masked_pairs_contribute_nothing() {
        let x = mat(2, 5, &[1.0, 2.0, -1.0, 0.5, 3.0, 4.0, -2.0, 1.0, 1.5, 0.0]);
        let w = Tensor::new(
            vec![2, 2, 3],
            vec![0.3, -0.2, 0.5, 1.1, 0.4, -0.7, 0.9, 0.1, 0.2, -0.3, 0.6, 0.8],
        )
        .unwrap();
        let b = Tensor::new(vec![2], vec![0.1, -0.1]).unwrap();
        let mask = [true, false, false, true];
        let masked = temporal_conv(&x, &w, &b, &mask).unwrap();
        let mut zeroed = w.clone();
        for (pair, keep) in mask.iter().enumerate() {
            if !keep {
                for kk in 0..3 {
                    zeroed.data_mut()[pair * 3 + kk] = 0.0;
                }
            }
        }
        let manual = temporal_conv(&x, &zeroed, &b, &[true; 4]).unwrap();
        assert_eq!(masked, manual);
    }
}
