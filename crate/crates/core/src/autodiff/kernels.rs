//! Forward kernels shared by the taped and untaped paths, so that both
//! produce bitwise-identical values.

use super::tensor::Tensor;

/// `x · Wᵀ + b` for `x: [B, in]`, `W: [out, in]`, `b: [out]`.
pub(crate) fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (batch, inp) = (x.rows(), x.cols());
    let out = w.rows();
    debug_assert_eq!(w.cols(), inp);
    debug_assert_eq!(b.len(), out);
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut y = vec![0.0; batch * out];
    for r in 0..batch {
        let xr = &xd[r * inp..(r + 1) * inp];
        let yr = &mut y[r * out..(r + 1) * out];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wr = &wd[o * inp..(o + 1) * inp];
            let mut acc = 0.0;
            for (xv, wv) in xr.iter().zip(wr) {
                acc += xv * wv;
            }
            *yo = acc + bd[o];
        }
    }
    Tensor::from_parts(vec![batch, out], y)
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub(crate) fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}
