//! Naive loop implementations kept as oracles for the optimized kernels.
//!
//! These read every element through the bounds-checked accessors and
//! follow the textbook definitions directly; nothing here is used on the
//! training path.

use super::{ConvGeometry, Tensor};
use crate::{Error, Result};

/// Direct convolution. Products are summed in (channel, kernel row,
/// kernel col) order, the same order the im2col path uses.
pub fn conv2d_direct(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    geom: &ConvGeometry,
) -> Result<Tensor> {
    input.expect_rank(4, "input")?;
    weights.expect_rank(4, "weights")?;
    let [n, c, h, w] = input.shape().try_into().unwrap();
    let [f, wc, kh, kw] = weights.shape().try_into().unwrap();
    if wc != c || kh != geom.kernel_h || kw != geom.kernel_w {
        return Err(Error::Shape("weights disagree with input/geometry".into()));
    }
    let (oh, ow) = geom.output_dims(h, w)?;
    let mut out = Tensor::zeros(&[n, f, oh, ow]);
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * geom.stride_h + i) as isize - geom.pad_h as isize;
                                let ix = (x * geom.stride_w + j) as isize - geom.pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input.get(&[b, ch, iy as usize, ix as usize])?
                                    * weights.get(&[o, ch, i, j])?;
                            }
                        }
                    }
                    out.set(&[b, o, y, x], bias.get(&[o])? + acc)?;
                }
            }
        }
    }
    Ok(out)
}

/// Exhaustive per-window maximum (unpadded windows only).
pub fn maxpool_scan(input: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    input.expect_rank(4, "input")?;
    let [n, c, h, w] = input.shape().try_into().unwrap();
    let (oh, ow) = geom.output_dims(h, w)?;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut window = Vec::new();
                    for i in 0..geom.kernel_h {
                        for j in 0..geom.kernel_w {
                            window.push(input.get(&[
                                b,
                                ch,
                                y * geom.stride_h + i,
                                x * geom.stride_w + j,
                            ])?);
                        }
                    }
                    let m = window.into_iter().fold(f64::NEG_INFINITY, f64::max);
                    out.set(&[b, ch, y, x], m)?;
                }
            }
        }
    }
    Ok(out)
}

/// Triple-loop `input · weights + bias`.
pub fn dense_naive(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, d] = input
        .shape()
        .try_into()
        .map_err(|_| Error::Shape("input rank".into()))?;
    let [d2, m] = weights
        .shape()
        .try_into()
        .map_err(|_| Error::Shape("weight rank".into()))?;
    if d != d2 {
        return Err(Error::Shape("inner dimension".into()));
    }
    let mut out = Tensor::zeros(&[n, m]);
    for r in 0..n {
        for col in 0..m {
            let mut acc = 0.0;
            for k in 0..d {
                acc += input.get(&[r, k])? * weights.get(&[k, col])?;
            }
            out.set(&[r, col], acc + bias.get(&[col])?)?;
        }
    }
    Ok(out)
}
