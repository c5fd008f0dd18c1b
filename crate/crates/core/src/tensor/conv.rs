//! 2D convolution (NCHW) lowered to matrix products through im2col.

use rayon::prelude::*;

use super::ops::{gemm_nn, gemm_nt, gemm_tn};
use super::{Exec, Tensor};
use crate::{Error, Result};

/// Window geometry shared by convolution and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeometry {
    pub fn square(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            pad_h: pad,
            pad_w: pad,
        }
    }

    /// Stride-1 geometry whose output matches the input size (odd kernels).
    pub fn same(kernel: usize) -> Self {
        Self::square(kernel, 1, kernel / 2)
    }

    /// `floor((input + 2*pad - kernel) / stride) + 1` on both axes.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            axis_output(h, self.kernel_h, self.stride_h, self.pad_h, "height")?,
            axis_output(w, self.kernel_w, self.stride_w, self.pad_w, "width")?,
        ))
    }

    fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w
    }
}

fn axis_output(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    axis: &str,
) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Geometry(format!(
            "{axis}: kernel ({kernel}) and stride ({stride}) must be positive"
        )));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Geometry(format!(
            "{axis}: kernel {kernel} does not fit input {input} with padding {pad}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Validated dimensions of one convolution call.
#[derive(Debug, Clone, Copy)]
struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvDims {
    fn check(
        input: &Tensor,
        weights: &Tensor,
        bias: Option<&Tensor>,
        geom: &ConvGeometry,
    ) -> Result<Self> {
        input.expect_rank(4, "conv2d input")?;
        weights.expect_rank(4, "conv2d weights")?;
        let (n, c, h, w) = (
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        );
        let ws = weights.shape();
        if ws[1] != c {
            return Err(Error::Shape(format!(
                "conv2d: input has {c} channels but weights expect {}",
                ws[1]
            )));
        }
        if ws[2] != geom.kernel_h || ws[3] != geom.kernel_w {
            return Err(Error::Shape(format!(
                "conv2d: weight kernel {}x{} disagrees with geometry {}x{}",
                ws[2], ws[3], geom.kernel_h, geom.kernel_w
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(Error::Shape(format!(
                    "conv2d: bias shape {:?} should be [{}]",
                    b.shape(),
                    ws[0]
                )));
            }
        }
        let (out_h, out_w) = geom.output_dims(h, w)?;
        Ok(ConvDims {
            n,
            c,
            h,
            w,
            f: ws[0],
            out_h,
            out_w,
        })
    }

    fn k(&self, geom: &ConvGeometry) -> usize {
        self.c * geom.patch_len()
    }

    fn p(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unrolls one sample (`[C,H,W]`) into a `[C*kh*kw, H'*W']` patch matrix.
/// Rows are ordered (channel, kernel row, kernel col); padding reads as 0.
fn im2col(sample: &[f64], d: &ConvDims, g: &ConvGeometry) -> Vec<f64> {
    let p = d.p();
    let mut cols = vec![0.0; d.k(g) * p];
    let mut row = 0;
    for c in 0..d.c {
        let plane = &sample[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..g.kernel_h {
            for j in 0..g.kernel_w {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.out_h {
                    let iy = (oy * g.stride_h + i) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.out_w {
                        let ix = (ox * g.stride_w + j) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[oy * d.out_w + ox] = src[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-adds a patch-matrix gradient back onto a `[C,H,W]` sample.
fn col2im(cols: &[f64], d: &ConvDims, g: &ConvGeometry, out: &mut [f64]) {
    let p = d.p();
    let mut row = 0;
    for c in 0..d.c {
        let plane = &mut out[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..g.kernel_h {
            for j in 0..g.kernel_w {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.out_h {
                    let iy = (oy * g.stride_h + i) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for ox in 0..d.out_w {
                        let ix = (ox * g.stride_w + j) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < d.w as isize {
                            plane[iy as usize * d.w + ix as usize] += src[oy * d.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn per_sample<T: Send>(exec: Exec, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    match exec {
        Exec::Sequential => (0..n).map(f).collect(),
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

/// `out[n,f,y,x] = bias[f] + Σ_{c,i,j} input[n,c,y*s+i-pad,x*s+j-pad] * weights[f,c,i,j]`.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    geom: &ConvGeometry,
    exec: Exec,
) -> Result<Tensor> {
    let d = ConvDims::check(input, weights, Some(bias), geom)?;
    let (k, p) = (d.k(geom), d.p());
    let outputs = per_sample(exec, d.n, |n| {
        let cols = im2col(input.outer(n), &d, geom);
        let mut out = vec![0.0; d.f * p];
        gemm_nn(weights.data(), &cols, d.f, k, p, &mut out);
        for (row, &b) in out.chunks_exact_mut(p).zip(bias.data()) {
            row.iter_mut().for_each(|v| *v += b);
        }
        out
    });
    Tensor::new(vec![d.n, d.f, d.out_h, d.out_w], outputs.concat())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Exact partial derivatives of [`conv2d_forward`] given the output cotangent.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    geom: &ConvGeometry,
    exec: Exec,
) -> Result<ConvGrads> {
    let d = ConvDims::check(input, weights, None, geom)?;
    let expected = [d.n, d.f, d.out_h, d.out_w];
    if grad_out.shape() != expected {
        return Err(Error::Shape(format!(
            "conv2d backward: grad_out shape {:?} should be {expected:?}",
            grad_out.shape()
        )));
    }
    let (k, p) = (d.k(geom), d.p());
    let partials = per_sample(exec, d.n, |n| {
        let g = grad_out.outer(n);
        let cols = im2col(input.outer(n), &d, geom);
        let mut gw = vec![0.0; d.f * k];
        gemm_nt(g, &cols, d.f, p, k, &mut gw);
        let gb: Vec<f64> = g.chunks_exact(p).map(|row| row.iter().sum()).collect();
        let mut gcols = vec![0.0; k * p];
        gemm_tn(weights.data(), g, d.f, k, p, &mut gcols);
        let mut gi = vec![0.0; d.c * d.h * d.w];
        col2im(&gcols, &d, geom, &mut gi);
        (gi, gw, gb)
    });

    let mut grad_w = vec![0.0; d.f * k];
    let mut grad_b = vec![0.0; d.f];
    let mut grad_in = Vec::with_capacity(input.len());
    for (gi, gw, gb) in partials {
        grad_in.extend_from_slice(&gi);
        grad_w.iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
        grad_b.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_in)?,
        weights: Tensor::new(weights.shape().to_vec(), grad_w)?,
        bias: Tensor::new(vec![d.f], grad_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_identity() {
        let input = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 1, 1], 2.0);
        let b = Tensor::zeros(&[1]);
        let out = conv2d_forward(
            &input,
            &w,
            &b,
            &ConvGeometry::square(1, 1, 0),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn strided_box_filter() {
        let input = Tensor::from_fn(&[1, 1, 4, 4], |i| (i[2] * 4 + i[3]) as f64);
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let b = Tensor::zeros(&[1]);
        let out = conv2d_forward(
            &input,
            &w,
            &b,
            &ConvGeometry::square(2, 2, 0),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[10.0, 18.0, 42.0, 50.0]);
    }

    #[test]
    fn dirac_kernel_is_identity() {
        let input = Tensor::from_fn(&[2, 2, 5, 4], |i| {
            (i[0] * 97 + i[1] * 13 + i[2] * 5 + i[3]) as f64 * 0.25
        });
        let mut w = Tensor::zeros(&[2, 2, 3, 3]);
        w.set(&[0, 0, 1, 1], 1.0).unwrap();
        w.set(&[1, 1, 1, 1], 1.0).unwrap();
        let out = conv2d_forward(
            &input,
            &w,
            &Tensor::zeros(&[2]),
            &ConvGeometry::same(3),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let input = Tensor::from_fn(&[1, 2, 4, 4], |i| i.iter().sum::<usize>() as f64);
        let w = Tensor::full(&[3, 2, 3, 3], 0.5);
        let geom = ConvGeometry::same(3);
        let g = conv2d_backward(
            &Tensor::zeros(&[1, 3, 4, 4]),
            &input,
            &w,
            &geom,
            Exec::Sequential,
        )
        .unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_product_rule() {
        let (wv, xv, gv) = (1.5, -2.0, 3.0);
        let input = Tensor::full(&[1, 1, 1, 1], xv);
        let w = Tensor::full(&[1, 1, 1, 1], wv);
        let g = conv2d_backward(
            &Tensor::full(&[1, 1, 1, 1], gv),
            &input,
            &w,
            &ConvGeometry::square(1, 1, 0),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(g.weights.data(), &[gv * xv]);
        assert_eq!(g.input.data(), &[gv * wv]);
        assert_eq!(g.bias.data(), &[gv]);
    }

    #[test]
    fn shape_and_geometry_errors() {
        let input = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(matches!(
            conv2d_forward(&input, &w, &b, &ConvGeometry::same(3), Exec::Sequential),
            Err(Error::Shape(_))
        ));
        let w = Tensor::zeros(&[1, 2, 5, 5]);
        assert!(matches!(
            conv2d_forward(
                &input,
                &w,
                &b,
                &ConvGeometry::square(5, 1, 0),
                Exec::Sequential
            ),
            Err(Error::Geometry(_))
        ));
        assert!(ConvGeometry::square(2, 0, 0).output_dims(4, 4).is_err());
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let input = Tensor::from_fn(&[5, 2, 7, 6], |i| {
            ((i[0] * 31 + i[1] * 7 + i[2] * 3 + i[3]) % 11) as f64 * 0.37 - 1.0
        });
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| {
            ((i[0] + 2 * i[1] + 3 * i[2] + 5 * i[3]) % 7) as f64 * 0.11 - 0.3
        });
        let b = Tensor::from_fn(&[3], |i| i[0] as f64);
        let geom = ConvGeometry::square(3, 2, 1);
        let a = conv2d_forward(&input, &w, &b, &geom, Exec::Sequential).unwrap();
        let c = conv2d_forward(&input, &w, &b, &geom, Exec::Parallel).unwrap();
        assert_eq!(a, c);
        let ga = conv2d_backward(&a, &input, &w, &geom, Exec::Sequential).unwrap();
        let gc = conv2d_backward(&a, &input, &w, &geom, Exec::Parallel).unwrap();
        assert_eq!(ga, gc);
    }
}
