//! Max-pooling with recorded argmax positions.

use super::{ConvGeometry, Tensor};
use crate::{Error, Result};

/// Flat input offsets of each output cell's maximum, in output order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Window maximum per output cell. Ties resolve to the first maximal element
/// in row-major window order. Padded positions never win.
pub fn maxpool_forward(input: &Tensor, geom: &ConvGeometry) -> Result<(Tensor, PoolIndices)> {
    input.expect_rank(4, "maxpool input")?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if geom.pad_h >= geom.kernel_h || geom.pad_w >= geom.kernel_w {
        return Err(Error::Geometry(
            "maxpool padding must be smaller than the window".into(),
        ));
    }
    let (oh, ow) = geom.output_dims(h, w)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut indices = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<(f64, usize)> = None;
                for i in 0..geom.kernel_h {
                    let iy = (oy * geom.stride_h + i) as isize - geom.pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for j in 0..geom.kernel_w {
                        let ix = (ox * geom.stride_w + j) as isize - geom.pad_w as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let off = base + iy as usize * w + ix as usize;
                        if best.is_none_or(|(v, _)| x[off] > v) {
                            best = Some((x[off], off));
                        }
                    }
                }
                let (v, off) = best.ok_or_else(|| {
                    Error::Geometry("maxpool window lies entirely in padding".into())
                })?;
                out.push(v);
                indices.push(off);
            }
        }
    }
    Ok((
        Tensor::new(vec![n, c, oh, ow], out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            indices,
        },
    ))
}

/// Routes each output gradient to its recorded argmax; overlapping windows
/// accumulate.
pub fn maxpool_backward(
    grad_out: &Tensor,
    argmax: &PoolIndices,
    input_shape: &[usize],
) -> Result<Tensor> {
    if argmax.input_shape != input_shape {
        return Err(Error::Internal(format!(
            "pool indices were recorded for {:?}, not {input_shape:?}",
            argmax.input_shape
        )));
    }
    if argmax.indices.len() != grad_out.len() {
        return Err(Error::Internal(format!(
            "{} pool indices for {} output gradients",
            argmax.indices.len(),
            grad_out.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let len = grad.len();
    let g = grad.data_mut();
    for (&idx, &go) in argmax.indices.iter().zip(grad_out.data()) {
        if idx >= len {
            return Err(Error::Internal(format!(
                "pool index {idx} outside input of {len} elements"
            )));
        }
        g[idx] += go;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_four() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool_forward(&x, &ConvGeometry::square(2, 2, 0)).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.indices, vec![3]);
    }

    #[test]
    fn ties_pick_first_in_window() {
        let x = Tensor::full(&[1, 1, 4, 4], 7.0);
        let (y, idx) = maxpool_forward(&x, &ConvGeometry::square(2, 2, 0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert_eq!(idx.indices, vec![0, 2, 8, 10]);
    }

    #[test]
    fn routing_one_per_window() {
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| {
            ((i[1] * 5 + i[2] * 3 + i[3] * 7) % 11) as f64
        });
        let (y, idx) = maxpool_forward(&x, &ConvGeometry::square(2, 2, 0)).unwrap();
        let g = maxpool_backward(&Tensor::full(y.shape(), 1.0), &idx, x.shape()).unwrap();
        assert_eq!(g.data().iter().sum::<f64>(), 8.0);
        for c in 0..2 {
            for wy in 0..2 {
                for wx in 0..2 {
                    let mut ones = 0;
                    for i in 0..2 {
                        for j in 0..2 {
                            ones +=
                                (g.get(&[0, c, wy * 2 + i, wx * 2 + j]).unwrap() == 1.0) as usize;
                        }
                    }
                    assert_eq!(ones, 1);
                }
            }
        }
        let z = maxpool_backward(&Tensor::zeros(y.shape()), &idx, x.shape()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlapping_windows_accumulate() {
        let x = Tensor::new(vec![1, 1, 1, 3], vec![0.0, 5.0, 1.0]).unwrap();
        let geom = ConvGeometry {
            kernel_h: 1,
            kernel_w: 2,
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
        };
        let (y, idx) = maxpool_forward(&x, &geom).unwrap();
        assert_eq!(y.data(), &[5.0, 5.0]);
        let g = maxpool_backward(&Tensor::full(&[1, 1, 1, 2], 1.0), &idx, x.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn corrupt_indices_are_internal_errors() {
        let bad = PoolIndices {
            input_shape: vec![1, 1, 2, 2],
            indices: vec![9],
        };
        assert!(matches!(
            maxpool_backward(&Tensor::zeros(&[1, 1, 1, 1]), &bad, &[1, 1, 2, 2]),
            Err(Error::Internal(_))
        ));
        assert!(matches!(
            maxpool_backward(&Tensor::zeros(&[1, 1, 1, 1]), &bad, &[1, 1, 3, 3]),
            Err(Error::Internal(_))
        ));
    }
}
