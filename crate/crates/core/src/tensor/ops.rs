//! Elementwise activations, dense layers, flatten and the small GEMM
//! kernels shared with convolution.

use super::Tensor;
use crate::{Error, Result};

/// `out[m×n] += a[m×k] · b[k×n]`; each output accumulates in ascending `k`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[m×n] += a[inner×m]ᵀ · b[inner×n]`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], inner: usize, m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), inner * m);
    debug_assert_eq!(b.len(), inner * n);
    for r in 0..inner {
        let arow = &a[r * m..(r + 1) * m];
        let brow = &b[r * n..(r + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Plain 2D matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Passes the gradient where `input > 0`; the derivative at 0 is taken as 0.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != input.shape() {
        return Err(Error::Shape(format!(
            "relu backward: grad {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// `input[N,D] · weights[D,M] + bias[M]`, bias broadcast over rows.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_dense(input, weights)?;
    let m = weights.shape()[1];
    if bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "dense: bias shape {:?} should be [{m}]",
            bias.shape()
        )));
    }
    let mut out = matmul(input, weights)?;
    for row in out.data_mut().chunks_exact_mut(m) {
        row.iter_mut().zip(bias.data()).for_each(|(o, b)| *o += b);
    }
    Ok(out)
}

fn check_dense(input: &Tensor, weights: &Tensor) -> Result<()> {
    input.expect_rank(2, "dense input")?;
    weights.expect_rank(2, "dense weights")?;
    if input.shape()[1] != weights.shape()[0] {
        return Err(Error::Shape(format!(
            "dense: input width {} does not match weight rows {}",
            input.shape()[1],
            weights.shape()[0]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(grad_out: &Tensor, input: &Tensor, weights: &Tensor) -> Result<DenseGrads> {
    check_dense(input, weights)?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let m = weights.shape()[1];
    if grad_out.shape() != [n, m] {
        return Err(Error::Shape(format!(
            "dense backward: grad_out {:?} should be [{n}, {m}]",
            grad_out.shape()
        )));
    }
    let mut gi = vec![0.0; n * d];
    gemm_nt(grad_out.data(), weights.data(), n, m, d, &mut gi);
    let mut gw = vec![0.0; d * m];
    gemm_tn(input.data(), grad_out.data(), n, d, m, &mut gw);
    let mut gb = vec![0.0; m];
    for row in grad_out.data().chunks_exact(m) {
        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    Ok(DenseGrads {
        input: Tensor::new(vec![n, d], gi)?,
        weights: Tensor::new(vec![d, m], gw)?,
        bias: Tensor::new(vec![m], gb)?,
    })
}

/// `[N, ...] -> [N, prod(...)]`, data order untouched.
pub fn flatten(input: &Tensor) -> Tensor {
    let n = input.shape()[0];
    let rest = input.len() / n;
    Tensor::new(vec![n, rest], input.data().to_vec()).expect("element count preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::full(&[3], 5.0);
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 5.0]);
        assert!(relu_backward(&Tensor::zeros(&[2]), &x).is_err());
    }

    #[test]
    fn dense_affine() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2], vec![10.0, 10.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[11.0, 12.0]);
        assert_eq!(dense_forward(&x, &w, &Tensor::zeros(&[2])).unwrap(), x);
    }

    #[test]
    fn dense_dimension_mismatch() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(matches!(
            dense_forward(&x, &w, &Tensor::zeros(&[2])),
            Err(Error::Shape(_))
        ));
        assert!(dense_backward(&Tensor::zeros(&[1, 2]), &x, &w).is_err());
    }

    #[test]
    fn flatten_examples() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = flatten(&t);
        assert_eq!(f.shape(), &[1, 4]);
        assert_eq!(f.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.reshape(vec![1, 1, 2, 2]).unwrap(), t);

        let t = Tensor::from_fn(&[2, 3, 4, 5], |i| {
            (i[0] * 1000 + i[1] * 100 + i[2] * 10 + i[3]) as f64
        });
        let f = flatten(&t);
        assert_eq!(f.shape(), &[2, 60]);
        for n in 0..2 {
            for c in 0..3 {
                for h in 0..4 {
                    for w in 0..5 {
                        assert_eq!(
                            f.get(&[n, c * 20 + h * 5 + w]).unwrap(),
                            t.get(&[n, c, h, w]).unwrap()
                        );
                    }
                }
            }
        }
    }
}
