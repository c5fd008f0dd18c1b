//! 2D resampling with the half-pixel (align-corners = false) convention.

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interpolation::Bilinear => "bilinear",
            Interpolation::Nearest => "nearest",
        })
    }
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bilinear" | "linear" => Ok(Interpolation::Bilinear),
            "nearest" => Ok(Interpolation::Nearest),
            other => Err(Error::Config(format!("unknown interpolation `{other}`"))),
        }
    }
}

/// Source coordinate of destination pixel `dst`: `(dst + 0.5) * scale - 0.5`.
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    (dst as f64 + 0.5) * (src_len as f64 / dst_len as f64) - 0.5
}

/// Linear taps `(lo, hi, weight_of_hi)` per destination index, edge-clamped.
fn linear_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    (0..dst_len)
        .map(|d| {
            let c = source_coord(d, src_len, dst_len).clamp(0.0, (src_len - 1) as f64);
            let lo = c.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, c - lo as f64)
        })
        .collect()
}

/// Nearest source index per destination index. Exact half-way ties round
/// away from the image center, which keeps the mapping mirror-symmetric.
fn nearest_taps(src_len: usize, dst_len: usize) -> Vec<usize> {
    let center = (src_len as f64 - 1.0) / 2.0;
    (0..dst_len)
        .map(|d| {
            let c = source_coord(d, src_len, dst_len);
            let f = c.floor();
            let frac = c - f;
            let r = if frac < 0.5 {
                f
            } else if frac > 0.5 || c >= center {
                f + 1.0
            } else {
                f
            };
            r.clamp(0.0, (src_len - 1) as f64) as usize
        })
        .collect()
}

pub fn resize_slice(
    slice: &Tensor,
    target: (usize, usize),
    interpolation: Interpolation,
) -> Result<Tensor> {
    slice.expect_rank(2, "slice")?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::Geometry(format!(
            "resize target {th}x{tw} must be at least 1x1"
        )));
    }
    let (h, w) = (slice.shape()[0], slice.shape()[1]);
    let src = slice.data();
    let mut out = Vec::with_capacity(th * tw);
    match interpolation {
        Interpolation::Nearest => {
            let ys = nearest_taps(h, th);
            let xs = nearest_taps(w, tw);
            for &y in &ys {
                out.extend(xs.iter().map(|&x| src[y * w + x]));
            }
        }
        Interpolation::Bilinear => {
            let ys = linear_taps(h, th);
            let xs = linear_taps(w, tw);
            for &(y0, y1, ty) in &ys {
                for &(x0, x1, tx) in &xs {
                    let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
                    let bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
                    out.push(top * (1.0 - ty) + bottom * ty);
                }
            }
        }
    }
    Tensor::new(vec![th, tw], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let s = Tensor::from_fn(&[5, 7], |i| (i[0] * 7 + i[1]) as f64 * 0.1);
        for mode in [Interpolation::Bilinear, Interpolation::Nearest] {
            assert_eq!(resize_slice(&s, (5, 7), mode).unwrap(), s);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let s = Tensor::full(&[6, 4], 0.625);
        for mode in [Interpolation::Bilinear, Interpolation::Nearest] {
            for target in [(1, 1), (3, 9), (13, 2), (300, 300)] {
                let r = resize_slice(&s, target, mode).unwrap();
                assert!(r.data().iter().all(|&v| v == 0.625), "{mode} {target:?}");
            }
        }
    }

    #[test]
    fn two_by_two_upsample() {
        // Hand-evaluated: destination rows sample source rows at
        // -0.25 (clamped to 0), 0.25, 0.75 and 1.25 (clamped to 1).
        let s = Tensor::new(vec![2, 2], vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let r = resize_slice(&s, (4, 4), Interpolation::Bilinear).unwrap();
        let rows = [0.0, 0.5, 1.5, 2.0];
        for (y, &v) in rows.iter().enumerate() {
            for x in 0..4 {
                assert_eq!(r.get(&[y, x]).unwrap(), v);
            }
        }
    }

    #[test]
    fn nearest_is_mirror_symmetric() {
        assert_eq!(nearest_taps(4, 2), vec![0, 3]);
        assert_eq!(nearest_taps(2, 4), vec![0, 0, 1, 1]);
        let t = nearest_taps(7, 3);
        assert_eq!(t, vec![1, 3, 5]);
        assert!(resize_slice(&Tensor::zeros(&[2, 2]), (0, 3), Interpolation::Nearest).is_err());
    }
}
