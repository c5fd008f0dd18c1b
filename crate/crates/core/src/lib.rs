//! A from-scratch convolutional network pipeline for three-class
//! (NC / MCI / AD) classification of 2D MRI slices.
//!
//! The crate covers the whole path from raw volumes to an evaluation report:
//!
//! - [`tensor`]: dense `f64` arrays and the hand-differentiated layer kernels
//!   (im2col convolution, max-pooling, ReLU, dense, flatten).
//! - [`nifti`]: NIfTI-1 reading and writing plus plane extraction.
//! - [`preprocess`]: intensity normalization, resizing, slice selection,
//!   dataset assembly, stratified splitting and the on-disk slice corpus.
//! - [`network`]: architecture specs (Deep ConvNet, scaled AlexNet and
//!   VGG-16), softmax / cross-entropy math, RMSProp and checkpoints.
//! - [`training`]: the training loop, class weighting and evaluation
//!   (confusion matrix, one-vs-rest ROC, curves).
//! - [`synth`]: seeded phantom volumes standing in for real scans.
//! - [`gradcheck`]: finite-difference verification of a whole network.
//!
//! ```
//! use mricnn::network::{cross_entropy, softmax};
//! use mricnn::tensor::Tensor;
//!
//! let logits = Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap();
//! let p = softmax(&logits).unwrap();
//! let t = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
//! let loss = cross_entropy(&p, &t).unwrap();
//! assert!((loss - 3f64.ln()).abs() < 1e-12);
//! ```

pub mod error;
pub mod gradcheck;
pub mod hash;
pub mod kv;
pub mod network;
pub mod nifti;
pub mod preprocess;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// The three diagnostic classes, in the index order used by every
/// confusion matrix and probability row.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum ClassLabel {
    NC,
    MCI,
    AD,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::NC, ClassLabel::MCI, ClassLabel::AD];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::Label(format!("class index {index} outside 0..{}", Self::COUNT)))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::NC => "NC",
            ClassLabel::MCI => "MCI",
            ClassLabel::AD => "AD",
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NC" | "CN" => Ok(ClassLabel::NC),
            "MCI" => Ok(ClassLabel::MCI),
            "AD" => Ok(ClassLabel::AD),
            other => Err(Error::Label(format!("unknown class label `{other}`"))),
        }
    }
}
