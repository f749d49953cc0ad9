//! From-scratch encoder-decoder convolutional network for dense
//! path-loss regression ("PLNet").
//!
//! The architecture is a small U-Net: a chain of stride-2 3x3
//! convolutions (each halving the resolution and doubling the channel
//! count) followed by a chain of stride-2 transposed convolutions that
//! mirror it back up, with skip connections concatenating each encoder
//! activation into the matching decoder stage, and a linear 3x3 head
//! producing one output channel. The raw head output is an affine-
//! normalized path loss; the network denormalizes with fixed constants
//! carried in [`ArchSpec`] so predictions are in dB.
//!
//! Everything — convolutions, transposed convolutions, ReLU, masked
//! losses, Adam, weight init, gradient checking — is implemented here
//! directly over flat `Vec<T>` buffers, generic in the scalar type so the
//! same code trains in `f32` and gradient-checks in `f64`.

mod gradcheck;
mod io;
mod loss;
mod model;
mod ops;
mod optim;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use io::{load_weights, save_weights};
pub use loss::{masked_loss, pooled_rmse, LossKind, RmseAccumulator};
pub use model::{ForwardCache, ModelGradients, ModelWeights};
pub use ops::{
    concat_channels, conv_backward, conv_forward, deconv_backward, deconv_forward, relu_backward,
    relu_forward, split_channels, ConvParams, DeconvParams,
};
pub use optim::{adam_step, AdamConfig, AdamState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::InputTensor;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed weights file: {message}")]
    Format { path: String, message: String },
}

/// Scalar element type of network buffers: `f32` for training speed,
/// `f64` for gradient checking. Arithmetic comes from `num_traits::Float`.
pub trait Scalar: num_traits::Float + Default + std::fmt::Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}

/// Dense channel-major (C, H, W) activation buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Result<Self, NetError> {
        if data.len() != channels * height * width {
            return Err(NetError::ShapeMismatch(format!(
                "expected {} elements for ({channels}, {height}, {width}), got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Convert a scene input tensor into a network input buffer.
    pub fn from_input_tensor(tensor: &InputTensor) -> Self {
        Self {
            channels: crate::tensor::CHANNELS,
            height: tensor.height(),
            width: tensor.width(),
            data: tensor.data().iter().map(|&v| T::from_f64(v)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, c: usize, h: usize, w: usize) -> T {
        self.data[(c * self.height + h) * self.width + w]
    }

    #[inline]
    pub fn set(&mut self, c: usize, h: usize, w: usize, v: T) {
        self.data[(c * self.height + h) * self.width + w] = v;
    }

    /// Contiguous slice holding one channel plane.
    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Network architecture hyperparameters plus the fixed output
/// denormalization (prediction = raw * pl_scale_db + pl_offset_db).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub pl_offset_db: f64,
    pub pl_scale_db: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            in_channels: crate::tensor::CHANNELS,
            base_channels: 16,
            depth: 4,
            pl_offset_db: 120.0,
            pl_scale_db: 40.0,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.depth < 2 {
            return Err(NetError::InvalidArch(format!(
                "depth {} must be at least 2",
                self.depth
            )));
        }
        if self.base_channels == 0 || self.in_channels == 0 {
            return Err(NetError::InvalidArch(
                "channel counts must be positive".into(),
            ));
        }
        if self.pl_scale_db == 0.0
            || !self.pl_scale_db.is_finite()
            || !self.pl_offset_db.is_finite()
        {
            return Err(NetError::InvalidArch(
                "denormalization constants must be finite with nonzero scale".into(),
            ));
        }
        // keep channel counts within sane bounds: base * 2^(depth-1)
        if self.depth > 16 {
            return Err(NetError::InvalidArch(format!(
                "depth {} is unreasonably large",
                self.depth
            )));
        }
        Ok(())
    }

    /// Input resolutions must be divisible by this.
    pub fn resolution_multiple(&self) -> usize {
        1 << self.depth
    }

    /// (in, out) channel pairs of the encoder convolutions, shallow first.
    pub fn encoder_channels(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|k| {
                let cin = if k == 0 {
                    self.in_channels
                } else {
                    self.base_channels << (k - 1)
                };
                (cin, self.base_channels << k)
            })
            .collect()
    }

    /// (in, out) channel pairs of the decoder transposed convolutions,
    /// deepest first. Stage s >= 1 consumes the previous stage's output
    /// concatenated with the skip activation from encoder level
    /// depth-1-s, so its input channel count is twice its skip width.
    pub fn decoder_channels(&self) -> Vec<(usize, usize)> {
        let d = self.depth;
        (0..d)
            .map(|s| {
                let cin = if s == 0 {
                    self.base_channels << (d - 1)
                } else {
                    2 * (self.base_channels << (d - 1 - s))
                };
                let cout = self.base_channels << (d - 2).saturating_sub(s);
                (cin, cout)
            })
            .collect()
    }

    /// Encoder level whose activation is concatenated after decoder
    /// stage `s` (none after the last stage).
    pub fn skip_source(&self, s: usize) -> Option<usize> {
        if s + 2 <= self.depth {
            Some(self.depth - 2 - s)
        } else {
            None
        }
    }
}
