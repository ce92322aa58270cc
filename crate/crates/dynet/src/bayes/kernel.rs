//! Prior covariance over AR coefficient vectors.
//!
//! Each connection's coefficients get a tuned/correlated (TC) kernel
//! `K[k, l] = scale * decay^max(k, l)` over 1-based lags, which shrinks
//! higher lags geometrically and thereby encodes a stable impulse response.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-edge prior hyperparameters: amplitude and geometric lag decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeKernelParams {
    /// Amplitude `lambda >= 0`; zero switches the edge off.
    pub scale: f64,
    /// Decay `beta` in (0, 1).
    pub decay: f64,
}

impl EdgeKernelParams {
    pub fn new(scale: f64, decay: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel scale must be finite and nonnegative, got {scale}"
            )));
        }
        if !(decay.is_finite() && 0.0 < decay && decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel decay must lie in (0, 1), got {decay}"
            )));
        }
        Ok(Self { scale, decay })
    }
}

/// TC kernel matrix `K[k, l] = scale * decay^max(k, l)` for lags `1..=order`.
pub fn kernel_matrix(params: &EdgeKernelParams, order: usize) -> DMatrix<f64> {
    DMatrix::from_fn(order, order, |k, l| {
        params.scale * params.decay.powi(k.max(l) as i32 + 1)
    })
}
