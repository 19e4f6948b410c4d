//! Constant-velocity Kalman filtering of object centers and the motion-offset
//! maps that make the search feature motion-aware.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::numkernel::{concat_channels, Tensor};
use crate::{Error, Result};

/// Noise model, in grid cells² (and cells²/frame² for velocity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    pub process_noise: [f64; 4],
    pub measurement_noise: [f64; 2],
    pub initial_covariance: [f64; 4],
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            process_noise: [1.0, 1.0, 0.25, 0.25],
            measurement_noise: [1.0, 1.0],
            initial_covariance: [10.0, 10.0, 100.0, 100.0],
        }
    }
}

/// Mean `(cx, cy, vx, vy)` and its covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl KalmanState {
    pub fn center(&self) -> (f64, f64) {
        (self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[2], self.mean[3])
    }
}

fn transition() -> Matrix4<f64> {
    let mut a = Matrix4::identity();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    a
}

fn observation() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

pub fn kf_init(center: (f64, f64), config: &KalmanConfig) -> KalmanState {
    KalmanState {
        mean: Vector4::new(center.0, center.1, 0.0, 0.0),
        covariance: Matrix4::from_diagonal(&Vector4::from(config.initial_covariance)),
    }
}

/// One-frame prediction; returns the advanced state and the predicted center `m`.
pub fn kf_predict(state: &KalmanState, config: &KalmanConfig) -> Result<(KalmanState, (f64, f64))> {
    if !state.mean.iter().chain(state.covariance.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("kalman state"));
    }
    let a = transition();
    let q = Matrix4::from_diagonal(&Vector4::from(config.process_noise));
    let mean = a * state.mean;
    let p = a * state.covariance * a.transpose() + q;
    let next = KalmanState { mean, covariance: symmetrize(p) };
    let m = next.center();
    Ok((next, m))
}

/// Joseph-form correction with a measured center.
pub fn kf_update(state: &KalmanState, measured: (f64, f64), config: &KalmanConfig) -> Result<KalmanState> {
    if !measured.0.is_finite() || !measured.1.is_finite() {
        return Err(Error::NonFinite("kalman measurement"));
    }
    let h = observation();
    let r = Matrix2::from_diagonal(&Vector2::from(config.measurement_noise));
    let p = &state.covariance;
    let s = h * p * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular innovation covariance".into()))?;
    let k = p * h.transpose() * s_inv;
    let innovation = Vector2::new(measured.0, measured.1) - h * state.mean;
    let mean = state.mean + k * innovation;
    let i_kh = Matrix4::identity() - k * h;
    let cov = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    Ok(KalmanState { mean, covariance: symmetrize(cov) })
}

fn symmetrize(p: Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

/// `O(p) = p − m` over an `H×W` grid: channel 0 the x-offset, channel 1 the y-offset.
pub fn build_motion_map(m: (f64, f64), height: usize, width: usize) -> Tensor {
    let mut o = Tensor::zeros(&[2, height, width]);
    for y in 0..height {
        for x in 0..width {
            o.set3(0, y, x, x as f64 - m.0);
            o.set3(1, y, x, y as f64 - m.1);
        }
    }
    o
}

/// `F̃ = [O; F]`, motion channels first.
pub fn make_motion_aware(search_features: &Tensor, motion: &Tensor) -> Result<Tensor> {
    let (mc, _, _) = motion.dims3()?;
    if mc != 2 {
        return Err(Error::shape("motion map", format!("expected 2 channels, got {mc}")));
    }
    concat_channels(motion, search_features)
}
