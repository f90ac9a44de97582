//! The planar tracking scenario used throughout the test-suite and the example configs:
//! a double integrator per axis, position measured, two detectors.

use crate::linalg::{Mat, Vector};
use crate::model::{ContinuousModel, PerceptionMethod};

pub const CAMERA_PERIOD: f64 = 1.0 / 30.0;

/// State `[x, v_x, y, v_y]`, white-noise acceleration on both velocities.
pub fn tracking_model() -> ContinuousModel {
    #[rustfmt::skip]
    let a = Mat::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, 0.0, 0.0,
    ]);
    #[rustfmt::skip]
    let b = Mat::from_row_slice(4, 2, &[
        0.0, 0.0,
        1.0, 0.0,
        0.0, 0.0,
        0.0, 1.0,
    ]);
    #[rustfmt::skip]
    let c = Mat::from_row_slice(2, 4, &[
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    ]);
    ContinuousModel {
        a,
        b,
        w: Mat::from_diagonal_element(2, 2, 0.5),
        c,
        x0: Vector::zeros(4),
        p0: Mat::from_diagonal_element(4, 4, 4.0),
        dt_s: CAMERA_PERIOD,
    }
}

/// Fast detector (3 frames, R = 0.5 I, 50% CPU) and accurate detector
/// (9 frames, R = 0.05 I, 80% CPU), penalised by their CPU time.
pub fn tracking_methods() -> Vec<PerceptionMethod> {
    let spec = [(3u32, 0.5, 0.5), (9u32, 0.05, 0.8)];
    spec.iter()
        .enumerate()
        .map(|(i, &(steps, r, cpu))| {
            let penalty = PerceptionMethod::load_attention_penalty(steps, cpu, CAMERA_PERIOD, 1.0, 0.0);
            PerceptionMethod::new(i + 1, steps, Mat::from_diagonal_element(2, 2, r), cpu, penalty)
        })
        .collect()
}

/// Detectors for pixel tracking: a fast network on every frame, a slow network spanning
/// three frames, and the fast network followed by four skipped frames.
pub fn pixel_methods() -> Vec<PerceptionMethod> {
    let fast = Mat::from_diagonal(&Vector::from_vec(vec![13.12f64.powi(2), 25.87f64.powi(2)]));
    let slow = Mat::from_diagonal(&Vector::from_vec(vec![9.94f64.powi(2), 17.06f64.powi(2)]));
    let pen = |steps, cpu| PerceptionMethod::load_attention_penalty(steps, cpu, CAMERA_PERIOD, 0.5, 0.5);
    vec![
        PerceptionMethod::new(1, 1, fast.clone(), 1.0, pen(1, 1.0)),
        PerceptionMethod::new(2, 3, slow, 0.78, pen(3, 0.78)),
        PerceptionMethod::new(3, 5, fast, 0.2, pen(5, 0.2)),
    ]
}

/// Planar single integrator (`A = 0`, `B = C = I`) for pixel-position tracking.
pub fn pixel_model(w: f64) -> ContinuousModel {
    ContinuousModel {
        a: Mat::zeros(2, 2),
        b: Mat::identity(2, 2),
        w: Mat::from_diagonal_element(2, 2, w),
        c: Mat::identity(2, 2),
        x0: Vector::zeros(2),
        p0: Mat::identity(2, 2),
        dt_s: CAMERA_PERIOD,
    }
}
