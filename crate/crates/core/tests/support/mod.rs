//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use vitactip::mechanics::DeformationState;
use vitactip::sensor::{build_sensor, vitactip_preset, SensorModel, SensorSpec, Vec3};

/// A few hundred nodes, for finite-difference checks.
pub fn small_model() -> SensorModel {
    let spec = SensorSpec {
        dome_radius_mm: 8.0,
        pin_rings: 1,
        ring_light_radius_mm: 3.0,
        ..vitactip_preset()
    };
    let m = build_sensor(&spec).unwrap();
    assert!(m.node_count() <= 500, "{} nodes", m.node_count());
    m
}

/// Synthetic contact state with random penetrations, normals and stretches.
pub fn random_state(model: &SensorModel, values: &[(f64, f64, f64, f64, f64)]) -> DeformationState {
    let mut state = DeformationState::rest(model);
    let stride = model.node_count() / values.len();
    for (k, &(pen, nx, ny, sx, sy)) in values.iter().enumerate() {
        let i = k * stride;
        state.penetration[i] = pen;
        state.contact_normal[i] = Vec3::new(nx, ny, -1.0).normalize();
        state.friction_stretch[i] = Vec3::new(sx, sy, 0.0);
    }
    state
}

/// Dominant spatial frequency (cycles/mm) of the node displacement magnitude
/// along x, sampled in 0.25 mm bins over a central strip. The indentation
/// envelope is removed first by subtracting a Gaussian-smoothed copy.
pub fn displacement_frequency(model: &SensorModel, state: &DeformationState) -> (f64, f64) {
    const BIN: f64 = 0.25;
    const HALF: f64 = 8.0;
    let n = (2.0 * HALF / BIN) as usize;
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (i, p) in model.planar.iter().enumerate() {
        if p[1].abs() > 1.0 || p[0].abs() >= HALF {
            continue;
        }
        let b = ((p[0] + HALF) / BIN) as usize;
        sums[b] += state.node_displacements[i].norm();
        counts[b] += 1;
    }
    let profile: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let sigma = 1.5 / BIN;
    let baseline: Vec<f64> = (0..n)
        .map(|i| {
            let (mut s, mut w) = (0.0, 0.0);
            for (j, v) in profile.iter().enumerate() {
                let k = (-((i as f64 - j as f64) / sigma).powi(2) / 2.0).exp();
                s += k * v;
                w += k;
            }
            s / w
        })
        .collect();
    let mut buf: Vec<Complex<f64>> = profile.iter().zip(&baseline).map(|(v, b)| Complex::new(v - b, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let peak = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
    let df = 1.0 / (n as f64 * BIN);
    (peak as f64 * df, df)
}

