#![allow(dead_code)]

use dqlq_core::{Matrix, NoiseModel, SystemModel};

pub fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, data)
}

/// Four-sensor numerical example: two states, one input.
pub fn reference_system() -> SystemModel {
    SystemModel::new(
        m(2, 2, &[0.2, 0., 0., 0.6]),
        m(2, 2, &[0.7, 0., 0., 0.8]),
        m(2, 1, &[0.7, 0.3]),
        m(2, 1, &[0.1, 0.7]),
        m(2, 2, &[0.4, 0., 0., 0.7]),
        m(1, 1, &[1.0]),
    )
    .unwrap()
}

pub fn reference_noise() -> NoiseModel {
    NoiseModel::new(1.0, 0.1).unwrap()
}

pub fn scalar_system(a: f64, ab: f64, b: f64, bb: f64, q: f64, r: f64) -> SystemModel {
    SystemModel::new(
        m(1, 1, &[a]),
        m(1, 1, &[ab]),
        m(1, 1, &[b]),
        m(1, 1, &[bb]),
        m(1, 1, &[q]),
        m(1, 1, &[r]),
    )
    .unwrap()
}

/// G* for the reference problem, from an independent numpy Picard iteration
/// stopped at ‖ΔG‖_F < 1e-13.
pub const REFERENCE_G_STAR: [f64; 9] = [
    2.294761014728361,
    -3.070361272949228,
    -0.6105144361982194,
    -3.070361272949228,
    11.38986732658197,
    5.058205850778374,
    -0.6105144361982194,
    5.058205850778374,
    4.188627737833243,
];
pub const REFERENCE_P: [f64; 4] = [
    2.205775337285648,
    -2.333101271238033,
    -2.333101271238033,
    5.281555003251988,
];
pub const REFERENCE_K_STAR: [f64; 2] = [0.14575523880621477, -1.2076045347956752];

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
