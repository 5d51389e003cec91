//! Fixtures shared by the benchmarks.

use dqlq_core::{Matrix, NoiseModel, SystemModel};

pub fn reference_system() -> SystemModel {
    let m = |r, c, d: &[f64]| Matrix::from_row_slice(r, c, d);
    SystemModel::new(
        m(2, 2, &[0.2, 0.0, 0.0, 0.6]),
        m(2, 2, &[0.7, 0.0, 0.0, 0.8]),
        m(2, 1, &[0.7, 0.3]),
        m(2, 1, &[0.1, 0.7]),
        m(2, 2, &[0.4, 0.0, 0.0, 0.7]),
        m(1, 1, &[1.0]),
    )
    .expect("reference system is valid")
}

pub fn reference_noise() -> NoiseModel {
    NoiseModel::new(1.0, 0.1).expect("reference noise is valid")
}
