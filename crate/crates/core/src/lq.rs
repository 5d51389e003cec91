//! Deterministic LQ mathematics for systems with scalar multiplicative noise.
//!
//! The plant is `x(k+1) = (A + Ā ω(k)) x(k) + (B + B̄ ω(k)) u(k)` with stage
//! cost `xᵀQx + uᵀRu`. A Q-factor `G` is the symmetric `(n+m)×(n+m)` matrix
//! whose Schur complement recovers the value matrix `P` and whose lower
//! blocks recover the optimal gain. Everything here is a pure function.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff for the pseudo-inverse.
pub const DEFAULT_PINV_TOL: f64 = 1e-12;
/// Tolerance for symmetry assertions on Q-factors.
pub const SYM_TOL: f64 = 1e-9;
pub const DEFAULT_ORACLE_TOL: f64 = 1e-12;
pub const DEFAULT_ORACLE_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} must be {rows}x{cols}, got {got_rows}x{got_cols}")]
    Shape {
        name: &'static str,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("{0} must be positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("{0} must be symmetric")]
    NotSymmetric(&'static str),
    #[error("{0} contains a non-finite entry")]
    NonFinite(&'static str),
    #[error("noise variance must be non-negative and finite, got {0}")]
    BadVariance(f64),
    #[error("noise mean must be finite, got {0}")]
    BadMean(f64),
    #[error("Q-factor must be square with 0 < n < dim, got {rows}x{cols} with n = {n}")]
    QFactorShape { rows: usize, cols: usize, n: usize },
    #[error("Q-factor asymmetry {0:e} exceeds tolerance")]
    QFactorAsymmetric(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LqError {
    #[error("inner matrix BᵀPB + ... + R is singular")]
    SingularInnerMatrix,
    #[error("oracle tolerance must be positive and max_iter at least 1")]
    BadOracleSettings,
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("oracle gain is not mean-square stabilizing (spectral radius {spectral_radius})")]
    NotStabilizing {
        spectral_radius: f64,
        solution: Box<OracleSolution>,
    },
}

/// Constant matrices of the plant and the cost weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: Matrix,
    a_bar: Matrix,
    b: Matrix,
    b_bar: Matrix,
    q: Matrix,
    r: Matrix,
}

fn check_shape(
    out: &mut Vec<ModelError>,
    name: &'static str,
    mat: &Matrix,
    rows: usize,
    cols: usize,
) -> bool {
    if mat.nrows() != rows || mat.ncols() != cols {
        out.push(ModelError::Shape {
            name,
            rows,
            cols,
            got_rows: mat.nrows(),
            got_cols: mat.ncols(),
        });
        return false;
    }
    if mat.iter().any(|v| !v.is_finite()) {
        out.push(ModelError::NonFinite(name));
        return false;
    }
    true
}

fn check_spd(out: &mut Vec<ModelError>, name: &'static str, mat: &Matrix) {
    if asymmetry(mat) > SYM_TOL {
        out.push(ModelError::NotSymmetric(name));
        return;
    }
    if mat.nrows() == 0 || symmetrize(mat).cholesky().is_none() {
        out.push(ModelError::NotPositiveDefinite(name));
    }
}

impl SystemModel {
    pub fn new(
        a: Matrix,
        a_bar: Matrix,
        b: Matrix,
        b_bar: Matrix,
        q: Matrix,
        r: Matrix,
    ) -> Result<Self, ModelError> {
        match Self::diagnose(&a, &a_bar, &b, &b_bar, &q, &r).into_iter().next() {
            Some(err) => Err(err),
            None => Ok(Self {
                a,
                a_bar,
                b,
                b_bar,
                q: symmetrize(&q),
                r: symmetrize(&r),
            }),
        }
    }

    /// Every violated invariant, so callers can report them all at once.
    /// Dimensions are taken from `A` (n) and `B` (m).
    pub fn diagnose(
        a: &Matrix,
        a_bar: &Matrix,
        b: &Matrix,
        b_bar: &Matrix,
        q: &Matrix,
        r: &Matrix,
    ) -> Vec<ModelError> {
        let mut out = Vec::new();
        let n = a.nrows();
        let m = b.ncols();
        check_shape(&mut out, "A", a, n, n);
        check_shape(&mut out, "A_bar", a_bar, n, n);
        check_shape(&mut out, "B", b, n, m);
        check_shape(&mut out, "B_bar", b_bar, n, m);
        if n == 0 || m == 0 {
            out.push(ModelError::Shape {
                name: "B",
                rows: n.max(1),
                cols: m.max(1),
                got_rows: b.nrows(),
                got_cols: b.ncols(),
            });
        }
        if check_shape(&mut out, "Q", q, n, n) {
            check_spd(&mut out, "Q", q);
        }
        if check_shape(&mut out, "R", r, m, m) {
            check_spd(&mut out, "R", r);
        }
        out
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn a_bar(&self) -> &Matrix {
        &self.a_bar
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn b_bar(&self) -> &Matrix {
        &self.b_bar
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    /// Same plant with the multiplicative perturbations removed.
    pub fn without_noise(&self) -> Self {
        Self {
            a_bar: Matrix::zeros(self.n(), self.n()),
            b_bar: Matrix::zeros(self.n(), self.m()),
            ..self.clone()
        }
    }
}

/// Mean and variance of the scalar multiplicative noise ω(k).
///
/// Only the first two moments enter the oracle, so any noise law with the
/// same `mu` and `sigma2` yields the same `G*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    mu: f64,
    sigma2: f64,
}

impl NoiseModel {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self, ModelError> {
        if !mu.is_finite() {
            return Err(ModelError::BadMean(mu));
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(ModelError::BadVariance(sigma2));
        }
        Ok(Self { mu, sigma2 })
    }

    pub fn deterministic(value: f64) -> Self {
        Self {
            mu: value,
            sigma2: 0.0,
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// E[ω²] = μ² + σ².
    pub fn second_moment(&self) -> f64 {
        self.mu * self.mu + self.sigma2
    }
}

/// Symmetric Q-factor with an `n`-dimensional state block.
#[derive(Debug, Clone, PartialEq)]
pub struct QFactor {
    mat: Matrix,
    n: usize,
}

impl QFactor {
    /// Validates symmetry within [`SYM_TOL`] and stores the symmetrized matrix.
    pub fn new(mat: Matrix, n: usize) -> Result<Self, ModelError> {
        Self::check_shape(&mat, n)?;
        let skew = asymmetry(&mat);
        if skew > SYM_TOL {
            return Err(ModelError::QFactorAsymmetric(skew));
        }
        Ok(Self {
            mat: symmetrize(&mat),
            n,
        })
    }

    /// Symmetrizes unconditionally. Used after every map application.
    pub fn symmetrized(mat: &Matrix, n: usize) -> Result<Self, ModelError> {
        Self::check_shape(mat, n)?;
        Ok(Self {
            mat: symmetrize(mat),
            n,
        })
    }

    fn check_shape(mat: &Matrix, n: usize) -> Result<(), ModelError> {
        if !mat.is_square() || n == 0 || n >= mat.nrows() {
            return Err(ModelError::QFactorShape {
                rows: mat.nrows(),
                cols: mat.ncols(),
                n,
            });
        }
        Ok(())
    }

    /// `diag(Q, R)`, the stage-cost weight of the plant.
    pub fn cost_weight(sys: &SystemModel) -> Self {
        Self {
            mat: block_diag(sys.q(), sys.r()),
            n: sys.n(),
        }
    }

    pub fn from_blocks(xx: &Matrix, xu: &Matrix, uu: &Matrix) -> Result<Self, ModelError> {
        Self::symmetrized(&assemble(xx, xu, &xu.transpose(), uu), xx.nrows())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.mat.nrows() - self.n
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }

    pub fn xx(&self) -> Matrix {
        self.mat.view((0, 0), (self.n, self.n)).clone_owned()
    }

    pub fn xu(&self) -> Matrix {
        self.mat.view((0, self.n), (self.n, self.m())).clone_owned()
    }

    pub fn ux(&self) -> Matrix {
        self.mat.view((self.n, 0), (self.m(), self.n)).clone_owned()
    }

    pub fn uu(&self) -> Matrix {
        self.mat
            .view((self.n, self.n), (self.m(), self.m()))
            .clone_owned()
    }

    pub fn frobenius(&self) -> f64 {
        self.mat.norm()
    }

    /// Entrywise 1-norm, the quantity plotted per sensor.
    pub fn entrywise_l1(&self) -> f64 {
        self.mat.iter().map(|v| v.abs()).sum()
    }

    pub fn distance(&self, other: &QFactor) -> f64 {
        (&self.mat - &other.mat).norm()
    }
}

/// State-feedback gain `u = K x`, `K` is `m×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain(Matrix);

impl Gain {
    pub fn new(k: Matrix) -> Self {
        Self(k)
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self(Matrix::zeros(m, n))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.0 * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankDiagnostic {
    FullRank,
    Deficient { rank: usize },
}

impl RankDiagnostic {
    pub fn is_deficient(self) -> bool {
        matches!(self, RankDiagnostic::Deficient { .. })
    }
}

pub fn symmetrize(mat: &Matrix) -> Matrix {
    (mat + mat.transpose()) * 0.5
}

/// Largest absolute entry of `M - Mᵀ`.
pub fn asymmetry(mat: &Matrix) -> f64 {
    if !mat.is_square() {
        return f64::INFINITY;
    }
    (mat - mat.transpose()).amax()
}

pub fn block_diag(top: &Matrix, bottom: &Matrix) -> Matrix {
    let (n, m) = (top.nrows(), bottom.nrows());
    let mut out = Matrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(top);
    out.view_mut((n, n), (m, m)).copy_from(bottom);
    out
}

fn assemble(xx: &Matrix, xu: &Matrix, ux: &Matrix, uu: &Matrix) -> Matrix {
    let (n, m) = (xx.nrows(), uu.nrows());
    let mut out = Matrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(xx);
    out.view_mut((0, n), (n, m)).copy_from(xu);
    out.view_mut((n, 0), (m, n)).copy_from(ux);
    out.view_mut((n, n), (m, m)).copy_from(uu);
    out
}

/// Moore–Penrose pseudo-inverse, dropping singular values below
/// `tol · σ_max`.
pub fn pseudo_inverse(mat: &Matrix, tol: f64) -> (Matrix, RankDiagnostic) {
    let (rows, cols) = mat.shape();
    if rows == 1 && cols == 1 {
        let v = mat[(0, 0)];
        return if v == 0.0 {
            (Matrix::zeros(1, 1), RankDiagnostic::Deficient { rank: 0 })
        } else {
            (Matrix::from_element(1, 1, 1.0 / v), RankDiagnostic::FullRank)
        };
    }
    let svd = mat.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = tol * sigma_max;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = Matrix::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            out += (v_t.row(i).transpose() * u.column(i).transpose()) / s;
        }
    }
    let diag = if rank == rows.min(cols) {
        RankDiagnostic::FullRank
    } else {
        RankDiagnostic::Deficient { rank }
    };
    (out, diag)
}

/// Schur complement `G_xx − G_xu G_uu† G_ux`, symmetrized.
pub fn pi_map(g: &QFactor, pinv_tol: f64) -> Matrix {
    let (p, diag) = pi_map_checked(g, pinv_tol);
    if diag.is_deficient() {
        log::debug!("pi_map: G_uu rank-deficient ({diag:?})");
    }
    p
}

pub fn pi_map_checked(g: &QFactor, pinv_tol: f64) -> (Matrix, RankDiagnostic) {
    let (uu_pinv, diag) = pseudo_inverse(&g.uu(), pinv_tol);
    let p = g.xx() - g.xu() * uu_pinv * g.ux();
    (symmetrize(&p), diag)
}

/// Gain map `−G_uu† G_ux`.
pub fn gamma_map(g: &QFactor, pinv_tol: f64) -> Gain {
    gamma_map_checked(g, pinv_tol).0
}

pub fn gamma_map_checked(g: &QFactor, pinv_tol: f64) -> (Gain, RankDiagnostic) {
    let (uu_pinv, diag) = pseudo_inverse(&g.uu(), pinv_tol);
    (Gain(-(uu_pinv * g.ux())), diag)
}

/// `E[(X + X̄ω)ᵀ P (Y + Ȳω)]` from the first two moments of ω.
fn expected_bilinear(
    x: &Matrix,
    x_bar: &Matrix,
    p: &Matrix,
    y: &Matrix,
    y_bar: &Matrix,
    noise: &NoiseModel,
) -> Matrix {
    let xt_p = x.transpose() * p;
    let xbt_p = x_bar.transpose() * p;
    &xt_p * y
        + (&xt_p * y_bar + &xbt_p * y) * noise.mu()
        + (&xbt_p * y_bar) * noise.second_moment()
}

/// Blocks `E[[Q + AₖᵀPAₖ, AₖᵀPBₖ], [BₖᵀPAₖ, BₖᵀPBₖ + R]]` for a given `P`.
fn expected_q_blocks(
    p: &Matrix,
    sys: &SystemModel,
    noise: &NoiseModel,
) -> (Matrix, Matrix, Matrix, Matrix) {
    let (a, ab, b, bb) = (sys.a(), sys.a_bar(), sys.b(), sys.b_bar());
    let xx = sys.q() + expected_bilinear(a, ab, p, a, ab, noise);
    let xu = expected_bilinear(a, ab, p, b, bb, noise);
    let ux = expected_bilinear(b, bb, p, a, ab, noise);
    let uu = expected_bilinear(b, bb, p, b, bb, noise) + sys.r();
    (xx, xu, ux, uu)
}

/// Closed-form expectation of the sampled Q-factor update at `P = Π(G)`.
pub fn expectation_map(g: &QFactor, sys: &SystemModel, noise: &NoiseModel) -> QFactor {
    let p = pi_map(g, DEFAULT_PINV_TOL);
    expectation_of_value(&p, sys, noise)
}

/// The expected Q-factor induced by a value matrix `P`.
pub fn expectation_of_value(p: &Matrix, sys: &SystemModel, noise: &NoiseModel) -> QFactor {
    let (xx, xu, ux, uu) = expected_q_blocks(p, sys, noise);
    QFactor {
        mat: symmetrize(&assemble(&xx, &xu, &ux, &uu)),
        n: sys.n(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub g_star: QFactor,
    pub p: Matrix,
    pub k_star: Gain,
    pub iterations: usize,
    pub residual: f64,
    pub spectral_radius: f64,
}

/// Ground-truth `G*` by Picard iteration of the expectation map from
/// `diag(Q, R)`.
pub fn solve_oracle(
    sys: &SystemModel,
    noise: &NoiseModel,
    oracle_tol: f64,
    max_iter: usize,
) -> Result<OracleSolution, LqError> {
    if oracle_tol.is_nan() || oracle_tol <= 0.0 || max_iter == 0 {
        return Err(LqError::BadOracleSettings);
    }
    let mut g = QFactor::cost_weight(sys);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = expectation_map(&g, sys, noise);
        residual = g.distance(&next);
        if !residual.is_finite() {
            break;
        }
        if residual <= oracle_tol {
            break;
        }
        g = next;
        iterations += 1;
    }
    if residual.is_nan() || residual > oracle_tol {
        return Err(LqError::NoConvergence {
            iterations,
            residual,
        });
    }
    let p = pi_map(&g, DEFAULT_PINV_TOL);
    let k_star = gamma_map(&g, DEFAULT_PINV_TOL);
    let stability = ms_stability_check(&k_star, sys, noise);
    let solution = OracleSolution {
        g_star: g,
        p,
        k_star,
        iterations,
        residual,
        spectral_radius: stability.spectral_radius,
    };
    if !stability.stable {
        return Err(LqError::NotStabilizing {
            spectral_radius: stability.spectral_radius,
            solution: Box::new(solution),
        });
    }
    Ok(solution)
}

/// Fully expanded optimal controller for a known value matrix `P`.
pub fn optimal_gain_closed_form(
    p: &Matrix,
    sys: &SystemModel,
    noise: &NoiseModel,
) -> Result<Gain, LqError> {
    let (_, _, ux, uu) = expected_q_blocks(p, sys, noise);
    let inv = uu.try_inverse().ok_or(LqError::SingularInnerMatrix)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(LqError::SingularInnerMatrix);
    }
    Ok(Gain(-(inv * ux)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsStability {
    pub stable: bool,
    pub spectral_radius: f64,
}

/// Kronecker-lifted second-moment operator of the closed loop `u = Kx`.
pub fn second_moment_operator(k: &Gain, sys: &SystemModel, noise: &NoiseModel) -> Matrix {
    let a_cl = sys.a() + sys.b() * k.matrix();
    let ab_cl = sys.a_bar() + sys.b_bar() * k.matrix();
    a_cl.kronecker(&a_cl)
        + (a_cl.kronecker(&ab_cl) + ab_cl.kronecker(&a_cl)) * noise.mu()
        + ab_cl.kronecker(&ab_cl) * noise.second_moment()
}

pub fn spectral_radius(mat: &Matrix) -> f64 {
    mat.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Mean-square stability: `E‖x(k)‖² → 0` iff the second-moment operator has
/// spectral radius below one.
pub fn ms_stability_check(k: &Gain, sys: &SystemModel, noise: &NoiseModel) -> MsStability {
    let rho = spectral_radius(&second_moment_operator(k, sys, noise));
    MsStability {
        stable: rho < 1.0,
        spectral_radius: rho,
    }
}

/// Frobenius norm of the generalized Riccati equation residual at `P`.
pub fn riccati_residual(p: &Matrix, sys: &SystemModel, noise: &NoiseModel) -> f64 {
    let (xx, xu, ux, uu) = expected_q_blocks(p, sys, noise);
    let (uu_pinv, _) = pseudo_inverse(&uu, DEFAULT_PINV_TOL);
    let rhs = xx - xu * uu_pinv * ux;
    (p - rhs).norm()
}
