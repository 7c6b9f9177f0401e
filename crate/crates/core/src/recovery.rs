//! Low-rank plus sparse decomposition of a noisy label matrix with graph smoothing.
//!
//! Solves
//!
//! ```text
//! min_{D̃,E}  ‖D̃‖_* + α‖E‖₁ + β tr(D̃ᵀ L D̃)   s.t. D = D̃ + E
//! ```
//!
//! by ADMM on the split `D̃ = Z`, with multipliers `Γ₁` (for `D̃ + E − D`) and `Γ₂`
//! (for `D̃ − Z`) and a geometrically increasing penalty `μ`.

use nalgebra::linalg::{Cholesky, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::graph::GraphLaplacian;
use crate::simplex::clamp_normalize_rows;
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// Weight of the ℓ1 error term.
    pub alpha: f64,
    /// Weight of the graph smoothness term.
    pub beta: f64,
    pub mu0: f64,
    pub mu_max: f64,
    pub rho: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.05,
            mu0: 1e-2,
            mu_max: 1e10,
            rho: 1.1,
            tol: 1e-7,
            max_iters: 500,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("mu0", self.mu0),
            ("mu_max", self.mu_max),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        // β = 0 switches the graph term off.
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidSpec(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.rho > 1.0) {
            return Err(Error::InvalidSpec(format!("rho must exceed 1, got {}", self.rho)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidSpec("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Iterate of the ADMM loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub d_tilde: Matrix,
    pub error: Matrix,
    pub z: Matrix,
    pub gamma1: Matrix,
    pub gamma2: Matrix,
    pub mu: f64,
    pub iteration: usize,
}

impl AdmmState {
    /// `D̃ = D`, `E = 0`, `Z = D`, zero multipliers.
    pub fn initial(d: &Matrix, mu0: f64) -> Self {
        let zeros = Matrix::zeros(d.nrows(), d.ncols());
        Self {
            d_tilde: d.clone(),
            error: zeros.clone(),
            z: d.clone(),
            gamma1: zeros.clone(),
            gamma2: zeros,
            mu: mu0,
            iteration: 0,
        }
    }

    /// `max(‖D̃ + E − D‖∞, ‖D̃ − Z‖∞)`.
    pub fn primal_residual(&self, d: &Matrix) -> f64 {
        let r1 = (&self.d_tilde + &self.error - d).amax();
        let r2 = (&self.d_tilde - &self.z).amax();
        r1.max(r2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub d_tilde: Matrix,
    pub error: Matrix,
    pub z: Matrix,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// The `diagnostics.json` document written by the `recover` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
}

impl RecoveryResult {
    pub fn diagnostics(&self) -> RecoveryDiagnostics {
        RecoveryDiagnostics {
            iterations: self.iterations,
            converged: self.converged,
            final_residual: self.final_residual(),
            residual_history: self.residual_history.clone(),
        }
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }

    /// Recovered rows clamped at zero and rescaled onto the simplex.
    pub fn recovered_distributions(&self) -> Result<Matrix> {
        let mut m = self.d_tilde.clone();
        clamp_normalize_rows(&mut m).map_err(|row| Error::DegenerateRecoveredRow { row })?;
        Ok(m)
    }
}

/// Elementwise shrinkage `sign(x)·max(|x| − ω, 0)`, the proximal map of `ω‖·‖₁`.
pub fn soft_threshold(x: &Matrix, omega: f64) -> Matrix {
    assert!(omega >= 0.0, "threshold must be nonnegative");
    x.map(|v| shrink(v, omega))
}

#[inline]
pub fn shrink(v: f64, omega: f64) -> f64 {
    if v > omega {
        v - omega
    } else if v < -omega {
        v + omega
    } else {
        0.0
    }
}

/// Singular value thresholding, the proximal map of `τ‖·‖_*`.
pub fn svt(x: &Matrix, tau: f64) -> Result<Matrix> {
    assert!(tau >= 0.0, "threshold must be nonnegative");
    if x.is_empty() {
        return Ok(x.clone());
    }
    let svd = SVD::try_new(x.clone(), true, true, f64::EPSILON, 0).ok_or(Error::SvdFailure)?;
    let u = svd.u.ok_or(Error::SvdFailure)?;
    let v_t = svd.v_t.ok_or(Error::SvdFailure)?;
    let mut out = Matrix::zeros(x.nrows(), x.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let shrunk = s - tau;
        if shrunk > 0.0 {
            out += shrunk * u.column(k) * v_t.row(k);
        }
    }
    Ok(out)
}

/// Nuclear norm (sum of singular values).
pub fn nuclear_norm(x: &Matrix) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.singular_values().sum()
}

/// The `D̃` subproblem: solves `(2βL + 2μI) D̃ = μ(ψ₁ + ψ₂)` with
/// `ψ₁ = Z − Γ₂/μ` and `ψ₂ = D − E − Γ₁/μ`.
pub fn update_d_tilde(state: &AdmmState, d: &Matrix, laplacian: &GraphLaplacian, beta: f64) -> Result<Matrix> {
    let n = d.nrows();
    if laplacian.n() != n || state.z.shape() != d.shape() {
        return Err(Error::ShapeMismatch(format!(
            "laplacian is {n}×{n}? got {}; labels {:?}, state {:?}",
            laplacian.n(),
            d.shape(),
            state.z.shape()
        )));
    }
    let mu = state.mu;
    let psi1 = &state.z - &state.gamma2 / mu;
    let psi2 = d - &state.error - &state.gamma1 / mu;
    let rhs = (psi1 + psi2) * mu;
    if beta == 0.0 {
        return Ok(rhs / (2.0 * mu));
    }
    let mut system = &laplacian.laplacian * (2.0 * beta);
    for i in 0..n {
        system[(i, i)] += 2.0 * mu;
    }
    let chol = Cholesky::new(system).ok_or(Error::SingularSystem("2βL + 2μI is not positive definite"))?;
    Ok(chol.solve(&rhs))
}

/// The `D̃` subproblem with `L = QΛQᵀ` factored once, so each iteration costs two products
/// instead of a fresh Cholesky factorization as `μ` changes.
#[derive(Debug, Clone)]
pub struct DTildeSolver {
    eigenvectors: Matrix,
    eigenvalues: Vector,
    beta: f64,
}

impl DTildeSolver {
    pub fn new(laplacian: &GraphLaplacian, beta: f64) -> Self {
        if beta == 0.0 || laplacian.n() == 0 {
            return Self {
                eigenvectors: Matrix::zeros(0, 0),
                eigenvalues: Vector::zeros(0),
                beta: 0.0,
            };
        }
        let eig = SymmetricEigen::new(laplacian.laplacian.clone());
        Self {
            eigenvectors: eig.eigenvectors,
            eigenvalues: eig.eigenvalues.map(|l| l.max(0.0)),
            beta,
        }
    }

    /// Same result as [`update_d_tilde`].
    pub fn solve(&self, state: &AdmmState, d: &Matrix) -> Result<Matrix> {
        if state.z.shape() != d.shape() || (self.beta != 0.0 && self.eigenvalues.len() != d.nrows()) {
            return Err(Error::ShapeMismatch(format!(
                "solver built for {} rows; labels {:?}, state {:?}",
                self.eigenvalues.len(),
                d.shape(),
                state.z.shape()
            )));
        }
        let mu = state.mu;
        let rhs = (&state.z - &state.gamma2 / mu + d - &state.error - &state.gamma1 / mu) * mu;
        if self.beta == 0.0 {
            return Ok(rhs / (2.0 * mu));
        }
        let q = &self.eigenvectors;
        let mut projected = q.tr_mul(&rhs);
        for (i, mut row) in projected.row_iter_mut().enumerate() {
            row /= 2.0 * self.beta * self.eigenvalues[i] + 2.0 * mu;
        }
        Ok(q * projected)
    }
}

/// Value of `‖D̃‖_* + α‖E‖₁ + β tr(D̃ᵀ L D̃)`.
pub fn objective(d_tilde: &Matrix, error: &Matrix, laplacian: &GraphLaplacian, config: &RecoveryConfig) -> f64 {
    nuclear_norm(d_tilde) + config.alpha * error.iter().map(|v| v.abs()).sum::<f64>()
        + config.beta * laplacian.quadratic_form(d_tilde)
}

/// Runs ADMM from `D̃ = D, E = 0, Z = D` until the primal residual drops to `tol` or
/// `max_iters` is reached. Hitting the iteration cap is reported through `converged = false`.
pub fn recover(d: &Matrix, laplacian: &GraphLaplacian, config: &RecoveryConfig) -> Result<RecoveryResult> {
    config.validate()?;
    if laplacian.n() != d.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "laplacian has {} nodes but the label matrix has {} rows",
            laplacian.n(),
            d.nrows()
        )));
    }
    let solver = DTildeSolver::new(laplacian, config.beta);
    let mut state = AdmmState::initial(d, config.mu0);
    let mut history = Vec::with_capacity(config.max_iters);
    let mut converged = false;

    while state.iteration < config.max_iters {
        admm_step(&mut state, d, &solver, config)?;
        let residual = state.primal_residual(d);
        history.push(residual);
        log::debug!(
            "admm iter {} residual {residual:.3e} mu {:.3e}",
            state.iteration,
            state.mu
        );
        if residual <= config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "recovery stopped after {} iterations with residual {:.3e}",
            state.iteration,
            history.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(RecoveryResult {
        d_tilde: state.d_tilde,
        error: state.error,
        z: state.z,
        residual_history: history,
        converged,
        iterations: state.iteration,
    })
}

/// One sweep: `D̃`, then `E`, then `Z`, then the multipliers and `μ`.
pub fn admm_step(state: &mut AdmmState, d: &Matrix, solver: &DTildeSolver, config: &RecoveryConfig) -> Result<()> {
    let mu = state.mu;
    state.d_tilde = solver.solve(state, d)?;
    state.error = soft_threshold(&(d - &state.d_tilde - &state.gamma1 / mu), config.alpha / mu);
    state.z = svt(&(&state.d_tilde + &state.gamma2 / mu), 1.0 / mu)?;

    state.gamma1 += (&state.d_tilde + &state.error - d) * mu;
    state.gamma2 += (&state.d_tilde - &state.z) * mu;
    state.mu = (config.rho * mu).min(config.mu_max);
    state.iteration += 1;
    Ok(())
}
