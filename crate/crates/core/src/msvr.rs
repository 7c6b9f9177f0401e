//! Kernel multi-output support vector regression trained by iteratively re-weighted least
//! squares.
//!
//! The model predicts `f(x) = Θᵀφ(x) + b` and minimizes
//!
//! ```text
//! J(Θ, b) = ½‖Θ‖²_F + κ Σ_i ℓ(u_i) − ν Σ_ij d̃_ij f_j(x_i),   u_i = ‖d̃_i − f(x_i)‖₂
//! ```
//!
//! with the quadratic ε-insensitive loss `ℓ(u) = (u − ε)₊²`. Everything is carried in dual form,
//! `Θ = Φ B`. The bias is absorbed by adding a constant 1 to the kernel, so the intercept of label
//! `j` is `Σ_i B_ij`.
//!
//! Each iteration replaces `ℓ` by its quadratic model `½ξ_i u_i²` around the current residuals,
//! solves that weighted ridge problem in closed form and moves towards its solution with a
//! backtracking line search on `J`.

use nalgebra::linalg::{Cholesky, LU};
use serde::{Deserialize, Serialize};

use crate::dataset::LdlDataset;
use crate::simplex::clamp_normalize_rows_or_uniform;
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    #[default]
    Rbf,
}

/// RBF bandwidth: a fixed σ or the median pairwise training distance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Bandwidth {
    Value(f64),
    #[default]
    MedianHeuristic,
}

const MEDIAN_HEURISTIC: &str = "median-heuristic";

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Value(v) => s.serialize_f64(*v),
            Bandwidth::MedianHeuristic => s.serialize_str(MEDIAN_HEURISTIC),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bandwidth::Value(v)),
            Raw::Text(t) if t == MEDIAN_HEURISTIC => Ok(Bandwidth::MedianHeuristic),
            Raw::Text(t) => t
                .parse::<f64>()
                .map(Bandwidth::Value)
                .map_err(|_| serde::de::Error::custom(format!("invalid bandwidth `{t}`"))),
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == MEDIAN_HEURISTIC {
            return Ok(Bandwidth::MedianHeuristic);
        }
        s.parse::<f64>()
            .map(Bandwidth::Value)
            .map_err(|_| Error::InvalidSpec(format!("invalid bandwidth `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Ignored by the linear kernel.
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }

    pub fn rbf(sigma: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            bandwidth: Bandwidth::Value(sigma),
        }
    }

    /// Fixes the bandwidth, computing the median heuristic on `train` if requested.
    pub fn resolve(&self, train: &Matrix) -> Result<Kernel> {
        match self.kind {
            KernelKind::Linear => Ok(Kernel::Linear),
            KernelKind::Rbf => {
                let sigma = match self.bandwidth {
                    Bandwidth::Value(v) => v,
                    Bandwidth::MedianHeuristic => median_pairwise_distance(train),
                };
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::Bandwidth(sigma));
                }
                Ok(Kernel::Rbf { sigma })
            }
        }
    }
}

/// A kernel with every parameter fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { sigma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { sigma } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    pub fn matrix(&self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        if a.ncols() != b.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "kernel inputs have {} and {} columns",
                a.ncols(),
                b.ncols()
            )));
        }
        if let Kernel::Rbf { sigma } = *self {
            if !(sigma > 0.0) {
                return Err(Error::Bandwidth(sigma));
            }
        }
        let rows_a: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
        let rows_b: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(Matrix::from_fn(a.nrows(), b.nrows(), |i, j| self.eval(&rows_a[i], &rows_b[j])))
    }

    pub fn spec(&self) -> KernelSpec {
        match *self {
            Kernel::Linear => KernelSpec::linear(),
            Kernel::Rbf { sigma } => KernelSpec::rbf(sigma),
        }
    }
}

/// Gram matrix `k(a_i, b_j)`. A median-heuristic bandwidth is computed from `a`.
pub fn kernel_matrix(a: &Matrix, b: &Matrix, spec: &KernelSpec) -> Result<Matrix> {
    spec.resolve(a)?.matrix(a, b)
}

/// Median Euclidean distance over all pairs of distinct rows.
pub fn median_pairwise_distance(x: &Matrix) -> f64 {
    let n = x.nrows();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push((x.row(i) - x.row(j)).norm());
        }
    }
    if dists.is_empty() {
        return f64::NAN;
    }
    dists.sort_unstable_by(f64::total_cmp);
    let mid = dists.len() / 2;
    if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsvrConfig {
    pub kappa: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub line_search_min_step: f64,
}

impl Default for MsvrConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            nu: 0.1,
            epsilon: 1e-3,
            max_iters: 100,
            tol: 1e-6,
            line_search_min_step: 1e-8,
        }
    }
}

impl MsvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidSpec(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return Err(Error::InvalidSpec(format!("nu must be nonnegative, got {}", self.nu)));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 || !(self.tol >= 0.0) || !(self.line_search_min_step > 0.0) {
            return Err(Error::InvalidSpec(
                "max_iters, tol and line_search_min_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsvrModel {
    pub kernel: Kernel,
    pub support_features: Matrix,
    /// `n_support × m`.
    pub dual_coefficients: Matrix,
    pub bias: Vector,
    pub training_objective: f64,
    pub config: MsvrConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IrwlsDiagnostics {
    /// Objective at the starting point followed by one value per iteration.
    pub objective_history: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// `ξ_i = 0` inside the ε-tube, `2(u_i − ε)/u_i` outside; `ξ = 2` at `u = ε = 0`.
pub fn compute_weights(residual_norms: &[f64], epsilon: f64) -> Vec<f64> {
    residual_norms
        .iter()
        .map(|&u| {
            if u < epsilon {
                0.0
            } else if u == 0.0 {
                2.0
            } else {
                2.0 * (u - epsilon) / u
            }
        })
        .collect()
}

/// Candidate dual coefficients: the solution of `(κHK + I) B = (κH + νI) D̃`, `H = diag(ξ)`.
///
/// Rows with `ξ_i = 0` reduce to `B_i = ν d̃_i`; the remaining block is solved in the
/// symmetric form `(K_SS + (κH_S)⁻¹) B_S = (I + ν(κH_S)⁻¹) D̃_S − ν K_{S,S̄} D̃_S̄`.
pub fn irwls_step(gram: &Matrix, targets: &Matrix, weights: &[f64], config: &MsvrConfig) -> Result<Matrix> {
    let n = gram.nrows();
    if gram.ncols() != n || targets.nrows() != n || weights.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "gram {:?}, targets {:?}, {} weights",
            gram.shape(),
            targets.shape(),
            weights.len()
        )));
    }
    let (kappa, nu) = (config.kappa, config.nu);
    let active: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    let inactive: Vec<usize> = (0..n).filter(|&i| weights[i] <= 0.0).collect();

    let mut b = targets * nu;
    if active.is_empty() {
        return Ok(b);
    }

    let mut system = gram.select_rows(&active).select_columns(&active);
    let mut rhs = targets.select_rows(&active);
    for (a, &i) in active.iter().enumerate() {
        let inv = 1.0 / (kappa * weights[i]);
        system[(a, a)] += inv;
        let mut row = rhs.row_mut(a);
        row *= 1.0 + nu * inv;
    }
    if nu != 0.0 && !inactive.is_empty() {
        let coupling = gram.select_rows(&active).select_columns(&inactive);
        rhs -= coupling * targets.select_rows(&inactive) * nu;
    }
    let solved = match Cholesky::new(system.clone()) {
        Some(chol) => chol.solve(&rhs),
        None => LU::new(system)
            .solve(&rhs)
            .ok_or(Error::SingularSystem("IRWLS normal equations"))?,
    };
    for (a, &i) in active.iter().enumerate() {
        b.set_row(i, &solved.row(a));
    }
    Ok(b)
}

/// `B − κH(D̃ − K̃B) − νD̃`, the dual image of the gradient of the objective.
pub fn stationarity_residual(gram: &Matrix, targets: &Matrix, coefficients: &Matrix, weights: &[f64], config: &MsvrConfig) -> Matrix {
    let residual = targets - gram * coefficients;
    let mut out = coefficients - targets * config.nu;
    for (i, &w) in weights.iter().enumerate() {
        let mut row = out.row_mut(i);
        row -= residual.row(i) * (config.kappa * w);
    }
    out
}

/// Per-row residual norms `‖d̃_i − p_i‖₂`.
pub fn residual_norms(targets: &Matrix, predictions: &Matrix) -> Vec<f64> {
    (targets - predictions).row_iter().map(|r| r.norm()).collect()
}

/// Objective `J` for coefficients `b` with predictions `p = K̃ b`.
fn objective_at(targets: &Matrix, b: &Matrix, p: &Matrix, config: &MsvrConfig) -> f64 {
    let reg = 0.5 * b.dot(p);
    let loss: f64 = residual_norms(targets, p)
        .into_iter()
        .map(|u| {
            let excess = (u - config.epsilon).max(0.0);
            excess * excess
        })
        .sum();
    reg + config.kappa * loss - config.nu * targets.dot(p)
}

/// Kernel matrix with the constant bias feature added.
pub fn augmented_gram(kernel: &Kernel, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Ok(kernel.matrix(a, b)?.add_scalar(1.0))
}

/// Trains on `targets` (one label distribution per feature row).
pub fn fit(features: &Matrix, targets: &Matrix, config: &MsvrConfig, kernel: &KernelSpec) -> Result<(MsvrModel, IrwlsDiagnostics)> {
    config.validate()?;
    if features.nrows() != targets.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows but {} target rows",
            features.nrows(),
            targets.nrows()
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::Validation("cannot fit on an empty training set".into()));
    }
    let kernel = kernel.resolve(features)?;
    let gram = augmented_gram(&kernel, features, features)?;
    let (n, m) = targets.shape();

    let mut b = Matrix::zeros(n, m);
    let mut p = Matrix::zeros(n, m);
    let mut current = objective_at(targets, &b, &p, config);
    let mut diag = IrwlsDiagnostics {
        objective_history: vec![current],
        ..Default::default()
    };

    for _ in 0..config.max_iters {
        let weights = compute_weights(&residual_norms(targets, &p), config.epsilon);
        let candidate = irwls_step(&gram, targets, &weights, config)?;
        let direction = &candidate - &b;
        let p_direction = &gram * &direction;

        let mut step = 1.0;
        let mut accepted = None;
        while step >= config.line_search_min_step {
            let b_try = &b + &direction * step;
            let p_try = &p + &p_direction * step;
            let value = objective_at(targets, &b_try, &p_try, config);
            if value <= current {
                accepted = Some((b_try, p_try, value));
                break;
            }
            step *= 0.5;
        }
        diag.iterations += 1;
        let Some((b_new, p_new, value)) = accepted else {
            // No admissible step: the current iterate is kept.
            diag.converged = true;
            break;
        };
        let change = (current - value).abs();
        b = b_new;
        p = p_new;
        diag.objective_history.push(value);
        diag.step_sizes.push(step);
        let scale = current.abs().max(f64::MIN_POSITIVE);
        current = value;
        if change <= config.tol * scale {
            diag.converged = true;
            break;
        }
    }
    if !diag.converged {
        log::warn!("IRWLS stopped after {} iterations without meeting tol", diag.iterations);
    }

    let bias = Vector::from_iterator(m, b.column_iter().map(|c| c.sum()));
    let model = MsvrModel {
        kernel,
        support_features: features.clone(),
        dual_coefficients: b,
        bias,
        training_objective: current,
        config: *config,
    };
    Ok((model, diag))
}

/// [`fit`] on a dataset's features and labels.
pub fn fit_dataset(train: &LdlDataset, config: &MsvrConfig, kernel: &KernelSpec) -> Result<(MsvrModel, IrwlsDiagnostics)> {
    fit(train.features(), train.labels(), config, kernel)
}

impl MsvrModel {
    pub fn n_labels(&self) -> usize {
        self.dual_coefficients.ncols()
    }

    /// Unnormalized outputs `K(query, support)·B + b`.
    pub fn predict_raw(&self, features: &Matrix) -> Result<Matrix> {
        if features.ncols() != self.support_features.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "query has {} features, model expects {}",
                features.ncols(),
                self.support_features.ncols()
            )));
        }
        let k = self.kernel.matrix(features, &self.support_features)?;
        let mut raw = k * &self.dual_coefficients;
        for mut row in raw.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(raw)
    }

    /// Label distributions: raw outputs clamped at zero and rescaled; all-zero rows become uniform.
    pub fn predict(&self, features: &Matrix) -> Result<Matrix> {
        let mut out = self.predict_raw(features)?;
        clamp_normalize_rows_or_uniform(&mut out);
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(s)?.try_into()
    }
}

/// On-disk model document; matrices are stored row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    kernel: KernelKind,
    bandwidth: Option<f64>,
    bias: Vec<f64>,
    dual_coefficients: Vec<f64>,
    support_features: Vec<f64>,
    n_support: usize,
    n_features: usize,
    n_labels: usize,
    training_objective: f64,
    config: MsvrConfig,
}

fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

impl From<&MsvrModel> for ModelFile {
    fn from(model: &MsvrModel) -> Self {
        let (kernel, bandwidth) = match model.kernel {
            Kernel::Linear => (KernelKind::Linear, None),
            Kernel::Rbf { sigma } => (KernelKind::Rbf, Some(sigma)),
        };
        ModelFile {
            kernel,
            bandwidth,
            bias: model.bias.iter().copied().collect(),
            dual_coefficients: row_major(&model.dual_coefficients),
            support_features: row_major(&model.support_features),
            n_support: model.support_features.nrows(),
            n_features: model.support_features.ncols(),
            n_labels: model.dual_coefficients.ncols(),
            training_objective: model.training_objective,
            config: model.config,
        }
    }
}

impl TryFrom<ModelFile> for MsvrModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.dual_coefficients.len() != f.n_support * f.n_labels
            || f.support_features.len() != f.n_support * f.n_features
            || f.bias.len() != f.n_labels
        {
            return Err(Error::ShapeMismatch("model file arrays disagree with declared sizes".into()));
        }
        let kernel = match (f.kernel, f.bandwidth) {
            (KernelKind::Linear, _) => Kernel::Linear,
            (KernelKind::Rbf, Some(sigma)) if sigma > 0.0 => Kernel::Rbf { sigma },
            (KernelKind::Rbf, other) => return Err(Error::Bandwidth(other.unwrap_or(f64::NAN))),
        };
        Ok(MsvrModel {
            kernel,
            support_features: Matrix::from_row_slice(f.n_support, f.n_features, &f.support_features),
            dual_coefficients: Matrix::from_row_slice(f.n_support, f.n_labels, &f.dual_coefficients),
            bias: Vector::from_vec(f.bias),
            training_objective: f.training_objective,
            config: f.config,
        })
    }
}
