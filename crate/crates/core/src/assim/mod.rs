//! 3D-Var analysis: cost and gradient, closed-form BLUE, iterative
//! minimization for nonlinear operators, and influence diagnostics
//! (DFS and entropy reduction).

mod minimize;
mod operator;

pub use minimize::{lbfgs, MinimizerOptions, Minimum};
pub use operator::{JacobianFn, MapFn, ObservationOperator};

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::covkit::{symmetrize, sym_eigen, CovarianceMatrix};
use crate::error::{Error, Result};

/// One analysis problem `(x_b, y, B, R, H)`.
#[derive(Debug, Clone)]
pub struct AssimilationProblem {
    pub xb: DVector<f64>,
    pub y: DVector<f64>,
    pub b: Arc<CovarianceMatrix>,
    pub r: Arc<CovarianceMatrix>,
    pub h: ObservationOperator,
}

impl AssimilationProblem {
    pub fn new(
        xb: DVector<f64>,
        y: DVector<f64>,
        b: Arc<CovarianceMatrix>,
        r: Arc<CovarianceMatrix>,
        h: ObservationOperator,
    ) -> Result<Self> {
        if xb.len() != b.dim() || h.state_dim() != xb.len() {
            return Err(Error::Shape(format!(
                "state: x_b has {} entries, B is {}x{0}, H takes {}",
                xb.len(),
                b.dim(),
                h.state_dim()
            )));
        }
        if y.len() != r.dim() || h.obs_dim() != y.len() {
            return Err(Error::Shape(format!(
                "observation: y has {} entries, R is {}x{0}, H yields {}",
                y.len(),
                r.dim(),
                h.obs_dim()
            )));
        }
        Ok(Self { xb, y, b, r, h })
    }

    pub fn state_dim(&self) -> usize {
        self.xb.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.y.len()
    }

    /// Innovation `y − ℋ(x)`.
    pub fn innovation(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.y - self.h.apply(x)
    }
}

fn factor(c: &CovarianceMatrix, name: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(c.matrix().clone())
        .ok_or_else(|| Error::SingularSystem(format!("{name} is not positive definite")))
}

/// Cost `J` with cached factorizations of `B` and `R`.
pub struct CostFunction<'a> {
    problem: &'a AssimilationProblem,
    b_chol: Cholesky<f64, Dyn>,
    r_chol: Cholesky<f64, Dyn>,
}

impl<'a> CostFunction<'a> {
    pub fn new(problem: &'a AssimilationProblem) -> Result<Self> {
        Ok(Self {
            problem,
            b_chol: factor(&problem.b, "B")?,
            r_chol: factor(&problem.r, "R")?,
        })
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.problem.xb;
        let d = self.problem.innovation(x);
        0.5 * dx.dot(&self.b_chol.solve(&dx)) + 0.5 * d.dot(&self.r_chol.solve(&d))
    }

    /// `∇J = B⁻¹(x − x_b) − Hᵀ R⁻¹ (y − ℋ(x))` with `H` linearized at `x`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.value_and_gradient(x).1
    }

    pub fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let dx = x - &self.problem.xb;
        let d = self.problem.innovation(x);
        let bdx = self.b_chol.solve(&dx);
        let rd = self.r_chol.solve(&d);
        let value = 0.5 * dx.dot(&bdx) + 0.5 * d.dot(&rd);
        let jac = self.problem.h.jacobian(x);
        (value, bdx - jac.transpose() * rd)
    }
}

pub fn cost(problem: &AssimilationProblem, x: &DVector<f64>) -> Result<f64> {
    if x.len() != problem.state_dim() {
        return Err(Error::Shape(format!(
            "x has {} entries, state dimension is {}",
            x.len(),
            problem.state_dim()
        )));
    }
    Ok(CostFunction::new(problem)?.value(x))
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub xa: DVector<f64>,
    /// Analysis-error covariance `(I − KH)B` (linear path only).
    pub a: Option<CovarianceMatrix>,
    pub k: Option<DMatrix<f64>>,
    /// `y − ℋ(x_b)`
    pub omb: DVector<f64>,
    /// `y − ℋ(x_a)`
    pub oma: DVector<f64>,
    /// Cost at every accepted iterate (iterative path only).
    pub cost_trace: Vec<f64>,
}

/// Kalman gain `K = B Hᵀ (H B Hᵀ + R)⁻¹`, obtained by solving the innovation
/// system rather than inverting it.
pub fn kalman_gain(b: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bht = b * h.transpose();
    let s = symmetrize(&(h * &bht + r));
    let chol = Cholesky::new(s)
        .ok_or_else(|| Error::SingularSystem("H B Hᵀ + R is not positive definite".into()))?;
    let kt = chol.solve(&bht.transpose());
    if kt.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("gain has non-finite entries".into()));
    }
    Ok(kt.transpose())
}

pub fn blue_analysis(problem: &AssimilationProblem) -> Result<AnalysisResult> {
    let h = problem
        .h
        .as_linear()
        .ok_or_else(|| Error::Parameter("BLUE needs a linear observation operator".into()))?;
    let b = problem.b.matrix();
    let k = kalman_gain(b, h, problem.r.matrix())?;
    let omb = problem.innovation(&problem.xb);
    let xa = &problem.xb + &k * &omb;
    let a = b - &k * (h * b);
    let oma = problem.innovation(&xa);
    Ok(AnalysisResult {
        xa,
        a: Some(CovarianceMatrix::new(a)?),
        k: Some(k),
        omb,
        oma,
        cost_trace: Vec::new(),
    })
}

/// Minimizes the 3D-Var cost iteratively from `x_b`.
pub fn variational_analysis(problem: &AssimilationProblem, opts: &MinimizerOptions) -> Result<AnalysisResult> {
    let cf = CostFunction::new(problem)?;
    let min = lbfgs(|x| Ok(cf.value_and_gradient(x)), problem.xb.clone(), opts)?;
    let omb = problem.innovation(&problem.xb);
    let oma = problem.innovation(&min.x);
    Ok(AnalysisResult {
        xa: min.x,
        a: None,
        k: None,
        omb,
        oma,
        cost_trace: min.trace,
    })
}

/// Influence matrix `S = Kᵀ Hᵀ` with its information measures.
#[derive(Debug, Clone)]
pub struct InfluenceSummary {
    pub s: DMatrix<f64>,
    /// Degrees of freedom for signal, `Tr(MMᵀ(I + MMᵀ)⁻¹)`.
    pub dfs: f64,
    /// Entropy reduction, `½ Σ ln(1 + λᵢ(MMᵀ))`.
    pub er: f64,
    /// Eigenvalues of `MMᵀ`, non-increasing.
    pub mmt_eigenvalues: DVector<f64>,
}

/// `M = R^{-1/2} H B^{1/2}`.
pub fn normalized_sensitivity(problem: &AssimilationProblem) -> Result<DMatrix<f64>> {
    let h = problem
        .h
        .as_linear()
        .ok_or_else(|| Error::Parameter("influence diagnostics need a linear operator".into()))?;
    Ok(problem.r.inverse_sqrt()? * h * problem.b.sqrt()?)
}

pub fn influence_matrix(problem: &AssimilationProblem) -> Result<InfluenceSummary> {
    let h = problem
        .h
        .as_linear()
        .ok_or_else(|| Error::Parameter("influence diagnostics need a linear operator".into()))?;
    let k = kalman_gain(problem.b.matrix(), h, problem.r.matrix())?;
    let s = k.transpose() * h.transpose();
    let m = normalized_sensitivity(problem)?;
    let eig = sym_eigen(&(&m * m.transpose()))?;
    let (dfs, er) = information_from_spectrum(eig.values.as_slice())?;
    Ok(InfluenceSummary {
        s,
        dfs,
        er,
        mmt_eigenvalues: eig.values,
    })
}

/// DFS and ER from the eigenvalues of `MMᵀ`.
pub fn information_from_spectrum(lambda: &[f64]) -> Result<(f64, f64)> {
    let mut dfs = 0.0;
    let mut er = 0.0;
    for (i, &l) in lambda.iter().enumerate() {
        if !(1.0 + l > 0.0) {
            return Err(Error::Degenerate(format!(
                "1 + λ_{i} = {} is not positive",
                1.0 + l
            )));
        }
        dfs += l / (1.0 + l);
        er += 0.5 * l.ln_1p();
    }
    Ok((dfs, er))
}

/// `−½ ln det(I − S)` evaluated directly; kept as a cross-check of the
/// eigenvalue form, which is the one used everywhere else.
pub fn entropy_reduction_direct(s: &DMatrix<f64>) -> Result<f64> {
    let n = s.nrows();
    let det = (DMatrix::identity(n, n) - s).determinant();
    if !(det > 0.0) {
        return Err(Error::Degenerate(format!("det(I − S) = {det:e}")));
    }
    Ok(-0.5 * det.ln())
}
