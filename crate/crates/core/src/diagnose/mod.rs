//! Innovation-statistics (Desroziers) estimation of `R` and `HBHᵀ` from
//! residuals pooled over a flow-independent window.
//!
//! All estimators divide by the number of columns and do not subtract the
//! sample mean; [`residual_mean`] exposes the bias that assumption hides.

mod io;

pub use io::{load_bank, save_bank};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assim::{kalman_gain, ObservationOperator};
use crate::covkit::{sym_eigen, symmetrize, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Sampling window `[t_s, t_f)` at spacing `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_s: f64,
    pub t_f: f64,
    pub dt: f64,
}

impl Window {
    pub fn new(t_s: f64, t_f: f64, dt: f64) -> Result<Self> {
        let w = Self { t_s, t_f, dt };
        w.steps()?;
        Ok(w)
    }

    /// Number of samples, `(t_f − t_s)/dt`; `dt` must divide the span.
    pub fn steps(&self) -> Result<usize> {
        if !(self.t_s < self.t_f) || !(self.dt > 0.0) || !self.t_s.is_finite() || !self.t_f.is_finite() {
            return Err(Error::Parameter(format!(
                "invalid window [{}, {}) step {}",
                self.t_s, self.t_f, self.dt
            )));
        }
        let ratio = (self.t_f - self.t_s) / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-6 {
            return Err(Error::Parameter(format!(
                "step {} does not divide [{}, {})",
                self.dt, self.t_s, self.t_f
            )));
        }
        Ok(n as usize)
    }

    /// `t_s + k dt` for `k = 0..steps`.
    pub fn times(&self) -> Vec<f64> {
        let n = self.steps().unwrap_or(0);
        (0..n).map(|k| self.t_s + k as f64 * self.dt).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    Small,
    Medium,
    Large,
    Custom,
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
            Self::Custom => "custom",
        })
    }
}

impl FromStr for StrategyName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Self::Small),
            "medium" => Ok(Self::Medium),
            "large" => Ok(Self::Large),
            "custom" => Ok(Self::Custom),
            _ => Err(Error::Parameter(format!("unknown strategy {s:?}"))),
        }
    }
}

/// Which times and members feed one residual bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingStrategy {
    pub name: StrategyName,
    pub window: Window,
    pub n_members: usize,
    /// Also run an analysis per pair so `oma` and `amb` are filled.
    pub with_analyses: bool,
}

impl SamplingStrategy {
    pub fn new(name: StrategyName, window: Window, n_members: usize) -> Result<Self> {
        if n_members == 0 {
            return Err(Error::Parameter("strategy needs at least one member".into()));
        }
        window.steps()?;
        Ok(Self {
            name,
            window,
            n_members,
            with_analyses: false,
        })
    }

    /// Dense sampling over a short span: `[0.16, 0.18)` every 0.001 s.
    pub fn small() -> Self {
        Self::preset(StrategyName::Small, 0.16, 0.18, 0.001)
    }

    /// `[0.1, 0.3)` every 0.01 s.
    pub fn medium() -> Self {
        Self::preset(StrategyName::Medium, 0.1, 0.3, 0.01)
    }

    /// Sparse sampling over a long span: `[0, 2)` every 0.1 s.
    pub fn large() -> Self {
        Self::preset(StrategyName::Large, 0.0, 2.0, 0.1)
    }

    pub fn preset_named(name: StrategyName) -> Option<Self> {
        match name {
            StrategyName::Small => Some(Self::small()),
            StrategyName::Medium => Some(Self::medium()),
            StrategyName::Large => Some(Self::large()),
            StrategyName::Custom => None,
        }
    }

    fn preset(name: StrategyName, t_s: f64, t_f: f64, dt: f64) -> Self {
        Self {
            name,
            window: Window { t_s, t_f, dt },
            n_members: 10,
            with_analyses: false,
        }
    }

    pub fn analyses(mut self, on: bool) -> Self {
        self.with_analyses = on;
        self
    }
}

/// Residual columns with their `(time, member)` tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBank {
    pub window: Window,
    /// `y − ℋ(x_b)`
    pub omb: DMatrix<f64>,
    /// `y − ℋ(x_a)`
    pub oma: Option<DMatrix<f64>>,
    /// `ℋ(x_a) − ℋ(x_b)`
    pub amb: Option<DMatrix<f64>>,
    pub tags: Vec<(f64, usize)>,
}

impl ResidualBank {
    pub fn new(
        window: Window,
        omb: DMatrix<f64>,
        oma: Option<DMatrix<f64>>,
        amb: Option<DMatrix<f64>>,
        tags: Vec<(f64, usize)>,
    ) -> Result<Self> {
        if tags.len() != omb.ncols() {
            return Err(Error::Shape(format!(
                "{} tags for {} residual columns",
                tags.len(),
                omb.ncols()
            )));
        }
        for (name, m) in [("oma", &oma), ("amb", &amb)] {
            if let Some(m) = m {
                if m.shape() != omb.shape() {
                    return Err(Error::Shape(format!(
                        "{name} is {}x{}, omb is {}x{}",
                        m.nrows(),
                        m.ncols(),
                        omb.nrows(),
                        omb.ncols()
                    )));
                }
            }
        }
        Ok(Self {
            window,
            omb,
            oma,
            amb,
            tags,
        })
    }

    pub fn len(&self) -> usize {
        self.omb.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.omb.ncols() == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.omb.nrows()
    }
}

/// Background states and observations addressed by `(time, member)`.
pub trait EnsembleSource: Sync {
    /// Background state; a time the source does not hold is a data gap.
    fn background(&self, time: f64, member: usize) -> Result<DVector<f64>>;
    fn observation(&self, time: f64, member: usize) -> Result<DVector<f64>>;
}

/// Operator and covariances used for the per-pair analyses.
#[derive(Debug, Clone)]
pub struct AnalysisTemplate<'a> {
    pub h: &'a ObservationOperator,
    pub b: &'a CovarianceMatrix,
    pub r: &'a CovarianceMatrix,
}

/// Gathers residuals for every `(time, member)` of `strategy`. With
/// `strategy.with_analyses` each pair is also analyzed by BLUE under
/// `template`'s covariances.
pub fn collect_residuals(
    source: &dyn EnsembleSource,
    h: &ObservationOperator,
    template: Option<&AnalysisTemplate<'_>>,
    strategy: &SamplingStrategy,
    exec: Exec,
) -> Result<ResidualBank> {
    let times = strategy.window.times();
    let n_members = strategy.n_members;
    let tags: Vec<(f64, usize)> = times
        .iter()
        .flat_map(|&t| (0..n_members).map(move |k| (t, k)))
        .collect();
    if tags.is_empty() {
        return Err(Error::InsufficientData("strategy selects no samples".into()));
    }
    let gain = if strategy.with_analyses {
        let tpl = template
            .ok_or_else(|| Error::Parameter("analyses requested without covariances".into()))?;
        let hl = tpl
            .h
            .as_linear()
            .ok_or_else(|| Error::Parameter("analyses need a linear observation operator".into()))?;
        Some((hl.clone(), kalman_gain(tpl.b.matrix(), hl, tpl.r.matrix())?))
    } else {
        None
    };
    let cols = exec.try_map(tags.len(), |i| -> Result<(DVector<f64>, Option<DVector<f64>>)> {
        let (t, k) = tags[i];
        let xb = source.background(t, k)?;
        let y = source.observation(t, k)?;
        let omb = y - h.apply(&xb);
        // ℋ(x_a) − ℋ(x_b) = H K (y − ℋ(x_b)) for the linear analysis
        let amb = gain.as_ref().map(|(hl, kg)| hl * (kg * &omb));
        Ok((omb, amb))
    })?;
    let m = cols[0].0.len();
    let n = cols.len();
    let mut omb = DMatrix::zeros(m, n);
    for (j, (c, _)) in cols.iter().enumerate() {
        omb.set_column(j, c);
    }
    let (oma, amb) = if gain.is_some() {
        let mut amb = DMatrix::zeros(m, n);
        for (j, (_, a)) in cols.iter().enumerate() {
            amb.set_column(j, a.as_ref().expect("analysis computed"));
        }
        (Some(&omb - &amb), Some(amb))
    } else {
        (None, None)
    };
    ResidualBank::new(strategy.window, omb, oma, amb, tags)
}

/// `a bᵀ / n` without symmetrization.
pub fn cross_moment(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b.transpose() / a.ncols() as f64
}

fn need_pairs(bank: &ResidualBank) -> Result<()> {
    if bank.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} residual column(s), need at least 2",
            bank.len()
        )));
    }
    Ok(())
}

/// `R ≈ E[(y − ℋ(x_a))(y − ℋ(x_b))ᵀ]`, symmetrized, not regularized.
pub fn estimate_r_desroziers(bank: &ResidualBank) -> Result<DMatrix<f64>> {
    let oma = bank
        .oma
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("bank has no analysis residuals".into()))?;
    need_pairs(bank)?;
    Ok(symmetrize(&cross_moment(oma, &bank.omb)))
}

/// `HBHᵀ ≈ E[(y − ℋ(x_b))(y − ℋ(x_b))ᵀ] − R`. May be indefinite; see
/// [`spectrum_diagnostic`].
pub fn estimate_hbht_from_omb(bank: &ResidualBank, r: &CovarianceMatrix) -> Result<DMatrix<f64>> {
    need_pairs(bank)?;
    if r.dim() != bank.obs_dim() {
        return Err(Error::Shape(format!(
            "R is {0}x{0}, residuals have dimension {1}",
            r.dim(),
            bank.obs_dim()
        )));
    }
    Ok(symmetrize(&(cross_moment(&bank.omb, &bank.omb) - r.matrix())))
}

/// `HBHᵀ ≈ E[(ℋ(x_a) − ℋ(x_b))(y − ℋ(x_b))ᵀ]`, symmetrized.
pub fn estimate_hbht_cross(bank: &ResidualBank) -> Result<DMatrix<f64>> {
    let amb = bank
        .amb
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("bank has no analysis increments".into()))?;
    need_pairs(bank)?;
    Ok(symmetrize(&cross_moment(amb, &bank.omb)))
}

/// Column mean of `omb`; nonzero values indicate biased residuals.
pub fn residual_mean(bank: &ResidualBank) -> DVector<f64> {
    bank.omb.column_mean()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumDiagnostic {
    pub negatives: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

pub fn spectrum_diagnostic(m: &DMatrix<f64>) -> Result<SpectrumDiagnostic> {
    let e = sym_eigen(m)?;
    Ok(SpectrumDiagnostic {
        negatives: e.values.iter().filter(|&&v| v < 0.0).count(),
        min_eigenvalue: e.values[e.values.len() - 1],
        max_eigenvalue: e.values[0],
    })
}
