//! Rank-q observation compression.
//!
//! Both projections whiten the observations with `R^{-1/2}` and keep `q`
//! orthonormal directions `L_q`; the reduced observation is
//! `y_q = L_qᵀ R^{-1/2} y`. The observation-based variant (OC) takes the
//! leading left singular vectors of whitened snapshots, the
//! information-based variant (IC) the leading eigenvectors of
//! `R^{-1/2} HBHᵀ R^{-1/2}`.

mod io;
mod truncation;

pub use io::{read_projection, write_projection};
pub use truncation::{optimal_truncation, truncation_indicators, TruncationIndicators};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SVD};

use crate::assim::{AssimilationProblem, ObservationOperator};
use crate::covkit::{orient, sym_eigen, symmetrize, CovarianceMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectionKind {
    Oc,
    Ic,
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Oc => "OC",
            Self::Ic => "IC",
        })
    }
}

impl FromStr for ProjectionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OC" => Ok(Self::Oc),
            "IC" => Ok(Self::Ic),
            _ => Err(Error::Parameter(format!("unknown projection kind {s:?}"))),
        }
    }
}

/// Observation snapshots, one column per observation vector.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    y: DMatrix<f64>,
    times: Vec<f64>,
}

impl SnapshotMatrix {
    pub fn new(y: DMatrix<f64>, times: Vec<f64>) -> Result<Self> {
        if y.ncols() == 0 || y.nrows() == 0 {
            return Err(Error::InsufficientData("snapshot matrix is empty".into()));
        }
        if times.len() != y.ncols() {
            return Err(Error::Shape(format!(
                "{} snapshots but {} timestamps",
                y.ncols(),
                times.len()
            )));
        }
        Ok(Self { y, times })
    }

    pub fn from_columns(cols: &[DVector<f64>], times: Vec<f64>) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::InsufficientData("no snapshots".into()));
        }
        let dim = cols[0].len();
        if cols.iter().any(|c| c.len() != dim) {
            return Err(Error::Shape("snapshots differ in dimension".into()));
        }
        Self::new(DMatrix::from_columns(cols), times)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn obs_dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.y.ncols()
    }
}

/// Rank-q compression map `L_qᵀ R^{-1/2}`.
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    kind: ProjectionKind,
    basis: DMatrix<f64>,
    whitening: DMatrix<f64>,
    r_built: Arc<CovarianceMatrix>,
    spectrum: DVector<f64>,
    max_rank: usize,
    clamped_negatives: usize,
}

impl ProjectionOperator {
    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    pub fn q(&self) -> usize {
        self.basis.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `L_q`, orthonormal columns.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `R^{-1/2}` of the covariance the projection was built with.
    pub fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    pub fn built_with(&self) -> &Arc<CovarianceMatrix> {
        &self.r_built
    }

    /// Full non-increasing spectrum: eigenvalues of the whitened snapshot
    /// covariance (OC) or of `R^{-1/2} HBHᵀ R^{-1/2}` clamped at zero (IC).
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.spectrum
    }

    /// Largest rank this projection can be truncated to.
    pub fn max_rank(&self) -> usize {
        self.max_rank
    }

    pub fn clamped_negatives(&self) -> usize {
        self.clamped_negatives
    }

    /// The `q × m` matrix `L_qᵀ R^{-1/2}`.
    pub fn operator(&self) -> DMatrix<f64> {
        self.basis.transpose() * &self.whitening
    }

    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * (&self.whitening * y)
    }

    /// Keeps the first `q` directions.
    pub fn truncate(&self, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::Parameter("truncation rank must be at least 1".into()));
        }
        if q > self.max_rank {
            return Err(Error::Rank {
                requested: q,
                max: self.max_rank,
            });
        }
        let mut out = self.clone();
        out.basis = self.basis.columns(0, q).into_owned();
        Ok(out)
    }

    /// Reassembles an operator from stored parts (used by deserialization).
    pub fn from_parts(
        kind: ProjectionKind,
        basis: DMatrix<f64>,
        r_built: Arc<CovarianceMatrix>,
        spectrum: DVector<f64>,
        max_rank: usize,
        clamped_negatives: usize,
    ) -> Result<Self> {
        let m = r_built.dim();
        if basis.nrows() != m || basis.ncols() == 0 || basis.ncols() > max_rank || max_rank > m {
            return Err(Error::Shape(format!(
                "basis {}x{} incompatible with R {m}x{m} and max rank {max_rank}",
                basis.nrows(),
                basis.ncols()
            )));
        }
        let whitening = r_built.inverse_sqrt()?;
        Ok(Self {
            kind,
            basis,
            whitening,
            r_built,
            spectrum,
            max_rank,
            clamped_negatives,
        })
    }
}

fn check_rank(q: usize) -> Result<()> {
    if q == 0 {
        return Err(Error::Parameter("truncation rank must be at least 1".into()));
    }
    Ok(())
}

/// Observation-based compression from whitened snapshots `R^{-1/2} Y`.
pub fn build_oc(snapshots: &SnapshotMatrix, r: Arc<CovarianceMatrix>, q: usize) -> Result<ProjectionOperator> {
    check_rank(q)?;
    let m = snapshots.obs_dim();
    if r.dim() != m {
        return Err(Error::Shape(format!(
            "snapshots have dimension {m}, R is {}x{0}",
            r.dim()
        )));
    }
    let whitening = r.inverse_sqrt()?;
    let z = &whitening * snapshots.matrix();
    let n = z.ncols();
    let svd = SVD::new(z, true, false);
    let u = svd.u.expect("left singular vectors requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let smax = s.iter().fold(0.0_f64, |a, &v| a.max(v));
    let tol = smax * (m.max(n) as f64) * f64::EPSILON;
    let rank = s.iter().filter(|&&v| v > tol).count();
    if q > rank {
        return Err(Error::Rank {
            requested: q,
            max: rank,
        });
    }
    let norm = (n.saturating_sub(1)).max(1) as f64;
    let mut spectrum = DVector::zeros(m);
    for (k, &i) in order.iter().enumerate() {
        spectrum[k] = s[i] * s[i] / norm;
    }
    let mut basis = DMatrix::zeros(m, rank);
    for (k, &i) in order.iter().take(rank).enumerate() {
        let mut col = u.column(i).into_owned();
        orient(&mut col);
        basis.set_column(k, &col);
    }
    let full = ProjectionOperator {
        kind: ProjectionKind::Oc,
        basis,
        whitening,
        r_built: r,
        spectrum,
        max_rank: rank,
        clamped_negatives: 0,
    };
    full.truncate(q)
}

/// Information-based compression from the eigenvectors of
/// `R^{-1/2} HBHᵀ R^{-1/2}`.
pub fn build_ic(hbht: &DMatrix<f64>, r: Arc<CovarianceMatrix>, q: usize) -> Result<ProjectionOperator> {
    check_rank(q)?;
    let m = r.dim();
    if hbht.nrows() != m || hbht.ncols() != m {
        return Err(Error::Shape(format!(
            "HBHᵀ is {}x{}, R is {m}x{m}",
            hbht.nrows(),
            hbht.ncols()
        )));
    }
    if q > m {
        return Err(Error::Rank { requested: q, max: m });
    }
    let whitening = r.inverse_sqrt()?;
    let t = symmetrize(&(&whitening * symmetrize(hbht) * &whitening));
    let eig = sym_eigen(&t)?;
    if !(eig.values[0] > 0.0) {
        return Err(Error::DegenerateSignal);
    }
    let clamped_negatives = eig.values.iter().filter(|&&v| v < 0.0).count();
    let spectrum = eig.values.map(|v| v.max(0.0));
    let full = ProjectionOperator {
        kind: ProjectionKind::Ic,
        basis: eig.vectors,
        whitening,
        r_built: r,
        spectrum,
        max_rank: m,
        clamped_negatives,
    };
    full.truncate(q)
}

/// Problem expressed in the compressed observation space.
#[derive(Debug, Clone)]
pub struct ReducedProblem<'a> {
    pub y_q: DVector<f64>,
    pub r_q: Arc<CovarianceMatrix>,
    pub h_q: ObservationOperator,
    pub parent: &'a AssimilationProblem,
}

impl ReducedProblem<'_> {
    /// `(x_b, y_q, B, R_q, H_q)` as a standalone problem.
    pub fn to_problem(&self) -> Result<AssimilationProblem> {
        AssimilationProblem::new(
            self.parent.xb.clone(),
            self.y_q.clone(),
            Arc::clone(&self.parent.b),
            Arc::clone(&self.r_q),
            self.h_q.clone(),
        )
    }
}

/// Compresses `problem` with `proj`. The whitening is the one the projection
/// was built with (`R_A`); the reduced covariance is the honest
/// `L_qᵀ R_A^{-1/2} R R_A^{-1/2} L_q` against the problem's own `R`, which
/// is exactly `I_q` when `R_A` is that `R`.
pub fn reduce_problem<'a>(problem: &'a AssimilationProblem, proj: &ProjectionOperator) -> Result<ReducedProblem<'a>> {
    if proj.obs_dim() != problem.obs_dim() {
        return Err(Error::Shape(format!(
            "projection acts on dimension {}, problem observes {}",
            proj.obs_dim(),
            problem.obs_dim()
        )));
    }
    let p = proj.operator();
    let y_q = &p * &problem.y;
    let h_q = problem.h.compose_left(&p)?;
    let exact = Arc::ptr_eq(proj.built_with(), &problem.r) || **proj.built_with() == *problem.r;
    let r_q = if exact {
        CovarianceMatrix::identity(proj.q())
    } else {
        CovarianceMatrix::new(&p * problem.r.matrix() * p.transpose())?
    };
    Ok(ReducedProblem {
        y_q,
        r_q: Arc::new(r_q),
        h_q,
        parent: problem,
    })
}
