use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type MapFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
pub type JacobianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// State-to-observation map: an explicit matrix, or a black-box function
/// with an optional analytic linearization.
#[derive(Clone)]
pub enum ObservationOperator {
    Linear(DMatrix<f64>),
    Nonlinear {
        state_dim: usize,
        obs_dim: usize,
        map: Arc<MapFn>,
        jacobian: Option<Arc<JacobianFn>>,
    },
}

impl fmt::Debug for ObservationOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear(h) => write!(f, "Linear({}x{})", h.nrows(), h.ncols()),
            Self::Nonlinear {
                state_dim,
                obs_dim,
                jacobian,
                ..
            } => write!(
                f,
                "Nonlinear({obs_dim}x{state_dim}, jacobian: {})",
                jacobian.is_some()
            ),
        }
    }
}

impl ObservationOperator {
    pub fn nonlinear<F>(state_dim: usize, obs_dim: usize, map: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self::Nonlinear {
            state_dim,
            obs_dim,
            map: Arc::new(map),
            jacobian: None,
        }
    }

    pub fn with_jacobian<J>(self, jac: J) -> Result<Self>
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        match self {
            Self::Nonlinear {
                state_dim,
                obs_dim,
                map,
                ..
            } => Ok(Self::Nonlinear {
                state_dim,
                obs_dim,
                map,
                jacobian: Some(Arc::new(jac)),
            }),
            Self::Linear(_) => Err(Error::Parameter(
                "a linear operator is its own Jacobian".into(),
            )),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::Linear(h) => h.ncols(),
            Self::Nonlinear { state_dim, .. } => *state_dim,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Self::Linear(h) => h.nrows(),
            Self::Nonlinear { obs_dim, .. } => *obs_dim,
        }
    }

    pub fn as_linear(&self) -> Option<&DMatrix<f64>> {
        match self {
            Self::Linear(h) => Some(h),
            Self::Nonlinear { .. } => None,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Linear(h) => h * x,
            Self::Nonlinear { map, .. } => map(x),
        }
    }

    /// Linearization at `x`. Without an analytic Jacobian, central finite
    /// differences with step `1e-6 * max(1, |x_i|)` per component.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Self::Linear(h) => h.clone(),
            Self::Nonlinear {
                jacobian: Some(j), ..
            } => j(x),
            Self::Nonlinear {
                state_dim,
                obs_dim,
                map,
                jacobian: None,
            } => {
                let mut jac = DMatrix::zeros(*obs_dim, *state_dim);
                let mut xp = x.clone();
                for i in 0..*state_dim {
                    let step = 1e-6 * x[i].abs().max(1.0);
                    xp[i] = x[i] + step;
                    let fp = map(&xp);
                    xp[i] = x[i] - step;
                    let fm = map(&xp);
                    xp[i] = x[i];
                    jac.set_column(i, &((fp - fm) / (2.0 * step)));
                }
                jac
            }
        }
    }

    /// `P ∘ self` for a matrix `P` acting on observations.
    pub fn compose_left(&self, p: &DMatrix<f64>) -> Result<Self> {
        if p.ncols() != self.obs_dim() {
            return Err(Error::Shape(format!(
                "cannot compose a {}x{} map after an operator with {} outputs",
                p.nrows(),
                p.ncols(),
                self.obs_dim()
            )));
        }
        Ok(match self {
            Self::Linear(h) => Self::Linear(p * h),
            Self::Nonlinear {
                state_dim,
                map,
                jacobian,
                ..
            } => {
                let p1 = Arc::new(p.clone());
                let p2 = Arc::clone(&p1);
                let inner = Arc::clone(map);
                let inner_j = jacobian.clone();
                let fd = self.clone();
                Self::Nonlinear {
                    state_dim: *state_dim,
                    obs_dim: p.nrows(),
                    map: Arc::new(move |x| &*p1 * inner(x)),
                    jacobian: Some(Arc::new(move |x| match &inner_j {
                        Some(j) => &*p2 * j(x),
                        None => &*p2 * fd.jacobian(x),
                    })),
                }
            }
        })
    }
}
