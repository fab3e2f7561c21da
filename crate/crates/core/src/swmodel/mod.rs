//! Non-conservative 2D shallow-water model on a regular grid, the 2×2
//! aggregation observation operator and twin-experiment generation.
//!
//! Fields are stored row-major with index `i * ny + j`, `i` along x.
//! The assimilated state is `(u, v)` concatenated; `h` is carried by the
//! model only.

mod observe;
mod twin;

pub use observe::{linear_operator, obs_geometry, observe, observe_exact, ObsNoiseSpec};
pub use twin::{
    correlation_at_distance, load_trajectory, make_twin_dataset, save_trajectory, substream, TwinDataset, TwinSpec,
};

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::covkit::GridGeometry;
use crate::error::{Error, Result};

/// Initial column of raised water.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cylinder {
    /// Center in grid-index units; `None` means the grid center.
    pub center: Option<(f64, f64)>,
    pub radius: f64,
    pub height: f64,
    pub base: f64,
}

impl Default for Cylinder {
    fn default() -> Self {
        Self {
            center: None,
            radius: 2.5,
            height: 0.1,
            base: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwConfig {
    pub nx: usize,
    pub ny: usize,
    /// Time step (s).
    pub dt: f64,
    /// Grid spacing in model length units.
    pub dx: f64,
    /// Linear drag coefficient.
    pub b: f64,
    pub g: f64,
    pub cylinder: Cylinder,
}

impl Default for SwConfig {
    fn default() -> Self {
        Self {
            nx: 20,
            ny: 20,
            dt: 1e-4,
            dx: DEFAULT_DX,
            b: 0.1,
            g: 1.0,
            cylinder: Cylinder::default(),
        }
    }
}

/// Default spacing: a unit-speed gravity wave crosses one cell in 0.1 s, so
/// the error covariance changes visibly over the 2 s experiment window.
pub const DEFAULT_DX: f64 = 0.1;

impl SwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::Parameter(format!("grid {}x{} too small", self.nx, self.ny)));
        }
        for (name, v) in [("dt", self.dt), ("dx", self.dx)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.b >= 0.0 && self.g > 0.0) {
            return Err(Error::Parameter(format!("need b ≥ 0 and g > 0, got b = {}, g = {}", self.b, self.g)));
        }
        if !(self.cylinder.base > 0.0) {
            return Err(Error::Parameter("base level must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry { nx: self.nx, ny: self.ny }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Dimension of the assimilated `(u, v)` state.
    pub fn state_dim(&self) -> usize {
        2 * self.cells()
    }

    /// Step index for `t`, which must be a multiple of `dt`.
    pub fn step_index(&self, t: f64) -> Result<u64> {
        let k = (t / self.dt).round();
        if !(k >= 0.0) || (k * self.dt - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::Parameter(format!("t = {t} is not a non-negative multiple of dt = {}", self.dt)));
        }
        Ok(k as u64)
    }

    pub fn time_of(&self, step: u64) -> f64 {
        step as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShallowWaterState {
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub t: f64,
}

impl ShallowWaterState {
    /// Flat water at `level` with zero velocity.
    pub fn rest(cfg: &SwConfig, level: f64) -> Self {
        let n = cfg.cells();
        Self {
            h: vec![level; n],
            u: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            t: 0.0,
        }
    }

    /// Resting water with the configured cylinder raised.
    pub fn initial(cfg: &SwConfig) -> Self {
        let c = cfg.cylinder;
        let (ci, cj) = c
            .center
            .unwrap_or(((cfg.nx as f64 - 1.0) / 2.0, (cfg.ny as f64 - 1.0) / 2.0));
        let mut s = Self::rest(cfg, c.base);
        for i in 0..cfg.nx {
            for j in 0..cfg.ny {
                let r = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
                if r <= c.radius {
                    s.h[i * cfg.ny + j] += c.height;
                }
            }
        }
        s
    }

    /// `(u, v)` concatenated.
    pub fn velocity(&self) -> DVector<f64> {
        DVector::from_iterator(self.u.len() + self.v.len(), self.u.iter().chain(&self.v).copied())
    }

    /// Replaces `(u, v)` from a concatenated vector.
    pub fn set_velocity(&mut self, x: &DVector<f64>) -> Result<()> {
        let n = self.u.len();
        if x.len() != 2 * n {
            return Err(Error::Shape(format!("velocity vector has {} entries, need {}", x.len(), 2 * n)));
        }
        self.u.copy_from_slice(&x.as_slice()[..n]);
        self.v.copy_from_slice(&x.as_slice()[n..]);
        Ok(())
    }

    pub fn mass(&self) -> f64 {
        self.h.iter().sum()
    }
}

/// Reusable buffers for stepping in place.
#[derive(Debug, Default)]
struct Scratch {
    h: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
}

fn check_shape(s: &ShallowWaterState, cfg: &SwConfig) -> Result<()> {
    let n = cfg.cells();
    if s.h.len() != n || s.u.len() != n || s.v.len() != n {
        return Err(Error::Shape(format!("state fields do not match a {}x{} grid", cfg.nx, cfg.ny)));
    }
    Ok(())
}

/// Centered difference in the interior, one-sided at the two ends.
#[inline]
fn grad(f: &[f64], idx: usize, pos: usize, len: usize, stride: usize, dx: f64) -> f64 {
    if pos == 0 {
        (f[idx + stride] - f[idx]) / dx
    } else if pos == len - 1 {
        (f[idx] - f[idx - stride]) / dx
    } else {
        (f[idx + stride] - f[idx - stride]) / (2.0 * dx)
    }
}

/// Flux divergence. The end cells use the face average with a zero wall
/// flux so the sum over a line telescopes to zero.
#[inline]
fn flux_div(f: &[f64], idx: usize, pos: usize, len: usize, stride: usize, dx: f64) -> f64 {
    if pos == 0 {
        (f[idx] + f[idx + stride]) / (2.0 * dx)
    } else if pos == len - 1 {
        -(f[idx - stride] + f[idx]) / (2.0 * dx)
    } else {
        (f[idx + stride] - f[idx - stride]) / (2.0 * dx)
    }
}

fn step_in_place(s: &mut ShallowWaterState, cfg: &SwConfig, sc: &mut Scratch) -> Result<()> {
    let (nx, ny) = (cfg.nx, cfg.ny);
    let n = nx * ny;
    let (dt, dx, g, b) = (cfg.dt, cfg.dx, cfg.g, cfg.b);
    for buf in [&mut sc.h, &mut sc.u, &mut sc.v, &mut sc.fx, &mut sc.fy] {
        buf.resize(n, 0.0);
    }
    for k in 0..n {
        sc.fx[k] = s.u[k] * s.h[k];
        sc.fy[k] = s.v[k] * s.h[k];
    }
    for i in 0..nx {
        for j in 0..ny {
            let k = i * ny + j;
            // free-slip walls: only the normal component vanishes
            sc.u[k] = if i == 0 || i == nx - 1 {
                0.0
            } else {
                s.u[k] + dt * (-g * grad(&s.h, k, i, nx, ny, dx) - b * s.u[k])
            };
            sc.v[k] = if j == 0 || j == ny - 1 {
                0.0
            } else {
                s.v[k] + dt * (-g * grad(&s.h, k, j, ny, 1, dx) - b * s.v[k])
            };
            let div = flux_div(&sc.fx, k, i, nx, ny, dx) + flux_div(&sc.fy, k, j, ny, 1, dx);
            sc.h[k] = s.h[k] - dt * div;
        }
    }
    let step = s.step + 1;
    let mut hmax = f64::NEG_INFINITY;
    let mut vmax = 0.0_f64;
    for k in 0..n {
        let (h, u, v) = (sc.h[k], sc.u[k], sc.v[k]);
        if !(h.is_finite() && u.is_finite() && v.is_finite()) {
            return Err(Error::Blowup {
                step,
                reason: format!("non-finite value in cell {k}"),
            });
        }
        if h <= 0.0 {
            return Err(Error::Blowup {
                step,
                reason: format!("non-positive height {h:e} in cell {k}"),
            });
        }
        hmax = hmax.max(h);
        vmax = vmax.max(u.abs()).max(v.abs());
    }
    let courant = dt * vmax.max((g * hmax).sqrt()) / dx;
    if courant >= 1.0 {
        return Err(Error::Blowup {
            step,
            reason: format!("Courant number {courant:.3} ≥ 1"),
        });
    }
    std::mem::swap(&mut s.h, &mut sc.h);
    std::mem::swap(&mut s.u, &mut sc.u);
    std::mem::swap(&mut s.v, &mut sc.v);
    s.step = step;
    s.t = cfg.time_of(step);
    Ok(())
}

/// One forward-Euler step.
pub fn step(state: &ShallowWaterState, cfg: &SwConfig) -> Result<ShallowWaterState> {
    check_shape(state, cfg)?;
    let mut s = state.clone();
    step_in_place(&mut s, cfg, &mut Scratch::default())?;
    Ok(s)
}

/// States saved at selected times, keyed by step index.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: BTreeMap<u64, ShallowWaterState>,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> Option<&ShallowWaterState> {
        let k = (t / self.dt).round();
        if !(k >= 0.0) {
            return None;
        }
        self.states.get(&(k as u64))
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.values().map(|s| s.t).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Integrates from `initial` to `t_end`, keeping the states at `save_times`.
pub fn simulate(initial: &ShallowWaterState, cfg: &SwConfig, t_end: f64, save_times: &[f64]) -> Result<Trajectory> {
    cfg.validate()?;
    check_shape(initial, cfg)?;
    let end = cfg.step_index(t_end)?;
    let mut saves = Vec::with_capacity(save_times.len());
    for &t in save_times {
        let k = cfg.step_index(t)?;
        if k < initial.step || k > end {
            return Err(Error::Parameter(format!(
                "save time {t} outside [{}, {t_end}]",
                initial.t
            )));
        }
        saves.push(k);
    }
    saves.sort_unstable();
    saves.dedup();
    let mut states = BTreeMap::new();
    let mut s = initial.clone();
    let mut sc = Scratch::default();
    let mut next = saves.iter().peekable();
    loop {
        if next.peek() == Some(&&s.step) {
            states.insert(s.step, s.clone());
            next.next();
        }
        if s.step >= end {
            break;
        }
        step_in_place(&mut s, cfg, &mut sc)?;
    }
    if save_times.is_empty() && t_end == initial.t {
        states.insert(s.step, s.clone());
    }
    Ok(Trajectory { dt: cfg.dt, states })
}
