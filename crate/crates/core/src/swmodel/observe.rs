use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ShallowWaterState, SwConfig};
use crate::covkit::{build_soar_covariance, CovarianceMatrix, GaussianSampler, GridGeometry, SoarKernelSpec};
use crate::error::{Error, Result};

/// The `(nx/2) × (ny/2)` observation lattice.
pub fn obs_geometry(cfg: &SwConfig) -> Result<GridGeometry> {
    if cfg.nx % 2 != 0 || cfg.ny % 2 != 0 {
        return Err(Error::Shape(format!("2x2 aggregation needs even grid dimensions, got {}x{}", cfg.nx, cfg.ny)));
    }
    Ok(GridGeometry {
        nx: cfg.nx / 2,
        ny: cfg.ny / 2,
    })
}

fn aggregate(field: &[f64], cfg: &SwConfig, og: &GridGeometry, out: &mut [f64]) {
    let ny = cfg.ny;
    for i in 0..og.nx {
        for j in 0..og.ny {
            let k = 2 * i * ny + 2 * j;
            out[i * og.ny + j] = field[k] + field[k + ny] + field[k + 1] + field[k + ny + 1];
        }
    }
}

/// Noise-free observation: 2×2 sums of `u`, then of `v`.
pub fn observe_exact(state: &ShallowWaterState, cfg: &SwConfig) -> Result<DVector<f64>> {
    let og = obs_geometry(cfg)?;
    let m = og.len();
    let mut y = DVector::zeros(2 * m);
    aggregate(&state.u, cfg, &og, &mut y.as_mut_slice()[..m]);
    aggregate(&state.v, cfg, &og, &mut y.as_mut_slice()[m..]);
    Ok(y)
}

/// Observation with additive `N(0, R)` noise drawn from `seed`.
pub fn observe(state: &ShallowWaterState, cfg: &SwConfig, r: &CovarianceMatrix, seed: u64) -> Result<DVector<f64>> {
    let y = observe_exact(state, cfg)?;
    if r.dim() != y.len() {
        return Err(Error::Shape(format!("R is {0}x{0}, observation has {1} entries", r.dim(), y.len())));
    }
    let sampler = GaussianSampler::new(DVector::zeros(y.len()), r)?;
    Ok(y + sampler.draw_noise(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Matrix form of [`observe_exact`] acting on the `(u, v)` state.
pub fn linear_operator(cfg: &SwConfig) -> Result<DMatrix<f64>> {
    let og = obs_geometry(cfg)?;
    let (m, n) = (og.len(), cfg.cells());
    let mut h = DMatrix::zeros(2 * m, 2 * n);
    for f in 0..2 {
        for i in 0..og.nx {
            for j in 0..og.ny {
                let row = f * m + i * og.ny + j;
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    h[(row, f * n + (2 * i + di) * cfg.ny + 2 * j + dj)] = 1.0;
                }
            }
        }
    }
    Ok(h)
}

/// Observation-error model: SOAR correlation over the observation lattice
/// with standard deviation `sigma` raised by `center_factor` inside a disk
/// of `center_radius` lattice units around the lattice center. The `u` and
/// `v` blocks are identical and uncorrelated with each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsNoiseSpec {
    pub sigma: f64,
    pub center_factor: f64,
    pub center_radius: f64,
    pub length_scale: f64,
}

impl Default for ObsNoiseSpec {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            center_factor: 4.0,
            center_radius: 4.0,
            length_scale: 1.0,
        }
    }
}

impl ObsNoiseSpec {
    pub fn std_devs(&self, og: &GridGeometry) -> Vec<f64> {
        let ci = (og.nx as f64 - 1.0) / 2.0;
        let cj = (og.ny as f64 - 1.0) / 2.0;
        (0..og.len())
            .map(|p| {
                let (i, j) = og.unflatten(p);
                let r = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
                if r <= self.center_radius {
                    self.sigma * self.center_factor
                } else {
                    self.sigma
                }
            })
            .collect()
    }

    pub fn covariance(&self, cfg: &SwConfig) -> Result<CovarianceMatrix> {
        let og = obs_geometry(cfg)?;
        let spec = SoarKernelSpec {
            length_scale: self.length_scale,
            variance: self.std_devs(&og).iter().map(|s| s * s).collect(),
        };
        let block = build_soar_covariance(&og, &spec)?;
        CovarianceMatrix::block_diagonal(&[&block, &block])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_u_observes_fours() {
        let cfg = SwConfig::default();
        let mut s = ShallowWaterState::rest(&cfg, 1.0);
        s.u.iter_mut().for_each(|u| *u = 1.0);
        let y = observe_exact(&s, &cfg).unwrap();
        assert_eq!(y.len(), 200);
        assert!(y.rows(0, 100).iter().all(|&v| v == 4.0));
        assert!(y.rows(100, 100).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn operator_rows_have_four_ones() {
        let cfg = SwConfig::default();
        let h = linear_operator(&cfg).unwrap();
        assert_eq!(h.shape(), (200, 800));
        for r in 0..200 {
            assert_eq!(h.row(r).iter().filter(|&&v| v == 1.0).count(), 4);
            assert_eq!(h.row(r).sum(), 4.0);
        }
    }

    #[test]
    fn odd_grid_rejected() {
        let cfg = SwConfig { nx: 21, ..SwConfig::default() };
        assert!(matches!(linear_operator(&cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn r_has_raised_center() {
        let cfg = SwConfig::default();
        let r = ObsNoiseSpec::default().covariance(&cfg).unwrap();
        assert_eq!(r.dim(), 200);
        let og = obs_geometry(&cfg).unwrap();
        let center = og.flatten(5, 5);
        let corner = og.flatten(0, 0);
        assert!((r.matrix()[(center, center)] / r.matrix()[(corner, corner)] - 16.0).abs() < 1e-12);
        assert_eq!(r.matrix()[(0, 100)], 0.0);
        assert_eq!(r.matrix()[(center + 100, center + 100)], r.matrix()[(center, center)]);
        r.check_psd().unwrap();
    }
}
