#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use obscomp::assim::{AssimilationProblem, ObservationOperator};
use obscomp::covkit::CovarianceMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `A Aᵀ / n + shift I`, comfortably SPD.
pub fn random_spd(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = gaussian_matrix(n, n, rng);
    let mut m = &a * a.transpose() / n as f64;
    for i in 0..n {
        m[(i, i)] += shift;
    }
    (&m + m.transpose()) * 0.5
}

pub fn random_cov(n: usize, rng: &mut ChaCha8Rng) -> Arc<CovarianceMatrix> {
    Arc::new(CovarianceMatrix::new(random_spd(n, 0.5, rng)).unwrap())
}

pub fn random_linear_problem(n: usize, m: usize, rng: &mut ChaCha8Rng) -> AssimilationProblem {
    let b = random_cov(n, rng);
    let r = random_cov(m, rng);
    let h = gaussian_matrix(m, n, rng);
    let xb = gaussian_vector(n, rng);
    let y = gaussian_vector(m, rng) * 2.0;
    AssimilationProblem::new(xb, y, b, r, ObservationOperator::Linear(h)).unwrap()
}

pub fn random_dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Known linear-Gaussian twin: `x_b = x_t + e_b`, `y = H x_t + e_o` with
/// `e_b ~ N(0, B)`, `e_o ~ N(0, R)`.
pub struct LinearGaussian {
    pub h: DMatrix<f64>,
    pub b: CovarianceMatrix,
    pub r: CovarianceMatrix,
    pub xb: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

impl LinearGaussian {
    pub fn new(n: usize, m: usize, samples: usize, seed: u64) -> Self {
        let mut g = rng(seed);
        let b = CovarianceMatrix::new(random_spd(n, 0.3, &mut g)).unwrap();
        let r = CovarianceMatrix::new(random_spd(m, 0.3, &mut g) * 0.5).unwrap();
        let h = gaussian_matrix(m, n, &mut g) / (n as f64).sqrt();
        let bs = b.sqrt().unwrap();
        let rs = r.sqrt().unwrap();
        let mut xb = Vec::with_capacity(samples);
        let mut y = Vec::with_capacity(samples);
        for _ in 0..samples {
            let xt = gaussian_vector(n, &mut g);
            xb.push(&xt + &bs * gaussian_vector(n, &mut g));
            y.push(&h * &xt + &rs * gaussian_vector(m, &mut g));
        }
        Self { h, b, r, xb, y }
    }

    pub fn hbht(&self) -> DMatrix<f64> {
        &self.h * self.b.matrix() * self.h.transpose()
    }
}

impl obscomp::diagnose::EnsembleSource for LinearGaussian {
    fn background(&self, _t: f64, k: usize) -> obscomp::Result<DVector<f64>> {
        self.xb
            .get(k)
            .cloned()
            .ok_or(obscomp::Error::DataGap(k as f64))
    }
    fn observation(&self, _t: f64, k: usize) -> obscomp::Result<DVector<f64>> {
        self.y
            .get(k)
            .cloned()
            .ok_or(obscomp::Error::DataGap(k as f64))
    }
}

/// One window step with every sample as a member.
pub fn single_step_strategy(members: usize) -> obscomp::diagnose::SamplingStrategy {
    use obscomp::diagnose::*;
    SamplingStrategy::new(StrategyName::Custom, Window::new(0.0, 1.0, 1.0).unwrap(), members)
        .unwrap()
        .analyses(true)
}

pub fn linear_gaussian_bank(sys: &LinearGaussian, n: usize) -> obscomp::diagnose::ResidualBank {
    use obscomp::diagnose::*;
    let h = ObservationOperator::Linear(sys.h.clone());
    let tpl = AnalysisTemplate {
        h: &h,
        b: &sys.b,
        r: &sys.r,
    };
    collect_residuals(sys, &h, Some(&tpl), &single_step_strategy(n), obscomp::Exec::default()).unwrap()
}
