//! Error-covariance construction and algebra: SOAR kernels on lattices,
//! eigen-based matrix roots, SPD regularization, correlated Gaussian
//! sampling and empirical covariances.

mod io;

pub use io::{load_matrix, read_matrix_bin, read_matrix_csv, save_matrix, write_matrix_bin, write_matrix_csv};
pub(crate) use io::{load_bin, save_bin};

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used by [`CovarianceMatrix::sqrt`] and
/// [`CovarianceMatrix::inverse_sqrt`].
pub const ROOT_FLOOR: f64 = 1e-12;

/// Relative tolerance under which a negative eigenvalue still counts as zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition with eigenvalues in non-increasing order.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, matched to `values`.
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition with a deterministic layout: eigenvalues in
/// descending order (ties keep their solver order) and every eigenvector
/// oriented so that its largest-magnitude component is positive.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<Eigen> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite matrix entry".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Eigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        orient(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok(Eigen { values, vectors })
}

/// Flips `v` so that its first largest-magnitude component is positive.
pub fn orient(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Symmetric positive (semi-)definite covariance matrix with a lazily
/// computed, thread-safe eigendecomposition cache.
#[derive(Debug)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
    eigen: OnceLock<Eigen>,
}

impl Clone for CovarianceMatrix {
    fn clone(&self) -> Self {
        let eigen = OnceLock::new();
        if let Some(e) = self.eigen.get() {
            let _ = eigen.set(e.clone());
        }
        Self {
            entries: self.entries.clone(),
            eigen,
        }
    }
}

impl PartialEq for CovarianceMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl CovarianceMatrix {
    /// Stores the symmetric part of `m`. Positive semi-definiteness is not
    /// checked here; see [`CovarianceMatrix::check_psd`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Shape(format!(
                "covariance must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite covariance entry".into()));
        }
        Ok(Self {
            entries: symmetrize(&m),
            eigen: OnceLock::new(),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
            eigen: OnceLock::new(),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Block-diagonal assembly, blocks placed in order along the diagonal.
    pub fn block_diagonal(blocks: &[&CovarianceMatrix]) -> Result<Self> {
        let dim: usize = blocks.iter().map(|b| b.dim()).sum();
        let mut m = DMatrix::zeros(dim, dim);
        let mut off = 0;
        for b in blocks {
            let d = b.dim();
            m.view_mut((off, off), (d, d)).copy_from(b.matrix());
            off += d;
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn eigen(&self) -> &Eigen {
        self.eigen.get_or_init(|| {
            sym_eigen(&self.entries).expect("finite square matrix checked at construction")
        })
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen().values[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let v = &self.eigen().values;
        v[v.len() - 1]
    }

    /// Fails when an eigenvalue is below `-PSD_TOLERANCE * max(|λ|)`.
    pub fn check_psd(&self) -> Result<()> {
        let e = self.eigen();
        let scale = e.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for (i, &v) in e.values.iter().enumerate() {
            if v < -PSD_TOLERANCE * scale {
                return Err(Error::Degenerate(format!(
                    "eigenvalue #{i} = {v:e} is negative beyond tolerance"
                )));
            }
        }
        Ok(())
    }

    /// `V diag(λ^p) Vᵀ` for `p = ±1/2`, refusing eigenvalues below the floor.
    fn root(&self, exponent: f64) -> Result<DMatrix<f64>> {
        let e = self.eigen();
        let lmax = e.values[0];
        let floor = ROOT_FLOOR * lmax.abs();
        for (i, &v) in e.values.iter().enumerate() {
            if !(v > floor) {
                return Err(Error::Singular {
                    index: i,
                    value: v,
                    floor,
                });
            }
        }
        let scaled = DVector::from_iterator(e.values.len(), e.values.iter().map(|v| v.powf(exponent)));
        Ok(spectral(&e.vectors, &scaled))
    }

    pub fn inverse_sqrt(&self) -> Result<DMatrix<f64>> {
        self.root(-0.5)
    }

    pub fn sqrt(&self) -> Result<DMatrix<f64>> {
        self.root(0.5)
    }

    /// Symmetric square root of a semi-definite matrix: eigenvalues within
    /// the PSD tolerance of zero are clamped to zero.
    pub fn psd_sqrt(&self) -> Result<DMatrix<f64>> {
        self.check_psd()?;
        let e = self.eigen();
        let scaled =
            DVector::from_iterator(e.values.len(), e.values.iter().map(|v| v.max(0.0).sqrt()));
        Ok(spectral(&e.vectors, &scaled))
    }
}

/// `V diag(d) Vᵀ`, symmetrized.
fn spectral(v: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= d[j];
    }
    symmetrize(&(scaled * v.transpose()))
}

/// Regular 2D lattice flattened row-major: `flatten(i, j) = i * ny + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
}

impl GridGeometry {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Parameter(format!("grid {nx}x{ny} is empty")));
        }
        Ok(Self { nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    pub fn unflatten(&self, p: usize) -> (usize, usize) {
        (p / self.ny, p % self.ny)
    }

    /// Euclidean distance between two flattened lattice points, in grid units.
    pub fn distance(&self, p: usize, q: usize) -> f64 {
        let (pi, pj) = self.unflatten(p);
        let (qi, qj) = self.unflatten(q);
        let di = pi as f64 - qi as f64;
        let dj = pj as f64 - qj as f64;
        (di * di + dj * dj).sqrt()
    }
}

/// SOAR (Balgovind) kernel: correlation `(1 + r/L) exp(-r/L)` with
/// per-point marginal variances.
#[derive(Debug, Clone, PartialEq)]
pub struct SoarKernelSpec {
    pub length_scale: f64,
    pub variance: Vec<f64>,
}

impl SoarKernelSpec {
    pub fn homogeneous(length_scale: f64, sigma: f64, n: usize) -> Self {
        Self {
            length_scale,
            variance: vec![sigma * sigma; n],
        }
    }
}

pub fn soar_correlation(r: f64, length_scale: f64) -> f64 {
    let x = r / length_scale;
    (1.0 + x) * (-x).exp()
}

pub fn build_soar_covariance(geom: &GridGeometry, spec: &SoarKernelSpec) -> Result<CovarianceMatrix> {
    if !(spec.length_scale > 0.0) || !spec.length_scale.is_finite() {
        return Err(Error::Parameter(format!(
            "SOAR length scale must be positive, got {}",
            spec.length_scale
        )));
    }
    let n = geom.len();
    if spec.variance.len() != n {
        return Err(Error::Shape(format!(
            "variance field has {} entries, grid has {n} points",
            spec.variance.len()
        )));
    }
    if spec.variance.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Parameter("variance field must be nonnegative".into()));
    }
    let sd: Vec<f64> = spec.variance.iter().map(|v| v.sqrt()).collect();
    let mut m = DMatrix::zeros(n, n);
    for p in 0..n {
        m[(p, p)] = spec.variance[p];
        for q in (p + 1)..n {
            let c = sd[p] * sd[q] * soar_correlation(geom.distance(p, q), spec.length_scale);
            m[(p, q)] = c;
            m[(q, p)] = c;
        }
    }
    CovarianceMatrix::new(m)
}

/// Scale of the identity blend used by [`regularize_spd`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpdRegularizer {
    /// `C = Tr(M_sym) / dim × I`: preserves the trace of the input.
    #[default]
    TraceNormalized,
    /// `C = Tr(M_sym) × I` as written for the hydrological post-processing.
    FullTrace,
}

#[derive(Debug, Clone)]
pub struct Regularized {
    pub cov: CovarianceMatrix,
    /// Set when the blend only reached semi-definiteness.
    pub semidefinite_only: bool,
}

/// Hybrid SPD regularization `(1 − μ) M_sym + μ C`.
pub fn regularize_spd(m: &DMatrix<f64>, mu: f64, mode: SpdRegularizer) -> Result<Regularized> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "regularization needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::Parameter(format!("mu must lie in [0, 1], got {mu}")));
    }
    let n = m.nrows();
    let sym = symmetrize(m);
    let tr = sym.trace();
    let c = match mode {
        SpdRegularizer::TraceNormalized => tr / n as f64,
        SpdRegularizer::FullTrace => tr,
    };
    let mut out = sym * (1.0 - mu);
    for i in 0..n {
        out[(i, i)] += mu * c;
    }
    let cov = CovarianceMatrix::new(out)?;
    let lmax = cov.max_eigenvalue();
    let semidefinite_only = !(cov.min_eigenvalue() > ROOT_FLOOR * lmax.abs());
    Ok(Regularized {
        cov,
        semidefinite_only,
    })
}

/// Draws from `N(mean, cov)` through the symmetric square root of `cov`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    root: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &CovarianceMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::Shape(format!(
                "mean has dimension {}, covariance {}",
                mean.len(),
                cov.dim()
            )));
        }
        Ok(Self {
            mean,
            root: cov.psd_sqrt()?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal(self.dim(), rng);
        &self.mean + &self.root * z
    }

    /// Zero-mean perturbation `cov^{1/2} z`.
    pub fn draw_noise<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.root * standard_normal(self.dim(), rng)
    }
}

pub fn standard_normal<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// `n` samples of `N(mean, cov)` as matrix columns, deterministic in `seed`.
pub fn sample_gaussian(mean: &DVector<f64>, cov: &CovarianceMatrix, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let sampler = GaussianSampler::new(mean.clone(), cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(mean.len(), n);
    for j in 0..n {
        out.set_column(j, &sampler.draw(&mut rng));
    }
    Ok(out)
}

/// `(1/(n−1)) Σ (s − m)(s − m)ᵀ` over sample columns, with `m` the given
/// center or the sample mean.
pub fn empirical_covariance(samples: &DMatrix<f64>, center: Option<&DVector<f64>>) -> Result<DMatrix<f64>> {
    let n = samples.ncols();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "empirical covariance needs at least 2 samples, got {n}"
        )));
    }
    let m = match center {
        Some(c) => {
            if c.len() != samples.nrows() {
                return Err(Error::Shape(format!(
                    "center has dimension {}, samples {}",
                    c.len(),
                    samples.nrows()
                )));
            }
            c.clone()
        }
        None => samples.column_mean(),
    };
    let mut dev = samples.clone();
    for mut col in dev.column_iter_mut() {
        col -= &m;
    }
    let cov = &dev * dev.transpose() / (n as f64 - 1.0);
    Ok(symmetrize(&cov))
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_spd(n: usize, seed: u64) -> CovarianceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        CovarianceMatrix::new(m).unwrap()
    }

    #[test]
    fn soar_diagonal_is_variance() {
        let g = GridGeometry::new(4, 4).unwrap();
        let c = build_soar_covariance(&g, &SoarKernelSpec::homogeneous(2.0, 0.2, 16)).unwrap();
        for p in 0..16 {
            assert_relative_eq!(c.matrix()[(p, p)], 0.04, epsilon = 1e-15);
        }
    }

    #[test]
    fn soar_correlation_at_one_length_scale() {
        let g = GridGeometry::new(20, 20).unwrap();
        let c = build_soar_covariance(&g, &SoarKernelSpec::homogeneous(4.0, 0.2, 400)).unwrap();
        let p = g.flatten(5, 5);
        let q = g.flatten(9, 5);
        assert_relative_eq!(c.matrix()[(p, q)] / 0.04, 2.0 * (-1.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(2.0 * (-1.0f64).exp(), 0.7357588823428847, epsilon = 1e-15);
    }

    #[test]
    fn soar_matches_double_loop() {
        let g = GridGeometry::new(3, 3).unwrap();
        let c = build_soar_covariance(&g, &SoarKernelSpec::homogeneous(1.0, 1.0, 9)).unwrap();
        for (a, pa) in [(0usize, 0usize), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)]
            .iter()
            .enumerate()
        {
            for (b, pb) in [(0usize, 0usize), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)]
                .iter()
                .enumerate()
            {
                let dx = pa.0 as f64 - pb.0 as f64;
                let dy = pa.1 as f64 - pb.1 as f64;
                let r = (dx * dx + dy * dy).sqrt();
                let want = (1.0 + r) * (-r).exp();
                assert_relative_eq!(c.matrix()[(a, b)], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn soar_rejects_bad_parameters() {
        let g = GridGeometry::new(2, 2).unwrap();
        assert!(matches!(
            build_soar_covariance(&g, &SoarKernelSpec::homogeneous(0.0, 1.0, 4)),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            build_soar_covariance(&g, &SoarKernelSpec::homogeneous(1.0, 1.0, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn roots_of_diagonal() {
        let c = CovarianceMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let s = c.sqrt().unwrap();
        let is = c.inverse_sqrt().unwrap();
        assert_relative_eq!(s, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])), epsilon = 1e-14);
        assert_relative_eq!(is, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0 / 3.0])), epsilon = 1e-14);
        let id = CovarianceMatrix::identity(5);
        assert_relative_eq!(id.inverse_sqrt().unwrap(), DMatrix::identity(5, 5), epsilon = 1e-14);
        assert_relative_eq!(id.sqrt().unwrap(), DMatrix::identity(5, 5), epsilon = 1e-14);
    }

    #[test]
    fn roots_of_random_spd_multiply_out() {
        let c = random_spd(6, 11);
        let is = c.inverse_sqrt().unwrap();
        let s = c.sqrt().unwrap();
        let eye = DMatrix::<f64>::identity(6, 6);
        assert!(rel_frobenius(&(&is * c.matrix() * &is), &eye) < 1e-8);
        assert!(rel_frobenius(&(&s * &s), c.matrix()) < 1e-8);
    }

    #[test]
    fn singular_matrix_names_offending_index() {
        let c = CovarianceMatrix::from_diagonal(&[1.0, 0.0, 2.0]).unwrap();
        match c.inverse_sqrt() {
            Err(Error::Singular { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn eigen_layout_is_deterministic() {
        let c = random_spd(7, 3);
        let e = c.eigen();
        for w in e.values.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
        let vtv = e.vectors.transpose() * &e.vectors;
        assert!((vtv - DMatrix::identity(7, 7)).amax() < 1e-10);
        for col in e.vectors.column_iter() {
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
    }

    #[test]
    fn regularize_identity_when_mu_zero() {
        let c = random_spd(5, 8);
        let r = regularize_spd(c.matrix(), 0.0, SpdRegularizer::TraceNormalized).unwrap();
        assert_eq!(r.cov.matrix(), c.matrix());
        assert!(!r.semidefinite_only);
    }

    #[test]
    fn regularize_lifts_small_negative_eigenvalue() {
        let q = random_spd(4, 21).eigen().vectors.clone();
        let d = DVector::from_vec(vec![1.0, 0.5, 0.2, -1e-3]);
        let m = spectral(&q, &d);
        let before = sym_eigen(&m).unwrap();
        assert!(before.values[3] < 0.0);
        let r = regularize_spd(&m, 0.1, SpdRegularizer::TraceNormalized).unwrap();
        let after = sym_eigen(r.cov.matrix()).unwrap();
        assert!(after.values.iter().all(|&v| v > 0.0));
        assert!(!r.semidefinite_only);
        assert_relative_eq!(r.cov.trace(), m.trace(), epsilon = 1e-12);
    }

    #[test]
    fn regularize_full_trace_blends_whole_trace() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3.0]);
        let r = regularize_spd(&m, 0.1, SpdRegularizer::FullTrace).unwrap();
        let mut want = &m * 0.9;
        for i in 0..3 {
            want[(i, i)] += 0.1 * 6.0;
        }
        assert_relative_eq!(r.cov.matrix().clone(), want, epsilon = 1e-14);
        assert!(regularize_spd(&DMatrix::zeros(2, 3), 0.1, SpdRegularizer::FullTrace).is_err());
        assert!(regularize_spd(&m, 1.5, SpdRegularizer::FullTrace).is_err());
    }

    #[test]
    fn zero_covariance_samples_the_mean() {
        let cov = CovarianceMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let s = sample_gaussian(&mean, &cov, 5, 1).unwrap();
        for col in s.column_iter() {
            assert_eq!(col.into_owned(), mean);
        }
    }

    #[test]
    fn sampling_variance_and_reproducibility() {
        let cov = CovarianceMatrix::from_diagonal(&[0.04]).unwrap();
        let mean = DVector::zeros(1);
        let s = sample_gaussian(&mean, &cov, 10_000, 7).unwrap();
        let v = s.iter().map(|x| x * x).sum::<f64>() / 10_000.0;
        assert!((v - 0.04).abs() < 0.05 * 0.04, "variance {v}");
        assert_eq!(s, sample_gaussian(&mean, &cov, 10_000, 7).unwrap());
        assert!(sample_gaussian(&DVector::zeros(2), &cov, 1, 0).is_err());
    }

    #[test]
    fn empirical_covariance_hand_cases() {
        let same = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(empirical_covariance(&same, None).unwrap(), DMatrix::zeros(2, 2));
        let pm = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        assert_eq!(
            empirical_covariance(&pm, None).unwrap(),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0])
        );
        assert!(matches!(
            empirical_covariance(&DMatrix::zeros(2, 1), None),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn empirical_covariance_converges() {
        let c = random_spd(20, 5);
        let s = sample_gaussian(&DVector::zeros(20), &c, 5000, 9).unwrap();
        let e = empirical_covariance(&s, None).unwrap();
        assert!(rel_frobenius(&e, c.matrix()) < 0.1);
    }

    #[test]
    fn block_diagonal_places_blocks() {
        let a = CovarianceMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        let b = CovarianceMatrix::from_diagonal(&[3.0]).unwrap();
        let c = CovarianceMatrix::block_diagonal(&[&a, &b]).unwrap();
        assert_eq!(c.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])));
    }
}
