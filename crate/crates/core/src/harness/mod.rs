//! Twin-experiment orchestration: projections for every method, q-sweeps of
//! the posterior error, correction ratios and misspecified-`R` studies.
//!
//! Posterior errors come from covariance algebra with the large-ensemble
//! `B_E,t` and the true `R`: for a reduced operator `P_q`,
//! `Tr(A_q) = Tr(B) − Tr(S_q⁻¹ P_q H B² Hᵀ P_qᵀ)` with
//! `S_q = P_q (HBHᵀ + R) P_qᵀ`. Rotating once by the full projection makes
//! every `q` a leading-block computation.

pub mod cli;
mod config;
mod report;

pub use config::{
    AssimilationSpec, BackgroundSpec, Config, CorrectionAverage, EnsembleSpec, EstimationSpec, HbhtEstimator,
    MisspecSpec, Strategies, WindowSpec,
};
pub use report::{fmt_f64, ExperimentReport, Manifest, SpectrumRow, SweepRow};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};

use crate::assim::ObservationOperator;
use crate::compress::{build_ic, build_oc, optimal_truncation, ProjectionOperator, SnapshotMatrix};
use crate::covkit::{build_soar_covariance, regularize_spd, CovarianceMatrix, SoarKernelSpec};
use crate::diagnose::{
    collect_residuals, estimate_hbht_cross, estimate_hbht_from_omb, AnalysisTemplate, ResidualBank, SamplingStrategy,
    StrategyName,
};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::swmodel::{make_twin_dataset, ObsNoiseSpec, TwinDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Oc,
    IcSmall,
    IcMedium,
    IcLarge,
    IcOptimal,
    Full,
}

impl Method {
    pub const COMPRESSED: [Method; 5] = [
        Method::Oc,
        Method::IcLarge,
        Method::IcMedium,
        Method::IcSmall,
        Method::IcOptimal,
    ];

    fn strategy(self) -> Option<StrategyName> {
        match self {
            Method::IcSmall => Some(StrategyName::Small),
            Method::IcMedium => Some(StrategyName::Medium),
            Method::IcLarge => Some(StrategyName::Large),
            _ => None,
        }
    }

    fn for_window(name: StrategyName) -> Option<Method> {
        match name {
            StrategyName::Small => Some(Method::IcSmall),
            StrategyName::Medium => Some(Method::IcMedium),
            StrategyName::Large => Some(Method::IcLarge),
            StrategyName::Custom => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Oc => "OC",
            Method::IcSmall => "IC-small",
            Method::IcMedium => "IC-medium",
            Method::IcLarge => "IC-large",
            Method::IcOptimal => "IC-optimal",
            Method::Full => "full",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oc" => Ok(Method::Oc),
            "ic-small" => Ok(Method::IcSmall),
            "ic-medium" => Ok(Method::IcMedium),
            "ic-large" => Ok(Method::IcLarge),
            "ic-optimal" => Ok(Method::IcOptimal),
            "full" => Ok(Method::Full),
            _ => Err(Error::Parameter(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisspecCase {
    HomogeneousVariance,
    WrongLengthscale,
}

impl fmt::Display for MisspecCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MisspecCase::HomogeneousVariance => "homogeneous-variance",
            MisspecCase::WrongLengthscale => "wrong-lengthscale",
        })
    }
}

impl FromStr for MisspecCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogeneous-variance" => Ok(MisspecCase::HomogeneousVariance),
            "wrong-lengthscale" => Ok(MisspecCase::WrongLengthscale),
            _ => Err(Error::Parameter(format!("unknown misspecification case {s:?}"))),
        }
    }
}

/// Simulates the twin dataset described by `cfg`.
pub fn build_dataset(cfg: &Config, exec: Exec) -> Result<TwinDataset> {
    cfg.validate()?;
    let r = cfg.observation.covariance(&cfg.model)?;
    make_twin_dataset(&cfg.model, &cfg.twin_spec()?, &r, exec)
}

/// Initial background-error covariance over `(u, v)`.
pub fn initial_background(cfg: &Config) -> Result<CovarianceMatrix> {
    let block = build_soar_covariance(
        &cfg.model.geometry(),
        &SoarKernelSpec::homogeneous(cfg.background.length_b, cfg.background.sigma_b, cfg.model.cells()),
    )?;
    CovarianceMatrix::block_diagonal(&[&block, &block])
}

/// Residual bank of one sampling window. `r` is the observation-error
/// covariance the analyses assume.
pub fn strategy_bank(
    ds: &TwinDataset,
    cfg: &Config,
    strategy: &SamplingStrategy,
    r: &CovarianceMatrix,
    exec: Exec,
) -> Result<ResidualBank> {
    let h = ObservationOperator::Linear(ds.h.clone());
    match cfg.assimilation.hbht_estimator {
        HbhtEstimator::Omb => collect_residuals(ds, &h, None, &strategy.analyses(false), exec),
        HbhtEstimator::Cross => {
            let b0 = initial_background(cfg)?;
            let tpl = AnalysisTemplate {
                h: &h,
                b: &b0,
                r,
            };
            collect_residuals(ds, &h, Some(&tpl), &strategy.analyses(true), exec)
        }
    }
}

/// Desroziers `HBHᵀ` over one window under the assumed `r`, optionally
/// regularized.
pub fn estimate_window_hbht(
    ds: &TwinDataset,
    cfg: &Config,
    strategy: &SamplingStrategy,
    r: &CovarianceMatrix,
    exec: Exec,
) -> Result<DMatrix<f64>> {
    let bank = strategy_bank(ds, cfg, strategy, r, exec)?;
    let est = match cfg.assimilation.hbht_estimator {
        HbhtEstimator::Omb => estimate_hbht_from_omb(&bank, r)?,
        HbhtEstimator::Cross => estimate_hbht_cross(&bank)?,
    };
    if cfg.estimation.mu > 0.0 {
        Ok(regularize_spd(&est, cfg.estimation.mu, cfg.estimation.regularizer)?.cov.into_matrix())
    } else {
        Ok(est)
    }
}

/// Observation snapshots pooled over a window's times and members.
pub fn oc_snapshots(ds: &TwinDataset, strategy: &SamplingStrategy) -> Result<SnapshotMatrix> {
    let mut cols = Vec::new();
    let mut times = Vec::new();
    for t in strategy.window.times() {
        let y = ds.observations(t)?;
        if strategy.n_members > y.ncols() {
            return Err(Error::DataGap(t));
        }
        for k in 0..strategy.n_members {
            cols.push(y.column(k).into_owned());
            times.push(t);
        }
    }
    SnapshotMatrix::from_columns(&cols, times)
}

/// Full-rank projections for every compressed method. Window methods have
/// one projection; `IC-optimal` has one per assimilation time.
#[derive(Debug, Clone)]
pub struct MethodProjections {
    pub method: Method,
    pub per_time: Vec<(f64, ProjectionOperator)>,
}

impl MethodProjections {
    pub fn at(&self, t: f64) -> &ProjectionOperator {
        self.per_time
            .iter()
            .find(|(s, _)| (s - t).abs() < 1e-12)
            .map(|(_, p)| p)
            .unwrap_or(&self.per_time[0].1)
    }
}

/// Builds the full-rank projection of `method` under the assumed `r_a`,
/// which whitens every method and also enters the window estimates.
pub fn build_method_projection(
    ds: &TwinDataset,
    cfg: &Config,
    method: Method,
    r_a: &Arc<CovarianceMatrix>,
    exec: Exec,
) -> Result<MethodProjections> {
    let m = ds.obs_dim();
    let per_time = match method {
        Method::Oc => {
            let s = cfg.strategy.get(cfg.assimilation.oc_window)?;
            let snaps = oc_snapshots(ds, &s)?;
            let max = snaps.obs_dim().min(snaps.n_obs());
            let p = match build_oc(&snaps, Arc::clone(r_a), max) {
                Err(Error::Rank { max, .. }) => build_oc(&snaps, Arc::clone(r_a), max)?,
                other => other?,
            };
            vec![(f64::NAN, p)]
        }
        Method::IcSmall | Method::IcMedium | Method::IcLarge => {
            let s = cfg.strategy.get(method.strategy().expect("window method"))?;
            let est = estimate_window_hbht(ds, cfg, &s, r_a, exec)?;
            vec![(f64::NAN, build_ic(&est, Arc::clone(r_a), m)?)]
        }
        Method::IcOptimal => cfg
            .assimilation
            .times
            .iter()
            .map(|&t| {
                let g = hbht_exact(ds, t)?;
                Ok((t, build_ic(&g, Arc::clone(r_a), m)?))
            })
            .collect::<Result<Vec<_>>>()?,
        Method::Full => return Err(Error::Parameter("the full method has no projection".into())),
    };
    Ok(MethodProjections { method, per_time })
}

/// `H B_E,t Hᵀ`.
pub fn hbht_exact(ds: &TwinDataset, t: f64) -> Result<DMatrix<f64>> {
    let b = ds.b_exact(t)?;
    Ok(&ds.h * b.matrix() * ds.h.transpose())
}

/// Observation-space moments of `B_E,t` shared by every method at one time.
#[derive(Debug, Clone)]
pub struct TimeMoments {
    pub t: f64,
    pub trace_u: f64,
    pub trace_v: f64,
    /// `H B Hᵀ`
    pub g: DMatrix<f64>,
    /// `H B E_u B Hᵀ` and `H B E_v B Hᵀ`, `E_f` selecting one field.
    pub w_u: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
}

pub fn time_moments(ds: &TwinDataset, t: f64) -> Result<TimeMoments> {
    let b = ds.b_exact(t)?.matrix();
    let n = ds.cfg.cells();
    let hb = &ds.h * b;
    let g = crate::covkit::symmetrize(&(&hb * ds.h.transpose()));
    let hu = hb.columns(0, n);
    let hv = hb.columns(n, n);
    Ok(TimeMoments {
        t,
        trace_u: (0..n).map(|i| b[(i, i)]).sum(),
        trace_v: (n..2 * n).map(|i| b[(i, i)]).sum(),
        g,
        w_u: &hu * hu.transpose(),
        w_v: &hv * hv.transpose(),
    })
}

/// Posterior traces `(total, u, v)` for each `q`, given the full rotation
/// `p` (rows are the nested directions) and the true `R`.
pub fn posterior_traces(
    mom: &TimeMoments,
    p: &DMatrix<f64>,
    r_tilde: &DMatrix<f64>,
    qs: &[usize],
) -> Result<Vec<(usize, f64, f64, f64)>> {
    let gt = p * &mom.g * p.transpose();
    let wu = p * &mom.w_u * p.transpose();
    let wv = p * &mom.w_v * p.transpose();
    let mut out = Vec::with_capacity(qs.len());
    for &q in qs {
        if q == 0 || q > p.nrows() {
            return Err(Error::Rank {
                requested: q,
                max: p.nrows(),
            });
        }
        let s = gt.view((0, 0), (q, q)) + r_tilde.view((0, 0), (q, q));
        let chol = Cholesky::new(crate::covkit::symmetrize(&s))
            .ok_or_else(|| Error::SingularSystem(format!("reduced innovation covariance at q = {q}")))?;
        let du = chol.solve(&wu.view((0, 0), (q, q)).into_owned()).trace();
        let dv = chol.solve(&wv.view((0, 0), (q, q)).into_owned()).trace();
        let au = mom.trace_u - du;
        let av = mom.trace_v - dv;
        out.push((q, au + av, au, av));
    }
    Ok(out)
}

/// `P R Pᵀ`, exactly the identity when the projection was whitened by `R`.
fn reduced_r(proj: &ProjectionOperator, r_true: &CovarianceMatrix, p: &DMatrix<f64>) -> DMatrix<f64> {
    if **proj.built_with() == *r_true {
        DMatrix::identity(p.nrows(), p.nrows())
    } else {
        p * r_true.matrix() * p.transpose()
    }
}

/// Averages posterior traces of one method over the assimilation times.
fn method_sweep(
    ds: &TwinDataset,
    moments: &[TimeMoments],
    proj: &MethodProjections,
    label: &str,
    qs: &[usize],
) -> Result<Vec<SweepRow>> {
    let max_q = proj.per_time.iter().map(|(_, p)| p.max_rank()).min().unwrap_or(0);
    let qs: Vec<usize> = qs.iter().copied().filter(|&q| q <= max_q).collect();
    let mut acc = vec![(0.0, 0.0, 0.0); qs.len()];
    for mom in moments {
        let pr = proj.at(mom.t);
        let p = pr.operator();
        let rt = reduced_r(pr, &ds.r, &p);
        for (a, (_, e, u, v)) in acc.iter_mut().zip(posterior_traces(mom, &p, &rt, &qs)?) {
            a.0 += e;
            a.1 += u;
            a.2 += v;
        }
    }
    let n = moments.len() as f64;
    Ok(qs
        .iter()
        .zip(acc)
        .map(|(&q, (e, u, v))| SweepRow {
            method: label.to_string(),
            q,
            e_posterior: e / n,
            e_u: u / n,
            e_v: v / n,
        })
        .collect())
}

/// `ℰ` of the uncompressed analysis averaged over the times.
pub fn full_posterior(ds: &TwinDataset, moments: &[TimeMoments]) -> Result<SweepRow> {
    let m = ds.obs_dim();
    let eye = DMatrix::identity(m, m);
    let mut acc = (0.0, 0.0, 0.0);
    for mom in moments {
        let (_, e, u, v) = posterior_traces(mom, &eye, ds.r.matrix(), &[m])?[0];
        acc.0 += e;
        acc.1 += u;
        acc.2 += v;
    }
    let n = moments.len() as f64;
    Ok(SweepRow {
        method: Method::Full.to_string(),
        q: m,
        e_posterior: acc.0 / n,
        e_u: acc.1 / n,
        e_v: acc.2 / n,
    })
}

fn spectrum_rows(proj: &MethodProjections, label: &str) -> Vec<SpectrumRow> {
    proj.per_time
        .iter()
        .map(|(t, p)| SpectrumRow {
            method: label.to_string(),
            time: (!t.is_nan()).then_some(*t),
            values: p.spectrum().as_slice().to_vec(),
            q_optimal: optimal_truncation(p.spectrum().as_slice()).ok(),
            clamped_negatives: p.clamped_negatives(),
        })
        .collect()
}

/// Projections of `methods` under exact `R`, built in parallel.
pub fn build_projections(ds: &TwinDataset, cfg: &Config, methods: &[Method], exec: Exec) -> Result<Vec<MethodProjections>> {
    let r = Arc::new(ds.r.clone());
    exec.try_map(methods.len(), |i| build_method_projection(ds, cfg, methods[i], &r, Exec::Sequential))
}

fn all_moments(ds: &TwinDataset, cfg: &Config, exec: Exec) -> Result<Vec<TimeMoments>> {
    let times = &cfg.assimilation.times;
    exec.try_map(times.len(), |i| time_moments(ds, times[i]))
}

/// The spelling a unit enum has in the config file.
fn config_name<T: serde::Serialize>(v: &T) -> String {
    toml::Value::try_from(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn provenance(cfg: &Config) -> Vec<(String, String)> {
    vec![
        ("hbht_estimator".into(), config_name(&cfg.assimilation.hbht_estimator)),
        ("oc_window".into(), cfg.assimilation.oc_window.to_string()),
        ("correction_average".into(), config_name(&cfg.assimilation.correction)),
        ("reference_covariance".into(), "large-ensemble B_E,t with exact R".into()),
    ]
}

/// Posterior error against `q` for each method.
pub fn run_qsweep(ds: &TwinDataset, cfg: &Config, methods: &[Method], qs: &[usize], exec: Exec) -> Result<ExperimentReport> {
    if let Some(&q) = qs.iter().find(|&&q| q > ds.obs_dim()) {
        return Err(Error::Rank {
            requested: q,
            max: ds.obs_dim(),
        });
    }
    if qs.contains(&0) {
        return Err(Error::Parameter("truncation rank must be at least 1".into()));
    }
    let moments = all_moments(ds, cfg, exec)?;
    let compressed: Vec<Method> = methods.iter().copied().filter(|&m| m != Method::Full).collect();
    let projs = build_projections(ds, cfg, &compressed, exec)?;
    let rows = exec.try_map(projs.len(), |i| method_sweep(ds, &moments, &projs[i], &projs[i].method.to_string(), qs))?;
    let mut report = ExperimentReport {
        provenance: provenance(cfg),
        ..ExperimentReport::default()
    };
    for (p, r) in projs.iter().zip(rows) {
        report.sweep.extend(r);
        report.spectra.extend(spectrum_rows(p, &p.method.to_string()));
    }
    if methods.contains(&Method::Full) {
        report.sweep.push(full_posterior(ds, &moments)?);
    }
    Ok(report)
}

/// Innovation corrections at every time and member for one rotation.
fn corrections(ds: &TwinDataset, cfg: &Config, proj: Option<&MethodProjections>, q: usize) -> Result<Vec<(f64, f64)>> {
    let m = ds.obs_dim();
    let mut out = Vec::new();
    for &t in &cfg.assimilation.times {
        let b = ds.b_exact(t)?;
        let g = &ds.h * b.matrix() * ds.h.transpose();
        let full = Cholesky::new(crate::covkit::symmetrize(&(&g + ds.r.matrix())))
            .ok_or_else(|| Error::SingularSystem("HBHᵀ + R".into()))?;
        let reduced = match proj {
            Some(mp) => {
                let pr = mp.at(t);
                if q > pr.max_rank() {
                    return Err(Error::Rank {
                        requested: q,
                        max: pr.max_rank(),
                    });
                }
                let p = pr.truncate(q)?.operator();
                let rt = reduced_r(pr, &ds.r, &p);
                let s = &p * &g * p.transpose() + &rt;
                let chol = Cholesky::new(crate::covkit::symmetrize(&s))
                    .ok_or_else(|| Error::SingularSystem(format!("reduced innovation covariance at q = {q}")))?;
                Some((p, chol))
            }
            None => None,
        };
        let y = ds.observations(t)?;
        for k in 0..cfg.ensemble.n_small.min(y.ncols()) {
            let xb = crate::diagnose::EnsembleSource::background(ds, t, k)?;
            let d = y.column(k) - &ds.h * xb;
            // ℋ(x_a) − ℋ(x_b) = H K d with K = B Hᵀ S⁻¹
            let c_full = (&g * full.solve(&d)).norm();
            let c = match &reduced {
                Some((p, chol)) => (&g * p.transpose() * chol.solve(&(p * &d))).norm(),
                None => c_full,
            };
            out.push((c, c_full));
        }
    }
    if out.is_empty() || m == 0 {
        return Err(Error::InsufficientData("no corrections computed".into()));
    }
    Ok(out)
}

fn correction_percent(pairs: &[(f64, f64)], how: CorrectionAverage) -> f64 {
    match how {
        CorrectionAverage::RatioOfMeans => {
            100.0 * pairs.iter().map(|p| p.0).sum::<f64>() / pairs.iter().map(|p| p.1).sum::<f64>()
        }
        CorrectionAverage::MeanOfRatios => {
            100.0 * pairs.iter().map(|p| p.0 / p.1).sum::<f64>() / pairs.len() as f64
        }
    }
}

/// `‖ℋ(x_b) − ℋ(x_a,compressed)‖ / ‖ℋ(x_b) − ℋ(x_a,full)‖` in percent,
/// per method, at rank `q`.
pub fn run_correction_table(ds: &TwinDataset, cfg: &Config, methods: &[Method], q: usize, exec: Exec) -> Result<ExperimentReport> {
    if q == 0 {
        return Err(Error::Parameter("truncation rank must be at least 1".into()));
    }
    if q > ds.obs_dim() {
        return Err(Error::Rank {
            requested: q,
            max: ds.obs_dim(),
        });
    }
    let compressed: Vec<Method> = methods.iter().copied().filter(|&m| m != Method::Full).collect();
    let projs = build_projections(ds, cfg, &compressed, exec)?;
    let mut report = ExperimentReport {
        provenance: provenance(cfg),
        ..ExperimentReport::default()
    };
    let vals = exec.try_map(projs.len(), |i| corrections(ds, cfg, Some(&projs[i]), q))?;
    for (p, v) in projs.iter().zip(vals) {
        let spec = spectrum_rows(p, &p.method.to_string());
        let q_opt = spec.first().and_then(|s| s.q_optimal);
        report
            .corrections
            .push((p.method.to_string(), q, q_opt, correction_percent(&v, cfg.assimilation.correction)));
        report.spectra.extend(spec);
    }
    if methods.contains(&Method::Full) {
        let v = corrections(ds, cfg, None, q)?;
        report
            .corrections
            .push((Method::Full.to_string(), ds.obs_dim(), None, correction_percent(&v, cfg.assimilation.correction)));
    }
    Ok(report)
}

/// Assumed observation-error covariance for a misspecification case.
pub fn assumed_r(cfg: &Config, case: MisspecCase) -> Result<CovarianceMatrix> {
    let spec = match case {
        MisspecCase::HomogeneousVariance => ObsNoiseSpec {
            sigma: cfg.misspec.homogeneous_variance.sqrt(),
            center_factor: 1.0,
            ..cfg.observation
        },
        MisspecCase::WrongLengthscale => ObsNoiseSpec {
            length_scale: cfg.misspec.wrong_length,
            ..cfg.observation
        },
    };
    spec.covariance(&cfg.model)
}

/// OC and the window-estimated IC built with an assumed `R_A`, analyzed
/// with the honest reduced covariance, next to `IC-optimal` under the
/// exact `R`. `R_A` whitens both methods and is subtracted in the
/// Desroziers estimate, so IC sees the misspecification twice.
pub fn run_misspecified_r(
    ds: &TwinDataset,
    cfg: &Config,
    r_a: &CovarianceMatrix,
    qs: &[usize],
    exec: Exec,
) -> Result<ExperimentReport> {
    if let Some(&q) = qs.iter().find(|&&q| q == 0 || q > ds.obs_dim()) {
        return Err(Error::Rank {
            requested: q,
            max: ds.obs_dim(),
        });
    }
    let moments = all_moments(ds, cfg, exec)?;
    let ra = Arc::new(r_a.clone());
    let exact = Arc::new(ds.r.clone());
    let ic = Method::for_window(cfg.misspec.ic_window)
        .ok_or_else(|| Error::Parameter("misspec.ic_window must name a preset window".into()))?;
    let jobs: [(Method, &Arc<CovarianceMatrix>, &str); 3] = [
        (Method::Oc, &ra, "OC"),
        (ic, &ra, "IC"),
        (Method::IcOptimal, &exact, "IC-reference"),
    ];
    let projs = exec.try_map(jobs.len(), |i| build_method_projection(ds, cfg, jobs[i].0, jobs[i].1, Exec::Sequential))?;
    let rows = exec.try_map(jobs.len(), |i| method_sweep(ds, &moments, &projs[i], jobs[i].2, qs))?;
    let mut report = ExperimentReport {
        provenance: provenance(cfg),
        ..ExperimentReport::default()
    };
    for r in rows {
        report.sweep.extend(r);
    }
    Ok(report)
}

/// The full-observation problem of one member at time `t`, with `B_E,t`
/// and the true `R`.
pub fn explicit_problem(
    ds: &TwinDataset,
    t: f64,
    member: usize,
) -> Result<crate::assim::AssimilationProblem> {
    let xb = crate::diagnose::EnsembleSource::background(ds, t, member)?;
    let y = crate::diagnose::EnsembleSource::observation(ds, t, member)?;
    crate::assim::AssimilationProblem::new(
        xb,
        y,
        Arc::new(ds.b_exact(t)?.clone()),
        Arc::new(ds.r.clone()),
        ObservationOperator::Linear(ds.h.clone()),
    )
}
