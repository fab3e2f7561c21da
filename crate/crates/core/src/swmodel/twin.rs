use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{linear_operator, observe_exact, simulate, ShallowWaterState, SwConfig, Trajectory};
use crate::covkit::{
    build_soar_covariance, empirical_covariance, load_bin, save_bin, CovarianceMatrix, GaussianSampler, GridGeometry,
    SoarKernelSpec,
};
use crate::diagnose::EnsembleSource;
use crate::error::{Error, Result};
use crate::par::Exec;

const PURPOSE_BACKGROUND: u64 = 1;
const PURPOSE_OBSERVATION: u64 = 2;

/// Independent generator for `(seed, purpose, a, b)`.
pub fn substream(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip([seed, purpose, a, b]) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Ensemble sizes, times and initial background-error model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinSpec {
    pub n_large: usize,
    pub n_small: usize,
    /// Times at which truth, small-ensemble states and observations are kept.
    pub save_times: Vec<f64>,
    /// Times at which the large-ensemble error covariance is formed.
    pub cov_times: Vec<f64>,
    /// Initial background-error standard deviation of `u` and `v`.
    pub sigma_b: f64,
    /// SOAR correlation length of the initial background error (cells).
    pub length_b: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TwinDataset {
    pub cfg: SwConfig,
    pub spec: TwinSpec,
    pub truth: Trajectory,
    /// The first `n_small` background members over `save_times`.
    pub members: Vec<Trajectory>,
    /// Observation ensembles, one column per member, keyed by step index.
    pub obs: BTreeMap<u64, DMatrix<f64>>,
    /// Background-error covariance of the large ensemble around the truth.
    pub b_e: BTreeMap<u64, CovarianceMatrix>,
    pub r: CovarianceMatrix,
    pub h: DMatrix<f64>,
}

fn step_set(cfg: &SwConfig, times: &[f64]) -> Result<BTreeSet<u64>> {
    times.iter().map(|&t| cfg.step_index(t)).collect()
}

fn perturbed_initial(cfg: &SwConfig, sampler: Option<&GaussianSampler>, seed: u64, member: usize) -> ShallowWaterState {
    let mut s = ShallowWaterState::initial(cfg);
    if let Some(sm) = sampler {
        let mut rng = substream(seed, PURPOSE_BACKGROUND, member as u64, 0);
        let du = sm.draw_noise(&mut rng);
        let dv = sm.draw_noise(&mut rng);
        for (x, d) in s.u.iter_mut().zip(du.iter()) {
            *x += d;
        }
        for (x, d) in s.v.iter_mut().zip(dv.iter()) {
            *x += d;
        }
    }
    s
}

/// Simulates the truth and a background ensemble from perturbed initial
/// velocities, forms the large-ensemble covariance at `cov_times` and draws
/// a fresh observation ensemble at every save time.
pub fn make_twin_dataset(cfg: &SwConfig, spec: &TwinSpec, r: &CovarianceMatrix, exec: Exec) -> Result<TwinDataset> {
    cfg.validate()?;
    if spec.n_small > spec.n_large || spec.n_large < 2 || spec.n_small == 0 {
        return Err(Error::Parameter(format!(
            "need 1 ≤ n_small ≤ n_large and n_large ≥ 2, got {} and {}",
            spec.n_small, spec.n_large
        )));
    }
    if !(spec.sigma_b >= 0.0) {
        return Err(Error::Parameter(format!("sigma_b must be nonnegative, got {}", spec.sigma_b)));
    }
    let h = linear_operator(cfg)?;
    if r.dim() != h.nrows() {
        return Err(Error::Shape(format!("R is {0}x{0}, observations have dimension {1}", r.dim(), h.nrows())));
    }
    let saves = step_set(cfg, &spec.save_times)?;
    let covs = step_set(cfg, &spec.cov_times)?;
    let all: Vec<f64> = saves.union(&covs).map(|&k| cfg.time_of(k)).collect();
    let t_end = all.last().copied().unwrap_or(0.0);
    let cov_end = covs.iter().next_back().map(|&k| cfg.time_of(k)).unwrap_or(0.0);
    let save_list: Vec<f64> = saves.iter().map(|&k| cfg.time_of(k)).collect();
    let cov_list: Vec<f64> = covs.iter().map(|&k| cfg.time_of(k)).collect();

    let truth = simulate(&ShallowWaterState::initial(cfg), cfg, t_end, &all)?;

    let sampler = if spec.sigma_b > 0.0 {
        let block = build_soar_covariance(
            &cfg.geometry(),
            &SoarKernelSpec::homogeneous(spec.length_b, spec.sigma_b, cfg.cells()),
        )?;
        Some(GaussianSampler::new(DVector::zeros(cfg.cells()), &block)?)
    } else {
        None
    };

    // Small members run over every saved time; the rest only as far as the
    // covariance times need.
    let runs = exec.try_map(spec.n_large, |g| -> Result<(Option<Trajectory>, Vec<DVector<f64>>)> {
        let init = perturbed_initial(cfg, sampler.as_ref(), spec.seed, g);
        let tr = if g < spec.n_small {
            simulate(&init, cfg, t_end, &all)?
        } else {
            simulate(&init, cfg, cov_end, &cov_list)?
        };
        let at_cov = covs.iter().map(|k| tr.states[k].velocity()).collect();
        let kept = (g < spec.n_small).then(|| Trajectory {
            dt: tr.dt,
            states: tr.states.into_iter().filter(|(k, _)| saves.contains(k)).collect(),
        });
        Ok((kept, at_cov))
    })?;

    let mut b_e = BTreeMap::new();
    for (c, &k) in covs.iter().enumerate() {
        let center = truth.states[&k].velocity();
        let samples = DMatrix::from_columns(&runs.iter().map(|(_, v)| v[c].clone()).collect::<Vec<_>>());
        b_e.insert(k, CovarianceMatrix::new(empirical_covariance(&samples, Some(&center))?)?);
    }
    let members: Vec<Trajectory> = runs.into_iter().filter_map(|(t, _)| t).collect();

    let noise = GaussianSampler::new(DVector::zeros(r.dim()), r)?;
    let save_steps: Vec<u64> = saves.iter().copied().collect();
    let obs_cols = exec.try_map(save_steps.len(), |i| -> Result<DMatrix<f64>> {
        let k = save_steps[i];
        let clean = observe_exact(&truth.states[&k], cfg)?;
        let cols: Vec<DVector<f64>> = (0..spec.n_small)
            .map(|g| {
                let mut rng = substream(spec.seed, PURPOSE_OBSERVATION, k, g as u64);
                &clean + noise.draw_noise(&mut rng)
            })
            .collect();
        Ok(DMatrix::from_columns(&cols))
    })?;
    let obs = save_steps.into_iter().zip(obs_cols).collect();

    let truth = Trajectory {
        dt: truth.dt,
        states: truth.states.into_iter().filter(|(k, _)| saves.contains(k)).collect(),
    };
    let mut spec = spec.clone();
    spec.save_times = save_list;
    spec.cov_times = cov_list;
    Ok(TwinDataset {
        cfg: *cfg,
        spec,
        truth,
        members,
        obs,
        b_e,
        r: r.clone(),
        h,
    })
}

impl TwinDataset {
    pub fn step(&self, t: f64) -> Result<u64> {
        self.cfg.step_index(t)
    }

    pub fn truth_at(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.truth.at(t).ok_or(Error::DataGap(t))?.velocity())
    }

    /// Observation ensemble at `t`, one column per member.
    pub fn observations(&self, t: f64) -> Result<&DMatrix<f64>> {
        self.obs.get(&self.step(t)?).ok_or(Error::DataGap(t))
    }

    pub fn b_exact(&self, t: f64) -> Result<&CovarianceMatrix> {
        self.b_e.get(&self.step(t)?).ok_or(Error::DataGap(t))
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("members"))?;
        fs::create_dir_all(dir.join("obs"))?;
        fs::create_dir_all(dir.join("cov"))?;
        save_trajectory(&dir.join("truth.bin"), &self.truth, &self.cfg)?;
        for (g, m) in self.members.iter().enumerate() {
            save_trajectory(&dir.join("members").join(format!("{g}.bin")), m, &self.cfg)?;
        }
        for (k, y) in &self.obs {
            save_bin(&dir.join("obs").join(format!("{k}.bin")), y)?;
        }
        for (k, b) in &self.b_e {
            save_bin(&dir.join("cov").join(format!("{k}.bin")), b.matrix())?;
        }
        save_bin(&dir.join("r.bin"), self.r.matrix())?;
        let manifest = DatasetManifest {
            config_hash: config_hash(&self.cfg)?,
            model: self.cfg,
            twin: self.spec.clone(),
        };
        fs::write(dir.join("dataset.toml"), to_toml(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("dataset.toml"))?;
        let man: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Format(format!("dataset.toml: {e}")))?;
        let cfg = man.model;
        if config_hash(&cfg)? != man.config_hash {
            return Err(Error::Format("dataset.toml: config hash does not match the model section".into()));
        }
        let truth = load_trajectory(&dir.join("truth.bin"), &cfg)?;
        let members = (0..man.twin.n_small)
            .map(|g| load_trajectory(&dir.join("members").join(format!("{g}.bin")), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut obs = BTreeMap::new();
        for k in step_set(&cfg, &man.twin.save_times)? {
            obs.insert(k, load_bin(&dir.join("obs").join(format!("{k}.bin")))?);
        }
        let mut b_e = BTreeMap::new();
        for k in step_set(&cfg, &man.twin.cov_times)? {
            b_e.insert(k, CovarianceMatrix::new(load_bin(&dir.join("cov").join(format!("{k}.bin")))?)?);
        }
        let r = CovarianceMatrix::new(load_bin(&dir.join("r.bin"))?)?;
        Ok(Self {
            h: linear_operator(&cfg)?,
            cfg,
            spec: man.twin,
            truth,
            members,
            obs,
            b_e,
            r,
        })
    }
}

impl EnsembleSource for TwinDataset {
    fn background(&self, time: f64, member: usize) -> Result<DVector<f64>> {
        self.members
            .get(member)
            .and_then(|m| m.at(time))
            .map(|s| s.velocity())
            .ok_or(Error::DataGap(time))
    }

    fn observation(&self, time: f64, member: usize) -> Result<DVector<f64>> {
        let y = self.observations(time)?;
        if member >= y.ncols() {
            return Err(Error::DataGap(time));
        }
        Ok(y.column(member).into_owned())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    config_hash: String,
    model: SwConfig,
    twin: TwinSpec,
}

pub(crate) fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

/// SHA-256 of the model configuration's TOML form, hex encoded.
pub fn config_hash(cfg: &SwConfig) -> Result<String> {
    let digest = Sha256::digest(to_toml(cfg)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes one row per saved state: `step, t, h…, u…, v…`.
pub fn save_trajectory(path: &Path, tr: &Trajectory, cfg: &SwConfig) -> Result<()> {
    let n = cfg.cells();
    let mut m = DMatrix::zeros(tr.len(), 2 + 3 * n);
    for (row, s) in tr.states.values().enumerate() {
        m[(row, 0)] = s.step as f64;
        m[(row, 1)] = s.t;
        for (f, field) in [&s.h, &s.u, &s.v].into_iter().enumerate() {
            for (c, &x) in field.iter().enumerate() {
                m[(row, 2 + f * n + c)] = x;
            }
        }
    }
    save_bin(path, &m)
}

pub fn load_trajectory(path: &Path, cfg: &SwConfig) -> Result<Trajectory> {
    let m = load_bin(path)?;
    let n = cfg.cells();
    if m.ncols() != 2 + 3 * n {
        return Err(Error::Format(format!(
            "trajectory has {} columns, a {}x{} grid needs {}",
            m.ncols(),
            cfg.nx,
            cfg.ny,
            2 + 3 * n
        )));
    }
    let mut states = BTreeMap::new();
    for row in 0..m.nrows() {
        let field = |f: usize| (0..n).map(|c| m[(row, 2 + f * n + c)]).collect::<Vec<f64>>();
        let step = m[(row, 0)] as u64;
        states.insert(
            step,
            ShallowWaterState {
                h: field(0),
                u: field(1),
                v: field(2),
                step,
                t: m[(row, 1)],
            },
        );
    }
    Ok(Trajectory { dt: cfg.dt, states })
}

/// Mean correlation between points of one field exactly `r` cells apart.
/// `offset` selects the field within the `(u, v)` state; points with zero
/// variance are skipped.
pub fn correlation_at_distance(b: &DMatrix<f64>, geom: &GridGeometry, offset: usize, r: f64) -> Option<f64> {
    let n = geom.len();
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..n {
        let vp = b[(offset + p, offset + p)];
        if vp <= 0.0 {
            continue;
        }
        for q in (p + 1)..n {
            let vq = b[(offset + q, offset + q)];
            if vq <= 0.0 || (geom.distance(p, q) - r).abs() > 1e-9 {
                continue;
            }
            sum += b[(offset + p, offset + q)] / (vp * vq).sqrt();
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}
