//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use super::{
    assumed_r, build_dataset, build_method_projection, estimate_window_hbht, run_correction_table,
    run_misspecified_r, run_qsweep, strategy_bank, Config, ExperimentReport, Manifest, Method, MisspecCase,
};
use crate::assim::{blue_analysis, variational_analysis, AssimilationProblem, MinimizerOptions, ObservationOperator};
use crate::compress::{optimal_truncation, reduce_problem, write_projection, ProjectionKind, ProjectionOperator};
use crate::covkit::{load_matrix, save_matrix, CovarianceMatrix};
use crate::diagnose::{save_bank, spectrum_diagnostic, StrategyName};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::swmodel::TwinDataset;

#[derive(Debug, Parser)]
#[command(name = "obscomp", version = super::report::version(), arg_required_else_help = true)]
#[command(about = "Observation compression and covariance estimation for variational assimilation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file (`key = value` under `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct DatasetArg {
    /// Reuse a dataset written by `simulate` instead of simulating.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate truth, background ensembles and observations.
    Simulate,
    /// Estimate HBHᵀ over a sampling window from innovation statistics.
    Estimate {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long, default_value = "medium")]
        strategy: String,
    },
    /// Build and save a compression operator.
    Compress {
        #[command(flatten)]
        data: DatasetArg,
        /// `oc`, `ic-small`, `ic-medium`, `ic-large` or `ic-optimal`.
        #[arg(long, default_value = "ic-medium")]
        method: String,
        /// Truncation rank; defaults to the stopping rule.
        #[arg(long)]
        q: Option<usize>,
    },
    /// One analysis from matrix files.
    Assimilate {
        /// Background state, a column (`.csv` or binary matrix file).
        #[arg(long)]
        xb: PathBuf,
        /// Observations, a column.
        #[arg(long)]
        y: PathBuf,
        /// Background-error covariance.
        #[arg(long)]
        b: PathBuf,
        /// Observation-error covariance.
        #[arg(long)]
        r: PathBuf,
        /// Linear observation operator.
        #[arg(long)]
        h: PathBuf,
        /// Compress with this projection before assimilating.
        #[arg(long)]
        projection: Option<PathBuf>,
        /// Use the iterative minimizer instead of the closed form.
        #[arg(long)]
        variational: bool,
    },
    /// Posterior error against truncation rank for every method.
    Sweep {
        #[command(flatten)]
        data: DatasetArg,
    },
    /// Correction ratios at one truncation rank.
    Table2 {
        #[command(flatten)]
        data: DatasetArg,
        /// Truncation rank; defaults to `assimilation.table_q`.
        #[arg(long)]
        q: Option<usize>,
    },
    /// Compression under a misspecified observation-error covariance.
    Misspec {
        #[command(flatten)]
        data: DatasetArg,
        /// `homogeneous-variance` or `wrong-lengthscale`.
        #[arg(long)]
        case: String,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Error::Parameter(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p).map_err(|e| match e {
            Error::Format(m) => Error::Parameter(m),
            other => other,
        })?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dataset(cfg: &Config, arg: &DatasetArg, exec: Exec) -> Result<TwinDataset> {
    match &arg.dataset {
        Some(dir) => TwinDataset::load(dir),
        None => build_dataset(cfg, exec),
    }
}

fn finish(out: &Path, mut manifest: Manifest, outputs: Vec<PathBuf>) -> Result<()> {
    manifest.outputs = outputs
        .iter()
        .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let path = manifest.write(out)?;
    for p in outputs.iter().chain(std::iter::once(&path)) {
        println!("{}", p.display());
    }
    Ok(())
}

fn with_flags(mut m: Manifest, report: &ExperimentReport, extra: &[(&str, String)]) -> Manifest {
    let mut flags: BTreeMap<String, String> = report.provenance.iter().cloned().collect();
    for (k, v) in extra {
        flags.insert((*k).to_string(), v.clone());
    }
    m.flags = flags;
    m
}

fn strategy_name(s: &str) -> Result<StrategyName> {
    s.parse()
}

fn execute(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let exec = if common.sequential { Exec::Sequential } else { Exec::Parallel };
    let out = &common.out;
    match &cli.command {
        Command::Assimilate {
            xb,
            y,
            b,
            r,
            h,
            projection,
            variational,
        } => assimilate(common, xb, y, b, r, h, projection.as_deref(), *variational),
        Command::Simulate => {
            let cfg = load_config(common)?;
            let ds = build_dataset(&cfg, exec)?;
            let dir = out.join("dataset");
            ds.save(&dir)?;
            finish(out, Manifest::new("simulate", &cfg)?, vec![dir])
        }
        Command::Estimate { data, strategy } => {
            let cfg = load_config(common)?;
            let ds = dataset(&cfg, data, exec)?;
            let s = cfg.strategy.get(strategy_name(strategy)?)?;
            let bank = strategy_bank(&ds, &cfg, &s, &ds.r, exec)?;
            let bank_dir = out.join("bank");
            save_bank(&bank_dir, &bank)?;
            let est = estimate_window_hbht(&ds, &cfg, &s, &ds.r, exec)?;
            std::fs::create_dir_all(out)?;
            let est_path = out.join("hbht.bin");
            save_matrix(&est_path, &est)?;
            let diag = spectrum_diagnostic(&est)?;
            let mean = crate::diagnose::residual_mean(&bank);
            let diag_path = out.join("estimate_diagnostics.csv");
            std::fs::write(
                &diag_path,
                format!(
                    "strategy,columns,negative_eigenvalues,min_eigenvalue,max_eigenvalue,max_abs_residual_mean\n{strategy},{},{},{},{},{}\n",
                    bank.len(),
                    diag.negatives,
                    super::fmt_f64(diag.min_eigenvalue),
                    super::fmt_f64(diag.max_eigenvalue),
                    super::fmt_f64(mean.amax())
                ),
            )?;
            let mut m = Manifest::new("estimate", &cfg)?;
            m.flags.insert("strategy".into(), strategy.clone());
            finish(out, m, vec![bank_dir, est_path, diag_path])
        }
        Command::Compress { data, method, q } => {
            let cfg = load_config(common)?;
            let ds = dataset(&cfg, data, exec)?;
            let method: Method = method.parse()?;
            let r = Arc::new(ds.r.clone());
            let mp = build_method_projection(&ds, &cfg, method, &r, exec)?;
            let full = &mp.per_time[0].1;
            let q = match q {
                Some(q) => *q,
                None => optimal_truncation(full.spectrum().as_slice())?,
            };
            let proj = full.truncate(q)?;
            std::fs::create_dir_all(out)?;
            let path = out.join("projection.bin");
            write_projection(std::io::BufWriter::new(std::fs::File::create(&path)?), &proj)?;
            let mut m = Manifest::new("compress", &cfg)?;
            m.flags.insert("method".into(), method.to_string());
            m.flags.insert("q".into(), q.to_string());
            if method == Method::IcOptimal {
                m.flags.insert("time".into(), super::fmt_f64(mp.per_time[0].0));
            }
            finish(out, m, vec![path])
        }
        Command::Sweep { data } => {
            let cfg = load_config(common)?;
            let ds = dataset(&cfg, data, exec)?;
            let mut methods = Method::COMPRESSED.to_vec();
            methods.push(Method::Full);
            let report = run_qsweep(&ds, &cfg, &methods, &cfg.assimilation.q_values, exec)?;
            let files = report.write_csv(out, "")?;
            let m = with_flags(Manifest::new("sweep", &cfg)?, &report, &[]);
            finish(out, m, files)
        }
        Command::Table2 { data, q } => {
            let cfg = load_config(common)?;
            let q = q.unwrap_or(cfg.assimilation.table_q);
            if q == 0 {
                return Err(Error::Parameter("truncation rank must be at least 1".into()));
            }
            let ds = dataset(&cfg, data, exec)?;
            let mut methods = Method::COMPRESSED.to_vec();
            methods.push(Method::Full);
            let report = run_correction_table(&ds, &cfg, &methods, q, exec)?;
            let files = report.write_csv(out, "")?;
            let m = with_flags(Manifest::new("table2", &cfg)?, &report, &[("q", q.to_string())]);
            finish(out, m, files)
        }
        Command::Misspec { data, case } => {
            let case: MisspecCase = case.parse()?;
            let cfg = load_config(common)?;
            let ds = dataset(&cfg, data, exec)?;
            let r_a = assumed_r(&cfg, case)?;
            let qs: Vec<usize> = cfg
                .assimilation
                .q_values
                .iter()
                .copied()
                .filter(|&q| q < ds.obs_dim())
                .collect();
            let report = run_misspecified_r(&ds, &cfg, &r_a, &qs, exec)?;
            let files = report.write_csv(out, &format!("misspec_{case}_"))?;
            let m = with_flags(Manifest::new("misspec", &cfg)?, &report, &[("case", case.to_string())]);
            finish(out, m, files)
        }
    }
}

fn vector_from(m: DMatrix<f64>, what: &str) -> Result<DVector<f64>> {
    if m.ncols() == 1 {
        Ok(m.column(0).into_owned())
    } else if m.nrows() == 1 {
        Ok(m.row(0).transpose())
    } else {
        Err(Error::Shape(format!("{what} must be a single row or column, got {}x{}", m.nrows(), m.ncols())))
    }
}

#[allow(clippy::too_many_arguments)]
fn assimilate(
    common: &Common,
    xb: &Path,
    y: &Path,
    b: &Path,
    r: &Path,
    h: &Path,
    projection: Option<&Path>,
    variational: bool,
) -> Result<()> {
    let cfg = load_config(common)?;
    let problem = AssimilationProblem::new(
        vector_from(load_matrix(xb)?, "x_b")?,
        vector_from(load_matrix(y)?, "y")?,
        Arc::new(CovarianceMatrix::new(load_matrix(b)?)?),
        Arc::new(CovarianceMatrix::new(load_matrix(r)?)?),
        ObservationOperator::Linear(load_matrix(h)?),
    )?;
    let reduced;
    let (target, kind): (&AssimilationProblem, String) = match projection {
        Some(p) => {
            let proj: ProjectionOperator =
                crate::compress::read_projection(std::io::BufReader::new(std::fs::File::open(p)?))?;
            reduced = reduce_problem(&problem, &proj)?.to_problem()?;
            let kind = match proj.kind() {
                ProjectionKind::Oc => "OC",
                ProjectionKind::Ic => "IC",
            };
            (&reduced, format!("{kind} q={}", proj.q()))
        }
        None => (&problem, "none".to_string()),
    };
    let an = if variational {
        variational_analysis(target, &MinimizerOptions::default())?
    } else {
        blue_analysis(target)?
    };
    let out = &common.out;
    std::fs::create_dir_all(out)?;
    let xa_path = out.join("xa.csv");
    save_matrix(&xa_path, &DMatrix::from_column_slice(an.xa.len(), 1, an.xa.as_slice()))?;
    let mut files = vec![xa_path];
    if let Some(a) = &an.a {
        let p = out.join("analysis_covariance.bin");
        save_matrix(&p, a.matrix())?;
        files.push(p);
    }
    let summary = out.join("analysis_summary.csv");
    std::fs::write(
        &summary,
        format!(
            "compression,trace_b,trace_a,omb_norm,oma_norm\n{kind},{},{},{},{}\n",
            super::fmt_f64(problem.b.trace()),
            an.a.as_ref().map(|a| super::fmt_f64(a.trace())).unwrap_or_default(),
            super::fmt_f64(an.omb.norm()),
            super::fmt_f64(an.oma.norm())
        ),
    )?;
    files.push(summary);
    let mut m = Manifest::new("assimilate", &cfg)?;
    m.flags.insert("compression".into(), kind);
    m.flags.insert("solver".into(), if variational { "lbfgs" } else { "blue" }.into());
    finish(out, m, files)
}
