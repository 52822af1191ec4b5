//! The three run modes and the artifacts they exchange through the output
//! directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use plinfer_core::constraints::{linear_moment_spec, TiltingOracle};
use plinfer_core::io::{decode, encode};
use plinfer_core::kde::{KdePrior, NormalizationMap};
use plinfer_core::sampler::{steps_for, IsdeConfig};
use plinfer_core::solver::{fmt_float, solve_with, ConstraintSpec, PosteriorResult, SolverConfig};
use plinfer_elasticity::constraint::{homogenization_spec, synthetic_targets, HomogenizationEvaluator};
use plinfer_elasticity::fem::from_upper_triangle;
use plinfer_elasticity::{generate_training, moment_report, HomogenizationTargets, Mesh, MomentReport};

use crate::config::{Mode, Problem, RunConfig, TargetSource};
use crate::error::CliError;
use crate::manifest::Manifest;

pub const TRAINING: &str = "training.bin";
pub const TRAINING_EFFECTIVE: &str = "training_effective.bin";
pub const ETA: &str = "eta.bin";
pub const NORM_MEAN: &str = "normalization_mean.bin";
pub const NORM_BASIS: &str = "normalization_basis.bin";
pub const NORM_EIGVALS: &str = "normalization_eigvals.bin";
pub const PRIOR_SUMMARY: &str = "prior_summary.json";
pub const TRACE: &str = "trace.csv";
pub const LEARNED_SET: &str = "learned_set.bin";
pub const POSTERIOR_VALUES: &str = "posterior_values.bin";
pub const LAMBDA_SOL: &str = "lambda_sol.csv";
pub const POSTERIOR_SUMMARY: &str = "posterior_summary.json";
pub const REPORT_ERR: &str = "report_err.csv";
pub const REPORT: &str = "report.json";
pub const DELTA2_PDF: &str = "delta2_pdf.csv";

/// Training points (one per column) and, for the homogenization problem,
/// their effective matrices.
#[derive(Debug, Clone)]
pub struct Training {
    pub raw: DMatrix<f64>,
    pub effective: Vec<Matrix6<f64>>,
}

impl Training {
    pub fn effective_mean(&self) -> Matrix6<f64> {
        self.effective.iter().sum::<Matrix6<f64>>() / self.effective.len() as f64
    }
}

pub fn mesh(cfg: &RunConfig) -> Result<Mesh, CliError> {
    Ok(Mesh::new(cfg.mesh.cells, cfg.mesh.lengths)?)
}

/// Draws the training set described by `cfg`.
pub fn build_training(cfg: &RunConfig) -> Result<Training, CliError> {
    match cfg.problem {
        Problem::LinearMoment => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.training_seed());
            let raw = DMatrix::from_fn(cfg.linear.dim, cfg.training.n_d, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            });
            Ok(Training {
                raw,
                effective: Vec::new(),
            })
        }
        Problem::Homogenization => {
            let set = generate_training(&mesh(cfg)?, &cfg.prior.hyper(), cfg.training.n_d, cfg.training_seed())?;
            Ok(Training {
                raw: set.raw,
                effective: set.effective,
            })
        }
    }
}

/// Normalization and prior fitted on the training set.
pub fn fit_prior(cfg: &RunConfig, training: &Training) -> Result<(NormalizationMap<f64>, KdePrior<f64>), CliError> {
    let (norm, eta) = NormalizationMap::fit(&training.raw, cfg.training.nu)?;
    let prior = KdePrior::new(eta)?;
    Ok((norm, prior))
}

pub fn sampler_config(cfg: &RunConfig, prior: &KdePrior<f64>) -> IsdeConfig<f64> {
    let mut c = IsdeConfig::for_prior(prior, cfg.sampler.n_chains, cfg.sampler_seed());
    c.f0 = cfg.sampler.f0;
    if let Some(dt) = cfg.sampler.dt {
        c.dt = dt;
    }
    c.n_steps = cfg.sampler.n_steps.unwrap_or_else(|| steps_for(c.f0, c.dt));
    c
}

pub fn solver_config(cfg: &RunConfig) -> SolverConfig<f64> {
    SolverConfig {
        i_max: cfg.solver.i_max,
        alpha_relax: cfg.solver.alpha_relax,
        alpha_floor: cfg.solver.alpha_floor,
    }
}

fn effective_to_matrix(effective: &[Matrix6<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(36, effective.len(), |k, j| effective[j][(k / 6, k % 6)])
}

fn matrix_to_effective(m: &DMatrix<f64>) -> Vec<Matrix6<f64>> {
    (0..m.ncols())
        .map(|j| Matrix6::from_fn(|r, c| m[(6 * r + c, j)]))
        .collect()
}

fn read_bin(dir: &Path, name: &str) -> Result<DMatrix<f64>, CliError> {
    let bytes = fs::read(dir.join(name)).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
    Ok(decode(&bytes)?)
}

fn report_json(r: &MomentReport) -> serde_json::Value {
    json!({
        "frobenius": r.frobenius,
        "delta_eff": r.delta_eff,
        "delta_ml": r.delta_ml,
        "mean": (0..6).map(|i| (0..6).map(|j| r.mean[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
    })
}

fn pretty(v: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s.into_bytes()
}

/// Draws and stores the training set, normalization and prior summary,
/// starting a fresh manifest.
pub fn generate_training_stage(cfg: &RunConfig, out: &Path) -> Result<(Training, Manifest), CliError> {
    fs::create_dir_all(out)?;
    let training = build_training(cfg)?;
    let (norm, prior) = fit_prior(cfg, &training)?;
    let mut manifest = Manifest::new(cfg.hash(), cfg.seed);
    manifest.write(out, TRAINING, &encode(&training.raw))?;
    manifest.write(out, ETA, &encode(prior.anchors()))?;
    manifest.write(
        out,
        NORM_MEAN,
        &encode(&DMatrix::from_column_slice(
            norm.physical_dim(),
            1,
            norm.mean().as_slice(),
        )),
    )?;
    manifest.write(out, NORM_BASIS, &encode(norm.basis()))?;
    manifest.write(
        out,
        NORM_EIGVALS,
        &encode(&DMatrix::from_column_slice(
            norm.reduced_dim(),
            1,
            norm.eigvals().as_slice(),
        )),
    )?;
    let mut summary = json!({
        "n_x": training.raw.nrows(),
        "n_d": training.raw.ncols(),
        "nu": prior.dim(),
        "s": prior.s(),
        "s_hat": prior.s_hat(),
        "eigvals": norm.eigvals().as_slice(),
    });
    if cfg.problem == Problem::Homogenization {
        manifest.write(
            out,
            TRAINING_EFFECTIVE,
            &encode(&effective_to_matrix(&training.effective)),
        )?;
        summary["training_effective"] = report_json(&moment_report(&training.effective)?);
    }
    manifest.write(out, PRIOR_SUMMARY, &pretty(&summary))?;
    manifest.save(out)?;
    Ok((training, manifest))
}

/// Problem-specific inputs and diagnostics of a learn run.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // one per run
pub enum LearnContext {
    Linear {
        oracle: TiltingOracle<f64>,
        target: DVector<f64>,
    },
    Homogenization {
        targets: HomogenizationTargets,
        training_report: MomentReport,
        target_report: Option<MomentReport>,
    },
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub prior: KdePrior<f64>,
    pub sampler: IsdeConfig<f64>,
    pub posterior: PosteriorResult<f64>,
    pub context: LearnContext,
    pub trace_csv: String,
    pub summary: serde_json::Value,
}

fn build_spec(
    cfg: &RunConfig,
    training: &Training,
    norm: &NormalizationMap<f64>,
    prior: &KdePrior<f64>,
) -> Result<(ConstraintSpec<f64>, LearnContext), CliError> {
    let (spec, ctx) = match cfg.problem {
        Problem::LinearMoment => {
            let target = DVector::from_vec(cfg.linear.target.clone());
            let spec = linear_moment_spec(prior, target.clone())?;
            let oracle = TiltingOracle::leading(prior, target.len())?;
            (spec, LearnContext::Linear { oracle, target })
        }
        Problem::Homogenization => {
            let mesh = mesh(cfg)?;
            let mean = training.effective_mean();
            let (targets, target_report) = match cfg.target.source {
                TargetSource::Synthetic => {
                    let truth = plinfer_elasticity::PriorHyper {
                        mean_bulk: cfg.target.truth_scale_bulk * cfg.prior.mean_bulk,
                        mean_shear: cfg.target.truth_scale_shear * cfg.prior.mean_shear,
                        ..cfg.prior.hyper()
                    };
                    let (t, r) = synthetic_targets(&mesh, &truth, cfg.target.n_truth, cfg.truth_seed(), &mean)?;
                    (t, Some(r))
                }
                TargetSource::Inline => {
                    let rows = cfg.target.c_exp.as_ref().expect("validated");
                    let c = Matrix6::from_fn(|i, j| rows[i][j]);
                    let d = cfg.target.delta_exp.expect("validated");
                    (HomogenizationTargets::new(c, d, &mean)?, None)
                }
            };
            let ev = HomogenizationEvaluator::new(mesh, norm, &targets, &mean)?;
            let spec = homogenization_spec(ev, &targets)?;
            let training_report = moment_report(&training.effective)?;
            (
                spec,
                LearnContext::Homogenization {
                    targets,
                    training_report,
                    target_report,
                },
            )
        }
    };
    let spec = match &cfg.solver.weights {
        Some(w) => spec.with_weights(w.clone())?,
        None => spec,
    };
    Ok((spec, ctx))
}

/// Posterior effective matrices (Pa) from the constraint values of the
/// homogenization problem.
pub fn posterior_effective(values: &DMatrix<f64>, mu_exp: f64) -> Vec<Matrix6<f64>> {
    (0..values.ncols())
        .map(|l| {
            let col: Vec<f64> = values.column(l).rows(1, 21).iter().copied().collect();
            from_upper_triangle(&col) * mu_exp
        })
        .collect()
}

fn learn_summary(posterior: &PosteriorResult<f64>, ctx: &LearnContext) -> Result<serde_json::Value, CliError> {
    let rec = &posterior.trace.records[posterior.i_sol - 1];
    let mut summary = json!({
        "i_sol": posterior.i_sol,
        "err_sol": rec.err,
        "lambda_sol": posterior.lambda_sol.as_slice(),
        "moments_sol": rec.moments.as_slice(),
        "errors": posterior.trace.errors(),
    });
    match ctx {
        LearnContext::Linear { oracle, target } => {
            let root = oracle.root(target)?;
            let mean = posterior.learned_set.mean();
            let k = target.len();
            let sub = mean.rows(0, k).into_owned();
            summary["target"] = json!(target.as_slice());
            summary["oracle_root"] = json!(root.as_slice());
            summary["lambda_rel_to_oracle"] = json!((&posterior.lambda_sol - &root).norm() / root.norm());
            summary["moment_rel_error"] = json!((&sub - target).norm() / target.norm());
            summary["oracle_mean_at_lambda_sol"] = json!(oracle.mean(&posterior.lambda_sol).as_slice());
        }
        LearnContext::Homogenization {
            targets,
            training_report,
            target_report,
        } => {
            let c = posterior_effective(&posterior.values, targets.mu_exp);
            let rep = moment_report(&c)?;
            let rho2 = posterior.values.row(0).mean();
            summary["posterior_rho2_mean"] = json!(rho2);
            summary["posterior_effective"] = report_json(&rep);
            summary["training_effective"] = report_json(training_report);
            summary["target_frobenius"] = json!(targets.mu_exp);
            summary["target_delta"] = json!(targets.delta_exp);
            summary["mu_exp"] = json!(targets.mu_exp);
            if let Some(t) = target_report {
                summary["target_effective"] = report_json(t);
            }
        }
    }
    Ok(summary)
}

/// Loads the training set stored in `out` if it belongs to this config and
/// seed, otherwise regenerates it.
fn training_for_learn(cfg: &RunConfig, out: &Path) -> Result<(Training, Manifest), CliError> {
    if let Some(m) = Manifest::load(out)? {
        if m.matches(&cfg.hash(), cfg.seed)
            && m.artifacts.contains_key(TRAINING)
            && m.verify(out, &cfg.hash(), cfg.seed).is_ok()
        {
            let raw = read_bin(out, TRAINING)?;
            let effective = if cfg.problem == Problem::Homogenization {
                matrix_to_effective(&read_bin(out, TRAINING_EFFECTIVE)?)
            } else {
                Vec::new()
            };
            return Ok((Training { raw, effective }, m));
        }
    }
    generate_training_stage(cfg, out)
}

/// Runs the multiplier iteration and stores the posterior artifacts.
pub fn learn_stage(cfg: &RunConfig, out: &Path, verbose: bool) -> Result<LearnOutcome, CliError> {
    fs::create_dir_all(out)?;
    let (training, mut manifest) = training_for_learn(cfg, out)?;
    let (norm, prior) = fit_prior(cfg, &training)?;
    let (mut spec, context) = build_spec(cfg, &training, &norm, &prior)?;
    let sampler = sampler_config(cfg, &prior);
    let posterior = solve_with(&mut spec, &prior, &sampler, &solver_config(cfg), |r| {
        if verbose {
            eprintln!(
                "iteration {:>3}: err = {:.6e}, alpha = {:.3}",
                r.iteration, r.err, r.alpha
            );
        }
    })?;

    let trace_csv = posterior.trace.to_csv();
    manifest.write(out, TRACE, trace_csv.as_bytes())?;
    manifest.write(out, LEARNED_SET, &encode(&posterior.learned_set.points))?;
    manifest.write(out, POSTERIOR_VALUES, &encode(&posterior.values))?;
    let mut lam = String::from("component,lambda\n");
    for (k, v) in posterior.lambda_sol.iter().enumerate() {
        let _ = writeln!(lam, "{k},{}", fmt_float(*v));
    }
    manifest.write(out, LAMBDA_SOL, lam.as_bytes())?;
    let summary = learn_summary(&posterior, &context)?;
    manifest.write(out, POSTERIOR_SUMMARY, &pretty(&summary))?;
    manifest.save(out)?;
    Ok(LearnOutcome {
        prior,
        sampler,
        posterior,
        context,
        trace_csv,
        summary,
    })
}

/// Iteration and error columns of a trace CSV.
pub fn parse_trace_errors(csv: &str) -> Result<Vec<(usize, f64)>, CliError> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Io("empty trace".into()))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Io(format!("trace has no `{name}` column")))
    };
    let (ci, ce) = (col("iteration")?, col("err")?);
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || CliError::Io(format!("malformed trace row `{l}`"));
            let i = f.get(ci).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let e = f.get(ce).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            Ok((i, e))
        })
        .collect()
}

/// Recomputes the error table and posterior statistics from stored
/// artifacts, checking them against the learn summary.
pub fn report_stage(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    let mut manifest = Manifest::load(out)?
        .ok_or_else(|| CliError::Mismatch(format!("no manifest in {}; run learn first", out.display())))?;
    manifest.verify(out, &cfg.hash(), cfg.seed)?;
    for name in [TRACE, POSTERIOR_SUMMARY, POSTERIOR_VALUES] {
        if !manifest.artifacts.contains_key(name) {
            return Err(CliError::Mismatch(format!("{name} missing; run learn first")));
        }
    }
    let trace = fs::read_to_string(out.join(TRACE))?;
    let errors = parse_trace_errors(&trace)?;
    let mut best = errors[0];
    for &(i, e) in &errors {
        if e < best.1 {
            best = (i, e);
        }
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join(POSTERIOR_SUMMARY))?)
        .map_err(|e| CliError::Io(format!("{POSTERIOR_SUMMARY}: {e}")))?;
    let stored = summary["i_sol"].as_u64().unwrap_or(0) as usize;
    if stored != best.0 {
        return Err(CliError::Mismatch(format!(
            "trace minimum is at iteration {}, summary says {stored}",
            best.0
        )));
    }
    let mut table = String::from("iteration,err,is_sol\n");
    for &(i, e) in &errors {
        let _ = writeln!(table, "{i},{},{}", fmt_float(e), u8::from(i == best.0));
    }
    manifest.write(out, REPORT_ERR, table.as_bytes())?;

    let values = read_bin(out, POSTERIOR_VALUES)?;
    let moments: Vec<f64> = (0..values.nrows()).map(|k| values.row(k).mean()).collect();
    let mut report = json!({
        "i_sol": best.0,
        "err_sol": best.1,
        "posterior_moments": moments,
    });
    if cfg.problem == Problem::Homogenization {
        let mu_exp = summary["mu_exp"]
            .as_f64()
            .ok_or_else(|| CliError::Io("summary lacks mu_exp".into()))?;
        let c = posterior_effective(&values, mu_exp);
        let rep = moment_report(&c)?;
        let mut pdf = String::from("delta2,density\n");
        for (x, p) in rep.delta2_pdf(200) {
            let _ = writeln!(pdf, "{},{}", fmt_float(x), fmt_float(p));
        }
        manifest.write(out, DELTA2_PDF, pdf.as_bytes())?;
        report["posterior_effective"] = report_json(&rep);
        report["posterior_rho2_mean"] = json!(moments[0]);
        report["training_effective"] = summary["training_effective"].clone();
        report["target_frobenius"] = summary["target_frobenius"].clone();
    }
    manifest.write(out, REPORT, &pretty(&report))?;
    manifest.save(out)?;
    Ok(report)
}

pub fn run(cfg: &RunConfig, mode: Mode, out: &Path, verbose: bool) -> Result<(), CliError> {
    match mode {
        Mode::GenerateTraining => generate_training_stage(cfg, out).map(|_| ()),
        Mode::Learn => learn_stage(cfg, out, verbose).map(|_| ()),
        Mode::Report => report_stage(cfg, out).map(|_| ()),
    }
}
