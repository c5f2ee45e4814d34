//! The four subcommands. Each builds its outputs in memory and returns them
//! staged; nothing touches the output directory until the caller commits.

use std::path::Path;

use nalgebra::DMatrix;

use fshbmap::baselines::GreedyConfig;
use fshbmap::io::{fmt_f64, read_vector_csv, write_csv, write_vector_csv};
use fshbmap::pipeline::{
    estimate_noise_variance, sweep_spsa_iterations_with, write_sweep_csv, GreedyMethod, Prepared,
    ReconResult, Session,
};
use fshbmap::{
    phantom, psnr, rmse, DictionaryKind, Image, Measurement, PhantomSpec, RadonSpec, ReconTask,
};

use crate::config::{ExperimentConfig, Method, Operator};
use crate::error::{CliError, Result};
use crate::output::Staged;

/// The ground truth and the config with its image size resolved.
pub struct Inputs {
    pub cfg: ExperimentConfig,
    pub ground_truth: Image,
}

pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    let (cfg, ground_truth) = match &cfg.image {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            let img =
                Image::from_pgm(&bytes).map_err(|e| CliError::malformed(path, e.to_string()))?;
            (cfg.resolve_dims(Some((img.width, img.height)))?, img)
        }
        None => {
            let cfg = cfg.resolve_dims(None)?;
            let (width, height) = cfg.dims();
            let spec = PhantomSpec {
                width,
                height,
                seed: cfg.phantom.seed,
                n_shapes: cfg.phantom.shapes,
                texture: cfg.phantom.texture,
            };
            (cfg, phantom(&spec))
        }
    };
    Ok(Inputs { cfg, ground_truth })
}

impl Inputs {
    pub fn task(&self, dictionary: DictionaryKind) -> ReconTask {
        let cfg = &self.cfg;
        let (w, h) = cfg.dims();
        let samples = cfg.samples_per_ray.unwrap_or(1);
        let radon = match cfg.detector_spacing {
            Some(spacing) => RadonSpec::equiangular(w, h, cfg.n_rays, samples, spacing),
            None => RadonSpec::covering(w, h, cfg.n_rays, samples),
        };
        ReconTask {
            ground_truth: self.ground_truth.clone(),
            radon,
            dictionary,
            params: cfg.params,
            spsa: cfg.spsa.clone(),
            seed: cfg.seed,
        }
    }

    pub fn prepare(&self, dictionary: DictionaryKind) -> Result<Prepared> {
        let task = self.task(dictionary);
        Ok(match self.cfg.operator {
            Operator::Radon => Prepared::new(&task)?,
            Operator::Identity => {
                let n = self.ground_truth.len();
                Prepared::with_sensing(&task, DMatrix::identity(n, n))?
            }
        })
    }

    /// The measurement file named in the config, or one simulated from `seed`.
    pub fn measurement(&self, prepared: &Prepared, seed: u64) -> Result<Measurement> {
        let Some(path) = &self.cfg.measurement else {
            return Ok(prepared.simulate(seed)?);
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let y = read_vector_csv(&text).map_err(|msg| CliError::malformed(path, msg))?;
        let m = prepared.model.m();
        if y.len() != m {
            return Err(CliError::Geometry(format!(
                "{} holds {} values but the geometry produces {m}",
                path.display(),
                y.len()
            )));
        }
        Ok(Measurement::new(y.into(), self.cfg.params.sigma_eps_sq))
    }
}

/// Replaces the configured noise variance with the backprojection estimate
/// when `estimate_noise` is set.
fn with_noise_estimate(
    cfg: &ExperimentConfig,
    prepared: Prepared,
    y: &Measurement,
) -> Result<Prepared> {
    if !cfg.estimate_noise {
        return Ok(prepared);
    }
    let mut p = prepared;
    p.task.params.sigma_eps_sq = estimate_noise_variance(&p, y)?.max(f64::MIN_POSITIVE);
    Ok(p)
}

fn config_sidecar(cfg: &ExperimentConfig, extra: &[(&str, String)]) -> Vec<u8> {
    let mut text = String::from("# fully resolved configuration\n");
    for (k, v) in extra {
        text.push_str(&format!("# {k}: {v}\n"));
    }
    text.push_str(&cfg.resolved());
    text.into_bytes()
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows).expect("writing to memory");
    buf
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Staged> {
    let inputs = load_inputs(cfg)?;
    let prepared = inputs.prepare(inputs.cfg.dictionary)?;
    let y = prepared.simulate(inputs.cfg.seed)?;
    let mut buf = Vec::new();
    write_vector_csv(&mut buf, "y", y.y.as_slice()).expect("writing to memory");
    let mut staged = Staged::new();
    staged.add("y.csv", buf);
    staged.add(
        "simulate.config",
        config_sidecar(
            &inputs.cfg,
            &[
                ("m", prepared.model.m().to_string()),
                ("n", prepared.model.n().to_string()),
            ],
        ),
    );
    Ok(staged)
}

/// One method's result plus the bookkeeping the CSVs report.
struct MethodRun {
    method: Method,
    result: ReconResult,
    /// SPSA update evaluations, two per iteration.
    loss_evals: usize,
    logged_evals: usize,
    sparsity: Option<usize>,
}

fn run_method(
    session: &Session<'_>,
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    sparsity_levels: &[usize],
) -> Result<MethodRun> {
    let spsa = fshbmap::SpsaConfig {
        seed,
        ..cfg.spsa.clone()
    };
    let (result, sparsity) = match method {
        Method::Fshbmap => (session.fshbmap(seed, &spsa)?, None),
        Method::RandomX => (session.random_x(seed)?, None),
        Method::Omp | Method::Cosamp => {
            let greedy = if method == Method::Omp {
                GreedyMethod::Omp
            } else {
                GreedyMethod::Cosamp
            };
            let problem = session.greedy_problem()?;
            if let [s] = sparsity_levels {
                (
                    session.greedy(&problem, greedy, &GreedyConfig::new(*s))?,
                    Some(*s),
                )
            } else {
                let (s, r) = session.greedy_best(&problem, greedy, sparsity_levels)?;
                (r, Some(s))
            }
        }
    };
    let logged_evals = result.trace.as_ref().map_or(0, |t| t.logged_evals);
    Ok(MethodRun {
        method,
        loss_evals: result.loss_evals - logged_evals,
        logged_evals,
        sparsity,
        result,
    })
}

const METRIC_COLUMNS: [&str; 8] = [
    "method",
    "ssim",
    "psnr",
    "rmse",
    "time_s",
    "loss_evals",
    "logged_evals",
    "sparsity",
];

fn metric_row(run: &MethodRun, truth: &Image) -> Result<Vec<String>> {
    let r = &run.result;
    Ok(vec![
        run.method.name().to_string(),
        fmt_f64(r.ssim),
        fmt_f64(psnr(truth, &r.image, 1.0)?),
        fmt_f64(rmse(truth, &r.image)?),
        fmt_f64(r.wall_time_s),
        run.loss_evals.to_string(),
        run.logged_evals.to_string(),
        run.sparsity.map(|s| s.to_string()).unwrap_or_default(),
    ])
}

pub fn reconstruct(cfg: &ExperimentConfig) -> Result<Staged> {
    let inputs = load_inputs(cfg)?;
    let cfg = &inputs.cfg;
    let prepared = inputs.prepare(cfg.dictionary)?;
    let y = inputs.measurement(&prepared, cfg.seed)?;
    let prepared = with_noise_estimate(cfg, prepared, &y)?;
    let session = prepared.session(y)?;
    let n = prepared.model.n();
    let levels = vec![cfg
        .sparsity
        .unwrap_or(GreedyConfig::default_for(n).sparsity)];
    let run = run_method(&session, cfg, cfg.method, cfg.seed, &levels)?;

    let mut staged = Staged::new();
    staged.add("recon.pgm", run.result.image.to_pgm());
    staged.add(
        "metrics.csv",
        csv_bytes(&METRIC_COLUMNS, &[metric_row(&run, &inputs.ground_truth)?]),
    );
    if let Some(trace) = &run.result.trace {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).expect("writing to memory");
        staged.add("trace.csv", buf);
    }
    staged.add(
        "reconstruct.config",
        config_sidecar(
            cfg,
            &[(
                "noise_variance_used",
                fmt_f64(prepared.task.params.sigma_eps_sq),
            )],
        ),
    );
    Ok(staged)
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<Staged> {
    if cfg.sweep_iters.is_empty() {
        return Err(CliError::Config("sweep_iters is empty".into()));
    }
    if cfg.sweep_dictionaries.is_empty() {
        return Err(CliError::Config("sweep_dictionaries is empty".into()));
    }
    let inputs = load_inputs(cfg)?;
    let mut rows = Vec::new();
    for &dictionary in &inputs.cfg.sweep_dictionaries {
        let prepared = inputs.prepare(dictionary)?;
        rows.extend(sweep_spsa_iterations_with(
            &prepared,
            &inputs.cfg.sweep_iters,
            inputs.cfg.trials,
        )?);
    }
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).expect("writing to memory");
    let mut staged = Staged::new();
    staged.add("sweep.csv", buf);
    staged.add("sweep.config", config_sidecar(&inputs.cfg, &[]));
    Ok(staged)
}

pub const COMPARE_COLUMNS: [&str; 10] = [
    "seed",
    "rank",
    "method",
    "ssim",
    "psnr",
    "rmse",
    "time_s",
    "loss_evals",
    "logged_evals",
    "sparsity",
];

/// All four methods on the same measurement for each of `compare_seeds`
/// seeds, ranked by SSIM within each seed. Greedy methods report their best
/// sparsity over the grid unless `sparsity` is fixed.
pub fn compare(cfg: &ExperimentConfig) -> Result<Staged> {
    let inputs = load_inputs(cfg)?;
    let cfg = &inputs.cfg;
    let base = inputs.prepare(cfg.dictionary)?;
    let levels = cfg.sparsity_levels(base.model.n());
    let mut staged = Staged::new();
    let mut rows = Vec::new();
    for i in 0..cfg.compare_seeds {
        let seed = cfg.seed.wrapping_add(i as u64);
        let y = inputs.measurement(&base, seed)?;
        let prepared = with_noise_estimate(cfg, base.clone(), &y)?;
        let session = prepared.session(y)?;
        let mut runs = Method::ALL
            .into_iter()
            .map(|m| run_method(&session, cfg, m, seed, &levels))
            .collect::<Result<Vec<_>>>()?;
        runs.sort_by(|a, b| b.result.ssim.total_cmp(&a.result.ssim));
        for (rank, run) in runs.iter().enumerate() {
            let mut row = vec![seed.to_string(), (rank + 1).to_string()];
            row.extend(metric_row(run, &inputs.ground_truth)?);
            rows.push(row);
            staged.add(
                format!("compare_{seed}_{}.pgm", run.method.name()),
                run.result.image.to_pgm(),
            );
        }
    }
    staged.add("compare.csv", csv_bytes(&COMPARE_COLUMNS, &rows));
    staged.add("compare.config", config_sidecar(cfg, &[]));
    Ok(staged)
}

/// Runs `command` and writes its outputs into the configured directory.
pub fn execute(command: &str, cfg: &ExperimentConfig) -> Result<Vec<std::path::PathBuf>> {
    let staged = match command {
        "simulate" => simulate(cfg)?,
        "reconstruct" => reconstruct(cfg)?,
        "sweep" => sweep(cfg)?,
        "compare" => compare(cfg)?,
        other => return Err(CliError::Config(format!("unknown command {other:?}"))),
    };
    staged.commit(Path::new(&cfg.output_dir))
}
