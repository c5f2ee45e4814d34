//! End-to-end reconstruction and the experiment harnesses.
//!
//! A [`ReconTask`] fixes the ground truth, geometry, dictionary and model
//! settings. [`Prepared`] builds the forward model once; a [`Session`] binds
//! it to one measurement and caches everything the optimizer and Type-I
//! solver reuse.
//!
//! Random streams are derived from one 64-bit seed: stream 1 draws the
//! measurement noise, stream 2 the starting point `x0`. SPSA perturbations
//! come from `SpsaConfig::seed`.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::baselines::{cosamp_with, omp_with, GreedyConfig, GreedyProblem};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{fmt_f64, write_csv};
use crate::metrics::{ssim, SsimConfig};
use crate::model::{
    apply_h, objective_exact, FastObjective, HyperParams, Measurement, ModelMatrices,
};
use crate::operators::{
    build_dictionary, build_radon_matrix, compose_model, DictionaryKind, RadonSpec,
};
use crate::spsa::{run_spsa, SpsaConfig, SpsaTrace};
use crate::type1::{solve_type1_thresholded_with, solve_type1_with, NormalEquations, Type1Result};

const NOISE_STREAM: u64 = 1;
const START_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconTask {
    pub ground_truth: Image,
    pub radon: RadonSpec,
    pub dictionary: DictionaryKind,
    pub params: HyperParams,
    pub spsa: SpsaConfig,
    pub seed: u64,
}

impl ReconTask {
    pub fn validate(&self) -> Result<()> {
        self.radon.validate()?;
        self.params.validate()?;
        self.spsa.validate()?;
        let gt = &self.ground_truth;
        if gt.width != self.radon.image_width || gt.height != self.radon.image_height {
            return Err(Error::Shape(format!(
                "ground truth is {}x{} but the geometry expects {}x{}",
                gt.width, gt.height, self.radon.image_width, self.radon.image_height
            )));
        }
        Ok(())
    }

    /// Same task with every seed shifted by `offset`.
    pub fn with_trial(&self, offset: u64) -> Self {
        let mut t = self.clone();
        t.seed = self.seed.wrapping_add(offset);
        t.spsa.seed = self.spsa.seed.wrapping_add(offset);
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub beta: DVector<f64>,
    /// `Φβ` reshaped to the image grid.
    pub image: Image,
    pub ssim: f64,
    /// Fast objective at the scale variables the Type-I solve used.
    pub objective: f64,
    pub trace: Option<SpsaTrace>,
    pub wall_time_s: f64,
    pub loss_evals: usize,
    pub empty_support: bool,
}

/// `y = Ψ·image + ε`, `ε ~ N(0, σ_ε² I)` drawn from `seed`.
pub fn simulate_measurement(
    image: &Image,
    psi: &DMatrix<f64>,
    sigma_eps_sq: f64,
    seed: u64,
) -> Result<Measurement> {
    if psi.ncols() != image.len() {
        return Err(Error::Shape(format!(
            "psi has {} columns, image has {} pixels",
            psi.ncols(),
            image.len()
        )));
    }
    if !(sigma_eps_sq >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise variance must be nonnegative, got {sigma_eps_sq}"
        )));
    }
    let clean = psi * DVector::from_column_slice(&image.data);
    let y = if sigma_eps_sq == 0.0 {
        clean
    } else {
        let normal = Normal::new(0.0, sigma_eps_sq.sqrt())
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut rng = stream_rng(seed, NOISE_STREAM);
        clean.map(|v| v + normal.sample(&mut rng))
    };
    Ok(Measurement::new(y, sigma_eps_sq))
}

/// SPSA settings used by the reconstruction harnesses. Identical to
/// [`SpsaConfig::new`] except `alpha0 = 1`, which suits the normalized loss
/// that [`Session::fshbmap`] optimizes.
pub fn default_spsa(n_iters: usize, seed: u64) -> SpsaConfig {
    SpsaConfig {
        alpha0: 1.0,
        ..SpsaConfig::new(n_iters, seed)
    }
}

/// Starting point with entries i.i.d. uniform on `(0, 1)`.
pub fn random_start(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, START_STREAM);
    DVector::from_fn(n, |_, _| loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            break v;
        }
    })
}

/// A task with its forward model built.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub task: ReconTask,
    pub model: ModelMatrices,
    pub ssim_cfg: SsimConfig,
}

impl Prepared {
    pub fn new(task: &ReconTask) -> Result<Self> {
        task.validate()?;
        Self::with_sensing(task, build_radon_matrix(&task.radon)?)
    }

    /// Uses `psi` in place of the Radon matrix; `task.radon` then only fixes
    /// the image size.
    pub fn with_sensing(task: &ReconTask, psi: DMatrix<f64>) -> Result<Self> {
        task.validate()?;
        let phi = build_dictionary(
            task.dictionary,
            task.radon.image_width,
            task.radon.image_height,
        )?;
        let model = compose_model(psi, phi)?;
        Ok(Self {
            task: task.clone(),
            ssim_cfg: SsimConfig::for_size(task.ground_truth.width, task.ground_truth.height),
            model,
        })
    }

    /// Measurement of the ground truth with noise drawn from `seed`.
    pub fn simulate(&self, seed: u64) -> Result<Measurement> {
        simulate_measurement(
            &self.task.ground_truth,
            self.model.psi(),
            self.task.params.sigma_eps_sq,
            seed,
        )
    }

    pub fn session(&self, y: Measurement) -> Result<Session<'_>> {
        Session::new(self, y)
    }

    /// Pixels `Φβ` as an image.
    pub fn synthesize(&self, beta: &DVector<f64>) -> Image {
        let pixels = self.model.phi() * beta;
        Image {
            width: self.task.ground_truth.width,
            height: self.task.ground_truth.height,
            data: pixels.as_slice().to_vec(),
        }
    }

    pub fn score(&self, image: &Image) -> Result<f64> {
        ssim(&self.task.ground_truth, image, &self.ssim_cfg)
    }
}

/// One measurement bound to a prepared model.
pub struct Session<'a> {
    pub prepared: &'a Prepared,
    pub y: Measurement,
    normal: NormalEquations,
    objective: FastObjective,
}

impl<'a> Session<'a> {
    pub fn new(prepared: &'a Prepared, y: Measurement) -> Result<Self> {
        let normal = NormalEquations::new(&prepared.model, &y)?;
        let objective = FastObjective::new(&prepared.model, &y, &prepared.task.params)?;
        Ok(Self {
            prepared,
            y,
            normal,
            objective,
        })
    }

    pub fn objective(&self) -> &FastObjective {
        &self.objective
    }

    fn params(&self) -> &HyperParams {
        &self.prepared.task.params
    }

    fn type1(&self, x: &DVector<f64>) -> Result<Type1Result> {
        let z = apply_h(x, self.params().a)?;
        if self.params().tau > 0.0 {
            solve_type1_thresholded_with(&self.normal, &z, self.params())
        } else {
            solve_type1_with(&self.normal, &z, self.params())
        }
    }

    fn finish(
        &self,
        t1: Type1Result,
        objective: f64,
        trace: Option<SpsaTrace>,
        started: Instant,
    ) -> Result<ReconResult> {
        let image = self.prepared.synthesize(&t1.beta);
        let wall_time_s = started.elapsed().as_secs_f64();
        let ssim = self.prepared.score(&image)?;
        let loss_evals = trace.as_ref().map_or(0, |t| t.loss_evals);
        Ok(ReconResult {
            beta: t1.beta,
            image,
            ssim,
            objective,
            trace,
            wall_time_s,
            loss_evals,
            empty_support: t1.empty_support,
        })
    }

    /// Type-I solve from a uniformly random `x`, with no Type-II refinement.
    pub fn random_x(&self, seed: u64) -> Result<ReconResult> {
        let started = Instant::now();
        let x = random_start(self.prepared.model.n(), seed);
        let t1 = self.type1(&x)?;
        let objective = self.objective.eval(&x)?;
        self.finish(t1, objective, None, started)
    }

    /// SPSA on the fast objective from a random start, then the Type-I solve.
    ///
    /// The optimizer sees `f̃(x) / |f̃(x0)|`: the raw objective scales with
    /// the measurement energy and `1/σ_u²`, which would make any fixed gain
    /// schedule either stall or diverge. Trace losses are mapped back to the
    /// original scale.
    pub fn fshbmap(&self, seed: u64, spsa: &SpsaConfig) -> Result<ReconResult> {
        let started = Instant::now();
        let x0 = random_start(self.prepared.model.n(), seed);
        let scale = self.objective.eval(&x0)?.abs();
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Numerical(format!(
                "objective at the starting point is {scale}"
            )));
        }
        let loss = |x: &DVector<f64>| self.objective.eval(x).map_or(f64::NAN, |v| v / scale);
        let (x_best, mut trace) = run_spsa(loss, &x0, spsa)?;
        rescale_losses(&mut trace, scale);
        let t1 = self.type1(&x_best)?;
        let objective = self.objective.eval(&x_best)?;
        self.finish(t1, objective, Some(trace), started)
    }
}

impl Session<'_> {
    /// Shared Gram data for greedy runs on this measurement.
    pub fn greedy_problem(&self) -> Result<GreedyProblem<'_>> {
        GreedyProblem::new(self.prepared.model.x(), &self.y.y)
    }

    pub fn greedy(
        &self,
        problem: &GreedyProblem<'_>,
        method: GreedyMethod,
        cfg: &GreedyConfig,
    ) -> Result<ReconResult> {
        let started = Instant::now();
        let r = match method {
            GreedyMethod::Omp => omp_with(problem, cfg)?,
            GreedyMethod::Cosamp => cosamp_with(problem, cfg)?,
        };
        let image = self.prepared.synthesize(&r.beta);
        let wall_time_s = started.elapsed().as_secs_f64();
        let ssim = self.prepared.score(&image)?;
        Ok(ReconResult {
            beta: r.beta,
            image,
            ssim,
            objective: f64::NAN,
            trace: None,
            wall_time_s,
            loss_evals: 0,
            empty_support: false,
        })
    }

    /// Runs `method` at every sparsity level and keeps the highest SSIM
    /// (lowest level on ties). Levels whose least-squares subproblems are
    /// rank deficient are skipped.
    pub fn greedy_best(
        &self,
        problem: &GreedyProblem<'_>,
        method: GreedyMethod,
        levels: &[usize],
    ) -> Result<(usize, ReconResult)> {
        let mut best: Option<(usize, ReconResult)> = None;
        let mut last_err = None;
        for &s in levels {
            match self.greedy(problem, method, &GreedyConfig::new(s)) {
                Ok(r) => {
                    if best.as_ref().is_none_or(|(_, b)| r.ssim > b.ssim) {
                        best = Some((s, r));
                    }
                }
                Err(e @ Error::Numerical(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        best.ok_or_else(|| {
            last_err.unwrap_or_else(|| Error::InvalidInput("no sparsity levels given".into()))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreedyMethod {
    Omp,
    Cosamp,
}

impl GreedyMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Omp => "omp",
            Self::Cosamp => "cosamp",
        }
    }
}

/// Default sparsity grid: 2.5%, 5%, 10%, 15%, 20% and 30% of `n`, rounded
/// up and deduplicated.
pub fn default_sparsity_levels(n: usize) -> Vec<usize> {
    let mut levels: Vec<usize> = [25, 50, 100, 150, 200, 300]
        .iter()
        .map(|&permille| (n * permille).div_ceil(1000).clamp(1, n))
        .collect();
    levels.dedup();
    levels
}

fn rescale_losses(trace: &mut SpsaTrace, scale: f64) {
    for r in &mut trace.records {
        r.loss = r.loss.map(|v| v * scale);
    }
    trace.final_loss = trace.final_loss.map(|v| v * scale);
    trace.best_loss = trace.best_loss.map(|v| v * scale);
}

/// Full fsHBMAP reconstruction of `y` under `task`.
pub fn reconstruct_fshbmap(task: &ReconTask, y: &Measurement) -> Result<ReconResult> {
    let prepared = Prepared::new(task)?;
    let session = prepared.session(y.clone())?;
    session.fshbmap(task.seed, &task.spsa)
}

/// Random-`x` baseline: Type-I estimation alone.
pub fn reconstruct_random_x(task: &ReconTask, y: &Measurement) -> Result<ReconResult> {
    let prepared = Prepared::new(task)?;
    let session = prepared.session(y.clone())?;
    session.random_x(task.seed)
}

/// Which objective the Monte-Carlo harness records per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordedObjective {
    #[default]
    Fast,
    /// Exact `log det` objective; only sensible for small models.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub objective: f64,
    pub ssim: f64,
    pub finite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl SsimSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub ssim: SsimSummary,
    pub trials: Vec<TrialRecord>,
}

impl MonteCarloSummary {
    /// Pearson correlation between the recorded objective and SSIM.
    pub fn objective_ssim_correlation(&self) -> f64 {
        let xs: Vec<f64> = self.trials.iter().map(|t| t.objective).collect();
        let ys: Vec<f64> = self.trials.iter().map(|t| t.ssim).collect();
        pearson(&xs, &ys)
    }

    /// Scatter export: `trial,f_tilde,ssim`.
    pub fn write_scatter_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let rows: Vec<Vec<String>> = self
            .trials
            .iter()
            .map(|t| vec![t.trial.to_string(), fmt_f64(t.objective), fmt_f64(t.ssim)])
            .collect();
        write_csv(out, &["trial", "f_tilde", "ssim"], &rows)
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Random-`x` reconstructions of one fixed measurement (noise drawn from
/// `task.seed`) with starting seeds `task.seed + t`.
pub fn monte_carlo_random_x(task: &ReconTask, n_trials: usize) -> Result<MonteCarloSummary> {
    monte_carlo_random_x_with(&Prepared::new(task)?, n_trials, RecordedObjective::Fast)
}

pub fn monte_carlo_random_x_with(
    prepared: &Prepared,
    n_trials: usize,
    recorded: RecordedObjective,
) -> Result<MonteCarloSummary> {
    if n_trials == 0 {
        return Err(Error::InvalidInput("n_trials must be at least 1".into()));
    }
    let task = &prepared.task;
    let session = prepared.session(prepared.simulate(task.seed)?)?;
    let mut trials = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let seed = task.seed.wrapping_add(t as u64);
        let r = session.random_x(seed)?;
        let objective = match recorded {
            RecordedObjective::Fast => r.objective,
            RecordedObjective::Exact => {
                let x = random_start(prepared.model.n(), seed);
                objective_exact(&x, &session.y, &prepared.model, &task.params)?
            }
        };
        trials.push(TrialRecord {
            trial: t,
            objective,
            ssim: r.ssim,
            finite: r.beta.iter().all(|v| v.is_finite()),
        });
    }
    let ssims: Vec<f64> = trials.iter().map(|t| t.ssim).collect();
    Ok(MonteCarloSummary {
        ssim: SsimSummary::of(&ssims),
        trials,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub dictionary: DictionaryKind,
    pub n_iters: usize,
    pub mean_ssim: f64,
    pub std_ssim: f64,
    pub mean_time_s: f64,
    pub ssims: Vec<f64>,
}

/// Mean SSIM and time of fsHBMAP for each SPSA iteration count. Trials use
/// one fixed measurement and seeds `task.seed + t`, as in
/// [`monte_carlo_random_x`]. The stability constant follows each count
/// (`0.1 · n_iters`); the other gains come from `task.spsa`.
pub fn sweep_spsa_iterations(
    task: &ReconTask,
    iter_list: &[usize],
    trials_per_point: usize,
) -> Result<Vec<SweepRow>> {
    sweep_spsa_iterations_with(&Prepared::new(task)?, iter_list, trials_per_point)
}

pub fn sweep_spsa_iterations_with(
    prepared: &Prepared,
    iter_list: &[usize],
    trials_per_point: usize,
) -> Result<Vec<SweepRow>> {
    if iter_list.is_empty() {
        return Err(Error::InvalidInput("iteration list is empty".into()));
    }
    if trials_per_point == 0 {
        return Err(Error::InvalidInput(
            "trials_per_point must be at least 1".into(),
        ));
    }
    let task = &prepared.task;
    let session = prepared.session(prepared.simulate(task.seed)?)?;
    let mut rows = Vec::with_capacity(iter_list.len());
    for &n_iters in iter_list {
        let mut ssims = Vec::with_capacity(trials_per_point);
        let mut time = 0.0;
        for t in 0..trials_per_point {
            let trial = task.with_trial(t as u64);
            let spsa = SpsaConfig {
                n_iters,
                stability_a: 0.1 * n_iters as f64,
                ..trial.spsa.clone()
            };
            let r = session.fshbmap(trial.seed, &spsa)?;
            ssims.push(r.ssim);
            time += r.wall_time_s;
        }
        let s = SsimSummary::of(&ssims);
        rows.push(SweepRow {
            dictionary: task.dictionary,
            n_iters,
            mean_ssim: s.mean,
            std_ssim: s.std,
            mean_time_s: time / trials_per_point as f64,
            ssims,
        });
    }
    Ok(rows)
}

/// Sweep export: `dictionary,n_iters,mean_ssim,std_ssim,mean_time_s`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> std::io::Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dictionary.name().to_string(),
                r.n_iters.to_string(),
                fmt_f64(r.mean_ssim),
                fmt_f64(r.std_ssim),
                fmt_f64(r.mean_time_s),
            ]
        })
        .collect();
    write_csv(
        out,
        &[
            "dictionary",
            "n_iters",
            "mean_ssim",
            "std_ssim",
            "mean_time_s",
        ],
        &rows,
    )
}

/// Noise variance from the finest-scale coefficients of a normalized
/// backprojection, via the median absolute deviation.
///
/// Each coefficient `(Xᵀy)_i / ‖X e_i‖` carries noise of variance exactly
/// `σ_ε²`; the outer half-band of the coefficient grid (row or column past
/// the midpoint) is dominated by it for smooth images.
pub fn estimate_noise_variance(prepared: &Prepared, y: &Measurement) -> Result<f64> {
    let x = prepared.model.x();
    if y.y.len() != x.nrows() {
        return Err(Error::Shape("measurement does not match the model".into()));
    }
    let (w, h) = (
        prepared.task.radon.image_width,
        prepared.task.radon.image_height,
    );
    let backprojection = x.tr_mul(&y.y);
    let mut detail: Vec<f64> = (0..x.ncols())
        .filter(|&j| j / w >= h / 2 || j % w >= w / 2)
        .filter_map(|j| {
            let norm = x.column(j).norm();
            (norm > 0.0).then(|| (backprojection[j] / norm).abs())
        })
        .collect();
    if detail.is_empty() {
        return Err(Error::Numerical(
            "no detail coefficients to estimate noise from".into(),
        ));
    }
    detail.sort_by(f64::total_cmp);
    let mid = detail.len() / 2;
    let median = if detail.len().is_multiple_of(2) {
        0.5 * (detail[mid - 1] + detail[mid])
    } else {
        detail[mid]
    };
    let sigma = median / 0.674_489_750_196_081_7;
    Ok(sigma * sigma)
}
