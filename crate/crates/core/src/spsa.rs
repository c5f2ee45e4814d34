//! Simultaneous perturbation stochastic approximation (SPSA).
//!
//! Each iteration draws a Rademacher direction `Δ_k`, evaluates the loss at
//! `x_k ± c_k Δ_k`, and steps along the resulting two-point gradient
//! estimate. The cost per iteration is two loss evaluations regardless of
//! dimension.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Gain schedules and run length.
///
/// `α_k = alpha0 / (k + 1 + stability_A)^alpha_exp`,
/// `c_k = c0 / (k + 1)^gamma_exp`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpsaConfig {
    pub alpha0: f64,
    pub stability_a: f64,
    pub alpha_exp: f64,
    pub c0: f64,
    pub gamma_exp: f64,
    pub n_iters: usize,
    pub seed: u64,
    /// Log the loss at `x_k` every `log_every` iterations (and at the final
    /// iterate). `0` disables logging, leaving exactly two evaluations per
    /// iteration.
    pub log_every: usize,
}

impl SpsaConfig {
    /// Standard gains with `stability_A = 0.1 · n_iters`.
    pub fn new(n_iters: usize, seed: u64) -> Self {
        Self {
            alpha0: 0.1,
            stability_a: 0.1 * n_iters as f64,
            alpha_exp: 0.602,
            c0: 0.1,
            gamma_exp: 0.101,
            n_iters,
            seed,
            log_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !(self.c0 > 0.0) {
            return Err(Error::InvalidInput("alpha0 and c0 must be positive".into()));
        }
        if !(self.stability_a >= 0.0) {
            return Err(Error::InvalidInput(
                "stability_A must be nonnegative".into(),
            ));
        }
        if !(self.alpha_exp > 0.0 && self.alpha_exp <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha_exp must lie in (0, 1], got {}",
                self.alpha_exp
            )));
        }
        if !(self.gamma_exp > 0.0) {
            return Err(Error::InvalidInput("gamma_exp must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self::new(500, 0)
    }
}

/// `(α_k, c_k)` for zero-based iteration `k`.
pub fn gain_sequences(cfg: &SpsaConfig, k: usize) -> (f64, f64) {
    let k = k as f64;
    let alpha = cfg.alpha0 / (k + 1.0 + cfg.stability_a).powf(cfg.alpha_exp);
    let c = cfg.c0 / (k + 1.0).powf(cfg.gamma_exp);
    (alpha, c)
}

/// Two-point estimate `ĝ_i = (L(x + cΔ) − L(x − cΔ)) / (2 c Δ_i)`.
pub fn spsa_gradient_estimate<F>(
    mut loss: F,
    x: &DVector<f64>,
    c_k: f64,
    delta: &DVector<f64>,
) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    if delta.len() != x.len() {
        return Err(Error::Shape(format!(
            "delta has length {}, x has length {}",
            delta.len(),
            x.len()
        )));
    }
    if delta.iter().any(|d| d.abs() != 1.0) {
        return Err(Error::InvalidInput(
            "perturbation entries must be +1 or -1".into(),
        ));
    }
    if !(c_k > 0.0) {
        return Err(Error::InvalidInput(format!(
            "c_k must be positive, got {c_k}"
        )));
    }
    let plus = loss(&(x + delta * c_k));
    let minus = loss(&(x - delta * c_k));
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::Numerical(
            "loss is not finite at a perturbed point".into(),
        ));
    }
    let diff = (plus - minus) / (2.0 * c_k);
    Ok(delta.map(|d| diff / d))
}

/// Draws a symmetric ±1 vector.
pub fn rademacher<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub alpha: f64,
    pub c: f64,
    /// Loss at `x_k`, when this iteration was logged.
    pub loss: Option<f64>,
    /// The perturbed losses were non-finite and the step was skipped.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpsaTrace {
    pub records: Vec<IterationRecord>,
    /// Loss at the last iterate `x_{n_iters}`, when logging is enabled.
    pub final_loss: Option<f64>,
    /// Best logged iterate, which is what [`run_spsa`] returns.
    pub best_loss: Option<f64>,
    pub x_final: DVector<f64>,
    pub loss_evals: usize,
    pub logged_evals: usize,
}

impl SpsaTrace {
    pub fn skipped(&self) -> usize {
        self.records.iter().filter(|r| r.skipped).count()
    }

    /// CSV with header `k,alpha_k,c_k,loss`. One row per iteration, with the
    /// loss left empty when it was not logged; when the final iterate was
    /// logged a last row `n_iters,,,loss` follows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,alpha_k,c_k,loss")?;
        for r in &self.records {
            let loss = r.loss.map(crate::io::fmt_f64).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{}",
                r.k,
                crate::io::fmt_f64(r.alpha),
                crate::io::fmt_f64(r.c),
                loss
            )?;
        }
        if let Some(l) = self.final_loss {
            writeln!(out, "{},,,{}", self.records.len(), crate::io::fmt_f64(l))?;
        }
        Ok(())
    }
}

/// Number of logged loss evaluations a run of `cfg` performs.
pub fn logged_evaluations(cfg: &SpsaConfig) -> usize {
    if cfg.log_every == 0 {
        0
    } else {
        cfg.n_iters.div_ceil(cfg.log_every) + 1
    }
}

/// Minimize `loss` from `x0`.
///
/// Returns the logged iterate with the lowest loss (the last iterate when
/// logging is disabled). A step whose perturbed losses are non-finite is
/// skipped and flagged in the trace.
pub fn run_spsa<F>(
    mut loss: F,
    x0: &DVector<f64>,
    cfg: &SpsaConfig,
) -> Result<(DVector<f64>, SpsaTrace)>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    cfg.validate()?;
    let n = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = x0.clone();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut records = Vec::with_capacity(cfg.n_iters);
    let mut loss_evals = 0;
    let mut logged_evals = 0;

    let log_point = |x: &DVector<f64>, loss: &mut F, best: &mut Option<(f64, DVector<f64>)>| {
        let v = loss(x);
        if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v < *b) {
            *best = Some((v, x.clone()));
        }
        v
    };

    for k in 0..cfg.n_iters {
        let (alpha, c) = gain_sequences(cfg, k);
        let logged = if cfg.log_every > 0 && k % cfg.log_every == 0 {
            logged_evals += 1;
            let v = log_point(&x, &mut loss, &mut best);
            if k == 0 && !v.is_finite() {
                return Err(Error::Numerical(
                    "loss is not finite at the starting point".into(),
                ));
            }
            Some(v)
        } else {
            None
        };

        let delta = rademacher(&mut rng, n);
        let plus = loss(&(&x + &delta * c));
        let minus = loss(&(&x - &delta * c));
        loss_evals += 2;
        let skipped = !plus.is_finite() || !minus.is_finite();
        if !skipped {
            let diff = (plus - minus) / (2.0 * c);
            for i in 0..n {
                x[i] -= alpha * diff / delta[i];
            }
        }
        records.push(IterationRecord {
            k,
            alpha,
            c,
            loss: logged,
            skipped,
        });
    }

    let final_loss = if cfg.log_every > 0 {
        logged_evals += 1;
        Some(log_point(&x, &mut loss, &mut best))
    } else {
        None
    };

    let (best_loss, x_best) = match best {
        Some((v, xb)) => (Some(v), xb),
        None => (None, x.clone()),
    };
    let trace = SpsaTrace {
        records,
        final_loss,
        best_loss,
        x_final: x,
        loss_evals: loss_evals + logged_evals,
        logged_evals,
    };
    Ok((x_best, trace))
}
