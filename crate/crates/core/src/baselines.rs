//! Greedy sparse recovery: orthogonal matching pursuit and CoSaMP.
//!
//! Both work from the precomputed Gram matrix `XᵀX` and correlation `Xᵀy`,
//! so every least-squares subproblem is a small Cholesky solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyConfig {
    /// Target support size `s`.
    pub sparsity: usize,
    pub max_iters: usize,
    pub residual_tol: f64,
}

impl GreedyConfig {
    pub fn new(sparsity: usize) -> Self {
        Self {
            sparsity,
            max_iters: sparsity.max(50),
            residual_tol: 1e-10,
        }
    }

    /// `s = ⌈0.1 n⌉`.
    pub fn default_for(n: usize) -> Self {
        Self::new(n.div_ceil(10).max(1))
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.sparsity == 0 || self.sparsity > n {
            return Err(Error::InvalidInput(format!(
                "sparsity must lie in 1..={n}, got {}",
                self.sparsity
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::InvalidInput(
                "residual_tol must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    pub beta: DVector<f64>,
    pub support: Vec<usize>,
    /// `‖y − Xβ_k‖` after each iteration.
    pub residual_norms: Vec<f64>,
}

/// A recovery problem with `XᵀX` and `Xᵀy` precomputed, so several runs
/// (e.g. a sparsity sweep) share one Gram matrix.
pub struct GreedyProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
}

impl<'a> GreedyProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "y has length {}, X has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if let Some(j) = (0..x.ncols()).find(|&j| x.column(j).norm() == 0.0) {
            return Err(Error::InvalidInput(format!("column {j} of X is zero")));
        }
        Ok(Self {
            x,
            y,
            gram: x.tr_mul(x),
            xty: x.tr_mul(y),
        })
    }

    /// Least squares restricted to `support` via its Gram block.
    fn least_squares(&self, support: &[usize]) -> Result<DVector<f64>> {
        let k = support.len();
        let g = DMatrix::from_fn(k, k, |a, b| self.gram[(support[a], support[b])]);
        let rhs = DVector::from_fn(k, |a, _| self.xty[support[a]]);
        let factor = SpdFactor::new(&g).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::Numerical(format!(
                "least squares on a support of {k} columns is rank deficient"
            )),
            other => other,
        })?;
        Ok(factor.solve(&rhs))
    }

    fn residual(&self, support: &[usize], coeffs: &DVector<f64>) -> DVector<f64> {
        let mut r = self.y.clone();
        for (a, &j) in support.iter().enumerate() {
            r.axpy(-coeffs[a], &self.x.column(j), 1.0);
        }
        r
    }

    /// `Xᵀr = Xᵀy − XᵀX β` for `β` supported on `support`.
    fn proxy(&self, support: &[usize], coeffs: &DVector<f64>) -> DVector<f64> {
        let mut p = self.xty.clone();
        for (a, &j) in support.iter().enumerate() {
            p.axpy(-coeffs[a], &self.gram.column(j), 1.0);
        }
        p
    }

    fn scatter(&self, support: &[usize], coeffs: &DVector<f64>) -> DVector<f64> {
        let mut beta = DVector::zeros(self.x.ncols());
        for (a, &j) in support.iter().enumerate() {
            beta[j] = coeffs[a];
        }
        beta
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }
}

/// Orthogonal matching pursuit.
pub fn omp(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &GreedyConfig) -> Result<GreedyResult> {
    omp_with(&GreedyProblem::new(x, y)?, cfg)
}

pub fn omp_with(prob: &GreedyProblem<'_>, cfg: &GreedyConfig) -> Result<GreedyResult> {
    let (x, y) = (prob.x, prob.y);
    cfg.validate(x.ncols())?;
    let n = x.ncols();
    let mut support: Vec<usize> = Vec::with_capacity(cfg.sparsity);
    let mut in_support = vec![false; n];
    let mut coeffs = DVector::zeros(0);
    let mut residual_norms = Vec::new();
    let mut r_norm = y.norm();
    // one atom per iteration
    let steps = cfg.sparsity.min(cfg.max_iters);

    while support.len() < steps && r_norm > cfg.residual_tol {
        let proxy = prob.proxy(&support, &coeffs);
        let scale = prob.xty.amax().max(f64::MIN_POSITIVE);
        let best = (0..n)
            .filter(|&j| !in_support[j])
            .map(|j| (j, proxy[j].abs()))
            .fold(None, |acc: Option<(usize, f64)>, c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            });
        let Some((j, corr)) = best else { break };
        if corr <= 1e-14 * scale {
            break;
        }
        support.push(j);
        in_support[j] = true;
        coeffs = prob.least_squares(&support)?;
        r_norm = prob.residual(&support, &coeffs).norm();
        residual_norms.push(r_norm);
    }
    Ok(GreedyResult {
        beta: prob.scatter(&support, &coeffs),
        support,
        residual_norms,
    })
}

/// Indices of the `k` largest magnitudes, ties broken by lower index.
fn top_k(values: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Compressive sampling matching pursuit.
///
/// Each iteration merges the `2s` largest proxy entries with the current
/// support, solves least squares on the union, prunes to the `s` largest
/// coefficients and updates the residual. The best iterate seen (by residual
/// norm) is returned.
pub fn cosamp(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &GreedyConfig) -> Result<GreedyResult> {
    cosamp_with(&GreedyProblem::new(x, y)?, cfg)
}

pub fn cosamp_with(prob: &GreedyProblem<'_>, cfg: &GreedyConfig) -> Result<GreedyResult> {
    let (x, y) = (prob.x, prob.y);
    cfg.validate(x.ncols())?;
    let n = x.ncols();
    let s = cfg.sparsity;
    let mut support: Vec<usize> = Vec::new();
    let mut coeffs = DVector::zeros(0);
    let mut r_norm = y.norm();
    let mut residual_norms = Vec::new();
    let mut best = (r_norm, support.clone(), coeffs.clone());

    for _ in 0..cfg.max_iters {
        if r_norm <= cfg.residual_tol {
            break;
        }
        let proxy = prob.proxy(&support, &coeffs);
        let mut merged = top_k(&proxy, (2 * s).min(n));
        for &j in &support {
            if !merged.contains(&j) {
                merged.push(j);
            }
        }
        merged.sort_unstable();
        let b = prob.least_squares(&merged)?;

        let mut keep = top_k(&b, s.min(merged.len()));
        keep.sort_unstable();
        let next: Vec<usize> = keep.iter().map(|&a| merged[a]).collect();
        let next_coeffs = DVector::from_fn(keep.len(), |i, _| b[keep[i]]);
        let next_norm = prob.residual(&next, &next_coeffs).norm();
        residual_norms.push(next_norm);

        let stalled = next == support || next_norm >= r_norm * (1.0 - 1e-12);
        support = next;
        coeffs = next_coeffs;
        r_norm = next_norm;
        if r_norm < best.0 {
            best = (r_norm, support.clone(), coeffs.clone());
        }
        if stalled {
            break;
        }
    }
    let (_, support, coeffs) = best;
    Ok(GreedyResult {
        beta: prob.scatter(&support, &coeffs),
        support,
        residual_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn orthonormal(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        a.qr().q()
    }

    #[test]
    fn omp_one_sparse_orthonormal() {
        let q = orthonormal(8, 1);
        let y = q.column(5) * 3.0;
        let r = omp(&q, &y, &GreedyConfig::new(1)).unwrap();
        let mut want = DVector::zeros(8);
        want[5] = 3.0;
        assert!((r.beta - want).amax() < 1e-12);
    }

    #[test]
    fn zero_measurement_gives_zero() {
        let q = orthonormal(6, 2);
        let y = DVector::zeros(6);
        let r = omp(&q, &y, &GreedyConfig::new(3)).unwrap();
        assert!(r.beta.iter().all(|v| *v == 0.0));
        assert!(r.residual_norms.is_empty());
        let r = cosamp(&q, &y, &GreedyConfig::new(2)).unwrap();
        assert!(r.beta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cosamp_one_sparse_orthonormal() {
        let q = orthonormal(8, 3);
        let y = q.column(2) * 3.0;
        let r = cosamp(&q, &y, &GreedyConfig::new(1)).unwrap();
        assert!((r.beta[2] - 3.0).abs() < 1e-12);
        assert_eq!(r.support, vec![2]);
        assert_eq!(r.residual_norms.len(), 1);
    }

    #[test]
    fn cosamp_full_support_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(6, 6, |i, j| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v + if i == j { 4.0 } else { 0.0 }
        });
        let y = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        let r = cosamp(&x, &y, &GreedyConfig::new(6)).unwrap();
        let want = x.clone().lu().solve(&y).unwrap();
        assert!((r.beta - want).amax() < 1e-8);
    }

    #[test]
    fn outputs_are_s_sparse_and_omp_residual_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(20, 40, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(20, |_, _| StandardNormal.sample(&mut rng));
        for s in [1, 3, 7] {
            let cfg = GreedyConfig::new(s);
            let o = omp(&x, &y, &cfg).unwrap();
            let c = cosamp(&x, &y, &cfg).unwrap();
            assert!(o.beta.iter().filter(|v| **v != 0.0).count() <= s);
            assert!(c.beta.iter().filter(|v| **v != 0.0).count() <= s);
            for w in o.residual_norms.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let x = DMatrix::identity(4, 4);
        let y = DVector::zeros(4);
        assert!(omp(&x, &y, &GreedyConfig::new(0)).is_err());
        assert!(omp(&x, &y, &GreedyConfig::new(5)).is_err());
        let mut z = x.clone();
        z.column_mut(1).fill(0.0);
        assert!(cosamp(&z, &y, &GreedyConfig::new(1)).is_err());
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let mut x = DMatrix::identity(3, 3);
        x.set_column(2, &x.column(0).clone_owned());
        let y = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        // s = 3 forces both copies into the support
        assert!(matches!(
            omp(&x, &y, &GreedyConfig::new(3)),
            Ok(_) | Err(Error::Numerical(_))
        ));
        assert!(matches!(
            cosamp(&x, &y, &GreedyConfig::new(3)),
            Err(Error::Numerical(_))
        ));
    }
}
