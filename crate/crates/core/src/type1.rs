//! Type-I estimation: the Gaussian component `u` given fixed scales `z`.
//!
//! With `Λ = diag(z)` the coefficients `β = Λu` solve
//!
//! ```text
//! (XᵀX / σ_ε² + Λ⁻² / σ_u²) β = Xᵀy / σ_ε²
//! ```
//!
//! which is the Λ-sandwiched system
//! `(Λ XᵀX Λ / σ_ε² + I / σ_u²) u = Λ Xᵀy / σ_ε²` rescaled by `Λ⁻¹`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{HyperParams, Measurement, ModelMatrices};

#[derive(Debug, Clone, PartialEq)]
pub struct Type1Result {
    pub u: DVector<f64>,
    /// `β = z ⊙ u`
    pub beta: DVector<f64>,
    /// Euclidean norm of the residual of the system actually solved.
    pub residual_norm: f64,
    /// Euclidean norm of that system's right-hand side.
    pub rhs_norm: f64,
    /// Indices kept by thresholding (all of them for the full solve).
    pub support: Vec<usize>,
    /// Set when thresholding removed every coefficient.
    pub empty_support: bool,
}

/// Precomputed `XᵀX` and `Xᵀy` shared by repeated Type-I solves.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
}

impl NormalEquations {
    pub fn new(model: &ModelMatrices, y: &Measurement) -> Result<Self> {
        if y.y.len() != model.m() {
            return Err(Error::Shape(format!(
                "y has length {}, model has m = {}",
                y.y.len(),
                model.m()
            )));
        }
        let x = model.x();
        Ok(Self {
            gram: x.tr_mul(x),
            xty: x.tr_mul(&y.y),
        })
    }

    pub fn n(&self) -> usize {
        self.xty.len()
    }
}

fn clamp_scales(z: &DVector<f64>, params: &HyperParams, n: usize) -> Result<DVector<f64>> {
    params.validate()?;
    if z.len() != n {
        return Err(Error::Shape(format!(
            "z has length {}, model has n = {n}",
            z.len()
        )));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(format!(
            "z[{i}] = {} is not a valid scale",
            z[i]
        )));
    }
    Ok(z.map(|v| v.max(params.z_floor)))
}

/// Solve for `β` directly and recover `u = β ⊘ z`.
pub fn solve_type1(
    model: &ModelMatrices,
    y: &Measurement,
    z: &DVector<f64>,
    params: &HyperParams,
) -> Result<Type1Result> {
    solve_type1_with(&NormalEquations::new(model, y)?, z, params)
}

pub fn solve_type1_with(
    normal: &NormalEquations,
    z: &DVector<f64>,
    params: &HyperParams,
) -> Result<Type1Result> {
    let n = normal.n();
    let z = clamp_scales(z, params, n)?;
    let mut lhs = &normal.gram / params.sigma_eps_sq;
    for i in 0..n {
        lhs[(i, i)] += 1.0 / (params.sigma_u_sq * z[i] * z[i]);
    }
    let rhs = &normal.xty / params.sigma_eps_sq;
    let beta = SpdFactor::new(&lhs)?.solve(&rhs);
    let residual_norm = (&lhs * &beta - &rhs).norm();
    let u = beta.component_div(&z);
    Ok(Type1Result {
        u,
        beta,
        residual_norm,
        rhs_norm: rhs.norm(),
        support: (0..n).collect(),
        empty_support: false,
    })
}

/// Coefficient matrix of the Λ-sandwiched system,
/// `Λ XᵀX Λ / σ_ε² + I / σ_u²`, and its right-hand side `Λ Xᵀy / σ_ε²`.
fn sandwiched_system(
    normal: &NormalEquations,
    z: &DVector<f64>,
    params: &HyperParams,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = normal.n();
    let mut lhs = DMatrix::from_fn(n, n, |i, j| {
        z[i] * normal.gram[(i, j)] * z[j] / params.sigma_eps_sq
    });
    for i in 0..n {
        lhs[(i, i)] += 1.0 / params.sigma_u_sq;
    }
    let rhs = normal.xty.component_mul(z) / params.sigma_eps_sq;
    (lhs, rhs)
}

/// Thresholded solve: keep `S = {i : z_i > τ}`, solve the restriction of
/// the Λ-sandwiched system to `S` for `u_S`, and zero everything else.
pub fn solve_type1_thresholded(
    model: &ModelMatrices,
    y: &Measurement,
    z: &DVector<f64>,
    params: &HyperParams,
) -> Result<Type1Result> {
    solve_type1_thresholded_with(&NormalEquations::new(model, y)?, z, params)
}

pub fn solve_type1_thresholded_with(
    normal: &NormalEquations,
    z: &DVector<f64>,
    params: &HyperParams,
) -> Result<Type1Result> {
    let n = normal.n();
    let raw = z;
    let z = clamp_scales(z, params, n)?;
    let support: Vec<usize> = (0..n).filter(|&i| raw[i] > params.tau).collect();
    if support.is_empty() {
        return Ok(Type1Result {
            u: DVector::zeros(n),
            beta: DVector::zeros(n),
            residual_norm: 0.0,
            rhs_norm: 0.0,
            support,
            empty_support: true,
        });
    }
    let (lhs, rhs) = sandwiched_system(normal, &z, params);
    let k = support.len();
    let lhs_s = DMatrix::from_fn(k, k, |a, b| lhs[(support[a], support[b])]);
    let rhs_s = DVector::from_fn(k, |a, _| rhs[support[a]]);
    let u_s = SpdFactor::new(&lhs_s)?.solve(&rhs_s);
    let residual_norm = (&lhs_s * &u_s - &rhs_s).norm();
    let mut u = DVector::zeros(n);
    for (a, &i) in support.iter().enumerate() {
        u[i] = u_s[a];
    }
    let beta = u.component_mul(&z);
    Ok(Type1Result {
        u,
        beta,
        residual_norm,
        rhs_norm: rhs_s.norm(),
        support,
        empty_support: false,
    })
}
