//! First-order primal-dual solver for the TGV-regularized fusion
//! objective
//!
//!   a Σ κ (x - x_obs)² + λ₀ Σ ‖∇q‖₂ + λ₁ Σ ‖∇x - q‖₂ + β Σ ‖q - g_obs‖²
//!
//! with ∇q the per-component forward-difference Jacobian (per-pixel 2×2
//! block, Frobenius norm) and the per-pixel Euclidean norm in the λ₁
//! term. Both non-smooth sums are dualized; the dual updates are
//! projections onto per-pixel balls of radii λ₀ and λ₁, the quadratic
//! terms enter as closed-form proximal steps in the primal updates.
//! Step sizes are τ = σ = 1/L with L a power-iteration estimate of the
//! stacked operator (x, q) ↦ (∇x - q, ∇q).

use crate::error::{FusionError, Result};
use crate::gradfield::{DifferenceOperator, GradientField};
use crate::grids::{ConfidenceField, DomainMask, ScalarField, VectorField2};
use crate::solver_ls::{fuse_ls, LsParams};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TgvParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub max_iter: usize,
    pub rel_change_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for TgvParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda0: 0.001,
            lambda1: 0.001,
            max_iter: 2000,
            rel_change_tol: 1e-8,
            cg_tol: 1e-9,
            cg_max_iter: 10_000,
        }
    }
}

impl TgvParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.alpha + self.beta <= 0.0 {
            return Err(FusionError::InvalidParams(format!(
                "need alpha, beta >= 0 and alpha + beta > 0, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.lambda0 >= 0.0 && self.lambda1 >= 0.0)
            || !self.lambda0.is_finite()
            || !self.lambda1.is_finite()
        {
            return Err(FusionError::InvalidParams(
                "lambda0 and lambda1 must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn ls_params(&self) -> LsParams {
        LsParams {
            alpha: self.alpha,
            beta: self.beta,
            cg_tol: self.cg_tol,
            cg_max_iter: self.cg_max_iter,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TgvSolution {
    pub x: ScalarField,
    pub q: VectorField2,
    pub iterations: usize,
    /// False when max_iter was reached before the relative-change test.
    pub converged: bool,
}

/// Power-iteration estimate of ‖D‖ (50 iterations, inflated by 1%).
/// The classical bound for the full-grid forward-difference gradient
/// is √8.
pub fn estimate_operator_norm(d: &DifferenceOperator) -> f64 {
    let n = d.width() * d.height();
    let mut v: Vec<f64> = (0..n)
        .map(|i| ((i as u64).wrapping_mul(2654435761) % 1000) as f64 / 1000.0 - 0.5)
        .collect();
    let mut field = ScalarField::constant(d.width(), d.height(), 0.0);
    let mut lambda = 0.0f64;
    for _ in 0..50 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in &mut v {
            *x /= norm;
        }
        field.values_mut().copy_from_slice(&v);
        let g = d.apply(&field);
        let atav = d.apply_adjoint(&g);
        lambda = v
            .iter()
            .zip(atav.values())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .max(0.0);
        v.copy_from_slice(atav.values());
    }
    lambda.sqrt() * 1.01
}

/// Applies D to each component of a 2-vector field, producing the
/// per-pixel Jacobian stored as [∂u qx, ∂v qx, ∂u qy, ∂v qy].
fn jacobian(d: &DifferenceOperator, q: &[[f64; 2]], out: &mut [[f64; 4]]) {
    let w = d.width();
    for i in 0..q.len() {
        let (vu, vv) = (d.valid_u(i), d.valid_v(i));
        out[i] = [
            if vu { q[i + 1][0] - q[i][0] } else { 0.0 },
            if vv { q[i + w][0] - q[i][0] } else { 0.0 },
            if vu { q[i + 1][1] - q[i][1] } else { 0.0 },
            if vv { q[i + w][1] - q[i][1] } else { 0.0 },
        ];
    }
}

/// Adjoint of [`jacobian`].
fn jacobian_adjoint(d: &DifferenceOperator, j: &[[f64; 4]], out: &mut [[f64; 2]]) {
    let w = d.width();
    for o in out.iter_mut() {
        *o = [0.0; 2];
    }
    for i in 0..j.len() {
        if d.valid_u(i) {
            out[i][0] -= j[i][0];
            out[i + 1][0] += j[i][0];
            out[i][1] -= j[i][2];
            out[i + 1][1] += j[i][2];
        }
        if d.valid_v(i) {
            out[i][1] -= j[i][3];
            out[i + w][1] += j[i][3];
            out[i][0] -= j[i][1];
            out[i + w][0] += j[i][1];
        }
    }
}

/// Norm estimate for the stacked operator (x, q) ↦ (Dx - q, Jq).
fn estimate_stacked_norm(d: &DifferenceOperator) -> f64 {
    let n = d.width() * d.height();
    let mut x: Vec<f64> = (0..n)
        .map(|i| ((i as u64).wrapping_mul(2654435761) % 1000) as f64 / 1000.0 - 0.5)
        .collect();
    let mut q: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let a = ((i as u64).wrapping_mul(40503) % 997) as f64 / 997.0 - 0.5;
            let b = ((i as u64).wrapping_mul(65521) % 991) as f64 / 991.0 - 0.5;
            [a, b]
        })
        .collect();

    let mut field = ScalarField::constant(d.width(), d.height(), 0.0);
    let mut j = vec![[0.0f64; 4]; n];
    let mut jt = vec![[0.0f64; 2]; n];
    let mut lambda = 0.0f64;
    for _ in 0..50 {
        let norm = (x.iter().map(|a| a * a).sum::<f64>()
            + q.iter().map(|a| a[0] * a[0] + a[1] * a[1]).sum::<f64>())
        .sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for a in &mut x {
            *a /= norm;
        }
        for a in &mut q {
            a[0] /= norm;
            a[1] /= norm;
        }
        // forward: p1 = Dx - q, p0 = Jq
        field.values_mut().copy_from_slice(&x);
        let dx = d.apply(&field);
        let p1: Vec<[f64; 2]> = dx
            .values()
            .iter()
            .zip(&q)
            .map(|(g, qi)| [g[0] - qi[0], g[1] - qi[1]])
            .collect();
        jacobian(d, &q, &mut j);
        // adjoint: x' = Dᵀp1, q' = -p1 + Jᵀp0
        let p1_field = VectorField2::new(d.width(), d.height(), p1.clone()).unwrap();
        let xt = d.apply_adjoint(&p1_field);
        jacobian_adjoint(d, &j, &mut jt);
        let qt: Vec<[f64; 2]> = jt
            .iter()
            .zip(&p1)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
            .collect();
        lambda = (x
            .iter()
            .zip(xt.values())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + q.iter()
                .zip(&qt)
                .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
                .sum::<f64>())
        .max(0.0);
        x.copy_from_slice(xt.values());
        q.copy_from_slice(&qt);
    }
    lambda.sqrt() * 1.01
}

pub fn fuse_tgv(
    x_obs: &ScalarField,
    g_obs: &GradientField,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    d: &DifferenceOperator,
    params: &TgvParams,
) -> Result<TgvSolution> {
    params.validate()?;
    let (w, h) = (x_obs.width(), x_obs.height());
    let n = w * h;

    // warm start from the quadratic problem with the same alpha, beta
    let ls = fuse_ls(x_obs, g_obs, kappa, mask, d, &params.ls_params())?;
    let mut x: Vec<f64> = ls.field.values().to_vec();
    let init_grad = d.apply(&ls.field);
    let mut q: Vec<[f64; 2]> = init_grad.values().to_vec();

    let l = estimate_stacked_norm(d).max(1e-12);
    let tau = 1.0 / l;
    let sigma = 1.0 / l;

    let mut x_bar = x.clone();
    let mut q_bar = q.clone();
    let mut p1 = vec![[0.0f64; 2]; n];
    let mut p0 = vec![[0.0f64; 4]; n];
    let mut j = vec![[0.0f64; 4]; n];
    let mut jt = vec![[0.0f64; 2]; n];
    let mut field = ScalarField::constant(w, h, 0.0);

    let mb = mask.bits();
    let kv = kappa.field().values();
    let xov = x_obs.values();
    let gv = g_obs.values.values();
    let gvalid = g_obs.valid.bits();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        // dual ascent on λ₁ ‖∇x - q‖ term
        field.values_mut().copy_from_slice(&x_bar);
        let dxb = d.apply(&field);
        for i in 0..n {
            if !mb[i] {
                continue;
            }
            let g = dxb.values()[i];
            let mut a = p1[i][0] + sigma * (g[0] - q_bar[i][0]);
            let mut b = p1[i][1] + sigma * (g[1] - q_bar[i][1]);
            let norm = (a * a + b * b).sqrt();
            if norm > params.lambda1 {
                let s = params.lambda1 / norm;
                a *= s;
                b *= s;
            }
            p1[i] = [a, b];
        }
        // dual ascent on λ₀ ‖∇q‖ term
        jacobian(d, &q_bar, &mut j);
        for i in 0..n {
            if !mb[i] {
                continue;
            }
            let mut pj = p0[i];
            for c in 0..4 {
                pj[c] += sigma * j[i][c];
            }
            let norm =
                (pj[0] * pj[0] + pj[1] * pj[1] + pj[2] * pj[2] + pj[3] * pj[3]).sqrt();
            if norm > params.lambda0 {
                let s = params.lambda0 / norm;
                for c in &mut pj {
                    *c *= s;
                }
            }
            p0[i] = pj;
        }

        // primal descent on x with the κ-weighted data prox
        let p1_field = VectorField2::new(w, h, p1.clone()).expect("shape");
        let dtp1 = d.apply_adjoint(&p1_field);
        let mut max_change = 0.0f64;
        let mut max_x = 0.0f64;
        for i in 0..n {
            if !mb[i] {
                continue;
            }
            let y = x[i] - tau * dtp1.values()[i];
            let wk = 2.0 * tau * params.alpha * kv[i];
            let x_new = (y + wk * xov[i]) / (1.0 + wk);
            max_change = max_change.max((x_new - x[i]).abs());
            max_x = max_x.max(x_new.abs());
            x_bar[i] = 2.0 * x_new - x[i];
            x[i] = x_new;
        }
        // primal descent on q with the β gradient-consistency prox
        jacobian_adjoint(d, &p0, &mut jt);
        for i in 0..n {
            if !mb[i] {
                continue;
            }
            let wg = if gvalid[i] {
                2.0 * tau * params.beta
            } else {
                0.0
            };
            for c in 0..2 {
                let y = q[i][c] + tau * p1[i][c] - tau * jt[i][c];
                let q_new = (y + wg * gv[i][c]) / (1.0 + wg);
                q_bar[i][c] = 2.0 * q_new - q[i][c];
                q[i][c] = q_new;
            }
        }

        iterations += 1;
        if iterations % 50 == 0 && x.iter().any(|v| v.is_nan()) {
            return Err(FusionError::NumericalBreakdown {
                iteration: iterations,
            });
        }
        if max_change < params.rel_change_tol * max_x.max(1e-300) {
            converged = true;
            break;
        }
    }

    if x.iter().any(|v| v.is_nan()) || q.iter().any(|v| v[0].is_nan() || v[1].is_nan()) {
        return Err(FusionError::NumericalBreakdown {
            iteration: iterations,
        });
    }

    let mut x_field = ScalarField::constant(w, h, 0.0);
    x_field.values_mut().copy_from_slice(&x);
    let q_field = VectorField2::new(w, h, q).expect("shape");
    Ok(TgvSolution {
        x: x_field,
        q: q_field,
        iterations,
        converged,
    })
}

/// Value of the TGV objective at (x, q), for limit tests.
pub fn tgv_objective(
    x: &ScalarField,
    q: &VectorField2,
    x_obs: &ScalarField,
    g_obs: &GradientField,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    d: &DifferenceOperator,
    params: &TgvParams,
) -> f64 {
    let n = x.values().len();
    let dx = d.apply(x);
    let mut j = vec![[0.0f64; 4]; n];
    jacobian(d, q.values(), &mut j);
    let mut total = 0.0;
    for i in 0..n {
        if !mask.bits()[i] {
            continue;
        }
        let k = kappa.field().values()[i];
        let e = x.values()[i] - x_obs.values()[i];
        total += params.alpha * k * e * e;
        let ji = j[i];
        total += params.lambda0
            * (ji[0] * ji[0] + ji[1] * ji[1] + ji[2] * ji[2] + ji[3] * ji[3]).sqrt();
        let r = [
            dx.values()[i][0] - q.values()[i][0],
            dx.values()[i][1] - q.values()[i][1],
        ];
        total += params.lambda1 * (r[0] * r[0] + r[1] * r[1]).sqrt();
        if g_obs.valid.bits()[i] {
            let e0 = q.values()[i][0] - g_obs.values.values()[i][0];
            let e1 = q.values()[i][1] - g_obs.values.values()[i][1];
            total += params.beta * (e0 * e0 + e1 * e1);
        }
    }
    total
}
