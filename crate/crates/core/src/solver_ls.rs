//! Confidence-weighted least-squares fusion of a scalar field and a
//! target gradient field: the engine behind both the orthographic and
//! the perspective log-domain objectives.
//!
//! Minimizes a Σ κ (x - x_obs)² + β Σ ‖Dx - g_obs‖² by solving the SPD
//! normal equations (αK + βDᵀD) x = αK x_obs + βDᵀ g_obs with
//! Jacobi-preconditioned conjugate gradients.

use crate::error::{FusionError, Result};
use crate::gradfield::{DifferenceOperator, GradientField};
use crate::grids::{ConfidenceField, DomainMask, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LsParams {
    pub alpha: f64,
    pub beta: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for LsParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            cg_tol: 1e-9,
            cg_max_iter: 10_000,
        }
    }
}

impl LsParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.alpha + self.beta <= 0.0 {
            return Err(FusionError::InvalidParams(format!(
                "need alpha, beta >= 0 and alpha + beta > 0, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.cg_tol > 0.0) {
            return Err(FusionError::InvalidParams("cg_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Solver diagnostics alongside the fused field.
#[derive(Debug, Clone)]
pub struct LsSolution {
    pub field: ScalarField,
    pub iterations: usize,
    pub residual: f64,
}

struct NormalEquations<'a> {
    d: DifferenceOperator,
    kappa: &'a ConfidenceField,
    mask: &'a DomainMask,
    alpha: f64,
    beta: f64,
}

impl NormalEquations<'_> {
    /// y = (αK + βDᵀD) x, restricted to the mask.
    fn apply(&self, x: &ScalarField) -> ScalarField {
        let g = self.d.apply(x);
        let mut y = self.d.apply_adjoint(&g);
        let kv = self.kappa.field().values();
        let xv = x.values();
        let mb = self.mask.bits();
        for (i, out) in y.values_mut().iter_mut().enumerate() {
            if mb[i] {
                *out = self.alpha * kv[i] * xv[i] + self.beta * *out;
            } else {
                *out = 0.0;
            }
        }
        y
    }

    fn diagonal(&self) -> Vec<f64> {
        let lap = self.d.laplacian_diagonal();
        let kv = self.kappa.field().values();
        self.mask
            .bits()
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                if m {
                    self.alpha * kv[i] + self.beta * lap[i]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn check_components(
    d: &DifferenceOperator,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    alpha: f64,
) -> Result<()> {
    let (labels, count) = d.components(mask);
    if count == 0 {
        return Err(FusionError::Degenerate {
            msg: "empty domain mask".into(),
        });
    }
    let mut anchored = vec![false; count];
    for (i, &l) in labels.iter().enumerate() {
        if l != usize::MAX && alpha * kappa.field().values()[i] > 0.0 {
            anchored[l] = true;
        }
    }
    if let Some(bad) = anchored.iter().position(|&a| !a) {
        let pixel = labels.iter().position(|&l| l == bad).unwrap();
        let w = mask.width();
        return Err(FusionError::Singular(format!(
            "mask component {} (containing pixel ({}, {})) has no confidence-weighted depth; \
             its solution is determined only up to a constant",
            bad,
            pixel % w,
            pixel / w
        )));
    }
    Ok(())
}

fn check_shapes(
    x_obs: &ScalarField,
    g_obs: &GradientField,
    kappa: &ConfidenceField,
    mask: &DomainMask,
) -> Result<()> {
    let (w, h) = (x_obs.width(), x_obs.height());
    let ok = g_obs.values.width() == w
        && g_obs.values.height() == h
        && kappa.width() == w
        && kappa.height() == h
        && mask.width() == w
        && mask.height() == h;
    if !ok {
        return Err(FusionError::DimensionMismatch(
            "fuse inputs must share one grid shape".into(),
        ));
    }
    Ok(())
}

pub fn fuse_ls(
    x_obs: &ScalarField,
    g_obs: &GradientField,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    d: &DifferenceOperator,
    params: &LsParams,
) -> Result<LsSolution> {
    params.validate()?;
    check_shapes(x_obs, g_obs, kappa, mask)?;
    let (w, h) = (x_obs.width(), x_obs.height());
    let n = w * h;

    // invalid target-gradient pixels drop out of the consistency term
    let d_eff = d.restricted(&g_obs.valid);
    check_components(&d_eff, kappa, mask, params.alpha)?;

    let eqs = NormalEquations {
        d: d_eff,
        kappa,
        mask,
        alpha: params.alpha,
        beta: params.beta,
    };

    // rhs = αK x_obs + βDᵀ g_obs
    let mut rhs = eqs.d.apply_adjoint(&g_obs.values);
    {
        let kv = kappa.field().values();
        let xv = x_obs.values();
        let mb = mask.bits();
        for (i, r) in rhs.values_mut().iter_mut().enumerate() {
            *r = if mb[i] {
                params.alpha * kv[i] * xv[i] + params.beta * *r
            } else {
                0.0
            };
        }
    }

    // initial iterate: κ-weighted x_obs, zero inside gaps
    let mut x = ScalarField::constant(w, h, 0.0);
    {
        let kv = kappa.field().values();
        let xv = x_obs.values();
        let mb = mask.bits();
        for i in 0..n {
            if mb[i] && kv[i] > 0.0 {
                x.values_mut()[i] = xv[i];
            }
        }
    }

    let diag = eqs.diagonal();
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();

    // Jacobi-preconditioned CG
    let ax = eqs.apply(&x);
    let mut r: Vec<f64> = rhs
        .values()
        .iter()
        .zip(ax.values())
        .map(|(b, a)| b - a)
        .collect();
    let rhs_norm = rhs.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        return Ok(LsSolution {
            field: ScalarField::constant(w, h, 0.0),
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut iterations = 0;
    let mut rel_res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / rhs_norm;

    let mut p_field = ScalarField::constant(w, h, 0.0);
    while rel_res >= params.cg_tol && iterations < params.cg_max_iter {
        p_field.values_mut().copy_from_slice(&p);
        let ap = eqs.apply(&p_field);
        let pap: f64 = p.iter().zip(ap.values()).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(FusionError::Singular(format!(
                "normal equations not positive definite (pᵀAp = {:.3e})",
                pap
            )));
        }
        let step = rz / pap;
        for i in 0..n {
            x.values_mut()[i] += step * p[i];
            r[i] -= step * ap.values()[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let gamma = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + gamma * p[i];
        }
        iterations += 1;
        rel_res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / rhs_norm;
    }

    if rel_res >= params.cg_tol {
        return Err(FusionError::NonConvergence {
            residual: rel_res,
            iterations,
        });
    }

    Ok(LsSolution {
        field: x,
        iterations,
        residual: rel_res,
    })
}

/// Value of the LS objective a Σ κ (x - x_obs)² + β Σ ‖Dx - g_obs‖² at `x`.
pub fn ls_objective(
    x: &ScalarField,
    x_obs: &ScalarField,
    g_obs: &GradientField,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    d: &DifferenceOperator,
    params: &LsParams,
) -> f64 {
    let d_eff = d.restricted(&g_obs.valid);
    let g = d_eff.apply(x);
    let mut total = 0.0;
    let mb = mask.bits();
    for i in 0..mb.len() {
        if !mb[i] {
            continue;
        }
        let k = kappa.field().values()[i];
        let dx = x.values()[i] - x_obs.values()[i];
        total += params.alpha * k * dx * dx;
        let gi = g.values()[i];
        let ti = g_obs.values.values()[i];
        let (eu, ev) = (
            if d_eff.valid_u(i) { gi[0] - ti[0] } else { 0.0 },
            if d_eff.valid_v(i) { gi[1] - ti[1] } else { 0.0 },
        );
        total += params.beta * (eu * eu + ev * ev);
    }
    total
}

/// Direct dense solve of the same normal equations, for verification.
/// Refuses masks larger than 4096 pixels.
pub fn dense_oracle_ls(
    x_obs: &ScalarField,
    g_obs: &GradientField,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    d: &DifferenceOperator,
    params: &LsParams,
) -> Result<ScalarField> {
    params.validate()?;
    check_shapes(x_obs, g_obs, kappa, mask)?;
    let count = mask.count();
    if count > 4096 {
        return Err(FusionError::InvalidParams(format!(
            "dense oracle limited to 4096 mask pixels, got {}",
            count
        )));
    }
    let d_eff = d.restricted(&g_obs.valid);
    check_components(&d_eff, kappa, mask, params.alpha)?;

    let (w, h) = (x_obs.width(), x_obs.height());
    let mut index = vec![usize::MAX; w * h];
    let mut pixels = Vec::with_capacity(count);
    for (i, &m) in mask.bits().iter().enumerate() {
        if m {
            index[i] = pixels.len();
            pixels.push(i);
        }
    }

    let mut a = nalgebra::DMatrix::<f64>::zeros(count, count);
    let mut b = nalgebra::DVector::<f64>::zeros(count);
    for (row, &i) in pixels.iter().enumerate() {
        let k = kappa.field().values()[i];
        a[(row, row)] += params.alpha * k;
        b[row] += params.alpha * k * x_obs.values()[i];
    }
    // each valid difference edge contributes β (x_j - x_i - g)²
    let mut add_edge = |i: usize, j: usize, g: f64| {
        let (ri, rj) = (index[i], index[j]);
        a[(ri, ri)] += params.beta;
        a[(rj, rj)] += params.beta;
        a[(ri, rj)] -= params.beta;
        a[(rj, ri)] -= params.beta;
        b[ri] -= params.beta * g;
        b[rj] += params.beta * g;
    };
    for i in 0..w * h {
        if d_eff.valid_u(i) {
            add_edge(i, i + 1, g_obs.values.values()[i][0]);
        }
        if d_eff.valid_v(i) {
            add_edge(i, i + w, g_obs.values.values()[i][1]);
        }
    }

    let chol = nalgebra::Cholesky::new(a)
        .ok_or_else(|| FusionError::Singular("dense normal equations not SPD".into()))?;
    let sol = chol.solve(&b);

    let mut out = ScalarField::constant(w, h, 0.0);
    for (row, &i) in pixels.iter().enumerate() {
        out.values_mut()[i] = sol[row];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::VectorField2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full_setup(w: usize, h: usize) -> (DomainMask, DifferenceOperator) {
        let mask = DomainMask::full(w, h);
        let d = DifferenceOperator::new(&mask);
        (mask, d)
    }

    #[test]
    fn beta_zero_returns_observation() {
        let (mask, d) = full_setup(8, 8);
        let mut x_obs = ScalarField::constant(8, 8, 0.0);
        for (i, v) in x_obs.values_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.31).sin();
        }
        let kappa = ConfidenceField::uniform(8, 8, 1.0).unwrap();
        let g = GradientField::dense(VectorField2::zeros(8, 8), &mask);
        let p = LsParams {
            beta: 0.0,
            ..Default::default()
        };
        let out = fuse_ls(&x_obs, &g, &kappa, &mask, &d, &p).unwrap();
        for (a, b) in out.field.values().iter().zip(x_obs.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_anchor_recovers_ramp() {
        let (mask, d) = full_setup(12, 12);
        let mut ramp = ScalarField::constant(12, 12, 0.0);
        for v in 0..12 {
            for u in 0..12 {
                ramp.set(u, v, u as f64);
            }
        }
        let mut g = VectorField2::zeros(12, 12);
        for val in g.values_mut() {
            *val = [1.0, 0.0];
        }
        // ramp gradient: du = 1 except at the right edge, dv = 0
        let g = GradientField::dense(g, &mask);
        let mut kfield = ScalarField::constant(12, 12, 0.0);
        kfield.set(0, 0, 1.0);
        let kappa = ConfidenceField::new(kfield).unwrap();
        let p = LsParams {
            cg_tol: 1e-12,
            ..Default::default()
        };
        let out = fuse_ls(&ramp, &g, &kappa, &mask, &d, &p).unwrap();
        for v in 0..12 {
            for u in 0..12 {
                assert!((out.field.get(u, v) - u as f64).abs() < 1e-6);
            }
        }
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        w: usize,
        h: usize,
    ) -> (
        ScalarField,
        GradientField,
        ConfidenceField,
        DomainMask,
        DifferenceOperator,
        LsParams,
    ) {
        let mask = DomainMask::full(w, h);
        let d = DifferenceOperator::new(&mask);
        let x_obs =
            ScalarField::new(w, h, (0..w * h).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .unwrap();
        let g = VectorField2::new(
            w,
            h,
            (0..w * h)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect(),
        )
        .unwrap();
        let mut kv: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        kv[0] = 1.0; // guarantee an anchor
        let kappa = ConfidenceField::new(ScalarField::new(w, h, kv).unwrap()).unwrap();
        let params = LsParams {
            alpha: rng.gen_range(0.1..2.0),
            beta: rng.gen_range(0.1..2.0),
            cg_tol: 1e-11,
            cg_max_iter: 20_000,
        };
        (x_obs, GradientField::dense(g, &mask), kappa, mask, d, params)
    }

    #[test]
    fn cg_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let (x_obs, g, kappa, mask, d, params) = random_instance(&mut rng, 12, 12);
            let cg = fuse_ls(&x_obs, &g, &kappa, &mask, &d, &params).unwrap();
            let direct = dense_oracle_ls(&x_obs, &g, &kappa, &mask, &d, &params).unwrap();
            let max_diff = cg
                .field
                .values()
                .iter()
                .zip(direct.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-6, "max diff {}", max_diff);
        }
    }

    #[test]
    fn objective_does_not_exceed_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x_obs, g, kappa, mask, d, params) = random_instance(&mut rng, 10, 10);
        let out = fuse_ls(&x_obs, &g, &kappa, &mask, &d, &params).unwrap();
        let at_solution = ls_objective(&out.field, &x_obs, &g, &kappa, &mask, &d, &params);
        let at_obs = ls_objective(&x_obs, &x_obs, &g, &kappa, &mask, &d, &params);
        assert!(at_solution <= at_obs + 1e-9);
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (x_obs, g, kappa, mask, d, params) = random_instance(&mut rng, 10, 10);
        let base = fuse_ls(&x_obs, &g, &kappa, &mask, &d, &params).unwrap();
        let mut shifted = x_obs.clone();
        for v in shifted.values_mut() {
            *v += 5.5;
        }
        let out = fuse_ls(&shifted, &g, &kappa, &mask, &d, &params).unwrap();
        for (a, b) in out.field.values().iter().zip(base.field.values()) {
            assert!((a - (b + 5.5)).abs() < 1e-6);
        }
    }

    #[test]
    fn gap_region_ignores_observed_depth() {
        // κ = 0 inside a block: perturbing x_obs there must not move the output
        let (mask, d) = full_setup(12, 12);
        let mut kfield = ScalarField::constant(12, 12, 1.0);
        for v in 4..8 {
            for u in 4..8 {
                kfield.set(u, v, 0.0);
            }
        }
        let kappa = ConfidenceField::new(kfield).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x_obs = ScalarField::new(
            12,
            12,
            (0..144).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let g = GradientField::dense(VectorField2::zeros(12, 12), &mask);
        let params = LsParams {
            cg_tol: 1e-12,
            ..Default::default()
        };
        let base = fuse_ls(&x_obs, &g, &kappa, &mask, &d, &params).unwrap();
        let mut perturbed = x_obs.clone();
        for v in 4..8 {
            for u in 4..8 {
                perturbed.set(u, v, 99.0);
            }
        }
        let out = fuse_ls(&perturbed, &g, &kappa, &mask, &d, &params).unwrap();
        for (a, b) in out.field.values().iter().zip(base.field.values()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn unanchored_component_is_rejected() {
        // right strip disconnected and κ = 0 there
        let mut mask = DomainMask::empty(6, 1);
        for u in [0, 1, 3, 4] {
            mask.set(u, 0, true);
        }
        let d = DifferenceOperator::new(&mask);
        let mut kfield = ScalarField::constant(6, 1, 0.0);
        kfield.set(0, 0, 1.0);
        let kappa = ConfidenceField::new(kfield).unwrap();
        let x_obs = ScalarField::constant(6, 1, 1.0);
        let g = GradientField::dense(VectorField2::zeros(6, 1), &mask);
        let err = fuse_ls(&x_obs, &g, &kappa, &mask, &d, &LsParams::default()).unwrap_err();
        assert!(matches!(err, FusionError::Singular(_)));
    }
}
