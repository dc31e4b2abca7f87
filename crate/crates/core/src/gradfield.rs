//! Normal-to-gradient conversions and the discrete difference operators
//! (with adjoints) used by every solver.
//!
//! Gradients use unit pixel spacing and forward differences with
//! per-direction validity: a direction is valid at (u, v) iff both the
//! pixel and its forward neighbor are in-mask.

use crate::camera::CameraIntrinsics;
use crate::grids::{DomainMask, ScalarField, VectorField2, VectorField3};

/// Default |n_z| threshold below which an orthographic gradient is dropped.
pub const EPS_NZ: f64 = 1e-6;
/// Default denominator threshold (relative to f) for the log-gradient.
pub const EPS_DENOM_REL: f64 = 1e-6;
/// Log-gradient magnitude cap: a component of g̃ beyond this implies a
/// depth ratio above e^0.5 ≈ 1.65 between adjacent pixels, which only a
/// grazing (unreliable) normal can produce; such pixels are marked
/// invalid instead of entering the least-squares term as outliers.
pub const MAX_LOG_GRADIENT: f64 = 0.5;
/// Minimum cosine between the viewing ray and the normal for a
/// log-gradient observation to count. Noise in a normal perturbs g̃
/// roughly as sec² of the view angle, so observations beyond ~87° are
/// dominated by noise; the solver inpaints those pixels instead.
pub const GRAZING_COS_MIN: f64 = 0.05;

/// A target gradient field with per-pixel validity. Invalid pixels
/// (grazing normals) are excluded from the gradient-consistency term.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub values: VectorField2,
    pub valid: DomainMask,
}

impl GradientField {
    /// A fully-valid gradient field over `mask`.
    pub fn dense(values: VectorField2, mask: &DomainMask) -> Self {
        Self {
            values,
            valid: mask.clone(),
        }
    }
}

/// Orthographic gradient relation g = -(n_x, n_y) / n_z.
pub fn ortho_gradient_from_normals(n: &VectorField3, mask: &DomainMask) -> GradientField {
    let (w, h) = (n.width(), n.height());
    let mut g = VectorField2::zeros(w, h);
    let mut valid = DomainMask::empty(w, h);
    for v in 0..h {
        for u in 0..w {
            if !mask.get(u, v) {
                continue;
            }
            let nv = n.get(u, v);
            if nv[2].abs() < EPS_NZ {
                continue;
            }
            g.set(u, v, [-nv[0] / nv[2], -nv[1] / nv[2]]);
            valid.set(u, v, true);
        }
    }
    GradientField { values: g, valid }
}

/// Perspective log-depth gradient relation
/// g̃ = -(n_x, n_y) / ((u - c_u) n_x + (v - c_v) n_y + f n_z).
pub fn persp_loggradient_from_normals(
    n: &VectorField3,
    mask: &DomainMask,
    k: &CameraIntrinsics,
) -> GradientField {
    let (w, h) = (n.width(), n.height());
    let mut g = VectorField2::zeros(w, h);
    let mut valid = DomainMask::empty(w, h);
    let eps = EPS_DENOM_REL * k.f;
    for v in 0..h {
        for u in 0..w {
            if !mask.get(u, v) {
                continue;
            }
            let nv = n.get(u, v);
            let denom = (u as f64 - k.cu) * nv[0] + (v as f64 - k.cv) * nv[1] + k.f * nv[2];
            if denom.abs() < eps {
                continue;
            }
            // denom = f |dir| cos(view angle) for a unit normal
            let du = (u as f64 - k.cu) / k.f;
            let dv = (v as f64 - k.cv) / k.f;
            let ray_norm = (du * du + dv * dv + 1.0).sqrt();
            if denom < GRAZING_COS_MIN * k.f * ray_norm {
                continue;
            }
            let gv = [-nv[0] / denom, -nv[1] / denom];
            if gv[0].abs() > MAX_LOG_GRADIENT || gv[1].abs() > MAX_LOG_GRADIENT {
                continue;
            }
            g.set(u, v, gv);
            valid.set(u, v, true);
        }
    }
    GradientField { values: g, valid }
}

/// Forward-difference gradient operator restricted to a mask, with its
/// exact adjoint. `DᵀD` is the 5-point graph Laplacian of the valid edges.
#[derive(Debug, Clone)]
pub struct DifferenceOperator {
    width: usize,
    height: usize,
    valid_u: Vec<bool>,
    valid_v: Vec<bool>,
}

impl DifferenceOperator {
    pub fn new(mask: &DomainMask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut valid_u = vec![false; w * h];
        let mut valid_v = vec![false; w * h];
        for v in 0..h {
            for u in 0..w {
                let i = v * w + u;
                if !mask.get(u, v) {
                    continue;
                }
                valid_u[i] = u + 1 < w && mask.get(u + 1, v);
                valid_v[i] = v + 1 < h && mask.get(u, v + 1);
            }
        }
        Self {
            width: w,
            height: h,
            valid_u,
            valid_v,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn valid_u(&self, i: usize) -> bool {
        self.valid_u[i]
    }

    #[inline]
    pub fn valid_v(&self, i: usize) -> bool {
        self.valid_v[i]
    }

    /// Number of valid edges (difference equations).
    pub fn edge_count(&self) -> usize {
        self.valid_u.iter().filter(|&&b| b).count()
            + self.valid_v.iter().filter(|&&b| b).count()
    }

    /// Drops both directions at pixels outside `pixel_valid`. Used to
    /// remove invalid target-gradient pixels from the consistency term.
    pub fn restricted(&self, pixel_valid: &DomainMask) -> Self {
        let mut out = self.clone();
        for i in 0..self.width * self.height {
            if !pixel_valid.bits()[i] {
                out.valid_u[i] = false;
                out.valid_v[i] = false;
            }
        }
        out
    }

    /// Forward differences; zero on invalid directions.
    pub fn apply(&self, x: &ScalarField) -> VectorField2 {
        let (w, h) = (self.width, self.height);
        let xs = x.values();
        let mut out = VectorField2::zeros(w, h);
        let vals = out.values_mut();
        for i in 0..w * h {
            let du = if self.valid_u[i] { xs[i + 1] - xs[i] } else { 0.0 };
            let dv = if self.valid_v[i] { xs[i + w] - xs[i] } else { 0.0 };
            vals[i] = [du, dv];
        }
        out
    }

    /// Exact adjoint of [`apply`](Self::apply) (negative divergence with
    /// matching boundary handling).
    pub fn apply_adjoint(&self, q: &VectorField2) -> ScalarField {
        let (w, h) = (self.width, self.height);
        let qs = q.values();
        let mut out = vec![0.0; w * h];
        for i in 0..w * h {
            if self.valid_u[i] {
                out[i] -= qs[i][0];
                out[i + 1] += qs[i][0];
            }
            if self.valid_v[i] {
                out[i] -= qs[i][1];
                out[i + w] += qs[i][1];
            }
        }
        ScalarField::new(w, h, out).expect("shape by construction")
    }

    /// Diagonal of DᵀD, one entry per pixel.
    pub fn laplacian_diagonal(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut diag = vec![0.0; w * h];
        for i in 0..w * h {
            if self.valid_u[i] {
                diag[i] += 1.0;
                diag[i + 1] += 1.0;
            }
            if self.valid_v[i] {
                diag[i] += 1.0;
                diag[i + w] += 1.0;
            }
        }
        diag
    }

    /// Connected components of the pixel graph induced by valid edges.
    /// Isolated in-mask pixels (no valid edge) form singleton components.
    /// Returns a per-pixel component label (usize::MAX off-mask) and the
    /// component count.
    pub fn components(&self, mask: &DomainMask) -> (Vec<usize>, usize) {
        let (w, h) = (self.width, self.height);
        let mut label = vec![usize::MAX; w * h];
        let mut next = 0usize;
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !mask.bits()[start] || label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let mut visit = |j: usize| {
                    if label[j] == usize::MAX {
                        label[j] = next;
                        stack.push(j);
                    }
                };
                if self.valid_u[i] {
                    visit(i + 1);
                }
                if self.valid_v[i] {
                    visit(i + w);
                }
                if i >= 1 && self.valid_u[i - 1] {
                    visit(i - 1);
                }
                if i >= w && self.valid_v[i - w] {
                    visit(i - w);
                }
            }
            next += 1;
        }
        (label, next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot_s(a: &ScalarField, b: &ScalarField) -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
    }

    fn dot_v(a: &VectorField2, b: &VectorField2) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x[0] * y[0] + x[1] * y[1])
            .sum()
    }

    #[test]
    fn ortho_gradient_cases() {
        let mut n = VectorField3::zeros(3, 1);
        n.set(0, 0, [0.0, 0.0, 1.0]);
        let s = 1.0 / 2f64.sqrt();
        n.set(1, 0, [-s, 0.0, s]);
        n.set(2, 0, [0.0, 1.0, 0.0]); // grazing
        let g = ortho_gradient_from_normals(&n, &DomainMask::full(3, 1));
        assert_eq!(g.values.get(0, 0), [0.0, 0.0]);
        let g1 = g.values.get(1, 0);
        assert!((g1[0] - 1.0).abs() < 1e-15 && g1[1].abs() < 1e-15);
        assert!(g.valid.get(0, 0) && g.valid.get(1, 0) && !g.valid.get(2, 0));
    }

    #[test]
    fn persp_loggradient_at_principal_point_matches_ortho_over_f() {
        let k = CameraIntrinsics::new(250.0, 1.0, 1.0).unwrap();
        let mut n = VectorField3::zeros(3, 3);
        let raw = [0.3f64, -0.2, 0.9327379053088816];
        let norm = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
        for val in n.values_mut() {
            *val = [raw[0] / norm, raw[1] / norm, raw[2] / norm];
        }
        let mask = DomainMask::full(3, 3);
        let gp = persp_loggradient_from_normals(&n, &mask, &k);
        let go = ortho_gradient_from_normals(&n, &mask);
        // at the principal point (1,1): g̃ = g / f exactly
        let a = gp.values.get(1, 1);
        let b = go.values.get(1, 1);
        assert!((a[0] - b[0] / k.f).abs() < 1e-18);
        assert!((a[1] - b[1] / k.f).abs() < 1e-18);
    }

    #[test]
    fn persp_loggradient_unit_z_is_zero() {
        let k = CameraIntrinsics::new(100.0, 5.0, 5.0).unwrap();
        let mut n = VectorField3::zeros(4, 4);
        for val in n.values_mut() {
            *val = [0.0, 0.0, 1.0];
        }
        let g = persp_loggradient_from_normals(&n, &DomainMask::full(4, 4), &k);
        assert!(g.values.values().iter().all(|v| *v == [0.0, 0.0]));
        assert_eq!(g.valid.count(), 16);
    }

    #[test]
    fn gradient_of_constant_is_zero_and_ramp_is_one() {
        let mask = DomainMask::full(5, 5);
        let d = DifferenceOperator::new(&mask);
        let c = ScalarField::constant(5, 5, 3.7);
        assert!(d.apply(&c).values().iter().all(|v| *v == [0.0, 0.0]));

        let mut ramp = ScalarField::constant(5, 5, 0.0);
        for v in 0..5 {
            for u in 0..5 {
                ramp.set(u, v, u as f64);
            }
        }
        let g = d.apply(&ramp);
        for v in 0..5 {
            for u in 0..4 {
                assert_eq!(g.get(u, v), [1.0, 0.0]);
            }
        }
    }

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DomainMask {
        let bits: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.7)).collect();
        DomainMask::new(w, h, bits).unwrap()
    }

    #[test]
    fn adjoint_identity_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let mask = random_mask(&mut rng, 16, 16);
            let d = DifferenceOperator::new(&mask);
            let x = ScalarField::new(16, 16, (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let q = VectorField2::new(
                16,
                16,
                (0..256)
                    .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                    .collect(),
            )
            .unwrap();
            let lhs = dot_v(&d.apply(&x), &q);
            let rhs = dot_s(&x, &d.apply_adjoint(&q));
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            assert!((lhs - rhs).abs() / scale < 1e-12);
        }
    }

    #[test]
    fn operator_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mask = random_mask(&mut rng, 12, 12);
        let d = DifferenceOperator::new(&mask);
        let x = ScalarField::new(12, 12, (0..144).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let y = ScalarField::new(12, 12, (0..144).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let (a, b) = (2.5, -1.25);
        let mut combo = x.clone();
        for (c, (&xv, &yv)) in combo
            .values_mut()
            .iter_mut()
            .zip(x.values().iter().zip(y.values()))
        {
            *c = a * xv + b * yv;
        }
        let lhs = d.apply(&combo);
        let gx = d.apply(&x);
        let gy = d.apply(&y);
        for i in 0..144 {
            for c in 0..2 {
                let expect = a * gx.values()[i][c] + b * gy.values()[i][c];
                assert!((lhs.values()[i][c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn components_split_by_gap() {
        // two 1-pixel-wide strips separated by an off-mask column
        let mut mask = DomainMask::empty(5, 1);
        mask.set(0, 0, true);
        mask.set(1, 0, true);
        mask.set(3, 0, true);
        mask.set(4, 0, true);
        let d = DifferenceOperator::new(&mask);
        let (labels, count) = d.components(&mask);
        assert_eq!(count, 2);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[3], labels[4]);
        assert_ne!(labels[0], labels[3]);
    }
}
