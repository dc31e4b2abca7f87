//! Analytic ground-truth scenes and the degradation protocol used for
//! desk-scale benchmarking: random pixel discard, Perlin-noise gaps and
//! Gaussian perturbation of depth and normals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::CameraIntrinsics;
use crate::error::{FusionError, Result};
use crate::gradfield::persp_loggradient_from_normals;
use crate::grids::{ConfidenceField, DomainMask, ScalarField, VectorField3};

/// Analytic scene geometry. Depth is in mm; normals follow the
/// camera-facing n_z > 0 convention.
#[derive(Debug, Clone)]
pub enum SceneSpec {
    Sphere { center: [f64; 3], radius: f64 },
    Plane { normal: [f64; 3], z0: f64 },
    Sinusoid { z0: f64, amplitude: f64, period: f64 },
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub depth_gt: ScalarField,
    pub normals_gt: VectorField3,
    pub mask: DomainMask,
    pub k: CameraIntrinsics,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DegradationSpec {
    /// Gaussian depth noise in mm (benchmark protocol: 1.0).
    pub depth_sigma: f64,
    /// Per-component Gaussian normal noise (benchmark protocol: 0.1).
    pub normal_sigma: f64,
    /// Target fraction of the object area turned into gaps (~0.25).
    pub gap_fraction: f64,
    /// Fraction of pixels randomly discarded to emulate SL resolution (0.5).
    pub discard_fraction: f64,
    /// Perlin lattice period in pixels.
    pub perlin_scale: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn benchmark_protocol(width: usize, seed: u64) -> Self {
        Self {
            depth_sigma: 1.0,
            normal_sigma: 0.1,
            gap_fraction: 0.25,
            discard_fraction: 0.5,
            perlin_scale: width as f64 / 8.0,
            seed,
        }
    }

    /// No noise, no gaps, no discard.
    pub fn identity(width: usize, seed: u64) -> Self {
        Self {
            depth_sigma: 0.0,
            normal_sigma: 0.0,
            gap_fraction: 0.0,
            discard_fraction: 0.0,
            perlin_scale: width as f64 / 8.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = (0.0..=1.0).contains(&self.gap_fraction)
            && (0.0..=1.0).contains(&self.discard_fraction);
        if !frac_ok || self.depth_sigma < 0.0 || self.normal_sigma < 0.0 {
            return Err(FusionError::InvalidParams(
                "degradation fractions must lie in [0,1] and sigmas be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub fn make_scene(
    spec: &SceneSpec,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<Scene> {
    let mut depth = ScalarField::constant(width, height, f64::NAN);
    let mut normals = VectorField3::zeros(width, height);
    let mut mask = DomainMask::empty(width, height);

    match *spec {
        SceneSpec::Sphere { center, radius } => {
            if center[2] <= radius {
                return Err(FusionError::InvalidParams(
                    "sphere must lie entirely in front of the camera".into(),
                ));
            }
            for v in 0..height {
                for u in 0..width {
                    let dir = [(u as f64 - k.cu) / k.f, (v as f64 - k.cv) / k.f, 1.0];
                    let a = dir[0] * dir[0] + dir[1] * dir[1] + 1.0;
                    let b = dir[0] * center[0] + dir[1] * center[1] + center[2];
                    let c = center[0] * center[0]
                        + center[1] * center[1]
                        + center[2] * center[2]
                        - radius * radius;
                    let disc = b * b - a * c;
                    if disc <= 0.0 {
                        continue;
                    }
                    let t = (b - disc.sqrt()) / a;
                    if t <= 0.0 {
                        continue;
                    }
                    let s = [t * dir[0], t * dir[1], t];
                    depth.set(u, v, t);
                    // camera-facing normal (n_z > 0 convention)
                    normals.set(
                        u,
                        v,
                        normalize3([
                            (center[0] - s[0]) / radius,
                            (center[1] - s[1]) / radius,
                            (center[2] - s[2]) / radius,
                        ]),
                    );
                    mask.set(u, v, true);
                }
            }
        }
        SceneSpec::Plane { normal, z0 } => {
            let n = normalize3(normal);
            if n[2] <= 0.0 {
                return Err(FusionError::InvalidParams(
                    "plane normal must have n_z > 0".into(),
                ));
            }
            for v in 0..height {
                for u in 0..width {
                    let dir = [(u as f64 - k.cu) / k.f, (v as f64 - k.cv) / k.f, 1.0];
                    let denom = n[0] * dir[0] + n[1] * dir[1] + n[2];
                    if denom <= 1e-9 {
                        continue; // plane edge-on or behind for this ray
                    }
                    let t = n[2] * z0 / denom;
                    if t <= 0.0 {
                        continue;
                    }
                    depth.set(u, v, t);
                    normals.set(u, v, n);
                    mask.set(u, v, true);
                }
            }
        }
        SceneSpec::Sinusoid {
            z0,
            amplitude,
            period,
        } => {
            if z0 - amplitude <= 0.0 {
                return Err(FusionError::InvalidParams(
                    "sinusoid must keep z > 0 everywhere".into(),
                ));
            }
            let omega = 2.0 * std::f64::consts::PI / period;
            for v in 0..height {
                for u in 0..width {
                    let (su, sv) = (u as f64, v as f64);
                    let d = z0 + amplitude * (omega * su).sin() * (omega * sv).sin();
                    let du = amplitude * omega * (omega * su).cos() * (omega * sv).sin();
                    let dv = amplitude * omega * (omega * su).sin() * (omega * sv).cos();
                    let (uu, vv) = (su - k.cu, sv - k.cv);
                    // exact perspective tangents
                    let tu = [(uu * du + d) / k.f, vv * du / k.f, du];
                    let tv = [uu * dv / k.f, (vv * dv + d) / k.f, dv];
                    let mut n = [
                        tu[1] * tv[2] - tu[2] * tv[1],
                        tu[2] * tv[0] - tu[0] * tv[2],
                        tu[0] * tv[1] - tu[1] * tv[0],
                    ];
                    if n[2] < 0.0 {
                        for c in &mut n {
                            *c = -*c;
                        }
                    }
                    depth.set(u, v, d);
                    normals.set(u, v, normalize3(n));
                    mask.set(u, v, true);
                }
            }
        }
    }

    if mask.is_empty() {
        return Err(FusionError::Degenerate {
            msg: "scene projects entirely off-frame".into(),
        });
    }

    let scene = Scene {
        depth_gt: depth,
        normals_gt: normals,
        mask,
        k: *k,
    };
    scene.check_consistency()?;
    Ok(scene)
}

impl Scene {
    /// Median agreement between the analytic log-gradient (from normals)
    /// and forward differences of ln depth. Guards against sign or
    /// convention mistakes at construction; first-order stencil accuracy
    /// only, so the threshold is loose.
    fn check_consistency(&self) -> Result<()> {
        let g = persp_loggradient_from_normals(&self.normals_gt, &self.mask, &self.k);
        let (w, h) = (self.mask.width(), self.mask.height());
        let mut errs = Vec::new();
        let mut mags = Vec::new();
        for v in 0..h {
            for u in 0..w {
                if u + 1 >= w || v + 1 >= h {
                    continue;
                }
                if !(self.mask.get(u, v)
                    && self.mask.get(u + 1, v)
                    && self.mask.get(u, v + 1)
                    && g.valid.get(u, v))
                {
                    continue;
                }
                let l = self.depth_gt.get(u, v).ln();
                let fd = [
                    self.depth_gt.get(u + 1, v).ln() - l,
                    self.depth_gt.get(u, v + 1).ln() - l,
                ];
                let gt = g.values.get(u, v);
                errs.push(((fd[0] - gt[0]).powi(2) + (fd[1] - gt[1]).powi(2)).sqrt());
                mags.push((gt[0] * gt[0] + gt[1] * gt[1]).sqrt());
            }
        }
        if errs.is_empty() {
            return Ok(());
        }
        let median = |xs: &mut Vec<f64>| {
            xs.sort_by(|a, b| a.total_cmp(b));
            xs[xs.len() / 2]
        };
        let med_err = median(&mut errs);
        let med_mag = median(&mut mags);
        if med_err > 0.5 * med_mag + 1e-4 {
            return Err(FusionError::Degenerate {
                msg: format!(
                    "scene normals inconsistent with depth: median log-gradient error {:.3e} \
                     vs magnitude {:.3e}",
                    med_err, med_mag
                ),
            });
        }
        Ok(())
    }

    pub fn mean_depth(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, &m) in self.mask.bits().iter().enumerate() {
            if m {
                sum += self.depth_gt.values()[i];
                count += 1;
            }
        }
        sum / count as f64
    }
}

/// Classic 2-D lattice gradient noise: seeded permutation of 256 unit
/// gradients, quintic fade, bilinear blend. Values are deterministic in
/// (seed, scale, size) and exactly 0 at integer lattice points.
pub struct PerlinNoise {
    perm: [u8; 256],
    grads: [[f64; 2]; 256],
}

impl PerlinNoise {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm = [0u8; 256];
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i as u8;
        }
        for i in (1..256).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let mut grads = [[0.0; 2]; 256];
        for g in &mut grads {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            *g = [theta.cos(), theta.sin()];
        }
        Self { perm, grads }
    }

    fn grad_at(&self, ix: i64, iy: i64) -> [f64; 2] {
        let a = self.perm[(ix & 255) as usize] as usize;
        let b = self.perm[(a + (iy & 255) as usize) & 255] as usize;
        self.grads[b]
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);

        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let dot = |gx: i64, gy: i64, dx: f64, dy: f64| {
            let g = self.grad_at(gx, gy);
            g[0] * dx + g[1] * dy
        };
        let n00 = dot(ix, iy, fx, fy);
        let n10 = dot(ix + 1, iy, fx - 1.0, fy);
        let n01 = dot(ix, iy + 1, fx, fy - 1.0);
        let n11 = dot(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
        let (sx, sy) = (fade(fx), fade(fy));
        let nx0 = n00 + sx * (n10 - n00);
        let nx1 = n01 + sx * (n11 - n01);
        nx0 + sy * (nx1 - nx0)
    }
}

/// Samples a Perlin field over a pixel grid with the given lattice
/// period in pixels.
pub fn perlin(width: usize, height: usize, scale: f64, seed: u64) -> Result<ScalarField> {
    if scale < 2.0 {
        return Err(FusionError::InvalidParams(format!(
            "perlin scale must be at least 2 pixels, got {}",
            scale
        )));
    }
    let noise = PerlinNoise::new(seed);
    let mut out = ScalarField::constant(width, height, 0.0);
    for v in 0..height {
        for u in 0..width {
            out.set(u, v, noise.value(u as f64 / scale, v as f64 / scale));
        }
    }
    Ok(out)
}

/// Bisection for the threshold whose above-fraction matches the target
/// within ±0.02 on the mask. Target 0 returns a threshold above the
/// field maximum.
pub fn calibrate_gap_threshold(
    noise: &ScalarField,
    mask: &DomainMask,
    target_fraction: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&target_fraction) {
        return Err(FusionError::InvalidParams(format!(
            "gap target fraction must lie in [0, 1), got {}",
            target_fraction
        )));
    }
    let total = mask.count();
    if total == 0 {
        return Err(FusionError::Degenerate {
            msg: "empty mask in gap calibration".into(),
        });
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &m) in mask.bits().iter().enumerate() {
        if m {
            lo = lo.min(noise.values()[i]);
            hi = hi.max(noise.values()[i]);
        }
    }
    if target_fraction == 0.0 {
        return Ok(hi + 1.0);
    }
    let fraction_above = |t: f64| {
        let above = mask
            .bits()
            .iter()
            .enumerate()
            .filter(|&(i, &m)| m && noise.values()[i] > t)
            .count();
        above as f64 / total as f64
    };
    let (mut a, mut b) = (lo - 1e-9, hi + 1e-9);
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        if fraction_above(mid) > target_fraction {
            a = mid;
        } else {
            b = mid;
        }
    }
    let t = 0.5 * (a + b);
    let achieved = fraction_above(t);
    if (achieved - target_fraction).abs() > 0.02 {
        return Err(FusionError::Degenerate {
            msg: format!(
                "gap threshold unreachable: target {} best achievable {}",
                target_fraction, achieved
            ),
        });
    }
    Ok(t)
}

/// Degraded observation of a scene: low-confidence depth with gaps and
/// noise, plus full-resolution noisy normals.
#[derive(Debug, Clone)]
pub struct DegradedInputs {
    pub d_obs: ScalarField,
    pub kappa: ConfidenceField,
    pub n_obs: VectorField3,
    /// Fraction of the mask with κ = 0 after discard and gaps.
    pub missing_fraction: f64,
}

pub fn degrade(scene: &Scene, spec: &DegradationSpec) -> Result<DegradedInputs> {
    spec.validate()?;
    let (w, h) = (scene.mask.width(), scene.mask.height());
    let mut kappa = ScalarField::constant(w, h, 0.0);
    let mut d_obs = scene.depth_gt.clone();
    let mut n_obs = scene.normals_gt.clone();

    // independent streams so the gap pattern does not shift the noise
    let mut rng_discard = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rng_depth = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e3779b97f4a7c15);
    let mut rng_normal = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6a09e667f3bcc908);

    for (i, &m) in scene.mask.bits().iter().enumerate() {
        let keep = !rng_discard.gen_bool(spec.discard_fraction);
        if m && keep {
            kappa.values_mut()[i] = 1.0;
        }
    }

    if spec.gap_fraction > 0.0 {
        let noise = perlin(w, h, spec.perlin_scale, spec.seed ^ 0xbb67ae8584caa73b)?;
        let threshold = calibrate_gap_threshold(&noise, &scene.mask, spec.gap_fraction)?;
        for (i, &m) in scene.mask.bits().iter().enumerate() {
            if m && noise.values()[i] > threshold {
                kappa.values_mut()[i] = 0.0;
            }
        }
    }

    let depth_noise = Normal::new(0.0, spec.depth_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let normal_noise = Normal::new(0.0, spec.normal_sigma.max(f64::MIN_POSITIVE)).unwrap();
    for (i, &m) in scene.mask.bits().iter().enumerate() {
        if !m {
            continue;
        }
        if spec.depth_sigma > 0.0 && kappa.values()[i] > 0.0 {
            d_obs.values_mut()[i] += depth_noise.sample(&mut rng_depth);
        }
        if spec.normal_sigma > 0.0 {
            let mut n = n_obs.values()[i];
            for c in &mut n {
                *c += normal_noise.sample(&mut rng_normal);
            }
            n_obs.values_mut()[i] = normalize3(n);
        }
    }

    let missing = scene
        .mask
        .bits()
        .iter()
        .enumerate()
        .filter(|&(i, &m)| m && kappa.values()[i] == 0.0)
        .count();
    let missing_fraction = missing as f64 / scene.mask.count() as f64;

    Ok(DegradedInputs {
        d_obs,
        kappa: ConfidenceField::new(kappa)?,
        n_obs,
        missing_fraction,
    })
}

/// Builds a unit normal map whose perspective log-gradient reproduces the
/// *discrete* forward differences of `ln depth` exactly, rather than the
/// continuous surface gradient. Analytic normals only match the difference
/// operator up to discretization error; solver limit tests need inputs
/// without that gap. Falls back to the backward difference at mask edges,
/// where the forward stencil is dropped by the operator anyway.
pub fn discretely_consistent_normals(
    depth: &ScalarField,
    mask: &DomainMask,
    k: &CameraIntrinsics,
) -> Result<VectorField3> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = VectorField3::zeros(w, h);
    for v in 0..h {
        for u in 0..w {
            if !mask.get(u, v) {
                continue;
            }
            let d = depth.get(u, v);
            if !(d > 0.0) {
                return Err(FusionError::Domain {
                    u,
                    v,
                    msg: format!("non-positive depth {}", d),
                });
            }
            let l = d.ln();
            let a = if u + 1 < w && mask.get(u + 1, v) {
                depth.get(u + 1, v).ln() - l
            } else if u > 0 && mask.get(u - 1, v) {
                l - depth.get(u - 1, v).ln()
            } else {
                0.0
            };
            let b = if v + 1 < h && mask.get(u, v + 1) {
                depth.get(u, v + 1).ln() - l
            } else if v > 0 && mask.get(u, v - 1) {
                l - depth.get(u, v - 1).ln()
            } else {
                0.0
            };
            // invert g = -(n_x, n_y) / ((u-cu) n_x + (v-cv) n_y + f n_z):
            // with n ∝ (-a t, -b t, 1), t = f / (1 + (u-cu) a + (v-cv) b)
            let denom = 1.0 + (u as f64 - k.cu) * a + (v as f64 - k.cv) * b;
            if denom <= 0.0 {
                return Err(FusionError::Degenerate {
                    msg: format!("log-gradient too steep for a front-facing normal at ({}, {})", u, v),
                });
            }
            let t = k.f / denom;
            let n = [-a * t, -b * t, 1.0];
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            out.set(u, v, [n[0] / norm, n[1] / norm, n[2] / norm]);
        }
    }
    Ok(out)
}
