//! The four end-to-end fusion methods: Ortho, Naive, PG and PTGV.
//!
//! PG and PTGV follow the log-depth recipe: transform observed depth to
//! log-depth, convert normals to the perspective log-gradient field, run
//! the orthographic engine (least squares or TGV), exponentiate.

use crate::camera::{back_project, CameraIntrinsics};
use crate::error::{FusionError, Result};
use crate::gradfield::{
    ortho_gradient_from_normals, persp_loggradient_from_normals, DifferenceOperator,
};
use crate::grids::{ConfidenceField, DomainMask, ScalarField, VectorField3};
use crate::solver_ls::{fuse_ls, LsParams};
use crate::solver_tgv::{fuse_tgv, TgvParams};

/// The fusion method under comparison, with its solver parameters.
#[derive(Debug, Clone)]
pub enum FusionMethod {
    Ortho(LsParams),
    Naive(LsParams),
    Pg(LsParams),
    Ptgv(TgvParams),
}

impl FusionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FusionMethod::Ortho(_) => "Ortho",
            FusionMethod::Naive(_) => "Naive",
            FusionMethod::Pg(_) => "PG",
            FusionMethod::Ptgv(_) => "PTGV",
        }
    }

    /// Whether the method consumes camera intrinsics.
    pub fn needs_camera(&self) -> bool {
        !matches!(self, FusionMethod::Ortho(_))
    }
}

/// Fused depth plus solver diagnostics for the run manifest.
#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub depth: ScalarField,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Natural log of depth on the mask. κ = 0 pixels carry the mean of
/// ln d over κ > 0 pixels; their value never enters the objective but a
/// well-scaled placeholder keeps the warm start sane.
pub fn log_transform(
    d: &ScalarField,
    kappa: &ConfidenceField,
    mask: &DomainMask,
) -> Result<ScalarField> {
    let mut out = ScalarField::constant(d.width(), d.height(), 0.0);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &m) in mask.bits().iter().enumerate() {
        if !m || kappa.field().values()[i] <= 0.0 {
            continue;
        }
        let di = d.values()[i];
        if !(di > 0.0) {
            let w = d.width();
            return Err(FusionError::Domain {
                u: i % w,
                v: i / w,
                msg: format!("depth {} not positive at a confident pixel", di),
            });
        }
        let l = di.ln();
        out.values_mut()[i] = l;
        sum += l;
        count += 1;
    }
    if count == 0 {
        return Err(FusionError::Degenerate {
            msg: "no confident depth pixels to log-transform".into(),
        });
    }
    let placeholder = sum / count as f64;
    for (i, &m) in mask.bits().iter().enumerate() {
        if m && kappa.field().values()[i] <= 0.0 {
            out.values_mut()[i] = placeholder;
        }
    }
    Ok(out)
}

/// Inverse of [`log_transform`]: exponentiation on the mask.
pub fn exp_transform(l: &ScalarField, mask: &DomainMask) -> Result<ScalarField> {
    let mut out = ScalarField::constant(l.width(), l.height(), 0.0);
    for (i, &m) in mask.bits().iter().enumerate() {
        if !m {
            continue;
        }
        let li = l.values()[i];
        if li > 700.0 {
            let w = l.width();
            return Err(FusionError::Domain {
                u: i % w,
                v: i / w,
                msg: format!("log-depth {} overflows exp", li),
            });
        }
        out.values_mut()[i] = li.exp();
    }
    Ok(out)
}

/// Sub-domain the solver can determine: connected components of the
/// gradient-restricted grid that contain at least one κ > 0 pixel.
/// Dropping unreliable gradients (grazing normals near silhouettes) can
/// cut small regions off from every depth observation; those pixels
/// carry no data at all and are filled from the nearest solved pixel
/// after the solve.
fn solvable_submask(
    g_valid: &DomainMask,
    kappa: &ConfidenceField,
    mask: &DomainMask,
) -> (DomainMask, bool) {
    let d = DifferenceOperator::new(mask).restricted(g_valid);
    let (labels, count) = d.components(mask);
    let mut anchored = vec![false; count];
    for (i, &m) in mask.bits().iter().enumerate() {
        if m && kappa.field().values()[i] > 0.0 {
            anchored[labels[i]] = true;
        }
    }
    let w = mask.width();
    let mut sub = mask.clone();
    let mut orphans = false;
    for (i, &m) in mask.bits().iter().enumerate() {
        if m && !anchored[labels[i]] {
            sub.set(i % w, i / w, false);
            orphans = true;
        }
    }
    (sub, orphans)
}

/// Overwrites mask pixels outside `sub` with the value of their nearest
/// solved pixel (BFS over the full grid, so detached islands still fill).
fn fill_orphans(field: &mut ScalarField, sub: &DomainMask, mask: &DomainMask) {
    let (w, h) = (field.width(), field.height());
    let mut tmp = field.values().to_vec();
    let all = vec![true; w * h];
    nearest_fill(&mut tmp, sub.bits(), &all, w, h);
    for i in 0..w * h {
        if mask.bits()[i] && !sub.bits()[i] {
            field.values_mut()[i] = tmp[i];
        }
    }
}

/// Perspective gradient-based fusion (PG): Algorithm with the
/// least-squares engine.
pub fn fuse_pg(
    d_obs: &ScalarField,
    n_obs: &VectorField3,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    k: &CameraIntrinsics,
    params: &LsParams,
) -> Result<FusionOutput> {
    let l_obs = log_transform(d_obs, kappa, mask)?;
    let g = persp_loggradient_from_normals(n_obs, mask, k);
    let (sub, orphans) = solvable_submask(&g.valid, kappa, mask);
    let d = DifferenceOperator::new(&sub);
    let sol = fuse_ls(&l_obs, &g, kappa, &sub, &d, params)?;
    let mut l = sol.field;
    if orphans {
        fill_orphans(&mut l, &sub, mask);
    }
    Ok(FusionOutput {
        depth: exp_transform(&l, mask)?,
        iterations: sol.iterations,
        residual: sol.residual,
        converged: true,
    })
}

/// Perspective TGV fusion (PTGV): same transforms with the TGV engine.
pub fn fuse_ptgv(
    d_obs: &ScalarField,
    n_obs: &VectorField3,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    k: &CameraIntrinsics,
    params: &TgvParams,
) -> Result<FusionOutput> {
    let l_obs = log_transform(d_obs, kappa, mask)?;
    let g = persp_loggradient_from_normals(n_obs, mask, k);
    let (sub, orphans) = solvable_submask(&g.valid, kappa, mask);
    let d = DifferenceOperator::new(&sub);
    let sol = fuse_tgv(&l_obs, &g, kappa, &sub, &d, params)?;
    let mut l = sol.x;
    if orphans {
        fill_orphans(&mut l, &sub, mask);
    }
    Ok(FusionOutput {
        depth: exp_transform(&l, mask)?,
        iterations: sol.iterations,
        residual: 0.0,
        converged: sol.converged,
    })
}

/// Pure orthographic fusion applied directly to perspective depth:
/// no log transform, no camera model.
pub fn fuse_ortho_direct(
    d_obs: &ScalarField,
    n_obs: &VectorField3,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    params: &LsParams,
) -> Result<FusionOutput> {
    let g = ortho_gradient_from_normals(n_obs, mask);
    let (sub, orphans) = solvable_submask(&g.valid, kappa, mask);
    let d = DifferenceOperator::new(&sub);
    let sol = fuse_ls(d_obs, &g, kappa, &sub, &d, params)?;
    let mut depth = sol.field;
    if orphans {
        fill_orphans(&mut depth, &sub, mask);
    }
    Ok(FusionOutput {
        depth,
        iterations: sol.iterations,
        residual: sol.residual,
        converged: true,
    })
}

/// Grazing cutoff for the resampled normals of the naive baseline's
/// orthographic stage (the splat averaging changes the noise floor, so
/// this is tuned separately from the perspective cutoff).
const NAIVE_GRAZING_COS_MIN: f64 = 0.15;

/// Bilinear splat accumulator over a w×h grid.
struct Splat {
    w: usize,
    h: usize,
    weight: Vec<f64>,
    depth: Vec<f64>,
    normal: Vec<[f64; 3]>,
}

impl Splat {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            weight: vec![0.0; w * h],
            depth: vec![0.0; w * h],
            normal: vec![[0.0; 3]; w * h],
        }
    }

    fn add(&mut self, gx: f64, gy: f64, z: f64, n: Option<[f64; 3]>) {
        let x0 = gx.floor() as i64;
        let y0 = gy.floor() as i64;
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        for (dx, dy, wgt) in [
            (0i64, 0i64, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (x, y) = (x0 + dx, y0 + dy);
            if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 || wgt == 0.0 {
                continue;
            }
            let i = y as usize * self.w + x as usize;
            self.weight[i] += wgt;
            self.depth[i] += wgt * z;
            if let Some(n) = n {
                for c in 0..3 {
                    self.normal[i][c] += wgt * n[c];
                }
            }
        }
    }
}

/// Multi-source BFS nearest-valid-neighbor fill of `values` inside
/// `region`, seeded from `valid` pixels.
fn nearest_fill(values: &mut [f64], valid: &[bool], region: &[bool], w: usize, h: usize) {
    let mut dist = vec![usize::MAX; w * h];
    let mut queue = std::collections::VecDeque::new();
    for i in 0..w * h {
        if valid[i] && region[i] {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (u, v) = (i % w, i / w);
        let neighbors = [
            (u > 0).then(|| i - 1),
            (u + 1 < w).then(|| i + 1),
            (v > 0).then(|| i - w),
            (v + 1 < h).then(|| i + w),
        ];
        for j in neighbors.into_iter().flatten() {
            if region[j] && dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                values[j] = values[i];
                queue.push_back(j);
            }
        }
    }
}

fn nearest_fill_normals(
    normals: &mut [[f64; 3]],
    valid: &[bool],
    region: &[bool],
    w: usize,
    h: usize,
) {
    let mut dist = vec![usize::MAX; w * h];
    let mut queue = std::collections::VecDeque::new();
    for i in 0..w * h {
        if valid[i] && region[i] {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (u, v) = (i % w, i / w);
        let neighbors = [
            (u > 0).then(|| i - 1),
            (u + 1 < w).then(|| i + 1),
            (v > 0).then(|| i - w),
            (v + 1 < h).then(|| i + w),
        ];
        for j in neighbors.into_iter().flatten() {
            if region[j] && dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                normals[j] = normals[i];
                queue.push_back(j);
            }
        }
    }
}

/// Naive reprojection baseline: back-project the confident depth pixels,
/// splat them (and their normals) onto an axis-aligned orthographic grid,
/// fuse there orthographically, then reproject the fused orthographic
/// surface back onto the original pixel grid.
pub fn fuse_naive(
    d_obs: &ScalarField,
    n_obs: &VectorField3,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    k: &CameraIntrinsics,
    params: &LsParams,
) -> Result<FusionOutput> {
    let (w, h) = (d_obs.width(), d_obs.height());

    let mut confident = DomainMask::empty(w, h);
    for (i, &m) in mask.bits().iter().enumerate() {
        if m && kappa.field().values()[i] > 0.0 {
            confident.set(i % w, i / w, true);
        }
    }
    let cloud = back_project(d_obs, &confident, k)?;
    if cloud.points.len() < 2 {
        return Err(FusionError::Degenerate {
            msg: format!(
                "naive baseline needs at least 2 confident depth pixels, got {}",
                cloud.points.len()
            ),
        });
    }

    // (b) orthographic grid over the cloud's x/y bounding box, same pixel count
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &cloud.points {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    if !(xmax > xmin) || !(ymax > ymin) {
        return Err(FusionError::Degenerate {
            msg: "degenerate point cloud: zero-area bounding box".into(),
        });
    }
    let pitch_x = (xmax - xmin) / (w - 1) as f64;
    let pitch_y = (ymax - ymin) / (h - 1) as f64;

    let mut splat = Splat::new(w, h);
    for p in &cloud.points {
        let gx = (p.x - xmin) / pitch_x;
        let gy = (p.y - ymin) / pitch_y;
        splat.add(gx, gy, p.z, Some(n_obs.get(p.u, p.v)));
    }

    const MIN_WEIGHT: f64 = 1e-9;
    let full: Vec<bool> = vec![true; w * h];
    let mut z_ortho = vec![0.0f64; w * h];
    let mut n_ortho = vec![[0.0f64; 3]; w * h];
    let mut hit = vec![false; w * h];
    for i in 0..w * h {
        if splat.weight[i] > MIN_WEIGHT {
            z_ortho[i] = splat.depth[i] / splat.weight[i];
            let n = splat.normal[i];
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if norm > MIN_WEIGHT {
                n_ortho[i] = [n[0] / norm, n[1] / norm, n[2] / norm];
                hit[i] = true;
            }
        }
    }
    // (d) splat holes: nearest-valid fill, confidence 0
    nearest_fill(&mut z_ortho, &hit, &full, w, h);
    nearest_fill_normals(&mut n_ortho, &hit, &full, w, h);

    let ortho_mask = DomainMask::full(w, h);
    let z_field = ScalarField::new(w, h, z_ortho)?;
    let n_field = VectorField3::new(w, h, n_ortho)?;
    let kappa_ortho = ConfidenceField::new(ScalarField::new(
        w,
        h,
        hit.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )?)?;

    // (e) orthographic fusion; unit grid spacing is pitch mm, so the
    // metric slope scales by the pitch per axis. Resampled normals near
    // the silhouette are dominated by noise; drop grazing ones.
    let mut g = ortho_gradient_from_normals(&n_field, &ortho_mask);
    for v in 0..h {
        for u in 0..w {
            if n_field.get(u, v)[2] < NAIVE_GRAZING_COS_MIN {
                g.valid.set(u, v, false);
            }
        }
    }
    for val in g.values.values_mut() {
        val[0] *= pitch_x;
        val[1] *= pitch_y;
    }
    let (sub, orphans) = solvable_submask(&g.valid, &kappa_ortho, &ortho_mask);
    let d_op = DifferenceOperator::new(&sub);
    let sol = fuse_ls(&z_field, &g, &kappa_ortho, &sub, &d_op, params)?;
    let mut fused_z = sol.field;
    if orphans {
        fill_orphans(&mut fused_z, &sub, &ortho_mask);
    }

    // (f) reproject the fused orthographic surface to the pixel grid
    let mut back = Splat::new(w, h);
    for i in 0..w * h {
        let (gu, gv) = (i % w, i / w);
        let x = xmin + gu as f64 * pitch_x;
        let y = ymin + gv as f64 * pitch_y;
        let z = fused_z.values()[i];
        if !(z > 0.0) {
            continue;
        }
        let uv = k.project([x, y, z]);
        back.add(uv[0], uv[1], z, None);
    }
    let mut depth = vec![0.0f64; w * h];
    let mut filled = vec![false; w * h];
    for i in 0..w * h {
        if back.weight[i] > MIN_WEIGHT {
            depth[i] = back.depth[i] / back.weight[i];
            filled[i] = true;
        }
    }
    nearest_fill(&mut depth, &filled, mask.bits(), w, h);
    // zero anything that never received a value (fully disconnected mask parts)
    let mut out = ScalarField::new(w, h, depth)?;
    for (i, &m) in mask.bits().iter().enumerate() {
        if !m {
            out.values_mut()[i] = 0.0;
        }
    }

    Ok(FusionOutput {
        depth: out,
        iterations: sol.iterations,
        residual: sol.residual,
        converged: true,
    })
}

/// Dispatch on the method enum; `k` may be None only for Ortho.
pub fn fuse_with_method(
    method: &FusionMethod,
    d_obs: &ScalarField,
    n_obs: &VectorField3,
    kappa: &ConfidenceField,
    mask: &DomainMask,
    k: Option<&CameraIntrinsics>,
) -> Result<FusionOutput> {
    let need_k = || {
        k.ok_or_else(|| {
            FusionError::InvalidParams(format!(
                "method {} requires camera intrinsics",
                method.name()
            ))
        })
    };
    match method {
        FusionMethod::Ortho(p) => fuse_ortho_direct(d_obs, n_obs, kappa, mask, p),
        FusionMethod::Naive(p) => fuse_naive(d_obs, n_obs, kappa, mask, need_k()?, p),
        FusionMethod::Pg(p) => fuse_pg(d_obs, n_obs, kappa, mask, need_k()?, p),
        FusionMethod::Ptgv(p) => fuse_ptgv(d_obs, n_obs, kappa, mask, need_k()?, p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{
        degrade, discretely_consistent_normals, make_scene, DegradationSpec, SceneSpec,
    };

    fn camera(size: usize, f: f64) -> CameraIntrinsics {
        let c = (size as f64 - 1.0) / 2.0;
        CameraIntrinsics::new(f, c, c).unwrap()
    }

    fn sphere_scene(size: usize, f: f64, radius: f64) -> crate::synth::Scene {
        make_scene(
            &SceneSpec::Sphere {
                center: [0.0, 0.0, 1000.0],
                radius,
            },
            &camera(size, f),
            size,
            size,
        )
        .unwrap()
    }

    fn rmse_on(
        a: &ScalarField,
        b: &ScalarField,
        mask: &DomainMask,
    ) -> f64 {
        crate::metrics::rmse(a, b, mask).unwrap()
    }

    #[test]
    fn log_exp_roundtrip() {
        let mask = DomainMask::full(4, 4);
        let kappa = ConfidenceField::uniform(4, 4, 1.0).unwrap();
        let mut d = ScalarField::constant(4, 4, 1.0);
        d.set(1, 0, std::f64::consts::E);
        d.set(2, 0, 1234.5);
        let l = log_transform(&d, &kappa, &mask).unwrap();
        assert_eq!(l.get(0, 0), 0.0);
        assert!((l.get(1, 0) - 1.0).abs() < 1e-15);
        let back = exp_transform(&l, &mask).unwrap();
        for (a, b) in back.values().iter().zip(d.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn log_transform_rejects_nonpositive_confident_depth() {
        let mask = DomainMask::full(2, 2);
        let kappa = ConfidenceField::uniform(2, 2, 1.0).unwrap();
        let mut d = ScalarField::constant(2, 2, 1.0);
        d.set(1, 1, -2.0);
        assert!(matches!(
            log_transform(&d, &kappa, &mask),
            Err(FusionError::Domain { u: 1, v: 1, .. })
        ));
    }

    #[test]
    fn exp_transform_rejects_overflow() {
        let mask = DomainMask::full(1, 1);
        let l = ScalarField::constant(1, 1, 800.0);
        assert!(exp_transform(&l, &mask).is_err());
    }

    #[test]
    fn pg_beta_zero_returns_observation() {
        let scene = sphere_scene(64, 300.0, 150.0);
        let kappa = ConfidenceField::new(scene.mask.to_indicator()).unwrap();
        let params = LsParams {
            beta: 0.0,
            ..Default::default()
        };
        let out = fuse_pg(
            &scene.depth_gt,
            &scene.normals_gt,
            &kappa,
            &scene.mask,
            &scene.k,
            &params,
        )
        .unwrap();
        for (i, &m) in scene.mask.bits().iter().enumerate() {
            if m {
                let (a, b) = (out.depth.values()[i], scene.depth_gt.values()[i]);
                assert!((a - b).abs() < 1e-9 * b);
            }
        }
    }

    #[test]
    fn pg_noiseless_consistency() {
        let scene = sphere_scene(128, 600.0, 180.0);
        let kappa = ConfidenceField::new(scene.mask.to_indicator()).unwrap();
        let out = fuse_pg(
            &scene.depth_gt,
            &scene.normals_gt,
            &kappa,
            &scene.mask,
            &scene.k,
            &LsParams::default(),
        )
        .unwrap();
        let err = rmse_on(&out.depth, &scene.depth_gt, &scene.mask);
        assert!(
            err < 0.001 * scene.mean_depth(),
            "rmse {} vs mean depth {}",
            err,
            scene.mean_depth()
        );
    }

    #[test]
    fn pg_scale_equivariance() {
        let scene = sphere_scene(64, 300.0, 150.0);
        let spec = DegradationSpec {
            depth_sigma: 0.5,
            normal_sigma: 0.05,
            gap_fraction: 0.2,
            discard_fraction: 0.3,
            perlin_scale: 8.0,
            seed: 4,
        };
        let obs = degrade(&scene, &spec).unwrap();
        let base = fuse_pg(
            &obs.d_obs,
            &obs.n_obs,
            &obs.kappa,
            &scene.mask,
            &scene.k,
            &LsParams::default(),
        )
        .unwrap();
        let c = 3.7;
        let mut scaled = obs.d_obs.clone();
        for v in scaled.values_mut() {
            *v *= c;
        }
        let out = fuse_pg(
            &scaled,
            &obs.n_obs,
            &obs.kappa,
            &scene.mask,
            &scene.k,
            &LsParams::default(),
        )
        .unwrap();
        for (i, &m) in scene.mask.bits().iter().enumerate() {
            if m {
                let (a, b) = (out.depth.values()[i], c * base.depth.values()[i]);
                assert!((a - b).abs() < 1e-6 * b, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn ortho_beta_zero_returns_observation() {
        let scene = sphere_scene(64, 300.0, 150.0);
        let kappa = ConfidenceField::new(scene.mask.to_indicator()).unwrap();
        let params = LsParams {
            beta: 0.0,
            ..Default::default()
        };
        let out = fuse_ortho_direct(
            &scene.depth_gt,
            &scene.normals_gt,
            &kappa,
            &scene.mask,
            &params,
        )
        .unwrap();
        for (i, &m) in scene.mask.bits().iter().enumerate() {
            if m {
                let (a, b) = (out.depth.values()[i], scene.depth_gt.values()[i]);
                assert!((a - b).abs() < 1e-8 * b);
            }
        }
    }

    #[test]
    fn naive_rejects_single_confident_pixel() {
        let scene = sphere_scene(32, 300.0, 150.0);
        let mut kfield = ScalarField::constant(32, 32, 0.0);
        kfield.set(16, 16, 1.0);
        let kappa = ConfidenceField::new(kfield).unwrap();
        let err = fuse_naive(
            &scene.depth_gt,
            &scene.normals_gt,
            &kappa,
            &scene.mask,
            &scene.k,
            &LsParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, FusionError::Degenerate { .. }));
    }

    #[test]
    fn naive_worse_than_pg_on_noisy_scene() {
        let scene = sphere_scene(96, 300.0, 160.0);
        let obs = degrade(&scene, &DegradationSpec::benchmark_protocol(96, 5)).unwrap();
        let pg = fuse_pg(
            &obs.d_obs,
            &obs.n_obs,
            &obs.kappa,
            &scene.mask,
            &scene.k,
            &LsParams::default(),
        )
        .unwrap();
        let naive = fuse_naive(
            &obs.d_obs,
            &obs.n_obs,
            &obs.kappa,
            &scene.mask,
            &scene.k,
            &LsParams::default(),
        )
        .unwrap();
        let e_pg = rmse_on(&pg.depth, &scene.depth_gt, &scene.mask);
        let e_naive = rmse_on(&naive.depth, &scene.depth_gt, &scene.mask);
        assert!(
            e_naive > e_pg,
            "naive {} should exceed pg {}",
            e_naive,
            e_pg
        );
    }

    #[test]
    fn ortho_approaches_pg_in_zero_fov_limit() {
        // tiny angular extent: long focal length, small sphere near axis
        let size = 64;
        let k = camera(size, 1e6);
        let scene = make_scene(
            &SceneSpec::Sphere {
                center: [0.0, 0.0, 1.0e6],
                radius: 25.0e3,
            },
            &k,
            size,
            size,
        )
        .unwrap();
        let kappa = ConfidenceField::new(scene.mask.to_indicator()).unwrap();
        let pg = fuse_pg(
            &scene.depth_gt,
            &scene.normals_gt,
            &kappa,
            &scene.mask,
            &k,
            &LsParams::default(),
        )
        .unwrap();
        let ortho = fuse_ortho_direct(
            &scene.depth_gt,
            &scene.normals_gt,
            &kappa,
            &scene.mask,
            &LsParams::default(),
        )
        .unwrap();
        for (i, &m) in scene.mask.bits().iter().enumerate() {
            if m {
                let (a, b) = (ortho.depth.values()[i], pg.depth.values()[i]);
                assert!(
                    (a - b).abs() < 1e-3 * b,
                    "ortho {} vs pg {} at {}",
                    a,
                    b,
                    i
                );
            }
        }
    }

    #[test]
    fn ptgv_small_lambda_matches_pg() {
        let scene = sphere_scene(64, 300.0, 150.0);
        // analytic normals disagree with the forward-difference stencil by
        // O(h); the λ→0 limit comparison needs discretely consistent inputs
        let n_obs =
            discretely_consistent_normals(&scene.depth_gt, &scene.mask, &scene.k).unwrap();
        let kappa = ConfidenceField::new(scene.mask.to_indicator()).unwrap();
        let pg = fuse_pg(
            &scene.depth_gt,
            &n_obs,
            &kappa,
            &scene.mask,
            &scene.k,
            &LsParams::default(),
        )
        .unwrap();
        let ptgv = fuse_ptgv(
            &scene.depth_gt,
            &n_obs,
            &kappa,
            &scene.mask,
            &scene.k,
            &TgvParams {
                lambda0: 1e-6,
                lambda1: 1e-6,
                max_iter: 3000,
                ..Default::default()
            },
        )
        .unwrap();
        for (i, &m) in scene.mask.bits().iter().enumerate() {
            if m {
                let (a, b) = (ptgv.depth.values()[i], pg.depth.values()[i]);
                assert!((a - b).abs() < 1e-4 * b, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn ptgv_smooths_normals_better_than_pg_on_noisy_plane() {
        // quadratic gradient fitting transfers normal noise straight into
        // the surface; the TGV coupling should suppress it on a slanted plane
        let size = 96;
        let k = camera(size, 300.0);
        let scene = make_scene(
            &SceneSpec::Plane {
                normal: [0.35, 0.25, (1.0f64 - 0.35 * 0.35 - 0.25 * 0.25).sqrt()],
                z0: 1000.0,
            },
            &k,
            size,
            size,
        )
        .unwrap();
        let obs = degrade(&scene, &DegradationSpec::benchmark_protocol(size, 13)).unwrap();
        let pg = fuse_pg(
            &obs.d_obs,
            &obs.n_obs,
            &obs.kappa,
            &scene.mask,
            &k,
            &LsParams::default(),
        )
        .unwrap();
        let ptgv = fuse_ptgv(
            &obs.d_obs,
            &obs.n_obs,
            &obs.kappa,
            &scene.mask,
            &k,
            &TgvParams::default(),
        )
        .unwrap();
        let mae_pg = crate::metrics::mae_normals(&pg.depth, &scene.normals_gt, &k, &scene.mask)
            .unwrap()
            .mae;
        let mae_ptgv =
            crate::metrics::mae_normals(&ptgv.depth, &scene.normals_gt, &k, &scene.mask)
                .unwrap()
                .mae;
        assert!(
            mae_ptgv < mae_pg,
            "ptgv normal mae {} should beat pg {}",
            mae_ptgv,
            mae_pg
        );
    }

    #[test]
    fn all_methods_positive_depth_on_noisy_sphere() {
        let scene = sphere_scene(64, 300.0, 150.0);
        let obs = degrade(&scene, &DegradationSpec::benchmark_protocol(64, 21)).unwrap();
        let methods = [
            FusionMethod::Ortho(LsParams::default()),
            FusionMethod::Naive(LsParams::default()),
            FusionMethod::Pg(LsParams::default()),
            FusionMethod::Ptgv(TgvParams {
                max_iter: 500,
                ..Default::default()
            }),
        ];
        for method in &methods {
            let out = fuse_with_method(
                method,
                &obs.d_obs,
                &obs.n_obs,
                &obs.kappa,
                &scene.mask,
                Some(&scene.k),
            )
            .unwrap();
            for (i, &m) in scene.mask.bits().iter().enumerate() {
                if m {
                    assert!(
                        out.depth.values()[i] > 0.0,
                        "{} produced non-positive depth",
                        method.name()
                    );
                }
            }
        }
    }
}
