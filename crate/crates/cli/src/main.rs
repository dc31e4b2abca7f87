//! depthfuse: fuse perspective depth maps with surface normal maps.
//!
//! Subcommands: `synth` generates analytic benchmark scenes and their
//! degraded observations, `fuse` runs one fusion method on PFM inputs,
//! `eval` scores a fused map against ground truth, `bench` runs the full
//! scene×method grid and emits the benchmark CSV.
//!
//! Exit codes: 0 ok, 2 usage/config error, 3 I/O error, 4 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use depthfuse_core::camera::CameraIntrinsics;
use depthfuse_core::error::FusionError;
use depthfuse_core::grids::{mask_from_normals, ConfidenceField, DomainMask, ScalarField};
use depthfuse_core::metrics::{mae_normals, rmse, BenchmarkReport, MetricPair};
use depthfuse_core::pfm;
use depthfuse_core::pipeline::{fuse_with_method, FusionMethod};
use depthfuse_core::solver_ls::LsParams;
use depthfuse_core::solver_tgv::TgvParams;
use depthfuse_core::synth::{degrade, make_scene, DegradationSpec, Scene, SceneSpec};

#[derive(Parser)]
#[command(name = "depthfuse", version, about = "Perspective-aware depth-normal fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an analytic scene plus degraded observations.
    Synth(SynthArgs),
    /// Fuse a depth map with a normal map.
    Fuse(FuseArgs),
    /// Evaluate a fused depth map against ground truth.
    Eval(EvalArgs),
    /// Run the scene×method benchmark grid.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Sphere,
    Plane,
    Sinusoid,
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodKind {
    Ortho,
    Naive,
    Pg,
    Ptgv,
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MethodKind::Ortho => "ortho",
            MethodKind::Naive => "naive",
            MethodKind::Pg => "pg",
            MethodKind::Ptgv => "ptgv",
        })
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Depth-consistency weight.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Gradient-consistency weight.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// First-order TGV weight (PTGV only).
    #[arg(long, default_value_t = 0.001)]
    lambda0: f64,
    /// Second-order TGV weight (PTGV only).
    #[arg(long, default_value_t = 0.001)]
    lambda1: f64,
    #[arg(long, default_value_t = 1e-9)]
    cg_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    cg_max_iter: usize,
    /// Primal-dual iteration cap (PTGV only).
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    rel_change_tol: f64,
}

impl SolverArgs {
    fn ls(&self) -> LsParams {
        LsParams {
            alpha: self.alpha,
            beta: self.beta,
            cg_tol: self.cg_tol,
            cg_max_iter: self.cg_max_iter,
        }
    }

    fn tgv(&self) -> TgvParams {
        TgvParams {
            alpha: self.alpha,
            beta: self.beta,
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            max_iter: self.max_iter,
            rel_change_tol: self.rel_change_tol,
            cg_tol: self.cg_tol,
            cg_max_iter: self.cg_max_iter,
        }
    }

    fn method(&self, kind: MethodKind) -> FusionMethod {
        match kind {
            MethodKind::Ortho => FusionMethod::Ortho(self.ls()),
            MethodKind::Naive => FusionMethod::Naive(self.ls()),
            MethodKind::Pg => FusionMethod::Pg(self.ls()),
            MethodKind::Ptgv => FusionMethod::Ptgv(self.tgv()),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SceneKind::Sphere)]
    scene: SceneKind,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Focal length in pixels; defaults to 2.34·size (600 at 256).
    #[arg(long)]
    f: Option<f64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    depth_sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    normal_sigma: f64,
    #[arg(long, default_value_t = 0.25)]
    gap_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    discard_fraction: f64,
    /// Perlin lattice period in pixels; defaults to size/8.
    #[arg(long)]
    perlin_scale: Option<f64>,
    #[arg(long, default_value = "synth_out")]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long, value_enum)]
    method: MethodKind,
    /// Observed depth map (1-channel PFM, mm).
    #[arg(long)]
    depth: PathBuf,
    /// Observed normal map (3-channel PFM).
    #[arg(long)]
    normals: PathBuf,
    /// Confidence map (1-channel PFM in [0,1]); defaults to 1 on the mask.
    #[arg(long)]
    confidence: Option<PathBuf>,
    /// Domain mask PFM of {0,1}; defaults to unit-norm normal pixels.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Camera intrinsics JSON {"f":..,"cu":..,"cv":..}; required for
    /// naive/pg/ptgv.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "fused.pfm")]
    out: PathBuf,
    /// Run manifest path; defaults to <out>.manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    fused: PathBuf,
    #[arg(long)]
    depth_gt: PathBuf,
    #[arg(long)]
    normals_gt: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Evaluation mask; defaults to unit-norm pixels of the GT normals.
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Comma-separated subset of ortho,naive,pg,ptgv.
    #[arg(long, value_delimiter = ',', default_values_t = vec![
        MethodKind::Ortho, MethodKind::Naive, MethodKind::Pg, MethodKind::Ptgv
    ])]
    methods: Vec<MethodKind>,
    /// Comma-separated subset of sphere,plane,sinusoid.
    #[arg(long, value_delimiter = ',', default_values_t = vec![
        SceneKind::Sphere, SceneKind::Plane, SceneKind::Sinusoid
    ])]
    scenes: Vec<SceneKind>,
    #[arg(long, default_value_t = 1.0)]
    depth_sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    normal_sigma: f64,
    #[arg(long, default_value_t = 0.25)]
    gap_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    discard_fraction: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Long-format CSV (scene,method,rmse,mae) of externally computed
    /// baselines to merge as extra columns.
    #[arg(long)]
    external: Option<PathBuf>,
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
}

struct CliError {
    code: u8,
    msg: String,
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        let code = match &e {
            FusionError::Io { .. } | FusionError::PfmFormat { .. } => 3,
            FusionError::NonConvergence { .. }
            | FusionError::NumericalBreakdown { .. }
            | FusionError::Singular(_) => 4,
            _ => 2,
        };
        CliError {
            code,
            msg: e.to_string(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        msg: msg.into(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: 3,
        msg: format!("I/O error on {:?}: {}", path, e),
    }
}

impl SceneKind {
    fn name(self) -> &'static str {
        match self {
            SceneKind::Sphere => "sphere",
            SceneKind::Plane => "plane",
            SceneKind::Sinusoid => "sinusoid",
        }
    }

    fn build(self, size: usize, f: f64) -> Result<Scene, FusionError> {
        let c = (size as f64 - 1.0) / 2.0;
        let k = CameraIntrinsics::new(f, c, c)?;
        let spec = match self {
            // silhouette spans ~71% of the frame at the default focal length
            SceneKind::Sphere => SceneSpec::Sphere {
                center: [0.0, 0.0, 1000.0],
                radius: 150.0,
            },
            SceneKind::Plane => SceneSpec::Plane {
                normal: [0.35, 0.25, (1.0f64 - 0.35 * 0.35 - 0.25 * 0.25).sqrt()],
                z0: 1000.0,
            },
            SceneKind::Sinusoid => SceneSpec::Sinusoid {
                z0: 1000.0,
                amplitude: 15.0,
                period: size as f64 / 5.0,
            },
        };
        make_scene(&spec, &k, size, size)
    }
}

fn default_focal(size: usize) -> f64 {
    600.0 * size as f64 / 256.0
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap())
        .map_err(|e| io_err(path, e))
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let f = args.f.unwrap_or_else(|| default_focal(args.size));
    let scene = args.scene.build(args.size, f)?;
    let spec = DegradationSpec {
        depth_sigma: args.depth_sigma,
        normal_sigma: args.normal_sigma,
        gap_fraction: args.gap_fraction,
        discard_fraction: args.discard_fraction,
        perlin_scale: args.perlin_scale.unwrap_or(args.size as f64 / 8.0),
        seed: args.seed,
    };
    let obs = degrade(&scene, &spec)?;

    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let p = |name: &str| args.out.join(name);
    pfm::write_pfm_scalar(&scene.depth_gt, &p("depth_gt.pfm"))?;
    pfm::write_pfm_vector3(&scene.normals_gt, &p("normals_gt.pfm"))?;
    pfm::write_pfm_scalar(&scene.mask.to_indicator(), &p("mask.pfm"))?;
    scene.k.to_json_file(&p("camera.json"))?;
    pfm::write_pfm_scalar(&obs.d_obs, &p("d_obs.pfm"))?;
    pfm::write_pfm_scalar(obs.kappa.field(), &p("kappa.pfm"))?;
    pfm::write_pfm_vector3(&obs.n_obs, &p("n_obs.pfm"))?;

    let manifest = serde_json::json!({
        "scene": args.scene.name(),
        "size": args.size,
        "focal": f,
        "degradation": spec,
        "mask_pixels": scene.mask.count(),
        "missing_fraction": obs.missing_fraction,
    });
    write_json(&p("manifest.json"), &manifest)
}

struct FuseInputs {
    d_obs: ScalarField,
    n_obs: depthfuse_core::VectorField3,
    kappa: ConfidenceField,
    mask: DomainMask,
    camera: Option<CameraIntrinsics>,
}

fn load_fuse_inputs(args: &FuseArgs) -> Result<FuseInputs, CliError> {
    let d_obs = pfm::read_pfm_scalar(&args.depth)?;
    let mut n_obs = pfm::read_pfm_vector3(&args.normals)?;
    if n_obs.orient_nz_positive() {
        eprintln!("warning: normal map had majority n_z < 0; flipped globally");
    }
    let shape_of = |w: usize, h: usize| (w, h);
    let base = shape_of(d_obs.width(), d_obs.height());
    let check = |name: &str, shape: (usize, usize)| -> Result<(), CliError> {
        if shape != base {
            return Err(config_err(format!(
                "dimension mismatch: {} is {}x{} but depth is {}x{}",
                name, shape.0, shape.1, base.0, base.1
            )));
        }
        Ok(())
    };
    check("normals", (n_obs.width(), n_obs.height()))?;

    let mask = match &args.mask {
        Some(path) => {
            let f = pfm::read_pfm_scalar(path)?;
            check("mask", (f.width(), f.height()))?;
            DomainMask::from_indicator(&f)
        }
        None => mask_from_normals(&n_obs),
    };
    let kappa = match &args.confidence {
        Some(path) => {
            let f = pfm::read_pfm_scalar(path)?;
            check("confidence", (f.width(), f.height()))?;
            ConfidenceField::new(f)?
        }
        None => ConfidenceField::new(mask.to_indicator()).map_err(CliError::from)?,
    };
    let camera = match &args.camera {
        Some(path) => Some(CameraIntrinsics::from_json_file(path)?),
        None => None,
    };
    Ok(FuseInputs {
        d_obs,
        n_obs,
        kappa,
        mask,
        camera,
    })
}

fn cmd_fuse(args: &FuseArgs) -> Result<(), CliError> {
    let method = args.solver.method(args.method);
    let inputs = load_fuse_inputs(args)?;
    if method.needs_camera() && inputs.camera.is_none() {
        return Err(config_err(format!(
            "method {} requires --camera",
            method.name()
        )));
    }

    let start = Instant::now();
    let out = fuse_with_method(
        &method,
        &inputs.d_obs,
        &inputs.n_obs,
        &inputs.kappa,
        &inputs.mask,
        inputs.camera.as_ref(),
    )?;
    let wall = start.elapsed().as_secs_f64();
    if !out.converged {
        eprintln!("warning: solver hit the iteration cap before the tolerance");
    }

    pfm::write_pfm_scalar(&out.depth, &args.out)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.out.with_extension("manifest.json"));
    let params = match &method {
        FusionMethod::Ptgv(p) => serde_json::to_value(p).unwrap(),
        FusionMethod::Ortho(p) | FusionMethod::Naive(p) | FusionMethod::Pg(p) => {
            serde_json::to_value(p).unwrap()
        }
    };
    let manifest = serde_json::json!({
        "method": method.name(),
        "params": params,
        "inputs": {
            "depth": args.depth,
            "normals": args.normals,
            "confidence": args.confidence,
            "mask": args.mask,
            "camera": args.camera,
        },
        "iterations": out.iterations,
        "residual": out.residual,
        "converged": out.converged,
        "wall_time_s": wall,
    });
    write_json(&manifest_path, &manifest)
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let fused = pfm::read_pfm_scalar(&args.fused)?;
    let gt = pfm::read_pfm_scalar(&args.depth_gt)?;
    let n_gt = pfm::read_pfm_vector3(&args.normals_gt)?;
    let k = CameraIntrinsics::from_json_file(&args.camera)?;
    let mask = match &args.mask {
        Some(path) => DomainMask::from_indicator(&pfm::read_pfm_scalar(path)?),
        None => mask_from_normals(&n_gt),
    };
    let e_rmse = rmse(&fused, &gt, &mask)?;
    let e_mae = mae_normals(&fused, &n_gt, &k, &mask)?;
    println!("rmse_mm,mae_rad,mae_excluded_pixels");
    println!("{:.6},{:.6},{}", e_rmse, e_mae.mae, e_mae.excluded);
    Ok(())
}

fn method_label(kind: MethodKind) -> &'static str {
    match kind {
        MethodKind::Ortho => "Ortho",
        MethodKind::Naive => "Naive",
        MethodKind::Pg => "PG",
        MethodKind::Ptgv => "PTGV",
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.scenes.is_empty() || args.methods.is_empty() {
        return Err(config_err("bench needs at least one scene and one method"));
    }
    let f = default_focal(args.size);

    struct SceneData {
        name: &'static str,
        scene: Scene,
        obs: depthfuse_core::synth::DegradedInputs,
    }
    let mut scenes = Vec::new();
    for (i, kind) in args.scenes.iter().enumerate() {
        let scene = kind.build(args.size, f)?;
        let spec = DegradationSpec {
            depth_sigma: args.depth_sigma,
            normal_sigma: args.normal_sigma,
            gap_fraction: args.gap_fraction,
            discard_fraction: args.discard_fraction,
            perlin_scale: args.size as f64 / 8.0,
            seed: args.seed.wrapping_add(i as u64),
        };
        let obs = degrade(&scene, &spec)?;
        scenes.push(SceneData {
            name: kind.name(),
            scene,
            obs,
        });
    }

    // scene×method cells run in parallel on shared immutable inputs
    let cells: Vec<((usize, usize), MetricPair)> = scenes
        .par_iter()
        .enumerate()
        .flat_map(|(si, data)| {
            args.methods
                .par_iter()
                .enumerate()
                .map(move |(mi, &kind)| {
                    let method = args.solver.method(kind);
                    let pair = fuse_with_method(
                        &method,
                        &data.obs.d_obs,
                        &data.obs.n_obs,
                        &data.obs.kappa,
                        &data.scene.mask,
                        Some(&data.scene.k),
                    )
                    .and_then(|out| {
                        let r = rmse(&out.depth, &data.scene.depth_gt, &data.scene.mask)?;
                        let m = mae_normals(
                            &out.depth,
                            &data.scene.normals_gt,
                            &data.scene.k,
                            &data.scene.mask,
                        )?;
                        Ok(MetricPair { rmse: r, mae: m.mae })
                    });
                    let pair = match pair {
                        Ok(p) => p,
                        Err(e) => {
                            eprintln!(
                                "cell {}×{} failed: {}",
                                data.name,
                                method_label(kind),
                                e
                            );
                            MetricPair {
                                rmse: f64::NAN,
                                mae: f64::NAN,
                            }
                        }
                    };
                    ((si, mi), pair)
                })
        })
        .collect();

    let any_ok = cells.iter().any(|(_, p)| !p.rmse.is_nan());
    let mut report = BenchmarkReport::new(
        args.methods.iter().map(|&m| method_label(m).into()).collect(),
    );
    for (si, data) in scenes.iter().enumerate() {
        let mut row = vec![
            MetricPair {
                rmse: f64::NAN,
                mae: f64::NAN
            };
            args.methods.len()
        ];
        for ((s, m), pair) in &cells {
            if *s == si {
                row[*m] = *pair;
            }
        }
        report.add_scene(data.name, row)?;
    }
    if let Some(external) = &args.external {
        let text = std::fs::read_to_string(external).map_err(|e| io_err(external, e))?;
        report.merge_external(&text)?;
    }

    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let report_path = args.out.join("report.csv");
    std::fs::write(&report_path, report.to_csv()).map_err(|e| io_err(&report_path, e))?;
    let long_path = args.out.join("report_long.csv");
    std::fs::write(&long_path, report.to_long_csv()).map_err(|e| io_err(&long_path, e))?;
    print!("{}", report.to_csv());

    if any_ok {
        Ok(())
    } else {
        Err(CliError {
            code: 4,
            msg: "every benchmark cell failed".into(),
        })
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("DEPTHFUSE_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: DEPTHFUSE_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
