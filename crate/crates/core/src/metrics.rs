//! Depth RMSE (mm) and normal MAE (rad) evaluation, plus the CSV
//! benchmark report.

use crate::camera::{normals_from_depth, CameraIntrinsics};
use crate::error::{FusionError, Result};
use crate::grids::{DomainMask, ScalarField, VectorField3};

/// Root mean squared difference over the evaluation mask.
pub fn rmse(d_hat: &ScalarField, d_gt: &ScalarField, eval_mask: &DomainMask) -> Result<f64> {
    if !d_hat.same_shape(d_gt) || d_hat.width() != eval_mask.width() {
        return Err(FusionError::DimensionMismatch(
            "rmse inputs must share one grid shape".into(),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &m) in eval_mask.bits().iter().enumerate() {
        if m {
            let e = d_hat.values()[i] - d_gt.values()[i];
            sum += e * e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(FusionError::Degenerate {
            msg: "empty evaluation mask".into(),
        });
    }
    Ok((sum / count as f64).sqrt())
}

/// MAE of normals and the bookkeeping around invalid stencils.
#[derive(Debug, Clone, Copy)]
pub struct MaeResult {
    /// Mean angular error in radians over evaluated pixels.
    pub mae: f64,
    pub evaluated: usize,
    /// Mask pixels skipped because the finite-difference normal was
    /// degenerate (grazing silhouette).
    pub excluded: usize,
}

/// Mean angular error between normals estimated from `d_hat` (by the
/// perspective finite-difference model) and the ground-truth normals.
pub fn mae_normals(
    d_hat: &ScalarField,
    n_gt: &VectorField3,
    k: &CameraIntrinsics,
    eval_mask: &DomainMask,
) -> Result<MaeResult> {
    let est = normals_from_depth(d_hat, eval_mask, k)?;
    let mut sum = 0.0;
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    for (i, &m) in eval_mask.bits().iter().enumerate() {
        if !m {
            continue;
        }
        if !est.valid.bits()[i] {
            excluded += 1;
            continue;
        }
        let a = est.normals.values()[i];
        let b = n_gt.values()[i];
        let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
        sum += dot.acos();
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(FusionError::Degenerate {
            msg: "no valid normal pixels in evaluation".into(),
        });
    }
    Ok(MaeResult {
        mae: sum / evaluated as f64,
        evaluated,
        excluded,
    })
}

/// One scene's metrics for one method. NaN marks a failed cell.
#[derive(Debug, Clone, Copy)]
pub struct MetricPair {
    pub rmse: f64,
    pub mae: f64,
}

/// Table-shaped benchmark report: rows are scenes plus an unweighted
/// Average row, columns are methods × {RMSE, MAE}.
#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    methods: Vec<String>,
    scenes: Vec<String>,
    // cells[scene][method]
    cells: Vec<Vec<MetricPair>>,
}

impl BenchmarkReport {
    pub fn new(methods: Vec<String>) -> Self {
        Self {
            methods,
            scenes: Vec::new(),
            cells: Vec::new(),
        }
    }

    pub fn add_scene(&mut self, scene: &str, values: Vec<MetricPair>) -> Result<()> {
        if values.len() != self.methods.len() {
            return Err(FusionError::DimensionMismatch(format!(
                "report row has {} cells for {} methods",
                values.len(),
                self.methods.len()
            )));
        }
        self.scenes.push(scene.to_string());
        self.cells.push(values);
        Ok(())
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    /// Unweighted mean over scenes, ignoring NaN cells.
    pub fn average(&self) -> Vec<MetricPair> {
        (0..self.methods.len())
            .map(|m| {
                let mean_of = |pick: &dyn Fn(&MetricPair) -> f64| {
                    let vals: Vec<f64> = self
                        .cells
                        .iter()
                        .map(|row| pick(&row[m]))
                        .filter(|v| !v.is_nan())
                        .collect();
                    if vals.is_empty() {
                        f64::NAN
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    }
                };
                MetricPair {
                    rmse: mean_of(&|c| c.rmse),
                    mae: mean_of(&|c| c.mae),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene");
        for m in &self.methods {
            out.push_str(&format!(",{} RMSE,{} MAE", m, m));
        }
        out.push('\n');
        let fmt = |v: f64| {
            if v.is_nan() {
                "NaN".to_string()
            } else {
                format!("{:.6}", v)
            }
        };
        for (scene, row) in self.scenes.iter().zip(&self.cells) {
            out.push_str(scene);
            for cell in row {
                out.push_str(&format!(",{},{}", fmt(cell.rmse), fmt(cell.mae)));
            }
            out.push('\n');
        }
        out.push_str("Average");
        for cell in self.average() {
            out.push_str(&format!(",{},{}", fmt(cell.rmse), fmt(cell.mae)));
        }
        out.push('\n');
        out
    }

    /// Long-format CSV (scene,method,metric,value), one row per value.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("scene,method,metric,value\n");
        for (scene, row) in self.scenes.iter().zip(&self.cells) {
            for (method, cell) in self.methods.iter().zip(row) {
                out.push_str(&format!("{},{},rmse,{}\n", scene, method, cell.rmse));
                out.push_str(&format!("{},{},mae,{}\n", scene, method, cell.mae));
            }
        }
        out
    }

    /// Merges externally computed columns from a long-format CSV with
    /// header `scene,method,rmse,mae`. Scenes missing from the external
    /// file get NaN cells.
    pub fn merge_external(&mut self, csv_text: &str) -> Result<()> {
        let mut lines = csv_text.lines();
        let header = lines.next().unwrap_or("");
        if header.trim() != "scene,method,rmse,mae" {
            return Err(FusionError::InvalidParams(format!(
                "external CSV must have header 'scene,method,rmse,mae', got {:?}",
                header
            )));
        }
        let mut new_methods: Vec<String> = Vec::new();
        let mut entries: Vec<(String, String, MetricPair)> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(FusionError::InvalidParams(format!(
                    "external CSV line {}: expected 4 fields",
                    lineno + 2
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| {
                    FusionError::InvalidParams(format!(
                        "external CSV line {}: bad number {:?}",
                        lineno + 2,
                        s
                    ))
                })
            };
            let method = parts[1].trim().to_string();
            if !new_methods.contains(&method) {
                new_methods.push(method.clone());
            }
            entries.push((
                parts[0].trim().to_string(),
                method,
                MetricPair {
                    rmse: parse(parts[2])?,
                    mae: parse(parts[3])?,
                },
            ));
        }
        for method in new_methods {
            self.methods.push(method.clone());
            for (scene, row) in self.scenes.iter().zip(self.cells.iter_mut()) {
                let cell = entries
                    .iter()
                    .find(|(s, m, _)| s == scene && *m == method)
                    .map(|(_, _, c)| *c)
                    .unwrap_or(MetricPair {
                        rmse: f64::NAN,
                        mae: f64::NAN,
                    });
                row.push(cell);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_identical_is_zero_and_offset_is_offset() {
        let a = ScalarField::constant(4, 4, 10.0);
        let mask = DomainMask::full(4, 4);
        assert_eq!(rmse(&a, &a, &mask).unwrap(), 0.0);
        let b = ScalarField::constant(4, 4, 13.0);
        assert!((rmse(&b, &a, &mask).unwrap() - 3.0).abs() < 1e-15);
        // symmetry
        assert_eq!(
            rmse(&a, &b, &mask).unwrap(),
            rmse(&b, &a, &mask).unwrap()
        );
    }

    #[test]
    fn rmse_two_pixel_hand_case() {
        let gt = ScalarField::new(2, 1, vec![0.0, 0.0]).unwrap();
        let hat = ScalarField::new(2, 1, vec![0.0, 2.0]).unwrap();
        let mask = DomainMask::full(2, 1);
        assert!((rmse(&hat, &gt, &mask).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rmse_empty_mask_errors() {
        let a = ScalarField::constant(2, 2, 0.0);
        assert!(rmse(&a, &a, &DomainMask::empty(2, 2)).is_err());
    }

    #[test]
    fn mae_zero_on_plane() {
        let k = CameraIntrinsics::new(100.0, 7.5, 7.5).unwrap();
        let d = ScalarField::constant(16, 16, 500.0);
        let mut n = VectorField3::zeros(16, 16);
        for v in n.values_mut() {
            *v = [0.0, 0.0, 1.0];
        }
        let out = mae_normals(&d, &n, &k, &DomainMask::full(16, 16)).unwrap();
        assert!(out.mae < 1e-12);
        assert_eq!(out.excluded, 0);
    }

    #[test]
    fn mae_orthogonal_normals_is_half_pi() {
        let k = CameraIntrinsics::new(100.0, 7.5, 7.5).unwrap();
        let d = ScalarField::constant(16, 16, 500.0);
        // estimated normals will be (0,0,1); claim GT is orthogonal
        let mut n = VectorField3::zeros(16, 16);
        for v in n.values_mut() {
            *v = [1.0, 0.0, 0.0];
        }
        let out = mae_normals(&d, &n, &k, &DomainMask::full(16, 16)).unwrap();
        assert!((out.mae - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn report_averages_and_layout() {
        let mut report = BenchmarkReport::new(vec!["PG".into()]);
        report
            .add_scene("a", vec![MetricPair { rmse: 1.0, mae: 0.1 }])
            .unwrap();
        report
            .add_scene("b", vec![MetricPair { rmse: 3.0, mae: 0.3 }])
            .unwrap();
        let avg = report.average();
        assert!((avg[0].rmse - 2.0).abs() < 1e-15);
        let csv = report.to_csv();
        assert!(csv.starts_with("scene,PG RMSE,PG MAE\n"));
        assert!(csv.contains("Average,2.000000,0.200000"));
    }

    #[test]
    fn report_reproduces_published_ptgv_average() {
        // per-object PTGV numbers supplied externally
        let mut report = BenchmarkReport::new(vec![]);
        for scene in ["bear", "buddha", "cow", "pot2", "reading"] {
            report.add_scene(scene, vec![]).unwrap();
        }
        let external = "scene,method,rmse,mae\n\
                        bear,PTGV,0.353,0.129\n\
                        buddha,PTGV,1.056,0.279\n\
                        cow,PTGV,0.653,0.153\n\
                        pot2,PTGV,0.610,0.177\n\
                        reading,PTGV,1.140,0.238\n";
        report.merge_external(external).unwrap();
        let avg = report.average();
        assert!((avg[0].rmse - 0.762).abs() < 5e-4, "avg {}", avg[0].rmse);
        assert!((avg[0].mae - 0.195).abs() < 5e-4, "avg {}", avg[0].mae);
    }
}
