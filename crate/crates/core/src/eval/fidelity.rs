use std::fmt::Write as _;
use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use rayon::prelude::*;
use serde::Serialize;

use super::report::{csv_field, format_float, write_text};
use super::EvalError;
use crate::gateway::{dispatch, RetryPolicy, Route, WorkerHandle, WorkerRequest};
use crate::imageio::{open_rgb, to_png_b64};
use crate::manifest::{DatasetManifest, Preservation};
use crate::metrics::fidelity;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityRow {
    pub id: String,
    pub pipeline: String,
    pub preservation: Preservation,
    pub psnr: f64,
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
    /// From a perceptual scoring worker when one is configured.
    pub lpips: Option<f64>,
}

/// Fidelity of each test-split inpainting against its authentic root. The
/// root is bilinearly resized when the output was produced at a smaller
/// working resolution.
pub fn fidelity_rows(
    manifest: &DatasetManifest,
    fr_only: bool,
    perceptual: Option<&WorkerHandle>,
) -> Result<Vec<FidelityRow>, EvalError> {
    let mut records: Vec<_> = manifest
        .inpaints
        .iter()
        .filter(|r| r.split.is_test() && (!fr_only || r.preservation == Preservation::Fr))
        .collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    records
        .par_iter()
        .map(|rec| {
            let root = manifest.root_image(rec).ok_or_else(|| EvalError::Parse {
                path: rec.inpainted_path.clone().into(),
                message: format!("{} has no root image", rec.id),
            })?;
            let inpainted = open_rgb(manifest.resolve(&rec.inpainted_path))?;
            let mut original = open_rgb(manifest.resolve(&root.path))?;
            if original.dimensions() != inpainted.dimensions() {
                original = image::imageops::resize(&original, inpainted.width(), inpainted.height(), FilterType::Triangle);
            }
            let f = fidelity(&original, &inpainted).map_err(|source| EvalError::Metric { id: rec.id.clone(), source })?;
            let lpips = match perceptual {
                None => None,
                Some(worker) => {
                    let mut req = WorkerRequest::new(
                        format!("{}__lpips", rec.id),
                        to_png_b64(&DynamicImage::ImageRgb8(inpainted))?,
                    );
                    req.params.insert(
                        "reference_b64".into(),
                        to_png_b64(&DynamicImage::ImageRgb8(original))?.into(),
                    );
                    let resp = dispatch(&req, Route::Score, worker, RetryPolicy::default(), None)
                        .map_err(|e| EvalError::Detector(e.to_string()))?;
                    resp.response.outputs.score
                }
            };
            Ok(FidelityRow {
                id: rec.id.clone(),
                pipeline: rec.pipeline.as_str().to_string(),
                preservation: rec.preservation,
                psnr: f.psnr,
                mse: f.mse,
                mae: f.mae,
                ssim: f.ssim,
                lpips,
            })
        })
        .collect()
}

pub fn write_fidelity_csv(rows: &[FidelityRow], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut out = String::from("id,pipeline,preservation,psnr,mse_e3,mae_e3,ssim,lpips\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            csv_field(&r.id),
            r.pipeline,
            r.preservation,
            format_float(r.psnr),
            format_float(r.mse),
            format_float(r.mae),
            format_float(r.ssim),
            r.lpips.map(format_float).unwrap_or_default()
        );
    }
    write_text(path.as_ref(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::fixtures::four_image_manifest;

    #[test]
    fn fr_rows_against_root() {
        let dir = tempfile::tempdir().unwrap();
        let m = four_image_manifest(dir.path());
        let rows = fidelity_rows(&m, true, None).unwrap();
        assert_eq!(rows.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["a0_fr", "a1_fr"]);
        // a0 is (0,10,10), the output (200,0,0): per-channel |d| = 200, 10, 10.
        let mae = (200.0 + 10.0 + 10.0) / 3.0 / 255.0 * 1e3;
        assert!((rows[0].mae - mae).abs() < 1e-9);
        assert!(rows[0].lpips.is_none());
        let csv = dir.path().join("f.csv");
        write_fidelity_csv(&rows, &csv).unwrap();
        assert!(std::fs::read_to_string(csv).unwrap().starts_with("id,pipeline,preservation,psnr"));
    }
}
