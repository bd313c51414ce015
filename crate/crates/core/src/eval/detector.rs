use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{io_err, EvalError};
use crate::imageio::ImageIoError;
use crate::metrics::{loc_map_to_det, DetectorOutput, LocMap};

fn read_map(path: &Path) -> Result<LocMap, EvalError> {
    let img = image::open(path)
        .map_err(|source| ImageIoError::Decode { context: path.display().to_string(), source })?;
    Ok(LocMap::from_gray(&img.to_luma8()))
}

fn parse_score(text: &str, path: &Path) -> Result<f64, EvalError> {
    let v: f64 = text.trim().parse().map_err(|e| EvalError::Parse {
        path: path.to_path_buf(),
        message: format!("not a number: {e}"),
    })?;
    if v.is_nan() {
        return Err(EvalError::Parse { path: path.to_path_buf(), message: "NaN score".into() });
    }
    Ok(v.clamp(0.0, 1.0))
}

fn output(id: String, loc_map: LocMap, score: Option<f64>) -> Result<(String, DetectorOutput), EvalError> {
    // Without an explicit score the image-level decision is the map's maximum.
    let det_score = match score {
        Some(s) => s,
        None => loc_map_to_det(&loc_map).map_err(|source| EvalError::Metric { id: id.clone(), source })?,
    };
    Ok((id.clone(), DetectorOutput { image_id: id, loc_map, det_score }))
}

/// Reads `<id>.png` localization maps (8-bit, value / 255) and optional
/// `<id>.score` files holding a decimal detection score.
pub fn load_detector_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, DetectorOutput>, EvalError> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else { continue };
        let score_path = path.with_extension("score");
        let score = if score_path.is_file() {
            Some(parse_score(&std::fs::read_to_string(&score_path).map_err(io_err(&score_path))?, &score_path)?)
        } else {
            None
        };
        let (id, o) = output(id, read_map(&path)?, score)?;
        out.insert(id, o);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct Line {
    image_id: String,
    #[serde(default)]
    det_score: Option<f64>,
    /// Path to the map PNG, relative to the JSONL file.
    loc_map: String,
}

/// One JSON object per line: `{"image_id", "loc_map", "det_score"?}`.
pub fn load_detector_jsonl(path: impl AsRef<Path>) -> Result<BTreeMap<String, DetectorOutput>, EvalError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: Line = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        let score = rec.det_score.map(|s| s.clamp(0.0, 1.0));
        let (id, o) = output(rec.image_id, read_map(&base.join(&rec.loc_map))?, score)?;
        out.insert(id, o);
    }
    Ok(out)
}

/// Directory convention or a `.jsonl` file, by what the path is.
pub fn load_detector_outputs(path: impl AsRef<Path>) -> Result<BTreeMap<String, DetectorOutput>, EvalError> {
    let path = path.as_ref();
    if path.is_dir() {
        load_detector_dir(path)
    } else {
        load_detector_jsonl(path)
    }
}
