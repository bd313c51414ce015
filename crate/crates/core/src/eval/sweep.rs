use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::codecs::jpeg::JpegEncoder;
use image::{DynamicImage, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::detector::load_detector_dir;
use super::report::{format_float, write_text, ReportMeta, ReportRow, REPORT_COLUMNS};
use super::{eval_items, evaluate_images, group_rows, io_err, manifest_sha256, EvalError, EvalItem, EvalOptions, GroupingSpec};
use crate::imageio::open_rgb;
use crate::manifest::DatasetManifest;
use crate::metrics::DetectorOutput;

pub const DEFAULT_QUALITIES: [f64; 3] = [0.85, 0.7, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Jpeg,
    Webp,
}

impl Codec {
    pub fn as_str(self) -> &'static str {
        match self {
            Codec::Jpeg => "jpeg",
            Codec::Webp => "webp",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Codec::Jpeg => "jpg",
            Codec::Webp => "webp",
        }
    }
}

impl std::str::FromStr for Codec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jpeg" | "jpg" => Ok(Codec::Jpeg),
            "webp" => Ok(Codec::Webp),
            other => Err(format!("unknown codec `{other}`")),
        }
    }
}

/// Encodes at `quality` in (0, 1]; JPEG uses round(quality·100).
pub fn encode_variant(img: &RgbImage, codec: Codec, quality: f64) -> Result<Vec<u8>, EvalError> {
    let q = (quality * 100.0).round().clamp(1.0, 100.0);
    match codec {
        Codec::Jpeg => {
            let mut buf = Cursor::new(Vec::new());
            JpegEncoder::new_with_quality(&mut buf, q as u8)
                .encode_image(&DynamicImage::ImageRgb8(img.clone()))
                .map_err(|e| EvalError::Encode { codec: codec.as_str().into(), message: e.to_string() })?;
            Ok(buf.into_inner())
        }
        Codec::Webp => {
            if img.width() == 0 || img.height() == 0 || img.width() > 16383 || img.height() > 16383 {
                return Err(EvalError::Encode {
                    codec: codec.as_str().into(),
                    message: format!("unsupported size {:?}", img.dimensions()),
                });
            }
            let mem = webp::Encoder::from_rgb(img.as_raw(), img.width(), img.height()).encode(q as f32);
            Ok(mem.to_vec())
        }
    }
}

/// Where detector outputs for each variant come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorSource {
    /// Shell command with `{input}` and `{output}` placeholders. The input
    /// directory holds `<id>.<ext>` images; the command must write the
    /// detector directory convention into the output directory.
    Command(String),
    /// One output directory per variant under this root: `baseline/`,
    /// `jpeg_q85/`, `webp_q50/`, ...
    Precomputed(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub codecs: Vec<Codec>,
    pub qualities: Vec<f64>,
    pub cache_dir: PathBuf,
    pub grouping: GroupingSpec,
    pub options: EvalOptions,
    pub detector_id: String,
    pub concurrency: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    /// `None` for the undegraded baseline.
    pub codec: Option<Codec>,
    pub quality: Option<f64>,
    /// Record id to degraded file.
    pub files: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub variants: Vec<Variant>,
    /// (variant name, row), baseline first.
    pub rows: Vec<(String, ReportRow)>,
    pub meta: ReportMeta,
}

pub fn variant_name(codec: Codec, quality: f64) -> String {
    format!("{}_q{}", codec.as_str(), (quality * 100.0).round() as u32)
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    id: String,
    source_sha256: String,
    object: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes (or reuses) the degraded copies of every item. Objects are named
/// by a hash of the source bytes and encoding parameters so an interrupted
/// sweep resumes without re-encoding.
fn degrade(items: &[EvalItem], codec: Codec, quality: f64, cache: &Path) -> Result<Variant, EvalError> {
    let name = variant_name(codec, quality);
    let objects = cache.join("objects");
    std::fs::create_dir_all(&objects).map_err(io_err(&objects))?;
    let entries: Vec<(String, IndexLine)> = items
        .par_iter()
        .map(|item| {
            let bytes = std::fs::read(&item.image_path).map_err(io_err(&item.image_path))?;
            let source_sha256 = sha256_hex(&bytes);
            let key = sha256_hex(format!("{source_sha256}:{}:{quality}", codec.as_str()).as_bytes());
            let object = format!("objects/{key}.{}", codec.extension());
            let path = cache.join(&object);
            if !path.is_file() {
                let img = open_rgb(&item.image_path)?;
                let encoded = encode_variant(&img, codec, quality)?;
                let tmp = path.with_extension(format!("{}.partial", uuid::Uuid::new_v4()));
                std::fs::write(&tmp, encoded).map_err(io_err(&tmp))?;
                std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
            }
            Ok((item.id.clone(), IndexLine { id: item.id.clone(), source_sha256, object }))
        })
        .collect::<Result<_, EvalError>>()?;

    let mut index = String::new();
    let mut files = BTreeMap::new();
    for (id, line) in entries {
        index.push_str(&serde_json::to_string(&line).expect("index serializes"));
        index.push('\n');
        files.insert(id, cache.join(&line.object));
    }
    write_text(&cache.join("variants").join(&name).join("index.jsonl"), &index)?;
    Ok(Variant { name, codec: Some(codec), quality: Some(quality), files })
}

fn run_command(template: &str, variant: &Variant, cache: &Path) -> Result<BTreeMap<String, DetectorOutput>, EvalError> {
    let root = cache.join("variants").join(&variant.name);
    let input = root.join("input");
    let output = root.join("detector");
    for dir in [&input, &output] {
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    for (id, file) in &variant.files {
        let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("png");
        let staged = input.join(format!("{id}.{ext}"));
        if std::fs::hard_link(file, &staged).is_err() {
            std::fs::copy(file, &staged).map_err(io_err(&staged))?;
        }
    }
    let cmd = template
        .replace("{input}", &input.display().to_string())
        .replace("{output}", &output.display().to_string());
    log::info!("running detector for {}: {cmd}", variant.name);
    let status = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .status()
        .map_err(|e| EvalError::Detector(format!("{cmd}: {e}")))?;
    if !status.success() {
        return Err(EvalError::Detector(format!("`{cmd}` exited with {status}")));
    }
    load_detector_dir(&output)
}

fn outputs_for(
    source: &DetectorSource,
    variant: &Variant,
    cache: &Path,
) -> Result<BTreeMap<String, DetectorOutput>, EvalError> {
    match source {
        DetectorSource::Command(template) => run_command(template, variant, cache),
        DetectorSource::Precomputed(root) => load_detector_dir(root.join(&variant.name)),
    }
}

/// Degrades every test image with each codec and quality, collects detector
/// outputs per variant and evaluates them with the same grouping. The
/// undegraded images form the baseline rows.
pub fn compression_sweep(
    manifest: &DatasetManifest,
    detector: &DetectorSource,
    cfg: &SweepConfig,
) -> Result<SweepReport, EvalError> {
    let items = eval_items(manifest);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency.max(1))
        .build()
        .expect("thread pool");

    let mut variants = vec![Variant {
        name: "baseline".into(),
        codec: None,
        quality: None,
        files: items.iter().map(|i| (i.id.clone(), i.image_path.clone())).collect(),
    }];
    for &codec in &cfg.codecs {
        for &q in &cfg.qualities {
            variants.push(pool.install(|| degrade(&items, codec, q, &cfg.cache_dir))?);
        }
    }

    let mut rows = Vec::new();
    for variant in &variants {
        let outputs = outputs_for(detector, variant, &cfg.cache_dir)?;
        let evals = pool.install(|| evaluate_images(&items, &outputs, &cfg.options))?;
        for row in group_rows(&items, &evals, &cfg.grouping, &cfg.options) {
            rows.push((variant.name.clone(), row));
        }
    }
    Ok(SweepReport {
        variants,
        rows,
        meta: ReportMeta {
            manifest_sha256: manifest_sha256(manifest),
            detector_id: cfg.detector_id.clone(),
            grouping: cfg.grouping.axes().iter().map(|a| a.as_str().to_string()).collect(),
            options: cfg.options,
            variant: None,
        },
    })
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("variant,codec,quality,{}\n", REPORT_COLUMNS.join(","));
        let lookup: BTreeMap<&str, &Variant> = self.variants.iter().map(|v| (v.name.as_str(), v)).collect();
        for (name, row) in &self.rows {
            let v = lookup[name.as_str()];
            let _ = writeln!(
                out,
                "{},{},{},{}",
                name,
                v.codec.map_or("none", Codec::as_str),
                v.quality.map(|q| format_float(q)).unwrap_or_default(),
                row.csv_cells().join(",")
            );
        }
        out
    }

    pub fn write(&self, csv_path: impl AsRef<Path>) -> Result<(), EvalError> {
        let csv_path = csv_path.as_ref();
        write_text(csv_path, &self.to_csv())?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        write_text(&csv_path.with_extension("json"), &(meta + "\n"))
    }
}

#[cfg(test)]
mod tests {
    use image::{GrayImage, Luma, Rgb};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::eval::fixtures::four_image_manifest;
    use crate::eval::{run_benchmark, GroupAxis};

    #[test]
    fn jpeg_sizes_shrink_with_quality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = RgbImage::from_fn(64, 64, |x, y| {
            let n: u8 = rng.random_range(0..40);
            Rgb([(x * 3) as u8 + n, (y * 4) as u8, n])
        });
        let sizes: Vec<usize> = [1.0, 0.85, 0.7, 0.5]
            .iter()
            .map(|&q| encode_variant(&img, Codec::Jpeg, q).unwrap().len())
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]), "{sizes:?}");
    }

    #[test]
    fn tiny_webp_decodes() {
        let img = RgbImage::from_pixel(8, 8, Rgb([30, 60, 90]));
        let bytes = encode_variant(&img, Codec::Webp, 0.85).unwrap();
        let decoded = webp::Decoder::new(&bytes).decode().expect("valid webp");
        assert_eq!((decoded.width(), decoded.height()), (8, 8));
    }

    /// A detector stand-in: reads staged inputs and writes a constant map.
    fn fake_outputs(root: &Path, names: &[String], ids: &[String]) {
        for name in names {
            let dir = root.join(name);
            std::fs::create_dir_all(&dir).unwrap();
            for id in ids {
                GrayImage::from_fn(4, 4, |x, _| Luma([if x < 2 { 230 } else { 10 }])).save(dir.join(format!("{id}.png"))).unwrap();
                let score = if id.contains('_') { "0.9" } else { "0.2" };
                std::fs::write(dir.join(format!("{id}.score")), score).unwrap();
            }
        }
    }

    #[test]
    fn sweep_counts_and_baseline_equality() {
        let data = tempfile::tempdir().unwrap();
        let cache = tempfile::tempdir().unwrap();
        let outs = tempfile::tempdir().unwrap();
        let m = four_image_manifest(data.path());
        let ids: Vec<String> = eval_items(&m).into_iter().map(|i| i.id).collect();
        let mut names = vec!["baseline".to_string()];
        for c in [Codec::Jpeg, Codec::Webp] {
            for q in DEFAULT_QUALITIES {
                names.push(variant_name(c, q));
            }
        }
        fake_outputs(outs.path(), &names, &ids);

        let grouping = GroupingSpec::new([GroupAxis::Split]).unwrap();
        let cfg = SweepConfig {
            codecs: vec![Codec::Jpeg, Codec::Webp],
            qualities: DEFAULT_QUALITIES.to_vec(),
            cache_dir: cache.path().to_path_buf(),
            grouping: grouping.clone(),
            options: EvalOptions::default(),
            detector_id: "fake".into(),
            concurrency: 2,
        };
        let source = DetectorSource::Precomputed(outs.path().to_path_buf());
        let report = compression_sweep(&m, &source, &cfg).unwrap();
        assert_eq!(report.rows.len(), 7);
        // Identical sources share one object per encoding.
        let distinct: std::collections::BTreeSet<Vec<u8>> =
            eval_items(&m).iter().map(|i| std::fs::read(&i.image_path).unwrap()).collect();
        let objects = std::fs::read_dir(cache.path().join("objects")).unwrap().count();
        assert_eq!(objects, 6 * distinct.len());
        assert!(report.variants.iter().all(|v| v.files.len() == ids.len()));

        let baseline = load_detector_dir(outs.path().join("baseline")).unwrap();
        let direct = run_benchmark(&m, &baseline, "fake", &grouping, &EvalOptions::default()).unwrap();
        assert_eq!(report.rows[0].1, direct.rows[0]);

        // Second run reuses the cache and gives the same report.
        assert_eq!(compression_sweep(&m, &source, &cfg).unwrap(), report);
    }

    #[test]
    fn command_detector_sees_staged_inputs() {
        let data = tempfile::tempdir().unwrap();
        let cache = tempfile::tempdir().unwrap();
        let m = four_image_manifest(data.path());
        // Copies each staged input's name into a constant map plus score.
        let script = data.path().join("det.sh");
        let map = data.path().join("map.png");
        GrayImage::from_pixel(4, 4, Luma([200])).save(&map).unwrap();
        std::fs::write(
            &script,
            format!(
                "for f in \"$1\"/*; do b=$(basename \"$f\"); id=\"${{b%.*}}\"; cp {} \"$2/$id.png\"; echo 0.8 > \"$2/$id.score\"; done\n",
                map.display()
            ),
        )
        .unwrap();
        let cfg = SweepConfig {
            codecs: vec![Codec::Jpeg],
            qualities: vec![0.7],
            cache_dir: cache.path().to_path_buf(),
            grouping: GroupingSpec::new([GroupAxis::Preservation]).unwrap(),
            options: EvalOptions::default(),
            detector_id: "script".into(),
            concurrency: 1,
        };
        let source = DetectorSource::Command(format!("sh {} {{input}} {{output}}", script.display()));
        let report = compression_sweep(&m, &source, &cfg).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.to_csv().contains("jpeg_q70,jpeg,0.700000,preservation=FR"));
    }
}
