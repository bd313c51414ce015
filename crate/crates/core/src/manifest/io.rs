use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, ImageRecord, InpaintRecord, ManifestError, MaskRecord, SCHEMA_VERSION};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header { schema_version: u32 },
    Image(ImageRecord),
    Mask(MaskRecord),
    Inpaint(InpaintRecord),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LineRef<'a> {
    Header { schema_version: u32 },
    Image(&'a ImageRecord),
    Mask(&'a MaskRecord),
    Inpaint(&'a InpaintRecord),
}

/// Loads a JSONL manifest. Relative record paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(parse_manifest(&text)?.with_base_dir(base))
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, ManifestError> {
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut inpaints = Vec::new();
    let mut schema_version = SCHEMA_VERSION;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(line).map_err(|e| ManifestError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            Line::Header { schema_version: v } => {
                if v > SCHEMA_VERSION {
                    return Err(ManifestError::Parse {
                        line: i + 1,
                        message: format!("unsupported schema version {v}"),
                    });
                }
                schema_version = v;
            }
            Line::Image(r) => images.push(r),
            Line::Mask(r) => masks.push(r),
            Line::Inpaint(r) => inpaints.push(r),
        }
    }
    let mut m = DatasetManifest::new(images, masks, inpaints)?;
    m.schema_version = schema_version;
    Ok(m)
}

/// Canonical JSONL form: a header line, then images, masks and inpaint
/// records, each sorted by id.
pub fn to_jsonl(manifest: &DatasetManifest) -> String {
    let mut images: Vec<_> = manifest.images.iter().collect();
    images.sort_by(|a, b| a.id.cmp(&b.id));
    let mut masks: Vec<_> = manifest.masks.iter().collect();
    masks.sort_by(|a, b| a.id.cmp(&b.id));
    let mut inpaints: Vec<_> = manifest.inpaints.iter().collect();
    inpaints.sort_by(|a, b| a.id.cmp(&b.id));

    let lines = std::iter::once(LineRef::Header {
        schema_version: manifest.schema_version,
    })
    .chain(images.into_iter().map(LineRef::Image))
    .chain(masks.into_iter().map(LineRef::Mask))
    .chain(inpaints.into_iter().map(LineRef::Inpaint));

    let mut out = String::new();
    for line in lines {
        // Records only hold strings, integers, finite floats and enums.
        out.push_str(&serde_json::to_string(&line).expect("manifest records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| ManifestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, to_jsonl(manifest)).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{Pipeline, Preservation, SourceDataset, Split};

    const FIXTURE: &str = r#"
{"kind":"image","id":"coco_1","source_dataset":"COCO","path":"a.png","width":64,"height":48,"split":"TEST_ID","authentic":true}
{"kind":"image","id":"oi_1","source_dataset":"OPENIMAGES","path":"b.png","width":32,"height":32,"split":"TEST_OOD","authentic":true}
{"kind":"mask","id":"m1","image_id":"coco_1","object_label":"dog","mask_path":"m1.png","area_fraction":0.1}
{"kind":"inpaint","id":"coco_1_r1","parent_image_id":"coco_1","mask_id":"m1","pipeline":"BRUSHNET","model_name":"sd15","preservation":"SP","round":1,"inpainted_path":"a_r1.png","split":"TEST_ID"}
"#;

    #[test]
    fn empty_file_is_empty_manifest() {
        let m = parse_manifest("").unwrap();
        assert!(m.is_empty());
        assert!(m.split_counts.is_empty());
    }

    #[test]
    fn links_fixture_and_counts_splits() {
        let m = parse_manifest(FIXTURE).unwrap();
        assert_eq!(m.images.len(), 2);
        assert_eq!(m.inpaints.len(), 1);
        // coco_1 and its derivative land in COCO/TEST_ID, the OpenImages image alone.
        assert_eq!(m.split_counts[&SourceDataset::Coco][&Split::TestId], 2);
        assert_eq!(m.split_counts[&SourceDataset::OpenImages][&Split::TestOod], 1);
        assert_eq!(m.split_counts.len(), 2);
        let rec = m.inpaint("coco_1_r1").unwrap();
        assert_eq!(rec.pipeline, Pipeline::BrushNet);
        assert_eq!(rec.preservation, Preservation::Sp);
    }

    #[test]
    fn dangling_parent_is_rejected() {
        let text = r#"{"kind":"mask","id":"m1","image_id":"ghost","object_label":"dog","mask_path":"m1.png","area_fraction":0.1}"#;
        match parse_manifest(text) {
            Err(ManifestError::DanglingReference(id)) => assert_eq!(id, "ghost"),
            other => panic!("unexpected {other:?}"),
        }
        let text = FIXTURE.replace(r#""parent_image_id":"coco_1""#, r#""parent_image_id":"missing""#);
        assert!(matches!(parse_manifest(&text), Err(ManifestError::DanglingReference(id)) if id == "missing"));
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dup = format!("{FIXTURE}\n{}", FIXTURE.lines().nth(1).unwrap());
        assert!(matches!(parse_manifest(&dup), Err(ManifestError::DuplicateId(id)) if id == "coco_1"));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = format!("{}\nnot json\n", FIXTURE.trim());
        match parse_manifest(&text) {
            Err(ManifestError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let m = parse_manifest(FIXTURE).unwrap();
        let once = to_jsonl(&m);
        let twice = to_jsonl(&parse_manifest(&once).unwrap());
        assert_eq!(once, twice);
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, FIXTURE).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.resolve("a.png"), dir.path().join("a.png"));
    }
}
