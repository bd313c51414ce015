//! The human-study HTTP API as a browser client sees it.

use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use reqwest::blocking::Client;
use serde_json::{json, Value};

use sagi_core::human_bench::{study_router, Study, StudyConfig, StudyImage, ANNOTATIONS_FILE, SESSIONS_FILE, STUDY_FILE};
use sagi_core::metrics::{BBox, Label};
use sagi_core::serve::{spawn_local, ServerHandle};
use sagi_core::ugda::UgdaState;

fn demographics() -> Value {
    json!({
        "gender": "female",
        "age_range": "25-34",
        "education": "eqf_7",
        "current_education": "not_studying",
        "ai_familiarity": "somewhat_familiar",
        "photography": "basic"
    })
}

/// Four inpainted and four authentic 16×12 images; each image may be
/// assessed at most twice.
fn write_study(dir: &Path) {
    std::fs::create_dir_all(dir.join("img")).unwrap();
    let mut images = Vec::new();
    for i in 0..8u8 {
        let inpainted = i < 4;
        let id = if inpainted { format!("inp{i}") } else { format!("auth{i}") };
        let path = format!("img/{id}.png");
        RgbImage::from_fn(16, 12, |x, y| Rgb([i * 20, x as u8 * 10, y as u8 * 10])).save(dir.join(&path)).unwrap();
        images.push(StudyImage {
            id: id.clone(),
            path,
            label: if inpainted { Label::Inpainted } else { Label::Authentic },
            source_id: format!("src{i}"),
            ugda: inpainted.then_some(UgdaState::Deceiving),
            bbox: inpainted.then(|| BBox::new(2, 2, 9, 7)),
            mask_path: None,
        });
    }
    let mut cfg = StudyConfig::new("api-test", images);
    cfg.batch_size = 3;
    cfg.min_assessments = 1;
    cfg.max_assessments = 2;
    cfg.min_votes = 1;
    cfg.save(dir.join(STUDY_FILE)).unwrap();
}

fn serve(dir: &Path) -> ServerHandle {
    spawn_local(study_router(Arc::new(Study::open(dir).unwrap()))).unwrap()
}

fn new_session(client: &Client, url: &str) -> String {
    let resp = client.post(format!("{url}/session")).json(&json!({ "demographics": demographics() })).send().unwrap();
    assert_eq!(resp.status(), 200);
    resp.json::<Value>().unwrap()["session_id"].as_str().unwrap().to_string()
}

fn batch(client: &Client, url: &str, session: &str) -> (u16, Value) {
    let resp = client.get(format!("{url}/session/{session}/batch")).send().unwrap();
    (resp.status().as_u16(), resp.json().unwrap())
}

fn ids(batch: &Value) -> Vec<String> {
    batch["images"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap().to_string()).collect()
}

fn authentic_vote(annotation_id: &str, image_id: &str) -> Value {
    json!({ "annotation_id": annotation_id, "image_id": image_id, "verdict": "authentic", "boxes": [], "elapsed_ms": 900 })
}

fn post_annotations(client: &Client, url: &str, session: &str, body: Value) -> (u16, Value) {
    let resp = client.post(format!("{url}/session/{session}/annotations")).json(&body).send().unwrap();
    (resp.status().as_u16(), resp.json().unwrap())
}

#[test]
fn session_batch_annotate_report_cycle() {
    let dir = tempfile::tempdir().unwrap();
    write_study(dir.path());
    let server = serve(dir.path());
    let url = server.url();
    let client = Client::new();

    assert_eq!(client.get(format!("{url}/healthz")).send().unwrap().status(), 200);
    let bad = client.post(format!("{url}/session")).json(&json!({ "demographics": { "gender": "x" } })).send().unwrap();
    assert!(bad.status().is_client_error());

    let (status, body) = batch(&client, &url, "no-such-session");
    assert_eq!((status, body["error"].as_str()), (404, Some("unknown_session")));

    let session = new_session(&client, &url);
    let (status, first) = batch(&client, &url, &session);
    assert_eq!(status, 200);
    let first_ids = ids(&first);
    assert_eq!(first_ids.len(), 3);
    assert_eq!(first_ids.iter().collect::<std::collections::BTreeSet<_>>().len(), 3);
    for img in first["images"].as_array().unwrap() {
        let id = img["id"].as_str().unwrap();
        assert!(!id.contains("inp") && !id.contains("auth"), "public id leaks the label: {id}");
        assert_eq!(img["url"], format!("/img/{id}"));
    }
    // An unanswered batch is handed out again.
    assert_eq!(ids(&batch(&client, &url, &session).1), first_ids);

    let img = client.get(format!("{url}/img/{}", first_ids[0])).send().unwrap();
    assert_eq!(img.status(), 200);
    assert_eq!(img.headers()["content-type"], "image/png");
    assert_eq!(image::load_from_memory(&img.bytes().unwrap()).unwrap().width(), 16);
    assert_eq!(client.get(format!("{url}/img/nope")).send().unwrap().status(), 404);

    let votes = json!([authentic_vote("a1", &first_ids[0]), authentic_vote("a2", &first_ids[1])]);
    let (status, outcome) = post_annotations(&client, &url, &session, votes.clone());
    assert_eq!((status, outcome["accepted"].as_u64(), outcome["duplicates"].as_u64()), (200, Some(2), Some(0)));
    // Resubmission after a lost response is harmless.
    let (status, outcome) = post_annotations(&client, &url, &session, votes);
    assert_eq!((status, outcome["accepted"].as_u64(), outcome["duplicates"].as_u64()), (200, Some(0), Some(2)));

    let invalid = json!({ "annotations": [
        { "annotation_id": "a3", "image_id": first_ids[2], "verdict": "inpainted", "boxes": [] },
        authentic_vote("a4", "not-an-image"),
    ]});
    let (status, outcome) = post_annotations(&client, &url, &session, invalid);
    assert_eq!(status, 422);
    let failed: Vec<&str> =
        outcome["errors"].as_array().unwrap().iter().map(|e| e["annotation_id"].as_str().unwrap()).collect();
    assert_eq!(failed, ["a3", "a4"]);

    let boxed = json!([{ "annotation_id": "a3", "image_id": first_ids[2], "verdict": "inpainted",
        "boxes": [{ "x_min": 1, "y_min": 1, "x_max": 8, "y_max": 6 }], "elapsed_ms": 2000 }]);
    assert_eq!(post_annotations(&client, &url, &session, boxed).0, 200);
    let (status, _) = post_annotations(&client, &url, "ghost", json!([authentic_vote("g1", &first_ids[0])]));
    assert_eq!(status, 404);

    let report: Value = client.get(format!("{url}/study/report")).send().unwrap().json().unwrap();
    assert_eq!(report["study"], "api-test");
    assert_eq!(report["n_sessions"], 1);
    assert_eq!(report["n_annotations"], 3);
    assert_eq!(report["results"]["overall"]["n"], 3);

    let second = ids(&batch(&client, &url, &session).1);
    assert!(second.iter().all(|id| !first_ids.contains(id)), "answered images came back");
    drop(server);

    // Everything is on disk: a restarted server resumes the study.
    assert!(dir.path().join(SESSIONS_FILE).exists() && dir.path().join(ANNOTATIONS_FILE).exists());
    let restarted = Study::open(dir.path()).unwrap();
    assert_eq!(restarted.annotations().len(), 3);
    assert_eq!(restarted.report().unwrap().n_sessions, 1);
}

#[test]
fn pool_exhaustion_respects_the_assessment_cap() {
    let dir = tempfile::tempdir().unwrap();
    write_study(dir.path());
    let server = serve(dir.path());
    let url = server.url();
    let client = Client::new();

    let mut per_session = Vec::new();
    let mut n = 0;
    loop {
        let session = new_session(&client, &url);
        let mut answered = 0;
        loop {
            let (status, body) = batch(&client, &url, &session);
            if status == 409 {
                assert_eq!(body["error"], "pool_exhausted");
                break;
            }
            assert_eq!(status, 200);
            let votes: Vec<Value> = ids(&body)
                .iter()
                .map(|id| {
                    n += 1;
                    authentic_vote(&format!("v{n}"), id)
                })
                .collect();
            answered += votes.len();
            assert_eq!(post_annotations(&client, &url, &session, Value::Array(votes)).0, 200);
        }
        per_session.push(answered);
        if answered == 0 {
            break;
        }
    }
    // 8 images × 2 assessments, each session seeing an image at most once.
    assert_eq!(per_session, [8, 8, 0]);
    let report: Value = client.get(format!("{url}/study/report")).send().unwrap().json().unwrap();
    assert_eq!(report["n_annotations"], 16);
    assert_eq!(report["n_images_complete"], 8);
}
