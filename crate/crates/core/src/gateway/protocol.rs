use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::manifest::Preservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    Segment,
    Caption,
    Inpaint,
    Score,
}

impl Route {
    pub fn path(self) -> &'static str {
        match self {
            Route::Segment => "/v1/segment",
            Route::Caption => "/v1/caption",
            Route::Inpaint => "/v1/inpaint",
            Route::Score => "/v1/score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRequest {
    pub job_id: String,
    pub image_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preservation: Option<Preservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl WorkerRequest {
    pub fn new(job_id: impl Into<String>, image_b64: String) -> Self {
        Self {
            job_id: job_id.into(),
            image_b64,
            mask_b64: None,
            prompt: None,
            preservation: None,
            seed: None,
            params: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentObject {
    pub label: String,
    pub mask_b64: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerOutputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objects: Option<Vec<SegmentObject>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerResponse {
    pub job_id: String,
    pub outputs: WorkerOutputs,
    pub model: String,
    pub version: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_field_names_on_the_wire() {
        let mut req = WorkerRequest::new("j1", "AAAA".into());
        req.mask_b64 = Some("BBBB".into());
        req.prompt = Some("a fox".into());
        req.preservation = Some(Preservation::Sp);
        req.seed = Some(7);
        let json = serde_json::to_string(&req).unwrap();
        assert_eq!(
            json,
            r#"{"job_id":"j1","image_b64":"AAAA","mask_b64":"BBBB","prompt":"a fox","preservation":"SP","seed":7,"params":{}}"#
        );
        let bare = serde_json::to_string(&WorkerRequest::new("j2", "A".into())).unwrap();
        assert_eq!(bare, r#"{"job_id":"j2","image_b64":"A","params":{}}"#);
    }

    #[test]
    fn response_field_names_on_the_wire() {
        let resp = WorkerResponse {
            job_id: "j1".into(),
            outputs: WorkerOutputs { caption: Some("a dog on a beach".into()), ..Default::default() },
            model: "blip2".into(),
            version: "1".into(),
        };
        assert_eq!(
            serde_json::to_string(&resp).unwrap(),
            r#"{"job_id":"j1","outputs":{"caption":"a dog on a beach"},"model":"blip2","version":"1"}"#
        );
    }
}
