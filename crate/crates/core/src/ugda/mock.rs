use sha2::{Digest, Sha256};

use crate::chat::{ChatEndpoint, ChatRequest, EndpointError};

/// Deterministic stand-in for the vision-language model. Verdicts are drawn
/// from a hash of the attached images, so the same pair always gets the
/// same answers.
#[derive(Debug, Clone, Default)]
pub struct MockVlm;

impl ChatEndpoint for MockVlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let images: Vec<&String> = request.messages.iter().flat_map(|m| m.images.iter()).collect();
        let mut hasher = Sha256::new();
        for img in &images {
            hasher.update(img.as_bytes());
            hasher.update([0]);
        }
        let digest = hasher.finalize();
        match images.len() {
            1 => Ok(if digest[0] % 10 < 7 {
                "Assessment: Lighting and textures are consistent.\nVerdict: Yes, it is realistic".into()
            } else {
                "Assessment: The edited region is smeared.\nVerdict: No, it is not realistic".into()
            }),
            2 => {
                let verdict = ["First is more realistic", "Second is more realistic", "Both look realistic"]
                    [digest[0] as usize % 3];
                Ok(format!("Assessment: Compared both frames.\nVerdict: {verdict}"))
            }
            n => Err(EndpointError::Status { status: 400, body: format!("expected 1 or 2 images, got {n}") }),
        }
    }
}
