use super::{PromptStage, SemanticContext};

const FIRST_INPAINT: &str = "\
You write prompts for text-to-image image inpainting models (AI-inpainting). In these models, you give an image, a mask of an area that will be inpainted, and a text prompt to tell the model what to inpaint the masked area with. You will be given a caption of the original image (the whole image) to understand the context and a list of objects. Then you choose an object, THAT EXISTS IN THE LIST GIVEN TO YOU. You need to generate a suitable prompt to alter the masked area of the image that covers the object you chose.

Remember to make a prompt that alters the image. If you decide to replace the said object, replace it with something that makes sense given the object that is to be replaced and the caption. Also, do not mention the original object in the prompt unless you want to replace the said object with one of the same class. Generate the prompt like this:

Object: {object on the original list}

Prompt: Inpaint the masked area with...";

const SECOND_INPAINT: &str = "\
You write prompts for text-to-image image inpainting models (AI-inpainting). In these models, you give an image, a mask of an area that will be inpainted, and a text prompt to tell the model what to inpaint the masked area with. An object has already been replaced in the image, and we need to generate a DIFFERENT prompt for a second object.

You will be given a caption of the image to understand the context, the class of the 1st object, and the prompt of the 1st object. You will then SELECT A 2ND OBJECT from the image that is to be inpainted. You need to generate a suitable prompt to alter the masked area of the image that covers the 2nd object.

Remember to make a prompt that alters the image. If you decide to replace the said object, replace it with something that makes sense given the object that is to be replaced and the caption. Also, do not mention the original object in the prompt unless you want to replace the said object with one of the same class. Generate the prompt like this:

Object: {name of the 2nd object}

Prompt: Inpaint the masked area with...";

const REMOVAL: &str = "\
You will be given a list of objects that exist in an image. You must choose an object to be removed with inpainting methods. Choose an object that makes sense.
Answer like this:
Object: {object in the list}";

/// The prefix every inpainting prompt is asked to start with. It is removed
/// before a prompt is saved or sent to an inpainting model.
pub const PROMPT_PREFIX: &str = "Inpaint the masked area with";

pub fn build_system_prompt(stage: PromptStage) -> &'static str {
    match stage {
        PromptStage::FirstInpaint => FIRST_INPAINT,
        PromptStage::SecondInpaint => SECOND_INPAINT,
        PromptStage::Removal => REMOVAL,
    }
}

/// User message layout: caption, then the prior edit for second-round
/// requests, then one offered label per line.
pub fn build_user_message(ctx: &SemanticContext, stage: PromptStage, labels: &[String]) -> String {
    let mut out = String::new();
    if !ctx.caption.is_empty() {
        out.push_str("Caption: ");
        out.push_str(&ctx.caption);
        out.push('\n');
    }
    if stage == PromptStage::SecondInpaint {
        if let Some(prior) = &ctx.prior_edit {
            out.push_str(&format!("1st object: {}\n", prior.object_label));
            out.push_str(&format!("1st prompt: {}\n", prior.prompt));
        }
    }
    out.push_str("Objects:\n");
    for label in labels {
        out.push_str("- ");
        out.push_str(label);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saor::{InventoryItem, PriorEdit};

    #[test]
    fn stage_templates_carry_their_contracts() {
        let first = build_system_prompt(PromptStage::FirstInpaint);
        assert!(first.contains("THAT EXISTS IN THE LIST GIVEN TO YOU"));
        assert!(first.contains("Object: {object on the original list}"));
        assert!(first.contains("Prompt: Inpaint the masked area with..."));

        let second = build_system_prompt(PromptStage::SecondInpaint);
        assert!(second.contains("SELECT A 2ND OBJECT"));
        assert!(second.contains("DIFFERENT prompt for a second object"));
        assert!(second.contains("Object: {name of the 2nd object}"));

        let removal = build_system_prompt(PromptStage::Removal);
        assert!(removal.contains("Object: {object in the list}"));
        assert!(!removal.contains("Prompt:"));
    }

    #[test]
    fn user_message_layout() {
        let ctx = SemanticContext {
            caption: "a cat on a sofa".into(),
            inventory: vec![InventoryItem::new("cat", "m1", 0.2)],
            prior_edit: Some(PriorEdit { object_label: "sofa".into(), prompt: "a red armchair".into() }),
        };
        let msg = build_user_message(&ctx, PromptStage::SecondInpaint, &["cat".into()]);
        assert_eq!(
            msg,
            "Caption: a cat on a sofa\n1st object: sofa\n1st prompt: a red armchair\nObjects:\n- cat\n"
        );
        let msg = build_user_message(&ctx, PromptStage::FirstInpaint, &["cat".into()]);
        assert_eq!(msg, "Caption: a cat on a sofa\nObjects:\n- cat\n");
    }
}
