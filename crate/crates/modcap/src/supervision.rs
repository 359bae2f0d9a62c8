//! Per-timestep supervision derived from a caption and the lexicon.

use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::vocab::{SubcategoryLexicon, Vocabulary, INIT_SLOT};

/// Supervision for one timestep of a teacher-forced caption.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSupervision {
    /// One flag per attribute module; true iff the target token belongs to
    /// that module's subcategory. At most one flag is set (the sets are
    /// disjoint).
    pub module_masks: [bool; 5],
    /// Label index within the active module's label set.
    pub module_label: Option<usize>,
    /// Active slot of the (k+1)-way module attention: a module index, or
    /// [`INIT_SLOT`] when no attribute set matches.
    pub active_slot: usize,
}

impl StepSupervision {
    /// OR over the five masks.
    pub fn any_mask(&self) -> bool {
        self.module_masks.iter().any(|&m| m)
    }
}

/// Maps each target token to its module mask, label, and active slot. Tokens
/// outside every attribute set (objects, fillers, `<eos>`) activate the
/// initial-estimation slot.
pub fn derive_supervision(
    target_tokens: &[String],
    lexicon: &SubcategoryLexicon,
) -> Vec<StepSupervision> {
    target_tokens
        .iter()
        .map(|token| match lexicon.category_of(token) {
            Some(cat) => {
                let mut masks = [false; 5];
                masks[cat.index()] = true;
                StepSupervision {
                    module_masks: masks,
                    module_label: lexicon.label_index(cat, token),
                    active_slot: cat.index(),
                }
            }
            None => StepSupervision {
                module_masks: [false; 5],
                module_label: None,
                active_slot: INIT_SLOT,
            },
        })
        .collect()
}

/// One teacher-forcing training example: an encoded caption plus all
/// word-level supervision and the scene's multi-hot object targets.
#[derive(Debug, Clone)]
pub struct CaptionExample {
    pub scene_index: usize,
    /// `<bos> w_1 .. w_n <eos>` as vocabulary ids.
    pub token_ids: Vec<usize>,
    /// Supervision for each of the `token_ids.len() - 1` prediction steps.
    pub steps: Vec<StepSupervision>,
    /// Multi-hot vector over the lexicon's object list.
    pub object_targets: Vec<f64>,
}

impl CaptionExample {
    /// Builds the example for `scene.references[reference]`.
    pub fn from_scene(
        scene_index: usize,
        scene: &Scene,
        reference: usize,
        vocab: &Vocabulary,
        lexicon: &SubcategoryLexicon,
    ) -> Result<Self> {
        let tokens = scene.references.get(reference).ok_or_else(|| {
            Error::Contract(format!(
                "scene {} has {} references, asked for {reference}",
                scene.id,
                scene.references.len()
            ))
        })?;
        let token_ids = vocab.encode_caption(tokens);
        // targets are everything after <bos>, including <eos>
        let mut target_tokens: Vec<String> = tokens.clone();
        target_tokens.push(vocab.token(crate::vocab::EOS).to_string());
        let steps = derive_supervision(&target_tokens, lexicon);

        let mut object_targets = vec![0.0; lexicon.object_count()];
        for obj in &scene.gt_objects {
            if let Some(i) = lexicon.object_index(obj) {
                object_targets[i] = 1.0;
            }
        }
        Ok(CaptionExample {
            scene_index,
            token_ids,
            steps,
            object_targets,
        })
    }

    pub fn step_count(&self) -> usize {
        self.token_ids.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneGenConfig};
    use crate::vocab::{Category, CATEGORIES};
    use proptest::prelude::*;

    fn words(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_red_cats_supervision() {
        let lex = SubcategoryLexicon::desk();
        let sup = derive_supervision(&words(&["two", "red", "cats"]), &lex);
        assert_eq!(sup[0].active_slot, Category::Count.index());
        assert_eq!(
            sup[0].module_label,
            lex.label_index(Category::Count, "two")
        );
        assert!(sup[0].module_masks[Category::Count.index()]);
        assert_eq!(sup[1].active_slot, Category::Color.index());
        assert_eq!(sup[2].active_slot, INIT_SLOT);
        assert!(!sup[2].any_mask());
        assert_eq!(sup[2].module_label, None);
    }

    #[test]
    fn caption_without_attributes_has_all_masks_false() {
        let lex = SubcategoryLexicon::desk();
        let sup = derive_supervision(&words(&["a", "cat", "and", "a", "dog"]), &lex);
        assert!(sup.iter().all(|s| !s.any_mask()));
        assert!(sup.iter().all(|s| s.active_slot == INIT_SLOT));
    }

    #[test]
    fn object_tokens_use_the_init_slot() {
        let lex = SubcategoryLexicon::desk();
        let sup = derive_supervision(&words(&["cat"]), &lex);
        assert_eq!(sup[0].active_slot, INIT_SLOT);
        assert!(!sup[0].any_mask());
    }

    #[test]
    fn example_covers_every_prediction_step() {
        let lex = SubcategoryLexicon::desk();
        let vocab = lex.vocabulary();
        let scene = generate_scene(1, 0, &lex, &SceneGenConfig::desk()).unwrap();
        let ex = CaptionExample::from_scene(0, &scene, 0, &vocab, &lex).unwrap();
        assert_eq!(ex.steps.len(), ex.step_count());
        assert_eq!(ex.token_ids[0], crate::vocab::BOS);
        assert_eq!(*ex.token_ids.last().unwrap(), crate::vocab::EOS);
        let expected: usize = scene
            .gt_objects
            .iter()
            .filter_map(|o| lex.object_index(o))
            .count();
        let hot = ex.object_targets.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(hot, expected);
    }

    proptest! {
        /// Exactly one slot is active per timestep and a set mask implies
        /// membership of the token in that module's label set.
        #[test]
        fn masks_imply_membership(seed in 0u64..500) {
            let lex = SubcategoryLexicon::desk();
            let cfg = SceneGenConfig::desk();
            let scene = generate_scene(seed, seed, &lex, &cfg).unwrap();
            for reference in &scene.references {
                let sup = derive_supervision(reference, &lex);
                for (token, s) in reference.iter().zip(&sup) {
                    let set: usize = s.module_masks.iter().filter(|&&m| m).count();
                    prop_assert!(set <= 1);
                    if set == 1 {
                        let cat = CATEGORIES[s.module_masks.iter().position(|&m| m).unwrap()];
                        prop_assert_eq!(lex.category_of(token), Some(cat));
                        prop_assert_eq!(s.active_slot, cat.index());
                        prop_assert!(s.module_label.is_some());
                    } else {
                        prop_assert_eq!(s.active_slot, INIT_SLOT);
                    }
                }
            }
        }
    }
}
