//! The training objective: two sentence-level cross entropies, two detector
//! losses, five masked attribute-module losses, and the composition loss,
//! summed unweighted.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Ablation, SceneContext, StepOutputs};
use crate::supervision::{CaptionExample, StepSupervision};
use crate::vocab::CATEGORIES;

const PROB_FLOOR: f64 = 1e-12;

/// Cross entropy of a teacher-forced head: `-sum_t ln p_t[target_t]`.
/// Exactly zero when every target has probability one.
pub fn sentence_loss(tape: &mut Tape, step_dists: &[Var], targets: &[usize]) -> Result<Var> {
    if step_dists.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} step distributions for {} targets",
            step_dists.len(),
            targets.len()
        )));
    }
    let mut total = tape.scalar(0.0);
    for (&dist, &target) in step_dists.iter().zip(targets) {
        let p = tape.pick(dist, target)?;
        let p = tape.clamp(p, PROB_FLOOR, f64::INFINITY);
        let lp = tape.ln(p);
        total = tape.sub(total, lp)?;
    }
    Ok(total)
}

/// Sigmoid cross entropy of detector probabilities against a multi-hot
/// target. Probabilities are clamped into `[1e-12, 1 - 1e-12]`, never
/// rejected.
pub fn mil_loss(tape: &mut Tape, probs: Var, targets: &[f64]) -> Result<Var> {
    let n = tape.values(probs).len();
    if n != targets.len() {
        return Err(Error::Contract(format!(
            "{} probabilities for {} object targets",
            n,
            targets.len()
        )));
    }
    let clamped = tape.clamp(probs, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let pos_mask = tape.constant(targets.to_vec(), vec![n])?;
    let neg_mask = tape.constant(targets.iter().map(|&y| 1.0 - y).collect(), vec![n])?;

    let log_p = tape.ln(clamped);
    let pos_terms = tape.mul(log_p, pos_mask)?;
    let one = tape.scalar(1.0);
    let miss = tape.sub(one, clamped)?;
    let log_miss = tape.ln(miss);
    let neg_terms = tape.mul(log_miss, neg_mask)?;

    let pos_sum = tape.sum(pos_terms);
    let neg_sum = tape.sum(neg_terms);
    let total = tape.add(pos_sum, neg_sum)?;
    Ok(tape.scale(total, -1.0))
}

/// Binary cross entropy of a distribution against a one-hot target:
/// `-ln p[hot] - sum_{j != hot} ln(1 - p[j])`. Exactly zero for a one-hot
/// prediction on the right label.
fn one_hot_bce(tape: &mut Tape, dist: Var, hot: usize) -> Result<Var> {
    let n = tape.values(dist).len();
    if hot >= n {
        return Err(Error::Contract(format!(
            "label {hot} outside distribution of size {n}"
        )));
    }
    let mut pos_mask = vec![0.0; n];
    pos_mask[hot] = 1.0;
    let neg_mask: Vec<f64> = pos_mask.iter().map(|&y| 1.0 - y).collect();

    let floored = tape.clamp(dist, PROB_FLOOR, f64::INFINITY);
    let log_p = tape.ln(floored);
    let pos = tape.constant(pos_mask, vec![n])?;
    let pos_terms = tape.mul(log_p, pos)?;

    let one = tape.scalar(1.0);
    let miss = tape.sub(one, dist)?;
    let miss = tape.clamp(miss, PROB_FLOOR, f64::INFINITY);
    let log_miss = tape.ln(miss);
    let neg = tape.constant(neg_mask, vec![n])?;
    let neg_terms = tape.mul(log_miss, neg)?;

    let pos_sum = tape.sum(pos_terms);
    let neg_sum = tape.sum(neg_terms);
    let total = tape.add(pos_sum, neg_sum)?;
    Ok(tape.scale(total, -1.0))
}

/// Masked cross entropy for one attribute module: timesteps whose mask is
/// off contribute exactly nothing (they are skipped outright).
pub fn attribute_module_loss(
    tape: &mut Tape,
    steps: &[StepOutputs],
    supervision: &[StepSupervision],
    module_idx: usize,
) -> Result<Var> {
    let mut total = tape.scalar(0.0);
    for (step, sup) in steps.iter().zip(supervision) {
        if !sup.module_masks[module_idx] {
            continue;
        }
        let label = sup.module_label.ok_or_else(|| {
            Error::Contract(format!(
                "masked step for module {module_idx} carries no label"
            ))
        })?;
        let dists = step
            .module_dists
            .as_ref()
            .ok_or_else(|| Error::Contract("module loss requested without modules".into()))?;
        let term = one_hot_bce(tape, dists[module_idx], label)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Masked cross entropy pushing the slot attention toward the active module
/// slot wherever any attribute is supervised.
pub fn composition_loss(
    tape: &mut Tape,
    steps: &[StepOutputs],
    supervision: &[StepSupervision],
) -> Result<Var> {
    let mut total = tape.scalar(0.0);
    for (step, sup) in steps.iter().zip(supervision) {
        if !sup.any_mask() {
            continue;
        }
        let slots = step
            .slot_attention
            .ok_or_else(|| Error::Contract("composition loss requested without modules".into()))?;
        let term = one_hot_bce(tape, slots, sup.active_slot)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// All loss terms for one training item, plus their unweighted sum. Terms
/// excluded by ablation or the detector schedule are absent.
pub struct LossTerms {
    pub sentence_visual: Var,
    pub sentence_language: Var,
    pub mil_noisy_or: Option<Var>,
    pub mil_attention: Option<Var>,
    pub attribute_modules: Option<Var>,
    pub composition: Option<Var>,
    pub total: Var,
}

/// Plain values of the terms, for logging; absent terms report 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub sentence_visual: f64,
    pub sentence_language: f64,
    pub mil_noisy_or: f64,
    pub mil_attention: f64,
    pub attribute_modules: f64,
    pub composition: f64,
    pub total: f64,
}

impl LossValues {
    /// `(name, value)` pairs in a fixed order.
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("sentence_visual", self.sentence_visual),
            ("sentence_language", self.sentence_language),
            ("mil_noisy_or", self.mil_noisy_or),
            ("mil_attention", self.mil_attention),
            ("attribute_modules", self.attribute_modules),
            ("composition", self.composition),
            ("total", self.total),
        ]
    }

    pub fn add(&mut self, other: &LossValues) {
        self.sentence_visual += other.sentence_visual;
        self.sentence_language += other.sentence_language;
        self.mil_noisy_or += other.mil_noisy_or;
        self.mil_attention += other.mil_attention;
        self.attribute_modules += other.attribute_modules;
        self.composition += other.composition;
        self.total += other.total;
    }

    pub fn scale(&mut self, factor: f64) {
        self.sentence_visual *= factor;
        self.sentence_language *= factor;
        self.mil_noisy_or *= factor;
        self.mil_attention *= factor;
        self.attribute_modules *= factor;
        self.composition *= factor;
        self.total *= factor;
    }
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let val = |v: Option<Var>| v.map_or(0.0, |v| tape.value_scalar(v));
        LossValues {
            sentence_visual: tape.value_scalar(self.sentence_visual),
            sentence_language: tape.value_scalar(self.sentence_language),
            mil_noisy_or: val(self.mil_noisy_or),
            mil_attention: val(self.mil_attention),
            attribute_modules: val(self.attribute_modules),
            composition: val(self.composition),
            total: tape.value_scalar(self.total),
        }
    }
}

/// Assembles every applicable loss term for one teacher-forced caption.
/// `include_mil` reflects the detector training schedule; the detector
/// losses also vanish under `no_mil` (and the attention branch under
/// `no_attention_mil`).
pub fn caption_loss(
    tape: &mut Tape,
    ablation: Ablation,
    ctx: &SceneContext,
    steps: &[StepOutputs],
    example: &CaptionExample,
    include_mil: bool,
) -> Result<LossTerms> {
    let targets = &example.token_ids[1..];
    let init_dists: Vec<Var> = steps.iter().map(|s| s.init_dist).collect();
    let word_dists: Vec<Var> = steps.iter().map(|s| s.word_dist).collect();
    let sentence_visual = sentence_loss(tape, &init_dists, targets)?;
    let sentence_language = sentence_loss(tape, &word_dists, targets)?;

    let (mil_noisy_or, mil_attention) = match (&ctx.detection, include_mil) {
        (Some(det), true) => {
            let or_loss = mil_loss(tape, det.or_probs, &example.object_targets)?;
            let att_loss = match det.att_probs {
                Some(att) => Some(mil_loss(tape, att, &example.object_targets)?),
                None => None,
            };
            (Some(or_loss), att_loss)
        }
        _ => (None, None),
    };

    let (attribute_modules, composition) = if ablation.no_modules {
        (None, None)
    } else {
        let mut module_sum = tape.scalar(0.0);
        for idx in 0..CATEGORIES.len() {
            let term = attribute_module_loss(tape, steps, &example.steps, idx)?;
            module_sum = tape.add(module_sum, term)?;
        }
        let comp = composition_loss(tape, steps, &example.steps)?;
        (Some(module_sum), Some(comp))
    };

    let mut total = tape.add(sentence_visual, sentence_language)?;
    for term in [mil_noisy_or, mil_attention, attribute_modules, composition]
        .into_iter()
        .flatten()
    {
        total = tape.add(total, term)?;
    }

    Ok(LossTerms {
        sentence_visual,
        sentence_language,
        mil_noisy_or,
        mil_attention,
        attribute_modules,
        composition,
        total,
    })
}
