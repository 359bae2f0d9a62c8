//! Stacked noisy-or multiple-instance object detection with the per-timestep
//! relevance gate.
//!
//! Two detectors run once per scene: a per-region sigmoid layer pooled with a
//! noisy-or over regions, and an attention-style detector fed the mean-pooled
//! feature. A second noisy-or stacks the two. At each timestep a relu gate
//! driven by the language state rescales the stacked probabilities into an
//! unnormalized relevance vector, which an embedding matrix maps into word
//! space.

use crate::autodiff::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct DetectorVars {
    /// Per-region sigmoid layer `[object_count, feature_dim]` + bias.
    pub region_w: Var,
    pub region_b: Var,
    /// Two-layer detector on the mean feature.
    pub att_w1: Var,
    pub att_b1: Var,
    pub att_w2: Var,
    pub att_b2: Var,
    /// Gate projections from the previous language state and the attended
    /// feature.
    pub gate_w_state: Var,
    pub gate_w_feature: Var,
    /// Object embedding `[object_count, embed_dim]`, one row per object.
    pub obj_embed: Var,
}

/// Per-region object probabilities: sigmoid layer over each region feature.
/// Takes one feature vector per region; output is
/// `[region_count, object_count]`.
pub fn region_object_probs(tape: &mut Tape, p: &DetectorVars, regions: &[Var]) -> Result<Var> {
    let mut rows = Vec::with_capacity(regions.len());
    for &region in regions {
        let pre = tape.matmul(p.region_w, region)?;
        let pre = tape.add(pre, p.region_b)?;
        rows.push(tape.sigmoid(pre));
    }
    let obj_count = tape.shape(rows[0])[0];
    let stacked = tape.concat(&rows)?;
    tape.reshape(stacked, vec![regions.len(), obj_count])
}

/// Noisy-or pooling over regions: `[region_count, object_count]` down to
/// `[object_count]`.
pub fn noisy_or(tape: &mut Tape, region_probs: Var) -> Result<Var> {
    tape.noisy_or(region_probs)
}

/// Whole-image detector: a two-layer network on the mean-pooled feature,
/// sigmoid-activated.
pub fn attention_mil(tape: &mut Tape, p: &DetectorVars, mean_feature: Var) -> Result<Var> {
    let h = tape.matmul(p.att_w1, mean_feature)?;
    let h = tape.add(h, p.att_b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(p.att_w2, h)?;
    let out = tape.add(out, p.att_b2)?;
    Ok(tape.sigmoid(out))
}

/// Combines the two detector outputs with a second noisy-or:
/// `1 - (1 - a)(1 - b)`.
pub fn stack_noisy_or(tape: &mut Tape, or_probs: Var, att_probs: Var) -> Result<Var> {
    let one = tape.scalar(1.0);
    let miss_or = tape.sub(one, or_probs)?;
    let miss_att = tape.sub(one, att_probs)?;
    let miss_both = tape.mul(miss_or, miss_att)?;
    tape.sub(one, miss_both)
}

/// Per-timestep refinement: a relu gate over the previous language state and
/// the attended feature, multiplied elementwise into the image-level
/// probabilities. The result is an unnormalized relevance vector (the gate is
/// unbounded above); a non-positive gate coordinate zeroes its object.
pub fn gate_detections(
    tape: &mut Tape,
    p: &DetectorVars,
    prev_language_state: Var,
    attended_feature: Var,
    image_probs: Var,
) -> Result<Var> {
    let from_state = tape.matmul(p.gate_w_state, prev_language_state)?;
    let from_feature = tape.matmul(p.gate_w_feature, attended_feature)?;
    let pre = tape.add(from_state, from_feature)?;
    let gate = tape.relu(pre);
    tape.mul(gate, image_probs)
}

/// Maps a relevance vector over objects into word-embedding space.
pub fn object_word_vector(tape: &mut Tape, p: &DetectorVars, relevance: Var) -> Result<Var> {
    tape.vec_mat(relevance, p.obj_embed)
}
