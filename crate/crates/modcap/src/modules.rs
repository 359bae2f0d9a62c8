//! The five attribute modules and the adaptive module-attention composition.
//!
//! Each module is a small two-layer network that maps the attended region
//! feature, the previous language state, and the detected-object word vector
//! to a distribution over its own label set, then embeds that distribution as
//! a word vector. Module attention scores the five module word vectors plus
//! the initial-estimation word vector, blends the modules with the k-way
//! softmax, and mixes the result with the initial estimation through the
//! (k+1)-way gate weight.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::vocab::CATEGORIES;

/// One attribute module: two-layer network plus its label embedding
/// (`[label_count, embed_dim]`, one row per label).
#[derive(Debug, Clone, Copy)]
pub struct ModuleVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub label_embed: Var,
}

/// Shared module-attention projections.
#[derive(Debug, Clone, Copy)]
pub struct ModuleAttentionVars {
    /// Scoring row `[1, attn_dim]`, shared by all slots.
    pub w_score: Var,
    /// Module word-vector projection `[attn_dim, embed_dim]`.
    pub w_module: Var,
    /// Language-state projection `[attn_dim, hidden_dim]`.
    pub w_state: Var,
    /// Initial-estimation projection `[attn_dim, embed_dim]`.
    pub w_init: Var,
}

/// Composition outputs for one timestep.
#[derive(Debug, Clone, Copy)]
pub struct Composition {
    /// Distribution over the k+1 slots (five modules then the
    /// initial-estimation slot).
    pub slot_attention: Var,
    /// Weight of the initial-estimation slot.
    pub init_weight: Var,
    /// Blended word vector fed to the language LSTM.
    pub composed: Var,
}

/// Distribution over module `module_idx`'s labels from the current visual and
/// language context.
pub fn module_predict(
    tape: &mut Tape,
    modules: &[ModuleVars],
    module_idx: usize,
    attended_feature: Var,
    prev_language_state: Var,
    object_word_vec: Var,
) -> Result<Var> {
    let m = modules.get(module_idx).ok_or_else(|| {
        Error::Contract(format!(
            "unknown module index {module_idx}, have {}",
            CATEGORIES.len()
        ))
    })?;
    let input = tape.concat(&[attended_feature, prev_language_state, object_word_vec])?;
    let hidden = tape.matmul(m.w1, input)?;
    let hidden = tape.add(hidden, m.b1)?;
    let hidden = tape.relu(hidden);
    let logits = tape.matmul(m.w2, hidden)?;
    let logits = tape.add(logits, m.b2)?;
    tape.softmax(logits)
}

/// Expected label embedding under a module's distribution.
pub fn module_word_vector(tape: &mut Tape, module: &ModuleVars, dist: Var) -> Result<Var> {
    tape.vec_mat(dist, module.label_embed)
}

/// Adaptive composition: scores each module word vector and the
/// initial-estimation vector, then blends.
///
/// The k-way softmax over module scores weights the module word vectors into
/// a module summary `c_t`; the (k+1)-way softmax (same scores plus the init
/// slot) supplies the blend weight `beta = slot_attention[k]`, giving
/// `composed = beta * init + (1 - beta) * c_t`.
pub fn module_attention(
    tape: &mut Tape,
    p: &ModuleAttentionVars,
    module_word_vecs: &[Var],
    init_word_vec: Var,
    prev_language_state: Var,
) -> Result<Composition> {
    let state_proj = tape.matmul(p.w_state, prev_language_state)?;

    let mut scores = Vec::with_capacity(module_word_vecs.len() + 1);
    for &wv in module_word_vecs {
        let proj = tape.matmul(p.w_module, wv)?;
        let pre = tape.add(proj, state_proj)?;
        let act = tape.tanh(pre);
        let score = tape.matmul(p.w_score, act)?;
        scores.push(tape.reshape(score, vec![1])?);
    }
    let init_proj = tape.matmul(p.w_init, init_word_vec)?;
    let init_pre = tape.add(init_proj, state_proj)?;
    let init_act = tape.tanh(init_pre);
    let init_score = tape.matmul(p.w_score, init_act)?;
    scores.push(tape.reshape(init_score, vec![1])?);

    let all_scores = tape.concat(&scores)?;
    let slot_attention = tape.softmax(all_scores)?;
    let init_weight = tape.pick(slot_attention, module_word_vecs.len())?;

    let module_scores = tape.slice(all_scores, 0, module_word_vecs.len())?;
    let module_weights = tape.softmax(module_scores)?;
    let mut summary = None;
    for (i, &wv) in module_word_vecs.iter().enumerate() {
        let w = tape.pick(module_weights, i)?;
        let term = tape.mul(wv, w)?;
        summary = Some(match summary {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let summary = summary.ok_or_else(|| Error::Contract("no module word vectors".into()))?;

    let init_part = tape.mul(init_word_vec, init_weight)?;
    let neg = tape.scale(init_weight, -1.0);
    let complement = tape.add_const(neg, 1.0);
    let module_part = tape.mul(summary, complement)?;
    let composed = tape.add(init_part, module_part)?;

    Ok(Composition {
        slot_attention,
        init_weight,
        composed,
    })
}
