//! LSTM cells and the region attention mechanism.

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Tape handles for one LSTM's gate matrices and biases. Each gate matrix
/// acts on the concatenation `[input; hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_forget: Var,
    pub w_cell: Var,
    pub w_output: Var,
    pub b_input: Var,
    pub b_forget: Var,
    pub b_cell: Var,
    pub b_output: Var,
}

/// Standard gated LSTM update: returns `(h', c')`.
pub fn lstm_cell_step(
    tape: &mut Tape,
    p: &LstmVars,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let z = tape.concat(&[x, h])?;
    let pre_i = tape.matmul(p.w_input, z)?;
    let pre_i = tape.add(pre_i, p.b_input)?;
    let pre_f = tape.matmul(p.w_forget, z)?;
    let pre_f = tape.add(pre_f, p.b_forget)?;
    let pre_g = tape.matmul(p.w_cell, z)?;
    let pre_g = tape.add(pre_g, p.b_cell)?;
    let pre_o = tape.matmul(p.w_output, z)?;
    let pre_o = tape.add(pre_o, p.b_output)?;

    let gate_i = tape.sigmoid(pre_i);
    let gate_f = tape.sigmoid(pre_f);
    let gate_g = tape.tanh(pre_g);
    let gate_o = tape.sigmoid(pre_o);

    let keep = tape.mul(gate_f, c)?;
    let write = tape.mul(gate_i, gate_g)?;
    let c_next = tape.add(keep, write)?;
    let c_act = tape.tanh(c_next);
    let h_next = tape.mul(gate_o, c_act)?;
    Ok((h_next, c_next))
}

/// Region attention parameters: feature projection, query projection, and
/// the scoring row vector.
#[derive(Debug, Clone, Copy)]
pub struct RegionAttentionVars {
    /// `[attn_dim, feature_dim]`
    pub w_feature: Var,
    /// `[attn_dim, hidden_dim]`
    pub w_query: Var,
    /// `[1, attn_dim]`
    pub w_score: Var,
}

/// Scores each region against the query and pools the feature columns with
/// the resulting softmax weights. `features` is `[feature_dim, region_count]`
/// (one column per region). Returns `(weights, attended_feature)`.
pub fn region_attention(
    tape: &mut Tape,
    p: &RegionAttentionVars,
    features: Var,
    query: Var,
) -> Result<(Var, Var)> {
    let projected = tape.matmul(p.w_feature, features)?;
    let query_proj = tape.matmul(p.w_query, query)?;
    let combined = tape.add_col(projected, query_proj)?;
    let activated = tape.tanh(combined);
    let scores = tape.matmul(p.w_score, activated)?;
    let region_count = tape.shape(scores)[1];
    let scores = tape.reshape(scores, vec![region_count])?;
    let weights = tape.softmax(scores)?;
    let attended = tape.matmul(features, weights)?;
    Ok((weights, attended))
}
