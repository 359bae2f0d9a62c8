//! Greedy decoding and the per-timestep attention trace.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{forward_step, scene_context, slot_attention_values, Ablation, Model, TrioState};
use crate::scene::Scene;
use crate::vocab::{BOS, CATEGORIES, EOS};

/// Recorded intermediates for one emitted token.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub token: String,
    /// Attention over the five modules plus the initial-estimation slot.
    pub module_attention: Vec<f64>,
    pub init_weight: f64,
    pub region_attention: Vec<f64>,
    pub region_argmax: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedCaption {
    /// Emitted tokens, `<bos>` excluded, stopped before `<eos>`.
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub trace: Vec<StepTrace>,
}

impl DecodedCaption {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Argmax with ties broken toward the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding: at each step emit the argmax of the word distribution
/// and feed it back, stopping at `<eos>` or `max_len` tokens.
pub fn greedy_decode(
    model: &Model,
    ablation: Ablation,
    scene: &Scene,
    max_len: usize,
) -> Result<DecodedCaption> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let ctx = scene_context(&mut tape, &bound, &model.config, ablation, scene)?;
    let mut state = TrioState::zeros(&mut tape, model.config.hidden_dim);

    let mut tokens = Vec::new();
    let mut token_ids = Vec::new();
    let mut trace = Vec::new();
    let mut prev = BOS;
    for _ in 0..max_len {
        let (step, next_state) =
            forward_step(&mut tape, &bound, &model.config, ablation, &ctx, prev, &state)?;
        let dist = tape.values(step.word_dist);
        let choice = argmax(dist);
        if choice == EOS {
            break;
        }
        let region_attention = tape.values(step.region_attention).to_vec();
        trace.push(StepTrace {
            token: model.vocab.token(choice).to_string(),
            module_attention: slot_attention_values(&tape, &step),
            init_weight: tape.value_scalar(step.init_weight),
            region_argmax: argmax(&region_attention),
            region_attention,
        });
        tokens.push(model.vocab.token(choice).to_string());
        token_ids.push(choice);
        state = next_state;
        prev = choice;
    }

    Ok(DecodedCaption {
        tokens,
        token_ids,
        trace,
    })
}

/// Writes the module-attention trace as CSV: one row per emitted token with
/// the six attention weights, the init weight, and the attended region.
pub fn export_attention_trace(caption: &DecodedCaption, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let module_cols: Vec<&str> = CATEGORIES.iter().map(|c| c.name()).collect();
    writeln!(w, "token,{},init_est,beta,region_argmax", module_cols.join(","))?;
    for step in &caption.trace {
        let attention: Vec<String> = step.module_attention.iter().map(f64::to_string).collect();
        writeln!(
            w,
            "{},{},{},{}",
            step.token,
            attention.join(","),
            step.init_weight,
            step.region_argmax
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace CSV back into rows of `(token, attention, beta, argmax)`.
pub fn parse_attention_trace(path: &Path) -> Result<Vec<(String, Vec<f64>, f64, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CATEGORIES.len() + 4 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {} fields, got {}", CATEGORIES.len() + 4, fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad float `{s}`: {e}"),
            })
        };
        let attention: Vec<f64> = fields[1..=CATEGORIES.len() + 1]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<_>>()?;
        let beta = parse(fields[CATEGORIES.len() + 2])?;
        let argmax = fields[CATEGORIES.len() + 3]
            .parse()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad index: {e}"),
            })?;
        rows.push((fields[0].to_string(), attention, beta, argmax));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::scene::{generate_scene, SceneGenConfig};
    use crate::vocab::SubcategoryLexicon;

    fn desk_model(seed: u64) -> Model {
        let lexicon = SubcategoryLexicon::desk();
        let vocab = lexicon.vocabulary();
        Model::new(ModelConfig::desk(), vocab, lexicon, seed)
    }

    fn desk_scene(seed: u64) -> Scene {
        generate_scene(seed, 0, &SubcategoryLexicon::desk(), &SceneGenConfig::desk()).unwrap()
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 1.0]), 2);
    }

    #[test]
    fn decode_is_deterministic() {
        let model = desk_model(1);
        let scene = desk_scene(2);
        let a = greedy_decode(&model, Ablation::complete(), &scene, 12).unwrap();
        let b = greedy_decode(&model, Ablation::complete(), &scene, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decode_respects_max_len_and_excludes_specials() {
        let model = desk_model(3);
        let scene = desk_scene(4);
        let decoded = greedy_decode(&model, Ablation::complete(), &scene, 7).unwrap();
        assert!(decoded.tokens.len() <= 7);
        assert!(!decoded.tokens.iter().any(|t| t == "<bos>" || t == "<pad>"));
        assert_eq!(decoded.trace.len(), decoded.tokens.len());
    }

    #[test]
    fn trace_rows_align_with_tokens_and_sum_to_one() {
        let model = desk_model(5);
        let scene = desk_scene(6);
        let decoded = greedy_decode(&model, Ablation::complete(), &scene, 10).unwrap();
        for (token, step) in decoded.tokens.iter().zip(&decoded.trace) {
            assert_eq!(token, &step.token);
            let sum: f64 = step.module_attention.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert_eq!(step.module_attention.len(), 6);
            assert_eq!(step.module_attention[5], step.init_weight);
        }
    }

    #[test]
    fn trace_csv_round_trips_to_1e9() {
        let model = desk_model(7);
        let scene = desk_scene(8);
        let decoded = greedy_decode(&model, Ablation::complete(), &scene, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        export_attention_trace(&decoded, &path).unwrap();
        let rows = parse_attention_trace(&path).unwrap();
        assert_eq!(rows.len(), decoded.trace.len());
        for (row, step) in rows.iter().zip(&decoded.trace) {
            assert_eq!(row.0, step.token);
            for (a, b) in row.1.iter().zip(&step.module_attention) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!((row.2 - step.init_weight).abs() < 1e-9);
            assert_eq!(row.3, step.region_argmax);
        }
        // header names match module names
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "token,color,count,size,spatial,semantic,init_est,beta,region_argmax"
        );
    }
}
