//! Model configuration, parameter layout, and the per-timestep forward pass
//! that wires the attention LSTM, region attention, visual LSTM, object
//! gating, attribute modules, module attention, and language LSTM together.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::captioner::{lstm_cell_step, region_attention, LstmVars, RegionAttentionVars};
use crate::detection::{
    attention_mil, gate_detections, noisy_or, object_word_vector, region_object_probs,
    stack_noisy_or, DetectorVars,
};
use crate::error::{Error, Result};
use crate::modules::{
    module_attention, module_predict, module_word_vector, ModuleAttentionVars, ModuleVars,
};
use crate::scene::Scene;
use crate::tensor::{ParamStore, Tensor};
use crate::vocab::{SubcategoryLexicon, Vocabulary, CATEGORIES, INIT_SLOT};

const INIT_RANGE: f64 = 0.08;

/// Model dimensions. The lexicon supplies vocabulary size, object count, and
/// per-module label counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            feature_dim: 64,
            hidden_dim: 64,
            embed_dim: 32,
        }
    }

    /// Full-scale dimensions (not a test target).
    pub fn paper() -> Self {
        ModelConfig {
            feature_dim: 2048,
            hidden_dim: 512,
            embed_dim: 300,
        }
    }
}

/// Which parts of the model are disabled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Drop the attribute modules: the composed vector is the
    /// initial-estimation word vector and the module losses vanish.
    pub no_modules: bool,
    /// Drop object detection: the object word vector is zero and the
    /// detection losses vanish.
    pub no_mil: bool,
    /// Drop the whole-image detector branch: the image probability is the
    /// region noisy-or alone.
    pub no_attention_mil: bool,
}

impl Ablation {
    pub fn complete() -> Self {
        Ablation::default()
    }

    pub fn label(&self) -> String {
        let mut dropped = Vec::new();
        if self.no_modules {
            dropped.push("mod");
        }
        if self.no_mil {
            dropped.push("mil");
        }
        if self.no_attention_mil {
            dropped.push("amil");
        }
        if dropped.is_empty() {
            "complete".to_string()
        } else {
            format!("no_{}", dropped.join("+no_"))
        }
    }
}

/// LSTM identifiers used in parameter names.
const LSTM_BLOCKS: [&str; 3] = ["a_lstm", "v_lstm", "s_lstm"];

/// The full model: dimensions, token machinery, and learnable parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub lexicon: SubcategoryLexicon,
    pub params: ParamStore,
}

impl Model {
    /// Every parameter name and shape, in one place; initialization and
    /// checkpoint validation both derive from this list.
    pub fn param_shapes(
        config: &ModelConfig,
        vocab: &Vocabulary,
        lexicon: &SubcategoryLexicon,
    ) -> Vec<(String, Vec<usize>)> {
        let d_v = config.feature_dim;
        let d_h = config.hidden_dim;
        let d_e = config.embed_dim;
        let d_voc = vocab.len();
        let d_obj = lexicon.object_count();

        let mut shapes = vec![("embed.E".to_string(), vec![d_voc, d_e])];

        let lstm_inputs = [
            d_h + d_v + d_e, // a_lstm: [language state; mean feature; prev word]
            d_v + d_h,       // v_lstm: [attended feature; attention state]
            d_h + d_e + d_e, // s_lstm: [visual state; object word; composed word]
        ];
        for (name, d_in) in LSTM_BLOCKS.iter().zip(lstm_inputs) {
            for gate in ["i", "f", "g", "o"] {
                shapes.push((format!("{name}.W_{gate}"), vec![d_h, d_in + d_h]));
                shapes.push((format!("{name}.b_{gate}"), vec![d_h]));
            }
        }

        shapes.push(("attn.W_v".to_string(), vec![d_h, d_v]));
        shapes.push(("attn.W_o".to_string(), vec![d_h, d_h]));
        shapes.push(("attn.W_b".to_string(), vec![1, d_h]));

        shapes.push(("v_proj.W".to_string(), vec![d_voc, d_h]));
        shapes.push(("v_proj.b".to_string(), vec![d_voc]));
        shapes.push(("s_proj.W".to_string(), vec![d_voc, d_h]));
        shapes.push(("s_proj.b".to_string(), vec![d_voc]));

        shapes.push(("det.region.W".to_string(), vec![d_obj, d_v]));
        shapes.push(("det.region.b".to_string(), vec![d_obj]));
        shapes.push(("det.att.W_1".to_string(), vec![d_h, d_v]));
        shapes.push(("det.att.b_1".to_string(), vec![d_h]));
        shapes.push(("det.att.W_2".to_string(), vec![d_obj, d_h]));
        shapes.push(("det.att.b_2".to_string(), vec![d_obj]));
        shapes.push(("det.gate.W_h".to_string(), vec![d_obj, d_h]));
        shapes.push(("det.gate.W_v".to_string(), vec![d_obj, d_v]));
        shapes.push(("det.E_obj".to_string(), vec![d_obj, d_e]));

        for cat in CATEGORIES {
            let labels = lexicon.labels(cat).len();
            let name = cat.name();
            shapes.push((format!("mod.{name}.W_1"), vec![d_h, d_v + d_h + d_e]));
            shapes.push((format!("mod.{name}.b_1"), vec![d_h]));
            shapes.push((format!("mod.{name}.W_2"), vec![labels, d_h]));
            shapes.push((format!("mod.{name}.b_2"), vec![labels]));
            shapes.push((format!("mod.{name}.E_m"), vec![labels, d_e]));
        }

        shapes.push(("mattn.W_z".to_string(), vec![1, d_h]));
        shapes.push(("mattn.W_m".to_string(), vec![d_h, d_e]));
        shapes.push(("mattn.W_g".to_string(), vec![d_h, d_h]));
        shapes.push(("mattn.W_i".to_string(), vec![d_h, d_e]));

        shapes
    }

    /// Fresh model with uniform init in `[-0.08, 0.08]`, forget-gate biases
    /// set to 1.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        lexicon: SubcategoryLexicon,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in Self::param_shapes(&config, &vocab, &lexicon) {
            let mut tensor = Tensor::uniform(shape, -INIT_RANGE, INIT_RANGE, &mut rng);
            if name.ends_with(".b_f") {
                for v in tensor.values_mut() {
                    *v = 1.0;
                }
            }
            params.insert(name, tensor);
        }
        Model {
            config,
            vocab,
            lexicon,
            params,
        }
    }

    /// Wraps an existing parameter store, validating names and shapes.
    pub fn from_params(
        config: ModelConfig,
        vocab: Vocabulary,
        lexicon: SubcategoryLexicon,
        params: ParamStore,
    ) -> Result<Self> {
        let expected = Self::param_shapes(&config, &vocab, &lexicon);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, checkpoint has {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let tensor = params
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if tensor.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    tensor.shape(),
                    shape
                )));
            }
        }
        Ok(Model {
            config,
            vocab,
            lexicon,
            params,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundModel> {
        BoundModel::bind(tape, &self.params, &self.lexicon)
    }
}

/// All parameters of one tape instance, with names retained so gradients can
/// be harvested back into the store.
pub struct BoundModel {
    pub embed: Var,
    pub attn_lstm: LstmVars,
    pub visual_lstm: LstmVars,
    pub language_lstm: LstmVars,
    pub region_attn: RegionAttentionVars,
    pub visual_proj: (Var, Var),
    pub language_proj: (Var, Var),
    pub detector: DetectorVars,
    pub modules: Vec<ModuleVars>,
    pub module_attn: ModuleAttentionVars,
    named: Vec<(String, Var)>,
}

impl BoundModel {
    fn bind(tape: &mut Tape, params: &ParamStore, lexicon: &SubcategoryLexicon) -> Result<Self> {
        let mut named = Vec::with_capacity(params.len());
        let mut leaf = |tape: &mut Tape, name: &str| -> Result<Var> {
            let v = tape.leaf(params.get(name)?);
            named.push((name.to_string(), v));
            Ok(v)
        };

        let embed = leaf(tape, "embed.E")?;
        let mut lstms = Vec::new();
        for block in LSTM_BLOCKS {
            lstms.push(LstmVars {
                w_input: leaf(tape, &format!("{block}.W_i"))?,
                w_forget: leaf(tape, &format!("{block}.W_f"))?,
                w_cell: leaf(tape, &format!("{block}.W_g"))?,
                w_output: leaf(tape, &format!("{block}.W_o"))?,
                b_input: leaf(tape, &format!("{block}.b_i"))?,
                b_forget: leaf(tape, &format!("{block}.b_f"))?,
                b_cell: leaf(tape, &format!("{block}.b_g"))?,
                b_output: leaf(tape, &format!("{block}.b_o"))?,
            });
        }
        let language_lstm = lstms.pop().unwrap();
        let visual_lstm = lstms.pop().unwrap();
        let attn_lstm = lstms.pop().unwrap();

        let region_attn = RegionAttentionVars {
            w_feature: leaf(tape, "attn.W_v")?,
            w_query: leaf(tape, "attn.W_o")?,
            w_score: leaf(tape, "attn.W_b")?,
        };
        let visual_proj = (leaf(tape, "v_proj.W")?, leaf(tape, "v_proj.b")?);
        let language_proj = (leaf(tape, "s_proj.W")?, leaf(tape, "s_proj.b")?);

        let detector = DetectorVars {
            region_w: leaf(tape, "det.region.W")?,
            region_b: leaf(tape, "det.region.b")?,
            att_w1: leaf(tape, "det.att.W_1")?,
            att_b1: leaf(tape, "det.att.b_1")?,
            att_w2: leaf(tape, "det.att.W_2")?,
            att_b2: leaf(tape, "det.att.b_2")?,
            gate_w_state: leaf(tape, "det.gate.W_h")?,
            gate_w_feature: leaf(tape, "det.gate.W_v")?,
            obj_embed: leaf(tape, "det.E_obj")?,
        };

        let mut modules = Vec::with_capacity(CATEGORIES.len());
        for cat in CATEGORIES {
            let name = cat.name();
            modules.push(ModuleVars {
                w1: leaf(tape, &format!("mod.{name}.W_1"))?,
                b1: leaf(tape, &format!("mod.{name}.b_1"))?,
                w2: leaf(tape, &format!("mod.{name}.W_2"))?,
                b2: leaf(tape, &format!("mod.{name}.b_2"))?,
                label_embed: leaf(tape, &format!("mod.{name}.E_m"))?,
            });
        }
        let _ = lexicon;

        let module_attn = ModuleAttentionVars {
            w_score: leaf(tape, "mattn.W_z")?,
            w_module: leaf(tape, "mattn.W_m")?,
            w_state: leaf(tape, "mattn.W_g")?,
            w_init: leaf(tape, "mattn.W_i")?,
        };

        Ok(BoundModel {
            embed,
            attn_lstm,
            visual_lstm,
            language_lstm,
            region_attn,
            visual_proj,
            language_proj,
            detector,
            modules,
            module_attn,
            named,
        })
    }

    /// Harvests this tape's gradients into a name-keyed map.
    pub fn gradients_by_name(
        &self,
        grads: &crate::autodiff::Gradients,
    ) -> std::collections::BTreeMap<String, Vec<f64>> {
        self.named
            .iter()
            .filter_map(|(name, var)| grads.wrt(*var).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }

    pub fn var_of(&self, name: &str) -> Option<Var> {
        self.named
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

/// Scene-level constants and the once-per-scene detector outputs.
pub struct SceneContext {
    /// `[feature_dim, region_count]`, one column per region.
    pub feature_columns: Var,
    /// One constant vector per region.
    pub region_features: Vec<Var>,
    /// Mean-pooled feature.
    pub mean_feature: Var,
    pub detection: Option<SceneDetection>,
}

pub struct SceneDetection {
    /// `[region_count, object_count]` per-region probabilities.
    pub region_probs: Var,
    /// Region noisy-or pooling.
    pub or_probs: Var,
    /// Whole-image detector (present unless ablated away).
    pub att_probs: Option<Var>,
    /// Stacked image-level probabilities.
    pub image_probs: Var,
}

/// Builds tape constants for a scene and runs the time-independent detector
/// stack.
pub fn scene_context(
    tape: &mut Tape,
    bound: &BoundModel,
    config: &ModelConfig,
    ablation: Ablation,
    scene: &Scene,
) -> Result<SceneContext> {
    let d_v = config.feature_dim;
    let d_r = scene.region_count();
    if d_r == 0 {
        return Err(Error::Contract(format!("scene {} has no regions", scene.id)));
    }
    if scene.feature_dim() != d_v {
        return Err(Error::dimension(
            "scene feature width vs model config",
            &[scene.feature_dim()],
            &[d_v],
        ));
    }

    let mut columns = vec![0.0; d_v * d_r];
    let mut mean = vec![0.0; d_v];
    for (r, row) in scene.features.iter().enumerate() {
        for (d, &v) in row.iter().enumerate() {
            columns[d * d_r + r] = v;
            mean[d] += v / d_r as f64;
        }
    }
    let feature_columns = tape.constant(columns, vec![d_v, d_r])?;
    let region_features: Vec<Var> = scene
        .features
        .iter()
        .map(|row| tape.constant(row.clone(), vec![d_v]))
        .collect::<Result<_>>()?;
    let mean_feature = tape.constant(mean, vec![d_v])?;

    let detection = if ablation.no_mil {
        None
    } else {
        let region_probs = region_object_probs(tape, &bound.detector, &region_features)?;
        let or_probs = noisy_or(tape, region_probs)?;
        let (att_probs, image_probs) = if ablation.no_attention_mil {
            (None, or_probs)
        } else {
            let att = attention_mil(tape, &bound.detector, mean_feature)?;
            (Some(att), stack_noisy_or(tape, or_probs, att)?)
        };
        Some(SceneDetection {
            region_probs,
            or_probs,
            att_probs,
            image_probs,
        })
    };

    Ok(SceneContext {
        feature_columns,
        region_features,
        mean_feature,
        detection,
    })
}

/// Hidden and cell state for the three LSTMs.
#[derive(Debug, Clone, Copy)]
pub struct TrioState {
    pub attn: (Var, Var),
    pub visual: (Var, Var),
    pub language: (Var, Var),
}

impl TrioState {
    /// All-zero state for the start of a sequence.
    pub fn zeros(tape: &mut Tape, hidden_dim: usize) -> Self {
        let mk = |tape: &mut Tape| (tape.zeros(hidden_dim), tape.zeros(hidden_dim));
        TrioState {
            attn: mk(tape),
            visual: mk(tape),
            language: mk(tape),
        }
    }
}

/// Every per-timestep intermediate needed for losses, traces, and tests.
pub struct StepOutputs {
    /// Region attention weights.
    pub region_attention: Var,
    /// Attended region feature.
    pub attended_feature: Var,
    /// Initial estimation distribution over the vocabulary.
    pub init_dist: Var,
    /// Expected word embedding under `init_dist`.
    pub init_word_vec: Var,
    /// Gated per-object relevance (absent under `no_mil`).
    pub gated_object_relevance: Option<Var>,
    /// Object word vector (zero under `no_mil`).
    pub object_word_vec: Var,
    /// Per-module label distributions (absent under `no_modules`).
    pub module_dists: Option<Vec<Var>>,
    /// Slot attention over modules + init slot (absent under `no_modules`).
    pub slot_attention: Option<Var>,
    /// Init-slot weight; constant 1 under `no_modules`.
    pub init_weight: Var,
    /// Word vector handed to the language LSTM.
    pub composed_vec: Var,
    /// Final next-word distribution.
    pub word_dist: Var,
}

/// One timestep: attention LSTM, region attention, visual LSTM, object
/// gating, attribute modules, module attention, language LSTM.
pub fn forward_step(
    tape: &mut Tape,
    bound: &BoundModel,
    config: &ModelConfig,
    ablation: Ablation,
    ctx: &SceneContext,
    prev_token: usize,
    state: &TrioState,
) -> Result<(StepOutputs, TrioState)> {
    let prev_embed = tape.row(bound.embed, prev_token)?;

    // Attention LSTM over [language state; mean feature; previous word].
    let attn_input = tape.concat(&[state.language.0, ctx.mean_feature, prev_embed])?;
    let (h_attn, c_attn) =
        lstm_cell_step(tape, &bound.attn_lstm, attn_input, state.attn.0, state.attn.1)?;

    let (region_weights, attended) =
        region_attention(tape, &bound.region_attn, ctx.feature_columns, h_attn)?;

    // Visual LSTM makes the initial estimation.
    let visual_input = tape.concat(&[attended, h_attn])?;
    let (h_visual, c_visual) = lstm_cell_step(
        tape,
        &bound.visual_lstm,
        visual_input,
        state.visual.0,
        state.visual.1,
    )?;
    let init_logits = tape.matmul(bound.visual_proj.0, h_visual)?;
    let init_logits = tape.add(init_logits, bound.visual_proj.1)?;
    let init_dist = tape.softmax(init_logits)?;
    let init_word_vec = tape.vec_mat(init_dist, bound.embed)?;

    // Object pathway.
    let (gated, object_word_vec) = match (&ctx.detection, ablation.no_mil) {
        (Some(det), false) => {
            let gated = gate_detections(
                tape,
                &bound.detector,
                state.language.0,
                attended,
                det.image_probs,
            )?;
            let wv = object_word_vector(tape, &bound.detector, gated)?;
            (Some(gated), wv)
        }
        _ => (None, tape.zeros(config.embed_dim)),
    };

    // Attribute modules and composition.
    let (module_dists, slot_attention, init_weight, composed) = if ablation.no_modules {
        (None, None, tape.scalar(1.0), init_word_vec)
    } else {
        let mut dists = Vec::with_capacity(bound.modules.len());
        let mut word_vecs = Vec::with_capacity(bound.modules.len());
        for (i, module) in bound.modules.iter().enumerate() {
            let dist = module_predict(
                tape,
                &bound.modules,
                i,
                attended,
                state.language.0,
                object_word_vec,
            )?;
            word_vecs.push(module_word_vector(tape, module, dist)?);
            dists.push(dist);
        }
        let comp = module_attention(
            tape,
            &bound.module_attn,
            &word_vecs,
            init_word_vec,
            state.language.0,
        )?;
        (
            Some(dists),
            Some(comp.slot_attention),
            comp.init_weight,
            comp.composed,
        )
    };

    // Language LSTM makes the final prediction.
    let language_input = tape.concat(&[h_visual, object_word_vec, composed])?;
    let (h_lang, c_lang) = lstm_cell_step(
        tape,
        &bound.language_lstm,
        language_input,
        state.language.0,
        state.language.1,
    )?;
    let logits = tape.matmul(bound.language_proj.0, h_lang)?;
    let logits = tape.add(logits, bound.language_proj.1)?;
    let word_dist = tape.softmax(logits)?;

    let outputs = StepOutputs {
        region_attention: region_weights,
        attended_feature: attended,
        init_dist,
        init_word_vec,
        gated_object_relevance: gated,
        object_word_vec,
        module_dists,
        slot_attention,
        init_weight,
        composed_vec: composed,
        word_dist,
    };
    let next_state = TrioState {
        attn: (h_attn, c_attn),
        visual: (h_visual, c_visual),
        language: (h_lang, c_lang),
    };
    Ok((outputs, next_state))
}

/// Teacher-forced pass over an encoded caption (`<bos> .. <eos>`), producing
/// one [`StepOutputs`] per target token.
pub fn forward_caption(
    tape: &mut Tape,
    bound: &BoundModel,
    config: &ModelConfig,
    ablation: Ablation,
    ctx: &SceneContext,
    token_ids: &[usize],
) -> Result<Vec<StepOutputs>> {
    if token_ids.len() < 2 {
        return Err(Error::Contract(
            "caption must contain at least <bos> and one target".into(),
        ));
    }
    let mut state = TrioState::zeros(tape, config.hidden_dim);
    let mut steps = Vec::with_capacity(token_ids.len() - 1);
    for &prev in &token_ids[..token_ids.len() - 1] {
        let (outputs, next) = forward_step(tape, bound, config, ablation, ctx, prev, &state)?;
        steps.push(outputs);
        state = next;
    }
    Ok(steps)
}

/// Convenience: the module-attention vector as plain values, synthesizing the
/// one-hot init slot when modules are ablated away.
pub fn slot_attention_values(tape: &Tape, step: &StepOutputs) -> Vec<f64> {
    match step.slot_attention {
        Some(v) => tape.values(v).to_vec(),
        None => {
            let mut out = vec![0.0; INIT_SLOT + 1];
            out[INIT_SLOT] = 1.0;
            out
        }
    }
}
