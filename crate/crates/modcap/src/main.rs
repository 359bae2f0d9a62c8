//! Command-line entry point: dataset generation, training, ablation sweeps,
//! evaluation, single-scene captioning, and attention trace export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use modcap::decode::{export_attention_trace, greedy_decode};
use modcap::metrics::{evaluate_corpus, EvalItem, MetricReport};
use modcap::model::{Ablation, Model, ModelConfig};
use modcap::scene::{generate_dataset, load_dataset, save_dataset, Scene, SceneGenConfig};
use modcap::tensor::load_checkpoint;
use modcap::train::{checkpoint_path, train, TrainConfig, TrainOptions};
use modcap::vocab::SubcategoryLexicon;

#[derive(Parser)]
#[command(
    name = "modcap",
    version,
    about = "Modular image captioner on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test scene files plus the lexicon.
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Train and evaluate a set of model variants on identical data.
    Ablate(AblateArgs),
    /// Evaluate a checkpoint on one dataset split.
    Evaluate(EvaluateArgs),
    /// Caption a single scene.
    Caption(CaptionArgs),
    /// Export the module-attention trace of one decoded scene as CSV.
    ExportAttention(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scale {
    /// Small dimensions that train in minutes on one CPU core.
    Desk,
    /// Full-scale dimensions (36 regions, 512 hidden units).
    Paper,
}

impl Scale {
    fn scene_config(self) -> SceneGenConfig {
        match self {
            Scale::Desk => SceneGenConfig::desk(),
            Scale::Paper => SceneGenConfig::paper(),
        }
    }

    fn model_config(self) -> ModelConfig {
        match self {
            Scale::Desk => ModelConfig::desk(),
            Scale::Paper => ModelConfig::paper(),
        }
    }

    fn train_config(self) -> TrainConfig {
        match self {
            Scale::Desk => TrainConfig::desk(),
            Scale::Paper => TrainConfig::paper(),
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for lexicon.json and the three split files.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    val: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    /// Feature noise level.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint, optimizer state, and training log.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Override the initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Override the final (annealed) learning rate.
    #[arg(long)]
    lr_final: Option<f64>,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,
    /// Continue from the checkpoint in --out-dir.
    #[arg(long, default_value_t = false)]
    resume: bool,
    /// Drop the attribute modules (composed vector = initial estimation).
    #[arg(long, default_value_t = false)]
    no_mod: bool,
    /// Drop object detection (zero object word vector, no detector losses).
    #[arg(long, default_value_t = false)]
    no_mil: bool,
    /// Drop the whole-image detector branch (single-layer noisy-or).
    #[arg(long, default_value_t = false)]
    no_amil: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Override the final (annealed) learning rate.
    #[arg(long)]
    lr_final: Option<f64>,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,
    /// Comma-separated variants; flags within a variant compose with '+'
    /// (e.g. no-mod+no-amil).
    #[arg(long, value_delimiter = ',', default_values_t = [
        "complete".to_string(),
        "no-mod".to_string(),
        "no-mil".to_string(),
        "no-mod+no-mil".to_string(),
        "no-mod+no-amil".to_string(),
    ])]
    variants: Vec<String>,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Which split file to evaluate.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, default_value_t = false)]
    no_mod: bool,
    #[arg(long, default_value_t = false)]
    no_mil: bool,
    #[arg(long, default_value_t = false)]
    no_amil: bool,
}

#[derive(Args)]
struct CaptionArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Scene index within the split.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Caption(args) => cmd_caption(args),
        Command::ExportAttention(args) => cmd_export_attention(args),
    }
}

fn lexicon_path(dir: &Path) -> PathBuf {
    dir.join("lexicon.json")
}

fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

fn load_split(dir: &Path, split: &str) -> Result<Vec<Scene>> {
    if !["train", "val", "test"].contains(&split) {
        bail!("unknown split `{split}` (expected train, val, or test)");
    }
    let path = split_path(dir, split);
    load_dataset(&path).with_context(|| format!("loading {}", path.display()))
}

/// Model dimensions recovered from checkpoint shapes.
fn config_from_checkpoint(store: &modcap::tensor::ParamStore) -> Result<ModelConfig> {
    let attn = store.get("attn.W_v").context("checkpoint lacks attn.W_v")?;
    let embed = store.get("embed.E").context("checkpoint lacks embed.E")?;
    Ok(ModelConfig {
        feature_dim: attn.shape()[1],
        hidden_dim: attn.shape()[0],
        embed_dim: embed.shape()[1],
    })
}

fn load_model(checkpoint: &Path, data_dir: &Path) -> Result<Model> {
    if !checkpoint.exists() {
        bail!("checkpoint not found: {}", checkpoint.display());
    }
    let lexicon = SubcategoryLexicon::load(&lexicon_path(data_dir))
        .with_context(|| format!("loading lexicon from {}", data_dir.display()))?;
    let vocab = lexicon.vocabulary();
    let params = load_checkpoint(checkpoint)?;
    let config = config_from_checkpoint(&params)?;
    Ok(Model::from_params(config, vocab, lexicon, params)?)
}

fn ablation_from_flags(no_mod: bool, no_mil: bool, no_amil: bool) -> Ablation {
    Ablation {
        no_modules: no_mod,
        no_mil,
        no_attention_mil: no_amil,
    }
}

fn parse_variant(spec: &str) -> Result<Ablation> {
    let mut ab = Ablation::complete();
    if spec == "complete" {
        return Ok(ab);
    }
    for part in spec.split('+') {
        match part {
            "no-mod" => ab.no_modules = true,
            "no-mil" => ab.no_mil = true,
            "no-amil" => ab.no_attention_mil = true,
            other => bail!("unknown variant component `{other}`"),
        }
    }
    Ok(ab)
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let lexicon = SubcategoryLexicon::desk();
    let mut config = args.scale.scene_config();
    if let Some(sigma) = args.sigma {
        config.noise_sigma = sigma;
    }
    lexicon.save(&lexicon_path(&args.out_dir))?;

    let splits = [
        ("train", args.train, 0u64),
        ("val", args.val, args.train as u64),
        ("test", args.test, (args.train + args.val) as u64),
    ];
    for (name, count, first_id) in splits {
        let scenes = generate_dataset(args.seed, first_id, count, &lexicon, &config)?;
        save_dataset(&scenes, &split_path(&args.out_dir, name))?;
        println!("wrote {count} scenes to {}", split_path(&args.out_dir, name).display());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let lexicon = SubcategoryLexicon::load(&lexicon_path(&args.data))?;
    let vocab = lexicon.vocabulary();
    let scenes = load_split(&args.data, "train")?;

    let mut config = args.scale.train_config();
    config.seed = args.seed;
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = args.lr {
        config.learning_rate_initial = lr;
        config.learning_rate_final = config.learning_rate_final.min(lr);
    }
    if let Some(lr) = args.lr_final {
        config.learning_rate_final = lr;
    }
    config.max_iterations = args.max_iterations;

    let ablation = ablation_from_flags(args.no_mod, args.no_mil, args.no_amil);
    let mut model = Model::new(args.scale.model_config(), vocab, lexicon, args.seed);

    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(
        args.out_dir.join("train_config.json"),
        serde_json::to_string_pretty(&config)?,
    )?;
    let options = TrainOptions {
        out_dir: Some(args.out_dir.clone()),
        resume: args.resume,
    };
    let report = train(&mut model, &scenes, ablation, &config, &options)?;
    println!(
        "trained {} ({} epochs, {} iterations), final loss {:.4}, checkpoint at {}",
        ablation.label(),
        report.epochs_run,
        report.iterations,
        report.final_losses.total,
        checkpoint_path(&args.out_dir).display()
    );
    Ok(())
}

fn evaluate_model(
    model: &Model,
    ablation: Ablation,
    scenes: &[Scene],
    max_len: usize,
) -> Result<MetricReport> {
    use rayon::prelude::*;
    let decoded: Vec<Vec<String>> = scenes
        .par_iter()
        .map(|s| greedy_decode(model, ablation, s, max_len).map(|d| d.tokens))
        .collect::<modcap::Result<_>>()?;
    let items: Vec<EvalItem> = scenes
        .iter()
        .zip(&decoded)
        .map(|(s, d)| EvalItem {
            decoded: d.clone(),
            references: &s.references,
            gt_tuples: &s.gt_tuples,
            gt_objects: &s.gt_objects,
        })
        .collect();
    Ok(evaluate_corpus(&items, &model.lexicon)?)
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let lexicon = SubcategoryLexicon::load(&lexicon_path(&args.data))?;
    let vocab = lexicon.vocabulary();
    let train_scenes = load_split(&args.data, "train")?;
    let test_scenes = load_split(&args.data, "test")?;

    let mut config = args.scale.train_config();
    config.seed = args.seed;
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.learning_rate_initial = lr;
        config.learning_rate_final = config.learning_rate_final.min(lr);
    }
    if let Some(lr) = args.lr_final {
        config.learning_rate_final = lr;
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let mut reports: BTreeMap<String, MetricReport> = BTreeMap::new();
    let mut ordered: Vec<String> = Vec::new();
    for variant in &args.variants {
        let ablation = parse_variant(variant)?;
        let mut model = Model::new(
            args.scale.model_config(),
            vocab.clone(),
            lexicon.clone(),
            args.seed,
        );
        let variant_dir = args.out_dir.join(variant.replace('+', "_"));
        let options = TrainOptions {
            out_dir: Some(variant_dir),
            resume: false,
        };
        train(&mut model, &train_scenes, ablation, &config, &options)?;
        let report = evaluate_model(&model, ablation, &test_scenes, args.max_len)?;
        ordered.push(variant.clone());
        reports.insert(variant.clone(), report);
    }

    let header = format!(
        "{:<18} {:>6} {:>6} {:>6} {:>7} | {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "variant", "BL1", "BL4", "ROUGE", "CIDEr", "OBJ", "ATTR", "RE", "CL", "CT", "SZ"
    );
    println!("{header}");
    let mut csv = String::from("variant,");
    csv.push_str(MetricReport::csv_header());
    csv.push('\n');
    for variant in &ordered {
        let r = &reports[variant];
        println!(
            "{:<18} {:>6.3} {:>6.3} {:>6.3} {:>7.3} | {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            variant,
            r.bleu1,
            r.bleu4,
            r.rouge_l,
            r.cider,
            r.f_object,
            r.f_attribute,
            r.f_relation,
            r.f_color,
            r.f_count,
            r.f_size
        );
        csv.push_str(&format!("{variant},{}\n", r.csv_row()));
    }
    let csv_path = args.out_dir.join("ablation.csv");
    std::fs::write(&csv_path, csv)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_model(&args.checkpoint, &args.data)?;
    let scenes = load_split(&args.data, &args.split)?;
    let ablation = ablation_from_flags(args.no_mod, args.no_mil, args.no_amil);
    let report = evaluate_model(&model, ablation, &scenes, args.max_len)?;
    std::fs::create_dir_all(&args.out_dir)?;
    report.save(
        &args.out_dir.join("metrics.json"),
        &args.out_dir.join("metrics.csv"),
    )?;
    println!(
        "BLEU-1 {:.4}  BLEU-4 {:.4}  ROUGE-L {:.4}  CIDEr {:.4}",
        report.bleu1, report.bleu4, report.rouge_l, report.cider
    );
    println!(
        "f-scores: object {:.4}  attribute {:.4}  relation {:.4}  color {:.4}  count {:.4}  size {:.4}",
        report.f_object,
        report.f_attribute,
        report.f_relation,
        report.f_color,
        report.f_count,
        report.f_size
    );
    Ok(())
}

fn cmd_caption(args: CaptionArgs) -> Result<()> {
    let model = load_model(&args.checkpoint, &args.data)?;
    let scenes = load_split(&args.data, &args.split)?;
    let scene = scenes
        .get(args.index)
        .ok_or_else(|| anyhow!("scene index {} out of range ({} scenes)", args.index, scenes.len()))?;
    let decoded = greedy_decode(&model, Ablation::complete(), scene, args.max_len)?;
    println!("{}", decoded.text());
    Ok(())
}

fn cmd_export_attention(args: ExportArgs) -> Result<()> {
    let model = load_model(&args.checkpoint, &args.data)?;
    let scenes = load_split(&args.data, &args.split)?;
    let scene = scenes
        .get(args.index)
        .ok_or_else(|| anyhow!("scene index {} out of range ({} scenes)", args.index, scenes.len()))?;
    let decoded = greedy_decode(&model, Ablation::complete(), scene, args.max_len)?;
    export_attention_trace(&decoded, &args.out)?;
    println!(
        "wrote {} rows ({} tokens) to {}",
        decoded.trace.len(),
        decoded.tokens.len(),
        args.out.display()
    );
    Ok(())
}
