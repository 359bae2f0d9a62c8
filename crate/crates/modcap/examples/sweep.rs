// Experiment harness: train (variant, seed) grids and print held-out metrics.
// Usage: sweep <n_train> <epochs> <lr> <hidden> <embed> <seeds> <variants>

use modcap::metrics::{evaluate_corpus, EvalItem};
use modcap::model::{Ablation, Model, ModelConfig};
use modcap::scene::{generate_dataset, SceneGenConfig};
use modcap::train::{train, TrainConfig, TrainOptions};
use modcap::vocab::SubcategoryLexicon;
use modcap::decode::greedy_decode;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args[1].parse().unwrap();
    let epochs: usize = args[2].parse().unwrap();
    let lr: f64 = args[3].parse().unwrap();
    let hidden: usize = args[4].parse().unwrap();
    let embed: usize = args[5].parse().unwrap();
    let seeds: Vec<u64> = args[6].split(',').map(|s| s.parse().unwrap()).collect();
    let variants: Vec<&str> = args[7].split(',').collect();
    let sigma: f64 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let clip: f64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(5.0);

    let lexicon = SubcategoryLexicon::desk();
    let vocab = lexicon.vocabulary();
    let scene_cfg = SceneGenConfig { noise_sigma: sigma, ..SceneGenConfig::desk() };
    let test = generate_dataset(999, 1_000_000, 500, &lexicon, &scene_cfg).unwrap();

    for &seed in &seeds {
        let data = generate_dataset(seed, 0, n_train, &lexicon, &scene_cfg).unwrap();
        for variant in &variants {
            let ablation = match *variant {
                "complete" => Ablation::complete(),
                "no-mod" => Ablation { no_modules: true, ..Default::default() },
                "no-mil" => Ablation { no_mil: true, ..Default::default() },
                other => panic!("unknown variant {other}"),
            };
            let config = ModelConfig { feature_dim: 64, hidden_dim: hidden, embed_dim: embed };
            let mut model = Model::new(config, vocab.clone(), lexicon.clone(), seed);
            let train_cfg = TrainConfig {
                epochs,
                learning_rate_initial: lr,
                learning_rate_final: lr,
                grad_clip: clip,
                seed,
                ..TrainConfig::desk()
            };
            let t0 = std::time::Instant::now();
            let report = train(&mut model, &data, ablation, &train_cfg, &TrainOptions::default()).unwrap();
            let train_secs = t0.elapsed().as_secs_f64();
            let decoded: Vec<Vec<String>> = test
                .iter()
                .map(|s| greedy_decode(&model, ablation, s, 16).unwrap().tokens)
                .collect();
            let items: Vec<EvalItem> = test
                .iter()
                .zip(&decoded)
                .map(|(s, d)| EvalItem {
                    decoded: d.clone(),
                    references: &s.references,
                    gt_tuples: &s.gt_tuples,
                    gt_objects: &s.gt_objects,
                })
                .collect();
            let r = evaluate_corpus(&items, &lexicon).unwrap();
            let acc = module_accuracy(&model, ablation, &test);
            println!(
                "seed {seed} {variant:9} loss {:7.3} | BL1 {:.3} BL4 {:.3} CIDEr {:.3} | obj {:.3} CL {:.3} CT {:.3} SZ {:.3} RE {:.3} | {:.0}s",
                report.final_losses.total,
                r.bleu1, r.bleu4, r.cider, r.f_object, r.f_color, r.f_count, r.f_size, r.f_relation, train_secs
            );
            if let Some(acc) = acc {
                println!("    module acc: color {:.3} count {:.3} size {:.3} spatial {:.3} semantic {:.3}", acc[0], acc[1], acc[2], acc[3], acc[4]);
            }
        }
    }
}


/// Teacher-forced per-module argmax accuracy at supervised timesteps.
fn module_accuracy(model: &Model, ablation: Ablation, scenes: &[modcap::scene::Scene]) -> Option<[f64; 5]> {
    use modcap::autodiff::Tape;
    use modcap::model::{forward_caption, scene_context};
    use modcap::supervision::CaptionExample;
    if ablation.no_modules {
        return None;
    }
    let mut hits = [0usize; 5];
    let mut totals = [0usize; 5];
    for (i, scene) in scenes.iter().enumerate() {
        let example = CaptionExample::from_scene(i, scene, 0, &model.vocab, &model.lexicon).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape).unwrap();
        let ctx = scene_context(&mut tape, &bound, &model.config, ablation, scene).unwrap();
        let steps = forward_caption(&mut tape, &bound, &model.config, ablation, &ctx, &example.token_ids).unwrap();
        for (step, sup) in steps.iter().zip(&example.steps) {
            for m in 0..5 {
                if sup.module_masks[m] {
                    let dist = tape.values(step.module_dists.as_ref().unwrap()[m]);
                    let argmax = dist.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
                    totals[m] += 1;
                    if Some(argmax) == sup.module_label {
                        hits[m] += 1;
                    }
                }
            }
        }
    }
    let mut out = [0.0; 5];
    for m in 0..5 {
        out[m] = if totals[m] == 0 { f64::NAN } else { hits[m] as f64 / totals[m] as f64 };
    }
    Some(out)
}
