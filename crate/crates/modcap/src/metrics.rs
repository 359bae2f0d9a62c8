//! Caption evaluation: BLEU (sentence and corpus), ROUGE-L, CIDEr, and the
//! subcategory tuple f-scores, plus the aggregated metric report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::AttrTuple;
use crate::vocab::{Category, SubcategoryLexicon, CATEGORIES};

const MAX_NGRAM: usize = 4;
/// LCS F-measure convention.
const ROUGE_BETA: f64 = 1.2;
/// Window (in tokens) for attaching attribute words to a following object
/// token, and relation words to a preceding one.
pub const TUPLE_WINDOW: usize = 2;

type Ngram<'a> = Vec<&'a str>;

fn ngram_counts<'a>(tokens: &'a [String], n: usize) -> BTreeMap<Ngram<'a>, u64> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let gram: Ngram = window.iter().map(String::as_str).collect();
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches, the candidate total, and whether any reference has
/// n-grams at all, for one order.
fn modified_counts(candidate: &[String], references: &[Vec<String>], n: usize) -> (u64, u64, bool) {
    let cand = ngram_counts(candidate, n);
    let total: u64 = cand.values().sum();
    let mut matched = 0;
    for (gram, &count) in &cand {
        let best_ref = references
            .iter()
            .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        matched += count.min(best_ref);
    }
    let ref_has = references.iter().any(|r| r.len() >= n);
    (matched, total, ref_has)
}

/// Reference length closest to the candidate length (ties toward shorter).
fn closest_ref_len(candidate_len: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| {
            let diff = (len as i64 - candidate_len as i64).abs();
            (diff, len)
        })
        .unwrap_or(0)
}

fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        return 0.0;
    }
    if candidate_len > reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

/// Geometric mean of the modified precisions times the brevity penalty.
/// An order where neither the candidate nor any reference has n-grams is
/// vacuous and skipped, so identical short pairs still score 1; an order
/// where only the candidate lacks them scores 0.
fn bleu_from_counts(counts: &[(u64, u64, bool)], candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for &(matched, total, ref_has) in counts {
        if total == 0 {
            if ref_has {
                return 0.0;
            }
            continue;
        }
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln();
        orders += 1;
    }
    let mean = if orders == 0 {
        1.0
    } else {
        (log_sum / orders as f64).exp()
    };
    brevity_penalty(candidate_len, reference_len) * mean
}

/// Sentence-level BLEU-n: geometric mean of the clipped modified precisions
/// for orders `1..=n`, times the brevity penalty.
pub fn bleu_n(candidate: &[String], references: &[Vec<String>], n: usize) -> Result<f64> {
    if n == 0 || n > MAX_NGRAM {
        return Err(Error::Contract(format!("BLEU order {n} not in 1..=4")));
    }
    if references.is_empty() {
        return Err(Error::Contract("BLEU needs at least one reference".into()));
    }
    let counts: Vec<(u64, u64, bool)> = (1..=n)
        .map(|k| modified_counts(candidate, references, k))
        .collect();
    Ok(bleu_from_counts(
        &counts,
        candidate.len(),
        closest_ref_len(candidate.len(), references),
    ))
}

/// Corpus-level BLEU-n: clipped counts and lengths are pooled over all pairs
/// before the ratios are taken.
pub fn corpus_bleu_n(pairs: &[(Vec<String>, Vec<Vec<String>>)], n: usize) -> Result<f64> {
    if n == 0 || n > MAX_NGRAM {
        return Err(Error::Contract(format!("BLEU order {n} not in 1..=4")));
    }
    let mut counts = vec![(0u64, 0u64, false); n];
    let mut candidate_len = 0usize;
    let mut reference_len = 0usize;
    for (candidate, references) in pairs {
        if references.is_empty() {
            return Err(Error::Contract("BLEU needs at least one reference".into()));
        }
        for (k, slot) in counts.iter_mut().enumerate() {
            let (m, t, ref_has) = modified_counts(candidate, references, k + 1);
            slot.0 += m;
            slot.1 += t;
            slot.2 |= ref_has;
        }
        candidate_len += candidate.len();
        reference_len += closest_ref_len(candidate.len(), references);
    }
    Ok(bleu_from_counts(&counts, candidate_len, reference_len))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i][j] = if a[i - 1] == b[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table[a.len()][b.len()]
}

/// ROUGE-L: LCS-based F-measure, maximized over the references.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    references
        .iter()
        .map(|reference| {
            let lcs = lcs_len(candidate, reference) as f64;
            if lcs == 0.0 {
                return 0.0;
            }
            let precision = lcs / candidate.len() as f64;
            let recall = lcs / reference.len() as f64;
            let beta_sq = ROUGE_BETA * ROUGE_BETA;
            (1.0 + beta_sq) * recall * precision / (recall + beta_sq * precision)
        })
        .fold(0.0, f64::max)
}

/// Plain CIDEr over a corpus: average tf-idf n-gram cosine over orders
/// `1..=4`, averaged over references, scaled by 10. Document frequency is
/// taken over scenes with a floor of one. Returns one score per pair.
pub fn cider(pairs: &[(Vec<String>, Vec<Vec<String>>)]) -> Vec<f64> {
    let n_scenes = pairs.len();
    if n_scenes == 0 {
        return Vec::new();
    }

    // document frequency per n-gram order, counted over each scene's refs
    let mut doc_freq: Vec<BTreeMap<Vec<String>, u64>> = vec![BTreeMap::new(); MAX_NGRAM];
    for (_, references) in pairs {
        for (n, df) in doc_freq.iter_mut().enumerate() {
            let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
            for reference in references {
                for (gram, _) in ngram_counts(reference, n + 1) {
                    seen.insert(gram.iter().map(|s| s.to_string()).collect());
                }
            }
            for gram in seen {
                *df.entry(gram).or_insert(0) += 1;
            }
        }
    }

    let tf_idf = |tokens: &[String], n: usize| -> BTreeMap<Vec<String>, f64> {
        let counts = ngram_counts(tokens, n + 1);
        let total: u64 = counts.values().sum();
        let mut out = BTreeMap::new();
        if total == 0 {
            return out;
        }
        for (gram, &count) in &counts {
            let key: Vec<String> = gram.iter().map(|s| s.to_string()).collect();
            let df = doc_freq[n].get(&key).copied().unwrap_or(0).max(1);
            let idf = (n_scenes as f64 / df as f64).ln();
            out.insert(key, (count as f64 / total as f64) * idf);
        }
        out
    };

    let cosine = |a: &BTreeMap<Vec<String>, f64>, b: &BTreeMap<Vec<String>, f64>| -> f64 {
        let dot: f64 = a
            .iter()
            .filter_map(|(gram, &w)| b.get(gram).map(|&v| w * v))
            .sum();
        let norm_a: f64 = a.values().map(|&w| w * w).sum::<f64>().sqrt();
        let norm_b: f64 = b.values().map(|&w| w * w).sum::<f64>().sqrt();
        if norm_a == 0.0 || norm_b == 0.0 {
            0.0
        } else {
            dot / (norm_a * norm_b)
        }
    };

    pairs
        .iter()
        .map(|(candidate, references)| {
            let mut score = 0.0;
            for n in 0..MAX_NGRAM {
                let cand_vec = tf_idf(candidate, n);
                let ref_mean: f64 = references
                    .iter()
                    .map(|reference| cosine(&cand_vec, &tf_idf(reference, n)))
                    .sum::<f64>()
                    / references.len() as f64;
                score += ref_mean;
            }
            10.0 * score / MAX_NGRAM as f64
        })
        .collect()
}

/// Precision/recall/F1 over two tuple sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SetScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn prf(matched: usize, predicted: usize, gold: usize) -> SetScore {
    let precision = if predicted == 0 {
        0.0
    } else {
        matched as f64 / predicted as f64
    };
    let recall = if gold == 0 {
        0.0
    } else {
        matched as f64 / gold as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SetScore {
        precision,
        recall,
        f1,
    }
}

pub fn score_sets<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> SetScore {
    let matched = predicted.intersection(gold).count();
    prf(matched, predicted.len(), gold.len())
}

/// Tuples and object mentions extracted from a caption by lexicon matching.
/// Attribute words (color, count, size) attach to an object token up to
/// [`TUPLE_WINDOW`] positions later; relation words (spatial, semantic)
/// attach to an object token up to [`TUPLE_WINDOW`] positions earlier.
pub fn extract_tuples(
    tokens: &[String],
    lexicon: &SubcategoryLexicon,
) -> (BTreeSet<AttrTuple>, BTreeSet<String>) {
    let mut tuples = BTreeSet::new();
    let mut objects = BTreeSet::new();
    for (i, token) in tokens.iter().enumerate() {
        let Some(object) = lexicon.canonical_object(token) else {
            continue;
        };
        objects.insert(object.to_string());
        for j in i.saturating_sub(TUPLE_WINDOW)..i {
            if let Some(cat) = lexicon.category_of(&tokens[j]) {
                if matches!(cat, Category::Color | Category::Count | Category::Size) {
                    tuples.insert(AttrTuple::new(cat, object, &tokens[j]));
                }
            }
        }
        for j in (i + 1)..tokens.len().min(i + 1 + TUPLE_WINDOW) {
            if let Some(cat) = lexicon.category_of(&tokens[j]) {
                if matches!(cat, Category::Spatial | Category::Semantic) {
                    tuples.insert(AttrTuple::new(cat, object, &tokens[j]));
                }
            }
        }
    }
    (tuples, objects)
}

/// Micro-aggregated match counts per subcategory.
#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    matched: usize,
    predicted: usize,
    gold: usize,
}

impl Counts {
    fn add<T: Ord>(&mut self, predicted: &BTreeSet<T>, gold: &BTreeSet<T>) {
        self.matched += predicted.intersection(gold).count();
        self.predicted += predicted.len();
        self.gold += gold.len();
    }

    fn score(&self) -> SetScore {
        prf(self.matched, self.predicted, self.gold)
    }
}

/// Per-category f-scores of one decoded caption against one scene's ground
/// truth.
pub fn subcategory_fscores(
    decoded: &[String],
    gt_tuples: &BTreeSet<AttrTuple>,
    gt_objects: &BTreeSet<String>,
    lexicon: &SubcategoryLexicon,
) -> BTreeMap<String, SetScore> {
    let (tuples, objects) = extract_tuples(decoded, lexicon);
    let mut out = BTreeMap::new();
    out.insert("object".to_string(), score_sets(&objects, gt_objects));
    for cat in CATEGORIES {
        let pred: BTreeSet<&AttrTuple> = tuples.iter().filter(|t| t.category == cat).collect();
        let gold: BTreeSet<&AttrTuple> = gt_tuples.iter().filter(|t| t.category == cat).collect();
        out.insert(cat.name().to_string(), score_sets(&pred, &gold));
    }
    out
}

/// The aggregate evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    /// Micro-averaged tuple f-scores: object, attribute aggregate
    /// (color+count+size), relation aggregate (spatial+semantic), and the
    /// individual color / count / size breakdowns.
    pub f_object: f64,
    pub f_attribute: f64,
    pub f_relation: f64,
    pub f_color: f64,
    pub f_count: f64,
    pub f_size: f64,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "bleu1,bleu2,bleu3,bleu4,rouge_l,cider,f_object,f_attribute,f_relation,f_color,f_count,f_size"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.rouge_l,
            self.cider,
            self.f_object,
            self.f_attribute,
            self.f_relation,
            self.f_color,
            self.f_count,
            self.f_size
        )
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(json_path, json)?;
        fs::write(
            csv_path,
            format!("{}\n{}\n", Self::csv_header(), self.csv_row()),
        )?;
        Ok(())
    }
}

/// Scores a corpus of decoded captions against scene ground truth.
/// `items` pairs each decoded token sequence with its scene's references,
/// tuples, and objects.
pub struct EvalItem<'a> {
    pub decoded: Vec<String>,
    pub references: &'a [Vec<String>],
    pub gt_tuples: &'a BTreeSet<AttrTuple>,
    pub gt_objects: &'a BTreeSet<String>,
}

pub fn evaluate_corpus(items: &[EvalItem], lexicon: &SubcategoryLexicon) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Contract("nothing to evaluate".into()));
    }
    let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = items
        .iter()
        .map(|it| (it.decoded.clone(), it.references.to_vec()))
        .collect();

    let bleu: Vec<f64> = (1..=MAX_NGRAM)
        .map(|n| corpus_bleu_n(&pairs, n))
        .collect::<Result<_>>()?;
    let rouge = pairs
        .iter()
        .map(|(c, r)| rouge_l(c, r))
        .sum::<f64>()
        / pairs.len() as f64;
    let cider_scores = cider(&pairs);
    let cider_mean = cider_scores.iter().sum::<f64>() / cider_scores.len() as f64;

    let mut object = Counts::default();
    let mut per_cat: BTreeMap<Category, Counts> =
        CATEGORIES.iter().map(|&c| (c, Counts::default())).collect();
    for item in items {
        let (tuples, objects) = extract_tuples(&item.decoded, lexicon);
        object.add(&objects, item.gt_objects);
        for cat in CATEGORIES {
            let pred: BTreeSet<&AttrTuple> =
                tuples.iter().filter(|t| t.category == cat).collect();
            let gold: BTreeSet<&AttrTuple> =
                item.gt_tuples.iter().filter(|t| t.category == cat).collect();
            per_cat.get_mut(&cat).unwrap().add(&pred, &gold);
        }
    }
    let merge = |cats: &[Category]| -> SetScore {
        let mut total = Counts::default();
        for c in cats {
            let counts = per_cat[c];
            total.matched += counts.matched;
            total.predicted += counts.predicted;
            total.gold += counts.gold;
        }
        total.score()
    };
    let attribute = merge(&[Category::Color, Category::Count, Category::Size]);
    let relation = merge(&[Category::Spatial, Category::Semantic]);

    Ok(MetricReport {
        bleu1: bleu[0],
        bleu2: bleu[1],
        bleu3: bleu[2],
        bleu4: bleu[3],
        rouge_l: rouge,
        cider: cider_mean,
        f_object: object.score().f1,
        f_attribute: attribute.f1,
        f_relation: relation.f1,
        f_color: per_cat[&Category::Color].score().f1,
        f_count: per_cat[&Category::Count].score().f1,
        f_size: per_cat[&Category::Size].score().f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bleu_identity_is_one() {
        let c = toks("two red cats sitting");
        for n in 1..=4 {
            assert_eq!(bleu_n(&c, &[c.clone()], n).unwrap(), 1.0);
        }
    }

    #[test]
    fn bleu_clips_repeated_unigrams() {
        let c = toks("the the the");
        let refs = [toks("the cat")];
        let b1 = bleu_n(&c, &refs, 1).unwrap();
        assert!((b1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(bleu_n(&c, &refs, 2).unwrap(), 0.0);
    }

    #[test]
    fn bleu_applies_brevity_penalty() {
        let c = toks("two red cats");
        let refs = [toks("two red cats sitting")];
        let expected = (1.0_f64 - 4.0 / 3.0).exp();
        for n in 1..=3 {
            assert!((bleu_n(&c, &refs, n).unwrap() - expected).abs() < 1e-12);
        }
        assert_eq!(bleu_n(&c, &refs, 4).unwrap(), 0.0);
    }

    #[test]
    fn bleu_empty_candidate_scores_zero() {
        assert_eq!(bleu_n(&[], &[toks("a cat")], 4).unwrap(), 0.0);
    }

    #[test]
    fn bleu_rejects_no_references() {
        assert!(bleu_n(&toks("a"), &[], 1).is_err());
        assert!(bleu_n(&toks("a"), &[toks("a")], 5).is_err());
    }

    #[test]
    fn corpus_bleu_of_a_set_against_itself_is_one() {
        let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = [
            "two red cats sitting",
            "a dog under a large table",
            "three birds flying",
        ]
        .iter()
        .map(|s| (toks(s), vec![toks(s)]))
        .collect();
        for n in 1..=4 {
            assert_eq!(corpus_bleu_n(&pairs, n).unwrap(), 1.0);
        }
    }

    #[test]
    fn corpus_bleu_pools_counts() {
        // one perfect pair and one disjoint pair: corpus BLEU-1 is the
        // pooled ratio, not the mean of per-sentence scores
        let pairs = vec![
            (toks("a b"), vec![toks("a b")]),
            (toks("x y"), vec![toks("p q")]),
        ];
        let b1 = corpus_bleu_n(&pairs, 1).unwrap();
        assert!((b1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        let c = toks("two red cats");
        assert!((rouge_l(&c, &[c.clone()]) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l(&c, &[toks("a dog sleeping")]), 0.0);
    }

    #[test]
    fn rouge_hand_case() {
        // LCS("a b c", "a x c") = 2; P = R = 2/3 -> F = 2/3
        let f = rouge_l(&toks("a b c"), &[toks("a x c")]);
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        // the asymmetric formula: candidate "the the the" vs "the cat"
        let f2 = rouge_l(&toks("the the the"), &[toks("the cat")]);
        let (p, r, b2) = (1.0 / 3.0, 0.5, ROUGE_BETA * ROUGE_BETA);
        let expected = (1.0 + b2) * r * p / (r + b2 * p);
        assert!((f2 - expected).abs() < 1e-12);
    }

    #[test]
    fn cider_identity_is_maximal_and_disjoint_is_zero() {
        let pairs = vec![
            (toks("two red cats sitting"), vec![toks("two red cats sitting")]),
            (toks("a dog"), vec![toks("a large dog sleeping")]),
            (toks("x y"), vec![toks("p q r")]),
        ];
        let scores = cider(&pairs);
        assert!((scores[0] - 10.0).abs() < 1e-9, "identity: {}", scores[0]);
        assert!(scores[1] > 0.0 && scores[1] < scores[0]);
        assert_eq!(scores[2], 0.0);
    }

    #[test]
    fn extractor_handles_pre_and_post_attributes() {
        let lex = SubcategoryLexicon::desk();
        let (tuples, objects) = extract_tuples(&toks("two red cats sitting"), &lex);
        assert!(objects.contains("cat"));
        assert!(tuples.contains(&AttrTuple::new(Category::Count, "cat", "two")));
        assert!(tuples.contains(&AttrTuple::new(Category::Color, "cat", "red")));
        assert!(tuples.contains(&AttrTuple::new(Category::Semantic, "cat", "sitting")));

        let (tuples, objects) =
            extract_tuples(&toks("a red cat on a large table"), &lex);
        assert!(objects.contains("cat") && objects.contains("table"));
        assert!(tuples.contains(&AttrTuple::new(Category::Spatial, "cat", "on")));
        assert!(tuples.contains(&AttrTuple::new(Category::Size, "table", "large")));
        assert!(!tuples.contains(&AttrTuple::new(Category::Color, "table", "red")));
    }

    #[test]
    fn fscore_hand_case() {
        let lex = SubcategoryLexicon::desk();
        let gt: BTreeSet<AttrTuple> = [
            AttrTuple::new(Category::Count, "cat", "two"),
            AttrTuple::new(Category::Color, "cat", "red"),
        ]
        .into_iter()
        .collect();
        let gt_objects: BTreeSet<String> = ["cat".to_string()].into_iter().collect();
        let scores = subcategory_fscores(&toks("two red cats"), &gt, &gt_objects, &lex);
        assert_eq!(scores["count"].f1, 1.0);
        assert_eq!(scores["color"].f1, 1.0);
        assert_eq!(scores["object"].f1, 1.0);
    }

    #[test]
    fn missing_attributes_zero_recall_objects_unaffected() {
        let lex = SubcategoryLexicon::desk();
        let gt: BTreeSet<AttrTuple> = [
            AttrTuple::new(Category::Count, "cat", "two"),
            AttrTuple::new(Category::Color, "cat", "red"),
        ]
        .into_iter()
        .collect();
        let gt_objects: BTreeSet<String> = ["cat".to_string()].into_iter().collect();
        let scores = subcategory_fscores(&toks("a cats"), &gt, &gt_objects, &lex);
        assert_eq!(scores["count"].recall, 0.0);
        assert_eq!(scores["color"].recall, 0.0);
        assert_eq!(scores["object"].f1, 1.0);
    }

    #[test]
    fn decoded_reference_built_from_ground_truth_scores_one() {
        use crate::scene::{generate_scene, SceneGenConfig};
        let lex = SubcategoryLexicon::desk();
        // template 0 expresses every annotation, so decoding it exactly
        // must give perfect scores everywhere
        for seed in 0..50u64 {
            let scene = generate_scene(seed, seed, &lex, &SceneGenConfig::desk()).unwrap();
            let decoded = scene.references[0].clone();
            let scores =
                subcategory_fscores(&decoded, &scene.gt_tuples, &scene.gt_objects, &lex);
            for (name, score) in &scores {
                let gold_count = match name.as_str() {
                    "object" => scene.gt_objects.len(),
                    other => scene
                        .gt_tuples
                        .iter()
                        .filter(|t| t.category.name() == other)
                        .count(),
                };
                if gold_count > 0 {
                    assert_eq!(
                        score.f1, 1.0,
                        "seed {seed}: {name} not perfect for {decoded:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn evaluate_corpus_aggregates() {
        use crate::scene::{generate_dataset, SceneGenConfig};
        let lex = SubcategoryLexicon::desk();
        let scenes = generate_dataset(1, 0, 10, &lex, &SceneGenConfig::desk()).unwrap();
        let items: Vec<EvalItem> = scenes
            .iter()
            .map(|s| EvalItem {
                decoded: s.references[0].clone(),
                references: &s.references,
                gt_tuples: &s.gt_tuples,
                gt_objects: &s.gt_objects,
            })
            .collect();
        let report = evaluate_corpus(&items, &lex).unwrap();
        assert_eq!(report.bleu4, 1.0);
        assert_eq!(report.f_object, 1.0);
        assert_eq!(report.f_color, 1.0);
        assert_eq!(report.f_count, 1.0);
        assert!((report.rouge_l - 1.0).abs() < 1e-12);
        assert!(report.cider > 0.0);
    }

    proptest! {
        /// Swapping candidate and reference tuple sets swaps precision and
        /// recall.
        #[test]
        fn set_score_swap_symmetry(a in proptest::collection::btree_set(0u32..20, 0..10),
                                   b in proptest::collection::btree_set(0u32..20, 0..10)) {
            let ab = score_sets(&a, &b);
            let ba = score_sets(&b, &a);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
            prop_assert_eq!(ab.f1, ba.f1);
        }

        /// BLEU stays in [0, 1] and identical pairs score 1.
        #[test]
        fn bleu_bounds(words in proptest::collection::vec(0u8..5, 1..8)) {
            let tokens: Vec<String> = words.iter().map(|w| format!("w{w}")).collect();
            for n in 1..=4usize {
                let v = bleu_n(&tokens, &[tokens.clone()], n).unwrap();
                prop_assert_eq!(v, 1.0);
            }
        }
    }
}
