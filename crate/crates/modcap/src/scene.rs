//! Synthetic scenes: region features with known ground truth, templated
//! reference captions, and the line-delimited dataset file format.
//!
//! A scene fakes the output of an upstream region detector. Each sampled
//! object owns `count` regions; every such region carries the same prototype
//! vector, built from disjoint one-hot blocks for object identity, color,
//! size, semantic and spatial relation, plus Gaussian noise. Counts are thus
//! structural: nothing in a single region says "three", the evidence is
//! spread over three regions.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Category, SubcategoryLexicon};

/// One ground-truth annotation: `(category, object, attribute)`.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct AttrTuple {
    pub category: Category,
    pub object: String,
    pub attribute: String,
}

impl AttrTuple {
    pub fn new(category: Category, object: &str, attribute: &str) -> Self {
        AttrTuple {
            category,
            object: object.to_string(),
            attribute: attribute.to_string(),
        }
    }
}

/// A synthetic "image": region features plus full annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    /// Region features, one row per region (`region_count x feature_dim`).
    pub features: Vec<Vec<f64>>,
    pub gt_objects: BTreeSet<String>,
    pub gt_tuples: BTreeSet<AttrTuple>,
    /// Tokenized reference captions (1-5 of them, no `<bos>`/`<eos>`).
    pub references: Vec<Vec<String>>,
}

impl Scene {
    pub fn region_count(&self) -> usize {
        self.features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Everything that determines scene sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneGenConfig {
    pub feature_dim: usize,
    pub region_count: usize,
    /// Std-dev of the Gaussian noise added to every feature entry.
    pub noise_sigma: f64,
    /// Magnitude of the one-hot prototype blocks.
    pub feature_scale: f64,
    pub max_objects: usize,
    pub max_count: usize,
    pub reference_count: usize,
}

impl SceneGenConfig {
    pub fn desk() -> Self {
        SceneGenConfig {
            feature_dim: 64,
            region_count: 6,
            noise_sigma: 0.05,
            feature_scale: 1.0,
            max_objects: 3,
            max_count: 4,
            reference_count: 2,
        }
    }

    pub fn paper() -> Self {
        SceneGenConfig {
            feature_dim: 2048,
            region_count: 36,
            noise_sigma: 0.05,
            feature_scale: 1.0,
            max_objects: 3,
            max_count: 4,
            reference_count: 2,
        }
    }
}

/// Byte offsets of the one-hot blocks inside a region feature vector.
#[derive(Debug, Clone, Copy)]
pub struct BlockLayout {
    pub object: usize,
    pub color: usize,
    pub size: usize,
    pub semantic: usize,
    pub spatial: usize,
    pub used: usize,
}

impl BlockLayout {
    pub fn for_lexicon(lexicon: &SubcategoryLexicon, feature_dim: usize) -> Result<Self> {
        let object = 0;
        let color = object + lexicon.object_count();
        let size = color + lexicon.labels(Category::Color).len();
        let semantic = size + lexicon.labels(Category::Size).len();
        let spatial = semantic + lexicon.labels(Category::Semantic).len();
        let used = spatial + lexicon.labels(Category::Spatial).len();
        if used > feature_dim {
            return Err(Error::Config(format!(
                "feature_dim {feature_dim} too small: prototype blocks need {used} entries"
            )));
        }
        Ok(BlockLayout {
            object,
            color,
            size,
            semantic,
            spatial,
            used,
        })
    }
}

/// Fully resolved description of one object before rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSpec {
    pub object: String,
    pub count: usize,
    pub color: Option<String>,
    pub size: Option<String>,
    pub semantic: Option<String>,
}

/// Explicit scene description; `generate_scene` samples one of these and
/// builds it, tests may build scenes directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    /// Spatial relation from the first object to the second.
    pub spatial: Option<String>,
}

impl SceneSpec {
    fn tuples(&self, count_words: &[String]) -> BTreeSet<AttrTuple> {
        let mut tuples = BTreeSet::new();
        for obj in &self.objects {
            if obj.count >= 2 {
                tuples.insert(AttrTuple::new(
                    Category::Count,
                    &obj.object,
                    &count_words[obj.count - 1],
                ));
            }
            if let Some(c) = &obj.color {
                tuples.insert(AttrTuple::new(Category::Color, &obj.object, c));
            }
            if let Some(s) = &obj.size {
                tuples.insert(AttrTuple::new(Category::Size, &obj.object, s));
            }
            if let Some(s) = &obj.semantic {
                tuples.insert(AttrTuple::new(Category::Semantic, &obj.object, s));
            }
        }
        if let (Some(rel), true) = (&self.spatial, self.objects.len() >= 2) {
            tuples.insert(AttrTuple::new(
                Category::Spatial,
                &self.objects[0].object,
                rel,
            ));
        }
        tuples
    }
}

/// Count words indexed by numeric value minus one.
fn count_words() -> [String; 4] {
    ["one", "two", "three", "four"].map(String::from)
}

/// Deterministically builds the scene described by `spec`.
pub fn build_scene(
    id: u64,
    spec: &SceneSpec,
    lexicon: &SubcategoryLexicon,
    config: &SceneGenConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Scene> {
    let layout = BlockLayout::for_lexicon(lexicon, config.feature_dim)?;
    let total_regions: usize = spec.objects.iter().map(|o| o.count).sum();
    if total_regions > config.region_count {
        return Err(Error::Config(format!(
            "scene needs {total_regions} regions but config allows {}",
            config.region_count
        )));
    }

    let mut features = vec![vec![0.0; config.feature_dim]; config.region_count];
    let mut region = 0;
    for (obj_pos, obj) in spec.objects.iter().enumerate() {
        let mut proto = vec![0.0; config.feature_dim];
        let scale = config.feature_scale;
        let oi = lexicon
            .object_index(&obj.object)
            .ok_or_else(|| Error::Config(format!("unknown object `{}`", obj.object)))?;
        proto[layout.object + oi] = scale;
        if let Some(c) = &obj.color {
            let ci = lexicon
                .label_index(Category::Color, c)
                .ok_or_else(|| Error::Config(format!("unknown color `{c}`")))?;
            proto[layout.color + ci] = scale;
        }
        if let Some(s) = &obj.size {
            let si = lexicon
                .label_index(Category::Size, s)
                .ok_or_else(|| Error::Config(format!("unknown size `{s}`")))?;
            proto[layout.size + si] = scale;
        }
        if let Some(s) = &obj.semantic {
            let si = lexicon
                .label_index(Category::Semantic, s)
                .ok_or_else(|| Error::Config(format!("unknown semantic relation `{s}`")))?;
            proto[layout.semantic + si] = scale;
        }
        if obj_pos == 0 {
            if let Some(rel) = &spec.spatial {
                let ri = lexicon
                    .label_index(Category::Spatial, rel)
                    .ok_or_else(|| Error::Config(format!("unknown spatial relation `{rel}`")))?;
                proto[layout.spatial + ri] = scale;
            }
        }
        for _ in 0..obj.count {
            features[region] = proto.clone();
            region += 1;
        }
    }

    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma)
            .map_err(|e| Error::Config(e.to_string()))?;
        for row in features.iter_mut() {
            for v in row.iter_mut() {
                *v += normal.sample(rng);
            }
        }
    }

    let gt_objects = spec.objects.iter().map(|o| o.object.clone()).collect();
    let gt_tuples = spec.tuples(&count_words());
    let mut references = Vec::new();
    for template_id in 0..config.reference_count.clamp(1, 5) {
        references.push(render_caption(spec, template_id));
    }

    Ok(Scene {
        id,
        features,
        gt_objects,
        gt_tuples,
        references,
    })
}

/// Noun phrase for one object: `[count-word|a] [size] [color] object[s]`.
/// A count of one renders as the article "a" and carries no count tuple.
fn noun_phrase(obj: &ObjectSpec, words: &mut Vec<String>) {
    let counts = count_words();
    if obj.count >= 2 {
        words.push(counts[obj.count - 1].clone());
    } else {
        words.push("a".to_string());
    }
    if let Some(s) = &obj.size {
        words.push(s.clone());
    }
    if let Some(c) = &obj.color {
        words.push(c.clone());
    }
    if obj.count >= 2 {
        words.push(format!("{}s", obj.object));
    } else {
        words.push(obj.object.clone());
    }
}

/// Renders a caption from templates. Template 0 expresses every annotation;
/// template 1 is a sparser paraphrase. Ids wrap, so every id is valid for
/// every scene.
pub fn render_caption(spec: &SceneSpec, template_id: usize) -> Vec<String> {
    let mut words = Vec::new();
    let full = template_id % 2 == 0;
    match (spec.objects.len(), &spec.spatial) {
        (0, _) => {}
        (1, _) => {
            let obj = &spec.objects[0];
            if full {
                noun_phrase(obj, &mut words);
                if let Some(s) = &obj.semantic {
                    words.push(s.clone());
                }
            } else {
                // sparse variant: drop size/color detail
                let bare = ObjectSpec {
                    size: None,
                    color: None,
                    ..obj.clone()
                };
                noun_phrase(&bare, &mut words);
                if let Some(s) = &obj.semantic {
                    words.push(s.clone());
                }
            }
        }
        (_, Some(rel)) => {
            let first = &spec.objects[0];
            let second = &spec.objects[1];
            if full {
                noun_phrase(first, &mut words);
                if let Some(s) = &first.semantic {
                    words.push(s.clone());
                }
                words.push(rel.clone());
                noun_phrase(second, &mut words);
                if let Some(s) = &second.semantic {
                    words.push(s.clone());
                }
                for extra in &spec.objects[2..] {
                    words.push("and".to_string());
                    noun_phrase(extra, &mut words);
                    if let Some(s) = &extra.semantic {
                        words.push(s.clone());
                    }
                }
            } else {
                let bare = ObjectSpec {
                    size: None,
                    color: None,
                    ..first.clone()
                };
                noun_phrase(&bare, &mut words);
                words.push(rel.clone());
                noun_phrase(second, &mut words);
            }
        }
        (_, None) => {
            let take = if full { spec.objects.len() } else { 2 };
            for (i, obj) in spec.objects.iter().take(take).enumerate() {
                if i > 0 {
                    words.push("and".to_string());
                }
                if full {
                    noun_phrase(obj, &mut words);
                    if let Some(s) = &obj.semantic {
                        words.push(s.clone());
                    }
                } else {
                    let bare = ObjectSpec {
                        size: None,
                        color: None,
                        ..obj.clone()
                    };
                    noun_phrase(&bare, &mut words);
                }
            }
        }
    }
    words
}

fn sample_spec(
    lexicon: &SubcategoryLexicon,
    config: &SceneGenConfig,
    rng: &mut ChaCha12Rng,
) -> SceneSpec {
    let max_objects = config.max_objects.clamp(1, config.region_count);
    // Weighted toward one- and two-object scenes so counts above one keep
    // enough region budget to be realized structurally.
    let roll: f64 = rng.gen();
    let n_objects = if max_objects >= 3 && roll >= 0.9 {
        3
    } else if max_objects >= 2 && roll >= 0.45 {
        2
    } else {
        1
    };

    // Pick distinct objects.
    let mut pool: Vec<usize> = (0..lexicon.object_count()).collect();
    let mut chosen = Vec::new();
    for _ in 0..n_objects {
        let pick = rng.gen_range(0..pool.len());
        chosen.push(pool.swap_remove(pick));
    }

    let mut budget = config.region_count;
    let mut objects = Vec::new();
    for (i, &oi) in chosen.iter().enumerate() {
        let remaining_objects = chosen.len() - i - 1;
        let cap = (budget - remaining_objects).min(config.max_count.clamp(1, 4));
        let count = rng.gen_range(1..=cap.max(1));
        budget -= count;

        // At most two pre-object attribute words per noun phrase (count plus
        // one of color/size), keeping every attribute within the extraction
        // window of its object.
        let roll: f64 = rng.gen();
        let (color, size) = if roll < 0.55 {
            let c = lexicon.labels(Category::Color);
            (Some(c[rng.gen_range(0..c.len())].clone()), None)
        } else if roll < 0.80 {
            let s = lexicon.labels(Category::Size);
            (None, Some(s[rng.gen_range(0..s.len())].clone()))
        } else {
            (None, None)
        };
        let semantic_p = if i == 0 { 0.6 } else { 0.3 };
        let semantic = if rng.gen::<f64>() < semantic_p {
            let s = lexicon.labels(Category::Semantic);
            Some(s[rng.gen_range(0..s.len())].clone())
        } else {
            None
        };
        objects.push(ObjectSpec {
            object: lexicon.objects()[oi].clone(),
            count,
            color,
            size,
            semantic,
        });
    }

    // Canonical mention order: larger counts first, names breaking ties.
    // This keeps the caption a function of the feature content alone, since
    // region attention sees content, not region positions.
    objects.sort_by(|a, b| b.count.cmp(&a.count).then(a.object.cmp(&b.object)));

    let spatial = if objects.len() >= 2 && rng.gen::<f64>() < 0.8 {
        let s = lexicon.labels(Category::Spatial);
        Some(s[rng.gen_range(0..s.len())].clone())
    } else {
        None
    };

    SceneSpec { objects, spatial }
}

/// Samples and builds one scene. A pure function of `(seed, id, config)`.
pub fn generate_scene(
    seed: u64,
    id: u64,
    lexicon: &SubcategoryLexicon,
    config: &SceneGenConfig,
) -> Result<Scene> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let spec = sample_spec(lexicon, config, &mut rng);
    build_scene(id, &spec, lexicon, config, &mut rng)
}

/// Generates `count` scenes with ids starting at `first_id`.
pub fn generate_dataset(
    seed: u64,
    first_id: u64,
    count: usize,
    lexicon: &SubcategoryLexicon,
    config: &SceneGenConfig,
) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| generate_scene(seed, first_id + i as u64, lexicon, config))
        .collect()
}

// ── Dataset file I/O: one JSON scene per line ───────────────────────────

pub fn save_dataset(scenes: &[Scene], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for scene in scenes {
        let line = serde_json::to_string(scene).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Scene>> {
    let reader = BufReader::new(File::open(path)?);
    let mut scenes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        scenes.push(scene);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::CATEGORIES;

    fn desk() -> (SubcategoryLexicon, SceneGenConfig) {
        (SubcategoryLexicon::desk(), SceneGenConfig::desk())
    }

    fn noiseless(config: &SceneGenConfig) -> SceneGenConfig {
        SceneGenConfig {
            noise_sigma: 0.0,
            ..config.clone()
        }
    }

    fn two_red_cats() -> SceneSpec {
        SceneSpec {
            objects: vec![ObjectSpec {
                object: "cat".into(),
                count: 2,
                color: Some("red".into()),
                size: None,
                semantic: Some("sitting".into()),
            }],
            spatial: None,
        }
    }

    #[test]
    fn noiseless_regions_of_one_object_are_identical() {
        let (lex, cfg) = desk();
        let cfg = noiseless(&cfg);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let scene = build_scene(0, &two_red_cats(), &lex, &cfg, &mut rng).unwrap();
        assert_eq!(scene.features[0], scene.features[1]);
        assert!(scene
            .gt_tuples
            .contains(&AttrTuple::new(Category::Color, "cat", "red")));
        assert!(scene
            .gt_tuples
            .contains(&AttrTuple::new(Category::Count, "cat", "two")));
        // unoccupied regions are zero
        assert!(scene.features[5].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generation_is_a_pure_function_of_seed_and_config() {
        let (lex, cfg) = desk();
        let a = generate_scene(42, 7, &lex, &cfg).unwrap();
        let b = generate_scene(42, 7, &lex, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(43, 7, &lex, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn feature_dim_too_small_is_a_config_error() {
        let lex = SubcategoryLexicon::desk();
        let cfg = SceneGenConfig {
            feature_dim: 8,
            ..SceneGenConfig::desk()
        };
        assert!(matches!(
            generate_scene(0, 0, &lex, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn render_full_template_single_object() {
        let caption = render_caption(&two_red_cats(), 0);
        assert_eq!(caption, ["two", "red", "cats", "sitting"]);
    }

    #[test]
    fn count_one_suppresses_plural_and_count_word() {
        let spec = SceneSpec {
            objects: vec![ObjectSpec {
                object: "cat".into(),
                count: 1,
                color: Some("red".into()),
                size: None,
                semantic: None,
            }],
            spatial: None,
        };
        assert_eq!(render_caption(&spec, 0), ["a", "red", "cat"]);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let (lex, cfg) = desk();
        let scene = build_scene(0, &spec, &lex, &noiseless(&cfg), &mut rng).unwrap();
        assert!(!scene
            .gt_tuples
            .iter()
            .any(|t| t.category == Category::Count));
    }

    #[test]
    fn render_spatial_template_two_objects() {
        let spec = SceneSpec {
            objects: vec![
                ObjectSpec {
                    object: "cat".into(),
                    count: 1,
                    color: Some("red".into()),
                    size: None,
                    semantic: None,
                },
                ObjectSpec {
                    object: "table".into(),
                    count: 1,
                    color: None,
                    size: Some("large".into()),
                    semantic: None,
                },
            ],
            spatial: Some("on".into()),
        };
        assert_eq!(
            render_caption(&spec, 0),
            ["a", "red", "cat", "on", "a", "large", "table"]
        );
    }

    #[test]
    fn every_rendered_attribute_is_annotated() {
        let (lex, cfg) = desk();
        for id in 0..200 {
            let scene = generate_scene(5, id, &lex, &cfg).unwrap();
            for reference in &scene.references {
                for token in reference {
                    if let Some(cat) = lex.category_of(token) {
                        assert!(
                            scene
                                .gt_tuples
                                .iter()
                                .any(|t| t.category == cat && &t.attribute == token),
                            "scene {id}: `{token}` rendered but not annotated"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn every_reference_token_is_in_vocabulary() {
        let (lex, cfg) = desk();
        let vocab = lex.vocabulary();
        for id in 0..200 {
            let scene = generate_scene(11, id, &lex, &cfg).unwrap();
            for reference in &scene.references {
                for token in reference {
                    assert!(vocab.contains(token), "`{token}` missing from vocabulary");
                }
            }
        }
    }

    #[test]
    fn annotated_tokens_belong_to_their_claimed_sets() {
        let (lex, cfg) = desk();
        for id in 0..200 {
            let scene = generate_scene(13, id, &lex, &cfg).unwrap();
            for t in &scene.gt_tuples {
                assert_eq!(lex.category_of(&t.attribute), Some(t.category));
                assert!(lex.object_index(&t.object).is_some());
            }
        }
    }

    #[test]
    fn occupied_regions_match_total_count() {
        let (lex, cfg) = desk();
        let cfg = noiseless(&cfg);
        for id in 0..100 {
            let scene = generate_scene(17, id, &lex, &cfg).unwrap();
            let total: usize = scene
                .gt_objects
                .iter()
                .map(|o| {
                    let count_tuple = scene
                        .gt_tuples
                        .iter()
                        .find(|t| t.category == Category::Count && &t.object == o);
                    match count_tuple.map(|t| t.attribute.as_str()) {
                        Some("two") => 2,
                        Some("three") => 3,
                        Some("four") => 4,
                        _ => 1,
                    }
                })
                .sum();
            let occupied = scene
                .features
                .iter()
                .filter(|row| row.iter().any(|&v| v != 0.0))
                .count();
            assert_eq!(occupied, total, "scene {id}");
        }
    }

    #[test]
    fn linear_probe_recovers_color_from_noisy_regions() {
        // Nearest-centroid readout over 500 labelled regions at sigma = 0.1.
        let lex = SubcategoryLexicon::desk();
        let cfg = SceneGenConfig {
            noise_sigma: 0.1,
            ..SceneGenConfig::desk()
        };
        let layout = BlockLayout::for_lexicon(&lex, cfg.feature_dim).unwrap();
        let n_colors = lex.labels(Category::Color).len();

        let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
        let mut id = 0u64;
        while rows.len() < 1000 {
            let scene = generate_scene(23, id, &lex, &cfg).unwrap();
            id += 1;
            // label each occupied region by its color block argmax in a
            // noiseless rebuild of the same scene
            let clean = generate_scene(23, scene.id, &lex, &noiseless(&cfg)).unwrap();
            for (noisy, clean_row) in scene.features.iter().zip(&clean.features) {
                let block = &clean_row[layout.color..layout.color + n_colors];
                if let Some(label) = block.iter().position(|&v| v > 0.5) {
                    rows.push((noisy.clone(), label));
                }
            }
        }
        let (train, test) = rows.split_at(500);

        let mut centroids = vec![vec![0.0; cfg.feature_dim]; n_colors];
        let mut counts = vec![0usize; n_colors];
        for (x, y) in train {
            counts[*y] += 1;
            for (c, v) in centroids[*y].iter_mut().zip(x) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            if *n > 0 {
                for v in c.iter_mut() {
                    *v /= *n as f64;
                }
            }
        }
        let correct = test
            .iter()
            .filter(|(x, y)| {
                let best = (0..n_colors)
                    .min_by(|&a, &b| {
                        let da: f64 = centroids[a]
                            .iter()
                            .zip(x.iter())
                            .map(|(c, v)| (c - v) * (c - v))
                            .sum();
                        let db: f64 = centroids[b]
                            .iter()
                            .zip(x.iter())
                            .map(|(c, v)| (c - v) * (c - v))
                            .sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                best == *y
            })
            .count();
        let accuracy = correct as f64 / test.len() as f64;
        assert!(accuracy >= 0.99, "color probe accuracy {accuracy}");
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let (lex, cfg) = desk();
        let scenes = generate_dataset(3, 0, 20, &lex, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        save_dataset(&scenes, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(scenes, loaded);
    }

    #[test]
    fn truncated_dataset_names_the_line() {
        let (lex, cfg) = desk();
        let scenes = generate_dataset(3, 0, 3, &lex, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        save_dataset(&scenes, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let truncated = format!(
            "{}\n{}\n{}",
            lines[0],
            lines[1],
            &lines[2][..lines[2].len() / 2]
        );
        std::fs::write(&path, truncated).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn sampled_scenes_stay_within_region_budget() {
        let (lex, cfg) = desk();
        for id in 0..300 {
            let scene = generate_scene(29, id, &lex, &cfg).unwrap();
            assert_eq!(scene.region_count(), cfg.region_count);
            assert!(!scene.gt_objects.is_empty());
            assert!(scene.references.len() == cfg.reference_count);
            for t in &scene.gt_tuples {
                assert!(CATEGORIES.contains(&t.category));
            }
        }
    }
}
