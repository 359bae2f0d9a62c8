//! Vocabulary construction and the six subcategory word lists.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const PAD: usize = 3;
pub const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<unk>", "<pad>"];

/// The five attribute subcategories, in the fixed order used for module
/// indexing, supervision slots, and trace columns. Slot `k` (= 5) after these
/// is the initial-estimation slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Color,
    Count,
    Size,
    Spatial,
    Semantic,
}

pub const CATEGORIES: [Category; 5] = [
    Category::Color,
    Category::Count,
    Category::Size,
    Category::Spatial,
    Category::Semantic,
];

/// Index of the initial-estimation slot in the (k+1)-way module attention.
pub const INIT_SLOT: usize = CATEGORIES.len();

impl Category {
    pub fn index(self) -> usize {
        CATEGORIES.iter().position(|&c| c == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Color => "color",
            Category::Count => "count",
            Category::Size => "size",
            Category::Spatial => "spatial",
            Category::Semantic => "semantic",
        }
    }
}

/// Token list with dense indices; reserved tokens sit at indices 0..=3.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Builds a vocabulary from a token corpus: tokens are lowercased, those
    /// occurring at least `min_count` times are kept (sorted), everything
    /// else maps to `<unk>`.
    pub fn build(corpus: &[Vec<String>], min_count: usize) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Contract("min_count must be at least 1".into()));
        }
        if corpus.iter().all(|seq| seq.is_empty()) {
            return Err(Error::Contract("empty corpus".into()));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for seq in corpus {
            for token in seq {
                *counts.entry(token.to_lowercase()).or_insert(0) += 1;
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            counts
                .into_iter()
                .filter(|(_, c)| *c >= min_count)
                .map(|(t, _)| t),
        );
        Ok(Self::from_tokens(tokens))
    }

    /// Token id, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `<bos> tokens <eos>` as ids.
    pub fn encode_caption(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS);
        ids.extend(tokens.iter().map(|t| self.id(t)));
        ids.push(EOS);
        ids
    }
}

/// Raw word inventories: the object list plus the five attribute lists.
/// This is also the on-disk lexicon file layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconSpec {
    pub objects: Vec<String>,
    pub colors: Vec<String>,
    pub counts: Vec<String>,
    pub sizes: Vec<String>,
    pub spatial: Vec<String>,
    pub semantic: Vec<String>,
}

/// Six pairwise-disjoint token sets: objects and the five attribute
/// subcategories. Object tokens also get naive plural surface forms
/// (`cat` -> `cats`) so templated captions stay grammatical.
#[derive(Debug, Clone)]
pub struct SubcategoryLexicon {
    objects: Vec<String>,
    labels: [Vec<String>; 5],
    plural_to_singular: BTreeMap<String, String>,
    membership: HashMap<String, Category>,
}

impl SubcategoryLexicon {
    pub fn new(spec: LexiconSpec) -> Result<Self> {
        let mut objects = spec.objects;
        objects.sort();
        objects.dedup();
        let mut labels = [
            spec.colors,
            spec.counts,
            spec.sizes,
            spec.spatial,
            spec.semantic,
        ];
        for set in labels.iter_mut() {
            set.sort();
            set.dedup();
        }

        let mut seen: BTreeSet<&String> = BTreeSet::new();
        for token in objects.iter().chain(labels.iter().flatten()) {
            if !seen.insert(token) {
                return Err(Error::Config(format!(
                    "token `{token}` appears in more than one subcategory set"
                )));
            }
        }

        let mut membership = HashMap::new();
        for (cat, set) in CATEGORIES.iter().zip(&labels) {
            for token in set {
                membership.insert(token.clone(), *cat);
            }
        }
        let plural_to_singular = objects
            .iter()
            .map(|o| (format!("{o}s"), o.clone()))
            .collect();

        Ok(SubcategoryLexicon {
            objects,
            labels,
            plural_to_singular,
            membership,
        })
    }

    /// The fixed desk-scale inventory: 12 objects, 6 colors, counts one
    /// through four, 2 sizes, 3 spatial and 4 semantic relations.
    pub fn desk() -> Self {
        Self::new(LexiconSpec {
            objects: [
                "apple", "ball", "bird", "boat", "car", "cat", "chair", "dog", "house", "table",
                "tree", "truck",
            ]
            .map(String::from)
            .to_vec(),
            colors: ["red", "blue", "green", "yellow", "black", "white"]
                .map(String::from)
                .to_vec(),
            counts: ["one", "two", "three", "four"].map(String::from).to_vec(),
            sizes: ["small", "large"].map(String::from).to_vec(),
            spatial: ["on", "under", "beside"].map(String::from).to_vec(),
            semantic: ["sitting", "running", "flying", "sleeping"]
                .map(String::from)
                .to_vec(),
        })
        .expect("desk inventory is disjoint")
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    /// Ordered label list for one attribute module.
    pub fn labels(&self, cat: Category) -> &[String] {
        &self.labels[cat.index()]
    }

    /// Which attribute subcategory a token belongs to, if any.
    pub fn category_of(&self, token: &str) -> Option<Category> {
        self.membership.get(token).copied()
    }

    /// Label index of `token` within its subcategory.
    pub fn label_index(&self, cat: Category, token: &str) -> Option<usize> {
        self.labels[cat.index()].iter().position(|t| t == token)
    }

    /// Canonical (singular) object token for `token`, accepting plural forms.
    pub fn canonical_object(&self, token: &str) -> Option<&str> {
        if self.objects.iter().any(|o| o == token) {
            return Some(self.objects.iter().find(|o| *o == token).unwrap());
        }
        self.plural_to_singular.get(token).map(String::as_str)
    }

    pub fn object_index(&self, token: &str) -> Option<usize> {
        let canon = self.canonical_object(token)?;
        self.objects.iter().position(|o| o == canon)
    }

    pub fn plural(&self, object: &str) -> String {
        format!("{object}s")
    }

    /// Vocabulary induced by the lexicon: reserved tokens, every lexicon
    /// token, plural object forms, and the filler words templates use.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut rest: BTreeSet<String> = BTreeSet::new();
        rest.extend(self.objects.iter().cloned());
        rest.extend(self.objects.iter().map(|o| self.plural(o)));
        rest.extend(self.labels.iter().flatten().cloned());
        rest.insert("a".to_string());
        rest.insert("and".to_string());
        tokens.extend(rest);
        Vocabulary::from_tokens(tokens)
    }

    pub fn spec(&self) -> LexiconSpec {
        LexiconSpec {
            objects: self.objects.clone(),
            colors: self.labels[0].clone(),
            counts: self.labels[1].clone(),
            sizes: self.labels[2].clone(),
            spatial: self.labels[3].clone(),
            semantic: self.labels[4].clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.spec())
            .map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let spec: LexiconSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::new(spec)
    }
}
