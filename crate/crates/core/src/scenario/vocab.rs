use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub const FRAMEWORK_ERROR: &str = "framework-error";
pub const UNCLASSIFIED: &str = "unclassified";
pub const VOCABULARY_SIZE: usize = 24;

pub(crate) const SHIPPED: &str = include_str!("../../data/vocab/root-cause-categories.yaml");

/// Earlier published versions of the vocabulary file, oldest first.
pub const HISTORY: &[&str] = &[include_str!("../../data/vocab/history/v1.yaml")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabEntry {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub example_incidents: Vec<String>,
    /// Cause/effect partners; a diagnosis across a pairing is a near miss.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs_with: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deprecated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabulary {
    #[serde(default)]
    pub version: u32,
    pub entries: Vec<VocabEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabularyError {
    #[error("vocabulary syntax: {0}")]
    Syntax(String),
    #[error("duplicate category id `{0}`")]
    DuplicateId(String),
    #[error("vocabulary lacks the reserved `framework-error` entry")]
    MissingFrameworkError,
    #[error("vocabulary has {0} entries, expected {VOCABULARY_SIZE}")]
    WrongCount(usize),
    #[error("`{0}` pairs with unknown category `{1}`")]
    DanglingPair(String, String),
}

pub fn load_vocabulary(document: &str) -> Result<Vocabulary, VocabularyError> {
    let vocab: Vocabulary = serde_yaml::from_str(document).map_err(|e| VocabularyError::Syntax(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for e in &vocab.entries {
        if !seen.insert(e.id.as_str()) {
            return Err(VocabularyError::DuplicateId(e.id.clone()));
        }
    }
    if !seen.contains(FRAMEWORK_ERROR) {
        return Err(VocabularyError::MissingFrameworkError);
    }
    if vocab.entries.len() != VOCABULARY_SIZE {
        return Err(VocabularyError::WrongCount(vocab.entries.len()));
    }
    for e in &vocab.entries {
        if let Some(p) = e.pairs_with.iter().find(|p| !seen.contains(p.as_str())) {
            return Err(VocabularyError::DanglingPair(e.id.clone(), p.clone()));
        }
    }
    Ok(vocab)
}

impl Vocabulary {
    pub fn shipped() -> Vocabulary {
        load_vocabulary(SHIPPED).expect("shipped vocabulary is valid")
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn get(&self, id: &str) -> Option<&VocabEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Symmetric cause/effect pairing.
    pub fn paired(&self, a: &str, b: &str) -> bool {
        let lists = |x: &str, y: &str| self.get(x).is_some_and(|e| e.pairs_with.iter().any(|p| p == y));
        lists(a, b) || lists(b, a)
    }

    /// Prompt rendering in file order, without the reserved entry.
    pub fn render(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.id != FRAMEWORK_ERROR && !e.deprecated)
            .map(|e| format!("{}: {}", e.id, e.description))
            .collect()
    }
}
