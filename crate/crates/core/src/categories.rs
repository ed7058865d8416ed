//! The fixed 11-category taxonomy of parasitic egg species.
//!
//! Category ids are stable across the whole pipeline: annotation loading,
//! detector class heads, SVM outputs, fused scores, and evaluation reports
//! all index classes the same way. The ordering is frozen so that persisted
//! artifacts (checkpoints, predictions, reports) stay comparable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of egg categories. Fixed for the whole pipeline.
pub const NUM_CATEGORIES: usize = 11;

/// Canonical category names, in the fixed id order (id 0 first).
pub const CATEGORY_NAMES: [&str; NUM_CATEGORIES] = [
    "Ascaris lumbricoides",
    "Capillaria philippinensis",
    "Enterobius vermicularis",
    "Fasciolopsis buski",
    "Hookworm egg",
    "Hymenolepis diminuta",
    "Hymenolepis nana",
    "Opisthorchis viverrine",
    "Paragonimus spp",
    "Taenia spp. egg",
    "Trichuris trichiura",
];

/// A validated category id in `0..NUM_CATEGORIES`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(u8);

impl CategoryId {
    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_CATEGORIES {
            Ok(Self(id as u8))
        } else {
            Err(Error::Schema(format!(
                "category id {id} out of range 0..{NUM_CATEGORIES}"
            )))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CATEGORY_NAMES[self.index()]
    }

    /// Resolve a species name to its fixed id.
    ///
    /// Matching is case- and punctuation-insensitive and accepts the common
    /// abbreviated genus forms found in annotation files ("A. lumbricoides").
    pub fn from_name(name: &str) -> Result<Self> {
        let key = normalize_name(name);
        for (idx, canonical) in CATEGORY_NAMES.iter().enumerate() {
            if key == normalize_name(canonical) {
                return Ok(Self(idx as u8));
            }
        }
        for (alias, idx) in NAME_ALIASES {
            if key == normalize_name(alias) {
                return Ok(Self(*idx as u8));
            }
        }
        Err(Error::Schema(format!("unknown category name: {name:?}")))
    }

    pub fn all() -> impl Iterator<Item = CategoryId> {
        (0..NUM_CATEGORIES).map(|i| CategoryId(i as u8))
    }
}

impl std::fmt::Display for CategoryId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.0, self.name())
    }
}

const NAME_ALIASES: &[(&str, usize)] = &[
    ("A. lumbricoides", 0),
    ("C. philippinensis", 1),
    ("E. vermicularis", 2),
    ("F. buski", 3),
    ("Hookworm", 4),
    ("H. diminuta", 5),
    ("H. nana", 6),
    ("O. viverrine", 7),
    ("Opisthorchis viverrini", 7),
    ("Paragonimus spp.", 8),
    ("Taenia spp", 9),
    ("T. trichiura", 10),
];

fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// The category table persisted inside model checkpoints and prediction
/// files, so artifacts are self-describing and mismatches are detectable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub names: Vec<String>,
}

impl CategoryMap {
    pub fn fixed() -> Self {
        Self {
            names: CATEGORY_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != NUM_CATEGORIES {
            return Err(Error::Schema(format!(
                "category map has {} entries, expected {NUM_CATEGORIES}",
                self.names.len()
            )));
        }
        Ok(())
    }
}

impl Default for CategoryMap {
    fn default() -> Self {
        Self::fixed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_categories_bijection() {
        assert_eq!(CATEGORY_NAMES.len(), NUM_CATEGORIES);
        for (idx, name) in CATEGORY_NAMES.iter().enumerate() {
            let id = CategoryId::from_name(name).unwrap();
            assert_eq!(id.index(), idx);
            assert_eq!(id.name(), *name);
        }
    }

    #[test]
    fn listing_order_endpoints() {
        assert_eq!(CategoryId::from_name("A. lumbricoides").unwrap().index(), 0);
        assert_eq!(CategoryId::from_name("T. trichiura").unwrap().index(), 10);
    }

    #[test]
    fn name_matching_is_forgiving() {
        assert_eq!(
            CategoryId::from_name("hookworm egg").unwrap().index(),
            4
        );
        assert_eq!(
            CategoryId::from_name("Taenia spp. egg").unwrap().index(),
            9
        );
    }

    #[test]
    fn unknown_name_is_schema_error() {
        assert!(CategoryId::from_name("Giardia lamblia").is_err());
    }

    #[test]
    fn out_of_range_id_rejected() {
        assert!(CategoryId::new(11).is_err());
        assert!(CategoryId::new(10).is_ok());
    }
}
