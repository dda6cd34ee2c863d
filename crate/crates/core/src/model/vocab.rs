use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::hash::hash_lines;
use crate::{Error, Result};

/// Ordered gene symbols with dense ids `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneVocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl GeneVocabulary {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary symbol `{s}`")));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn resolve(&self, symbol: &str) -> Result<usize> {
        self.id(symbol).ok_or_else(|| Error::UnknownGene(symbol.to_string()))
    }

    pub fn resolve_all<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<usize>> {
        symbols.iter().map(|s| self.resolve(s.as_ref())).collect()
    }

    /// Content hash; checkpoints refuse to load against a different one.
    pub fn hash(&self) -> String {
        hash_lines(&self.symbols)
    }
}

impl Serialize for GeneVocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.symbols.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GeneVocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let symbols = Vec::<String>::deserialize(d)?;
        GeneVocabulary::new(symbols).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_and_unknowns_name_the_symbol() {
        let v = GeneVocabulary::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.resolve("zz").unwrap_err().to_string(), "unknown gene `zz`");
        assert!(GeneVocabulary::new(vec!["a".into(), "a".into()]).is_err());
    }
}
