use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Dense index for opaque string ids. Index 0 is the shared out-of-vocabulary row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const OOV: usize = 0;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self::new();
        for id in ids {
            vocab.insert(id.as_ref());
        }
        vocab
    }

    pub fn insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.ids.push(id.to_string());
        let i = self.ids.len();
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn lookup(&self, id: &str) -> usize {
        self.index.get(id).copied().unwrap_or(Self::OOV)
    }

    /// Number of embedding rows needed, including the OOV row.
    pub fn rows(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

impl From<Vec<String>> for Vocab {
    fn from(ids: Vec<String>) -> Self {
        Self::from_ids(ids)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_ids_map_to_oov() {
        let v = Vocab::from_ids(["a", "b", "a"]);
        assert_eq!(v.rows(), 3);
        assert_eq!(v.lookup("a"), 1);
        assert_eq!(v.lookup("b"), 2);
        assert_eq!(v.lookup("zzz"), Vocab::OOV);
    }
}
