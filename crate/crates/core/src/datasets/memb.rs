use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DmaeError, Result};

const MAGIC: &[u8; 4] = b"MEMB";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Item-information channel of a frozen embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// m1
    Text,
    /// m2
    Image,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Text, Modality::Image];

    pub fn index(self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::Image => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Text => Modality::Image,
            Modality::Image => Modality::Text,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Frozen item → vector map for one modality. There is no mutating API:
/// training reads similarity scores derived from it and never writes back.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalEmbeddingTable {
    modality: Modality,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl ModalEmbeddingTable {
    pub fn new(modality: Modality, dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(DmaeError::EmbeddingFormat("dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(DmaeError::EmbeddingFormat(format!(
                "{} values do not fill {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(DmaeError::EmbeddingFormat(format!(
                "non-finite value in row {}",
                pos / dim
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), row).is_some() {
                return Err(DmaeError::EmbeddingFormat(format!("duplicate item id {id:?}")));
            }
        }
        Ok(Self {
            modality,
            dim,
            ids,
            index,
            data,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Row-major `len × dim` payload.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, item: &str) -> Option<&[f32]> {
        self.index
            .get(item)
            .map(|&row| &self.data[row * self.dim..(row + 1) * self.dim])
    }

    /// Vector for `item`, or the zero vector for items without an embedding.
    pub fn vector_or_zero(&self, item: &str) -> std::borrow::Cow<'_, [f32]> {
        match self.get(item) {
            Some(v) => std::borrow::Cow::Borrowed(v),
            None => std::borrow::Cow::Owned(vec![0.0; self.dim]),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Parses a MEMB payload and binds row `i` to `ids[i]`.
    pub fn from_bytes(modality: Modality, bytes: &[u8], ids: Vec<String>) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(DmaeError::EmbeddingFormat("truncated header".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(DmaeError::EmbeddingFormat("bad magic, expected \"MEMB\"".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(DmaeError::EmbeddingFormat(format!(
                "unsupported version {version}"
            )));
        }
        let count = word(8) as usize;
        let dim = word(12) as usize;
        if count != ids.len() {
            return Err(DmaeError::EmbeddingFormat(format!(
                "header declares {count} items but the ids file has {} lines",
                ids.len()
            )));
        }
        let expected = HEADER_LEN + count * dim * 4;
        if bytes.len() != expected {
            return Err(DmaeError::EmbeddingFormat(format!(
                "payload is {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(modality, dim, ids, data)
    }
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| DmaeError::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn load_modal_embeddings(
    modality: Modality,
    bin_path: impl AsRef<Path>,
    ids_path: impl AsRef<Path>,
) -> Result<ModalEmbeddingTable> {
    let bin_path = bin_path.as_ref();
    let bytes = fs::read(bin_path).map_err(|e| DmaeError::io(bin_path, e))?;
    let ids = read_ids(ids_path.as_ref())?;
    ModalEmbeddingTable::from_bytes(modality, &bytes, ids)
}

pub fn write_modal_embeddings(
    table: &ModalEmbeddingTable,
    bin_path: impl AsRef<Path>,
    ids_path: impl AsRef<Path>,
) -> Result<()> {
    let (bin_path, ids_path) = (bin_path.as_ref(), ids_path.as_ref());
    fs::write(bin_path, table.to_bytes()).map_err(|e| DmaeError::io(bin_path, e))?;
    let mut ids = table.ids.join("\n");
    if !ids.is_empty() {
        ids.push('\n');
    }
    fs::write(ids_path, ids).map_err(|e| DmaeError::io(ids_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_round_trip() {
        let table =
            ModalEmbeddingTable::new(Modality::Text, 2, vec!["a".into()], vec![1.0, 0.0]).unwrap();
        let back =
            ModalEmbeddingTable::from_bytes(Modality::Text, &table.to_bytes(), vec!["a".into()])
                .unwrap();
        assert_eq!(back.get("a").unwrap(), &[1.0, 0.0]);
        assert!(back.get("b").is_none());
        assert_eq!(&*back.vector_or_zero("b"), &[0.0, 0.0]);
    }

    #[test]
    fn header_count_must_match_ids() {
        let ids: Vec<String> = (0..5).map(|i| format!("i{i}")).collect();
        let table = ModalEmbeddingTable::new(Modality::Image, 1, ids.clone(), vec![0.5; 5]).unwrap();
        let err =
            ModalEmbeddingTable::from_bytes(Modality::Image, &table.to_bytes(), ids[..4].to_vec())
                .unwrap_err();
        assert!(err.to_string().contains("5 items"), "{err}");
    }

    #[test]
    fn rejects_bad_magic_version_and_nan() {
        let table =
            ModalEmbeddingTable::new(Modality::Text, 1, vec!["a".into()], vec![1.0]).unwrap();
        let good = table.to_bytes();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(ModalEmbeddingTable::from_bytes(Modality::Text, &bad, vec!["a".into()]).is_err());

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(ModalEmbeddingTable::from_bytes(Modality::Text, &bad, vec!["a".into()]).is_err());

        let mut bad = good;
        bad[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(ModalEmbeddingTable::from_bytes(Modality::Text, &bad, vec!["a".into()]).is_err());
    }

    #[test]
    fn header_layout_is_little_endian() {
        let table = ModalEmbeddingTable::new(
            Modality::Text,
            3,
            vec!["a".into(), "b".into()],
            vec![0.0; 6],
        )
        .unwrap();
        let bytes = table.to_bytes();
        assert_eq!(&bytes[..4], b"MEMB");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[3, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 * 4);
    }
}
