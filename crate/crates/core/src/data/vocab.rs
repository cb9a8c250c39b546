use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercased token strings with dense ids; 0 is PAD and 1 is UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self {
            token_to_id: BTreeMap::new(),
            id_to_token: Vec::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// PAD, UNK, then the given tokens in sorted order (duplicates dropped).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut sorted: Vec<String> = tokens.into_iter().map(|t| t.as_ref().to_lowercase()).collect();
        sorted.sort();
        sorted.dedup();
        let mut v = Self::new();
        for t in sorted {
            v.insert(&t);
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.to_string(), id);
        self.id_to_token.push(token.to_string());
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Reads `{"token": id, ...}`; ids must be dense and include PAD/UNK.
    pub fn load(path: &Path) -> Result<Self> {
        let map: BTreeMap<String, usize> = super::read_json(path)?;
        Self::from_map(map).map_err(|msg| Error::Data {
            path: Some(path.to_path_buf()),
            line: None,
            message: msg,
        })
    }

    fn from_map(map: BTreeMap<String, usize>) -> std::result::Result<Self, String> {
        let n = map.len();
        let mut id_to_token = vec![None; n];
        for (tok, &id) in &map {
            if id >= n {
                return Err(format!("token {tok:?} has id {id} outside 0..{n}"));
            }
            if id_to_token[id].replace(tok.clone()).is_some() {
                return Err(format!("id {id} assigned twice"));
            }
        }
        if map.get(PAD_TOKEN) != Some(&PAD) || map.get(UNK_TOKEN) != Some(&UNK) {
            return Err(format!("vocabulary must map {PAD_TOKEN} to 0 and {UNK_TOKEN} to 1"));
        }
        Ok(Self {
            token_to_id: map,
            id_to_token: id_to_token.into_iter().map(|t| t.expect("dense ids")).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_json(path, &self.token_to_id)
    }
}

/// Lowercases and splits on whitespace; each punctuation character is its
/// own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token ids for `text`, unknown words mapped to UNK, truncated to the first
/// `max_len` tokens. No padding is added.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    split_words(text)
        .iter()
        .take(max_len)
        .map(|w| vocab.id(w).unwrap_or(UNK))
        .collect()
}
