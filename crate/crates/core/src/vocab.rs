//! Closed word vocabulary with reserved control tokens.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{bail, Result};

pub type TokenId = usize;
pub type TokenSequence = Vec<TokenId>;

pub const UNK: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SENT_SEP: TokenId = 3;
pub const RESERVED: [&str; 4] = ["<unk>", "<bos>", "<eos>", "<sep>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self { tokens: Vec::new(), index: BTreeMap::new() };
        for t in RESERVED {
            v.insert(t);
        }
        v
    }

    /// Rebuilds a vocabulary from its token list (line number = id).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                bail!(InvalidArgument, "vocabulary must start with reserved token {r} at id {i}");
            }
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                bail!(InvalidArgument, "duplicate vocabulary entry {t}");
            }
        }
        Ok(Self { tokens, index })
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id).map_or(RESERVED[0], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn encode<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> TokenSequence {
        words.into_iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(id));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_dense_from_zero() {
        let v = Vocabulary::new();
        assert_eq!(v.get("<unk>"), Some(UNK));
        assert_eq!(v.get("<sep>"), Some(SENT_SEP));
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let mut v = Vocabulary::new();
        let cat = v.insert("cat");
        assert_eq!(v.encode(["cat", "dog"]), alloc::vec![cat, UNK]);
        assert_eq!(v.decode(&[cat, UNK]), "cat <unk>");
    }

    #[test]
    fn from_tokens_requires_reserved_prefix() {
        assert!(Vocabulary::from_tokens(alloc::vec!["a".into()]).is_err());
        let v = Vocabulary::from_tokens(RESERVED.iter().map(|s| s.to_string()).chain(["x".to_string()]).collect()).unwrap();
        assert_eq!(v.id("x"), 4);
    }
}
