//! Lexical diversity: unique stemmed nouns and verbs per 100 tokens.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};

use crate::corpus::Story;
use crate::error::{bail, Result};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosTag {
    Noun,
    Verb,
    Other,
}

/// Closed word→tag lexicon. Unlisted words containing a letter or digit are
/// nouns; everything else is [`PosTag::Other`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosLexicon {
    tags: BTreeMap<String, PosTag>,
}

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "then", "of", "to", "in", "on", "at", "by", "for", "with", "from",
    "up", "down", "out", "over", "into", "as", "that", "this", "these", "those", "it", "its", "he", "she", "they",
    "we", "i", "you", "him", "her", "them", "us", "me", "my", "his", "their", "our", "your", "not", "no", "so",
    "very", "too", "there", "here", "when", "where", "what", "who", "which", "how", "all", "some", "any",
];
const COMMON_VERBS: &[&str] = &[
    "is", "was", "are", "were", "be", "been", "has", "had", "have", "do", "did", "does", "go", "went", "goes",
    "said", "says", "say", "saw", "see", "sees", "came", "come", "comes", "took", "take", "takes", "made", "make",
    "makes", "got", "get", "gets", "looked", "look", "looks", "walked", "walks", "ran", "run", "runs", "gave",
    "give", "gives", "found", "find", "finds", "knew", "know", "knows", "thought", "think", "thinks", "felt",
    "feel", "feels", "left", "leave", "leaves", "told", "tell", "tells", "wanted", "want", "wants",
];

impl PosLexicon {
    /// Function words and frequent verbs for tagging ingested English text.
    pub fn english_basic() -> Self {
        let mut lex = Self::default();
        for w in FUNCTION_WORDS {
            lex.insert(w, PosTag::Other);
        }
        for w in COMMON_VERBS {
            lex.insert(w, PosTag::Verb);
        }
        lex
    }

    pub fn insert(&mut self, word: &str, tag: PosTag) {
        self.tags.insert(word.to_string(), tag);
    }

    /// Adds every entry of `other`, overriding existing tags.
    pub fn extend(&mut self, other: &PosLexicon) {
        for (w, &t) in &other.tags {
            self.tags.insert(w.clone(), t);
        }
    }

    pub fn tag(&self, word: &str) -> PosTag {
        match self.tags.get(word) {
            Some(&t) => t,
            None if word.chars().any(char::is_alphanumeric) => PosTag::Noun,
            None => PosTag::Other,
        }
    }
}

fn is_sibilant_end(s: &str) -> bool {
    s.ends_with('s') || s.ends_with('x') || s.ends_with('z') || s.ends_with("ch") || s.ends_with("sh")
}

fn undouble(s: &str) -> &str {
    let b = s.as_bytes();
    let n = b.len();
    if n >= 4 && b[n - 1] == b[n - 2] && !b"aeioulsz".contains(&b[n - 1]) {
        &s[..n - 1]
    } else {
        s
    }
}

/// Suffix stripping: `ing`, `ed`, `es` after a sibilant, then `s` (not `ss`).
/// A stem is never shorter than three characters.
pub fn stem(word: &str) -> &str {
    const MIN: usize = 3;
    if let Some(s) = word.strip_suffix("ing") {
        if s.len() >= MIN {
            return undouble(s);
        }
    }
    if let Some(s) = word.strip_suffix("ed") {
        if s.len() >= MIN {
            return undouble(s);
        }
    }
    if let Some(s) = word.strip_suffix("es") {
        if s.len() >= MIN && is_sibilant_end(s) {
            return s;
        }
    }
    if let Some(s) = word.strip_suffix('s') {
        if s.len() >= MIN && !s.ends_with('s') {
            return s;
        }
    }
    word
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityStats {
    pub nouns_per_100: f64,
    pub verbs_per_100: f64,
}

/// Unique stemmed nouns and verbs per story, as a rate per 100 tokens,
/// averaged over stories.
pub fn diversity_stats(stories: &[Story], vocab: &Vocabulary, lexicon: &PosLexicon) -> Result<DiversityStats> {
    if stories.is_empty() {
        bail!(Empty, "no stories for diversity statistics");
    }
    let (mut nouns, mut verbs) = (0.0, 0.0);
    for story in stories {
        let tokens = story.token_count();
        if tokens == 0 {
            continue;
        }
        let mut n = BTreeSet::new();
        let mut v = BTreeSet::new();
        for &id in story.sentences.iter().flatten() {
            let w = vocab.token(id);
            match lexicon.tag(w) {
                PosTag::Noun => n.insert(stem(w)),
                PosTag::Verb => v.insert(stem(w)),
                PosTag::Other => false,
            };
        }
        nouns += 100.0 * n.len() as f64 / tokens as f64;
        verbs += 100.0 * v.len() as f64 / tokens as f64;
    }
    let k = stories.len() as f64;
    Ok(DiversityStats { nouns_per_100: nouns / k, verbs_per_100: verbs / k })
}
