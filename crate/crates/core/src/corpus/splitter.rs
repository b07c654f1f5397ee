//! Rule-based sentence splitting and word tokenization for plain text.
//!
//! A sentence ends at `.`, `!` or `?` when the next non-space character is an
//! uppercase letter (or the text ends), unless the `.` closes a guarded
//! abbreviation such as `Mr.`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Corpus, Story};
use crate::error::{bail, Result};
use crate::vocab::Vocabulary;

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "st", "jr", "sr", "prof", "rev", "gen", "col", "capt", "lt", "sgt", "mt", "vs", "etc",
    "e.g", "i.e", "no", "vol", "fig", "inc", "ltd", "co",
];

pub fn split_sentences(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for (k, &(pos, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let end = pos + c.len_utf8();
        let mut j = k + 1;
        let mut saw_space = false;
        while j < chars.len() && chars[j].1.is_whitespace() {
            saw_space = true;
            j += 1;
        }
        let boundary = if j == chars.len() {
            true
        } else {
            saw_space && chars[j].1.is_uppercase()
        };
        if !boundary || (c == '.' && is_guarded(&text[start..pos])) {
            continue;
        }
        let s = text[start..end].trim();
        if !s.is_empty() {
            out.push(s);
        }
        start = end;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn is_guarded(before: &str) -> bool {
    let word = before.rsplit(char::is_whitespace).next().unwrap_or("");
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    if word.is_empty() {
        return false;
    }
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Lowercased word tokens; each punctuation character is its own token.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in sentence.chars() {
        if c.is_alphanumeric() || c == '\'' {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(core::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(String::from(c));
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Builds a corpus from raw text; blank lines separate stories. With
/// `max_vocab`, only the most frequent types (ties by first occurrence) get
/// ids and the rest map to UNK.
pub fn ingest_text(text: &str, name: &str, max_vocab: Option<usize>) -> Result<Corpus> {
    let mut raw_stories: Vec<Vec<Vec<String>>> = Vec::new();
    for block in paragraphs(text) {
        let sentences: Vec<Vec<String>> =
            split_sentences(&block).into_iter().map(tokenize).filter(|t| !t.is_empty()).collect();
        if sentences.is_empty() {
            bail!(Empty, "story {} has no sentences after splitting", raw_stories.len());
        }
        raw_stories.push(sentences);
    }
    if raw_stories.is_empty() {
        bail!(Empty, "no text to ingest");
    }

    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut order = 0;
    for w in raw_stories.iter().flatten().flatten() {
        let e = counts.entry(w.as_str()).or_insert_with(|| {
            order += 1;
            (0, order)
        });
        e.0 += 1;
    }
    let mut types: Vec<(&str, usize, usize)> = counts.into_iter().map(|(w, (n, first))| (w, n, first)).collect();
    types.sort_by_key(|&(_, _, first)| first);
    if let Some(cap) = max_vocab {
        let room = cap.saturating_sub(crate::vocab::RESERVED.len());
        if types.len() > room {
            types.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
            types.truncate(room);
            types.sort_by_key(|&(_, _, first)| first);
        }
    }
    let mut vocabulary = Vocabulary::new();
    for (w, _, _) in &types {
        vocabulary.insert(w);
    }
    let stories = raw_stories
        .into_iter()
        .enumerate()
        .map(|(i, sents)| Story {
            id: format!("{name}-{i}"),
            sentences: sents.iter().map(|s| vocabulary.encode(s.iter().map(String::as_str))).collect(),
            source: name.into(),
        })
        .collect();
    Ok(Corpus { name: name.into(), stories, vocabulary })
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.trim().is_empty() {
                out.push(core::mem::take(&mut cur));
            }
            cur.clear();
        } else {
            if !cur.is_empty() {
                cur.push('\n');
            }
            cur.push_str(line);
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out
}
