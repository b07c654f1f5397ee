//! Corpus text files: one sentence per line with space-separated tokens,
//! a blank line between stories. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use storyplan_core::corpus::{Corpus, Story};
use storyplan_core::vocab::{Vocabulary, UNK};

use crate::error::{AppError, AppResult};

pub fn format_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# corpus {} stories={}", corpus.name, corpus.len());
    for (i, story) in corpus.stories.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for s in &story.sentences {
            out.push_str(&corpus.vocabulary.decode(s));
            out.push('\n');
        }
    }
    out
}

/// Parses corpus text. Tokens are looked up in `vocabulary` when given
/// (unknown words map to UNK), otherwise a vocabulary is built in order of
/// first appearance.
pub fn parse_corpus(text: &str, name: &str, vocabulary: Option<&Vocabulary>) -> AppResult<Corpus> {
    let mut vocab = vocabulary.cloned().unwrap_or_default();
    let fixed = vocabulary.is_some();
    let mut stories = Vec::new();
    let mut current: Vec<Vec<usize>> = Vec::new();
    let flush = |current: &mut Vec<Vec<usize>>, stories: &mut Vec<Story>| {
        if !current.is_empty() {
            stories.push(Story {
                id: format!("{name}-{}", stories.len()),
                sentences: std::mem::take(current),
                source: name.to_string(),
            });
        }
    };
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            flush(&mut current, &mut stories);
            continue;
        }
        let ids = line
            .split_whitespace()
            .map(|w| if fixed { vocab.get(w).unwrap_or(UNK) } else { vocab.insert(w) })
            .collect();
        current.push(ids);
    }
    flush(&mut current, &mut stories);
    if stories.is_empty() {
        return Err(AppError::Corpus(format!("{name}: no stories")));
    }
    let corpus = Corpus { name: name.to_string(), stories, vocabulary: vocab };
    corpus.validate()?;
    Ok(corpus)
}

pub fn read_corpus(path: &Path, vocabulary: Option<&Vocabulary>) -> AppResult<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    parse_corpus(&text, name, vocabulary)
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> AppResult<()> {
    std::fs::write(path, format_corpus(corpus)).map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use storyplan_core::corpus::{generate_story_world, StoryWorldConfig};

    #[test]
    fn round_trip_with_fixed_vocabulary() {
        let c = generate_story_world(&StoryWorldConfig { min_sentences: 3, max_sentences: 5, ..Default::default() }, 2, 4)
            .unwrap();
        let text = format_corpus(&c);
        let back = parse_corpus(&text, "x", Some(&c.vocabulary)).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in c.stories.iter().zip(&back.stories) {
            assert_eq!(a.sentences, b.sentences);
        }
        let fresh = parse_corpus(&text, "x", None).unwrap();
        assert_eq!(format_corpus(&fresh).lines().skip(1).collect::<Vec<_>>(), text.lines().skip(1).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_words_and_empty_input() {
        let mut v = Vocabulary::new();
        v.insert("a");
        let c = parse_corpus("a b\n\n\na\n", "t", Some(&v)).unwrap();
        assert_eq!(c.stories[0].sentences[0], vec![v.id("a"), UNK]);
        assert_eq!(c.len(), 2);
        assert!(parse_corpus("# only a comment\n\n", "t", None).is_err());
    }
}
