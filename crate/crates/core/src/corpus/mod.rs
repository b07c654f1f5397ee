//! Story data: synthetic story worlds, plain-text ingestion, splits and
//! proportional block sampling.

mod splitter;
mod world;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::noise::{Noise, SeededNoise};
use crate::vocab::{TokenSequence, Vocabulary};

pub use splitter::{ingest_text, split_sentences, tokenize};
pub use world::{generate_story_world, Event, StoryWorldConfig, World, WorldState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Story {
    pub id: String,
    pub sentences: Vec<TokenSequence>,
    pub source: String,
}

impl Story {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub stories: Vec<Story>,
    pub vocabulary: Vocabulary,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.stories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stories.is_empty()
    }

    /// Checks the story invariants: at least one sentence, ids inside the vocabulary.
    pub fn validate(&self) -> Result<()> {
        for s in &self.stories {
            if s.sentences.is_empty() {
                bail!(Empty, "story {} has no sentences", s.id);
            }
            for sent in &s.sentences {
                if let Some(&id) = sent.iter().find(|&&id| id >= self.vocabulary.len()) {
                    return Err(crate::Error::TokenOutOfVocabulary { id, size: self.vocabulary.len() });
                }
            }
        }
        Ok(())
    }

    fn subset(&self, suffix: &str, idx: &[usize]) -> Corpus {
        Corpus {
            name: format!("{}-{suffix}", self.name),
            stories: idx.iter().map(|&i| self.stories[i].clone()).collect(),
            vocabulary: self.vocabulary.clone(),
        }
    }
}

/// Shuffles stories with `seed` and partitions them by `ratios`
/// (train, valid, test).
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|r| *r < 0.0) {
        bail!(InvalidArgument, "split ratios must be non-negative and sum to 1, got {ratios:?}");
    }
    let n = corpus.len();
    if n < 3 {
        bail!(InvalidArgument, "corpus of {n} stories is too small to split");
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut noise = SeededNoise::new(seed);
    for i in (1..n).rev() {
        let j = noise.index(i + 1);
        order.swap(i, j);
    }
    let n_train = libm_round(ratios[0] * n as f64).min(n);
    let n_valid = libm_round(ratios[1] * n as f64).min(n - n_train);
    let (train, rest) = order.split_at(n_train);
    let (valid, test) = rest.split_at(n_valid);
    Ok((corpus.subset("train", train), corpus.subset("valid", valid), corpus.subset("test", test)))
}

fn libm_round(x: f64) -> usize {
    num_traits::Float::round(x) as usize
}

/// A contiguous run of sentences cut from one story.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoryBlock {
    pub corpus: usize,
    pub story: usize,
    pub start: usize,
    pub sentences: Vec<TokenSequence>,
}

/// Draws `blocks_per_batch` blocks: a corpus with probability proportional to
/// its story count, a story uniformly, then a uniformly placed contiguous
/// block of at most `block_sentences` sentences.
pub fn sample_batch(
    corpora: &[&Corpus],
    block_sentences: usize,
    blocks_per_batch: usize,
    noise: &mut impl Noise,
) -> Result<Vec<StoryBlock>> {
    if block_sentences < 2 {
        bail!(InvalidArgument, "blocks need at least 2 sentences, got {block_sentences}");
    }
    let total: usize = corpora.iter().map(|c| c.len()).sum();
    if total == 0 {
        bail!(Empty, "all corpora are empty");
    }
    let mut out = Vec::with_capacity(blocks_per_batch);
    for _ in 0..blocks_per_batch {
        let ci = choose_corpus(corpora, total, noise);
        let c = corpora[ci];
        let si = noise.index(c.len());
        let story = &c.stories[si];
        let (start, len) = if story.len() <= block_sentences {
            (0, story.len())
        } else {
            (noise.index(story.len() - block_sentences + 1), block_sentences)
        };
        out.push(StoryBlock { corpus: ci, story: si, start, sentences: story.sentences[start..start + len].to_vec() });
    }
    Ok(out)
}

fn choose_corpus(corpora: &[&Corpus], total: usize, noise: &mut impl Noise) -> usize {
    let mut pick = noise.index(total);
    for (i, c) in corpora.iter().enumerate() {
        if pick < c.len() {
            return i;
        }
        pick -= c.len();
    }
    corpora.len() - 1
}
