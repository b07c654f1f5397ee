//! Swap-2 and mutation-1 story perturbations.

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::Story;
use crate::error::{bail, Error, Result};
use crate::lm::{sample_sentence, story_tokens, TokenLm};
use crate::noise::Noise;
use crate::params::ParameterStore;

/// Draws allowed per perturbation before giving up.
pub const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PerturbKind {
    Swap2,
    Mut1,
}

impl PerturbKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Swap2 => "swap2",
            Self::Mut1 => "mut1",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedStory {
    pub original: Story,
    pub modified: Story,
    /// Sorted, distinct sentence indices.
    pub positions: Vec<usize>,
    pub kind: PerturbKind,
}

impl PerturbedStory {
    /// Checks the per-kind position count and that the two stories differ
    /// exactly at `positions`.
    pub fn is_consistent(&self) -> bool {
        let want = match self.kind {
            PerturbKind::Swap2 => 2,
            PerturbKind::Mut1 => 1,
        };
        self.positions.len() == want
            && self.original.len() == self.modified.len()
            && self.positions.windows(2).all(|w| w[0] < w[1])
            && (0..self.original.len())
                .all(|i| (self.original.sentences[i] != self.modified.sentences[i]) == self.positions.contains(&i))
    }
}

/// Uniform unordered pair of distinct indices below `len`, returned sorted.
pub fn swap_positions(len: usize, noise: &mut impl Noise) -> (usize, usize) {
    let i = noise.index(len);
    let mut j = noise.index(len - 1);
    if j >= i {
        j += 1;
    }
    (i.min(j), i.max(j))
}

pub fn swap_at(story: &Story, i: usize, j: usize) -> Story {
    let mut out = story.clone();
    out.sentences.swap(i, j);
    out
}

/// Exchanges two uniformly chosen sentences. Pairs of identical sentences
/// would leave the story unchanged, so they are redrawn.
pub fn make_swap(story: &Story, noise: &mut impl Noise) -> Result<PerturbedStory> {
    if story.len() < 4 {
        bail!(InvalidArgument, "swap needs at least 4 sentences, story {} has {}", story.id, story.len());
    }
    for _ in 0..MAX_RESAMPLES {
        let (i, j) = swap_positions(story.len(), noise);
        if story.sentences[i] != story.sentences[j] {
            return Ok(PerturbedStory {
                original: story.clone(),
                modified: swap_at(story, i, j),
                positions: vec![i, j],
                kind: PerturbKind::Swap2,
            });
        }
    }
    Err(Error::ResampleExhausted(MAX_RESAMPLES))
}

#[derive(Debug, Clone, Copy)]
pub struct MutationSampler<'a> {
    pub lm: &'a TokenLm,
    pub store: &'a ParameterStore,
    pub top_p: f64,
    pub max_len: usize,
}

impl MutationSampler<'_> {
    /// Replaces sentence `t` with a sample conditioned on sentences `..t`,
    /// redrawing while the sample equals the original.
    pub fn mutate_at(&self, story: &Story, t: usize, noise: &mut impl Noise) -> Result<PerturbedStory> {
        if t == 0 || t >= story.len() {
            bail!(InvalidArgument, "mutation position {t} outside 1..{}", story.len());
        }
        let ctx = story_tokens(&story.sentences[..t]);
        for _ in 0..MAX_RESAMPLES {
            let s = sample_sentence(self.lm, self.store, &ctx, None, self.top_p, self.max_len, noise)?;
            if s != story.sentences[t] {
                let mut modified = story.clone();
                modified.sentences[t] = s;
                return Ok(PerturbedStory {
                    original: story.clone(),
                    modified,
                    positions: vec![t],
                    kind: PerturbKind::Mut1,
                });
            }
        }
        Err(Error::ResampleExhausted(MAX_RESAMPLES))
    }

    /// Mutates a uniformly chosen sentence after the first.
    pub fn make_mutation(&self, story: &Story, noise: &mut impl Noise) -> Result<PerturbedStory> {
        if story.len() < 2 {
            bail!(InvalidArgument, "mutation needs at least 2 sentences, story {} has {}", story.id, story.len());
        }
        let t = 1 + noise.index(story.len() - 1);
        self.mutate_at(story, t, noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use crate::noise::SeededNoise;
    use alloc::format;
    use alloc::string::String;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn story(n: usize) -> Story {
        Story {
            id: String::from("s"),
            sentences: (0..n).map(|i| vec![4 + i, 4 + i]).collect(),
            source: String::from("test"),
        }
    }

    #[test]
    fn swap_exchanges_and_is_an_involution() {
        let s = story(5);
        let m = swap_at(&s, 1, 3);
        assert_eq!(m.sentences, vec![s.sentences[0].clone(), s.sentences[3].clone(), s.sentences[2].clone(),
            s.sentences[1].clone(), s.sentences[4].clone()]);
        assert_eq!(swap_at(&m, 1, 3), s);
    }

    #[test]
    fn swap_pairs_are_uniform() {
        let mut noise = SeededNoise::new(11);
        let mut counts = [[0usize; 10]; 10];
        let n = 100_000;
        for _ in 0..n {
            let (i, j) = swap_positions(10, &mut noise);
            counts[i][j] += 1;
        }
        for i in 0..10 {
            for j in 0..10 {
                if i < j {
                    let f = counts[i][j] as f64 / n as f64;
                    assert!((f - 1.0 / 45.0).abs() < 0.002, "pair ({i},{j}) frequency {f}");
                } else {
                    assert_eq!(counts[i][j], 0);
                }
            }
        }
    }

    #[test]
    fn swap_rejects_short_and_degenerate_stories() {
        assert!(make_swap(&story(3), &mut SeededNoise::new(1)).is_err());
        let mut s = story(4);
        for i in 0..4 {
            s.sentences[i] = vec![7];
        }
        assert_eq!(make_swap(&s, &mut SeededNoise::new(1)), Err(Error::ResampleExhausted(MAX_RESAMPLES)));
    }

    fn sampler_parts() -> (ParameterStore, TokenLm) {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lm = TokenLm::new(&mut store, &mut rng, LmConfig { n_layers: 1, hidden: 8, heads: 2, context: 48, vocab_size: 20 })
            .unwrap();
        (store, lm)
    }

    #[test]
    fn mutation_changes_one_sentence_from_the_prefix_only() {
        let (store, lm) = sampler_parts();
        let sampler = MutationSampler { lm: &lm, store: &store, top_p: 1.0, max_len: 4 };
        let s = story(6);
        for seed in 0..20 {
            let p = sampler.make_mutation(&s, &mut SeededNoise::new(seed)).unwrap();
            assert!(p.is_consistent());
            assert!(p.positions[0] >= 1);
            let t = p.positions[0];
            let mut prefix = s.clone();
            prefix.sentences.truncate(t + 1);
            let mut noise = SeededNoise::new(seed);
            noise.index(s.len() - 1);
            let q = sampler.mutate_at(&prefix, t, &mut noise).unwrap();
            assert_eq!(q.modified.sentences[t], p.modified.sentences[t]);
        }
        assert!(sampler.make_mutation(&story(1), &mut SeededNoise::new(0)).is_err());
        assert!(sampler.mutate_at(&s, 0, &mut SeededNoise::new(0)).is_err());
    }

    proptest! {
        #[test]
        fn swaps_are_consistent(len in 4usize..40, seed in any::<u64>()) {
            let p = make_swap(&story(len), &mut SeededNoise::new(seed)).unwrap();
            prop_assert!(p.is_consistent(), "{}", format!("{:?}", p.positions));
            prop_assert_eq!(swap_at(&p.modified, p.positions[0], p.positions[1]), p.original);
        }
    }
}
