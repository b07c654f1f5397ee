//! Easy (original vs modified) and hard (top-K localisation) coherence tasks.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::bundle::ModelBundle;
use crate::corpus::Story;
use crate::discriminator::DiscriminatorKind;
use crate::error::{bail, Result};
use crate::evaluation::perturb::PerturbedStory;
use crate::lm::perplexity_sliding;
use crate::noise::{Noise, SeededNoise};

/// Scores whole stories and individual positions.
pub trait StoryScorer {
    /// Story-level score, lower means more coherent.
    fn story_score(&mut self, story: &Story) -> Result<f64>;

    /// One value per sentence, higher means more suspicious.
    fn suspicion(&mut self, story: &Story) -> Result<Vec<f64>>;

    /// Story score and suspicion together, for scorers that can share the work.
    fn score_and_suspicion(&mut self, story: &Story) -> Result<(f64, Vec<f64>)> {
        Ok((self.story_score(story)?, self.suspicion(story)?))
    }
}

/// Independent uniform draws for every score.
#[derive(Debug, Clone)]
pub struct RandomScorer {
    pub noise: SeededNoise,
}

impl StoryScorer for RandomScorer {
    fn story_score(&mut self, _: &Story) -> Result<f64> {
        Ok(self.noise.uniform())
    }

    fn suspicion(&mut self, story: &Story) -> Result<Vec<f64>> {
        Ok((0..story.len()).map(|_| self.noise.uniform()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringModel {
    /// Sliding-window perplexity over the given number of sentences.
    Lm { window: usize },
    TdVae,
    Discriminator(DiscriminatorKind),
}

/// Scorers backed by trained components.
#[derive(Debug, Clone, Copy)]
pub struct ModelScorer<'a> {
    pub bundle: &'a ModelBundle,
    pub model: ScoringModel,
}

impl ModelScorer<'_> {
    fn distances(&self, story: &Story) -> Result<Vec<f64>> {
        let b = self.bundle;
        match self.model {
            ScoringModel::Lm { window } => perplexity_sliding(&b.lm, &b.store, story, window),
            ScoringModel::TdVae => Ok(b.tdvae()?.position_surprise(&b.store, &b.encode_story(story)?)?.0),
            ScoringModel::Discriminator(kind) => {
                Ok(b.discriminator(kind)?.position_distance(&b.store, &b.encode_story(story)?)?.0)
            }
        }
    }
}

impl StoryScorer for ModelScorer<'_> {
    /// Mean perplexity for the LM, total distance after the first sentence
    /// for the latent models.
    fn story_score(&mut self, story: &Story) -> Result<f64> {
        Ok(self.score_and_suspicion(story)?.0)
    }

    fn suspicion(&mut self, story: &Story) -> Result<Vec<f64>> {
        self.distances(story)
    }

    fn score_and_suspicion(&mut self, story: &Story) -> Result<(f64, Vec<f64>)> {
        let d = self.distances(story)?;
        let score = match self.model {
            ScoringModel::Lm { .. } => d.iter().sum::<f64>() / d.len() as f64,
            _ => d[1..].iter().sum(),
        };
        Ok((score, d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub accuracy: f64,
    /// Wald half-width at the 0.05 level.
    pub ci: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_hits(hits: usize, n: usize) -> Result<Self> {
        if n == 0 {
            bail!(Empty, "no trials");
        }
        let p = hits as f64 / n as f64;
        Ok(Self { accuracy: p, ci: 1.96 * (p * (1.0 - p) / n as f64).sqrt(), n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitRule {
    /// At least one modified position in the top K.
    Any,
    /// Every modified position in the top K.
    All,
}

/// Indices of the `k` largest values; ties keep the lower index first.
pub fn top_k_positions(suspicion: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..suspicion.len()).collect();
    idx.sort_by(|&a, &b| suspicion[b].total_cmp(&suspicion[a]));
    idx.truncate(k);
    idx
}

pub fn is_hit(suspicion: &[f64], positions: &[usize], k: usize, rule: HitRule) -> bool {
    let top = top_k_positions(suspicion, k);
    match rule {
        HitRule::Any => positions.iter().any(|p| top.contains(p)),
        HitRule::All => positions.iter().all(|p| top.contains(p)),
    }
}

/// Fraction of pairs where the original scores strictly lower than the
/// modified story.
pub fn easy_task_accuracy(scorer: &mut dyn StoryScorer, perturbed: &[PerturbedStory]) -> Result<Estimate> {
    if perturbed.is_empty() {
        bail!(Empty, "no perturbed stories");
    }
    let mut hits = 0;
    for p in perturbed {
        if scorer.story_score(&p.original)? < scorer.story_score(&p.modified)? {
            hits += 1;
        }
    }
    Estimate::from_hits(hits, perturbed.len())
}

/// Hard-task accuracy for each K in `ks`, scoring every modified story once.
pub fn hard_task_accuracies(
    scorer: &mut dyn StoryScorer,
    perturbed: &[PerturbedStory],
    ks: &[usize],
    rule: HitRule,
) -> Result<Vec<Estimate>> {
    if perturbed.is_empty() {
        bail!(Empty, "no perturbed stories");
    }
    if ks.contains(&0) {
        bail!(InvalidArgument, "K must be at least 1");
    }
    let mut hits = alloc::vec![0usize; ks.len()];
    for p in perturbed {
        let s = scorer.suspicion(&p.modified)?;
        if s.len() != p.modified.len() {
            bail!(DimensionMismatch, "{} suspicion values for {} sentences", s.len(), p.modified.len());
        }
        for (h, &k) in hits.iter_mut().zip(ks) {
            if is_hit(&s, &p.positions, k, rule) {
                *h += 1;
            }
        }
    }
    hits.into_iter().map(|h| Estimate::from_hits(h, perturbed.len())).collect()
}

pub fn hard_task_accuracy(scorer: &mut dyn StoryScorer, perturbed: &[PerturbedStory], k: usize) -> Result<Estimate> {
    Ok(hard_task_accuracies(scorer, perturbed, &[k], HitRule::Any)?[0])
}

pub const HARD_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskResult {
    pub easy: Estimate,
    pub k1: Estimate,
    pub k5: Estimate,
    pub k10: Estimate,
    pub average: f64,
    /// Mean of the four half-widths, an upper bound for the average's
    /// half-width whatever the correlation between tasks.
    pub average_ci: f64,
}

impl TaskResult {
    pub fn new(easy: Estimate, k1: Estimate, k5: Estimate, k10: Estimate) -> Self {
        let all = [easy, k1, k5, k10];
        Self {
            easy,
            k1,
            k5,
            k10,
            average: all.iter().map(|e| e.accuracy).sum::<f64>() / 4.0,
            average_ci: all.iter().map(|e| e.ci).sum::<f64>() / 4.0,
        }
    }
}

/// Easy task and hard task at every K in [`HARD_KS`], scoring each modified
/// story once.
pub fn evaluate_task(scorer: &mut dyn StoryScorer, perturbed: &[PerturbedStory]) -> Result<TaskResult> {
    if perturbed.is_empty() {
        bail!(Empty, "no perturbed stories");
    }
    let mut easy = 0;
    let mut hard = [0usize; HARD_KS.len()];
    for p in perturbed {
        let original = scorer.story_score(&p.original)?;
        let (modified, s) = scorer.score_and_suspicion(&p.modified)?;
        if s.len() != p.modified.len() {
            bail!(DimensionMismatch, "{} suspicion values for {} sentences", s.len(), p.modified.len());
        }
        if original < modified {
            easy += 1;
        }
        for (h, &k) in hard.iter_mut().zip(&HARD_KS) {
            if is_hit(&s, &p.positions, k, HitRule::Any) {
                *h += 1;
            }
        }
    }
    let n = perturbed.len();
    let [k1, k5, k10] = hard.map(|h| Estimate::from_hits(h, n));
    Ok(TaskResult::new(Estimate::from_hits(easy, n)?, k1?, k5?, k10?))
}

/// Probability that a uniform-random ranking of `len` positions places
/// `modified` given positions in its top `k` under `rule`.
pub fn random_hit_probability(len: usize, modified: usize, k: usize, rule: HitRule) -> f64 {
    let k = k.min(len);
    // probability that all of `m` fixed positions fall outside / inside the top k
    let all_in = |m: usize| (0..m).map(|i| (k as f64 - i as f64).max(0.0) / (len - i) as f64).product::<f64>();
    let all_out = |m: usize| (0..m).map(|i| ((len - k) as f64 - i as f64).max(0.0) / (len - i) as f64).product::<f64>();
    match rule {
        HitRule::Any => 1.0 - all_out(modified),
        HitRule::All => all_in(modified),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::perturb::{make_swap, swap_at, PerturbKind};
    use alloc::string::String;
    use alloc::vec;
    use proptest::prelude::*;

    fn story(n: usize) -> Story {
        Story { id: String::from("s"), sentences: (0..n).map(|i| vec![4 + i]).collect(), source: String::new() }
    }

    fn mutated(n: usize, t: usize) -> PerturbedStory {
        let original = story(n);
        let mut modified = original.clone();
        modified.sentences[t] = vec![1000 + t];
        PerturbedStory { original, modified, positions: vec![t], kind: PerturbKind::Mut1 }
    }

    /// Knows which sentences were altered by their token ids.
    struct Oracle;

    impl StoryScorer for Oracle {
        fn story_score(&mut self, story: &Story) -> Result<f64> {
            Ok(self.suspicion(story)?.iter().sum())
        }

        fn suspicion(&mut self, story: &Story) -> Result<Vec<f64>> {
            Ok(story.sentences.iter().enumerate().map(|(i, s)| if s[0] == 4 + i { 0.0 } else { 1.0 }).collect())
        }
    }

    #[test]
    fn oracle_scores_perfectly() {
        let mut noise = SeededNoise::new(1);
        let mut set: Vec<PerturbedStory> = (0..50).map(|i| mutated(8 + i % 5, 1 + i % 7)).collect();
        set.extend((0..50).map(|_| make_swap(&story(12), &mut noise).unwrap()));
        let r = evaluate_task(&mut Oracle, &set).unwrap();
        for e in [r.easy, r.k1, r.k5, r.k10] {
            assert_eq!(e.accuracy, 1.0);
            assert_eq!(e.ci, 0.0);
        }
        assert_eq!(r.average, 1.0);
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k_positions(&[0.5, 0.9, 0.5, 0.9, 0.1], 3), vec![1, 3, 0]);
        assert!(is_hit(&[0.5, 0.9, 0.5], &[0, 2], 2, HitRule::Any));
        assert!(!is_hit(&[0.5, 0.9, 0.5], &[0, 2], 2, HitRule::All));
    }

    #[test]
    fn hard_task_matches_brute_force() {
        // suspicion fixture with known ranks
        let p = mutated(6, 3);
        struct Fixed(Vec<f64>);
        impl StoryScorer for Fixed {
            fn story_score(&mut self, _: &Story) -> Result<f64> {
                Ok(0.0)
            }
            fn suspicion(&mut self, _: &Story) -> Result<Vec<f64>> {
                Ok(self.0.clone())
            }
        }
        let mut s = Fixed(vec![0.9, 0.1, 0.8, 0.3, 0.2, 0.7]);
        // order: 0, 2, 5, 3, 4, 1 -> position 3 has rank 4
        let acc = hard_task_accuracies(&mut s, &[p.clone()], &[1, 3, 4, 6], HitRule::Any).unwrap();
        assert_eq!(acc.iter().map(|e| e.accuracy).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 1.0]);
        assert!(hard_task_accuracy(&mut s, &[p.clone()], 0).is_err());
        assert!(hard_task_accuracy(&mut s, &[], 1).is_err());
        // ties count as failures on the easy task
        assert_eq!(easy_task_accuracy(&mut s, &[p]).unwrap().accuracy, 0.0);
    }

    #[test]
    fn wald_interval() {
        let e = Estimate::from_hits(30, 100).unwrap();
        assert!((e.ci - 1.96 * (0.21f64 / 100.0).sqrt()).abs() < 1e-15);
        assert!(Estimate::from_hits(0, 0).is_err());
    }

    #[test]
    fn random_probabilities_match_closed_forms() {
        for len in [10usize, 25, 53] {
            for k in [1usize, 5, 10] {
                let l = len as f64;
                let kf = k as f64;
                assert!((random_hit_probability(len, 1, k, HitRule::Any) - kf / l).abs() < 1e-12);
                let any = 1.0 - (l - kf) * (l - kf - 1.0) / (l * (l - 1.0));
                let all = kf * (kf - 1.0) / (l * (l - 1.0));
                assert!((random_hit_probability(len, 2, k, HitRule::Any) - any).abs() < 1e-12);
                assert!((random_hit_probability(len, 2, k, HitRule::All) - all).abs() < 1e-12);
            }
        }
        assert_eq!(random_hit_probability(5, 1, 10, HitRule::Any), 1.0);
    }

    #[test]
    fn coin_flip_easy_task_is_near_half() {
        let set: Vec<PerturbedStory> = (0..4000).map(|i| mutated(5, 1 + i % 4)).collect();
        let e = easy_task_accuracy(&mut RandomScorer { noise: SeededNoise::new(2) }, &set).unwrap();
        assert!((e.accuracy - 0.5).abs() < 2.0 * e.ci, "{e:?}");
    }

    proptest! {
        #[test]
        fn hard_accuracy_is_monotone_in_k(seed in any::<u64>(), len in 4usize..30) {
            let mut noise = SeededNoise::new(seed);
            let set: Vec<PerturbedStory> = (0..20).map(|_| make_swap(&story(len), &mut noise).unwrap()).collect();
            let ks: Vec<usize> = (1..=len).collect();
            for rule in [HitRule::Any, HitRule::All] {
                let acc = hard_task_accuracies(&mut RandomScorer { noise: SeededNoise::new(seed ^ 1) }, &set, &ks, rule).unwrap();
                prop_assert!(acc.windows(2).all(|w| w[0].accuracy <= w[1].accuracy));
                prop_assert_eq!(acc[len - 1].accuracy, 1.0);
            }
            let p = &set[0];
            prop_assert_eq!(swap_at(&p.modified, p.positions[0], p.positions[1]), p.original.clone());
        }
    }
}
