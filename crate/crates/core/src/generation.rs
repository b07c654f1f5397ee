//! Story continuation by plain sampling or by beam search over sampled
//! candidate sentences reranked against a predicted next embedding.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::bundle::ModelBundle;
use crate::corpus::Story;
use crate::discriminator::{rank_by_dot, DiscriminatorKind};
use crate::encoder::cosine_similarity;
use crate::error::{bail, Result};
use crate::lm::{sample_sentence, story_tokens};
use crate::noise::{derive_seed, SeededNoise};
use crate::tensor::Tensor;
use crate::vocab::{TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationMode {
    Sample,
    Rerank,
    ConditionRerank,
}

impl GenerationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Rerank => "rerank",
            Self::ConditionRerank => "condition_rerank",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Self::Sample),
            "rerank" => Ok(Self::Rerank),
            "condition_rerank" => Ok(Self::ConditionRerank),
            other => bail!(InvalidArgument, "unknown generation mode {other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSpec {
    pub mode: GenerationMode,
    pub beam: usize,
    pub candidates: usize,
    pub top_p: f64,
    pub steps: usize,
    pub max_sentence_len: usize,
    /// Samples averaged by the TD-VAE rollout when predicting the next embedding.
    pub rollout_samples: usize,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        Self {
            mode: GenerationMode::Rerank,
            beam: 10,
            candidates: 100,
            top_p: 0.925,
            steps: 5,
            max_sentence_len: 24,
            rollout_samples: 1,
        }
    }
}

impl GenerationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 || self.max_sentence_len < 1 {
            bail!(InvalidArgument, "generation needs steps >= 1 and max_sentence_len >= 1");
        }
        if self.mode != GenerationMode::Sample && (self.beam < 1 || self.beam > self.candidates) {
            bail!(InvalidArgument, "beam {} must be in 1..={} (candidates)", self.beam, self.candidates);
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            bail!(InvalidArgument, "top-p {} outside (0, 1]", self.top_p);
        }
        Ok(())
    }
}

/// Predicts the next sentence embedding for a story so far and scores
/// candidate continuations against it (higher is better).
pub trait CandidateScorer {
    fn expected_next(&mut self, bundle: &ModelBundle, sentences: &[TokenSequence], noise: &mut SeededNoise)
        -> Result<Vec<f64>>;

    fn score(
        &mut self,
        bundle: &ModelBundle,
        expected: &[f64],
        candidates: &[TokenSequence],
    ) -> Result<Vec<f64>>;
}

/// One-step TD-VAE prediction, cosine similarity scoring.
#[derive(Debug, Clone, Copy)]
pub struct TdVaeScorer {
    pub samples: usize,
}

impl CandidateScorer for TdVaeScorer {
    fn expected_next(&mut self, bundle: &ModelBundle, sentences: &[TokenSequence], noise: &mut SeededNoise) -> Result<Vec<f64>> {
        let tdvae = bundle.tdvae()?;
        let e = bundle.encoder.encode_all(&bundle.store, &bundle.lm, sentences)?;
        tdvae.expected_next(&bundle.store, &e, self.samples, noise)
    }

    fn score(&mut self, bundle: &ModelBundle, expected: &[f64], candidates: &[TokenSequence]) -> Result<Vec<f64>> {
        let e = bundle.encoder.encode_all(&bundle.store, &bundle.lm, candidates)?;
        Ok((0..e.rows()).map(|r| cosine_similarity(e.row_slice(r), expected)).collect())
    }
}

/// Discriminator context vector, softmax-of-dot-product scoring.
#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorScorer {
    pub kind: DiscriminatorKind,
}

impl CandidateScorer for DiscriminatorScorer {
    fn expected_next(&mut self, bundle: &ModelBundle, sentences: &[TokenSequence], _: &mut SeededNoise) -> Result<Vec<f64>> {
        let d = bundle.discriminator(self.kind)?;
        let e = bundle.encoder.encode_all(&bundle.store, &bundle.lm, sentences)?;
        d.context_vector(&bundle.store, &e)
    }

    fn score(&mut self, bundle: &ModelBundle, expected: &[f64], candidates: &[TokenSequence]) -> Result<Vec<f64>> {
        let e = bundle.encoder.encode_all(&bundle.store, &bundle.lm, candidates)?;
        let rows: Vec<Vec<f64>> = (0..e.rows()).map(|r| e.row_slice(r).to_vec()).collect();
        rank_by_dot(expected, &rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamEntry {
    pub sentences: Vec<TokenSequence>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    /// Index of the beam entry the candidate extends.
    pub beam: usize,
    pub candidate: TokenSequence,
    pub similarity: f64,
    pub cumulative: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub story: Story,
    pub score: f64,
    pub trace: Vec<TraceRecord>,
}

fn sampling_seed(noise: &mut SeededNoise) -> u64 {
    noise.rng().random()
}

/// Continues `prompt` by `spec.steps` sentences. Each candidate sentence draws
/// from its own stream derived from one seed taken from `noise`, so the
/// sampled candidates do not depend on how scoring consumes randomness.
pub fn generate_continuation(
    bundle: &ModelBundle,
    prompt: &Story,
    spec: &GenerationSpec,
    scorer: Option<&mut dyn CandidateScorer>,
    noise: &mut SeededNoise,
) -> Result<Generation> {
    spec.validate()?;
    if prompt.is_empty() {
        bail!(Empty, "prompt has no sentences");
    }
    let base = sampling_seed(noise);
    let stream = |step: usize, beam: usize, cand: usize| {
        SeededNoise::new(derive_seed(derive_seed(derive_seed(base, step as u64), beam as u64), cand as u64))
    };
    let (lm, store) = (&bundle.lm, &bundle.store);
    let mut trace = Vec::new();

    let scorer = match (spec.mode, scorer) {
        (GenerationMode::Sample, _) => {
            let mut sentences = prompt.sentences.clone();
            for step in 0..spec.steps {
                let ctx = story_tokens(&sentences);
                let s = sample_sentence(lm, store, &ctx, None, spec.top_p, spec.max_sentence_len, &mut stream(step, 0, 0))?;
                trace.push(TraceRecord { step, beam: 0, candidate: s.clone(), similarity: 0.0, cumulative: 0.0, kept: true });
                sentences.push(s);
            }
            let story = Story { id: format!("{}-cont", prompt.id), sentences, source: prompt.source.clone() };
            return Ok(Generation { story, score: 0.0, trace });
        }
        (_, Some(s)) => s,
        (mode, None) => bail!(MissingComponent, "mode {} needs a scorer", mode.as_str()),
    };

    let mut beams = alloc::vec![BeamEntry { sentences: prompt.sentences.clone(), score: 0.0 }];
    for step in 0..spec.steps {
        let mut pool: Vec<(usize, TokenSequence, f64, f64)> = Vec::new();
        for (bi, entry) in beams.iter().enumerate() {
            let expected = scorer.expected_next(bundle, &entry.sentences, noise)?;
            let memory = match spec.mode {
                GenerationMode::ConditionRerank => Some(bundle.psa.project(store, &expected)?),
                _ => None,
            };
            let ctx = story_tokens(&entry.sentences);
            let mut cands: Vec<TokenSequence> = Vec::with_capacity(spec.candidates);
            for c in 0..spec.candidates {
                let s = sample_sentence(lm, store, &ctx, memory.as_ref(), spec.top_p, spec.max_sentence_len, &mut stream(step, bi, c))?;
                if !cands.contains(&s) {
                    cands.push(s);
                }
            }
            let scores = scorer.score(bundle, &expected, &cands)?;
            if scores.len() != cands.len() {
                bail!(DimensionMismatch, "scorer returned {} scores for {} candidates", scores.len(), cands.len());
            }
            for (cand, s) in cands.into_iter().zip(scores) {
                pool.push((bi, cand, s, entry.score + s));
            }
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| pool[b].3.total_cmp(&pool[a].3));
        let keep = &order[..spec.beam.min(order.len())];
        let mut next = Vec::with_capacity(keep.len());
        for &i in keep {
            let (bi, cand, _, total) = &pool[i];
            let mut sentences = beams[*bi].sentences.clone();
            sentences.push(cand.clone());
            next.push(BeamEntry { sentences, score: *total });
        }
        for (i, (bi, cand, s, total)) in pool.into_iter().enumerate() {
            trace.push(TraceRecord { step, beam: bi, candidate: cand, similarity: s, cumulative: total, kept: keep.contains(&i) });
        }
        beams = next;
    }
    let best = beams.into_iter().next().expect("beam is never empty");
    let story = Story { id: format!("{}-cont", prompt.id), sentences: best.sentences, source: prompt.source.clone() };
    Ok(Generation { story, score: best.score, trace })
}

/// One `key=value` line per trace record.
pub fn format_trace(trace: &[TraceRecord], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&format!(
            "step={} beam={} similarity={:.6} cumulative={:.6} kept={} text={}\n",
            r.step,
            r.beam,
            r.similarity,
            r.cumulative,
            r.kept,
            vocab.decode(&r.candidate)
        ));
    }
    out
}

/// Checks that the returned path scores at least as high as every candidate
/// path of the final step.
pub fn beam_is_monotone(generation: &Generation) -> bool {
    let last = generation.trace.iter().map(|r| r.step).max();
    generation.trace.iter().filter(|r| Some(r.step) == last).all(|r| generation.score >= r.cumulative)
}

/// Embeddings of a story's sentences, `T x P`, for scorers outside this module.
pub fn story_embeddings(bundle: &ModelBundle, sentences: &[TokenSequence]) -> Result<Tensor> {
    bundle.encoder.encode_all(&bundle.store, &bundle.lm, sentences)
}
