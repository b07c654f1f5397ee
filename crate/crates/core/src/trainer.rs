//! Alternating training: token-LM batches interleaved with hierarchical
//! batches (sentence encoder, TD-VAE, discriminators), with an extra
//! memory-conditioned LM step on a fixed cadence, epoch-level validation,
//! learning-rate halving and early stopping.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::bundle::ModelBundle;
use crate::corpus::{sample_batch, Corpus, StoryBlock};
use crate::error::{bail, Error, Result};
use crate::graph::{Graph, Var};
use crate::lm::story_tokens;
use crate::noise::{derive_seed, Noise, SeededNoise};
use crate::optim::{clip_grad_norm_per_group, sgd_nesterov_step, OptimizerState};
use crate::params::{Gradients, Group};
use crate::tdvae::{sample_time_pairs, TdVaeTerms};
use crate::tensor::Tensor;
use crate::vocab::{TokenId, EOS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// LM and hierarchical batches together.
    pub batches_per_epoch: usize,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub halve_lr: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Gradient-norm cap applied to each parameter group separately; 0 disables clipping.
    pub clip_norm: f64,
    pub block_sentences: usize,
    pub blocks_per_batch: usize,
    /// Sentences drawn per LM block before cutting to the context length.
    pub lm_block_sentences: usize,
    /// Run the memory-conditioned LM step on every n-th hierarchical batch; 0 disables it.
    pub psa_every: usize,
    pub valid_batches: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batches_per_epoch: 2000,
            max_epochs: 20,
            patience: 3,
            halve_lr: true,
            learning_rate: 0.01,
            momentum: 0.9,
            clip_norm: 5.0,
            block_sentences: 20,
            blocks_per_batch: 4,
            lm_block_sentences: 20,
            psa_every: 3,
            valid_batches: 8,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batches_per_epoch < 1 || self.max_epochs < 1 || self.blocks_per_batch < 1 || self.valid_batches < 1 {
            bail!(InvalidArgument, "batches_per_epoch, max_epochs, blocks_per_batch and valid_batches must be >= 1");
        }
        if self.block_sentences < 3 || self.lm_block_sentences < 1 {
            bail!(InvalidArgument, "hierarchical blocks need at least 3 sentences");
        }
        if !(self.clip_norm >= 0.0) {
            bail!(InvalidArgument, "clip_norm must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchKind {
    Lm,
    Hierarchical,
}

impl BatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lm => "lm",
            Self::Hierarchical => "hier",
        }
    }
}

/// Named loss terms of one batch. Names starting with `tdvae_log_` are
/// per-pair log densities reported for diagnostics; [`LossTerms::total`]
/// skips them because the `tdvae` term already holds their combined loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTerms {
    pub terms: Vec<(String, f64)>,
}

const DIAGNOSTIC_PREFIX: &str = "tdvae_log_";

impl LossTerms {
    fn push(&mut self, name: &str, v: f64) {
        self.terms.push((String::from(name), v));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|t| t.1)
    }

    pub fn total(&self) -> f64 {
        self.terms.iter().filter(|t| !t.0.starts_with(DIAGNOSTIC_PREFIX)).map(|t| t.1).sum()
    }

    fn add(&mut self, other: &LossTerms) {
        for (n, v) in &other.terms {
            match self.terms.iter_mut().find(|(m, _)| m == n) {
                Some(t) => t.1 += v,
                None => self.terms.push((n.clone(), *v)),
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for t in &mut self.terms {
            t.1 *= s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub kind: BatchKind,
    pub losses: LossTerms,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub valid: LossTerms,
    pub improved: bool,
    pub learning_rate: f64,
}

/// Progress counters; together with the optimizer state, the noise stream
/// and the parameters this is everything needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub epoch: usize,
    pub step: u64,
    pub step_in_epoch: usize,
    pub hier_batches: u64,
    pub best_valid: Option<f64>,
    pub bad_epochs: usize,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: OptimizerState,
    pub state: TrainerState,
    pub noise: SeededNoise,
    /// Parameter values at the best validation loss so far.
    pub best: Option<Vec<Tensor>>,
}

const VALID_TAG: u64 = 0x7661_6c69;

fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("loss term {name}")))
    }
}

/// Tokens for one LM block: the story prefix cut to the context length,
/// closed by EOS when the block reaches the end of its story.
fn lm_block_tokens(block: &StoryBlock, story_len: usize, context: usize) -> Vec<TokenId> {
    let mut t = story_tokens(&block.sentences);
    if block.start + block.sentences.len() == story_len {
        t.push(EOS);
    }
    t.truncate(context);
    t
}

/// Loss graph builders shared by training and validation.
struct Losses<'a> {
    bundle: &'a ModelBundle,
}

impl Losses<'_> {
    fn lm(&self, g: &mut Graph<'_>, tokens: &[Vec<TokenId>], terms: &mut LossTerms) -> Result<Option<Var>> {
        let mut parts = Vec::new();
        for t in tokens.iter().filter(|t| t.len() >= 2) {
            parts.push(self.bundle.lm.loss(g, t, None)?);
        }
        if parts.is_empty() {
            return Ok(None);
        }
        let cat = g.concat_rows(&parts);
        let loss = g.mean(cat);
        terms.push("lm", check_finite("lm", g.value(loss).item())?);
        Ok(Some(loss))
    }

    /// Quick-thoughts, pair, TD-VAE and discriminator losses over `blocks`
    /// (each with at least 3 sentences), plus the memory-conditioned LM loss
    /// when `psa_targets` is given.
    fn hierarchical(
        &self,
        g: &mut Graph<'_>,
        blocks: &[&[Vec<TokenId>]],
        psa_targets: Option<&[usize]>,
        noise: &mut impl Noise,
        terms: &mut LossTerms,
    ) -> Result<Var> {
        let b = self.bundle;
        let lens: Vec<usize> = blocks.iter().map(|s| s.len()).collect();
        let all: Vec<Vec<TokenId>> = blocks.iter().flat_map(|s| s.iter().cloned()).collect();
        let enc = b.encoder.encode_batch(g, &b.lm, &all)?;
        let e = enc.embeddings(g);
        let offsets: Vec<usize> = lens.iter().scan(0, |acc, &l| Some(core::mem::replace(acc, *acc + l))).collect();

        let mut qt = Vec::with_capacity(lens.len());
        for (&o, &l) in offsets.iter().zip(&lens) {
            let u = g.slice_rows(enc.u, o, l);
            let v = g.slice_rows(enc.v, o, l);
            qt.push(crate::encoder::quick_thoughts_loss(g, u, v)?);
        }
        let qt = g.concat_rows(&qt);
        let qt = g.mean(qt);
        terms.push("qt", check_finite("qt", g.value(qt).item())?);
        let mut parts = alloc::vec![qt];

        let (mut i1, mut i2, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for (&o, &l) in offsets.iter().zip(&lens) {
            for i in 0..l - 1 {
                i1.push(o + i);
                i2.push(o + i + 1);
                labels.push(0);
                let far: Vec<usize> = (0..l).filter(|&j| j.abs_diff(i) >= 2).collect();
                if far.is_empty() {
                    continue;
                }
                i1.push(o + i);
                i2.push(o + far[noise.index(far.len())]);
                labels.push(1);
            }
        }
        let e1 = g.gather_rows(e, &i1);
        let e2 = g.gather_rows(e, &i2);
        let pair = b.encoder.pair_loss(g, e1, e2, &labels)?;
        terms.push("pair", check_finite("pair", g.value(pair).item())?);
        parts.push(pair);

        let obs = g.detach(e);
        if let Some(tdvae) = &b.tdvae {
            let c = &tdvae.config;
            let mut pairs = Vec::new();
            for (bi, &l) in lens.iter().enumerate() {
                for (t1, t2) in sample_time_pairs(l, c.max_jump, c.samples, noise)? {
                    pairs.push((bi, t1, t2));
                }
            }
            let beliefs = tdvae.beliefs(g, obs, &lens)?;
            let (loss, t) = tdvae.loss(g, beliefs, obs, &lens, &pairs, noise)?;
            terms.push("tdvae", check_finite("tdvae", g.value(loss).item())?);
            for (name, v) in TdVaeTerms::NAMES.iter().zip(t.values()) {
                terms.push(&format!("tdvae_{name}"), check_finite(name, v)?);
            }
            parts.push(loss);
        }
        for d in &b.discriminators {
            let loss = d.loss(g, obs, &lens)?;
            let name = format!("disc_{}", d.config.kind.as_str());
            terms.push(&name, check_finite(&name, g.value(loss).item())?);
            parts.push(loss);
        }

        if let Some(targets) = psa_targets {
            let ctx = b.lm.config.context;
            let mut psa = Vec::new();
            for ((blk, &o), &t) in blocks.iter().zip(&offsets).zip(targets) {
                let mut tokens = story_tokens(&blk[..=t]);
                if tokens.len() > ctx {
                    tokens.drain(..tokens.len() - ctx);
                }
                let et = g.slice_rows(obs, o + t, 1);
                let mem = b.psa.project_var(g, et);
                psa.push(b.lm.loss(g, &tokens, Some(mem))?);
            }
            let psa = g.concat_rows(&psa);
            let psa = g.mean(psa);
            terms.push("psa", check_finite("psa", g.value(psa).item())?);
            parts.push(psa);
        }

        let all = g.concat_rows(&parts);
        Ok(g.sum(all))
    }
}

/// Hierarchical blocks with enough sentences for every objective.
fn usable<'a>(blocks: &'a [StoryBlock]) -> Vec<&'a [Vec<TokenId>]> {
    blocks.iter().filter(|b| b.sentences.len() >= 3).map(|b| &b.sentences[..]).collect()
}

impl Trainer {
    pub fn new(config: TrainConfig, bundle: &ModelBundle) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&bundle.store, config.learning_rate, config.momentum)?;
        let noise = SeededNoise::new(config.seed);
        Ok(Self {
            config,
            optimizer,
            state: TrainerState {
                epoch: 0,
                step: 0,
                step_in_epoch: 0,
                hier_batches: 0,
                best_valid: None,
                bad_epochs: 0,
                finished: false,
            },
            noise,
            best: None,
        })
    }

    pub fn next_kind(&self) -> BatchKind {
        if self.state.step % 2 == 0 {
            BatchKind::Lm
        } else {
            BatchKind::Hierarchical
        }
    }

    /// One optimizer step on the next batch of the alternating schedule.
    pub fn step(&mut self, bundle: &mut ModelBundle, train: &Corpus) -> Result<StepRecord> {
        let kind = self.next_kind();
        let mut terms = LossTerms::default();
        let grads: Gradients = {
            let losses = Losses { bundle };
            let mut g = Graph::new(&bundle.store);
            let loss = match kind {
                BatchKind::Lm => {
                    let blocks =
                        sample_batch(&[train], self.config.lm_block_sentences, self.config.blocks_per_batch, &mut self.noise)?;
                    let ctx = bundle.lm.config.context;
                    let tokens: Vec<Vec<TokenId>> =
                        blocks.iter().map(|b| lm_block_tokens(b, train.stories[b.story].len(), ctx)).collect();
                    losses.lm(&mut g, &tokens, &mut terms)?
                }
                BatchKind::Hierarchical => {
                    let blocks =
                        sample_batch(&[train], self.config.block_sentences, self.config.blocks_per_batch, &mut self.noise)?;
                    let blocks = usable(&blocks);
                    let psa = self.config.psa_every > 0 && (self.state.hier_batches + 1) % self.config.psa_every as u64 == 0;
                    if blocks.is_empty() {
                        None
                    } else {
                        let targets: Option<Vec<usize>> =
                            psa.then(|| blocks.iter().map(|b| 1 + self.noise.index(b.len() - 1)).collect());
                        Some(losses.hierarchical(&mut g, &blocks, targets.as_deref(), &mut self.noise, &mut terms)?)
                    }
                }
            };
            match loss {
                Some(l) => g.backward(l),
                None => Gradients::new(bundle.store.len()),
            }
        };
        bundle.store.accumulate(&grads);
        let grad_norm = clip_grad_norm_per_group(&mut bundle.store, self.config.clip_norm);
        if !grad_norm.is_finite() {
            bundle.store.zero_grads();
            return Err(Error::NonFinite(String::from("gradient norm")));
        }
        sgd_nesterov_step(&mut bundle.store, &mut self.optimizer)?;
        if kind == BatchKind::Hierarchical {
            self.state.hier_batches += 1;
        }
        let record = StepRecord { step: self.state.step, epoch: self.state.epoch, kind, losses: terms, grad_norm };
        self.state.step += 1;
        self.state.step_in_epoch += 1;
        Ok(record)
    }

    /// Mean loss terms over a fixed set of validation batches drawn from
    /// their own seed, identical in every epoch.
    pub fn validate(&self, bundle: &ModelBundle, valid: &Corpus) -> Result<LossTerms> {
        let mut noise = SeededNoise::new(derive_seed(self.config.seed, VALID_TAG));
        let losses = Losses { bundle };
        let mut sum = LossTerms::default();
        let ctx = bundle.lm.config.context;
        for _ in 0..self.config.valid_batches {
            let mut terms = LossTerms::default();
            let lm_blocks = sample_batch(&[valid], self.config.lm_block_sentences, self.config.blocks_per_batch, &mut noise)?;
            let tokens: Vec<Vec<TokenId>> =
                lm_blocks.iter().map(|b| lm_block_tokens(b, valid.stories[b.story].len(), ctx)).collect();
            losses.lm(&mut Graph::new(&bundle.store), &tokens, &mut terms)?;
            let blocks = sample_batch(&[valid], self.config.block_sentences, self.config.blocks_per_batch, &mut noise)?;
            let blocks = usable(&blocks);
            if !blocks.is_empty() {
                losses.hierarchical(&mut Graph::new(&bundle.store), &blocks, None, &mut noise, &mut terms)?;
            }
            sum.add(&terms);
        }
        sum.scale(1.0 / self.config.valid_batches as f64);
        Ok(sum)
    }

    /// Validation, best-snapshot bookkeeping, learning-rate halving and the
    /// stopping decision at the end of an epoch.
    pub fn end_epoch(&mut self, bundle: &ModelBundle, valid: &Corpus) -> Result<EpochRecord> {
        let v = self.validate(bundle, valid)?;
        let total = check_finite("validation", v.total())?;
        let improved = self.state.best_valid.is_none_or(|b| total < b);
        if improved {
            self.state.best_valid = Some(total);
            self.state.bad_epochs = 0;
            self.best = Some(bundle.store.params().iter().map(|p| p.value.clone()).collect());
        } else {
            self.state.bad_epochs += 1;
            if self.config.halve_lr {
                self.optimizer.learning_rate *= 0.5;
            }
        }
        let record = EpochRecord { epoch: self.state.epoch, valid: v, improved, learning_rate: self.optimizer.learning_rate };
        self.state.epoch += 1;
        self.state.step_in_epoch = 0;
        if self.state.bad_epochs >= self.config.patience || self.state.epoch >= self.config.max_epochs {
            self.state.finished = true;
        }
        Ok(record)
    }

    /// Runs until early stopping or `max_epochs`, resuming mid-epoch if the
    /// state says so. Returns the epoch records of this call.
    pub fn train(
        &mut self,
        bundle: &mut ModelBundle,
        train: &Corpus,
        valid: &Corpus,
        mut on_step: impl FnMut(&StepRecord),
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        let mut out = Vec::new();
        while !self.state.finished {
            while self.state.step_in_epoch < self.config.batches_per_epoch {
                on_step(&self.step(bundle, train)?);
            }
            let r = self.end_epoch(bundle, valid)?;
            on_epoch(&r);
            out.push(r);
        }
        Ok(out)
    }

    /// Copies the best snapshot, if any, into `bundle`.
    pub fn restore_best(&self, bundle: &mut ModelBundle) {
        if let Some(best) = &self.best {
            let ids: Vec<_> = bundle.store.ids().collect();
            for (id, v) in ids.into_iter().zip(best) {
                *bundle.store.value_mut(id) = v.clone();
            }
        }
    }
}

/// Parameter groups with a non-zero gradient of `loss` alone.
pub fn groups_touched(bundle: &ModelBundle, build: impl FnOnce(&mut Graph<'_>) -> Result<Var>) -> Result<Vec<Group>> {
    let mut g = Graph::new(&bundle.store);
    let loss = build(&mut g)?;
    let grads = g.backward(loss);
    let mut out: Vec<Group> = bundle
        .store
        .ids()
        .filter(|&id| grads.get(id).is_some_and(|t| t.data().iter().any(|&x| x != 0.0)))
        .map(|id| bundle.store.param(id).group)
        .collect();
    out.sort();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::small_config;
    use crate::corpus::{generate_story_world, split_corpus, StoryWorldConfig};

    fn setup() -> (ModelBundle, Corpus, Corpus) {
        let world = StoryWorldConfig { min_sentences: 6, max_sentences: 12, ..Default::default() };
        let corpus = generate_story_world(&world, 4, 30).unwrap();
        let (train, valid, _) = split_corpus(&corpus, [0.8, 0.1, 0.1], 1).unwrap();
        let bundle = ModelBundle::new(small_config(), corpus.vocabulary.clone(), 2).unwrap();
        (bundle, train, valid)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batches_per_epoch: 6,
            max_epochs: 3,
            block_sentences: 5,
            blocks_per_batch: 2,
            lm_block_sentences: 4,
            valid_batches: 1,
            ..Default::default()
        }
    }

    #[test]
    fn alternation_and_psa_cadence() {
        let (mut bundle, train, _) = setup();
        let mut t = Trainer::new(cfg(), &bundle).unwrap();
        let recs: Vec<StepRecord> = (0..12).map(|_| t.step(&mut bundle, &train).unwrap()).collect();
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.kind, if i % 2 == 0 { BatchKind::Lm } else { BatchKind::Hierarchical });
            match r.kind {
                BatchKind::Lm => assert_eq!(r.losses.terms.len(), 1),
                BatchKind::Hierarchical => {
                    assert!(r.losses.get("qt").is_some() && r.losses.get("tdvae_log_pd").is_some());
                    let parts = ["qt", "pair", "tdvae", "disc_lstm", "disc_transformer", "psa"];
                    let sum: f64 = parts.iter().filter_map(|n| r.losses.get(n)).sum();
                    assert!((r.losses.total() - sum).abs() < 1e-9);
                    let l = |n: &str| r.losses.get(&format!("tdvae_log_{n}")).unwrap();
                    let elbo = l("pd") + l("pb_t1") + l("pt") - l("pb_t2") - l("qs");
                    assert!((r.losses.get("tdvae").unwrap() + elbo).abs() < 1e-9 * elbo.abs().max(1.0));
                    assert!(r.losses.get("disc_lstm").is_some() && r.losses.get("disc_transformer").is_some());
                    // hierarchical batches 3 and 6 (steps 5 and 11)
                    assert_eq!(r.losses.get("psa").is_some(), i == 5 || i == 11, "step {i}");
                }
            }
        }
        assert_eq!(t.state.hier_batches, 6);
    }

    #[test]
    fn deterministic_runs() {
        let (bundle, train, valid) = setup();
        let run = || {
            let mut b = bundle.clone();
            let mut t = Trainer::new(cfg(), &b).unwrap();
            let mut log = Vec::new();
            t.train(&mut b, &train, &valid, |r| log.push(r.losses.clone()), |_| {}).unwrap();
            (b.store, log)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let (mut bundle, train, valid) = setup();
        let mut t = Trainer::new(TrainConfig { patience: 0, ..cfg() }, &bundle).unwrap();
        let epochs = t.train(&mut bundle, &train, &valid, |_| {}, |_| {}).unwrap();
        assert_eq!(epochs.len(), 1);
        assert_eq!(t.state.step, 6);
        assert!(t.best.is_some());
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let (bundle, train, _) = setup();
        let mut a = bundle.clone();
        let mut ta = Trainer::new(cfg(), &a).unwrap();
        let full: Vec<LossTerms> = (0..20).map(|_| ta.step(&mut a, &train).unwrap().losses).collect();
        let mut b = bundle.clone();
        let mut tb = Trainer::new(cfg(), &b).unwrap();
        for _ in 0..10 {
            tb.step(&mut b, &train).unwrap();
        }
        let (mut b2, tb2) = (b.clone(), tb.clone());
        let mut tb2 = tb2;
        let rest: Vec<LossTerms> = (0..10).map(|_| tb2.step(&mut b2, &train).unwrap().losses).collect();
        assert_eq!(&full[10..], &rest[..]);
        assert_eq!(a.store, b2.store);
    }

    #[test]
    fn tdvae_and_discriminator_gradients_stay_in_their_groups() {
        let (bundle, train, _) = setup();
        let story = &train.stories[0].sentences[..5];
        let lens = [5usize];
        let touched = groups_touched(&bundle, |g| {
            let e = bundle.encoder.encode_batch(g, &bundle.lm, story)?.embeddings(g);
            let obs = g.detach(e);
            let tdvae = bundle.tdvae()?;
            let beliefs = tdvae.beliefs(g, obs, &lens)?;
            let (l, _) = tdvae.loss(g, beliefs, obs, &lens, &[(0, 1, 3), (0, 0, 2)], &mut SeededNoise::new(1))?;
            let d = bundle.discriminators[0].loss(g, obs, &lens)?;
            Ok(g.add(l, d))
        })
        .unwrap();
        assert_eq!(touched, alloc::vec![Group::TdVae, Group::Discriminator]);
    }

    #[test]
    fn validation_is_fixed() {
        let (bundle, _, valid) = setup();
        let t = Trainer::new(cfg(), &bundle).unwrap();
        let a = t.validate(&bundle, &valid).unwrap();
        assert_eq!(a, t.validate(&bundle, &valid).unwrap());
        assert!(a.get("lm").is_some() && a.get("pair").is_some());
    }
}
