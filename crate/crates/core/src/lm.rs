//! Small pre-norm transformer token model with optional memory prefix
//! (pseudo self-attention), nucleus sampling and sliding-window perplexity.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::corpus::Story;
use crate::error::{bail, Error, Result};
use crate::graph::{gelu, AttnMask, Graph, Var};
use crate::nn::{Builder, LayerNorm, Linear, TransformerBlock};
use crate::noise::Noise;
use crate::params::{Group, Init, ParamId, ParameterStore};
use crate::tensor::Tensor;
use crate::vocab::{TokenId, TokenSequence, BOS, EOS, RESERVED, SENT_SEP, UNK};

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub context: usize,
    pub vocab_size: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { n_layers: 4, hidden: 128, heads: 4, context: 256, vocab_size: 500 }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            bail!(InvalidArgument, "lm hidden {} must be a positive multiple of heads {}", self.hidden, self.heads);
        }
        if self.context < 16 {
            bail!(InvalidArgument, "lm context {} below 16", self.context);
        }
        if self.vocab_size < RESERVED.len() {
            bail!(InvalidArgument, "vocabulary size {} below reserved ids", self.vocab_size);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TokenLm {
    pub config: LmConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    pub out: Linear,
    /// Ids at or above this are unused capacity and never sampled.
    pub active_vocab: usize,
}

/// One hidden row per layer, spliced in as an extra key/value position.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryPrefix {
    /// `n_layers x hidden`.
    pub hidden: Tensor,
}

/// The `W_m` projection from a sentence embedding to a memory prefix.
#[derive(Debug, Clone)]
pub struct PsaProjection {
    pub weight: ParamId,
    pub input_dim: usize,
    pub n_layers: usize,
    pub hidden: usize,
}

impl PsaProjection {
    pub fn new(store: &mut ParameterStore, rng: &mut impl Rng, input_dim: usize, lm: &LmConfig) -> Result<Self> {
        let mut b = Builder::new(store, rng, Group::Psa, "psa");
        let weight = b.param("w_m", input_dim, lm.n_layers * lm.hidden, Init::Normal(0.02))?;
        Ok(Self { weight, input_dim, n_layers: lm.n_layers, hidden: lm.hidden })
    }

    /// `h_mem = e · W_m`, reshaped to `n_layers x hidden`.
    pub fn project(&self, store: &ParameterStore, e: &[f64]) -> Result<MemoryPrefix> {
        if e.len() != self.input_dim {
            bail!(DimensionMismatch, "embedding {} vs projection input {}", e.len(), self.input_dim);
        }
        let h = Tensor::row(e.to_vec()).matmul(store.value(self.weight));
        Ok(MemoryPrefix { hidden: h.reshape(self.n_layers, self.hidden)? })
    }

    /// Graph version of [`PsaProjection::project`] for a `1 x P` input.
    pub fn project_var(&self, g: &mut Graph<'_>, e: Var) -> Var {
        let w = g.param(self.weight);
        let h = g.matmul(e, w);
        g.reshape(h, self.n_layers, self.hidden)
    }
}

fn row_is_zero(t: &Tensor, r: usize) -> bool {
    t.row_slice(r).iter().all(|&x| x == 0.0)
}

impl TokenLm {
    pub fn new(store: &mut ParameterStore, rng: &mut impl Rng, config: LmConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::new(store, rng, Group::Lm, "lm");
        let (h, v) = (config.hidden, config.vocab_size);
        let tok_emb = b.param("tok_emb", v, h, Init::Normal(0.1))?;
        let pos_emb = b.param("pos_emb", config.context, h, Init::Normal(0.02))?;
        let blocks = (0..config.n_layers)
            .map(|l| TransformerBlock::new(&mut b, &alloc::format!("block{l}"), h, config.heads))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(&mut b, "ln_f", h)?;
        let out = Linear::new(&mut b, "out", h, v, true)?;
        let active_vocab = config.vocab_size;
        Ok(Self { config, tok_emb, pos_emb, blocks, ln_f, out, active_vocab })
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.len() > self.config.context {
            return Err(Error::SequenceTooLong { len: tokens.len(), context: self.config.context });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfVocabulary { id: id as usize, size: self.config.vocab_size });
        }
        Ok(())
    }

    /// Token embedding rows, shared with the sentence encoders.
    pub fn embed_tokens(&self, g: &mut Graph<'_>, tokens: &[TokenId]) -> Var {
        let table = g.param(self.tok_emb);
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        g.gather_rows(table, &idx)
    }

    /// Final hidden states (after the closing layer norm) for several short
    /// sequences packed end to end: `positions` restart per sequence and
    /// attention stays inside each `segments` id. `T x hidden`.
    pub fn features(&self, g: &mut Graph<'_>, tokens: &[TokenId], positions: &[usize], segments: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            bail!(Empty, "no tokens");
        }
        if positions.len() != tokens.len() || segments.len() != tokens.len() {
            bail!(DimensionMismatch, "{} tokens, {} positions, {} segments", tokens.len(), positions.len(), segments.len());
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= self.config.context) {
            return Err(Error::SequenceTooLong { len: p + 1, context: self.config.context });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfVocabulary { id: id as usize, size: self.config.vocab_size });
        }
        let emb = self.embed_tokens(g, tokens);
        let pos_table = g.param(self.pos_emb);
        let pos = g.gather_rows(pos_table, positions);
        let mut x = g.add(emb, pos);
        let mask = AttnMask { segments: Some(segments.to_vec()), ..AttnMask::causal() };
        for block in &self.blocks {
            x = block.forward(g, x, &mask, None);
        }
        Ok(self.ln_f.forward(g, x))
    }

    /// Next-token logits for every position, `T x V`. `memory` is an
    /// `n_layers x hidden` prefix; layers whose row is exactly zero see no memory.
    pub fn logits(&self, g: &mut Graph<'_>, tokens: &[TokenId], memory: Option<Var>) -> Result<Var> {
        self.check_tokens(tokens)?;
        if tokens.is_empty() {
            bail!(Empty, "no tokens");
        }
        if let Some(m) = memory {
            if g.shape(m) != (self.config.n_layers, self.config.hidden) {
                bail!(DimensionMismatch, "memory {:?} vs ({}, {})", g.shape(m), self.config.n_layers, self.config.hidden);
            }
        }
        let t = tokens.len();
        let emb = self.embed_tokens(g, tokens);
        let pos_table = g.param(self.pos_emb);
        let pos = g.slice_rows(pos_table, 0, t);
        let mut x = g.add(emb, pos);
        let plain = AttnMask::causal();
        let with_mem = AttnMask { memory: 1, ..AttnMask::default() };
        for (l, block) in self.blocks.iter().enumerate() {
            let mem_row = match memory {
                Some(m) if !row_is_zero(g.value(m), l) => Some(g.slice_rows(m, l, 1)),
                _ => None,
            };
            let mask = if mem_row.is_some() { &with_mem } else { &plain };
            x = block.forward(g, x, mask, mem_row);
        }
        let x = self.ln_f.forward(g, x);
        Ok(self.out.forward(g, x))
    }

    /// Mean next-token negative log-likelihood over the `T - 1` predicted positions.
    pub fn loss(&self, g: &mut Graph<'_>, tokens: &[TokenId], memory: Option<Var>) -> Result<Var> {
        if tokens.len() < 2 {
            bail!(InvalidArgument, "lm loss needs at least 2 tokens, got {}", tokens.len());
        }
        let logits = self.logits(g, tokens, memory)?;
        let mut targets: Vec<Option<usize>> = tokens[1..].iter().map(|&t| Some(t as usize)).collect();
        targets.push(None);
        Ok(g.cross_entropy(logits, &targets, None))
    }

    /// Incremental decoder with cached keys and values.
    pub fn decoder<'a>(&'a self, store: &'a ParameterStore, memory: Option<&MemoryPrefix>) -> Result<Decoder<'a>> {
        Decoder::new(self, store, memory)
    }
}

/// Evaluates the model one token at a time without building a graph.
pub struct Decoder<'a> {
    lm: &'a TokenLm,
    store: &'a ParameterStore,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
    len: usize,
}

impl<'a> Decoder<'a> {
    fn new(lm: &'a TokenLm, store: &'a ParameterStore, memory: Option<&MemoryPrefix>) -> Result<Self> {
        let n = lm.blocks.len();
        let (mut keys, mut values) = (vec![Vec::new(); n], vec![Vec::new(); n]);
        if let Some(m) = memory {
            if m.hidden.shape() != [n, lm.config.hidden] {
                bail!(DimensionMismatch, "memory {:?} vs ({n}, {})", m.hidden.shape(), lm.config.hidden);
            }
            for (l, block) in lm.blocks.iter().enumerate() {
                if row_is_zero(&m.hidden, l) {
                    continue;
                }
                let h = block.ln1.apply(store, m.hidden.row_slice(l));
                keys[l].push(block.key.apply(store, &h));
                values[l].push(block.value.apply(store, &h));
            }
        }
        Ok(Self { lm, store, keys, values, len: 0 })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds one token and returns the logits for the next.
    pub fn push(&mut self, token: TokenId) -> Result<Vec<f64>> {
        let cfg = &self.lm.config;
        if self.len >= cfg.context {
            return Err(Error::SequenceTooLong { len: self.len + 1, context: cfg.context });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::TokenOutOfVocabulary { id: token as usize, size: cfg.vocab_size });
        }
        let s = self.store;
        let mut x: Vec<f64> = s
            .value(self.lm.tok_emb)
            .row_slice(token as usize)
            .iter()
            .zip(s.value(self.lm.pos_emb).row_slice(self.len))
            .map(|(a, b)| a + b)
            .collect();
        let (hd, heads) = (cfg.hidden / cfg.heads, cfg.heads);
        let scale = 1.0 / (hd as f64).sqrt();
        for (l, block) in self.lm.blocks.iter().enumerate() {
            let h = block.ln1.apply(s, &x);
            let q = block.query.apply(s, &h);
            self.keys[l].push(block.key.apply(s, &h));
            self.values[l].push(block.value.apply(s, &h));
            let (ks, vs) = (&self.keys[l], &self.values[l]);
            let mut att = vec![0.0; cfg.hidden];
            let mut w = vec![0.0; ks.len()];
            for head in 0..heads {
                let r = head * hd..(head + 1) * hd;
                let mut max = f64::NEG_INFINITY;
                for (wi, k) in w.iter_mut().zip(ks) {
                    *wi = q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale;
                    max = max.max(*wi);
                }
                let mut z = 0.0;
                for wi in w.iter_mut() {
                    *wi = (*wi - max).exp();
                    z += *wi;
                }
                for (wi, v) in w.iter().zip(vs) {
                    let p = wi / z;
                    for (o, vv) in att[r.clone()].iter_mut().zip(&v[r.clone()]) {
                        *o += p * vv;
                    }
                }
            }
            let a = block.proj.apply(s, &att);
            for (xi, ai) in x.iter_mut().zip(&a) {
                *xi += ai;
            }
            let h = block.ln2.apply(s, &x);
            let f: Vec<f64> = block.fc1.apply(s, &h).into_iter().map(gelu).collect();
            let f = block.fc2.apply(s, &f);
            for (xi, fi) in x.iter_mut().zip(&f) {
                *xi += fi;
            }
        }
        self.len += 1;
        let h = self.lm.ln_f.apply(s, &x);
        Ok(self.lm.out.apply(s, &h))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Keeps the smallest most-probable prefix whose mass reaches `p` and
/// renormalizes it; everything else becomes zero.
pub fn top_p_filter(probs: &[f64], p: f64) -> Result<Vec<f64>> {
    if probs.is_empty() {
        bail!(Empty, "empty probability vector");
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 || probs.iter().any(|&x| !(x >= 0.0)) {
        bail!(InvalidArgument, "probabilities must be non-negative and sum to 1 (sum {total})");
    }
    if !(p > 0.0 && p <= 1.0) {
        bail!(InvalidArgument, "top-p threshold {p} outside (0, 1]");
    }
    let order = sorted_desc(probs);
    let mut out = vec![0.0; probs.len()];
    let mut cum = 0.0;
    for &i in &order {
        out[i] = probs[i];
        cum += probs[i];
        if cum >= p - 1e-12 {
            break;
        }
    }
    for x in out.iter_mut() {
        *x /= cum;
    }
    Ok(out)
}

fn sorted_desc(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    order
}

/// Inverse-CDF draw walking tokens from most to least probable, so `u = 0`
/// picks the argmax.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let order = sorted_desc(probs);
    let mut cum = 0.0;
    let mut last = order[0];
    for &i in &order {
        if probs[i] <= 0.0 {
            break;
        }
        last = i;
        cum += probs[i];
        if u < cum {
            return i;
        }
    }
    last
}

/// `[BOS] s_1 SEP s_2 SEP ...` for the given sentences.
pub fn story_tokens<'s>(sentences: impl IntoIterator<Item = &'s TokenSequence>) -> TokenSequence {
    let mut out = vec![BOS];
    for s in sentences {
        out.extend_from_slice(s);
        out.push(SENT_SEP);
    }
    out
}

/// Samples one sentence after `context`, stopping at a separator, end token or
/// `max_len` tokens. The first token is never a terminator, and UNK and BOS are
/// never emitted. The context is cut from the left to leave room for `max_len`.
pub fn sample_sentence(
    lm: &TokenLm,
    store: &ParameterStore,
    context: &[TokenId],
    memory: Option<&MemoryPrefix>,
    p: f64,
    max_len: usize,
    noise: &mut impl Noise,
) -> Result<TokenSequence> {
    if max_len < 1 {
        bail!(InvalidArgument, "max_len must be at least 1");
    }
    let budget = lm.config.context.saturating_sub(max_len).max(1);
    let ctx: Vec<TokenId> = if context.is_empty() {
        vec![BOS]
    } else {
        context[context.len().saturating_sub(budget)..].to_vec()
    };
    let mut dec = lm.decoder(store, memory)?;
    let mut logits = Vec::new();
    for &t in &ctx {
        logits = dec.push(t)?;
    }
    let mut out = Vec::with_capacity(max_len);
    loop {
        for banned in [UNK, BOS] {
            logits[banned as usize] = f64::NEG_INFINITY;
        }
        for l in logits.iter_mut().skip(lm.active_vocab.max(RESERVED.len())) {
            *l = f64::NEG_INFINITY;
        }
        if out.is_empty() {
            logits[SENT_SEP as usize] = f64::NEG_INFINITY;
            logits[EOS as usize] = f64::NEG_INFINITY;
        }
        let probs = top_p_filter(&softmax(&logits), p)?;
        let tok = sample_index(&probs, noise.uniform()) as TokenId;
        if tok == SENT_SEP || tok == EOS {
            break;
        }
        out.push(tok);
        if out.len() == max_len || dec.len() == lm.config.context {
            break;
        }
        logits = dec.push(tok)?;
    }
    Ok(out)
}

/// Per-token negative log-likelihoods of `target` following `context`
/// (the context is cut from the left to fit the window).
pub fn continuation_nll(lm: &TokenLm, store: &ParameterStore, context: &[TokenId], target: &[TokenId]) -> Result<Vec<f64>> {
    if context.is_empty() || target.is_empty() {
        bail!(Empty, "context and target must be non-empty");
    }
    let keep = lm.config.context.saturating_sub(target.len()).max(1);
    if target.len() + 1 > lm.config.context {
        return Err(Error::SequenceTooLong { len: target.len() + 1, context: lm.config.context });
    }
    let mut seq: Vec<TokenId> = context[context.len().saturating_sub(keep)..].to_vec();
    let start = seq.len();
    seq.extend_from_slice(target);
    let mut g = Graph::new(store);
    let logits = lm.logits(&mut g, &seq[..seq.len() - 1], None)?;
    let lv = g.value(logits);
    Ok((0..target.len())
        .map(|i| {
            let row = lv.row_slice(start - 1 + i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            lse - row[target[i] as usize]
        })
        .collect())
}

/// Perplexity of each sentence (with its separator) given the previous
/// `window - 1` sentences; the first sentence is scored after BOS alone.
pub fn perplexity_sliding(lm: &TokenLm, store: &ParameterStore, story: &Story, window: usize) -> Result<Vec<f64>> {
    if story.is_empty() {
        bail!(Empty, "story {} is empty", story.id);
    }
    if window < 1 {
        bail!(InvalidArgument, "window must be at least 1");
    }
    let mut out = Vec::with_capacity(story.len());
    for t in 0..story.len() {
        let ctx = story_tokens(&story.sentences[t.saturating_sub(window - 1)..t]);
        let mut target = story.sentences[t].clone();
        target.push(SENT_SEP);
        let nll = continuation_nll(lm, store, &ctx, &target)?;
        out.push((nll.iter().sum::<f64>() / nll.len() as f64).exp());
    }
    Ok(out)
}
