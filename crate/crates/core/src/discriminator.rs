//! Baseline story models: an LSTM or causal transformer reads sentence
//! embeddings and emits a context vector scored against candidates by dot
//! product.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::graph::{AttnMask, Graph, Var};
use crate::lm::softmax;
use crate::nn::{Builder, LayerNorm, Linear, Lstm, TransformerBlock};
use crate::params::{Group, ParameterStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DiscriminatorKind {
    Lstm,
    Transformer,
}

impl DiscriminatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lstm => "lstm",
            Self::Transformer => "transformer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Self::Lstm),
            "transformer" => Ok(Self::Transformer),
            other => bail!(InvalidArgument, "unknown discriminator kind {other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    /// Attention heads (transformer only).
    pub heads: usize,
}

impl DiscriminatorConfig {
    pub fn new(kind: DiscriminatorKind, input_dim: usize) -> Self {
        Self { kind, input_dim, width: 64, depth: 2, heads: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.input_dim == 0 {
            bail!(InvalidArgument, "discriminator width, depth and input must be positive");
        }
        if self.kind == DiscriminatorKind::Transformer && (self.heads == 0 || self.width % self.heads != 0) {
            bail!(InvalidArgument, "discriminator width {} not divisible by heads {}", self.width, self.heads);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Body {
    Lstm(Lstm),
    Transformer { input: Linear, blocks: Vec<TransformerBlock>, ln_f: LayerNorm },
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    body: Body,
    pub out: Linear,
}

fn offsets(lens: &[usize]) -> Vec<usize> {
    lens.iter().scan(0, |acc, &l| Some(core::mem::replace(acc, *acc + l))).collect()
}

impl Discriminator {
    pub fn new(store: &mut ParameterStore, rng: &mut impl Rng, config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let prefix: String = format!("disc_{}", config.kind.as_str());
        let mut b = Builder::new(store, rng, Group::Discriminator, &prefix);
        let c = &config;
        let body = match c.kind {
            DiscriminatorKind::Lstm => Body::Lstm(Lstm::new(&mut b, "lstm", c.input_dim, c.width, c.depth)?),
            DiscriminatorKind::Transformer => Body::Transformer {
                input: Linear::new(&mut b, "in", c.input_dim, c.width, true)?,
                blocks: (0..c.depth)
                    .map(|l| TransformerBlock::new(&mut b, &format!("block{l}"), c.width, c.heads))
                    .collect::<Result<Vec<_>>>()?,
                ln_f: LayerNorm::new(&mut b, "ln_f", c.width)?,
            },
        };
        let out = Linear::new(&mut b, "out", c.width, c.input_dim, true)?;
        Ok(Self { config, body, out })
    }

    /// Context vectors `c_t` for blocks laid out one after another in `obs`;
    /// the output uses the same row layout. `c_t` depends on rows `..=t` of its block.
    pub fn contexts(&self, g: &mut Graph<'_>, obs: Var, lens: &[usize]) -> Result<Var> {
        let (n, p) = g.shape(obs);
        if p != self.config.input_dim {
            bail!(DimensionMismatch, "embeddings of width {p}, expected {}", self.config.input_dim);
        }
        if lens.is_empty() || lens.contains(&0) || lens.iter().sum::<usize>() != n {
            bail!(DimensionMismatch, "block lengths {lens:?} do not cover {n} rows");
        }
        let off = offsets(lens);
        let h = match &self.body {
            Body::Lstm(lstm) => {
                let steps = *lens.iter().max().expect("non-empty");
                let batch = lens.len();
                let zero = g.input(Tensor::zeros(1, p));
                let src = g.concat_rows(&[obs, zero]);
                let mut idx = Vec::with_capacity(steps * batch);
                for t in 0..steps {
                    for b in 0..batch {
                        idx.push(if t < lens[b] { off[b] + t } else { n });
                    }
                }
                let x = g.gather_rows(src, &idx);
                let hs = lstm.forward(g, x, steps, batch);
                let back: Vec<usize> = (0..batch).flat_map(|b| (0..lens[b]).map(move |t| t * batch + b)).collect();
                g.gather_rows(hs, &back)
            }
            Body::Transformer { input, blocks, ln_f } => {
                let seg: Vec<usize> = lens.iter().enumerate().flat_map(|(b, &l)| core::iter::repeat_n(b, l)).collect();
                let mask = AttnMask { segments: Some(seg), ..AttnMask::default() };
                let mut x = input.forward(g, obs);
                for block in blocks {
                    x = block.forward(g, x, &mask, None);
                }
                ln_f.forward(g, x)
            }
        };
        Ok(self.out.forward(g, h))
    }

    pub fn loss(&self, g: &mut Graph<'_>, obs: Var, lens: &[usize]) -> Result<Var> {
        let c = self.contexts(g, obs, lens)?;
        next_sentence_loss(g, c, obs, lens)
    }

    /// Context vectors for one sequence, `T x P`.
    pub fn context_rows(&self, store: &ParameterStore, embeddings: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(store);
        let obs = g.input(embeddings.clone());
        let c = self.contexts(&mut g, obs, &[embeddings.rows()])?;
        Ok(g.value(c).clone())
    }

    /// Context vector after the last row of `embeddings`.
    pub fn context_vector(&self, store: &ParameterStore, embeddings: &Tensor) -> Result<Vec<f64>> {
        let c = self.context_rows(store, embeddings)?;
        Ok(c.row_slice(c.rows() - 1).to_vec())
    }

    /// Softmax over `c · e` for each candidate.
    pub fn rank(&self, store: &ParameterStore, context: &Tensor, candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            bail!(Empty, "no candidates to rank");
        }
        let c = self.context_vector(store, context)?;
        rank_by_dot(&c, candidates)
    }

    /// Per-position distance `-c_{t-1} · e_t`; position 0 gets the mean of the
    /// others. Also returns the softmax of the distances.
    pub fn position_distance(&self, store: &ParameterStore, embeddings: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = embeddings.rows();
        if t < 2 {
            bail!(InvalidArgument, "position distance needs at least 2 sentences, got {t}");
        }
        let c = self.context_rows(store, embeddings)?;
        let mut dist = vec![0.0; t];
        for i in 1..t {
            dist[i] = -dot(c.row_slice(i - 1), embeddings.row_slice(i));
        }
        dist[0] = dist[1..].iter().sum::<f64>() / (t - 1) as f64;
        let probs = softmax(&dist);
        Ok((dist, probs))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rank_by_dot(context: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        bail!(Empty, "no candidates to rank");
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != context.len()) {
        bail!(DimensionMismatch, "candidate of width {} vs context {}", c.len(), context.len());
    }
    Ok(softmax(&candidates.iter().map(|e| dot(context, e)).collect::<Vec<_>>()))
}

/// For every position `t` with a successor, cross-entropy of picking `t + 1`
/// among the other sentences of the same block by `c_t · e_b`.
pub fn next_sentence_loss(g: &mut Graph<'_>, contexts: Var, obs: Var, lens: &[usize]) -> Result<Var> {
    if lens.iter().any(|&l| l < 3) {
        bail!(InvalidArgument, "discriminator blocks need at least 3 sentences, got {lens:?}");
    }
    let n = g.shape(obs).0;
    if g.shape(contexts) != g.shape(obs) {
        bail!(DimensionMismatch, "contexts {:?} vs embeddings {:?}", g.shape(contexts), g.shape(obs));
    }
    let logits = g.matmul_nt(contexts, obs);
    let off = offsets(lens);
    let mut allowed = vec![false; n * n];
    let mut targets = vec![None; n];
    for (b, &l) in lens.iter().enumerate() {
        for t in 0..l {
            let r = off[b] + t;
            for k in 0..l {
                allowed[r * n + off[b] + k] = k != t;
            }
            if t + 1 < l {
                targets[r] = Some(r + 1);
            }
        }
    }
    Ok(g.cross_entropy(logits, &targets, Some(&allowed)))
}
