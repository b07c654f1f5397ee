//! Dual sentence encoder over the token model's embedding table, the
//! Quick-Thoughts neighbour objective, and the pair-classification head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{bail, Result};
use crate::graph::{AttnMask, Graph, Var};
use crate::lm::{softmax, TokenLm};
use crate::nn::{Builder, LayerNorm, Linear, TransformerBlock};
use crate::params::{Group, Init, ParamId, ParameterStore};
use crate::tensor::Tensor;
use crate::vocab::{TokenSequence, SENT_SEP};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Width of each of the two encoders; embeddings have dimension `2 * width`.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Longer sentences are cut to their first `max_tokens` tokens.
    pub max_tokens: usize,
    pub pair_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        // reference configuration: 6 layers of width 1024
        Self { width: 64, layers: 2, heads: 4, max_tokens: 32, pair_classes: 2 }
    }
}

impl EncoderConfig {
    pub fn embedding_dim(&self) -> usize {
        2 * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 || self.layers == 0 {
            bail!(InvalidArgument, "encoder width {} must be a positive multiple of heads {}", self.width, self.heads);
        }
        if self.max_tokens == 0 || self.pair_classes < 2 {
            bail!(InvalidArgument, "encoder needs max_tokens >= 1 and at least 2 pair classes");
        }
        Ok(())
    }
}

/// One autoregressive encoder; the sentence vector is its final-position state.
#[derive(Debug, Clone)]
pub struct EncoderTower {
    pub input: Linear,
    pub pos_emb: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
}

impl EncoderTower {
    fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, in_dim: usize, cfg: &EncoderConfig) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Self {
            input: Linear::new(&mut s, "in", in_dim, cfg.width, true)?,
            pos_emb: s.param("pos_emb", cfg.max_tokens, cfg.width, Init::Normal(0.02))?,
            blocks: (0..cfg.layers)
                .map(|l| TransformerBlock::new(&mut s, &format!("block{l}"), cfg.width, cfg.heads))
                .collect::<Result<Vec<_>>>()?,
            ln_f: LayerNorm::new(&mut s, "ln_f", cfg.width)?,
        })
    }

    fn forward(&self, g: &mut Graph<'_>, tokens: Var, packed: &Packed) -> Var {
        let x = self.input.forward(g, tokens);
        let table = g.param(self.pos_emb);
        let pos = g.gather_rows(table, &packed.positions);
        let mut x = g.add(x, pos);
        for block in &self.blocks {
            x = block.forward(g, x, &packed.mask, None);
        }
        let last = g.gather_rows(x, &packed.last);
        self.ln_f.forward(g, last)
    }
}

/// Several sentences laid end to end in one sequence with block-diagonal
/// causal attention.
struct Packed {
    tokens: Vec<crate::vocab::TokenId>,
    positions: Vec<usize>,
    last: Vec<usize>,
    mask: AttnMask,
}

fn pack(sentences: &[TokenSequence], max_tokens: usize) -> Result<Packed> {
    let mut p = Packed { tokens: Vec::new(), positions: Vec::new(), last: Vec::new(), mask: AttnMask::causal() };
    let mut seg = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        if s.is_empty() {
            bail!(Empty, "sentence {i} is empty");
        }
        let s = &s[..s.len().min(max_tokens)];
        for (j, &t) in s.iter().enumerate() {
            p.tokens.push(t);
            p.positions.push(j);
            seg.push(i);
        }
        p.last.push(p.tokens.len() - 1);
    }
    p.mask.segments = Some(seg);
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct DualEncoder {
    pub config: EncoderConfig,
    pub f: EncoderTower,
    pub g: EncoderTower,
    pub pair_head: Linear,
}

/// Outputs of the two encoders for a batch of sentences, `B x width` each.
#[derive(Debug, Clone, Copy)]
pub struct EncodedBatch {
    pub u: Var,
    pub v: Var,
}

impl EncodedBatch {
    /// `[u; v]`, `B x P`.
    pub fn embeddings(&self, g: &mut Graph<'_>) -> Var {
        g.concat_cols(&[self.u, self.v])
    }
}

impl DualEncoder {
    pub fn new(store: &mut ParameterStore, rng: &mut impl Rng, lm_hidden: usize, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::new(store, rng, Group::Encoder, "enc");
        let f = EncoderTower::new(&mut b, "f", lm_hidden, &config)?;
        let g = EncoderTower::new(&mut b, "g", lm_hidden, &config)?;
        let p = config.embedding_dim();
        let pair_head = Linear::new(&mut b, "pair", 3 * p, config.pair_classes, true)?;
        Ok(Self { config, f, g, pair_head })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    /// Encodes sentences from the token model's final hidden states. Each
    /// sentence is read by the token model on its own, after a sentence
    /// separator as it would appear mid-story; gradients reach both encoders
    /// and the token model.
    pub fn encode_batch(&self, g: &mut Graph<'_>, lm: &TokenLm, sentences: &[TokenSequence]) -> Result<EncodedBatch> {
        if sentences.is_empty() {
            bail!(Empty, "no sentences to encode");
        }
        let packed = pack(sentences, self.config.max_tokens)?;
        let (mut tokens, mut positions, mut segments, mut rows) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let seg = packed.mask.segments.as_deref().unwrap_or(&[]);
        for (k, (&t, &p)) in packed.tokens.iter().zip(&packed.positions).enumerate() {
            if p == 0 {
                tokens.push(SENT_SEP);
                positions.push(0);
                segments.push(seg[k]);
            }
            rows.push(tokens.len());
            tokens.push(t);
            positions.push(p + 1);
            segments.push(seg[k]);
        }
        let feats = lm.features(g, &tokens, &positions, &segments)?;
        let x = g.gather_rows(feats, &rows);
        let u = self.f.forward(g, x, &packed);
        let v = self.g.forward(g, x, &packed);
        Ok(EncodedBatch { u, v })
    }

    /// Embeddings for a list of sentences, `B x P`, outside training.
    pub fn encode_all(&self, store: &ParameterStore, lm: &TokenLm, sentences: &[TokenSequence]) -> Result<Tensor> {
        let mut g = Graph::new(store);
        let b = self.encode_batch(&mut g, lm, sentences)?;
        let e = b.embeddings(&mut g);
        Ok(g.value(e).clone())
    }

    pub fn encode_sentence(&self, store: &ParameterStore, lm: &TokenLm, tokens: &TokenSequence) -> Result<Vec<f64>> {
        Ok(self.encode_all(store, lm, core::slice::from_ref(tokens))?.into_vec())
    }

    /// Pair-head logits on `[e1; e2; |e1 - e2|]`, one row per pair.
    pub fn pair_logits(&self, g: &mut Graph<'_>, e1: Var, e2: Var) -> Result<Var> {
        if g.shape(e1) != g.shape(e2) || g.shape(e1).1 != self.embedding_dim() {
            bail!(DimensionMismatch, "pair inputs {:?} and {:?}", g.shape(e1), g.shape(e2));
        }
        let d = g.sub(e1, e2);
        let d = g.abs(d);
        let feats = g.concat_cols(&[e1, e2, d]);
        Ok(self.pair_head.forward(g, feats))
    }

    /// Categorical cross-entropy of the pair head against `labels`.
    pub fn pair_loss(&self, g: &mut Graph<'_>, e1: Var, e2: Var, labels: &[usize]) -> Result<Var> {
        let logits = self.pair_logits(g, e1, e2)?;
        if labels.len() != g.shape(logits).0 {
            bail!(DimensionMismatch, "{} labels for {} pairs", labels.len(), g.shape(logits).0);
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.config.pair_classes) {
            bail!(InvalidArgument, "pair label {l} out of range");
        }
        let targets: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
        Ok(g.cross_entropy(logits, &targets, None))
    }

    pub fn pair_classify(&self, store: &ParameterStore, e1: &[f64], e2: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let a = g.input(Tensor::row(e1.to_vec()));
        let b = g.input(Tensor::row(e2.to_vec()));
        let logits = self.pair_logits(&mut g, a, b)?;
        Ok(softmax(g.value(logits).row_slice(0)))
    }
}

/// Quick-Thoughts loss over one ordered block: each sentence `i` must pick its
/// neighbours `i - 1` and `i + 1` among the other sentences of the block by the
/// score `u_i · v_b`.
pub fn quick_thoughts_loss(g: &mut Graph<'_>, u: Var, v: Var) -> Result<Var> {
    let (n, w) = g.shape(u);
    if n < 3 {
        bail!(InvalidArgument, "quick-thoughts needs a block of at least 3 sentences, got {n}");
    }
    if g.shape(v) != (n, w) {
        bail!(DimensionMismatch, "u {:?} vs v {:?}", g.shape(u), g.shape(v));
    }
    let logits = g.matmul_nt(u, v);
    let (rows, targets) = neighbour_pairs(n);
    let gathered = g.gather_rows(logits, &rows);
    let mut allowed = vec![true; rows.len() * n];
    for (k, &i) in rows.iter().enumerate() {
        allowed[k * n + i] = false;
    }
    let targets: Vec<Option<usize>> = targets.into_iter().map(Some).collect();
    Ok(g.cross_entropy(gathered, &targets, Some(&allowed)))
}

/// `(i, p)` for every sentence `i` and neighbour `p ∈ {i - 1, i + 1}` inside the block.
pub fn neighbour_pairs(n: usize) -> (Vec<usize>, Vec<usize>) {
    let (mut rows, mut targets) = (Vec::new(), Vec::new());
    for i in 0..n {
        if i > 0 {
            rows.push(i);
            targets.push(i - 1);
        }
        if i + 1 < n {
            rows.push(i);
            targets.push(i + 1);
        }
    }
    (rows, targets)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParameterStore, TokenLm, DualEncoder) {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lm = TokenLm::new(&mut store, &mut rng, LmConfig { n_layers: 1, hidden: 8, heads: 2, context: 16, vocab_size: 12 })
            .unwrap();
        let cfg = EncoderConfig { width: 4, layers: 2, heads: 2, max_tokens: 8, pair_classes: 2 };
        let enc = DualEncoder::new(&mut store, &mut rng, 8, cfg).unwrap();
        (store, lm, enc)
    }

    #[test]
    fn shape_and_determinism() {
        let (store, lm, enc) = setup();
        let s = vec![4, 5, 6];
        let a = enc.encode_sentence(&store, &lm, &s).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, enc.encode_sentence(&store, &lm, &s).unwrap());
        assert!(enc.encode_sentence(&store, &lm, &vec![]).is_err());
    }

    #[test]
    fn packing_matches_separate_encoding() {
        let (store, lm, enc) = setup();
        let sents = vec![vec![4, 5, 6], vec![7], vec![8, 9, 10, 11]];
        let all = enc.encode_all(&store, &lm, &sents).unwrap();
        for (i, s) in sents.iter().enumerate() {
            let one = enc.encode_sentence(&store, &lm, s).unwrap();
            for (a, b) in one.iter().zip(all.row_slice(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_encoders_emit_final_norm_bias() {
        let (mut store, lm, enc) = setup();
        for id in store.group_ids(Group::Encoder).collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let bf = [0.1, -0.2, 0.3, 0.4];
        let bg = [1.0, 2.0, -3.0, 0.5];
        store.value_mut(enc.f.ln_f.beta).data_mut().copy_from_slice(&bf);
        store.value_mut(enc.g.ln_f.beta).data_mut().copy_from_slice(&bg);
        let e = enc.encode_sentence(&store, &lm, &vec![5]).unwrap();
        assert_eq!(e, [bf, bg].concat());
    }

    #[test]
    fn towers_are_independent() {
        let (mut store, lm, enc) = setup();
        let s = vec![4, 5, 6];
        let before = enc.encode_sentence(&store, &lm, &s).unwrap();
        for id in store.ids().filter(|id| store.param(*id).name.starts_with("enc.f.")).collect::<Vec<_>>() {
            store.value_mut(id).data_mut().iter_mut().for_each(|x| *x += 0.3);
        }
        let after = enc.encode_sentence(&store, &lm, &s).unwrap();
        assert_ne!(before[..4], after[..4]);
        assert_eq!(before[4..], after[4..]);
    }

    fn oracle_qt(u: &[[f64; 2]], v: &[[f64; 2]]) -> f64 {
        let n = u.len();
        let (rows, targets) = neighbour_pairs(n);
        let mut total = 0.0;
        for (&i, &p) in rows.iter().zip(&targets) {
            let s = |b: usize| u[i][0] * v[b][0] + u[i][1] * v[b][1];
            let z: f64 = (0..n).filter(|&b| b != i).map(|b| s(b).exp()).sum();
            total += -(s(p).exp() / z).ln();
        }
        total / rows.len() as f64
    }

    #[test]
    fn quick_thoughts_oracle() {
        assert_eq!(neighbour_pairs(3), (vec![0, 1, 1, 2], vec![1, 0, 2, 1]));
        let store = ParameterStore::new();
        let u = [[0.3, -1.2], [0.8, 0.5], [-0.4, 0.9]];
        let v = [[1.1, 0.2], [-0.7, 0.6], [0.25, -0.5]];
        let mut g = Graph::new(&store);
        let uv = g.input(Tensor::from_rows(&u.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap());
        let vv = g.input(Tensor::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap());
        let l = quick_thoughts_loss(&mut g, uv, vv).unwrap();
        assert!((g.value(l).item() - oracle_qt(&u, &v)).abs() < 1e-10);

        let same = g.input(Tensor::filled(5, 2, 0.7));
        let l = quick_thoughts_loss(&mut g, same, same).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);

        let two = g.input(Tensor::zeros(2, 2));
        assert!(quick_thoughts_loss(&mut g, two, two).is_err());
    }

    #[test]
    fn pair_head() {
        let (mut store, _, enc) = setup();
        store.value_mut(enc.pair_head.weight).fill(0.0);
        let p = enc.pair_classify(&store, &[0.5; 8], &[-1.0; 8]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert!(enc.pair_classify(&store, &[0.5; 8], &[0.5; 7]).is_err());

        let mut g = Graph::new(&store);
        let e = g.input(Tensor::row(vec![0.3; 8]));
        let d = g.sub(e, e);
        let d = g.abs(d);
        assert!(g.value(d).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pair_head_hand_values() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = EncoderConfig { width: 1, layers: 1, heads: 1, max_tokens: 4, pair_classes: 2 };
        let enc = DualEncoder::new(&mut store, &mut rng, 4, cfg).unwrap();
        // features [a1, a2, b1, b2, |a1-b1|, |a2-b2|]
        let w = vec![0.5, -0.5, 1.0, 0.0, 0.0, 1.0, -1.0, 2.0, 0.3, 0.3, 2.0, -1.0];
        *store.value_mut(enc.pair_head.weight) = Tensor::from_vec(6, 2, w.clone()).unwrap();
        store.value_mut(enc.pair_head.bias.unwrap()).data_mut().copy_from_slice(&[0.1, -0.1]);
        let (a, b) = ([1.0, 2.0], [0.5, -1.0]);
        let f = [a[0], a[1], b[0], b[1], 0.5, 3.0];
        let z0: f64 = 0.1 + (0..6).map(|i| f[i] * w[2 * i]).sum::<f64>();
        let z1: f64 = -0.1 + (0..6).map(|i| f[i] * w[2 * i + 1]).sum::<f64>();
        let p0 = z0.exp() / (z0.exp() + z1.exp());
        let p = enc.pair_classify(&store, &a, &b).unwrap();
        assert!((p[0] - p0).abs() < 1e-12 && (p[1] - (1.0 - p0)).abs() < 1e-12);
    }

    #[test]
    fn cosine() {
        assert!((cosine_similarity(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 3.0]), 0.0);
    }
}
