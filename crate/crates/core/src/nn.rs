//! Parameterized layers built on [`Graph`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::graph::{AttnMask, Graph, Var};
use crate::params::{Group, Init, ParamId, ParameterStore};

/// Registers parameters under a common name prefix and group.
pub struct Builder<'a, R: Rng> {
    pub store: &'a mut ParameterStore,
    pub rng: &'a mut R,
    pub group: Group,
    prefix: String,
}

impl<'a, R: Rng> Builder<'a, R> {
    pub fn new(store: &'a mut ParameterStore, rng: &'a mut R, group: Group, prefix: &str) -> Self {
        Self { store, rng, group, prefix: prefix.into() }
    }

    pub fn param(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId> {
        let full = format!("{}.{}", self.prefix, name);
        self.store.register(&full, self.group, rows, cols, init, self.rng)
    }

    /// A builder for a nested scope sharing the same store and group.
    pub fn scope<'b>(&'b mut self, name: &str) -> Builder<'b, R> {
        Builder { store: self.store, rng: self.rng, group: self.group, prefix: format!("{}.{}", self.prefix, name) }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let mut s = b.scope(name);
        let weight = s.param("w", in_dim, out_dim, Init::FanIn)?;
        let bias = if bias { Some(s.param("b", 1, out_dim, Init::Zeros)?) } else { None };
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }

    /// Applies the layer to one row outside any graph.
    pub fn apply(&self, store: &ParameterStore, x: &[f64]) -> Vec<f64> {
        let w = store.value(self.weight);
        let mut y = match self.bias {
            Some(b) => store.value(b).data().to_vec(),
            None => alloc::vec![0.0; self.out_dim],
        };
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &wij) in y.iter_mut().zip(w.row_slice(i)) {
                *o += xi * wij;
            }
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Self { gamma: s.param("g", 1, dim, Init::Const(1.0))?, beta: s.param("b", 1, dim, Init::Zeros)? })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }

    pub fn apply(&self, store: &ParameterStore, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / num_traits::Float::sqrt(var + crate::graph::LN_EPS);
        let (g, b) = (store.value(self.gamma).data(), store.value(self.beta).data());
        x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) * inv * g + b).collect()
    }
}

/// Two-layer perceptron with a tanh hidden layer.
#[derive(Debug, Clone)]
pub struct TanhMlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl TanhMlp {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Self { hidden: Linear::new(&mut s, "l1", in_dim, hidden, true)?, out: Linear::new(&mut s, "l2", hidden, out_dim, true)? })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.hidden.forward(g, x);
        let h = g.tanh(h);
        self.out.forward(g, h)
    }

    pub fn apply(&self, store: &ParameterStore, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.hidden.apply(store, x).into_iter().map(num_traits::Float::tanh).collect();
        self.out.apply(store, &h)
    }
}

/// Pre-norm transformer block. Optional memory rows join the key/value set
/// ahead of the sequence.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
}

impl TransformerBlock {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, width: usize, heads: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Self {
            ln1: LayerNorm::new(&mut s, "ln1", width)?,
            query: Linear::new(&mut s, "q", width, width, true)?,
            key: Linear::new(&mut s, "k", width, width, true)?,
            value: Linear::new(&mut s, "v", width, width, true)?,
            proj: Linear::new(&mut s, "o", width, width, true)?,
            ln2: LayerNorm::new(&mut s, "ln2", width)?,
            fc1: Linear::new(&mut s, "fc1", width, 4 * width, true)?,
            fc2: Linear::new(&mut s, "fc2", 4 * width, width, true)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, mask: &AttnMask, memory: Option<Var>) -> Var {
        let h = self.ln1.forward(g, x);
        let q = self.query.forward(g, h);
        let kv_in = match memory {
            Some(m) => {
                let hm = self.ln1.forward(g, m);
                g.concat_rows(&[hm, h])
            }
            None => h,
        };
        let k = self.key.forward(g, kv_in);
        let v = self.value.forward(g, kv_in);
        let a = g.attention(q, k, v, self.heads, mask);
        let a = self.proj.forward(g, a);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, x);
        let h = self.fc1.forward(g, h);
        let h = g.gelu(h);
        let h = self.fc2.forward(g, h);
        g.add(x, h)
    }
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub input: Linear,
    pub hidden: ParamId,
}

/// Stacked unidirectional LSTM. Sequences are laid out time-major: row
/// `t * batch + b` holds step `t` of sequence `b`.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
    pub width: usize,
}

impl Lstm {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, in_dim: usize, width: usize, depth: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let d_in = if l == 0 { in_dim } else { width };
            let mut ls = s.scope(&format!("layer{l}"));
            let input = Linear::new(&mut ls, "x", d_in, 4 * width, true)?;
            let hidden = ls.param("h", width, 4 * width, Init::FanIn)?;
            // forget-gate bias starts at one
            let bias = input.bias.expect("lstm input projection has a bias");
            let bv = ls.store.value_mut(bias);
            for c in width..2 * width {
                bv.data_mut()[c] = 1.0;
            }
            layers.push(LstmLayer { input, hidden });
        }
        Ok(Self { layers, width })
    }

    /// Runs all layers over `steps` time steps of `batch` rows each and returns
    /// the top-layer hidden states, time-major, `(steps * batch) x width`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, steps: usize, batch: usize) -> Var {
        let w = self.width;
        let mut seq = x;
        for layer in &self.layers {
            let pre = layer.input.forward(g, seq);
            let wh = g.param(layer.hidden);
            let mut h: Option<Var> = None;
            let mut c: Option<Var> = None;
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let mut gates = g.slice_rows(pre, t * batch, batch);
                if let Some(hp) = h {
                    let rec = g.matmul(hp, wh);
                    gates = g.add(gates, rec);
                }
                let i = g.slice_cols(gates, 0, w);
                let i = g.sigmoid(i);
                let f = g.slice_cols(gates, w, w);
                let f = g.sigmoid(f);
                let cand = g.slice_cols(gates, 2 * w, w);
                let cand = g.tanh(cand);
                let o = g.slice_cols(gates, 3 * w, w);
                let o = g.sigmoid(o);
                let ic = g.mul(i, cand);
                let cn = match c {
                    Some(cp) => {
                        let fc = g.mul(f, cp);
                        g.add(fc, ic)
                    }
                    None => ic,
                };
                let tc = g.tanh(cn);
                let hn = g.mul(o, tc);
                outs.push(hn);
                h = Some(hn);
                c = Some(cn);
            }
            seq = g.concat_rows(&outs);
        }
        seq
    }
}
