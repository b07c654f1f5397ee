//! Temporal-difference variational autoencoder over sentence embeddings.
//!
//! Beliefs come from a stacked LSTM over (detached) embeddings. Every latent
//! layer has a belief head `p_B`, a smoothing head `q_S` and a transition head
//! `p_T`; a shared decoder `p_D` maps the concatenated latents back to an
//! embedding. Layers are sampled top-down: each head of layer `l` also sees
//! the samples of layers above `l`. Latent concatenations list layers bottom
//! first.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::encoder::cosine_similarity;
use crate::error::{bail, Result};
use crate::gaussian::GaussianVars;
use crate::graph::{Graph, Var};
use crate::lm::softmax;
use crate::nn::{Builder, Lstm, TanhMlp};
use crate::noise::{Noise, ZeroNoise};
use crate::params::{Group, ParameterStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TdVaeConfig {
    /// Embedding dimension P.
    pub input_dim: usize,
    pub belief_width: usize,
    pub belief_layers: usize,
    pub latent_dim: usize,
    pub n_layers: usize,
    /// Hidden width of every head.
    pub hidden: usize,
    /// Longest jump between paired time steps.
    pub max_jump: usize,
    /// Time pairs drawn per block.
    pub samples: usize,
}

impl Default for TdVaeConfig {
    fn default() -> Self {
        Self {
            input_dim: 128,
            belief_width: 128,
            belief_layers: 2,
            latent_dim: 16,
            n_layers: 2,
            hidden: 64,
            max_jump: 5,
            samples: 200,
        }
    }
}

impl TdVaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.belief_width == 0 || self.belief_layers == 0 || self.latent_dim == 0 {
            bail!(InvalidArgument, "tdvae dimensions must be positive");
        }
        if self.n_layers == 0 || self.hidden == 0 || self.max_jump == 0 || self.samples == 0 {
            bail!(InvalidArgument, "tdvae needs n_layers, hidden, max_jump and samples >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LatentLayer {
    pub belief: TanhMlp,
    pub smoothing: TanhMlp,
    pub transition: TanhMlp,
}

#[derive(Debug, Clone)]
pub struct TdVae {
    pub config: TdVaeConfig,
    pub lstm: Lstm,
    /// Bottom layer first.
    pub layers: Vec<LatentLayer>,
    pub decoder: TanhMlp,
}

/// Mean per-pair log-densities of the five loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TdVaeTerms {
    pub decoder: f64,
    pub belief_t1: f64,
    pub transition: f64,
    pub belief_t2: f64,
    pub smoothing: f64,
}

impl TdVaeTerms {
    pub const NAMES: [&'static str; 5] = ["log_pd", "log_pb_t1", "log_pt", "log_pb_t2", "log_qs"];

    pub fn values(&self) -> [f64; 5] {
        [self.decoder, self.belief_t1, self.transition, self.belief_t2, self.smoothing]
    }

    /// The minimized loss: the negated sum with the two subtracted terms.
    pub fn loss(&self) -> f64 {
        -(self.decoder + self.belief_t1 + self.transition - self.belief_t2 - self.smoothing)
    }
}

/// Draws `n` pairs `(t1, t2)` (0-based) for a sequence of length `t`: `t1`
/// uniform over positions with a successor, then the gap `d` with weight
/// `k - d + 1` over `1..=min(k, t - 1 - t1)`.
pub fn sample_time_pairs(t: usize, k: usize, n: usize, noise: &mut impl Noise) -> Result<Vec<(usize, usize)>> {
    if t < 2 {
        bail!(InvalidArgument, "time pairs need at least 2 steps, got {t}");
    }
    if k == 0 {
        bail!(InvalidArgument, "max jump must be at least 1");
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t1 = noise.index(t - 1);
        let max_d = k.min(t - 1 - t1);
        let total: usize = (1..=max_d).map(|d| k - d + 1).sum();
        let mut u = noise.uniform() * total as f64;
        let mut gap = max_d;
        for d in 1..=max_d {
            let w = (k - d + 1) as f64;
            if u < w {
                gap = d;
                break;
            }
            u -= w;
        }
        out.push((t1, t1 + gap));
    }
    Ok(out)
}

fn draw(noise: &mut impl Noise, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, noise.normals(rows * cols)).expect("noise shape")
}

impl TdVae {
    pub fn new(store: &mut ParameterStore, rng: &mut impl Rng, config: TdVaeConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::new(store, rng, Group::TdVae, "tdvae");
        let c = &config;
        let (dz, bw, n) = (c.latent_dim, c.belief_width, c.n_layers);
        let lstm = Lstm::new(&mut b, "belief_lstm", c.input_dim, bw, c.belief_layers)?;
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let above = (n - 1 - l) * dz;
            let mut s = b.scope(&format!("layer{l}"));
            layers.push(LatentLayer {
                belief: TanhMlp::new(&mut s, "p_b", bw + above, c.hidden, 2 * dz)?,
                smoothing: TanhMlp::new(&mut s, "q_s", n * dz + 2 * bw + above, c.hidden, 2 * dz)?,
                transition: TanhMlp::new(&mut s, "p_t", n * dz + above, c.hidden, 2 * dz)?,
            });
        }
        let decoder = TanhMlp::new(&mut b, "p_d", n * dz, c.hidden, 2 * c.input_dim)?;
        Ok(Self { config, lstm, layers, decoder })
    }

    /// Beliefs for a batch of blocks laid out one after another in `obs`
    /// (block `b` has `lens[b]` rows). Output is time-major over the padded
    /// length: the belief for step `t` of block `b` is row `t * lens.len() + b`.
    pub fn beliefs(&self, g: &mut Graph<'_>, obs: Var, lens: &[usize]) -> Result<Var> {
        let (n, p) = g.shape(obs);
        if lens.is_empty() || lens.contains(&0) {
            bail!(Empty, "beliefs need at least one non-empty block");
        }
        if p != self.config.input_dim {
            bail!(DimensionMismatch, "embeddings of width {p}, expected {}", self.config.input_dim);
        }
        if lens.iter().sum::<usize>() != n {
            bail!(DimensionMismatch, "block lengths sum to {} but {n} rows given", lens.iter().sum::<usize>());
        }
        let steps = *lens.iter().max().expect("non-empty");
        let batch = lens.len();
        let padded = steps * batch != n;
        let source = if padded {
            let zero = g.input(Tensor::zeros(1, p));
            g.concat_rows(&[obs, zero])
        } else {
            obs
        };
        let offsets: Vec<usize> = lens.iter().scan(0, |acc, &l| Some(core::mem::replace(acc, *acc + l))).collect();
        let mut idx = Vec::with_capacity(steps * batch);
        for t in 0..steps {
            for b in 0..batch {
                idx.push(if t < lens[b] { offsets[b] + t } else { n });
            }
        }
        let x = g.gather_rows(source, &idx);
        Ok(self.lstm.forward(g, x, steps, batch))
    }

    /// Beliefs for one sequence of embeddings, `T x belief_width`.
    pub fn compute_beliefs(&self, store: &ParameterStore, embeddings: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(store);
        let obs = g.input(embeddings.clone());
        let b = self.beliefs(&mut g, obs, &[embeddings.rows()])?;
        Ok(g.value(b).clone())
    }

    /// Top-down samples of every layer from the belief head. Returns the
    /// per-layer distributions and samples, bottom layer first.
    fn sample_belief(&self, g: &mut Graph<'_>, b: Var, noise: &mut impl Noise) -> (Vec<GaussianVars>, Vec<Var>) {
        let n = self.layers.len();
        let rows = g.shape(b).0;
        let mut dists = vec![None; n];
        let mut zs: Vec<Option<Var>> = vec![None; n];
        for l in (0..n).rev() {
            let mut parts = vec![b];
            parts.extend(zs[l + 1..].iter().map(|z| z.expect("upper layers sampled first")));
            let input = g.concat_cols(&parts);
            let out = self.layers[l].belief.forward(g, input);
            let d = GaussianVars::from_head(g, out);
            zs[l] = Some(d.sample(g, draw(noise, rows, self.config.latent_dim)));
            dists[l] = Some(d);
        }
        (dists.into_iter().map(Option::unwrap).collect(), zs.into_iter().map(Option::unwrap).collect())
    }

    /// Log-density under the belief head of given per-layer samples.
    fn belief_density(&self, g: &mut Graph<'_>, b: Var, zs: &[Var]) -> Var {
        let mut total = None;
        for l in (0..self.layers.len()).rev() {
            let mut parts = vec![b];
            parts.extend_from_slice(&zs[l + 1..]);
            let input = g.concat_cols(&parts);
            let out = self.layers[l].belief.forward(g, input);
            let d = GaussianVars::from_head(g, out);
            let lp = d.log_density_sum(g, zs[l]);
            total = Some(match total {
                Some(t) => g.add(t, lp),
                None => lp,
            });
        }
        total.expect("at least one layer")
    }

    /// Transition distributions given all layers of `z_from`, sampling the
    /// target top-down (or scoring `target` when given).
    fn transition(
        &self,
        g: &mut Graph<'_>,
        z_from: Var,
        target: Option<&[Var]>,
        noise: &mut impl Noise,
    ) -> (Vec<GaussianVars>, Vec<Var>) {
        let n = self.layers.len();
        let rows = g.shape(z_from).0;
        let mut dists = vec![None; n];
        let mut zs: Vec<Option<Var>> = vec![None; n];
        for l in (0..n).rev() {
            let mut parts = vec![z_from];
            for u in l + 1..n {
                parts.push(match target {
                    Some(t) => t[u],
                    None => zs[u].expect("upper layers sampled first"),
                });
            }
            let input = g.concat_cols(&parts);
            let out = self.layers[l].transition.forward(g, input);
            let d = GaussianVars::from_head(g, out);
            zs[l] = Some(match target {
                Some(t) => t[l],
                None => d.sample(g, draw(noise, rows, self.config.latent_dim)),
            });
            dists[l] = Some(d);
        }
        (dists.into_iter().map(Option::unwrap).collect(), zs.into_iter().map(Option::unwrap).collect())
    }

    /// The negated evidence bound averaged over `pairs`, plus the per-term
    /// breakdown. `pairs` holds `(block, t1, t2)` against the layout used for
    /// `beliefs`; `obs` must be detached from the encoder.
    pub fn loss(
        &self,
        g: &mut Graph<'_>,
        beliefs: Var,
        obs: Var,
        lens: &[usize],
        pairs: &[(usize, usize, usize)],
        noise: &mut impl Noise,
    ) -> Result<(Var, TdVaeTerms)> {
        if pairs.is_empty() {
            bail!(Empty, "no time pairs");
        }
        let batch = lens.len();
        let offsets: Vec<usize> = lens.iter().scan(0, |acc, &l| Some(core::mem::replace(acc, *acc + l))).collect();
        let (mut r1, mut r2, mut re) = (Vec::new(), Vec::new(), Vec::new());
        for &(b, t1, t2) in pairs {
            if b >= batch || t1 >= t2 || t2 >= lens[b] {
                bail!(InvalidArgument, "invalid time pair ({t1}, {t2}) for block {b}");
            }
            r1.push(t1 * batch + b);
            r2.push(t2 * batch + b);
            re.push(offsets[b] + t2);
        }
        let m = pairs.len();
        let n = self.layers.len();
        let b1 = g.gather_rows(beliefs, &r1);
        let b2 = g.gather_rows(beliefs, &r2);
        let e2 = g.gather_rows(obs, &re);

        // z_t2 ~ p_B(. | b_t2)
        let (pb2, z2) = self.sample_belief(g, b2, noise);
        let z2_all = g.concat_cols(&z2);
        let mut log_pb2 = None;
        for l in 0..n {
            let lp = pb2[l].log_density_sum(g, z2[l]);
            log_pb2 = Some(match log_pb2 {
                Some(t) => g.add(t, lp),
                None => lp,
            });
        }
        let log_pb2 = log_pb2.expect("layers");

        // z_t1 ~ q_S(. | z_t2, b_t1, b_t2)
        let mut z1: Vec<Option<Var>> = vec![None; n];
        let mut log_qs = None;
        for l in (0..n).rev() {
            let mut parts = vec![z2_all, b1, b2];
            parts.extend(z1[l + 1..].iter().map(|z| z.expect("upper layers sampled first")));
            let input = g.concat_cols(&parts);
            let out = self.layers[l].smoothing.forward(g, input);
            let d = GaussianVars::from_head(g, out);
            let z = d.sample(g, draw(noise, m, self.config.latent_dim));
            let lp = d.log_density_sum(g, z);
            log_qs = Some(match log_qs {
                Some(t) => g.add(t, lp),
                None => lp,
            });
            z1[l] = Some(z);
        }
        let z1: Vec<Var> = z1.into_iter().map(Option::unwrap).collect();
        let log_qs = log_qs.expect("layers");
        let z1_all = g.concat_cols(&z1);

        let log_pb1 = self.belief_density(g, b1, &z1);

        let (pt, _) = self.transition(g, z1_all, Some(&z2), &mut ZeroNoise);
        let mut log_pt = None;
        for l in 0..n {
            let lp = pt[l].log_density_sum(g, z2[l]);
            log_pt = Some(match log_pt {
                Some(t) => g.add(t, lp),
                None => lp,
            });
        }
        let log_pt = log_pt.expect("layers");

        let dec = self.decoder.forward(g, z2_all);
        let pd = GaussianVars::from_head(g, dec);
        let log_pd = pd.log_density_sum(g, e2);

        let inv = 1.0 / m as f64;
        let terms = TdVaeTerms {
            decoder: g.value(log_pd).item() * inv,
            belief_t1: g.value(log_pb1).item() * inv,
            transition: g.value(log_pt).item() * inv,
            belief_t2: g.value(log_pb2).item() * inv,
            smoothing: g.value(log_qs).item() * inv,
        };
        let pos = g.add(log_pd, log_pb1);
        let pos = g.add(pos, log_pt);
        let neg = g.add(log_pb2, log_qs);
        let elbo = g.sub(pos, neg);
        let loss = g.scale(elbo, -inv);
        Ok((loss, terms))
    }

    /// Jumpy rollout from belief rows: `z ~ p_B`, then `steps` transitions,
    /// decoding the mean of `p_D` after each. With `samples > 1`, decoded means
    /// are averaged per step. Returns one `rows x P` tensor per step.
    pub fn rollout(
        &self,
        store: &ParameterStore,
        beliefs: &Tensor,
        steps: usize,
        samples: usize,
        noise: &mut impl Noise,
    ) -> Result<Vec<Tensor>> {
        if steps < 1 || samples < 1 {
            bail!(InvalidArgument, "rollout needs steps >= 1 and samples >= 1");
        }
        if beliefs.cols() != self.config.belief_width || beliefs.rows() == 0 {
            bail!(DimensionMismatch, "belief rows of width {}, expected {}", beliefs.cols(), self.config.belief_width);
        }
        let rows = beliefs.rows();
        let mut tiled = Vec::with_capacity(rows * samples * beliefs.cols());
        for _ in 0..samples {
            tiled.extend_from_slice(beliefs.data());
        }
        let mut g = Graph::new(store);
        let b = g.input(Tensor::from_vec(rows * samples, beliefs.cols(), tiled)?);
        let (_, mut zs) = self.sample_belief(&mut g, b, noise);
        let p = self.config.input_dim;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let z_all = g.concat_cols(&zs);
            let (_, next) = self.transition(&mut g, z_all, None, noise);
            zs = next;
            let z_all = g.concat_cols(&zs);
            let dec = self.decoder.forward(&mut g, z_all);
            let mean = g.value(dec);
            let mut avg = Tensor::zeros(rows, p);
            for s in 0..samples {
                for r in 0..rows {
                    for (a, &x) in avg.row_slice_mut(r).iter_mut().zip(&mean.row_slice(s * rows + r)[..p]) {
                        *a += x;
                    }
                }
            }
            avg.scale_assign(1.0 / samples as f64);
            out.push(avg);
        }
        Ok(out)
    }

    /// One-step prediction of the next embedding after the last row of `embeddings`.
    pub fn expected_next(
        &self,
        store: &ParameterStore,
        embeddings: &Tensor,
        samples: usize,
        noise: &mut impl Noise,
    ) -> Result<Vec<f64>> {
        let b = self.compute_beliefs(store, embeddings)?;
        let last = Tensor::row(b.row_slice(b.rows() - 1).to_vec());
        Ok(self.rollout(store, &last, 1, samples, noise)?.remove(0).into_vec())
    }

    /// Cosine distance between each embedding and its zero-noise one-step
    /// prediction from the beliefs before it; position 0 gets the mean of the
    /// others. Also returns the softmax of the distances.
    pub fn position_surprise(&self, store: &ParameterStore, embeddings: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = embeddings.rows();
        if t < 2 {
            bail!(InvalidArgument, "position surprise needs at least 2 sentences, got {t}");
        }
        let b = self.compute_beliefs(store, embeddings)?;
        let prefix = Tensor::from_vec(t - 1, b.cols(), b.data()[..(t - 1) * b.cols()].to_vec())?;
        let pred = self.rollout(store, &prefix, 1, 1, &mut ZeroNoise)?.remove(0);
        let mut dist = vec![0.0; t];
        for i in 1..t {
            dist[i] = 1.0 - cosine_similarity(embeddings.row_slice(i), pred.row_slice(i - 1));
        }
        dist[0] = dist[1..].iter().sum::<f64>() / (t - 1) as f64;
        let probs = softmax(&dist);
        Ok((dist, probs))
    }
}
