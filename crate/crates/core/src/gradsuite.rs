//! Finite-difference checks of every training objective on small random
//! models.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorKind};
use crate::encoder::{quick_thoughts_loss, DualEncoder, EncoderConfig};
use crate::error::Result;
use crate::gradcheck::{finite_diff_gradcheck, GradcheckOptions, GradcheckReport};
use crate::graph::Graph;
use crate::lm::{LmConfig, PsaProjection, TokenLm};
use crate::noise::{derive_seed, Noise, SeededNoise};
use crate::params::ParameterStore;
use crate::tdvae::{sample_time_pairs, TdVae, TdVaeConfig};
use crate::tensor::Tensor;
use crate::vocab::TokenId;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradcheckReport,
}

const VOCAB: usize = 12;
const LM: LmConfig = LmConfig { n_layers: 2, hidden: 8, heads: 2, context: 16, vocab_size: VOCAB };
const ENC: EncoderConfig = EncoderConfig { width: 4, layers: 1, heads: 2, max_tokens: 6, pair_classes: 2 };

fn random_tokens(noise: &mut impl Noise, n: usize) -> Vec<TokenId> {
    (0..n).map(|_| 4 + noise.index(VOCAB - 4)).collect()
}

fn random_tensor(noise: &mut impl Noise, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, noise.normals(rows * cols)).expect("shape")
}

fn check<F>(name: &str, store: &mut ParameterStore, options: GradcheckOptions, f: F) -> Result<SuiteEntry>
where
    F: FnMut(&ParameterStore) -> Result<(f64, crate::params::Gradients)>,
{
    let report = finite_diff_gradcheck(f, store, EPS, TOLERANCE, options)?;
    Ok(SuiteEntry { name: String::from(name), report })
}

/// Runs the checks for the LM loss (with and without a memory prefix),
/// quick-thoughts, the pair head, the TD-VAE loss and both discriminators.
pub fn run_gradcheck_suite(seed: u64, options: GradcheckOptions) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = SeededNoise::new(derive_seed(seed, 1));

    let mut store = ParameterStore::new();
    let lm = TokenLm::new(&mut store, &mut rng, LM)?;
    let psa = PsaProjection::new(&mut store, &mut rng, 3, &LM)?;
    let tokens = random_tokens(&mut noise, 10);
    let e = random_tensor(&mut noise, 1, 3);
    out.push(check("lm_loss", &mut store.clone(), options, |s| {
        let mut g = Graph::new(s);
        let l = lm.loss(&mut g, &tokens, None)?;
        Ok((g.value(l).item(), g.backward(l)))
    })?);
    out.push(check("lm_loss_memory", &mut store, options, |s| {
        let mut g = Graph::new(s);
        let x = g.input(e.clone());
        let m = psa.project_var(&mut g, x);
        let l = lm.loss(&mut g, &tokens, Some(m))?;
        Ok((g.value(l).item(), g.backward(l)))
    })?);

    let mut store = ParameterStore::new();
    let lm = TokenLm::new(&mut store, &mut rng, LM)?;
    let enc = DualEncoder::new(&mut store, &mut rng, LM.hidden, ENC)?;
    let sentences: Vec<Vec<TokenId>> = (0..4).map(|i| random_tokens(&mut noise, 2 + i)).collect();
    out.push(check("quick_thoughts_loss", &mut store.clone(), options, |s| {
        let mut g = Graph::new(s);
        let b = enc.encode_batch(&mut g, &lm, &sentences)?;
        let l = quick_thoughts_loss(&mut g, b.u, b.v)?;
        Ok((g.value(l).item(), g.backward(l)))
    })?);
    out.push(check("pair_loss", &mut store, options, |s| {
        let mut g = Graph::new(s);
        let e = enc.encode_batch(&mut g, &lm, &sentences)?.embeddings(&mut g);
        let e1 = g.gather_rows(e, &[0, 1, 2]);
        let e2 = g.gather_rows(e, &[1, 3, 0]);
        let l = enc.pair_loss(&mut g, e1, e2, &[0, 1, 1])?;
        Ok((g.value(l).item(), g.backward(l)))
    })?);

    let p = 4;
    let lens = [5usize, 4];
    let obs = random_tensor(&mut noise, lens.iter().sum(), p);

    let mut store = ParameterStore::new();
    let cfg = TdVaeConfig {
        input_dim: p,
        belief_width: 5,
        belief_layers: 2,
        latent_dim: 3,
        n_layers: 2,
        hidden: 6,
        max_jump: 3,
        samples: 4,
    };
    let tdvae = TdVae::new(&mut store, &mut rng, cfg)?;
    let mut pairs = Vec::new();
    for (b, &l) in lens.iter().enumerate() {
        pairs.extend(sample_time_pairs(l, 3, 4, &mut noise)?.into_iter().map(|(t1, t2)| (b, t1, t2)));
    }
    let draw_seed = derive_seed(seed, 2);
    out.push(check("tdvae_loss", &mut store, options, |s| {
        let mut g = Graph::new(s);
        let x = g.input(obs.clone());
        let beliefs = tdvae.beliefs(&mut g, x, &lens)?;
        let (l, _) = tdvae.loss(&mut g, beliefs, x, &lens, &pairs, &mut SeededNoise::new(draw_seed))?;
        Ok((g.value(l).item(), g.backward(l)))
    })?);

    for kind in [DiscriminatorKind::Lstm, DiscriminatorKind::Transformer] {
        let mut store = ParameterStore::new();
        let d = Discriminator::new(&mut store, &mut rng, DiscriminatorConfig { kind, input_dim: p, width: 4, depth: 2, heads: 2 })?;
        out.push(check(&alloc::format!("discriminator_loss_{}", kind.as_str()), &mut store, options, |s| {
            let mut g = Graph::new(s);
            let x = g.input(obs.clone());
            let l = d.loss(&mut g, x, &lens)?;
            Ok((g.value(l).item(), g.backward(l)))
        })?);
    }
    Ok(out)
}
