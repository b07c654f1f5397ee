//! All trainable components sharing one parameter store.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Story;
use crate::discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorKind};
use crate::encoder::{DualEncoder, EncoderConfig};
use crate::error::{bail, Error, Result};
use crate::lm::{LmConfig, PsaProjection, TokenLm};
use crate::params::ParameterStore;
use crate::tdvae::{TdVae, TdVaeConfig};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub lm: LmConfig,
    pub encoder: EncoderConfig,
    /// `input_dim` is overridden with the encoder's embedding dimension.
    pub tdvae: Option<TdVaeConfig>,
    pub discriminators: Vec<DiscriminatorConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        let p = encoder.embedding_dim();
        Self {
            lm: LmConfig::default(),
            encoder,
            tdvae: Some(TdVaeConfig { input_dim: p, ..TdVaeConfig::default() }),
            discriminators: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub vocabulary: Vocabulary,
    pub lm: TokenLm,
    pub psa: PsaProjection,
    pub encoder: DualEncoder,
    pub tdvae: Option<TdVae>,
    pub discriminators: Vec<Discriminator>,
}

impl ModelBundle {
    /// Registers every component in a fixed order; deterministic in `seed`.
    pub fn new(mut config: ModelConfig, vocabulary: Vocabulary, seed: u64) -> Result<Self> {
        if vocabulary.len() > config.lm.vocab_size {
            return Err(Error::VocabularyOverflow { needed: vocabulary.len(), capacity: config.lm.vocab_size });
        }
        let p = config.encoder.embedding_dim();
        if let Some(t) = config.tdvae.as_mut() {
            t.input_dim = p;
        }
        for d in &mut config.discriminators {
            d.input_dim = p;
        }
        let mut kinds: Vec<DiscriminatorKind> = config.discriminators.iter().map(|d| d.kind).collect();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != config.discriminators.len() {
            bail!(InvalidArgument, "each discriminator kind may appear once");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let mut lm = TokenLm::new(&mut store, &mut rng, config.lm.clone())?;
        lm.active_vocab = vocabulary.len();
        let encoder = DualEncoder::new(&mut store, &mut rng, config.lm.hidden, config.encoder.clone())?;
        let psa = PsaProjection::new(&mut store, &mut rng, p, &config.lm)?;
        let tdvae = match &config.tdvae {
            Some(c) => Some(TdVae::new(&mut store, &mut rng, c.clone())?),
            None => None,
        };
        let discriminators = config
            .discriminators
            .iter()
            .map(|c| Discriminator::new(&mut store, &mut rng, c.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, store, vocabulary, lm, psa, encoder, tdvae, discriminators })
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.embedding_dim()
    }

    /// Sentence embeddings of a story, `T x P`.
    pub fn encode_story(&self, story: &Story) -> Result<Tensor> {
        self.encoder.encode_all(&self.store, &self.lm, &story.sentences)
    }

    pub fn tdvae(&self) -> Result<&TdVae> {
        self.tdvae.as_ref().ok_or_else(|| Error::MissingComponent("tdvae".into()))
    }

    pub fn discriminator(&self, kind: DiscriminatorKind) -> Result<&Discriminator> {
        self.discriminators
            .iter()
            .find(|d| d.config.kind == kind)
            .ok_or_else(|| Error::MissingComponent(alloc::format!("{} discriminator", kind.as_str())))
    }
}

/// A model small enough for unit tests.
#[cfg(test)]
pub(crate) fn small_config() -> ModelConfig {
    ModelConfig {
        lm: LmConfig { n_layers: 1, hidden: 16, heads: 2, context: 64, vocab_size: 80 },
        encoder: EncoderConfig { width: 8, layers: 1, heads: 2, max_tokens: 12, pair_classes: 2 },
        tdvae: Some(TdVaeConfig {
            input_dim: 0,
            belief_width: 12,
            belief_layers: 1,
            latent_dim: 4,
            n_layers: 2,
            hidden: 12,
            max_jump: 3,
            samples: 16,
        }),
        discriminators: alloc::vec![
            DiscriminatorConfig { kind: DiscriminatorKind::Lstm, input_dim: 0, width: 8, depth: 1, heads: 2 },
            DiscriminatorConfig { kind: DiscriminatorKind::Transformer, input_dim: 0, width: 8, depth: 1, heads: 2 },
        ],
    }
}
