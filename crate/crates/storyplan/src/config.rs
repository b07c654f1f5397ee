//! Flat `key=value` run configuration.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use storyplan_core::bundle::ModelConfig;
use storyplan_core::corpus::StoryWorldConfig;
use storyplan_core::discriminator::{DiscriminatorConfig, DiscriminatorKind};
use storyplan_core::encoder::EncoderConfig;
use storyplan_core::generation::{GenerationMode, GenerationSpec};
use storyplan_core::lm::LmConfig;
use storyplan_core::tdvae::TdVaeConfig;
use storyplan_core::trainer::TrainConfig;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSettings {
    pub lstm: bool,
    pub transformer: bool,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSettings {
    pub stories: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    /// Stories drawn from the evaluation corpus for each task.
    pub stories: usize,
    pub lm_window: usize,
    /// Nucleus threshold of the mutation sampler.
    pub top_p: f64,
    pub max_sentence_len: usize,
    pub seed: u64,
    /// Stories continued for the diversity and BLEU statistics; 0 skips them.
    pub stats_stories: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub lm: LmConfig,
    pub encoder: EncoderConfig,
    pub tdvae_enabled: bool,
    pub tdvae: TdVaeConfig,
    pub disc: DiscriminatorSettings,
    pub model_seed: u64,
    pub world: StoryWorldConfig,
    pub corpus: CorpusSettings,
    pub train: TrainConfig,
    pub generation: GenerationSpec,
    pub generation_seed: u64,
    pub eval: EvalSettings,
    /// Only `f64` is supported.
    pub precision: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            encoder: EncoderConfig::default(),
            tdvae_enabled: true,
            tdvae: TdVaeConfig::default(),
            disc: DiscriminatorSettings { lstm: false, transformer: false, width: 64, depth: 2, heads: 4 },
            model_seed: 1,
            world: StoryWorldConfig::default(),
            corpus: CorpusSettings {
                stories: 200,
                seed: 1,
                train_fraction: 0.8,
                valid_fraction: 0.1,
                test_fraction: 0.1,
                split_seed: 1,
            },
            train: TrainConfig::default(),
            generation: GenerationSpec::default(),
            generation_seed: 1,
            eval: EvalSettings { stories: 400, lm_window: 2, top_p: 0.925, max_sentence_len: 24, seed: 7, stats_stories: 10 },
            precision: String::from("f64"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> AppResult<T> {
    value.parse().map_err(|_| AppError::Config(format!("invalid value {value:?} for {key}")))
}

fn show<T: Display>(v: &T) -> String {
    v.to_string()
}

macro_rules! config_fields {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        const SIMPLE_KEYS: &[&str] = &[$($key),*];

        fn get_simple(c: &RunConfig, key: &str) -> Option<String> {
            match key {
                $($key => Some(show(&c.$($field).+)),)*
                _ => None,
            }
        }

        fn set_simple(c: &mut RunConfig, key: &str, value: &str) -> Option<AppResult<()>> {
            match key {
                $($key => Some(parse(key, value).map(|v| c.$($field).+ = v)),)*
                _ => None,
            }
        }
    };
}

config_fields! {
    "lm.layers" => lm.n_layers,
    "lm.hidden" => lm.hidden,
    "lm.heads" => lm.heads,
    "lm.context" => lm.context,
    "lm.vocab_size" => lm.vocab_size,
    "encoder.width" => encoder.width,
    "encoder.layers" => encoder.layers,
    "encoder.heads" => encoder.heads,
    "encoder.max_tokens" => encoder.max_tokens,
    "encoder.pair_classes" => encoder.pair_classes,
    "tdvae.enabled" => tdvae_enabled,
    "tdvae.belief_width" => tdvae.belief_width,
    "tdvae.belief_layers" => tdvae.belief_layers,
    "tdvae.latent_dim" => tdvae.latent_dim,
    "tdvae.layers" => tdvae.n_layers,
    "tdvae.hidden" => tdvae.hidden,
    "tdvae.max_jump" => tdvae.max_jump,
    "tdvae.samples" => tdvae.samples,
    "disc.lstm" => disc.lstm,
    "disc.transformer" => disc.transformer,
    "disc.width" => disc.width,
    "disc.depth" => disc.depth,
    "disc.heads" => disc.heads,
    "model.seed" => model_seed,
    "world.entities" => world.n_entities,
    "world.locations" => world.n_locations,
    "world.items" => world.n_items,
    "world.event_templates" => world.n_event_templates,
    "world.cast_size" => world.cast_size,
    "world.min_sentences" => world.min_sentences,
    "world.max_sentences" => world.max_sentences,
    "world.coherence" => world.coherence,
    "world.seed" => world.world_seed,
    "world.vocab_capacity" => world.vocab_capacity,
    "corpus.stories" => corpus.stories,
    "corpus.seed" => corpus.seed,
    "corpus.train_fraction" => corpus.train_fraction,
    "corpus.valid_fraction" => corpus.valid_fraction,
    "corpus.test_fraction" => corpus.test_fraction,
    "corpus.split_seed" => corpus.split_seed,
    "train.batches_per_epoch" => train.batches_per_epoch,
    "train.max_epochs" => train.max_epochs,
    "train.patience" => train.patience,
    "train.halve_lr" => train.halve_lr,
    "train.learning_rate" => train.learning_rate,
    "train.momentum" => train.momentum,
    "train.clip_norm" => train.clip_norm,
    "train.block_sentences" => train.block_sentences,
    "train.blocks_per_batch" => train.blocks_per_batch,
    "train.lm_block_sentences" => train.lm_block_sentences,
    "train.psa_every" => train.psa_every,
    "train.valid_batches" => train.valid_batches,
    "train.seed" => train.seed,
    "generate.beam" => generation.beam,
    "generate.candidates" => generation.candidates,
    "generate.top_p" => generation.top_p,
    "generate.steps" => generation.steps,
    "generate.max_sentence_len" => generation.max_sentence_len,
    "generate.rollout_samples" => generation.rollout_samples,
    "generate.seed" => generation_seed,
    "eval.stories" => eval.stories,
    "eval.lm_window" => eval.lm_window,
    "eval.top_p" => eval.top_p,
    "eval.max_sentence_len" => eval.max_sentence_len,
    "eval.seed" => eval.seed,
    "eval.stats_stories" => eval.stats_stories,
}

const SECTION_NOTES: &[(&str, &str)] = &[
    ("lm.", "token language model (a GPT-2 medium scale model would be 24 layers, hidden 1024)"),
    ("encoder.", "dual sentence encoder; embeddings have 2 * width dimensions (reference scale: 6 layers, width 1024)"),
    ("tdvae.", "TD-VAE over sentence embeddings"),
    ("disc.", "baseline discriminators trained next to the TD-VAE"),
    ("model.", "parameter initialisation"),
    ("world.", "synthetic story world"),
    ("corpus.", "corpus synthesis and train/valid/test split"),
    ("train.", "alternating training schedule (reference scale: 10000 batches per epoch, 100-sentence blocks)"),
    ("generate.", "continuation generation"),
    ("eval.", "swap/mutation evaluation"),
    ("precision", "numeric precision"),
];

impl RunConfig {
    pub fn keys() -> Vec<&'static str> {
        let mut k: Vec<&str> = SIMPLE_KEYS.to_vec();
        k.insert(k.iter().position(|&x| x == "generate.beam").unwrap_or(k.len()), "generate.mode");
        k.push("precision");
        k
    }

    pub fn get(&self, key: &str) -> Option<String> {
        match key {
            "generate.mode" => Some(self.generation.mode.as_str().to_string()),
            "precision" => Some(self.precision.clone()),
            _ => get_simple(self, key),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> AppResult<()> {
        match key {
            "generate.mode" => {
                self.generation.mode = GenerationMode::parse(value).map_err(|e| AppError::Config(e.to_string()))?;
                Ok(())
            }
            "precision" => {
                self.precision = value.to_string();
                Ok(())
            }
            _ => set_simple(self, key, value).unwrap_or_else(|| Err(AppError::Config(format!("unknown key {key:?}")))),
        }
    }

    /// Parses `key=value` lines on top of the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> AppResult<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(AppError::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            c.set(k, v).map_err(|e| AppError::Config(format!("line {}: {e}", n + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its current value, grouped under comment headers.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for key in Self::keys() {
            if let Some(&(prefix, note)) = SECTION_NOTES.iter().find(|(p, _)| key.starts_with(p)) {
                if prefix != section {
                    if !out.is_empty() {
                        out.push('\n');
                    }
                    out.push_str(&format!("# {note}\n"));
                    section = prefix;
                }
            }
            out.push_str(&format!("{key}={}\n", self.get(key).expect("listed key")));
        }
        out
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.precision != "f64" {
            return Err(AppError::Config(format!("unsupported precision {:?}; only f64 is available", self.precision)));
        }
        let c = &self.corpus;
        if (c.train_fraction + c.valid_fraction + c.test_fraction - 1.0).abs() > 1e-9 {
            return Err(AppError::Config("corpus fractions must sum to 1".into()));
        }
        let check = |r: storyplan_core::Result<()>| r.map_err(|e| AppError::Config(e.to_string()));
        check(self.lm.validate())?;
        check(self.encoder.validate())?;
        check(self.world.validate())?;
        check(self.train.validate())?;
        check(self.generation.validate())?;
        if self.tdvae_enabled {
            let mut t = self.tdvae.clone();
            t.input_dim = self.encoder.embedding_dim();
            check(t.validate())?;
        }
        if self.eval.lm_window < 1 || self.eval.max_sentence_len < 1 || !(self.eval.top_p > 0.0 && self.eval.top_p <= 1.0)
        {
            return Err(AppError::Config("eval.lm_window, eval.max_sentence_len must be >= 1 and eval.top_p in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let p = self.encoder.embedding_dim();
        let disc = |kind| DiscriminatorConfig {
            kind,
            input_dim: p,
            width: self.disc.width,
            depth: self.disc.depth,
            heads: self.disc.heads,
        };
        let mut discriminators = Vec::new();
        if self.disc.lstm {
            discriminators.push(disc(DiscriminatorKind::Lstm));
        }
        if self.disc.transformer {
            discriminators.push(disc(DiscriminatorKind::Transformer));
        }
        ModelConfig {
            lm: self.lm.clone(),
            encoder: self.encoder.clone(),
            tdvae: self.tdvae_enabled.then(|| TdVaeConfig { input_dim: p, ..self.tdvae.clone() }),
            discriminators,
        }
    }

    pub fn split_ratios(&self) -> [f64; 3] {
        [self.corpus.train_fraction, self.corpus.valid_fraction, self.corpus.test_fraction]
    }
}
