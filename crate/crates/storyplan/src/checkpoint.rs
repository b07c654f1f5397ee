//! Versioned binary checkpoints.
//!
//! Layout (little endian): the magic bytes, a `u32` format version, then
//! length-prefixed sections: the run config as `key=value` text, the
//! vocabulary, every parameter tensor with its name and group, and an
//! optional trainer block (optimizer velocities, counters, noise stream
//! position, best snapshot).

use std::path::Path;

use storyplan_core::bundle::ModelBundle;
use storyplan_core::noise::SeededNoise;
use storyplan_core::optim::OptimizerState;
use storyplan_core::params::Group;
use storyplan_core::trainer::{Trainer, TrainerState};
use storyplan_core::vocab::Vocabulary;
use storyplan_core::Tensor;

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 8] = b"STPLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub bundle: ModelBundle,
    pub trainer: Option<Trainer>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.rows() as u64);
        self.u64(t.cols() as u64);
        for &x in t.data() {
            self.f64(x);
        }
    }
    fn tensors(&mut self, ts: &[Tensor]) {
        self.u64(ts.len() as u64);
        for t in ts {
            self.tensor(t);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> AppError {
    AppError::CorruptCheckpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> AppResult<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(corrupt(format!("truncated at byte {} (wanted {n} more)", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> AppResult<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> AppResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> AppResult<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> AppResult<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> AppResult<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }
    fn f64(&mut self) -> AppResult<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn bool(&mut self) -> AppResult<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(corrupt(format!("bad flag byte {b}"))),
        }
    }
    fn len_prefixed(&mut self) -> AppResult<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }
    fn str(&mut self) -> AppResult<String> {
        String::from_utf8(self.len_prefixed()?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }
    fn tensor(&mut self) -> AppResult<Tensor> {
        let (r, c) = (self.usize()?, self.usize()?);
        let n = r.checked_mul(c).filter(|&n| n <= (self.data.len() - self.pos) / 8);
        let n = n.ok_or_else(|| corrupt(format!("truncated tensor of shape {r}x{c}")))?;
        let data = (0..n).map(|_| self.f64()).collect::<AppResult<Vec<_>>>()?;
        Tensor::from_vec(r, c, data).map_err(|e| corrupt(e.to_string()))
    }
    fn tensors(&mut self) -> AppResult<Vec<Tensor>> {
        let n = self.usize()?;
        if n > self.data.len() - self.pos {
            return Err(corrupt("tensor count exceeds file size"));
        }
        (0..n).map(|_| self.tensor()).collect()
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    let mut config = ck.config.clone();
    if let Some(t) = &ck.trainer {
        config.train = t.config.clone();
    }
    w.str(&config.to_text());
    let vocab = ck.bundle.vocabulary.tokens();
    w.u64(vocab.len() as u64);
    for t in vocab {
        w.str(t);
    }
    let params = ck.bundle.store.params();
    w.u64(params.len() as u64);
    for p in params {
        w.str(&p.name);
        w.u8(p.group.code());
        w.tensor(&p.value);
    }
    match &ck.trainer {
        None => w.u8(0),
        Some(t) => {
            w.u8(1);
            w.f64(t.optimizer.learning_rate);
            w.f64(t.optimizer.momentum);
            w.tensors(&t.optimizer.velocities);
            let s = &t.state;
            w.u64(s.epoch as u64);
            w.u64(s.step);
            w.u64(s.step_in_epoch as u64);
            w.u64(s.hier_batches);
            w.u8(s.best_valid.is_some() as u8);
            w.f64(s.best_valid.unwrap_or(0.0));
            w.u64(s.bad_epochs as u64);
            w.u8(s.finished as u8);
            let (seed, stream, word_pos) = t.noise.state();
            w.0.extend_from_slice(&seed);
            w.u64(stream);
            w.0.extend_from_slice(&word_pos.to_le_bytes());
            match &t.best {
                None => w.u8(0),
                Some(b) => {
                    w.u8(1);
                    w.tensors(b);
                }
            }
        }
    }
    w.0
}

pub fn decode(data: &[u8]) -> AppResult<Checkpoint> {
    let mut r = Reader { data, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(corrupt("bad magic header"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(AppError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let config = RunConfig::parse(&r.str()?).map_err(|e| corrupt(format!("embedded config: {e}")))?;
    let n_vocab = r.usize()?;
    let tokens = (0..n_vocab.min(data.len())).map(|_| r.str()).collect::<AppResult<Vec<_>>>()?;
    if tokens.len() != n_vocab {
        return Err(corrupt("vocabulary count exceeds file size"));
    }
    let vocabulary = Vocabulary::from_tokens(tokens).map_err(|e| corrupt(format!("vocabulary: {e}")))?;
    let mut bundle = ModelBundle::new(config.model_config(), vocabulary, config.model_seed)?;
    let n_params = r.usize()?;
    if n_params != bundle.store.len() {
        return Err(corrupt(format!("{n_params} parameters stored, model has {}", bundle.store.len())));
    }
    for _ in 0..n_params {
        let name = r.str()?;
        let group = Group::from_code(r.u8()?).ok_or_else(|| corrupt("unknown parameter group"))?;
        let value = r.tensor()?;
        let id = bundle.store.id(&name).map_err(|_| corrupt(format!("unknown parameter {name}")))?;
        if bundle.store.param(id).group != group {
            return Err(corrupt(format!("group mismatch for {name}")));
        }
        bundle.store.load_value(&name, value).map_err(|e| corrupt(e.to_string()))?;
    }
    let trainer = if r.bool()? {
        let learning_rate = r.f64()?;
        let momentum = r.f64()?;
        let velocities = r.tensors()?;
        let state = TrainerState {
            epoch: r.usize()?,
            step: r.u64()?,
            step_in_epoch: r.usize()?,
            hier_batches: r.u64()?,
            best_valid: {
                let has = r.bool()?;
                let v = r.f64()?;
                has.then_some(v)
            },
            bad_epochs: r.usize()?,
            finished: r.bool()?,
        };
        let seed: [u8; 32] = r.array()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.array()?);
        let best = if r.bool()? { Some(r.tensors()?) } else { None };
        let shapes_match = |ts: &[Tensor]| {
            ts.len() == bundle.store.len() && ts.iter().zip(bundle.store.params()).all(|(t, p)| t.same_shape(&p.value))
        };
        if !shapes_match(&velocities) || best.as_deref().is_some_and(|b| !shapes_match(b)) {
            return Err(corrupt("optimizer or snapshot shapes do not match the model"));
        }
        let mut t = Trainer::new(config.train.clone(), &bundle)?;
        t.optimizer = OptimizerState { velocities, learning_rate, momentum };
        t.state = state;
        t.noise = SeededNoise::from_state(seed, stream, word_pos);
        t.best = best;
        Some(t)
    } else {
        None
    };
    if r.pos != data.len() {
        return Err(corrupt(format!("{} trailing bytes", data.len() - r.pos)));
    }
    Ok(Checkpoint { config, bundle, trainer })
}

/// Writes to a sibling temporary file first, then renames it into place.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> AppResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(ck)).map_err(|e| AppError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> AppResult<Checkpoint> {
    let data = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&data)
}
