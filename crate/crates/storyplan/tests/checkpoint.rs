use storyplan::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
use storyplan::config::RunConfig;
use storyplan::workflow;
use storyplan::AppError;
use storyplan_core::bundle::ModelBundle;
use storyplan_core::corpus::split_corpus;
use storyplan_core::trainer::Trainer;

const TINY: &str = "\
lm.layers=1
lm.hidden=8
lm.heads=2
lm.context=48
encoder.width=4
encoder.layers=1
encoder.heads=2
tdvae.belief_width=8
tdvae.belief_layers=1
tdvae.latent_dim=3
tdvae.hidden=8
tdvae.samples=2
disc.lstm=true
disc.transformer=true
disc.width=4
disc.depth=1
disc.heads=2
world.min_sentences=5
world.max_sentences=8
corpus.stories=12
train.batches_per_epoch=3
train.max_epochs=2
train.block_sentences=4
train.blocks_per_batch=2
train.lm_block_sentences=4
train.valid_batches=1
train.psa_every=2
";

fn tiny() -> RunConfig {
    RunConfig::parse(TINY).unwrap()
}

fn trained() -> Checkpoint {
    let config = tiny();
    let corpus = workflow::synthesize(&config).unwrap();
    workflow::train(&config, &corpus, None, &mut Vec::new()).unwrap()
}

#[test]
fn round_trip_is_bit_exact() {
    let ck = trained();
    let bytes = encode(&ck);
    let back = decode(&bytes).unwrap();
    assert_eq!(encode(&back), bytes);
    for (a, b) in ck.bundle.store.params().iter().zip(back.bundle.store.params()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &storyplan_core::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    assert_eq!(back.trainer, ck.trainer);
    assert_eq!(back.bundle.vocabulary, ck.bundle.vocabulary);
    assert_eq!(back.config, ck.config);
}

#[test]
fn file_round_trip_and_untrained_bundle() {
    let config = tiny();
    let corpus = workflow::synthesize(&config).unwrap();
    let bundle = ModelBundle::new(config.model_config(), corpus.vocabulary.clone(), 5).unwrap();
    let ck = Checkpoint { config: RunConfig { model_seed: 5, ..config }, bundle, trainer: None };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert!(back.trainer.is_none());
    assert_eq!(encode(&back), encode(&ck));
    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(AppError::Io { .. })));
}

#[test]
fn truncation_and_garbage_are_rejected() {
    let bytes = encode(&trained());
    let step = (bytes.len() / 97).max(1);
    for n in (0..bytes.len()).step_by(step).chain([bytes.len() - 1]) {
        assert!(matches!(decode(&bytes[..n]), Err(AppError::CorruptCheckpoint(_))), "prefix {n} accepted");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode(&long), Err(AppError::CorruptCheckpoint(_))));
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(decode(&bad), Err(AppError::CorruptCheckpoint(_))));
}

#[test]
fn other_versions_are_refused() {
    let mut bytes = encode(&trained());
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match decode(&bytes) {
        Err(AppError::VersionMismatch { found, expected }) => {
            assert_eq!((found, expected), (FORMAT_VERSION + 1, FORMAT_VERSION));
        }
        other => panic!("expected a version mismatch, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    assert_eq!(encode(&trained()), encode(&trained()));
    let mut config = tiny();
    config.model_seed = 2;
    let corpus = workflow::synthesize(&config).unwrap();
    let other = workflow::train(&config, &corpus, None, &mut Vec::new()).unwrap();
    assert_ne!(encode(&other), encode(&trained()));
}

#[test]
fn resume_through_disk_matches_uninterrupted_steps() {
    let mut config = tiny();
    config.train.batches_per_epoch = 100;
    let corpus = workflow::synthesize(&config).unwrap();
    let (train, _, _) = split_corpus(&corpus, config.split_ratios(), config.corpus.split_seed).unwrap();
    let fresh = || {
        let bundle = ModelBundle::new(config.model_config(), corpus.vocabulary.clone(), config.model_seed).unwrap();
        let trainer = Trainer::new(config.train.clone(), &bundle).unwrap();
        (bundle, trainer)
    };

    let (mut b1, mut t1) = fresh();
    for _ in 0..10 {
        t1.step(&mut b1, &train).unwrap();
    }

    let (mut b2, mut t2) = fresh();
    for _ in 0..5 {
        t2.step(&mut b2, &train).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&Checkpoint { config: config.clone(), bundle: b2, trainer: Some(t2) }, &path).unwrap();
    let Checkpoint { mut bundle, trainer, .. } = load_checkpoint(&path).unwrap();
    let mut t2 = trainer.unwrap();
    for _ in 0..5 {
        t2.step(&mut bundle, &train).unwrap();
    }

    assert_eq!(t1, t2);
    let full = encode(&Checkpoint { config: config.clone(), bundle: b1, trainer: Some(t1) });
    let resumed = encode(&Checkpoint { config, bundle, trainer: Some(t2) });
    assert_eq!(full, resumed);
}
