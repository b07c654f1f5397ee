//! The end-to-end steps behind each command, usable without the CLI.

use std::io::Write;

use storyplan_core::bundle::ModelBundle;
use storyplan_core::corpus::{generate_story_world, split_corpus, Corpus, Story, World};
use storyplan_core::discriminator::DiscriminatorKind;
use storyplan_core::evaluation::{
    bleu, diversity_stats, evaluate_task, make_swap, random_hit_probability, DiversityStats, HitRule, ModelScorer,
    MutationSampler, PerturbKind, PerturbedStory, PosLexicon, RandomScorer, ReportRow, ScoringModel, StoryScorer,
    TaskResult,
};
use storyplan_core::evaluation::tasks::{Estimate, HARD_KS};
use storyplan_core::generation::{
    generate_continuation, CandidateScorer, DiscriminatorScorer, Generation, GenerationMode, TdVaeScorer,
};
use storyplan_core::noise::{derive_seed, Noise, SeededNoise};
use storyplan_core::trainer::{EpochRecord, LossTerms, StepRecord, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerChoice {
    TdVae,
    Lstm,
    Transformer,
    Lm,
    Random,
}

impl ScorerChoice {
    pub const ALL: [ScorerChoice; 5] = [Self::TdVae, Self::Lstm, Self::Transformer, Self::Lm, Self::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TdVae => "tdvae",
            Self::Lstm => "lstm",
            Self::Transformer => "transformer",
            Self::Lm => "lm",
            Self::Random => "random",
        }
    }

    pub fn parse(s: &str) -> AppResult<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| AppError::Usage(format!("unknown scorer {s:?}; expected tdvae|lstm|transformer|lm|random")))
    }

    /// Whether `bundle` has the component this scorer needs.
    pub fn available(self, bundle: &ModelBundle) -> bool {
        match self {
            Self::TdVae => bundle.tdvae.is_some(),
            Self::Lstm => bundle.discriminator(DiscriminatorKind::Lstm).is_ok(),
            Self::Transformer => bundle.discriminator(DiscriminatorKind::Transformer).is_ok(),
            Self::Lm | Self::Random => true,
        }
    }
}

pub fn synthesize(config: &RunConfig) -> AppResult<Corpus> {
    Ok(generate_story_world(&config.world, config.corpus.seed, config.corpus.stories)?)
}

fn terms_kv(terms: &LossTerms) -> String {
    terms.terms.iter().map(|(n, v)| format!(" {n}={v:.6}")).collect()
}

pub fn step_line(r: &StepRecord) -> String {
    format!(
        "event=step step={} epoch={} kind={}{} grad_norm={:.6}",
        r.step,
        r.epoch,
        r.kind.as_str(),
        terms_kv(&r.losses),
        r.grad_norm
    )
}

pub fn epoch_line(r: &EpochRecord) -> String {
    format!(
        "event=epoch epoch={} valid_total={:.6}{} improved={} lr={}",
        r.epoch,
        r.valid.total(),
        terms_kv(&r.valid),
        r.improved,
        r.learning_rate
    )
}

/// Splits `corpus`, trains a fresh model (or resumes `resume`) and returns
/// the checkpoint holding the best parameters. Log records go to `log`,
/// one `key=value` line each.
pub fn train(
    config: &RunConfig,
    corpus: &Corpus,
    resume: Option<Checkpoint>,
    log: &mut dyn Write,
) -> AppResult<Checkpoint> {
    let (train, valid, _) = split_corpus(corpus, config.split_ratios(), config.corpus.split_seed)?;
    let (mut bundle, mut trainer) = match resume {
        Some(Checkpoint { bundle, trainer: Some(t), .. }) => (bundle, t),
        Some(Checkpoint { bundle, trainer: None, .. }) => {
            let t = Trainer::new(config.train.clone(), &bundle)?;
            (bundle, t)
        }
        None => {
            let bundle = ModelBundle::new(config.model_config(), corpus.vocabulary.clone(), config.model_seed)?;
            let t = Trainer::new(config.train.clone(), &bundle)?;
            (bundle, t)
        }
    };
    let sink = std::cell::RefCell::new((log, Ok(())));
    let emit = |line: String| {
        let mut guard = sink.borrow_mut();
        let (log, status) = &mut *guard;
        if status.is_ok() {
            *status = writeln!(log, "{line}");
        }
    };
    emit(format!(
        "event=start train_stories={} valid_stories={} parameters={} resume_step={}",
        train.len(),
        valid.len(),
        bundle.store.params().iter().map(|p| p.value.len()).sum::<usize>(),
        trainer.state.step
    ));
    trainer.train(&mut bundle, &train, &valid, |r| emit(step_line(r)), |r| emit(epoch_line(r)))?;
    trainer.restore_best(&mut bundle);
    emit(format!("event=done epochs={} best_valid={:?}", trainer.state.epoch, trainer.state.best_valid));
    let (_, status): (&mut dyn Write, std::io::Result<()>) = sink.into_inner();
    status.map_err(|e| AppError::Io { path: "<log>".into(), source: e })?;
    Ok(Checkpoint { config: config.clone(), bundle, trainer: Some(trainer) })
}

/// Draws up to `n` stories without replacement, in a seeded order.
pub fn pick_stories(corpus: &Corpus, n: usize, seed: u64) -> Vec<Story> {
    let mut noise = SeededNoise::new(seed);
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    for i in (1..idx.len()).rev() {
        idx.swap(i, noise.index(i + 1));
    }
    idx.truncate(n);
    idx.into_iter().map(|i| corpus.stories[i].clone()).collect()
}

/// Perturbs every story; story `i` draws from its own derived stream.
pub fn perturb_all(
    config: &RunConfig,
    bundle: &ModelBundle,
    stories: &[Story],
    kind: PerturbKind,
) -> AppResult<Vec<PerturbedStory>> {
    let sampler = MutationSampler {
        lm: &bundle.lm,
        store: &bundle.store,
        top_p: config.eval.top_p,
        max_len: config.eval.max_sentence_len,
    };
    let tag = kind as u64 + 1;
    stories
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut noise = SeededNoise::new(derive_seed(derive_seed(config.eval.seed, tag), i as u64));
            Ok(match kind {
                PerturbKind::Swap2 => make_swap(s, &mut noise)?,
                PerturbKind::Mut1 => sampler.make_mutation(s, &mut noise)?,
            })
        })
        .collect()
}

pub fn story_scorer<'a>(config: &RunConfig, bundle: &'a ModelBundle, choice: ScorerChoice) -> Box<dyn StoryScorer + 'a> {
    let model = match choice {
        ScorerChoice::Random => {
            return Box::new(RandomScorer { noise: SeededNoise::new(derive_seed(config.eval.seed, 99)) });
        }
        ScorerChoice::Lm => ScoringModel::Lm { window: config.eval.lm_window },
        ScorerChoice::TdVae => ScoringModel::TdVae,
        ScorerChoice::Lstm => ScoringModel::Discriminator(DiscriminatorKind::Lstm),
        ScorerChoice::Transformer => ScoringModel::Discriminator(DiscriminatorKind::Transformer),
    };
    Box::new(ModelScorer { bundle, model })
}

/// Expected random-scorer accuracies for the hard task on these stories;
/// the easy task is a coin flip.
pub fn analytic_random(perturbed: &[PerturbedStory]) -> TaskResult {
    let est = |k: usize| {
        let p = perturbed
            .iter()
            .map(|s| random_hit_probability(s.modified.len(), s.positions.len(), k, HitRule::Any))
            .sum::<f64>()
            / perturbed.len() as f64;
        Estimate { accuracy: p, ci: 0.0, n: perturbed.len() }
    };
    let e = [est(HARD_KS[0]), est(HARD_KS[1]), est(HARD_KS[2])];
    TaskResult::new(Estimate { accuracy: 0.5, ci: 0.0, n: perturbed.len() }, e[0], e[1], e[2])
}

/// Swap and mutation tasks for every requested scorer, followed by the
/// analytic random rows.
pub fn evaluate_tasks(
    config: &RunConfig,
    bundle: &ModelBundle,
    corpus: &Corpus,
    scorers: &[ScorerChoice],
) -> AppResult<Vec<ReportRow>> {
    let stories: Vec<Story> = pick_stories(corpus, config.eval.stories, config.eval.seed)
        .into_iter()
        .filter(|s| s.len() >= 4)
        .collect();
    if stories.is_empty() {
        return Err(AppError::Corpus("no stories with at least 4 sentences to evaluate".into()));
    }
    let mut rows = Vec::new();
    for kind in [PerturbKind::Swap2, PerturbKind::Mut1] {
        let perturbed = perturb_all(config, bundle, &stories, kind)?;
        for &choice in scorers {
            let mut scorer = story_scorer(config, bundle, choice);
            let result = evaluate_task(scorer.as_mut(), &perturbed)?;
            rows.push(ReportRow { task: kind, model: choice.as_str().to_string(), result });
        }
        rows.push(ReportRow { task: kind, model: "random_analytic".into(), result: analytic_random(&perturbed) });
    }
    Ok(rows)
}

pub fn candidate_scorer(choice: ScorerChoice, samples: usize) -> AppResult<Box<dyn CandidateScorer>> {
    Ok(match choice {
        ScorerChoice::TdVae => Box::new(TdVaeScorer { samples }),
        ScorerChoice::Lstm => Box::new(DiscriminatorScorer { kind: DiscriminatorKind::Lstm }),
        ScorerChoice::Transformer => Box::new(DiscriminatorScorer { kind: DiscriminatorKind::Transformer }),
        other => return Err(AppError::Usage(format!("{} cannot rerank candidates", other.as_str()))),
    })
}

/// Continues every prompt; prompt `i` uses its own derived noise stream.
pub fn generate(
    config: &RunConfig,
    bundle: &ModelBundle,
    prompts: &[Story],
    mode: GenerationMode,
    scorer: ScorerChoice,
) -> AppResult<Vec<Generation>> {
    let spec = storyplan_core::generation::GenerationSpec { mode, ..config.generation.clone() };
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut noise = SeededNoise::new(derive_seed(config.generation_seed, i as u64));
            let mut cs = match mode {
                GenerationMode::Sample => None,
                _ => Some(candidate_scorer(scorer, config.generation.rollout_samples)?),
            };
            let cs = cs.as_mut().map(|b| &mut **b as &mut dyn CandidateScorer);
            let g = generate_continuation(bundle, p, &spec, cs, &mut noise)?;
            Ok(g)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextStats {
    pub model: String,
    pub diversity: DiversityStats,
    /// Against the gold continuations; absent for the gold row.
    pub bleu: Option<f64>,
}

/// Part-of-speech lexicon for the configured story world plus common English.
pub fn lexicon(config: &RunConfig) -> PosLexicon {
    let mut lex = PosLexicon::english_basic();
    if let Ok(world) = World::new(&config.world) {
        lex.extend(&world.pos_lexicon());
    }
    lex
}

/// Diversity and BLEU of generated continuations against the held-out
/// endings of `eval.stats_stories` stories. Each story is cut so that the
/// last `generate.steps` sentences form the gold continuation.
pub fn text_stats(
    config: &RunConfig,
    bundle: &ModelBundle,
    corpus: &Corpus,
    modes: &[(GenerationMode, ScorerChoice)],
) -> AppResult<Vec<TextStats>> {
    let steps = config.generation.steps;
    let stories: Vec<Story> = pick_stories(corpus, config.eval.stats_stories, derive_seed(config.eval.seed, 5))
        .into_iter()
        .filter(|s| s.len() > steps)
        .collect();
    if stories.is_empty() {
        return Ok(Vec::new());
    }
    let prompts: Vec<Story> = stories
        .iter()
        .map(|s| Story { sentences: s.sentences[..s.len() - steps].to_vec(), ..s.clone() })
        .collect();
    let gold: Vec<Story> = stories
        .iter()
        .map(|s| Story { sentences: s.sentences[s.len() - steps..].to_vec(), ..s.clone() })
        .collect();
    let lex = lexicon(config);
    let vocab = &bundle.vocabulary;
    let mut out = vec![TextStats { model: "gold".into(), diversity: diversity_stats(&gold, vocab, &lex)?, bleu: None }];
    let flat = |s: &Story| s.sentences.concat();
    let gold_flat: Vec<Vec<usize>> = gold.iter().map(flat).collect();
    for &(mode, scorer) in modes {
        let gens = generate(config, bundle, &prompts, mode, scorer)?;
        let conts: Vec<Story> = gens
            .iter()
            .zip(&prompts)
            .map(|(g, p)| Story { sentences: g.story.sentences[p.len()..].to_vec(), ..p.clone() })
            .collect();
        let cand: Vec<Vec<usize>> = conts.iter().map(flat).collect();
        let c: Vec<&[usize]> = cand.iter().map(|v| &v[..]).collect();
        let r: Vec<&[usize]> = gold_flat.iter().map(|v| &v[..]).collect();
        let name = match mode {
            GenerationMode::Sample => "sample".to_string(),
            m => format!("{}_{}", m.as_str(), scorer.as_str()),
        };
        out.push(TextStats { model: name, diversity: diversity_stats(&conts, vocab, &lex)?, bleu: Some(bleu(&c, &r, 4)?) });
    }
    Ok(out)
}

pub fn format_stats(stats: &[TextStats]) -> String {
    stats
        .iter()
        .map(|s| {
            let bleu = s.bleu.map_or(String::new(), |b| format!(" bleu={b:.6}"));
            format!(
                "stats model={} nouns_per_100={:.4} verbs_per_100={:.4}{bleu}\n",
                s.model, s.diversity.nouns_per_100, s.diversity.verbs_per_100
            )
        })
        .collect()
}
