//! Coherence probes, BLEU and lexical diversity.

pub mod bleu;
pub mod diversity;
pub mod perturb;
pub mod report;
pub mod tasks;

pub use bleu::bleu;
pub use diversity::{diversity_stats, DiversityStats, PosLexicon, PosTag};
pub use perturb::{make_swap, MutationSampler, PerturbKind, PerturbedStory};
pub use report::{format_key_values, format_table, ReportRow};
pub use tasks::{
    easy_task_accuracy, evaluate_task, hard_task_accuracies, hard_task_accuracy, random_hit_probability, Estimate,
    HitRule, ModelScorer, RandomScorer, ScoringModel, StoryScorer, TaskResult,
};
