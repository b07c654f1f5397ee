use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use storyplan_core::corpus::{generate_story_world, split_corpus, Story, StoryWorldConfig, World};
use storyplan_core::evaluation::diversity::{diversity_stats, PosLexicon};
use storyplan_core::evaluation::perturb::{swap_at, PerturbKind, PerturbedStory};
use storyplan_core::evaluation::tasks::{hard_task_accuracies, HitRule, RandomScorer};
use storyplan_core::evaluation::bleu;
use storyplan_core::lm::top_p_filter;
use storyplan_core::noise::SeededNoise;
use storyplan_core::optim::{sgd_nesterov_step, OptimizerState};
use storyplan_core::params::Init;
use storyplan_core::tdvae::sample_time_pairs;
use storyplan_core::{Graph, Group, ParameterStore, Tensor};

fn probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..12).prop_filter_map("zero mass", |w| {
        let z: f64 = w.iter().sum();
        (z > 1e-3).then(|| w.iter().map(|x| x / z).collect())
    })
}

proptest! {
    #[test]
    fn top_p_keeps_a_minimal_descending_prefix(p in probs(), thr in 0.05f64..=1.0) {
        let out = top_p_filter(&p, thr).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let kept: Vec<usize> = (0..p.len()).filter(|&i| out[i] > 0.0).collect();
        let mass: f64 = kept.iter().map(|&i| p[i]).sum();
        prop_assert!(mass >= thr - 1e-9 || kept.len() == p.iter().filter(|&&x| x > 0.0).count());
        let smallest_kept = kept.iter().map(|&i| p[i]).fold(f64::INFINITY, f64::min);
        for i in (0..p.len()).filter(|i| !kept.contains(i)) {
            prop_assert!(p[i] <= smallest_kept);
        }
        prop_assert!(mass - smallest_kept < thr - 1e-12);
        for &i in &kept {
            prop_assert!((out[i] - p[i] / mass).abs() < 1e-9);
        }
    }

    #[test]
    fn swapping_twice_restores(len in 4usize..30, a in 0usize..30, b in 0usize..30) {
        let s = Story { id: "s".into(), sentences: (0..len).map(|i| vec![4 + i]).collect(), source: String::new() };
        let (i, j) = (a % len, b % len);
        prop_assert_eq!(swap_at(&swap_at(&s, i, j), i, j), s);
    }

    #[test]
    fn hard_accuracy_is_monotone_in_k(lens in prop::collection::vec(4usize..40, 1..30), seed in any::<u64>()) {
        let perturbed: Vec<PerturbedStory> = lens
            .iter()
            .enumerate()
            .map(|(n, &l)| {
                let s = Story { id: n.to_string(), sentences: (0..l).map(|i| vec![4 + i]).collect(), source: String::new() };
                PerturbedStory { original: s.clone(), modified: swap_at(&s, 0, l - 1), positions: vec![0, l - 1], kind: PerturbKind::Swap2 }
            })
            .collect();
        let ks: Vec<usize> = (1..=40).collect();
        for rule in [HitRule::Any, HitRule::All] {
            let mut scorer = RandomScorer { noise: SeededNoise::new(seed) };
            let acc = hard_task_accuracies(&mut scorer, &perturbed, &ks, rule).unwrap();
            prop_assert!(acc.windows(2).all(|w| w[0].accuracy <= w[1].accuracy));
            prop_assert_eq!(acc[39].accuracy, 1.0);
        }
    }

    #[test]
    fn sampled_time_pairs_respect_the_jump_bound(t in 2usize..60, k in 1usize..8, seed in any::<u64>()) {
        let pairs = sample_time_pairs(t, k, 50, &mut SeededNoise::new(seed)).unwrap();
        prop_assert_eq!(pairs.len(), 50);
        for (a, b) in pairs {
            prop_assert!(a < b && b < t && b - a <= k);
        }
    }

    #[test]
    fn bleu_is_a_bounded_score(c in prop::collection::vec(0u8..6, 1..15), r in prop::collection::vec(0u8..6, 1..15)) {
        let s = bleu(&[&c[..]], &[&r[..]], 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((bleu(&[&c[..]], &[&c[..]], 4).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_matches_the_triple_loop(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let mut noise = SeededNoise::new(seed);
        use storyplan_core::noise::Noise;
        let a = Tensor::from_vec(m, k, noise.normals(m * k)).unwrap();
        let b = Tensor::from_vec(k, n, noise.normals(k * n)).unwrap();
        let c = a.matmul(&b);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|x| a.get(i, x) * b.get(x, j)).sum();
                prop_assert!((c.get(i, j) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn nesterov_step_by_hand() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let id = store.register("theta", Group::Lm, 1, 1, Init::Const(1.0), &mut rng).unwrap();
    let mut opt = OptimizerState::new(&store, 0.01, 0.9).unwrap();
    let grads = {
        let mut g = Graph::new(&store);
        let p = g.param(id);
        let loss = g.sum(p);
        g.backward(loss)
    };
    store.accumulate(&grads);
    sgd_nesterov_step(&mut store, &mut opt).unwrap();
    // v' = 0.9 * 0 - 0.01 * 1, theta' = 1 + 0.9 * v' - 0.01 * 1
    let v = -0.01;
    assert!((store.value(id).get(0, 0) - (1.0 + 0.9 * v - 0.01)).abs() < 1e-15);
    assert_eq!(store.grad(id).get(0, 0), 0.0);
}

#[test]
fn diversity_ignores_order_and_duplication() {
    let corpus = generate_story_world(&StoryWorldConfig { min_sentences: 5, max_sentences: 9, ..Default::default() }, 4, 6).unwrap();
    let world = World::new(&StoryWorldConfig::default()).unwrap();
    let mut lex = PosLexicon::english_basic();
    lex.extend(&world.pos_lexicon());
    let base = diversity_stats(&corpus.stories, &corpus.vocabulary, &lex).unwrap();
    let mut rev = corpus.stories.clone();
    rev.reverse();
    let doubled: Vec<Story> = corpus.stories.iter().chain(&corpus.stories).cloned().collect();
    for other in [rev, doubled] {
        let d = diversity_stats(&other, &corpus.vocabulary, &lex).unwrap();
        assert!((d.nouns_per_100 - base.nouns_per_100).abs() < 1e-9);
        assert!((d.verbs_per_100 - base.verbs_per_100).abs() < 1e-9);
    }
}

#[test]
fn coherent_worlds_only_narrate_valid_events() {
    let cfg = StoryWorldConfig::default();
    let world = World::new(&cfg).unwrap();
    let corpus = generate_story_world(&cfg, 8, 20).unwrap();
    assert!(corpus.vocabulary.len() <= cfg.vocab_capacity);
    for s in &corpus.stories {
        assert!((cfg.min_sentences..=cfg.max_sentences).contains(&s.len()));
        assert!(world.check_transitions(s).iter().all(|&ok| ok));
    }
}

#[test]
fn splits_partition_the_corpus() {
    let corpus = generate_story_world(&StoryWorldConfig { min_sentences: 4, max_sentences: 5, ..Default::default() }, 2, 50).unwrap();
    let (a, b, c) = split_corpus(&corpus, [0.8, 0.1, 0.1], 3).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (40, 5, 5));
    let mut ids: Vec<&str> = a.stories.iter().chain(&b.stories).chain(&c.stories).map(|s| s.id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 50);
}
