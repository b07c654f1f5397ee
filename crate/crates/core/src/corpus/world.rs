//! Synthetic story worlds whose coherence is machine-checkable.
//!
//! A world is a ring of locations, a pool of characters, items with fixed
//! home locations, and location-bound activities. A story introduces a small
//! cast and then narrates events. With probability `coherence` each event is
//! drawn from those whose preconditions hold in the current world state;
//! otherwise it is drawn from the cast's whole event pool. Invalid events
//! still apply their effects, so the state stays well defined.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{Corpus, Story};
use crate::error::{bail, Error, Result};
use crate::evaluation::diversity::{PosLexicon, PosTag};
use crate::noise::{derive_seed, Noise, SeededNoise};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

const NAMES: &[&str] = &[
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "henry", "ivy", "jack", "kate", "liam", "mia", "noah",
    "olive", "paul", "quinn", "rose", "sam", "tara", "uma", "victor", "wendy", "xavier", "yara", "zack",
];
const LOCATIONS: &[&str] = &[
    "kitchen", "garden", "library", "hall", "cellar", "attic", "bedroom", "study", "porch", "barn", "forest", "river",
    "market", "bakery", "church", "tower", "harbor", "bridge", "field", "cave",
];
const ITEMS: &[&str] = &[
    "key", "lamp", "book", "coin", "map", "rope", "knife", "cup", "bell", "candle", "apple", "shovel", "hammer",
    "letter", "ring", "flute", "basket", "blanket", "sword", "mirror",
];
const ACTIVITIES: &[(&str, &str)] = &[
    ("cooks", "soup"),
    ("waters", "roses"),
    ("reads", "poem"),
    ("sweeps", "floor"),
    ("stacks", "barrels"),
    ("opens", "trunk"),
    ("makes", "bed"),
    ("writes", "essay"),
    ("paints", "fence"),
    ("feeds", "horse"),
    ("chops", "wood"),
    ("catches", "fish"),
    ("sells", "eggs"),
    ("bakes", "bread"),
    ("rings", "chimes"),
    ("climbs", "stairs"),
    ("ties", "boat"),
    ("crosses", "stream"),
    ("plants", "seeds"),
    ("lights", "torch"),
    ("washes", "dishes"),
    ("trims", "hedge"),
    ("dusts", "shelves"),
    ("mends", "coat"),
    ("brews", "tea"),
    ("folds", "sheets"),
    ("studies", "charts"),
    ("polishes", "boots"),
    ("milks", "goat"),
    ("gathers", "berries"),
];
const FUNCTION_WORDS: &[&str] = &[".", "the", "to", "in", "is", "walks", "picks", "up", "drops", "gives", "greets"];

#[derive(Debug, Clone, PartialEq)]
pub struct StoryWorldConfig {
    /// Characters in the world pool.
    pub n_entities: usize,
    pub n_locations: usize,
    pub n_items: usize,
    /// Location-bound activities.
    pub n_event_templates: usize,
    /// Characters appearing in each story.
    pub cast_size: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Probability that an event is drawn from the currently valid events.
    pub coherence: f64,
    /// Fixes the world layout (item homes); stories are drawn with a separate seed.
    pub world_seed: u64,
    pub vocab_capacity: usize,
}

impl Default for StoryWorldConfig {
    fn default() -> Self {
        Self {
            n_entities: 8,
            n_locations: 6,
            n_items: 6,
            n_event_templates: 12,
            cast_size: 2,
            min_sentences: 25,
            max_sentences: 75,
            coherence: 1.0,
            world_seed: 17,
            vocab_capacity: 500,
        }
    }
}

impl StoryWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities == 0 || self.n_locations < 2 || self.n_items == 0 || self.n_event_templates == 0 {
            bail!(InvalidArgument, "world needs characters, at least 2 locations, items and activities");
        }
        if self.min_sentences < 3 || self.max_sentences < self.min_sentences {
            bail!(InvalidArgument, "story length range [{}, {}] invalid (min >= 3)", self.min_sentences, self.max_sentences);
        }
        if !(0.0..=1.0).contains(&self.coherence) {
            bail!(InvalidArgument, "coherence {} outside [0, 1]", self.coherence);
        }
        if self.cast_size == 0 || self.cast_size > self.n_entities || self.cast_size >= self.min_sentences {
            bail!(InvalidArgument, "cast size {} invalid", self.cast_size);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Intro { who: usize, at: usize },
    Walk { who: usize, to: usize },
    PickUp { who: usize, item: usize },
    Drop { who: usize, item: usize },
    Give { who: usize, item: usize, to: usize },
    Greet { who: usize, whom: usize },
    Activity { who: usize, activity: usize },
}

const KIND_WEIGHTS: [f64; 6] = [2.0, 1.0, 1.0, 1.0, 1.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    At(usize),
    Held(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    char_loc: Vec<Option<usize>>,
    items: Vec<Place>,
}

/// A world layout plus its vocabulary.
#[derive(Debug, Clone)]
pub struct World {
    pub config: StoryWorldConfig,
    pub names: Vec<String>,
    pub locations: Vec<String>,
    pub items: Vec<String>,
    /// `(verb, object)` per activity.
    pub activities: Vec<(String, String)>,
    pub activity_location: Vec<usize>,
    pub item_home: Vec<usize>,
    pub vocabulary: Vocabulary,
}

fn word_list(base: &[&str], n: usize, stem: &str) -> Vec<String> {
    (0..n).map(|i| base.get(i).map_or_else(|| format!("{stem}{i}"), |w| w.to_string())).collect()
}

impl World {
    pub fn new(config: &StoryWorldConfig) -> Result<Self> {
        config.validate()?;
        let names = word_list(NAMES, config.n_entities, "person");
        let locations = word_list(LOCATIONS, config.n_locations, "place");
        let items = word_list(ITEMS, config.n_items, "thing");
        let activities: Vec<(String, String)> = (0..config.n_event_templates)
            .map(|i| match ACTIVITIES.get(i) {
                Some((v, o)) => (v.to_string(), o.to_string()),
                None => (format!("does{i}"), format!("task{i}")),
            })
            .collect();
        let activity_location = (0..config.n_event_templates).map(|i| i % config.n_locations).collect();
        let mut layout = SeededNoise::new(derive_seed(config.world_seed, 0x5eed));
        let item_home = (0..config.n_items).map(|_| layout.index(config.n_locations)).collect();

        let mut vocabulary = Vocabulary::new();
        let words = FUNCTION_WORDS
            .iter()
            .map(|w| w.to_string())
            .chain(names.iter().cloned())
            .chain(locations.iter().cloned())
            .chain(items.iter().cloned())
            .chain(activities.iter().flat_map(|(v, o)| [v.clone(), o.clone()]));
        for w in words {
            vocabulary.insert(&w);
        }
        if vocabulary.len() > config.vocab_capacity {
            return Err(Error::VocabularyOverflow { needed: vocabulary.len(), capacity: config.vocab_capacity });
        }
        Ok(Self { config: config.clone(), names, locations, items, activities, activity_location, item_home, vocabulary })
    }

    pub fn initial_state(&self) -> WorldState {
        WorldState {
            char_loc: vec![None; self.names.len()],
            items: self.item_home.iter().map(|&l| Place::At(l)).collect(),
        }
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        let n = self.locations.len();
        a != b && ((a + 1) % n == b || (b + 1) % n == a)
    }

    /// Whether the event's preconditions hold in `state`.
    pub fn is_valid(&self, state: &WorldState, e: &Event) -> bool {
        let loc = |c: usize| state.char_loc[c];
        match *e {
            Event::Intro { who, at } => loc(who).is_none_or(|l| l == at),
            Event::Walk { who, to } => loc(who).is_some_and(|l| self.adjacent(l, to)),
            Event::PickUp { who, item } => loc(who).is_some_and(|l| state.items[item] == Place::At(l)),
            Event::Drop { who, item } => state.items[item] == Place::Held(who),
            Event::Give { who, item, to } => {
                who != to && state.items[item] == Place::Held(who) && loc(who).is_some() && loc(who) == loc(to)
            }
            Event::Greet { who, whom } => who != whom && loc(who).is_some() && loc(who) == loc(whom),
            Event::Activity { who, activity } => loc(who) == Some(self.activity_location[activity]),
        }
    }

    /// Applies the event's effects regardless of validity.
    pub fn apply(&self, state: &mut WorldState, e: &Event) {
        match *e {
            Event::Intro { who, at } | Event::Walk { who, to: at } => state.char_loc[who] = Some(at),
            Event::PickUp { who, item } => state.items[item] = Place::Held(who),
            Event::Drop { who, item } => {
                state.items[item] = Place::At(state.char_loc[who].unwrap_or(self.item_home[item]));
            }
            Event::Give { item, to, .. } => state.items[item] = Place::Held(to),
            Event::Greet { .. } | Event::Activity { .. } => {}
        }
    }

    pub fn render(&self, e: &Event) -> TokenSequence {
        let v = &self.vocabulary;
        let words: Vec<&str> = match *e {
            Event::Intro { who, at } => vec![&self.names[who], "is", "in", "the", &self.locations[at], "."],
            Event::Walk { who, to } => vec![&self.names[who], "walks", "to", "the", &self.locations[to], "."],
            Event::PickUp { who, item } => vec![&self.names[who], "picks", "up", "the", &self.items[item], "."],
            Event::Drop { who, item } => vec![&self.names[who], "drops", "the", &self.items[item], "."],
            Event::Give { who, item, to } => {
                vec![&self.names[who], "gives", "the", &self.items[item], "to", &self.names[to], "."]
            }
            Event::Greet { who, whom } => vec![&self.names[who], "greets", &self.names[whom], "."],
            Event::Activity { who, activity } => {
                let (verb, obj) = &self.activities[activity];
                vec![&self.names[who], verb, "the", obj, "."]
            }
        };
        v.encode(words)
    }

    /// Inverse of [`World::render`]; `None` for token sequences no template produces.
    pub fn parse(&self, tokens: &[TokenId]) -> Option<Event> {
        let w: Vec<&str> = tokens.iter().map(|&t| self.vocabulary.token(t)).collect();
        let find = |list: &[String], s: &str| list.iter().position(|x| x == s);
        let who = find(&self.names, w.first()?)?;
        match w.as_slice() {
            [_, "is", "in", "the", l, "."] => Some(Event::Intro { who, at: find(&self.locations, l)? }),
            [_, "walks", "to", "the", l, "."] => Some(Event::Walk { who, to: find(&self.locations, l)? }),
            [_, "picks", "up", "the", i, "."] => Some(Event::PickUp { who, item: find(&self.items, i)? }),
            [_, "drops", "the", i, "."] => Some(Event::Drop { who, item: find(&self.items, i)? }),
            [_, "gives", "the", i, "to", n, "."] => {
                Some(Event::Give { who, item: find(&self.items, i)?, to: find(&self.names, n)? })
            }
            [_, "greets", n, "."] => Some(Event::Greet { who, whom: find(&self.names, n)? }),
            [_, verb, "the", obj, "."] => {
                let a = self.activities.iter().position(|(v, o)| v == verb && o == obj)?;
                Some(Event::Activity { who, activity: a })
            }
            _ => None,
        }
    }

    /// Every event the cast could narrate, grouped by kind (intro excluded).
    fn pool(&self, cast: &[usize]) -> [Vec<Event>; 6] {
        let mut kinds: [Vec<Event>; 6] = Default::default();
        for &who in cast {
            for to in 0..self.locations.len() {
                kinds[0].push(Event::Walk { who, to });
            }
            for item in 0..self.items.len() {
                kinds[1].push(Event::PickUp { who, item });
                kinds[2].push(Event::Drop { who, item });
                for &to in cast.iter().filter(|&&c| c != who) {
                    kinds[3].push(Event::Give { who, item, to });
                }
            }
            for &whom in cast.iter().filter(|&&c| c != who) {
                kinds[4].push(Event::Greet { who, whom });
            }
            for activity in 0..self.activities.len() {
                kinds[5].push(Event::Activity { who, activity });
            }
        }
        kinds
    }

    fn draw(kinds: &[Vec<Event>; 6], noise: &mut impl Noise) -> Option<Event> {
        let total: f64 = kinds.iter().zip(KIND_WEIGHTS).filter(|(k, _)| !k.is_empty()).map(|(_, w)| w).sum();
        if total == 0.0 {
            return None;
        }
        let mut u = noise.uniform() * total;
        let mut last = None;
        for (k, w) in kinds.iter().zip(KIND_WEIGHTS) {
            if k.is_empty() {
                continue;
            }
            last = Some(k);
            if u < w {
                return Some(k[noise.index(k.len())]);
            }
            u -= w;
        }
        last.map(|k| k[noise.index(k.len())])
    }

    /// Probability that a draw from the whole pool is valid in `state`.
    pub fn chance_valid(&self, state: &WorldState, cast: &[usize]) -> f64 {
        let kinds = self.pool(cast);
        let total: f64 = kinds.iter().zip(KIND_WEIGHTS).filter(|(k, _)| !k.is_empty()).map(|(_, w)| w).sum();
        kinds
            .iter()
            .zip(KIND_WEIGHTS)
            .filter(|(k, _)| !k.is_empty())
            .map(|(k, w)| {
                let ok = k.iter().filter(|e| self.is_valid(state, e)).count();
                w / total * ok as f64 / k.len() as f64
            })
            .sum()
    }

    pub fn generate_story(&self, id: String, noise: &mut impl Noise) -> Story {
        let cfg = &self.config;
        let len = cfg.min_sentences + noise.index(cfg.max_sentences - cfg.min_sentences + 1);
        let mut cast: Vec<usize> = Vec::with_capacity(cfg.cast_size);
        while cast.len() < cfg.cast_size {
            let c = noise.index(self.names.len());
            if !cast.contains(&c) {
                cast.push(c);
            }
        }
        let mut state = self.initial_state();
        let mut sentences = Vec::with_capacity(len);
        for &who in &cast {
            let e = Event::Intro { who, at: noise.index(self.locations.len()) };
            self.apply(&mut state, &e);
            sentences.push(self.render(&e));
        }
        let pool = self.pool(&cast);
        while sentences.len() < len {
            let coherent = noise.uniform() < cfg.coherence;
            let e = if coherent {
                let valid: [Vec<Event>; 6] =
                    core::array::from_fn(|k| pool[k].iter().copied().filter(|e| self.is_valid(&state, e)).collect());
                Self::draw(&valid, noise)
            } else {
                None
            };
            let e = e.or_else(|| Self::draw(&pool, noise)).expect("event pool is never empty");
            self.apply(&mut state, &e);
            sentences.push(self.render(&e));
        }
        Story { id, sentences, source: String::from("storyworld") }
    }

    /// Replays a story and reports, for each sentence after the first, whether
    /// it was valid in the state left by the sentences before it.
    pub fn check_transitions(&self, story: &Story) -> Vec<bool> {
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(story.len().saturating_sub(1));
        for (i, s) in story.sentences.iter().enumerate() {
            match self.parse(s) {
                Some(e) => {
                    if i > 0 {
                        out.push(self.is_valid(&state, &e));
                    }
                    self.apply(&mut state, &e);
                }
                None if i > 0 => out.push(false),
                None => {}
            }
        }
        out
    }

    /// Cast of a story: every character named as an actor.
    pub fn cast_of(&self, story: &Story) -> Vec<usize> {
        let mut cast = Vec::new();
        for s in &story.sentences {
            let who = match self.parse(s) {
                Some(
                    Event::Intro { who, .. }
                    | Event::Walk { who, .. }
                    | Event::PickUp { who, .. }
                    | Event::Drop { who, .. }
                    | Event::Give { who, .. }
                    | Event::Greet { who, .. }
                    | Event::Activity { who, .. },
                ) => who,
                None => continue,
            };
            if !cast.contains(&who) {
                cast.push(who);
            }
        }
        cast
    }

    /// State after replaying the first `n` sentences of a story.
    pub fn state_after(&self, story: &Story, n: usize) -> WorldState {
        let mut state = self.initial_state();
        for s in story.sentences.iter().take(n) {
            if let Some(e) = self.parse(s) {
                self.apply(&mut state, &e);
            }
        }
        state
    }

    /// Part-of-speech tags for the world's vocabulary.
    pub fn pos_lexicon(&self) -> PosLexicon {
        let mut lex = PosLexicon::default();
        for w in ["is", "walks", "picks", "drops", "gives", "greets"] {
            lex.insert(w, PosTag::Verb);
        }
        for w in [".", "the", "to", "in", "up"] {
            lex.insert(w, PosTag::Other);
        }
        for w in self.names.iter().chain(&self.locations).chain(&self.items) {
            lex.insert(w, PosTag::Noun);
        }
        for (v, o) in &self.activities {
            lex.insert(v, PosTag::Verb);
            lex.insert(o, PosTag::Noun);
        }
        lex
    }
}

/// Generates `n_stories` stories; deterministic in `(config, seed)`.
pub fn generate_story_world(config: &StoryWorldConfig, seed: u64, n_stories: usize) -> Result<Corpus> {
    let world = World::new(config)?;
    let stories = (0..n_stories)
        .map(|i| {
            let mut noise = SeededNoise::new(derive_seed(seed, i as u64));
            world.generate_story(format!("world{}-{seed}-{i}", config.world_seed), &mut noise)
        })
        .collect();
    Ok(Corpus { name: format!("storyworld-{seed}"), stories, vocabulary: world.vocabulary.clone() })
}
