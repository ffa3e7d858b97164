//! Synthetic story tasks for fast end-to-end checks.
//!
//! Two generators, both deterministic in the seed:
//!
//! * single-fact — stories of "X moved to the L ." facts; the question
//!   asks where a mentioned person is and the answer is the location in
//!   that person's **last** movement fact.
//! * two-hop — adds "X took the O ." facts (and decoy "the O is in the
//!   L ." statements about other objects); the question asks where an
//!   object is, so the answer requires chaining who holds the object
//!   with where that person moved.

use super::features::extract_features;
use super::tokenize::tokenize;
use super::{Example, ExampleParagraph, GoldSpan};
use crate::rng::{below, shuffle, Purpose, Streams};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    SingleFact,
    TwoHop,
}

const PERSONS: &[&str] = &[
    "mary", "john", "daniel", "sandra", "bill", "fred", "julie", "emma", "oscar", "priya",
];
const BASE_LOCATIONS: &[&str] = &[
    "kitchen", "garden", "office", "bathroom", "bedroom", "hallway", "cellar", "porch", "attic",
    "garage", "studio", "library", "balcony", "pantry",
];
const OBJECTS: &[&str] = &["apple", "football", "milk", "book", "key", "ball"];

/// Smallest location inventory the two-hop generator can partition into
/// mover destinations and decoy-only locations (9 movers + 5 statics).
const TWO_HOP_MIN_LOCS: usize = 14;

/// Answer vocabulary: `vocab_size` location words (at least 2), the
/// base list extended with generated names when it runs out.
fn locations(vocab_size: usize) -> Vec<String> {
    let n = vocab_size.max(2);
    let mut locs: Vec<String> = BASE_LOCATIONS.iter().take(n).map(|s| s.to_string()).collect();
    for i in locs.len()..n {
        locs.push(format!("place{i}"));
    }
    locs
}

#[derive(Clone, Copy, Debug)]
enum Fact {
    /// "{person} moved to the {loc} ." — 6 tokens, location at +4.
    Move { person: usize, loc: usize },
    /// "{person} took the {obj} ." — 5 tokens.
    Take { person: usize, obj: usize },
    /// "the {obj} is in the {loc} ." — 7 tokens, location at +5.
    Static { obj: usize, loc: usize },
}

impl Fact {
    fn token_len(&self) -> usize {
        match self {
            Fact::Move { .. } => 6,
            Fact::Take { .. } => 5,
            Fact::Static { .. } => 7,
        }
    }

    fn render(&self, locs: &[String]) -> String {
        match *self {
            Fact::Move { person, loc } => {
                format!("{} moved to the {} .", PERSONS[person], locs[loc])
            }
            Fact::Take { person, obj } => format!("{} took the {} .", PERSONS[person], OBJECTS[obj]),
            Fact::Static { obj, loc } => {
                format!("the {} is in the {} .", OBJECTS[obj], locs[loc])
            }
        }
    }
}

struct Story {
    facts: Vec<Fact>,
    question: String,
    /// Index of the answer location in the location list.
    answer_loc: usize,
    /// Token index of the gold location within the rendered context.
    gold_token: usize,
}

fn gold_token_for(facts: &[Fact], target: usize) -> usize {
    let offset: usize = facts[..target].iter().map(Fact::token_len).sum();
    offset
        + match facts[target] {
            Fact::Move { .. } => 4,
            Fact::Static { .. } => 5,
            Fact::Take { .. } => unreachable!("take facts carry no location"),
        }
}

fn gen_single(rng: &mut ChaCha8Rng, locs: &[String]) -> Story {
    let n = 2 + below(rng, 7); // 2..=8 facts
    let facts: Vec<Fact> = (0..n)
        .map(|_| Fact::Move {
            person: below(rng, PERSONS.len()),
            loc: below(rng, locs.len()),
        })
        .collect();
    let asked = match facts[below(rng, n)] {
        Fact::Move { person, .. } => person,
        _ => unreachable!(),
    };
    let last = facts
        .iter()
        .rposition(|f| matches!(f, Fact::Move { person, .. } if *person == asked))
        .unwrap();
    let answer_loc = match facts[last] {
        Fact::Move { loc, .. } => loc,
        _ => unreachable!(),
    };
    Story {
        question: format!("where is {} ?", PERSONS[asked]),
        answer_loc,
        gold_token: gold_token_for(&facts, last),
        facts,
    }
}

fn gen_two_hop(rng: &mut ChaCha8Rng, locs: &[String]) -> Story {
    // Distinct persons, each moving exactly once and each to a distinct
    // location. The question names only the object, so the answer is
    // reachable solely through the object → holder → holder's location
    // chain; with seven to nine movers in a shuffled telling there is no
    // positional or frequency shortcut, and the location inventory is
    // partitioned so no decoy statement ever mentions a mover's location.
    assert!(locs.len() >= TWO_HOP_MIN_LOCS, "two-hop stories need {TWO_HOP_MIN_LOCS} locations");
    let n_person = 7 + below(rng, 3); // 7..=9
    let mut person_pool: Vec<usize> = (0..PERSONS.len()).collect();
    shuffle(rng, &mut person_pool);
    let persons = &person_pool[..n_person];
    let holder = persons[0];

    let mut loc_pool: Vec<usize> = (0..locs.len()).collect();
    shuffle(rng, &mut loc_pool);

    let mut object_pool: Vec<usize> = (0..OBJECTS.len()).collect();
    shuffle(rng, &mut object_pool);
    let asked_obj = object_pool[0];

    let mut facts = Vec::new();
    for (i, &p) in persons.iter().enumerate() {
        facts.push(Fact::Move {
            person: p,
            loc: loc_pool[i],
        });
    }
    facts.push(Fact::Take {
        person: holder,
        obj: asked_obj,
    });
    // Decoys: further objects either held by distractor persons or
    // sitting in locations no one moved to, so a take fact cannot be
    // singled out by shape alone and a stray location word never
    // duplicates the answer.
    let n_decoys = 3 + below(rng, 3); // 3..=5
    let mut spare_locs = loc_pool[n_person..].iter().copied();
    for d in 0..n_decoys {
        let obj = object_pool[1 + d];
        if below(rng, 2) == 0 {
            facts.push(Fact::Take {
                person: persons[1 + below(rng, n_person - 1)],
                obj,
            });
        } else {
            let loc = spare_locs.next().expect("location inventory exhausted");
            facts.push(Fact::Static { obj, loc });
        }
    }
    shuffle(rng, &mut facts);

    let holder_move = facts
        .iter()
        .position(|f| matches!(f, Fact::Move { person, .. } if *person == holder))
        .unwrap();
    let answer_loc = match facts[holder_move] {
        Fact::Move { loc, .. } => loc,
        _ => unreachable!(),
    };
    Story {
        question: format!("where is the {} ?", OBJECTS[asked_obj]),
        answer_loc,
        gold_token: gold_token_for(&facts, holder_move),
        facts,
    }
}

fn build(story: Story, locs: &[String], id: String) -> Example {
    let context: String = story
        .facts
        .iter()
        .map(|f| f.render(locs))
        .collect::<Vec<_>>()
        .join(" ");
    let tokens = tokenize(&context);
    let question = tokenize(&story.question);
    let answer = locs[story.answer_loc].clone();
    debug_assert_eq!(tokens[story.gold_token].text, answer);
    let features = extract_features(&question, &tokens, None);
    let example = Example {
        id,
        question,
        paragraphs: vec![ExampleParagraph {
            text: context,
            tokens,
            features,
        }],
        golds: vec![GoldSpan {
            paragraph: 0,
            start: story.gold_token,
            end: story.gold_token,
            text: answer,
        }],
        candidates: None,
    };
    example.validate();
    example
}

fn gen_split(
    kind: SynthKind,
    count: usize,
    locs: &[String],
    rng: &mut ChaCha8Rng,
    tag: &str,
) -> Vec<Example> {
    (0..count)
        .map(|i| {
            let story = match kind {
                SynthKind::SingleFact => gen_single(rng, locs),
                SynthKind::TwoHop => gen_two_hop(rng, locs),
            };
            build(story, locs, format!("synth-{tag}-{i}"))
        })
        .collect()
}

/// Generate `count` training examples and `count/5` (at least 1) test
/// examples. Identical arguments give byte-identical datasets. Two-hop
/// stories partition the location inventory between movers and decoys,
/// so their vocabulary is raised to that floor when `vocab_size` is
/// smaller.
pub fn synth_task_generate(
    kind: SynthKind,
    count: usize,
    vocab_size: usize,
    seed: u64,
) -> (Vec<Example>, Vec<Example>) {
    assert!(count > 0, "need at least one example");
    let locs = locations(match kind {
        SynthKind::SingleFact => vocab_size,
        SynthKind::TwoHop => vocab_size.max(TWO_HOP_MIN_LOCS),
    });
    let streams = Streams::new(seed);
    let train = gen_split(kind, count, &locs, &mut streams.get_sub(Purpose::Synth, 0), "train");
    let test = gen_split(
        kind,
        (count / 5).max(1),
        &locs,
        &mut streams.get_sub(Purpose::Synth, 1),
        "test",
    );
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Replay the rendered facts and answer the question independently
    /// of the generator's bookkeeping.
    fn replay(ex: &Example) -> String {
        let toks: Vec<&str> = ex.paragraphs[0]
            .tokens
            .iter()
            .map(|t| t.text.as_str())
            .collect();
        let mut person_loc: HashMap<&str, &str> = HashMap::new();
        let mut object_holder: HashMap<&str, &str> = HashMap::new();
        let mut object_loc: HashMap<&str, &str> = HashMap::new();
        for sent in toks.split(|t| *t == ".") {
            if sent.is_empty() {
                continue;
            }
            match sent {
                [p, "moved", "to", "the", l] => {
                    person_loc.insert(p, l);
                }
                [p, "took", "the", o] => {
                    object_holder.insert(o, p);
                }
                ["the", o, "is", "in", "the", l] => {
                    object_loc.insert(o, l);
                }
                other => panic!("unparseable fact {other:?}"),
            }
        }
        let q: Vec<&str> = ex.question.iter().map(|t| t.text.as_str()).collect();
        match q.as_slice() {
            ["where", "is", p, "?"] => person_loc[p].to_string(),
            ["where", "is", "the", o, "?"] => {
                let holder = object_holder[o];
                person_loc[holder].to_string()
            }
            other => panic!("unparseable question {other:?}"),
        }
    }

    #[test]
    fn single_fact_answers_match_fact_replay() {
        let (train, test) = synth_task_generate(SynthKind::SingleFact, 200, 6, 11);
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 40);
        for ex in train.iter().chain(&test) {
            assert_eq!(replay(ex), ex.training_gold().text, "example {}", ex.id);
            let g = ex.training_gold();
            assert_eq!(ex.paragraphs[0].tokens[g.start].text, g.text);
        }
    }

    #[test]
    fn two_hop_answers_match_fact_replay() {
        let (train, test) = synth_task_generate(SynthKind::TwoHop, 200, 6, 13);
        for ex in train.iter().chain(&test) {
            assert_eq!(replay(ex), ex.training_gold().text, "example {}", ex.id);
        }
    }

    #[test]
    fn two_hop_questions_never_name_the_holder() {
        let (train, _) = synth_task_generate(SynthKind::TwoHop, 100, 6, 17);
        for ex in train {
            let q = &ex.question;
            assert_eq!(q[2].text, "the", "question must ask about an object: {}", ex.id);
            assert!(OBJECTS.contains(&q[3].text.as_str()));
        }
    }

    #[test]
    fn single_fact_story_lengths_stay_in_range() {
        let (train, _) = synth_task_generate(SynthKind::SingleFact, 300, 6, 5);
        for ex in train {
            let periods = ex.paragraphs[0]
                .tokens
                .iter()
                .filter(|t| t.text == ".")
                .count();
            assert!((2..=8).contains(&periods), "{} facts", periods);
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let (a_train, a_test) = synth_task_generate(SynthKind::TwoHop, 50, 8, 42);
        let (b_train, b_test) = synth_task_generate(SynthKind::TwoHop, 50, 8, 42);
        for (a, b) in a_train.iter().zip(&b_train).chain(a_test.iter().zip(&b_test)) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.paragraphs[0].text, b.paragraphs[0].text);
            assert_eq!(a.golds[0], b.golds[0]);
        }
        let (c_train, _) = synth_task_generate(SynthKind::TwoHop, 50, 8, 43);
        assert!(
            a_train.iter().zip(&c_train).any(|(a, c)| a.paragraphs[0].text != c.paragraphs[0].text),
            "different seeds should differ"
        );
    }

    #[test]
    fn vocab_size_controls_the_answer_inventory() {
        let (train, _) = synth_task_generate(SynthKind::SingleFact, 300, 3, 9);
        let mut seen: Vec<String> = train.iter().map(|e| e.training_gold().text.clone()).collect();
        seen.sort();
        seen.dedup();
        assert!(seen.len() <= 3);
        assert!(seen.iter().all(|l| BASE_LOCATIONS[..3].contains(&l.as_str())));
        let big = locations(16);
        assert_eq!(big.len(), 16);
        assert_eq!(big[15], "place15");
    }

    #[test]
    fn answers_vary_across_examples() {
        let (train, _) = synth_task_generate(SynthKind::SingleFact, 100, 6, 21);
        let distinct: std::collections::HashSet<&str> =
            train.iter().map(|e| e.training_gold().text.as_str()).collect();
        assert!(distinct.len() >= 4, "answer distribution collapsed: {distinct:?}");
    }
}
