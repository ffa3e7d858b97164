//! Answer scoring: normalization, exact match, token-level F1,
//! regex-based matching for curated gold patterns, and dataset-level
//! aggregation with per-example records.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("duplicate prediction id {0:?}")]
    DuplicatePrediction(String),
    #[error("prediction id {0:?} is not in the gold set")]
    UnknownPredictionId(String),
    #[error("bad answer pattern {pattern:?}: {message}")]
    BadPattern { pattern: String, message: String },
    #[error("predictions file: {0}")]
    BadPredictions(String),
}

/// How predictions are scored against golds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Normalized exact match plus token-bag F1 (span datasets).
    EmF1,
    /// Gold patterns must match the entire prediction.
    RegexFull,
    /// Gold patterns may match any substring of the prediction.
    RegexSub,
    /// Raw string equality (single-word answer datasets).
    Accuracy,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "em_f1" => Ok(EvalMode::EmF1),
            "regex_full" => Ok(EvalMode::RegexFull),
            "regex_sub" => Ok(EvalMode::RegexSub),
            "accuracy" => Ok(EvalMode::Accuracy),
            other => Err(format!(
                "unknown eval mode {other:?} (expected em_f1, regex_full, regex_sub or accuracy)"
            )),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExampleScore {
    pub id: String,
    pub prediction: String,
    /// The gold (or pattern) that achieved this example's F1.
    pub best_gold: String,
    pub em: f64,
    pub f1: f64,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    /// 100 · mean exact match.
    pub em: f64,
    /// 100 · mean F1.
    pub f1: f64,
    pub count: usize,
    pub examples: Vec<ExampleScore>,
}

// ── normalization and per-example scores ────────────────────────────────

fn article_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").unwrap())
}

fn punct_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").unwrap())
}

/// Lowercase, delete punctuation, drop whole-word articles, collapse
/// whitespace. Idempotent.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct = punct_re().replace_all(&lower, "");
    let no_articles = article_re().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn token_bag(text: &str) -> HashMap<&str, usize> {
    let mut bag = HashMap::new();
    for t in text.split_whitespace() {
        *bag.entry(t).or_insert(0) += 1;
    }
    bag
}

fn bag_f1(pred: &str, gold: &str) -> f64 {
    let p = token_bag(pred);
    let g = token_bag(gold);
    let np: usize = p.values().sum();
    let ng: usize = g.values().sum();
    if np == 0 && ng == 0 {
        return 1.0;
    }
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let overlap: usize = p
        .iter()
        .map(|(t, &c)| c.min(*g.get(t).unwrap_or(&0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / np as f64;
    let recall = overlap as f64 / ng as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Score one prediction against all golds: exact match on normalized
/// strings, F1 as the best token-bag score. Returns (em, f1) in {0,1} ×
/// [0,1] and the index of the gold achieving the F1.
pub fn em_f1(prediction: &str, golds: &[String]) -> (f64, f64, usize) {
    assert!(!golds.is_empty(), "em_f1 needs at least one gold");
    let pred = normalize_answer(prediction);
    let mut em = 0.0;
    let mut best_f1 = -1.0f64;
    let mut best_idx = 0;
    for (i, gold) in golds.iter().enumerate() {
        let gold = normalize_answer(gold);
        if pred == gold {
            em = 1.0;
        }
        let f1 = bag_f1(&pred, &gold);
        if f1 > best_f1 {
            best_f1 = f1;
            best_idx = i;
        }
    }
    (em, best_f1.max(em), best_idx)
}

/// Test `pattern` against a prediction: in full-span mode the pattern
/// must cover the entire (trimmed) prediction; otherwise any substring
/// match counts.
pub fn regex_em(prediction: &str, pattern: &str, full_span: bool) -> Result<bool, EvalError> {
    let bad = |e: regex::Error| EvalError::BadPattern {
        pattern: pattern.to_string(),
        message: e.to_string(),
    };
    let pred = prediction.trim();
    if full_span {
        let re = Regex::new(&format!("^(?:{pattern})$")).map_err(bad)?;
        Ok(re.is_match(pred))
    } else {
        let re = Regex::new(pattern).map_err(bad)?;
        Ok(re.is_match(pred))
    }
}

// ── dataset-level aggregation ───────────────────────────────────────────

/// Parse a predictions file — a JSON object of id → answer — keeping
/// duplicate keys so they can be rejected.
pub fn parse_predictions_json(text: &str) -> Result<Vec<(String, String)>, EvalError> {
    struct Pairs;
    impl<'de> serde::de::Visitor<'de> for Pairs {
        type Value = Vec<(String, String)>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a JSON object mapping example id to answer string")
        }

        fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some((k, v)) = map.next_entry::<String, String>()? {
                out.push((k, v));
            }
            Ok(out)
        }
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let pairs = serde::de::Deserializer::deserialize_map(&mut de, Pairs)
        .map_err(|e| EvalError::BadPredictions(e.to_string()))?;
    de.end().map_err(|e| EvalError::BadPredictions(e.to_string()))?;
    Ok(pairs)
}

/// Score a full prediction set against the gold set. Gold entries define
/// the example universe; examples without a prediction score 0. In the
/// regex modes gold strings are patterns; in accuracy mode golds and
/// predictions compare as raw trimmed strings.
pub fn evaluate_dataset(
    predictions: &[(String, String)],
    golds: &[(String, Vec<String>)],
    mode: EvalMode,
) -> Result<EvalResult, EvalError> {
    assert!(!golds.is_empty(), "evaluate_dataset: empty gold set");
    let mut gold_ids = HashSet::new();
    for (id, answers) in golds {
        assert!(
            gold_ids.insert(id.as_str()),
            "evaluate_dataset: duplicate gold id {id:?}"
        );
        assert!(!answers.is_empty(), "evaluate_dataset: gold {id:?} has no answers");
    }
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for (id, answer) in predictions {
        if !gold_ids.contains(id.as_str()) {
            return Err(EvalError::UnknownPredictionId(id.clone()));
        }
        if by_id.insert(id, answer).is_some() {
            return Err(EvalError::DuplicatePrediction(id.clone()));
        }
    }

    let mut examples = Vec::with_capacity(golds.len());
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;
    for (id, answers) in golds {
        let prediction = by_id.get(id.as_str()).copied();
        let (em, f1, best_idx) = match (prediction, mode) {
            (None, _) => (0.0, 0.0, 0),
            (Some(p), EvalMode::EmF1) => em_f1(p, answers),
            (Some(p), EvalMode::Accuracy) => {
                let hit = answers.iter().position(|a| a.trim() == p.trim());
                let em = if hit.is_some() { 1.0 } else { 0.0 };
                (em, em, hit.unwrap_or(0))
            }
            (Some(p), EvalMode::RegexFull | EvalMode::RegexSub) => {
                let full = mode == EvalMode::RegexFull;
                let mut hit = None;
                for (i, pattern) in answers.iter().enumerate() {
                    if regex_em(p, pattern, full)? {
                        hit = Some(i);
                        break;
                    }
                }
                let em = if hit.is_some() { 1.0 } else { 0.0 };
                (em, em, hit.unwrap_or(0))
            }
        };
        em_sum += em;
        f1_sum += f1;
        examples.push(ExampleScore {
            id: id.clone(),
            prediction: prediction.unwrap_or("").to_string(),
            best_gold: answers[best_idx].clone(),
            em,
            f1,
        });
    }
    let count = golds.len();
    Ok(EvalResult {
        em: 100.0 * em_sum / count as f64,
        f1: 100.0 * f1_sum / count as f64,
        count,
        examples,
    })
}

impl EvalResult {
    /// Per-example report: one TSV row per example.
    pub fn report_tsv(&self) -> String {
        let mut out = String::from("id\tprediction\tgold\tem\tf1\n");
        for e in &self.examples {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.0}\t{:.4}\n",
                e.id, e.prediction, e.best_gold, e.em, e.f1
            ));
        }
        out
    }

    /// Aggregate report as JSON.
    pub fn report_json(&self) -> String {
        serde_json::json!({
            "em": self.em,
            "f1": self.f1,
            "count": self.count,
        })
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{below, Purpose, Streams};

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Cat!"), "cat");
        assert_eq!(normalize_answer("a  b"), "b");
        assert_eq!(normalize_answer("  An  apple,  please.  "), "apple please");
        assert_eq!(normalize_answer("U.S.A."), "usa");
        assert_eq!(normalize_answer("«Où?»"), "où");
    }

    #[test]
    fn normalization_is_idempotent_on_random_strings() {
        let mut rng = Streams::new(31).get(Purpose::Sample);
        let alphabet: Vec<char> =
            "abc the an a .,!?'\"- XYZ  ((()))«»".chars().collect();
        for _ in 0..500 {
            let len = below(&mut rng, 30);
            let s: String = (0..len).map(|_| alphabet[below(&mut rng, alphabet.len())]).collect();
            let once = normalize_answer(&s);
            assert_eq!(normalize_answer(&once), once, "not idempotent on {s:?}");
        }
    }

    #[test]
    fn em_f1_examples() {
        let (em, f1, _) = em_f1("The Cat", &["cat".into()]);
        assert_eq!((em, f1), (1.0, 1.0));
        let (em, f1, _) = em_f1("green apple", &["apple".into()]);
        assert_eq!(em, 0.0);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        let (em, f1, _) = em_f1("verbatim", &["verbatim".into()]);
        assert_eq!((em, f1), (1.0, 1.0));
    }

    #[test]
    fn empty_prediction_rules() {
        // Both sides normalize to empty → full credit.
        let (em, f1, _) = em_f1("the", &["a".into()]);
        assert_eq!((em, f1), (1.0, 1.0));
        // Empty vs non-empty → zero.
        let (em, f1, _) = em_f1("", &["cat".into()]);
        assert_eq!((em, f1), (0.0, 0.0));
    }

    #[test]
    fn f1_never_below_em_and_gold_order_is_irrelevant() {
        let mut rng = Streams::new(32).get(Purpose::Sample);
        let words = ["cat", "dog", "the", "blue", "sky"];
        let phrase = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
            let len = 1 + below(rng, 3);
            (0..len).map(|_| words[below(rng, words.len())]).collect::<Vec<_>>().join(" ")
        };
        for _ in 0..300 {
            let pred = phrase(&mut rng);
            let golds = vec![phrase(&mut rng), phrase(&mut rng)];
            let (em, f1, _) = em_f1(&pred, &golds);
            assert!(f1 >= em, "f1 {f1} < em {em}");
            assert!((0.0..=1.0).contains(&f1));
            let reversed: Vec<String> = golds.iter().rev().cloned().collect();
            let (em2, f12, _) = em_f1(&pred, &reversed);
            assert_eq!((em, f1), (em2, f12));
        }
    }

    #[test]
    fn prediction_whitespace_is_ignored() {
        let (em, f1, _) = em_f1("  cat \t", &["cat".into()]);
        assert_eq!((em, f1), (1.0, 1.0));
    }

    #[test]
    fn regex_modes_match_the_documented_examples() {
        assert!(regex_em("Paris", "Paris|paris", true).unwrap());
        assert!(!regex_em("in Paris", "Paris|paris", true).unwrap());
        assert!(regex_em("in Paris", "Paris|paris", false).unwrap());
        assert!(regex_em("42", "^42$", true).unwrap());
        assert!(regex_em("42", "^42$", false).unwrap());
    }

    #[test]
    fn invalid_pattern_is_a_configuration_error() {
        let err = regex_em("x", "(unclosed", true).unwrap_err();
        assert!(matches!(err, EvalError::BadPattern { .. }));
        assert!(err.to_string().contains("(unclosed"));
    }

    fn gold(id: &str, answers: &[&str]) -> (String, Vec<String>) {
        (id.to_string(), answers.iter().map(|s| s.to_string()).collect())
    }

    fn pred(id: &str, answer: &str) -> (String, String) {
        (id.to_string(), answer.to_string())
    }

    #[test]
    fn all_correct_and_half_correct_aggregates() {
        let golds = vec![gold("1", &["x"]), gold("2", &["y"])];
        let preds = vec![pred("1", "x"), pred("2", "y")];
        let r = evaluate_dataset(&preds, &golds, EvalMode::EmF1).unwrap();
        assert_eq!((r.em, r.f1, r.count), (100.0, 100.0, 2));

        let golds = vec![gold("1", &["x"]), gold("2", &["y"]), gold("3", &["z"]), gold("4", &["w"])];
        let preds = vec![pred("1", "x"), pred("2", "y"), pred("3", "q"), pred("4", "v")];
        let r = evaluate_dataset(&preds, &golds, EvalMode::EmF1).unwrap();
        assert_eq!((r.em, r.f1), (50.0, 50.0));
    }

    #[test]
    fn hand_scored_fixture_table() {
        let golds = vec![
            gold("1", &["cat"]),
            gold("2", &["apple"]),
            gold("3", &["b c d"]),
            gold("4", &["paris france"]),
            gold("5", &["42.0"]),
            gold("6", &["New York", "York City"]),
            gold("7", &["something"]),
            gold("8", &["answer"]),
            gold("9", &["barack obama"]),
            gold("10", &["the"]),
        ];
        let preds = vec![
            pred("1", "the cat"),       // em 1, f1 1
            pred("2", "green apple"),   // em 0, f1 2/3
            pred("3", "a b c"),         // em 0, f1 4/5
            pred("4", "Paris, France"), // em 1, f1 1
            pred("5", "42"),            // em 0, f1 0 ("42.0" → "420")
            pred("6", "New York City"), // em 0, f1 4/5
            pred("7", ""),              // em 0, f1 0
            pred("8", "An answer"),     // em 1, f1 1
            pred("9", "obama barack"),  // em 0, f1 1 (bag ignores order)
            pred("10", "the the the"),  // both normalize empty → em 1, f1 1
        ];
        let r = evaluate_dataset(&preds, &golds, EvalMode::EmF1).unwrap();
        assert!((r.em - 40.0).abs() < 1e-9, "em {}", r.em);
        let expect_f1 = 100.0 * (109.0 / 15.0) / 10.0;
        assert!((r.f1 - expect_f1).abs() < 1e-9, "f1 {} vs {expect_f1}", r.f1);
        let nine = r.examples.iter().find(|e| e.id == "9").unwrap();
        assert_eq!((nine.em, nine.f1), (0.0, 1.0));
    }

    #[test]
    fn missing_predictions_score_zero_without_error() {
        let golds = vec![gold("1", &["x"]), gold("2", &["y"])];
        let preds = vec![pred("1", "x")];
        let r = evaluate_dataset(&preds, &golds, EvalMode::EmF1).unwrap();
        assert_eq!((r.em, r.count), (50.0, 2));
        assert_eq!(r.examples[1].prediction, "");
    }

    #[test]
    fn duplicate_prediction_ids_are_a_contract_error() {
        let golds = vec![gold("1", &["x"])];
        let preds = vec![pred("1", "x"), pred("1", "y")];
        let err = evaluate_dataset(&preds, &golds, EvalMode::EmF1).unwrap_err();
        assert!(matches!(err, EvalError::DuplicatePrediction(_)));
    }

    #[test]
    fn unknown_prediction_id_is_rejected() {
        let golds = vec![gold("1", &["x"])];
        let preds = vec![pred("2", "x")];
        let err = evaluate_dataset(&preds, &golds, EvalMode::EmF1).unwrap_err();
        assert!(matches!(err, EvalError::UnknownPredictionId(_)));
    }

    #[test]
    fn accuracy_mode_equals_em_on_single_tokens() {
        let golds = vec![gold("1", &["kitchen"]), gold("2", &["garden"]), gold("3", &["office"])];
        let preds = vec![pred("1", "kitchen"), pred("2", "hallway"), pred("3", "office")];
        let acc = evaluate_dataset(&preds, &golds, EvalMode::Accuracy).unwrap();
        let emf = evaluate_dataset(&preds, &golds, EvalMode::EmF1).unwrap();
        assert_eq!(acc.em, emf.em);
        assert_eq!(acc.em, acc.f1);
    }

    #[test]
    fn regex_dataset_modes_differ_on_embedded_answers() {
        let golds = vec![gold("1", &["Paris|paris"])];
        let preds = vec![pred("1", "in Paris")];
        let full = evaluate_dataset(&preds, &golds, EvalMode::RegexFull).unwrap();
        let sub = evaluate_dataset(&preds, &golds, EvalMode::RegexSub).unwrap();
        assert_eq!(full.em, 0.0);
        assert_eq!(sub.em, 100.0);
    }

    #[test]
    fn predictions_json_parses_and_flags_duplicates() {
        let pairs = parse_predictions_json(r#"{"a": "x", "b": "y"}"#).unwrap();
        assert_eq!(pairs.len(), 2);
        let dup = parse_predictions_json(r#"{"a": "x", "a": "y"}"#).unwrap();
        assert_eq!(dup.len(), 2, "duplicates must survive parsing to be rejected later");
        let golds = vec![gold("a", &["x"])];
        assert!(matches!(
            evaluate_dataset(&dup, &golds, EvalMode::EmF1),
            Err(EvalError::DuplicatePrediction(_))
        ));
        assert!(parse_predictions_json("[1,2]").is_err());
    }

    #[test]
    fn reports_round_trip_their_fields() {
        let golds = vec![gold("1", &["x"]), gold("2", &["y z"])];
        let preds = vec![pred("1", "x"), pred("2", "y")];
        let r = evaluate_dataset(&preds, &golds, EvalMode::EmF1).unwrap();
        let tsv = r.report_tsv();
        assert_eq!(tsv.lines().count(), 3);
        assert!(tsv.starts_with("id\tprediction\tgold\tem\tf1\n"));
        let json: serde_json::Value = serde_json::from_str(&r.report_json()).unwrap();
        assert_eq!(json["count"], 2);
        assert!((json["em"].as_f64().unwrap() - 50.0).abs() < 1e-9);
    }
}
