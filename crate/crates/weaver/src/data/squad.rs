//! Ingestion for span-answer JSON datasets (the common v1.1 layout:
//! `data[].paragraphs[].qas[]` with character-offset answers).
//!
//! Character answer offsets are converted to byte offsets and snapped
//! outward to the covering token span, so an answer that starts or ends
//! mid-token labels the whole token. All listed answers are retained;
//! the first one is the training target.
//!
//! Two loaders share the alignment: [`load_squad_json`] yields
//! one-paragraph examples (the question's own context), while
//! [`load_squad_documents`] yields one example per question spanning
//! every paragraph of its article, for document-scale training and
//! evaluation.

use super::features::extract_features;
use super::tokenize::tokenize;
use super::{DataError, Example, ExampleParagraph, GoldSpan, Token};
use serde::Deserialize;
use std::path::Path;

#[derive(Deserialize)]
struct File {
    data: Vec<Article>,
}

#[derive(Deserialize)]
struct Article {
    #[serde(default)]
    #[allow(dead_code)]
    title: String,
    paragraphs: Vec<Paragraph>,
}

#[derive(Deserialize)]
struct Paragraph {
    context: String,
    #[serde(default)]
    qas: Vec<Qa>,
}

#[derive(Deserialize)]
struct Qa {
    id: String,
    question: String,
    answers: Vec<Answer>,
}

#[derive(Deserialize)]
struct Answer {
    text: String,
    answer_start: i64,
}

/// A tokenized paragraph with its char→byte table, ready for alignment.
struct Prepared {
    context: String,
    tokens: Vec<Token>,
    char_to_byte: Vec<usize>,
}

fn prepare(context: &str) -> Prepared {
    Prepared {
        context: context.to_string(),
        tokens: tokenize(context),
        // Byte offset of each char index, plus the end sentinel, for
        // converting the JSON's character offsets.
        char_to_byte: context
            .char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(context.len()))
            .collect(),
    }
}

/// Token span of one answer inside its paragraph, or a message naming
/// the problem.
fn align_answer(p: &Prepared, ans: &Answer) -> Result<(usize, usize), String> {
    let start_char = usize::try_from(ans.answer_start)
        .map_err(|_| format!("negative answer_start {}", ans.answer_start))?;
    let len_chars = ans.text.chars().count();
    if len_chars == 0 {
        return Err("empty answer text".to_string());
    }
    let end_char = start_char + len_chars;
    if end_char >= p.char_to_byte.len() {
        return Err(format!(
            "answer at chars {start_char}..{end_char} overruns the context"
        ));
    }
    let s = p.char_to_byte[start_char];
    let e = p.char_to_byte[end_char];
    // Snap outward: first token ending after the span starts, last token
    // starting before it ends.
    let start_tok = p.tokens.iter().position(|t| t.end > s);
    let end_tok = p.tokens.iter().rposition(|t| t.start < e);
    match (start_tok, end_tok) {
        (Some(a), Some(b)) if a <= b => Ok((a, b)),
        _ => Err(format!(
            "answer {:?} at char {start_char} does not cover any token",
            ans.text
        )),
    }
}

/// Gold spans of one question, all answers retained in order.
fn golds_for(
    qa: &Qa,
    p: &Prepared,
    paragraph: usize,
    bad: &dyn Fn(String) -> DataError,
) -> Result<Vec<GoldSpan>, DataError> {
    if p.tokens.is_empty() {
        return Err(bad("empty context".to_string()));
    }
    if qa.answers.is_empty() {
        return Err(bad("no answers listed".to_string()));
    }
    let mut golds = Vec::with_capacity(qa.answers.len());
    for ans in &qa.answers {
        let (start, end) = align_answer(p, ans).map_err(bad)?;
        golds.push(GoldSpan {
            paragraph,
            start,
            end,
            text: ans.text.clone(),
        });
    }
    Ok(golds)
}

fn parse_file(path: &Path) -> Result<(String, File), DataError> {
    let shown = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: shown.clone(),
        source,
    })?;
    let file: File = serde_json::from_str(&raw).map_err(|e| DataError::Malformed {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    Ok((shown, file))
}

/// Load every question of a SQuAD-format JSON file as a one-paragraph
/// example. Malformed records fail with the file path and record id.
pub fn load_squad_json(path: &Path) -> Result<Vec<Example>, DataError> {
    let (shown, file) = parse_file(path)?;
    let mut out = Vec::new();
    for article in file.data {
        for para in article.paragraphs {
            let prepared = prepare(&para.context);
            for qa in &para.qas {
                let bad = |message: String| DataError::BadRecord {
                    path: shown.clone(),
                    record: qa.id.clone(),
                    message,
                };
                let question = tokenize(&qa.question);
                if question.is_empty() {
                    return Err(bad("empty question".to_string()));
                }
                let golds = golds_for(qa, &prepared, 0, &bad)?;
                let features = extract_features(&question, &prepared.tokens, None);
                let example = Example {
                    id: qa.id.clone(),
                    question,
                    paragraphs: vec![ExampleParagraph {
                        text: prepared.context.clone(),
                        tokens: prepared.tokens.clone(),
                        features,
                    }],
                    golds,
                    candidates: None,
                };
                example.validate();
                out.push(example);
            }
        }
    }
    Ok(out)
}

/// Load every question as a whole-document example: `paragraphs` holds
/// every non-empty paragraph of the question's article (in order) and
/// the gold spans point into the question's own paragraph. Question
/// match features are computed per paragraph.
pub fn load_squad_documents(path: &Path) -> Result<Vec<Example>, DataError> {
    let (shown, file) = parse_file(path)?;
    let mut out = Vec::new();
    for article in file.data {
        let prepared: Vec<Prepared> = article
            .paragraphs
            .iter()
            .map(|p| prepare(&p.context))
            .collect();
        // Paragraphs with no tokens cannot be read; drop them and track
        // where the kept ones land.
        let kept: Vec<usize> = (0..prepared.len())
            .filter(|&i| !prepared[i].tokens.is_empty())
            .collect();
        let position_of = |original: usize| kept.iter().position(|&k| k == original);
        for (pi, para) in article.paragraphs.iter().enumerate() {
            for qa in &para.qas {
                let bad = |message: String| DataError::BadRecord {
                    path: shown.clone(),
                    record: qa.id.clone(),
                    message,
                };
                let question = tokenize(&qa.question);
                if question.is_empty() {
                    return Err(bad("empty question".to_string()));
                }
                let gold_paragraph = position_of(pi)
                    .ok_or_else(|| bad("empty context".to_string()))?;
                let golds = golds_for(qa, &prepared[pi], gold_paragraph, &bad)?;
                let paragraphs = kept
                    .iter()
                    .map(|&k| ExampleParagraph {
                        text: prepared[k].context.clone(),
                        tokens: prepared[k].tokens.clone(),
                        features: extract_features(&question, &prepared[k].tokens, None),
                    })
                    .collect();
                let example = Example {
                    id: qa.id.clone(),
                    question,
                    paragraphs,
                    golds,
                    candidates: None,
                };
                example.validate();
                out.push(example);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(json: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        std::fs::write(&path, json).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_and_aligns_a_simple_answer() {
        let (_d, path) = write(
            r#"{"data":[{"title":"T","paragraphs":[{"context":"Paris is the capital of France.",
                "qas":[{"id":"q1","question":"What is the capital of France?",
                        "answers":[{"text":"Paris","answer_start":0}]}]}]}]}"#,
        );
        let ex = load_squad_json(&path).unwrap();
        assert_eq!(ex.len(), 1);
        let g = ex[0].training_gold();
        assert_eq!((g.start, g.end), (0, 0));
        assert_eq!(ex[0].span_text(0, g.start, g.end), "Paris");
    }

    #[test]
    fn mid_token_offsets_snap_outward() {
        // Answer chars cover "aris is" — inside token 0 through token 1.
        let (_d, path) = write(
            r#"{"data":[{"paragraphs":[{"context":"Paris is big.",
                "qas":[{"id":"q","question":"where?",
                        "answers":[{"text":"aris is","answer_start":1}]}]}]}]}"#,
        );
        let ex = load_squad_json(&path).unwrap();
        let g = ex[0].training_gold();
        assert_eq!((g.start, g.end), (0, 1));
        assert_eq!(ex[0].span_text(0, g.start, g.end), "Paris is");
    }

    #[test]
    fn multiple_answers_are_all_retained_in_order() {
        let (_d, path) = write(
            r#"{"data":[{"paragraphs":[{"context":"one two three",
                "qas":[{"id":"q","question":"which?",
                        "answers":[{"text":"two","answer_start":4},
                                   {"text":"three","answer_start":8}]}]}]}]}"#,
        );
        let ex = load_squad_json(&path).unwrap();
        assert_eq!(ex[0].golds.len(), 2);
        assert_eq!(ex[0].golds[0].text, "two");
        assert_eq!(ex[0].golds[1].text, "three");
        assert_eq!((ex[0].golds[1].start, ex[0].golds[1].end), (2, 2));
    }

    #[test]
    fn multibyte_characters_keep_offsets_straight() {
        // "café" holds a 2-byte char before the answer.
        let (_d, path) = write(
            r#"{"data":[{"paragraphs":[{"context":"Le café ouvre demain.",
                "qas":[{"id":"q","question":"quand?",
                        "answers":[{"text":"demain","answer_start":14}]}]}]}]}"#,
        );
        let ex = load_squad_json(&path).unwrap();
        let g = ex[0].training_gold();
        assert_eq!(ex[0].span_text(0, g.start, g.end), "demain");
    }

    #[test]
    fn paragraphs_without_questions_are_fine() {
        let (_d, path) = write(
            r#"{"data":[{"paragraphs":[{"context":"Nothing asked here."}]}]}"#,
        );
        assert!(load_squad_json(&path).unwrap().is_empty());
    }

    #[test]
    fn overrunning_answer_names_path_and_record() {
        let (_d, path) = write(
            r#"{"data":[{"paragraphs":[{"context":"short",
                "qas":[{"id":"bad-7","question":"?","answers":[{"text":"shorter","answer_start":0}]}]}]}]}"#,
        );
        let err = load_squad_json(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad-7"), "missing record id: {msg}");
        assert!(msg.contains("data.json"), "missing path: {msg}");
    }

    #[test]
    fn broken_json_reports_the_file() {
        let (_d, path) = write("{not json");
        let err = load_squad_json(&path).unwrap_err();
        assert!(err.to_string().contains("data.json"));
    }

    const TWO_PARA_ARTICLE: &str = r#"{"data":[{"title":"A","paragraphs":[
        {"context":"The river Seine crosses Paris.",
         "qas":[{"id":"q-river","question":"Which river crosses Paris?",
                 "answers":[{"text":"Seine","answer_start":10}]}]},
        {"context":"The Eiffel Tower opened in 1889.",
         "qas":[{"id":"q-year","question":"When did the tower open?",
                 "answers":[{"text":"1889","answer_start":27}]}]}]}]}"#;

    #[test]
    fn document_loading_spans_the_whole_article() {
        let (_d, path) = write(TWO_PARA_ARTICLE);
        let ex = load_squad_documents(&path).unwrap();
        assert_eq!(ex.len(), 2);
        for e in &ex {
            assert_eq!(e.paragraphs.len(), 2, "every question sees both paragraphs");
        }
        // golds point into the question's own paragraph
        assert_eq!(ex[0].training_gold().paragraph, 0);
        assert_eq!(ex[1].training_gold().paragraph, 1);
        let g = ex[1].training_gold();
        assert_eq!(ex[1].span_text(1, g.start, g.end), "1889");
        // features differ per question even on the shared paragraph:
        // "tower" appears in question 2 only.
        assert_ne!(
            ex[0].paragraphs[1].features.data(),
            ex[1].paragraphs[1].features.data()
        );
    }

    #[test]
    fn document_loading_on_single_paragraph_articles_matches_paragraph_loading() {
        let (_d, path) = write(
            r#"{"data":[{"paragraphs":[{"context":"Oslo is the capital of Norway.",
                "qas":[{"id":"q","question":"What is the capital of Norway?",
                        "answers":[{"text":"Oslo","answer_start":0}]}]}]}]}"#,
        );
        let doc = load_squad_documents(&path).unwrap();
        let para = load_squad_json(&path).unwrap();
        assert_eq!(doc.len(), 1);
        assert_eq!(doc[0].paragraphs.len(), 1);
        assert_eq!(doc[0].golds, para[0].golds);
        assert_eq!(doc[0].paragraphs[0].features.data(), para[0].paragraphs[0].features.data());
    }

    #[test]
    fn empty_sibling_paragraphs_are_dropped_with_indices_remapped() {
        let (_d, path) = write(
            r#"{"data":[{"paragraphs":[
                {"context":"   "},
                {"context":"Bern is in Switzerland.",
                 "qas":[{"id":"q","question":"Where is Bern?",
                         "answers":[{"text":"Switzerland","answer_start":11}]}]}]}]}"#,
        );
        let ex = load_squad_documents(&path).unwrap();
        assert_eq!(ex[0].paragraphs.len(), 1, "blank paragraph dropped");
        assert_eq!(ex[0].training_gold().paragraph, 0, "gold index remapped");
    }
}
