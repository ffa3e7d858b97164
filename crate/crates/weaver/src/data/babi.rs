//! Ingestion for bAbI-style story files.
//!
//! The format numbers lines within a story, restarting at 1 for each new
//! story. Question lines carry tab-separated question text, answer word,
//! and supporting line ids; all other lines are facts. Each question
//! becomes an example whose context is the story's facts so far,
//! optionally prefixed by the sorted union of training answer words so
//! the answer is always present as a context token.

use super::features::extract_features;
use super::tokenize::tokenize;
use super::{DataError, Example, ExampleParagraph, GoldSpan};
use std::collections::BTreeSet;
use std::path::Path;

/// Default learned-embedding width for story tasks.
pub const BABI_EMBED_DIM: usize = 128;

#[derive(Debug)]
struct Record {
    facts: Vec<String>,
    question: String,
    answer: String,
    id: String,
}

#[derive(Debug)]
pub struct BabiDataset {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    /// Sorted union of training answer words (empty when prepending is
    /// off); every context starts with these tokens.
    pub prepend: Vec<String>,
    /// Embeddings for story tasks are learned at this width.
    pub embed_dim: usize,
}

fn parse_file(path: &Path) -> Result<Vec<Record>, DataError> {
    let shown = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut records = Vec::new();
    let mut facts: Vec<String> = Vec::new();
    let mut story = 0usize;
    let mut last_number = 0u64;
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| DataError::BadRecord {
            path: shown.clone(),
            record: format!("line {}", lineno + 1),
            message,
        };
        let (num_str, rest) = line
            .split_once(' ')
            .ok_or_else(|| bad("missing line number".to_string()))?;
        let number: u64 = num_str
            .parse()
            .map_err(|_| bad(format!("bad line number {num_str:?}")))?;
        if number <= last_number || number == 1 {
            // Numbering reset: a new story begins.
            facts.clear();
            story += 1;
        }
        last_number = number;
        if let Some((question, tail)) = rest.split_once('\t') {
            let mut parts = tail.split('\t');
            let answer = parts
                .next()
                .filter(|a| !a.is_empty())
                .ok_or_else(|| bad("question line without an answer".to_string()))?;
            if answer.contains(',') {
                return Err(bad(format!(
                    "list answer {answer:?} is not supported"
                )));
            }
            records.push(Record {
                facts: facts.clone(),
                question: question.trim().to_string(),
                answer: answer.trim().to_string(),
                id: format!("s{story}l{number}"),
            });
        } else {
            facts.push(rest.trim().to_string());
        }
    }
    Ok(records)
}

fn build_examples(
    records: Vec<Record>,
    prepend: &[String],
    path: &Path,
) -> Result<Vec<Example>, DataError> {
    let shown = path.display().to_string();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let bad = |message: String| DataError::BadRecord {
            path: shown.clone(),
            record: rec.id.clone(),
            message,
        };
        if rec.facts.is_empty() {
            return Err(bad("question before any fact".to_string()));
        }
        let mut context = String::new();
        for w in prepend {
            if !context.is_empty() {
                context.push(' ');
            }
            context.push_str(w);
        }
        for f in &rec.facts {
            if !context.is_empty() {
                context.push(' ');
            }
            context.push_str(f);
        }
        let tokens = tokenize(&context);
        let question = tokenize(&rec.question);
        let answer_lower = rec.answer.to_lowercase();
        let gold_pos = tokens
            .iter()
            .position(|t| t.lower == answer_lower)
            .ok_or_else(|| bad(format!("answer {:?} not found in the context", rec.answer)))?;
        let features = extract_features(&question, &tokens, None);
        let example = Example {
            id: rec.id,
            question,
            golds: vec![GoldSpan {
                paragraph: 0,
                start: gold_pos,
                end: gold_pos,
                text: rec.answer.clone(),
            }],
            paragraphs: vec![ExampleParagraph {
                text: context,
                tokens,
                features,
            }],
            candidates: None,
        };
        example.validate();
        out.push(example);
    }
    Ok(out)
}

/// Load a train/test pair of story files. With `answer_word_prepend` the
/// sorted union of *training* answers is prefixed to every context (both
/// splits), and the gold span is the first occurrence of the answer word
/// in the full context — which then always lands in the prefix region
/// for words that are answers in training.
pub fn load_babi(
    train_path: &Path,
    test_path: Option<&Path>,
    answer_word_prepend: bool,
) -> Result<BabiDataset, DataError> {
    let train_records = parse_file(train_path)?;
    let test_records = match test_path {
        Some(p) => parse_file(p)?,
        None => Vec::new(),
    };
    let prepend: Vec<String> = if answer_word_prepend {
        let set: BTreeSet<String> = train_records
            .iter()
            .map(|r| r.answer.to_lowercase())
            .collect();
        set.into_iter().collect()
    } else {
        Vec::new()
    };
    let train = build_examples(train_records, &prepend, train_path)?;
    let test = match test_path {
        Some(p) => build_examples(test_records, &prepend, p)?,
        None => Vec::new(),
    };
    Ok(BabiDataset {
        train,
        test,
        prepend,
        embed_dim: BABI_EMBED_DIM,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const STORY: &str = "\
1 Mary moved to the bathroom.
2 John went to the hallway.
3 Where is Mary?\tbathroom\t1
4 Daniel went back to the office.
5 Where is Daniel?\toffice\t4
1 Sandra moved to the garden.
2 Is Sandra in the garden?\tyes\t1
";

    /// Same stories without the yes/no question, whose answer only
    /// exists as a token once prepending is on.
    const STORY_PLAIN: &str = "\
1 Mary moved to the bathroom.
2 John went to the hallway.
3 Where is Mary?\tbathroom\t1
4 Daniel went back to the office.
5 Where is Daniel?\toffice\t4
1 Sandra moved to the garden.
2 Where is Sandra?\tgarden\t1
";

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.txt");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn facts_accumulate_and_questions_are_excluded_from_context() {
        let (_d, path) = write(STORY_PLAIN);
        let ds = load_babi(&path, None, false).unwrap();
        assert_eq!(ds.train.len(), 3);
        let second = &ds.train[1];
        let ctx_words: Vec<&str> = second.paragraphs[0]
            .tokens
            .iter()
            .map(|t| t.text.as_str())
            .collect();
        // Facts 1, 2, 4 — the earlier question line is not context.
        assert!(ctx_words.contains(&"office"));
        assert!(!ctx_words.contains(&"Where"));
        let g = second.training_gold();
        assert_eq!(second.paragraphs[0].tokens[g.start].lower, "office");
    }

    #[test]
    fn numbering_reset_starts_a_fresh_story() {
        let (_d, path) = write(STORY_PLAIN);
        let ds = load_babi(&path, None, false).unwrap();
        let third = &ds.train[2];
        let ctx = &third.paragraphs[0].text;
        assert!(ctx.contains("Sandra"));
        assert!(!ctx.contains("Mary"), "old story leaked: {ctx}");
    }

    #[test]
    fn gold_is_the_story_token_without_prepending() {
        let (_d, path) = write("1 Mary moved to the bathroom.\n2 Where is Mary?\tbathroom\t1\n");
        let ds = load_babi(&path, None, false).unwrap();
        let g = ds.train[0].training_gold();
        // "Mary moved to the bathroom ." → bathroom at index 4.
        assert_eq!((g.start, g.end), (4, 4));
        assert_eq!(g.text, "bathroom");
    }

    #[test]
    fn prepend_is_sorted_union_of_train_answers() {
        let (_d, path) = write(STORY);
        let ds = load_babi(&path, None, true).unwrap();
        assert_eq!(ds.prepend, vec!["bathroom", "office", "yes"]);
    }

    #[test]
    fn prepending_shifts_story_tokens_by_exactly_the_prefix_length() {
        let (_d, path) = write(STORY_PLAIN);
        let plain = load_babi(&path, None, false).unwrap();
        let pre = load_babi(&path, None, true).unwrap();
        let p = pre.prepend.len();
        for (a, b) in plain.train.iter().zip(&pre.train) {
            let at = &a.paragraphs[0].tokens;
            let bt = &b.paragraphs[0].tokens;
            assert_eq!(bt.len(), at.len() + p);
            for (i, t) in at.iter().enumerate() {
                assert_eq!(bt[i + p].text, t.text);
            }
        }
    }

    #[test]
    fn abstract_answers_land_in_the_prefix_with_prepending() {
        let (_d, path) = write(STORY);
        let ds = load_babi(&path, None, true).unwrap();
        let yes_q = &ds.train[2];
        let g = yes_q.training_gold();
        assert!(
            g.start < ds.prepend.len(),
            "'yes' should resolve inside the prepended word list"
        );
        assert_eq!(yes_q.paragraphs[0].tokens[g.start].lower, "yes");
    }

    #[test]
    fn test_split_reuses_train_prepend_list() {
        let (_d, train) = write(STORY);
        let dir = tempfile::tempdir().unwrap();
        let test = dir.path().join("test.txt");
        std::fs::write(&test, "1 Fred moved to the kitchen.\n2 Where is Fred?\tkitchen\t1\n")
            .unwrap();
        let ds = load_babi(&train, Some(&test), true).unwrap();
        // "kitchen" is not a train answer, so it is absent from the prefix
        // and the gold falls inside the story region.
        assert!(!ds.prepend.contains(&"kitchen".to_string()));
        let g = ds.test[0].training_gold();
        assert!(g.start >= ds.prepend.len());
    }

    #[test]
    fn missing_answer_word_is_an_ingestion_error() {
        let (_d, path) = write("1 Mary moved on.\n2 Where is Mary?\tbathroom\t1\n");
        let err = load_babi(&path, None, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bathroom"), "{msg}");
        assert!(msg.contains("task.txt"), "{msg}");
    }

    #[test]
    fn list_answers_are_rejected() {
        let (_d, path) = write("1 Mary got the milk.\n2 What is Mary carrying?\tmilk,football\t1\n");
        let err = load_babi(&path, None, false).unwrap_err();
        assert!(err.to_string().contains("list answer"));
    }
}
