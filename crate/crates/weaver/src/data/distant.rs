//! Distant supervision: label a retrieved document with every token-level
//! occurrence of a known answer string, or drop it when none occurs.

use super::features::extract_features;
use super::tokenize::tokenize;
use super::{Example, ExampleParagraph, GoldSpan, Token};

/// Character budget per document; text beyond it is discarded before
/// matching.
pub const MAX_DOC_CHARS: usize = 100_000;

/// Running tally of labeling outcomes across a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DistantReport {
    pub labeled: usize,
    pub dropped: usize,
}

fn matches_at(context: &[Token], i: usize, answer: &[Token]) -> bool {
    context.len() - i >= answer.len()
        && answer
            .iter()
            .enumerate()
            .all(|(k, a)| context[i + k].lower == a.lower)
}

/// Label one document (as a list of paragraphs) against the answer
/// strings of a question. Returns an example whose golds are *all*
/// case-insensitive token-sequence matches across all paragraphs, or
/// `None` (counted in `report.dropped`) when nothing matches.
pub fn distant_supervision_label(
    question: &str,
    answers: &[&str],
    paragraphs: &[&str],
    id: &str,
    report: &mut DistantReport,
) -> Option<Example> {
    let question_tokens = tokenize(question);
    assert!(!question_tokens.is_empty(), "distant labeling needs a question");
    let answer_tokens: Vec<Vec<Token>> = answers
        .iter()
        .map(|a| tokenize(a))
        .filter(|t| !t.is_empty())
        .collect();

    // Apply the character budget across paragraphs in order.
    let mut budget = MAX_DOC_CHARS;
    let mut kept: Vec<String> = Vec::new();
    for p in paragraphs {
        if budget == 0 {
            break;
        }
        let chars = p.chars().count();
        if chars <= budget {
            kept.push((*p).to_string());
            budget -= chars;
        } else {
            let cut: String = p.chars().take(budget).collect();
            kept.push(cut);
            budget = 0;
        }
    }

    let mut out_paragraphs = Vec::new();
    let mut golds = Vec::new();
    for (pi, text) in kept.iter().enumerate() {
        let tokens = tokenize(text);
        for ans in &answer_tokens {
            for i in 0..tokens.len() {
                if matches_at(&tokens, i, ans) {
                    let end = i + ans.len() - 1;
                    golds.push(GoldSpan {
                        paragraph: pi,
                        start: i,
                        end,
                        text: text[tokens[i].start..tokens[end].end].to_string(),
                    });
                }
            }
        }
        let features = extract_features(&question_tokens, &tokens, None);
        out_paragraphs.push(ExampleParagraph {
            text: text.clone(),
            tokens,
            features,
        });
    }
    if golds.is_empty() {
        report.dropped += 1;
        return None;
    }
    report.labeled += 1;
    let example = Example {
        id: id.to_string(),
        question: question_tokens,
        paragraphs: out_paragraphs,
        golds,
        candidates: None,
    };
    example.validate();
    Some(example)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_every_case_insensitive_occurrence() {
        let mut rep = DistantReport::default();
        let ex = distant_supervision_label(
            "who founded it?",
            &["John Smith"],
            &["john smith met a smith.", "Later JOHN SMITH returned."],
            "d1",
            &mut rep,
        )
        .unwrap();
        assert_eq!(rep, DistantReport { labeled: 1, dropped: 0 });
        assert_eq!(ex.golds.len(), 2);
        assert_eq!(ex.golds[0].paragraph, 0);
        assert_eq!((ex.golds[0].start, ex.golds[0].end), (0, 1));
        assert_eq!(ex.golds[0].text, "john smith");
        assert_eq!(ex.golds[1].paragraph, 1);
        assert_eq!(ex.golds[1].text, "JOHN SMITH");
    }

    #[test]
    fn no_match_drops_the_document_and_counts_it() {
        let mut rep = DistantReport::default();
        let out =
            distant_supervision_label("q?", &["absent"], &["nothing relevant here"], "d2", &mut rep);
        assert!(out.is_none());
        assert_eq!(rep, DistantReport { labeled: 0, dropped: 1 });
    }

    #[test]
    fn matching_is_token_level_not_substring() {
        let mut rep = DistantReport::default();
        // "smith" alone must not match inside "smithsonian".
        let out = distant_supervision_label(
            "q?",
            &["smith"],
            &["the smithsonian museum"],
            "d3",
            &mut rep,
        );
        assert!(out.is_none());
    }

    #[test]
    fn document_is_truncated_to_the_character_budget() {
        let mut rep = DistantReport::default();
        // The answer sits just beyond 100k characters.
        let filler = "x ".repeat(MAX_DOC_CHARS / 2);
        let doc = format!("{filler}answer");
        let out = distant_supervision_label("q?", &["answer"], &[&doc], "d4", &mut rep);
        assert!(out.is_none(), "match beyond the budget must be invisible");
        // Inside the budget it is found.
        let doc2 = format!("answer {filler}");
        let ex = distant_supervision_label("q?", &["answer"], &[&doc2], "d5", &mut rep).unwrap();
        assert_eq!(ex.golds[0].start, 0);
        assert!(
            ex.paragraphs[0].text.chars().count() <= MAX_DOC_CHARS,
            "kept text exceeds the budget"
        );
    }

    #[test]
    fn multiple_answer_strings_all_contribute() {
        let mut rep = DistantReport::default();
        let ex = distant_supervision_label(
            "q?",
            &["red", "crimson"],
            &["the red door and the crimson wall"],
            "d6",
            &mut rep,
        )
        .unwrap();
        let texts: Vec<&str> = ex.golds.iter().map(|g| g.text.as_str()).collect();
        assert_eq!(texts, vec!["red", "crimson"]);
    }
}
