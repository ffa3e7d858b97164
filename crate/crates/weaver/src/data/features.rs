//! Per-token extra features for context tokens.
//!
//! Every context token gets a fixed-width feature vector: two binary
//! exact-match flags (original-case and lowercased match against any
//! question token), a term-frequency value, and — when an annotation
//! sidecar is supplied — one-hot POS and NER blocks. The width is
//! constant for a given run so the grid input stays rectangular.

use super::{DataError, Token};
use crate::tensor::Tensor;
use std::collections::HashSet;

/// Fixed tag inventories for the optional one-hot blocks. Tags outside
/// the inventory encode as all-zero.
#[derive(Clone, Debug, Default)]
pub struct TagInventory {
    pub pos: Vec<String>,
    pub ner: Vec<String>,
}

/// Per-token tags parsed from a sidecar, aligned with context tokens.
#[derive(Clone, Debug)]
pub struct SidecarTags {
    pub pos: Vec<String>,
    pub ner: Vec<String>,
}

/// Feature width for a run: 3 base features plus the one-hot blocks.
pub fn feature_width(inventory: Option<&TagInventory>) -> usize {
    3 + inventory.map_or(0, |inv| inv.pos.len() + inv.ner.len())
}

/// Build the [n, feature_width] matrix for `context` against `question`.
pub fn extract_features(
    question: &[Token],
    context: &[Token],
    tags: Option<(&SidecarTags, &TagInventory)>,
) -> Tensor<f32> {
    let width = feature_width(tags.map(|(_, inv)| inv));
    let n = context.len();
    let q_orig: HashSet<&str> = question.iter().map(|t| t.text.as_str()).collect();
    let q_lower: HashSet<&str> = question.iter().map(|t| t.lower.as_str()).collect();
    let mut data = vec![0.0f32; n * width];
    for (j, tok) in context.iter().enumerate() {
        let row = &mut data[j * width..(j + 1) * width];
        if q_orig.contains(tok.text.as_str()) {
            row[0] = 1.0;
        }
        if q_lower.contains(tok.lower.as_str()) {
            row[1] = 1.0;
        }
        let count = context.iter().filter(|c| c.lower == tok.lower).count();
        row[2] = count as f32 / n as f32;
        if let Some((side, inv)) = tags {
            if let Some(p) = inv.pos.iter().position(|t| *t == side.pos[j]) {
                row[3 + p] = 1.0;
            }
            if let Some(p) = inv.ner.iter().position(|t| *t == side.ner[j]) {
                row[3 + inv.pos.len() + p] = 1.0;
            }
        }
    }
    Tensor::new(vec![n, width], data)
}

/// Parse a TSV sidecar (`token<TAB>POS<TAB>NER` per line, blank lines
/// ignored) and check it aligns one-to-one with `context`. `doc` names
/// the document in errors.
pub fn load_sidecar(text: &str, context: &[Token], doc: &str) -> Result<SidecarTags, DataError> {
    let mut pos = Vec::new();
    let mut ner = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::BadRecord {
                path: doc.to_string(),
                record: format!("sidecar line {}", lineno + 1),
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let idx = pos.len();
        if idx >= context.len() {
            return Err(DataError::BadRecord {
                path: doc.to_string(),
                record: format!("sidecar line {}", lineno + 1),
                message: format!("more sidecar rows than the {} context tokens", context.len()),
            });
        }
        if fields[0] != context[idx].text {
            return Err(DataError::BadRecord {
                path: doc.to_string(),
                record: format!("sidecar line {}", lineno + 1),
                message: format!(
                    "sidecar token {:?} does not match context token {:?}",
                    fields[0], context[idx].text
                ),
            });
        }
        pos.push(fields[1].to_string());
        ner.push(fields[2].to_string());
    }
    if pos.len() != context.len() {
        return Err(DataError::BadRecord {
            path: doc.to_string(),
            record: "sidecar".to_string(),
            message: format!(
                "sidecar has {} rows but the context has {} tokens",
                pos.len(),
                context.len()
            ),
        });
    }
    Ok(SidecarTags { pos, ner })
}

#[cfg(test)]
mod tests {
    use super::super::tokenize::tokenize;
    use super::*;

    #[test]
    fn exact_match_flags_distinguish_case() {
        let q = tokenize("Who saw Paris");
        let c = tokenize("paris Paris berlin");
        let f = extract_features(&q, &c, None);
        assert_eq!(f.shape(), &[3, 3]);
        // "paris": no original-case match, lowercase match.
        assert_eq!(f.at(&[0, 0]), 0.0);
        assert_eq!(f.at(&[0, 1]), 1.0);
        // "Paris": both.
        assert_eq!(f.at(&[1, 0]), 1.0);
        assert_eq!(f.at(&[1, 1]), 1.0);
        // "berlin": neither.
        assert_eq!(f.at(&[2, 0]), 0.0);
        assert_eq!(f.at(&[2, 1]), 0.0);
    }

    #[test]
    fn term_frequency_matches_hand_computation() {
        let q = tokenize("x");
        let c = tokenize("a a b");
        let f = extract_features(&q, &c, None);
        let tf: Vec<f32> = (0..3).map(|j| f.at(&[j, 2])).collect();
        assert_eq!(tf, vec![2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn term_frequency_is_case_insensitive() {
        let q = tokenize("x");
        let c = tokenize("Dog dog");
        let f = extract_features(&q, &c, None);
        assert_eq!(f.at(&[0, 2]), 1.0);
        assert_eq!(f.at(&[1, 2]), 1.0);
    }

    #[test]
    fn one_hot_blocks_from_sidecar() {
        let q = tokenize("who");
        let c = tokenize("Mary ran");
        let inv = TagInventory {
            pos: vec!["NN".into(), "VB".into()],
            ner: vec!["PER".into()],
        };
        let side = load_sidecar("Mary\tNN\tPER\nran\tVB\tO\n", &c, "doc").unwrap();
        let f = extract_features(&q, &c, Some((&side, &inv)));
        assert_eq!(f.shape(), &[2, 3 + 2 + 1]);
        // Mary: POS one-hot at NN, NER one-hot at PER.
        assert_eq!(f.at(&[0, 3]), 1.0);
        assert_eq!(f.at(&[0, 4]), 0.0);
        assert_eq!(f.at(&[0, 5]), 1.0);
        // ran: POS VB, NER "O" outside the inventory stays all-zero.
        assert_eq!(f.at(&[1, 3]), 0.0);
        assert_eq!(f.at(&[1, 4]), 1.0);
        assert_eq!(f.at(&[1, 5]), 0.0);
    }

    #[test]
    fn width_is_fixed_by_inventory() {
        assert_eq!(feature_width(None), 3);
        let inv = TagInventory {
            pos: vec!["A".into(); 4],
            ner: vec!["B".into(); 2],
        };
        assert_eq!(feature_width(Some(&inv)), 9);
    }

    #[test]
    fn sidecar_token_mismatch_is_an_error_naming_the_document() {
        let c = tokenize("Mary ran");
        let err = load_sidecar("Mary\tNN\tPER\nwalked\tVB\tO\n", &c, "wiki-42").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("wiki-42"), "error should name the document: {msg}");
        assert!(msg.contains("walked"), "error should show the bad token: {msg}");
    }

    #[test]
    fn sidecar_length_mismatch_is_an_error() {
        let c = tokenize("Mary ran fast");
        let err = load_sidecar("Mary\tNN\tPER\n", &c, "doc-7").unwrap_err();
        assert!(err.to_string().contains("doc-7"));
    }
}
