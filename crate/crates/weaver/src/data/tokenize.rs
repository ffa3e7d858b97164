//! Whitespace tokenizer with punctuation detachment.
//!
//! Text is split on whitespace; each chunk then sheds leading and
//! trailing punctuation characters as single-char tokens, while interior
//! punctuation (hyphens, apostrophes, dots in abbreviations) stays
//! attached. Every token records its byte offsets into the source, so
//! the original text between any two tokens is recoverable.

use super::Token;

/// Anything that is neither alphanumeric nor whitespace counts as
/// punctuation for edge detachment.
fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Tokenize `text`. Offsets are byte positions, non-overlapping and
/// strictly increasing in emission order.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chunk_start = None::<usize>;
    // Walk char boundaries; close a chunk at each whitespace run or EOF.
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                split_chunk(text, s, i, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
        if iter.peek().is_none() {
            if let Some(s) = chunk_start.take() {
                split_chunk(text, s, text.len(), &mut out);
            }
        }
    }
    out
}

/// Emit tokens for one whitespace-free chunk `text[start..end]`.
fn split_chunk(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let chunk = &text[start..end];
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let mut lo = 0; // index into chars
    let mut hi = chars.len(); // one past the last interior char
    while lo < hi && is_punct(chars[lo].1) {
        lo += 1;
    }
    while hi > lo && is_punct(chars[hi - 1].1) {
        hi -= 1;
    }
    let byte_at = |k: usize| -> usize {
        if k < chars.len() {
            start + chars[k].0
        } else {
            end
        }
    };
    for k in 0..lo {
        push(text, byte_at(k), byte_at(k + 1), out);
    }
    if lo < hi {
        push(text, byte_at(lo), byte_at(hi), out);
    }
    for k in hi..chars.len() {
        push(text, byte_at(k), byte_at(k + 1), out);
    }
}

fn push(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let t = &text[start..end];
    out.push(Token {
        text: t.to_string(),
        lower: t.to_lowercase(),
        start,
        end,
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(toks: &[Token]) -> Vec<&str> {
        toks.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn splits_on_whitespace_and_detaches_edge_punctuation() {
        let toks = tokenize("Hello, world! (really)");
        assert_eq!(
            texts(&toks),
            vec!["Hello", ",", "world", "!", "(", "really", ")"]
        );
    }

    #[test]
    fn keeps_interior_hyphens_and_apostrophes() {
        let toks = tokenize("state-of-the-art isn't plug-and-play.");
        assert_eq!(
            texts(&toks),
            vec!["state-of-the-art", "isn't", "plug-and-play", "."]
        );
    }

    #[test]
    fn all_punctuation_chunk_becomes_single_char_tokens() {
        let toks = tokenize("wait -- what?!");
        assert_eq!(texts(&toks), vec!["wait", "-", "-", "what", "?", "!"]);
    }

    #[test]
    fn offsets_recover_source_slices() {
        let src = "A  b,\tc-d!";
        let toks = tokenize(src);
        for t in &toks {
            assert_eq!(&src[t.start..t.end], t.text);
        }
    }

    #[test]
    fn offsets_are_monotone_and_gaps_are_whitespace() {
        let src = "One two,  three!\nFour's \"quoted\" U.S. 3.5-inch";
        let toks = tokenize(src);
        let mut prev_end = 0usize;
        let mut rebuilt = String::new();
        for t in &toks {
            assert!(t.start >= prev_end, "overlapping offsets");
            let gap = &src[prev_end..t.start];
            assert!(
                gap.chars().all(char::is_whitespace),
                "non-whitespace gap {gap:?}"
            );
            rebuilt.push_str(gap);
            rebuilt.push_str(&t.text);
            prev_end = t.end;
        }
        rebuilt.push_str(&src[prev_end..]);
        assert_eq!(rebuilt, src, "concatenation must reproduce the source");
    }

    #[test]
    fn interior_dots_stay_attached() {
        let toks = tokenize("U.S. grew 3.5 percent");
        assert_eq!(texts(&toks), vec!["U.S", ".", "grew", "3.5", "percent"]);
    }

    #[test]
    fn lowercase_field_is_cached() {
        let toks = tokenize("MiXeD CASE");
        assert_eq!(toks[0].lower, "mixed");
        assert_eq!(toks[1].lower, "case");
    }

    #[test]
    fn empty_and_whitespace_only_inputs_yield_nothing() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t\n ").is_empty());
    }

    #[test]
    fn unicode_punctuation_detaches() {
        let toks = tokenize("«quoted» —dash");
        assert_eq!(texts(&toks), vec!["«", "quoted", "»", "—", "dash"]);
    }
}
