//! Canonical text measurement used by every length check in the crate.

/// Number of maximal whitespace-separated tokens.
///
/// Punctuation attached to a token stays part of it, so `"parked."` is one word.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Number of sentences.
///
/// A sentence ends at `.`, `!` or `?` when the terminator is followed by
/// whitespace or the end of the text. A trailing segment without a terminator
/// still counts when it holds any non-whitespace character.
pub fn sentence_count(text: &str) -> usize {
    let mut count = 0;
    let mut has_content = false;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if !c.is_whitespace() {
            has_content = true;
        }
        if is_terminator(c) {
            let at_boundary = chars.peek().is_none_or(|next| next.is_whitespace());
            if at_boundary && has_content {
                count += 1;
                has_content = false;
            }
        }
    }
    if has_content {
        count += 1;
    }
    count
}
