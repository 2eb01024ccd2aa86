//! Token counting used for the core-memory budget, the compression reward and
//! dataset statistics. All three must agree, so every caller goes through the
//! same [`Tokenizer`].

/// Counts tokens in a piece of text.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;

    /// Returns the longest prefix of `text` holding at most `limit` tokens.
    fn truncate<'a>(&self, text: &'a str, limit: usize) -> &'a str;
}

/// Counts maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn truncate<'a>(&self, text: &'a str, limit: usize) -> &'a str {
        if limit == 0 {
            return "";
        }
        let mut seen = 0;
        let mut in_token = false;
        for (idx, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if in_token {
                    in_token = false;
                    if seen == limit {
                        return &text[..idx];
                    }
                }
            } else if !in_token {
                in_token = true;
                seen += 1;
            }
        }
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_runs() {
        let tok = WhitespaceTokenizer;
        assert_eq!(tok.count(""), 0);
        assert_eq!(tok.count("   \n\t "), 0);
        assert_eq!(tok.count("a b c"), 3);
        assert_eq!(tok.count("  Harry Potter author: J.K. Rowling\n"), 5);
    }

    #[test]
    fn truncate_keeps_prefix() {
        let tok = WhitespaceTokenizer;
        assert_eq!(tok.truncate("a b  c d", 2), "a b");
        assert_eq!(tok.truncate("a b", 5), "a b");
        assert_eq!(tok.truncate("a b", 0), "");
        assert_eq!(tok.truncate("  a   b c", 2), "  a   b");
        let cut = tok.truncate("one two three four", 3);
        assert_eq!(tok.count(cut), 3);
    }
}
