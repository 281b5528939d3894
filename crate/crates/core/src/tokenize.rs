//! Word-and-punctuation tokenization used for corpus statistics and the
//! language metrics.

/// Splits text into tokens. Implementations must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Lowercases, then emits maximal alphanumeric runs (apostrophes kept inside
/// words) and every other non-whitespace character as its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunct;

impl Tokenizer for WordPunct {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut word = String::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            let inner_apostrophe = c == '\''
                && !word.is_empty()
                && chars.peek().is_some_and(|n| n.is_alphanumeric());
            if c.is_alphanumeric() || inner_apostrophe {
                word.extend(c.to_lowercase());
                continue;
            }
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_lowercase().collect());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
        tokens
    }
}

/// Whitespace-separated word count, used for caption length caps.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
