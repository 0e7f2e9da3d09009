//! Word-level tokenization shared by the encoder vocabulary and the
//! TF-IDF featurizer.

/// Lowercase a text and split it into maximal alphanumeric runs.
/// Punctuation and whitespace are separators and never appear in the
/// output; an empty or all-separator text yields no tokens.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize_words("Hello, World! It's GPT-4."),
            vec!["hello", "world", "it", "s", "gpt", "4"]
        );
    }

    #[test]
    fn empty_and_separator_only_texts_yield_nothing() {
        assert!(tokenize_words("").is_empty());
        assert!(tokenize_words(" \t\n ... ").is_empty());
    }

    #[test]
    fn digits_are_kept_inside_tokens() {
        assert_eq!(tokenize_words("finance03 m4gt"), vec!["finance03", "m4gt"]);
    }

    #[test]
    fn unicode_words_are_preserved() {
        assert_eq!(tokenize_words("Füße über"), vec!["füße", "über"]);
    }
}
