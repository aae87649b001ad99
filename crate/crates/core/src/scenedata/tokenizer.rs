use std::collections::HashMap;

use super::classes::{BACKGROUND_CLASSES, foreground_catalog};
use crate::error::{Error, Result};

pub type TokenId = usize;

pub const END_TOKEN: &str = "<eot>";
pub const FOREGROUND_TEMPLATE: &str = "a photo of";
pub const BACKGROUND_TEMPLATE: &str = "a clean origami";

/// Whitespace tokenizer over a closed vocabulary.
///
/// Every tokenized text is terminated by [`END_TOKEN`]; the text encoder pools
/// its feature from that final position.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Tokenizer {
    /// Vocabulary covering both templates, every foreground class in the
    /// catalog and every background class.
    pub fn standard() -> Self {
        let mut words: Vec<String> = vec![END_TOKEN.into()];
        for w in FOREGROUND_TEMPLATE
            .split_whitespace()
            .chain(BACKGROUND_TEMPLATE.split_whitespace())
            .chain(["and"])
        {
            if !words.iter().any(|x| x == w) {
                words.push(w.into());
            }
        }
        words.extend(foreground_catalog().into_iter().map(|c| c.name));
        words.extend(BACKGROUND_CLASSES.iter().map(|s| s.to_string()));
        Self::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Tokenizer { words, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Result<TokenId> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::Vocabulary(word.to_string()))
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut ids = text
            .split_whitespace()
            .map(|w| self.id(w))
            .collect::<Result<Vec<_>>>()?;
        ids.push(self.id(END_TOKEN)?);
        Ok(ids)
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter_map(|&i| self.word(i))
            .filter(|w| *w != END_TOKEN)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn render_foreground(name: &str) -> String {
    format!("{FOREGROUND_TEMPLATE} {name}")
}

pub fn render_background(name: &str) -> String {
    format!("{BACKGROUND_TEMPLATE} {name}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_round_trip() {
        let tok = Tokenizer::standard();
        for name in ["red_circle", "blue_ring"] {
            let text = render_foreground(name);
            assert_eq!(tok.detokenize(&tok.tokenize(&text).unwrap()), text);
        }
        let text = render_background("grass");
        let ids = tok.tokenize(&text).unwrap();
        assert_eq!(ids.len(), 5);
        assert_eq!(tok.detokenize(&ids), text);
    }

    #[test]
    fn unknown_word_is_rejected() {
        let tok = Tokenizer::standard();
        assert!(matches!(tok.tokenize("a photo of zebra"), Err(Error::Vocabulary(w)) if w == "zebra"));
    }

    #[test]
    fn vocabulary_is_unique() {
        let tok = Tokenizer::standard();
        let mut seen = std::collections::HashSet::new();
        for i in 0..tok.vocab_size() {
            assert!(seen.insert(tok.word(i).unwrap().to_string()));
        }
    }
}
