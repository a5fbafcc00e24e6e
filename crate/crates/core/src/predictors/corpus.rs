use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// How raw text is split into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// Every Unicode scalar value is a token.
    #[default]
    Char,
    /// Whitespace-separated words.
    Word,
}

impl Tokenization {
    /// String placed between tokens when rendering them back to text.
    pub fn separator(self) -> &'static str {
        match self {
            Tokenization::Char => "",
            Tokenization::Word => " ",
        }
    }

    pub fn join<S: AsRef<str>>(self, tokens: &[S]) -> String {
        let parts: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        parts.join(self.separator())
    }
}

impl FromStr for Tokenization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(Tokenization::Char),
            "word" => Ok(Tokenization::Word),
            other => Err(format!("unknown tokenization {other:?}, expected char or word")),
        }
    }
}

impl fmt::Display for Tokenization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tokenization::Char => "char",
            Tokenization::Word => "word",
        })
    }
}

pub fn tokenize(text: &str, mode: Tokenization) -> Vec<String> {
    match mode {
        Tokenization::Char => text.chars().map(String::from).collect(),
        Tokenization::Word => text.split_whitespace().map(String::from).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_and_word() {
        assert_eq!(tokenize("ab a", Tokenization::Char), ["a", "b", " ", "a"]);
        assert_eq!(tokenize(" the  cat\nsat ", Tokenization::Word), ["the", "cat", "sat"]);
        assert_eq!(Tokenization::Word.join(&["a", "b"]), "a b");
        assert_eq!("word".parse::<Tokenization>().unwrap(), Tokenization::Word);
        assert!("bpe".parse::<Tokenization>().is_err());
    }
}
