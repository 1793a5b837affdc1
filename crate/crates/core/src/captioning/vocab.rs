use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const RESERVED: [&str; 3] = ["<bos>", "<eos>", "<unk>"];

/// Token ↔ id mapping. Ids 0..3 are reserved; file line `i` (0-based) maps to
/// id `i + 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut ids: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for (line, w) in words.iter().enumerate() {
            let w = w.as_ref();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("vocabulary line {}: invalid token {w:?}", line + 1)));
            }
            if ids.insert(w.to_string(), tokens.len()).is_some() {
                return Err(Error::Data(format!("vocabulary line {}: duplicate token {w:?}", line + 1)));
            }
            tokens.push(w.to_string());
        }
        Ok(Self { tokens, ids })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.lines().collect();
        Self::new(&words)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// One token per line, reserved ids omitted.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[RESERVED.len()..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        sentence.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_offsets() {
        let v = Vocabulary::parse("a\nman\nruns\n").unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("runs"), 5);
        assert_eq!(v.id("zebra"), UNK);
        assert_eq!(v.token(BOS), Some("<bos>"));
        assert_eq!(v.token(EOS), Some("<eos>"));
        assert_eq!(v.encode("a man flies"), vec![3, 4, UNK]);
        assert_eq!(v.decode(&[4, 5]), vec!["man", "runs"]);
        assert_eq!(Vocabulary::parse(&v.to_file_string()).unwrap(), v);
    }

    #[test]
    fn bijectivity_enforced() {
        assert!(Vocabulary::parse("a\na\n").is_err());
        assert!(Vocabulary::parse("<eos>\n").is_err());
        assert!(Vocabulary::parse("a b\n").is_err());
        assert!(Vocabulary::parse("a\n\nb\n").is_err());
    }
}
