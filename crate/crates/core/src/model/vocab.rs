//! Character-level vocabulary with `<sos>`/`<eos>` markers and a CTC blank.
//!
//! Token ids: `0..A` are the alphabet characters in order, `A` is `<sos>`,
//! `A+1` is `<eos>`. The CTC blank is appended after the vocabulary at
//! index `V` (it is not a decoder token).

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    alphabet: Vec<char>,
}

impl Vocab {
    pub fn new(alphabet: &str) -> Self {
        let chars: Vec<char> = alphabet.chars().collect();
        assert!(!chars.is_empty(), "empty alphabet");
        let mut dedup = chars.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), chars.len(), "alphabet has duplicate characters");
        Vocab { alphabet: chars }
    }

    pub fn alphabet(&self) -> String {
        self.alphabet.iter().collect()
    }

    /// Vocabulary size V including `<sos>` and `<eos>`.
    pub fn size(&self) -> usize {
        self.alphabet.len() + 2
    }

    pub fn sos(&self) -> usize {
        self.alphabet.len()
    }

    pub fn eos(&self) -> usize {
        self.alphabet.len() + 1
    }

    /// CTC blank id, one past the vocabulary (index V in the V+1-wide CTC
    /// output).
    pub fn blank(&self) -> usize {
        self.size()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, ModelError> {
        text.chars()
            .map(|c| {
                self.alphabet
                    .iter()
                    .position(|&a| a == c)
                    .ok_or(ModelError::UnknownToken(c))
            })
            .collect()
    }

    /// Renders token ids, skipping `<sos>`/`<eos>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&id| self.alphabet.get(id).copied())
            .collect()
    }

    pub fn token_str(&self, id: usize) -> String {
        if id == self.sos() {
            "<sos>".to_string()
        } else if id == self.eos() {
            "<eos>".to_string()
        } else if id == self.blank() {
            "<blank>".to_string()
        } else {
            self.alphabet
                .get(id)
                .map(|c| c.to_string())
                .unwrap_or_else(|| format!("<unk:{id}>"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_and_specials() {
        let v = Vocab::new("abc");
        assert_eq!(v.size(), 5);
        assert_eq!(v.sos(), 3);
        assert_eq!(v.eos(), 4);
        assert_eq!(v.blank(), 5);
        assert_eq!(v.encode("cab").unwrap(), vec![2, 0, 1]);
        assert_eq!(v.decode(&[2, 0, 1]), "cab");
        assert_eq!(v.decode(&[3, 2, 4]), "c");
    }

    #[test]
    fn unknown_token_is_an_error() {
        let v = Vocab::new("ab");
        assert!(v.encode("abz").is_err());
    }
}
