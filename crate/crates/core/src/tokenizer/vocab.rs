use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TokenizerError;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const CLS: &str = "<cls>";
pub const SEP: &str = "<sep>";
pub const NOJ: &str = "<noj>";
pub const QUES: &str = "<ques>";
pub const ANS: &str = "<ans>";
pub const EXP: &str = "<exp>";
pub const CONCEPT: &str = "<concept>";
pub const OBJ: &str = "<obj>";

/// Reserved tokens, in id order.
pub const SPECIALS: [&str; 12] = [PAD, BOS, EOS, UNK, CLS, SEP, NOJ, QUES, ANS, EXP, CONCEPT, OBJ];

/// Word separating the answer from its explanation in every assembled sequence.
pub const DELIMITER: &str = "because";

/// Lowercases and splits on whitespace and punctuation. Punctuation marks
/// become their own tokens; `<name>` markers of reserved tokens stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() {
            word.push(c);
            i += 1;
            continue;
        }
        if !word.is_empty() {
            out.push(core::mem::take(&mut word));
        }
        if c == '<' {
            if let Some(end) = chars[i + 1..].iter().position(|&x| x == '>') {
                let candidate: String = chars[i..i + end + 2].iter().collect();
                if SPECIALS.contains(&candidate.as_str()) {
                    out.push(candidate);
                    i += end + 2;
                    continue;
                }
            }
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
        i += 1;
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Canonical text form: tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Dense token ↔ id mapping with reserved tokens at the lowest ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    frequencies: Vec<u64>,
    ids: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub token: String,
    pub id: usize,
    pub frequency: u64,
}

/// On-disk form of a [`Vocabulary`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabFile {
    pub version: u32,
    pub tokens: Vec<VocabEntry>,
}

impl VocabFile {
    pub const VERSION: u32 = 1;
}

impl Vocabulary {
    /// Builds a vocabulary from `corpus`. Words seen fewer than `min_freq`
    /// times are left out and encode to `<unk>`. Ordering is frequency
    /// descending, then lexicographic.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_freq: u64) -> Result<Self, TokenizerError> {
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let min_freq = min_freq.max(1);
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for text in corpus {
            for tok in tokenize(text.as_ref()) {
                if SPECIALS.contains(&tok.as_str()) {
                    continue;
                }
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        // BTreeMap iteration is already lexicographic; a stable sort keeps that as the tie-break.
        words.sort_by(|a, b| b.1.cmp(&a.1));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut frequencies = alloc::vec![0; SPECIALS.len()];
        for (w, c) in words {
            tokens.push(w);
            frequencies.push(c);
        }
        Ok(Self::from_parts(tokens, frequencies))
    }

    fn from_parts(tokens: Vec<String>, frequencies: Vec<u64>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, frequencies, ids }
    }

    pub fn from_file(file: &VocabFile) -> Result<Self, TokenizerError> {
        if file.version != VocabFile::VERSION {
            return Err(TokenizerError::Format(alloc::format!("unsupported vocabulary version {}", file.version)));
        }
        let mut entries = file.tokens.clone();
        entries.sort_by_key(|e| e.id);
        for (i, e) in entries.iter().enumerate() {
            if e.id != i {
                return Err(TokenizerError::Format(alloc::format!("ids are not dense at {}", i)));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if entries.get(i).map(|e| e.token.as_str()) != Some(*s) {
                return Err(TokenizerError::Format(alloc::format!("reserved token {} must have id {}", s, i)));
            }
        }
        let tokens: Vec<String> = entries.iter().map(|e| e.token.clone()).collect();
        let vocab = Self::from_parts(tokens, entries.iter().map(|e| e.frequency).collect());
        if vocab.ids.len() != vocab.tokens.len() {
            return Err(TokenizerError::Format("duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn to_file(&self) -> VocabFile {
        VocabFile {
            version: VocabFile::VERSION,
            tokens: self
                .tokens
                .iter()
                .zip(&self.frequencies)
                .enumerate()
                .map(|(id, (t, &f))| VocabEntry { token: t.clone(), id, frequency: f })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of a reserved token. Every vocabulary carries all of them.
    pub fn special(&self, token: &str) -> usize {
        self.ids[token]
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn frequency(&self, id: usize) -> Option<u64> {
        self.frequencies.get(id).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn pad(&self) -> usize {
        0
    }
    pub fn bos(&self) -> usize {
        1
    }
    pub fn eos(&self) -> usize {
        2
    }
    pub fn unk(&self) -> usize {
        3
    }
    pub fn cls(&self) -> usize {
        4
    }
    pub fn sep(&self) -> usize {
        5
    }
    pub fn noj(&self) -> usize {
        6
    }

    pub fn delimiter(&self) -> Result<usize, TokenizerError> {
        self.id(DELIMITER).ok_or(TokenizerError::MissingDelimiter)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(self.unk()))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            parts.push(self.token(id).ok_or(TokenizerError::UnknownId(id))?);
        }
        Ok(parts.join(" "))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
