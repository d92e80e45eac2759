//! Token sequences and the summary maps that compress them to a finite state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Video,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Text => f.write_str("text"),
            Modality::Video => f.write_str("video"),
        }
    }
}

/// Retrieval direction: which modality is the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Video query, text candidates.
    V2T,
    /// Text query, video candidates.
    T2V,
}

impl Direction {
    pub fn query_modality(self) -> Modality {
        match self {
            Direction::V2T => Modality::Video,
            Direction::T2V => Modality::Text,
        }
    }

    pub fn candidate_modality(self) -> Modality {
        match self {
            Direction::V2T => Modality::Text,
            Direction::T2V => Modality::Video,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::V2T => "v2t",
            Direction::T2V => "t2v",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One discrete symbol: a text token or a quantized video clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u32);

impl Token {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A non-empty sequence whose tokens are all below `vocab`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSeq", into = "RawSeq")]
pub struct TokenSeq {
    modality: Modality,
    vocab: usize,
    tokens: Vec<Token>,
}

#[derive(Serialize, Deserialize)]
struct RawSeq {
    modality: Modality,
    vocab: usize,
    tokens: Vec<u32>,
}

impl TryFrom<RawSeq> for TokenSeq {
    type Error = Error;

    fn try_from(raw: RawSeq) -> Result<Self> {
        TokenSeq::new(raw.modality, raw.vocab, raw.tokens)
    }
}

impl From<TokenSeq> for RawSeq {
    fn from(seq: TokenSeq) -> Self {
        RawSeq {
            modality: seq.modality,
            vocab: seq.vocab,
            tokens: seq.tokens.iter().map(|t| t.0).collect(),
        }
    }
}

impl TokenSeq {
    pub fn new(modality: Modality, vocab: usize, tokens: impl IntoIterator<Item = u32>) -> Result<Self> {
        let tokens: Vec<Token> = tokens.into_iter().map(Token).collect();
        if tokens.is_empty() {
            return Err(Error::Data(format!("empty {modality} sequence")));
        }
        if let Some(bad) = tokens.iter().find(|t| t.index() >= vocab) {
            return Err(Error::Data(format!(
                "{modality} token {} outside vocabulary of size {vocab}",
                bad.0
            )));
        }
        Ok(TokenSeq {
            modality,
            vocab,
            tokens,
        })
    }

    pub fn text(vocab: usize, tokens: impl IntoIterator<Item = u32>) -> Result<Self> {
        Self::new(Modality::Text, vocab, tokens)
    }

    pub fn video(vocab: usize, tokens: impl IntoIterator<Item = u32>) -> Result<Self> {
        Self::new(Modality::Video, vocab, tokens)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lexicographic index among all sequences of this length and vocabulary.
    pub fn lex_index(&self) -> usize {
        self.tokens
            .iter()
            .fold(0usize, |acc, t| acc * self.vocab + t.index())
    }

    /// Inverse of [`TokenSeq::lex_index`].
    pub fn from_lex_index(modality: Modality, vocab: usize, len: usize, mut index: usize) -> Self {
        let mut tokens = vec![Token(0); len];
        for slot in tokens.iter_mut().rev() {
            *slot = Token((index % vocab) as u32);
            index /= vocab;
        }
        TokenSeq {
            modality,
            vocab,
            tokens,
        }
    }

    pub(crate) fn expect(&self, modality: Modality, vocab: usize, len: Option<usize>) -> Result<()> {
        if self.modality != modality {
            return Err(Error::Dimension(format!(
                "expected a {modality} sequence, got {}",
                self.modality
            )));
        }
        if self.vocab != vocab {
            return Err(Error::Dimension(format!(
                "{modality} vocabulary {} does not match expected {vocab}",
                self.vocab
            )));
        }
        if let Some(len) = len {
            if self.len() != len {
                return Err(Error::Dimension(format!(
                    "{modality} length {} does not match expected {len}",
                    self.len()
                )));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}", t.0)?;
        }
        Ok(())
    }
}

/// Number of sequences of length `len` over `vocab` symbols, or `None` on overflow.
pub fn sequence_count(vocab: usize, len: usize) -> Option<u128> {
    let mut total: u128 = 1;
    for _ in 0..len {
        total = total.checked_mul(vocab as u128)?;
    }
    Some(total)
}

/// Every sequence of the given shape in lexicographic order.
pub fn all_sequences(modality: Modality, vocab: usize, len: usize) -> impl Iterator<Item = TokenSeq> {
    let count = sequence_count(vocab, len).expect("sequence space overflows u128") as usize;
    (0..count).map(move |i| TokenSeq::from_lex_index(modality, vocab, len, i))
}

/// Compresses a sequence to one of a finite number of condition states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Summary {
    /// Sum of token ids modulo `states`.
    TokenSum { states: usize },
    /// Every sequence is its own state (its lexicographic index).
    Identity,
}

impl Default for Summary {
    fn default() -> Self {
        Summary::TokenSum { states: 4 }
    }
}

impl Summary {
    /// States for sequences of the given shape.
    pub fn state_count(&self, vocab: usize, len: usize) -> usize {
        match *self {
            Summary::TokenSum { states } => states,
            Summary::Identity => sequence_count(vocab, len).map_or(usize::MAX, |c| c as usize),
        }
    }

    pub fn state(&self, seq: &TokenSeq) -> usize {
        match *self {
            Summary::TokenSum { states } => {
                seq.tokens().iter().map(|t| t.index()).sum::<usize>() % states
            }
            Summary::Identity => seq.lex_index(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            Summary::TokenSum { states: 0 } => Err(Error::Config("summary needs at least one state".into())),
            _ => Ok(()),
        }
    }
}
