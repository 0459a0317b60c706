//! Lowercasing word-piece tokenizer.
//!
//! Text is lowercased, split on whitespace and punctuation (each punctuation
//! character is its own word), and each word is segmented by greedy
//! longest-match against the vocabulary using the `##` continuation
//! convention. Word indices are tracked per token so that masking can work
//! on whole words and entity spans.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";

pub const CLS_ID: u32 = 0;
pub const SEP_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const PAD_ID: u32 = 3;
pub const UNK_ID: u32 = 4;

pub const SPECIALS: [&str; 5] = [CLS, SEP, MASK, PAD, UNK];

/// Word index carried by special tokens.
pub const SPECIAL_WORD: u32 = u32::MAX;

const CONTINUATION: &str = "##";

#[derive(Error, Debug)]
pub enum TokenizerError {
    #[error("vocabulary too small: max_size {0} cannot hold the 5 specials plus one unit")]
    TooSmall(usize),
    #[error("empty text stream")]
    EmptyStream,
    #[error("token index {0} is outside the vocabulary")]
    UnknownIndex(u32),
    #[error("vocabulary file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Lowercases and splits into words; punctuation characters become single-character words.
/// Literal special-token strings such as `[MASK]` are kept whole.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            if let Some(special) = SPECIALS.iter().find(|s| rest.starts_with(*s)) {
                words.push(special.to_string());
                rest = &rest[special.len()..];
                continue;
            }
            let mut current = String::new();
            let mut consumed = 0;
            for c in rest.chars() {
                if c == '[' && SPECIALS.iter().any(|s| rest[consumed..].starts_with(s)) {
                    break;
                }
                consumed += c.len_utf8();
                if is_punctuation(c) {
                    if !current.is_empty() {
                        words.push(std::mem::take(&mut current));
                    }
                    words.extend(c.to_lowercase().map(String::from).take(1));
                } else {
                    current.extend(c.to_lowercase());
                }
            }
            if !current.is_empty() {
                words.push(current);
            }
            rest = &rest[consumed..];
        }
    }
    words
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())
}

impl Vocabulary {
    /// Builds a vocabulary from raw text: whole words seen at least `min_freq`
    /// times plus single-character pieces (`c` and `##c`) for every character,
    /// ranked by frequency and truncated to `max_size` entries including specials.
    pub fn build<I, S>(texts: I, max_size: usize, min_freq: usize) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size < SPECIALS.len() + 1 {
            return Err(TokenizerError::TooSmall(max_size));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for word in split_words(text.as_ref()) {
                if SPECIALS.contains(&word.as_str()) {
                    continue;
                }
                for (i, c) in word.chars().enumerate() {
                    let piece = if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    };
                    *counts.entry(piece).or_default() += 1;
                }
                if word.chars().count() > 1 {
                    *counts.entry(word).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(TokenizerError::EmptyStream);
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, n)| *n >= min_freq || is_char_piece(tok))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    /// Vocabulary over a graph's names and attribute renderings.
    pub fn from_kg(kg: &crate::kg::KnowledgeGraph, max_size: usize, min_freq: usize) -> Result<Self, TokenizerError> {
        Self::build(kg.surface_texts(), max_size, min_freq)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index }
    }

    /// Vocabulary from an explicit token list; specials are prepended.
    pub fn from_units<'a>(units: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for u in units {
            if !tokens.iter().any(|t| t == u) {
                tokens.push(u.to_string());
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut body = self.tokens.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| TokenizerError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let err = |message: String| TokenizerError::File {
            path: path.display().to_string(),
            message,
        };
        let body = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let tokens: Vec<String> = body.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(err("lines 0-4 must hold [CLS] [SEP] [MASK] [PAD] [UNK]".into()));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(err("duplicate tokens".into()));
        }
        Ok(vocab)
    }

    /// Greedy longest-match segmentation of one lowercase word.
    fn segment_word(&self, word: &str, out: &mut Vec<u32>) {
        if let Some(id) = self.id(word) {
            out.push(id);
            return;
        }
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let from = chars[start].0;
                let to = chars.get(end).map_or(word.len(), |c| c.0);
                let piece = if start == 0 {
                    word[from..to].to_string()
                } else {
                    format!("{CONTINUATION}{}", &word[from..to])
                };
                if let Some(id) = self.id(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK_ID);
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    pub fn tokenize(&self, text: &str) -> TokenizedText {
        let mut t = TokenizedText::default();
        self.tokenize_into(text, 0, &mut t);
        t
    }

    /// Appends the tokens of `text` to `t`, numbering words from `first_word`.
    /// Returns the next free word index.
    pub fn tokenize_into(&self, text: &str, first_word: u32, t: &mut TokenizedText) -> u32 {
        let mut word = first_word;
        let mut buf = Vec::new();
        for w in split_words(text) {
            if let Some(pos) = SPECIALS.iter().position(|s| *s == w) {
                t.push(pos as u32, SPECIAL_WORD, true);
                continue;
            }
            buf.clear();
            self.segment_word(&w, &mut buf);
            for &id in &buf {
                t.push(id, word, false);
            }
            word += 1;
        }
        word
    }

    pub fn detokenize(&self, t: &TokenizedText) -> Result<String, TokenizerError> {
        self.detokenize_ids(&t.tokens)
    }

    /// Joins tokens with spaces, fusing `##` continuations onto their predecessor.
    pub fn detokenize_ids(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::UnknownIndex(id))?;
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if !out.is_empty() && !Self::is_special(id) => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        Ok(out)
    }
}

fn is_char_piece(tok: &str) -> bool {
    tok.strip_prefix(CONTINUATION).unwrap_or(tok).chars().count() == 1
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<u32>,
    /// Source word per token; [`SPECIAL_WORD`] for specials.
    pub word_ids: Vec<u32>,
    pub is_special: Vec<bool>,
}

impl TokenizedText {
    pub fn push(&mut self, token: u32, word: u32, special: bool) {
        self.tokens.push(token);
        self.word_ids.push(word);
        self.is_special.push(special);
    }

    pub fn push_special(&mut self, token: u32) {
        self.push(token, SPECIAL_WORD, true);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
