//! Whitespace tokenizer with byte fallback and atomic special tokens.
//!
//! Text is split on Unicode whitespace. A word present in the vocabulary maps
//! to one id; any other word is spelled as a word-boundary token followed by
//! one token per UTF-8 byte. Detokenizing joins words with single spaces, so
//! round trips normalize whitespace runs to one space and trim both ends.
//! Special tokens are only ever emitted by the prompt builder.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Special {
    ImStart,
    ImEnd,
    DocEmb,
    QueryEmb,
    Pad,
}

impl Special {
    pub const ALL: [Special; 5] = [
        Special::ImStart,
        Special::ImEnd,
        Special::DocEmb,
        Special::QueryEmb,
        Special::Pad,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            Special::ImStart => "<|im_start|>",
            Special::ImEnd => "<|im_end|>",
            Special::DocEmb => "<|doc_emb|>",
            Special::QueryEmb => "<|query_emb|>",
            Special::Pad => "<|pad|>",
        }
    }
}

const WORD_BOUNDARY: &str = "<|wb|>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Byte(u8),
    WordBoundary,
    Special(Special),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    kinds: Vec<TokenKind>,
    words: HashMap<String, usize>,
    specials: BTreeMap<Special, usize>,
    byte_ids: [usize; 256],
    boundary: usize,
}

fn byte_surface(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn is_reserved(word: &str) -> bool {
    word == WORD_BOUNDARY
        || Special::ALL.iter().any(|s| s.surface() == word)
        || (word.len() == 6 && word.starts_with("<0x") && word.ends_with('>'))
}

impl Vocabulary {
    /// Reserved tokens only: specials, the word boundary and all 256 bytes.
    pub fn reserved_only() -> Self {
        let mut surfaces = Vec::new();
        let mut kinds = Vec::new();
        let mut specials = BTreeMap::new();
        for s in Special::ALL {
            specials.insert(s, surfaces.len());
            surfaces.push(s.surface().to_string());
            kinds.push(TokenKind::Special(s));
        }
        let boundary = surfaces.len();
        surfaces.push(WORD_BOUNDARY.to_string());
        kinds.push(TokenKind::WordBoundary);
        let mut byte_ids = [0usize; 256];
        for b in 0..=255u8 {
            byte_ids[b as usize] = surfaces.len();
            surfaces.push(byte_surface(b));
            kinds.push(TokenKind::Byte(b));
        }
        Self {
            surfaces,
            kinds,
            words: HashMap::new(),
            specials,
            byte_ids,
            boundary,
        }
    }

    /// Reserved tokens, then every word of `seed_words` in order, then corpus
    /// words by descending frequency (ties lexicographic) until `max_size`
    /// ids are assigned.
    pub fn build<'a>(
        seed_words: impl IntoIterator<Item = &'a str>,
        corpus: impl IntoIterator<Item = &'a str>,
        max_size: Option<usize>,
    ) -> Self {
        let mut vocab = Self::reserved_only();
        let cap = max_size.unwrap_or(usize::MAX);
        for w in seed_words.into_iter().flat_map(str::split_whitespace) {
            if vocab.len() >= cap {
                return vocab;
            }
            vocab.add_word(w);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in corpus {
            for w in text.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (w, _) in ranked {
            if vocab.len() >= cap {
                break;
            }
            vocab.add_word(w);
        }
        vocab
    }

    fn add_word(&mut self, word: &str) {
        if is_reserved(word) || self.words.contains_key(word) {
            return;
        }
        self.words.insert(word.to_string(), self.surfaces.len());
        self.surfaces.push(word.to_string());
        self.kinds.push(TokenKind::Word);
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn special(&self, s: Special) -> usize {
        self.specials[&s]
    }

    pub fn kind(&self, id: usize) -> Option<TokenKind> {
        self.kinds.get(id).copied()
    }

    pub fn surface(&self, id: usize) -> Option<&str> {
        self.surfaces.get(id).map(String::as_str)
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.words.get(word).copied()
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        self.tokenize_into(text, &mut ids);
        ids
    }

    pub fn tokenize_into(&self, text: &str, ids: &mut Vec<usize>) {
        for word in text.split_whitespace() {
            match self.words.get(word) {
                Some(&id) => ids.push(id),
                None => {
                    ids.push(self.boundary);
                    ids.extend(word.bytes().map(|b| self.byte_ids[b as usize]));
                }
            }
        }
    }

    /// Inverse of [`tokenize`](Self::tokenize) up to whitespace
    /// normalization. Specials render as their surface with no spacing.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        let mut pending: Vec<u8> = Vec::new();
        let flush = |out: &mut String, pending: &mut Vec<u8>| {
            if !pending.is_empty() {
                out.push_str(&String::from_utf8_lossy(pending));
                pending.clear();
            }
        };
        let mut after_special = false;
        for &id in ids {
            let kind = self.kind(id).ok_or(Error::UnknownToken {
                id,
                vocab_size: self.len(),
            })?;
            match kind {
                TokenKind::Byte(b) => pending.push(b),
                TokenKind::Word | TokenKind::WordBoundary => {
                    flush(&mut out, &mut pending);
                    if !out.is_empty() && !after_special {
                        out.push(' ');
                    }
                    if kind == TokenKind::Word {
                        out.push_str(&self.surfaces[id]);
                    }
                    after_special = false;
                }
                TokenKind::Special(s) => {
                    flush(&mut out, &mut pending);
                    out.push_str(s.surface());
                    after_special = true;
                }
            }
        }
        flush(&mut out, &mut pending);
        Ok(out)
    }

    /// Line-delimited `surface<TAB>id[<TAB>special|byte]`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (id, (surface, kind)) in self.surfaces.iter().zip(&self.kinds).enumerate() {
            let flag = match kind {
                TokenKind::Word => "",
                TokenKind::Special(_) => "\tspecial",
                TokenKind::Byte(_) | TokenKind::WordBoundary => "\tbyte",
            };
            let _ = writeln!(s, "{surface}\t{id}{flag}");
        }
        s
    }

    pub fn from_tsv(text: &str, source_name: &str) -> Result<Self> {
        let mut vocab = Self::reserved_only();
        let reserved = vocab.len();
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&cols.len()) {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    "expected 2 or 3 tab-separated columns",
                ));
            }
            let id: usize = cols[1]
                .parse()
                .map_err(|_| Error::parse(source_name, lineno, format!("bad id `{}`", cols[1])))?;
            if id < reserved {
                if vocab.surfaces[id] != cols[0] {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        format!("reserved id {id} must be `{}`", vocab.surfaces[id]),
                    ));
                }
                continue;
            }
            if cols.len() == 3 {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    "flagged token outside the reserved range",
                ));
            }
            if id != vocab.len() {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("ids must be contiguous, expected {}", vocab.len()),
                ));
            }
            if is_reserved(cols[0])
                || vocab.words.contains_key(cols[0])
                || cols[0].contains(char::is_whitespace)
                || cols[0].is_empty()
            {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("invalid or duplicate surface `{}`", cols[0]),
                ));
            }
            vocab.add_word(cols[0]);
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}
