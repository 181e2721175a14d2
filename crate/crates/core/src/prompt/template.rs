use serde::{Deserialize, Serialize};

use super::vocab::{Special, TokenKind, Vocabulary};
use super::{apply_ordering, RerankRequest};
use crate::error::{Error, Result};

const SYSTEM_LINES: [&str; 2] = [
    "You are a search relevance expert who can determine",
    "a ranking of passages based on their relevance to the query.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptOptions {
    /// Documents longer than this keep only their leading tokens.
    pub max_doc_tokens: Option<usize>,
    pub max_query_tokens: Option<usize>,
    /// Adds a query marker right after the first query occurrence.
    pub dual_query_marker: bool,
    /// Fills every document up to `max_doc_tokens` with padding tokens.
    pub pad_documents: bool,
    pub max_context: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            max_doc_tokens: None,
            max_query_tokens: None,
            dual_query_marker: false,
            pad_documents: false,
            max_context: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptLayout {
    pub token_ids: Vec<usize>,
    /// Rendered prompt, identical to what the ids encode up to whitespace.
    pub text: String,
    /// Position of the document marker of each presentation slot.
    pub doc_marker_positions: Vec<usize>,
    pub query_marker_position: usize,
    pub dual_query_marker_position: Option<usize>,
    /// `doc_order[slot]` is the index of the document in the request.
    pub doc_order: Vec<usize>,
}

impl PromptLayout {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

struct Builder<'v> {
    vocab: &'v Vocabulary,
    ids: Vec<usize>,
    text: String,
}

impl Builder<'_> {
    fn text(&mut self, s: &str) {
        self.vocab.tokenize_into(s, &mut self.ids);
        self.text.push_str(s);
    }

    fn ids(&mut self, ids: &[usize], rendered: &str) {
        self.ids.extend_from_slice(ids);
        self.text.push_str(rendered);
    }

    fn special(&mut self, s: Special) -> usize {
        self.ids.push(self.vocab.special(s));
        self.text.push_str(s.surface());
        self.ids.len() - 1
    }
}

fn clipped(vocab: &Vocabulary, text: &str, limit: Option<usize>) -> Result<(Vec<usize>, String)> {
    let ids = vocab.tokenize(text);
    match limit {
        Some(n) if ids.len() > n => {
            let kept = ids[..n].to_vec();
            let rendered = vocab.detokenize(&kept)?;
            Ok((kept, rendered))
        }
        _ => Ok((ids, text.to_string())),
    }
}

/// Renders the listwise prompt for `request` in its requested presentation
/// order and records where every marker token landed.
pub fn build_prompt(vocab: &Vocabulary, request: &RerankRequest, options: &PromptOptions) -> Result<PromptLayout> {
    request.validate()?;
    let (docs, doc_order) = apply_ordering(&request.documents, request.ordering)?;
    let (query_ids, query_text) = clipped(vocab, &request.query, options.max_query_tokens)?;
    if query_ids.is_empty() {
        return Err(Error::Validation("query is empty after truncation".into()));
    }

    let mut b = Builder {
        vocab,
        ids: Vec::new(),
        text: String::new(),
    };
    b.special(Special::ImStart);
    b.text("system\n");
    b.text(SYSTEM_LINES[0]);
    b.text("\n");
    b.text(SYSTEM_LINES[1]);
    b.text("\n");
    b.special(Special::ImEnd);
    b.text("\n");
    b.special(Special::ImStart);
    b.text("user\n");
    b.text(&format!(
        "I will provide you with {} passages, each indicated by a numerical identifier.\n",
        docs.len()
    ));
    b.text("Rank the passages based on their relevance to query: ");
    b.ids(&query_ids, &query_text);
    let dual_query_marker_position = options.dual_query_marker.then(|| b.special(Special::QueryEmb));
    b.text("\n\n");

    let mut doc_marker_positions = Vec::with_capacity(docs.len());
    for (slot, doc) in docs.iter().enumerate() {
        b.text(&format!("<passage id=\"{}\">\n", slot + 1));
        let (ids, rendered) = clipped(vocab, &doc.text, options.max_doc_tokens)?;
        b.ids(&ids, &rendered);
        if options.pad_documents {
            if let Some(n) = options.max_doc_tokens {
                for _ in ids.len()..n {
                    b.special(Special::Pad);
                }
            }
        }
        doc_marker_positions.push(b.special(Special::DocEmb));
        b.text("\n</passage>\n");
    }

    b.text("\n<query>\n");
    b.ids(&query_ids, &query_text);
    let query_marker_position = b.special(Special::QueryEmb);
    b.text("\n</query>\n");
    b.special(Special::ImEnd);

    if b.ids.len() > options.max_context {
        return Err(Error::Length {
            len: b.ids.len(),
            limit: options.max_context,
        });
    }
    Ok(PromptLayout {
        token_ids: b.ids,
        text: b.text,
        doc_marker_positions,
        query_marker_position,
        dual_query_marker_position,
        doc_order,
    })
}

/// Every word the template itself can emit for up to `max_docs` passages.
/// Seeding a vocabulary with these keeps the scaffold at one id per word.
pub fn template_words(max_docs: usize) -> Vec<String> {
    let mut words: Vec<String> = [
        "system",
        SYSTEM_LINES[0],
        SYSTEM_LINES[1],
        "user",
        "I will provide you with passages, each indicated by a numerical identifier.",
        "Rank the passages based on their relevance to query:",
        "<passage </passage> <query> </query>",
    ]
    .iter()
    .flat_map(|s| s.split_whitespace().map(str::to_string))
    .collect();
    for n in 1..=max_docs {
        words.push(n.to_string());
        words.push(format!("id=\"{n}\">"));
    }
    let mut seen = std::collections::HashSet::new();
    words.retain(|w| seen.insert(w.clone()));
    words
}

/// Positions of a special token in an id sequence.
pub fn scan_special(vocab: &Vocabulary, ids: &[usize], s: Special) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(_, &id)| vocab.kind(id) == Some(TokenKind::Special(s)))
        .map(|(i, _)| i)
        .collect()
}
