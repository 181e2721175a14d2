use super::template::{build_prompt, PromptOptions};
use super::vocab::Vocabulary;
use super::{Document, RerankRequest};
use crate::error::{Error, Result};

fn fits(vocab: &Vocabulary, query: &str, docs: &[Document], options: &PromptOptions) -> Result<Option<usize>> {
    let request = RerankRequest::new(query, docs.to_vec());
    match build_prompt(vocab, &request, options) {
        Ok(layout) => Ok(Some(layout.len())),
        Err(Error::Length { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn unsatisfiable(vocab: &Vocabulary, query: &str, doc: &Document, options: &PromptOptions) -> Result<Error> {
    let unbounded = PromptOptions {
        max_context: usize::MAX,
        ..options.clone()
    };
    let needed = fits(vocab, query, std::slice::from_ref(doc), &unbounded)?.unwrap_or(usize::MAX);
    Ok(Error::Unsatisfiable {
        needed,
        limit: options.max_context,
    })
}

/// Greedily packs `documents` in order into requests that hold at most
/// `max_docs_per_pass` documents and whose prompt fits `options.max_context`.
/// Passage numbering restarts at 1 in every pass.
pub fn chunk_into_batches(
    vocab: &Vocabulary,
    query: &str,
    documents: &[Document],
    max_docs_per_pass: usize,
    options: &PromptOptions,
) -> Result<Vec<RerankRequest>> {
    if max_docs_per_pass == 0 {
        return Err(Error::Validation("max_docs_per_pass must be at least 1".into()));
    }
    RerankRequest::new(query, documents.to_vec()).validate()?;
    let mut batches = Vec::new();
    let mut current: Vec<Document> = Vec::new();
    for doc in documents {
        if current.len() < max_docs_per_pass {
            current.push(doc.clone());
            if fits(vocab, query, &current, options)?.is_some() {
                continue;
            }
            current.pop();
        }
        if current.is_empty() {
            return Err(unsatisfiable(vocab, query, doc, options)?);
        }
        batches.push(RerankRequest::new(query, std::mem::take(&mut current)));
        current.push(doc.clone());
        if fits(vocab, query, &current, options)?.is_none() {
            return Err(unsatisfiable(vocab, query, doc, options)?);
        }
    }
    if !current.is_empty() {
        batches.push(RerankRequest::new(query, current));
    }
    Ok(batches)
}
