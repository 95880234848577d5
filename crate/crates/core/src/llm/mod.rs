//! Persona-conditioned annotation through a chat-completions endpoint.

mod batch;
mod cache;
mod client;
mod eval;
mod parse;
mod prompt;

pub use batch::{build_llm_corpus, valid_labels, Annotator, BatchOptions, LlmBatch};
pub use cache::{request_key, LlmAnnotation, ResponseCache};
pub use client::{ChatClient, Clock, EndpointConfig, HttpChatClient, RateLimiter, SystemClock};
pub use eval::{
    classification_scores, disagreement_posts, majority_reference, personalization_sensitivity,
    ClassificationScores,
};
pub use parse::{parse_response, ParsedResponse};
pub use prompt::{target_list, PersonaProfile, PromptTemplate, TemplateId};

use std::collections::BTreeMap;

use crate::corpus::Corpus;
use crate::error::Result;

/// Base-model scores against the human majority, plus the base labels used.
pub fn evaluate_base(
    annotator: &Annotator,
    corpus: &Corpus,
    texts: &BTreeMap<String, String>,
) -> Result<(ClassificationScores, BTreeMap<String, LlmAnnotation>)> {
    let base = annotator.annotate_base(corpus, texts)?;
    let scores = classification_scores(&majority_reference(corpus), &valid_labels(&base))?;
    Ok((scores, base))
}
