use serde::{Deserialize, Serialize};

use crate::prompt::Document;

/// One query with its positive and candidate negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query_id: String,
    pub query: String,
    pub positive: Document,
    pub negatives: Vec<Document>,
}
