#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod head;
pub mod io;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod params;
pub mod prompt;
pub mod reranker;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use eval::{Qrels, Run};
pub use model::{Model, ModelConfig};
pub use prompt::{Document, Ordering, RequestRecord, RerankRequest, Vocabulary};
pub use reranker::{rerank, RankedResult, RerankOptions};
pub use trainer::{StageConfig, TrainingExample};
