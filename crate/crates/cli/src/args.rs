use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Listwise reranker: joint causal encoding of a query with its candidates,
/// scored by cosine between last-token marker embeddings.
///
/// Every flag can also be set through an `LBNL_`-prefixed environment
/// variable; flags given on the command line take precedence.
#[derive(Debug, Parser)]
#[command(name = "lbnl", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary from text files and write a freshly initialized model.
    Init(InitArgs),
    /// Write a synthetic corpus: requests.jsonl, qrels.txt and train.jsonl.
    Synth(SynthArgs),
    /// Rerank every request of a JSONL file into a TREC run.
    Rerank(RerankArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Average checkpoints with weights.
    Merge(MergeArgs),
    /// Mine hard negatives for judged queries.
    Mine(MineArgs),
    /// Score a TREC run against qrels.
    Eval(EvalArgs),
    /// Compare taped gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct InitArgs {
    /// Request or training JSONL files whose texts seed the vocabulary.
    #[arg(long = "texts", env = "LBNL_TEXTS", value_delimiter = ',', required = true)]
    pub texts: Vec<PathBuf>,
    #[arg(long, env = "LBNL_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "LBNL_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "LBNL_LAYERS", default_value_t = 2)]
    pub layers: usize,
    #[arg(long, env = "LBNL_D_HIDDEN", default_value_t = 64)]
    pub d_hidden: usize,
    #[arg(long, env = "LBNL_HEADS", default_value_t = 4)]
    pub heads: usize,
    #[arg(long, env = "LBNL_KV_HEADS", default_value_t = 2)]
    pub kv_heads: usize,
    #[arg(long, env = "LBNL_D_FFN", default_value_t = 128)]
    pub d_ffn: usize,
    #[arg(long, env = "LBNL_MAX_CONTEXT", default_value_t = 2048)]
    pub max_context: usize,
    /// Embedding table rows; also caps the vocabulary.
    #[arg(long, env = "LBNL_VOCAB_SIZE", default_value_t = 1024)]
    pub vocab_size: usize,
    /// Passage ids to reserve words for in the prompt template.
    #[arg(long, env = "LBNL_MAX_DOCS_PER_PASS", default_value_t = 64)]
    pub max_docs_per_pass: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, env = "LBNL_N_QUERIES", default_value_t = 50)]
    pub n_queries: usize,
    #[arg(long, env = "LBNL_DOCS_PER_QUERY", default_value_t = 8)]
    pub docs_per_query: usize,
    #[arg(long, env = "LBNL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, env = "LBNL_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingArg {
    Given,
    Desc,
    Asc,
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct RerankArgs {
    #[arg(long, env = "LBNL_MODEL")]
    pub model: PathBuf,
    /// JSONL of {query_id, query_text, docs: [{doc_id, doc_text, first_stage_score}]}.
    #[arg(long, env = "LBNL_INPUT")]
    pub input: PathBuf,
    /// TREC run file to write.
    #[arg(long, env = "LBNL_OUTPUT")]
    pub output: PathBuf,
    #[arg(long, env = "LBNL_ORDERING", value_enum, default_value = "given")]
    pub ordering: OrderingArg,
    /// Shuffle seed for `--ordering random`.
    #[arg(long, env = "LBNL_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "LBNL_MAX_DOCS_PER_PASS", default_value_t = 64)]
    pub max_docs_per_pass: usize,
    #[arg(long, env = "LBNL_MAX_DOC_TOKENS")]
    pub max_doc_tokens: Option<usize>,
    #[arg(long, env = "LBNL_MAX_QUERY_TOKENS")]
    pub max_query_tokens: Option<usize>,
    /// Score later passes against the first pass's query embedding.
    #[arg(long, env = "LBNL_PIN_QUERY_EMBEDDING")]
    pub pin_query_embedding: bool,
    #[arg(long, env = "LBNL_TAG", default_value = "lbnl")]
    pub tag: String,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Stage TOML; keys left out keep the preset's values.
    #[arg(long, env = "LBNL_STAGE_CONFIG")]
    pub stage_config: Option<PathBuf>,
    /// Preset used when no stage file is given.
    #[arg(long, env = "LBNL_PRESET", default_value = "stage1")]
    pub preset: String,
    /// Training JSONL of {query_id, query, positive, negatives}.
    #[arg(long, env = "LBNL_DATA")]
    pub data: PathBuf,
    /// Checkpoint to start from.
    #[arg(long, env = "LBNL_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "LBNL_OUT_CHECKPOINT")]
    pub out_checkpoint: PathBuf,
    /// Loss trace JSONL; defaults to the checkpoint path with `.trace.jsonl`.
    #[arg(long, env = "LBNL_TRACE")]
    pub trace: Option<PathBuf>,
    #[arg(long, env = "LBNL_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "LBNL_STEPS")]
    pub steps: Option<usize>,
    /// Requests scored for nDCG@10 during and after training.
    #[arg(long, env = "LBNL_EVAL_REQUESTS", requires = "eval_qrels")]
    pub eval_requests: Option<PathBuf>,
    #[arg(long, env = "LBNL_EVAL_QRELS", requires = "eval_requests")]
    pub eval_qrels: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MergeArgs {
    /// TOML with `merge_checkpoints` and `merge_weights`; relative paths are
    /// resolved against the spec's directory.
    #[arg(long, env = "LBNL_SPEC")]
    pub spec: PathBuf,
    #[arg(long, env = "LBNL_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MineArgs {
    /// Requests whose documents form the corpus and whose queries are mined.
    #[arg(long, env = "LBNL_REQUESTS")]
    pub requests: PathBuf,
    #[arg(long, env = "LBNL_QRELS")]
    pub qrels: PathBuf,
    /// Training JSONL to write.
    #[arg(long, env = "LBNL_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "LBNL_POOL_SIZE", default_value_t = 25)]
    pub pool_size: usize,
    #[arg(long, env = "LBNL_NEGATIVES", default_value_t = 25)]
    pub negatives: usize,
    /// Seed of the hashed retriever.
    #[arg(long, env = "LBNL_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Ndcg,
    Recall,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, env = "LBNL_RUN")]
    pub run: PathBuf,
    #[arg(long, env = "LBNL_QRELS")]
    pub qrels: PathBuf,
    #[arg(long, env = "LBNL_METRIC", value_enum, default_value = "ndcg")]
    pub metric: MetricArg,
    #[arg(long, env = "LBNL_K", default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentArg {
    Losses,
    Backbone,
    Projector,
    Lora,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, env = "LBNL_COMPONENT", value_enum, default_value = "all")]
    pub component: ComponentArg,
    #[arg(long, env = "LBNL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Consecutive seeds to check, starting at `--seed`.
    #[arg(long, env = "LBNL_SEEDS", default_value_t = 1)]
    pub seeds: u64,
}
