//! Toxicity tooling for multiplayer game chat: corpus parsing, annotator
//! consensus, classification, message aggregation, evaluation and abortable
//! scan sessions.

pub mod aggregate;
pub mod classify;
pub mod consensus;
pub mod corpus;
pub mod evalkit;
pub mod scanner;

pub use aggregate::{
    chunk_for_model, group_messages, match_transcripts, GroupingConfig, MatchTranscript, Utterance,
};
pub use classify::{
    classify_batch, Classifier, ClassifierConfig, ClassifyError, Lexicon, Prediction,
};
pub use consensus::{
    agreement_report, consensus_label, fleiss_kappa, AgreementReport, ConsensusConfig, Kappa,
};
pub use corpus::{ChatMessage, CorpusError, Label, LabeledMessage};
pub use evalkit::{
    compute_metrics, evaluate, EvalConfig, EvalError, Granularity, MetricsReport, SplitSpec,
};
pub use scanner::{
    start_scan, ScanConfig, ScanSession, ScanState, SessionSnapshot, SpoilerSpan, TextUnit,
};
