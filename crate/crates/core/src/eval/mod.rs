//! Corpus BLEU, language-model perplexity and the gate analysis table.

mod bleu;
mod perplexity;
mod report;

pub use bleu::{bleu, bleu_multi, BleuReport, MAX_ORDER};
pub use perplexity::{perplexity, PerplexityReport};
pub use report::{analysis_report, AnalysisRow};
