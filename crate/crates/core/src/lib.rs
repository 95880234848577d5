//! Annotator bias auditing on hate-speech annotation corpora.

pub mod config;
pub mod corpus;
pub mod error;
pub mod llm;
pub mod metrics;
pub mod pairing;
pub mod pipelines;
pub mod report;
pub mod stats;
pub mod synth;
mod util;

pub use config::RunConfig;
pub use corpus::{AnnotationRecord, AttributeKey, AttributeSchema, Corpus, Label, Side, Source};
pub use error::{Error, Result};
pub use metrics::{cohen_kappa, intensity, pearson, prevalence, BiasIndicators};
pub use pairing::{build_matrix, paired_samples, select_annotations, ConfusionMatrix, GroupSelector, MatrixCache};
pub use pipelines::{
    compare_biases, run_cross, run_in_group, run_llm_cross, significance_gate, Audit, AuditConfig, BiasFinding,
    Comparison, ComparisonRecord,
};
pub use stats::{holm_bonferroni, is_significant, mann_whitney, mann_whitney_counts, Method, TestResult};

/// Size the global worker pool. Only the first call takes effect.
pub fn set_threads(n: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}
