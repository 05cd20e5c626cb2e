//! Evaluation metrics: energy filtering, peak alignment, contrastive
//! audio/speech scoring and retrieval, and distribution distances over
//! supplied embeddings or posteriors.

mod casp;
mod energy;
mod peaks;
mod report;
mod stats;

pub use casp::{
    attention_pool, casp_train, crop_or_pad, dual_score, score_matrix, topk_from_scores, topk_retrieval, Branch,
    CaspConfig, CaspLog, CaspModel,
};
pub use energy::{energy_db, filter_pair, keep_energies, DEFAULT_THRESHOLD_DB, ENERGY_FLOOR};
pub use peaks::{av_align, detect_peaks, envelope_peaks, PeakConfig, PeakList, DEFAULT_WINDOW_S};
pub use report::{EvalReport, RetrievalReference, Thresholds};
pub use stats::{frechet, inception_score, kl_metric, GaussianStats, COV_REG, PROB_FLOOR};
