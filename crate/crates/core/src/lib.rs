//! Quality-diversity subset selection over embedded datasets.
//!
//! A subset is scored by facility-location coverage of the full dataset plus
//! the normalized quality of its members, mixed by a weight `alpha`.
//! Selection is greedy (exact, lazy, or stochastic) or one of two simpler
//! variants (per-cluster quotas, similarity threshold).

pub mod cli;
pub mod embed;
pub mod error;
pub mod facility;
pub mod io;
mod kernel;
pub mod metrics;
pub mod select;
pub mod similarity;
pub mod testkit;
pub mod types;
pub mod variants;

pub use error::{QditError, Result};
pub use facility::{fl_score, CoverageState, SimilarityBackend};
pub use io::{load_dataset, load_jsonl, write_result, EmbeddingMatrix};
pub use metrics::{random_baseline, subset_metrics, sweep_alpha, TradeoffPoint};
pub use select::{select, select_greedy, select_lazy, select_stochastic, select_stochastic_lazy};
pub use similarity::{clamped_similarity, cosine_similarity, normalize_quality};
pub use types::{Algorithm, DataPoint, Dataset, SelectionConfig, SelectionResult};
pub use variants::{cluster_quotas, kmeans, select_cluster, select_threshold};
