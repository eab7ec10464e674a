//! Hierarchical metric learning.
//!
//! A linear projection maps precomputed feature vectors onto the unit sphere
//! and is trained so that pairwise cosine distances follow the ordering
//! implied by a label taxonomy. The crate provides:
//!
//! * [`hierarchy`]: label paths, the taxonomy tree and pair ranks
//! * [`rank_loss`]: the rank-based loss with its analytic gradient
//! * [`quadruplet_loss`]: a two-margin quadruplet baseline
//! * [`projection`]: standardization, the projection layer and optimizers
//! * [`batching`]: rank-balanced and unconstrained batch plans
//! * [`evaluation`]: cosine silhouette per hierarchy level and early stopping
//! * [`dataio`]: CSV ingestion, splitting and a synthetic data generator
//! * [`train`]: the experiment runner tying everything together
//! * [`gradcheck`]: finite-difference checks of every backward pass

pub mod batching;
pub mod config;
pub mod dataio;
mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod hierarchy;
pub mod projection;
pub mod quadruplet_loss;
pub mod rank_loss;
mod rng;
pub mod train;

pub use crate::batching::{BatchMode, BatchPlan};
pub use crate::config::TrainConfig;
pub use crate::dataio::{Dataset, Split, SynthSpec};
pub use crate::error::{Error, Result};
pub use crate::evaluation::{EarlyStopper, SilhouetteReport};
pub use crate::hierarchy::{LabelPath, LabelTree, RankMap};
pub use crate::projection::{FeatureStats, Optimizer, ProjectionModel};
pub use crate::quadruplet_loss::{Margins, Quadruplet};
pub use crate::rank_loss::{PairTable, RankSpans};
