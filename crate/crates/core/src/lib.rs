//! Principled learning for listwise re-ranking.
//!
//! A self-attention re-ranker scores each item of an initially ordered list.
//! Training adds two consistency objectives to the listwise log-loss: the
//! re-ranked order should be a fixed point of the re-ranker (convergence
//! consistency) and swapping two adjacent items of the input order should not
//! change the output (adversarial consistency). Both are enforced through a
//! position-weighted squared difference of score vectors.

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod obedience;
pub mod positions;
pub mod sample;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{init_params, loss_and_gradients, HeadMode, PositionMode, RerankerConfig, RerankerParams};
pub use positions::{adjacent_swap, scores_to_positions, PositionVector, ScoreVector};
pub use sample::{validate_sample, Dataset, ListSample, SplitTag, Validation};
pub use tensor::Matrix;
