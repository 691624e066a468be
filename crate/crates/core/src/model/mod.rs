//! The behavior-path matching network.
//!
//! Each historical path is enhanced against its own click, the current path
//! against the candidate item. Historical paths are then gated against the
//! current path, the best `k2` are kept together with the clicks they led
//! to, and those clicks are gated against the candidate. A sigmoid head sees
//! all enhanced paths, the matched paths and clicks, the user and the
//! candidate. Training adds a contrastive term between two masked views of
//! each historical path.

pub mod check;
pub mod config;
pub mod example;
pub mod loss;
pub mod network;
pub mod ops;
pub mod pam;
pub mod pmm;
pub mod train;

pub use config::{ModelConfig, PoolPe, Variant, Vocab};
pub use example::{encode_all, fold_id, Candidate, EncodedExample, EventRows, TrainingExample};
pub use loss::total_loss;
pub use network::{BatchForward, Dbpman, EmbeddingTables, ForwardTrace, PamViews, PemOut};
pub use ops::{embed_behavior, pem_enhance, predict_ctr};
pub use pam::{infonce_loss, pam_views};
pub use pmm::{candidate_activation, pmm_gate, pmm_select, rank_paths, PathSelection};
pub use train::{StepLoss, TrainConfig, Trainer};
pub use check::{gradcheck_miniature, random_examples, GRADCHECK_TOLERANCE};
