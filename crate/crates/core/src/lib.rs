//! Category information amounts and information-guided angular margins.
//!
//! The crate is organised bottom-up:
//!
//! - [`stats`]: per-category windowed mean/covariance, the embedding queue and the
//!   exact merge of window statistics into dataset-level statistics.
//! - [`info`]: eigenvalue-floor shrinkage and the log-determinant information amount.
//! - [`loss`]: information normalisation, the margin matrix and the cross-entropy,
//!   normalised-cosine and information-guided angular-margin losses with analytic
//!   gradients.
//! - [`planner`]: storage ratio and memory-optimal queue length.
//! - [`toy`]: synthetic Gaussian classes and a cosine linear classifier trainer that
//!   reports per-class accuracy variance and information/accuracy correlation.
//! - [`cli`]: file formats and the command implementations behind the `igam` binary.
//!
//! ```
//! use igam::info::information_amount_from_embeddings;
//! use igam::planner::{optimal_queue_length, PlanInput, SearchMode};
//! use nalgebra::DMatrix;
//!
//! // two points at ±1 in one dimension: variance 1, half a bit
//! let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
//! assert!((information_amount_from_embeddings(&x)? - 0.5).abs() < 1e-12);
//!
//! let plan = optimal_queue_length(&PlanInput::new(55_800, 128, 20, SearchMode::Grid)?);
//! assert_eq!(plan.d_star, 11_517);
//! # Ok::<(), igam::Error>(())
//! ```

pub mod cli;
pub mod error;
pub mod info;
pub mod loss;
pub mod planner;
pub mod stats;
pub mod toy;

pub use error::{Error, Result};
