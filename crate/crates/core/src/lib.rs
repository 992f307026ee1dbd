//! Behavioral phenotyping from windowed 3D pose sequences.
//!
//! The crate is organized as the pipeline runs:
//!
//! - [`dataio`]: pose session files, windowing, egocentric alignment,
//!   z-scoring and session-level splits.
//! - [`synthgen`]: Markov-chain behavior sequences rendered into 23-keypoint
//!   kinematics, with genotype-dependent modulation.
//! - [`encoder`]: patch-embedding transformer, classifier heads, masked-patch
//!   pretraining and checkpoints.
//! - [`training`]: cross-entropy, plateau scheduling, early stopping and the
//!   two-stage (frozen head, then joint fine-tune) protocol.
//! - [`baselines`]: raw, PCA and Haar-wavelet features with linear probes.
//! - [`evaluation`]: accuracy, confusion, k-means, silhouette, NMI, 2D
//!   projection and genotype enrichment.
//! - [`transfer`]: cross-cohort protocols and the all-cohort joint model.
//! - [`pipeline`]: cohort loading and prepared train/val/test windows.
//! - [`runs`]: the end-to-end steps behind each CLI subcommand.

pub mod baselines;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod pipeline;
pub mod runs;
pub mod synthgen;
pub mod training;
pub mod transfer;

pub use error::{CoreError, ErrorKind, Result};
pub use pheno_numerics as numerics;
