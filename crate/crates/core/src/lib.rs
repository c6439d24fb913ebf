//! Toolkit for measuring and closing the modality gap between visual and
//! text goal embeddings, and for testing whether a policy trained on one
//! goal modality can be driven by the other.
//!
//! * [`embedding`] / [`io`]: vectors, banks and their file formats.
//! * [`diagnostics`]: gap statistics, similarity heatmaps, retrieval, PCA.
//! * [`collapse`]: mean-centring and dimension deletion.
//! * [`corrupt`]: cosine-similarity and Gaussian noise augmentation.
//! * [`contrastive`]: toy encoders trained with InfoNCE.
//! * [`bench`]: the gridworld transfer benchmark.
//! * [`config`]: the declarative run configuration used by the CLI.

pub mod bench;
pub mod collapse;
pub mod config;
pub mod contrastive;
pub mod corrupt;
pub mod diagnostics;
pub mod embedding;
pub mod error;
pub mod io;
pub mod nn;
pub mod rng;

pub use collapse::CollapseTransform;
pub use corrupt::{CorruptConfig, Noise};
pub use diagnostics::GapReport;
pub use embedding::{cosine_similarity, normalize, Embedding, EmbeddingBank, Modality};
pub use error::{Error, Result};
pub use io::{load_bank, save_bank, BankFormat};
