//! Layout-to-prompt tooling for geometry-conditioned detection data generation.
//!
//! - [`layout`]: boxes, layouts, grids, location tokens and validation
//! - [`token`]: corner discretization and sine-cosine token embeddings
//! - [`prompt`]: prompt serialization with seeded box order and null-text dropout
//! - [`mask`]: foreground prior re-weighting masks
//! - [`augment`]: filter / flip / shift box augmentation
//! - [`geo3d`]: 3D box projection and 8-corner phrases
//! - [`ingest`]: COCO and manifest parsing, statistics, subsets
//! - [`metrics`]: COCO-style average precision
//! - [`session`]: in-process API mirroring the CLI
//! - [`cli`]: the `geoprompt` command line

pub mod augment;
pub mod cli;
pub mod error;
pub mod geo3d;
pub mod ingest;
pub mod io;
pub mod layout;
pub mod mask;
pub mod metrics;
pub mod prompt;
pub mod rng;
pub mod session;
pub mod token;

pub use error::{Error, Result};
pub use layout::{AnnotatedBox, BBox2D, ClassTable, GeometricLayout, GridSpec, LocationToken};
