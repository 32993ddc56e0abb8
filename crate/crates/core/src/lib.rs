//! Sparse restricted Boltzmann machines, deep belief networks and a
//! divide-and-concur neighborhood embedding for neuroimaging data, with a
//! synthetic ground-truth generator and the evaluation tools used to score
//! them.
//!
//! - [`data`]: sample matrices, matrix files, voxel preprocessing
//! - [`rbm`]: Gaussian-visible / tanh-hidden RBM trained by CD with L1 decay
//! - [`dbn`]: greedy layer-wise pretraining and softmax fine-tuning
//! - [`embed`]: k-NN constraint embedding solved by the difference map
//! - [`synth`]: blob sources, smooth time courses, labeled volumes
//! - [`eval`]: matching, FNC, modularity, cross-validation, classifiers

pub mod data;
pub mod dbn;
pub mod embed;
pub mod eval;
pub mod rbm;
pub mod synth;

pub use data::{SampleMatrix, VolumeGeometry};
