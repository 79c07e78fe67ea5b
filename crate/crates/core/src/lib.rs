//! Cross-AP channel-gain map inference.
//!
//! A channel-gain map (CGM) stores the large-scale gain from one access point
//! to every cell of a square grid. Given the maps of the APs already deployed
//! in an environment, the model predicts the map of an AP placed at a new
//! location. This crate holds the data model, a ray-traced simulator for
//! synthetic corpora, dataset I/O, input assembly, the baselines, training,
//! evaluation and the shared prediction path.

pub mod assembly;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod inference;
pub mod raycast;
pub mod sim;
pub mod training;

pub use assembly::{assemble, assemble_padded, check_no_leakage, AssemblyConfig, InputStack};
pub use dataset::{read_dataset, write_dataset, Dataset, DatasetManifest, Split};
pub use error::{CkmError, Result};
pub use evaluation::{evaluate, EvalConfig, EvalReport};
pub use grid::{mse, mse_to_rmse, CkmRecord, Coord, GridMap, GridSpec, ObstacleMask, Scenario};
pub use inference::{BaselineConfig, CgmPredictor, ModelPredictor, Scheme};
pub use sim::{gen_corpus, SimConfig};
pub use training::{train, validate, TrainConfig, TrainReport};
