//! Edge-message-passing graph neural process model for predicting
//! interactions between drug pairs.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod gradsuite;
pub mod graph;
pub mod head;
pub mod interpret;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod sampling;
pub mod split;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{TrainConfig, UncertaintyInput};
pub use data::{Example, PairDataset};
pub use dataset::{load_dataset, write_atomic, DatasetBundle};
pub use encoder::ForwardMode;
pub use error::{CoreError, Result};
pub use graph::{batch_graphs, build_line_graph, GraphBatch, LineGraph};
pub use loss::LossBreakdown;
pub use metrics::EvalReport;
pub use model::{Model, ModelConfig, PairBatch, PredictionOutput};
pub use optim::AdamW;
pub use train::{fit, fit_model, predict_examples, EpochLog, TrainOutcome};
