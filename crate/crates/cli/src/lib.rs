//! Library surface of the eggscan CLI: each subcommand is an ordinary
//! function over a loaded [`RunConfig`], so integration tests drive the
//! exact code paths the binary runs.

pub mod commands;

pub use commands::{
    cmd_evaluate, cmd_predict, cmd_split, cmd_synth, cmd_train, load_effective_config,
    DetectionsFile, ImagePredictions, PredictError, PredictionsFile, SplitManifest, Stage,
};
