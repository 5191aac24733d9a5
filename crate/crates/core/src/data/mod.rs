//! Example records, dataset validation and splitting, and the synthetic shapes world.

mod schema;
mod split;
mod task;
mod verify;
mod world;

use alloc::string::String;

pub use schema::{validate_dataset, NleExample, ObjectRecord, PredictionRecord};
pub use split::split_dataset;
pub use task::Task;
pub use verify::{recover_objects, verify_example, RecoveredObject};
pub use world::{
    generate_world, image_id, image_path, palette_rgb, Scene, SceneObject, SplitCounts, World, WorldConfig,
    WorldImage, WorldManifest, WorldSplit, LARGE, PALETTE, SHAPES, SMALL,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,
    #[error("duplicate example id {0}")]
    DuplicateId(String),
    #[error("example {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("split: {0}")]
    Split(String),
    #[error("world configuration: {0}")]
    World(String),
}
