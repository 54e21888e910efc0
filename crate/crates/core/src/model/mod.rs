//! Network variants, parameter storage, forward and backward passes, checkpoints.

mod checkpoint;
mod featmap;
mod network;
mod spec;

pub use checkpoint::{
    apply_weights, load_checkpoint, read_checkpoint, read_weights, save_checkpoint, write_atomic, write_checkpoint,
    write_weights, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, WEIGHTS_MAGIC,
};
pub use featmap::{dump_feature_map, render_feature_map, tile_layout};
pub use network::{FaceGeometry, ForwardPass, Gradients, Mode, Model, Param, Stage};
pub use spec::*;
