//! Cameras, raster grids and dataset I/O.

mod camera;
mod dataset;
pub mod pfm;
mod raster;

pub use camera::{Camera, Projection};
pub(crate) use dataset::frame_name;
pub use dataset::{
    load_dataset, load_entities_png, load_image_png, load_mask_png, read_json, save_dataset, save_entities_png,
    save_image_png, save_mask_png, write_json, CameraRecord, SceneDataset,
};
pub use raster::{BinaryMask, DepthMap, EntityMap, ImageBuffer};
