//! Synthetic stereo scenes and their on-disk form.

pub mod dataset;
pub mod pnm;
pub mod scene;

pub use dataset::{load_dataset, parse_manifest, read_manifest, write_dataset, Manifest};
pub use pnm::{read_image, write_image};
pub use scene::{render, render_stereo, Layer, Rect, Rendered, SceneSpec, TextureKind};
