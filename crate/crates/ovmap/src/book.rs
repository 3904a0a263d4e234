//! Compiles the guide's code samples as doctests.
//!
//! Each module mirrors one chapter of the book in `book/src/`; the chapter
//! markdown is included verbatim, so every fenced Rust block in the guide
//! builds and runs under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/getting-started.md")]
mod getting_started {}

#[doc = include_str!("../../../book/src/depth-and-geometry.md")]
mod depth_and_geometry {}

#[doc = include_str!("../../../book/src/segmentation.md")]
mod segmentation {}

#[doc = include_str!("../../../book/src/masks-and-refinement.md")]
mod masks_and_refinement {}

#[doc = include_str!("../../../book/src/tsdf-fusion.md")]
mod tsdf_fusion {}

#[doc = include_str!("../../../book/src/association.md")]
mod association {}

#[doc = include_str!("../../../book/src/meshing-and-export.md")]
mod meshing_and_export {}

#[doc = include_str!("../../../book/src/synthetic-scenes.md")]
mod synthetic_scenes {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}

#[doc = include_str!("../../../book/src/pipeline-and-cli.md")]
mod pipeline_and_cli {}

#[doc = include_str!("../../../book/src/map-format.md")]
mod map_format {}
