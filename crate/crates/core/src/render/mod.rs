//! Software differentiable rasterizer producing RGB, mask and depth images.

mod camera;
mod raster;
mod texture;

pub use camera::{Camera, Projected};
pub use raster::{
    rasterize, rasterize_backward, RenderGradients, RenderOutput, RenderRecord, Surface, BACKGROUND_DEPTH, NO_TRIANGLE,
};
pub use texture::{BilinearTap, Texture};
