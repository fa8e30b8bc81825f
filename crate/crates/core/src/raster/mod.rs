//! Mesh processing, UV atlasing, rasterisation and ray casting.

pub mod atlas;
pub mod bvh;
pub mod mesh;
pub mod obj;
pub mod rasterize;
pub mod simplify;

pub use atlas::{atlas_capacity, unwrap_uv, UvAtlas};
pub use bvh::Bvh;
pub use mesh::TriangleMesh;
pub use obj::{mtl_string, obj_string, parse_obj, read_obj, write_obj};
pub use rasterize::{raster_backward, rasterize, GBuffer};
pub use simplify::simplify;
