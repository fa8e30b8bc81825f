//! Stage 2: implicit texture, view-aware encoding and neural shader trained
//! on the frozen stage-1 mesh.

pub mod encoding;
pub mod model;
pub mod train;

pub use encoding::ViewEncoding;
pub use model::{render_view, shader_spec, AppearanceModel, FragmentInputGrad, FragmentScratch, InitOptions};
pub use train::{prepare_bake_mesh, train_appearance, AppearanceConfig, AppearanceLog, AppearanceTrainer, BakedModel};
