//! Image metrics, Chamfer distance, error maps and reports.

pub mod chamfer;
pub mod colormap;
pub mod metrics;
pub mod report;

pub use chamfer::{chamfer, chamfer_points, chamfer_surfaces, MeshSurface, RaySurface};
pub use colormap::{error_map, viridis};
pub use metrics::{masked_psnr, mse, psnr, ssim};
pub use report::{MetricReport, ViewMetrics};
