//! Evaluation metrics (§V): Chamfer distance, F1 score, absolute trajectory
//! error, PSNR, and SSIM, plus the aggregated [`EvalReport`].

mod ate;
mod points;
mod psnr;
mod report;
mod ssim;

pub use ate::ate;
pub use points::{chamfer, default_f1_threshold, f1_score, filter_visible};
pub use psnr::{psnr, PSNR_EXACT_MSE};
pub use report::EvalReport;
pub use ssim::ssim;
