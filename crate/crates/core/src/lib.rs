//! CPU engine for a residual denoising CNN on grayscale images: tensor
//! kernels (3x3 convolution, ReLU, batch normalization) with hand-written
//! backward passes, the network itself, Adam/SGD training, the image and
//! dataset pipeline, PSNR/SSIM metrics and a median-filter baseline.
//!
//! No machine-learning framework is involved; the only numerical
//! dependency is a GEMM. Everything is deterministic under explicit seeds:
//! same seed, same bytes — checkpoints, containers, metrics.

pub mod batchnorm;
pub mod checkpoint;
pub mod colormap;
pub mod container;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod median;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod optim;
pub mod pipeline;
pub mod relu;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use image::ImageGray8;
pub use model::DnCnn;
pub use tensor::{Mode, Scalar, Tensor4};
