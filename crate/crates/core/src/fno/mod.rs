//! 2D Fourier neural operator: forward pass, hand-derived reverse mode,
//! Adam training, and the model container format.

pub mod fft2;
pub mod grad;
pub mod model;
pub mod serial;
pub mod train;

pub use model::{build_input_channels, Activation, FnoConfig, ForwardCache, SurrogateModel};
pub use serial::ModelHeader;
pub use train::{batch_loss, loss_and_gradients, relative_l2, train, Adam, TrainReport, TrainSample};
