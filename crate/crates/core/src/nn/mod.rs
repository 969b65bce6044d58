//! From-scratch sliding-window bidirectional LSTM distance regressor.

pub mod adam;
pub mod lstm;
pub mod model;
pub mod tensor;
pub mod train;
pub mod window;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use lstm::{lstm_cell_step, LstmDirection};
pub use model::{
    backward_window, batch_loss, bilstm_forward, forward, head_forward, loss_and_gradients,
    mse_loss, predict, predict_batch, ModelConfig, ModelParams, Network,
};
pub use tensor::Tensor;
pub use train::{
    predict_trace, train, train_with_progress, EpochLog, TracePrediction, TrainConfig, TrainingLog,
};
pub use window::{make_windows, window_inputs, WindowBatch, WindowConfig};
