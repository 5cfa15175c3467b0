//! Multi-task loss, batch scheduling, Adam and the continual-update procedure.

mod adam;
mod example;
mod loss;
mod train;

pub use adam::{Adam, ParamStore, BETA1, BETA2, EPSILON};
pub use example::{EncodedExample, Mode, TaskSpan, TrainingExample, TASK_DELIMITER};
pub use loss::{frobenius_sq, multitask_loss, LossTerms};
pub use train::{
    align_batches, continual_update, example_gradients, mean_loss, train, ContinualConfig, ExampleGrad, LossCurve,
    LossRow, PrefixPolicy, TrainConfig,
};
