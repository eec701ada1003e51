//! Event detection: a softmax head on the last encoder state, pooled or
//! VLAD-encoded features with linear SVMs, and average precision.

mod finetune;
mod head;
mod metrics;
mod svm;

pub use finetune::{biased_batch, infer_states, inference_frames, pool_average, Finetuner};
pub use head::ClassifierHead;
pub use metrics::{average_precision, mean_average_precision, read_predictions, write_predictions, EvalResult, Prediction};
pub use svm::{svm_objective, svm_train, train_binary, LinearSvm, SVM_ITERS};
