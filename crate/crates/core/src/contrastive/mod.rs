//! NT-Xent loss, batch construction, and the contrastive training loop.

mod loss;
mod sampling;
mod schedule;
mod train;

pub use loss::{nt_xent_loss, nt_xent_loss_grad, LossConfig, LossDirection, SimilarityMatrix};
pub use sampling::{crop_audio, sample_text, BatchSpec, SentenceSampleRule};
pub use schedule::{EpochDecision, ScheduleTracker, TrainSchedule};
pub use train::{
    assemble_eval_items, assemble_train_items, train, train_with_evaluator, EpochRecord,
    EvalItem, RetrievalValidator, TrainItem, TrainOptions, TrainingHistory,
};
