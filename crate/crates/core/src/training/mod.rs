//! Pre-training and fine-tuning objectives and their epoch loops.

mod config;
mod epochs;
mod labels;
mod losses;
mod optim;

pub use config::{OptimizerKind, TaskType, TrainConfig};
pub use epochs::{
    finetune_loss_var, plan_pretrain, pretrain_loss_var, retrieval_hit_at_1, FinetuneCache, FinetunePlan, LossReport,
    LossWeights, PretrainPlan, Trainer,
};
pub use labels::{answer_matches, positive_probabilities, sample_positive, select_positives, WeakLabels};
pub use losses::{loss_gen_var, loss_kae_var, loss_ret, loss_ret_var, loss_vae_var, retrieval_nll_var, QuestionIds};
pub use optim::Optimizer;
