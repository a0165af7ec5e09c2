//! Training losses and evaluation metrics.

mod losses;
mod metrics;

pub use losses::{
    au_loss, au_loss_with_grad, au_weights, ccc, ccc_loss_with_grad, ccc_with_grad, ce_loss, ce_loss_sum,
    ce_loss_with_grad, mse, mse_with_grad, va_loss, va_loss_with_grad, AuWeights, PROB_EPS,
};
pub use metrics::{au_macro_f1, binary_f1, challenge_score, f1_from_counts, macro_f1, EvalReport};
