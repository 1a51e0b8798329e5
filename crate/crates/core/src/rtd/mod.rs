//! Masking, replacement sampling, RTD/MLM targets and losses.

mod example;
mod loss;
mod mask;
pub mod rng;
mod sample;
mod trajectory;

pub use example::{
    check_compatible, corrupt_example, replace_rate, replacement_dist, CorruptOptions,
    CorruptedExample, ExampleMeta, RtdTargets,
};
pub use loss::{mlm_loss, rtd_loss, rtd_positions, LOSS_EPS};
pub use mask::{apply_mask, drop_tokens, make_mask_plan, MaskPlan};
pub use rng::{mix64, unit_f64, KeyedStream, RngKey, Stream};
pub use sample::{sample_token, sample_with_bits, sample_with_unit};
pub use trajectory::{trajectory_report, TrajectoryRow};
