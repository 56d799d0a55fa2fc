// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data_pipeline;
pub mod evaluator;
pub mod image_io;
pub mod losses;
pub mod phantom;
pub mod resample;
pub mod sr_models;
pub mod trainer;
