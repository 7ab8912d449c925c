//! Two-class face-image classification and training-performance benchmark
//! suite: six fine-tuned CNN backbones, a logistic-regression stacking
//! ensemble, a GBDT-on-CNN-features hybrid, confusion-matrix metrics, a
//! wall-clock benchmarking harness, and paper-style report rendering.

pub mod backbones;
pub mod bench;
pub mod cli;
pub mod dataset;
pub mod gbdt;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod report;
pub mod stacking;
pub mod tensor;
pub mod train;
