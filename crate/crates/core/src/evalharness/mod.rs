//! Evaluation protocols: robustness sweeps, cross-taxonomy OOD evaluation,
//! data-constrained subsampling and frozen-extractor transfer probes.

mod ood;
mod robustness;
mod subsample;
mod transfer;

pub use ood::{ood_eval, LabelMap};
pub use robustness::{adversarial_gradient, robustness_sweep, SweepCurve, SweepPoint, SweepSpec};
pub use subsample::{subsample_protocol, subset_dataset, SubsampleMode, Subset};
pub use transfer::{transfer_all, transfer_probe, ProbeKind, ProbeReport, TransferReport, TransferSpec};
