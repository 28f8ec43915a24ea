//! Synthetic paired tasks: sparse-view CT (phantom, projection, view
//! subsampling, filtered back projection) and cheap degradations.

pub mod dataset;
pub mod degrade;
pub mod phantom;
pub mod radon;

pub use dataset::{
    make_paired_dataset, split_sizes, to_unit, Normalization, PairedDataset, Sample, Split,
    TaskSpec, TaskTag,
};
pub use degrade::{degrade, Degradation};
pub use phantom::{gen_phantom, PhantomSpec};
pub use radon::{fbp, radon, subsample_views, Sinogram};
