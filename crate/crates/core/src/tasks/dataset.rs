//! Paired `(x, y0)` datasets with a seeded train/val/test split.

use serde::{Deserialize, Serialize};

use super::degrade::{degrade, Degradation};
use super::phantom::{gen_phantom, PhantomSpec};
use super::radon::{default_detectors, fbp, radon, subsample_views};
use crate::error::{CmdmError, Result};
use crate::grid::Grid2D;
use crate::par::map_indexed;
use crate::rng::RngStream;

const SAMPLE_TAG: u64 = 0;
const SPLIT_TAG: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskTag {
    #[serde(rename = "sparse-view-6x")]
    SparseView6x,
    #[serde(rename = "sparse-view-4x")]
    SparseView4x,
    Blur,
    Mask,
    Identity,
}

impl TaskTag {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskTag::SparseView6x => "sparse-view-6x",
            TaskTag::SparseView4x => "sparse-view-4x",
            TaskTag::Blur => "blur",
            TaskTag::Mask => "mask",
            TaskTag::Identity => "identity",
        }
    }

    /// View reduction factor for sparse-view tasks.
    pub fn view_factor(self) -> Option<usize> {
        match self {
            TaskTag::SparseView6x => Some(6),
            TaskTag::SparseView4x => Some(4),
            _ => None,
        }
    }
}

impl std::fmt::Display for TaskTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskTag {
    type Err = CmdmError;

    fn from_str(s: &str) -> Result<Self> {
        [
            TaskTag::SparseView6x,
            TaskTag::SparseView4x,
            TaskTag::Blur,
            TaskTag::Mask,
            TaskTag::Identity,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| CmdmError::invalid(format!("unknown task {s:?}")))
    }
}

/// Generation parameters shared by all tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub phantom: PhantomSpec,
    /// Views of the fully sampled sinogram.
    pub full_views: usize,
    /// Detector count; `None` means 1.5 × image size.
    pub detectors: Option<usize>,
    /// Overrides the task's own view reduction factor.
    pub view_factor: Option<usize>,
    pub blur_sigma: f64,
    pub mask_fraction: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            phantom: PhantomSpec::default(),
            full_views: 360,
            detectors: None,
            view_factor: None,
            blur_sigma: 1.5,
            mask_fraction: 0.25,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self, task: TaskTag) -> Result<()> {
        self.phantom.validate()?;
        if let Some(f) = self.view_factor.or(task.view_factor()) {
            if f == 0 || self.full_views % f != 0 {
                return Err(CmdmError::invalid(format!(
                    "view factor {f} does not divide {} views",
                    self.full_views
                )));
            }
        }
        Ok(())
    }
}

/// One aligned pair, already normalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Grid2D,
    pub y0: Grid2D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Affine map from the raw intensity range `[lo, hi]` to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lo: f64,
    pub hi: f64,
}

impl Normalization {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(CmdmError::invalid(format!(
                "degenerate intensity range [{lo}, {hi}]"
            )));
        }
        Ok(Normalization { lo, hi })
    }

    pub fn normalize(&self, raw: &Grid2D) -> Result<Grid2D> {
        let s = 2.0 / (self.hi - self.lo);
        raw.map(|v| (v - self.lo) * s - 1.0)
    }

    pub fn denormalize(&self, g: &Grid2D) -> Result<Grid2D> {
        let s = 0.5 * (self.hi - self.lo);
        g.map(|v| (v + 1.0) * s + self.lo)
    }
}

/// `[-1, 1] -> [0, 1]`, the scale on which metrics are computed.
pub fn to_unit(g: &Grid2D) -> Result<Grid2D> {
    g.map(|v| 0.5 * (v + 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    pub task: TaskTag,
    pub spec: TaskSpec,
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub splits: Vec<Split>,
    pub normalization: Normalization,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    pub fn split_samples(&self, split: Split) -> Vec<Sample> {
        self.indices(split)
            .into_iter()
            .map(|i| self.samples[i].clone())
            .collect()
    }
}

/// Raw (unnormalised) pair for sample `i`.
pub fn make_raw_pair(
    task: TaskTag,
    spec: &TaskSpec,
    rng: &mut RngStream,
) -> Result<(Grid2D, Grid2D)> {
    let phantom = gen_phantom(rng, &spec.phantom)?;
    let size = spec.phantom.image_size;
    match task {
        TaskTag::SparseView6x | TaskTag::SparseView4x => {
            let factor = spec.view_factor.or(task.view_factor()).unwrap_or(1);
            let nd = spec.detectors.unwrap_or_else(|| default_detectors(size));
            let full = radon(&phantom, spec.full_views, nd)?;
            let y0 = fbp(&full, size)?;
            let x = fbp(&subsample_views(&full, factor)?, size)?;
            Ok((x, y0))
        }
        TaskTag::Blur => Ok((
            degrade(
                &phantom,
                Degradation::Blur {
                    sigma: spec.blur_sigma,
                },
                rng,
            )?,
            phantom,
        )),
        TaskTag::Mask => Ok((
            degrade(
                &phantom,
                Degradation::Mask {
                    fraction: spec.mask_fraction,
                },
                rng,
            )?,
            phantom,
        )),
        TaskTag::Identity => Ok((phantom.clone(), phantom)),
    }
}

/// Split sizes for `n` samples: 80% train, 10% val, the rest test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

/// Generates `n` pairs from per-sample streams `rng / [0, i]`, normalises
/// them jointly to `[-1, 1]` and assigns splits by a shuffle drawn from
/// `rng / [1]`.
pub fn make_paired_dataset(
    task: TaskTag,
    n: usize,
    rng: &RngStream,
    spec: &TaskSpec,
) -> Result<PairedDataset> {
    if n == 0 {
        return Err(CmdmError::invalid("dataset size must be at least 1"));
    }
    spec.validate(task)?;
    let ids: Vec<u64> = (0..n as u64).collect();
    let raw = map_indexed(&ids, |_, &i| {
        make_raw_pair(task, spec, &mut rng.child(&[SAMPLE_TAG, i]))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, y0) in &raw {
        lo = lo.min(x.min()).min(y0.min());
        hi = hi.max(x.max()).max(y0.max());
    }
    if hi <= lo {
        // Constant data (e.g. empty phantoms): keep the nominal range.
        lo = 0.0;
        hi = 1.0;
    }
    let normalization = Normalization::new(lo, hi)?;
    let samples = raw
        .iter()
        .map(|(x, y0)| {
            Ok(Sample {
                x: normalization.normalize(x)?,
                y0: normalization.normalize(y0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..n).collect();
    rng.child(&[SPLIT_TAG]).shuffle(&mut order);
    let (train, val, _) = split_sizes(n);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(PairedDataset {
        task,
        spec: spec.clone(),
        seed: rng.master_seed(),
        samples,
        splits,
        normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> TaskSpec {
        TaskSpec {
            phantom: PhantomSpec {
                image_size: 16,
                ..PhantomSpec::default()
            },
            full_views: 36,
            ..TaskSpec::default()
        }
    }

    #[test]
    fn identity_task_pairs_are_equal() {
        let d = make_paired_dataset(
            TaskTag::Identity,
            10,
            &RngStream::derive(1, &[]),
            &small_spec(),
        )
        .unwrap();
        assert!(d.samples.iter().all(|s| s.x == s.y0));
    }

    #[test]
    fn splits_partition_the_dataset() {
        let d = make_paired_dataset(TaskTag::Blur, 20, &RngStream::derive(2, &[]), &small_spec())
            .unwrap();
        let (tr, va, te) = (
            d.indices(Split::Train),
            d.indices(Split::Val),
            d.indices(Split::Test),
        );
        assert_eq!((tr.len(), va.len(), te.len()), (16, 2, 2));
        let mut all: Vec<usize> = tr.into_iter().chain(va).chain(te).collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn normalized_range_is_unit_interval() {
        let d = make_paired_dataset(
            TaskTag::SparseView6x,
            4,
            &RngStream::derive(3, &[]),
            &small_spec(),
        )
        .unwrap();
        let lo = d
            .samples
            .iter()
            .map(|s| s.x.min().min(s.y0.min()))
            .fold(f64::INFINITY, f64::min);
        let hi = d
            .samples
            .iter()
            .map(|s| s.x.max().max(s.y0.max()))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let back = d
            .normalization
            .denormalize(&d.normalization.normalize(&d.samples[0].x).unwrap())
            .unwrap();
        for (a, b) in back.data().iter().zip(d.samples[0].x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = make_paired_dataset(TaskTag::Mask, 5, &RngStream::derive(4, &[]), &small_spec())
            .unwrap();
        let b = make_paired_dataset(TaskTag::Mask, 5, &RngStream::derive(4, &[]), &small_spec())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn task_names_round_trip() {
        for t in [
            "sparse-view-6x",
            "sparse-view-4x",
            "blur",
            "mask",
            "identity",
        ] {
            assert_eq!(t.parse::<TaskTag>().unwrap().as_str(), t);
        }
        assert!("sparse-view-5x".parse::<TaskTag>().is_err());
        assert!(make_paired_dataset(
            TaskTag::SparseView6x,
            1,
            &RngStream::derive(0, &[]),
            &TaskSpec {
                view_factor: Some(7),
                ..small_spec()
            }
        )
        .is_err());
    }
}
