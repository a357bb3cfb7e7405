//! Datasets: deterministic synthetic images, IDX reading/writing and
//! labeled/unlabeled splitting.

mod idx;
mod synthetic;

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx, write_idx_images, write_idx_labels};
pub use synthetic::{gen_synthetic, prototype, SyntheticSpec, NUM_PROTOTYPES};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// Images in `[0, 1]` with optional class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Tensor>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    rows: usize,
    cols: usize,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<Option<usize>>, num_classes: usize, rows: usize, cols: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        for img in &images {
            if img.shape() != [rows * cols] {
                return Err(Error::shape("Dataset::new", img.shape(), &[rows * cols]));
            }
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("pixel values must lie in [0, 1]".into()));
            }
        }
        if let Some(bad) = labels.iter().flatten().find(|&&l| l >= num_classes) {
            return Err(Error::UnknownLabel {
                label: *bad,
                num_classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            rows,
            cols,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &Tensor {
        &self.images[i]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn input_dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Indices of samples labeled `class`, in dataset order.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(class))
            .map(|(i, _)| i)
            .collect()
    }

    /// A copy keeping only the listed samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.images[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            self.rows,
            self.cols,
        )
    }
}

/// Keeps exactly `labeled_per_class` labels per class, chosen uniformly with a
/// seeded generator; every other label is removed. Images and order are kept.
pub fn split_semi_supervised(dataset: &Dataset, labeled_per_class: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; dataset.len()];
    for class in 0..dataset.num_classes {
        let members = dataset.indices_of_class(class);
        if members.len() < labeled_per_class {
            return Err(Error::InsufficientClass {
                class,
                available: members.len(),
                requested: labeled_per_class,
            });
        }
        for pick in sample(&mut rng, members.len(), labeled_per_class) {
            keep[members[pick]] = true;
        }
    }
    let labels = dataset
        .labels
        .iter()
        .zip(&keep)
        .map(|(l, &k)| if k { *l } else { None })
        .collect();
    Ok(Dataset {
        labels,
        ..dataset.clone()
    })
}
