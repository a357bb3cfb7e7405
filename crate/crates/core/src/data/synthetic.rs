use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const NUM_PROTOTYPES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    /// Image side length; images are `side x side`.
    pub side: usize,
    /// Half-width of the uniform pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 4,
            per_class: 500,
            side: 16,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.side < 4 {
            return Err(Error::Config(format!("image side {} is below 4", self.side)));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::Config(format!("noise amplitude {} outside [0, 0.5]", self.noise)));
        }
        if self.num_classes == 0 || self.per_class == 0 {
            return Err(Error::Config("class count and samples per class must be positive".into()));
        }
        if self.num_classes > NUM_PROTOTYPES {
            return Err(Error::Config(format!(
                "{} classes requested but only {NUM_PROTOTYPES} prototypes exist",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// The noiseless stroke pattern of class `class` on a `side x side` grid.
///
/// 0 horizontal bar, 1 vertical bar, 2 diagonal, 3 anti-diagonal, 4 plus,
/// 5 box outline, 6 X, 7 L shape, 8 T shape, 9 two horizontal bars,
/// 10 two vertical bars, 11 filled centre square.
pub fn prototype(class: usize, side: usize) -> Tensor {
    let s = side as isize;
    let w = (side / 8).max(1) as isize;
    let mid = s / 2;
    let q1 = s / 4;
    let q3 = s - 1 - s / 4;
    let band = |v: isize, centre: isize| v >= centre - w / 2 && v < centre - w / 2 + w;
    let near = |v: isize, centre: isize| (v - centre).abs() < w;
    let edge = |v: isize| v < w || v >= s - w;
    let on = |r: isize, c: isize| -> bool {
        match class {
            0 => band(r, mid),
            1 => band(c, mid),
            2 => near(r, c),
            3 => near(r, s - 1 - c),
            4 => band(r, mid) || band(c, mid),
            5 => edge(r) || edge(c),
            6 => near(r, c) || near(r, s - 1 - c),
            7 => c < w || r >= s - w,
            8 => r < w || band(c, mid),
            9 => band(r, q1) || band(r, q3),
            10 => band(c, q1) || band(c, q3),
            _ => (q1..=q3).contains(&r) && (q1..=q3).contains(&c),
        }
    };
    let data = (0..s)
        .flat_map(|r| (0..s).map(move |c| (r, c)))
        .map(|(r, c)| if on(r, c) { 1.0 } else { 0.0 })
        .collect();
    Tensor::vector(data)
}

/// Sample `i` has class `i % num_classes`; pixels are the class prototype plus
/// uniform noise in `[-noise, noise]`, clipped to `[0, 1]` and quantized to
/// the 8-bit grid `j / 255` so the data survives an IDX round trip.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let protos: Vec<Tensor> = (0..spec.num_classes).map(|c| prototype(c, spec.side)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_classes * spec.per_class;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.num_classes;
        let img = if spec.noise > 0.0 {
            Tensor::vector(
                protos[class]
                    .data()
                    .iter()
                    .map(|&p| quantize((p + rng.random_range(-spec.noise..=spec.noise)).clamp(0.0, 1.0)))
                    .collect(),
            )
        } else {
            protos[class].clone()
        };
        images.push(img);
        labels.push(Some(class));
    }
    Dataset::new(images, labels, spec.num_classes, spec.side, spec.side)
}

fn quantize(v: f64) -> f64 {
    (v * 255.0).round() / 255.0
}
