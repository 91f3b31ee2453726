//! Synthetic data, file formats, manifests and checkpoints.

mod checkpoint;
mod dataset;
mod manifest;
pub mod netpbm;
mod resize;
pub mod synth;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_into, save_checkpoint, Checkpoint, CKPT_MAGIC};
pub use dataset::{generate_dataset, GenerateOptions, GeneratedDataset};
pub use manifest::{Manifest, ManifestEntry};
pub use netpbm::{read_fixations, read_image, read_map, write_image, write_map, Raster};
pub use resize::{resize_bilinear, resize_fixations};
pub use synth::{render, render_conflict, Scene, FIXATIONS};

use crate::blocks::DomainLabel;
use crate::error::Result;
use crate::tensor::Tensor;

/// One training or evaluation example at model resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[S, S, 3]` in [0, 1].
    pub image: Tensor,
    /// Ground-truth map, `S*S` values in [0, 1] with peak 1.
    pub map: Vec<f64>,
    /// `S*S` values, 1 at fixated pixels.
    pub fixations: Vec<f64>,
    pub label: DomainLabel,
}

impl Sample {
    /// The values a scene has after a trip through its 8-bit files.
    pub fn from_scene(scene: &Scene, id: impl Into<String>) -> Result<Self> {
        let s = scene.size;
        let image = Tensor::new(&[s, s, 3], scene.image.iter().map(|&b| b as f64 / 255.0).collect())?;
        let mut fixations = vec![0.0; s * s];
        for &i in &scene.fixations {
            fixations[i] = 1.0;
        }
        Ok(Self {
            id: id.into(),
            image,
            map: scene.map.iter().map(|&b| b as f64 / 255.0).collect(),
            fixations,
            label: scene.label,
        })
    }
}

pub fn synthetic_sample(label: DomainLabel, size: usize, seed: u64, id: &str) -> Result<Sample> {
    Sample::from_scene(&render(label, size, seed)?, id)
}

/// `count` samples per domain, seeded per sample.
pub fn synthetic_set(size: usize, count: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(4 * count);
    for d in DomainLabel::ALL {
        for i in 0..count {
            let idx = (d.code() * count + i) as u64;
            out.push(synthetic_sample(d, size, seed ^ idx, &format!("{}-{i:04}", d.name()))?);
        }
    }
    Ok(out)
}

/// `pairs` conflicting pairs: each image appears once as natural-eye and
/// once as e-commerce with different targets.
pub fn conflict_set(size: usize, pairs: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(2 * pairs);
    for i in 0..pairs {
        let scenes = render_conflict(size, crate::tensor::derive_seed(seed, "conflict") ^ i as u64)?;
        for sc in &scenes {
            out.push(Sample::from_scene(sc, format!("conflict-{i:04}-{}", sc.label.name()))?);
        }
    }
    Ok(out)
}
