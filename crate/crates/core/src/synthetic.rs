//! Synthetic referring data: one bright coloured shape on a dark noisy
//! background, described by a template expression such as "the red circle".

use std::path::Path;

use mrsnet_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_model::{
    write_rgb, AnnotationType, BinaryMask, CategoryTaxonomy, DatasetIndex, Expression, Language,
    Manifest, ManifestEntry, ReferringSample,
};
use crate::error::{Error, Result};

const COLORS: [(&str, [f64; 3]); 4] = [
    ("red", [0.95, 0.15, 0.1]),
    ("green", [0.15, 0.9, 0.2]),
    ("blue", [0.15, 0.3, 0.95]),
    ("yellow", [0.95, 0.9, 0.1]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    fn category(self) -> &'static str {
        match self {
            Shape::Circle => "storage_tank",
            Shape::Square => "building",
            Shape::Triangle => "airplane",
        }
    }

    fn contains(self, dy: f64, dx: f64, r: f64) -> bool {
        match self {
            Shape::Circle => dy * dy + dx * dx <= r * r,
            Shape::Square => dy.abs() <= r * 0.85 && dx.abs() <= r * 0.85,
            // Apex up, base at dy = r.
            Shape::Triangle => dy <= r && dy >= -r && dx.abs() <= (dy + r) / 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOptions {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Every `k`-th sample becomes a non-object sample whose expression
    /// names a colour that does not appear.
    pub non_object_every: Option<usize>,
    pub region: String,
}

impl SyntheticOptions {
    pub fn new(count: usize, size: usize, seed: u64) -> Self {
        Self {
            count,
            size,
            seed,
            non_object_every: None,
            region: "default".into(),
        }
    }
}

pub fn generate(opts: &SyntheticOptions) -> Result<Vec<ReferringSample>> {
    if opts.size < crate::data_model::MIN_IMAGE_SIDE {
        return Err(Error::Config(format!(
            "synthetic images must be at least {} pixels",
            crate::data_model::MIN_IMAGE_SIDE
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, 0.03).expect("valid std");
    let n = opts.size;
    let shapes = [Shape::Circle, Shape::Square, Shape::Triangle];
    (0..opts.count)
        .map(|i| {
            let shape = shapes[rng.random_range(0..shapes.len())];
            let color_idx = rng.random_range(0..COLORS.len());
            let (color_name, rgb) = COLORS[color_idx];
            let r = rng.random_range(n as f64 / 8.0..n as f64 / 4.0);
            let cy = rng.random_range(r..n as f64 - r);
            let cx = rng.random_range(r..n as f64 - r);
            let non_object = opts.non_object_every.is_some_and(|k| k > 0 && i % k == k - 1);
            let inside = BinaryMask::from_fn(n, n, |y, x| {
                shape.contains(y as f64 + 0.5 - cy, x as f64 + 0.5 - cx, r)
            });
            let mut data = vec![0.0; 3 * n * n];
            for c in 0..3 {
                for p in 0..n * n {
                    let base = if inside.data()[p] == 1 { rgb[c] } else { 0.12 };
                    data[c * n * n + p] = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            let (text, mask, annotation_type) = if non_object {
                let other = COLORS[(color_idx + 1 + rng.random_range(0..COLORS.len() - 1)) % COLORS.len()].0;
                (
                    format!("the {other} {}", shape.name()),
                    BinaryMask::zeros(n, n),
                    AnnotationType::NonObject,
                )
            } else {
                (
                    format!("the {color_name} {}", shape.name()),
                    inside,
                    AnnotationType::Single,
                )
            };
            Ok(ReferringSample {
                image_id: format!("synthetic_{:05}", i),
                image: Tensor::new([3, n, n], data)?,
                expression: Expression {
                    text,
                    language: Language::En,
                    dimensions: vec![crate::data_model::Dimension::Color],
                },
                mask,
                annotation_type,
                category: shape.category().to_string(),
                region: opts.region.clone(),
            })
        })
        .collect()
}

/// In-memory dataset of synthetic samples with the standard taxonomy.
pub fn dataset(opts: &SyntheticOptions) -> Result<DatasetIndex> {
    DatasetIndex::from_samples(CategoryTaxonomy::standard(), generate(opts)?)
}

/// Writes samples as PNGs under `dir` plus `dir/manifest.json`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, samples: &[ReferringSample]) -> Result<std::path::PathBuf> {
    for sub in ["imgs", "masks"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image = format!("imgs/{}.png", s.image_id);
        let mask = format!("masks/{}_{i}.png", s.image_id);
        write_rgb(&dir.join(&image), &s.image)?;
        s.mask.write_png(&dir.join(&mask))?;
        entries.push(ManifestEntry {
            id: None,
            image,
            mask,
            text: s.expression.text.clone(),
            lang: s.expression.language,
            annotation_type: s.annotation_type,
            category: s.category.clone(),
            region: s.region.clone(),
            dimensions: s.expression.dimensions.clone(),
        });
    }
    let manifest = Manifest {
        categories: CategoryTaxonomy::standard(),
        samples: entries,
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_valid_and_deterministic() {
        let mut opts = SyntheticOptions::new(6, 32, 4);
        opts.non_object_every = Some(3);
        let a = generate(&opts).unwrap();
        let b = generate(&opts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.mask, y.mask);
            assert_eq!(x.expression, y.expression);
            assert!(x.check().is_ok());
        }
        assert_eq!(a[2].annotation_type, AnnotationType::NonObject);
        assert!(a[0].mask.count() > 0);
    }
}
