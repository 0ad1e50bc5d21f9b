//! Dataset schema: manifest format, sample types, loading with validation,
//! and the region-stratified train/val/test split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{ColorType, GrayImage, ImageReader, Luma};
use mrsnet_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: usize = 32;
pub const NUM_CATEGORIES: usize = 32;
pub const DEFAULT_REGION: &str = "default";
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// The 32 target categories, in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryTaxonomy {
    names: Vec<String>,
}

impl CategoryTaxonomy {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() != NUM_CATEGORIES {
            return Err(Error::Config(format!(
                "taxonomy must list exactly {NUM_CATEGORIES} categories, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            let valid = !name.is_empty()
                && name
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
            if !valid {
                return Err(Error::Config(format!(
                    "category {name:?} must be a non-empty lowercase token"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate category {name:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Common overhead-imagery targets: transport, infrastructure, land
    /// cover, sports venues, industrial equipment and miscellany.
    pub fn standard() -> Self {
        const NAMES: [&str; NUM_CATEGORIES] = [
            "car",
            "ship",
            "train",
            "airplane",
            "bridge",
            "road",
            "road_intersection",
            "building",
            "airport_runway",
            "lake",
            "river",
            "grassland",
            "open_area",
            "ocean",
            "basketball_court",
            "ground_track_field",
            "soccer_field",
            "tennis_court",
            "badminton_court",
            "baseball_field",
            "swimming_pool",
            "wind_turbine",
            "power_line_tower",
            "storage_tank",
            "construction_tower",
            "parking_lot",
            "dam",
            "chimney",
            "container",
            "harbor",
            "overpass",
            "roundabout",
        ];
        Self {
            names: NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for CategoryTaxonomy {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<CategoryTaxonomy> for Vec<String> {
    fn from(t: CategoryTaxonomy) -> Self {
        t.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
}

/// Descriptive aspects an expression may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dimension {
    Size,
    Spatial,
    Color,
    CategoryRelation,
    Motion,
    Association,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expression {
    pub text: String,
    pub language: Language,
    #[serde(default)]
    pub dimensions: Vec<Dimension>,
}

impl Expression {
    pub fn english(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            language: Language::En,
            dimensions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationType {
    Single,
    Multi,
    NonObject,
}

/// Row-major binary mask with values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width)
            .map(|i| u8::from(f(i / width, i % width)))
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    /// Thresholds a (H, W), (1, H, W) or (1, 1, H, W) probability map:
    /// `p > threshold` is foreground.
    pub fn from_probabilities(probs: &Tensor, threshold: f64) -> Result<Self> {
        let s = probs.shape();
        if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
            return Err(Error::Shape(format!("cannot read {s:?} as a single mask")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let data = probs.data().iter().map(|&p| u8::from(p > threshold)).collect();
        Self::new(h, w, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// (1, H, W) tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| f64::from(v)).collect();
        Tensor::new([1, self.height, self.width], data).expect("mask length checked")
    }

    /// Nearest-neighbour resize with half-pixel centres.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        if (height, width) == self.shape() {
            return self.clone();
        }
        Self::from_fn(height, width, |r, c| {
            let sr = ((r as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sc = ((c as f64 + 0.5) * self.width as f64 / width as f64) as usize;
            self.get(sr.min(self.height - 1), sc.min(self.width - 1))
        })
    }

    /// Reads an 8-bit single-channel PNG, binarizing at `value > 127`.
    pub fn read_png(path: &Path) -> std::result::Result<Self, String> {
        let reader = ImageReader::open(path)
            .map_err(|e| e.to_string())?
            .with_guessed_format()
            .map_err(|e| e.to_string())?;
        let img = reader.decode().map_err(|e| e.to_string())?;
        if img.color() != ColorType::L8 {
            return Err(format!(
                "mask must be 8-bit single-channel, found {:?}",
                img.color()
            ));
        }
        let gray = img.into_luma8();
        let (w, h) = gray.dimensions();
        let data = gray.into_raw().into_iter().map(|v| u8::from(v > 127)).collect();
        Ok(Self {
            height: h as usize,
            width: w as usize,
            data,
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        });
        img.save(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// Reads an RGB image as a (3, H, W) tensor in [0, 1].
pub fn read_rgb(path: &Path) -> std::result::Result<Tensor, String> {
    let img = ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = f64::from(px[c]) / 255.0;
        }
    }
    Tensor::new([3, h, w], data).map_err(|e| e.to_string())
}

/// Writes a (3, H, W) tensor in [0, 1] as an RGB PNG.
pub fn write_rgb(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!("expected (3, H, W) image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = image.data();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |c: usize| (d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// One image, one expression, its ground truth and metadata.
#[derive(Debug, Clone)]
pub struct ReferringSample {
    pub image_id: String,
    /// (3, H, W) in [0, 1].
    pub image: Tensor,
    pub expression: Expression,
    pub mask: BinaryMask,
    pub annotation_type: AnnotationType,
    pub category: String,
    pub region: String,
}

impl ReferringSample {
    /// Checks the sample-level invariants; returns the failure reason.
    pub fn check(&self) -> std::result::Result<(), String> {
        let s = self.image.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(format!("image must be (3, H, W), got {s:?}"));
        }
        check_record(
            (s[1], s[2]),
            &self.mask,
            self.annotation_type,
            &self.expression,
        )
    }
}

fn check_record(
    image_hw: (usize, usize),
    mask: &BinaryMask,
    annotation_type: AnnotationType,
    expression: &Expression,
) -> std::result::Result<(), String> {
    if image_hw.0 < MIN_IMAGE_SIDE || image_hw.1 < MIN_IMAGE_SIDE {
        return Err(format!(
            "image {}x{} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}",
            image_hw.0, image_hw.1
        ));
    }
    if mask.shape() != image_hw {
        return Err(format!(
            "mask is {}x{} but image is {}x{}",
            mask.height(),
            mask.width(),
            image_hw.0,
            image_hw.1
        ));
    }
    if expression.text.trim().is_empty() {
        return Err("expression text is empty".into());
    }
    match (annotation_type, mask.is_empty()) {
        (AnnotationType::NonObject, false) => {
            Err("non_object sample has a non-empty mask".into())
        }
        (AnnotationType::Single | AnnotationType::Multi, true) => Err(format!(
            "{} sample has an all-zero mask",
            match annotation_type {
                AnnotationType::Single => "single",
                _ => "multi",
            }
        )),
        _ => Ok(()),
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image: String,
    pub mask: String,
    pub text: String,
    pub lang: Language,
    #[serde(rename = "type")]
    pub annotation_type: AnnotationType,
    pub category: String,
    #[serde(default = "default_region")]
    pub region: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dimensions: Vec<Dimension>,
}

fn default_region() -> String {
    DEFAULT_REGION.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub categories: CategoryTaxonomy,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub enum SampleSource {
    Files { image: PathBuf, mask: PathBuf },
    Memory { image: Tensor, mask: Arc<BinaryMask> },
}

/// Validated sample metadata; pixels are read on demand for file-backed
/// samples.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: String,
    pub image_id: String,
    pub expression: Expression,
    pub annotation_type: AnnotationType,
    pub category: String,
    pub region: String,
    pub height: usize,
    pub width: usize,
    pub source: SampleSource,
}

impl SampleRecord {
    pub fn load(&self) -> Result<ReferringSample> {
        let (image, mask) = match &self.source {
            SampleSource::Memory { image, mask } => (image.clone(), (**mask).clone()),
            SampleSource::Files { image, mask } => {
                let load_err = |path: &Path, reason: String| Error::Load {
                    sample: self.id.clone(),
                    path: path.to_path_buf(),
                    reason,
                };
                let img = read_rgb(image).map_err(|r| load_err(image, r))?;
                let m = BinaryMask::read_png(mask).map_err(|r| load_err(mask, r))?;
                (img, m)
            }
        };
        let sample = ReferringSample {
            image_id: self.image_id.clone(),
            image,
            expression: self.expression.clone(),
            mask,
            annotation_type: self.annotation_type,
            category: self.category.clone(),
            region: self.region.clone(),
        };
        sample.check().map_err(|reason| Error::Validation {
            sample: self.id.clone(),
            reason,
        })?;
        Ok(sample)
    }
}

/// Immutable collection of validated samples plus named splits.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub taxonomy: CategoryTaxonomy,
    samples: Vec<SampleRecord>,
    by_id: HashMap<String, usize>,
    splits: BTreeMap<String, Vec<String>>,
}

impl DatasetIndex {
    fn from_records(taxonomy: CategoryTaxonomy, samples: Vec<SampleRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(Error::Validation {
                    sample: s.id.clone(),
                    reason: "duplicate sample id".into(),
                });
            }
        }
        Ok(Self {
            taxonomy,
            samples,
            by_id,
            splits: BTreeMap::new(),
        })
    }

    /// Builds an in-memory index; sample ids are `000000`, `000001`, ….
    pub fn from_samples(taxonomy: CategoryTaxonomy, samples: Vec<ReferringSample>) -> Result<Self> {
        let records = samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let id = format!("{i:06}");
                s.check().map_err(|reason| Error::Validation {
                    sample: id.clone(),
                    reason,
                })?;
                check_category(&taxonomy, &id, &s.category)?;
                let (height, width) = s.mask.shape();
                Ok(SampleRecord {
                    id,
                    image_id: s.image_id,
                    expression: s.expression,
                    annotation_type: s.annotation_type,
                    category: s.category,
                    region: s.region,
                    height,
                    width,
                    source: SampleSource::Memory {
                        image: s.image,
                        mask: Arc::new(s.mask),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_records(taxonomy, records)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn num_images(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.image_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.by_id.get(id).map(|&i| &self.samples[i])
    }

    pub fn splits(&self) -> &BTreeMap<String, Vec<String>> {
        &self.splits
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidInput(format!("unknown split {name:?}")))
    }

    /// Records of a split, in split order.
    pub fn split_records(&self, name: &str) -> Result<Vec<&SampleRecord>> {
        self.split(name)?
            .iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::InvalidInput(format!("split {name} names unknown sample {id}")))
            })
            .collect()
    }

    /// Replaces the split table after checking it is a partition of the ids.
    pub fn with_splits(mut self, splits: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, ids) in &splits {
            for id in ids {
                if !self.by_id.contains_key(id) {
                    return Err(Error::InvalidInput(format!(
                        "split {name} names unknown sample {id}"
                    )));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "sample {id} appears in more than one split"
                    )));
                }
            }
        }
        if seen.len() != self.samples.len() {
            return Err(Error::InvalidInput(format!(
                "splits cover {} of {} samples",
                seen.len(),
                self.samples.len()
            )));
        }
        self.splits = splits;
        Ok(self)
    }
}

fn check_category(taxonomy: &CategoryTaxonomy, id: &str, category: &str) -> Result<()> {
    if taxonomy.contains(category) {
        Ok(())
    } else {
        Err(Error::Validation {
            sample: id.to_string(),
            reason: format!("unknown category {category:?}"),
        })
    }
}

/// Loads and validates every manifest sample. Paths in the manifest are
/// relative to `root`. Each distinct mask file is decoded once, so masks
/// shared between expressions cost a single read.
pub fn load_dataset(root: &Path, manifest_path: &Path) -> Result<DatasetIndex> {
    let manifest = Manifest::read(manifest_path)?;
    let ids: Vec<String> = manifest
        .samples
        .iter()
        .enumerate()
        .map(|(i, e)| e.id.clone().unwrap_or_else(|| format!("{i:06}")))
        .collect();

    // First sample id using each file, for error messages.
    let mut masks: HashMap<&str, usize> = HashMap::new();
    let mut images: HashMap<&str, usize> = HashMap::new();
    for (i, e) in manifest.samples.iter().enumerate() {
        masks.entry(e.mask.as_str()).or_insert(i);
        images.entry(e.image.as_str()).or_insert(i);
    }
    let decoded_masks: HashMap<&str, BinaryMask> = masks
        .into_par_iter()
        .map(|(rel, i)| {
            let path = root.join(rel);
            let mask = if path.is_file() {
                BinaryMask::read_png(&path)
            } else {
                Err("mask file not found".to_string())
            };
            mask.map(|m| (rel, m)).map_err(|reason| Error::Load {
                sample: ids[i].clone(),
                path,
                reason,
            })
        })
        .collect::<Result<_>>()?;
    let image_dims: HashMap<&str, (usize, usize)> = images
        .into_par_iter()
        .map(|(rel, i)| {
            let path = root.join(rel);
            image::image_dimensions(&path)
                .map(|(w, h)| (rel, (h as usize, w as usize)))
                .map_err(|e| Error::Load {
                    sample: ids[i].clone(),
                    path,
                    reason: e.to_string(),
                })
        })
        .collect::<Result<_>>()?;

    let records = manifest
        .samples
        .par_iter()
        .zip(ids.par_iter())
        .map(|(e, id)| {
            check_category(&manifest.categories, id, &e.category)?;
            let expression = Expression {
                text: e.text.clone(),
                language: e.lang,
                dimensions: e.dimensions.clone(),
            };
            let hw = image_dims[e.image.as_str()];
            check_record(hw, &decoded_masks[e.mask.as_str()], e.annotation_type, &expression)
                .map_err(|reason| Error::Validation {
                    sample: id.clone(),
                    reason,
                })?;
            Ok(SampleRecord {
                id: id.clone(),
                image_id: e.image.clone(),
                expression,
                annotation_type: e.annotation_type,
                category: e.category.clone(),
                region: e.region.clone(),
                height: hw.0,
                width: hw.1,
                source: SampleSource::Files {
                    image: root.join(&e.image),
                    mask: root.join(&e.mask),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetIndex::from_records(manifest.categories, records)
}

/// Largest-remainder apportionment of `n` items to `ratios`. Ties in the
/// fractional part go to the earlier split.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Splits each region independently into train/val/test by
/// largest-remainder rounding of `ratios`, after a seeded shuffle.
pub fn stratified_split(index: DatasetIndex, ratios: [f64; 3], seed: u64) -> Result<DatasetIndex> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let mut by_region: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in index.samples() {
        by_region.entry(s.region.as_str()).or_default().push(s.id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits: BTreeMap<String, Vec<String>> = SPLIT_NAMES
        .iter()
        .map(|n| (n.to_string(), Vec::new()))
        .collect();
    for ids in by_region.values_mut() {
        ids.shuffle(&mut rng);
        let counts = largest_remainder(ids.len(), &ratios);
        let mut start = 0;
        for (name, count) in SPLIT_NAMES.iter().zip(counts) {
            let bucket = splits.get_mut(*name).expect("split names fixed");
            bucket.extend(ids[start..start + count].iter().map(|s| s.to_string()));
            start += count;
        }
    }
    index.with_splits(splits)
}

/// On-disk record of a split, consumed by training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub manifest: PathBuf,
    pub root: PathBuf,
    pub ratios: [f64; 3],
    pub seed: u64,
    pub splits: BTreeMap<String, Vec<String>>,
}

impl SplitFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Loads the manifest and applies the recorded split.
    pub fn load(&self) -> Result<DatasetIndex> {
        load_dataset(&self.root, &self.manifest)?.with_splits(self.splits.clone())
    }
}
