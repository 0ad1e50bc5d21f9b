mod common;

use std::collections::HashSet;
use std::path::Path;

use mrsnet::autograd::Tensor;
use mrsnet::data_model::{
    load_dataset, stratified_split, write_rgb, AnnotationType, BinaryMask, CategoryTaxonomy,
    Language, Manifest, ManifestEntry, SplitFile, NUM_CATEGORIES,
};
use mrsnet::synthetic::{self, SyntheticOptions};
use mrsnet::Error;

fn entry(image: &str, mask: &str, text: &str, kind: AnnotationType, category: &str) -> ManifestEntry {
    ManifestEntry {
        id: None,
        image: image.into(),
        mask: mask.into(),
        text: text.into(),
        lang: Language::En,
        annotation_type: kind,
        category: category.into(),
        region: "default".into(),
        dimensions: Vec::new(),
    }
}

fn write_files(dir: &Path) {
    let image = Tensor::from_fn([3, 32, 32], |i| (i % 7) as f64 / 7.0);
    write_rgb(&dir.join("a.png"), &image).unwrap();
    write_rgb(&dir.join("b.png"), &image).unwrap();
    BinaryMask::from_fn(32, 32, |r, c| r < 8 && c < 8).write_png(&dir.join("m.png")).unwrap();
    BinaryMask::zeros(32, 32).write_png(&dir.join("empty.png")).unwrap();
}

fn write_manifest(dir: &Path, samples: Vec<ManifestEntry>) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    Manifest {
        categories: CategoryTaxonomy::standard(),
        samples,
    }
    .write(&path)
    .unwrap();
    path
}

#[test]
fn standard_taxonomy_has_32_unique_stable_names() {
    let a = CategoryTaxonomy::standard();
    assert_eq!(a.names().len(), NUM_CATEGORIES);
    assert_eq!(a.names().iter().collect::<HashSet<_>>().len(), 32);
    assert_eq!(a, CategoryTaxonomy::standard());
}

#[test]
fn several_expressions_per_image() {
    let dir = tempfile::tempdir().unwrap();
    write_files(dir.path());
    let samples = ["a.png", "b.png"]
        .iter()
        .flat_map(|img| {
            (0..3).map(move |k| entry(img, "m.png", &format!("expression {k}"), AnnotationType::Single, "airplane"))
        })
        .collect();
    let manifest = write_manifest(dir.path(), samples);
    let index = load_dataset(dir.path(), &manifest).unwrap();
    assert_eq!(index.len(), 6);
    assert_eq!(index.num_images(), 2);
    let sample = index.samples()[4].load().unwrap();
    assert_eq!(sample.image.shape(), [3, 32, 32]);
    assert_eq!(sample.mask.count(), 64);
}

#[test]
fn empty_mask_with_object_type_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_files(dir.path());
    let manifest = write_manifest(
        dir.path(),
        vec![entry("a.png", "empty.png", "the plane", AnnotationType::Single, "airplane")],
    );
    let err = load_dataset(dir.path(), &manifest).unwrap_err();
    assert!(matches!(err, Error::Validation { .. }), "{err}");
}

#[test]
fn non_object_needs_an_empty_mask() {
    let dir = tempfile::tempdir().unwrap();
    write_files(dir.path());
    let ok = write_manifest(
        dir.path(),
        vec![entry("a.png", "empty.png", "the ship", AnnotationType::NonObject, "ship")],
    );
    assert_eq!(load_dataset(dir.path(), &ok).unwrap().len(), 1);
    let bad = write_manifest(
        dir.path(),
        vec![entry("a.png", "m.png", "the ship", AnnotationType::NonObject, "ship")],
    );
    assert!(matches!(load_dataset(dir.path(), &bad), Err(Error::Validation { .. })));
}

#[test]
fn missing_files_and_unknown_categories() {
    let dir = tempfile::tempdir().unwrap();
    write_files(dir.path());
    let missing = write_manifest(
        dir.path(),
        vec![entry("a.png", "nope.png", "the plane", AnnotationType::Single, "airplane")],
    );
    match load_dataset(dir.path(), &missing) {
        Err(Error::Load { sample, path, .. }) => {
            assert_eq!(sample, "000000");
            assert!(path.ends_with("nope.png"));
        }
        other => panic!("expected a load error, got {other:?}"),
    }
    let unknown = write_manifest(
        dir.path(),
        vec![entry("a.png", "m.png", "the dragon", AnnotationType::Single, "dragon")],
    );
    let err = load_dataset(dir.path(), &unknown).unwrap_err();
    assert!(matches!(err, Error::Validation { .. }) && err.to_string().contains("dragon"));
}

#[test]
fn mask_shape_must_match_image() {
    let dir = tempfile::tempdir().unwrap();
    write_files(dir.path());
    BinaryMask::from_fn(32, 40, |r, _| r < 4).write_png(&dir.path().join("wide.png")).unwrap();
    let manifest = write_manifest(
        dir.path(),
        vec![entry("a.png", "wide.png", "the plane", AnnotationType::Single, "airplane")],
    );
    assert!(matches!(load_dataset(dir.path(), &manifest), Err(Error::Validation { .. })));
}

#[test]
fn full_scale_manifest_loads() {
    const IMAGES: usize = 15003;
    const ANNOTATIONS: usize = 49745;
    let dir = tempfile::tempdir().unwrap();
    write_files(dir.path());
    let imgs = dir.path().join("imgs");
    std::fs::create_dir(&imgs).unwrap();
    for i in 0..IMAGES {
        std::fs::hard_link(dir.path().join("a.png"), imgs.join(format!("{i}.png"))).unwrap();
    }
    let samples = (0..ANNOTATIONS)
        .map(|k| {
            entry(
                &format!("imgs/{}.png", k % IMAGES),
                "m.png",
                "the plane on the left",
                AnnotationType::Single,
                "airplane",
            )
        })
        .collect();
    let manifest = write_manifest(dir.path(), samples);
    let index = load_dataset(dir.path(), &manifest).unwrap();
    assert_eq!(index.len(), ANNOTATIONS);
    assert_eq!(index.num_images(), IMAGES);
    assert!(index.len() > index.num_images());
}

fn region_dataset(counts: &[(usize, &str)]) -> mrsnet::data_model::DatasetIndex {
    let mut samples = Vec::new();
    for (k, &(n, region)) in counts.iter().enumerate() {
        let opts = SyntheticOptions {
            region: region.to_string(),
            ..SyntheticOptions::new(n, 32, k as u64)
        };
        let mut s = synthetic::generate(&opts).unwrap();
        for x in &mut s {
            x.image_id = format!("{region}_{}", x.image_id);
        }
        samples.extend(s);
    }
    mrsnet::data_model::DatasetIndex::from_samples(CategoryTaxonomy::standard(), samples).unwrap()
}

fn sizes(index: &mrsnet::data_model::DatasetIndex) -> [usize; 3] {
    ["train", "val", "test"].map(|s| index.split(s).unwrap().len())
}

#[test]
fn split_ten_samples_seven_one_two() {
    let index = stratified_split(region_dataset(&[(10, "a")]), [0.7, 0.1, 0.2], 0).unwrap();
    assert_eq!(sizes(&index), [7, 1, 2]);
}

#[test]
fn split_of_nothing_is_three_empty_splits() {
    let index = stratified_split(region_dataset(&[]), [0.7, 0.1, 0.2], 0).unwrap();
    assert_eq!(sizes(&index), [0, 0, 0]);
}

#[test]
fn each_region_is_split_separately() {
    let index = stratified_split(region_dataset(&[(10, "north"), (10, "south")]), [0.7, 0.1, 0.2], 3).unwrap();
    assert_eq!(sizes(&index), [14, 2, 4]);
    for region in ["north", "south"] {
        let per: Vec<usize> = ["train", "val", "test"]
            .iter()
            .map(|s| {
                index
                    .split_records(s)
                    .unwrap()
                    .iter()
                    .filter(|r| r.region == region)
                    .count()
            })
            .collect();
        assert_eq!(per, [7, 1, 2], "{region}");
    }
    let all: Vec<&String> = ["train", "val", "test"].iter().flat_map(|s| index.split(s).unwrap()).collect();
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), 20);
}

#[test]
fn split_is_seed_deterministic() {
    let a = stratified_split(region_dataset(&[(23, "a"), (9, "b")]), [0.7, 0.1, 0.2], 5).unwrap();
    let b = stratified_split(region_dataset(&[(23, "a"), (9, "b")]), [0.7, 0.1, 0.2], 5).unwrap();
    assert_eq!(a.splits(), b.splits());
}

#[test]
fn bad_ratios_are_rejected() {
    assert!(stratified_split(region_dataset(&[(4, "a")]), [0.5, 0.1, 0.2], 0).is_err());
    assert!(stratified_split(region_dataset(&[(4, "a")]), [1.2, -0.1, -0.1], 0).is_err());
}

#[test]
fn split_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synthetic::generate(&SyntheticOptions::new(10, 32, 1)).unwrap();
    let manifest = synthetic::write_dataset(dir.path(), &samples).unwrap();
    let index = stratified_split(load_dataset(dir.path(), &manifest).unwrap(), [0.7, 0.1, 0.2], 0).unwrap();
    let file = SplitFile {
        manifest: manifest.clone(),
        root: dir.path().to_path_buf(),
        ratios: [0.7, 0.1, 0.2],
        seed: 0,
        splits: index.splits().clone(),
    };
    let path = dir.path().join("split.json");
    file.write(&path).unwrap();
    let back = SplitFile::read(&path).unwrap();
    assert_eq!(back, file);
    let loaded = back.load().unwrap();
    assert_eq!(loaded.splits(), index.splits());
    // PNG storage quantizes pixels to 8 bits; masks survive exactly.
    let original = &samples[3];
    let reread = loaded.samples()[3].load().unwrap();
    assert_eq!(reread.mask, original.mask);
    assert!(reread.image.max_abs_diff(&original.image) <= 0.5 / 255.0 + 1e-12);
}
