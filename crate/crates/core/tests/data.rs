use std::path::Path;

use awgunet::data::{
    batch_indices, load_dataset, load_dataset_root, make_synthetic_blobs, read_mask, split_dataset, write_dataset,
    write_mask_png, BLOB_FRACTION_RANGE,
};
use awgunet::nn::{Shape, Tensor};
use awgunet::Error;
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

fn write_rgb(path: &Path, w: u32, h: u32) {
    RgbImage::from_fn(w, h, |x, y| Rgb([x as u8 * 10, y as u8 * 10, 100])).save(path).unwrap();
}

fn write_gray(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
    GrayImage::from_fn(w, h, |x, y| Luma([f(x, y)])).save(path).unwrap();
}

fn layout(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let (i, m) = (root.join("images"), root.join("masks"));
    std::fs::create_dir_all(&i).unwrap();
    std::fs::create_dir_all(&m).unwrap();
    (i, m)
}

#[test]
fn loads_pairs_sorted_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let (i, m) = layout(dir.path());
    for id in ["c", "a", "b"] {
        write_rgb(&i.join(format!("{id}.png")), 4, 6);
        write_gray(&m.join(format!("{id}.png")), 4, 6, |x, _| if x < 2 { 255 } else { 0 });
    }
    std::fs::write(i.join("notes.txt"), "ignored").unwrap();
    let pairs = load_dataset_root(dir.path()).unwrap();
    let ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert_eq!(pairs[0].image.shape(), Shape::new(1, 3, 6, 4));
    assert_eq!(pairs[0].mask.shape(), Shape::new(1, 1, 6, 4));
    assert!((pairs[0].image.at(0, 2, 0, 0) - 100.0 / 255.0).abs() < 1e-6);
    assert_eq!(pairs[0].mask.plane(0, 0)[..4], [1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn masks_binarise_at_half_of_bit_depth() {
    let dir = tempfile::tempdir().unwrap();
    let p8 = dir.path().join("m8.png");
    write_gray(&p8, 4, 1, |x, _| [0, 127, 128, 255][x as usize]);
    assert_eq!(read_mask(&p8).unwrap().data(), [0.0, 0.0, 1.0, 1.0]);

    let p16 = dir.path().join("m16.png");
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(4, 1, |x, _| Luma([[0, 32767, 32768, 65535][x as usize]]));
    img.save(&p16).unwrap();
    assert_eq!(read_mask(&p16).unwrap().data(), [0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn missing_mask_and_directory_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (i, m) = layout(dir.path());
    write_rgb(&i.join("x1.png"), 4, 4);
    let err = load_dataset(&i, &m).unwrap_err().to_string();
    assert!(err.contains("x1") && err.contains("masks"), "{err}");

    let err = load_dataset(&i, dir.path().join("nowhere")).unwrap_err();
    assert!(matches!(&err, Error::Dataset(s) if s.contains("nowhere")), "{err}");
}

#[test]
fn size_mismatch_and_empty_dirs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let (i, m) = layout(dir.path());
    assert!(matches!(load_dataset(&i, &m), Err(Error::Dataset(_))));
    write_rgb(&i.join("a.png"), 4, 4);
    write_gray(&m.join("a.png"), 4, 5, |_, _| 0);
    let err = load_dataset(&i, &m).unwrap_err().to_string();
    assert!(err.contains("4x4") && err.contains("5x4"), "{err}");
}

#[test]
fn synthetic_dataset_round_trips_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = make_synthetic_blobs(3, 32, 5);
    write_dataset(&pairs, dir.path()).unwrap();
    let back = load_dataset_root(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in pairs.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask, b.mask);
        let worst = a.image.data().iter().zip(b.image.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 0.5 / 255.0 + 1e-6, "{worst}");
    }
}

#[test]
fn mask_writer_thresholds_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.png");
    let probs = Tensor::new(Shape::new(1, 1, 1, 4), vec![0.1, 0.5, 0.49, 0.9]).unwrap();
    write_mask_png(&path, &probs, 0.5).unwrap();
    let img = image::open(&path).unwrap().to_luma8();
    assert_eq!(img.into_raw(), [0, 255, 0, 255]);
    assert_eq!(read_mask(&path).unwrap().data(), [0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn blob_generator_is_seeded_and_in_range() {
    assert_eq!(make_synthetic_blobs(2, 64, 11), make_synthetic_blobs(2, 64, 11));
    assert_ne!(make_synthetic_blobs(1, 64, 11), make_synthetic_blobs(1, 64, 12));
    for seed in 0..100 {
        for p in make_synthetic_blobs(1, 64, seed) {
            let frac = p.mask.data().iter().sum::<f32>() as f64 / p.mask.numel() as f64;
            assert!(frac >= BLOB_FRACTION_RANGE.0 && frac <= BLOB_FRACTION_RANGE.1, "seed {seed}: {frac}");
            assert!(p.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn splits_partition_ids_deterministically() {
    let ids: Vec<String> = (0..37).map(|i| format!("s{i:02}")).collect();
    let a = split_dataset(&ids, (0.7, 0.2, 0.1), 3).unwrap();
    let b = split_dataset(&ids, (0.7, 0.2, 0.1), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.val.len(), a.test.len()), (7, 3));
    let mut all: Vec<String> = a.train.iter().chain(&a.val).chain(&a.test).cloned().collect();
    all.sort();
    assert_eq!(all, ids);
    assert_ne!(a.train, split_dataset(&ids, (0.7, 0.2, 0.1), 4).unwrap().train);
    assert!(split_dataset(&ids, (0.7, 0.2, 0.2), 3).is_err());
}

#[test]
fn batches_cover_every_index_once() {
    let b = batch_indices(5, 2, None);
    assert_eq!(b, vec![vec![0, 1], vec![2, 3], vec![4]]);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let mut flat: Vec<usize> = batch_indices(9, 4, Some(&mut rng)).concat();
    flat.sort();
    assert_eq!(flat, (0..9).collect::<Vec<_>>());
}
