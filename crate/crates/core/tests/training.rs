use awgunet::data::make_synthetic_blobs;
use awgunet::decoder::{gaussian5, lanczos5, FixedFilterBank, UpsampleBlock, UpsampleFusion};
use awgunet::model::{Checkpoint, ModelConfig, Variant};
use awgunet::nn::Adam;
use awgunet::nn::{Graph, ParameterStore, Shape};
use awgunet::train::{evaluate_checkpoint, predict_dir, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        input_size: (32, 32),
        growth_rate: 4,
        block_layers: vec![2, 2, 2, 2],
        decoder_widths: vec![8, 8, 4, 4, 4],
        bottleneck_width: 8,
        wgcam_reduction: 4,
        ..ModelConfig::default().with_variant(variant)
    }
}

fn short_run(steps: usize) -> TrainConfig {
    TrainConfig {
        max_steps: Some(steps),
        epochs: steps,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn fixed_seed_runs_are_bit_identical() {
    let pairs = make_synthetic_blobs(4, 32, 2);
    for v in [Variant::BaselineUnetDensenet, Variant::Full] {
        let a = train(&tiny(v), &short_run(6), &pairs, &pairs[..1]).unwrap();
        let b = train(&tiny(v), &short_run(6), &pairs, &pairs[..1]).unwrap();
        let bits = |h: &[f64]| h.iter().map(|l| l.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.history.losses()), bits(&b.history.losses()));
        assert_eq!(a.history.losses().len(), 6);
        assert_eq!(a.last.to_bytes(), b.last.to_bytes());
        assert_eq!(a.history, b.history);
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let pairs = make_synthetic_blobs(4, 32, 2);
    let a = train(&tiny(Variant::Full), &short_run(4), &pairs, &[]).unwrap();
    let cfg = TrainConfig { seed: 9, ..short_run(4) };
    let b = train(&tiny(Variant::Full), &cfg, &pairs, &[]).unwrap();
    assert_ne!(a.history.losses(), b.history.losses());
}

#[test]
fn saved_checkpoints_reproduce_metrics_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = make_synthetic_blobs(4, 32, 3);
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..short_run(4)
    };
    let out = train(&tiny(Variant::Full), &cfg, &pairs[..3], &pairs[3..]).unwrap();
    for name in ["best.ckpt", "last.ckpt"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let loaded = Checkpoint::load(dir.path().join("last.ckpt")).unwrap();
    assert_eq!(loaded, out.last);
    assert_eq!(loaded.params.step(), 4);
    let before = evaluate_checkpoint(&out.last, &pairs, 0.5).unwrap();
    let after = evaluate_checkpoint(&loaded, &pairs, 0.5).unwrap();
    assert_eq!(before, after);
    assert_eq!(before.to_csv(), after.to_csv());
}

#[test]
fn history_has_one_record_per_epoch() {
    let pairs = make_synthetic_blobs(3, 32, 4);
    let cfg = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::default() };
    let out = train(&tiny(Variant::WgcamGap), &cfg, &pairs, &pairs[..1]).unwrap();
    assert_eq!(out.history.epochs.len(), 2);
    // 3 images at batch 2 is 2 steps per epoch, the last one partial
    assert_eq!(out.history.steps.len(), 4);
    assert!(out.history.epochs.iter().all(|e| e.val_dice.is_some()));
    let csv = out.history.to_csv();
    assert!(csv.starts_with("epoch,train_loss,val_dice,val_iou\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn rejects_mismatched_inputs() {
    let pairs = make_synthetic_blobs(2, 64, 1);
    assert!(train(&tiny(Variant::Full), &short_run(1), &pairs, &[]).is_err());
    assert!(train(&tiny(Variant::Full), &short_run(1), &[], &[]).is_err());
    let bad = TrainConfig { lr: -1.0, ..short_run(1) };
    assert!(train(&tiny(Variant::Full), &bad, &make_synthetic_blobs(2, 32, 1), &[]).is_err());
}

#[test]
fn fixed_filters_survive_optimisation() {
    let mut store = ParameterStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = UpsampleBlock::new(&mut store, &mut rng, "up", 4, 2, 2, FixedFilterBank::new(1.0).unwrap(), UpsampleFusion::Mean).unwrap();
    let names: Vec<&str> = store.names().collect();
    assert!(names.iter().all(|n| n.starts_with("up.fuse") || n.starts_with("up.ct")), "{names:?}");
    let before = block.filters.clone();
    let adam = Adam::with_lr(1e-2);
    for i in 0..10 {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(awgunet::nn::gradcheck::random_tensor(Shape::new(1, 4, 4, 4), i).cast());
        let y = block.forward(&mut g, &p, x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        store.accumulate_grads(&grads, &p).unwrap();
        adam.step(&mut store).unwrap();
    }
    assert_eq!(store.step(), 10);
    assert_eq!(block.filters, before);
    assert_eq!(block.filters.gaussian, gaussian5(1.0));
    assert_eq!(block.filters.lanczos, lanczos5());
}

#[test]
fn predict_writes_one_mask_per_image_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = make_synthetic_blobs(3, 32, 6);
    awgunet::data::write_dataset(&pairs, dir.path().join("set")).unwrap();
    let (_, store) = awgunet::model::build_model::<f32>(&tiny(Variant::Full)).unwrap();
    let ck = Checkpoint::new(tiny(Variant::Full), store, false);
    let images = dir.path().join("set/images");
    let a = predict_dir(&ck, &images, &dir.path().join("a"), 0.5).unwrap();
    let b = predict_dir(&ck, &images, &dir.path().join("b"), 0.5).unwrap();
    assert_eq!(a.written.len(), 3);
    assert!(a.skipped.is_empty());
    for (x, y) in a.written.iter().zip(&b.written) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        let img = image::open(x).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (32, 32));
        assert!(img.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    }

    // a wrong-sized input is skipped, the rest still written
    image::RgbImage::new(16, 16).save(images.join("zz_small.png")).unwrap();
    let c = predict_dir(&ck, &images, &dir.path().join("c"), 0.5).unwrap();
    assert_eq!((c.written.len(), c.skipped.len()), (3, 1));
}
