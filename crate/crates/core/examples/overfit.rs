//! Overfits the desk profile on four synthetic blob images and reports the
//! training-set dice.
//!
//! `cargo run --release --example overfit -- [variant] [steps] [key=value...]`

use std::time::Instant;

use awgunet::data::make_synthetic_blobs;
use awgunet::model::{ModelConfig, Variant};
use awgunet::train::{evaluate_checkpoint, train, TrainConfig};

fn main() -> awgunet::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("iv").parse()?;
    let steps: usize = args.next().map_or(300, |s| s.parse().expect("step count"));
    let mut model = ModelConfig::desk().with_variant(variant);
    for kv in args {
        let (k, v) = kv.split_once('=').expect("key=value override");
        assert!(model.apply(k, v)?, "unknown key {k}");
    }
    let cfg = TrainConfig {
        max_steps: Some(steps),
        epochs: steps,
        log_every: 25,
        ..TrainConfig::default()
    };
    let pairs = make_synthetic_blobs(4, 64, 7);
    let t0 = Instant::now();
    let out = train(&model, &cfg, &pairs, &[])?;
    let report = evaluate_checkpoint(&out.last, &pairs, 0.5)?;
    let losses = out.history.losses();
    for (i, chunk) in losses.chunks(25).enumerate() {
        println!("steps {:>3}-{:>3}: mean loss {:.4}", i * 25 + 1, i * 25 + chunk.len(), chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    println!(
        "variant {variant}: {steps} steps in {:.1}s, train dice {:.4}",
        t0.elapsed().as_secs_f64(),
        report.aggregate.dice
    );
    Ok(())
}
