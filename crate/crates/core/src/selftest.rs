//! Built-in verification suite: gradient checks over every differentiable
//! op, wavelet exactness, metric oracle, anti-aliasing, and an overfit run.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{LwGap, Wgcam};
use crate::data::make_synthetic_blobs;
use crate::decoder::{gaussian5, lanczos5, upsample_fixed, ConvBlock, FixedFilterBank, UpsampleBlock, UpsampleFusion};
use crate::error::Result;
use crate::losses::{bce_loss, combined_loss, dice_loss, LossWeights, DICE_EPS};
use crate::metrics::{evaluate, Metrics};
use crate::model::{ModelConfig, Variant};
use crate::nn::gradcheck::{random_tensor, GradCheck};
use crate::nn::{corrupt_backward, Graph, Padding, ParameterStore, Shape, Tensor, Var};
use crate::train::{evaluate_checkpoint, train, TrainConfig};
use crate::wavelet::{dwt_haar, dwt_haar_forward, dwt_haar_inverse};

/// Maximum relative error accepted by the gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-3;
/// Tolerance of the wavelet round-trip and energy checks.
pub const WAVELET_TOLERANCE: f64 = 1e-6;
pub const OVERFIT_STEPS: usize = 300;
pub const OVERFIT_DICE: f64 = 0.95;

type CaseFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// A named differentiable function and the inputs it is checked at.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: CaseFn,
}

impl GradCase {
    fn new(
        name: &'static str,
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        GradCase {
            name,
            inputs,
            f: Box::new(f),
        }
    }

    pub fn check(&self) -> Result<crate::nn::gradcheck::GradReport> {
        GradCheck::default().run(&self.inputs, &self.f)
    }
}

fn r(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    random_tensor(Shape::new(n, c, h, w), seed)
}

/// Values in `[0.05, 0.95]`, kept away from the loss clamps.
fn probabilities(shape: Shape, seed: u64) -> Tensor<f64> {
    let t = random_tensor(shape, seed);
    Tensor::new(shape, t.data().iter().map(|v| 0.5 + 0.45 * v).collect()).expect("same shape")
}

fn binary(shape: Shape, seed: u64) -> Tensor<f64> {
    let t = random_tensor(shape, seed);
    Tensor::new(shape, t.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect()).expect("same shape")
}

/// Store tensors appended after the leading data inputs.
fn with_params(mut inputs: Vec<Tensor<f64>>, store: &ParameterStore<f64>) -> Vec<Tensor<f64>> {
    inputs.extend(store.entries().iter().map(|e| e.tensor.clone()));
    inputs
}

/// Every differentiable operation, on tensors no larger than 2x3x8x8.
pub fn gradient_cases() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = vec![
        GradCase::new("conv2d 3x3 same", vec![r(2, 3, 6, 6, 1), r(4, 3, 3, 3, 2), r(1, 4, 1, 1, 3)], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Same)
        }),
        GradCase::new("conv2d 7x7 stride 2", vec![r(1, 2, 8, 8, 4), r(3, 2, 7, 7, 5)], |g, v| {
            g.conv2d(v[0], v[1], None, 2, Padding::Same)
        }),
        GradCase::new("conv2d 2x2 valid", vec![r(2, 2, 5, 5, 6), r(2, 2, 2, 2, 7), r(1, 2, 1, 1, 8)], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Valid)
        }),
        GradCase::new("depthwise conv2d", vec![r(2, 3, 6, 6, 9), r(3, 1, 3, 3, 10), r(1, 3, 1, 1, 11)], |g, v| {
            g.depthwise_conv2d(v[0], v[1], Some(v[2]), Padding::Same)
        }),
        GradCase::new(
            "separable conv2d",
            vec![r(2, 3, 6, 6, 12), r(3, 1, 3, 3, 13), r(2, 3, 1, 1, 14), r(1, 2, 1, 1, 15)],
            |g, v| g.separable_conv2d(v[0], v[1], v[2], Some(v[3])),
        ),
        GradCase::new(
            "transposed conv2d stride 2",
            vec![r(2, 3, 4, 4, 16), r(3, 2, 2, 2, 17), r(1, 2, 1, 1, 18)],
            |g, v| g.transposed_conv2d(v[0], v[1], Some(v[2]), 2),
        ),
        GradCase::new(
            "transposed conv2d stride 1",
            vec![r(1, 2, 4, 4, 19), r(2, 3, 3, 3, 20)],
            |g, v| g.transposed_conv2d(v[0], v[1], None, 1),
        ),
        GradCase::new("dense", vec![r(2, 6, 1, 1, 21), r(4, 6, 1, 1, 22), r(1, 4, 1, 1, 23)], |g, v| {
            g.dense(v[0], v[1], Some(v[2]))
        }),
        GradCase::new(
            "instance norm",
            vec![r(2, 3, 5, 5, 24), r(1, 3, 1, 1, 25), r(1, 3, 1, 1, 26)],
            |g, v| g.instance_norm(v[0], v[1], v[2], 1e-5),
        ),
        GradCase::new("relu", vec![r(2, 3, 4, 4, 27)], |g, v| Ok(g.relu(v[0]))),
        GradCase::new("sigmoid", vec![r(2, 3, 4, 4, 28)], |g, v| {
            let x = g.scale(v[0], 3.0);
            Ok(g.sigmoid(x))
        }),
        GradCase::new("add", vec![r(2, 3, 4, 4, 29), r(2, 3, 4, 4, 30)], |g, v| g.add(v[0], v[1])),
        GradCase::new("mul elementwise", vec![r(2, 3, 4, 4, 31), r(2, 3, 4, 4, 32)], |g, v| g.mul(v[0], v[1])),
        GradCase::new("mul per channel", vec![r(2, 3, 4, 4, 33), r(2, 3, 1, 1, 34)], |g, v| {
            g.mul_per_channel(v[0], v[1])
        }),
        GradCase::new("mul per channel shared", vec![r(2, 3, 4, 4, 35), r(1, 3, 1, 1, 36)], |g, v| {
            g.mul_per_channel(v[0], v[1])
        }),
        GradCase::new("scale", vec![r(2, 3, 4, 4, 37)], |g, v| Ok(g.scale(v[0], -1.5))),
        GradCase::new("concat channels", vec![r(2, 2, 4, 4, 38), r(2, 1, 4, 4, 39)], |g, v| {
            g.concat_channels(&[v[0], v[1]])
        }),
        GradCase::new("slice channels", vec![r(2, 3, 4, 4, 40)], |g, v| g.slice_channels(v[0], 1, 2)),
        GradCase::new("avg pool 2x2", vec![r(2, 3, 6, 6, 41)], |g, v| g.avg_pool2d(v[0], 2, 2)),
        GradCase::new("max pool 2x2", vec![r(2, 3, 6, 6, 42)], |g, v| g.max_pool2d(v[0], 2, 2)),
        GradCase::new("global avg pool", vec![r(2, 3, 4, 4, 43)], |g, v| Ok(g.global_avg_pool(v[0]))),
        GradCase::new("mean", vec![r(2, 3, 4, 4, 44)], |g, v| Ok(g.mean(v[0]))),
        GradCase::new("haar dwt", vec![r(2, 3, 8, 8, 45)], |g, v| dwt_haar(g, v[0])),
        GradCase::new("upsample gaussian", vec![r(2, 3, 4, 4, 46)], |g, v| {
            Ok(upsample_fixed(g, v[0], &gaussian5(1.0)))
        }),
        GradCase::new("upsample lanczos", vec![r(2, 3, 4, 4, 47)], |g, v| Ok(upsample_fixed(g, v[0], &lanczos5()))),
        GradCase::new(
            "dice loss",
            vec![probabilities(Shape::new(2, 1, 6, 6), 48), binary(Shape::new(2, 1, 6, 6), 49)],
            |g, v| dice_loss(g, v[0], v[1], DICE_EPS),
        ),
        GradCase::new(
            "bce loss",
            vec![probabilities(Shape::new(2, 1, 6, 6), 50), binary(Shape::new(2, 1, 6, 6), 51)],
            |g, v| bce_loss(g, v[0], v[1]),
        ),
        GradCase::new(
            "combined loss",
            vec![probabilities(Shape::new(2, 1, 6, 6), 52), binary(Shape::new(2, 1, 6, 6), 53)],
            |g, v| Ok(combined_loss(g, v[0], v[1], LossWeights::default())?.total),
        ),
    ];

    let mut store = ParameterStore::<f64>::new();
    let gap = LwGap::new(&mut store, &mut rng, "gap", 4, 2, true).expect("valid lw-gap");
    cases.push(GradCase::new("lw-gap incl. alpha", with_params(vec![r(2, 4, 4, 4, 54)], &store), move |g, v| {
        gap.forward(g, &v[1..], v[0])
    }));

    let mut store = ParameterStore::<f64>::new();
    let wgcam = Wgcam::new(&mut store, &mut rng, "wgcam", 2, 2, true).expect("valid wgcam");
    cases.push(GradCase::new("wgcam end-to-end", with_params(vec![r(2, 2, 8, 8, 55)], &store), move |g, v| {
        wgcam.forward(g, &v[1..], v[0])
    }));

    let mut store = ParameterStore::<f64>::new();
    let filters = FixedFilterBank::new(1.0).expect("valid sigma");
    let up = UpsampleBlock::new(&mut store, &mut rng, "up", 3, 2, 2, filters, UpsampleFusion::Mean)
        .expect("valid block");
    cases.push(GradCase::new("upsample block", with_params(vec![r(2, 3, 4, 4, 56)], &store), move |g, v| {
        up.forward(g, &v[1..], v[0])
    }));

    let mut store = ParameterStore::<f64>::new();
    let block = ConvBlock::new(&mut store, &mut rng, "block", 3, 4).expect("valid block");
    cases.push(GradCase::new("conv block", with_params(vec![r(2, 3, 6, 6, 57)], &store), move |g, v| {
        block.forward(g, &v[1..], v[0])
    }));
    cases
}

/// Max round-trip error and max relative energy gap over `count` random
/// even-sized tensors.
pub fn wavelet_exactness(count: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut round_trip, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let shape = Shape::new(
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            2 * rng.random_range(1..=8),
            2 * rng.random_range(1..=8),
        );
        let x = Tensor::<f64>::from_fn(shape, |_, _, _, _| rng.random_range(-10.0..10.0));
        let d = dwt_haar_forward(&x)?;
        let back = dwt_haar_inverse(&d)?;
        for (a, b) in x.data().iter().zip(back.data()) {
            round_trip = round_trip.max((a - b).abs());
        }
        let ex: f64 = x.data().iter().map(|v| v * v).sum();
        let ed: f64 = d.tensor.data().iter().map(|v| v * v).sum();
        energy = energy.max((ex - ed).abs() / ex.max(1e-300));
    }
    Ok((round_trip, energy))
}

/// Per-pixel confusion-matrix oracle, kept separate from [`crate::metrics`].
pub fn brute_force_metrics(pred: &[bool], target: &[bool]) -> Metrics {
    let mut m = [[0u64; 2]; 2];
    for (&p, &t) in pred.iter().zip(target) {
        m[p as usize][t as usize] += 1;
    }
    let (tp, fp, fn_) = (m[1][1] as f64, m[1][0] as f64, m[0][1] as f64);
    let empty = pred.iter().all(|b| !b) && target.iter().all(|b| !b);
    let div = |a: f64, b: f64| if b == 0.0 { if empty { 1.0 } else { 0.0 } } else { a / b };
    Metrics {
        dice: div(2.0 * tp, 2.0 * tp + fp + fn_),
        iou: div(tp, tp + fp + fn_),
        precision: div(tp, tp + fp),
        recall: div(tp, tp + fn_),
    }
}

/// Largest deviation from the oracle and from `dice = 2 iou / (1 + iou)`
/// over `count` random 16x16 mask pairs.
pub fn metric_oracle(count: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut oracle, mut identity) = (0.0f64, 0.0f64);
    let shape = Shape::new(1, 1, 16, 16);
    for i in 0..count {
        // vary density so empty and full masks also occur
        let (dp, dt) = match i % 10 {
            0 => (0.0, 0.0),
            1 => (0.0, 0.3),
            _ => (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
        };
        let p: Vec<bool> = (0..256).map(|_| rng.random_bool(dp)).collect();
        let t: Vec<bool> = (0..256).map(|_| rng.random_bool(dt)).collect();
        let pt = Tensor::new(shape, p.iter().map(|&b| b as u8 as f64).collect())?;
        let tt = Tensor::new(shape, t.iter().map(|&b| b as u8 as f64).collect())?;
        let got = evaluate(&pt, &tt, 0.5, &[format!("pair{i}")])?[0].metrics;
        let want = brute_force_metrics(&p, &t);
        for (a, b) in [
            (got.dice, want.dice),
            (got.iou, want.iou),
            (got.precision, want.precision),
            (got.recall, want.recall),
        ] {
            oracle = oracle.max((a - b).abs());
        }
        identity = identity.max((got.dice - 2.0 * got.iou / (1.0 + got.iou)).abs());
    }
    Ok((oracle, identity))
}

fn laplacian_energy(t: &Tensor<f64>) -> f64 {
    let s = t.shape();
    let mut e = 0.0;
    for p in 0..s.n * s.c {
        let d = &t.data()[p * s.plane()..(p + 1) * s.plane()];
        for y in 1..s.h - 1 {
            for x in 1..s.w - 1 {
                let i = y * s.w + x;
                let l = d[i - s.w] + d[i + s.w] + d[i - 1] + d[i + 1] - 4.0 * d[i];
                e += l * l;
            }
        }
    }
    e
}

fn nearest_2x(t: &Tensor<f64>) -> Tensor<f64> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, 2 * s.h, 2 * s.w), |n, c, y, x| t.at(n, c, y / 2, x / 2))
}

/// Laplacian energy of `(nearest, gaussian, lanczos)` upsampling of a
/// one-pixel checkerboard, and the worst constant-preservation error.
pub fn antialias_energies(size: usize) -> (f64, f64, f64, f64) {
    let board = Tensor::<f64>::from_fn(Shape::new(1, 1, size, size), |_, _, y, x| ((x + y) % 2) as f64);
    let run = |t: &Tensor<f64>, k| {
        let mut g = Graph::new();
        let x = g.input(t.clone());
        let y = upsample_fixed(&mut g, x, k);
        g.value(y).clone()
    };
    let (gk, lk) = (gaussian5(1.0), lanczos5());
    let nn = laplacian_energy(&nearest_2x(&board));
    let ga = laplacian_energy(&run(&board, &gk));
    let la = laplacian_energy(&run(&board, &lk));
    let constant = Tensor::<f64>::full(Shape::new(1, 2, size, size), 0.37);
    let mut worst = 0.0f64;
    for k in [&gk, &lk] {
        for v in run(&constant, k).data() {
            worst = worst.max((v - 0.37).abs());
        }
    }
    (nn, ga, la, worst)
}

/// Trains `variant` on four 64x64 blobs for `steps` updates at the default
/// optimiser settings and returns the training-set dice.
pub fn overfit_dice(variant: Variant, steps: usize) -> Result<f64> {
    let model = ModelConfig::desk().with_variant(variant);
    let cfg = TrainConfig {
        max_steps: Some(steps),
        epochs: steps,
        log_every: 50,
        ..TrainConfig::default()
    };
    let pairs = make_synthetic_blobs(4, 64, 7);
    let out = train(&model, &cfg, &pairs, &[])?;
    Ok(evaluate_checkpoint(&out.last, &pairs, 0.5)?.aggregate.dice)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestOptions {
    /// Skips the overfit run.
    pub quick: bool,
    /// Skews the backward pass of this op name (mutation test).
    pub corrupt_backward: Option<&'static str>,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{}  {:<width$}  {:>7.2}s  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.seconds,
                c.detail
            );
        }
        let _ = writeln!(s, "{} of {} checks passed", self.checks.len() - self.failures().len(), self.checks.len());
        s
    }
}

fn timed(name: impl Into<String>, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let t0 = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        name: name.into(),
        passed,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let body = || {
        let mut checks = Vec::new();
        for case in gradient_cases() {
            checks.push(timed(format!("gradient: {}", case.name), || {
                let rep = case.check()?;
                Ok((
                    rep.passes(GRAD_TOLERANCE),
                    format!("max rel err {:.2e} over {} elements", rep.max_rel_error, rep.checked),
                ))
            }));
        }
        checks.push(timed("wavelet round trip and energy", || {
            let (rt, en) = wavelet_exactness(1000, 3)?;
            Ok((
                rt < WAVELET_TOLERANCE && en < WAVELET_TOLERANCE,
                format!("round trip {rt:.1e}, energy {en:.1e}"),
            ))
        }));
        checks.push(timed("metric oracle", || {
            let (oracle, identity) = metric_oracle(100, 5)?;
            Ok((oracle <= 1e-12 && identity <= 1e-12, format!("oracle {oracle:.1e}, dice/iou identity {identity:.1e}")))
        }));
        checks.push(timed("anti-aliased upsampling", || {
            let (nn, ga, la, worst) = antialias_energies(8);
            Ok((
                ga < nn && la < nn && worst < 1e-6,
                format!("laplacian energy nearest {nn:.1}, gaussian {ga:.1}, lanczos {la:.1}; constant err {worst:.1e}"),
            ))
        }));
        if !opts.quick {
            checks.push(timed("overfit (variant iv, 300 steps)", || {
                let dice = overfit_dice(Variant::Full, OVERFIT_STEPS)?;
                Ok((dice >= OVERFIT_DICE, format!("train dice {dice:.4}")))
            }));
        }
        checks
    };
    let checks = match opts.corrupt_backward {
        Some(op) => corrupt_backward(op, body),
        None => body(),
    };
    SelftestReport { checks }
}
