//! Soft dice and binary cross-entropy losses as graph ops.

use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Tensor, Var};

pub const DICE_EPS: f64 = 1e-6;
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the BCE.
pub const BCE_CLAMP: f64 = 1e-7;

fn check_pair<T: Real>(g: &Graph<T>, op: &'static str, pred: Var, target: Var) -> Result<usize> {
    let (a, b) = (g.value(pred).shape(), g.value(target).shape());
    if a != b {
        return Err(Error::shape(op, format!("prediction {a} vs target {b}")));
    }
    Ok(a.numel())
}

/// `1 - (2 sum(p g) + eps) / (sum p + sum g + eps)` over the whole batch.
pub fn dice_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var, eps: f64) -> Result<Var> {
    check_pair(g, "dice_loss", pred, target)?;
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("dice_loss", format!("eps must be positive, got {eps}")));
    }
    let (p, t) = (g.value(pred).data(), g.value(target).data());
    let mut inter = 0.0;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(t) {
        inter += a.as_f64() * b.as_f64();
        total += a.as_f64() + b.as_f64();
    }
    let num = 2.0 * inter + eps;
    let den = total + eps;
    let loss = 1.0 - num / den;
    Ok(g.push_op(
        "dice_loss",
        &[pred, target],
        Tensor::scalar(T::from_f64(loss)),
        Box::new(move |ctx| {
            let up = ctx.grad[0].as_f64();
            let (p, t) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let d = |other: &[T]| {
                other
                    .iter()
                    .map(|&o| T::from_f64(-up * (2.0 * o.as_f64() * den - num) / (den * den)))
                    .collect()
            };
            vec![ctx.needs[0].then(|| d(t)), ctx.needs[1].then(|| d(p))]
        }),
    ))
}

/// Mean over all pixels of `-(g ln p + (1 - g) ln(1 - p))`, `p` clamped.
pub fn bce_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let n = check_pair(g, "bce_loss", pred, target)? as f64;
    let clamp = |a: T| a.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let (p, t) = (g.value(pred).data(), g.value(target).data());
    let total: f64 = p
        .iter()
        .zip(t)
        .map(|(&a, &b)| {
            let (pc, y) = (clamp(a), b.as_f64());
            -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
        })
        .sum();
    Ok(g.push_op(
        "bce_loss",
        &[pred, target],
        Tensor::scalar(T::from_f64(total / n)),
        Box::new(move |ctx| {
            let up = ctx.grad[0].as_f64() / n;
            let (p, t) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let dp = ctx.needs[0].then(|| {
                p.iter()
                    .zip(t)
                    .map(|(&a, &b)| {
                        let raw = a.as_f64();
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&raw) {
                            return T::zero();
                        }
                        let y = b.as_f64();
                        T::from_f64(up * (-y / raw + (1.0 - y) / (1.0 - raw)))
                    })
                    .collect()
            });
            let dt = ctx.needs[1].then(|| {
                p.iter()
                    .map(|&a| {
                        let pc = clamp(a);
                        T::from_f64(up * ((1.0 - pc).ln() - pc.ln()))
                    })
                    .collect()
            });
            vec![dp, dt]
        }),
    ))
}

/// Weights of the two loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub dice: f64,
    pub bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { dice: 1.0, bce: 1.0 }
    }
}

/// Handles of the individual terms and the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub dice: Var,
    pub bce: Var,
}

/// `w_dice * dice_loss + w_bce * bce_loss`. A zero-weight term is left out of
/// the total, so the total equals the other term exactly.
pub fn combined_loss<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    weights: LossWeights,
) -> Result<LossTerms> {
    if !(weights.dice >= 0.0 && weights.bce >= 0.0) {
        return Err(Error::invalid("combined_loss", "loss weights must be non-negative"));
    }
    let dice = dice_loss(g, pred, target, DICE_EPS)?;
    let bce = bce_loss(g, pred, target)?;
    let weighted = |g: &mut Graph<T>, v: Var, w: f64| if w == 1.0 { v } else { g.scale(v, w) };
    let total = match (weights.dice == 0.0, weights.bce == 0.0) {
        (true, false) => weighted(g, bce, weights.bce),
        (false, true) => weighted(g, dice, weights.dice),
        (true, true) => g.scale(dice, 0.0),
        (false, false) => {
            let a = weighted(g, dice, weights.dice);
            let b = weighted(g, bce, weights.bce);
            g.add(a, b)?
        }
    };
    Ok(LossTerms { total, dice, bce })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{random_tensor, GradCheck};
    use crate::nn::Shape;

    fn mask(shape: Shape, f: impl Fn(usize) -> bool) -> Tensor<f64> {
        let mut i = 0;
        Tensor::from_fn(shape, |_, _, _, _| {
            i += 1;
            if f(i - 1) { 1.0 } else { 0.0 }
        })
    }

    fn eval(f: impl Fn(&mut Graph<f64>, Var, Var) -> Var, p: &Tensor<f64>, t: &Tensor<f64>) -> f64 {
        let mut g = Graph::new();
        let (pv, tv) = (g.input(p.clone()), g.input(t.clone()));
        let out = f(&mut g, pv, tv);
        g.value(out).data()[0]
    }

    #[test]
    fn dice_perfect_and_disjoint() {
        let s = Shape::new(1, 1, 4, 4);
        let t = mask(s, |i| i % 2 == 0);
        let inv = mask(s, |i| i % 2 == 1);
        let perfect = eval(|g, p, t| dice_loss(g, p, t, DICE_EPS).unwrap(), &t, &t);
        assert!(perfect.abs() < 1e-6);
        let disjoint = eval(|g, p, t| dice_loss(g, p, t, DICE_EPS).unwrap(), &inv, &t);
        // 1 - eps / (16 + eps)
        assert!((disjoint - 1.0).abs() < 1e-6, "{disjoint}");
    }

    #[test]
    fn bce_half_is_ln2() {
        let s = Shape::new(2, 1, 3, 3);
        let p = Tensor::full(s, 0.5);
        let t = mask(s, |i| i % 3 == 0);
        let v = eval(|g, p, t| bce_loss(g, p, t).unwrap(), &p, &t);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = eval(|g, p, t| bce_loss(g, p, t).unwrap(), &t, &t);
        assert!(perfect < 1e-6 + 2e-7, "{perfect}");
    }

    #[test]
    fn combined_degenerate_weights() {
        let s = Shape::new(1, 1, 4, 4);
        let p = random_tensor(s, 3).data().iter().map(|v| 0.5 + 0.4 * v).collect::<Vec<_>>();
        let p = Tensor::new(s, p).unwrap();
        let t = mask(s, |i| i < 6);
        let dice = eval(|g, p, t| dice_loss(g, p, t, DICE_EPS).unwrap(), &p, &t);
        let bce = eval(|g, p, t| bce_loss(g, p, t).unwrap(), &p, &t);
        let only_bce = LossWeights { dice: 0.0, bce: 1.0 };
        let only_dice = LossWeights { dice: 1.0, bce: 0.0 };
        assert_eq!(eval(|g, p, t| combined_loss(g, p, t, only_bce).unwrap().total, &p, &t), bce);
        assert_eq!(eval(|g, p, t| combined_loss(g, p, t, only_dice).unwrap().total, &p, &t), dice);
        let both = eval(|g, p, t| combined_loss(g, p, t, LossWeights::default()).unwrap().total, &p, &t);
        assert_eq!(both, dice + bce);
    }

    #[test]
    fn shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let b = g.input(Tensor::zeros(Shape::new(1, 1, 2, 3)));
        assert!(matches!(dice_loss(&mut g, a, b, DICE_EPS), Err(Error::Shape { .. })));
        assert!(matches!(bce_loss(&mut g, a, b), Err(Error::Shape { .. })));
    }

    fn probs(shape: Shape, seed: u64) -> Tensor<f64> {
        let r = random_tensor(shape, seed);
        Tensor::new(shape, r.data().iter().map(|v| 0.5 + 0.45 * v).collect()).unwrap()
    }

    #[test]
    fn gradients() {
        let s = Shape::new(2, 1, 4, 4);
        let inputs = [probs(s, 1), mask(s, |i| i % 3 == 1)];
        for (name, f) in [
            ("dice", (|g: &mut Graph<f64>, v: &[Var]| dice_loss(g, v[0], v[1], DICE_EPS)) as fn(&mut Graph<f64>, &[Var]) -> Result<Var>),
            ("bce", |g, v| bce_loss(g, v[0], v[1])),
            ("combined", |g, v| Ok(combined_loss(g, v[0], v[1], LossWeights::default())?.total)),
        ] {
            let report = GradCheck::default().run(&inputs, f).unwrap();
            assert!(report.passes(1e-6), "{name}: {report:?}");
        }
    }
}
