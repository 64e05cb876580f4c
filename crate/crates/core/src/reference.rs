//! Published reference scores for the four variants and two datasets,
//! in percent. They come from full-resolution (512x512, growth 32) training
//! on the real datasets and are not reproducible at desk scale; nothing in
//! this crate asserts that a trained model reaches them.

use crate::model::Variant;

/// Percent scores; fields a source does not report are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceScore {
    pub dice: f64,
    pub iou: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

const fn full(dice: f64, precision: f64, recall: f64, iou: f64) -> ReferenceScore {
    ReferenceScore {
        dice,
        iou,
        precision: Some(precision),
        recall: Some(recall),
    }
}

/// Ablation on MoNuSeg, one entry per variant in [`Variant::ALL`] order.
pub const ABLATION_MONUSEG: [(Variant, ReferenceScore); 4] = [
    (Variant::BaselineUnetDensenet, full(77.39, 72.56, 83.17, 63.17)),
    (Variant::WgcamGap, full(78.77, 73.67, 84.89, 65.03)),
    (Variant::WgcamLwgap, full(78.89, 75.75, 82.62, 65.20)),
    (Variant::Full, full(79.46, 76.26, 84.91, 66.57)),
];

/// Full model on each dataset.
pub const DATASETS: [(&str, ReferenceScore); 2] = [
    (
        "MoNuSeg",
        ReferenceScore {
            dice: 79.46,
            iou: 66.57,
            precision: None,
            recall: None,
        },
    ),
    (
        "TNBC",
        ReferenceScore {
            dice: 81.65,
            iou: 69.18,
            precision: None,
            recall: None,
        },
    ),
];

pub fn ablation(variant: Variant) -> ReferenceScore {
    ABLATION_MONUSEG
        .iter()
        .find(|(v, _)| *v == variant)
        .map(|(_, s)| *s)
        .expect("every variant has a reference row")
}

pub fn dataset(name: &str) -> Option<ReferenceScore> {
    DATASETS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, s)| *s)
}
