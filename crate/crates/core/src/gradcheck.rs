//! Finite-difference audit of composed loss gradients.
//!
//! The tape gradient of a pair is compared with a central difference of
//! [`frozen_value`], which evaluates the loss with every detached quantity
//! (CIoU's α, WIoU's enclosing diagonal, the focusing coefficient) pinned
//! to its value at the unperturbed point.
//!
//! ```
//! use rand::SeedableRng;
//! use wiou::gradcheck::{check_pair, sample_pair, PairKind, DEFAULT_TOLERANCE};
//! use wiou::{BaseLoss, LossSpec};
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
//! let (anchor, target) = sample_pair(&mut rng, PairKind::Overlapping);
//! let spec = LossSpec::plain(BaseLoss::CIoU);
//! let check = check_pair(&spec, &anchor, &target, 1.0)?;
//! assert!(check.max_error <= DEFAULT_TOLERANCE);
//! # Ok::<(), wiou::Error>(())
//! ```

use rand::Rng;

use crate::error::Result;
use crate::geometry::BBox;
use crate::losses::{compose_on, frozen_value, LossSpec};
use crate::tape::Tape;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Relative tolerance used by default.
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Magnitude below which errors are measured in absolute terms. With the
/// default tolerance an absolute error of 1e-8 near zero passes.
pub const ERROR_FLOOR: f64 = 1e-3;

/// Distance kept from every kink of the piecewise geometry when sampling.
pub const KINK_MARGIN: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Analytic and numeric gradients of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub analytic: [f64; 4],
    pub numeric: [f64; 4],
    /// Largest [`relative_error`] over the four parameters.
    pub max_error: f64,
}

impl GradCheck {
    /// Every analytic component is exactly zero.
    pub fn vanishing(&self) -> bool {
        self.analytic.iter().all(|g| *g == 0.0)
    }
}

/// Compares the tape gradient of `spec` at `anchor` with central
/// differences of step [`FD_STEP`].
pub fn check_pair(spec: &LossSpec, anchor: &BBox, target: &BBox, mean: f64) -> Result<GradCheck> {
    let mut tape = Tape::with_capacity(128);
    let eval = compose_on(&mut tape, spec, anchor, target, mean, None)?;
    let base = anchor.as_array();
    let mut numeric = [0.0; 4];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let mut probe = |sign: f64| {
            let mut p = base;
            p[i] += sign * FD_STEP;
            let moved = BBox::new(p[0], p[1], p[2], p[3])?;
            frozen_value(&mut tape, spec, &moved, target, &eval.frozen)
        };
        *slot = (probe(1.0)? - probe(-1.0)?) / (2.0 * FD_STEP);
    }
    let max_error = eval
        .grad
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        analytic: eval.grad,
        numeric,
        max_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Overlapping,
    Disjoint,
}

/// Whether every piecewise branch of the pair geometry is at least
/// [`KINK_MARGIN`] from switching.
pub fn away_from_kinks(anchor: &BBox, target: &BBox) -> bool {
    let (dx, dy) = (anchor.x - target.x, anchor.y - target.y);
    let gaps = [
        anchor.left() - target.left(),
        anchor.right() - target.right(),
        anchor.bottom() - target.bottom(),
        anchor.top() - target.top(),
        anchor.right().min(target.right()) - anchor.left().max(target.left()),
        anchor.top().min(target.top()) - anchor.bottom().max(target.bottom()),
        dx,
        dy,
        dx.abs() - dy.abs(),
        anchor.w - target.w,
        anchor.h - target.h,
    ];
    gaps.iter().all(|g| g.abs() > KINK_MARGIN)
}

/// Random pair with centers in `[0.1, 0.9]²` of the requested kind, redrawn until it
/// is [`away_from_kinks`].
pub fn sample_pair<R: Rng>(rng: &mut R, kind: PairKind) -> (BBox, BBox) {
    let draw = |rng: &mut R| {
        BBox::new(
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.05..0.5),
            rng.gen_range(0.05..0.5),
        )
        .expect("sizes are positive")
    };
    loop {
        let (anchor, target) = (draw(rng), draw(rng));
        let overlapping = anchor.iou(&target) > 0.0;
        if overlapping == (kind == PairKind::Overlapping) && away_from_kinks(&anchor, &target) {
            return (anchor, target);
        }
    }
}
