//! Plain-`f64` reference implementations written from the corner form of a
//! box, without the tape or the library's geometry helpers.

#![allow(dead_code)]

use std::f64::consts::PI;

use wiou::{BaseLoss, Focus, LossSpec};

/// `(x, y, w, h)`
pub type Params = [f64; 4];

fn corners(b: &Params) -> (f64, f64, f64, f64) {
    let [x, y, w, h] = *b;
    (x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0)
}

/// Intersection and union areas.
pub fn overlap(a: &Params, t: &Params) -> (f64, f64) {
    let (ax1, ay1, ax2, ay2) = corners(a);
    let (tx1, ty1, tx2, ty2) = corners(t);
    let iw = f64::max(0.0, f64::min(ax2, tx2) - f64::max(ax1, tx1));
    let ih = f64::max(0.0, f64::min(ay2, ty2) - f64::max(ay1, ty1));
    let inter = iw * ih;
    (inter, a[2] * a[3] + t[2] * t[3] - inter)
}

/// Width and height of the smallest enclosing box.
pub fn enclosing(a: &Params, t: &Params) -> (f64, f64) {
    let (ax1, ay1, ax2, ay2) = corners(a);
    let (tx1, ty1, tx2, ty2) = corners(t);
    (
        f64::max(ax2, tx2) - f64::min(ax1, tx1),
        f64::max(ay2, ty2) - f64::min(ay1, ty1),
    )
}

pub fn iou_loss(a: &Params, t: &Params) -> f64 {
    let (inter, union) = overlap(a, t);
    1.0 - inter / union
}

pub fn aspect_v(a: &Params, t: &Params) -> f64 {
    let diff = (t[2] / t[3]).atan() - (a[2] / a[3]).atan();
    4.0 * diff * diff / (PI * PI)
}

/// Quantities excluded from differentiation.
#[derive(Debug, Clone, Copy)]
pub struct Detached {
    pub ciou_alpha: f64,
    pub diagonal_sq: f64,
    pub coeff: f64,
}

/// Detached quantities at `a` for running mean `mean`.
pub fn detached(spec: &LossSpec, a: &Params, t: &Params, mean: f64) -> Detached {
    let l = iou_loss(a, t);
    let v = aspect_v(a, t);
    let (cw, ch) = enclosing(a, t);
    let coeff = match spec.focus {
        Focus::None => 1.0,
        Focus::MonotonicNormalized { gamma } => (l / mean).powf(gamma),
        Focus::NonMonotonic { alpha, delta } => {
            let beta = l / mean;
            beta * alpha.powf(delta - beta) / delta
        }
    };
    Detached {
        ciou_alpha: if l + v > 0.0 { v / (l + v) } else { 0.0 },
        diagonal_sq: cw * cw + ch * ch,
        coeff,
    }
}

fn siou_penalty(a: &Params, t: &Params, eps: f64) -> f64 {
    let (dx, dy) = (t[0] - a[0], t[1] - a[1]);
    let sigma = dx.hypot(dy);
    let s = f64::min(dx.abs(), dy.abs()) / (sigma + eps);
    // sin(2 asin s) = 2 s cos(asin s)
    let angle = 2.0 * s * (1.0 - s * s).sqrt();
    let (cw, ch) = enclosing(a, t);
    let gamma = 2.0 - angle;
    let distance = 0.5 * [(dx / cw).powi(2), (dy / ch).powi(2)]
        .iter()
        .map(|rho| 1.0 - (-gamma * rho).exp())
        .sum::<f64>();
    let shape = 0.5 * [(a[2], t[2]), (a[3], t[3])]
        .iter()
        .map(|(p, q)| {
            let omega = (p - q).abs() / p.max(*q);
            (1.0 - (-omega).exp()).powi(4)
        })
        .sum::<f64>();
    distance + shape
}

/// Loss value with the detached quantities taken from `d`.
pub fn loss(spec: &LossSpec, a: &Params, t: &Params, d: &Detached) -> f64 {
    let l = iou_loss(a, t);
    let (_, union) = overlap(a, t);
    let (cw, ch) = enclosing(a, t);
    let rho2 = (a[0] - t[0]).powi(2) + (a[1] - t[1]).powi(2);
    let diou = rho2 / (cw * cw + ch * ch);
    let base = match spec.base {
        BaseLoss::IoU => l,
        BaseLoss::GIoU => l + (cw * ch - union) / (cw * ch),
        BaseLoss::DIoU => l + diou,
        BaseLoss::EIoU => {
            l + diou + (a[0] - t[0]).powi(2) / (cw * cw) + (a[1] - t[1]).powi(2) / (ch * ch)
        }
        BaseLoss::CIoU => l + diou + d.ciou_alpha * aspect_v(a, t),
        BaseLoss::SIoU => l + siou_penalty(a, t, spec.epsilon),
        BaseLoss::WIoUv1 => (rho2 / d.diagonal_sq).exp() * l,
    };
    d.coeff * base
}

/// Central differences of [`loss`] with `d` held fixed.
pub fn fd_gradient(spec: &LossSpec, a: &Params, t: &Params, d: &Detached, step: f64) -> Params {
    let mut g = [0.0; 4];
    for (i, slot) in g.iter_mut().enumerate() {
        let (mut plus, mut minus) = (*a, *a);
        plus[i] += step;
        minus[i] -= step;
        *slot = (loss(spec, &plus, t, d) - loss(spec, &minus, t, d)) / (2.0 * step);
    }
    g
}

/// Every base with no focusing, monotonic focusing and non-monotonic focusing.
pub fn all_specs() -> Vec<LossSpec> {
    let mut specs = Vec::new();
    for base in BaseLoss::ALL {
        specs.push(LossSpec::plain(base));
        specs.push(LossSpec::with_focus(base, Focus::MonotonicNormalized { gamma: 0.5 }).unwrap());
        specs.push(
            LossSpec::with_focus(
                base,
                Focus::NonMonotonic {
                    alpha: 1.9,
                    delta: 3.0,
                },
            )
            .unwrap(),
        );
    }
    specs
}
