//! IoU-family box regression losses.
//!
//! The additive losses are `L_IoU + R` for a geometric penalty `R`:
//!
//! | base  | penalty |
//! |-------|---------|
//! | GIoU  | empty fraction of the enclosing box |
//! | DIoU  | center distance over enclosing diagonal |
//! | EIoU  | DIoU plus per-axis center distance |
//! | CIoU  | DIoU plus weighted aspect-ratio term |
//! | SIoU  | angle-aware distance cost plus shape cost |
//!
//! WIoU v1 is multiplicative: `exp(d² / (W_g² + H_g²)*) · L_IoU`, with the
//! enclosing diagonal detached. Any base can be wrapped by a focusing
//! mechanism (see [`crate::focusing`]); [`compose`] assembles the whole
//! thing and returns the loss with its gradient on the anchor.
//!
//! ```
//! use wiou::geometry::BBox;
//! use wiou::losses::{compose, BaseLoss, LossSpec};
//!
//! let anchor = BBox::new(0.3, 0.3, 0.2, 0.2)?;
//! let target = BBox::new(0.5, 0.5, 0.2, 0.2)?;
//! let eval = compose(&LossSpec::plain(BaseLoss::DIoU), &anchor, &target, None)?;
//! // disjoint boxes: L_IoU = 1 and the normalized center distance is 0.25
//! assert!((eval.loss - 1.25).abs() < 1e-12);
//! // the penalty pulls the anchor toward the target
//! assert!(eval.grad[0] < 0.0 && eval.grad[1] < 0.0);
//! # Ok::<(), wiou::Error>(())
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_param, Error, Result};
use crate::focusing::{self, EmaTracker};
use crate::geometry::{iou_loss, BBox, PairGeometry};
use crate::tape::{Node, Tape};

/// Exponent of the SIoU shape cost.
pub const SHAPE_THETA: f64 = 4.0;

/// Default guard in the SIoU angle-cost denominator.
pub const DEFAULT_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseLoss {
    IoU,
    GIoU,
    DIoU,
    EIoU,
    CIoU,
    SIoU,
    WIoUv1,
}

impl BaseLoss {
    pub const ALL: [BaseLoss; 7] = [
        BaseLoss::IoU,
        BaseLoss::GIoU,
        BaseLoss::DIoU,
        BaseLoss::EIoU,
        BaseLoss::CIoU,
        BaseLoss::SIoU,
        BaseLoss::WIoUv1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseLoss::IoU => "iou",
            BaseLoss::GIoU => "giou",
            BaseLoss::DIoU => "diou",
            BaseLoss::EIoU => "eiou",
            BaseLoss::CIoU => "ciou",
            BaseLoss::SIoU => "siou",
            BaseLoss::WIoUv1 => "wiou1",
        }
    }

    /// Whether the loss adds a penalty that survives for disjoint boxes.
    pub fn has_penalty(self) -> bool {
        !matches!(self, BaseLoss::IoU)
    }
}

/// Focusing mechanism wrapped around a base loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Focus {
    None,
    /// `(L*/mean)^γ`
    MonotonicNormalized { gamma: f64 },
    /// `β / (δ α^(β-δ))`
    NonMonotonic { alpha: f64, delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub base: BaseLoss,
    pub focus: Focus,
    pub epsilon: f64,
}

impl LossSpec {
    pub fn plain(base: BaseLoss) -> Self {
        LossSpec {
            base,
            focus: Focus::None,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_focus(base: BaseLoss, focus: Focus) -> Result<Self> {
        let spec = LossSpec {
            base,
            focus,
            epsilon: DEFAULT_EPSILON,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_param("epsilon", self.epsilon, self.epsilon > 0.0, "must be > 0")?;
        match self.focus {
            Focus::None => Ok(()),
            Focus::MonotonicNormalized { gamma } => {
                check_param("gamma", gamma, gamma > 0.0, "must be > 0")
            }
            Focus::NonMonotonic { alpha, delta } => focusing::check_gain_params(alpha, delta),
        }
    }

    pub fn needs_tracker(&self) -> bool {
        !matches!(self.focus, Focus::None)
    }

    /// Names accepted by [`FromStr`], for error messages.
    pub fn valid_names() -> String {
        let mut names: Vec<String> = BaseLoss::ALL.iter().map(|b| b.name().to_string()).collect();
        names.extend(["wiou2".into(), "wiou3".into()]);
        names.push("<base>-v2[:gamma]".into());
        names.push("<base>-v3[:alpha:delta]".into());
        names.join(", ")
    }
}

/// Canonical label: `ciou`, `wiou1-v2:0.5`, `siou-v3:1.9:3`. Parses back
/// through [`FromStr`].
impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.name())?;
        match self.focus {
            Focus::None => Ok(()),
            Focus::MonotonicNormalized { gamma } => write!(f, "-v2:{gamma}"),
            Focus::NonMonotonic { alpha, delta } => write!(f, "-v3:{alpha}:{delta}"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownLoss {
            name: s.to_string(),
            valid: LossSpec::valid_names(),
        };
        let s_lower = s.trim().to_ascii_lowercase();
        let mut parts = s_lower.split(':');
        let head = parts.next().unwrap_or_default();
        let params: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| unknown()))
            .collect::<Result<_>>()?;
        let (base_name, version) = match head {
            "wiou2" => ("wiou1", Some("v2")),
            "wiou3" => ("wiou1", Some("v3")),
            _ => match head.split_once('-') {
                Some((b, v)) => (b, Some(v)),
                None => (head, None),
            },
        };
        let base = BaseLoss::ALL
            .into_iter()
            .find(|b| b.name() == base_name)
            .ok_or_else(unknown)?;
        let focus = match (version, params.as_slice()) {
            (None, []) => Focus::None,
            (Some("v2"), []) => Focus::MonotonicNormalized {
                gamma: focusing::DEFAULT_GAMMA,
            },
            (Some("v2"), [gamma]) => Focus::MonotonicNormalized { gamma: *gamma },
            (Some("v3"), []) => {
                let (alpha, delta) = focusing::GAIN_PRESETS[2];
                Focus::NonMonotonic { alpha, delta }
            }
            (Some("v3"), [alpha, delta]) => Focus::NonMonotonic {
                alpha: *alpha,
                delta: *delta,
            },
            _ => return Err(unknown()),
        };
        LossSpec::with_focus(base, focus)
    }
}

/// Quantities that are constants under differentiation. Normally computed
/// from the current point; a gradient check can pin them to the values of
/// a reference point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Frozen {
    /// CIoU trade-off weight `v / (L_IoU + v)`.
    pub ciou_alpha: Option<f64>,
    /// WIoU's detached `W_g² + H_g²`.
    pub wiou_diagonal_sq: Option<f64>,
    /// Focusing coefficient.
    pub focus_coeff: Option<f64>,
}

/// `d² / (W_g² + H_g²)`
pub fn r_diou<'t>(g: &PairGeometry<'t>) -> Result<Node<'t>> {
    Ok(g.center_distance_sq().div(g.enclosing_diagonal_sq())?)
}

/// `R_DIoU + dx²/W_g² + dy²/H_g²`
pub fn r_eiou<'t>(g: &PairGeometry<'t>) -> Result<Node<'t>> {
    let x_term = g.dx.square().div(g.w_g.square())?;
    let y_term = g.dy.square().div(g.h_g.square())?;
    Ok(r_diou(g)? + x_term + y_term)
}

/// Aspect-ratio consistency `(4/π²)(atan(w/h) - atan(w_gt/h_gt))²`.
pub fn aspect_v<'t>(g: &PairGeometry<'t>) -> Result<Node<'t>> {
    let a = g.anchor.w.div(g.anchor.h)?.atan();
    let t = g.target.w.div(g.target.h)?.atan();
    Ok((a - t).square() * (4.0 / (PI * PI)))
}

/// `v / (L_IoU + v)`, or 0 when both vanish.
pub fn ciou_alpha(iou_loss: f64, v: f64) -> f64 {
    let denom = iou_loss + v;
    if denom == 0.0 {
        0.0
    } else {
        v / denom
    }
}

/// `R_DIoU + α v` with `α` held constant. `alpha = None` computes it from
/// the current values.
pub fn r_ciou<'t>(g: &PairGeometry<'t>, iou: Node<'t>, alpha: Option<f64>) -> Result<Node<'t>> {
    let v = aspect_v(g)?;
    let alpha = alpha.unwrap_or_else(|| ciou_alpha(iou.value(), v.value()));
    Ok(r_diou(g)? + v * alpha)
}

/// Angle cost `Λ = sin(2 asin(min(|dx|,|dy|) / (d + ε)))`.
pub fn siou_angle<'t>(g: &PairGeometry<'t>, epsilon: f64) -> Result<Node<'t>> {
    let d2 = g.center_distance_sq();
    // At coincident centers the numerator is 0 with zero subgradient, so the
    // distance can enter as a constant instead of hitting sqrt'(0).
    let d = if d2.value() > 0.0 {
        d2.sqrt()?
    } else {
        d2.tape().constant(0.0)
    };
    let ratio = g.dx.abs().min(g.dy.abs()).div(d + epsilon)?;
    Ok((ratio.asin()? * 2.0).sin())
}

/// Distance cost `Δ = ½ Σ (1 - exp(-(2 - Λ) ρ_t))`, `ρ_x = (dx/W_g)²`,
/// `ρ_y = (dy/H_g)²`.
pub fn siou_distance<'t>(g: &PairGeometry<'t>, angle: Node<'t>) -> Result<Node<'t>> {
    let gamma = 2.0 - angle;
    let rho_x = g.dx.div(g.w_g)?.square();
    let rho_y = g.dy.div(g.h_g)?.square();
    let term = |rho: Node<'t>| 1.0 - (-(gamma * rho)).exp();
    Ok((term(rho_x) + term(rho_y)) * 0.5)
}

/// Shape cost `Ω = ½ Σ (1 - exp(-ω_t))^θ`, `ω_w = |w - w_gt| / max(w, w_gt)`.
pub fn siou_shape<'t>(g: &PairGeometry<'t>) -> Result<Node<'t>> {
    let term = |a: Node<'t>, t: Node<'t>| -> Result<Node<'t>> {
        let omega = (a - t).abs().div(a.max(t))?;
        Ok((1.0 - (-omega).exp()).powf(SHAPE_THETA)?)
    };
    let w = term(g.anchor.w, g.target.w)?;
    let h = term(g.anchor.h, g.target.h)?;
    Ok((w + h) * 0.5)
}

/// `Δ + Ω`
pub fn r_siou<'t>(g: &PairGeometry<'t>, epsilon: f64) -> Result<Node<'t>> {
    let angle = siou_angle(g, epsilon)?;
    Ok(siou_distance(g, angle)? + siou_shape(g)?)
}

/// `(W_g H_g - S_u) / (W_g H_g)`
pub fn giou_penalty<'t>(g: &PairGeometry<'t>) -> Result<Node<'t>> {
    let enclosing = g.w_g * g.h_g;
    Ok((enclosing - g.s_u).div(enclosing)?)
}

/// `exp(d² / (W_g² + H_g²)*)`. `diagonal_sq = None` detaches the current
/// enclosing diagonal; `Some(c)` uses the constant `c`.
pub fn r_wiou<'t>(g: &PairGeometry<'t>, diagonal_sq: Option<f64>) -> Result<Node<'t>> {
    let denom = match diagonal_sq {
        Some(c) => g.dx.tape().constant(c),
        None => g.enclosing_diagonal_sq().detach(),
    };
    Ok(g.center_distance_sq().div(denom)?.exp())
}

/// `R_WIoU · L_IoU`
pub fn wiou_v1<'t>(g: &PairGeometry<'t>, iou: Node<'t>, diagonal_sq: Option<f64>) -> Result<Node<'t>> {
    Ok(r_wiou(g, diagonal_sq)? * iou)
}

/// Builds the base loss (no focusing) on `g`'s tape.
pub fn base_loss<'t>(
    base: BaseLoss,
    g: &PairGeometry<'t>,
    iou: Node<'t>,
    epsilon: f64,
    frozen: &Frozen,
) -> Result<Node<'t>> {
    Ok(match base {
        BaseLoss::IoU => iou,
        BaseLoss::GIoU => iou + giou_penalty(g)?,
        BaseLoss::DIoU => iou + r_diou(g)?,
        BaseLoss::EIoU => iou + r_eiou(g)?,
        BaseLoss::CIoU => iou + r_ciou(g, iou, frozen.ciou_alpha)?,
        BaseLoss::SIoU => iou + r_siou(g, epsilon)?,
        BaseLoss::WIoUv1 => wiou_v1(g, iou, frozen.wiou_diagonal_sq)?,
    })
}

/// The focusing coefficient for a detached IoU loss and running mean.
pub fn focus_coefficient(focus: Focus, iou_loss: f64, mean: f64) -> Result<f64> {
    match focus {
        Focus::None => Ok(1.0),
        Focus::MonotonicNormalized { gamma } => focusing::monotonic_coeff(iou_loss, mean, gamma),
        Focus::NonMonotonic { alpha, delta } => {
            let beta = focusing::outlier_degree(iou_loss, mean)?;
            Ok(focusing::gain(beta, alpha, delta))
        }
    }
}

/// Loss value and anchor gradient for one (anchor, target) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// The optimized loss, focusing coefficient included.
    pub loss: f64,
    /// Plain `L_IoU` of the pair.
    pub iou_loss: f64,
    /// ∂loss/∂(x, y, w, h) of the anchor.
    pub grad: [f64; 4],
    /// Constants that were used for the detached quantities.
    pub frozen: Frozen,
}

/// Assembles `spec` for one pair on a fresh tape.
///
/// `tracker` supplies the running mean and must be present when the spec
/// has a focusing mechanism.
pub fn compose(
    spec: &LossSpec,
    anchor: &BBox,
    target: &BBox,
    tracker: Option<&EmaTracker>,
) -> Result<Evaluation> {
    let mean = match (spec.needs_tracker(), tracker) {
        (false, _) => 1.0,
        (true, Some(t)) => t.mean(),
        (true, None) => {
            return Err(Error::MissingTracker {
                spec: spec.to_string(),
            })
        }
    };
    let mut tape = Tape::with_capacity(128);
    compose_on(&mut tape, spec, anchor, target, mean, None)
}

/// [`compose`] on a caller-owned tape (cleared first) with an explicit
/// running mean. `frozen` overrides the detached quantities.
///
/// Coincident boxes are the global minimum of every loss, where the
/// tie-breaking of `min`/`max` would otherwise pick a one-sided derivative;
/// they get loss 0 and the zero subgradient.
pub fn compose_on(
    tape: &mut Tape,
    spec: &LossSpec,
    anchor: &BBox,
    target: &BBox,
    mean: f64,
    frozen: Option<&Frozen>,
) -> Result<Evaluation> {
    if anchor == target {
        let focus_coeff = match spec.focus {
            Focus::None => None,
            focus => Some(focus_coefficient(focus, 0.0, mean)?),
        };
        return Ok(Evaluation {
            loss: 0.0,
            iou_loss: 0.0,
            grad: [0.0; 4],
            frozen: Frozen {
                ciou_alpha: (spec.base == BaseLoss::CIoU).then_some(0.0),
                wiou_diagonal_sq: (spec.base == BaseLoss::WIoUv1)
                    .then_some(anchor.w * anchor.w + anchor.h * anchor.h),
                focus_coeff,
            },
        });
    }
    tape.clear();
    let tape = &*tape;
    let g = PairGeometry::on_tape(tape, anchor, target)?;
    let iou = iou_loss(&g)?;

    let mut used = frozen.copied().unwrap_or_default();
    if spec.base == BaseLoss::CIoU && used.ciou_alpha.is_none() {
        let v = aspect_v(&g)?;
        used.ciou_alpha = Some(ciou_alpha(iou.value(), v.value()));
    }
    if spec.base == BaseLoss::WIoUv1 && used.wiou_diagonal_sq.is_none() {
        used.wiou_diagonal_sq = Some(g.enclosing_diagonal_sq().detach().value());
    }
    let base = base_loss(spec.base, &g, iou, spec.epsilon, &used)?;

    let loss = match spec.focus {
        Focus::None => base,
        focus => {
            let coeff = match used.focus_coeff {
                Some(c) => c,
                None => focus_coefficient(focus, iou.detach().value(), mean)?,
            };
            used.focus_coeff = Some(coeff);
            base * coeff
        }
    };

    let grads = loss.backward()?;
    let mut grad = [0.0; 4];
    for (slot, node) in grad.iter_mut().zip(g.anchor.as_array()) {
        *slot = grads.wrt(node)?;
    }
    Ok(Evaluation {
        loss: loss.value(),
        iou_loss: iou.value(),
        grad,
        frozen: used,
    })
}

/// Loss value only, with every detached quantity pinned to `frozen`.
pub fn frozen_value(
    tape: &mut Tape,
    spec: &LossSpec,
    anchor: &BBox,
    target: &BBox,
    frozen: &Frozen,
) -> Result<f64> {
    Ok(compose_on(tape, spec, anchor, target, 1.0, Some(frozen))?.loss)
}
