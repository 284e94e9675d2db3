//! Box algebra: overlap, union, smallest enclosing box and the IoU loss.
//!
//! Boxes are stored as center and size. The plain-`f64` helpers here
//! ([`BBox::iou`], [`EnclosureGeom`]) are used for reporting and for
//! the simulator bookkeeping; the differentiable versions live on a
//! [`PairGeometry`], which records every intermediate quantity as a
//! [`Node`] so gradients can be read off any of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Node, Tape};

/// Axis-aligned box given by its center `(x, y)` and size `(w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Rejects non-finite coordinates and non-positive sizes.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let reason = if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            Some("non-finite coordinate")
        } else if !(w > 0.0 && h > 0.0) {
            Some("width and height must be positive")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidBox { x, y, w, h, reason }),
            None => Ok(BBox { x, y, w, h }),
        }
    }

    pub fn left(&self) -> f64 {
        self.x - 0.5 * self.w
    }

    pub fn right(&self) -> f64 {
        self.x + 0.5 * self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y - 0.5 * self.h
    }

    pub fn top(&self) -> f64 {
        self.y + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Whether `(px, py)` lies inside the box (edges included).
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.left() && px <= self.right() && py >= self.bottom() && py <= self.top()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let g = EnclosureGeom::new(self, other);
        g.w_i * g.h_i / g.s_u
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// Overlap, union and enclosing-box sizes of a box pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnclosureGeom {
    pub w_i: f64,
    pub h_i: f64,
    pub s_u: f64,
    pub w_g: f64,
    pub h_g: f64,
}

impl EnclosureGeom {
    pub fn new(anchor: &BBox, target: &BBox) -> Self {
        let w_i = (anchor.right().min(target.right()) - anchor.left().max(target.left())).max(0.0);
        let h_i = (anchor.top().min(target.top()) - anchor.bottom().max(target.bottom())).max(0.0);
        let w_g = anchor.right().max(target.right()) - anchor.left().min(target.left());
        let h_g = anchor.top().max(target.top()) - anchor.bottom().min(target.bottom());
        // areas from edge differences so identical boxes give S_u == W_i H_i
        let edge_area = |b: &BBox| (b.right() - b.left()) * (b.top() - b.bottom());
        EnclosureGeom {
            w_i,
            h_i,
            s_u: edge_area(anchor) + edge_area(target) - w_i * h_i,
            w_g,
            h_g,
        }
    }
}

/// The four box parameters as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct BoxNodes<'t> {
    pub x: Node<'t>,
    pub y: Node<'t>,
    pub w: Node<'t>,
    pub h: Node<'t>,
}

impl<'t> BoxNodes<'t> {
    /// Differentiable inputs.
    pub fn leaves(tape: &'t Tape, b: &BBox) -> Result<Self> {
        Ok(BoxNodes {
            x: tape.leaf(b.x)?,
            y: tape.leaf(b.y)?,
            w: tape.leaf(b.w)?,
            h: tape.leaf(b.h)?,
        })
    }

    /// Fixed values, e.g. a target box.
    pub fn constants(tape: &'t Tape, b: &BBox) -> Self {
        BoxNodes {
            x: tape.constant(b.x),
            y: tape.constant(b.y),
            w: tape.constant(b.w),
            h: tape.constant(b.h),
        }
    }

    pub fn as_array(&self) -> [Node<'t>; 4] {
        [self.x, self.y, self.w, self.h]
    }

    fn edges(&self) -> (Node<'t>, Node<'t>, Node<'t>, Node<'t>) {
        let half_w = self.w * 0.5;
        let half_h = self.h * 0.5;
        (
            self.x - half_w,
            self.x + half_w,
            self.y - half_h,
            self.y + half_h,
        )
    }
}

/// Differentiable geometry of an (anchor, target) pair.
#[derive(Debug, Clone, Copy)]
pub struct PairGeometry<'t> {
    pub anchor: BoxNodes<'t>,
    pub target: BoxNodes<'t>,
    /// `x - x_gt`
    pub dx: Node<'t>,
    /// `y - y_gt`
    pub dy: Node<'t>,
    pub w_i: Node<'t>,
    pub h_i: Node<'t>,
    pub s_u: Node<'t>,
    pub w_g: Node<'t>,
    pub h_g: Node<'t>,
}

impl<'t> PairGeometry<'t> {
    pub fn new(anchor: BoxNodes<'t>, target: BoxNodes<'t>) -> Self {
        let tape = anchor.x.tape();
        let zero = tape.constant(0.0);
        let (al, ar, ab, at) = anchor.edges();
        let (tl, tr, tb, tt) = target.edges();
        // `zero` goes first so that touching boxes (overlap exactly 0) get the
        // zero-gradient branch of the max.
        let w_i = zero.max(ar.min(tr) - al.max(tl));
        let h_i = zero.max(at.min(tt) - ab.max(tb));
        let w_g = ar.max(tr) - al.min(tl);
        let h_g = at.max(tt) - ab.min(tb);
        // areas from edge differences so identical boxes give S_u == W_i H_i
        let s_u = (ar - al) * (at - ab) + (tr - tl) * (tt - tb) - w_i * h_i;
        PairGeometry {
            anchor,
            target,
            dx: anchor.x - target.x,
            dy: anchor.y - target.y,
            w_i,
            h_i,
            s_u,
            w_g,
            h_g,
        }
    }

    /// Anchor as leaves, target as constants.
    pub fn on_tape(tape: &'t Tape, anchor: &BBox, target: &BBox) -> Result<Self> {
        Ok(Self::new(
            BoxNodes::leaves(tape, anchor)?,
            BoxNodes::constants(tape, target),
        ))
    }

    /// `(x - x_gt)^2 + (y - y_gt)^2`
    pub fn center_distance_sq(&self) -> Node<'t> {
        self.dx.square() + self.dy.square()
    }

    /// `W_g^2 + H_g^2`
    pub fn enclosing_diagonal_sq(&self) -> Node<'t> {
        self.w_g.square() + self.h_g.square()
    }
}

/// `1 - W_i H_i / S_u`.
pub fn iou_loss<'t>(g: &PairGeometry<'t>) -> Result<Node<'t>> {
    Ok(1.0 - (g.w_i * g.h_i).div(g.s_u)?)
}
