//! IoU-family bounding-box regression losses with focusing mechanisms.
//!
//! * [`tape`]: scalar reverse-mode differentiation with stop-gradient
//! * [`geometry`]: boxes, overlap, enclosing box, IoU loss
//! * [`losses`]: GIoU, DIoU, EIoU, CIoU, SIoU and WIoU v1, plus [`losses::compose`]
//! * [`focusing`]: monotonic and non-monotonic gradient gains, EMA normalizer
//! * [`gradcheck`]: finite-difference audit of composed gradients
//! * [`simlab`]: the anchor/target regression simulation
//! * [`csv`]: file formats for curves, cases and gain tables
//!
//! The `book/` directory at the repository root walks through each of these;
//! its code listings are compiled and run as doctests of this crate.

pub mod csv;
mod error;
pub mod focusing;
pub mod gradcheck;
pub mod geometry;
pub mod losses;
pub mod simlab;
pub mod tape;

pub use error::{Error, Result};
pub use focusing::EmaTracker;
pub use geometry::BBox;
pub use losses::{compose, BaseLoss, Evaluation, Focus, LossSpec};
pub use simlab::{CurveRecord, SimConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/tape.md")]
    mod tape {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/focusing.md")]
    mod focusing {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
