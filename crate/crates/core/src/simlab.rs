//! Box-regression simulation benchmark.
//!
//! Anchor points are drawn uniformly from a disc of radius `r` around
//! `(0.5, 0.5)`. Every point carries one anchor per (scale, aspect ratio)
//! pair, and every anchor is regressed toward every target box (all centered
//! at `(0.5, 0.5)` with a fixed area, one per aspect ratio). With the default
//! grids that gives `20000 r² · 49 · 7` independent regression cases.
//!
//! [`run`] descends all cases for a fixed number of iterations and records
//! the mean IoU loss after every step. Cases are evaluated in parallel but
//! every reduction is summed in case-id order, so the curve does not depend
//! on the number of worker threads.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_param, Error, Result};
use crate::focusing::EmaTracker;
use crate::geometry::BBox;
use crate::losses::{compose_on, Evaluation, LossSpec};
use crate::tape::{Tape, TapeError};

/// Lower bound applied to anchor width and height after every step.
pub const MIN_SIZE: f64 = 1e-6;

/// Update rule applied to each case's `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    /// Per-parameter Adam with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// `p <- p - lr ∂L/∂p`
    GradientDescent,
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Adam { .. } => "adam",
            Optimizer::GradientDescent => "gd",
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Radius of the anchor-point disc.
    pub radius: f64,
    /// Anchor points per unit `r²`.
    pub points_density: f64,
    /// Anchor areas.
    pub scales: Vec<f64>,
    /// Width/height ratios, shared by anchors and targets.
    pub aspect_ratios: Vec<f64>,
    pub target_area: f64,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Fraction of cases kept, in `(0, 1]`.
    pub subsample: f64,
    /// EMA momentum for focusing losses; 0 keeps the mean fixed at 1.
    pub momentum: f64,
    pub optimizer: Optimizer,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            radius: 0.5,
            points_density: 20000.0,
            scales: vec![
                1.0 / 32.0,
                1.0 / 24.0,
                3.0 / 64.0,
                1.0 / 16.0,
                1.0 / 12.0,
                3.0 / 32.0,
                1.0 / 8.0,
            ],
            aspect_ratios: vec![1.0 / 4.0, 1.0 / 3.0, 1.0 / 2.0, 1.0, 2.0, 3.0, 4.0],
            target_area: 1.0 / 32.0,
            lr: 0.01,
            iterations: 200,
            seed: 0,
            subsample: 1.0,
            momentum: 0.01,
            optimizer: Optimizer::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_param(
            "radius",
            self.radius,
            self.radius > 0.0 && self.radius <= 0.5,
            "must lie in (0, 0.5]",
        )?;
        check_param(
            "points_density",
            self.points_density,
            self.points_density > 0.0,
            "must be > 0",
        )?;
        for &s in &self.scales {
            check_param("scale", s, s > 0.0, "must be > 0")?;
        }
        for &a in &self.aspect_ratios {
            check_param("aspect_ratio", a, a > 0.0, "must be > 0")?;
        }
        check_param(
            "scales",
            self.scales.len() as f64,
            !self.scales.is_empty(),
            "need at least one",
        )?;
        check_param(
            "aspect_ratios",
            self.aspect_ratios.len() as f64,
            !self.aspect_ratios.is_empty(),
            "need at least one",
        )?;
        check_param("target_area", self.target_area, self.target_area > 0.0, "must be > 0")?;
        check_param("lr", self.lr, self.lr > 0.0, "must be > 0")?;
        check_param(
            "subsample",
            self.subsample,
            self.subsample > 0.0 && self.subsample <= 1.0,
            "must lie in (0, 1]",
        )?;
        check_param(
            "momentum",
            self.momentum,
            (0.0..1.0).contains(&self.momentum),
            "must lie in [0, 1)",
        )?;
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            check_param("beta1", beta1, (0.0..1.0).contains(&beta1), "must lie in [0, 1)")?;
            check_param("beta2", beta2, (0.0..1.0).contains(&beta2), "must lie in [0, 1)")?;
            check_param("eps", eps, eps > 0.0, "must be > 0")?;
        }
        Ok(())
    }

    /// `round(density · r²)`
    pub fn point_count(&self) -> usize {
        (self.points_density * self.radius * self.radius).round() as usize
    }

    /// Cases before subsampling.
    pub fn case_count(&self) -> usize {
        self.point_count() * self.scales.len() * self.aspect_ratios.len() * self.aspect_ratios.len()
    }
}

/// Box of the given area and width/height ratio.
pub fn box_with_area(x: f64, y: f64, area: f64, aspect_ratio: f64) -> BBox {
    BBox {
        x,
        y,
        w: (area * aspect_ratio).sqrt(),
        h: (area / aspect_ratio).sqrt(),
    }
}

/// One anchor regressed toward one fixed target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionCase {
    pub id: usize,
    pub anchor: BBox,
    pub target: BBox,
}

/// The full case grid, addressable by id without materializing every case.
///
/// Ids are point-major: `id = ((point · S + scale) · A + ratio) · T + target`.
#[derive(Debug, Clone)]
pub struct CasePlan {
    points: Vec<(f64, f64)>,
    anchor_shapes: Vec<(f64, f64)>,
    targets: Vec<BBox>,
}

impl CasePlan {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self::with_rng(config, &mut rng))
    }

    fn with_rng(config: &SimConfig, rng: &mut ChaCha8Rng) -> Self {
        let r = config.radius;
        let mut points = Vec::with_capacity(config.point_count());
        while points.len() < config.point_count() {
            let dx = rng.gen_range(-r..=r);
            let dy = rng.gen_range(-r..=r);
            if dx * dx + dy * dy <= r * r {
                points.push((0.5 + dx, 0.5 + dy));
            }
        }
        let anchor_shapes = config
            .scales
            .iter()
            .flat_map(|&s| config.aspect_ratios.iter().map(move |&a| (s, a)))
            .collect();
        let targets = config
            .aspect_ratios
            .iter()
            .map(|&a| box_with_area(0.5, 0.5, config.target_area, a))
            .collect();
        CasePlan {
            points,
            anchor_shapes,
            targets,
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn targets(&self) -> &[BBox] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.points.len() * self.anchor_shapes.len() * self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Case `id`, or `None` past the end.
    pub fn case(&self, id: usize) -> Option<RegressionCase> {
        if id >= self.len() {
            return None;
        }
        let per_point = self.anchor_shapes.len() * self.targets.len();
        let (px, py) = self.points[id / per_point];
        let rest = id % per_point;
        let (area, ratio) = self.anchor_shapes[rest / self.targets.len()];
        let target = self.targets[rest % self.targets.len()];
        Some(RegressionCase {
            id,
            anchor: box_with_area(px, py, area, ratio),
            target,
        })
    }
}

/// Every case of `config`, thinned to `subsample` of them (seeded, uniform
/// without replacement, kept in id order).
pub fn generate_cases(config: &SimConfig) -> Result<Vec<RegressionCase>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let plan = CasePlan::with_rng(config, &mut rng);
    let ids: Vec<usize> = if config.subsample >= 1.0 {
        (0..plan.len()).collect()
    } else {
        let keep = ((plan.len() as f64 * config.subsample).round() as usize).max(1);
        let mut ids = index::sample(&mut rng, plan.len(), keep).into_vec();
        ids.sort_unstable();
        ids
    };
    Ok(ids.into_iter().filter_map(|id| plan.case(id)).collect())
}

/// A case plus its optimizer state.
#[derive(Debug, Clone, Copy)]
pub struct CaseState {
    pub case: RegressionCase,
    first_moment: [f64; 4],
    second_moment: [f64; 4],
}

impl CaseState {
    pub fn new(case: RegressionCase) -> Self {
        CaseState {
            case,
            first_moment: [0.0; 4],
            second_moment: [0.0; 4],
        }
    }
}

/// Evaluates `spec` on one case against the running `mean`, then applies one
/// optimizer step (`step` counts from 1) with learning rate `lr`. Returns
/// the pre-step evaluation.
pub fn descend_case(
    tape: &mut Tape,
    state: &mut CaseState,
    spec: &LossSpec,
    mean: f64,
    optimizer: Optimizer,
    lr: f64,
    step: usize,
) -> Result<Evaluation> {
    let case = state.case;
    let non_finite = || Error::NonFiniteGradient {
        case: case.id,
        loss: spec.to_string(),
    };
    let eval = match compose_on(tape, spec, &case.anchor, &case.target, mean, None) {
        Ok(e) => e,
        Err(Error::Tape(TapeError::NonFinite { .. })) => return Err(non_finite()),
        Err(e) => return Err(e),
    };
    if !eval.grad.iter().all(|g| g.is_finite()) {
        return Err(non_finite());
    }

    let mut params = case.anchor.as_array();
    match optimizer {
        Optimizer::GradientDescent => {
            for (p, g) in params.iter_mut().zip(eval.grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let bias1 = 1.0 - beta1.powi(step as i32);
            let bias2 = 1.0 - beta2.powi(step as i32);
            let moments = state.first_moment.iter_mut().zip(state.second_moment.iter_mut());
            for ((p, &g), (m, v)) in params.iter_mut().zip(&eval.grad).zip(moments) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bias1) / ((*v / bias2).sqrt() + eps);
            }
        }
    }
    let [x, y, w, h] = params;
    state.case.anchor = BBox {
        x,
        y,
        w: w.max(MIN_SIZE),
        h: h.max(MIN_SIZE),
    };
    Ok(eval)
}

/// One sample of a loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    /// Number of steps taken before this sample.
    pub iteration: usize,
    /// Mean `L_IoU` over all cases.
    pub mean_iou_loss: f64,
    /// Mean of the optimized loss over all cases.
    pub mean_training_loss: f64,
    pub loss_name: String,
}

/// Curve of one loss together with the config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub config: SimConfig,
    pub spec: LossSpec,
    pub curve: Vec<CurveRecord>,
}

fn mean_of(evals: &[Evaluation], f: impl Fn(&Evaluation) -> f64) -> f64 {
    // fixed (case-id) order keeps the result independent of scheduling
    evals.iter().map(f).sum::<f64>() / evals.len() as f64
}

/// Descends the cases of `config` under `spec` on the current rayon pool.
///
/// The returned curve has `iterations + 1` records: the state before each
/// step plus the final state.
pub fn run(config: &SimConfig, spec: &LossSpec) -> Result<Vec<CurveRecord>> {
    let cases = generate_cases(config)?;
    run_cases(config, spec, cases)
}

/// [`run`] on a dedicated pool of `threads` workers.
pub fn run_with_threads(config: &SimConfig, spec: &LossSpec, threads: usize) -> Result<Vec<CurveRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("failed to build rayon pool");
    pool.install(|| run(config, spec))
}

/// [`run`] over an explicit case list.
pub fn run_cases(config: &SimConfig, spec: &LossSpec, cases: Vec<RegressionCase>) -> Result<Vec<CurveRecord>> {
    config.validate()?;
    spec.validate()?;
    let mut tracker = EmaTracker::new(config.momentum)?;
    let mut states: Vec<CaseState> = cases.into_iter().map(CaseState::new).collect();
    let name = spec.to_string();
    let mut curve = Vec::with_capacity(config.iterations + 1);
    let record = |iteration, evals: &[Evaluation]| CurveRecord {
        iteration,
        mean_iou_loss: mean_of(evals, |e| e.iou_loss),
        mean_training_loss: mean_of(evals, |e| e.loss),
        loss_name: name.clone(),
    };

    for iteration in 0..config.iterations {
        let mean = tracker.mean();
        let evals = states
            .par_iter_mut()
            .map_init(
                || Tape::with_capacity(128),
                |tape, state| {
                    descend_case(tape, state, spec, mean, config.optimizer, config.lr, iteration + 1)
                },
            )
            .collect::<Result<Vec<_>>>()?;
        let rec = record(iteration, &evals);
        if spec.needs_tracker() {
            tracker.update(rec.mean_iou_loss)?;
        }
        curve.push(rec);
    }

    let mean = tracker.mean();
    let evals = states
        .par_iter()
        .map_init(
            || Tape::with_capacity(128),
            |tape, state| compose_on(tape, spec, &state.case.anchor, &state.case.target, mean, None),
        )
        .collect::<Result<Vec<_>>>()?;
    curve.push(record(config.iterations, &evals));
    Ok(curve)
}

/// One row of a [`Ranking`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub loss: String,
    pub final_mean_iou_loss: f64,
    /// First iteration whose mean IoU loss is at or below the threshold.
    pub iterations_to_threshold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub threshold: f64,
    /// Sorted by final mean IoU loss, best first.
    pub rows: Vec<RankRow>,
}

impl Ranking {
    pub fn row(&self, loss: &str) -> Option<&RankRow> {
        self.rows.iter().find(|r| r.loss == loss)
    }
}

/// Ranks curves produced under one shared config.
pub fn final_report(outcomes: &[SimOutcome], threshold: f64) -> Result<Ranking> {
    if let Some(first) = outcomes.first() {
        if outcomes.iter().any(|o| o.config != first.config) {
            return Err(Error::MismatchedConfigs);
        }
    }
    let mut rows: Vec<RankRow> = outcomes
        .iter()
        .map(|o| RankRow {
            loss: o.spec.to_string(),
            final_mean_iou_loss: o.curve.last().map_or(f64::NAN, |r| r.mean_iou_loss),
            iterations_to_threshold: o
                .curve
                .iter()
                .find(|r| r.mean_iou_loss <= threshold)
                .map(|r| r.iteration),
        })
        .collect();
    rows.sort_by(|a, b| {
        a.final_mean_iou_loss
            .total_cmp(&b.final_mean_iou_loss)
            .then_with(|| a.loss.cmp(&b.loss))
    });
    Ok(Ranking { threshold, rows })
}
