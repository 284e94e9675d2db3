use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wiou::csv::real;
use wiou::gradcheck::{check_pair, sample_pair, PairKind};
use wiou::{BaseLoss, Focus, LossSpec};

use crate::manifest::{Invocation, RunManifest};
use crate::{usage, write_artifact, Completed, Failure};

pub const REPORT_HEADER: &str = "loss,cases,disjoint_cases,max_relative_error,vanishing_cases,status";

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub cases: usize,
    #[arg(long, env = "WIOU_SEED", default_value_t = 0)]
    pub seed: u64,
    /// `all`, or comma-separated loss labels.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub loss: Vec<String>,
    /// Only non-overlapping pairs.
    #[arg(long)]
    pub disjoint_only: bool,
    /// Largest accepted relative error (absolute below 1e-3 in magnitude).
    #[arg(long, default_value_t = wiou::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Running mean seen by focusing losses.
    #[arg(long, default_value_t = 0.5)]
    pub mean: f64,
    #[arg(long, default_value = "wiou-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Every base loss bare, with the monotonic mechanism and with the
/// non-monotonic one.
fn all_specs() -> Vec<LossSpec> {
    let mut specs = Vec::new();
    for focus in [
        Focus::None,
        Focus::MonotonicNormalized {
            gamma: wiou::focusing::DEFAULT_GAMMA,
        },
        Focus::NonMonotonic {
            alpha: 1.9,
            delta: 3.0,
        },
    ] {
        for base in BaseLoss::ALL {
            specs.push(LossSpec::with_focus(base, focus).expect("built-in parameters are valid"));
        }
    }
    specs
}

#[derive(Debug, Default)]
struct Tally {
    max_error: f64,
    vanishing: usize,
    vanishing_overlapping: usize,
    vanishing_disjoint: usize,
}

pub fn run(args: &GradCheckArgs, out: &Path) -> Result<Completed, Failure> {
    let specs = if args.loss.iter().any(|l| l == "all") {
        all_specs()
    } else {
        args.loss
            .iter()
            .map(|l| l.parse::<LossSpec>())
            .collect::<wiou::Result<Vec<_>>>()
            .map_err(usage)?
    };
    if args.cases == 0 {
        return Err(usage(anyhow::anyhow!("--cases must be at least 1")));
    }
    if !(args.tolerance >= 0.0 && args.tolerance.is_finite()) {
        return Err(usage(anyhow::anyhow!("invalid tolerance = {}", args.tolerance)));
    }
    if !(args.mean > 0.0 && args.mean.is_finite()) {
        return Err(usage(anyhow::anyhow!("invalid mean = {}: must be > 0", args.mean)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pairs: Vec<_> = (0..args.cases)
        .map(|i| {
            let kind = if args.disjoint_only || i % 2 == 1 {
                PairKind::Disjoint
            } else {
                PairKind::Overlapping
            };
            (kind, sample_pair(&mut rng, kind))
        })
        .collect();
    let disjoint = pairs.iter().filter(|p| p.0 == PairKind::Disjoint).count();

    let mut report = format!("{REPORT_HEADER}\n");
    let mut failed = Vec::new();
    for spec in &specs {
        let mut tally = Tally::default();
        for (kind, (anchor, target)) in &pairs {
            let check =
                check_pair(spec, anchor, target, args.mean).map_err(|e| Failure::Runtime(e.into()))?;
            tally.max_error = tally.max_error.max(check.max_error);
            if check.vanishing() {
                tally.vanishing += 1;
                match kind {
                    PairKind::Overlapping => tally.vanishing_overlapping += 1,
                    PairKind::Disjoint => tally.vanishing_disjoint += 1,
                }
            }
        }
        // Only the bare IoU loss loses its gradient on disjoint pairs.
        let expected_vanishing = !spec.base.has_penalty() && disjoint > 0;
        let unexpected = tally.vanishing_overlapping
            + if expected_vanishing { 0 } else { tally.vanishing_disjoint };
        let status = if tally.max_error > args.tolerance {
            "tolerance-exceeded"
        } else if unexpected > 0 {
            "unexpected-vanishing"
        } else if expected_vanishing && tally.vanishing_disjoint == disjoint {
            "ok-expected-vanishing"
        } else {
            "ok"
        };
        if !status.starts_with("ok") {
            failed.push(format!("{spec} ({status})"));
        }
        writeln!(
            report,
            "{spec},{},{disjoint},{},{},{status}",
            pairs.len(),
            real(tally.max_error),
            tally.vanishing
        )
        .expect("writing to a String");
        println!(
            "{:<20} max rel err {:>10.3e}  vanishing {:>5}/{:<5} {status}",
            spec.to_string(),
            tally.max_error,
            tally.vanishing,
            pairs.len()
        );
    }

    let mut manifest = RunManifest::new(Invocation::GradCheck(args.clone()), Some(args.seed));
    manifest.losses = specs.iter().map(ToString::to_string).collect();
    manifest
        .artifacts
        .push(write_artifact(out, "grad_check.csv", report.as_bytes())?);
    let failure = (!failed.is_empty()).then(|| {
        format!(
            "gradient check failed at tolerance {}: {}",
            args.tolerance,
            failed.join(", ")
        )
    });
    Ok(Completed { manifest, failure })
}
