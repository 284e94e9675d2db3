use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use wiou::simlab::{self, final_report, generate_cases, Optimizer, SimOutcome};
use wiou::{csv, LossSpec, SimConfig};

use crate::manifest::{Invocation, RunManifest};
use crate::{usage, write_artifact, Completed, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Adam,
    Gd,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Radius of the anchor-point disc, in (0, 0.5].
    #[arg(long = "r", default_value_t = 0.5)]
    pub radius: f64,
    /// Comma-separated loss labels, e.g. `giou,ciou,wiou1-v3:1.9:3`.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "giou,diou,ciou,eiou,siou,wiou1"
    )]
    pub losses: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, env = "WIOU_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Fraction of cases kept, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub subsample: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Anchor points per unit r².
    #[arg(long, default_value_t = 20000.0)]
    pub density: f64,
    /// EMA momentum for focusing losses; 0 keeps the mean at 1.
    #[arg(long, default_value_t = 0.01)]
    pub momentum: f64,
    #[arg(long, value_enum, default_value_t = OptimizerChoice::Adam)]
    pub optimizer: OptimizerChoice,
    /// Mean IoU loss used for the iterations-to-threshold column.
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// Also write the regression cases to `cases.csv`.
    #[arg(long)]
    pub dump_cases: bool,
    /// Worker threads, 0 for one per core. Outputs do not depend on it.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub threads: usize,
    #[arg(long, default_value = "wiou-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

impl SimulateArgs {
    pub fn config(&self) -> SimConfig {
        SimConfig {
            radius: self.radius,
            points_density: self.density,
            lr: self.lr,
            iterations: self.iters,
            seed: self.seed,
            subsample: self.subsample,
            momentum: self.momentum,
            optimizer: match self.optimizer {
                OptimizerChoice::Adam => Optimizer::adam(),
                OptimizerChoice::Gd => Optimizer::GradientDescent,
            },
            ..SimConfig::default()
        }
    }

    pub fn specs(&self) -> Result<Vec<LossSpec>, Failure> {
        let specs = self
            .losses
            .iter()
            .map(|l| l.parse::<LossSpec>())
            .collect::<wiou::Result<Vec<_>>>()
            .map_err(usage)?;
        let mut seen = HashSet::new();
        for s in &specs {
            if !seen.insert(s.to_string()) {
                return Err(usage(anyhow::anyhow!("loss {s} listed twice")));
            }
        }
        if specs.is_empty() {
            return Err(usage(anyhow::anyhow!("no losses given")));
        }
        Ok(specs)
    }
}

/// File name of a loss's curve; `:` is not portable in file names.
pub fn curve_file(spec: &LossSpec) -> String {
    format!("curve_{}.csv", spec.to_string().replace(':', "_"))
}

pub fn run(args: &SimulateArgs, out: &Path) -> Result<Completed, Failure> {
    let specs = args.specs()?;
    let config = args.config();
    config.validate().map_err(usage)?;
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        return Err(usage(anyhow::anyhow!(
            "invalid threshold = {}: must lie in (0, 1]",
            args.threshold
        )));
    }

    let mut manifest = RunManifest::new(Invocation::Simulate(args.clone()), Some(args.seed));
    manifest.config = Some(config.clone());
    manifest.losses = specs.iter().map(ToString::to_string).collect();

    if args.dump_cases {
        let mut bytes = Vec::new();
        csv::write_cases(&mut bytes, &generate_cases(&config).map_err(usage)?)?;
        manifest.artifacts.push(write_artifact(out, "cases.csv", &bytes)?);
    }

    let mut outcomes = Vec::with_capacity(specs.len());
    for spec in specs {
        let curve = if args.threads == 0 {
            simlab::run(&config, &spec)
        } else {
            simlab::run_with_threads(&config, &spec, args.threads)
        }
        .map_err(|e| Failure::Runtime(e.into()))?;
        let mut bytes = Vec::new();
        csv::write_curve(&mut bytes, &curve)?;
        manifest.artifacts.push(write_artifact(out, &curve_file(&spec), &bytes)?);
        let last = curve.last().expect("curves have at least one record");
        eprintln!("{spec}: final mean IoU loss {:.6}", last.mean_iou_loss);
        outcomes.push(SimOutcome {
            config: config.clone(),
            spec,
            curve,
        });
    }

    let ranking = final_report(&outcomes, args.threshold).map_err(|e| Failure::Runtime(e.into()))?;
    let mut bytes = Vec::new();
    csv::write_ranking(&mut bytes, &ranking)?;
    manifest.artifacts.push(write_artifact(out, "ranking.csv", &bytes)?);

    println!("{:<4} {:<20} {:>18} {:>14}", "rank", "loss", "final mean L_IoU", "iters to thr");
    for (i, row) in ranking.rows.iter().enumerate() {
        let reached = row
            .iterations_to_threshold
            .map_or_else(|| "-".to_string(), |it| it.to_string());
        println!(
            "{:<4} {:<20} {:>18.6} {:>14}",
            i + 1,
            row.loss,
            row.final_mean_iou_loss,
            reached
        );
    }
    Ok(Completed {
        manifest,
        failure: None,
    })
}
