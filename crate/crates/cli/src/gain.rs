use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use wiou::csv;
use wiou::focusing::{gain_curve, GAIN_PRESETS};

use crate::manifest::{Invocation, RunManifest};
use crate::{usage, write_artifact, Completed, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// (α, δ) = (1.4, 5), (1.6, 4) and (1.9, 3).
    Table1,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GainArgs {
    /// Must be > 1.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub alpha: Option<f64>,
    /// Must be > 0. The gain equals 1 at β = δ.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub beta_max: f64,
    /// Number of intervals; the table has `steps + 1` rows.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, default_value = "wiou-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn table_file(alpha: f64, delta: f64) -> String {
    format!("gain_alpha{alpha}_delta{delta}.csv")
}

pub fn run(args: &GainArgs, out: &Path) -> Result<Completed, Failure> {
    let pairs: Vec<(f64, f64)> = match (args.preset, args.alpha, args.delta) {
        (Some(Preset::Table1), _, _) => GAIN_PRESETS.to_vec(),
        (None, Some(a), Some(d)) => vec![(a, d)],
        _ => return Err(usage(anyhow::anyhow!("give --alpha and --delta, or --preset"))),
    };
    let tables = pairs
        .iter()
        .map(|&(a, d)| gain_curve(a, d, args.beta_max, args.steps).map(|t| (a, d, t)))
        .collect::<wiou::Result<Vec<_>>>()
        .map_err(usage)?;

    let mut manifest = RunManifest::new(Invocation::GainCurve(args.clone()), None);
    for (alpha, delta, table) in &tables {
        let mut bytes = Vec::new();
        csv::write_gain(&mut bytes, table)?;
        manifest
            .artifacts
            .push(write_artifact(out, &table_file(*alpha, *delta), &bytes)?);
        let peak = table
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("tables have at least two rows");
        println!(
            "alpha {alpha} delta {delta}: peak r = {:.6} at beta = {:.6} ({} rows)",
            peak.1,
            peak.0,
            table.len()
        );
    }
    Ok(Completed {
        manifest,
        failure: None,
    })
}
