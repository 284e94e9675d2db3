use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use wiou::SimConfig;

use crate::{execute, gain, gradcheck, simulate, usage, Failure};

pub const MANIFEST_FILE: &str = "manifest.json";

/// The command and flags of a run, enough to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "kebab-case")]
pub enum Invocation {
    Simulate(simulate::SimulateArgs),
    GradCheck(gradcheck::GradCheckArgs),
    GainCurve(gain::GainArgs),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub invocation: Invocation,
    pub seed: Option<u64>,
    /// Simulation config actually used, when the command ran one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SimConfig>,
    /// Canonical loss labels, in run order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub losses: Vec<String>,
    /// Emitted files, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(invocation: Invocation, seed: Option<u64>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            seed,
            config: None,
            losses: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        crate::write_artifact(dir, MANIFEST_FILE, text.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Where the rerun writes its artifacts.
    #[arg(long, default_value = "wiou-replay")]
    pub out: PathBuf,
}

pub fn replay(args: &ReplayArgs) -> Result<(), Failure> {
    let recorded = RunManifest::read(&args.manifest).map_err(usage)?;
    let source = args.manifest.parent().unwrap_or(Path::new("."));
    if source.canonicalize().ok() == args.out.canonicalize().ok() {
        return Err(usage(anyhow::anyhow!(
            "replay output directory must differ from the recorded one"
        )));
    }
    let rerun = execute(recorded.invocation.clone(), &args.out);
    if let Err(Failure::Usage(_) | Failure::Runtime(_)) = rerun {
        return rerun;
    }
    let mut differing = Vec::new();
    for name in &recorded.artifacts {
        let before = fs::read(source.join(name)).map_err(|e| Failure::Runtime(e.into()))?;
        let after = fs::read(args.out.join(name)).ok();
        if after.as_deref() != Some(before.as_slice()) {
            differing.push(name.clone());
        }
    }
    if differing.is_empty() {
        println!(
            "replay: {} artifacts identical to {}",
            recorded.artifacts.len(),
            source.display()
        );
        rerun
    } else {
        Err(Failure::Property(format!(
            "replayed artifacts differ: {}",
            differing.join(", ")
        )))
    }
}
