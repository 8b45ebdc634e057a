use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cmf_core::bench::BenchConfig;
use cmf_core::implicit::ImplicitConfig;
use cmf_core::sgd::SgdConfig;
use cmf_core::AlsConfig;
use serde::{Deserialize, Serialize};

use crate::dataset::{Fingerprint, TextFormat};

/// Everything needed to rerun a command: the resolved configuration with
/// defaults filled in, the inputs it read and the files it will write.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub config: Plan,
    pub datasets: Vec<Fingerprint>,
    pub artifacts: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plan {
    Synth(SynthPlan),
    Train(TrainPlan),
    Eval(EvalPlan),
    Bench(BenchPlan),
}

impl Plan {
    pub fn name(&self) -> &'static str {
        match self {
            Plan::Synth(_) => "synth",
            Plan::Train(_) => "train",
            Plan::Eval(_) => "eval",
            Plan::Bench(_) => "bench",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Plan::Synth(p) => p.seed,
            Plan::Train(p) => p.engine.seed(),
            Plan::Eval(_) => 0,
            Plan::Bench(p) => p.bench.seed,
        }
    }

    pub fn artifacts(&self) -> BTreeMap<String, PathBuf> {
        let mut out = BTreeMap::new();
        match self {
            Plan::Synth(p) => {
                for (name, file) in p.files() {
                    out.insert(name.to_string(), p.out_dir.join(file));
                }
            }
            Plan::Train(p) => {
                if let Some(m) = &p.model_out {
                    out.insert("model".into(), m.clone());
                }
                if let Some(r) = &p.report_out {
                    out.insert("report".into(), r.clone());
                }
            }
            Plan::Eval(_) => {}
            Plan::Bench(p) => {
                if let Some(o) = &p.out {
                    out.insert("report".into(), o.clone());
                }
            }
        }
        out
    }

    /// Points every output at `dir`, keeping file names.
    pub fn redirect(&mut self, dir: &Path) {
        let move_to = |p: &mut PathBuf| {
            if let Some(name) = p.file_name() {
                *p = dir.join(name);
            }
        };
        match self {
            Plan::Synth(p) => p.out_dir = dir.to_path_buf(),
            Plan::Train(p) => {
                p.model_out.as_mut().map(move_to);
                p.report_out.as_mut().map(move_to);
            }
            Plan::Eval(_) => {}
            Plan::Bench(p) => {
                p.out.as_mut().map(move_to);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthPlan {
    pub m: usize,
    pub n: usize,
    pub f: usize,
    pub density: f64,
    pub noise: f32,
    pub seed: u64,
    /// Held-out fraction for the train/test files; 0 skips the split.
    pub holdout: f64,
    pub out_dir: PathBuf,
}

impl SynthPlan {
    pub fn files(&self) -> Vec<(&'static str, &'static str)> {
        let mut f = vec![("ratings_text", "ratings.tsv"), ("ratings_cache", "ratings.cmfc"), ("truth", "truth.cmfm")];
        if self.holdout > 0.0 {
            f.push(("train", "train.cmfc"));
            f.push(("test", "test.tsv"));
        }
        f
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "lowercase")]
pub enum EngineConfig {
    Als(AlsConfig),
    Implicit(ImplicitConfig),
    Sgd(SgdConfig),
}

impl EngineConfig {
    pub fn seed(&self) -> u64 {
        match self {
            EngineConfig::Als(c) => c.seed,
            EngineConfig::Implicit(c) => c.seed,
            EngineConfig::Sgd(c) => c.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainPlan {
    pub engine: EngineConfig,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub format: TextFormat,
    pub dims: (usize, usize),
    pub model_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalObjective {
    Als,
    Implicit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPlan {
    pub model: PathBuf,
    pub test: PathBuf,
    pub train: Option<PathBuf>,
    pub format: TextFormat,
    pub objective: EvalObjective,
    pub lambda: f32,
    pub alpha: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchPlan {
    pub mode: String,
    pub train: PathBuf,
    pub test: PathBuf,
    pub format: TextFormat,
    pub dims: (usize, usize),
    pub bench: BenchConfig,
    pub out: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(plan: Plan, threads: usize, datasets: Vec<Fingerprint>) -> Self {
        RunManifest {
            tool: concat!("cmf ", env!("CARGO_PKG_VERSION")).to_string(),
            command: plan.name().to_string(),
            argv: std::env::args().collect(),
            seed: plan.seed(),
            threads,
            artifacts: plan.artifacts(),
            config: plan,
            datasets,
        }
    }

    /// Writes to `path`, or to standard error when there is nowhere to put it.
    pub fn emit(&self, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                }
                let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
                serde_json::to_writer_pretty(&mut w, self)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            None => eprintln!("manifest {}", serde_json::to_string(self)?),
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| anyhow::Error::new(crate::DataError(format!("{}: not a run manifest: {e}", path.display()))))
    }
}

/// `explicit`, else `<primary>.manifest.json`.
pub fn manifest_path(explicit: Option<&Path>, primary: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        primary.map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    })
}
