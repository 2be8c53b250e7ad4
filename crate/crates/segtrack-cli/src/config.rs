//! Run configuration: a JSON file with every tracker parameter plus paths,
//! overridable by CLI flags. Defaults are the operating values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segtrack::error::Result;
use segtrack::graph::PropagationMode;
use segtrack::solver::Fidelity;
use segtrack::tracker::{SpatialTopology, TrackerConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub tracker: TrackerConfig,
    pub sequence_root: Option<PathBuf>,
    pub sequences: Vec<String>,
    pub flow_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

/// Tracker parameter flags shared by `track` and `ablate`.
#[derive(Debug, Clone, clap::Args)]
pub struct TrackerFlags {
    /// Edge-weight scaling sigma.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Smoothing strength lambda1.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Sharpening strength lambda2.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Smoothness weight alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fitting weight beta.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Relative-loss convergence threshold.
    #[arg(long)]
    pub min_error: Option<f64>,
    /// Solver iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Target superpixel count per candidate region.
    #[arg(long)]
    pub superpixels: Option<usize>,
    /// Candidate region expansion about the previous box.
    #[arg(long)]
    pub expand: Option<f64>,
    /// Normalized score cut for the mask.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Propagation mode: mixed | only-smoothing | none.
    #[arg(long)]
    pub mode: Option<PropagationMode>,
    /// y-update fidelity: exact-minimizer | paper-literal.
    #[arg(long)]
    pub fidelity: Option<Fidelity>,
    /// Spatial edge topology: adjacency | full.
    #[arg(long)]
    pub topology: Option<SpatialTopology>,
}

impl TrackerFlags {
    pub fn apply(&self, config: &mut TrackerConfig) {
        macro_rules! set {
            ($field:ident, $flag:expr) => {
                if let Some(v) = $flag {
                    config.$field = v;
                }
            };
        }
        set!(sigma, self.sigma);
        set!(lambda1, self.lambda1);
        set!(lambda2, self.lambda2);
        set!(alpha, self.alpha);
        set!(beta, self.beta);
        set!(min_error, self.min_error);
        set!(max_iter, self.max_iter);
        set!(target_superpixels, self.superpixels);
        set!(region_expand, self.expand);
        set!(mask_threshold, self.threshold);
        set!(mode, self.mode);
        set!(fidelity, self.fidelity);
        set!(spatial_topology, self.topology);
    }
}
