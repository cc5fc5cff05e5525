use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shtrans_core::dataset::DatasetConfig;
use shtrans_core::field::SnrMode;
use shtrans_core::translation::{RidgeConfig, RidgeMode, DEFAULT_RELATIVE_LAMBDA};
use shtrans_core::{Error, GridSpec, Result};
use shtrans_nn::Curriculum;

use crate::manifest::read_json;

#[derive(Debug, Parser)]
#[command(name = "shtrans", version, args_override_self = true, about = "Higher-order SH coefficients from translated low-order measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test shards.
    GenData(GenDataArgs),
    /// Ridge least-squares estimates and metrics for one shard.
    Lsm(LsmArgs),
    /// Train a TT-Net on a shard.
    Train(TrainArgs),
    /// Compare methods on a shard or on generated sweeps.
    Eval(EvalArgs),
    /// Sound pressure of a scene on an x-y plane.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SnrModeArg {
    Broadband,
    PerFrequency,
}

impl From<SnrModeArg> for SnrMode {
    fn from(m: SnrModeArg) -> Self {
        match m {
            SnrModeArg::Broadband => SnrMode::Broadband,
            SnrModeArg::PerFrequency => SnrMode::PerFrequency,
        }
    }
}

/// Dataset configuration: an optional JSON file overridden field by field.
///
/// Unless `--freq-hi` is given, changing the grid start, step or bin count
/// moves `freq_hi` to keep the grid consistent; `--freq-hi` alone moves `k_bins`.
#[derive(Debug, Clone, Default, Args)]
pub struct DataFlags {
    /// DatasetConfig JSON; missing fields take their defaults.
    #[arg(long = "config", value_name = "JSON")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_in: Option<u32>,
    #[arg(long)]
    pub n_out: Option<u32>,
    #[arg(long)]
    pub k_bins: Option<usize>,
    #[arg(long)]
    pub freq_lo: Option<f64>,
    #[arg(long)]
    pub freq_hi: Option<f64>,
    #[arg(long)]
    pub freq_step: Option<f64>,
    #[arg(long)]
    pub dist_min: Option<f64>,
    #[arg(long)]
    pub dist_max: Option<f64>,
    #[arg(long)]
    pub sources_min: Option<usize>,
    #[arg(long)]
    pub sources_max: Option<usize>,
    #[arg(long)]
    pub amp_min: Option<f64>,
    #[arg(long)]
    pub amp_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_min_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_max_db: Option<f64>,
    #[arg(long)]
    pub noise_free: bool,
    #[arg(long, value_enum)]
    pub snr_mode: Option<SnrModeArg>,
    #[arg(long)]
    pub q_min: Option<usize>,
    #[arg(long)]
    pub q_max: Option<usize>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub val_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl DataFlags {
    pub fn resolve(&self) -> Result<DatasetConfig> {
        let mut cfg: DatasetConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => DatasetConfig::default(),
        };
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        apply!(
            n_in,
            n_out,
            k_bins,
            freq_lo,
            freq_hi,
            freq_step,
            dist_min,
            dist_max,
            sources_min,
            sources_max,
            amp_min,
            amp_max,
            snr_min_db,
            snr_max_db,
            q_min,
            q_max,
            train_count,
            val_count,
            test_count,
            seed
        );
        if self.noise_free {
            cfg.noise_free = true;
        }
        if let Some(m) = self.snr_mode {
            cfg.snr_mode = m.into();
        }
        if self.freq_hi.is_some() {
            if self.k_bins.is_none() && cfg.freq_step > 0.0 {
                cfg.k_bins = ((cfg.freq_hi - cfg.freq_lo) / cfg.freq_step).round().max(0.0) as usize + 1;
            }
        } else if self.k_bins.is_some() || self.freq_lo.is_some() || self.freq_step.is_some() {
            cfg.freq_hi = cfg.freq_lo + cfg.k_bins.saturating_sub(1) as f64 * cfg.freq_step;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LambdaMode {
    /// λ is a multiple of the largest singular value.
    Relative,
    /// λ is used as given.
    Fixed,
}

#[derive(Debug, Clone, Args)]
pub struct RidgeFlags {
    /// Ridge weight; a comma-separated list sweeps it.
    #[arg(long = "lambda", value_delimiter = ',', default_values_t = [DEFAULT_RELATIVE_LAMBDA])]
    pub lambdas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = LambdaMode::Relative)]
    pub lambda_mode: LambdaMode,
}

impl RidgeFlags {
    pub fn configs(&self) -> Result<Vec<RidgeConfig>> {
        let mode = match self.lambda_mode {
            LambdaMode::Relative => RidgeMode::Relative,
            LambdaMode::Fixed => RidgeMode::Fixed,
        };
        self.lambdas
            .iter()
            .map(|&lambda| {
                let c = RidgeConfig { lambda, mode };
                c.validate()?;
                Ok(c)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegionKind {
    Disk,
    Ball,
}

/// Region over which SDR integrates the reconstructed field.
#[derive(Debug, Clone, Args)]
pub struct RegionFlags {
    #[arg(long, value_enum, default_value_t = RegionKind::Disk)]
    pub region: RegionKind,
    #[arg(long, default_value_t = 1.0)]
    pub region_radius: f64,
    #[arg(long, default_value_t = 0.02)]
    pub region_step: f64,
}

impl RegionFlags {
    pub fn spec(&self) -> GridSpec {
        let (radius, step) = (self.region_radius, self.region_step);
        match self.region {
            RegionKind::Disk => GridSpec::Disk { radius, step },
            RegionKind::Ball => GridSpec::Ball { radius, step },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub data: DataFlags,
    /// Overrides the example count of every split.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LsmArgs {
    #[arg(long)]
    pub shard: PathBuf,
    #[command(flatten)]
    pub ridge: RidgeFlags,
    /// Expected input order; must match the shard.
    #[arg(long)]
    pub n_in: Option<u32>,
    /// Expected output order; must match the shard.
    #[arg(long)]
    pub n_out: Option<u32>,
    #[command(flatten)]
    pub region: RegionFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurriculumArg {
    Lrg2sml,
    Sml2lrg,
    None,
}

impl From<CurriculumArg> for Curriculum {
    fn from(c: CurriculumArg) -> Self {
        match c {
            CurriculumArg::Lrg2sml => Curriculum::Lrg2Sml,
            CurriculumArg::Sml2lrg => Curriculum::Sml2Lrg,
            CurriculumArg::None => Curriculum::None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Validation shard monitored by the plateau rule.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of order-raising layers; defaults to one per order.
    #[arg(long)]
    pub layers: Option<usize>,
    /// TrainConfig JSON; flags below override it.
    #[arg(long, value_name = "JSON")]
    pub train_config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub curriculum: Option<CurriculumArg>,
    #[arg(long)]
    pub epochs_per_stage: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    /// Epochs without improvement before the learning rate halves; 0 disables.
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    /// Seed of batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of parameter initialisation.
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    #[arg(long)]
    pub j_hidden: Option<usize>,
    #[arg(long)]
    pub y_hidden: Option<usize>,
    #[arg(long)]
    pub tac_hidden: Option<usize>,
    #[arg(long)]
    pub ff_mult: Option<usize>,
    /// Continue from `OUT/checkpoint` if it exists.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs of this invocation.
    #[arg(long)]
    pub stop_after_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Method {
    Lsm,
    Ttnet,
    /// The reference itself; a sanity row with perfect scores.
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lsm => "lsm",
            Method::Ttnet => "ttnet",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Snr,
    Distance,
    Q,
    Sources,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::Distance => "distance",
            SweepAxis::Q => "q",
            SweepAxis::Sources => "sources",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Lsm])]
    pub method: Vec<Method>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "sweep")]
    pub shard: Option<PathBuf>,
    /// Axis and comma-separated values, e.g. `--sweep snr 10,20,30`.
    #[arg(long, num_args = 2, value_names = ["AXIS", "VALUES"], allow_hyphen_values = true)]
    pub sweep: Option<Vec<String>>,
    /// Items generated per sweep value.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub ridge: RidgeFlags,
    #[command(flatten)]
    pub region: RegionFlags,
    #[arg(long)]
    pub out: PathBuf,
}

impl EvalArgs {
    pub fn parsed_sweep(&self) -> Result<Option<(SweepAxis, Vec<f64>)>> {
        let Some(parts) = &self.sweep else { return Ok(None) };
        let axis = SweepAxis::from_str(&parts[0], true).map_err(|_| {
            Error::Config(format!("unknown sweep axis {:?} (expected snr, distance, q or sources)", parts[0]))
        })?;
        let values = parts[1]
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad sweep value {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some((axis, values)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum RenderMethod {
    Ideal,
    Lsm,
    Ttnet,
}

impl RenderMethod {
    pub fn name(self) -> &'static str {
        match self {
            RenderMethod::Ideal => "ideal",
            RenderMethod::Lsm => "lsm",
            RenderMethod::Ttnet => "ttnet",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Scene JSON: sources, sample_points, optional snr_db and seed.
    #[arg(long)]
    pub scene: PathBuf,
    /// Frequencies to render; each must lie on the dataset grid.
    #[arg(long, value_delimiter = ',', required = true)]
    pub freq: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 0.02)]
    pub step: f64,
    /// Defaults to ideal and lsm, plus ttnet when a checkpoint is given.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Vec<RenderMethod>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub ridge: RidgeFlags,
    #[arg(long)]
    pub out: PathBuf,
}
