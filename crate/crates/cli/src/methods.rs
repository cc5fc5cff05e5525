use std::path::Path;

use serde::{Deserialize, Serialize};
use shtrans_core::dataset::{DatasetConfig, TrainingExample};
use shtrans_core::translation::{build_translation_bank, lsm_solve, LsmSolution};
use shtrans_core::{Error, Result, RidgeConfig};
use shtrans_nn::{ModelConfig, TtNet};

use crate::args::SweepAxis;
use crate::manifest::read_json;

/// File inside a checkpoint directory recording the training frequency grid.
pub const GRID_FILE: &str = "grid.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingGrid {
    pub n_in: u32,
    pub n_out: u32,
    pub freqs: Vec<f64>,
}

/// Ridge solution for one example, with the translation operator built from
/// its own sampling geometry.
pub fn lsm_estimate(ex: &TrainingExample, ridge: RidgeConfig) -> Result<LsmSolution> {
    let bank = build_translation_bank(ex.freqs(), &ex.geometry, ex.n_in(), ex.n_out())?;
    lsm_solve(&bank, &ex.inputs, ridge)
}

pub struct Checkpointed {
    pub model: TtNet,
    pub grid: Option<TrainingGrid>,
}

pub fn load_checkpoint_model(dir: &Path) -> Result<Checkpointed> {
    let model = shtrans_nn::train::load_model(dir)?;
    let grid_path = dir.join(GRID_FILE);
    let grid = if grid_path.exists() { Some(read_json(&grid_path)?) } else { None };
    Ok(Checkpointed { model, grid })
}

/// Rejects data the model was not built for.
pub fn check_compatible(ck: &Checkpointed, n_in: u32, n_out: u32, freqs: &[f64]) -> Result<()> {
    let c: &ModelConfig = &ck.model.config;
    if c.n_in != n_in || c.n_out != n_out || c.k_bins != freqs.len() {
        return Err(Error::Config(format!(
            "incompatible checkpoint: model maps order {}→{} over {} bins, data is {}→{} over {} bins",
            c.n_in,
            c.n_out,
            c.k_bins,
            n_in,
            n_out,
            freqs.len()
        )));
    }
    if let Some(g) = &ck.grid {
        if g.freqs.iter().zip(freqs).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::Config("incompatible checkpoint: trained on a different frequency grid".into()));
        }
    }
    Ok(())
}

/// Test-split config of one sweep point: `base` with the swept quantity fixed.
pub fn sweep_config(base: &DatasetConfig, axis: SweepAxis, value: f64, count: usize) -> Result<DatasetConfig> {
    let integer = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Config(format!("{} sweep needs whole numbers, got {v}", axis.name())))
        }
    };
    let mut cfg = base.clone();
    cfg.train_count = 0;
    cfg.val_count = 0;
    cfg.test_count = count;
    match axis {
        SweepAxis::Snr => {
            cfg.snr_min_db = value;
            cfg.snr_max_db = value;
            cfg.noise_free = false;
        }
        SweepAxis::Distance => {
            cfg.dist_min = value;
            cfg.dist_max = value;
        }
        SweepAxis::Q => {
            cfg.q_min = integer(value)?;
            cfg.q_max = cfg.q_min;
        }
        SweepAxis::Sources => {
            cfg.sources_min = integer(value)?;
            cfg.sources_max = cfg.sources_min;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
