pub mod bench;
pub mod eval;
pub mod simulate;
pub mod sweep;
pub mod train;

use crate::config::Overlay;
use anyhow::Result;
use graphtrack_core::knet::{OptimizerKind, TrainConfig};

/// Training flags shared by `train` and `sweep`.
#[derive(Debug, Clone, clap::Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size (trajectories per update).
    #[arg(long)]
    pub batch: Option<usize>,
    /// ℓ2 regularization coefficient.
    #[arg(long)]
    pub l2: Option<f64>,
    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Global gradient-norm cap.
    #[arg(long)]
    pub clip: Option<f64>,
    /// Disable gradient clipping.
    #[arg(long)]
    pub no_clip: bool,
    /// Truncated-BPTT window (default: the full trajectory).
    #[arg(long)]
    pub bptt_window: Option<usize>,
    /// Standardize network features by their RMS.
    #[arg(long)]
    pub normalize_features: bool,
}

impl TrainFlags {
    pub fn resolve(&self, overlay: &Overlay, seed: u64) -> Result<TrainConfig> {
        let defaults = TrainConfig::default();
        let optimizer = match overlay
            .string("optimizer", self.optimizer.clone(), "adam")?
            .as_str()
        {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => crate::usage_bail!("unknown optimizer '{other}' (expected adam or sgd)"),
        };
        let clip = if overlay.bool("no_clip", self.no_clip, false)? {
            None
        } else {
            Some(overlay.f64("clip", self.clip, defaults.clip.unwrap())?)
        };
        Ok(TrainConfig {
            lr: overlay.f64("lr", self.lr, defaults.lr)?,
            epochs: overlay.usize("epochs", self.epochs, defaults.epochs)?,
            batch_size: overlay.usize("batch", self.batch, defaults.batch_size)?,
            l2: overlay.f64("l2", self.l2, defaults.l2)?,
            seed,
            optimizer,
            clip,
            bptt_window: overlay.usize_opt("bptt_window", self.bptt_window)?,
            validation_fraction: defaults.validation_fraction,
            normalize_features: overlay.bool(
                "normalize_features",
                self.normalize_features,
                false,
            )?,
        })
    }
}
