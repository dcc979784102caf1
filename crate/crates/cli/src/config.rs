//! Effective configuration: built-in defaults, then an optional JSON config
//! file, then command-line flags.

use std::path::Path;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use gswe::pool::BankInitKind;
use gswe::ssl::{Augmentation, LossKind, TrainConfig};
use gswe::transport1d::Interpolation;
use gswe::{ModelConfig, SlicerKind};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::data(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Comma-separated layer widths, or `none`.
#[derive(Debug, Clone, PartialEq)]
pub struct Widths(pub Vec<usize>);

impl FromStr for Widths {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("none") || s.is_empty() {
            return Ok(Widths(Vec::new()));
        }
        s.split(',')
            .map(|w| w.trim().parse::<usize>().map_err(|e| format!("{w:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(Widths)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SlicerArg {
    Linear,
    Poly,
    Mlp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BankInitArg {
    Data,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InterpArg {
    Barycentric,
    Midpoint,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Simclr,
    Simsiam,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AugmentArg {
    Rotate2d,
    Jitter,
}

#[derive(Debug, Default, Args)]
pub struct ModelFlags {
    /// Slicer family.
    #[arg(long, value_enum)]
    slicer: Option<SlicerArg>,
    /// Total degree of the polynomial slicer [default: 5].
    #[arg(long)]
    degree: Option<u32>,
    /// Hidden widths of the MLP slicer [default: 64,64].
    #[arg(long)]
    slicer_hidden: Option<Widths>,
    /// Number of slices L [default: 1].
    #[arg(short = 'L', long = "slices")]
    num_slices: Option<usize>,
    /// Number of reference sets K [default: 1].
    #[arg(short = 'K', long = "refs")]
    num_refs: Option<usize>,
    /// Points per reference set M [default: 2].
    #[arg(short = 'M', long = "ref-size")]
    ref_size: Option<usize>,
    /// Wasserstein order p [default: 2].
    #[arg(long)]
    p: Option<f64>,
    /// Hidden widths of the per-element backbone, or `none` [default: 64,64].
    #[arg(long)]
    backbone: Option<Widths>,
    /// Output width of the backbone [default: 1].
    #[arg(long)]
    backbone_out: Option<usize>,
    /// Reference initialization [default: data].
    #[arg(long, value_enum)]
    bank_init: Option<BankInitArg>,
    /// Interpolation rule for sets whose size differs from M [default: barycentric].
    #[arg(long, value_enum)]
    interpolation: Option<InterpArg>,
}

impl ModelFlags {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        match self.slicer {
            Some(SlicerArg::Linear) => cfg.slicer = SlicerKind::Linear,
            Some(SlicerArg::Poly) => {
                let degree = match cfg.slicer {
                    SlicerKind::Polynomial { degree } => degree,
                    _ => gswe::slicers::DEFAULT_DEGREE,
                };
                cfg.slicer = SlicerKind::Polynomial { degree };
            }
            Some(SlicerArg::Mlp) if !matches!(cfg.slicer, SlicerKind::Mlp { .. }) => {
                cfg.slicer = SlicerKind::Mlp {
                    hidden: gswe::slicers::DEFAULT_HIDDEN.to_vec(),
                };
            }
            Some(SlicerArg::Mlp) | None => {}
        }
        if let (Some(d), SlicerKind::Polynomial { degree }) = (self.degree, &mut cfg.slicer) {
            *degree = d;
        }
        if let (Some(w), SlicerKind::Mlp { hidden }) = (&self.slicer_hidden, &mut cfg.slicer) {
            hidden.clone_from(&w.0);
        }
        if let Some(v) = self.num_slices {
            cfg.num_slices = v;
        }
        if let Some(v) = self.num_refs {
            cfg.num_refs = v;
        }
        if let Some(v) = self.ref_size {
            cfg.ref_size = v;
        }
        if let Some(v) = self.p {
            cfg.p = v;
        }
        if let Some(w) = &self.backbone {
            cfg.backbone_hidden.clone_from(&w.0);
        }
        if let Some(v) = self.backbone_out {
            cfg.backbone_out = v;
        }
        if let Some(b) = self.bank_init {
            cfg.bank_init = match b {
                BankInitArg::Data => BankInitKind::Data,
                BankInitArg::Gaussian => BankInitKind::Gaussian,
            };
        }
        if let Some(i) = self.interpolation {
            cfg.interpolation = match i {
                InterpArg::Barycentric => Interpolation::Barycentric,
                InterpArg::Midpoint => Interpolation::Midpoint,
            };
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    /// Self-supervised objective [default: simclr].
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// SimCLR temperature [default: 0.1].
    #[arg(long)]
    tau: Option<f64>,
    /// Passes over the training sets [default: 50].
    #[arg(long)]
    epochs: Option<usize>,
    /// Sets per step [default: 32].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 1e-4].
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for initialization, shuffling and augmentation [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// View augmentation [default: rotate2d].
    #[arg(long, value_enum)]
    augment: Option<AugmentArg>,
    /// Noise level for `--augment jitter` [default: 1].
    #[arg(long)]
    sigma: Option<f64>,
    /// Cosine instead of raw inner-product similarity in SimCLR.
    #[arg(long)]
    cosine: bool,
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(l) = self.loss {
            t.loss = match l {
                LossArg::Simclr => LossKind::Simclr,
                LossArg::Simsiam => LossKind::Simsiam,
            };
        }
        if let Some(v) = self.tau {
            t.tau = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(s) = self.seed {
            t.seed = s;
            cfg.model.seed = s;
        }
        match self.augment {
            Some(AugmentArg::Rotate2d) => t.augmentation = Augmentation::Rotate2d,
            Some(AugmentArg::Jitter) => {
                let sigma = match t.augmentation {
                    Augmentation::Jitter { sigma } => sigma,
                    Augmentation::Rotate2d => 1.0,
                };
                t.augmentation = Augmentation::Jitter { sigma };
            }
            None => {}
        }
        if let (Some(s), Augmentation::Jitter { sigma }) = (self.sigma, &mut t.augmentation) {
            *sigma = s;
        }
        if self.cosine {
            t.cosine = true;
        }
    }
}
