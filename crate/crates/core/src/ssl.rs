//! Self-supervised training of slicers, references and backbone.
//!
//! Two objectives are available. SimCLR contrasts each set's embedding
//! against the embedding of an augmented copy and against every other set in
//! the batch, with similarity `exp(xᵀy / τ)` on raw inner products (cosine
//! normalization is opt-in). SimSiam only pulls positive pairs together and
//! blocks gradients through the target side of each term.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::PointSet;
use crate::diffgraph::{GraphError, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Adam, AdamConfig, Parameters};
use crate::pool::{lp_distance, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Simclr,
    Simsiam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[derive(Default)]
pub enum Augmentation {
    /// One uniformly random planar rotation shared by every element.
    #[default]
    Rotate2d,
    /// i.i.d. `N(0, sigma²)` noise on every coordinate.
    Jitter { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub augmentation: Augmentation,
    /// Normalize embeddings before the SimCLR inner products.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Simclr,
            tau: 0.1,
            batch_size: 32,
            epochs: 50,
            lr: 1e-4,
            seed: 0,
            augmentation: Augmentation::Rotate2d,
            cosine: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::config(
                "ssl_train",
                format!("temperature must be > 0, got {}", self.tau),
            ));
        }
        if self.batch_size == 0 || (self.loss == LossKind::Simclr && self.batch_size < 2) {
            return Err(Error::config(
                "ssl_train",
                format!(
                    "batch size {} too small for {:?}",
                    self.batch_size, self.loss
                ),
            ));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::config(
                "ssl_train",
                format!("learning rate must be >= 0, got {}", self.lr),
            ));
        }
        if let Augmentation::Jitter { sigma } = self.augmentation {
            if sigma < 0.0 || !sigma.is_finite() {
                return Err(Error::config(
                    "ssl_train",
                    format!("jitter sigma must be >= 0, got {sigma}"),
                ));
            }
        }
        Ok(())
    }
}

fn check_pair(tape: &Tape, v: Var, u: Var) -> Result<(usize, usize)> {
    let (sv, su) = (tape.shape(v), tape.shape(u));
    if sv.len() != 2 || sv != su {
        return Err(Error::config(
            "ssl_train",
            format!("embedding batches must be matching [B, D] matrices, got {sv:?} and {su:?}"),
        ));
    }
    Ok((sv[0], sv[1]))
}

fn l2_normalize_rows(tape: &mut Tape, x: Var, b: usize, d: usize) -> Result<Var> {
    let sq = tape.mul(x, x)?;
    let norms = tape.sum_rows(sq)?;
    let eps = tape.leaf(Tensor::vector(vec![1e-12; b])?);
    let norms = tape.add(norms, eps)?;
    let norms = tape.pow(norms, 0.5)?;
    let norms = tape.reshape(norms, vec![b, 1])?;
    let norms = tape.broadcast(norms, vec![b, d])?;
    Ok(tape.div(x, norms)?)
}

/// `mean_i -log(S(a_i, b_i) / (Σ_j S(a_i, b_j) + Σ_{k≠i} S(a_i, a_k)))`
/// summed (not averaged) over rows; computed with a shifted log-sum-exp.
fn contrastive_rows(tape: &mut Tape, a: Var, b: Var, bsz: usize, tau: f64) -> Result<Var> {
    // Logits [B, 2B]: columns 0..B against b, columns B..2B against a.
    let keys = tape.concat(&[b, a])?;
    let keys_t = tape.transpose(keys)?;
    let raw = tape.matmul(a, keys_t)?;
    let logits = tape.scale(raw, 1.0 / tau)?;

    let width = 2 * bsz;
    let lv = tape.value(logits).data().to_vec();
    let mut mask = vec![1.0; bsz * width];
    for i in 0..bsz {
        mask[i * width + bsz + i] = 0.0;
    }
    let shift: Vec<f64> = (0..bsz)
        .map(|i| {
            (0..width)
                .filter(|&j| mask[i * width + j] != 0.0)
                .map(|j| lv[i * width + j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let shift_v = tape.leaf(Tensor::matrix(bsz, 1, shift)?);
    let shift_b = tape.broadcast(shift_v, vec![bsz, width])?;
    let centered = tape.sub(logits, shift_b)?;
    let e = tape.exp(centered)?;
    let mask_v = tape.leaf(Tensor::matrix(bsz, width, mask)?);
    let e = tape.mul(e, mask_v)?;
    let denom = tape.sum_rows(e)?;
    let log_denom = tape.log(denom)?;
    let positives = tape.gather(
        centered,
        (0..bsz).map(|i| i * width + i).collect(),
        vec![bsz],
    )?;
    let per_row = tape.sub(log_denom, positives)?;
    Ok(tape.sum(per_row)?)
}

/// SimCLR loss `(1 / 2B) Σ_i (ℓ_i + ℓ̄_i)` of two aligned `[B, D]` batches.
/// The positive pair appears once in each denominator.
pub fn simclr_loss(tape: &mut Tape, v: Var, u: Var, tau: f64, cosine: bool) -> Result<Var> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::config(
            "ssl_train",
            format!("temperature must be > 0, got {tau}"),
        ));
    }
    let (b, d) = check_pair(tape, v, u)?;
    if b < 2 {
        return Err(Error::config(
            "ssl_train",
            format!("SimCLR needs a batch of at least 2, got {b}"),
        ));
    }
    let (v, u) = if cosine {
        (
            l2_normalize_rows(tape, v, b, d)?,
            l2_normalize_rows(tape, u, b, d)?,
        )
    } else {
        (v, u)
    };
    let lv = contrastive_rows(tape, v, u, b, tau)?;
    let lu = contrastive_rows(tape, u, v, b, tau)?;
    let total = tape.add(lv, lu)?;
    Ok(tape.scale(total, 1.0 / (2 * b) as f64)?)
}

/// SimSiam loss `(1 / 2B) Σ_i (D(v_i, sg(u_i)) + D(u_i, sg(v_i)))` with
/// `D(x, y) = ‖x − y‖_p^p`.
pub fn simsiam_loss(tape: &mut Tape, v: Var, u: Var, p: f64) -> Result<Var> {
    let (b, _) = check_pair(tape, v, u)?;
    let half = |tape: &mut Tape, x: Var, y: Var| -> Result<Var> {
        let target = tape.stop_gradient(y);
        let diff = tape.sub(x, target)?;
        let abs = tape.abs(diff)?;
        let powed = tape.pow(abs, p)?;
        Ok(tape.sum(powed)?)
    };
    let d1 = half(tape, v, u)?;
    let d2 = half(tape, u, v)?;
    let total = tape.add(d1, d2)?;
    Ok(tape.scale(total, 1.0 / (2 * b) as f64)?)
}

/// Rotates a planar set by `angle` radians.
pub fn rotate2d(set: &PointSet, angle: f64) -> Result<PointSet> {
    if set.dim() != 2 {
        return Err(Error::config(
            "ssl_train",
            format!("rotate2d needs 2-d points, got dimension {}", set.dim()),
        ));
    }
    let (s, c) = angle.sin_cos();
    set.map_points(|q| vec![c * q[0] - s * q[1], s * q[0] + c * q[1]])
}

pub fn augment(set: &PointSet, aug: &Augmentation, rng: &mut impl Rng) -> Result<PointSet> {
    match *aug {
        Augmentation::Rotate2d => {
            if set.dim() != 2 {
                return Err(Error::config(
                    "ssl_train",
                    format!("rotate2d needs 2-d points, got dimension {}", set.dim()),
                ));
            }
            let angle = rng.random_range(0.0..TAU);
            rotate2d(set, angle)
        }
        Augmentation::Jitter { sigma } => set.map_points(|q| {
            q.iter()
                .map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }),
    }
}

/// Loss curve of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss for each epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    /// `epoch,mean_loss` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (e, l) in self.epoch_loss.iter().enumerate() {
            out.push_str(&format!("{e},{l}\n"));
        }
        out
    }
}

fn embed_pairs(
    model: &Model,
    tape: &mut Tape,
    originals: &[&PointSet],
    augmented: &[PointSet],
) -> Result<(Var, Var, Vec<Var>)> {
    let vars = model.bind(tape);
    let mut all: Vec<&PointSet> = originals.to_vec();
    all.extend(augmented.iter());
    let (x, sizes) = model.stack_sets(tape, &all)?;
    let e = model.embed_on_tape(tape, &vars, x, &sizes)?;
    let (b, width) = (originals.len(), model.embedding_len());
    let v = tape.gather(e, (0..b * width).collect(), vec![b, width])?;
    let u = tape.gather(e, (b * width..2 * b * width).collect(), vec![b, width])?;
    Ok((v, u, vars.all()))
}

/// Trains `model` in place. Every step draws a fresh augmentation of each set
/// in the batch, takes one Adam step on all parameters and re-projects the
/// slicer onto its constraint set. Shuffling, augmentation and projection all
/// draw from one stream seeded by `cfg.seed`.
pub fn train(sets: &[PointSet], model: &mut Model, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if sets.is_empty() {
        return Err(Error::config("ssl_train", "training set is empty"));
    }
    if cfg.loss == LossKind::Simclr && sets.len() < 2 {
        return Err(Error::config(
            "ssl_train",
            "SimCLR needs at least two training sets",
        ));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..sets.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<Vec<usize>> = order
            .chunks(cfg.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        // A trailing singleton cannot be contrasted; fold it into the previous batch.
        if cfg.loss == LossKind::Simclr && batches.len() > 1 && batches[batches.len() - 1].len() < 2
        {
            let last = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(last);
        }

        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let originals: Vec<&PointSet> = idx.iter().map(|&i| &sets[i]).collect();
            let augmented = originals
                .iter()
                .map(|s| augment(s, &cfg.augmentation, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let non_finite = |e: Error| {
                let detail = match &e {
                    Error::Graph(GraphError::NonFinite { op }) => op.to_string(),
                    Error::Numerical { msg, .. } => msg.clone(),
                    _ => return e,
                };
                Error::numerical(
                    "ssl_train",
                    format!("non-finite value ({detail}) at epoch {epoch}, batch {bi}"),
                )
            };
            let mut tape = Tape::new();
            let (v, u, vars) =
                embed_pairs(model, &mut tape, &originals, &augmented).map_err(non_finite)?;
            let loss = match cfg.loss {
                LossKind::Simclr => simclr_loss(&mut tape, v, u, cfg.tau, cfg.cosine),
                LossKind::Simsiam => simsiam_loss(&mut tape, v, u, model.p),
            }
            .map_err(non_finite)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::numerical(
                    "ssl_train",
                    format!("loss is {value} at epoch {epoch}, batch {bi}"),
                ));
            }
            let grads = tape.backward(loss).map_err(|e| non_finite(e.into()))?;
            let g: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
            opt.step(model.params_mut(), &g);
            model.project_constraints(&mut rng);
            total += value;
            steps += 1;
        }
        epoch_loss.push(total / batches.len() as f64);
    }
    Ok(TrainReport { epoch_loss, steps })
}

/// Mean `‖ν(Z) − ν(aug(Z))‖_p^p` over `sets`, one augmentation per set drawn
/// from `seed`. Small values mean the embedding is nearly invariant.
pub fn augmentation_discrepancy(
    model: &Model,
    sets: &[PointSet],
    aug: &Augmentation,
    seed: u64,
) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::config("ssl_train", "no sets to evaluate"));
    }
    let mut rng = seeded_rng(seed);
    let augmented = sets
        .iter()
        .map(|s| augment(s, aug, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let a = model.embed_all(sets)?;
    let b = model.embed_all(&augmented)?;
    let p = model.p;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| lp_distance(&x.values, &y.values, p).powf(p))
        .sum::<f64>()
        / sets.len() as f64)
}
