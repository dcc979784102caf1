//! Generalized sliced-Wasserstein distances.
//!
//! [`gsw`] averages `W_p^p` over the slices of a fixed slicer (a Monte-Carlo
//! estimate of the expectation over slice parameters when the slicer was
//! drawn at random). [`max_gsw`] instead optimizes a single slice by
//! projected gradient ascent.

use serde::{Deserialize, Serialize};

use crate::data_io::PointSet;
use crate::diffgraph::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Adam, AdamConfig, Parameters};
use crate::slicers::{Slicer, SlicerKind};
use crate::transport1d::{argsort, monotone_coupling, wasserstein_pp_sorted};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GswConfig {
    pub p: f64,
    pub num_slices: usize,
    pub seed: u64,
    pub max_gsw_steps: usize,
    pub max_gsw_lr: f64,
}

impl Default for GswConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            num_slices: 64,
            seed: 0,
            max_gsw_steps: 200,
            max_gsw_lr: 0.05,
        }
    }
}

impl GswConfig {
    fn validate(&self) -> Result<()> {
        if self.p < 1.0 || !self.p.is_finite() {
            return Err(Error::config(
                "gswdist",
                format!("order p = {} must be >= 1", self.p),
            ));
        }
        if self.num_slices == 0 {
            return Err(Error::config("gswdist", "need at least one slice"));
        }
        Ok(())
    }
}

/// GSW value with per-slice detail.
#[derive(Debug, Clone, PartialEq)]
pub struct GswReport {
    pub value: f64,
    /// `W_p^p` on each slice.
    pub per_slice: Vec<f64>,
    /// Standard error of the mean of `per_slice`, i.e. of the Monte-Carlo
    /// estimate of `GSW_p^p`.
    pub std_err: f64,
}

fn sorted_columns(slices: &Tensor) -> Vec<Vec<f64>> {
    let (n, l) = (slices.shape()[0], slices.shape()[1]);
    (0..l)
        .map(|c| {
            let col: Vec<f64> = (0..n).map(|i| slices.data()[i * l + c]).collect();
            argsort(&col).into_iter().map(|i| col[i]).collect()
        })
        .collect()
}

pub fn gsw_report(a: &PointSet, b: &PointSet, slicer: &Slicer, p: f64) -> Result<GswReport> {
    if p < 1.0 || !p.is_finite() {
        return Err(Error::config(
            "gswdist",
            format!("order p = {p} must be >= 1"),
        ));
    }
    let ca = sorted_columns(&slicer.slice(a)?);
    let cb = sorted_columns(&slicer.slice(b)?);
    let per_slice: Vec<f64> = ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| wasserstein_pp_sorted(x, y, p))
        .collect();
    let n = per_slice.len() as f64;
    let mean = per_slice.iter().sum::<f64>() / n;
    let std_err = if per_slice.len() > 1 {
        let var = per_slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(GswReport {
        value: mean.powf(1.0 / p),
        per_slice,
        std_err,
    })
}

/// `(1/L Σ_l W_p^p(slice_l(a), slice_l(b)))^(1/p)` for the slices of `slicer`.
pub fn gsw(a: &PointSet, b: &PointSet, slicer: &Slicer, p: f64) -> Result<f64> {
    Ok(gsw_report(a, b, slicer, p)?.value)
}

/// GSW with `cfg.num_slices` random slices of the given family, drawn from
/// `cfg.seed`.
pub fn sliced_gsw(
    a: &PointSet,
    b: &PointSet,
    kind: &SlicerKind,
    cfg: &GswConfig,
) -> Result<GswReport> {
    cfg.validate()?;
    let slicer = Slicer::init(kind, a.dim(), cfg.num_slices, cfg.seed)?;
    gsw_report(a, b, &slicer, cfg.p)
}

/// Max-GSW: Adam ascent on `W_p(g_θ#a, g_θ#b)` over a single slice of the
/// given family, with gradients restricted to the tangent space of the
/// constraint set and a projection back onto it after every step.
/// Returns the best value seen and the slicer that attained it.
pub fn max_gsw(
    a: &PointSet,
    b: &PointSet,
    kind: &SlicerKind,
    cfg: &GswConfig,
) -> Result<(f64, Slicer)> {
    cfg.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            module: "gswdist",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let p = cfg.p;
    let mut rng = seeded_rng(cfg.seed);
    let mut slicer = Slicer::init(kind, a.dim(), 1, cfg.seed)?;
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.max_gsw_lr));
    let coupling = monotone_coupling(a.len(), b.len());
    let masses = Tensor::vector(coupling.iter().map(|c| c.2).collect())?;

    let mut best: Option<(f64, Slicer)> = None;
    for step in 0..=cfg.max_gsw_steps {
        let mut tape = Tape::new();
        let vars = slicer.bind(&mut tape);
        let xa = tape.leaf(a.to_tensor());
        let xb = tape.leaf(b.to_tensor());
        let sa = slicer.forward(&mut tape, &vars, xa)?;
        let sb = slicer.forward(&mut tape, &vars, xb)?;
        let pa = argsort(tape.value(sa).data());
        let pb = argsort(tape.value(sb).data());
        let ia = coupling.iter().map(|c| pa[c.0]).collect();
        let ib = coupling.iter().map(|c| pb[c.1]).collect();
        let ga = tape.gather(sa, ia, vec![coupling.len()])?;
        let gb = tape.gather(sb, ib, vec![coupling.len()])?;
        let diff = tape.sub(ga, gb)?;
        let abs = tape.abs(diff)?;
        let powed = tape.pow(abs, p)?;
        let w = tape.leaf(masses.clone());
        let weighted = tape.mul(powed, w)?;
        let wpp = tape.sum(weighted)?;

        let value = tape.value(wpp).data()[0].powf(1.0 / p);
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, slicer.clone()));
        }
        if step == cfg.max_gsw_steps {
            break;
        }
        let grads = tape.backward(wpp)?;
        let mut ascent: Vec<Tensor> = vars
            .iter()
            .map(|&v| {
                let g = grads.get(v);
                Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| -x).collect())
            })
            .collect::<std::result::Result<_, _>>()?;
        // Per-coordinate Adam scaling would turn the radial part of the
        // gradient into spurious tangential drift on the sphere.
        slicer.tangent_gradients(&mut ascent);
        opt.step(slicer.params_mut(), &ascent);
        if slicer
            .params()
            .iter()
            .any(|t| t.data().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::numerical(
                "gswdist",
                format!("max-GSW diverged at step {step}"),
            ));
        }
        slicer.project_constraints(&mut rng);
    }
    Ok(best.expect("at least one evaluation"))
}
