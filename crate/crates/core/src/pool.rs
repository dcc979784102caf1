//! GSWE pooling: fixed-length Euclidean embeddings of point sets.
//!
//! For every reference set `k` and slice `l`, the sliced values of the
//! input set are transported onto the sorted sliced values of reference `k`
//! and the displacement (transport map minus identity) is stored. Blocks
//! are laid out `k`-major, then `l`, then `m` in sorted-reference order, and
//! every coefficient is scaled by `(1 / (M·L·K))^(1/p)` so that the plain
//! `ℓ_p` distance between two embeddings is the empirical GSW distance
//! averaged over slices and references.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::PointSet;
use crate::diffgraph::{GraphError, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{normal_vec, seeded_rng, Mlp, Parameters};
use crate::slicers::{Slicer, SlicerKind};
use crate::transport1d::{argsort, interpolation_weights, Interpolation};

/// `K` learnable reference sets of `M` points each.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBank {
    refs: Vec<Tensor>,
}

/// How [`ReferenceBank::init`] picks the initial reference points.
#[derive(Debug, Clone, Copy)]
pub enum BankInit<'a> {
    /// i.i.d. standard normal coordinates.
    Gaussian,
    /// Points drawn uniformly (with replacement) from the pooled elements
    /// of the given sets.
    Data(&'a [PointSet]),
}

impl ReferenceBank {
    pub fn new(refs: Vec<Tensor>) -> Result<Self> {
        let first = refs
            .first()
            .ok_or_else(|| Error::config("gswe_pool", "reference bank needs K >= 1"))?;
        let shape = first.shape().to_vec();
        if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::config(
                "gswe_pool",
                format!("reference sets must be non-empty M×d matrices, got {shape:?}"),
            ));
        }
        if let Some(bad) = refs.iter().find(|r| r.shape() != shape.as_slice()) {
            return Err(Error::config(
                "gswe_pool",
                format!("reference shapes differ: {shape:?} vs {:?}", bad.shape()),
            ));
        }
        Ok(Self { refs })
    }

    pub fn init(k: usize, m: usize, d: usize, seed: u64, strategy: BankInit<'_>) -> Result<Self> {
        if k == 0 || m == 0 || d == 0 {
            return Err(Error::config(
                "gswe_pool",
                format!("need K, M, d >= 1, got K={k}, M={m}, d={d}"),
            ));
        }
        let mut rng = seeded_rng(seed);
        let refs = match strategy {
            BankInit::Gaussian => (0..k)
                .map(|_| Tensor::matrix(m, d, normal_vec(&mut rng, m * d, 1.0)))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            BankInit::Data(sets) => {
                let pool: Vec<&[f64]> = sets.iter().flat_map(PointSet::points).collect();
                if pool.is_empty() {
                    return Err(Error::config(
                        "gswe_pool",
                        "data-initialized bank needs at least one point",
                    ));
                }
                if let Some(s) = sets.iter().find(|s| s.dim() != d) {
                    return Err(Error::Dimension {
                        module: "gswe_pool",
                        expected: d,
                        got: s.dim(),
                    });
                }
                (0..k)
                    .map(|_| {
                        let data = (0..m)
                            .flat_map(|_| pool[rng.random_range(0..pool.len())].to_vec())
                            .collect();
                        Tensor::matrix(m, d, data)
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?
            }
        };
        Self::new(refs)
    }

    pub fn num_refs(&self) -> usize {
        self.refs.len()
    }

    pub fn ref_size(&self) -> usize {
        self.refs[0].shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.refs[0].shape()[1]
    }

    pub fn refs(&self) -> &[Tensor] {
        &self.refs
    }

    /// Reference `k` as a point set.
    pub fn reference(&self, k: usize) -> PointSet {
        PointSet::new(self.dim(), self.refs[k].data().to_vec(), None).expect("validated bank")
    }

    /// Reorders the references.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            refs: perm.iter().map(|&k| self.refs[k].clone()).collect(),
        }
    }
}

impl Parameters for ReferenceBank {
    fn params(&self) -> Vec<&Tensor> {
        self.refs.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.refs.iter_mut().collect()
    }
}

/// Flat embedding vector with its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEmbedding {
    pub values: Vec<f64>,
    pub num_refs: usize,
    pub num_slices: usize,
    pub ref_size: usize,
    pub p: f64,
    /// Hash of the parameters that produced the embedding; distances are
    /// only defined between embeddings with the same fingerprint.
    pub fingerprint: u64,
}

impl SetEmbedding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coefficients of reference `k`, slice `l`.
    pub fn block(&self, k: usize, l: usize) -> &[f64] {
        let m = self.ref_size;
        let start = (k * self.num_slices + l) * m;
        &self.values[start..start + m]
    }
}

/// Plain `ℓ_p` distance between two embeddings of the same layout.
pub fn pairwise_embed_distance(a: &SetEmbedding, b: &SetEmbedding, p: f64) -> Result<f64> {
    if (a.num_refs, a.num_slices, a.ref_size, a.fingerprint)
        != (b.num_refs, b.num_slices, b.ref_size, b.fingerprint)
        || a.values.len() != b.values.len()
    {
        return Err(Error::config(
            "gswe_pool",
            format!(
                "embedding layouts differ: (K={}, L={}, M={}) vs (K={}, L={}, M={}) or different parameters",
                a.num_refs, a.num_slices, a.ref_size, b.num_refs, b.num_slices, b.ref_size
            ),
        ));
    }
    if p.is_nan() || p < 1.0 {
        return Err(Error::config(
            "gswe_pool",
            format!("order p = {p} must be >= 1"),
        ));
    }
    Ok(lp_distance(&a.values, &b.values, p))
}

pub(crate) fn lp_distance(a: &[f64], b: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        return a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Architecture summary of a [`Model`], enough to rebuild it from tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Layer widths of the per-element backbone, input first.
    pub backbone: Option<Vec<usize>>,
    pub slicer: SlicerKind,
    pub slicer_dim: usize,
    pub num_slices: usize,
    pub num_refs: usize,
    pub ref_size: usize,
    pub p: f64,
    pub interpolation: Interpolation,
}

/// How the reference bank of a fresh model is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankInitKind {
    Gaussian,
    /// Reference points sampled from the backbone features of training data.
    #[default]
    Data,
}

/// Hyperparameters for building a fresh [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden widths of the per-element backbone; empty means no backbone.
    pub backbone_hidden: Vec<usize>,
    /// Output width of the backbone (the slicer's input dimension).
    pub backbone_out: usize,
    pub slicer: SlicerKind,
    pub num_slices: usize,
    pub num_refs: usize,
    pub ref_size: usize,
    pub p: f64,
    pub interpolation: Interpolation,
    pub bank_init: BankInitKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// The Set-Circles setup: a 2×64 ReLU backbone down to one feature, a
    /// single linear slice, and one reference set of two points drawn from
    /// the training features.
    fn default() -> Self {
        Self {
            backbone_hidden: vec![64, 64],
            backbone_out: 1,
            slicer: SlicerKind::Linear,
            num_slices: 1,
            num_refs: 1,
            ref_size: 2,
            p: 2.0,
            interpolation: Interpolation::Barycentric,
            bank_init: BankInitKind::Data,
            seed: 0,
        }
    }
}

type InterpWeights = Vec<Vec<(usize, f64)>>;

/// Optional per-element backbone, slicer and reference bank.
///
/// References live in the slicer's input space, i.e. after the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub backbone: Option<Mlp>,
    pub slicer: Slicer,
    pub bank: ReferenceBank,
    pub p: f64,
    pub interpolation: Interpolation,
}

/// Tape handles of a bound [`Model`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub backbone: Vec<Var>,
    pub slicer: Vec<Var>,
    pub bank: Vec<Var>,
}

impl ModelVars {
    /// All handles in [`Parameters::params`] order.
    pub fn all(&self) -> Vec<Var> {
        [&self.backbone[..], &self.slicer[..], &self.bank[..]].concat()
    }

    /// Splits handles given in [`Parameters::params`] order of `model`.
    pub fn from_all(model: &Model, mut vars: Vec<Var>) -> Self {
        let nb = model.backbone.as_ref().map_or(0, |b| b.params().len());
        let ns = model.slicer.params().len();
        assert_eq!(vars.len(), nb + ns + model.bank.num_refs(), "handle count");
        let bank = vars.split_off(nb + ns);
        let slicer = vars.split_off(nb);
        Self {
            backbone: vars,
            slicer,
            bank,
        }
    }
}

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *hash ^= u64::from(*b);
        *hash = hash.wrapping_mul(0x100_0000_01b3);
    }
}

impl Model {
    pub fn new(
        backbone: Option<Mlp>,
        slicer: Slicer,
        bank: ReferenceBank,
        p: f64,
        interpolation: Interpolation,
    ) -> Result<Self> {
        if p < 1.0 || !p.is_finite() {
            return Err(Error::config(
                "gswe_pool",
                format!("order p = {p} must be >= 1"),
            ));
        }
        if let Some(b) = &backbone {
            if b.output_dim() != slicer.dim() {
                return Err(Error::Dimension {
                    module: "gswe_pool",
                    expected: slicer.dim(),
                    got: b.output_dim(),
                });
            }
        }
        if bank.dim() != slicer.dim() {
            return Err(Error::Dimension {
                module: "gswe_pool",
                expected: slicer.dim(),
                got: bank.dim(),
            });
        }
        Ok(Self {
            backbone,
            slicer,
            bank,
            p,
            interpolation,
        })
    }

    /// Fresh model for elements of dimension `input_dim`. `data` is only
    /// used by [`BankInitKind::Data`]; its points are passed through the
    /// backbone before seeding the references.
    pub fn init(cfg: &ModelConfig, input_dim: usize, data: &[PointSet]) -> Result<Self> {
        // Independent streams per component.
        let seed = |k: u64| cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k);
        let backbone = if cfg.backbone_hidden.is_empty() {
            None
        } else {
            let mut sizes = vec![input_dim];
            sizes.extend(&cfg.backbone_hidden);
            sizes.push(cfg.backbone_out);
            if sizes.contains(&0) {
                return Err(Error::config(
                    "gswe_pool",
                    format!("zero-width backbone layer in {sizes:?}"),
                ));
            }
            Some(Mlp::new(&sizes, &mut seeded_rng(seed(1))))
        };
        let slice_dim = backbone.as_ref().map_or(input_dim, Mlp::output_dim);
        let slicer = Slicer::init(&cfg.slicer, slice_dim, cfg.num_slices, seed(2))?;
        let bank = match cfg.bank_init {
            BankInitKind::Gaussian => ReferenceBank::init(
                cfg.num_refs,
                cfg.ref_size,
                slice_dim,
                seed(3),
                BankInit::Gaussian,
            )?,
            BankInitKind::Data => {
                let probe = Model::new(
                    backbone.clone(),
                    slicer.clone(),
                    ReferenceBank::init(1, 1, slice_dim, 0, BankInit::Gaussian)?,
                    cfg.p,
                    cfg.interpolation,
                )?;
                let features = data
                    .iter()
                    .map(|s| probe.set_features(s))
                    .collect::<Result<Vec<_>>>()?;
                ReferenceBank::init(
                    cfg.num_refs,
                    cfg.ref_size,
                    slice_dim,
                    seed(3),
                    BankInit::Data(&features),
                )?
            }
        };
        Model::new(backbone, slicer, bank, cfg.p, cfg.interpolation)
    }

    /// Rebuilds a model from its spec and tensors in [`Parameters::params`]
    /// order.
    pub fn from_spec(spec: &ModelSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let mut rest = tensors.into_iter();
        let mut take = |n: usize| -> Result<Vec<Tensor>> {
            let out: Vec<Tensor> = rest.by_ref().take(n).collect();
            if out.len() != n {
                return Err(Error::Data(
                    "checkpoint is missing parameter tensors".into(),
                ));
            }
            Ok(out)
        };
        let backbone = match &spec.backbone {
            Some(sizes) => Some(Mlp::from_params(
                sizes.clone(),
                take(2 * (sizes.len().max(1) - 1))?,
            )?),
            None => None,
        };
        let slicer = match &spec.slicer {
            SlicerKind::Linear => Slicer::linear(take(1)?.remove(0))?,
            SlicerKind::Polynomial { degree } => {
                Slicer::polynomial(spec.slicer_dim, *degree, take(1)?.remove(0))?
            }
            SlicerKind::Mlp { hidden } => {
                let mut sizes = vec![spec.slicer_dim];
                sizes.extend(hidden);
                sizes.push(spec.num_slices);
                Slicer::Mlp(Mlp::from_params(
                    sizes.clone(),
                    take(2 * (sizes.len() - 1))?,
                )?)
            }
        };
        let bank = ReferenceBank::new(take(spec.num_refs)?)?;
        if rest.next().is_some() {
            return Err(Error::Data(
                "checkpoint has unexpected extra tensors".into(),
            ));
        }
        let model = Model::new(backbone, slicer, bank, spec.p, spec.interpolation)?;
        if model.spec() != *spec {
            return Err(Error::Data(
                "checkpoint tensors do not match the stored spec".into(),
            ));
        }
        Ok(model)
    }

    /// Dimension of raw set elements.
    pub fn input_dim(&self) -> usize {
        self.backbone
            .as_ref()
            .map_or(self.slicer.dim(), Mlp::input_dim)
    }

    pub fn embedding_len(&self) -> usize {
        self.bank.num_refs() * self.slicer.num_slices() * self.bank.ref_size()
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            backbone: self.backbone.as_ref().map(|b| b.sizes().to_vec()),
            slicer: self.slicer.kind(),
            slicer_dim: self.slicer.dim(),
            num_slices: self.slicer.num_slices(),
            num_refs: self.bank.num_refs(),
            ref_size: self.bank.ref_size(),
            p: self.p,
            interpolation: self.interpolation,
        }
    }

    /// Stable hash of the architecture and every parameter bit.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325;
        fnv1a(
            &mut h,
            serde_json::to_string(&self.spec())
                .expect("serializable")
                .as_bytes(),
        );
        for t in self.params() {
            for v in t.data() {
                fnv1a(&mut h, &v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            backbone: self
                .backbone
                .as_ref()
                .map_or_else(Vec::new, |b| b.bind(tape)),
            slicer: self.slicer.bind(tape),
            bank: self.bank.bind(tape),
        }
    }

    /// Applies the backbone (if any) to an `[n, input_dim]` node.
    pub fn features(&self, tape: &mut Tape, vars: &ModelVars, x: Var) -> Result<Var> {
        match &self.backbone {
            Some(b) => Ok(b.forward(tape, &vars.backbone, x)?),
            None => Ok(x),
        }
    }

    /// Records the embeddings of consecutive sets stacked in `x`
    /// (`[Σ sizes, input_dim]`, set `b` occupying `sizes[b]` rows). Returns a
    /// `[B, K·L·M]` node. Gradients flow to every model parameter and to `x`.
    pub fn embed_on_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        x: Var,
        sizes: &[usize],
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::Dimension {
                module: "gswe_pool",
                expected: self.input_dim(),
                got: shape.get(1).copied().unwrap_or(0),
            });
        }
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::config("gswe_pool", "cannot embed an empty set"));
        }
        if sizes.iter().sum::<usize>() != shape[0] {
            return Err(Error::config(
                "gswe_pool",
                format!(
                    "set sizes sum to {} but {} rows were given",
                    sizes.iter().sum::<usize>(),
                    shape[0]
                ),
            ));
        }
        let n_slices = self.slicer.num_slices();
        let n_refs = self.bank.num_refs();
        let m_ref = self.bank.ref_size();
        let scale = (1.0 / (m_ref * n_slices * n_refs) as f64).powf(1.0 / self.p);

        let h = self.features(tape, vars, x)?;
        let sliced = self
            .slicer
            .forward(tape, &vars.slicer, h)
            .map_err(non_finite_slice)?;

        // Sorted reference slices, [L·M] each, slice-major.
        let mut ref_sorted = Vec::with_capacity(n_refs);
        for &r in &vars.bank {
            let rs = self
                .slicer
                .forward(tape, &vars.slicer, r)
                .map_err(non_finite_slice)?;
            let values = tape.value(rs).data().to_vec();
            let mut idx = Vec::with_capacity(n_slices * m_ref);
            for l in 0..n_slices {
                let col: Vec<f64> = (0..m_ref).map(|m| values[m * n_slices + l]).collect();
                idx.extend(argsort(&col).into_iter().map(|m| m * n_slices + l));
            }
            ref_sorted.push(tape.gather(rs, idx, vec![n_slices * m_ref])?);
        }

        let values = tape.value(sliced).data().to_vec();
        let mut rows = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        // Interpolation weights for the most recent set size.
        let mut cached: Option<(usize, InterpWeights)> = None;
        for &n in sizes {
            let mut perms = Vec::with_capacity(n_slices);
            for l in 0..n_slices {
                let col: Vec<f64> = (0..n)
                    .map(|i| values[(offset + i) * n_slices + l])
                    .collect();
                perms.push(argsort(&col));
            }
            let src = |l: usize, j: usize| (offset + perms[l][j]) * n_slices + l;
            let mapped = if n == m_ref {
                let idx = (0..n_slices)
                    .flat_map(|l| (0..m_ref).map(move |m| (l, m)))
                    .map(|(l, m)| src(l, m))
                    .collect();
                tape.gather(sliced, idx, vec![n_slices * m_ref])?
            } else {
                if cached.as_ref().map(|c| c.0) != Some(n) {
                    cached = Some((n, interpolation_weights(n, m_ref, self.interpolation)));
                }
                let weights = &cached.as_ref().unwrap().1;
                let mut entries = Vec::new();
                for l in 0..n_slices {
                    for (m, ws) in weights.iter().enumerate() {
                        entries.extend(ws.iter().map(|&(j, w)| (l * m_ref + m, src(l, j), w)));
                    }
                }
                tape.weighted_gather(sliced, entries, vec![n_slices * m_ref])?
            };
            let mut blocks = Vec::with_capacity(n_refs);
            for &r in &ref_sorted {
                blocks.push(tape.sub(mapped, r)?);
            }
            let joined = if blocks.len() == 1 {
                blocks[0]
            } else {
                tape.concat(&blocks)?
            };
            rows.push(tape.scale(joined, scale)?);
            offset += n;
        }
        let stacked = tape.concat(&rows)?;
        Ok(tape.reshape(stacked, vec![sizes.len(), n_refs * n_slices * m_ref])?)
    }

    /// Stacks sets into one `[Σ M_i, d]` leaf.
    pub fn stack_sets(&self, tape: &mut Tape, sets: &[&PointSet]) -> Result<(Var, Vec<usize>)> {
        let d = self.input_dim();
        if let Some(s) = sets.iter().find(|s| s.dim() != d) {
            return Err(Error::Dimension {
                module: "gswe_pool",
                expected: d,
                got: s.dim(),
            });
        }
        let sizes: Vec<usize> = sets.iter().map(|s| s.len()).collect();
        let data: Vec<f64> = sets.iter().flat_map(|s| s.data().iter().copied()).collect();
        let x = tape.leaf(Tensor::matrix(data.len() / d, d, data)?);
        Ok((x, sizes))
    }

    pub fn embed(&self, set: &PointSet) -> Result<SetEmbedding> {
        Ok(self.embed_all(std::slice::from_ref(set))?.remove(0))
    }

    /// Embeds every set with frozen parameters.
    pub fn embed_all(&self, sets: &[PointSet]) -> Result<Vec<SetEmbedding>> {
        const CHUNK: usize = 256;
        let fingerprint = self.fingerprint();
        let mut out = Vec::with_capacity(sets.len());
        for chunk in sets.chunks(CHUNK) {
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape);
            let refs: Vec<&PointSet> = chunk.iter().collect();
            let (x, sizes) = self.stack_sets(&mut tape, &refs)?;
            let e = self.embed_on_tape(&mut tape, &vars, x, &sizes)?;
            let width = self.embedding_len();
            for row in tape.value(e).data().chunks_exact(width) {
                out.push(SetEmbedding {
                    values: row.to_vec(),
                    num_refs: self.bank.num_refs(),
                    num_slices: self.slicer.num_slices(),
                    ref_size: self.bank.ref_size(),
                    p: self.p,
                    fingerprint,
                });
            }
        }
        Ok(out)
    }

    /// Per-element features (backbone output) of a set.
    pub fn set_features(&self, set: &PointSet) -> Result<PointSet> {
        match &self.backbone {
            None => Ok(set.clone()),
            Some(_) => {
                let mut tape = Tape::new();
                let vars = self.bind(&mut tape);
                let (x, _) = self.stack_sets(&mut tape, &[set])?;
                let h = self.features(&mut tape, &vars, x)?;
                let t = tape.value(h);
                PointSet::new(t.shape()[1], t.data().to_vec(), set.label())
            }
        }
    }

    /// Re-imposes slicer constraints after a parameter update.
    pub fn project_constraints(&mut self, rng: &mut impl Rng) -> usize {
        self.slicer.project_constraints(rng)
    }
}

fn non_finite_slice(e: Error) -> Error {
    match e {
        Error::Graph(GraphError::NonFinite { op }) => Error::numerical(
            "gswe_pool",
            format!("slicer produced a non-finite value (in {op})"),
        ),
        other => other,
    }
}

impl Parameters for Model {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = self
            .backbone
            .as_ref()
            .map_or_else(Vec::new, Parameters::params);
        out.extend(self.slicer.params());
        out.extend(self.bank.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self
            .backbone
            .as_mut()
            .map_or_else(Vec::new, Parameters::params_mut);
        out.extend(self.slicer.params_mut());
        out.extend(self.bank.params_mut());
        out
    }
}

/// Embeds `set` with a bare slicer and bank (no backbone, barycentric
/// interpolation for unequal cardinalities).
pub fn embed(
    set: &PointSet,
    slicer: &Slicer,
    bank: &ReferenceBank,
    p: f64,
) -> Result<SetEmbedding> {
    Model::new(
        None,
        slicer.clone(),
        bank.clone(),
        p,
        Interpolation::default(),
    )?
    .embed(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport1d::{cdt_with, Samples1D};

    fn set(dim: usize, data: &[f64]) -> PointSet {
        PointSet::new(dim, data.to_vec(), None).unwrap()
    }

    fn model(k: usize, m: usize, l: usize, d: usize, seed: u64) -> Model {
        let slicer = Slicer::init(&SlicerKind::Linear, d, l, seed).unwrap();
        let bank = ReferenceBank::init(k, m, d, seed + 1, BankInit::Gaussian).unwrap();
        Model::new(None, slicer, bank, 2.0, Interpolation::Barycentric).unwrap()
    }

    #[test]
    fn reference_embeds_to_zero_block() {
        let m = model(3, 5, 4, 2, 7);
        for k in 0..3 {
            let e = m.embed(&m.bank.reference(k)).unwrap();
            for l in 0..4 {
                assert!(e.block(k, l).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn single_point_reference_is_average_pooling() {
        let m = model(1, 1, 3, 2, 2);
        let z = set(2, &[0.5, 1.0, -2.0, 0.25, 3.0, 3.0]);
        let e = m.embed(&z).unwrap();
        let slices = m.slicer.slice(&z).unwrap();
        let r = m.slicer.slice(&m.bank.reference(0)).unwrap();
        let scale = (1.0f64 / 3.0).sqrt();
        for l in 0..3 {
            let mean: f64 = (0..3).map(|i| slices.data()[i * 3 + l]).sum::<f64>() / 3.0;
            let expected = (mean - r.data()[l]) * scale;
            assert!((e.values[l] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn blocks_match_cdt() {
        let m = model(2, 4, 3, 2, 9);
        let z = set(
            2,
            &[
                0.1, 0.2, 1.5, -0.3, 2.2, 0.0, -1.0, -1.0, 0.3, 0.9, 0.4, 0.4,
            ],
        );
        let e = m.embed(&z).unwrap();
        let zs = m.slicer.slice(&z).unwrap();
        let scale = (1.0f64 / 24.0).sqrt();
        for k in 0..2 {
            let rs = m.slicer.slice(&m.bank.reference(k)).unwrap();
            for l in 0..3 {
                let a = Samples1D::new((0..6).map(|i| zs.data()[i * 3 + l]).collect()).unwrap();
                let r = Samples1D::new((0..4).map(|i| rs.data()[i * 3 + l]).collect()).unwrap();
                let c = cdt_with(&a, &r, Interpolation::Barycentric).unwrap();
                for (x, y) in e.block(k, l).iter().zip(&c) {
                    assert!((x - y * scale).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn distance_checks_layout() {
        let m1 = model(1, 4, 2, 2, 1);
        let m2 = model(2, 4, 2, 2, 1);
        let z = set(2, &[1.0, 2.0, 3.0, 4.0]);
        let (a, b) = (m1.embed(&z).unwrap(), m2.embed(&z).unwrap());
        assert!(pairwise_embed_distance(&a, &b, 2.0).is_err());
        assert_eq!(pairwise_embed_distance(&a, &a, 2.0).unwrap(), 0.0);
        // Same layout but different parameters.
        let m3 = model(1, 4, 2, 2, 5);
        assert!(pairwise_embed_distance(&a, &m3.embed(&z).unwrap(), 2.0).is_err());
    }

    #[test]
    fn distance_is_homogeneous() {
        let m = model(1, 3, 2, 2, 4);
        let a = m.embed(&set(2, &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0])).unwrap();
        let b = m.embed(&set(2, &[-1.0, 0.5, 0.0, 0.0])).unwrap();
        let d = pairwise_embed_distance(&a, &b, 2.0).unwrap();
        let c = -2.5;
        let scaled = |e: &SetEmbedding| SetEmbedding {
            values: e.values.iter().map(|v| c * v).collect(),
            ..e.clone()
        };
        let ds = pairwise_embed_distance(&scaled(&a), &scaled(&b), 2.0).unwrap();
        assert!((ds - c.abs() * d).abs() < 1e-12);
    }

    #[test]
    fn bank_init_strategies() {
        let g1 = ReferenceBank::init(2, 3, 2, 4, BankInit::Gaussian).unwrap();
        assert_eq!(
            g1,
            ReferenceBank::init(2, 3, 2, 4, BankInit::Gaussian).unwrap()
        );
        assert!(g1
            .refs()
            .iter()
            .all(|r| r.data().iter().all(|v| v.is_finite())));

        let data = vec![set(2, &[1.0, 2.0, 3.0, 4.0]), set(2, &[5.0, 6.0])];
        let b = ReferenceBank::init(3, 4, 2, 0, BankInit::Data(&data)).unwrap();
        let pool: Vec<&[f64]> = data.iter().flat_map(PointSet::points).collect();
        for r in b.refs() {
            for p in r.data().chunks(2) {
                assert!(pool.contains(&p));
            }
        }
        assert!(ReferenceBank::init(1, 2, 2, 0, BankInit::Data(&[])).is_err());
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let m = model(1, 2, 2, 3, 0);
        assert!(matches!(
            m.embed(&set(2, &[1.0, 2.0])),
            Err(Error::Dimension { .. })
        ));
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let x = tape.leaf(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        assert!(m.embed_on_tape(&mut tape, &vars, x, &[1, 0]).is_err());
    }
}
