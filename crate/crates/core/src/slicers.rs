//! Parametric slicing functions `g: R^d → R^L`.
//!
//! Column `l` of a slicer's output is the `l`-th one-dimensional projection
//! of every set element. Three families are provided:
//!
//! - linear: `z ↦ zᵀθ_l` with each `θ_l` on the unit sphere;
//! - polynomial: a linear map over all monomials of total degree `≤ deg`,
//!   each coefficient column kept at unit norm;
//! - MLP: a ReLU network whose trunk is shared across slices and whose last
//!   layer has one output per slice.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::PointSet;
use crate::diffgraph::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{normal_vec, seeded_rng, Mlp, Parameters};

/// Default polynomial degree.
pub const DEFAULT_DEGREE: u32 = 5;
/// Default MLP trunk.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

// Columns this close to unit norm are left untouched by the projection.
const UNIT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SlicerKind {
    Linear,
    Polynomial { degree: u32 },
    Mlp { hidden: Vec<usize> },
}

impl SlicerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SlicerKind::Linear => "linear",
            SlicerKind::Polynomial { .. } => "polynomial",
            SlicerKind::Mlp { .. } => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Slicer {
    Linear {
        /// `[d, L]`
        theta: Tensor,
    },
    Polynomial {
        degree: u32,
        dim: usize,
        exponents: Vec<Vec<u32>>,
        /// `[n_monomials, L]`
        coeffs: Tensor,
    },
    Mlp(Mlp),
}

/// All exponent vectors in `dim` variables with total degree `≤ degree`,
/// ordered by total degree, then lexicographically descending.
pub fn monomial_exponents(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == dim - 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            rec(dim, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        rec(dim, total, &mut Vec::new(), &mut out);
    }
    out
}

fn normalize_columns(t: &mut Tensor, rng: &mut impl Rng) -> usize {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let data = t.data_mut();
    let mut rerandomized = 0;
    for c in 0..cols {
        let mut norm = (0..rows)
            .map(|r| data[r * cols + c].powi(2))
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() <= UNIT_TOL {
            continue;
        }
        if norm == 0.0 || !norm.is_finite() {
            loop {
                let fresh = normal_vec(rng, rows, 1.0);
                norm = fresh.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for (r, v) in fresh.into_iter().enumerate() {
                        data[r * cols + c] = v;
                    }
                    break;
                }
            }
            rerandomized += 1;
        }
        for r in 0..rows {
            data[r * cols + c] /= norm;
        }
    }
    rerandomized
}

impl Slicer {
    /// Random slicer; `kind` selects the family and its hyperparameters.
    pub fn init(kind: &SlicerKind, dim: usize, num_slices: usize, seed: u64) -> Result<Self> {
        if dim == 0 || num_slices == 0 {
            return Err(Error::config(
                "slicers",
                format!("need d >= 1 and L >= 1, got d={dim}, L={num_slices}"),
            ));
        }
        let mut rng = seeded_rng(seed);
        let mut slicer = match kind {
            SlicerKind::Linear => Slicer::Linear {
                theta: Tensor::matrix(
                    dim,
                    num_slices,
                    normal_vec(&mut rng, dim * num_slices, 1.0),
                )?,
            },
            SlicerKind::Polynomial { degree } => {
                let exponents = monomial_exponents(dim, *degree);
                let n = exponents.len();
                Slicer::Polynomial {
                    degree: *degree,
                    dim,
                    exponents,
                    coeffs: Tensor::matrix(
                        n,
                        num_slices,
                        normal_vec(&mut rng, n * num_slices, 1.0),
                    )?,
                }
            }
            SlicerKind::Mlp { hidden } => {
                let mut sizes = vec![dim];
                sizes.extend(hidden);
                sizes.push(num_slices);
                Slicer::Mlp(Mlp::new(&sizes, &mut rng))
            }
        };
        slicer.project_constraints(&mut rng);
        Ok(slicer)
    }

    /// Linear slicer with the given `[d, L]` directions, used as is.
    pub fn linear(theta: Tensor) -> Result<Self> {
        if theta.ndim() != 2 || theta.shape()[0] == 0 || theta.shape()[1] == 0 {
            return Err(Error::config(
                "slicers",
                "linear directions must be a non-empty d×L matrix",
            ));
        }
        Ok(Slicer::Linear { theta })
    }

    /// Polynomial slicer with explicit `[n_monomials, L]` coefficients in
    /// [`monomial_exponents`] order.
    pub fn polynomial(dim: usize, degree: u32, coeffs: Tensor) -> Result<Self> {
        let exponents = monomial_exponents(dim, degree);
        if coeffs.ndim() != 2 || coeffs.shape()[0] != exponents.len() {
            return Err(Error::Dimension {
                module: "slicers",
                expected: exponents.len(),
                got: coeffs.shape().first().copied().unwrap_or(0),
            });
        }
        Ok(Slicer::Polynomial {
            degree,
            dim,
            exponents,
            coeffs,
        })
    }

    pub fn kind(&self) -> SlicerKind {
        match self {
            Slicer::Linear { .. } => SlicerKind::Linear,
            Slicer::Polynomial { degree, .. } => SlicerKind::Polynomial { degree: *degree },
            Slicer::Mlp(m) => SlicerKind::Mlp {
                hidden: m.sizes()[1..m.sizes().len() - 1].to_vec(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Slicer::Linear { theta } => theta.shape()[0],
            Slicer::Polynomial { dim, .. } => *dim,
            Slicer::Mlp(m) => m.input_dim(),
        }
    }

    pub fn num_slices(&self) -> usize {
        match self {
            Slicer::Linear { theta } => theta.shape()[1],
            Slicer::Polynomial { coeffs, .. } => coeffs.shape()[1],
            Slicer::Mlp(m) => m.output_dim(),
        }
    }

    /// Records the slicer applied to an `[n, d]` node; returns `[n, L]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::Dimension {
                module: "slicers",
                expected: self.dim(),
                got: shape.get(1).copied().unwrap_or(0),
            });
        }
        Ok(match self {
            Slicer::Linear { .. } => tape.matmul(x, vars[0])?,
            Slicer::Polynomial {
                dim,
                exponents,
                degree,
                ..
            } => {
                let features = polynomial_features(tape, x, *dim, *degree, exponents)?;
                tape.matmul(features, vars[0])?
            }
            Slicer::Mlp(m) => m.forward(tape, vars, x)?,
        })
    }

    /// Slices every element of `set`: an `[M, L]` tensor, row `m` holding the
    /// projections of element `m`.
    pub fn slice(&self, set: &PointSet) -> Result<Tensor> {
        if set.dim() != self.dim() {
            return Err(Error::Dimension {
                module: "slicers",
                expected: self.dim(),
                got: set.dim(),
            });
        }
        self.apply(&set.to_tensor())
    }

    /// Slices the rows of an `[n, d]` tensor without tracking gradients.
    pub fn apply(&self, points: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.leaf(points.clone());
        let out = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }

    /// Projects parameters back onto the feasible set: unit-norm columns for
    /// the linear and polynomial families; MLPs are unconstrained. Columns
    /// that collapsed to zero are redrawn from `rng`. Returns the number of
    /// redrawn columns.
    pub fn project_constraints(&mut self, rng: &mut impl Rng) -> usize {
        match self {
            Slicer::Linear { theta } => normalize_columns(theta, rng),
            Slicer::Polynomial { coeffs, .. } => normalize_columns(coeffs, rng),
            Slicer::Mlp(_) => 0,
        }
    }
}

impl Slicer {
    /// Drops the component of each gradient column along its (unit-norm)
    /// parameter column, leaving the part tangent to the constraint set of
    /// [`Slicer::project_constraints`]. No-op for MLPs.
    pub fn tangent_gradients(&self, grads: &mut [Tensor]) {
        let w = match self {
            Slicer::Linear { theta } => theta,
            Slicer::Polynomial { coeffs, .. } => coeffs,
            Slicer::Mlp(_) => return,
        };
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let g = grads[0].data_mut();
        for c in 0..cols {
            let (mut dot, mut sq) = (0.0, 0.0);
            for r in 0..rows {
                dot += w.data()[r * cols + c] * g[r * cols + c];
                sq += w.data()[r * cols + c].powi(2);
            }
            if sq > 0.0 {
                for r in 0..rows {
                    g[r * cols + c] -= dot / sq * w.data()[r * cols + c];
                }
            }
        }
    }
}

fn polynomial_features(
    tape: &mut Tape,
    x: Var,
    dim: usize,
    degree: u32,
    exponents: &[Vec<u32>],
) -> Result<Var> {
    let n = tape.shape(x)[0];
    // powers[j][e] = x_j^e for e >= 1
    let mut powers: Vec<Vec<Var>> = Vec::with_capacity(dim);
    for j in 0..dim {
        let col = tape.gather(x, (0..n).map(|i| i * dim + j).collect(), vec![n])?;
        let mut ps = vec![col, col];
        for _ in 2..=degree {
            let next = tape.mul(*ps.last().unwrap(), col)?;
            ps.push(next);
        }
        powers.push(ps);
    }
    let ones = tape.leaf(Tensor::vector(vec![1.0; n])?);
    let mut columns = Vec::with_capacity(exponents.len());
    for exps in exponents {
        let mut acc: Option<Var> = None;
        for (j, &e) in exps.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let term = powers[j][e as usize];
            acc = Some(match acc {
                None => term,
                Some(a) => tape.mul(a, term)?,
            });
        }
        columns.push(acc.unwrap_or(ones));
    }
    let stacked = tape.concat(&columns)?;
    let stacked = tape.reshape(stacked, vec![exponents.len(), n])?;
    Ok(tape.transpose(stacked)?)
}

impl Parameters for Slicer {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Slicer::Linear { theta } => vec![theta],
            Slicer::Polynomial { coeffs, .. } => vec![coeffs],
            Slicer::Mlp(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Slicer::Linear { theta } => vec![theta],
            Slicer::Polynomial { coeffs, .. } => vec![coeffs],
            Slicer::Mlp(m) => m.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(dim: usize, data: &[f64]) -> PointSet {
        PointSet::new(dim, data.to_vec(), None).unwrap()
    }

    #[test]
    fn coordinate_projection() {
        let s = Slicer::linear(Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.slice(&set(2, &[3.0, 4.0])).unwrap().data(), &[3.0]);
    }

    #[test]
    fn one_dimensional_identity() {
        let s = Slicer::linear(Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let z = [0.5, -2.0, 7.0];
        assert_eq!(s.slice(&set(1, &z)).unwrap().data(), &z);
    }

    #[test]
    fn even_monomial() {
        // monomials in one variable, degree 2: [z^0, z^1, z^2]
        assert_eq!(monomial_exponents(1, 2), vec![vec![0], vec![1], vec![2]]);
        let coeffs = Tensor::matrix(3, 1, vec![0.0, 0.0, 1.0]).unwrap();
        let s = Slicer::polynomial(1, 2, coeffs).unwrap();
        assert_eq!(s.slice(&set(1, &[2.0, -2.0])).unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn monomial_count_is_binomial() {
        // C(d + deg, deg)
        assert_eq!(monomial_exponents(2, 5).len(), 21);
        assert_eq!(monomial_exponents(3, 2).len(), 10);
        assert_eq!(monomial_exponents(8, 3).len(), 165);
    }

    #[test]
    fn polynomial_matches_direct_evaluation() {
        let s = Slicer::init(&SlicerKind::Polynomial { degree: 3 }, 2, 4, 9).unwrap();
        let pts = [0.3, -1.1, 2.0, 0.5];
        let out = s.slice(&set(2, &pts)).unwrap();
        let Slicer::Polynomial {
            exponents, coeffs, ..
        } = &s
        else {
            unreachable!()
        };
        for i in 0..2 {
            for l in 0..4 {
                let direct: f64 = exponents
                    .iter()
                    .enumerate()
                    .map(|(k, e)| {
                        coeffs.data()[k * 4 + l]
                            * pts[2 * i].powi(e[0] as i32)
                            * pts[2 * i + 1].powi(e[1] as i32)
                    })
                    .sum();
                assert!((out.data()[i * 4 + l] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_init_columns_are_unit() {
        let s = Slicer::init(&SlicerKind::Linear, 5, 7, 1).unwrap();
        let Slicer::Linear { theta } = &s else {
            unreachable!()
        };
        for c in 0..7 {
            let n: f64 = (0..5).map(|r| theta.data()[r * 7 + c].powi(2)).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn init_is_deterministic() {
        for kind in [
            SlicerKind::Linear,
            SlicerKind::Polynomial { degree: 2 },
            SlicerKind::Mlp { hidden: vec![8] },
        ] {
            assert_eq!(
                Slicer::init(&kind, 3, 4, 42).unwrap(),
                Slicer::init(&kind, 3, 4, 42).unwrap()
            );
        }
    }

    #[test]
    fn scalar_sphere_is_plus_minus_one() {
        let mut seen = [false, false];
        for seed in 0..32 {
            let Slicer::Linear { theta } = Slicer::init(&SlicerKind::Linear, 1, 1, seed).unwrap()
            else {
                unreachable!()
            };
            let v = theta.data()[0];
            assert!(v == 1.0 || v == -1.0);
            seen[(v > 0.0) as usize] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn projection_normalizes_and_is_idempotent() {
        let mut rng = seeded_rng(0);
        let mut s = Slicer::linear(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap()).unwrap();
        s.project_constraints(&mut rng);
        assert_eq!(s.params()[0].data(), &[0.6, 0.8]);
        let before = s.clone();
        s.project_constraints(&mut rng);
        assert_eq!(s, before);
    }

    #[test]
    fn zero_column_is_redrawn() {
        let mut rng = seeded_rng(0);
        let mut s =
            Slicer::linear(Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.project_constraints(&mut rng), 1);
        let t = s.params()[0].data().to_vec();
        assert!(((t[0] * t[0] + t[2] * t[2]).sqrt() - 1.0).abs() < 1e-14);
        assert_eq!((t[1], t[3]), (1.0, 0.0));
    }

    #[test]
    fn mlp_projection_is_noop() {
        let mut s = Slicer::init(&SlicerKind::Mlp { hidden: vec![4] }, 2, 3, 5).unwrap();
        let before = s.clone();
        assert_eq!(s.project_constraints(&mut seeded_rng(1)), 0);
        assert_eq!(s, before);
    }

    #[test]
    fn dimension_mismatch() {
        let s = Slicer::init(&SlicerKind::Linear, 3, 2, 0).unwrap();
        assert!(matches!(
            s.slice(&set(2, &[1.0, 2.0])),
            Err(Error::Dimension {
                expected: 3,
                got: 2,
                ..
            })
        ));
    }

    #[test]
    fn linear_matches_dot_products() {
        let s = Slicer::init(&SlicerKind::Linear, 3, 5, 11).unwrap();
        let pts = [0.1, 0.2, 0.3, -1.0, 4.0, 2.5];
        let out = s.slice(&set(3, &pts)).unwrap();
        let theta = s.params()[0].data().to_vec();
        for i in 0..2 {
            for l in 0..5 {
                let dot: f64 = (0..3).map(|j| pts[i * 3 + j] * theta[j * 5 + l]).sum();
                assert!((out.data()[i * 5 + l] - dot).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kind_round_trips() {
        let kinds = [
            SlicerKind::Linear,
            SlicerKind::Polynomial { degree: 3 },
            SlicerKind::Mlp {
                hidden: vec![16, 8],
            },
        ];
        for k in kinds {
            assert_eq!(Slicer::init(&k, 2, 3, 0).unwrap().kind(), k);
        }
    }
}
