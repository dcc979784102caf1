//! Central finite-difference oracle shared by the gradient suites.
#![allow(dead_code)]

use gswe::nn::{seeded_rng, Parameters};
use gswe::pool::ModelVars;
use gswe::{Model, PointSet, Tape, Tensor, Var};
use rand::Rng;

const STEP: f64 = 1e-6;

/// Largest norm-wise relative error between the tape gradient and central
/// differences over every input tensor.
pub fn grad_error(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars);
    let grads = tape.backward(root).unwrap();

    let eval = |ins: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone())).collect();
        let r = f(&mut t, &vs);
        t.value(r).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        let mut fd = vec![0.0; input.len()];
        for i in 0..input.len() {
            let bump = |delta: f64| {
                let mut ins = inputs.to_vec();
                let mut data = ins[k].data().to_vec();
                data[i] += delta;
                ins[k] = Tensor::new(input.shape().to_vec(), data).unwrap();
                eval(&ins)
            };
            fd[i] = (bump(STEP) - bump(-STEP)) / (2.0 * STEP);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .data()
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        // Exactly cancelling parameters (e.g. a slicer output bias, shared by
        // set and reference) leave only rounding noise in the difference.
        worst = worst.max(diff / scale.max(1e-6));
    }
    worst
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Random cotangent weights so every output entry matters differently.
pub fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x).to_vec();
    let w = uniform(&mut seeded_rng(seed), &shape, -1.0, 1.0);
    let w = tape.leaf(w);
    let p = tape.mul(x, w).unwrap();
    tape.sum(p).unwrap()
}

/// Worst relative error of every tape primitive over a few random trials
/// with inputs in `[-2, 2]` (positive where the primitive needs it).
pub fn primitive_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut out: Vec<(&'static str, f64)> = Vec::new();
    let mut rng = seeded_rng(seed);
    for trial in 0..5u64 {
        let s = trial;
        let a = uniform(&mut rng, &[3, 4], -2.0, 2.0);
        let b = uniform(&mut rng, &[3, 4], -2.0, 2.0);
        let pos = uniform(&mut rng, &[3, 4], 0.5, 2.0);
        let m = uniform(&mut rng, &[4, 2], -2.0, 2.0);
        let row = uniform(&mut rng, &[4], -2.0, 2.0);

        type Case = (
            &'static str,
            Vec<Tensor>,
            Box<dyn Fn(&mut Tape, &[Var]) -> Var>,
        );
        let cases: Vec<Case> = vec![
            (
                "add",
                vec![a.clone(), b.clone()],
                Box::new(move |t, v| {
                    let y = t.add(v[0], v[1]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "sub",
                vec![a.clone(), b.clone()],
                Box::new(move |t, v| {
                    let y = t.sub(v[0], v[1]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "mul",
                vec![a.clone(), b.clone()],
                Box::new(move |t, v| {
                    let y = t.mul(v[0], v[1]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "div",
                vec![a.clone(), pos.clone()],
                Box::new(move |t, v| {
                    let y = t.div(v[0], v[1]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "neg",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.neg(v[0]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "scale",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.scale(v[0], -1.7).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "relu",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.relu(v[0]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "exp",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.exp(v[0]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "log",
                vec![pos.clone()],
                Box::new(move |t, v| {
                    let y = t.log(v[0]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "abs",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.abs(v[0]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "pow",
                vec![pos.clone()],
                Box::new(move |t, v| {
                    let y = t.pow(v[0], 2.5).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "pow_int",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.pow(v[0], 3.0).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "matmul",
                vec![a.clone(), m.clone()],
                Box::new(move |t, v| {
                    let y = t.matmul(v[0], v[1]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "transpose",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.transpose(v[0]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "sum",
                vec![a.clone()],
                Box::new(|t, v| {
                    let y = t.exp(v[0]).unwrap();
                    t.sum(y).unwrap()
                }),
            ),
            (
                "mean",
                vec![a.clone()],
                Box::new(|t, v| {
                    let y = t.exp(v[0]).unwrap();
                    t.mean(y).unwrap()
                }),
            ),
            (
                "sum_rows",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.sum_rows(v[0]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "gather",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.gather(v[0], vec![5, 0, 11, 5, 3], vec![5]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "weighted_gather",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t
                        .weighted_gather(
                            v[0],
                            vec![(0, 1, 0.25), (0, 2, 0.75), (1, 7, 1.0), (2, 7, -0.5)],
                            vec![3],
                        )
                        .unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "concat",
                vec![a.clone(), b.clone()],
                Box::new(move |t, v| {
                    let y = t.concat(&[v[0], v[1]]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "broadcast",
                vec![row.clone()],
                Box::new(move |t, v| {
                    let y = t.broadcast(v[0], vec![3, 4]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
            (
                "reshape",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let y = t.reshape(v[0], vec![2, 6]).unwrap();
                    weighted_sum(t, y, s)
                }),
            ),
        ];
        for (name, inputs, f) in cases {
            let err = grad_error(&inputs, f);
            match out.iter_mut().find(|(n, _)| *n == name) {
                Some(entry) => entry.1 = entry.1.max(err),
                None => out.push((name, err)),
            }
        }
    }
    out
}

/// `‖embed(Z)‖²` as a function of the model's own parameter tensors.
pub fn embed_norm_error(model: &Model, set: &PointSet) -> f64 {
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let spec = model.spec();
    grad_error(&params, |tape, vars| {
        let m = Model::from_spec(&spec, params.clone()).unwrap();
        // Rebind against the supplied leaves rather than fresh ones.
        let mv = ModelVars::from_all(&m, vars.to_vec());
        let (x, sizes) = m.stack_sets(tape, &[set]).unwrap();
        let e = m.embed_on_tape(tape, &mv, x, &sizes).unwrap();
        let sq = tape.mul(e, e).unwrap();
        tape.sum(sq).unwrap()
    })
}
