//! Frozen-embedding retrieval and cross-validated classification.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_io::{PointSet, SetDataset};
use crate::diffgraph::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Adam, AdamConfig, Mlp, Parameters};
use crate::pool::{lp_distance, Model, ModelConfig};

/// Index of the nearest row of `train` to `query` under `ℓ_p`; ties go to
/// the lowest index.
pub fn nearest(train: &[Vec<f64>], query: &[f64], p: f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, row) in train.iter().enumerate() {
        let d = lp_distance(row, query, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Fraction of test rows whose nearest training row carries the same label.
pub fn nn_accuracy(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
    p: f64,
) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::config(
            "evalharness",
            "train and test embeddings must be non-empty",
        ));
    }
    if train.len() != train_labels.len() || test.len() != test_labels.len() {
        return Err(Error::config(
            "evalharness",
            "one label per embedding is required",
        ));
    }
    if p.is_nan() || p < 1.0 {
        return Err(Error::config(
            "evalharness",
            format!("order p = {p} must be >= 1"),
        ));
    }
    let width = train[0].len();
    if let Some(bad) = train.iter().chain(test).find(|r| r.len() != width) {
        return Err(Error::Dimension {
            module: "evalharness",
            expected: width,
            got: bad.len(),
        });
    }
    let hits = test
        .iter()
        .zip(test_labels)
        .filter(|(q, &y)| train_labels[nearest(train, q, p)] == y)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

/// Stratified fold assignment: within each class the members are shuffled
/// and dealt round-robin, continuing where the previous class stopped so
/// fold sizes stay balanced. Returns the fold of every item.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config(
            "evalharness",
            format!("need k >= 2 folds, got {k}"),
        ));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some((c, members)) = by_class
        .iter()
        .enumerate()
        .find(|(_, m)| !m.is_empty() && m.len() < k)
    {
        return Err(Error::config(
            "evalharness",
            format!(
                "class {c} has {} members, fewer than k = {k} folds",
                members.len()
            ),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 5,
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            hidden: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
}

impl CvReport {
    fn from_folds(fold_accuracy: Vec<f64>) -> Self {
        let n = fold_accuracy.len() as f64;
        let mean = fold_accuracy.iter().sum::<f64>() / n;
        let std = if fold_accuracy.len() > 1 {
            (fold_accuracy
                .iter()
                .map(|a| (a - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        } else {
            0.0
        };
        Self {
            fold_accuracy,
            mean,
            std,
        }
    }
}

/// Mean softmax cross-entropy of `[B, C]` logits.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::config(
            "evalharness",
            format!("logits {shape:?} do not match {} labels", labels.len()),
        ));
    }
    let (b, c) = (shape[0], shape[1]);
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::config(
            "evalharness",
            format!("label {y} out of range for {c} classes"),
        ));
    }
    let lv = tape.value(logits).data().to_vec();
    let shift: Vec<f64> = lv
        .chunks_exact(c)
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let shift = tape.leaf(Tensor::matrix(b, 1, shift)?);
    let shift = tape.broadcast(shift, vec![b, c])?;
    let centered = tape.sub(logits, shift)?;
    let e = tape.exp(centered)?;
    let s = tape.sum_rows(e)?;
    let lse = tape.log(s)?;
    let picked = tape.gather(
        centered,
        labels.iter().enumerate().map(|(i, &y)| i * c + y).collect(),
        vec![b],
    )?;
    let per = tape.sub(lse, picked)?;
    Ok(tape.mean(per)?)
}

fn argmax_rows(values: &[f64], c: usize) -> Vec<usize> {
    values
        .chunks_exact(c)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                    if v > best.1 {
                        (j, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

fn check_labels(labels: &[Option<usize>]) -> Result<Vec<usize>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Data(format!("set {i} has no label"))))
        .collect()
}

/// Set classifier: GSWE pooling followed by a one-hidden-layer ReLU head.
#[derive(Debug, Clone)]
pub struct SetClassifier {
    pub model: Model,
    pub head: Mlp,
}

impl SetClassifier {
    pub fn new(model: Model, hidden: usize, n_classes: usize, seed: u64) -> Self {
        let head = Mlp::new(
            &[model.embedding_len(), hidden, n_classes],
            &mut seeded_rng(seed),
        );
        Self { model, head }
    }

    fn logits(&self, tape: &mut Tape, sets: &[&PointSet]) -> Result<(Var, Vec<Var>)> {
        let mv = self.model.bind(tape);
        let hv = self.head.bind(tape);
        let (x, sizes) = self.model.stack_sets(tape, sets)?;
        let e = self.model.embed_on_tape(tape, &mv, x, &sizes)?;
        let out = self.head.forward(tape, &hv, e)?;
        Ok((out, [mv.all(), hv].concat()))
    }

    pub fn predict(&self, sets: &[PointSet]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(sets.len());
        for chunk in sets.chunks(256) {
            let mut tape = Tape::new();
            let refs: Vec<&PointSet> = chunk.iter().collect();
            let (logits, _) = self.logits(&mut tape, &refs)?;
            out.extend(argmax_rows(
                tape.value(logits).data(),
                self.head.output_dim(),
            ));
        }
        Ok(out)
    }

    /// End-to-end cross-entropy training of pooling parameters and head.
    pub fn fit(&mut self, sets: &[PointSet], labels: &[usize], cfg: &CvConfig) -> Result<Vec<f64>> {
        let mut rng = seeded_rng(cfg.seed);
        let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
        let mut order: Vec<usize> = (0..sets.len()).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let batches: Vec<&[usize]> = order.chunks(cfg.batch_size.max(1)).collect();
            for (bi, idx) in batches.iter().enumerate() {
                let mut tape = Tape::new();
                let batch: Vec<&PointSet> = idx.iter().map(|&i| &sets[i]).collect();
                let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let (logits, vars) = self.logits(&mut tape, &batch)?;
                let loss = cross_entropy(&mut tape, logits, &ys)?;
                let value = tape.value(loss).data()[0];
                let grads = tape.backward(loss).map_err(|e| {
                    Error::numerical("evalharness", format!("epoch {epoch}, batch {bi}: {e}"))
                })?;
                let g: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
                let mut params = self.model.params_mut();
                params.extend(self.head.params_mut());
                opt.step(params, &g);
                self.model.project_constraints(&mut rng);
                total += value;
            }
            curve.push(total / batches.len() as f64);
        }
        Ok(curve)
    }
}

/// Stratified k-fold accuracy of a freshly initialized [`SetClassifier`]
/// trained end-to-end on each fold's training part.
pub fn kfold_classify(
    ds: &SetDataset,
    model_cfg: &ModelConfig,
    cfg: &CvConfig,
) -> Result<CvReport> {
    let labels = check_labels(&ds.sets().iter().map(PointSet::label).collect::<Vec<_>>())?;
    let folds = stratified_folds(&labels, cfg.k, cfg.seed)?;
    let n_classes = ds.n_classes().max(1);
    let mut acc = Vec::with_capacity(cfg.k);
    for fold in 0..cfg.k {
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for (i, s) in ds.sets().iter().enumerate() {
            if folds[i] == fold {
                te.push(s.clone())
            } else {
                tr.push(s.clone())
            }
        }
        let tr_labels: Vec<usize> = tr.iter().map(|s| s.label().unwrap()).collect();
        let model = Model::init(model_cfg, ds.dim(), &tr)?;
        let mut clf = SetClassifier::new(model, cfg.hidden, n_classes, cfg.seed ^ 0x5eed);
        clf.fit(&tr, &tr_labels, cfg)?;
        let pred = clf.predict(&te)?;
        let hits = pred
            .iter()
            .zip(&te)
            .filter(|(p, s)| Some(**p) == s.label())
            .count();
        acc.push(hits as f64 / te.len() as f64);
    }
    Ok(CvReport::from_folds(acc))
}

/// Stratified k-fold accuracy of the head alone on fixed feature vectors.
pub fn kfold_classify_features(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &CvConfig,
) -> Result<CvReport> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::config(
            "evalharness",
            "need one label per non-empty feature row",
        ));
    }
    let width = features[0].len();
    let folds = stratified_folds(labels, cfg.k, cfg.seed)?;
    let mut acc = Vec::with_capacity(cfg.k);
    for fold in 0..cfg.k {
        let tr: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != fold).collect();
        let te: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == fold).collect();
        let mut head = Mlp::new(
            &[width, cfg.hidden, n_classes.max(1)],
            &mut seeded_rng(cfg.seed ^ 0x5eed),
        );
        let mut rng = seeded_rng(cfg.seed);
        let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
        let mut order = tr.clone();
        let rows = |idx: &[usize]| -> Result<Tensor> {
            Ok(Tensor::matrix(
                idx.len(),
                width,
                idx.iter().flat_map(|&i| features[i].clone()).collect(),
            )?)
        };
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(cfg.batch_size.max(1)) {
                let mut tape = Tape::new();
                let vars = head.bind(&mut tape);
                let x = tape.leaf(rows(idx)?);
                let logits = head.forward(&mut tape, &vars, x)?;
                let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let loss = cross_entropy(&mut tape, logits, &ys)?;
                let grads = tape.backward(loss)?;
                let g: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
                opt.step(head.params_mut(), &g);
            }
        }
        let mut tape = Tape::new();
        let vars = head.bind(&mut tape);
        let x = tape.leaf(rows(&te)?);
        let logits = head.forward(&mut tape, &vars, x)?;
        let pred = argmax_rows(tape.value(logits).data(), n_classes.max(1));
        let hits = pred
            .iter()
            .zip(&te)
            .filter(|(p, &i)| **p == labels[i])
            .count();
        acc.push(hits as f64 / te.len() as f64);
    }
    Ok(CvReport::from_folds(acc))
}

/// 64-bit FNV-1a of the JSON form of a config, as hex.
pub fn config_hash(cfg: &impl Serialize) -> String {
    let json = serde_json::to_string(cfg).expect("serializable config");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    format!("{h:016x}")
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// `config_hash,seed,metric,value` CSV.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("config_hash,seed,metric,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.config_hash, r.seed, r.metric, r.value
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_retrieve_themselves() {
        let x = vec![vec![0.0, 1.0], vec![2.0, 0.5], vec![-1.0, 3.0]];
        let y = vec![0, 1, 1];
        assert_eq!(nn_accuracy(&x, &y, &x, &y, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn single_train_point_predicts_its_label() {
        let train = vec![vec![0.0]];
        let test = vec![vec![5.0], vec![-3.0], vec![0.1]];
        assert_eq!(
            nn_accuracy(&train, &[1], &test, &[1, 0, 1], 2.0).unwrap(),
            2.0 / 3.0
        );
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let train = vec![vec![1.0], vec![-1.0]];
        assert_eq!(nearest(&train, &[0.0], 2.0), 0);
        assert!(nn_accuracy(&train, &[0, 1], &[vec![0.0, 1.0]], &[0], 2.0).is_err());
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..53).map(|i| usize::from(i % 3 == 0)).collect();
        let folds = stratified_folds(&labels, 5, 9).unwrap();
        assert_eq!(folds, stratified_folds(&labels, 5, 9).unwrap());
        let total_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        for f in 0..5 {
            let members: Vec<usize> = (0..53).filter(|&i| folds[i] == f).collect();
            let pos = members.iter().filter(|&&i| labels[i] == 1).count() as f64;
            let expected = total_pos * members.len() as f64 / 53.0;
            assert!(
                (pos - expected).abs() <= 1.0,
                "fold {f}: {pos} vs {expected}"
            );
        }
        assert!(stratified_folds(&[0, 0, 1], 2, 0).is_err());
        assert!(stratified_folds(&[0, 0, 0], 1, 0).is_err());
    }

    #[test]
    fn cross_entropy_matches_direct() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0]).unwrap());
        let l = cross_entropy(&mut tape, z, &[1, 0]).unwrap();
        let row = |r: [f64; 3], y: usize| r.iter().map(|v| v.exp()).sum::<f64>().ln() - r[y];
        let want = (row([1.0, 2.0, 0.5], 1) + row([-1.0, 0.0, 3.0], 0)) / 2.0;
        assert!((tape.value(l).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn separable_features_are_classified_perfectly() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let s = if c == 0 { -2.0 } else { 2.0 };
            x.push(vec![s + 0.01 * i as f64, s - 0.02 * i as f64]);
            y.push(c);
        }
        let cfg = CvConfig {
            epochs: 30,
            batch_size: 8,
            lr: 1e-2,
            ..Default::default()
        };
        let r = kfold_classify_features(&x, &y, 2, &cfg).unwrap();
        assert!(r.fold_accuracy.iter().all(|&a| a == 1.0), "{r:?}");
        let constant = kfold_classify_features(&x, &vec![0; 40], 1, &cfg).unwrap();
        assert_eq!(constant.mean, 1.0);
    }
}
