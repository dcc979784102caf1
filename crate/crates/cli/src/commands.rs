use std::fs;
use std::path::{Path, PathBuf};

use gswe::data_io::{
    gen_set_circles, load_checkpoint, load_pointsets, save_checkpoint, save_pointsets,
    write_embeddings, Checkpoint, EmbeddingHeader, SetCirclesConfig,
};
use gswe::eval::{config_hash, kfold_classify, nn_accuracy, results_csv, CvConfig, ResultRow};
use gswe::gswdist::{gsw, max_gsw, sliced_gsw, GswConfig};
use gswe::nn::Parameters;
use gswe::{pairwise_embed_distance, Model, PointSet, SetDataset, Slicer, SlicerKind, Split};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{DistanceArgs, EmbedArgs, EvalCvArgs, EvalNnArgs, Failure, GenArgs, Task, TrainArgs};

type Result<T> = std::result::Result<T, Failure>;

/// Writes through a hidden sibling file and renames it into place, so a
/// failed run never leaves a partial artifact behind.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Failure::usage(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    let result = write(&tmp).and_then(|()| {
        fs::rename(&tmp, path)
            .map_err(|e| Failure::data(format!("cannot move output to {}: {e}", path.display())))
    });
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |tmp| {
        fs::write(tmp, text)
            .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_data(path: &Path) -> Result<SetDataset> {
    Ok(load_pointsets(path)?)
}

fn labels_of(sets: &[PointSet], what: &str) -> Result<Vec<usize>> {
    sets.iter()
        .enumerate()
        .map(|(i, s)| {
            s.label()
                .ok_or_else(|| Failure::data(format!("{what} set {i} has no label")))
        })
        .collect()
}

pub fn gen(args: GenArgs) -> Result<()> {
    if args.out.exists() && !args.force {
        return Err(Failure::usage(format!(
            "{} already exists; pass --force to overwrite",
            args.out.display()
        )));
    }
    let ds = match args.task {
        Task::SetCircles => gen_set_circles(&SetCirclesConfig {
            n_train: args.n_train,
            n_test: args.n_test,
            radii: args.radii,
            noise: args.noise,
            size_range: args.sizes,
            seed: args.seed,
        })?,
    };
    write_atomic(&args.out, |tmp| Ok(save_pointsets(&ds, tmp)?))?;

    let train = ds.split(Split::Train);
    let counts = ds.class_counts();
    println!("wrote {}", args.out.display());
    println!(
        "sets: {} (train {}, test {})",
        ds.len(),
        train.len(),
        ds.len() - train.len()
    );
    println!(
        "mean size: {:.2} (train {:.2})",
        ds.mean_size(),
        train.mean_size()
    );
    let balance: Vec<String> = counts
        .iter()
        .enumerate()
        .map(|(c, n)| {
            format!(
                "{c}: {n} ({:.1}%)",
                100.0 * *n as f64 / ds.len().max(1) as f64
            )
        })
        .collect();
    println!("class balance: {}", balance.join(", "));
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    args.model.apply(&mut cfg.model);
    args.train.apply(&mut cfg);

    let ds = load_data(&args.data)?;
    let train_sets = ds.split(Split::Train);
    if train_sets.is_empty() {
        return Err(Failure::data(format!(
            "{} has no training sets",
            args.data.display()
        )));
    }
    let mut model = Model::init(&cfg.model, ds.dim(), train_sets.sets())?;
    let report = gswe::ssl::train(train_sets.sets(), &mut model, &cfg.train)?;

    let config_json = serde_json::to_value(&cfg).expect("serializable config");
    let ckpt = Checkpoint {
        model,
        provenance: json!({
            "seed": cfg.train.seed,
            "config": config_json,
            "data_sha256": sha256_file(&args.data)?,
        }),
    };
    let loss_path = args.loss_csv.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    write_atomic(&args.out, |tmp| Ok(save_checkpoint(&ckpt, tmp)?))?;
    let csv = format!("# config: {config_json}\n{}", report.to_csv());
    write_text(&loss_path, &csv)?;

    println!("wrote {} and {}", args.out.display(), loss_path.display());
    match (report.epoch_loss.first(), report.epoch_loss.last()) {
        (Some(first), Some(last)) => println!(
            "{} epochs, {} steps, mean loss {first:.6} -> {last:.6}",
            report.epoch_loss.len(),
            report.steps
        ),
        _ => println!("0 epochs: checkpoint holds the initialization"),
    }
    Ok(())
}

pub fn embed(args: EmbedArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let ds = load_data(&args.data)?;
    let model = &ckpt.model;
    let rows: Vec<Vec<f64>> = model
        .embed_all(ds.sets())?
        .into_iter()
        .map(|e| e.values)
        .collect();
    let header = EmbeddingHeader {
        num_refs: model.bank.num_refs(),
        num_slices: model.slicer.num_slices(),
        ref_size: model.bank.ref_size(),
        p: model.p,
        seed: ckpt.provenance["seed"].as_u64().unwrap_or(0),
        rows: rows.len(),
        cols: model.embedding_len(),
        labels: ds.sets().iter().map(PointSet::label).collect(),
        config: ckpt.provenance["config"].clone(),
    };
    write_atomic(&args.out, |tmp| Ok(write_embeddings(&header, &rows, tmp)?))?;
    println!(
        "wrote {} embeddings of length {} to {}",
        header.rows,
        header.cols,
        args.out.display()
    );
    Ok(())
}

fn pick(path: &Path, index: usize) -> Result<PointSet> {
    let ds = load_data(path)?;
    let n = ds.len();
    ds.sets().get(index).cloned().ok_or_else(|| {
        Failure::usage(format!(
            "{} has {n} sets; index {index} is out of range",
            path.display()
        ))
    })
}

pub fn distance(args: DistanceArgs) -> Result<()> {
    let a = pick(&args.set_a, args.index_a)?;
    let b = pick(&args.set_b, args.index_b)?;
    let mut gcfg = GswConfig {
        p: args.p,
        num_slices: args.slices,
        seed: args.seed,
        max_gsw_steps: args.steps,
        max_gsw_lr: args.max_lr,
    };
    let (fa, fb, kind) = match &args.ckpt {
        Some(path) => {
            let model = load_checkpoint(path)?.model;
            gcfg.p = model.p;
            let (fa, fb) = (model.set_features(&a)?, model.set_features(&b)?);
            println!("gsw {}", gsw(&fa, &fb, &model.slicer, model.p)?);
            let (ea, eb) = (model.embed(&a)?, model.embed(&b)?);
            println!(
                "embedding_distance {}",
                pairwise_embed_distance(&ea, &eb, model.p)?
            );
            (fa, fb, model.slicer.kind())
        }
        None => {
            println!(
                "gsw {}",
                sliced_gsw(&a, &b, &SlicerKind::Linear, &gcfg)?.value
            );
            (a, b, SlicerKind::Linear)
        }
    };
    if args.max_gsw {
        let (value, slicer) = max_gsw(&fa, &fb, &kind, &gcfg)?;
        println!("max_gsw {value}");
        if let Slicer::Linear { .. } = slicer {
            let theta: Vec<String> = slicer.params()[0]
                .data()
                .iter()
                .map(f64::to_string)
                .collect();
            println!("theta {}", theta.join(","));
        }
    }
    Ok(())
}

fn provenance_seed(ckpt: &Checkpoint) -> u64 {
    ckpt.provenance["seed"].as_u64().unwrap_or(0)
}

pub fn eval_nn(args: EvalNnArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let (gallery, queries) = match &args.test {
        Some(test) => (load_data(&args.train)?, load_data(test)?),
        None => {
            let ds = load_data(&args.train)?;
            (ds.split(Split::Train), ds.split(Split::Test))
        }
    };
    if gallery.is_empty() || queries.is_empty() {
        return Err(Failure::data(
            "need at least one gallery set and one query set",
        ));
    }
    let embed = |ds: &SetDataset| -> Result<Vec<Vec<f64>>> {
        Ok(ckpt
            .model
            .embed_all(ds.sets())?
            .into_iter()
            .map(|e| e.values)
            .collect())
    };
    let acc = nn_accuracy(
        &embed(&gallery)?,
        &labels_of(gallery.sets(), "gallery")?,
        &embed(&queries)?,
        &labels_of(queries.sets(), "query")?,
        ckpt.model.p,
    )?;
    println!("nn_accuracy {acc}");
    if let Some(out) = &args.out {
        let config = &ckpt.provenance["config"];
        let rows = [ResultRow {
            config_hash: config_hash(config),
            seed: provenance_seed(&ckpt),
            metric: "nn_accuracy".into(),
            value: acc,
        }];
        write_text(out, &format!("# config: {config}\n{}", results_csv(&rows)))?;
    }
    Ok(())
}

pub fn eval_cv(args: EvalCvArgs) -> Result<()> {
    let mut run = RunConfig::load(args.config.as_deref())?;
    args.model.apply(&mut run.model);
    run.model.seed = args.seed;
    let cv = CvConfig {
        k: args.k,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        hidden: args.hidden,
        seed: args.seed,
    };
    let ds = load_data(&args.data)?;
    let report = kfold_classify(&ds, &run.model, &cv)?;
    println!("cv_accuracy {:.4} ± {:.4}", report.mean, report.std);
    for (i, a) in report.fold_accuracy.iter().enumerate() {
        println!("fold {i} {a}");
    }
    if let Some(out) = &args.out {
        let config = json!({"model": run.model, "cv": cv});
        let hash = config_hash(&config);
        let mut rows = vec![
            ResultRow {
                config_hash: hash.clone(),
                seed: args.seed,
                metric: "cv_accuracy_mean".into(),
                value: report.mean,
            },
            ResultRow {
                config_hash: hash.clone(),
                seed: args.seed,
                metric: "cv_accuracy_std".into(),
                value: report.std,
            },
        ];
        rows.extend(
            report
                .fold_accuracy
                .iter()
                .enumerate()
                .map(|(i, &a)| ResultRow {
                    config_hash: hash.clone(),
                    seed: args.seed,
                    metric: format!("fold_{i}_accuracy"),
                    value: a,
                }),
        );
        write_text(out, &format!("# config: {config}\n{}", results_csv(&rows)))?;
    }
    Ok(())
}
