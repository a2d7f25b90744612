use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;
use specxplain::audio::MEL_IMAGE_HEIGHT;
use specxplain::dataset::{
    class_histogram, load_manifest, save_histogram_csv, save_histogram_png, stratified_split,
    ImageSet, Label, Manifest, Record,
};
use specxplain::model::{
    evaluate as score, fit, load_checkpoint, save_checkpoint, Architecture, TrainingMetadata,
};
use specxplain::plot::{line_chart, Series, BLUE, ORANGE};
use specxplain::{CnnModel, Rng};

use super::{prepare_out, write_json};
use crate::config::RunConfig;
use crate::{EvaluateArgs, TrainArgs};

fn load_images(manifest: &Manifest, what: &str) -> Result<ImageSet> {
    let set =
        ImageSet::from_manifest(manifest).with_context(|| format!("loading {what} images"))?;
    let width = set.width().context("empty image set")?;
    if let Some(bad) = set.images.iter().position(|i| i.width() != width) {
        bail!(
            "{} is {} columns wide but the first image is {width}; preprocess with one target width",
            manifest.records[bad].path.display(),
            set.images[bad].width()
        );
    }
    Ok(set)
}

/// Absolute paths, so the split manifests resolve from any directory.
fn absolute(manifest: &Manifest) -> Result<Manifest> {
    let records = manifest
        .records
        .iter()
        .map(|r| {
            let path = std::fs::canonicalize(&r.path)
                .with_context(|| format!("resolving {}", r.path.display()))?;
            Ok(Record {
                path,
                label: r.label,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Manifest::new(records))
}

fn plot(path: &Path, title: &str, y_label: &str, train: &[f64], val: &[f64]) -> Result<()> {
    let series = [
        Series {
            name: "train",
            values: train,
            color: BLUE,
        },
        Series {
            name: "test",
            values: val,
            color: ORANGE,
        },
    ];
    line_chart(title, "epoch", y_label, &series)?.save_png(path)?;
    Ok(())
}

pub fn run(args: &TrainArgs, config: &RunConfig) -> Result<()> {
    let out = config.out_dir(args.out.as_deref());
    let manifest = load_manifest(&args.manifest)?;
    let (train, test) = stratified_split(&manifest, config.split.test_fraction, config.seed)?;
    let (train, test) = (absolute(&train)?, absolute(&test)?);
    prepare_out(&out, config)?;
    train.save(&out.join("train_manifest.csv"))?;
    test.save(&out.join("test_manifest.csv"))?;
    for (name, part) in [("train", &train), ("test", &test)] {
        let counts = class_histogram(part);
        save_histogram_csv(&counts, &out.join(format!("{name}_histogram.csv")))?;
        save_histogram_png(
            &counts,
            &format!("{name} set"),
            &out.join(format!("{name}_histogram.png")),
        )?;
    }

    let train_set = load_images(&train, "training")?;
    let test_set = load_images(&test, "test")?;
    let width = train_set.width().context("empty training set")?;
    if test_set.width() != Some(width) {
        bail!("training and test images differ in width");
    }
    log::info!(
        "training on {} images, testing on {} ({}x{width})",
        train_set.images.len(),
        test_set.images.len(),
        MEL_IMAGE_HEIGHT
    );

    let arch = Architecture::for_input(MEL_IMAGE_HEIGHT, width, config.train.dropout_rate);
    let mut model = arch.build(&mut Rng::seeded(config.seed))?;
    let history = fit(&mut model, &train_set, &test_set, &config.train)?;
    let eval = score(&model, &test_set)?;
    log::info!(
        "best epoch {} of {}: test accuracy {:.4}, loss {:.4}",
        history.best_epoch,
        history.epochs.len(),
        eval.accuracy,
        eval.loss
    );

    let mut metadata = TrainingMetadata {
        epoch: Some(history.best_epoch),
        ..Default::default()
    };
    metadata
        .metrics
        .insert("test_accuracy".into(), eval.accuracy);
    metadata.metrics.insert("test_loss".into(), eval.loss);
    metadata.metrics.insert("seed".into(), config.seed as f64);
    save_checkpoint(&model, &metadata, &out.join("model.ckpt"))?;
    history.save_csv(&out.join("history.csv"))?;

    let column = |f: fn(&specxplain::model::EpochRecord) -> f64| {
        history.epochs.iter().map(f).collect::<Vec<_>>()
    };
    plot(
        &out.join("loss.png"),
        "Loss vs. epochs",
        "loss",
        &column(|e| e.train_loss),
        &column(|e| e.val_loss),
    )?;
    plot(
        &out.join("accuracy.png"),
        "Accuracy vs. epochs",
        "accuracy",
        &column(|e| e.train_acc),
        &column(|e| e.val_acc),
    )?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "best_epoch": history.best_epoch,
            "epochs_run": history.epochs.len(),
            "stopped_early": history.stopped_early,
            "test_accuracy": eval.accuracy,
            "test_loss": eval.loss,
            "confusion": eval.confusion,
            "param_count": model.param_count(),
        }),
    )?;
    Ok(())
}

/// Loads a checkpoint and checks it holds the spectrogram CNN.
pub fn load_model(path: &Path) -> Result<CnnModel> {
    let checkpoint =
        load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let width = checkpoint.model.input_shape()[1];
    let arch = Architecture::for_input(MEL_IMAGE_HEIGHT, width, dropout_of(&checkpoint.model));
    let expected = arch.build(&mut Rng::seeded(0))?;
    checkpoint
        .expect_architecture(&expected.specs(), expected.input_shape())
        .with_context(|| format!("{} is not a spectrogram classifier", path.display()))?;
    Ok(checkpoint.model)
}

fn dropout_of(model: &CnnModel) -> f64 {
    model
        .layers()
        .iter()
        .find_map(|l| match l {
            specxplain::model::Layer::Dropout { rate } => Some(*rate),
            _ => None,
        })
        .unwrap_or(0.0)
}

pub fn evaluate(args: &EvaluateArgs, config: &RunConfig) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    let set = load_images(&manifest, "evaluation")?;
    let width = model.input_shape()[1];
    if set.width() != Some(width) {
        return Err(specxplain::Error::ArchitectureMismatch(format!(
            "model expects {width}-column images, manifest images have {:?}",
            set.width()
        ))
        .into());
    }
    let eval = score(&model, &set)?;
    let counts = class_histogram(&manifest);
    let report = json!({
        "checkpoint": args.checkpoint,
        "manifest": args.manifest,
        "samples": set.images.len(),
        "class_counts": {
            Label::Covid.as_str(): counts[0],
            Label::NonCovid.as_str(): counts[1],
        },
        "accuracy": eval.accuracy,
        "loss": eval.loss,
        "confusion": eval.confusion,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &args.out {
        prepare_out(out, config)?;
        write_json(&out.join("evaluation.json"), &report)?;
    }
    Ok(())
}
