//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

#[allow(dead_code, unused_imports)]
#[path = "gradients.rs"]
mod gradients;
#[allow(dead_code, unused_imports)]
#[path = "training.rs"]
mod training;
#[allow(dead_code, unused_imports)]
#[path = "xai.rs"]
mod xai_oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use specxplain::audio::{
    augment_clip, hz_to_mel, load_wav, to_input_tensor, write_wav, AudioClip, AugmentationPlan,
};
use specxplain::dataset::{
    load_manifest, stratified_indices, stratified_split, synth_generate, ImageSet, Label, Manifest,
    Record, SyntheticSample, SyntheticSpec,
};
use specxplain::model::{
    evaluate, fit, glorot_limits, save_checkpoint, Architecture, Layer, TrainConfig,
    TrainingMetadata, CANONICAL_PARAM_COUNT,
};
use specxplain::xai::{
    gradcam, lime_explain, maximize_class, maximize_filter, save_raw_map, smoothgrad, AmParams,
    GradCamParams, LimeParams, ScoreKind, SmoothGradParams,
};
use specxplain::{build_cnn, CnnModel, Mode, Rng, Tensor};

const SEED: u64 = 7;
const EVAL_IMAGES: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Report {
    failures: usize,
}

impl Report {
    fn run(&mut self, id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| Outcome::new(false, format!("panicked: {}", panic_text(&e))));
        let elapsed = start.elapsed();
        if !outcome.pass {
            self.failures += 1;
        }
        println!(
            "[{}] {id:>2} {name}: {} ({:.1} s, budget {} s)",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

/// Runs oracle checks that signal failure by panicking.
fn checks(list: &[(&str, fn())]) -> Outcome {
    let mut failed = Vec::new();
    for (name, f) in list {
        if catch_unwind(*f).is_err() {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        Outcome::new(true, format!("{} checks", list.len()))
    } else {
        Outcome::new(false, format!("failed: {}", failed.join(", ")))
    }
}

struct Trained {
    model: CnnModel,
    samples: Vec<SyntheticSample>,
    test: Vec<usize>,
}

fn synthetic_split(
    spec: &SyntheticSpec,
    seed: u64,
) -> (Vec<SyntheticSample>, Vec<usize>, Vec<usize>) {
    let samples = synth_generate(spec, &mut Rng::seeded(seed)).unwrap();
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let (train, test) = stratified_indices(&labels, 0.2, seed).unwrap();
    (samples, train, test)
}

fn train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        seed: SEED,
        ..TrainConfig::default()
    }
}

fn train_synthetic(
    samples: &[SyntheticSample],
    train: &[usize],
    test: &[usize],
) -> (CnnModel, String, f64) {
    let set: ImageSet = samples.iter().cloned().collect();
    let (train_set, test_set) = (set.subset(train), set.subset(test));
    let spec = SyntheticSpec::default();
    let mut model = Architecture::for_input(spec.height, spec.width, 0.2)
        .build(&mut Rng::seeded(SEED))
        .unwrap();
    let history = fit(&mut model, &train_set, &test_set, &train_config()).unwrap();
    let mut csv = Vec::new();
    history.write_csv(&mut csv).unwrap();
    let acc = evaluate(&model, &test_set).unwrap().accuracy;
    (model, String::from_utf8(csv).unwrap(), acc)
}

fn criterion_training(slot: &mut Option<Trained>) -> Outcome {
    let spec = SyntheticSpec::default();
    let (samples, train, test) = synthetic_split(&spec, SEED);
    if (train.len(), test.len()) != (400, 100) {
        return Outcome::new(false, format!("split {}+{}", train.len(), test.len()));
    }
    let (model, csv, acc) = train_synthetic(&samples, &train, &test);
    let epochs = csv.lines().count() - 1;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(2)
        .build()
        .unwrap();
    let (_, csv_again, acc_again) = pool.install(|| train_synthetic(&samples, &train, &test));
    let repeat = csv == csv_again && acc == acc_again;
    let pass = acc >= 0.95 && epochs <= 20 && repeat;
    *slot = Some(Trained {
        model,
        samples,
        test,
    });
    Outcome::new(
        pass,
        format!(
            "test accuracy {:.3} after {epochs} epochs, rerun identical: {repeat}",
            acc
        ),
    )
}

/// Fraction of the top-decile map mass that falls inside the mask.
fn top_decile_fraction(values: &[f64], mask: &[u8]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let (mut inside, mut total) = (0.0, 0.0);
    for &i in &order[..values.len() / 10] {
        total += values[i];
        if mask[i] > 0 {
            inside += values[i];
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

fn criterion_gradcam_localization(trained: &Trained) -> Outcome {
    let mean_for = |score: ScoreKind| -> f64 {
        let params = GradCamParams {
            score,
            ..Default::default()
        };
        let total: f64 = trained.test[..EVAL_IMAGES]
            .iter()
            .map(|&i| {
                let s = &trained.samples[i];
                let x = to_input_tensor(&s.image, s.image.width()).unwrap();
                let map = gradcam(&trained.model, &x, s.label.index(), &params).unwrap();
                top_decile_fraction(&map.values, &s.mask)
            })
            .sum();
        total / EVAL_IMAGES as f64
    };
    let logit = mean_for(GradCamParams::default().score);
    let prob = mean_for(ScoreKind::Probability);
    Outcome::new(
        logit >= 0.6,
        format!("top-decile mass in patch {logit:.3} (default logit score; probability score {prob:.3})"),
    )
}

fn criterion_lime_localization(trained: &Trained) -> Outcome {
    let params = LimeParams {
        n_features: 3,
        n_samples: 150,
        ..Default::default()
    };
    let base = Rng::seeded(SEED).fork_base();
    let mut total = 0.0;
    for (k, &i) in trained.test[..EVAL_IMAGES].iter().enumerate() {
        let s = &trained.samples[i];
        let exp = lime_explain(
            &trained.model,
            &s.image,
            s.label.index(),
            &params,
            &mut Rng::stream(base, k),
        )
        .unwrap();
        let (mut inter, mut union) = (0usize, 0usize);
        for (&on, &m) in exp.selection_mask().iter().zip(&s.mask) {
            let m = m > 0;
            inter += usize::from(on && m);
            union += usize::from(on || m);
        }
        total += inter as f64 / union.max(1) as f64;
    }
    let iou = total / EVAL_IMAGES as f64;
    Outcome::new(iou >= 0.3, format!("mean IoU {iou:.3}"))
}

fn criterion_activation_maximization(trained: &Trained) -> Outcome {
    let model = &trained.model;
    let params = AmParams {
        steps: 64,
        step_size: 0.05,
    };
    let mut rng = Rng::seeded(SEED);
    let mut results = Vec::new();
    for n in 0..3 {
        let layer = model.conv_layer(n).unwrap();
        let filters = match &model.layers()[layer] {
            Layer::Conv2d { kernels, .. } => kernels.shape()[0],
            _ => unreachable!(),
        };
        for f in filters - 5..filters {
            let am = maximize_filter(model, layer, f, &params, &mut rng).unwrap();
            results.push(am.objective - am.initial_objective);
        }
    }
    for class in 0..2 {
        let am = maximize_class(model, class, &params, &mut rng).unwrap();
        results.push(am.objective - am.initial_objective);
    }
    let worst = results.iter().copied().fold(f64::INFINITY, f64::min);
    Outcome::new(
        worst > 0.0,
        format!(
            "{} images, smallest objective gain {worst:.3e}",
            results.len()
        ),
    )
}

fn criterion_shape_chain() -> Outcome {
    let model = build_cnn(&TrainConfig::default(), &mut Rng::seeded(SEED)).unwrap();
    let x = Tensor::full(&[128, 820, 3], 0.5);
    let mut chain = vec![x.shape().to_vec()];
    for (i, layer) in model.layers().iter().enumerate() {
        if matches!(
            layer,
            Layer::MaxPool2d | Layer::Flatten | Layer::Dense { .. }
        ) {
            chain.push(
                model
                    .forward_to(&x, Mode::Inference, i)
                    .unwrap()
                    .shape()
                    .to_vec(),
            );
        }
    }
    let expected: Vec<Vec<usize>> = vec![
        vec![128, 820, 3],
        vec![64, 410, 16],
        vec![32, 205, 32],
        vec![16, 102, 64],
        vec![104_448],
        vec![64],
        vec![2],
    ];
    let text: Vec<String> = chain
        .iter()
        .map(|s| {
            s.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x")
        })
        .collect();
    Outcome::new(chain == expected, text.join(" -> "))
}

fn criterion_augmentation_count() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("in"), dir.path().join("out"));
    std::fs::create_dir_all(&input).unwrap();
    std::fs::create_dir_all(&output).unwrap();
    let mut rng = Rng::seeded(SEED);
    for i in 0..40 {
        let samples = (0..11_025).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
        write_wav(
            &AudioClip::new(samples, 44_100).unwrap(),
            &input.join(format!("clip{i:02}.wav")),
        )
        .unwrap();
    }
    let plan = AugmentationPlan::default();
    let mut paths: Vec<_> = std::fs::read_dir(&input)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    let base = rng.fork_base();
    for (i, path) in paths.iter().enumerate() {
        let clip = load_wav(path).unwrap();
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        write_wav(&clip, &output.join(format!("{stem}_orig.wav"))).unwrap();
        for (v, variant) in augment_clip(&clip, &plan, &mut Rng::stream(base, i))
            .unwrap()
            .iter()
            .enumerate()
        {
            write_wav(variant, &output.join(format!("{stem}_aug{v:02}.wav"))).unwrap();
        }
    }
    let count = std::fs::read_dir(&output).unwrap().count();
    Outcome::new(count == 2760, format!("40 inputs -> {count} files"))
}

/// Synthetic images through manifest, split, training, checkpoint and
/// explanation dumps. Returns every produced file's bytes, by name.
fn pipeline(out: &Path) -> Vec<(String, Vec<u8>)> {
    let spec = SyntheticSpec {
        per_class: [20, 20],
        ..SyntheticSpec::default()
    };
    let samples = synth_generate(&spec, &mut Rng::seeded(SEED)).unwrap();
    let images = out.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut records = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let path = images.join(format!("{i:03}.png"));
        s.image.save_png(&path).unwrap();
        records.push(Record {
            path,
            label: s.label,
        });
    }
    Manifest::new(records)
        .save(&out.join("manifest.csv"))
        .unwrap();
    let manifest = load_manifest(&out.join("manifest.csv")).unwrap();
    let (train, test) = stratified_split(&manifest, 0.2, SEED).unwrap();
    let (train, test) = (
        ImageSet::from_manifest(&train).unwrap(),
        ImageSet::from_manifest(&test).unwrap(),
    );

    let config = TrainConfig {
        epochs: 3,
        batch_size: 16,
        early_stop_patience: 3,
        seed: SEED,
        ..Default::default()
    };
    let mut model = Architecture::for_input(128, 205, 0.2)
        .build(&mut Rng::seeded(SEED))
        .unwrap();
    let history = fit(&mut model, &train, &test, &config).unwrap();
    history.save_csv(&out.join("history.csv")).unwrap();
    let meta = TrainingMetadata {
        epoch: Some(history.best_epoch),
        ..Default::default()
    };
    save_checkpoint(&model, &meta, &out.join("model.ckpt")).unwrap();

    let image = &test.images[0];
    let x = to_input_tensor(image, 205).unwrap();
    let mut rng = Rng::seeded(SEED);
    let sg = smoothgrad(
        &model,
        &x,
        0,
        &SmoothGradParams {
            n: 4,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    save_raw_map(&sg, &out.join("smoothgrad.bin")).unwrap();
    let gc = gradcam(&model, &x, 1, &GradCamParams::default()).unwrap();
    save_raw_map(&gc, &out.join("gradcam.bin")).unwrap();
    let lime = lime_explain(
        &model,
        image,
        0,
        &LimeParams {
            n_samples: 30,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let selected: Vec<u8> = lime
        .selected
        .iter()
        .flat_map(|s| (*s as u64).to_le_bytes())
        .collect();
    std::fs::write(out.join("lime_segments.bin"), selected).unwrap();

    [
        "history.csv",
        "model.ckpt",
        "smoothgrad.bin",
        "gradcam.bin",
        "lime_segments.bin",
    ]
    .iter()
    .map(|name| (name.to_string(), std::fs::read(out.join(name)).unwrap()))
    .collect()
}

fn criterion_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let second = pool.install(|| pipeline(b.path()));
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    if differing.is_empty() {
        Outcome::new(
            true,
            format!("{} artifacts byte-identical across runs", first.len()),
        )
    } else {
        Outcome::new(false, format!("differing: {}", differing.join(", ")))
    }
}

fn main() {
    let mut report = Report { failures: 0 };
    let secs = Duration::from_secs;
    let mut trained: Option<Trained> = None;

    report.run(1, "parameter count", secs(1), || {
        let model = build_cnn(&TrainConfig::default(), &mut Rng::seeded(SEED)).unwrap();
        let n = model.param_count();
        Outcome::new(
            n == CANONICAL_PARAM_COUNT && n == 6_708_450,
            format!("{n} trainable parameters"),
        )
    });
    report.run(2, "shape chain", secs(1), criterion_shape_chain);
    report.run(3, "gradient correctness", secs(120), || {
        checks(&[
            (
                "conv oracle",
                gradients::check_conv_matches_naive_oracle_5x5x2,
            ),
            ("dense oracle", gradients::check_dense_matches_loop_oracle),
            ("conv", gradients::check_finite_differences_conv),
            (
                "pool/relu/dense/softmax/ce",
                gradients::check_finite_differences_pool_relu_dense_softmax_ce,
            ),
            (
                "dropout",
                gradients::check_finite_differences_dropout_with_fixed_mask,
            ),
            (
                "composite",
                gradients::check_composite_chain_matches_finite_differences,
            ),
            (
                "full model",
                gradients::check_full_model_gradient_reduced_geometry,
            ),
        ])
    });
    report.run(4, "training sanity", secs(600), || {
        criterion_training(&mut trained)
    });
    report.run(5, "early stopping", secs(60), || {
        checks(&[(
            "frozen validation",
            training::check_frozen_validation_accuracy_stops_after_patience,
        )])
    });
    report.run(6, "smoothgrad degeneracy", secs(60), || {
        checks(&[
            (
                "n=1 sigma=0",
                xai_oracles::check_degenerate_smoothgrad_is_vanilla_gradient,
            ),
            (
                "linear probe",
                xai_oracles::check_linear_model_saliency_ignores_n_sigma_and_input,
            ),
        ])
    });
    report.run(7, "grad-cam oracle", secs(10), || {
        checks(&[
            (
                "two-map network",
                xai_oracles::check_gradcam_matches_hand_computation,
            ),
            (
                "single map",
                xai_oracles::check_gradcam_single_map_is_proportional_to_activation,
            ),
            (
                "negative alphas",
                xai_oracles::check_gradcam_with_negative_alphas_is_zero,
            ),
        ])
    });
    let missing = || Outcome::new(false, "no trained model");
    report.run(8, "grad-cam localization", secs(120), || {
        trained
            .as_ref()
            .map_or_else(missing, criterion_gradcam_localization)
    });
    report.run(9, "lime surrogate oracle", secs(60), || {
        checks(&[
            ("combination count", xai_oracles::check_combination_count),
            (
                "linear-in-mask model",
                xai_oracles::check_lime_recovers_exactly_linear_model,
            ),
        ])
    });
    report.run(10, "lime localization", secs(300), || {
        trained
            .as_ref()
            .map_or_else(missing, criterion_lime_localization)
    });
    report.run(11, "mel and glorot formulas", secs(1), || {
        let mel = hz_to_mel(700.0).unwrap();
        let limit = glorot_limits(4, 5).unwrap();
        let pass = (mel - 2595.0 * 2f64.log10()).abs() < 1e-9 && (0.816..=0.817).contains(&limit);
        Outcome::new(
            pass,
            format!("hz_to_mel(700) = {mel:.9}, glorot_limits(4, 5) = {limit:.6}"),
        )
    });
    report.run(
        12,
        "augmentation count",
        secs(300),
        criterion_augmentation_count,
    );
    report.run(13, "activation maximization ascent", secs(180), || {
        trained
            .as_ref()
            .map_or_else(missing, criterion_activation_maximization)
    });
    report.run(
        14,
        "end-to-end determinism",
        secs(900),
        criterion_determinism,
    );

    println!("{} of 14 criteria passed", 14 - report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
