use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use emofuse::data::{generate, make_folds, Split, SynthConfig};
use emofuse::dsp::{
    load_features, make_spectrograms, read_embedding_text, read_feature_file, save_features, write_manifest,
    FeatureShape, LabeledSample, Waveform,
};
use emofuse::selfcheck::{composite_check, op_checks};
use emofuse::tensor::GradCheckConfig;
use emofuse::train::{
    curve_csv, evaluate, grid_search_alpha, train_with_progress, Checkpoint, GridConfig, ModelConfig, TrainConfig,
};
use serde_json::json;

use crate::config::merge;
use crate::{
    Command, Common, DataArgs, EvalArgs, FeaturizeArgs, GencorpusArgs, GradcheckArgs, GridsearchArgs, HyperArgs,
    TrainArgs,
};

const DEFAULT_CLASSES: usize = 4;
const DEFAULT_FOLDS: usize = 10;

/// 1 for non-finite arithmetic, 2 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e
        .chain()
        .any(|c| c.downcast_ref::<emofuse::Error>().is_some_and(emofuse::Error::is_numerical));
    if numerical {
        1
    } else {
        2
    }
}

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Gencorpus(a) => gencorpus(merge(&a, a.common.config.as_deref())?),
        Command::Featurize(a) => featurize(merge(&a, a.common.config.as_deref())?),
        Command::Train(a) => train_cmd(merge(&a, a.common.config.as_deref())?),
        Command::Eval(a) => eval_cmd(merge(&a, a.common.config.as_deref())?),
        Command::Gridsearch(a) => gridsearch(merge(&a, a.common.config.as_deref())?),
        Command::Gradcheck(a) => gradcheck(merge(&a, a.common.config.as_deref())?),
    }
}

fn setup(common: &Common) -> Result<()> {
    if let Some(t) = common.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        if !emofuse::par::set_threads(t) {
            eprintln!("warning: thread pool already initialised; --threads ignored");
        }
    }
    Ok(())
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().ok_or_else(|| anyhow!("--out is required"))?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn gencorpus(a: GencorpusArgs) -> Result<ExitCode> {
    setup(&a.common)?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        classes: a.classes.unwrap_or(d.classes),
        samples_per_class: a.per_class.unwrap_or(d.samples_per_class),
        rho: a.rho.unwrap_or(d.rho),
        sigma: a.sigma.unwrap_or(d.sigma),
        seed: a.common.seed.unwrap_or(d.seed),
        audio_scale: a.audio_scale.unwrap_or(d.audio_scale),
        text_scale: a.text_scale.unwrap_or(d.text_scale),
        min_text_len: a.min_text_len.or(d.min_text_len),
        ..d
    };
    cfg.validate()?;
    let dir = out_dir(&a.common)?;
    let samples = generate(&cfg)?;
    save_features(&dir.join("corpus.cfe"), &samples)?;
    write_manifest(&dir.join("manifest.txt"), &["corpus.cfe"])?;

    let mut counts = vec![0usize; cfg.classes];
    let mut conflicts = vec![0usize; cfg.classes];
    for s in &samples {
        counts[s.label] += 1;
        conflicts[s.label] += usize::from(s.conflict);
    }
    let total_conflicts: usize = conflicts.iter().sum();
    let mut meta = String::new();
    writeln!(meta, "classes={}", cfg.classes)?;
    writeln!(meta, "rho={}", cfg.rho)?;
    writeln!(meta, "sigma={}", cfg.sigma)?;
    writeln!(meta, "seed={}", cfg.seed)?;
    writeln!(meta, "audio_scale={}", cfg.audio_scale)?;
    writeln!(meta, "text_scale={}", cfg.text_scale)?;
    if let Some(m) = cfg.min_text_len {
        writeln!(meta, "min_text_len={m}")?;
    }
    writeln!(meta, "samples={}", samples.len())?;
    writeln!(meta, "conflicts={total_conflicts}")?;
    for (k, (n, c)) in counts.iter().zip(&conflicts).enumerate() {
        writeln!(meta, "count_{k}={n}")?;
        writeln!(meta, "conflicts_{k}={c}")?;
    }
    write(&dir.join("corpus.meta"), meta)?;

    println!("{} samples, {total_conflicts} conflict-flagged", samples.len());
    for (k, (n, c)) in counts.iter().zip(&conflicts).enumerate() {
        println!("class {k}: {n} samples, {c} conflicts");
    }
    Ok(ExitCode::SUCCESS)
}

fn featurize(a: FeaturizeArgs) -> Result<ExitCode> {
    setup(&a.common)?;
    let wav_dir = a.wav_dir.ok_or_else(|| anyhow!("--wav-dir is required"))?;
    let manifest = a.manifest.ok_or_else(|| anyhow!("--manifest is required"))?;
    let text = std::fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
            bail!("{}:{}: expected `<utterance> <label>`", manifest.display(), n + 1);
        };
        let label: usize = label
            .parse()
            .with_context(|| format!("{}:{}: bad label `{label}`", manifest.display(), n + 1))?;
        entries.push((id.to_string(), label));
    }
    let dir = out_dir(&a.common)?;
    let shape = FeatureShape::STANDARD;
    let mut samples = Vec::new();
    for (id, label) in &entries {
        let wav = wav_dir.join(format!("{id}.wav"));
        let emb = wav_dir.join(format!("{id}.emb"));
        if !emb.exists() {
            bail!("utterance `{id}`: missing embedding file {}", emb.display());
        }
        let w = Waveform::read_wav(&wav).with_context(|| format!("utterance `{id}`"))?;
        let segments = make_spectrograms(&w).with_context(|| format!("utterance `{id}` ({})", wav.display()))?;
        if segments.is_empty() {
            eprintln!("warning: utterance `{id}` is shorter than one segment; skipped");
            continue;
        }
        let x_t = read_embedding_text(&emb, shape.seq_len, shape.embed_dim).with_context(|| format!("utterance `{id}`"))?;
        for x_a in segments {
            samples.push(LabeledSample {
                x_a,
                x_t: x_t.clone(),
                label: *label,
                utterance_id: id.clone(),
                conflict: false,
            });
        }
    }
    save_features(&dir.join("features.cfe"), &samples)?;
    write_manifest(&dir.join("manifest.txt"), &["features.cfe"])?;
    println!("{} utterances, {} segments", entries.len(), samples.len());
    Ok(ExitCode::SUCCESS)
}

fn load_data(d: &DataArgs) -> Result<(Vec<LabeledSample>, usize)> {
    let path = d.data.as_ref().ok_or_else(|| anyhow!("--data is required"))?;
    let classes = d.classes.unwrap_or(DEFAULT_CLASSES);
    let samples = if path.extension().is_some_and(|e| e == "cfe") {
        read_feature_file(path, classes)?
    } else {
        load_features(path, classes)?
    };
    if samples.is_empty() {
        bail!("{} holds no samples", path.display());
    }
    Ok((samples, classes))
}

fn fold_split(d: &DataArgs, samples: &[LabeledSample], fold: usize) -> Result<Split> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let plan = make_folds(&labels, d.folds.unwrap_or(DEFAULT_FOLDS), d.fold_seed.unwrap_or(0))?;
    Ok(plan.split(fold)?)
}

fn train_config(common: &Common, h: &HyperArgs, alpha: Option<f64>) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: h.learning_rate.unwrap_or(d.learning_rate),
        batch_size: h.batch_size.unwrap_or(d.batch_size),
        alpha: alpha.unwrap_or(d.alpha),
        epochs: h.epochs.unwrap_or(d.epochs),
        seed: common.seed.unwrap_or(d.seed),
        use_discriminator: !h.no_discriminator,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    setup(&a.common)?;
    let cfg = train_config(&a.common, &a.hyper, a.alpha)?;
    let (samples, classes) = load_data(&a.data)?;
    let fold = a.data.fold.unwrap_or(0);
    let split = fold_split(&a.data, &samples, fold)?;
    let model = ModelConfig::for_shape(samples[0].shape(), classes)?;
    let dir = out_dir(&a.common)?;
    let mut out = train_with_progress(&samples, &split.train, &split.validation, &model, &cfg, |r| {
        let val = r.val_ua.map_or(String::from("-"), |u| format!("{u:.4}"));
        eprintln!("epoch {:>3}  loss {:.5}  val UA {val}", r.epoch, r.train_loss);
    })?;
    out.checkpoint.meta.fold = Some(fold);
    out.checkpoint.save(&dir.join("checkpoint.cfck"))?;
    write(&dir.join("loss.csv"), curve_csv(&out.curve))?;
    println!(
        "fold {fold}: {} train / {} validation samples; best epoch {}",
        split.train.len(),
        split.validation.len(),
        out.best_epoch
    );
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(a: EvalArgs) -> Result<ExitCode> {
    setup(&a.common)?;
    let ck_path = a.checkpoint.as_ref().ok_or_else(|| anyhow!("--checkpoint is required"))?;
    let ck = Checkpoint::load(ck_path)?;
    let data = DataArgs {
        classes: a.data.classes.or(Some(ck.meta.model.classes)),
        ..a.data.clone()
    };
    let (samples, _) = load_data(&data)?;
    if samples[0].shape() != ck.meta.model.feature_shape() {
        bail!(
            "data shape {:?} does not match the checkpoint's {:?}",
            samples[0].shape(),
            ck.meta.model.feature_shape()
        );
    }
    let fold = data.fold.or(ck.meta.fold).unwrap_or(0);
    let which = a.split.as_deref().unwrap_or("test");
    let indices = match which {
        "all" => (0..samples.len()).collect(),
        part => {
            let split = fold_split(&data, &samples, fold)?;
            match part {
                "test" => split.test,
                "validation" => split.validation,
                "train" => split.train,
                other => bail!("--split must be test, validation, train or all, got `{other}`"),
            }
        }
    };
    let dir = out_dir(&a.common)?;
    let report = evaluate(&ck.params, &ck.meta.model, &samples, &indices)?;
    write(&dir.join("eval.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    write(&dir.join("confusion.csv"), report.confusion_csv())?;
    println!(
        "{which} split, {} utterances: WA {:.4} UA {:.4}",
        report.count, report.wa, report.ua
    );
    Ok(ExitCode::SUCCESS)
}

fn gridsearch(a: GridsearchArgs) -> Result<ExitCode> {
    setup(&a.common)?;
    if a.hyper.no_discriminator {
        bail!("--no-discriminator cannot be used with gridsearch");
    }
    if a.data.fold.is_some() {
        bail!("--fold cannot be used with gridsearch; every fold is run");
    }
    let base = train_config(&a.common, &a.hyper, None)?;
    let d = GridConfig::default();
    let grid = GridConfig {
        step: a.grid_step.unwrap_or(d.step),
        folds: a.data.folds.unwrap_or(d.folds),
        fold_seed: a.data.fold_seed.unwrap_or(d.fold_seed),
    };
    emofuse::train::alpha_grid(grid.step)?;
    let (samples, classes) = load_data(&a.data)?;
    let model = ModelConfig::for_shape(samples[0].shape(), classes)?;
    let dir = out_dir(&a.common)?;
    let report = grid_search_alpha(&samples, &model, &base, &grid)?;
    write(&dir.join("grid.csv"), report.to_csv())?;
    write(&dir.join("grid.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    for r in &report.rows {
        match (r.mean_ua, &r.error) {
            (Some(ua), _) => println!("alpha {:.2}: mean validation UA {ua:.4}", r.alpha),
            (None, Some(e)) => println!("alpha {:.2}: failed: {e}", r.alpha),
            (None, None) => {}
        }
    }
    match report.selected_row() {
        Some(r) => println!("selected alpha {}", r.alpha),
        None => bail!(emofuse::Error::Numerical("every grid point failed".into())),
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    setup(&a.common)?;
    let cfg = GradCheckConfig {
        seed: a.common.seed.unwrap_or(0),
        ..GradCheckConfig::default()
    };
    let alpha = a.alpha.unwrap_or(0.1);
    if !(0.0..=1.0).contains(&alpha) {
        bail!("--alpha {alpha} outside [0, 1]");
    }
    let mut rows = Vec::new();
    let mut ok = true;
    for c in op_checks(&cfg)? {
        let pass = c.report.passed();
        ok &= pass;
        println!("{:<5} {:<16} {:.2e}", if pass { "ok" } else { "FAIL" }, c.name, c.report.max_rel_error());
        rows.push(json!({"name": c.name, "max_rel_error": c.report.max_rel_error(), "passed": pass}));
    }
    let composite = composite_check(&cfg, alpha)?;
    for p in &composite.params {
        println!("      {:<32} {:>5} coords {:.2e}", p.name, p.probed, p.max_rel_error);
    }
    let pass = composite.passed();
    ok &= pass;
    println!(
        "{:<5} {:<16} {:.2e}",
        if pass { "ok" } else { "FAIL" },
        "full objective",
        composite.max_rel_error()
    );
    rows.push(json!({"name": "full objective", "max_rel_error": composite.max_rel_error(), "passed": pass}));
    if a.common.out.is_some() {
        let dir = out_dir(&a.common)?;
        let body = json!({"tolerance": cfg.tol, "step": cfg.step, "alpha": alpha, "checks": rows});
        write(&dir.join("gradcheck.json"), serde_json::to_string_pretty(&body)? + "\n")?;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
