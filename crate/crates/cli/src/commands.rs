use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use signforge_core::models::{registry_spec, Model, ModelSpec, MODEL_NAMES};
use signforge_dataset::{
    build_manifest, class_histogram, extract_frames, filter_invalid, read_frame_pipe, DatasetManifest, FrameStream, ManifestOptions, Split,
    ValidationSource,
};
use signforge_serve::{classify_frame, ServeOptions};
use signforge_training::report::ComparisonReport;
use signforge_training::{compare_with, evaluate, synth_shapes, train_with, write_run_dir, ReportRow, RowOutcome, RunRecord, TrainingData};

use crate::settings::{resolve, FileConfig, Overrides, Settings};
use crate::{Cli, Command, TrainFlags, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn overrides(cli: &Cli) -> Overrides {
    let mut o = Overrides {
        seed: cli.seed,
        ..Overrides::default()
    };
    let flags = match &cli.command {
        Command::Train(a) => Some(&a.train),
        Command::Compare(a) => Some(&a.train),
        _ => None,
    };
    if let Some(f) = flags {
        apply_train_flags(&mut o, f);
    }
    match &cli.command {
        Command::BuildDataset(a) => {
            o.image_size = a.image_size;
            o.val_fraction = a.val_fraction;
            o.quality_threshold = a.quality_threshold;
        }
        Command::Serve(a) => {
            o.k = a.k;
            o.tau = a.tau;
            o.idle_ms = a.idle_ms;
        }
        _ => {}
    }
    o
}

fn apply_train_flags(o: &mut Overrides, f: &TrainFlags) {
    o.max_epochs = f.max_epochs;
    o.batch_size = f.batch_size;
    o.learning_rate = f.learning_rate;
    o.momentum = f.momentum;
    o.patience = f.patience;
    o.min_delta = f.min_delta;
    o.monitor = f.monitor;
    o.augment = match (f.augment, f.no_augment) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    };
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let settings = resolve(&file, &overrides(&cli));
    match cli.command {
        Command::ExtractFrames(a) => extract(a),
        Command::BuildDataset(a) => build_dataset(a, &settings),
        Command::SynthShapes(a) => synth(a, &settings),
        Command::Train(a) => train_cmd(a, &settings),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Compare(a) => compare_cmd(a, &settings),
        Command::Serve(a) => serve_cmd(a, &settings),
        Command::Predict(a) => predict(a),
        Command::Report(a) => report(a),
    }
}

fn require_dir(p: &Path, what: &str) -> Result<()> {
    if !p.is_dir() {
        bail!(usage(format!("{what} {} is not a directory", p.display())));
    }
    Ok(())
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if !p.is_file() {
        bail!(usage(format!("{what} {} does not exist", p.display())));
    }
    Ok(())
}

fn write_file(p: &Path, text: &str) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

fn extract(a: crate::ExtractArgs) -> Result<()> {
    if a.stride == 0 {
        bail!(usage("--stride must be at least 1"));
    }
    if !(a.fps > 0.0 && a.fps.is_finite()) {
        bail!(usage("--fps must be positive"));
    }
    let stdin = a.input.as_os_str() == "-";
    if !stdin && !a.input.exists() {
        bail!(usage(format!("--in {} does not exist", a.input.display())));
    }
    if a.out == a.input {
        bail!(usage("--out must differ from --in"));
    }
    let source = a.input.display().to_string();
    let frames = if stdin {
        read_frame_pipe(std::io::stdin().lock())?.into_iter().map(|f| f.image).collect()
    } else if a.input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&a.input)
            .with_context(|| format!("listing {}", a.input.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.is_file() && is_image(p));
        paths.sort();
        paths
            .iter()
            .map(|p| {
                image::open(p)
                    .map(|i| i.to_rgb8())
                    .with_context(|| format!("decoding {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let f = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
        read_frame_pipe(std::io::BufReader::new(f))?.into_iter().map(|f| f.image).collect()
    };
    let stream = FrameStream::new(source, a.fps, frames)?;
    let kept = extract_frames(&stream, a.stride)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, img) in &kept {
        let p = a.out.join(format!("frame_{i:06}.png"));
        img.save(&p).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("kept {} of {} frames (stride {})", kept.len(), stream.frames.len(), a.stride);
    Ok(())
}

fn build_dataset(a: crate::BuildArgs, s: &Settings) -> Result<()> {
    let d = &s.dataset;
    require_dir(&a.root, "--root")?;
    if let Some(v) = &a.val_dir {
        require_dir(v, "--val-dir")?;
    }
    if d.image_size == 0 {
        bail!(usage("--image-size must be at least 1"));
    }
    if !(0.0..1.0).contains(&d.val_fraction) {
        bail!(usage(format!("validation fraction {} outside [0, 1)", d.val_fraction)));
    }
    if !(d.quality_threshold >= 0.0) {
        bail!(usage("--quality-threshold must be >= 0"));
    }
    let opts = ManifestOptions {
        image_size: [d.image_size; 2],
        validation: match a.val_dir {
            Some(v) => ValidationSource::Dir(v),
            None => ValidationSource::Fraction(d.val_fraction),
        },
        seed: s.seed,
    };
    let mut manifest = build_manifest(&a.root, &opts)?;
    let (kept, rejected) = filter_invalid(std::mem::take(&mut manifest.samples), d.quality_threshold);
    manifest.samples = kept;
    if let Some((c, _)) = manifest.counts().into_iter().find(|(_, n)| *n == 0) {
        bail!(usage(format!(
            "every image of class {c} scored below quality threshold {}",
            d.quality_threshold
        )));
    }
    if let Some(p) = &a.review_list {
        let mut out = String::from("path,label,quality\n");
        for r in &rejected {
            let _ = writeln!(out, "{},{},{:.6}", manifest.resolve(r).display(), r.label, r.quality);
        }
        write_file(p, &out)?;
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    manifest.save(&a.out)?;
    let hist = class_histogram(&manifest);
    if let Some(p) = &a.histogram {
        write_file(p, &hist.to_csv())?;
    }
    let n_val = manifest.split_indices(Split::Validation).len();
    print!("{}", hist.render_bars(40));
    println!(
        "{} samples ({} validation), {} rejected, imbalance {:.2}",
        manifest.samples.len(),
        n_val,
        rejected.len(),
        hist.imbalance_ratio()
    );
    Ok(())
}

fn synth(a: crate::SynthArgs, s: &Settings) -> Result<()> {
    if a.size < 16 || a.per_class == 0 {
        bail!(usage("--size must be at least 16 and --per-class at least 1"));
    }
    let m = synth_shapes(a.per_class, a.size, s.seed, &a.out)?;
    println!("{} images in {}", m.samples.len(), a.out.join("manifest.json").display());
    Ok(())
}

/// Registry name or a spec JSON file.
fn resolve_model(name: &str) -> Result<ModelSpec> {
    if MODEL_NAMES.contains(&name) {
        return Ok(registry_spec(name)?);
    }
    let p = Path::new(name);
    if p.is_file() {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return serde_json::from_str(&text).map_err(|e| usage(format!("model spec {}: {e}", p.display())));
    }
    bail!(usage(format!(
        "unknown model {name:?}; expected one of {} or a spec file",
        MODEL_NAMES.join(", ")
    )))
}

fn load_data(path: &Path) -> Result<TrainingData> {
    require_file(path, "--data")?;
    let m = DatasetManifest::load(path)?;
    Ok(TrainingData::from_manifest(&m)?)
}

fn log_epoch(name: &str) -> impl FnMut(&signforge_training::EpochMetrics) + '_ {
    move |m| {
        log::info!(
            "{name} epoch {} train {:.4}/{:.4} val {:.4}/{:.4} ({:.1}s)",
            m.epoch,
            m.train_acc,
            m.train_loss,
            m.val_acc,
            m.val_loss,
            m.seconds
        )
    }
}

fn write_settings(dir: &Path, s: &Settings) -> Result<()> {
    write_file(&dir.join("settings.json"), &serde_json::to_string_pretty(s)?)
}

fn train_cmd(a: crate::TrainArgs, s: &Settings) -> Result<()> {
    s.train.validate()?;
    let spec = resolve_model(&a.model)?;
    let data = load_data(&a.data)?;
    let mut model = Model::build(data.adapt(spec), s.train.seed)?;
    let name = model.spec().name.clone();
    let record = train_with(&mut model, &data, &s.train, log_epoch(&name))?;
    write_run_dir(&a.out, &record, &model)?;
    write_settings(&a.out, s)?;
    print!("{}", ComparisonReport::new(vec![RowOutcome::Ok(ReportRow::from(&record))]).to_table());
    println!("run written to {}", a.out.display());
    Ok(())
}

fn evaluate_cmd(a: crate::EvaluateArgs) -> Result<()> {
    if a.batch_size == 0 {
        bail!(usage("--batch-size must be at least 1"));
    }
    require_file(&a.model, "--model")?;
    let model = Model::load(&a.model)?;
    let data = load_data(&a.data)?;
    let [_, h, w] = model.spec().input;
    if data.size != [h, w] {
        bail!(usage(format!("manifest image size {:?} differs from model input {:?}", data.size, [h, w])));
    }
    if data.classes.len() != model.num_classes() {
        bail!(usage(format!(
            "manifest has {} classes, model has {}",
            data.classes.len(),
            model.num_classes()
        )));
    }
    let norm = &model.spec().normalization;
    for (name, split) in [("train", &data.train), ("validation", &data.val)] {
        let e = evaluate(&model, split, norm, a.batch_size)?;
        println!("{name} accuracy {:.4} loss {:.4} ({}/{})", e.accuracy, e.loss, e.correct, e.total);
    }
    Ok(())
}

fn compare_cmd(a: crate::CompareArgs, s: &Settings) -> Result<()> {
    s.train.validate()?;
    if a.models.len() < 2 {
        bail!(usage("--models needs at least two entries"));
    }
    let specs = a.models.iter().map(|m| resolve_model(m)).collect::<Result<Vec<_>>>()?;
    let data = load_data(&a.data)?;
    let mut write_err = None;
    let report = compare_with(&specs, &data, &s.train, |spec, outcome| match outcome {
        Ok((record, model)) => {
            log::info!("{} done: val acc {:.4}", spec.name, record.val_accuracy);
            if let Some(root) = &a.runs {
                let dir = root.join(&spec.name);
                if let Err(e) = write_run_dir(&dir, record, model).map_err(anyhow::Error::from).and_then(|_| write_settings(&dir, s)) {
                    write_err.get_or_insert(e);
                }
            }
        }
        Err(e) => log::warn!("{} failed: {e}", spec.name),
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    write_file(&a.out, &report.to_csv())?;
    write_file(&a.out.with_extension("json"), &serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.to_table());
    Ok(())
}

fn serve_cmd(a: crate::ServeArgs, s: &Settings) -> Result<()> {
    s.session.validate()?;
    require_file(&a.model, "--model")?;
    if let Some(d) = &a.static_dir {
        require_dir(d, "--static")?;
    }
    let opts = ServeOptions {
        model_path: a.model,
        bind: a.bind,
        session: s.session,
        static_dir: a.static_dir,
    };
    let rt = tokio::runtime::Runtime::new().context("starting async runtime")?;
    rt.block_on(signforge_serve::serve(opts))?;
    Ok(())
}

fn predict(a: crate::PredictArgs) -> Result<()> {
    require_file(&a.model, "--model")?;
    require_file(&a.image, "--image")?;
    let model = Model::load(&a.model)?;
    let img = image::open(&a.image)
        .with_context(|| format!("decoding {}", a.image.display()))?
        .to_rgb8();
    let ev = classify_frame(&model, &img, &model.spec().normalization, 0, 0)?;
    println!("{} {:.4}", ev.label, ev.prob);
    Ok(())
}

fn report(a: crate::ReportArgs) -> Result<()> {
    let report = match &a.comparison {
        Some(p) => {
            require_file(p, "--comparison")?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<ComparisonReport>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => {
            for d in &a.runs {
                require_file(&d.join("record.json"), "run record")?;
            }
            let rows = a
                .runs
                .iter()
                .map(|d| {
                    let p = d.join("record.json");
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    let r: RunRecord = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    Ok(RowOutcome::Ok(ReportRow::from(&r)))
                })
                .collect::<Result<Vec<_>>>()?;
            ComparisonReport::new(rows)
        }
    };
    match &a.out {
        Some(p) => write_file(p, &report.to_csv())?,
        None => print!("{}", report.to_table()),
    }
    Ok(())
}
