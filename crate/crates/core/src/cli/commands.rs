use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{load_cloud, CliError};
use crate::data::{
    load_off, pack_read, pack_write, sample_mesh_surface, stream_rng, synthetic_dataset, Dataset, ShapeKind, Split,
    SyntheticConfig,
};
use crate::error::Error;
use crate::geometry::{geometric_descriptor, normalize_to_unit_sphere, DescriptorForm, PointCloud};
use crate::layers::{Mode, Pass};
use crate::model::{
    evaluate, load_checkpoint, save_checkpoint, Checkpoint, Confusion, Config, DatasetSource, Evaluation, GbnetModel,
    Trainer,
};
use crate::tensor::{inject_backward_fault, Tape, Tensor};
use crate::verify::run_suite;

type CmdResult = Result<(), CliError>;

// stream family of mesh sampling during ingestion
const INGEST: u32 = 6;

fn synthetic_config(config: &Config) -> SyntheticConfig {
    SyntheticConfig {
        train_size: config.data.train_size,
        test_size: config.data.test_size,
        points: config.model.points,
        jitter: config.data.jitter,
        seed: config.train.seed,
    }
}

fn class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| format!("class_{c}")).collect()
}

/// Labelled pack clouds checked against a class count and point count.
fn pack_dataset(path: &Path, classes: usize, points: usize, split: Split) -> Result<Dataset, Error> {
    let clouds = pack_read(path)?;
    if let Some(max) = clouds.iter().filter_map(|c| c.label).max() {
        if max >= classes {
            return Err(Error::ClassCount {
                expected: max + 1,
                checkpoint: classes,
            });
        }
    }
    if let Some((i, c)) = clouds.iter().enumerate().find(|(_, c)| c.len() != points) {
        return Err(Error::invalid(
            "dataset",
            format!("{}: cloud {i} has {} points, model expects {points}", path.display(), c.len()),
        ));
    }
    Dataset::new(clouds, class_names(classes), split)
}

fn datasets(config: &Config) -> Result<(Dataset, Dataset), CliError> {
    match config.data.source {
        DatasetSource::Synthetic => {
            let classes = ShapeKind::ALL.len();
            if config.model.classes != classes {
                return Err(Error::config(
                    "classes",
                    format!("the synthetic benchmark has {classes} classes, config says {}", config.model.classes),
                )
                .into());
            }
            Ok(synthetic_dataset(&synthetic_config(config))?)
        }
        DatasetSource::Packs => {
            let (c, n) = (config.model.classes, config.model.points);
            Ok((
                pack_dataset(Path::new(&config.data.train_pack), c, n, Split::Train)?,
                pack_dataset(Path::new(&config.data.test_pack), c, n, Split::Test)?,
            ))
        }
    }
}

fn confusion_csv(m: &Confusion, names: &[String]) -> String {
    let mut s = String::from("true\\predicted");
    for n in names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for (name, row) in names.iter().zip(&m.counts) {
        s.push_str(name);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn print_evaluation(out: &mut dyn Write, e: &Evaluation, names: &[String]) -> std::io::Result<()> {
    writeln!(out, "overall_acc={:.4}", e.overall_acc)?;
    writeln!(out, "avg_class_acc={:.4}", e.avg_class_acc)?;
    writeln!(out, "macro_f1={:.4}", e.macro_f1)?;
    writeln!(out, "loss={:.6}", e.loss)?;
    writeln!(out, "class,name,acc,f1")?;
    for (c, name) in names.iter().enumerate() {
        let acc = e.per_class_acc[c].map_or("nan".to_string(), |a| format!("{a:.4}"));
        writeln!(out, "{c},{name},{acc},{:.4}", e.f1[c])?;
    }
    Ok(())
}

pub fn train(config: &Config, output: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let dir = output.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("gbnet-run"));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.cfg"), config.to_text())?;
    let (train, test) = datasets(config)?;
    writeln!(out, "train={} test={} classes={}", train.len(), test.len(), train.num_classes())?;

    let model = GbnetModel::new(&config.model, config.train.seed)?;
    writeln!(out, "parameters={}", model.param_count())?;
    let mut trainer = Trainer::new(model, config.train.clone());
    let mut metrics = std::fs::File::create(dir.join("metrics.jsonl"))?;
    let mut best = f64::NEG_INFINITY;
    let mut last_eval = None;
    let started = Instant::now();
    trainer.fit(&train, &test, |rec, t, eval| {
        let line = serde_json::to_string(rec).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(metrics, "{line}")?;
        writeln!(
            out,
            "epoch {}/{} lr={:.6} loss={:.4} acc={:.4} test_acc={:.4} test_avg_class_acc={:.4}",
            rec.epoch, config.train.epochs, rec.lr, rec.loss, rec.acc, rec.test_acc, rec.test_avg_class_acc
        )?;
        log::info!("epoch {} done after {:.1}s", rec.epoch, started.elapsed().as_secs_f64());
        if rec.test_acc > best {
            best = rec.test_acc;
            save_checkpoint(dir.join("best.gbnc"), &Checkpoint::from_trainer(config, t))?;
        }
        last_eval = Some(eval.clone());
        Ok(())
    })?;
    save_checkpoint(dir.join("last.gbnc"), &Checkpoint::from_trainer(config, &trainer))?;
    let eval = last_eval.expect("at least one epoch");
    std::fs::write(dir.join("confusion.csv"), confusion_csv(&eval.confusion, &test.class_names))?;
    writeln!(out, "best_test_acc={best:.4}")?;
    print_evaluation(out, &eval, &test.class_names)?;
    writeln!(out, "artifacts={}", dir.display())?;
    Ok(())
}

pub fn eval(
    config: &Config,
    checkpoint: &Path,
    pack: Option<&Path>,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let mut ck = load_checkpoint(checkpoint, None)?;
    ck.model.strict = config.strict;
    let (classes, points) = (ck.config.model.classes, ck.config.model.points);
    let data = match pack {
        Some(p) => pack_dataset(p, classes, points, Split::Test)?,
        None => {
            let mut c = config.clone();
            c.model.points = points;
            let (_, test) = match datasets(&c) {
                Ok(d) => d,
                Err(CliError::Usage(_)) if c.data.source == DatasetSource::Synthetic => {
                    return Err(Error::ClassCount {
                        expected: ShapeKind::ALL.len(),
                        checkpoint: classes,
                    }
                    .into())
                }
                Err(e) => return Err(e),
            };
            test
        }
    };
    let e = evaluate(&ck.model, &data, config.train.eval_batch)?;
    writeln!(out, "checkpoint={} epoch={} samples={}", checkpoint.display(), ck.epoch, data.len())?;
    print_evaluation(out, &e, &data.class_names)?;
    if let Some(dir) = output {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&e).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join("eval.json"), json)?;
        std::fs::write(dir.join("confusion.csv"), confusion_csv(&e.confusion, &data.class_names))?;
    }
    Ok(())
}

pub fn gradcheck(target: Option<&str>, inject_fault: bool, out: &mut dyn Write) -> CmdResult {
    inject_backward_fault(inject_fault);
    let results = run_suite(target);
    inject_backward_fault(false);
    let results = results.map_err(|e| match e {
        Error::Invalid { op: "gradcheck", msg } => CliError::Usage(msg),
        e => CliError::Runtime(e),
    })?;
    writeln!(out, "target,group,max_rel_error,tolerance,checked,excluded_ties,status")?;
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed { "ok" } else { "FAIL" };
        writeln!(
            out,
            "{},{},{:.3e},{:.0e},{},{},{status}",
            r.name, r.group, r.max_rel_error, r.tolerance, r.checked, r.excluded_ties
        )?;
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        writeln!(out, "all {} targets passed", results.len())?;
        Ok(())
    } else {
        Err(CliError::Verification(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn describe(
    config: &Config,
    input: &Path,
    form: Option<u8>,
    index: usize,
    dest: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let form = match form {
        Some(f) => DescriptorForm::new(f).map_err(|e| CliError::Usage(e.to_string()))?,
        None => config.model.descriptor_form,
    };
    let cloud = load_cloud(input, index, None)?;
    if cloud.len() < 3 {
        return Err(Error::invalid("describe", format!("need at least 3 points, got {}", cloud.len())).into());
    }
    let desc = geometric_descriptor(&cloud, form)?;
    let mut csv = String::from("index");
    for name in form.column_names() {
        let _ = write!(csv, ",{name}");
    }
    csv.push('\n');
    for i in 0..cloud.len() {
        let _ = write!(csv, "{i}");
        for v in desc.row(i) {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    emit(dest, &csv, out)
}

/// Writes all of `text` to `dest`, or to `out` when absent.
fn emit(dest: Option<&Path>, text: &str, out: &mut dyn Write) -> CmdResult {
    match dest {
        Some(p) => {
            std::fs::write(p, text)?;
            writeln!(out, "wrote {}", p.display())?;
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn row_norms(t: &Tensor<f32>) -> Vec<f64> {
    let c = *t.shape().last().unwrap_or(&1);
    t.data()
        .chunks_exact(c)
        .map(|r| r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
        .collect()
}

pub fn features(
    config: &Config,
    checkpoint: &Path,
    input: &Path,
    index: usize,
    dest: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let ck = load_checkpoint(checkpoint, None)?;
    let n = ck.config.model.points;
    let raw = load_cloud(input, index, Some((n, config.train.seed)))?;
    if raw.len() != n {
        return Err(Error::invalid("features", format!("input has {} points, model expects {n}", raw.len())).into());
    }
    let cloud = normalize_to_unit_sphere(&raw)?;
    let mut tape = Tape::new();
    let fwd = {
        let mut pass = Pass::new(&mut tape, &ck.model.store, Mode::Eval, false);
        ck.model.forward(&mut pass, std::slice::from_ref(&cloud))?
    };
    let order = &fwd.orders[0];
    let mut blocks: Vec<(String, &str, crate::tensor::Var)> = Vec::new();
    for (i, v) in fwd.abems.iter().enumerate() {
        let layer = (i + 1).to_string();
        if let Some(f) = v.f_m {
            blocks.push((layer.clone(), "f_m", f));
        }
        if let Some(f) = v.f_a {
            blocks.push((layer.clone(), "f_a", f));
        }
        if v.f_m.is_none() && v.f_a.is_none() {
            blocks.push((layer, "f_out", v.f_out));
        }
    }
    blocks.push(("fuse".into(), "pre_caa", fwd.fused_pre));
    blocks.push(("fuse".into(), "post_caa", fwd.fused_post));

    let mut csv = String::from("point,layer,branch,norm\n");
    for (layer, branch, var) in blocks {
        let norms = row_norms(tape.value(var));
        let mut by_point = vec![0.0; n];
        for (row, &src) in order.iter().enumerate() {
            by_point[src] = norms[row];
        }
        for (p, v) in by_point.iter().enumerate() {
            let _ = writeln!(csv, "{p},{layer},{branch},{v}");
        }
    }
    emit(dest, &csv, out)
}

pub fn bench(config: &Config, checkpoint: &Path, batch: usize, repeats: usize, warmup: usize, out: &mut dyn Write) -> CmdResult {
    if batch == 0 || repeats == 0 {
        return Err(CliError::Usage("batch and repeats must be at least 1".into()));
    }
    let bytes = std::fs::metadata(checkpoint)?.len();
    let ck = load_checkpoint(checkpoint, None)?;
    let n = ck.config.model.points;
    let clouds: Vec<PointCloud> = (0..batch)
        .map(|i| {
            let kind = ShapeKind::ALL[i % ShapeKind::ALL.len()];
            crate::data::generate_synthetic(kind, n, 0.01, &mut stream_rng(config.train.seed, 7, i as u64))
        })
        .collect::<Result<_, _>>()?;
    for _ in 0..warmup {
        ck.model.predict_logits(&clouds)?;
    }
    let mut ms: Vec<f64> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            ck.model.predict_logits(&clouds).map(|_| t.elapsed().as_secs_f64() * 1e3)
        })
        .collect::<Result<_, _>>()?;
    let mean = ms.iter().sum::<f64>() / repeats as f64;
    let std = (ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / repeats as f64).sqrt();
    ms.sort_by(f64::total_cmp);
    let median = if repeats % 2 == 1 {
        ms[repeats / 2]
    } else {
        0.5 * (ms[repeats / 2 - 1] + ms[repeats / 2])
    };
    let params = ck.model.param_count();
    writeln!(out, "parameters={params}")?;
    writeln!(out, "checkpoint_bytes={bytes}")?;
    writeln!(out, "parameter_mb={:.3}", params as f64 * 4.0 / (1024.0 * 1024.0))?;
    writeln!(out, "points={n} batch={batch} warmup={warmup} repeats={repeats}")?;
    writeln!(out, "latency_mean_ms={mean:.3}")?;
    writeln!(out, "latency_median_ms={median:.3}")?;
    writeln!(out, "latency_std_ms={std:.3}")?;
    writeln!(out, "latency_min_ms={:.3}", ms[0])?;
    writeln!(out, "latency_max_ms={:.3}", ms[repeats - 1])?;
    writeln!(out, "per_cloud_mean_ms={:.3}", mean / batch as f64)?;
    Ok(())
}

pub fn synth(config: &Config, output: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let dir = output.unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let (train, test) = synthetic_dataset(&synthetic_config(config))?;
    for d in [&train, &test] {
        let path = dir.join(format!("{}.gbpc", d.split));
        pack_write(&path, &d.clouds)?;
        writeln!(out, "wrote {} ({} clouds)", path.display(), d.len())?;
    }
    writeln!(out, "classes={}", train.class_names.join(","))?;
    Ok(())
}

pub fn ingest(config: &Config, inputs: &[String], default_label: usize, dest: &Path, out: &mut dyn Write) -> CmdResult {
    let n = config.model.points;
    let mut clouds = Vec::with_capacity(inputs.len());
    for (i, spec) in inputs.iter().enumerate() {
        let (path, label) = match spec.rsplit_once(':') {
            Some((p, l)) if !p.is_empty() && l.parse::<usize>().is_ok() => (p, l.parse().unwrap()),
            _ => (spec.as_str(), default_label),
        };
        let mesh = load_off(path)?;
        let sampled = sample_mesh_surface(&mesh, n, &mut stream_rng(config.train.seed, INGEST, i as u64))?;
        let mut cloud = normalize_to_unit_sphere(&sampled)?;
        cloud.label = Some(label);
        writeln!(
            out,
            "{path}: vertices={} faces={} label={label} points={n}",
            mesh.vertices.len(),
            mesh.faces.len()
        )?;
        clouds.push(cloud);
    }
    pack_write(dest, &clouds)?;
    writeln!(out, "wrote {} ({} clouds)", dest.display(), clouds.len())?;
    Ok(())
}
