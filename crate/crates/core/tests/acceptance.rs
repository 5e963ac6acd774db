//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero when a criterion that can be evaluated here fails.
//!
//! Real ModelNet meshes are not bundled. Point `GBNET_MODELNET_DIR` at a
//! directory of `.off` files to run the ingestion criterion on them.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gbnet::abem::Branches;
use gbnet::attention::{cae_affinity, Caa};
use gbnet::data::{load_off, pack_read, pack_write, sample_mesh_surface, stream_rng, synthetic_dataset, SyntheticConfig};
use gbnet::geometry::{
    descriptor_rows, knn_search, normalize_to_unit_sphere, DescriptorForm, DescriptorItem, NeighborSpace, PointCloud,
};
use gbnet::layers::{Mode, ParamStore, Pass};
use gbnet::model::{Checkpoint, Config, GbnetModel, ModelConfig, Trainer};
use gbnet::tensor::{Tape, Tensor};
use gbnet::verify::run_suite;

type Outcome = Result<String, String>;

struct Line {
    id: usize,
    name: &'static str,
    outcome: Outcome,
    /// Failure caused by missing inputs rather than by the code.
    unavailable: bool,
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// ---------------------------------------------------------------------------

fn gradient_fidelity() -> Outcome {
    let started = Instant::now();
    let results = run_suite(None).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    check(failed.is_empty(), format!("failed targets: {failed:?}"))?;
    check(elapsed < Duration::from_secs(300), format!("suite took {:.1}s", elapsed.as_secs_f64()))?;
    let worst_op = results
        .iter()
        .filter(|r| r.group != "model")
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let model = results.iter().find(|r| r.group == "model").ok_or("no end-to-end target")?;
    check(worst_op <= 1e-4 && model.max_rel_error <= 1e-3, "tolerance exceeded")?;
    Ok(format!(
        "{} targets, worst op rel err {:.2e}, end-to-end {:.2e}, {:.1}s",
        results.len(),
        worst_op,
        model.max_rel_error,
        elapsed.as_secs_f64()
    ))
}

/// Every pair, fully sorted by (distance, index).
fn brute_knn(x: &[f64], n: usize, d: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dist = (0..d).map(|c| (x[i * d + c] - x[j * d + c]).powi(2)).sum::<f64>();
                (dist, j)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.extend(all[..k].iter().map(|p| p.1));
    }
    out
}

fn knn_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = [3, 14, 64];
    let instances = 1002;
    let mut ties = 0;
    for t in 0..instances {
        let d = dims[t % 3];
        let n = rng.gen_range(4..=256);
        let k = rng.gen_range(1..n.min(21));
        // Even instances sit on a coarse integer grid, where f32 distances
        // are exact and ties are common; odd ones are generic.
        let grid = t % 2 == 0;
        let x32: Vec<f32> = (0..n * d)
            .map(|_| if grid { rng.gen_range(-3i32..=3) as f32 } else { rng.gen_range(-1.0f32..1.0) })
            .collect();
        let got = knn_search(&x32, n, d, k, NeighborSpace::Feature).map_err(|e| e.to_string())?;
        let want = if grid {
            let x64: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
            brute_knn(&x64, n, d, k)
        } else {
            // the oracle in the same precision as the search
            let mut out = Vec::with_capacity(n * k);
            for i in 0..n {
                let mut all: Vec<(f32, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let mut s = 0.0f32;
                        for c in 0..d {
                            let v = x32[j * d + c] - x32[i * d + c];
                            s += v * v;
                        }
                        (s, j)
                    })
                    .collect();
                all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                out.extend(all[..k].iter().map(|p| p.1));
            }
            out
        };
        if grid {
            ties += 1;
        }
        check(got.indices() == want.as_slice(), format!("instance {t} (n={n}, d={d}, k={k}) differs"))?;
    }
    Ok(format!("{instances} instances identical ({ties} on a tie-heavy integer grid)"))
}

fn descriptor_correctness() -> Outcome {
    let tri = [[0.0f32, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    let d = descriptor_rows(&tri, DescriptorForm::DEFAULT).map_err(|e| e.to_string())?;
    check(
        d.row(0) == [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0],
        format!("right triangle row {:?}", d.row(0)),
    )?;
    let lengths: Vec<usize> = (1..=8).map(|f| DescriptorForm::new(f).unwrap().len()).collect();
    check(lengths == [3, 8, 11, 11, 12, 14, 18, 24], format!("row lengths {lengths:?}"))?;

    // Translation on a dyadic grid, where every coordinate difference is
    // exact, so derived columns can be compared bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<[f32; 3]> = (0..96)
        .map(|_| [0; 3].map(|_: i32| rng.gen_range(-1024i32..=1024) as f32 / 1024.0))
        .collect();
    let t = [0.375f32, -0.5, 0.8125];
    let moved: Vec<[f32; 3]> = pts.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect();
    for f in 1..=8 {
        let form = DescriptorForm::new(f).unwrap();
        let a = descriptor_rows(&pts, form).map_err(|e| e.to_string())?;
        let b = descriptor_rows(&moved, form).map_err(|e| e.to_string())?;
        for i in 0..pts.len() {
            let (ra, rb) = (a.row(i), b.row(i));
            let mut col = 0;
            for item in form.items() {
                let w = item.width();
                for c in col..col + w {
                    let shifts = matches!(item, DescriptorItem::Point | DescriptorItem::Neighbor1 | DescriptorItem::Neighbor2);
                    let want = if shifts { ra[c] + t[c - col] } else { ra[c] };
                    check(
                        rb[c].to_bits() == want.to_bits(),
                        format!("form {f} point {i} column {c}: {} vs {}", rb[c], want),
                    )?;
                }
                col += w;
            }
        }
    }

    // Rotation: generic cloud, lengths compared relative to their size.
    let generic: Vec<[f64; 3]> = (0..128).map(|_| [0; 3].map(|_: i32| rng.gen_range(-1.0..1.0))).collect();
    let (ax, ay, az) = (0.7f64, -1.1f64, 2.3f64);
    let rx = [[1.0, 0.0, 0.0], [0.0, ax.cos(), -ax.sin()], [0.0, ax.sin(), ax.cos()]];
    let ry = [[ay.cos(), 0.0, ay.sin()], [0.0, 1.0, 0.0], [-ay.sin(), 0.0, ay.cos()]];
    let rz = [[az.cos(), -az.sin(), 0.0], [az.sin(), az.cos(), 0.0], [0.0, 0.0, 1.0]];
    let apply = |m: &[[f64; 3]; 3], p: [f64; 3]| -> [f64; 3] {
        [0, 1, 2].map(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2])
    };
    let to32 = |v: &[[f64; 3]]| -> Vec<[f32; 3]> { v.iter().map(|p| p.map(|c| c as f32)).collect() };
    let rotated: Vec<[f64; 3]> = generic.iter().map(|&p| apply(&rz, apply(&ry, apply(&rx, p)))).collect();
    let form = DescriptorForm::new(8).unwrap();
    let a = descriptor_rows(&to32(&generic), form).map_err(|e| e.to_string())?;
    let b = descriptor_rows(&to32(&rotated), form).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for i in 0..generic.len() {
        for c in 21..24 {
            let (x, y) = (a.row(i)[c] as f64, b.row(i)[c] as f64);
            worst = worst.max((x - y).abs() / x.abs().max(1e-12));
        }
    }
    check(worst <= 1e-5, format!("rotation changed a length by {worst:.2e} relative"))?;
    Ok(format!("example exact, lengths {lengths:?}, translation bit-identical, rotation rel err {worst:.1e}"))
}

fn affinity_algebra() -> Outcome {
    let mut tape = Tape::<f64>::new();
    let s = tape.constant(Tensor::new(vec![2, 2], vec![2.0, 1.0, 1.0, 2.0]).unwrap());
    let a = cae_affinity(&mut tape, s).map_err(|e| e.to_string())?;
    let want = [0.2689, 0.7311, 0.7311, 0.2689];
    let got = tape.value(a).data().to_vec();
    check(got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-4), format!("2x2 example gave {got:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, d) = (3, 40);
    let vals: Vec<f64> = (0..b * d * d).map(|_| rng.gen_range(-30.0..30.0)).collect();
    let s = tape.constant(Tensor::new(vec![b, d, d], vals).unwrap());
    let a = cae_affinity(&mut tape, s).map_err(|e| e.to_string())?;
    let av = tape.value(a).data();
    let mut worst = 0.0f64;
    for m in 0..b {
        for j in 0..d {
            let col: f64 = (0..d).map(|i| av[m * d * d + i * d + j]).sum();
            worst = worst.max((col - 1.0).abs());
        }
    }
    check(worst <= 1e-6, format!("column sum off by {worst:e}"))?;

    // alpha = 0 (its initial value) gives back the input exactly, and no
    // recorded value has two point-sized axes.
    let (n, ch, ratio) = (64, 24, 4);
    let mut store = ParamStore::<f32>::new();
    let caa = Caa::new(&mut store, "caa", n, ch, ratio, &mut rng).map_err(|e| e.to_string())?;
    check(store.get(caa.alpha).data() == [0.0], "alpha does not start at zero")?;
    let f = Tensor::from_fn(vec![2, n, ch], |_| rng.gen_range(-2.0f32..2.0));
    let mut tape = Tape::<f32>::new();
    let (fv, out) = {
        let mut pass = Pass::new(&mut tape, &store, Mode::Train, true);
        let fv = pass.tape.leaf(f.clone(), true);
        (fv, caa.forward(&mut pass, fv).map_err(|e| e.to_string())?)
    };
    check(tape.value(out).data() == tape.value(fv).data(), "alpha = 0 is not the identity")?;
    // Parameters are leaves; the value projection's N -> N weight is one of
    // them and is not an intermediate.
    let square = |tape: &Tape<f32>, n: usize| {
        tape.vars().filter(|&v| !tape.is_leaf(v)).any(|v| {
            let s = tape.shape(v);
            s.len() >= 2 && s[s.len() - 1] == n && s[s.len() - 2] == n
        })
    };
    check(!square(&tape, n), "attention recorded an N x N value")?;

    // Same structural check over a full-width forward pass. The point count
    // differs from every channel width, so a point-by-channel map cannot pass
    // for a point-by-point one.
    let points = 192;
    let model = GbnetModel::<f32>::new(&ModelConfig { points, ..ModelConfig::default() }, 2).map_err(|e| e.to_string())?;
    let (train, _) =
        synthetic_dataset(&SyntheticConfig { train_size: 2, test_size: 0, points, ..Default::default() })
            .map_err(|e| e.to_string())?;
    let mut tape = Tape::<f32>::new();
    {
        let mut pass = Pass::new(&mut tape, &model.store, Mode::Eval, false);
        model.forward(&mut pass, &train.clouds).map_err(|e| e.to_string())?;
    }
    check(!square(&tape, points), "full model recorded an N x N value")?;
    Ok(format!("2x2 example matches, max column-sum error {worst:.1e}, alpha = 0 exact identity, no N x N value"))
}

fn permutation_invariance() -> Outcome {
    let model = GbnetModel::<f32>::new(&ModelConfig::default(), 4).map_err(|e| e.to_string())?;
    let (_, test) = synthetic_dataset(&SyntheticConfig { train_size: 0, test_size: 1, seed: 4, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let cloud = &test.clouds[0];
    let base = model.predict_logits(std::slice::from_ref(cloud)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f32;
    let perms: Vec<PointCloud> = (0..100)
        .map(|_| {
            let mut order: Vec<usize> = (0..cloud.len()).collect();
            order.shuffle(&mut rng);
            cloud.reordered(&order)
        })
        .collect();
    for chunk in perms.chunks(10) {
        let logits = model.predict_logits(chunk).map_err(|e| e.to_string())?;
        let c = base.numel();
        for row in logits.data().chunks_exact(c) {
            for (a, b) in row.iter().zip(base.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(worst <= 1e-5, format!("max abs logit change {worst:e}"))?;
    Ok(format!("100 permutations, max abs logit change {worst:e}"))
}

fn small_config() -> Config {
    let mut c = Config::default();
    c.model.points = 64;
    c.model.k = 8;
    c.model.scales = vec![16, 16, 32, 32];
    c.model.fuse_width = 64;
    c.model.head = vec![32, 16];
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c.train.seed = 17;
    c.data.train_size = 36;
    c.data.test_size = 12;
    c
}

fn synthetic_for(c: &Config) -> Result<(gbnet::data::Dataset, gbnet::data::Dataset), String> {
    synthetic_dataset(&SyntheticConfig {
        train_size: c.data.train_size,
        test_size: c.data.test_size,
        points: c.model.points,
        jitter: c.data.jitter,
        seed: c.train.seed,
    })
    .map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let c = small_config();
    let (train, test) = synthetic_for(&c)?;
    let run = || -> Result<Trainer, String> {
        let model = GbnetModel::new(&c.model, c.train.seed).map_err(|e| e.to_string())?;
        let mut t = Trainer::new(model, c.train.clone());
        t.fit(&train, &test, |_, _, _| Ok(())).map_err(|e| e.to_string())?;
        Ok(t)
    };
    let (a, b) = (run()?, run()?);
    let mut count = 0;
    for ((_, ea), (_, eb)) in a.model.store.entries().zip(b.model.store.entries()) {
        let same = ea.name == eb.name
            && ea.value.data().iter().zip(eb.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        check(same, format!("entry {} differs between runs", ea.name))?;
        count += ea.value.numel();
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.gbnc");
    gbnet::model::save_checkpoint(&path, &Checkpoint::from_trainer(&c, &a)).map_err(|e| e.to_string())?;
    let loaded = gbnet::model::load_checkpoint(&path, Some(6)).map_err(|e| e.to_string())?;
    let before = a.model.predict_logits(&test.clouds).map_err(|e| e.to_string())?;
    let after = loaded.model.predict_logits(&test.clouds).map_err(|e| e.to_string())?;
    let same = before.data().iter().zip(after.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    check(same, "checkpoint round trip changed the logits")?;
    Ok(format!("{count} stored values bit-identical across runs, checkpoint round trip bit-exact"))
}

struct Learning {
    epochs: usize,
    /// Test accuracy after each epoch.
    test_acc: Vec<f64>,
    /// Wall-clock time at the end of each epoch.
    at: Vec<Duration>,
}

impl Learning {
    fn last(&self) -> f64 {
        self.test_acc.last().copied().unwrap_or(0.0)
    }

    fn first_reaching(&self, target: f64) -> Option<usize> {
        self.test_acc.iter().position(|&a| a >= target)
    }
}

const BUDGET: Duration = Duration::from_secs(30 * 60);

/// Trains on the synthetic benchmark for `epoch_limit` epochs, or until the
/// wall-clock budget runs out.
fn learn(config: &Config, epoch_limit: usize, label: &str) -> Result<Learning, String> {
    let (train, test) = synthetic_for(config)?;
    let model = GbnetModel::new(&config.model, config.train.seed).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(model, config.train.clone());
    let started = Instant::now();
    let mut run = Learning { epochs: 0, test_acc: Vec::new(), at: Vec::new() };
    let mut out_of_time = false;
    let result = trainer.fit(&train, &test, |rec, _, _| {
        run.epochs = rec.epoch;
        run.test_acc.push(rec.test_acc);
        run.at.push(started.elapsed());
        println!(
            "    [{label}] epoch {} loss {:.4} train acc {:.3} test acc {:.3} ({:.0}s)",
            rec.epoch,
            rec.loss,
            rec.acc,
            rec.test_acc,
            started.elapsed().as_secs_f64()
        );
        if rec.epoch >= epoch_limit || started.elapsed() > BUDGET {
            out_of_time = started.elapsed() > BUDGET;
            return Err(gbnet::Error::Format("stop".into()));
        }
        Ok(())
    });
    if let Err(e) = result {
        if run.epochs < epoch_limit && !out_of_time {
            return Err(e.to_string());
        }
    }
    Ok(run)
}

/// The cosine schedule spans the epochs that fit in the time budget. No
/// early stop, so the ablations can be compared after the same schedule.
fn benchmark_config() -> Config {
    let mut c = Config::default();
    c.train.epochs = 7;
    c.train.target_accuracy = 0.0;
    c
}

fn desk_learning(full: &mut Option<Learning>) -> Outcome {
    let c = benchmark_config();
    let r = learn(&c, c.train.epochs, "full")?;
    let hit = r.first_reaching(0.9);
    let summary = match hit {
        Some(i) => format!(
            "test acc {:.3} at epoch {} after {:.1} min",
            r.test_acc[i],
            i + 1,
            r.at[i].as_secs_f64() / 60.0
        ),
        None => format!("never reached 0.9 in {} epochs, last {:.3}", r.epochs, r.last()),
    };
    let ok = hit.is_some_and(|i| i < 50 && r.at[i] <= BUDGET);
    *full = Some(r);
    check(ok, summary.clone())?;
    Ok(summary)
}

/// Accuracy after the whole annealed schedule, where the learning rate has
/// come down and the epoch-to-epoch noise has settled.
fn ablation(full: Option<&Learning>) -> Outcome {
    let full = full.ok_or("the full model did not train")?;
    let budget = full.epochs;
    let mut results = Vec::new();
    for (name, form) in [("descriptor-only", 6u8), ("coordinates-only", 1u8)] {
        let mut c = benchmark_config();
        c.model.branches = Branches::Plain;
        c.model.attention = false;
        c.model.descriptor_form = DescriptorForm::new(form).unwrap();
        let r = learn(&c, budget, name)?;
        results.push((name, r.last()));
    }
    let summary = format!(
        "matched seed, final test acc after {budget} epochs: full {:.3}, {} {:.3}, {} {:.3}",
        full.last(),
        results[0].0,
        results[0].1,
        results[1].0,
        results[1].1
    );
    check(results.iter().all(|r| full.last() >= r.1), summary.clone())?;
    Ok(summary)
}

fn off_pipeline() -> (Outcome, bool) {
    let real: Vec<PathBuf> = std::env::var_os("GBNET_MODELNET_DIR")
        .map(|d| {
            let mut v: Vec<PathBuf> = walk(Path::new(&d));
            v.sort();
            v
        })
        .unwrap_or_default();
    let files = if real.len() >= 2 {
        real.clone()
    } else {
        vec![fixture("cube.off"), fixture("pyramid.off")]
    };
    let run = || -> Result<String, String> {
        let model = GbnetModel::<f32>::new(&ModelConfig::default(), 1).map_err(|e| e.to_string())?;
        let mut clouds = Vec::new();
        for (i, f) in files.iter().enumerate() {
            let mesh = load_off(f).map_err(|e| e.to_string())?;
            let sampled = sample_mesh_surface(&mesh, 256, &mut stream_rng(1, 6, i as u64)).map_err(|e| e.to_string())?;
            let mut cloud = normalize_to_unit_sphere(&sampled).map_err(|e| e.to_string())?;
            check(cloud.is_normalized(1e-4), format!("{} is not normalized", f.display()))?;
            cloud.label = Some(i % 6);
            clouds.push(cloud);
        }
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let pack = dir.path().join("ingested.gbpc");
        pack_write(&pack, &clouds).map_err(|e| e.to_string())?;
        let back = pack_read(&pack).map_err(|e| e.to_string())?;
        check(back == clouds, "pack round trip changed the clouds")?;
        let logits = model.predict_logits(&back).map_err(|e| e.to_string())?;
        check(logits.shape() == [files.len(), 6], "unexpected logits shape")?;
        Ok(format!("{} meshes sampled, packed and classified", files.len()))
    };
    match run() {
        Ok(msg) if real.len() >= 2 => (Ok(format!("{msg} from {}", std::env::var("GBNET_MODELNET_DIR").unwrap())), false),
        Ok(msg) => (
            Err(format!(
                "no real ModelNet OFF files available (set GBNET_MODELNET_DIR); \
                 the same path ran on ModelNet-format fixtures: {msg}"
            )),
            true,
        ),
        Err(e) => (Err(e), false),
    }
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("off")) {
                out.push(p);
            }
        }
    }
    out
}

fn main() {
    // `cargo test -- <filter>` passes extra arguments; `--list` expects no output
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // bare numbers select criteria, e.g. `cargo test --test acceptance -- 4 5`
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| only.is_empty() || only.contains(&id);
    let mut lines = Vec::new();
    let mut record = |id, name, outcome: Outcome, unavailable| {
        let (tag, detail) = match &outcome {
            Ok(m) => ("PASS", m.clone()),
            Err(m) => ("FAIL", m.clone()),
        };
        println!("{tag} {id} {name}: {detail}");
        lines.push(Line {
            id,
            name,
            outcome,
            unavailable,
        });
    };
    if wanted(1) {
        record(1, "gradient fidelity", gradient_fidelity(), false);
    }
    if wanted(2) {
        record(2, "kNN oracle equivalence", knn_oracle(), false);
    }
    if wanted(3) {
        record(3, "descriptor correctness", descriptor_correctness(), false);
    }
    if wanted(4) {
        record(4, "affinity algebra", affinity_algebra(), false);
    }
    if wanted(5) {
        record(5, "permutation invariance", permutation_invariance(), false);
    }
    if wanted(6) {
        record(6, "determinism", determinism(), false);
    }
    // the ablation compares against the full run of criterion 7
    let mut full = None;
    if wanted(7) || wanted(8) {
        record(7, "desk-scale learning", desk_learning(&mut full), false);
    }
    if wanted(8) {
        record(8, "ablation direction", ablation(full.as_ref()), false);
    }
    if wanted(9) {
        let (outcome, unavailable) = off_pipeline();
        record(9, "OFF ingestion on ModelNet files", outcome, unavailable);
    }

    let failed: Vec<_> = lines.iter().filter(|l| l.outcome.is_err() && !l.unavailable).collect();
    let missing: Vec<_> = lines.iter().filter(|l| l.unavailable).map(|l| l.id).collect();
    if !missing.is_empty() {
        println!("criteria {missing:?} could not be evaluated with the data on this machine");
    }
    if !failed.is_empty() {
        for l in &failed {
            eprintln!("criterion {} ({}) failed", l.id, l.name);
        }
        std::process::exit(1);
    }
}
