//! Finite-difference verification of every differentiable building block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::abem::{batch_graph, Abem, AbemSpec, Branches};
use crate::attention::{cae_affinity, Caa};
use crate::error::{Error, Result};
use crate::geometry::{normalize_to_unit_sphere, BatchNeighbors, NeighborSpace, PointCloud};
use crate::layers::{BatchNorm, EntryKind, Lfc, Mlp, Mode, ParamStore, Pass, LEAKY_SLOPE};
use crate::model::{cross_entropy, GbnetModel, ModelConfig};
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, Tape, Tensor, Var};

/// Fixed projection weights `sin(0.7·i + 0.3)`, so the checked scalar
/// depends on every output element with distinct weights.
pub fn projection(shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| (0.7 * i as f64 + 0.3).sin())
}

/// `Σ y ⊙ projection(shape(y))`.
pub fn project(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let r = tape.constant(projection(tape.shape(y)));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

/// Gradient check of `f` with respect to its `inputs` and every learnable
/// entry of `store`. `f` receives the input variables; store entries are
/// bound to checked variables before it runs.
pub fn check_with_store<F>(
    store: &ParamStore<f64>,
    mode: Mode,
    inputs: &[Tensor<f64>],
    cfg: &GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Pass<'_, f64>, &[Var]) -> Result<Var>,
{
    let params: Vec<_> = store
        .entries()
        .filter(|(_, e)| e.kind == EntryKind::Param)
        .map(|(id, e)| (id, e.value.clone()))
        .collect();
    let mut all: Vec<Tensor<f64>> = inputs.to_vec();
    all.extend(params.iter().map(|(_, v)| v.clone()));
    let n_in = inputs.len();
    grad_check(
        |tape, vars| {
            let y = {
                let mut pass = Pass::new(tape, store, mode, false);
                for ((id, _), &v) in params.iter().zip(&vars[n_in..]) {
                    pass.bind(*id, v);
                }
                f(&mut pass, &vars[..n_in])?
            };
            project(tape, y)
        },
        &all,
        cfg,
    )
}

/// One named gradient check of the verification suite.
pub struct Target {
    pub name: &'static str,
    /// Filter key (`--target`).
    pub group: &'static str,
    pub tolerance: f64,
    run: fn(&GradCheckConfig) -> Result<GradCheckReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetOutcome {
    pub name: &'static str,
    pub group: &'static str,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded_ties: usize,
    pub failures: usize,
    pub passed: bool,
}

/// Tolerance of every per-operation check.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance of the end-to-end check of the reduced model.
pub const MODEL_TOLERANCE: f64 = 1e-3;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn graph(x: &Tensor<f64>, k: usize) -> Result<BatchNeighbors> {
    BatchNeighbors::new(&batch_graph(x, k, NeighborSpace::Feature)?)
}

/// Runs `f` over its inputs alone (no store).
fn plain<F>(inputs: &[Tensor<f64>], cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check(
        |t, v| {
            let y = f(t, v)?;
            project(t, y)
        },
        inputs,
        cfg,
    )
}

/// Worst of several reports.
fn merge(reports: Vec<GradCheckReport>) -> GradCheckReport {
    reports
        .into_iter()
        .reduce(|a, b| GradCheckReport {
            max_rel_error: a.max_rel_error.max(b.max_rel_error),
            worst: if b.max_rel_error > a.max_rel_error { b.worst } else { a.worst },
            checked: a.checked + b.checked,
            excluded_ties: a.excluded_ties + b.excluded_ties,
            negligible: a.negligible + b.negligible,
            failures: a.failures + b.failures,
            passed: a.passed && b.passed,
        })
        .expect("at least one report")
}

fn both_modes(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    cfg: &GradCheckConfig,
    f: impl Fn(&mut Pass<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut out = Vec::new();
    for mode in [Mode::Eval, Mode::Train] {
        out.push(check_with_store(store, mode, inputs, cfg, &f)?);
    }
    Ok(merge(out))
}

fn check_matmul(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    plain(&[rand_tensor(&[2, 3, 4], 1), rand_tensor(&[2, 4, 5], 2)], cfg, |t, v| t.matmul(v[0], v[1]))
}

fn check_softmax(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let x = rand_tensor(&[3, 4, 5], 3);
    merge_all((0..3).map(|axis| plain(std::slice::from_ref(&x), cfg, |t, v| t.softmax(v[0], axis))))
}

fn merge_all(it: impl Iterator<Item = Result<GradCheckReport>>) -> Result<GradCheckReport> {
    Ok(merge(it.collect::<Result<Vec<_>>>()?))
}

fn check_reductions(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let x = rand_tensor(&[3, 4, 5], 4);
    let max = (0..3).map(|axis| plain(std::slice::from_ref(&x), cfg, |t, v| Ok(t.reduce_max(v[0], axis)?.0)));
    let mean = (0..3).map(|axis| plain(std::slice::from_ref(&x), cfg, |t, v| t.reduce_mean(v[0], axis)));
    merge_all(max.chain(mean))
}

fn check_shape_ops(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (a, b) = (rand_tensor(&[2, 3, 4], 5), rand_tensor(&[2, 3, 2], 6));
    merge_all(
        [
            plain(&[a.clone(), b.clone()], cfg, |t, v| t.concat(&[v[0], v[1]], 2)),
            plain(std::slice::from_ref(&a), cfg, |t, v| t.permute(v[0], &[2, 0, 1])),
            plain(std::slice::from_ref(&a), cfg, |t, v| t.slice(v[0], 1, 1, 2)),
            plain(std::slice::from_ref(&a), cfg, |t, v| Ok(t.leaky_relu(v[0], 0.2))),
            plain(&[a.clone(), a.map(|x| x * 0.5 + 0.1)], cfg, |t, v| {
                let p = t.mul(v[0], v[1])?;
                t.sub(p, v[0])
            }),
        ]
        .into_iter(),
    )
}

fn check_mlp(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let layer = Mlp::new(&mut store, "mlp", 4, 3, &mut ChaCha8Rng::seed_from_u64(10))?;
    both_modes(&store, &[rand_tensor(&[2, 5, 4], 11)], cfg, |p, v| layer.forward(p, v[0]))
}

fn check_lfc(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let layer = Lfc::new(&mut store, "lfc", 2, 3, 3, &mut ChaCha8Rng::seed_from_u64(12))?;
    both_modes(&store, &[rand_tensor(&[6, 3, 2], 13)], cfg, |p, v| layer.forward(p, v[0]))
}

fn check_edgeconv(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let layer = Mlp::new(&mut store, "edgeconv", 6, 4, &mut ChaCha8Rng::seed_from_u64(14))?;
    let x = rand_tensor(&[2, 8, 3], 15);
    let nbr = graph(&x, 3)?;
    both_modes(&store, &[x], cfg, |p, v| layer.edgeconv(p, v[0], &nbr))
}

fn check_edgelfc(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let layer = Lfc::new(&mut store, "edgelfc", 6, 4, 3, &mut ChaCha8Rng::seed_from_u64(16))?;
    let x = rand_tensor(&[2, 8, 3], 17);
    let nbr = graph(&x, 3)?;
    both_modes(&store, &[x], cfg, |p, v| layer.edgelfc(p, v[0], &nbr))
}

fn check_batchnorm(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 3)?;
    store.get_mut(bn.running_mean).data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
    store.get_mut(bn.running_var).data_mut().copy_from_slice(&[0.5, 2.0, 1.5]);
    both_modes(&store, &[rand_tensor(&[6, 3], 18)], cfg, |p, v| bn.forward(p, v[0], Some(LEAKY_SLOPE)))
}

fn caa_layer(points: usize, channels: usize, seed: u64) -> Result<(ParamStore<f64>, Caa)> {
    let mut store = ParamStore::new();
    let caa = Caa::new(&mut store, "caa", points, channels, 4, &mut ChaCha8Rng::seed_from_u64(seed))?;
    store.get_mut(caa.alpha).data_mut()[0] = 0.7;
    Ok((store, caa))
}

fn check_ccc(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (store, caa) = caa_layer(8, 4, 20)?;
    both_modes(&store, &[rand_tensor(&[1, 8, 4], 21)], cfg, |p, v| Ok(caa.ccc(p, v[0])?.2))
}

fn check_cae(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    plain(&[rand_tensor(&[2, 4, 4], 22).map(|x| 3.0 * x)], cfg, |t, v| cae_affinity(t, v[0]))
}

fn check_caa(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (store, caa) = caa_layer(8, 4, 23)?;
    both_modes(&store, &[rand_tensor(&[2, 8, 4], 24)], cfg, |p, v| caa.forward(p, v[0]))
}

fn abem_module(branches: Branches, seed: u64) -> Result<(ParamStore<f64>, Abem)> {
    let spec = AbemSpec {
        points: 8,
        k: 2,
        d_in: 3,
        d_out: 4,
        ratio: 4,
        branches,
        attention: true,
    };
    let mut store = ParamStore::new();
    let m = Abem::new(&mut store, "abem", spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
    for caa in [&m.caa_m, &m.caa_a].into_iter().flatten() {
        store.get_mut(caa.alpha).data_mut()[0] = 0.6;
    }
    Ok((store, m))
}

fn check_abem(branches: Branches, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (store, m) = abem_module(branches, seed)?;
    let x = rand_tensor(&[1, 8, 3], seed + 1);
    let nbr = graph(&x, 2)?;
    both_modes(&store, &[x], cfg, |p, v| Ok(m.forward(p, v[0], &nbr)?.f_out))
}

fn check_loss(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let z = rand_tensor(&[4, 3], 30).map(|x| 2.0 * x);
    plain(&[z], cfg, |t, v| cross_entropy(t, v[0], &[2, 0, 1, 1]))
}

/// Reduced-width model with calibrated running statistics and nonzero
/// attention weights, plus a batch of clouds and labels.
pub fn reduced_model() -> Result<(GbnetModel<f64>, Vec<PointCloud>, Vec<usize>)> {
    let cfg = ModelConfig::reduced();
    let mut model = GbnetModel::<f64>::new(&cfg, 7)?;
    let clouds: Vec<PointCloud> = (0..2)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(40 + i);
            let pts = (0..cfg.points).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0f32..1.0))).collect();
            normalize_to_unit_sphere(&PointCloud::new(pts, None))
        })
        .collect::<Result<_>>()?;
    let ids: Vec<_> = model.store.entries().map(|(id, _)| id).collect();
    for id in ids {
        if GbnetModel::<f64>::is_alpha(model.store.name(id)) {
            model.store.get_mut(id).data_mut()[0] = 0.5;
        }
    }
    // running statistics close to the batch statistics
    for _ in 0..40 {
        let mut tape = Tape::new();
        let outcome = {
            let mut pass = Pass::new(&mut tape, &model.store, Mode::Train, false);
            model.forward(&mut pass, &clouds)?;
            pass.finish()
        };
        outcome.apply_bn_updates(&mut model.store);
    }
    Ok((model, clouds, vec![2, 0]))
}

fn check_model(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (model, clouds, labels) = reduced_model()?;
    check_with_store(&model.store, Mode::Eval, &[], cfg, |p, _| {
        let out = model.forward(p, &clouds)?;
        cross_entropy(p.tape, out.logits, &labels)
    })
}

/// Every target of the suite, in run order.
pub fn targets() -> Vec<Target> {
    let t = |name, group, run| Target {
        name,
        group,
        tolerance: OP_TOLERANCE,
        run,
    };
    vec![
        t("matmul", "tensor", check_matmul),
        t("shape_ops", "tensor", check_shape_ops),
        t("softmax", "softmax", check_softmax),
        t("reductions", "reductions", check_reductions),
        t("mlp", "mlp", check_mlp),
        t("lfc", "lfc", check_lfc),
        t("edgeconv", "edgeconv", check_edgeconv),
        t("edgelfc", "edgelfc", check_edgelfc),
        t("batchnorm", "batchnorm", check_batchnorm),
        t("ccc", "caa", check_ccc),
        t("cae", "caa", check_cae),
        t("caa", "caa", check_caa),
        t("abem_prominent", "abem", |c| check_abem(Branches::ProminentOnly, 50, c)),
        t("abem_finegrained", "abem", |c| check_abem(Branches::FineGrainedOnly, 52, c)),
        t("abem_full", "abem", |c| check_abem(Branches::Full, 54, c)),
        t("cross_entropy", "loss", check_loss),
        Target {
            name: "model_end_to_end",
            group: "model",
            tolerance: MODEL_TOLERANCE,
            run: check_model,
        },
    ]
}

/// Names accepted by [`run_suite`]'s filter: groups and target names.
pub fn target_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = targets().iter().flat_map(|t| [t.group, t.name]).collect();
    names.sort_unstable();
    names.dedup();
    names
}

/// Runs the targets whose group or name equals `filter` (all when `None`).
pub fn run_suite(filter: Option<&str>) -> Result<Vec<TargetOutcome>> {
    let selected: Vec<Target> = targets()
        .into_iter()
        .filter(|t| filter.is_none_or(|f| t.group == f || t.name == f))
        .collect();
    if selected.is_empty() {
        return Err(Error::invalid(
            "gradcheck",
            format!("unknown target `{}`; known: {}", filter.unwrap_or(""), target_names().join(", ")),
        ));
    }
    selected
        .iter()
        .map(|t| {
            let cfg = GradCheckConfig::default().with_tolerance(t.tolerance);
            let r = (t.run)(&cfg)?;
            Ok(TargetOutcome {
                name: t.name,
                group: t.group,
                tolerance: t.tolerance,
                max_rel_error: r.max_rel_error,
                checked: r.checked,
                excluded_ties: r.excluded_ties,
                failures: r.failures,
                passed: r.passed && r.checked > 0,
            })
        })
        .collect()
}
