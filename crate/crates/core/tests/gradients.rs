//! Central finite differences against every analytic gradient, in f64.

use fsrlab_core::memory::MemoryEntry;
use fsrlab_core::methods::{ewc_penalty, lwf_loss, memory_penalty, task_loss, EwcState, LwfState, MethodConfig, MethodKind};
use fsrlab_core::nn::{Activation, Gradients, InitScheme, MlpSpec, MultiHeadMlp, Tensor};
use fsrlab_core::rng::Rng;
use rand::{Rng as _, SeedableRng};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

type M64 = MultiHeadMlp<f64>;

fn model(activation: Activation, seed: u64) -> M64 {
    let spec = MlpSpec {
        input: 5,
        hidden: vec![6, 4],
        heads: vec![3, 2],
        activation,
        init: InitScheme::KaimingUniform,
    };
    let mut m = M64::from_spec(&spec, &mut Rng::seed_from_u64(seed)).unwrap();
    // Non-zero biases so no unit sits exactly at a kink.
    let mut rng = Rng::seed_from_u64(seed + 100);
    let mut flat = m.params_flat();
    flat.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
    m.set_params_flat(&flat).unwrap();
    m
}

fn batch(rows: usize, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::seed_from_u64(seed);
    Tensor::matrix(rows, 5, (0..rows * 5).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn entries(seed: u64) -> Vec<MemoryEntry> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..7)
        .map(|i| {
            let head = i % 2;
            let width = [3, 2][head];
            MemoryEntry {
                input: (0..5).map(|_| rng.gen::<f32>()).collect(),
                logits: (0..width).map(|_| rng.gen_range(-3.0f32..3.0)).collect(),
                label: Some(i % width),
                task_id: head,
                head_id: head,
            }
        })
        .collect()
}

/// Relative error `||a - n|| / max(||a|| + ||n||, 1e-12)`.
fn check(name: &str, m: &M64, f: impl Fn(&M64) -> (f64, Gradients<f64>)) {
    let analytic = f(m).1.to_flat(m);
    let theta = m.params_flat();
    let mut probe = m.clone();
    let mut numeric = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + H;
        probe.set_params_flat(&t).unwrap();
        let up = f(&probe).0;
        t[i] = theta[i] - H;
        probe.set_params_flat(&t).unwrap();
        let down = f(&probe).0;
        numeric.push((up - down) / (2.0 * H));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rel = diff / (norm(&analytic) + norm(&numeric)).max(1e-12);
    assert!(rel < TOL, "{name}: relative error {rel:e}");
    assert!(norm(&analytic) > 0.0, "{name}: gradient vanished, check is vacuous");
}

#[test]
fn cross_entropy_on_each_head() {
    for act in [Activation::Relu, Activation::LeakyRelu { alpha: 0.2 }] {
        let m = model(act, 1);
        let x = batch(9, 2);
        check("ce head 0", &m, |m| task_loss(m, &x, &[0, 1, 2, 0, 1, 2, 0, 1, 2], 0).unwrap());
        check("ce head 1", &m, |m| task_loss(m, &x, &[0, 1, 1, 0, 1, 0, 0, 1, 1], 1).unwrap());
    }
}

#[test]
fn memory_penalties() {
    let m = model(Activation::Relu, 3);
    let mem = entries(4);
    let refs: Vec<&MemoryEntry> = mem.iter().collect();
    for kind in [MethodKind::FsrLogit, MethodKind::FsrDistill, MethodKind::IcarlReg, MethodKind::FsrLogitLab] {
        let cfg = MethodConfig::new(kind).with_lambda(1.7);
        check(kind.name(), &m, |m| memory_penalty(&cfg, m, &refs).unwrap());
    }
}

#[test]
fn ewc_penalty_gradient() {
    let m = model(Activation::LeakyRelu { alpha: 0.2 }, 5);
    let mut rng = Rng::seed_from_u64(6);
    let n = m.parameter_count();
    let state = EwcState {
        anchor: m.params_flat().iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect(),
        fisher: (0..n).map(|_| rng.gen::<f64>()).collect(),
        tasks_seen: 1,
    };
    check("ewc", &m, |m| ewc_penalty(m, &state, 400.0).unwrap());
}

#[test]
fn lwf_total_loss() {
    let m = model(Activation::Relu, 7);
    let state = LwfState {
        snapshot: model(Activation::Relu, 8),
        heads: vec![0],
    };
    let x = batch(6, 9);
    check("lwf", &m, |m| lwf_loss(m, Some(&state), &x, &[0, 1, 0, 1, 1, 0], 1, 1.3, 2.0).unwrap());
}

#[test]
fn assembled_objective() {
    // Task loss on head 1 plus a logit memory term on head 0, as assembled
    // by the training loop.
    let m = model(Activation::Relu, 10);
    let x = batch(5, 11);
    let mem: Vec<MemoryEntry> = entries(12).into_iter().filter(|e| e.head_id == 0).collect();
    let refs: Vec<&MemoryEntry> = mem.iter().collect();
    let cfg = MethodConfig::new(MethodKind::FsrLogit);
    check("task + fsr_logit", &m, |m| {
        let (a, mut g) = task_loss(m, &x, &[1, 0, 1, 0, 0], 1).unwrap();
        let (b, gb) = memory_penalty(&cfg, m, &refs).unwrap();
        g.add(&gb);
        (a + b, g)
    });
}
