//! Values computed outside this crate (numpy scripts, closed forms, brute
//! force) and frozen here.

use std::io::Write;

use fsrlab_core::memory::{record_logits, select_gradient_based, select_herding, GradientProbe, MemoryEntry};
use fsrlab_core::methods::{empirical_fisher, memory_penalty, MethodConfig, MethodKind};
use fsrlab_core::nn::{
    adam_step, cross_entropy, kl_distill, logit_match, orthogonal, sigmoid_ce, Activation, AdamMoments, DenseLayer,
    Model, MultiHeadMlp, OptimizerSpec, Tensor,
};
use fsrlab_core::rng::Rng;
use fsrlab_core::tasks::{encode_idx, load_idx, LabeledDataset};
use rand::SeedableRng;

fn layer(rows: usize, cols: usize, w: &[f64], b: &[f64], act: Activation) -> DenseLayer<f64> {
    DenseLayer::new(Tensor::matrix(rows, cols, w.to_vec()).unwrap(), Tensor::vector(b.to_vec()), act).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

#[test]
fn forward_matches_matrix_oracle() {
    let trunk = layer(
        4,
        3,
        &[0.5, -0.25, 0.125, -0.75, 0.5, 0.25, 0.3, 0.2, -0.1, 0.05, -0.6, 0.9],
        &[0.1, -0.2, 0.0, 0.05],
        Activation::Relu,
    );
    let head = layer(2, 4, &[0.4, -0.3, 0.2, 0.7, -0.5, 0.6, 0.1, -0.2], &[0.01, -0.02], Activation::Identity);
    let m = MultiHeadMlp::new(vec![trunk], vec![head]).unwrap();
    let x = Tensor::matrix(3, 3, vec![0.2, 0.4, 0.6, 1.0, 0.0, 0.5, 0.9, 0.8, 0.1]).unwrap();
    let z = m.predict(&x, 0).unwrap();
    let expect = [0.348, -0.1715, 0.71, -0.43625, 0.239, -0.15925];
    for (a, b) in z.data().iter().zip(expect) {
        assert!(close(*a, b, 1e-6), "{a} vs {b}");
    }
}

#[test]
fn cross_entropy_matches_direct_summation() {
    let z = Tensor::matrix(4, 3, vec![1.5, -0.5, 0.25, 0.0, 2.0, -1.0, -0.3, 0.3, 0.9, 4.0, 1.0, -2.0]).unwrap();
    let (loss, g) = cross_entropy(&z, &[2, 1, 0, 0]).unwrap();
    assert!(close(loss, 0.909_483_111_762_942_7, 1e-6));
    let expect = [
        0.175_828_494_005_443_5,
        0.023_795_799_037_293_758,
        -0.199_624_293_042_737_27,
        0.028_548_799_846_148_62,
        -0.039_051_316_379_665_135,
        0.010_502_516_533_516_512,
        -0.209_298_208_133_125_33,
        0.074_163_500_170_213_88,
        0.135_134_707_962_911_4,
        -0.012_417_447_075_655_12,
        0.011_828_538_805_456_012,
        0.000_588_908_270_199_170_2,
    ];
    for (a, b) in g.data().iter().zip(expect) {
        assert!(close(*a, b, 1e-6), "{a} vs {b}");
    }
}

#[test]
fn distill_matches_direct_summation() {
    let (l, _) = kl_distill(&[1.0, 0.0], &[0.0, 1.0], 2.0).unwrap();
    assert!(close(l, 0.122_459_331_201_854_6, 1e-9));
}

#[test]
fn sigmoid_ce_saturates_where_logit_matching_does_not() {
    let (_, g) = sigmoid_ce(&[5.0f64], &[10.0]).unwrap();
    assert!(close(g[0], -0.006_647_453_055_582_342, 1e-9));
    assert!(g[0].abs() < 0.007);
    let (_, g) = logit_match(&[5.0f64], &[10.0]).unwrap();
    assert_eq!(g, vec![-10.0]);
}

#[test]
fn adam_first_two_steps() {
    // eps sits outside the square root of the bias-corrected second moment.
    let mut p = [0.0f64];
    let mut m = AdamMoments::zeros(1);
    adam_step(&mut p, &[1.0], &mut m, 1e-4, 0.9, 0.999, 1e-8, 0.0).unwrap();
    assert!((p[0] - -9.999_999_900_000_002e-5).abs() < 1e-18);
    adam_step(&mut p, &[1.0], &mut m, 1e-4, 0.9, 0.999, 1e-8, 0.0).unwrap();
    assert!((p[0] - -1.999_999_979_999_993_4e-4).abs() < 1e-18);
}

#[test]
fn orthogonal_784_is_orthogonal_with_unit_determinant() {
    let n = 784;
    let q = orthogonal(n, n, &mut Rng::seed_from_u64(17));
    let q = nalgebra::DMatrix::from_row_slice(n, n, &q);
    let gram = q.transpose() * &q;
    let worst = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "max |QtQ - I| = {worst}");
    let det = q.lu().determinant();
    assert!((det.abs() - 1.0).abs() < 1e-4, "det = {det}");
}

#[test]
fn idx_fixture_decodes_exact_pixels() {
    let dir = tempfile::tempdir().unwrap();
    // Two 3x3 images, bytes laid out by hand.
    let pixels: Vec<u8> = vec![0, 255, 0, 255, 255, 255, 0, 255, 0, 10, 20, 30, 40, 50, 60, 70, 80, 90];
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 3];
    images.extend(&pixels);
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 1];
    assert_eq!(encode_idx(3, 3, &pixels, &[7, 1]), (images.clone(), labels.clone()));
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab.gz"));
    std::fs::write(&ip, &images).unwrap();
    let mut gz = flate2::write::GzEncoder::new(std::fs::File::create(&lp).unwrap(), flate2::Compression::default());
    gz.write_all(&labels).unwrap();
    gz.finish().unwrap();
    let ds = load_idx(&ip, &lp).unwrap();
    assert_eq!(ds.labels, vec![7, 1]);
    assert_eq!(ds.dim(), 9);
    let expect: Vec<f32> = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    assert_eq!(ds.inputs.data(), &expect[..]);

    std::fs::write(&ip, b"").unwrap();
    assert!(load_idx(&ip, &lp).unwrap_err().to_string().contains("truncated header"));
    let (ten, _) = encode_idx(1, 1, &[0; 10], &[0; 10]);
    let (_, nine) = encode_idx(1, 1, &[0; 9], &[0; 9]);
    std::fs::write(&ip, ten).unwrap();
    std::fs::write(&lp, nine).unwrap();
    assert!(load_idx(&ip, &lp).unwrap_err().to_string().contains("count mismatch"));
}

/// Greedy herding evaluated the slow way: try every remaining point and
/// measure the distance of the resulting mean directly.
fn brute_force_herding(points: &[[f64; 2]], m: usize) -> Vec<usize> {
    let mu = [0, 1].map(|k| points.iter().map(|p| p[k]).sum::<f64>() / points.len() as f64);
    let mut picks: Vec<usize> = Vec::new();
    for _ in 0..m {
        let best = (0..points.len())
            .filter(|i| !picks.contains(i))
            .map(|i| {
                let sel: Vec<usize> = picks.iter().copied().chain([i]).collect();
                let mean = [0, 1].map(|k| sel.iter().map(|&j| points[j][k]).sum::<f64>() / sel.len() as f64);
                (i, (mean[0] - mu[0]).hypot(mean[1] - mu[1]))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        picks.push(best.0);
    }
    picks
}

#[test]
fn herding_toy_matches_brute_force() {
    let points = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [10.0, 10.0]];
    let x = Tensor::from_rows(&points.map(|p| p.map(|v| v as f32))).unwrap();
    let (picks, _) = select_herding(&x, &[0, 1, 2, 3], 2).unwrap();
    let oracle = brute_force_herding(&points, 2);
    assert_eq!(picks, oracle);
    // (1,0) and (0,1) tie for nearest to the mean (2.75, 2.75); the lower
    // index wins, and its twin then beats the far point.
    assert_eq!(oracle, vec![1, 2]);
}

#[test]
fn gradient_selection_drops_the_outlier() {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..10 {
        let e = i as f32 * 0.01;
        rows.push([0.1 + e, 0.15 - e]);
        labels.push(0);
        rows.push([0.9 - e, 0.85 + e]);
        labels.push(1);
    }
    // Labelled 0 but sitting inside class 1.
    rows.push([0.88, 0.9]);
    labels.push(0);
    let outlier = rows.len() - 1;
    let ds = LabeledDataset::new(Tensor::from_rows(&rows).unwrap(), labels, 2, "toy").unwrap();
    let spec = fsrlab_core::nn::MlpSpec::single_head(2, vec![8], 2);
    let model = Model::from_spec(&spec, &mut Rng::seed_from_u64(3)).unwrap();
    let probe = GradientProbe {
        epochs: 20,
        batch_size: 4,
        optimizer: OptimizerSpec::adam(0.05, 0.0),
    };
    let (picks, scores) = select_gradient_based(&model, &ds, 0, &[10, 10], &probe, &mut Rng::seed_from_u64(4)).unwrap();
    let inlier_max = (0..outlier).filter(|&i| ds.labels[i] == 0).map(|i| scores[i]).fold(0.0, f64::max);
    assert!(scores[outlier] > inlier_max, "outlier {} vs inliers {inlier_max}", scores[outlier]);
    assert!(!picks.contains(&outlier));
    assert_eq!(picks.len(), 20);
}

#[test]
fn recorded_logits_match_forward_oracle() {
    let w = [0.2f32, -0.1, 0.4, 0.3, 0.0, -0.5];
    let head = DenseLayer::new(Tensor::matrix(2, 3, w.to_vec()).unwrap(), Tensor::vector(vec![0.05, -0.05]), Activation::Identity)
        .unwrap();
    let m = MultiHeadMlp::new(vec![], vec![head]).unwrap();
    let ds = LabeledDataset::new(Tensor::matrix(2, 3, vec![1.0, 0.5, 0.25, 0.0, 1.0, 1.0]).unwrap(), vec![0, 1], 2, "x")
        .unwrap();
    let e = record_logits(&m, &ds, &[1, 0], 0, 0).unwrap();
    // Row 1: [ -0.1 + 0.4 + 0.05, 0 - 0.5 - 0.05 ]; row 0: [0.2 - 0.05 + 0.1 + 0.05, 0.3 - 0.125 - 0.05]
    let expect = [[0.35, -0.55], [0.3, 0.125]];
    for (entry, want) in e.iter().zip(expect) {
        for (a, b) in entry.logits.iter().zip(want) {
            assert!((f64::from(*a) - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn logit_penalty_of_a_head_perturbation_is_a_quadratic_form() {
    let trunk = layer(3, 2, &[0.5, -0.2, 0.1, 0.7, -0.4, 0.3], &[0.1, 0.0, 0.2], Activation::Relu);
    let head = layer(2, 3, &[0.3, -0.1, 0.2, 0.0, 0.4, -0.3], &[0.0, 0.1], Activation::Identity);
    let base = MultiHeadMlp::new(vec![trunk], vec![head]).unwrap();
    let x = [0.6f64, 0.3];
    let z_ref = base.predict(&Tensor::matrix(1, 2, x.to_vec()).unwrap(), 0).unwrap();
    let entry = MemoryEntry {
        input: x.iter().map(|&v| v as f32).collect(),
        logits: z_ref.data().iter().map(|&v| v as f32).collect(),
        label: None,
        task_id: 0,
        head_id: 0,
    };
    // Inputs of the head: relu([0.5*0.6 - 0.2*0.3 + 0.1, 0.1*0.6 + 0.7*0.3, -0.4*0.6 + 0.3*0.3 + 0.2])
    let a = [0.34, 0.27, 0.05];
    let dw = [0.01, -0.02, 0.03, 0.02, 0.01, -0.01];
    let db = [0.005, -0.01];
    let mut perturbed = base.clone();
    {
        let h = perturbed.head_mut(0);
        h.weight.data_mut().iter_mut().zip(dw).for_each(|(w, d)| *w += d);
        h.bias.data_mut().iter_mut().zip(db).for_each(|(b, d)| *b += d);
    }
    // ||A delta||^2 with A the head-input design row, per output.
    let want: f64 = (0..2)
        .map(|k| (0..3).map(|i| dw[k * 3 + i] * a[i]).sum::<f64>() + db[k])
        .map(|v| v * v)
        .sum();
    let cfg = MethodConfig::new(MethodKind::FsrLogit).with_lambda(1.0);
    let (p, _) = memory_penalty(&cfg, &perturbed, &[&entry]).unwrap();
    // Stored logits pass through f32.
    assert!((p - want).abs() < 1e-8, "{p} vs {want}");
}

#[test]
fn fisher_of_a_logistic_toy_is_the_squared_score() {
    let head = DenseLayer::new(Tensor::matrix(2, 1, vec![0.3f32, -0.2]).unwrap(), Tensor::vector(vec![0.1, 0.0]), Activation::Identity)
        .unwrap();
    let m = MultiHeadMlp::new(vec![], vec![head]).unwrap();
    let (x, y) = (0.7f64, 0usize);
    let ds = LabeledDataset::new(Tensor::matrix(1, 1, vec![x as f32]).unwrap(), vec![y], 2, "one").unwrap();
    let f = empirical_fisher(&m, &ds, 0, 10, &mut Rng::seed_from_u64(0)).unwrap();
    let z = [0.3 * x + 0.1, -0.2 * x];
    let p0 = 1.0 / (1.0 + (z[1] - z[0]).exp());
    let p = [p0, 1.0 - p0];
    let score = |k: usize| f64::from(u8::from(k == y)) - p[k];
    let want = [(score(0) * x).powi(2), (score(1) * x).powi(2), score(0).powi(2), score(1).powi(2)];
    for (a, b) in f.iter().zip(want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}
