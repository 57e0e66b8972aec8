use fsrlab_core::bench::prediction_heatmap;
use fsrlab_core::memory::{select_herding, MemoryBudget, MemoryEntry};
use fsrlab_core::methods::{ewc_penalty, memory_penalty, EwcState, MethodConfig, MethodKind};
use fsrlab_core::nn::{
    kl_distill, logistic, logit_match, sigmoid_ce, softmax, Activation, InitScheme, MlpSpec, Model, MultiHeadMlp, Tensor,
};
use fsrlab_core::rng::Rng;
use fsrlab_core::tasks::{apply_permutation, invert_permutation, partition_classes, permutation, LabeledDataset, TransformSpec};
use proptest::prelude::*;
use rand::SeedableRng;

fn logits(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, k)
}

fn small_model(seed: u64) -> MultiHeadMlp<f64> {
    let spec = MlpSpec {
        input: 4,
        hidden: vec![5],
        heads: vec![3],
        activation: Activation::LeakyRelu { alpha: 0.2 },
        init: InitScheme::KaimingUniform,
    };
    MultiHeadMlp::from_spec(&spec, &mut Rng::seed_from_u64(seed)).unwrap()
}

fn entry(input: Vec<f32>, logits: Vec<f32>, label: Option<usize>) -> MemoryEntry {
    MemoryEntry {
        input,
        logits,
        label,
        task_id: 0,
        head_id: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_ignores_constant_shifts(z in logits(6), c in -50.0f64..50.0, tau in 0.5f64..4.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let (a, b) = (softmax(&z, tau).unwrap(), softmax(&shifted, tau).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn distill_is_shift_blind_and_logit_matching_is_not(z in logits(5), c in 0.1f64..10.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let (kl, _) = kl_distill(&z, &shifted, 2.0).unwrap();
        prop_assert!(kl.abs() < 1e-9);
        let (lm, _) = logit_match(&shifted, &z).unwrap();
        prop_assert!((lm - 5.0 * c * c).abs() < 1e-8 * (1.0 + lm));
    }

    #[test]
    fn sigmoid_ce_gradient_is_the_probability_gap(z in logits(4), r in logits(4)) {
        let (_, g) = sigmoid_ce(&z, &r).unwrap();
        for k in 0..4 {
            prop_assert!((g[k] - (logistic(z[k]) - logistic(r[k]))).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_penalty_ignores_labels(seed in 0u64..1000, labels in prop::collection::vec(0usize..3, 6)) {
        let m = small_model(seed);
        let mut rng = Rng::seed_from_u64(seed + 1);
        let mems: Vec<(Vec<f32>, Vec<f32>)> = (0..6)
            .map(|_| ((0..4).map(|_| rand::Rng::gen(&mut rng)).collect(), (0..3).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect()))
            .collect();
        let bare: Vec<MemoryEntry> = mems.iter().map(|(x, z)| entry(x.clone(), z.clone(), None)).collect();
        let tagged: Vec<MemoryEntry> = mems.iter().zip(&labels).map(|((x, z), &y)| entry(x.clone(), z.clone(), Some(y))).collect();
        let cfg = MethodConfig::new(MethodKind::FsrLogit);
        let (a, ga) = memory_penalty(&cfg, &m, &bare.iter().collect::<Vec<_>>()).unwrap();
        let (b, gb) = memory_penalty(&cfg, &m, &tagged.iter().collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ga, gb);
    }

    #[test]
    fn distill_penalty_ignores_common_shift(seed in 0u64..1000, c in -3.0f64..3.0) {
        // Adding c to every head bias shifts the current logits by c.
        let m = small_model(seed);
        let mut shifted_model = m.clone();
        shifted_model.head_mut(0).bias.data_mut().iter_mut().for_each(|b| *b += c);
        let x = vec![0.25f32, 0.5, 0.75, 1.0];
        let z = [0.5f32, -1.0, 2.0];
        let plain = entry(x.clone(), z.to_vec(), None);
        let moved = entry(x, z.iter().map(|v| v + c as f32).collect(), None);
        let cfg = MethodConfig::new(MethodKind::FsrDistill);
        let (a, _) = memory_penalty(&cfg, &m, &[&plain]).unwrap();
        let (b, _) = memory_penalty(&cfg, &shifted_model, &[&moved]).unwrap();
        prop_assert!((a - b).abs() < 1e-5, "{} vs {}", a, b);
    }

    #[test]
    fn ewc_grows_along_every_ray(seed in 0u64..1000, s in 0.01f64..5.0, ds in 0.01f64..1.0) {
        let m = small_model(seed);
        let n = m.parameter_count();
        let mut rng = Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let state = EwcState {
            anchor: m.params_flat(),
            fisher: (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0.01..2.0)).collect(),
            tasks_seen: 1,
        };
        let at = |s: f64| {
            let mut p = m.clone();
            let theta: Vec<f64> = state.anchor.iter().zip(&v).map(|(a, d)| a + s * d).collect();
            p.set_params_flat(&theta).unwrap();
            ewc_penalty(&p, &state, 400.0).unwrap().0
        };
        prop_assert_eq!(at(0.0), 0.0);
        prop_assert!(at(s + ds) > at(s));
        prop_assert!(at(s) > 0.0);
    }

    #[test]
    fn ewc_is_exact_on_quadratics(seed in 0u64..1000) {
        // L(theta) = 1/2 (theta - a)^T H (theta - a), H diagonal.
        let m = small_model(seed);
        let n = m.parameter_count();
        let mut rng = Rng::seed_from_u64(seed + 7);
        let a: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0.0..3.0)).collect();
        let theta = m.params_flat();
        let loss = |t: &[f64]| 0.5 * t.iter().zip(&a).zip(&h).map(|((t, a), h)| h * (t - a).powi(2)).sum::<f64>();
        let state = EwcState { anchor: a.clone(), fisher: h.clone(), tasks_seen: 1 };
        let (pen, _) = ewc_penalty(&m, &state, 1.0).unwrap();
        prop_assert!((pen - (loss(&theta) - loss(&a))).abs() < 1e-12 * (1.0 + pen));
    }

    #[test]
    fn herding_everything_is_a_permutation(pts in prop::collection::vec(prop::array::uniform3(0.0f32..1.0), 1..20)) {
        let x = Tensor::from_rows(&pts).unwrap();
        let all: Vec<usize> = (0..pts.len()).collect();
        let (mut picks, _) = select_herding(&x, &all, pts.len()).unwrap();
        picks.sort_unstable();
        prop_assert_eq!(picks, all);
    }

    #[test]
    fn permutations_preserve_pixel_multisets(seed in any::<u64>(), d in 1usize..40) {
        let mut rng = Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..3 * d).map(|_| rand::Rng::gen(&mut rng)).collect();
        let ds = LabeledDataset::new(Tensor::matrix(3, d, data).unwrap(), vec![0, 1, 0], 2, "p").unwrap();
        let perm = permutation(d, seed);
        let spec = TransformSpec::Permutation { seed };
        let out = apply_permutation(&ds, &perm, &spec);
        for r in 0..3 {
            let (mut a, mut b) = (ds.input(r).to_vec(), out.input(r).to_vec());
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }
        let back = apply_permutation(&out, &invert_permutation(&perm), &spec);
        prop_assert_eq!(back.inputs, ds.inputs);
    }

    #[test]
    fn class_partitions_are_exact_covers(n in 1usize..8, per in 1usize..6, seed in any::<u64>()) {
        let k = n * per;
        let groups = partition_classes(k, n, seed).unwrap();
        prop_assert_eq!(groups.len(), n);
        let mut all: Vec<usize> = groups.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn heatmap_rows_are_distributions(seed in 0u64..1000) {
        let spec = MlpSpec::single_head(4, vec![6], 3);
        let m = Model::from_spec(&spec, &mut Rng::seed_from_u64(seed)).unwrap();
        let mut rng = Rng::seed_from_u64(seed + 3);
        let data: Vec<f32> = (0..36).map(|_| rand::Rng::gen(&mut rng)).collect();
        let ds = LabeledDataset::new(Tensor::matrix(9, 4, data).unwrap(), vec![0, 1, 2, 0, 1, 2, 0, 1, 2], 3, "h").unwrap();
        for row in prediction_heatmap(&m, &ds, 0).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn class_counts_add_up(total in 0usize..2000, k in 1usize..50) {
        let counts = MemoryBudget::PerTask { count: total }.per_class_counts(k, 0, 1, 1).unwrap();
        prop_assert_eq!(counts.iter().sum::<usize>(), total);
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }
}
