use proptest::prelude::*;
use soupkit_core::data::{
    box_blur, corrupt, gen_patterns, pixelate, split_even_odd, CorruptionKind, LabeledDataset, PatternSpec, Split,
};
use soupkit_core::{Error, Matrix};

fn nearest_template_accuracy(spec: &PatternSpec, ds: &LabeledDataset) -> f64 {
    let t = spec.templates().unwrap();
    let hits = (0..ds.len())
        .filter(|&i| {
            let x = ds.inputs.row(i);
            let dist = |c: usize| t.row(c).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (0..spec.classes).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap() == ds.labels[i]
        })
        .count();
    hits as f64 / ds.len() as f64
}

#[test]
fn nearest_template_baseline() {
    for seed in 0..3 {
        let spec = PatternSpec::new(10, 16, seed);
        assert_eq!(spec.noise, 0.1);
        let ds = spec.generate(1000, seed + 50, Split::Test).unwrap();
        assert!(nearest_template_accuracy(&spec, &ds) >= 0.95);
    }
}

#[test]
fn generation_contract() {
    let ds = gen_patterns(5, 60, 12, 8).unwrap();
    assert_eq!(ds.input_dim(), 144);
    assert_eq!(ds.len(), 60);
    assert!(ds.labels.iter().all(|&l| l < 5));
    assert!(ds.inputs.is_finite());
    assert_eq!(ds, gen_patterns(5, 60, 12, 8).unwrap());
    assert!(matches!(gen_patterns(1, 10, 8, 0), Err(Error::InvalidConfig(_))));
    assert!(matches!(gen_patterns(3, 10, 7, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn severity_table_lookups() {
    assert_eq!(CorruptionKind::GaussianNoise.parameter(1).unwrap(), 0.05);
    assert_eq!(CorruptionKind::BoxBlur.parameter(5).unwrap(), 3.0);
    assert_eq!(CorruptionKind::Contrast.parameter(2).unwrap(), 0.5);
    assert_eq!(CorruptionKind::Pixelate.parameter(5).unwrap(), 8.0);
    assert!(CorruptionKind::Pixelate.parameter(6).is_err());
}

#[test]
fn kernels_on_simple_images() {
    let side = 6;
    let constant = vec![0.7; side * side];
    let mut out = vec![0.0; side * side];
    box_blur(&constant, side, 2, &mut out);
    assert!(out.iter().all(|&v| (v - 0.7).abs() < 1e-15));

    let ramp: Vec<f64> = (0..side * side).map(|i| i as f64 * 0.25).collect();
    pixelate(&ramp, side, 1, &mut out);
    assert_eq!(out, ramp);
    pixelate(&ramp, side, 2, &mut out);
    assert_eq!(out[0], (ramp[0] + ramp[1] + ramp[6] + ramp[7]) / 4.0);
}

#[test]
fn corruption_keeps_everything_but_inputs() {
    let ds = gen_patterns(3, 20, 8, 1).unwrap();
    for kind in CorruptionKind::ALL {
        let same = corrupt(&ds, kind, 0, 5).unwrap();
        assert_eq!(same, ds);
        for severity in 1..=5 {
            let c = corrupt(&ds, kind, severity, 5).unwrap();
            assert_eq!(c.labels, ds.labels);
            assert_eq!(c.split, ds.split);
            assert_eq!(c.len(), ds.len());
            assert_eq!(c.corruption.map(|k| (k.kind, k.severity)), Some((kind, severity)));
            assert_ne!(c.inputs, ds.inputs);
            assert_eq!(c, corrupt(&ds, kind, severity, 5).unwrap());
        }
    }
}

#[test]
fn contrast_preserves_the_mean() {
    let ds = gen_patterns(3, 10, 8, 2).unwrap();
    let c = corrupt(&ds, CorruptionKind::Contrast, 3, 0).unwrap();
    for i in 0..ds.len() {
        let m0: f64 = ds.inputs.row(i).iter().sum();
        let m1: f64 = c.inputs.row(i).iter().sum();
        assert!((m0 - m1).abs() < 1e-9);
    }
}

#[test]
fn non_square_inputs_are_rejected() {
    let ds = LabeledDataset::new(Matrix::zeros(2, 10), vec![0, 1], 2, Split::Test, 0).unwrap();
    assert_eq!(corrupt(&ds, CorruptionKind::BoxBlur, 1, 0).unwrap_err(), Error::NotSquare { dim: 10 });
}

#[test]
fn even_odd_split() {
    let ds = gen_patterns(2, 4, 8, 3).unwrap();
    let (even, odd) = split_even_odd(&ds);
    assert_eq!(even, ds.subset(&[0, 2]));
    assert_eq!(odd, ds.subset(&[1, 3]));

    let one = ds.subset(&[0]);
    let (even, odd) = split_even_odd(&one);
    assert_eq!(even.len(), 1);
    assert!(odd.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_partitions_the_dataset(n in 1usize..60, seed in any::<u64>()) {
        let ds = gen_patterns(3, n, 8, seed).unwrap();
        let (even, odd) = split_even_odd(&ds);
        prop_assert_eq!(even.len() + odd.len(), n);
        for i in 0..n {
            let (part, j) = if i % 2 == 0 { (&even, i / 2) } else { (&odd, i / 2) };
            prop_assert_eq!(part.inputs.row(j), ds.inputs.row(i));
            prop_assert_eq!(part.labels[j], ds.labels[i]);
        }
    }

    #[test]
    fn generation_and_corruption_are_deterministic(seed in any::<u64>(), severity in 0u8..=5, k in 0usize..4) {
        let kind = CorruptionKind::ALL[k];
        let ds = gen_patterns(4, 12, 8, seed).unwrap();
        prop_assert_eq!(&ds, &gen_patterns(4, 12, 8, seed).unwrap());
        prop_assert_eq!(corrupt(&ds, kind, severity, seed).unwrap(), corrupt(&ds, kind, severity, seed).unwrap());
    }
}
