use proptest::prelude::*;
use soupkit_core::eval::{accuracy, embed_dataset, knn_entropy, knn_loo_accuracy, knn_predict, KnnConfig, Voting};
use soupkit_core::model::{forward_embed, init_stock, EncoderConfig};
use soupkit_core::rng::{self, below, normal};
use soupkit_core::{Error, Matrix};

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| normal(&mut r)).collect()).unwrap()
}

/// Straight-line kNN: normalize, score every ref, stable sort, weighted vote.
fn brute_force_knn(refs: &Matrix, labels: &[usize], queries: &Matrix, k: usize, t: f64, classes: usize) -> Vec<usize> {
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    (0..queries.rows())
        .map(|q| {
            let qv = unit(queries.row(q));
            let mut scored: Vec<(f64, usize)> =
                (0..refs.rows()).map(|j| (unit(refs.row(j)).iter().zip(&qv).map(|(a, b)| a * b).sum(), j)).collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut votes = vec![0.0; classes];
            for &(s, j) in &scored[..k] {
                votes[labels[j]] += (s / t).exp();
            }
            let mut best = 0;
            for c in 1..classes {
                if votes[c] > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[test]
fn knn_matches_brute_force() {
    for seed in 0..20 {
        let refs = random(20, 4, seed);
        let queries = random(15, 4, seed + 100);
        let mut r = rng::stream(seed + 200);
        let labels: Vec<usize> = (0..20).map(|_| below(&mut r, 3)).collect();
        let cfg = KnnConfig::new(5, 0.07);
        let got = knn_predict(&refs, &labels, &queries, &cfg).unwrap();
        let classes = labels.iter().max().unwrap() + 1;
        assert_eq!(got, brute_force_knn(&refs, &labels, &queries, 5, 0.07, classes));
    }
}

#[test]
fn knn_basic_cases() {
    let refs = random(10, 3, 1);
    let labels: Vec<usize> = (0..10).map(|i| i % 4).collect();
    let q = refs.gather(&[7]);
    assert_eq!(knn_predict(&refs, &labels, &q, &KnnConfig::new(1, 0.07)).unwrap(), vec![labels[7]]);

    let row = [0.4, -1.0, 2.0];
    let same = Matrix::from_rows(&vec![&row[..]; 16]).unwrap();
    let labels: Vec<usize> = (0..16).map(|i| usize::from(i >= 9)).collect();
    let q = Matrix::from_rows(&[&row]).unwrap();
    for voting in [Voting::Weighted, Voting::Majority] {
        let cfg = KnnConfig { voting, ..KnnConfig::default() };
        assert_eq!(knn_predict(&same, &labels, &q, &cfg).unwrap(), vec![0]);
    }
}

#[test]
fn knn_needs_enough_references() {
    let refs = random(4, 3, 1);
    let err = knn_predict(&refs, &[0, 1, 0, 1], &refs, &KnnConfig::new(5, 0.1)).unwrap_err();
    assert_eq!(err, Error::TooFewRefs { got: 4, need: 5 });
    let err = knn_loo_accuracy(&refs, &[0, 1, 0, 1], &KnnConfig::new(4, 0.1)).unwrap_err();
    assert_eq!(err, Error::TooFewRefs { got: 4, need: 5 });
}

#[test]
fn leave_one_out_excludes_self() {
    // Two tight pairs with opposite labels inside each pair: with self
    // excluded the single neighbour always carries the wrong label.
    let z = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.01], &[0.0, 1.0], &[0.01, 1.0]]).unwrap();
    assert_eq!(knn_loo_accuracy(&z, &[0, 1, 0, 1], &KnnConfig::new(1, 0.07)).unwrap(), 0.0);
    assert_eq!(knn_loo_accuracy(&z, &[0, 0, 1, 1], &KnnConfig::new(1, 0.07)).unwrap(), 1.0);
}

#[test]
fn accuracy_counts() {
    assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
    assert_eq!(accuracy(&[0, 1, 2, 3], &[0, 1, 2, 0]).unwrap(), 0.75);
    assert_eq!(accuracy(&[0], &[0, 1]).unwrap_err(), Error::LengthMismatch { left: 1, right: 2 });
}

#[test]
fn entropy_of_identical_rows_is_log_k() {
    let row = [0.3, 0.1, -0.7];
    let z = Matrix::from_rows(&vec![&row[..]; 40]).unwrap();
    let h = knn_entropy(&z, &KnnConfig::default()).unwrap();
    assert!((h - 16f64.ln()).abs() <= 1e-9);
    assert!((h - 2.772589).abs() <= 1e-6);
}

#[test]
fn entropy_hand_case() {
    let z = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]).unwrap();
    let h = knn_entropy(&z, &KnnConfig::new(2, 0.07)).unwrap();
    // Rows 1 and 2: softmax of [1/T, 0]; row 3: two zero similarities.
    let e = (-1.0f64 / 0.07).exp();
    let (p, q) = (1.0 / (1.0 + e), e / (1.0 + e));
    let h_close = -(p * p.ln() + q * q.ln());
    let oracle = (2.0 * h_close + 2f64.ln()) / 3.0;
    assert!((h - oracle).abs() <= 1e-12);
    assert!((h - 0.23106).abs() <= 1e-4);
}

#[test]
fn entropy_of_orthogonal_rows_is_log_k() {
    let mut data = vec![0.0; 25];
    (0..5).for_each(|i| data[i * 5 + i] = 1.0 + i as f64);
    let z = Matrix::new(5, 5, data).unwrap();
    let h = knn_entropy(&z, &KnnConfig::new(3, 0.07)).unwrap();
    assert!((h - 3f64.ln()).abs() <= 1e-12);
}

#[test]
fn entropy_needs_more_rows_than_k() {
    let z = random(16, 3, 0);
    assert_eq!(knn_entropy(&z, &KnnConfig::default()).unwrap_err(), Error::BatchTooSmall { got: 16, need: 17 });
}

#[test]
fn entropy_range_on_random_matrices() {
    let cfg = KnnConfig::default();
    for seed in 0..1000 {
        let rows = 17 + (seed as usize % 30);
        let z = random(rows, 1 + seed as usize % 8, seed);
        let h = knn_entropy(&z, &cfg).unwrap();
        assert!((0.0..=16f64.ln() + 1e-9).contains(&h), "seed {seed}: {h}");
    }
}

#[test]
fn embedding_is_batch_size_invariant() {
    let params = init_stock(&EncoderConfig::new(9, vec![7], 4).unwrap(), 3).unwrap();
    let x = random(23, 9, 4);
    let whole = embed_dataset(&params, &x, 23).unwrap();
    let single = embed_dataset(&params, &x, 1).unwrap();
    let odd = embed_dataset(&params, &x, 5).unwrap();
    let direct = forward_embed(&params, &x).unwrap();
    for m in [&single, &odd, &direct] {
        assert!(whole.data().iter().zip(m.data()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }
    let mut zero = params.clone();
    zero.iter_mut().for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
    assert!(embed_dataset(&zero, &x, 4).unwrap().data().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_ignores_row_scale_and_order(seed in any::<u64>(), scales in prop::collection::vec(0.1f64..10.0, 24)) {
        let z = random(24, 5, seed);
        let cfg = KnnConfig::new(6, 0.07);
        let h = knn_entropy(&z, &cfg).unwrap();
        let mut scaled = z.clone();
        for (i, s) in scales.iter().enumerate() {
            scaled.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        prop_assert!((knn_entropy(&scaled, &cfg).unwrap() - h).abs() <= 1e-9);
        let perm = rng::permutation(&mut rng::stream(seed ^ 1), 24);
        prop_assert!((knn_entropy(&z.gather(&perm), &cfg).unwrap() - h).abs() <= 1e-9);
    }

    #[test]
    fn knn_is_label_equivariant(seed in any::<u64>()) {
        let refs = random(30, 4, seed);
        let queries = random(10, 4, seed ^ 7);
        let mut r = rng::stream(seed ^ 9);
        let labels: Vec<usize> = (0..30).map(|_| below(&mut r, 4)).collect();
        let relabel = rng::permutation(&mut r, 4);
        let mapped: Vec<usize> = labels.iter().map(|&l| relabel[l]).collect();
        let cfg = KnnConfig::new(7, 0.07);
        let base = knn_predict(&refs, &labels, &queries, &cfg).unwrap();
        let moved = knn_predict(&refs, &mapped, &queries, &cfg).unwrap();
        prop_assert_eq!(base.iter().map(|&l| relabel[l]).collect::<Vec<_>>(), moved);

        let doubled = Matrix::vstack(&[queries.clone(), queries.clone()]).unwrap();
        let twice = knn_predict(&refs, &labels, &doubled, &cfg).unwrap();
        prop_assert_eq!(&twice[..10], &base[..]);
        prop_assert_eq!(&twice[10..], &base[..]);
    }

    #[test]
    fn accuracy_is_one_minus_hamming(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..50)) {
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let hamming = p.iter().zip(&t).filter(|(a, b)| a != b).count();
        prop_assert!((accuracy(&p, &t).unwrap() - (1.0 - hamming as f64 / p.len() as f64)).abs() <= 1e-15);
    }
}
