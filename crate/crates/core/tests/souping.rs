use proptest::prelude::*;
use soupkit_core::data::{PatternSpec, Split};
use soupkit_core::eval::KnnConfig;
use soupkit_core::mixer::{mix, MixtureWeights};
use soupkit_core::model::{encoder_subset, forward_embed, init_stock, EncoderConfig};
use soupkit_core::rng::{self, hash_bytes};
use soupkit_core::soup::{
    draw_trials, entropy_and_fd_gradient, few_shot_score, greedy_soup, lmc_from_curve, lmc_report, season_random,
    self_season, uniform_soup, GreedyStep, SeasonConfig, SelfSeasonConfig,
};
use soupkit_core::toys::ClusterToy;
use soupkit_core::train::{train_supervised, TrainConfig};
use soupkit_core::{Error, Matrix, Result, Tensor, TensorSet};

fn scalar(v: f32) -> TensorSet {
    [("w".to_string(), Tensor::new(vec![1], vec![v]).unwrap())].into_iter().collect()
}

fn value(s: &TensorSet) -> f64 {
    f64::from(s.get("w").unwrap().data()[0])
}

/// Looks up a scripted score by the soup's scalar value.
fn table(entries: &'static [(f64, f64)]) -> impl FnMut(&TensorSet) -> Result<f64> {
    move |s| {
        let v = value(s);
        entries
            .iter()
            .find(|(k, _)| (k - v).abs() < 1e-5)
            .map(|e| e.1)
            .ok_or_else(|| Error::EvalFailed(format!("no scripted score for {v}")))
    }
}

#[test]
fn greedy_trace_matches_hand_simulation() {
    // Ingredients hold 1, 2 and 7; their scores rank them 1, 2, 0.
    // Pool {1} scores 0.80. Adding 2 gives mean 4.5 scoring 0.82: kept.
    // Adding 0 gives mean 10/3 scoring 0.79 < 0.82: rejected.
    static SCORES: [(f64, f64); 5] = [(1.0, 0.70), (2.0, 0.80), (7.0, 0.75), (4.5, 0.82), (10.0 / 3.0, 0.79)];
    let ings = [scalar(1.0), scalar(2.0), scalar(7.0)];
    let refs: Vec<&TensorSet> = ings.iter().collect();
    let g = greedy_soup(&refs, table(&SCORES)).unwrap();
    assert_eq!(g.ingredient_scores, vec![0.70, 0.80, 0.75]);
    assert_eq!(
        g.trace,
        vec![
            GreedyStep { candidate: 1, score: 0.80, accepted: true },
            GreedyStep { candidate: 2, score: 0.82, accepted: true },
            GreedyStep { candidate: 0, score: 0.79, accepted: false },
        ]
    );
    assert_eq!(g.selected, vec![1, 2]);
    assert_eq!(g.score, 0.82);
    assert_eq!(value(&g.soup), 4.5);
}

#[test]
fn greedy_ties_go_to_the_lower_index_and_are_accepted() {
    static SCORES: [(f64, f64); 4] = [(0.0, 0.5), (4.0, 0.5), (2.0, 0.5), (1.0, 0.4)];
    let ings = [scalar(0.0), scalar(4.0)];
    let refs: Vec<&TensorSet> = ings.iter().collect();
    let g = greedy_soup(&refs, table(&SCORES)).unwrap();
    assert_eq!(g.trace[0].candidate, 0);
    assert_eq!(g.selected, vec![0, 1]);
}

#[test]
fn greedy_never_loses_to_the_best_ingredient() {
    for instance in 0..50u64 {
        let m = 2 + (instance as usize % 6);
        let mut r = rng::stream(instance);
        let ings: Vec<TensorSet> = (0..m).map(|_| scalar(rng::normal(&mut r) as f32)).collect();
        let refs: Vec<&TensorSet> = ings.iter().collect();
        let eval = |s: &TensorSet| -> Result<f64> {
            let bits = s.get("w").unwrap().data()[0].to_bits();
            Ok((hash_bytes(&[&instance.to_le_bytes()[..], &bits.to_le_bytes()[..]].concat()) % 10_000) as f64 / 1e4)
        };
        let g = greedy_soup(&refs, eval).unwrap();
        let best = g.ingredient_scores.iter().cloned().fold(f64::MIN, f64::max);
        assert!(g.score >= best);
        assert_eq!(eval(&g.soup).unwrap(), g.score);
        let members: Vec<&TensorSet> = g.selected.iter().map(|&i| &ings[i]).collect();
        assert_eq!(uniform_soup(&members).unwrap(), g.soup);
    }
}

#[test]
fn greedy_propagates_eval_failures() {
    let ings = [scalar(0.0), scalar(1.0)];
    let refs: Vec<&TensorSet> = ings.iter().collect();
    let err = greedy_soup(&refs, |_| Err(Error::EvalFailed("boom".into()))).unwrap_err();
    assert_eq!(err, Error::EvalFailed("boom".into()));
}

fn few_shot_setup(seed: u64) -> (Vec<TensorSet>, soupkit_core::data::LabeledDataset) {
    let spec = PatternSpec { noise: 1.5, ..PatternSpec::new(4, 8, 40 + seed) };
    let train = spec.generate(400, 50 + seed, Split::Train).unwrap();
    let few = spec.generate(40, 60 + seed, Split::Train).unwrap();
    let cfg = EncoderConfig::new(64, vec![32, 32], 16).unwrap();
    let stock = init_stock(&cfg, seed).unwrap();
    let other = init_stock(&cfg, seed + 1000).unwrap();
    let trained = encoder_subset(
        &train_supervised(&stock, &train, &TrainConfig { steps: 300, ..TrainConfig::default() }).unwrap().params,
    );
    (vec![stock, other, trained], few)
}

#[test]
fn seasoning_favours_the_only_trained_ingredient() {
    let knn = KnnConfig::default();
    let mut argmax = Vec::new();
    for seed in 0..5 {
        let (ings, few) = few_shot_setup(seed);
        let refs: Vec<&TensorSet> = ings.iter().collect();

        // Exhaustive resolution-10 grid.
        let mut best = (f64::MIN, vec![]);
        for i in 0..=10usize {
            for j in 0..=10 - i {
                let w = vec![i as f64 / 10.0, j as f64 / 10.0, (10 - i - j) as f64 / 10.0];
                let soup = mix(&refs, &MixtureWeights::new(w.clone()).unwrap()).unwrap();
                let s = few_shot_score(&soup, &few, &knn, &mut forward_embed).unwrap();
                if s > best.0 {
                    best = (s, w);
                }
            }
        }
        let grid_top = (0..3).max_by(|&a, &b| best.1[a].total_cmp(&best.1[b])).unwrap();
        assert_eq!(grid_top, 2, "grid optimum {:?}", best);

        let cfg = SeasonConfig { trials: 200, knn, seed };
        let out = season_random(&refs, &few, &cfg, forward_embed).unwrap();
        assert!(out.trial_scores.iter().all(|&s| s <= out.score));
        argmax.push(out.weights.argmax());
    }
    argmax.sort_unstable();
    assert_eq!(argmax[2], 2, "{argmax:?}");
}

#[test]
fn seasoning_tie_and_single_trial_rules() {
    let (ings, few) = few_shot_setup(0);
    let single = SeasonConfig { trials: 1, knn: KnnConfig::default(), seed: 9 };
    let refs: Vec<&TensorSet> = ings.iter().collect();
    let out = season_random(&refs, &few, &single, forward_embed).unwrap();
    assert_eq!(out.weights, draw_trials(3, 1, 9)[0]);

    let same = [&ings[2], &ings[2], &ings[2]];
    let cfg = SeasonConfig { trials: 25, knn: KnnConfig::default(), seed: 4 };
    let out = season_random(&same, &few, &cfg, forward_embed).unwrap();
    assert_eq!(out.best_trial, 0);
    assert_eq!(out.weights, draw_trials(3, 25, 4)[0]);

    let tiny = few.subset(&(0..16).collect::<Vec<_>>());
    let err = season_random(&refs, &tiny, &cfg, forward_embed).unwrap_err();
    assert_eq!(err, Error::TooFewRefs { got: 16, need: 17 });
}

fn random_encoders(seed: u64) -> (TensorSet, TensorSet, Matrix) {
    let cfg = EncoderConfig::new(6, vec![8], 4).unwrap();
    let mut r = rng::stream(seed);
    let x = Matrix::new(40, 6, (0..240).map(|_| rng::normal(&mut r)).collect()).unwrap();
    (init_stock(&cfg, seed).unwrap(), init_stock(&cfg, seed + 1).unwrap(), x)
}

#[test]
fn identical_ingredients_stay_uniform() {
    let (a, _, x) = random_encoders(3);
    let cfg = SelfSeasonConfig { epochs: 5, batch_size: 20, ..SelfSeasonConfig::default() };
    let out = self_season(&[&a, &a], &x, &cfg, forward_embed).unwrap();
    for w in out.weights.as_slice() {
        assert!((w - 0.5).abs() <= 1e-9);
    }
    assert_eq!(out.entropy_curve.len(), 5);
    assert_eq!(out.steps, 10);
}

#[test]
fn self_season_checks_batch_size() {
    let (a, b, x) = random_encoders(3);
    let cfg = SelfSeasonConfig { batch_size: 16, ..SelfSeasonConfig::default() };
    let err = self_season(&[&a, &b], &x, &cfg, forward_embed).unwrap_err();
    assert_eq!(err, Error::BatchTooSmall { got: 16, need: 17 });
}

#[test]
fn cluster_toy_prefers_the_clustering_ingredient() {
    let toy = ClusterToy::build(0).unwrap();
    let refs = toy.ingredients();
    let knn = KnnConfig::default();
    let grid: Vec<f64> = (0..=20)
        .map(|i| {
            let w = MixtureWeights::pair(i as f64 / 20.0).unwrap();
            soupkit_core::eval::knn_entropy(&forward_embed(&mix(&refs, &w).unwrap(), &toy.unlabeled).unwrap(), &knn)
                .unwrap()
        })
        .collect();
    let lowest = (0..grid.len()).min_by(|&a, &b| grid[a].total_cmp(&grid[b])).unwrap();
    // Grid index i puts weight 1 - i/20 on the clustering ingredient.
    assert!(lowest <= 2, "{grid:?}");
    assert!(grid[10] > grid[lowest]);

    let out = self_season(&refs, &toy.unlabeled, &SelfSeasonConfig::default(), forward_embed).unwrap();
    assert!(out.weights.as_slice()[0] >= 0.9, "{:?}", out.weights);
    assert!(out.entropy_curve.last().unwrap() <= &out.entropy_curve[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fd_gradient_is_antisymmetric_at_the_origin(seed in 0u64..1000) {
        let (a, b, x) = random_encoders(seed);
        let (_, g) = entropy_and_fd_gradient(&[&a, &b], &x, &[0.0, 0.0], &KnnConfig::new(5, 0.07), 1e-3, &mut forward_embed).unwrap();
        prop_assert!((g[0] + g[1]).abs() <= 1e-8, "{:?}", g);
    }

    #[test]
    fn chord_is_affine(curve in prop::collection::vec(0.0f64..1.0, 3..12)) {
        let n = curve.len();
        let lambdas: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let r = lmc_from_curve(&lambdas, &curve).unwrap();
        for (l, c) in lambdas.iter().zip(&r.chord) {
            prop_assert!((c - ((1.0 - l) * curve[0] + l * curve[n - 1])).abs() <= 1e-12);
        }
        prop_assert_eq!(r.lmc_holds, r.satisfied[1..n - 1].iter().all(|&s| s));
    }
}

#[test]
fn lmc_on_identical_endpoints() {
    let a = scalar(0.25);
    let r = lmc_report(&a, &a, |s| Ok(value(s) * 2.0), 5).unwrap();
    assert!(r.curve.iter().all(|&c| c == 0.5));
    assert!(r.lmc_holds);
}

#[test]
fn lmc_endpoints_are_exact() {
    let (a, b) = (scalar(0.1), scalar(0.9));
    let eval = |s: &TensorSet| Ok(value(s).sin());
    let r = lmc_report(&a, &b, eval, 7).unwrap();
    assert_eq!(r.curve[0], eval(&a).unwrap());
    assert_eq!(r.curve[6], eval(&b).unwrap());
}

#[test]
fn lmc_detects_a_scripted_dip() {
    // Chord runs 0.8 -> 0.9; the midpoint drops to 0.6.
    static SCORES: [(f64, f64); 5] = [(0.0, 0.8), (0.25, 0.83), (0.5, 0.6), (0.75, 0.88), (1.0, 0.9)];
    let r = lmc_report(&scalar(0.0), &scalar(1.0), table(&SCORES), 5).unwrap();
    assert!(!r.lmc_holds);
    assert_eq!(r.violations, vec![2]);
    assert_eq!(r.satisfied, vec![true, true, false, true, true]);
    assert!(matches!(lmc_report(&scalar(0.0), &scalar(1.0), table(&SCORES), 2), Err(Error::InvalidConfig(_))));
}
