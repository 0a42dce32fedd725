//! Acceptance suite. Runs each criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use soupkit::report::MetricRow;
use soupkit::{run_experiment, ExperimentConfig};
use soupkit_core::eval::{knn_entropy, KnnConfig};
use soupkit_core::linalg::Matrix;
use soupkit_core::mixer::{
    barycentric_centroid_grid, interpolation_path, mix, sample_simplex_uniform, SimplexGridSpec,
};
use soupkit_core::model::{forward_embed, init_stock, Dense, EncoderConfig, Mlp, Model};
use soupkit_core::rng::{self, below, hash_bytes, normal};
use soupkit_core::soup::{greedy_soup, self_season, GreedyStep, SelfSeasonConfig};
use soupkit_core::ssl::{sample_mask, Augment};
use soupkit_core::toys::ClusterToy;
use soupkit_core::train::{loss_and_grad, LossBatch, ViewPair};
use soupkit_core::{Error, MixtureWeights, Tensor, TensorSet};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn fmt_all(v: &[f64]) -> String {
    v.iter().map(|d| format!("{d:+.3}")).collect::<Vec<_>>().join(" ")
}

fn ulps(a: f32, b: f32) -> u32 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs() as u32
}

fn random_set(seed: u64) -> TensorSet {
    let mut r = rng::stream(seed);
    let mut t = TensorSet::new();
    for (name, shape) in [("a", vec![7, 5]), ("b", vec![13])] {
        let n: usize = shape.iter().product();
        t.insert(name, Tensor::new(shape, (0..n).map(|_| (3.0 * normal(&mut r)) as f32).collect()).unwrap());
    }
    t
}

fn mixing_exactness() -> Outcome {
    let sets: Vec<TensorSet> = (0..3).map(|s| random_set(100 + s)).collect();
    let refs: Vec<&TensorSet> = sets.iter().collect();
    let bits = |t: &TensorSet| {
        t.iter().flat_map(|(_, x)| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>()
    };

    for (k, set) in sets.iter().enumerate() {
        let out = mix(&refs, &MixtureWeights::one_hot(3, k)).map_err(|e| e.to_string())?;
        if bits(&out) != bits(set) {
            return Err(format!("one-hot {k} is not bit-exact"));
        }
    }
    let path = interpolation_path(&sets[0], &sets[1], &[0.0, 0.5, 1.0]).map_err(|e| e.to_string())?;
    if bits(&path[0]) != bits(&sets[0]) || bits(&path[2]) != bits(&sets[1]) {
        return Err("interpolation endpoints are not bit-exact".into());
    }

    let w = [0.2, 0.3, 0.5];
    let out = mix(&refs, &MixtureWeights::new(w.to_vec()).unwrap()).map_err(|e| e.to_string())?;
    let mut worst = 0;
    for (name, t) in out.iter() {
        for (j, got) in t.data().iter().enumerate() {
            let oracle: f64 = (0..3).map(|i| w[i] * f64::from(sets[i].get(name).unwrap().data()[j])).sum();
            worst = worst.max(ulps(*got, oracle as f32));
        }
    }
    check(worst <= 1, format!("one-hot and endpoints bit-exact, 3-way mix worst {worst} ULP"))
}

fn simplex_machinery() -> Outcome {
    for n in 1..=10 {
        let grid = barycentric_centroid_grid(&SimplexGridSpec::triangle(n)).map_err(|e| e.to_string())?;
        if grid.len() != n * n {
            return Err(format!("resolution {n} gave {} cells", grid.len()));
        }
        for w in &grid {
            let s: f64 = w.as_slice().iter().sum();
            if w.as_slice().iter().any(|&v| v < 0.0) || (s - 1.0).abs() > 1e-12 {
                return Err(format!("grid point {:?} leaves the simplex", w.as_slice()));
            }
        }
    }
    let n7 = barycentric_centroid_grid(&SimplexGridSpec::triangle(7)).unwrap().len();

    let (m, draws) = (5usize, 1_000_000usize);
    let mut r = rng::stream(20_240_601);
    let mut sums = vec![0.0; m];
    for _ in 0..draws {
        let w = sample_simplex_uniform(m, &mut r);
        let s: f64 = w.as_slice().iter().sum();
        if w.as_slice().iter().any(|&v| v < 0.0) || (s - 1.0).abs() > 1e-12 {
            return Err(format!("Dirichlet draw {:?} leaves the simplex", w.as_slice()));
        }
        sums.iter_mut().zip(w.as_slice()).for_each(|(acc, v)| *acc += v);
    }
    let mf = m as f64;
    let sigma = ((mf - 1.0) / (mf * mf * (mf + 1.0)) / draws as f64).sqrt();
    let worst = sums.iter().map(|s| (s / draws as f64 - 1.0 / mf).abs() / sigma).fold(0.0, f64::max);
    check(
        n7 == 49 && worst <= 3.0,
        format!("n^2 cells for n=1..10, {n7} at n=7, 1e6 draws worst mean deviation {worst:.2} sigma"),
    )
}

fn entropy_oracles() -> Outcome {
    let row = [0.3, -1.2, 0.8, 0.05];
    let same = Matrix::from_rows(&vec![&row[..]; 50]).unwrap();
    let h_same = knn_entropy(&same, &KnnConfig::default()).map_err(|e| e.to_string())?;
    if (h_same - 16f64.ln()).abs() > 1e-9 || (h_same - 2.772589).abs() > 1e-6 {
        return Err(format!("identical rows gave {h_same}"));
    }
    let hand = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]).unwrap();
    let h_hand = knn_entropy(&hand, &KnnConfig::new(2, 0.07)).map_err(|e| e.to_string())?;
    if (h_hand - 0.23106).abs() > 1e-4 {
        return Err(format!("hand case gave {h_hand}"));
    }
    let cfg = KnnConfig::default();
    for seed in 0..1000u64 {
        let (rows, cols) = (17 + seed as usize % 40, 1 + seed as usize % 9);
        let mut r = rng::stream(seed);
        let z = Matrix::new(rows, cols, (0..rows * cols).map(|_| normal(&mut r)).collect()).unwrap();
        let h = knn_entropy(&z, &cfg).map_err(|e| e.to_string())?;
        if !(0.0..=16f64.ln() + 1e-12).contains(&h) {
            return Err(format!("random matrix {seed} gave {h}"));
        }
    }
    check(true, format!("ln 16 case {h_same:.9}, hand case {h_hand:.5}, 1000 random matrices in [0, ln k]"))
}

fn fd_model(seed: u64) -> Model {
    let cfg = EncoderConfig::new(12, vec![8, 7], 5).unwrap();
    let mut model = Model::from_tensors(&init_stock(&cfg, seed).unwrap()).unwrap();
    let mut r = rng::stream(seed ^ 0x5EED);
    model.classifier = Some(Dense::init(cfg.embed_dim, 3, &mut r));
    model.decoder = Some(Dense::init(cfg.embed_dim, cfg.input_dim, &mut r));
    model.projector = Some(Mlp::init(&[(cfg.embed_dim, 6), (6, 4)], &mut r));
    for s in model.slices_mut() {
        s.iter_mut().for_each(|v| *v += 0.05 * normal(&mut r));
    }
    model
}

fn fd_batches(seed: u64) -> Vec<LossBatch> {
    let mut r = rng::stream(seed);
    let x = Matrix::new(6, 12, (0..72).map(|_| normal(&mut r)).collect()).unwrap();
    let aug = Augment { noise_sigma: 0.3, mask_frac: 0.25 };
    let labels = (0..6).map(|_| below(&mut r, 3)).collect();
    let views = ViewPair { a: aug.view(&x, &mut r), b: aug.view(&x, &mut r) };
    let local = ViewPair { a: aug.view(&x, &mut r), b: aug.view(&x, &mut r) };
    vec![
        LossBatch::CrossEntropy { inputs: x.clone(), labels },
        LossBatch::MaskedRecon { inputs: x.clone(), mask: sample_mask(6, 12, 0.5, &mut r) },
        LossBatch::InfoNce { views: views.clone(), temperature: 0.5 },
        LossBatch::DimContrastive { views, gamma: 1.0, local: Some(local) },
    ]
}

fn gradient_correctness() -> Outcome {
    const COORDS: usize = 120;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut fewest = usize::MAX;
    for seed in [1u64, 2, 3] {
        let model = fd_model(seed);
        for batch in fd_batches(seed * 31) {
            let (_, grad) = loss_and_grad(&model, &batch).map_err(|e| e.to_string())?;
            let grads: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
            let mut r = rng::stream(seed * 97);
            let mut compared = 0;
            // Heads a loss never reads have exactly zero gradient; draw until
            // enough coordinates carry signal.
            for _ in 0..COORDS * 20 {
                if compared == COORDS {
                    break;
                }
                let s = below(&mut r, grads.len());
                let j = below(&mut r, grads[s].len());
                let mut plus = model.clone();
                plus.slices_mut()[s][j] += h;
                let mut minus = model.clone();
                minus.slices_mut()[s][j] -= h;
                let fd =
                    (loss_and_grad(&plus, &batch).unwrap().0 - loss_and_grad(&minus, &batch).unwrap().0) / (2.0 * h);
                let an = grads[s][j];
                if fd.abs().max(an.abs()) <= 1e-8 {
                    continue;
                }
                compared += 1;
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
            }
            fewest = fewest.min(compared);
        }
    }
    check(
        worst <= 1e-4 && fewest >= 100,
        format!("4 losses x 3 seeds, at least {fewest} nonzero coordinates each, worst relative error {worst:.2e}"),
    )
}

fn scalar(v: f32) -> TensorSet {
    [("w".to_string(), Tensor::new(vec![1], vec![v]).unwrap())].into_iter().collect()
}

fn scalar_value(s: &TensorSet) -> f64 {
    f64::from(s.get("w").unwrap().data()[0])
}

fn greedy_contract() -> Outcome {
    for instance in 0..50u64 {
        let m = 2 + instance as usize % 7;
        let mut r = rng::stream(1000 + instance);
        let ings: Vec<TensorSet> = (0..m).map(|_| scalar(normal(&mut r) as f32)).collect();
        let refs: Vec<&TensorSet> = ings.iter().collect();
        let eval = |s: &TensorSet| -> soupkit_core::Result<f64> {
            let bits = s.get("w").unwrap().data()[0].to_bits();
            Ok((hash_bytes(&[&instance.to_le_bytes()[..], &bits.to_le_bytes()[..]].concat()) % 10_000) as f64 / 1e4)
        };
        let g = greedy_soup(&refs, eval).map_err(|e| e.to_string())?;
        let best = g.ingredient_scores.iter().cloned().fold(f64::MIN, f64::max);
        if g.score < best || eval(&g.soup).unwrap() != g.score {
            return Err(format!("instance {instance}: soup {} below best ingredient {best}", g.score));
        }
    }

    // Ingredients 1, 2, 7 scoring .70, .80, .75: pool {1}, then mean 4.5
    // scores .82 and is kept, then mean 10/3 scores .79 and is dropped.
    let scores = [(1.0, 0.70), (2.0, 0.80), (7.0, 0.75), (4.5, 0.82), (10.0 / 3.0, 0.79)];
    let ings = [scalar(1.0), scalar(2.0), scalar(7.0)];
    let refs: Vec<&TensorSet> = ings.iter().collect();
    let g = greedy_soup(&refs, |s| {
        let v = scalar_value(s);
        scores.iter().find(|(k, _)| (k - v).abs() < 1e-5).map(|e| e.1).ok_or_else(|| Error::EvalFailed(format!("{v}")))
    })
    .map_err(|e| e.to_string())?;
    let expected = vec![
        GreedyStep { candidate: 1, score: 0.80, accepted: true },
        GreedyStep { candidate: 2, score: 0.82, accepted: true },
        GreedyStep { candidate: 0, score: 0.79, accepted: false },
    ];
    check(
        g.trace == expected && g.selected == [1, 2] && g.score == 0.82,
        format!(
            "50 random instances never below best ingredient, M=3 trace {:?} selected {:?}",
            g.trace.iter().map(|s| s.accepted).collect::<Vec<_>>(),
            g.selected
        ),
    )
}

fn self_seasoning() -> Outcome {
    let cfg = EncoderConfig::new(6, vec![8], 4).unwrap();
    let a = init_stock(&cfg, 3).unwrap();
    let mut r = rng::stream(3);
    let x = Matrix::new(40, 6, (0..240).map(|_| normal(&mut r)).collect()).unwrap();
    let sc = SelfSeasonConfig { epochs: 5, batch_size: 20, ..SelfSeasonConfig::default() };
    let same = self_season(&[&a, &a], &x, &sc, forward_embed).map_err(|e| e.to_string())?;
    let drift = same.weights.as_slice().iter().map(|w| (w - 0.5).abs()).fold(0.0, f64::max);
    if drift > 1e-9 {
        return Err(format!("identical ingredients drifted to {:?}", same.weights.as_slice()));
    }

    let knn = KnnConfig::default();
    let (mut decreased, mut dominant, mut agree) = (0, 0, 0);
    let mut finals = Vec::new();
    for seed in 0..5u64 {
        let toy = ClusterToy::build(seed).map_err(|e| e.to_string())?;
        let refs = toy.ingredients();
        let out = self_season(&refs, &toy.unlabeled, &SelfSeasonConfig::default(), forward_embed)
            .map_err(|e| e.to_string())?;
        let w0 = out.weights.as_slice()[0];
        finals.push(w0);
        decreased += usize::from(out.entropy_curve.last().unwrap() <= &out.entropy_curve[0]);
        dominant += usize::from(w0 >= 0.9);
        // Resolution-20 grid over the pair; the oracle's best weight on the clustering ingredient.
        let grid: Vec<(f64, f64)> = (0..=20)
            .map(|i| {
                let w = MixtureWeights::pair(i as f64 / 20.0).unwrap();
                let h = knn_entropy(&forward_embed(&mix(&refs, &w).unwrap(), &toy.unlabeled).unwrap(), &knn).unwrap();
                (1.0 - i as f64 / 20.0, h)
            })
            .collect();
        let oracle_w0 = grid.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        agree += usize::from((oracle_w0 >= 0.9) == (w0 >= 0.9));
    }
    check(
        decreased == 5 && dominant >= 4 && agree == 5,
        format!(
            "identical drift {drift:.1e}; toy entropy decreased {decreased}/5, clustering weight >= 0.9 in {dominant}/5 ({}), grid oracle agrees {agree}/5",
            finals.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

/// Metric rows and raw `metrics.csv` bytes of one run.
type RunOutput = (Vec<MetricRow>, Vec<u8>);

type Criterion = (&'static str, Duration, Box<dyn FnMut(&mut Runs) -> Outcome>);

/// Experiment runs keyed by (config, seed, workers), shared between criteria.
struct Runs {
    cache: BTreeMap<(String, u64, usize), RunOutput>,
    scratch: tempfile::TempDir,
}

impl Runs {
    fn run(&mut self, name: &str, seed: u64, workers: usize) -> Result<&RunOutput, String> {
        let key = (name.to_string(), seed, workers);
        if !self.cache.contains_key(&key) {
            let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"));
            let out = self.scratch.path().join(format!("{name}-{seed}-{workers}"));
            let sets = [
                format!("seed={seed}"),
                format!("workers={workers}"),
                format!("out_dir={}", serde_json::Value::String(out.display().to_string())),
            ];
            let cfg = ExperimentConfig::load(&path, &sets).map_err(|e| format!("{name}: {e}"))?;
            let manifest = run_experiment(&cfg).map_err(|e| format!("{name} seed {seed}: {e}"))?;
            let bytes = std::fs::read(out.join(soupkit::runner::METRICS_FILE)).map_err(|e| e.to_string())?;
            std::fs::remove_dir_all(&out).ok();
            self.cache.insert(key.clone(), (manifest.rows, bytes));
        }
        Ok(&self.cache[&key])
    }
}

fn value(rows: &[MetricRow], id: &str, split: &str, metric: &str) -> Result<f64, String> {
    rows.iter()
        .find(|r| r.mixture_id == id && r.split == split && r.metric == metric)
        .map(|r| r.value)
        .ok_or_else(|| format!("no {id} {split}/{metric} row"))
}

fn soup_beats_ingredients(runs: &mut Runs) -> Outcome {
    let mut gaps = Vec::new();
    for seed in 0..5 {
        let (rows, _) = runs.run("triangle", seed, 1)?;
        let best = |prefix: &str| {
            rows.iter()
                .filter(|r| r.metric == "head_accuracy" && r.mixture_id.starts_with(prefix))
                .map(|r| r.value)
                .fold(f64::MIN, f64::max)
        };
        gaps.push(best("grid") - best("corner"));
    }
    let corner_wins = gaps.iter().filter(|g| **g < 0.0).count();
    let med = median(gaps.clone());
    check(
        med >= 0.0 && corner_wins == 0,
        format!(
            "best grid minus best corner per seed [{}], median {med:+.4}, corner strictly best in {corner_wins}/5",
            fmt_all(&gaps)
        ),
    )
}

fn shift_aware_ingredients(runs: &mut Runs) -> Outcome {
    let (mut head, mut knn) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let shift = runs.run("shift", seed, 1)?.0.clone();
        let sup = runs.run("shift_supervised", seed, 1)?.0.clone();
        head.push(
            value(&shift, "soup", "test_odd", "head_accuracy")? - value(&sup, "soup", "test_odd", "head_accuracy")?,
        );
        knn.push(value(&shift, "soup", "test_odd", "knn_accuracy")? - value(&sup, "soup", "test_odd", "knn_accuracy")?);
    }
    let (mh, mk) = (median(head.clone()), median(knn.clone()));
    check(
        mh > 0.0 && mk > 0.0,
        format!("head gain [{}] median {mh:+.4}; kNN gain [{}] median {mk:+.4}", fmt_all(&head), fmt_all(&knn)),
    )
}

fn determinism(runs: &mut Runs) -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.path().file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let one = runs.run(name, 0, 1)?.1.clone();
        let eight = &runs.run(name, 0, 8)?.1;
        if &one != eight {
            differing.push(name.clone());
        }
    }
    check(
        differing.is_empty(),
        format!("{} shipped configs, metrics.csv identical at 1 and 8 workers except {differing:?}", names.len()),
    )
}

fn main() {
    let mut runs = Runs { cache: BTreeMap::new(), scratch: tempfile::tempdir().expect("scratch directory") };
    let criteria: Vec<Criterion> = vec![
        ("mixing exactness", Duration::from_secs(1), Box::new(|_| mixing_exactness())),
        ("simplex machinery", Duration::from_secs(10), Box::new(|_| simplex_machinery())),
        ("kNN entropy oracles", Duration::from_secs(5), Box::new(|_| entropy_oracles())),
        ("gradient correctness", Duration::from_secs(30), Box::new(|_| gradient_correctness())),
        ("greedy soup contract", Duration::from_secs(5), Box::new(|_| greedy_contract())),
        ("self-seasoning behavior", Duration::from_secs(180), Box::new(|_| self_seasoning())),
        ("soup >= ingredients", Duration::from_secs(300), Box::new(soup_beats_ingredients)),
        ("shift-aware ingredients", Duration::from_secs(300), Box::new(shift_aware_ingredients)),
        ("determinism across workers", Duration::from_secs(120), Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, budget, mut run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run(&mut runs);
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let over = if secs > budget.as_secs_f64() { ", over budget" } else { "" };
        println!("criterion {}: {tag} {name}: {detail} [{secs:.1} s, budget {} s{over}]", i + 1, budget.as_secs());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
