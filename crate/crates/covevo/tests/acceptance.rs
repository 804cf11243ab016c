//! End-to-end acceptance checks. Every test prints one
//! `ACCEPTANCE <name>: PASS|FAIL` line (visible with `--nocapture`) and
//! enforces its own runtime budget.

use covevo::coverage::{metric_on_trace, profile_bounds, ActivationProfile, CoverageConfig, Metric};
use covevo::data::{mask_labels, split, standardize, two_blobs, DatasetSplit};
use covevo::descriptor::{random_descriptor, NetworkDescriptor, SearchConstraints};
use covevo::evolution::{evolve, GaConfig};
use covevo::experiment::{final_evaluate, run_experiment, ExperimentConfig};
use covevo::fitness::{
    balanced_accuracy, blend, cert, ret_fitness, supervised_fitness, train_descriptor,
    FitnessSpec, FitnessValue,
};
use covevo::network::{build_network, ActivationTrace};
use covevo::rng::{derive_seed, stream};
use covevo::train::{loss_and_gradients, loss_value, sample_masks, TrainConfig};
use ndarray::{Array1, Array2};
use rand::Rng;
use std::collections::HashSet;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

fn criterion(name: &str, budget: Duration, body: impl FnOnce()) {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = started.elapsed();
    match outcome {
        Ok(()) if elapsed <= budget => {
            println!("ACCEPTANCE {name}: PASS ({elapsed:.2?}, budget {budget:?})");
        }
        Ok(()) => {
            println!("ACCEPTANCE {name}: FAIL (took {elapsed:.2?}, budget {budget:?})");
            panic!("{name} exceeded its {budget:?} runtime budget: {elapsed:?}");
        }
        Err(cause) => {
            println!("ACCEPTANCE {name}: FAIL ({elapsed:.2?})");
            resume_unwind(cause);
        }
    }
}

// ---------------------------------------------------------------------
// Criterion 1: coverage metrics against an independent brute-force
// enumerator on random (network, batch) pairs.
// ---------------------------------------------------------------------

/// Integer (count, denominator) pairs per metric, computed with naive
/// loops and hash sets straight from the activation matrix.
struct OracleCounts {
    nc: (usize, usize),
    tknc: (usize, usize),
    kmn: (usize, usize),
    nbc: (usize, usize),
    snac: (usize, usize),
}

fn brute_force(
    trace: &ActivationTrace,
    profile: &ActivationProfile,
    t: f64,
    top_k: usize,
    sections: usize,
) -> OracleCounts {
    let v = &trace.values;
    let rows = v.nrows();
    let n = v.ncols();

    let mut activated = vec![false; n];
    for r in 0..rows {
        for c in 0..n {
            if v[(r, c)] > t {
                activated[c] = true;
            }
        }
    }
    let nc = activated.iter().filter(|&&b| b).count();

    // Top-k per layer per instance via repeated max scans; a strict
    // comparison keeps the earliest index on ties.
    let mut in_top = vec![false; n];
    for r in 0..rows {
        for (start, width) in trace.layer_slices() {
            let mut picked = vec![false; width];
            for _ in 0..top_k.min(width) {
                let mut best: Option<usize> = None;
                for i in 0..width {
                    if picked[i] {
                        continue;
                    }
                    best = match best {
                        None => Some(i),
                        Some(b) if v[(r, start + i)] > v[(r, start + b)] => Some(i),
                        keep => keep,
                    };
                }
                let b = best.expect("width >= 1");
                picked[b] = true;
                in_top[start + b] = true;
            }
        }
    }
    let tknc = in_top.iter().filter(|&&b| b).count();

    let mut kmn_hits = 0usize;
    for c in 0..n {
        let (lo, hi) = (profile.lower[c], profile.upper[c]);
        let mut hit: HashSet<usize> = HashSet::new();
        for r in 0..rows {
            let x = v[(r, c)];
            if x < lo || x > hi {
                continue;
            }
            let s = if lo == hi {
                0
            } else {
                let step = (hi - lo) / sections as f64;
                let s = ((x - lo) / step).floor() as usize;
                s.min(sections - 1)
            };
            hit.insert(s);
        }
        kmn_hits += hit.len();
    }

    let mut below = vec![false; n];
    let mut above = vec![false; n];
    for r in 0..rows {
        for c in 0..n {
            if v[(r, c)] < profile.lower[c] {
                below[c] = true;
            }
            if v[(r, c)] > profile.upper[c] {
                above[c] = true;
            }
        }
    }
    let lcn = below.iter().filter(|&&b| b).count();
    let ucn = above.iter().filter(|&&b| b).count();

    OracleCounts {
        nc: (nc, n),
        tknc: (tknc, n),
        kmn: (kmn_hits, sections * n),
        nbc: (lcn + ucn, 2 * n),
        snac: (ucn, n),
    }
}

#[test]
fn coverage_oracle() {
    criterion("coverage_oracle", Duration::from_secs(30), || {
        let mut rng = stream(101);
        for case in 0..200u64 {
            let constraints = SearchConstraints::new(3, 5);
            let d = random_descriptor(&constraints, &mut rng);
            let input_dim = rng.random_range(1..=6);
            let net = build_network(&d, input_dim, derive_seed(55, &[case])).unwrap();
            let reference =
                Array2::from_shape_fn((rng.random_range(2..=10), input_dim), |_| {
                    rng.random_range(-2.0..2.0)
                });
            let batch = Array2::from_shape_fn((rng.random_range(1..=10), input_dim), |_| {
                rng.random_range(-2.0..2.0)
            });
            let profile = profile_bounds(&net, &reference).unwrap();
            let (_, trace) = net.forward(&batch, true).unwrap();
            let trace = trace.unwrap();

            let t = rng.random_range(-0.5..0.5);
            let top_k = rng.random_range(1..=3);
            let sections = rng.random_range(2..=7);
            let oracle = brute_force(&trace, &profile, t, top_k, sections);

            for (metric, (count, denom)) in [
                (Metric::Nc, oracle.nc),
                (Metric::Tknc, oracle.tknc),
                (Metric::Kmn, oracle.kmn),
                (Metric::Nbc, oracle.nbc),
                (Metric::Snac, oracle.snac),
            ] {
                let mut config = CoverageConfig::new(metric);
                config.nc_threshold = t;
                config.top_k = top_k;
                config.sections = sections;
                let lib = metric_on_trace(&config, &trace, &profile).unwrap();
                let expected = count as f64 / denom as f64;
                assert!(
                    (lib - expected).abs() < 1e-12,
                    "case {case} {metric:?}: library {lib} vs oracle {count}/{denom}"
                );
                assert_eq!(
                    (lib * denom as f64).round() as usize,
                    count,
                    "case {case} {metric:?}: integer count mismatch"
                );
            }
        }
    });
}

// ---------------------------------------------------------------------
// Criterion 2: analytic gradients against central finite differences for
// 50 descriptors spanning every activation and both flag settings.
// ---------------------------------------------------------------------

fn gradient_check_one(d: &NetworkDescriptor, case: u64) {
    let input_dim = 2 + (case as usize % 4);
    let rows = 4 + (case as usize % 5);
    let mut net = build_network(d, input_dim, derive_seed(9000, &[case])).unwrap();
    // Fresh networks have all-zero biases, which can park a rectifier
    // pre-activation exactly on its kink (where one-sided slopes differ
    // and the finite difference is meaningless). Jitter every parameter
    // so the check runs at a generic point.
    let mut param_rng = stream(derive_seed(9300, &[case]));
    let jitter: Vec<f64> = (0..net.flat_params().len())
        .map(|_| param_rng.random_range(-0.6..0.6))
        .collect();
    net.set_flat_params(&jitter);
    let mut data_rng = stream(derive_seed(9100, &[case]));
    let x = Array2::from_shape_fn((rows, input_dim), |_| data_rng.random_range(-1.5..1.5));
    let y: Array1<f64> = (0..rows).map(|i| (i % 2) as f64).collect();
    let masks = sample_masks(&net, rows, &mut stream(derive_seed(9200, &[case])));

    let grads = loss_and_gradients(&net, &x, &y, &masks);
    let params = net.flat_params();
    let h = 1e-5;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        let mut up = net.clone();
        up.set_flat_params(&p);
        p[i] -= 2.0 * h;
        let mut down = net.clone();
        down.set_flat_params(&p);
        let fd = (loss_value(&up, &x, &y, &masks) - loss_value(&down, &x, &y, &masks)) / (2.0 * h);
        let an = grads.flat[i];
        // Below the finite-difference noise floor both sides are zero.
        if fd.abs() < 1e-8 && an.abs() < 1e-8 {
            continue;
        }
        let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-12);
        assert!(
            rel < 1e-4,
            "case {case} ({d}) param {i}: fd={fd} analytic={an} rel={rel}"
        );
    }
}

#[test]
fn gradient_checks() {
    criterion("gradient_checks", Duration::from_secs(60), || {
        use covevo::activation::{Activation, ACTIVATIONS};
        use covevo::init::Initializer;
        let mut descriptors: Vec<NetworkDescriptor> = Vec::new();
        // 14 crafted genomes guarantee every activation appears with the
        // flags both off and on.
        for &a in &ACTIVATIONS {
            descriptors.push(NetworkDescriptor {
                hidden_widths: vec![3],
                activations: vec![a],
                initializers: vec![Initializer::Xavier],
                dropout_flags: vec![false],
                batchnorm_flags: vec![false],
            });
            descriptors.push(NetworkDescriptor {
                hidden_widths: vec![4, 2],
                activations: vec![a, Activation::Identity],
                initializers: vec![Initializer::Normal, Initializer::Uniform],
                dropout_flags: vec![true, true],
                batchnorm_flags: vec![true, true],
            });
        }
        let constraints = SearchConstraints::new(3, 8);
        let mut rng = stream(77);
        while descriptors.len() < 50 {
            descriptors.push(random_descriptor(&constraints, &mut rng));
        }
        let acts: HashSet<&str> = descriptors
            .iter()
            .flat_map(|d| d.activations.iter().map(|a| a.name()))
            .collect();
        assert_eq!(acts.len(), 7, "sample must span all activations");
        for flag in [true, false] {
            assert!(descriptors.iter().any(|d| d.dropout_flags.contains(&flag)));
            assert!(descriptors.iter().any(|d| d.batchnorm_flags.contains(&flag)));
        }
        for (case, d) in descriptors.iter().enumerate() {
            gradient_check_one(d, case as u64);
        }
    });
}

// ---------------------------------------------------------------------
// Criterion 3: hand-checkable arithmetic, reproduced exactly.
// ---------------------------------------------------------------------

#[test]
fn exact_arithmetic() {
    criterion("exact_arithmetic", Duration::from_secs(30), || {
        // Balanced accuracy: TP=8 of P=10, TN=3 of Neg=5.
        let mut pred = vec![1u8; 8];
        let mut truth = vec![1u8; 8];
        pred.extend([0, 0]);
        truth.extend([1, 1]);
        pred.extend([0, 0, 0]);
        truth.extend([0, 0, 0]);
        pred.extend([1, 1]);
        truth.extend([0, 0]);
        let b = balanced_accuracy(&pred, &truth).unwrap();
        assert_eq!(b, 0.7);
        assert_eq!(b, 0.5 * (8.0 / 10.0 + 3.0 / 5.0));

        // Fitness blend: q=0.8, coverage 0.5, b_acc 0.7.
        assert_eq!(blend(0.8, 0.5, 0.7), 0.54);
        assert_eq!(blend(0.8, 0.5, 0.7), 0.8 * 0.5 + (1.0 - 0.8) * 0.7);
        // q=0.2, certainty 0.5, b_acc 0.7: 0.66 up to one ulp of the
        // hand-rounded decimal.
        let f = blend(0.2, 0.5, 0.7);
        assert_eq!(f, 0.2 * 0.5 + (1.0 - 0.2) * 0.7);
        assert!((f - 0.66).abs() < 1e-15);

        // Certainty of {0.9, 0.1, 0.5}, printed as 0.7667.
        assert_eq!(cert(&[0.5, 0.5, 0.5]).unwrap(), 0.5);
        let c = cert(&[0.9, 0.1, 0.5]).unwrap();
        assert_eq!(c, (0.9 + 0.9 + 0.5) / 3.0);
        assert!((c - 0.7667).abs() < 5e-5);
        assert_eq!(cert(&[0.0, 1.0]).unwrap(), 1.0);

        // Evaluation budget: 20 initial + 30 generations x 20 offspring.
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let config = GaConfig::new(20, 30, 12);
        let result = evolve(&config, |d, _| {
            calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let f = 1.0 / (1.0 + d.hidden_neuron_count() as f64);
            Ok(FitnessValue {
                f,
                b_acc: f,
                aux: None,
                failed: false,
            })
        })
        .unwrap();
        assert_eq!(result.evaluations, 620);
        assert_eq!(calls.load(std::sync::atomic::Ordering::Relaxed), 620);
    });
}

// ---------------------------------------------------------------------
// Criterion 4: GA behavior on the separable blob problem.
// ---------------------------------------------------------------------

fn blob_pipeline(run: u64, q: f64) -> DatasetSplit {
    let data = two_blobs(200, derive_seed(3000, &[run]));
    let (train, val, test) = split(&data, (0.6, 0.2, 0.2), derive_seed(3100, &[run])).unwrap();
    let (labeled, unlabeled) = mask_labels(&train, q, derive_seed(3200, &[run])).unwrap();
    standardize(DatasetSplit::new(labeled, unlabeled, val, test, q))
}

#[test]
fn ga_properties() {
    criterion("ga_properties", Duration::from_secs(300), || {
        let train_cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let mut monotone = 0;
        let mut accurate = 0;
        for run in 0..20u64 {
            let splits = blob_pipeline(run, 0.0);
            let ga = GaConfig::new(10, 10, derive_seed(4000, &[run]));
            let result =
                evolve(&ga, |d, s| supervised_fitness(d, &splits, &train_cfg, s)).unwrap();
            if result
                .best_per_generation
                .windows(2)
                .all(|w| w[1] >= w[0])
            {
                monotone += 1;
            }
            let descriptors: Vec<NetworkDescriptor> = result
                .final_population()
                .iter()
                .map(|i| i.descriptor.clone())
                .collect();
            let finals =
                final_evaluate(&descriptors, &splits, &train_cfg, derive_seed(5000, &[run]))
                    .unwrap();
            let best = finals.iter().map(|&(b, _)| b).fold(f64::NEG_INFINITY, f64::max);
            if best >= 0.95 {
                accurate += 1;
            }
        }
        assert_eq!(monotone, 20, "{monotone}/20 non-decreasing trajectories");
        assert!(accurate >= 18, "only {accurate}/20 runs reached 0.95");
    });
}

// ---------------------------------------------------------------------
// Criterion 5: the pseudo-label strategy without qualifying predictions
// collapses to the supervised result, bitwise.
// ---------------------------------------------------------------------

#[test]
fn ret_noop_equivalence() {
    criterion("ret_noop_equivalence", Duration::from_secs(60), || {
        let d = NetworkDescriptor {
            hidden_widths: vec![4],
            activations: vec![covevo::activation::Activation::Tanh],
            initializers: vec![covevo::init::Initializer::Xavier],
            dropout_flags: vec![false],
            batchnorm_flags: vec![false],
        };
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let seed = 424242;

        let data = two_blobs(240, 31);
        let (train, val, test) = split(&data, (0.6, 0.2, 0.2), 32).unwrap();

        // Candidate unlabeled rows straddling the class boundary, then
        // filtered to those the trained model is genuinely unsure about.
        let mut rng = stream(33);
        let pool = Array2::from_shape_fn((400, 2), |(i, j)| {
            let x0: f64 = rng.random_range(-2.0..2.0);
            let eps: f64 = rng.random_range(-0.05..0.05);
            let _ = i;
            if j == 0 {
                x0
            } else {
                -x0 + eps
            }
        });
        let net = train_descriptor(&d, &train.0, &train.1, &cfg, seed)
            .unwrap()
            .expect("training succeeds");
        let probs = net.predict_proba(&pool).unwrap();
        let undecided: Vec<usize> = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.42 && p < 0.58)
            .map(|(i, _)| i)
            .collect();
        assert!(
            undecided.len() >= 5,
            "construction produced only {} undecided rows",
            undecided.len()
        );
        let unlabeled = pool.select(ndarray::Axis(0), &undecided);

        let splits = DatasetSplit::new(train, unlabeled, val, test, 0.5);
        let sup = supervised_fitness(&d, &splits, &cfg, seed).unwrap();
        let ret = ret_fitness(&d, &splits, &FitnessSpec::ret(), &cfg, seed).unwrap();
        assert_eq!(ret.aux, Some(0.0), "no pseudo-label may qualify");
        assert_eq!(ret.f.to_bits(), sup.f.to_bits());
        assert_eq!(ret.b_acc.to_bits(), sup.b_acc.to_bits());
        assert!(!ret.failed && !sup.failed);
    });
}

// ---------------------------------------------------------------------
// Criterion 6: the desk-scale study.
// ---------------------------------------------------------------------

fn study_config(out_dir: &std::path::Path, body: &str) -> ExperimentConfig {
    let data_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    ExperimentConfig::from_toml(&format!(
        "[experiment]\ndatasets = [\"breast_w\"]\ndata_dir = \"{}\"\noutput_dir = \"{}\"\n{body}",
        data_dir.display(),
        out_dir.display()
    ))
    .unwrap()
}

#[test]
fn desk_scale_study() {
    criterion("desk_scale_study", Duration::from_secs(1800), || {
        let out = tempfile::tempdir().unwrap();
        let cfg = study_config(
            out.path(),
            "q_grid = [0.2, 0.8]\nstrategies = [\"nc\", \"tknc\", \"kmn\"]\nrepetitions = 3\nglobal_seed = 2024\n\n[ga]\npopulation_size = 10\ngenerations = 10\n",
        );
        let outcome = run_experiment(&cfg).unwrap();
        assert!(outcome.failed_cells.is_empty(), "{:?}", outcome.failed_cells);
        assert_eq!(outcome.summary.len(), 6);

        let mean = |strategy: &str, q: f64| -> f64 {
            outcome
                .summary
                .iter()
                .find(|r| r.strategy == strategy && r.q == q)
                .unwrap_or_else(|| panic!("missing summary row {strategy} q={q}"))
                .mean_best_test_b_acc
        };
        for strategy in ["NC", "TKNC", "KMN"] {
            for q in [0.2, 0.8] {
                let m = mean(strategy, q);
                assert!(
                    (0.70..=1.00).contains(&m),
                    "{strategy} q={q}: mean best test b_acc {m}"
                );
                println!("  desk study {strategy} q={q}: mean best test b_acc {m:.4}");
            }
        }
        let kmn_high = mean("KMN", 0.8);
        assert!(
            mean("NC", 0.8) >= kmn_high - 0.05,
            "NC at q=0.8 fell more than 0.05 below KMN"
        );
        assert!(
            mean("TKNC", 0.8) >= kmn_high - 0.05,
            "TKNC at q=0.8 fell more than 0.05 below KMN"
        );
    });
}

// ---------------------------------------------------------------------
// Criterion 7: rerunning a config reproduces records.csv except wall time.
// ---------------------------------------------------------------------

/// Drops the final (wall-time) column of every CSV line.
fn strip_wall_column(text: &str) -> String {
    text.lines()
        .map(|line| {
            if line.starts_with('#') {
                line.to_string()
            } else {
                match line.rsplit_once(',') {
                    Some((rest, _)) => rest.to_string(),
                    None => line.to_string(),
                }
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn determinism() {
    criterion("determinism", Duration::from_secs(600), || {
        let body = "q_grid = [0.2]\nstrategies = [\"nc\", \"cert\"]\nrepetitions = 1\nglobal_seed = 7\n\n[ga]\npopulation_size = 4\ngenerations = 2\n";
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let first = run_experiment(&study_config(out_a.path(), body)).unwrap();
        let second = run_experiment(&study_config(out_b.path(), body)).unwrap();
        assert!(first.failed_cells.is_empty() && second.failed_cells.is_empty());

        let text_a = std::fs::read_to_string(&first.records_path).unwrap();
        let text_b = std::fs::read_to_string(&second.records_path).unwrap();
        assert_eq!(
            strip_wall_column(&text_a),
            strip_wall_column(&text_b),
            "records differ beyond the wall-time column"
        );
        // The wall-time column really is the only varying one: line counts
        // and the version header must agree.
        assert_eq!(text_a.lines().count(), text_b.lines().count());
        assert!(text_a.starts_with("# covevo records v1"));
    });
}
