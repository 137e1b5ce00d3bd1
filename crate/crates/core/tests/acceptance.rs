//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use clbgmm::bgmm::{self, BgmmConfig, Covariance, CovarianceType};
use clbgmm::cli::{self, SynthArgs};
use clbgmm::dataset::{build_task_sequence, Sample, SyntheticConfig, TaskBatch, MODALITY_A, MODALITY_B};
use clbgmm::ensemble::{ClassConditionalEnsemble, LabeledVector};
use clbgmm::fusion::{FusionPipeline, ModalitySlot};
use clbgmm::metrics::{
    average_accuracy, average_incremental_accuracy, forgetting, forgetting_measure, relative_evolution,
};
use clbgmm::protocol::{oracle_union_accuracy, run_continual, AccuracyMatrix, RunResult};
use common::{six_task_config, synthetic_experiment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: Vec<(&str, Option<Duration>, fn() -> Outcome)> = vec![
        ("1 metric oracle equivalence", Some(Duration::from_secs(5)), metric_oracle),
        ("2 relative evolution arithmetic", None, relative_evolution_paper),
        ("3 IM = 0 with shared per-class seeds", Some(Duration::from_secs(60)), intransigence_zero),
        ("4 no interference between tasks", None, no_interference),
        ("5 BGMM pruning recovery", Some(Duration::from_secs(30)), pruning_recovery),
        ("6 ELBO monotonicity", None, elbo_monotone),
        ("7 covariance ablation direction", Some(Duration::from_secs(120)), covariance_ablation),
        ("8 fusion superiority direction", Some(Duration::from_secs(180)), fusion_superiority),
        ("9 oracle dominance", None, oracle_dominance),
        ("10 run determinism", None, run_determinism),
        ("11 density normalization", None, density_normalization),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                result.pass = false;
                result.detail.push_str(&format!("; exceeded {} s limit", limit.as_secs()));
            }
        }
        if !result.pass {
            failed += 1;
        }
        println!(
            "[{}] {name}: {} ({:.2} s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---- 1 ------------------------------------------------------------------

/// Brute-force metrics over a dense `T x T` array with NaN above the diagonal.
fn brute_force(a: &[Vec<f64>], k: usize) -> (f64, f64, Vec<f64>, Option<f64>) {
    let aa = |k: usize| (0..k).map(|j| a[k - 1][j]).sum::<f64>() / k as f64;
    let aia = (1..=k).map(aa).sum::<f64>() / k as f64;
    let f: Vec<f64> = (1..k)
        .map(|j| {
            let past = (1..k).map(|i| a[i - 1][j - 1]).filter(|v| !v.is_nan());
            past.fold(f64::NEG_INFINITY, f64::max) - a[k - 1][j - 1]
        })
        .collect();
    let fm = (k >= 2).then(|| f.iter().sum::<f64>() / f.len() as f64);
    (aa(k), aia, f, fm)
}

fn metric_oracle() -> Outcome {
    const T: usize = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dense: Vec<Vec<f64>> = (0..T)
            .map(|k| (0..T).map(|j| if j <= k { rng.random::<f64>() } else { f64::NAN }).collect())
            .collect();
        let mut m = AccuracyMatrix::new((1..=T).map(|i| format!("t{i}")).collect());
        for (k, row) in dense.iter().enumerate() {
            m.push_row(row[..=k].to_vec()).unwrap();
        }
        for k in 1..=T {
            let (aa, aia, f, fm) = brute_force(&dense, k);
            worst = worst.max((average_accuracy(&m, k).unwrap() - aa).abs());
            worst = worst.max((average_incremental_accuracy(&m, k).unwrap() - aia).abs());
            for (j, fj) in f.iter().enumerate() {
                worst = worst.max((forgetting(&m, j + 1, k).unwrap() - fj).abs());
            }
            if let Some(fm) = fm {
                worst = worst.max((forgetting_measure(&m, k).unwrap() - fm).abs());
            }
        }
    }
    outcome(worst <= 1e-12, format!("100 matrices, max abs error {worst:.2e}"))
}

// ---- 2 ------------------------------------------------------------------

fn relative_evolution_paper() -> Outcome {
    let all = relative_evolution(0.575, 0.530).unwrap();
    let disgust = relative_evolution(0.496, 0.527).unwrap();
    let pass = (all * 100.0 - 8.0).abs() <= 1.0 && (disgust * 100.0 + 5.0).abs() <= 1.0;
    outcome(pass, format!("{:+.1}% (expected +8%), {:+.1}% (expected -5%)", all * 100.0, disgust * 100.0))
}

// ---- 3 ------------------------------------------------------------------

fn intransigence_zero() -> Outcome {
    let (manifest, tables) = synthetic_experiment(&six_task_config(), 11, BgmmConfig::default());
    let seed = 3;
    let run = run_continual(&manifest, &tables, seed).unwrap();
    let im = &run.metrics.intransigence;
    let all_zero = im.len() == 6 && im.iter().all(|v| *v == Some(0.0));

    // Rebuild each joint reference and compare its mixtures with the continual ones byte for byte.
    let batches = build_task_sequence(&manifest, &tables).unwrap();
    let pipeline = FusionPipeline::fit(&manifest.modalities, &batches[0]).unwrap();
    let mut identical = 0;
    let mut total = 0;
    for k in 1..=batches.len() {
        let union = TaskBatch::union(k, "joint", &batches[..k]);
        let joint = ClassConditionalEnsemble::new(pipeline.clone())
            .train_task(&union, &manifest.bgmm, seed)
            .unwrap();
        for model in joint.models() {
            total += 1;
            let continual = run.ensemble.model(&model.class_label).unwrap();
            if serde_json::to_string(continual).unwrap() == serde_json::to_string(&model.mixture).unwrap() {
                identical += 1;
            }
        }
    }
    outcome(
        all_zero && identical == total,
        format!("IM = {:?}; {identical}/{total} joint mixtures bit-identical", im.iter().flatten().collect::<Vec<_>>()),
    )
}

// ---- 4 ------------------------------------------------------------------

fn no_interference() -> Outcome {
    let mut checked = 0;
    let mut clean = 0;
    for seed in 1..=5 {
        let (manifest, tables) = synthetic_experiment(&six_task_config(), seed, BgmmConfig::default());
        let batches = build_task_sequence(&manifest, &tables).unwrap();
        let pipeline = FusionPipeline::fit(&manifest.modalities, &batches[0]).unwrap();
        let mut ensemble = ClassConditionalEnsemble::new(pipeline);
        for batch in &batches {
            let before: Vec<String> =
                ensemble.models().iter().map(|m| serde_json::to_string(&m.mixture).unwrap()).collect();
            ensemble = ensemble.train_task(batch, &manifest.bgmm, seed).unwrap();
            let after: Vec<String> = ensemble.models()[..before.len()]
                .iter()
                .map(|m| serde_json::to_string(&m.mixture).unwrap())
                .collect();
            checked += 1;
            if before == after {
                clean += 1;
            }
        }
    }
    outcome(clean == checked, format!("{clean}/{checked} task steps left earlier mixtures byte-identical"))
}

// ---- 5 ------------------------------------------------------------------

/// Classical EM with a fixed number of diagonal components, initialised at
/// a random point and the point farthest from it.
fn classical_em(data: &[[f64; 2]], seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = data[rng.random_range(0..data.len())];
    let dist = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let second = *data
        .iter()
        .max_by(|a, b| dist(a, &first).total_cmp(&dist(b, &first)))
        .unwrap();
    let mut means = vec![first, second];
    let mut vars = vec![[1.0f64, 1.0]; 2];
    let mut weights = vec![0.5f64, 0.5];
    for _ in 0..200 {
        let mut nk = [0.0; 2];
        let mut sx = [[0.0; 2]; 2];
        let mut sxx = [[0.0; 2]; 2];
        for x in data {
            let logp: Vec<f64> = (0..2)
                .map(|j| {
                    weights[j].ln()
                        - (0..2)
                            .map(|d| 0.5 * (vars[j][d].ln() + (x[d] - means[j][d]).powi(2) / vars[j][d]))
                            .sum::<f64>()
                })
                .collect();
            let top = logp[0].max(logp[1]);
            let z: f64 = logp.iter().map(|l| (l - top).exp()).sum();
            for j in 0..2 {
                let r = (logp[j] - top).exp() / z;
                nk[j] += r;
                for d in 0..2 {
                    sx[j][d] += r * x[d];
                    sxx[j][d] += r * x[d] * x[d];
                }
            }
        }
        for j in 0..2 {
            weights[j] = nk[j] / data.len() as f64;
            for d in 0..2 {
                means[j][d] = sx[j][d] / nk[j];
                vars[j][d] = (sxx[j][d] / nk[j] - means[j][d].powi(2)).max(1e-6);
            }
        }
    }
    means
}

fn nearest_error(found: &[Vec<f64>], truth: &[[f64; 2]]) -> f64 {
    truth
        .iter()
        .map(|t| {
            found
                .iter()
                .map(|m| ((m[0] - t[0]).powi(2) + (m[1] - t[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

fn pruning_recovery() -> Outcome {
    let truth = [[0.0, 0.0], [8.0, 6.0]];
    let config = BgmmConfig::default().with_max_components(8);
    let mut exact = 0;
    let mut means_ok = 0;
    let mut oracle_ok = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<[f64; 2]> = (0..200)
            .map(|i| {
                let c = truth[i % 2];
                [c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]
            })
            .collect();
        let (mixture, _) = bgmm::fit(&data, &config, seed).unwrap();
        let means: Vec<Vec<f64>> = mixture.components().iter().map(|c| c.mean.clone()).collect();
        if means.len() == 2 {
            exact += 1;
            if nearest_error(&means, &truth) <= 0.5 {
                means_ok += 1;
            }
        }
        let em: Vec<Vec<f64>> = classical_em(&data, seed).iter().map(|m| m.to_vec()).collect();
        if nearest_error(&em, &truth) <= 0.5 {
            oracle_ok += 1;
        }
    }
    outcome(
        exact >= 95 && means_ok == exact && oracle_ok == 100,
        format!("{exact}/100 fits kept exactly 2 components, {means_ok} of them within 0.5 of truth; fixed-J EM within 0.5 in {oracle_ok}/100"),
    )
}

// ---- 6 ------------------------------------------------------------------

fn elbo_monotone() -> Outcome {
    let types = [CovarianceType::Spherical, CovarianceType::Diagonal, CovarianceType::Full];
    let mut worst_drop: f64 = 0.0;
    let mut iterations = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(1..=4);
        let clusters = rng.random_range(1..=3);
        let n = rng.random_range(20..=80);
        let centres: Vec<Vec<f64>> =
            (0..clusters).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let data: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = &centres[i % clusters];
                c.iter().map(|m| m + Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect()
            })
            .collect();
        let config = BgmmConfig::default().with_covariance(types[seed as usize % 3]);
        let (_, state) = bgmm::fit(&data, &config, seed).unwrap();
        let trace = state.elbo_trace();
        iterations += trace.len();
        for w in trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    outcome(
        worst_drop <= 1e-8,
        format!("50 fits, {iterations} iterations, largest decrease {worst_drop:.2e}"),
    )
}

// ---- 7 ------------------------------------------------------------------

struct Split {
    train: Vec<Sample>,
    test: Vec<Sample>,
}

/// Seven classes in 50 dimensions sharing one anisotropic variance profile,
/// so only the means tell them apart.
fn ablation_data(seed: u64) -> Split {
    const D: usize = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std: Vec<f64> = (0..D).map(|_| 10f64.powf(rng.random_range(-0.7..0.5))).collect();
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for c in 0..7 {
        let mean: Vec<f64> = (0..D).map(|_| rng.random_range(-0.5..0.5)).collect();
        for n in 0..130 {
            let x: Vec<f64> = mean
                .iter()
                .zip(&std)
                .map(|(m, s)| m + s * Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
                .collect();
            let sample = Sample { sample_id: format!("c{c}-{n}"), class_label: format!("c{c}"), features: vec![x] };
            if n < 30 {
                split.train.push(sample)
            } else {
                split.test.push(sample)
            }
        }
    }
    split
}

fn covariance_ablation() -> Outcome {
    let data = ablation_data(7);
    let batch = TaskBatch {
        task_index: 1,
        name: "all".into(),
        class_labels: (0..7).map(|c| format!("c{c}")).collect(),
        train: data.train,
        test: data.test,
    };
    let pipeline: FusionPipeline = vec![ModalitySlot { name: "x".into(), dim: 50, normalizer: None }].into();
    let accuracies = |config: &BgmmConfig| -> (f64, f64) {
        let e = ClassConditionalEnsemble::new(pipeline.clone()).train_task(&batch, config, 1).unwrap();
        let eval = |s: &[Sample]| -> f64 {
            let v: Vec<LabeledVector> = e.fuse_labeled(s).unwrap();
            e.evaluate(&v).unwrap()
        };
        (eval(&batch.train), eval(&batch.test))
    };
    // One component per class isolates the covariance structure. With the
    // default budget, 30 samples spread over 10 components that never prune
    // and the prior dominates each full matrix; that figure is shown too.
    let mut scores = BTreeMap::new();
    for cov in [CovarianceType::Spherical, CovarianceType::Diagonal, CovarianceType::Full] {
        scores.insert(cov.as_str(), accuracies(&BgmmConfig::default().with_max_components(1).with_covariance(cov)));
    }
    let default_full = accuracies(&BgmmConfig::default().with_covariance(CovarianceType::Full));
    let default_diag = accuracies(&BgmmConfig::default());
    let (full_train, full_test) = scores["full"];
    let (_, diag_test) = scores["diagonal"];
    let (_, sph_test) = scores["spherical"];
    let pass = full_train >= 0.98 && full_test <= diag_test - 0.10 && diag_test >= sph_test;
    outcome(
        pass,
        format!(
            "1 component/class train/test: spherical {:.3}/{:.3}, diagonal {:.3}/{:.3}, full {:.3}/{:.3}; \
             default budget: diagonal {:.3}/{:.3}, full {:.3}/{:.3}",
            scores["spherical"].0,
            sph_test,
            scores["diagonal"].0,
            diag_test,
            full_train,
            full_test,
            default_diag.0,
            default_diag.1,
            default_full.0,
            default_full.1
        ),
    )
}

// ---- 8 and 9 --------------------------------------------------------------

struct FusionRuns {
    merged: RunResult,
    deep: RunResult,
    au: RunResult,
}

fn fusion_runs() -> Vec<FusionRuns> {
    (1..=5u64)
        .map(|seed| {
            let (manifest, tables) = synthetic_experiment(&SyntheticConfig::default(), seed, BgmmConfig::default());
            let single = |name: &str| {
                let m = manifest.with_modalities(&[name]).unwrap();
                run_continual(&m, &tables, seed).unwrap()
            };
            FusionRuns {
                merged: run_continual(&manifest, &tables, seed).unwrap(),
                deep: single(MODALITY_A),
                au: single(MODALITY_B),
            }
        })
        .collect()
}

thread_local! {
    static FUSION: std::cell::OnceCell<Vec<FusionRuns>> = const { std::cell::OnceCell::new() };
}

fn with_fusion_runs<T>(f: impl FnOnce(&[FusionRuns]) -> T) -> T {
    FUSION.with(|cell| f(cell.get_or_init(fusion_runs)))
}

fn final_aa(r: &RunResult) -> f64 {
    *r.metrics.average_accuracy.last().unwrap()
}

fn final_fm(r: &RunResult) -> f64 {
    r.metrics.forgetting_measure.last().unwrap().unwrap()
}

fn fusion_superiority() -> Outcome {
    with_fusion_runs(|runs| {
        let mean = |f: &dyn Fn(&FusionRuns) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
        let aa = [mean(&|r| final_aa(&r.merged)), mean(&|r| final_aa(&r.deep)), mean(&|r| final_aa(&r.au))];
        let fm = [mean(&|r| final_fm(&r.merged)), mean(&|r| final_fm(&r.deep)), mean(&|r| final_fm(&r.au))];
        let pass = aa[0] >= aa[1].max(aa[2]) + 0.05 && fm[0] <= fm[1].min(fm[2]) + 0.02;
        outcome(
            pass,
            format!(
                "final AA merged {:.3}, deep {:.3}, au {:.3}; final FM merged {:.3}, deep {:.3}, au {:.3}",
                aa[0], aa[1], aa[2], fm[0], fm[1], fm[2]
            ),
        )
    })
}

fn oracle_dominance() -> Outcome {
    with_fusion_runs(|runs| {
        let mut sets = 0;
        let mut dominated = 0;
        let mut strict = 0;
        let mut gap = Vec::new();
        for r in runs {
            let a = r.deep.final_predictions();
            let b = r.au.final_predictions();
            assert!(a.iter().zip(&b).all(|(x, y)| x.0 == y.0));
            let mut offset = 0;
            let mut groups: Vec<(usize, usize)> = r.deep.test_sets.iter().map(|s| {
                let g = (offset, offset + s.len());
                offset += s.len();
                g
            }).collect();
            groups.push((0, a.len()));
            for (lo, hi) in groups {
                let truth: Vec<&str> = a[lo..hi].iter().map(|(rec, _)| rec.label.as_str()).collect();
                let pa: Vec<&str> = a[lo..hi].iter().map(|x| x.1).collect();
                let pb: Vec<&str> = b[lo..hi].iter().map(|x| x.1).collect();
                let acc = |p: &[&str]| p.iter().zip(&truth).filter(|(x, y)| x == y).count() as f64 / truth.len() as f64;
                let union = oracle_union_accuracy(&pa, &pb, &truth).unwrap();
                let best = acc(&pa).max(acc(&pb));
                sets += 1;
                if union >= best {
                    dominated += 1;
                }
                if (lo, hi) == (0, a.len()) {
                    gap.push(union - best);
                    if union > best {
                        strict += 1;
                    }
                }
            }
        }
        outcome(
            dominated == sets && strict == runs.len(),
            format!(
                "union >= best single on {dominated}/{sets} test sets; overall gain per seed {:?}",
                gap.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()
            ),
        )
    })
}

// ---- 10 -----------------------------------------------------------------

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn run_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cli::cmd_synth(&SynthArgs {
        out: data.clone(),
        basic: 4,
        compound: 4,
        compounds_per_task: 3,
        dim_a: 4,
        dim_b: 4,
        per_class_train: 40,
        per_class_test: 20,
        spread: 1.0,
        bias: 1.0,
        seed: 1,
    })
    .unwrap();
    let manifest = data.join(cli::SYNTH_MANIFEST);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    cli::cmd_run(&manifest, Some(&first)).unwrap();
    cli::cmd_run(&manifest, Some(&second)).unwrap();
    let (a, b) = (read_dir_bytes(&first), read_dir_bytes(&second));
    let bytes: usize = a.values().map(Vec::len).sum();
    outcome(a == b && a.len() == 6, format!("{} files, {bytes} bytes, identical: {}", a.len(), a == b))
}

// ---- 11 -----------------------------------------------------------------

fn density_normalization() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let clusters = rng.random_range(1..=3);
        let data: Vec<[f64; 1]> = (0..60)
            .map(|i| [(i % clusters) as f64 * 4.0 + Normal::new(0.0, 0.5 + seed as f64 * 0.05).unwrap().sample(&mut rng)])
            .collect();
        let cov = [CovarianceType::Spherical, CovarianceType::Diagonal, CovarianceType::Full][seed as usize % 3];
        let (mixture, _) = bgmm::fit(&data, &BgmmConfig::default().with_covariance(cov), seed).unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in mixture.components() {
            let var = match &c.covariance {
                Covariance::Spherical(v) => *v,
                Covariance::Diagonal(v) => v[0],
                Covariance::Full(m) => m[0][0],
            };
            lo = lo.min(c.mean[0] - 10.0 * var.sqrt());
            hi = hi.max(c.mean[0] + 10.0 * var.sqrt());
        }
        // Composite Simpson's rule.
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| mixture.log_likelihood(&[x]).unwrap().exp();
        let mut sum = f(lo) + f(hi);
        for i in 1..n {
            sum += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        worst = worst.max((sum * h / 3.0 - 1.0).abs());
    }
    outcome(worst <= 1e-3, format!("20 fits, max |integral - 1| = {worst:.2e}"))
}
