//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fewmatch::classifier::{score_episode_classifier, DEFAULT_EPOCHS, DEFAULT_LR};
use fewmatch::matchers::{
    class_score, enumerate_tuples, match_chamfer, match_dtw, similarity_matrix, Aggregation,
    ChamferVariant, MatcherKind, MatcherSpec, SimilarityMatrix, TupleMode,
};
use fewmatch::projection::init_projection;
use fewmatch::scorer::{evaluate, evaluate_with, predict, score_episode};
use fewmatch::store::{
    build_fixed_test_episodes, generate_synthetic, Dataset, Episode, FeatureSet, Query, Split,
    SplitCounts, SyntheticSpec,
};
use fewmatch::trainer::{episode_loss, TrainState};
use fewmatch::{ProjectionParams, SeedStream};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_matrix(rng: &mut SeedStream, rows: usize, cols: usize) -> SimilarityMatrix {
    SimilarityMatrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.symmetric(1.0)).collect(),
    )
    .unwrap()
}

fn random_video(rng: &mut SeedStream, id: String, n: usize, d: usize) -> Arc<FeatureSet> {
    Arc::new(FeatureSet::new(id, n, d, (0..n * d).map(|_| rng.normal() as f32).collect()).unwrap())
}

fn random_episode(rng: &mut SeedStream, way: usize, shot: usize, n: usize, d: usize) -> Episode {
    let support = (0..way)
        .map(|c| {
            (0..shot)
                .map(|s| random_video(rng, format!("s{c}_{s}"), n, d))
                .collect()
        })
        .collect();
    let queries = (0..way)
        .map(|c| Query {
            features: random_video(rng, format!("q{c}"), n, d),
            class: c,
        })
        .collect();
    Episode::new(
        0,
        (0..way).map(|c| c.to_string()).collect(),
        support,
        queries,
    )
    .unwrap()
}

fn l2(x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter().map(|v| v / norm).collect()
}

fn clips(fs: &FeatureSet) -> Vec<Vec<f64>> {
    fs.clips()
        .map(|c| l2(&c.iter().map(|&v| v as f64).collect::<Vec<_>>()))
        .collect()
}

fn criterion_1() -> Outcome {
    let mut rng = SeedStream::new(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rows = 1 + rng.below(8) as usize;
        let cols = 1 + rng.below(8) as usize;
        let m = random_matrix(&mut rng, rows, cols);
        let mut fq = 0.0;
        for i in 0..rows {
            let mut best = f64::NEG_INFINITY;
            for j in 0..cols {
                best = best.max(m.get(i, j));
            }
            fq += best;
        }
        fq /= rows as f64;
        let mut fs = 0.0;
        for j in 0..cols {
            let mut best = f64::NEG_INFINITY;
            for i in 0..rows {
                best = best.max(m.get(i, j));
            }
            fs += best;
        }
        fs /= cols as f64;
        for (variant, expect) in [
            (ChamferVariant::Q, fq),
            (ChamferVariant::S, fs),
            (ChamferVariant::Qs, fq + fs),
        ] {
            worst = worst.max((match_chamfer(variant, &m) - expect).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("1000 matrices, max abs err {worst:.2e}"),
    )
}

fn all_paths_best(m: &SimilarityMatrix) -> (f64, usize) {
    let n = m.rows();
    let mut best = f64::NEG_INFINITY;
    let mut count = 0;
    let mut stack = vec![(0usize, 0usize, m.get(0, 0), 1usize)];
    while let Some((i, j, sum, len)) = stack.pop() {
        if i == n - 1 && j == n - 1 {
            count += 1;
            best = best.max(sum / len as f64);
            continue;
        }
        for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
            let (a, b) = (i + di, j + dj);
            if a < n && b < n {
                stack.push((a, b, sum + m.get(a, b), len + 1));
            }
        }
    }
    (best, count)
}

fn criterion_2() -> Outcome {
    let mut rng = SeedStream::new(202);
    let mut mismatches = 0;
    let mut paths = 0;
    for n in 1..=5 {
        for _ in 0..200 {
            let m = random_matrix(&mut rng, n, n);
            let (best, count) = all_paths_best(&m);
            paths += count;
            if match_dtw(&m, 0.0).unwrap() != best {
                mismatches += 1;
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("1000 matrices (200 per n = 1..5), {paths} paths, {mismatches} mismatches"),
    )
}

/// Smallest top-1 minus top-2 gap over every maximum the matcher takes, for
/// tuple length 1 and the given projection.
fn max_tie_margin(episode: &Episode, spec: &MatcherSpec, params: &ProjectionParams) -> f64 {
    let project = |fs: &FeatureSet| -> Vec<Vec<f64>> {
        fs.clips()
            .map(|c| {
                params
                    .project(&c.iter().map(|&v| v as f64).collect::<Vec<_>>())
                    .unwrap()
            })
            .collect()
    };
    let gap = |v: Vec<f64>| {
        let mut v = v;
        v.sort_by(|a, b| b.total_cmp(a));
        if v.len() < 2 {
            f64::INFINITY
        } else {
            v[0] - v[1]
        }
    };
    let mut margin = f64::INFINITY;
    for q in &episode.queries {
        let qp = project(&q.features);
        for shots in &episode.support {
            let mats: Vec<SimilarityMatrix> = shots
                .iter()
                .map(|x| similarity_matrix(&qp, &project(x)).unwrap())
                .collect();
            let mats = if spec.aggregation == Aggregation::Joint {
                vec![fewmatch::matchers::joint_matrix(&mats).unwrap()]
            } else {
                mats
            };
            for m in &mats {
                let rows = (0..m.rows()).map(|i| m.row(i).to_vec());
                let cols =
                    (0..m.cols()).map(|j| (0..m.rows()).map(|i| m.get(i, j)).collect::<Vec<_>>());
                match spec.kind {
                    MatcherKind::Max => margin = margin.min(gap(m.values().to_vec())),
                    MatcherKind::ChamferQ => margin = rows.map(gap).fold(margin, f64::min),
                    MatcherKind::ChamferS => margin = cols.map(gap).fold(margin, f64::min),
                    MatcherKind::ChamferQs => {
                        margin = rows.chain(cols).map(gap).fold(margin, f64::min)
                    }
                    _ => {}
                }
            }
        }
    }
    margin
}

fn criterion_3() -> Outcome {
    let mut rng = SeedStream::new(303);
    let specs = [
        MatcherSpec::new(MatcherKind::ChamferQs),
        MatcherSpec::new(MatcherKind::ChamferQ),
        MatcherSpec::new(MatcherKind::ChamferS),
        MatcherSpec::new(MatcherKind::ChamferQs).with_aggregation(Aggregation::Joint),
        MatcherSpec::new(MatcherKind::Mean),
        MatcherSpec::new(MatcherKind::Max),
        MatcherSpec::new(MatcherKind::Diag),
        MatcherSpec::new(MatcherKind::Linear),
        MatcherSpec::new(MatcherKind::Dtw),
        MatcherSpec::new(MatcherKind::Linear).with_aggregation(Aggregation::Joint),
    ];
    let h = 1e-6;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
    let (mut checked, mut excluded, mut worst) = (0usize, 0usize, 0.0f64);
    for k in 0..50 {
        let spec = &specs[k % specs.len()];
        let episode = random_episode(&mut rng, 3, 2, 3, 4);
        let mut params = init_projection(4, 5, rng.next_u64()).unwrap();
        params
            .gain
            .iter_mut()
            .for_each(|g| *g = 1.0 + rng.symmetric(0.3));
        params.bias.iter_mut().for_each(|b| *b = rng.symmetric(0.3));
        let mut state = TrainState::new(params, spec, 10.0, 3, 0).unwrap();
        if let Some(w) = state.linear_weights.as_mut() {
            w.iter_mut().for_each(|v| *v += rng.symmetric(0.1));
        }
        if max_tie_margin(&episode, spec, &state.params) < 1e-7 {
            excluded += 1;
            continue;
        }
        let (_, grads) = episode_loss(&episode, spec, &state).unwrap();
        let loss_at = |s: &TrainState| episode_loss(&episode, spec, s).unwrap().0;
        let mut compare = |analytic: f64, bump: &dyn Fn(&mut TrainState, f64)| {
            let mut plus = state.clone();
            bump(&mut plus, h);
            let mut minus = state.clone();
            bump(&mut minus, -h);
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            checked += 1;
            worst = worst.max(rel(analytic, numeric));
        };
        for i in 0..grads.projection.weight.len() {
            compare(grads.projection.weight[i], &|s, d| s.params.weight[i] += d);
        }
        for i in 0..grads.projection.gain.len() {
            compare(grads.projection.gain[i], &|s, d| s.params.gain[i] += d);
        }
        for i in 0..grads.projection.bias.len() {
            compare(grads.projection.bias[i], &|s, d| s.params.bias[i] += d);
        }
        compare(grads.log_tau, &|s, d| s.log_tau += d);
        if let Some(g) = &grads.linear {
            for (i, &a) in g.iter().enumerate() {
                compare(a, &|s, d| s.linear_weights.as_mut().unwrap()[i] += d);
            }
        }
    }
    outcome(
        worst <= 1e-5,
        format!(
            "50 episodes, {checked} partials, {excluded} tie-excluded, max rel err {worst:.2e}"
        ),
    )
}

fn reversed(fs: &FeatureSet) -> FeatureSet {
    fs.permuted(&(0..fs.n()).rev().collect::<Vec<_>>()).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = SeedStream::new(404);
    let kinds = [
        MatcherKind::Mean,
        MatcherKind::Max,
        MatcherKind::ChamferQ,
        MatcherKind::ChamferS,
        MatcherKind::ChamferQs,
    ];
    let identity = ProjectionParams::identity(6);
    let mut violations = 0;
    for _ in 0..100 {
        let episode = random_episode(&mut rng, 5, 2, 8, 6);
        let mut shuffle = |fs: &Arc<FeatureSet>| {
            let mut order: Vec<usize> = (0..fs.n()).collect();
            rng.shuffle(&mut order);
            Arc::new(fs.permuted(&order).unwrap())
        };
        let support = episode
            .support
            .iter()
            .map(|s| s.iter().map(&mut shuffle).collect())
            .collect();
        let queries = episode
            .queries
            .iter()
            .map(|q| Query {
                features: shuffle(&q.features),
                class: q.class,
            })
            .collect();
        let permuted = Episode::new(0, episode.class_labels.clone(), support, queries).unwrap();
        for kind in kinds {
            let spec = MatcherSpec::new(kind);
            let a = score_episode(&episode, &spec, &identity).unwrap();
            let b = score_episode(&permuted, &spec, &identity).unwrap();
            let same = a.iter().zip(&b).all(|(x, y)| {
                x.0.iter()
                    .map(|v| v.to_bits())
                    .eq(y.0.iter().map(|v| v.to_bits()))
            });
            violations += usize::from(!same);
        }
    }

    // temporal witness: a video against itself and against its reversal
    let video = random_video(&mut rng, "w".into(), 8, 6);
    let back = reversed(&video);
    let m_same = similarity_matrix(&clips(&video), &clips(&video)).unwrap();
    let m_rev = similarity_matrix(&clips(&video), &clips(&back)).unwrap();
    let diag = |m: &SimilarityMatrix| {
        class_score(
            &MatcherSpec::new(MatcherKind::Diag),
            std::slice::from_ref(m),
        )
        .unwrap()
    };
    let dtw = |m: &SimilarityMatrix| {
        class_score(&MatcherSpec::new(MatcherKind::Dtw), std::slice::from_ref(m)).unwrap()
    };
    let diag_changes = diag(&m_same) != diag(&m_rev);
    let dtw_changes = dtw(&m_same) != dtw(&m_rev);

    // tuple witness: two classes with the same clips in opposite order
    let eye: Vec<Vec<f32>> = (0..4)
        .map(|i| (0..4).map(|j| f32::from(u8::from(i == j))).collect())
        .collect();
    let fwd = Arc::new(FeatureSet::from_clips("fwd", &eye).unwrap());
    let bwd = Arc::new(reversed(&fwd).with_video_id("bwd"));
    let make = |q: &Arc<FeatureSet>| {
        Episode::new(
            0,
            vec!["fwd".into(), "bwd".into()],
            vec![vec![fwd.clone()], vec![bwd.clone()]],
            vec![Query {
                features: q.clone(),
                class: 0,
            }],
        )
        .unwrap()
    };
    let predict_with = |spec: &MatcherSpec, q: &Arc<FeatureSet>| {
        let params = ProjectionParams::identity(4 * spec.tuple_len);
        predict(&score_episode(&make(q), spec, &params).unwrap()[0]).unwrap()
    };
    let plus = MatcherSpec::chamfer_plus_plus(2).with_tuples(2, TupleMode::Ordered);
    let plain = MatcherSpec::new(MatcherKind::ChamferQs);
    let plus_changes = predict_with(&plus, &fwd) != predict_with(&plus, &bwd);
    let plain_same = predict_with(&plain, &fwd) == predict_with(&plain, &bwd);

    outcome(
        violations == 0 && diag_changes && dtw_changes && plus_changes && plain_same,
        format!(
            "500 invariance comparisons, {violations} violations; witness: diag changes={diag_changes}, \
             dtw changes={dtw_changes}, chamfer++ prediction changes={plus_changes}, chamfer l=1 unchanged={plain_same}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = SeedStream::new(505);
    let mut k1_mismatch = 0;
    for kind in MatcherKind::ALL {
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 8, 8);
            let single = class_score(&MatcherSpec::new(kind), std::slice::from_ref(&m)).unwrap();
            let joint = class_score(
                &MatcherSpec::new(kind).with_aggregation(Aggregation::Joint),
                &[m],
            )
            .unwrap();
            k1_mismatch += usize::from(single.to_bits() != joint.to_bits());
        }
    }
    let mut inequality_failures = 0;
    for _ in 0..200 {
        let shots: Vec<SimilarityMatrix> = (0..5).map(|_| random_matrix(&mut rng, 8, 8)).collect();
        let q = MatcherSpec::new(MatcherKind::ChamferQ);
        let joint = class_score(&q.clone().with_aggregation(Aggregation::Joint), &shots).unwrap();
        let per_shot_mean = shots
            .iter()
            .map(|m| match_chamfer(ChamferVariant::Q, m))
            .sum::<f64>()
            / 5.0;
        inequality_failures += usize::from(joint < per_shot_mean || joint.is_nan());
    }
    outcome(
        k1_mismatch == 0 && inequality_failures == 0,
        format!("k=1 joint vs single: {k1_mismatch} mismatches over 8 kinds; k=5 chamfer_q joint < shot mean: {inequality_failures}/200"),
    )
}

fn criterion_6() -> Outcome {
    let ordered = enumerate_tuples(8, 3, TupleMode::Ordered).unwrap().len();
    let all = enumerate_tuples(8, 3, TupleMode::All).unwrap().len();
    outcome(
        ordered == 56 && all == 336,
        format!("ordered={ordered} all={all}"),
    )
}

fn dataset(spec: &SyntheticSpec) -> Dataset {
    let (m, f) = generate_synthetic(spec).unwrap();
    Dataset::from_parts(m, f).unwrap()
}

fn accuracy(episodes: &[Episode], spec: &MatcherSpec, d: usize) -> f64 {
    let params = ProjectionParams::identity(d * spec.tuple_len);
    evaluate(episodes, spec, &params, 0)
        .unwrap()
        .mean_accuracy()
}

fn criterion_7() -> Outcome {
    let spec = SyntheticSpec {
        classes: SplitCounts {
            train: 24,
            val: 12,
            test: 6,
        },
        noise_sigma: 0.1,
        order_pairs: 3,
        seed: 7,
        ..SyntheticSpec::default()
    };
    let ds = dataset(&spec);
    let episodes = build_fixed_test_episodes(&ds, Split::Test, 5, 1, 1, 1000, 7).unwrap();
    let diag = accuracy(&episodes, &MatcherSpec::new(MatcherKind::Diag), spec.d);
    let dtw = accuracy(&episodes, &MatcherSpec::new(MatcherKind::Dtw), spec.d);
    let mean = accuracy(&episodes, &MatcherSpec::new(MatcherKind::Mean), spec.d);
    outcome(
        diag >= 0.95 && dtw >= 0.95 && mean <= 0.65,
        format!("diag={diag:.3} dtw={dtw:.3} mean={mean:.3} (need >= 0.95, >= 0.95, <= 0.65)"),
    )
}

fn prototype_dataset() -> (Dataset, SyntheticSpec) {
    let spec = SyntheticSpec {
        seed: 8,
        ..SyntheticSpec::default()
    };
    (dataset(&spec), spec)
}

fn criterion_8() -> Outcome {
    let (ds, spec) = prototype_dataset();
    let episodes = build_fixed_test_episodes(&ds, Split::Test, 5, 5, 1, 1000, 8).unwrap();
    let chamfer = accuracy(
        &episodes,
        &MatcherSpec::new(MatcherKind::ChamferQs).with_aggregation(Aggregation::Joint),
        spec.d,
    );
    let mean = accuracy(&episodes, &MatcherSpec::new(MatcherKind::Mean), spec.d);
    outcome(
        chamfer >= mean - 0.01 && chamfer >= 0.90 && mean >= 0.90,
        format!("chamfer_qs joint={chamfer:.3} mean={mean:.3}"),
    )
}

fn criterion_9() -> Outcome {
    let (ds, spec) = prototype_dataset();
    let classify = |episodes: &[Episode]| {
        evaluate_with(episodes, 0, |e| {
            score_episode_classifier(e, DEFAULT_EPOCHS, DEFAULT_LR)
        })
        .unwrap()
        .mean_accuracy()
    };
    let five = build_fixed_test_episodes(&ds, Split::Test, 5, 5, 1, 1000, 9).unwrap();
    let clf5 = classify(&five);
    let one = build_fixed_test_episodes(&ds, Split::Test, 5, 1, 1, 1000, 9).unwrap();
    let clf1 = classify(&one);
    let (best_kind, best) = MatcherKind::ALL
        .iter()
        .map(|&k| (k, accuracy(&one, &MatcherSpec::new(k), spec.d)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    outcome(
        clf5 >= 0.90 && clf1 <= best + 0.02,
        format!(
            "classifier 5-shot={clf5:.3}; 1-shot={clf1:.3} vs best matcher {best_kind}={best:.3}"
        ),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_fewmatch"))
        .args(args)
        .env_remove("FEWMATCH_SEED")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    run_cli(&[
        "synth",
        "--out",
        &p("data"),
        "--order-pairs",
        "2",
        "--seed",
        "10",
    ]);
    let eval = |out: &str, workers: &str| {
        run_cli(&[
            "eval",
            "--data",
            &p("data"),
            "--out",
            &p(out),
            "--method",
            "chamfer_qs,dtw,classifier",
            "--episodes",
            "150",
            "--shot",
            "2",
            "--seed",
            "10",
            "--workers",
            workers,
        ]);
    };
    eval("a", "1");
    eval("b", "1");
    eval("c", "4");
    let files = |dir: &str| {
        let mut names: Vec<_> = fs::read_dir(root.join(dir))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        names
    };
    let read = |dir: &str, name: &std::ffi::OsStr| fs::read(Path::new(&p(dir)).join(name)).unwrap();
    let names = files("a");
    let mut differing = Vec::new();
    for other in ["b", "c"] {
        if files(other) != names {
            differing.push(format!("{other}: file list"));
            continue;
        }
        for n in &names {
            if read("a", n) != read(other, n) {
                differing.push(format!("{other}/{}", n.to_string_lossy()));
            }
        }
    }
    outcome(
        differing.is_empty() && names.len() == 4,
        format!(
            "{} output files compared across 2 repeat runs and workers 1 vs 4; differing: {differing:?}",
            names.len()
        ),
    )
}

/// Name, runner and runtime budget of one criterion.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "chamfer oracle equivalence",
            criterion_1,
            Duration::from_secs(1),
        ),
        ("dtw path enumeration", criterion_2, Duration::from_secs(5)),
        ("gradient fidelity", criterion_3, Duration::from_secs(30)),
        (
            "permutation invariance and witnesses",
            criterion_4,
            Duration::MAX,
        ),
        ("joint matching identities", criterion_5, Duration::MAX),
        ("tuple combinatorics", criterion_6, Duration::MAX),
        (
            "temporal-order separation",
            criterion_7,
            Duration::from_secs(120),
        ),
        (
            "prototype separation",
            criterion_8,
            Duration::from_secs(120),
        ),
        ("classifier baseline", criterion_9, Duration::MAX),
        ("reproducibility", criterion_10, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let passed = result.passed && in_time;
        failed += usize::from(!passed);
        let budget = if *budget == Duration::MAX {
            String::new()
        } else {
            format!(" budget {:.0?}", budget)
        };
        println!(
            "criterion {:>2} {}: {name}: {} [{:.2?}{budget}]",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
