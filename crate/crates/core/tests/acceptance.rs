//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

mod common;

use std::ops::RangeInclusive;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{ok_reply, texts, StubServer};
use qdit::embed::{embed_texts, EmbedClientConfig};
use qdit::facility::exact_sim;
use qdit::io::{
    load_embeddings_bin, read_result, save_jsonl, write_embeddings_bin, EmbeddingMatrix,
};
use qdit::testkit::{
    brute_fl_score, brute_greedy, brute_objective, exhaustive_optimum, make_synthetic,
    top_k_quality, QualityMode, SyntheticSpec, BRUTE_TIE_TOLERANCE,
};
use qdit::variants::select_cluster_with_assignment;
use qdit::{
    fl_score, load_dataset, random_baseline, select, select_greedy, select_lazy, select_stochastic,
    select_threshold, subset_metrics, sweep_alpha, Algorithm, CoverageState, DataPoint, Dataset,
    SelectionConfig, SimilarityBackend,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dims: RangeInclusive<usize>) -> Dataset {
    let dim = rng.gen_range(dims);
    let points = (0..n)
        .map(|i| DataPoint {
            id: format!("x{i}"),
            text: String::new(),
            quality: rng.gen_range(0.0..10.0),
            embedding: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    Dataset::from_points(points).expect("random embeddings are nonzero")
}

fn backend(ds: &Dataset, dense: bool) -> SimilarityBackend {
    if dense {
        SimilarityBackend::dense(ds)
    } else {
        SimilarityBackend::streaming(ds)
    }
}

fn c1_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=50);
        let ds = random_dataset(&mut rng, n, 2..=12);
        let size = rng.gen_range(0..=n);
        let subset = sample(&mut rng, n, size).into_vec();
        let fast = ok(fl_score(&ds, &subset))?;
        let slow = ok(brute_fl_score(&ds, &subset))?;
        worst = worst.max((fast - slow).abs());
    }
    ensure!(worst <= 1e-9, "max |fl - brute| = {worst:e}");
    Ok(format!("max abs diff {worst:.1e}"))
}

fn c2_incremental() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for run in 0..50 {
        let n = rng.gen_range(2..=500);
        let k = rng.gen_range(1..=50.min(n));
        let ds = random_dataset(&mut rng, n, 2..=24);
        let alpha = rng.gen_range(0.0..=1.0);
        let be = backend(&ds, run % 2 == 0);
        let r = ok(select_greedy(
            &ds,
            &be,
            &SelectionConfig::new(Algorithm::Greedy, k, alpha),
        ))?;
        let mut state = CoverageState::new(n);
        for &a in &r.selected {
            ok(state.commit(&be, a))?;
        }
        let exact = ok(fl_score(&ds, &r.selected))?;
        worst = worst.max((state.total() / n as f64 - exact).abs());
        worst = worst.max((state.score() - exact).abs());
    }
    ensure!(worst <= 1e-6, "max |incremental - fl_score| = {worst:e}");
    Ok(format!("max abs diff {worst:.1e}"))
}

fn c3_lazy_equals_greedy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let alphas = [0.0, 0.3, 0.7, 1.0];
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let n = rng.gen_range(2..=300);
        let k = rng.gen_range(1..=40.min(n));
        let ds = random_dataset(&mut rng, n, 2..=16);
        let alpha = alphas[inst % 4];
        let be = backend(&ds, inst % 3 != 0);
        let g = ok(select_greedy(
            &ds,
            &be,
            &SelectionConfig::new(Algorithm::Greedy, k, alpha),
        ))?;
        let l = ok(select_lazy(
            &ds,
            &be,
            &SelectionConfig::new(Algorithm::Lazy, k, alpha),
        ))?;
        ensure!(g.selected == l.selected, "instance {inst}: order differs");
        for (a, b) in g.objective_trace.iter().zip(&l.objective_trace) {
            worst = worst.max((a - b).abs());
        }
        ensure!(
            worst <= 1e-12,
            "instance {inst}: trace differs by {worst:e}"
        );
        ensure!(
            g.diversity == l.diversity
                && g.mean_quality == l.mean_quality
                && g.truncated == l.truncated,
            "instance {inst}: metrics differ"
        );
    }
    Ok(format!("100 instances, max trace diff {worst:.1e}"))
}

fn c4_approximation() -> Outcome {
    let bound = 1.0 - (-1.0f64).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut min_ratio = f64::INFINITY;
    for inst in 0..100 {
        let ds = random_dataset(&mut rng, 10, 2..=6);
        let alpha = [0.0, 0.5, 1.0][inst % 3];
        let be = SimilarityBackend::dense(&ds);
        let g = ok(select_greedy(
            &ds,
            &be,
            &SelectionConfig::new(Algorithm::Greedy, 3, alpha),
        ))?;
        let f = ok(brute_objective(&ds, &g.selected, alpha))?;
        let (_, opt) = ok(exhaustive_optimum(&ds, 3, alpha))?;
        ensure!(
            f >= bound * opt,
            "instance {inst}: F = {f}, optimum = {opt}"
        );
        if opt > 0.0 {
            min_ratio = min_ratio.min(f / opt);
        }
    }
    Ok(format!("min F/opt {min_ratio:.4} >= {bound:.4}"))
}

/// Checks that every pick of `path` maximizes the from-scratch facility-location
/// gain, up to [`BRUTE_TIE_TOLERANCE`].
fn check_greedy_path(ds: &Dataset, path: &[usize]) -> qdit::Result<Result<(), String>> {
    for step in 0..path.len() {
        let prefix = &path[..step];
        let base = brute_fl_score(ds, prefix)?;
        let mut with = prefix.to_vec();
        let mut gain = |c: usize| -> qdit::Result<f64> {
            with.push(c);
            let g = brute_fl_score(ds, &with)? - base;
            with.pop();
            Ok(g)
        };
        let mut best = f64::NEG_INFINITY;
        for c in (0..ds.len()).filter(|c| !prefix.contains(c)) {
            best = best.max(gain(c)?);
        }
        let picked = gain(path[step])?;
        if picked < best - BRUTE_TIE_TOLERANCE {
            return Ok(Err(format!(
                "step {step} picked gain {picked}, best is {best}"
            )));
        }
    }
    Ok(Ok(()))
}

fn c5_endpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut tied = 0;
    for inst in 0..50 {
        let n = rng.gen_range(2..=120);
        let k = rng.gen_range(1..=15.min(n));
        let ds = random_dataset(&mut rng, n, 2..=10);
        let be = SimilarityBackend::dense(&ds);
        for alg in [Algorithm::Greedy, Algorithm::Lazy] {
            let top = ok(select(&ds, &be, &SelectionConfig::new(alg, k, 1.0)))?;
            ensure!(
                top.selected == top_k_quality(&ds, k),
                "instance {inst} ({alg}): alpha=1 is not top-K quality"
            );
            let div = ok(select(&ds, &be, &SelectionConfig::new(alg, k, 0.0)))?;
            if div.selected != ok(brute_greedy(&ds, k, 0.0))? {
                ok(check_greedy_path(&ds, &div.selected))?
                    .map_err(|m| format!("instance {inst} ({alg}): {m}"))?;
                tied += 1;
            }
        }
    }
    Ok(format!("50 instances, greedy and lazy; {tied} runs resolved an exact tie differently from the oracle"))
}

fn c6_stochastic() -> Outcome {
    let ds = make_synthetic(&SyntheticSpec::acceptance_fixture(
        QualityMode::UniformRandom,
    ));
    let be = SimilarityBackend::dense(&ds);
    let greedy = ok(select_lazy(
        &ds,
        &be,
        &SelectionConfig::new(Algorithm::Lazy, 100, 0.0),
    ))?;
    let base = ok(fl_score(&ds, &greedy.selected))?;
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let cfg = SelectionConfig::new(Algorithm::Stochastic, 100, 0.0).with_seed(seed);
        let a = ok(select_stochastic(&ds, &be, &cfg))?;
        let b = ok(select_stochastic(&ds, &be, &cfg))?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure!(
            a.selected == b.selected && bits(&a.objective_trace) == bits(&b.objective_trace),
            "seed {seed}: rerun differs"
        );
        ensure!(
            a.diversity.to_bits() == b.diversity.to_bits(),
            "seed {seed}: rerun diversity differs"
        );
        ratios.push(ok(fl_score(&ds, &a.selected))? / base);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    ensure!(mean >= 0.95, "mean ratio {mean:.4} < 0.95");
    Ok(format!("mean ratio {mean:.4}, reruns bit-exact"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_qdit")).args(args).output())?;
    ensure!(
        out.status.success(),
        "qdit {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn c7_variants() -> Outcome {
    let ds = make_synthetic(&SyntheticSpec::acceptance_fixture(
        QualityMode::UniformRandom,
    ));
    let mut checked = 0usize;
    for (tau, k) in [(0.2, 500), (0.5, 500), (0.8, 500), (0.95, 300)] {
        let mut cfg = SelectionConfig::new(Algorithm::Threshold, k, 1.0);
        cfg.tau = Some(tau);
        let r = ok(select_threshold(&ds, &cfg))?;
        ensure!(r.selected.len() <= k, "threshold returned too many points");
        ensure!(
            r.truncated == (r.selected.len() < k),
            "truncated flag wrong at tau {tau}"
        );
        for (i, &a) in r.selected.iter().enumerate() {
            for &b in &r.selected[..i] {
                let s = exact_sim(&ds, a, b);
                ensure!(s <= tau, "tau {tau}: pair ({a}, {b}) has similarity {s}");
                checked += 1;
            }
        }
    }
    for (clusters, k) in [(20, 100), (7, 50), (100, 333), (13, 1000)] {
        let mut cfg = SelectionConfig::new(Algorithm::Cluster, k, 1.0).with_seed(clusters as u64);
        cfg.n_clusters = Some(clusters);
        let (r, assignment, plan) = ok(select_cluster_with_assignment(&ds, &cfg))?;
        let (lo, hi) = (
            plan.initial.iter().min().unwrap(),
            plan.initial.iter().max().unwrap(),
        );
        ensure!(
            hi - lo <= 1,
            "{clusters} clusters: initial quotas range {lo}..{hi}"
        );
        ensure!(
            plan.initial.iter().sum::<usize>() == k,
            "initial quotas do not sum to K"
        );
        let mut counts = vec![0; clusters];
        for &i in &r.selected {
            counts[assignment.labels[i]] += 1;
        }
        ensure!(
            counts == plan.adjusted && r.selected.len() == k,
            "{clusters} clusters: counts differ from plan"
        );
    }
    let dir = ok(tempfile::tempdir())?;
    let data = dir.path().join("fixture.jsonl");
    ok(save_jsonl(&ds, &data))?;
    let out = dir.path().join("r.json");
    let p = |x: &Path| x.to_str().unwrap().to_string();
    for (alg, check) in [("threshold", 0), ("cluster", 1)] {
        run_cli(&[
            "select",
            "--input",
            &p(&data),
            "--k",
            "200",
            "--alpha",
            "1",
            "--algorithm",
            alg,
            "--output",
            &p(&out),
        ])?;
        let r = ok(read_result(&out))?;
        if check == 0 {
            ensure!(
                r.tau == Some(0.5),
                "CLI threshold default tau = {:?}",
                r.tau
            );
        } else {
            ensure!(
                r.n_clusters == Some(100),
                "CLI cluster default = {:?}",
                r.n_clusters
            );
        }
    }
    Ok(format!(
        "{checked} threshold pairs checked, CLI defaults tau=0.5 clusters=100"
    ))
}

fn c8_tradeoff() -> Outcome {
    let ds = make_synthetic(&SyntheticSpec::acceptance_fixture(
        QualityMode::ClusterCorrelated,
    ));
    let be = SimilarityBackend::dense(&ds);
    let alphas = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
    let k = 100;
    let points = ok(sweep_alpha(
        &ds,
        &be,
        &alphas,
        &SelectionConfig::new(Algorithm::Lazy, k, 0.0),
    ))?;
    let (first, last) = (&points[0], &points[alphas.len() - 1]);
    ensure!(
        first.diversity > last.diversity,
        "diversity(0) {} <= diversity(1) {}",
        first.diversity,
        last.diversity
    );
    ensure!(
        last.mean_quality > first.mean_quality,
        "mean_quality(1) <= mean_quality(0)"
    );
    for p in &points {
        ensure!(
            last.mean_quality >= p.mean_quality,
            "mean_quality(1) < mean_quality({:?})",
            p.alpha
        );
    }
    let mut max_random = 0.0f64;
    for seed in 0..10 {
        let r = ok(random_baseline(&ds, k, seed))?;
        ensure!(
            r.diversity < first.diversity,
            "seed {seed}: random diversity {} >= {}",
            r.diversity,
            first.diversity
        );
        max_random = max_random.max(r.diversity);
    }
    Ok(format!(
        "diversity {:.4} -> {:.4}, quality {:.4} -> {:.4}, best random diversity {:.4}",
        first.diversity, last.diversity, first.mean_quality, last.mean_quality, max_random
    ))
}

fn c9_performance() -> Outcome {
    let ds = make_synthetic(&SyntheticSpec::new(
        100_000,
        384,
        50,
        0.6,
        QualityMode::UniformRandom,
        1,
    ));
    let be = SimilarityBackend::streaming(&ds);
    let start = Instant::now();
    let r = ok(select_lazy(
        &ds,
        &be,
        &SelectionConfig::new(Algorithm::Lazy, 1000, 0.7),
    ))?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(
        r.selected.len() == 1000,
        "selected {} points",
        r.selected.len()
    );
    Ok(format!(
        "selection {secs:.1}s on {} thread(s), {} gain evaluations",
        rayon::current_num_threads(),
        r.gain_evaluations
    ))
}

fn c10_round_trips() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let p = |x: &Path| x.to_str().unwrap().to_string();

    let ds = make_synthetic(&SyntheticSpec::new(
        400,
        16,
        6,
        0.5,
        QualityMode::ClusterCorrelated,
        10,
    ));
    let data = dir.path().join("d.jsonl");
    ok(save_jsonl(&ds, &data))?;
    let out = dir.path().join("r.json");
    run_cli(&[
        "select",
        "--input",
        &p(&data),
        "--k",
        "25",
        "--alpha",
        "0.5",
        "--algorithm",
        "lazy",
        "--output",
        &p(&out),
    ])?;
    let result = ok(read_result(&out))?;
    let loaded = ok(load_dataset(&data, None))?;
    let (d, q) = ok(subset_metrics(&loaded, &result.selected_indices))?;
    let score = ok(Command::new(env!("CARGO_BIN_EXE_qdit"))
        .args(["score", "--input", &p(&data), "--subset", &p(&out)])
        .output())?;
    ensure!(score.status.success(), "score failed");
    let v: Value = ok(serde_json::from_slice(&score.stdout))?;
    let (sd, sq) = (
        v["diversity"].as_f64().unwrap_or(f64::NAN),
        v["mean_quality"].as_f64().unwrap_or(f64::NAN),
    );
    for (a, b) in [
        (d, result.diversity),
        (sd, result.diversity),
        (q, result.mean_quality),
        (sq, result.mean_quality),
    ] {
        ensure!((a - b).abs() <= 1e-9, "score {a} vs result {b}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let values: Vec<f32> = (0..50 * 24).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
    let m = ok(EmbeddingMatrix::new(50, 24, values))?;
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    ok(write_embeddings_bin(&m, &a))?;
    let back = ok(load_embeddings_bin(&a, Some(50)))?;
    ok(write_embeddings_bin(&back, &b))?;
    ensure!(
        ok(std::fs::read(&a))? == ok(std::fs::read(&b))?,
        "QDITEMB1 bytes differ after round trip"
    );
    ensure!(back == m, "QDITEMB1 values differ after round trip");

    let stub = StubServer::start(|_, body| ok_reply(body, 8));
    let mut cfg = EmbedClientConfig::new(&stub.url, "key");
    cfg.backoff_base = Duration::from_millis(10);
    let res = ok(embed_texts(&texts(130), &cfg))?;
    ensure!(
        stub.request_count() == 3 && res.requests == 3,
        "130 texts took {} requests",
        stub.request_count()
    );
    ensure!(res.matrix.n == 130, "got {} rows", res.matrix.n);

    let stub = StubServer::start(|k, body| {
        if k < 2 {
            (429, json!({}))
        } else {
            ok_reply(body, 8)
        }
    });
    let mut cfg = EmbedClientConfig::new(&stub.url, "key");
    cfg.backoff_base = Duration::from_millis(10);
    let res = ok(embed_texts(&texts(5), &cfg))?;
    ensure!(
        res.retries == 2 && stub.request_count() == 3,
        "retries {} requests {}",
        res.retries,
        stub.request_count()
    );
    Ok("score within 1e-9, QDITEMB1 byte-exact, batching 130->3, retry 2x429".into())
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion {
            id: 1,
            name: "oracle equivalence",
            limit: secs(5),
            run: c1_oracle_equivalence,
        },
        Criterion {
            id: 2,
            name: "incremental correctness",
            limit: secs(30),
            run: c2_incremental,
        },
        Criterion {
            id: 3,
            name: "lazy equals greedy",
            limit: secs(60),
            run: c3_lazy_equals_greedy,
        },
        Criterion {
            id: 4,
            name: "approximation guarantee",
            limit: secs(60),
            run: c4_approximation,
        },
        Criterion {
            id: 5,
            name: "endpoint reductions",
            limit: secs(30),
            run: c5_endpoints,
        },
        Criterion {
            id: 6,
            name: "stochastic greedy quality",
            limit: secs(300),
            run: c6_stochastic,
        },
        Criterion {
            id: 7,
            name: "variant contracts",
            limit: secs(300),
            run: c7_variants,
        },
        Criterion {
            id: 8,
            name: "tradeoff shape",
            limit: secs(300),
            run: c8_tradeoff,
        },
        Criterion {
            id: 9,
            name: "performance sanity",
            limit: secs(600),
            run: c9_performance,
        },
        Criterion {
            id: 10,
            name: "format and CLI round trips",
            limit: secs(30),
            run: c10_round_trips,
        },
    ];
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| filter.is_empty() || filter.contains(&c.id))
    {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > c.limit => Err(format!(
                "took {:.1}s, limit {}s",
                elapsed.as_secs_f64(),
                c.limit.as_secs()
            )),
            other => other,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {tag} {} ({:.2}s): {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
