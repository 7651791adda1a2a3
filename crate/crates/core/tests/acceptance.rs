//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p ppd-core --test acceptance --release` for timings
//! that reflect an optimized build.

mod common;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use ppd_core::confidence::{
    lg_score, rd_from_distributions, rd_score, select_reliable, ConfidenceMode, PseudoLabelRecord,
    RdOptions,
};
use ppd_core::demos::NeighborIndex;
use ppd_core::gateway::http::{HttpBackend, HttpConfig, Transport};
use ppd_core::gateway::simulated::SimulatedBackend;
use ppd_core::gateway::{
    builtin_labels, Backend, ClassifierResponse, ClassifyRequest, Demonstration, BUILTIN_TASKS,
};
use ppd_core::optimizer::{
    gradient_from_losses, project_simplex, vr_pge_gradient, GradientOptions, ScoreEstimator,
};
use ppd_core::pipeline::{ExportOptions, Pipeline, RunConfig};
use ppd_core::policy::entropy_gradient;
use ppd_core::synthetic::{self, BenchmarkConfig, BenchmarkOutcome, SYNTH_TASK};
use ppd_core::vocab::{count_ngrams, pmi, segment};
use ppd_core::{Error, Fields, Gateway, GatewayError, Prompt, PromptPolicy, TaskTemplate, TokenDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// 1. Simplex projection

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(2..=6);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = project_simplex(&v).map_err(err)?;
        let oracle = common::qp_projection(&v);
        let d = common::dist(p.probs(), &oracle);
        worst = worst.max(d);
        ensure(d <= 1e-6, || format!("case {case}: {v:?} -> {:?}, oracle {oracle:?}", p.probs()))?;

        let again = project_simplex(p.probs()).map_err(err)?;
        ensure(common::dist(again.probs(), p.probs()) <= 1e-12, || {
            format!("case {case}: projection is not idempotent")
        })?;

        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q = project_simplex(&w).map_err(err)?;
        ensure(
            common::dist(p.probs(), q.probs()) <= common::dist(&v, &w) + 1e-12,
            || format!("case {case}: projection expanded a distance"),
        )?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("1000 cases, max deviation {worst:.2e}, {secs:.3}s"))
}

// ---------------------------------------------------------------------------
// 2. Entropy gradient

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(2..=32);
        // Mixed with the uniform distribution to stay well inside the simplex.
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|r| 0.5 * r / total + 0.5 / n as f64).collect();
        let analytic = entropy_gradient(&p).map_err(err)?;
        let numeric = common::entropy_fd(&p, 1e-6);
        for (a, b) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - b).abs());
        }
        ensure(worst <= 1e-5, || format!("case {case} (N={n}): max gap {worst:.2e}"))?;
    }
    Ok(format!("100 distributions, max gap {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 3. VR-PGE

fn options(estimator: ScoreEstimator, samples: usize) -> GradientOptions {
    GradientOptions {
        samples,
        entropy_weight: 0.0,
        estimator,
    }
}

fn mean_and_se(values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = values.len() as f64;
    let dim = values[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| values.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let se = (0..dim)
        .map(|j| {
            let var = values.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    (mean, se)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:+.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();

    // Equal losses: the main term vanishes bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..=4);
        let dists = (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
                let t: f64 = raw.iter().sum();
                TokenDistribution::new(raw.iter().map(|r| r / t).collect())
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let policy = PromptPolicy::from_distributions(dists).map_err(err)?;
        let samples = rng.random_range(2..=6);
        let prompts: Vec<Prompt> = (0..samples).map(|k| policy.sample_prompt(k as u64)).collect();
        let loss = rng.random_range(0.0..10.0);
        for estimator in [ScoreEstimator::Verbatim, ScoreEstimator::Textbook] {
            let g = gradient_from_losses(&policy, prompts.clone(), vec![loss; samples], options(estimator, samples))
                .map_err(err)?;
            ensure(g.per_token.iter().flatten().all(|x| *x == 0.0), || {
                format!("equal losses {loss} left a nonzero main term")
            })?;
        }
    }

    // Two-outcome loss: L(z) = 1 when token 1 is drawn.
    let p = [0.3, 0.7];
    let samples = 4;
    let loss_of = |z: usize| if z == 1 { 1.0 } else { 0.0 };
    let policy = PromptPolicy::from_distributions(vec![TokenDistribution::new(p.to_vec()).map_err(err)?])
        .map_err(err)?;
    let loss = |prompt: &Prompt| -> ppd_core::Result<f64> { Ok(loss_of(prompt.indices[0])) };

    let mut report = Vec::new();
    let mut verbatim_ok = true;
    for (name, estimator, textbook) in [
        ("verbatim", ScoreEstimator::Verbatim, false),
        ("textbook", ScoreEstimator::Textbook, true),
    ] {
        let exact = common::vr_pge_expectation(&p, samples, &loss_of, textbook);
        let estimates = (0..10_000u64)
            .map(|s| vr_pge_gradient(&policy, s, &loss, options(estimator, samples)).map(|g| g.per_token[0].clone()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let (mean, se) = mean_and_se(&estimates);
        let within = mean.iter().zip(&exact).zip(&se).all(|((m, e), s)| (m - e).abs() <= 3.0 * s);
        if estimator == ScoreEstimator::Verbatim {
            verbatim_ok = within;
        }
        let truth = common::true_gradient(&p, &loss_of);
        let bias: Vec<f64> = exact.iter().zip(&truth).map(|(e, t)| e - t).collect();
        let tangent = |v: &[f64]| -> Vec<f64> {
            let avg = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x - avg).collect()
        };
        let tangent_bias: Vec<f64> = tangent(&exact)
            .iter()
            .zip(tangent(&truth))
            .map(|(e, t)| e - t)
            .collect();
        report.push(format!(
            "{name}: MC {} +- {} vs exact {} ({}); bias vs grad E[L] {}, on the simplex tangent {}",
            fmt_vec(&mean),
            fmt_vec(&se),
            fmt_vec(&exact),
            if within { "within 3 SE" } else { "outside 3 SE" },
            fmt_vec(&bias),
            fmt_vec(&tangent_bias),
        ));
    }
    for line in &report {
        println!("    {line}");
    }
    ensure(verbatim_ok, || "verbatim Monte-Carlo mean is outside 3 standard errors".into())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.2}s"))?;
    Ok(format!("equal-loss term exactly zero; verbatim MC agrees with enumeration; {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// 4. Confidence arithmetic

/// Fixed scores per (sentence, temperature).
struct Table(HashMap<(String, u64), Vec<f64>>);

impl Table {
    fn new(rows: &[(&str, f64, &[f64])]) -> Self {
        Self(
            rows.iter()
                .map(|(s, t, v)| ((s.to_string(), t.to_bits()), v.to_vec()))
                .collect(),
        )
    }
}

impl Backend for Table {
    fn id(&self) -> String {
        "table".into()
    }

    fn classify(&self, request: &ClassifyRequest<'_>) -> Result<ClassifierResponse, GatewayError> {
        let key = (request.query["sentence"].clone(), request.temperature.to_bits());
        self.0
            .get(&key)
            .cloned()
            .map(ClassifierResponse::from_scores)
            .ok_or_else(|| GatewayError::Protocol(format!("no row for {key:?}")))
    }
}

fn sentence(s: &str) -> Fields {
    Fields::from([("sentence".to_string(), s.to_string())])
}

fn table_gateway(rows: &[(&str, f64, &[f64])]) -> Gateway {
    Gateway::new(
        Table::new(rows),
        TaskTemplate::builtin("sst2").unwrap(),
        builtin_labels("sst2").unwrap(),
    )
}

fn close(a: (f64, usize), value: f64, class: usize) -> bool {
    (a.0 - value).abs() <= 1e-12 && a.1 == class
}

fn criterion_4() -> Outcome {
    let gw = table_gateway(&[
        ("q", 1.0, &[3.0, 1.0]),
        ("two", 0.5, &[0.8, 0.2]),
        ("two", 1.5, &[0.6, 0.4]),
        ("flat", 0.5, &[2.0, 2.0]),
        ("flat", 1.0, &[1.0, 1.0]),
        ("a", 0.0, &[1.0, 0.0]),
        ("b", 0.0, &[0.0, 1.0]),
        ("even", 1.0, &[0.5, 0.5]),
        ("skew", 1.0, &[0.9, 0.1]),
    ]);
    let lg = |s: &str, ts: &[f64]| lg_score(&gw, &sentence(s), "", ts).map_err(err);
    ensure(close(lg("q", &[1.0])?, 0.75, 0), || "single temperature".into())?;
    ensure(close(lg("two", &[0.5, 1.5])?, 0.7, 0), || "two temperatures".into())?;
    ensure(close(lg("flat", &[0.5, 1.0])?, 0.5, 0), || "uniform responses".into())?;

    let even = sentence("even");
    let skew = sentence("skew");
    let rd = |s: &str, ctx: &Fields| {
        rd_score(&gw, &sentence(s), "", &[1.0], &[ctx], RdOptions::default()).map_err(err)
    };
    ensure(close(rd("a", &even)?, 1.0, 0), || "one-hot over a flat baseline".into())?;
    ensure(close(rd("b", &skew)?, 1.0, 1), || "biased baseline".into())?;
    ensure(
        close(rd_from_distributions(&[0.6, 0.4], &[0.5, 0.5], false).map_err(err)?, 0.6, 0),
        || "soft numerator".into(),
    )?;
    let raw = rd_from_distributions(&[0.0, 1.0], &[0.9, 0.1], true).map_err(err)?;
    ensure(close(raw, 10.0, 1), || format!("raw ratio {raw:?}"))?;

    // Reliable sets shrink as the threshold rises.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base: Vec<PseudoLabelRecord> = (0..1000u64)
        .map(|i| PseudoLabelRecord {
            example_id: i,
            text_hash: String::new(),
            zero_shot_label: rng.random_range(0..3),
            c_lg: Some(rng.random_range(1.0 / 3.0..=1.0)),
            c_rd: None,
            reliable: false,
            learned_label: None,
        })
        .collect();
    let mut previous: Option<Vec<usize>> = None;
    for step in 0..=100 {
        let gamma = step as f64 / 100.0;
        let mut records = base.clone();
        let chosen = match select_reliable(&mut records, gamma, ConfidenceMode::Lg, 3) {
            Ok(s) => s.indices,
            Err(Error::EmptyReliableSet { .. }) => Vec::new(),
            Err(e) => return Err(err(e)),
        };
        let expected: Vec<usize> = (0..base.len()).filter(|&i| base[i].c_lg.unwrap() >= gamma).collect();
        ensure(chosen == expected, || format!("gamma {gamma}: wrong reliable set"))?;
        if let Some(prev) = &previous {
            ensure(chosen.iter().all(|i| prev.contains(i)), || {
                format!("gamma {gamma}: set grew")
            })?;
        }
        previous = Some(chosen);
    }
    Ok("7 hand-computed scores to 1e-12; reliable sets nested over 101 thresholds x 1000 examples".into())
}

// ---------------------------------------------------------------------------
// 5. KNN and PMI

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        // Small integer grid so exact ties occur.
        let ids: Vec<u64> = (0..50).map(|i| i * 7 + trial).collect();
        let vectors: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.random_range(0..4) as f64).collect())
            .collect();
        let index = NeighborIndex::new(ids.clone(), vectors.clone()).map_err(err)?;
        for &q in &ids {
            let k = rng.random_range(1..=10);
            let got = index.knn(q, k).map_err(err)?;
            let want = common::knn(&ids, &vectors, q, k);
            ensure(got == want, || format!("trial {trial}, query {q}: {got:?} vs {want:?}"))?;
        }
    }

    let lexicon = ["good", "bad", "film", "plot", "very", "not", "the", "a"];
    for trial in 0..20 {
        let corpus: Vec<String> = (0..50)
            .map(|_| {
                let len = rng.random_range(1..=8);
                let words: Vec<&str> = (0..len).map(|_| lexicon[rng.random_range(0..lexicon.len())]).collect();
                words.join(" ")
            })
            .collect();
        let stats = count_ngrams(&corpus).map_err(err)?;
        let counts = common::counts(&corpus);
        for a in lexicon {
            for b in lexicon {
                if !counts.uni.contains_key(a) || !counts.uni.contains_key(b) {
                    continue;
                }
                let got = pmi(a, b, &stats).map_err(err)?;
                let want = common::pmi(&counts, a, b);
                ensure(got == want || (got - want).abs() <= 1e-12 * want.abs(), || {
                    format!("trial {trial}: pmi({a}, {b}) = {got} vs {want}")
                })?;
            }
        }
        for threshold in [-1.0, 0.0, 0.5, 1.0] {
            for s in &corpus {
                let got = segment(s, &stats, threshold);
                let want = common::segmentation(&counts, &common::words(s), threshold);
                ensure(got == want, || format!("segmenting {s:?}: {got:?} vs {want:?}"))?;
            }
        }
    }
    Ok("1000 KNN queries and 20 corpora of 50 sentences match the oracles".into())
}

// ---------------------------------------------------------------------------
// 6 and 7. Synthetic benchmark

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn benchmark(alpha: f64) -> Result<Vec<BenchmarkOutcome>, String> {
    SEEDS
        .iter()
        .map(|&seed| {
            let mut config = BenchmarkConfig::new(seed);
            config.trainer.entropy_weight = alpha;
            synthetic::run_benchmark(&config).map_err(err)
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn criterion_6(runs: &[BenchmarkOutcome], secs: f64) -> Outcome {
    for (seed, r) in SEEDS.iter().zip(runs) {
        println!(
            "    seed {seed}: N={} direct {:.3} final {:.3} reliable {} ({:.3} correct) entropy {:.3} -> {:.3} calls {}",
            r.vocabulary.len(),
            r.direct_accuracy,
            r.final_accuracy,
            r.reliable,
            r.reliable_accuracy,
            r.entropy_start,
            r.entropy_end,
            r.backend_calls
        );
    }
    ensure(runs.iter().all(|r| r.vocabulary.len() == 20), || "vocabulary size is not 20".into())?;
    let direct = mean(runs.iter().map(|r| r.direct_accuracy));
    let fin = mean(runs.iter().map(|r| r.final_accuracy));
    ensure(fin - direct >= 0.05, || format!("gain {:.3} below 0.05", fin - direct))?;
    ensure(runs.iter().all(|r| r.entropy_end < r.entropy_start), || {
        "entropy did not decrease on every seed".into()
    })?;
    ensure(secs < 180.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "direct {direct:.3} -> final {fin:.3} (+{:.1}pp) over 5 seeds, {secs:.1}s",
        100.0 * (fin - direct)
    ))
}

fn criterion_7(with: &[BenchmarkOutcome], without: &[BenchmarkOutcome]) -> Outcome {
    let acc = |runs: &[BenchmarkOutcome]| runs.iter().map(|r| r.final_accuracy).collect::<Vec<_>>();
    let sd_with = std_dev(&acc(with));
    let sd_without = std_dev(&acc(without));
    let h_with = mean(with.iter().map(|r| r.entropy_end));
    let h_without = mean(without.iter().map(|r| r.entropy_end));
    for (seed, (a, b)) in SEEDS.iter().zip(with.iter().zip(without)) {
        println!(
            "    seed {seed}: alpha=2e-5 acc {:.3} entropy {:.4} | alpha=0 acc {:.3} entropy {:.4}",
            a.final_accuracy, a.entropy_end, b.final_accuracy, b.entropy_end
        );
    }
    println!(
        "    accuracy std: alpha=2e-5 {sd_with:.4}, alpha=0 {sd_without:.4} ({})",
        if sd_with <= sd_without { "not larger" } else { "larger" }
    );
    ensure(h_with < h_without, || {
        format!("mean final entropy {h_with:.4} with alpha=2e-5 is not below {h_without:.4} with alpha=0")
    })?;
    Ok(format!("mean final entropy {h_with:.4} (alpha=2e-5) < {h_without:.4} (alpha=0)"))
}

// ---------------------------------------------------------------------------
// 8. Determinism and budget

/// Forwards to the simulator and counts every call that reaches it.
struct Counting {
    inner: SimulatedBackend,
    calls: Arc<AtomicU64>,
}

impl Backend for Counting {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn classify(&self, request: &ClassifyRequest<'_>) -> Result<ClassifierResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.classify(request)
    }
}

/// Writes `data.jsonl` into `dir` and returns a config reading it, with
/// output under `out`.
fn write_task(dir: &Path, out: &Path, examples: usize, iterations: u64) -> Result<RunConfig, String> {
    let bench = BenchmarkConfig::new(11);
    let task = synthetic::generate(&synthetic::SynthParams {
        examples,
        ..bench.data
    });
    let data = dir.join("data.jsonl");
    std::fs::write(&data, task.to_jsonl(&["positive", "negative"])).map_err(|e| e.to_string())?;
    let mut config = RunConfig {
        task: SYNTH_TASK.into(),
        data,
        output_dir: out.to_path_buf(),
        sim: task.sim,
        confidence: bench.confidence,
        trainer: bench.trainer,
        vocab: bench.vocab,
        ..RunConfig::default()
    };
    config.trainer.iterations = iterations;
    config.vocab.n_max = 10;
    Ok(config)
}

fn full_run(config: RunConfig) -> Result<PathBuf, String> {
    let p = Pipeline::open(config).map_err(err)?;
    p.score().map_err(err)?;
    p.train(false).map_err(err)?;
    p.predict().map_err(err)?;
    p.export(None, ExportOptions::default()).map_err(err)?;
    Ok(p.output_dir().to_path_buf())
}

fn without_wall_time(log: &str) -> Vec<serde_json::Value> {
    log.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    // One config, two output directories.
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        outs.push(full_run(write_task(tmp.path(), &tmp.path().join(name), 80, 20)?)?);
    }
    for file in ["store.jsonl", "checkpoint.json", "vocab.json", "finetune.jsonl", "score_summary.json"] {
        let a = std::fs::read(outs[0].join(file)).map_err(|e| format!("{file}: {e}"))?;
        let b = std::fs::read(outs[1].join(file)).map_err(|e| format!("{file}: {e}"))?;
        ensure(a == b, || format!("{file} differs between identical runs"))?;
    }
    let log = |o: &PathBuf| std::fs::read_to_string(o.join("train_log.jsonl")).unwrap_or_default();
    ensure(without_wall_time(&log(&outs[0])) == without_wall_time(&log(&outs[1])), || {
        "training logs differ beyond wall time".into()
    })?;

    // Budgets: scoring needs 3 calls per example, training far more.
    let mut checks = Vec::new();
    for (budget, phase) in [(50u64, "score"), (400, "train")] {
        let dir = tmp.path().join(format!("budget-{budget}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let mut config = write_task(&dir, &dir.join("out"), 80, 200)?;
        config.budget = Some(budget);
        let calls = Arc::new(AtomicU64::new(0));
        let backend = Arc::new(Counting {
            inner: SimulatedBackend::new(config.sim.clone()),
            calls: calls.clone(),
        });
        let p = Pipeline::with_backend(config, backend).map_err(err)?;
        match phase {
            "score" => {
                let r = p.score();
                ensure(matches!(&r, Err(e) if e.is_budget_exceeded()), || {
                    format!("scoring under budget {budget} did not stop: {r:?}")
                })?;
            }
            _ => {
                p.score().map_err(err)?;
                let r = p.train(false).map_err(err)?;
                ensure(r.stopped_on_budget, || "training did not hit the budget".into())?;
            }
        }
        let used = calls.load(Ordering::SeqCst);
        ensure(used <= budget, || format!("{used} backend calls under budget {budget}"))?;
        checks.push(format!("{phase} {used}/{budget}"));
    }
    Ok(format!(
        "store, checkpoint, vocab, export and summary byte-identical; budgets held ({})",
        checks.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 9. Wire formats

fn golden(name: &str) -> Result<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Records request bodies and answers with a fixed logprob payload.
struct Capture(Arc<Mutex<Vec<String>>>);

impl Transport for Capture {
    fn post_json(&self, _url: &str, _key: &str, body: &str) -> Result<String, GatewayError> {
        self.0.lock().unwrap().push(body.to_string());
        Ok(r#"{"choices":[{"logprobs":{"content":[{"token":"positive","logprob":-0.1,"top_logprobs":[{"token":"negative","logprob":-2.4}]}]}}]}"#.into())
    }
}

fn template_fields(task: &str) -> Fields {
    let pairs: &[(&str, &str)] = match task {
        "sst2" => &[("sentence", "a gripping film")],
        "cola" => &[("sentence", "The cat sat on the mat.")],
        "mnli" => &[("premise", "A man is playing a guitar."), ("hypothesis", "A person makes music.")],
        "qqp" => &[
            ("question1", "How do I learn Rust?"),
            ("question2", "What is the best way to learn Rust?"),
        ],
        "mrpc" => &[("sentence1", "Shares rose 5 percent."), ("sentence2", "The stock gained 5 percent.")],
        "rte" => &[
            ("sentence1", "Paris is the capital of France."),
            ("sentence2", "France has a capital."),
        ],
        "wnli" => &[
            ("sentence1", "The trophy did not fit in the suitcase because it was too big."),
            ("sentence2", "The trophy was too big."),
        ],
        "mmlu" => &[("question", "What is 2 + 2?")],
        _ => &[],
    };
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn criterion_9() -> Outcome {
    let sent = Arc::new(Mutex::new(Vec::new()));
    let backend = HttpBackend::with_transport(
        HttpConfig {
            base_url: Some("http://localhost:9".into()),
            ..HttpConfig::default()
        },
        "key",
        Capture(sent.clone()),
    );
    let gw = Gateway::new(
        backend,
        TaskTemplate::builtin("sst2").map_err(err)?,
        builtin_labels("sst2").map_err(err)?,
    );
    let demo = Demonstration {
        fields: sentence("a fine cast"),
        pseudo_label: 0,
    };
    gw.classify(&sentence("dull script"), "great plot", &[demo], 1.0).map_err(err)?;
    let bodies: Vec<String> = sent.lock().unwrap().clone();
    ensure(bodies.len() == 1, || format!("{} requests sent", bodies.len()))?;
    ensure(format!("{}\n", bodies[0]) == golden("http_request.json")?, || {
        format!("request body differs from golden: {}", bodies[0])
    })?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data.jsonl");
    std::fs::write(
        &data,
        concat!(
            "{\"id\":0,\"sentence\":\"a gripping, well-acted film\"}\n",
            "{\"id\":1,\"sentence\":\"the \\\"twist\\\" fell flat\"}\n",
            "{\"id\":2,\"sentence\":\"café scenes drag \\\\ slowly\"}\n",
        ),
    )
    .map_err(|e| e.to_string())?;
    let dataset = ppd_core::pipeline::load_dataset(
        &data,
        None,
        TaskTemplate::builtin("sst2").map_err(err)?,
        builtin_labels("sst2").map_err(err)?,
    )
    .map_err(err)?;
    let records: Vec<PseudoLabelRecord> = dataset
        .examples
        .iter()
        .zip([0, 1, 1])
        .map(|(ex, label)| PseudoLabelRecord {
            example_id: ex.id,
            text_hash: ex.text_hash(),
            zero_shot_label: label,
            c_lg: Some(0.9),
            c_rd: None,
            reliable: true,
            learned_label: Some(label),
        })
        .collect();
    let (text, _) = ppd_core::pipeline::export_finetune(&dataset, &records, ExportOptions::default()).map_err(err)?;
    ensure(text == golden("export.jsonl")?, || format!("export differs from golden:\n{text}"))?;

    for task in BUILTIN_TASKS {
        let template = TaskTemplate::builtin(task).map_err(err)?;
        let rendered = template
            .render(&template_fields(task), &builtin_labels(task).map_err(err)?)
            .map_err(err)?;
        ensure(format!("{rendered}\n") == golden(&format!("templates/{task}.txt"))?, || {
            format!("{task} renders as {rendered:?}")
        })?;
    }
    Ok("HTTP request, export and 8 template renderings match golden files".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let mut failed = Vec::new();
    let mut report = |n: u32, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
        Err(detail) => {
            println!("FAIL criterion {n} ({name}): {detail}");
            failed.push(n);
        }
    };
    report(1, "simplex projection", criterion_1());
    report(2, "entropy gradient", criterion_2());
    report(3, "VR-PGE", criterion_3());
    report(4, "confidence arithmetic", criterion_4());
    report(5, "KNN and PMI", criterion_5());

    let start = Instant::now();
    let with = benchmark(2e-5);
    let secs = start.elapsed().as_secs_f64();
    let without = benchmark(0.0);
    match (&with, &without) {
        (Ok(w), Ok(wo)) => {
            report(6, "synthetic benchmark", criterion_6(w, secs));
            report(7, "entropy ablation", criterion_7(w, wo));
        }
        (Err(e), _) | (_, Err(e)) => {
            report(6, "synthetic benchmark", Err(e.clone()));
            report(7, "entropy ablation", Err(e.clone()));
        }
    }
    report(8, "determinism and budget", criterion_8());
    report(9, "wire formats", criterion_9());

    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
