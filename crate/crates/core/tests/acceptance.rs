//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use caf_core::describe::render_summary_prompt;
use caf_core::metrics::{histogram, BinSpec, MetricField, RepoMetrics};
use caf_core::mix::{
    mix_stream, mixed_loss, nll, pass_at_k, Alpha, MixConfig, MixError, MixPolicy,
};
use caf_core::pipeline::{run_pipeline, RepoDecision, RunConfig, Stage};
use caf_core::sample::{
    read_dataset, render_prompt, write_dataset, CafSample, Dependency, Task, WriteOptions,
    SCHEMA_VERSION,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dependency_oracles() -> Outcome {
    let start = Instant::now();
    let oracles = common::load_oracles();
    ensure(oracles.len() >= 15, || {
        format!("only {} fixtures", oracles.len())
    })?;
    let mut problems = Vec::new();
    for oracle in &oracles {
        problems.extend(common::check_oracle(oracle));
    }
    let elapsed = start.elapsed();
    ensure(problems.is_empty(), || problems.join("; "))?;
    ensure(elapsed.as_secs_f64() < 5.0, || format!("took {elapsed:?}"))?;
    Ok(format!("{} fixtures in {elapsed:.2?}", oracles.len()))
}

/// Writes a repository whose only call tree has exactly `depth` levels and
/// whose widest node has `siblings` children.
fn plant_repo(dir: &Path, depth: usize, siblings: usize, cross_file: bool) {
    fs::create_dir_all(dir).unwrap();
    let mut main = String::new();
    let mut side = String::new();
    let leaves: Vec<String> = (1..siblings).map(|i| format!("leaf{i}")).collect();
    for leaf in &leaves {
        let target = if cross_file { &mut side } else { &mut main };
        writeln!(target, "def {leaf}():\n    return 0\n\n").unwrap();
    }
    if cross_file && !leaves.is_empty() {
        main = format!("from side import {}\n\n\n{main}", leaves.join(", "));
    }
    // Star variant fans out at the root, the other at the last inner node.
    let fan_at = if cross_file {
        depth.saturating_sub(2)
    } else {
        0
    };
    for level in 0..depth {
        let mut calls = Vec::new();
        if level + 1 < depth {
            calls.push(format!("step{}", level + 1));
        }
        if level == fan_at && depth > 1 {
            calls.extend(leaves.iter().cloned());
        }
        writeln!(main, "def step{level}(x):").unwrap();
        for c in &calls {
            writeln!(main, "    x = {c}() + x").unwrap();
        }
        writeln!(main, "    return x\n\n").unwrap();
    }
    fs::write(dir.join("main.py"), main).unwrap();
    if cross_file {
        fs::write(dir.join("side.py"), side).unwrap();
    }
}

fn filter_reproduction() -> Outcome {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut planted = BTreeMap::new();
    for i in 0..200 {
        let depth = 1 + i % 10;
        let siblings = if depth == 1 { 0 } else { 1 + (i / 10) % 10 };
        let id = format!("repo{i:03}");
        plant_repo(&corpus.path().join(&id), depth, siblings, i >= 100);
        planted.insert(id, (depth, siblings));
    }
    let mut cfg = RunConfig::new(corpus.path(), out.path());
    cfg.mix.alpha = Alpha::ZERO;
    run_pipeline(&cfg, &[Stage::Scan, Stage::Analyze, Stage::Filter]).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(out.path().join("filter/decisions.json")).unwrap();
    let decisions: Vec<RepoDecision> = serde_json::from_str(&text).unwrap();
    ensure(decisions.len() == 200, || {
        format!("{} decisions", decisions.len())
    })?;
    let mut disagreements = Vec::new();
    let mut kept = 0;
    for d in &decisions {
        let (depth, siblings) = planted[&d.repo_id];
        let m = d.metrics.as_ref().ok_or("metrics missing")?;
        if (m.max_depth, m.max_siblings) != (depth, siblings) {
            disagreements.push(format!(
                "{} measured ({}, {}) planted ({depth}, {siblings})",
                d.repo_id, m.max_depth, m.max_siblings
            ));
        }
        let expected = (3..=6).contains(&depth) && (3..=10).contains(&siblings);
        if d.decision.is_keep() != expected {
            disagreements.push(format!("{} kept={}", d.repo_id, d.decision.is_keep()));
        }
        kept += usize::from(expected);
    }
    ensure(disagreements.is_empty(), || disagreements.join("; "))?;
    Ok(format!("200 repos, {kept} kept, 0 disagreements"))
}

fn sample(task: Task, i: usize) -> CafSample {
    CafSample {
        task,
        input_x: format!("{task:?} problem {i}"),
        dependencies_d: vec![Dependency {
            name: format!("dep{i}"),
            body: format!("def dep{i}():\n    return {i}\n"),
        }],
        target_y: format!("target {i}"),
        provenance: format!("{task:?}#{i}"),
        alpha_tag: None,
        schema_version: SCHEMA_VERSION,
    }
}

fn pool(task: Task, n: usize) -> Vec<CafSample> {
    (0..n).map(|i| sample(task, i)).collect()
}

fn mix_exactness() -> Outcome {
    let total = 8000;
    let mut notes = Vec::new();
    for (num, den) in [(1, 4), (1, 2), (3, 4), (1, 1)] {
        let alpha = Alpha::new(num, den).unwrap();
        let want_math = (8000.0 * num as f64 / den as f64).round() as usize;
        let want_code = total - want_math;
        let cfg = MixConfig {
            alpha,
            seed: 17,
            total,
            policy: MixPolicy::ExactQuota,
        };
        let small = mix_stream(&pool(Task::Math, 4000), &pool(Task::Code, 4000), &cfg);
        let feasible = want_math <= 4000 && want_code <= 4000;
        let (math, code) = if feasible {
            (pool(Task::Math, 4000), pool(Task::Code, 4000))
        } else {
            match small {
                Err(MixError::InsufficientSamples {
                    needed, available, ..
                }) => ensure(
                    available == 4000 && needed == want_math.max(want_code),
                    || format!("alpha {alpha}: needed {needed} available {available}"),
                )?,
                Ok(_) => return Err(format!("alpha {alpha}: 4000+4000 should not suffice")),
            }
            notes.push(format!("{alpha} infeasible at 4000+4000"));
            (pool(Task::Math, 8000), pool(Task::Code, 8000))
        };
        let stream = mix_stream(&math, &code, &cfg).map_err(|e| e.to_string())?;
        let got = stream.iter().filter(|s| s.task == Task::Math).count();
        ensure(stream.len() == total && got == want_math, || {
            format!("alpha {alpha}: {got} math of {}", stream.len())
        })?;
        let again = mix_stream(&math, &code, &cfg).map_err(|e| e.to_string())?;
        ensure(stream == again, || {
            format!("alpha {alpha}: seed repeat differs")
        })?;
    }
    Ok(format!(
        "quotas exact, seed repeats identical ({})",
        notes.join(", ")
    ))
}

fn formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (lm, lc, a) = (
            rng.random_range(0.0..20.0),
            rng.random_range(0.0..20.0),
            rng.random_range(0.0..=1.0),
        );
        let got = mixed_loss(lm, lc, a).map_err(|e| e.to_string())?;
        let oracle = lc + a * (lm - lc);
        worst = worst.max((got - oracle).abs());
    }
    ensure(worst <= 1e-12, || format!("mixed_loss off by {worst:e}"))?;

    let mut worst_nll: f64 = 0.0;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=20);
        let probs: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..=1.0)).collect();
        let logs: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
        let oracle = -probs.iter().product::<f64>().ln();
        let got = nll(&logs).map_err(|e| e.to_string())?;
        worst_nll = worst_nll.max((got - oracle).abs());
    }
    ensure(worst_nll <= 1e-12, || format!("nll off by {worst_nll:e}"))?;

    let mut vectors = 0;
    for len in 1..=12usize {
        for bits in 0u32..(1 << len) {
            let outcomes: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            let first = outcomes.iter().position(|&o| o);
            let mut previous = false;
            for k in 1..=len {
                let got = pass_at_k(&outcomes, k).map_err(|e| e.to_string())?;
                ensure(got == first.is_some_and(|f| f < k), || {
                    format!("pass@{k} of {outcomes:?}")
                })?;
                ensure(!previous || got, || format!("not monotone at {outcomes:?}"))?;
                previous = got;
            }
            vectors += 1;
        }
    }
    Ok(format!(
        "loss err {worst:.1e}, nll err {worst_nll:.1e}, {vectors} boolean vectors"
    ))
}

fn golden_prompts() -> Outcome {
    let deps = vec![
        Dependency {
            name: "Nat.add_comm".into(),
            body: "theorem Nat.add_comm (n m : ℕ) : n + m = m + n".into(),
        },
        Dependency {
            name: "Nat.succ_le".into(),
            body: "theorem Nat.succ_le {n m : ℕ} : n.succ ≤ m ↔ n < m".into(),
        },
    ];
    let mut math = sample(Task::Math, 0);
    math.dependencies_d = deps;
    math.input_x = "Show that addition of naturals commutes.".into();
    let expected_math = "Use the following pre-defined Lean 4 dependencies:\n\
theorem Nat.add_comm (n m : ℕ) : n + m = m + n\n\ntheorem Nat.succ_le {n m : ℕ} : n.succ ≤ m ↔ n < m\n\
\n\
Based on the context and the problem description, generate a single, syntactically correct Lean 4 formal statement that accurately captures the problem's meaning.\n\
\n\
Problem Description:\n\
Show that addition of naturals commutes.";
    ensure(render_prompt(&math) == expected_math, || {
        format!("math prompt: {:?}", render_prompt(&math))
    })?;

    let mut code = sample(Task::Code, 0);
    code.dependencies_d = vec![Dependency {
        name: "util.square".into(),
        body: "def square(x):\n    return x * x\n".into(),
    }];
    code.input_x = "Sum the squares of a list.".into();
    let expected_code = "Use the following pre-defined functions:\n\
def square(x):\n    return x * x\n\
\n\
\n\
Based on the context and the problem description, generate a syntactically correct function implementation that accurately captures the problem's meaning.\n\
Problem Description:\n\
Sum the squares of a list.";
    ensure(render_prompt(&code) == expected_code, || {
        format!("code prompt: {:?}", render_prompt(&code))
    })?;

    let snippet = "def f(xs):\n    return sum(square(x) for x in xs)\n";
    let expected_summary = format!(
        "Provide a concise description of the problem solved in the code snippet below. Format the response as a docstring.\n\n{snippet}"
    );
    ensure(render_summary_prompt(snippet) == expected_summary, || {
        "summary prompt differs".into()
    })?;
    Ok("math, code and summary prompts byte-identical".into())
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                found.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    found.sort();
    found
}

fn parallel_determinism() -> Outcome {
    let runs: Vec<_> = [1, 8]
        .into_iter()
        .map(|workers| {
            let out = tempfile::tempdir().unwrap();
            let mut cfg = RunConfig::new(common::fixtures().join("corpus"), out.path());
            cfg.math_records = Some(common::fixtures().join("math.jsonl"));
            cfg.parallelism = workers;
            run_pipeline(&cfg, &Stage::ALL).map(|_| out)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let (one, eight) = (runs[0].path(), runs[1].path());
    let files = files_under(one);
    ensure(files == files_under(eight), || "different file sets".into())?;
    let mut compared = 0;
    for rel in files.iter().filter(|p| !p.ends_with("timings.json")) {
        ensure(
            fs::read(one.join(rel)).unwrap() == fs::read(eight.join(rel)).unwrap(),
            || format!("{} differs", rel.display()),
        )?;
        compared += 1;
    }
    Ok(format!("{compared} files byte-identical"))
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let texts = [
        "plain",
        "quote \" and \\ slash",
        "tab\tand\nnewline",
        "ünïcödé ∀x, x = x",
        "",
    ];
    let mut make = |task: Task, i: usize| {
        let mut s = sample(task, i);
        s.input_x = format!("{} {i}", texts[rng.random_range(0..texts.len())]);
        s.target_y = texts[rng.random_range(0..texts.len())].to_string();
        s.dependencies_d.truncate(rng.random_range(0..=1));
        s
    };
    let math: Vec<_> = (0..500).map(|i| make(Task::Math, i)).collect();
    let code: Vec<_> = (0..500).map(|i| make(Task::Code, i)).collect();
    let cfg = MixConfig {
        alpha: Alpha::HALF,
        seed: 3,
        total: 1000,
        policy: MixPolicy::ExactQuota,
    };
    let stream = mix_stream(&math, &code, &cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.jsonl");
    let second = dir.path().join("second.jsonl");
    let opts = WriteOptions::default();
    let m1 = write_dataset(&stream, &first, &opts).map_err(|e| e.to_string())?;
    let back = read_dataset(&first).map_err(|e| e.to_string())?;
    ensure(back == stream, || "read samples differ".into())?;
    let m2 = write_dataset(&back, &second, &opts).map_err(|e| e.to_string())?;
    ensure(m1.sample_count == 1000, || {
        format!("{} samples", m1.sample_count)
    })?;
    ensure(m1.content_hash == m2.content_hash, || {
        "content hash changed".into()
    })?;
    ensure(
        fs::read(&first).unwrap() == fs::read(&second).unwrap(),
        || "bytes differ".into(),
    )?;
    Ok(format!("hash {}", &m1.content_hash[..12]))
}

fn histogram_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..500 {
        let n = rng.random_range(1..=300);
        let metrics: Vec<RepoMetrics> = (0..n)
            .map(|i| RepoMetrics {
                repo_id: format!("r{i}"),
                max_depth: rng.random_range(0..=15),
                max_siblings: rng.random_range(0..=40),
                function_count: 0,
                token_count: 0,
            })
            .collect();
        for field in [MetricField::Depth, MetricField::Siblings] {
            let values: Vec<usize> = metrics
                .iter()
                .map(|m| match field {
                    MetricField::Depth => m.max_depth,
                    MetricField::Siblings => m.max_siblings,
                })
                .collect();
            let width = rng.random_range(1..=4);
            let max = *values.iter().max().unwrap();
            let bins = BinSpec {
                start: 0,
                width,
                count: max / width + 1,
            };
            let h = histogram(&metrics, field, bins).map_err(|e| e.to_string())?;
            let mut tally = vec![0; bins.count];
            for v in &values {
                tally[v / width] += 1;
            }
            ensure(h.total() == n && h.counts == tally, || {
                format!("trial {trial} {field:?}: {:?} vs {tally:?}", h.counts)
            })?;
        }
    }
    Ok("500 random sets, depth and siblings".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("dependency oracles", dependency_oracles),
        ("filter reproduction", filter_reproduction),
        ("mix exactness", mix_exactness),
        ("formula exactness", formulas),
        ("prompt golden tests", golden_prompts),
        ("determinism under parallelism", parallel_determinism),
        ("dataset round-trip", round_trip),
        ("histogram conservation", histogram_conservation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
