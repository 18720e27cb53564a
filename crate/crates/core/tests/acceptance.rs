//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runtime budgets are part of each criterion.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use govprobe::attnio::{pool, FeatureTable, HeadMask, PoolMode};
use govprobe::dataset::{check_balance, split_with_holdout, SplitConfig};
use govprobe::experiments::{
    rank_heads_on, run_head_ablation, run_layer_sweep, run_overall, split_for, ExperimentData, ExperimentPlan,
    SummaryRow,
};
use govprobe::matcher::{match_corpus, MatchConfig};
use govprobe::probes::forest::{ForestParams, Node, RandomForest};
use govprobe::probes::logreg::{self, LogRegParams};
use govprobe::probes::{micro_average, Metrics, ProbeKind};
use govprobe::rng::SeededRng;
use govprobe::synthetic::{planted_head, random_record, PlantedConfig};
use govprobe::Execution;
use ndarray::Array2;

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn exec() -> Execution {
    Execution::default()
}

fn feature_shape() -> Outcome {
    let mut rng = SeededRng::new(1);
    let rec = random_record(&mut rng, "r", 12, 12, 2, 3);
    let full = pool(&rec, &HeadMask::full(12, 12), PoolMode::GovToDep).map_err(|e| e.to_string())?;
    ensure(full.values.len() == 144, || format!("full mask gave {}", full.values.len()))?;
    for n in 1..=12u16 {
        let mask = HeadMask::first_n_layers(12, 12, n).map_err(|e| e.to_string())?;
        let v = pool(&rec, &mask, PoolMode::GovToDep).map_err(|e| e.to_string())?;
        ensure(v.values.len() == 12 * n as usize, || format!("first {n} layers gave {}", v.values.len()))?;
    }
    Ok("144 and 12*N for N = 1..12".into())
}

fn pooling_oracle() -> Outcome {
    let mut rng = SeededRng::new(2);
    let mut compared = 0usize;
    for i in 0..1000 {
        let rec = fuzz_record(&mut rng, &format!("f{i}"));
        let mask = HeadMask::full(rec.layers, rec.heads);
        for mode in PoolMode::ALL {
            let v = pool(&rec, &mask, mode).map_err(|e| e.to_string())?;
            for (k, &(l, a)) in v.head_index_map.iter().enumerate() {
                let want = brute_force_pool(&rec, l as usize, a as usize, mode);
                ensure(v.values[k] == want, || {
                    format!("{} head ({l},{a}) {mode:?}: {} != {want}", rec.instance_id, v.values[k])
                })?;
                compared += 1;
            }
        }
    }
    Ok(format!("1000 records, {compared} pooled values equal"))
}

fn planted_data(cfg: &PlantedConfig) -> Result<ExperimentData, String> {
    let data = planted_head(cfg);
    let table = FeatureTable::from_records(exec(), &data.records, PoolMode::GovToDep).map_err(|e| e.to_string())?;
    ExperimentData::new("xx", data.instances, table).map_err(|e| e.to_string())
}

fn single_run_plan(probes: Vec<ProbeKind>) -> ExperimentPlan {
    ExperimentPlan {
        dist_thresholds: vec![3],
        probes,
        repetitions: 1,
        seed: 5,
        ..ExperimentPlan::default()
    }
}

fn planted_head_synthesis() -> Outcome {
    let cfg = PlantedConfig::default();
    let data = planted_data(&cfg)?;
    let plan = single_run_plan(ProbeKind::ALL.to_vec());
    let overall = run_overall(&plan, std::slice::from_ref(&data), exec()).map_err(|e| e.to_string())?;
    let mut accs = Vec::new();
    for r in &overall {
        ensure(r.metrics.accuracy >= 0.99, || format!("{} accuracy {:.4}", r.probe, r.metrics.accuracy))?;
        accs.push(format!("{}={:.4}", r.probe, r.metrics.accuracy));
    }

    let split = split_for(&plan, &data, 3, 0).map_err(|e| e.to_string())?;
    let ranking = rank_heads_on(&plan, &data, &split, 3, 0, exec()).map_err(|e| e.to_string())?;
    ensure(ranking[0] == cfg.planted, || format!("top head {:?}, planted {:?}", ranking[0], cfg.planted))?;

    let ablation_plan = ExperimentPlan {
        ablation_range: Some((1, 1)),
        ..plan
    };
    let rows = run_head_ablation(&ablation_plan, std::slice::from_ref(&data), exec()).map_err(|e| e.to_string())?;
    for r in &rows {
        match r.condition.as_str() {
            "top_n_included=1" => ensure(r.metrics.f1 >= 0.99, || format!("{} TOP_1_ONLY F1 {:.4}", r.probe, r.metrics.f1))?,
            "top_n_excluded=1" => ensure(r.metrics.accuracy <= 0.55, || {
                format!("{} ALL_BUT_TOP_1 accuracy {:.4}", r.probe, r.metrics.accuracy)
            })?,
            _ => {}
        }
    }
    Ok(format!("accuracy {}; planted head ranked first", accs.join(" ")))
}

fn layer_sweep_shape() -> Outcome {
    let cfg = PlantedConfig {
        instances: 4000,
        planted: (7, 2),
        seed: 3,
        ..PlantedConfig::default()
    };
    let data = planted_data(&cfg)?;
    let plan = ExperimentPlan {
        layer_range: Some((7, 8)),
        ..single_run_plan(ProbeKind::ALL.to_vec())
    };
    let rows = run_layer_sweep(&plan, &[data], exec()).map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for r in &rows {
        match r.condition.as_str() {
            "first_n=7" => ensure(r.metrics.f1 <= 0.60, || format!("{} F1 at N=7 is {:.4}", r.probe, r.metrics.f1))?,
            "first_n=8" => ensure(r.metrics.f1 >= 0.95, || format!("{} F1 at N=8 is {:.4}", r.probe, r.metrics.f1))?,
            other => return Err(format!("unexpected condition {other}")),
        }
        seen.push(format!("{}@{}={:.3}", r.probe, &r.condition[8..], r.metrics.f1));
    }
    ensure(rows.len() == 8, || format!("{} rows", rows.len()))?;
    Ok(seen.join(" "))
}

fn balancing_invariants() -> Outcome {
    let mut rng = SeededRng::new(4);
    let mut emitted = 0;
    for k in 0..200 {
        let threshold = 2 + k % 2;
        let pool = fuzz_pool(&mut rng, threshold, k);
        let mut cfg = SplitConfig::new(threshold, k as u64);
        if k % 3 == 0 {
            let lemmas: BTreeSet<&str> = pool.iter().map(|i| i.governor_lemma.as_str()).collect();
            cfg.holdout_lemmas = lemmas.iter().take(1).map(|s| s.to_string()).collect();
        }
        if k % 5 == 0 {
            cfg.holdout_patterns = vec!["case=adessive".parse().unwrap()];
        }
        let ds = match split_with_holdout(&pool, &cfg) {
            Ok(ds) => ds,
            // a holdout may consume a whole stratum; that is reported, not emitted
            Err(govprobe::Error::EmptyStratum(_)) | Err(govprobe::Error::InvalidArgument(_)) => continue,
            Err(e) => return Err(format!("pool {k}: {e}")),
        };
        emitted += 1;
        let test_seen: Vec<_> = ds.test.iter().filter(|i| !ds.is_heldout(i)).cloned().collect();
        for (name, part) in [("train", &ds.train), ("test", &test_seen)] {
            check_balance(part, threshold, 0.1).map_err(|e| format!("pool {k} {name}: {e}"))?;
        }
        let train_ids: BTreeSet<&str> = ds.train.iter().map(|i| i.instance_id.as_str()).collect();
        ensure(ds.test.iter().all(|i| !train_ids.contains(i.instance_id.as_str())), || {
            format!("pool {k}: train and test overlap")
        })?;
        for inst in &ds.train {
            let leaked = cfg.holdout_lemmas.contains(&inst.governor_lemma)
                || cfg.holdout_patterns.iter().any(|s| s.matches(inst));
            ensure(!leaked, || format!("pool {k}: held-out {} in train", inst.instance_id))?;
        }
        for inst in &pool {
            let held = cfg.holdout_lemmas.contains(&inst.governor_lemma) || cfg.holdout_patterns.iter().any(|s| s.matches(inst));
            ensure(!held || ds.is_heldout(inst), || format!("pool {k}: {} not withheld", inst.instance_id))?;
        }
    }
    ensure(emitted >= 150, || format!("only {emitted} of 200 pools produced a dataset"))?;
    Ok(format!("{emitted} of 200 pools emitted, all within tolerance, no leakage"))
}

fn classifier_oracles() -> Outcome {
    let mut rng = SeededRng::new(6);
    // separable blobs
    let n = 300;
    let x = Array2::from_shape_fn((n, 4), |(i, _)| {
        let center = if i % 2 == 0 { 3.0 } else { -3.0 };
        center + rng.uniform(-1.0, 1.0)
    });
    let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let model = logreg::fit(x.view(), &y, &LogRegParams::default());
    let predicted: Vec<bool> = model.predict_proba(x.view()).iter().map(|&p| p >= 0.5).collect();
    let acc = Metrics::from_predictions(&y, &predicted).map_err(|e| e.to_string())?.accuracy;
    ensure(acc == 1.0, || format!("LOGREG training accuracy {acc}"))?;

    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let err = mlp_gradient_error(&mut rng);
        ensure(err <= 1e-4, || format!("network {k}: relative gradient error {err:e}"))?;
        worst = worst.max(err);
    }

    for k in 0..40 {
        let m = 6 + rng.index(20);
        let x = Array2::from_shape_fn((m, 2), |_| (rng.index(8) as f64) * 0.5);
        let mut y: Vec<bool> = (0..m).map(|_| rng.index(2) == 1).collect();
        y[0] = true;
        y[1] = false;
        let candidates = brute_force_splits(&x, &y);
        if candidates.is_empty() {
            continue;
        }
        let best = candidates.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        let params = ForestParams {
            n_trees: 1,
            max_features: Some(2),
            bootstrap: false,
            seed: k,
        };
        let forest = RandomForest::fit(Execution::Sequential, x.view(), &y, &params);
        let Node::Split { feature, threshold, .. } = forest.trees[0].nodes[0] else {
            return Err(format!("fixture {k}: root is a leaf"));
        };
        let hit = candidates
            .iter()
            .any(|&(f, t, g)| f == feature && t == threshold && (g - best).abs() < 1e-12);
        ensure(hit, || format!("fixture {k}: root split ({feature}, {threshold}) not a Gini minimizer ({best})"))?;
    }
    Ok(format!("blobs separated; worst MLP gradient error {worst:.2e}; 40 root splits optimal"))
}

fn matcher_fixtures() -> Outcome {
    let fx = matcher_fixture();
    let cfg = MatchConfig::new("fix", fx.profile.clone());
    let got: Vec<Expected> = match_corpus(&fx.sentences, &fx.bank, &cfg, exec()).iter().map(Expected::of).collect();
    if got != fx.expected {
        let missing: Vec<_> = fx.expected.iter().filter(|e| !got.contains(e)).collect();
        let extra: Vec<_> = got.iter().filter(|g| !fx.expected.contains(g)).collect();
        return Err(format!("missing {missing:?}; unexpected {extra:?}"));
    }
    Ok(format!("{} sentences, {} rules, {} instances reproduced", fx.sentences.len(), fx.bank.len(), got.len()))
}

fn metric_identities() -> Outcome {
    let mut rng = SeededRng::new(8);
    for trial in 0..500 {
        let k = 1 + rng.index(10);
        let mut runs = Vec::new();
        let mut all_truth = Vec::new();
        let mut all_pred = Vec::new();
        for _ in 0..k {
            let n = rng.index(40);
            let truth: Vec<bool> = (0..n).map(|_| rng.index(2) == 1).collect();
            let pred: Vec<bool> = (0..n).map(|_| rng.index(3) != 0).collect();
            runs.push(Metrics::from_predictions(&truth, &pred).unwrap());
            all_truth.extend(truth);
            all_pred.extend(pred);
        }
        let micro = micro_average(&runs);
        let pooled = Metrics::from_predictions(&all_truth, &all_pred).unwrap();
        ensure(micro == pooled, || format!("trial {trial}: {micro:?} != {pooled:?}"))?;
    }
    Ok("500 fuzzed run sets".into())
}

/// Compares a summary JSON from a real-data run against published values.
fn external_benchmark() -> Option<Outcome> {
    let path = std::env::var_os("GOVPROBE_REFERENCE_SUMMARY")?;
    let run = || -> Outcome {
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let rows: Vec<SummaryRow> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let mut notes = Vec::new();
        for (lang, probe, target) in [("fi", ProbeKind::Rf, 82.19), ("ru", ProbeKind::Mlp1, 85.18)] {
            let row = rows
                .iter()
                .find(|r| r.language == lang && r.probe == probe && r.dist_threshold == 3 && r.condition == "overall")
                .ok_or_else(|| format!("no overall {lang} {probe} threshold-3 row"))?;
            let f1 = 100.0 * row.mean_f1;
            ensure((f1 - target).abs() <= 3.0, || format!("{lang} {probe} F1 {f1:.2}, reference {target}"))?;
            notes.push(format!("{lang} {probe} F1 {f1:.2}"));
        }
        Ok(notes.join(", "))
    };
    Some(run())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("feature-vector shape", Duration::from_secs(1), feature_shape),
        ("pooling oracle", Duration::from_secs(5), pooling_oracle),
        ("planted-head synthesis", Duration::from_secs(120), planted_head_synthesis),
        ("layer-sweep shape", Duration::from_secs(180), layer_sweep_shape),
        ("balancing invariants", Duration::from_secs(60), balancing_invariants),
        ("classifier oracles", Duration::from_secs(60), classifier_oracles),
        ("matcher fixtures", Duration::from_secs(5), matcher_fixtures),
        ("metric identities", Duration::from_secs(5), metric_identities),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    match external_benchmark() {
        None => println!("SKIP  external benchmark: set GOVPROBE_REFERENCE_SUMMARY to a summary JSON from a real-data run"),
        Some(Ok(detail)) => println!("PASS  external benchmark: {detail}"),
        Some(Err(why)) => {
            failed += 1;
            println!("FAIL  external benchmark: {why}");
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
