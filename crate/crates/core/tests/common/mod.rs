//! Fixtures, fuzzers and brute-force oracles shared by the test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use govprobe::attnio::{AttentionRecord, PoolMode};
use govprobe::conllu::{parse_str, Sentence};
use govprobe::govbank::GovernmentBank;
use govprobe::matcher::{Instance, Label};
use govprobe::probes::mlp::Mlp;
use govprobe::profile::LanguageProfile;
use govprobe::rng::SeededRng;
use ndarray::Array2;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// One hand-verified instance: (sent_id, governor, governee, label,
/// pattern_id, distance, summary).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub sent_id: String,
    pub governor: usize,
    pub governee: usize,
    pub label: String,
    pub pattern_id: Option<String>,
    pub distance: usize,
    pub summary: String,
}

impl Expected {
    pub fn of(inst: &Instance) -> Self {
        Self {
            sent_id: inst.sent_id.clone(),
            governor: inst.governor_index,
            governee: inst.governee_index,
            label: inst.label.as_str().to_string(),
            pattern_id: inst.pattern_id.clone(),
            distance: inst.distance,
            summary: inst.matched_spec_summary.clone().unwrap_or_default(),
        }
    }
}

pub struct MatcherFixture {
    pub sentences: Vec<Sentence>,
    pub bank: GovernmentBank,
    pub profile: LanguageProfile,
    pub expected: Vec<Expected>,
}

pub fn matcher_fixture() -> MatcherFixture {
    let dir = fixture("matcher");
    let profile = LanguageProfile::builtin("fi").unwrap();
    let text = std::fs::read_to_string(dir.join("corpus.conllu")).unwrap();
    let (sentences, rejected) = parse_str(&text);
    assert!(rejected.is_empty(), "{rejected:?}");
    let bank_text = std::fs::read_to_string(dir.join("bank.tsv")).unwrap();
    let bank = GovernmentBank::parse_tsv(&bank_text, &profile).unwrap();
    let expected = std::fs::read_to_string(dir.join("expected.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            Expected {
                sent_id: c[0].into(),
                governor: c[1].parse().unwrap(),
                governee: c[2].parse().unwrap(),
                label: c[3].into(),
                pattern_id: (c[4] != "-").then(|| c[4].to_string()),
                distance: c[5].parse().unwrap(),
                summary: c[6].into(),
            }
        })
        .collect();
    MatcherFixture {
        sentences,
        bank,
        profile,
        expected,
    }
}

/// Max over every enumerated (g, d) pair of the requested direction(s).
pub fn brute_force_pool(rec: &AttentionRecord, layer: usize, head: usize, mode: PoolMode) -> f64 {
    let (a, tg, td) = (rec.heads as usize, rec.gov_len as usize, rec.dep_len as usize);
    let mut best = f64::NEG_INFINITY;
    for g in 0..tg {
        for d in 0..td {
            let fwd = rec.gov_to_dep[((layer * a + head) * tg + g) * td + d] as f64;
            let bwd = rec.dep_to_gov[((layer * a + head) * td + d) * tg + g] as f64;
            let v = match mode {
                PoolMode::GovToDep => fwd,
                PoolMode::DepToGov => bwd,
                PoolMode::MaxBoth => {
                    if fwd > bwd {
                        fwd
                    } else {
                        bwd
                    }
                }
            };
            if v > best {
                best = v;
            }
        }
    }
    best
}

pub fn fuzz_record(rng: &mut SeededRng, id: &str) -> AttentionRecord {
    let layers = 1 + rng.index(12) as u16;
    let heads = 1 + rng.index(12) as u16;
    let tg = 1 + rng.index(4) as u16;
    let td = 1 + rng.index(4) as u16;
    let n = layers as usize * heads as usize * tg as usize * td as usize;
    let draw = |rng: &mut SeededRng| -> Vec<f32> {
        (0..n)
            .map(|_| match rng.index(10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.unit() as f32,
            })
            .collect()
    };
    let gov_to_dep = draw(rng);
    let dep_to_gov = draw(rng);
    AttentionRecord {
        instance_id: id.to_string(),
        layers,
        heads,
        gov_len: tg,
        dep_len: td,
        gov_to_dep,
        dep_to_gov,
    }
}

/// Gini impurity computed from explicit partition counts.
fn weighted_gini(left: &[bool], right: &[bool]) -> f64 {
    let g = |s: &[bool]| {
        if s.is_empty() {
            return 0.0;
        }
        let p = s.iter().filter(|&&b| b).count() as f64 / s.len() as f64;
        1.0 - p * p - (1.0 - p) * (1.0 - p)
    };
    let n = (left.len() + right.len()) as f64;
    (left.len() as f64 * g(left) + right.len() as f64 * g(right)) / n
}

/// Every candidate (feature, midpoint threshold) with its impurity.
pub fn brute_force_splits(x: &Array2<f64>, y: &[bool]) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for f in 0..x.ncols() {
        let mut values: Vec<f64> = x.column(f).to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let mut left = Vec::new();
            let mut right = Vec::new();
            for (i, row) in x.rows().into_iter().enumerate() {
                if row[f] <= t {
                    left.push(y[i]);
                } else {
                    right.push(y[i]);
                }
            }
            out.push((f, t, weighted_gini(&left, &right)));
        }
    }
    out
}

/// A pool where every (label, NEAR/FAR) stratum for `threshold` is
/// non-empty, with uneven stratum sizes and several feature classes.
pub fn fuzz_pool(rng: &mut SeededRng, threshold: usize, tag: usize) -> Vec<Instance> {
    let cases = ["elative", "illative", "allative", "partitive", "inessive", "adessive"];
    let lemmas = 3 + rng.index(12);
    let mut out = Vec::new();
    for label in [Label::Positive, Label::Negative] {
        for far in [false, true] {
            let count = 1 + rng.index(60);
            for _ in 0..count {
                let distance = if far {
                    threshold + 1 + rng.index(8)
                } else {
                    1 + rng.index(threshold)
                };
                let id = out.len();
                let lemma = format!("verb{}", rng.index(lemmas));
                let case = cases[rng.index(cases.len())];
                let dobj = label.is_positive() && rng.index(4) == 0;
                out.push(Instance {
                    instance_id: format!("p{tag}:s{id}:1:{}", 1 + distance),
                    sent_id: format!("s{id}"),
                    language: "fi".into(),
                    governor_index: 1,
                    governee_index: 1 + distance,
                    governor_lemma: lemma.clone(),
                    pattern_id: label.is_positive().then(|| format!("fi:{lemma}:T#0")),
                    label,
                    distance,
                    matched_spec_summary: Some(format!("{}NOUN+Case:{case}", if dobj { "dobj:" } else { "" })),
                });
            }
        }
    }
    rng.shuffle(&mut out);
    out
}

/// Largest norm-wise relative error between the analytic gradient and
/// central finite differences on a random small network.
pub fn mlp_gradient_error(rng: &mut SeededRng) -> f64 {
    let inputs = 1 + rng.index(5);
    let depth = 1 + rng.index(2);
    let hidden: Vec<usize> = (0..depth).map(|_| 1 + rng.index(5)).collect();
    let n = 2 + rng.index(8);
    let mut net = Mlp::init(inputs, &hidden, rng);
    for b in net.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
        *b = rng.uniform(-0.5, 0.5);
    }
    let x = Array2::from_shape_fn((n, inputs), |_| rng.uniform(-2.0, 2.0));
    let y: Vec<bool> = (0..n).map(|_| rng.index(2) == 1).collect();
    let alpha = rng.uniform(0.0, 0.1);
    let (_, grad) = net.loss_and_gradient(x.view(), &y, alpha);
    let analytic = Mlp::flat_gradient(&grad);
    let theta = net.flat_params();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let mut plus = theta.clone();
        plus[k] += h;
        let mut minus = theta.clone();
        minus[k] -= h;
        net.set_flat_params(&plus);
        let fp = net.loss_and_gradient(x.view(), &y, alpha).0;
        net.set_flat_params(&minus);
        let fm = net.loss_and_gradient(x.view(), &y, alpha).0;
        numeric.push((fp - fm) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
