//! Experiment families over balanced splits and pooled attention features.
//!
//! Every family is a grid of independent cells (threshold, repetition,
//! probe, condition). A split depends only on (threshold, repetition) and a
//! probe's seed only on (threshold, repetition, probe), so the same cell
//! yields the same model whichever family runs it.

mod projection;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attnio::{FeatureTable, HeadMask, PoolMode};
use crate::dataset::{near_far, split_with_holdout, LabeledDataset, NearFar, PatternSelector, SplitConfig};
use crate::error::{Error, Result};
use crate::matcher::Instance;
use crate::par::Execution;
use crate::probes::metrics::{mean_std, micro_average};
use crate::probes::{Metrics, ProbeConfig, ProbeKind, TrainedProbe};
use crate::profile::LanguageProfile;
use crate::rng::{derive_seed, SeededRng};

pub use projection::{export_projection, pca_2d, Projection};
pub use report::{curve_csv, rows_csv, summary_json, write_reports, ROWS_HEADER};

/// Which instances to withhold from training in one holdout run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoldoutSpec {
    Patterns { patterns: Vec<PatternSelector> },
    Lemmas { lemmas: Vec<String> },
    /// A fresh random draw of governor lemmas for every repetition.
    RandomLemmas { count: usize },
}

impl HoldoutSpec {
    pub fn condition(&self) -> &'static str {
        match self {
            HoldoutSpec::Patterns { .. } => "unseen_patterns",
            HoldoutSpec::Lemmas { .. } | HoldoutSpec::RandomLemmas { .. } => "unseen_governors",
        }
    }
}

/// Optional overrides applied to every probe configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeOverrides {
    pub trees: Option<usize>,
    pub max_iter: Option<usize>,
    pub max_features: Option<usize>,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    /// Languages to run; empty means every dataset supplied.
    pub languages: Vec<String>,
    pub dist_thresholds: Vec<usize>,
    pub probes: Vec<ProbeKind>,
    pub repetitions: usize,
    /// Inclusive 1-based range of first-N layer counts.
    pub layer_range: Option<(u16, u16)>,
    /// Inclusive range of top-N head counts.
    pub ablation_range: Option<(usize, usize)>,
    pub seed: u64,
    pub test_fraction: f64,
    pub feature_cap: Option<f64>,
    pub pool_mode: PoolMode,
    pub holdouts: Vec<HoldoutSpec>,
    pub probe_overrides: ProbeOverrides,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            languages: Vec::new(),
            dist_thresholds: vec![2, 3],
            probes: ProbeKind::ALL.to_vec(),
            repetitions: 5,
            layer_range: None,
            ablation_range: None,
            seed: 0,
            test_fraction: SplitConfig::DEFAULT_TEST_FRACTION,
            feature_cap: Some(SplitConfig::DEFAULT_FEATURE_CAP),
            pool_mode: PoolMode::default(),
            holdouts: Vec::new(),
            probe_overrides: ProbeOverrides::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.dist_thresholds.is_empty() || self.dist_thresholds.iter().any(|t| !matches!(t, 2 | 3)) {
            return Err(Error::invalid(format!(
                "distance thresholds must be a non-empty subset of {{2, 3}}, got {:?}",
                self.dist_thresholds
            )));
        }
        if self.probes.is_empty() {
            return Err(Error::invalid("no probe kinds in plan"));
        }
        if let Some((lo, hi)) = self.layer_range {
            if lo == 0 || lo > hi {
                return Err(Error::invalid(format!("bad layer range {lo}..{hi}")));
            }
        }
        if let Some((lo, hi)) = self.ablation_range {
            if lo == 0 || lo > hi {
                return Err(Error::invalid(format!("bad ablation range {lo}..{hi}")));
            }
        }
        Ok(())
    }

    pub fn probe_config(&self, kind: ProbeKind, seed: u64) -> ProbeConfig {
        let mut cfg = ProbeConfig::new(kind, seed);
        let o = &self.probe_overrides;
        if let Some(t) = o.trees {
            cfg.trees = t;
        }
        if let Some(m) = o.max_iter {
            if kind != ProbeKind::Rf {
                cfg.max_iter = m;
            }
        }
        cfg.max_features = o.max_features;
        cfg.standardize = o.standardize;
        cfg
    }

    fn split_config(&self, threshold: usize, repetition: usize, profile: Option<&LanguageProfile>) -> Result<SplitConfig> {
        let mut cfg = SplitConfig::new(threshold, derive_seed(self.seed, &[threshold as u64, repetition as u64]));
        cfg.test_fraction = self.test_fraction;
        cfg.feature_cap = self.feature_cap;
        if let Some(p) = profile {
            cfg = cfg.with_language_defaults(p)?;
        }
        Ok(cfg)
    }

    fn probe_seed(&self, threshold: usize, repetition: usize, kind: ProbeKind) -> u64 {
        derive_seed(self.seed, &[threshold as u64, repetition as u64, 100 + kind as u64])
    }
}

/// One language's instances joined to their pooled features.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub language: String,
    pub instances: Vec<Instance>,
    pub features: FeatureTable,
    /// Supplies default governee exclusions when present.
    pub profile: Option<LanguageProfile>,
}

impl ExperimentData {
    /// Fails listing the instances that have no feature row.
    pub fn new(language: impl Into<String>, instances: Vec<Instance>, features: FeatureTable) -> Result<Self> {
        let missing: Vec<&str> = instances
            .iter()
            .filter(|i| !features.contains(&i.instance_id))
            .map(|i| i.instance_id.as_str())
            .collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(10).copied().collect();
            return Err(Error::validation(format!(
                "{} instances have no attention record: {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > shown.len() { ", ..." } else { "" }
            )));
        }
        Ok(Self {
            language: language.into(),
            instances,
            features,
            profile: None,
        })
    }

    pub fn with_profile(mut self, profile: LanguageProfile) -> Self {
        self.profile = Some(profile);
        self
    }

    pub fn model_shape(&self) -> (u16, u16) {
        self.features.shape()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub language: String,
    pub dist_threshold: usize,
    pub probe: ProbeKind,
    pub condition: String,
    pub repetition: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub language: String,
    pub dist_threshold: usize,
    pub probe: ProbeKind,
    pub condition: String,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    /// Metrics of the confusion counts pooled over runs.
    pub micro: Metrics,
}

/// Groups rows by (experiment, language, threshold, probe, condition) in
/// order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, usize, ProbeKind, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, usize, ProbeKind, String), Vec<Metrics>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.experiment.clone(),
            r.language.clone(),
            r.dist_threshold,
            r.probe,
            r.condition.clone(),
        );
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(r.metrics);
    }
    order
        .into_iter()
        .map(|key| {
            let ms = &groups[&key];
            let col = |f: fn(&Metrics) -> f64| ms.iter().map(f).collect::<Vec<f64>>();
            let (mean_accuracy, std_accuracy) = mean_std(&col(|m| m.accuracy));
            let (mean_f1, std_f1) = mean_std(&col(|m| m.f1));
            let (experiment, language, dist_threshold, probe, condition) = key;
            SummaryRow {
                experiment,
                language,
                dist_threshold,
                probe,
                condition,
                runs: ms.len(),
                mean_accuracy,
                std_accuracy,
                mean_precision: mean_std(&col(|m| m.precision)).0,
                mean_recall: mean_std(&col(|m| m.recall)).0,
                mean_f1,
                std_f1,
                micro: micro_average(ms),
            }
        })
        .collect()
}

struct Cell<'a> {
    dataset: &'a ExperimentData,
    split: &'a LabeledDataset,
    threshold: usize,
    repetition: usize,
    probe: ProbeKind,
    mask: HeadMask,
    condition: String,
}

/// Names the test subset an instance belongs to, given the cell condition.
type Subset = fn(&str, &LabeledDataset, &Instance) -> Option<String>;

fn labels(items: &[&Instance]) -> Vec<bool> {
    items.iter().map(|i| i.label.is_positive()).collect()
}

/// Fits one probe on the cell's train split and evaluates it on every
/// named test subset.
fn run_cell(
    plan: &ExperimentPlan,
    experiment: &str,
    cell: &Cell<'_>,
    subsets: &[Subset],
    exec: Execution,
) -> Result<Vec<ResultRow>> {
    let features = &cell.dataset.features;
    let train: Vec<&Instance> = cell.split.train.iter().collect();
    let ids: Vec<&str> = train.iter().map(|i| i.instance_id.as_str()).collect();
    let x = features.select(&ids, &cell.mask)?;
    let cfg = plan.probe_config(cell.probe, plan.probe_seed(cell.threshold, cell.repetition, cell.probe));
    let head_map: Vec<(u16, u16)> = cell.mask.iter().collect();
    let probe = TrainedProbe::fit(&cfg, x.view(), &labels(&train), head_map, exec)?;

    let mut rows = Vec::new();
    for subset in subsets {
        let mut groups: BTreeMap<String, Vec<&Instance>> = BTreeMap::new();
        for inst in &cell.split.test {
            if let Some(name) = subset(&cell.condition, cell.split, inst) {
                groups.entry(name).or_default().push(inst);
            }
        }
        for (condition, items) in groups {
            let ids: Vec<&str> = items.iter().map(|i| i.instance_id.as_str()).collect();
            let xt = features.select(&ids, &cell.mask)?;
            let metrics = probe.evaluate(xt.view(), &labels(&items))?;
            rows.push(ResultRow {
                experiment: experiment.to_string(),
                language: cell.dataset.language.clone(),
                dist_threshold: cell.threshold,
                probe: cell.probe,
                condition,
                repetition: cell.repetition,
                metrics,
            });
        }
    }
    Ok(rows)
}

fn whole_test(condition: &str, _: &LabeledDataset, _: &Instance) -> Option<String> {
    Some(if condition.is_empty() { "overall" } else { condition }.to_string())
}

fn overall(_: &str, _: &LabeledDataset, _: &Instance) -> Option<String> {
    Some("overall".into())
}

fn selected<'a>(plan: &ExperimentPlan, data: &'a [ExperimentData]) -> Result<Vec<&'a ExperimentData>> {
    plan.validate()?;
    let chosen: Vec<&ExperimentData> = data
        .iter()
        .filter(|d| plan.languages.is_empty() || plan.languages.contains(&d.language))
        .collect();
    if chosen.is_empty() {
        return Err(Error::invalid("no dataset matches the plan's languages"));
    }
    Ok(chosen)
}

/// The balanced split an experiment uses for one (threshold, repetition).
pub fn split_for(plan: &ExperimentPlan, d: &ExperimentData, threshold: usize, repetition: usize) -> Result<LabeledDataset> {
    let cfg = plan.split_config(threshold, repetition, d.profile.as_ref())?;
    split_with_holdout(&d.instances, &cfg)
}

/// Balanced splits for every (dataset, threshold, repetition).
fn build_splits<'a>(
    plan: &ExperimentPlan,
    data: &[&'a ExperimentData],
) -> Result<Vec<(&'a ExperimentData, usize, usize, LabeledDataset)>> {
    let mut out = Vec::new();
    for &d in data {
        for &t in &plan.dist_thresholds {
            for rep in 0..plan.repetitions {
                out.push((d, t, rep, split_for(plan, d, t, rep)?));
            }
        }
    }
    Ok(out)
}

fn collect(results: Vec<Vec<ResultRow>>) -> Vec<ResultRow> {
    results.into_iter().flatten().collect()
}

fn full_mask(d: &ExperimentData) -> HeadMask {
    let (l, a) = d.model_shape();
    HeadMask::full(l, a)
}

/// Every probe on the full head mask; conditions `overall`.
pub fn run_overall(plan: &ExperimentPlan, data: &[ExperimentData], exec: Execution) -> Result<Vec<ResultRow>> {
    let data = selected(plan, data)?;
    let splits = build_splits(plan, &data)?;
    let mut cells = Vec::new();
    for (d, t, rep, split) in &splits {
        for &probe in &plan.probes {
            cells.push(Cell {
                dataset: d,
                split,
                threshold: *t,
                repetition: *rep,
                probe,
                mask: full_mask(d),
                condition: String::new(),
            });
        }
    }
    let rows = exec.try_map(&cells, |c| run_cell(plan, "overall", c, &[whole_test], exec))?;
    Ok(collect(rows))
}

fn near_far_subset(_: &str, split: &LabeledDataset, inst: &Instance) -> Option<String> {
    Some(near_far(inst, split.dist_threshold).as_str().to_ascii_lowercase())
}

/// The best probe per (language, threshold), by mean overall F1, evaluated
/// separately on NEAR and FAR test instances.
pub fn run_near_far(plan: &ExperimentPlan, data: &[ExperimentData], exec: Execution) -> Result<Vec<ResultRow>> {
    let data = selected(plan, data)?;
    let splits = build_splits(plan, &data)?;
    for (d, t, _, split) in &splits {
        for nf in [NearFar::Near, NearFar::Far] {
            if !split.test.iter().any(|i| near_far(i, *t) == nf) {
                return Err(Error::EmptyStratum(format!(
                    "{} test set at threshold {t} has no {} instances",
                    d.language,
                    nf.as_str()
                )));
            }
        }
    }
    let mut cells = Vec::new();
    for (d, t, rep, split) in &splits {
        for &probe in &plan.probes {
            cells.push(Cell {
                dataset: d,
                split,
                threshold: *t,
                repetition: *rep,
                probe,
                mask: full_mask(d),
                condition: String::new(),
            });
        }
    }
    let subsets: [Subset; 2] = [overall, near_far_subset];
    let rows = collect(exec.try_map(&cells, |c| run_cell(plan, "near_far", c, &subsets, exec))?);

    let overall: Vec<ResultRow> = rows.iter().filter(|r| r.condition == "overall").cloned().collect();
    let mut best: BTreeMap<(String, usize), (ProbeKind, f64)> = BTreeMap::new();
    for s in summarize(&overall) {
        let key = (s.language.clone(), s.dist_threshold);
        match best.get(&key) {
            Some(&(_, f1)) if f1 >= s.mean_f1 => {}
            _ => {
                best.insert(key, (s.probe, s.mean_f1));
            }
        }
    }
    Ok(rows
        .into_iter()
        .filter(|r| {
            r.condition != "overall" && best.get(&(r.language.clone(), r.dist_threshold)).map(|b| b.0) == Some(r.probe)
        })
        .collect())
}

/// Probes on the first N layers for every N in range; conditions
/// `first_n=N`.
pub fn run_layer_sweep(plan: &ExperimentPlan, data: &[ExperimentData], exec: Execution) -> Result<Vec<ResultRow>> {
    let data = selected(plan, data)?;
    let splits = build_splits(plan, &data)?;
    let mut cells = Vec::new();
    for (d, t, rep, split) in &splits {
        let (layers, heads) = d.model_shape();
        let (lo, hi) = plan.layer_range.unwrap_or((1, layers));
        if hi > layers {
            return Err(Error::invalid(format!("layer range ends at {hi} but the model has {layers} layers")));
        }
        for n in lo..=hi {
            for &probe in &plan.probes {
                cells.push(Cell {
                    dataset: d,
                    split,
                    threshold: *t,
                    repetition: *rep,
                    probe,
                    mask: HeadMask::first_n_layers(layers, heads, n)?,
                    condition: format!("first_n={n}"),
                });
            }
        }
    }
    let rows = exec.try_map(&cells, |c| run_cell(plan, "layer_sweep", c, &[whole_test], exec))?;
    Ok(collect(rows))
}

/// Head order from a full-mask LOGREG fit on one split.
pub fn rank_heads_on(
    plan: &ExperimentPlan,
    d: &ExperimentData,
    split: &LabeledDataset,
    threshold: usize,
    repetition: usize,
    exec: Execution,
) -> Result<Vec<(u16, u16)>> {
    let mask = full_mask(d);
    let ids: Vec<&str> = split.train.iter().map(|i| i.instance_id.as_str()).collect();
    let x = d.features.select(&ids, &mask)?;
    let y: Vec<bool> = split.train.iter().map(|i| i.label.is_positive()).collect();
    let cfg = plan.probe_config(ProbeKind::LogReg, plan.probe_seed(threshold, repetition, ProbeKind::LogReg));
    let probe = TrainedProbe::fit(&cfg, x.view(), &y, mask.iter().collect(), exec)?;
    Ok(probe.head_ranking()?.into_iter().map(|(h, _)| h).collect())
}

/// Top-N head inclusion, exclusion and random baselines; conditions
/// `top_n_included=N`, `top_n_excluded=N`, `random_n=N`.
pub fn run_head_ablation(plan: &ExperimentPlan, data: &[ExperimentData], exec: Execution) -> Result<Vec<ResultRow>> {
    let data = selected(plan, data)?;
    let splits = build_splits(plan, &data)?;
    let mut cells = Vec::new();
    for (d, t, rep, split) in &splits {
        let (layers, heads) = d.model_shape();
        let total = layers as usize * heads as usize;
        let (lo, hi) = plan.ablation_range.unwrap_or((1, total));
        if hi > total {
            return Err(Error::invalid(format!("ablation range ends at {hi} but the model has {total} heads")));
        }
        let ranking = rank_heads_on(plan, d, split, *t, *rep, exec)?;
        let all: Vec<(u16, u16)> = full_mask(d).iter().collect();
        for n in lo..=hi {
            let top = HeadMask::from_heads(layers, heads, ranking[..n].iter().copied(), format!("top_n_included={n}"))?;
            let mut rng = SeededRng::new(derive_seed(plan.seed, &[*t as u64, *rep as u64, 7, n as u64]));
            let random = HeadMask::from_heads(
                layers,
                heads,
                rng.sample_indices(total, n).into_iter().map(|i| all[i]),
                format!("random_n={n}"),
            )?;
            let mut masks = vec![top.clone()];
            if n < total {
                masks.push(top.complement(format!("top_n_excluded={n}"))?);
            } else {
                log::warn!("skipping top_n_excluded={n}: no heads would remain");
            }
            masks.push(random);
            for mask in masks {
                for &probe in &plan.probes {
                    cells.push(Cell {
                        dataset: d,
                        split,
                        threshold: *t,
                        repetition: *rep,
                        probe,
                        condition: mask.description().to_string(),
                        mask: mask.clone(),
                    });
                }
            }
        }
    }
    let rows = exec.try_map(&cells, |c| run_cell(plan, "head_ablation", c, &[whole_test], exec))?;
    Ok(collect(rows))
}

fn heldout_subset(condition: &str, split: &LabeledDataset, inst: &Instance) -> Option<String> {
    split.is_heldout(inst).then(|| condition.to_string())
}

/// One run per (holdout spec, repetition); conditions `unseen_patterns` or
/// `unseen_governors` for the withheld test instances and `overall` for the
/// whole test set. Repetition numbers count runs across specs.
pub fn run_holdout(plan: &ExperimentPlan, data: &[ExperimentData], exec: Execution) -> Result<Vec<ResultRow>> {
    let data = selected(plan, data)?;
    if plan.holdouts.is_empty() {
        return Err(Error::invalid("plan has no holdout specs"));
    }
    let mut runs = Vec::new();
    for &d in &data {
        let lemmas: Vec<String> = d
            .instances
            .iter()
            .map(|i| i.governor_lemma.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for &t in &plan.dist_thresholds {
            let mut run = 0;
            for (s, spec) in plan.holdouts.iter().enumerate() {
                for rep in 0..plan.repetitions {
                    let mut cfg = plan.split_config(t, run, d.profile.as_ref())?;
                    match spec {
                        HoldoutSpec::Patterns { patterns } => cfg.holdout_patterns = patterns.clone(),
                        HoldoutSpec::Lemmas { lemmas } => cfg.holdout_lemmas = lemmas.clone(),
                        HoldoutSpec::RandomLemmas { count } => {
                            if *count == 0 || *count >= lemmas.len() {
                                return Err(Error::invalid(format!(
                                    "cannot withhold {count} of {} governor lemmas",
                                    lemmas.len()
                                )));
                            }
                            let mut rng =
                                SeededRng::new(derive_seed(plan.seed, &[t as u64, s as u64, rep as u64, 11]));
                            cfg.holdout_lemmas = rng
                                .sample_indices(lemmas.len(), *count)
                                .into_iter()
                                .map(|i| lemmas[i].clone())
                                .collect();
                        }
                    }
                    let split = split_with_holdout(&d.instances, &cfg)?;
                    debug_assert!(split.train.iter().all(|i| !split.is_heldout(i)));
                    runs.push((d, t, run, spec.condition(), split));
                    run += 1;
                }
            }
        }
    }
    let mut cells = Vec::new();
    for (d, t, run, condition, split) in &runs {
        for &probe in &plan.probes {
            cells.push(Cell {
                dataset: d,
                split,
                threshold: *t,
                repetition: *run,
                probe,
                mask: full_mask(d),
                condition: condition.to_string(),
            });
        }
    }
    let subsets: [Subset; 2] = [heldout_subset, overall];
    let rows = exec.try_map(&cells, |c| run_cell(plan, "holdout", c, &subsets, exec))?;
    Ok(collect(rows))
}
