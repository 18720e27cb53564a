//! Balancing, withholding and splitting instances into train/test sets.
//!
//! Balancing happens in three steps, each a uniform down-sampling without
//! replacement under the configured seed:
//!
//! 1. positives whose governee feature class exceeds `feature_cap` of all
//!    positives are trimmed (the cap is raised to `1/k` when only `k`
//!    classes exist, since no tighter cap is satisfiable);
//! 2. within each label, the larger of NEAR/FAR is reduced to the smaller;
//! 3. the larger label is reduced, stratum by stratum, to the smaller.
//!
//! The balanced pool is then split per (label, NEAR/FAR) stratum so that
//! train and test keep the balance.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::govbank::normalize_lemma;
use crate::jsonl;
use crate::matcher::{Instance, Label};
use crate::profile::LanguageProfile;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NearFar {
    Near,
    Far,
}

impl NearFar {
    pub fn as_str(self) -> &'static str {
        match self {
            NearFar::Near => "NEAR",
            NearFar::Far => "FAR",
        }
    }
}

/// FAR iff the distance is strictly greater than the threshold.
pub fn near_far(inst: &Instance, dist_threshold: usize) -> NearFar {
    if inst.distance > dist_threshold {
        NearFar::Far
    } else {
        NearFar::Near
    }
}

/// `|a - b| <= tolerance * max(a, b)`.
pub fn within_tolerance(a: usize, b: usize, tolerance: f64) -> bool {
    a.abs_diff(b) as f64 <= tolerance * a.max(b) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum SelectorKey {
    Slot,
    Pos,
    Case,
    Base,
    Side,
    InfForm,
}

impl SelectorKey {
    fn as_str(self) -> &'static str {
        match self {
            SelectorKey::Slot => "slot",
            SelectorKey::Pos => "pos",
            SelectorKey::Case => "case",
            SelectorKey::Base => "base",
            SelectorKey::Side => "side",
            SelectorKey::InfForm => "inf_form",
        }
    }
}

/// Comma-separated `key=value` conditions over an instance's governee
/// summary, all of which must hold: `case=ablative`,
/// `pos=VERB,inf_form=inf-3`, `slot=dobj,case=partitive`.
///
/// Keys: `slot` (`dobj`/`arg`), `pos`, `case`, `base`, `side`, `inf_form`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PatternSelector {
    conditions: Vec<(SelectorKey, String)>,
}

impl PatternSelector {
    pub fn matches(&self, inst: &Instance) -> bool {
        let Some(shape) = inst.shape() else {
            return false;
        };
        self.conditions.iter().all(|(key, value)| match key {
            SelectorKey::Slot => {
                let slot = if shape.direct_object { "dobj" } else { "arg" };
                slot == value
            }
            SelectorKey::Pos => &shape.pos == value,
            SelectorKey::Case => shape.case.as_deref() == Some(value.as_str()),
            SelectorKey::Base => shape.base.as_deref() == Some(value.as_str()),
            SelectorKey::Side => shape.side.map(|s| s.as_str()) == Some(value.as_str()),
            SelectorKey::InfForm => shape.inf_form.as_deref() == Some(value.as_str()),
        })
    }
}

impl FromStr for PatternSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut conditions = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("selector term {part:?} is not key=value")))?;
            let key = match key.trim() {
                "slot" => SelectorKey::Slot,
                "pos" => SelectorKey::Pos,
                "case" => SelectorKey::Case,
                "base" => SelectorKey::Base,
                "side" => SelectorKey::Side,
                "inf_form" => SelectorKey::InfForm,
                other => return Err(Error::invalid(format!("unknown selector key {other:?}"))),
            };
            let value = value.trim();
            let value = if key == SelectorKey::Base {
                normalize_lemma(value)
            } else {
                value.to_string()
            };
            conditions.push((key, value));
        }
        if conditions.is_empty() {
            return Err(Error::invalid(format!("empty pattern selector {s:?}")));
        }
        Ok(Self { conditions })
    }
}

impl TryFrom<String> for PatternSelector {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PatternSelector> for String {
    fn from(sel: PatternSelector) -> String {
        sel.to_string()
    }
}

impl fmt::Display for PatternSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .conditions
            .iter()
            .map(|(k, v)| format!("{}={v}", k.as_str()))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub dist_threshold: usize,
    pub seed: u64,
    pub test_fraction: f64,
    #[serde(default)]
    pub holdout_patterns: Vec<PatternSelector>,
    #[serde(default)]
    pub holdout_lemmas: Vec<String>,
    /// Governee types dropped before anything else.
    #[serde(default)]
    pub exclude_patterns: Vec<PatternSelector>,
    /// Largest share of positives a single governee feature class may hold.
    pub feature_cap: Option<f64>,
    /// Relative tolerance of the balance contract.
    pub tolerance: f64,
}

impl SplitConfig {
    pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
    pub const DEFAULT_FEATURE_CAP: f64 = 0.3;
    pub const DEFAULT_TOLERANCE: f64 = 0.1;

    pub fn new(dist_threshold: usize, seed: u64) -> Self {
        Self {
            dist_threshold,
            seed,
            test_fraction: Self::DEFAULT_TEST_FRACTION,
            holdout_patterns: Vec::new(),
            holdout_lemmas: Vec::new(),
            exclude_patterns: Vec::new(),
            feature_cap: Some(Self::DEFAULT_FEATURE_CAP),
            tolerance: Self::DEFAULT_TOLERANCE,
        }
    }

    /// Adds the profile's default governee exclusions.
    pub fn with_language_defaults(mut self, profile: &LanguageProfile) -> Result<Self> {
        for sel in &profile.excluded_governees {
            self.exclude_patterns.push(sel.parse()?);
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.dist_threshold, 2 | 3) {
            return Err(Error::invalid(format!(
                "distance threshold must be 2 or 3, got {}",
                self.dist_threshold
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if let Some(cap) = self.feature_cap {
            if !(cap > 0.0 && cap <= 1.0) {
                return Err(Error::invalid(format!("feature cap must lie in (0, 1], got {cap}")));
            }
        }
        if !(0.0..1.0).contains(&self.tolerance) {
            return Err(Error::invalid(format!("tolerance must lie in [0, 1), got {}", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One line of a split manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInstance {
    #[serde(flatten)]
    pub instance: Instance,
    pub split: Split,
    /// Withheld from training by a holdout selector or lemma.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub heldout: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    pub dist_threshold: usize,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    /// Ids of test instances that were withheld from training.
    pub heldout: BTreeSet<String>,
}

/// Key of a statistics cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StatsKey {
    pub split: Split,
    pub label: Label,
    pub near_far: NearFar,
    pub pos: String,
    pub feature: String,
}

impl LabeledDataset {
    pub fn is_heldout(&self, inst: &Instance) -> bool {
        self.heldout.contains(&inst.instance_id)
    }

    pub fn heldout_test(&self) -> Vec<&Instance> {
        self.test.iter().filter(|i| self.is_heldout(i)).collect()
    }

    /// Counts per (split, label, NEAR/FAR, PoS, feature).
    pub fn stats(&self) -> BTreeMap<StatsKey, usize> {
        let mut counts = BTreeMap::new();
        for (split, items) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            for inst in items {
                let (pos, feature) = match inst.shape() {
                    Some(shape) => (shape.pos.clone(), shape.feature()),
                    None => ("-".to_string(), "-".to_string()),
                };
                let key = StatsKey {
                    split,
                    label: inst.label,
                    near_far: near_far(inst, self.dist_threshold),
                    pos,
                    feature,
                };
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn to_manifest(&self) -> Vec<SplitInstance> {
        let tag = |split: Split| {
            move |inst: &Instance| SplitInstance {
                instance: inst.clone(),
                split,
                heldout: self.is_heldout(inst),
            }
        };
        self.train
            .iter()
            .map(tag(Split::Train))
            .chain(self.test.iter().map(tag(Split::Test)))
            .collect()
    }

    pub fn from_manifest(entries: Vec<SplitInstance>, dist_threshold: usize) -> Self {
        let mut ds = LabeledDataset {
            dist_threshold,
            train: Vec::new(),
            test: Vec::new(),
            heldout: BTreeSet::new(),
        };
        for entry in entries {
            if entry.heldout {
                ds.heldout.insert(entry.instance.instance_id.clone());
            }
            match entry.split {
                Split::Train => ds.train.push(entry.instance),
                Split::Test => ds.test.push(entry.instance),
            }
        }
        ds
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        jsonl::write_file(path, &self.to_manifest())
    }

    pub fn read_manifest(path: impl AsRef<Path>, dist_threshold: usize) -> Result<Self> {
        let entries: Vec<SplitInstance> = jsonl::read_file(path)?;
        for e in &entries {
            e.instance.validate()?;
        }
        Ok(Self::from_manifest(entries, dist_threshold))
    }
}

/// Class key used by the feature cap.
fn feature_class(inst: &Instance) -> String {
    match inst.shape() {
        Some(shape) => format!(
            "{}{} {}",
            if shape.direct_object { "dobj:" } else { "" },
            shape.pos,
            shape.feature()
        ),
        None => "-".into(),
    }
}

/// Largest per-class count `c` with `c <= cap * sum(min(n_i, c))`.
fn cap_level(sizes: &[usize], cap: f64) -> usize {
    let k = sizes.len();
    if k == 0 {
        return 0;
    }
    let cap = cap.max(1.0 / k as f64);
    let max = *sizes.iter().max().unwrap();
    let feasible = |c: usize| {
        let total: usize = sizes.iter().map(|&n| n.min(c)).sum();
        c as f64 <= cap * total as f64 + 1e-9
    };
    // feasible(c) is monotone: true up to some level, false beyond it
    let (mut lo, mut hi) = (0, max);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Keeps `k` items of `items` chosen uniformly, preserving their order.
fn downsample(items: Vec<usize>, k: usize, rng: &mut SeededRng) -> Vec<usize> {
    if k >= items.len() {
        return items;
    }
    rng.sample_indices(items.len(), k)
        .into_iter()
        .map(|i| items[i])
        .collect()
}

fn stratum_name(label: Label, nf: NearFar) -> String {
    format!("{}/{}", label.as_str(), nf.as_str())
}

/// Indices into `pool` of the balanced subset, in ascending order.
fn balanced_indices(pool: &[Instance], cfg: &SplitConfig, rng: &mut SeededRng) -> Result<Vec<usize>> {
    let mut positives: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    for (i, inst) in pool.iter().enumerate() {
        match inst.label {
            Label::Positive => positives.push(i),
            Label::Negative => negatives.push(i),
        }
    }

    if let Some(cap) = cfg.feature_cap {
        let mut classes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for &i in &positives {
            classes.entry(feature_class(&pool[i])).or_default().push(i);
        }
        let sizes: Vec<usize> = classes.values().map(Vec::len).collect();
        let level = cap_level(&sizes, cap);
        let mut kept = Vec::new();
        for (_, members) in classes {
            kept.extend(downsample(members, level, rng));
        }
        kept.sort_unstable();
        positives = kept;
    }

    let mut strata: BTreeMap<(Label, NearFar), Vec<usize>> = BTreeMap::new();
    for (label, members) in [(Label::Positive, positives), (Label::Negative, negatives)] {
        let (near, far): (Vec<usize>, Vec<usize>) = members
            .into_iter()
            .partition(|&i| near_far(&pool[i], cfg.dist_threshold) == NearFar::Near);
        for (nf, group) in [(NearFar::Near, &near), (NearFar::Far, &far)] {
            if group.is_empty() {
                return Err(Error::EmptyStratum(stratum_name(label, nf)));
            }
        }
        let m = near.len().min(far.len());
        strata.insert((label, NearFar::Near), downsample(near, m, rng));
        strata.insert((label, NearFar::Far), downsample(far, m, rng));
    }

    let per_stratum = strata.values().map(Vec::len).min().unwrap_or(0);
    let mut kept = Vec::new();
    for (_, members) in strata {
        kept.extend(downsample(members, per_stratum, rng));
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Stratified split of `indices` by (label, NEAR/FAR).
fn stratified_split(
    pool: &[Instance],
    indices: &[usize],
    cfg: &SplitConfig,
    rng: &mut SeededRng,
) -> (Vec<usize>, Vec<usize>) {
    let mut strata: BTreeMap<(Label, NearFar), Vec<usize>> = BTreeMap::new();
    for &i in indices {
        strata
            .entry((pool[i].label, near_far(&pool[i], cfg.dist_threshold)))
            .or_default()
            .push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut members) in strata {
        let n_test = (cfg.test_fraction * members.len() as f64).round() as usize;
        rng.shuffle(&mut members);
        let (t, tr) = members.split_at(n_test);
        test.extend_from_slice(t);
        train.extend_from_slice(tr);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn apply_exclusions(instances: &[Instance], cfg: &SplitConfig) -> Vec<Instance> {
    instances
        .iter()
        .filter(|inst| !cfg.exclude_patterns.iter().any(|sel| sel.matches(inst)))
        .cloned()
        .collect()
}

/// Balances the pool and splits it into train and test.
pub fn balance(instances: &[Instance], cfg: &SplitConfig) -> Result<LabeledDataset> {
    let no_holdout = SplitConfig {
        holdout_patterns: Vec::new(),
        holdout_lemmas: Vec::new(),
        ..cfg.clone()
    };
    split_with_holdout(instances, &no_holdout)
}

/// Moves every instance matching a holdout selector or lemma into test,
/// then balances and splits the rest.
pub fn split_with_holdout(instances: &[Instance], cfg: &SplitConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::invalid("no instances to balance"));
    }
    let pool = apply_exclusions(instances, cfg);

    let lemmas: BTreeSet<String> = cfg.holdout_lemmas.iter().map(|l| normalize_lemma(l)).collect();
    for sel in &cfg.holdout_patterns {
        if !pool.iter().any(|i| sel.matches(i)) {
            return Err(Error::invalid(format!("holdout pattern {sel} matches no instance")));
        }
    }
    if !lemmas.is_empty() {
        let present: BTreeSet<&str> = pool.iter().map(|i| i.governor_lemma.as_str()).collect();
        if let Some(missing) = lemmas.iter().find(|l| !present.contains(l.as_str())) {
            return Err(Error::invalid(format!("holdout lemma {missing:?} matches no instance")));
        }
    }

    let is_held = |inst: &Instance| {
        lemmas.contains(&inst.governor_lemma) || cfg.holdout_patterns.iter().any(|s| s.matches(inst))
    };
    let (held, rest): (Vec<Instance>, Vec<Instance>) = pool.into_iter().partition(|i| is_held(i));

    let mut rng = SeededRng::new(cfg.seed);
    let kept = balanced_indices(&rest, cfg, &mut rng)?;
    let (train_idx, test_idx) = stratified_split(&rest, &kept, cfg, &mut rng);

    let heldout: BTreeSet<String> = held.iter().map(|i| i.instance_id.clone()).collect();
    let mut test: Vec<Instance> = test_idx.iter().map(|&i| rest[i].clone()).collect();
    test.extend(held);
    Ok(LabeledDataset {
        dist_threshold: cfg.dist_threshold,
        train: train_idx.iter().map(|&i| rest[i].clone()).collect(),
        test,
        heldout,
    })
}

/// Checks the balance contract on one instance list: within each label
/// NEAR and FAR agree within `tolerance`, and so do the label totals.
pub fn check_balance(instances: &[Instance], dist_threshold: usize, tolerance: f64) -> Result<(), String> {
    let mut counts: HashMap<(Label, NearFar), usize> = HashMap::new();
    for inst in instances {
        *counts.entry((inst.label, near_far(inst, dist_threshold))).or_insert(0) += 1;
    }
    let get = |l, nf| counts.get(&(l, nf)).copied().unwrap_or(0);
    for label in [Label::Positive, Label::Negative] {
        let (near, far) = (get(label, NearFar::Near), get(label, NearFar::Far));
        if !within_tolerance(near, far, tolerance) {
            return Err(format!("{label}: near {near} vs far {far}"));
        }
    }
    let pos = get(Label::Positive, NearFar::Near) + get(Label::Positive, NearFar::Far);
    let neg = get(Label::Negative, NearFar::Near) + get(Label::Negative, NearFar::Far);
    if !within_tolerance(pos, neg, tolerance) {
        return Err(format!("positives {pos} vs negatives {neg}"));
    }
    Ok(())
}

pub const STATS_HEADER: [&str; 6] = ["split", "label", "near_far", "pos", "feature", "count"];

/// Instance counts as CSV, one row per non-empty statistics cell.
pub fn stats_report(ds: &LabeledDataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STATS_HEADER)?;
    for (key, count) in ds.stats() {
        w.write_record([
            key.split.as_str(),
            key.label.as_str(),
            key.near_far.as_str(),
            &key.pos,
            &key.feature,
            &count.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
