use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::Args;
use govprobe::attnio::{self, read_atn_file, FeatureTable, FeatureVector, HeadMask, PoolMode};
use govprobe::conllu::read_conllu;
use govprobe::dataset::{self, near_far, LabeledDataset, PatternSelector, SplitConfig};
use govprobe::experiments::{self, ExperimentData, ExperimentPlan, HoldoutSpec, ResultRow};
use govprobe::govbank::{load_bank_with, GovernmentBank};
use govprobe::matcher::{self, match_corpus, Instance, MatchConfig};
use govprobe::probes::{Metrics, ProbeConfig, ProbeKind, TrainedProbe};
use govprobe::profile::LanguageProfile;
use govprobe::{jsonl, Error, Execution};
use serde::Serialize;

use crate::config::Config;

pub struct Context {
    pub config: Config,
    pub seed: u64,
    pub exec: Execution,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

/// `A..B` or `A`, 1-based and inclusive.
pub fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad number {t:?} in range {s:?}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if lo == 0 || lo > hi {
        return Err(format!("range {s:?} must satisfy 1 <= start <= end"));
    }
    Ok((lo, hi))
}

/// Comma-separated list, or `@file` with one entry per line.
fn read_list(spec: &str) -> Result<Vec<String>> {
    let items: Vec<String> = match spec.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading list {path}"))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect(),
        None => spec.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
    };
    if items.is_empty() {
        return Err(invalid(format!("empty list {spec:?}")));
    }
    Ok(items)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn profile_for(language: &str, path: Option<&Path>) -> Result<LanguageProfile> {
    match path {
        Some(p) => Ok(LanguageProfile::load(p)?),
        None => Ok(LanguageProfile::for_language(language)?),
    }
}

/// Language named in the first data row of a bank file.
fn bank_language(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        #[derive(serde::Deserialize)]
        struct Head {
            language: String,
        }
        return Ok(serde_json::from_str::<Head>(&text).map_err(Error::from)?.language);
    }
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .and_then(|l| l.split('\t').next())
        .map(String::from)
        .ok_or_else(|| invalid(format!("{} has no rules; pass --language", path.display())))
}

fn load_bank(path: &Path, language: Option<&str>, profile: Option<&Path>) -> Result<(GovernmentBank, LanguageProfile)> {
    let language = match language {
        Some(l) => l.to_string(),
        None => bank_language(path)?,
    };
    let profile = profile_for(&language, profile)?;
    let bank = load_bank_with(path, &profile).with_context(|| format!("loading bank {}", path.display()))?;
    Ok((bank, profile))
}

fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    matcher::read_manifest(path).with_context(|| format!("reading instances {}", path.display()))
}

/// The single language of `instances`, or `wanted` after filtering.
fn one_language(instances: Vec<Instance>, wanted: Option<&str>) -> Result<(String, Vec<Instance>)> {
    let instances: Vec<Instance> = match wanted {
        Some(l) => instances.into_iter().filter(|i| i.language == l).collect(),
        None => instances,
    };
    let langs: BTreeSet<String> = instances.iter().map(|i| i.language.clone()).collect();
    match langs.len() {
        0 => Err(invalid("no instances for the requested language")),
        1 => Ok((langs.into_iter().next().unwrap(), instances)),
        _ => Err(invalid(format!("instances mix languages {langs:?}; pass --language"))),
    }
}

/// Builtin profile for `language`, unless disabled or unknown.
fn exclusion_profile(language: &str, disabled: bool) -> Option<LanguageProfile> {
    if disabled {
        return None;
    }
    let p = LanguageProfile::builtin(language);
    if p.is_none() {
        log::info!("no builtin profile for {language:?}; no default governee exclusions");
    }
    p
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct FeatureSource {
    /// Pooled feature vectors (JSONL, as written by `pool`).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Attention container to pool on the fly.
    #[arg(long)]
    atn: Option<PathBuf>,
}

impl FeatureSource {
    fn load(&self, exec: Execution, mode: PoolMode) -> Result<FeatureTable> {
        if let Some(path) = &self.features {
            let vectors: Vec<FeatureVector> =
                jsonl::read_file(path).with_context(|| format!("reading features {}", path.display()))?;
            return Ok(FeatureTable::from_vectors(vectors)?);
        }
        let path = self.atn.as_ref().expect("clap enforces one source");
        let records = read_atn_file(path).with_context(|| format!("reading {}", path.display()))?;
        log::info!("pooling {} attention records ({})", records.len(), mode.as_str());
        Ok(FeatureTable::from_records(exec, &records, mode)?)
    }
}

/// Drops instances without a feature row, with a warning.
fn with_features(instances: Vec<Instance>, table: &FeatureTable) -> Vec<Instance> {
    let before = instances.len();
    let kept: Vec<Instance> = instances.into_iter().filter(|i| table.contains(&i.instance_id)).collect();
    if kept.len() < before {
        log::warn!("{} of {before} instances have no attention features and are skipped", before - kept.len());
    }
    kept
}

/// Mask over layers `range` (1-based inclusive) of the table's model, or
/// every head the table carries.
fn table_mask(table: &FeatureTable, layers: Option<(usize, usize)>) -> Result<HeadMask> {
    let (l, a) = table.shape();
    let (lo, hi) = layers.unwrap_or((1, l as usize));
    if hi > l as usize {
        return Err(invalid(format!("layer range ends at {hi} but the features cover {l} layers")));
    }
    let heads = table
        .head_index_map()
        .iter()
        .copied()
        .filter(|&(layer, _)| (lo - 1..hi).contains(&(layer as usize)));
    Ok(HeadMask::from_heads(l, a, heads, format!("layers {lo}..{hi}"))?)
}

// --- bank-validate -------------------------------------------------------

#[derive(Debug, Args)]
pub struct BankValidateArgs {
    /// Bank file (TSV, or the JSON mirror when it ends in .json).
    #[arg(long)]
    bank: PathBuf,
    /// Language code; defaults to the one named in the file.
    #[arg(long)]
    language: Option<String>,
    /// Language profile JSON instead of the builtin one.
    #[arg(long)]
    profile: Option<PathBuf>,
}

pub fn bank_validate(_: &Context, a: BankValidateArgs) -> Result<()> {
    let (bank, _) = load_bank(&a.bank, a.language.as_deref(), a.profile.as_deref())?;
    let complements: usize = bank.rules().iter().map(|r| r.complements.len()).sum();
    let lemmas = bank.lemmas().count();
    println!(
        "{}: {} rules, {complements} complements, {lemmas} lemmas ({})",
        a.bank.display(),
        bank.len(),
        bank.language()
    );
    Ok(())
}

// --- extract-instances ---------------------------------------------------

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Dependency-parsed corpus in CoNLL-U.
    #[arg(long)]
    corpus: PathBuf,
    /// Prefix of instance ids; defaults to the corpus file stem.
    #[arg(long)]
    corpus_id: Option<String>,
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Instance manifest (JSONL); standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn extract_instances(ctx: &Context, a: ExtractArgs) -> Result<()> {
    let (bank, profile) = load_bank(&a.bank, a.language.as_deref(), a.profile.as_deref())?;
    let corpus_id = match a.corpus_id {
        Some(id) => id,
        None => a
            .corpus
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| invalid("cannot derive a corpus id; pass --corpus-id"))?,
    };
    let mut reader = read_conllu(&a.corpus).with_context(|| format!("opening {}", a.corpus.display()))?;
    let sentences = reader.by_ref().collect::<io::Result<Vec<_>>>()?;
    for r in reader.rejections() {
        log::warn!("skipped sentence: {r:?}");
    }
    let cfg = MatchConfig::new(corpus_id, profile);
    let instances = match_corpus(&sentences, &bank, &cfg, ctx.exec);
    let positives = instances.iter().filter(|i| i.label.is_positive()).count();
    log::info!(
        "{} sentences, {} instances ({positives} positive, {} negative)",
        sentences.len(),
        instances.len(),
        instances.len() - positives
    );
    let mut out = output(a.out.as_deref())?;
    jsonl::write(&mut out, &instances)?;
    out.flush()?;
    Ok(())
}

// --- balance -------------------------------------------------------------

#[derive(Debug, Args)]
pub struct HoldoutFlags {
    /// Governor lemmas to withhold: `a,b,c` or `@file` (one per line).
    #[arg(long)]
    holdout_lemmas: Option<String>,
    /// Governee selector to withhold, e.g. `case=ablative`; repeatable.
    #[arg(long = "holdout-pattern")]
    holdout_patterns: Vec<PatternSelector>,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    instances: PathBuf,
    /// Split manifest (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// NEAR means distance <= threshold (2 or 3).
    #[arg(long)]
    dist_threshold: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Largest share of positives one governee feature class may hold.
    #[arg(long, conflicts_with = "no_feature_cap")]
    feature_cap: Option<f64>,
    #[arg(long)]
    no_feature_cap: bool,
    /// Governee selector dropped before balancing; repeatable.
    #[arg(long = "exclude-pattern")]
    exclude_patterns: Vec<PatternSelector>,
    /// Skip the language profile's default exclusions.
    #[arg(long)]
    no_default_exclusions: bool,
    #[command(flatten)]
    holdout: HoldoutFlags,
    /// Also write the instance statistics CSV here.
    #[arg(long)]
    stats: Option<PathBuf>,
}

pub fn balance(ctx: &Context, a: BalanceArgs) -> Result<()> {
    let (language, instances) = one_language(read_instances(&a.instances)?, None)?;
    let plan = &ctx.config.plan;
    let mut cfg = SplitConfig::new(ctx.config.dist_threshold(a.dist_threshold), ctx.seed);
    cfg.test_fraction = a.test_fraction.unwrap_or(plan.test_fraction);
    cfg.feature_cap = if a.no_feature_cap { None } else { a.feature_cap.or(plan.feature_cap) };
    if let Some(p) = exclusion_profile(&language, a.no_default_exclusions) {
        cfg = cfg.with_language_defaults(&p)?;
    }
    cfg.exclude_patterns.extend(a.exclude_patterns);
    if let Some(list) = &a.holdout.holdout_lemmas {
        cfg.holdout_lemmas = read_list(list)?;
    }
    cfg.holdout_patterns = a.holdout.holdout_patterns;
    let ds = dataset::split_with_holdout(&instances, &cfg)?;
    log::info!(
        "{} instances: {} train, {} test ({} held out)",
        instances.len(),
        ds.train.len(),
        ds.test.len(),
        ds.heldout.len()
    );
    ds.write_manifest(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.stats {
        std::fs::write(path, dataset::stats_report(&ds)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

// --- pool ----------------------------------------------------------------

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Attention container (ATN1).
    #[arg(long)]
    atn: PathBuf,
    /// gov_to_dep, dep_to_gov or max_both.
    #[arg(long)]
    mode: Option<PoolMode>,
    /// Layers to keep, 1-based inclusive: `1..5` or `8`.
    #[arg(long, value_parser = parse_range)]
    layers: Option<(usize, usize)>,
    /// Feature vectors (JSONL); standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn pool(ctx: &Context, a: PoolArgs) -> Result<()> {
    let mode = a.mode.unwrap_or(ctx.config.plan.pool_mode);
    let records = read_atn_file(&a.atn).with_context(|| format!("reading {}", a.atn.display()))?;
    let Some(first) = records.first() else {
        return Err(invalid(format!("{} holds no records", a.atn.display())));
    };
    let (l, h) = (first.layers, first.heads);
    let (lo, hi) = a.layers.unwrap_or((1, l as usize));
    if hi > l as usize {
        return Err(invalid(format!("layer range ends at {hi} but the model has {l} layers")));
    }
    let heads = (lo as u16 - 1..hi as u16).flat_map(|layer| (0..h).map(move |head| (layer, head)));
    let mask = HeadMask::from_heads(l, h, heads, format!("layers {lo}..{hi}"))?;
    let vectors = attnio::pool_records(ctx.exec, &records, &mask, mode)?;
    log::info!("{} vectors of {} values", vectors.len(), mask.len());
    let mut out = output(a.out.as_deref())?;
    jsonl::write(&mut out, &vectors)?;
    out.flush()?;
    Ok(())
}

// --- train / eval --------------------------------------------------------

#[derive(Debug, Args)]
pub struct ProbeFlags {
    /// Trees per forest.
    #[arg(long)]
    trees: Option<usize>,
    /// Iteration cap (L-BFGS steps or MLP epochs).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Features examined per forest split.
    #[arg(long)]
    max_features: Option<usize>,
    /// Standardize features before fitting.
    #[arg(long)]
    standardize: bool,
}

impl ProbeFlags {
    fn apply(&self, plan: &mut ExperimentPlan) {
        let o = &mut plan.probe_overrides;
        o.trees = self.trees.or(o.trees);
        o.max_iter = self.max_iter.or(o.max_iter);
        o.max_features = self.max_features.or(o.max_features);
        o.standardize |= self.standardize;
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    source: FeatureSource,
    /// Split manifest written by `balance`.
    #[arg(long)]
    split: PathBuf,
    /// LOGREG, MLP1, MLP2 or RF.
    #[arg(long)]
    probe: ProbeKind,
    /// Restrict to these layers, 1-based inclusive.
    #[arg(long, value_parser = parse_range)]
    layers: Option<(usize, usize)>,
    #[arg(long)]
    mode: Option<PoolMode>,
    #[command(flatten)]
    flags: ProbeFlags,
    /// Where to save the trained probe (JSON).
    #[arg(long)]
    out: PathBuf,
}

fn design(table: &FeatureTable, instances: &[Instance], mask: &HeadMask) -> Result<(ndarray::Array2<f64>, Vec<bool>)> {
    let ids: Vec<&str> = instances.iter().map(|i| i.instance_id.as_str()).collect();
    let x = table.select(&ids, mask)?;
    let y = instances.iter().map(|i| i.label.is_positive()).collect();
    Ok((x, y))
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let mut plan = ctx.config.plan.clone();
    a.flags.apply(&mut plan);
    let table = a.source.load(ctx.exec, a.mode.unwrap_or(plan.pool_mode))?;
    let split = LabeledDataset::read_manifest(&a.split, ctx.config.dist_threshold(None))
        .with_context(|| format!("reading split {}", a.split.display()))?;
    let train = with_features(split.train, &table);
    if train.is_empty() {
        bail!(invalid("no training instances have features"));
    }
    let mask = table_mask(&table, a.layers)?;
    let (x, y) = design(&table, &train, &mask)?;
    let cfg: ProbeConfig = plan.probe_config(a.probe, ctx.seed);
    let probe = TrainedProbe::fit(&cfg, x.view(), &y, mask.iter().collect(), ctx.exec)?;
    let m = probe.evaluate(x.view(), &y)?;
    log::info!("{} on {} instances x {} heads; training F1 {:.4}", a.probe, train.len(), mask.len(), m.f1);
    probe.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    source: FeatureSource,
    #[arg(long)]
    split: PathBuf,
    /// Probe saved by `train`.
    #[arg(long)]
    model: PathBuf,
    /// NEAR/FAR boundary for the breakdown.
    #[arg(long)]
    dist_threshold: Option<usize>,
    #[arg(long)]
    mode: Option<PoolMode>,
    /// Metrics JSON; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SubsetMetrics {
    subset: String,
    metrics: Metrics,
}

pub fn eval(ctx: &Context, a: EvalArgs) -> Result<()> {
    let threshold = ctx.config.dist_threshold(a.dist_threshold);
    let probe = TrainedProbe::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let table = a.source.load(ctx.exec, a.mode.unwrap_or(ctx.config.plan.pool_mode))?;
    let split = LabeledDataset::read_manifest(&a.split, threshold)
        .with_context(|| format!("reading split {}", a.split.display()))?;
    let (l, h) = table.shape();
    let mask = HeadMask::from_heads(l, h, probe.head_index_map.iter().copied(), "probe heads")?;
    if mask.iter().ne(probe.head_index_map.iter().copied()) {
        return Err(invalid("probe head map is not in layer-major order"));
    }
    let test = with_features(split.test.clone(), &table);
    let mut subsets: BTreeMap<String, Vec<Instance>> = BTreeMap::new();
    for inst in test {
        let nf = near_far(&inst, threshold).as_str().to_ascii_lowercase();
        if split.is_heldout(&inst) {
            subsets.entry("unseen".into()).or_default().push(inst.clone());
        }
        subsets.entry(nf).or_default().push(inst.clone());
        subsets.entry("overall".into()).or_default().push(inst);
    }
    if subsets.is_empty() {
        return Err(invalid("no test instances have features"));
    }
    let mut results = Vec::new();
    for (subset, instances) in subsets {
        let (x, y) = design(&table, &instances, &mask)?;
        results.push(SubsetMetrics {
            subset,
            metrics: probe.evaluate(x.view(), &y)?,
        });
    }
    let mut out = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &results).map_err(Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

// --- experiment families -------------------------------------------------

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Instance manifest (JSONL).
    #[arg(long)]
    instances: PathBuf,
    #[command(flatten)]
    source: FeatureSource,
    /// Directory for the CSV and JSON reports.
    #[arg(long)]
    out_dir: PathBuf,
    /// Keep only instances of this language.
    #[arg(long)]
    language: Option<String>,
    /// Probe kinds, comma-separated.
    #[arg(long, value_delimiter = ',')]
    probes: Vec<ProbeKind>,
    #[arg(long, value_delimiter = ',')]
    dist_thresholds: Vec<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    mode: Option<PoolMode>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    no_default_exclusions: bool,
    #[command(flatten)]
    flags: ProbeFlags,
}

impl ExperimentArgs {
    fn prepare(&self, ctx: &Context) -> Result<(ExperimentPlan, ExperimentData)> {
        let mut plan = ctx.config.plan.clone();
        plan.seed = ctx.seed;
        if !self.probes.is_empty() {
            plan.probes = self.probes.clone();
        }
        if !self.dist_thresholds.is_empty() {
            plan.dist_thresholds = self.dist_thresholds.clone();
        }
        plan.repetitions = self.repetitions.unwrap_or(plan.repetitions);
        plan.pool_mode = self.mode.unwrap_or(plan.pool_mode);
        plan.test_fraction = self.test_fraction.unwrap_or(plan.test_fraction);
        self.flags.apply(&mut plan);
        plan.validate()?;

        let (language, instances) = one_language(read_instances(&self.instances)?, self.language.as_deref())?;
        let table = self.source.load(ctx.exec, plan.pool_mode)?;
        let instances = with_features(instances, &table);
        let mut data = ExperimentData::new(language.clone(), instances, table)?;
        if let Some(p) = exclusion_profile(&language, self.no_default_exclusions) {
            data = data.with_profile(p);
        }
        Ok((plan, data))
    }
}

fn report(out_dir: &Path, stem: &str, rows: &[ResultRow]) -> Result<()> {
    let written = experiments::write_reports(out_dir, stem, rows)
        .with_context(|| format!("writing reports to {}", out_dir.display()))?;
    for path in written {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct OverallArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Also score the best probe separately on NEAR and FAR instances.
    #[arg(long)]
    near_far: bool,
}

pub fn overall(ctx: &Context, a: OverallArgs) -> Result<()> {
    let (plan, data) = a.common.prepare(ctx)?;
    let data = [data];
    report(&a.common.out_dir, "overall", &experiments::run_overall(&plan, &data, ctx.exec)?)?;
    if a.near_far {
        report(&a.common.out_dir, "near_far", &experiments::run_near_far(&plan, &data, ctx.exec)?)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Values of N (first N layers), 1-based inclusive; default all.
    #[arg(long, value_parser = parse_range)]
    layers: Option<(usize, usize)>,
}

pub fn sweep_layers(ctx: &Context, a: SweepArgs) -> Result<()> {
    let (mut plan, data) = a.common.prepare(ctx)?;
    if let Some((lo, hi)) = a.layers {
        let cast = |v: usize| u16::try_from(v).map_err(|_| invalid(format!("layer count {v} too large")));
        plan.layer_range = Some((cast(lo)?, cast(hi)?));
    }
    report(&a.common.out_dir, "layer_sweep", &experiments::run_layer_sweep(&plan, &[data], ctx.exec)?)
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Values of N (top N heads), inclusive; default all.
    #[arg(long, value_parser = parse_range)]
    top: Option<(usize, usize)>,
}

pub fn ablate_heads(ctx: &Context, a: AblateArgs) -> Result<()> {
    let (mut plan, data) = a.common.prepare(ctx)?;
    plan.ablation_range = a.top.or(plan.ablation_range);
    report(&a.common.out_dir, "head_ablation", &experiments::run_head_ablation(&plan, &[data], ctx.exec)?)
}

#[derive(Debug, Args)]
pub struct HoldoutArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    #[command(flatten)]
    holdout: HoldoutFlags,
    /// Withhold this many governor lemmas, drawn afresh per repetition.
    #[arg(long)]
    random_lemmas: Option<usize>,
}

pub fn holdout(ctx: &Context, a: HoldoutArgs) -> Result<()> {
    let (mut plan, data) = a.common.prepare(ctx)?;
    let mut specs = Vec::new();
    if !a.holdout.holdout_patterns.is_empty() {
        specs.push(HoldoutSpec::Patterns {
            patterns: a.holdout.holdout_patterns,
        });
    }
    if let Some(list) = &a.holdout.holdout_lemmas {
        specs.push(HoldoutSpec::Lemmas {
            lemmas: read_list(list)?,
        });
    }
    if let Some(count) = a.random_lemmas {
        specs.push(HoldoutSpec::RandomLemmas { count });
    }
    if !specs.is_empty() {
        plan.holdouts = specs;
    }
    if plan.holdouts.is_empty() {
        return Err(invalid("give --holdout-lemmas, --holdout-pattern or --random-lemmas"));
    }
    report(&a.common.out_dir, "holdout", &experiments::run_holdout(&plan, &[data], ctx.exec)?)
}

// --- export-projection / stats ------------------------------------------

#[derive(Debug, Args)]
pub struct ProjectionArgs {
    #[arg(long)]
    instances: PathBuf,
    #[command(flatten)]
    source: FeatureSource,
    #[arg(long, value_parser = parse_range)]
    layers: Option<(usize, usize)>,
    #[arg(long)]
    mode: Option<PoolMode>,
    /// Append the first two principal components.
    #[arg(long)]
    pca: bool,
    /// CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn export_projection(ctx: &Context, a: ProjectionArgs) -> Result<()> {
    let table = a.source.load(ctx.exec, a.mode.unwrap_or(ctx.config.plan.pool_mode))?;
    let instances = with_features(read_instances(&a.instances)?, &table);
    let mask = table_mask(&table, a.layers)?;
    let mut out = output(a.out.as_deref())?;
    experiments::export_projection(&instances, &table, &mask, a.pca, &mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
#[group(id = "stats_input", required = true, multiple = false)]
pub struct StatsInput {
    /// Split manifest; counts per split.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Instance manifest; counts over the whole pool.
    #[arg(long)]
    instances: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    input: StatsInput,
    #[arg(long)]
    dist_threshold: Option<usize>,
    /// CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn stats(ctx: &Context, a: StatsArgs) -> Result<()> {
    let threshold = ctx.config.dist_threshold(a.dist_threshold);
    let mut out = output(a.out.as_deref())?;
    if let Some(path) = &a.input.split {
        let ds = LabeledDataset::read_manifest(path, threshold).with_context(|| format!("reading {}", path.display()))?;
        out.write_all(dataset::stats_report(&ds)?.as_bytes())?;
    } else {
        let path = a.input.instances.as_ref().expect("clap enforces one input");
        let pool = LabeledDataset {
            dist_threshold: threshold,
            train: read_instances(path)?,
            test: Vec::new(),
            heldout: BTreeSet::new(),
        };
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["label", "near_far", "pos", "feature", "count"])?;
        for (k, n) in pool.stats() {
            w.write_record([k.label.as_str(), k.near_far.as_str(), &k.pos, &k.feature, &n.to_string()])?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..5"), Ok((1, 5)));
        assert_eq!(parse_range("1..=5"), Ok((1, 5)));
        assert_eq!(parse_range("8"), Ok((8, 8)));
        assert!(parse_range("0..3").is_err());
        assert!(parse_range("5..2").is_err());
        assert!(parse_range("a..b").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(read_list("a, b,,c").unwrap(), vec!["a", "b", "c"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.txt");
        std::fs::write(&path, "# lemmas\nolla\n\nmennä\n").unwrap();
        assert_eq!(read_list(&format!("@{}", path.display())).unwrap(), vec!["olla", "mennä"]);
        assert!(read_list(",").is_err());
    }
}
