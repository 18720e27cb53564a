//! Rule-based extraction of governor/governee instances.
//!
//! For every `VERB` with at least one bank rule, each syntactic dependent is
//! classified:
//!
//! * subjects and adjunct relations are skipped outright;
//! * a dependent satisfying any complement of the verb's own rules is a
//!   **positive** instance, tagged with the first matching pattern;
//! * a nominal or adpositional dependent matching no complement is a
//!   **negative** instance;
//! * anything else yields no instance.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conllu::{Sentence, Upos, WordToken};
use crate::error::{Error, Result};
use crate::govbank::{normalize_lemma, ComplementSpec, GovernmentBank, GoverneeShape, HeadPos};
use crate::jsonl;
use crate::par::Execution;
use crate::profile::LanguageProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "POSITIVE",
            Label::Negative => "NEGATIVE",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A labeled governor/governee pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub sent_id: String,
    pub language: String,
    pub governor_index: usize,
    pub governee_index: usize,
    pub governor_lemma: String,
    /// `rule_id#ordinal`; present exactly on positives.
    pub pattern_id: Option<String>,
    pub label: Label,
    pub distance: usize,
    pub matched_spec_summary: Option<String>,
}

impl Instance {
    pub fn make_id(corpus_id: &str, sent_id: &str, governor: usize, governee: usize) -> String {
        format!("{corpus_id}:{sent_id}:{governor}:{governee}")
    }

    pub fn validate(&self) -> Result<()> {
        if self.governor_index == self.governee_index {
            return Err(Error::validation(format!(
                "instance {} has governor == governee",
                self.instance_id
            )));
        }
        if self.distance != self.governor_index.abs_diff(self.governee_index) {
            return Err(Error::validation(format!(
                "instance {} distance {} disagrees with indices",
                self.instance_id, self.distance
            )));
        }
        if self.pattern_id.is_some() != self.label.is_positive() {
            return Err(Error::validation(format!(
                "instance {} pattern_id must be present exactly on positives",
                self.instance_id
            )));
        }
        Ok(())
    }

    /// Parsed `matched_spec_summary`, if any.
    pub fn shape(&self) -> Option<GoverneeShape> {
        self.matched_spec_summary.as_deref().and_then(|s| s.parse().ok())
    }
}

#[derive(Debug, Clone)]
pub struct MatchConfig {
    /// Prefix of every instance id.
    pub corpus_id: String,
    pub profile: LanguageProfile,
}

impl MatchConfig {
    pub fn new(corpus_id: impl Into<String>, profile: LanguageProfile) -> Self {
        Self {
            corpus_id: corpus_id.into(),
            profile,
        }
    }
}

fn case_ok(spec: &ComplementSpec, token: &WordToken, profile: &LanguageProfile) -> bool {
    spec.case
        .as_deref()
        .is_none_or(|case| profile.case_matches(case, token.feat("Case")))
}

/// Does dependent `d` of sentence `s` satisfy every field `spec` sets?
///
/// * `NOUN`: a nominal without an adposition, in the required case.
/// * `ADPOSITION`: a word with a `case` child whose lemma is `base`, on the
///   required side, the word itself in the required case.
/// * `VERB`: an infinitive (`VerbForm=Inf`) of the required form and case.
pub fn spec_matches(s: &Sentence, d: &WordToken, spec: &ComplementSpec, profile: &LanguageProfile) -> bool {
    match spec.head_pos {
        HeadPos::Noun => {
            d.upos.is_nominal() && s.case_child(d.index).is_none() && case_ok(spec, d, profile)
        }
        HeadPos::Adposition => {
            let Some(child) = s.case_child(d.index) else {
                return false;
            };
            let base_ok = spec
                .base
                .as_deref()
                .is_none_or(|b| normalize_lemma(&child.token.lemma) == b);
            let side_ok = spec.adposition_side.is_none_or(|side| side == child.side);
            base_ok && side_ok && case_ok(spec, d, profile)
        }
        HeadPos::Verb => {
            d.upos == Upos::Verb
                && d.feat("VerbForm") == Some("Inf")
                && spec
                    .infinitive_form
                    .as_deref()
                    .is_none_or(|f| profile.infinitive_matches(f, d.feat("InfForm")))
                && case_ok(spec, d, profile)
        }
    }
}

/// Observed form of a negative governee, in bank vocabulary where the
/// profile can map the UD value back.
pub fn observed_shape(s: &Sentence, d: &WordToken, profile: &LanguageProfile) -> GoverneeShape {
    let case = d.feat("Case").map(|ud| {
        profile
            .bank_case_for(ud)
            .map(str::to_string)
            .unwrap_or_else(|| ud.to_string())
    });
    match s.case_child(d.index) {
        Some(child) => GoverneeShape {
            direct_object: false,
            pos: HeadPos::Adposition.as_str().into(),
            base: Some(normalize_lemma(&child.token.lemma)),
            side: Some(child.side),
            inf_form: None,
            case,
        },
        None => GoverneeShape {
            direct_object: false,
            pos: HeadPos::Noun.as_str().into(),
            base: None,
            side: None,
            inf_form: None,
            case,
        },
    }
}

pub fn distance_of(s: &Sentence, i: usize, j: usize) -> Result<usize> {
    s.distance(i, j)
}

pub fn match_sentence(s: &Sentence, bank: &GovernmentBank, cfg: &MatchConfig) -> Vec<Instance> {
    let profile = &cfg.profile;
    let mut out = Vec::new();
    for verb in s.tokens().iter().filter(|t| t.upos == Upos::Verb) {
        let rules = bank.rules_for(&verb.lemma);
        if rules.is_empty() {
            continue;
        }
        let dependents = s.dependents(verb.index).expect("verb index comes from the sentence");
        for d in dependents {
            if profile.is_subject(&d.deprel) || profile.is_adjunct(&d.deprel) {
                continue;
            }
            let matched = rules.iter().find_map(|rule| {
                rule.complements
                    .iter()
                    .position(|spec| spec_matches(s, d, spec, profile))
                    .map(|ordinal| (rule, ordinal))
            });
            let (label, pattern_id, summary) = match matched {
                Some((rule, ordinal)) => (
                    Label::Positive,
                    Some(rule.pattern_id(ordinal)),
                    rule.complements[ordinal].shape().to_string(),
                ),
                None if d.upos.is_nominal() || s.case_child(d.index).is_some() => (
                    Label::Negative,
                    None,
                    observed_shape(s, d, profile).to_string(),
                ),
                None => continue,
            };
            out.push(Instance {
                instance_id: Instance::make_id(&cfg.corpus_id, &s.sent_id, verb.index, d.index),
                sent_id: s.sent_id.clone(),
                language: bank.language().to_string(),
                governor_index: verb.index,
                governee_index: d.index,
                governor_lemma: normalize_lemma(&verb.lemma),
                pattern_id,
                label,
                distance: verb.index.abs_diff(d.index),
                matched_spec_summary: Some(summary),
            });
        }
    }
    out
}

/// Matches every sentence; output keeps sentence order.
pub fn match_corpus(
    sentences: &[Sentence],
    bank: &GovernmentBank,
    cfg: &MatchConfig,
    exec: Execution,
) -> Vec<Instance> {
    exec.map(sentences, |s| match_sentence(s, bank, cfg))
        .into_iter()
        .flatten()
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, instances: &[Instance]) -> Result<()> {
    jsonl::write_file(path, instances)
}

/// Reads and validates an instance manifest.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let instances: Vec<Instance> = jsonl::read_file(path)?;
    for inst in &instances {
        inst.validate()?;
    }
    Ok(instances)
}
