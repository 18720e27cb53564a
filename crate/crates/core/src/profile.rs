//! Per-language vocabulary: which case labels a bank may use, how they map
//! onto Universal Dependencies feature values, and which dependency
//! relations count as adjuncts or subjects.
//!
//! Profiles for Finnish (`fi`) and Russian (`ru`) ship with the crate; other
//! languages can be described in the same JSON shape and loaded from disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FI: &str = include_str!("../data/profiles/fi.json");
const RU: &str = include_str!("../data/profiles/ru.json");

/// UD `Case` values accepted for one bank case label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseMapping {
    pub ud: Vec<String>,
    /// Also accept tokens that carry no `Case` feature at all.
    #[serde(default)]
    pub allow_missing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub language: String,
    pub cases: BTreeMap<String, CaseMapping>,
    /// Bank infinitive label -> required UD `InfForm` value (`None`: any).
    pub infinitive_forms: BTreeMap<String, Option<String>>,
    pub adjunct_deprels: Vec<String>,
    pub subject_deprels: Vec<String>,
    /// Pattern selectors removed before balancing by default.
    #[serde(default)]
    pub excluded_governees: Vec<String>,
}

impl LanguageProfile {
    pub fn builtin(code: &str) -> Option<Self> {
        let text = match code {
            "fi" => FI,
            "ru" => RU,
            _ => return None,
        };
        Some(Self::from_json_str(text).expect("bundled profile is valid"))
    }

    /// Builtin profile for `code`, or a validation error naming the code.
    pub fn for_language(code: &str) -> Result<Self> {
        Self::builtin(code)
            .ok_or_else(|| Error::validation(format!("no language profile for {code:?}")))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let profile: Self = serde_json::from_str(text)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.language.is_empty() {
            return Err(Error::validation("profile language code is empty"));
        }
        for (name, mapping) in &self.cases {
            if mapping.ud.is_empty() && !mapping.allow_missing {
                return Err(Error::validation(format!(
                    "case {name:?} maps to no UD value"
                )));
            }
        }
        Ok(())
    }

    pub fn is_known_case(&self, name: &str) -> bool {
        self.cases.contains_key(name)
    }

    pub fn is_known_infinitive(&self, label: &str) -> bool {
        self.infinitive_forms.contains_key(label)
    }

    /// Does a token's UD `Case` value satisfy the bank case label?
    pub fn case_matches(&self, bank_case: &str, token_case: Option<&str>) -> bool {
        let Some(mapping) = self.cases.get(bank_case) else {
            return false;
        };
        match token_case {
            Some(value) => mapping.ud.iter().any(|u| u == value),
            None => mapping.allow_missing,
        }
    }

    /// Does a token's UD `InfForm` value satisfy the bank infinitive label?
    pub fn infinitive_matches(&self, label: &str, token_inf_form: Option<&str>) -> bool {
        match self.infinitive_forms.get(label) {
            None => false,
            Some(None) => true,
            Some(Some(required)) => token_inf_form == Some(required.as_str()),
        }
    }

    /// Reverse mapping for reporting: the bank label whose UD set is the
    /// narrowest one containing `ud_value` (ties by label order).
    pub fn bank_case_for(&self, ud_value: &str) -> Option<&str> {
        self.cases
            .iter()
            .filter(|(_, m)| m.ud.iter().any(|u| u == ud_value))
            .min_by_key(|(_, m)| m.ud.len())
            .map(|(name, _)| name.as_str())
    }

    pub fn is_adjunct(&self, deprel: &str) -> bool {
        deprel_in(deprel, &self.adjunct_deprels)
    }

    pub fn is_subject(&self, deprel: &str) -> bool {
        deprel_in(deprel, &self.subject_deprels)
    }
}

/// An entry without a subtype (`advmod`) also covers its subtypes
/// (`advmod:emph`); an entry with one matches only exactly.
fn deprel_in(deprel: &str, set: &[String]) -> bool {
    let base = deprel.split(':').next().unwrap_or(deprel);
    set.iter()
        .any(|entry| entry == deprel || (!entry.contains(':') && entry == base))
}
