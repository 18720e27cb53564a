//! The Government Bank: verb lemmas with the complements they govern.
//!
//! On disk the bank is a UTF-8 TSV file with one complement per row and nine
//! columns:
//!
//! ```text
//! language  lemma  transitivity(T/I)  slot(dobj/arg)  head_pos  case  base  adposition_side  infinitive_form
//! ```
//!
//! Absent optional fields are empty strings and `#` lines are comments. Rows
//! sharing `(lemma, transitivity)` form one [`GovernmentRule`] whose id is
//! `language:lemma:T` (or `:I`). A JSON export mirrors the same fields.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::profile::LanguageProfile;

pub const TSV_COLUMNS: usize = 9;
pub const TSV_HEADER: &str =
    "# language\tlemma\ttransitivity\tslot\thead_pos\tcase\tbase\tadposition_side\tinfinitive_form";

/// Lemma comparison key: lowercase, then Unicode NFC.
pub fn normalize_lemma(lemma: &str) -> String {
    lemma.trim().to_lowercase().nfc().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HeadPos {
    Noun,
    Verb,
    Adposition,
}

impl HeadPos {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadPos::Noun => "NOUN",
            HeadPos::Verb => "VERB",
            HeadPos::Adposition => "ADPOSITION",
        }
    }
}

impl FromStr for HeadPos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NOUN" => Ok(HeadPos::Noun),
            "VERB" => Ok(HeadPos::Verb),
            "ADPOSITION" => Ok(HeadPos::Adposition),
            other => Err(format!("unknown head_pos {other:?}")),
        }
    }
}

/// Preposition or postposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AdpositionSide {
    Pre,
    Post,
}

impl AdpositionSide {
    pub fn as_str(self) -> &'static str {
        match self {
            AdpositionSide::Pre => "PRE",
            AdpositionSide::Post => "POST",
        }
    }
}

impl FromStr for AdpositionSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PRE" => Ok(AdpositionSide::Pre),
            "POST" => Ok(AdpositionSide::Post),
            other => Err(format!("unknown adposition_side {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComplementSpec {
    pub head_pos: HeadPos,
    pub case: Option<String>,
    pub base: Option<String>,
    pub adposition_side: Option<AdpositionSide>,
    pub infinitive_form: Option<String>,
    pub is_direct_object: bool,
}

impl ComplementSpec {
    pub fn validate(&self, profile: &LanguageProfile) -> Result<()> {
        let adposition = self.head_pos == HeadPos::Adposition;
        if adposition != self.base.is_some() || adposition != self.adposition_side.is_some() {
            return Err(Error::validation(
                "base and adposition_side must be present exactly for ADPOSITION complements",
            ));
        }
        if self.infinitive_form.is_some() && self.head_pos != HeadPos::Verb {
            return Err(Error::validation(
                "infinitive_form is only allowed on VERB complements",
            ));
        }
        if self.case.is_none() && self.base.is_none() && self.infinitive_form.is_none() {
            return Err(Error::validation(
                "complement needs at least one of case, base, infinitive_form",
            ));
        }
        if let Some(case) = &self.case {
            if !profile.is_known_case(case) {
                return Err(Error::validation(format!(
                    "unknown case label {case:?} for language {:?}",
                    profile.language
                )));
            }
        }
        if let Some(form) = &self.infinitive_form {
            if !profile.is_known_infinitive(form) {
                return Err(Error::validation(format!(
                    "unknown infinitive form {form:?} for language {:?}",
                    profile.language
                )));
            }
        }
        if matches!(&self.base, Some(b) if b.is_empty()) {
            return Err(Error::validation("empty adposition base"));
        }
        Ok(())
    }

    pub fn shape(&self) -> GoverneeShape {
        GoverneeShape {
            direct_object: self.is_direct_object,
            pos: self.head_pos.as_str().to_string(),
            base: self.base.clone(),
            side: self.adposition_side,
            inf_form: self.infinitive_form.clone(),
            case: self.case.clone(),
        }
    }
}

/// Compact, parseable description of a governee: the complement a positive
/// instance matched, or the observed form of a negative one.
///
/// Rendered as `[dobj:]POS(+Key:Value)*` with keys in the fixed order
/// `Base`, `Side`, `Inf`, `Case`, e.g. `ADPOSITION+Base:vastaan+Side:POST+Case:partitive`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoverneeShape {
    pub direct_object: bool,
    pub pos: String,
    pub base: Option<String>,
    pub side: Option<AdpositionSide>,
    pub inf_form: Option<String>,
    pub case: Option<String>,
}

impl GoverneeShape {
    /// Feature label along the instance-statistics axis: the adposition and
    /// its case, the infinitive form, or the bare case.
    pub fn feature(&self) -> String {
        let case = self.case.as_deref().unwrap_or("-");
        match (&self.base, &self.inf_form) {
            (Some(base), _) => format!("{base} {case}"),
            (None, Some(inf)) => inf.clone(),
            (None, None) => case.to_string(),
        }
    }
}

impl fmt::Display for GoverneeShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.direct_object {
            f.write_str("dobj:")?;
        }
        f.write_str(&self.pos)?;
        if let Some(base) = &self.base {
            write!(f, "+Base:{base}")?;
        }
        if let Some(side) = self.side {
            write!(f, "+Side:{}", side.as_str())?;
        }
        if let Some(inf) = &self.inf_form {
            write!(f, "+Inf:{inf}")?;
        }
        if let Some(case) = &self.case {
            write!(f, "+Case:{case}")?;
        }
        Ok(())
    }
}

impl FromStr for GoverneeShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed governee summary {s:?}"));
        let mut parts = s.split('+');
        let head = parts.next().filter(|h| !h.is_empty()).ok_or_else(bad)?;
        let (direct_object, pos) = match head.strip_prefix("dobj:") {
            Some(pos) => (true, pos),
            None => (false, head),
        };
        let mut shape = GoverneeShape {
            direct_object,
            pos: pos.to_string(),
            base: None,
            side: None,
            inf_form: None,
            case: None,
        };
        for part in parts {
            let (key, value) = part.split_once(':').ok_or_else(bad)?;
            match key {
                "Base" => shape.base = Some(value.to_string()),
                "Side" => shape.side = Some(value.parse().map_err(|_| bad())?),
                "Inf" => shape.inf_form = Some(value.to_string()),
                "Case" => shape.case = Some(value.to_string()),
                _ => return Err(bad()),
            }
        }
        Ok(shape)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernmentRule {
    pub language: String,
    pub lemma: String,
    pub transitive: bool,
    pub complements: Vec<ComplementSpec>,
    pub rule_id: String,
}

impl GovernmentRule {
    pub fn default_id(language: &str, lemma: &str, transitive: bool) -> String {
        format!("{language}:{lemma}:{}", if transitive { 'T' } else { 'I' })
    }

    /// Identifier of the `ordinal`-th complement (0-based), as recorded on
    /// positive instances.
    pub fn pattern_id(&self, ordinal: usize) -> String {
        format!("{}#{ordinal}", self.rule_id)
    }

    fn validate(&self, profile: &LanguageProfile) -> Result<()> {
        if self.lemma.is_empty() {
            return Err(Error::validation("empty lemma"));
        }
        if self.rule_id.is_empty() {
            return Err(Error::validation(format!("rule for {:?} has empty id", self.lemma)));
        }
        if self.language != profile.language {
            return Err(Error::validation(format!(
                "rule {} has language {:?}, bank is {:?}",
                self.rule_id, self.language, profile.language
            )));
        }
        for spec in &self.complements {
            spec.validate(profile)
                .map_err(|e| Error::validation(format!("rule {}: {e}", self.rule_id)))?;
        }
        let objects = self.complements.iter().filter(|c| c.is_direct_object).count();
        if !self.transitive && objects > 0 {
            return Err(Error::validation(format!(
                "intransitive rule {} has a direct-object complement",
                self.rule_id
            )));
        }
        if objects > 1 {
            return Err(Error::validation(format!(
                "rule {} has {objects} direct-object complements",
                self.rule_id
            )));
        }
        Ok(())
    }
}

/// Validated, immutable rule inventory with a lemma index.
#[derive(Debug, Clone)]
pub struct GovernmentBank {
    language: String,
    rules: Vec<GovernmentRule>,
    index: HashMap<String, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct BankJson {
    language: String,
    rules: Vec<GovernmentRule>,
}

impl GovernmentBank {
    /// Builds a bank from rules, validating each against `profile` and
    /// rejecting duplicate rule ids. Rule order is preserved.
    pub fn from_rules(profile: &LanguageProfile, mut rules: Vec<GovernmentRule>) -> Result<Self> {
        let mut seen = HashMap::new();
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, rule) in rules.iter_mut().enumerate() {
            rule.lemma = normalize_lemma(&rule.lemma);
            for spec in &mut rule.complements {
                if let Some(base) = &spec.base {
                    spec.base = Some(normalize_lemma(base));
                }
            }
            rule.validate(profile)?;
            if seen.insert(rule.rule_id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate rule_id {:?}", rule.rule_id)));
            }
            index.entry(rule.lemma.clone()).or_default().push(i);
        }
        Ok(Self {
            language: profile.language.clone(),
            rules,
            index,
        })
    }

    pub fn empty(language: &str) -> Self {
        Self {
            language: language.to_string(),
            rules: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn parse_tsv(text: &str, profile: &LanguageProfile) -> Result<Self> {
        // (lemma, transitive) -> position in `rules`, first appearance wins
        let mut groups: HashMap<(String, bool), usize> = HashMap::new();
        let mut rules: Vec<GovernmentRule> = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let row = parse_row(line, line_no, profile)?;
            let key = (row.lemma.clone(), row.transitive);
            let slot = *groups.entry(key).or_insert_with(|| {
                rules.push(GovernmentRule {
                    language: row.language.clone(),
                    rule_id: GovernmentRule::default_id(&row.language, &row.lemma, row.transitive),
                    lemma: row.lemma.clone(),
                    transitive: row.transitive,
                    complements: Vec::new(),
                });
                rules.len() - 1
            });
            rules[slot].complements.push(row.spec);
        }
        Self::from_rules(profile, rules)
    }

    pub fn from_json_str(text: &str, profile: &LanguageProfile) -> Result<Self> {
        let parsed: BankJson = serde_json::from_str(text)?;
        if parsed.language != profile.language {
            return Err(Error::validation(format!(
                "bank language {:?} does not match profile {:?}",
                parsed.language, profile.language
            )));
        }
        Self::from_rules(profile, parsed.rules)
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn rules(&self) -> &[GovernmentRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Rules whose lemma equals `lemma` after normalization, in bank order.
    pub fn rules_for(&self, lemma: &str) -> Vec<&GovernmentRule> {
        self.index
            .get(&normalize_lemma(lemma))
            .map(|ids| ids.iter().map(|&i| &self.rules[i]).collect())
            .unwrap_or_default()
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn rule(&self, rule_id: &str) -> Option<&GovernmentRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    /// Canonical TSV: header comment, then rules sorted by id with their
    /// complements in stored order.
    pub fn to_tsv(&self) -> String {
        let mut sorted: Vec<&GovernmentRule> = self.rules.iter().collect();
        sorted.sort_by(|a, b| a.rule_id.cmp(&b.rule_id));
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for rule in sorted {
            for spec in &rule.complements {
                let fields = [
                    rule.language.as_str(),
                    rule.lemma.as_str(),
                    if rule.transitive { "T" } else { "I" },
                    if spec.is_direct_object { "dobj" } else { "arg" },
                    spec.head_pos.as_str(),
                    spec.case.as_deref().unwrap_or(""),
                    spec.base.as_deref().unwrap_or(""),
                    spec.adposition_side.map(AdpositionSide::as_str).unwrap_or(""),
                    spec.infinitive_form.as_deref().unwrap_or(""),
                ];
                out.push_str(&fields.join("\t"));
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = BankJson {
            language: self.language.clone(),
            rules: self.rules.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

struct Row {
    language: String,
    lemma: String,
    transitive: bool,
    spec: ComplementSpec,
}

fn parse_row(line: &str, line_no: usize, profile: &LanguageProfile) -> Result<Row> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != TSV_COLUMNS {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {TSV_COLUMNS} columns, found {}", cols.len()),
        });
    }
    let parse_err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());

    let language = cols[0].to_string();
    if language != profile.language {
        return Err(Error::validation(format!(
            "line {line_no}: language {language:?} in a {:?} bank",
            profile.language
        )));
    }
    let lemma = normalize_lemma(cols[1]);
    if lemma.is_empty() {
        return Err(Error::validation(format!("line {line_no}: empty lemma")));
    }
    let transitive = match cols[2] {
        "T" => true,
        "I" => false,
        other => return Err(parse_err(format!("transitivity must be T or I, got {other:?}"))),
    };
    let is_direct_object = match cols[3] {
        "dobj" => true,
        "arg" => false,
        other => return Err(parse_err(format!("slot must be dobj or arg, got {other:?}"))),
    };
    let head_pos: HeadPos = cols[4].parse().map_err(parse_err)?;
    let adposition_side = match cols[7] {
        "" => None,
        s => Some(s.parse::<AdpositionSide>().map_err(parse_err)?),
    };
    let spec = ComplementSpec {
        head_pos,
        case: opt(cols[5]),
        base: opt(cols[6]).map(|b| normalize_lemma(&b)),
        adposition_side,
        infinitive_form: opt(cols[8]),
        is_direct_object,
    };
    spec.validate(profile)
        .map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
    Ok(Row {
        language,
        lemma,
        transitive,
        spec,
    })
}

/// Loads a TSV bank using the builtin profile for `language`.
pub fn load_bank(path: impl AsRef<Path>, language: &str) -> Result<GovernmentBank> {
    let profile = LanguageProfile::for_language(language)?;
    load_bank_with(path, &profile)
}

/// Loads a bank with an explicit profile. Files ending in `.json` are read
/// as the JSON mirror, everything else as TSV.
pub fn load_bank_with(path: impl AsRef<Path>, profile: &LanguageProfile) -> Result<GovernmentBank> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        GovernmentBank::from_json_str(&text, profile)
    } else {
        GovernmentBank::parse_tsv(&text, profile)
    }
}
