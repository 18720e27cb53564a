//! Streaming CoNLL-U (UD v2) reader.
//!
//! Only syntactic-word lines become [`WordToken`]s. Multiword-token ranges
//! (`3-4`) and empty nodes (`5.1`) are skipped and counted. The enhanced
//! `DEPS` column is carried through verbatim but never interpreted.
//!
//! A sentence that fails validation (bad column count, dangling head, ...)
//! is recorded as a [`Rejection`] and the stream moves on to the next one.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Lines, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::govbank::AdpositionSide;

/// Universal part-of-speech tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub fn as_str(self) -> &'static str {
        use Upos::*;
        match self {
            Adj => "ADJ",
            Adp => "ADP",
            Adv => "ADV",
            Aux => "AUX",
            Cconj => "CCONJ",
            Det => "DET",
            Intj => "INTJ",
            Noun => "NOUN",
            Num => "NUM",
            Part => "PART",
            Pron => "PRON",
            Propn => "PROPN",
            Punct => "PUNCT",
            Sconj => "SCONJ",
            Sym => "SYM",
            Verb => "VERB",
            X => "X",
        }
    }

    /// NOUN, PROPN or PRON.
    pub fn is_nominal(self) -> bool {
        matches!(self, Upos::Noun | Upos::Propn | Upos::Pron)
    }
}

impl FromStr for Upos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use Upos::*;
        Ok(match s {
            "ADJ" => Adj,
            "ADP" => Adp,
            "ADV" => Adv,
            "AUX" => Aux,
            "CCONJ" => Cconj,
            "DET" => Det,
            "INTJ" => Intj,
            "NOUN" => Noun,
            "NUM" => Num,
            "PART" => Part,
            "PRON" => Pron,
            "PROPN" => Propn,
            "PUNCT" => Punct,
            "SCONJ" => Sconj,
            "SYM" => Sym,
            "VERB" => Verb,
            "X" => X,
            other => return Err(format!("unknown UPOS {other:?}")),
        })
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One syntactic word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordToken {
    /// 1-based word position.
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: Upos,
    pub xpos: String,
    /// Features in file order, values verbatim (`Case=Ela`).
    pub feats: Vec<(String, String)>,
    /// 0 for the root.
    pub head: usize,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl WordToken {
    pub fn feat(&self, key: &str) -> Option<&str> {
        self.feats
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: String,
    pub text: Option<String>,
    tokens: Vec<WordToken>,
}

/// The adposition attached to a nominal through a `case` relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseChild<'a> {
    pub token: &'a WordToken,
    pub side: AdpositionSide,
}

impl Sentence {
    /// Validates indices `1..=n`, head range, `head != index`, and at least
    /// one root.
    pub fn new(sent_id: impl Into<String>, text: Option<String>, tokens: Vec<WordToken>) -> Result<Self> {
        let sent_id = sent_id.into();
        let n = tokens.len();
        if n == 0 {
            return Err(Error::validation(format!("sentence {sent_id} has no words")));
        }
        for (pos, tok) in tokens.iter().enumerate() {
            if tok.index != pos + 1 {
                return Err(Error::validation(format!(
                    "sentence {sent_id}: word {} found at position {}",
                    tok.index,
                    pos + 1
                )));
            }
            if tok.head > n {
                return Err(Error::validation(format!(
                    "sentence {sent_id}: word {} has dangling head {}",
                    tok.index, tok.head
                )));
            }
            if tok.head == tok.index {
                return Err(Error::validation(format!(
                    "sentence {sent_id}: word {} heads itself",
                    tok.index
                )));
            }
        }
        if !tokens.iter().any(|t| t.head == 0) {
            return Err(Error::validation(format!("sentence {sent_id} has no root")));
        }
        Ok(Self {
            sent_id,
            text,
            tokens,
        })
    }

    pub fn tokens(&self) -> &[WordToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, index: usize) -> Result<&WordToken> {
        index
            .checked_sub(1)
            .and_then(|i| self.tokens.get(i))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "word index {index} out of range 1..={} in {}",
                    self.len(),
                    self.sent_id
                ))
            })
    }

    pub fn roots(&self) -> impl Iterator<Item = &WordToken> {
        self.tokens.iter().filter(|t| t.head == 0)
    }

    /// Words whose head is `index`, in word order.
    pub fn dependents(&self, index: usize) -> Result<Vec<&WordToken>> {
        self.token(index)?;
        Ok(self.tokens.iter().filter(|t| t.head == index).collect())
    }

    /// The `ADP` dependent of `index` attached with deprel `case`. When
    /// there are several, the first by word order is returned and a warning
    /// is logged. Invalid indices yield `None`.
    pub fn case_child(&self, index: usize) -> Option<CaseChild<'_>> {
        let mut children = self
            .tokens
            .iter()
            .filter(|t| t.head == index && t.upos == Upos::Adp && t.deprel == "case");
        let first = children.next()?;
        if children.next().is_some() {
            log::warn!(
                "{}: word {index} has several case children, using {}",
                self.sent_id,
                first.index
            );
        }
        let side = if first.index < index {
            AdpositionSide::Pre
        } else {
            AdpositionSide::Post
        };
        Some(CaseChild { token: first, side })
    }

    /// Distance between two words, counted in syntactic words.
    pub fn distance(&self, i: usize, j: usize) -> Result<usize> {
        self.token(i)?;
        self.token(j)?;
        Ok(i.abs_diff(j))
    }
}

/// Diagnostic record for a sentence dropped from the stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub sent_id: Option<String>,
    /// Line of the first line of the sentence block.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadStats {
    pub sentences: usize,
    pub rejected: usize,
    pub multiword_lines: usize,
    pub empty_nodes: usize,
}

pub struct ConlluReader<R: BufRead> {
    lines: Lines<R>,
    line_no: usize,
    ordinal: usize,
    stats: ReadStats,
    rejected: Vec<Rejection>,
}

impl<R: BufRead> ConlluReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            ordinal: 0,
            stats: ReadStats::default(),
            rejected: Vec::new(),
        }
    }

    pub fn stats(&self) -> ReadStats {
        self.stats
    }

    pub fn rejections(&self) -> &[Rejection] {
        &self.rejected
    }

    /// Takes the rejections collected so far.
    pub fn take_rejections(&mut self) -> Vec<Rejection> {
        std::mem::take(&mut self.rejected)
    }

    /// Next non-empty block of lines, with the line number it starts on.
    fn next_block(&mut self) -> io::Result<Option<(usize, Vec<String>)>> {
        let mut block = Vec::new();
        let mut start = 0;
        for line in self.lines.by_ref() {
            let line = line?;
            self.line_no += 1;
            let line = line.strip_suffix('\r').map(str::to_string).unwrap_or(line);
            if line.trim().is_empty() {
                if block.is_empty() {
                    continue;
                }
                return Ok(Some((start, block)));
            }
            if block.is_empty() {
                start = self.line_no;
            }
            block.push(line);
        }
        Ok((!block.is_empty()).then_some((start, block)))
    }

    fn parse_block(&mut self, start: usize, block: &[String]) -> Result<Sentence, Rejection> {
        self.ordinal += 1;
        let mut sent_id = None;
        let mut text = None;
        let mut tokens = Vec::new();
        let reject = |sent_id: &Option<String>, reason: String| Rejection {
            sent_id: sent_id.clone(),
            line: start,
            reason,
        };
        for (offset, line) in block.iter().enumerate() {
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once('=') {
                    match key.trim() {
                        "sent_id" => sent_id = Some(value.trim().to_string()),
                        "text" => text = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 10 {
                return Err(reject(
                    &sent_id,
                    format!("line {}: expected 10 columns, found {}", start + offset, cols.len()),
                ));
            }
            if cols[0].contains('-') {
                self.stats.multiword_lines += 1;
                continue;
            }
            if cols[0].contains('.') {
                self.stats.empty_nodes += 1;
                continue;
            }
            let tok = parse_word(&cols).map_err(|m| reject(&sent_id, format!("line {}: {m}", start + offset)))?;
            tokens.push(tok);
        }
        let id = sent_id.clone().unwrap_or_else(|| format!("s{}", self.ordinal));
        Sentence::new(id, text, tokens).map_err(|e| reject(&sent_id, e.to_string()))
    }
}

fn parse_word(cols: &[&str]) -> Result<WordToken, String> {
    let index: usize = cols[0]
        .parse()
        .map_err(|_| format!("bad word id {:?}", cols[0]))?;
    if index == 0 {
        return Err("word id 0".into());
    }
    let upos: Upos = cols[3].parse()?;
    let feats = if cols[5] == "_" || cols[5].is_empty() {
        Vec::new()
    } else {
        cols[5]
            .split('|')
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| format!("bad feature {kv:?}"))
            })
            .collect::<Result<_, _>>()?
    };
    let head: usize = cols[6]
        .parse()
        .map_err(|_| format!("bad head {:?}", cols[6]))?;
    Ok(WordToken {
        index,
        form: cols[1].to_string(),
        lemma: cols[2].to_string(),
        upos,
        xpos: cols[4].to_string(),
        feats,
        head,
        deprel: cols[7].to_string(),
        deps: cols[8].to_string(),
        misc: cols[9].to_string(),
    })
}

impl<R: BufRead> Iterator for ConlluReader<R> {
    type Item = io::Result<Sentence>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (start, block) = match self.next_block() {
                Ok(Some(b)) => b,
                Ok(None) => return None,
                Err(e) => return Some(Err(e)),
            };
            // comment-only blocks carry no sentence
            if block.iter().all(|l| l.starts_with('#')) {
                continue;
            }
            match self.parse_block(start, &block) {
                Ok(sentence) => {
                    self.stats.sentences += 1;
                    return Some(Ok(sentence));
                }
                Err(rejection) => {
                    log::warn!("rejected sentence at line {}: {}", rejection.line, rejection.reason);
                    self.stats.rejected += 1;
                    self.rejected.push(rejection);
                }
            }
        }
    }
}

pub fn read_conllu(path: impl AsRef<Path>) -> Result<ConlluReader<BufReader<File>>> {
    Ok(ConlluReader::new(BufReader::new(File::open(path)?)))
}

/// Parses a whole CoNLL-U string; convenient for fixtures.
pub fn parse_str(text: &str) -> (Vec<Sentence>, Vec<Rejection>) {
    let mut reader = ConlluReader::new(text.as_bytes());
    let sentences = reader.by_ref().map(|s| s.expect("in-memory read")).collect();
    (sentences, reader.take_rejections())
}

/// Diagnostic writer: `sent_id`/`text` comments plus the syntactic-word lines.
pub fn write_sentence<W: Write>(mut out: W, sentence: &Sentence) -> io::Result<()> {
    writeln!(out, "# sent_id = {}", sentence.sent_id)?;
    if let Some(text) = &sentence.text {
        writeln!(out, "# text = {text}")?;
    }
    for t in sentence.tokens() {
        let feats = if t.feats.is_empty() {
            "_".to_string()
        } else {
            t.feats
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join("|")
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.index, t.form, t.lemma, t.upos, t.xpos, feats, t.head, t.deprel, t.deps, t.misc
        )?;
    }
    writeln!(out)
}
