//! Attention records, the ATN1 container, head masks and max-pooling.
//!
//! ATN1 layout (little-endian): magic `ATN1`, `u32` version (1), then
//! records until end of file. Each record is a `u32` id length, the UTF-8
//! id, `u16` layers, heads, governor span length and governee span length,
//! then the governor-to-governee block (`f32`, `[L][A][Tg][Td]`) and the
//! governee-to-governor block (`f32`, `[L][A][Td][Tg]`).

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;

pub const MAGIC: &[u8; 4] = b"ATN1";
pub const VERSION: u32 = 1;
const WEIGHT_SLACK: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub instance_id: String,
    pub layers: u16,
    pub heads: u16,
    pub gov_len: u16,
    pub dep_len: u16,
    /// `[L][A][Tg][Td]`, row-major.
    pub gov_to_dep: Vec<f32>,
    /// `[L][A][Td][Tg]`, row-major.
    pub dep_to_gov: Vec<f32>,
}

impl AttentionRecord {
    pub fn block_len(&self) -> usize {
        self.layers as usize * self.heads as usize * self.gov_len as usize * self.dep_len as usize
    }

    fn span(&self) -> usize {
        self.gov_len as usize * self.dep_len as usize
    }

    /// Shape and weight range checks.
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.gov_len == 0 || self.dep_len == 0 {
            return Err(Error::validation(format!(
                "record {}: zero dimension ({}x{}x{}x{})",
                self.instance_id, self.layers, self.heads, self.gov_len, self.dep_len
            )));
        }
        let n = self.block_len();
        for (name, block) in [("gov_to_dep", &self.gov_to_dep), ("dep_to_gov", &self.dep_to_gov)] {
            if block.len() != n {
                return Err(Error::validation(format!(
                    "record {}: {name} has {} weights, expected {n}",
                    self.instance_id,
                    block.len()
                )));
            }
            if let Some(w) = block
                .iter()
                .find(|w| !(-WEIGHT_SLACK..=1.0 + WEIGHT_SLACK).contains(*w))
            {
                return Err(Error::validation(format!(
                    "record {}: attention weight {w} outside [0, 1]",
                    self.instance_id
                )));
            }
        }
        Ok(())
    }

    fn head_block<'a>(&self, block: &'a [f32], layer: u16, head: u16) -> &'a [f32] {
        let start = (layer as usize * self.heads as usize + head as usize) * self.span();
        &block[start..start + self.span()]
    }

    /// Max weight of one head in the given direction(s).
    pub fn pool_head(&self, layer: u16, head: u16, mode: PoolMode) -> f64 {
        let max = |block: &[f32]| {
            self.head_block(block, layer, head)
                .iter()
                .fold(f32::NEG_INFINITY, |m, &w| m.max(w))
        };
        let v = match mode {
            PoolMode::GovToDep => max(&self.gov_to_dep),
            PoolMode::DepToGov => max(&self.dep_to_gov),
            PoolMode::MaxBoth => max(&self.gov_to_dep).max(max(&self.dep_to_gov)),
        };
        v as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PoolMode {
    #[default]
    GovToDep,
    DepToGov,
    MaxBoth,
}

impl PoolMode {
    pub const ALL: [PoolMode; 3] = [PoolMode::GovToDep, PoolMode::DepToGov, PoolMode::MaxBoth];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolMode::GovToDep => "GOV_TO_DEP",
            PoolMode::DepToGov => "DEP_TO_GOV",
            PoolMode::MaxBoth => "MAX_BOTH",
        }
    }
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "GOV_TO_DEP" => Ok(PoolMode::GovToDep),
            "DEP_TO_GOV" => Ok(PoolMode::DepToGov),
            "MAX_BOTH" => Ok(PoolMode::MaxBoth),
            _ => Err(Error::invalid(format!("unknown pooling mode {s:?}"))),
        }
    }
}

/// A set of (layer, head) pairs, 0-based, iterated layer-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadMask {
    layers: u16,
    heads: u16,
    selected: BTreeSet<(u16, u16)>,
    description: String,
}

impl HeadMask {
    pub fn full(layers: u16, heads: u16) -> Self {
        let selected = (0..layers).flat_map(|l| (0..heads).map(move |a| (l, a))).collect();
        Self {
            layers,
            heads,
            selected,
            description: "full".into(),
        }
    }

    /// All heads of the first `n` layers.
    pub fn first_n_layers(layers: u16, heads: u16, n: u16) -> Result<Self> {
        if n == 0 || n > layers {
            return Err(Error::invalid(format!("layer count {n} outside 1..={layers}")));
        }
        let selected = (0..n).flat_map(|l| (0..heads).map(move |a| (l, a))).collect();
        Ok(Self {
            layers,
            heads,
            selected,
            description: format!("first_n={n}"),
        })
    }

    pub fn from_heads(
        layers: u16,
        heads: u16,
        selected: impl IntoIterator<Item = (u16, u16)>,
        description: impl Into<String>,
    ) -> Result<Self> {
        let selected: BTreeSet<(u16, u16)> = selected.into_iter().collect();
        if selected.is_empty() {
            return Err(Error::invalid("empty head mask"));
        }
        if let Some(&(l, a)) = selected.iter().find(|&&(l, a)| l >= layers || a >= heads) {
            return Err(Error::invalid(format!(
                "head ({l}, {a}) outside a {layers}x{heads} model"
            )));
        }
        Ok(Self {
            layers,
            heads,
            selected,
            description: description.into(),
        })
    }

    pub fn complement(&self, description: impl Into<String>) -> Result<Self> {
        let full = Self::full(self.layers, self.heads);
        Self::from_heads(
            self.layers,
            self.heads,
            full.selected.difference(&self.selected).copied(),
            description,
        )
    }

    pub fn layers(&self) -> u16 {
        self.layers
    }

    pub fn heads(&self) -> u16 {
        self.heads
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn contains(&self, layer: u16, head: u16) -> bool {
        self.selected.contains(&(layer, head))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, u16)> + '_ {
        self.selected.iter().copied()
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    fn check_record(&self, rec: &AttentionRecord) -> Result<()> {
        if self.selected.is_empty() {
            return Err(Error::invalid("empty head mask"));
        }
        if rec.layers != self.layers || rec.heads != self.heads {
            return Err(Error::validation(format!(
                "record {} has {}x{} heads, mask expects {}x{}",
                rec.instance_id, rec.layers, rec.heads, self.layers, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub instance_id: String,
    pub values: Vec<f64>,
    /// Source (layer, head) of each value.
    pub head_index_map: Vec<(u16, u16)>,
}

/// Max-pools every masked head of one record.
pub fn pool(rec: &AttentionRecord, mask: &HeadMask, mode: PoolMode) -> Result<FeatureVector> {
    mask.check_record(rec)?;
    let head_index_map: Vec<(u16, u16)> = mask.iter().collect();
    let values = head_index_map
        .iter()
        .map(|&(l, a)| rec.pool_head(l, a, mode))
        .collect();
    Ok(FeatureVector {
        instance_id: rec.instance_id.clone(),
        values,
        head_index_map,
    })
}

pub fn pool_records(
    exec: Execution,
    records: &[AttentionRecord],
    mask: &HeadMask,
    mode: PoolMode,
) -> Result<Vec<FeatureVector>> {
    exec.try_map(records, |rec| pool(rec, mask, mode))
}

/// Full-mask features keyed by instance id; masks select columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    head_index_map: Vec<(u16, u16)>,
    columns: HashMap<(u16, u16), usize>,
    rows: HashMap<String, usize>,
    values: Array2<f64>,
}

impl FeatureTable {
    pub fn from_vectors(vectors: Vec<FeatureVector>) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::invalid("no feature vectors"));
        };
        let head_index_map = first.head_index_map.clone();
        let d = head_index_map.len();
        let mut values = Array2::zeros((vectors.len(), d));
        let mut rows = HashMap::with_capacity(vectors.len());
        for (i, v) in vectors.into_iter().enumerate() {
            if v.values.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    found: v.values.len(),
                });
            }
            if v.head_index_map != head_index_map {
                return Err(Error::validation(format!("feature row {} uses different heads", v.instance_id)));
            }
            if rows.insert(v.instance_id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate feature row {}", v.instance_id)));
            }
            values.row_mut(i).assign(&ndarray::ArrayView1::from(&v.values));
        }
        let columns = head_index_map.iter().enumerate().map(|(c, &h)| (h, c)).collect();
        Ok(Self {
            head_index_map,
            columns,
            rows,
            values,
        })
    }

    pub fn from_records(exec: Execution, records: &[AttentionRecord], mode: PoolMode) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::invalid("no attention records"));
        };
        let mask = HeadMask::full(first.layers, first.heads);
        Self::from_vectors(pool_records(exec, records, &mask, mode)?)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, instance_id: &str) -> bool {
        self.rows.contains_key(instance_id)
    }

    pub fn head_index_map(&self) -> &[(u16, u16)] {
        &self.head_index_map
    }

    /// `(layers, heads)` implied by the head map.
    pub fn shape(&self) -> (u16, u16) {
        let l = self.head_index_map.iter().map(|h| h.0 + 1).max().unwrap_or(0);
        let a = self.head_index_map.iter().map(|h| h.1 + 1).max().unwrap_or(0);
        (l, a)
    }

    /// Rows for `ids` restricted to the heads of `mask`, in mask order.
    pub fn select<S: AsRef<str>>(&self, ids: &[S], mask: &HeadMask) -> Result<Array2<f64>> {
        if mask.is_empty() {
            return Err(Error::invalid("empty head mask"));
        }
        let cols = mask
            .iter()
            .map(|h| {
                self.columns
                    .get(&h)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("head {h:?} not in feature table")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Array2::zeros((ids.len(), cols.len()));
        for (r, id) in ids.iter().enumerate() {
            let id = id.as_ref();
            let src = *self
                .rows
                .get(id)
                .ok_or_else(|| Error::validation(format!("no attention features for instance {id}")))?;
            for (c, &col) in cols.iter().enumerate() {
                out[[r, c]] = self.values[[src, col]];
            }
        }
        Ok(out)
    }
}

/// Streaming ATN1 writer.
pub struct AtnWriter<W: Write> {
    inner: W,
}

impl<W: Write> AtnWriter<W> {
    pub fn new(mut inner: W) -> Result<Self> {
        inner.write_all(MAGIC)?;
        inner.write_u32::<LittleEndian>(VERSION)?;
        Ok(Self { inner })
    }

    pub fn write_record(&mut self, rec: &AttentionRecord) -> Result<()> {
        rec.validate()?;
        let id = rec.instance_id.as_bytes();
        let w = &mut self.inner;
        w.write_u32::<LittleEndian>(id.len() as u32)?;
        w.write_all(id)?;
        for dim in [rec.layers, rec.heads, rec.gov_len, rec.dep_len] {
            w.write_u16::<LittleEndian>(dim)?;
        }
        for &x in rec.gov_to_dep.iter().chain(&rec.dep_to_gov) {
            w.write_f32::<LittleEndian>(x)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streaming ATN1 reader yielding validated records.
pub struct AtnReader<R: Read> {
    inner: R,
    offset: u64,
    done: bool,
}

const CHUNK: usize = 1 << 16;

impl<R: Read> AtnReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_full(&mut inner, &mut magic, 0, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Container {
                offset: 0,
                message: format!("bad magic {magic:?}"),
            });
        }
        let mut version = [0u8; 4];
        read_full(&mut inner, &mut version, 4, "version")?;
        let version = u32::from_le_bytes(version);
        if version != VERSION {
            return Err(Error::Container {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        Ok(Self {
            inner,
            offset: 8,
            done: false,
        })
    }

    fn bytes(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        read_full(&mut self.inner, buf, self.offset, what)?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(n.min(CHUNK));
        let mut buf = vec![0u8; 4 * n.min(CHUNK)];
        let mut left = n;
        while left > 0 {
            let k = left.min(CHUNK);
            self.bytes(&mut buf[..4 * k], what)?;
            out.extend(buf[..4 * k].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
            left -= k;
        }
        Ok(out)
    }

    fn next_record(&mut self) -> Result<Option<AttentionRecord>> {
        let start = self.offset;
        let mut len = [0u8; 4];
        let got = read_some(&mut self.inner, &mut len)?;
        if got == 0 {
            return Ok(None);
        }
        if got < 4 {
            return Err(Error::Container {
                offset: start,
                message: "truncated record header".into(),
            });
        }
        self.offset += 4;
        let id_len = u32::from_le_bytes(len) as usize;
        let mut id = Vec::new();
        (&mut self.inner).take(id_len as u64).read_to_end(&mut id)?;
        if id.len() < id_len {
            return Err(Error::Container {
                offset: self.offset + id.len() as u64,
                message: "truncated instance id".into(),
            });
        }
        self.offset += id_len as u64;
        let instance_id = String::from_utf8(id).map_err(|_| Error::Container {
            offset: start + 4,
            message: "instance id is not UTF-8".into(),
        })?;
        let mut dims = [0u8; 8];
        self.bytes(&mut dims, "record dimensions")?;
        let dim = |i: usize| u16::from_le_bytes([dims[2 * i], dims[2 * i + 1]]);
        let (layers, heads, gov_len, dep_len) = (dim(0), dim(1), dim(2), dim(3));
        let n = layers as usize * heads as usize * gov_len as usize * dep_len as usize;
        let gov_to_dep = self.floats(n, "gov_to_dep block")?;
        let dep_to_gov = self.floats(n, "dep_to_gov block")?;
        let rec = AttentionRecord {
            instance_id,
            layers,
            heads,
            gov_len,
            dep_len,
            gov_to_dep,
            dep_to_gov,
        };
        rec.validate()?;
        Ok(Some(rec))
    }
}

impl<R: Read> Iterator for AtnReader<R> {
    type Item = Result<AttentionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_some(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn read_full(r: &mut impl Read, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    let got = read_some(r, buf)?;
    if got < buf.len() {
        return Err(Error::Container {
            offset: offset + got as u64,
            message: format!("truncated {what}"),
        });
    }
    Ok(())
}

pub fn write_atn_file(path: impl AsRef<Path>, records: &[AttentionRecord]) -> Result<()> {
    let mut w = AtnWriter::new(BufWriter::new(File::create(path)?))?;
    for rec in records {
        w.write_record(rec)?;
    }
    w.finish()?;
    Ok(())
}

pub fn open_atn_file(path: impl AsRef<Path>) -> Result<AtnReader<BufReader<File>>> {
    AtnReader::new(BufReader::new(File::open(path)?))
}

pub fn read_atn_file(path: impl AsRef<Path>) -> Result<Vec<AttentionRecord>> {
    open_atn_file(path)?.collect()
}

pub fn to_bytes(records: &[AttentionRecord]) -> Result<Vec<u8>> {
    let mut w = AtnWriter::new(Vec::new())?;
    for rec in records {
        w.write_record(rec)?;
    }
    w.finish()
}

pub fn from_bytes(bytes: &[u8]) -> Result<Vec<AttentionRecord>> {
    AtnReader::new(bytes)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> AttentionRecord {
        // 2 layers, 2 heads, Tg = 1, Td = 2
        AttentionRecord {
            instance_id: "c:s1:1:3".into(),
            layers: 2,
            heads: 2,
            gov_len: 1,
            dep_len: 2,
            gov_to_dep: vec![0.1, 0.2, 0.3, 0.05, 0.5, 0.4, 0.0, 0.9],
            dep_to_gov: vec![0.6, 0.1, 0.0, 0.2, 0.3, 0.3, 1.0, 0.0],
        }
    }

    #[test]
    fn pooling_modes() {
        let rec = record();
        let mask = HeadMask::full(2, 2);
        let g = pool(&rec, &mask, PoolMode::GovToDep).unwrap();
        assert_eq!(g.values, [0.2f32, 0.3, 0.5, 0.9].map(f64::from));
        let d = pool(&rec, &mask, PoolMode::DepToGov).unwrap();
        assert_eq!(d.values, [0.6f32, 0.2, 0.3, 1.0].map(f64::from));
        let b = pool(&rec, &mask, PoolMode::MaxBoth).unwrap();
        assert_eq!(b.values, [0.6f32, 0.3, 0.5, 1.0].map(f64::from));
        assert_eq!(g.head_index_map, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn mask_sizes() {
        assert_eq!(HeadMask::full(12, 12).len(), 144);
        for n in 1..=12 {
            assert_eq!(HeadMask::first_n_layers(12, 12, n).unwrap().len(), 12 * n as usize);
        }
        assert!(HeadMask::first_n_layers(12, 12, 0).is_err());
        assert!(HeadMask::first_n_layers(12, 12, 13).is_err());
        assert!(HeadMask::from_heads(12, 12, [(12, 0)], "x").is_err());
        assert!(HeadMask::from_heads(12, 12, [], "x").is_err());
        let top = HeadMask::from_heads(12, 12, [(3, 4)], "top").unwrap();
        assert_eq!(top.complement("rest").unwrap().len(), 143);
    }

    #[test]
    fn mismatched_record_rejected() {
        let mask = HeadMask::full(12, 12);
        assert!(matches!(pool(&record(), &mask, PoolMode::GovToDep), Err(Error::Validation(_))));
    }

    #[test]
    fn container_round_trip() {
        let recs = vec![record(), AttentionRecord { instance_id: "ü".into(), ..record() }];
        let bytes = to_bytes(&recs).unwrap();
        assert_eq!(&bytes[..4], b"ATN1");
        assert_eq!(from_bytes(&bytes).unwrap(), recs);
        assert!(from_bytes(&to_bytes(&[]).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = to_bytes(&[record()]).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match from_bytes(cut) {
            Err(Error::Container { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(from_bytes(&bytes[..10]), Err(Error::Container { offset: 8, .. })));
    }

    #[test]
    fn bad_header() {
        assert!(matches!(from_bytes(b"ATN2\x01\0\0\0"), Err(Error::Container { offset: 0, .. })));
        assert!(matches!(from_bytes(b"ATN1\x02\0\0\0"), Err(Error::Container { offset: 4, .. })));
        assert!(matches!(from_bytes(b"AT"), Err(Error::Container { .. })));
    }

    #[test]
    fn out_of_range_weight_names_instance() {
        let mut rec = record();
        rec.gov_to_dep[2] = 1.5;
        let mut bytes = to_bytes(&[record()]).unwrap();
        // patch the third gov_to_dep weight in place
        let pos = 8 + 4 + rec.instance_id.len() + 8 + 2 * 4;
        bytes[pos..pos + 4].copy_from_slice(&1.5f32.to_le_bytes());
        match from_bytes(&bytes) {
            Err(Error::Validation(msg)) => assert!(msg.contains("c:s1:1:3"), "{msg}"),
            other => panic!("{other:?}"),
        }
        rec.gov_to_dep[2] = f32::NAN;
        assert!(rec.validate().is_err());
    }

    #[test]
    fn feature_table_selects_mask_columns() {
        let recs = vec![record(), AttentionRecord { instance_id: "b".into(), ..record() }];
        let table = FeatureTable::from_records(Execution::Sequential, &recs, PoolMode::GovToDep).unwrap();
        assert_eq!(table.shape(), (2, 2));
        let mask = HeadMask::first_n_layers(2, 2, 1).unwrap();
        let x = table.select(&["b", "c:s1:1:3"], &mask).unwrap();
        assert_eq!(x.shape(), &[2, 2]);
        assert_eq!(x[[0, 1]], 0.3f32 as f64);
        assert!(table.select(&["missing"], &mask).is_err());
    }
}
