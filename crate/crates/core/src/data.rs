//! Interaction logs: parsing, filtering, temporal block splits and the binary
//! block manifest.
//!
//! Dense ids are assigned in order of first appearance in the *time-sorted*
//! record stream. As a consequence the set of users (items) seen up to any
//! point in time is always a prefix `[0, n)`, which lets models grow their
//! tables by appending rows when a new block arrives.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw row before id densification. `time` is in seconds since epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteraction {
    pub user_raw: String,
    pub item_raw: String,
    pub time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub time: u64,
}

/// Bijection between external ids and dense ids `[0, n)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    /// Map whose raw ids are the decimal dense ids.
    pub fn identity(n: usize) -> Self {
        let mut m = IdMap::default();
        for i in 0..n {
            m.intern(&i.to_string());
        }
        m
    }

    fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.index.get(raw) {
            return id;
        }
        let id = self.raw.len() as u32;
        self.raw.push(raw.to_owned());
        self.index.insert(raw.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn dense(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, dense: u32) -> Option<&str> {
        self.raw.get(dense as usize).map(String::as_str)
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw
    }
}

/// Time-ordered interactions with dense user and item ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLog {
    records: Vec<Interaction>,
    n_users: usize,
    n_items: usize,
    users: IdMap,
    items: IdMap,
}

impl InteractionLog {
    /// Builds a log from raw rows: stable sort by time, then dense ids in order
    /// of first appearance.
    pub fn from_raw(mut raw: Vec<RawInteraction>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::NoRecords);
        }
        raw.sort_by_key(|r| r.time);
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        let records = raw
            .iter()
            .map(|r| Interaction {
                user: users.intern(&r.user_raw),
                item: items.intern(&r.item_raw),
                time: r.time,
            })
            .collect();
        Ok(Self { records, n_users: users.len(), n_items: items.len(), users, items })
    }

    /// Builds a log from already-dense records. Records are stably sorted by
    /// time and ids re-densified; raw ids are the input dense ids.
    pub fn from_records(records: Vec<Interaction>) -> Result<Self> {
        Self::from_raw(
            records
                .into_iter()
                .map(|r| RawInteraction {
                    user_raw: r.user.to_string(),
                    item_raw: r.item.to_string(),
                    time: r.time,
                })
                .collect(),
        )
    }

    /// Wraps records that are already sorted and densified (e.g. read back
    /// from a manifest). Id maps are the identity.
    pub fn from_dense_sorted(records: Vec<Interaction>, n_users: usize, n_items: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        for r in &records {
            if r.user as usize >= n_users {
                return Err(Error::IdOutOfRange { side: "user", id: r.user, n: n_users });
            }
            if r.item as usize >= n_items {
                return Err(Error::IdOutOfRange { side: "item", id: r.item, n: n_items });
            }
        }
        if records.windows(2).any(|w| w[0].time > w[1].time) {
            return Err(Error::InvalidArgument("records are not sorted by time".into()));
        }
        Ok(Self {
            records,
            n_users,
            n_items,
            users: IdMap::identity(n_users),
            items: IdMap::identity(n_items),
        })
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.users
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.items
    }

    /// Fraction of the user × item matrix that is observed.
    pub fn density(&self) -> f64 {
        self.records.len() as f64 / (self.n_users as f64 * self.n_items as f64)
    }

    fn rebuild(&self, mut keep: impl FnMut(&Interaction) -> bool) -> Self {
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        let mut records = Vec::new();
        for r in self.records.iter().filter(|r| keep(r)) {
            let u = users.intern(&self.users.raw[r.user as usize]);
            let i = items.intern(&self.items.raw[r.item as usize]);
            records.push(Interaction { user: u, item: i, time: r.time });
        }
        Self { records, n_users: users.len(), n_items: items.len(), users, items }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    Tsv,
    Csv,
}

impl Delimiter {
    fn byte(self) -> char {
        match self {
            Delimiter::Tsv => '\t',
            Delimiter::Csv => ',',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeFormat {
    /// Integer count of `time_divisor` units since epoch (1 = seconds, 1000 = milliseconds).
    Epoch,
    /// RFC 3339 timestamps such as `2010-10-19T23:55:27Z`.
    Rfc3339,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub format: Delimiter,
    pub user_col: usize,
    pub item_col: usize,
    pub time_col: usize,
    #[serde(default)]
    pub skip_header: bool,
    #[serde(default = "default_time_format")]
    pub time_format: TimeFormat,
    #[serde(default = "default_divisor")]
    pub time_divisor: u64,
}

fn default_time_format() -> TimeFormat {
    TimeFormat::Epoch
}

fn default_divisor() -> u64 {
    1
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            format: Delimiter::Tsv,
            user_col: 0,
            item_col: 1,
            time_col: 2,
            skip_header: false,
            time_format: TimeFormat::Epoch,
            time_divisor: 1,
        }
    }
}

fn parse_time(field: &str, opts: &ParseOptions) -> std::result::Result<u64, String> {
    match opts.time_format {
        TimeFormat::Epoch => {
            let v: i64 = field.parse().map_err(|_| format!("non-numeric timestamp {field:?}"))?;
            if v < 0 {
                return Err(format!("negative timestamp {v}"));
            }
            Ok(v as u64 / opts.time_divisor.max(1))
        }
        TimeFormat::Rfc3339 => {
            let t = chrono::DateTime::parse_from_rfc3339(field)
                .map_err(|e| format!("bad timestamp {field:?}: {e}"))?
                .timestamp();
            u64::try_from(t).map_err(|_| format!("negative timestamp {t}"))
        }
    }
}

/// Reads delimited text into raw rows. Blank lines are skipped.
pub fn read_raw(path: &Path, opts: &ParseOptions) -> Result<Vec<RawInteraction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let need = opts.user_col.max(opts.item_col).max(opts.time_col) + 1;
    let sep = opts.format.byte();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if idx == 0 && opts.skip_header {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
        let bad = |msg: String| Error::Parse { path: path.to_owned(), line: lineno, msg };
        if fields.len() < need.max(3) {
            return Err(bad(format!("expected at least {} columns, found {}", need.max(3), fields.len())));
        }
        let time = parse_time(fields[opts.time_col], opts).map_err(bad)?;
        out.push(RawInteraction {
            user_raw: fields[opts.user_col].to_owned(),
            item_raw: fields[opts.item_col].to_owned(),
            time,
        });
    }
    Ok(out)
}

/// Parses an interaction file into a time-sorted log with dense ids.
pub fn parse_interactions(path: &Path, opts: &ParseOptions) -> Result<InteractionLog> {
    InteractionLog::from_raw(read_raw(path, opts)?)
}

/// Optional deduplication (earliest record per pair kept) followed by
/// iterative removal of users and items with fewer than `min_degree` records
/// until nothing changes. Ids are re-densified.
pub fn preprocess(log: &InteractionLog, dedup: bool, min_degree: usize) -> Result<InteractionLog> {
    let mut keep = vec![true; log.records.len()];
    if dedup {
        let mut seen = HashSet::with_capacity(log.records.len());
        for (k, r) in log.records.iter().enumerate() {
            if !seen.insert((r.user, r.item)) {
                keep[k] = false;
            }
        }
    }
    if min_degree > 0 {
        loop {
            let mut du = vec![0usize; log.n_users];
            let mut di = vec![0usize; log.n_items];
            for (r, _) in log.records.iter().zip(&keep).filter(|(_, &k)| k) {
                du[r.user as usize] += 1;
                di[r.item as usize] += 1;
            }
            let mut changed = false;
            for (r, k) in log.records.iter().zip(keep.iter_mut()) {
                if *k && (du[r.user as usize] < min_degree || di[r.item as usize] < min_degree) {
                    *k = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
    let mut k = keep.iter();
    let out = log.rebuild(|_| *k.next().unwrap());
    if out.records.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    Ok(out)
}

/// A base block followed by `n_inc` incremental blocks, contiguous in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSplit {
    log: InteractionLog,
    /// `[0, end_base, end_inc1, ..., len]`
    boundaries: Vec<usize>,
}

impl BlockSplit {
    pub fn from_parts(log: InteractionLog, boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 3 || boundaries[0] != 0 || *boundaries.last().unwrap() != log.len() {
            return Err(Error::InvalidArgument(format!("bad block boundaries {boundaries:?}")));
        }
        for (k, w) in boundaries.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::EmptyBlock(k));
            }
        }
        Ok(Self { log, boundaries })
    }

    pub fn log(&self) -> &InteractionLog {
        &self.log
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn n_inc(&self) -> usize {
        self.boundaries.len() - 2
    }

    /// Block `0` is the base block; `1..=n_inc` are incremental blocks.
    pub fn block(&self, k: usize) -> &[Interaction] {
        &self.log.records[self.boundaries[k]..self.boundaries[k + 1]]
    }

    pub fn base(&self) -> &[Interaction] {
        self.block(0)
    }

    /// Incremental block `k` counted from 1.
    pub fn inc(&self, k: usize) -> &[Interaction] {
        assert!(k >= 1 && k <= self.n_inc(), "incremental block {k} out of range");
        self.block(k)
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Number of distinct users and items appearing in blocks `0..=k`.
    /// Thanks to time-ordered id assignment this is a prefix of the id space.
    pub fn universe_through(&self, k: usize) -> (usize, usize) {
        let recs = &self.log.records[..self.boundaries[k + 1]];
        let nu = recs.iter().map(|r| r.user as usize + 1).max().unwrap_or(0);
        let ni = recs.iter().map(|r| r.item as usize + 1).max().unwrap_or(0);
        (nu, ni)
    }
}

/// Splits by record count: the first `floor(base_frac · n)` records form the
/// base block and the remainder is cut into `n_inc` contiguous slices whose
/// sizes differ by at most one (larger slices first).
pub fn temporal_split(log: InteractionLog, base_frac: f64, n_inc: usize) -> Result<BlockSplit> {
    if !(base_frac > 0.0 && base_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("base_frac {base_frac} not in (0, 1)")));
    }
    if n_inc == 0 {
        return Err(Error::InvalidArgument("n_inc must be at least 1".into()));
    }
    if log.is_empty() {
        return Err(Error::NoRecords);
    }
    let n = log.len();
    // The epsilon absorbs representation error such as 0.7 * 100 = 69.999...
    let base = ((base_frac * n as f64) + 1e-9).floor() as usize;
    let rest = n - base;
    let mut boundaries = vec![0, base];
    let mut end = base;
    for k in 0..n_inc {
        end += rest / n_inc + usize::from(k < rest % n_inc);
        boundaries.push(end);
    }
    BlockSplit::from_parts(log, boundaries)
}

const MANIFEST_MAGIC: &[u8; 8] = b"INCRBLK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub n_users: usize,
    pub n_items: usize,
    pub n_records: usize,
    pub boundaries: Vec<usize>,
    pub block_sizes: Vec<usize>,
    /// Free-form provenance (e.g. the effective preprocessing config).
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Writes the block manifest: 8-byte magic, little-endian u64 header length,
/// the JSON header, then `(user, item, time)` as little-endian u32 triples.
pub fn write_manifest(path: &Path, split: &BlockSplit, meta: serde_json::Value) -> Result<()> {
    let log = split.log();
    let header = ManifestHeader {
        n_users: log.n_users(),
        n_items: log.n_items(),
        n_records: log.len(),
        boundaries: split.boundaries.clone(),
        block_sizes: split.block_sizes(),
        meta,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MANIFEST_MAGIC)?;
    put(&(json.len() as u64).to_le_bytes())?;
    put(&json)?;
    for r in log.records() {
        let t = u32::try_from(r.time)
            .map_err(|_| Error::format(path, format!("timestamp {} does not fit in 32 bits", r.time)))?;
        put(&r.user.to_le_bytes())?;
        put(&r.item.to_le_bytes())?;
        put(&t.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<(ManifestHeader, BlockSplit)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MANIFEST_MAGIC {
        return Err(Error::format(path, "missing block manifest magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16 + hlen;
    if bytes.len() < body_start {
        return Err(Error::format(path, "truncated header"));
    }
    let header: ManifestHeader =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| Error::format(path, e.to_string()))?;
    let body = &bytes[body_start..];
    if body.len() != header.n_records * 12 {
        return Err(Error::format(
            path,
            format!("expected {} record bytes, found {}", header.n_records * 12, body.len()),
        ));
    }
    let word = |c: &[u8]| u32::from_le_bytes(c.try_into().unwrap());
    let records = body
        .chunks_exact(12)
        .map(|c| Interaction { user: word(&c[0..4]), item: word(&c[4..8]), time: word(&c[8..12]) as u64 })
        .collect();
    let log = InteractionLog::from_dense_sorted(records, header.n_users, header.n_items)?;
    let split = BlockSplit::from_parts(log, header.boundaries.clone())?;
    Ok((header, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(u: &str, i: &str, t: u64) -> RawInteraction {
        RawInteraction { user_raw: u.into(), item_raw: i.into(), time: t }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parse_sorts_by_time() {
        let f = write_tmp("a\tX\t5\nb\tY\t1\na\tY\t3\n");
        let log = parse_interactions(f.path(), &ParseOptions::default()).unwrap();
        let pairs: Vec<_> = log
            .records()
            .iter()
            .map(|r| (log.user_ids().raw(r.user).unwrap(), log.item_ids().raw(r.item).unwrap(), r.time))
            .collect();
        assert_eq!(pairs, vec![("b", "Y", 1), ("a", "Y", 3), ("a", "X", 5)]);
        assert_eq!((log.n_users(), log.n_items()), (2, 2));
    }

    #[test]
    fn parse_errors() {
        let f = write_tmp("");
        assert!(matches!(parse_interactions(f.path(), &ParseOptions::default()), Err(Error::NoRecords)));
        let f = write_tmp("a\tX\t5\nb\tY\n");
        match parse_interactions(f.path(), &ParseOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("a\tX\tyesterday\n");
        let err = parse_interactions(f.path(), &ParseOptions::default()).unwrap_err();
        assert!(err.to_string().contains("non-numeric timestamp"), "{err}");
        let missing = Path::new("/definitely/not/here.tsv");
        assert!(matches!(parse_interactions(missing, &ParseOptions::default()), Err(Error::Io { .. })));
    }

    #[test]
    fn parse_csv_with_header_and_rfc3339() {
        let f = write_tmp("user,when,x,loc\n7,2010-10-19T23:55:27Z,0,l1\n8,2010-10-18T00:00:00Z,0,l2\n");
        let opts = ParseOptions {
            format: Delimiter::Csv,
            user_col: 0,
            item_col: 3,
            time_col: 1,
            skip_header: true,
            time_format: TimeFormat::Rfc3339,
            time_divisor: 1,
        };
        let log = parse_interactions(f.path(), &opts).unwrap();
        assert_eq!(log.user_ids().raw(0), Some("8"));
        assert_eq!(log.records()[1].time, 1_287_532_527);
    }

    #[test]
    fn millisecond_timestamps_are_scaled() {
        let f = write_tmp("1\t2\t3\t1000000\n");
        let opts = ParseOptions { time_col: 3, time_divisor: 1000, ..ParseOptions::default() };
        assert_eq!(parse_interactions(f.path(), &opts).unwrap().records()[0].time, 1000);
    }

    #[test]
    fn dedup_keeps_earliest() {
        let log = InteractionLog::from_raw(vec![raw("u", "i", 7), raw("u", "i", 1)]).unwrap();
        let out = preprocess(&log, true, 0).unwrap();
        assert_eq!(out.records(), &[Interaction { user: 0, item: 0, time: 1 }]);
    }

    #[test]
    fn no_filter_is_identity() {
        let log = InteractionLog::from_raw(vec![raw("u", "i", 7), raw("u", "i", 1), raw("v", "j", 3)]).unwrap();
        assert_eq!(preprocess(&log, false, 0).unwrap(), log);
    }

    #[test]
    fn min_degree_runs_to_fixpoint() {
        // u0 has two items; dropping u1 (one record) leaves item b with a
        // single record, which must cascade.
        let log = InteractionLog::from_raw(vec![
            raw("u0", "a", 1),
            raw("u0", "b", 2),
            raw("u2", "a", 3),
            raw("u2", "c", 4),
            raw("u1", "b", 5),
            raw("u3", "c", 6),
            raw("u3", "a", 7),
        ])
        .unwrap();
        let out = preprocess(&log, false, 2).unwrap();
        // After dropping u1: b has degree 1 -> dropped; u0 then has degree 1 -> dropped.
        for r in out.records() {
            assert_ne!(out.user_ids().raw(r.user), Some("u0"));
            assert_ne!(out.item_ids().raw(r.item), Some("b"));
        }
        assert_eq!(out.len(), 4);
        assert!(matches!(preprocess(&log, false, 50), Err(Error::EmptyAfterFiltering)));
    }

    #[test]
    fn split_arithmetic() {
        let recs = (0..100).map(|t| raw(&format!("u{}", t % 7), &format!("i{}", t % 11), t)).collect();
        let split = temporal_split(InteractionLog::from_raw(recs).unwrap(), 0.7, 5).unwrap();
        assert_eq!(split.block_sizes(), vec![70, 6, 6, 6, 6, 6]);
        // Table-scale arithmetic for the two public layouts.
        let sizes = |n: usize, frac: f64, k: usize| {
            let recs = (0..n as u64).map(|t| raw("u", "i", t)).collect();
            temporal_split(InteractionLog::from_raw(recs).unwrap(), frac, k).unwrap().block_sizes()
        };
        assert_eq!(sizes(186_474, 0.6, 4), vec![111_884, 18_648, 18_648, 18_647, 18_647]);
        assert_eq!(sizes(1_027_464, 0.7, 5)[1..], [61_648; 5]);
    }

    #[test]
    fn split_rejects_empty_blocks() {
        let recs = (0..4).map(|t| raw("u", "i", t)).collect();
        let log = InteractionLog::from_raw(recs).unwrap();
        assert!(matches!(temporal_split(log, 0.5, 3), Err(Error::EmptyBlock(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let recs = (0..40).map(|t| raw(&format!("u{}", t % 5), &format!("i{}", t % 9), t * 3)).collect();
        let split = temporal_split(InteractionLog::from_raw(recs).unwrap(), 0.6, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blocks.bin");
        write_manifest(&path, &split, serde_json::json!({"source": "test"})).unwrap();
        let (header, back) = read_manifest(&path).unwrap();
        assert_eq!(header.block_sizes, split.block_sizes());
        assert_eq!(back.log().records(), split.log().records());
        assert_eq!(back.boundaries(), split.boundaries());
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn universe_is_prefix() {
        let log = InteractionLog::from_raw(vec![raw("b", "y", 9), raw("a", "x", 1), raw("c", "x", 5)]).unwrap();
        let split = BlockSplit::from_parts(log, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(split.universe_through(0), (1, 1));
        assert_eq!(split.universe_through(2), (3, 2));
    }

    fn arb_raw() -> impl Strategy<Value = Vec<RawInteraction>> {
        prop::collection::vec((0u8..12, 0u8..9, 0u64..50), 1..120).prop_map(|v| {
            v.into_iter().map(|(u, i, t)| raw(&format!("u{u}"), &format!("i{i}"), t)).collect()
        })
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(rows in arb_raw(), dedup in any::<bool>(), min_deg in 0usize..4) {
            let log = InteractionLog::from_raw(rows).unwrap();
            if let Ok(once) = preprocess(&log, dedup, min_deg) {
                let twice = preprocess(&once, dedup, min_deg).unwrap();
                prop_assert_eq!(&once, &twice);
                let max_u = once.records().iter().map(|r| r.user).max().unwrap() as usize;
                let max_i = once.records().iter().map(|r| r.item).max().unwrap() as usize;
                prop_assert_eq!(max_u + 1, once.n_users());
                prop_assert_eq!(max_i + 1, once.n_items());
            }
        }

        #[test]
        fn split_partitions_in_order(rows in arb_raw(), frac in 0.05f64..0.95, n_inc in 1usize..5) {
            let log = InteractionLog::from_raw(rows).unwrap();
            if let Ok(split) = temporal_split(log.clone(), frac, n_inc) {
                let joined: Vec<_> = (0..=n_inc).flat_map(|k| split.block(k).iter().copied()).collect();
                prop_assert_eq!(joined.as_slice(), log.records());
                let sizes = split.block_sizes();
                let inc = &sizes[1..];
                prop_assert!(inc.iter().max().unwrap() - inc.iter().min().unwrap() <= 1);
                prop_assert!(log.records().windows(2).all(|w| w[0].time <= w[1].time));
            }
        }
    }
}
