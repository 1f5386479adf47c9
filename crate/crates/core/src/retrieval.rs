//! Sign binarization, bit-packed code storage and Hamming-ranking metrics.
//!
//! Bit `k` of a code lives in word `k / 64` at position `k % 64`; `+1` maps
//! to a set bit and `-1` to a cleared one. Padding bits past `K` are zero.
//!
//! Code database format (`PHCB`): magic, `u32` n, `u32` K, an id table
//! (`u16` length + UTF-8 bytes per item), a label table (`u16` count + `u32`
//! ids per item), then `n * ceil(K/64)` little-endian `u64` words.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::bytes::{put_label_list, put_short_string, put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::graph::labels_intersect;
use crate::loss::CodeBatch;

pub const CODES_MAGIC: &[u8; 4] = b"PHCB";

/// `sgn(x) = 1` if `x > 0`, otherwise `-1`.
pub fn sgn(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else {
        -1
    }
}

/// Row-major matrix of `{-1, +1}` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignCodes {
    rows: usize,
    bits: usize,
    signs: Vec<i8>,
}

impl SignCodes {
    pub fn new(rows: usize, bits: usize, signs: Vec<i8>) -> Result<Self> {
        if signs.len() != rows * bits {
            return Err(Error::DimensionMismatch {
                expected: rows * bits,
                found: signs.len(),
            });
        }
        if let Some(v) = signs.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(format!("sign code entry {v} is not +-1")));
        }
        Ok(Self { rows, bits, signs })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.signs[r * self.bits..(r + 1) * self.bits]
    }
}

pub fn binarize(batch: &CodeBatch) -> SignCodes {
    SignCodes {
        rows: batch.rows(),
        bits: batch.bits(),
        signs: batch.values().iter().map(|&v| sgn(v)).collect(),
    }
}

pub fn words_per_code(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Borrowed view of one packed code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeRef<'a> {
    pub bits: usize,
    pub words: &'a [u64],
}

/// Packs one `+-1` row into words.
pub fn pack_row(signs: &[i8]) -> Vec<u64> {
    let mut words = vec![0u64; words_per_code(signs.len())];
    for (k, &s) in signs.iter().enumerate() {
        if s > 0 {
            words[k / 64] |= 1u64 << (k % 64);
        }
    }
    words
}

fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

pub fn hamming(a: CodeRef<'_>, b: CodeRef<'_>) -> Result<u32> {
    if a.bits != b.bits || a.words.len() != b.words.len() {
        return Err(Error::DimensionMismatch {
            expected: a.bits,
            found: b.bits,
        });
    }
    Ok(hamming_words(a.words, b.words))
}

/// Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    n: usize,
    bits: usize,
    words_per_code: usize,
    data: Vec<u64>,
    ids: Vec<String>,
    labels: Vec<Vec<u32>>,
}

impl PackedCodes {
    pub fn pack(codes: &SignCodes, ids: Vec<String>, labels: Vec<Vec<u32>>) -> Result<Self> {
        if ids.len() != codes.rows || labels.len() != codes.rows {
            return Err(Error::DimensionMismatch {
                expected: codes.rows,
                found: ids.len().min(labels.len()),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate id {dup}")));
        }
        let wpc = words_per_code(codes.bits);
        let mut data = Vec::with_capacity(codes.rows * wpc);
        for r in 0..codes.rows {
            data.extend(pack_row(codes.row(r)));
        }
        let labels = labels
            .into_iter()
            .map(|mut l| {
                l.sort_unstable();
                l.dedup();
                l
            })
            .collect();
        Ok(Self {
            n: codes.rows,
            bits: codes.bits,
            words_per_code: wpc,
            data,
            ids,
            labels,
        })
    }

    pub fn unpack(&self) -> SignCodes {
        let mut signs = Vec::with_capacity(self.n * self.bits);
        for i in 0..self.n {
            let w = self.words(i);
            for k in 0..self.bits {
                signs.push(if w[k / 64] >> (k % 64) & 1 == 1 { 1 } else { -1 });
            }
        }
        SignCodes {
            rows: self.n,
            bits: self.bits,
            signs,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_code(&self) -> usize {
        self.words_per_code
    }

    pub fn words(&self, i: usize) -> &[u64] {
        &self.data[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    pub fn code(&self, i: usize) -> CodeRef<'_> {
        CodeRef {
            bits: self.bits,
            words: self.words(i),
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self, i: usize) -> &[u32] {
        &self.labels[i]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 8 + self.n * 16);
        out.extend_from_slice(CODES_MAGIC);
        put_u32(&mut out, self.n as u32);
        put_u32(&mut out, self.bits as u32);
        for id in &self.ids {
            put_short_string(&mut out, id)?;
        }
        for l in &self.labels {
            put_label_list(&mut out, l)?;
        }
        for w in &self.data {
            out.extend_from_slice(&w.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CODES_MAGIC)?;
        let n = r.u32("code count")? as usize;
        let bits_offset = r.offset();
        let bits = r.u32("code bits")? as usize;
        if bits == 0 {
            return Err(Error::Format {
                offset: bits_offset,
                message: "code bits must be >= 1".into(),
            });
        }
        let cap = n.min(1 << 20);
        let mut ids = Vec::with_capacity(cap);
        let mut seen = HashSet::with_capacity(cap);
        for _ in 0..n {
            let at = r.offset();
            let id = r.short_string("item id")?;
            if !seen.insert(id.clone()) {
                return Err(Error::Format {
                    offset: at,
                    message: format!("duplicate id {id}"),
                });
            }
            ids.push(id);
        }
        let labels = (0..n)
            .map(|_| r.label_list("label list"))
            .collect::<Result<Vec<_>>>()?;
        let wpc = words_per_code(bits);
        let pad_mask = if bits.is_multiple_of(64) {
            0
        } else {
            !0u64 << (bits % 64)
        };
        let mut data = Vec::with_capacity(cap * wpc);
        for _ in 0..n {
            for w in 0..wpc {
                let at = r.offset();
                let word = r.u64("code word")?;
                if w == wpc - 1 && word & pad_mask != 0 {
                    return Err(Error::Format {
                        offset: at,
                        message: "padding bits beyond K are set".into(),
                    });
                }
                data.push(word);
            }
        }
        r.finish()?;
        Ok(Self {
            n,
            bits,
            words_per_code: wpc,
            data,
            ids,
            labels,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Database indices by ascending Hamming distance, ties by index.
pub fn rank(query: CodeRef<'_>, db: &PackedCodes) -> Result<Vec<usize>> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if query.bits != db.bits {
        return Err(Error::DimensionMismatch {
            expected: db.bits,
            found: query.bits,
        });
    }
    let dists: Vec<u32> = (0..db.n).map(|i| hamming_words(query.words, db.words(i))).collect();
    Ok(bucket_order(&dists, db.bits))
}

/// Stable counting sort of indices by distance.
fn bucket_order(dists: &[u32], bits: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bits + 2];
    for &d in dists {
        counts[d as usize + 1] += 1;
    }
    for k in 1..counts.len() {
        counts[k] += counts[k - 1];
    }
    let mut out = vec![0usize; dists.len()];
    for (i, &d) in dists.iter().enumerate() {
        let slot = &mut counts[d as usize];
        out[*slot] = i;
        *slot += 1;
    }
    out
}

/// Average precision over the first `cutoff` ranked items, normalized by
/// `min(total relevant, cutoff)`. Zero when nothing relevant is retrieved.
pub fn average_precision(ranking: &[usize], relevant: &[bool], cutoff: usize) -> f64 {
    let total = ranking.iter().filter(|&&i| relevant[i]).count();
    let norm = total.min(cutoff);
    if norm == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in ranking.iter().take(cutoff).enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / norm as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// MAP cutoff.
    pub map_at: usize,
    /// Hamming radii at which the PR curve is sampled.
    pub pr_radii: Vec<u32>,
    /// Ranking depths for P@N.
    pub top_n: Vec<usize>,
    /// Drop database items whose id equals the query id.
    pub exclude_self: bool,
}

impl EvalOptions {
    /// Radii `0..=bits` and a standard depth grid.
    pub fn for_bits(bits: usize, map_at: usize) -> Self {
        Self {
            map_at,
            pr_radii: (0..=bits as u32).collect(),
            top_n: vec![1, 5, 10, 20, 50, 100, 200, 500, 1000],
            exclude_self: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub radius: u32,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionAtN {
    pub n: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub queries: usize,
    pub database: usize,
    pub bits: usize,
    pub map_at: usize,
    pub map_at_k: f64,
    pub p_at_h2: f64,
    pub pr_curve: Vec<PrPoint>,
    pub p_at_n: Vec<PrecisionAtN>,
}

impl RetrievalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_pr_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "radius,recall,precision")?;
        for p in &self.pr_curve {
            writeln!(out, "{},{},{}", p.radius, p.recall, p.precision)?;
        }
        Ok(())
    }

    pub fn write_p_at_n_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,precision")?;
        for p in &self.p_at_n {
            writeln!(out, "{},{}", p.n, p.precision)?;
        }
        Ok(())
    }
}

struct QueryResult {
    ap: f64,
    p_h2: f64,
    pr: Vec<(f64, f64)>,
    p_at_n: Vec<f64>,
}

/// Database items, optionally excluding the query itself (matched by id).
fn candidates(query_id: &str, db_ids: &[String], exclude_self: bool) -> Vec<usize> {
    (0..db_ids.len())
        .filter(|&i| !exclude_self || db_ids[i] != query_id)
        .collect()
}

fn evaluate_query(
    q: usize,
    queries: &PackedCodes,
    db: &PackedCodes,
    radii: &[u32],
    opts: &EvalOptions,
) -> QueryResult {
    let cand = candidates(&queries.ids[q], &db.ids, opts.exclude_self);
    let qw = queries.words(q);
    let dists: Vec<u32> = cand.iter().map(|&i| hamming_words(qw, db.words(i))).collect();
    let relevant: Vec<bool> = cand
        .iter()
        .map(|&i| labels_intersect(&queries.labels[q], &db.labels[i]))
        .collect();
    let order = bucket_order(&dists, db.bits);
    let ap = average_precision(&order, &relevant, opts.map_at);
    let total_rel = relevant.iter().filter(|&&r| r).count();

    // cumulative retrieved / relevant counts per radius
    let mut ball = vec![(0usize, 0usize); db.bits + 1];
    for (&d, &r) in dists.iter().zip(&relevant) {
        let e = &mut ball[d as usize];
        e.0 += 1;
        e.1 += usize::from(r);
    }
    for k in 1..ball.len() {
        ball[k].0 += ball[k - 1].0;
        ball[k].1 += ball[k - 1].1;
    }
    let at_radius = |r: u32| ball[(r as usize).min(db.bits)];
    let precision = |(got, hit): (usize, usize)| if got == 0 { 0.0 } else { hit as f64 / got as f64 };

    let p_h2 = precision(at_radius(2));
    let pr = radii
        .iter()
        .map(|&r| {
            let c = at_radius(r);
            let recall = if total_rel == 0 { 0.0 } else { c.1 as f64 / total_rel as f64 };
            (recall, precision(c))
        })
        .collect();
    let p_at_n = opts
        .top_n
        .iter()
        .map(|&n| {
            let depth = n.min(order.len());
            if depth == 0 {
                return 0.0;
            }
            order[..depth].iter().filter(|&&i| relevant[i]).count() as f64 / depth as f64
        })
        .collect();
    QueryResult {
        ap,
        p_h2,
        pr,
        p_at_n,
    }
}

/// Hamming-ranking evaluation. With `exclude_self`, a query whose id also
/// appears in the database is left out of its own ranking. Per-query precision inside a
/// Hamming ball with no items counts as 0.
pub fn evaluate(
    queries: &PackedCodes,
    db: &PackedCodes,
    opts: &EvalOptions,
) -> Result<RetrievalReport> {
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if queries.bits != db.bits {
        return Err(Error::DimensionMismatch {
            expected: db.bits,
            found: queries.bits,
        });
    }
    if opts.map_at == 0 {
        return Err(Error::InvalidArgument("MAP cutoff must be >= 1".into()));
    }
    let mut radii = opts.pr_radii.clone();
    radii.sort_unstable();
    radii.dedup();

    let results: Vec<QueryResult> = (0..queries.n)
        .into_par_iter()
        .map(|q| evaluate_query(q, queries, db, &radii, opts))
        .collect();

    let nq = results.len() as f64;
    let mean = |f: &dyn Fn(&QueryResult) -> f64| results.iter().map(f).sum::<f64>() / nq;
    let pr_curve = radii
        .iter()
        .enumerate()
        .map(|(k, &radius)| PrPoint {
            radius,
            recall: mean(&|r| r.pr[k].0),
            precision: mean(&|r| r.pr[k].1),
        })
        .collect();
    let p_at_n = opts
        .top_n
        .iter()
        .enumerate()
        .map(|(k, &n)| PrecisionAtN {
            n,
            precision: mean(&|r| r.p_at_n[k]),
        })
        .collect();
    Ok(RetrievalReport {
        queries: queries.n,
        database: db.n,
        bits: db.bits,
        map_at: opts.map_at,
        map_at_k: mean(&|r| r.ap),
        p_at_h2: mean(&|r| r.p_h2),
        pr_curve,
        p_at_n,
    })
}

/// Continuous codes with the metadata needed for relevance.
#[derive(Debug, Clone)]
pub struct RealCodes<'a> {
    pub codes: &'a CodeBatch,
    pub ids: &'a [String],
    pub labels: &'a [Vec<u32>],
}

/// MAP@`cutoff` when ranking by descending inner product of continuous codes
/// (ties by index). Used to measure what binarization costs.
pub fn continuous_map(queries: &RealCodes<'_>, db: &RealCodes<'_>, cutoff: usize) -> Result<f64> {
    if queries.codes.rows() == 0 {
        return Err(Error::EmptyQuerySet);
    }
    if db.codes.rows() == 0 {
        return Err(Error::EmptyDatabase);
    }
    if queries.codes.bits() != db.codes.bits() {
        return Err(Error::DimensionMismatch {
            expected: db.codes.bits(),
            found: queries.codes.bits(),
        });
    }
    let aps: Vec<f64> = (0..queries.codes.rows())
        .into_par_iter()
        .map(|q| {
            let cand = candidates(&queries.ids[q], db.ids, true);
            let qv = queries.codes.row(q);
            let scores: Vec<f64> = cand
                .iter()
                .map(|&i| qv.iter().zip(db.codes.row(i)).map(|(a, b)| a * b).sum())
                .collect();
            let relevant: Vec<bool> = cand
                .iter()
                .map(|&i| labels_intersect(&queries.labels[q], &db.labels[i]))
                .collect();
            let mut order: Vec<usize> = (0..cand.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            average_precision(&order, &relevant, cutoff)
        })
        .collect();
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn packed(rows: &[Vec<i8>], labels: &[Vec<u32>]) -> PackedCodes {
        let bits = rows[0].len();
        let codes = SignCodes::new(rows.len(), bits, rows.concat()).unwrap();
        let ids = (0..rows.len()).map(|i| format!("d{i}")).collect();
        PackedCodes::pack(&codes, ids, labels.to_vec()).unwrap()
    }

    #[test]
    fn binarize_sign_convention() {
        let b = CodeBatch::from_rows(&[vec![0.3, -0.2, 0.0], vec![0.1, 0.5, 1.0]]).unwrap();
        let s = binarize(&b);
        assert_eq!(s.row(0), &[1, -1, -1]);
        assert_eq!(s.row(1), &[1, 1, 1]);
        let pm = CodeBatch::from_rows(&[vec![1.0, -1.0, -1.0]]).unwrap();
        assert_eq!(binarize(&pm).row(0), &[1, -1, -1]);
    }

    #[test]
    fn word_counts() {
        assert_eq!(pack_row(&[1; 64]).len(), 1);
        assert_eq!(pack_row(&[1; 65]).len(), 2);
        assert_eq!(pack_row(&[1; 65])[1], 1);
    }

    #[test]
    fn hamming_basic() {
        let a = pack_row(&[1, -1, 1, 1, -1]);
        let c = pack_row(&[-1, 1, -1, -1, 1]);
        let ra = CodeRef { bits: 5, words: &a };
        assert_eq!(hamming(ra, ra).unwrap(), 0);
        assert_eq!(hamming(ra, CodeRef { bits: 5, words: &c }).unwrap(), 5);
        let other = pack_row(&[1; 6]);
        assert!(hamming(ra, CodeRef { bits: 6, words: &other }).is_err());
    }

    #[test]
    fn rank_hand_case_and_ties() {
        let db = packed(
            &[vec![-1, -1, -1, -1], vec![1, 1, 1, -1], vec![1, 1, -1, -1], vec![1, 1, -1, -1]],
            &[vec![0], vec![0], vec![1], vec![1]],
        );
        let q = pack_row(&[1, 1, 1, 1]);
        // distances: 4, 1, 2, 2
        assert_eq!(rank(CodeRef { bits: 4, words: &q }, &db).unwrap(), vec![1, 2, 3, 0]);
        let self_q = db.words(2).to_vec();
        assert_eq!(rank(CodeRef { bits: 4, words: &self_q }, &db).unwrap()[0], 2);
    }

    #[test]
    fn rank_errors() {
        let db = packed(&[vec![1, 1]], &[vec![0]]);
        let q = pack_row(&[1, 1, 1]);
        assert!(rank(CodeRef { bits: 3, words: &q }, &db).is_err());
        let empty = PackedCodes::pack(&SignCodes::new(0, 2, vec![]).unwrap(), vec![], vec![]).unwrap();
        let q2 = pack_row(&[1, 1]);
        assert!(matches!(rank(CodeRef { bits: 2, words: &q2 }, &empty), Err(Error::EmptyDatabase)));
    }

    #[test]
    fn average_precision_examples() {
        let order = [0, 1, 2];
        assert_eq!(average_precision(&order, &[true, true, true], 3), 1.0);
        assert_eq!(average_precision(&order, &[false, false, false], 3), 0.0);
        let ap = average_precision(&order, &[true, false, true], 3);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        // cutoff shorter than relevant count normalizes by cutoff
        assert_eq!(average_precision(&order, &[true, true, true], 2), 1.0);
    }

    #[test]
    fn unique_labels_self_retrieval() {
        let rows: Vec<Vec<i8>> = (0..6)
            .map(|i| (0..4).map(|k| if (i >> k) & 1 == 1 { 1 } else { -1 }).collect())
            .collect();
        let labels: Vec<Vec<u32>> = (0..6).map(|i| vec![i as u32]).collect();
        let db = packed(&rows, &labels);
        let with_self = EvalOptions { exclude_self: false, ..EvalOptions::for_bits(4, 10) };
        assert_eq!(evaluate(&db, &db, &with_self).unwrap().map_at_k, 1.0);
        // with self excluded nothing relevant remains
        assert_eq!(evaluate(&db, &db, &EvalOptions::for_bits(4, 10)).unwrap().map_at_k, 0.0);

        // duplicated database: every item has a twin with the same code and label
        let twin_rows: Vec<Vec<i8>> = rows.iter().flat_map(|r| [r.clone(), r.clone()]).collect();
        let twin_labels: Vec<Vec<u32>> = (0..12).map(|i| vec![i as u32 / 2]).collect();
        let twins = packed(&twin_rows, &twin_labels);
        let r = evaluate(&twins, &twins, &EvalOptions::for_bits(4, 10)).unwrap();
        assert_eq!(r.map_at_k, 1.0);
    }

    #[test]
    fn identical_codes_all_relevant() {
        let db = packed(&vec![vec![1, -1, 1]; 5], &vec![vec![3]; 5]);
        let q_codes = SignCodes::new(1, 3, vec![1, -1, 1]).unwrap();
        let q = PackedCodes::pack(&q_codes, vec!["q".into()], vec![vec![3]]).unwrap();
        let r = evaluate(&q, &db, &EvalOptions::for_bits(3, 5)).unwrap();
        assert_eq!(r.p_at_h2, 1.0);
        assert_eq!(r.map_at_k, 1.0);
    }

    #[test]
    fn empty_ball_counts_zero() {
        let db = packed(&[vec![-1; 8]], &[vec![0]]);
        let q = PackedCodes::pack(&SignCodes::new(1, 8, vec![1; 8]).unwrap(), vec!["q".into()], vec![vec![0]])
            .unwrap();
        let r = evaluate(&q, &db, &EvalOptions::for_bits(8, 1)).unwrap();
        assert_eq!(r.p_at_h2, 0.0);
        assert_eq!(r.map_at_k, 1.0);
        assert_eq!(r.pr_curve.last().unwrap().recall, 1.0);
    }

    #[test]
    fn evaluate_errors() {
        let db = packed(&[vec![1, 1]], &[vec![0]]);
        let none = PackedCodes::pack(&SignCodes::new(0, 2, vec![]).unwrap(), vec![], vec![]).unwrap();
        assert!(matches!(
            evaluate(&none, &db, &EvalOptions::for_bits(2, 1)),
            Err(Error::EmptyQuerySet)
        ));
        let wide = packed(&[vec![1, 1, 1]], &[vec![0]]);
        assert!(evaluate(&wide, &db, &EvalOptions::for_bits(2, 1)).is_err());
    }

    #[test]
    fn codes_file_round_trip_and_errors() {
        let db = packed(&[vec![1; 65], vec![-1; 65]], &[vec![2, 1], vec![7]]);
        let bytes = db.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"PHCB");
        assert_eq!(PackedCodes::from_bytes(&bytes).unwrap(), db);
        assert_eq!(db.labels(0), &[1, 2]);

        let mut padded = bytes.clone();
        let last = padded.len() - 8 * 3; // second word of item 0
        padded[last + 7] = 0x80;
        match PackedCodes::from_bytes(&padded) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, last);
                assert!(message.contains("padding"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            PackedCodes::from_bytes(&bytes[..bytes.len() - 2]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn continuous_map_orders_by_inner_product() {
        let db = CodeBatch::from_rows(&[vec![0.9, 0.8], vec![-0.9, -0.7], vec![0.5, 0.4]]).unwrap();
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let labels = vec![vec![0], vec![1], vec![0]];
        let q = CodeBatch::from_rows(&[vec![0.2, 0.3]]).unwrap();
        let qids = vec!["q".to_string()];
        let qlabels = vec![vec![0]];
        let m = continuous_map(
            &RealCodes { codes: &q, ids: &qids, labels: &qlabels },
            &RealCodes { codes: &db, ids: &ids, labels: &labels },
            3,
        )
        .unwrap();
        assert_eq!(m, 1.0);
    }

    proptest! {
        #[test]
        fn pack_unpack_identity(rows in 1usize..5, bits in 1usize..140, seed in any::<u64>()) {
            let signs: Vec<i8> = (0..rows * bits)
                .map(|k| if (seed.rotate_left((k % 64) as u32) ^ k as u64) & 1 == 1 { 1 } else { -1 })
                .collect();
            let codes = SignCodes::new(rows, bits, signs).unwrap();
            let ids = (0..rows).map(|i| i.to_string()).collect();
            let p = PackedCodes::pack(&codes, ids, vec![vec![0]; rows]).unwrap();
            prop_assert_eq!(p.unpack(), codes);
            if bits % 64 != 0 {
                for i in 0..rows {
                    prop_assert_eq!(p.words(i).last().unwrap() >> (bits % 64), 0);
                }
            }
        }

        #[test]
        fn triangle_inequality(a in prop::collection::vec(any::<bool>(), 70), b in prop::collection::vec(any::<bool>(), 70), c in prop::collection::vec(any::<bool>(), 70)) {
            let conv = |v: &Vec<bool>| pack_row(&v.iter().map(|&x| if x { 1 } else { -1 }).collect::<Vec<i8>>());
            let (pa, pb, pc) = (conv(&a), conv(&b), conv(&c));
            fn r(w: &[u64]) -> CodeRef<'_> {
                CodeRef { bits: 70, words: w }
            }
            let ab = hamming(r(&pa), r(&pb)).unwrap();
            let bc = hamming(r(&pb), r(&pc)).unwrap();
            let ac = hamming(r(&pa), r(&pc)).unwrap();
            prop_assert!(ac <= ab + bc);
        }
    }
}
