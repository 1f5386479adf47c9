//! Labeled feature datasets and their on-disk formats.
//!
//! Two encodings are supported:
//!
//! * CSV with header `id,labels,f0,f1,...,f{D-1}`, where `labels` is a
//!   `|`-separated list of integer label ids.
//! * Binary: magic `PHDS`, `u32` item count, `u32` dimension, then per item a
//!   `u16`-prefixed id, a `u16`-prefixed list of `u32` labels and `D`
//!   little-endian `f32` features.
//!
//! [`LabeledDataset::load`] picks the format by sniffing the magic bytes.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::bytes::{put_label_list, put_short_string, put_u32, ByteReader};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"PHDS";

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    /// Sorted, deduplicated label ids.
    pub labels: Vec<u32>,
    pub features: Vec<f64>,
}

impl Item {
    pub fn new(id: impl Into<String>, mut labels: Vec<u32>, features: Vec<f64>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        Self {
            id: id.into(),
            labels,
            features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    items: Vec<Item>,
    dim: usize,
}

impl LabeledDataset {
    /// Validates that every item has at least one label, ids are unique and
    /// all feature vectors share one dimension.
    pub fn new(items: Vec<Item>) -> Result<Self> {
        let dim = items.first().map_or(0, |it| it.features.len());
        let mut seen = HashSet::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            if item.labels.is_empty() {
                return Err(Error::InvalidDataset(format!(
                    "item {idx} ({}) has no labels",
                    item.id
                )));
            }
            if item.features.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "item {idx} ({}) has {} features, expected {dim}",
                    item.id,
                    item.features.len()
                )));
            }
            if item.features.iter().any(|f| !f.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "item {idx} ({}) has a non-finite feature",
                    item.id
                )));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate id {}", item.id)));
            }
        }
        Ok(Self { items, dim })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, index: usize) -> &Item {
        &self.items[index]
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|it| it.id.clone()).collect()
    }

    pub fn label_sets(&self) -> Vec<Vec<u32>> {
        self.items.iter().map(|it| it.labels.clone()).collect()
    }

    /// Row-major `rows x dim` feature matrix for the given item indices.
    pub fn feature_rows(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            out.extend_from_slice(&self.items[i].features);
        }
        out
    }

    /// Row-major feature matrix for every item, in order.
    pub fn feature_matrix(&self) -> Vec<f64> {
        self.items.iter().flat_map(|it| it.features.iter().copied()).collect()
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::InvalidDataset(format!("csv header: {e}")))?
            .clone();
        if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "labels" {
            return Err(Error::InvalidDataset(
                "csv header must start with `id,labels`".into(),
            ));
        }
        for (k, name) in headers.iter().skip(2).enumerate() {
            if name != format!("f{k}") {
                return Err(Error::InvalidDataset(format!(
                    "csv column {} should be f{k}, found {name}",
                    k + 2
                )));
            }
        }
        let dim = headers.len() - 2;
        let mut items = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| Error::InvalidDataset(format!("line {line}: {e}")))?;
            if record.len() != dim + 2 {
                return Err(Error::InvalidDataset(format!(
                    "line {line}: expected {} fields, found {}",
                    dim + 2,
                    record.len()
                )));
            }
            let labels = record[1]
                .split('|')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim().parse::<u32>().map_err(|_| {
                        Error::InvalidDataset(format!("line {line}: bad label id {s:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let features = (0..dim)
                .map(|k| {
                    let raw = record[k + 2].trim();
                    raw.parse::<f64>().map_err(|_| {
                        Error::InvalidDataset(format!("line {line}: bad feature f{k} {raw:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            items.push(Item::new(record[0].to_string(), labels, features));
        }
        Self::new(items)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "labels".to_string()];
        header.extend((0..self.dim).map(|k| format!("f{k}")));
        wtr.write_record(&header).map_err(csv_io)?;
        for item in &self.items {
            let mut rec = Vec::with_capacity(self.dim + 2);
            rec.push(item.id.clone());
            rec.push(
                item.labels
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join("|"),
            );
            rec.extend(item.features.iter().map(f64::to_string));
            wtr.write_record(&rec).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(DATASET_MAGIC)?;
        let n = r.u32("item count")? as usize;
        let dim = r.u32("dimension")? as usize;
        let mut items = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id = r.short_string("item id")?;
            let labels = r.label_list("label list")?;
            let features = (0..dim)
                .map(|_| r.f32("feature").map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            items.push(Item::new(id, labels, features));
        }
        r.finish()?;
        if items.is_empty() {
            return Ok(Self { items, dim });
        }
        Self::new(items)
    }

    /// Binary encoding. Features are narrowed to `f32`.
    pub fn to_binary(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        put_u32(&mut out, self.items.len() as u32);
        put_u32(&mut out, self.dim as u32);
        for item in &self.items {
            put_short_string(&mut out, &item.id)?;
            put_label_list(&mut out, &item.labels)?;
            for &f in &item.features {
                out.extend_from_slice(&(f as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Loads either format, sniffing the `PHDS` magic.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        if bytes.starts_with(DATASET_MAGIC) {
            Self::from_binary(&bytes)
        } else {
            Self::from_csv_reader(bytes.as_slice())
        }
    }

    /// Writes binary when the extension is `.phds`, CSV otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "phds") {
            std::fs::write(path, self.to_binary()?)?;
        } else {
            let file = std::fs::File::create(path)?;
            self.to_csv_writer(std::io::BufWriter::new(file))?;
        }
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
