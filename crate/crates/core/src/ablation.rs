//! The full method and its three ablations, plus a train-and-evaluate helper
//! shared by the CLI and the experiments.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::dataset::LabeledDataset;
use crate::encoder::{Encoder, EncoderSpec};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::loss::{AlphaMode, LossConfig};
use crate::retrieval::{binarize, continuous_map, evaluate, EvalOptions, PackedCodes, RealCodes};
use crate::train::{encode_dataset, train, EpochRecord, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Degree-scaled weights with the cosine modulating factor and the
    /// quantization loss.
    Dph,
    /// Focal-loss modulating factor `(1 - p)^gamma`.
    DphF,
    /// Unit pair weights (`w = 1`).
    DphW,
    /// No quantization loss.
    DphQ,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dph, Variant::DphF, Variant::DphW, Variant::DphQ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dph => "DPH",
            Variant::DphF => "DPH-F",
            Variant::DphW => "DPH-W",
            Variant::DphQ => "DPH-Q",
        }
    }

    /// Applies the variant's switches on top of a base configuration.
    pub fn apply(self, base: &LossConfig) -> LossConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Dph => {}
            Variant::DphF => cfg.alpha_mode = AlphaMode::FocalPt,
            Variant::DphW => {
                cfg.alpha_mode = AlphaMode::Unit;
                cfg.gamma = 0.0;
            }
            Variant::DphQ => cfg.inv_epsilon = 0.0,
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dph" => Ok(Variant::Dph),
            "dph-f" => Ok(Variant::DphF),
            "dph-w" => Ok(Variant::DphW),
            "dph-q" => Ok(Variant::DphQ),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

pub fn pack_dataset(encoder: &Encoder, dataset: &LabeledDataset) -> Result<PackedCodes> {
    let codes = encode_dataset(encoder, dataset)?;
    PackedCodes::pack(&binarize(&codes), dataset.ids(), dataset.label_sets())
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub encoder: Encoder,
    pub log: Vec<EpochRecord>,
    /// MAP@K of Hamming ranking on binary codes.
    pub binary_map: f64,
    /// MAP@K of inner-product ranking on the continuous codes.
    pub continuous_map: f64,
    /// Mean `| |z| - 1 |` of the database codes after training.
    pub quant_error: f64,
}

/// Trains on `train_set`, then retrieves `queries` against `train_set`.
pub fn run_experiment(
    train_set: &LabeledDataset,
    queries: &LabeledDataset,
    spec: &EncoderSpec,
    loss: &LossConfig,
    config: &TrainConfig,
    map_at: usize,
) -> Result<RunResult> {
    let graph = build_graph(train_set, false)?;
    let out = train(train_set, &graph, spec, loss, config)?;
    let db_codes = encode_dataset(&out.encoder, train_set)?;
    let q_codes = encode_dataset(&out.encoder, queries)?;
    let (db_ids, db_labels) = (train_set.ids(), train_set.label_sets());
    let (q_ids, q_labels) = (queries.ids(), queries.label_sets());
    let db = PackedCodes::pack(&binarize(&db_codes), db_ids.clone(), db_labels.clone())?;
    let qp = PackedCodes::pack(&binarize(&q_codes), q_ids.clone(), q_labels.clone())?;
    let report = evaluate(&qp, &db, &EvalOptions::for_bits(spec.code_bits, map_at))?;
    let cont = continuous_map(
        &RealCodes { codes: &q_codes, ids: &q_ids, labels: &q_labels },
        &RealCodes { codes: &db_codes, ids: &db_ids, labels: &db_labels },
        map_at,
    )?;
    Ok(RunResult {
        quant_error: db_codes.mean_quantization_error(),
        encoder: out.encoder,
        log: out.log,
        binary_map: report.map_at_k,
        continuous_map: cont,
    })
}

/// MAP per variant (rows) and code length (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub bits: Vec<usize>,
    pub rows: Vec<(Variant, Vec<f64>)>,
}

impl AblationTable {
    pub fn get(&self, variant: Variant, bits: usize) -> Option<f64> {
        let col = self.bits.iter().position(|&b| b == bits)?;
        self.rows.iter().find(|r| r.0 == variant).map(|r| r.1[col])
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "variant")?;
        for b in &self.bits {
            write!(out, ",{b} bits")?;
        }
        writeln!(out)?;
        for (v, maps) in &self.rows {
            write!(out, "{v}")?;
            for m in maps {
                write!(out, ",{m:.4}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs every variant at each code length with a shared seed.
pub fn run_ablation(
    train_set: &LabeledDataset,
    queries: &LabeledDataset,
    spec: &EncoderSpec,
    loss: &LossConfig,
    config: &TrainConfig,
    bits: &[usize],
    map_at: usize,
) -> Result<AblationTable> {
    if bits.is_empty() {
        return Err(Error::InvalidArgument("no code lengths given".into()));
    }
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for v in Variant::ALL {
        let cfg = v.apply(loss);
        let maps = bits
            .iter()
            .map(|&k| {
                let s = EncoderSpec { code_bits: k, ..spec.clone() };
                run_experiment(train_set, queries, &s, &cfg, config, map_at).map(|r| r.binary_map)
            })
            .collect::<Result<Vec<_>>>()?;
        log::info!("{v}: {maps:?}");
        rows.push((v, maps));
    }
    Ok(AblationTable { bits: bits.to_vec(), rows })
}
