//! Priority cross-entropy and priority quantization losses.
//!
//! For a pair of continuous codes `(h_i, h_j)` with similarity label `s`:
//!
//! * `p = sigma(beta <h_i, h_j>)` if `s = 1`, else `1 - sigma(...)`
//! * `q = (1 + cos)/2` if `s = 1`, else `(1 - cos)/2` (magnitude invariant)
//! * `w = alpha (1 - q)^gamma`, and the pair contributes `-w log p`
//!
//! For a single code `h` the quantization term is
//! `(1 - q_h)^gamma * inv_epsilon * || |h| - 1 ||_1` with
//! `q_h = (1 + cos(|h|, 1))/2`. The additive `-log(2 epsilon)` of the
//! Laplacian prior does not depend on the code and is dropped, so reported
//! loss values are shifted by that constant.
//!
//! All arithmetic is `f64`. Per-term evaluation may run in parallel; results
//! are always reduced in pair order, so outputs are bit-reproducible.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Norms below this are treated as zero when forming a cosine.
pub const ZERO_GUARD: f64 = 1e-12;

/// Pair lists at least this long are evaluated with rayon.
const PARALLEL_PAIRS: usize = 512;

/// Whether the modulating factors take part in differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightGradMode {
    /// Weights are recomputed each step but held constant for the gradient.
    #[default]
    Detached,
    /// Gradients also flow through `q` (or `p`) inside the modulating factor.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    /// Use the per-pair degree weight supplied with each pair.
    #[default]
    Degree,
    /// Ignore the supplied weight and use 1.
    Unit,
    /// Degree weight, with the focal-loss modulating factor `(1 - p)^gamma`
    /// in place of `(1 - q)^gamma`.
    FocalPt,
}

/// How per-term losses are combined into the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Plain sums over pairs and points.
    #[default]
    Sum,
    /// Pair sum divided by the pair count plus point sum divided by the
    /// point count.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub gamma: f64,
    pub inv_epsilon: f64,
    pub weight_grad_mode: WeightGradMode,
    pub alpha_mode: AlphaMode,
    pub quant_enabled: bool,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            gamma: 2.0,
            inv_epsilon: 0.1,
            weight_grad_mode: WeightGradMode::Detached,
            alpha_mode: AlphaMode::Degree,
            quant_enabled: true,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.inv_epsilon >= 0.0 && self.inv_epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "inv_epsilon must be >= 0, got {}",
                self.inv_epsilon
            )));
        }
        if self.beta >= 1.0 {
            log::warn!(
                "beta = {} >= 1 saturates the sigmoid; values below 1 keep more gradient",
                self.beta
            );
        }
        Ok(())
    }

    fn quant_active(&self) -> bool {
        self.quant_enabled && self.inv_epsilon > 0.0
    }
}

/// Continuous codes for a mini-batch plus a gradient buffer of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBatch {
    rows: usize,
    bits: usize,
    z: Vec<f64>,
    grad: Vec<f64>,
}

impl CodeBatch {
    /// `z` is row-major `rows x bits`; entries must be finite and lie in
    /// `[-1, 1]` up to `1e-9`.
    pub fn new(rows: usize, bits: usize, z: Vec<f64>) -> Result<Self> {
        if z.len() != rows * bits {
            return Err(Error::DimensionMismatch {
                expected: rows * bits,
                found: z.len(),
            });
        }
        for (idx, &v) in z.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "code at row {} bit {}",
                    idx / bits.max(1),
                    idx % bits.max(1)
                )));
            }
            if v.abs() > 1.0 + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "code entry {v} at row {} outside [-1, 1]",
                    idx / bits.max(1)
                )));
            }
        }
        Ok(Self {
            rows,
            bits,
            grad: vec![0.0; z.len()],
            z,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let bits = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != bits) {
            return Err(Error::DimensionMismatch {
                expected: bits,
                found: bad.len(),
            });
        }
        Self::new(rows.len(), bits, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.z[b * self.bits..(b + 1) * self.bits]
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    /// Mutable access for callers that perturb codes (finite differences).
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.z
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_row(&self, b: usize) -> &[f64] {
        &self.grad[b * self.bits..(b + 1) * self.bits]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Mean of `| |z| - 1 |` over every entry.
    pub fn mean_quantization_error(&self) -> f64 {
        if self.z.is_empty() {
            return 0.0;
        }
        self.z.iter().map(|v| (v.abs() - 1.0).abs()).sum::<f64>() / self.z.len() as f64
    }
}

/// A pair of batch rows with its label and degree weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPair {
    pub left: usize,
    pub right: usize,
    pub similar: bool,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerms {
    pub left: usize,
    pub right: usize,
    pub similar: bool,
    pub inner: f64,
    pub cosine: f64,
    pub p: f64,
    pub q: f64,
    /// Effective scaling weight after the alpha mode is applied.
    pub alpha: f64,
    pub w: f64,
    /// `w * (-log p)`.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTerms {
    pub index: usize,
    pub q: f64,
    /// `|| |h| - 1 ||_1`.
    pub l1: f64,
    /// `(1 - q)^gamma`.
    pub weight: f64,
    /// `weight * inv_epsilon * l1`.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    /// `pair_loss + quant_loss`.
    pub total: f64,
    /// Reduced priority cross-entropy.
    pub pair_loss: f64,
    /// Reduced priority quantization loss.
    pub quant_loss: f64,
    pub pairs: Vec<PairTerms>,
    pub points: Vec<PointTerms>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{-beta x})`.
pub fn adaptive_sigmoid(x: f64, beta: f64) -> f64 {
    sigmoid(beta * x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// `(p, 1 - p, -log p)` for the pair probability at a given inner product.
fn pair_likelihood(inner: f64, similar: bool, beta: f64) -> (f64, f64, f64) {
    let t = beta * inner;
    if similar {
        (sigmoid(t), sigmoid(-t), softplus(-t))
    } else {
        (sigmoid(-t), sigmoid(t), softplus(t))
    }
}

pub fn pair_probability(h_i: &[f64], h_j: &[f64], similar: bool, beta: f64) -> Result<f64> {
    check_len(h_i, h_j)?;
    Ok(pair_likelihood(dot(h_i, h_j), similar, beta).0)
}

/// Cosine, or `None` when either norm falls under [`ZERO_GUARD`].
fn guarded_cosine(inner: f64, norm_i: f64, norm_j: f64) -> Option<f64> {
    if norm_i < ZERO_GUARD || norm_j < ZERO_GUARD {
        None
    } else {
        Some((inner / (norm_i * norm_j)).clamp(-1.0, 1.0))
    }
}

fn difficulty_from_cosine(cosine: Option<f64>, similar: bool) -> f64 {
    match cosine {
        None => 0.5,
        Some(c) if similar => (1.0 + c) / 2.0,
        Some(c) => (1.0 - c) / 2.0,
    }
}

/// Cosine-based difficulty of a pair; `1` means the pair already agrees
/// with its label. A zero-norm code yields the uninformative value `0.5`.
pub fn pair_difficulty(h_i: &[f64], h_j: &[f64], similar: bool) -> Result<f64> {
    check_len(h_i, h_j)?;
    let cosine = guarded_cosine(dot(h_i, h_j), norm(h_i), norm(h_j));
    if cosine.is_none() {
        log::debug!("pair difficulty on a zero-norm code; using q = 0.5");
    }
    Ok(difficulty_from_cosine(cosine, similar))
}

pub fn pair_weight(alpha: f64, q: f64, gamma: f64) -> f64 {
    alpha * modulating(1.0 - q, gamma)
}

/// `x^gamma` with `x` clamped at zero.
fn modulating(x: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        x.max(0.0).powf(gamma)
    }
}

/// `d(x^gamma)/dx`, taking 0 where it is singular (`x = 0`, `gamma < 1`).
fn modulating_slope(x: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let x = x.max(0.0);
    if x == 0.0 {
        return if gamma == 1.0 { 1.0 } else { 0.0 };
    }
    gamma * x.powf(gamma - 1.0)
}

/// Quantization difficulty of a single code: `(1 + cos(|h|, 1)) / 2`.
pub fn point_quantization_difficulty(h: &[f64]) -> f64 {
    let n = norm(h);
    if n < ZERO_GUARD || h.is_empty() {
        log::debug!("quantization difficulty on a zero-norm code; using q = 0.5");
        return 0.5;
    }
    let cosine = (h.iter().map(|v| v.abs()).sum::<f64>() / (n * (h.len() as f64).sqrt())).min(1.0);
    (1.0 + cosine) / 2.0
}

/// Unnormalized bimodal Laplacian log prior `-inv_epsilon * || |h| - 1 ||_1`.
pub fn quantization_log_prior(h: &[f64], inv_epsilon: f64) -> f64 {
    -inv_epsilon * l1_to_binary(h)
}

fn l1_to_binary(h: &[f64]) -> f64 {
    h.iter().map(|v| (v.abs() - 1.0).abs()).sum()
}

fn check_batch_finite(batch: &CodeBatch) -> Result<()> {
    if let Some(idx) = batch.z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "code at row {} bit {}",
            idx / batch.bits.max(1),
            idx % batch.bits.max(1)
        )));
    }
    Ok(())
}

fn check_pairs(batch: &CodeBatch, pairs: &[WeightedPair]) -> Result<()> {
    for p in pairs {
        for idx in [p.left, p.right] {
            if idx >= batch.rows {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    len: batch.rows,
                });
            }
        }
        if !(p.alpha >= 0.0 && p.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pair ({}, {}) has invalid alpha {}",
                p.left, p.right, p.alpha
            )));
        }
    }
    Ok(())
}

/// Per-pair terms plus the gradient of `loss` with respect to the inner
/// product and the cosine.
struct PairEval {
    terms: PairTerms,
    d_inner: f64,
    d_cosine: f64,
}

fn eval_pair(
    hi: &[f64],
    hj: &[f64],
    pair: &WeightedPair,
    config: &LossConfig,
    need_grad: bool,
) -> PairEval {
    let inner = dot(hi, hj);
    let (ni, nj) = (norm(hi), norm(hj));
    let cosine = guarded_cosine(inner, ni, nj);
    let q = difficulty_from_cosine(cosine, pair.similar);
    let (p, one_minus_p, neg_log_p) = pair_likelihood(inner, pair.similar, config.beta);
    let alpha = match config.alpha_mode {
        AlphaMode::Unit => 1.0,
        AlphaMode::Degree | AlphaMode::FocalPt => pair.alpha,
    };
    let focal = config.alpha_mode == AlphaMode::FocalPt;
    let base = if focal { one_minus_p } else { 1.0 - q };
    let w = alpha * modulating(base, config.gamma);
    let loss = w * neg_log_p;

    let (mut d_inner, mut d_cosine) = (0.0, 0.0);
    if need_grad {
        // d(-log p)/d inner = beta (sigma(beta inner) - s)
        let sig = sigmoid(config.beta * inner);
        let s = if pair.similar { 1.0 } else { 0.0 };
        d_inner = w * config.beta * (sig - s);
        if config.weight_grad_mode == WeightGradMode::Full && config.gamma > 0.0 {
            let dw_dbase = alpha * modulating_slope(base, config.gamma);
            if focal {
                // base = 1 - p; dp/d inner = +-beta sig (1 - sig)
                let dp = config.beta * sig * (1.0 - sig) * if pair.similar { 1.0 } else { -1.0 };
                d_inner += -dw_dbase * dp * neg_log_p;
            } else if cosine.is_some() {
                // base = 1 - q; dq/dcos = +-1/2
                let dq = if pair.similar { 0.5 } else { -0.5 };
                d_cosine = -dw_dbase * dq * neg_log_p;
            }
        }
    }

    PairEval {
        terms: PairTerms {
            left: pair.left,
            right: pair.right,
            similar: pair.similar,
            inner,
            cosine: cosine.unwrap_or(0.0),
            p,
            q,
            alpha,
            w,
            loss,
        },
        d_inner,
        d_cosine,
    }
}

struct PointEval {
    terms: PointTerms,
    grad: Vec<f64>,
}

fn eval_point(h: &[f64], index: usize, config: &LossConfig, need_grad: bool) -> PointEval {
    let l1 = l1_to_binary(h);
    let n = norm(h);
    let k = h.len() as f64;
    let cosine = if n < ZERO_GUARD || h.is_empty() {
        None
    } else {
        Some((h.iter().map(|v| v.abs()).sum::<f64>() / (n * k.sqrt())).min(1.0))
    };
    let q = cosine.map_or(0.5, |c| (1.0 + c) / 2.0);
    let weight = modulating(1.0 - q, config.gamma);
    let penalty = config.inv_epsilon * l1;
    let loss = weight * penalty;

    let mut grad = Vec::new();
    if need_grad {
        grad = h
            .iter()
            .map(|&v| {
                let a = v.abs();
                weight * config.inv_epsilon * sign(a - 1.0) * sign(v)
            })
            .collect();
        if config.weight_grad_mode == WeightGradMode::Full && config.gamma > 0.0 {
            if let Some(c) = cosine {
                // d weight / d cos = -slope(1 - q) * 1/2
                let dweight_dcos = -modulating_slope(1.0 - q, config.gamma) * 0.5;
                let scale = penalty * dweight_dcos;
                for (g, &v) in grad.iter_mut().zip(h) {
                    let a = v.abs();
                    let dcos_da = 1.0 / (n * k.sqrt()) - c * a / (n * n);
                    *g += scale * dcos_da * sign(v);
                }
            }
        }
    }

    PointEval {
        terms: PointTerms {
            index,
            q,
            l1,
            weight,
            loss,
        },
        grad,
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn eval_pairs(
    batch: &CodeBatch,
    pairs: &[WeightedPair],
    config: &LossConfig,
    need_grad: bool,
) -> Vec<PairEval> {
    let f = |p: &WeightedPair| eval_pair(batch.row(p.left), batch.row(p.right), p, config, need_grad);
    if pairs.len() >= PARALLEL_PAIRS {
        pairs.par_iter().map(f).collect()
    } else {
        pairs.iter().map(f).collect()
    }
}

fn distinct_points(batch: &CodeBatch, point_indices: &[usize]) -> Result<Vec<usize>> {
    let mut seen = vec![false; batch.rows];
    let mut out = Vec::with_capacity(point_indices.len());
    for &idx in point_indices {
        if idx >= batch.rows {
            return Err(Error::IndexOutOfRange {
                index: idx,
                len: batch.rows,
            });
        }
        if !std::mem::replace(&mut seen[idx], true) {
            out.push(idx);
        }
    }
    Ok(out)
}

fn check_pair_terms(evals: &[PairEval]) -> Result<()> {
    for e in evals {
        let t = &e.terms;
        if !t.loss.is_finite() || !e.d_inner.is_finite() || !e.d_cosine.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss term for pair ({}, {})",
                t.left, t.right
            )));
        }
    }
    Ok(())
}

/// Priority cross-entropy `sum_pairs w (-log p)`, unreduced.
pub fn priority_ce_loss(
    batch: &CodeBatch,
    pairs: &[WeightedPair],
    config: &LossConfig,
) -> Result<(f64, Vec<PairTerms>)> {
    config.validate()?;
    check_batch_finite(batch)?;
    check_pairs(batch, pairs)?;
    let evals = eval_pairs(batch, pairs, config, false);
    check_pair_terms(&evals)?;
    let terms: Vec<PairTerms> = evals.into_iter().map(|e| e.terms).collect();
    let loss = terms.iter().map(|t| t.loss).sum();
    Ok((loss, terms))
}

/// Priority quantization loss over the distinct listed rows, unreduced.
/// Returns zero with no terms when quantization is disabled.
pub fn priority_quant_loss(
    batch: &CodeBatch,
    point_indices: &[usize],
    config: &LossConfig,
) -> Result<(f64, Vec<PointTerms>)> {
    config.validate()?;
    check_batch_finite(batch)?;
    let points = distinct_points(batch, point_indices)?;
    if !config.quant_active() {
        return Ok((0.0, Vec::new()));
    }
    let terms: Vec<PointTerms> = points
        .iter()
        .map(|&i| eval_point(batch.row(i), i, config, false).terms)
        .collect();
    let loss = terms.iter().map(|t| t.loss).sum();
    Ok((loss, terms))
}

/// Evaluates `L + Q` and overwrites `batch.grad` with its analytic gradient
/// with respect to the codes.
pub fn objective_and_gradient(
    batch: &mut CodeBatch,
    pairs: &[WeightedPair],
    point_indices: &[usize],
    config: &LossConfig,
) -> Result<Objective> {
    config.validate()?;
    check_batch_finite(batch)?;
    check_pairs(batch, pairs)?;
    let points = distinct_points(batch, point_indices)?;

    let pair_scale = match config.reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean if pairs.is_empty() => 0.0,
        Reduction::Mean => 1.0 / pairs.len() as f64,
    };
    let point_scale = match config.reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean if points.is_empty() => 0.0,
        Reduction::Mean => 1.0 / points.len() as f64,
    };

    let evals = eval_pairs(batch, pairs, config, true);
    check_pair_terms(&evals)?;

    let bits = batch.bits;
    let mut grad = vec![0.0; batch.z.len()];
    let mut pair_sum = 0.0;
    for e in &evals {
        let t = &e.terms;
        pair_sum += t.loss;
        let (li, ri) = (t.left * bits, t.right * bits);
        let hi = &batch.z[li..li + bits];
        let hj = &batch.z[ri..ri + bits];
        let gi = e.d_inner * pair_scale;
        for k in 0..bits {
            grad[li + k] += gi * hj[k];
            grad[ri + k] += gi * hi[k];
        }
        if e.d_cosine != 0.0 {
            let (ni, nj) = (norm(hi), norm(hj));
            let c = t.cosine;
            let gc = e.d_cosine * pair_scale;
            for k in 0..bits {
                grad[li + k] += gc * (hj[k] / (ni * nj) - c * hi[k] / (ni * ni));
                grad[ri + k] += gc * (hi[k] / (ni * nj) - c * hj[k] / (nj * nj));
            }
        }
    }

    let mut point_terms = Vec::new();
    let mut quant_sum = 0.0;
    if config.quant_active() {
        for &i in &points {
            let e = eval_point(batch.row(i), i, config, true);
            if !e.terms.loss.is_finite() || e.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("quantization term for point {i}")));
            }
            quant_sum += e.terms.loss;
            for (k, g) in e.grad.iter().enumerate() {
                grad[i * bits + k] += g * point_scale;
            }
            point_terms.push(e.terms);
        }
    }

    if let Some(idx) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient at row {}", idx / bits.max(1))));
    }
    batch.grad = grad;

    let pair_loss = pair_sum * pair_scale;
    let quant_loss = quant_sum * point_scale;
    Ok(Objective {
        total: pair_loss + quant_loss,
        pair_loss,
        quant_loss,
        pairs: evals.into_iter().map(|e| e.terms).collect(),
        points: point_terms,
    })
}

/// Writes pair terms as CSV with header `pair_i,pair_j,s,inner,p,q,alpha,w,loss`.
pub fn write_pair_trace<W: Write>(mut out: W, terms: &[PairTerms]) -> Result<()> {
    writeln!(out, "pair_i,pair_j,s,inner,p,q,alpha,w,loss")?;
    for t in terms {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.left,
            t.right,
            u8::from(t.similar),
            t.inner,
            t.p,
            t.q,
            t.alpha,
            t.w,
            t.loss
        )?;
    }
    Ok(())
}
