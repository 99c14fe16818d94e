//! Relative L2 error and coefficient of determination, per field and pooled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_shapes(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: reference.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidParameter("metrics need at least one point".into()));
    }
    Ok(())
}

/// ‖pred − ref‖₂ / ‖ref‖₂
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    MetricSums::from_slices(pred, reference)?.relative_l2()
}

/// 1 − Σ(pred − ref)² / Σ(ref − mean(ref))²
pub fn r2_score(pred: &[f64], reference: &[f64]) -> Result<f64> {
    MetricSums::from_slices(pred, reference)?.r2()
}

/// Sufficient statistics of both metrics; mergeable so that pooled metrics
/// can be recomputed from per-field results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSums {
    pub n: usize,
    /// Σ(pred − ref)²
    pub sse: f64,
    /// Σ ref²
    pub ref_sq: f64,
    pub ref_mean: f64,
    /// Σ(ref − mean)²
    pub ref_m2: f64,
}

impl MetricSums {
    pub fn from_slices(pred: &[f64], reference: &[f64]) -> Result<Self> {
        check_shapes(pred, reference)?;
        let n = reference.len();
        let mean = reference.iter().sum::<f64>() / n as f64;
        Ok(Self {
            n,
            sse: pred.iter().zip(reference).map(|(p, r)| (p - r).powi(2)).sum(),
            ref_sq: reference.iter().map(|r| r * r).sum(),
            ref_mean: mean,
            ref_m2: reference.iter().map(|r| (r - mean).powi(2)).sum(),
        })
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.ref_mean - self.ref_mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        Self {
            n,
            sse: self.sse + other.sse,
            ref_sq: self.ref_sq + other.ref_sq,
            ref_mean: self.ref_mean + delta * nb / n as f64,
            ref_m2: self.ref_m2 + other.ref_m2 + delta * delta * na * nb / n as f64,
        }
    }

    pub fn relative_l2(&self) -> Result<f64> {
        if !(self.ref_sq > 0.0) {
            return Err(Error::InvalidParameter("relative L2 error undefined for a zero reference".into()));
        }
        Ok((self.sse / self.ref_sq).sqrt())
    }

    pub fn r2(&self) -> Result<f64> {
        if !(self.ref_m2 > 0.0) {
            return Err(Error::InvalidParameter("R² undefined for a constant reference".into()));
        }
        Ok(1.0 - self.sse / self.ref_m2)
    }

    pub fn report(&self) -> Result<MetricReport> {
        Ok(MetricReport {
            relative_l2: self.relative_l2()?,
            r2: self.r2()?,
            n_points: self.n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub relative_l2: f64,
    pub r2: f64,
    pub n_points: usize,
}

pub fn evaluate(pred: &[f64], reference: &[f64]) -> Result<MetricReport> {
    MetricSums::from_slices(pred, reference)?.report()
}

/// Metrics of one realization, keyed for tabulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetrics {
    pub realization: usize,
    pub report: MetricReport,
    pub sums: MetricSums,
}

/// One report per realization (the default granularity) plus the pooled
/// report over all points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub per_field: Vec<FieldMetrics>,
    pub pooled: MetricReport,
}

impl MetricTable {
    /// Pooled report rebuilt from the per-field sums.
    pub fn recompute_pooled(&self) -> Result<MetricReport> {
        self.per_field
            .iter()
            .fold(MetricSums::default(), |acc, f| acc.merge(&f.sums))
            .report()
    }
}

/// Evaluate paired realizations.
pub fn evaluate_fields<P: AsRef<[f64]>, R: AsRef<[f64]>>(preds: &[P], refs: &[R]) -> Result<MetricTable> {
    if preds.len() != refs.len() {
        return Err(Error::ShapeMismatch {
            expected: refs.len(),
            actual: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidParameter("no realizations to evaluate".into()));
    }
    let per_field = preds
        .iter()
        .zip(refs)
        .enumerate()
        .map(|(realization, (p, r))| {
            let sums = MetricSums::from_slices(p.as_ref(), r.as_ref())?;
            Ok(FieldMetrics {
                realization,
                report: sums.report()?,
                sums,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled_pred: Vec<f64> = preds.iter().flat_map(|p| p.as_ref().iter().copied()).collect();
    let pooled_ref: Vec<f64> = refs.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
    Ok(MetricTable {
        per_field,
        pooled: evaluate(&pooled_pred, &pooled_ref)?,
    })
}
