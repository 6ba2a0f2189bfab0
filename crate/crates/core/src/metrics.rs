//! Relative error metrics used for the loss and for evaluation.

use crate::darcy::DarcySample;
use crate::error::{Error, Result};
use crate::grid::{apply_group, ChannelField, GroupElement, ScalarGrid};
use crate::model::Operator;
use crate::spectral::{fft2, signed_frequency};

fn check_pair(pred: &ScalarGrid, truth: &ScalarGrid) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and truth {:?} differ in shape",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

/// `||pred - truth|| / ||truth||` over grid samples.
pub fn relative_l2(pred: &ScalarGrid, truth: &ScalarGrid) -> Result<f64> {
    check_pair(pred, truth)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("truth has zero L2 norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Sobolev weight `(1 + |k|^2)^2` at integer frequency `(kx, ky)`.
pub fn sobolev_weight(kx: i64, ky: i64) -> f64 {
    let k2 = (kx * kx + ky * ky) as f64;
    (1.0 + k2) * (1.0 + k2)
}

fn weighted_energy(x: &ScalarGrid) -> f64 {
    let (h, w) = x.shape();
    let spec = fft2(&x.to_complex());
    let mut acc = 0.0;
    for r in 0..h {
        let kx = signed_frequency(r, h);
        for c in 0..w {
            acc += sobolev_weight(kx, signed_frequency(c, w)) * spec.get(r, c).norm_sqr();
        }
    }
    acc
}

/// Relative error in the spectral Sobolev norm with weight `(1 + |k|^2)^2`,
/// where `k` is the integer frequency.
pub fn relative_h2(pred: &ScalarGrid, truth: &ScalarGrid) -> Result<f64> {
    check_pair(pred, truth)?;
    let diff = ScalarGrid::new(
        pred.height(),
        pred.width(),
        pred.data()
            .iter()
            .zip(truth.data())
            .map(|(p, t)| p - t)
            .collect(),
    )?;
    let den = weighted_energy(truth);
    if den == 0.0 {
        return Err(Error::UndefinedMetric("truth has zero H2 norm".into()));
    }
    Ok((weighted_energy(&diff) / den).sqrt())
}

/// Per-sample relative errors with their means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub l2: Vec<f64>,
    pub h2: Vec<f64>,
    pub mean_l2: f64,
    pub mean_h2: f64,
}

impl MetricReport {
    pub fn from_samples(l2: Vec<f64>, h2: Vec<f64>) -> Result<Self> {
        if l2.is_empty() || l2.len() != h2.len() {
            return Err(Error::shape(format!(
                "{} L2 values and {} H2 values",
                l2.len(),
                h2.len()
            )));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(MetricReport {
            mean_l2: mean(&l2),
            mean_h2: mean(&h2),
            l2,
            h2,
        })
    }

    pub fn len(&self) -> usize {
        self.l2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l2.is_empty()
    }
}

/// Evaluates `model` on every sample after applying `transform` to both the
/// coefficient and the solution.
pub fn dataset_report(
    model: &Operator<'_>,
    dataset: &[DarcySample],
    transform: GroupElement,
) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::config("cannot evaluate an empty dataset"));
    }
    let mut l2 = Vec::with_capacity(dataset.len());
    let mut h2 = Vec::with_capacity(dataset.len());
    for s in dataset {
        let a = apply_group(transform, &s.a)?;
        let u = apply_group(transform, &s.u)?;
        let pred = model.forward(&ChannelField::from_grid(&a))?.grid(0);
        l2.push(relative_l2(&pred, &u)?);
        h2.push(relative_h2(&pred, &u)?);
    }
    MetricReport::from_samples(l2, h2)
}
