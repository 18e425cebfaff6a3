use std::ops::Range;

use nalgebra::{Matrix3, Vector3};

use super::SimTrace;
use crate::{Error, Result};

/// Offset statistics in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Mean relative deviation `sqrt(S_n)`.
    pub sqrt_sn_us: f64,
    /// 99th percentile of the pooled, mean-centred absolute offsets.
    pub ci99_us: f64,
    /// Largest pooled, mean-centred absolute offset.
    pub ci100_us: f64,
    /// Per-node mean offset (zero at the reference).
    pub mean_offsets_us: Vec<f64>,
}

/// Statistics over per-node offset series. Each series is centred on its own
/// mean before pooling.
pub fn offset_metrics(series: &[Vec<f64>]) -> Result<Metrics> {
    let have = series.iter().map(Vec::len).min().unwrap_or(0);
    if have < 2 {
        return Err(Error::TooFewSamples { needed: 2, have });
    }
    let mut pooled = Vec::with_capacity(series.iter().map(Vec::len).sum());
    let mut sn = 0.0;
    let mut means = Vec::with_capacity(series.len());
    for v in series {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let mut sq = 0.0;
        for x in v {
            let d = x - mean;
            sq += d * d;
            pooled.push(d.abs());
        }
        sn += sq / v.len() as f64;
        means.push(mean);
    }
    sn /= series.len() as f64;
    pooled.sort_by(f64::total_cmp);
    let rank = ((0.99 * pooled.len() as f64).ceil() as usize).clamp(1, pooled.len());
    Ok(Metrics {
        sqrt_sn_us: sn.sqrt(),
        ci99_us: pooled[rank - 1],
        ci100_us: *pooled.last().expect("non-empty"),
        mean_offsets_us: means,
    })
}

/// Metrics of the non-reference nodes from step `start` on. A single-node
/// trace has nothing to compare and reports zeros.
pub fn metrics(trace: &SimTrace, start: usize) -> Result<Metrics> {
    let have = trace.len().saturating_sub(start);
    if have < 2 {
        return Err(Error::TooFewSamples { needed: 2, have });
    }
    let nodes: Vec<usize> = (0..trace.n).filter(|&i| i != trace.reference).collect();
    if nodes.is_empty() {
        return Ok(Metrics {
            sqrt_sn_us: 0.0,
            ci99_us: 0.0,
            ci100_us: 0.0,
            mean_offsets_us: vec![0.0; trace.n],
        });
    }
    let series: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&i| (start..trace.len()).map(|k| trace.offset_us(k, i)).collect())
        .collect();
    let mut m = offset_metrics(&series)?;
    let mut means = vec![0.0; trace.n];
    for (&i, v) in nodes.iter().zip(&m.mean_offsets_us) {
        means[i] = *v;
    }
    m.mean_offsets_us = means;
    Ok(m)
}

/// Least-squares coefficient `a` of `offset ~ a k^2 + b k + c` for `node`
/// over the steps in `window`, in seconds per step squared.
pub fn quadratic_drift_fit(trace: &SimTrace, node: usize, window: Range<usize>) -> Result<f64> {
    let window = window.start..window.end.min(trace.len());
    let have = window.len();
    if have < 10 {
        return Err(Error::TooFewSamples { needed: 10, have });
    }
    let ks: Vec<f64> = window.clone().map(|k| k as f64).collect();
    let vs: Vec<f64> = window.map(|k| trace.offset_us(k, node) * 1e-6).collect();
    fit_quadratic(&ks, &vs)
}

pub(crate) fn fit_quadratic(ks: &[f64], vs: &[f64]) -> Result<f64> {
    let mid = 0.5 * (ks[0] + ks[ks.len() - 1]);
    let half = (0.5 * (ks[ks.len() - 1] - ks[0])).max(1.0);
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (k, v) in ks.iter().zip(vs) {
        let u = (k - mid) / half;
        let row = Vector3::new(u * u, u, 1.0);
        ata += row * row.transpose();
        atb += row * *v;
    }
    let coef = ata
        .lu()
        .solve(&atb)
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::InvalidScenario("degenerate fit window".into()))?;
    Ok(coef[0] / (half * half))
}

/// Relative frequency error of `node` against true time `t_k = k tau`,
/// `(D(t) - D(t - lag tau)) / (x(t) - x(t - lag tau))` with `D = t - x`.
/// Samples whose clock did not advance are skipped.
pub fn relative_frequency_error(trace: &SimTrace, node: usize, lag: usize) -> Result<Vec<f64>> {
    if lag == 0 {
        return Err(Error::InvalidScenario("lag must be at least 1".into()));
    }
    let x = trace.node_x(node);
    let mut out = Vec::with_capacity(x.len().saturating_sub(lag));
    for k in lag..x.len() {
        let dx = x[k] - x[k - lag];
        if dx.abs() <= f64::EPSILON * x[k].abs().max(1.0) {
            continue;
        }
        let dd = lag as f64 * trace.tau - dx;
        out.push(dd / dx);
    }
    Ok(out)
}
