//! Per-cell summaries of a results table: MSE, mean, ±2S/√N band and
//! log-scale columns.

use anyhow::Result;
use ope_absorb::analysis::{markov_bound, regime_classify};
use ope_absorb::estimators::Method;

use crate::formats::fmt_f64;
use crate::sweep::{AlphaMoments, ResultRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub alpha: f64,
    pub horizon: usize,
    pub m: usize,
    pub gamma: Option<f64>,
    /// Replicates with an estimate.
    pub n: usize,
    /// Replicates whose estimator failed.
    pub failed: usize,
    pub mean: f64,
    pub bias: f64,
    /// Sample standard deviation `S` (divisor `N − 1`; 0 when `N = 1`).
    pub sd: f64,
    pub mse: f64,
    /// `2S/√N`.
    pub band_halfwidth: f64,
    pub log10_mse: f64,
    pub log10_m: f64,
    pub regime: Option<&'static str>,
    pub tail_bound: Option<f64>,
    pub single_replicate: bool,
}

impl CellSummary {
    pub fn band(&self) -> (f64, f64) {
        (self.mean - self.band_halfwidth, self.mean + self.band_halfwidth)
    }
}

/// Summary of the estimates of one cell against `truth`.
pub fn summarize_cell(estimates: &[f64], truth: f64) -> (f64, f64, f64, f64) {
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sd = if estimates.len() > 1 {
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
    (mean, mean - truth, sd, mse)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions<'a> {
    /// Behavior-policy moment parameters, used for the regime column.
    pub moments: Option<&'a [AlphaMoments]>,
    /// Tolerance for the Markov tail-bound column.
    pub epsilon: Option<f64>,
}

/// Groups records by `(method, α, H, m, γ)` in order of first appearance.
pub fn report(records: &[ResultRecord], truth: f64, opts: ReportOptions) -> Result<Vec<CellSummary>> {
    let mut keys: Vec<(Method, u64, usize, usize, Option<u64>)> = Vec::new();
    let mut groups: Vec<Vec<&ResultRecord>> = Vec::new();
    for r in records {
        let key = (r.method, r.alpha.to_bits(), r.horizon, r.m, r.gamma.map(f64::to_bits));
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for group in groups {
        let first = group[0];
        let estimates: Vec<f64> = group.iter().filter_map(|r| r.estimate).collect();
        let failed = group.len() - estimates.len();
        let (mean, bias, sd, mse) =
            if estimates.is_empty() { (f64::NAN, f64::NAN, f64::NAN, f64::NAN) } else { summarize_cell(&estimates, truth) };
        let n = estimates.len();
        let band_halfwidth = if n > 1 { 2.0 * sd / (n as f64).sqrt() } else { 0.0 };
        let regime = match opts.moments.and_then(|ms| ms.iter().find(|a| a.alpha == first.alpha)) {
            Some(AlphaMoments { lambda0: Some(l), m0: Some(m0), .. }) if first.m >= 2 => {
                Some(regime_classify(first.m as u64, first.horizon, *l, *m0)?.tag())
            }
            _ => None,
        };
        let tail_bound = match opts.epsilon {
            Some(eps) if mse.is_finite() => Some(markov_bound(mse, eps)?),
            _ => None,
        };
        out.push(CellSummary {
            method: first.method,
            alpha: first.alpha,
            horizon: first.horizon,
            m: first.m,
            gamma: first.gamma,
            n,
            failed,
            mean,
            bias,
            sd,
            mse,
            band_halfwidth,
            log10_mse: mse.log10(),
            log10_m: (first.m as f64).log10(),
            regime,
            tail_bound,
            single_replicate: n == 1,
        });
    }
    Ok(out)
}

pub const SUMMARY_HEADER: [&str; 19] = [
    "method", "alpha", "H", "m", "gamma", "N", "failed", "mean", "bias", "sd", "mse", "band_lo", "band_hi",
    "log10_mse", "log10_m", "regime", "tail_bound", "truth", "flag",
];

pub fn write_summary<W: std::io::Write>(out: W, cells: &[CellSummary], truth: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for c in cells {
        let (lo, hi) = c.band();
        let mut flags = Vec::new();
        if c.single_replicate {
            flags.push("single_replicate".to_string());
        }
        if c.failed > 0 {
            flags.push(format!("failed={}", c.failed));
        }
        w.write_record([
            c.method.tag().to_string(),
            format!("{}", c.alpha),
            c.horizon.to_string(),
            c.m.to_string(),
            c.gamma.map(|g| format!("{g}")).unwrap_or_default(),
            c.n.to_string(),
            c.failed.to_string(),
            fmt_f64(c.mean),
            fmt_f64(c.bias),
            fmt_f64(c.sd),
            fmt_f64(c.mse),
            fmt_f64(lo),
            fmt_f64(hi),
            fmt_f64(c.log10_mse),
            fmt_f64(c.log10_m),
            c.regime.unwrap_or("").to_string(),
            c.tail_bound.map(fmt_f64).unwrap_or_default(),
            fmt_f64(truth),
            flags.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
