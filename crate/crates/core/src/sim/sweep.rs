// SPDX-License-Identifier: Apache-2.0

//! Parameter sweeps and their CSV rendering.
//!
//! Every point of a sweep uses the experiment's seed, so points differ only
//! in the swept parameter.

use std::fmt::Write;
use std::str::FromStr;

use super::config::{ConfigError, Dist, Experiment};
use super::engine::{run, run_baseline, SimError};
use super::stats::StatsReport;

pub const CSV_HEADER: &str =
    "param,offered_gbps,delivered_gbps,mean_lat_us,p50_us,p99_us,wasted_grants,drops,max_voq_bytes";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Load,
    PacketSize,
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "load" => Ok(SweepParam::Load),
            "packet_size" => Ok(SweepParam::PacketSize),
            _ => Err(format!("unknown sweep parameter `{s}` (expected load or packet_size)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: f64,
    pub report: StatsReport,
    pub baseline: Option<StatsReport>,
}

impl SweepRow {
    /// Mean latency relative to the single-card baseline.
    pub fn norm_latency(&self) -> Option<f64> {
        let b = self.baseline.as_ref()?.mean_latency_us?;
        let h = self.report.mean_latency_us?;
        (b > 0.0).then(|| h / b)
    }
}

/// The experiment with `param` set to `value`.
pub fn apply(exp: &Experiment, param: SweepParam, value: f64) -> Result<Experiment, ConfigError> {
    let mut e = exp.clone();
    match param {
        SweepParam::Load => e.cfg.traffic.load = value,
        SweepParam::PacketSize => {
            if value.fract() != 0.0 || !(0.0..=f64::from(u32::MAX)).contains(&value) {
                return Err(ConfigError::Invalid(format!("packet size {value} is not a whole number of bytes")));
            }
            e.cfg.traffic.size = Dist::Fixed(value as u32);
        }
    }
    e.check()?;
    Ok(e)
}

/// Runs one experiment per value, in parallel, optionally paired with the
/// baseline. Rows come back in the order of `values`.
pub fn sweep(exp: &Experiment, param: SweepParam, values: &[f64], baseline: bool) -> Result<Vec<SweepRow>, SimError> {
    if values.is_empty() {
        return Err(ConfigError::Invalid("sweep needs at least one value".into()).into());
    }
    let up = values.windows(2).all(|w| w[0] <= w[1]);
    let down = values.windows(2).all(|w| w[0] >= w[1]);
    if !(up || down) || values.iter().any(|v| !v.is_finite()) {
        return Err(ConfigError::Invalid("sweep values must be monotone".into()).into());
    }
    let exps = values.iter().map(|&v| apply(exp, param, v)).collect::<Result<Vec<_>, _>>()?;
    let results: Vec<Result<SweepRow, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = exps
            .iter()
            .zip(values)
            .map(|(e, &v)| {
                scope.spawn(move || {
                    Ok(SweepRow {
                        param: v,
                        report: run(e)?,
                        baseline: if baseline { Some(run_baseline(e)?) } else { None },
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    results.into_iter().collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Renders rows as CSV. The `norm_latency` column is present when any row
/// carries a baseline.
pub fn render_csv(rows: &[SweepRow]) -> String {
    let norm = rows.iter().any(|r| r.baseline.is_some());
    let mut out = String::from(CSV_HEADER);
    if norm {
        out.push_str(",norm_latency");
    }
    out.push('\n');
    for r in rows {
        let s = &r.report;
        let _ = write!(
            out,
            "{},{:.6},{:.6},{},{},{},{},{},{}",
            r.param,
            s.offered_gbps,
            s.delivered_gbps,
            opt(s.mean_latency_us),
            opt(s.p50_latency_us),
            opt(s.p99_latency_us),
            s.wasted_grants,
            s.drops,
            s.max_voq_bytes
        );
        if norm {
            let _ = write!(out, ",{}", opt(r.norm_latency()));
        }
        out.push('\n');
    }
    out
}
