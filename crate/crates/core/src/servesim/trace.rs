//! Synthetic request traces and their CSV form.

use std::path::Path;

use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    /// Seconds from trace start.
    pub arrival: f64,
    pub input_len: u64,
    pub output_len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    Code,
    Reason,
    LongBench,
    File,
}

impl TraceSource {
    pub const SYNTHETIC: [TraceSource; 3] = [
        TraceSource::Code,
        TraceSource::Reason,
        TraceSource::LongBench,
    ];

    /// Mean (input, output) token lengths.
    pub fn means(self) -> Option<(f64, f64)> {
        match self {
            TraceSource::Code => Some((2071.0, 25.0)),
            TraceSource::Reason => Some((1473.0, 1293.0)),
            TraceSource::LongBench => Some((7108.0, 5.0)),
            TraceSource::File => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TraceSource::Code => "code",
            TraceSource::Reason => "reason",
            TraceSource::LongBench => "longbench",
            TraceSource::File => "file",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SimError> {
        match s.to_ascii_lowercase().as_str() {
            "code" => Ok(TraceSource::Code),
            "reason" => Ok(TraceSource::Reason),
            "longbench" => Ok(TraceSource::LongBench),
            _ => Err(SimError::UnknownSource(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Sorted by arrival, then id.
    pub requests: Vec<Request>,
    pub rate: f64,
    pub source: TraceSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    /// Log-space standard deviation of both length distributions.
    pub sigma: f64,
    /// Lengths are clamped to this many tokens.
    pub max_len: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            sigma: 0.5,
            max_len: 32_768,
        }
    }
}

fn lognormal_with_mean(mean: f64, sigma: f64) -> LogNormal<f64> {
    LogNormal::new(mean.ln() - sigma * sigma / 2.0, sigma)
        .expect("sigma is finite and non-negative")
}

/// Poisson arrivals at `rate` req/s with log-normal lengths around the
/// source's means.
pub fn gen_trace(
    source: TraceSource,
    rate: f64,
    n: usize,
    seed: u64,
    cfg: &TraceConfig,
) -> Result<Trace, SimError> {
    let (mi, mo) = source
        .means()
        .ok_or_else(|| SimError::UnknownSource(source.name().into()))?;
    if !(rate > 0.0) || !rate.is_finite() || n == 0 {
        return Err(SimError::InvalidTrace(format!(
            "rate {rate} and n {n} must be positive"
        )));
    }
    if !(cfg.sigma >= 0.0) || cfg.max_len == 0 {
        return Err(SimError::InvalidTrace(
            "sigma must be >= 0 and max_len >= 1".into(),
        ));
    }
    let mut rng = rng_for(seed, &format!("trace/{}", source.name()));
    let gap = Exp::new(rate).expect("rate > 0");
    let li = lognormal_with_mean(mi, cfg.sigma);
    let lo = lognormal_with_mean(mo, cfg.sigma);
    let clamp = |x: f64| (x.round() as u64).clamp(1, cfg.max_len);
    let mut t = 0.0;
    let mut requests = Vec::with_capacity(n);
    for id in 0..n as u64 {
        t += gap.sample(&mut rng);
        let input_len = clamp(li.sample(&mut rng));
        let output_len = clamp(lo.sample(&mut rng));
        requests.push(Request {
            id,
            arrival: t,
            input_len,
            output_len,
        });
    }
    Ok(Trace {
        requests,
        rate,
        source,
    })
}

impl Trace {
    pub fn from_requests(mut requests: Vec<Request>) -> Result<Self, SimError> {
        for r in &requests {
            if r.input_len == 0
                || r.output_len == 0
                || !(r.arrival >= 0.0)
                || !r.arrival.is_finite()
            {
                return Err(SimError::InvalidTrace(format!(
                    "request {} has a zero length or bad arrival",
                    r.id
                )));
            }
        }
        requests.sort_by(|a, b| a.arrival.total_cmp(&b.arrival).then(a.id.cmp(&b.id)));
        let span = requests.last().map_or(0.0, |r| r.arrival);
        let rate = if span > 0.0 {
            requests.len() as f64 / span
        } else {
            0.0
        };
        Ok(Trace {
            requests,
            rate,
            source: TraceSource::File,
        })
    }

    pub fn mean_lengths(&self) -> (f64, f64) {
        let n = self.requests.len().max(1) as f64;
        let i: u64 = self.requests.iter().map(|r| r.input_len).sum();
        let o: u64 = self.requests.iter().map(|r| r.output_len).sum();
        (i as f64 / n, o as f64 / n)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        for r in &self.requests {
            w.serialize(CsvRow {
                id: r.id,
                arrival_s: r.arrival,
                input_len: r.input_len,
                output_len: r.output_len,
            })
            .map_err(|e| SimError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Self, SimError> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let mut reqs = Vec::new();
        for row in r.deserialize() {
            let row: CsvRow =
                row.map_err(|e| SimError::InvalidTrace(format!("{}: {e}", path.display())))?;
            reqs.push(Request {
                id: row.id,
                arrival: row.arrival_s,
                input_len: row.input_len,
                output_len: row.output_len,
            });
        }
        Self::from_requests(reqs)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    id: u64,
    arrival_s: f64,
    input_len: u64,
    output_len: u64,
}
