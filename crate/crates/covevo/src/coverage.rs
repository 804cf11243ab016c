//! Neuron-coverage metrics over activation traces.
//!
//! All five metrics treat the hidden neurons of a network as the unit of
//! coverage (the output head never counts). Boundary metrics compare a
//! trace against an [`ActivationProfile`], the per-neuron activation range
//! observed on a reference set.
//!
//! Definitions, for a trace of instances i and neurons c with values
//! phi(i, c), neuron count N, profile bounds [L_c, H_c]:
//!
//! - NC(t): fraction of neurons with phi(i, c) > t for at least one i.
//! - TKNC(K): fraction of neurons appearing at least once among the K
//!   largest values of their layer for some instance (ties prefer the
//!   lower neuron index).
//! - KMN(k): [L_c, H_c] is cut into k equal sections; the score is the
//!   number of (neuron, section) pairs hit by any instance, divided once
//!   by k*N. Values outside [L_c, H_c] hit nothing.
//! - NBC: (|{c: some phi < L_c}| + |{c: some phi > H_c}|) / 2N, strict.
//! - SNAC: |{c: some phi > H_c}| / N, strict.

use crate::error::{Error, Result};
use crate::network::{ActivationTrace, Network};
use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Nc,
    Tknc,
    Kmn,
    Nbc,
    Snac,
}

pub const METRICS: [Metric; 5] = [Metric::Nc, Metric::Tknc, Metric::Kmn, Metric::Nbc, Metric::Snac];

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Nc => "nc",
            Metric::Tknc => "tknc",
            Metric::Kmn => "kmn",
            Metric::Nbc => "nbc",
            Metric::Snac => "snac",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        METRICS
            .iter()
            .copied()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Parse(format!("unknown coverage metric '{name}'")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoverageConfig {
    pub metric: Metric,
    /// NC activation threshold t.
    pub nc_threshold: f64,
    /// TKNC's K.
    pub top_k: usize,
    /// KMN's section count k.
    pub sections: usize,
}

impl CoverageConfig {
    pub fn new(metric: Metric) -> Self {
        CoverageConfig {
            metric,
            nc_threshold: 0.0,
            top_k: 1,
            sections: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        if self.sections == 0 {
            return Err(Error::Config("sections must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-neuron activation bounds measured on a reference set.
#[derive(Debug, Clone)]
pub struct ActivationProfile {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub source_size: usize,
}

impl ActivationProfile {
    fn check_len(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Coverage(format!(
                "profile covers {} neurons, trace has {n}",
                self.lower.len()
            )));
        }
        Ok(())
    }
}

fn check_trace(trace: &ActivationTrace) -> Result<()> {
    if trace.n_instances() == 0 || trace.n_neurons() == 0 {
        return Err(Error::Coverage("empty trace".into()));
    }
    Ok(())
}

/// Records min/max post-activation value per hidden neuron over a reference
/// set, in inference mode.
pub fn profile_bounds(network: &Network, reference: &Array2<f64>) -> Result<ActivationProfile> {
    if reference.nrows() == 0 {
        return Err(Error::Coverage("empty reference set".into()));
    }
    let (_, trace) = network.forward(reference, true)?;
    let trace = trace.expect("tracing requested");
    let n = trace.n_neurons();
    let mut lower = vec![f64::INFINITY; n];
    let mut upper = vec![f64::NEG_INFINITY; n];
    for row in trace.values.rows() {
        for (c, &v) in row.iter().enumerate() {
            lower[c] = lower[c].min(v);
            upper[c] = upper[c].max(v);
        }
    }
    Ok(ActivationProfile {
        lower,
        upper,
        source_size: reference.nrows(),
    })
}

/// Fraction of neurons driven above threshold t by at least one instance.
pub fn nc(trace: &ActivationTrace, t: f64) -> Result<f64> {
    check_trace(trace)?;
    let activated = (0..trace.n_neurons())
        .filter(|&c| trace.values.column(c).iter().any(|&v| v > t))
        .count();
    Ok(activated as f64 / trace.n_neurons() as f64)
}

/// Fraction of neurons that are among their layer's top K for some instance.
pub fn tknc(trace: &ActivationTrace, k: usize) -> Result<f64> {
    check_trace(trace)?;
    if k == 0 {
        return Err(Error::Config("top_k must be >= 1".into()));
    }
    let mut seen = vec![false; trace.n_neurons()];
    let slices = trace.layer_slices();
    for row in trace.values.rows() {
        for &(start, width) in &slices {
            let mut idx: Vec<usize> = (0..width).collect();
            // Descending by value, ascending index on ties.
            idx.sort_by(|&a, &b| {
                row[start + b]
                    .total_cmp(&row[start + a])
                    .then(a.cmp(&b))
            });
            for &p in idx.iter().take(k) {
                seen[start + p] = true;
            }
        }
    }
    Ok(seen.iter().filter(|&&s| s).count() as f64 / trace.n_neurons() as f64)
}

/// Index of the section of [lower, upper] hit by v, or None when v falls
/// outside. Sections are [lower + s*delta, lower + (s+1)*delta) for
/// s in 0..k, the last closed on the right; a collapsed range (lower ==
/// upper) puts v == lower into section 0.
fn section_of(v: f64, lower: f64, upper: f64, k: usize) -> Option<usize> {
    if v < lower || v > upper {
        return None;
    }
    if lower == upper {
        return Some(0);
    }
    let delta = (upper - lower) / k as f64;
    let s = ((v - lower) / delta).floor() as usize;
    Some(s.min(k - 1))
}

/// k-multi-section coverage: hit sections over all neurons, divided by k*N.
pub fn kmn(trace: &ActivationTrace, profile: &ActivationProfile, k: usize) -> Result<f64> {
    check_trace(trace)?;
    profile.check_len(trace.n_neurons())?;
    if k == 0 {
        return Err(Error::Config("sections must be >= 1".into()));
    }
    let n = trace.n_neurons();
    let mut hit_total = 0usize;
    let mut hit = vec![false; k];
    for c in 0..n {
        hit.fill(false);
        for &v in trace.values.column(c) {
            if let Some(s) = section_of(v, profile.lower[c], profile.upper[c], k) {
                hit[s] = true;
            }
        }
        hit_total += hit.iter().filter(|&&h| h).count();
    }
    Ok(hit_total as f64 / (k * n) as f64)
}

fn corner_counts(trace: &ActivationTrace, profile: &ActivationProfile) -> (usize, usize) {
    let mut below = 0;
    let mut above = 0;
    for c in 0..trace.n_neurons() {
        let col = trace.values.column(c);
        if col.iter().any(|&v| v < profile.lower[c]) {
            below += 1;
        }
        if col.iter().any(|&v| v > profile.upper[c]) {
            above += 1;
        }
    }
    (below, above)
}

/// Corner-case coverage: neurons pushed strictly below their lower bound or
/// strictly above their upper bound, over 2N corner regions.
pub fn nbc(trace: &ActivationTrace, profile: &ActivationProfile) -> Result<f64> {
    check_trace(trace)?;
    profile.check_len(trace.n_neurons())?;
    let (below, above) = corner_counts(trace, profile);
    Ok((below + above) as f64 / (2 * trace.n_neurons()) as f64)
}

/// Upper-corner coverage: neurons pushed strictly above their upper bound.
pub fn snac(trace: &ActivationTrace, profile: &ActivationProfile) -> Result<f64> {
    check_trace(trace)?;
    profile.check_len(trace.n_neurons())?;
    let (_, above) = corner_counts(trace, profile);
    Ok(above as f64 / trace.n_neurons() as f64)
}

/// Runs the network on the inputs with tracing (inference mode) and
/// dispatches to the configured metric.
pub fn coverage(
    config: &CoverageConfig,
    network: &Network,
    profile: &ActivationProfile,
    inputs: &Array2<f64>,
) -> Result<f64> {
    config.validate()?;
    if inputs.nrows() == 0 {
        return Err(Error::Coverage("empty input set".into()));
    }
    let (_, trace) = network.forward(inputs, true)?;
    let trace = trace.expect("tracing requested");
    metric_on_trace(config, &trace, profile)
}

/// The dispatch half of [`coverage`], for callers that already hold a trace.
pub fn metric_on_trace(
    config: &CoverageConfig,
    trace: &ActivationTrace,
    profile: &ActivationProfile,
) -> Result<f64> {
    match config.metric {
        Metric::Nc => nc(trace, config.nc_threshold),
        Metric::Tknc => tknc(trace, config.top_k),
        Metric::Kmn => kmn(trace, profile, config.sections),
        Metric::Nbc => nbc(trace, profile),
        Metric::Snac => snac(trace, profile),
    }
}
