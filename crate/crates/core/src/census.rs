//! Third-stage glue: do dual paths meet good percolating intervals, and
//! does the whole construction produce exponential activation decay?
//!
//! [`encounter_census`] enumerates the dual paths of an anchor over the top
//! window `((1-sigma)t, t)`, finds the first good renormalized interval each
//! path touches, runs the semi-oriented process from that interval and
//! reports whether the cluster survives to the dual quarter-horizon level and
//! whether both marginals carried a particle at the touch.
//! [`assembly_experiment`] measures the activation-failure probability over
//! a horizon grid and fits its exponential decay.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dual::{enumerate_dual_paths, DualPath};
use crate::dynamics::{couple, CoupledTrajectory, InitialLaw};
use crate::graph::{extend_half_line, GraphView, HalfLine, SiteId};
use crate::harris::HarrisScheme;
use crate::renorm::{run_semi_oriented, GoodField};
use crate::rng::StreamRng;
use crate::stats::{self, FitPoint, FitResult};

#[derive(Error, Debug)]
pub enum CensusError {
    #[error("sigma must lie in (0, 1/4), got {0}")]
    BadSigma(f64),
    #[error("dual error: {0}")]
    Dual(#[from] crate::dual::DualError),
    #[error("renorm error: {0}")]
    Renorm(#[from] crate::renorm::RenormError),
    #[error("graph error: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("scheme error: {0}")]
    Scheme(#[from] crate::harris::SchemeError),
    #[error(
        "light-cone margin violated: distance {found} from x or y to the window \
         boundary is below the required {required} for horizon {horizon}"
    )]
    MarginViolated { found: usize, required: usize, horizon: f64 },
    #[error("need at least one horizon in the grid")]
    EmptyGrid,
}

/// First good interval touched by one dual path, with its downstream fate.
#[derive(Clone, Debug, Serialize)]
pub struct EncounterRecord {
    pub path_index: usize,
    pub site: SiteId,
    pub level: usize,
    /// Latest real time at which the path sits on the interval.
    pub touch_time: f64,
    /// Semi-oriented cluster from this interval reaches the dual
    /// quarter-horizon level.
    pub survives: bool,
    /// Both marginals occupied at the site somewhere inside the overlap.
    pub agreement: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CensusSummary {
    pub n_paths: usize,
    pub truncated: bool,
    pub no_good_encounter: usize,
    pub surviving_encounters: usize,
    pub agreement_encounters: usize,
    /// Fraction of paths lacking a good surviving encounter.
    pub fail_fraction: f64,
}

#[derive(Debug)]
pub struct EncounterCensus {
    pub records: Vec<EncounterRecord>,
    pub summary: CensusSummary,
}

/// Dual levels (with their real-time windows) overlapped by a piece of a
/// path sitting on one site over real `(lo, hi]`.
fn levels_touching(lo: f64, hi: f64, t: f64, half: f64, max_level: usize) -> (usize, usize) {
    // level i covers real [t-(i+1)h, t-ih]
    let first = ((t - hi) / half).floor().max(0.0) as usize;
    let last = (((t - lo) / half).ceil() as usize).saturating_sub(1);
    (first.min(max_level), last.min(max_level))
}

/// For each enumerated path, the first (lowest-level) good interval it
/// touches, whether that interval's cluster survives to the dual level
/// `floor(t/(2K))`, and whether both marginals were one at the touch.
pub fn encounter_census(
    ct: &CoupledTrajectory,
    field: &GoodField,
    hl: &HalfLine,
    x: SiteId,
    sigma: f64,
    cap: usize,
) -> Result<EncounterCensus, CensusError> {
    if !(sigma > 0.0 && sigma < 0.25) {
        return Err(CensusError::BadSigma(sigma));
    }
    let scheme = ct.scheme();
    let g = scheme.graph();
    let params = *field.params();
    let t = params.horizon;
    let half = params.block / 2.0;
    let cutoff = (1.0 - sigma) * t;
    let survive_level = (t / (2.0 * params.block)).floor() as usize;
    let (paths, truncated) = enumerate_dual_paths(scheme, x, t, cutoff, cap)?;
    let mut line_cache: HashMap<SiteId, Vec<SiteId>> = HashMap::new();
    let mut records = Vec::new();
    let mut no_good = 0usize;
    for (idx, path) in paths.iter().enumerate() {
        match first_good_encounter(path, field, t, half) {
            None => no_good += 1,
            Some((site, level, lo, hi)) => {
                let line = line_cache.entry(site).or_insert_with(|| {
                    extend_half_line(g, site, hl)
                        .expect("window is connected")
                        .sequence()
                });
                let steps_needed = survive_level.saturating_sub(level);
                let steps = steps_needed.min(field.levels().saturating_sub(level).saturating_sub(1));
                let state = run_semi_oriented(field, line, 0, level, steps);
                let survives = state.survived();
                let agreement = crate::dual::agreement_probe(ct, site, lo, hi);
                records.push(EncounterRecord {
                    path_index: idx,
                    site,
                    level,
                    touch_time: hi,
                    survives,
                    agreement,
                });
            }
        }
    }
    let surviving = records.iter().filter(|r| r.survives).count();
    let agreement = records.iter().filter(|r| r.agreement).count();
    let fail = paths.len() - surviving;
    let summary = CensusSummary {
        n_paths: paths.len(),
        truncated,
        no_good_encounter: no_good,
        surviving_encounters: surviving,
        agreement_encounters: agreement,
        fail_fraction: fail as f64 / paths.len().max(1) as f64,
    };
    Ok(EncounterCensus { records, summary })
}

/// Scan the path's constant pieces in dual order and return the first good
/// interval `(site, level)` with the real overlap `(lo, hi]` of the touch.
fn first_good_encounter(
    path: &DualPath,
    field: &GoodField,
    t: f64,
    half: f64,
) -> Option<(SiteId, usize, f64, f64)> {
    let max_level = field.levels().saturating_sub(1);
    let mut best: Option<(usize, SiteId, f64, f64)> = None;
    let mut hi = t;
    let mut site = path.anchor;
    let consider = |site: SiteId, lo: f64, hi: f64, best: &mut Option<(usize, SiteId, f64, f64)>| {
        if !field.covers(site) {
            return;
        }
        let (first, last) = levels_touching(lo, hi, t, half, max_level);
        for level in first..=last {
            if field.good(site, level) {
                // real overlap of the piece with the interval's window
                let w_lo = (t - (level + 1) as f64 * half).max(lo);
                let w_hi = (t - level as f64 * half).min(hi);
                if best.is_none() || level < best.unwrap().0 {
                    *best = Some((level, site, w_lo, w_hi));
                }
                break;
            }
        }
    };
    for j in &path.jumps {
        consider(site, j.time, hi, &mut best);
        hi = j.time;
        site = j.site;
    }
    consider(site, path.cutoff, hi, &mut best);
    best.map(|(level, site, lo, hi)| (site, level, lo, hi))
}

#[derive(Clone, Debug, Serialize)]
pub struct AssemblyPoint {
    pub horizon: f64,
    pub failures: usize,
    pub replicas: usize,
    pub p_hat: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssemblyReport {
    pub q: f64,
    pub sigma: f64,
    pub points: Vec<AssemblyPoint>,
    pub fit: Option<FitResult>,
    /// Smallest distance from `{x, y}` to a clipped boundary vertex.
    pub margin: usize,
    pub margin_required: usize,
}

/// Activation-failure decay: couple the point mass at `y` with the
/// conditioned product law, and estimate `P(x not activated at t)` for each
/// horizon in the grid. The window must keep the light cones of `x` and `y`
/// interior: their distance to the boundary must be at least
/// `margin_factor * max(t)`.
#[allow(clippy::too_many_arguments)]
pub fn assembly_experiment(
    g: &Arc<GraphView>,
    y: SiteId,
    x: SiteId,
    q: f64,
    horizons: &[f64],
    sigma: f64,
    replicas: usize,
    margin_factor: f64,
    seed: u64,
) -> Result<AssemblyReport, CensusError> {
    if horizons.is_empty() {
        return Err(CensusError::EmptyGrid);
    }
    if !(sigma > 0.0 && sigma < 0.25) {
        return Err(CensusError::BadSigma(sigma));
    }
    let t_max = horizons.iter().cloned().fold(0.0f64, f64::max);
    let d_boundary = g.boundary_distances();
    let margin = d_boundary[x.index()].min(d_boundary[y.index()]);
    let required = (margin_factor * t_max).ceil() as usize;
    if margin < required {
        return Err(CensusError::MarginViolated { found: margin, required, horizon: t_max });
    }
    let mut points = Vec::with_capacity(horizons.len());
    for (k, &t) in horizons.iter().enumerate() {
        let failures: usize = (0..replicas)
            .into_par_iter()
            .map(|i| {
                let rep = (k * replicas + i) as u64;
                let scheme = Arc::new(
                    HarrisScheme::sample(g.clone(), t, q, StreamRng::derive_seed(seed, rep))
                        .expect("valid scheme parameters"),
                );
                let ct = couple(
                    &InitialLaw::Delta(y),
                    &InitialLaw::BernoulliConditioned(q),
                    &scheme,
                    StreamRng::derive_seed(seed ^ 0xA5A5_A5A5, rep),
                    StreamRng::derive_seed(seed ^ 0x5A5A_5A5A, rep),
                );
                usize::from(!ct.is_activated_at(x, t))
            })
            .sum();
        let p_hat = failures as f64 / replicas as f64;
        points.push(AssemblyPoint {
            horizon: t,
            failures,
            replicas,
            p_hat,
            se: stats::binomial_se(p_hat, replicas),
        });
    }
    let fit_points: Vec<FitPoint> = points
        .iter()
        .map(|p| FitPoint { x: p.horizon, estimate: p.p_hat, se: p.se })
        .collect();
    let fit = stats::fit_exponential(&fit_points).ok();
    Ok(AssemblyReport {
        q,
        sigma,
        points,
        fit,
        margin,
        margin_required: required,
    })
}
