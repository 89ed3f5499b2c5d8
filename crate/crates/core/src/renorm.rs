//! Second-stage renormalization: good dual intervals and the one-sided
//! semi-oriented percolation process they drive.
//!
//! Dual space-time is cut into intervals `I(y, i) = {y} x [iK/2, (i+1)K/2]`.
//! An interval is good when its own dual window carries no type-0 decision
//! mark and the next-lower window carries at least one type-1 mark and no
//! type-0 mark: a conduit that preserves and creates occupancy. With the
//! matched density `q(K)` the bad-interval probability has the closed form
//! `p_K`, bounded by `2 e^{-K/2}`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::CoupledTrajectory;
use crate::graph::{build_window, SiteId, WindowKind};
use crate::harris::HarrisScheme;
use crate::rng::StreamRng;
use crate::stats;

#[derive(Error, Debug)]
pub enum RenormError {
    #[error("block length {0} must be at least 1")]
    BlockTooSmall(f64),
    #[error("matched density {0} falls outside (0,1); enlarge the block")]
    DensityOutOfRange(f64),
    #[error("horizon {0} must exceed four blocks ({1})")]
    HorizonTooShort(f64, f64),
    #[error("scheme density {0} does not match the block's density {1}")]
    DensityMismatch(f64, f64),
    #[error("field does not cover levels up to {0} (has {1})")]
    FieldRange(usize, usize),
    #[error("window build failed: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("scheme error: {0}")]
    Scheme(#[from] crate::harris::SchemeError),
}

/// Spin density matched to a block length: `q = 1 + ln(1 - e^{-K/2}) / K`,
/// which makes `e^{-(1-q)K} = 1 - e^{-K/2}` an exact identity.
pub fn density_for_block(block: f64) -> Result<f64, RenormError> {
    if !(block >= 1.0) {
        return Err(RenormError::BlockTooSmall(block));
    }
    let q = 1.0 + (1.0 - (-block / 2.0).exp()).ln() / block;
    if !(0.0 < q && q < 1.0) {
        return Err(RenormError::DensityOutOfRange(q));
    }
    Ok(q)
}

/// Bad-interval probability at the matched density:
/// `p_K = 1 - e^{-(1-q)K} (1 - e^{-qK/2})`, at most `2 e^{-K/2}`.
///
/// Evaluated through the cancellation-free rearrangement
/// `e^{-K/2} + e^{-qK/2} (1 - e^{-K/2})` (expand the product and use the
/// matched-density identity); the direct form loses the bound to roundoff
/// once `p_K` drops near 1e-8.
pub fn bad_interval_prob(block: f64) -> Result<f64, RenormError> {
    let q = density_for_block(block)?;
    let half = (-block / 2.0).exp();
    let p = half + (-q * block / 2.0).exp() * (1.0 - half);
    assert!(
        p <= 2.0 * half * (1.0 + 1e-12),
        "p_K = {p} exceeds its bound at block {block}"
    );
    Ok(p)
}

/// Renormalization parameters: block length, horizon anchor and the matched
/// density. The horizon must exceed four blocks.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RenormParams {
    pub block: f64,
    pub horizon: f64,
    pub q: f64,
}

impl RenormParams {
    pub fn new(block: f64, horizon: f64) -> Result<Self, RenormError> {
        let q = density_for_block(block)?;
        if !(horizon > 4.0 * block) {
            return Err(RenormError::HorizonTooShort(horizon, 4.0 * block));
        }
        Ok(RenormParams { block, horizon, q })
    }

    /// Largest level whose two dual windows fit inside `[0, horizon]`.
    pub fn max_level(&self) -> usize {
        let levels = (2.0 * self.horizon / self.block).floor() as isize - 2;
        levels.max(0) as usize
    }
}

/// Good/bad flags per (site, level) over a site set and level range.
#[derive(Clone, Debug)]
pub struct GoodField {
    params: RenormParams,
    sites: Vec<SiteId>,
    site_pos: Vec<Option<usize>>,
    levels: usize,
    /// flags[site position][level]
    flags: Vec<Vec<bool>>,
}

impl GoodField {
    pub fn params(&self) -> &RenormParams {
        &self.params
    }

    pub fn sites(&self) -> &[SiteId] {
        &self.sites
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn covers(&self, x: SiteId) -> bool {
        self.site_pos.get(x.index()).is_some_and(Option::is_some)
    }

    /// Goodness of `I(x, level)`.
    pub fn good(&self, x: SiteId, level: usize) -> bool {
        let pos = self.site_pos[x.index()].expect("site covered by the field");
        self.flags[pos][level]
    }

    pub fn fraction_bad(&self) -> f64 {
        let total = self.flags.len() * self.levels;
        let bad = self
            .flags
            .iter()
            .flat_map(|row| row.iter())
            .filter(|&&g| !g)
            .count();
        bad as f64 / total as f64
    }

    /// Hand-built field for tests and synthetic experiments.
    pub fn from_flags(
        params: RenormParams,
        sites: Vec<SiteId>,
        flags: Vec<Vec<bool>>,
    ) -> Self {
        assert_eq!(sites.len(), flags.len());
        let levels = flags.first().map_or(0, Vec::len);
        assert!(flags.iter().all(|row| row.len() == levels));
        let max_index = sites.iter().map(|s| s.index()).max().unwrap_or(0);
        let mut site_pos = vec![None; max_index + 1];
        for (pos, s) in sites.iter().enumerate() {
            site_pos[s.index()] = Some(pos);
        }
        GoodField { params, sites, site_pos, levels, flags }
    }
}

/// Classify every interval `I(y, i)` for the given sites from the scheme's
/// marks. The scheme must have been sampled at the matched density.
pub fn classify_intervals(
    scheme: &HarrisScheme,
    sites: &[SiteId],
    params: &RenormParams,
) -> Result<GoodField, RenormError> {
    if (scheme.q() - params.q).abs() > 1e-12 {
        return Err(RenormError::DensityMismatch(scheme.q(), params.q));
    }
    let t = params.horizon;
    let half = params.block / 2.0;
    let levels = params.max_level() + 1;
    // slab i is the dual window [i*K/2, (i+1)*K/2], i.e. real
    // [t-(i+1)K/2, t-iK/2]; good(i) needs slab i free of type-0 marks and
    // slab i+1 free of type-0 with at least one type-1
    let n_slabs = levels + 1;
    let flags: Vec<Vec<bool>> = sites
        .iter()
        .map(|&y| {
            let mut no_type0 = vec![true; n_slabs];
            let mut has_type1 = vec![false; n_slabs];
            for m in scheme.site_marks(y) {
                let dual = t - m.time;
                if dual < 0.0 {
                    continue;
                }
                let slab = (dual / half).floor() as usize;
                if slab >= n_slabs {
                    continue;
                }
                if m.is_one {
                    has_type1[slab] = true;
                } else {
                    no_type0[slab] = false;
                }
            }
            (0..levels)
                .map(|i| no_type0[i] && no_type0[i + 1] && has_type1[i + 1])
                .collect()
        })
        .collect();
    Ok(GoodField::from_flags(*params, sites.to_vec(), flags))
}

/// State of the one-sided semi-oriented process on a line of positions.
#[derive(Clone, Debug)]
pub struct SemiOrientedState {
    pub origin_pos: usize,
    pub offset: usize,
    /// Occupancy per step (step 0 is the delta at the origin).
    pub steps: Vec<Vec<bool>>,
    /// First step with empty occupancy, if it happened within the run.
    pub death: Option<usize>,
    /// Rightmost occupied position per step.
    pub right_edges: Vec<Option<usize>>,
}

impl SemiOrientedState {
    pub fn survived(&self) -> bool {
        self.death.is_none()
    }
}

/// Run the semi-oriented recursion on `line` (positions -> sites) driven by
/// a good field: `xi_n(x) = 1` iff `I(line[x], offset + n)` is good and some
/// line-neighbor of `x` was occupied at `n-1`. `xi_0` is the delta at
/// `origin_pos` regardless of goodness, so an all-bad environment dies at
/// step one. Only positions with `n + d(origin, x)` even can be occupied.
pub fn run_semi_oriented(
    field: &GoodField,
    line: &[SiteId],
    origin_pos: usize,
    offset: usize,
    max_steps: usize,
) -> SemiOrientedState {
    assert!(
        offset + max_steps <= field.levels(),
        "field covers {} levels, need {}",
        field.levels(),
        offset + max_steps
    );
    let len = line.len();
    let mut cur = vec![false; len];
    cur[origin_pos] = true;
    let mut steps = vec![cur.clone()];
    let mut right_edges = vec![Some(origin_pos)];
    let mut death = None;
    for n in 1..=max_steps {
        let mut next = vec![false; len];
        let mut any = false;
        let mut right = None;
        for x in 0..len {
            // parity: occupation at step n requires n + |x - origin| even
            if (n + x.abs_diff(origin_pos)) % 2 != 0 {
                continue;
            }
            let neighbor_occupied = (x > 0 && cur[x - 1]) || (x + 1 < len && cur[x + 1]);
            if neighbor_occupied && field.good(line[x], offset + n) {
                next[x] = true;
                any = true;
                right = Some(x);
            }
        }
        steps.push(next.clone());
        right_edges.push(right);
        cur = next;
        if !any {
            death = Some(n);
            break;
        }
    }
    SemiOrientedState { origin_pos, offset, steps, death, right_edges }
}

#[derive(Clone, Debug, Serialize)]
pub struct TailPoint {
    pub n: usize,
    pub p_hat: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeathTailReport {
    pub block: f64,
    pub replicas: usize,
    pub curve: Vec<TailPoint>,
    /// Unweighted log-linear slope over positive estimates in the fit range.
    pub fitted_slope: Option<f64>,
    pub fit_range: (usize, usize),
    pub deaths: usize,
    pub survivors: usize,
}

/// Monte Carlo tail of the death time: `P(nu >= n, nu < infinity)` over
/// fresh schemes. Runs that outlive `n_max + 2` steps count as surviving.
/// The slope is an unweighted log-linear fit over the positive estimates in
/// `fit_range`; the rare deep bins carry the signal, so inverse-variance
/// weighting toward the plateau would misstate the tail.
pub fn death_tail(
    block: f64,
    replicas: usize,
    n_max: usize,
    fit_range: (usize, usize),
    seed: u64,
) -> Result<DeathTailReport, RenormError> {
    let q = density_for_block(block)?;
    let max_steps = n_max + 2;
    let horizon = ((max_steps + 3) as f64 * block / 2.0).max(4.5 * block);
    let params = RenormParams::new(block, horizon)?;
    debug_assert!(params.max_level() >= max_steps);
    let g = Arc::new(build_window(WindowKind::HalfLine, max_steps + 1)?);
    let sites: Vec<SiteId> = g.sites().collect();
    let line = sites.clone();
    let deaths: Vec<Option<usize>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let scheme = HarrisScheme::sample(
                g.clone(),
                horizon,
                q,
                StreamRng::derive_seed(seed, i as u64),
            )
            .expect("valid scheme parameters");
            let field = classify_intervals(&scheme, &sites, &params)
                .expect("matched density by construction");
            run_semi_oriented(&field, &line, 0, 0, max_steps).death
        })
        .collect();
    let n_deaths = deaths.iter().filter(|d| d.is_some()).count();
    let curve: Vec<TailPoint> = (0..=n_max)
        .map(|n| {
            let hits = deaths.iter().filter(|d| d.is_some_and(|nu| nu >= n)).count();
            let p_hat = hits as f64 / replicas as f64;
            TailPoint { n, p_hat, se: stats::binomial_se(p_hat, replicas) }
        })
        .collect();
    let fit_points: Vec<(f64, f64)> = curve
        .iter()
        .filter(|p| p.n >= fit_range.0 && p.n <= fit_range.1)
        .map(|p| (p.n as f64, p.p_hat))
        .collect();
    Ok(DeathTailReport {
        block,
        replicas,
        curve,
        fitted_slope: stats::log_slope(&fit_points),
        fit_range,
        deaths: n_deaths,
        survivors: replicas - n_deaths,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SurvivorOccupancy {
    pub block: f64,
    pub steps: usize,
    pub replicas: usize,
    pub survivors: usize,
    /// Mean occupied-position count at the final step among survivors.
    pub mean_occupied: f64,
    /// Fraction of survivors holding fewer than `steps / 5` positions then.
    pub lagging_fraction: f64,
}

/// Occupancy of surviving clusters after `steps` levels: how often does a
/// survivor touch fewer than a fifth of the reachable stretch? Larger
/// blocks should only improve this.
pub fn survivor_occupancy(
    block: f64,
    replicas: usize,
    steps: usize,
    seed: u64,
) -> Result<SurvivorOccupancy, RenormError> {
    let q = density_for_block(block)?;
    let horizon = ((steps + 4) as f64 * block / 2.0).max(4.5 * block);
    let params = RenormParams::new(block, horizon)?;
    let g = Arc::new(build_window(WindowKind::HalfLine, steps + 1)?);
    let sites: Vec<SiteId> = g.sites().collect();
    let counts: Vec<Option<usize>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let scheme = HarrisScheme::sample(
                g.clone(),
                horizon,
                q,
                StreamRng::derive_seed(seed, i as u64),
            )
            .expect("valid scheme parameters");
            let field = classify_intervals(&scheme, &sites, &params)
                .expect("matched density by construction");
            let state = run_semi_oriented(&field, &sites, 0, 0, steps);
            state
                .survived()
                .then(|| state.steps[steps].iter().filter(|&&o| o).count())
        })
        .collect();
    let survivor_counts: Vec<usize> = counts.iter().filter_map(|c| *c).collect();
    let survivors = survivor_counts.len();
    let threshold = steps as f64 / 5.0;
    let lagging = survivor_counts
        .iter()
        .filter(|&&c| (c as f64) < threshold)
        .count();
    Ok(SurvivorOccupancy {
        block,
        steps,
        replicas,
        survivors,
        mean_occupied: survivor_counts.iter().sum::<usize>() as f64 / survivors.max(1) as f64,
        lagging_fraction: lagging as f64 / survivors.max(1) as f64,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RightEdgeReport {
    pub block: f64,
    pub speed: f64,
    pub start: usize,
    pub replicas: usize,
    /// `P(r_n < speed*n + start, nu > n)` per step.
    pub curve: Vec<TailPoint>,
    pub fitted_slope: Option<f64>,
}

/// Monte Carlo tail of the lagging right edge: the process starts at line
/// position `start` and the event is a right edge below `speed*n + start`
/// while still alive at step `n`.
pub fn right_edge_stats(
    block: f64,
    speed: f64,
    start: usize,
    replicas: usize,
    n_max: usize,
    seed: u64,
) -> Result<RightEdgeReport, RenormError> {
    let q = density_for_block(block)?;
    let horizon = ((n_max + 5) as f64 * block / 2.0).max(4.5 * block);
    let params = RenormParams::new(block, horizon)?;
    let g = Arc::new(build_window(WindowKind::HalfLine, start + n_max + 1)?);
    let sites: Vec<SiteId> = g.sites().collect();
    let hits: Vec<Vec<bool>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let scheme = HarrisScheme::sample(
                g.clone(),
                horizon,
                q,
                StreamRng::derive_seed(seed, i as u64),
            )
            .expect("valid scheme parameters");
            let field = classify_intervals(&scheme, &sites, &params)
                .expect("matched density by construction");
            let state = run_semi_oriented(&field, &sites, start, 0, n_max + 1);
            (1..=n_max)
                .map(|n| {
                    let alive = state.death.map_or(true, |nu| nu > n);
                    let lagging = state
                        .right_edges
                        .get(n)
                        .copied()
                        .flatten()
                        .is_some_and(|r| (r as f64) < speed * n as f64 + start as f64);
                    alive && lagging
                })
                .collect()
        })
        .collect();
    let curve: Vec<TailPoint> = (1..=n_max)
        .map(|n| {
            let c = hits.iter().filter(|row| row[n - 1]).count();
            let p_hat = c as f64 / replicas as f64;
            TailPoint { n, p_hat, se: stats::binomial_se(p_hat, replicas) }
        })
        .collect();
    let pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.n as f64, p.p_hat)).collect();
    Ok(RightEdgeReport {
        block,
        speed,
        start,
        replicas,
        curve,
        fitted_slope: stats::log_slope(&pts),
    })
}

/// Exact reference law of the death time on a half-line of `width`
/// positions, by dynamic programming over occupied-position sets.
///
/// Each flag `J(x, n)` is read at most once by the recursion, so the
/// 1-dependent field acts on the process like iid Bernoulli(1 - p_K) flags;
/// this makes the law exactly computable and fully independent of the
/// scheme/classification code path it is used to validate. Returns
/// `P(nu >= n, nu < infinity)` for `n = 0..=n_max` (runs alive past `n_max`
/// count as surviving).
pub fn reference_death_tail(block: f64, n_max: usize, width: usize) -> Result<Vec<f64>, RenormError> {
    assert!(width <= 30, "subset masks are u32");
    let p_bad = bad_interval_prob(block)?;
    let p_good = 1.0 - p_bad;
    let mut dist: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
    dist.insert(1u32, 1.0);
    let mut death_at = vec![0.0f64; n_max + 1];
    for n in 1..=n_max {
        let mut next: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
        for (&mask, &prob) in &dist {
            let mut cands: Vec<usize> = Vec::new();
            for x in 0..width {
                if (n + x) % 2 != 0 {
                    continue;
                }
                let nb = (x > 0 && (mask >> (x - 1)) & 1 == 1)
                    || (x + 1 < width && (mask >> (x + 1)) & 1 == 1);
                if nb {
                    cands.push(x);
                }
            }
            for choice in 0u32..(1u32 << cands.len()) {
                let mut t_mask = 0u32;
                let mut p = prob;
                for (i, &x) in cands.iter().enumerate() {
                    if (choice >> i) & 1 == 1 {
                        t_mask |= 1 << x;
                        p *= p_good;
                    } else {
                        p *= p_bad;
                    }
                }
                if t_mask == 0 {
                    death_at[n] += p;
                } else {
                    *next.entry(t_mask).or_insert(0.0) += p;
                }
            }
        }
        dist = next;
    }
    Ok((0..=n_max).map(|n| death_at[n..=n_max].iter().sum()).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainEntry {
    pub start_pos: usize,
    pub start_level: usize,
    /// Death time of this leg; absent when the leg survived the run.
    pub lifetime: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ChainOutcome {
    /// A leg survived through the requested number of steps.
    Survived,
    /// Every leg died and the restart budget ran out.
    BudgetExhausted,
    /// A death step held no occupied line position to restart from.
    NoWitness,
}

#[derive(Clone, Debug, Serialize)]
pub struct SubordinateChain {
    pub entries: Vec<ChainEntry>,
    pub outcome: ChainOutcome,
}

/// Restart chain: run the semi-oriented process; on death restart from the
/// lowest occupied line position of the last alive step, at the level that
/// step occupied. Stops at the first leg that survives `survive_steps`
/// (clipped by the field's level range) or when the budget is exhausted.
pub fn subordinate_chain(
    field: &GoodField,
    line: &[SiteId],
    start_pos: usize,
    start_level: usize,
    budget: usize,
    survive_steps: usize,
) -> SubordinateChain {
    let mut entries = Vec::new();
    let mut pos = start_pos;
    let mut level = start_level;
    for _ in 0..budget {
        let steps_left = survive_steps.min(field.levels().saturating_sub(level));
        if steps_left == 0 {
            // level range exhausted without a death: treat as survival
            entries.push(ChainEntry { start_pos: pos, start_level: level, lifetime: None });
            return SubordinateChain { entries, outcome: ChainOutcome::Survived };
        }
        let state = run_semi_oriented(field, line, pos, level, steps_left);
        match state.death {
            None => {
                entries.push(ChainEntry { start_pos: pos, start_level: level, lifetime: None });
                return SubordinateChain { entries, outcome: ChainOutcome::Survived };
            }
            Some(nu) => {
                entries.push(ChainEntry {
                    start_pos: pos,
                    start_level: level,
                    lifetime: Some(nu),
                });
                let last_alive = nu - 1;
                let witness = state.steps[last_alive].iter().position(|&o| o);
                let Some(w) = witness else {
                    return SubordinateChain { entries, outcome: ChainOutcome::NoWitness };
                };
                pos = w;
                level += last_alive;
            }
        }
    }
    SubordinateChain { entries, outcome: ChainOutcome::BudgetExhausted }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TransportOutcome {
    /// Some chain interval is bad; the implication does not apply.
    BadLink { index: usize },
    /// Premise and conclusion evaluated on both marginals.
    Checked {
        /// Bottom occupancy held (premise) for eta / eta-tilde.
        eta_premise: bool,
        eta_tilde_premise: bool,
        /// Top occupancy at the anchor time, where the premise held.
        eta_propagated: bool,
        eta_tilde_propagated: bool,
    },
}

impl TransportOutcome {
    /// True when neither marginal broke the implication.
    pub fn implication_holds(&self) -> bool {
        match *self {
            TransportOutcome::BadLink { .. } => true,
            TransportOutcome::Checked {
                eta_premise,
                eta_tilde_premise,
                eta_propagated,
                eta_tilde_propagated,
            } => (!eta_premise || eta_propagated) && (!eta_tilde_premise || eta_tilde_propagated),
        }
    }
}

/// Pathwise check of the transport implication along an adjacent chain
/// `y_0 ~ y_1 ~ ... ~ y_m` with `(y_i, i)` good: occupancy of `y_m` at the
/// bottom time `t - (m + bottom_offset) K/2` forces occupancy of `y_0` at
/// `t` in the same marginal. `bottom_offset = 2` is the bookkeeping under
/// which the implication is exact; it is exposed for audit.
pub fn transport_check(
    ct: &CoupledTrajectory,
    field: &GoodField,
    chain: &[SiteId],
    bottom_offset: f64,
) -> TransportOutcome {
    assert!(!chain.is_empty());
    let params = field.params();
    let t = params.horizon;
    for (i, &y) in chain.iter().enumerate() {
        if !field.good(y, i) {
            return TransportOutcome::BadLink { index: i };
        }
    }
    let m = chain.len() - 1;
    let bottom_time = t - (m as f64 + bottom_offset) * params.block / 2.0;
    let bottom = *chain.last().unwrap();
    let top = chain[0];
    let eta_premise = ct.eta.value_at(bottom, bottom_time.max(0.0)) == 1;
    let eta_tilde_premise = ct.eta_tilde.value_at(bottom, bottom_time.max(0.0)) == 1;
    TransportOutcome::Checked {
        eta_premise,
        eta_tilde_premise,
        eta_propagated: eta_premise && ct.eta.value_at(top, t) == 1,
        eta_tilde_propagated: eta_tilde_premise && ct.eta_tilde.value_at(top, t) == 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{couple, InitialLaw};
    use crate::harris::DecisionMark;

    #[test]
    fn matched_density_values_and_identity() {
        let q10 = density_for_block(10.0).unwrap();
        assert!((q10 - 0.999_323_9).abs() < 1e-6, "q(10) = {q10}");
        // the defining identity holds to machine precision
        for k in [4.0, 10.0, 17.0, 40.0] {
            let q = density_for_block(k).unwrap();
            let lhs = (-(1.0 - q) * k).exp();
            let rhs = 1.0 - (-k / 2.0).exp();
            assert!((lhs - rhs).abs() < 1e-12, "identity at block {k}");
        }
        // monotone toward one
        let grid: Vec<f64> = [5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&k| density_for_block(k).unwrap())
            .collect();
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
        assert!(grid[3] < 1.0);
        assert!(density_for_block(0.5).is_err());
    }

    #[test]
    fn bad_interval_prob_value_and_bound() {
        // the definition 1 - e^{-(1-q)K}(1 - e^{-qK/2}) also equals
        // e^{-K/2} (1 + sqrt(1 - e^{-K/2})) after substituting q(K)
        let p10 = bad_interval_prob(10.0).unwrap();
        let alt = (-5.0f64).exp() * (1.0 + (1.0 - (-5.0f64).exp()).sqrt());
        assert!((p10 - alt).abs() < 1e-15, "p_K(10) {p10} vs algebraic {alt}");
        assert!((p10 - 0.013_452_8).abs() < 1e-6);
        for k in 4..=40 {
            let p = bad_interval_prob(k as f64).unwrap();
            assert!(p <= 2.0 * (-(k as f64) / 2.0).exp());
        }
    }

    #[test]
    fn params_require_long_horizons() {
        assert!(RenormParams::new(10.0, 50.0).is_ok());
        assert!(matches!(
            RenormParams::new(10.0, 40.0),
            Err(RenormError::HorizonTooShort(..))
        ));
    }

    #[test]
    fn markless_site_is_bad_everywhere() {
        let g = Arc::new(build_window(WindowKind::HalfLine, 2).unwrap());
        let params = RenormParams::new(4.0, 20.0).unwrap();
        let scheme =
            HarrisScheme::from_marks(g.clone(), 20.0, params.q, Vec::new()).unwrap();
        let sites: Vec<SiteId> = g.sites().collect();
        let field = classify_intervals(&scheme, &sites, &params).unwrap();
        for &s in &sites {
            for i in 0..field.levels() {
                assert!(!field.good(s, i), "condition (ii) needs a type-1 mark");
            }
        }
    }

    #[test]
    fn hand_built_good_interval() {
        // block 4, horizon 20: level 0 windows are dual [0,2] and [2,4],
        // i.e. real [18,20] and [16,18]. One type-1 mark in the lower
        // window and nothing else makes (y, 0) good.
        let g = Arc::new(build_window(WindowKind::HalfLine, 1).unwrap());
        let params = RenormParams::new(4.0, 20.0).unwrap();
        let marks = vec![vec![DecisionMark { time: 17.0, is_one: true }], Vec::new()];
        let scheme = HarrisScheme::from_marks(g.clone(), 20.0, params.q, marks).unwrap();
        let sites: Vec<SiteId> = g.sites().collect();
        let field = classify_intervals(&scheme, &sites, &params).unwrap();
        assert!(field.good(SiteId::new(0), 0));
        // a type-0 mark in the upper window of level 1 kills level 1 only
        let marks2 = vec![
            vec![
                DecisionMark { time: 15.0, is_one: false },
                DecisionMark { time: 17.0, is_one: true },
            ],
            Vec::new(),
        ];
        let scheme2 = HarrisScheme::from_marks(g, 20.0, params.q, marks2).unwrap();
        let field2 = classify_intervals(&scheme2, &sites, &params).unwrap();
        assert!(field2.good(SiteId::new(0), 0));
        assert!(!field2.good(SiteId::new(0), 1));
    }

    #[test]
    fn scheme_density_must_match() {
        let g = Arc::new(build_window(WindowKind::HalfLine, 1).unwrap());
        let params = RenormParams::new(8.0, 40.0).unwrap();
        let scheme = HarrisScheme::sample(g.clone(), 40.0, 0.5, 1).unwrap();
        let sites: Vec<SiteId> = g.sites().collect();
        assert!(matches!(
            classify_intervals(&scheme, &sites, &params),
            Err(RenormError::DensityMismatch(..))
        ));
    }

    #[test]
    fn goodness_is_one_dependent_in_levels() {
        let block = 4.0;
        let params = RenormParams::new(block, 44.0).unwrap();
        let g = Arc::new(build_window(WindowKind::HalfLine, 3).unwrap());
        let sites: Vec<SiteId> = g.sites().collect();
        let replicas = 30_000usize;
        let levels = params.max_level() + 1;
        assert!(levels >= 6);
        let samples: Vec<(bool, bool, bool, bool)> = (0..replicas)
            .into_par_iter()
            .map(|i| {
                let scheme = HarrisScheme::sample(
                    g.clone(),
                    params.horizon,
                    params.q,
                    StreamRng::derive_seed(5123, i as u64),
                )
                .unwrap();
                let field = classify_intervals(&scheme, &sites, &params).unwrap();
                let y = SiteId::new(1);
                (
                    field.good(y, 0),
                    field.good(y, 2),
                    field.good(y, 5),
                    field.good(SiteId::new(2), 0),
                )
            })
            .collect();
        let corr = |pick: &dyn Fn(&(bool, bool, bool, bool)) -> (bool, bool)| -> f64 {
            let xs: Vec<f64> = samples.iter().map(|s| f64::from(pick(s).0)).collect();
            let ys: Vec<f64> = samples.iter().map(|s| f64::from(pick(s).1)).collect();
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = ys.iter().sum::<f64>() / ys.len() as f64;
            let cov: f64 =
                xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
            let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
            let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>();
            cov / (vx.sqrt() * vy.sqrt())
        };
        let three_se = 3.0 / (replicas as f64).sqrt();
        // same site, levels two apart: independent
        assert!(corr(&|s| (s.0, s.1)).abs() <= three_se);
        // same site, far levels: independent
        assert!(corr(&|s| (s.1, s.2)).abs() <= three_se);
        // different sites: independent
        assert!(corr(&|s| (s.0, s.3)).abs() <= three_se);
    }

    fn all_good_field(params: RenormParams, len: usize, levels: usize) -> (GoodField, Vec<SiteId>) {
        let sites: Vec<SiteId> = (0..len).map(SiteId::new).collect();
        let flags = vec![vec![true; levels]; len];
        (GoodField::from_flags(params, sites.clone(), flags), sites)
    }

    #[test]
    fn all_bad_environment_dies_at_step_one() {
        let params = RenormParams::new(4.0, 20.0).unwrap();
        let sites: Vec<SiteId> = (0..4).map(SiteId::new).collect();
        let flags = vec![vec![false; 4]; 4];
        let field = GoodField::from_flags(params, sites.clone(), flags);
        let state = run_semi_oriented(&field, &sites, 0, 0, 4);
        assert_eq!(state.death, Some(1));
        assert_eq!(state.steps.len(), 2);
    }

    #[test]
    fn all_good_environment_spreads_ballistically() {
        let params = RenormParams::new(4.0, 60.0).unwrap();
        let (field, sites) = all_good_field(params, 9, 10);
        let state = run_semi_oriented(&field, &sites, 0, 0, 8);
        assert!(state.survived());
        for (n, step) in state.steps.iter().enumerate() {
            for (x, &occ) in step.iter().enumerate() {
                let reachable = x <= n && (n + x) % 2 == 0;
                assert_eq!(occ, reachable, "step {n} position {x}");
            }
            assert_eq!(state.right_edges[n], Some(n.min(8)).filter(|_| n <= 8));
        }
    }

    #[test]
    fn parity_invariant_holds_on_random_fields() {
        let params = RenormParams::new(4.0, 40.0).unwrap();
        let mut rng = StreamRng::new(31);
        for _ in 0..50 {
            let len = 7;
            let levels = 8;
            let sites: Vec<SiteId> = (0..len).map(SiteId::new).collect();
            let flags: Vec<Vec<bool>> = (0..len)
                .map(|_| (0..levels).map(|_| rng.next_bool(0.7)).collect())
                .collect();
            let field = GoodField::from_flags(params, sites.clone(), flags);
            let origin = rng.next_below(len as u64) as usize;
            let state = run_semi_oriented(&field, &sites, origin, 0, levels - 1);
            for (n, step) in state.steps.iter().enumerate() {
                for (x, &occ) in step.iter().enumerate() {
                    if occ {
                        assert_eq!((n + x.abs_diff(origin)) % 2, 0);
                    }
                }
            }
        }
    }

    #[test]
    fn death_tail_curve_is_monotone() {
        let report = death_tail(6.0, 20_000, 6, (1, 6), 777).unwrap();
        assert!(report.curve[0].p_hat <= 1.0);
        for w in report.curve.windows(2) {
            assert!(w[1].p_hat <= w[0].p_hat + 1e-12);
        }
        assert_eq!(report.deaths + report.survivors, 20_000);
    }

    #[test]
    fn death_tail_matches_the_exact_reference_law() {
        // full pipeline (scheme -> classify -> run) against the transfer-DP
        // law with iid-acting flags, at a death-rich block size
        let block = 6.0;
        let replicas = 150_000;
        let exact = reference_death_tail(block, 8, 12).unwrap();
        let mc = death_tail(block, replicas, 6, (1, 6), 5150).unwrap();
        for p in &mc.curve {
            let e = exact[p.n];
            assert!(
                (p.p_hat - e).abs() <= 3.0 * p.se.max(1e-9),
                "n={} mc={} exact={} se={}",
                p.n,
                p.p_hat,
                e,
                p.se
            );
        }
    }

    #[test]
    fn survivor_occupancy_improves_with_block_size() {
        let small = survivor_occupancy(5.0, 20_000, 10, 606).unwrap();
        let large = survivor_occupancy(8.0, 20_000, 10, 606).unwrap();
        assert!(small.survivors > 1000 && large.survivors > 1000);
        // larger blocks mean fewer holes: mean occupancy up, lagging down
        assert!(large.mean_occupied >= small.mean_occupied);
        let se = (small.lagging_fraction * (1.0 - small.lagging_fraction)
            / small.survivors as f64)
            .sqrt()
            .max(1.0 / small.survivors as f64);
        assert!(
            large.lagging_fraction <= small.lagging_fraction + 3.0 * se,
            "lagging fraction rose: {} -> {}",
            small.lagging_fraction,
            large.lagging_fraction
        );
    }

    #[test]
    fn right_edge_lag_decays() {
        let report = right_edge_stats(8.0, 0.5, 0, 200_000, 5, 4242).unwrap();
        // odd steps below speed/2 + 0 are parity-impossible while alive at
        // n=1; the curve must decay overall
        let slope = report.fitted_slope.expect("positive bins at small n");
        assert!(slope < 0.0, "slope {slope}");
        let positive: Vec<&TailPoint> =
            report.curve.iter().filter(|p| p.p_hat > 0.0).collect();
        assert!(positive.len() >= 2, "need at least two positive bins");
    }

    #[test]
    fn chain_with_surviving_first_leg_has_one_entry() {
        let params = RenormParams::new(4.0, 60.0).unwrap();
        let (field, sites) = all_good_field(params, 8, 12);
        let chain = subordinate_chain(&field, &sites, 0, 0, 5, 8);
        assert_eq!(chain.outcome, ChainOutcome::Survived);
        assert_eq!(chain.entries.len(), 1);
        assert!(chain.entries[0].lifetime.is_none());
    }

    #[test]
    fn all_bad_chain_exhausts_its_budget() {
        let params = RenormParams::new(4.0, 60.0).unwrap();
        let sites: Vec<SiteId> = (0..6).map(SiteId::new).collect();
        let flags = vec![vec![false; 12]; 6];
        let field = GoodField::from_flags(params, sites.clone(), flags);
        let chain = subordinate_chain(&field, &sites, 0, 0, 7, 8);
        assert_eq!(chain.outcome, ChainOutcome::BudgetExhausted);
        assert_eq!(chain.entries.len(), 7);
        for e in &chain.entries {
            assert_eq!(e.lifetime, Some(1));
            assert_eq!(e.start_pos, 0);
            assert_eq!(e.start_level, 0);
        }
    }

    #[test]
    fn transport_skips_chains_with_bad_links() {
        let params = RenormParams::new(4.0, 20.0).unwrap();
        let sites: Vec<SiteId> = (0..3).map(SiteId::new).collect();
        let mut flags = vec![vec![true; 3]; 3];
        flags[1][1] = false;
        let field = GoodField::from_flags(params, sites.clone(), flags);
        let g = Arc::new(build_window(WindowKind::HalfLine, 2).unwrap());
        let scheme = Arc::new(HarrisScheme::sample(g, 20.0, params.q, 1).unwrap());
        let ct = couple(
            &InitialLaw::Delta(SiteId::new(0)),
            &InitialLaw::Delta(SiteId::new(0)),
            &scheme,
            0,
            0,
        );
        let chain = [SiteId::new(0), SiteId::new(1)];
        assert_eq!(
            transport_check(&ct, &field, &chain, 2.0),
            TransportOutcome::BadLink { index: 1 }
        );
    }

    #[test]
    fn transport_implication_holds_pathwise() {
        // mass test: on real schemes at the matched density, whenever every
        // chain interval is good and the bottom site is occupied at the
        // bottom time, the top site is occupied at the anchor time
        let block = 3.0;
        let horizon = 24.0;
        let params = RenormParams::new(block, horizon).unwrap();
        let g = Arc::new(build_window(WindowKind::HalfLine, 6).unwrap());
        let sites: Vec<SiteId> = g.sites().collect();
        let mut checked = 0usize;
        for i in 0..4000u64 {
            let scheme = Arc::new(
                HarrisScheme::sample(
                    g.clone(),
                    horizon,
                    params.q,
                    StreamRng::derive_seed(9090, i),
                )
                .unwrap(),
            );
            let field = classify_intervals(&scheme, &sites, &params).unwrap();
            let ct = couple(
                &InitialLaw::BernoulliConditioned(params.q),
                &InitialLaw::BernoulliConditioned(params.q),
                &scheme,
                StreamRng::derive_seed(9091, i),
                StreamRng::derive_seed(9092, i),
            );
            for m in 0..=2usize {
                let chain: Vec<SiteId> = (0..=m).map(SiteId::new).collect();
                let outcome = transport_check(&ct, &field, &chain, 2.0);
                assert!(
                    outcome.implication_holds(),
                    "transport violated at replica {i}, chain length {}: {outcome:?}",
                    m + 1
                );
                if let TransportOutcome::Checked { eta_premise, .. } = outcome {
                    if eta_premise {
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 100, "premise held only {checked} times");
    }
}
