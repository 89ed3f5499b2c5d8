//! Reversed-time dual paths and their discrete codings.
//!
//! A dual path anchored at `(x, t)` with cutoff `tau` runs backwards in real
//! time: at each decision time of its current site inside `(tau, t)` it may
//! hop to a neighbor. A path is activated when it meets a space-time point
//! where both coupled marginals carry a particle. "All dual paths activated"
//! is an executable sufficient condition for the anchor to be activated, and
//! the converse construction that produces a non-activated witness path is
//! implemented exactly as the proof prescribes.
//!
//! Jump times are stored in real time (they are exact decision-mark values);
//! dual times are derived views.

use num_bigint::BigUint;
use thiserror::Error;

use crate::dynamics::{CoupledTrajectory, Trajectory};
use crate::graph::SiteId;
use crate::harris::HarrisScheme;

#[derive(Error, Debug)]
pub enum DualError {
    #[error("cutoff {0} must satisfy 0 < cutoff < t = {1} <= horizon = {2}")]
    BadCutoff(f64, f64, f64),
    #[error(
        "no disagreeing neighbor at a decision that created disagreement; \
         the constructive recursion is broken"
    )]
    NoDisagreeingNeighbor,
    #[error("coding does not correspond to a path on this scheme")]
    BadCoding,
}

/// One backward jump: at real time `time` (a decision time of the previous
/// site) the path moves to `site`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualJump {
    pub time: f64,
    pub site: SiteId,
}

/// Reversed-time piecewise-constant path anchored at `(anchor, anchor_time)`
/// with cutoff `cutoff`. Jumps are in decreasing real time order.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPath {
    pub anchor: SiteId,
    pub anchor_time: f64,
    pub cutoff: f64,
    pub jumps: Vec<DualJump>,
}

impl DualPath {
    pub fn constant(anchor: SiteId, anchor_time: f64, cutoff: f64) -> Self {
        DualPath { anchor, anchor_time, cutoff, jumps: Vec::new() }
    }

    /// Number of jumps.
    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    /// Site occupied at real time `r` (the path is right-continuous in dual
    /// time, so at a jump time the path is already at the new site).
    pub fn site_at_real(&self, r: f64) -> SiteId {
        let mut site = self.anchor;
        for j in &self.jumps {
            if j.time >= r {
                site = j.site;
            } else {
                break;
            }
        }
        site
    }

    /// Dual jump times `s_k = t - r_k`, increasing.
    pub fn dual_jump_times(&self) -> Vec<f64> {
        self.jumps.iter().map(|j| self.anchor_time - j.time).collect()
    }

    /// Constant pieces as `(site, real_lo, real_hi, closed_right)` in
    /// decreasing time order. The first piece ends just below the anchor
    /// time (dual time zero is excluded), the last one starts at the cutoff
    /// (dual time `t - tau` is included).
    fn pieces(&self) -> Vec<(SiteId, f64, f64, bool)> {
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        let mut hi = self.anchor_time;
        let mut site = self.anchor;
        let mut closed_right = false; // the anchor time itself is excluded
        for j in &self.jumps {
            out.push((site, j.time, hi, closed_right));
            hi = j.time;
            site = j.site;
            closed_right = true;
        }
        out.push((site, self.cutoff, hi, closed_right));
        out
    }

    /// Check the structural invariants against a scheme: jumps strictly
    /// decreasing in `(cutoff, t)`, each at a decision time of the previous
    /// site, consecutive sites adjacent.
    pub fn validate(&self, scheme: &HarrisScheme) -> bool {
        let g = scheme.graph();
        let mut prev_site = self.anchor;
        let mut upper = self.anchor_time;
        for j in &self.jumps {
            if !(self.cutoff < j.time && j.time < upper) {
                return false;
            }
            if !g.neighbors(prev_site).contains(&j.site) {
                return false;
            }
            if !scheme
                .site_marks(prev_site)
                .iter()
                .any(|m| m.time == j.time)
            {
                return false;
            }
            prev_site = j.site;
            upper = j.time;
        }
        true
    }
}

fn check_window(scheme: &HarrisScheme, t: f64, cutoff: f64) -> Result<(), DualError> {
    if !(0.0 < cutoff && cutoff < t && t <= scheme.horizon()) {
        return Err(DualError::BadCutoff(cutoff, t, scheme.horizon()));
    }
    Ok(())
}

/// Depth-first enumeration of every dual path of `(x, t)` above `cutoff`.
/// The constant path is always included. Enumeration stops after `cap`
/// paths and reports truncation.
pub fn enumerate_dual_paths(
    scheme: &HarrisScheme,
    x: SiteId,
    t: f64,
    cutoff: f64,
    cap: usize,
) -> Result<(Vec<DualPath>, bool), DualError> {
    check_window(scheme, t, cutoff)?;
    let g = scheme.graph();
    let mut out = Vec::new();
    let mut truncated = false;
    let mut stack: Vec<DualJump> = Vec::new();

    fn recurse(
        scheme: &HarrisScheme,
        g: &crate::graph::GraphView,
        x: SiteId,
        t: f64,
        cutoff: f64,
        cap: usize,
        site: SiteId,
        upper: f64,
        stack: &mut Vec<DualJump>,
        out: &mut Vec<DualPath>,
        truncated: &mut bool,
    ) {
        if out.len() >= cap {
            *truncated = true;
            return;
        }
        out.push(DualPath {
            anchor: x,
            anchor_time: t,
            cutoff,
            jumps: stack.clone(),
        });
        // next jump: any remaining decision time of the current site, any neighbor
        let marks: Vec<f64> = scheme
            .range(site, cutoff, upper)
            .iter()
            .map(|m| m.time)
            .filter(|&r| r < upper)
            .collect();
        for &r in marks.iter().rev() {
            for &nb in g.neighbors(site) {
                if *truncated && out.len() >= cap {
                    return;
                }
                stack.push(DualJump { time: r, site: nb });
                recurse(scheme, g, x, t, cutoff, cap, nb, r, stack, out, truncated);
                stack.pop();
            }
        }
    }

    recurse(
        scheme, g, x, t, cutoff, cap, x, t, &mut stack, &mut out, &mut truncated,
    );
    Ok((out, truncated))
}

/// Is there a real time inside a piece where both marginals are one at
/// `site`? `lo` is always a valid sample (right continuity extends its value
/// forward); flips of either marginal inside the piece are the only other
/// candidates.
fn agreement_at_one_within(
    ct: &CoupledTrajectory,
    site: SiteId,
    lo: f64,
    hi: f64,
    closed_right: bool,
) -> bool {
    let both_one = |r: f64| {
        ct.eta.value_at(site, r) == 1 && ct.eta_tilde.value_at(site, r) == 1
    };
    if both_one(lo) {
        return true;
    }
    let scan = |tr: &Trajectory| {
        tr.flips()
            .iter()
            .filter(|f| {
                f.site == site && f.time > lo && (f.time < hi || (closed_right && f.time == hi))
            })
            .any(|f| both_one(f.time))
    };
    scan(&ct.eta) || scan(&ct.eta_tilde)
}

/// Whether both marginals are one at `site` at some real time in `(lo, hi]`.
pub fn agreement_probe(ct: &CoupledTrajectory, site: SiteId, lo: f64, hi: f64) -> bool {
    agreement_at_one_within(ct, site, lo, hi, true)
}

/// Whether the path meets a point where both marginals are one.
pub fn is_activated_path(ct: &CoupledTrajectory, path: &DualPath) -> bool {
    path.pieces()
        .iter()
        .any(|&(site, lo, hi, closed_right)| {
            agreement_at_one_within(ct, site, lo, hi, closed_right)
        })
}

#[derive(Clone, Copy, Debug)]
pub struct ActivationAudit {
    pub n_paths: usize,
    pub truncated: bool,
    pub all_paths_activated: bool,
    pub t_activated: bool,
}

/// Enumerate, test every path, and compare with direct activation of the
/// anchor. On untruncated runs `all_paths_activated` implies `t_activated`;
/// the audit returns both flags so mass tests can assert it.
pub fn audit_activation(
    ct: &CoupledTrajectory,
    x: SiteId,
    t: f64,
    cutoff: f64,
    cap: usize,
) -> Result<ActivationAudit, DualError> {
    let (paths, truncated) = enumerate_dual_paths(ct.scheme(), x, t, cutoff, cap)?;
    let all = paths.iter().all(|p| is_activated_path(ct, p));
    Ok(ActivationAudit {
        n_paths: paths.len(),
        truncated,
        all_paths_activated: all,
        t_activated: ct.is_activated_at(x, t),
    })
}

/// Constructive witness: when `x` is not activated at `t`, follow backwards
/// in time the decision that created the lasting disagreement at the current
/// site and hop to a neighbor on which the marginals disagree there.
/// Returns `None` exactly when `x` is activated at `t`.
///
/// The jump time is the latest decision of the current site in the window
/// whose pre-decision values agree and post-decision values disagree. At
/// such a decision exactly one marginal satisfies the constraint, so a
/// disagreeing neighbor must exist; failing to find one is an internal
/// inconsistency, not a user error.
pub fn find_non_activated_path(
    ct: &CoupledTrajectory,
    x: SiteId,
    t: f64,
    cutoff: f64,
) -> Result<Option<DualPath>, DualError> {
    check_window(ct.scheme(), t, cutoff)?;
    if ct.is_activated_at(x, t) {
        return Ok(None);
    }
    let scheme = ct.scheme();
    let g = scheme.graph();
    let mut site = x;
    let mut upper = t;
    let mut jumps = Vec::new();
    loop {
        let marks = scheme.range(site, cutoff, upper);
        let mut jump_time = None;
        for m in marks.iter().rev() {
            if m.time >= upper {
                continue;
            }
            let pre_agree = ct.eta.value_before(site, m.time)
                == ct.eta_tilde.value_before(site, m.time);
            if pre_agree {
                // the decision at m created the disagreement that persists
                // up to `upper`
                jump_time = Some(m.time);
                break;
            }
        }
        let Some(r) = jump_time else {
            // the marginals disagree at `site` throughout (cutoff, upper):
            // freeze here and the whole path is disagreement-only
            break;
        };
        let nb = g
            .neighbors(site)
            .iter()
            .copied()
            .find(|&n| ct.eta.value_at(n, r) != ct.eta_tilde.value_at(n, r))
            .ok_or(DualError::NoDisagreeingNeighbor)?;
        jumps.push(DualJump { time: r, site: nb });
        site = nb;
        upper = r;
    }
    Ok(Some(DualPath { anchor: x, anchor_time: t, cutoff, jumps }))
}

/// Site sequence with consecutive entries equal or adjacent; entry `i` is
/// the path's site after its `i`-th decision epoch. Reconstructs the path
/// uniquely on the same scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicCoding {
    pub sites: Vec<SiteId>,
}

impl BasicCoding {
    /// The coding value `|X|`.
    pub fn value(&self) -> usize {
        self.sites.len() - 1
    }
}

/// Walk the path through every decision epoch of its trace and record
/// stay/jump decisions.
pub fn code_path(path: &DualPath, scheme: &HarrisScheme) -> BasicCoding {
    let mut sites = vec![path.anchor];
    let mut site = path.anchor;
    let mut upper = path.anchor_time;
    let mut jump_iter = path.jumps.iter().peekable();
    loop {
        // latest decision of the current site strictly below `upper`
        let next_epoch = scheme
            .range(site, path.cutoff, upper)
            .iter()
            .rev()
            .map(|m| m.time)
            .find(|&r| r < upper);
        let Some(r) = next_epoch else { break };
        if let Some(j) = jump_iter.peek() {
            debug_assert!(j.time <= r, "jump skipped a decision epoch");
            if j.time == r {
                site = j.site;
                jump_iter.next();
                sites.push(site);
                upper = r;
                continue;
            }
        }
        sites.push(site); // stayed through this epoch
        upper = r;
    }
    debug_assert!(jump_iter.next().is_none());
    BasicCoding { sites }
}

/// Inverse of [`code_path`] on the same scheme.
pub fn decode_coding(
    coding: &BasicCoding,
    scheme: &HarrisScheme,
    anchor_time: f64,
    cutoff: f64,
) -> Result<DualPath, DualError> {
    check_window(scheme, anchor_time, cutoff)?;
    let g = scheme.graph();
    let anchor = coding.sites[0];
    let mut jumps = Vec::new();
    let mut site = anchor;
    let mut upper = anchor_time;
    for &next in &coding.sites[1..] {
        let r = scheme
            .range(site, cutoff, upper)
            .iter()
            .rev()
            .map(|m| m.time)
            .find(|&r| r < upper)
            .ok_or(DualError::BadCoding)?;
        if next != site {
            if !g.neighbors(site).contains(&next) {
                return Err(DualError::BadCoding);
            }
            jumps.push(DualJump { time: r, site: next });
            site = next;
        }
        upper = r;
    }
    Ok(DualPath { anchor, anchor_time, cutoff, jumps })
}

/// Per-level visit counts of a coding: level `i` covers dual time
/// `[(i-1)K/2, iK/2)` and a visit straddling a boundary is attributed to the
/// level where it starts (the earlier one).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skeleton {
    pub counts: Vec<u64>,
}

impl Skeleton {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Dual times of the path's decision epochs (the start of each coded
/// visit): `0` for the anchor visit, then one entry per epoch on the trace.
fn epoch_dual_times(path: &DualPath, scheme: &HarrisScheme) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut site = path.anchor;
    let mut upper = path.anchor_time;
    let mut jump_iter = path.jumps.iter().peekable();
    loop {
        let next_epoch = scheme
            .range(site, path.cutoff, upper)
            .iter()
            .rev()
            .map(|m| m.time)
            .find(|&r| r < upper);
        let Some(r) = next_epoch else { break };
        if let Some(j) = jump_iter.peek() {
            if j.time == r {
                site = j.site;
                jump_iter.next();
            }
        }
        out.push(path.anchor_time - r);
        upper = r;
    }
    out
}

/// Skeleton of a coded path: `ceil(t / 2K)` levels of dual length `K/2`,
/// each counting the visits that start inside it. Epochs beyond the last
/// level saturate into it (only relevant for cutoffs below `3t/4`).
pub fn skeleton_of(
    coding: &BasicCoding,
    path: &DualPath,
    scheme: &HarrisScheme,
    block: f64,
    t: f64,
) -> Skeleton {
    let levels = (t / (2.0 * block)).ceil().max(1.0) as usize;
    let half = block / 2.0;
    let mut counts = vec![0u64; levels];
    for dual in epoch_dual_times(path, scheme) {
        let level = ((dual / half).floor() as usize).min(levels - 1);
        counts[level] += 1;
    }
    debug_assert_eq!(counts.iter().sum::<u64>() as usize, coding.sites.len());
    Skeleton { counts }
}

/// Number of skeletons with `levels` levels and total visit count at most
/// `sum_cap`: the lattice-path count `C(sum_cap + levels, levels)`.
pub fn count_skeletons(sum_cap: u64, levels: u64) -> BigUint {
    binomial(sum_cap + levels, levels)
}

fn binomial(n: u64, k: u64) -> BigUint {
    let k = k.min(n - k.min(n));
    let mut num = BigUint::from(1u32);
    let mut den = BigUint::from(1u32);
    for i in 0..k {
        num *= BigUint::from(n - i);
        den *= BigUint::from(i + 1);
    }
    num / den
}

/// Census of coding values over the exhaustive enumeration.
#[derive(Clone, Debug)]
pub struct PathCensus {
    pub n_paths: usize,
    pub max_value: usize,
    pub count_exceeding: usize,
    pub threshold: f64,
    pub truncated: bool,
}

/// Enumerate all paths of `(x, t)` above `cutoff` and count codings longer
/// than `per_time_bound * (t - cutoff)`.
pub fn long_path_census(
    scheme: &HarrisScheme,
    x: SiteId,
    t: f64,
    cutoff: f64,
    per_time_bound: f64,
    cap: usize,
) -> Result<PathCensus, DualError> {
    let (paths, truncated) = enumerate_dual_paths(scheme, x, t, cutoff, cap)?;
    let threshold = per_time_bound * (t - cutoff);
    let mut max_value = 0usize;
    let mut count_exceeding = 0usize;
    for p in &paths {
        let v = code_path(p, scheme).value();
        max_value = max_value.max(v);
        if v as f64 > threshold {
            count_exceeding += 1;
        }
    }
    Ok(PathCensus { n_paths: paths.len(), max_value, count_exceeding, threshold, truncated })
}

/// Greedy longest-first selection of pairwise disjoint closed intervals
/// `[level, level + lifetime]`; ties break toward the lower level. The
/// selected total length is at least a third of the union's length.
pub fn vitali_select(candidates: &[(u64, u64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(candidates[i].1), candidates[i].0));
    let mut selected: Vec<usize> = Vec::new();
    for i in order {
        let (s, l) = candidates[i];
        let disjoint = selected.iter().all(|&j| {
            let (s2, l2) = candidates[j];
            s + l < s2 || s2 + l2 < s
        });
        if disjoint {
            selected.push(i);
        }
    }
    selected.sort_unstable();
    selected
}

/// Total length of the union of closed intervals `[s, s+l]`.
pub fn union_length(candidates: &[(u64, u64)]) -> u64 {
    let mut iv: Vec<(u64, u64)> = candidates.iter().map(|&(s, l)| (s, s + l)).collect();
    iv.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (lo, hi) in iv {
        match cur {
            None => cur = Some((lo, hi)),
            Some((clo, chi)) => {
                if lo <= chi {
                    cur = Some((clo, chi.max(hi)));
                } else {
                    total += chi - clo;
                    cur = Some((lo, hi));
                }
            }
        }
    }
    if let Some((clo, chi)) = cur {
        total += chi - clo;
    }
    total
}
