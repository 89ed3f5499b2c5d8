//! Navigated paths: a walker that rides occupied sites toward a target.
//!
//! The walker waits for the first decision time at its own site or at a
//! neighbor one step closer to the target. A closer neighbor taking value
//! one pulls the walker in; the walker's own site flipping to zero pushes it
//! onto an occupied neighbor (closest-to-target first). The distance to the
//! target is then dominated by a random walk drifting down at rate `q`, and
//! the expected hitting time is at most `d / (2q - 1)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{evolve, Configuration, Trajectory};
use crate::graph::{build_window, distances_from, SiteId, WindowKind};
use crate::harris::HarrisScheme;
use crate::rng::StreamRng;
use crate::stats;

#[derive(Error, Debug)]
pub enum NavError {
    #[error("the walker must start on an occupied site")]
    StartNotOccupied,
    #[error("hitting bound d/(2q-1) needs q > 1/2, got {0}")]
    SubcriticalQ(f64),
    #[error("window build failed: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("scheme error: {0}")]
    Scheme(#[from] crate::harris::SchemeError),
    #[error("no occupied neighbor at a forced move; the trajectory is inconsistent")]
    NoOccupiedNeighbor,
    #[error("navigation window must satisfy start < end <= horizon")]
    BadWindow,
}

/// A realized navigated path: move times with the site entered at each.
#[derive(Clone, Debug)]
pub struct NavigatedPath {
    pub start: SiteId,
    pub target: SiteId,
    pub start_time: f64,
    /// `(time, new site)` for every position change, increasing times.
    pub moves: Vec<(f64, SiteId)>,
    /// Absolute arrival time at the target; absent if the horizon ended first.
    pub arrival: Option<f64>,
    /// Forced moves where no occupied neighbor was closer to the target.
    pub forced_detours: u32,
}

impl NavigatedPath {
    pub fn site_at(&self, time: f64) -> SiteId {
        let mut site = self.start;
        for &(u, s) in &self.moves {
            if u <= time {
                site = s;
            } else {
                break;
            }
        }
        site
    }
}

/// Build the navigated path from `(x, start_time)` toward `target`,
/// following the trajectory until arrival or `until`.
pub fn navigate(
    tr: &Trajectory,
    x: SiteId,
    target: SiteId,
    start_time: f64,
    until: f64,
) -> Result<NavigatedPath, NavError> {
    if tr.value_at(x, start_time) != 1 {
        return Err(NavError::StartNotOccupied);
    }
    if !(start_time <= until && until <= tr.horizon()) {
        return Err(NavError::BadWindow);
    }
    let scheme = tr.scheme();
    let g = tr.graph();
    let dist = distances_from(g, target);
    let mut path = NavigatedPath {
        start: x,
        target,
        start_time,
        moves: Vec::new(),
        arrival: None,
        forced_detours: 0,
    };
    let mut cur = x;
    let mut now = start_time;
    if cur == target {
        path.arrival = Some(now);
        return Ok(path);
    }
    loop {
        // first decision time after `now` at the walker's site or at a
        // strictly closer neighbor
        let mut next: Option<(f64, SiteId)> = None;
        let mut consider = |site: SiteId| {
            let ms = scheme.site_marks(site);
            let k = ms.partition_point(|m| m.time <= now);
            if k < ms.len() {
                let cand = (ms[k].time, site);
                if next.is_none() || cand.0 < next.unwrap().0 {
                    next = Some(cand);
                }
            }
        };
        consider(cur);
        let d_cur = dist[cur.index()];
        for &nb in g.neighbors(cur) {
            if dist[nb.index()] + 1 == d_cur {
                consider(nb);
            }
        }
        let Some((u, who)) = next else { break };
        if u > until {
            break;
        }
        now = u;
        if who == cur {
            if tr.value_at(cur, u) == 1 {
                // spin kept value one (or the constraint blocked the flip)
                continue;
            }
            // forced off the site: hop to an occupied neighbor, preferring
            // those closest to the target
            let mut best: Option<(usize, SiteId)> = None;
            for &nb in g.neighbors(cur) {
                if tr.value_at(nb, u) == 1 {
                    let key = (dist[nb.index()], nb);
                    if best.is_none() || key < best.unwrap() {
                        best = Some(key);
                    }
                }
            }
            let Some((d_new, nb)) = best else {
                return Err(NavError::NoOccupiedNeighbor);
            };
            if d_new >= d_cur {
                path.forced_detours += 1;
            }
            cur = nb;
            path.moves.push((u, cur));
        } else if tr.value_at(who, u) == 1 {
            // the closer neighbor took value one: ride it
            cur = who;
            path.moves.push((u, cur));
        }
        if cur == target {
            path.arrival = Some(now);
            return Ok(path);
        }
    }
    Ok(path)
}

#[derive(Clone, Debug, Serialize)]
pub struct HittingStats {
    pub q: f64,
    pub distance: usize,
    pub replicas: usize,
    pub mean: f64,
    pub se: f64,
    pub bound: f64,
    /// Runs that did not arrive before the horizon (counted at the horizon).
    pub n_absent: usize,
    pub forced_detours: u64,
}

/// Monte Carlo mean hitting time on an all-occupied half-line start, walking
/// from position `distance` down to position 0, against the drift bound.
pub fn hitting_stats(
    q: f64,
    distance: usize,
    replicas: usize,
    seed: u64,
) -> Result<HittingStats, NavError> {
    if !(q > 0.5 && q < 1.0) {
        return Err(NavError::SubcriticalQ(q));
    }
    let bound = distance as f64 / (2.0 * q - 1.0);
    // generous margins: room above the start for excursions, horizon far
    // past the bound so censored runs are negligible
    let pad = 40;
    let g = Arc::new(build_window(WindowKind::HalfLine, distance + pad)?);
    let horizon = (distance as f64 + 60.0) / (2.0 * q - 1.0);
    let start = SiteId::new(distance);
    let target = SiteId::new(0);
    let results: Vec<(f64, bool, u32)> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let s = Arc::new(
                HarrisScheme::sample(
                    g.clone(),
                    horizon,
                    q,
                    StreamRng::derive_seed(seed, i as u64),
                )
                .expect("valid scheme parameters"),
            );
            let tr = evolve(&Configuration::all_ones(&g), &s);
            let nav = navigate(&tr, start, target, 0.0, horizon)
                .expect("start occupied on all-ones initial");
            match nav.arrival {
                Some(t) => (t, false, nav.forced_detours),
                None => (horizon, true, nav.forced_detours),
            }
        })
        .collect();
    let times: Vec<f64> = results.iter().map(|r| r.0).collect();
    let (mean, se) = stats::mean_se(&times);
    Ok(HittingStats {
        q,
        distance,
        replicas,
        mean,
        se,
        bound,
        n_absent: results.iter().filter(|r| r.1).count(),
        forced_detours: results.iter().map(|r| r.2 as u64).sum(),
    })
}

/// Sufficient witness for the navigation event: concatenate navigations
/// through the listed sites within `[window_start, window_end]`. Starts at
/// the first time the head site is occupied inside the window.
pub fn navigation_event(
    tr: &Trajectory,
    sites: &[SiteId],
    window_start: f64,
    window_end: f64,
) -> Result<bool, NavError> {
    if !(window_start < window_end && window_end <= tr.horizon()) {
        return Err(NavError::BadWindow);
    }
    let Some((&head, rest)) = sites.split_first() else {
        return Ok(true);
    };
    // earliest occupation time of the head site in the window
    let mut now = if tr.value_at(head, window_start) == 1 {
        Some(window_start)
    } else {
        tr.flips()
            .iter()
            .filter(|f| {
                f.site == head && f.value == 1 && f.time > window_start && f.time <= window_end
            })
            .map(|f| f.time)
            .next()
    };
    let Some(mut t0) = now.take() else {
        return Ok(false);
    };
    let mut cur = head;
    for &next in rest {
        let nav = navigate(tr, cur, next, t0, window_end)?;
        match nav.arrival {
            Some(t) => {
                cur = next;
                t0 = t;
            }
            None => return Ok(false),
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harris::DecisionMark;

    fn all_ones_trajectory(
        edges: usize,
        horizon: f64,
        q: f64,
        seed: u64,
    ) -> Trajectory {
        let g = Arc::new(build_window(WindowKind::HalfLine, edges).unwrap());
        let s = Arc::new(HarrisScheme::sample(g.clone(), horizon, q, seed).unwrap());
        evolve(&Configuration::all_ones(&g), &s)
    }

    #[test]
    fn start_at_target_is_absorbed_immediately() {
        let tr = all_ones_trajectory(4, 2.0, 0.8, 1);
        let nav = navigate(&tr, SiteId::new(2), SiteId::new(2), 0.5, 2.0).unwrap();
        assert_eq!(nav.arrival, Some(0.5));
        assert!(nav.moves.is_empty());
    }

    #[test]
    fn empty_scheme_never_arrives() {
        let g = Arc::new(build_window(WindowKind::HalfLine, 4).unwrap());
        let s = Arc::new(HarrisScheme::from_marks(g.clone(), 2.0, 0.5, Vec::new()).unwrap());
        let tr = evolve(&Configuration::all_ones(&g), &s);
        let nav = navigate(&tr, SiteId::new(3), SiteId::new(0), 0.0, 2.0).unwrap();
        assert!(nav.arrival.is_none());
        assert!(nav.moves.is_empty());
    }

    #[test]
    fn start_must_be_occupied() {
        let g = Arc::new(build_window(WindowKind::HalfLine, 3).unwrap());
        let s = Arc::new(HarrisScheme::from_marks(g.clone(), 2.0, 0.5, Vec::new()).unwrap());
        let tr = evolve(&Configuration::delta(&g, SiteId::new(0)), &s);
        assert!(matches!(
            navigate(&tr, SiteId::new(2), SiteId::new(0), 0.0, 2.0),
            Err(NavError::StartNotOccupied)
        ));
    }

    #[test]
    fn walker_rides_a_closer_neighbor_turning_on() {
        // walker at 2 heading to 0; site 1 turns on at t=1
        let g = Arc::new(build_window(WindowKind::HalfLine, 3).unwrap());
        let mut marks = vec![Vec::new(); g.len()];
        marks[1] = vec![DecisionMark { time: 1.0, is_one: true }];
        let s = Arc::new(HarrisScheme::from_marks(g.clone(), 3.0, 0.5, marks).unwrap());
        let init = Configuration::new(vec![1, 0, 1, 0]).unwrap();
        let tr = evolve(&init, &s);
        let nav = navigate(&tr, SiteId::new(2), SiteId::new(0), 0.0, 3.0).unwrap();
        assert_eq!(nav.moves, vec![(1.0, SiteId::new(1))]);
        assert!(nav.arrival.is_none()); // site 0's state never changes again
    }

    #[test]
    fn forced_move_lands_on_an_occupied_neighbor() {
        // walker's own site flips to zero; it must hop onto the occupied
        // neighbor even though that neighbor is farther from the target
        let g = Arc::new(build_window(WindowKind::HalfLine, 3).unwrap());
        let mut marks = vec![Vec::new(); g.len()];
        marks[1] = vec![DecisionMark { time: 1.0, is_one: false }];
        let s = Arc::new(HarrisScheme::from_marks(g.clone(), 3.0, 0.5, marks).unwrap());
        let init = Configuration::new(vec![0, 1, 1, 0]).unwrap();
        let tr = evolve(&init, &s);
        let nav = navigate(&tr, SiteId::new(1), SiteId::new(0), 0.0, 3.0).unwrap();
        assert_eq!(nav.moves, vec![(1.0, SiteId::new(2))]);
        assert_eq!(nav.forced_detours, 1);
    }

    #[test]
    fn completed_paths_ride_occupied_sites() {
        // condition (iii): the walker's site carries a particle throughout
        for seed in 0..40u64 {
            let tr = all_ones_trajectory(20, 30.0, 0.8, seed);
            let nav = navigate(&tr, SiteId::new(10), SiteId::new(0), 0.0, 30.0).unwrap();
            let mut checkpoints = vec![nav.start_time];
            checkpoints.extend(nav.moves.iter().map(|m| m.0));
            if let Some(t) = nav.arrival {
                checkpoints.push(t);
            }
            for &u in &checkpoints {
                assert_eq!(tr.value_at(nav.site_at(u), u), 1, "seed {seed} at {u}");
            }
            // absorbing: no moves after arrival
            if let Some(t) = nav.arrival {
                assert!(nav.moves.iter().all(|m| m.0 <= t));
                assert_eq!(nav.site_at(30.0), SiteId::new(0));
            }
        }
    }

    #[test]
    fn down_moves_dominate_at_rate_q() {
        let q = 0.8;
        let mut down = 0usize;
        let mut total = 0usize;
        for seed in 100..200u64 {
            let tr = all_ones_trajectory(30, 40.0, q, seed);
            let g = tr.graph().clone();
            let dist = distances_from(&g, SiteId::new(0));
            let nav = navigate(&tr, SiteId::new(12), SiteId::new(0), 0.0, 40.0).unwrap();
            let mut prev = SiteId::new(12);
            for &(_, s) in &nav.moves {
                if dist[s.index()] < dist[prev.index()] {
                    down += 1;
                }
                total += 1;
                prev = s;
            }
        }
        let frac = down as f64 / total as f64;
        let se = stats::binomial_se(frac, total);
        assert!(frac >= q - 3.0 * se, "down fraction {frac} below {q}");
    }

    #[test]
    fn hitting_bound_holds_on_a_small_grid() {
        for (q, d) in [(0.75, 1), (0.9, 5)] {
            let st = hitting_stats(q, d, 2_000, 42).unwrap();
            assert!(
                st.mean <= st.bound + 3.0 * st.se,
                "mean {} bound {} se {}",
                st.mean,
                st.bound,
                st.se
            );
            assert!(st.n_absent * 50 < st.replicas, "too many censored runs");
        }
        assert!(hitting_stats(0.5, 3, 10, 1).is_err());
    }

    #[test]
    fn zero_distance_hits_immediately() {
        let st = hitting_stats(0.75, 0, 200, 7).unwrap();
        assert_eq!(st.mean, 0.0);
        assert_eq!(st.bound, 0.0);
    }

    #[test]
    fn navigation_event_trivial_cases() {
        let tr = all_ones_trajectory(5, 2.0, 0.8, 3);
        // single-site list with the head occupied at the window start
        assert!(navigation_event(&tr, &[SiteId::new(2)], 0.0, 2.0).unwrap());
        // no marks at all: any real visit list fails
        let g = Arc::new(build_window(WindowKind::HalfLine, 5).unwrap());
        let s = Arc::new(HarrisScheme::from_marks(g.clone(), 2.0, 0.5, Vec::new()).unwrap());
        let frozen = evolve(&Configuration::all_ones(&g), &s);
        assert!(!navigation_event(
            &frozen,
            &[SiteId::new(0), SiteId::new(1)],
            0.0,
            2.0
        )
        .unwrap());
    }

    #[test]
    fn navigation_probability_grows_with_horizon() {
        // visiting z_0 .. z_{0.3 t} gets easier as t grows at q = 0.9
        let q = 0.9;
        let rate = 0.3f64;
        let replicas = 300u64;
        let mut last = 0.0;
        let mut values = Vec::new();
        for t in [10.0f64, 25.0, 45.0] {
            let n = (rate * t).floor() as usize;
            let g = Arc::new(build_window(WindowKind::HalfLine, n + 30).unwrap());
            let sites: Vec<SiteId> = (0..=n).map(SiteId::new).collect();
            let mut hits = 0usize;
            for i in 0..replicas {
                let s = Arc::new(
                    HarrisScheme::sample(g.clone(), t, q, StreamRng::derive_seed(7337, i))
                        .unwrap(),
                );
                let tr = evolve(&Configuration::delta(&g, SiteId::new(0)), &s);
                if navigation_event(&tr, &sites, 0.0, t).unwrap() {
                    hits += 1;
                }
            }
            last = hits as f64 / replicas as f64;
            values.push(last);
        }
        assert!(values.windows(2).all(|w| w[1] >= w[0] - 0.05), "values {values:?}");
        assert!(last >= 0.99, "final navigation probability {last}");
    }
}
