//! FA1f dynamics driven by a Harris scheme.
//!
//! A site may update only while at least one neighbor is occupied; at each
//! of its decision times it then takes the mark value. The state space
//! excludes the all-zero configuration, and a flip to zero requires an
//! occupied neighbor, so the exclusion is preserved pathwise.

use std::collections::BinaryHeap;
use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::graph::{GraphView, SiteId};
use crate::harris::HarrisScheme;
use crate::rng::StreamRng;

#[derive(Error, Debug)]
pub enum DynamicsError {
    #[error("configuration length {0} does not match window size {1}")]
    WrongLength(usize, usize),
    #[error("the all-zero configuration is outside the state space")]
    AllZero,
    #[error("time {0} outside [0, {1}]")]
    BadTime(f64, f64),
    #[error("cylinder event has an empty base")]
    EmptyBase,
    #[error("cylinder pattern width {0} does not match base size {1}")]
    PatternWidth(usize, usize),
    #[error("duplicate cylinder pattern")]
    DuplicatePattern,
    #[error("coupled trajectories must share one scheme")]
    SchemeMismatch,
}

/// Spin configuration on a window; never identically zero.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Configuration {
    spins: Vec<u8>,
}

impl Configuration {
    pub fn new(spins: Vec<u8>) -> Result<Self, DynamicsError> {
        if spins.iter().all(|&s| s == 0) {
            return Err(DynamicsError::AllZero);
        }
        debug_assert!(spins.iter().all(|&s| s <= 1));
        Ok(Configuration { spins })
    }

    /// Single particle at `y`.
    pub fn delta(g: &GraphView, y: SiteId) -> Self {
        let mut spins = vec![0u8; g.len()];
        spins[y.index()] = 1;
        Configuration { spins }
    }

    pub fn all_ones(g: &GraphView) -> Self {
        Configuration { spins: vec![1u8; g.len()] }
    }

    #[inline]
    pub fn get(&self, x: SiteId) -> u8 {
        self.spins[x.index()]
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn occupied_count(&self) -> usize {
        self.spins.iter().filter(|&&s| s == 1).count()
    }

    pub fn spins(&self) -> &[u8] {
        &self.spins
    }

    /// 0/1 string in SiteId order.
    pub fn to_bit_string(&self) -> String {
        self.spins.iter().map(|&s| if s == 1 { '1' } else { '0' }).collect()
    }

    /// Bitmask form for small windows (used by the exact oracle).
    pub fn to_mask(&self) -> u32 {
        assert!(self.len() <= 32);
        self.spins
            .iter()
            .enumerate()
            .fold(0u32, |m, (i, &s)| m | ((s as u32) << i))
    }

    pub fn from_mask(n: usize, mask: u32) -> Result<Self, DynamicsError> {
        let spins = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
        Configuration::new(spins)
    }
}

/// How the initial configuration of a marginal is drawn.
#[derive(Clone, Debug)]
pub enum InitialLaw {
    Delta(SiteId),
    /// iid Bernoulli(q) spins, resampled until not identically zero.
    BernoulliConditioned(f64),
    Explicit(Configuration),
}

pub fn sample_initial(law: &InitialLaw, g: &GraphView, seed: u64) -> Configuration {
    match law {
        InitialLaw::Delta(y) => Configuration::delta(g, *y),
        InitialLaw::Explicit(c) => {
            assert_eq!(c.len(), g.len(), "explicit configuration must match the window");
            c.clone()
        }
        InitialLaw::BernoulliConditioned(q) => {
            let mut rng = StreamRng::new(seed);
            loop {
                let spins: Vec<u8> =
                    (0..g.len()).map(|_| u8::from(rng.next_bool(*q))).collect();
                if spins.iter().any(|&s| s == 1) {
                    return Configuration { spins };
                }
            }
        }
    }
}

/// One recorded change of a spin value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flip {
    pub site: SiteId,
    pub time: f64,
    pub value: u8,
}

/// A realized FA1f path: initial configuration plus the ordered flips that
/// the scheme produced. Decisions that re-assert the current value are not
/// recorded; dual-path logic reads the scheme, not the flip list.
#[derive(Clone, Debug)]
pub struct Trajectory {
    scheme: Arc<HarrisScheme>,
    initial: Configuration,
    flips: Vec<Flip>,
    per_site: Vec<Vec<(f64, u8)>>,
}

impl Trajectory {
    pub fn scheme(&self) -> &Arc<HarrisScheme> {
        &self.scheme
    }

    pub fn graph(&self) -> &Arc<GraphView> {
        self.scheme.graph()
    }

    pub fn horizon(&self) -> f64 {
        self.scheme.horizon()
    }

    pub fn initial(&self) -> &Configuration {
        &self.initial
    }

    pub fn flips(&self) -> &[Flip] {
        &self.flips
    }

    /// Spin of `x` at time `t` (right-continuous).
    #[inline]
    pub fn value_at(&self, x: SiteId, t: f64) -> u8 {
        let fs = &self.per_site[x.index()];
        match fs.partition_point(|f| f.0 <= t) {
            0 => self.initial.get(x),
            k => fs[k - 1].1,
        }
    }

    /// Spin of `x` just before time `t`.
    #[inline]
    pub fn value_before(&self, x: SiteId, t: f64) -> u8 {
        let fs = &self.per_site[x.index()];
        match fs.partition_point(|f| f.0 < t) {
            0 => self.initial.get(x),
            k => fs[k - 1].1,
        }
    }

    /// Full configuration at time `t` (flips at exactly `t` applied).
    pub fn state_at(&self, t: f64) -> Result<Configuration, DynamicsError> {
        if !(0.0 <= t && t <= self.horizon()) {
            return Err(DynamicsError::BadTime(t, self.horizon()));
        }
        let mut spins = self.initial.spins.clone();
        for f in &self.flips {
            if f.time > t {
                break;
            }
            spins[f.site.index()] = f.value;
        }
        Ok(Configuration { spins })
    }

    pub fn final_state(&self) -> Configuration {
        self.state_at(self.horizon()).expect("horizon is in range")
    }

    /// Dump as "site time newvalue" lines.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for f in &self.flips {
            writeln!(w, "{} {:?} {}", f.site, f.time, f.value)?;
        }
        Ok(())
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    time: f64,
    site: u32,
    idx: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap via reversed compare; equal times break by SiteId order
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.site.cmp(&self.site))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Run the spin system from `init` through every decision mark of `scheme`
/// in one global time-ordered sweep.
pub fn evolve(init: &Configuration, scheme: &Arc<HarrisScheme>) -> Trajectory {
    let g = scheme.graph();
    assert_eq!(init.len(), g.len(), "configuration must match the window");
    let mut spins = init.spins.clone();
    let mut occupied = init.occupied_count();
    assert!(occupied > 0, "initial configuration outside the state space");

    let mut heap = BinaryHeap::with_capacity(g.len());
    for site in 0..g.len() {
        if let Some(m) = scheme.site_marks(SiteId::new(site)).first() {
            heap.push(HeapEntry { time: m.time, site: site as u32, idx: 0 });
        }
    }
    let mut flips = Vec::new();
    let mut per_site: Vec<Vec<(f64, u8)>> = vec![Vec::new(); g.len()];
    while let Some(e) = heap.pop() {
        let site = SiteId::new(e.site as usize);
        let marks = scheme.site_marks(site);
        let mark = marks[e.idx as usize];
        let next = e.idx as usize + 1;
        if next < marks.len() {
            heap.push(HeapEntry { time: marks[next].time, site: e.site, idx: next as u32 });
        }
        let constrained = g.neighbors(site).iter().any(|&n| spins[n.index()] == 1);
        if !constrained {
            continue;
        }
        let new = u8::from(mark.is_one);
        let old = spins[site.index()];
        if new != old {
            spins[site.index()] = new;
            if new == 1 {
                occupied += 1;
            } else {
                occupied -= 1;
            }
            assert!(occupied > 0, "all-zero configuration reached; dynamics bug");
            flips.push(Flip { site, time: mark.time, value: new });
            per_site[site.index()].push((mark.time, new));
        }
    }
    Trajectory { scheme: scheme.clone(), initial: init.clone(), flips, per_site }
}

/// Finite-dimensional event: admissible spin patterns on a base site set.
#[derive(Clone, Debug)]
pub struct CylinderEvent {
    base: Vec<SiteId>,
    patterns: Vec<Vec<u8>>,
}

impl CylinderEvent {
    pub fn new(base: Vec<SiteId>, patterns: Vec<Vec<u8>>) -> Result<Self, DynamicsError> {
        if base.is_empty() {
            return Err(DynamicsError::EmptyBase);
        }
        for p in &patterns {
            if p.len() != base.len() {
                return Err(DynamicsError::PatternWidth(p.len(), base.len()));
            }
        }
        let mut sorted = patterns.clone();
        sorted.sort();
        let before = sorted.len();
        sorted.dedup();
        if sorted.len() != before {
            return Err(DynamicsError::DuplicatePattern);
        }
        Ok(CylinderEvent { base, patterns })
    }

    /// The event `{eta(x) = 1}`.
    pub fn site_occupied(x: SiteId) -> Self {
        CylinderEvent { base: vec![x], patterns: vec![vec![1]] }
    }

    pub fn base(&self) -> &[SiteId] {
        &self.base
    }

    pub fn patterns(&self) -> &[Vec<u8>] {
        &self.patterns
    }

    /// Event with the complementary pattern set on the same base.
    pub fn complement(&self) -> Self {
        let width = self.base.len();
        let mut patterns = Vec::new();
        for mask in 0..(1u32 << width) {
            let p: Vec<u8> = (0..width).map(|i| ((mask >> i) & 1) as u8).collect();
            if !self.patterns.contains(&p) {
                patterns.push(p);
            }
        }
        CylinderEvent { base: self.base.clone(), patterns }
    }

    pub fn eval(&self, c: &Configuration) -> bool {
        let restriction: Vec<u8> = self.base.iter().map(|&x| c.get(x)).collect();
        self.patterns.iter().any(|p| *p == restriction)
    }
}

/// Two marginals evolved from one shared scheme.
#[derive(Clone, Debug)]
pub struct CoupledTrajectory {
    pub eta: Trajectory,
    pub eta_tilde: Trajectory,
}

impl CoupledTrajectory {
    pub fn scheme(&self) -> &Arc<HarrisScheme> {
        self.eta.scheme()
    }

    pub fn horizon(&self) -> f64 {
        self.eta.horizon()
    }

    /// Whether `x` is activated at time `t`: both marginals agree there.
    pub fn is_activated_at(&self, x: SiteId, t: f64) -> bool {
        self.eta.value_at(x, t) == self.eta_tilde.value_at(x, t)
    }
}

/// Evolve both initial laws with the same scheme; the laws use independent
/// seeds, the dynamics share every decision mark.
pub fn couple(
    law1: &InitialLaw,
    law2: &InitialLaw,
    scheme: &Arc<HarrisScheme>,
    seed1: u64,
    seed2: u64,
) -> CoupledTrajectory {
    let g = scheme.graph();
    let init1 = sample_initial(law1, g, seed1);
    let init2 = sample_initial(law2, g, seed2);
    let eta = evolve(&init1, scheme);
    let eta_tilde = evolve(&init2, scheme);
    debug_assert!(Arc::ptr_eq(eta.scheme(), eta_tilde.scheme()));
    CoupledTrajectory { eta, eta_tilde }
}

/// Product weight of a configuration under the Bernoulli(q) measure.
pub fn product_weight(c: &Configuration, q: f64) -> f64 {
    c.spins
        .iter()
        .map(|&s| if s == 1 { q } else { 1.0 - q })
        .product()
}

/// Flip rate `c(eta, eta^x)`: `q` when turning on, `1-q` when turning off,
/// zero when the facilitation constraint fails.
pub fn flip_rate(g: &GraphView, c: &Configuration, x: SiteId, q: f64) -> f64 {
    let constrained = g.neighbors(x).iter().any(|&n| c.get(n) == 1);
    if !constrained {
        return 0.0;
    }
    if c.get(x) == 0 {
        q
    } else {
        1.0 - q
    }
}
