//! The Harris scheme: per-site rate-one Poisson decision times with iid
//! Bernoulli(q) marks. One sampled scheme is the entire source of randomness
//! for a run; coupled marginals and every dual-path analysis read the same
//! scheme.

use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::graph::{GraphView, SiteId};
use crate::rng::StreamRng;

/// One decision time together with its mark. `is_one` marks are "type-1"
/// (the spin takes value 1 when the constraint is met), the rest "type-0".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionMark {
    pub time: f64,
    pub is_one: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MarkFilter {
    Any,
    Type0,
    Type1,
}

impl MarkFilter {
    #[inline]
    fn accepts(self, m: &DecisionMark) -> bool {
        match self {
            MarkFilter::Any => true,
            MarkFilter::Type0 => !m.is_one,
            MarkFilter::Type1 => m.is_one,
        }
    }
}

#[derive(Error, Debug)]
pub enum SchemeError {
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("q must lie in (0, 1], got {0}")]
    BadQ(f64),
    #[error("inverted or out-of-range interval ({0}, {1}] on horizon {2}")]
    BadInterval(f64, f64, f64),
    #[error("marks for site {0} are not strictly increasing within (0, horizon]")]
    UnsortedMarks(usize),
}

/// Sampled Harris scheme on a fixed window and horizon.
///
/// Each site's marks come from a counter-based stream keyed by
/// `(seed, site)`, so the scheme is identical regardless of sampling order
/// or parallelism.
#[derive(Clone, Debug)]
pub struct HarrisScheme {
    graph: Arc<GraphView>,
    horizon: f64,
    q: f64,
    seed: u64,
    marks: Vec<Vec<DecisionMark>>,
}

impl HarrisScheme {
    /// Sample a scheme. `q = 1` is accepted (all marks type-1), which the
    /// degenerate-filter tests rely on; `q <= 0` and `q > 1` are rejected.
    pub fn sample(
        graph: Arc<GraphView>,
        horizon: f64,
        q: f64,
        seed: u64,
    ) -> Result<Self, SchemeError> {
        if !(horizon > 0.0) {
            return Err(SchemeError::BadHorizon(horizon));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(SchemeError::BadQ(q));
        }
        let marks = (0..graph.len())
            .map(|site| {
                let mut rng = StreamRng::keyed(seed, site as u64);
                let mut out = Vec::new();
                let mut t = 0.0;
                loop {
                    t += rng.next_exp();
                    if t > horizon {
                        break;
                    }
                    let is_one = rng.next_bool(q);
                    out.push(DecisionMark { time: t, is_one });
                }
                out
            })
            .collect();
        Ok(HarrisScheme { graph, horizon, q, seed, marks })
    }

    /// Build a scheme from explicit per-site mark lists (strictly increasing
    /// times in `(0, horizon]`). Used to pin hand-executed examples.
    pub fn from_marks(
        graph: Arc<GraphView>,
        horizon: f64,
        q: f64,
        marks: Vec<Vec<DecisionMark>>,
    ) -> Result<Self, SchemeError> {
        if !(horizon > 0.0) {
            return Err(SchemeError::BadHorizon(horizon));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(SchemeError::BadQ(q));
        }
        let mut marks = marks;
        marks.resize(graph.len(), Vec::new());
        for (site, ms) in marks.iter().enumerate() {
            let mut prev = 0.0;
            for m in ms {
                if !(m.time > prev && m.time <= horizon) {
                    return Err(SchemeError::UnsortedMarks(site));
                }
                prev = m.time;
            }
        }
        Ok(HarrisScheme { graph, horizon, q, seed: 0, marks })
    }

    pub fn graph(&self) -> &Arc<GraphView> {
        &self.graph
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// All marks of a site in increasing time order.
    pub fn site_marks(&self, x: SiteId) -> &[DecisionMark] {
        &self.marks[x.index()]
    }

    /// Marks of `x` with time in `(a, b]`, filtered, in increasing order.
    pub fn marks_in(
        &self,
        x: SiteId,
        a: f64,
        b: f64,
        filter: MarkFilter,
    ) -> Result<Vec<DecisionMark>, SchemeError> {
        if !(0.0 <= a && a < b && b <= self.horizon) {
            return Err(SchemeError::BadInterval(a, b, self.horizon));
        }
        Ok(self
            .range(x, a, b)
            .iter()
            .filter(|m| filter.accepts(m))
            .copied()
            .collect())
    }

    /// Slice of marks with time in `(a, b]` (no filter, no validation).
    #[inline]
    pub(crate) fn range(&self, x: SiteId, a: f64, b: f64) -> &[DecisionMark] {
        let ms = &self.marks[x.index()];
        let lo = ms.partition_point(|m| m.time <= a);
        let hi = ms.partition_point(|m| m.time <= b);
        &ms[lo..hi]
    }

    /// Total number of marks across all sites.
    pub fn total_marks(&self) -> usize {
        self.marks.iter().map(Vec::len).sum()
    }

    /// Dump as "site time gamma" lines, full-precision times.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (site, ms) in self.marks.iter().enumerate() {
            for m in ms {
                writeln!(w, "{} {:?} {}", site, m.time, u8::from(m.is_one))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_window, WindowKind};
    use crate::rng::StreamRng;
    use crate::stats;

    fn one_site_graph_pair() -> Arc<GraphView> {
        Arc::new(build_window(WindowKind::Path, 1).unwrap())
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let g = Arc::new(build_window(WindowKind::Grid2d, 2).unwrap());
        let a = HarrisScheme::sample(g.clone(), 5.0, 0.7, 99).unwrap();
        let b = HarrisScheme::sample(g, 5.0, 0.7, 99).unwrap();
        assert_eq!(a.marks, b.marks);
    }

    #[test]
    fn parameter_domain_checks() {
        let g = one_site_graph_pair();
        assert!(HarrisScheme::sample(g.clone(), 0.0, 0.5, 1).is_err());
        assert!(HarrisScheme::sample(g.clone(), 1.0, 0.0, 1).is_err());
        assert!(HarrisScheme::sample(g.clone(), 1.0, 1.1, 1).is_err());
        assert!(HarrisScheme::sample(g, 1.0, 1.0, 1).is_ok());
    }

    #[test]
    fn mean_marks_per_site_matches_poisson_mean() {
        let g = one_site_graph_pair();
        let horizon = 10.0;
        let replicas = 10_000u64;
        let mut total = 0usize;
        for i in 0..replicas {
            let s = HarrisScheme::sample(g.clone(), horizon, 0.5, StreamRng::derive_seed(5, i))
                .unwrap();
            total += s.site_marks(SiteId::new(0)).len();
        }
        let mean = total as f64 / replicas as f64;
        let se = (horizon / replicas as f64).sqrt();
        assert!((mean - horizon).abs() <= 3.0 * se, "mean {mean} vs {horizon} (se {se})");
    }

    #[test]
    fn mark_fraction_matches_q() {
        let g = one_site_graph_pair();
        let s = HarrisScheme::sample(g, 10_000.0, 0.8, 3).unwrap();
        let ms = s.site_marks(SiteId::new(0));
        let ones = ms.iter().filter(|m| m.is_one).count() as f64;
        let frac = ones / ms.len() as f64;
        let se = (0.8 * 0.2 / ms.len() as f64).sqrt();
        assert!((frac - 0.8).abs() <= 3.0 * se, "frac {frac}");
    }

    #[test]
    fn marks_in_interval_semantics() {
        let g = one_site_graph_pair();
        let s = HarrisScheme::from_marks(
            g,
            10.0,
            0.5,
            vec![vec![
                DecisionMark { time: 1.0, is_one: true },
                DecisionMark { time: 2.0, is_one: false },
                DecisionMark { time: 3.0, is_one: true },
            ]],
        )
        .unwrap();
        let x = SiteId::new(0);
        // (a, b] is half-open at the left
        let got = s.marks_in(x, 1.0, 3.0, MarkFilter::Any).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].time, 2.0);
        // empty stretch
        assert!(s.marks_in(x, 3.5, 9.0, MarkFilter::Any).unwrap().is_empty());
        // inverted interval rejected
        assert!(s.marks_in(x, 2.0, 2.0, MarkFilter::Any).is_err());
        assert!(s.marks_in(x, 3.0, 1.0, MarkFilter::Any).is_err());
    }

    #[test]
    fn type0_filter_is_empty_at_q_one() {
        let g = one_site_graph_pair();
        let s = HarrisScheme::sample(g, 50.0, 1.0, 11).unwrap();
        for x in [SiteId::new(0), SiteId::new(1)] {
            assert!(s.marks_in(x, 0.0, 50.0, MarkFilter::Type0).unwrap().is_empty());
            assert!(!s.marks_in(x, 0.0, 50.0, MarkFilter::Type1).unwrap().is_empty());
        }
    }

    #[test]
    fn filters_partition_the_marks() {
        let g = one_site_graph_pair();
        let s = HarrisScheme::sample(g, 200.0, 0.3, 17).unwrap();
        let x = SiteId::new(1);
        let any = s.marks_in(x, 0.0, 200.0, MarkFilter::Any).unwrap();
        let t0 = s.marks_in(x, 0.0, 200.0, MarkFilter::Type0).unwrap();
        let t1 = s.marks_in(x, 0.0, 200.0, MarkFilter::Type1).unwrap();
        assert_eq!(any.len(), t0.len() + t1.len());
        let mut merged: Vec<_> = t0.into_iter().chain(t1).collect();
        merged.sort_by(|a, b| a.time.total_cmp(&b.time));
        assert_eq!(merged, any);
    }

    #[test]
    fn interarrivals_pass_ks_against_exp1() {
        let g = one_site_graph_pair();
        let s = HarrisScheme::sample(g, 20_000.0, 0.5, 23).unwrap();
        let ms = s.site_marks(SiteId::new(0));
        let mut gaps: Vec<f64> = Vec::with_capacity(ms.len());
        let mut prev = 0.0;
        for m in ms {
            gaps.push(m.time - prev);
            prev = m.time;
        }
        gaps.sort_by(f64::total_cmp);
        let d = stats::ks_statistic(&gaps, |x| 1.0 - (-x).exp());
        let crit = stats::ks_critical_1pct(gaps.len());
        assert!(d < crit, "KS statistic {d} exceeds 1% critical value {crit}");
        let mean: f64 = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 1.0).abs() <= 3.0 / (gaps.len() as f64).sqrt());
    }

    #[test]
    fn type1_thinning_has_rate_q() {
        let g = one_site_graph_pair();
        let horizon = 10.0;
        let q = 0.6;
        let replicas = 20_000u64;
        let mut total = 0usize;
        for i in 0..replicas {
            let s = HarrisScheme::sample(g.clone(), horizon, q, StreamRng::derive_seed(77, i))
                .unwrap();
            total += s
                .site_marks(SiteId::new(0))
                .iter()
                .filter(|m| m.is_one)
                .count();
        }
        let mean = total as f64 / replicas as f64;
        let expect = q * horizon;
        let se = (expect / replicas as f64).sqrt();
        assert!((mean - expect).abs() <= 3.0 * se, "mean {mean} vs {expect}");
    }

    #[test]
    fn cross_site_counts_are_uncorrelated() {
        let g = one_site_graph_pair();
        let replicas = 10_000usize;
        let mut counts0 = Vec::with_capacity(replicas);
        let mut counts1 = Vec::with_capacity(replicas);
        for i in 0..replicas {
            let s =
                HarrisScheme::sample(g.clone(), 10.0, 0.5, StreamRng::derive_seed(131, i as u64))
                    .unwrap();
            counts0.push(s.site_marks(SiteId::new(0)).len() as f64);
            counts1.push(s.site_marks(SiteId::new(1)).len() as f64);
        }
        let m0 = counts0.iter().sum::<f64>() / replicas as f64;
        let m1 = counts1.iter().sum::<f64>() / replicas as f64;
        let mut cov = 0.0;
        let mut v0 = 0.0;
        let mut v1 = 0.0;
        for i in 0..replicas {
            cov += (counts0[i] - m0) * (counts1[i] - m1);
            v0 += (counts0[i] - m0).powi(2);
            v1 += (counts1[i] - m1).powi(2);
        }
        let corr = cov / (v0.sqrt() * v1.sqrt());
        assert!(corr.abs() <= 3.0 / (replicas as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn dump_lines_have_three_fields() {
        let g = one_site_graph_pair();
        let s = HarrisScheme::sample(g, 3.0, 0.5, 2).unwrap();
        let mut buf = Vec::new();
        s.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines() {
            let fields: Vec<_> = line.split(' ').collect();
            assert_eq!(fields.len(), 3);
            let t: f64 = fields[1].parse().unwrap();
            assert!(t > 0.0 && t <= 3.0);
        }
    }
}
