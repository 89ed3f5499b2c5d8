//! Exact transient and stationary analysis of the spin chain on tiny
//! windows: the ground truth every Monte Carlo estimator is checked against.
//!
//! Transient laws come from uniformization with a controlled Poisson-tail
//! truncation; a dense matrix exponential is kept as an independent test
//! oracle for very small windows, and the spectral gap comes from a Jacobi
//! eigensolve of the reversibility-symmetrized generator.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::CylinderEvent;
use crate::graph::{GraphView, SiteId};
use crate::stats::{self, FitPoint, FitResult};

#[derive(Error, Debug)]
pub enum OracleError {
    #[error("window has {0} vertices; the exact chain is capped at {1}")]
    TooLarge(usize, usize),
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("uniformization rate*time {0} too large for stable Poisson weights")]
    HorizonOverflow(f64),
    #[error("distribution has mass {0}, expected 1")]
    BadMass(f64),
    #[error("chain is reducible; this contradicts the model on a connected window")]
    Reducible,
    #[error("dense matrix exponential capped at {0} states, chain has {1}")]
    DenseTooLarge(usize, usize),
}

/// Largest window the exact chain accepts (state space `2^n - 1`).
pub const MAX_VERTICES: usize = 14;

/// Probability vector over the enumerated states.
pub type DistributionVector = Vec<f64>;

/// Exact generator of the spin chain on a small window. States are the
/// nonzero spin masks in increasing mask order.
#[derive(Clone, Debug)]
pub struct FiniteChain {
    graph: Arc<GraphView>,
    q: f64,
    /// state index -> spin mask
    states: Vec<u32>,
    /// transitions per state: (target state index, rate)
    transitions: Vec<Vec<(usize, f64)>>,
    /// total outflow per state
    out_rate: Vec<f64>,
}

impl FiniteChain {
    pub fn build(graph: Arc<GraphView>, q: f64) -> Result<Self, OracleError> {
        let n = graph.len();
        if n > MAX_VERTICES {
            return Err(OracleError::TooLarge(n, MAX_VERTICES));
        }
        let states: Vec<u32> = (1u32..(1 << n)).collect();
        let index_of = |mask: u32| (mask - 1) as usize;
        let mut transitions = Vec::with_capacity(states.len());
        let mut out_rate = Vec::with_capacity(states.len());
        for &mask in &states {
            let mut row = Vec::new();
            let mut total = 0.0;
            for x in 0..n {
                let constrained = graph
                    .neighbors(SiteId::new(x))
                    .iter()
                    .any(|&nb| (mask >> nb.index()) & 1 == 1);
                if !constrained {
                    continue;
                }
                let flipped = mask ^ (1 << x);
                // the facilitating neighbor keeps the flipped state nonzero
                debug_assert!(flipped != 0);
                let rate = if (mask >> x) & 1 == 0 { q } else { 1.0 - q };
                if rate > 0.0 {
                    row.push((index_of(flipped), rate));
                    total += rate;
                }
            }
            transitions.push(row);
            out_rate.push(total);
        }
        let chain = FiniteChain { graph, q, states, transitions, out_rate };
        chain.check_irreducible()?;
        Ok(chain)
    }

    pub fn graph(&self) -> &Arc<GraphView> {
        &self.graph
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[u32] {
        &self.states
    }

    pub fn state_index(&self, mask: u32) -> usize {
        assert!(mask > 0 && (mask as usize) < (1usize << self.graph.len()));
        (mask - 1) as usize
    }

    pub fn transitions(&self, state: usize) -> &[(usize, f64)] {
        &self.transitions[state]
    }

    pub fn out_rate(&self, state: usize) -> f64 {
        self.out_rate[state]
    }

    fn check_irreducible(&self) -> Result<(), OracleError> {
        // rates come in symmetric pairs, so undirected reachability suffices
        let m = self.n_states();
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(s) = stack.pop() {
            for &(t, _) in &self.transitions[s] {
                if !seen[t] {
                    seen[t] = true;
                    count += 1;
                    stack.push(t);
                }
            }
        }
        if count == m {
            Ok(())
        } else {
            Err(OracleError::Reducible)
        }
    }

    /// Point mass on the state with the given spin mask.
    pub fn delta_distribution(&self, mask: u32) -> DistributionVector {
        let mut v = vec![0.0; self.n_states()];
        v[self.state_index(mask)] = 1.0;
        v
    }

    /// `v Q` for a row vector `v`.
    fn apply_generator(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (s, row) in self.transitions.iter().enumerate() {
            let mass = v[s];
            if mass == 0.0 {
                continue;
            }
            out[s] -= mass * self.out_rate[s];
            for &(t, rate) in row {
                out[t] += mass * rate;
            }
        }
        out
    }

    /// Probability assigned to a cylinder event by a distribution.
    pub fn event_probability(&self, dist: &[f64], event: &CylinderEvent) -> f64 {
        let mut p = 0.0;
        for (s, &mask) in self.states.iter().enumerate() {
            let restriction: Vec<u8> = event
                .base()
                .iter()
                .map(|x| ((mask >> x.index()) & 1) as u8)
                .collect();
            if event.patterns().iter().any(|pat| *pat == restriction) {
                p += dist[s];
            }
        }
        p
    }

    /// Stationary law: Bernoulli(q) product weights conditioned on the
    /// nonzero state space. Verified against global balance to 1e-12.
    pub fn stationary_law(&self) -> DistributionVector {
        let n = self.graph.len();
        let mut v: Vec<f64> = self
            .states
            .iter()
            .map(|&mask| {
                let ones = mask.count_ones() as i32;
                self.q.powi(ones) * (1.0 - self.q).powi(n as i32 - ones)
            })
            .collect();
        let total: f64 = v.iter().sum();
        for w in v.iter_mut() {
            *w /= total;
        }
        let residual = self.apply_generator(&v);
        let worst = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        assert!(worst <= 1e-12, "global balance residual {worst}");
        v
    }

    /// Transient law by uniformization: total-variation error at most `tol`.
    pub fn transient_law(
        &self,
        init: &[f64],
        t: f64,
        tol: f64,
    ) -> Result<DistributionVector, OracleError> {
        if !(tol > 0.0) {
            return Err(OracleError::BadTolerance);
        }
        if t < 0.0 {
            return Err(OracleError::NegativeTime(t));
        }
        let mass: f64 = init.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(OracleError::BadMass(mass));
        }
        let lambda = self.out_rate.iter().cloned().fold(0.0f64, f64::max);
        if t == 0.0 || lambda == 0.0 {
            return Ok(init.to_vec());
        }
        let lt = lambda * t;
        if lt > 700.0 {
            return Err(OracleError::HorizonOverflow(lt));
        }
        // v_{k+1} = v_k P with P = I + Q/lambda; truncate once the Poisson
        // weights have spent all but tol of their mass
        let mut vk = init.to_vec();
        let mut acc = vec![0.0; vk.len()];
        let mut weight = (-lt).exp();
        let mut cum = weight;
        for (a, v) in acc.iter_mut().zip(&vk) {
            *a += weight * v;
        }
        let mut k = 0u64;
        while 1.0 - cum > tol {
            k += 1;
            let qv = self.apply_generator(&vk);
            for (v, dq) in vk.iter_mut().zip(&qv) {
                *v += dq / lambda;
            }
            weight *= lt / k as f64;
            cum += weight;
            for (a, v) in acc.iter_mut().zip(&vk) {
                *a += weight * v;
            }
            if k > 100_000 {
                return Err(OracleError::HorizonOverflow(lt));
            }
        }
        Ok(acc)
    }

    /// Signed deviation `P^{init}(eta_t in Gamma) - nu_hat(Gamma)`, evaluated
    /// by uniformizing the centered vector `init - pi`.
    ///
    /// Subtracting two order-one probabilities floors the plain route at
    /// about 1e-13 absolute; propagating the centered vector keeps relative
    /// precision instead, so deep-tail values (1e-30 and below) are still
    /// meaningful. Poisson weights are carried with explicit rescaling to
    /// survive `rate * t` beyond the range of `exp`.
    pub fn stationary_deviation(
        &self,
        init: &[f64],
        event: &CylinderEvent,
        t: f64,
    ) -> Result<f64, OracleError> {
        if t < 0.0 {
            return Err(OracleError::NegativeTime(t));
        }
        let pi = self.stationary_law();
        let mut w: Vec<f64> = init.iter().zip(&pi).map(|(a, b)| a - b).collect();
        let indicator: Vec<bool> = self
            .states
            .iter()
            .map(|&mask| {
                let restriction: Vec<u8> = event
                    .base()
                    .iter()
                    .map(|x| ((mask >> x.index()) & 1) as u8)
                    .collect();
                event.patterns().iter().any(|pat| *pat == restriction)
            })
            .collect();
        let project = |w: &[f64]| -> f64 {
            w.iter()
                .zip(&indicator)
                .filter(|(_, &inb)| inb)
                .map(|(v, _)| v)
                .sum()
        };
        let lambda = self.out_rate.iter().cloned().fold(0.0f64, f64::max);
        let lt = lambda * t;
        if lt == 0.0 {
            return Ok(project(&w));
        }
        // accumulate sum_k u_k * project(w P^k) with u_k = (lt)^k / k!,
        // rescaling u and acc together; the final e^{-lt} is applied in
        // log space
        let n_terms = (lt + 12.0 * lt.sqrt() + 60.0).ceil() as u64;
        let mut acc = project(&w);
        let mut u = 1.0f64;
        let mut scale_log = 0.0f64;
        for k in 1..=n_terms {
            let qw = self.apply_generator(&w);
            for (v, dq) in w.iter_mut().zip(&qw) {
                *v += dq / lambda;
            }
            // roundoff leaks mass into the non-decaying stationary
            // direction; project it back out so the floor stays relative
            let drift: f64 = w.iter().sum();
            if drift != 0.0 {
                for (v, p) in w.iter_mut().zip(&pi) {
                    *v -= drift * p;
                }
            }
            u *= lt / k as f64;
            acc += u * project(&w);
            if u > 1e280 {
                u *= 1e-280;
                acc *= 1e-280;
                scale_log += 280.0 * std::f64::consts::LN_10;
            }
        }
        if acc == 0.0 {
            return Ok(0.0);
        }
        let magnitude = (acc.abs().ln() + scale_log - lt).exp();
        Ok(acc.signum() * magnitude)
    }

    /// Dense generator matrix (row-major), for the expm test oracle.
    fn dense_generator(&self) -> Vec<Vec<f64>> {
        let m = self.n_states();
        let mut q = vec![vec![0.0; m]; m];
        for (s, row) in self.transitions.iter().enumerate() {
            q[s][s] = -self.out_rate[s];
            for &(t, rate) in row {
                q[s][t] += rate;
            }
        }
        q
    }

    /// Transient law via dense scaling-and-squaring matrix exponential.
    /// Independent of the uniformization path; capped at small windows.
    pub fn transient_law_expm(
        &self,
        init: &[f64],
        t: f64,
    ) -> Result<DistributionVector, OracleError> {
        const CAP: usize = 256;
        let m = self.n_states();
        if m > CAP {
            return Err(OracleError::DenseTooLarge(CAP, m));
        }
        if t < 0.0 {
            return Err(OracleError::NegativeTime(t));
        }
        let mut a = self.dense_generator();
        for row in a.iter_mut() {
            for v in row.iter_mut() {
                *v *= t;
            }
        }
        let e = expm(&a);
        let mut out = vec![0.0; m];
        for (i, &mass) in init.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for j in 0..m {
                out[j] += mass * e[i][j];
            }
        }
        Ok(out)
    }

    /// Full generator spectrum (ascending), from a Jacobi eigensolve of
    /// `D^{1/2} Q D^{-1/2}` (`D` the stationary law), which reversibility
    /// makes symmetric.
    pub fn spectrum(&self) -> Vec<f64> {
        let pi = self.stationary_law();
        let m = self.n_states();
        let q = self.dense_generator();
        let mut s = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                s[i][j] = q[i][j] * (pi[i] / pi[j]).sqrt();
            }
        }
        // enforce exact symmetry against roundoff
        for i in 0..m {
            for j in (i + 1)..m {
                let avg = 0.5 * (s[i][j] + s[j][i]);
                s[i][j] = avg;
                s[j][i] = avg;
            }
        }
        let mut eigs = jacobi_eigenvalues(s);
        eigs.sort_by(f64::total_cmp);
        eigs
    }

    /// Spectral gap of the generator: smallest nonzero eigenvalue magnitude.
    pub fn spectral_gap(&self) -> f64 {
        let eigs = self.spectrum();
        let m = eigs.len();
        let top = eigs[m - 1];
        assert!(top.abs() < 1e-8, "largest eigenvalue {top} should be zero");
        -eigs[m - 2]
    }
}

/// Dense matrix exponential by scaling and squaring with a Taylor core.
fn expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = a.len();
    let norm: f64 = a
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 2f64.powi(s as i32);
    let b: Vec<Vec<f64>> = a
        .iter()
        .map(|row| row.iter().map(|v| v / scale).collect())
        .collect();
    let mut result = identity(m);
    let mut term = identity(m);
    for k in 1..=24 {
        term = mat_mul(&term, &b);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        mat_add_assign(&mut result, &term);
    }
    for _ in 0..s {
        result = mat_mul(&result, &result);
    }
    result
}

fn identity(m: usize) -> Vec<Vec<f64>> {
    let mut i = vec![vec![0.0; m]; m];
    for (k, row) in i.iter_mut().enumerate() {
        row[k] = 1.0;
    }
    i
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = a.len();
    let mut c = vec![vec![0.0; m]; m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

fn mat_add_assign(a: &mut [Vec<f64>], b: &[Vec<f64>]) {
    for (ra, rb) in a.iter_mut().zip(b) {
        for (va, vb) in ra.iter_mut().zip(rb) {
            *va += vb;
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let m = a.len();
    if m == 1 {
        return vec![a[0][0]];
    }
    let scale: f64 = a
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
        .max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..m {
            for j in (i + 1)..m {
                off = off.max(a[i][j].abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..m {
            for r in (p + 1)..m {
                let apq = a[p][r];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[r][r] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let akp = a[k][p];
                    let akr = a[k][r];
                    a[k][p] = c * akp - s * akr;
                    a[k][r] = s * akp + c * akr;
                }
                for k in 0..m {
                    let apk = a[p][k];
                    let ark = a[r][k];
                    a[p][k] = c * apk - s * ark;
                    a[r][k] = s * apk + c * ark;
                }
            }
        }
    }
    (0..m).map(|i| a[i][i]).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayPoint {
    pub t: f64,
    pub exact_prob: f64,
    pub stationary_prob: f64,
    pub abs_diff: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayCurve {
    pub points: Vec<DecayPoint>,
    pub gap: f64,
    pub fit: Option<FitResult>,
}

/// Exact decay curve `|P^{delta_y}(eta_t in Gamma) - nu_hat(Gamma)|` over a
/// time grid, with an exponential fit and the spectral gap for comparison.
/// Points at or below `fit_floor` stay in the curve but are excluded from
/// the fit (they sit at the numerical noise level of the transient solve).
pub fn exact_decay(
    chain: &FiniteChain,
    y: SiteId,
    event: &CylinderEvent,
    t_grid: &[f64],
    tol: f64,
    fit_floor: f64,
) -> Result<DecayCurve, OracleError> {
    let init = chain.delta_distribution(1 << y.index());
    let stationary = chain.stationary_law();
    let target = chain.event_probability(&stationary, event);
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let dist = chain.transient_law(&init, t, tol)?;
        let p = chain.event_probability(&dist, event);
        // the centered route keeps relative precision where the plain
        // subtraction would cancel to noise
        let diff = chain.stationary_deviation(&init, event, t)?;
        points.push(DecayPoint {
            t,
            exact_prob: p,
            stationary_prob: target,
            abs_diff: diff.abs(),
        });
    }
    let fit_points: Vec<FitPoint> = points
        .iter()
        .filter(|p| p.abs_diff > fit_floor)
        .map(|p| FitPoint { x: p.t, estimate: p.abs_diff, se: 0.0 })
        .collect();
    let fit = stats::fit_exponential(&fit_points).ok();
    Ok(DecayCurve { points, gap: chain.spectral_gap(), fit })
}
