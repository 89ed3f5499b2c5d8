//! First-stage discrete-time contact process on a half-line.
//!
//! Two distinct objects live here and are deliberately kept apart:
//!
//! * the abstract chain ([`step_contact`]) with the conditional-independence
//!   kernel parameterized by `(p, p_hat)`, plus the closed-form derivation
//!   of those parameters from `(q, theta)`;
//! * the pathwise coupling ([`coupled_contact`]) that reads the Harris marks
//!   on windows of length `theta` and turns a contact-process site on only
//!   when the race event forces the spin system to carry a particle there,
//!   so domination of the contact process by the spin system is structural
//!   rather than statistical.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{evolve, sample_initial, InitialLaw, Trajectory};
use crate::graph::{build_window, HalfLine, SiteId, WindowKind};
use crate::harris::HarrisScheme;
use crate::rng::StreamRng;
use crate::stats;

#[derive(Error, Debug)]
pub enum ContactError {
    #[error("q must lie in (0,1) and theta must be positive; got q={0}, theta={1}")]
    BadDerivation(f64, f64),
    #[error("contact parameters must lie in (0,1]: p={0}, p_hat={1}")]
    BadParams(f64, f64),
    #[error("coupling window theta*steps = {0} exceeds the scheme horizon {1}")]
    HorizonTooShort(f64, f64),
    #[error("initial contact configuration must sit below the spin state on the line")]
    NotDominatedAtStart,
    #[error("density experiment precondition failed: {0}")]
    BadDensityParams(String),
    #[error("window build failed: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("scheme error: {0}")]
    Scheme(#[from] crate::harris::SchemeError),
}

/// Parameters of the abstract discrete contact process.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ContactParams {
    pub p: f64,
    pub p_hat: f64,
}

impl ContactParams {
    pub fn new(p: f64, p_hat: f64) -> Result<Self, ContactError> {
        if !(p > 0.0 && p <= 1.0 && p_hat > 0.0 && p_hat <= 1.0) {
            return Err(ContactError::BadParams(p, p_hat));
        }
        Ok(ContactParams { p, p_hat })
    }
}

/// Closed-form derivation of the contact parameters from the spin density
/// `q` and the window length `theta`, with all intermediates exposed.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ParamDerivation {
    pub q: f64,
    pub theta: f64,
    /// Survival of an occupied site over one window: `e^{-theta(1-q)}`.
    pub p_prime: f64,
    /// One occupied neighbor wins the race: `q e^{-theta(1-q)} (1-e^{-theta})`.
    pub p_double_prime: f64,
    /// Two occupied neighbors, printed closed form
    /// `q e^{-2 theta(1-q)} [2(1-e^{-theta}) - (1-e^{-theta(2-q)})/(2-q)]`.
    pub p_triple_prime: f64,
    pub params: ContactParams,
}

pub fn derive_params(q: f64, theta: f64) -> Result<ParamDerivation, ContactError> {
    if !(q > 0.0 && q < 1.0 && theta > 0.0) {
        return Err(ContactError::BadDerivation(q, theta));
    }
    let p_prime = (-theta * (1.0 - q)).exp();
    let p_double_prime = q * p_prime * (1.0 - (-theta).exp());
    let bracket =
        2.0 * (1.0 - (-theta).exp()) - (1.0 - (-theta * (2.0 - q)).exp()) / (2.0 - q);
    let p_triple_prime = q * (-2.0 * theta * (1.0 - q)).exp() * bracket;
    let p_hat = p_double_prime.max(2.0 * p_triple_prime - p_triple_prime.powi(2));
    let params = ContactParams::new(p_prime, p_hat.clamp(f64::MIN_POSITIVE, 1.0))?;
    Ok(ParamDerivation { q, theta, p_prime, p_double_prime, p_triple_prime, params })
}

/// Occupancy over half-line indices `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactConfig {
    cells: Vec<u8>,
}

impl ContactConfig {
    pub fn new(cells: Vec<u8>) -> Self {
        debug_assert!(cells.iter().all(|&c| c <= 1));
        ContactConfig { cells }
    }

    pub fn empty(len: usize) -> Self {
        ContactConfig { cells: vec![0; len] }
    }

    pub fn singleton(len: usize, at: usize) -> Self {
        let mut cells = vec![0; len];
        cells[at] = 1;
        ContactConfig { cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, j: usize) -> u8 {
        self.cells[j]
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    fn occupied_neighbors(&self, j: usize) -> u32 {
        let mut k = 0;
        if j > 0 && self.cells[j - 1] == 1 {
            k += 1;
        }
        if j + 1 < self.cells.len() && self.cells[j + 1] == 1 {
            k += 1;
        }
        k
    }
}

/// One kernel step: sites update conditionally independently. An occupied
/// site stays with probability `p`; an empty one turns on with probability
/// `1 - (1 - p_hat)^k` for `k` occupied neighbors (the index-0 boundary site
/// only sees its right neighbor, the far end only its left).
pub fn step_contact(
    xi: &ContactConfig,
    params: &ContactParams,
    rng: &mut StreamRng,
) -> ContactConfig {
    let cells = (0..xi.len())
        .map(|j| {
            if xi.cells[j] == 1 {
                u8::from(rng.next_bool(params.p))
            } else {
                match xi.occupied_neighbors(j) {
                    0 => 0,
                    k => {
                        let turn_on = 1.0 - (1.0 - params.p_hat).powi(k as i32);
                        u8::from(rng.next_bool(turn_on))
                    }
                }
            }
        })
        .collect();
    ContactConfig::new(cells)
}

/// Result of the pathwise coupling run.
#[derive(Clone, Debug)]
pub struct CoupledContact {
    /// `xi_0, ..., xi_n`.
    pub steps: Vec<ContactConfig>,
    /// `(step, index)` pairs where the spin system failed to dominate.
    pub violations: Vec<(usize, usize)>,
    /// Stay-1 race trials and successes, for the marginal-law check.
    pub stay_attempts: usize,
    pub stay_successes: usize,
}

/// Build the coupled contact process on `hl` by reading the Harris marks of
/// the trajectory's scheme on windows `(theta n, theta (n+1)]`.
///
/// A site keeps its particle when its window has no type-0 mark; an empty
/// site with an occupied neighbor turns on when its first type-1 mark beats
/// both the window end and the neighbor's first type-0 mark (either
/// neighbor, when both are occupied). Each such event forces
/// `eta_{theta(n+1)}(z_j) = 1`, which the certificate re-checks pathwise.
pub fn coupled_contact(
    tr: &Trajectory,
    theta: f64,
    hl: &HalfLine,
    n_steps: usize,
    xi0: Option<ContactConfig>,
) -> Result<CoupledContact, ContactError> {
    let scheme = tr.scheme();
    let total = theta * n_steps as f64;
    if total > scheme.horizon() + 1e-12 {
        return Err(ContactError::HorizonTooShort(total, scheme.horizon()));
    }
    let m = hl.len();
    let xi0 = xi0.unwrap_or_else(|| {
        ContactConfig::new((0..m).map(|j| tr.value_at(hl.site(j), 0.0)).collect())
    });
    for j in 0..m {
        if xi0.get(j) > tr.value_at(hl.site(j), 0.0) {
            return Err(ContactError::NotDominatedAtStart);
        }
    }
    // first type-1 / type-0 mark of a site strictly inside (a, b]
    let first_mark = |site: SiteId, a: f64, b: f64, want_one: bool| -> Option<f64> {
        scheme
            .range(site, a, b)
            .iter()
            .find(|mk| mk.is_one == want_one)
            .map(|mk| mk.time)
    };
    let mut steps = Vec::with_capacity(n_steps + 1);
    let mut violations = Vec::new();
    let mut stay_attempts = 0usize;
    let mut stay_successes = 0usize;
    let mut cur = xi0;
    steps.push(cur.clone());
    for n in 0..n_steps {
        let a = theta * n as f64;
        let b = theta * (n + 1) as f64;
        let mut next = vec![0u8; m];
        for j in 0..m {
            let site = hl.site(j);
            if cur.get(j) == 1 {
                stay_attempts += 1;
                if first_mark(site, a, b, false).is_none() {
                    next[j] = 1;
                    stay_successes += 1;
                }
                continue;
            }
            let left = j.checked_sub(1).filter(|&k| cur.get(k) == 1).map(|k| hl.site(k));
            let right = (j + 1 < m && cur.get(j + 1) == 1).then(|| hl.site(j + 1));
            if left.is_none() && right.is_none() {
                continue;
            }
            // no type-0 at the site itself over the whole window
            if first_mark(site, a, b, false).is_some() {
                continue;
            }
            let Some(w1) = first_mark(site, a, b, true) else { continue };
            // the occupied neighbor must still be alive when the type-1
            // mark fires: its first type-0 mark has not yet happened
            let neighbor_alive = |nb: Option<SiteId>| -> bool {
                nb.is_some_and(|s| first_mark(s, a, b, false).map_or(true, |w0| w1 < w0))
            };
            if neighbor_alive(left) || neighbor_alive(right) {
                next[j] = 1;
            }
        }
        cur = ContactConfig::new(next);
        steps.push(cur.clone());
        // domination certificate at the step boundary
        for j in 0..m {
            if cur.get(j) == 1 && tr.value_at(hl.site(j), b) != 1 {
                violations.push((n + 1, j));
            }
        }
    }
    Ok(CoupledContact { steps, violations, stay_attempts, stay_successes })
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityReport {
    pub q: f64,
    pub reach: f64,
    pub horizon: f64,
    pub density_threshold: f64,
    pub replicas: usize,
    pub window_len: usize,
    pub fail_prob: f64,
    pub se: f64,
    /// Per-block frequency of holding at least `alpha * block` particles.
    pub block_freqs: Vec<f64>,
    pub block_size: usize,
    pub alpha: f64,
}

/// Monte Carlo estimate of the probability that the occupied density among
/// `z_0 .. z_{reach*t - 1}` at time `t` falls at or below `density_threshold`,
/// with per-block occupation statistics.
#[allow(clippy::too_many_arguments)]
pub fn density_experiment(
    law: &InitialLaw,
    q: f64,
    reach: f64,
    horizon: f64,
    density_threshold: f64,
    block_size: usize,
    alpha: f64,
    replicas: usize,
    seed: u64,
) -> Result<DensityReport, ContactError> {
    if !(q > 0.5 && q < 1.0) {
        return Err(ContactError::BadDensityParams(format!("q = {q} not in (1/2, 1)")));
    }
    if !(reach > 0.0 && reach < (2.0 * q - 1.0) / 2.0) {
        return Err(ContactError::BadDensityParams(format!(
            "reach {reach} must lie in (0, (2q-1)/2) = (0, {})",
            (2.0 * q - 1.0) / 2.0
        )));
    }
    if !(0.0..1.0).contains(&density_threshold) || !(0.0 < alpha && alpha < 1.0) {
        return Err(ContactError::BadDensityParams(
            "density_threshold in [0,1) and alpha in (0,1) required".into(),
        ));
    }
    let window_len = (reach * horizon).floor() as usize;
    if window_len == 0 || block_size == 0 {
        return Err(ContactError::BadDensityParams(
            "window and block must both be nonempty".into(),
        ));
    }
    // free-boundary margin past the measured stretch
    let margin = (horizon / 4.0).ceil() as usize + 10;
    let g = Arc::new(build_window(WindowKind::HalfLine, window_len + margin)?);
    let n_blocks = window_len.div_ceil(block_size);
    let results: Vec<(bool, Vec<bool>)> = (0..replicas)
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
            let init = sample_initial(law, &g, StreamRng::derive_seed(seed ^ 0xD1CE, i as u64));
            let tr = evolve(&init, &s);
            let state = tr.state_at(horizon).expect("horizon in range");
            let occupied: Vec<bool> =
                (0..window_len).map(|j| state.get(SiteId::new(j)) == 1).collect();
            let count = occupied.iter().filter(|&&o| o).count();
            let fail = (count as f64 / window_len as f64) <= density_threshold;
            let blocks: Vec<bool> = (0..n_blocks)
                .map(|l| {
                    let lo = l * block_size;
                    let hi = (lo + block_size).min(window_len);
                    let c = occupied[lo..hi].iter().filter(|&&o| o).count();
                    c as f64 >= alpha * block_size as f64
                })
                .collect();
            (fail, blocks)
        })
        .collect();
    let fails = results.iter().filter(|r| r.0).count();
    let fail_prob = fails as f64 / replicas as f64;
    let block_freqs: Vec<f64> = (0..n_blocks)
        .map(|l| {
            results.iter().filter(|r| r.1[l]).count() as f64 / replicas as f64
        })
        .collect();
    Ok(DensityReport {
        q,
        reach,
        horizon,
        density_threshold,
        replicas,
        window_len,
        fail_prob,
        se: stats::binomial_se(fail_prob, replicas),
        block_freqs,
        block_size,
        alpha,
    })
}
