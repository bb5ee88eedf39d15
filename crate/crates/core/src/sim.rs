//! Exact-event simulation of trapped-atom number and coupled-manifold
//! occupancy.
//!
//! The state is `(N, k)`: `N` atoms in the trap, `k ≤ N` of them in the
//! probe-coupled manifold. From a state the process leaves through three
//! channels:
//!
//! - pumping up, `k → k+1`, at `γ₀→₁ = y·γ₁→₀` while `k < N`;
//! - pumping down, `k → k−1`, at `γ₁→₀ / k²` while `k > 0`;
//! - trap loss, `N → N−1`, at `Γ·N`. The departing atom is drawn uniformly
//!   from the trapped atoms, so it was coupled with probability `k/N`.
//!
//! Waiting times are exponential in the total rate (direct method). Every
//! trajectory owns a ChaCha stream seeded from a `u64`, so a given
//! `(rates, init, span, seed)` always reproduces the same events.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::physics::{pumping_rates, ManifoldModel};

/// Largest atom number the simulator will load.
pub const MAX_TRAPPED_ATOMS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    /// Downward pumping rate `γ₁→₀` (1/s).
    pub gamma_10: f64,
    /// `γ₀→₁ / γ₁→₀`.
    pub y: f64,
    /// Per-atom trap loss rate `Γ` (1/s).
    pub gamma_loss: f64,
    /// One-atom normalized intensity `I₁/I₀`.
    pub i1_over_i0: f64,
}

impl Default for RateModel {
    fn default() -> Self {
        Self {
            gamma_10: 1.0e5,
            y: 0.5,
            gamma_loss: 8.5,
            i1_over_i0: 3.6e-4,
        }
    }
}

impl RateModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_10.is_finite() && self.gamma_10 > 0.0) {
            return Err(Error::param("rates.gamma_10", "must be finite and > 0"));
        }
        if !(self.y.is_finite() && self.y > 0.0) {
            return Err(Error::param("rates.y", "must be finite and > 0"));
        }
        if !(self.gamma_loss.is_finite() && self.gamma_loss >= 0.0) {
            return Err(Error::param("rates.gamma_loss", "must be finite and >= 0"));
        }
        if !(self.i1_over_i0 > 0.0 && self.i1_over_i0 <= 1.0) {
            return Err(Error::param("rates.i1_over_i0", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Upward pumping rate `γ₀→₁`.
    pub fn gamma_01(&self) -> f64 {
        self.y * self.gamma_10
    }

    /// False when pumping is no longer at least 100x faster than loss, so
    /// the telegraph no longer averages out within a plateau.
    pub fn telegraph_is_fast(&self) -> bool {
        self.gamma_10 >= 100.0 * self.gamma_loss
    }

    /// Total exit rate from `state`.
    pub fn total_rate(&self, state: State) -> f64 {
        let (up, down) = pumping_rates(self.gamma_10, self.y, state.k as usize, state.n as usize);
        up + down + self.gamma_loss * state.n as f64
    }
}

/// Distribution of the trapped-atom number at the start of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    Fixed(usize),
    /// Poisson with mean `mu`, truncated at `n_max` and renormalized.
    Poisson {
        mu: f64,
        n_max: usize,
    },
    /// Explicit probabilities over `N = 0..len`, renormalized.
    Explicit(Vec<f64>),
}

impl InitialDistribution {
    /// Probabilities over `N = 0..=support_max`, summing to one.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let raw = match self {
            InitialDistribution::Fixed(n) => {
                let mut p = vec![0.0; n + 1];
                p[*n] = 1.0;
                p
            }
            InitialDistribution::Poisson { mu, n_max } => {
                if !(mu.is_finite() && *mu >= 0.0) {
                    return Err(Error::param("init.mu", "must be finite and >= 0"));
                }
                poisson_weights(*mu, *n_max)
            }
            InitialDistribution::Explicit(p) => {
                if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::param(
                        "init.probs",
                        "must be a nonempty list of finite nonnegative values",
                    ));
                }
                p.clone()
            }
        };
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::param("init", "probabilities sum to zero"));
        }
        Ok(raw.into_iter().map(|v| v / total).collect())
    }

    /// Largest atom number with nonzero probability mass allowed.
    pub fn support_max(&self) -> usize {
        match self {
            InitialDistribution::Fixed(n) => *n,
            InitialDistribution::Poisson { n_max, .. } => *n_max,
            InitialDistribution::Explicit(p) => p.len().saturating_sub(1),
        }
    }
}

/// Poisson pmf over `0..=n_max`, not renormalized.
pub(crate) fn poisson_weights(mu: f64, n_max: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n_max + 1);
    let mut term = (-mu).exp();
    w.push(term);
    for n in 1..=n_max {
        term *= mu / n as f64;
        w.push(term);
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State {
    /// Trapped atoms.
    pub n: u32,
    /// Atoms in the coupled manifold.
    pub k: u32,
}

impl State {
    pub fn new(n: u32, k: u32) -> Self {
        Self { n, k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    /// State entered at `time`.
    pub state: State,
}

/// Piecewise-constant record of `(N, k)` over `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrajectory {
    pub t_start: f64,
    pub t_end: f64,
    pub initial: State,
    pub events: Vec<Event>,
}

impl EventTrajectory {
    /// Segments `(start, end, state)` covering the whole span.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, State)> + '_ {
        let starts = std::iter::once((self.t_start, self.initial))
            .chain(self.events.iter().map(|e| (e.time, e.state)));
        let ends = self
            .events
            .iter()
            .map(|e| e.time)
            .chain(std::iter::once(self.t_end));
        starts.zip(ends).map(|((t0, s), t1)| (t0, t1, s))
    }

    pub fn state_at(&self, t: f64) -> State {
        let idx = self.events.partition_point(|e| e.time <= t);
        if idx == 0 {
            self.initial
        } else {
            self.events[idx - 1].state
        }
    }

    pub fn final_state(&self) -> State {
        self.events.last().map_or(self.initial, |e| e.state)
    }

    /// Change points of the trapped-atom number: the initial state followed
    /// by every loss event.
    pub fn atom_number_steps(&self) -> Vec<Event> {
        let mut out = vec![Event {
            time: self.t_start,
            state: self.initial,
        }];
        let mut n = self.initial.n;
        for e in &self.events {
            if e.state.n != n {
                n = e.state.n;
                out.push(*e);
            }
        }
        out
    }
}

/// Fraction of `[t_start, t_end]` spent in each `(N, k)` state.
pub fn occupancy_fractions(traj: &EventTrajectory) -> Result<BTreeMap<State, f64>> {
    if !(traj.t_end > traj.t_start) {
        return Err(Error::InvalidTimeSpan {
            start: traj.t_start,
            end: traj.t_end,
        });
    }
    let mut dwell: BTreeMap<State, f64> = BTreeMap::new();
    for (t0, t1, s) in traj.segments() {
        *dwell.entry(s).or_insert(0.0) += t1 - t0;
    }
    // normalize by the summed dwell so the fractions add to one exactly
    // up to rounding, independent of accumulated subtraction error
    let total: f64 = dwell.values().sum();
    for v in dwell.values_mut() {
        *v /= total;
    }
    Ok(dwell)
}

/// Collapse occupancy fractions onto `k`.
pub fn k_marginals(fractions: &BTreeMap<State, f64>) -> Vec<f64> {
    let k_max = fractions.keys().map(|s| s.k as usize).max().unwrap_or(0);
    let mut out = vec![0.0; k_max + 1];
    for (s, f) in fractions {
        out[s.k as usize] += f;
    }
    out
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draw one exact trajectory over `t_span`.
///
/// `N(t_start)` comes from `init`; `k(t_start)` from the stationary manifold
/// distribution for that `N`, since pumping equilibrates long before loss.
pub fn simulate_trajectory(
    rates: &RateModel,
    init: &InitialDistribution,
    t_span: (f64, f64),
    seed: u64,
) -> Result<EventTrajectory> {
    let (t_start, t_end) = t_span;
    if !(t_start.is_finite() && t_end.is_finite() && t_end > t_start) {
        return Err(Error::InvalidTimeSpan {
            start: t_start,
            end: t_end,
        });
    }
    rates.validate()?;
    if init.support_max() > MAX_TRAPPED_ATOMS {
        return Err(Error::TabulationLimit {
            n: init.support_max(),
            n_max: MAX_TRAPPED_ATOMS,
        });
    }
    let p_init = init.probabilities()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n0 = sample_index(&p_init, &mut rng);
    let manifold = ManifoldModel::new(rates.y, MAX_TRAPPED_ATOMS)?;
    let k0 = sample_index(&manifold.steady_state_distribution(n0)?, &mut rng);
    let mut state = State::new(n0 as u32, k0 as u32);

    let mut traj = EventTrajectory {
        t_start,
        t_end,
        initial: state,
        events: Vec::new(),
    };
    let mut t = t_start;
    loop {
        let (up, down) = pumping_rates(rates.gamma_10, rates.y, state.k as usize, state.n as usize);
        let loss = rates.gamma_loss * state.n as f64;
        let total = up + down + loss;
        if total <= 0.0 {
            break;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
        let mut t_next = t + wait;
        if t_next >= t_end {
            break;
        }
        if t_next <= t {
            // wait below one ulp of t; keep event times strictly increasing
            t_next = f64::from_bits(t.to_bits() + 1);
        }
        t = t_next;

        let pick = rng.random::<f64>() * total;
        if pick < up {
            state.k += 1;
        } else if pick < up + down {
            state.k -= 1;
        } else {
            let coupled = rng.random::<f64>() * (state.n as f64) < state.k as f64;
            state.n -= 1;
            if coupled {
                state.k -= 1;
            }
        }
        traj.events.push(Event { time: t, state });
    }
    Ok(traj)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trace `index` of a batch started from `master`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Simulate `n_traces` trajectories and pass each through `f` as soon as it
/// is drawn, so only the mapped values are retained.
///
/// Trace `i` always uses `child_seed(master_seed, i)`; the output order is
/// the trace order regardless of how the work is scheduled.
pub fn batch_map<T, F>(
    rates: &RateModel,
    init: &InitialDistribution,
    t_span: (f64, f64),
    n_traces: usize,
    master_seed: u64,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64, EventTrajectory) -> Result<T> + Sync,
{
    if n_traces == 0 {
        return Err(Error::param("n_traces", "must be >= 1"));
    }
    (0..n_traces)
        .into_par_iter()
        .map(|i| {
            let seed = child_seed(master_seed, i as u64);
            let traj = simulate_trajectory(rates, init, t_span, seed)?;
            f(i, seed, traj)
        })
        .collect()
}

pub fn batch_simulate(
    rates: &RateModel,
    init: &InitialDistribution,
    t_span: (f64, f64),
    n_traces: usize,
    master_seed: u64,
) -> Result<Vec<EventTrajectory>> {
    batch_map(rates, init, t_span, n_traces, master_seed, |_, _, traj| {
        Ok(traj)
    })
}
