//! Pure-death population model and the one-parameter fit of the per-atom
//! loss rate.
//!
//! With every atom lost independently at rate `Γ`, an initial population of
//! `m` atoms is binomially thinned: after time `τ` each survives with
//! probability `s = e^(−Γτ)`. Mixing over the initial distribution gives the
//! closed-form solution of `Ṗ_N = −Γ(N·P_N − (N+1)·P_{N+1})`.

use crate::analysis::PopulationCurves;
use crate::error::{Error, Result};
use crate::sim::poisson_weights;

#[derive(Debug, Clone, PartialEq)]
pub struct DeathModel {
    /// Per-atom loss rate (1/s).
    pub gamma: f64,
    /// Probabilities over `N = 0..len` at `t0`.
    pub p_init: Vec<f64>,
    pub t0: f64,
}

impl DeathModel {
    pub fn new(gamma: f64, p_init: Vec<f64>, t0: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::param("gamma", "must be finite and >= 0"));
        }
        if p_init.is_empty() || p_init.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::param(
                "p_init",
                "must be nonempty, finite and nonnegative",
            ));
        }
        let total: f64 = p_init.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::param("p_init", format!("sums to {total}, not 1")));
        }
        if !t0.is_finite() {
            return Err(Error::NonFinite("t0"));
        }
        Ok(Self { gamma, p_init, t0 })
    }

    pub fn propagate(&self, t: f64) -> Result<Vec<f64>> {
        death_propagate(self, t)
    }

    /// `E[N(t)] = E[N(t0)]·e^(−Γ(t−t0))`.
    pub fn mean(&self, t: f64) -> f64 {
        let m0: f64 = self
            .p_init
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum();
        m0 * (-self.gamma * (t - self.t0)).exp()
    }
}

/// `ln(k!)` for `k = 0..=n`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(acc);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Distribution over `N` at time `t ≥ t0`.
pub fn death_propagate(model: &DeathModel, t: f64) -> Result<Vec<f64>> {
    let tau = t - model.t0;
    if !(tau >= 0.0) {
        return Err(Error::InvalidTimeSpan {
            start: model.t0,
            end: t,
        });
    }
    let len = model.p_init.len();
    let x = model.gamma * tau;
    if x == 0.0 {
        return Ok(model.p_init.clone());
    }
    let mut out = vec![0.0; len];
    if x.is_infinite() {
        out[0] = 1.0;
        return Ok(out);
    }
    let ln_s = -x;
    // 1 − s without cancellation when Γτ is small
    let ln_1ms = (-(-x).exp_m1()).ln();
    let lf = ln_factorials(len);
    for (m, pm) in model.p_init.iter().enumerate() {
        if *pm == 0.0 {
            continue;
        }
        for (n, slot) in out.iter_mut().enumerate().take(m + 1) {
            let ln_c = lf[m] - lf[n] - lf[m - n];
            let ln_pmf = ln_c + n as f64 * ln_s + (m - n) as f64 * ln_1ms;
            *slot += pm * ln_pmf.exp();
        }
    }
    Ok(out)
}

/// `P(N ≥ first)` for `N ~ Poisson(mu)`.
pub fn poisson_upper_tail(mu: f64, first: usize) -> f64 {
    if mu <= 0.0 {
        return if first == 0 { 1.0 } else { 0.0 };
    }
    if mu < first as f64 {
        // sum the tail directly; 1 − head would cancel
        let head = poisson_weights(mu, first);
        let mut term = head[first];
        let mut sum = 0.0;
        let mut n = first;
        while term > 1e-18 * sum || sum == 0.0 {
            sum += term;
            n += 1;
            term *= mu / n as f64;
            if n > first + 10_000 || term == 0.0 {
                break;
            }
        }
        sum
    } else {
        let head: f64 = poisson_weights(mu, first.saturating_sub(1))
            .iter()
            .take(first)
            .sum();
        1.0 - head
    }
}

/// Poisson mean whose upper tail `P(N ≥ 3)` equals `phi_ge3`.
pub fn solve_poisson_mu(phi_ge3: f64) -> Result<f64> {
    solve_poisson_tail(phi_ge3, 3, (0.0, 100.0))
}

/// Bisection for `μ` with `P(N ≥ first; μ) = tail_mass` on `bracket`.
pub fn solve_poisson_tail(tail_mass: f64, first: usize, bracket: (f64, f64)) -> Result<f64> {
    if !(tail_mass > 0.0 && tail_mass < 1.0) {
        return Err(Error::param(
            "tail_mass",
            format!("must lie in (0, 1), got {tail_mass}"),
        ));
    }
    let f = |mu: f64| poisson_upper_tail(mu, first) - tail_mass;
    let (mut lo, mut hi) = bracket;
    let (f_lo, f_hi) = (f(lo), f(hi));
    if !(f_lo <= 0.0 && f_hi >= 0.0) {
        return Err(Error::NotBracketed { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    debug_assert!(f(mu).abs() <= 1e-10);
    Ok(mu)
}

/// Initial distribution over `N = 0..=n_max` together with the Poisson mean
/// fitted to the unresolved tail, if there was one.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub p: Vec<f64>,
    pub mu: Option<f64>,
}

/// Resolved bands at the first time bin are taken directly; the aggregate
/// band is spread over `n_resolved+1..=n_max` with Poisson weights whose
/// tail matches its mass.
pub fn build_initial_distribution(
    curves: &PopulationCurves,
    n_max: usize,
) -> Result<InitialCondition> {
    curves.validate()?;
    let n_res = curves.n_resolved;
    if n_max <= n_res {
        return Err(Error::param(
            "n_max",
            format!("must exceed n_resolved = {n_res}"),
        ));
    }
    let row: Vec<f64> = curves.phi[0].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let tail = row[n_res + 1];
    let mut p = vec![0.0; n_max + 1];
    p[..=n_res].copy_from_slice(&row[..=n_res]);
    let mu = if tail > 0.0 {
        let mu = solve_poisson_tail(tail, n_res + 1, (0.0, 100.0))?;
        let w = poisson_weights(mu, n_max);
        let w_tail: f64 = w[n_res + 1..].iter().sum();
        for n in n_res + 1..=n_max {
            p[n] = tail * w[n] / w_tail;
        }
        Some(mu)
    } else {
        None
    };
    let total: f64 = p.iter().sum();
    if !(total > 0.0) {
        return Err(Error::param("curves", "no population at t0"));
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(InitialCondition { p, mu })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub gamma_hat: f64,
    pub mu_hat: Option<f64>,
    /// `J(Γ̂)`, the summed squared band residuals.
    pub residual: f64,
    pub iterations: usize,
    /// Entries clamped into [0, 1] by more than 1e-9, plus rows renormalized
    /// by more than 2%.
    pub warnings: usize,
}

/// Curves clamped to [0, 1] and renormalized per time bin.
fn sanitize(curves: &PopulationCurves) -> Result<(Vec<Vec<f64>>, usize)> {
    if curves.phi.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("population curves"));
    }
    let mut warnings = 0;
    let rows = curves
        .phi
        .iter()
        .map(|row| {
            let mut r: Vec<f64> = row
                .iter()
                .map(|v| {
                    let c = v.clamp(0.0, 1.0);
                    if (c - v).abs() > 1e-9 {
                        warnings += 1;
                    }
                    c
                })
                .collect();
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 0.02 {
                warnings += 1;
            }
            if sum > 0.0 {
                r.iter_mut().for_each(|v| *v /= sum);
            }
            r
        })
        .collect();
    Ok((rows, warnings))
}

/// Model band populations at `t`: `P_0..P_{n_resolved}` and the complement.
fn model_bands(model: &DeathModel, t: f64, n_resolved: usize) -> Result<Vec<f64>> {
    let p = model.propagate(t)?;
    let mut bands: Vec<f64> = (0..=n_resolved)
        .map(|n| p.get(n).copied().unwrap_or(0.0))
        .collect();
    let resolved: f64 = bands.iter().sum();
    bands.push((1.0 - resolved).max(0.0));
    Ok(bands)
}

/// Model curves on the data's time grid. The model starts at the first grid
/// point, where the initial distribution was read off.
pub fn model_curves(
    curves: &PopulationCurves,
    p_init: &[f64],
    gamma: f64,
) -> Result<PopulationCurves> {
    let model = DeathModel::new(gamma, p_init.to_vec(), curves.time_grid[0])?;
    let phi = curves
        .time_grid
        .iter()
        .map(|t| model_bands(&model, *t, curves.n_resolved))
        .collect::<Result<Vec<_>>>()?;
    Ok(PopulationCurves {
        phi,
        ..curves.clone()
    })
}

/// `J(Γ) = Σ_t Σ_bands (P_band(t; Γ) − Φ_band(t))²` on sanitized rows.
fn objective(
    rows: &[Vec<f64>],
    time_grid: &[f64],
    p_init: &[f64],
    n_resolved: usize,
    gamma: f64,
) -> f64 {
    let model = DeathModel {
        gamma,
        p_init: p_init.to_vec(),
        t0: time_grid[0],
    };
    rows.iter()
        .zip(time_grid)
        .map(|(row, t)| {
            let m = model_bands(&model, *t, n_resolved).expect("t >= t0 on the grid");
            m.iter()
                .zip(row)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Least-squares objective of the fit, for inspection and scans.
pub fn fit_objective(curves: &PopulationCurves, p_init: &[f64], gamma: f64) -> Result<f64> {
    let (rows, _) = sanitize(curves)?;
    DeathModel::new(gamma, p_init.to_vec(), curves.time_grid[0])?;
    Ok(objective(
        &rows,
        &curves.time_grid,
        p_init,
        curves.n_resolved,
        gamma,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub bracket: (f64, f64),
    /// Stop once the bracket is narrower than `rel_tol · Γ̂`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bracket: (0.1, 100.0),
            rel_tol: 1e-4,
            max_iter: 500,
        }
    }
}

/// Golden-section search for the `Γ` minimizing [`fit_objective`].
pub fn fit_gamma(
    curves: &PopulationCurves,
    p_init: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    curves.validate()?;
    let (a0, b0) = opts.bracket;
    if !(a0.is_finite() && b0.is_finite() && a0 > 0.0 && b0 > a0) {
        return Err(Error::param(
            "bracket",
            format!("need 0 < lo < hi, got ({a0}, {b0})"),
        ));
    }
    if curves.time_grid.len() < 10 {
        return Err(Error::param("curves", "need at least 10 time bins"));
    }
    DeathModel::new(a0, p_init.to_vec(), curves.time_grid[0])?;
    let (rows, warnings) = sanitize(curves)?;
    let j = |g: f64| objective(&rows, &curves.time_grid, p_init, curves.n_resolved, g);

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a0, b0);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = j(x1);
    let mut f2 = j(x2);
    let mut iterations = 0;
    while b - a > opts.rel_tol * 0.5 * (a + b) && iterations < opts.max_iter {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = j(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = j(x2);
        }
        iterations += 1;
    }
    let gamma_hat = 0.5 * (a + b);
    if a == a0 || b == b0 {
        let edge = if a == a0 { a0 } else { b0 };
        return Err(Error::BracketEdge { gamma_hat, edge });
    }
    Ok(FitResult {
        gamma_hat,
        mu_hat: None,
        residual: j(gamma_hat),
        iterations,
        warnings,
    })
}

/// Build the initial distribution from the curves, then fit `Γ`.
pub fn fit_populations(
    curves: &PopulationCurves,
    n_max: usize,
    opts: &FitOptions,
) -> Result<(FitResult, InitialCondition)> {
    let init = build_initial_distribution(curves, n_max)?;
    let mut fit = fit_gamma(curves, &init.p, opts)?;
    fit.mu_hat = init.mu;
    Ok((fit, init))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(gamma: f64, p: Vec<f64>) -> DeathModel {
        DeathModel::new(gamma, p, 0.0).unwrap()
    }

    fn exact_curves(gamma: f64, p_init: &[f64], n_bins: usize) -> PopulationCurves {
        let grid: Vec<f64> = (0..n_bins).map(|i| 0.039 + 0.01 * i as f64).collect();
        let template = PopulationCurves {
            t0: 0.034,
            bin_width: 0.01,
            time_grid: grid,
            phi: vec![vec![0.0; 4]; n_bins],
            n_resolved: 2,
        };
        model_curves(&template, p_init, gamma).unwrap()
    }

    #[test]
    fn propagate_at_origin_is_identity() {
        let p = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(model(8.5, p.clone()).propagate(0.0).unwrap(), p);
    }

    #[test]
    fn single_atom_half_life() {
        let m = model(2.0, vec![0.0, 1.0]);
        let p = m.propagate(2f64.ln() / 2.0).unwrap();
        assert_close!(p[0], 0.5, 1e-15);
        assert_close!(p[1], 0.5, 1e-15);
    }

    #[test]
    fn long_times_empty_the_trap() {
        let m = model(8.5, vec![0.0, 0.2, 0.3, 0.5]);
        let p = m.propagate(100.0).unwrap();
        assert_close!(p[0], 1.0, 1e-12);
        assert!(p[1..].iter().all(|v| *v < 1e-12));
        assert!(m.propagate(-1.0).is_err());
    }

    #[test]
    fn rejects_unnormalized_initial_state() {
        assert!(DeathModel::new(1.0, vec![0.5, 0.4], 0.0).is_err());
        assert!(DeathModel::new(-1.0, vec![1.0], 0.0).is_err());
    }

    #[test]
    fn poisson_tail_at_loading_mean() {
        // independent arithmetic: 1 − e^{−5.2}(1 + 5.2 + 13.52)
        let direct = 1.0 - (-5.2f64).exp() * 19.72;
        assert_close!(poisson_upper_tail(5.2, 3), direct, 1e-15);
        assert_close!(direct, 0.8912, 1e-4);
        assert_close!(solve_poisson_mu(0.8912).unwrap(), 5.2, 5e-4);
        assert_close!(solve_poisson_mu(direct).unwrap(), 5.2, 1e-9);
    }

    #[test]
    fn poisson_solve_round_trip_and_limits() {
        for x in [0.1, 0.5, 0.9] {
            let mu = solve_poisson_mu(x).unwrap();
            assert_close!(poisson_upper_tail(mu, 3), x, 1e-9);
        }
        let tiny = solve_poisson_mu(1e-12).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-3);
        assert_close!(poisson_upper_tail(tiny, 3), 1e-12, 1e-20);
        assert!(solve_poisson_mu(0.0).is_err());
        assert!(solve_poisson_mu(1.0).is_err());
        assert!(matches!(
            solve_poisson_tail(0.9, 3, (0.0, 1.0)),
            Err(Error::NotBracketed { .. })
        ));
    }

    #[test]
    fn small_mu_tail_matches_series() {
        let mu: f64 = 0.01;
        let series: f64 = (3..30)
            .map(|n| {
                let fact: f64 = (1..=n).map(|j| j as f64).product();
                (-mu).exp() * mu.powi(n) / fact
            })
            .sum();
        assert!((poisson_upper_tail(mu, 3) / series - 1.0).abs() < 1e-12);
    }

    #[test]
    fn initial_distribution_from_curves() {
        let mut curves = exact_curves(8.5, &[1.0], 12);
        curves.phi[0] = vec![1.0, 0.0, 0.0, 0.0];
        let init = build_initial_distribution(&curves, 15).unwrap();
        assert_eq!(init.mu, None);
        assert_eq!(init.p[0], 1.0);
        assert!(init.p[1..].iter().all(|v| *v == 0.0));

        curves.phi[0] = vec![0.0, 0.0, 0.0, 1.0];
        assert!(build_initial_distribution(&curves, 15).is_err());

        let tail = poisson_upper_tail(5.2, 3);
        curves.phi[0] = vec![0.02, 0.03, 1.0 - 0.05 - tail, tail];
        let init = build_initial_distribution(&curves, 15).unwrap();
        assert_close!(init.mu.unwrap(), 5.2, 1e-9);
        assert_close!(init.p.iter().sum::<f64>(), 1.0, 1e-12);
        assert_close!(init.p[3..].iter().sum::<f64>(), tail, 1e-12);
        // tail shape is Poisson(5.2)
        let w = poisson_weights(5.2, 15);
        assert_close!(init.p[4] / init.p[3], w[4] / w[3], 1e-12);
    }

    #[test]
    fn truncation_at_fifteen_is_negligible() {
        let w = poisson_weights(5.2, 15);
        let truncated: f64 = w[3..].iter().sum();
        assert!((poisson_upper_tail(5.2, 3) - truncated).abs() < 1e-3);
    }

    #[test]
    fn fit_recovers_generating_rate() {
        let p_init = {
            let mut p = poisson_weights(5.2, 15);
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            p
        };
        let curves = exact_curves(8.5, &p_init, 150);
        let fit = fit_gamma(&curves, &p_init, &FitOptions::default()).unwrap();
        assert_close!(fit.gamma_hat, 8.5, 0.01);
        assert!(fit.residual < 1e-10);
        assert_eq!(fit.warnings, 0);
    }

    #[test]
    fn objective_minimum_is_global_on_scan() {
        let p_init = vec![0.05, 0.1, 0.15, 0.3, 0.4];
        let curves = exact_curves(8.5, &p_init, 100);
        let at_truth = fit_objective(&curves, &p_init, 8.5).unwrap();
        for i in 0..100 {
            let g = 0.1 + (100.0 - 0.1) * i as f64 / 99.0;
            assert!(fit_objective(&curves, &p_init, g).unwrap() >= at_truth);
        }
    }

    #[test]
    fn static_curves_hit_lower_edge() {
        let p_init = vec![0.1, 0.2, 0.3, 0.4];
        let mut curves = exact_curves(8.5, &p_init, 20);
        for row in curves.phi.iter_mut() {
            *row = p_init.clone();
        }
        match fit_gamma(&curves, &p_init, &FitOptions::default()) {
            Err(Error::BracketEdge { edge, gamma_hat }) => {
                assert_eq!(edge, 0.1);
                assert!(gamma_hat < 0.1001);
            }
            other => panic!("expected bracket-edge error, got {other:?}"),
        }
    }

    #[test]
    fn fit_input_checks() {
        let p_init = vec![0.0, 1.0];
        let mut curves = exact_curves(8.5, &p_init, 20);
        assert!(fit_gamma(
            &curves,
            &p_init,
            &FitOptions {
                bracket: (5.0, 1.0),
                ..FitOptions::default()
            }
        )
        .is_err());
        let short = exact_curves(8.5, &p_init, 5);
        assert!(fit_gamma(&short, &p_init, &FitOptions::default()).is_err());
        curves.phi[3][1] = f64::NAN;
        assert!(fit_gamma(&curves, &p_init, &FitOptions::default()).is_err());
    }

    #[test]
    fn noisy_rows_are_clamped_and_counted() {
        let p_init = vec![0.0, 0.5, 0.5];
        let mut curves = exact_curves(8.5, &p_init, 40);
        curves.phi[5] = vec![-0.05, 0.6, 0.5, 0.0];
        let fit = fit_gamma(&curves, &p_init, &FitOptions::default()).unwrap();
        assert_eq!(fit.warnings, 2);
        assert_close!(fit.gamma_hat, 8.5, 0.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.0f64..1.0, len).prop_filter_map("nonzero", |w| {
                let s: f64 = w.iter().sum();
                (s > 1e-6).then(|| w.iter().map(|v| v / s).collect())
            })
        }

        proptest! {
            #[test]
            fn conserves_probability_and_mean(
                p in simplex(16),
                gamma in 0.0f64..50.0,
                t in 0.0f64..1.0,
            ) {
                let m = DeathModel::new(gamma, p, 0.0).unwrap();
                let out = m.propagate(t).unwrap();
                prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                let mean: f64 = out.iter().enumerate().map(|(n, v)| n as f64 * v).sum();
                prop_assert!((mean - m.mean(t)).abs() < 1e-10);
            }

            #[test]
            fn semigroup(
                p in simplex(12),
                gamma in 0.0f64..30.0,
                t1 in 0.0f64..0.5,
                dt in 0.0f64..0.5,
            ) {
                let m = DeathModel::new(gamma, p, 0.0).unwrap();
                let mid = m.propagate(t1).unwrap();
                let total: f64 = mid.iter().sum();
                let mid = mid.iter().map(|v| v / total).collect();
                let two_step = DeathModel::new(gamma, mid, t1).unwrap().propagate(t1 + dt).unwrap();
                let direct = m.propagate(t1 + dt).unwrap();
                for (a, b) in two_step.iter().zip(&direct) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }
}
