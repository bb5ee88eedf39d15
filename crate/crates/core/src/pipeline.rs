//! The stages wired together as the command-line tool runs them.

use crate::analysis::{
    find_bands, histogram_2d, histogram_amplitudes, population_curves, uniform_edges, BandSet,
    Histogram1D, Histogram2D, PopulationCurves,
};
use crate::config::RunConfig;
use crate::detection::{detect_raw, ensure_filtered, render_levels, Trace};
use crate::error::{Error, Result};
use crate::fit::{fit_populations, model_curves, FitResult, InitialCondition};
use crate::physics::ManifoldModel;
use crate::sim::{batch_map, Event, EventTrajectory};

/// One simulated record as written by `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrace {
    pub index: usize,
    pub seed: u64,
    /// Detector-stage record; the digital stage is applied at analysis.
    pub trace: Trace,
    /// Initial state followed by every loss event.
    pub truth: Vec<Event>,
}

/// Simulate and detect every trace of the batch, handing each to `f` along
/// with its full trajectory. Only what `f` returns is kept.
pub fn simulate_each<T, F>(cfg: &RunConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(SimulatedTrace, &EventTrajectory) -> Result<T> + Sync,
{
    cfg.validate()?;
    batch_map(
        &cfg.rates,
        &cfg.init,
        cfg.sim.t_span(),
        cfg.sim.n_traces,
        cfg.sim.seed,
        |index, seed, traj| {
            let signal = render_levels(&traj, cfg.rates.i1_over_i0);
            let mut trace = detect_raw(&signal, &cfg.detection, seed)?;
            trace.meta.extra.insert("trace".into(), index.to_string());
            let sim = SimulatedTrace {
                index,
                seed,
                trace,
                truth: traj.atom_number_steps(),
            };
            f(sim, &traj)
        },
    )
}

pub fn simulate_batch(cfg: &RunConfig) -> Result<Vec<SimulatedTrace>> {
    simulate_each(cfg, |sim, _| Ok(sim))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// Every sample from `analysis.t0` on.
    pub histogram: Histogram1D,
    pub histogram_2d: Histogram2D,
    pub bands: BandSet,
    pub curves: PopulationCurves,
}

/// Normalized units with the digital stage applied, as analysis expects.
pub fn prepare_traces(traces: &[Trace], cfg: &RunConfig) -> Result<Vec<Trace>> {
    traces
        .iter()
        .map(|t| ensure_filtered(&t.to_normalized(), cfg.detection.digital_bandwidth))
        .collect()
}

pub fn analyze(traces: &[Trace], cfg: &RunConfig) -> Result<Analysis> {
    if traces.is_empty() {
        return Err(Error::param("traces", "need at least one trace"));
    }
    let traces = prepare_traces(traces, cfg)?;
    let a = &cfg.analysis;
    let amp_edges = uniform_edges(a.amp_min, a.amp_max, a.bins)?;
    let histogram = histogram_amplitudes(&traces, (a.t0, f64::INFINITY), &amp_edges)?;

    let t_end = traces
        .iter()
        .map(Trace::t_end)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(t_end > a.t0) {
        return Err(Error::EmptyWindow {
            start: a.t0,
            end: t_end,
        });
    }
    let n_time = ((t_end - a.t0) / a.time_bin).ceil().max(1.0) as usize;
    let time_edges: Vec<f64> = (0..=n_time).map(|i| a.t0 + i as f64 * a.time_bin).collect();
    let histogram_2d = histogram_2d(&traces, &amp_edges, &time_edges)?;

    let bands = match &a.boundaries {
        Some(b) => BandSet::from_boundaries(b.clone())?,
        None => find_bands(&histogram, a.min_prominence, a.n_resolved)?,
    };
    let curves = population_curves(&traces, &bands, a.t0, a.time_bin)?;
    Ok(Analysis {
        histogram,
        histogram_2d,
        bands,
        curves,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub result: FitResult,
    pub initial: InitialCondition,
    /// Model populations on the data's time grid.
    pub model: PopulationCurves,
}

pub fn fit(curves: &PopulationCurves, cfg: &RunConfig) -> Result<FitOutput> {
    let (result, initial) = fit_populations(curves, cfg.fit.n_max, &cfg.fit.options())?;
    let model = model_curves(curves, &initial.p, result.gamma_hat)?;
    Ok(FitOutput {
        result,
        initial,
        model,
    })
}

/// `(N, p₀^(N))` rows.
pub type PlateauTable = Vec<(usize, f64)>;

/// One table per configured `y`.
pub fn plateau_tables(cfg: &RunConfig) -> Result<Vec<(f64, PlateauTable)>> {
    cfg.model
        .y_values
        .iter()
        .map(|&y| Ok((y, ManifoldModel::new(y, cfg.model.n_max)?.plateau_table())))
        .collect()
}

/// Band populations from the true atom numbers, on the grid `curves` uses.
pub fn truth_populations(truths: &[Vec<Event>], template: &PopulationCurves) -> PopulationCurves {
    let n_bands = template.n_bands();
    let phi = template
        .time_grid
        .iter()
        .map(|t| {
            let mut row = vec![0.0; n_bands];
            for steps in truths {
                let n = steps
                    .iter()
                    .take_while(|e| e.time <= *t)
                    .last()
                    .map_or(steps[0].state.n, |e| e.state.n) as usize;
                row[n.min(n_bands - 1)] += 1.0;
            }
            row.iter_mut().for_each(|v| *v /= truths.len() as f64);
            row
        })
        .collect();
    PopulationCurves {
        phi,
        ..template.clone()
    }
}
