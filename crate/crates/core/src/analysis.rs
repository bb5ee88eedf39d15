//! Histograms, plateau bands and time-resolved populations.
//!
//! All functions here read trace samples as they are. Callers pass traces
//! that already carry the digital low-pass stage and share one unit system
//! (normalized, in the CLI and pipeline).

use rayon::prelude::*;

use crate::detection::Trace;
use crate::error::{Error, Result};

/// Strictly increasing bin edges with `n` equal bins on `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) || n == 0 {
        return Err(Error::param(
            "edges",
            format!("need lo < hi and n >= 1, got [{lo}, {hi}] / {n}"),
        ));
    }
    let w = (hi - lo) / n as f64;
    Ok((0..=n)
        .map(|i| if i == n { hi } else { lo + i as f64 * w })
        .collect())
}

fn check_edges(edges: &[f64], what: &'static str) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param(
            what,
            "edges must be strictly increasing with >= 2 entries",
        ));
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// Bin holding `v`. Values outside the edges land in the first or last bin
/// so every pooled sample is counted.
fn clamped_bin(edges: &[f64], v: f64) -> usize {
    let n = edges.len() - 1;
    edges
        .partition_point(|e| *e <= v)
        .saturating_sub(1)
        .min(n - 1)
}

/// Bin holding `t`, or `None` outside `[edges[0], edges[last])`.
fn time_bin(edges: &[f64], t: f64) -> Option<usize> {
    if t < edges[0] || t >= edges[edges.len() - 1] {
        return None;
    }
    Some(edges.partition_point(|e| *e <= t) - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram1D {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram1D {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        check_edges(&edges, "histogram")?;
        let counts = vec![0; edges.len() - 1];
        Ok(Self { edges, counts })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts divided by the total.
    pub fn fractions(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|c| *c as f64 / total).collect()
    }

    fn merge(mut self, other: Self) -> Self {
        self.counts
            .iter_mut()
            .zip(other.counts)
            .for_each(|(a, b)| *a += b);
        self
    }
}

/// Pool every sample with `window.0 ≤ t < window.1` across `traces`.
pub fn histogram_amplitudes(
    traces: &[Trace],
    window: (f64, f64),
    amplitude_edges: &[f64],
) -> Result<Histogram1D> {
    if traces.is_empty() {
        return Err(Error::param("traces", "need at least one trace"));
    }
    if amplitude_edges.len() < 11 {
        return Err(Error::param("bins", "need at least 10 amplitude bins"));
    }
    let empty = Histogram1D::new(amplitude_edges.to_vec())?;
    let hist = traces
        .par_iter()
        .map(|tr| {
            let mut h = empty.clone();
            for (i, v) in tr.samples.iter().enumerate() {
                let t = tr.time_at(i);
                if t >= window.0 && t < window.1 {
                    h.counts[clamped_bin(&h.edges, *v)] += 1;
                }
            }
            h
        })
        .reduce(|| empty.clone(), Histogram1D::merge);
    if hist.total() == 0 {
        return Err(Error::EmptyWindow {
            start: window.0,
            end: window.1,
        });
    }
    Ok(hist)
}

/// Counts binned by amplitude (rows) and time (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub amplitude_edges: Vec<f64>,
    pub time_edges: Vec<f64>,
    /// `counts[amplitude_bin][time_bin]`.
    pub counts: Vec<Vec<u64>>,
}

impl Histogram2D {
    /// Sum over time, an amplitude histogram of the whole time window.
    pub fn time_marginal(&self) -> Histogram1D {
        Histogram1D {
            edges: self.amplitude_edges.clone(),
            counts: self.counts.iter().map(|row| row.iter().sum()).collect(),
        }
    }

    pub fn window(&self) -> (f64, f64) {
        (
            self.time_edges[0],
            self.time_edges[self.time_edges.len() - 1],
        )
    }

    fn merge(mut self, other: Self) -> Self {
        for (row, orow) in self.counts.iter_mut().zip(other.counts) {
            row.iter_mut().zip(orow).for_each(|(a, b)| *a += b);
        }
        self
    }
}

pub fn histogram_2d(
    traces: &[Trace],
    amplitude_edges: &[f64],
    time_edges: &[f64],
) -> Result<Histogram2D> {
    if traces.is_empty() {
        return Err(Error::param("traces", "need at least one trace"));
    }
    if amplitude_edges.len() < 11 {
        return Err(Error::param("bins", "need at least 10 amplitude bins"));
    }
    check_edges(amplitude_edges, "amplitude histogram")?;
    check_edges(time_edges, "time histogram")?;
    let empty = Histogram2D {
        amplitude_edges: amplitude_edges.to_vec(),
        time_edges: time_edges.to_vec(),
        counts: vec![vec![0; time_edges.len() - 1]; amplitude_edges.len() - 1],
    };
    let hist = traces
        .par_iter()
        .map(|tr| {
            let mut h = empty.clone();
            for (i, v) in tr.samples.iter().enumerate() {
                if let Some(tb) = time_bin(&h.time_edges, tr.time_at(i)) {
                    h.counts[clamped_bin(&h.amplitude_edges, *v)][tb] += 1;
                }
            }
            h
        })
        .reduce(|| empty.clone(), Histogram2D::merge);
    if hist.counts.iter().flatten().all(|c| *c == 0) {
        let (start, end) = hist.window();
        return Err(Error::EmptyWindow { start, end });
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Amplitude at the peak (center of its top bins).
    pub position: f64,
    pub count: u64,
    pub prominence: u64,
    /// First and last bin of the peak's flat top.
    pub bins: (usize, usize),
}

/// Local maxima of `counts` with their topographic prominence.
///
/// A flat top counts as one maximum. The base on each side is the lowest
/// bin reached before climbing above the peak or hitting the edge; the
/// prominence is the peak height above the higher of the two bases. A peak
/// touching the histogram edge therefore has zero prominence.
pub fn find_peaks(hist: &Histogram1D) -> Vec<Peak> {
    let c = &hist.counts;
    let n = c.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && c[j + 1] == c[i] {
            j += 1;
        }
        let h = c[i];
        let left_lower = i == 0 || c[i - 1] < h;
        let right_lower = j + 1 == n || c[j + 1] < h;
        if h > 0 && left_lower && right_lower {
            let mut left_min = h;
            for &v in c[..i].iter().rev() {
                if v > h {
                    break;
                }
                left_min = left_min.min(v);
            }
            let mut right_min = h;
            for &v in &c[j + 1..] {
                if v > h {
                    break;
                }
                right_min = right_min.min(v);
            }
            peaks.push(Peak {
                position: 0.5 * (hist.center(i) + hist.center(j)),
                count: h,
                prominence: h - left_min.max(right_min),
                bins: (i, j),
            });
        }
        i = j + 1;
    }
    peaks
}

/// Plateau bands. Band `N` for `N ≤ n_resolved` lies between
/// `boundaries[N]` (inclusive) and `boundaries[N-1]`; band 0 is open above,
/// and everything below the last boundary is the aggregate `N > n_resolved`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    /// Labeled peaks in label order (empty for manual boundaries).
    pub peaks: Vec<Peak>,
    /// Strictly decreasing, `n_resolved + 1` entries.
    pub boundaries: Vec<f64>,
    pub n_resolved: usize,
    pub manual: bool,
}

impl BandSet {
    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::InconsistentBands("no boundaries given".into()));
        }
        let bands = Self {
            peaks: Vec::new(),
            n_resolved: boundaries.len() - 1,
            boundaries,
            manual: true,
        };
        bands.validate()?;
        Ok(bands)
    }

    pub fn validate(&self) -> Result<()> {
        if self.boundaries.len() != self.n_resolved + 1 {
            return Err(Error::InconsistentBands(format!(
                "{} boundaries for n_resolved = {}",
                self.boundaries.len(),
                self.n_resolved
            )));
        }
        if self.boundaries.iter().any(|b| !b.is_finite()) {
            return Err(Error::InconsistentBands("non-finite boundary".into()));
        }
        if self.boundaries.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InconsistentBands(
                "boundaries must be strictly decreasing".into(),
            ));
        }
        for (label, p) in self.peaks.iter().enumerate() {
            if self.band_of(p.position) != label {
                return Err(Error::InconsistentBands(format!(
                    "peak {label} at {} lies outside its band",
                    p.position
                )));
            }
        }
        Ok(())
    }

    /// `n_resolved + 2`: the resolved bands plus the aggregate.
    pub fn n_bands(&self) -> usize {
        self.n_resolved + 2
    }

    pub fn band_of(&self, v: f64) -> usize {
        self.boundaries
            .iter()
            .position(|b| v >= *b)
            .unwrap_or(self.n_resolved + 1)
    }

    /// Column names: `phi0 .. phi{n}`, then `phi_ge{n+1}`.
    pub fn labels(&self) -> Vec<String> {
        band_labels(self.n_resolved)
    }
}

pub fn band_labels(n_resolved: usize) -> Vec<String> {
    (0..=n_resolved)
        .map(|n| format!("phi{n}"))
        .chain(std::iter::once(format!("phi_ge{}", n_resolved + 1)))
        .collect()
}

/// Minimum-count point of the bins in `lo..hi`; ties resolve to the midpoint
/// of the first and last minimal bin.
fn valley(hist: &Histogram1D, lo: usize, hi: usize) -> f64 {
    let slice = &hist.counts[lo..hi];
    let min = *slice.iter().min().expect("nonempty valley");
    let first = lo + slice.iter().position(|c| *c == min).unwrap();
    let last = lo + slice.iter().rposition(|c| *c == min).unwrap();
    0.5 * (hist.center(first) + hist.center(last))
}

/// Locate plateau peaks and place band boundaries at the valleys between
/// them.
///
/// Peaks whose prominence reaches `min_prominence · max(count)` are ranked
/// by amplitude, highest first, and the first `n_resolved + 1` are labeled
/// `N = 0, 1, ...`. The last boundary separates peak `n_resolved` from the
/// next qualifying peak below it, or from the bottom of the histogram when
/// there is none.
pub fn find_bands(hist: &Histogram1D, min_prominence: f64, n_resolved: usize) -> Result<BandSet> {
    let max = hist.counts.iter().copied().max().unwrap_or(0);
    let threshold = min_prominence * max as f64;
    let mut peaks: Vec<Peak> = find_peaks(hist)
        .into_iter()
        .filter(|p| p.prominence > 0 && p.prominence as f64 >= threshold)
        .collect();
    peaks.sort_by(|a, b| b.position.total_cmp(&a.position));
    let needed = n_resolved + 1;
    if peaks.len() < needed {
        return Err(Error::TooFewPeaks {
            found: peaks.len(),
            needed,
        });
    }

    let mut boundaries = Vec::with_capacity(needed);
    for label in 0..needed {
        let upper = &peaks[label];
        let b = match peaks.get(label + 1) {
            Some(lower) if lower.bins.1 + 1 < upper.bins.0 => {
                valley(hist, lower.bins.1 + 1, upper.bins.0)
            }
            Some(lower) => hist.edges[lower.bins.1 + 1],
            None if upper.bins.0 > 0 => valley(hist, 0, upper.bins.0),
            None => hist.edges[0],
        };
        boundaries.push(b);
    }
    peaks.truncate(needed);
    let bands = BandSet {
        peaks,
        boundaries,
        n_resolved,
        manual: false,
    };
    bands.validate()?;
    Ok(bands)
}

/// Time-resolved band populations `Φ_N(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationCurves {
    pub t0: f64,
    pub bin_width: f64,
    /// Bin centers.
    pub time_grid: Vec<f64>,
    /// `phi[time][band]`, bands as in [`BandSet`].
    pub phi: Vec<Vec<f64>>,
    pub n_resolved: usize,
}

impl PopulationCurves {
    pub fn n_bands(&self) -> usize {
        self.n_resolved + 2
    }

    pub fn series(&self, band: usize) -> Vec<f64> {
        self.phi.iter().map(|row| row[band]).collect()
    }

    pub fn sums(&self) -> Vec<f64> {
        self.phi.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        band_labels(self.n_resolved)
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_grid.len() != self.phi.len() || self.time_grid.is_empty() {
            return Err(Error::param(
                "curves",
                "time grid and rows disagree or are empty",
            ));
        }
        if self.phi.iter().any(|row| row.len() != self.n_bands()) {
            return Err(Error::param("curves", "row width differs from band count"));
        }
        if self.phi.iter().flatten().any(|v| !v.is_finite()) || !self.t0.is_finite() {
            return Err(Error::NonFinite("population curves"));
        }
        Ok(())
    }
}

/// Fraction of traces in each band, per time bin of width `bin_width`
/// starting at `t0`.
///
/// Each trace votes once per bin, with the sample whose interval contains
/// the bin center. Bins run until the shortest trace ends.
pub fn population_curves(
    traces: &[Trace],
    bands: &BandSet,
    t0: f64,
    bin_width: f64,
) -> Result<PopulationCurves> {
    bands.validate()?;
    if traces.is_empty() {
        return Err(Error::param("traces", "need at least one trace"));
    }
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::param("time_bin", "must be > 0"));
    }
    let start = traces
        .iter()
        .map(|t| t.t0)
        .fold(f64::NEG_INFINITY, f64::max);
    let end = traces
        .iter()
        .map(|t| t.t_end())
        .fold(f64::INFINITY, f64::min);
    if !(t0 >= start && t0 < end) {
        return Err(Error::InvalidTimeSpan { start: t0, end });
    }
    let n_bins = ((end - t0) / bin_width * (1.0 + 1e-12)).floor() as usize;
    if n_bins == 0 {
        return Err(Error::EmptyWindow { start: t0, end });
    }
    let time_grid: Vec<f64> = (0..n_bins)
        .map(|i| t0 + (i as f64 + 0.5) * bin_width)
        .collect();
    let n_bands = bands.n_bands();

    let votes = traces
        .par_iter()
        .map(|tr| {
            let mut v = vec![0u64; n_bins * n_bands];
            for (i, tc) in time_grid.iter().enumerate() {
                if let Some(idx) = tr.index_at(*tc) {
                    v[i * n_bands + bands.band_of(tr.samples[idx])] += 1;
                }
            }
            v
        })
        .reduce(
            || vec![0u64; n_bins * n_bands],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let phi = votes
        .chunks_exact(n_bands)
        .map(|row| {
            let total = row.iter().sum::<u64>().max(1) as f64;
            row.iter().map(|c| *c as f64 / total).collect()
        })
        .collect();
    Ok(PopulationCurves {
        t0,
        bin_width,
        time_grid,
        phi,
        n_resolved: bands.n_resolved,
    })
}
