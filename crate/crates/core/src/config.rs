//! Run configuration: flat `section.key=value` text layered over built-in
//! defaults. Unknown keys are errors so typos never pass silently.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::detection::DetectionConfig;
use crate::error::{Error, Result};
use crate::fit::FitOptions;
use crate::physics::{CavityParams, MAX_TABULATED_ATOMS};
use crate::sim::{InitialDistribution, RateModel, MAX_TRAPPED_ATOMS};

/// Shipped defaults, reproducing the experiment's parameters.
pub const PAPER_DEFAULTS: &str = include_str!("../config/paper_defaults.conf");

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    /// Start of every simulated trace (s).
    pub t_start: f64,
    /// Trace length (s).
    pub duration: f64,
    pub n_traces: usize,
    pub seed: u64,
}

impl SimSettings {
    pub fn t_span(&self) -> (f64, f64) {
        (self.t_start, self.t_start + self.duration)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub bins: usize,
    pub amp_min: f64,
    pub amp_max: f64,
    /// Width of the population time bins (s).
    pub time_bin: f64,
    /// Start of population extraction (s).
    pub t0: f64,
    pub n_resolved: usize,
    /// Peak prominence threshold as a fraction of the tallest bin.
    pub min_prominence: f64,
    /// Manual band boundaries, strictly decreasing; replaces peak finding.
    pub boundaries: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    /// Truncation of the reconstructed initial distribution.
    pub n_max: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl FitSettings {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            bracket: (self.gamma_min, self.gamma_max),
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub y_values: Vec<f64>,
    pub n_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cavity: CavityParams,
    pub rates: RateModel,
    pub init: InitialDistribution,
    pub detection: DetectionConfig,
    pub sim: SimSettings,
    pub analysis: AnalysisSettings,
    pub fit: FitSettings,
    pub model: ModelSettings,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cavity: CavityParams::default(),
            rates: RateModel::default(),
            init: InitialDistribution::Poisson { mu: 5.2, n_max: 20 },
            detection: DetectionConfig::default(),
            sim: SimSettings {
                t_start: 0.034,
                duration: 2.0,
                n_traces: 500,
                seed: 1,
            },
            analysis: AnalysisSettings {
                bins: 100,
                amp_min: 0.0,
                amp_max: 1.2,
                time_bin: 0.01,
                t0: 0.034,
                n_resolved: 2,
                min_prominence: 0.01,
                boundaries: None,
            },
            fit: FitSettings {
                n_max: 15,
                gamma_min: 0.1,
                gamma_max: 100.0,
            },
            model: ModelSettings {
                y_values: vec![0.5, 0.1],
                n_max: 10,
            },
            output_dir: PathBuf::from("out"),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("bad value `{v}` for `{key}`"))
}

fn list(key: &str, v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Fields of [`InitialDistribution`] as they appear in the file, collected
/// before the variant is known.
#[derive(Default)]
struct InitKeys {
    kind: Option<String>,
    n: Option<usize>,
    mu: Option<f64>,
    n_max: Option<usize>,
    probs: Option<Vec<f64>>,
}

impl InitKeys {
    fn build(self) -> std::result::Result<InitialDistribution, String> {
        let kind = self.kind.unwrap_or_else(|| "poisson".into());
        match kind.as_str() {
            "fixed" => Ok(InitialDistribution::Fixed(
                self.n.ok_or("init.kind=fixed needs init.n")?,
            )),
            "poisson" => Ok(InitialDistribution::Poisson {
                mu: self.mu.ok_or("init.kind=poisson needs init.mu")?,
                n_max: self.n_max.unwrap_or(MAX_TRAPPED_ATOMS),
            }),
            "explicit" => Ok(InitialDistribution::Explicit(
                self.probs.ok_or("init.kind=explicit needs init.probs")?,
            )),
            other => Err(format!(
                "unknown init.kind `{other}` (fixed, poisson, explicit)"
            )),
        }
    }
}

fn kind_of(init: &InitialDistribution) -> &'static str {
    match init {
        InitialDistribution::Fixed(_) => "fixed",
        InitialDistribution::Poisson { .. } => "poisson",
        InitialDistribution::Explicit(_) => "explicit",
    }
}

impl RunConfig {
    pub fn paper_defaults() -> Self {
        Self::parse(PAPER_DEFAULTS, Path::new("paper_defaults.conf"))
            .expect("shipped defaults parse")
    }

    /// Apply `text` over the built-in defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        // any init.* key replaces the whole default distribution
        let mut init = InitKeys::default();
        let mut init_touched = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |reason: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| fail("expected `key=value`".into()))?;
            if let Some(field) = key.strip_prefix("init.") {
                init_touched = true;
                let r: std::result::Result<(), String> = (|| {
                    match field {
                        "kind" => init.kind = Some(value.to_string()),
                        "n" => init.n = Some(num(key, value)?),
                        "mu" => init.mu = Some(num(key, value)?),
                        "n_max" => init.n_max = Some(num(key, value)?),
                        "probs" => init.probs = Some(list(key, value)?),
                        _ => return Err(format!("unknown key `{key}`")),
                    }
                    Ok(())
                })();
                r.map_err(fail)?;
            } else {
                cfg.set(key, value).map_err(fail)?;
            }
        }
        if init_touched {
            cfg.init = init.build().map_err(|reason| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                reason,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "cavity.g0" => self.cavity.g0 = num(key, v)?,
            "cavity.kappa" => self.cavity.kappa = num(key, v)?,
            "cavity.gamma" => self.cavity.gamma = num(key, v)?,
            "cavity.delta_c" => self.cavity.delta_c = num(key, v)?,
            "cavity.delta_4" => self.cavity.delta_4 = num(key, v)?,
            "cavity.nbar_empty" => self.cavity.nbar_empty = num(key, v)?,
            "cavity.w0" => self.cavity.w0 = num(key, v)?,
            "cavity.lambda0" => self.cavity.lambda0 = num(key, v)?,
            "rates.gamma_10" => self.rates.gamma_10 = num(key, v)?,
            "rates.y" => self.rates.y = num(key, v)?,
            "rates.gamma_loss" => self.rates.gamma_loss = num(key, v)?,
            "rates.i1_over_i0" => self.rates.i1_over_i0 = num(key, v)?,
            "detection.sample_rate" => self.detection.sample_rate = num(key, v)?,
            "detection.detector_bandwidth" => self.detection.detector_bandwidth = num(key, v)?,
            "detection.digital_bandwidth" => self.detection.digital_bandwidth = num(key, v)?,
            "detection.noise_rms" => self.detection.noise_rms = num(key, v)?,
            "detection.amplitude_scale" => self.detection.amplitude_scale = num(key, v)?,
            "sim.t_start" => self.sim.t_start = num(key, v)?,
            "sim.duration" => self.sim.duration = num(key, v)?,
            "sim.n_traces" => self.sim.n_traces = num(key, v)?,
            "sim.seed" => self.sim.seed = num(key, v)?,
            "analysis.bins" => self.analysis.bins = num(key, v)?,
            "analysis.amp_min" => self.analysis.amp_min = num(key, v)?,
            "analysis.amp_max" => self.analysis.amp_max = num(key, v)?,
            "analysis.time_bin" => self.analysis.time_bin = num(key, v)?,
            "analysis.t0" => self.analysis.t0 = num(key, v)?,
            "analysis.n_resolved" => self.analysis.n_resolved = num(key, v)?,
            "analysis.min_prominence" => self.analysis.min_prominence = num(key, v)?,
            "analysis.boundaries" => {
                self.analysis.boundaries = match v {
                    "" | "auto" => None,
                    _ => Some(list(key, v)?),
                }
            }
            "fit.n_max" => self.fit.n_max = num(key, v)?,
            "fit.gamma_min" => self.fit.gamma_min = num(key, v)?,
            "fit.gamma_max" => self.fit.gamma_max = num(key, v)?,
            "model.y_values" => self.model.y_values = list(key, v)?,
            "model.n_max" => self.model.n_max = num(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key, in a form [`RunConfig::parse`] maps back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        let c = &self.cavity;
        kv("cavity.g0", c.g0.to_string());
        kv("cavity.kappa", c.kappa.to_string());
        kv("cavity.gamma", c.gamma.to_string());
        kv("cavity.delta_c", c.delta_c.to_string());
        kv("cavity.delta_4", c.delta_4.to_string());
        kv("cavity.nbar_empty", c.nbar_empty.to_string());
        kv("cavity.w0", c.w0.to_string());
        kv("cavity.lambda0", c.lambda0.to_string());
        let r = &self.rates;
        kv("rates.gamma_10", r.gamma_10.to_string());
        kv("rates.y", r.y.to_string());
        kv("rates.gamma_loss", r.gamma_loss.to_string());
        kv("rates.i1_over_i0", r.i1_over_i0.to_string());
        kv("init.kind", kind_of(&self.init).to_string());
        match &self.init {
            InitialDistribution::Fixed(n) => kv("init.n", n.to_string()),
            InitialDistribution::Poisson { mu, n_max } => {
                kv("init.mu", mu.to_string());
                kv("init.n_max", n_max.to_string());
            }
            InitialDistribution::Explicit(p) => kv("init.probs", join(p)),
        }
        let d = &self.detection;
        kv("detection.sample_rate", d.sample_rate.to_string());
        kv(
            "detection.detector_bandwidth",
            d.detector_bandwidth.to_string(),
        );
        kv(
            "detection.digital_bandwidth",
            d.digital_bandwidth.to_string(),
        );
        kv("detection.noise_rms", d.noise_rms.to_string());
        kv("detection.amplitude_scale", d.amplitude_scale.to_string());
        kv("sim.t_start", self.sim.t_start.to_string());
        kv("sim.duration", self.sim.duration.to_string());
        kv("sim.n_traces", self.sim.n_traces.to_string());
        kv("sim.seed", self.sim.seed.to_string());
        let a = &self.analysis;
        kv("analysis.bins", a.bins.to_string());
        kv("analysis.amp_min", a.amp_min.to_string());
        kv("analysis.amp_max", a.amp_max.to_string());
        kv("analysis.time_bin", a.time_bin.to_string());
        kv("analysis.t0", a.t0.to_string());
        kv("analysis.n_resolved", a.n_resolved.to_string());
        kv("analysis.min_prominence", a.min_prominence.to_string());
        kv(
            "analysis.boundaries",
            a.boundaries.as_deref().map_or("auto".into(), join),
        );
        kv("fit.n_max", self.fit.n_max.to_string());
        kv("fit.gamma_min", self.fit.gamma_min.to_string());
        kv("fit.gamma_max", self.fit.gamma_max.to_string());
        kv("model.y_values", join(&self.model.y_values));
        kv("model.n_max", self.model.n_max.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        s
    }

    /// Manual boundaries fix the resolved band count.
    pub fn n_resolved(&self) -> usize {
        self.analysis
            .boundaries
            .as_ref()
            .map_or(self.analysis.n_resolved, |b| b.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        self.cavity.validate()?;
        self.rates.validate()?;
        self.detection.validate()?;
        let p = self.init.probabilities()?;
        if p.len() > MAX_TRAPPED_ATOMS + 1 {
            return Err(Error::param(
                "init",
                format!("support exceeds {MAX_TRAPPED_ATOMS} atoms"),
            ));
        }
        let s = &self.sim;
        if !(s.t_start.is_finite() && s.duration.is_finite() && s.duration > 0.0) {
            return Err(Error::param("sim.duration", "must be finite and > 0"));
        }
        if s.n_traces == 0 {
            return Err(Error::param("sim.n_traces", "must be >= 1"));
        }
        let a = &self.analysis;
        if a.bins < 10 {
            return Err(Error::param("analysis.bins", "must be >= 10"));
        }
        if !(a.amp_min.is_finite() && a.amp_max.is_finite() && a.amp_max > a.amp_min) {
            return Err(Error::param(
                "analysis.amp_max",
                "must exceed analysis.amp_min",
            ));
        }
        if !(a.time_bin.is_finite() && a.time_bin > 0.0) {
            return Err(Error::param("analysis.time_bin", "must be > 0"));
        }
        if !a.t0.is_finite() {
            return Err(Error::param("analysis.t0", "must be finite"));
        }
        if !(0.0..1.0).contains(&a.min_prominence) {
            return Err(Error::param(
                "analysis.min_prominence",
                "must lie in [0, 1)",
            ));
        }
        if let Some(b) = &a.boundaries {
            crate::analysis::BandSet::from_boundaries(b.clone())?;
        }
        if self.fit.n_max <= self.n_resolved() {
            return Err(Error::param(
                "fit.n_max",
                "must exceed the resolved band count",
            ));
        }
        if !(self.fit.gamma_min > 0.0
            && self.fit.gamma_max > self.fit.gamma_min
            && self.fit.gamma_max.is_finite())
        {
            return Err(Error::param(
                "fit.gamma_max",
                "need 0 < gamma_min < gamma_max",
            ));
        }
        if self.model.y_values.is_empty()
            || self
                .model
                .y_values
                .iter()
                .any(|y| !(y.is_finite() && *y > 0.0))
        {
            return Err(Error::param(
                "model.y_values",
                "need one or more finite values > 0",
            ));
        }
        if self.model.n_max > MAX_TABULATED_ATOMS {
            return Err(Error::TabulationLimit {
                n: self.model.n_max,
                n_max: MAX_TABULATED_ATOMS,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_built_in_defaults() {
        assert_eq!(RunConfig::paper_defaults(), RunConfig::default());
    }

    #[test]
    fn defaults_carry_experiment_values() {
        let c = RunConfig::paper_defaults();
        assert_eq!(
            (c.cavity.g0, c.cavity.kappa, c.cavity.gamma),
            (24e6, 4.2e6, 2.6e6)
        );
        assert_eq!(c.cavity.nbar_empty, 0.02);
        assert_eq!((c.rates.y, c.rates.gamma_loss), (0.5, 8.5));
        assert_eq!(c.init, InitialDistribution::Poisson { mu: 5.2, n_max: 20 });
        assert_eq!(c.analysis.t0, 0.034);
        assert_eq!(
            (
                c.detection.detector_bandwidth,
                c.detection.digital_bandwidth
            ),
            (1000.0, 100.0)
        );
        assert_eq!((c.sim.n_traces, c.sim.duration), (500, 2.0));
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = RunConfig {
            init: InitialDistribution::Explicit(vec![0.1, 0.2, 0.7]),
            ..RunConfig::default()
        };
        c.analysis.boundaries = Some(vec![0.85, 0.55, 0.25]);
        c.detection.noise_rms = 1.0 / 3.0;
        c.model.y_values = vec![0.1, 0.5, 2.0];
        for cfg in [RunConfig::default(), c] {
            let text = cfg.to_text();
            let back = RunConfig::parse(&text, Path::new("rt.conf")).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn overrides_apply_over_defaults() {
        let text = "# comment\nrates.gamma_loss = 0\ninit.kind=fixed\ninit.n=3\n\nsim.seed=99\n";
        let c = RunConfig::parse(text, Path::new("o.conf")).unwrap();
        assert_eq!(c.rates.gamma_loss, 0.0);
        assert_eq!(c.init, InitialDistribution::Fixed(3));
        assert_eq!(c.sim.seed, 99);
        assert_eq!(c.cavity, CavityParams::default());
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        let p = Path::new("bad.conf");
        let err = RunConfig::parse("rates.gama_loss=1\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(err.to_string().contains("gama_loss"));
        assert!(RunConfig::parse("\n\nrates.y\n", p).is_err());
        assert!(RunConfig::parse("rates.y=abc\n", p).is_err());
        assert!(RunConfig::parse("init.kind=binomial\ninit.n=2\n", p).is_err());
        assert!(RunConfig::parse("init.kind=fixed\n", p).is_err());
        assert!(RunConfig::parse("rates.y=-1\n", p).is_err());
        assert!(RunConfig::parse("analysis.boundaries=0.2,0.5\n", p).is_err());
        assert!(RunConfig::parse("fit.gamma_min=5\nfit.gamma_max=1\n", p).is_err());
    }

    #[test]
    fn manual_boundaries_set_band_count() {
        let c = RunConfig::parse("analysis.boundaries=0.85,0.55\n", Path::new("b.conf")).unwrap();
        assert_eq!(c.n_resolved(), 1);
    }
}
