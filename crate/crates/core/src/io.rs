//! Plain-text file formats. Every number is written with 9 significant
//! digits, so reading a file and writing it back reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::analysis::{band_labels, BandSet, Histogram1D, Histogram2D, PopulationCurves};
use crate::detection::{Trace, TraceMeta, Units};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::sim::Event;

/// `%.9g`: 9 significant digits, trailing zeros dropped, exponent form
/// outside `1e-4 ≤ |x| < 1e9`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: `{s}`")))
}

fn join_nums(xs: &[f64], sep: &str) -> String {
    xs.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(sep)
}

pub fn trace_to_string(trace: &Trace) -> String {
    let m = &trace.meta;
    let mut s = String::with_capacity(32 * trace.len() + 256);
    let _ = writeln!(s, "# dt={}", fmt_num(trace.dt));
    let _ = writeln!(s, "# t0={}", fmt_num(trace.t0));
    if let Some(seed) = m.seed {
        let _ = writeln!(s, "# seed={seed}");
    }
    let _ = writeln!(s, "# units={}", m.units.as_str());
    let _ = writeln!(s, "# amplitude_scale={}", fmt_num(m.amplitude_scale));
    let _ = writeln!(s, "# filters={}", join_nums(&m.filters, ";"));
    for (k, v) in &m.extra {
        let _ = writeln!(s, "# {k}={v}");
    }
    s.push_str("time,amplitude\n");
    for (i, v) in trace.samples.iter().enumerate() {
        let _ = writeln!(s, "{},{}", fmt_num(trace.time_at(i)), fmt_num(*v));
    }
    s
}

/// Parse a trace file. `dt` and `t0` fall back to the first two time stamps
/// when the header omits them; time stamps must sit on the `t0 + i·dt` grid.
pub fn parse_trace(text: &str, path: &Path) -> Result<Trace> {
    let mut header: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let mut lines_of_rows = Vec::new();
    let mut seen_columns = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| parse_err(path, line_no, "header line is not `# key=value`"))?;
            header.insert(k.trim().to_string(), (line_no, v.trim().to_string()));
            continue;
        }
        if !seen_columns && line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            if line != "time,amplitude" {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("unexpected column header `{line}`"),
                ));
            }
            seen_columns = true;
            continue;
        }
        let (t, v) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, line_no, "expected `time,amplitude`"))?;
        if v.contains(',') {
            return Err(parse_err(path, line_no, "expected two columns"));
        }
        times.push(parse_f64(path, line_no, t)?);
        let v = parse_f64(path, line_no, v)?;
        if !v.is_finite() {
            return Err(parse_err(path, line_no, "non-finite sample"));
        }
        samples.push(v);
        lines_of_rows.push(line_no);
    }
    if samples.is_empty() {
        return Err(parse_err(path, text.lines().count().max(1), "no samples"));
    }

    let num = |key: &str| -> Result<Option<f64>> {
        header
            .get(key)
            .map(|(line, v)| parse_f64(path, *line, v))
            .transpose()
    };
    let t0 = num("t0")?.unwrap_or(times[0]);
    let dt = match num("dt")? {
        Some(dt) => dt,
        None if times.len() >= 2 => times[1] - times[0],
        None => {
            return Err(parse_err(
                path,
                lines_of_rows[0],
                "cannot infer dt from one sample",
            ))
        }
    };
    if !(dt.is_finite() && dt > 0.0) {
        return Err(parse_err(
            path,
            header.get("dt").map_or(1, |h| h.0),
            "dt must be > 0",
        ));
    }
    for (i, (t, line)) in times.iter().zip(&lines_of_rows).enumerate() {
        let expected = t0 + i as f64 * dt;
        if (t - expected).abs() > 1e-3 * dt {
            return Err(parse_err(
                path,
                *line,
                format!("time {t} is off the sample grid (expected {expected})"),
            ));
        }
    }

    let mut meta = TraceMeta::default();
    for (key, (line, value)) in header {
        match key.as_str() {
            "dt" | "t0" => {}
            "seed" => {
                meta.seed = Some(
                    value
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("bad seed `{value}`")))?,
                )
            }
            "units" => {
                meta.units = Units::parse(&value)
                    .ok_or_else(|| parse_err(path, line, format!("unknown units `{value}`")))?
            }
            "amplitude_scale" => meta.amplitude_scale = parse_f64(path, line, &value)?,
            "filters" => {
                meta.filters = value
                    .split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_f64(path, line, s))
                    .collect::<Result<_>>()?
            }
            _ => {
                meta.extra.insert(key, value);
            }
        }
    }
    Ok(Trace {
        dt,
        t0,
        samples,
        meta,
    })
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    write_text(path, &trace_to_string(trace))
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    parse_trace(&read_text(path)?, path)
}

pub fn histogram_to_string(hist: &Histogram1D) -> String {
    let mut s = String::from("bin_low,bin_high,count\n");
    for (i, c) in hist.counts.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{c}",
            fmt_num(hist.edges[i]),
            fmt_num(hist.edges[i + 1])
        );
    }
    s
}

/// Long format, one row per (amplitude bin, time bin).
pub fn histogram_2d_to_string(hist: &Histogram2D) -> String {
    let mut s = String::from("amp_low,amp_high,t_low,t_high,count\n");
    let (a, t) = (&hist.amplitude_edges, &hist.time_edges);
    for (i, row) in hist.counts.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{c}",
                fmt_num(a[i]),
                fmt_num(a[i + 1]),
                fmt_num(t[j]),
                fmt_num(t[j + 1])
            );
        }
    }
    s
}

pub fn bands_to_string(bands: &BandSet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "n_resolved={}", bands.n_resolved);
    let _ = writeln!(s, "manual={}", bands.manual);
    let _ = writeln!(s, "boundaries={}", join_nums(&bands.boundaries, ","));
    let positions: Vec<f64> = bands.peaks.iter().map(|p| p.position).collect();
    let _ = writeln!(s, "peaks={}", join_nums(&positions, ","));
    s.push_str("band,label,lower,upper\n");
    let labels = bands.labels();
    for (n, label) in labels.iter().enumerate() {
        let upper = if n == 0 {
            "inf".to_string()
        } else {
            fmt_num(bands.boundaries[n - 1])
        };
        let lower = bands
            .boundaries
            .get(n)
            .map_or("-inf".to_string(), |b| fmt_num(*b));
        let _ = writeln!(s, "{n},{label},{lower},{upper}");
    }
    s
}

pub fn curves_to_string(curves: &PopulationCurves) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# t0={}", fmt_num(curves.t0));
    let _ = writeln!(s, "# bin_width={}", fmt_num(curves.bin_width));
    let _ = writeln!(s, "t,{}", curves.labels().join(","));
    for (t, row) in curves.time_grid.iter().zip(&curves.phi) {
        let _ = writeln!(s, "{},{}", fmt_num(*t), join_nums(row, ","));
    }
    s
}

/// Population curves; `n_resolved` follows from the column header.
pub fn parse_curves(text: &str, path: &Path) -> Result<PopulationCurves> {
    let mut t0 = None;
    let mut bin_width = None;
    let mut n_resolved = None;
    let mut time_grid = Vec::new();
    let mut phi = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            match rest.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("t0", v)) => t0 = Some(parse_f64(path, line_no, v)?),
                Some(("bin_width", v)) => bin_width = Some(parse_f64(path, line_no, v)?),
                _ => {}
            }
            continue;
        }
        if n_resolved.is_none() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let n = cols.len().checked_sub(3).filter(|_| cols[0] == "t");
            match n {
                Some(n) if cols[1..] == band_labels(n)[..] => n_resolved = Some(n),
                _ => {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("expected `t,phi0,...,phi_geN` header, got `{line}`"),
                    ))
                }
            }
            continue;
        }
        let n_bands = n_resolved.unwrap() + 2;
        let vals = line
            .split(',')
            .map(|s| parse_f64(path, line_no, s))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != n_bands + 1 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} columns, got {}", n_bands + 1, vals.len()),
            ));
        }
        time_grid.push(vals[0]);
        phi.push(vals[1..].to_vec());
    }
    let n_resolved = n_resolved.ok_or_else(|| parse_err(path, 1, "missing column header"))?;
    if time_grid.is_empty() {
        return Err(parse_err(path, text.lines().count().max(1), "no rows"));
    }
    let bin_width = match bin_width {
        Some(w) => w,
        None if time_grid.len() >= 2 => time_grid[1] - time_grid[0],
        None => return Err(parse_err(path, 1, "cannot infer bin width from one row")),
    };
    let curves = PopulationCurves {
        t0: t0.unwrap_or(time_grid[0] - 0.5 * bin_width),
        bin_width,
        time_grid,
        phi,
        n_resolved,
    };
    curves.validate()?;
    Ok(curves)
}

pub fn read_curves(path: &Path) -> Result<PopulationCurves> {
    parse_curves(&read_text(path)?, path)
}

pub fn fit_result_to_string(fit: &FitResult) -> String {
    let mu = fit.mu_hat.map_or("none".to_string(), fmt_num);
    format!(
        "Gamma_hat={}\nmu_hat={mu}\nresidual={}\niterations={}\nwarnings={}\n",
        fmt_num(fit.gamma_hat),
        fmt_num(fit.residual),
        fit.iterations,
        fit.warnings
    )
}

/// `time,N,k` rows for the given events.
pub fn events_to_string(events: &[Event]) -> String {
    let mut s = String::from("time,N,k\n");
    for e in events {
        let _ = writeln!(s, "{},{},{}", fmt_num(e.time), e.state.n, e.state.k);
    }
    s
}

pub fn p0_table_to_string(table: &[(usize, f64)]) -> String {
    let mut s = String::from("N,p0\n");
    for (n, p) in table {
        let _ = writeln!(s, "{n},{}", fmt_num(*p));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::State;

    #[test]
    fn number_format_matches_printf_g9() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (2.0 / 3.0, "0.666666667"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (1e-4, "0.0001"),
            (1e-5, "1e-05"),
            (3.6e-4, "0.00036"),
            (0.0199999999999, "0.02"),
            (9.9999999999, "10"),
            (6.02214076e23, "6.02214076e+23"),
            (-1.5e-7, "-1.5e-07"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_num(x), want, "{x}");
        }
    }

    #[test]
    fn number_format_is_stable_under_reparse() {
        for x in [
            std::f64::consts::PI,
            1e-300,
            0.034,
            2.0f64.sqrt() * 1e7,
            0.987654321987,
        ] {
            let s = fmt_num(x);
            assert_eq!(fmt_num(s.parse().unwrap()), s);
        }
    }

    fn sample_trace() -> Trace {
        let mut tr = Trace::new(1e-4, 0.034, vec![1.0, 0.5, 2.0 / 3.0, -0.01234]).unwrap();
        tr.meta.seed = Some(42);
        tr.meta.amplitude_scale = 0.02f64.sqrt();
        tr.meta.filters = vec![1000.0, 100.0];
        tr.meta.extra.insert("gamma_loss".into(), "8.5".into());
        tr
    }

    #[test]
    fn trace_round_trip_is_byte_stable() {
        let p = Path::new("mem.csv");
        let text = trace_to_string(&sample_trace());
        let back = parse_trace(&text, p).unwrap();
        assert_eq!(trace_to_string(&back), text);
        assert_eq!(back.meta.seed, Some(42));
        assert_eq!(back.meta.filters, vec![1000.0, 100.0]);
        assert_eq!(back.meta.extra["gamma_loss"], "8.5");
        assert_close!(back.samples[2], 2.0 / 3.0, 1e-9);
    }

    #[test]
    fn trace_without_header_infers_grid() {
        let tr = parse_trace("time,amplitude\n0.5,1\n0.6,0.9\n0.7,0.8\n", Path::new("x")).unwrap();
        assert_close!(tr.dt, 0.1, 1e-15);
        assert_eq!(tr.t0, 0.5);
        assert_eq!(tr.samples, vec![1.0, 0.9, 0.8]);
    }

    #[test]
    fn trace_errors_name_the_line() {
        let p = Path::new("bad.csv");
        let err = parse_trace("# dt=0.1\n# t0=0\ntime,amplitude\n0,1\n0.1,abc\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
        assert!(err.to_string().starts_with("bad.csv:5:"));
        let err = parse_trace("# dt=0.1\n# t0=0\n0,1\n0.3,1\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        assert!(parse_trace("# dt=0.1\n", p).is_err());
        assert!(parse_trace("# units=volts\n0,1\n1,1\n", p).is_err());
    }

    #[test]
    fn curves_round_trip() {
        let curves = PopulationCurves {
            t0: 0.034,
            bin_width: 0.01,
            time_grid: vec![0.039, 0.049],
            phi: vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.25, 0.25, 0.25, 0.25]],
            n_resolved: 2,
        };
        let text = curves_to_string(&curves);
        assert!(text.contains("t,phi0,phi1,phi2,phi_ge3\n"));
        let back = parse_curves(&text, Path::new("c.csv")).unwrap();
        assert_eq!(back, curves);
        assert_eq!(curves_to_string(&back), text);
        assert!(parse_curves("t,phi0,phi_ge1\n0.1,0.5\n", Path::new("c.csv")).is_err());
        assert!(parse_curves("t,a,b\n0.1,0.5,0.5\n", Path::new("c.csv")).is_err());
    }

    #[test]
    fn small_tables() {
        let h = Histogram1D {
            edges: vec![0.0, 0.5, 1.0],
            counts: vec![3, 4],
        };
        assert_eq!(
            histogram_to_string(&h),
            "bin_low,bin_high,count\n0,0.5,3\n0.5,1,4\n"
        );
        let ev = [Event {
            time: 0.034,
            state: State::new(3, 1),
        }];
        assert_eq!(events_to_string(&ev), "time,N,k\n0.034,3,1\n");
        assert_eq!(
            p0_table_to_string(&[(0, 1.0), (1, 2.0 / 3.0)]),
            "N,p0\n0,1\n1,0.666666667\n"
        );
        let fit = FitResult {
            gamma_hat: 8.5,
            mu_hat: None,
            residual: 0.0,
            iterations: 3,
            warnings: 0,
        };
        assert_eq!(
            fit_result_to_string(&fit),
            "Gamma_hat=8.5\nmu_hat=none\nresidual=0\niterations=3\nwarnings=0\n"
        );
    }

    #[test]
    fn bands_table_lists_every_band() {
        let bands = BandSet::from_boundaries(vec![0.8, 0.5, 0.3]).unwrap();
        let s = bands_to_string(&bands);
        assert!(s.contains("boundaries=0.8,0.5,0.3\n"));
        assert!(s.contains("0,phi0,0.8,inf\n"));
        assert!(s.contains("3,phi_ge3,-inf,0.3\n"));
    }
}
