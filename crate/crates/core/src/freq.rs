//! Frequency grids, frequency-response containers, and their CSV form.
//!
//! Grids are stored in Hz so that serialization round-trips bit-exactly; all
//! physics code converts to rad/s on the fly. CSV files carry full-precision
//! scientific notation for the same reason.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::io::{BufRead, Write};

const TAU: f64 = std::f64::consts::TAU;

/// Logarithmic grid including both endpoints, strictly increasing, in Hz.
pub fn log_grid_hz(lo_hz: f64, hi_hz: f64, points_per_decade: usize) -> Result<Vec<f64>> {
    if !(lo_hz > 0.0 && hi_hz > lo_hz) {
        return Err(Error::Config(format!(
            "need 0 < lo < hi for a log grid, got {lo_hz} and {hi_hz}"
        )));
    }
    if points_per_decade == 0 {
        return Err(Error::Config("points_per_decade must be positive".into()));
    }
    let decades = (hi_hz / lo_hz).log10();
    let n = (decades * points_per_decade as f64).ceil() as usize + 1;
    let mut grid = Vec::with_capacity(n);
    for i in 0..n {
        let f = lo_hz * 10f64.powf(decades * i as f64 / (n - 1) as f64);
        grid.push(f);
    }
    *grid.last_mut().expect("nonempty") = hi_hz;
    grid.dedup();
    Ok(grid)
}

/// A sampled complex response on a strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub freqs_hz: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl FrequencyResponse {
    pub fn new(freqs_hz: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if freqs_hz.len() != values.len() {
            return Err(Error::Format(format!(
                "{} frequencies but {} values",
                freqs_hz.len(),
                values.len()
            )));
        }
        if freqs_hz.is_empty() {
            return Err(Error::Format("empty frequency response".into()));
        }
        for w in freqs_hz.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Format(format!(
                    "grid not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if freqs_hz[0] <= 0.0 {
            return Err(Error::Format("grid must start above 0 Hz".into()));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Format("nonfinite response value".into()));
        }
        Ok(FrequencyResponse { freqs_hz, values })
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    pub fn omega(&self, i: usize) -> f64 {
        TAU * self.freqs_hz[i]
    }

    pub fn magnitude_db(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| 20.0 * v.norm().max(1e-300).log10())
            .collect()
    }

    /// Unwrapped phase in degrees: no sample-to-sample jump exceeds 180.
    pub fn phase_deg_unwrapped(&self) -> Vec<f64> {
        let rad = unwrap_phases(self.values.iter().map(|v| v.arg()));
        rad.into_iter().map(f64::to_degrees).collect()
    }

    /// Columns: frequency_hz, re, im. Full precision for exact round-trips.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "frequency_hz,re,im")?;
        for (f, v) in self.freqs_hz.iter().zip(&self.values) {
            writeln!(out, "{:.17e},{:.17e},{:.17e}", f, v.re, v.im)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut freqs = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "frequency_hz,re,im" {
                    return Err(Error::Format(format!(
                        "line 1: expected header 'frequency_hz,re,im', got '{line}'"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "line {}: expected 3 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!("line {}: bad {what} '{s}'", lineno + 1))
                })
            };
            freqs.push(parse(fields[0], "frequency")?);
            values.push(Complex64::new(
                parse(fields[1], "real part")?,
                parse(fields[2], "imaginary part")?,
            ));
        }
        FrequencyResponse::new(freqs, values)
    }
}

/// Remove 2-pi jumps from a phase sequence (radians).
pub fn unwrap_phases(phases: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut offset = 0.0;
    let mut prev = None;
    for p in phases {
        if let Some(prev) = prev {
            let mut next = p + offset;
            while next - prev > std::f64::consts::PI {
                offset -= TAU;
                next -= TAU;
            }
            while next - prev < -std::f64::consts::PI {
                offset += TAU;
                next += TAU;
            }
        }
        out.push(p + offset);
        prev = Some(p + offset);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_hits_endpoints_and_increases() {
        let g = log_grid_hz(0.1, 2000.0, 400).unwrap();
        assert_eq!(g[0], 0.1);
        assert_eq!(*g.last().unwrap(), 2000.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        // about 400 points per decade over 4.3 decades
        assert!(g.len() > 1700 && g.len() < 1750);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let freqs = log_grid_hz(1.0, 100.0, 7).unwrap();
        let values: Vec<Complex64> = freqs
            .iter()
            .map(|f| Complex64::new((f * 0.1).sin() / 3.0, -1.0 / f))
            .collect();
        let fr = FrequencyResponse::new(freqs, values).unwrap();
        let mut buf = Vec::new();
        fr.write_csv(&mut buf).unwrap();
        let back = FrequencyResponse::read_csv(buf.as_slice()).unwrap();
        assert_eq!(fr, back);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let text = "frequency_hz,re,im\n1.0,0.5,0.5\n2.0,oops,0.1\n";
        match FrequencyResponse::read_csv(text.as_bytes()) {
            Err(Error::Format(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn unwrap_removes_jumps() {
        // a phase ramp wrapped into (-pi, pi]
        let true_phase: Vec<f64> = (0..200).map(|i| -0.1 * i as f64).collect();
        let wrapped = true_phase
            .iter()
            .map(|p| Complex64::from_polar(1.0, *p).arg());
        let un = unwrap_phases(wrapped);
        for (a, b) in un.iter().zip(&true_phase) {
            assert!((a - b).abs() < 1e-9);
        }
        for w in un.windows(2) {
            assert!((w[1] - w[0]).abs() < std::f64::consts::PI);
        }
    }

    #[test]
    fn db_definition() {
        let fr = FrequencyResponse::new(
            vec![1.0, 2.0],
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 10.0)],
        )
        .unwrap();
        let db = fr.magnitude_db();
        assert!(db[0].abs() < 1e-12);
        assert!((db[1] - 20.0).abs() < 1e-12);
    }
}
