//! CSV rows emitted by the experiments.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::config::Detector;

pub const RESULT_HEADER: &str =
    "snr_db,detector,ber,avg_flops,max_flops,avg_time,max_time,avg_points_in_sphere,fallback_rate,e_c";

pub const COMPLEXITY_HEADER: &str = "snr_db,detector,avg_flops,max_flops,avg_time,max_time,avg_points_in_sphere,\
analytic_flops,e_c_empirical,e_c_analytic,flops_ratio_vs_sdirs,time_ratio_vs_sdirs";

/// Wall-clock columns; every other column is reproducible from the seed.
pub const NONDETERMINISTIC_COLUMNS: [&str; 2] = ["avg_time", "max_time"];

pub const COMPLEXITY_NONDETERMINISTIC_COLUMNS: [&str; 3] = ["avg_time", "max_time", "time_ratio_vs_sdirs"];

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub snr_db: f64,
    pub detector: Detector,
    pub ber: f64,
    pub avg_flops: Option<f64>,
    pub max_flops: Option<u64>,
    pub avg_time: f64,
    pub max_time: f64,
    pub avg_points_in_sphere: Option<f64>,
    pub fallback_rate: Option<f64>,
    pub e_c: Option<f64>,
}

impl ResultRow {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ber) {
            return Err(Error::Invalid(format!("ber {} outside [0, 1]", self.ber)));
        }
        if self.fallback_rate.is_some() != (self.detector == Detector::Dlsd) {
            return Err(Error::Invalid("fallback_rate is reported for dlsd only".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(self.snr_db),
            self.detector.as_str(),
            fmt_f64(self.ber),
            fmt_opt(self.avg_flops),
            self.max_flops.map(|v| v.to_string()).unwrap_or_default(),
            fmt_f64(self.avg_time),
            fmt_f64(self.max_time),
            fmt_opt(self.avg_points_in_sphere),
            fmt_opt(self.fallback_rate),
            fmt_opt(self.e_c),
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 10 {
            return Err(Error::Invalid(format!("expected 10 columns, found {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::Invalid(format!("column {i}: `{}` is not a number", f[i])))
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if f[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let detector = match f[1] {
            "mld" => Detector::Mld,
            "sdirs" => Detector::Sdirs,
            "dlsd" => Detector::Dlsd,
            "mmse" => Detector::Mmse,
            other => return Err(Error::Invalid(format!("unknown detector `{other}`"))),
        };
        let max_flops = if f[4].is_empty() {
            None
        } else {
            Some(f[4].parse().map_err(|_| Error::Invalid(format!("column 4: `{}`", f[4])))?)
        };
        let row = Self {
            snr_db: num(0)?,
            detector,
            ber: num(2)?,
            avg_flops: opt(3)?,
            max_flops,
            avg_time: num(5)?,
            max_time: num(6)?,
            avg_points_in_sphere: opt(7)?,
            fallback_rate: opt(8)?,
            e_c: opt(9)?,
        };
        row.validate()?;
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityRow {
    pub snr_db: f64,
    /// `fp` (fixed radius, no tightening), `sdirs` or `dlsd`.
    pub detector: String,
    pub avg_flops: f64,
    pub max_flops: u64,
    pub avg_time: f64,
    pub max_time: f64,
    pub avg_points_in_sphere: f64,
    pub analytic_flops: f64,
    pub e_c_empirical: f64,
    pub e_c_analytic: f64,
    pub flops_ratio_vs_sdirs: Option<f64>,
    pub time_ratio_vs_sdirs: Option<f64>,
}

impl ComplexityRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(self.snr_db),
            self.detector,
            fmt_f64(self.avg_flops),
            self.max_flops,
            fmt_f64(self.avg_time),
            fmt_f64(self.max_time),
            fmt_f64(self.avg_points_in_sphere),
            fmt_f64(self.analytic_flops),
            fmt_f64(self.e_c_empirical),
            fmt_f64(self.e_c_analytic),
            fmt_opt(self.flops_ratio_vs_sdirs),
            fmt_opt(self.time_ratio_vs_sdirs),
        )
    }
}

pub fn write_csv(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{header}").expect("string write");
    for l in lines {
        writeln!(text, "{l}").expect("string write");
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a results file, validating the header and every row.
pub fn read_result_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(RESULT_HEADER) {
        return Err(Error::Parse {
            path: path.into(),
            message: "unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            ResultRow::from_csv(l).map_err(|e| Error::Parse {
                path: path.into(),
                message: format!("line {}: {e}", i + 2),
            })
        })
        .collect()
}

/// Drops the named columns from CSV text, for comparisons that ignore timing.
pub fn strip_columns(csv: &str, drop: &[&str]) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let keep: Vec<bool> = header.split(',').map(|h| !drop.contains(&h)).collect();
    let pick = |l: &str| {
        l.split(',')
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(v, _)| v)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = pick(header);
    for l in lines {
        out.push('\n');
        out.push_str(&pick(l));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(detector: Detector) -> ResultRow {
        ResultRow {
            snr_db: 12.0,
            detector,
            ber: 0.01,
            avg_flops: Some(1234.5),
            max_flops: Some(9000),
            avg_time: 1e-5,
            max_time: 2e-4,
            avg_points_in_sphere: Some(1.25),
            fallback_rate: (detector == Detector::Dlsd).then_some(0.001),
            e_c: Some(5.1),
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        let x = 1.0 / 3.0;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn rows_round_trip() {
        for d in [Detector::Dlsd, Detector::Sdirs] {
            let r = row(d);
            assert_eq!(ResultRow::from_csv(&r.to_csv()).unwrap(), r);
        }
        assert_eq!(RESULT_HEADER.split(',').count(), 10);
        assert_eq!(COMPLEXITY_HEADER.split(',').count(), 12);
    }

    #[test]
    fn invariants_are_checked() {
        let mut r = row(Detector::Sdirs);
        r.fallback_rate = Some(0.0);
        assert!(r.validate().is_err());
        let mut r = row(Detector::Dlsd);
        r.ber = 1.5;
        assert!(r.validate().is_err());
    }

    #[test]
    fn strip_time_columns() {
        let csv = format!("{RESULT_HEADER}\n{}", row(Detector::Mmse).to_csv());
        let s = strip_columns(&csv, &NONDETERMINISTIC_COLUMNS);
        assert!(!s.contains("avg_time"));
        assert_eq!(s.lines().nth(1).unwrap().split(',').count(), 8);
    }
}
