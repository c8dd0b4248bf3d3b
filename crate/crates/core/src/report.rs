//! Check reports: one record per check, emitted as JSON lines, an aggregate
//! JSON document, or a CSV summary.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::LabError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
        }
    }
}

/// Which side of the tolerance a metric must fall on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Below,
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<Bound>,
}

impl Metric {
    /// Reported only, never gated.
    pub fn info(name: impl Into<String>, value: f64) -> Metric {
        Metric {
            name: name.into(),
            value,
            stderr: None,
            tolerance: None,
            bound: None,
        }
    }

    /// Passes when `value < tolerance`.
    pub fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Metric {
        Metric {
            tolerance: Some(tolerance),
            bound: Some(Bound::Below),
            ..Metric::info(name, value)
        }
    }

    /// Passes when `value > tolerance`.
    pub fn above(name: impl Into<String>, value: f64, tolerance: f64) -> Metric {
        Metric {
            tolerance: Some(tolerance),
            bound: Some(Bound::Above),
            ..Metric::info(name, value)
        }
    }

    pub fn with_stderr(mut self, stderr: f64) -> Metric {
        self.stderr = Some(stderr);
        self
    }

    pub fn within(&self) -> bool {
        match (self.bound, self.tolerance) {
            (Some(Bound::Below), Some(t)) => self.value < t,
            (Some(Bound::Above), Some(t)) => self.value > t,
            _ => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub case: String,
    pub anchor: String,
    pub status: Status,
    pub metrics: Vec<Metric>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl CheckReport {
    /// Status from the metrics: pass iff every gated metric is within its
    /// tolerance.
    pub fn new(check: &str, case: impl Into<String>, anchor: &str, seed: u64, metrics: Vec<Metric>) -> CheckReport {
        let status = if metrics.iter().all(Metric::within) {
            Status::Pass
        } else {
            Status::Fail
        };
        CheckReport {
            check: check.into(),
            case: case.into(),
            anchor: anchor.into(),
            status,
            metrics,
            error: None,
            seed,
            wall_time_s: 0.0,
        }
    }

    /// A check that could not run to completion.
    pub fn errored(check: &str, case: impl Into<String>, anchor: &str, seed: u64, err: &LabError) -> CheckReport {
        CheckReport {
            status: Status::Fail,
            error: Some(err.to_string()),
            ..CheckReport::new(check, case, anchor, seed, Vec::new())
        }
    }

    /// Marks an underpowered run. A failing metric still fails.
    pub fn inconclusive_if(mut self, flag: bool) -> CheckReport {
        if flag && self.status == Status::Pass {
            self.status = Status::Inconclusive;
        }
        self
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// The record with its wall time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> CheckReport {
        CheckReport {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Runs `f` and stamps the wall time on each report it returns.
pub fn timed<F: FnOnce() -> Vec<CheckReport>>(f: F) -> Vec<CheckReport> {
    let start = Instant::now();
    let mut reps = f();
    let each = start.elapsed().as_secs_f64() / reps.len().max(1) as f64;
    for r in &mut reps {
        r.wall_time_s = each;
    }
    reps
}

/// `Fail` beats `Inconclusive` beats `Pass`.
pub fn overall(reports: &[CheckReport]) -> Status {
    if reports.iter().any(|r| r.status == Status::Fail) {
        Status::Fail
    } else if reports.iter().any(|r| r.status == Status::Inconclusive) {
        Status::Inconclusive
    } else {
        Status::Pass
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Aggregate<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub status: Status,
    pub counts: Counts,
    pub reports: &'a [CheckReport],
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub pass: usize,
    pub fail: usize,
    pub inconclusive: usize,
}

pub fn counts(reports: &[CheckReport]) -> Counts {
    let mut c = Counts::default();
    for r in reports {
        match r.status {
            Status::Pass => c.pass += 1,
            Status::Fail => c.fail += 1,
            Status::Inconclusive => c.inconclusive += 1,
        }
    }
    c
}

pub fn write_json_lines<W: Write>(out: &mut W, reports: &[CheckReport]) -> std::io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_aggregate<W: Write>(out: &mut W, command: &str, seed: u64, reports: &[CheckReport]) -> std::io::Result<()> {
    let doc = Aggregate {
        command,
        seed,
        status: overall(reports),
        counts: counts(reports),
        reports,
    };
    serde_json::to_writer_pretty(&mut *out, &doc)?;
    out.write_all(b"\n")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per metric.
pub fn write_csv<W: Write>(out: &mut W, reports: &[CheckReport]) -> std::io::Result<()> {
    writeln!(out, "check,case,status,metric,value,stderr,tolerance,bound,within")?;
    for r in reports {
        if r.metrics.is_empty() {
            writeln!(out, "{},{},{},,,,,,", csv_field(&r.check), csv_field(&r.case), r.status.as_str())?;
        }
        for m in &r.metrics {
            let bound = match m.bound {
                Some(Bound::Below) => "below",
                Some(Bound::Above) => "above",
                None => "",
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                csv_field(&r.check),
                csv_field(&r.case),
                r.status.as_str(),
                csv_field(&m.name),
                m.value,
                opt(m.stderr),
                opt(m.tolerance),
                bound,
                m.within()
            )?;
        }
    }
    Ok(())
}

/// One human-readable line.
pub fn summary_line(r: &CheckReport) -> String {
    let mut s = format!("{:<12} {} [{}]", r.status.as_str().to_uppercase(), r.check, r.case);
    if let Some(e) = &r.error {
        s.push_str(&format!(" error: {e}"));
    }
    for m in r.metrics.iter().filter(|m| m.tolerance.is_some()).take(4) {
        let op = if m.bound == Some(Bound::Above) { ">" } else { "<" };
        s.push_str(&format!(" {}={:.3e}{}{:.0e}", m.name, m.value, op, m.tolerance.unwrap_or(0.0)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_metrics() {
        let r = CheckReport::new("c", "x", "a", 1, vec![Metric::below("m", 0.5, 1.0), Metric::info("i", 9.0)]);
        assert_eq!(r.status, Status::Pass);
        let r = CheckReport::new("c", "x", "a", 1, vec![Metric::below("m", 0.0, 0.0)]);
        assert_eq!(r.status, Status::Fail);
        let r = CheckReport::new("c", "x", "a", 1, vec![Metric::above("m", 2.0, 1.0)]);
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.clone().inconclusive_if(true).status, Status::Inconclusive);
        let nan = CheckReport::new("c", "x", "a", 1, vec![Metric::below("m", f64::NAN, 1.0)]);
        assert_eq!(nan.status, Status::Fail);
        assert_eq!(nan.inconclusive_if(true).status, Status::Fail);
        assert_eq!(overall(&[r.clone(), r.inconclusive_if(true)]), Status::Inconclusive);
    }

    #[test]
    fn json_lines_and_csv() {
        let r = CheckReport::new("c", "x,y", "a", 7, vec![Metric::below("m", 0.5, 1.0).with_stderr(0.1)]);
        let mut buf = Vec::new();
        write_json_lines(&mut buf, &[r.clone(), r.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["status"], "pass");
        assert_eq!(v["metrics"][0]["stderr"], 0.1);
        let mut csv = Vec::new();
        write_csv(&mut csv, &[r]).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("c,\"x,y\",pass,m,0.5,0.1,1,below,true"));
    }
}
