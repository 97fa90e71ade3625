// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV ingestion, report serialization and plot data.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cpt::{TestReport, Trim, WeightFn};
use crate::error::{CptError, Result};
use crate::harness::{ChangeRule, ExperimentPlan, Scenario};
use crate::models::ModelSpec;
use crate::simulate::Trajectory;

/// JSON schema for [`TestReport`] documents.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

/// Value column selector. Indices are 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl FromStr for Column {
    type Err = CptError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(CptError::InvalidArgument("empty column selector".into()));
        }
        match s.parse::<usize>() {
            Ok(0) => Err(CptError::InvalidArgument(
                "column indices start at 1".into(),
            )),
            Ok(i) => Ok(Column::Index(i)),
            Err(_) => Ok(Column::Name(s.to_string())),
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Index(i) => write!(f, "#{i}"),
            Column::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Header {
    /// A first row with any non-numeric field is a header.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Clone, Debug)]
pub struct ReadOptions {
    /// Defaults to the last column.
    pub column: Option<Column>,
    pub header: Header,
    pub delimiter: u8,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            column: None,
            header: Header::Auto,
            delimiter: b',',
        }
    }
}

/// A validated count series read from a delimited file.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFile {
    pub path: PathBuf,
    /// Header name of the value column, or `#i` when there is no header.
    pub column: String,
    pub values: Vec<u64>,
    /// File line of each value.
    pub lines: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

impl SeriesFile {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn summary(&self) -> SeriesSummary {
        let n = self.values.len();
        let mean = self.values.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let variance = if n > 1 {
            self.values
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64
        } else {
            0.0
        };
        SeriesSummary { n, mean, variance }
    }

    /// Support check reporting the offending file line.
    pub fn check_support(&self, spec: &ModelSpec) -> Result<()> {
        for (&v, &line) in self.values.iter().zip(&self.lines) {
            if !spec.family.in_support(v) {
                return Err(CptError::Support {
                    row: line,
                    value: v,
                    family: spec.family.to_string(),
                });
            }
        }
        Ok(())
    }
}

pub fn read_series(path: impl AsRef<Path>, opts: &ReadOptions) -> Result<SeriesFile> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut s = parse_series(file, opts)?;
    s.path = path.to_path_buf();
    Ok(s)
}

/// Like [`read_series`] on any reader; `path` is left empty.
pub fn parse_series<R: Read>(reader: R, opts: &ReadOptions) -> Result<SeriesFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(opts.delimiter)
        .from_reader(reader);
    let mut records = rdr.records();

    let first = match records.next() {
        Some(r) => r?,
        None => return Err(CptError::EmptyInput("no rows".into())),
    };
    let header = match opts.header {
        Header::Present => true,
        Header::Absent => false,
        Header::Auto => first.iter().any(|f| f.trim().parse::<f64>().is_err()),
    };
    let width = first.len();
    let idx = match (&opts.column, header) {
        (None, _) => width - 1,
        (Some(Column::Index(i)), _) => {
            if *i > width {
                return Err(CptError::InvalidArgument(format!(
                    "column {i} requested but the first row has {width} fields"
                )));
            }
            i - 1
        }
        (Some(Column::Name(name)), true) => first
            .iter()
            .position(|f| f.trim() == name)
            .ok_or_else(|| CptError::InvalidArgument(format!("no column named '{name}'")))?,
        (Some(Column::Name(name)), false) => {
            return Err(CptError::InvalidArgument(format!(
                "column '{name}' selected by name but the file has no header"
            )))
        }
    };
    let column = if header {
        first.get(idx).unwrap_or_default().trim().to_string()
    } else {
        format!("#{}", idx + 1)
    };

    let mut values = Vec::new();
    let mut lines = Vec::new();
    let mut push = |rec: &csv::StringRecord| -> Result<()> {
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = rec.get(idx).map(str::trim).unwrap_or("");
        values.push(parse_count(field, line)?);
        lines.push(line);
        Ok(())
    };
    if !header {
        push(&first)?;
    }
    for rec in records {
        push(&rec?)?;
    }
    if values.is_empty() {
        return Err(CptError::EmptyInput("header only, no observations".into()));
    }
    Ok(SeriesFile {
        path: PathBuf::new(),
        column,
        values,
        lines,
    })
}

fn parse_count(field: &str, row: usize) -> Result<u64> {
    let err = |message: String| CptError::Parse { row, message };
    if field.is_empty() {
        return Err(err("missing value".into()));
    }
    if let Ok(v) = field.parse::<u64>() {
        return Ok(v);
    }
    match field.parse::<f64>() {
        Ok(x) if x < 0.0 => Err(err(format!("negative value '{field}'"))),
        Ok(_) => Err(err(format!("non-integer value '{field}'"))),
        Err(_) => Err(err(format!("not a number: '{field}'"))),
    }
}

/// Pretty JSON with a fixed field order.
pub fn report_json(report: &TestReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(report: &TestReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report_json(report)?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<TestReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Curve as `k,C_nk,valid`; invalid points leave `C_nk` empty.
pub fn write_curve_csv<W: Write>(report: &TestReport, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "k,C_nk,valid")?;
    for p in &report.curve {
        match p.value {
            Some(v) => writeln!(w, "{},{},true", p.k, v)?,
            None => writeln!(w, "{},,false", p.k)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the report and, optionally, the curve CSV.
pub fn emit_report(
    report: &TestReport,
    json: impl AsRef<Path>,
    curve: Option<&Path>,
) -> Result<()> {
    write_report(report, json)?;
    if let Some(p) = curve {
        write_curve_csv(report, File::create(p)?)?;
    }
    Ok(())
}

/// `t,y` rows, plus `x` when `latent` is set.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, latent: bool, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    if latent {
        writeln!(w, "t,y,x")?;
        for (t, (y, x)) in traj.y.iter().zip(&traj.x_latent).enumerate() {
            writeln!(w, "{},{},{}", t + 1, y, x)?;
        }
    } else {
        writeln!(w, "t,y")?;
        for (t, y) in traj.y.iter().enumerate() {
            writeln!(w, "{},{}", t + 1, y)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Bench plan as written by users, in JSON or `key = value` lines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub label: Option<String>,
    pub model: String,
    pub theta0: Vec<f64>,
    pub theta1: Option<Vec<f64>>,
    pub change: Option<ChangeRule>,
    pub n: Option<Vec<usize>>,
    pub replications: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub q: Option<String>,
    pub un: Option<String>,
    pub vn: Option<String>,
    pub burn_in: Option<usize>,
    pub critical_value: Option<f64>,
    pub critval_paths: Option<usize>,
    pub critval_grid: Option<usize>,
}

impl PlanFile {
    pub fn parse(text: &str) -> Result<Vec<PlanFile>> {
        let t = text.trim_start();
        if t.starts_with('[') {
            Ok(serde_json::from_str(t)?)
        } else if t.starts_with('{') {
            Ok(vec![serde_json::from_str(t)?])
        } else {
            Ok(vec![Self::parse_key_value(text)?])
        }
    }

    fn parse_key_value(text: &str) -> Result<PlanFile> {
        let mut p = PlanFile::default();
        let mut have_model = false;
        for (i, raw) in text.lines().enumerate() {
            let row = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| CptError::Parse { row, message: m };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |what: &str| err(format!("bad {what} '{v}'"));
            let floats = || -> Result<Vec<f64>> {
                v.split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| num(k)))
                    .collect()
            };
            match k {
                "label" => p.label = Some(v.to_string()),
                "model" => {
                    p.model = v.to_string();
                    have_model = true;
                }
                "theta0" => p.theta0 = floats()?,
                "theta1" => p.theta1 = Some(floats()?),
                "change" => p.change = Some(parse_change(v).map_err(|_| num(k))?),
                "n" => {
                    p.n = Some(
                        v.split(',')
                            .map(|s| s.trim().parse().map_err(|_| num(k)))
                            .collect::<Result<_>>()?,
                    )
                }
                "replications" => p.replications = Some(v.parse().map_err(|_| num(k))?),
                "alpha" => p.alpha = Some(v.parse().map_err(|_| num(k))?),
                "seed" => p.seed = Some(v.parse().map_err(|_| num(k))?),
                "q" => p.q = Some(v.to_string()),
                "un" => p.un = Some(v.to_string()),
                "vn" => p.vn = Some(v.to_string()),
                "burn_in" => p.burn_in = Some(v.parse().map_err(|_| num(k))?),
                "critical_value" => p.critical_value = Some(v.parse().map_err(|_| num(k))?),
                "critval_paths" => p.critval_paths = Some(v.parse().map_err(|_| num(k))?),
                "critval_grid" => p.critval_grid = Some(v.parse().map_err(|_| num(k))?),
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        if !have_model {
            return Err(CptError::InvalidArgument("plan has no 'model' key".into()));
        }
        Ok(p)
    }

    pub fn to_plan(&self) -> Result<ExperimentPlan> {
        let spec: ModelSpec = self.model.parse()?;
        let label = self.label.clone().unwrap_or_else(|| match &self.theta1 {
            Some(t1) => format!("{}-power-{:?}-{:?}", self.model, self.theta0, t1),
            None => format!("{}-level-{:?}", self.model, self.theta0),
        });
        let mut scenario = match &self.theta1 {
            Some(t1) => Scenario::power(&label, spec, &self.theta0, t1),
            None => Scenario::level(&label, spec, &self.theta0),
        };
        if let Some(c) = self.change {
            scenario.change = c;
        }
        let mut plan = ExperimentPlan::new(scenario);
        if let Some(n) = &self.n {
            plan.ns = n.clone();
        }
        if let Some(r) = self.replications {
            plan.replications = r;
        }
        if let Some(a) = self.alpha {
            plan.alpha = a;
        }
        if let Some(s) = self.seed {
            plan.seed = s;
        }
        if let Some(q) = &self.q {
            plan.weight = q.parse::<WeightFn>()?;
        }
        if let Some(u) = &self.un {
            plan.un = u.parse::<Trim>()?;
        }
        if let Some(v) = &self.vn {
            plan.vn = v.parse::<Trim>()?;
        }
        if let Some(b) = self.burn_in {
            plan.burn_in = b;
        }
        plan.critical_value = self.critical_value;
        if let Some(p) = self.critval_paths {
            plan.critval_paths = p;
        }
        if let Some(g) = self.critval_grid {
            plan.critval_grid = g;
        }
        Ok(plan)
    }
}

/// `half`, `fraction:0.3` or `at:250`.
pub fn parse_change(s: &str) -> Result<ChangeRule> {
    let bad = || CptError::InvalidArgument(format!("bad change rule '{s}'"));
    match s.trim().split_once(':') {
        None if s.trim() == "half" => Ok(ChangeRule::Half),
        Some(("fraction", f)) => {
            let f: f64 = f.trim().parse().map_err(|_| bad())?;
            if !(f > 0.0 && f < 1.0) {
                return Err(bad());
            }
            Ok(ChangeRule::Fraction(f))
        }
        Some(("at", t)) => Ok(ChangeRule::At(t.trim().parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

/// Comma separated floats, e.g. `0.2,0.3,0.25`.
pub fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CptError::InvalidArgument(format!("bad number '{p}' in '{s}'")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpt::{run_test, Critical, TestOptions};
    use crate::simulate::simulate_h1;

    fn parse(text: &str) -> Result<SeriesFile> {
        parse_series(text.as_bytes(), &ReadOptions::default())
    }

    #[test]
    fn headerless_single_column() {
        let s = parse("1\n2\n3\n6\n").unwrap();
        assert_eq!(s.values, vec![1, 2, 3, 6]);
        assert_eq!(s.lines, vec![1, 2, 3, 4]);
        assert_eq!(s.column, "#1");
        let m = s.summary();
        assert_eq!(m.n, 4);
        assert!((m.mean - 3.0).abs() < 1e-15);
        // deviations -2,-1,0,3 -> 14/3
        assert!((m.variance - 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn header_detected_and_named_column() {
        let text = "date,count,other\n2001,4,9\n2002,5,9\n";
        let s = parse(text).unwrap();
        assert_eq!(s.column, "other");
        let opts = ReadOptions {
            column: Some("count".parse().unwrap()),
            ..Default::default()
        };
        let s = parse_series(text.as_bytes(), &opts).unwrap();
        assert_eq!(s.values, vec![4, 5]);
        assert_eq!(s.lines, vec![2, 3]);
        let opts = ReadOptions {
            column: Some("2".parse().unwrap()),
            ..Default::default()
        };
        assert_eq!(
            parse_series(text.as_bytes(), &opts).unwrap().values,
            vec![4, 5]
        );
    }

    #[test]
    fn errors_name_the_row() {
        match parse("v\n1\n2.5\n") {
            Err(CptError::Parse { row: 3, message }) => assert!(message.contains("2.5")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("1\n-4\n"),
            Err(CptError::Parse { row: 2, .. })
        ));
        assert!(matches!(
            parse("a,b\n1,\n"),
            Err(CptError::Parse { row: 2, .. })
        ));
        assert!(matches!(parse(""), Err(CptError::EmptyInput(_))));
        assert!(matches!(parse("count\n"), Err(CptError::EmptyInput(_))));
        let opts = ReadOptions {
            column: Some(Column::Name("x".into())),
            ..Default::default()
        };
        assert!(parse_series("1\n".as_bytes(), &opts).is_err());
    }

    #[test]
    fn binary_support_error() {
        let s = parse("y\n0\n1\n3\n").unwrap();
        let spec: ModelSpec = "bernoulli-ingarch".parse().unwrap();
        assert!(matches!(
            s.check_support(&spec),
            Err(CptError::Support {
                row: 4,
                value: 3,
                ..
            })
        ));
        let pois: ModelSpec = "poisson-ingarch".parse().unwrap();
        s.check_support(&pois).unwrap();
    }

    fn sample_report() -> TestReport {
        let spec: ModelSpec = "poisson-ingarch".parse().unwrap();
        let tr = simulate_h1(
            &spec,
            &[1.0, 0.2, 0.15],
            &[4.0, 0.2, 0.15],
            300,
            150,
            100,
            5,
        )
        .unwrap();
        let opts = TestOptions {
            critical: Some(Critical::Value(3.0)),
            ..TestOptions::default()
        };
        run_test(&spec, &tr.y, &opts).unwrap()
    }

    #[test]
    fn report_round_trip_and_curve_csv() {
        let r = sample_report();
        assert!(r.reject);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let c = dir.path().join("c.csv");
        emit_report(&r, &p, Some(&c)).unwrap();
        assert_eq!(read_report(&p).unwrap(), r);
        let csv = std::fs::read_to_string(&c).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("k,C_nk,valid"));
        assert_eq!(lines.count(), r.curve.len());
        let mut again = Vec::new();
        write_curve_csv(&r, &mut again).unwrap();
        assert_eq!(again, csv.as_bytes());
    }

    #[test]
    fn plan_formats_agree() {
        let kv = "# level run\nmodel = nb-ingarch:r=1\ntheta0 = 0.2,0.3,0.25\nn = 500,1000\nreplications = 10\nchange = fraction:0.25\n";
        let json = r#"{"model":"nb-ingarch:r=1","theta0":[0.2,0.3,0.25],"n":[500,1000],"replications":10,"change":{"fraction":0.25}}"#;
        let a = PlanFile::parse(kv).unwrap();
        let b = PlanFile::parse(json).unwrap();
        assert_eq!(a, b);
        let plan = a[0].to_plan().unwrap();
        assert_eq!(plan.ns, vec![500, 1000]);
        assert_eq!(plan.scenario.change, ChangeRule::Fraction(0.25));
        assert!(PlanFile::parse("model = x\nbogus = 1\n").is_err());
        assert!(PlanFile::parse("theta0 = 1\n").is_err());
    }

    #[test]
    fn change_rules() {
        assert_eq!(parse_change("half").unwrap(), ChangeRule::Half);
        assert_eq!(parse_change("at:40").unwrap(), ChangeRule::At(40));
        assert!(parse_change("fraction:1.5").is_err());
        assert_eq!(parse_vector("1, 0.5").unwrap(), vec![1.0, 0.5]);
    }
}
