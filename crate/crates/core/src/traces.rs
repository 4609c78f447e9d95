//! Long-format CSV traces: one metric value per row under the header
//! `kind,seed,time,metric,value`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{MeanSe, SeedRun};

pub const HEADER: [&str; 5] = ["kind", "seed", "time", "metric", "value"];

/// A parsed CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub kind: String,
    pub seed: u64,
    pub time: f64,
    pub metric: String,
    pub value: f64,
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

/// Writes the runs in order. Floats use the shortest representation that
/// round-trips, so equal runs produce identical bytes.
pub fn write_csv<W: Write>(out: W, runs: &[SeedRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_error)?;
    for run in runs {
        let seed = run.seed.to_string();
        for row in &run.rows {
            w.write_record([run.kind, &seed, &row.time.to_string(), row.metric, &row.value.to_string()])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(runs: &[SeedRun]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, runs).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is ASCII")
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?;
    if header.iter().ne(HEADER) {
        return Err(Error::config(format!("expected header {}, got {:?}", HEADER.join(","), header)));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let bad = |field: &str| Error::config(format!("csv row {}: cannot parse {field}", line + 2));
        rows.push(TraceRow {
            kind: rec[0].to_string(),
            seed: rec[1].parse().map_err(|_| bad("seed"))?,
            time: rec[2].parse().map_err(|_| bad("time"))?,
            metric: rec[3].to_string(),
            value: rec[4].parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum XAxis {
    #[default]
    Time,
    Updates,
    Energy,
}

impl XAxis {
    pub fn label(&self) -> &'static str {
        match self {
            XAxis::Time => "continuous time",
            XAxis::Updates => "number of updates in the whole graph",
            XAxis::Energy => "energy spent",
        }
    }

    fn metric(&self) -> Option<&'static str> {
        match self {
            XAxis::Time => None,
            XAxis::Updates => Some("updates_accepted"),
            XAxis::Energy => Some("energy"),
        }
    }
}

impl std::str::FromStr for XAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(XAxis::Time),
            "updates" => Ok(XAxis::Updates),
            "energy" => Ok(XAxis::Energy),
            _ => Err(Error::config(format!("unknown x axis {s:?}; expected time, updates or energy"))),
        }
    }
}

/// Cross-seed aggregate of one metric at one sample time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregatePoint {
    /// Mean over seeds of the x-axis quantity.
    pub x: f64,
    pub y: MeanSe,
}

/// Distinct metric names, sorted.
pub fn metrics(rows: &[TraceRow]) -> Vec<String> {
    let mut m: Vec<String> = rows.iter().map(|r| r.metric.clone()).collect();
    m.sort();
    m.dedup();
    m
}

/// Mean and standard error over seeds of `metric` at every sample time,
/// placed on the chosen x axis.
pub fn aggregate(rows: &[TraceRow], metric: &str, axis: XAxis) -> Result<Vec<AggregatePoint>> {
    let key = |t: f64| t.to_bits();
    let mut ys: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut xs: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if r.metric == metric {
            ys.entry(key(r.time)).or_default().push(r.value);
        }
        if Some(r.metric.as_str()) == axis.metric() {
            xs.entry(key(r.time)).or_default().push(r.value);
        }
    }
    if ys.is_empty() {
        return Err(Error::config(format!("no rows for metric {metric:?}")));
    }
    let mut points: Vec<AggregatePoint> = ys
        .into_iter()
        .map(|(k, v)| {
            let t = f64::from_bits(k);
            let x = match axis.metric() {
                None => Some(t),
                Some(_) => xs.get(&k).and_then(|x| MeanSe::of(x)).map(|m| m.mean),
            };
            x.map(|x| AggregatePoint { x, y: MeanSe::of(&v).expect("non-empty") })
                .ok_or_else(|| Error::config(format!("missing {axis:?} values at t = {t}")))
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| a.x.total_cmp(&b.x));
    Ok(points)
}
