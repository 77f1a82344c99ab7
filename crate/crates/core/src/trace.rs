//! Trace files: one CSV row per oracle evaluation plus a JSON sidecar.
//!
//! CSV columns are `eval_index, phase, x_1..x_d, f, c_1..c_m, best_f,
//! best_feasible`. Floats use Rust's shortest round-trip formatting, so a
//! trace read back reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::driver::{IterationRecord, RunConfig, RunTrace};
use crate::linesearch::{EvaluatedPoint, Phase};
use crate::{Error, Result};

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub eval_index: usize,
    pub phase: Phase,
    pub x: Vec<f64>,
    pub f: f64,
    pub c: Vec<f64>,
    pub best_f: f64,
    pub best_feasible: bool,
}

/// Contents of the JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub problem: String,
    pub algorithm: String,
    pub dim: usize,
    pub num_constraints: usize,
    pub config: RunConfig,
    pub evaluations: usize,
    pub iterations: Vec<IterationRecord>,
    pub final_incumbent: Option<EvaluatedPoint>,
    pub abort_reason: Option<String>,
}

impl Sidecar {
    pub fn from_trace(trace: &RunTrace) -> Self {
        Self {
            problem: trace.problem.clone(),
            algorithm: trace.algorithm.clone(),
            dim: trace.dim,
            num_constraints: trace.num_constraints,
            config: trace.config.clone(),
            evaluations: trace.evaluations.len(),
            iterations: trace.iterations.clone(),
            final_incumbent: trace.final_incumbent().cloned(),
            abort_reason: trace.abort_reason.clone(),
        }
    }
}

pub fn csv_header(dim: usize, num_constraints: usize) -> Vec<String> {
    let mut header = vec!["eval_index".to_string(), "phase".to_string()];
    header.extend((1..=dim).map(|i| format!("x_{i}")));
    header.push("f".into());
    header.extend((1..=num_constraints).map(|i| format!("c_{i}")));
    header.push("best_f".into());
    header.push("best_feasible".into());
    header
}

pub fn write_csv<W: Write>(trace: &RunTrace, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(csv_header(trace.dim, trace.num_constraints))?;
    for (point, best) in trace.evaluations.iter().zip(&trace.best_so_far) {
        let mut record = vec![point.index.to_string(), point.phase.as_str().to_string()];
        record.extend(point.x.iter().map(f64::to_string));
        record.push(point.f.to_string());
        record.extend(point.c.iter().map(f64::to_string));
        record.push(best.f.to_string());
        record.push(best.feasible.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn to_csv_string(trace: &RunTrace) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(trace, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Trace(e.to_string()))
}

fn parse_float(s: &str, column: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Trace(format!("column {column}: `{s}` is not a number")))
}

/// Parses a trace CSV, inferring `d` and `m` from the header.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    let dim = header.iter().filter(|h| h.starts_with("x_")).count();
    let m = header.iter().filter(|h| h.starts_with("c_")).count();
    if header.iter().collect::<Vec<_>>() != csv_header(dim, m) {
        return Err(Error::Trace(format!("unexpected header {:?}", header)));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let eval_index = field(0).parse().map_err(|_| Error::Trace(format!("bad eval_index `{}`", field(0))))?;
        let phase = field(1).parse()?;
        let x = (0..dim).map(|k| parse_float(field(2 + k), "x")).collect::<Result<_>>()?;
        let f = parse_float(field(2 + dim), "f")?;
        let c = (0..m).map(|k| parse_float(field(3 + dim + k), "c")).collect::<Result<_>>()?;
        let best_f = parse_float(field(3 + dim + m), "best_f")?;
        let best_feasible = field(4 + dim + m)
            .parse()
            .map_err(|_| Error::Trace(format!("bad best_feasible `{}`", field(4 + dim + m))))?;
        rows.push(TraceRow { eval_index, phase, x, f, c, best_f, best_feasible });
    }
    Ok(rows)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<TraceRow>> {
    read_csv(File::open(path)?)
}

/// File stem `{problem}_{algo}_seed{n}`.
pub fn trace_stem(problem: &str, algorithm: &str, seed: u64) -> String {
    format!("{problem}_{algorithm}_seed{seed}")
}

/// Writes `{stem}.csv` and `{stem}.json` into `dir`, returning both paths.
pub fn write_run(trace: &RunTrace, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let mut csv_out = BufWriter::new(File::create(&csv_path)?);
    write_csv(trace, &mut csv_out)?;
    csv_out.flush()?;
    let mut json_out = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut json_out, &Sidecar::from_trace(trace))?;
    json_out.write_all(b"\n")?;
    json_out.flush()?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{run, RunConfig};
    use crate::problems;

    fn gramacy_trace() -> RunTrace {
        run(&problems::gramacy(), &RunConfig::new(20).with_seed(2).with_frozen_lengthscale(0.3)).unwrap()
    }

    #[test]
    fn header_layout() {
        assert_eq!(csv_header(2, 1), ["eval_index", "phase", "x_1", "x_2", "f", "c_1", "best_f", "best_feasible"]);
    }

    #[test]
    fn csv_round_trips_bit_exactly() {
        let trace = gramacy_trace();
        let text = to_csv_string(&trace).unwrap();
        let rows = read_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), trace.evaluations.len());
        for ((row, point), best) in rows.iter().zip(&trace.evaluations).zip(&trace.best_so_far) {
            assert_eq!(row.eval_index, point.index);
            assert_eq!(row.phase, point.phase);
            assert_eq!(row.x, point.x);
            assert_eq!(row.f.to_bits(), point.f.to_bits());
            assert_eq!(row.c, point.c);
            assert_eq!(row.best_f.to_bits(), best.f.to_bits());
            assert_eq!(row.best_feasible, best.feasible);
        }
    }

    #[test]
    fn shortest_round_trip_formatting() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e21, f64::MIN_POSITIVE] {
            let s = v.to_string();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(0.1f64.to_string(), "0.1");
    }

    #[test]
    fn sidecar_echoes_config_and_incumbent() {
        let trace = gramacy_trace();
        let dir = std::env::temp_dir().join(format!("bayesqp-trace-{}", std::process::id()));
        let (csv_path, json_path) = write_run(&trace, &dir, &trace_stem("gramacy", "bayesqp", 2)).unwrap();
        assert!(csv_path.ends_with("gramacy_bayesqp_seed2.csv"));
        let sidecar: Sidecar = serde_json::from_reader(File::open(&json_path).unwrap()).unwrap();
        assert_eq!(sidecar.config, trace.config);
        assert_eq!(sidecar.evaluations, 20);
        assert_eq!(sidecar.final_incumbent.as_ref(), trace.final_incumbent());
        assert_eq!(read_csv_file(&csv_path).unwrap().len(), 20);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
        let bad = "eval_index,phase,x_1,f,best_f,best_feasible\n0,warmup,0.5,1,1,true\n";
        assert!(read_csv(bad.as_bytes()).is_err());
    }
}
