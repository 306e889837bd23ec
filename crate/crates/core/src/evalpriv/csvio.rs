//! CSV emitters and the matching readers. Floats are written in their
//! shortest round-trip form, so every file reads back bit-exactly and two
//! identical runs produce identical bytes.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::metrics::{AbortRecord, MetricsLog, RoundMetrics};
use super::toyviz::{PointKind, ToyPoint};

pub const METRICS_HEADER: [&str; 8] = [
    "round",
    "local_acc",
    "global_acc",
    "gd_loss",
    "model_loss",
    "gen_loss",
    "server_loss",
    "note",
];
pub const TIMING_HEADER: [&str; 2] = ["round", "seconds"];
pub const SUMMARY_HEADER: [&str; 4] = ["metric", "mean", "std", "seeds"];
pub const ATTACK_HEADER: [&str; 3] = ["client", "psnr", "match_loss"];
pub const TOY_HEADER: [&str; 4] = ["kind", "label", "pc1", "pc2"];

const ABORT_NOTE: &str = "abort: ";

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn reader<R: Read>(input: R, header: &[&str], what: &'static str) -> Result<csv::Reader<R>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::format(what, format!("header {found:?}, expected {header:?}")));
    }
    Ok(rd)
}

fn num<T: std::str::FromStr>(s: &str, what: &'static str, field: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(what, format!("bad {field} value `{s}`")))
}

/// Shortest round-trip form, with an exponent for very large or small values.
fn float(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

fn parse_opt(s: &str, what: &'static str, field: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        num(s, what, field).map(Some)
    }
}

/// One row per round, plus a final row whose `note` starts with `abort: `
/// when the run stopped on a non-finite value. Wall-clock time is kept out
/// of this file; see [`write_timing`].
pub fn write_metrics<W: Write>(log: &MetricsLog, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(METRICS_HEADER)?;
    for m in &log.rows {
        w.write_record([
            m.round.to_string(),
            float(m.local_acc),
            float(m.global_acc),
            opt(m.gd_loss),
            float(m.model_loss),
            opt(m.gen_loss),
            opt(m.server_loss),
            String::new(),
        ])?;
    }
    if let Some(a) = &log.abort {
        let detail = a.detail.replace(['\n', '\r'], " ");
        let mut row = vec![a.round.to_string()];
        row.extend(std::iter::repeat_n(String::new(), 6));
        row.push(format!("{ABORT_NOTE}{detail}"));
        w.write_record(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads [`write_metrics`] output. Wall-clock seconds read back as zero.
pub fn read_metrics<R: Read>(input: R) -> Result<MetricsLog> {
    const WHAT: &str = "metrics csv";
    let mut rd = reader(input, &METRICS_HEADER, WHAT)?;
    let mut log = MetricsLog::default();
    for rec in rd.records() {
        let rec = rec?;
        if log.abort.is_some() {
            return Err(Error::format(WHAT, "rows after the abort marker"));
        }
        let round = num(&rec[0], WHAT, "round")?;
        if let Some(detail) = rec[7].strip_prefix(ABORT_NOTE) {
            log.abort = Some(AbortRecord {
                round,
                detail: detail.to_string(),
            });
            continue;
        }
        log.rows.push(RoundMetrics {
            round,
            local_acc: num(&rec[1], WHAT, "local_acc")?,
            global_acc: num(&rec[2], WHAT, "global_acc")?,
            gd_loss: parse_opt(&rec[3], WHAT, "gd_loss")?,
            model_loss: num(&rec[4], WHAT, "model_loss")?,
            gen_loss: parse_opt(&rec[5], WHAT, "gen_loss")?,
            server_loss: parse_opt(&rec[6], WHAT, "server_loss")?,
            seconds: 0.0,
        });
    }
    Ok(log)
}

pub fn write_timing<W: Write>(log: &MetricsLog, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(TIMING_HEADER)?;
    for m in &log.rows {
        w.write_record([m.round.to_string(), float(m.seconds)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `(round, seconds)` pairs.
pub fn read_timing<R: Read>(input: R) -> Result<Vec<(usize, f64)>> {
    const WHAT: &str = "timing csv";
    let mut rd = reader(input, &TIMING_HEADER, WHAT)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        out.push((num(&rec[0], WHAT, "round")?, num(&rec[1], WHAT, "seconds")?));
    }
    Ok(out)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

/// Final-round metrics across seeds. Runs without any completed round are
/// left out; optional metrics are summarized over the runs that have them.
pub fn summarize(logs: &[MetricsLog]) -> Vec<SummaryRow> {
    let finals: Vec<&RoundMetrics> = logs.iter().filter_map(MetricsLog::last).collect();
    let fields: [(&str, fn(&RoundMetrics) -> Option<f64>); 6] = [
        ("local_acc", |m| Some(m.local_acc)),
        ("global_acc", |m| Some(m.global_acc)),
        ("gd_loss", |m| m.gd_loss),
        ("model_loss", |m| Some(m.model_loss)),
        ("gen_loss", |m| m.gen_loss),
        ("server_loss", |m| m.server_loss),
    ];
    fields
        .iter()
        .filter_map(|(name, get)| {
            let vals: Vec<f64> = finals.iter().filter_map(|m| get(m)).collect();
            if vals.is_empty() {
                return None;
            }
            let (mean, std) = mean_std(&vals);
            Some(SummaryRow {
                metric: name.to_string(),
                mean,
                std,
                seeds: vals.len(),
            })
        })
        .collect()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([r.metric.clone(), float(r.mean), float(r.std), r.seeds.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    const WHAT: &str = "summary csv";
    let mut rd = reader(input, &SUMMARY_HEADER, WHAT)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        out.push(SummaryRow {
            metric: rec[0].to_string(),
            mean: num(&rec[1], WHAT, "mean")?,
            std: num(&rec[2], WHAT, "std")?,
            seeds: num(&rec[3], WHAT, "seeds")?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackRow {
    pub client: usize,
    pub psnr: f64,
    pub match_loss: f64,
}

pub fn write_attack<W: Write>(rows: &[AttackRow], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(ATTACK_HEADER)?;
    for r in rows {
        w.write_record([r.client.to_string(), float(r.psnr), float(r.match_loss)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_attack<R: Read>(input: R) -> Result<Vec<AttackRow>> {
    const WHAT: &str = "attack csv";
    let mut rd = reader(input, &ATTACK_HEADER, WHAT)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        out.push(AttackRow {
            client: num(&rec[0], WHAT, "client")?,
            psnr: num(&rec[1], WHAT, "psnr")?,
            match_loss: num(&rec[2], WHAT, "match_loss")?,
        });
    }
    Ok(out)
}

pub fn write_toy<W: Write>(points: &[ToyPoint], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(TOY_HEADER)?;
    for p in points {
        w.write_record([
            p.kind.name().to_string(),
            p.label.to_string(),
            float(p.pc1),
            float(p.pc2),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_toy<R: Read>(input: R) -> Result<Vec<ToyPoint>> {
    const WHAT: &str = "toyviz csv";
    let mut rd = reader(input, &TOY_HEADER, WHAT)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        out.push(ToyPoint {
            kind: PointKind::parse(&rec[0])?,
            label: num(&rec[1], WHAT, "label")?,
            pc1: num(&rec[2], WHAT, "pc1")?,
            pc2: num(&rec[3], WHAT, "pc2")?,
        });
    }
    Ok(out)
}

/// Per-client label counts: `client,class_0,..,class_{c-1},total`.
pub fn write_partition<W: Write>(counts: &[Vec<usize>], out: W) -> Result<()> {
    let classes = counts.first().map_or(0, Vec::len);
    if counts.iter().any(|c| c.len() != classes) {
        return Err(Error::InvalidArgument("ragged partition counts".into()));
    }
    let mut w = writer(out);
    let mut header = vec!["client".to_string()];
    header.extend((0..classes).map(|c| format!("class_{c}")));
    header.push("total".into());
    w.write_record(&header)?;
    for (i, row) in counts.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(usize::to_string));
        rec.push(row.iter().sum::<usize>().to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads [`write_partition`] output, checking the `total` column.
pub fn read_partition<R: Read>(input: R) -> Result<Vec<Vec<usize>>> {
    const WHAT: &str = "partition csv";
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let width = rd.headers()?.len();
    if width < 2 {
        return Err(Error::format(WHAT, "too few columns"));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let client: usize = num(&rec[0], WHAT, "client")?;
        if client != i {
            return Err(Error::format(WHAT, format!("client {client} in row {i}")));
        }
        let row: Vec<usize> = (1..width - 1)
            .map(|k| num(&rec[k], WHAT, "count"))
            .collect::<Result<_>>()?;
        let total: usize = num(&rec[width - 1], WHAT, "total")?;
        if total != row.iter().sum::<usize>() {
            return Err(Error::format(WHAT, format!("row {i} total mismatch")));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
#[path = "csvio_tests.rs"]
mod tests;
