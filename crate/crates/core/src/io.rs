//! CSV readers and writers for datasets, truth files and fit outputs.

use std::io::{Read, Write};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::evaluation::RocRow;
use crate::model::{Family, NodeFit, ReplicateDataset};

/// Shortest decimal string that parses back to the same `f64`. Uses
/// scientific notation outside `[1e-4, 1e15)`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x == f64::INFINITY {
            "inf".into()
        } else if x == f64::NEG_INFINITY {
            "-inf".into()
        } else {
            "0".into()
        };
    }
    let a = x.abs();
    if (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_else(|| "NA".into())
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Parse(format!("line {line}: missing value")));
    }
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse '{s}' as a number")))
}

fn parse_index(s: &str, line: usize, what: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("line {line}: invalid {what} '{}'", s.trim())))
}

/// Reads `subject,time,v1,...,vp` with rows sorted by subject then time and
/// both indices 1-based and consecutive.
pub fn read_dataset<R: Read>(reader: R, family: Family) -> Result<ReplicateDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3
        || headers.get(0).map(str::trim) != Some("subject")
        || headers.get(1).map(str::trim) != Some("time")
    {
        return Err(Error::Parse(
            "dataset header must be subject,time,v1,...,vp".into(),
        ));
    }
    let p = headers.len() - 2;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec?;
        if rec.len() != p + 2 {
            return Err(Error::Parse(format!(
                "line {line}: expected {} fields, found {}",
                p + 2,
                rec.len()
            )));
        }
        let subject = parse_index(&rec[0], line, "subject")?;
        let time = parse_index(&rec[1], line, "time")?;
        let vals = (0..p)
            .map(|k| parse_f64(&rec[k + 2], line))
            .collect::<Result<Vec<_>>>()?;
        rows.push((subject, time, vals));
    }
    if rows.is_empty() {
        return Err(Error::Parse("dataset has no rows".into()));
    }
    let t = rows.iter().take_while(|r| r.0 == rows[0].0).count();
    if rows.len() % t != 0 {
        return Err(Error::Parse("subjects have unequal replicate counts".into()));
    }
    let n = rows.len() / t;
    let mut values = Array3::zeros((n, t, p));
    for (k, (subject, time, vals)) in rows.into_iter().enumerate() {
        let (i, s) = (k / t, k % t);
        if subject != i + 1 || time != s + 1 {
            return Err(Error::Parse(format!(
                "line {}: expected subject {} time {}, found subject {subject} time {time}",
                k + 2,
                i + 1,
                s + 1
            )));
        }
        for (j, v) in vals.into_iter().enumerate() {
            values[[i, s, j]] = v;
        }
    }
    ReplicateDataset::new(values, family)
}

pub fn write_dataset<W: Write>(writer: W, d: &ReplicateDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject".to_string(), "time".to_string()];
    header.extend((1..=d.p()).map(|j| format!("v{j}")));
    w.write_record(&header)?;
    for i in 0..d.n() {
        for s in 0..d.t() {
            let mut rec = vec![(i + 1).to_string(), (s + 1).to_string()];
            rec.extend((0..d.p()).map(|j| fmt_num(d.value(i, s, j))));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Dense matrix without a header.
pub fn write_matrix<W: Write>(writer: W, m: &Array2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in m.rows() {
        w.write_record(row.iter().map(|&v| fmt_num(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse(format!("line {}: ragged matrix row", idx + 1)));
        }
        for f in rec.iter() {
            data.push(parse_f64(f, idx + 1)?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
        .map_err(|e| Error::Parse(e.to_string()))
}

/// Edge list `j,k`, 1-based with `j < k`.
pub fn write_edges<W: Write>(writer: W, edges: &[(usize, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["j", "k"])?;
    for &(a, b) in edges {
        w.write_record([(a.min(b) + 1).to_string(), (a.max(b) + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an edge list written by [`write_edges`], returning 0-based pairs.
pub fn read_edges<R: Read>(reader: R) -> Result<Vec<(usize, usize)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("line {line}: expected j,k")));
        }
        let (j, k) = (parse_index(&rec[0], line, "node")?, parse_index(&rec[1], line, "node")?);
        if j == 0 || k == 0 || j == k {
            return Err(Error::Parse(format!("line {line}: invalid edge ({j},{k})")));
        }
        out.push((j.min(k) - 1, j.max(k) - 1));
    }
    Ok(out)
}

/// Latent values `subject,time,u1..uq`.
pub fn write_latent<W: Write>(writer: W, u: &Array3<f64>) -> Result<()> {
    let (n, t, q) = u.dim();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject".to_string(), "time".to_string()];
    header.extend((1..=q).map(|m| format!("u{m}")));
    w.write_record(&header)?;
    for i in 0..n {
        for s in 0..t {
            let mut rec = vec![(i + 1).to_string(), (s + 1).to_string()];
            rec.extend((0..q).map(|m| fmt_num(u[[i, s, m]])));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Coefficients `node,block,v1..vp`: a `theta` row (zero at the node itself)
/// and an `alpha` row per node.
pub fn write_coefficients<W: Write>(writer: W, fits: &[NodeFit]) -> Result<()> {
    let p = fits.first().map(|f| f.alpha.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["node".to_string(), "block".to_string()];
    header.extend((1..=p).map(|k| format!("v{k}")));
    w.write_record(&header)?;
    for fit in fits {
        let node = (fit.j + 1).to_string();
        for (block, vals) in [("theta", fit.theta_full()), ("alpha", fit.alpha.clone())] {
            let mut rec = vec![node.clone(), block.to_string()];
            rec.extend(vals.iter().map(|&v| fmt_num(v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Latent effects in long form `subject,time,node,delta`.
pub fn write_deltas<W: Write>(writer: W, fits: &[NodeFit], t: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject", "time", "node", "delta"])?;
    let n = fits.first().map(|f| f.delta.len() / t.max(1)).unwrap_or(0);
    for i in 0..n {
        for s in 0..t {
            for fit in fits {
                w.write_record([
                    (i + 1).to_string(),
                    (s + 1).to_string(),
                    (fit.j + 1).to_string(),
                    fmt_num(fit.delta[i * t + s]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// ROC rows `lambda,beta,gamma,edges,tpr,fpr`; undefined rates as `NA`.
pub fn write_roc<W: Write>(writer: W, rows: &[RocRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lambda", "beta", "gamma", "edges", "tpr", "fpr"])?;
    for r in rows {
        w.write_record([
            fmt_num(r.lambda),
            fmt_num(r.beta),
            fmt_num(r.gamma),
            r.edges.to_string(),
            fmt_opt(r.tpr),
            fmt_opt(r.fpr),
        ])?;
    }
    w.flush()?;
    Ok(())
}
