//! CSV and JSON artifacts. Numbers are written with 17 significant digits so
//! that files round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::analysis::RateRow;
use crate::density::{ContaminatedSample, CurveEstimate, ModelTag, PointFlag};
use crate::error::{DeconvError, Result};
use crate::error_models::ReplicatedSample;
use crate::min_contrast::PceEstimate;

/// Exponent form with 17 significant digits, which parses back to the same
/// `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn finite(v: f64, what: &str) -> Result<String> {
    if v.is_finite() {
        Ok(fmt_num(v))
    } else {
        Err(DeconvError::NonFinite(format!("{what} is {v}")))
    }
}

fn flag_name(f: PointFlag) -> &'static str {
    match f {
        PointFlag::Ok => "ok",
        PointFlag::EmptyNeighborhood => "empty_neighborhood",
        PointFlag::SingularLocalFit => "singular_local_fit",
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?)))
}

/// Columns `x,value`, plus `flag` when the curve carries per-point flags.
pub fn write_curve_csv(path: &Path, est: &CurveEstimate) -> Result<()> {
    let mut w = writer(path)?;
    match est.flags() {
        Some(flags) => {
            w.write_record(["x", "value", "flag"])?;
            for ((&x, &v), &f) in est.grid().iter().zip(est.values()).zip(flags) {
                w.write_record([finite(x, "x")?, finite(v, "value")?, flag_name(f).to_string()])?;
            }
        }
        None => {
            w.write_record(["x", "value"])?;
            for (&x, &v) in est.grid().iter().zip(est.values()) {
                w.write_record([finite(x, "x")?, finite(v, "value")?])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| DeconvError::Io(e.to_string()))?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Curve CSV plus a `.json` sidecar holding its metadata.
pub fn write_curve(path: &Path, est: &CurveEstimate) -> Result<()> {
    write_curve_csv(path, est)?;
    write_json(&path.with_extension("json"), &est.meta)
}

pub fn read_curve_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        xs.push(parse_field(rec.get(0), "x")?);
        vs.push(parse_field(rec.get(1), "value")?);
    }
    Ok((xs, vs))
}

fn parse_field(field: Option<&str>, name: &str) -> Result<f64> {
    let s = field.ok_or_else(|| DeconvError::Parse(format!("missing column {name}")))?;
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| DeconvError::Parse(format!("bad number {s:?} in column {name}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DeconvError::NonFinite(format!("column {name} holds {s}")))
    }
}

/// Columns `w[,y][,x_true]`.
pub fn write_sample_csv(path: &Path, sample: &ContaminatedSample) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["w"];
    if sample.y().is_some() {
        header.push("y");
    }
    if sample.x_true().is_some() {
        header.push("x_true");
    }
    w.write_record(&header)?;
    for i in 0..sample.len() {
        let mut row = vec![fmt_num(sample.w()[i])];
        if let Some(y) = sample.y() {
            row.push(fmt_num(y[i]));
        }
        if let Some(x) = sample.x_true() {
            row.push(fmt_num(x[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sample with a mandatory `w` column and optional `y`, `x_true`.
pub fn read_sample_csv(path: &Path, model: ModelTag) -> Result<ContaminatedSample> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let iw = col("w").ok_or_else(|| DeconvError::Parse(format!("{}: no w column", path.display())))?;
    let (iy, ix) = (col("y"), col("x_true"));
    let (mut w, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        w.push(parse_field(rec.get(iw), "w")?);
        if let Some(i) = iy {
            y.push(parse_field(rec.get(i), "y")?);
        }
        if let Some(i) = ix {
            x.push(parse_field(rec.get(i), "x_true")?);
        }
    }
    ContaminatedSample::new(w, iy.map(|_| y), ix.map(|_| x), model)
}

/// Columns `w1..wm`.
pub fn write_replicated_csv(path: &Path, data: &ReplicatedSample) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = (1..=data.replicates()).map(|j| format!("w{j}")).collect();
    w.write_record(&header)?;
    for row in data.rows() {
        w.write_record(row.iter().map(|&v| fmt_num(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_replicated_csv(path: &Path) -> Result<ReplicatedSample> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            (0..width)
                .map(|j| parse_field(rec.get(j), "replicate"))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    ReplicatedSample::new(rows)
}

/// Columns `k,a_hat`.
pub fn write_coefficients_csv(path: &Path, est: &PceEstimate) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["k", "a_hat"])?;
    for (k, a) in est.indices().zip(&est.a_hat) {
        w.write_record([k.to_string(), finite(*a, "coefficient")?])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `n,median_ise,q25,q75`.
pub fn write_rates_csv(path: &Path, rows: &[RateRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["n", "median_ise", "q25", "q75"])?;
    for row in rows {
        w.write_record([
            row.n.to_string(),
            finite(row.median_ise, "median_ise")?,
            finite(row.q25, "q25")?,
            finite(row.q75, "q75")?,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column table with the given header.
pub fn write_table_csv(path: &Path, header: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for (&x, &y) in xs.iter().zip(ys) {
        w.write_record([finite(x, header[0])?, finite(y, header[1])?])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::CurveMeta;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789, 0.0] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn curve_round_trip_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let est = CurveEstimate::new(vec![0.0, 0.5], vec![1.0 / 3.0, 2.0], CurveMeta::default())
            .unwrap();
        write_curve(&p, &est).unwrap();
        let (x, v) = read_curve_csv(&p).unwrap();
        assert_eq!(x, est.grid());
        assert_eq!(v, est.values());
        assert!(dir.path().join("c.json").exists());
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x,value\n") && text.ends_with('\n'));

        let flagged = est
            .clone()
            .with_flags(vec![PointFlag::Ok, PointFlag::EmptyNeighborhood])
            .unwrap();
        write_curve_csv(&p, &flagged).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with("empty_neighborhood"));
    }

    #[test]
    fn sample_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = ContaminatedSample::new(
            vec![0.1, 0.2],
            Some(vec![1.0, 2.0]),
            None,
            ModelTag::Classical,
        )
        .unwrap();
        write_sample_csv(&p, &s).unwrap();
        assert_eq!(read_sample_csv(&p, ModelTag::Classical).unwrap(), s);
        std::fs::write(&p, "x\n1\n").unwrap();
        assert!(read_sample_csv(&p, ModelTag::Classical).is_err());
        std::fs::write(&p, "w\nNaN\n").unwrap();
        assert!(read_sample_csv(&p, ModelTag::Classical).is_err());
    }

    #[test]
    fn replicated_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let data = ReplicatedSample::new(vec![vec![0.1, 0.3], vec![-1.0, 2.0]]).unwrap();
        write_replicated_csv(&p, &data).unwrap();
        assert_eq!(read_replicated_csv(&p).unwrap(), data);
        std::fs::write(&p, "w1\n1\n2\n").unwrap();
        assert!(matches!(
            read_replicated_csv(&p),
            Err(DeconvError::InsufficientReplicates(1))
        ));
    }
}
