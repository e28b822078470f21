//! CSV serialization of trajectory logs.
//!
//! Columns: `iter, u1..up, y1..yn, V, residual, max_violation, mu1..mul`.
//! Floats use 17 significant digits so values survive a round trip exactly.

use std::fs::File;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::harness::trajectory::{TrajectoryLog, TrajectoryRow};

pub fn header(input_dim: usize, output_dim: usize, dual_dim: usize) -> Vec<String> {
    let mut cols = vec!["iter".to_string()];
    cols.extend((1..=input_dim).map(|i| format!("u{i}")));
    cols.extend((1..=output_dim).map(|i| format!("y{i}")));
    cols.extend(["V", "residual", "max_violation"].map(String::from));
    cols.extend((1..=dual_dim).map(|i| format!("mu{i}")));
    cols
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_csv(log: &TrajectoryLog, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header(log.input_dim, log.output_dim, log.dual_dim))?;
    for row in &log.rows {
        let mut rec = vec![row.iter.to_string()];
        rec.extend(row.u.iter().map(|&x| fmt_float(x)));
        rec.extend(row.y.iter().map(|&x| fmt_float(x)));
        rec.extend([row.v, row.residual, row.max_violation].map(fmt_float));
        rec.extend(row.mu.iter().map(|&x| fmt_float(x)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Read rows back; dimensions are inferred from the header.
pub fn read_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let head = r.headers()?.clone();
    let count = |prefix: &str| {
        head.iter()
            .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| rest.parse::<usize>().is_ok()))
            .count()
    };
    let (p, n, l) = (count("u"), count("y"), count("mu"));
    let expected = header(p, n, l);
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Config(format!("{}: unexpected CSV header", path.display())));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Config(format!("{}: bad number {s:?}", path.display())))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<&str> = rec.iter().collect();
        let iter = vals[0]
            .parse()
            .map_err(|_| Error::Config(format!("{}: bad iteration {:?}", path.display(), vals[0])))?;
        let floats: Vec<f64> = vals[1..].iter().map(|s| parse(s)).collect::<Result<_>>()?;
        rows.push(TrajectoryRow {
            iter,
            u: DVector::from_column_slice(&floats[0..p]),
            y: DVector::from_column_slice(&floats[p..p + n]),
            v: floats[p + n],
            residual: floats[p + n + 1],
            max_violation: floats[p + n + 2],
            mu: DVector::from_column_slice(&floats[p + n + 3..]),
        });
    }
    Ok(rows)
}
