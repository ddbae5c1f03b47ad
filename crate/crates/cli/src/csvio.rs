//! `trajectory.csv` and `esd.csv` readers and writers.
//!
//! Numbers are written with 17 significant digits so that a read-back
//! reproduces the stored `f64` exactly.

use std::path::Path;

use rclab_core::{EsdResult, Trajectory};

use crate::error::{io_err, CliError, Result};

const TRAILING: [&str; 5] = ["mass", "S", "Q", "F", "H"];

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = Vec::with_capacity(2 * n + 6);
    h.push("t".to_string());
    h.extend((1..=n).map(|j| format!("f_{j}")));
    h.extend((1..=n).map(|k| format!("R_{k}")));
    h.extend(TRAILING.iter().map(|s| s.to_string()));
    h
}

fn csv_err(path: &Path, line: u64, e: impl ToString) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let n = traj.states.first().map_or(0, |s| s.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, 0, e))?;
    w.write_record(trajectory_header(n)).map_err(|e| csv_err(path, 1, e))?;
    for (row, ((t, s), d)) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics).enumerate() {
        let mut rec = Vec::with_capacity(2 * n + 6);
        rec.push(fmt_num(*t));
        rec.extend(s.f.iter().map(|x| fmt_num(*x)));
        rec.extend(s.r.iter().map(|x| fmt_num(*x)));
        rec.push(fmt_num(d.mass));
        rec.push(d.s.map(fmt_num).unwrap_or_default());
        rec.push(fmt_num(d.q));
        rec.push(fmt_num(d.f_ext));
        rec.push(fmt_num(d.h));
        w.write_record(&rec).map_err(|e| csv_err(path, row as u64 + 2, e))?;
    }
    w.flush().map_err(io_err(path))
}

/// Columns of a `trajectory.csv`, one entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub n: usize,
    pub t: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    pub s: Vec<Option<f64>>,
    pub q: Vec<f64>,
    pub f_ext: Vec<f64>,
    pub h: Vec<f64>,
}

impl TrajectoryTable {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let d = &traj.diagnostics;
        Self {
            n: traj.states.first().map_or(0, |s| s.len()),
            t: traj.times.clone(),
            f: traj.states.iter().map(|s| s.f.iter().copied().collect()).collect(),
            r: traj.states.iter().map(|s| s.r.iter().copied().collect()).collect(),
            mass: d.iter().map(|x| x.mass).collect(),
            s: d.iter().map(|x| x.s).collect(),
            q: d.iter().map(|x| x.q).collect(),
            f_ext: d.iter().map(|x| x.f_ext).collect(),
            h: d.iter().map(|x| x.h).collect(),
        }
    }
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryTable> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, 0, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, 1, e))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(csv_err(path, 1, "empty file"));
    }
    if header.len() < 6 || (header.len() - 6) % 2 != 0 {
        return Err(csv_err(path, 1, format!("unexpected column count {}", header.len())));
    }
    let n = (header.len() - 6) / 2;
    let expected = trajectory_header(n);
    if let Some((got, want)) = header.iter().zip(&expected).find(|(g, w)| g != w) {
        return Err(csv_err(path, 1, format!("expected column {want:?}, found {got:?}")));
    }

    let mut table = TrajectoryTable {
        n,
        t: Vec::new(),
        f: Vec::new(),
        r: Vec::new(),
        mass: Vec::new(),
        s: Vec::new(),
        q: Vec::new(),
        f_ext: Vec::new(),
        h: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(path, line, e))?;
        let field = |c: usize| -> Result<f64> {
            rec[c]
                .trim()
                .parse::<f64>()
                .map_err(|e| csv_err(path, line, format!("column {:?}: {e}", expected[c])))
        };
        table.t.push(field(0)?);
        table.f.push((1..=n).map(&field).collect::<Result<_>>()?);
        table.r.push((n + 1..=2 * n).map(&field).collect::<Result<_>>()?);
        let base = 2 * n + 1;
        table.mass.push(field(base)?);
        table.s.push(if rec[base + 1].trim().is_empty() {
            None
        } else {
            Some(field(base + 1)?)
        });
        table.q.push(field(base + 2)?);
        table.f_ext.push(field(base + 3)?);
        table.h.push(field(base + 4)?);
    }
    if table.t.is_empty() {
        return Err(csv_err(path, 2, "no data rows"));
    }
    Ok(table)
}

pub fn write_esd(path: &Path, grid: &[f64], esd: &EsdResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, 0, e))?;
    w.write_record(["trait", "f_tilde", "R_tilde"])
        .map_err(|e| csv_err(path, 1, e))?;
    for (j, x) in grid.iter().enumerate() {
        w.write_record([fmt_num(*x), fmt_num(esd.f_tilde[j]), fmt_num(esd.r_tilde[j])])
            .map_err(|e| csv_err(path, j as u64 + 2, e))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 6.02214076e23] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn header_layout() {
        assert_eq!(trajectory_header(2).join(","), "t,f_1,f_2,R_1,R_2,mass,S,Q,F,H");
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_trajectory(&p), Err(CliError::Csv { .. })));
        std::fs::write(&p, trajectory_header(1).join(",") + "\n").unwrap();
        assert!(matches!(read_trajectory(&p), Err(CliError::Csv { line: 2, .. })));
    }

    #[test]
    fn bad_number_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        let text = format!("{}\n0,1,1,2,,0,0,0\n1,x,1,2,,0,0,0\n", trajectory_header(1).join(","));
        std::fs::write(&p, text).unwrap();
        match read_trajectory(&p) {
            Err(CliError::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
