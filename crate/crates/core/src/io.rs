//! Text artifacts: trajectory CSV, Hankel block export, per-step logs.
//!
//! Every float is written with 17 significant digits so files round-trip
//! bit-exactly and identical runs produce identical bytes.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::HankelBlocks;
use crate::closed_loop::RunLog;
use crate::error::{Error, Result};
use crate::plant::Trajectory;

/// Largest accepted table in any parsed CSV, in cells.
const MAX_CELLS: usize = 1 << 26;

/// Shortest decimal that still carries 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return String::new();
    }
    format!("{v:.16e}")
}

fn parse_f64(field: &str, format: &'static str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(format, format!("line {line}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(
            format,
            format!("line {line}: non-finite value"),
        ));
    }
    Ok(v)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory writer cannot fail");
    String::from_utf8(bytes).expect("csv output is ascii")
}

fn csv_err(format: &'static str) -> impl Fn(csv::Error) -> Error {
    move |e| Error::parse(format, e.to_string())
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let (m, p) = (traj.n_inputs(), traj.n_outputs());
    let mut w = csv_writer();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("u", m))
        .chain(numbered("y", p))
        .collect();
    w.write_record(&header).unwrap();
    for t in 0..traj.len() {
        let mut row = vec![t.to_string()];
        row.extend(traj.inputs.column(t).iter().map(|v| fmt_f64(*v)));
        row.extend(traj.outputs.column(t).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).unwrap();
    }
    finish(w)
}

/// Parses a trajectory CSV. The header fixes `m` and `p`; `t` must count
/// up from 0. The seed is not stored in the file and is set to `seed`.
pub fn trajectory_from_csv(text: &str, seed: u64) -> Result<Trajectory> {
    const F: &str = "trajectory csv";
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err(F))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.first() != Some(&"t") {
        return Err(Error::parse(F, "first column must be `t`"));
    }
    let m = names[1..].iter().take_while(|n| n.starts_with('u')).count();
    let p = names.len() - 1 - m;
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("u", m))
        .chain(numbered("y", p))
        .collect();
    if m == 0 || p == 0 || names != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::parse(
            F,
            format!(
                "header must read t,u1..um,y1..yp, got `{}`",
                names.join(",")
            ),
        ));
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut len = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(F))?;
        let line = i + 2;
        if rec.len() != names.len() {
            return Err(Error::parse(
                F,
                format!("line {line}: expected {} fields", names.len()),
            ));
        }
        if rec[0].trim().parse::<usize>().ok() != Some(i) {
            return Err(Error::parse(F, format!("line {line}: t must equal {i}")));
        }
        if (i + 1) * names.len() > MAX_CELLS {
            return Err(Error::parse(F, "trajectory too large"));
        }
        for j in 0..m {
            u.push(parse_f64(&rec[1 + j], F, line)?);
        }
        for j in 0..p {
            y.push(parse_f64(&rec[1 + m + j], F, line)?);
        }
        len += 1;
    }
    if len == 0 {
        return Err(Error::parse(F, "no samples"));
    }
    Trajectory::new(
        DMatrix::from_column_slice(m, len, &u),
        DMatrix::from_column_slice(p, len, &y),
        seed,
    )
}

pub fn matrix_to_csv(mat: &DMatrix<f64>) -> String {
    let mut w = csv_writer();
    for r in 0..mat.nrows() {
        w.write_record(mat.row(r).iter().map(|v| fmt_f64(*v)))
            .unwrap();
    }
    finish(w)
}

/// Headerless numeric CSV; every row must have the same width.
pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    const F: &str = "matrix csv";
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(F))?;
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::parse(
                    F,
                    format!("line {}: expected {c} fields", i + 1),
                ))
            }
            _ => {}
        }
        if data.len() + rec.len() > MAX_CELLS {
            return Err(Error::parse(F, "matrix too large"));
        }
        for f in rec.iter() {
            data.push(parse_f64(f, F, i + 1)?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &data))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HankelSidecar {
    pub t_ini: usize,
    pub t_f: usize,
    pub m: usize,
    pub p: usize,
    /// Hankel columns.
    pub n: usize,
    /// sha256 of the source trajectory CSV.
    pub trajectory_sha256: String,
}

impl HankelSidecar {
    pub fn describe(blocks: &HankelBlocks, trajectory_sha256: String) -> Self {
        Self {
            t_ini: blocks.t_ini,
            t_f: blocks.t_f,
            m: blocks.n_inputs(),
            p: blocks.n_outputs(),
            n: blocks.n_cols(),
            trajectory_sha256,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)
            .map_err(|e| Error::parse("hankel sidecar", e.to_string()))?;
        if s.t_ini == 0 || s.t_f == 0 || s.m == 0 || s.p == 0 || s.n == 0 {
            return Err(Error::parse(
                "hankel sidecar",
                "dimensions must be positive",
            ));
        }
        let cells = [s.t_ini, s.t_f, s.m, s.p, s.n]
            .iter()
            .try_fold(1usize, |acc, v| acc.checked_mul(*v));
        if cells.is_none_or(|c| c > MAX_CELLS) {
            return Err(Error::parse("hankel sidecar", "block dimensions too large"));
        }
        if s.trajectory_sha256.len() != 64
            || !s.trajectory_sha256.bytes().all(|b| b.is_ascii_hexdigit())
        {
            return Err(Error::parse("hankel sidecar", "hash must be 64 hex digits"));
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes") + "\n"
    }
}

pub const BLOCK_FILES: [&str; 4] = ["up.csv", "uf.csv", "yp.csv", "yf.csv"];
pub const BLOCK_SIDECAR: &str = "blocks.json";

/// Writes `up.csv`, `uf.csv`, `yp.csv`, `yf.csv` and `blocks.json` into `dir`.
pub fn export_blocks(dir: &Path, blocks: &HankelBlocks, trajectory_sha256: String) -> Result<()> {
    let mats = [&blocks.up, &blocks.uf, &blocks.yp, &blocks.yf];
    for (name, mat) in BLOCK_FILES.iter().zip(mats) {
        write_file(&dir.join(name), matrix_to_csv(mat))?;
    }
    write_file(
        &dir.join(BLOCK_SIDECAR),
        HankelSidecar::describe(blocks, trajectory_sha256).to_json(),
    )
}

pub fn import_blocks(dir: &Path) -> Result<(HankelBlocks, HankelSidecar)> {
    let side = HankelSidecar::from_json(&read_file(&dir.join(BLOCK_SIDECAR))?)?;
    let mut mats = Vec::with_capacity(4);
    for name in BLOCK_FILES {
        mats.push(matrix_from_csv(&read_file(&dir.join(name))?)?);
    }
    let [up, uf, yp, yf]: [DMatrix<f64>; 4] = mats.try_into().expect("four blocks");
    let blocks = HankelBlocks::from_parts(up, uf, yp, yf, side.t_ini, side.t_f)?;
    if HankelSidecar::describe(&blocks, side.trajectory_sha256.clone()) != side {
        return Err(Error::parse(
            "hankel sidecar",
            "block files disagree with the sidecar",
        ));
    }
    Ok((blocks, side))
}

/// Per-step log; J, M and energy are blank until the window fills and
/// lambda_g is blank on open-loop steps.
pub fn step_log_to_csv(log: &RunLog, a: f64, b: f64, m: usize, p: usize) -> String {
    let mut w = csv_writer();
    let header: Vec<String> = ["k", "lambda_g", "J", "M", "energy", "status", "iterations"]
        .iter()
        .map(|s| s.to_string())
        .chain(numbered("u", m))
        .chain(numbered("y", p))
        .chain(numbered("ref", p))
        .collect();
    w.write_record(&header).unwrap();
    for r in &log.records {
        let (j, mm, e) = match r.metrics {
            Some(x) => (
                fmt_f64(r.objective(a, b).unwrap()),
                fmt_f64(x.rmse),
                fmt_f64(x.energy),
            ),
            None => Default::default(),
        };
        let mut row = vec![r.k.to_string(), fmt_f64(r.lambda_g), j, mm, e];
        row.push(r.status.clone());
        row.push(r.iterations.to_string());
        row.extend(r.u.iter().map(|v| fmt_f64(*v)));
        row.extend(r.y.iter().map(|v| fmt_f64(*v)));
        row.extend(r.reference.iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).unwrap();
    }
    finish(w)
}

/// Generic tidy table writer used by sweeps and comparisons.
pub fn table_to_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv_writer();
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::partition;

    fn traj() -> Trajectory {
        let u = DMatrix::from_fn(1, 30, |_, j| (j as f64 * 0.37).sin() / 3.0);
        let y = DMatrix::from_fn(2, 30, |i, j| 1e-7 * (i + j) as f64 + 0.1);
        Trajectory::new(u, y, 9).unwrap()
    }

    #[test]
    fn trajectory_round_trips_bitwise() {
        let t = traj();
        let text = trajectory_to_csv(&t);
        assert!(text.starts_with("t,u1,y1,y2\n0,"));
        let back = trajectory_from_csv(&text, 9).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn trajectory_parser_rejects_bad_input() {
        for bad in [
            "",
            "t\n0\n",
            "t,y1\n0,1\n",
            "t,u1,y1\n",
            "t,u1,y1\n1,0,0\n",
            "t,u1,y1\n0,0\n",
            "t,u2,y1\n0,0,0\n",
            "t,u1,y1\n0,nan,0\n",
            "t,u1,y1\n0,x,0\n",
            "t,y1,u1\n0,0,0\n",
        ] {
            assert!(trajectory_from_csv(bad, 0).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn blocks_export_round_trip() {
        let t = traj();
        let blocks = partition(&t.inputs, &t.outputs, 2, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hash = sha256_hex(trajectory_to_csv(&t).as_bytes());
        export_blocks(dir.path(), &blocks, hash.clone()).unwrap();
        let (back, side) = import_blocks(dir.path()).unwrap();
        assert_eq!(back, blocks);
        assert_eq!(side.trajectory_sha256, hash);
        assert_eq!((side.m, side.p, side.n), (1, 2, 26));

        let mut wrong = side.clone();
        wrong.n = 25;
        write_file(&dir.path().join(BLOCK_SIDECAR), wrong.to_json()).unwrap();
        assert!(import_blocks(dir.path()).is_err());
    }

    #[test]
    fn sidecar_rejects_unknown_and_bad_fields() {
        let ok = HankelSidecar {
            t_ini: 1,
            t_f: 1,
            m: 1,
            p: 1,
            n: 1,
            trajectory_sha256: "0".repeat(64),
        };
        assert!(HankelSidecar::from_json(&ok.to_json()).is_ok());
        assert!(HankelSidecar::from_json(&ok.to_json().replace("\"n\"", "\"cols\"")).is_err());
        let short = HankelSidecar {
            trajectory_sha256: "ab".into(),
            ..ok.clone()
        };
        assert!(HankelSidecar::from_json(&short.to_json()).is_err());
        let huge = HankelSidecar {
            n: usize::MAX,
            ..ok
        };
        assert!(HankelSidecar::from_json(&huge.to_json()).is_err());
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::NAN), "");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
