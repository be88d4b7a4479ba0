//! On-disk formats for simulation output.
//!
//! Trajectory ensembles and density fields each have a little-endian binary
//! format (magic `ROPDFTRJ` / `ROPDFDEN`, format version 1) for exact
//! round-tripping, plus a long-format CSV export for plotting.

use crate::case::LineId;
use crate::grid::{Grid1D, Grid2D};
use crate::sim::TrajectoryRecord;
use crate::solver::{DensityField1, DensityField2};
use ndarray::Array2;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes; not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("file ends mid-record")]
    Truncated,
    #[error("corrupt record: {0}")]
    Corrupt(String),
}

const TRAJECTORY_MAGIC: &[u8; 8] = b"ROPDFTRJ";
const DENSITY_MAGIC: &[u8; 8] = b"ROPDFDEN";
const FORMAT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<(), RecordError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<(), RecordError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, vs: impl IntoIterator<Item = f64>) -> Result<(), RecordError> {
    for v in vs {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), RecordError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            RecordError::Truncated
        } else {
            RecordError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, RecordError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, RecordError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, RecordError> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn check_magic(r: &mut impl Read, magic: &'static [u8; 8]) -> Result<(), RecordError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    if &b != magic {
        return Err(RecordError::BadMagic {
            expected: std::str::from_utf8(magic).unwrap(),
        });
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(RecordError::BadVersion(version));
    }
    Ok(())
}

/// Writes a trajectory ensemble in the `ROPDFTRJ` binary format.
pub fn write_trajectory(path: &Path, rec: &TrajectoryRecord) -> Result<(), RecordError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRAJECTORY_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    let m = rec.u.first().map_or(0, |a| a.nrows());
    write_u32(&mut w, rec.lines.len() as u32)?;
    write_u32(&mut w, rec.times.len() as u32)?;
    write_u32(&mut w, m as u32)?;
    write_u32(&mut w, rec.diverged as u32)?;
    for l in &rec.lines {
        write_u32(&mut w, l.i() as u32)?;
        write_u32(&mut w, l.j() as u32)?;
    }
    write_f64s(&mut w, rec.times.iter().copied())?;
    for table in rec.u.iter().chain(&rec.mu) {
        write_f64s(&mut w, table.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `ROPDFTRJ` file back into a [`TrajectoryRecord`].
pub fn read_trajectory(path: &Path) -> Result<TrajectoryRecord, RecordError> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, TRAJECTORY_MAGIC)?;
    let n_lines = read_u32(&mut r)? as usize;
    let n_times = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;
    let diverged = read_u32(&mut r)? as usize;
    let mut lines = Vec::with_capacity(n_lines);
    for _ in 0..n_lines {
        let i = read_u32(&mut r)? as usize;
        let j = read_u32(&mut r)? as usize;
        lines.push(LineId::new(i, j));
    }
    let times = read_f64s(&mut r, n_times)?;
    let read_tables = |r: &mut BufReader<File>| -> Result<Vec<Array2<f64>>, RecordError> {
        (0..n_lines)
            .map(|_| {
                let data = read_f64s(r, m * n_times)?;
                Array2::from_shape_vec((m, n_times), data)
                    .map_err(|e| RecordError::Corrupt(e.to_string()))
            })
            .collect()
    };
    let u = read_tables(&mut r)?;
    let mu = read_tables(&mut r)?;
    Ok(TrajectoryRecord {
        times,
        lines,
        u,
        mu,
        diverged,
    })
}

/// Long-format CSV export of a trajectory ensemble:
/// one row per `(time, line, sample)` with the energy and its drift.
pub fn export_trajectory_csv(path: &Path, rec: &TrajectoryRecord) -> Result<(), RecordError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,line,sample,u,mu")?;
    for (li, line) in rec.lines.iter().enumerate() {
        for (ti, &t) in rec.times.iter().enumerate() {
            for s in 0..rec.u[li].nrows() {
                writeln!(w, "{t},{line},{s},{},{}", rec.u[li][(s, ti)], rec.mu[li][(s, ti)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_grid(w: &mut impl Write, g: &Grid1D) -> Result<(), RecordError> {
    write_f64(w, g.lo())?;
    write_f64(w, g.hi())?;
    write_u32(w, g.n() as u32)?;
    Ok(())
}

fn read_grid(r: &mut impl Read) -> Result<Grid1D, RecordError> {
    let lo = read_f64(r)?;
    let hi = read_f64(r)?;
    let n = read_u32(r)? as usize;
    Grid1D::new(lo, hi, n).map_err(|e| RecordError::Corrupt(e.to_string()))
}

/// Writes a 1D density field in the `ROPDFDEN` binary format.
pub fn write_density_1d(path: &Path, field: &DensityField1) -> Result<(), RecordError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DENSITY_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, 1)?;
    write_grid(&mut w, &field.grid)?;
    write_u32(&mut w, field.times.len() as u32)?;
    write_f64(&mut w, field.mass_lost)?;
    write_f64s(&mut w, field.times.iter().copied())?;
    for frame in &field.frames {
        write_f64s(&mut w, frame.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a 2D density field in the `ROPDFDEN` binary format.
pub fn write_density_2d(path: &Path, field: &DensityField2) -> Result<(), RecordError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DENSITY_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, 2)?;
    write_grid(&mut w, &field.grid.x)?;
    write_grid(&mut w, &field.grid.y)?;
    write_u32(&mut w, field.times.len() as u32)?;
    write_f64(&mut w, field.mass_lost)?;
    write_f64s(&mut w, field.times.iter().copied())?;
    for frame in &field.frames {
        write_f64s(&mut w, frame.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

/// Density file payload: the stored dimensionality decides the variant.
#[derive(Debug, Clone)]
pub enum DensityFile {
    One(DensityField1),
    Two(DensityField2),
}

/// Reads a `ROPDFDEN` file of either dimensionality.
pub fn read_density(path: &Path) -> Result<DensityFile, RecordError> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, DENSITY_MAGIC)?;
    let dim = read_u32(&mut r)?;
    match dim {
        1 => {
            let grid = read_grid(&mut r)?;
            let n_times = read_u32(&mut r)? as usize;
            let mass_lost = read_f64(&mut r)?;
            let times = read_f64s(&mut r, n_times)?;
            let frames = (0..n_times)
                .map(|_| read_f64s(&mut r, grid.n()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DensityFile::One(DensityField1 {
                grid,
                times,
                frames,
                mass_lost,
            }))
        }
        2 => {
            let gx = read_grid(&mut r)?;
            let gy = read_grid(&mut r)?;
            let n_times = read_u32(&mut r)? as usize;
            let mass_lost = read_f64(&mut r)?;
            let times = read_f64s(&mut r, n_times)?;
            let (nx, ny) = (gx.n(), gy.n());
            let frames = (0..n_times)
                .map(|_| {
                    let data = read_f64s(&mut r, nx * ny)?;
                    Array2::from_shape_vec((nx, ny), data)
                        .map_err(|e| RecordError::Corrupt(e.to_string()))
                })
                .collect::<Result<Vec<_>, RecordError>>()?;
            Ok(DensityFile::Two(DensityField2 {
                grid: Grid2D::new(gx, gy),
                times,
                frames,
                mass_lost,
            }))
        }
        d => Err(RecordError::Corrupt(format!("unsupported dimension {d}"))),
    }
}

/// CSV export of a 1D density field, one row per `(time, cell)`.
pub fn export_density_1d_csv(path: &Path, field: &DensityField1) -> Result<(), RecordError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,U,f")?;
    for (k, &t) in field.times.iter().enumerate() {
        for (i, f) in field.frames[k].iter().enumerate() {
            writeln!(w, "{t},{},{f}", field.grid.center(i))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV export of a 2D density field, one row per `(time, cell)`.
pub fn export_density_2d_csv(path: &Path, field: &DensityField2) -> Result<(), RecordError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,U1,U2,f")?;
    for (k, &t) in field.times.iter().enumerate() {
        for i in 0..field.grid.x.n() {
            for j in 0..field.grid.y.n() {
                writeln!(
                    w,
                    "{t},{},{},{}",
                    field.grid.x.center(i),
                    field.grid.y.center(j),
                    field.frames[k][(i, j)]
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample_record() -> TrajectoryRecord {
        TrajectoryRecord {
            times: vec![0.0, 0.5, 1.0],
            lines: vec![LineId::new(1, 2), LineId::new(2, 3)],
            u: vec![
                array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]],
                array![[1.1, 1.2, 1.3], [1.4, 1.5, 1.6]],
            ],
            mu: vec![
                array![[-0.1, -0.2, -0.3], [-0.4, -0.5, -0.6]],
                array![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
            ],
            diverged: 3,
        }
    }

    #[test]
    fn trajectory_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.bin");
        let rec = sample_record();
        write_trajectory(&path, &rec).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.times, rec.times);
        assert_eq!(back.lines, rec.lines);
        assert_eq!(back.u, rec.u);
        assert_eq!(back.mu, rec.mu);
        assert_eq!(back.diverged, rec.diverged);
    }

    #[test]
    fn density_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("d1.bin");
        let f1 = DensityField1 {
            grid: Grid1D::new(0.0, 2.0, 4).unwrap(),
            times: vec![0.0, 1.0],
            frames: vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.4, 0.3, 0.2, 0.1]],
            mass_lost: 0.05,
        };
        write_density_1d(&p1, &f1).unwrap();
        match read_density(&p1).unwrap() {
            DensityFile::One(b) => {
                assert_eq!(b.grid, f1.grid);
                assert_eq!(b.times, f1.times);
                assert_eq!(b.frames, f1.frames);
                assert_eq!(b.mass_lost, f1.mass_lost);
            }
            _ => panic!("wrong dimension"),
        }

        let p2 = dir.path().join("d2.bin");
        let f2 = DensityField2 {
            grid: Grid2D::new(
                Grid1D::new(0.0, 1.0, 2).unwrap(),
                Grid1D::new(-1.0, 1.0, 3).unwrap(),
            ),
            times: vec![0.0],
            frames: vec![array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]],
            mass_lost: 0.0,
        };
        write_density_2d(&p2, &f2).unwrap();
        match read_density(&p2).unwrap() {
            DensityFile::Two(b) => {
                assert_eq!(b.grid, f2.grid);
                assert_eq!(b.frames, f2.frames);
            }
            _ => panic!("wrong dimension"),
        }
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::File::create(&path)
            .unwrap()
            .write_all(b"NOTAFILExxxxyyyy")
            .unwrap();
        assert!(matches!(
            read_trajectory(&path),
            Err(RecordError::BadMagic { .. })
        ));

        let path = dir.path().join("trunc.bin");
        let rec = sample_record();
        write_trajectory(&path, &rec).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_trajectory(&path), Err(RecordError::Truncated)));
    }

    #[test]
    fn csv_exports_have_expected_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        export_trajectory_csv(&path, &sample_record()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,line,sample,u,mu"));
        assert_eq!(lines.next(), Some("0,1-2,0,0.1,-0.1"));
        assert_eq!(text.lines().count(), 1 + 2 * 3 * 2);

        let path = dir.path().join("dens.csv");
        let f1 = DensityField1 {
            grid: Grid1D::new(0.0, 1.0, 2).unwrap(),
            times: vec![0.0],
            frames: vec![vec![1.5, 2.5]],
            mass_lost: 0.0,
        };
        export_density_1d_csv(&path, &f1).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t,U,f\n0,0.25,1.5\n0,0.75,2.5\n");
    }
}
