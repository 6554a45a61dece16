//! Binary field snapshots.
//!
//! Layout (all little-endian): the 8-byte magic `INVSNAP1`; `n₁`, `n₂`,
//! `n_z`, `ncomp` as `u64`; period and time as `f64`; the `n_z` vertical
//! nodes as `f64`; then the samples as `f64`, component-major, each
//! component in `[k][j₂][j₁]` order. A plain-text sidecar (`.txt`) repeats
//! the header for humans.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Field, Grid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"INVSNAP1";

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub dims: [usize; 3],
    pub ncomp: usize,
    pub period: f64,
    pub time: f64,
    pub z: Vec<f64>,
}

pub fn write_snapshot(path: &Path, grid: &Grid, field: &Field, label: &str) -> Result<()> {
    field.check_grid(grid)?;
    let mut buf = Vec::with_capacity(64 + 8 * (grid.nz() + field.data().len()));
    buf.extend_from_slice(MAGIC);
    for v in [grid.n1(), grid.n2(), grid.nz(), field.ncomp()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&grid.period().to_le_bytes());
    buf.extend_from_slice(&field.time.to_le_bytes());
    for z in grid.z() {
        buf.extend_from_slice(&z.to_le_bytes());
    }
    for v in field.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    let side = format!(
        "label = {label}\nformat = INVSNAP1 little-endian f64\nn1 = {}\nn2 = {}\nnz = {}\nncomp = {}\nperiod = {:e}\ntime = {:e}\nheight = {:e}\nwall_spacing = {:e}\n",
        grid.n1(),
        grid.n2(),
        grid.nz(),
        field.ncomp(),
        grid.period(),
        field.time,
        grid.height(),
        grid.wall_spacing()
    );
    fs::write(path.with_extension("txt"), side)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, Field)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |what: &str| Error::Validation(format!("{}: {what}", path.display()));
    if bytes.len() < 56 || &bytes[..8] != MAGIC {
        return Err(bad("not a snapshot file"));
    }
    let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("8 bytes") };
    let u = |i: usize| u64::from_le_bytes(word(i)) as usize;
    let f = |i: usize| f64::from_le_bytes(word(i));
    let dims = [u(8), u(16), u(24)];
    let ncomp = u(32);
    let (period, time) = (f(40), f(48));
    let npts = dims[0] * dims[1] * dims[2];
    let need = 56 + 8 * (dims[2] + ncomp * npts);
    if bytes.len() != need {
        return Err(bad(&format!("expected {need} bytes, found {}", bytes.len())));
    }
    let z: Vec<f64> = (0..dims[2]).map(|k| f(56 + 8 * k)).collect();
    let off = 56 + 8 * dims[2];
    let data: Vec<f64> = (0..ncomp * npts).map(|i| f(off + 8 * i)).collect();
    let grid = Grid::from_nodes(dims[0], dims[1], period, z.clone())?;
    let comps = data.chunks(npts).map(|c| c.to_vec()).collect();
    let mut field = Field::from_components(&grid, comps)?;
    field.time = time;
    Ok((SnapshotHeader { dims, ncomp, period, time, z }, field))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::graded(4, 8, 2.0, 3.0, 0.05, Some(9)).unwrap();
        let mut f = Field::vector_from_fn(&g, |y| [y[0], y[1] * y[2], 1.0 - y[2]]);
        f.time = 0.375;
        let path = dir.path().join("u.bin");
        write_snapshot(&path, &g, &f, "u").unwrap();
        let (h, back) = read_snapshot(&path).unwrap();
        assert_eq!(h.dims, g.dims());
        assert_eq!(back, f);
        assert!(path.with_extension("txt").exists());
    }
}
