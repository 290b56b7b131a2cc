//! On-disk formats: the binary field dump, CSV exports and grid descriptors.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "FCGF"
//! dtype    1 byte   1 = f64 little-endian
//! reserved 3 bytes  zero
//! ndim     u32
//! dims     ndim × u32, slowest first
//! values   prod(dims) × f64, row-major
//! ```
//!
//! A `StateField` is written with dims `[nx, n_m]` in 1D and `[nx, ny, n_m]`
//! in 2D, matching its in-memory layout.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{MassGrid, MassGridDescriptor, NormMode, SpatialGrid, StateField};
use crate::solver::MomentReport;

const MAGIC: &[u8; 4] = b"FCGF";
const DTYPE_F64: u8 = 1;

/// Writes a row-major array in the binary format.
pub fn write_array(path: &Path, dims: &[usize], values: &[f64]) -> Result<()> {
    let count: usize = dims.iter().product();
    if count != values.len() {
        return Err(Error::Format(format!(
            "dims {dims:?} describe {count} values, got {}",
            values.len()
        )));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[DTYPE_F64, 0, 0, 0])?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an array written by `write_array`; returns `(dims, values)`.
pub fn read_array(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a field dump (bad magic)"));
    }
    if bytes[4] != DTYPE_F64 {
        return Err(bad("unsupported dtype tag"));
    }
    let u32_at = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")))
            .ok_or_else(|| bad("truncated header"))
    };
    let ndim = u32_at(8)? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        dims.push(u32_at(12 + 4 * k)? as usize);
    }
    let start = 12 + 4 * ndim;
    let count: usize = dims.iter().product();
    if bytes.len() != start + 8 * count {
        return Err(bad("payload length does not match the header"));
    }
    let values = bytes[start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    Ok((dims, values))
}

fn field_dims(u: &StateField) -> Vec<usize> {
    let g = u.space_grid();
    let mut dims: Vec<usize> = (0..g.dim()).map(|a| g.nodes(a)).collect();
    dims.push(u.n_mass());
    dims
}

pub fn write_field(path: &Path, u: &StateField) -> Result<()> {
    write_array(path, &field_dims(u), u.values())
}

/// Reads a field dump onto the given grids, checking the dimensions.
pub fn read_field(path: &Path, mass: Arc<MassGrid>, space: Arc<SpatialGrid>, mode: NormMode) -> Result<StateField> {
    let (dims, values) = read_array(path)?;
    let probe = StateField::zeros(mass.clone(), space.clone(), mode);
    if dims != field_dims(&probe) {
        return Err(Error::GridMismatch("field dump dimensions do not match the grids"));
    }
    StateField::from_values(mass, space, mode, values)
}

/// CSV with columns `x,m,u` (1D) or `x,y,m,u` (2D).
pub fn field_csv(u: &StateField) -> String {
    let g = u.space_grid();
    let centers = u.mass_grid().centers();
    let mut out = String::from(if g.dim() == 1 { "x,m,u\n" } else { "x,y,m,u\n" });
    for j in 0..u.n_space() {
        let p = g.point(j);
        for (i, &m) in centers.iter().enumerate() {
            let v = u.get(j, i);
            if g.dim() == 1 {
                out.push_str(&format!("{},{},{}\n", p[0], m, v));
            } else {
                out.push_str(&format!("{},{},{},{}\n", p[0], p[1], m, v));
            }
        }
    }
    out
}

/// CSV with columns `t,M0,M1,Mr,norm_r,overflow,leakage`.
pub fn moments_csv(report: &MomentReport) -> String {
    let mut out = String::from("t,M0,M1,Mr,norm_r,overflow,leakage\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.t, r.m0, r.m1, r.mr, r.norm_r, r.overflow, r.leakage
        ));
    }
    out
}

/// JSON descriptor of both grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub mass: MassGridDescriptor,
    pub space: SpatialGrid,
}

impl GridDescriptor {
    pub fn of(u: &StateField) -> Self {
        Self {
            mass: u.mass_grid().descriptor(),
            space: (**u.space_grid()).clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<(Arc<MassGrid>, Arc<SpatialGrid>)> {
        Ok((
            Arc::new(MassGrid::from_descriptor(&self.mass)?),
            Arc::new(self.space.clone()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    fn field_2d() -> StateField {
        let mg = Arc::new(MassGrid::geometric(0.01, 5.0, 7).unwrap());
        let sg = Arc::new(SpatialGrid::new_2d([-1.0, 1.0], [0.0, 2.0], [4, 3], Boundary::WholeSpaceTruncated).unwrap());
        StateField::from_fn(mg, sg, NormMode::Integral, |x, m| x[0] - 2.0 * x[1] + m.ln())
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.bin");
        let u = field_2d();
        write_field(&path, &u).unwrap();
        let (dims, _) = read_array(&path).unwrap();
        assert_eq!(dims, vec![4, 3, 7]);
        let back = read_field(&path, u.mass_grid().clone(), u.space_grid().clone(), NormMode::Integral).unwrap();
        assert_eq!(back.values(), u.values());
    }

    #[test]
    fn corrupt_dumps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.bin");
        write_array(&path, &[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_array(&path), Err(Error::Format(_))));
        fs::write(&path, b"nope").unwrap();
        assert!(read_array(&path).is_err());
        assert!(write_array(&path, &[3], &[1.0]).is_err());
    }

    #[test]
    fn grid_descriptor_round_trip() {
        let u = field_2d();
        let d = GridDescriptor::of(&u);
        let back = GridDescriptor::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
        let (mg, sg) = back.build().unwrap();
        assert_eq!(*mg, **u.mass_grid());
        assert_eq!(*sg, **u.space_grid());
    }

    #[test]
    fn csv_has_one_row_per_value() {
        let u = field_2d();
        let text = field_csv(&u);
        assert!(text.starts_with("x,y,m,u\n"));
        assert_eq!(text.lines().count(), 1 + u.values().len());
    }
}
