//! On-disk dataset layout: one directory per regime holding a JSON manifest
//! and one binary trajectory file per sample.
//!
//! Trajectory file layout (all integers little-endian):
//!   magic   8 bytes  "OPLTRAJ1"
//!   version u32      1
//!   frames  u32      number of stored frames (T+1, including the IC)
//!   h, w, c u32 x3   grid dimensions and channels
//!   lx, ly  f64 x2   domain lengths
//!   data    f64 x (frames*h*w*c), row-major [t][y][x][channel]

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::grid::GridField;

const MAGIC: &[u8; 8] = b"OPLTRAJ1";
const VERSION: u32 = 1;

pub fn write_trajectory(path: &Path, frames: &[GridField]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidParam("empty trajectory".into()))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    let (lx, ly) = first.lengths();
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(frames.len() as u32).to_le_bytes())?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    out.write_all(&(c as u32).to_le_bytes())?;
    out.write_all(&lx.to_le_bytes())?;
    out.write_all(&ly.to_le_bytes())?;
    for f in frames {
        if (f.height(), f.width(), f.channels()) != (h, w, c) {
            return Err(Error::ShapeMismatch {
                context: "trajectory frames".into(),
                expected: format!("{h}x{w}x{c}"),
                got: format!("{}x{}x{}", f.height(), f.width(), f.channels()),
            });
        }
        for v in f.values().iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<GridField>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad trajectory magic in {}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported trajectory version {version}"
        )));
    }
    let frames = read_u32(&mut r)? as usize;
    let h = read_u32(&mut r)? as usize;
    let w = read_u32(&mut r)? as usize;
    let c = read_u32(&mut r)? as usize;
    let lx = read_f64(&mut r)?;
    let ly = read_f64(&mut r)?;
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut data = Array3::zeros((h, w, c));
        for v in data.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        out.push(GridField::new(data, lx, ly)?);
    }
    // A trailing byte means the header lied about the length.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format(format!(
            "trailing bytes in {}",
            path.display()
        )));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::tiny_diffreact_spec;
    use crate::sim::{build_family, sample_initial_condition};

    #[test]
    fn trajectory_round_trips_bitwise() {
        let spec = tiny_diffreact_spec();
        let ic = sample_initial_condition(&spec, 1e-3, 3).unwrap();
        let frames = crate::sim::simulate(&spec, 1e-3, &ic).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.traj");
        write_trajectory(&path, &frames).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(frames.len(), back.len());
        for (a, b) in frames.iter().zip(back.iter()) {
            assert_eq!(a, b);
            assert_eq!(a.lengths(), b.lengths());
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let spec = tiny_diffreact_spec();
        let datasets = build_family(&spec, 1, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.traj");
        write_trajectory(&path, &datasets[0].samples[0].frames).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(read_trajectory(&path).is_err());
    }

    #[test]
    fn manifest_round_trips_losslessly() {
        let spec = tiny_diffreact_spec();
        let mut task = spec.regimes().unwrap()[0].clone();
        task.seeds = vec![1, 2, 3];
        let json = serde_json::to_string(&task).unwrap();
        let back: crate::sim::RegimeTask = serde_json::from_str(&json).unwrap();
        assert_eq!(task, back);
        let spec_json = serde_json::to_string(&spec).unwrap();
        let spec_back: crate::sim::FamilySpec = serde_json::from_str(&spec_json).unwrap();
        assert_eq!(spec, spec_back);
    }
}
