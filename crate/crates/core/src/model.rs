//! Trained model files.
//!
//! Layout: `CMFM`, version u32, m u64, n u64, f u32, then X and Θ as
//! row-major f32, all little-endian. Readers require the exact length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{read_exact, read_f32s, read_u32, read_u64, write_f32s};
use crate::error::{Error, Result};
use crate::factors::FactorMatrix;

pub const MODEL_MAGIC: &[u8; 4] = b"CMFM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub x: FactorMatrix,
    pub theta: FactorMatrix,
}

impl Model {
    pub fn new(x: FactorMatrix, theta: FactorMatrix) -> Result<Self> {
        if x.f() != theta.f() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} factors but Θ has {}",
                x.f(),
                theta.f()
            )));
        }
        Ok(Model { x, theta })
    }

    pub fn m(&self) -> usize {
        self.x.rows()
    }

    pub fn n(&self) -> usize {
        self.theta.rows()
    }

    pub fn f(&self) -> usize {
        self.x.f()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let f = u32::try_from(self.f()).map_err(|_| Error::InvalidArgument("factor count exceeds u32".into()))?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.m() as u64).to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&f.to_le_bytes())?;
        write_f32s(&mut w, self.x.as_slice())?;
        write_f32s(&mut w, self.theta.as_slice())?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a CMFM model file".into()));
        }
        let version = read_u32(&mut r, "version")?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let m = read_u64(&mut r, "m")? as usize;
        let n = read_u64(&mut r, "n")? as usize;
        let f = read_u32(&mut r, "f")? as usize;
        let len = |rows: usize| {
            rows.checked_mul(f)
                .ok_or_else(|| Error::Format("model dimensions overflow".into()))
        };
        let x = read_f32s(&mut r, len(m)?, "X")?;
        let theta = read_f32s(&mut r, len(n)?, "Θ")?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after Θ".into()));
        }
        let x = FactorMatrix::from_vec(m, f, x).map_err(|e| Error::Format(format!("X: {e}")))?;
        let theta = FactorMatrix::from_vec(n, f, theta).map_err(|e| Error::Format(format!("Θ: {e}")))?;
        Ok(Model { x, theta })
    }
}

pub fn save_model(path: &Path, x: &FactorMatrix, theta: &FactorMatrix) -> Result<()> {
    if x.f() != theta.f() {
        return Err(Error::DimensionMismatch("X and Θ widths differ".into()));
    }
    let file = File::create(path)?;
    Model { x: x.clone(), theta: theta.clone() }.write(BufWriter::new(file))
}

pub fn load_model(path: &Path) -> Result<Model> {
    Model::read(BufReader::new(File::open(path)?))
}
