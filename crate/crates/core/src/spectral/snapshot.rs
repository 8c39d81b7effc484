//! Binary snapshot format for spectral fields.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "CNSF"
//! 4       2     format version, u16 little-endian (currently 1)
//! 6       4     n_per_axis, u32 little-endian
//! 10      1     field count F, u8
//! 11      ...   F fields, each n·n·(n/2+1) modes in lattice order
//!               (ix outer, iy, iz inner; iz in 0..=n/2), each mode three
//!               components, each component re then im as f64 little-endian
//! ```
//!
//! Lattice index `ix` maps to the wavenumber `ix` for `ix <= n/2` and to
//! `ix - n` above; likewise `iy`. Modes with `kz < 0` are not stored and
//! equal `conj(û(-k))`.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex;

use crate::scalar::Real;
use crate::spectral::{SpectralError, SpectralField, WaveGrid};

pub const MAGIC: &[u8; 4] = b"CNSF";
pub const VERSION: u16 = 1;

pub fn write_snapshot<T: Real, W: Write>(
    mut w: W,
    fields: &[&SpectralField<T>],
) -> Result<(), SpectralError> {
    let Some(first) = fields.first() else {
        return Err(SpectralError::Snapshot("no fields to write".into()));
    };
    if fields.len() > u8::MAX as usize {
        return Err(SpectralError::Snapshot("too many fields".into()));
    }
    for f in fields {
        first.check_grid(f)?;
    }
    let n = first.grid().n() as u32;
    let mut buf = Vec::with_capacity(11 + fields.len() * first.coeffs().len() * 48);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.push(fields.len() as u8);
    for f in fields {
        for a in f.coeffs() {
            for c in a {
                buf.extend_from_slice(&c.re.to_f64_lossy().to_le_bytes());
                buf.extend_from_slice(&c.im.to_f64_lossy().to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot<T: Real, R: Read>(
    mut r: R,
    grid: &Arc<WaveGrid<T>>,
) -> Result<Vec<SpectralField<T>>, SpectralError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_snapshot(&bytes, grid)
}

pub fn decode_snapshot<T: Real>(
    bytes: &[u8],
    grid: &Arc<WaveGrid<T>>,
) -> Result<Vec<SpectralField<T>>, SpectralError> {
    if bytes.len() < 11 || &bytes[0..4] != MAGIC {
        return Err(SpectralError::Snapshot("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(SpectralError::Snapshot(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if n != grid.n() {
        return Err(SpectralError::Snapshot(format!(
            "snapshot has n = {n}, grid has n = {}",
            grid.n()
        )));
    }
    let count = bytes[10] as usize;
    let per_field = grid.spectral_len() * 3 * 16;
    if bytes.len() != 11 + count * per_field {
        return Err(SpectralError::Snapshot(format!(
            "expected {} bytes, found {}",
            11 + count * per_field,
            bytes.len()
        )));
    }
    let read = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let mut out = Vec::with_capacity(count);
    for f in 0..count {
        let base = 11 + f * per_field;
        let coeffs = (0..grid.spectral_len())
            .map(|m| {
                std::array::from_fn(|c| {
                    let off = base + (m * 3 + c) * 16;
                    Complex::new(T::lit(read(off)), T::lit(read(off + 8)))
                })
            })
            .collect();
        out.push(SpectralField::from_coeffs(grid, coeffs)?);
    }
    Ok(out)
}
