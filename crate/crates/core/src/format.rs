//! `HSDL` binary problem files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "HSDL"  u32 version  u64 N_A  u64 N_L  u64 N_G
//! hpd bitset, ceil(N_A/8) bytes, atom i in bit i%8 of byte i/8
//! A, B                       column-major (re, im) f64 pairs
//! per atom: T_AA, T_AB, T_BB full N_L×N_L, same encoding
//! per atom: U as N_L f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::FormatError;
use crate::matrix::{ComplexMatrix, HermitianView, C64};
use crate::problem::{ProblemDims, ProblemInstance};

pub const MAGIC: &[u8; 4] = b"HSDL";
pub const VERSION: u32 = 1;

/// Size in bytes of a file holding an instance of the given dimensions.
pub fn encoded_len(dims: ProblemDims) -> u64 {
    let na = dims.n_atoms as u64;
    let nl = dims.n_l as u64;
    let header = 4 + 4 + 3 * 8 + na.div_ceil(8);
    header + 16 * (2 * na * nl * dims.n_g as u64 + 3 * na * nl * nl) + 8 * na * nl
}

fn write_matrix<W: Write>(w: &mut W, m: &ComplexMatrix) -> std::io::Result<()> {
    for z in m.data() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_problem<W: Write>(w: &mut W, p: &ProblemInstance) -> Result<(), FormatError> {
    let d = p.dims;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for x in [d.n_atoms, d.n_l, d.n_g] {
        w.write_all(&(x as u64).to_le_bytes())?;
    }
    let mut bits = vec![0u8; d.n_atoms.div_ceil(8)];
    for (i, &h) in p.hpd.iter().enumerate() {
        if h {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&bits)?;
    write_matrix(w, &p.a)?;
    write_matrix(w, &p.b)?;
    for i in 0..d.n_atoms {
        write_matrix(w, p.t_aa[i].matrix())?;
        write_matrix(w, &p.t_ab[i])?;
        write_matrix(w, p.t_bb[i].matrix())?;
    }
    for u in &p.u {
        for x in u {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], FormatError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn truncated(e: std::io::Error) -> FormatError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        FormatError::Malformed("file is truncated".into())
    } else {
        FormatError::Io(e)
    }
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, FormatError> {
    Ok(f64::from_le_bytes(read_exact::<_, 8>(r)?))
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<ComplexMatrix, FormatError> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        data.push(C64::new(re, im));
    }
    Ok(ComplexMatrix::from_col_major(rows, cols, data).expect("length matches"))
}

pub fn read_problem<R: Read>(r: &mut R) -> Result<ProblemInstance, FormatError> {
    let magic = read_exact::<_, 4>(r).map_err(|_| FormatError::BadMagic)?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = u32::from_le_bytes(read_exact::<_, 4>(r)?);
    if version != VERSION {
        return Err(FormatError::Version { found: version, expected: VERSION });
    }
    let mut dim = || -> Result<usize, FormatError> {
        let v = u64::from_le_bytes(read_exact::<_, 8>(r)?);
        usize::try_from(v).map_err(|_| FormatError::Malformed(format!("dimension {v} too large")))
    };
    let (na, nl, ng) = (dim()?, dim()?, dim()?);
    let dims = ProblemDims::new(na, nl, ng)?;
    let mut bits = vec![0u8; na.div_ceil(8)];
    r.read_exact(&mut bits).map_err(truncated)?;
    let hpd = (0..na).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    let rows = dims.stacked_rows();
    let a = read_matrix(r, rows, ng)?;
    let b = read_matrix(r, rows, ng)?;
    let mut t_aa = Vec::with_capacity(na);
    let mut t_ab = Vec::with_capacity(na);
    let mut t_bb = Vec::with_capacity(na);
    for _ in 0..na {
        t_aa.push(HermitianView::new(read_matrix(r, nl, nl)?).expect("square"));
        t_ab.push(read_matrix(r, nl, nl)?);
        t_bb.push(HermitianView::new(read_matrix(r, nl, nl)?).expect("square"));
    }
    let mut u = Vec::with_capacity(na);
    for _ in 0..na {
        u.push((0..nl).map(|_| read_f64(r)).collect::<Result<Vec<_>, _>>()?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(FormatError::Malformed("trailing bytes after problem data".into()));
    }
    let p = ProblemInstance { dims, a, b, t_aa, t_ab, t_bb, u, hpd };
    p.validate()?;
    Ok(p)
}

pub fn save(path: impl AsRef<Path>, p: &ProblemInstance) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_problem(&mut w, p)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ProblemInstance, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    read_problem(&mut r)
}
