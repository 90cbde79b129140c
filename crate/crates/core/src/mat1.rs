//! The `MAT1` on-disk matrix container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "MAT1"
//! version u32      1
//! rows    u32
//! cols    u32
//! dtype   u8       0 = f32, 1 = u8 (binary rolls)
//! payload rows * cols * size_of(dtype), row-major
//! ```
//!
//! The reader rejects any payload whose length differs from
//! `rows * cols * dtype_size`.

use ndarray::Array2;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"MAT1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum Mat1Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"MAT1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("unknown dtype tag {0}")]
    BadDtype(u8),
    #[error("payload length {actual} does not match {rows}x{cols} dtype size {dtype_size}")]
    PayloadLength {
        rows: u32,
        cols: u32,
        dtype_size: usize,
        actual: usize,
    },
}

/// A decoded matrix, in whichever dtype the file carried.
#[derive(Debug, Clone, PartialEq)]
pub enum Mat1Data {
    F32(Array2<f32>),
    U8(Array2<u8>),
}

impl Mat1Data {
    pub fn rows(&self) -> usize {
        match self {
            Mat1Data::F32(m) => m.nrows(),
            Mat1Data::U8(m) => m.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Mat1Data::F32(m) => m.ncols(),
            Mat1Data::U8(m) => m.ncols(),
        }
    }

    /// Widens either dtype to an f64 matrix.
    pub fn to_f64(&self) -> Array2<f64> {
        match self {
            Mat1Data::F32(m) => m.mapv(f64::from),
            Mat1Data::U8(m) => m.mapv(f64::from),
        }
    }
}

pub fn write_f32<W: Write>(w: &mut W, matrix: &Array2<f64>) -> io::Result<()> {
    write_header(w, matrix.nrows(), matrix.ncols(), 0)?;
    for &v in matrix.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_u8<W: Write>(w: &mut W, matrix: &Array2<u8>) -> io::Result<()> {
    write_header(w, matrix.nrows(), matrix.ncols(), 1)?;
    for &v in matrix.iter() {
        w.write_all(&[v])?;
    }
    Ok(())
}

fn write_header<W: Write>(w: &mut W, rows: usize, cols: usize, dtype: u8) -> io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    w.write_all(&[dtype])?;
    Ok(())
}

pub fn read<R: Read>(r: &mut R) -> Result<Mat1Data, Mat1Error> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Mat1Error::BadMagic(magic));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Mat1Error::BadVersion(version));
    }
    let rows = read_u32(r)?;
    let cols = read_u32(r)?;
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    let dtype_size = match dtype[0] {
        0 => 4,
        1 => 1,
        other => return Err(Mat1Error::BadDtype(other)),
    };
    let expected = rows as usize * cols as usize * dtype_size;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Mat1Error::PayloadLength {
            rows,
            cols,
            dtype_size,
            actual: payload.len(),
        });
    }
    let shape = (rows as usize, cols as usize);
    match dtype[0] {
        0 => {
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok(Mat1Data::F32(
                Array2::from_shape_vec(shape, values).expect("length checked"),
            ))
        }
        1 => Ok(Mat1Data::U8(
            Array2::from_shape_vec(shape, payload).expect("length checked"),
        )),
        _ => unreachable!(),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, Mat1Error> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Mat1Data, Mat1Error> {
    let mut f = io::BufReader::new(File::open(path)?);
    read(&mut f)
}

pub fn write_f32_file<P: AsRef<Path>>(path: P, matrix: &Array2<f64>) -> io::Result<()> {
    let mut f = io::BufWriter::new(File::create(path)?);
    write_f32(&mut f, matrix)
}

pub fn write_u8_file<P: AsRef<Path>>(path: P, matrix: &Array2<u8>) -> io::Result<()> {
    let mut f = io::BufWriter::new(File::create(path)?);
    write_u8(&mut f, matrix)
}
