//! On-disk formats.
//!
//! `FKM1` dataset, little-endian, 32-byte header then the row-major payload:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `FKM1`                   |
//! | 4      | 4    | version, u32 = 1               |
//! | 8      | 1    | dtype: 0 = f32, 1 = f64        |
//! | 9      | 3    | reserved, zero                 |
//! | 12     | 4    | batch B, u32                   |
//! | 16     | 8    | points N, u64                  |
//! | 24     | 8    | dims d, u64                    |
//!
//! `FKA1` assignments: magic `FKA1`, u32 version = 1, u64 reserved, u64 B,
//! u64 N, then `B * N` u32 cluster ids.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::element::{Element, Precision};
use crate::error::{KMeansError, Result};
use crate::matrix::{Assignments, DataMatrix};

pub const DATASET_MAGIC: [u8; 4] = *b"FKM1";
pub const ASSIGNMENTS_MAGIC: [u8; 4] = *b"FKA1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub precision: Precision,
    pub batch: usize,
    pub points: usize,
    pub dims: usize,
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn to_usize(v: u64, field: &'static str) -> Result<usize> {
    usize::try_from(v).map_err(|_| KMeansError::format(field, format!("{v} does not fit in memory")))
}

impl DatasetHeader {
    pub fn payload_bytes(&self) -> u64 {
        (self.batch as u64) * (self.points as u64) * (self.dims as u64) * self.precision.elem_bytes() as u64
    }

    pub fn file_bytes(&self) -> u64 {
        HEADER_BYTES + self.payload_bytes()
    }

    pub fn encode(&self) -> Result<[u8; 32]> {
        let batch = u32::try_from(self.batch)
            .map_err(|_| KMeansError::invalid(format!("batch {} exceeds u32", self.batch)))?;
        let mut h = [0u8; 32];
        h[0..4].copy_from_slice(&DATASET_MAGIC);
        h[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        h[8] = match self.precision {
            Precision::Single => 0,
            Precision::Double => 1,
        };
        h[12..16].copy_from_slice(&batch.to_le_bytes());
        h[16..24].copy_from_slice(&(self.points as u64).to_le_bytes());
        h[24..32].copy_from_slice(&(self.dims as u64).to_le_bytes());
        Ok(h)
    }

    pub fn decode(h: &[u8]) -> Result<Self> {
        if h.len() < HEADER_BYTES as usize {
            return Err(KMeansError::format(
                "header",
                format!("need {HEADER_BYTES} bytes, got {}", h.len()),
            ));
        }
        if h[0..4] != DATASET_MAGIC {
            return Err(KMeansError::format("magic", format!("expected FKM1, got {:?}", &h[0..4])));
        }
        let version = u32_at(h, 4);
        if version != FORMAT_VERSION {
            return Err(KMeansError::format("version", format!("unsupported version {version}")));
        }
        let precision = match h[8] {
            0 => Precision::Single,
            1 => Precision::Double,
            other => return Err(KMeansError::format("dtype", format!("unknown dtype {other}"))),
        };
        if h[9..12] != [0, 0, 0] {
            return Err(KMeansError::format("reserved", "reserved bytes must be zero"));
        }
        let header = Self {
            precision,
            batch: u32_at(h, 12) as usize,
            points: to_usize(u64_at(h, 16), "points")?,
            dims: to_usize(u64_at(h, 24), "dims")?,
        };
        for (field, v) in [("batch", header.batch), ("points", header.points), ("dims", header.dims)] {
            if v == 0 {
                return Err(KMeansError::format(field, "must be positive"));
            }
        }
        Ok(header)
    }
}

/// Temporary file next to `path`, readable like a normally created file.
pub(crate) fn sibling_temp(path: &Path) -> Result<NamedTempFile> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    builder.tempfile_in(dir).map_err(|e| KMeansError::io(path, e))
}

/// Writes `path` through a temporary sibling file renamed into place.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> std::io::Result<()>,
{
    let mut tmp = sibling_temp(path)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| KMeansError::io(path, e))?;
        w.flush().map_err(|e| KMeansError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| KMeansError::io(path, e.error))?;
    Ok(())
}

pub fn write_dataset<T: Element>(path: &Path, x: &DataMatrix<T>) -> Result<()> {
    let header = DatasetHeader {
        precision: T::PRECISION,
        batch: x.batch(),
        points: x.points(),
        dims: x.dims(),
    }
    .encode()?;
    write_atomic(path, |w| {
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(1 << 16);
        for chunk in x.as_slice().chunks(8192) {
            buf.clear();
            for &v in chunk {
                v.write_le(&mut buf);
            }
            w.write_all(&buf)?;
        }
        Ok(())
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| KMeansError::io(path, e))
}

/// Reads and checks the header, including that the file length matches it.
pub fn read_header(path: &Path) -> Result<DatasetHeader> {
    let mut f = open(path)?;
    header_of(&mut f, path)
}

fn header_of(f: &mut File, path: &Path) -> Result<DatasetHeader> {
    let mut h = [0u8; 32];
    read_prefix(f, &mut h, path)?;
    let header = DatasetHeader::decode(&h)?;
    let len = f.metadata().map_err(|e| KMeansError::io(path, e))?.len();
    if len < header.file_bytes() {
        return Err(KMeansError::format(
            "payload",
            format!("expected {} bytes, file has {len}", header.file_bytes()),
        ));
    }
    if len > header.file_bytes() {
        return Err(KMeansError::format(
            "payload",
            format!("{} trailing bytes after payload", len - header.file_bytes()),
        ));
    }
    Ok(header)
}

fn read_prefix(f: &mut File, buf: &mut [u8], path: &Path) -> Result<()> {
    let mut got = 0;
    while got < buf.len() {
        match f.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(KMeansError::format(
                    "header",
                    format!("file is {got} bytes, shorter than the {}-byte header", buf.len()),
                ))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(KMeansError::io(path, e)),
        }
    }
    Ok(())
}

fn check_precision<T: Element>(header: &DatasetHeader) -> Result<()> {
    if header.precision != T::PRECISION {
        return Err(KMeansError::format(
            "dtype",
            format!("file holds {} data, {} requested", header.precision, T::PRECISION),
        ));
    }
    Ok(())
}

fn decode_values<T: Element>(bytes: &[u8], out: &mut [T]) {
    for (v, b) in out.iter_mut().zip(bytes.chunks_exact(T::BYTES)) {
        *v = T::read_le(b);
    }
}

pub fn read_dataset<T: Element>(path: &Path) -> Result<DataMatrix<T>> {
    let mut src = DatasetFile::<T>::open(path)?;
    let h = src.header;
    let mut data = vec![T::zero(); h.batch * h.points * h.dims];
    for b in 0..h.batch {
        let block = &mut data[b * h.points * h.dims..(b + 1) * h.points * h.dims];
        src.read_rows(b, 0, h.points, block)?;
    }
    DataMatrix::new(h.batch, h.points, h.dims, data)
        .map_err(|e| KMeansError::format("payload", e.to_string()))
}

/// A dataset of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyDataMatrix {
    Single(DataMatrix<f32>),
    Double(DataMatrix<f64>),
}

pub fn read_any_dataset(path: &Path) -> Result<AnyDataMatrix> {
    match read_header(path)?.precision {
        Precision::Single => read_dataset(path).map(AnyDataMatrix::Single),
        Precision::Double => read_dataset(path).map(AnyDataMatrix::Double),
    }
}

/// Random-access row reader over an `FKM1` file.
#[derive(Debug)]
pub struct DatasetFile<T> {
    file: BufReader<File>,
    path: PathBuf,
    header: DatasetHeader,
    scratch: Vec<u8>,
    _elem: std::marker::PhantomData<T>,
}

impl<T: Element> DatasetFile<T> {
    pub fn open(path: &Path) -> Result<Self> {
        let mut f = open(path)?;
        let header = header_of(&mut f, path)?;
        check_precision::<T>(&header)?;
        Ok(Self {
            file: BufReader::with_capacity(1 << 16, f),
            path: path.to_path_buf(),
            header,
            scratch: Vec::new(),
            _elem: std::marker::PhantomData,
        })
    }

    pub fn header(&self) -> DatasetHeader {
        self.header
    }

    /// Reads rows `start..start + rows` of batch element `b` into `dst`.
    pub fn read_rows(&mut self, b: usize, start: usize, rows: usize, dst: &mut [T]) -> Result<()> {
        let h = self.header;
        if b >= h.batch || start + rows > h.points || dst.len() < rows * h.dims {
            return Err(KMeansError::contract(format!(
                "row range {start}..{} of batch {b} outside {}x{}",
                start + rows,
                h.batch,
                h.points
            )));
        }
        let offset = HEADER_BYTES + (((b * h.points + start) * h.dims * T::BYTES) as u64);
        let len = rows * h.dims * T::BYTES;
        self.scratch.resize(len, 0);
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| KMeansError::io(&self.path, e))?;
        self.file.read_exact(&mut self.scratch).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                KMeansError::format("payload", format!("short read at byte {offset}"))
            } else {
                KMeansError::io(&self.path, e)
            }
        })?;
        decode_values(&self.scratch, &mut dst[..rows * h.dims]);
        for v in &dst[..rows * h.dims] {
            if !v.is_finite() {
                return Err(KMeansError::format("payload", "non-finite value"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentsHeader {
    pub batch: usize,
    pub points: usize,
}

impl AssignmentsHeader {
    pub fn encode(&self) -> [u8; 32] {
        let mut h = [0u8; 32];
        h[0..4].copy_from_slice(&ASSIGNMENTS_MAGIC);
        h[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        h[16..24].copy_from_slice(&(self.batch as u64).to_le_bytes());
        h[24..32].copy_from_slice(&(self.points as u64).to_le_bytes());
        h
    }

    pub fn decode(h: &[u8]) -> Result<Self> {
        if h.len() < 32 {
            return Err(KMeansError::format("header", "assignments header is 32 bytes"));
        }
        if h[0..4] != ASSIGNMENTS_MAGIC {
            return Err(KMeansError::format("magic", format!("expected FKA1, got {:?}", &h[0..4])));
        }
        let version = u32_at(h, 4);
        if version != FORMAT_VERSION {
            return Err(KMeansError::format("version", format!("unsupported version {version}")));
        }
        if u64_at(h, 8) != 0 {
            return Err(KMeansError::format("reserved", "reserved bytes must be zero"));
        }
        Ok(Self {
            batch: to_usize(u64_at(h, 16), "batch")?,
            points: to_usize(u64_at(h, 24), "points")?,
        })
    }

    pub fn file_bytes(&self) -> u64 {
        HEADER_BYTES + 4 * (self.batch as u64) * (self.points as u64)
    }
}

pub fn write_assignments(path: &Path, a: &Assignments) -> Result<()> {
    let header = AssignmentsHeader {
        batch: a.batch(),
        points: a.points(),
    }
    .encode();
    write_atomic(path, |w| {
        w.write_all(&header)?;
        for chunk in a.as_slice().chunks(16384) {
            let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    })
}

/// Reads an `FKA1` file and checks every id against `clusters`.
pub fn read_assignments(path: &Path, clusters: usize) -> Result<Assignments> {
    let mut f = open(path)?;
    let mut h = [0u8; 32];
    read_prefix(&mut f, &mut h, path)?;
    let header = AssignmentsHeader::decode(&h)?;
    let len = f.metadata().map_err(|e| KMeansError::io(path, e))?.len();
    if len != header.file_bytes() {
        return Err(KMeansError::format(
            "payload",
            format!("expected {} bytes, file has {len}", header.file_bytes()),
        ));
    }
    let mut bytes = Vec::with_capacity((len - HEADER_BYTES) as usize);
    f.read_to_end(&mut bytes).map_err(|e| KMeansError::io(path, e))?;
    let ids = bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Assignments::new(header.batch, header.points, clusters, ids)
        .map_err(|e| KMeansError::format("payload", e.to_string()))
}
