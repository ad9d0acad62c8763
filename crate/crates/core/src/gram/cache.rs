//! On-disk cache of Gram matrices.
//!
//! File layout, all little-endian:
//!
//! | bytes  | content            |
//! |--------|--------------------|
//! | 0..8   | magic `FOU2GRAM`   |
//! | 8..12  | format version u32 |
//! | 12..16 | n u32              |
//! | 16..24 | T f64              |
//! | 24..32 | alpha f64          |
//! | 32..40 | hurst f64          |
//! | 40..   | n·n f64, row-major |
//!
//! Files are named by a SHA-256 of the parameters, the grid edges and the
//! quadrature settings, so a hit is always for the exact same inputs.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{gram_matrix, GramMatrix, TimeGrid};
use crate::analytic::{ModelParams, QuadratureSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FOU2GRAM";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;

/// Content hash identifying a Gram matrix.
pub fn cache_key(grid: &TimeGrid, p: &ModelParams, q: &QuadratureSpec) -> String {
    let mut h = Sha256::new();
    h.update(VERSION.to_le_bytes());
    h.update(p.alpha().to_le_bytes());
    h.update(p.hurst().to_le_bytes());
    h.update(q.rel_tol.to_le_bytes());
    h.update(q.abs_tol.to_le_bytes());
    h.update((q.max_subdivisions as u64).to_le_bytes());
    h.update(q.truncation_length.to_le_bytes());
    h.update((grid.n() as u64).to_le_bytes());
    for t in grid.edges() {
        h.update(t.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn write_gram<W: Write>(mut w: W, c: &GramMatrix, grid: &TimeGrid, p: &ModelParams) -> Result<()> {
    let n = u32::try_from(c.n()).map_err(|_| Error::Cache(format!("n = {} does not fit in u32", c.n())))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * c.n() * c.n());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&grid.horizon().to_le_bytes());
    buf.extend_from_slice(&p.alpha().to_le_bytes());
    buf.extend_from_slice(&p.hurst().to_le_bytes());
    for v in c.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Read a cached matrix, checking the header against `grid` and `p`.
pub fn read_gram<R: Read>(mut r: R, grid: &TimeGrid, p: &ModelParams) -> Result<GramMatrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let f64_at = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let n = u32_at(12) as usize;
    if n != grid.n() || f64_at(16) != grid.horizon() || f64_at(24) != p.alpha() || f64_at(32) != p.hurst() {
        return Err(Error::Cache("header does not match the requested grid and parameters".into()));
    }
    if bytes.len() != HEADER_LEN + 8 * n * n {
        return Err(Error::Cache(format!(
            "expected {} bytes, found {}",
            HEADER_LEN + 8 * n * n,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if grid.is_uniform() {
        Ok(GramMatrix::from_lags(data[..n].to_vec()))
    } else {
        GramMatrix::from_row_major(n, data)
    }
}

/// Directory-backed Gram cache.
#[derive(Debug, Clone)]
pub struct GramCache {
    dir: PathBuf,
}

impl GramCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, grid: &TimeGrid, p: &ModelParams, q: &QuadratureSpec) -> PathBuf {
        self.dir.join(format!("{}.gram", cache_key(grid, p, q)))
    }

    pub fn load(&self, grid: &TimeGrid, p: &ModelParams, q: &QuadratureSpec) -> Result<Option<GramMatrix>> {
        let path = self.path_for(grid, p, q);
        match fs::File::open(&path) {
            Ok(f) => read_gram(std::io::BufReader::new(f), grid, p).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn store(&self, grid: &TimeGrid, p: &ModelParams, q: &QuadratureSpec, c: &GramMatrix) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(grid, p, q);
        let mut bytes = Vec::new();
        write_gram(&mut bytes, c, grid, p)?;
        write_atomic(&path, &bytes)?;
        Ok(path)
    }

    /// Cached matrix if present, otherwise compute and store it.
    pub fn get_or_compute(&self, grid: &TimeGrid, p: &ModelParams, q: &QuadratureSpec) -> Result<GramMatrix> {
        if let Some(c) = self.load(grid, p, q)? {
            return Ok(c);
        }
        let c = gram_matrix(grid, p, q)?;
        self.store(grid, p, q, &c)?;
        Ok(c)
    }
}

/// Write to a sibling temporary file and rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Cache(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
