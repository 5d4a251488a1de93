//! Binary little-endian cache of spectral data.
//!
//! Layout: magic, format version, grid hash, a, potential hash, M, then the
//! grid and potential parameters, the payload (eigenvalues, column-major
//! modes, traces, potential samples) and a SHA-256 over everything before it.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::Pair;
use crate::opcore::{FractionalOrder, Grid1D, Potential};
use crate::spectral::SpectralData;

const MAGIC: &[u8; 8] = b"FRSPCACH";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Environment variable overriding the cache root.
pub const CACHE_DIR_ENV: &str = "FRACSPEC_CACHE_DIR";

fn grid_hash(grid: &Grid1D) -> [u8; DIGEST_LEN] {
    let mut h = Sha256::new();
    h.update(grid.left().to_le_bytes());
    h.update(grid.right().to_le_bytes());
    h.update((grid.n() as u64).to_le_bytes());
    h.finalize().into()
}

fn potential_hash(q: &Potential) -> [u8; DIGEST_LEN] {
    let mut h = Sha256::new();
    for v in q.values() {
        h.update(v.to_le_bytes());
    }
    h.update([q.is_admissible() as u8]);
    h.update((q.margin() as u64).to_le_bytes());
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content key of the data an eigendecomposition would produce.
pub fn cache_key(grid: &Grid1D, order: FractionalOrder, q: &Potential, modes: usize) -> String {
    let mut h = Sha256::new();
    h.update(FORMAT_VERSION.to_le_bytes());
    h.update(grid_hash(grid));
    h.update(order.value().to_le_bytes());
    h.update(potential_hash(q));
    h.update((modes as u64).to_le_bytes());
    hex(&h.finalize()[..12])
}

/// Cache directory: `$FRACSPEC_CACHE_DIR` or `<out>/cache`.
pub fn cache_dir(out: &Path) -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join("cache"))
}

pub fn cache_path(dir: &Path, grid: &Grid1D, order: FractionalOrder, q: &Potential, modes: usize) -> PathBuf {
    dir.join(format!("spectrum-{}.bin", cache_key(grid, order, q, modes)))
}

pub fn encode(data: &SpectralData) -> Vec<u8> {
    let grid = data.grid();
    let q = data.potential();
    let m = data.len();
    let mut b = Vec::with_capacity(8 * (m * (grid.n() + 3) + grid.n()) + 256);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    b.extend_from_slice(&grid_hash(grid));
    b.extend_from_slice(&data.order().value().to_le_bytes());
    b.extend_from_slice(&potential_hash(q));
    b.extend_from_slice(&(m as u64).to_le_bytes());
    b.extend_from_slice(&(grid.n() as u64).to_le_bytes());
    b.extend_from_slice(&grid.left().to_le_bytes());
    b.extend_from_slice(&grid.right().to_le_bytes());
    b.push(q.is_admissible() as u8);
    b.extend_from_slice(&(q.margin() as u64).to_le_bytes());
    b.extend_from_slice(&data.free_ground().to_le_bytes());
    let floats = data
        .lambdas()
        .iter()
        .chain(data.modes().as_slice())
        .copied()
        .chain(data.traces().iter().flat_map(|t| [t.left, t.right]))
        .chain(q.values().iter().copied());
    for v in floats {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&b);
    b.extend_from_slice(&digest);
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos + k;
        if end > self.bytes.len() {
            return Err(Error::Cache("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Cache(format!("count {v} out of range")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, k: usize) -> Result<Vec<f64>> {
        let len = k.checked_mul(8).ok_or_else(|| Error::Cache("length overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<SpectralData> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::Cache("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Cache("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Cache("not a spectral cache file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Cache(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let stored_grid_hash: [u8; DIGEST_LEN] = r.take(DIGEST_LEN)?.try_into().unwrap();
    let a = r.f64()?;
    let stored_q_hash: [u8; DIGEST_LEN] = r.take(DIGEST_LEN)?.try_into().unwrap();
    let m = r.u64()?;
    let n = r.u64()?;
    let left = r.f64()?;
    let right = r.f64()?;
    let admissible = r.u8()? != 0;
    let margin = r.u64()?;
    let free_ground = r.f64()?;
    let lambdas = r.f64s(m)?;
    let modes = r.f64s(n.checked_mul(m).ok_or_else(|| Error::Cache("length overflow".into()))?)?;
    let traces = r.f64s(2 * m)?;
    let q = r.f64s(n)?;
    if r.pos != body.len() {
        return Err(Error::Cache("trailing bytes".into()));
    }

    let grid = Grid1D::new(left, right, n).map_err(|e| Error::Cache(e.to_string()))?;
    if grid_hash(&grid) != stored_grid_hash {
        return Err(Error::Cache("grid hash mismatch".into()));
    }
    let potential = Potential::from_stored(q, admissible, margin);
    if potential_hash(&potential) != stored_q_hash {
        return Err(Error::Cache("potential hash mismatch".into()));
    }
    let order = FractionalOrder::new(a)
        .or_else(|_| FractionalOrder::reference(a))
        .map_err(|e| Error::Cache(e.to_string()))?;
    let traces = traces.chunks_exact(2).map(|c| Pair::new(c[0], c[1])).collect();
    SpectralData::from_parts(
        lambdas,
        DMatrix::from_vec(n, m, modes),
        traces,
        grid,
        order,
        potential,
        free_ground,
    )
}

pub fn save_cache(data: &SpectralData, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("bin.tmp");
    std::fs::write(&tmp, encode(data)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_cache(path: &Path) -> Result<SpectralData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a cache file and refuses it unless it matches the requested setup.
pub fn load_matching(path: &Path, grid: &Grid1D, order: FractionalOrder, q: &Potential, modes: usize) -> Result<SpectralData> {
    let data = load_cache(path)?;
    if grid_hash(data.grid()) != grid_hash(grid)
        || data.order().value().to_bits() != order.value().to_bits()
        || potential_hash(data.potential()) != potential_hash(q)
        || data.len() != modes
    {
        return Err(Error::Cache(format!("{} does not match the requested setup", path.display())));
    }
    Ok(data)
}
