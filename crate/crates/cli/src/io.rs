//! Artifact emission: CSV with a reproducibility header, and the binary
//! surface dump (layout documented in docs/formats.md). All files are written
//! atomically (temp file in the target directory, then rename).

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

/// 17 significant digits, '.' decimal separator.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub fn new(config_hash: u64, seed: u64) -> Self {
        CsvWriter {
            buf: format!("# config_hash={config_hash:016x} seed={seed}\n"),
        }
    }

    pub fn header(&mut self, cols: &[&str]) {
        self.buf.push_str(&cols.join(","));
        self.buf.push('\n');
    }

    pub fn row(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| fmt(v)).collect();
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn row_mixed(&mut self, cells: &[String]) {
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        atomic_write(path, self.buf.as_bytes())
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("artifact")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Surface dump with explicit node coordinates so transformed (non-uniform)
/// grids round-trip. Little-endian throughout; see docs/formats.md.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDump {
    pub coords: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// values[level][node], row-major over the coordinate axes
    pub values: Vec<Vec<f64>>,
}

const MAGIC: &[u8; 4] = b"PSLB";
const VERSION: u32 = 1;

impl SurfaceDump {
    pub fn total_nodes(&self) -> usize {
        self.coords.iter().map(|c| c.len()).product()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.coords.len() as u32).to_le_bytes());
        for axis in &self.coords {
            out.extend_from_slice(&(axis.len() as u32).to_le_bytes());
        }
        for axis in &self.coords {
            for &c in axis {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.times.len() as u32).to_le_bytes());
        for &t in &self.times {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for layer in &self.values {
            for &v in layer {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> io::Result<Self> {
        fn bad(msg: &str) -> io::Error {
            io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
        }
        fn read_u32(cur: &mut &[u8]) -> io::Result<u32> {
            if cur.len() < 4 {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated"));
            }
            let (h, t) = cur.split_at(4);
            *cur = t;
            Ok(u32::from_le_bytes(h.try_into().unwrap()))
        }
        fn read_f64s(cur: &mut &[u8], n: usize) -> io::Result<Vec<f64>> {
            if cur.len() < 8 * n {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated"));
            }
            let (h, t) = cur.split_at(8 * n);
            *cur = t;
            Ok(h.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        }
        let mut cur = bytes;
        if cur.len() < 4 || &cur[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        cur = &cur[4..];
        if read_u32(&mut cur)? != VERSION {
            return Err(bad("unsupported version"));
        }
        let dim = read_u32(&mut cur)? as usize;
        if dim == 0 || dim > 8 {
            return Err(bad("bad dimension count"));
        }
        let mut sizes = Vec::with_capacity(dim);
        for _ in 0..dim {
            sizes.push(read_u32(&mut cur)? as usize);
        }
        let mut coords = Vec::with_capacity(dim);
        for &s in &sizes {
            coords.push(read_f64s(&mut cur, s)?);
        }
        let n_times = read_u32(&mut cur)? as usize;
        let times = read_f64s(&mut cur, n_times)?;
        let total: usize = sizes.iter().product();
        let mut values = Vec::with_capacity(n_times);
        for _ in 0..n_times {
            values.push(read_f64s(&mut cur, total)?);
        }
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(SurfaceDump {
            coords,
            times,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        SurfaceDump::from_bytes(&bytes)
    }

    /// CSV emission: node coordinates plus one value column per stored time.
    pub fn to_csv(&self, config_hash: u64, seed: u64) -> CsvWriter {
        let mut w = CsvWriter::new(config_hash, seed);
        let dim = self.coords.len();
        let mut cols: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
        for t in &self.times {
            cols.push(format!("t={}", fmt(*t)));
        }
        w.row_mixed(&cols);
        let sizes: Vec<usize> = self.coords.iter().map(|c| c.len()).collect();
        let total = self.total_nodes();
        for flat in 0..total {
            let mut rem = flat;
            let mut cells = Vec::with_capacity(dim + self.times.len());
            let mut multi = vec![0usize; dim];
            for d in (0..dim).rev() {
                multi[d] = rem % sizes[d];
                rem /= sizes[d];
            }
            for d in 0..dim {
                cells.push(fmt(self.coords[d][multi[d]]));
            }
            for layer in &self.values {
                cells.push(fmt(layer[flat]));
            }
            w.row_mixed(&cells);
        }
        w
    }
}

/// Converts a core surface (uniform grid) to a dump.
pub fn dump_from_surface(surface: &passlab::pde::ValueSurface) -> SurfaceDump {
    let grid = &surface.grid;
    let coords = (0..grid.dim())
        .map(|d| (0..grid.nodes[d]).map(|i| grid.coord(d, i)).collect())
        .collect();
    SurfaceDump {
        coords,
        times: surface.times.clone(),
        values: surface.values.clone(),
    }
}
