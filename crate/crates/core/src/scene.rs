//! Data model and file I/O for hyperspectral cubes, endmember libraries, and
//! abundance maps.
//!
//! A scene is stored as an `L x N` matrix with one spectrum per column; the
//! 2D grid is flattened row-major so that pixel `(row, col)` maps to column
//! `row * w + col`. Horizontal neighbors are `n - 1` / `n + 1` and vertical
//! neighbors are `n - w` / `n + w`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::Deserialize;

use crate::error::{Result, UnmixError};

/// Tolerance for the sum-to-one check on abundance columns.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// An observed hyperspectral image: `bands x (w*h)` reflectances, one
/// spectrum per column, pixels in row-major flatten order.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCube {
    width: usize,
    height: usize,
    data: Array2<f64>,
}

impl SceneCube {
    pub fn new(width: usize, height: usize, data: Array2<f64>) -> Result<Self> {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| UnmixError::arg("grid size overflows"))?;
        if n == 0 {
            return Err(UnmixError::arg("scene must have at least one pixel"));
        }
        if data.nrows() == 0 {
            return Err(UnmixError::arg("scene must have at least one band"));
        }
        if data.ncols() != n {
            return Err(UnmixError::dims(format!(
                "scene data has {} columns, expected w*h = {}",
                data.ncols(),
                n
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(UnmixError::NonFinite("scene reflectances".into()));
        }
        Ok(SceneCube {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of spectral bands L.
    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    /// Total pixel count N = w*h.
    pub fn num_pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Spectrum of pixel `n` (flatten order).
    pub fn pixel(&self, n: usize) -> Array1<f64> {
        self.data.column(n).to_owned()
    }

    /// Keep every `ceil(L/k)`-th band so that at most `k` bands remain.
    pub fn subsample_bands(&self, k: usize) -> Result<SceneCube> {
        let rows = stride_indices(self.bands(), k)?;
        let data = select_rows(&self.data, &rows);
        SceneCube::new(self.width, self.height, data)
    }
}

/// The `L x R` endmember signature matrix M. Column `i` is the spectrum of
/// endmember `i`; row `l` is the vector of all endmember values at band `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    m: Array2<f64>,
}

impl EndmemberMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(UnmixError::arg("endmember matrix must be non-empty"));
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(UnmixError::NonFinite("endmember matrix".into()));
        }
        Ok(EndmemberMatrix { m })
    }

    pub fn bands(&self) -> usize {
        self.m.nrows()
    }

    /// Endmember count R.
    pub fn count(&self) -> usize {
        self.m.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    /// Row `l` of M: the endmember signatures at band `l`.
    pub fn band_vector(&self, l: usize) -> Array1<f64> {
        self.m.row(l).to_owned()
    }

    pub fn subsample_bands(&self, k: usize) -> Result<EndmemberMatrix> {
        let rows = stride_indices(self.bands(), k)?;
        EndmemberMatrix::new(select_rows(&self.m, &rows))
    }
}

/// The `R x N` fractional abundance matrix A; column `n` is the abundance
/// vector of pixel `n`. Entries are nonnegative; when the sum-to-one
/// constraint is active every column sums to 1 within [`SIMPLEX_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix {
    a: Array2<f64>,
}

impl AbundanceMatrix {
    /// Validate nonnegativity (always) and, when `simplex` is set, the
    /// sum-to-one constraint on every column.
    pub fn new(a: Array2<f64>, simplex: bool) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(UnmixError::arg("abundance matrix must be non-empty"));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(UnmixError::NonFinite("abundance matrix".into()));
        }
        if let Some(v) = a.iter().find(|v| **v < -1e-10) {
            return Err(UnmixError::arg(format!("negative abundance {v}")));
        }
        if simplex {
            for (n, col) in a.columns().into_iter().enumerate() {
                let s: f64 = col.sum();
                if (s - 1.0).abs() > SIMPLEX_TOL {
                    return Err(UnmixError::arg(format!(
                        "column {n} sums to {s}, violating the sum-to-one constraint"
                    )));
                }
            }
        }
        Ok(AbundanceMatrix { a })
    }

    pub fn count(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_pixels(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn column(&self, n: usize) -> Array1<f64> {
        self.a.column(n).to_owned()
    }
}

/// Row-major flatten: pixel `(row, col)` on a `w x h` grid -> sequential index.
pub fn flatten_index(row: usize, col: usize, w: usize, h: usize) -> Result<usize> {
    if row >= h || col >= w {
        return Err(UnmixError::arg(format!(
            "pixel ({row},{col}) outside {w}x{h} grid"
        )));
    }
    Ok(row * w + col)
}

/// Inverse of [`flatten_index`]: sequential index -> `(row, col)`.
pub fn unflatten_index(n: usize, w: usize, h: usize) -> Result<(usize, usize)> {
    if w == 0 || n >= w * h {
        return Err(UnmixError::arg(format!(
            "pixel index {n} outside {w}x{h} grid"
        )));
    }
    Ok((n / w, n % w))
}

#[derive(Deserialize)]
struct HscHeader {
    w: usize,
    h: usize,
    bands: usize,
}

/// Write a cube in the HSC format: a single JSON header line followed by
/// `L*N` little-endian f64 values in band-major order.
pub fn save_cube(cube: &SceneCube, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(
        out,
        "{{\"w\":{},\"h\":{},\"bands\":{}}}",
        cube.width(),
        cube.height(),
        cube.bands()
    )?;
    for row in cube.data.rows() {
        for v in row {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a cube written by [`save_cube`]. The payload byte count must match
/// the header exactly and every value must be finite.
pub fn load_cube(path: impl AsRef<Path>) -> Result<SceneCube> {
    let path = path.as_ref();
    let fmt = |reason: String| UnmixError::Format {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = BufReader::new(File::open(path)?);
    let mut header_line = String::new();
    reader.read_line(&mut header_line)?;
    let header: HscHeader = serde_json::from_str(header_line.trim_end())
        .map_err(|e| fmt(format!("bad header: {e}")))?;
    let n = header
        .w
        .checked_mul(header.h)
        .ok_or_else(|| fmt("grid size overflows".into()))?;
    let expected = header
        .bands
        .checked_mul(n)
        .and_then(|e| e.checked_mul(8))
        .ok_or_else(|| fmt("payload size overflows".into()))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(fmt(format!(
            "payload holds {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = Array2::from_shape_vec((header.bands, n), values)
        .map_err(|e| fmt(format!("bad shape: {e}")))?;
    SceneCube::new(header.w, header.h, data)
        .map_err(|e| fmt(format!("invalid cube payload: {e}")))
}

/// Parse an endmember CSV: L data rows with R comma-separated columns;
/// lines starting with `#` are comments.
pub fn load_endmembers(path: impl AsRef<Path>) -> Result<EndmemberMatrix> {
    let m = load_csv_matrix(path.as_ref())?;
    EndmemberMatrix::new(m)
}

/// Write an endmember matrix as CSV, one band per row.
pub fn save_endmembers(m: &EndmemberMatrix, path: impl AsRef<Path>) -> Result<()> {
    save_csv_matrix(m.matrix(), path)
}

/// Parse an abundance CSV (R rows, N columns, flatten order). `w * h` must
/// equal the column count; `simplex` turns the sum-to-one check on.
pub fn load_abundances(
    path: impl AsRef<Path>,
    w: usize,
    h: usize,
    simplex: bool,
) -> Result<AbundanceMatrix> {
    let path = path.as_ref();
    let a = load_csv_matrix(path)?;
    if a.ncols() != w * h {
        return Err(UnmixError::Format {
            path: path.display().to_string(),
            reason: format!("{} columns, expected w*h = {}", a.ncols(), w * h),
        });
    }
    AbundanceMatrix::new(a, simplex)
}

/// Parse an abundance CSV without grid validation (evaluation tooling).
pub fn load_abundances_any(path: impl AsRef<Path>) -> Result<AbundanceMatrix> {
    AbundanceMatrix::new(load_csv_matrix(path.as_ref())?, false)
}

/// Write an abundance matrix as CSV (R rows, N columns, flatten order).
/// Negative entries are rejected.
pub fn save_abundances(a: &AbundanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    if let Some(v) = a.matrix().iter().find(|v| **v < 0.0) {
        return Err(UnmixError::arg(format!(
            "refusing to export negative abundance {v}"
        )));
    }
    save_csv_matrix(a.matrix(), path)
}

/// Gray level for a PGM abundance export: 1.0 maps to 255, rounding half up.
pub fn pgm_gray(abundance: f64) -> u8 {
    (abundance * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Export one binary P5 grayscale map per endmember. Files are named
/// `<stem>_em<i>.pgm` next to `base`; abundance 1.0 maps to gray 255.
pub fn save_abundance_pgms(
    a: &AbundanceMatrix,
    base: impl AsRef<Path>,
    w: usize,
    h: usize,
) -> Result<Vec<std::path::PathBuf>> {
    if a.num_pixels() != w * h {
        return Err(UnmixError::dims(format!(
            "{} pixels, expected w*h = {}",
            a.num_pixels(),
            w * h
        )));
    }
    if let Some(v) = a.matrix().iter().find(|v| **v < 0.0) {
        return Err(UnmixError::arg(format!(
            "refusing to export negative abundance {v}"
        )));
    }
    let base = base.as_ref();
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("abundance");
    let dir = base.parent().unwrap_or_else(|| Path::new("."));
    let mut paths = Vec::with_capacity(a.count());
    for (i, row) in a.matrix().rows().into_iter().enumerate() {
        let path = dir.join(format!("{stem}_em{i}.pgm"));
        let mut out = BufWriter::new(File::create(&path)?);
        write!(out, "P5\n{w} {h}\n255\n")?;
        let bytes: Vec<u8> = row.iter().map(|&v| pgm_gray(v)).collect();
        out.write_all(&bytes)?;
        out.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

fn load_csv_matrix(path: &Path) -> Result<Array2<f64>> {
    let fmt = |reason: String| UnmixError::Format {
        path: path.display().to_string(),
        reason,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| fmt(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(fmt(format!(
                    "line {}: {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(fmt("no data rows".into()));
    }
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let nrows = flat.len() / ncols;
    let m = Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| fmt(format!("bad shape: {e}")))?;
    if !m.iter().all(|v| v.is_finite()) {
        return Err(fmt("non-finite entry".into()));
    }
    Ok(m)
}

fn save_csv_matrix(m: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn stride_indices(total: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(UnmixError::arg("band count must be positive"));
    }
    if k >= total {
        return Ok((0..total).collect());
    }
    Ok((0..k).map(|i| i * total / k).collect())
}

fn select_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&m.row(r));
    }
    out
}
