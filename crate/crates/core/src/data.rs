//! Sample matrices, the on-disk matrix format, and voxel preprocessing.
//!
//! A [`SampleMatrix`] is a dense `samples x features` matrix (volumes by
//! voxels, or subjects by voxels) with an optional [`VolumeGeometry`] that
//! maps each feature column back to a voxel of the original grid.
//!
//! # File format
//!
//! ```text
//! DEEPMRI-MATRIX 1
//! rows <r>
//! cols <c>
//! dtype f32|f64
//! dims <nx> <ny> <nz>      (only when geometry is attached)
//! mask 0|1
//! end
//! <mask: c little-endian u32 voxel indices, when mask 1>
//! <payload: r*c little-endian floats, row-major>
//! ```
//!
//! The preprocessing order used by the pipelines is
//! [`mask_below_mean`] -> [`remove_mean_image`] -> [`zscore_voxels`].

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

const MAGIC: &str = "DEEPMRI-MATRIX";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("mask removed every column")]
    EmptyMask,
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("malformed labels file: {0}")]
    MalformedLabels(String),
}

/// Voxel grid dimensions plus the linear indices of the retained voxels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VolumeGeometry {
    dims: (usize, usize, usize),
    mask: Vec<usize>,
}

impl VolumeGeometry {
    pub fn new(dims: (usize, usize, usize), mask: Vec<usize>) -> Result<Self, DataError> {
        let total = dims.0 * dims.1 * dims.2;
        if total == 0 {
            return Err(DataError::InvalidGeometry(format!(
                "zero-sized grid {dims:?}"
            )));
        }
        if mask.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::InvalidGeometry(
                "mask indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = mask.last() {
            if last >= total {
                return Err(DataError::InvalidGeometry(format!(
                    "mask index {last} outside grid of {total} voxels"
                )));
            }
        }
        Ok(Self { dims, mask })
    }

    /// Geometry retaining every voxel of the grid.
    pub fn full(dims: (usize, usize, usize)) -> Result<Self, DataError> {
        Self::new(dims, (0..dims.0 * dims.1 * dims.2).collect())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn mask(&self) -> &[usize] {
        &self.mask
    }

    /// Restricts the mask to the given positions within it.
    fn select(&self, keep: &[usize]) -> Self {
        Self {
            dims: self.dims,
            mask: keep.iter().map(|&k| self.mask[k]).collect(),
        }
    }
}

/// Dense matrix of finite values, rows are samples and columns features.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    values: Array2<f64>,
    geometry: Option<VolumeGeometry>,
}

impl SampleMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self, DataError> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(DataError::Empty { rows, cols });
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::NonFinite { row, col });
        }
        Ok(Self {
            values,
            geometry: None,
        })
    }

    pub fn from_shape_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DataError> {
        let found = data.len();
        let values =
            Array2::from_shape_vec((rows, cols), data).map_err(|_| DataError::SizeMismatch {
                expected: rows * cols,
                found,
            })?;
        Self::new(values)
    }

    pub fn with_geometry(mut self, geometry: VolumeGeometry) -> Result<Self, DataError> {
        if geometry.mask.len() != self.cols() {
            return Err(DataError::InvalidGeometry(format!(
                "mask has {} voxels but matrix has {} columns",
                geometry.mask.len(),
                self.cols()
            )));
        }
        self.geometry = Some(geometry);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn geometry(&self) -> Option<&VolumeGeometry> {
        self.geometry.as_ref()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Copies the given rows, in order, into a new matrix. Geometry is kept.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self, DataError> {
        let values = self.values.select(Axis(0), indices);
        let m = Self::new(values)?;
        Ok(Self {
            geometry: self.geometry.clone(),
            ..m
        })
    }

    /// Replaces the values, keeping geometry. Shapes must agree.
    fn replace_values(&self, values: Array2<f64>) -> Result<Self, DataError> {
        debug_assert_eq!(values.dim(), self.values.dim());
        let m = Self::new(values)?;
        Ok(Self {
            geometry: self.geometry.clone(),
            ..m
        })
    }
}

/// Payload element type of a matrix file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Splits `bytes` into the text header lines (up to and including `end`) and
/// the binary remainder.
pub(crate) fn split_header<'a>(
    bytes: &'a [u8],
    magic: &str,
) -> Result<(Vec<&'a str>, &'a [u8]), String> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| "header is not terminated by an `end` line".to_string())?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| "header is not valid UTF-8".to_string())?;
        pos += nl + 1;
        if lines.is_empty() {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(magic) {
                return Err(format!("expected `{magic}` magic line, found `{line}`"));
            }
        }
        if line.trim() == "end" {
            return Ok((lines, &bytes[pos..]));
        }
        lines.push(line);
        if lines.len() > 64 {
            return Err("header too long".into());
        }
    }
}

/// Looks up `key` in header lines of the form `key value...`.
pub(crate) fn header_field<'a>(lines: &[&'a str], key: &str) -> Option<Vec<&'a str>> {
    lines.iter().find_map(|line| {
        let mut parts = line.split_whitespace();
        (parts.next() == Some(key)).then(|| parts.collect())
    })
}

pub(crate) fn parse_usize(lines: &[&str], key: &str) -> Result<usize, String> {
    let field = header_field(lines, key).ok_or_else(|| format!("missing `{key}`"))?;
    match field.as_slice() {
        [v] => v
            .parse()
            .map_err(|_| format!("`{key}` is not a count: {v}")),
        _ => Err(format!("`{key}` expects one value")),
    }
}

pub(crate) fn check_version(lines: &[&str]) -> Result<(), String> {
    let version = lines[0].split_whitespace().nth(1).unwrap_or("");
    if version != VERSION.to_string() {
        return Err(format!("unsupported format version `{version}`"));
    }
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => DataError::NotFound(path.to_path_buf()),
        _ => DataError::Io(e),
    })
}

pub(crate) fn encode_floats(out: &mut Vec<u8>, values: impl Iterator<Item = f64>, dtype: Dtype) {
    for v in values {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

pub(crate) fn decode_floats(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    }
}

/// Reads a matrix file written by [`save_matrix`].
pub fn load_matrix(path: impl AsRef<Path>) -> Result<SampleMatrix, DataError> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (lines, body) = split_header(&bytes, MAGIC).map_err(DataError::MalformedHeader)?;
    check_version(&lines).map_err(DataError::MalformedHeader)?;
    let rows = parse_usize(&lines, "rows").map_err(DataError::MalformedHeader)?;
    let cols = parse_usize(&lines, "cols").map_err(DataError::MalformedHeader)?;
    let dtype = match header_field(&lines, "dtype").as_deref() {
        Some(["f32"]) => Dtype::F32,
        Some(["f64"]) => Dtype::F64,
        other => return Err(DataError::MalformedHeader(format!("bad dtype {other:?}"))),
    };
    let has_mask = match header_field(&lines, "mask").as_deref() {
        Some(["0"]) | None => false,
        Some(["1"]) => true,
        other => {
            return Err(DataError::MalformedHeader(format!(
                "bad mask flag {other:?}"
            )))
        }
    };
    let dims = match header_field(&lines, "dims") {
        None => None,
        Some(d) if d.len() == 3 => {
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| DataError::MalformedHeader(format!("bad dims entry `{s}`")))
            };
            Some((parse(d[0])?, parse(d[1])?, parse(d[2])?))
        }
        Some(_) => {
            return Err(DataError::MalformedHeader(
                "dims expects three values".into(),
            ))
        }
    };
    if has_mask != dims.is_some() {
        return Err(DataError::MalformedHeader(
            "mask flag and dims must appear together".into(),
        ));
    }

    let mask_bytes = if has_mask { cols * 4 } else { 0 };
    let expected = mask_bytes + rows * cols * dtype.width();
    if body.len() != expected {
        return Err(DataError::SizeMismatch {
            expected,
            found: body.len(),
        });
    }
    let (mask_part, payload) = body.split_at(mask_bytes);
    let m = SampleMatrix::from_shape_vec(rows, cols, decode_floats(payload, dtype))?;
    match dims {
        Some(dims) => {
            let mask = mask_part
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
                .collect();
            m.with_geometry(VolumeGeometry::new(dims, mask)?)
        }
        None => Ok(m),
    }
}

/// Writes `m` with a 32-bit float payload.
pub fn save_matrix(m: &SampleMatrix, path: impl AsRef<Path>) -> Result<(), DataError> {
    save_matrix_as(m, path, Dtype::F32)
}

pub fn save_matrix_as(
    m: &SampleMatrix,
    path: impl AsRef<Path>,
    dtype: Dtype,
) -> Result<(), DataError> {
    if dtype == Dtype::F32 {
        if let Some(((row, col), _)) = m
            .values
            .indexed_iter()
            .find(|(_, v)| !(**v as f32).is_finite())
        {
            return Err(DataError::NonFinite { row, col });
        }
    }
    let mut out = Vec::with_capacity(128 + m.rows() * m.cols() * dtype.width());
    let mut header = format!(
        "{MAGIC} {VERSION}\nrows {}\ncols {}\ndtype {}\n",
        m.rows(),
        m.cols(),
        dtype.tag()
    );
    if let Some(g) = &m.geometry {
        header.push_str(&format!(
            "dims {} {} {}\nmask 1\n",
            g.dims.0, g.dims.1, g.dims.2
        ));
    } else {
        header.push_str("mask 0\n");
    }
    header.push_str("end\n");
    out.extend_from_slice(header.as_bytes());
    if let Some(g) = &m.geometry {
        for &idx in &g.mask {
            out.extend_from_slice(&(idx as u32).to_le_bytes());
        }
    }
    encode_floats(&mut out, m.values.iter().copied(), dtype);
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads one non-negative integer class label per line. Blank lines and
/// lines starting with `#` are skipped.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>, DataError> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text =
        String::from_utf8(bytes).map_err(|_| DataError::MalformedLabels("not UTF-8".into()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<usize>()
                .map_err(|_| DataError::MalformedLabels(format!("bad label `{l}`")))
        })
        .collect()
}

pub fn save_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Keeps the columns whose across-sample mean is at least the grand mean.
/// Returns the reduced matrix and the retained column indices.
pub fn mask_below_mean(m: &SampleMatrix) -> Result<(SampleMatrix, Vec<usize>), DataError> {
    let col_means = column_means(m.view());
    let grand = col_means.sum() / col_means.len() as f64;
    let keep: Vec<usize> = col_means
        .iter()
        .enumerate()
        .filter(|(_, &mean)| mean >= grand)
        .map(|(j, _)| j)
        .collect();
    if keep.is_empty() {
        return Err(DataError::EmptyMask);
    }
    let reduced = SampleMatrix::new(m.values.select(Axis(1), &keep))?;
    let reduced = match &m.geometry {
        Some(g) => reduced.with_geometry(g.select(&keep))?,
        None => reduced,
    };
    Ok((reduced, keep))
}

/// Subtracts the per-column mean across samples.
pub fn remove_mean_image(m: &SampleMatrix) -> Result<SampleMatrix, DataError> {
    let means = column_means(m.view());
    let centered = &m.values - &means.insert_axis(Axis(0));
    m.replace_values(centered)
}

/// Scales each column to zero mean and unit population variance. Columns
/// with zero variance become all zeros.
pub fn zscore_voxels(m: &SampleMatrix) -> Result<SampleMatrix, DataError> {
    if m.rows() < 2 {
        return Err(DataError::TooFewRows {
            need: 2,
            got: m.rows(),
        });
    }
    let mut out = m.values.clone();
    for mut col in out.columns_mut() {
        let (mean, sd) = mean_and_population_sd(col.view());
        if sd > 0.0 && sd.is_finite() {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    m.replace_values(out)
}

/// Applies the full preprocessing chain: mask, mean-image removal, z-score.
pub fn preprocess(m: &SampleMatrix) -> Result<(SampleMatrix, Vec<usize>), DataError> {
    let (masked, keep) = mask_below_mean(m)?;
    let centered = remove_mean_image(&masked)?;
    Ok((zscore_voxels(&centered)?, keep))
}

pub(crate) fn column_means(values: ArrayView2<'_, f64>) -> Array1<f64> {
    values
        .mean_axis(Axis(0))
        .expect("matrix has at least one row")
}

pub(crate) fn mean_and_population_sd(col: ArrayView1<'_, f64>) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
