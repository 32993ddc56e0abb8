//! Synthetic ground truth: Gaussian blob spatial maps, smooth time courses,
//! and a linear mixture with white noise at a fixed signal-to-noise ratio.
//!
//! Grids are 2-D and flattened row-major (`index = y * nx + x`).

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::data::{DataError, SampleMatrix, VolumeGeometry};

/// Deviation, in samples, of the kernel that smooths white noise into time courses.
pub const TIMECOURSE_SMOOTHING: f64 = 5.0;

/// Default class-1 effect magnitude for [`generate_labeled`], in blob-peak units.
pub const DEFAULT_EFFECT: f64 = 1.0;

/// Signal-to-noise ratio of [`SynthSpec::labeled`].
pub const LABELED_SNR: f64 = 1.0;

/// Default number of samples per class for [`generate_labeled`].
pub const DEFAULT_PER_CLASS: usize = 100;

/// Relative deviation of the per-sample blob amplitudes in [`generate_labeled`].
pub const NUISANCE_SD: f64 = 0.3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("center {index} at ({x}, {y}) lies outside the {nx}x{ny} grid")]
    CenterOutsideGrid {
        index: usize,
        x: f64,
        y: f64,
        nx: usize,
        ny: usize,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// `(nx, ny)` voxel grid.
    pub grid: (usize, usize),
    /// Source centers `(x, y)` in voxel coordinates, one per source.
    pub centers: Vec<(f64, f64)>,
    /// Gaussian radius (standard deviation, in voxels) of each source.
    pub widths: Vec<f64>,
    /// Centers are pulled toward the grid center by a factor `1 / (1 + overlap)`.
    pub overlap: f64,
    pub timepoints: usize,
    /// Ratio of signal power to noise power.
    pub snr: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Eight sources on a 4x2 lattice over a 32x32 grid, 200 timepoints, snr 10.
    fn default() -> Self {
        Self {
            grid: (32, 32),
            centers: lattice_centers((32, 32), 4, 2),
            widths: vec![1.5, 2.0, 1.7, 1.9, 1.6, 2.0, 1.8, 1.5],
            overlap: 0.0,
            timepoints: 200,
            snr: 10.0,
            seed: 0,
        }
    }
}

/// `cols x rows` centers at the middles of an even partition of the grid.
pub fn lattice_centers(grid: (usize, usize), cols: usize, rows: usize) -> Vec<(f64, f64)> {
    let (nx, ny) = (grid.0 as f64, grid.1 as f64);
    let mut out = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let x = (c as f64 + 0.5) * nx / cols as f64;
            let y = (r as f64 + 0.5) * ny / rows as f64;
            out.push((x, y));
        }
    }
    out
}

impl SynthSpec {
    /// The default layout at [`LABELED_SNR`], used for two-class volumes.
    pub fn labeled() -> Self {
        Self {
            snr: LABELED_SNR,
            ..Self::default()
        }
    }

    /// `sources` blobs of equal width on the most square lattice that fits.
    pub fn lattice(grid: (usize, usize), sources: usize, width: f64) -> Self {
        let cols = (sources as f64).sqrt().ceil().max(1.0) as usize;
        let rows = sources.div_ceil(cols);
        let mut centers = lattice_centers(grid, cols, rows);
        centers.truncate(sources);
        Self {
            grid,
            centers,
            widths: vec![width; sources],
            ..Self::default()
        }
    }

    pub fn sources(&self) -> usize {
        self.centers.len()
    }

    pub fn voxels(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let (nx, ny) = self.grid;
        if nx == 0 || ny == 0 {
            return bad(format!("empty grid {nx}x{ny}"));
        }
        if self.centers.is_empty() {
            return bad("need at least one source".into());
        }
        if self.widths.len() != self.centers.len() {
            return bad(format!(
                "{} widths for {} centers",
                self.widths.len(),
                self.centers.len()
            ));
        }
        if self.widths.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return bad("widths must be positive".into());
        }
        if !(self.overlap >= 0.0 && self.overlap.is_finite()) {
            return bad("overlap must be >= 0".into());
        }
        if self.timepoints < 2 {
            return bad("need at least 2 timepoints".into());
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return bad("snr must be > 0".into());
        }
        for (index, &(x, y)) in self.centers.iter().enumerate() {
            let inside =
                (0.0..=(nx - 1) as f64).contains(&x) && (0.0..=(ny - 1) as f64).contains(&y);
            if !inside {
                return Err(SynthError::CenterOutsideGrid {
                    index,
                    x,
                    y,
                    nx,
                    ny,
                });
            }
        }
        Ok(())
    }

    /// Centers after applying the overlap contraction.
    pub fn effective_centers(&self) -> Vec<(f64, f64)> {
        let gx = (self.grid.0 as f64 - 1.0) / 2.0;
        let gy = (self.grid.1 as f64 - 1.0) / 2.0;
        let f = 1.0 / (1.0 + self.overlap);
        self.centers
            .iter()
            .map(|&(x, y)| (gx + (x - gx) * f, gy + (y - gy) * f))
            .collect()
    }

    /// Structured-text echo of every field, one `key value` line each.
    pub fn echo(&self) -> String {
        let list = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
        format!(
            "grid {} {}\nsources {}\ncenters {}\nwidths {}\noverlap {}\ntimepoints {}\nsnr {}\nseed {}\n",
            self.grid.0,
            self.grid.1,
            self.sources(),
            list(&mut self.centers.iter().map(|(x, y)| format!("{x},{y}"))),
            list(&mut self.widths.iter().map(|w| w.to_string())),
            self.overlap,
            self.timepoints,
            self.snr,
            self.seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct SynthGroundTruth {
    /// `R x V` spatial maps, each nonnegative with maximum exactly 1.
    pub spatial_maps: SampleMatrix,
    /// `T x R` time courses, each column zero-mean with unit variance.
    pub time_courses: SampleMatrix,
    /// `T x V` observed data.
    pub data: SampleMatrix,
    pub spec: SynthSpec,
}

impl SynthGroundTruth {
    /// `TC * SM` without noise.
    pub fn signal(&self) -> Array2<f64> {
        self.time_courses.values().dot(self.spatial_maps.values())
    }
}

fn blob_maps(spec: &SynthSpec) -> Array2<f64> {
    let (nx, ny) = spec.grid;
    let centers = spec.effective_centers();
    let mut maps = Array2::zeros((centers.len(), nx * ny));
    for (r, (&(cx, cy), &w)) in centers.iter().zip(&spec.widths).enumerate() {
        let mut row = maps.row_mut(r);
        for y in 0..ny {
            for x in 0..nx {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                row[y * nx + x] = (-d2 / (2.0 * w * w)).exp();
            }
        }
        let max = row.iter().copied().fold(0.0, f64::max);
        row.mapv_inplace(|v| v / max);
    }
    maps
}

fn gaussian_kernel(sd: f64) -> Array1<f64> {
    let half = (4.0 * sd).ceil() as isize;
    let k =
        Array1::from_iter((-half..=half).map(|t| (-(t as f64).powi(2) / (2.0 * sd * sd)).exp()));
    let total = k.sum();
    k / total
}

/// White noise smoothed by a Gaussian kernel, then standardized to zero
/// mean and unit population variance per column.
fn smooth_time_courses(timepoints: usize, sources: usize, rng: &mut impl Rng) -> Array2<f64> {
    let kernel = gaussian_kernel(TIMECOURSE_SMOOTHING);
    let pad = kernel.len() - 1;
    let mut tc = Array2::zeros((timepoints, sources));
    for mut col in tc.columns_mut() {
        let noise: Vec<f64> = (0..timepoints + pad)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        for (t, out) in col.iter_mut().enumerate() {
            *out = kernel.iter().zip(&noise[t..]).map(|(k, n)| k * n).sum();
        }
        let n = timepoints as f64;
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        col.mapv_inplace(|v| v / sd);
    }
    tc
}

fn power(values: &Array2<f64>) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64
}

fn grid_geometry(spec: &SynthSpec) -> Result<VolumeGeometry, DataError> {
    VolumeGeometry::full((spec.grid.0, spec.grid.1, 1))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthGroundTruth, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let maps = blob_maps(spec);
    let tc = smooth_time_courses(spec.timepoints, spec.sources(), &mut rng);
    let signal = tc.dot(&maps);
    let noise =
        Array2::from_shape_simple_fn(signal.raw_dim(), || rng.sample::<f64, _>(StandardNormal));
    let scale = (power(&signal) / (spec.snr * power(&noise))).sqrt();
    let data = signal + noise * scale;

    let geometry = grid_geometry(spec)?;
    Ok(SynthGroundTruth {
        spatial_maps: SampleMatrix::new(maps)?.with_geometry(geometry.clone())?,
        time_courses: SampleMatrix::new(tc)?,
        data: SampleMatrix::new(data)?.with_geometry(geometry)?,
        spec: spec.clone(),
    })
}

/// One dataset per overlap level; level `i` uses seed `base.seed + i`.
pub fn overlap_sweep(
    base: &SynthSpec,
    levels: &[f64],
) -> Result<Vec<SynthGroundTruth>, SynthError> {
    if levels.is_empty() {
        return Err(SynthError::InvalidSpec(
            "overlap sweep needs at least one level".into(),
        ));
    }
    levels
        .iter()
        .enumerate()
        .map(|(i, &overlap)| {
            generate(&SynthSpec {
                overlap,
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            })
        })
        .collect()
}

/// Number of sources carrying the class effect: the first quarter, at least one.
pub fn effect_sources(sources: usize) -> usize {
    (sources / 4).max(1)
}

/// Two-class volumes built from the blob maps of `spec`.
///
/// Every sample is `sum_r (1 + NUISANCE_SD z_r) SM_r + noise` with white
/// noise of deviation `1 / sqrt(snr)`. Class-1 samples additionally carry
/// `effect * sum_{r in D} SM_r` over the first [`effect_sources`] maps.
/// Rows are ordered class 0 first.
pub fn generate_labeled(
    spec: &SynthSpec,
    n_per_class: usize,
    effect: f64,
) -> Result<(SampleMatrix, Vec<usize>), SynthError> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(SynthError::InvalidSpec("n_per_class must be >= 1".into()));
    }
    if !effect.is_finite() {
        return Err(SynthError::InvalidSpec("effect must be finite".into()));
    }
    let maps = blob_maps(spec);
    let pattern = maps
        .slice(s![..effect_sources(spec.sources()), ..])
        .sum_axis(Axis(0));
    let noise_sd = 1.0 / spec.snr.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = 2 * n_per_class;
    let mut values = Array2::zeros((n, spec.voxels()));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        let label = usize::from(i >= n_per_class);
        for map in maps.rows() {
            let amp = 1.0 + NUISANCE_SD * rng.sample::<f64, _>(StandardNormal);
            row.scaled_add(amp, &map);
        }
        if label == 1 {
            row.scaled_add(effect, &pattern);
        }
        for v in row.iter_mut() {
            *v += noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        labels.push(label);
    }
    let m = SampleMatrix::new(values)?.with_geometry(grid_geometry(spec)?)?;
    Ok((m, labels))
}
