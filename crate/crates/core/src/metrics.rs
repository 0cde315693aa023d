//! Image-quality measures and B-scan alignment.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Boolean voxel mask congruent with a volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    dims: Vec<usize>,
    mask: Vec<bool>,
}

impl RegionMask {
    /// `mask` is in column-major voxel order.
    pub fn new(dims: Vec<usize>, mask: Vec<bool>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if dims.is_empty() || len == 0 || mask.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "mask of {} voxels for dims {dims:?}",
                mask.len()
            )));
        }
        Ok(Self { dims, mask })
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> bool) -> Result<Self> {
        let t = DenseTensor::from_fn(dims.clone(), |i| if f(i) { 1.0 } else { 0.0 })?;
        Self::new(dims, t.data().iter().map(|&v| v != 0.0).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    fn values<'a>(&'a self, x: &'a DenseTensor) -> Result<impl Iterator<Item = f64> + 'a> {
        if x.dims() != self.dims.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "mask dims {:?} vs volume dims {:?}",
                self.dims,
                x.dims()
            )));
        }
        if self.count() == 0 {
            return Err(Error::Degenerate("empty region".into()));
        }
        Ok(x.data().iter().zip(&self.mask).filter(|(_, &m)| m).map(|(&v, _)| v))
    }
}

/// `‖x − x̂‖_F / ‖x‖_F`.
pub fn relative_error(x: &DenseTensor, xhat: &DenseTensor) -> Result<f64> {
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("reference has zero norm".into()));
    }
    Ok(x.sub(xhat)?.frobenius_norm() / norm)
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Region mean over region standard deviation (population form).
pub fn cnr(x: &DenseTensor, region: &RegionMask) -> Result<f64> {
    let (mean, std) = mean_std(region.values(x)?);
    if std <= 0.0 {
        return Err(Error::Degenerate("region has zero variance".into()));
    }
    Ok(mean / std)
}

/// `20 log10(max(signal) / std(background))` in dB.
pub fn snr(x: &DenseTensor, signal: &RegionMask, background: &RegionMask) -> Result<f64> {
    let peak = signal.values(x)?.fold(f64::NEG_INFINITY, f64::max);
    let (_, std) = mean_std(background.values(x)?);
    if std <= 0.0 {
        return Err(Error::Degenerate("background has zero variance".into()));
    }
    if peak <= 0.0 {
        return Err(Error::Degenerate("signal peak is not positive".into()));
    }
    Ok(20.0 * (peak / std).log10())
}

/// `L` surfaces sampled on the `(i2, i3)` grid; positions are depth
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    width: usize,
    bscans: usize,
    layers: usize,
    /// `positions[l + layers * (i2 + width * i3)]`, 0-based indices.
    positions: Vec<f64>,
}

impl SurfaceSet {
    pub fn new(width: usize, bscans: usize, layers: usize, positions: Vec<f64>) -> Result<Self> {
        if width == 0 || bscans == 0 || layers == 0 || positions.len() != width * bscans * layers {
            return Err(Error::ShapeMismatch(format!(
                "{} positions for {layers} surfaces on a {width}x{bscans} grid",
                positions.len()
            )));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("surface positions"));
        }
        Ok(Self { width, bscans, layers, positions })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bscans(&self) -> usize {
        self.bscans
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// 0-based `(i2, i3, l)`.
    pub fn position(&self, i2: usize, i3: usize, l: usize) -> f64 {
        self.positions[l + self.layers * (i2 + self.width * i3)]
    }

    /// Total thickness at `(i2, i3)`: distance between the outermost surfaces.
    pub fn thickness(&self, i2: usize, i3: usize) -> f64 {
        let start = self.layers * (i2 + self.width * i3);
        let col = &self.positions[start..start + self.layers];
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    pub fn translated(&self, offset: f64) -> Self {
        Self {
            positions: self.positions.iter().map(|p| p + offset).collect(),
            ..self.clone()
        }
    }
}

/// Mean absolute surface displacement normalized by the manual thickness,
/// averaged over every A-scan of the selected B-scans (1-based) and every
/// surface.
pub fn segmentation_error(auto: &SurfaceSet, manual: &SurfaceSet, bscans: &[usize]) -> Result<f64> {
    if (auto.width, auto.bscans, auto.layers) != (manual.width, manual.bscans, manual.layers) {
        return Err(Error::ShapeMismatch(format!(
            "surface sets differ: {}x{}x{} vs {}x{}x{}",
            auto.width, auto.bscans, auto.layers, manual.width, manual.bscans, manual.layers
        )));
    }
    if bscans.is_empty() {
        return Err(Error::InvalidInput("empty B-scan subset".into()));
    }
    let mut total = 0.0;
    for &s in bscans {
        if s == 0 || s > manual.bscans {
            return Err(Error::InvalidInput(format!("B-scan {s} outside 1..={}", manual.bscans)));
        }
        let i3 = s - 1;
        for i2 in 0..manual.width {
            let t = manual.thickness(i2, i3);
            if t <= 0.0 {
                return Err(Error::Degenerate(format!("zero thickness at ({}, {s})", i2 + 1)));
            }
            for l in 0..manual.layers {
                total += (auto.position(i2, i3, l) - manual.position(i2, i3, l)).abs() / t;
            }
        }
    }
    Ok(total / (manual.width * bscans.len() * manual.layers) as f64)
}

/// Result of [`align_bscans`].
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub volume: DenseTensor,
    /// Downward row shift applied to each B-scan.
    pub shifts: Vec<i64>,
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Shifts every B-scan vertically so that the mean upper-boundary height of
/// its peripheral columns (leftmost and rightmost 20%) lands on a common
/// reference row. `boundary[i2 + I2 * i3]` is the boundary depth of A-scan
/// `(i2, i3)`. Vacated rows are zero filled.
pub fn align_bscans(x: &DenseTensor, boundary: &[f64]) -> Result<Alignment> {
    if x.order() != 3 {
        return Err(Error::InvalidInput("alignment needs a 3-way volume".into()));
    }
    let (depth, width, count) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    if boundary.len() != width * count {
        return Err(Error::ShapeMismatch(format!(
            "{} boundary heights for {width} A-scans x {count} B-scans",
            boundary.len()
        )));
    }
    if boundary.iter().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite("boundary heights"));
    }
    let edge = ((width as f64) * 0.2).floor().max(1.0) as usize;
    let rounded: Vec<i64> = (0..count)
        .map(|i3| {
            let row = &boundary[i3 * width..(i3 + 1) * width];
            let picked = row[..edge].iter().chain(&row[width - edge..]);
            round_half_up(picked.sum::<f64>() / (2 * edge) as f64)
        })
        .collect();
    let reference = round_half_up(rounded.iter().sum::<i64>() as f64 / count as f64);
    let shifts: Vec<i64> = rounded.iter().map(|&m| reference - m).collect();
    if let Some(&s) = shifts.iter().find(|s| s.unsigned_abs() as usize >= depth) {
        return Err(Error::InvalidInput(format!("shift {s} exceeds volume depth {depth}")));
    }
    let mut out = vec![0.0; x.len()];
    for (i3, &s) in shifts.iter().enumerate() {
        for i2 in 0..width {
            let base = depth * (i2 + width * i3);
            for i1 in 0..depth as i64 {
                let src = i1 - s;
                if (0..depth as i64).contains(&src) {
                    out[base + i1 as usize] = x.data()[base + src as usize];
                }
            }
        }
    }
    Ok(Alignment { volume: DenseTensor::new(x.dims().to_vec(), out)?, shifts })
}
