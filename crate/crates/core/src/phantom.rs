//! Synthetic retina-like test volumes with known multilinear rank and
//! multiplicative gamma speckle.
//!
//! The clean volume is built from `r1` depth profiles. The lateral axis is
//! cut into `r2` segments and the B-scan axis into `r3` segments, and every
//! (segment, segment) block repeats one profile. A profile is a stack of
//! horizontal layers whose boundaries move from profile to profile, and every
//! layer has a fixed intensity. The result has multilinear rank `(r1, r2, r3)`
//! and TT rank `(r1, r3)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::metrics::{RegionMask, SurfaceSet};
use crate::tensor::DenseTensor;

/// Intensity of each label; label 0 is the background above and below the tissue.
pub const LAYER_INTENSITY: [f64; 9] = [0.05, 0.55, 0.25, 0.7, 0.35, 0.5, 0.3, 0.85, 0.6];
/// Number of labels including background.
pub const LAYER_COUNT: usize = LAYER_INTENSITY.len();

const LAYER_THICKNESS: [f64; 8] = [0.04, 0.06, 0.05, 0.09, 0.04, 0.07, 0.06, 0.05];

#[derive(Debug, Clone, PartialEq)]
pub struct SpeckledPhantomSpec {
    /// `(I1, I2, I3)`: depth, lateral, B-scan count.
    pub dims: [usize; 3],
    /// Multilinear rank of the clean volume.
    pub rank: [usize; 3],
    /// Gamma shape; `looks = 1` is fully developed speckle.
    pub looks: f64,
    pub seed: u64,
}

impl SpeckledPhantomSpec {
    pub fn new(dims: [usize; 3], rank: [usize; 3], looks: f64, seed: u64) -> Self {
        Self { dims, rank, looks, seed }
    }

    /// Full-size reference volume: 64 B-scans of 480x512, single look.
    pub fn reference() -> Self {
        Self::new([480, 512, 64], [12, 16, 8], 1.0, 2024)
    }

    /// Reduced volume (64x64x16) for quick runs.
    pub fn small() -> Self {
        Self::new([64, 64, 16], [4, 6, 3], 1.0, 2024)
    }

    pub fn validate(&self) -> Result<()> {
        let [i1, i2, i3] = self.dims;
        let [r1, r2, r3] = self.rank;
        if i1 < 8 || i2 == 0 || i3 == 0 {
            return Err(Error::InvalidInput(format!("phantom dims {:?} too small", self.dims)));
        }
        if r1 == 0 || r2 == 0 || r3 == 0 || r2 > i2 || r3 > i3 {
            return Err(Error::InvalidInput(format!(
                "phantom rank {:?} incompatible with dims {:?}",
                self.rank, self.dims
            )));
        }
        // one-hot block patterns cap the lateral ranks at r_other (r1 - 1) + 1
        if r1 > r2 * r3 || r2 > r3 * (r1 - 1) + 1 || r3 > r2 * (r1 - 1) + 1 {
            return Err(Error::InvalidInput(format!("rank {:?} is not realizable", self.rank)));
        }
        if !(self.looks > 0.0 && self.looks.is_finite()) {
            return Err(Error::InvalidInput(format!("looks must be positive, got {}", self.looks)));
        }
        let profiles = self.profiles();
        for a in 0..r1 {
            for b in a + 1..r1 {
                if profiles[a] == profiles[b] {
                    return Err(Error::InvalidInput(format!(
                        "depth {i1} too small for {r1} distinct profiles"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Layer boundaries of every profile: row index of the first voxel of
    /// each tissue label, then the first background row below the tissue.
    fn profile_bounds(&self) -> Vec<Vec<usize>> {
        let depth = self.dims[0];
        let r1 = self.rank[0];
        (0..r1)
            .map(|p| {
                let t = if r1 > 1 { p as f64 / (r1 - 1) as f64 } else { 0.5 };
                // tissue top moves down, inner layers swell and thin with the profile
                let mut edge = 0.18 + 0.22 * t;
                let mut bounds = vec![(edge * depth as f64).round() as usize];
                for (l, &w) in LAYER_THICKNESS.iter().enumerate() {
                    let wobble = 1.0 + 0.25 * ((l as f64 + 1.0) * (1.0 + 3.0 * t)).sin();
                    edge += w * wobble;
                    bounds.push(((edge * depth as f64).round() as usize).min(depth));
                }
                bounds
            })
            .collect()
    }

    /// Label of every depth sample, per profile.
    fn profiles(&self) -> Vec<Vec<u8>> {
        let depth = self.dims[0];
        self.profile_bounds()
            .into_iter()
            .map(|bounds| {
                (0..depth)
                    .map(|i| {
                        let above = bounds.iter().filter(|&&b| i >= b).count();
                        if above == 0 || above == bounds.len() {
                            0
                        } else {
                            above as u8
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Block index of A-scan `(i2, i3)`.
    fn block_of(&self, i2: usize, i3: usize) -> usize {
        let [_, n2, n3] = self.dims;
        let [_, r2, r3] = self.rank;
        i2 * r2 / n2 + r2 * (i3 * r3 / n3)
    }

    /// Profile index of every (lateral segment, B-scan segment) block, chosen
    /// so that the block pattern has full rank along both lateral axes.
    fn assignment(&self) -> Result<Vec<usize>> {
        let [r1, r2, r3] = self.rank;
        let mut candidate = vec![0usize; r2 * r3];
        if r1 > 1 {
            // row j > 0 differs from row 0 in one block, column k > 0 from column 0 in one block
            for j in 1..r2 {
                candidate[j + r2 * ((j - 1) / (r1 - 1))] = 1 + (j - 1) % (r1 - 1);
            }
            for k in 1..r3 {
                candidate[(k - 1) / (r1 - 1) + r2 * k] = 1 + (k - 1) % (r1 - 1);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_1a7e);
        for _ in 0..500 {
            if block_ranks(&candidate, self.rank) == self.rank {
                return Ok(candidate);
            }
            candidate = (0..r2 * r3).map(|_| rng.gen_range(0..r1)).collect();
        }
        Err(Error::InvalidInput(format!("no block pattern realizes rank {:?}", self.rank)))
    }

    /// Label volume (0 = background, `1..LAYER_COUNT` tissue layers).
    pub fn labels(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let [i1, i2, i3] = self.dims;
        let profiles = self.profiles();
        let blocks = self.assignment()?;
        let mut out = Vec::with_capacity(i1 * i2 * i3);
        for c in 0..i3 {
            for b in 0..i2 {
                out.extend_from_slice(&profiles[blocks[self.block_of(b, c)]]);
            }
        }
        Ok(out)
    }

    /// True layer surfaces: `LAYER_COUNT` boundaries per A-scan, as 1-based
    /// depth of the first row below each boundary.
    pub fn surfaces(&self) -> Result<SurfaceSet> {
        self.validate()?;
        let [_, i2, i3] = self.dims;
        let bounds = self.profile_bounds();
        let blocks = self.assignment()?;
        let mut positions = Vec::with_capacity(i2 * i3 * LAYER_COUNT);
        for c in 0..i3 {
            for b in 0..i2 {
                positions.extend(bounds[blocks[self.block_of(b, c)]].iter().map(|&r| (r + 1) as f64));
            }
        }
        SurfaceSet::new(i2, i3, LAYER_COUNT, positions)
    }

    /// Voxels carrying `label`.
    pub fn layer_mask(&self, label: u8) -> Result<RegionMask> {
        let labels = self.labels()?;
        RegionMask::new(self.dims.to_vec(), labels.iter().map(|&l| l == label).collect())
    }
}

/// Ranks of the one-hot embedding of a block pattern along each axis.
fn block_ranks(blocks: &[usize], [r1, r2, r3]: [usize; 3]) -> [usize; 3] {
    let rank = |rows: usize, cols: usize, f: &dyn Fn(usize, usize) -> f64| {
        let m = faer::Mat::<f64>::from_fn(rows, cols, |i, j| f(i, j));
        let s = m.singular_values().unwrap_or_default();
        s.iter().filter(|&&v| v > 1e-9 * s[0]).count()
    };
    let hit = |s2: usize, s3: usize, p: usize| if blocks[s2 + r2 * s3] == p { 1.0 } else { 0.0 };
    [
        rank(r1, r2 * r3, &|p, b| hit(b % r2, b / r2, p)),
        rank(r2, r3 * r1, &|s2, c| hit(s2, c % r3, c / r3)),
        rank(r3, r2 * r1, &|s3, c| hit(c % r2, s3, c / r2)),
    ]
}

/// Returns `(clean, noisy)`; the noisy volume is the clean one times i.i.d.
/// Gamma(looks, 1/looks) speckle.
pub fn make_phantom(spec: &SpeckledPhantomSpec) -> Result<(DenseTensor, DenseTensor)> {
    let labels = spec.labels()?;
    let clean: Vec<f64> = labels.iter().map(|&l| LAYER_INTENSITY[l as usize]).collect();
    let gamma = Gamma::new(spec.looks, 1.0 / spec.looks)
        .map_err(|e| Error::InvalidInput(format!("speckle distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noisy: Vec<f64> = clean.iter().map(|&c| c * gamma.sample(&mut rng)).collect();
    let dims = spec.dims.to_vec();
    Ok((DenseTensor::new(dims.clone(), clean)?, DenseTensor::new(dims, noisy)?))
}
