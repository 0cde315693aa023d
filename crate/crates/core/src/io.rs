//! Binary containers for volumes and fitted models, and CSV readers for
//! region masks and layer surfaces.
//!
//! Volume file (little-endian):
//!
//! ```text
//! "OCTV" | u16 version | u8 element type (1 = f32, 2 = f64) | u8 order N
//! | N x u32 dims | column-major payload | u32 CRC-32 of payload
//! ```
//!
//! Model file (little-endian):
//!
//! ```text
//! "TTML" | u16 version | u8 kind (1 = TT, 2 = Tucker) | u8 norm | u8 order N
//! | N x u32 dims | ranks (N-1 for TT, N for Tucker) as u32 | f64 CR
//! | f32 payload | u32 CRC-32 of payload
//! ```
//!
//! The TT payload is every core in order; the Tucker payload is the core
//! followed by each factor. Everything is column-major. The payload holds
//! exactly one f32 per model parameter, so
//! `volume payload bytes / model payload bytes = CR · (element size / 4)`.

use std::fs;
use std::path::Path;

use crate::decomp::{TTModel, TuckerModel};
use crate::error::{Error, FormatError, Result};
use crate::metrics::{RegionMask, SurfaceSet};
use crate::pipeline::{cr_ml, cr_tt, CompressedModel};
use crate::prox::SpNorm;
use crate::tensor::{DenseMatrix, DenseTensor};

pub const VOLUME_MAGIC: [u8; 4] = *b"OCTV";
pub const MODEL_MAGIC: [u8; 4] = *b"TTML";
pub const FORMAT_VERSION: u16 = 1;
/// Largest accepted order.
pub const MAX_ORDER: usize = 16;
/// Stored CR may differ from the recomputed one by this much (relative).
pub const CR_TOLERANCE: f64 = 1e-9;

/// Payload precision of a volume file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    F32,
    F64,
}

impl ElementType {
    pub fn code(self) -> u8 {
        match self {
            ElementType::F32 => 1,
            ElementType::F64 => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(ElementType::F32),
            2 => Some(ElementType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::F32 => 4,
            ElementType::F64 => 8,
        }
    }
}

/// Model kind byte.
pub const KIND_TT: u8 = 1;
pub const KIND_TUCKER: u8 = 2;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.buf.len(),
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: [u8; 4]) -> std::result::Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    fn dims(&mut self, order: usize) -> std::result::Result<Vec<usize>, FormatError> {
        let dims = (0..order).map(|_| self.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        if dims.contains(&0) {
            return Err(FormatError::InvalidHeader(format!("zero dimension in {dims:?}")));
        }
        Ok(dims)
    }
}

fn checked_product(v: &[usize]) -> std::result::Result<usize, FormatError> {
    v.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::InvalidHeader(format!("size of {v:?} overflows")))
}

fn check_order(order: u8, min: usize) -> std::result::Result<usize, FormatError> {
    let n = order as usize;
    if n < min || n > MAX_ORDER {
        return Err(FormatError::InvalidHeader(format!("order {n} outside [{min}, {MAX_ORDER}]")));
    }
    Ok(n)
}

/// Splits `rest` into payload and trailing CRC, checking the CRC.
fn payload_with_crc(rest: &[u8]) -> std::result::Result<&[u8], FormatError> {
    let (payload, crc) = rest.split_at(rest.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::CrcMismatch { stored, computed });
    }
    Ok(payload)
}

/// Serializes a volume.
pub fn encode_volume(t: &DenseTensor, element: ElementType) -> Result<Vec<u8>> {
    if t.order() > MAX_ORDER || t.dims().iter().any(|&d| d > u32::MAX as usize) {
        return Err(Error::InvalidInput(format!("dims {:?} do not fit the volume format", t.dims())));
    }
    let mut out = Vec::with_capacity(8 + 4 * t.order() + element.size() * t.len() + 4);
    out.extend_from_slice(&VOLUME_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(element.code());
    out.push(t.order() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let start = out.len();
    match element {
        ElementType::F32 => {
            for &v in t.data() {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::InvalidInput(format!("value {v} overflows f32")));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        ElementType::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Header of a volume file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VolumeHeader {
    pub version: u16,
    pub element: ElementType,
    pub dims: Vec<usize>,
}

fn volume_header(r: &mut Reader<'_>) -> std::result::Result<VolumeHeader, FormatError> {
    r.magic(VOLUME_MAGIC)?;
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let code = r.u8()?;
    let element = ElementType::from_code(code).ok_or(FormatError::UnknownElementType(code))?;
    let order = check_order(r.u8()?, 1)?;
    let dims = r.dims(order)?;
    Ok(VolumeHeader { version, element, dims })
}

/// Parses a volume, widening f32 payloads to f64.
pub fn decode_volume(bytes: &[u8]) -> Result<DenseTensor> {
    Ok(decode_volume_with_header(bytes)?.1)
}

fn decode_volume_with_header(bytes: &[u8]) -> std::result::Result<(VolumeHeader, DenseTensor), FormatError> {
    let mut r = Reader::new(bytes);
    let header = volume_header(&mut r)?;
    let count = checked_product(&header.dims)?;
    let payload_len = count
        .checked_mul(header.element.size())
        .ok_or_else(|| FormatError::InvalidHeader("payload size overflows".into()))?;
    let expected = r
        .pos
        .checked_add(payload_len)
        .and_then(|v| v.checked_add(4))
        .ok_or_else(|| FormatError::InvalidHeader("file size overflows".into()))?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes(bytes.len() - expected));
    }
    let payload = payload_with_crc(&bytes[r.pos..])?;
    let data: Vec<f64> = match header.element {
        ElementType::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        ElementType::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::NonFinitePayload);
    }
    let t = DenseTensor::from_parts(header.dims.clone(), data);
    Ok((header, t))
}

pub fn write_volume(t: &DenseTensor, path: impl AsRef<Path>, element: ElementType) -> Result<()> {
    fs::write(path, encode_volume(t, element)?)?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<DenseTensor> {
    decode_volume(&fs::read(path)?)
}

/// A fitted model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub model: CompressedModel,
    pub norm: SpNorm,
    /// CR recorded in the header; always consistent with the ranks.
    pub cr: f64,
}

impl StoredModel {
    /// Wraps a model, computing its CR from the ranks.
    pub fn new(model: CompressedModel, norm: SpNorm) -> Result<Self> {
        let cr = model_cr(&model)?;
        Ok(Self { model, norm, cr })
    }
}

fn model_cr(model: &CompressedModel) -> Result<f64> {
    match model {
        CompressedModel::Tt(m) => cr_tt(m.dims(), &m.ranks()),
        CompressedModel::Tucker(m) => cr_ml(&m.dims(), m.ranks()),
    }
}

/// Header of a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHeader {
    pub version: u16,
    pub kind: u8,
    pub norm: SpNorm,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub cr: f64,
}

pub fn encode_model(m: &StoredModel) -> Result<Vec<u8>> {
    let dims = m.model.dims();
    let ranks = m.model.ranks();
    if dims.len() > MAX_ORDER || dims.iter().chain(&ranks).any(|&d| d > u32::MAX as usize) {
        return Err(Error::InvalidInput(format!("model {dims:?}/{ranks:?} does not fit the format")));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match m.model {
        CompressedModel::Tt(_) => KIND_TT,
        CompressedModel::Tucker(_) => KIND_TUCKER,
    });
    out.push(m.norm.to_byte());
    out.push(dims.len() as u8);
    for &d in dims.iter().chain(&ranks) {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&model_cr(&m.model)?.to_le_bytes());
    let start = out.len();
    let mut push = |data: &[f64]| -> Result<()> {
        for &v in data {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::InvalidInput(format!("model value {v} overflows f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
        Ok(())
    };
    match &m.model {
        CompressedModel::Tt(tt) => {
            for core in tt.cores() {
                push(core.data())?;
            }
        }
        CompressedModel::Tucker(tk) => {
            push(tk.core().data())?;
            for f in tk.factors() {
                push(f.data())?;
            }
        }
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn model_header(r: &mut Reader<'_>) -> std::result::Result<ModelHeader, FormatError> {
    r.magic(MODEL_MAGIC)?;
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let kind = r.u8()?;
    if kind != KIND_TT && kind != KIND_TUCKER {
        return Err(FormatError::UnknownModelKind(kind));
    }
    let code = r.u8()?;
    let norm = SpNorm::from_byte(code).ok_or(FormatError::UnknownNorm(code))?;
    let order = check_order(r.u8()?, 2)?;
    let dims = r.dims(order)?;
    let rank_count = if kind == KIND_TT { order - 1 } else { order };
    let ranks = (0..rank_count).map(|_| r.u32().map(|v| v as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
    if ranks.contains(&0) {
        return Err(FormatError::InvalidHeader(format!("zero rank in {ranks:?}")));
    }
    if kind == KIND_TUCKER {
        if let Some(n) = (0..order).find(|&n| ranks[n] > dims[n]) {
            return Err(FormatError::InvalidHeader(format!("rank {} exceeds dimension {}", ranks[n], dims[n])));
        }
    }
    let cr = r.f64()?;
    Ok(ModelHeader { version, kind, norm, dims, ranks, cr })
}

/// Parameter count implied by a header, or `None` on overflow.
fn header_params(h: &ModelHeader) -> Option<usize> {
    if h.kind == KIND_TT {
        let mut total = 0usize;
        for (n, &d) in h.dims.iter().enumerate() {
            let left = if n == 0 { 1 } else { h.ranks[n - 1] };
            let right = h.ranks.get(n).copied().unwrap_or(1);
            total = total.checked_add(left.checked_mul(d)?.checked_mul(right)?)?;
        }
        Some(total)
    } else {
        let mut total = h.ranks.iter().try_fold(1usize, |a, &r| a.checked_mul(r))?;
        for (d, r) in h.dims.iter().zip(&h.ranks) {
            total = total.checked_add(d.checked_mul(*r)?)?;
        }
        Some(total)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<StoredModel> {
    let mut r = Reader::new(bytes);
    let h = model_header(&mut r)?;
    let params = header_params(&h).ok_or_else(|| FormatError::InvalidHeader("parameter count overflows".into()))?;
    checked_product(&h.dims)?;
    let expected = params
        .checked_mul(4)
        .ok_or_else(|| FormatError::InvalidHeader("payload size overflows".into()))?;
    let rest = &bytes[r.pos..];
    if rest.len() < 4 {
        return Err(FormatError::Truncated { expected: r.pos + 4, found: bytes.len() }.into());
    }
    if rest.len() - 4 != expected {
        return Err(FormatError::PayloadSizeMismatch { expected, found: rest.len() - 4 }.into());
    }
    let payload = payload_with_crc(rest)?;
    let computed = if h.kind == KIND_TT { cr_tt(&h.dims, &h.ranks)? } else { cr_ml(&h.dims, &h.ranks)? };
    if !h.cr.is_finite() || (h.cr - computed).abs() > CR_TOLERANCE * computed {
        return Err(FormatError::CrMismatch { stored: h.cr, computed }.into());
    }
    let values: Vec<f64> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::NonFinitePayload.into());
    }
    let mut cursor = values.into_iter();
    let mut next = |n: usize| -> Vec<f64> { cursor.by_ref().take(n).collect() };
    let model = if h.kind == KIND_TT {
        let mut cores = Vec::with_capacity(h.dims.len());
        for (n, &d) in h.dims.iter().enumerate() {
            let left = if n == 0 { 1 } else { h.ranks[n - 1] };
            let right = h.ranks.get(n).copied().unwrap_or(1);
            cores.push(DenseTensor::from_parts(vec![left, d, right], next(left * d * right)));
        }
        CompressedModel::Tt(TTModel::new(h.dims.clone(), cores)?)
    } else {
        let core = DenseTensor::from_parts(h.ranks.clone(), next(h.ranks.iter().product()));
        let factors = h
            .dims
            .iter()
            .zip(&h.ranks)
            .map(|(&d, &rk)| DenseMatrix::from_parts(d, rk, next(d * rk)))
            .collect();
        CompressedModel::Tucker(TuckerModel::new(core, factors)?)
    };
    Ok(StoredModel { model, norm: h.norm, cr: h.cr })
}

pub fn write_model(m: &StoredModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(m)?)?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<StoredModel> {
    decode_model(&fs::read(path)?)
}

/// Header of either container, identified by its magic.
#[derive(Debug, Clone, PartialEq)]
pub enum FileInfo {
    Volume { header: VolumeHeader, bytes: usize },
    Model { header: ModelHeader, bytes: usize },
}

/// Reads and fully validates a file, returning its header.
pub fn inspect(bytes: &[u8]) -> Result<FileInfo> {
    match bytes.get(..4) {
        Some(m) if m == VOLUME_MAGIC => {
            let (header, _) = decode_volume_with_header(bytes)?;
            Ok(FileInfo::Volume { header, bytes: bytes.len() })
        }
        Some(m) if m == MODEL_MAGIC => {
            decode_model(bytes)?;
            let header = model_header(&mut Reader::new(bytes))?;
            Ok(FileInfo::Model { header, bytes: bytes.len() })
        }
        Some(m) => Err(FormatError::BadMagic { expected: VOLUME_MAGIC, found: m.try_into().unwrap() }.into()),
        None => Err(FormatError::Truncated { expected: 4, found: bytes.len() }.into()),
    }
}

fn csv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split(',').map(str::trim).collect()))
        }
    })
}

fn parse_index(field: &str, line: usize, name: &str, max: usize) -> Result<usize> {
    let v: usize = field
        .parse()
        .map_err(|e| Error::Parse { line, msg: format!("{name}: {e}") })?;
    if v == 0 || v > max {
        return Err(Error::Parse { line, msg: format!("{name} = {v} outside 1..={max}") });
    }
    Ok(v - 1)
}

/// Parses a mask from `i1,i2,i3` rows of 1-based voxel indices.
pub fn parse_region_mask(text: &str, dims: &[usize]) -> Result<RegionMask> {
    if dims.len() != 3 {
        return Err(Error::InvalidInput("masks are defined for 3-way volumes".into()));
    }
    let mut mask = vec![false; dims.iter().product()];
    for (line, f) in csv_rows(text) {
        if f.len() != 3 {
            return Err(Error::Parse { line, msg: format!("expected 3 fields, got {}", f.len()) });
        }
        let i1 = parse_index(f[0], line, "i1", dims[0])?;
        let i2 = parse_index(f[1], line, "i2", dims[1])?;
        let i3 = parse_index(f[2], line, "i3", dims[2])?;
        mask[i1 + dims[0] * (i2 + dims[1] * i3)] = true;
    }
    RegionMask::new(dims.to_vec(), mask)
}

pub fn format_region_mask(mask: &RegionMask) -> String {
    let d = mask.dims();
    let mut out = String::new();
    for (idx, _) in mask.mask().iter().enumerate().filter(|(_, &m)| m) {
        let (i1, rest) = (idx % d[0], idx / d[0]);
        let (i2, i3) = (rest % d[1], rest / d[1]);
        out.push_str(&format!("{},{},{}\n", i1 + 1, i2 + 1, i3 + 1));
    }
    out
}

pub fn read_region_mask(path: impl AsRef<Path>, dims: &[usize]) -> Result<RegionMask> {
    parse_region_mask(&fs::read_to_string(path)?, dims)
}

/// Parses `i2,i3,l,position` rows (1-based grid and surface indices). The
/// grid and surface count are the largest indices seen; every grid point
/// must carry every surface exactly once.
pub fn parse_surfaces(text: &str) -> Result<SurfaceSet> {
    let mut rows = Vec::new();
    for (line, f) in csv_rows(text) {
        if f.len() != 4 {
            return Err(Error::Parse { line, msg: format!("expected 4 fields, got {}", f.len()) });
        }
        let i2 = parse_index(f[0], line, "i2", u32::MAX as usize)?;
        let i3 = parse_index(f[1], line, "i3", u32::MAX as usize)?;
        let l = parse_index(f[2], line, "l", u16::MAX as usize)?;
        let pos: f64 = f[3].parse().map_err(|e| Error::Parse { line, msg: format!("position: {e}") })?;
        if !pos.is_finite() {
            return Err(Error::Parse { line, msg: "non-finite position".into() });
        }
        rows.push((line, i2, i3, l, pos));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no surface rows".into()));
    }
    let width = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let bscans = rows.iter().map(|r| r.2).max().unwrap() + 1;
    let layers = rows.iter().map(|r| r.3).max().unwrap() + 1;
    let cells = width
        .checked_mul(bscans)
        .and_then(|v| v.checked_mul(layers))
        .filter(|&v| v == rows.len())
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "{} rows cannot cover {width} x {bscans} grid points x {layers} surfaces",
                rows.len()
            ))
        })?;
    let mut positions = vec![f64::NAN; cells];
    for (line, i2, i3, l, pos) in rows {
        let slot = &mut positions[l + layers * (i2 + width * i3)];
        if !slot.is_nan() {
            return Err(Error::Parse { line, msg: format!("duplicate entry for ({}, {}, {})", i2 + 1, i3 + 1, l + 1) });
        }
        *slot = pos;
    }
    SurfaceSet::new(width, bscans, layers, positions)
}

pub fn format_surfaces(s: &SurfaceSet) -> String {
    let mut out = String::new();
    for i3 in 0..s.bscans() {
        for i2 in 0..s.width() {
            for l in 0..s.layers() {
                out.push_str(&format!("{},{},{},{}\n", i2 + 1, i3 + 1, l + 1, s.position(i2, i3, l)));
            }
        }
    }
    out
}

pub fn read_surfaces(path: impl AsRef<Path>) -> Result<SurfaceSet> {
    parse_surfaces(&fs::read_to_string(path)?)
}
