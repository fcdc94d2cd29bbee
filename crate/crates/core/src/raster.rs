//! Patch storage, band bookkeeping and per-band standardization.
//!
//! Container layout (`FPC1`, all integers little-endian):
//!
//! ```text
//! magic "FPC1" | u32 version=1 | u32 patch_count | u16 H | u16 W | u16 B
//! u8 dtype (1=u16, 2=f32) | u8 reserved=0
//! B x (u8 length, ASCII label)
//! per patch: H*W*B pixels (row-major, channel-fastest), then H*W mask bytes
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub const CONTAINER_MAGIC: [u8; 4] = *b"FPC1";
pub const CONTAINER_VERSION: u32 = 1;

/// Landsat 8 labels for the ten channels of the source patches, in order.
pub const DEFAULT_BAND_MAP: [&str; 10] = ["B1", "B2", "B3", "B4", "B5", "B6", "B7", "B9", "B10", "B11"];
pub const GREEN: &str = "B3";
pub const SWIR: [&str; 2] = ["B6", "B7"];
pub const CIRRUS: &str = "B9";

/// Cirrus-band maximum at or above which a patch counts as cloud-contaminated.
pub const DEFAULT_CIRRUS_THRESHOLD: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U16,
    F32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::U16 => 1,
            Dtype::F32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::U16),
            2 => Ok(Dtype::F32),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }
}

/// Raw sensor values, row-major with the channel index varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelData {
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl PixelData {
    pub fn dtype(&self) -> Dtype {
        match self {
            PixelData::U16(_) => Dtype::U16,
            PixelData::F32(_) => Dtype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PixelData::U16(v) => v.len(),
            PixelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            PixelData::U16(v) => f64::from(v[i]),
            PixelData::F32(v) => f64::from(v[i]),
        }
    }

    fn gather(&self, indices: impl Iterator<Item = usize>) -> PixelData {
        match self {
            PixelData::U16(v) => PixelData::U16(indices.map(|i| v[i]).collect()),
            PixelData::F32(v) => PixelData::F32(indices.map(|i| v[i]).collect()),
        }
    }
}

/// One H x W x B raster patch with its binary fire mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandPatch {
    pub height: usize,
    pub width: usize,
    pub band_ids: Vec<String>,
    pub pixels: PixelData,
    /// One byte per pixel, 1 marks fire.
    pub mask: Vec<u8>,
}

impl MultibandPatch {
    pub fn new(
        height: usize,
        width: usize,
        band_ids: Vec<String>,
        pixels: PixelData,
        mask: Vec<u8>,
    ) -> Result<Self> {
        let patch = MultibandPatch { height, width, band_ids, pixels, mask };
        patch.validate().map_err(|reason| Error::PatchValidation { index: 0, reason })?;
        Ok(patch)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let hw = self.height * self.width;
        if hw == 0 {
            return Err("zero-sized patch".into());
        }
        if self.band_ids.is_empty() {
            return Err("no bands".into());
        }
        if self.pixels.len() != hw * self.bands() {
            return Err(format!(
                "pixel count {} does not match {}x{}x{}",
                self.pixels.len(),
                self.height,
                self.width,
                self.bands()
            ));
        }
        if self.mask.len() != hw {
            return Err(format!("mask length {} does not match {}x{}", self.mask.len(), self.height, self.width));
        }
        if let Some(v) = self.mask.iter().find(|&&m| m > 1) {
            return Err(format!("mask value {v} outside {{0,1}}"));
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.band_ids.len()
    }

    pub fn band_index(&self, label: &str) -> Result<usize> {
        self.band_ids
            .iter()
            .position(|b| b == label)
            .ok_or_else(|| Error::UnknownBand(label.to_string()))
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize, band: usize) -> f64 {
        self.pixels.get((row * self.width + col) * self.bands() + band)
    }

    /// One band as a row-major H*W plane.
    pub fn band_plane(&self, band: usize) -> Vec<f64> {
        let b = self.bands();
        (0..self.height * self.width).map(|p| self.pixels.get(p * b + band)).collect()
    }

    pub fn fire_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn has_fire(&self) -> bool {
        self.mask.iter().any(|&m| m == 1)
    }
}

/// An ordered collection of shape-consistent patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub patches: Vec<MultibandPatch>,
    pub provenance: String,
}

impl PatchDataset {
    pub fn new(patches: Vec<MultibandPatch>, provenance: impl Into<String>) -> Self {
        PatchDataset { patches, provenance: provenance.into() }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn band_ids(&self) -> &[String] {
        self.patches.first().map(|p| p.band_ids.as_slice()).unwrap_or(&[])
    }

    /// Checks every patch against the first one, reporting the first offender.
    pub fn validate(&self) -> Result<()> {
        let first = self.patches.first().ok_or_else(|| Error::InsufficientData("empty dataset".into()))?;
        for (index, p) in self.patches.iter().enumerate() {
            p.validate().map_err(|reason| Error::PatchValidation { index, reason })?;
            let reason = if p.height != first.height || p.width != first.width {
                Some(format!("shape {}x{} differs from {}x{}", p.height, p.width, first.height, first.width))
            } else if p.band_ids != first.band_ids {
                Some(format!("band_ids {:?} differ from {:?}", p.band_ids, first.band_ids))
            } else if p.pixels.dtype() != first.pixels.dtype() {
                Some(format!("dtype {:?} differs from {:?}", p.pixels.dtype(), first.pixels.dtype()))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::PatchValidation { index, reason });
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> PatchDataset {
        PatchDataset {
            patches: indices.iter().map(|&i| self.patches[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

pub fn header_len(band_ids: &[String]) -> usize {
    4 + 4 + 4 + 2 + 2 + 2 + 1 + 1 + band_ids.iter().map(|b| 1 + b.len()).sum::<usize>()
}

pub fn encode_container(dataset: &PatchDataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let first = &dataset.patches[0];
    let (h, w, b) = (first.height, first.width, first.bands());
    for (what, v) in [("height", h), ("width", w), ("band count", b)] {
        if v > u16::MAX as usize {
            return Err(Error::PatchValidation { index: 0, reason: format!("{what} {v} exceeds u16") });
        }
    }
    for label in &first.band_ids {
        if !label.is_ascii() || label.len() > u8::MAX as usize {
            return Err(Error::PatchValidation {
                index: 0,
                reason: format!("band label {label:?} must be ASCII and at most 255 bytes"),
            });
        }
    }
    let count = u32::try_from(dataset.len())
        .map_err(|_| Error::InsufficientData("more than u32::MAX patches".into()))?;
    let dtype = first.pixels.dtype();
    let per_patch = h * w * b * dtype.size() + h * w;
    let mut buf = Vec::with_capacity(header_len(&first.band_ids) + per_patch * dataset.len());
    buf.extend_from_slice(&CONTAINER_MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&(h as u16).to_le_bytes());
    buf.extend_from_slice(&(w as u16).to_le_bytes());
    buf.extend_from_slice(&(b as u16).to_le_bytes());
    buf.push(dtype.code());
    buf.push(0);
    for label in &first.band_ids {
        buf.push(label.len() as u8);
        buf.extend_from_slice(label.as_bytes());
    }
    for p in &dataset.patches {
        match &p.pixels {
            PixelData::U16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            PixelData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        buf.extend_from_slice(&p.mask);
    }
    Ok(buf)
}

pub fn write_container(dataset: &PatchDataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_container(dataset)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, expected_total: u64) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated { expected: expected_total, actual: self.bytes.len() as u64 });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn decode_container(bytes: &[u8], provenance: impl Into<String>) -> Result<PatchDataset> {
    if bytes.len() < 4 || bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::BadMagic { expected: CONTAINER_MAGIC, found: bytes[..bytes.len().min(4)].to_vec() });
    }
    const FIXED: usize = 20;
    let mut cur = Cursor { bytes, pos: 4 };
    let fixed = cur.take(FIXED - 4, FIXED as u64)?;
    let version = u32::from_le_bytes(fixed[0..4].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(fixed[4..8].try_into().unwrap()) as usize;
    let h = u16::from_le_bytes(fixed[8..10].try_into().unwrap()) as usize;
    let w = u16::from_le_bytes(fixed[10..12].try_into().unwrap()) as usize;
    let b = u16::from_le_bytes(fixed[12..14].try_into().unwrap()) as usize;
    let dtype = Dtype::from_code(fixed[14])?;
    if fixed[15] != 0 {
        return Err(Error::Malformed(format!("reserved byte is {} (expected 0)", fixed[15])));
    }
    let mut band_ids = Vec::with_capacity(b);
    for _ in 0..b {
        let len = cur.take(1, (cur.pos + 1) as u64)?[0] as usize;
        let raw = cur.take(len, (cur.pos + len) as u64)?;
        if !raw.is_ascii() {
            return Err(Error::Malformed("band label is not ASCII".into()));
        }
        band_ids.push(String::from_utf8(raw.to_vec()).expect("ascii is utf-8"));
    }
    let px = h * w * b;
    let per_patch = px * dtype.size() + h * w;
    let expected = (cur.pos + per_patch * count) as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated { expected, actual: bytes.len() as u64 });
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Malformed(format!("{} trailing bytes after last patch", bytes.len() as u64 - expected)));
    }
    let mut patches = Vec::with_capacity(count);
    for index in 0..count {
        let raw = cur.take(px * dtype.size(), expected)?;
        let pixels = match dtype {
            Dtype::U16 => PixelData::U16(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()),
            Dtype::F32 => {
                PixelData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
            }
        };
        let mask = cur.take(h * w, expected)?.to_vec();
        let patch = MultibandPatch { height: h, width: w, band_ids: band_ids.clone(), pixels, mask };
        patch.validate().map_err(|reason| Error::PatchValidation { index, reason })?;
        patches.push(patch);
    }
    Ok(PatchDataset { patches, provenance: provenance.into() })
}

/// Reads a container; the dataset's provenance is set to the file path.
pub fn read_container(path: impl AsRef<Path>) -> Result<PatchDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_container(&bytes, path.display().to_string())
}

/// Returns a patch containing only `wanted`, in that order.
pub fn select_bands(patch: &MultibandPatch, wanted: &[&str]) -> Result<MultibandPatch> {
    let idx = wanted.iter().map(|w| patch.band_index(w)).collect::<Result<Vec<_>>>()?;
    let b = patch.bands();
    let hw = patch.height * patch.width;
    let pixels = patch.pixels.gather((0..hw).flat_map(|p| idx.iter().map(move |&c| p * b + c)));
    Ok(MultibandPatch {
        height: patch.height,
        width: patch.width,
        band_ids: wanted.iter().map(|s| s.to_string()).collect(),
        pixels,
        mask: patch.mask.clone(),
    })
}

pub fn select_bands_dataset(dataset: &PatchDataset, wanted: &[&str]) -> Result<PatchDataset> {
    Ok(PatchDataset {
        patches: dataset.patches.iter().map(|p| select_bands(p, wanted)).collect::<Result<_>>()?,
        provenance: dataset.provenance.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetStats {
    pub n_total: usize,
    pub n_fire: usize,
    pub n_nonfire: usize,
}

pub fn dataset_stats(dataset: &PatchDataset) -> DatasetStats {
    let n_fire = dataset.patches.iter().filter(|p| p.has_fire()).count();
    DatasetStats { n_total: dataset.len(), n_fire, n_nonfire: dataset.len() - n_fire }
}

/// Indices of patches whose cirrus-band maximum is at least `threshold`.
pub fn filter_cirrus(dataset: &PatchDataset, cirrus_band: &str, threshold: f64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, p) in dataset.patches.iter().enumerate() {
        let band = p.band_index(cirrus_band)?;
        let b = p.bands();
        let max = (0..p.height * p.width).map(|k| p.pixels.get(k * b + band)).fold(f64::NEG_INFINITY, f64::max);
        if max >= threshold {
            out.push(i);
        }
    }
    Ok(out)
}

/// Per-band mean and standard deviation used for standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub band_ids: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub scheme: String,
}

impl NormalizationStats {
    pub const STANDARDIZE: &'static str = "standardize";

    pub fn new(band_ids: Vec<String>, means: Vec<f64>, sds: Vec<f64>) -> Result<Self> {
        if means.len() != band_ids.len() || sds.len() != band_ids.len() {
            return Err(Error::Shape(format!(
                "{} bands but {} means and {} sds",
                band_ids.len(),
                means.len(),
                sds.len()
            )));
        }
        for (band, &sd) in band_ids.iter().zip(&sds) {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::ZeroVariance { band: band.clone() });
            }
        }
        Ok(NormalizationStats { band_ids, means, sds, scheme: Self::STANDARDIZE.to_string() })
    }

    /// Population mean and standard deviation of every band over all pixels.
    pub fn fit(dataset: &PatchDataset) -> Result<Self> {
        dataset.validate()?;
        let band_ids = dataset.band_ids().to_vec();
        let b = band_ids.len();
        let n = dataset.patches.iter().map(|p| p.height * p.width).sum::<usize>() as f64;
        let mut means = vec![0.0; b];
        for p in &dataset.patches {
            for (k, m) in means.iter_mut().enumerate() {
                *m += (0..p.height * p.width).map(|i| p.pixels.get(i * b + k)).sum::<f64>();
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; b];
        for p in &dataset.patches {
            for (k, v) in var.iter_mut().enumerate() {
                *v += (0..p.height * p.width).map(|i| (p.pixels.get(i * b + k) - means[k]).powi(2)).sum::<f64>();
            }
        }
        let sds = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Self::new(band_ids, means, sds)
    }
}

/// Standardized patch values in the same channel-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatPatch {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub mask: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatDataset {
    pub band_ids: Vec<String>,
    pub patches: Vec<FloatPatch>,
}

pub enum StatsSource<'a> {
    Fit,
    Given(&'a NormalizationStats),
}

/// Standardizes each band to `(x - mean) / sd`.
pub fn normalize_bands(dataset: &PatchDataset, stats: StatsSource<'_>) -> Result<(FloatDataset, NormalizationStats)> {
    let stats = match stats {
        StatsSource::Fit => NormalizationStats::fit(dataset)?,
        StatsSource::Given(s) => {
            dataset.validate()?;
            if s.band_ids.as_slice() != dataset.band_ids() {
                return Err(Error::Shape(format!(
                    "normalization bands {:?} do not match dataset bands {:?}",
                    s.band_ids,
                    dataset.band_ids()
                )));
            }
            s.clone()
        }
    };
    let b = stats.band_ids.len();
    let patches = dataset
        .patches
        .iter()
        .map(|p| FloatPatch {
            height: p.height,
            width: p.width,
            values: (0..p.pixels.len()).map(|i| (p.pixels.get(i) - stats.means[i % b]) / stats.sds[i % b]).collect(),
            mask: p.mask.clone(),
        })
        .collect();
    Ok((FloatDataset { band_ids: stats.band_ids.clone(), patches }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(h: usize, w: usize, bands: &[&str], fill: impl Fn(usize) -> u16, mask: Vec<u8>) -> MultibandPatch {
        let b = bands.len();
        MultibandPatch::new(
            h,
            w,
            bands.iter().map(|s| s.to_string()).collect(),
            PixelData::U16((0..h * w * b).map(fill).collect()),
            mask,
        )
        .unwrap()
    }

    #[test]
    fn single_zero_patch_file_size() {
        let p = patch(128, 128, &["B6", "B7"], |_| 0, vec![0; 128 * 128]);
        let bytes = encode_container(&PatchDataset::new(vec![p], "t")).unwrap();
        let header = 20 + (1 + 2) * 2;
        assert_eq!(bytes.len(), header + 128 * 128 * 2 * 2 + 128 * 128);
    }

    #[test]
    fn mismatched_bands_names_the_patch() {
        let a = patch(4, 4, &["B6", "B7"], |i| i as u16, vec![0; 16]);
        let b = patch(4, 4, &["B6", "B9"], |i| i as u16, vec![0; 16]);
        let ds = PatchDataset::new(vec![a.clone(), a, b], "t");
        match encode_container(&ds) {
            Err(Error::PatchValidation { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(encode_container(&PatchDataset::new(vec![], "t")).is_err());
    }

    #[test]
    fn parse_errors_are_distinct() {
        let p = patch(4, 4, &["B9"], |i| i as u16 * 100, vec![0; 16]);
        let good = encode_container(&PatchDataset::new(vec![p], "t")).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_container(&bad, ""), Err(Error::BadMagic { .. })));

        let cut = &good[..good.len() - 5];
        match decode_container(cut, "") {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, good.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut dt = good.clone();
        dt[18] = 7;
        assert!(matches!(decode_container(&dt, ""), Err(Error::UnknownDtype(7))));
    }

    #[test]
    fn f32_round_trip() {
        let p = MultibandPatch::new(
            2,
            3,
            vec!["B6".into()],
            PixelData::F32(vec![0.5, -1.25, f32::MAX, 3.0, 4.0, 1e-30]),
            vec![0, 1, 0, 0, 1, 0],
        )
        .unwrap();
        let ds = PatchDataset::new(vec![p], "t");
        let back = decode_container(&encode_container(&ds).unwrap(), "t").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn select_bands_reorders_and_rejects_unknown() {
        let labels = DEFAULT_BAND_MAP;
        let p = patch(128, 128, &labels, |i| (i % 10) as u16, vec![0; 128 * 128]);
        let s = select_bands(&p, &["B3", "B6", "B7"]).unwrap();
        assert_eq!(s.bands(), 3);
        assert_eq!(s.pixels.len(), 128 * 128 * 3);
        // channel k of the source holds the value k
        assert_eq!((s.value(5, 9, 0), s.value(5, 9, 1), s.value(5, 9, 2)), (2.0, 5.0, 6.0));
        assert_eq!(select_bands(&p, &labels).unwrap(), p);
        assert!(matches!(select_bands(&p, &["B99"]), Err(Error::UnknownBand(b)) if b == "B99"));
    }

    #[test]
    fn stats_count_fire_patches() {
        let mut one = vec![0; 16];
        one[7] = 1;
        let ds = PatchDataset::new(
            vec![
                patch(4, 4, &["B6"], |_| 0, vec![0; 16]),
                patch(4, 4, &["B6"], |_| 0, one),
                patch(4, 4, &["B6"], |_| 0, vec![0; 16]),
            ],
            "t",
        );
        assert_eq!(dataset_stats(&ds), DatasetStats { n_total: 3, n_fire: 1, n_nonfire: 2 });
    }

    #[test]
    fn cirrus_threshold_is_inclusive() {
        let mk = |max: u16| patch(2, 2, &["B6", "B9"], move |i| if i == 3 { max } else { 0 }, vec![0; 4]);
        let ds = PatchDataset::new(vec![mk(499), mk(500), mk(0), mk(6000)], "t");
        assert_eq!(filter_cirrus(&ds, "B9", 500.0).unwrap(), vec![1, 3]);
        let zeros = PatchDataset::new(vec![mk(0), mk(0)], "t");
        assert!(filter_cirrus(&zeros, "B9", 500.0).unwrap().is_empty());
        assert!(filter_cirrus(&ds, "B10", 500.0).is_err());
    }

    #[test]
    fn two_point_standardization() {
        let p = patch(1, 2, &["B6"], |i| (i * 2) as u16, vec![0, 0]);
        let ds = PatchDataset::new(vec![p], "t");
        let (out, stats) = normalize_bands(&ds, StatsSource::Fit).unwrap();
        assert_eq!((stats.means[0], stats.sds[0]), (1.0, 1.0));
        assert_eq!(out.patches[0].values, vec![-1.0, 1.0]);
        let (again, _) = normalize_bands(&ds, StatsSource::Given(&stats)).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn constant_band_is_zero_variance() {
        let p = patch(2, 2, &["B6", "B7"], |i| if i % 2 == 0 { 7 } else { i as u16 }, vec![0; 4]);
        let ds = PatchDataset::new(vec![p], "t");
        assert!(matches!(normalize_bands(&ds, StatsSource::Fit), Err(Error::ZeroVariance { band }) if band == "B6"));
    }
}
