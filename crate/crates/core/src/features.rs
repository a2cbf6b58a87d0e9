//! State features: a 20x20x20 CIELab histogram plus a context descriptor,
//! either a 16x16 thumbnail computed here or an externally exported vector
//! read from a CTXF file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::color::{srgb_to_lab, LabImage, RgbImage};
use crate::error::{Error, Result};

pub const BINS_PER_AXIS: usize = 20;
pub const HISTOGRAM_LEN: usize = BINS_PER_AXIS * BINS_PER_AXIS * BINS_PER_AXIS;
pub const TINY_SIDE: usize = 16;
pub const TINY_DIM: usize = TINY_SIDE * TINY_SIDE * 3;

const AB_MIN: f64 = -128.0;
const AB_MAX: f64 = 127.0;

const CTXF_MAGIC: &[u8; 4] = b"CTXF";
const CTXF_VERSION: u32 = 1;

/// Normalized CIELab histogram; bin index is `iL * 400 + ia * 20 + ib`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorHistogram {
    bins: Vec<f32>,
}

impl ColorHistogram {
    pub fn bins(&self) -> &[f32] {
        &self.bins
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.bins.iter().copied().enumerate().filter(|&(_, v)| v != 0.0)
    }

    pub fn bin_index(lab: [f32; 3]) -> usize {
        let quantize = |v: f64, lo: f64, hi: f64| {
            let t = (v - lo) / (hi - lo) * BINS_PER_AXIS as f64;
            (t.floor().max(0.0) as usize).min(BINS_PER_AXIS - 1)
        };
        let il = quantize(lab[0] as f64, 0.0, 100.0);
        let ia = quantize(lab[1] as f64, AB_MIN, AB_MAX);
        let ib = quantize(lab[2] as f64, AB_MIN, AB_MAX);
        il * BINS_PER_AXIS * BINS_PER_AXIS + ia * BINS_PER_AXIS + ib
    }
}

pub fn lab_histogram(img: &RgbImage) -> ColorHistogram {
    lab_histogram_from_lab(&srgb_to_lab(img))
}

pub fn lab_histogram_from_lab(lab: &LabImage) -> ColorHistogram {
    let mut counts = vec![0u32; HISTOGRAM_LEN];
    for p in lab.pixels() {
        counts[ColorHistogram::bin_index(p)] += 1;
    }
    let n = (lab.width() * lab.height()) as f64;
    ColorHistogram {
        bins: counts.into_iter().map(|c| (c as f64 / n) as f32).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextSource {
    TinyImage,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextFeature {
    values: Vec<f32>,
    source: ContextSource,
}

impl ContextFeature {
    pub fn new(values: Vec<f32>, source: ContextSource) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("context", "feature must have at least one dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("context", "feature contains non-finite values"));
        }
        Ok(Self { values, source })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn source(&self) -> ContextSource {
        self.source
    }
}

/// 16x16 bilinear thumbnail flattened row-major, RGB interleaved.
pub fn tiny_context(img: &RgbImage) -> ContextFeature {
    let thumb = img.resize_bilinear(TINY_SIDE, TINY_SIDE);
    ContextFeature {
        values: thumb.data().to_vec(),
        source: ContextSource::TinyImage,
    }
}

pub fn write_ctxf(mut w: impl Write, values: &[f32]) -> Result<()> {
    let dim = u32::try_from(values.len()).map_err(|_| Error::format("CTXF", "dim", "exceeds u32"))?;
    w.write_all(CTXF_MAGIC)?;
    w.write_all(&CTXF_VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ctxf(mut r: impl Read) -> Result<ContextFeature> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::format("CTXF", "header", "file shorter than 12-byte header"))?;
    if &header[0..4] != CTXF_MAGIC {
        return Err(Error::format("CTXF", "magic", format!("expected CTXF, got {:?}", &header[0..4])));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != CTXF_VERSION {
        return Err(Error::format("CTXF", "version", format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::format("CTXF", "dim", "dim must be positive"));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() < 4 * dim {
        return Err(Error::format("CTXF", "payload", "payload shorter than dim"));
    }
    if payload.len() > 4 * dim {
        return Err(Error::format("CTXF", "payload", "payload longer than dim"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format("CTXF", "payload", format!("non-finite value at index {i}")));
    }
    Ok(ContextFeature {
        values,
        source: ContextSource::External,
    })
}

pub fn load_context_feature(path: impl AsRef<Path>) -> Result<ContextFeature> {
    read_ctxf(BufReader::new(File::open(path)?))
}

pub fn save_context_feature(path: impl AsRef<Path>, feature: &ContextFeature) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ctxf(&mut w, feature.values())?;
    w.flush()?;
    Ok(())
}

/// MDP state: context first, then histogram. The histogram is kept sparse
/// since only a few hundred of its 8000 bins are ever occupied.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    context: Vec<f32>,
    histogram: Vec<(u16, f32)>,
}

impl StateVector {
    pub fn len(&self) -> usize {
        self.context.len() + HISTOGRAM_LEN
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn context_dim(&self) -> usize {
        self.context.len()
    }

    /// Nonzero entries in ascending index order.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        let offset = self.context.len();
        self.context
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
            .chain(self.histogram.iter().map(move |&(i, v)| (offset + i as usize, v)))
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.len()];
        for (i, v) in self.nonzero() {
            out[i] = v;
        }
        out
    }
}

/// Fixes the context width for a run so drift is caught early.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateLayout {
    pub context_dim: usize,
}

impl StateLayout {
    pub fn tiny() -> Self {
        Self { context_dim: TINY_DIM }
    }

    pub fn input_dim(&self) -> usize {
        self.context_dim + HISTOGRAM_LEN
    }

    /// Inverse of [`StateLayout::input_dim`]; `None` if the width cannot hold a histogram.
    pub fn from_input_dim(input_dim: usize) -> Option<Self> {
        (input_dim > HISTOGRAM_LEN).then(|| Self {
            context_dim: input_dim - HISTOGRAM_LEN,
        })
    }

    pub fn build_state(&self, ctx: &ContextFeature, hist: &ColorHistogram) -> Result<StateVector> {
        if ctx.dim() != self.context_dim {
            return Err(Error::Config(format!(
                "context feature has {} dims but this run uses {}",
                ctx.dim(),
                self.context_dim
            )));
        }
        Ok(StateVector {
            context: ctx.values.clone(),
            histogram: hist.nonzero().map(|(i, v)| (i as u16, v)).collect(),
        })
    }
}

/// Where the context half of the state comes from during an episode.
#[derive(Clone, Debug)]
pub enum ContextProvider {
    /// Thumbnail of the current image, recomputed at every step.
    Tiny,
    /// Externally computed feature of the episode's first image, held fixed.
    Fixed(ContextFeature),
}

impl ContextProvider {
    pub fn dim(&self) -> usize {
        match self {
            ContextProvider::Tiny => TINY_DIM,
            ContextProvider::Fixed(f) => f.dim(),
        }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout { context_dim: self.dim() }
    }

    pub fn observe(&self, img: &RgbImage, lab: &LabImage) -> Result<StateVector> {
        let hist = lab_histogram_from_lab(lab);
        match self {
            ContextProvider::Tiny => self.layout().build_state(&tiny_context(img), &hist),
            ContextProvider::Fixed(f) => self.layout().build_state(f, &hist),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn uniform_image_fills_one_bin() {
        let h = lab_histogram(&RgbImage::filled(7, 5, [0.2, 0.6, 0.3]));
        let nz: Vec<_> = h.nonzero().collect();
        assert_eq!(nz.len(), 1);
        assert_eq!(nz[0].1, 1.0);
    }

    #[test]
    fn black_and_white_halves() {
        let img = RgbImage::from_fn(4, 2, |x, _| if x < 2 { [0.0; 3] } else { [1.0; 3] });
        let h = lab_histogram(&img);
        let nz: Vec<_> = h.nonzero().collect();
        // (0,0,0) -> iL 0; (100,0,0) -> last L bin; a = b = 0 -> bin 10.
        let black = 10 * 20 + 10;
        let white = 19 * 400 + 10 * 20 + 10;
        assert_eq!(nz, vec![(black, 0.5), (white, 0.5)]);
    }

    #[test]
    fn normalized_and_permutation_invariant() {
        let img = random_image(3, 20, 10);
        let h = lab_histogram(&img);
        let sum: f64 = h.bins().iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6);

        let mut px: Vec<[f32; 3]> = img.pixels().collect();
        px.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        let shuffled = RgbImage::new(20, 10, px.concat()).unwrap();
        assert_eq!(lab_histogram(&shuffled), h);
        assert_ne!(tiny_context(&shuffled), tiny_context(&img));
    }

    #[test]
    fn tiny_context_shapes() {
        let gray = tiny_context(&RgbImage::filled(50, 30, [0.5; 3]));
        assert_eq!(gray.dim(), 768);
        assert!(gray.values().iter().all(|&v| (v - 0.5).abs() < 1e-7));
        let img = random_image(1, 16, 16);
        assert_eq!(tiny_context(&img).values(), img.data());
        assert_eq!(tiny_context(&random_image(2, 3, 200)).dim(), TINY_DIM);
    }

    #[test]
    fn ctxf_round_trip_is_bit_exact() {
        let values: Vec<f32> = (0..4096).map(|i| (i as f32 * 0.37).sin() * 1e3).collect();
        let mut buf = Vec::new();
        write_ctxf(&mut buf, &values).unwrap();
        assert_eq!(buf.len(), 12 + 4 * 4096);
        let f = read_ctxf(buf.as_slice()).unwrap();
        assert_eq!(f.dim(), 4096);
        assert_eq!(f.source(), ContextSource::External);
        assert!(f.values().iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn ctxf_rejects_corruption() {
        let mut buf = Vec::new();
        write_ctxf(&mut buf, &[1.0, 2.0, 3.0]).unwrap();

        let err = read_ctxf(&buf[..buf.len() - 1]).unwrap_err().to_string();
        assert!(err.contains("payload shorter than dim"), "{err}");

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_ctxf(bad.as_slice()), Err(Error::Format { field: "magic", .. })));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_ctxf(bad.as_slice()), Err(Error::Format { field: "version", .. })));

        let mut bad = buf.clone();
        bad[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_ctxf(bad.as_slice()), Err(Error::Format { field: "payload", .. })));

        let mut bad = buf.clone();
        bad.push(0);
        assert!(read_ctxf(bad.as_slice()).is_err());
    }

    #[test]
    fn state_layout_lengths_and_drift() {
        let img = random_image(5, 12, 12);
        let hist = lab_histogram(&img);
        let s = StateLayout::tiny().build_state(&tiny_context(&img), &hist).unwrap();
        assert_eq!(s.len(), 8768);
        let dense = s.to_dense();
        assert_eq!(&dense[..768], tiny_context(&img).values());
        assert_eq!(&dense[768..], hist.bins());

        let ext = ContextFeature::new(vec![0.1; 4096], ContextSource::External).unwrap();
        let layout = StateLayout { context_dim: 4096 };
        assert_eq!(layout.build_state(&ext, &hist).unwrap().len(), 12096);
        assert!(matches!(
            StateLayout::tiny().build_state(&ext, &hist),
            Err(Error::Config(_))
        ));
        assert_eq!(StateLayout::from_input_dim(12096), Some(layout));
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn image() -> impl Strategy<Value = RgbImage> {
        (1usize..=6, 1usize..=6).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f32..=1.0, w * h * 3).prop_map(move |d| RgbImage::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn histogram_is_a_distribution(img in image()) {
            let h = lab_histogram(&img);
            prop_assert_eq!(h.bins().len(), HISTOGRAM_LEN);
            let total: f64 = h.bins().iter().map(|&v| v as f64).sum();
            prop_assert!((total - 1.0).abs() < 1e-5);
            prop_assert!(h.bins().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn histogram_ignores_pixel_order(img in image(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut pixels: Vec<[f32; 3]> = img.pixels().collect();
            pixels.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = RgbImage::new(img.width(), img.height(), pixels.concat()).unwrap();
            prop_assert_eq!(lab_histogram(&img), lab_histogram(&shuffled));
        }

        #[test]
        fn state_is_context_then_histogram(img in image()) {
            let s = ContextProvider::Tiny.observe(&img, &srgb_to_lab(&img)).unwrap();
            prop_assert_eq!(s.len(), TINY_DIM + HISTOGRAM_LEN);
            let dense = s.to_dense();
            let (ctx, hist) = (tiny_context(&img), lab_histogram(&img));
            prop_assert_eq!(&dense[..TINY_DIM], ctx.values());
            prop_assert_eq!(&dense[TINY_DIM..], hist.bins());
            for (i, v) in s.nonzero() {
                prop_assert_eq!(dense[i], v);
            }
        }

        #[test]
        fn ctxf_round_trip(values in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let mut buf = Vec::new();
            write_ctxf(&mut buf, &values).unwrap();
            prop_assert_eq!(buf.len(), 12 + 4 * values.len());
            let back = read_ctxf(buf.as_slice()).unwrap();
            prop_assert_eq!(back.values(), values.as_slice());
            prop_assert!(read_ctxf(&buf[..buf.len() - 1]).is_err());
        }
    }
}
