//! Small trainable per-pixel perceptron.
//!
//! Each pixel is described by 11 features: RGB (3), normalized x and y (2),
//! geodesic distance to each class's clicks divided by the image diagonal and
//! clamped to 1 (3), and each class's click-disk indicator (3). Two ReLU
//! hidden layers of width 32 map the features to three class logits.
//!
//! # Checkpoint layout
//!
//! All integers are little-endian `u32`, all parameters little-endian `f32`:
//!
//! | offset | field |
//! |--------|-------|
//! | 0 | magic `b"TMLP"` |
//! | 4 | format version (1) |
//! | 8 | feature dimension |
//! | 12 | hidden layer count `L` |
//! | 16 | `L` hidden widths |
//! | 16 + 4L | output dimension |
//! | 20 + 4L | parameter count `P` |
//! | 24 + 4L | `P` parameters |
//!
//! Parameters are stored layer by layer as the weight matrix (row-major,
//! `[out][in]`) followed by the bias vector.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_input_dims, diagonal, GeodesicPredictor, Predictor, PredictorInput, TrimapLogits};
use crate::error::{Error, Result};
use crate::raster::geodesic_distance;
use crate::types::{is_all_false, LabelClass, Raster};

pub const FEATURE_DIM: usize = 11;
const MAGIC: &[u8; 4] = b"TMLP";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpLayout {
    pub feature_dim: usize,
    pub hidden: [usize; 2],
    pub output: usize,
}

impl Default for MlpLayout {
    fn default() -> Self {
        Self {
            feature_dim: FEATURE_DIM,
            hidden: [32, 32],
            output: 3,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl MlpLayout {
    fn offsets(&self) -> Offsets {
        let [h1, h2] = self.hidden;
        let w1 = 0;
        let b1 = w1 + h1 * self.feature_dim;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + self.output * h2;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            end: b3 + self.output,
        }
    }

    pub fn param_count(&self) -> usize {
        self.offsets().end
    }
}

/// Hidden activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    h1: Vec<f64>,
    h2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpPredictor {
    layout: MlpLayout,
    params: Vec<f64>,
    /// Edge weight of the geodesic distance features.
    pub lambda: f64,
}

impl MlpPredictor {
    pub fn new(layout: MlpLayout, params: Vec<f64>) -> Result<Self> {
        if layout.feature_dim != FEATURE_DIM || layout.output != 3 {
            return Err(Error::Checkpoint(format!(
                "unsupported layout {layout:?} (feature dim must be {FEATURE_DIM}, output 3)"
            )));
        }
        if params.len() != layout.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.param_count(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFiniteParameter(i));
        }
        Ok(Self {
            layout,
            params,
            lambda: GeodesicPredictor::DEFAULT_LAMBDA,
        })
    }

    pub fn zeros() -> Self {
        let layout = MlpLayout::default();
        Self::new(layout, vec![0.0; layout.param_count()]).expect("default layout")
    }

    /// He-uniform weights and zero biases. Values are rounded through `f32`
    /// so that a freshly initialized model survives a checkpoint round trip
    /// unchanged.
    pub fn init(seed: u64) -> Self {
        let layout = MlpLayout::default();
        let o = layout.offsets();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; o.end];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, gain: f64| {
            let bound = gain * (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound) as f32 as f64;
            }
        };
        fill(o.w1..o.b1, layout.feature_dim, 1.0);
        fill(o.w2..o.b2, layout.hidden[0], 1.0);
        fill(o.w3..o.b3, layout.hidden[1], 0.5);
        Self::new(layout, params).expect("default layout")
    }

    pub fn layout(&self) -> MlpLayout {
        self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        *self = Self {
            lambda: self.lambda,
            ..Self::new(self.layout, params)?
        };
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn features(&self, input: &PredictorInput) -> Result<Vec<[f64; FEATURE_DIM]>> {
        pixel_features(input, self.lambda)
    }

    pub fn forward(&self, features: &[[f64; FEATURE_DIM]]) -> (Vec<[f64; 3]>, ForwardCache) {
        let o = self.layout.offsets();
        let [n1, n2] = self.layout.hidden;
        let p = &self.params;
        let n = features.len();
        let mut h1 = vec![0.0; n * n1];
        let mut h2 = vec![0.0; n * n2];
        let mut out = vec![[0.0; 3]; n];
        for (px, f) in features.iter().enumerate() {
            let a1 = &mut h1[px * n1..(px + 1) * n1];
            for (j, a) in a1.iter_mut().enumerate() {
                let row = &p[o.w1 + j * FEATURE_DIM..o.w1 + (j + 1) * FEATURE_DIM];
                let z = p[o.b1 + j] + row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>();
                *a = z.max(0.0);
            }
            let a2 = &mut h2[px * n2..(px + 1) * n2];
            for (k, a) in a2.iter_mut().enumerate() {
                let row = &p[o.w2 + k * n1..o.w2 + (k + 1) * n1];
                let z = p[o.b2 + k] + row.iter().zip(a1.iter()).map(|(w, x)| w * x).sum::<f64>();
                *a = z.max(0.0);
            }
            for (m, v) in out[px].iter_mut().enumerate() {
                let row = &p[o.w3 + m * n2..o.w3 + (m + 1) * n2];
                *v = p[o.b3 + m] + row.iter().zip(a2.iter()).map(|(w, x)| w * x).sum::<f64>();
            }
        }
        (out, ForwardCache { h1, h2 })
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient with respect to the logits.
    pub fn backward(
        &self,
        features: &[[f64; FEATURE_DIM]],
        cache: &ForwardCache,
        dlogits: &[[f64; 3]],
    ) -> Vec<f64> {
        let o = self.layout.offsets();
        let [n1, n2] = self.layout.hidden;
        let p = &self.params;
        let mut grad = vec![0.0; o.end];
        let mut g2 = vec![0.0; n2];
        let mut g1 = vec![0.0; n1];
        for (px, f) in features.iter().enumerate() {
            let a1 = &cache.h1[px * n1..(px + 1) * n1];
            let a2 = &cache.h2[px * n2..(px + 1) * n2];
            let go = &dlogits[px];

            g2.fill(0.0);
            for m in 0..3 {
                if go[m] == 0.0 {
                    continue;
                }
                grad[o.b3 + m] += go[m];
                for k in 0..n2 {
                    grad[o.w3 + m * n2 + k] += go[m] * a2[k];
                    g2[k] += p[o.w3 + m * n2 + k] * go[m];
                }
            }
            g1.fill(0.0);
            for k in 0..n2 {
                if a2[k] <= 0.0 || g2[k] == 0.0 {
                    continue;
                }
                let gk = g2[k];
                grad[o.b2 + k] += gk;
                let wrow = o.w2 + k * n1;
                for j in 0..n1 {
                    grad[wrow + j] += gk * a1[j];
                    g1[j] += p[wrow + j] * gk;
                }
            }
            for j in 0..n1 {
                if a1[j] <= 0.0 || g1[j] == 0.0 {
                    continue;
                }
                let gj = g1[j];
                grad[o.b1 + j] += gj;
                let wrow = o.w1 + j * FEATURE_DIM;
                for i in 0..FEATURE_DIM {
                    grad[wrow + i] += gj * f[i];
                }
            }
        }
        grad
    }
}

impl Predictor for MlpPredictor {
    fn id(&self) -> String {
        "mlp".into()
    }

    fn predict(&self, input: &PredictorInput) -> Result<TrimapLogits> {
        let features = self.features(input)?;
        let (logits, _) = self.forward(&features);
        let (w, h) = input.image.dims();
        Raster::from_vec(w, h, logits)
    }
}

/// Per-pixel feature vectors in row-major order.
pub fn pixel_features(input: &PredictorInput, lambda: f64) -> Result<Vec<[f64; FEATURE_DIM]>> {
    check_input_dims(input)?;
    let (w, h) = input.image.dims();
    let diag = diagonal(w, h);
    let mut geo: [Option<Vec<f64>>; 3] = [None, None, None];
    for c in LabelClass::ALL {
        let seeds = &input.click_masks[c];
        if !is_all_false(seeds) {
            let g = geodesic_distance(&input.image, seeds, lambda)?;
            geo[c.index()] = Some(g.into_vec());
        }
    }
    let sx = if w > 1 { 1.0 / (w - 1) as f64 } else { 0.0 };
    let sy = if h > 1 { 1.0 / (h - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(w * h);
    for (i, px) in input.image.data().iter().enumerate() {
        let (x, y) = (i % w, i / w);
        let mut f = [0.0; FEATURE_DIM];
        f[0] = px[0] as f64;
        f[1] = px[1] as f64;
        f[2] = px[2] as f64;
        f[3] = x as f64 * sx;
        f[4] = y as f64 * sy;
        for c in 0..3 {
            f[5 + c] = geo[c].as_ref().map_or(1.0, |g| (g[i] / diag).min(1.0));
            f[8 + c] = if input.click_masks.0[c].data()[i] { 1.0 } else { 0.0 };
        }
        out.push(f);
    }
    Ok(out)
}

pub fn write_checkpoint(model: &MlpPredictor, mut w: impl Write) -> std::io::Result<()> {
    let layout = model.layout;
    let mut buf = Vec::with_capacity(32 + 4 * model.params.len());
    buf.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        layout.feature_dim as u32,
        layout.hidden.len() as u32,
        layout.hidden[0] as u32,
        layout.hidden[1] as u32,
        layout.output as u32,
        model.params.len() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &p in &model.params {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<MlpPredictor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(cursor..cursor + n)
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        cursor += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut u32_at = || -> Result<usize> {
        let s = take(4)?;
        Ok(u32::from_le_bytes(s.try_into().unwrap()) as usize)
    };
    let version = u32_at()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let feature_dim = u32_at()?;
    let layers = u32_at()?;
    if layers != 2 {
        return Err(Error::Checkpoint(format!("expected 2 hidden layers, found {layers}")));
    }
    let hidden = [u32_at()?, u32_at()?];
    let output = u32_at()?;
    let count = u32_at()?;
    let layout = MlpLayout {
        feature_dim,
        hidden,
        output,
    };
    let raw = take(4 * count)?;
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MlpPredictor::new(layout, params)
}

impl MlpPredictor {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_checkpoint(self, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_checkpoint(std::io::BufReader::new(f))
    }
}
