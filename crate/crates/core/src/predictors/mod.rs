//! Trimap predictors responding to an image plus accumulated clicks.
//!
//! Predictors run at a working resolution: images larger than the working
//! size are downscaled bilinearly (each axis clamped to the working size
//! independently), native-coordinate clicks are mapped to working
//! coordinates, and the hard trimap is upscaled back with nearest-neighbor
//! sampling. See [`Frame`].

mod geodesic;
mod mlp;
mod oracle;

pub use geodesic::GeodesicPredictor;
pub use mlp::{
    pixel_features, read_checkpoint, write_checkpoint, ForwardCache, MlpLayout, MlpPredictor,
    FEATURE_DIM,
};
pub use oracle::OraclePredictor;

use crate::error::{Error, Result};
use crate::raster::{resize_bilinear, resize_nearest};
use crate::types::{encode_clicks, BinaryMask, Click, Image, LabelClass, PerClass, Raster, Trimap};

pub const DEFAULT_WORKING_RESOLUTION: usize = 448;

/// Unnormalized per-pixel class scores, indexed by `LabelClass::index`.
pub type TrimapLogits = Raster<[f64; 3]>;

#[derive(Clone, Debug)]
pub struct PredictorInput {
    pub image: Image,
    pub click_masks: PerClass<BinaryMask>,
    pub previous: Option<Trimap>,
}

impl PredictorInput {
    pub fn new(image: Image, click_masks: PerClass<BinaryMask>, previous: Option<Trimap>) -> Result<Self> {
        for m in &click_masks.0 {
            image.ensure_same_dims(m)?;
        }
        if let Some(p) = &previous {
            image.ensure_same_dims(p)?;
        }
        Ok(Self {
            image,
            click_masks,
            previous,
        })
    }

    pub fn has_clicks(&self) -> bool {
        self.click_masks.0.iter().any(|m| m.data().iter().any(|&b| b))
    }
}

pub trait Predictor: Send + Sync {
    fn id(&self) -> String;
    fn predict(&self, input: &PredictorInput) -> Result<TrimapLogits>;
}

/// Argmax per pixel; ties resolve in `LabelClass` order.
pub fn logits_to_trimap(logits: &TrimapLogits) -> Trimap {
    logits.map(|l| {
        let mut best = 0;
        for i in 1..3 {
            if l[i] > l[best] {
                best = i;
            }
        }
        LabelClass::from_index(best).expect("index < 3")
    })
}

/// Numerically stable softmax over the three class scores.
pub fn softmax(l: &[f64; 3]) -> [f64; 3] {
    let m = l[0].max(l[1]).max(l[2]);
    let e = [(l[0] - m).exp(), (l[1] - m).exp(), (l[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

pub(crate) fn check_input_dims(input: &PredictorInput) -> Result<()> {
    for m in &input.click_masks.0 {
        input.image.ensure_same_dims(m)?;
    }
    if let Some(p) = &input.previous {
        input.image.ensure_same_dims(p)?;
    }
    Ok(())
}

pub(crate) fn diagonal(w: usize, h: usize) -> f64 {
    ((w * w + h * h) as f64).sqrt()
}

/// Working size for a native size: each axis clamped to `resolution`.
pub fn working_dims(native: (usize, usize), resolution: usize) -> (usize, usize) {
    (native.0.min(resolution).max(1), native.1.min(resolution).max(1))
}

/// A native image together with its working-resolution copy.
#[derive(Clone, Debug)]
pub struct Frame {
    native_dims: (usize, usize),
    working: Image,
}

impl Frame {
    pub fn new(native: &Image, resolution: usize) -> Self {
        let (w, h) = working_dims(native.dims(), resolution);
        Self {
            native_dims: native.dims(),
            working: resize_bilinear(native, w, h),
        }
    }

    pub fn native_dims(&self) -> (usize, usize) {
        self.native_dims
    }

    pub fn working_image(&self) -> &Image {
        &self.working
    }

    pub fn working_dims(&self) -> (usize, usize) {
        self.working.dims()
    }

    /// Maps a native-coordinate click to working coordinates.
    pub fn to_working(&self, click: &Click) -> Result<Click> {
        let (nw, nh) = self.native_dims;
        if click.x >= nw || click.y >= nh {
            return Err(Error::OutOfBounds {
                x: click.x as i64,
                y: click.y as i64,
                width: nw,
                height: nh,
            });
        }
        let (ww, wh) = self.working.dims();
        let x = (((click.x as f64 + 0.5) * ww as f64 / nw as f64) as usize).min(ww - 1);
        let y = (((click.y as f64 + 0.5) * wh as f64 / nh as f64) as usize).min(wh - 1);
        Ok(Click { x, y, ..*click })
    }

    /// Downscales a native label raster to working size.
    pub fn trimap_to_working(&self, t: &Trimap) -> Trimap {
        let (w, h) = self.working.dims();
        resize_nearest(t, w, h)
    }

    pub fn input(&self, clicks: &[Click], radius: f64, previous: Option<&Trimap>) -> Result<PredictorInput> {
        let working: Vec<Click> = clicks.iter().map(|c| self.to_working(c)).collect::<Result<_>>()?;
        let (w, h) = self.working.dims();
        let masks = encode_clicks(&working, w, h, radius)?;
        let previous = match previous {
            Some(p) => {
                if p.dims() != self.native_dims {
                    return Err(Error::DimensionMismatch {
                        expected: self.native_dims,
                        found: p.dims(),
                    });
                }
                Some(self.trimap_to_working(p))
            }
            None => None,
        };
        PredictorInput::new(self.working.clone(), masks, previous)
    }

    /// Runs `predictor` and returns the hard trimap at native resolution.
    /// Without clicks the result is all background, whatever the predictor.
    pub fn predict(
        &self,
        predictor: &dyn Predictor,
        clicks: &[Click],
        radius: f64,
        previous: Option<&Trimap>,
    ) -> Result<Trimap> {
        if clicks.is_empty() {
            let (nw, nh) = self.native_dims;
            return Ok(Raster::filled(nw, nh, LabelClass::Background));
        }
        let input = self.input(clicks, radius, previous)?;
        let logits = predictor.predict(&input)?;
        let (nw, nh) = self.native_dims;
        Ok(resize_nearest(&logits_to_trimap(&logits), nw, nh))
    }
}
