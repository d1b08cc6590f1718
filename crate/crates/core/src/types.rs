//! Raster and interaction data model shared by every other module.
//!
//! Rasters are row-major with `(0, 0)` at the top-left corner; pixel centers
//! sit at integer coordinates.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trimap label. The derived ordering (`Foreground < Background < Unknown`)
/// is the tie-break order for every argmax in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LabelClass {
    #[serde(rename = "F", alias = "foreground")]
    Foreground,
    #[serde(rename = "B", alias = "background")]
    Background,
    #[serde(rename = "U", alias = "unknown")]
    Unknown,
}

impl LabelClass {
    pub const ALL: [LabelClass; 3] = [
        LabelClass::Foreground,
        LabelClass::Background,
        LabelClass::Unknown,
    ];

    pub const fn index(self) -> usize {
        match self {
            LabelClass::Foreground => 0,
            LabelClass::Background => 1,
            LabelClass::Unknown => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub const fn code(self) -> char {
        match self {
            LabelClass::Foreground => 'F',
            LabelClass::Background => 'B',
            LabelClass::Unknown => 'U',
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "F" | "f" | "foreground" => Some(LabelClass::Foreground),
            "B" | "b" | "background" => Some(LabelClass::Background),
            "U" | "u" | "unknown" => Some(LabelClass::Unknown),
            _ => None,
        }
    }

    /// 8-bit trimap PNG value: background 0, unknown 128, foreground 255.
    pub const fn to_u8(self) -> u8 {
        match self {
            LabelClass::Foreground => 255,
            LabelClass::Background => 0,
            LabelClass::Unknown => 128,
        }
    }

    /// Inverse of [`LabelClass::to_u8`]. Values other than 0 and 255 are read
    /// as unknown, which is how hand-painted trimaps are usually interpreted.
    pub const fn from_u8(v: u8) -> Self {
        match v {
            0 => LabelClass::Background,
            255 => LabelClass::Foreground,
            _ => LabelClass::Unknown,
        }
    }
}

impl fmt::Display for LabelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One value per [`LabelClass`], indexable by class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerClass<T>(pub [T; 3]);

impl<T> PerClass<T> {
    pub fn from_fn(mut f: impl FnMut(LabelClass) -> T) -> Self {
        PerClass(LabelClass::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (LabelClass, &T)> {
        LabelClass::ALL.into_iter().zip(self.0.iter())
    }

    pub fn map<U>(self, f: impl FnMut(T) -> U) -> PerClass<U> {
        PerClass(self.0.map(f))
    }
}

impl<T> Index<LabelClass> for PerClass<T> {
    type Output = T;
    fn index(&self, c: LabelClass) -> &T {
        &self.0[c.index()]
    }
}

impl<T> IndexMut<LabelClass> for PerClass<T> {
    fn index_mut(&mut self, c: LabelClass) -> &mut T {
        &mut self.0[c.index()]
    }
}

/// A dense row-major 2D grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyRaster { width, height });
        }
        if data.len() != width * height {
            return Err(Error::BadRasterLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a raster by evaluating `f(x, y)` at every pixel.
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be >= 1");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let i = self.offset(x, y);
        self.data[i] = v;
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn ensure_same_dims<U>(&self, other: &Raster<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Pixelwise combination of two same-sized rasters.
    pub fn zip_map<U, V>(&self, other: &Raster<U>, mut f: impl FnMut(&T, &U) -> V) -> Result<Raster<V>> {
        self.ensure_same_dims(other)?;
        Ok(Raster {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| f(a, b))
                .collect(),
        })
    }

    /// Iterates `(x, y, &value)` in row-major order.
    pub fn enumerate(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, v)| (i % w, i / w, v))
    }
}

impl<T: Clone> Raster<T> {
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be >= 1");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn transpose(&self) -> Self {
        Raster::from_fn(self.height, self.width, |x, y| self.get(y, x).clone())
    }
}

/// RGB triple with channels in `[0, 1]`.
pub type Rgb = [f32; 3];
pub type Image = Raster<Rgb>;
pub type Trimap = Raster<LabelClass>;
pub type BinaryMask = Raster<bool>;
/// Per-pixel Euclidean distance in pixels.
pub type DistanceMap = Raster<f64>;
/// Per-pixel opacity in `[0, 1]`.
pub type AlphaMatte = Raster<f32>;

/// Rejects images whose channels leave `[0, 1]` or are not finite.
pub fn check_image(img: &Image) -> Result<()> {
    for (x, y, px) in img.enumerate() {
        if px.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::OutOfRange(format!("image pixel ({x}, {y}) = {px:?}")));
        }
    }
    Ok(())
}

pub fn check_alpha(alpha: &AlphaMatte) -> Result<()> {
    for (x, y, a) in alpha.enumerate() {
        if !(0.0..=1.0).contains(a) {
            return Err(Error::OutOfRange(format!("alpha pixel ({x}, {y}) = {a}")));
        }
    }
    Ok(())
}

pub fn count_true(m: &BinaryMask) -> usize {
    m.data().iter().filter(|&&b| b).count()
}

pub fn is_all_false(m: &BinaryMask) -> bool {
    !m.data().iter().any(|&b| b)
}

/// A single user (or simulated) click.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub x: usize,
    pub y: usize,
    pub label: LabelClass,
    #[serde(default)]
    pub ordinal: usize,
}

impl Click {
    pub fn new(x: usize, y: usize, label: LabelClass, ordinal: usize) -> Self {
        Self {
            x,
            y,
            label,
            ordinal,
        }
    }
}

/// Constants of the click simulator and the loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Error-level threshold below which unknown clicks take priority.
    pub alpha_threshold: f64,
    /// Unknown error size (pixels) at or below which the priority is revoked.
    pub beta_threshold: f64,
    /// Focusing exponent of the normalized focal loss.
    pub gamma: f64,
    pub max_clicks: usize,
    /// Click disk radius in pixels at the working resolution.
    pub click_radius: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            alpha_threshold: 0.1,
            beta_threshold: 2.0,
            gamma: 2.0,
            max_clicks: 10,
            click_radius: 5.0,
        }
    }
}

impl SimulationConfig {
    /// The closed interval `[0, 1]` is accepted for `alpha_threshold` so that
    /// parameter sweeps can hit the degenerate endpoints.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_threshold) {
            return Err(Error::InvalidConfig(format!(
                "alpha_threshold must lie in [0, 1], got {}",
                self.alpha_threshold
            )));
        }
        if self.beta_threshold.is_nan() || self.beta_threshold < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta_threshold must be >= 0, got {}",
                self.beta_threshold
            )));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.max_clicks < 1 {
            return Err(Error::InvalidConfig("max_clicks must be >= 1".into()));
        }
        if !self.click_radius.is_finite() || self.click_radius < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "click_radius must be >= 1, got {}",
                self.click_radius
            )));
        }
        Ok(())
    }
}

/// Binary mask of pixels labeled `c`.
pub fn trimap_to_mask(t: &Trimap, c: LabelClass) -> BinaryMask {
    t.map(|&l| l == c)
}

pub fn trimap_to_masks(t: &Trimap) -> PerClass<BinaryMask> {
    PerClass::from_fn(|c| trimap_to_mask(t, c))
}

/// Rebuilds a trimap from three masks that partition the raster.
pub fn masks_to_trimap(masks: &PerClass<BinaryMask>) -> Result<Trimap> {
    let f = &masks[LabelClass::Foreground];
    f.ensure_same_dims(&masks[LabelClass::Background])?;
    f.ensure_same_dims(&masks[LabelClass::Unknown])?;
    let (w, h) = f.dims();
    let mut data = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let mut hit = None;
        for c in LabelClass::ALL {
            if masks[c].data()[i] {
                if hit.is_some() {
                    return Err(Error::OutOfRange(format!(
                        "pixel ({}, {}) is claimed by more than one class",
                        i % w,
                        i / w
                    )));
                }
                hit = Some(c);
            }
        }
        match hit {
            Some(c) => data.push(c),
            None => {
                return Err(Error::OutOfRange(format!(
                    "pixel ({}, {}) is claimed by no class",
                    i % w,
                    i / w
                )))
            }
        }
    }
    Raster::from_vec(w, h, data)
}

/// Rasterizes clicks as Euclidean disks, one mask per class. Masks of
/// different classes may overlap.
pub fn encode_clicks(
    clicks: &[Click],
    width: usize,
    height: usize,
    radius: f64,
) -> Result<PerClass<BinaryMask>> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyRaster { width, height });
    }
    let mut masks = PerClass::from_fn(|_| Raster::filled(width, height, false));
    let r2 = radius * radius;
    let reach = radius.max(0.0).floor() as i64;
    for click in clicks {
        if click.x >= width || click.y >= height {
            return Err(Error::OutOfBounds {
                x: click.x as i64,
                y: click.y as i64,
                width,
                height,
            });
        }
        let mask = &mut masks[click.label];
        let (cx, cy) = (click.x as i64, click.y as i64);
        for dy in -reach..=reach {
            let y = cy + dy;
            if y < 0 || y >= height as i64 {
                continue;
            }
            for dx in -reach..=reach {
                let x = cx + dx;
                if x < 0 || x >= width as i64 {
                    continue;
                }
                if ((dx * dx + dy * dy) as f64) <= r2 {
                    mask.set(x as usize, y as usize, true);
                }
            }
        }
    }
    Ok(masks)
}
