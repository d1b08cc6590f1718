use crate::types::{Image, Raster};

/// Bilinear resampling with pixel centers aligned (`half-pixel` convention).
pub fn resize_bilinear(img: &Image, width: usize, height: usize) -> Image {
    if img.dims() == (width, height) {
        return img.clone();
    }
    let (sw, sh) = img.dims();
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;
    let coord = |dst: usize, scale: f64, limit: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (limit - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(limit - 1);
        (lo, hi, src - lo as f64)
    };
    Raster::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = coord(x, sx, sw);
        let (y0, y1, fy) = coord(y, sy, sh);
        let mut out = [0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = img.get(x0, y0)[c] as f64 * (1.0 - fx) + img.get(x1, y0)[c] as f64 * fx;
            let bot = img.get(x0, y1)[c] as f64 * (1.0 - fx) + img.get(x1, y1)[c] as f64 * fx;
            *o = ((top * (1.0 - fy) + bot * fy) as f32).clamp(0.0, 1.0);
        }
        out
    })
}

/// Nearest-neighbor resampling; used to bring label rasters back to native size.
pub fn resize_nearest<T: Clone>(r: &Raster<T>, width: usize, height: usize) -> Raster<T> {
    if r.dims() == (width, height) {
        return r.clone();
    }
    let (sw, sh) = r.dims();
    Raster::from_fn(width, height, |x, y| {
        let sx = ((x * sw) / width).min(sw - 1);
        let sy = ((y * sh) / height).min(sh - 1);
        r.get(sx, sy).clone()
    })
}
