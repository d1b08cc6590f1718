//! Exact Euclidean distance transform.
//!
//! Separable two-pass algorithm: a per-column scan for the vertical distance
//! to the nearest site, then a per-row lower envelope of parabolas
//! (Felzenszwalb & Huttenlocher). All squared distances are integers, so the
//! result is exact; the only floating-point step is the parabola intersection,
//! whose rounding cannot change which parabola attains the minimum at an
//! integer abscissa.

use crate::error::{Error, Result};
use crate::types::{BinaryMask, DistanceMap, Raster};

/// Sentinel for "no site reachable".
pub const UNREACHABLE: u64 = u64::MAX;

/// Squared Euclidean distance from every pixel to the nearest `true` pixel of
/// `sites`. With `border_is_site`, every pixel outside the raster also counts
/// as a site. Pixels with no site at all get [`UNREACHABLE`].
pub fn squared_distance_to_sites(sites: &BinaryMask, border_is_site: bool) -> Raster<u64> {
    let (w, h) = sites.dims();
    let mut vertical: Vec<Option<u64>> = vec![None; w * h];

    for x in 0..w {
        // downward sweep
        let mut last: Option<i64> = if border_is_site { Some(-1) } else { None };
        for y in 0..h {
            if *sites.get(x, y) {
                last = Some(y as i64);
            }
            vertical[y * w + x] = last.map(|s| (y as i64 - s) as u64);
        }
        // upward sweep
        let mut last: Option<i64> = if border_is_site { Some(h as i64) } else { None };
        for y in (0..h).rev() {
            if *sites.get(x, y) {
                last = Some(y as i64);
            }
            if let Some(s) = last {
                let d = (s - y as i64) as u64;
                let slot = &mut vertical[y * w + x];
                *slot = Some(slot.map_or(d, |v| v.min(d)));
            }
        }
    }

    let mut out = vec![UNREACHABLE; w * h];
    let mut parabolas: Vec<(i64, i64)> = Vec::with_capacity(w + 2);
    let mut env = Envelope::with_capacity(w + 2);
    for y in 0..h {
        parabolas.clear();
        if border_is_site {
            parabolas.push((-1, 0));
        }
        for x in 0..w {
            if let Some(g) = vertical[y * w + x] {
                parabolas.push((x as i64, (g * g) as i64));
            }
        }
        if border_is_site {
            parabolas.push((w as i64, 0));
        }
        env.evaluate(&parabolas, &mut out[y * w..(y + 1) * w]);
    }
    Raster::from_vec(w, h, out).expect("dimensions preserved")
}

/// Lower envelope of the parabolas `(x - p)^2 + f` for sorted sites `(p, f)`.
struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            vertices: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    fn evaluate(&mut self, sites: &[(i64, i64)], out: &mut [u64]) {
        if sites.is_empty() {
            out.fill(UNREACHABLE);
            return;
        }
        let intersect = |a: (i64, i64), b: (i64, i64)| -> f64 {
            let num = (a.1 + a.0 * a.0) - (b.1 + b.0 * b.0);
            num as f64 / (2 * (a.0 - b.0)) as f64
        };
        self.vertices.clear();
        self.bounds.clear();
        self.vertices.push(0);
        self.bounds.push(f64::NEG_INFINITY);
        self.bounds.push(f64::INFINITY);
        for q in 1..sites.len() {
            let mut s = intersect(sites[q], sites[*self.vertices.last().unwrap()]);
            while s <= self.bounds[self.vertices.len() - 1] {
                self.vertices.pop();
                self.bounds.pop();
                s = intersect(sites[q], sites[*self.vertices.last().unwrap()]);
            }
            let k = self.vertices.len() - 1;
            self.vertices.push(q);
            self.bounds[k + 1] = s;
            self.bounds.push(f64::INFINITY);
        }
        let mut k = 0;
        for (x, slot) in out.iter_mut().enumerate() {
            while self.bounds[k + 1] < x as f64 {
                k += 1;
            }
            let (p, f) = sites[self.vertices[k]];
            let dx = x as i64 - p;
            *slot = (dx * dx + f) as u64;
        }
    }
}

/// Euclidean distance from every `true` pixel to the nearest `false` pixel,
/// counting every pixel outside the image as `false`. Zero on `false` pixels.
pub fn distance_transform(m: &BinaryMask) -> DistanceMap {
    let sites = m.map(|&b| !b);
    squared_distance_to_sites(&sites, true).map(|&d2| (d2 as f64).sqrt())
}

/// Largest value of the map, 0 for an all-zero map.
pub fn max_of(d: &DistanceMap) -> f64 {
    d.data().iter().copied().fold(0.0, f64::max)
}

/// Location of the maximum; ties go to the smallest `y`, then smallest `x`.
pub fn argmax_pixel(d: &DistanceMap) -> Result<(usize, usize)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in d.data().iter().enumerate() {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (i, _) = best.ok_or(Error::NoErrorRegion)?;
    Ok((i % d.width(), i / d.width()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Nearest-false search over all pixel pairs plus the nearest outside pixel.
    fn brute_force(m: &BinaryMask) -> DistanceMap {
        let (w, h) = m.dims();
        Raster::from_fn(w, h, |x, y| {
            if !*m.get(x, y) {
                return 0.0;
            }
            let border = (x + 1).min(y + 1).min(w - x).min(h - y) as u64;
            let mut best = border * border;
            for (qx, qy, &v) in m.enumerate() {
                if !v {
                    let dx = qx as i64 - x as i64;
                    let dy = qy as i64 - y as i64;
                    best = best.min((dx * dx + dy * dy) as u64);
                }
            }
            (best as f64).sqrt()
        })
    }

    fn block_5x5() -> BinaryMask {
        Raster::from_fn(5, 5, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y))
    }

    #[test]
    fn all_false_is_all_zero() {
        let d = distance_transform(&Raster::filled(6, 4, false));
        assert!(d.data().iter().all(|&v| v == 0.0));
        assert_eq!(max_of(&d), 0.0);
        assert!(matches!(argmax_pixel(&d), Err(Error::NoErrorRegion)));
    }

    #[test]
    fn centered_block() {
        let m = block_5x5();
        let d = distance_transform(&m);
        assert_eq!(d, brute_force(&m));
        assert_eq!(*d.get(2, 2), 2.0);
        assert_eq!(max_of(&d), 2.0);
        assert_eq!(argmax_pixel(&d).unwrap(), (2, 2));
    }

    #[test]
    fn single_pixel_is_one() {
        for (x, y) in [(0, 0), (3, 4), (6, 2)] {
            let m = Raster::from_fn(7, 5, |px, py| (px, py) == (x, y));
            let d = distance_transform(&m);
            assert_eq!(*d.get(x, y), 1.0);
            assert_eq!(argmax_pixel(&d).unwrap(), (x, y));
        }
    }

    #[test]
    fn all_true_is_bounded_by_border() {
        let m = Raster::filled(9, 3, true);
        let d = distance_transform(&m);
        assert_eq!(d, brute_force(&m));
        assert_eq!(max_of(&d), 2.0);
    }

    #[test]
    fn argmax_tie_prefers_smaller_y() {
        let mut d = Raster::filled(4, 7, 0.0);
        d.set(1, 5, 3.0);
        d.set(2, 1, 3.0);
        assert_eq!(argmax_pixel(&d).unwrap(), (2, 1));
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let w = rng.random_range(1..=24);
            let h = rng.random_range(1..=24);
            let p = rng.random_range(0.3..1.0);
            let m = Raster::from_fn(w, h, |_, _| rng.random_bool(p));
            assert_eq!(distance_transform(&m), brute_force(&m));
        }
    }

    #[test]
    fn sites_without_border() {
        let sites = Raster::from_fn(5, 1, |x, _| x == 0);
        let d = squared_distance_to_sites(&sites, false);
        assert_eq!(d.data(), &[0, 1, 4, 9, 16]);
        let none = squared_distance_to_sites(&Raster::filled(3, 3, false), false);
        assert!(none.data().iter().all(|&v| v == UNREACHABLE));
    }

    #[test]
    fn transposition_invariance_of_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = Raster::from_fn(13, 6, |_, _| rng.random_bool(0.8));
            let a = max_of(&distance_transform(&m));
            let b = max_of(&distance_transform(&m.transpose()));
            assert_eq!(a, b);
        }
    }
}
