//! Gradient-weighted geodesic distance over the 8-connected pixel grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::types::{BinaryMask, Image, Raster, Rgb};

/// Accumulated path cost from a seed set; zero exactly on the seeds.
pub type GeodesicField = Raster<f64>;

const NEIGHBORS: [(i64, i64, f64); 8] = [
    (-1, -1, std::f64::consts::SQRT_2),
    (0, -1, 1.0),
    (1, -1, std::f64::consts::SQRT_2),
    (-1, 0, 1.0),
    (1, 0, 1.0),
    (-1, 1, std::f64::consts::SQRT_2),
    (0, 1, 1.0),
    (1, 1, std::f64::consts::SQRT_2),
];

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on cost, then on index for deterministic pops
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub(crate) fn color_distance(a: &Rgb, b: &Rgb) -> f64 {
    let dr = (a[0] - b[0]) as f64;
    let dg = (a[1] - b[1]) as f64;
    let db = (a[2] - b[2]) as f64;
    (dr * dr + dg * dg + db * db).sqrt()
}

/// Cost of a single grid step of Euclidean length `len` between two colors.
#[inline]
pub(crate) fn step_cost(len: f64, a: &Rgb, b: &Rgb, lambda: f64) -> f64 {
    len * (1.0 + lambda * color_distance(a, b))
}

/// Shortest-path cost from `seeds` where a step of length `l` between `p` and
/// `q` costs `l * (1 + lambda * |img(p) - img(q)|)`.
pub fn geodesic_distance(img: &Image, seeds: &BinaryMask, lambda: f64) -> Result<GeodesicField> {
    img.ensure_same_dims(seeds)?;
    let (w, h) = img.dims();
    let mut dist = vec![f64::INFINITY; w * h];
    let mut heap = BinaryHeap::new();
    for (i, &s) in seeds.data().iter().enumerate() {
        if s {
            dist[i] = 0.0;
            heap.push(Entry { cost: 0.0, index: i });
        }
    }
    if heap.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let pixels = img.data();
    while let Some(Entry { cost, index }) = heap.pop() {
        if cost > dist[index] {
            continue;
        }
        let (x, y) = ((index % w) as i64, (index / w) as i64);
        for &(dx, dy, len) in &NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let n = ny as usize * w + nx as usize;
            let next = cost + step_cost(len, &pixels[index], &pixels[n], lambda);
            if next < dist[n] {
                dist[n] = next;
                heap.push(Entry { cost: next, index: n });
            }
        }
    }
    Raster::from_vec(w, h, dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 8-connected chamfer distance from a set of seeds by brute force.
    fn chamfer(seeds: &BinaryMask) -> Raster<f64> {
        Raster::from_fn(seeds.width(), seeds.height(), |x, y| {
            seeds
                .enumerate()
                .filter(|(_, _, &s)| s)
                .map(|(sx, sy, _)| {
                    let dx = (sx as f64 - x as f64).abs();
                    let dy = (sy as f64 - y as f64).abs();
                    std::f64::consts::SQRT_2 * dx.min(dy) + (dx - dy).abs()
                })
                .fold(f64::INFINITY, f64::min)
        })
    }

    #[test]
    fn uniform_image_gives_chamfer_distance() {
        let img = Raster::filled(11, 7, [0.3, 0.6, 0.2]);
        let seeds = Raster::from_fn(11, 7, |x, y| (x, y) == (2, 3) || (x, y) == (9, 0));
        for lambda in [0.0, 1.0, 50.0] {
            let g = geodesic_distance(&img, &seeds, lambda).unwrap();
            let c = chamfer(&seeds);
            for (a, b) in g.data().iter().zip(c.data()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_lambda_ignores_content() {
        let a = Raster::from_fn(6, 6, |x, y| [x as f32 / 6.0, y as f32 / 6.0, 0.5]);
        let b = Raster::filled(6, 6, [1.0, 0.0, 0.0]);
        let seeds = Raster::from_fn(6, 6, |x, y| x == 0 && y == 5);
        assert_eq!(
            geodesic_distance(&a, &seeds, 0.0).unwrap(),
            geodesic_distance(&b, &seeds, 0.0).unwrap()
        );
    }

    #[test]
    fn chain_with_color_step() {
        // hand-rolled shortest path on a 5-node chain: 4 unit steps plus one
        // color jump of magnitude |(1,1,1)| = sqrt(3)
        let img = Raster::from_fn(5, 1, |x, _| if x <= 2 { [0.0; 3] } else { [1.0; 3] });
        let seeds = Raster::from_fn(5, 1, |x, _| x == 0);
        let g = geodesic_distance(&img, &seeds, 1.0).unwrap();
        let expected = 4.0 + 3f64.sqrt();
        assert!((g.get(4, 0) - expected).abs() < 1e-12);
        assert_eq!(*g.get(2, 0), 2.0);
    }

    #[test]
    fn empty_seeds_rejected() {
        let img = Raster::filled(3, 3, [0.0; 3]);
        let seeds = Raster::filled(3, 3, false);
        assert!(matches!(geodesic_distance(&img, &seeds, 1.0), Err(Error::EmptySeeds)));
    }
}
