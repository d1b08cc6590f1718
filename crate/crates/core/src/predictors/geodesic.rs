use super::{check_input_dims, diagonal, Predictor, PredictorInput, TrimapLogits};
use crate::error::Result;
use crate::raster::{geodesic_distance, GeodesicField};
use crate::types::{is_all_false, LabelClass, PerClass, Raster};

/// Non-learned predictor: each pixel takes the class whose clicks are
/// geodesically closest. Logits are `-g_c / tau`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicPredictor {
    pub lambda: f64,
    pub tau: f64,
}

impl GeodesicPredictor {
    pub const DEFAULT_LAMBDA: f64 = 10.0;
    pub const DEFAULT_TAU: f64 = 10.0;
}

impl Default for GeodesicPredictor {
    fn default() -> Self {
        Self {
            lambda: Self::DEFAULT_LAMBDA,
            tau: Self::DEFAULT_TAU,
        }
    }
}

impl Predictor for GeodesicPredictor {
    fn id(&self) -> String {
        "geodesic".into()
    }

    fn predict(&self, input: &PredictorInput) -> Result<TrimapLogits> {
        check_input_dims(input)?;
        let (w, h) = input.image.dims();
        let diag = diagonal(w, h);
        let floor = -diag / self.tau;

        if !input.has_clicks() {
            let mut l = [floor; 3];
            l[LabelClass::Background.index()] = 0.0;
            return Ok(Raster::filled(w, h, l));
        }

        let mut fields: PerClass<Option<GeodesicField>> = PerClass::default();
        let mut g_max: f64 = 0.0;
        for c in LabelClass::ALL {
            let seeds = &input.click_masks[c];
            if !is_all_false(seeds) {
                let g = geodesic_distance(&input.image, seeds, self.lambda)?;
                g_max = g_max.max(g.data().iter().copied().fold(0.0, f64::max));
                fields[c] = Some(g);
            }
        }
        // Unclicked classes sit strictly below every clicked class.
        let floor = -(diag + g_max) / self.tau;
        let mut out = Raster::filled(w, h, [floor; 3]);
        for c in LabelClass::ALL {
            if let Some(g) = &fields[c] {
                for (o, &gv) in out.data_mut().iter_mut().zip(g.data()) {
                    o[c.index()] = -gv / self.tau;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::logits_to_trimap;
    use crate::types::{encode_clicks, Click};
    use LabelClass::*;

    fn input(img: crate::types::Image, clicks: &[Click]) -> PredictorInput {
        let (w, h) = img.dims();
        let masks = encode_clicks(clicks, w, h, 1.0).unwrap();
        PredictorInput::new(img, masks, None).unwrap()
    }

    #[test]
    fn no_clicks_is_all_background() {
        let p = GeodesicPredictor::default();
        let t = logits_to_trimap(&p.predict(&input(Raster::filled(9, 5, [0.2; 3]), &[])).unwrap());
        assert!(t.data().iter().all(|&l| l == Background));
    }

    #[test]
    fn single_class_dominates_everywhere() {
        // strong texture so geodesic costs exceed the image diagonal
        let img = Raster::from_fn(20, 20, |x, y| if (x + y) % 2 == 0 { [0.0; 3] } else { [1.0; 3] });
        let p = GeodesicPredictor::default();
        for c in LabelClass::ALL {
            let t = logits_to_trimap(&p.predict(&input(img.clone(), &[Click::new(0, 0, c, 0)])).unwrap());
            assert!(t.data().iter().all(|&l| l == c));
        }
    }

    #[test]
    fn left_right_clicks_split_uniform_image_at_midline() {
        let img = Raster::filled(21, 9, [0.5; 3]);
        let clicks = [Click::new(0, 4, Foreground, 0), Click::new(20, 4, Background, 1)];
        let p = GeodesicPredictor::default();
        let t = logits_to_trimap(&p.predict(&input(img, &clicks)).unwrap());
        for y in 0..9 {
            for x in 0..21 {
                let expected = if x < 10 {
                    Foreground
                } else if x > 10 {
                    Background
                } else {
                    continue;
                };
                assert_eq!(*t.get(x, y), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn logits_are_finite_on_large_inputs() {
        let img = Raster::from_fn(448, 448, |x, y| [(x % 7) as f32 / 7.0, (y % 5) as f32 / 5.0, 0.5]);
        let p = GeodesicPredictor::default();
        let clicks = [Click::new(10, 10, Foreground, 0), Click::new(400, 300, Unknown, 1)];
        let l = p.predict(&input(img, &clicks)).unwrap();
        assert!(l.data().iter().all(|v| v.iter().all(|x| x.is_finite())));
    }
}
