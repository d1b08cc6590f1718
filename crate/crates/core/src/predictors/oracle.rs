use super::{check_input_dims, Predictor, PredictorInput, TrimapLogits};
use crate::error::Result;
use crate::types::{LabelClass, Raster, Trimap};

/// Ground-truth-aware stamping predictor used to test the simulator.
///
/// Starts from the previous prediction (all-background if none) and labels
/// every pixel inside a click disk of class `c` as `c`, restricted to pixels
/// whose ground truth is `c`. A click placed on a false-negative pixel
/// therefore always fixes that pixel and never breaks a correct one.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    gt: Trimap,
}

impl OraclePredictor {
    pub fn new(gt: Trimap) -> Self {
        Self { gt }
    }

    pub fn stamp(&self, input: &PredictorInput) -> Result<Trimap> {
        check_input_dims(input)?;
        input.image.ensure_same_dims(&self.gt)?;
        let mut out = match &input.previous {
            Some(p) => p.clone(),
            None => Raster::filled(self.gt.width(), self.gt.height(), LabelClass::Background),
        };
        for c in LabelClass::ALL {
            let disk = &input.click_masks[c];
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                if disk.data()[i] && self.gt.data()[i] == c {
                    *o = c;
                }
            }
        }
        Ok(out)
    }
}

impl Predictor for OraclePredictor {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, input: &PredictorInput) -> Result<TrimapLogits> {
        Ok(self.stamp(input)?.map(|&c| {
            let mut l = [-1.0; 3];
            l[c.index()] = 0.0;
            l
        }))
    }
}
