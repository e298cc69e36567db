//! Image-level training augmentations: erosion, dilation, and skew.

use ndarray::Array2;
use rand::Rng;

use super::WordSample;
use crate::error::{Error, Result};

/// Parameters for the three augmentations. Each transform fires
/// independently with `apply_probability`; a 1-px kernel or 0-degree range
/// degenerates to the identity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentationSpec {
    pub erosion_kernel: usize,
    pub dilation_kernel: usize,
    /// Shear angles are drawn from `[-skew_degrees, +skew_degrees]`.
    pub skew_degrees: f64,
    pub apply_probability: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            erosion_kernel: 3,
            dilation_kernel: 3,
            skew_degrees: 5.0,
            apply_probability: 0.5,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("erosion_kernel", self.erosion_kernel), ("dilation_kernel", self.dilation_kernel)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd and >= 1, got {k}")));
            }
        }
        if self.skew_degrees < 0.0 {
            return Err(Error::Config("skew_degrees must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::Config("apply_probability must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Grayscale erosion: minimum over a k x k window. On white-background word
/// images this thickens the (dark) strokes.
pub fn erode(img: &Array2<f32>, kernel: usize) -> Array2<f32> {
    window_extreme(img, kernel, f32::min, f32::INFINITY)
}

/// Grayscale dilation: maximum over a k x k window; strokes thin.
pub fn dilate(img: &Array2<f32>, kernel: usize) -> Array2<f32> {
    window_extreme(img, kernel, f32::max, f32::NEG_INFINITY)
}

fn window_extreme(
    img: &Array2<f32>,
    kernel: usize,
    pick: fn(f32, f32) -> f32,
    init: f32,
) -> Array2<f32> {
    if kernel <= 1 {
        return img.clone();
    }
    let (h, w) = img.dim();
    let r = kernel / 2;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(h - 1);
        let x0 = x.saturating_sub(r);
        let x1 = (x + r).min(w - 1);
        let mut v = init;
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                v = pick(v, img[[yy, xx]]);
            }
        }
        v
    })
}

/// Horizontal shear about the image center, bilinear with edge clamping.
pub fn skew(img: &Array2<f32>, degrees: f64) -> Array2<f32> {
    let (h, w) = img.dim();
    let t = degrees.to_radians().tan();
    let cy = (h as f64 - 1.0) / 2.0;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let fx = (x as f64 + t * (y as f64 - cy)).clamp(0.0, (w - 1) as f64);
        let x0 = fx.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let tx = (fx - x0 as f64) as f32;
        img[[y, x0]] * (1.0 - tx) + img[[y, x1]] * tx
    })
}

/// Apply the spec's transforms to a normalized sample. The transcript and
/// class are untouched; the output is deterministic for a given rng state.
pub fn augment(sample: &WordSample, spec: &AugmentationSpec, rng: &mut impl Rng) -> WordSample {
    WordSample {
        image: augment_image(&sample.image, spec, rng),
        transcript: sample.transcript.clone(),
        class_id: sample.class_id,
        split: sample.split,
        source_id: sample.source_id.clone(),
    }
}

/// Image-only variant of [`augment`], for callers that manage labels
/// themselves.
pub fn augment_image(
    image: &Array2<f32>,
    spec: &AugmentationSpec,
    rng: &mut impl Rng,
) -> Array2<f32> {
    let mut img = image.clone();
    if rng.gen::<f64>() < spec.apply_probability {
        img = erode(&img, spec.erosion_kernel);
    }
    if rng.gen::<f64>() < spec.apply_probability {
        img = dilate(&img, spec.dilation_kernel);
    }
    if rng.gen::<f64>() < spec.apply_probability {
        let deg = rng.gen_range(-spec.skew_degrees..=spec.skew_degrees);
        img = skew(&img, deg);
    }
    img
}
