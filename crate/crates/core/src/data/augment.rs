//! Image and vector augmentation. Images are flat interleaved HWC buffers with
//! values in `[0, 255]`; every pixel operation clamps back into that range.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SampleShape;
use crate::error::{Error, Result};

pub const BRIGHTNESS_RANGE: (f64, f64) = (-63.0, 63.0);
pub const CONTRAST_RANGE: (f64, f64) = (0.2, 1.8);

fn dims(shape: SampleShape) -> Result<(usize, usize, usize)> {
    match shape {
        SampleShape::Image {
            height,
            width,
            channels,
        } => Ok((height, width, channels)),
        SampleShape::Vector { .. } => Err(Error::Config(
            "image augmentation applied to vector samples".into(),
        )),
    }
}

fn clamp_pixel(v: f64) -> f64 {
    v.clamp(0.0, 255.0)
}

pub fn brightness_with(image: &[f64], delta: f64) -> Vec<f64> {
    image.iter().map(|&v| clamp_pixel(v + delta)).collect()
}

/// Adds one uniform draw from [`BRIGHTNESS_RANGE`] to every pixel.
pub fn augment_brightness<R: Rng + ?Sized>(image: &[f64], rng: &mut R) -> Vec<f64> {
    let delta = rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1);
    brightness_with(image, delta)
}

/// `(im − mean) × contrast + mean` with a per-channel mean.
pub fn contrast_with(image: &[f64], shape: SampleShape, contrast: f64) -> Result<Vec<f64>> {
    let (h, w, c) = dims(shape)?;
    let mut means = vec![0.0; c];
    for (i, &v) in image.iter().enumerate() {
        means[i % c] += v;
    }
    means.iter_mut().for_each(|m| *m /= (h * w) as f64);
    Ok(image
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = means[i % c];
            clamp_pixel((v - m) * contrast + m)
        })
        .collect())
}

pub fn augment_contrast<R: Rng + ?Sized>(
    image: &[f64],
    shape: SampleShape,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let contrast = rng.random_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1);
    contrast_with(image, shape, contrast)
}

/// Horizontal flip.
pub fn mirror(image: &[f64], shape: SampleShape) -> Result<Vec<f64>> {
    let (h, w, c) = dims(shape)?;
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + (w - 1 - x)) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&image[src..src + c]);
        }
    }
    Ok(out)
}

/// Reflection of a padded coordinate back into `0..len`.
fn reflect(p: isize, len: usize) -> usize {
    let len = len as isize;
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let mut q = p.rem_euclid(period);
    if q >= len {
        q = period - q;
    }
    q as usize
}

/// Reflect-pads by `padding` on every side, then cuts the original size out
/// at offset `(dy, dx)` in padded coordinates. `(padding, padding)` is the
/// identity.
pub fn crop_with(
    image: &[f64],
    shape: SampleShape,
    padding: usize,
    dy: usize,
    dx: usize,
) -> Result<Vec<f64>> {
    let (h, w, c) = dims(shape)?;
    if dy > 2 * padding || dx > 2 * padding {
        return Err(Error::Argument(format!(
            "crop offset ({dy}, {dx}) outside the padded image (padding {padding})"
        )));
    }
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        let sy = reflect(y as isize + dy as isize - padding as isize, h);
        for x in 0..w {
            let sx = reflect(x as isize + dx as isize - padding as isize, w);
            let src = (sy * w + sx) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&image[src..src + c]);
        }
    }
    Ok(out)
}

pub fn random_crop<R: Rng + ?Sized>(
    image: &[f64],
    shape: SampleShape,
    padding: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dy = rng.random_range(0..=2 * padding);
    let dx = rng.random_range(0..=2 * padding);
    crop_with(image, shape, padding, dy, dx)
}

/// Every random quantity of one eleven-sample expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cifar11Draws {
    pub brightness: f64,
    pub contrast: f64,
    /// Crop offsets for the original, brightness and contrast images.
    pub crops: [(usize, usize); 3],
}

impl Cifar11Draws {
    /// Draws that leave every derived image equal to the original.
    pub fn neutral(padding: usize) -> Self {
        Cifar11Draws {
            brightness: 0.0,
            contrast: 1.0,
            crops: [(padding, padding); 3],
        }
    }

    pub fn sample<R: Rng + ?Sized>(padding: usize, rng: &mut R) -> Self {
        let brightness = rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1);
        let contrast = rng.random_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1);
        let mut crops = [(0, 0); 3];
        for c in &mut crops {
            *c = (rng.random_range(0..=2 * padding), rng.random_range(0..=2 * padding));
        }
        Cifar11Draws {
            brightness,
            contrast,
            crops,
        }
    }

    /// Brightness, contrast, three crops, and mirrors of those five plus the
    /// original: eleven new images.
    pub fn apply(&self, image: &[f64], shape: SampleShape, padding: usize) -> Result<Vec<Vec<f64>>> {
        let bright = brightness_with(image, self.brightness);
        let contrast = contrast_with(image, shape, self.contrast)?;
        let crops = [
            crop_with(image, shape, padding, self.crops[0].0, self.crops[0].1)?,
            crop_with(&bright, shape, padding, self.crops[1].0, self.crops[1].1)?,
            crop_with(&contrast, shape, padding, self.crops[2].0, self.crops[2].1)?,
        ];
        let mut out = vec![bright, contrast];
        out.extend(crops);
        let mut mirrors = vec![mirror(image, shape)?];
        for img in &out {
            mirrors.push(mirror(img, shape)?);
        }
        out.extend(mirrors);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "kebab-case")]
pub enum AugmentRecipe {
    None,
    /// Eleven new images per input.
    Cifar11 { crop_padding: usize },
    /// One new image per input: a mirror with brightness and contrast each
    /// applied with probability one half.
    ImagenetStyle,
    /// `copies` new vectors with additive `N(0, scale²)` jitter.
    VectorJitter { copies: usize, scale: f64 },
}

impl AugmentRecipe {
    /// New samples generated per input.
    pub fn new_per_input(&self) -> usize {
        match *self {
            AugmentRecipe::None => 0,
            AugmentRecipe::Cifar11 { .. } => 11,
            AugmentRecipe::ImagenetStyle => 1,
            AugmentRecipe::VectorJitter { copies, .. } => copies,
        }
    }

    pub fn check_shape(&self, shape: SampleShape) -> Result<()> {
        let ok = match self {
            AugmentRecipe::None => true,
            AugmentRecipe::Cifar11 { .. } | AugmentRecipe::ImagenetStyle => shape.is_image(),
            AugmentRecipe::VectorJitter { .. } => !shape.is_image(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "augmentation recipe {self:?} does not apply to {shape:?} samples"
            )))
        }
    }
}

/// New samples derived from `sample`; the original is not included.
pub fn augment_recipe<R: Rng + ?Sized>(
    sample: &[f64],
    shape: SampleShape,
    recipe: AugmentRecipe,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    recipe.check_shape(shape)?;
    match recipe {
        AugmentRecipe::None => Ok(Vec::new()),
        AugmentRecipe::Cifar11 { crop_padding } => {
            Cifar11Draws::sample(crop_padding, rng).apply(sample, shape, crop_padding)
        }
        AugmentRecipe::ImagenetStyle => {
            let mut img = mirror(sample, shape)?;
            if rng.random_bool(0.5) {
                img = augment_brightness(&img, rng);
            }
            if rng.random_bool(0.5) {
                img = augment_contrast(&img, shape, rng)?;
            }
            Ok(vec![img])
        }
        AugmentRecipe::VectorJitter { copies, scale } => Ok((0..copies)
            .map(|_| {
                sample
                    .iter()
                    .map(|&v| {
                        if scale > 0.0 {
                            let z: f64 = StandardNormal.sample(rng);
                            v + scale * z
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect()),
    }
}

/// A recipe bound to a sample layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmenter {
    pub recipe: AugmentRecipe,
    pub shape: SampleShape,
}

impl Augmenter {
    pub fn new(recipe: AugmentRecipe, shape: SampleShape) -> Result<Self> {
        recipe.check_shape(shape)?;
        Ok(Augmenter { recipe, shape })
    }

    pub fn identity(shape: SampleShape) -> Self {
        Augmenter {
            recipe: AugmentRecipe::None,
            shape,
        }
    }

    /// The original followed by its augmentations.
    pub fn expand<R: Rng + ?Sized>(&self, sample: &[f64], rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![sample.to_vec()];
        out.extend(augment_recipe(sample, self.shape, self.recipe, rng)?);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SHAPE: SampleShape = SampleShape::Image {
        height: 4,
        width: 5,
        channels: 3,
    };

    fn test_image() -> Vec<f64> {
        (0..SHAPE.len()).map(|i| ((i * 37) % 256) as f64).collect()
    }

    #[test]
    fn brightness_cases() {
        let img = test_image();
        assert_eq!(brightness_with(&img, 0.0), img);
        let white = vec![255.0; 12];
        assert_eq!(brightness_with(&white, 30.0), white);
        let a = augment_brightness(&img, &mut ChaCha8Rng::seed_from_u64(3));
        let b = augment_brightness(&img, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn contrast_cases() {
        let img = test_image();
        assert_eq!(contrast_with(&img, SHAPE, 1.0).unwrap(), img);
        let flat = vec![77.0; SHAPE.len()];
        assert_eq!(contrast_with(&flat, SHAPE, 1.7).unwrap(), flat);

        let two_valued = SampleShape::Image {
            height: 1,
            width: 2,
            channels: 1,
        };
        // mean 150, so 100 → 150 − 0.2·50 = 140 and 200 → 160
        let out = contrast_with(&[100.0, 200.0], two_valued, 0.2).unwrap();
        assert!((out[0] - 140.0).abs() < 1e-12 && (out[1] - 160.0).abs() < 1e-12);
    }

    #[test]
    fn mirror_twice_is_identity_and_crop_center_is_identity() {
        let img = test_image();
        assert_eq!(mirror(&mirror(&img, SHAPE).unwrap(), SHAPE).unwrap(), img);
        assert_ne!(mirror(&img, SHAPE).unwrap(), img);
        assert_eq!(crop_with(&img, SHAPE, 2, 2, 2).unwrap(), img);
        let shifted = crop_with(&img, SHAPE, 2, 0, 4).unwrap();
        assert_eq!(shifted.len(), img.len());
        assert!(crop_with(&img, SHAPE, 2, 5, 0).is_err());
    }

    #[test]
    fn reflect_padding_indices() {
        assert_eq!(reflect(-1, 4), 1);
        assert_eq!(reflect(-2, 4), 2);
        assert_eq!(reflect(4, 4), 2);
        assert_eq!(reflect(5, 4), 1);
        assert_eq!(reflect(7, 1), 0);
    }

    #[test]
    fn cifar11_produces_eleven_and_neutral_draws_reproduce_input() {
        let img = test_image();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment_recipe(&img, SHAPE, AugmentRecipe::Cifar11 { crop_padding: 2 }, &mut rng)
            .unwrap();
        assert_eq!(out.len(), 11);
        assert!(out.iter().all(|x| x.len() == img.len()));

        let neutral = Cifar11Draws::neutral(2).apply(&img, SHAPE, 2).unwrap();
        let flipped = mirror(&img, SHAPE).unwrap();
        for x in &neutral[..5] {
            assert_eq!(x, &img);
        }
        for x in &neutral[5..] {
            assert_eq!(x, &flipped);
        }
    }

    #[test]
    fn imagenet_style_doubles() {
        let aug = Augmenter::new(AugmentRecipe::ImagenetStyle, SHAPE).unwrap();
        let out = aug.expand(&test_image(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn vector_jitter_and_mismatches() {
        let v = SampleShape::Vector { dim: 3 };
        let x = [1.0, -2.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let copies = augment_recipe(&x, v, AugmentRecipe::VectorJitter { copies: 4, scale: 0.0 }, &mut rng)
            .unwrap();
        assert_eq!(copies, vec![x.to_vec(); 4]);
        assert!(matches!(
            augment_recipe(&x, v, AugmentRecipe::Cifar11 { crop_padding: 4 }, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(Augmenter::new(AugmentRecipe::VectorJitter { copies: 1, scale: 1.0 }, SHAPE).is_err());
    }
}
