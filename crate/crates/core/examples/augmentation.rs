//! The image and vector augmentation recipes applied to one sample.

use crossdistill::data::{augment_recipe, AugmentRecipe, Augmenter, SampleShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> crossdistill::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shape = SampleShape::Image {
        height: 8,
        width: 8,
        channels: 3,
    };
    let image: Vec<f64> = (0..shape.len()).map(|i| (i * 37 % 256) as f64).collect();

    for recipe in [AugmentRecipe::Cifar11 { crop_padding: 2 }, AugmentRecipe::ImagenetStyle] {
        let new = augment_recipe(&image, shape, recipe, &mut rng)?;
        let mean: Vec<f64> = new.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
        println!("{recipe:?}: {} new samples, pixel means {mean:.1?}", new.len());
    }

    let vec_shape = SampleShape::Vector { dim: 4 };
    let aug = Augmenter::new(AugmentRecipe::VectorJitter { copies: 3, scale: 0.1 }, vec_shape)?;
    for v in aug.expand(&[1.0, 2.0, 3.0, 4.0], &mut rng)? {
        println!("{v:.3?}");
    }

    match augment_recipe(&[0.0; 4], vec_shape, AugmentRecipe::Cifar11 { crop_padding: 2 }, &mut rng) {
        Err(e) => println!("mismatched recipe: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
