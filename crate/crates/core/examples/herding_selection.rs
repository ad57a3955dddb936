//! Orders one class's samples with each selection strategy and reports how
//! well the first `n` exemplars approximate the class mean.

use crossdistill::memory::{class_mean, SelectionStrategy};
use crossdistill::tensor::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn mean_gap(features: &Matrix, order: &[usize], n: usize) -> f64 {
    let target = class_mean(features);
    let chosen = class_mean(&features.select_rows(&order[..n]));
    target.iter().zip(&chosen).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

fn main() -> crossdistill::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let (rows, dim) = (200, 8);
    let features = Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| noise.sample(&mut rng)).collect())?;

    let strategies = [
        ("herding", SelectionStrategy::Herding),
        ("nearest-mean", SelectionStrategy::NearestMeanSort),
        ("histogram", SelectionStrategy::Histogram),
        ("random", SelectionStrategy::Random { seed: 1 }),
    ];
    println!("{:<14} {:>8} {:>8} {:>8}", "strategy", "n=5", "n=20", "n=50");
    for (name, s) in strategies {
        let order = s.order(&features, 0)?;
        println!(
            "{name:<14} {:>8.4} {:>8.4} {:>8.4}",
            mean_gap(&features, &order, 5),
            mean_gap(&features, &order, 20),
            mean_gap(&features, &order, 50)
        );
    }
    Ok(())
}
