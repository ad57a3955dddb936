//! Temperature softening and the distillation term on a single pair of
//! logit vectors.

use crossdistill::loss::{cross_entropy_loss, distillation_loss, soften};
use crossdistill::tensor::{softmax, Matrix};

fn main() -> crossdistill::Result<()> {
    let teacher = Matrix::row_vector(vec![3.0, 1.0, 0.2])?;
    let student = Matrix::row_vector(vec![2.5, 1.5, 0.0])?;

    let p = softmax(&teacher)?;
    println!("teacher softmax      {:?}", p.row(0));
    for t in [1.0, 2.0, 4.0] {
        println!("softened at T = {t}    {:?}", soften(p.row(0), t)?);
    }

    for t in [1.0, 2.0, 4.0] {
        println!(
            "distillation loss T = {t}: {:.6}",
            distillation_loss(&student, &teacher, t)?
        );
    }

    // the classification term for comparison
    let one_hot = Matrix::row_vector(vec![1.0, 0.0, 0.0])?;
    println!("cross-entropy vs class 0: {:.6}", cross_entropy_loss(&student, &one_hot)?);
    Ok(())
}
