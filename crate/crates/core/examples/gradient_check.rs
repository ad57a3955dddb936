//! Compares backpropagated gradients of the cross-distilled loss against
//! central finite differences on a small two-head network.

use crossdistill::autodiff::Tape;
use crossdistill::loss::{cross_distilled_loss, cross_distilled_loss_value, LabelBatch, LossConfig};
use crossdistill::model::{ClassId, IncrementalNet, TeacherSnapshot};
use crossdistill::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> crossdistill::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = IncrementalNet::new(&[5, 7], &mut rng)?;
    net.add_classification_head(&[ClassId(0), ClassId(1)], &mut rng)?;
    let teacher = TeacherSnapshot::capture(&net);
    net.add_classification_head(&[ClassId(2), ClassId(3), ClassId(4)], &mut rng)?;

    let n = 6;
    let batch = Matrix::from_vec(n, 5, (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut targets = Matrix::zeros(n, 5);
    for r in 0..n {
        targets.set(r, rng.random_range(0..5), 1.0);
    }
    let labels = LabelBatch {
        class_targets: targets,
        distill_logits: teacher.teacher_logits(&batch)?,
    };
    let cfg = LossConfig { temperature: 2.0 };

    let mut tape = Tape::new();
    let out = net.forward_on_tape(&mut tape, batch.clone())?;
    let loss = cross_distilled_loss(&mut tape, &out, &labels, 1, &cfg)?;
    println!("loss = {:.6}", tape.value(loss).get(0, 0));
    let grads = tape.backward(loss, net.params())?;

    let h = 1e-5;
    let ids: Vec<_> = net.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let name = net.params().get(id).name().to_string();
        let mut worst: f64 = 0.0;
        for k in 0..net.params().value(id).len() {
            let orig = net.params().value(id).values()[k];

            net.params_mut().get_mut(id).value_mut().values_mut()[k] = orig + h;
            let up = cross_distilled_loss_value(&net.forward(&batch)?, &labels, 1, &cfg)?;
            net.params_mut().get_mut(id).value_mut().values_mut()[k] = orig - h;
            let down = cross_distilled_loss_value(&net.forward(&batch)?, &labels, 1, &cfg)?;
            net.params_mut().get_mut(id).value_mut().values_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).values()[k];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!("{name:<20} max relative error {worst:.2e}");
    }
    Ok(())
}
