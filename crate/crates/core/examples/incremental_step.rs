//! One incremental step written out stage by stage, next to the same step
//! through `incremental_step`.

use crossdistill::data::{
    synthetic_gaussian_dataset, AugmentRecipe, Augmenter, NormalizationMode, Normalizer, SyntheticSpec,
};
use crossdistill::eval::evaluate_accuracy;
use crossdistill::memory::{MemoryMode, NewClassData, SelectionStrategy};
use crossdistill::model::{ClassId, TeacherSnapshot};
use crossdistill::optim::OptimizerConfig;
use crossdistill::pipeline::{
    balanced_finetune, build_training_set, incremental_step, stream_rng, train, ClassSamples, IncrementalState,
    Phase, RngStream, StepConfig, StepContext,
};
use crossdistill::tensor::Matrix;

fn main() -> crossdistill::Result<()> {
    let data = synthetic_gaussian_dataset(&SyntheticSpec {
        num_classes: 4,
        dim: 6,
        train_per_class: 60,
        test_per_class: 40,
        separation: 5.0,
        seed: 1,
    })?;
    let normalizer = Normalizer::fit(&data.train, NormalizationMode::Standardize)?;
    let test = normalizer.apply(&data.test)?;
    let augmenter = Augmenter::new(AugmentRecipe::VectorJitter { copies: 1, scale: 0.3 }, data.train.shape())?;
    let config = StepConfig {
        optimizer: OptimizerConfig {
            noise_eta: 0.0,
            batch_size: 32,
            ..OptimizerConfig::default()
        },
        epochs: 20,
        finetune_epochs: 10,
        ..StepConfig::default()
    };
    let ctx = StepContext {
        train: &data.train,
        test: &test,
        normalizer: &normalizer,
        augmenter: &augmenter,
        config: &config,
    };
    let first = [ClassId(0), ClassId(1)];
    let second = [ClassId(2), ClassId(3)];
    let seed = 9;

    let state = IncrementalState::new(&[6, 16], MemoryMode::FixedTotal { capacity: 20 }, SelectionStrategy::Herding, seed)?;
    let state = incremental_step(state, &first, &ctx, &mut |_| {})?;
    let reference = incremental_step(state.clone(), &second, &ctx, &mut |_| {})?;

    // the same second step by hand
    let IncrementalState { mut net, mut memory, step_index: step, .. } = state;
    let teacher = TeacherSnapshot::capture(&net);
    net.add_classification_head(&second, &mut stream_rng(seed, step, RngStream::HeadInit))?;

    let new_data: Vec<ClassSamples> = second
        .iter()
        .map(|&class| ClassSamples { class, samples: data.train.class_samples(class) })
        .collect();
    let set = build_training_set(
        &memory,
        &new_data,
        &teacher,
        &net.class_columns(),
        &augmenter,
        &normalizer,
        true,
        &mut stream_rng(seed, step, RngStream::Augment),
    )?;
    println!("training set: {} rows, {} distilled head(s)", set.len(), set.distilled_heads());

    let trace = train(
        &mut net,
        &set,
        &config.optimizer,
        config.epochs,
        &config.loss,
        Phase::Train,
        &mut stream_rng(seed, step, RngStream::Train),
        &mut |_| {},
    )?;
    println!("train loss {:.4} -> {:.4}", trace[0], trace[trace.len() - 1]);

    let n = memory.per_class_budget(net.num_classes())?;
    let ft = balanced_finetune(&mut net, &set, &memory, n, &config, &mut stream_rng(seed, step, RngStream::Finetune), &mut |_| {})?;
    println!("balanced subset per class {:?}, {} distilled heads", ft.counts, ft.distilled_heads);

    let incoming = new_data
        .into_iter()
        .map(|d| {
            let raw = Matrix::from_rows(&d.samples.iter().map(|e| e.input.as_slice()).collect::<Vec<_>>())?;
            let features = net.features(&normalizer.apply_matrix(&raw)?)?;
            Ok(NewClassData { class: d.class, samples: d.samples, features })
        })
        .collect::<crossdistill::Result<Vec<_>>>()?;
    memory.update_memory(incoming)?;

    let m = evaluate_accuracy(&net, &test, &second.into_iter().collect(), step)?;
    let r = reference.history.last().expect("metrics");
    println!("manual accuracy {:.4}, incremental_step accuracy {:.4}", m.overall_accuracy, r.overall_accuracy);
    println!("identical networks: {}", net == reference.net);
    Ok(())
}
