use crossdistill::config::ExperimentConfig;
use crossdistill::loss::soften;
use crossdistill::memory::{Exemplar, MemoryMode, NewClassData, RepresentativeMemory, SampleId, SelectionStrategy};
use crossdistill::model::ClassId;
use crossdistill::tensor::{softmax, Matrix};
use proptest::prelude::*;

fn logits() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..6, 2usize..8).prop_flat_map(|(r, c)| (Just(c), prop::collection::vec(-50.0f64..50.0, r * c)))
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((cols, values) in logits()) {
        let m = Matrix::from_vec(values.len() / cols, cols, values).unwrap();
        let p = softmax(&m).unwrap();
        for r in 0..p.rows() {
            let row = p.row(r);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn soften_flattens_towards_uniform(raw in prop::collection::vec(0.01f64..1.0, 2..10), t in 1.0f64..10.0) {
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let s = soften(&p, t).unwrap();
        let max_p = p.iter().cloned().fold(0.0, f64::max);
        let max_s = s.iter().cloned().fold(0.0, f64::max);
        prop_assert!(max_s <= max_p + 1e-12);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn memory_never_exceeds_capacity(
        capacity in 1usize..60,
        steps in prop::collection::vec(prop::collection::vec(1usize..25, 1..4), 1..5),
        seed in any::<u64>(),
    ) {
        let mut memory = RepresentativeMemory::new(MemoryMode::FixedTotal { capacity }, SelectionStrategy::Random { seed });
        let mut next_class = 0;
        let mut next_id = 0;
        for step in steps {
            let mut incoming = Vec::new();
            for count in step {
                let samples = (0..count).map(|_| { next_id += 1; Exemplar { id: SampleId(next_id), input: vec![0.0] } }).collect();
                incoming.push(NewClassData {
                    class: ClassId(next_class),
                    samples,
                    features: Matrix::from_vec(count, 1, (0..count).map(|i| i as f64).collect()).unwrap(),
                });
                next_class += 1;
            }
            memory.update_memory(incoming).unwrap();
            prop_assert!(memory.total() <= capacity);
            let n = memory.per_class_budget(memory.num_classes()).unwrap();
            prop_assert!(memory.iter().all(|(_, list)| list.len() <= n));
        }
    }

    #[test]
    fn config_round_trips(step in 1usize..5, t in 0.5f64..8.0, epochs in 0usize..100, k in 1usize..5000) {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/reference.toml");
        let mut cfg = ExperimentConfig::load(&path).unwrap();
        cfg.step_size = step;
        cfg.loss.temperature = t;
        cfg.training.epochs = epochs;
        cfg.memory.capacity = Some(k);
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.digest().unwrap(), cfg.digest().unwrap());
    }
}
