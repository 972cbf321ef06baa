mod common;

use adenorm::encoder::{EncoderConfig, NgramEncoder};
use adenorm::linalg::Matrix;
use adenorm::ontology::ConceptStore;
use adenorm::seed::rng_for;
use adenorm::synthetic::{generate, SyntheticConfig};
use adenorm::training::{
    info_nce_loss, run_schedule, train_stage, CheckpointSink, Schedule, ScheduleName, StageData,
    StageKind, StsExample, TrainConfig,
};
use adenorm::Error;
use proptest::prelude::*;

fn small_encoder() -> NgramEncoder {
    NgramEncoder::new(EncoderConfig {
        dim: 16,
        num_buckets: 4096,
        seed: 3,
        ..EncoderConfig::default()
    })
    .unwrap()
}

fn synthetic_store() -> ConceptStore {
    // 200 concepts x 5 synonyms: the held-out mention goes back in
    let bench = generate(&SyntheticConfig::default()).unwrap();
    let mut concepts: Vec<_> = bench.store.iter().cloned().collect();
    for (c, m) in concepts.iter_mut().zip(&bench.mentions) {
        c.synonyms.push(m.mention_text.clone());
    }
    ConceptStore::from_concepts(concepts, "synthetic").unwrap()
}

fn toy_store() -> ConceptStore {
    let dict = "C1\theadache\t1\nC1\thead pain\t0\nC1\tcephalalgia\t0\n\
                C2\tnausea\t1\nC2\tfeeling sick\t0\n\
                C3\tfatigue\t1\nC3\ttiredness\t0\n";
    let defs = "C1\tPain located in the head.\nC2\tUrge to vomit.\nC3\tLack of energy.\n";
    let (mut store, _) = ConceptStore::parse_dictionary(dict, "d".as_ref()).unwrap();
    store.parse_definitions(defs, "f".as_ref()).unwrap();
    store
}

fn toy_sts() -> Vec<StsExample> {
    vec![
        StsExample::new("headache", "head pain", 1.0).unwrap(),
        StsExample::new("headache", "nausea", 0.0).unwrap(),
        StsExample::new("tiredness", "fatigue", 0.9).unwrap(),
        StsExample::new("feeling sick", "cephalalgia", 0.1).unwrap(),
    ]
}

fn cfg(seed: u64, lr: f64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        temperature: 0.1,
        learning_rate: lr,
        epochs: 2,
        seed,
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5 {
        let e = common::info_nce_fd_error(seed, 8, 16, 0.05);
        assert!(e <= 1e-4, "InfoNCE seed {seed}: rel err {e:e}");
        let e = common::sts_fd_error(seed, 8);
        assert!(e <= 1e-6, "STS seed {seed}: rel err {e:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn info_nce_is_symmetric(seed in any::<u64>(), batch in 2usize..10) {
        let mut rng = rng_for(seed);
        let a = common::random_unit_matrix(&mut rng, batch, 8);
        let b = common::random_unit_matrix(&mut rng, batch, 8);
        let ab = info_nce_loss(&a, &b, 0.05).unwrap();
        let ba = info_nce_loss(&b, &a, 0.05).unwrap();
        prop_assert_eq!(ab.loss.to_bits(), ba.loss.to_bits());
        prop_assert!(common::rel_err(ab.grad_a.as_slice(), ba.grad_b.as_slice()) < 1e-12);
    }

    #[test]
    fn info_nce_ignores_pair_order(seed in any::<u64>(), batch in 2usize..10) {
        use rand::seq::SliceRandom;
        let mut rng = rng_for(seed);
        let a = common::random_unit_matrix(&mut rng, batch, 8);
        let b = common::random_unit_matrix(&mut rng, batch, 8);
        let mut perm: Vec<usize> = (0..batch).collect();
        perm.shuffle(&mut rng);
        let pick = |m: &Matrix| Matrix::from_rows(&perm.iter().map(|&i| m.row(i).to_vec()).collect::<Vec<_>>());
        let base = info_nce_loss(&a, &b, 0.05).unwrap();
        let shuffled = info_nce_loss(&pick(&a), &pick(&b), 0.05).unwrap();
        prop_assert!((base.loss - shuffled.loss).abs() <= 1e-12 * base.loss.abs().max(1.0));
        for (row, &i) in perm.iter().enumerate() {
            prop_assert!(common::rel_err(shuffled.grad_a.row(row), base.grad_a.row(i)) < 1e-10);
        }
    }
}

#[test]
fn one_epoch_lowers_synonym_loss() {
    let store = synthetic_store();
    assert_eq!((store.len(), store.synonym_count()), (200, 1000));
    let data = StageData::Pairs(store.synonym_pairs(1));
    let config = TrainConfig {
        epochs: 1,
        temperature: 0.1,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let encoder = NgramEncoder::new(EncoderConfig {
        dim: 64,
        num_buckets: 65536,
        ..EncoderConfig::default()
    })
    .unwrap();
    let (_, report) = train_stage(encoder, &data, &config, 1).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert!(
        report.epochs[1].loss < report.epochs[0].loss,
        "{:?}",
        report.epochs
    );
}

#[test]
fn zero_learning_rate_leaves_state_bitwise_unchanged() {
    let store = toy_store();
    let start = small_encoder();
    let data = StageData::Pairs(store.name_definition_pairs());
    let (lord, _) = train_stage(start.clone(), &data, &cfg(1, 0.0), 1).unwrap();
    assert_eq!(lord.to_bytes(), start.to_bytes());
    let (sts, _) = train_stage(start.clone(), &StageData::Sts(toy_sts()), &cfg(1, 0.0), 1).unwrap();
    assert_eq!(sts.to_bytes(), start.to_bytes());
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let store = toy_store();
    let data = StageData::Pairs(store.synonym_pairs(4));
    let run = |seed| train_stage(small_encoder(), &data, &cfg(seed, 0.05), 1).unwrap().0.to_bytes();
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
    assert_ne!(run(7), small_encoder().to_bytes());
}

#[test]
fn schedules_write_one_checkpoint_per_stage() {
    let store = toy_store();
    let sts = toy_sts();
    let dir = tempfile::tempdir().unwrap();
    for (name, stages) in [
        (ScheduleName::Lord, 1),
        (ScheduleName::StsLordSts, 3),
        (ScheduleName::StsOnly, 1),
        (ScheduleName::SynonymLord, 1),
    ] {
        let schedule = Schedule::named(name, &store, Some(&sts), cfg(1, 0.01), cfg(2, 0.01)).unwrap();
        let sink = CheckpointSink {
            dir: dir.path().to_path_buf(),
            prefix: name.as_str().to_string(),
        };
        let run = run_schedule(small_encoder(), &schedule, Some(&sink)).unwrap();
        assert_eq!(run.checkpoints.len(), stages);
        let names: Vec<String> = run
            .checkpoint_paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        let want: Vec<String> = (1..=stages)
            .map(|n| format!("{}-stage{n}.ckpt", name.as_str()))
            .collect();
        assert_eq!(names, want);
        for (path, state) in run.checkpoint_paths.iter().zip(&run.checkpoints) {
            assert_eq!(&NgramEncoder::load(path).unwrap(), state);
        }
        assert_eq!(&run.final_state, run.checkpoints.last().unwrap());
        let kinds: Vec<StageKind> = run.reports.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, name.kinds());
        let log = std::fs::read_to_string(sink.log_path()).unwrap();
        assert_eq!(log.lines().count(), stages * 3);
    }
}

#[test]
fn empty_schedule_and_missing_data_are_errors() {
    let err = run_schedule(small_encoder(), &Schedule::default(), None).unwrap_err();
    assert!(err.to_string().contains("empty schedule"), "{err}");
    let store = toy_store();
    let err = Schedule::named(ScheduleName::StsLordSts, &store, None, cfg(1, 0.1), cfg(1, 0.1)).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn failed_stage_keeps_earlier_checkpoints() {
    let store = toy_store();
    let sts = toy_sts();
    let mut schedule =
        Schedule::named(ScheduleName::StsLordSts, &store, Some(&sts), cfg(1, 0.01), cfg(2, 0.01)).unwrap();
    // Adam steps of ~1e308 overflow the parameters in the last stage
    schedule.stages[2].config.learning_rate = 1e308;
    schedule.stages[2].config.epochs = 3;
    let dir = tempfile::tempdir().unwrap();
    let sink = CheckpointSink {
        dir: dir.path().to_path_buf(),
        prefix: "x".into(),
    };
    match run_schedule(small_encoder(), &schedule, Some(&sink)) {
        Err(Error::Diverged { stage, .. }) => {
            assert_eq!(stage, 3);
            assert!(sink.checkpoint_path(1).exists() && sink.checkpoint_path(2).exists());
            assert!(!sink.checkpoint_path(3).exists());
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.reports)),
    }
}
