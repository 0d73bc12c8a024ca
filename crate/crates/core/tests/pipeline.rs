mod common;

use common::smoke_config;
use handpose::handmodel::dataset::sample_stream;
use handpose::handmodel::sample_synthetic;
use handpose::pipeline::{
    evaluate, evaluate_state, load_checkpoint, resume, rows_to_csv, run_ablation, save_checkpoint, stage1_pretrain,
    stage2_train_generator, stage3_adversarial, AblationVariant, Checkpoint, CriticKind, RefinementKind, Stage,
    TrainConfig,
};
use handpose::rng::Stream;
use handpose::Error;

fn data(n: usize) -> Vec<handpose::handmodel::Sample> {
    sample_synthetic(3, n).unwrap()
}

fn all_stages(cfg: &TrainConfig) -> (Checkpoint, Checkpoint, Checkpoint) {
    let d = data(8);
    let s1 = stage1_pretrain(cfg, &d).unwrap();
    let s2 = stage2_train_generator(cfg, &s1.checkpoint(), &d).unwrap();
    let s3 = stage3_adversarial(cfg, &s2.checkpoint(), &d).unwrap();
    (s1.checkpoint(), s2.checkpoint(), s3.checkpoint())
}

#[test]
fn smoke_runs_emit_finite_losses() {
    let cfg = smoke_config();
    let d = data(8);
    let s1 = stage1_pretrain(&cfg, &d).unwrap();
    assert_eq!(s1.log.len(), 1);
    assert!(s1.log[0].loss.is_finite());
    assert!(s1.log[0].critic_loss.is_none());
    let s2 = stage2_train_generator(&cfg, &s1.checkpoint(), &d).unwrap();
    assert!(s2.log[0].loss.is_finite());
    let s3 = stage3_adversarial(&cfg, &s2.checkpoint(), &d).unwrap();
    assert!(s3.log[0].loss.is_finite());
    assert!(s3.log[0].critic_loss.unwrap().is_finite());
    assert_eq!(s3.checkpoint().stage, Stage::III);
    assert_eq!(s3.checkpoint().epoch, 2);
}

#[test]
fn identical_runs_give_identical_checkpoints() {
    let cfg = smoke_config();
    let a = all_stages(&cfg);
    let b = all_stages(&cfg);
    assert_eq!(a.0.to_json(), b.0.to_json());
    assert_eq!(a.1.to_json(), b.1.to_json());
    assert_eq!(a.2.to_json(), b.2.to_json());
}

#[test]
fn stage_tags_are_enforced() {
    let cfg = smoke_config();
    let (c1, c2, _) = all_stages(&cfg);
    let d = data(8);
    assert!(matches!(
        stage2_train_generator(&cfg, &c2, &d),
        Err(Error::StageMismatch { .. })
    ));
    assert!(matches!(stage3_adversarial(&cfg, &c1, &d), Err(Error::StageMismatch { .. })));
}

#[test]
fn frozen_zero_output_reproduces_stage_one_error() {
    let mut cfg = smoke_config();
    cfg.stage1_epochs = 2;
    cfg.stage2_epochs = 2;
    let d = data(8);
    let test = sample_stream(3, Stream::TestData, 6).unwrap();
    let s1 = stage1_pretrain(&cfg, &d).unwrap();
    let mut frozen = cfg.clone();
    frozen.freeze = vec!["hand.".into(), "refine.gcn.output".into()];
    let s2 = stage2_train_generator(&frozen, &s1.checkpoint(), &d).unwrap();
    let e1 = evaluate_state(&s1.state, &test).unwrap();
    let e2 = evaluate_state(&s2.state, &test).unwrap();
    assert_eq!(e1, e2);
    // Unfrozen, the refinement moves the prediction.
    let s2 = stage2_train_generator(&cfg, &s1.checkpoint(), &d).unwrap();
    assert_ne!(evaluate_state(&s2.state, &test).unwrap(), e1);
}

#[test]
fn disabled_adversary_continues_stage_two() {
    let mut cfg = smoke_config();
    cfg.stage2_epochs = 1;
    cfg.stage3_epochs = 2;
    cfg.stage3_lr = cfg.stage2_lr;
    cfg.critic_lr = 0.0;
    cfg.weights.wass = 0.0;
    let d = data(8);
    let s1 = stage1_pretrain(&cfg, &d).unwrap();
    let s2 = stage2_train_generator(&cfg, &s1.checkpoint(), &d).unwrap();
    let s3 = stage3_adversarial(&cfg, &s2.checkpoint(), &d).unwrap();
    let cont = resume(&s2.checkpoint(), &d, 2).unwrap();
    let gen = |c: &Checkpoint| -> Vec<(String, Vec<f64>)> {
        c.arrays
            .iter()
            .filter(|(k, _)| k.starts_with("param/hand.") || k.starts_with("param/refine."))
            .map(|(k, v)| (k.clone(), v.data().to_vec()))
            .collect()
    };
    let (a, b) = (s3.checkpoint(), cont.checkpoint());
    assert_eq!(gen(&a), gen(&b));
    assert_eq!(a.epoch, b.epoch);
    let losses = |l: &[handpose::pipeline::EpochLog]| l.iter().map(|e| e.loss).collect::<Vec<_>>();
    assert_eq!(losses(&s3.log), losses(&cont.log));
}

#[test]
fn single_variant_ablation_matches_plain_run() {
    let cfg = smoke_config();
    let d = data(8);
    let test = sample_stream(3, Stream::TestData, 6).unwrap();
    let rows = run_ablation(&cfg, &[AblationVariant::default()], &d, &test).unwrap();
    assert_eq!(rows.len(), 3);
    let s1 = stage1_pretrain(&cfg, &d).unwrap();
    let s2 = stage2_train_generator(&cfg, &s1.checkpoint(), &d).unwrap();
    let s3 = stage3_adversarial(&cfg, &s2.checkpoint(), &d).unwrap();
    for (row, st) in rows.iter().zip([&s1.state, &s2.state, &s3.state]) {
        assert_eq!(row.stage, st.stage);
        assert_eq!(row.report, evaluate_state(st, &test).unwrap());
    }
}

#[test]
fn ablation_rows_follow_input_order() {
    let cfg = smoke_config();
    let d = data(8);
    let test = sample_stream(3, Stream::TestData, 4).unwrap();
    let variants = vec![
        AblationVariant {
            name: "none".into(),
            refinement: RefinementKind::None,
            critic: CriticKind::None,
            ..AblationVariant::default()
        },
        AblationVariant {
            name: "fc".into(),
            refinement: RefinementKind::Fc,
            critic: CriticKind::None,
            ..AblationVariant::default()
        },
        AblationVariant {
            name: "single".into(),
            critic: CriticKind::Single,
            use_len: false,
            ..AblationVariant::default()
        },
    ];
    let rows = run_ablation(&cfg, &variants, &d, &test).unwrap();
    let got: Vec<(String, u8)> = rows.iter().map(|r| (r.variant.clone(), r.stage.number())).collect();
    let want: Vec<(String, u8)> = [("none", 1), ("fc", 1), ("fc", 2), ("single", 1), ("single", 2), ("single", 3)]
        .iter()
        .map(|(n, s)| (n.to_string(), *s))
        .collect();
    assert_eq!(got, want);
    let csv = rows_to_csv(&rows);
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().nth(4).unwrap().starts_with("single,I,"));
    // Shared Stage I for variants with the same loss switches.
    assert_eq!(rows[0].report, rows[1].report);
    assert_ne!(rows[0].report, rows[3].report);
}

#[test]
fn checkpoint_file_round_trip_is_byte_exact() {
    let cfg = smoke_config();
    let (_, _, c3) = all_stages(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    save_checkpoint(&c3, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded, c3);
}

#[test]
fn checkpoint_errors_are_distinct() {
    let cfg = smoke_config();
    let (_, c2, _) = all_stages(&cfg);
    let json = c2.to_json();

    let bumped = json.replacen("\"version\":1", "\"version\":7", 1);
    assert!(matches!(
        Checkpoint::from_json(&bumped),
        Err(Error::Version { found: 7, expected: 1 })
    ));

    let mut missing = c2.clone();
    let key = "param/refine.gcn.output.weight";
    missing.arrays.remove(key).unwrap();
    match Checkpoint::from_json(&missing.to_json()) {
        Err(Error::MissingArray(k)) => assert_eq!(k, key),
        other => panic!("expected a missing-array error, got {other:?}"),
    }

    assert!(matches!(Checkpoint::from_json(&json[..json.len() / 2]), Err(Error::Json(_))));
}

#[test]
fn repeated_evaluation_is_byte_stable() {
    let cfg = smoke_config();
    let (_, _, c3) = all_stages(&cfg);
    let test = sample_stream(3, Stream::TestData, 70).unwrap();
    let a = evaluate(&c3, &test).unwrap();
    let b = evaluate(&c3, &test).unwrap();
    assert_eq!(a.summary_csv(), b.summary_csv());
    assert_eq!(a.pck.to_csv(), b.pck.to_csv());
}

#[test]
fn empty_dataset_is_rejected() {
    let cfg = smoke_config();
    assert!(matches!(stage1_pretrain(&cfg, &[]), Err(Error::EmptyBatch)));
}
