//! Dataset, victim, crafting and evaluation wired together at small scale.

use std::sync::OnceLock;

use uap_core::eval::{
    craft_and_evaluate, evaluate_uap, labelled, one_per_class, read_rows, single_sample_attack,
    transfer_matrix, CraftConfig,
};
use uap_core::model::{
    accuracy, generate_synthetic_dataset, load_checkpoint, save_checkpoint, train, DatasetSpec,
    LabeledSample, Split, TrainConfig,
};
use uap_core::{
    penalty_uap, snr, Architecture, AttackMode, GreedyConfig, Method, Model, PenaltyConfig,
    Perturbation,
};

struct Setup {
    model: Model,
    train: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
}

fn setup() -> &'static Setup {
    static SETUP: OnceLock<Setup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let data = generate_synthetic_dataset(&DatasetSpec::new(3, 60, 1024, 0.1, 11)).unwrap();
        let train_set = data.split(Split::Train);
        let mut model = Architecture::RandCnn.build(1024, 3, 4).unwrap();
        train(&mut model, &train_set, &TrainConfig::default()).unwrap();
        Setup {
            model,
            train: train_set,
            test: data.split(Split::Test),
        }
    })
}

fn toy_penalty(mode: AttackMode) -> PenaltyConfig {
    PenaltyConfig {
        c: 50.0,
        kappa: 5.0,
        ..PenaltyConfig::new(mode)
    }
}

#[test]
fn victim_learns_the_bands() {
    let s = setup();
    assert!(accuracy(&s.model, &s.test).unwrap() >= 0.95);
}

#[test]
fn both_methods_fool_the_toy_victim() {
    let s = setup();
    for cfg in [
        CraftConfig::Greedy(GreedyConfig::new(AttackMode::Untargeted)),
        CraftConfig::Penalty(toy_penalty(AttackMode::Untargeted)),
    ] {
        let (crafted, report) = craft_and_evaluate(&s.model, &s.train, &s.test, &cfg).unwrap();
        assert!(crafted.converged, "{}", cfg.method());
        assert!(crafted.train_asr >= 0.9);
        assert!(
            report.test_asr >= 0.7,
            "{}: {}",
            cfg.method(),
            report.test_asr
        );
        assert_eq!(report.recount(), report.test_asr);
        assert_eq!(report.train_asr, Some(crafted.train_asr));
    }
}

#[test]
fn report_rows_agree_with_direct_metrics() {
    let s = setup();
    let (crafted, report) = craft_and_evaluate(
        &s.model,
        &s.train,
        &s.test,
        &CraftConfig::Penalty(toy_penalty(AttackMode::Targeted(1))),
    )
    .unwrap();
    let pert = &crafted.perturbation;
    for (row, item) in report.rows.iter().zip(&s.test) {
        let x = item.sample.samples();
        let adv = pert.apply(x).unwrap();
        let applied: Vec<f64> = adv.iter().zip(x).map(|(a, b)| a - b).collect();
        assert_eq!(row.sample_id, item.id);
        assert_eq!(row.perturbed_pred, s.model.predict(&adv).unwrap());
        assert_eq!(row.success, row.perturbed_pred == 1);
        assert_eq!(row.snr_db, snr(x, &applied).unwrap());
    }
    let mut csv = Vec::new();
    report.write_rows_csv(&mut csv).unwrap();
    assert_eq!(read_rows(csv.as_slice()).unwrap(), report.rows);
}

#[test]
fn saved_artifacts_evaluate_identically() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let (crafted, _) = craft_and_evaluate(
        &s.model,
        &s.train,
        &s.test,
        &CraftConfig::Penalty(toy_penalty(AttackMode::Untargeted)),
    )
    .unwrap();
    let mut pert = crafted.perturbation;
    pert.snap_to_f32();
    let mut model = s.model.clone();
    model.snap_to_f32();

    let pert_path = dir.path().join("uap.json");
    pert.save(&pert_path).unwrap();
    let loaded = Perturbation::load(&pert_path).unwrap();
    assert_eq!(loaded, pert);
    assert_eq!(loaded.method, Method::Penalty);

    let model_path = dir.path().join("victim");
    save_checkpoint(&model, &model_path).unwrap();
    let reloaded = load_checkpoint(&model_path).unwrap();
    assert_eq!(reloaded.fingerprint(), model.fingerprint());

    let a = evaluate_uap(&model, &s.test, &pert, AttackMode::Untargeted).unwrap();
    let b = evaluate_uap(&reloaded, &s.test, &loaded, AttackMode::Untargeted).unwrap();
    assert_eq!(a.rows, b.rows);
}

#[test]
fn single_sample_penalty_fools_its_sample() {
    let s = setup();
    let picks = one_per_class(&s.train, 3);
    assert_eq!(
        picks.iter().map(|p| p.label).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
    let cfg = PenaltyConfig {
        c: 50.0,
        kappa: 90.0,
        batch_size: 1,
        ..PenaltyConfig::new(AttackMode::Untargeted)
    };
    for pick in &picks {
        let out = penalty_uap(&s.model, &labelled(std::slice::from_ref(pick)), &cfg).unwrap();
        assert!(
            out.converged,
            "sample {} not fooled in {} steps",
            pick.id, out.iterations
        );
        let adv = out.perturbation.apply(pick.sample.samples()).unwrap();
        assert_ne!(s.model.predict(&adv).unwrap(), pick.label);
    }
    let reports = single_sample_attack(&s.model, &picks, &s.test, &cfg).unwrap();
    assert_eq!(reports.len(), 3);
}

#[test]
fn transfer_matrix_leaves_the_diagonal_empty() {
    let s = setup();
    let mut other = Architecture::GammaCnn.build(1024, 3, 9).unwrap();
    train(&mut other, &s.train, &TrainConfig::default()).unwrap();
    let models = vec![
        ("rand".to_string(), s.model.clone()),
        ("gamma".to_string(), other),
    ];
    let cfg = CraftConfig::Greedy(GreedyConfig::new(AttackMode::Untargeted));
    let perts: Vec<Perturbation> = models
        .iter()
        .map(|(_, m)| {
            craft_and_evaluate(m, &s.train, &s.test, &cfg)
                .unwrap()
                .0
                .perturbation
        })
        .collect();
    let matrix = transfer_matrix(&models, &perts, &s.test, AttackMode::Untargeted).unwrap();
    assert_eq!(matrix.names, vec!["rand", "gamma"]);
    for (i, row) in matrix.asr.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            assert_eq!(cell.is_none(), i == j);
            if let Some(rate) = cell {
                assert!((0.0..=1.0).contains(rate));
            }
        }
    }
}
