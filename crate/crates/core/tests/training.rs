mod common;

use common::{synthetic_fixture, ALPHA_2, EPS_8};
use freqadv_core::attacks::{clean_accuracy, robust_accuracy, AttackConfig};
use freqadv_core::data::Normalization;
use freqadv_core::dct::{band_partition, FrequencyMask};
use freqadv_core::nn::{Checkpoint, ClassifierModel};
use freqadv_core::training::{drop_rate_grid, train, train_freq_drop, Regime, TrainConfig, TrainLog};
use freqadv_core::{Error, PixelModel};

fn without_timing(log: &TrainLog) -> Vec<(usize, Option<f64>, Option<f64>, f64)> {
    log.epochs
        .iter()
        .map(|e| (e.epoch, e.clean_acc, e.adv_acc, e.loss))
        .collect()
}

#[test]
fn zero_budget_adversarial_training_is_standard_training() {
    let fx = synthetic_fixture();
    let cfg = TrainConfig {
        epochs: 3,
        ..fx.cfg.clone()
    };
    let std = train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &cfg).unwrap();
    for random_init in [false, true] {
        let atk = AttackConfig {
            random_init,
            ..AttackConfig::linf(0.0, ALPHA_2, 5)
        };
        let adv_cfg = TrainConfig {
            regime: Regime::Adversarial(atk),
            eval_attack: None,
            ..cfg.clone()
        };
        let adv = train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &adv_cfg).unwrap();
        assert_eq!(std.model.params(), adv.model.params());
        let clean: Vec<_> = adv.log.epochs.iter().map(|e| e.clean_acc).collect();
        assert_eq!(clean, std.log.epochs.iter().map(|e| e.clean_acc).collect::<Vec<_>>());
    }
}

#[test]
fn zero_drop_rate_is_standard_training() {
    let fx = synthetic_fixture();
    let cfg = TrainConfig {
        epochs: 3,
        ..fx.cfg.clone()
    };
    let std = train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &cfg).unwrap();
    let drop = train_freq_drop(
        fx.init.clone(),
        &fx.train,
        &fx.test,
        &fx.norm,
        fx.spec.informative,
        0.0,
        &cfg,
    )
    .unwrap();
    assert_eq!(std.model.params(), drop.model.params());
}

#[test]
fn training_is_deterministic() {
    let fx = synthetic_fixture();
    let cfg = TrainConfig {
        epochs: 2,
        eval_every: 1,
        ..fx.cfg.clone()
    };
    let a = train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &cfg).unwrap();
    let b = train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &cfg).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(without_timing(&a.log), without_timing(&b.log));
}

#[test]
fn small_subset_is_fitted() {
    let fx = synthetic_fixture();
    let subset = fx.train.head(200);
    let cfg = TrainConfig {
        epochs: 30,
        ..fx.cfg.clone()
    };
    let out = train(fx.init.clone(), &subset, &fx.test, &fx.norm, &cfg).unwrap();
    let pm = PixelModel::new(&out.model, &fx.norm).unwrap();
    let acc = clean_accuracy(&pm, &subset).unwrap();
    assert!(acc >= 95.0, "train accuracy {acc}");
}

#[test]
fn checkpoint_reload_gives_identical_accuracy() {
    let fx = synthetic_fixture();
    let cfg = TrainConfig {
        epochs: 4,
        ..fx.cfg.clone()
    };
    let out = train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.checkpoint(&cfg, &fx.norm).save(&path).unwrap();

    let ck = Checkpoint::load(&path).unwrap();
    let model: ClassifierModel = ck.to_model().unwrap();
    let norm = Normalization::read_meta(&ck.meta).unwrap().unwrap();
    assert_eq!(norm, fx.norm);
    let before = clean_accuracy(&PixelModel::new(&out.model, &fx.norm).unwrap(), &fx.test).unwrap();
    let after = clean_accuracy(&PixelModel::new(&model, &norm).unwrap(), &fx.test).unwrap();
    assert_eq!(before, after);
    assert_eq!(Some(before), out.log.final_clean_acc());
}

#[test]
fn exploding_learning_rate_is_reported_as_divergence() {
    let fx = synthetic_fixture();
    let cfg = TrainConfig {
        epochs: 3,
        lr: 1e4,
        momentum: 0.0,
        ..fx.cfg.clone()
    };
    match train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &cfg) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn dropping_bands_hurts_only_when_informative() {
    let fx = synthetic_fixture();
    let chance = 100.0 / fx.spec.classes as f64;
    let std = train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &fx.cfg).unwrap();
    let std_acc = std.log.final_clean_acc().unwrap();
    let inf = train_freq_drop(
        fx.init.clone(),
        &fx.train,
        &fx.test,
        &fx.norm,
        fx.spec.informative,
        1.0,
        &fx.cfg,
    )
    .unwrap();
    let nui = train_freq_drop(
        fx.init.clone(),
        &fx.train,
        &fx.test,
        &fx.norm,
        fx.spec.nuisance,
        1.0,
        &fx.cfg,
    )
    .unwrap();
    let inf_acc = inf.log.final_clean_acc().unwrap();
    let nui_acc = nui.log.final_clean_acc().unwrap();
    assert!(inf_acc <= chance + 10.0, "informative drop {inf_acc}");
    assert!(
        (std_acc - nui_acc).abs() <= 5.0,
        "standard {std_acc}, nuisance drop {nui_acc}"
    );
}

#[test]
fn drop_rate_grid_shape_and_monotonicity() {
    let fx = synthetic_fixture();
    let cfg = TrainConfig {
        epochs: 8,
        ..fx.cfg.clone()
    };
    let bands = band_partition(4).unwrap();
    let rates = [0.0, 0.5, 1.0];
    let grid = drop_rate_grid(&fx.init, &fx.train, &fx.test, &fx.norm, &bands, &rates, &cfg).unwrap();
    assert_eq!(grid.cells.len(), 3);
    assert!(grid
        .cells
        .iter()
        .all(|row| row.len() == 4 && row.iter().all(Option::is_some)));
    assert!(grid.failures.is_empty());
    let cell = |p: usize, b: usize| grid.cells[p][b].unwrap();
    let row0: Vec<f64> = (0..4).map(|b| cell(0, b)).collect();
    let spread = row0.iter().cloned().fold(f64::MIN, f64::max) - row0.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 2.0, "p=0 row {row0:?}");
    for b in 0..4 {
        for p in 1..rates.len() {
            assert!(cell(p, b) <= cell(p - 1, b) + 2.0, "band {b}: {:?}", grid.cells);
        }
    }
}

#[test]
fn informative_band_adversarial_training_gains_robustness() {
    let fx = synthetic_fixture();
    let mask = FrequencyMask::from_band(fx.spec.informative);
    let atk = AttackConfig::linf(EPS_8, ALPHA_2, 10).with_mask(mask);
    let eval = fx.test.head(200);
    let std = train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &fx.cfg).unwrap();
    let adv_cfg = TrainConfig {
        epochs: 20,
        eval_every: 20,
        regime: Regime::Adversarial(atk.clone()),
        ..fx.cfg.clone()
    };
    let adv = train(fx.init.clone(), &fx.train, &fx.test, &fx.norm, &adv_cfg).unwrap();
    let before = robust_accuracy(&PixelModel::new(&std.model, &fx.norm).unwrap(), &eval, &atk, 0).unwrap();
    let after = robust_accuracy(&PixelModel::new(&adv.model, &fx.norm).unwrap(), &eval, &atk, 0).unwrap();
    assert!(after - before >= 25.0, "standard {before}, adversarial {after}");
    assert_eq!(adv.log.last().unwrap().adv_acc, Some(after));
}
