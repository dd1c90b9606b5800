use super::*;
use crate::backbone::EncoderConfig;
use crate::data::{generate_trap, AugmentConfig, TrapSpec, TrapSplits};

fn tiny_data() -> TrapSplits {
    generate_trap(&TrapSpec {
        rho: 0.5,
        image_size: 8,
        n_train: 48,
        n_val: 16,
        n_test_id: 8,
        n_test_ood: 16,
        seed: 3,
        ..TrapSpec::default()
    })
    .unwrap()
}

fn tiny_config(toggles: Toggles) -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig::tiny(),
        num_domains: 2,
        prompt_len: 2,
        cluster_epoch: 2,
        epochs: 4,
        batch_size: 16,
        lr: 1e-3,
        adapter_hidden: 8,
        toggles,
        augment: AugmentConfig::none(),
        clustering: ClusteringOptions {
            restarts: 2,
            ..ClusteringOptions::default()
        },
        ..TrainConfig::pldg_small()
    }
}

fn run(cfg: &TrainConfig, splits: &TrapSplits, obs: &mut dyn TrainObserver) -> (Checkpoint, TrainingHistory) {
    fit(
        cfg,
        TrainData {
            train: &splits.train,
            val: &splits.val,
            val_ood: Some(&splits.test_ood),
        },
        obs,
    )
    .unwrap()
}

#[test]
fn step_count_is_ceiling() {
    assert_eq!(steps_per_epoch(48, 16), 3);
    assert_eq!(steps_per_epoch(49, 16), 4);
    let splits = tiny_data();
    let cfg = TrainConfig {
        batch_size: 20,
        ..tiny_config(Toggles::NONE)
    };
    let (_, h) = run(&cfg, &splits, &mut Quiet);
    assert!(h.epochs.iter().all(|e| e.steps == 3));
}

#[test]
fn frozen_backbone_trains_only_the_head() {
    let splits = tiny_data();
    let cfg = TrainConfig {
        freeze_backbone: true,
        ..tiny_config(Toggles::ALL)
    };
    let init = init_model(&cfg).unwrap();
    let (ck, _) = run(&cfg, &splits, &mut Quiet);
    let (a, b) = (&init.encoder.params, &ck.model.encoder.params);
    assert_eq!(a.patch_w, b.patch_w);
    assert_eq!(a.pos, b.pos);
    assert_eq!(a.blocks, b.blocks);
    assert_ne!(a.head_w, b.head_w);
}

struct PromptWatch {
    at_warmup_end: Option<PldgModel>,
    cluster_epoch: usize,
    assignments: usize,
}

impl TrainObserver for PromptWatch {
    fn on_assignment(&mut self, _a: &PseudoDomainAssignment) {
        self.assignments += 1;
    }
    fn on_epoch(&mut self, record: &EpochRecord, model: &PldgModel) {
        if record.epoch == self.cluster_epoch {
            self.at_warmup_end = Some(model.clone());
        }
    }
}

#[test]
fn schedule_contract() {
    let splits = tiny_data();
    let cfg = tiny_config(Toggles::ALL);
    let mut watch = PromptWatch {
        at_warmup_end: None,
        cluster_epoch: 2,
        assignments: 0,
    };
    let (ck, h) = run(&cfg, &splits, &mut watch);
    assert_eq!(watch.assignments, 1);
    assert_eq!(h.assignment_epoch, Some(2));
    assert_eq!(ck.assignment.as_ref().unwrap().epoch, 2);
    assert_eq!(ck.assignment.as_ref().unwrap().entries.len(), 48);
    // warmup leaves prompts and adapter untouched
    let fresh = init_model(&cfg).unwrap();
    let warm = watch.at_warmup_end.unwrap();
    assert_eq!(warm.prompts, fresh.prompts);
    assert_eq!(warm.adapter, fresh.adapter);
    assert_ne!(warm.encoder, fresh.encoder);
    // warmup epochs are not validated in prompt runs
    assert!(h.epochs[..2].iter().all(|e| e.val_metric.is_none() && e.phase == Phase::Warmup));
    assert!(h.epochs[2..].iter().all(|e| e.val_metric.is_some() && e.phase == Phase::Prompted));
}

#[test]
fn selection_matches_best_history_metric() {
    let splits = tiny_data();
    let (ck, h) = run(&tiny_config(Toggles::ALL), &splits, &mut Quiet);
    let best = h
        .epochs
        .iter()
        .filter_map(|e| e.val_metric)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(ck.val_metric, Some(best));
    assert_eq!(h.best_metric, Some(best));
    let sel = h.selected_epoch.unwrap();
    assert_eq!(h.epochs[sel - 1].val_metric, Some(best));
    assert_eq!(ck.epoch, sel);
}

#[test]
fn early_stopping_on_plateau() {
    let splits = tiny_data();
    let cfg = TrainConfig {
        lr: 0.0,
        patience: 2,
        epochs: 10,
        ..tiny_config(Toggles::NONE)
    };
    let (_, h) = run(&cfg, &splits, &mut Quiet);
    assert_eq!(h.epochs.len(), 3);
    assert!(h.stopped_early);
    assert_eq!(h.selected_epoch, Some(1));
}

#[test]
fn repeated_runs_are_identical() {
    let splits = tiny_data();
    let cfg = TrainConfig {
        augment: AugmentConfig::default(),
        ..tiny_config(Toggles::ALL)
    };
    let mut a = StepLog::default();
    let mut b = StepLog::default();
    let (ca, ha) = run(&cfg, &splits, &mut a);
    let (cb, hb) = run(&cfg, &splits, &mut b);
    assert_eq!(ha, hb);
    assert_eq!(a.steps, b.steps);
    assert_eq!(ca, cb);
}

#[test]
fn predict_contract() {
    let splits = tiny_data();
    let imgs = splits.test_ood.pixels();
    let erm = init_model(&tiny_config(Toggles::NONE)).unwrap();
    let p = predict(&erm, &imgs).unwrap();
    let (_, logits) = erm.encoder.forward_plain(&imgs).unwrap();
    assert_eq!(p.scores, softmax_rows(&logits));
    assert!(p.weights.is_empty());

    let full = init_model(&tiny_config(Toggles::ALL)).unwrap();
    let a = predict(&full, &imgs).unwrap();
    let b = predict(&full, &imgs).unwrap();
    assert_eq!(a, b);
    for row in a.scores.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-6);
    }
    assert_eq!(a.weights.len(), imgs.len());

    // prompts without an adapter average the domain prompts uniformly
    let p_only = init_model(&tiny_config(Toggles {
        prompts: true,
        ..Toggles::NONE
    }))
    .unwrap();
    let pred = predict(&p_only, &imgs[..2]).unwrap();
    assert!(pred.weights.iter().all(|w| w.values().iter().all(|&x| x == 0.5)));
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let splits = tiny_data();
    let (ck, _) = run(&tiny_config(Toggles::ALL), &splits, &mut Quiet);
    let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    assert_eq!(back, ck);
    let imgs = splits.test_ood.pixels();
    assert_eq!(back.predict(&imgs).unwrap(), ck.predict(&imgs).unwrap());

    let mut wrong = ck.clone();
    wrong.config.num_domains = 3;
    let err = Checkpoint::from_json(&wrong.to_json().unwrap()).unwrap_err();
    assert!(matches!(err, PldgError::Checkpoint(_)), "{err}");
    let mut wrong = ck.clone();
    wrong.config.encoder.embed_dim = 32;
    assert!(Checkpoint::from_json(&wrong.to_json().unwrap()).is_err());
    let mut wrong = ck;
    wrong.format_version = 99;
    assert!(Checkpoint::from_json(&wrong.to_json().unwrap()).is_err());
}

#[test]
fn config_validation_and_toml() {
    let cfg = TrainConfig::pldg_desk();
    assert_eq!(TrainConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    for name in PRESETS {
        TrainConfig::preset(name).unwrap().validate().unwrap();
    }
    assert!(TrainConfig::preset("nope").is_err());
    let bad = TrainConfig {
        cluster_epoch: 30,
        ..cfg.clone()
    };
    assert!(matches!(bad.validate(), Err(PldgError::Config(_))));
    let bad = TrainConfig {
        patience: 0,
        ..cfg.clone()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        toggles: Toggles {
            adapter: true,
            ..Toggles::NONE
        },
        ..cfg.clone()
    };
    assert!(bad.validate().is_err());
    let text = cfg.to_toml().unwrap() + "\nmystery = 1\n";
    assert!(TrainConfig::from_toml(&text).is_err());
    let vit = TrainConfig::vitb16();
    assert_eq!((vit.lr, vit.weight_decay, vit.prompt_len, vit.patience), (5e-6, 1e-2, 4, 22));
}

#[test]
fn ood_selection_needs_ood_set() {
    let splits = tiny_data();
    let cfg = TrainConfig {
        selection: Selection::OodVal,
        ..tiny_config(Toggles::NONE)
    };
    let err = fit(
        &cfg,
        TrainData {
            train: &splits.train,
            val: &splits.val,
            val_ood: None,
        },
        &mut Quiet,
    )
    .unwrap_err();
    assert!(matches!(err, PldgError::Config(_)));
}

#[test]
fn too_many_clusters_abort() {
    let splits = tiny_data();
    let cfg = TrainConfig {
        num_domains: 100,
        ..tiny_config(Toggles::ALL)
    };
    let err = fit(
        &cfg,
        TrainData {
            train: &splits.train,
            val: &splits.val,
            val_ood: None,
        },
        &mut Quiet,
    )
    .unwrap_err();
    assert!(err.to_string().contains("clustering at epoch 2"), "{err}");
}

#[test]
fn ablation_lattice_changes_only_its_terms() {
    let splits = tiny_data();
    let last = |t: Toggles| {
        let mut log = StepLog::default();
        run(&tiny_config(t), &splits, &mut log);
        log.steps.last().unwrap().loss
    };
    let p = last(Toggles {
        prompts: true,
        ..Toggles::NONE
    });
    assert_eq!((p.weighted_ce, p.weight_supervision), (0.0, 0.0));
    let pa = last(Toggles {
        prompts: true,
        adapter: true,
        ..Toggles::NONE
    });
    assert!(pa.weighted_ce > 0.0 && pa.weight_supervision > 0.0);
    let erm = last(Toggles::NONE);
    assert_eq!(erm.total, erm.mixup_loss);
}

#[test]
fn history_csv_layout() {
    let h = TrainingHistory {
        epochs: vec![
            EpochRecord {
                epoch: 1,
                phase: Phase::Warmup,
                steps: 2,
                train_loss: 0.5,
                val_metric: None,
            },
            EpochRecord {
                epoch: 2,
                phase: Phase::Prompted,
                steps: 2,
                train_loss: 0.25,
                val_metric: Some(0.75),
            },
        ],
        selected_epoch: Some(2),
        ..TrainingHistory::default()
    };
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "epoch,train_loss,val_metric,selected\n1,0.5,,0\n2,0.25,0.75,1\n"
    );
}
