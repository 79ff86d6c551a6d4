use super::*;
use crate::corpus::{generate_synthetic, make_examples, DialogContext, SyntheticConfig, Turn};
use crate::encoder::EncoderConfig;
use crate::model::AblationFlags;
use crate::schema::{fixtures, load_schema_str, ValidSchema};

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            dim: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 16,
            max_positions: 48,
            max_vocab: 300,
        },
        context_window: 24,
        mixture_weight: 0.5,
    }
}

fn config(model: &str) -> TrainConfig {
    TrainConfig {
        model: model.parse().unwrap(),
        model_config: tiny_model_config(),
        epochs: 2,
        batch_size: 4,
        learning_rate: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn synthetic(dialogs: usize) -> (Vec<Example>, SchemaRegistry) {
    let cfg = SyntheticConfig {
        num_tasks: 4,
        num_domains: 2,
        slots_per_task: 2,
        dialogs_per_task: dialogs,
        ..Default::default()
    };
    let (corpus, graphs) = generate_synthetic(&cfg, 7).unwrap();
    (
        make_examples(&corpus),
        SchemaRegistry::from_graphs(graphs).unwrap(),
    )
}

fn bank() -> ValidSchema {
    ValidSchema::new(load_schema_str(fixtures::BANK_BALANCE).unwrap()).unwrap()
}

fn example(task: &str, gold: &str) -> Example {
    Example {
        context: DialogContext::new(vec![Turn::user("hi")]),
        gold_action: ActionId::new(gold),
        task: task.into(),
        domain: "bank".into(),
        dialog_id: "d".into(),
        turn_index: 1,
    }
}

#[test]
fn random_batches_cover_the_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let one = sample_batches_random(5, 10, &mut rng);
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].examples.len(), 5);
    let a = sample_batches_random(37, 8, &mut ChaCha8Rng::seed_from_u64(9));
    let b = sample_batches_random(37, 8, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
    let mut all: Vec<usize> = a.iter().flat_map(|b| b.examples.clone()).collect();
    all.sort();
    assert_eq!(all, (0..37).collect::<Vec<_>>());
}

#[test]
fn random_batches_mix_tasks() {
    // Two equally sized tasks: a size-8 batch is single-task with
    // probability about 2 / 2^8, so both should show up in over 99%.
    let tasks: Vec<&str> = (0..1000)
        .map(|i| if i % 2 == 0 { "a" } else { "b" })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mixed = 0;
    let mut total = 0;
    while total < 1000 {
        for b in sample_batches_random(tasks.len(), 8, &mut rng) {
            let set: BTreeSet<&str> = b.examples.iter().map(|&i| tasks[i]).collect();
            mixed += usize::from(set.len() == 2);
            total += 1;
        }
    }
    assert!(mixed as f64 / total as f64 >= 0.99, "{mixed}/{total}");
}

#[test]
fn same_task_batches_partition_the_epoch() {
    let tasks: Vec<&str> = (0..50).map(|i| ["x", "y", "z"][i % 3]).collect();
    let batches = sample_batches_same_task(&tasks, 4, &mut ChaCha8Rng::seed_from_u64(2));
    let mut seen = vec![0; tasks.len()];
    for b in &batches {
        let TaskScope::Task(t) = &b.scope else {
            panic!("mixed scope")
        };
        assert!(b.examples.iter().all(|&i| tasks[i] == t));
        assert!(!b.examples.is_empty() && b.examples.len() <= 4);
        b.examples.iter().for_each(|&i| seen[i] += 1);
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn same_task_selection_follows_task_size() {
    let tasks: Vec<&str> = (0..100)
        .map(|i| if i < 90 { "big" } else { "small" })
        .collect();
    let trials = 10_000;
    let big = (0..trials)
        .filter(|&s| {
            let b = sample_batches_same_task(&tasks, 8, &mut ChaCha8Rng::seed_from_u64(s));
            b[0].scope == TaskScope::Task("big".into())
        })
        .count();
    let freq = big as f64 / trials as f64;
    // Binomial sd is 0.003 at p = 0.9.
    assert!((freq - 0.9).abs() < 0.015, "{freq}");
}

#[test]
fn candidates_per_mode() {
    let mut reg = SchemaRegistry::new();
    reg.insert(bank());
    let s = reg.get("bank_balance").unwrap();
    let golds: Vec<ActionId> = s
        .candidate_nodes()
        .iter()
        .map(|n| s.next_action(n).unwrap())
        .collect();
    let distinct: BTreeSet<&ActionId> = golds.iter().collect();
    let picked: Vec<Example> = distinct
        .iter()
        .take(4)
        .map(|a| example("bank_balance", a.as_str()))
        .collect();
    let refs: Vec<&Example> = picked.iter().collect();
    let expected: usize = distinct
        .iter()
        .take(4)
        .map(|a| s.nodes_for_action(a).len())
        .sum();
    let set = build_candidates(&refs, &reg, CandidateMode::BatchGoldNodes).unwrap();
    assert_eq!(set.len(), expected);
    let full = build_candidates(&refs[..1], &reg, CandidateMode::FullTaskSchema).unwrap();
    assert_eq!(full.len(), s.candidate_nodes().len());

    // An action reached from two nodes brings both.
    let shared = distinct
        .iter()
        .find(|a| s.nodes_for_action(a).len() >= 2)
        .expect("fixture has a shared action");
    let ex = example("bank_balance", shared.as_str());
    let set = build_candidates(&[&ex], &reg, CandidateMode::BatchGoldNodes).unwrap();
    assert_eq!(set.len(), s.nodes_for_action(shared).len());

    let missing = example("bank_balance", "no_such_action");
    assert!(matches!(
        build_candidates(&[&missing], &reg, CandidateMode::BatchGoldNodes),
        Err(TrainError::GoldNodeMissing { .. })
    ));
}

#[test]
fn gold_node_missing_agrees_with_corpus_oracle() {
    let (mut examples, reg) = synthetic(4);
    examples.retain(|e| !e.context.is_empty());
    // Corrupt a few labels; the oracle is a direct scan of every candidate.
    for (i, e) in examples.iter_mut().enumerate() {
        if i % 7 == 0 {
            e.gold_action = ActionId::new(format!("bogus_{i}"));
        }
    }
    for e in &examples {
        let s = reg.get(&e.task).unwrap();
        let oracle_ok = s
            .candidate_nodes()
            .iter()
            .any(|n| s.next_action(n).unwrap() == e.gold_action);
        let got = build_candidates(&[e], &reg, CandidateMode::BatchGoldNodes);
        assert_eq!(oracle_ok, got.is_ok(), "{}", e.gold_action);
    }
}

#[test]
fn loss_values() {
    let v = ActionVocabulary::new(["a", "b", "c", "d"].map(ActionId::new));
    let one_hot = ActionDistribution {
        probs: vec![1.0, 0.0, 0.0, 0.0],
    };
    assert_eq!(
        loss(&one_hot, &v, &ActionId::new("a")).unwrap(),
        -(1.0 + LOSS_EPS).ln()
    );
    assert!(loss(&one_hot, &v, &ActionId::new("a")).unwrap().abs() < 1e-11);
    let uniform = ActionDistribution {
        probs: vec![0.25; 4],
    };
    assert!((loss(&uniform, &v, &ActionId::new("c")).unwrap() - 4f64.ln()).abs() < 1e-11);
    assert!((loss(&one_hot, &v, &ActionId::new("b")).unwrap() - 27.631021115928547).abs() < 1e-9);
    assert!(loss(&one_hot, &v, &ActionId::new("z")).is_err());
}

#[test]
fn config_validation() {
    let mut c = config("sam");
    c.epochs = 0;
    assert!(c.validate().is_err());
    let mut c = config("bert+s");
    c.candidate_mode = CandidateMode::FullTaskSchema;
    assert!(c.validate().is_err());
    let mut c = config("sam");
    c.learning_rate = f64::NAN;
    assert!(c.validate().is_err());
    assert!(config("sam").validate().is_ok());
}

#[test]
fn loss_goes_down_on_a_toy_task() {
    let (examples, reg) = synthetic(2);
    for name in ["sam", "baseline"] {
        let c = TrainConfig {
            epochs: 6,
            ..config(name)
        };
        let out = train(c, &examples, &reg, None, None).unwrap();
        let losses: Vec<f64> = out.metrics.iter().map(|m| m.loss).collect();
        assert!(
            losses.last().unwrap() < &(0.7 * losses[0]),
            "{name}: {losses:?}"
        );
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let (examples, reg) = synthetic(2);
    let c = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        ..config("sam-4")
    };
    let t = Trainer::new(c, &examples, &reg, None).unwrap();
    let before = t.model().clone();
    let out = t.run().unwrap();
    assert_eq!(out.last, before);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (examples, reg) = synthetic(3);
    let held: Vec<Example> = examples.iter().take(10).cloned().collect();
    let c = TrainConfig {
        epochs: 2,
        ..config("sam")
    };
    let full = Trainer::new(c.clone(), &examples, &reg, Some(&held))
        .unwrap()
        .run()
        .unwrap();
    let again = Trainer::new(c.clone(), &examples, &reg, Some(&held))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(full.last, again.last);
    assert_eq!(full.metrics, again.metrics);

    let mut t = Trainer::new(c, &examples, &reg, Some(&held)).unwrap();
    for _ in 0..3 {
        t.step().unwrap();
    }
    assert_eq!(t.position().step, 3);
    let json = serde_json::to_string(&t.checkpoint()).unwrap();
    drop(t);
    let ckpt: Checkpoint = serde_json::from_str(&json).unwrap();
    let resumed = Trainer::resume(ckpt, &examples, &reg, Some(&held))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(resumed.last, full.last);
    assert_eq!(resumed.metrics, full.metrics);
    assert_eq!(resumed.best, full.best);
}

#[test]
fn run_directory_layout() {
    let (examples, reg) = synthetic(2);
    let dir = tempfile::tempdir().unwrap();
    let held: Vec<Example> = examples.iter().take(5).cloned().collect();
    let out = train(
        config("baseline"),
        &examples,
        &reg,
        Some(&held),
        Some(dir.path()),
    )
    .unwrap();
    let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(lines.lines().nth(1).unwrap()).unwrap();
    assert_eq!(first["split"], "heldout");
    assert!(first["accuracy"].is_number() && first["f1"].is_number());
    for f in ["epoch_0.ckpt", "epoch_1.ckpt", "best.ckpt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let best = ModelBundle::load(dir.path().join("best.ckpt")).unwrap();
    assert_eq!(best, out.best);
    let ck = Checkpoint::load(dir.path().join("epoch_1.ckpt")).unwrap();
    assert_eq!(ck.bundle.model, out.last);
}

#[test]
fn non_finite_loss_aborts() {
    let (examples, reg) = synthetic(2);
    let mut t = Trainer::new(config("baseline"), &examples, &reg, None).unwrap();
    t.model.head.as_mut().unwrap().b.set(0, 0, f64::NAN);
    let err = t.run().unwrap_err();
    assert!(
        matches!(
            err,
            TrainError::Divergence {
                epoch: 0,
                step: 0,
                ..
            }
        ),
        "{err}"
    );

    let c = config("sam");
    let mut model = Trainer::new(c.clone(), &examples, &reg, None)
        .unwrap()
        .model()
        .clone();
    model.encoder.token_embedding.set(0, 0, f64::NAN);
    let err = Trainer::with_model(c, model, &examples, &reg, None)
        .err()
        .unwrap();
    assert!(
        matches!(
            err,
            TrainError::Model(ModelError::Encoder(
                crate::encoder::EncoderError::NonFinite(_)
            ))
        ),
        "{err}"
    );
}

#[test]
fn sam_skips_empty_contexts_and_learns_schema_actions() {
    let (examples, reg) = synthetic(2);
    let t = Trainer::new(config("sam"), &examples, &reg, None).unwrap();
    let empty = examples.iter().filter(|e| e.context.is_empty()).count();
    assert!(empty > 0);
    for s in reg.schemas() {
        for a in s.actions() {
            assert!(t.model().actions.contains(&a));
        }
    }
    assert_eq!(t.run().unwrap().skipped_examples, empty);
    let b = Trainer::new(config("baseline"), &examples, &reg, None).unwrap();
    assert_eq!(b.run().unwrap().skipped_examples, 0);
}

/// Loss gradients of one batch against central differences.
#[allow(clippy::needless_range_loop)]
fn check_gradients(kind: &str) {
    let mut reg = SchemaRegistry::new();
    reg.insert(bank());
    let s = reg.get("bank_balance").unwrap();
    let node = s.candidate_nodes()[1].clone();
    let ex = Example {
        context: DialogContext::new(vec![Turn::user("i would like my balance")]),
        gold_action: s.next_action(&node).unwrap(),
        ..example("bank_balance", "x")
    };
    let mut cfg = TrainConfig {
        model_config: ModelConfig {
            encoder: EncoderConfig {
                dim: 8,
                layers: 2,
                heads: 2,
                ffn_dim: 8,
                max_positions: 16,
                max_vocab: 60,
            },
            context_window: 16,
            mixture_weight: 0.5,
        },
        batch_size: 1,
        ..config(kind)
    };
    cfg.optimizer.clip_norm = None;
    let examples = vec![ex];
    let mut t = Trainer::new(cfg, &examples, &reg, None).unwrap();
    let batch = t.plan[0].clone();
    let (_, grads) = t.batch_gradients(&batch).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..t.model.tensor_count() {
        let len = t.model.tensors()[k].data().len();
        // A handful of entries per tensor keeps this quick.
        for j in (0..len).step_by((len / 5).max(1)) {
            let orig = t.model.tensors()[k].data()[j];
            t.model.tensors_mut()[k].data_mut()[j] = orig + h;
            let up = t.batch_gradients(&batch).unwrap().0;
            t.model.tensors_mut()[k].data_mut()[j] = orig - h;
            let down = t.batch_gradients(&batch).unwrap().0;
            t.model.tensors_mut()[k].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[k].as_ref().map_or(0.0, |g| g.data()[j]);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "{kind}: worst relative error {worst}");
}

#[test]
fn end_to_end_gradients_sam() {
    check_gradients("sam");
}

#[test]
fn end_to_end_gradients_with_head_and_sentence_attention() {
    check_gradients("bert+s");
    check_gradients("baseline");
}

#[test]
fn same_task_flag_selects_the_sampler() {
    let (examples, reg) = synthetic(3);
    let t = Trainer::new(config("sam"), &examples, &reg, None).unwrap();
    assert!(t.plan.iter().all(|b| matches!(b.scope, TaskScope::Task(_))));
    let t = Trainer::new(
        TrainConfig {
            model: ModelKind::Sam(AblationFlags::without(&[3])),
            ..config("sam")
        },
        &examples,
        &reg,
        None,
    )
    .unwrap();
    assert!(t.plan.iter().all(|b| b.scope == TaskScope::Mixed));
}
