use promptcs::encoder::{EncoderConfig, EncoderParams};
use promptcs::eval::{generate_synthetic, SynthConfig};
use promptcs::graph::{AttributedGraph, Community};
use promptcs::query::{generate_workload, sample_labels, EvalQuery, LabeledQuery, QueryKind};
use promptcs::trainer::{
    evaluate, fine_tune, train, FineTuneMode, ModelState, TrainConfig, Validation,
};
use promptcs::Error;

fn two_communities(seed: u64) -> (AttributedGraph, Vec<Community>) {
    generate_synthetic(&SynthConfig {
        communities: 2,
        community_size: 50,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn labelled(
    g: &AttributedGraph,
    cs: &[Community],
    kind: QueryKind,
    count: usize,
    seed: u64,
) -> Vec<LabeledQuery> {
    let params = promptcs::query::WorkloadParams {
        count,
        min_nodes: 1,
        max_nodes: 3,
        attrs_per_query: 3,
        seed,
    };
    generate_workload(kind, g, cs, &params)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, q)| {
            let c = &cs[q.community.unwrap()];
            sample_labels(g, &q, c, 1.0, seed + i as u64).unwrap()
        })
        .collect()
}

fn as_eval(queries: &[LabeledQuery], cs: &[Community]) -> Vec<EvalQuery> {
    queries
        .iter()
        .map(|lq| EvalQuery {
            query: lq.query.clone(),
            truth: cs[lq.query.community.unwrap()].clone(),
        })
        .collect()
}

fn small(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        lr_theta: 1e-3,
        lr_tau: 1e-3,
        seed,
        encoder: EncoderConfig {
            layers: 2,
            hidden: 32,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn default_training_drives_the_loss_down() {
    let (g, cs) = two_communities(0);
    let queries = labelled(&g, &cs, QueryKind::Afc, 10, 1);
    let cfg = TrainConfig {
        validation: Validation::Last,
        ..TrainConfig::default()
    };
    let (_, report) = train(&g, &queries, &[], &cfg).unwrap();
    assert_eq!(report.epoch_loss.len(), 200);
    let first = report.epoch_loss[0];
    let last = *report.epoch_loss.last().unwrap();
    assert!(last < 0.2 * first, "loss {first} -> {last}");
    assert_eq!(report.selected_epoch, Some(199));
    assert!(report.val_f1.iter().all(Option::is_none));
}

#[test]
fn zero_token_rate_leaves_tokens_untouched() {
    let (g, cs) = two_communities(1);
    let queries = labelled(&g, &cs, QueryKind::Afc, 4, 2);
    let cfg = TrainConfig {
        lr_tau: 0.0,
        validation: Validation::Last,
        ..small(3, 5)
    };
    let init = ModelState::init(g.attr_count(), &cfg).unwrap();
    let (state, _) = train(&g, &queries, &[], &cfg).unwrap();
    assert_eq!(state.tokens, init.tokens);
    assert_ne!(state.encoder, init.encoder);
}

#[test]
fn prompt_only_fine_tuning_freezes_the_encoder() {
    let (g, cs) = two_communities(2);
    let queries = labelled(&g, &cs, QueryKind::Afc, 4, 3);
    let cfg = TrainConfig {
        validation: Validation::Last,
        ..small(3, 6)
    };
    let warm = ModelState::init(g.attr_count(), &cfg).unwrap();
    let (tuned, _) = fine_tune(&g, &queries, &[], &warm, &cfg, FineTuneMode::PromptOnly).unwrap();
    assert_eq!(tuned.encoder, warm.encoder);
    assert_ne!(tuned.tokens, warm.tokens);

    let (same, report) = fine_tune(&g, &queries, &[], &warm, &cfg, FineTuneMode::None).unwrap();
    assert_eq!(same, warm);
    assert!(report.epoch_loss.is_empty());
}

#[test]
fn only_query_tokens_move_under_attribute_queries() {
    let (g, cs) = two_communities(3);
    let queries: Vec<LabeledQuery> = labelled(&g, &cs, QueryKind::Afc, 6, 4)
        .into_iter()
        .filter(|lq| lq.query.community == Some(0))
        .collect();
    assert!(!queries.is_empty());
    let cfg = TrainConfig {
        validation: Validation::Last,
        ..small(2, 7)
    };
    let warm = ModelState::init(g.attr_count(), &cfg).unwrap();
    let (tuned, _) = fine_tune(&g, &queries, &[], &warm, &cfg, FineTuneMode::PromptOnly).unwrap();
    let used: Vec<usize> = queries
        .iter()
        .flat_map(|lq| lq.query.attrs.clone())
        .collect();
    for a in 0..g.attr_count() {
        let id = promptcs::prompt::TokenId::Attr(a);
        let moved = tuned.tokens.embedding(id) != warm.tokens.embedding(id);
        assert_eq!(moved, used.contains(&a), "attribute token {a}");
    }
}

#[test]
fn fine_tuning_rejects_a_different_attribute_space() {
    let (g, cs) = two_communities(4);
    let queries = labelled(&g, &cs, QueryKind::Afc, 2, 5);
    let cfg = small(1, 0);
    let warm = ModelState::init(g.attr_count() + 1, &cfg).unwrap();
    let err = fine_tune(&g, &queries, &[], &warm, &cfg, FineTuneMode::Both).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn fine_tuning_both_is_at_least_as_good_as_no_tuning() {
    let (mut tuned_sum, mut warm_sum) = (0.0, 0.0);
    for seed in 0..5 {
        let (ga, ca) = two_communities(100 + seed);
        let (gb, cb) = two_communities(200 + seed);
        let pre = labelled(&ga, &ca, QueryKind::Afc, 6, seed);
        let (warm, _) = train(&ga, &pre, &[], &small(8, seed)).unwrap();

        let target = labelled(&gb, &cb, QueryKind::Afc, 10, 50 + seed);
        let (train_q, val_q) = target.split_at(6);
        let val = as_eval(val_q, &cb);
        let (tuned, _) = fine_tune(
            &gb,
            train_q,
            &val,
            &warm,
            &small(8, seed),
            FineTuneMode::Both,
        )
        .unwrap();
        tuned_sum += evaluate(&tuned, &gb, &val, 0.5).unwrap().f1;
        warm_sum += evaluate(&warm, &gb, &val, 0.5).unwrap().f1;
    }
    assert!(
        tuned_sum >= warm_sum,
        "both {} vs none {}",
        tuned_sum / 5.0,
        warm_sum / 5.0
    );
}

#[test]
fn trained_eqa_model_ranks_the_query_community_higher() {
    let (g, cs) = two_communities(5);
    let queries = labelled(&g, &cs, QueryKind::Eqa, 8, 6);
    let (state, _) = train(&g, &queries, &[], &small(15, 1)).unwrap();
    for lq in labelled(&g, &cs, QueryKind::Eqa, 4, 99) {
        assert!(lq.query.attrs.is_empty());
        let c = &cs[lq.query.community.unwrap()];
        let p = state.predict(&g, &lq.query, 0.5).unwrap();
        let mean = |inside: bool| {
            let vals: Vec<f64> = (0..g.node_count())
                .filter(|&v| c.contains(v) == inside)
                .map(|v| p.probs[v])
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(mean(true) > mean(false));
    }
}

#[test]
fn model_and_encoder_checkpoints_round_trip() {
    let (g, _) = two_communities(6);
    let state = ModelState::init(g.attr_count(), &small(1, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    state.save(&path, None).unwrap();
    assert_eq!(ModelState::load(&path).unwrap(), state);

    let enc = dir.path().join("encoder.json");
    state.encoder.save(&enc).unwrap();
    assert_eq!(EncoderParams::load(&enc).unwrap(), state.encoder);
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let (g, cs) = two_communities(7);
    let queries = labelled(&g, &cs, QueryKind::Afc, 2, 8);
    for bad in [
        TrainConfig {
            epochs: 0,
            ..small(1, 0)
        },
        TrainConfig {
            lr_theta: -1.0,
            ..small(1, 0)
        },
        TrainConfig {
            virtual_tokens: 0,
            ..small(1, 0)
        },
    ] {
        assert!(matches!(
            train(&g, &queries, &[], &bad),
            Err(Error::Config(_))
        ));
    }
    assert!(train(&g, &[], &[], &small(1, 0)).is_err());
}
