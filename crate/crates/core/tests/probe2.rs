// scratch probe: inspect trained regressor outputs on a cruise frame
use plan_core::bench::{build_training_corpus, corpus_anchors, train_variant_params};
use plan_core::config::Config;
use plan_core::learn::{candidate_features, forward};
use plan_core::planner::gen_candidates;

#[test]
#[ignore]
fn probe_trained_net() {
    let cfg = Config::default();
    let corpus = build_training_corpus(&cfg, cfg.seed);
    println!("corpus size: {}", corpus.len());
    let anchors = corpus_anchors(&corpus, &cfg, cfg.seed);

    // winner distribution in the no-aug corpus
    let mut winner_hist = [0usize; 8];
    let mut speed_sum = 0.0;
    for (frame, labels) in &corpus {
        let sample = plan_core::learn::build_training_sample(
            frame, labels, &anchors.0, &anchors.1, cfg.cost.ego_dims(),
        )
        .unwrap();
        winner_hist[sample.winner] += 1;
        speed_sum += frame.ego.speed;
    }
    println!("winner histogram: {winner_hist:?}");
    println!("mean corpus speed: {:.2}", speed_sum / corpus.len() as f64);

    for alpha in [0.0, 0.1] {
        let (params, history) = train_variant_params(&corpus, &anchors, &cfg, alpha, cfg.seed);
        println!(
            "alpha {alpha}: loss history first {:?} last {:?}",
            &history[..3.min(history.len())],
            &history[history.len().saturating_sub(3)..]
        );
        // cruise frame: ego at origin at 6 m/s, empty road
        let frame = plan_core::scene::Frame {
            timestamp: 0.0,
            ego: plan_core::scene::EgoRecord {
                pose: plan_core::geometry::Pose2::new(0.0, 0.0, 0.0),
                speed: 6.0,
                future_trajectory: vec![],
            },
            agents: vec![],
            map_lines: vec![],
        };
        let target = plan_core::pipeline::route_target_path(
            &plan_core::geometry::Polyline::new(vec![(0.0, 0.0), (200.0, 0.0)]).unwrap(),
            &frame.ego.pose,
            15,
        );
        let cands = gen_candidates(&frame, &target, &anchors.0, &anchors.1);
        let m = anchors.1.count();
        // look only at the best path's candidates
        let best_path_idx = cands
            .iter()
            .max_by(|a, b| a.path_score.partial_cmp(&b.path_score).unwrap())
            .unwrap()
            .anchor_ids
            .0;
        for mi in 0..m {
            let c = &cands[best_path_idx * m + mi];
            let feats = candidate_features(
                &c.path,
                &c.displacements.values,
                &frame,
                cfg.cost.ego_dims(),
                anchors.1.look_ahead(mi),
            );
            let (offsets, logit) = forward(&params, &feats).unwrap();
            let vals: Vec<f64> = c
                .displacements
                .values
                .iter()
                .zip(&offsets)
                .map(|(a, o)| (a + o).max(0.0))
                .collect();
            let speed_equiv = vals[1] / 0.2;
            println!(
                "  anchor {mi} (L={:.2}): logit {:+.2} v1 {:.2} m/s total {:.1} m off[1..4] {:+.2} {:+.2} {:+.2}",
                anchors.1.look_ahead(mi),
                logit,
                speed_equiv,
                vals[1..].iter().sum::<f64>(),
                offsets[1],
                offsets[2],
                offsets[3]
            );
        }
    }
}
