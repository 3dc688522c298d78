mod common;

use common::{chain_fsp, chain_pool, graph, graph_set, names};
use magnet_core::fsp_sampler::{MissLabel, TurnGroup};
use magnet_core::node_ops::{
    enhance, enhance_all, op_insert, op_merge, op_split, FixedNestedJudge, IoNestedJudge, NodeOpsConfig, SplitLabel,
};
use magnet_core::rng::derive_rng;

#[test]
fn merge_with_certainty_pairs_turns() {
    let fsp = chain_fsp("a", &names(5));
    let mut rng = derive_rng(0, "m", 0);
    let m = op_merge(&fsp, 1.0, &mut rng).unwrap();
    let shape: Vec<usize> = m.turns.iter().map(|t| t.functions.len()).collect();
    assert_eq!(shape, [2, 2, 1]);
    assert_eq!(m.flat_functions(), fsp.flat_functions());
    assert_eq!(op_merge(&fsp, 0.0, &mut rng).unwrap(), fsp);
    assert!(op_merge(&fsp, 1.5, &mut rng).is_err());
}

#[test]
fn merge_on_two_turns_is_a_single_coin() {
    let fsp = chain_fsp("a", &names(2));
    let mut rng = derive_rng(8, "m", 0);
    let n = 20_000;
    let merged = (0..n)
        .filter(|_| op_merge(&fsp, 0.3, &mut rng).unwrap().len() == 1)
        .count();
    let p = merged as f64 / n as f64;
    let sigma = (0.3f64 * 0.7 / n as f64).sqrt();
    assert!((p - 0.3).abs() < 4.0 * sigma, "{p}");
}

#[test]
fn insert_appends_or_adds_turns() {
    let pool = chain_pool(4);
    let graphs = graph_set(vec![graph("f0", &["f2", "f3"], &[]), graph("f1", &["f3"], &[])]);
    let judge = FixedNestedJudge::default().with("f0", "f3").with("f1", "f3");
    let fsp = chain_fsp("a", &names(2));
    let mut rng = derive_rng(1, "i", 0);

    let short = op_insert(&fsp, &graphs, &pool, &judge, 0.0, &mut rng).unwrap();
    assert_eq!(
        short.turns,
        vec![TurnGroup::of(&["f0", "f3"]), TurnGroup::of(&["f1", "f3"])]
    );

    let long = op_insert(&fsp, &graphs, &pool, &judge, 1.0, &mut rng).unwrap();
    assert_eq!(long.len(), 4);
    assert_eq!(long.turns[0], TurnGroup::single("f0"));
    assert_eq!(*long.turns.last().unwrap(), TurnGroup::single("f3"));

    let none = op_insert(&fsp, &graphs, &pool, &FixedNestedJudge::default(), 0.5, &mut rng).unwrap();
    assert_eq!(none, fsp);
}

#[test]
fn io_nested_judge_uses_output_names() {
    let pool = chain_pool(3);
    let graphs = graph_set(vec![graph("f0", &["f2", "f1"], &[])]);
    let fsp = chain_fsp("a", &names(1));
    let mut rng = derive_rng(1, "i", 0);
    let out = op_insert(&fsp, &graphs, &pool, &IoNestedJudge, 0.0, &mut rng).unwrap();
    assert_eq!(out.turns, vec![TurnGroup::of(&["f0", "f1"])]);
}

#[test]
fn split_adds_one_empty_turn() {
    let fsp = chain_fsp("a", &names(3));
    let mut rng = derive_rng(2, "s", 0);
    let mut labels = [0usize; 2];
    for _ in 0..400 {
        let s = op_split(&fsp, SplitLabel::Uniform, &mut rng).unwrap();
        assert_eq!(s.len(), 4);
        let i = s.miss_index().unwrap();
        assert!(i >= 1);
        assert!(s.turns[i].functions.is_empty());
        let mut rest = s.turns.clone();
        rest.remove(i);
        assert_eq!(rest, fsp.turns);
        match s.turns[i].miss_label.unwrap() {
            MissLabel::MissParams => labels[0] += 1,
            MissLabel::MissFunc => labels[1] += 1,
        }
        assert!(op_split(&s, SplitLabel::Uniform, &mut rng).is_err());
        assert!(op_merge(&s, 0.5, &mut rng).is_err());
    }
    assert!(labels[0] > 150 && labels[1] > 150, "{labels:?}");
    let fixed = op_split(&fsp, SplitLabel::MissFunc, &mut rng).unwrap();
    assert_eq!(
        fixed.turns[fixed.miss_index().unwrap()].miss_label,
        Some(MissLabel::MissFunc)
    );
}

#[test]
fn enhance_records_ops_and_is_deterministic() {
    let pool = chain_pool(5);
    let graphs = graph_set((0..5).map(|i| graph(&format!("f{i}"), &["f4"], &[])).collect());
    let judge = FixedNestedJudge::default().with("f1", "f4");
    let fsps: Vec<_> = (0..6).map(|i| chain_fsp(&format!("e{i}"), &names(4))).collect();
    let cfg = NodeOpsConfig::default();
    let a = enhance_all(&fsps, &graphs, &pool, &judge, &cfg, 5).unwrap();
    let b = enhance_all(&fsps, &graphs, &pool, &judge, &cfg, 5).unwrap();
    assert_eq!(a, b);
    for (phi, hat) in &a {
        assert_eq!(phi.provenance.ops, ["merge", "insert"]);
        assert_eq!(hat.provenance.ops, ["merge", "insert", "split"]);
        assert_eq!(hat.id, format!("{}-split", phi.id));
        assert_eq!(hat.len(), phi.len() + 1);
        assert!(phi.miss_index().is_none());
    }
    let mut rng = derive_rng(0, "x", 0);
    let (phi, _) = enhance(&fsps[0], &graphs, &pool, &judge, &cfg, &mut rng).unwrap();
    assert!(phi.len() >= 2);
}
