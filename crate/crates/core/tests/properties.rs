use std::collections::BTreeSet;

use dermfuse_core::data::{split_counts, split_indices, SplitConfig};
use dermfuse_core::fusion::{decide, fuse_scores, weight_sweep, FusionWeights, ScoreRecord};
use dermfuse_core::metrics::{confusion, precision, recall, roc, specificity};
use dermfuse_core::nn::{build_dense_block, build_inception_module, Block, BranchStep, ConvDesc, DenseBlockSpec, InceptionModuleSpec, ParamVars};
use dermfuse_core::{Graph, Tensor};
use proptest::prelude::*;

fn record(scores: Vec<f64>) -> ScoreRecord {
    ScoreRecord {
        id: "x".into(),
        scores,
        label: None,
    }
}

/// Pairwise rank statistic with ties counted as one half.
fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_and_repeats(n in 20usize..2000, seed in any::<u64>()) {
        let cfg = SplitConfig { seed, ..SplitConfig::default() };
        let s = split_indices(n, &cfg).unwrap();
        let all: BTreeSet<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
        prop_assert_eq!(all.into_iter().collect::<Vec<_>>(), (0..n).collect::<Vec<_>>());
        let (tr, va, te) = split_counts(n, &cfg).unwrap();
        prop_assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (tr, va, te));
        prop_assert_eq!(split_indices(n, &cfg).unwrap(), s);
    }

    #[test]
    fn fused_score_stays_in_the_hull(raw in prop::collection::vec(0.0f64..10.0, 2..6), seed in any::<u64>()) {
        prop_assume!(raw.iter().sum::<f64>() > 0.0);
        let w = FusionWeights::new(&raw).unwrap();
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let scores: Vec<f64> = (0..raw.len()).map(|i| ((seed.rotate_left(i as u32 * 7) % 10_007) as f64) / 10_007.0).collect();
        let f = fuse_scores(&w, &record(scores.clone())).unwrap();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= f && f <= hi);
    }

    #[test]
    fn weights_are_scale_invariant(a in 0.01f64..5.0, b in 0.01f64..5.0, k in 0.01f64..100.0, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let w = FusionWeights::new(&[a, b]).unwrap();
        let wk = FusionWeights::new(&[a * k, b * k]).unwrap();
        let r = record(vec![x, y]);
        prop_assert!((fuse_scores(&w, &r).unwrap() - fuse_scores(&wk, &r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fusion_is_monotone_in_each_score(a in 0.0f64..1.0, x in 0.0f64..=1.0, y in 0.0f64..=1.0, bump in 0.0f64..=1.0) {
        let w = FusionWeights::new(&[a, 1.0 - a + 1e-3]).unwrap();
        let base = fuse_scores(&w, &record(vec![x, y])).unwrap();
        let up = (x + bump).min(1.0);
        prop_assert!(fuse_scores(&w, &record(vec![up, y])).unwrap() >= base);
        let up = (y + bump).min(1.0);
        prop_assert!(fuse_scores(&w, &record(vec![x, up])).unwrap() >= base);
    }

    #[test]
    fn one_hot_weights_select_a_model(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let r = record(vec![x, y]);
        prop_assert_eq!(fuse_scores(&FusionWeights::new(&[1.0, 0.0]).unwrap(), &r).unwrap(), x);
        prop_assert_eq!(fuse_scores(&FusionWeights::new(&[0.0, 1.0]).unwrap(), &r).unwrap(), y);
    }

    #[test]
    fn swapping_classes_mirrors_the_metrics(data in prop::collection::vec((0u8..=20, 0u8..2), 2..200)) {
        prop_assume!(data.iter().any(|d| d.1 == 0) && data.iter().any(|d| d.1 == 1));
        let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 20.0).collect();
        let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
        let preds: Vec<u8> = scores.iter().map(|&s| decide(s, 0.5)).collect();
        let c = confusion(&preds, &labels).unwrap();
        let flip = |v: &[u8]| v.iter().map(|&x| 1 - x).collect::<Vec<_>>();
        let cs = confusion(&flip(&preds), &flip(&labels)).unwrap();
        // Recall of one class is specificity of the other.
        prop_assert_eq!(recall(&c), specificity(&cs));
        prop_assert_eq!(specificity(&c), recall(&cs));
        // Precision of the swapped problem is the negative predictive value.
        prop_assert_eq!(precision(&cs).map(|r| (r.numerator, r.denominator)), (c.tn + c.fn_ > 0).then_some((c.tn, c.tn + c.fn_)));

        let mirrored: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let a = roc(&scores, &labels).unwrap().auc;
        let b = roc(&mirrored, &flip(&labels)).unwrap().auc;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((a - mann_whitney(&scores, &labels)).abs() < 1e-9);
    }

    #[test]
    fn sweep_table_covers_the_grid(data in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0u8..2), 1..40)) {
        let recs: Vec<ScoreRecord> = data.iter().map(|&(a, b, y)| ScoreRecord { id: String::new(), scores: vec![a, b], label: Some(y) }).collect();
        let sweep = weight_sweep(&recs, 0.05, 0.5).unwrap();
        prop_assert_eq!(sweep.table.len(), 21);
        let best = sweep.table[sweep.best_row].accuracy;
        prop_assert!(sweep.table.iter().all(|r| r.accuracy <= best));
        prop_assert!(sweep.table[..sweep.best_row].iter().all(|r| r.accuracy < best));
    }

    #[test]
    fn dense_block_width_is_in_plus_l_times_k(c in 1usize..5, layers in 0usize..5, growth in 1usize..6, k3 in any::<bool>()) {
        let spec = DenseBlockSpec { layers, growth, kernel: if k3 { 3 } else { 1 } };
        let block = build_dense_block(&spec, c, "d").unwrap();
        prop_assert_eq!(block.out_channels(), c + layers * growth);
        prop_assert_eq!(shape_after(&block, c)[1], c + layers * growth);
    }

    #[test]
    fn inception_width_is_sum_of_branches(c in 1usize..4, widths in prop::collection::vec((1usize..6, 0usize..3, any::<bool>()), 2..5), factorized in any::<bool>()) {
        let branches: Vec<Vec<BranchStep>> = widths
            .iter()
            .map(|&(w, kind, pool)| {
                let mut b = Vec::new();
                if pool {
                    b.push(BranchStep::Pool { window: 3 });
                }
                b.push(BranchStep::Conv(ConvDesc::square(w, [1, 3, 5][kind])));
                b
            })
            .collect();
        let spec = InceptionModuleSpec { branches, factorized };
        let block = build_inception_module(&spec, c, "m").unwrap();
        let sum: usize = widths.iter().map(|w| w.0).sum();
        prop_assert_eq!(spec.out_channels(), sum);
        prop_assert_eq!(shape_after(&block, c), vec![1, sum, 6, 6]);
    }
}

fn shape_after(block: &dyn Block, c: usize) -> Vec<usize> {
    let mut g = Graph::new();
    let params: ParamVars = block
        .parameters()
        .into_iter()
        .map(|d| {
            let v = g.constant(Tensor::full(&d.shape, 0.01));
            (d.name, v)
        })
        .collect();
    let x = g.constant(Tensor::full(&[1, c, 6, 6], 0.5));
    let y = block.forward(&mut g, &params, x).unwrap();
    g.value(y).shape().to_vec()
}
