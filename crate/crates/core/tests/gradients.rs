use std::collections::BTreeMap;

use dermfuse_core::gradcheck::{check, suite, GradCheckConfig};
use dermfuse_core::nn::{build_dense_block, build_inception_module, Block, DenseBlockSpec, InceptionModuleSpec, ParamVars};
use dermfuse_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-3;

#[test]
fn every_layer_matches_central_differences() {
    let config = GradCheckConfig::default();
    for (i, layer) in suite::LAYERS.iter().enumerate() {
        let reports = suite::run(layer, 20, 1000 + i as u64, &config).unwrap();
        assert_eq!(reports.len(), 20);
        for (case, r) in reports.iter().enumerate() {
            assert!(r.checked > 0 && r.skipped == 0);
            assert!(r.passed(TOLERANCE), "{layer} case {case}: {r:?}");
        }
    }
}

fn block_inputs(block: &dyn Block, x: Tensor, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<String>) {
    let mut inputs = vec![x];
    let mut names = Vec::new();
    for decl in block.parameters() {
        let bound = (6.0 / decl.fan_in as f32).sqrt();
        inputs.push(Tensor::from_fn(&decl.shape, |_| rng.gen_range(-bound..bound)));
        names.push(decl.name);
    }
    (inputs, names)
}

fn bind(names: &[String], vars: &[Var]) -> ParamVars {
    names.iter().cloned().zip(vars[1..].iter().copied()).collect::<BTreeMap<_, _>>()
}

// Blocks contain relus, so coordinates straddling a kink are skipped and counted.
// Their wide outputs add finite-difference noise, hence the looser bound.
const BLOCK_TOLERANCE: f64 = 3e-3;

fn block_config(seed: u64) -> GradCheckConfig {
    GradCheckConfig {
        seed,
        kink_tolerance: Some(1e-3),
        ..GradCheckConfig::default()
    }
}

#[test]
fn inception_module_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..4u64 {
        let spec = InceptionModuleSpec::toy(case % 2 == 1);
        let c = rng.gen_range(1..=2);
        let block = build_inception_module(&spec, c, "m").unwrap();
        let x = Tensor::from_fn(&[1, c, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let (inputs, names) = block_inputs(&block, x, &mut rng);
        let r = check(&inputs, |g, v| block.forward(g, &bind(&names, v), v[0]), &block_config(case)).unwrap();
        assert!(r.passed(BLOCK_TOLERANCE), "case {case}: {r:?}");
        assert!(r.skipped * 20 <= r.checked + r.skipped, "case {case}: {r:?}");
    }
}

#[test]
fn dense_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..4u64 {
        let spec = DenseBlockSpec {
            layers: rng.gen_range(1..=3),
            growth: rng.gen_range(1..=3),
            kernel: 3,
        };
        let c = rng.gen_range(1..=2);
        let block = build_dense_block(&spec, c, "d").unwrap();
        let x = Tensor::from_fn(&[1, c, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let (inputs, names) = block_inputs(&block, x, &mut rng);
        let r = check(&inputs, |g, v| block.forward(g, &bind(&names, v), v[0]), &block_config(case)).unwrap();
        assert!(r.passed(BLOCK_TOLERANCE), "case {case}: {r:?}");
        assert!(r.skipped * 20 <= r.checked + r.skipped, "case {case}: {r:?}");
    }
}
