mod common;

use common::{gradient_check, reference_loss, TinyInstance};
use lightalign::model::total_loss;

#[test]
fn reference_matches_library_loss() {
    for seed in 0..50 {
        let inst = TinyInstance::random(seed, 7);
        let negs = inst.negatives();
        let lib = total_loss(&inst.pair, &inst.params, &inst.hp, &negs).unwrap();
        let (s2t, t2s, dis, total) = reference_loss(&inst.pair, &inst.params, &inst.hp, &negs);
        for (a, b) in [(lib.loss_s2t, s2t), (lib.loss_t2s, t2s), (lib.loss_disagree, dis), (lib.total, total)] {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..40 {
        for ablation in 0..8u8 {
            let inst = TinyInstance::random(seed * 8 + ablation as u64, ablation);
            let check = gradient_check(&inst, 1e-4);
            worst = worst.max(check.max_rel_err);
            assert!(
                check.max_rel_err < 1e-4,
                "seed {seed} ablation {ablation:03b}: rel {} abs {}",
                check.max_rel_err,
                check.max_abs_err
            );
        }
    }
    eprintln!("worst relative error {worst:.3e}");
}
