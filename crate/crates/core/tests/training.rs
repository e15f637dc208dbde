//! Training-contract checks on small synthetic data.

mod common;

#[test]
fn early_stopping_restores_best_weights_bit_exactly() {
    let r = common::scripted_early_stop();
    assert_eq!(r.epochs_run, 32);
    assert_eq!(r.best_epoch, 1);
    assert!(r.restored_bit_exact);
}

#[test]
fn skip_cae_overfits_eight_clips() {
    let r = common::skip_cae_overfit(0);
    assert_eq!(r.epochs, 200);
    // Converges to about 1.1% of the epoch-0 loss.
    assert!(r.ratio() < 0.02, "ratio {}", r.ratio());
}
