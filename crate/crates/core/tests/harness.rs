mod common;

use std::num::NonZeroUsize;

use common::*;
use ensemble_core::harness::{equivalence, EquivalenceConfig};
use ensemble_core::mixture::{decompose, max_lambda};
use ensemble_core::{Distribution, EnsembleWeights};

#[test]
fn matched_weights_pass() {
    let report = equivalence(&table_pair(0.5), &[vec![]], &EquivalenceConfig::new(200_000, 1)).unwrap();
    assert!(report.pass, "{report:?}");
    assert!(report.max_tv < 0.01);
}

#[test]
fn mismatched_weights_fail() {
    // sample with [0.9, 0.1] against CE at [0.5, 0.5]: 0.4·|0.9 − 0.5| = 0.16
    let mut cfg = EquivalenceConfig::new(200_000, 1);
    cfg.sample_weights = Some(EnsembleWeights::new(vec![0.9, 0.1]).unwrap());
    let report = equivalence(&table_pair(0.5), &[vec![]], &cfg).unwrap();
    assert!(!report.pass);
    assert!((report.max_tv - 0.16).abs() < 0.01, "{}", report.max_tv);
    assert!(report.prefixes[0].chi_square.p_value < 1e-10);
    assert_eq!(report.sample_lambda, vec![0.9, 0.1]);
}

#[test]
fn report_is_schedule_invariant() {
    let bp = ngram_pair(2, 0.0, 0.3);
    let prefixes = vec![vec![0], vec![0, 1, 2]];
    let run = |w: usize| {
        let mut cfg = EquivalenceConfig::new(5_000, 99);
        cfg.workers = NonZeroUsize::new(w);
        equivalence(&bp, &prefixes, &cfg).unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn transformed_bases_decompose() {
    // C built from a squared / truncated base; the same operations apply
    let p = [0.5, 0.3, 0.2];
    let squared = Distribution::from_weights(&p.map(|x| x * x)).unwrap();
    let top2 = Distribution::from_weights(&[0.5, 0.3, 0.0]).unwrap();
    let q = Distribution::new(vec![0.1, 0.1, 0.8]).unwrap();
    for base in [squared, top2] {
        let c = Distribution::mix(&[(0.4, &base), (0.6, &q)]).unwrap();
        let max = max_lambda(&c, &base).unwrap();
        assert!(max >= 0.4 - 1e-12);
        let d = decompose(&c, &base, 0.4).unwrap();
        for (a, b) in d.residual().probs().iter().zip(q.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
