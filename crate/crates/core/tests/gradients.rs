mod common;

use common::grad::{check_graphs, check_op, FD_TOL, OPS};

#[test]
fn every_op_matches_finite_differences() {
    for op in OPS {
        let s = check_op(op, 100);
        assert!(s.passed(100), "{op}: {s:?} (tol {FD_TOL})");
    }
}

#[test]
fn full_loss_graphs_match_finite_differences() {
    let (g, d) = check_graphs(10);
    assert!(g.passed(10), "generator graph: {g:?}");
    assert!(d.passed(10), "discriminator graph: {d:?}");
}
