//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// A leaf to differentiate against.
#[derive(Debug, Clone)]
pub struct LeafSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl LeafSpec {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "leaf data does not match shape");
        Self { rows, cols, data }
    }
}

#[derive(Debug, Clone)]
pub struct FdOptions {
    pub h: f64,
    pub tol: f64,
    /// Check at most this many components per leaf, sampled without
    /// replacement; `None` checks all of them.
    pub max_components: Option<usize>,
    /// Skip components whose ±h perturbation moves any relu/abs/l1/clamp
    /// input across its breakpoint; central differences are meaningless there.
    pub skip_kinks: bool,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-5,
            max_components: None,
            skip_kinks: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// (leaf, component) of the worst component.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub kinks_skipped: usize,
    pub passed: bool,
}

/// `|ad − fd| / max(1, |ad|, |fd|)`
pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs())
}

fn eval<F>(f: &F, leaves: &[LeafSpec]) -> Result<(f64, Vec<i8>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = leaves
        .iter()
        .map(|l| tape.leaf(l.rows, l.cols, l.data.clone()))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&mut tape, &vars)?;
    let y = tape.scalar(root);
    if !y.is_finite() {
        return Err(Error::NonFinite("function value in finite-difference check".into()));
    }
    Ok((y, tape.kink_pattern()))
}

/// Reverse-mode gradients of `f` at `leaves`.
pub fn gradients<F>(f: &F, leaves: &[LeafSpec]) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = leaves
        .iter()
        .map(|l| tape.leaf(l.rows, l.cols, l.data.clone()))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&mut tape, &vars)?;
    let y = tape.scalar(root);
    if !y.is_finite() {
        return Err(Error::NonFinite("function value in finite-difference check".into()));
    }
    let grads: Gradients = tape.backward(root)?;
    Ok((y, vars.iter().map(|&v| grads.get_or_zeros(v)).collect()))
}

/// Compares reverse-mode gradients of the scalar graph built by `f` with
/// central differences.
pub fn finite_diff_check<F>(f: F, leaves: &[LeafSpec], opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, ad) = gradients(&f, leaves)?;
    check_against(&f, leaves, &ad, opts)
}

/// Like [`finite_diff_check`] but with caller-supplied analytic gradients.
pub fn check_against<F>(f: &F, leaves: &[LeafSpec], ad: &[Vec<f64>], opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if opts.h <= 0.0 {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (_, base_pattern) = eval(f, leaves)?;
    let mut work = leaves.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        kinks_skipped: 0,
        passed: true,
    };
    for li in 0..leaves.len() {
        let n = leaves[li].data.len();
        let comps: Vec<usize> = match opts.max_components {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for c in comps {
            let x0 = leaves[li].data[c];
            work[li].data[c] = x0 + opts.h;
            let (plus, plus_pattern) = eval(f, &work)?;
            work[li].data[c] = x0 - opts.h;
            let (minus, minus_pattern) = eval(f, &work)?;
            work[li].data[c] = x0;

            if opts.skip_kinks && (plus_pattern != base_pattern || minus_pattern != base_pattern) {
                report.kinks_skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * opts.h);
            let err = relative_error(ad[li][c], fd);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((li, c));
            }
        }
    }
    report.passed = report.max_rel_error <= opts.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn opts(tol: f64) -> FdOptions {
        FdOptions { tol, ..FdOptions::default() }
    }

    #[test]
    fn linear_function_is_exact() {
        let leaves = [LeafSpec::new(3, 4, (0..12).map(|i| i as f64 * 0.7 - 3.0).collect())];
        let r = finite_diff_check(
            |t, v| {
                let w = t.constant(3, 4, (0..12).map(|i| (i % 5) as f64 - 2.0).collect())?;
                let y = t.dot(v[0], w)?;
                t.add_scalar(y, 4.0)
            },
            &leaves,
            &opts(1e-10),
        )
        .unwrap();
        assert!(r.passed && r.max_rel_error <= 1e-10, "{r:?}");
        assert_eq!(r.checked, 12);
    }

    #[test]
    fn cube_at_two() {
        let cube = |t: &mut Tape, v: &[Var]| {
            let sq = t.mul(v[0], v[0])?;
            t.mul(sq, v[0])
        };
        let leaves = [LeafSpec::new(1, 1, vec![2.0])];
        let (_, ad) = gradients(&cube, &leaves).unwrap();
        assert_eq!(ad[0], vec![12.0]);
        let r = finite_diff_check(cube, &leaves, &opts(1e-6)).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let f = |t: &mut Tape, v: &[Var]| {
            let s = t.tanh(v[0])?;
            let s = t.scale(s, 50.0)?;
            t.sum(s)
        };
        let leaves = [LeafSpec::new(2, 2, vec![0.1, -0.3, 0.2, 0.05])];
        let (_, mut ad) = gradients(&f, &leaves).unwrap();
        assert!(check_against(&f, &leaves, &ad, &opts(1e-5)).unwrap().passed);
        ad[0].iter_mut().for_each(|g| *g *= 1.01);
        assert!(!check_against(&f, &leaves, &ad, &opts(1e-5)).unwrap().passed);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let leaves = [LeafSpec::new(1, 1, vec![-1.0])];
        let r = finite_diff_check(|t, v| t.ln(v[0]), &leaves, &FdOptions::default());
        assert!(matches!(r, Err(Error::NonFinite(_))));
        let r = finite_diff_check(|t, v| t.sum(v[0]), &leaves, &FdOptions { h: 0.0, ..FdOptions::default() });
        assert!(r.is_err());
    }

    #[test]
    fn straddled_kinks_are_skipped() {
        // the first entry sits within h of the relu breakpoint
        let leaves = [LeafSpec::new(1, 3, vec![3e-6, 0.5, -0.5])];
        let r = finite_diff_check(
            |t, v| {
                let r = t.relu(v[0])?;
                t.sum(r)
            },
            &leaves,
            &opts(1e-6),
        )
        .unwrap();
        assert_eq!(r.kinks_skipped, 1);
        assert_eq!(r.checked, 2);
        assert!(r.passed);
    }

    #[test]
    fn random_three_layer_dense_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rand = |r: usize, c: usize| LeafSpec::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let leaves = [
            rand(5, 6),
            rand(8, 6),
            rand(1, 8),
            rand(7, 8),
            rand(1, 7),
            rand(3, 7),
            rand(1, 3),
        ];
        let net = |t: &mut Tape, v: &[Var]| {
            let mut h = v[0];
            for layer in 0..3 {
                let z = t.matmul_t(h, v[1 + 2 * layer])?;
                let z = t.add_bias(z, v[2 + 2 * layer])?;
                h = if layer < 2 { t.tanh(z)? } else { z };
            }
            let sq = t.mul(h, h)?;
            t.sum(sq)
        };
        let r = finite_diff_check(net, &leaves, &opts(1e-6)).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.kinks_skipped, 0);
    }

    proptest! {
        #[test]
        fn gradient_is_linear(x in proptest::collection::vec(-2.0f64..2.0, 6), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let leaves = [LeafSpec::new(2, 3, x)];
            let f = |t: &mut Tape, v: &[Var]| { let y = t.tanh(v[0])?; t.sum(y) };
            let g = |t: &mut Tape, v: &[Var]| { let y = t.mul(v[0], v[0])?; t.mean(y) };
            let combo = |t: &mut Tape, v: &[Var]| {
                let fa = f(t, v)?;
                let fa = t.scale(fa, a)?;
                let gb = g(t, v)?;
                let gb = t.scale(gb, b)?;
                t.add(fa, gb)
            };
            let (_, gf) = gradients(&f, &leaves).unwrap();
            let (_, gg) = gradients(&g, &leaves).unwrap();
            let (_, gc) = gradients(&combo, &leaves).unwrap();
            for i in 0..6 {
                prop_assert!((gc[0][i] - (a * gf[0][i] + b * gg[0][i])).abs() < 1e-12);
            }
        }
    }
}
