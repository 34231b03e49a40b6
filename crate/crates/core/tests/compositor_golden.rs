mod common;

use common::scene::{golden_path, oracle_mask, render, scene, PARAMS};
use stylecycle::compositor::encode_ppm;

#[test]
fn soft_mask_matches_direct_oracle() {
    let (_, soft) = render();
    let want = oracle_mask(&scene().2, PARAMS);
    for (a, b) in soft.data.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn hard_regions_are_exact() {
    let (fg, bg, _) = scene();
    let (out, soft) = render();
    let (mut zeros, mut ones) = (0, 0);
    for (p, &m) in soft.data.iter().enumerate() {
        let px = &out.data[3 * p..3 * p + 3];
        if m == 0.0 {
            assert_eq!(px, &bg.data[3 * p..3 * p + 3]);
            zeros += 1;
        } else if m == 1.0 {
            assert_eq!(px, &fg.data[3 * p..3 * p + 3]);
            ones += 1;
        }
    }
    assert!(zeros > 100 && ones > 50, "{zeros} / {ones}");
}

/// Set `STYLECYCLE_BLESS=1` to rewrite the golden file after an
/// intentional change.
#[test]
fn golden_composite_is_byte_exact() {
    let bytes = encode_ppm(&render().0);
    let path = golden_path();
    if std::env::var_os("STYLECYCLE_BLESS").is_some() {
        std::fs::write(&path, &bytes).unwrap();
    }
    let golden = std::fs::read(&path).expect("golden image present");
    assert_eq!(bytes, golden);
}
