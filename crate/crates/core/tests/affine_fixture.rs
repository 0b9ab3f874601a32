//! `apply_affine` against the standalone inverse-mapping script in
//! `scripts/make_fixtures.py`.

use capsforge_core::data::{apply_affine, AffineSpec};
use capsforge_core::Tensor;

fn numbers(line: &str) -> Vec<f64> {
    line.split_whitespace().map(|t| t.parse().unwrap()).collect()
}

#[test]
fn warps_match_the_script() {
    let text = include_str!("fixtures/affine_4x4.txt");
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines.len() % 3, 0);
    for case in lines.chunks(3) {
        let p = numbers(case[0]);
        let spec = AffineSpec {
            angle_deg: p[0],
            shear_x: p[1],
            shear_y: p[2],
            tx: p[3],
            ty: p[4],
            scale: p[5],
        };
        let input = Tensor::new([1, 4, 4], numbers(case[1])).unwrap();
        let want = numbers(case[2]);
        let got = apply_affine(&input, &spec).unwrap();
        for (i, (g, w)) in got.data().iter().zip(&want).enumerate() {
            assert!((g - w).abs() < 1e-5, "{spec:?} pixel {i}: {g} vs {w}");
        }
    }
}
