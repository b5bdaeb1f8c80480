mod common;

use common::{ellipse, first_deriv_exactness, second_deriv_exactness, second_moments, Fixture};
use minlag::stencils::{
    boundary_direction_coefficients, first_deriv_coefficients, second_deriv_coefficients,
};
use minlag::{ConvexBody, DirectionSet, Point2};
use proptest::prelude::*;

#[test]
fn direction_set_covers_half_circle() {
    let d = DirectionSet::new(0.3).unwrap();
    // smallest even count with pi / M <= 0.3
    assert_eq!(d.len(), 12);
    for (j, nu) in d.directions().iter().enumerate() {
        assert!((nu.norm() - 1.0).abs() < 1e-15);
        let angle = nu.y.atan2(nu.x).rem_euclid(2.0 * std::f64::consts::PI);
        assert!((angle - (j + 1) as f64 * std::f64::consts::PI / 12.0).abs() < 1e-12);
    }
}

#[test]
fn mesh_stencils_are_affine_exact() {
    for (domain, h) in [
        (ConvexBody::unit_disk(), 0.1),
        (ellipse([2.0, 0.0, 0.0, 1.0]), 0.1),
    ] {
        let f = Fixture::new(&domain, h);
        let [affine, square, _] = second_deriv_exactness(&f);
        assert!(affine <= 1e-10, "{affine:e}");
        assert!(square <= 1e-10, "{square:e}");
        let first = first_deriv_exactness(&f);
        assert!(first <= 1e-12, "{first:e}");
    }
}

#[test]
fn symmetric_lattice_stencil_is_exact_on_cross_term() {
    // on a symmetric lattice the pairwise cancellation also kills sum a C S
    let nu = Point2::new(1.0, 0.0);
    let pts = [
        Point2::new(1.0, 1.0),
        Point2::new(-1.0, 1.0),
        Point2::new(-1.0, -1.0),
        Point2::new(1.0, -1.0),
    ];
    let a = second_deriv_coefficients(Point2::ZERO, nu, pts).unwrap();
    let (m, _) = second_moments(Point2::ZERO, nu, &pts, &a);
    assert!(
        m.iter()
            .zip([0.0, 0.0, 2.0, 0.0])
            .all(|(x, y)| (x - y).abs() < 1e-14),
        "{m:?}"
    );
}

fn quadrant_point(q: usize, r: f64, t: f64) -> Point2 {
    // angle strictly inside quadrant q of the (nu, nu_perp) frame
    let base = [0.0, 0.5, 1.0, 1.5][q] * std::f64::consts::PI;
    Point2::from_angle(base + (0.05 + 0.4 * t) * std::f64::consts::PI) * r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn second_derivative_weights_are_positive_and_consistent(
        theta in 0.0..std::f64::consts::PI,
        r in proptest::array::uniform4(0.2..1.0f64),
        t in proptest::array::uniform4(0.0..1.0f64),
    ) {
        let nu = Point2::from_angle(theta);
        let perp = Point2::new(-nu.y, nu.x);
        let local: Vec<Point2> = (0..4).map(|q| quadrant_point(q, r[q], t[q])).collect();
        let pts: [Point2; 4] = std::array::from_fn(|q| nu * local[q].x + perp * local[q].y);
        if let Ok(a) = second_deriv_coefficients(Point2::ZERO, nu, pts) {
            prop_assert!(a.iter().all(|&w| w > 0.0));
            let (m, scale) = second_moments(Point2::ZERO, nu, &pts, &a);
            prop_assert!(m[0].abs() <= 1e-10 * scale);
            prop_assert!(m[1].abs() <= 1e-10 * scale);
            prop_assert!((m[2] - 2.0).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn first_derivative_is_exact_on_affine(
        theta in 0.0..2.0 * std::f64::consts::PI,
        a1 in 0.1..1.4f64, a4 in 0.1..1.4f64, r1 in 0.2..1.0f64, r4 in 0.2..1.0f64,
        gx in -3.0..3.0f64, gy in -3.0..3.0f64,
    ) {
        let e = Point2::from_angle(theta);
        let perp = Point2::new(-e.y, e.x);
        let d1 = (e * a1.cos() + perp * a1.sin()) * r1;
        let d4 = (e * a4.cos() - perp * a4.sin()) * r4;
        let (b1, b4) = first_deriv_coefficients(d1, d4, e).unwrap();
        let g = Point2::new(gx, gy);
        let got = b1 * g.dot(d1) + b4 * g.dot(d4);
        let scale = (b1.abs() * r1 + b4.abs() * r4) * g.norm();
        prop_assert!((got - g.dot(e)).abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn boundary_coefficients_are_exact_and_monotone(
        theta in 0.0..2.0 * std::f64::consts::PI,
        a1 in 0.05..1.5f64, a2 in 0.05..1.5f64, r1 in 0.2..1.0f64, r2 in 0.2..1.0f64,
        gx in -3.0..3.0f64, gy in -3.0..3.0f64,
    ) {
        let n = Point2::from_angle(theta);
        let perp = Point2::new(-n.y, n.x);
        let x1 = (-n * a1.cos() + perp * a1.sin()) * r1;
        let x2 = (-n * a2.cos() - perp * a2.sin()) * r2;
        let c = boundary_direction_coefficients(Point2::ZERO, n, x1, x2).unwrap();
        prop_assert!(c.iter().all(|&v| v <= 0.0));
        let g = Point2::new(gx, gy);
        let got = c[0] * g.dot(x1) + c[1] * g.dot(x2);
        let scale = (c[0].abs() * r1 + c[1].abs() * r2) * g.norm();
        prop_assert!((got - g.dot(n)).abs() <= 1e-12 * scale.max(1.0));
    }
}
