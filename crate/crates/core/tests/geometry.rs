use std::f64::consts::PI;
use std::sync::OnceLock;

use minlag::harness::ShapeSpec;
use minlag::{ConvexBody, Mat2, Point2};
use proptest::prelude::*;

fn skew_ellipse() -> ConvexBody {
    ConvexBody::ellipse(Point2::ZERO, Mat2::from_row_major([1.5, 0.5, 0.5, 2.0])).unwrap()
}

fn bodies() -> Vec<ConvexBody> {
    vec![
        ConvexBody::unit_disk(),
        ConvexBody::disk(Point2::new(0.3, -0.2), 0.7).unwrap(),
        ConvexBody::ellipse(Point2::ZERO, Mat2::diag(2.0, 1.0)).unwrap(),
        skew_ellipse(),
        ConvexBody::square(Point2::ZERO, 1.1).unwrap(),
        ShapeSpec::Pentagon.build().unwrap(),
        ShapeSpec::Bowl.build().unwrap(),
        ShapeSpec::Cone.build().unwrap(),
        ConvexBody::segment(Point2::new(-1.0, 0.0), Point2::new(1.0, 0.0)).unwrap(),
    ]
}

/// Brute-force `max n . (M z)` over `count` samples of the unit circle.
fn sampled_support(m: Mat2, n: Point2, count: usize) -> f64 {
    (0..count)
        .map(|k| n.dot(m.apply(Point2::from_angle(2.0 * PI * k as f64 / count as f64))))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn signed_distance_examples() {
    let disk = ConvexBody::unit_disk();
    assert_eq!(disk.signed_distance(Point2::ZERO), -1.0);
    assert_eq!(disk.signed_distance(Point2::new(2.0, 0.0)), 1.0);
    let square = ConvexBody::square(Point2::ZERO, 1.1).unwrap();
    assert!((square.signed_distance(Point2::ZERO) + 1.1).abs() < 1e-15);
}

#[test]
fn support_examples() {
    for k in 0..16 {
        let n = Point2::from_angle(0.39 * k as f64);
        assert!((ConvexBody::unit_disk().support_function(n) - 1.0).abs() < 1e-15);
    }
    let square = ConvexBody::square(Point2::ZERO, 1.1).unwrap();
    assert!((square.support_function(Point2::new(1.0, 0.0)) - 1.1).abs() < 1e-15);
    let m = Mat2::from_row_major([1.5, 0.5, 0.5, 2.0]);
    let oracle = sampled_support(m, Point2::new(1.0, 0.0), 1_000_000);
    let got = skew_ellipse().support_function(Point2::new(1.0, 0.0));
    assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    assert!((got - 2.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn support_normalizes_direction() {
    let e = skew_ellipse();
    let n = Point2::new(0.3, -0.8);
    assert!((e.support_function(n * 5.0) - e.support_function(n.normalized())).abs() < 1e-14);
}

#[test]
fn gradient_bound_examples() {
    assert!((ConvexBody::unit_disk().gradient_bound_r() - 1.1).abs() < 1e-15);
    let m = Mat2::from_row_major([1.5, 0.5, 0.5, 2.0]);
    let top = (0..1_000_000)
        .map(|k| {
            m.apply(Point2::from_angle(2.0 * PI * k as f64 / 1e6))
                .norm()
        })
        .fold(0.0, f64::max);
    assert!((skew_ellipse().gradient_bound_r() - 1.1 * top).abs() < 1e-9);
    assert!((skew_ellipse().gradient_bound_r() - 2.5399).abs() < 1e-4);
    let seg = ConvexBody::segment(Point2::new(0.0, -1.0), Point2::new(0.0, 1.0)).unwrap();
    assert!((seg.gradient_bound_r() - 1.1).abs() < 1e-15);
}

#[test]
fn normal_examples() {
    let n = ConvexBody::unit_disk()
        .outward_normal(Point2::new(1.0, 0.0))
        .unwrap();
    assert!((n - Point2::new(1.0, 0.0)).norm() < 1e-15);
    let square = ConvexBody::square(Point2::ZERO, 1.1).unwrap();
    let n = square.outward_normal(Point2::new(1.1, 0.0)).unwrap();
    assert!((n - Point2::new(1.0, 0.0)).norm() < 1e-15);
    // gradient of x^2/4 + y^2 at (2, 0) is (1, 0)
    let e = ConvexBody::ellipse(Point2::ZERO, Mat2::diag(2.0, 1.0)).unwrap();
    let n = e.outward_normal(Point2::new(2.0, 0.0)).unwrap();
    assert!((n - Point2::new(1.0, 0.0)).norm() < 1e-12);
    assert!(e.outward_normal(Point2::new(1.0, 0.0)).is_err());
}

#[test]
fn polygon_corner_normal_bisects() {
    let square = ConvexBody::square(Point2::ZERO, 1.0).unwrap();
    let n = square.outward_normal(Point2::new(1.0, 1.0)).unwrap();
    assert!((n - Point2::new(1.0, 1.0).normalized()).norm() < 1e-12);
}

#[test]
fn membership_and_sampling() {
    let disk = ConvexBody::unit_disk();
    assert!(disk.contains(Point2::new(0.5, 0.0)));
    assert!(!disk.contains(Point2::new(1.5, 0.0)));
    let pts = disk.boundary_sample(4).unwrap();
    assert_eq!(pts.len(), 4);
    assert!(pts
        .iter()
        .all(|p| (p.norm() - 1.0).abs() <= disk.tol_boundary()));
    assert!(disk.boundary_sample(2).is_err());
    for body in bodies() {
        for p in body.boundary_sample(64).unwrap() {
            assert!(
                body.signed_distance(p).abs() <= body.tol_boundary(),
                "{body:?} {p:?}"
            );
        }
    }
}

#[test]
fn degenerate_segment_is_admitted() {
    let seg = ConvexBody::segment(Point2::new(-1.0, 0.0), Point2::new(1.0, 0.0)).unwrap();
    assert!(seg.contains(Point2::new(0.3, 0.0)));
    assert!(!seg.contains(Point2::new(0.3, 0.1)));
    assert!((seg.support_function(Point2::new(1.0, 1.0)) - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn invalid_shapes_are_rejected() {
    assert!(ConvexBody::disk(Point2::ZERO, -1.0).is_err());
    assert!(ConvexBody::ellipse(Point2::ZERO, Mat2::from_row_major([1.0, 0.5, 0.0, 1.0])).is_err());
    assert!(ConvexBody::ellipse(Point2::ZERO, Mat2::diag(1.0, -1.0)).is_err());
    let clockwise = vec![
        Point2::new(0.0, 0.0),
        Point2::new(0.0, 1.0),
        Point2::new(1.0, 0.0),
    ];
    assert!(ConvexBody::polygon(clockwise).is_err());
    assert!(ConvexBody::segment(Point2::ZERO, Point2::ZERO).is_err());
}

const SAMPLES: usize = 4096;

fn sampled_bodies() -> &'static [(ConvexBody, Vec<Point2>)] {
    static CELL: OnceLock<Vec<(ConvexBody, Vec<Point2>)>> = OnceLock::new();
    CELL.get_or_init(|| {
        bodies()
            .into_iter()
            .map(|b| {
                let s = b.boundary_sample(SAMPLES).unwrap();
                (b, s)
            })
            .collect()
    })
}

fn unit_vector() -> impl Strategy<Value = Point2> {
    (0.0..2.0 * PI).prop_map(Point2::from_angle)
}

fn point() -> impl Strategy<Value = Point2> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn supporting_hyperplane(n in unit_vector(), p in point()) {
        for body in bodies() {
            if body.contains(p) {
                prop_assert!(body.support_function(n) >= n.dot(p) - 1e-12);
            }
        }
    }

    #[test]
    fn support_attained_on_boundary(n in unit_vector()) {
        for (body, samples) in sampled_bodies() {
            let best = samples.iter().map(|p| n.dot(*p)).fold(f64::NEG_INFINITY, f64::max);
            let h = body.support_function(n);
            prop_assert!(best <= h + 1e-9);
            prop_assert!(h - best <= body.perimeter() / SAMPLES as f64, "{body:?}: {h} vs {best}");
        }
    }

    #[test]
    fn signed_distance_is_one_lipschitz(p in point(), q in point()) {
        for body in bodies() {
            let lhs = (body.signed_distance(p) - body.signed_distance(q)).abs();
            prop_assert!(lhs <= p.distance(q) * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn support_is_positively_homogeneous(n in unit_vector(), t in 0.01..100.0f64) {
        // the argument is normalized before evaluation
        for body in bodies() {
            prop_assert!((body.support_function(n * t) - body.support_function(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn normals_point_outward(t in 0.0..2.0 * PI) {
        for body in bodies().into_iter().filter(|b| !matches!(b, ConvexBody::Segment { .. })) {
            let c = body.centroid();
            let len = 10.0 * body.diameter();
            // boundary point along the ray from the centroid, by bisection on the signed distance
            let dir = Point2::from_angle(t);
            let (mut lo, mut hi) = (0.0, len);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if body.signed_distance(c + dir * mid) <= 0.0 { lo = mid } else { hi = mid }
            }
            let p = c + dir * lo;
            let n = body.outward_normal(p).unwrap();
            prop_assert!(n.dot(p - c) > 0.0);
            prop_assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipse_support_is_norm_of_image(n in unit_vector(), a in 0.2..3.0f64, b in -1.0..1.0f64, d in 0.2..3.0f64) {
        let m = Mat2::from_row_major([a, b, b, d]);
        prop_assume!(m.det() > 0.05 && a + d > 0.0);
        let e = ConvexBody::ellipse(Point2::ZERO, m).unwrap();
        prop_assert!((e.support_function(n) - m.apply(n).norm()).abs() < 1e-12);
    }
}
