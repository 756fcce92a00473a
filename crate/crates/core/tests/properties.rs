use ndarray::Array2;
use proptest::prelude::*;

use wavesrc::experiments::Heatmap;
use wavesrc::inference::{self, lattice_point, MhConfig};
use wavesrc::wave::{self, MediumParams, SourceParams, WaveState};
use wavesrc::Point;

fn unit() -> impl Strategy<Value = f64> {
    0.0..1.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ricker_depends_on_distance_only(
        cx in 0.2..0.8f64, cy in 0.2..0.8f64, r in 0.0..0.2f64,
        theta in 0.0..std::f64::consts::TAU, t in 0.0..2.0f64,
    ) {
        let sp = SourceParams::at(Point::new(cx, cy));
        let a = wave::ricker_source(Point::new(cx + r * theta.cos(), cy + r * theta.sin()), t, &sp);
        let b = wave::ricker_source(Point::new(cx + r, cy), t, &sp);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
    }

    #[test]
    fn energy_is_quadratic(seed in any::<u64>(), c in -5.0..5.0f64) {
        let mut s = seed | 1;
        let mut next = || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s % 2001) as f64 / 1000.0 - 1.0 };
        let p = Array2::from_shape_fn((6, 5), |_| next());
        let mut st = WaveState::from_pressure(p);
        for v in st.vx.iter_mut() { *v = next(); }
        let mp = MediumParams::new(1.7, 0.6).unwrap();
        let e = wave::energy(&st, &mp);
        let ec = wave::energy(&st.scaled(c), &mp);
        prop_assert!((ec - c * c * e).abs() <= 1e-12 * (1.0 + ec.abs()));
    }

    #[test]
    fn grid_argmax_matches_exhaustive_scan(
        cx in unit(), cy in unit(), a in 0.1..50.0f64, res in 2usize..40, step in 0.0..0.3f64,
    ) {
        // Quantized peaks create exact ties, exercising the tie-break.
        let target = move |y: Point| -> f64 {
            let v = -a * y.dist_sq(Point::new(cx, cy));
            if step > 0.0 { (v / step).floor() * step } else { v }
        };
        let g = inference::grid_search(&target, res).unwrap();
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for j in 0..res {
            for i in 0..res {
                let v = target(lattice_point(res, i, j));
                prop_assert_eq!(v, g.values[[j, i]]);
                if v > best.1 { best = ((j, i), v); }
            }
        }
        prop_assert_eq!(g.best_index, best.0);
        prop_assert_eq!(g.best_value, best.1);
    }

    #[test]
    fn chain_never_leaves_support(seed in any::<u64>(), var in 0.001..0.5f64, x in 0.01..0.99f64, y in 0.01..0.99f64) {
        let target = |p: Point| if p.in_unit_square() { -(p.x + 2.0 * p.y) } else { f64::NEG_INFINITY };
        let cfg = MhConfig::isotropic(var, 600, 100, seed);
        let chain = inference::mh_sample(Point::new(x, y), &target, &cfg).unwrap();
        prop_assert_eq!(chain.samples.len(), 500);
        prop_assert!(chain.samples.iter().all(|p| p.in_unit_square()));
    }

    #[test]
    fn chain_commutes_with_translation(seed in any::<u64>(), sx in -4i32..4, sy in -4i32..4) {
        let (dx, dy) = (sx as f64 * 0.125, sy as f64 * 0.125);
        let base = |p: Point| -0.5 * (p.x * p.x + 4.0 * p.y * p.y);
        let shifted = move |p: Point| base(Point::new(p.x - dx, p.y - dy));
        let cfg = MhConfig::isotropic(0.3, 400, 0, seed);
        let a = inference::mh_sample(Point::new(0.25, -0.5), &base, &cfg).unwrap();
        let b = inference::mh_sample(Point::new(0.25 + dx, -0.5 + dy), &shifted, &cfg).unwrap();
        prop_assert_eq!(&a.accepted_flags, &b.accepted_flags);
        for (p, q) in a.samples.iter().zip(&b.samples) {
            prop_assert!((p.x + dx - q.x).abs() < 1e-9 && (p.y + dy - q.y).abs() < 1e-9);
        }
    }

    #[test]
    fn heatmap_conserves_samples(pts in prop::collection::vec((unit(), unit()), 1..300), bins in 1usize..64) {
        let samples: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let h = Heatmap::from_samples(&samples, bins, None).unwrap();
        prop_assert_eq!(h.total(), samples.len() as u64);
        prop_assert!((h.normalized().sum() - 1.0).abs() < 1e-12);
    }
}

/// Piecewise-constant target on the four quadrants of the unit square: the
/// chain's occupancy must match the quadrant weights, which holds only if
/// the kernel leaves the target invariant.
#[test]
fn quadrant_occupancy_matches_weights() {
    let w = [1.0f64, 2.0, 3.0, 4.0];
    let quadrant = |p: Point| usize::from(p.x >= 0.5) + 2 * usize::from(p.y >= 0.5);
    let target = |p: Point| {
        if p.in_unit_square() {
            w[quadrant(p)].ln()
        } else {
            f64::NEG_INFINITY
        }
    };
    let cfg = MhConfig::isotropic(0.04, 400_000, 10_000, 11);
    let chain = inference::mh_sample(Point::new(0.3, 0.3), &target, &cfg).unwrap();
    let mut counts = [0usize; 4];
    for p in &chain.samples {
        counts[quadrant(*p)] += 1;
    }
    let n = chain.samples.len() as f64;
    for q in 0..4 {
        let expected = w[q] / 10.0;
        let got = counts[q] as f64 / n;
        assert!((got - expected).abs() < 0.02, "quadrant {q}: {got} vs {expected}");
    }
}
