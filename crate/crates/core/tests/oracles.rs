mod common;

use common::{dbscan_oracle, ols_oracle, svr_oracle};
use spatter_core::analytics::linfit;
use spatter_core::registration::{dbscan, DbscanParams};
use spatter_core::rng::SplitMix64;
use spatter_core::svr::{train_svr, SvrHyperparams};

fn random_points(g: &mut SplitMix64) -> (Vec<[f64; 2]>, DbscanParams) {
    let n = g.uniform_int(0, 60) as usize;
    let spread = g.uniform(3.0, 30.0);
    // a few blobs plus uniform clutter, snapped to a half grid so that
    // distances exactly equal to eps occur
    let centers: Vec<[f64; 2]> = (0..g.uniform_int(1, 4)).map(|_| [g.uniform(0.0, spread), g.uniform(0.0, spread)]).collect();
    let pts = (0..n)
        .map(|_| {
            let p = if g.next_f64() < 0.7 {
                let c = centers[g.uniform_int(0, centers.len() as i64 - 1) as usize];
                [c[0] + g.gaussian(0.0, 1.5), c[1] + g.gaussian(0.0, 1.5)]
            } else {
                [g.uniform(0.0, spread), g.uniform(0.0, spread)]
            };
            [(p[0] * 2.0).round() / 2.0, (p[1] * 2.0).round() / 2.0]
        })
        .collect();
    let params = DbscanParams {
        eps: [0.5, 1.0, 1.5, 2.0, 3.0][g.uniform_int(0, 4) as usize],
        min_pts: g.uniform_int(1, 6) as usize,
    };
    (pts, params)
}

#[test]
fn dbscan_matches_reachability_oracle() {
    for seed in 0..300 {
        let mut g = SplitMix64::derive(77, seed);
        let (pts, p) = random_points(&mut g);
        let got = dbscan(&pts, &p).unwrap();
        let (clusters, noise) = dbscan_oracle(&pts, p.eps, p.min_pts);
        assert_eq!(got.clusters, clusters, "seed {seed}");
        assert_eq!(got.noise, noise, "seed {seed}");
    }
}

#[test]
fn linfit_matches_closed_form() {
    let mut g = SplitMix64::new(5);
    for _ in 0..200 {
        let n = g.uniform_int(2, 30) as usize;
        let x: Vec<f64> = (0..n).map(|_| g.uniform(-50.0, 50.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v - 2.0 + g.gaussian(0.0, 3.0)).collect();
        let f = linfit(&x, &y).unwrap();
        let (s, i) = ols_oracle(&x, &y);
        assert!((f.slope - s).abs() < 1e-9 * (1.0 + s.abs()));
        assert!((f.intercept - i).abs() < 1e-9 * (1.0 + i.abs()));
        assert!((0.0..=1.0 + 1e-12).contains(&f.r_squared));
    }
}

#[test]
fn svr_matches_projected_gradient_solver() {
    for seed in 0..30 {
        let mut g = SplitMix64::derive(11, seed);
        let n = g.uniform_int(2, 10) as usize;
        let d = g.uniform_int(1, 3) as usize;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| g.uniform(-5.0, 5.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0].cos() + g.gaussian(0.0, 1.0)).collect();
        let hp = SvrHyperparams {
            c: g.uniform(0.5, 10.0),
            epsilon: g.uniform(0.05, 1.0),
            gamma: Some(g.uniform(0.2, 1.5)),
        };
        let m = train_svr(&x, &y, &hp).unwrap();
        let o = svr_oracle(&x, &y, hp.c, hp.epsilon, hp.gamma.unwrap());
        assert!(m.report.kkt_residual < 1e-6);
        assert!(m.report.dual_objective >= o.dual_objective - 1e-6, "seed {seed}");
        assert!((m.report.dual_objective - o.dual_objective).abs() < 1e-4, "seed {seed}");
        for xi in &x {
            let (a, b) = (m.predict(xi).unwrap(), o.predict(xi));
            assert!((a - b).abs() < 1e-4, "seed {seed}: {a} vs {b}");
        }
    }
}
