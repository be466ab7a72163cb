//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

/// Clusters by plain density reachability. Core points (at least `min_pts`
/// points within `eps`, self included) within `eps` of each other are
/// joined; a border point goes to the adjacent cluster with the smallest
/// core index. Clusters are ordered by their lowest core index; members
/// ascend.
pub fn dbscan_oracle(pts: &[[f64; 2]], eps: f64, min_pts: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = pts.len();
    let near = |i: usize, j: usize| {
        let dx = pts[i][0] - pts[j][0];
        let dy = pts[i][1] - pts[j][1];
        dx * dx + dy * dy <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut comp = vec![usize::MAX; n];
    let mut ncomp = 0;
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = ncomp;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && comp[j] == usize::MAX && near(i, j) {
                    comp[j] = ncomp;
                    stack.push(j);
                }
            }
        }
        ncomp += 1;
    }
    let mut clusters = vec![Vec::new(); ncomp];
    let mut noise = Vec::new();
    for i in 0..n {
        let c = if core[i] {
            Some(comp[i])
        } else {
            (0..n).filter(|&j| core[j] && near(i, j)).map(|j| comp[j]).min()
        };
        match c {
            Some(c) => clusters[c].push(i),
            None => noise.push(i),
        }
    }
    (clusters, noise)
}

/// Closed-form OLS via Cramer's rule on raw sums.
pub fn ols_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

pub struct QpSolution {
    pub beta: Vec<f64>,
    pub bias: f64,
    pub dual_objective: f64,
    xs: Vec<Vec<f64>>,
    means: Vec<f64>,
    scales: Vec<f64>,
    gamma: f64,
}

impl QpSolution {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let u: Vec<f64> = x.iter().zip(&self.means).zip(&self.scales).map(|((v, m), s)| (v - m) / s).collect();
        self.beta
            .iter()
            .zip(&self.xs)
            .map(|(b, v)| b * (-self.gamma * u.iter().zip(v).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()).exp())
            .sum::<f64>()
            + self.bias
    }
}

/// Projection onto `{a ∈ [0, c]^l : Σ s_t a_t = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], s: &[f64], c: f64) -> Vec<f64> {
    let h = |lam: f64| v.iter().zip(s).map(|(vi, si)| (vi - lam * si).clamp(0.0, c) * si).sum::<f64>();
    let m = v.iter().fold(0.0f64, |a, b| a.max(b.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-m, m);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * m {
            break;
        }
    }
    let lam = 0.5 * (lo + hi);
    v.iter().zip(s).map(|(vi, si)| (vi - lam * si).clamp(0.0, c)).collect()
}

/// ε-SVR dual by accelerated projected gradient with adaptive restart,
/// on the same standardization and kernel conventions.
pub fn svr_oracle(x: &[Vec<f64>], y: &[f64], c: f64, eps: f64, gamma: f64) -> QpSolution {
    let n = x.len();
    let d = x[0].len();
    let means: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let scales: Vec<f64> = (0..d)
        .map(|j| {
            let sd = (x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n as f64).sqrt();
            if sd > 1e-12 * means[j].abs().max(1.0) {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let xs: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&means).zip(&scales).map(|((v, m), s)| (v - m) / s).collect()).collect();
    let k = |i: usize, j: usize| (-gamma * xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp();
    let l = 2 * n;
    let s: Vec<f64> = (0..l).map(|t| if t < n { 1.0 } else { -1.0 }).collect();
    let q: Vec<Vec<f64>> = (0..l).map(|a| (0..l).map(|b| s[a] * s[b] * k(a % n, b % n)).collect()).collect();
    let p: Vec<f64> = (0..l).map(|t| if t < n { eps - y[t] } else { eps + y[t - n] }).collect();
    let grad = |a: &[f64]| -> Vec<f64> { (0..l).map(|i| p[i] + (0..l).map(|j| q[i][j] * a[j]).sum::<f64>()).collect() };
    let obj = |a: &[f64]| -> f64 {
        let g = grad(a);
        (0..l).map(|i| 0.5 * a[i] * (g[i] + p[i])).sum()
    };
    let lip = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut a = vec![0.0; l];
    let mut v = a.clone();
    let mut t = 1.0f64;
    let mut fa = obj(&a);
    for _ in 0..100_000 {
        let g = grad(&v);
        let step: Vec<f64> = (0..l).map(|i| v[i] - g[i] / lip).collect();
        let an = project(&step, &s, c);
        let fan = obj(&an);
        if fan > fa {
            // restart momentum
            t = 1.0;
            v = a.clone();
            continue;
        }
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let moved = (0..l).map(|i| (an[i] - a[i]).abs()).fold(0.0, f64::max);
        v = (0..l).map(|i| an[i] + (t - 1.0) / tn * (an[i] - a[i])).collect();
        a = an;
        fa = fan;
        t = tn;
        if moved < 1e-14 {
            break;
        }
    }
    let g = grad(&a);
    let tol = 1e-7 * c;
    let (mut ub, mut lb, mut sum, mut nf) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0);
    for i in 0..l {
        let yg = s[i] * g[i];
        if a[i] >= c - tol {
            if s[i] < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if a[i] <= tol {
            if s[i] > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            sum += yg;
            nf += 1;
        }
    }
    let rho = if nf > 0 { sum / nf as f64 } else { (ub + lb) / 2.0 };
    let beta: Vec<f64> = (0..n).map(|i| a[i] - a[i + n]).collect();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * beta[j] * k(i, j);
        }
    }
    let dual_objective = (0..n).map(|i| beta[i] * y[i] - eps * beta[i].abs()).sum::<f64>() - 0.5 * quad;
    QpSolution {
        beta,
        bias: -rho,
        dual_objective,
        xs,
        means,
        scales,
        gamma,
    }
}
