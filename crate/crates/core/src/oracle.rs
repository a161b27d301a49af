//! Independent numerical oracles used by tests and the verify suites: adaptive
//! quadrature, finite differences, and a constrained simplex minimizer.

use rand::Rng;

use crate::rng::uniform_simplex;

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// γ(a, x) by quadrature after t = u², which removes the t^{a−1} singularity for a ≥ 1/2.
pub fn lower_gamma_quadrature(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let integrand = |u: f64| {
        if u == 0.0 {
            if a == 0.5 {
                2.0
            } else {
                0.0
            }
        } else {
            2.0 * u.powf(2.0 * a - 1.0) * (-u * u).exp()
        }
    };
    let upper = x.sqrt();
    // Split so each piece sees a comparable share of the mass.
    let pieces = 16;
    let width = upper / pieces as f64;
    let coarse: f64 = (0..pieces)
        .map(|i| {
            let lo = i as f64 * width;
            let hi = lo + width;
            (hi - lo) / 6.0 * (integrand(lo) + 4.0 * integrand(0.5 * (lo + hi)) + integrand(hi))
        })
        .sum::<f64>()
        .abs();
    let tol = 1e-15 * coarse.max(1e-300) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = i as f64 * width;
            adaptive_simpson(&integrand, lo, lo + width, tol, 40)
        })
        .sum()
}

/// Five-point central difference of a scalar function.
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Plain two-point central difference.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Five-point central-difference gradient of f at x.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|i| {
            let base = point[i];
            let mut at = |offset: f64| {
                point[i] = base + offset;
                let v = f(&point);
                point[i] = base;
                v
            };
            let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
            (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)
        })
        .collect()
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j as f64 + 1.0);
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projection onto {q ∈ simplex : w·q ≤ c}. The halfspace multiplier η is found by bisection;
/// the returned point is on the feasible side.
pub fn project_constrained(y: &[f64], w: &[f64], c: f64) -> Vec<f64> {
    let q = project_simplex(y);
    if dot(&q, w) <= c {
        return q;
    }
    let shifted = |eta: f64| -> Vec<f64> {
        let z: Vec<f64> = y.iter().zip(w).map(|(a, b)| a - eta * b).collect();
        project_simplex(&z)
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while dot(&shifted(hi), w) > c {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dot(&shifted(mid), w) > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    shifted(hi)
}

/// (1−α) KL(q‖μ) + α KL(q‖π) by direct summation.
pub fn mixed_kl(q: &[f64], mu: &[f64], pi: &[f64], alpha: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..q.len() {
        if q[k] <= 0.0 {
            continue;
        }
        if alpha < 1.0 {
            total += (1.0 - alpha) * q[k] * (q[k] / mu[k]).ln();
        }
        if alpha > 0.0 {
            total += alpha * q[k] * (q[k] / pi[k]).ln();
        }
    }
    total
}

fn mixed_kl_gradient(q: &[f64], mu: &[f64], pi: &[f64], alpha: f64) -> Vec<f64> {
    (0..q.len())
        .map(|k| {
            let lq = q[k].max(1e-300).ln();
            let mut g = lq + 1.0;
            if alpha < 1.0 {
                g -= (1.0 - alpha) * mu[k].ln();
            }
            if alpha > 0.0 {
                g -= alpha * pi[k].ln();
            }
            g
        })
        .collect()
}

fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    if parts == 1 {
        prefix.push(total);
        visit(prefix);
        prefix.pop();
        return;
    }
    for first in 0..=total {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, visit);
        prefix.pop();
    }
}

/// Barycentric grid resolution for `k` outcomes: 1/200 where affordable, coarser for large k.
pub fn grid_resolution(k: usize) -> usize {
    let budget = 20_000f64;
    let mut r = 200usize;
    while r > 4 {
        // C(r + k − 1, k − 1)
        let count = (1..k).fold(1.0f64, |acc, j| acc * (r + j) as f64 / j as f64);
        if count <= budget {
            break;
        }
        r -= 1;
        r = r.min((r as f64 * 0.9) as usize);
    }
    r
}

/// Minimize the mixed KL over {q ∈ simplex : w·q ≤ c}: best feasible barycentric grid point,
/// pulled strictly inside the feasible set, then refined by a log-barrier Newton method.
pub fn simplex_minimize(mu: &[f64], pi: &[f64], alpha: f64, w: &[f64], c: f64) -> Vec<f64> {
    let k = mu.len();
    let resolution = grid_resolution(k);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut scratch = Vec::with_capacity(k);
    compositions(resolution, k, &mut scratch, &mut |counts| {
        let q: Vec<f64> = counts.iter().map(|&n| n as f64 / resolution as f64).collect();
        if dot(&q, w) > c {
            return;
        }
        let value = mixed_kl(&q, mu, pi, alpha);
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, q));
        }
    });
    let start = best.map(|(_, q)| q).unwrap_or_else(|| vec![1.0 / k as f64; k]);
    barrier_newton(interior_start(&start, w, c), mu, pi, alpha, w, c)
}

/// Mix `q` with a strictly feasible, strictly positive point so every barrier term is finite.
fn interior_start(q: &[f64], w: &[f64], c: f64) -> Vec<f64> {
    let k = q.len();
    let argmin = (0..k).min_by(|a, b| w[*a].total_cmp(&w[*b])).expect("non-empty");
    let uniform = vec![1.0 / k as f64; k];
    // anchor = (1 − s) e_min + s · uniform with moment strictly below c
    let w_min = w[argmin];
    let w_bar = dot(&uniform, w);
    let s = if w_bar <= c { 0.5 } else { 0.5 * (c - w_min) / (w_bar - w_min) };
    let anchor: Vec<f64> = (0..k).map(|i| s * uniform[i] + if i == argmin { 1.0 - s } else { 0.0 }).collect();
    q.iter().zip(&anchor).map(|(a, b)| 0.99 * a + 0.01 * b).collect()
}

/// Solve the small dense system `m x = rhs` by Gaussian elimination with partial pivoting.
fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col] == 0.0 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for j in col..n {
                m[row][j] -= factor * m[col][j];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|j| m[row][j] * x[j]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Minimize t·F(q) − Σ log q_k − log(c − w·q) subject to Σ q = 1 for increasing t.
fn barrier_newton(start: Vec<f64>, mu: &[f64], pi: &[f64], alpha: f64, w: &[f64], c: f64) -> Vec<f64> {
    let k = start.len();
    let constraints = (k + 1) as f64;
    let phi = |q: &[f64], t: f64| -> f64 {
        let slack = c - dot(q, w);
        if slack <= 0.0 || q.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        t * mixed_kl(q, mu, pi, alpha) - q.iter().map(|v| v.ln()).sum::<f64>() - slack.ln()
    };
    let mut q = start;
    let mut t = 1.0;
    while constraints / t > 1e-15 {
        for _ in 0..100 {
            let slack = c - dot(&q, w);
            let grad_f = mixed_kl_gradient(&q, mu, pi, alpha);
            let g: Vec<f64> = (0..k).map(|i| t * grad_f[i] - 1.0 / q[i] + w[i] / slack).collect();
            let mut m = vec![vec![0.0; k + 1]; k + 1];
            for i in 0..k {
                for j in 0..k {
                    m[i][j] = w[i] * w[j] / (slack * slack);
                }
                m[i][i] += t / q[i] + 1.0 / (q[i] * q[i]);
                m[i][k] = 1.0;
                m[k][i] = 1.0;
            }
            let mut rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            rhs.push(0.0);
            let Some(sol) = solve_dense(m, rhs) else { break };
            let step = &sol[..k];
            let decrement = -dot(&g, step);
            if decrement / 2.0 <= 1e-14 {
                break;
            }
            let current = phi(&q, t);
            let mut s = 1.0;
            let mut moved = false;
            while s > 1e-20 {
                let trial: Vec<f64> = q.iter().zip(step).map(|(a, d)| a + s * d).collect();
                let value = phi(&trial, t);
                if value <= current - 0.25 * s * decrement {
                    q = trial;
                    moved = true;
                    break;
                }
                s *= 0.5;
            }
            if !moved {
                break;
            }
        }
        t *= 8.0;
    }
    q
}

/// `n` random distributions with w·q ≤ c: Dirichlet draws mixed toward the smallest-weight
/// vertex until feasible.
pub fn random_feasible<R: Rng + ?Sized>(rng: &mut R, w: &[f64], c: f64, n: usize) -> Vec<Vec<f64>> {
    let k = w.len();
    let argmin = (0..k).min_by(|a, b| w[*a].total_cmp(&w[*b])).expect("non-empty");
    (0..n)
        .map(|_| {
            let q = uniform_simplex(rng, k);
            let m = dot(&q, w);
            if m <= c {
                return q;
            }
            // Mix with the vertex e_argmin: moment (1−s)·m + s·w_min = c.
            let s = ((m - c) / (m - w[argmin])).clamp(0.0, 1.0);
            let s = (s * (1.0 + 1e-9)).min(1.0);
            q.iter().enumerate().map(|(i, v)| (1.0 - s) * v + if i == argmin { s } else { 0.0 }).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn simpson_polynomial_and_exponential() {
        let v = adaptive_simpson(&|x: f64| x * x * x, 0.0, 2.0, 1e-14, 30);
        assert!((v - 4.0).abs() < 1e-13);
        let e = adaptive_simpson(&|x: f64| (-x).exp(), 0.0, 5.0, 1e-15, 40);
        assert!((e - (1.0 - (-5.0f64).exp())).abs() < 1e-13);
    }

    #[test]
    fn quadrature_gamma_closed_forms() {
        for x in [0.1f64, 1.0, 7.5, 20.0] {
            let exact = -(-x).exp_m1();
            assert!((lower_gamma_quadrature(1.0, x) - exact).abs() < 1e-13 * exact.max(1e-300) + 1e-16);
        }
        // γ(2, x) = 1 − (1 + x) e^{−x}
        let x = 3.0f64;
        let exact = 1.0 - (1.0 + x) * (-x).exp();
        assert!((lower_gamma_quadrature(2.0, x) - exact).abs() < 1e-13);
    }

    #[test]
    fn differences() {
        let d = derivative(f64::sin, 0.3, 1e-3);
        assert!((d - 0.3f64.cos()).abs() < 1e-11);
        let c = central_difference(f64::exp, 0.0, 1e-5);
        assert!((c - 1.0).abs() < 1e-9);
        let g = gradient(|x: &[f64]| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-3);
        assert!((g[0] - 4.0).abs() < 1e-10 && (g[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.2, 0.3, 0.5]);
        assert!(p.iter().zip([0.2, 0.3, 0.5]).all(|(a, b)| (a - b).abs() < 1e-15));
        let p = project_simplex(&[5.0, 0.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn constrained_projection_is_feasible() {
        let w = [0.4, 1.0, 2.5];
        let p = project_constrained(&[0.1, 0.1, 0.8], &w, 1.0);
        assert!(dot(&p, &w) <= 1.0 + 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_minimum_is_geometric_mixture() {
        let mu = [0.5, 0.3, 0.2];
        let pi = [0.2, 0.3, 0.5];
        let q = simplex_minimize(&mu, &pi, 0.5, &[0.4, 1.0, 2.5], 100.0);
        let raw: Vec<f64> = mu.iter().zip(pi).map(|(m, p)| (m * p).sqrt()).collect();
        let z: f64 = raw.iter().sum();
        for (a, b) in q.iter().zip(raw.iter().map(|r| r / z)) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn random_points_are_feasible() {
        let mut rng = substream(1, &[]);
        let w = [0.4, 1.0, 2.5, 0.9];
        for q in random_feasible(&mut rng, &w, 0.6, 200) {
            assert!(dot(&q, &w) <= 0.6 + 1e-12);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(grid_resolution(2), 200);
        assert!(grid_resolution(3) <= 200);
        assert!(grid_resolution(6) < grid_resolution(3));
    }
}
