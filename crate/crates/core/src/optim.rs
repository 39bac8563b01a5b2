//! Generic numerical routines used by the convolution programs.

/// Euclidean projection onto `{q : 0 <= q <= upper, sum q = 1}`.
///
/// The projection is `clamp(y - tau, 0, upper)` for the unique shift `tau`
/// making the entries sum to one; `tau` is located by bisection. `upper`
/// must sum to at least one.
pub fn project_capped_simplex(y: &[f64], upper: &[f64]) -> Vec<f64> {
    let total = |tau: f64| -> f64 {
        y.iter()
            .zip(upper)
            .map(|(v, u)| (v - tau).clamp(0.0, *u))
            .sum()
    };
    let hi_y = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo_y = y.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = lo_y - 1.0; // total(lo) >= 1
    let mut hi = hi_y; // total(hi) = 0
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut q: Vec<f64> = y
        .iter()
        .zip(upper)
        .map(|(v, u)| (v - lo).clamp(0.0, *u))
        .collect();
    // Put the remaining round-off on the coordinate farthest from its bounds,
    // so that tiny entries keep their relative accuracy.
    let excess: f64 = q.iter().sum::<f64>() - 1.0;
    let slack = |k: usize| q[k].min(upper[k] - q[k]);
    if let Some(k) = (0..q.len()).max_by(|a, b| slack(*a).total_cmp(&slack(*b))) {
        q[k] = (q[k] - excess).clamp(0.0, upper[k]);
    }
    q
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-11,
        }
    }
}

/// Quasi-Newton minimization with Armijo backtracking. `fg` returns the
/// objective and writes the gradient into its second argument.
pub fn bfgs<F>(mut fg: F, x0: Vec<f64>, opts: &BfgsOptions) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    if n == 0 {
        return (x, f);
    }
    let mut h = identity(n);
    let mut g_new = vec![0.0; n];
    for _ in 0..opts.max_iters {
        if inf_norm(&g) <= opts.grad_tol {
            break;
        }
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            h = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let f_trial = fg(&trial, &mut g_new);
            if f_trial.is_finite() && f_trial <= f + 1e-4 * t * slope {
                accepted = Some((trial, f_trial));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if h == identity(n) {
                break;
            }
            h = identity(n);
            continue;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        let improvement = f - f_new;
        x = x_new;
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        if sy > 1e-300 {
            bfgs_update(&mut h, &s, &yv, sy);
        }
        if improvement.abs() <= 1e-16 * f.abs().max(1.0) && inf_norm(&s) <= 1e-15 {
            break;
        }
    }
    (x, f)
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompassOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
    /// Stop as soon as the objective drops below this value.
    pub stop_below: f64,
}

/// Coordinate pattern search with step expansion on success.
/// Returns the best point, its value and whether `stop_below` was reached.
pub fn compass_search<F>(mut f: F, x0: Vec<f64>, opts: &CompassOptions) -> (Vec<f64>, f64, bool)
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0;
    let mut fx = f(&x);
    let mut step = opts.initial_step;
    let mut evals = 1;
    while step >= opts.min_step && evals < opts.max_evals {
        if fx < opts.stop_below {
            return (x, fx, true);
        }
        let mut improved = false;
        for j in 0..x.len() {
            for sign in [1.0, -1.0] {
                let old = x[j];
                x[j] = old + sign * step;
                let ft = f(&x);
                evals += 1;
                if ft < fx - 1e-15 * fx.abs().max(1.0) {
                    fx = ft;
                    improved = true;
                    break;
                }
                x[j] = old;
            }
        }
        step = if improved { step * 2.0 } else { step * 0.5 };
    }
    let reached = fx < opts.stop_below;
    (x, fx, reached)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_onto_plain_simplex() {
        let q = project_capped_simplex(&[0.5, 0.5, 0.5], &[1.0; 3]);
        for v in &q {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let q = project_capped_simplex(&[2.0, 0.0, -1.0], &[1.0; 3]);
        assert_eq!(q, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_respects_caps() {
        let q = project_capped_simplex(&[5.0, 0.1, 0.0, -2.0], &[0.4, 0.4, 0.4, 0.4]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(q[0], 0.4);
        assert!(q.iter().all(|v| *v >= 0.0 && *v <= 0.4));
        // brute-force check of optimality: KKT shift is common to free coordinates
        assert!((q[1] - q[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn bfgs_on_rosenbrock() {
        let (x, f) = bfgs(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            vec![-1.2, 1.0],
            &BfgsOptions::default(),
        );
        assert!(f < 1e-16, "f = {f}");
        assert!((x[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn compass_finds_minimum_of_abs() {
        let opts = CompassOptions {
            initial_step: 1.0,
            min_step: 1e-12,
            max_evals: 100_000,
            stop_below: f64::NEG_INFINITY,
        };
        let (x, f, _) = compass_search(|x| (x[0] - 0.3).abs() + (x[1] + 2.0).abs(), vec![0.0, 0.0], &opts);
        assert!(f < 1e-10);
        assert!((x[1] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn compass_reports_divergence() {
        let opts = CompassOptions {
            initial_step: 1.0,
            min_step: 1e-9,
            max_evals: 10_000,
            stop_below: -1e6,
        };
        let (_, f, reached) = compass_search(|x| -x[0].abs(), vec![0.0], &opts);
        assert!(reached && f < -1e6);
    }
}
