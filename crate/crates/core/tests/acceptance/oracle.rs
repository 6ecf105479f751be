// Reference solvers for the estimator checks. Deliberately naive: row-major
// Vec<f64>, first-order methods, no shared code with the library.

#[derive(Clone, Debug)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.at(i, j) * v[j]).sum())
            .collect()
    }

    pub fn tmul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self.at(i, j) * v[i];
            }
        }
        out
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn diffs(theta: &[f64]) -> Vec<f64> {
    theta.windows(2).map(|w| w[1] - w[0]).collect()
}

// D^T D v without forming D
fn laplacian(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for m in 0..n.saturating_sub(1) {
        let d = v[m + 1] - v[m];
        out[m] -= d;
        out[m + 1] += d;
    }
    out
}

pub fn ridge_objective(x: &Dense, y: &[f64], lambda: f64, theta: &[f64]) -> f64 {
    sq(&sub(y, &x.mul(theta))) + lambda * sq(&diffs(theta))
}

pub fn lasso_objective(x: &Dense, y: &[f64], theta: &[f64], lambda: f64, delta: &[f64]) -> f64 {
    let s: Vec<f64> = theta.iter().zip(delta).map(|(a, b)| a + b).collect();
    sq(&sub(y, &x.mul(&s))) + lambda * delta.iter().map(|d| d.abs()).sum::<f64>()
}

/// Largest violation of the subgradient optimality conditions.
pub fn lasso_kkt(x: &Dense, y: &[f64], theta: &[f64], lambda: f64, delta: &[f64]) -> f64 {
    let s: Vec<f64> = theta.iter().zip(delta).map(|(a, b)| a + b).collect();
    let g: Vec<f64> = x.tmul(&sub(y, &x.mul(&s))).iter().map(|v| 2.0 * v).collect();
    let mut worst: f64 = 0.0;
    for (gj, dj) in g.iter().zip(delta) {
        let v = if *dj == 0.0 {
            (gj.abs() - lambda).max(0.0)
        } else {
            (gj - lambda * dj.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

// spectral norm of a symmetric PSD operator, by power iteration, padded
fn lipschitz(n: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
    let mut est = 0.0;
    for _ in 0..500 {
        let w = op(&v);
        let norm = sq(&w).sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        est = norm / sq(&v).sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    est * 1.01
}

/// Accelerated proximal gradient with function-value restart.
fn fista(
    n: usize,
    lip: f64,
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    prox: impl Fn(&[f64], f64) -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let step = 1.0 / lip;
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut fx = f(&x);
    for _ in 0..max_iter {
        let g = grad(&z);
        let trial: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let next = prox(&trial, step);
        let f_next = f(&next);
        if f_next > fx {
            if t == 1.0 {
                // a plain step from x no longer descends: rounding floor
                break;
            }
            // restart momentum
            t = 1.0;
            z = x.clone();
            continue;
        }
        let moved = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        z = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        x = next;
        fx = f_next;
        t = t_next;
        let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if moved <= tol * scale {
            break;
        }
    }
    x
}

/// min ‖y − Xθ‖² + λ‖Dθ‖² subject to θ ≥ 0.
pub fn projected_gradient_ridge(x: &Dense, y: &[f64], lambda: f64) -> Vec<f64> {
    let n = x.cols;
    let hess = |v: &[f64]| -> Vec<f64> {
        let a = x.tmul(&x.mul(v));
        let b = laplacian(v);
        a.iter().zip(&b).map(|(p, q)| 2.0 * (p + lambda * q)).collect()
    };
    let lip = lipschitz(n, hess);
    let xty = x.tmul(y);
    fista(
        n,
        lip,
        |t| ridge_objective(x, y, lambda, t),
        |t| {
            let h = hess(t);
            h.iter().zip(&xty).map(|(a, b)| a - 2.0 * b).collect()
        },
        |v, _| v.iter().map(|a| a.max(0.0)).collect(),
        1e-14,
        400_000,
    )
}

/// min over δ of ‖y − X(θ+δ)‖² + λ‖δ‖₁.
pub fn proximal_gradient_lasso(x: &Dense, y: &[f64], theta: &[f64], lambda: f64) -> Vec<f64> {
    let n = x.cols;
    let r0 = sub(y, &x.mul(theta));
    let lip = lipschitz(n, |v| x.tmul(&x.mul(v)).iter().map(|a| 2.0 * a).collect());
    fista(
        n,
        lip,
        |d| lasso_objective(x, y, theta, lambda, d),
        |d| {
            let r = sub(&r0, &x.mul(d));
            x.tmul(&r).iter().map(|a| -2.0 * a).collect()
        },
        |v, step| {
            let k = lambda * step;
            v.iter()
                .map(|a| a.signum() * (a.abs() - k).max(0.0))
                .collect()
        },
        1e-14,
        400_000,
    )
}
