//! Least-squares fitting of rational units to a target on a uniform grid.
//!
//! The fit works in the scaled variable `u = x / s` with `s = max(|lo|, |hi|)`,
//! which keeps the monomial columns bounded by one. Two stages:
//!
//! 1. Sanathanan–Koerner iteration: minimize `Σ (P(u) − f·Q(u))² / Q_prev(u)²`,
//!    a weighted linear problem, until the coefficients stop moving.
//! 2. Levenberg–Marquardt polish of the true objective `Σ (P/Q − f)²`. The SK
//!    fixed point is close to, but not exactly at, a minimizer of that objective.
//!
//! Linear solves use a streaming Householder QR of the augmented design matrix,
//! so grids with millions of points never materialize a full design matrix.
//! Safe mode first fits the unconstrained rational; if `A(x) < 0` anywhere on
//! the grid the two forms differ, and the polish is rerun on the `|A|` objective.

use nalgebra::{DMatrix, DVector};

use super::target::TargetActivation;
use crate::error::{Error, Result};
use crate::rational::{
    denominator_value, eval_pau, eval_polynomial, RationalCoefficients, RationalOrders,
    SafetyMode,
};

/// Rows folded into the streaming QR at a time.
const QR_BLOCK_ROWS: usize = 2048;
/// Relative ridge added to the normal equations of a rank-deficient system.
const RIDGE: f64 = 1e-12;
const MAX_GRID_POINTS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub range: (f64, f64),
    pub grid_step: f64,
    pub max_sk_iterations: usize,
    /// Relative coefficient change at which both stages stop.
    pub convergence_tol: f64,
    pub max_refine_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            range: (-3.0, 3.0),
            grid_step: 1e-4,
            max_sk_iterations: 25,
            convergence_tol: 1e-10,
            max_refine_iterations: 200,
        }
    }
}

impl FitConfig {
    /// Uniform grid `lo, lo+step, ..., hi` (endpoints exact).
    pub fn grid(&self) -> Result<Vec<f64>> {
        let (lo, hi) = self.range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "fit range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(Error::InvalidConfig("grid step must be positive".into()));
        }
        let intervals = ((hi - lo) / self.grid_step).round();
        if intervals < 1.0 || intervals >= MAX_GRID_POINTS as f64 {
            return Err(Error::InvalidConfig(format!(
                "grid step {} gives {} intervals",
                self.grid_step, intervals
            )));
        }
        let intervals = intervals as usize;
        Ok((0..=intervals)
            .map(|i| {
                if i == intervals {
                    hi
                } else {
                    lo + (hi - lo) * (i as f64 / intervals as f64)
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub coefficients: RationalCoefficients,
    pub mode: SafetyMode,
    pub max_abs_residual: f64,
    pub sum_squares: f64,
    pub sk_iterations: usize,
    pub refine_iterations: usize,
    /// Whether the `|A|`-aware refinement pass ran.
    pub safe_refinement: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridResidual {
    pub max_abs: f64,
    pub argmax: f64,
    pub sum_squares: f64,
}

/// Residual statistics of `coeffs` against `target` on the config's grid.
pub fn grid_residuals(
    coeffs: &RationalCoefficients,
    mode: SafetyMode,
    target: impl Fn(f64) -> f64,
    cfg: &FitConfig,
) -> Result<GridResidual> {
    let mut out = GridResidual {
        max_abs: 0.0,
        argmax: cfg.range.0,
        sum_squares: 0.0,
    };
    for x in cfg.grid()? {
        let r = eval_pau(x, coeffs, mode)? - target(x);
        out.sum_squares += r * r;
        if r.abs() > out.max_abs {
            out.max_abs = r.abs();
            out.argmax = x;
        }
    }
    Ok(out)
}

/// Fits an `[m/n]` unit to a named activation.
pub fn least_squares_fit(
    target: &TargetActivation,
    orders: RationalOrders,
    cfg: &FitConfig,
    mode: SafetyMode,
) -> Result<FitReport> {
    least_squares_fit_fn(|x| target.eval(x), orders, cfg, mode)
}

/// Fits an `[m/n]` unit to an arbitrary function evaluated on the grid.
pub fn least_squares_fit_fn(
    target: impl Fn(f64) -> f64,
    orders: RationalOrders,
    cfg: &FitConfig,
    mode: SafetyMode,
) -> Result<FitReport> {
    let xs = cfg.grid()?;
    if xs.len() < orders.len() {
        return Err(Error::InvalidConfig(format!(
            "grid has {} points, need at least {}",
            xs.len(),
            orders.len()
        )));
    }
    let scale = cfg.range.0.abs().max(cfg.range.1.abs());
    let problem = Problem {
        us: xs.iter().map(|x| x / scale).collect(),
        fs: xs.iter().map(|&x| target(x)).collect(),
        orders,
    };
    if let Some(i) = problem.fs.iter().position(|f| !f.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "target is not finite at x = {}",
            xs[i]
        )));
    }

    let (theta, sk_iterations) = problem.sanathanan_koerner(cfg)?;
    let (mut theta, mut refine_iterations) =
        problem.levenberg_marquardt(theta, SafetyMode::Unsafe, cfg)?;

    let mut safe_refinement = false;
    if mode == SafetyMode::Safe && problem.min_denominator_sum(&theta) < 0.0 {
        let (refined, iters) = problem.levenberg_marquardt(theta, SafetyMode::Safe, cfg)?;
        theta = refined;
        refine_iterations += iters;
        safe_refinement = true;
    }

    let coefficients = unscale(&theta, orders, scale)?;
    let residual = grid_residuals(&coefficients, mode, &target, cfg)?;
    Ok(FitReport {
        coefficients,
        mode,
        max_abs_residual: residual.max_abs,
        sum_squares: residual.sum_squares,
        sk_iterations,
        refine_iterations,
        safe_refinement,
    })
}

/// Maps coefficients fitted in `u = x/s` back to `x`: `a_j/s^j`, `b_k/s^k`.
fn unscale(theta: &[f64], orders: RationalOrders, scale: f64) -> Result<RationalCoefficients> {
    let m = orders.numerator;
    let mut values = theta.to_vec();
    let mut power = 1.0;
    for a in values[..=m].iter_mut() {
        *a /= power;
        power *= scale;
    }
    let mut power = scale;
    for b in values[m + 1..].iter_mut() {
        *b /= power;
        power *= scale;
    }
    RationalCoefficients::from_flat(values, orders)
}

struct Problem {
    us: Vec<f64>,
    fs: Vec<f64>,
    orders: RationalOrders,
}

impl Problem {
    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        theta.split_at(self.orders.numerator + 1)
    }

    fn min_denominator_sum(&self, theta: &[f64]) -> f64 {
        let (_, b) = self.split(theta);
        self.us
            .iter()
            .map(|&u| u * eval_polynomial(b, u))
            .fold(f64::INFINITY, f64::min)
    }

    fn sum_squares(&self, theta: &[f64], mode: SafetyMode) -> f64 {
        let (a, b) = self.split(theta);
        let mut total = 0.0;
        for (&u, &f) in self.us.iter().zip(&self.fs) {
            let big_a = u * eval_polynomial(b, u);
            let q = match mode {
                SafetyMode::Safe => 1.0 + big_a.abs(),
                SafetyMode::Unsafe => 1.0 + big_a,
            };
            let r = eval_polynomial(a, u) / q - f;
            total += r * r;
        }
        if total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    }

    fn sanathanan_koerner(&self, cfg: &FitConfig) -> Result<(Vec<f64>, usize)> {
        let RationalOrders {
            numerator: m,
            denominator: n,
        } = self.orders;
        let p = self.orders.len();
        let mut theta = vec![0.0; p];
        let mut q_prev: Vec<f64> = vec![1.0; self.us.len()];
        let mut row = vec![0.0; p + 1];
        let mut powers = vec![0.0; m.max(n) + 1];
        for iteration in 1..=cfg.max_sk_iterations {
            let mut qr = StreamingQr::new(p);
            for ((&u, &f), &q) in self.us.iter().zip(&self.fs).zip(&q_prev) {
                let w = 1.0 / q.abs().max(1e-12);
                let mut power = 1.0;
                for slot in powers.iter_mut() {
                    *slot = power;
                    power *= u;
                }
                for j in 0..=m {
                    row[j] = w * powers[j];
                }
                for k in 1..=n {
                    row[m + k] = -w * f * powers[k];
                }
                row[p] = w * f;
                qr.push(&row);
            }
            let next = qr.solve()?;
            let change = relative_change(&theta, &next);
            theta = next;
            let (_, b) = self.split(&theta);
            for (q, &u) in q_prev.iter_mut().zip(&self.us) {
                *q = 1.0 + u * eval_polynomial(b, u);
            }
            if change <= cfg.convergence_tol {
                return Ok((theta, iteration));
            }
        }
        Err(Error::FitNonConvergence {
            iterations: cfg.max_sk_iterations,
            residual: self.sum_squares(&theta, SafetyMode::Unsafe),
        })
    }

    /// Minimizes the true squared error starting from `theta`. Stops when the
    /// relative step falls below the tolerance, or when no damping level
    /// yields a non-increasing objective (a stationary point to working precision).
    fn levenberg_marquardt(
        &self,
        mut theta: Vec<f64>,
        mode: SafetyMode,
        cfg: &FitConfig,
    ) -> Result<(Vec<f64>, usize)> {
        let m = self.orders.numerator;
        let p = self.orders.len();
        let mut sse = self.sum_squares(&theta, mode);
        let mut lambda = 1e-3;
        let mut row = vec![0.0; p + 1];
        for iteration in 1..=cfg.max_refine_iterations {
            let mut qr = StreamingQr::new(p);
            let (a, b) = self.split(&theta);
            for (&u, &f) in self.us.iter().zip(&self.fs) {
                let pv = eval_polynomial(a, u);
                let big_a = u * eval_polynomial(b, u);
                let (q, dq) = match mode {
                    SafetyMode::Safe => (1.0 + big_a.abs(), crate::rational::sign_conv(big_a)),
                    SafetyMode::Unsafe => (1.0 + big_a, 1.0),
                };
                let inv_q = 1.0 / q;
                let den = -dq * pv * inv_q * inv_q;
                let mut power = 1.0;
                for slot in row[..=m].iter_mut() {
                    *slot = power * inv_q;
                    power *= u;
                }
                let mut power = u;
                for slot in row[m + 1..p].iter_mut() {
                    *slot = den * power;
                    power *= u;
                }
                row[p] = f - pv * inv_q;
                qr.push(&row);
            }
            let r = qr.finish();
            let column_scale: Vec<f64> = (0..p)
                .map(|j| r.column(j).norm().max(f64::MIN_POSITIVE))
                .collect();

            loop {
                let step = damped_step(&r, &column_scale, lambda, p)?;
                let candidate: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
                let candidate_sse = self.sum_squares(&candidate, mode);
                if candidate_sse <= sse {
                    let change = relative_change(&theta, &candidate);
                    theta = candidate;
                    sse = candidate_sse;
                    lambda = (lambda * 0.1).max(1e-15);
                    if change <= cfg.convergence_tol {
                        return Ok((theta, iteration));
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e12 {
                    return Ok((theta, iteration));
                }
            }
        }
        Err(Error::FitNonConvergence {
            iterations: cfg.max_refine_iterations,
            residual: sse,
        })
    }
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let diff: f64 = old
        .iter()
        .zip(new)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = new.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Solves `min ‖R δ − c‖² + λ ‖D δ‖²` from the augmented triangle `[R | c]`.
fn damped_step(r_aug: &DMatrix<f64>, scale: &[f64], lambda: f64, p: usize) -> Result<Vec<f64>> {
    let rows = r_aug.nrows().min(p);
    let stacked = DMatrix::from_fn(rows + p, p + 1, |i, j| {
        if i < rows {
            r_aug[(i, j)]
        } else if j == i - rows {
            lambda.sqrt() * scale[j]
        } else {
            0.0
        }
    });
    let mut qr = StreamingQr::new(p);
    qr.fold(stacked);
    qr.solve()
}

/// Incremental QR of an augmented system `[A | b]` with `p` unknowns.
struct StreamingQr {
    p: usize,
    r: DMatrix<f64>,
    pending: Vec<f64>,
}

impl StreamingQr {
    fn new(p: usize) -> Self {
        Self {
            p,
            r: DMatrix::zeros(0, p + 1),
            pending: Vec::with_capacity(QR_BLOCK_ROWS * (p + 1)),
        }
    }

    fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.p + 1);
        self.pending.extend_from_slice(row);
        if self.pending.len() >= QR_BLOCK_ROWS * (self.p + 1) {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let block = DMatrix::from_row_slice(
            self.pending.len() / (self.p + 1),
            self.p + 1,
            &self.pending,
        );
        self.pending.clear();
        self.fold(block);
    }

    fn fold(&mut self, block: DMatrix<f64>) {
        let cols = self.p + 1;
        let top = self.r.nrows();
        let stacked = DMatrix::from_fn(top + block.nrows(), cols, |i, j| {
            if i < top {
                self.r[(i, j)]
            } else {
                block[(i - top, j)]
            }
        });
        self.r = stacked.qr().r();
    }

    fn finish(mut self) -> DMatrix<f64> {
        self.flush();
        self.r
    }

    /// Least-squares solution; rank-deficient systems fall back to ridge-
    /// regularized normal equations.
    fn solve(self) -> Result<Vec<f64>> {
        let p = self.p;
        let r = self.finish();
        if r.nrows() < p {
            return Err(Error::InvalidConfig("fewer equations than unknowns".into()));
        }
        let tri = r.view((0, 0), (p, p)).into_owned();
        let rhs = DVector::from_fn(p, |i, _| r[(i, p)]);
        let diag_max = (0..p).map(|i| tri[(i, i)].abs()).fold(0.0, f64::max);
        let well_posed = diag_max > 0.0 && (0..p).all(|i| tri[(i, i)].abs() > 1e-13 * diag_max);
        if well_posed {
            if let Some(x) = tri.solve_upper_triangular(&rhs) {
                if x.iter().all(|v| v.is_finite()) {
                    return Ok(x.iter().copied().collect());
                }
            }
        }
        let mut normal = tri.transpose() * &tri;
        let ridge = RIDGE * normal.diagonal().amax().max(f64::MIN_POSITIVE);
        for i in 0..p {
            normal[(i, i)] += ridge;
        }
        let h = tri.transpose() * rhs;
        normal
            .cholesky()
            .map(|c| c.solve(&h).iter().copied().collect())
            .ok_or_else(|| Error::InvalidConfig("singular least-squares system".into()))
    }
}

/// Re-export for callers that want the denominator check used by the fit.
pub fn min_denominator_on_grid(
    coeffs: &RationalCoefficients,
    mode: SafetyMode,
    cfg: &FitConfig,
) -> Result<f64> {
    Ok(cfg
        .grid()?
        .into_iter()
        .map(|x| denominator_value(x, coeffs, mode))
        .fold(f64::INFINITY, f64::min))
}
