//! Dense BFGS minimizer with backtracking Armijo line search. Sized for the
//! small parameter vectors of the axis networks, where maintaining the full
//! inverse-Hessian approximation is cheap and converges in few iterations.

use std::time::Instant;

/// Backtracking line-search knobs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchParams {
    /// Armijo sufficient-decrease coefficient.
    pub c1: f64,
    /// Step shrink factor per failed trial.
    pub shrink: f64,
    /// Trials before the search gives up.
    pub max_trials: u32,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self { c1: 1e-4, shrink: 0.5, max_trials: 25 }
    }
}

impl LineSearchParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return Err(format!("line-search c1 must lie in (0, 1), got {}", self.c1));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(format!("line-search shrink must lie in (0, 1), got {}", self.shrink));
        }
        if self.max_trials == 0 {
            return Err("line search needs at least one trial".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsConfig {
    pub max_iterations: usize,
    /// Terminate once the gradient's Euclidean norm drops below this.
    pub gradient_tolerance: f64,
    pub line_search: LineSearchParams,
    /// Hard wall-clock cutoff checked between evaluations; used by the
    /// in-flight trainer.
    pub deadline: Option<Instant>,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-7,
            line_search: LineSearchParams::default(),
            deadline: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStatus {
    /// Gradient norm reached the tolerance.
    Converged,
    /// Iteration cap reached with a finite iterate.
    IterationCap,
    /// Wall-clock deadline hit; the current iterate is returned.
    DeadlineReached,
    /// No trial step satisfied the Armijo condition; the best iterate so
    /// far is returned.
    LineSearchFailed,
    /// A non-finite value appeared; the last finite iterate is returned.
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub position: Vec<f64>,
    /// Objective value at each accepted iterate, starting with the initial
    /// point. Non-increasing by construction.
    pub loss_history: Vec<f64>,
    pub iterations: usize,
    pub status: BfgsStatus,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric n x n matrix-vector product, row-major storage.
fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&m[i * n..(i + 1) * n], v);
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn past_deadline(cfg: &BfgsConfig) -> bool {
    cfg.deadline.is_some_and(|d| Instant::now() >= d)
}

/// Minimizes an objective given by a fused value-and-gradient callback.
///
/// The inverse-Hessian approximation starts as the identity, is rescaled
/// once from the first accepted step's curvature, and is then updated by the
/// standard BFGS recursion. Updates are skipped when the curvature product
/// is too small to be trustworthy.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, cfg: &BfgsConfig) -> BfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0;
    // Checked before the initial evaluation too: when several minimize calls
    // share one deadline, a caller arriving after expiry must cost nothing.
    if past_deadline(cfg) {
        return BfgsOutcome {
            position: x,
            loss_history: Vec::new(),
            iterations: 0,
            status: BfgsStatus::DeadlineReached,
        };
    }
    let (mut f, mut g) = objective(&x);
    let mut history = vec![f];

    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsOutcome { position: x, loss_history: history, iterations: 0, status: BfgsStatus::NonFinite };
    }
    if norm(&g) <= cfg.gradient_tolerance {
        return BfgsOutcome { position: x, loss_history: history, iterations: 0, status: BfgsStatus::Converged };
    }

    let mut h = identity(n);
    let mut first_scale_pending = true;
    let mut direction = vec![0.0; n];

    for iteration in 1..=cfg.max_iterations {
        if past_deadline(cfg) {
            return BfgsOutcome {
                position: x,
                loss_history: history,
                iterations: iteration - 1,
                status: BfgsStatus::DeadlineReached,
            };
        }

        mat_vec(&h, &g, &mut direction);
        for d in direction.iter_mut() {
            *d = -*d;
        }
        let mut slope = dot(&g, &direction);
        if slope >= 0.0 {
            // The approximation lost positive definiteness; restart from
            // steepest descent.
            h = identity(n);
            first_scale_pending = true;
            for (d, gi) in direction.iter_mut().zip(&g) {
                *d = -gi;
            }
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        for _ in 0..cfg.line_search.max_trials {
            if past_deadline(cfg) {
                return BfgsOutcome {
                    position: x,
                    loss_history: history,
                    iterations: iteration - 1,
                    status: BfgsStatus::DeadlineReached,
                };
            }
            let trial: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = objective(&trial);
            if ft.is_finite() && ft <= f + cfg.line_search.c1 * step * slope {
                if gt.iter().any(|v| !v.is_finite()) {
                    return BfgsOutcome {
                        position: x,
                        loss_history: history,
                        iterations: iteration - 1,
                        status: BfgsStatus::NonFinite,
                    };
                }
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= cfg.line_search.shrink;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            return BfgsOutcome {
                position: x,
                loss_history: history,
                iterations: iteration - 1,
                status: BfgsStatus::LineSearchFailed,
            };
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);

        if sy > 1e-12 * norm(&s) * norm(&y) {
            if first_scale_pending {
                // Scale the initial approximation to the first measured
                // curvature before applying the update; a bare identity
                // start badly misjudges the step size otherwise.
                let yy = dot(&y, &y);
                if yy > 0.0 {
                    let gamma = sy / yy;
                    for (i, v) in h.iter_mut().enumerate() {
                        *v = if i % (n + 1) == 0 { gamma } else { 0.0 };
                    }
                }
                first_scale_pending = false;
            }
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            mat_vec(&h, &y, &mut hy);
            let yhy = dot(&y, &hy);
            let coeff = (1.0 + rho * yhy) * rho;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += coeff * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }

        x = x_new;
        f = f_new;
        g = g_new;
        history.push(f);

        if norm(&g) <= cfg.gradient_tolerance {
            return BfgsOutcome { position: x, loss_history: history, iterations: iteration, status: BfgsStatus::Converged };
        }
    }

    BfgsOutcome {
        position: x,
        loss_history: history,
        iterations: cfg.max_iterations,
        status: BfgsStatus::IterationCap,
    }
}
