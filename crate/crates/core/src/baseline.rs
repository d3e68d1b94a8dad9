//! Centralized reference solutions and the synchronous comparison method.
//!
//! The reference solver works on the consensus-enforced problem
//! `min Σ f_i(x)` over the intersection of the agent boxes subject to every
//! `g_i(x) ≤ 0`. A primal-dual warm start with averaging is followed by an
//! augmented-Lagrangian polish whose inner problems are solved by accelerated
//! projected gradient. Consensus multipliers `λ*` are then recovered from
//! per-agent stationarity through the pseudo-inverse of `V`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ConsensusMatrix;
use crate::problem::{DomainBox, Ellipsoid, ProblemInstance};

pub use crate::run::run_sync_baseline;

/// High-accuracy saddle point `(x*, y*, λ*)` with its certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub phi_star: f64,
    /// Stacked constraint multipliers, one per row of `g`.
    pub y_star: Vec<f64>,
    /// Stacked consensus multipliers, `n` per agent.
    pub lambda_star: Vec<f64>,
    /// `max_i ‖[g_i(x*)]_+‖`.
    pub primal_feasibility: f64,
    /// Max of the projected-gradient stationarity residual and complementarity.
    pub dual_residual: f64,
    pub tol: f64,
    pub method: String,
    /// Hash of the instance this solution belongs to.
    pub instance_hash: String,
}

impl ReferenceSolution {
    /// `1 ⊗ x*`.
    pub fn stacked_x(&self, num_agents: usize) -> Vec<f64> {
        (0..num_agents).flat_map(|_| self.x_star.iter().copied()).collect()
    }

    pub fn y_norm(&self) -> f64 {
        self.y_star.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reference is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("reference solution: {e}")))
    }
}

/// `B = margin · ‖y*‖`, floored at 1.
pub fn estimate_dual_bound(reference: &ReferenceSolution, margin: f64) -> Result<f64> {
    if !(margin >= 1.0 && margin.is_finite()) {
        return Err(Error::InvalidParameter(format!("margin must be >= 1, got {margin}")));
    }
    Ok((margin * reference.y_norm()).max(1.0))
}

/// The consensus-enforced problem seen by the reference solver.
struct Centralized<'a> {
    instance: &'a ProblemInstance,
    domain: DomainBox,
}

impl<'a> Centralized<'a> {
    fn new(instance: &'a ProblemInstance) -> Result<Self> {
        let n = instance.dim();
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        for a in instance.agents() {
            for k in 0..n {
                lower[k] = lower[k].max(a.regularizer.lower()[k]);
                upper[k] = upper[k].min(a.regularizer.upper()[k]);
            }
        }
        let domain = DomainBox::new(lower, upper)
            .map_err(|_| Error::NonConvergence("agent boxes have empty intersection".into()))?;
        Ok(Centralized { instance, domain })
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.instance.agents().iter().map(|a| a.objective.value(x)).sum()
    }

    fn objective_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for a in self.instance.agents() {
            add(&mut g, 1.0, &a.objective.gradient(x));
        }
        g
    }

    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        self.instance.agents().iter().flat_map(|a| a.constraint.value(x)).collect()
    }

    /// `Σ_r y_r ∇g_r(x)`.
    fn jac_t_mul(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (i, a) in self.instance.agents().iter().enumerate() {
            let yi = &y[self.instance.constraint_range(i)];
            add(&mut out, 1.0, &a.constraint.jacobian_t_mul(x, yi));
        }
        out
    }

    fn feasibility(&self, x: &[f64]) -> f64 {
        let g = self.constraints(x);
        (0..self.instance.num_agents())
            .map(|i| {
                g[self.instance.constraint_range(i)]
                    .iter()
                    .map(|v| v.max(0.0).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `‖x − P(x − ∇_x L(x, y))‖_∞` and `max_r |y_r g_r(x)|`.
    fn kkt_residual(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut grad = self.objective_grad(x);
        add(&mut grad, 1.0, &self.jac_t_mul(x, y));
        let stepped: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - g).collect();
        let proj = self.domain.prox(&stepped);
        let station = x.iter().zip(&proj).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let compl = y
            .iter()
            .zip(self.constraints(x))
            .map(|(yr, gr)| (yr * gr).abs())
            .fold(0.0, f64::max);
        station.max(compl)
    }

    /// Averaged single-block primal-dual iteration with momentum `2g^k − g^{k−1}`.
    fn warm_start(&self, iterations: usize) -> (Vec<f64>, Vec<f64>) {
        let agents = self.instance.agents();
        let c = agents.iter().map(|a| a.constraint.lipschitz_value().powi(2)).sum::<f64>().sqrt();
        let lg = agents.iter().map(|a| a.constraint.lipschitz_jac().powi(2)).sum::<f64>().sqrt();
        let lf: f64 = agents.iter().map(|a| a.objective.lipschitz_grad()).sum();
        let tau = 1.0 / (2.0 * c + lf + lg).max(f64::MIN_POSITIVE);
        let sigma = if c > 0.0 { 1.0 / (3.0 * c) } else { 1.0 };

        let mut x = self.domain.center();
        let mut y = vec![0.0; self.instance.num_constraints()];
        let mut g_prev = self.constraints(&x);
        let mut sum_x = vec![0.0; x.len()];
        let mut sum_y = vec![0.0; y.len()];
        for _ in 0..iterations {
            let g_cur = self.constraints(&x);
            for ((yr, gc), gp) in y.iter_mut().zip(&g_cur).zip(&g_prev) {
                *yr = (*yr + sigma * (2.0 * gc - gp)).max(0.0);
            }
            let mut grad = self.objective_grad(&x);
            add(&mut grad, 1.0, &self.jac_t_mul(&x, &y));
            let stepped: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - tau * g).collect();
            x = self.domain.prox(&stepped);
            g_prev = g_cur;
            add(&mut sum_x, 1.0, &x);
            add(&mut sum_y, 1.0, &y);
        }
        if iterations == 0 {
            return (x, y);
        }
        let s = 1.0 / iterations as f64;
        (sum_x.iter().map(|v| v * s).collect(), sum_y.iter().map(|v| v * s).collect())
    }

    /// Augmented Lagrangian `F(x) + (1/2c) Σ ([y + c g(x)]_+² − y²)` and its gradient.
    fn augmented(&self, x: &[f64], y: &[f64], penalty: f64) -> (f64, Vec<f64>) {
        let g = self.constraints(x);
        let shifted: Vec<f64> = y.iter().zip(&g).map(|(yr, gr)| (yr + penalty * gr).max(0.0)).collect();
        let value = self.objective(x)
            + shifted
                .iter()
                .zip(y)
                .map(|(s, yr)| s * s - yr * yr)
                .sum::<f64>()
                / (2.0 * penalty);
        let mut grad = self.objective_grad(x);
        add(&mut grad, 1.0, &self.jac_t_mul(x, &shifted));
        (value, grad)
    }

    /// Accelerated projected gradient with backtracking and adaptive restart.
    fn inner_solve(&self, x0: &[f64], y: &[f64], penalty: f64, eps: f64, max_iter: usize) -> Vec<f64> {
        let mut x = x0.to_vec();
        let mut z = x.clone();
        let mut t = 1.0f64;
        let mut lip = 1.0f64;
        let (mut fx, _) = self.augmented(&x, y, penalty);
        for _ in 0..max_iter {
            let (fz, gz) = self.augmented(&z, y, penalty);
            let (x_new, f_new) = loop {
                let cand = self
                    .domain
                    .prox(&z.iter().zip(&gz).map(|(a, g)| a - g / lip).collect::<Vec<_>>());
                let d: Vec<f64> = cand.iter().zip(&z).map(|(a, b)| a - b).collect();
                let (f_cand, _) = self.augmented(&cand, y, penalty);
                let model = fz + dot(&gz, &d) + 0.5 * lip * dot(&d, &d);
                if f_cand <= model + 1e-13 * fz.abs().max(1.0) || lip > 1e300 {
                    break (cand, f_cand);
                }
                lip *= 2.0;
            };
            let mapping = lip * x_new.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if mapping <= eps {
                return if f_new <= fx { x_new } else { x };
            }
            if f_new > fx {
                // Restart momentum from the last accepted point.
                z = x.clone();
                t = 1.0;
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            z = x_new
                .iter()
                .zip(&x)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            x = x_new;
            fx = f_new;
            t = t_next;
            lip *= 0.95;
            if mapping <= eps {
                break;
            }
        }
        x
    }
}

impl Centralized<'_> {
    /// Newton iteration on the KKT system of the active set guessed at `(x, y)`.
    /// Returns `None` unless the result improves the KKT residual and stays feasible.
    fn newton_polish(&self, x0: &[f64], y0: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = x0.len();
        let lo = self.domain.lower();
        let hi = self.domain.upper();
        let rows: Vec<(usize, &Ellipsoid)> = self
            .instance
            .agents()
            .iter()
            .enumerate()
            .flat_map(|(i, a)| self.instance.constraint_range(i).zip(a.constraint.rows()))
            .collect();
        let g0 = self.constraints(x0);
        let y_scale = 1.0 + y0.iter().fold(0.0f64, |m, v| m.max(*v));
        let active: Vec<usize> = (0..g0.len())
            .filter(|&r| y0[r] > 1e-8 * y_scale || g0[r] > -1e-7)
            .collect();
        let free: Vec<usize> = (0..n)
            .filter(|&k| (x0[k] - lo[k]).abs() > 1e-9 && (x0[k] - hi[k]).abs() > 1e-9)
            .collect();
        let hess_f: f64 = self.instance.agents().iter().map(|a| a.objective.scale()).sum();

        let mut x = x0.to_vec();
        let mut y = vec![0.0; y0.len()];
        for &r in &active {
            y[r] = y0[r];
        }
        for _ in 0..50 {
            let g = self.constraints(&x);
            let mut grad = self.objective_grad(&x);
            add(&mut grad, 1.0, &self.jac_t_mul(&x, &y));
            let mut hess = DMatrix::from_diagonal_element(n, n, hess_f);
            for &r in &active {
                let a = rows[r].1.a();
                hess += (a.transpose() * a) * (2.0 * y[r]);
            }
            let (nf, na) = (free.len(), active.len());
            let mut kkt = DMatrix::zeros(nf + na, nf + na);
            let mut rhs = DVector::zeros(nf + na);
            for (p, &k) in free.iter().enumerate() {
                for (q, &l) in free.iter().enumerate() {
                    kkt[(p, q)] = hess[(k, l)];
                }
                rhs[p] = -grad[k];
            }
            for (q, &r) in active.iter().enumerate() {
                let dg = rows[r].1.gradient(&x);
                for (p, &k) in free.iter().enumerate() {
                    kkt[(nf + q, p)] = dg[k];
                    kkt[(p, nf + q)] = dg[k];
                }
                rhs[nf + q] = -g[r];
            }
            let step = kkt.svd(true, true).solve(&rhs, 1e-14).ok()?;
            for (p, &k) in free.iter().enumerate() {
                x[k] += step[p];
            }
            for (q, &r) in active.iter().enumerate() {
                y[r] += step[nf + q];
            }
            if step.amax() <= 1e-15 * (1.0 + y_scale) {
                break;
            }
        }
        let x = self.domain.prox(&x);
        let moved = x.iter().zip(x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let keeps_sign = y.iter().all(|v| *v >= -1e-12);
        let y: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
        let better = self.kkt_residual(&x, &y) < self.kkt_residual(x0, y0)
            && self.feasibility(&x) <= self.feasibility(x0).max(1e-13);
        (keeps_sign && better && moved < 1e-4).then_some((x, y))
    }
}

fn add(acc: &mut [f64], w: f64, v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += w * b;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Solves the consensus-enforced problem to tolerance `tol`.
///
/// `max_iters` bounds the averaged primal-dual warm start; the polish phase has
/// its own fixed budget. Reports [`Error::NonConvergence`] when the final point
/// misses either certificate.
pub fn solve_centralized(
    instance: &ProblemInstance,
    consensus: &ConsensusMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<ReferenceSolution> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if consensus.size() != instance.num_agents() {
        return Err(Error::Dimension {
            expected: instance.num_agents(),
            actual: consensus.size(),
        });
    }
    let problem = Centralized::new(instance)?;
    let (mut x, mut y) = problem.warm_start(max_iters.min(5_000));

    let certificate = |x: &[f64], y: &[f64]| problem.feasibility(x).max(problem.kkt_residual(x, y));
    let mut best = (certificate(&x, &y), x.clone(), y.clone());
    let mut penalty = 10.0;
    let mut last_feas = f64::INFINITY;
    for outer in 0..40 {
        let eps = (1e-3 * 0.1f64.powi(outer)).max(1e-9);
        let x_new = problem.inner_solve(&x, &y, penalty, eps, 50_000);
        let g = problem.constraints(&x_new);
        for (yr, gr) in y.iter_mut().zip(&g) {
            *yr = (*yr + penalty * gr).max(0.0);
        }
        let stalled = x_new == x;
        x = x_new;
        let feas = problem.feasibility(&x);
        let cert = certificate(&x, &y);
        if cert < best.0 {
            best = (cert, x.clone(), y.clone());
        }
        if cert <= 1e-2 || stalled {
            if let Some((xn, yn)) = problem.newton_polish(&x, &y) {
                let c = certificate(&xn, &yn);
                if c < best.0 {
                    best = (c, xn, yn);
                }
            }
        }
        if best.0 <= 0.01 * tol || stalled {
            break;
        }
        if feas > 0.25 * last_feas {
            penalty = (penalty * 5.0).min(1e8);
        }
        last_feas = feas;
    }

    let (_, x, y) = best;
    let primal_feasibility = problem.feasibility(&x);
    let dual_residual = problem.kkt_residual(&x, &y);
    if primal_feasibility > tol || dual_residual > tol {
        return Err(Error::NonConvergence(format!(
            "feasibility {primal_feasibility:.3e}, KKT residual {dual_residual:.3e} (tol {tol:.1e})"
        )));
    }
    let lambda_star = recover_consensus_duals(instance, consensus, &x, &y);
    Ok(ReferenceSolution {
        phi_star: problem.objective(&x),
        x_star: x,
        y_star: y,
        lambda_star,
        primal_feasibility,
        dual_residual,
        tol,
        method: "primal-dual warm start, augmented Lagrangian, Newton polish".into(),
        instance_hash: instance.content_hash(),
    })
}

/// Finds `λ` with `(V⊗I)λ = −(∇f_i + Jg_iᵀ y_i + u_i)_i`, splitting the box
/// normal-cone element `u` among agents whose box face is active.
fn recover_consensus_duals(
    instance: &ProblemInstance,
    consensus: &ConsensusMatrix,
    x: &[f64],
    y: &[f64],
) -> Vec<f64> {
    let n = instance.dim();
    let agents = instance.num_agents();
    if agents == 1 {
        return vec![0.0; n];
    }
    let mut r: Vec<Vec<f64>> = instance
        .agents()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut h = a.objective.gradient(x);
            add(&mut h, 1.0, &a.constraint.jacobian_t_mul(x, &y[instance.constraint_range(i)]));
            h.iter().map(|v| -v).collect()
        })
        .collect();
    for k in 0..n {
        // Normal-cone component the agents must jointly supply.
        let need: f64 = r.iter().map(|ri| ri[k]).sum();
        let at_face = |i: usize| {
            let b = &instance.agent(i).regularizer;
            let tol = 1e-12 * (1.0 + x[k].abs());
            if need > 0.0 {
                (x[k] - b.upper()[k]).abs() <= tol
            } else {
                (x[k] - b.lower()[k]).abs() <= tol
            }
        };
        let eligible: Vec<usize> = (0..agents).filter(|&i| at_face(i)).collect();
        if !eligible.is_empty() && need != 0.0 {
            let share = need / eligible.len() as f64;
            for i in eligible {
                r[i][k] -= share;
            }
        }
        let mean = r.iter().map(|ri| ri[k]).sum::<f64>() / agents as f64;
        for ri in &mut r {
            ri[k] -= mean;
        }
    }
    let v = DMatrix::from_fn(agents, agents, |i, j| consensus.get(i, j));
    let eig = SymmetricEigen::new(v);
    let cutoff = 1e-10 * eig.eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let inv = eig.eigenvalues.map(|e| if e.abs() > cutoff { 1.0 / e } else { 0.0 });
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    let mut lambda = vec![0.0; agents * n];
    for k in 0..n {
        let rk = DVector::from_fn(agents, |i, _| r[i][k]);
        let lk = &pinv * rk;
        for i in 0..agents {
            lambda[i * n + k] = lk[i];
        }
    }
    lambda
}
