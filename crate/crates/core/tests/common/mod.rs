//! Independent oracles shared by the integration tests. Nothing here calls the
//! library's own derivative, step or projection code.

#![allow(dead_code)]

use std::sync::Arc;

use adapd::graph::{consensus_matrix, generate_small_world, metropolis_weights, ConsensusMatrix, NetworkGraph};
use adapd::problem::{Ellipsoid, ProblemInstance};

/// `‖A x − b‖² − η²` computed with plain loops.
pub fn ellipsoid_value(e: &Ellipsoid, x: &[f64]) -> f64 {
    let a = e.a();
    let mut s = 0.0;
    for r in 0..a.nrows() {
        let mut row = -e.b()[r];
        for (c, xc) in x.iter().enumerate() {
            row += a[(r, c)] * xc;
        }
        s += row * row;
    }
    s - e.eta() * e.eta()
}

/// `2 Aᵀ(A x − b)` computed with plain loops.
pub fn ellipsoid_gradient(e: &Ellipsoid, x: &[f64]) -> Vec<f64> {
    let a = e.a();
    let mut resid = vec![0.0; a.nrows()];
    for (r, res) in resid.iter_mut().enumerate() {
        *res = -e.b()[r];
        for (c, xc) in x.iter().enumerate() {
            *res += a[(r, c)] * xc;
        }
    }
    (0..x.len())
        .map(|c| 2.0 * (0..a.nrows()).map(|r| a[(r, c)] * resid[r]).sum::<f64>())
        .collect()
}

/// `scale/2 ‖x − center‖²`.
pub fn objective_value(inst: &ProblemInstance, i: usize, x: &[f64]) -> f64 {
    let o = &inst.agent(i).objective;
    0.5 * o.scale() * x.iter().zip(o.center()).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
}

pub fn objective_gradient(inst: &ProblemInstance, i: usize, x: &[f64]) -> Vec<f64> {
    let o = &inst.agent(i).objective;
    x.iter().zip(o.center()).map(|(a, c)| o.scale() * (a - c)).collect()
}

/// Central-difference gradient with step `1e-6 · max(1, |x_k|)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = 1e-6 * x[k].abs().max(1.0);
            p[k] = x[k] + h;
            let up = f(&p);
            p[k] = x[k] - h;
            let down = f(&p);
            p[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖b‖, 1)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let n = b.iter().map(|q| q * q).sum::<f64>().sqrt();
    d / n.max(1.0)
}

pub fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Single-agent primal-dual recursion: `y⁺ = [y + σ(2g(x^k) − g(x^{k−1}))]_+`,
/// then `x⁺ = clip(x − τ(∇f(x) + Jg(x)ᵀ y⁺))`. Returns `(x^k, y^k)` for `k = 1..=iters`.
pub fn single_agent_apd(
    inst: &ProblemInstance,
    tau: f64,
    sigma: f64,
    x0: &[f64],
    iters: usize,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let rows = inst.agent(0).constraint.rows();
    let g = |x: &[f64]| rows.iter().map(|e| ellipsoid_value(e, x)).collect::<Vec<f64>>();
    let mut x = x0.to_vec();
    let mut x_prev = x0.to_vec();
    let mut y = vec![0.0; rows.len()];
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let (gc, gp) = (g(&x), g(&x_prev));
        for r in 0..y.len() {
            y[r] = (y[r] + sigma * (2.0 * gc[r] - gp[r])).max(0.0);
        }
        let mut d = objective_gradient(inst, 0, &x);
        for (r, e) in rows.iter().enumerate() {
            for (dk, gk) in d.iter_mut().zip(ellipsoid_gradient(e, &x)) {
                *dk += y[r] * gk;
            }
        }
        let next: Vec<f64> = x.iter().zip(&d).map(|(a, b)| clamp_unit(a - tau * b)).collect();
        x_prev = std::mem::replace(&mut x, next);
        out.push((x.clone(), y.clone()));
    }
    out
}

/// Consensus-enforced objective `Σ_i f_i(x)` if `x` satisfies every constraint.
pub fn feasible_objective(inst: &ProblemInstance, x: &[f64]) -> Option<f64> {
    for a in inst.agents() {
        if a.constraint.rows().iter().any(|e| ellipsoid_value(e, x) > 0.0) {
            return None;
        }
    }
    Some((0..inst.num_agents()).map(|i| objective_value(inst, i, x)).sum())
}

/// Best feasible value over a uniform grid with spacing `h` on `[lo, hi]^n`, `n ≤ 2`.
pub fn grid_search(inst: &ProblemInstance, lo: f64, hi: f64, h: f64) -> Option<(f64, Vec<f64>)> {
    let steps = ((hi - lo) / h).round() as usize;
    let coord = |s: usize| (lo + s as f64 * h).min(hi);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |x: Vec<f64>| {
        if let Some(v) = feasible_objective(inst, &x) {
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, x));
            }
        }
    };
    match inst.dim() {
        1 => (0..=steps).for_each(|s| consider(vec![coord(s)])),
        2 => {
            for s in 0..=steps {
                for t in 0..=steps {
                    consider(vec![coord(s), coord(t)]);
                }
            }
        }
        d => panic!("grid search supports n <= 2, got {d}"),
    }
    best
}

/// Grid search at spacing `h`, then repeated zooms around the incumbent: a
/// window of ±20 cells searched at a quarter of the spacing, down to `h_min`.
pub fn refined_grid_search(inst: &ProblemInstance, h: f64, h_min: f64) -> Option<(f64, Vec<f64>)> {
    let (mut val, mut x) = grid_search(inst, -1.0, 1.0, h)?;
    let mut h = h;
    while h > h_min {
        let window = 20.0 * h;
        h /= 4.0;
        let steps = (2.0 * window / h).round() as usize;
        let n = x.len();
        let centre = x.clone();
        let coord = |c: f64, s: usize| clamp_unit(c - window + s as f64 * h);
        let mut visit = |p: Vec<f64>| {
            if let Some(v) = feasible_objective(inst, &p) {
                if v < val {
                    val = v;
                    x = p;
                }
            }
        };
        if n == 1 {
            (0..=steps).for_each(|s| visit(vec![coord(centre[0], s)]));
        } else {
            for s in 0..=steps {
                for t in 0..=steps {
                    visit(vec![coord(centre[0], s), coord(centre[1], t)]);
                }
            }
        }
    }
    Some((val, x))
}

/// Dense `V ⊗ I_n`.
pub fn dense_kron(cons: &ConsensusMatrix, n: usize) -> Vec<Vec<f64>> {
    let size = cons.size() * n;
    let mut m = vec![vec![0.0; size]; size];
    for i in 0..cons.size() {
        for j in 0..cons.size() {
            for k in 0..n {
                m[i * n + k][j * n + k] = cons.get(i, j);
            }
        }
    }
    m
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `φ(x) + ⟨g(x), y⟩ + ⟨λ, (V⊗I)x⟩` from dense pieces; `None` outside the unit box.
pub fn dense_lagrangian(
    inst: &ProblemInstance,
    cons: &ConsensusMatrix,
    x: &[f64],
    y: &[f64],
    lambda: &[f64],
) -> Option<f64> {
    if x.iter().any(|v| v.abs() > 1.0) {
        return None;
    }
    let n = inst.dim();
    let mut total = 0.0;
    let mut r = 0;
    for i in 0..inst.num_agents() {
        let xi = &x[i * n..(i + 1) * n];
        total += objective_value(inst, i, xi);
        for e in inst.agent(i).constraint.rows() {
            total += y[r] * ellipsoid_value(e, xi);
            r += 1;
        }
    }
    Some(total + dot(lambda, &mat_vec(&dense_kron(cons, n), x)))
}

/// Small-world graph with Metropolis weights and `α = 1`.
pub fn metropolis_setup(agents: usize, extra: usize, seed: u64) -> (NetworkGraph, Arc<ConsensusMatrix>) {
    let g = if agents == 1 {
        NetworkGraph::new(1, &[]).unwrap()
    } else if agents == 2 {
        NetworkGraph::new(2, &[(0, 1)]).unwrap()
    } else {
        generate_small_world(agents, extra, seed).unwrap()
    };
    let w = metropolis_weights(&g).unwrap();
    let v = consensus_matrix(&w, 1.0).unwrap();
    (g, Arc::new(v))
}
