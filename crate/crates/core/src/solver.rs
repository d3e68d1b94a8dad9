//! Asynchronous distributed accelerated primal-dual iteration.
//!
//! Every event wakes one agent `i`, which performs, in order,
//!
//! ```text
//! y_i ← max{0, y_i + 2Nσ_i (g_i(x_i^k) − (2N−1)/(2N) g_i(x_i^{k−1}))}
//! λ_i ← λ_i + γ_i Σ_{j ∈ N_i ∪ {i}} v_ij (2N x_j^k − (2N−1) x_j^{k−1})
//! x_i ← prox_{τ_i ρ_i}(x_i − τ_i (∇f_i(x_i) + Jg_i(x_i)ᵀ y_i + v_ii λ_i + Σ_{j ∈ N_i} v_ij λ_j))
//! ```
//!
//! and broadcasts once. Superscripts refer to the global event counter: `x^{k−1}`
//! differs from `x^k` only in the block of the agent that fired at event `k−1`,
//! so the previous iterate of agent `j` is its pre-update value when `j` was the
//! last agent awake and its current value otherwise.
//!
//! The synchronous mode updates every agent per round from round-start values
//! with the single-agent momentum pattern `2·(·)^k − (·)^{k−1}`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ConsensusMatrix;
use crate::problem::{LocalProblem, ProblemInstance};

/// Step size substituted when a bound's denominator vanishes.
pub const DEFAULT_STEP_CAP: f64 = 1e3;

/// Per-agent primal and dual step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub tau: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    pub safety_factor: f64,
    pub dual_bound: f64,
    pub cap: f64,
}

/// Upper bounds `(τ̂_i, σ̂_i, γ̂_i)` for agent `i` at unit safety factor.
fn step_bounds(local: &LocalProblem, delta: f64, dual_bound: f64, cap: f64) -> (f64, f64, f64) {
    let c = local.constraint.lipschitz_value();
    let tau_den = 2.0 * (c + delta) + local.objective.lipschitz_grad() + dual_bound * local.constraint.lipschitz_jac();
    let inv = |den: f64| if den > 0.0 { 1.0 / den } else { cap };
    (inv(tau_den), inv(3.0 * c), inv(3.0 * delta))
}

fn effective_delta(consensus: &ConsensusMatrix, i: usize) -> f64 {
    if consensus.lambda_updates_enabled() {
        consensus.delta(i)
    } else {
        0.0
    }
}

impl StepSizes {
    /// Sets every step size to `safety_factor` times its bound.
    pub fn compute(
        instance: &ProblemInstance,
        consensus: &ConsensusMatrix,
        dual_bound: f64,
        safety_factor: f64,
    ) -> Result<Self> {
        Self::compute_with_cap(instance, consensus, dual_bound, safety_factor, DEFAULT_STEP_CAP)
    }

    pub fn compute_with_cap(
        instance: &ProblemInstance,
        consensus: &ConsensusMatrix,
        dual_bound: f64,
        safety_factor: f64,
        cap: f64,
    ) -> Result<Self> {
        check_step_params(instance, consensus, dual_bound, safety_factor, cap)?;
        let n = instance.num_agents();
        let (mut tau, mut sigma, mut gamma) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for (i, local) in instance.agents().iter().enumerate() {
            let (t, s, g) = step_bounds(local, effective_delta(consensus, i), dual_bound, cap);
            tau.push(safety_factor * t);
            sigma.push(safety_factor * s);
            gamma.push(safety_factor * g);
        }
        let steps = StepSizes {
            tau,
            sigma,
            gamma,
            safety_factor,
            dual_bound,
            cap,
        };
        steps.certify(instance, consensus)?;
        Ok(steps)
    }

    /// Checks the three step-size inequalities for every agent.
    pub fn certify(&self, instance: &ProblemInstance, consensus: &ConsensusMatrix) -> Result<()> {
        check_step_params(instance, consensus, self.dual_bound, self.safety_factor, self.cap)?;
        let n = instance.num_agents();
        for (name, v) in [("tau", &self.tau), ("sigma", &self.sigma), ("gamma", &self.gamma)] {
            if v.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: v.len(),
                });
            }
            if let Some(i) = v.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::Invariant(format!("{name}[{i}] = {} is not positive", v[i])));
            }
        }
        // Relative slack for the rounding in `safety_factor * bound`.
        let slack = 1.0 + 4.0 * f64::EPSILON;
        for (i, local) in instance.agents().iter().enumerate() {
            let (t, s, g) = step_bounds(local, effective_delta(consensus, i), self.dual_bound, self.cap);
            let sf = self.safety_factor;
            if self.tau[i] > sf * t * slack {
                return Err(Error::Invariant(format!("tau[{i}] = {} exceeds {}", self.tau[i], sf * t)));
            }
            if self.sigma[i] > sf * s * slack {
                return Err(Error::Invariant(format!("sigma[{i}] = {} exceeds {}", self.sigma[i], sf * s)));
            }
            if self.gamma[i] > sf * g * slack {
                return Err(Error::Invariant(format!("gamma[{i}] = {} exceeds {}", self.gamma[i], sf * g)));
            }
        }
        Ok(())
    }
}

fn check_step_params(
    instance: &ProblemInstance,
    consensus: &ConsensusMatrix,
    dual_bound: f64,
    safety_factor: f64,
    cap: f64,
) -> Result<()> {
    if !(dual_bound >= 0.0 && dual_bound.is_finite()) {
        return Err(Error::InvalidParameter(format!("dual bound B must be >= 0, got {dual_bound}")));
    }
    if !(safety_factor > 0.0 && safety_factor <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "safety factor must lie in (0, 1], got {safety_factor}"
        )));
    }
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::InvalidParameter(format!("step cap must be positive, got {cap}")));
    }
    if consensus.size() != instance.num_agents() {
        return Err(Error::Dimension {
            expected: instance.num_agents(),
            actual: consensus.size(),
        });
    }
    Ok(())
}

/// Local iterates held by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: Vec<f64>,
    /// Value of `x` before this agent's most recent update.
    pub x_prev: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl AgentState {
    fn digest_into(&self, h: &mut impl Hasher) {
        for v in [&self.x, &self.x_prev, &self.y, &self.lambda] {
            for e in v.iter() {
                e.to_bits().hash(h);
            }
        }
    }
}

/// Dual extrapolation: `max{0, y + 2Nσ(g^k − (2N−1)/(2N) g^{k−1})}`.
///
/// `momentum_n` is the network size for the asynchronous method and 1 for the
/// synchronous pattern.
pub fn step_dual_y(sigma: f64, momentum_n: usize, g_cur: &[f64], g_prev: &[f64], y: &[f64]) -> Vec<f64> {
    let two_n = 2.0 * momentum_n as f64;
    let ratio = (two_n - 1.0) / two_n;
    y.iter()
        .zip(g_cur.iter().zip(g_prev))
        .map(|(yk, (gc, gp))| (yk + two_n * sigma * (gc - ratio * gp)).max(0.0))
        .collect()
}

/// The iterate pair `(x_j^k, x_j^{k−1})` of one agent in `N_i ∪ {i}`.
#[derive(Debug, Clone, Copy)]
pub struct NeighborIterates<'a> {
    pub agent: usize,
    pub x_cur: &'a [f64],
    pub x_prev: &'a [f64],
}

fn check_coverage(agent: usize, consensus: &ConsensusMatrix, mut seen: Vec<usize>, include_self: bool) -> Result<()> {
    seen.sort_unstable();
    let mut expected: Vec<usize> = consensus.neighbors(agent).to_vec();
    if include_self {
        expected.push(agent);
    }
    expected.sort_unstable();
    if seen != expected {
        return Err(Error::Contract(format!(
            "agent {agent}: neighbor data covers {seen:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

/// Consensus dual step: `λ_i + γ_i Σ_{j∈N_i∪{i}} v_ij (2N x_j^k − (2N−1) x_j^{k−1})`.
pub fn step_dual_lambda(
    agent: usize,
    gamma: f64,
    momentum_n: usize,
    consensus: &ConsensusMatrix,
    data: &[NeighborIterates<'_>],
    lambda: &[f64],
) -> Result<Vec<f64>> {
    check_coverage(agent, consensus, data.iter().map(|d| d.agent).collect(), true)?;
    let two_n = 2.0 * momentum_n as f64;
    let mut drift = vec![0.0; lambda.len()];
    for d in data {
        let v = consensus.get(agent, d.agent);
        for (acc, (xc, xp)) in drift.iter_mut().zip(d.x_cur.iter().zip(d.x_prev)) {
            *acc += v * (two_n * xc - (two_n - 1.0) * xp);
        }
    }
    Ok(lambda.iter().zip(&drift).map(|(l, d)| l + gamma * d).collect())
}

/// Primal proximal-gradient step for agent `i`.
///
/// `neighbor_duals` must hold `λ_j^k` for exactly the neighbors `j ∈ N_i`.
#[allow(clippy::too_many_arguments)]
pub fn step_primal_x(
    agent: usize,
    tau: f64,
    local: &LocalProblem,
    x: &[f64],
    y_new: &[f64],
    lambda_new: &[f64],
    neighbor_duals: &[(usize, &[f64])],
    consensus: &ConsensusMatrix,
) -> Result<Vec<f64>> {
    check_coverage(agent, consensus, neighbor_duals.iter().map(|d| d.0).collect(), false)?;
    let mut direction = local.objective.gradient(x);
    for (d, jy) in direction.iter_mut().zip(local.constraint.jacobian_t_mul(x, y_new)) {
        *d += jy;
    }
    let v_ii = consensus.get(agent, agent);
    for (d, l) in direction.iter_mut().zip(lambda_new) {
        *d += v_ii * l;
    }
    for &(j, lambda_j) in neighbor_duals {
        let v = consensus.get(agent, j);
        for (d, l) in direction.iter_mut().zip(lambda_j) {
            *d += v * l;
        }
    }
    let mut out: Vec<f64> = x.iter().zip(&direction).map(|(xk, d)| xk - tau * d).collect();
    local.regularizer.prox_in_place(&mut out);
    Ok(out)
}

/// How the next awake agent is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// Discrete uniform draw, the embedded chain of i.i.d. exponential clocks.
    Uniform,
    /// Explicit continuous-time clocks with the given rate.
    ExponentialClocks { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Schedule {
    Async { activation: Activation },
    Sync,
}

impl Schedule {
    pub const ASYNC: Schedule = Schedule::Async {
        activation: Activation::Uniform,
    };

    pub fn label(&self) -> &'static str {
        match self {
            Schedule::Async { .. } => "async",
            Schedule::Sync => "sync",
        }
    }
}

/// Starting point `(x⁰, y⁰, λ⁰)`, stacked over agents; `x^{−1} = x⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl InitialPoint {
    /// All-zero start.
    pub fn zeros(instance: &ProblemInstance) -> Self {
        let nn = instance.dim() * instance.num_agents();
        InitialPoint {
            x: vec![0.0; nn],
            y: vec![0.0; instance.num_constraints()],
            lambda: vec![0.0; nn],
        }
    }

    fn validate(&self, instance: &ProblemInstance) -> Result<()> {
        let nn = instance.dim() * instance.num_agents();
        for (got, want) in [
            (self.x.len(), nn),
            (self.y.len(), instance.num_constraints()),
            (self.lambda.len(), nn),
        ] {
            if got != want {
                return Err(Error::Dimension {
                    expected: want,
                    actual: got,
                });
            }
        }
        if self.y.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("initial y must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Weighted average of iterates `1..=K`: unit weights before the horizon,
/// `terminal_weight` on iterate `K`, normalized by the weight total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicAccumulator {
    horizon: u64,
    terminal_weight: f64,
    sum_x: Vec<f64>,
    sum_y: Vec<f64>,
    sum_lambda: Vec<f64>,
    last_k: u64,
}

/// Averaged stacked point `(x̄, ȳ, λ̄)` for horizon `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    pub horizon: u64,
}

impl ErgodicAccumulator {
    /// Accumulator for horizon `K`; the asynchronous method uses `terminal_weight = N`.
    pub fn new(horizon: u64, terminal_weight: f64, x_len: usize, y_len: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("ergodic horizon must be >= 1".into()));
        }
        if !(terminal_weight >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "terminal weight must be >= 1, got {terminal_weight}"
            )));
        }
        Ok(ErgodicAccumulator {
            horizon,
            terminal_weight,
            sum_x: vec![0.0; x_len],
            sum_y: vec![0.0; y_len],
            sum_lambda: vec![0.0; x_len],
            last_k: 0,
        })
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn last_k(&self) -> u64 {
        self.last_k
    }

    pub fn weight(&self, k: u64) -> f64 {
        if k == self.horizon {
            self.terminal_weight
        } else {
            1.0
        }
    }

    /// Adds iterate `k`; iterates must arrive in order starting at `k = 1`.
    pub fn accumulate(&mut self, x: &[f64], y: &[f64], lambda: &[f64], k: u64) -> Result<()> {
        if k == 0 {
            return Err(Error::Contract("ergodic sums start at k = 1".into()));
        }
        if k != self.last_k + 1 || k > self.horizon {
            return Err(Error::Contract(format!(
                "ergodic accumulate out of order: got k={k} after {} (horizon {})",
                self.last_k, self.horizon
            )));
        }
        let w = self.weight(k);
        axpy(&mut self.sum_x, w, x)?;
        axpy(&mut self.sum_y, w, y)?;
        axpy(&mut self.sum_lambda, w, lambda)?;
        self.last_k = k;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.last_k == self.horizon
    }

    fn total_weight(&self, k: u64) -> f64 {
        (k - 1) as f64 + self.terminal_weight
    }

    pub fn finalize(&self) -> Result<ErgodicPoint> {
        if !self.is_complete() {
            return Err(Error::Contract(format!(
                "ergodic average finalized at k={} before horizon {}",
                self.last_k, self.horizon
            )));
        }
        let scale = 1.0 / self.total_weight(self.horizon);
        Ok(ErgodicPoint {
            x: self.sum_x.iter().map(|v| v * scale).collect(),
            y: self.sum_y.iter().map(|v| v * scale).collect(),
            lambda: self.sum_lambda.iter().map(|v| v * scale).collect(),
            horizon: self.horizon,
        })
    }

    /// The ergodic point for horizon `last_k + 1`, taking the given iterate as terminal.
    pub fn preview(&self, x: &[f64], y: &[f64], lambda: &[f64]) -> ErgodicPoint {
        let k = self.last_k + 1;
        let w = self.terminal_weight;
        let scale = 1.0 / self.total_weight(k);
        let mix = |sum: &[f64], it: &[f64]| sum.iter().zip(it).map(|(s, v)| (s + w * v) * scale).collect();
        ErgodicPoint {
            x: mix(&self.sum_x, x),
            y: mix(&self.sum_y, y),
            lambda: mix(&self.sum_lambda, lambda),
            horizon: k,
        }
    }
}

fn axpy(acc: &mut [f64], w: f64, v: &[f64]) -> Result<()> {
    if acc.len() != v.len() {
        return Err(Error::Dimension {
            expected: acc.len(),
            actual: v.len(),
        });
    }
    for (a, b) in acc.iter_mut().zip(v) {
        *a += w * b;
    }
    Ok(())
}

/// Which agents changed during one event.
#[derive(Debug, Clone, PartialEq)]
pub enum StepReport {
    Awake(usize),
    Round,
}

/// Full mutable state of a run: agent iterates, counters, scheduler and ergodic sums.
#[derive(Debug, Clone)]
pub struct Solver {
    instance: Arc<ProblemInstance>,
    consensus: Arc<ConsensusMatrix>,
    steps: StepSizes,
    schedule: Schedule,
    agents: Vec<AgentState>,
    iteration: u64,
    communications: u64,
    last_awake: Option<usize>,
    rng: ChaCha8Rng,
    clocks: Vec<f64>,
    sim_time: f64,
    ergodic: ErgodicAccumulator,
}

impl Solver {
    /// Prepares a run of `horizon` events (asynchronous) or rounds (synchronous).
    pub fn new(
        instance: Arc<ProblemInstance>,
        consensus: Arc<ConsensusMatrix>,
        steps: StepSizes,
        schedule: Schedule,
        horizon: u64,
        init: &InitialPoint,
        rng_seed: u64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("iteration count K must be >= 1".into()));
        }
        steps.certify(&instance, &consensus)?;
        init.validate(&instance)?;
        let n = instance.dim();
        let agents: Vec<AgentState> = (0..instance.num_agents())
            .map(|i| {
                let x = init.x[i * n..(i + 1) * n].to_vec();
                AgentState {
                    x_prev: x.clone(),
                    x,
                    y: init.y[instance.constraint_range(i)].to_vec(),
                    lambda: init.lambda[i * n..(i + 1) * n].to_vec(),
                }
            })
            .collect();
        let terminal_weight = match schedule {
            Schedule::Async { .. } => instance.num_agents() as f64,
            Schedule::Sync => 1.0,
        };
        let ergodic = ErgodicAccumulator::new(horizon, terminal_weight, init.x.len(), init.y.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let clocks = match schedule {
            Schedule::Async {
                activation: Activation::ExponentialClocks { rate },
            } => {
                let exp = Exp::new(rate).map_err(|e| Error::InvalidParameter(format!("clock rate: {e}")))?;
                (0..agents.len()).map(|_| exp.sample(&mut rng)).collect()
            }
            _ => Vec::new(),
        };
        Ok(Solver {
            instance,
            consensus,
            steps,
            schedule,
            agents,
            iteration: 0,
            communications: 0,
            last_awake: None,
            rng,
            clocks,
            sim_time: 0.0,
            ergodic,
        })
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    pub fn consensus(&self) -> &ConsensusMatrix {
        &self.consensus
    }

    pub fn steps(&self) -> &StepSizes {
        &self.steps
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn communications(&self) -> u64 {
        self.communications
    }

    pub fn horizon(&self) -> u64 {
        self.ergodic.horizon()
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.horizon()
    }

    /// Simulated wall time (continuous-time clocks only).
    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    fn momentum_n(&self) -> usize {
        match self.schedule {
            Schedule::Async { .. } => self.agents.len(),
            Schedule::Sync => 1,
        }
    }

    /// Previous global iterate of agent `j`.
    fn prev_x(&self, j: usize) -> &[f64] {
        match self.schedule {
            Schedule::Async { .. } if self.last_awake != Some(j) => &self.agents[j].x,
            _ => &self.agents[j].x_prev,
        }
    }

    /// Picks the next agent to wake.
    pub fn draw_awake_agent(&mut self) -> usize {
        let n = self.agents.len();
        match self.schedule {
            Schedule::Async {
                activation: Activation::ExponentialClocks { rate },
            } => {
                let (i, t) = self
                    .clocks
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::INFINITY), |best, (i, t)| if t < best.1 { (i, t) } else { best });
                self.sim_time = t;
                let exp = Exp::new(rate).expect("rate validated at construction");
                self.clocks[i] = t + exp.sample(&mut self.rng);
                i
            }
            _ => {
                if n == 1 {
                    0
                } else {
                    self.rng.gen_range(0..n)
                }
            }
        }
    }

    /// Computes the new `(y_i, λ_i, x_i)` of agent `i` from the current stored state.
    fn agent_update(&self, i: usize) -> Result<AgentState> {
        let local = self.instance.agent(i);
        let state = &self.agents[i];
        let momentum = self.momentum_n();
        let g_cur = local.constraint.value(&state.x);
        let prev = self.prev_x(i);
        let g_prev = if prev == state.x.as_slice() {
            g_cur.clone()
        } else {
            local.constraint.value(prev)
        };
        let y = step_dual_y(self.steps.sigma[i], momentum, &g_cur, &g_prev, &state.y);

        let lambda = if self.consensus.lambda_updates_enabled() {
            let data: Vec<NeighborIterates<'_>> = std::iter::once(i)
                .chain(self.consensus.neighbors(i).iter().copied())
                .map(|j| NeighborIterates {
                    agent: j,
                    x_cur: &self.agents[j].x,
                    x_prev: self.prev_x(j),
                })
                .collect();
            step_dual_lambda(i, self.steps.gamma[i], momentum, &self.consensus, &data, &state.lambda)?
        } else {
            state.lambda.clone()
        };

        let duals: Vec<(usize, &[f64])> = self
            .consensus
            .neighbors(i)
            .iter()
            .map(|&j| (j, self.agents[j].lambda.as_slice()))
            .collect();
        let x = step_primal_x(i, self.steps.tau[i], local, &state.x, &y, &lambda, &duals, &self.consensus)?;
        Ok(AgentState {
            x_prev: state.x.clone(),
            x,
            y,
            lambda,
        })
    }

    /// Executes one event (asynchronous) or one round (synchronous).
    pub fn step(&mut self) -> Result<StepReport> {
        if self.is_finished() {
            return Err(Error::Contract(format!("run already reached its horizon {}", self.horizon())));
        }
        if self.iteration > 0 {
            let (x, y, lambda) = self.stacked();
            self.ergodic.accumulate(&x, &y, &lambda, self.iteration)?;
        }
        let report = match self.schedule {
            Schedule::Async { .. } => {
                let i = self.draw_awake_agent();
                let next = self.agent_update(i)?;
                self.agents[i] = next;
                self.last_awake = Some(i);
                self.communications += 1;
                StepReport::Awake(i)
            }
            Schedule::Sync => {
                let next = (0..self.agents.len())
                    .map(|i| self.agent_update(i))
                    .collect::<Result<Vec<_>>>()?;
                self.agents = next;
                self.communications += self.agents.len() as u64;
                StepReport::Round
            }
        };
        self.iteration += 1;
        if self.iteration == self.horizon() {
            let (x, y, lambda) = self.stacked();
            self.ergodic.accumulate(&x, &y, &lambda, self.iteration)?;
        }
        Ok(report)
    }

    /// Current stacked `(x, y, λ)`.
    pub fn stacked(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x = self.agents.iter().flat_map(|a| a.x.iter().copied()).collect();
        let y = self.agents.iter().flat_map(|a| a.y.iter().copied()).collect();
        let lambda = self.agents.iter().flat_map(|a| a.lambda.iter().copied()).collect();
        (x, y, lambda)
    }

    /// Ergodic point with the current iterate as terminal, i.e. for horizon `k = iteration`.
    pub fn ergodic_now(&self) -> Result<ErgodicPoint> {
        if self.iteration == 0 {
            return Err(Error::Contract("no iterates yet".into()));
        }
        if self.ergodic.is_complete() {
            return self.ergodic.finalize();
        }
        let (x, y, lambda) = self.stacked();
        Ok(self.ergodic.preview(&x, &y, &lambda))
    }

    pub fn finalize(&self) -> Result<ErgodicPoint> {
        self.ergodic.finalize()
    }

    /// Hash of agent `i`'s state bits.
    pub fn agent_digest(&self, i: usize) -> u64 {
        let mut h = DefaultHasher::new();
        self.agents[i].digest_into(&mut h);
        h.finish()
    }

    /// Dual nonnegativity and box membership.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, a) in self.agents.iter().enumerate() {
            if a.y.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Invariant(format!("agent {i} has a negative dual y")));
            }
            let domain = &self.instance.agent(i).regularizer;
            let touched = self.iteration > 0 && (a.x != a.x_prev || matches!(self.schedule, Schedule::Sync));
            if touched && !(domain.contains(&a.x) && domain.contains(&a.x_prev)) {
                return Err(Error::Invariant(format!("agent {i} left its domain box")));
            }
            if [&a.x, &a.y, &a.lambda].iter().any(|v| v.iter().any(|e| !e.is_finite())) {
                return Err(Error::Invariant(format!("agent {i} has non-finite state")));
            }
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Checkpointing

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_MAGIC.to_string(),
            instance_hash: self.instance.content_hash(),
            schedule: self.schedule,
            steps: self.steps.clone(),
            iteration: self.iteration,
            communications: self.communications,
            last_awake: self.last_awake,
            rng_seed: hex::encode(self.rng.get_seed()),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            clocks: self.clocks.clone(),
            sim_time: self.sim_time,
            agents: self.agents.clone(),
            ergodic: self.ergodic.clone(),
        }
    }

    /// Rebuilds a solver from a checkpoint taken on the same instance.
    pub fn restore(
        instance: Arc<ProblemInstance>,
        consensus: Arc<ConsensusMatrix>,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        if checkpoint.format != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", checkpoint.format)));
        }
        if checkpoint.instance_hash != instance.content_hash() {
            return Err(Error::Format("checkpoint was taken on a different instance".into()));
        }
        checkpoint.steps.certify(&instance, &consensus)?;
        if checkpoint.agents.len() != instance.num_agents() {
            return Err(Error::Dimension {
                expected: instance.num_agents(),
                actual: checkpoint.agents.len(),
            });
        }
        let seed_bytes = hex::decode(&checkpoint.rng_seed).map_err(|e| Error::Format(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = seed_bytes
            .try_into()
            .map_err(|_| Error::Format("rng seed must be 32 bytes".into()))?;
        let word_pos: u128 = checkpoint
            .rng_word_pos
            .parse()
            .map_err(|e| Error::Format(format!("rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(checkpoint.rng_stream);
        rng.set_word_pos(word_pos);
        Ok(Solver {
            instance,
            consensus,
            steps: checkpoint.steps,
            schedule: checkpoint.schedule,
            agents: checkpoint.agents,
            iteration: checkpoint.iteration,
            communications: checkpoint.communications,
            last_awake: checkpoint.last_awake,
            rng,
            clocks: checkpoint.clocks,
            sim_time: checkpoint.sim_time,
            ergodic: checkpoint.ergodic,
        })
    }
}

pub const CHECKPOINT_MAGIC: &str = "ADAPD-CKPT v1";

/// Serializable snapshot of a [`Solver`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub instance_hash: String,
    pub schedule: Schedule,
    pub steps: StepSizes,
    pub iteration: u64,
    pub communications: u64,
    pub last_awake: Option<usize>,
    pub rng_seed: String,
    pub rng_stream: u64,
    pub rng_word_pos: String,
    pub clocks: Vec<f64>,
    pub sim_time: f64,
    pub agents: Vec<AgentState>,
    pub ergodic: ErgodicAccumulator,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))
    }
}
