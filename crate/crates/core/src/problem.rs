//! Per-agent problem data and the localization instance generator.
//!
//! Each agent `i` owns a smooth objective `f_i`, a vector constraint `g_i(x) ≤ 0`
//! built from ellipsoidal rows `‖A x − b‖² − η² ≤ 0`, and a box indicator `ρ_i`
//! whose proximal map is coordinatewise clamping.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Relative inflation of the domain box used when bounding constraint constants.
pub const CONSTANT_BOX_INFLATION: f64 = 0.1;

const POWER_ITERATION_MAX_STEPS: usize = 10_000;
const POWER_ITERATION_TOL: f64 = 1e-8;

/// Finite box `[lower, upper]`; its indicator is the regularizer `ρ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidParameter("box must have positive dimension".into()));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) {
                return Err(Error::InvalidParameter(format!("box coordinate {k} is unbounded")));
            }
            if l > u {
                return Err(Error::InvalidParameter(format!(
                    "box coordinate {k} has lower {l} > upper {u}"
                )));
            }
        }
        Ok(DomainBox { lower, upper })
    }

    /// The cube `[-half_width, half_width]^dim`.
    pub fn cube(dim: usize, half_width: f64) -> Result<Self> {
        DomainBox::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// `prox_{tρ}(w)`; for an indicator this is the projection, independent of `t`.
    pub fn prox(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    pub fn prox_in_place(&self, w: &mut [f64]) {
        for (v, (l, u)) in w.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Regularizer value: 0 inside the box, `+∞` outside.
    pub fn value(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    /// Largest Euclidean norm attained over the box.
    pub fn max_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l.abs().max(u.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Same center, half-widths scaled by `1 + fraction`.
    pub fn inflated(&self, fraction: f64) -> DomainBox {
        let c = self.center();
        let h = self.half_widths();
        let grow = 1.0 + fraction;
        DomainBox {
            lower: c.iter().zip(&h).map(|(c, h)| c - grow * h).collect(),
            upper: c.iter().zip(&h).map(|(c, h)| c + grow * h).collect(),
        }
    }
}

/// Clamps `w` coordinatewise into `[lower, upper]`.
pub fn prox_box(w: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    if w.len() != lower.len() {
        return Err(Error::Dimension {
            expected: lower.len(),
            actual: w.len(),
        });
    }
    Ok(DomainBox::new(lower.to_vec(), upper.to_vec())?.prox(w))
}

/// `f(x) = ½ s ‖x − c‖²`, gradient Lipschitz with constant `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothObjective {
    scale: f64,
    center: Vec<f64>,
}

impl SmoothObjective {
    pub fn new(scale: f64, center: Vec<f64>) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("objective scale must be >= 0, got {scale}")));
        }
        Ok(SmoothObjective { scale, center })
    }

    /// `½‖x‖²`.
    pub fn half_squared_norm(dim: usize) -> Self {
        SmoothObjective {
            scale: 1.0,
            center: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.scale * x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(a, c)| self.scale * (a - c)).collect()
    }

    pub fn lipschitz_grad(&self) -> f64 {
        self.scale
    }
}

/// One scalar constraint `‖A x − b‖² − η² ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    a: DMatrix<f64>,
    b: DVector<f64>,
    eta: f64,
}

impl Ellipsoid {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, eta: f64) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension {
                expected: a.nrows(),
                actual: b.len(),
            });
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be >= 0, got {eta}")));
        }
        Ok(Ellipsoid { a, b, eta })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn residual(&self, x: &[f64]) -> DVector<f64> {
        &self.a * DVector::from_column_slice(x) - &self.b
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.residual(x).norm_squared() - self.eta * self.eta
    }

    /// `∇g(x) = 2 Aᵀ(Ax − b)`.
    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.a.tr_mul(&self.residual(x)) * 2.0
    }
}

/// Stacked constraint block `g_i : R^n → R^{m_i}` with its Lipschitz constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    rows: Vec<Ellipsoid>,
    lipschitz_value: f64,
    lipschitz_jac: f64,
}

impl ConstraintBlock {
    /// Computes constants over `domain` inflated by [`CONSTANT_BOX_INFLATION`].
    pub fn new(rows: Vec<Ellipsoid>, domain: &DomainBox) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("constraint block needs at least one row".into()));
        }
        let safe_box = domain.inflated(CONSTANT_BOX_INFLATION);
        let mut c2 = 0.0;
        let mut l2 = 0.0;
        for row in &rows {
            if row.a.ncols() != domain.dim() {
                return Err(Error::Dimension {
                    expected: domain.dim(),
                    actual: row.a.ncols(),
                });
            }
            let (c, l) = constraint_constants(&row.a, &row.b, &safe_box)?;
            c2 += c * c;
            l2 += l * l;
        }
        Ok(ConstraintBlock {
            rows,
            lipschitz_value: c2.sqrt(),
            lipschitz_jac: l2.sqrt(),
        })
    }

    pub fn rows(&self) -> &[Ellipsoid] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// `C_i`.
    pub fn lipschitz_value(&self) -> f64 {
        self.lipschitz_value
    }

    /// `L_i^g`.
    pub fn lipschitz_jac(&self) -> f64 {
        self.lipschitz_jac
    }

    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.value(x)).collect()
    }

    /// Jacobian as an `m_i × n` matrix.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.rows.len(), x.len());
        for (r, row) in self.rows.iter().enumerate() {
            jac.set_row(r, &row.gradient(x).transpose());
        }
        jac
    }

    /// `Jg(x)ᵀ y`.
    pub fn jacobian_t_mul(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (row, &yr) in self.rows.iter().zip(y) {
            if yr == 0.0 {
                continue;
            }
            for (o, gk) in out.iter_mut().zip(row.gradient(x).iter()) {
                *o += yr * gk;
            }
        }
        out
    }
}

/// Largest singular value of `a` by power iteration on `AᵀA`.
pub fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let n = a.ncols();
    let mut v = DVector::from_fn(n, |j, _| 1.0 + 0.5 * ((j + 1) as f64).sin());
    v /= v.norm();
    for _ in 0..POWER_ITERATION_MAX_STEPS {
        let w = a.tr_mul(&(a * &v));
        let rayleigh = v.dot(&w);
        let residual = (&w - &v * rayleigh).norm();
        let norm = w.norm();
        if norm == 0.0 {
            // Start vector in the null space; a nonzero A always has a column to restart from.
            let col = a.column_iter().position(|c| c.norm() > 0.0).unwrap_or(0);
            v = DVector::from_fn(n, |j, _| if j == col { 1.0 } else { 0.0 });
            continue;
        }
        v = w / norm;
        if residual <= POWER_ITERATION_TOL * rayleigh {
            // Inflate slightly so the estimate is a safe upper bound.
            return Ok(norm.max(rayleigh).sqrt() * (1.0 + 1e-6));
        }
    }
    Err(Error::Estimation(POWER_ITERATION_MAX_STEPS))
}

/// Lipschitz constants `(C, L^g)` of `g(x) = ‖Ax − b‖² − η²` over `domain`.
///
/// `L^g = 2 s_max(A)²` and `C = 2 s_max(A) · max_{x∈box} ‖Ax − b‖`, where the
/// inner maximum is replaced by the smaller of two valid upper bounds.
pub fn constraint_constants(a: &DMatrix<f64>, b: &DVector<f64>, domain: &DomainBox) -> Result<(f64, f64)> {
    if a.ncols() != domain.dim() {
        return Err(Error::Dimension {
            expected: domain.dim(),
            actual: a.ncols(),
        });
    }
    let s = spectral_norm(a)?;
    if s == 0.0 {
        return Ok((0.0, 0.0));
    }
    let global = s * domain.max_norm() + b.norm();
    // |A x − b| ≤ |A c − b| + |A| h coordinatewise, for x = c + d with |d| ≤ h.
    let c = DVector::from_vec(domain.center());
    let h = DVector::from_vec(domain.half_widths());
    let shift = (a * c - b).abs();
    let spread = a.abs() * h;
    let local = (shift + spread).norm();
    Ok((2.0 * s * global.min(local), 2.0 * s * s))
}

/// The data owned by a single agent.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalProblem {
    pub objective: SmoothObjective,
    pub constraint: ConstraintBlock,
    pub regularizer: DomainBox,
}

impl LocalProblem {
    pub fn new(objective: SmoothObjective, rows: Vec<Ellipsoid>, regularizer: DomainBox) -> Result<Self> {
        if objective.dim() != regularizer.dim() {
            return Err(Error::Dimension {
                expected: regularizer.dim(),
                actual: objective.dim(),
            });
        }
        let constraint = ConstraintBlock::new(rows, &regularizer)?;
        Ok(LocalProblem {
            objective,
            constraint,
            regularizer,
        })
    }

    pub fn dim(&self) -> usize {
        self.regularizer.dim()
    }

    /// `φ_i(x) = f_i(x) + ρ_i(x)`.
    pub fn phi(&self, x: &[f64]) -> f64 {
        self.objective.value(x) + self.regularizer.value(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub generator: String,
    pub seed: Option<u64>,
    pub noise_std: Option<f64>,
    pub rows_per_agent: Option<usize>,
    pub ground_truth: Option<Vec<f64>>,
}

impl InstanceMeta {
    pub fn custom(name: &str) -> Self {
        InstanceMeta {
            generator: name.to_string(),
            seed: None,
            noise_std: None,
            rows_per_agent: None,
            ground_truth: None,
        }
    }
}

/// The stacked problem over all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    dim: usize,
    agents: Vec<LocalProblem>,
    offsets: Vec<usize>,
    meta: InstanceMeta,
}

/// Result of evaluating the stacked objective and constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedEval {
    /// `Σ φ_i(x_i)`, `+∞` when some block is outside its box.
    pub phi: f64,
    /// False when any block left its domain box.
    pub in_domain: bool,
    pub g: Vec<f64>,
}

impl ProblemInstance {
    pub fn new(agents: Vec<LocalProblem>, meta: InstanceMeta) -> Result<Self> {
        let dim = agents
            .first()
            .ok_or_else(|| Error::InvalidParameter("instance needs at least one agent".into()))?
            .dim();
        let mut offsets = Vec::with_capacity(agents.len() + 1);
        offsets.push(0);
        for a in &agents {
            if a.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: a.dim(),
                });
            }
            offsets.push(offsets.last().unwrap() + a.constraint.num_rows());
        }
        Ok(ProblemInstance {
            dim,
            agents,
            offsets,
            meta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[LocalProblem] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &LocalProblem {
        &self.agents[i]
    }

    pub fn meta(&self) -> &InstanceMeta {
        &self.meta
    }

    /// Total constraint count `m = Σ m_i`.
    pub fn num_constraints(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Range of agent `i`'s constraints within a stacked dual vector.
    pub fn constraint_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[i * self.dim..(i + 1) * self.dim]
    }

    /// Evaluates `φ(x) = Σ φ_i(x_i)` and `g(x) = [g_i(x_i)]` on a stacked point.
    pub fn eval_stacked(&self, x: &[f64]) -> Result<StackedEval> {
        let expected = self.dim * self.num_agents();
        if x.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: x.len(),
            });
        }
        let mut phi = 0.0;
        let mut in_domain = true;
        let mut g = Vec::with_capacity(self.num_constraints());
        for (i, agent) in self.agents.iter().enumerate() {
            let xi = self.block(x, i);
            in_domain &= agent.regularizer.contains(xi);
            phi += agent.objective.value(xi);
            g.extend(agent.constraint.value(xi));
        }
        if !in_domain {
            phi = f64::INFINITY;
        }
        Ok(StackedEval { phi, in_domain, g })
    }

    /// SHA-256 of the canonical container encoding.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_container().as_bytes()))
    }
}

/// Draws the localization family: `f_i = ½‖x‖²`, `g_i(x) = ‖A_i x − b_i‖² − η_i²`,
/// `ρ_i` the indicator of `[−1, 1]^n`.
pub fn make_localization_instance(
    dim: usize,
    num_agents: usize,
    rows_per_agent: usize,
    noise_std: f64,
    rng_seed: u64,
) -> Result<ProblemInstance> {
    if dim == 0 || num_agents == 0 || rows_per_agent == 0 {
        return Err(Error::InvalidParameter(format!(
            "dimensions must be positive (n={dim}, N={num_agents}, p={rows_per_agent})"
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let unit = Uniform::new_inclusive(-1.0, 1.0);
    let truth: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
    let truth_vec = DVector::from_column_slice(&truth);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let domain = DomainBox::cube(dim, 1.0)?;

    let mut agents = Vec::with_capacity(num_agents);
    for _ in 0..num_agents {
        let a = DMatrix::from_fn(rows_per_agent, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eta = rng.gen_range(1.0..=2.0);
        let eps = DVector::from_fn(rows_per_agent, |_, _| noise.sample(&mut rng));
        let b = &a * &truth_vec + eps;
        agents.push(LocalProblem::new(
            SmoothObjective::half_squared_norm(dim),
            vec![Ellipsoid::new(a, b, eta)?],
            domain.clone(),
        )?);
    }
    ProblemInstance::new(
        agents,
        InstanceMeta {
            generator: "localization".into(),
            seed: Some(rng_seed),
            noise_std: Some(noise_std),
            rows_per_agent: Some(rows_per_agent),
            ground_truth: Some(truth),
        },
    )
}

// ---------------------------------------------------------------------------
// Versioned container

/// First line of every instance file.
pub const INSTANCE_MAGIC: &str = "ADAPD-INST v1";

#[derive(Serialize, Deserialize)]
struct EllipsoidRecord {
    rows: usize,
    cols: usize,
    /// Row-major entries of `A`.
    a: Vec<f64>,
    b: Vec<f64>,
    eta: f64,
}

#[derive(Serialize, Deserialize)]
struct AgentRecord {
    objective: SmoothObjective,
    lower: Vec<f64>,
    upper: Vec<f64>,
    constraints: Vec<EllipsoidRecord>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    n: usize,
    num_agents: usize,
    meta: InstanceMeta,
    agents: Vec<AgentRecord>,
}

impl ProblemInstance {
    /// Encodes as the magic line followed by a JSON body.
    pub fn to_container(&self) -> String {
        let record = InstanceRecord {
            n: self.dim,
            num_agents: self.num_agents(),
            meta: self.meta.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentRecord {
                    objective: a.objective.clone(),
                    lower: a.regularizer.lower().to_vec(),
                    upper: a.regularizer.upper().to_vec(),
                    constraints: a
                        .constraint
                        .rows()
                        .iter()
                        .map(|r| EllipsoidRecord {
                            rows: r.a.nrows(),
                            cols: r.a.ncols(),
                            a: r.a.transpose().as_slice().to_vec(),
                            b: r.b.as_slice().to_vec(),
                            eta: r.eta,
                        })
                        .collect(),
                })
                .collect(),
        };
        let body = serde_json::to_string(&record).expect("instance record is always serializable");
        format!("{INSTANCE_MAGIC}\n{body}\n")
    }

    pub fn from_container(text: &str) -> Result<Self> {
        let (magic, body) = text
            .split_once('\n')
            .ok_or_else(|| Error::Format("instance file is missing its header line".into()))?;
        if magic.trim_end() != INSTANCE_MAGIC {
            return Err(Error::Format(format!(
                "bad instance header {magic:?}, expected {INSTANCE_MAGIC:?}"
            )));
        }
        let record: InstanceRecord =
            serde_json::from_str(body).map_err(|e| Error::Format(format!("instance body: {e}")))?;
        if record.agents.len() != record.num_agents {
            return Err(Error::Format(format!(
                "instance declares {} agents but contains {}",
                record.num_agents,
                record.agents.len()
            )));
        }
        let mut agents = Vec::with_capacity(record.agents.len());
        for a in record.agents {
            let rows = a
                .constraints
                .into_iter()
                .map(|r| {
                    if r.a.len() != r.rows * r.cols {
                        return Err(Error::Format("constraint matrix has wrong entry count".into()));
                    }
                    Ellipsoid::new(
                        DMatrix::from_row_slice(r.rows, r.cols, &r.a),
                        DVector::from_vec(r.b),
                        r.eta,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let objective = SmoothObjective::new(a.objective.scale, a.objective.center)?;
            agents.push(LocalProblem::new(objective, rows, DomainBox::new(a.lower, a.upper)?)?);
        }
        let instance = ProblemInstance::new(agents, record.meta)?;
        if instance.dim != record.n {
            return Err(Error::Format(format!(
                "instance declares n={} but agents have dimension {}",
                record.n, instance.dim
            )));
        }
        Ok(instance)
    }
}

impl fmt::Display for ProblemInstance {
    /// Table of per-agent constants.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>4} {:>12} {:>12} {:>12}", "agent", "m_i", "L_f", "C", "L_g")?;
        for (i, a) in self.agents.iter().enumerate() {
            writeln!(
                f,
                "{:>6} {:>4} {:>12.6} {:>12.6} {:>12.6}",
                i,
                a.constraint.num_rows(),
                a.objective.lipschitz_grad(),
                a.constraint.lipschitz_value(),
                a.constraint.lipschitz_jac()
            )?;
        }
        Ok(())
    }
}
