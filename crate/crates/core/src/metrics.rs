//! Error metrics at ergodic points, the saddle-point Lagrangian, and the
//! explicit right-hand side of the expected Lagrangian-gap bound.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baseline::ReferenceSolution;
use crate::error::{Error, Result};
use crate::graph::ConsensusMatrix;
use crate::problem::ProblemInstance;
use crate::solver::{ErgodicPoint, InitialPoint, StepSizes};

/// Points this close to a box face count as inside it; averaging box points
/// can overshoot a face by a few ulps.
const DOMAIN_SNAP_TOL: f64 = 1e-9;

/// Canonical CSV header for run records.
pub const CSV_HEADER: &str = "k,comms,subopt,infeas,consensus,gap,wallclock_s";

/// One recorded row of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: u64,
    pub comms: u64,
    /// `|φ(x̄) − φ*|`.
    pub subopt: f64,
    /// `Σ_i ‖[g_i(x̄_i)]_+‖`.
    pub infeas: f64,
    /// `‖(V ⊗ I) x̄‖`.
    pub consensus: f64,
    /// `L(x̄, y*, λ*) − L(x*, ȳ, λ̄)`.
    pub gap: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Subopt,
    Infeas,
    Consensus,
    Gap,
}

impl MetricsRow {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Subopt => self.subopt,
            Metric::Infeas => self.infeas,
            Metric::Consensus => self.consensus,
            Metric::Gap => self.gap,
        }
    }
}

/// Clamps coordinates lying within [`DOMAIN_SNAP_TOL`] outside their box.
fn snap_to_domain(instance: &ProblemInstance, x: &[f64]) -> Vec<f64> {
    let n = instance.dim();
    let mut out = x.to_vec();
    for (i, agent) in instance.agents().iter().enumerate() {
        let b = &agent.regularizer;
        for (k, v) in out[i * n..(i + 1) * n].iter_mut().enumerate() {
            let (lo, hi) = (b.lower()[k], b.upper()[k]);
            if *v < lo && lo - *v <= DOMAIN_SNAP_TOL * (1.0 + lo.abs()) {
                *v = lo;
            } else if *v > hi && *v - hi <= DOMAIN_SNAP_TOL * (1.0 + hi.abs()) {
                *v = hi;
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `L(x, y, λ) = φ(x) + ⟨g(x), y⟩ + ⟨λ, (V⊗I)x⟩`; `+∞` when a block leaves its box.
pub fn lagrangian(
    instance: &ProblemInstance,
    consensus: &ConsensusMatrix,
    x: &[f64],
    y: &[f64],
    lambda: &[f64],
) -> Result<f64> {
    if y.len() != instance.num_constraints() {
        return Err(Error::Dimension {
            expected: instance.num_constraints(),
            actual: y.len(),
        });
    }
    if lambda.len() != x.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: lambda.len(),
        });
    }
    if y.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Contract("Lagrangian needs y >= 0".into()));
    }
    let x = snap_to_domain(instance, x);
    let eval = instance.eval_stacked(&x)?;
    if !eval.in_domain {
        return Ok(f64::INFINITY);
    }
    let vx = consensus.apply_stacked(&x, instance.dim());
    Ok(eval.phi + dot(&eval.g, y) + dot(lambda, &vx))
}

/// `Σ_i ‖[g_i(x_i)]_+‖`.
pub fn infeasibility(instance: &ProblemInstance, x: &[f64]) -> Result<f64> {
    let eval = instance.eval_stacked(x)?;
    Ok((0..instance.num_agents())
        .map(|i| {
            eval.g[instance.constraint_range(i)]
                .iter()
                .map(|v| v.max(0.0).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}

/// All row metrics at an ergodic point, measured against `reference`.
pub fn corollary_metrics(
    instance: &ProblemInstance,
    consensus: &ConsensusMatrix,
    ergodic: &ErgodicPoint,
    reference: &ReferenceSolution,
) -> Result<MetricsRow> {
    let x = snap_to_domain(instance, &ergodic.x);
    let eval = instance.eval_stacked(&x)?;
    let infeas = infeasibility(instance, &x)?;
    let consensus_violation = norm(&consensus.apply_stacked(&x, instance.dim()));
    let x_star = reference.stacked_x(instance.num_agents());
    let gap = lagrangian(instance, consensus, &x, &reference.y_star, &reference.lambda_star)?
        - lagrangian(instance, consensus, &x_star, &ergodic.y, &ergodic.lambda)?;
    Ok(MetricsRow {
        k: ergodic.horizon,
        comms: 0,
        subopt: (eval.phi - reference.phi_star).abs(),
        infeas,
        consensus: consensus_violation,
        gap,
        wallclock_s: 0.0,
    })
}

/// Per-agent scalar weights of the block-diagonal norms in the gap bound, plus
/// the initial and comparison points.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremBoundInputs {
    /// `1/τ_i`.
    pub primal_step_weight: Vec<f64>,
    /// `1/σ_i`.
    pub dual_step_weight: Vec<f64>,
    /// `1/γ_i`.
    pub consensus_step_weight: Vec<f64>,
    /// `C_i`.
    pub constraint_lipschitz: Vec<f64>,
    /// `δ_i`.
    pub row_bound: Vec<f64>,
    pub initial: InitialPoint,
    pub comparison: InitialPoint,
    pub num_agents: usize,
    pub horizon: u64,
}

impl TheoremBoundInputs {
    pub fn new(
        instance: &ProblemInstance,
        consensus: &ConsensusMatrix,
        steps: &StepSizes,
        initial: InitialPoint,
        comparison: InitialPoint,
        horizon: u64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("K must be >= 1".into()));
        }
        steps.certify(instance, consensus)?;
        if comparison.y.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Contract("comparison point needs y >= 0".into()));
        }
        let n = instance.num_agents();
        let delta = (0..n)
            .map(|i| {
                if consensus.lambda_updates_enabled() {
                    consensus.delta(i)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(TheoremBoundInputs {
            primal_step_weight: steps.tau.iter().map(|t| 1.0 / t).collect(),
            dual_step_weight: steps.sigma.iter().map(|s| 1.0 / s).collect(),
            consensus_step_weight: steps.gamma.iter().map(|g| 1.0 / g).collect(),
            constraint_lipschitz: instance.agents().iter().map(|a| a.constraint.lipschitz_value()).collect(),
            row_bound: delta,
            initial,
            comparison,
            num_agents: n,
            horizon,
        })
    }
}

/// `Σ_i w_i ‖a_i − b_i‖²` over consecutive blocks of the given sizes.
pub fn weighted_sq_dist(a: &[f64], b: &[f64], weights: &[f64], block_sizes: &[usize]) -> f64 {
    let mut offset = 0;
    let mut total = 0.0;
    for (w, &len) in weights.iter().zip(block_sizes) {
        let d: f64 = a[offset..offset + len]
            .iter()
            .zip(&b[offset..offset + len])
            .map(|(p, q)| (p - q).powi(2))
            .sum();
        total += w * d;
        offset += len;
    }
    total
}

/// Right-hand side of the expected-gap bound:
/// `N/(2(K+N−1)) · (‖x⁰−x‖²_{T+D} + ‖y⁰−y‖²_{S+C} + ‖λ⁰−λ‖²_{Γ+Δ} + (N−1)/N (L(x⁰,y,λ) − L(x,y⁰,λ⁰)))`.
pub fn theorem1_rhs(inputs: &TheoremBoundInputs, instance: &ProblemInstance, consensus: &ConsensusMatrix) -> Result<f64> {
    let n_agents = inputs.num_agents;
    let nf = n_agents as f64;
    let dim = instance.dim();
    let x_blocks = vec![dim; n_agents];
    let y_blocks: Vec<usize> = (0..n_agents).map(|i| instance.constraint_range(i).len()).collect();
    let (init, cmp) = (&inputs.initial, &inputs.comparison);

    let td: Vec<f64> = (0..n_agents)
        .map(|i| inputs.primal_step_weight[i] + inputs.constraint_lipschitz[i] + inputs.row_bound[i])
        .collect();
    let sc: Vec<f64> = (0..n_agents)
        .map(|i| inputs.dual_step_weight[i] + inputs.constraint_lipschitz[i])
        .collect();
    let gd: Vec<f64> = (0..n_agents)
        .map(|i| inputs.consensus_step_weight[i] + inputs.row_bound[i])
        .collect();

    let mut bracket = weighted_sq_dist(&init.x, &cmp.x, &td, &x_blocks)
        + weighted_sq_dist(&init.y, &cmp.y, &sc, &y_blocks)
        + weighted_sq_dist(&init.lambda, &cmp.lambda, &gd, &x_blocks);
    if n_agents > 1 {
        let l_init = lagrangian(instance, consensus, &init.x, &cmp.y, &cmp.lambda)?;
        let l_cmp = lagrangian(instance, consensus, &cmp.x, &init.y, &init.lambda)?;
        bracket += (nf - 1.0) / nf * (l_init - l_cmp);
    }
    Ok(nf / (2.0 * (inputs.horizon as f64 + nf - 1.0)) * bracket)
}

/// Least-squares slope of `log(value)` against `log(k)` over rows with
/// `k ∈ [k_lo, k_hi]` and positive finite values.
pub fn rate_fit(points: &[(f64, f64)], k_lo: f64, k_hi: f64) -> Result<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, v)| *k >= k_lo && *k <= k_hi && *k > 0.0 && *v > 0.0 && v.is_finite())
        .map(|(k, v)| (k.ln(), v.ln()))
        .collect();
    if logs.len() < 5 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs at least 5 usable rows in [{k_lo}, {k_hi}], got {}",
            logs.len()
        )));
    }
    let m = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= f64::EPSILON * m {
        return Err(Error::InvalidParameter("rate fit needs distinct k values".into()));
    }
    Ok(sxy / sxx)
}

/// Slope of one metric over a run record.
pub fn rate_fit_rows(rows: &[MetricsRow], metric: Metric, k_lo: f64, k_hi: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.k as f64, r.get(metric))).collect();
    rate_fit(&pts, k_lo, k_hi)
}

/// A labeled time series of metric rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub rows: Vec<MetricsRow>,
}

impl RunRecord {
    /// CSV with the canonical header; floats in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.k, r.comms, r.subopt, r.infeas, r.consensus, r.gap, r.wallclock_s
            );
        }
        out
    }

    pub fn from_csv(label: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == CSV_HEADER => {}
            Some((_, h)) => return Err(Error::Format(format!("line 1: unexpected header {h:?}"))),
            None => return Err(Error::Format("line 1: empty CSV".into())),
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Format(format!(
                    "line {lineno}: expected 7 fields, got {}",
                    fields.len()
                )));
            }
            let int = |s: &str| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::Format(format!("line {lineno}: {s:?}: {e}")))
            };
            let float = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {lineno}: {s:?}: {e}")))
            };
            rows.push(MetricsRow {
                k: int(fields[0])?,
                comms: int(fields[1])?,
                subopt: float(fields[2])?,
                infeas: float(fields[3])?,
                consensus: float(fields[4])?,
                gap: float(fields[5])?,
                wallclock_s: float(fields[6])?,
            });
        }
        if rows.is_empty() {
            return Err(Error::Format("CSV has a header but no rows".into()));
        }
        Ok(RunRecord {
            label: label.to_string(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{consensus_matrix, metropolis_weights, NetworkGraph};
    use crate::problem::{DomainBox, Ellipsoid, InstanceMeta, LocalProblem, SmoothObjective};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn rate_fit_power_laws() {
        let inv: Vec<(f64, f64)> = (1..=50).map(|k| (k as f64 * 100.0, 3.0 / (k as f64 * 100.0))).collect();
        assert!((rate_fit(&inv, 0.0, 1e9).unwrap() + 1.0).abs() < 1e-6);
        let sqrt: Vec<(f64, f64)> = (1..=50).map(|k| (k as f64, 2.0 / (k as f64).sqrt())).collect();
        assert!((rate_fit(&sqrt, 0.0, 1e9).unwrap() + 0.5).abs() < 1e-6);
    }

    #[test]
    fn rate_fit_rejects_degenerate() {
        let same_k: Vec<(f64, f64)> = (0..10).map(|i| (5.0, 1.0 + i as f64)).collect();
        assert!(rate_fit(&same_k, 0.0, 10.0).is_err());
        let few: Vec<(f64, f64)> = (1..=4).map(|k| (k as f64, 1.0)).collect();
        assert!(rate_fit(&few, 0.0, 10.0).is_err());
        let zeros: Vec<(f64, f64)> = (1..=10).map(|k| (k as f64, 0.0)).collect();
        assert!(rate_fit(&zeros, 0.0, 100.0).is_err());
    }

    fn tiny() -> (ProblemInstance, ConsensusMatrix) {
        let local = |b: f64| {
            LocalProblem::new(
                SmoothObjective::half_squared_norm(1),
                vec![Ellipsoid::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, b), 0.5).unwrap()],
                DomainBox::cube(1, 1.0).unwrap(),
            )
            .unwrap()
        };
        let inst = ProblemInstance::new(vec![local(0.2), local(-0.3)], InstanceMeta::custom("tiny")).unwrap();
        let g = NetworkGraph::new(2, &[(0, 1)]).unwrap();
        (inst, consensus_matrix(&metropolis_weights(&g).unwrap(), 1.0).unwrap())
    }

    #[test]
    fn lagrangian_reduces_to_objective() {
        let (inst, v) = tiny();
        let l = lagrangian(&inst, &v, &[0.4, -0.2], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((l - 0.5 * (0.16 + 0.04)).abs() < 1e-15);
        // Consensus point: λ term vanishes.
        let a = lagrangian(&inst, &v, &[0.3, 0.3], &[0.0, 0.0], &[5.0, -2.0]).unwrap();
        let b = lagrangian(&inst, &v, &[0.3, 0.3], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(lagrangian(&inst, &v, &[0.3, 0.3], &[-1.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(lagrangian(&inst, &v, &[1.3, 0.3], &[0.0, 0.0], &[0.0, 0.0]).unwrap().is_infinite());
    }

    #[test]
    fn positive_part_per_agent() {
        let (inst, _) = tiny();
        // g_0(0.9) = 0.49 − 0.25, g_1(0.9) = 1.44 − 0.25.
        let inf = infeasibility(&inst, &[0.9, 0.9]).unwrap();
        assert!((inf - (0.24 + 1.19)).abs() < 1e-12);
        assert_eq!(infeasibility(&inst, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn rhs_hand_example() {
        let (inst, v) = tiny();
        let inputs = TheoremBoundInputs {
            primal_step_weight: vec![1.0, 1.0],
            dual_step_weight: vec![1.0, 1.0],
            consensus_step_weight: vec![1.0, 1.0],
            constraint_lipschitz: vec![1.0, 1.0],
            row_bound: vec![1.0, 1.0],
            initial: InitialPoint {
                x: vec![0.5, 0.0],
                y: vec![0.0, 0.0],
                lambda: vec![0.0, 0.0],
            },
            comparison: InitialPoint {
                x: vec![-0.5, 0.0],
                y: vec![0.0, 0.0],
                lambda: vec![0.0, 0.0],
            },
            num_agents: 2,
            horizon: 1,
        };
        // L(x⁰,0,0) − L(x,0,0) = ½(0.25) − ½(0.25) = 0.
        assert!((theorem1_rhs(&inputs, &inst, &v).unwrap() - 1.5).abs() < 1e-15);
        let same = TheoremBoundInputs {
            comparison: inputs.initial.clone(),
            ..inputs
        };
        assert_eq!(theorem1_rhs(&same, &inst, &v).unwrap(), 0.0);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let rec = RunRecord {
            label: "a".into(),
            rows: vec![
                MetricsRow {
                    k: 10,
                    comms: 10,
                    subopt: 0.1,
                    infeas: 1e-300,
                    consensus: 3.0,
                    gap: -2.5e-7,
                    wallclock_s: 0.0,
                },
                MetricsRow {
                    k: 20,
                    comms: 20,
                    subopt: f64::NAN,
                    infeas: 0.0,
                    consensus: 1.0 / 3.0,
                    gap: 1.0,
                    wallclock_s: 0.5,
                },
            ],
        };
        let text = rec.to_csv();
        assert!(text.starts_with("k,comms,subopt,infeas,consensus,gap,wallclock_s\n10,10,0.1,"));
        let back = RunRecord::from_csv("a", &text).unwrap();
        assert_eq!(back.rows[0], rec.rows[0]);
        assert_eq!(back.rows[1].consensus.to_bits(), rec.rows[1].consensus.to_bits());
        assert!(back.rows[1].subopt.is_nan());
        assert!(RunRecord::from_csv("a", CSV_HEADER).is_err());
        let err = RunRecord::from_csv("a", &format!("{CSV_HEADER}\n1,1,0,0,0,0,0\n2,x,0,0,0,0,0\n")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
