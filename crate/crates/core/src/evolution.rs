//! Multi-class density evolution.
//!
//! `q_k` is the probability that the user end of a random class-`k` edge is
//! still unresolved. One SIC round maps
//!
//! ```text
//! q'_k = λ_k(1 - Σ_j r_{k,j} P_suc,k,j(q_eff ∘ ρ^{(j)})),   q_eff = p_sic + (1 - p_sic) q
//! ```
//!
//! and after round `i` a class-`k` packet is received with probability
//! `1 - Λ_k(1 - Σ_j r_{k,j} P_suc,k,j(q_eff^{(i-1)} ∘ ρ^{(j)}))`.

use crate::degree::DegreeDistribution;
use crate::error::{check_len, check_unit, Error, Result};
use crate::receivers::{LoadVector, ReceiverModel};

/// Tolerance on the routing-row and receiver-fraction sums.
pub const SUM_TOL: f64 = 1e-12;

/// Success probabilities above this are reported as exactly one when
/// [`DeOptions::round_success`] is set.
pub const ROUNDING_CUTOFF: f64 = 0.99999;

/// A class of receivers: its share of the `T` receivers and its model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverClass {
    pub fraction: f64,
    pub model: ReceiverModel,
}

/// Complete description of a coded Poisson receiver system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    degrees: Vec<DegreeDistribution>,
    effective: Vec<DegreeDistribution>,
    receivers: Vec<ReceiverClass>,
    routing: Vec<Vec<f64>>,
    p_sic: f64,
    p_era: f64,
}

impl SystemConfig {
    /// Validates and assembles a system.
    ///
    /// `routing[k][j]` is the probability that a class-`k` copy goes to a
    /// class-`j` receiver; every row must sum to one and every receiver
    /// fraction must be positive with the fractions summing to one.
    pub fn new(
        degrees: Vec<DegreeDistribution>,
        receivers: Vec<ReceiverClass>,
        routing: Vec<Vec<f64>>,
        p_sic: f64,
        p_era: f64,
    ) -> Result<Self> {
        let k = degrees.len();
        let j = receivers.len();
        if k == 0 || j == 0 {
            return Err(Error::InvalidSystem(
                "need at least one user class and one receiver class".into(),
            ));
        }
        check_unit("p_sic", p_sic)?;
        check_unit("p_era", p_era)?;
        if degrees.iter().any(DegreeDistribution::is_erased) {
            return Err(Error::InvalidSystem(
                "user classes take declared distributions; erasure is applied through p_era".into(),
            ));
        }
        let mut fraction_sum = 0.0;
        for (idx, class) in receivers.iter().enumerate() {
            if !(class.fraction > 0.0 && class.fraction <= 1.0) {
                return Err(Error::InvalidSystem(format!(
                    "receiver class {idx}: fraction {} must lie in (0, 1]",
                    class.fraction
                )));
            }
            if class.model.num_classes() != k {
                return Err(Error::InvalidSystem(format!(
                    "receiver class {idx}: model serves {} user classes, system has {k}",
                    class.model.num_classes()
                )));
            }
            fraction_sum += class.fraction;
        }
        if (fraction_sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidSystem(format!(
                "receiver fractions sum to {fraction_sum}, expected 1"
            )));
        }
        check_len("routing rows", k, routing.len())?;
        for (row_idx, row) in routing.iter().enumerate() {
            check_len("routing row", j, row.len())?;
            if let Some(bad) = row.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                return Err(Error::InvalidSystem(format!(
                    "routing[{row_idx}] has entry {bad}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidSystem(format!(
                    "routing[{row_idx}] sums to {sum}, expected 1"
                )));
            }
        }
        let effective = degrees
            .iter()
            .map(|d| d.erasure_transform(p_era))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            degrees,
            effective,
            receivers,
            routing,
            p_sic,
            p_era,
        })
    }

    /// One user class, one class of slotted-ALOHA receivers: plain IRSA.
    pub fn irsa(degree: DegreeDistribution) -> Self {
        Self::new(
            vec![degree],
            vec![ReceiverClass {
                fraction: 1.0,
                model: ReceiverModel::slotted_aloha(1),
            }],
            vec![vec![1.0]],
            0.0,
            0.0,
        )
        .expect("single-class IRSA is valid")
    }

    /// Number of user classes `K`.
    pub fn num_user_classes(&self) -> usize {
        self.degrees.len()
    }

    /// Number of receiver classes `J`.
    pub fn num_receiver_classes(&self) -> usize {
        self.receivers.len()
    }

    /// Declared degree distributions.
    pub fn degrees(&self) -> &[DegreeDistribution] {
        &self.degrees
    }

    /// Distributions after erasure thinning; these drive the recursion.
    pub fn effective_degrees(&self) -> &[DegreeDistribution] {
        &self.effective
    }

    pub fn receivers(&self) -> &[ReceiverClass] {
        &self.receivers
    }

    pub fn routing(&self) -> &[Vec<f64>] {
        &self.routing
    }

    pub fn p_sic(&self) -> f64 {
        self.p_sic
    }

    pub fn p_era(&self) -> f64 {
        self.p_era
    }

    /// Whether every class can reach every receiver class (all `r_{k,j} > 0`),
    /// the condition under which stability forces the all-zero fixed point.
    pub fn full_routing(&self) -> bool {
        self.routing.iter().flatten().all(|&r| r > 0.0)
    }

    /// Whether every effective distribution has `Λ_0 = Λ_1 = 0`.
    pub fn min_degree_two(&self) -> bool {
        self.effective
            .iter()
            .all(DegreeDistribution::min_degree_two)
    }

    pub(crate) fn check_loads(&self, g: &[f64]) -> Result<()> {
        check_len("offered load G", self.num_user_classes(), g.len())?;
        for &gk in g {
            if !gk.is_finite() || gk < 0.0 {
                return Err(Error::Domain {
                    what: "G",
                    value: gk,
                    range: "[0, inf)",
                });
            }
        }
        Ok(())
    }
}

/// Initial point of the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Start {
    /// `q^{(0)} = 1`; converges to the largest fixed point.
    AllOnes,
    /// `q^{(0)} = 0`; converges to the smallest fixed point.
    AllZeros,
}

/// Stopping rule and reporting switches for the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeOptions {
    /// Sup-norm change between iterates that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub keep_trace: bool,
    /// Report success probabilities above [`ROUNDING_CUTOFF`] as 1.
    pub round_success: bool,
}

impl Default for DeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            keep_trace: false,
            round_success: false,
        }
    }
}

impl DeOptions {
    /// Fixed 500-iteration budget with success rounding, the setting used to
    /// draw published stability-region figures.
    pub fn figure_preset() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 500,
            keep_trace: false,
            round_success: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Domain {
                what: "tol",
                value: self.tol,
                range: "(0, inf)",
            });
        }
        if self.max_iter == 0 {
            return Err(Error::Domain {
                what: "max_iter",
                value: 0.0,
                range: "[1, inf)",
            });
        }
        Ok(())
    }
}

/// Outcome of iterating the recursion to a fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub q_final: Vec<f64>,
    pub start: Start,
    pub iterations: usize,
    pub converged: bool,
    /// `q^{(0)}, q^{(1)}, …` when requested.
    pub trace: Option<Vec<Vec<f64>>>,
}

/// Per-class and total throughput `Θ_k = G_k P̃_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Throughput {
    pub per_class: Vec<f64>,
    pub total: f64,
    pub success: Vec<f64>,
    pub fixed_point: FixedPointResult,
}

/// Offered load `ρ^{(j)}_k = G_k Λ̃'_k(1) r_{k,j} / F_j` at each receiver class.
pub fn offered_loads(config: &SystemConfig, g: &[f64]) -> Result<Vec<LoadVector>> {
    config.check_loads(g)?;
    Evolver::new(config, g)
        .loads
        .into_iter()
        .map(LoadVector::new)
        .collect()
}

/// One round of the recursion.
pub fn de_step(config: &SystemConfig, q: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    config.check_loads(g)?;
    check_q(config, q)?;
    let mut ev = Evolver::new(config, g);
    let mut out = vec![0.0; q.len()];
    ev.step(q, &mut out);
    Ok(out)
}

/// Iterates [`de_step`] from `start` until the sup-norm change drops below
/// `opts.tol` or `opts.max_iter` rounds have run.
pub fn de_fixed_point(
    config: &SystemConfig,
    g: &[f64],
    start: Start,
    opts: &DeOptions,
) -> Result<FixedPointResult> {
    config.check_loads(g)?;
    opts.validate()?;
    Ok(Evolver::new(config, g).fixed_point(start, opts))
}

/// Success probabilities `P̃_k` given the previous-round `q`.
pub fn success_probabilities(
    config: &SystemConfig,
    g: &[f64],
    q: &[f64],
    opts: &DeOptions,
) -> Result<Vec<f64>> {
    config.check_loads(g)?;
    check_q(config, q)?;
    Ok(Evolver::new(config, g).success(q, opts.round_success))
}

/// Runs the recursion from all-ones and reports `Θ_k = G_k P̃_k`.
pub fn throughput(config: &SystemConfig, g: &[f64], opts: &DeOptions) -> Result<Throughput> {
    config.check_loads(g)?;
    opts.validate()?;
    let mut ev = Evolver::new(config, g);
    let fixed_point = ev.fixed_point(Start::AllOnes, opts);
    let success = ev.success(&fixed_point.q_final, opts.round_success);
    let per_class: Vec<f64> = g.iter().zip(&success).map(|(gk, p)| gk * p).collect();
    Ok(Throughput {
        total: per_class.iter().sum(),
        per_class,
        success,
        fixed_point,
    })
}

fn check_q(config: &SystemConfig, q: &[f64]) -> Result<()> {
    check_len("q", config.num_user_classes(), q.len())?;
    q.iter().try_for_each(|&x| check_unit("q", x))
}

/// Recursion bound to one load point, with the offered loads and scratch
/// buffers precomputed.
pub(crate) struct Evolver<'a> {
    config: &'a SystemConfig,
    /// `loads[j][k] = ρ^{(j)}_k`.
    pub(crate) loads: Vec<Vec<f64>>,
    reduced: Vec<f64>,
    probs: Vec<f64>,
}

impl<'a> Evolver<'a> {
    pub(crate) fn new(config: &'a SystemConfig, g: &[f64]) -> Self {
        let k = config.num_user_classes();
        let loads = config
            .receivers
            .iter()
            .enumerate()
            .map(|(j, rc)| {
                (0..k)
                    .map(|c| {
                        g[c] * config.effective[c].mean_degree() * config.routing[c][j]
                            / rc.fraction
                    })
                    .collect()
            })
            .collect();
        Self {
            config,
            loads,
            reduced: vec![0.0; k],
            probs: vec![0.0; k],
        }
    }

    /// Writes `1 - Σ_j r_{k,j} P_suc,k,j(q_eff ∘ ρ^{(j)})` into `out`: the
    /// probability that a random class-`k` edge is not resolved at its
    /// receiver end.
    pub(crate) fn edge_failure(&mut self, q: &[f64], out: &mut [f64]) {
        let cfg = self.config;
        let p_sic = cfg.p_sic;
        out.fill(0.0);
        for (j, rc) in cfg.receivers.iter().enumerate() {
            if cfg.routing.iter().all(|row| row[j] == 0.0) {
                continue;
            }
            for c in 0..q.len() {
                let q_eff = (p_sic + (1.0 - p_sic) * q[c]).clamp(0.0, 1.0);
                self.reduced[c] = q_eff * self.loads[j][c];
            }
            rc.model.success_into(&self.reduced, &mut self.probs);
            for (c, acc) in out.iter_mut().enumerate() {
                *acc += cfg.routing[c][j] * self.probs[c];
            }
        }
        for x in out.iter_mut() {
            *x = (1.0 - *x).clamp(0.0, 1.0);
        }
    }

    pub(crate) fn step(&mut self, q: &[f64], out: &mut [f64]) {
        self.edge_failure(q, out);
        for (c, x) in out.iter_mut().enumerate() {
            *x = self.config.effective[c].excess(*x);
        }
    }

    pub(crate) fn success(&mut self, q: &[f64], round: bool) -> Vec<f64> {
        let mut fail = vec![0.0; q.len()];
        self.edge_failure(q, &mut fail);
        fail.iter()
            .enumerate()
            .map(|(c, &x)| {
                let p = (1.0 - self.config.effective[c].gf(x)).clamp(0.0, 1.0);
                if round && p > ROUNDING_CUTOFF {
                    1.0
                } else {
                    p
                }
            })
            .collect()
    }

    pub(crate) fn fixed_point(&mut self, start: Start, opts: &DeOptions) -> FixedPointResult {
        let k = self.config.num_user_classes();
        let mut q = match start {
            Start::AllOnes => vec![1.0; k],
            Start::AllZeros => vec![0.0; k],
        };
        let mut next = vec![0.0; k];
        let mut trace = opts.keep_trace.then(|| vec![q.clone()]);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            self.step(&q, &mut next);
            iterations += 1;
            let change = q
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            std::mem::swap(&mut q, &mut next);
            if let Some(t) = trace.as_mut() {
                t.push(q.clone());
            }
            if change < opts.tol {
                converged = true;
                break;
            }
        }
        FixedPointResult {
            q_final: q,
            start,
            iterations,
            converged,
            trace,
        }
    }
}
