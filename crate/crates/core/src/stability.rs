//! Load classification and threshold search.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degree::DegreeDistribution;
use crate::error::{check_len, check_unit, Error, Result};
use crate::evolution::{DeOptions, Evolver, FixedPointResult, Start, SystemConfig};

/// Largest lattice the sufficient-condition checks will enumerate.
pub const MAX_LATTICE_POINTS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    WeaklyStable,
    Unstable,
    Indeterminate,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::WeaklyStable => "weakly_stable",
            Verdict::Unstable => "unstable",
            Verdict::Indeterminate => "indeterminate",
        }
    }

    /// Whether a load with this verdict is weakly stable (stability implies
    /// a unique fixed point).
    pub fn is_weakly_stable(self) -> bool {
        matches!(self, Verdict::Stable | Verdict::WeaklyStable)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub class: Verdict,
    pub q_from_ones: Vec<f64>,
    pub q_from_zeros: Vec<f64>,
    pub success_probs: Vec<f64>,
    pub iterations: (usize, usize),
}

/// Numerical thresholds used when classifying a load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `‖q^{(∞)}‖∞` below this counts as zero.
    pub stable_tol: f64,
    /// Largest sup-norm gap between the two limits still counted as equal.
    pub equal_tol: f64,
    pub de: DeOptions,
    /// When set, weak stability additionally requires a unique fixed point at
    /// this many evenly spaced points on the segment from the origin.
    pub strict_weak: Option<usize>,
    /// Points in the forward scan used by weak-stability threshold searches.
    pub weak_scan_points: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stable_tol: 1e-9,
            equal_tol: 1e-7,
            de: DeOptions::default(),
            strict_weak: None,
            weak_scan_points: 1000,
        }
    }
}

impl Tolerances {
    /// Default number of ray samples for the strict weak check.
    pub const STRICT_WEAK_SAMPLES: usize = 16;
}

/// Per-class `ε_k` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EpsilonSpec(Vec<f64>);

impl EpsilonSpec {
    pub fn new(eps: Vec<f64>) -> Result<Self> {
        eps.iter().try_for_each(|&e| check_unit("eps", e))?;
        Ok(Self(eps))
    }

    pub fn uniform(classes: usize, eps: f64) -> Result<Self> {
        Self::new(vec![eps; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for EpsilonSpec {
    type Error = Error;

    fn try_from(eps: Vec<f64>) -> Result<Self> {
        Self::new(eps)
    }
}

impl From<EpsilonSpec> for Vec<f64> {
    fn from(eps: EpsilonSpec) -> Self {
        eps.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "eps", rename_all = "snake_case")]
pub enum Criterion {
    Stable,
    WeaklyStable,
    EpsilonStable(EpsilonSpec),
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Stable => "stable",
            Criterion::WeaklyStable => "weakly_stable",
            Criterion::EpsilonStable(_) => "epsilon_stable",
        }
    }

    /// Evaluates the criterion at one load point.
    pub fn holds(&self, config: &SystemConfig, g: &[f64], tols: &Tolerances) -> Result<bool> {
        Ok(match self {
            Criterion::Stable => classify_load(config, g, tols)?.class == Verdict::Stable,
            Criterion::WeaklyStable => classify_load(config, g, tols)?.class.is_weakly_stable(),
            Criterion::EpsilonStable(eps) => epsilon_stable(config, g, eps, tols)?.is_stable,
        })
    }
}

/// Classifies `g` by iterating the recursion from both endpoints.
///
/// A load is stable when the largest fixed point is zero and every class is
/// received with probability one, weakly stable when the largest and
/// smallest fixed points coincide, and indeterminate when either iteration
/// hit its cap.
pub fn classify_load(
    config: &SystemConfig,
    g: &[f64],
    tols: &Tolerances,
) -> Result<StabilityVerdict> {
    config.check_loads(g)?;
    let mut verdict = classify_point(config, g, tols);
    if verdict.class == Verdict::WeaklyStable {
        if let Some(m) = tols.strict_weak.filter(|&m| m > 1) {
            for i in 1..m {
                let t = i as f64 / m as f64;
                let scaled: Vec<f64> = g.iter().map(|x| x * t).collect();
                let v = classify_point(config, &scaled, tols).class;
                if !v.is_weakly_stable() {
                    verdict.class = v;
                    break;
                }
            }
        }
    }
    Ok(verdict)
}

fn classify_point(config: &SystemConfig, g: &[f64], tols: &Tolerances) -> StabilityVerdict {
    let mut ev = Evolver::new(config, g);
    let ones = ev.fixed_point(Start::AllOnes, &tols.de);
    let zeros = ev.fixed_point(Start::AllZeros, &tols.de);
    let success_probs = ev.success(&ones.q_final, tols.de.round_success);
    let class = if !ones.converged || !zeros.converged {
        Verdict::Indeterminate
    } else if sup_norm(&ones.q_final) < tols.stable_tol
        && success_probs.iter().all(|&p| p >= 1.0 - tols.stable_tol)
    {
        Verdict::Stable
    } else if sup_gap(&ones.q_final, &zeros.q_final) < tols.equal_tol {
        Verdict::WeaklyStable
    } else {
        Verdict::Unstable
    };
    StabilityVerdict {
        class,
        iterations: (ones.iterations, zeros.iterations),
        q_from_ones: ones.q_final,
        q_from_zeros: zeros.q_final,
        success_probs,
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonOutcome {
    pub is_stable: bool,
    /// `1 - Λ_k(ε_k)`, the success probability guaranteed when stable.
    pub guaranteed_success: Vec<f64>,
    /// Whether every receiver a class can reach succeeds at zero load with
    /// probability at least `1 - ε_k`.
    pub floor_condition: bool,
    pub fixed_point: FixedPointResult,
}

/// Tests whether the largest fixed point lies in `{q : q_k ≤ λ_k(ε_k)}`.
///
/// Iterates from all-ones decrease monotonically towards the largest fixed
/// point, so a capped iteration that already sits inside the set still
/// certifies membership.
pub fn epsilon_stable(
    config: &SystemConfig,
    g: &[f64],
    eps: &EpsilonSpec,
    tols: &Tolerances,
) -> Result<EpsilonOutcome> {
    config.check_loads(g)?;
    check_len("eps", config.num_user_classes(), eps.0.len())?;
    require_min_degree_two(config)?;
    let dists = config.effective_degrees();
    let fixed_point = Evolver::new(config, g).fixed_point(Start::AllOnes, &tols.de);
    let is_stable = fixed_point
        .q_final
        .iter()
        .zip(dists)
        .zip(&eps.0)
        .all(|((&q, d), &e)| q <= d.excess(e));
    Ok(EpsilonOutcome {
        is_stable,
        guaranteed_success: dists
            .iter()
            .zip(&eps.0)
            .map(|(d, &e)| 1.0 - d.gf(e))
            .collect(),
        floor_condition: floor_condition(config, eps),
        fixed_point,
    })
}

/// Zero-load floor check standing in for the admissibility condition on
/// `ε`: each class's reachable receivers succeed with probability at least
/// `1 - ε_k` when nothing else is transmitted.
pub fn floor_condition(config: &SystemConfig, eps: &EpsilonSpec) -> bool {
    config.receivers().iter().enumerate().all(|(j, rc)| {
        let floor = rc.model.floor();
        config
            .routing()
            .iter()
            .enumerate()
            .all(|(k, row)| row[j] == 0.0 || floor[k] >= 1.0 - eps.0[k])
    })
}

fn require_min_degree_two(config: &SystemConfig) -> Result<()> {
    if config.min_degree_two() {
        Ok(())
    } else {
        Err(Error::Precondition(
            "every class must transmit at least two copies (Λ_0 = Λ_1 = 0)".into(),
        ))
    }
}

/// Extra bisection levels a lattice cell may use before the check gives up.
const REFINE_LEVELS: u32 = 8;
/// Bisections of the cell at the origin before its corner is checked alone.
const ORIGIN_LEVELS: u32 = 24;

/// Grid check of the sufficient condition for stability.
///
/// The unit cube is cut into the cells of a `grid_n^K` lattice. A cell is
/// certified when some class, evaluated at the cell's upper corner, contracts
/// strictly below the cell's lower corner; the recursion is monotone, so no
/// fixed point lies in such a cell. Cells that fail are bisected up to
/// [`REFINE_LEVELS`] times. The cell at the origin is bisected
/// [`ORIGIN_LEVELS`] times, after which only its upper corner is checked.
/// When all classes transmit at least twice the cells are laid out in
/// `p = λ^{-1}(q)` coordinates.
///
/// `true` certifies stability for receiver models that are nonincreasing in
/// the load, up to fixed points within `2^-24 / (grid_n - 1)` of the origin;
/// `false` is inconclusive.
pub fn check_sufficient_stability(config: &SystemConfig, g: &[f64], grid_n: usize) -> Result<bool> {
    config.check_loads(g)?;
    let p_form = config.min_degree_two();
    sufficient_check(config, g, grid_n, p_form, |_| false)
}

/// ε-variant of [`check_sufficient_stability`]: cells lying entirely in
/// `{p : p_k ≤ ε_k for all k}` are skipped.
pub fn check_sufficient_epsilon_stability(
    config: &SystemConfig,
    g: &[f64],
    eps: &EpsilonSpec,
    grid_n: usize,
) -> Result<bool> {
    config.check_loads(g)?;
    check_len("eps", config.num_user_classes(), eps.0.len())?;
    require_min_degree_two(config)?;
    sufficient_check(config, g, grid_n, true, |p| {
        p.iter().zip(&eps.0).all(|(x, e)| x <= e)
    })
}

struct CellCheck<'a, S> {
    ev: Evolver<'a>,
    dists: &'a [DegreeDistribution],
    p_form: bool,
    skip: &'a S,
    q: Vec<f64>,
    out: Vec<f64>,
}

impl<S: Fn(&[f64]) -> bool> CellCheck<'_, S> {
    fn eval(&mut self, x: &[f64]) {
        if self.p_form {
            for ((qc, &pc), d) in self.q.iter_mut().zip(x).zip(self.dists) {
                *qc = d.excess(pc);
            }
            self.ev.edge_failure(&self.q, &mut self.out);
        } else {
            self.ev.step(x, &mut self.out);
        }
    }

    fn cell(&mut self, lo: &[f64], hi: &[f64], budget: u32, origin_levels: u32) -> bool {
        if (self.skip)(hi) {
            return true;
        }
        let origin = lo.iter().all(|&x| x == 0.0);
        self.eval(hi);
        if origin {
            if origin_levels == 0 {
                return self.out.iter().zip(hi).any(|(f, x)| f < x);
            }
        } else if self.out.iter().zip(lo).any(|(f, x)| f < x) {
            return true;
        } else if budget == 0 {
            return false;
        }
        let k = lo.len();
        let (mut c_lo, mut c_hi) = (vec![0.0; k], vec![0.0; k]);
        (0..1usize << k).all(|mask| {
            for c in 0..k {
                let mid = 0.5 * (lo[c] + hi[c]);
                (c_lo[c], c_hi[c]) = if mask >> c & 1 == 1 {
                    (mid, hi[c])
                } else {
                    (lo[c], mid)
                };
            }
            match (origin, mask == 0) {
                (true, true) => self.cell(&c_lo, &c_hi, REFINE_LEVELS, origin_levels - 1),
                (true, false) => self.cell(&c_lo, &c_hi, REFINE_LEVELS, 0),
                (false, _) => self.cell(&c_lo, &c_hi, budget - 1, 0),
            }
        })
    }
}

fn sufficient_check<S: Fn(&[f64]) -> bool + Sync>(
    config: &SystemConfig,
    g: &[f64],
    grid_n: usize,
    p_form: bool,
    skip: S,
) -> Result<bool> {
    if grid_n < 2 {
        return Err(Error::Domain {
            what: "grid_n",
            value: grid_n as f64,
            range: "[2, inf)",
        });
    }
    let k = config.num_user_classes();
    (grid_n as u64)
        .checked_pow(k as u32)
        .filter(|&n| n <= MAX_LATTICE_POINTS)
        .ok_or_else(|| {
            Error::ResourceLimit(format!(
                "{grid_n}^{k} lattice points exceed {MAX_LATTICE_POINTS}"
            ))
        })?;
    let cells_per_axis = (grid_n - 1) as u64;
    let total = cells_per_axis.pow(k as u32);
    let h = 1.0 / cells_per_axis as f64;
    let holds = (0..total)
        .into_par_iter()
        .map_init(
            || CellCheck {
                ev: Evolver::new(config, g),
                dists: config.effective_degrees(),
                p_form,
                skip: &skip,
                q: vec![0.0; k],
                out: vec![0.0; k],
            },
            |check, idx| {
                let (mut lo, mut hi) = (vec![0.0; k], vec![0.0; k]);
                let mut rest = idx;
                for c in 0..k {
                    let i = rest % cells_per_axis;
                    rest /= cells_per_axis;
                    lo[c] = i as f64 * h;
                    hi[c] = if i + 1 == cells_per_axis {
                        1.0
                    } else {
                        (i + 1) as f64 * h
                    };
                }
                check.cell(&lo, &hi, REFINE_LEVELS, ORIGIN_LEVELS)
            },
        )
        .all(|ok| ok);
    Ok(holds)
}

/// Number of scan points used by [`irsa_threshold`].
const IRSA_SCAN_POINTS: usize = 20_000;

/// Stability threshold of single-class IRSA over slotted-ALOHA receivers,
/// `inf_{p ∈ (0,1)} -ln(1 - p) / Λ'(p)`.
///
/// The infimum is located by a dense scan (uniform, plus logarithmic spacing
/// near the origin) and refined by golden-section search until the bracket
/// is narrower than `tol`.
pub fn irsa_threshold(dist: &DegreeDistribution, tol: f64) -> Result<f64> {
    if !dist.min_degree_two() {
        return Err(Error::Precondition(
            "IRSA threshold needs Λ_0 = Λ_1 = 0".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain {
            what: "tol",
            value: tol,
            range: "(0, inf)",
        });
    }
    let f = |p: f64| -(-p).ln_1p() / dist.gf_derivative(p);
    let mut grid: Vec<f64> = (1..=IRSA_SCAN_POINTS)
        .map(|i| i as f64 / (IRSA_SCAN_POINTS + 1) as f64)
        .collect();
    grid.extend((0..200).map(|i| 10f64.powf(-10.0 + 6.0 * i as f64 / 200.0)));
    grid.sort_by(f64::total_cmp);
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, f(p)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("scan grid is non-empty");
    let mut a = if best == 0 {
        grid[0] * 0.5
    } else {
        grid[best - 1]
    };
    let mut b = grid.get(best + 1).copied().unwrap_or(1.0 - f64::EPSILON);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Ok(f(0.5 * (a + b)).min(f(grid[best])))
}

/// Threshold multiplier `t*` along the ray `t · direction`.
///
/// `bracket = (lo, hi)` must satisfy the criterion at `lo` and fail it at
/// `hi`. Stability and ε-stability are monotone along rays and are found by
/// bisection. Weak stability requires uniqueness at every dominated load, so
/// the ray is first scanned forward from `lo` and bisection runs inside the
/// first interval where uniqueness fails; an isolated window of
/// non-uniqueness therefore ends the weakly stable segment.
pub fn percolation_threshold_1d(
    config: &SystemConfig,
    direction: &[f64],
    bracket: (f64, f64),
    criterion: &Criterion,
    tol: f64,
    tols: &Tolerances,
) -> Result<f64> {
    check_len("direction", config.num_user_classes(), direction.len())?;
    if direction.iter().any(|&d| !d.is_finite() || d < 0.0) || direction.iter().all(|&d| d == 0.0) {
        return Err(Error::InvalidSystem(
            "direction must be nonnegative and nonzero".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain {
            what: "tol",
            value: tol,
            range: "(0, inf)",
        });
    }
    let (lo, hi) = bracket;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Bracket {
            lo,
            hi,
            reason: "need 0 <= lo < hi".into(),
        });
    }
    let point = |t: f64| -> Vec<f64> { direction.iter().map(|d| d * t).collect() };
    let holds = |t: f64| criterion.holds(config, &point(t), tols);
    if !holds(lo)? {
        return Err(Error::Bracket {
            lo,
            hi,
            reason: format!("criterion {} fails at lo", criterion.name()),
        });
    }
    let (mut a, mut b) = match criterion {
        Criterion::WeaklyStable => first_failure(lo, hi, tols.weak_scan_points.max(2), &holds)?
            .ok_or_else(|| Error::Bracket {
                lo,
                hi,
                reason: "criterion holds along the whole bracket".into(),
            })?,
        _ => {
            if holds(hi)? {
                return Err(Error::Bracket {
                    lo,
                    hi,
                    reason: format!("criterion {} holds at hi", criterion.name()),
                });
            }
            (lo, hi)
        }
    };
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if holds(mid)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Scans `points` evenly spaced multipliers on `[lo, hi]` in parallel chunks
/// and returns the first `(passing, failing)` pair.
fn first_failure(
    lo: f64,
    hi: f64,
    points: usize,
    holds: &(impl Fn(f64) -> Result<bool> + Sync),
) -> Result<Option<(f64, f64)>> {
    const CHUNK: usize = 64;
    let at = |i: usize| lo + (hi - lo) * i as f64 / (points - 1) as f64;
    let mut start = 1;
    while start < points {
        let end = (start + CHUNK).min(points);
        let results: Vec<bool> = (start..end)
            .into_par_iter()
            .map(|i| holds(at(i)))
            .collect::<Result<_>>()?;
        if let Some(offset) = results.iter().position(|ok| !ok) {
            let i = start + offset;
            return Ok(Some((at(i - 1), at(i))));
        }
        start = end;
    }
    Ok(None)
}
