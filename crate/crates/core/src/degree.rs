//! Generating-function machinery for user degree distributions.
//!
//! A [`DegreeDistribution`] holds the probabilities `Λ_ℓ = P(L = ℓ)` of a
//! user transmitting `ℓ` copies of its packet. From it we evaluate the
//! generating function `Λ(x)`, its derivative, the edge-perspective (excess)
//! distribution `λ(x) = Λ'(x) / Λ'(1)` and the inverse of `λ`.

use std::collections::BTreeMap;

use crate::error::{check_unit, Error, Result};

/// Sum-to-one tolerance applied when validating weights.
pub const NORMALIZATION_TOL: f64 = 1e-12;

const INVERSE_TOL: f64 = 1e-12;
const INVERSE_MAX_ITER: usize = 200;

/// Probability law of the number of copies a user transmits.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeDistribution {
    /// `coeffs[ℓ] = Λ_ℓ`, trailing zeros trimmed.
    coeffs: Vec<f64>,
    /// `deriv[ℓ] = (ℓ + 1) Λ_{ℓ+1}`, the coefficients of `Λ'(x)`.
    deriv: Vec<f64>,
    mean: f64,
    /// Set on distributions produced by [`DegreeDistribution::erasure_transform`];
    /// those may carry mass on degree zero.
    erased: bool,
}

impl DegreeDistribution {
    /// Builds a user-facing distribution from `coeffs[ℓ] = Λ_ℓ`.
    ///
    /// Weights must be finite, nonnegative, sum to one within
    /// [`NORMALIZATION_TOL`] and put no mass on degree zero.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        let dist = Self::build(coeffs, false)?;
        if dist.coeffs[0] != 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "degree 0 carries weight {}; every user must transmit at least once",
                dist.coeffs[0]
            )));
        }
        Ok(dist)
    }

    /// Builds a distribution from a sparse `degree -> weight` map, the form
    /// used in configuration files.
    pub fn from_weights(weights: &BTreeMap<usize, f64>) -> Result<Self> {
        let max_degree = weights
            .keys()
            .next_back()
            .copied()
            .ok_or_else(|| Error::InvalidDistribution("no degrees given".to_string()))?;
        let mut coeffs = vec![0.0; max_degree + 1];
        for (&degree, &weight) in weights {
            coeffs[degree] = weight;
        }
        Self::new(coeffs)
    }

    /// All users transmit exactly `degree` copies, `Λ(x) = x^degree`.
    pub fn point_mass(degree: usize) -> Result<Self> {
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[degree] = 1.0;
        Self::new(coeffs)
    }

    /// Truncated soliton-like law `Λ_{k+1} = 1 / (k (k + 1))` for
    /// `k = 1, …, k_max - 1`, with the leftover mass `1 / k_max` placed on
    /// the top degree `k_max + 1`.
    pub fn soliton_like(k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::Domain {
                what: "k_max",
                value: 0.0,
                range: "[1, inf)",
            });
        }
        let mut coeffs = vec![0.0; k_max + 2];
        let mut placed = 0.0;
        for k in 1..k_max {
            let w = 1.0 / (k as f64 * (k as f64 + 1.0));
            coeffs[k + 1] = w;
            placed += w;
        }
        coeffs[k_max + 1] += 1.0 - placed;
        Self::new(coeffs)
    }

    fn build(mut coeffs: Vec<f64>, erased: bool) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidDistribution("no coefficients".to_string()));
        }
        for (degree, &w) in coeffs.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "weight of degree {degree} is {w}"
                )));
            }
        }
        let total: f64 = coeffs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        let deriv: Vec<f64> = coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(l, &w)| l as f64 * w)
            .collect();
        let mean = deriv.iter().sum();
        Ok(Self {
            coeffs,
            deriv,
            mean,
            erased,
        })
    }

    /// `Λ_ℓ` for `ℓ = 0..=max_degree`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Nonzero weights keyed by degree.
    pub fn weights(&self) -> BTreeMap<usize, f64> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(l, &w)| (l, w))
            .collect()
    }

    pub fn max_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `Λ_ℓ`, zero beyond the maximum degree.
    pub fn weight(&self, degree: usize) -> f64 {
        self.coeffs.get(degree).copied().unwrap_or(0.0)
    }

    pub fn is_erased(&self) -> bool {
        self.erased
    }

    /// True when every user transmits at least twice (`Λ_0 = Λ_1 = 0`), which
    /// makes `λ` a strictly increasing bijection of `[0, 1]`.
    pub fn min_degree_two(&self) -> bool {
        self.weight(0) == 0.0 && self.weight(1) == 0.0
    }

    /// `Λ(x) = Σ Λ_ℓ x^ℓ`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        check_unit("x", x)?;
        Ok(self.gf(x))
    }

    /// `Λ'(x)`.
    pub fn eval_derivative(&self, x: f64) -> Result<f64> {
        check_unit("x", x)?;
        Ok(self.gf_derivative(x))
    }

    /// Mean degree `Λ'(1) = Σ ℓ Λ_ℓ`.
    pub fn mean_degree(&self) -> f64 {
        self.mean
    }

    /// Excess degree generating function `λ(x) = Λ'(x) / Λ'(1)`.
    pub fn eval_excess(&self, x: f64) -> Result<f64> {
        check_unit("x", x)?;
        Ok(self.excess(x))
    }

    /// Solves `λ(p) = q` for `p` by bisection.
    pub fn inverse_excess(&self, q: f64) -> Result<f64> {
        check_unit("q", q)?;
        if !self.min_degree_two() {
            return Err(Error::Precondition(format!(
                "λ is not invertible on [0, 1]: Λ_0 = {}, Λ_1 = {}",
                self.weight(0),
                self.weight(1)
            )));
        }
        if q == 0.0 || q == 1.0 {
            return Ok(q);
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..INVERSE_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if self.excess(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < INVERSE_TOL {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Distribution of the number of copies that survive independent erasure
    /// with probability `p_era`: `Λ̃(x) = Λ(p_era + (1 - p_era) x)`.
    ///
    /// The result may put mass on degree zero and is flagged as erased.
    pub fn erasure_transform(&self, p_era: f64) -> Result<Self> {
        check_unit("p_era", p_era)?;
        if p_era == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 - p_era;
        let mut out = vec![0.0; self.coeffs.len()];
        for (l, &w) in self.coeffs.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (m, slot) in out.iter_mut().enumerate().take(l + 1) {
                *slot += w * binomial_pmf(l, m, keep);
            }
        }
        // Remove the rounding drift accumulated by the expansion.
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|c| *c /= total);
        Self::build(out, true)
    }

    pub(crate) fn gf(&self, x: f64) -> f64 {
        horner(&self.coeffs, x)
    }

    pub(crate) fn gf_derivative(&self, x: f64) -> f64 {
        horner(&self.deriv, x)
    }

    /// `λ(x)`; a distribution without edges (all mass on degree zero) has no
    /// edge perspective and maps everything to zero.
    pub(crate) fn excess(&self, x: f64) -> f64 {
        if self.mean == 0.0 {
            return 0.0;
        }
        (horner(&self.deriv, x) / self.mean).clamp(0.0, 1.0)
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let ln = ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln();
    ln.exp()
}

pub(crate) fn ln_choose(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mix() -> DegreeDistribution {
        DegreeDistribution::from_weights(&BTreeMap::from([(2, 0.5102), (4, 0.4898)])).unwrap()
    }

    // Power-sum evaluation, kept apart from the Horner path it checks.
    fn naive(coeffs: &[f64], x: f64) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(l, c)| c * x.powi(l as i32))
            .sum()
    }

    #[test]
    fn generating_function_examples() {
        let x5 = DegreeDistribution::point_mass(5).unwrap();
        assert_eq!(x5.eval(1.0).unwrap(), 1.0);
        assert_eq!(x5.eval(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(mix().eval(0.5).unwrap(), 0.1581625, epsilon = 1e-15);
        assert_abs_diff_eq!(
            mix().eval(0.37).unwrap(),
            naive(mix().coeffs(), 0.37),
            epsilon = 1e-15
        );
    }

    #[test]
    fn domain_errors() {
        let d = mix();
        assert!(matches!(d.eval(1.5), Err(Error::Domain { .. })));
        assert!(matches!(d.eval(-0.1), Err(Error::Domain { .. })));
        assert!(matches!(d.eval_excess(f64::NAN), Err(Error::Domain { .. })));
        assert!(matches!(
            d.erasure_transform(1.1),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn mean_degree_examples() {
        assert_eq!(
            DegreeDistribution::point_mass(5).unwrap().mean_degree(),
            5.0
        );
        assert_abs_diff_eq!(mix().mean_degree(), 2.9796, epsilon = 1e-12);

        let sol = DegreeDistribution::soliton_like(100).unwrap();
        // Σ (k+1) Λ_{k+1} = Σ_{k<100} 1/k + 101/100 = H_99 + 1.01
        let harmonic: f64 = (1..100).map(|k| 1.0 / k as f64).sum();
        assert_abs_diff_eq!(sol.mean_degree(), harmonic + 1.01, epsilon = 1e-12);
    }

    #[test]
    fn excess_examples() {
        let x5 = DegreeDistribution::point_mass(5).unwrap();
        assert_abs_diff_eq!(x5.eval_excess(0.5).unwrap(), 0.0625, epsilon = 1e-15);
        assert_abs_diff_eq!(mix().eval_excess(1.0).unwrap(), 1.0, epsilon = 1e-15);
        let expected = (1.0204 * 0.5 + 1.9592 * 0.125) / 2.9796;
        assert_abs_diff_eq!(mix().eval_excess(0.5).unwrap(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(expected, 0.253423278, epsilon = 1e-9);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let d = mix();
        let h = 1e-6;
        for &x in &[0.1, 0.4, 0.8] {
            let fd = (naive(d.coeffs(), x + h) - naive(d.coeffs(), x - h)) / (2.0 * h);
            assert_abs_diff_eq!(d.eval_derivative(x).unwrap(), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn inverse_excess_examples() {
        let x5 = DegreeDistribution::point_mass(5).unwrap();
        assert_abs_diff_eq!(x5.inverse_excess(0.0625).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(x5.inverse_excess(0.0).unwrap(), 0.0);
        assert_eq!(x5.inverse_excess(1.0).unwrap(), 1.0);

        let with_ones =
            DegreeDistribution::from_weights(&BTreeMap::from([(1, 0.2), (3, 0.8)])).unwrap();
        assert!(!with_ones.min_degree_two());
        assert!(matches!(
            with_ones.inverse_excess(0.5),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn erasure_examples() {
        let d = mix();
        assert_eq!(d.erasure_transform(0.0).unwrap(), d);

        let gone = d.erasure_transform(1.0).unwrap();
        assert_eq!(gone.coeffs(), &[1.0]);
        assert!(gone.is_erased());
        assert_eq!(gone.mean_degree(), 0.0);

        let x2 = DegreeDistribution::point_mass(2).unwrap();
        let half = x2.erasure_transform(0.5).unwrap();
        for (got, want) in half.coeffs().iter().zip([0.25, 0.5, 0.25]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn erased_generating_function_is_a_composition() {
        let d = mix();
        let p = 0.3;
        let e = d.erasure_transform(p).unwrap();
        for &x in &[0.0, 0.25, 0.6, 1.0] {
            assert_abs_diff_eq!(e.gf(x), d.gf(p + (1.0 - p) * x), epsilon = 1e-14);
        }
    }

    #[test]
    fn soliton_examples() {
        let one = DegreeDistribution::soliton_like(1).unwrap();
        assert_eq!(one.coeffs(), &[0.0, 0.0, 1.0]);

        let two = DegreeDistribution::soliton_like(2).unwrap();
        assert_abs_diff_eq!(two.weight(2), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(two.weight(3), 0.5, epsilon = 1e-15);

        for k in [3, 17, 300] {
            let s = DegreeDistribution::soliton_like(k).unwrap();
            assert_abs_diff_eq!(s.coeffs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(s.min_degree_two());
            assert_eq!(s.max_degree(), k + 1);
        }
        assert!(DegreeDistribution::soliton_like(0).is_err());
    }

    #[test]
    fn validation_rejects_bad_weights() {
        assert!(DegreeDistribution::new(vec![0.0, 0.0, 0.5]).is_err());
        assert!(DegreeDistribution::new(vec![0.0, -0.1, 1.1]).is_err());
        assert!(DegreeDistribution::new(vec![0.5, 0.5]).is_err());
        assert!(DegreeDistribution::new(vec![]).is_err());
        assert!(DegreeDistribution::from_weights(&BTreeMap::new()).is_err());
        assert!(DegreeDistribution::new(vec![0.0, 0.0, 1.0 + 1e-13]).is_ok());
    }
}
