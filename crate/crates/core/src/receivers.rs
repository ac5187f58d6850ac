//! Poisson receiver models.
//!
//! A Poisson receiver is summarized by the probability that a tagged packet
//! of each class gets through when the per-class arrivals are independent
//! Poisson variables with means `ρ = (ρ_1, …, ρ_K)`.

use serde::{Deserialize, Serialize};

use crate::degree::ln_factorial;
use crate::error::{check_len, Error, Result};

/// Poisson tail mass tolerated when truncating the Rayleigh double sum.
const RAYLEIGH_TAIL_TOL: f64 = 1e-12;

/// Mean Poisson arrivals per receiver for each user class (packets/slot).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadVector(Vec<f64>);

impl LoadVector {
    pub fn new(loads: Vec<f64>) -> Result<Self> {
        for &rho in &loads {
            if !rho.is_finite() || rho < 0.0 {
                return Err(Error::Domain {
                    what: "load",
                    value: rho,
                    range: "[0, inf)",
                });
            }
        }
        Ok(Self(loads))
    }

    pub fn zeros(classes: usize) -> Self {
        Self(vec![0.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Physical-layer behaviour of a receiver, as declared in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReceiverKind {
    /// Single-packet collision channel.
    SlottedAloha,
    /// Up to `d` simultaneous packets are decoded.
    #[serde(rename = "dfold")]
    DFold { d: u32 },
    /// D-fold ALOHA that fails outright with probability `p_err`.
    #[serde(rename = "dfold_errors")]
    DFoldWithErrors { d: u32, p_err: f64 },
    /// Two cooperating slotted-ALOHA receivers serving a class sent to both
    /// (the first user class) and a class sent to one at random (the second).
    CooperativeSa,
    /// Rayleigh block fading with capture and intra-slot SIC.
    Rayleigh { gamma_db: f64, b_db: f64 },
}

impl ReceiverKind {
    pub fn name(&self) -> &'static str {
        match self {
            ReceiverKind::SlottedAloha => "slotted_aloha",
            ReceiverKind::DFold { .. } => "dfold",
            ReceiverKind::DFoldWithErrors { .. } => "dfold_errors",
            ReceiverKind::CooperativeSa => "cooperative_sa",
            ReceiverKind::Rayleigh { .. } => "rayleigh",
        }
    }
}

/// `10^{x/10}`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// A receiver model bound to the number of user classes it serves.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverModel {
    kind: ReceiverKind,
    num_classes: usize,
    rayleigh: Option<Rayleigh>,
}

impl ReceiverModel {
    pub fn new(kind: ReceiverKind, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidModel(
                "a receiver must serve at least one class".into(),
            ));
        }
        let mut rayleigh = None;
        match kind {
            ReceiverKind::SlottedAloha => {}
            ReceiverKind::DFold { d } => check_d(d)?,
            ReceiverKind::DFoldWithErrors { d, p_err } => {
                check_d(d)?;
                if !(0.0..=1.0).contains(&p_err) {
                    return Err(Error::InvalidModel(format!(
                        "p_err = {p_err} is outside [0, 1]"
                    )));
                }
            }
            ReceiverKind::CooperativeSa => {
                if num_classes != 2 {
                    return Err(Error::InvalidModel(format!(
                        "the cooperative receiver serves exactly 2 classes, not {num_classes}"
                    )));
                }
            }
            ReceiverKind::Rayleigh { gamma_db, b_db } => {
                if !gamma_db.is_finite() || !b_db.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "gamma_db = {gamma_db} and b_db = {b_db} must be finite"
                    )));
                }
                rayleigh = Some(Rayleigh::new(db_to_linear(gamma_db), db_to_linear(b_db)));
            }
        }
        Ok(Self {
            kind,
            num_classes,
            rayleigh,
        })
    }

    pub fn slotted_aloha(num_classes: usize) -> Self {
        Self::new(ReceiverKind::SlottedAloha, num_classes).expect("valid model")
    }

    pub fn kind(&self) -> ReceiverKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-class success probabilities `(P_suc,1(ρ), …, P_suc,K(ρ))`.
    pub fn success_prob(&self, rho: &LoadVector) -> Result<Vec<f64>> {
        check_len("load vector", self.num_classes, rho.len())?;
        let mut out = vec![0.0; self.num_classes];
        self.success_into(rho.as_slice(), &mut out);
        Ok(out)
    }

    /// Success probability at zero load, the model's noise/error floor.
    pub fn floor(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        self.success_into(&vec![0.0; self.num_classes], &mut out);
        out
    }

    /// Unchecked evaluation used on hot paths; `rho` and `out` have
    /// `num_classes` entries and `rho` is nonnegative.
    pub(crate) fn success_into(&self, rho: &[f64], out: &mut [f64]) {
        match self.kind {
            ReceiverKind::SlottedAloha => out.fill((-total(rho)).exp()),
            ReceiverKind::DFold { d } => out.fill(poisson_cdf_below(d, total(rho))),
            ReceiverKind::DFoldWithErrors { d, p_err } => {
                out.fill((1.0 - p_err) * poisson_cdf_below(d, total(rho)))
            }
            ReceiverKind::CooperativeSa => {
                let (both, one) = (rho[0], rho[1]);
                let half = (-(both + 0.5 * one)).exp();
                let full = (-(both + one)).exp();
                out[0] = 2.0 * half - full;
                out[1] = half + both * full;
            }
            ReceiverKind::Rayleigh { .. } => {
                let p = self
                    .rayleigh
                    .as_ref()
                    .expect("rayleigh parameters cached")
                    .success(total(rho));
                out.fill(p);
            }
        }
    }

    /// Largest componentwise increase of the success function found over
    /// `samples` random ordered load pairs in `[0, max_load]^K`.
    ///
    /// Used to spot-check that the model is nonincreasing in the load.
    pub fn max_monotonicity_violation(&self, max_load: f64, samples: usize, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = self.num_classes;
        let (mut lo, mut hi) = (vec![0.0; k], vec![0.0; k]);
        let (mut p_lo, mut p_hi) = (vec![0.0; k], vec![0.0; k]);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            for c in 0..k {
                let a: f64 = rng.gen::<f64>() * max_load;
                let b: f64 = rng.gen::<f64>() * max_load;
                lo[c] = a.min(b);
                hi[c] = a.max(b);
            }
            self.success_into(&lo, &mut p_lo);
            self.success_into(&hi, &mut p_hi);
            for c in 0..k {
                worst = worst.max(p_hi[c] - p_lo[c]);
            }
        }
        worst
    }
}

fn check_d(d: u32) -> Result<()> {
    if d == 0 {
        Err(Error::InvalidModel("D must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn total(rho: &[f64]) -> f64 {
    rho.iter().sum()
}

/// `P(Poisson(mean) < d) = Σ_{t<d} e^{-mean} mean^t / t!`.
fn poisson_cdf_below(d: u32, mean: f64) -> f64 {
    let mut term = (-mean).exp();
    let mut sum = 0.0;
    for t in 0..d {
        sum += term;
        term *= mean / (t + 1) as f64;
    }
    sum.min(1.0)
}

/// Cached linear-scale parameters of the Rayleigh capture model.
#[derive(Debug, Clone, PartialEq)]
struct Rayleigh {
    gamma: f64,
    b: f64,
    ln_1b: f64,
    /// `((1 + b)^{τ+1} - 1) / γ` for τ = 0, 1, … until it exceeds the
    /// underflow horizon.
    noise: Vec<f64>,
}

impl Rayleigh {
    fn new(gamma: f64, b: f64) -> Self {
        let ln_1b = b.ln_1p();
        let mut noise = Vec::new();
        for tau in 0..4096 {
            let n = (ln_1b * (tau + 1) as f64).exp_m1() / gamma;
            noise.push(n);
            if !(n < 1e6) {
                break;
            }
        }
        Self {
            gamma,
            b,
            ln_1b,
            noise,
        }
    }

    /// Double sum over the number `t` of interfering packets and the number
    /// `τ` of packets cancelled before the tagged one.
    fn success(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return (-self.b / self.gamma).exp();
        }
        let ln_rho = rho.ln();
        // Terms with noise exponent past this point are below e^{-700}
        // relative to the largest possible ρ^τ prefactor.
        let horizon = 700.0;
        let mut ln_fact = vec![0.0_f64];
        let mut sum = 0.0;
        let mut t = 0usize;
        loop {
            while ln_fact.len() <= t + 1 {
                let n = ln_fact.len();
                ln_fact.push(ln_fact[n - 1] + (n as f64).ln());
            }
            let base = -rho + t as f64 * ln_rho;
            for tau in 0..=t {
                let Some(&noise) = self.noise.get(tau) else {
                    break;
                };
                if noise > horizon + (tau + 1) as f64 * ln_rho.max(0.0) {
                    break;
                }
                let tf = tau as f64;
                let ln_term = base
                    - ln_fact[t - tau]
                    - noise
                    - (tf + 1.0) * (t as f64 - 0.5 * tf) * self.ln_1b;
                sum += ln_term.exp();
            }
            // Upper bound on the Poisson mass beyond t, valid once t + 2 > ρ.
            let next = t as f64 + 2.0;
            if next > rho {
                let ln_pmf_next = -rho + (t + 1) as f64 * ln_rho - ln_fact[t + 1];
                if ln_pmf_next.exp() * next / (next - rho) < RAYLEIGH_TAIL_TOL {
                    break;
                }
            }
            t += 1;
        }
        sum.min(1.0)
    }
}

/// Expected number of packets decoded by strongest-first SIC in a Rayleigh
/// block-fading slot with `n` active users.
pub fn rayleigh_expected_decodes(n: usize, gamma_db: f64, b_db: f64) -> f64 {
    let gamma = db_to_linear(gamma_db);
    let ln_1b = db_to_linear(b_db).ln_1p();
    let nf = n as f64;
    let ln_fact_n = ln_factorial(n);
    (1..=n)
        .map(|r| {
            let rf = r as f64;
            let noise = (ln_1b * rf).exp_m1() / gamma;
            let ln_term = ln_fact_n
                - ln_factorial(n - r)
                - noise
                - rf * (nf - 1.0 - 0.5 * (rf - 1.0)) * ln_1b;
            ln_term.exp()
        })
        .sum()
}
