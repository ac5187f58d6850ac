//! Finite-size simulation of the user–receiver graph with SIC peeling.
//!
//! Each trial places users and receivers, draws every random quantity the
//! decoder will need up front (copy placement, fades, sub-slot choices,
//! receiver error flags, per-copy cancellation failures), then peels to a
//! fixpoint. Decoded copies are consumed at their receiver; a resolved
//! user's remaining copies are cancelled everywhere except those whose
//! cancellation was drawn to fail, which stay as permanent interference.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::SystemConfig;
use crate::receivers::{db_to_linear, ReceiverKind};

/// Simulation settings shared by every trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Cap on synchronous peeling rounds.
    pub max_iter: usize,
    /// Draw class sizes from `Poisson(G_k T)` instead of rounding `G_k T`.
    pub poisson_users: bool,
    /// Worker threads for [`run_trials`]; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            poisson_users: false,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CopyRec {
    user: u32,
    receiver: u32,
    sic_fails: bool,
    /// Fade power for Rayleigh receivers.
    fade: f64,
    /// Sub-slot (0 or 1) inside a cooperative unit.
    subslot: u8,
}

/// Decoder behaviour of one receiver class, resolved to linear units.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Decoder {
    Capacity(usize),
    Cooperative,
    Rayleigh { gamma: f64, b: f64 },
}

/// One random realization of the bipartite graph.
#[derive(Debug, Clone)]
pub struct BipartiteInstance {
    t: usize,
    user_class: Vec<u8>,
    users_per_class: Vec<usize>,
    /// Copies of user `u` are `copies[user_start[u]..user_start[u + 1]]`.
    user_start: Vec<u32>,
    copies: Vec<CopyRec>,
    receiver_class: Vec<u8>,
    receiver_start: Vec<u32>,
    /// Copy ids grouped by receiver.
    receiver_copies: Vec<u32>,
    receiver_broken: Vec<bool>,
    decoders: Vec<Decoder>,
}

/// Sizes of the receiver classes: `F_j T` rounded down, with the remaining
/// receivers handed to the largest fractional parts (lowest index first on
/// ties).
pub fn receiver_counts(fractions: &[f64], t: usize) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * t as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    for &j in order.iter().cycle().take(t.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Seed of trial `i`: a SplitMix64 finalizer over the seed and counter.
pub fn trial_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add((i + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws an instance with `T = t` receivers at offered load `g`.
pub fn build_instance(
    config: &SystemConfig,
    g: &[f64],
    t: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<BipartiteInstance> {
    config.check_loads(g)?;
    if t == 0 {
        return Err(Error::Domain {
            what: "T",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    let k = config.num_user_classes();
    if k > u8::MAX as usize || config.num_receiver_classes() > u8::MAX as usize {
        return Err(Error::ResourceLimit(
            "at most 255 user and receiver classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fractions: Vec<f64> = config.receivers().iter().map(|r| r.fraction).collect();
    let counts = receiver_counts(&fractions, t);
    let mut class_offset = Vec::with_capacity(counts.len());
    let mut receiver_class = Vec::with_capacity(t);
    for (j, &n) in counts.iter().enumerate() {
        class_offset.push(receiver_class.len());
        receiver_class.extend(std::iter::repeat_n(j as u8, n));
    }
    let receiver_broken: Vec<bool> = receiver_class
        .iter()
        .map(|&j| match config.receivers()[j as usize].model.kind() {
            ReceiverKind::DFoldWithErrors { p_err, .. } => rng.gen_bool(p_err),
            _ => false,
        })
        .collect();
    let decoders: Vec<Decoder> = config
        .receivers()
        .iter()
        .map(|r| match r.model.kind() {
            ReceiverKind::SlottedAloha => Decoder::Capacity(1),
            ReceiverKind::DFold { d } | ReceiverKind::DFoldWithErrors { d, .. } => {
                Decoder::Capacity(d as usize)
            }
            ReceiverKind::CooperativeSa => Decoder::Cooperative,
            ReceiverKind::Rayleigh { gamma_db, b_db } => Decoder::Rayleigh {
                gamma: db_to_linear(gamma_db),
                b: db_to_linear(b_db),
            },
        })
        .collect();

    let mut users_per_class = Vec::with_capacity(k);
    for &gk in g {
        let mean = gk * t as f64;
        let n = if opts.poisson_users && mean > 0.0 {
            let d = Poisson::new(mean).map_err(|e| Error::ResourceLimit(e.to_string()))?;
            let draw: f64 = d.sample(&mut rng);
            draw as usize
        } else {
            mean.round() as usize
        };
        users_per_class.push(n);
    }
    let total_users: usize = users_per_class.iter().sum();
    if total_users >= u32::MAX as usize {
        return Err(Error::ResourceLimit(format!("{total_users} users")));
    }

    let mut user_class = Vec::with_capacity(total_users);
    let mut user_start = Vec::with_capacity(total_users + 1);
    let mut copies = Vec::new();
    for (c, &n) in users_per_class.iter().enumerate() {
        let degree = WeightedIndex::new(config.degrees()[c].coeffs())
            .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
        let route = WeightedIndex::new(&config.routing()[c])
            .map_err(|e| Error::InvalidSystem(e.to_string()))?;
        for _ in 0..n {
            let user = user_class.len() as u32;
            user_class.push(c as u8);
            user_start.push(copies.len() as u32);
            let ell = degree.sample(&mut rng);
            for _ in 0..ell {
                if config.p_era() > 0.0 && rng.gen_bool(config.p_era()) {
                    continue;
                }
                let j = route.sample(&mut rng);
                let sic_fails = config.p_sic() > 0.0 && rng.gen_bool(config.p_sic());
                if counts[j] == 0 {
                    continue;
                }
                let receiver = (class_offset[j] + rng.gen_range(0..counts[j])) as u32;
                let (fade, subslot) = match decoders[j] {
                    Decoder::Rayleigh { .. } => (Exp1.sample(&mut rng), 0),
                    Decoder::Cooperative => (0.0, rng.gen_range(0..2u8)),
                    Decoder::Capacity(_) => (0.0, 0),
                };
                copies.push(CopyRec {
                    user,
                    receiver,
                    sic_fails,
                    fade,
                    subslot,
                });
            }
        }
    }
    user_start.push(copies.len() as u32);

    let mut receiver_start = vec![0u32; t + 1];
    for cp in &copies {
        receiver_start[cp.receiver as usize + 1] += 1;
    }
    for r in 0..t {
        receiver_start[r + 1] += receiver_start[r];
    }
    let mut fill = receiver_start.clone();
    let mut receiver_copies = vec![0u32; copies.len()];
    for (id, cp) in copies.iter().enumerate() {
        let slot = &mut fill[cp.receiver as usize];
        receiver_copies[*slot as usize] = id as u32;
        *slot += 1;
    }

    Ok(BipartiteInstance {
        t,
        user_class,
        users_per_class,
        user_start,
        copies,
        receiver_class,
        receiver_start,
        receiver_copies,
        receiver_broken,
        decoders,
    })
}

impl BipartiteInstance {
    pub fn num_receivers(&self) -> usize {
        self.t
    }

    pub fn users_per_class(&self) -> &[usize] {
        &self.users_per_class
    }

    pub fn num_copies(&self) -> usize {
        self.copies.len()
    }

    /// Number of copies each user transmitted (after erasures).
    pub fn user_degrees(&self) -> Vec<usize> {
        self.user_start
            .windows(2)
            .map(|w| (w[1] - w[0]) as usize)
            .collect()
    }

    pub fn receiver_class(&self, r: usize) -> usize {
        self.receiver_class[r] as usize
    }

    /// Copies of class-`k` users at each receiver.
    pub fn receiver_loads(&self, k: usize) -> Vec<usize> {
        (0..self.t)
            .map(|r| {
                self.receiver_copy_ids(r)
                    .filter(|&c| self.user_class[self.copies[c].user as usize] as usize == k)
                    .count()
            })
            .collect()
    }

    fn receiver_copy_ids(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        let (a, b) = (
            self.receiver_start[r] as usize,
            self.receiver_start[r + 1] as usize,
        );
        self.receiver_copies[a..b].iter().map(|&c| c as usize)
    }

    fn user_copy_ids(&self, u: usize) -> std::ops::Range<usize> {
        self.user_start[u] as usize..self.user_start[u + 1] as usize
    }
}

/// Order in which receivers are visited while peeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// All receivers decode on the same state, then cancellations apply.
    Synchronous,
    /// One receiver at a time in random order, cancelling immediately.
    Shuffled(u64),
}

/// Final state of a peeling run.
#[derive(Debug, Clone, PartialEq)]
pub struct PeelResult {
    pub resolved: Vec<bool>,
    pub resolved_per_class: Vec<usize>,
    pub users_per_class: Vec<usize>,
    /// Rounds for the synchronous schedule, single-receiver steps otherwise.
    pub iterations: usize,
    pub converged: bool,
    /// Copies of resolved users still present in the graph.
    pub residual_resolved_copies: usize,
    /// Resolved-user count after each synchronous round.
    pub history: Vec<usize>,
}

impl PeelResult {
    /// Fraction of class-`k` users resolved; 1 for an empty class.
    pub fn success_fraction(&self, k: usize) -> f64 {
        match self.users_per_class[k] {
            0 => 1.0,
            n => self.resolved_per_class[k] as f64 / n as f64,
        }
    }
}

/// Peels `instance` to a fixpoint or `max_iter` synchronous rounds.
pub fn peel(instance: &BipartiteInstance, max_iter: usize) -> PeelResult {
    peel_with(instance, max_iter, Schedule::Synchronous)
}

pub fn peel_with(instance: &BipartiteInstance, max_iter: usize, schedule: Schedule) -> PeelResult {
    let mut p = Peeler::new(instance);
    let (iterations, converged, history) = match schedule {
        Schedule::Synchronous => p.run_synchronous(max_iter),
        Schedule::Shuffled(seed) => p.run_shuffled(seed),
    };
    let k = instance.users_per_class.len();
    let mut resolved_per_class = vec![0; k];
    for (u, &done) in p.resolved.iter().enumerate() {
        if done {
            resolved_per_class[instance.user_class[u] as usize] += 1;
        }
    }
    let residual_resolved_copies = instance
        .copies
        .iter()
        .zip(&p.present)
        .filter(|(cp, &here)| here && p.resolved[cp.user as usize])
        .count();
    PeelResult {
        resolved: p.resolved,
        resolved_per_class,
        users_per_class: instance.users_per_class.clone(),
        iterations,
        converged,
        residual_resolved_copies,
        history,
    }
}

struct Peeler<'a> {
    inst: &'a BipartiteInstance,
    present: Vec<bool>,
    resolved: Vec<bool>,
    queued: Vec<bool>,
    scratch: Vec<usize>,
    decoded: Vec<usize>,
}

impl<'a> Peeler<'a> {
    fn new(inst: &'a BipartiteInstance) -> Self {
        Self {
            inst,
            present: vec![true; inst.copies.len()],
            resolved: vec![false; inst.user_class.len()],
            queued: vec![false; inst.t],
            scratch: Vec::new(),
            decoded: Vec::new(),
        }
    }

    fn run_synchronous(&mut self, max_iter: usize) -> (usize, bool, Vec<usize>) {
        let mut dirty: Vec<usize> = (0..self.inst.t).collect();
        let mut newly = Vec::new();
        let mut history = Vec::new();
        let mut total = 0;
        let mut rounds = 0;
        while !dirty.is_empty() {
            if rounds == max_iter {
                return (rounds, false, history);
            }
            rounds += 1;
            for &r in &dirty {
                self.decode(r);
                for i in 0..self.decoded.len() {
                    let c = self.decoded[i];
                    self.present[c] = false;
                    let u = self.inst.copies[c].user as usize;
                    if !self.resolved[u] {
                        self.resolved[u] = true;
                        newly.push(u);
                    }
                }
            }
            total += newly.len();
            history.push(total);
            dirty.clear();
            for u in newly.drain(..) {
                self.cancel(u, &mut dirty);
            }
            for &r in &dirty {
                self.queued[r] = false;
            }
        }
        (rounds, true, history)
    }

    fn run_shuffled(&mut self, seed: u64) -> (usize, bool, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut work: Vec<usize> = (0..self.inst.t).collect();
        work.shuffle(&mut rng);
        self.queued.iter_mut().for_each(|q| *q = true);
        let mut steps = 0;
        while !work.is_empty() {
            let r = work.swap_remove(rng.gen_range(0..work.len()));
            self.queued[r] = false;
            steps += 1;
            self.decode(r);
            let decoded = std::mem::take(&mut self.decoded);
            for &c in &decoded {
                self.present[c] = false;
            }
            for &c in &decoded {
                let u = self.inst.copies[c].user as usize;
                if !self.resolved[u] {
                    self.resolved[u] = true;
                    self.cancel(u, &mut work);
                }
            }
            self.decoded = decoded;
        }
        (steps, true, Vec::new())
    }

    /// Removes the remaining copies of `u` whose cancellation succeeds and
    /// queues their receivers.
    fn cancel(&mut self, u: usize, dirty: &mut Vec<usize>) {
        for c in self.inst.user_copy_ids(u) {
            let cp = &self.inst.copies[c];
            if self.present[c] && !cp.sic_fails {
                self.present[c] = false;
                let r = cp.receiver as usize;
                if !self.queued[r] {
                    self.queued[r] = true;
                    dirty.push(r);
                }
            }
        }
    }

    /// Fills `self.decoded` with the copies receiver `r` decodes from its
    /// present copies.
    fn decode(&mut self, r: usize) {
        self.decoded.clear();
        if self.inst.receiver_broken[r] {
            return;
        }
        self.scratch.clear();
        let present = &self.present;
        self.scratch
            .extend(self.inst.receiver_copy_ids(r).filter(|&c| present[c]));
        if self.scratch.is_empty() {
            return;
        }
        match self.inst.decoders[self.inst.receiver_class[r] as usize] {
            Decoder::Capacity(d) => {
                if self.scratch.len() <= d {
                    self.decoded.extend_from_slice(&self.scratch);
                }
            }
            Decoder::Rayleigh { gamma, b } => {
                let copies = &self.inst.copies;
                self.scratch
                    .sort_by(|&a, &c| copies[c].fade.total_cmp(&copies[a].fade));
                let fades: Vec<f64> = self.scratch.iter().map(|&c| copies[c].fade).collect();
                let n = sic_decodes_sorted(&fades, gamma, b);
                self.decoded.extend_from_slice(&self.scratch[..n]);
            }
            Decoder::Cooperative => self.decode_cooperative(),
        }
    }

    /// Two slotted-ALOHA sub-slots sharing decoded packets. Copies of the
    /// first user class occupy both sub-slots, others occupy one.
    fn decode_cooperative(&mut self) {
        let inst = self.inst;
        let in_slot = |c: usize, s: u8| {
            inst.user_class[inst.copies[c].user as usize] == 0 || inst.copies[c].subslot == s
        };
        let mut left = std::mem::take(&mut self.scratch);
        loop {
            let mut progress = false;
            for s in 0..2u8 {
                let mut only = None;
                let mut count = 0;
                for &c in &left {
                    if in_slot(c, s) {
                        count += 1;
                        only = Some(c);
                    }
                }
                if count == 1 {
                    let c = only.expect("one copy counted");
                    self.decoded.push(c);
                    left.retain(|&x| x != c);
                    progress = true;
                }
            }
            if !progress {
                break;
            }
        }
        self.scratch = left;
    }
}

/// Copies decoded by strongest-first SIC in one Rayleigh slot; `fades` must
/// be sorted in decreasing order. The strongest remaining copy is decoded
/// while its SINR against the rest plus noise `1/γ` is at least `b`.
fn sic_decodes_sorted(fades: &[f64], gamma: f64, b: f64) -> usize {
    let mut interference: f64 = fades.iter().sum();
    let noise = 1.0 / gamma;
    for (i, &x) in fades.iter().enumerate() {
        interference -= x;
        if x < b * (interference.max(0.0) + noise) {
            return i;
        }
    }
    fades.len()
}

/// Number of packets decoded in an isolated Rayleigh slot with the given
/// fade powers.
pub fn rayleigh_slot_decodes(fades: &[f64], gamma_db: f64, b_db: f64) -> usize {
    let mut sorted = fades.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sic_decodes_sorted(&sorted, db_to_linear(gamma_db), db_to_linear(b_db))
}

/// Aggregate over independent trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    /// Mean per-class success fraction.
    pub success: Vec<f64>,
    /// Standard error of `success`; see [`run_trials`].
    pub stderr: Vec<f64>,
    /// Mean resolved class-`k` users per receiver.
    pub throughput: Vec<f64>,
    pub throughput_total: f64,
    pub throughput_total_stderr: f64,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub unconverged_trials: usize,
    pub seed: u64,
    pub t: usize,
    pub trials: usize,
}

/// Runs `trials` independent instances seeded by [`trial_seed`] and averages
/// the per-trial success fractions.
///
/// The standard error of each class is the larger of the across-trial
/// sample error and the binomial error of the pooled user count, with the
/// Agresti–Coull adjustment `(s + 2) / (n + 4)`. The binomial term keeps the
/// error positive when every simulated user succeeds.
pub fn run_trials(
    config: &SystemConfig,
    g: &[f64],
    t: usize,
    trials: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimOutcome> {
    if trials == 0 {
        return Err(Error::Domain {
            what: "trials",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    config.check_loads(g)?;
    let one = |i: usize| -> Result<PeelResult> {
        let inst = build_instance(config, g, t, trial_seed(seed, i as u64), opts)?;
        Ok(peel(&inst, opts.max_iter))
    };
    let run = || {
        (0..trials)
            .into_par_iter()
            .map(one)
            .collect::<Result<Vec<_>>>()
    };
    let results = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::ResourceLimit(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(summarize(&results, g, t, seed))
}

fn summarize(results: &[PeelResult], g: &[f64], t: usize, seed: u64) -> SimOutcome {
    let k = g.len();
    let n = results.len() as f64;
    let mut success = vec![0.0; k];
    let mut stderr = vec![0.0; k];
    let mut throughput = vec![0.0; k];
    for c in 0..k {
        let fractions: Vec<f64> = results.iter().map(|r| r.success_fraction(c)).collect();
        let (mean, se) = mean_and_se(&fractions);
        let users: usize = results.iter().map(|r| r.users_per_class[c]).sum();
        let hits: usize = results.iter().map(|r| r.resolved_per_class[c]).sum();
        let binomial = if users == 0 {
            0.0
        } else {
            let p = (hits as f64 + 2.0) / (users as f64 + 4.0);
            (p * (1.0 - p) / (users as f64 + 4.0)).sqrt()
        };
        success[c] = mean;
        stderr[c] = se.max(binomial);
        throughput[c] = results
            .iter()
            .map(|r| r.resolved_per_class[c] as f64 / t as f64)
            .sum::<f64>()
            / n;
    }
    let totals: Vec<f64> = results
        .iter()
        .map(|r| r.resolved_per_class.iter().sum::<usize>() as f64 / t as f64)
        .collect();
    let (throughput_total, total_se) = mean_and_se(&totals);
    let binomial_total = g
        .iter()
        .zip(&stderr)
        .map(|(gk, se)| (gk * se).powi(2))
        .sum::<f64>()
        .sqrt();
    SimOutcome {
        success,
        stderr,
        throughput,
        throughput_total,
        throughput_total_stderr: total_se.max(binomial_total),
        mean_iterations: results.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
        max_iterations: results.iter().map(|r| r.iterations).max().unwrap_or(0),
        unconverged_trials: results.iter().filter(|r| !r.converged).count(),
        seed,
        t,
        trials: results.len(),
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
