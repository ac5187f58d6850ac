//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines always
//! reach stdout. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cpr::evolution::{de_fixed_point, success_probabilities, ReceiverClass, Start};
use cpr::montecarlo::{run_trials, SimOptions};
use cpr::regions::{convexity_probe, map_region, GridSpec, MapOptions, RegionMap};
use cpr::stability::{
    classify_load, epsilon_stable, irsa_threshold, percolation_threshold_1d, Criterion,
    EpsilonSpec, Tolerances,
};
use cpr::{load_preset, DeOptions, DegreeDistribution, ReceiverKind, ReceiverModel, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn dist(weights: &[(usize, f64)]) -> DegreeDistribution {
    DegreeDistribution::from_weights(&weights.iter().copied().collect::<BTreeMap<_, _>>()).unwrap()
}

fn mixture() -> DegreeDistribution {
    dist(&[(2, 0.5102), (4, 0.4898)])
}

fn preset(name: &str) -> SystemConfig {
    load_preset(name).unwrap().1
}

fn reservation_map() -> RegionMap {
    let grid = GridSpec::uniform(2, 0.0, 0.7, 0.005).unwrap();
    map_region(
        &preset("reservation"),
        &grid,
        &Criterion::Stable,
        &Tolerances::default(),
        &MapOptions::default(),
    )
    .unwrap()
}

fn ac1() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (d, expected) in [
        (mixture(), 0.868),
        (dist(&[(2, 0.5), (3, 0.28), (8, 0.22)]), 0.938),
    ] {
        let start = Instant::now();
        let t = irsa_threshold(&d, 1e-10).unwrap();
        let took = start.elapsed();
        pass &= (t - expected).abs() <= 0.002 && took < Duration::from_secs(1);
        notes.push(format!("{t:.5} (target {expected}, {took:.2?})"));
    }
    outcome(pass, notes.join(", "))
}

fn ac2(map: &RegionMap) -> Outcome {
    let corner = map.corner().expect("stable cells exist");
    let max_g2 = map.max_load(1).expect("stable cells exist");
    let pass = (corner.g[0] - 0.494).abs() <= 0.01
        && (corner.g[1] - 0.413).abs() <= 0.01
        && (max_g2 - 0.43).abs() <= 0.01
        && map.staircase_violations() == 0;
    outcome(
        pass,
        format!(
            "corner ({:.3}, {:.3}), max G2 {max_g2:.3}, staircase violations {}",
            corner.g[0],
            corner.g[1],
            map.staircase_violations()
        ),
    )
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let tols = Tolerances::default();
    let mut pass = true;
    let mut notes = Vec::new();
    for (db, expected) in [(5, 0.756), (10, 1.086), (15, 1.215), (20, 1.270)] {
        let cfg = preset(&format!("rayleigh_{db}db"));
        let t = percolation_threshold_1d(
            &cfg,
            &[1.0],
            (0.05, 2.0),
            &Criterion::WeaklyStable,
            1e-4,
            &tols,
        )
        .unwrap();
        pass &= (t - expected).abs() <= 0.01;
        notes.push(format!("{db} dB {t:.4}"));
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(60);
    outcome(pass, format!("{} in {took:.1?}", notes.join(", ")))
}

fn ac4() -> Outcome {
    let floor20 = preset("rayleigh_20db").receivers()[0].model.floor()[0];
    let floor5 = preset("rayleigh_5db").receivers()[0].model.floor()[0];
    let cfg = preset("rayleigh_20db");
    let eps = EpsilonSpec::new(vec![0.019755]).unwrap();
    let bound = 1.0
        - epsilon_stable(&cfg, &[0.1], &eps, &Tolerances::default())
            .unwrap()
            .guaranteed_success[0];
    let pass = (floor20 - 0.980245).abs() <= 1e-6
        && (floor5 - 0.532082).abs() <= 1e-6
        && (bound - 3.00866e-9).abs() <= 1e-13;
    outcome(
        pass,
        format!("floors {floor20:.7} / {floor5:.7}, bound {bound:.6e}"),
    )
}

fn ac5() -> Outcome {
    let tols = Tolerances::default();
    let mut pass = true;
    let mut notes = Vec::new();
    for roman in ["i", "ii", "iii", "iv", "v"] {
        let cfg = preset(&format!("coop_{roman}"));
        let single = irsa_threshold(&cfg.degrees()[0], 1e-10).unwrap();
        let g3 = percolation_threshold_1d(
            &cfg,
            &[1.0, 0.0],
            (0.05, 1.5),
            &Criterion::Stable,
            1e-5,
            &tols,
        )
        .unwrap();
        let g4 = percolation_threshold_1d(
            &cfg,
            &[0.0, 1.0],
            (0.05, 3.0),
            &Criterion::Stable,
            1e-5,
            &tols,
        )
        .unwrap();
        pass &= (g3 - single).abs() <= 0.005 && (g4 - 2.0 * single).abs() <= 0.01;
        notes.push(format!("({roman}) {g3:.4}/{g4:.4} vs {single:.4}"));
    }
    // The two published endpoints.
    let iv = irsa_threshold(&preset("coop_iv").degrees()[0], 1e-10).unwrap();
    let v = irsa_threshold(&preset("coop_v").degrees()[0], 1e-10).unwrap();
    pass &= (iv - 0.868).abs() <= 0.005 && (v - 0.938).abs() <= 0.005;
    outcome(pass, notes.join(", "))
}

fn ac6(map: &RegionMap) -> Outcome {
    let best = map.max_throughput().expect("non-empty map");
    let pass = (best.total_throughput - 0.90).abs() <= 0.02
        && (best.g[0] - 0.494).abs() <= 0.05
        && (best.g[1] - 0.413).abs() <= 0.05;
    outcome(
        pass,
        format!(
            "max total {:.4} at ({:.3}, {:.3})",
            best.total_throughput, best.g[0], best.g[1]
        ),
    )
}

fn ac7(reservation: &RegionMap) -> Outcome {
    let tols = Tolerances::default();
    let trace_opts = DeOptions {
        keep_trace: true,
        ..DeOptions::default()
    };
    let policies = [
        "complete_sharing",
        "reservation",
        "partitioning",
        "nonuniform",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut failures = Vec::new();

    // Monotone iterates and ordering of the two limits.
    for i in 0..100 {
        let cfg = preset(policies[i % policies.len()]);
        let g = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let ones = de_fixed_point(&cfg, &g, Start::AllOnes, &trace_opts).unwrap();
        let zeros = de_fixed_point(&cfg, &g, Start::AllZeros, &trace_opts).unwrap();
        let down = ones
            .trace
            .as_ref()
            .unwrap()
            .windows(2)
            .all(|w| w[1].iter().zip(&w[0]).all(|(b, a)| b <= a));
        let up = zeros
            .trace
            .as_ref()
            .unwrap()
            .windows(2)
            .all(|w| w[1].iter().zip(&w[0]).all(|(b, a)| b >= a));
        let ordered = zeros.q_final.iter().zip(&ones.q_final).all(|(z, o)| z <= o);
        if !(down && up && ordered) {
            failures.push(format!("iterates at {g:?}"));
        }
    }

    // Region monotonicity on random ordered pairs.
    for i in 0..200 {
        let cfg = preset(policies[i % policies.len()]);
        let hi = [rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9)];
        let lo = [hi[0] * rng.gen::<f64>(), hi[1] * rng.gen::<f64>()];
        let v_hi = classify_load(&cfg, &hi, &tols).unwrap().class;
        let v_lo = classify_load(&cfg, &lo, &tols).unwrap().class;
        if v_hi == cpr::Verdict::Stable && v_lo != cpr::Verdict::Stable {
            failures.push(format!("monotonicity {lo:?} <= {hi:?}"));
        }
    }

    // ε nesting and shrinkage with decoding errors.
    let grid = GridSpec::uniform(2, 0.0, 1.0, 0.02).unwrap();
    let perr = preset("complete_sharing_perr");
    let eps_map = |e: f64| {
        map_region(
            &perr,
            &grid,
            &Criterion::EpsilonStable(EpsilonSpec::uniform(2, e).unwrap()),
            &tols,
            &MapOptions::default(),
        )
        .unwrap()
    };
    let maps: Vec<RegionMap> = [0.02, 0.04, 0.07].into_iter().map(eps_map).collect();
    let weak = map_region(
        &perr,
        &grid,
        &Criterion::WeaklyStable,
        &tols,
        &MapOptions::default(),
    )
    .unwrap();
    let sizes: Vec<usize> = maps
        .iter()
        .chain(std::iter::once(&weak))
        .map(|m| m.cells.iter().filter(|c| c.satisfied).count())
        .collect();
    for pair in maps.windows(2) {
        let nested = pair[0]
            .cells
            .iter()
            .zip(&pair[1].cells)
            .all(|(small, big)| !small.satisfied || big.satisfied);
        if !nested {
            failures.push("eps nesting".into());
        }
    }
    if !(sizes[0] < sizes[1] && sizes[1] < sizes[2]) {
        failures.push(format!("eps shrinkage {sizes:?}"));
    }
    // At ε = 0.07 the region is close to the weak stability region.
    let near_weak = (sizes[2] as f64) >= 0.95 * sizes[3] as f64;
    if !near_weak {
        failures.push(format!("eps=0.07 vs weak {sizes:?}"));
    }

    // Convexity probes.
    let cs = map_region(
        &preset("complete_sharing"),
        &GridSpec::uniform(2, 0.0, 1.0, 0.01).unwrap(),
        &Criterion::Stable,
        &tols,
        &MapOptions::default(),
    )
    .unwrap();
    let cs_probe = convexity_probe(&cs, 5000, 1);
    let res_probe = convexity_probe(reservation, 5000, 1);
    if !cs_probe.convex {
        failures.push(format!(
            "complete sharing witness {:?}",
            cs_probe.witnesses[0]
        ));
    }
    if res_probe.convex {
        failures.push("reservation probe found no witness".into());
    }

    outcome(
        failures.is_empty(),
        format!(
            "eps region cells {:?} (weak {}), reservation witnesses {}{}",
            &sizes[..3],
            sizes[3],
            res_probe.witnesses.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failures: {}", failures.join("; "))
            }
        ),
    )
}

fn single_class(degree: DegreeDistribution, kind: ReceiverKind) -> SystemConfig {
    SystemConfig::new(
        vec![degree],
        vec![ReceiverClass {
            fraction: 1.0,
            model: ReceiverModel::new(kind, 1).unwrap(),
        }],
        vec![vec![1.0]],
        0.0,
        0.0,
    )
    .unwrap()
}

fn ac8() -> Outcome {
    let x3 = DegreeDistribution::point_mass(3).unwrap();
    let x5 = DegreeDistribution::point_mass(5).unwrap();
    let sa_two_class = {
        let sa = ReceiverModel::slotted_aloha(2);
        SystemConfig::new(
            vec![x5.clone(), x3.clone()],
            vec![
                ReceiverClass {
                    fraction: 0.5,
                    model: sa.clone(),
                },
                ReceiverClass {
                    fraction: 0.5,
                    model: sa,
                },
            ],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
            0.0,
            0.0,
        )
        .unwrap()
    };
    let coop = SystemConfig::new(
        vec![x3.clone(), x3.clone()],
        vec![ReceiverClass {
            fraction: 1.0,
            model: ReceiverModel::new(ReceiverKind::CooperativeSa, 2).unwrap(),
        }],
        vec![vec![1.0], vec![1.0]],
        0.0,
        0.0,
    )
    .unwrap();
    let cases: Vec<(&str, SystemConfig, Vec<Vec<f64>>)> = vec![
        (
            "slotted_aloha",
            sa_two_class,
            vec![vec![0.2, 0.1], vec![0.3, 0.2], vec![0.1, 0.3]],
        ),
        (
            "dfold",
            single_class(x3.clone(), ReceiverKind::DFold { d: 2 }),
            vec![vec![0.5], vec![0.9], vec![1.2]],
        ),
        (
            "dfold_errors",
            single_class(
                x3.clone(),
                ReceiverKind::DFoldWithErrors { d: 1, p_err: 0.01 },
            ),
            vec![vec![0.3], vec![0.5], vec![0.7]],
        ),
        (
            "cooperative_sa",
            coop,
            vec![vec![0.3, 0.2], vec![0.5, 0.3], vec![0.2, 0.8]],
        ),
        (
            "rayleigh",
            single_class(
                x5,
                ReceiverKind::Rayleigh {
                    gamma_db: 10.0,
                    b_db: 3.0,
                },
            ),
            vec![vec![0.3], vec![0.6], vec![0.9]],
        ),
    ];
    let tols = Tolerances::default();
    let opts = SimOptions::default();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (name, cfg, points) in &cases {
        for (i, g) in points.iter().enumerate() {
            let v = classify_load(cfg, g, &tols).unwrap();
            if !v.class.is_weakly_stable() {
                failures.push(format!("{name} {g:?} is {}", v.class));
                continue;
            }
            let analytic = success_probabilities(cfg, g, &v.q_from_ones, &tols.de).unwrap();
            let sim = run_trials(cfg, g, 10_000, 100, 1_000 + i as u64, &opts).unwrap();
            for k in 0..g.len() {
                let z = (sim.success[k] - analytic[k]).abs() / sim.stderr[k];
                worst = worst.max(z);
                if z > 3.0 {
                    failures.push(format!(
                        "{name} {g:?} class {k}: sim {:.6} ± {:.2e} vs {:.6}",
                        sim.success[k], sim.stderr[k], analytic[k]
                    ));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} kinds x 3 points, worst |z| = {worst:.2}{}",
            cases.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    )
}

fn main() -> ExitCode {
    // `cargo test` passes filter arguments; only `--list` needs an answer.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let reservation = reservation_map();
    let results = [
        ("AC1 IRSA thresholds", ac1()),
        ("AC2 reservation corner", ac2(&reservation)),
        ("AC3 Rayleigh weak thresholds", ac3()),
        ("AC4 Rayleigh floors and eps bound", ac4()),
        ("AC5 cooperative endpoints", ac5()),
        ("AC6 reservation max throughput", ac6(&reservation)),
        ("AC7 property suite", ac7(&reservation)),
        ("AC8 Monte Carlo agreement", ac8()),
    ];
    let mut all = true;
    for (name, out) in &results {
        println!(
            "{} {name}: {}",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        all &= out.pass;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
