//! Grid maps of the load space.

use std::collections::HashMap;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::evolution::SystemConfig;
use crate::stability::{classify_load, Criterion, Tolerances, Verdict};

/// Grid step used when none is given.
pub const DEFAULT_STEP: f64 = 0.001;

/// Default cap on the number of cells in one map.
pub const DEFAULT_MAX_CELLS: usize = 5_000_000;

/// One load axis sampled at `lo, lo + step, …` up to `hi`.
///
/// `hi < lo` describes an empty axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && lo >= 0.0) {
            return Err(Error::Domain {
                what: "axis lo",
                value: lo,
                range: "[0, inf)",
            });
        }
        if !hi.is_finite() {
            return Err(Error::Domain {
                what: "axis hi",
                value: hi,
                range: "finite",
            });
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Domain {
                what: "axis step",
                value: step,
                range: "(0, inf)",
            });
        }
        Ok(Self { lo, hi, step })
    }

    pub fn len(&self) -> usize {
        if self.hi < self.lo {
            0
        } else {
            // The slack keeps `hi` itself when it sits on the lattice up to
            // rounding.
            ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidSystem("grid needs at least one axis".into()));
        }
        Ok(Self { axes })
    }

    /// The same axis `[lo, hi]` with spacing `step` on each of `k` classes.
    pub fn uniform(k: usize, lo: f64, hi: f64, step: f64) -> Result<Self> {
        Self::new(vec![Axis::new(lo, hi, step)?; k])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::len).collect()
    }

    pub fn num_cells(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    /// Multi-index of a flat cell index; the last axis varies fastest.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (slot, axis) in out.iter_mut().zip(&self.axes).rev() {
            let n = axis.len();
            *slot = idx % n;
            idx /= n;
        }
        out
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len() + i)
    }

    pub fn point(&self, multi: &[usize]) -> Vec<f64> {
        multi
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.value(i))
            .collect()
    }
}

/// Execution settings for a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapOptions {
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    pub max_cells: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            workers: None,
            max_cells: DEFAULT_MAX_CELLS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub g: Vec<f64>,
    /// Pointwise verdict at this load.
    pub verdict: Verdict,
    /// Whether the map's criterion holds. For weak stability this also
    /// requires every dominated grid cell to satisfy it.
    pub satisfied: bool,
    pub success: Vec<f64>,
    pub throughput: Vec<f64>,
    pub total_throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetadata {
    pub config_digest: String,
    pub criterion: Criterion,
    pub stable_tol: f64,
    pub equal_tol: f64,
    pub de_tol: f64,
    pub max_iter: usize,
    pub round_success: bool,
    pub strict_weak: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub metadata: RegionMetadata,
    pub grid: GridSpec,
    pub cells: Vec<Cell>,
}

/// Classifies every grid point under `criterion`.
///
/// Cells are evaluated in parallel and stored in flat index order, so the
/// result does not depend on scheduling.
pub fn map_region(
    config: &SystemConfig,
    grid: &GridSpec,
    criterion: &Criterion,
    tols: &Tolerances,
    opts: &MapOptions,
) -> Result<RegionMap> {
    check_len("grid axes", config.num_user_classes(), grid.axes.len())?;
    let n = grid.num_cells();
    if n > opts.max_cells {
        return Err(Error::ResourceLimit(format!(
            "grid has {n} cells, cap is {}",
            opts.max_cells
        )));
    }
    if let Criterion::EpsilonStable(eps) = criterion {
        check_len("eps", config.num_user_classes(), eps.as_slice().len())?;
        if !config.min_degree_two() {
            return Err(Error::Precondition(
                "epsilon criterion needs every class to transmit at least twice".into(),
            ));
        }
    }
    let eval = || -> Result<Vec<Cell>> {
        (0..n)
            .into_par_iter()
            .map(|idx| evaluate_cell(config, &grid.point(&grid.unravel(idx)), criterion, tols))
            .collect()
    };
    let mut cells = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::ResourceLimit(format!("thread pool: {e}")))?
            .install(eval)?,
        None => eval()?,
    };
    if matches!(criterion, Criterion::WeaklyStable) {
        down_close(grid, &mut cells);
    }
    Ok(RegionMap {
        metadata: RegionMetadata {
            config_digest: config.digest(),
            criterion: criterion.clone(),
            stable_tol: tols.stable_tol,
            equal_tol: tols.equal_tol,
            de_tol: tols.de.tol,
            max_iter: tols.de.max_iter,
            round_success: tols.de.round_success,
            strict_weak: tols.strict_weak,
        },
        grid: grid.clone(),
        cells,
    })
}

/// Throughput over the grid, with the stability verdict of each cell.
pub fn throughput_surface(
    config: &SystemConfig,
    grid: &GridSpec,
    tols: &Tolerances,
    opts: &MapOptions,
) -> Result<RegionMap> {
    map_region(config, grid, &Criterion::Stable, tols, opts)
}

fn evaluate_cell(
    config: &SystemConfig,
    g: &[f64],
    criterion: &Criterion,
    tols: &Tolerances,
) -> Result<Cell> {
    let v = classify_load(config, g, tols)?;
    let satisfied = match criterion {
        Criterion::Stable => v.class == Verdict::Stable,
        Criterion::WeaklyStable => v.class.is_weakly_stable(),
        Criterion::EpsilonStable(eps) => {
            v.class != Verdict::Indeterminate
                && v.q_from_ones
                    .iter()
                    .zip(config.effective_degrees())
                    .zip(eps.as_slice())
                    .all(|((&q, d), &e)| q <= d.excess(e))
        }
    };
    let throughput: Vec<f64> = g.iter().zip(&v.success_probs).map(|(a, p)| a * p).collect();
    Ok(Cell {
        g: g.to_vec(),
        verdict: v.class,
        satisfied,
        total_throughput: throughput.iter().sum(),
        throughput,
        success: v.success_probs,
    })
}

/// Clears `satisfied` on every cell that dominates an unsatisfied cell.
fn down_close(grid: &GridSpec, cells: &mut [Cell]) {
    for idx in 0..cells.len() {
        if !cells[idx].satisfied {
            continue;
        }
        let multi = grid.unravel(idx);
        let blocked = (0..multi.len()).any(|a| {
            multi[a] > 0 && {
                let mut prev = multi.clone();
                prev[a] -= 1;
                !cells[grid.ravel(&prev)].satisfied
            }
        });
        if blocked {
            cells[idx].satisfied = false;
        }
    }
}

impl RegionMap {
    pub fn cell(&self, multi: &[usize]) -> &Cell {
        &self.cells[self.grid.ravel(multi)]
    }

    /// Satisfied cell with the largest total offered load.
    pub fn corner(&self) -> Option<&Cell> {
        self.cells
            .iter()
            .filter(|c| c.satisfied)
            .fold(None, |best: Option<&Cell>, c| match best {
                Some(b) if b.g.iter().sum::<f64>() >= c.g.iter().sum::<f64>() => Some(b),
                _ => Some(c),
            })
    }

    /// Largest `G_axis` over satisfied cells.
    pub fn max_load(&self, axis: usize) -> Option<f64> {
        self.cells
            .iter()
            .filter(|c| c.satisfied)
            .map(|c| c.g[axis])
            .reduce(f64::max)
    }

    /// Cell with the largest total throughput.
    pub fn max_throughput(&self) -> Option<&Cell> {
        self.cells.iter().reduce(|a, b| {
            if b.total_throughput > a.total_throughput {
                b
            } else {
                a
            }
        })
    }

    /// Number of satisfied cells with an unsatisfied grid predecessor; zero
    /// for a staircase-monotone map.
    pub fn staircase_violations(&self) -> usize {
        (0..self.cells.len())
            .filter(|&idx| {
                self.cells[idx].satisfied && {
                    let multi = self.grid.unravel(idx);
                    (0..multi.len()).any(|a| {
                        multi[a] > 0 && {
                            let mut prev = multi.clone();
                            prev[a] -= 1;
                            !self.cells[self.grid.ravel(&prev)].satisfied
                        }
                    })
                }
            })
            .count()
    }

    /// One row per cell: loads, verdict, satisfied flag, per-class success
    /// probabilities and throughputs, total throughput.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        let k = self.grid.axes.len();
        let mut header: Vec<String> = (1..=k).map(|i| format!("G{i}")).collect();
        header.push("verdict".into());
        header.push("satisfied".into());
        header.extend((1..=k).map(|i| format!("P{i}")));
        header.extend((1..=k).map(|i| format!("Theta{i}")));
        header.push("Theta_total".into());
        writeln!(w, "{}", header.join(","))?;
        for c in &self.cells {
            let mut row: Vec<String> = c.g.iter().map(|x| x.to_string()).collect();
            row.push(c.verdict.to_string());
            row.push(c.satisfied.to_string());
            row.extend(c.success.iter().map(|x| x.to_string()));
            row.extend(c.throughput.iter().map(|x| x.to_string()));
            row.push(c.total_throughput.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Polyline through load space.
pub type Polyline = Vec<[f64; 2]>;

/// Contours between satisfied and unsatisfied cells of a planar map.
///
/// Marching squares over the cell lattice with vertices at the midpoints of
/// lattice edges whose endpoints disagree; segments are chained into
/// polylines through shared edges. Saddle squares are resolved by pairing
/// crossings so that the satisfied diagonal is separated.
pub fn extract_boundary(map: &RegionMap) -> Result<Vec<Polyline>> {
    check_len("boundary axes", 2, map.grid.axes.len())?;
    let shape = map.grid.shape();
    let (n0, n1) = (shape[0], shape[1]);
    if n0 < 2 || n1 < 2 {
        return Ok(Vec::new());
    }
    let sat = |i: usize, j: usize| map.cells[i * n1 + j].satisfied;
    // Edge ids: horizontal (i,j)-(i+1,j) and vertical (i,j)-(i,j+1).
    #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
    enum Edge {
        Along0(usize, usize),
        Along1(usize, usize),
    }
    let vertex = |e: Edge| -> [f64; 2] {
        let (a, b) = match e {
            Edge::Along0(i, j) => ((i, j), (i + 1, j)),
            Edge::Along1(i, j) => ((i, j), (i, j + 1)),
        };
        let ga = &map.cells[a.0 * n1 + a.1].g;
        let gb = &map.cells[b.0 * n1 + b.1].g;
        [0.5 * (ga[0] + gb[0]), 0.5 * (ga[1] + gb[1])]
    };
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for i in 0..n0 - 1 {
        for j in 0..n1 - 1 {
            // Corners in cyclic order with the edge leading to the next one.
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let edges = [
                Edge::Along0(i, j),
                Edge::Along1(i + 1, j),
                Edge::Along0(i, j + 1),
                Edge::Along1(i, j),
            ];
            let s: Vec<bool> = corners.iter().map(|&(a, b)| sat(a, b)).collect();
            let crossings: Vec<usize> = (0..4).filter(|&e| s[e] != s[(e + 1) % 4]).collect();
            match crossings.len() {
                2 => segments.push((edges[crossings[0]], edges[crossings[1]])),
                4 => {
                    // Cut off each satisfied corner on its own.
                    let start = if s[0] { 3 } else { 0 };
                    for p in 0..2 {
                        let a = (start + 2 * p) % 4;
                        segments.push((edges[a], edges[(a + 1) % 4]));
                    }
                }
                _ => {}
            }
        }
    }
    let mut incident: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        incident.entry(a).or_default().push(s);
        incident.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    // Open chains start at edges touched by one segment; closed loops follow.
    let mut starts: Vec<Edge> = incident
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(&e, _)| e)
        .collect();
    starts.sort();
    let mut loop_starts: Vec<Edge> = segments.iter().map(|s| s.0).collect();
    loop_starts.sort();
    for start in starts.into_iter().chain(loop_starts) {
        let mut at = start;
        let mut line = vec![vertex(at)];
        while let Some(&s) = incident[&at].iter().find(|&&s| !used[s]) {
            used[s] = true;
            let (a, b) = segments[s];
            at = if a == at { b } else { a };
            line.push(vertex(at));
        }
        if line.len() > 1 {
            lines.push(line);
        }
    }
    Ok(lines)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityWitness {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub midpoint: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub convex: bool,
    pub trials: usize,
    pub witnesses: Vec<ConvexityWitness>,
}

/// Looks for satisfied pairs whose midpoint is unsatisfied.
///
/// Pairs are drawn from satisfied cells adjacent to an unsatisfied or
/// off-grid neighbour. The midpoint index is rounded towards the origin,
/// which can only hide violations of a down-closed region, never invent
/// them.
pub fn convexity_probe(map: &RegionMap, trials: usize, seed: u64) -> ConvexityReport {
    let grid = &map.grid;
    let shape = grid.shape();
    let rim: Vec<Vec<usize>> = (0..map.cells.len())
        .filter(|&idx| map.cells[idx].satisfied)
        .map(|idx| grid.unravel(idx))
        .filter(|m| {
            (0..m.len()).any(|a| {
                [-1i64, 1].iter().any(|&d| {
                    let v = m[a] as i64 + d;
                    if v < 0 || v >= shape[a] as i64 {
                        return true;
                    }
                    let mut nb = m.clone();
                    nb[a] = v as usize;
                    !map.cells[grid.ravel(&nb)].satisfied
                })
            })
        })
        .collect();
    let mut witnesses = Vec::new();
    if rim.len() >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..trials {
            let pair: Vec<&Vec<usize>> = rim.choose_multiple(&mut rng, 2).collect();
            let mid: Vec<usize> = pair[0]
                .iter()
                .zip(pair[1])
                .map(|(x, y)| (x + y) / 2)
                .collect();
            if !map.cell(&mid).satisfied {
                witnesses.push(ConvexityWitness {
                    a: grid.point(pair[0]),
                    b: grid.point(pair[1]),
                    midpoint: grid.point(&mid),
                });
            }
        }
    }
    ConvexityReport {
        convex: witnesses.is_empty(),
        trials,
        witnesses,
    }
}

/// Writes polylines as `line,G1,G2` rows.
pub fn write_boundary_csv(lines: &[Polyline], w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "line,G1,G2")?;
    for (id, line) in lines.iter().enumerate() {
        for p in line {
            writeln!(w, "{id},{},{}", p[0], p[1])?;
        }
    }
    Ok(())
}
