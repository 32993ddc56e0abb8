//! Two-dimensional embedding by divide and concur.
//!
//! Every point `i` owns one constraint over itself and its `k` nearest
//! high-dimensional neighbors `N_i`: each neighbor must sit at its target
//! distance from `i` (exact-distance mode) or within the cap radius (cap
//! mode). Each constraint keeps private replicas of its members' positions.
//! The divide projection moves every constraint's replicas to the nearest
//! satisfying configuration; the concur projection averages each point's
//! replicas. The difference map alternates the two.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::Matrix2;
use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::data::{self, DataError, SampleMatrix};
use crate::eval::squared_distance;

/// Smallest stored target distance, relative to the unit median.
pub const TARGET_FLOOR: f64 = 1e-8;
/// Relative slack under which a constraint counts as satisfied.
const SATISFIED_RTOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 50;
const INIT_POWER_ITERS: usize = 200;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid embed configuration: {0}")]
    InvalidConfig(String),
    #[error("embedding needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid constraint graph: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintMode {
    /// Each neighbor sits exactly at its scaled high-dimensional distance.
    #[default]
    ExactDistance,
    /// Each neighbor sits within the unit cap radius.
    Cap,
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintMode::ExactDistance => write!(f, "exact-distance"),
            ConstraintMode::Cap => write!(f, "cap"),
        }
    }
}

impl std::str::FromStr for ConstraintMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact-distance" | "exact" => Ok(ConstraintMode::ExactDistance),
            "cap" => Ok(ConstraintMode::Cap),
            other => Err(format!("unknown constraint mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedConfig {
    pub k: usize,
    pub beta: f64,
    pub max_iters: usize,
    /// Convergence threshold on the residual.
    pub tol: f64,
    pub osc_window: usize,
    /// Minimum improvement of the windowed residual minimum that still
    /// counts as progress.
    pub osc_tol: f64,
    pub mode: ConstraintMode,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            k: 10,
            beta: 0.9,
            max_iters: 2000,
            tol: 1e-6,
            osc_window: 100,
            osc_tol: 1e-10,
            mode: ConstraintMode::ExactDistance,
            seed: 0,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |msg: &str| Err(EmbedError::InvalidConfig(msg.to_string()));
        if self.k < 1 {
            return bad("k must be >= 1");
        }
        if self.beta == 0.0 || !self.beta.is_finite() {
            return bad("beta must be finite and non-zero");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1");
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad("tol must be > 0");
        }
        if self.osc_window < 2 {
            return bad("osc_window must be >= 2");
        }
        if !(self.osc_tol >= 0.0 && self.osc_tol.is_finite()) {
            return bad("osc_tol must be >= 0");
        }
        Ok(())
    }
}

/// The constraint of point `i` covers `i` and `neighbors[i]`; its replicas
/// are stored contiguously, center first, then the neighbors in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGraph {
    neighbors: Vec<Vec<usize>>,
    targets: Vec<Vec<f64>>,
    mode: ConstraintMode,
    offsets: Vec<usize>,
    // Replica indices of each point, in increasing order.
    point_replicas: Vec<Vec<usize>>,
}

impl ConstraintGraph {
    pub fn new(
        neighbors: Vec<Vec<usize>>,
        targets: Vec<Vec<f64>>,
        mode: ConstraintMode,
    ) -> Result<Self, EmbedError> {
        let n = neighbors.len();
        if n < 2 {
            return Err(EmbedError::TooFewPoints(n));
        }
        if targets.len() != n {
            return Err(EmbedError::DimensionMismatch {
                what: "target lists",
                expected: n,
                found: targets.len(),
            });
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut point_replicas = vec![Vec::new(); n];
        let mut next = 0;
        for (i, (nbrs, tgts)) in neighbors.iter().zip(&targets).enumerate() {
            if nbrs.len() != tgts.len() {
                return Err(EmbedError::InvalidGraph(format!(
                    "point {i} has {} neighbors but {} targets",
                    nbrs.len(),
                    tgts.len()
                )));
            }
            if let Some(&j) = nbrs.iter().find(|&&j| j >= n || j == i) {
                return Err(EmbedError::InvalidGraph(format!(
                    "point {i} lists invalid neighbor {j}"
                )));
            }
            if tgts.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
                return Err(EmbedError::InvalidGraph(format!(
                    "point {i} has a non-positive target"
                )));
            }
            offsets.push(next);
            point_replicas[i].push(next);
            for (t, &j) in nbrs.iter().enumerate() {
                point_replicas[j].push(next + 1 + t);
            }
            next += 1 + nbrs.len();
        }
        offsets.push(next);
        for r in &mut point_replicas {
            r.sort_unstable();
        }
        Ok(Self {
            neighbors,
            targets,
            mode,
            offsets,
            point_replicas,
        })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn targets(&self, i: usize) -> &[f64] {
        &self.targets[i]
    }

    pub fn mode(&self) -> ConstraintMode {
        self.mode
    }

    pub fn replica_count(&self) -> usize {
        self.offsets[self.n()]
    }

    /// Point owning each replica slot.
    pub fn replica_owners(&self) -> Vec<usize> {
        let mut owners = Vec::with_capacity(self.replica_count());
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            owners.push(i);
            owners.extend_from_slice(nbrs);
        }
        owners
    }

    /// Every replica placed at its point's position.
    pub fn replicate(&self, positions: ArrayView2<'_, f64>) -> Vec<[f64; 2]> {
        self.replica_owners()
            .into_iter()
            .map(|p| [positions[[p, 0]], positions[[p, 1]]])
            .collect()
    }

    /// All stored edge targets, constraint by constraint.
    pub fn all_targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.targets.iter().flatten().copied()
    }
}

/// Exact k-NN constraints (ties to the lower index). Exact-distance targets
/// are the input distances scaled so their median is 1; cap targets are 1.
pub fn build_constraints(
    data: &SampleMatrix,
    k: usize,
    mode: ConstraintMode,
) -> Result<ConstraintGraph, EmbedError> {
    let n = data.rows();
    if n < 2 {
        return Err(EmbedError::TooFewPoints(n));
    }
    if k < 1 {
        return Err(EmbedError::InvalidConfig("k must be >= 1".into()));
    }
    let k = k.min(n - 1);
    let x = data.view();
    let mut neighbors = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        dist.clear();
        dist.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(x.row(i), x.row(j)), j)),
        );
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, order);
            dist.truncate(k);
        }
        dist.sort_by(order);
        neighbors.push(dist.iter().map(|&(_, j)| j).collect::<Vec<_>>());
        raw.push(dist.iter().map(|&(d2, _)| d2.sqrt()).collect::<Vec<_>>());
    }
    let targets = match mode {
        ConstraintMode::Cap => raw.iter().map(|r| vec![1.0; r.len()]).collect(),
        ConstraintMode::ExactDistance => {
            let flat: Vec<f64> = raw.iter().flatten().copied().collect();
            let mut scale = median(&flat);
            if !(scale > 0.0 && scale.is_finite()) {
                let positive: Vec<f64> = flat.iter().copied().filter(|&d| d > 0.0).collect();
                scale = if positive.is_empty() {
                    1.0
                } else {
                    median(&positive)
                };
            }
            raw.iter()
                .map(|r| r.iter().map(|&d| (d / scale).max(TARGET_FLOOR)).collect())
                .collect()
        }
    };
    ConstraintGraph::new(neighbors, targets, mode)
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Unit vector at angle `2*pi*h/2^32`, `h` a fixed mix of `(i, j)`.
pub fn separation_direction(i: usize, j: usize) -> [f64; 2] {
    let mut z = ((i as u64) << 32 ^ j as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let angle = std::f64::consts::TAU * (z >> 32) as f64 / 4_294_967_296.0;
    [angle.cos(), angle.sin()]
}

/// Unit vector from `from` toward `to` and the distance between them.
fn direction(from: [f64; 2], to: [f64; 2], i: usize, j: usize) -> ([f64; 2], f64) {
    let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
    let r = dx.hypot(dy);
    if r > 0.0 {
        ([dx / r, dy / r], r)
    } else {
        (separation_direction(i, j), 0.0)
    }
}

struct Star<'a> {
    center_point: usize,
    leaves: &'a [usize],
    targets: &'a [f64],
    cap: bool,
}

impl Star<'_> {
    fn penalty(&self, excess: f64) -> f64 {
        if self.cap {
            excess.max(0.0)
        } else {
            excess
        }
    }

    /// Squared movement of the best configuration with center at `c`.
    fn objective(&self, c0: [f64; 2], leaves: &[[f64; 2]], c: [f64; 2]) -> f64 {
        let mut f = (c[0] - c0[0]).powi(2) + (c[1] - c0[1]).powi(2);
        for (t, &l) in leaves.iter().enumerate() {
            let r = (l[0] - c[0]).hypot(l[1] - c[1]);
            f += self.penalty(r - self.targets[t]).powi(2);
        }
        f
    }

    fn satisfied(&self, center: [f64; 2], leaves: &[[f64; 2]]) -> bool {
        leaves.iter().zip(self.targets).all(|(&l, &d)| {
            let r = (l[0] - center[0]).hypot(l[1] - center[1]);
            if self.cap {
                r <= d * (1.0 + SATISFIED_RTOL)
            } else {
                (r - d).abs() <= d * SATISFIED_RTOL
            }
        })
    }

    /// Nearest satisfying configuration, written into `out` (center first).
    fn project(&self, center: [f64; 2], leaves: &[[f64; 2]], out: &mut [[f64; 2]]) {
        out[0] = center;
        out[1..].copy_from_slice(leaves);
        if self.satisfied(center, leaves) {
            return;
        }
        let c = self.best_center(center, leaves);
        out[0] = c;
        for (t, &l) in leaves.iter().enumerate() {
            let (u, r) = direction(c, l, self.center_point, self.leaves[t]);
            let d = self.targets[t];
            if !self.cap || r > d {
                out[1 + t] = [c[0] + d * u[0], c[1] + d * u[1]];
            }
        }
        // The exact projection preserves the centroid; remove solver drift.
        let m = out.len() as f64;
        let mut shift = [0.0; 2];
        for (p, q) in out.iter().zip(std::iter::once(&center).chain(leaves)) {
            shift[0] += q[0] - p[0];
            shift[1] += q[1] - p[1];
        }
        for p in out.iter_mut() {
            p[0] += shift[0] / m;
            p[1] += shift[1] / m;
        }
    }

    /// Minimizes `|c - c0|^2 + sum_j penalty(|l_j - c| - d_j)^2` by damped
    /// Newton steps, falling back to the majorize-minimize step.
    fn best_center(&self, c0: [f64; 2], leaves: &[[f64; 2]]) -> [f64; 2] {
        let scale = 1.0 + self.targets.iter().fold(0.0f64, |a, &d| a.max(d));
        let mut c = c0;
        let mut f = self.objective(c0, leaves, c);
        for _ in 0..NEWTON_MAX_ITERS {
            let mut grad = [2.0 * (c[0] - c0[0]), 2.0 * (c[1] - c0[1])];
            let mut hess = Matrix2::new(2.0, 0.0, 0.0, 2.0);
            let mut mm = c0;
            let mut active = 1.0;
            for (t, &l) in leaves.iter().enumerate() {
                let (u, r) = direction(c, l, self.center_point, self.leaves[t]);
                let d = self.targets[t];
                if self.cap && r <= d {
                    continue;
                }
                let e = r - d;
                grad[0] -= 2.0 * e * u[0];
                grad[1] -= 2.0 * e * u[1];
                let uut = Matrix2::new(u[0] * u[0], u[0] * u[1], u[1] * u[0], u[1] * u[1]);
                hess += uut * 2.0;
                if r > 0.0 {
                    hess += (Matrix2::identity() - uut) * (2.0 * e / r);
                }
                mm[0] += l[0] - d * u[0];
                mm[1] += l[1] - d * u[1];
                active += 1.0;
            }
            let mm_step = [mm[0] / active - c[0], mm[1] / active - c[1]];
            let newton = hess
                .cholesky()
                .map(|ch| ch.solve(&nalgebra::Vector2::new(-grad[0], -grad[1])))
                .map(|s| [s[0], s[1]]);
            let mut accepted = None;
            for step in newton.into_iter().chain(std::iter::once(mm_step)) {
                let mut alpha = 1.0;
                for _ in 0..30 {
                    let trial = [c[0] + alpha * step[0], c[1] + alpha * step[1]];
                    let ft = self.objective(c0, leaves, trial);
                    if ft < f {
                        accepted = Some((trial, ft, alpha * step[0].hypot(step[1])));
                        break;
                    }
                    alpha *= 0.5;
                }
                if accepted.is_some() {
                    break;
                }
            }
            let Some((next, fn_, moved)) = accepted else {
                break;
            };
            c = next;
            f = fn_;
            if moved <= 1e-15 * scale {
                break;
            }
        }
        c
    }
}

/// Projects every constraint's replicas onto its satisfying set.
pub fn divide_project(replicas: &[[f64; 2]], g: &ConstraintGraph) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0; 2]; replicas.len()];
    divide_into(replicas, g, &mut out);
    out
}

fn divide_into(replicas: &[[f64; 2]], g: &ConstraintGraph, out: &mut [[f64; 2]]) {
    for i in 0..g.n() {
        let (lo, hi) = (g.offsets[i], g.offsets[i + 1]);
        let star = Star {
            center_point: i,
            leaves: &g.neighbors[i],
            targets: &g.targets[i],
            cap: g.mode == ConstraintMode::Cap,
        };
        star.project(replicas[lo], &replicas[lo + 1..hi], &mut out[lo..hi]);
    }
}

/// Mean of each point's replicas, as `n x 2` positions.
pub fn consensus(replicas: &[[f64; 2]], g: &ConstraintGraph) -> Array2<f64> {
    let mut out = Array2::zeros((g.n(), 2));
    for (i, idx) in g.point_replicas.iter().enumerate() {
        let p = replica_mean(replicas, idx);
        out[[i, 0]] = p[0];
        out[[i, 1]] = p[1];
    }
    out
}

// Offsets from the first replica keep identical replicas exact.
fn replica_mean(replicas: &[[f64; 2]], idx: &[usize]) -> [f64; 2] {
    let first = replicas[idx[0]];
    let mut acc = [0.0; 2];
    for &r in &idx[1..] {
        acc[0] += replicas[r][0] - first[0];
        acc[1] += replicas[r][1] - first[1];
    }
    let m = idx.len() as f64;
    [first[0] + acc[0] / m, first[1] + acc[1] / m]
}

/// Replaces every replica by its point's consensus.
pub fn concur_project(replicas: &[[f64; 2]], g: &ConstraintGraph) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0; 2]; replicas.len()];
    concur_into(replicas, g, &mut out);
    out
}

fn concur_into(replicas: &[[f64; 2]], g: &ConstraintGraph, out: &mut [[f64; 2]]) {
    for idx in &g.point_replicas {
        let p = replica_mean(replicas, idx);
        for &r in idx {
            out[r] = p;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaState {
    /// `n x 2` consensus of the most recent concur projection.
    pub consensus: Array2<f64>,
    /// One position per (constraint, member) incidence.
    pub replicas: Vec<[f64; 2]>,
    pub residual_trace: Vec<f64>,
}

impl ReplicaState {
    /// All replicas of each point placed at `positions`.
    pub fn from_positions(
        positions: ArrayView2<'_, f64>,
        g: &ConstraintGraph,
    ) -> Result<Self, EmbedError> {
        if positions.dim() != (g.n(), 2) {
            return Err(EmbedError::DimensionMismatch {
                what: "positions",
                expected: g.n(),
                found: positions.nrows(),
            });
        }
        Ok(Self {
            consensus: positions.to_owned(),
            replicas: g.replicate(positions),
            residual_trace: Vec::new(),
        })
    }
}

/// Scratch buffers for one difference-map step.
struct Buffers {
    pd: Vec<[f64; 2]>,
    pc: Vec<[f64; 2]>,
    tmp: Vec<[f64; 2]>,
    xc: Vec<[f64; 2]>,
    xd: Vec<[f64; 2]>,
}

impl Buffers {
    fn new(m: usize) -> Self {
        let z = vec![[0.0; 2]; m];
        Self {
            pd: z.clone(),
            pc: z.clone(),
            tmp: z.clone(),
            xc: z.clone(),
            xd: z,
        }
    }
}

fn step_with(state: &mut ReplicaState, g: &ConstraintGraph, beta: f64, b: &mut Buffers) -> f64 {
    let x = &mut state.replicas;
    divide_into(x, g, &mut b.pd);
    concur_into(x, g, &mut b.pc);
    // x_c = P_c(P_d(x) + (P_d(x) - x) / beta)
    for ((t, &pd), &xv) in b.tmp.iter_mut().zip(&b.pd).zip(x.iter()) {
        *t = [
            pd[0] + (pd[0] - xv[0]) / beta,
            pd[1] + (pd[1] - xv[1]) / beta,
        ];
    }
    concur_into(&b.tmp, g, &mut b.xc);
    // x_d = P_d(P_c(x) + (x - P_c(x)) / beta)
    for ((t, &pc), &xv) in b.tmp.iter_mut().zip(&b.pc).zip(x.iter()) {
        *t = [
            pc[0] + (xv[0] - pc[0]) / beta,
            pc[1] + (xv[1] - pc[1]) / beta,
        ];
    }
    divide_into(&b.tmp, g, &mut b.xd);
    let mut sq = 0.0;
    for ((xv, &c), &d) in x.iter_mut().zip(&b.xc).zip(&b.xd) {
        let (e0, e1) = (c[0] - d[0], c[1] - d[1]);
        sq += e0 * e0 + e1 * e1;
        xv[0] += beta * e0;
        xv[1] += beta * e1;
    }
    for (i, idx) in g.point_replicas.iter().enumerate() {
        let p = b.xc[idx[0]];
        state.consensus[[i, 0]] = p[0];
        state.consensus[[i, 1]] = p[1];
    }
    let residual = (sq / (2 * x.len()) as f64).sqrt();
    state.residual_trace.push(residual);
    residual
}

/// One difference-map update of `state.replicas`; records and returns the
/// RMS of `x_c - x_d`. `state.consensus` becomes the consensus of `x_c`.
pub fn difference_map_step(state: &mut ReplicaState, g: &ConstraintGraph, beta: f64) -> f64 {
    let mut b = Buffers::new(state.replicas.len());
    step_with(state, g, beta, &mut b)
}

/// True when the residual minimum over the last `window` entries improves
/// on the minimum of the preceding `window` by no more than `tol`.
pub fn detect_oscillation(trace: &[f64], window: usize, tol: f64) -> bool {
    if window < 2 || trace.len() < 2 * window {
        return false;
    }
    let n = trace.len();
    let min = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    let previous = min(&trace[n - 2 * window..n - window]);
    let last = min(&trace[n - window..]);
    previous - last <= tol
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedStatus {
    Converged,
    Oscillating,
    MaxIters,
}

impl fmt::Display for EmbedStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedStatus::Converged => write!(f, "converged"),
            EmbedStatus::Oscillating => write!(f, "oscillating"),
            EmbedStatus::MaxIters => write!(f, "max_iters"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedResult {
    /// `n x 2` positions.
    pub positions: Array2<f64>,
    pub status: EmbedStatus,
    pub iterations: usize,
    pub residual_trace: Vec<f64>,
    /// Variance of each point's consensus position over the final window.
    pub oscillation_scores: Vec<f64>,
}

impl EmbedResult {
    pub fn final_residual(&self) -> f64 {
        self.residual_trace.last().copied().unwrap_or(0.0)
    }

    pub fn positions_matrix(&self) -> SampleMatrix {
        SampleMatrix::new(self.positions.clone()).expect("positions are finite")
    }

    /// Line-oriented `key value` report.
    pub fn report(&self) -> String {
        let mut out = format!(
            "status {}\niterations {}\nfinal_residual {:e}\npoints {}\n",
            self.status,
            self.iterations,
            self.final_residual(),
            self.positions.nrows()
        );
        out.push_str("oscillation_scores");
        for s in &self.oscillation_scores {
            out.push_str(&format!(" {s:e}"));
        }
        out.push('\n');
        out
    }
}

/// Iterative difference-map solver, one step per call.
pub struct Solver {
    graph: ConstraintGraph,
    state: ReplicaState,
    beta: f64,
    buffers: Buffers,
    history: VecDeque<Array2<f64>>,
    window: usize,
}

impl Solver {
    pub fn new(
        graph: ConstraintGraph,
        init: ArrayView2<'_, f64>,
        beta: f64,
        window: usize,
    ) -> Result<Self, EmbedError> {
        let state = ReplicaState::from_positions(init, &graph)?;
        let buffers = Buffers::new(graph.replica_count());
        Ok(Self {
            graph,
            state,
            beta,
            buffers,
            history: VecDeque::with_capacity(window),
            window,
        })
    }

    /// Advances one iteration and returns its residual.
    pub fn step(&mut self) -> f64 {
        let r = step_with(&mut self.state, &self.graph, self.beta, &mut self.buffers);
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(self.state.consensus.clone());
        r
    }

    pub fn state(&self) -> &ReplicaState {
        &self.state
    }

    pub fn graph(&self) -> &ConstraintGraph {
        &self.graph
    }

    pub fn oscillation_scores(&self) -> Vec<f64> {
        let n = self.graph.n();
        if self.history.is_empty() {
            return vec![0.0; n];
        }
        let m = self.history.len() as f64;
        (0..n)
            .map(|i| {
                let mean = self
                    .history
                    .iter()
                    .fold([0.0; 2], |a, p| [a[0] + p[[i, 0]], a[1] + p[[i, 1]]]);
                let mean = [mean[0] / m, mean[1] / m];
                self.history
                    .iter()
                    .map(|p| (p[[i, 0]] - mean[0]).powi(2) + (p[[i, 1]] - mean[1]).powi(2))
                    .sum::<f64>()
                    / m
            })
            .collect()
    }

    /// Runs until convergence, detected oscillation or the iteration cap.
    pub fn run(mut self, cfg: &EmbedConfig) -> EmbedResult {
        let mut status = EmbedStatus::MaxIters;
        for _ in 0..cfg.max_iters {
            let r = self.step();
            if r < cfg.tol {
                status = EmbedStatus::Converged;
                break;
            }
            if detect_oscillation(&self.state.residual_trace, cfg.osc_window, cfg.osc_tol) {
                status = EmbedStatus::Oscillating;
                break;
            }
        }
        let oscillation_scores = self.oscillation_scores();
        let iterations = self.state.residual_trace.len();
        EmbedResult {
            positions: self.state.consensus,
            status,
            iterations,
            residual_trace: self.state.residual_trace,
            oscillation_scores,
        }
    }
}

/// Top-two principal coordinates from a seeded power method, rescaled so
/// the median constraint edge has unit length.
pub fn initial_positions(data: &SampleMatrix, g: &ConstraintGraph, seed: u64) -> Array2<f64> {
    let mean = data::column_means(data.view());
    let centered = data.values() - &mean.view().insert_axis(ndarray::Axis(0));
    let d = centered.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<Array1<f64>> = Vec::with_capacity(2);
    let mut coords = Array2::zeros((data.rows(), 2));
    for c in 0..2 {
        let mut v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut ok = false;
        for _ in 0..INIT_POWER_ITERS {
            for prev in &found {
                let proj = v.dot(prev);
                v.scaled_add(-proj, prev);
            }
            let norm = v.dot(&v).sqrt();
            if !(norm > 1e-300 && norm.is_finite()) {
                ok = false;
                break;
            }
            v /= norm;
            ok = true;
            v = centered.t().dot(&centered.dot(&v));
        }
        if !ok {
            break;
        }
        for prev in &found {
            let proj = v.dot(prev);
            v.scaled_add(-proj, prev);
        }
        let norm = v.dot(&v).sqrt();
        if !(norm > 1e-300 && norm.is_finite()) {
            break;
        }
        v /= norm;
        coords.column_mut(c).assign(&centered.dot(&v));
        found.push(v);
    }
    let edges: Vec<f64> = (0..g.n())
        .flat_map(|i| {
            let coords = &coords;
            g.neighbors(i).iter().map(move |&j| {
                (coords[[i, 0]] - coords[[j, 0]]).hypot(coords[[i, 1]] - coords[[j, 1]])
            })
        })
        .collect();
    let med = median(&edges);
    if med > 0.0 {
        coords /= med;
    }
    coords
}

/// Embeds the rows of `data` from the deterministic principal-coordinate start.
pub fn embed(data: &SampleMatrix, cfg: &EmbedConfig) -> Result<EmbedResult, EmbedError> {
    cfg.validate()?;
    let g = build_constraints(data, cfg.k, cfg.mode)?;
    let init = initial_positions(data, &g, cfg.seed);
    Ok(Solver::new(g, init.view(), cfg.beta, cfg.osc_window)?.run(cfg))
}

/// Embeds from caller-supplied `n x 2` starting positions.
pub fn embed_from(
    data: &SampleMatrix,
    init: ArrayView2<'_, f64>,
    cfg: &EmbedConfig,
) -> Result<EmbedResult, EmbedError> {
    cfg.validate()?;
    let g = build_constraints(data, cfg.k, cfg.mode)?;
    Ok(Solver::new(g, init, cfg.beta, cfg.osc_window)?.run(cfg))
}

/// RMS distance between `a` and the best rigid motion (rotation or
/// reflection plus translation) of `b`.
pub fn procrustes_residual(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() || a.ncols() != 2 || a.nrows() == 0 {
        return Err(EmbedError::DimensionMismatch {
            what: "procrustes inputs",
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    let n = a.nrows() as f64;
    let ca = data::column_means(a);
    let cb = data::column_means(b);
    let mut cross = Matrix2::<f64>::zeros();
    for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
        for p in 0..2 {
            for q in 0..2 {
                cross[(p, q)] += (rb[p] - cb[p]) * (ra[q] - ca[q]);
            }
        }
    }
    let svd = cross.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let rot = u * vt;
    let mut sq = 0.0;
    for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
        let y0 = rb[0] - cb[0];
        let y1 = rb[1] - cb[1];
        let m0 = y0 * rot[(0, 0)] + y1 * rot[(1, 0)];
        let m1 = y0 * rot[(0, 1)] + y1 * rot[(1, 1)];
        sq += (m0 - (ra[0] - ca[0])).powi(2) + (m1 - (ra[1] - ca[1])).powi(2);
    }
    Ok((sq / n).sqrt())
}
