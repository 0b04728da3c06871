//! Dependence-adjusted Benjamini-Hochberg.
//!
//! For each hypothesis `i` the procedure conditions on
//! `S_i = Z_{-i} - Sigma_{-i,i} Z_i`, which is independent of `Z_i`, and walks
//! the line `Z(t) = (t, S_i + Sigma_{-i,i} t)` with `t ~ N(0, 1)` under the
//! null. It rejects `i` when
//!
//! ```text
//! g_i(q_i) = E[ 1{p_i <= q_i R_c(t) / n} / max(R_ga(t), 1) | S_i ] <= alpha / n
//! ```
//!
//! where `q_i` is the BH q-value, `R_c(t)` is the BH(c) rejection count along
//! the line and `ga = gamma * alpha`.
//!
//! Both rejection counts are piecewise constant in `t`, changing only where
//! some z-score crosses a BH threshold. The integral is evaluated by sweeping
//! those knots once in order and maintaining both counts incrementally, so a
//! single hypothesis costs `O(n^2 log n)`. The measure of each constant piece
//! is either exact (normal probability) or the midpoint quadrature rule on
//! the probability scale, i.e. the fraction of nodes `Phi^-1((k - 0.5) / K)`
//! that fall inside it.

use std::cmp::Ordering;
use std::collections::binary_heap::{BinaryHeap, PeekMut};

use rayon::prelude::*;

use super::stepup::bh_q_values;
use super::{Method, RejectionReport};
use crate::error::{invalid, Error, Result};
use crate::model::Sidedness;
use crate::normal;
use crate::stats::TestStatistics;

pub const DEFAULT_QUADRATURE_NODES: usize = 4096;

/// Beyond this many standard deviations the normal mass underflows.
const S_MAX: f64 = 40.0;

/// How the conditional expectation is integrated along the line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integration {
    /// Midpoint rule with `nodes` equal-probability nodes.
    Quadrature { nodes: usize },
    /// Exact normal probability of every constant piece.
    Exact,
}

impl Default for Integration {
    fn default() -> Self {
        Integration::Quadrature {
            nodes: DEFAULT_QUADRATURE_NODES,
        }
    }
}

impl Integration {
    fn validate(self) -> Result<()> {
        match self {
            Integration::Quadrature { nodes: 0 } => {
                Err(invalid("nodes", "quadrature needs at least one node"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DbhOptions {
    pub integration: Integration,
    /// Evaluate hypotheses on the rayon pool.
    pub parallel: bool,
    /// Stop integrating once `g_i` is known to exceed `alpha / n`. Decisions
    /// are unchanged; reported `g` values above the cutoff become lower
    /// bounds.
    pub decisions_only: bool,
}

impl Default for DbhOptions {
    fn default() -> Self {
        Self {
            integration: Integration::default(),
            parallel: true,
            decisions_only: false,
        }
    }
}

/// dBH with default options (midpoint quadrature, 4096 nodes).
pub fn dbh(stats: &TestStatistics, alpha: f64, gamma: f64) -> Result<RejectionReport> {
    dbh_with(stats, alpha, gamma, &DbhOptions::default())
}

pub fn dbh_with(
    stats: &TestStatistics,
    alpha: f64,
    gamma: f64,
    options: &DbhOptions,
) -> Result<RejectionReport> {
    let n = stats.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1)")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid("gamma", format!("{gamma} is outside (0, 1]")));
    }
    options.integration.validate()?;

    let p = stats.p_values();
    let q = bh_q_values(&p);
    let denominator = Thresholds::new(gamma * alpha, n, stats.sidedness);

    let cutoff = alpha / n as f64;
    let budget = if options.decisions_only {
        cutoff
    } else {
        f64::INFINITY
    };
    let nodes = Nodes::for_integration(options.integration, stats.sidedness);
    let eval = |i: usize| {
        conditional_expectation_inner(i, stats, q[i], &denominator, nodes.as_ref(), budget)
    };
    let g: Vec<f64> = if options.parallel {
        (0..n).into_par_iter().map(eval).collect::<Result<_>>()?
    } else {
        (0..n).map(eval).collect::<Result<_>>()?
    };

    let rejected = (0..n).filter(|&i| g[i] <= cutoff).collect();
    Ok(RejectionReport {
        method: Method::Dbh,
        alpha,
        gamma: Some(gamma),
        rejected,
        p,
        q,
        g: Some(g),
    })
}

/// `E[1{p_i <= c R_c / n} / max(R_ga, 1) | S_i]` along the conditioning line
/// of hypothesis `i`.
pub fn conditional_expectation_g(
    i: usize,
    stats: &TestStatistics,
    c: f64,
    gamma_alpha: f64,
    integration: Integration,
) -> Result<f64> {
    let n = stats.len();
    if i >= n {
        return Err(invalid("i", format!("hypothesis {i} out of range for {n}")));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(invalid("c", format!("{c} is outside [0, 1]")));
    }
    if !(gamma_alpha > 0.0 && gamma_alpha <= 1.0) {
        return Err(invalid(
            "gamma_alpha",
            format!("{gamma_alpha} is outside (0, 1]"),
        ));
    }
    integration.validate()?;
    let denominator = Thresholds::new(gamma_alpha, n, stats.sidedness);
    let nodes = Nodes::for_integration(integration, stats.sidedness);
    conditional_expectation_inner(i, stats, c, &denominator, nodes.as_ref(), f64::INFINITY)
}

fn conditional_expectation_inner(
    i: usize,
    stats: &TestStatistics,
    c: f64,
    denominator: &Thresholds,
    nodes: Option<&Nodes>,
    budget: f64,
) -> Result<f64> {
    let n = stats.len();
    if c <= 0.0 {
        return Ok(0.0);
    }
    let zi = stats.z[i];
    let mut offset = Vec::with_capacity(n);
    let mut slope = Vec::with_capacity(n);
    for j in 0..n {
        let b = stats.sigma[(j, i)];
        if !b.is_finite() || !stats.z[j].is_finite() {
            return Err(Error::NonFiniteSigma { row: i });
        }
        // exact zero offset for the hypothesis itself
        offset.push(if j == i { 0.0 } else { stats.z[j] - b * zi });
        slope.push(if j == i { 1.0 } else { b });
    }

    let indicator = Thresholds::new(c, n, stats.sidedness);
    let mut sweep = Sweep {
        target: i,
        indicator: Counter::new(&indicator),
        denominator: Counter::new(denominator),
        runs: Vec::new(),
        heap: BinaryHeap::new(),
        nodes,
    };

    let total = match stats.sidedness {
        Sidedness::RightSided => sweep.branch(&offset, &slope, false, budget),
        Sidedness::LeftSided => {
            offset.iter_mut().for_each(|a| *a = -*a);
            sweep.branch(&offset, &slope, false, budget)
        }
        Sidedness::TwoSided => {
            let up = sweep.branch(&offset, &slope, true, budget);
            if up > budget {
                return Ok(up);
            }
            slope.iter_mut().for_each(|b| *b = -*b);
            up + sweep.branch(&offset, &slope, true, budget - up)
        }
    };
    Ok(total)
}

/// BH thresholds of one level on the score scale.
///
/// The score is `z` (right-sided), `-z` (left-sided) or `|z|` (two-sided);
/// `p_j <= level * k / n` holds iff `score_j >= crit[k - 1]`.
struct Thresholds {
    level: f64,
    crit: Vec<f64>,
    tail_weight: f64,
}

impl Thresholds {
    fn new(level: f64, n: usize, sidedness: Sidedness) -> Self {
        let tail_weight = if sidedness.is_two_sided() { 2.0 } else { 1.0 };
        let crit = (1..=n)
            .map(|k| {
                let x = level * k as f64 / n as f64;
                if x >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    normal::upper_quantile(x / tail_weight)
                }
            })
            .collect();
        Self {
            level,
            crit,
            tail_weight,
        }
    }

    /// Probability `x / w` of the own score exceeding threshold `k`, i.e. the
    /// exact location of that knot on the integration scale.
    fn own_mass(&self, k: usize) -> Option<f64> {
        let n = self.crit.len();
        let x = self.level * k as f64 / n as f64;
        (x < 1.0).then(|| x / self.tail_weight)
    }
}

/// Incrementally maintained BH rejection count for one level.
struct Counter<'a> {
    thresholds: &'a Thresholds,
    /// `bin[j]` = smallest `k` with `score_j >= crit[k - 1]`, or `n + 1`.
    bin: Vec<usize>,
    /// `at_most[k]` = number of `j` with `bin[j] <= k`.
    at_most: Vec<usize>,
    rejections: usize,
}

impl<'a> Counter<'a> {
    fn new(thresholds: &'a Thresholds) -> Self {
        let n = thresholds.crit.len();
        Self {
            thresholds,
            bin: vec![n + 1; n],
            at_most: vec![0; n + 1],
            rejections: 0,
        }
    }

    fn n(&self) -> usize {
        self.bin.len()
    }

    fn bin_of(&self, score: f64) -> usize {
        1 + self.thresholds.crit.partition_point(|&c| c > score)
    }

    fn reset(&mut self, scores: impl Iterator<Item = f64>) {
        let n = self.n();
        let mut hist = vec![0usize; n + 2];
        for (j, s) in scores.enumerate() {
            let b = self.bin_of(s);
            self.bin[j] = b;
            hist[b] += 1;
        }
        let mut acc = 0;
        for k in 1..=n {
            acc += hist[k];
            self.at_most[k] = acc;
        }
        self.rejections = (1..=n).rev().find(|&k| self.at_most[k] >= k).unwrap_or(0);
    }

    fn update(&mut self, j: usize, score: f64) {
        let new = self.bin_of(score);
        self.move_to(j, new);
    }

    /// Like [`Counter::update`] for a score that moved only a little: the new
    /// bin is found by stepping from the old one.
    fn shift(&mut self, j: usize, score: f64) {
        let crit = &self.thresholds.crit;
        let n = crit.len();
        let old = self.bin[j];
        let mut new = old;
        while new > 1 && score >= crit[new - 2] {
            new -= 1;
        }
        while new <= n && score < crit[new - 1] {
            new += 1;
        }
        self.move_to(j, new);
    }

    fn move_to(&mut self, j: usize, new: usize) {
        let n = self.n();
        let old = self.bin[j];
        if old == new {
            return;
        }
        self.bin[j] = new;
        if new < old {
            let hi = old.min(n + 1);
            for k in new..hi {
                self.at_most[k] += 1;
            }
            for k in (new..hi).rev() {
                if k <= self.rejections {
                    break;
                }
                if self.at_most[k] >= k {
                    self.rejections = k;
                    break;
                }
            }
        } else {
            let hi = new.min(n + 1);
            for k in old..hi {
                self.at_most[k] -= 1;
            }
            let r = self.rejections;
            if (old..hi).contains(&r) && self.at_most[r] < r {
                self.rejections = (1..r).rev().find(|&k| self.at_most[k] >= k).unwrap_or(0);
            }
        }
    }
}

/// Quadrature nodes `u_k = (k - 0.5) / K` of one branch, in increasing `u`
/// (decreasing score), with their scores and weights. In the two-sided case
/// each branch covers `u <= 1/2` and a node at exactly `1/2` is shared.
struct Nodes {
    u: Vec<f64>,
    s: Vec<f64>,
    weight: Vec<f64>,
}

impl Nodes {
    fn for_integration(integration: Integration, sidedness: Sidedness) -> Option<Self> {
        match integration {
            Integration::Quadrature { nodes } => Some(Self::new(nodes, sidedness.is_two_sided())),
            Integration::Exact => None,
        }
    }

    fn new(nodes: usize, two_sided: bool) -> Self {
        let k_total = nodes as f64;
        let mut out = Nodes {
            u: Vec::with_capacity(nodes),
            s: Vec::with_capacity(nodes),
            weight: Vec::with_capacity(nodes),
        };
        for k in 1..=nodes {
            let u = (k as f64 - 0.5) / k_total;
            let mut weight = 1.0 / k_total;
            if two_sided {
                if 2 * k - 1 > nodes {
                    break;
                }
                if 2 * k - 1 == nodes {
                    weight *= 0.5;
                }
            }
            out.u.push(u);
            out.s.push(if two_sided && 2 * k - 1 == nodes {
                0.0
            } else {
                normal::upper_quantile(u)
            });
            out.weight.push(weight);
        }
        out
    }
}

#[derive(Clone, Copy)]
struct Knot {
    s: f64,
    j: u32,
    /// Threshold index (1-based) with the denominator level flagged in the top bit.
    tag: u32,
}

const DENOMINATOR_FLAG: u32 = 1 << 31;

impl Knot {
    fn is_denominator(self) -> bool {
        self.tag & DENOMINATOR_FLAG != 0
    }

    fn threshold(self) -> usize {
        (self.tag & !DENOMINATOR_FLAG) as usize
    }
}

/// Knots of one `(level, j, root)` triple. They are monotone in the threshold
/// index, so walking `k` in the right direction yields descending `s`.
#[derive(Clone, Copy)]
struct Run {
    j: u32,
    flag: u32,
    sign: f64,
    /// Next threshold index (0-based) and the direction of travel.
    k: isize,
    step: isize,
}

/// Heap entry: the current head of run `run`.
struct Head {
    knot: Knot,
    run: u32,
}

impl PartialEq for Head {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Head {}

impl PartialOrd for Head {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Head {
    fn cmp(&self, other: &Self) -> Ordering {
        self.knot.s.total_cmp(&other.knot.s)
    }
}

struct Sweep<'a> {
    target: usize,
    indicator: Counter<'a>,
    denominator: Counter<'a>,
    runs: Vec<Run>,
    heap: BinaryHeap<Head>,
    /// Quadrature nodes, or `None` to integrate each constant piece exactly.
    nodes: Option<&'a Nodes>,
}

impl Sweep<'_> {
    fn branch(&mut self, offset: &[f64], slope: &[f64], two_sided: bool, budget: f64) -> f64 {
        match self.nodes {
            Some(nodes) => self.walk(nodes, offset, slope, two_sided, budget),
            None => self.sweep(offset, slope, two_sided, budget),
        }
    }

    /// Midpoint rule over the nodes of one branch. Consecutive nodes are
    /// close, so every score is re-binned by stepping from its previous bin.
    fn walk(
        &mut self,
        nodes: &Nodes,
        offset: &[f64],
        slope: &[f64],
        two_sided: bool,
        budget: f64,
    ) -> f64 {
        let n = offset.len();
        let ind = self.indicator.thresholds;
        // The indicator needs p_i <= c, so nothing beyond u = c / w counts.
        let count = match ind.own_mass(n) {
            Some(u_end) => nodes.u.partition_point(|&u| u <= u_end),
            None => nodes.u.len(),
        };
        if count == 0 {
            return 0.0;
        }

        let score = |j: usize, s: f64| {
            let v = offset[j] + slope[j] * s;
            if two_sided {
                v.abs()
            } else {
                v
            }
        };
        let first = nodes.s[0];
        self.indicator.reset((0..n).map(|j| score(j, first)));
        self.denominator.reset((0..n).map(|j| score(j, first)));

        let mut total = 0.0;
        for t in 0..count {
            if t > 0 {
                let s = nodes.s[t];
                for j in 0..n {
                    let v = score(j, s);
                    self.indicator.shift(j, v);
                    self.denominator.shift(j, v);
                }
            }
            total += nodes.weight[t] * value(self.code());
            if total > budget {
                break;
            }
        }
        total
    }

    /// Integrates each constant piece of one branch exactly. The line is
    /// parameterised by the target's own score `s`, with
    /// `score_j(s) = offset_j + slope_j s` (one-sided) or
    /// `|offset_j + slope_j s|` (two-sided, `s >= 0`). The integration scale
    /// is `u = 1 - Phi(s)`, uniform under the null.
    ///
    /// Returns early, with a partial sum, once the running total exceeds
    /// `budget`.
    fn sweep(&mut self, offset: &[f64], slope: &[f64], two_sided: bool, budget: f64) -> f64 {
        let n = offset.len();
        let target = self.target;
        let ind = self.indicator.thresholds;
        let den = self.denominator.thresholds;
        let u_max = if two_sided { 0.5 } else { 1.0 };

        // The indicator needs p_i <= c, so nothing beyond u = c / w counts.
        let (u_end, s_end) = match ind.own_mass(n) {
            Some(u) => (u, ind.crit[n - 1]),
            None => (u_max, if two_sided { 0.0 } else { f64::NEG_INFINITY }),
        };

        let score = |j: usize, s: f64| {
            let v = offset[j] + slope[j] * s;
            if two_sided {
                v.abs()
            } else {
                v
            }
        };

        self.runs.clear();
        for flag in [0, DENOMINATOR_FLAG] {
            self.runs.push(Run {
                j: target as u32,
                flag,
                sign: 1.0,
                k: 0,
                step: 1,
            });
            for j in (0..n).filter(|&j| j != target && slope[j] != 0.0) {
                let roots: &[f64] = if two_sided { &[1.0, -1.0] } else { &[1.0] };
                for &sign in roots {
                    // s decreases with k exactly when sign / b > 0
                    let (k, step) = if (sign > 0.0) == (slope[j] > 0.0) {
                        (0, 1)
                    } else {
                        (n as isize - 1, -1)
                    };
                    self.runs.push(Run {
                        j: j as u32,
                        flag,
                        sign,
                        k,
                        step,
                    });
                }
            }
        }

        // Next knot of a run strictly above `s_end`, or `None` once exhausted.
        let advance = |run: &mut Run| -> Option<Knot> {
            let level = if run.flag == 0 { ind } else { den };
            while (0..n as isize).contains(&run.k) {
                let k = run.k as usize;
                run.k += run.step;
                let c = level.crit[k];
                if !c.is_finite() || (two_sided && c <= 0.0) {
                    continue;
                }
                let j = run.j as usize;
                let s = if j == target {
                    if level.own_mass(k + 1).is_none() {
                        continue;
                    }
                    c
                } else {
                    (run.sign * c - offset[j]) / slope[j]
                };
                if s <= s_end || s <= -S_MAX {
                    return None;
                }
                if s >= S_MAX {
                    continue;
                }
                return Some(Knot {
                    s,
                    j: run.j,
                    tag: run.flag | (k as u32 + 1),
                });
            }
            None
        };

        self.heap.clear();
        for (r, run) in self.runs.iter_mut().enumerate() {
            if let Some(knot) = advance(run) {
                self.heap.push(Head {
                    knot,
                    run: r as u32,
                });
            }
        }

        let start = match self.heap.peek() {
            Some(h) => h.knot.s + 1.0,
            None if s_end.is_finite() => s_end + 1.0,
            None => 0.0,
        };
        self.indicator.reset((0..n).map(|j| score(j, start)));
        self.denominator.reset((0..n).map(|j| score(j, start)));

        let mut code = self.code();
        let mut run_start = 0.0;
        let mut total = 0.0;
        let mut group = Vec::new();
        while let Some(top) = self.heap.peek() {
            let here = top.knot.s;
            group.clear();
            let mut exact = None;
            while let Some(head) = self.heap.peek_mut() {
                if head.knot.s != here {
                    break;
                }
                let knot = head.knot;
                if knot.j as usize == target {
                    let level = if knot.is_denominator() { den } else { ind };
                    exact = level.own_mass(knot.threshold());
                }
                group.push(knot);
                match advance(&mut self.runs[head.run as usize]) {
                    Some(next) => {
                        let mut head = head;
                        head.knot = next;
                    }
                    None => {
                        PeekMut::pop(head);
                    }
                }
            }
            let next = self.heap.peek().map_or(s_end, |h| h.knot.s);
            let probe = if next.is_finite() {
                0.5 * (here + next)
            } else {
                here - 1.0
            };
            for knot in &group {
                let j = knot.j as usize;
                let v = score(j, probe);
                if knot.is_denominator() {
                    self.denominator.update(j, v);
                } else {
                    self.indicator.update(j, v);
                }
            }
            let new_code = self.code();
            if new_code != code {
                let u = exact.unwrap_or_else(|| normal::upper_tail(here));
                total += (u - run_start) * value(code);
                if total > budget {
                    return total;
                }
                code = new_code;
                run_start = u;
            }
        }
        total + (u_end - run_start) * value(code)
    }

    /// 0 when the indicator is off, else the guarded denominator count.
    fn code(&self) -> usize {
        let fires = self.indicator.bin[self.target] <= self.indicator.rejections;
        if fires {
            self.denominator.rejections.max(1)
        } else {
            0
        }
    }
}

fn value(code: usize) -> f64 {
    if code == 0 {
        0.0
    } else {
        1.0 / code as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdr::stepup::bh_rejection_count;
    use crate::stats::{p_value, z_to_pvalues};
    use nalgebra::DMatrix;

    fn stats(z: Vec<f64>, sigma: DMatrix<f64>, side: Sidedness) -> TestStatistics {
        TestStatistics::new(z, sigma, side).unwrap()
    }

    /// Evaluates the quadrature rule node by node with the plain procedures.
    fn naive_quadrature(st: &TestStatistics, i: usize, c: f64, ga: f64, nodes: usize) -> f64 {
        let n = st.len();
        let mut total = 0.0;
        for k in 1..=nodes {
            let t = normal::quantile((k as f64 - 0.5) / nodes as f64);
            let z: Vec<f64> = (0..n)
                .map(|j| {
                    if j == i {
                        t
                    } else {
                        st.z[j] - st.sigma[(j, i)] * st.z[i] + st.sigma[(j, i)] * t
                    }
                })
                .collect();
            let p = z_to_pvalues(&z, st.sidedness);
            let rc = bh_rejection_count(&p, c);
            if p[i] <= c * rc as f64 / n as f64 {
                total += 1.0 / bh_rejection_count(&p, ga).max(1) as f64;
            }
        }
        total / nodes as f64
    }

    #[test]
    fn single_hypothesis_reduces_to_level() {
        let sigma = DMatrix::identity(1, 1);
        for side in [
            Sidedness::TwoSided,
            Sidedness::RightSided,
            Sidedness::LeftSided,
        ] {
            let st = stats(vec![0.7], sigma.clone(), side);
            for c in [0.001, 0.05, 0.2, 0.5, 0.99] {
                let g = conditional_expectation_g(0, &st, c, 0.2, Integration::Exact).unwrap();
                assert_eq!(g, c, "{side:?} c={c}");
                let gq = conditional_expectation_g(0, &st, c, 0.2, Integration::default()).unwrap();
                assert!(
                    (gq - c).abs() <= 1.0 / 4096.0 + 1e-15,
                    "{side:?} c={c} g={gq}"
                );
            }
        }
    }

    #[test]
    fn zero_level_gives_zero() {
        let st = stats(
            vec![1.0, 2.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            Sidedness::RightSided,
        );
        assert_eq!(
            conditional_expectation_g(0, &st, 0.0, 0.1, Integration::Exact).unwrap(),
            0.0
        );
    }

    #[test]
    fn independent_case_matches_closed_form() {
        // With Sigma = I the other scores are fixed; with c = ga every piece
        // where i is rejected contributes 1 / R, and R is then the count
        // including i.
        let z = vec![0.0, 2.5, 1.0, -0.3];
        let st = stats(z.clone(), DMatrix::identity(4, 4), Sidedness::RightSided);
        let c = 0.3;
        let g = conditional_expectation_g(0, &st, c, c, Integration::Exact).unwrap();
        // brute force over t on a fine grid of p_i
        let others: Vec<f64> = z[1..]
            .iter()
            .map(|&v| p_value(v, Sidedness::RightSided))
            .collect();
        let steps = 200_000;
        let mut acc = 0.0;
        for k in 0..steps {
            let pi = (k as f64 + 0.5) / steps as f64;
            let mut p = vec![pi];
            p.extend(&others);
            let r = bh_rejection_count(&p, c);
            if pi <= c * r as f64 / 4.0 {
                acc += 1.0 / r as f64;
            }
        }
        assert!(
            (g - acc / steps as f64).abs() < 1e-5,
            "{g} vs {}",
            acc / steps as f64
        );
    }

    #[test]
    fn sweep_quadrature_matches_naive_nodes() {
        let sigma = DMatrix::from_fn(5, 5, |i, j| 0.6_f64.powi(i.abs_diff(j) as i32));
        let z = vec![2.1, -0.4, 1.3, 2.8, 0.2];
        for side in [
            Sidedness::TwoSided,
            Sidedness::RightSided,
            Sidedness::LeftSided,
        ] {
            let st = stats(z.clone(), sigma.clone(), side);
            for i in 0..5 {
                for (c, ga) in [(0.1, 0.2), (0.45, 0.19), (1.0, 0.2)] {
                    let nodes = 513;
                    let fast =
                        conditional_expectation_g(i, &st, c, ga, Integration::Quadrature { nodes })
                            .unwrap();
                    let slow = naive_quadrature(&st, i, c, ga, nodes);
                    assert!(
                        (fast - slow).abs() < 1e-12,
                        "{side:?} i={i} c={c}: {fast} vs {slow}"
                    );
                }
            }
        }
    }

    #[test]
    fn dbh_single_hypothesis() {
        let sigma = DMatrix::identity(1, 1);
        for &z in &[-2.5, 0.3, 1.7, 2.4] {
            for side in [Sidedness::TwoSided, Sidedness::RightSided] {
                let st = stats(vec![z], sigma.clone(), side);
                let p = p_value(z, side);
                let opts = DbhOptions {
                    integration: Integration::Exact,
                    parallel: false,
                    decisions_only: false,
                };
                let r = dbh_with(&st, 0.05, side.default_gamma(), &opts).unwrap();
                assert_eq!(r.rejected.is_empty(), p > 0.05);
            }
        }
    }

    #[test]
    fn dbh_all_null_rejects_nothing() {
        let n = 6;
        let sigma = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.5 });
        let st = stats(vec![0.0; n], sigma, Sidedness::TwoSided);
        let r = dbh(&st, 0.2, 0.95).unwrap();
        assert!(r.rejected.is_empty());
        assert!(r.q.iter().all(|&q| q == 1.0));
    }

    #[test]
    fn dbh_argument_errors() {
        let st = stats(vec![1.0], DMatrix::identity(1, 1), Sidedness::RightSided);
        assert!(dbh(&st, 0.0, 1.0).is_err());
        assert!(dbh(&st, 0.1, 0.0).is_err());
        assert!(dbh(&st, 0.1, 1.5).is_err());
        let opts = DbhOptions {
            integration: Integration::Quadrature { nodes: 0 },
            parallel: false,
            decisions_only: false,
        };
        assert!(dbh_with(&st, 0.1, 1.0, &opts).is_err());

        let mut bad = st.clone();
        bad.sigma[(0, 0)] = f64::NAN;
        assert_eq!(
            conditional_expectation_g(0, &bad, 0.1, 0.1, Integration::Exact).unwrap_err(),
            Error::NonFiniteSigma { row: 0 }
        );
    }

    #[test]
    fn counter_tracks_recount() {
        let th = Thresholds::new(0.3, 6, Sidedness::TwoSided);
        let mut counter = Counter::new(&th);
        let mut scores = vec![0.1, 2.9, 1.4, 0.0, 3.5, 2.2];
        counter.reset(scores.iter().copied());
        let moves = [
            (3, 3.1),
            (1, 0.2),
            (4, 0.3),
            (0, 2.6),
            (2, 2.65),
            (5, 0.0),
            (1, 4.0),
        ];
        for (j, s) in moves {
            scores[j] = s;
            counter.update(j, s);
            let p = z_to_pvalues(&scores, Sidedness::TwoSided);
            assert_eq!(
                counter.rejections,
                bh_rejection_count(&p, 0.3),
                "{scores:?}"
            );
        }
    }
}
