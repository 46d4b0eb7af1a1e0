//! Pairwise co-group probabilities and the inequality index built on them.
//!
//! For every unordered pot pair `(k, l)` the matrix `P(k,l)` holds the
//! probability that team `i` of pot `k` and team `j` of pot `l` share a
//! group. Each such matrix is doubly stochastic. The concentration index
//! `Î` averages the Herfindahl–Hirschman index of every row and column of
//! every matrix; it ranges over `[1/n, 1]` and is rescaled to `I ∈ [0, 1]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num::{BigInt, BigRational, One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{DrawError, Result};
use crate::model::{Assignment, Instance};

/// Row/column sum tolerance for floating matrices.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

/// Unordered pot pairs `(k, l)`, `k < l`, in the order blocks are stored.
pub fn pot_pairs(pots: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(pots * pots.saturating_sub(1) / 2);
    for k in 0..pots {
        for l in k + 1..pots {
            out.push((k, l));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Provenance {
    Empirical { trials: u64 },
    Exact,
}

/// The `m(m-1)/2` co-group probability matrices, row-major, rows indexed
/// by the lower pot's teams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMatrixSet {
    pub pots: usize,
    pub groups: usize,
    pub blocks: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl PairMatrixSet {
    pub fn block(&self, k: usize, l: usize) -> &[f64] {
        &self.blocks[pair_index(self.pots, k, l)]
    }

    /// Probability that pot-`k` team `i` and pot-`l` team `j` meet
    /// (indices within their pots; `k < l`).
    pub fn get(&self, k: usize, l: usize, i: usize, j: usize) -> f64 {
        self.block(k, l)[i * self.groups + j]
    }

    /// Co-group probability of two named teams from different pots.
    pub fn between(&self, instance: &Instance, a: &str, b: &str) -> Option<f64> {
        let ta = instance.team_by_name(a)?;
        let tb = instance.team_by_name(b)?;
        let (x, y) = if ta.pot < tb.pot { (ta, tb) } else { (tb, ta) };
        if x.pot == y.pot {
            return None;
        }
        Some(self.get(
            x.pot,
            y.pot,
            instance.index_in_pot(x.id),
            instance.index_in_pot(y.id),
        ))
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn max_stochastic_deviation(&self) -> (usize, f64) {
        let n = self.groups;
        let mut worst = (0, 0.0f64);
        for (b, block) in self.blocks.iter().enumerate() {
            for i in 0..n {
                let row: f64 = block[i * n..(i + 1) * n].iter().sum();
                let col: f64 = (0..n).map(|r| block[r * n + i]).sum();
                let dev = (row - 1.0).abs().max((col - 1.0).abs());
                if dev > worst.1 {
                    worst = (b, dev);
                }
            }
        }
        worst
    }

    pub fn check_doubly_stochastic(&self, tolerance: f64) -> Result<()> {
        let (b, dev) = self.max_stochastic_deviation();
        if dev > tolerance {
            let (pot_a, pot_b) = pot_pairs(self.pots)[b];
            return Err(DrawError::NotStochastic {
                pot_a: pot_a + 1,
                pot_b: pot_b + 1,
                deviation: dev,
            });
        }
        Ok(())
    }
}

pub(crate) fn pair_index(pots: usize, k: usize, l: usize) -> usize {
    assert!(k < l && l < pots, "pot pair ({k},{l}) out of order");
    // pairs before row k: sum_{r<k} (pots - 1 - r)
    k * (2 * pots - k - 1) / 2 + (l - k - 1)
}

/// Exact counterpart of [`PairMatrixSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExactPairMatrixSet {
    pub pots: usize,
    pub groups: usize,
    pub blocks: Vec<Vec<BigRational>>,
}

impl ExactPairMatrixSet {
    /// Integer co-occurrence counts over a common denominator.
    pub fn from_counts(pots: usize, groups: usize, counts: &[Vec<u64>], denominator: u64) -> Self {
        let d = BigInt::from(denominator);
        ExactPairMatrixSet {
            pots,
            groups,
            blocks: counts
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|&c| BigRational::new(BigInt::from(c), d.clone()))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn get(&self, k: usize, l: usize, i: usize, j: usize) -> &BigRational {
        &self.blocks[pair_index(self.pots, k, l)][i * self.groups + j]
    }

    pub fn is_doubly_stochastic(&self) -> bool {
        let n = self.groups;
        self.blocks.iter().all(|block| {
            (0..n).all(|i| {
                let row: BigRational = block[i * n..(i + 1) * n].iter().cloned().sum();
                let col: BigRational = (0..n).map(|r| block[r * n + i].clone()).sum();
                row.is_one() && col.is_one()
            })
        })
    }

    pub fn to_f64(&self) -> PairMatrixSet {
        PairMatrixSet {
            pots: self.pots,
            groups: self.groups,
            blocks: self
                .blocks
                .iter()
                .map(|b| b.iter().map(rational_to_f64).collect())
                .collect(),
            provenance: Provenance::Exact,
        }
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

/// Integer co-occurrence counts per pot pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixAccumulator {
    pots: usize,
    groups: usize,
    counts: Vec<u64>,
    trials: u64,
}

impl MatrixAccumulator {
    pub fn new(pots: usize, groups: usize) -> Self {
        let pairs = pots * pots.saturating_sub(1) / 2;
        MatrixAccumulator {
            pots,
            groups,
            counts: vec![0; pairs * groups * groups],
            trials: 0,
        }
    }

    pub fn for_instance(instance: &Instance) -> Self {
        Self::new(instance.pots(), instance.groups())
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    /// Counts for pot pair `(k, l)`, row-major.
    pub fn block(&self, k: usize, l: usize) -> &[u64] {
        let nn = self.groups * self.groups;
        let b = pair_index(self.pots, k, l);
        &self.counts[b * nn..(b + 1) * nn]
    }

    pub fn accumulate(&mut self, assignment: &Assignment) -> Result<()> {
        assignment.require_complete()?;
        if assignment.groups() != self.groups || assignment.pots() != self.pots {
            return Err(DrawError::Unsupported("assignment shape mismatch".into()));
        }
        self.add_unchecked(assignment);
        Ok(())
    }

    #[inline]
    pub(crate) fn add_unchecked(&mut self, assignment: &Assignment) {
        let n = self.groups;
        let nn = n * n;
        for g in 0..n {
            let mut b = 0;
            for k in 0..self.pots {
                let i = assignment.get(g, k).expect("complete").index() % n;
                for l in k + 1..self.pots {
                    let j = assignment.get(g, l).expect("complete").index() % n;
                    self.counts[b * nn + i * n + j] += 1;
                    b += 1;
                }
            }
        }
        self.trials += 1;
    }

    pub fn merge(&mut self, other: &MatrixAccumulator) -> Result<()> {
        if other.pots != self.pots || other.groups != self.groups {
            return Err(DrawError::Unsupported("accumulator shape mismatch".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.trials += other.trials;
        Ok(())
    }

    /// `self` with the trials of `part` removed; `part` must be a summand.
    pub(crate) fn without(&self, part: &MatrixAccumulator) -> MatrixAccumulator {
        MatrixAccumulator {
            pots: self.pots,
            groups: self.groups,
            counts: self
                .counts
                .iter()
                .zip(&part.counts)
                .map(|(a, b)| a - b)
                .collect(),
            trials: self.trials - part.trials,
        }
    }
}

/// Normalizes counts by the trial count.
pub fn pair_matrices(acc: &MatrixAccumulator) -> Result<PairMatrixSet> {
    if acc.trials == 0 {
        return Err(DrawError::ZeroTrials);
    }
    let nn = acc.groups * acc.groups;
    let t = acc.trials as f64;
    let blocks = acc
        .counts
        .chunks(nn.max(1))
        .map(|b| b.iter().map(|&c| c as f64 / t).collect())
        .collect();
    Ok(PairMatrixSet {
        pots: acc.pots,
        groups: acc.groups,
        blocks,
        provenance: Provenance::Empirical { trials: acc.trials },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairContribution {
    /// 1-based pot numbers.
    pub pots: (usize, usize),
    /// Mean HHI over the matrix's rows and columns.
    pub hhi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub i_hat: f64,
    pub i: f64,
    pub pairs: Vec<PairContribution>,
}

fn row_col_hhi(block: &[f64], n: usize) -> (f64, f64) {
    let rows: f64 = (0..n)
        .map(|i| block[i * n..(i + 1) * n].iter().map(|p| p * p).sum::<f64>())
        .sum();
    let cols: f64 = (0..n)
        .map(|j| (0..n).map(|i| block[i * n + j].powi(2)).sum::<f64>())
        .sum();
    (rows, cols)
}

/// Mean HHI of each matrix's rows and columns, per pot pair.
pub fn pair_hhi(matrices: &PairMatrixSet) -> Vec<f64> {
    let n = matrices.groups;
    matrices
        .blocks
        .iter()
        .map(|b| {
            let (rows, cols) = row_col_hhi(b, n);
            (rows + cols) / (2 * n) as f64
        })
        .collect()
}

/// Average row/column Herfindahl–Hirschman index `Î` over all pot pairs.
pub fn hhi_index(matrices: &PairMatrixSet) -> Result<f64> {
    if matrices.pots < 2 {
        return Err(DrawError::Unsupported("concentration needs two pots".into()));
    }
    matrices.check_doubly_stochastic(STOCHASTIC_TOLERANCE)?;
    let per_pair = pair_hhi(matrices);
    Ok(per_pair.iter().sum::<f64>() / per_pair.len() as f64)
}

/// Rescales `Î ∈ [1/n, 1]` to `I ∈ [0, 1]`.
pub fn inequality(i_hat: f64, groups: usize) -> Result<f64> {
    if groups < 2 {
        return Err(DrawError::Unsupported("inequality needs at least two groups".into()));
    }
    let floor = 1.0 / groups as f64;
    let tol = 1e-9;
    if !(floor - tol..=1.0 + tol).contains(&i_hat) {
        return Err(DrawError::OutOfRange {
            value: i_hat,
            lo: floor,
            hi: 1.0,
        });
    }
    Ok((i_hat - floor) / (1.0 - floor))
}

pub fn inequality_report(matrices: &PairMatrixSet) -> Result<InequalityReport> {
    let i_hat = hhi_index(matrices)?;
    let i = inequality(i_hat, matrices.groups)?;
    let pairs = pot_pairs(matrices.pots)
        .into_iter()
        .zip(pair_hhi(matrices))
        .map(|((k, l), hhi)| PairContribution {
            pots: (k + 1, l + 1),
            hhi,
        })
        .collect();
    Ok(InequalityReport { i_hat, i, pairs })
}

/// `Î` in exact arithmetic.
pub fn hhi_index_exact(matrices: &ExactPairMatrixSet) -> Result<BigRational> {
    if matrices.pots < 2 {
        return Err(DrawError::Unsupported("concentration needs two pots".into()));
    }
    if !matrices.is_doubly_stochastic() {
        return Err(DrawError::NotStochastic {
            pot_a: 0,
            pot_b: 0,
            deviation: f64::NAN,
        });
    }
    let n = matrices.groups;
    let mut total = BigRational::zero();
    for block in &matrices.blocks {
        let mut rows = BigRational::zero();
        let mut cols = BigRational::zero();
        for i in 0..n {
            for j in 0..n {
                rows += &block[i * n + j] * &block[i * n + j];
                cols += &block[j * n + i] * &block[j * n + i];
            }
        }
        total += (rows + cols) / BigRational::from_integer(BigInt::from(2 * n));
    }
    Ok(total / BigRational::from_integer(BigInt::from(matrices.blocks.len())))
}

pub fn inequality_exact(i_hat: &BigRational, groups: usize) -> Result<BigRational> {
    if groups < 2 {
        return Err(DrawError::Unsupported("inequality needs at least two groups".into()));
    }
    let floor = BigRational::new(BigInt::one(), BigInt::from(groups));
    if *i_hat < floor || *i_hat > BigRational::one() {
        return Err(DrawError::OutOfRange {
            value: rational_to_f64(i_hat),
            lo: rational_to_f64(&floor),
            hi: 1.0,
        });
    }
    Ok((i_hat - &floor) / (BigRational::one() - floor))
}

/// Mergeable tally of per-trial unattractive counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnattractiveTally {
    /// `counts[v]` = trials with exactly `v` unattractive matches.
    pub counts: Vec<u64>,
    pub sum: u64,
    pub sum_sq: u128,
}

impl UnattractiveTally {
    pub fn add(&mut self, value: u32) {
        let v = value as usize;
        if self.counts.len() <= v {
            self.counts.resize(v + 1, 0);
        }
        self.counts[v] += 1;
        self.sum += value as u64;
        self.sum_sq += (value as u128) * (value as u128);
    }

    pub fn merge(&mut self, other: &UnattractiveTally) {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn trials(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn stats(&self) -> Result<UnattractiveStats> {
        let n = self.trials();
        if n == 0 {
            return Err(DrawError::ZeroTrials);
        }
        let nf = n as f64;
        let mean = self.sum as f64 / nf;
        let var = if n > 1 {
            ((self.sum_sq as f64) - nf * mean * mean).max(0.0) / (nf - 1.0)
        } else {
            0.0
        };
        let histogram = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(v, &c)| (v as u32, c as f64 / nf))
            .collect();
        Ok(UnattractiveStats {
            histogram,
            mean,
            stderr: (var / nf).sqrt(),
            trials: n,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnattractiveStats {
    /// Empirical probability per observed count.
    pub histogram: BTreeMap<u32, f64>,
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

impl UnattractiveStats {
    pub fn probability(&self, value: u32) -> f64 {
        self.histogram.get(&value).copied().unwrap_or(0.0)
    }
}

pub fn unattractive_stats(counts: &[u32]) -> Result<UnattractiveStats> {
    let mut tally = UnattractiveTally::default();
    for &c in counts {
        tally.add(c);
    }
    tally.stats()
}

/// Delimited matrix export: one block per pot pair, team-name headers,
/// six decimals.
pub fn export_matrices(instance: &Instance, matrices: &PairMatrixSet) -> String {
    let mut out = String::new();
    for (b, (k, l)) in pot_pairs(matrices.pots).into_iter().enumerate() {
        if b > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "# pots {}-{}", k + 1, l + 1);
        out.push_str("team");
        for t in instance.pot_teams(l) {
            let _ = write!(out, ",{}", t.name);
        }
        out.push('\n');
        for (i, t) in instance.pot_teams(k).iter().enumerate() {
            out.push_str(&t.name);
            for j in 0..matrices.groups {
                let _ = write!(out, ",{:.6}", matrices.get(k, l, i, j));
            }
            out.push('\n');
        }
    }
    out
}

/// Percentages with one decimal; cells that never occur print as `X`.
pub fn format_percent_matrices(instance: &Instance, matrices: &PairMatrixSet) -> String {
    let width = instance
        .teams()
        .iter()
        .map(|t| t.name.len())
        .max()
        .unwrap_or(4)
        .max(4);
    let mut out = String::new();
    for (k, l) in pot_pairs(matrices.pots) {
        let _ = writeln!(out, "Pot {} vs Pot {} (%)", k + 1, l + 1);
        let _ = write!(out, "{:width$}", "");
        for t in instance.pot_teams(l) {
            let short: String = t.name.chars().take(6).collect();
            let _ = write!(out, " {short:>6}");
        }
        out.push('\n');
        for (i, t) in instance.pot_teams(k).iter().enumerate() {
            let _ = write!(out, "{:width$}", t.name);
            for j in 0..matrices.groups {
                let p = matrices.get(k, l, i, j);
                if p == 0.0 {
                    let _ = write!(out, " {:>6}", "X");
                } else {
                    let _ = write!(out, " {:>6.1}", 100.0 * p);
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
