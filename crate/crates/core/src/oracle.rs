//! Exact distributions by exhaustive enumeration on small instances.
//!
//! Nothing here reuses the production feasibility search: validity and
//! completability are re-derived from the instance with straightforward
//! bitmask code so that the oracles can serve as independent ground truth.
//! Probabilities are integer counts over a known denominator (valid
//! labeled assignments for Uniform, per-pot draw orders for Skip).

use std::collections::{BTreeMap, HashMap};

use num::{BigInt, BigRational};

use crate::error::{DrawError, Result};
use crate::mechanisms::Mechanism;
use crate::metrics::{hhi_index_exact, inequality_exact, pot_pairs, ExactPairMatrixSet};
use crate::model::{Assignment, ConstraintSet, Instance, TeamId, EUROPE_BOUNDS};

pub const DEFAULT_ENUMERATION_BUDGET: u64 = 10_000_000;

/// Groups of one assignment with labels ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactClass {
    pub groups: Vec<Vec<TeamId>>,
    /// Occurrences among the `denominator` enumerated outcomes.
    pub weight: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    pub mechanism: Mechanism,
    pub denominator: u64,
    /// Sorted by group lists.
    pub classes: Vec<ExactClass>,
    /// Co-group counts per pot pair over `denominator`, row-major.
    pub pair_counts: Vec<Vec<u64>>,
    pub matrices: ExactPairMatrixSet,
    pub i_hat: BigRational,
    pub i: BigRational,
}

impl ExactDistribution {
    pub fn class_weight(&self, groups: &[Vec<TeamId>]) -> u64 {
        self.classes
            .binary_search_by(|c| c.groups.as_slice().cmp(groups))
            .map(|i| self.classes[i].weight)
            .unwrap_or(0)
    }

    /// Exact probability of the class of `assignment`.
    pub fn probability_of(&self, assignment: &Assignment) -> BigRational {
        BigRational::new(
            BigInt::from(self.class_weight(&assignment.co_membership())),
            BigInt::from(self.denominator),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniformEnumeration {
    pub distribution: ExactDistribution,
    /// All `(n!)^m` labeled assignments.
    pub total: u64,
    /// Assignments meeting the host exclusion alone.
    pub host_feasible: u64,
    pub feasible: u64,
}

impl UniformEnumeration {
    /// Acceptance rate of rejection sampling from host-feasible proposals.
    pub fn acceptance(&self) -> f64 {
        self.feasible as f64 / self.host_feasible as f64
    }
}

/// Plain restatement of the draw restrictions over team bitmasks.
struct Brute {
    pots: usize,
    groups: usize,
    pot_mask: Vec<u64>,
    /// Upper-bounded team sets: (members, max per group).
    caps: Vec<(u64, u32)>,
    /// Lower-bounded team sets: (members, min per group).
    floors: Vec<(u64, u32)>,
    hosts: u64,
    pairs: Vec<u64>,
}

impl Brute {
    fn new(instance: &Instance, constraints: ConstraintSet) -> Result<Self> {
        if instance.team_count() > 64 {
            return Err(DrawError::Unsupported(
                "oracles handle at most 64 teams".into(),
            ));
        }
        let bit = |t: TeamId| 1u64 << t.index();
        let pot_mask = (0..instance.pots())
            .map(|p| instance.pot_teams(p).iter().fold(0, |m, t| m | bit(t.id)))
            .collect();
        let confed_mask = |c| {
            instance
                .teams()
                .iter()
                .filter(|t| t.confederation == c)
                .fold(0u64, |m, t| m | bit(t.id))
        };
        let mut caps = Vec::new();
        let mut floors = Vec::new();
        for c in constraints.active() {
            match c.capped_confederation() {
                Some(name) => {
                    if let Some(id) = instance.confederation_by_name(name) {
                        caps.push((confed_mask(id), 1));
                    }
                }
                None => {
                    if let Some(eu) = instance.europe() {
                        caps.push((confed_mask(eu), EUROPE_BOUNDS.1 as u32));
                        floors.push((confed_mask(eu), EUROPE_BOUNDS.0 as u32));
                    }
                }
            }
        }
        Ok(Brute {
            pots: instance.pots(),
            groups: instance.groups(),
            pot_mask,
            caps,
            floors,
            hosts: instance.host_exclusion().iter().fold(0, |m, &t| m | bit(t)),
            pairs: instance
                .forbidden_pairs()
                .iter()
                .map(|&(a, b)| bit(a) | bit(b))
                .collect(),
        })
    }

    fn host_ok(&self, group: u64) -> bool {
        (group & self.hosts).count_ones() <= 1
    }

    /// No upper bound is exceeded.
    fn upper_ok(&self, group: u64) -> bool {
        self.host_ok(group)
            && self.caps.iter().all(|&(m, hi)| (group & m).count_ones() <= hi)
            && self.pairs.iter().all(|&p| group & p != p)
    }

    fn full_ok(&self, group: u64) -> bool {
        self.upper_ok(group)
            && self
                .floors
                .iter()
                .all(|&(m, lo)| (group & m).count_ones() >= lo)
    }

    fn has_pot(&self, group: u64, pot: usize) -> bool {
        group & self.pot_mask[pot] != 0
    }
}

/// Memoized existence of a valid completion, keyed by the label-free
/// partial assignment.
struct BruteCompleter<'b> {
    brute: &'b Brute,
    memo: HashMap<Vec<u64>, bool>,
}

impl<'b> BruteCompleter<'b> {
    fn completable(&mut self, groups: &mut [u64], placed: u64) -> bool {
        let all = self.brute.pot_mask.iter().fold(0, |a, m| a | m);
        if placed == all {
            return groups.iter().all(|&g| self.brute.full_ok(g));
        }
        let mut key = groups.to_vec();
        key.sort_unstable();
        if let Some(&hit) = self.memo.get(&key) {
            return hit;
        }
        let next = (all & !placed).trailing_zeros() as usize;
        let pot = self
            .brute
            .pot_mask
            .iter()
            .position(|m| m >> next & 1 == 1)
            .expect("team belongs to a pot");
        let bit = 1u64 << next;
        let mut ok = false;
        for g in 0..groups.len() {
            if self.brute.has_pot(groups[g], pot) || !self.brute.upper_ok(groups[g] | bit) {
                continue;
            }
            groups[g] |= bit;
            ok = self.completable(groups, placed | bit);
            groups[g] &= !bit;
            if ok {
                break;
            }
        }
        self.memo.insert(key, ok);
        ok
    }
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

fn check_budget(instance: &Instance, budget: u64) -> Result<u64> {
    let needed = (0..instance.pots())
        .try_fold(1u128, |acc, _| acc.checked_mul(factorial(instance.groups())))
        .unwrap_or(u128::MAX);
    if needed > budget as u128 {
        return Err(DrawError::EnumerationBudgetExceeded { needed, budget });
    }
    Ok(needed as u64)
}

/// Accumulates outcomes into class weights and pair counts.
struct Tally {
    pots: usize,
    groups: usize,
    pot_of: Vec<usize>,
    index_in_pot: Vec<usize>,
    classes: BTreeMap<Vec<u64>, u64>,
    pair_counts: Vec<Vec<u64>>,
    outcomes: u64,
}

impl Tally {
    fn new(instance: &Instance) -> Self {
        let n = instance.groups();
        Tally {
            pots: instance.pots(),
            groups: n,
            pot_of: instance.teams().iter().map(|t| t.pot).collect(),
            index_in_pot: instance
                .teams()
                .iter()
                .map(|t| instance.index_in_pot(t.id))
                .collect(),
            classes: BTreeMap::new(),
            pair_counts: vec![vec![0; n * n]; pot_pairs(instance.pots()).len()],
            outcomes: 0,
        }
    }

    fn record(&mut self, groups: &[u64]) {
        let mut key = groups.to_vec();
        key.sort_unstable();
        *self.classes.entry(key).or_insert(0) += 1;
        let mut members = [0usize; 64];
        for &g in groups {
            let mut bits = g;
            let mut k = 0;
            while bits != 0 {
                members[k] = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                k += 1;
            }
            for a in 0..k {
                for b in a + 1..k {
                    let (x, y) = (members[a], members[b]);
                    let (px, py) = (self.pot_of[x], self.pot_of[y]);
                    let (x, y, px, py) = if px < py { (x, y, px, py) } else { (y, x, py, px) };
                    let idx = px * (2 * self.pots - px - 1) / 2 + (py - px - 1);
                    self.pair_counts[idx][self.index_in_pot[x] * self.groups + self.index_in_pot[y]] += 1;
                }
            }
        }
        self.outcomes += 1;
    }

    fn finish(self, mechanism: Mechanism) -> Result<ExactDistribution> {
        if self.outcomes == 0 {
            return Err(DrawError::Infeasible);
        }
        let matrices =
            ExactPairMatrixSet::from_counts(self.pots, self.groups, &self.pair_counts, self.outcomes);
        let i_hat = hhi_index_exact(&matrices)?;
        let i = inequality_exact(&i_hat, self.groups)?;
        let mut classes: Vec<ExactClass> = self
            .classes
            .into_iter()
            .map(|(key, weight)| {
                let mut groups: Vec<Vec<TeamId>> = key
                    .iter()
                    .map(|&g| {
                        let mut v = Vec::new();
                        let mut bits = g;
                        while bits != 0 {
                            v.push(TeamId(bits.trailing_zeros() as u16));
                            bits &= bits - 1;
                        }
                        v
                    })
                    .collect();
                groups.sort();
                ExactClass { groups, weight }
            })
            .collect();
        classes.sort_by(|a, b| a.groups.cmp(&b.groups));
        Ok(ExactDistribution {
            mechanism,
            denominator: self.outcomes,
            classes,
            pair_counts: self.pair_counts,
            matrices,
            i_hat,
            i,
        })
    }
}

fn pot_members(instance: &Instance, pot: usize) -> Vec<u64> {
    instance
        .pot_teams(pot)
        .iter()
        .map(|t| 1u64 << t.id.index())
        .collect()
}

pub fn enumerate_uniform(instance: &Instance, constraints: ConstraintSet) -> Result<UniformEnumeration> {
    enumerate_uniform_with_budget(instance, constraints, DEFAULT_ENUMERATION_BUDGET)
}

/// Visits every labeled assignment and weights the valid ones equally.
pub fn enumerate_uniform_with_budget(
    instance: &Instance,
    constraints: ConstraintSet,
    budget: u64,
) -> Result<UniformEnumeration> {
    let total = check_budget(instance, budget)?;
    let brute = Brute::new(instance, constraints)?;
    let members: Vec<Vec<u64>> = (0..instance.pots()).map(|p| pot_members(instance, p)).collect();
    let mut tally = Tally::new(instance);
    let mut host_feasible = 0;
    let mut groups = vec![0u64; instance.groups()];

    // Team `t` of pot `p` goes into a group whose pot-`p` slot is empty.
    fn visit(
        brute: &Brute,
        members: &[Vec<u64>],
        pot: usize,
        t: usize,
        groups: &mut Vec<u64>,
        tally: &mut Tally,
        host_feasible: &mut u64,
    ) {
        if pot == brute.pots {
            if groups.iter().all(|&g| brute.host_ok(g)) {
                *host_feasible += 1;
                if groups.iter().all(|&g| brute.full_ok(g)) {
                    tally.record(groups);
                }
            }
            return;
        }
        let (next_pot, next_t) = if t + 1 == brute.groups { (pot + 1, 0) } else { (pot, t + 1) };
        let bit = members[pot][t];
        for g in 0..brute.groups {
            if brute.has_pot(groups[g], pot) {
                continue;
            }
            groups[g] |= bit;
            visit(brute, members, next_pot, next_t, groups, tally, host_feasible);
            groups[g] &= !bit;
        }
    }

    visit(&brute, &members, 0, 0, &mut groups, &mut tally, &mut host_feasible);
    let feasible = tally.outcomes;
    Ok(UniformEnumeration {
        distribution: tally.finish(Mechanism::Uniform)?,
        total,
        host_feasible,
        feasible,
    })
}

pub fn enumerate_skip(instance: &Instance, constraints: ConstraintSet) -> Result<ExactDistribution> {
    enumerate_skip_with_budget(instance, constraints, DEFAULT_ENUMERATION_BUDGET)
}

/// Runs the sequential procedure once for every combination of per-pot
/// draw orders (pots drawn first to last).
pub fn enumerate_skip_with_budget(
    instance: &Instance,
    constraints: ConstraintSet,
    budget: u64,
) -> Result<ExactDistribution> {
    check_budget(instance, budget)?;
    let brute = Brute::new(instance, constraints)?;
    let mut completer = BruteCompleter {
        brute: &brute,
        memo: HashMap::new(),
    };
    let mut groups = vec![0u64; instance.groups()];
    if !completer.completable(&mut groups, 0) {
        return Err(DrawError::Infeasible);
    }
    let members: Vec<Vec<u64>> = (0..instance.pots()).map(|p| pot_members(instance, p)).collect();
    let mut tally = Tally::new(instance);

    fn visit(
        c: &mut BruteCompleter,
        members: &[Vec<u64>],
        pot: usize,
        left: u64,
        placed: u64,
        groups: &mut Vec<u64>,
        tally: &mut Tally,
    ) {
        let brute = c.brute;
        if left == 0 {
            if pot + 1 == brute.pots {
                tally.record(groups);
            } else {
                let next: u64 = members[pot + 1].iter().fold(0, |a, b| a | b);
                visit(c, members, pot + 1, next, placed, groups, tally);
            }
            return;
        }
        let mut bits = left;
        while bits != 0 {
            let bit = bits & bits.wrapping_neg();
            bits &= bits - 1;
            let target = (0..brute.groups).find(|&g| {
                if brute.has_pot(groups[g], pot) || !brute.upper_ok(groups[g] | bit) {
                    return false;
                }
                groups[g] |= bit;
                let ok = c.completable(groups, placed | bit);
                groups[g] &= !bit;
                ok
            });
            let g = target.expect("completable state admits a placement");
            groups[g] |= bit;
            visit(c, members, pot, left & !bit, placed | bit, groups, tally);
            groups[g] &= !bit;
        }
    }

    let first: u64 = members[0].iter().fold(0, |a, b| a | b);
    visit(&mut completer, &members, 0, first, 0, &mut groups, &mut tally);
    tally.finish(Mechanism::Skip)
}

/// Closed-form co-group probabilities when only the host exclusion applies.
///
/// Hosts sit in distinct groups and every host-feasible assignment is
/// equally likely. With `h_k` hosts in pot `k`:
/// host–host pairs never meet, a host meets each non-host of pot `l` with
/// probability `1/(n - h_l)`, and two non-hosts meet with probability
/// `(n - h_k - h_l) / ((n - h_k)(n - h_l))`.
pub fn exact_scenario0_matrices(instance: &Instance) -> Result<ExactPairMatrixSet> {
    if !instance.forbidden_pairs().is_empty() {
        return Err(DrawError::Unsupported(
            "closed form needs an instance without forbidden pairs".into(),
        ));
    }
    let n = instance.groups();
    let hosts: Vec<usize> = (0..instance.pots())
        .map(|p| instance.pot_teams(p).iter().filter(|t| instance.is_host(t.id)).count())
        .collect();
    let q = |num: usize, den: usize| BigRational::new(BigInt::from(num), BigInt::from(den));
    let blocks = pot_pairs(instance.pots())
        .into_iter()
        .map(|(k, l)| {
            let (hk, hl) = (hosts[k], hosts[l]);
            let mut block = Vec::with_capacity(n * n);
            for a in instance.pot_teams(k) {
                for b in instance.pot_teams(l) {
                    block.push(match (instance.is_host(a.id), instance.is_host(b.id)) {
                        (true, true) => q(0, 1),
                        (true, false) => q(1, n - hl),
                        (false, true) => q(1, n - hk),
                        (false, false) => q(n - hk - hl, (n - hk) * (n - hl)),
                    });
                }
            }
            block
        })
        .collect();
    Ok(ExactPairMatrixSet {
        pots: instance.pots(),
        groups: n,
        blocks,
    })
}
