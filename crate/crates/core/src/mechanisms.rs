//! Draw procedures.
//!
//! * **Uniform**: rejection sampling over host-feasible assignments. Every
//!   valid assignment is equally likely.
//! * **Skip**: pots are emptied one after another; each drawn team goes to
//!   the first group (in label order) that keeps the draw valid and
//!   completable.
//!
//! Randomness comes from a [`RngStream`]: a ChaCha8 generator keyed by a
//! 64-bit seed and a 64-bit stream index, so a trial's outcome depends only
//! on `(seed, index)` and never on scheduling.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DrawError, Result};
use crate::feasibility::{Completer, Rules, SearchState};
use crate::model::{Assignment, ConstraintSet, Instance, TeamId};

/// Proposal cap for the rejection sampler.
pub const DEFAULT_PROPOSAL_CAP: u64 = 10_000_000;

/// Entries kept by a Skip sampler's completability cache before it resets.
pub const DEFAULT_CACHE_LIMIT: usize = 1 << 21;

pub type DrawRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Uniform,
    Skip,
}

impl Mechanism {
    pub const ALL: [Mechanism; 2] = [Mechanism::Uniform, Mechanism::Skip];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Uniform => "uniform",
            Mechanism::Skip => "skip",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = DrawError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Mechanism::Uniform),
            "skip" => Ok(Mechanism::Skip),
            other => Err(DrawError::Unsupported(format!("unknown mechanism {other:?}"))),
        }
    }
}

/// Identifies one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        RngStream { seed, index }
    }

    pub fn rng(&self) -> DrawRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }
}

/// One Skip placement: the drawn team, where it went, and the groups
/// with an open slot that were passed over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipStep {
    pub team: TeamId,
    pub group: usize,
    pub skipped: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DrawOutcome {
    pub assignment: Assignment,
    /// Proposals consumed, accepted one included; always 1 for Skip.
    pub proposals_used: u64,
    /// Skip placements in draw order; empty for Uniform.
    pub trace: Vec<SkipStep>,
}

/// Host exclusion members and remaining teams, per pot.
#[derive(Clone, Debug)]
struct HostPlan {
    hosts: Vec<Vec<TeamId>>,
    others: Vec<Vec<TeamId>>,
}

impl HostPlan {
    fn new(instance: &Instance) -> Result<Self> {
        let size = instance.host_exclusion().len();
        if size > instance.groups() {
            return Err(DrawError::HostExclusionTooLarge {
                size,
                groups: instance.groups(),
            });
        }
        let mut hosts = vec![Vec::new(); instance.pots()];
        let mut others = vec![Vec::new(); instance.pots()];
        for team in instance.teams() {
            if instance.is_host(team.id) {
                hosts[team.pot].push(team.id);
            } else {
                others[team.pot].push(team.id);
            }
        }
        Ok(HostPlan { hosts, others })
    }
}

/// Uniform proposals over host-feasible assignments plus rejection.
pub struct UniformSampler<'r> {
    rules: &'r Rules,
    plan: HostPlan,
    cap: u64,
    scratch: Vec<TeamId>,
    sig: Vec<u128>,
}

impl<'r> UniformSampler<'r> {
    pub fn new(instance: &Instance, rules: &'r Rules) -> Result<Self> {
        Ok(UniformSampler {
            rules,
            plan: HostPlan::new(instance)?,
            cap: DEFAULT_PROPOSAL_CAP,
            scratch: Vec::with_capacity(instance.groups()),
            sig: vec![0; instance.groups()],
        })
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap.max(1);
        self
    }

    /// Writes a uniformly random host-feasible assignment into `out`: the
    /// host members of each pot take distinct host-free groups chosen
    /// uniformly, then the other teams fill the rest in uniform order.
    fn propose(&mut self, rng: &mut DrawRng, out: &mut Assignment) {
        let groups = out.groups();
        let mut free = [0u8; 64];
        for (g, slot) in free.iter_mut().enumerate().take(groups) {
            *slot = g as u8;
        }
        let mut free_len = groups;
        self.sig.iter_mut().for_each(|s| *s = 0);
        for pot in 0..out.pots() {
            let mut taken = 0u64;
            for &host in &self.plan.hosts[pot] {
                let j = rng.random_range(0..free_len);
                let g = free[j] as usize;
                free.swap(j, free_len - 1);
                free_len -= 1;
                taken |= 1 << g;
                out.set(g, pot, Some(host));
                self.sig[g] += self.rules.lanes(host);
            }
            self.scratch.clear();
            self.scratch.extend_from_slice(&self.plan.others[pot]);
            self.scratch.shuffle(rng);
            let mut next = self.scratch.iter();
            for g in (0..groups).filter(|g| taken >> g & 1 == 0) {
                let team = *next.next().expect("pot sizes match group count");
                out.set(g, pot, Some(team));
                self.sig[g] += self.rules.lanes(team);
            }
        }
    }

    fn proposal_valid(&self) -> bool {
        self.sig
            .iter()
            .all(|&s| self.rules.upper_ok(s) && self.rules.lower_ok(s))
    }

    /// Samples until acceptance; returns the proposals used.
    pub fn draw_into(&mut self, rng: &mut DrawRng, out: &mut Assignment) -> Result<u64> {
        for used in 1..=self.cap {
            self.propose(rng, out);
            if self.proposal_valid() {
                return Ok(used);
            }
        }
        Err(DrawError::ProposalBudgetExhausted { cap: self.cap })
    }
}

/// The sequential Skip procedure with exact look-ahead.
pub struct SkipSampler<'r> {
    instance: &'r Instance,
    rules: &'r Rules,
    completer: Completer<'r>,
    pot_order: Vec<usize>,
    orders: Vec<Vec<TeamId>>,
    feasible: Option<bool>,
}

impl<'r> SkipSampler<'r> {
    /// Sampler whose completability results are cached across draws.
    pub fn new(instance: &'r Instance, rules: &'r Rules) -> Self {
        Self::with_completer(instance, rules, Completer::with_cache(rules, DEFAULT_CACHE_LIMIT))
    }

    /// Sampler running a fresh uncached search for every look-ahead.
    pub fn uncached(instance: &'r Instance, rules: &'r Rules) -> Self {
        Self::with_completer(instance, rules, Completer::new(rules))
    }

    fn with_completer(instance: &'r Instance, rules: &'r Rules, completer: Completer<'r>) -> Self {
        SkipSampler {
            instance,
            rules,
            completer,
            pot_order: (0..instance.pots()).collect(),
            orders: (0..instance.pots())
                .map(|p| instance.pot_teams(p).iter().map(|t| t.id).collect())
                .collect(),
            feasible: None,
        }
    }

    /// Overrides the pot order (0-based pot indices, each exactly once).
    pub fn with_pot_order(mut self, order: Vec<usize>) -> Result<Self> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..self.instance.pots()).collect::<Vec<_>>() {
            return Err(DrawError::Unsupported(format!(
                "pot order {order:?} is not a permutation of the pots"
            )));
        }
        self.pot_order = order;
        Ok(self)
    }

    pub fn search_nodes(&self) -> u64 {
        self.completer.nodes()
    }

    fn ensure_feasible(&mut self) -> Result<()> {
        let feasible = match self.feasible {
            Some(f) => f,
            None => {
                let mut st = SearchState::empty(self.rules);
                let f = self.completer.completable(&mut st);
                self.feasible = Some(f);
                f
            }
        };
        if feasible {
            Ok(())
        } else {
            Err(DrawError::Infeasible)
        }
    }

    /// Draws each pot in random order and places the teams.
    pub fn draw_into(
        &mut self,
        rng: &mut DrawRng,
        out: &mut Assignment,
        trace: Option<&mut Vec<SkipStep>>,
    ) -> Result<()> {
        self.ensure_feasible()?;
        let mut orders = std::mem::take(&mut self.orders);
        for &pot in &self.pot_order {
            let order = &mut orders[pot];
            order.sort_unstable();
            order.shuffle(rng);
        }
        let result = self.place_all(&orders, out, trace);
        self.orders = orders;
        result
    }

    /// Places teams in the given per-pot draw orders (`orders[p]` is the
    /// order for pot `p`).
    pub fn draw_with_orders(
        &mut self,
        orders: &[Vec<TeamId>],
        out: &mut Assignment,
        trace: Option<&mut Vec<SkipStep>>,
    ) -> Result<()> {
        if orders.len() != self.instance.pots() {
            return Err(DrawError::Unsupported(format!(
                "{} draw orders given for {} pots",
                orders.len(),
                self.instance.pots()
            )));
        }
        for (p, order) in orders.iter().enumerate() {
            let mut got: Vec<TeamId> = order.clone();
            got.sort_unstable();
            let want: Vec<TeamId> = self.instance.pot_teams(p).iter().map(|t| t.id).collect();
            if got != want {
                return Err(DrawError::Unsupported(format!(
                    "draw order for pot {} is not a permutation of its teams",
                    p + 1
                )));
            }
        }
        self.ensure_feasible()?;
        self.place_all(orders, out, trace)
    }

    fn place_all(
        &mut self,
        orders: &[Vec<TeamId>],
        out: &mut Assignment,
        mut trace: Option<&mut Vec<SkipStep>>,
    ) -> Result<()> {
        let rules = self.rules;
        let groups = rules.groups();
        let mut st = SearchState::empty(rules);
        if let Some(t) = trace.as_deref_mut() {
            t.clear();
        }
        let mut skipped = Vec::new();
        for &pot in &self.pot_order {
            for &team in &orders[pot] {
                let ty = rules.type_of(team);
                let lanes = rules.lanes(team);
                skipped.clear();
                let mut chosen = None;
                for g in 0..groups {
                    if !st.is_open(g, pot) {
                        continue;
                    }
                    if !rules.fits(st.sig[g], lanes) {
                        skipped.push(g);
                        continue;
                    }
                    st.place(rules, g, pot, ty);
                    let open_after = st.open[g].count_ones();
                    if rules.lower_reachable(st.sig[g], open_after)
                        && self.completer.completable(&mut st)
                    {
                        chosen = Some(g);
                        break;
                    }
                    st.unplace(rules, g, pot, ty);
                    skipped.push(g);
                }
                // unreachable while the look-ahead is exact
                let group = chosen.ok_or(DrawError::Infeasible)?;
                out.set(group, pot, Some(team));
                if let Some(t) = trace.as_deref_mut() {
                    t.push(SkipStep {
                        team,
                        group,
                        skipped: skipped.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Uniform sample over assignments whose host exclusion members sit in
/// pairwise distinct groups.
pub fn sample_host_feasible(instance: &Instance, rng: &mut DrawRng) -> Result<Assignment> {
    let rules = Rules::new(instance, ConstraintSet::NONE)?;
    let mut sampler = UniformSampler::new(instance, &rules)?;
    let mut out = Assignment::empty(instance);
    sampler.propose(rng, &mut out);
    Ok(out)
}

pub fn uniform_draw(
    instance: &Instance,
    constraints: ConstraintSet,
    rng: &mut DrawRng,
) -> Result<DrawOutcome> {
    uniform_draw_with_cap(instance, constraints, rng, DEFAULT_PROPOSAL_CAP)
}

pub fn uniform_draw_with_cap(
    instance: &Instance,
    constraints: ConstraintSet,
    rng: &mut DrawRng,
    cap: u64,
) -> Result<DrawOutcome> {
    let rules = Rules::new(instance, constraints)?;
    let mut sampler = UniformSampler::new(instance, &rules)?.with_cap(cap);
    let mut assignment = Assignment::empty(instance);
    let proposals_used = sampler.draw_into(rng, &mut assignment)?;
    Ok(DrawOutcome {
        assignment,
        proposals_used,
        trace: Vec::new(),
    })
}

pub fn skip_draw(
    instance: &Instance,
    constraints: ConstraintSet,
    rng: &mut DrawRng,
) -> Result<DrawOutcome> {
    let rules = Rules::new(instance, constraints)?;
    let mut sampler = SkipSampler::new(instance, &rules);
    let mut assignment = Assignment::empty(instance);
    let mut trace = Vec::new();
    sampler.draw_into(rng, &mut assignment, Some(&mut trace))?;
    Ok(DrawOutcome {
        assignment,
        proposals_used: 1,
        trace,
    })
}

/// Skip draw with pinned per-pot draw orders.
pub fn skip_draw_with_orders(
    instance: &Instance,
    constraints: ConstraintSet,
    orders: &[Vec<TeamId>],
) -> Result<DrawOutcome> {
    let rules = Rules::new(instance, constraints)?;
    let mut sampler = SkipSampler::new(instance, &rules);
    let mut assignment = Assignment::empty(instance);
    let mut trace = Vec::new();
    sampler.draw_with_orders(orders, &mut assignment, Some(&mut trace))?;
    Ok(DrawOutcome {
        assignment,
        proposals_used: 1,
        trace,
    })
}

/// Either sampler behind one interface; reused across the trials of a shard.
pub enum Drawer<'r> {
    Uniform(UniformSampler<'r>),
    Skip(SkipSampler<'r>),
}

impl<'r> Drawer<'r> {
    pub fn new(instance: &'r Instance, rules: &'r Rules, mechanism: Mechanism) -> Result<Self> {
        Ok(match mechanism {
            Mechanism::Uniform => Drawer::Uniform(UniformSampler::new(instance, rules)?),
            Mechanism::Skip => Drawer::Skip(SkipSampler::new(instance, rules)),
        })
    }

    /// Runs trial `index` of the stream family `seed`; returns proposals used.
    pub fn trial(
        &mut self,
        seed: u64,
        index: u64,
        out: &mut Assignment,
        trace: Option<&mut Vec<SkipStep>>,
    ) -> Result<u64> {
        let mut rng = RngStream::new(seed, index).rng();
        match self {
            Drawer::Uniform(s) => s.draw_into(&mut rng, out),
            Drawer::Skip(s) => s.draw_into(&mut rng, out, trace).map(|()| 1),
        }
    }
}

/// One trial as a pure function of its inputs.
pub fn draw_trial(
    instance: &Instance,
    constraints: ConstraintSet,
    mechanism: Mechanism,
    seed: u64,
    index: u64,
) -> Result<DrawOutcome> {
    let rules = Rules::new(instance, constraints)?;
    let mut drawer = Drawer::new(instance, &rules, mechanism)?;
    let mut assignment = Assignment::empty(instance);
    let mut trace = Vec::new();
    let proposals_used = drawer.trial(seed, index, &mut assignment, Some(&mut trace))?;
    Ok(DrawOutcome {
        assignment,
        proposals_used,
        trace,
    })
}
