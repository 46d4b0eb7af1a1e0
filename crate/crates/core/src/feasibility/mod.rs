//! Constraint evaluation, unattractive-match counting and completability.
//!
//! Every restriction (Constraints A–E, the host exclusion set and any
//! explicit forbidden pairs) is compiled into an *attribute* with per-group
//! bounds `lo..=hi`. A group's attribute counts are packed into one `u128`
//! with an 8-bit lane per attribute so that bound checks are a few integer
//! operations.

mod search;

use std::fmt;

use crate::error::{DrawError, Result};
use crate::model::{
    composition, Assignment, Constraint, ConstraintSet, Instance, TeamId, EUROPE_BOUNDS,
};

pub use search::{Completer, SearchState};

/// Lanes available for attributes; the top lane is reserved for search keys.
pub(crate) const MAX_ATTRS: usize = 15;
const HIGH_BITS: u128 = 0x8080_8080_8080_8080_8080_8080_8080_8080;

/// Which rule a [`Violation`] refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintTag {
    A,
    B,
    C,
    D,
    E,
    Host,
    Pair,
}

impl From<Constraint> for ConstraintTag {
    fn from(c: Constraint) -> Self {
        match c {
            Constraint::A => ConstraintTag::A,
            Constraint::B => ConstraintTag::B,
            Constraint::C => ConstraintTag::C,
            Constraint::D => ConstraintTag::D,
            Constraint::E => ConstraintTag::E,
        }
    }
}

impl fmt::Display for ConstraintTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintTag::A => "A",
            ConstraintTag::B => "B",
            ConstraintTag::C => "C",
            ConstraintTag::D => "D",
            ConstraintTag::E => "E",
            ConstraintTag::Host => "HOST",
            ConstraintTag::Pair => "PAIR",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub tag: ConstraintTag,
    pub group: usize,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in group {}: {}", self.tag, self.group, self.detail)
    }
}

/// One compiled restriction: every group holds between `lo` and `hi`
/// members of `members`.
#[derive(Clone, Debug)]
pub struct AttrRule {
    pub tag: ConstraintTag,
    pub label: String,
    pub lo: u8,
    pub hi: u8,
    pub members: Vec<TeamId>,
}

/// Constraint set compiled against one instance.
#[derive(Clone, Debug)]
pub struct Rules {
    groups: usize,
    pots: usize,
    attrs: Vec<AttrRule>,
    team_lanes: Vec<u128>,
    hi_offset: u128,
    lo_offset: u128,
    lane_mask: u128,
    lo_mask: u128,
    /// Distinct lane vectors per pot; teams with equal vectors are
    /// interchangeable for feasibility.
    type_lanes: Vec<Vec<u128>>,
    type_of: Vec<u8>,
}

impl Rules {
    pub fn new(instance: &Instance, constraints: ConstraintSet) -> Result<Self> {
        let mut attrs = Vec::new();
        for c in constraints.active() {
            let (members, lo, hi, label): (Vec<TeamId>, u8, u8, String) =
                match c.capped_confederation() {
                    Some(name) => {
                        let Some(confed) = instance.confederation_by_name(name) else {
                            continue;
                        };
                        let members = members_of(instance, confed);
                        if members.len() < 2 {
                            continue;
                        }
                        (members, 0, 1, format!("at most one {name} team"))
                    }
                    None => {
                        let Some(europe) = instance.europe() else {
                            continue;
                        };
                        let (lo, hi) = EUROPE_BOUNDS;
                        let name = &instance.confederation(europe).name;
                        (
                            members_of(instance, europe),
                            lo,
                            hi,
                            format!("between {lo} and {hi} {name} teams"),
                        )
                    }
                };
            attrs.push(AttrRule {
                tag: c.into(),
                label,
                lo,
                hi,
                members,
            });
        }
        if instance.host_exclusion().len() >= 2 {
            attrs.push(AttrRule {
                tag: ConstraintTag::Host,
                label: "host exclusion members kept apart".into(),
                lo: 0,
                hi: 1,
                members: instance.host_exclusion().to_vec(),
            });
        }
        for &(a, b) in instance.forbidden_pairs() {
            attrs.push(AttrRule {
                tag: ConstraintTag::Pair,
                label: format!(
                    "{} and {} kept apart",
                    instance.team(a).name,
                    instance.team(b).name
                ),
                lo: 0,
                hi: 1,
                members: vec![a, b],
            });
        }
        if attrs.len() > MAX_ATTRS {
            return Err(DrawError::Unsupported(format!(
                "{} restrictions exceed the supported {MAX_ATTRS}",
                attrs.len()
            )));
        }
        if instance.pots() > 8 {
            return Err(DrawError::Unsupported("at most 8 pots are supported".into()));
        }

        let mut team_lanes = vec![0u128; instance.team_count()];
        let (mut hi_offset, mut lo_offset, mut lane_mask, mut lo_mask) = (0u128, 0u128, 0u128, 0u128);
        for (a, rule) in attrs.iter().enumerate() {
            let shift = 8 * a as u32;
            for t in &rule.members {
                team_lanes[t.index()] |= 1u128 << shift;
            }
            hi_offset |= ((127 - rule.hi) as u128) << shift;
            lane_mask |= 0x80u128 << shift;
            if rule.lo > 0 {
                lo_offset |= ((128 - rule.lo) as u128) << shift;
                lo_mask |= 0x80u128 << shift;
            }
        }
        debug_assert_eq!(lane_mask & !HIGH_BITS, 0);

        let mut type_lanes = vec![Vec::new(); instance.pots()];
        let mut type_of = vec![0u8; instance.team_count()];
        for team in instance.teams() {
            let lanes = team_lanes[team.id.index()];
            let types: &mut Vec<u128> = &mut type_lanes[team.pot];
            let idx = match types.iter().position(|&l| l == lanes) {
                Some(i) => i,
                None => {
                    types.push(lanes);
                    types.len() - 1
                }
            };
            type_of[team.id.index()] = idx as u8;
        }

        Ok(Rules {
            groups: instance.groups(),
            pots: instance.pots(),
            attrs,
            team_lanes,
            hi_offset,
            lo_offset,
            lane_mask,
            lo_mask,
            type_lanes,
            type_of,
        })
    }

    pub fn attrs(&self) -> &[AttrRule] {
        &self.attrs
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn pots(&self) -> usize {
        self.pots
    }

    #[inline]
    pub(crate) fn lanes(&self, team: TeamId) -> u128 {
        self.team_lanes[team.index()]
    }

    #[inline]
    pub(crate) fn type_of(&self, team: TeamId) -> usize {
        self.type_of[team.index()] as usize
    }

    pub(crate) fn type_lanes(&self, pot: usize) -> &[u128] {
        &self.type_lanes[pot]
    }

    /// True if every lane of `sig` is within its upper bound.
    #[inline]
    pub(crate) fn upper_ok(&self, sig: u128) -> bool {
        (sig + self.hi_offset) & self.lane_mask == 0
    }

    /// True if adding `add` to a group at `sig` keeps upper bounds; `sig`
    /// must itself be within bounds.
    #[inline]
    pub(crate) fn fits(&self, sig: u128, add: u128) -> bool {
        self.upper_ok(sig + add)
    }

    #[inline]
    pub(crate) fn lower_ok(&self, sig: u128) -> bool {
        (sig + self.lo_offset) & self.lo_mask == self.lo_mask
    }

    /// Lower bounds still reachable with `open` more teams in the group.
    #[inline]
    pub(crate) fn lower_reachable(&self, sig: u128, open: u32) -> bool {
        if self.lo_mask == 0 {
            return true;
        }
        self.attrs.iter().enumerate().all(|(a, r)| {
            r.lo == 0 || lane(sig, a) as u32 + open >= r.lo as u32
        })
    }

    pub(crate) fn group_sig(&self, assignment: &Assignment, group: usize) -> u128 {
        assignment.members(group).map(|t| self.lanes(t)).sum()
    }

    /// Fast validity check of a complete assignment.
    pub fn is_valid(&self, assignment: &Assignment) -> bool {
        (0..self.groups).all(|g| {
            let sig = self.group_sig(assignment, g);
            self.upper_ok(sig) && self.lower_ok(sig)
        })
    }

    fn violations(&self, assignment: &Assignment, partial: bool) -> Vec<Violation> {
        let mut out = Vec::new();
        for g in 0..self.groups {
            let sig = self.group_sig(assignment, g);
            let open = assignment.open_in_group(g) as u32;
            for (a, rule) in self.attrs.iter().enumerate() {
                let v = lane(sig, a);
                if v > rule.hi {
                    out.push(Violation {
                        tag: rule.tag,
                        group: g,
                        detail: format!("{v} members, {}", rule.label),
                    });
                } else if (v as u32 + if partial { open } else { 0 }) < rule.lo as u32 {
                    out.push(Violation {
                        tag: rule.tag,
                        group: g,
                        detail: format!("{v} members with {open} open slots, {}", rule.label),
                    });
                }
            }
        }
        out
    }

    pub fn check_full(&self, assignment: &Assignment) -> Result<Vec<Violation>> {
        assignment.require_complete()?;
        Ok(self.violations(assignment, false))
    }

    pub fn check_partial(&self, assignment: &Assignment) -> Vec<Violation> {
        self.violations(assignment, true)
    }
}

#[inline]
pub(crate) fn lane(sig: u128, attr: usize) -> u8 {
    (sig >> (8 * attr)) as u8
}

fn members_of(instance: &Instance, confed: crate::model::ConfederationId) -> Vec<TeamId> {
    instance
        .teams()
        .iter()
        .filter(|t| t.confederation == confed)
        .map(|t| t.id)
        .collect()
}

/// Violations of a complete assignment; empty means valid. The host
/// exclusion and forbidden pairs are enforced under every scenario.
pub fn check_full(
    instance: &Instance,
    constraints: ConstraintSet,
    assignment: &Assignment,
) -> Result<Vec<Violation>> {
    Rules::new(instance, constraints)?.check_full(assignment)
}

/// Violations already forced by the placed teams: exceeded upper bounds,
/// and lower bounds the group's open slots can no longer reach.
pub fn check_partial(
    instance: &Instance,
    constraints: ConstraintSet,
    assignment: &Assignment,
) -> Result<Vec<Violation>> {
    Ok(Rules::new(instance, constraints)?.check_partial(assignment))
}

/// Sum over groups and confederations of `C(t, 2)`.
pub fn count_unattractive(instance: &Instance, assignment: &Assignment) -> Result<u32> {
    assignment.require_complete()?;
    Ok(composition(instance, assignment).unattractive())
}

/// Whether the partial assignment can be completed into a valid one.
pub fn completable(
    instance: &Instance,
    constraints: ConstraintSet,
    assignment: &Assignment,
) -> Result<bool> {
    let rules = Rules::new(instance, constraints)?;
    if !rules.check_partial(assignment).is_empty() {
        return Ok(false);
    }
    let mut state = SearchState::from_assignment(&rules, instance, assignment);
    Ok(Completer::new(&rules).completable(&mut state))
}

/// Allocation-free unattractive counter for hot loops.
#[derive(Clone, Debug)]
pub(crate) struct UnattractiveCounter {
    confed_of: Vec<u8>,
    confeds: usize,
}

impl UnattractiveCounter {
    pub(crate) fn new(instance: &Instance) -> Self {
        UnattractiveCounter {
            confed_of: instance.teams().iter().map(|t| t.confederation.0).collect(),
            confeds: instance.confederations().len(),
        }
    }

    pub(crate) fn count(&self, assignment: &Assignment) -> u32 {
        let mut total = 0;
        let mut counts = [0u32; 256];
        for g in 0..assignment.groups() {
            for t in assignment.members(g) {
                let c = self.confed_of[t.index()] as usize;
                total += counts[c];
                counts[c] += 1;
            }
            for c in counts.iter_mut().take(self.confeds) {
                *c = 0;
            }
        }
        total
    }
}
