//! Tournament instances, constraint scenarios and (partial) assignments.
//!
//! An [`Instance`] holds `m` pots of `n` teams each. Team ids are dense and
//! pot-major: the teams of pot `p` (0-based) carry ids `p*n .. (p+1)*n`, in
//! document order. Every group receives exactly one team from every pot.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DrawError, Result};

/// Environment variable that overrides where named instances are looked up.
pub const DATA_DIR_ENV: &str = "DRAWLAB_DATA_DIR";

/// Per-group bounds on the designated European confederation under Constraint E.
pub const EUROPE_BOUNDS: (u8, u8) = (2, 3);

const IHF2025: &str = include_str!("../data/ihf2025.json");
const EXAMPLE1: &str = include_str!("../data/example1.json");
const TOY2X2: &str = include_str!("../data/toy2x2.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConfederationId(pub u8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TeamId(pub u16);

impl TeamId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confederation {
    pub id: ConfederationId,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Team {
    pub id: TeamId,
    pub name: String,
    pub confederation: ConfederationId,
    /// 0-based pot index.
    pub pot: usize,
}

/// A validated tournament configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    name: String,
    confederations: Vec<Confederation>,
    teams: Vec<Team>,
    pots: usize,
    groups: usize,
    host_exclusion: Vec<TeamId>,
    europe: Option<ConfederationId>,
    forbidden_pairs: Vec<(TeamId, TeamId)>,
}

/// On-disk form of an instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    pub name: String,
    pub confederations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub europe: Option<String>,
    #[serde(default)]
    pub host_exclusion: Vec<String>,
    /// Extra always-enforced pairwise exclusions, used by small test instances.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forbidden_pairs: Vec<[String; 2]>,
    pub pots: Vec<Vec<TeamEntry>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamEntry {
    pub name: String,
    pub confederation: String,
}

/// Parses and validates an instance document.
pub fn load_instance(text: &str) -> Result<Instance> {
    let doc: InstanceDocument =
        serde_json::from_str(text).map_err(|e| DrawError::MalformedDocument(e.to_string()))?;
    Instance::from_document(doc)
}

impl Instance {
    pub fn from_document(doc: InstanceDocument) -> Result<Self> {
        let invalid = |msg: String| Err(DrawError::InvalidInstance(msg));

        if doc.pots.is_empty() {
            return invalid("instance has no pots".into());
        }
        let groups = doc.pots[0].len();
        if groups == 0 {
            return invalid("pot 1 is empty".into());
        }
        for (p, pot) in doc.pots.iter().enumerate() {
            if pot.len() != groups {
                return invalid(format!(
                    "pot {} has {} teams but pot 1 has {}",
                    p + 1,
                    pot.len(),
                    groups
                ));
            }
        }
        if doc.pots.len() > 8 {
            return Err(DrawError::Unsupported("at most 8 pots are supported".into()));
        }
        if groups > 64 {
            return Err(DrawError::Unsupported("at most 64 groups are supported".into()));
        }

        let mut confederations = Vec::with_capacity(doc.confederations.len());
        let mut confed_ids = HashMap::new();
        for (i, name) in doc.confederations.iter().enumerate() {
            if confed_ids.insert(name.as_str(), ConfederationId(i as u8)).is_some() {
                return invalid(format!("duplicate confederation {name:?}"));
            }
            confederations.push(Confederation {
                id: ConfederationId(i as u8),
                name: name.clone(),
            });
        }
        if confederations.len() > u8::MAX as usize {
            return Err(DrawError::Unsupported("too many confederations".into()));
        }

        let mut teams = Vec::with_capacity(groups * doc.pots.len());
        let mut team_ids = HashMap::new();
        for (p, pot) in doc.pots.iter().enumerate() {
            for entry in pot {
                let Some(&confederation) = confed_ids.get(entry.confederation.as_str()) else {
                    return invalid(format!(
                        "team {:?} has unknown confederation {:?}",
                        entry.name, entry.confederation
                    ));
                };
                let id = TeamId(teams.len() as u16);
                if team_ids.insert(entry.name.as_str(), id).is_some() {
                    return invalid(format!("duplicate team name {:?}", entry.name));
                }
                teams.push(Team {
                    id,
                    name: entry.name.clone(),
                    confederation,
                    pot: p,
                });
            }
        }

        let lookup = |name: &str| -> Result<TeamId> {
            team_ids
                .get(name)
                .copied()
                .ok_or_else(|| DrawError::InvalidInstance(format!("unknown team {name:?}")))
        };

        let mut host_exclusion = Vec::with_capacity(doc.host_exclusion.len());
        let mut seen = HashSet::new();
        for name in &doc.host_exclusion {
            let id = lookup(name)?;
            if !seen.insert(id) {
                return invalid(format!("{name:?} listed twice in host_exclusion"));
            }
            host_exclusion.push(id);
        }
        if host_exclusion.len() > groups {
            return Err(DrawError::HostExclusionTooLarge {
                size: host_exclusion.len(),
                groups,
            });
        }

        let mut forbidden_pairs = Vec::with_capacity(doc.forbidden_pairs.len());
        for [a, b] in &doc.forbidden_pairs {
            let (a, b) = (lookup(a)?, lookup(b)?);
            if a == b {
                return invalid("forbidden pair names the same team twice".into());
            }
            forbidden_pairs.push((a, b));
        }

        let europe = match &doc.europe {
            None => None,
            Some(name) => Some(*confed_ids.get(name.as_str()).ok_or_else(|| {
                DrawError::InvalidInstance(format!("unknown europe confederation {name:?}"))
            })?),
        };

        Ok(Instance {
            name: doc.name,
            confederations,
            teams,
            pots: doc.pots.len(),
            groups,
            host_exclusion,
            europe,
            forbidden_pairs,
        })
    }

    pub fn to_document(&self) -> InstanceDocument {
        let name_of = |t: TeamId| self.teams[t.index()].name.clone();
        InstanceDocument {
            name: self.name.clone(),
            confederations: self.confederations.iter().map(|c| c.name.clone()).collect(),
            europe: self.europe.map(|c| self.confederation(c).name.clone()),
            host_exclusion: self.host_exclusion.iter().map(|&t| name_of(t)).collect(),
            forbidden_pairs: self
                .forbidden_pairs
                .iter()
                .map(|&(a, b)| [name_of(a), name_of(b)])
                .collect(),
            pots: (0..self.pots)
                .map(|p| {
                    self.pot_teams(p)
                        .iter()
                        .map(|t| TeamEntry {
                            name: t.name.clone(),
                            confederation: self.confederation(t.confederation).name.clone(),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Canonical text form; `load_instance` of this text reproduces `self`.
    pub fn to_document_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document())
            .expect("instance documents always serialize");
        s.push('\n');
        s
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of pots (`m`), which is also the group size.
    #[inline]
    pub fn pots(&self) -> usize {
        self.pots
    }

    /// Number of groups (`n`), which is also the pot size.
    #[inline]
    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn team_count(&self) -> usize {
        self.teams.len()
    }

    pub fn teams(&self) -> &[Team] {
        &self.teams
    }

    #[inline]
    pub fn team(&self, id: TeamId) -> &Team {
        &self.teams[id.index()]
    }

    pub fn pot_teams(&self, pot: usize) -> &[Team] {
        &self.teams[pot * self.groups..(pot + 1) * self.groups]
    }

    /// Position of a team inside its pot.
    #[inline]
    pub fn index_in_pot(&self, id: TeamId) -> usize {
        id.index() % self.groups
    }

    pub fn team_by_name(&self, name: &str) -> Option<&Team> {
        self.teams.iter().find(|t| t.name == name)
    }

    pub fn confederations(&self) -> &[Confederation] {
        &self.confederations
    }

    pub fn confederation(&self, id: ConfederationId) -> &Confederation {
        &self.confederations[id.0 as usize]
    }

    pub fn confederation_by_name(&self, name: &str) -> Option<ConfederationId> {
        self.confederations
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.id)
    }

    pub fn host_exclusion(&self) -> &[TeamId] {
        &self.host_exclusion
    }

    pub fn is_host(&self, id: TeamId) -> bool {
        self.host_exclusion.contains(&id)
    }

    pub fn europe(&self) -> Option<ConfederationId> {
        self.europe
    }

    pub fn forbidden_pairs(&self) -> &[(TeamId, TeamId)] {
        &self.forbidden_pairs
    }

    /// Count of teams per confederation in pot `pot`.
    pub fn pot_composition(&self, pot: usize) -> Vec<u32> {
        let mut counts = vec![0; self.confederations.len()];
        for t in self.pot_teams(pot) {
            counts[t.confederation.0 as usize] += 1;
        }
        counts
    }
}

/// Names of the instances shipped with the library.
pub fn builtin_names() -> &'static [&'static str] {
    &["ihf2025", "example1", "toy2x2"]
}

/// Raw text of a shipped instance.
pub fn builtin_document(name: &str) -> Option<&'static str> {
    match name {
        "ihf2025" => Some(IHF2025),
        "example1" => Some(EXAMPLE1),
        "toy2x2" => Some(TOY2X2),
        _ => None,
    }
}

/// The 2025 IHF Men's World Championship instance.
pub fn ihf2025() -> Instance {
    load_instance(IHF2025).expect("shipped instance is valid")
}

/// Two pots of three teams with teams 1-4 and 3-6 kept apart.
pub fn example1() -> Instance {
    load_instance(EXAMPLE1).expect("shipped instance is valid")
}

/// Resolves an instance by built-in name or file path.
///
/// Names are first looked up as `<name>.json` under `$DRAWLAB_DATA_DIR`,
/// then among the built-ins; anything else is read as a path.
pub fn resolve_instance(source: &str) -> Result<Instance> {
    if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
        let candidate: PathBuf = Path::new(&dir).join(format!("{source}.json"));
        if candidate.is_file() {
            return load_instance(&std::fs::read_to_string(candidate)?);
        }
    }
    if let Some(text) = builtin_document(source) {
        return load_instance(text);
    }
    load_instance(&std::fs::read_to_string(source)?)
}

/// One of the five geographic draw restrictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Constraint {
    A,
    B,
    C,
    D,
    E,
}

impl Constraint {
    pub const ALL: [Constraint; 5] = [
        Constraint::A,
        Constraint::B,
        Constraint::C,
        Constraint::D,
        Constraint::E,
    ];

    /// Bit weight in the scenario id.
    pub fn weight(self) -> u8 {
        match self {
            Constraint::A => 16,
            Constraint::B => 8,
            Constraint::C => 4,
            Constraint::D => 2,
            Constraint::E => 1,
        }
    }

    /// Confederation capped at one team per group, for A–D.
    pub fn capped_confederation(self) -> Option<&'static str> {
        match self {
            Constraint::A => Some("Africa"),
            Constraint::B => Some("Asia"),
            Constraint::C => Some("North America"),
            Constraint::D => Some("South America"),
            Constraint::E => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Constraint::A => 'A',
            Constraint::B => 'B',
            Constraint::C => 'C',
            Constraint::D => 'D',
            Constraint::E => 'E',
        }
    }
}

/// A subset of Constraints A–E; the bitmask is the scenario id.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConstraintSet {
    mask: u8,
}

/// Constraint set for scenario `id`.
pub fn scenario_constraints(id: u32) -> Result<ConstraintSet> {
    if id > 31 {
        return Err(DrawError::ScenarioOutOfRange(id));
    }
    Ok(ConstraintSet { mask: id as u8 })
}

impl ConstraintSet {
    pub const NONE: ConstraintSet = ConstraintSet { mask: 0 };
    pub const ALL: ConstraintSet = ConstraintSet { mask: 31 };

    pub fn bitmask(self) -> u8 {
        self.mask
    }

    pub fn contains(self, c: Constraint) -> bool {
        self.mask & c.weight() != 0
    }

    pub fn with(self, c: Constraint) -> ConstraintSet {
        ConstraintSet {
            mask: self.mask | c.weight(),
        }
    }

    pub fn active(self) -> impl Iterator<Item = Constraint> {
        Constraint::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.mask == 0 {
            return f.write_str("none");
        }
        let letters: String = self.active().map(Constraint::letter).collect();
        f.write_str(&letters)
    }
}

/// Slot grid mapping (group, pot) to a team.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Assignment {
    groups: usize,
    pots: usize,
    slots: Vec<Option<TeamId>>,
}

impl Assignment {
    pub fn empty(instance: &Instance) -> Self {
        Self::with_shape(instance.groups(), instance.pots())
    }

    pub fn with_shape(groups: usize, pots: usize) -> Self {
        Assignment {
            groups,
            pots,
            slots: vec![None; groups * pots],
        }
    }

    /// Builds an assignment from explicit group memberships.
    pub fn from_groups(instance: &Instance, groups: &[Vec<TeamId>]) -> Result<Self> {
        let mut a = Self::empty(instance);
        if groups.len() > instance.groups() {
            return Err(DrawError::InvalidInstance(format!(
                "{} groups given, instance has {}",
                groups.len(),
                instance.groups()
            )));
        }
        for (g, members) in groups.iter().enumerate() {
            for &t in members {
                a.place(instance, t, g)?;
            }
        }
        Ok(a)
    }

    /// Same as [`Assignment::from_groups`] but with team names.
    pub fn from_named_groups(instance: &Instance, groups: &[&[&str]]) -> Result<Self> {
        let ids = groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|name| {
                        instance.team_by_name(name).map(|t| t.id).ok_or_else(|| {
                            DrawError::InvalidInstance(format!("unknown team {name:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_groups(instance, &ids)
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn pots(&self) -> usize {
        self.pots
    }

    #[inline]
    pub fn get(&self, group: usize, pot: usize) -> Option<TeamId> {
        self.slots[group * self.pots + pot]
    }

    /// Writes a slot without any consistency checks.
    #[inline]
    pub(crate) fn set(&mut self, group: usize, pot: usize, team: Option<TeamId>) {
        self.slots[group * self.pots + pot] = team;
    }

    /// Places `team` into its pot's slot of `group`.
    pub fn place(&mut self, instance: &Instance, team: TeamId, group: usize) -> Result<()> {
        if team.index() >= instance.team_count() || group >= self.groups {
            return Err(DrawError::InvalidInstance(format!(
                "cannot place team {} into group {group}",
                team.0
            )));
        }
        let pot = instance.team(team).pot;
        if self.get(group, pot).is_some() {
            return Err(DrawError::InvalidInstance(format!(
                "slot (group {group}, pot {}) already filled",
                pot + 1
            )));
        }
        if self.group_of(team).is_some() {
            return Err(DrawError::InvalidInstance(format!(
                "team {:?} already placed",
                instance.team(team).name
            )));
        }
        self.set(group, pot, Some(team));
        Ok(())
    }

    pub fn clear(&mut self, group: usize, pot: usize) {
        self.set(group, pot, None);
    }

    pub fn filled(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub(crate) fn require_complete(&self) -> Result<()> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(DrawError::IncompleteAssignment {
                filled: self.filled(),
                slots: self.slot_count(),
            })
        }
    }

    /// Teams currently in `group`, in pot order.
    pub fn members(&self, group: usize) -> impl Iterator<Item = TeamId> + '_ {
        self.slots[group * self.pots..(group + 1) * self.pots]
            .iter()
            .filter_map(|s| *s)
    }

    pub fn group_of(&self, team: TeamId) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| *s == Some(team))
            .map(|i| i / self.pots)
    }

    /// Open slots of `group`.
    pub fn open_in_group(&self, group: usize) -> usize {
        self.slots[group * self.pots..(group + 1) * self.pots]
            .iter()
            .filter(|s| s.is_none())
            .count()
    }

    /// Groups as sorted team lists, sorted; equal for assignments that
    /// differ only by group labels.
    pub fn co_membership(&self) -> Vec<Vec<TeamId>> {
        let mut groups: Vec<Vec<TeamId>> = (0..self.groups)
            .map(|g| {
                let mut m: Vec<TeamId> = self.members(g).collect();
                m.sort();
                m
            })
            .collect();
        groups.sort();
        groups
    }
}

/// Per-group count of placed teams by confederation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupComposition {
    /// `counts[group][confederation]`
    pub counts: Vec<Vec<u32>>,
}

impl GroupComposition {
    pub fn from_counts(counts: Vec<Vec<u32>>) -> Self {
        GroupComposition { counts }
    }

    pub fn confederation_column(&self, confed: ConfederationId) -> Vec<u32> {
        self.counts.iter().map(|g| g[confed.0 as usize]).collect()
    }

    /// Same-confederation pairs summed over groups.
    pub fn unattractive(&self) -> u32 {
        self.counts
            .iter()
            .flatten()
            .map(|&t| t * t.saturating_sub(1) / 2)
            .sum()
    }
}

pub fn composition(instance: &Instance, assignment: &Assignment) -> GroupComposition {
    let mut counts = vec![vec![0u32; instance.confederations().len()]; assignment.groups()];
    for (g, row) in counts.iter_mut().enumerate() {
        for t in assignment.members(g) {
            row[instance.team(t).confederation.0 as usize] += 1;
        }
    }
    GroupComposition { counts }
}
