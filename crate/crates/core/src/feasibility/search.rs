//! Exact depth-first completability search.
//!
//! Teams of one pot with identical restriction memberships are merged into a
//! *type*, so the search branches over types rather than individual teams.
//! Each node picks the open slot with the fewest admissible types and prunes
//! with counting arguments on every restriction. An optional cache maps a
//! group-order-independent state key to the search result.

use std::collections::HashMap;

use super::{lane, Rules};
use crate::model::{Assignment, Instance};

/// Aggregate state of a partial draw as seen by the search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchState {
    pub(crate) sig: Vec<u128>,
    /// Bit `p` set while the group's pot-`p` slot is empty.
    pub(crate) open: Vec<u8>,
    /// Unplaced teams per (pot, type), flattened with `offsets`.
    pub(crate) remaining: Vec<u8>,
    pub(crate) offsets: Vec<usize>,
    pub(crate) open_total: u32,
}

impl SearchState {
    /// Nothing placed yet.
    pub fn empty(rules: &Rules) -> Self {
        let mut offsets = Vec::with_capacity(rules.pots());
        let mut total = 0;
        for p in 0..rules.pots() {
            offsets.push(total);
            total += rules.type_lanes(p).len();
        }
        let mut remaining = vec![0u8; total];
        for (team, &ty) in rules.type_of.iter().enumerate() {
            let pot = team / rules.groups();
            remaining[offsets[pot] + ty as usize] += 1;
        }
        let all_open = if rules.pots() == 8 {
            u8::MAX
        } else {
            (1u8 << rules.pots()) - 1
        };
        SearchState {
            sig: vec![0; rules.groups()],
            open: vec![all_open; rules.groups()],
            remaining,
            offsets,
            open_total: (rules.groups() * rules.pots()) as u32,
        }
    }

    pub fn from_assignment(rules: &Rules, instance: &Instance, assignment: &Assignment) -> Self {
        let mut st = Self::empty(rules);
        for g in 0..assignment.groups() {
            for p in 0..assignment.pots() {
                if let Some(t) = assignment.get(g, p) {
                    debug_assert_eq!(instance.team(t).pot, p);
                    st.place(rules, g, p, rules.type_of(t));
                }
            }
        }
        st
    }

    #[inline]
    pub(crate) fn place(&mut self, rules: &Rules, group: usize, pot: usize, ty: usize) {
        self.sig[group] += rules.type_lanes(pot)[ty];
        self.open[group] &= !(1 << pot);
        self.remaining[self.offsets[pot] + ty] -= 1;
        self.open_total -= 1;
    }

    #[inline]
    pub(crate) fn unplace(&mut self, rules: &Rules, group: usize, pot: usize, ty: usize) {
        self.sig[group] -= rules.type_lanes(pot)[ty];
        self.open[group] |= 1 << pot;
        self.remaining[self.offsets[pot] + ty] += 1;
        self.open_total += 1;
    }

    #[inline]
    pub(crate) fn is_open(&self, group: usize, pot: usize) -> bool {
        self.open[group] >> pot & 1 == 1
    }

    fn key(&self) -> Vec<u128> {
        let groups = self.sig.len();
        let mut key = Vec::with_capacity(groups + self.remaining.len().div_ceil(16));
        key.extend(
            self.sig
                .iter()
                .zip(&self.open)
                .map(|(&s, &o)| s | (o as u128) << 120),
        );
        key.sort_unstable();
        for chunk in self.remaining.chunks(16) {
            let mut word = 0u128;
            for (i, &c) in chunk.iter().enumerate() {
                word |= (c as u128) << (8 * i);
            }
            key.push(word);
        }
        key
    }
}

/// Runs completability searches against one rule set.
pub struct Completer<'r> {
    rules: &'r Rules,
    cache: Option<HashMap<Box<[u128]>, bool>>,
    cache_limit: usize,
    nodes: u64,
}

impl<'r> Completer<'r> {
    /// Plain search, no memoization.
    pub fn new(rules: &'r Rules) -> Self {
        Completer {
            rules,
            cache: None,
            cache_limit: 0,
            nodes: 0,
        }
    }

    /// Search that remembers results for up to `limit` states; the table
    /// is cleared when full.
    pub fn with_cache(rules: &'r Rules, limit: usize) -> Self {
        Completer {
            rules,
            cache: Some(HashMap::new()),
            cache_limit: limit.max(1),
            nodes: 0,
        }
    }

    pub fn rules(&self) -> &'r Rules {
        self.rules
    }

    /// Search nodes expanded so far.
    pub fn nodes(&self) -> u64 {
        self.nodes
    }

    /// True iff the unplaced teams can fill every open slot validly.
    /// `state` is restored before returning.
    pub fn completable(&mut self, state: &mut SearchState) -> bool {
        self.search(state)
    }

    fn search(&mut self, st: &mut SearchState) -> bool {
        if st.open_total == 0 {
            return st.sig.iter().all(|&s| self.rules.lower_ok(s));
        }
        let key = match self.cache {
            Some(ref cache) => {
                let key = st.key();
                if let Some(&hit) = cache.get(&key[..]) {
                    return hit;
                }
                Some(key)
            }
            None => None,
        };
        self.nodes += 1;
        let result = self.expand(st);
        if let (Some(cache), Some(key)) = (self.cache.as_mut(), key) {
            if cache.len() >= self.cache_limit {
                cache.clear();
            }
            cache.insert(key.into_boxed_slice(), result);
        }
        result
    }

    fn expand(&mut self, st: &mut SearchState) -> bool {
        let rules = self.rules;
        if !self.propagate(st) {
            return false;
        }

        let mut best = (usize::MAX, usize::MAX);
        let mut best_count = usize::MAX;
        'scan: for p in 0..rules.pots() {
            let types = rules.type_lanes(p);
            let rem = &st.remaining[st.offsets[p]..st.offsets[p] + types.len()];
            for g in 0..rules.groups() {
                if !st.is_open(g, p) {
                    continue;
                }
                let count = types
                    .iter()
                    .zip(rem)
                    .filter(|(&l, &r)| r > 0 && rules.fits(st.sig[g], l))
                    .count();
                if count == 0 {
                    return false;
                }
                if count < best_count {
                    best = (p, g);
                    best_count = count;
                    if count == 1 {
                        break 'scan;
                    }
                }
            }
        }

        let (p, g) = best;
        let types = rules.type_lanes(p);
        for (ty, &l) in types.iter().enumerate() {
            if st.remaining[st.offsets[p] + ty] == 0 || !rules.fits(st.sig[g], l) {
                continue;
            }
            st.place(rules, g, p, ty);
            let ok = self.search(st);
            st.unplace(rules, g, p, ty);
            if ok {
                return true;
            }
        }
        false
    }

    /// Necessary conditions per restriction: pigeonhole on each pot's
    /// remaining members, total remaining capacity, and reachability of
    /// lower bounds.
    fn propagate(&self, st: &SearchState) -> bool {
        let rules = self.rules;
        let pots = rules.pots();
        for (a, rule) in rules.attrs().iter().enumerate() {
            let mut per_pot = [0u32; 8];
            let mut total = 0u32;
            let mut pots_with = 0u8;
            for (p, slot) in per_pot.iter_mut().enumerate().take(pots) {
                let off = st.offsets[p];
                let c: u32 = rules
                    .type_lanes(p)
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| lane(l, a) != 0)
                    .map(|(t, _)| st.remaining[off + t] as u32)
                    .sum();
                *slot = c;
                total += c;
                if c > 0 {
                    pots_with |= 1 << p;
                }
            }
            if total == 0 && rule.lo == 0 {
                continue;
            }
            let mut room_per_pot = [0u32; 8];
            let mut need_total = 0u32;
            let mut capacity = 0u32;
            for g in 0..rules.groups() {
                let v = lane(st.sig[g], a);
                let usable = st.open[g] & pots_with;
                let k = usable.count_ones();
                let room = rule.hi.saturating_sub(v) as u32;
                if room > 0 {
                    let mut bits = usable;
                    while bits != 0 {
                        room_per_pot[bits.trailing_zeros() as usize] += 1;
                        bits &= bits - 1;
                    }
                }
                capacity += room.min(k);
                if v < rule.lo {
                    let need = (rule.lo - v) as u32;
                    if need > k {
                        return false;
                    }
                    need_total += need;
                }
            }
            if need_total > total || capacity < total {
                return false;
            }
            if (0..pots).any(|p| per_pot[p] > room_per_pot[p]) {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ihf2025, scenario_constraints, ConstraintSet};

    #[test]
    fn state_restored_after_search() {
        let inst = ihf2025();
        let rules = Rules::new(&inst, ConstraintSet::ALL).unwrap();
        let mut st = SearchState::empty(&rules);
        let before = st.clone();
        assert!(Completer::new(&rules).completable(&mut st));
        assert_eq!(st, before);
    }

    #[test]
    fn key_ignores_group_order() {
        let inst = ihf2025();
        let rules = Rules::new(&inst, scenario_constraints(31).unwrap()).unwrap();
        let mut a = SearchState::empty(&rules);
        let mut b = SearchState::empty(&rules);
        a.place(&rules, 0, 0, 1);
        b.place(&rules, 5, 0, 1);
        assert_eq!(a.key(), b.key());
        b.place(&rules, 6, 0, 0);
        assert_ne!(a.key(), b.key());
    }

    #[test]
    fn cache_does_not_change_answers() {
        let inst = ihf2025();
        for id in [0, 1, 17, 30, 31] {
            let rules = Rules::new(&inst, scenario_constraints(id).unwrap()).unwrap();
            let mut st = SearchState::empty(&rules);
            let plain = Completer::new(&rules).completable(&mut st);
            let cached = Completer::with_cache(&rules, 1 << 16).completable(&mut st);
            assert_eq!(plain, cached);
            assert!(plain);
        }
    }
}
