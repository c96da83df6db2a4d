//! Subdiagram enumeration and subgame instantiation.
//!
//! A subdiagram is a node set closed under two conditions: it contains every
//! variable whose mechanism is reachable (under the chosen criterion) from a
//! contained decision's rule, and it contains every mediator on a directed
//! path between two members. A subgame fixes an instantiation of the
//! boundary variables that feed the subdiagram.

use std::collections::BTreeSet;

use num::{One, Zero};

use crate::model::{Assignment, Cpd, GameModel, VarKind, context_count, digits_of, index_of};
use crate::mechanism::{reaches, Reachability};
use crate::policy::{fully_mixed_profile, pure_rules_for, rule_cpd, PolicyProfile};
use crate::rational::Q;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subdiagram {
    pub nodes: BTreeSet<String>,
    /// Agents owning a decision inside.
    pub agents: BTreeSet<String>,
    pub proper: bool,
    /// No other enumerated subdiagram is strictly contained in this one.
    pub minimal: bool,
}

fn decisions_in(m: &GameModel, nodes: &BTreeSet<String>) -> Vec<String> {
    m.decisions().into_iter().filter(|d| nodes.contains(d)).collect()
}

/// Closure of a seed set: reachable mechanisms' variables, then mediators,
/// to fixpoint.
pub fn closure(
    m: &GameModel,
    crit: &Reachability,
    seed: &BTreeSet<String>,
) -> Result<BTreeSet<String>> {
    let mut v = seed.clone();
    loop {
        let mut grew = false;
        for d in decisions_in(m, &v) {
            for z in m.graph.nodes() {
                if !v.contains(z) && reaches(m, crit, z, &d)? {
                    v.insert(z.clone());
                    grew = true;
                }
            }
        }
        let members: Vec<String> = v.iter().cloned().collect();
        for x in &members {
            let below = m.graph.descendants(x)?;
            for y in &members {
                if x == y {
                    continue;
                }
                for w in below.intersection(&m.graph.ancestors(y)?) {
                    if v.insert(w.clone()) {
                        grew = true;
                    }
                }
            }
        }
        if !grew {
            return Ok(v);
        }
    }
}

/// Both closure conditions hold and at least one decision is inside.
pub fn is_valid_subdiagram(
    m: &GameModel,
    crit: &Reachability,
    nodes: &BTreeSet<String>,
) -> Result<bool> {
    if decisions_in(m, nodes).is_empty() {
        return Ok(false);
    }
    Ok(&closure(m, crit, nodes)? == nodes)
}

fn assemble(m: &GameModel, mut sets: Vec<BTreeSet<String>>) -> Vec<Subdiagram> {
    let all: BTreeSet<String> = m.graph.nodes().iter().cloned().collect();
    sets.sort_by(|a, b| (a.len(), a).cmp(&(b.len(), b)));
    sets.dedup();
    let minimal: Vec<bool> = sets
        .iter()
        .map(|s| !sets.iter().any(|o| o != s && o.is_subset(s)))
        .collect();
    sets.iter()
        .zip(minimal)
        .map(|(nodes, minimal)| {
            let agents = decisions_in(m, nodes)
                .into_iter()
                .filter_map(|d| m.agent_of(&d).map(str::to_string))
                .collect();
            Subdiagram { proper: *nodes != all, minimal, nodes: nodes.clone(), agents }
        })
        .collect()
}

/// Subdiagrams generated from single-decision closures, iterated removals of
/// boundary-facing decisions, and the improper full graph.
///
/// A decision is a removal candidate when the element contains none of its
/// parents and none of its chance children; the shrunken set is kept only if
/// it still validates. Exhaustive subset enumeration lives in
/// [`enumerate_subdiagrams_exhaustive`].
pub fn enumerate_subdiagrams(m: &GameModel, crit: &Reachability) -> Result<Vec<Subdiagram>> {
    let all: BTreeSet<String> = m.graph.nodes().iter().cloned().collect();
    let mut found: BTreeSet<BTreeSet<String>> = BTreeSet::new();
    for d in m.decisions() {
        let mut seed = BTreeSet::new();
        seed.insert(d);
        found.insert(closure(m, crit, &seed)?);
    }
    let mut work: Vec<BTreeSet<String>> = found.iter().cloned().collect();
    while let Some(e) = work.pop() {
        for d in decisions_in(m, &e) {
            if m.graph.parents(&d)?.iter().any(|p| e.contains(p)) {
                continue;
            }
            let chance_child = m.graph.children(&d)?.into_iter().any(|c| {
                e.contains(&c)
                    && matches!(m.kind(&c), Ok(VarKind::Chance) | Ok(VarKind::Exogenous))
            });
            if chance_child {
                continue;
            }
            let mut cand = e.clone();
            cand.remove(&d);
            if decisions_in(m, &cand).is_empty() || found.contains(&cand) {
                continue;
            }
            if is_valid_subdiagram(m, crit, &cand)? {
                found.insert(cand.clone());
                work.push(cand);
            }
        }
    }
    found.insert(all);
    Ok(assemble(m, found.into_iter().collect()))
}

/// Every valid subdiagram, by subset enumeration. Guarded to small graphs.
pub fn enumerate_subdiagrams_exhaustive(
    m: &GameModel,
    crit: &Reachability,
) -> Result<Vec<Subdiagram>> {
    let names = m.graph.nodes();
    let n = names.len();
    if n > 16 {
        return Err(Error::ExplosionGuard(1u128 << n, 1 << 16));
    }
    let mut sets = Vec::new();
    for mask in 1u32..(1 << n) {
        let nodes: BTreeSet<String> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| names[i].clone())
            .collect();
        if is_valid_subdiagram(m, crit, &nodes)? {
            sets.push(nodes);
        }
    }
    Ok(assemble(m, sets))
}

#[derive(Debug, Clone)]
pub struct Subgame {
    pub diagram: Subdiagram,
    /// Values for the dropped variables that have a child inside; other
    /// dropped variables cannot matter.
    pub context: Assignment,
    pub model: GameModel,
    pub feasible: bool,
}

/// Boundary variables whose value keys distinct subgames.
pub fn keyed_boundary(m: &GameModel, nodes: &BTreeSet<String>) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for v in m.graph.nodes() {
        if nodes.contains(v) {
            continue;
        }
        if m.graph.children(v)?.iter().any(|c| nodes.contains(c)) {
            out.push(v.clone());
        }
    }
    Ok(out)
}

/// One subgame per joint value of the keyed boundary, with feasibility.
pub fn instantiate_subgames(m: &GameModel, d: &Subdiagram) -> Result<Vec<Subgame>> {
    let keyed = keyed_boundary(m, &d.nodes)?;
    let dims: Vec<usize> = keyed.iter().map(|v| m.domain(v).unwrap().len()).collect();
    let mut out = Vec::new();
    for idx in 0..context_count(&dims) {
        let digits = digits_of(&dims, idx);
        let mut context = Assignment::new();
        for (v, &k) in keyed.iter().zip(&digits) {
            context.insert(v.clone(), m.domain(v)?[k].clone());
        }
        let model = m.restrict(&d.nodes, &context)?;
        let feasible = is_feasible_context(m, &context)?;
        out.push(Subgame { diagram: d.clone(), context, model, feasible });
    }
    Ok(out)
}

/// Can any profile reach this instantiation? Unconstrained decisions are
/// covered by the fully mixed completion; decisions with several allowed
/// rules need a witness combination because a rule couples its contexts.
pub fn is_feasible_context(m: &GameModel, z: &Assignment) -> Result<bool> {
    if z.is_empty() {
        return Ok(true);
    }
    let constrained: Vec<String> = m
        .decisions()
        .into_iter()
        .filter(|d| m.allowed_rules.get(d).map(|r| r.len() > 1).unwrap_or(false))
        .collect();
    let base = fully_mixed_profile(m)?;
    if constrained.is_empty() {
        return Ok(!base.context(m)?.prob_of(z)?.is_zero());
    }
    let per: Vec<Vec<Vec<usize>>> = constrained
        .iter()
        .map(|d| pure_rules_for(m, d))
        .collect::<Result<_>>()?;
    let dims: Vec<usize> = per.iter().map(|r| r.len()).collect();
    for pick in 0..context_count(&dims) {
        let digits = digits_of(&dims, pick);
        let mut profile = base.clone();
        for (i, d) in constrained.iter().enumerate() {
            profile = profile.with_rule(d, rule_cpd(m, d, &per[i][digits[i]])?);
        }
        if !profile.context(m)?.prob_of(z)?.is_zero() {
            return Ok(true);
        }
    }
    Ok(false)
}

pub fn is_feasible(m: &GameModel, sg: &Subgame) -> Result<bool> {
    is_feasible_context(m, &sg.context)
}

impl Subgame {
    /// Slice a full-game profile down to this subgame's variables and
    /// boundary context, mirroring the model restriction.
    pub fn restrict_profile(
        &self,
        parent: &GameModel,
        profile: &PolicyProfile,
    ) -> Result<PolicyProfile> {
        let mut rules = std::collections::BTreeMap::new();
        for d in self.model.decisions() {
            let full = profile
                .rules
                .get(&d)
                .ok_or_else(|| Error::InvalidModel(format!("profile misses rule for {d}")))?;
            let old_parents = parent.graph.parents(&d)?;
            let old_dims = parent.parent_dims(&d)?;
            let kept: Vec<&String> =
                old_parents.iter().filter(|p| self.diagram.nodes.contains(*p)).collect();
            let kept_dims: Vec<usize> =
                kept.iter().map(|p| parent.domain(p).unwrap().len()).collect();
            let mut table = Vec::with_capacity(context_count(&kept_dims));
            for c in 0..context_count(&kept_dims) {
                let kept_digits = digits_of(&kept_dims, c);
                let mut digits = Vec::with_capacity(old_parents.len());
                let mut ki = 0;
                for p in &old_parents {
                    if self.diagram.nodes.contains(p) {
                        digits.push(kept_digits[ki]);
                        ki += 1;
                    } else {
                        let val = self
                            .context
                            .get(p)
                            .ok_or_else(|| Error::ContextIncomplete(p.clone()))?;
                        digits.push(parent.val_idx(p, val)?);
                    }
                }
                table.push(full.table[index_of(&old_dims, &digits)].clone());
            }
            rules.insert(
                d.clone(),
                Cpd {
                    child: d.clone(),
                    parents: kept.into_iter().cloned().collect(),
                    table,
                },
            );
        }
        Ok(PolicyProfile { rules })
    }

    /// Pr of this subgame's context under the given full-game profile.
    pub fn reach_probability(&self, parent: &GameModel, profile: &PolicyProfile) -> Result<Q> {
        if self.context.is_empty() {
            return Ok(Q::one());
        }
        profile.context(parent)?.prob_of(&self.context)
    }
}
