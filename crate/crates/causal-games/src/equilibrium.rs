//! Equilibrium computation: Nash verification and enumeration, subgame
//! perfection, and trembling-hand perfection.
//!
//! Everything runs on exact rationals except the perturbed-game iteration
//! used for trembling-hand checks on games with three or more strategic
//! agents, which mixes floats for the state with exact inference.
//!
//! Continuum families are reported through finite representative sets:
//! wherever a width-2 rule row can slide along a segment without breaking
//! any best response, both endpoints are emitted as profiles and the
//! segment is attached to the profiles as an annotation. One-off mixed
//! equilibria found by support enumeration are mapped to behavioural form
//! when an equivalent exists; otherwise they are reported separately with
//! a witness assignment showing why no behavioural policy reproduces them.

use std::collections::BTreeMap;

use num::{One, Zero};
use serde_json::json;

use crate::mechanism::{self, Reachability, Recall};
use crate::model::{context_count, digits_of, index_of, Cpd, GameModel};
use crate::policy::{
    behavioural_from_mixed, best_responses, bind_decisions, context_probability,
    downstream_utilities, enumerate_pure_policies, enumerate_pure_profiles, fully_mixed_profile,
    profile_utilities, pure_rules_for, rule_cpd, BehaviouralEquivalent,
    BestResponse, MixedPolicy, PolicyProfile, PureAgentPolicy, DEFAULT_PROFILE_CAP,
};
use crate::rational::{rational_to_f64, show_rational, Q};
use crate::subgame::{
    closure, enumerate_subdiagrams, instantiate_subgames, is_feasible_context, Subdiagram,
    Subgame,
};
use crate::{Error, Result};

/// Deviation pools above this size are skipped during family sweeps; the
/// sweeps only add annotations and endpoints, so skipping is safe.
const SWEEP_CAP: u128 = 4096;

/// A profitable unilateral deviation, reported as a Nash counterexample.
#[derive(Debug, Clone)]
pub struct Deviation {
    pub agent: String,
    pub policy: PureAgentPolicy,
    pub gain: Q,
}

/// Check whether a profile is a Nash equilibrium. Returns the most
/// profitable pure deviation as a witness when it is not.
pub fn verify_ne(
    m: &GameModel,
    profile: &PolicyProfile,
    cap: u128,
) -> Result<(bool, Option<Deviation>)> {
    let base = profile_utilities(m, profile)?;
    let mut best: Option<Deviation> = None;
    for agent in &m.agents {
        if m.decisions_of(agent).is_empty() {
            continue;
        }
        for policy in enumerate_pure_policies(m, agent, cap)? {
            let mut dev = profile.clone();
            for (d, rule) in &policy {
                dev = dev.with_rule(d, rule_cpd(m, d, rule)?);
            }
            let gain = profile_utilities(m, &dev)?.remove(agent).unwrap() - base[agent].clone();
            if gain > Q::zero() && best.as_ref().map(|b| gain >= b.gain).unwrap_or(true) {
                best = Some(Deviation { agent: agent.clone(), policy, gain });
            }
        }
    }
    Ok((best.is_none(), best))
}

/// Expected utility of a rule table for `d` against the rest of the
/// profile, weighting each context by its reach probability.
fn rule_value(
    m: &GameModel,
    profile: &PolicyProfile,
    d: &str,
    br: &BestResponse,
    table: &[Vec<Q>],
) -> Result<Q> {
    let mut eu = Q::zero();
    for c in &br.per_context {
        if !c.feasible {
            continue;
        }
        let w = context_probability(m, profile, d, c.context)?;
        for (a, p) in table[c.context].iter().enumerate() {
            if !p.is_zero() {
                eu += w.clone() * p.clone() * c.values[a].clone();
            }
        }
    }
    Ok(eu)
}

/// Is the profile's rule for `d` a best response to the rest of the
/// profile? Decisions with an allowed-rules list are compared by rule
/// expected utility because their contexts are coupled.
pub fn rule_is_best_response(m: &GameModel, profile: &PolicyProfile, d: &str) -> Result<bool> {
    let br = best_responses(m, profile, d)?;
    if br.indifferent {
        return Ok(true);
    }
    let rule = profile
        .rules
        .get(d)
        .ok_or_else(|| Error::InvalidModel(format!("profile misses rule for {d}")))?;
    if m.allowed_rules.contains_key(d) {
        let width = m.domain(d)?.len();
        let mine = rule_value(m, profile, d, &br, &rule.table)?;
        let mut top: Option<Q> = None;
        for r in pure_rules_for(m, d)? {
            let table: Vec<Vec<Q>> = r
                .iter()
                .map(|&a| {
                    let mut row = vec![Q::zero(); width];
                    row[a] = Q::one();
                    row
                })
                .collect();
            let v = rule_value(m, profile, d, &br, &table)?;
            if top.as_ref().map(|t| v > *t).unwrap_or(true) {
                top = Some(v);
            }
        }
        return Ok(top.map(|t| mine == t).unwrap_or(true));
    }
    for c in &br.per_context {
        if !c.feasible {
            continue;
        }
        for (a, p) in rule.table[c.context].iter().enumerate() {
            if !p.is_zero() && !c.optimal.contains(&a) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Is the rule for `d` a best response within every feasible instantiated
/// subgame whose diagram contains `d`?
pub fn rule_is_subgame_perfect(m: &GameModel, profile: &PolicyProfile, d: &str) -> Result<bool> {
    for diagram in enumerate_subdiagrams(m, &Reachability::S)? {
        if !diagram.nodes.contains(d) {
            continue;
        }
        for sg in instantiate_subgames(m, &diagram)? {
            if !sg.feasible {
                continue;
            }
            let sub = sg.restrict_profile(m, profile)?;
            if !rule_is_best_response(&sg.model, &sub, d)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Equilibrium constraints hold on a closed interval of probability mass
/// for one rule row: the profile family with `table[context] = (1-t, t)`
/// for `t` in `[low, high]` (the parameter rides on `action`).
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyAnnotation {
    pub decision: String,
    pub context: usize,
    pub action: usize,
    pub other: usize,
    pub low: Q,
    pub high: Q,
}

/// Work counters for the structural-vs-flat comparison.
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub stage_profiles_evaluated: u64,
    pub per_stage: Vec<u64>,
    pub flat_enumeration_used: bool,
}

/// A mixed-policy equilibrium found by support enumeration. When a
/// behavioural equivalent exists it is indexed into the profile list;
/// otherwise `witness` holds a joint assignment over the blocked agent's
/// decisions with its mixed and best-behavioural probabilities.
#[derive(Debug, Clone)]
pub struct MixedFinding {
    pub policies: Vec<MixedPolicy>,
    pub behavioural: Option<usize>,
    pub witness: Option<(crate::model::Assignment, Q, Q)>,
}

#[derive(Debug, Clone, Default)]
pub struct EquilibriumSet {
    pub profiles: Vec<PolicyProfile>,
    /// Parallel to `profiles`.
    pub annotations: Vec<Vec<FamilyAnnotation>>,
    pub mixed: Vec<MixedFinding>,
    pub stats: SolveStats,
    /// Set when an agent lacks sufficient recall, so an empty result may
    /// mean genuine non-existence rather than solver failure.
    pub may_not_exist: bool,
}

impl EquilibriumSet {
    pub fn to_json(&self, m: &GameModel) -> Result<serde_json::Value> {
        let profiles = self
            .profiles
            .iter()
            .map(|p| p.to_json(m))
            .collect::<Result<Vec<_>>>()?;
        let annotations: Vec<serde_json::Value> = self
            .annotations
            .iter()
            .map(|anns| {
                json!(anns
                    .iter()
                    .map(|a| {
                        json!({
                            "decision": a.decision,
                            "context": a.context,
                            "action": a.action,
                            "other": a.other,
                            "low": show_rational(&a.low),
                            "high": show_rational(&a.high),
                        })
                    })
                    .collect::<Vec<_>>())
            })
            .collect();
        let mixed: Vec<serde_json::Value> = self
            .mixed
            .iter()
            .map(|f| {
                json!({
                    "policies": f.policies.iter().map(|mu| {
                        json!({
                            "agent": mu.agent,
                            "support": mu.support.iter().map(|(pol, w)| {
                                json!({"policy": pol, "weight": show_rational(w)})
                            }).collect::<Vec<_>>(),
                        })
                    }).collect::<Vec<_>>(),
                    "behavioural": f.behavioural,
                    "witness": f.witness.as_ref().map(|(z, mp, bp)| {
                        json!({
                            "assignment": z,
                            "mixed": show_rational(mp),
                            "behavioural": show_rational(bp),
                        })
                    }),
                })
            })
            .collect();
        Ok(json!({
            "profiles": profiles,
            "annotations": annotations,
            "mixed": mixed,
            "mayNotExist": self.may_not_exist,
            "stats": {
                "stageProfilesEvaluated": self.stats.stage_profiles_evaluated,
                "perStage": self.stats.per_stage,
                "flatEnumerationUsed": self.stats.flat_enumeration_used,
            },
        }))
    }
}

struct SetBuilder {
    set: EquilibriumSet,
}

impl SetBuilder {
    fn new() -> SetBuilder {
        SetBuilder { set: EquilibriumSet::default() }
    }

    fn push(&mut self, profile: PolicyProfile) -> usize {
        if let Some(i) = self.set.profiles.iter().position(|p| *p == profile) {
            return i;
        }
        self.set.profiles.push(profile);
        self.set.annotations.push(Vec::new());
        self.set.profiles.len() - 1
    }

    fn annotate(&mut self, idx: usize, ann: FamilyAnnotation) {
        let anns = &mut self.set.annotations[idx];
        if !anns.contains(&ann) {
            anns.push(ann);
        }
    }
}

/// Pure-policy normal form over the listed agents. Decisions owned by
/// other agents keep uniform rules.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub agents: Vec<String>,
    pub policies: Vec<Vec<PureAgentPolicy>>,
    /// `payoffs[i][k]`: agent i's expected utility at the joint policy
    /// encoded by `k` (mixed radix over policy indices, first agent
    /// slowest).
    pub payoffs: Vec<Vec<Q>>,
}

pub fn normal_form(m: &GameModel, agents: &[String], cap: u128) -> Result<NormalForm> {
    let policies: Vec<Vec<PureAgentPolicy>> = agents
        .iter()
        .map(|a| enumerate_pure_policies(m, a, cap))
        .collect::<Result<_>>()?;
    let dims: Vec<usize> = policies.iter().map(Vec::len).collect();
    let total: u128 = dims.iter().map(|&x| x as u128).product();
    if total > cap {
        return Err(Error::ExplosionGuard(total, cap));
    }
    let mut payoffs = vec![Vec::with_capacity(total as usize); agents.len()];
    for k in 0..total as usize {
        let picks = digits_of(&dims, k);
        let mut profile = PolicyProfile::uniform(m)?;
        for (i, _) in agents.iter().enumerate() {
            for (d, rule) in &policies[i][picks[i]] {
                profile = profile.with_rule(d, rule_cpd(m, d, rule)?);
            }
        }
        let mut eu = profile_utilities(m, &profile)?;
        for (i, a) in agents.iter().enumerate() {
            payoffs[i].push(eu.remove(a).unwrap());
        }
    }
    Ok(NormalForm { agents: agents.to_vec(), policies, payoffs })
}

pub fn pure_ne(m: &GameModel) -> Result<EquilibriumSet> {
    pure_ne_capped(m, DEFAULT_PROFILE_CAP)
}

/// Flat enumeration over all pure profiles, kept as the baseline and as
/// the fallback for stage games with more than two strategic agents.
pub fn pure_ne_capped(m: &GameModel, cap: u128) -> Result<EquilibriumSet> {
    let profiles = enumerate_pure_profiles(m, cap)?;
    let mut builder = SetBuilder::new();
    builder.set.stats.flat_enumeration_used = true;
    builder.set.stats.stage_profiles_evaluated = profiles.len() as u64;
    for profile in profiles {
        if verify_ne(m, &profile, cap)?.0 {
            builder.push(profile);
        }
    }
    Ok(builder.set)
}

/// The strategic part of a model: decisions with a real choice and a
/// downstream stake, everything else bound to its forced or neutral rule.
struct StrategicSplit {
    decisions: Vec<String>,
    base: BTreeMap<String, Cpd>,
    bound: GameModel,
    agents: Vec<String>,
}

fn strategic_split(m: &GameModel) -> Result<StrategicSplit> {
    let mut decisions = Vec::new();
    for d in m.decisions() {
        let wide = match m.allowed_rules.get(&d) {
            Some(rules) => rules.len() > 1,
            None => m.domain(&d)?.len() > 1,
        };
        if wide && !downstream_utilities(m, &d)?.is_empty() {
            decisions.push(d);
        }
    }
    let mixed = fully_mixed_profile(m)?;
    let mut base = BTreeMap::new();
    for d in m.decisions() {
        if !decisions.contains(&d) {
            base.insert(d.clone(), mixed.rules[&d].clone());
        }
    }
    let bound = if base.is_empty() { m.clone() } else { bind_decisions(m, &base)? };
    let agents: Vec<String> = m
        .agents
        .iter()
        .filter(|a| decisions.iter().any(|d| m.agent_of(d) == Some(a.as_str())))
        .cloned()
        .collect();
    Ok(StrategicSplit { decisions, base, bound, agents })
}

fn complete(base: &BTreeMap<String, Cpd>, extra: Vec<(String, Cpd)>) -> PolicyProfile {
    let mut rules = base.clone();
    rules.extend(extra);
    PolicyProfile { rules }
}

fn single_agent_representatives(
    split: &StrategicSplit,
    cap: u128,
    builder: &mut SetBuilder,
) -> Result<()> {
    let mb = &split.bound;
    let agent = &split.agents[0];
    if split.decisions.len() > 1 {
        // Joint argmax over the agent's pure policies.
        let policies = enumerate_pure_policies(mb, agent, cap)?;
        builder.set.stats.stage_profiles_evaluated = policies.len() as u64;
        let mut scored = Vec::with_capacity(policies.len());
        for policy in &policies {
            let mut extra = Vec::new();
            for (d, rule) in policy {
                extra.push((d.clone(), rule_cpd(mb, d, rule)?));
            }
            let profile = complete(&split.base, extra);
            let eu = profile_utilities(mb, &profile)?.remove(agent).unwrap();
            scored.push((eu, profile));
        }
        let top = scored.iter().map(|(v, _)| v.clone()).max().unwrap();
        for (v, profile) in scored {
            if v == top {
                builder.push(profile);
            }
        }
        return Ok(());
    }
    let d = &split.decisions[0];
    let br = best_responses(mb, &fully_mixed_profile(mb)?, d)?;
    if let Some(level) = &br.rule_level {
        builder.set.stats.stage_profiles_evaluated = level.len() as u64;
        for rule in level {
            builder.push(complete(&split.base, vec![(d.clone(), rule_cpd(mb, d, rule)?)]));
        }
        return Ok(());
    }
    builder.set.stats.stage_profiles_evaluated = br
        .per_context
        .iter()
        .filter(|c| c.feasible)
        .map(|c| c.values.len() as u64)
        .sum();
    // Unreached contexts are pinned to the first action; families over
    // them are reconstructed by the sweep afterwards.
    let sets: Vec<Vec<usize>> = br
        .per_context
        .iter()
        .map(|c| if c.feasible { c.optimal.clone() } else { vec![0] })
        .collect();
    let dims: Vec<usize> = sets.iter().map(Vec::len).collect();
    let total: u128 = dims.iter().map(|&x| x as u128).product();
    if total > cap {
        return Err(Error::ExplosionGuard(total, cap));
    }
    for k in 0..total as usize {
        let picks = digits_of(&dims, k);
        let rule: Vec<usize> = picks.iter().zip(&sets).map(|(&p, s)| s[p]).collect();
        builder.push(complete(&split.base, vec![(d.clone(), rule_cpd(mb, d, &rule)?)]));
    }
    Ok(())
}

/// Solve the square linear system by Gauss-Jordan elimination. Returns
/// None when singular.
fn solve_linear(mut a: Vec<Vec<Q>>, mut b: Vec<Q>) -> Option<Vec<Q>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        b.swap(col, piv);
        let pv = a[col][col].clone();
        for x in a[col].iter_mut() {
            *x /= pv.clone();
        }
        b[col] /= pv;
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone();
            let pivot_row = a[col].clone();
            for (x, p) in a[r].iter_mut().zip(&pivot_row) {
                *x -= f.clone() * p.clone();
            }
            let sub = f * b[col].clone();
            b[r] -= sub;
        }
    }
    Some(b)
}

fn index_combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    use itertools::Itertools;
    (0..n).combinations(k).collect()
}

fn two_agent_representatives(
    split: &StrategicSplit,
    cap: u128,
    builder: &mut SetBuilder,
) -> Result<()> {
    let mb = &split.bound;
    let nf = normal_form(mb, &split.agents, cap)?;
    let (na, nb) = (nf.policies[0].len(), nf.policies[1].len());
    let ua = |i: usize, j: usize| &nf.payoffs[0][i * nb + j];
    let ub = |i: usize, j: usize| &nf.payoffs[1][i * nb + j];
    builder.set.stats.stage_profiles_evaluated = (na * nb) as u64;

    let compose = |builder: &mut SetBuilder, i: usize, j: usize| -> Result<usize> {
        let mut extra = Vec::new();
        for (d, rule) in nf.policies[0][i].iter().chain(nf.policies[1][j].iter()) {
            extra.push((d.clone(), rule_cpd(mb, d, rule)?));
        }
        Ok(builder.push(complete(&split.base, extra)))
    };

    for i in 0..na {
        for j in 0..nb {
            let best_a = (0..na).all(|k| ua(k, j) <= ua(i, j));
            let best_b = (0..nb).all(|l| ub(i, l) <= ub(i, j));
            if best_a && best_b {
                compose(builder, i, j)?;
            }
        }
    }

    // Square-support enumeration for properly mixed equilibria.
    for k in 2..=na.min(nb) {
        for sa in index_combinations(na, k) {
            'support: for sb in index_combinations(nb, k) {
                // Opponent mix y making the row player indifferent on sa.
                let mut mat = vec![vec![Q::zero(); k]; k];
                let mut rhs = vec![Q::zero(); k];
                for t in 1..k {
                    for (jj, &j) in sb.iter().enumerate() {
                        mat[t - 1][jj] = ua(sa[0], j).clone() - ua(sa[t], j).clone();
                    }
                }
                mat[k - 1] = vec![Q::one(); k];
                rhs[k - 1] = Q::one();
                let Some(y) = solve_linear(mat, rhs) else { continue };
                if y.iter().any(|w| *w <= Q::zero()) {
                    continue;
                }
                let va: Q = sb.iter().zip(&y).map(|(&j, w)| ua(sa[0], j).clone() * w.clone()).sum();
                for i in 0..na {
                    let v: Q = sb.iter().zip(&y).map(|(&j, w)| ua(i, j).clone() * w.clone()).sum();
                    if v > va {
                        continue 'support;
                    }
                }
                let mut mat = vec![vec![Q::zero(); k]; k];
                let mut rhs = vec![Q::zero(); k];
                for t in 1..k {
                    for (ii, &i) in sa.iter().enumerate() {
                        mat[t - 1][ii] = ub(i, sb[0]).clone() - ub(i, sb[t]).clone();
                    }
                }
                mat[k - 1] = vec![Q::one(); k];
                rhs[k - 1] = Q::one();
                let Some(x) = solve_linear(mat, rhs) else { continue };
                if x.iter().any(|w| *w <= Q::zero()) {
                    continue;
                }
                let vb: Q = sa.iter().zip(&x).map(|(&i, w)| ub(i, sb[0]).clone() * w.clone()).sum();
                for j in 0..nb {
                    let v: Q = sa.iter().zip(&x).map(|(&i, w)| ub(i, j).clone() * w.clone()).sum();
                    if v > vb {
                        continue 'support;
                    }
                }
                let mu_a = MixedPolicy {
                    agent: split.agents[0].clone(),
                    support: sa
                        .iter()
                        .zip(&x)
                        .map(|(&i, w)| (nf.policies[0][i].clone(), w.clone()))
                        .collect(),
                };
                let mu_b = MixedPolicy {
                    agent: split.agents[1].clone(),
                    support: sb
                        .iter()
                        .zip(&y)
                        .map(|(&j, w)| (nf.policies[1][j].clone(), w.clone()))
                        .collect(),
                };
                match (behavioural_from_mixed(mb, &mu_a)?, behavioural_from_mixed(mb, &mu_b)?) {
                    (
                        BehaviouralEquivalent::Equivalent(ra),
                        BehaviouralEquivalent::Equivalent(rb),
                    ) => {
                        let mut extra: Vec<(String, Cpd)> = ra.into_iter().collect();
                        extra.extend(rb);
                        let idx = builder.push(complete(&split.base, extra));
                        builder.set.mixed.push(MixedFinding {
                            policies: vec![mu_a, mu_b],
                            behavioural: Some(idx),
                            witness: None,
                        });
                    }
                    (BehaviouralEquivalent::NoEquivalent { witness, mixed, behavioural }, _)
                    | (_, BehaviouralEquivalent::NoEquivalent { witness, mixed, behavioural }) => {
                        builder.set.mixed.push(MixedFinding {
                            policies: vec![mu_a, mu_b],
                            behavioural: None,
                            witness: Some((witness, mixed, behavioural)),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Behavioural Nash equilibria as a finite representative set. Handles
/// zero, one, or two strategic agents exactly; more interacting agents
/// are out of scope for this engine.
pub fn behavioural_ne(m: &GameModel) -> Result<EquilibriumSet> {
    behavioural_ne_capped(m, DEFAULT_PROFILE_CAP)
}

pub fn behavioural_ne_capped(m: &GameModel, cap: u128) -> Result<EquilibriumSet> {
    let split = strategic_split(m)?;
    let mut builder = SetBuilder::new();
    match split.agents.len() {
        0 => {
            builder.set.stats.stage_profiles_evaluated = 1;
            builder.push(PolicyProfile { rules: split.base.clone() });
        }
        1 => single_agent_representatives(&split, cap, &mut builder)?,
        2 => two_agent_representatives(&split, cap, &mut builder)?,
        n => {
            return Err(Error::UnsupportedShape(format!(
                "{n} strategic agents; the behavioural engine handles at most 2"
            )))
        }
    }
    sweep_families(m, &[whole_game(m)], &mut builder)?;
    Ok(builder.set)
}

/// The full game dressed as a subgame, so sweeps can treat the plain Nash
/// case and the subgame-perfect case uniformly.
fn whole_game(m: &GameModel) -> Subgame {
    let nodes = m.graph.nodes().iter().cloned().collect();
    Subgame {
        diagram: Subdiagram {
            nodes,
            agents: m.agents.iter().cloned().collect(),
            proper: false,
            minimal: false,
        },
        context: crate::model::Assignment::new(),
        model: m.clone(),
        feasible: true,
    }
}

fn with_row_mass(base: &PolicyProfile, d: &str, ctx: usize, t: &Q) -> Result<PolicyProfile> {
    let old = base
        .rules
        .get(d)
        .ok_or_else(|| Error::InvalidModel(format!("profile misses rule for {d}")))?;
    let mut table = old.table.clone();
    table[ctx] = vec![Q::one() - t.clone(), t.clone()];
    Ok(base.with_rule(d, Cpd { child: d.to_string(), parents: old.parents.clone(), table }))
}

/// Largest interval of mass t on `(d, ctx)` keeping the profile a best
/// response for every agent in every scene. Gains are affine in t, so two
/// endpoint evaluations determine each constraint.
fn family_interval(
    m: &GameModel,
    scenes: &[Subgame],
    pools: &[BTreeMap<String, Vec<PureAgentPolicy>>],
    base: &PolicyProfile,
    d: &str,
    ctx: usize,
) -> Result<Option<(Q, Q)>> {
    let p0 = with_row_mass(base, d, ctx, &Q::zero())?;
    let p1 = with_row_mass(base, d, ctx, &Q::one())?;
    let mut lo = Q::zero();
    let mut hi = Q::one();
    for (sg, pool) in scenes.iter().zip(pools) {
        let s0 = sg.restrict_profile(m, &p0)?;
        let s1 = sg.restrict_profile(m, &p1)?;
        for (agent, policies) in pool {
            let e0 = profile_utilities(&sg.model, &s0)?.remove(agent).unwrap();
            let e1 = profile_utilities(&sg.model, &s1)?.remove(agent).unwrap();
            for policy in policies {
                let mut d0 = s0.clone();
                let mut d1 = s1.clone();
                for (dd, rule) in policy {
                    let rc = rule_cpd(&sg.model, dd, rule)?;
                    d0 = d0.with_rule(dd, rc.clone());
                    d1 = d1.with_rule(dd, rc);
                }
                let g0 = e0.clone() - profile_utilities(&sg.model, &d0)?.remove(agent).unwrap();
                let g1 = e1.clone() - profile_utilities(&sg.model, &d1)?.remove(agent).unwrap();
                let zero = Q::zero();
                if g0 >= zero && g1 >= zero {
                    continue;
                }
                if g0 < zero && g1 < zero {
                    return Ok(None);
                }
                let root = g0.clone() / (g0.clone() - g1);
                if g0 >= zero {
                    if root < hi {
                        hi = root;
                    }
                } else if root > lo {
                    lo = root;
                }
                if lo > hi {
                    return Ok(None);
                }
            }
        }
    }
    Ok(Some((lo, hi)))
}

/// Grow each found profile along width-2 rule rows that can move without
/// breaking any scene's equilibrium constraints; record the interval and
/// push both endpoints.
fn sweep_families(m: &GameModel, scenes: &[Subgame], builder: &mut SetBuilder) -> Result<()> {
    // Rows at contexts no profile can reach are payoff-irrelevant, so sweeping
    // them would only duplicate representatives; they stay pinned.
    let mut swept: Vec<(String, Vec<usize>)> = Vec::new();
    for d in m.decisions() {
        if m.allowed_rules.contains_key(&d) || m.domain(&d)?.len() != 2 {
            continue;
        }
        let parents = m.graph.parents(&d)?;
        let dims = m.parent_dims(&d)?;
        let mut kept = Vec::new();
        for ctx in 0..context_count(&dims) {
            let digits = digits_of(&dims, ctx);
            let mut event = crate::model::Assignment::new();
            for (p, &k) in parents.iter().zip(&digits) {
                event.insert(p.clone(), m.domain(p)?[k].clone());
            }
            if is_feasible_context(m, &event)? {
                kept.push(ctx);
            }
        }
        if !kept.is_empty() {
            swept.push((d, kept));
        }
    }
    if swept.is_empty() {
        return Ok(());
    }
    let mut pools: Vec<BTreeMap<String, Vec<PureAgentPolicy>>> = Vec::with_capacity(scenes.len());
    for sg in scenes {
        let mut pool = BTreeMap::new();
        for agent in &sg.model.agents {
            if sg.model.decisions_of(agent).is_empty() {
                continue;
            }
            match enumerate_pure_policies(&sg.model, agent, SWEEP_CAP) {
                Ok(policies) => {
                    pool.insert(agent.clone(), policies);
                }
                Err(Error::ExplosionGuard(..)) => return Ok(()),
                Err(e) => return Err(e),
            }
        }
        pools.push(pool);
    }
    let mut idx = 0;
    while idx < builder.set.profiles.len() && builder.set.profiles.len() <= SWEEP_CAP as usize {
        let base = builder.set.profiles[idx].clone();
        for (d, ctxs) in &swept {
            for &ctx in ctxs {
                let Some((lo, hi)) = family_interval(m, scenes, &pools, &base, d, ctx)? else {
                    continue;
                };
                if lo >= hi {
                    continue;
                }
                let ann = FamilyAnnotation {
                    decision: d.clone(),
                    context: ctx,
                    action: 1,
                    other: 0,
                    low: lo.clone(),
                    high: hi.clone(),
                };
                builder.annotate(idx, ann.clone());
                for t in [&lo, &hi] {
                    let endpoint = with_row_mass(&base, d, ctx, t)?;
                    let j = builder.push(endpoint);
                    builder.annotate(j, ann.clone());
                }
            }
        }
        idx += 1;
    }
    Ok(())
}

/// Lift per-subgame stage solutions back onto full-context rules. Returns
/// None when two subgames disagree on a shared context row.
fn lift_stage_rules(
    m: &GameModel,
    stage_decisions: &[String],
    choice: &[(&Subgame, &PolicyProfile)],
) -> Result<Option<BTreeMap<String, Cpd>>> {
    let mut out = BTreeMap::new();
    for d in stage_decisions {
        let parents = m.graph.parents(d)?;
        let dims = m.parent_dims(d)?;
        let width = m.domain(d)?.len();
        let n_ctx = context_count(&dims);
        let mut rows: Vec<Option<Vec<Q>>> = vec![None; n_ctx];
        for (sg, profile) in choice {
            let Some(rule) = profile.rules.get(d) else { continue };
            let kept_dims: Vec<usize> = parents
                .iter()
                .filter(|p| sg.diagram.nodes.contains(*p))
                .map(|p| m.domain(p).map(<[_]>::len))
                .collect::<Result<_>>()?;
            for ctx in 0..n_ctx {
                let digits = digits_of(&dims, ctx);
                let mut consistent = true;
                for (i, p) in parents.iter().enumerate() {
                    if let Some(v) = sg.context.get(p) {
                        if m.val_idx(p, v)? != digits[i] {
                            consistent = false;
                            break;
                        }
                    }
                }
                if !consistent {
                    continue;
                }
                let kept_digits: Vec<usize> = parents
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| sg.diagram.nodes.contains(*p))
                    .map(|(i, _)| digits[i])
                    .collect();
                let row = rule.table[index_of(&kept_dims, &kept_digits)].clone();
                match &rows[ctx] {
                    None => rows[ctx] = Some(row),
                    Some(existing) if *existing == row => {}
                    Some(_) => return Ok(None),
                }
            }
        }
        let uniform: Vec<Q> = vec![Q::one() / crate::rational::qi(width as i64); width];
        let table: Vec<Vec<Q>> =
            rows.into_iter().map(|r| r.unwrap_or_else(|| uniform.clone())).collect();
        out.insert(d.clone(), Cpd { child: d.clone(), parents, table });
    }
    Ok(Some(out))
}

/// Is the profile a Nash equilibrium of every feasible instantiated
/// subgame (the whole game included)?
pub fn verify_spe(
    m: &GameModel,
    profile: &PolicyProfile,
    cap: u128,
) -> Result<(bool, Option<Deviation>)> {
    for diagram in enumerate_subdiagrams(m, &Reachability::S)? {
        for sg in instantiate_subgames(m, &diagram)? {
            if !sg.feasible {
                continue;
            }
            let sub = sg.restrict_profile(m, profile)?;
            let (ok, dev) = verify_ne(&sg.model, &sub, cap)?;
            if !ok {
                return Ok((false, dev));
            }
        }
    }
    Ok((true, None))
}

pub fn spe(m: &GameModel) -> Result<EquilibriumSet> {
    spe_capped(m, DEFAULT_PROFILE_CAP)
}

/// Subgame perfect equilibria by stagewise backward induction over the
/// condensed relevance graph. Each stage solves the instantiated subgames
/// of its closure with earlier solutions bound as chance, lifts the
/// per-subgame rules, and keeps every combination that agrees on shared
/// rows. Final candidates are re-verified in every feasible subgame.
pub fn spe_capped(m: &GameModel, cap: u128) -> Result<EquilibriumSet> {
    let may_not_exist = mechanism::recall(m)?
        .values()
        .any(|r| matches!(r, Recall::Insufficient));
    let relevance = mechanism::decision_relevance(m, &Reachability::S)?;
    let cond = relevance.condense();
    let all_nodes: std::collections::BTreeSet<String> =
        m.graph.nodes().iter().cloned().collect();

    let mut stats = SolveStats::default();
    let mut partials: Vec<BTreeMap<String, Cpd>> = vec![BTreeMap::new()];
    let mut done: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for &ci in &cond.topo_order {
        let seed: std::collections::BTreeSet<String> = cond.components[ci]
            .iter()
            .filter(|d| !done.contains(*d))
            .cloned()
            .collect();
        if seed.is_empty() {
            continue;
        }
        let nodes = closure(m, &Reachability::S, &seed)?;
        let stage_decisions: Vec<String> = m
            .decisions()
            .into_iter()
            .filter(|d| nodes.contains(d) && !done.contains(d))
            .collect();
        let diagram = Subdiagram {
            agents: stage_decisions
                .iter()
                .filter_map(|d| m.agent_of(d).map(str::to_string))
                .collect(),
            proper: nodes != all_nodes,
            minimal: false,
            nodes,
        };
        let mut stage_count = 0u64;
        let mut next: Vec<BTreeMap<String, Cpd>> = Vec::new();
        for partial in &partials {
            let stage_model =
                if partial.is_empty() { m.clone() } else { bind_decisions(m, partial)? };
            let subgames = instantiate_subgames(&stage_model, &diagram)?;
            let mut solved: Vec<(usize, Vec<PolicyProfile>)> = Vec::new();
            let mut dead = false;
            for (si, sg) in subgames.iter().enumerate() {
                // Feasibility is a property of the original game, not of
                // the partially bound stage model.
                if !is_feasible_context(m, &sg.context)? {
                    continue;
                }
                let es = match behavioural_ne_capped(&sg.model, cap) {
                    Ok(es) => es,
                    Err(Error::UnsupportedShape(_)) => {
                        stats.flat_enumeration_used = true;
                        pure_ne_capped(&sg.model, cap)?
                    }
                    Err(e) => return Err(e),
                };
                stage_count += es.stats.stage_profiles_evaluated;
                if es.profiles.is_empty() {
                    dead = true;
                    break;
                }
                solved.push((si, es.profiles));
            }
            if dead {
                continue;
            }
            let dims: Vec<usize> = solved.iter().map(|(_, v)| v.len()).collect();
            let total: u128 = dims.iter().map(|&x| x as u128).product();
            if total > cap {
                return Err(Error::ExplosionGuard(total, cap));
            }
            for k in 0..total as usize {
                let picks = digits_of(&dims, k);
                let choice: Vec<(&Subgame, &PolicyProfile)> = solved
                    .iter()
                    .zip(&picks)
                    .map(|((si, v), &p)| (&subgames[*si], &v[p]))
                    .collect();
                if let Some(rules) = lift_stage_rules(m, &stage_decisions, &choice)? {
                    let mut grown = partial.clone();
                    grown.extend(rules);
                    next.push(grown);
                }
            }
        }
        stats.per_stage.push(stage_count);
        stats.stage_profiles_evaluated += stage_count;
        if next.is_empty() {
            return Err(Error::NoSpeFound);
        }
        if next.len() as u128 > cap {
            return Err(Error::ExplosionGuard(next.len() as u128, cap));
        }
        partials = next;
        done.extend(stage_decisions);
    }

    let mut scenes = Vec::new();
    for diagram in enumerate_subdiagrams(m, &Reachability::S)? {
        for sg in instantiate_subgames(m, &diagram)? {
            if sg.feasible {
                scenes.push(sg);
            }
        }
    }
    let mut builder = SetBuilder::new();
    for rules in partials {
        let profile = PolicyProfile { rules };
        let mut ok = true;
        for sg in &scenes {
            let sub = sg.restrict_profile(m, &profile)?;
            if !verify_ne(&sg.model, &sub, cap)?.0 {
                ok = false;
                break;
            }
        }
        if ok {
            builder.push(profile);
        }
    }
    if builder.set.profiles.is_empty() {
        return Err(Error::NoSpeFound);
    }
    builder.set.stats = stats;
    builder.set.may_not_exist = may_not_exist;
    sweep_families(m, &scenes, &mut builder)?;
    Ok(builder.set)
}

/// Per-action probability floors for a perturbed game.
#[derive(Debug, Clone)]
pub struct Perturbation {
    /// Per decision, per context, per action: strictly positive lower
    /// bounds that must leave each row summing to at most one.
    pub floors: BTreeMap<String, Vec<Vec<Q>>>,
}

impl Perturbation {
    pub fn uniform(m: &GameModel, eps: &Q) -> Result<Perturbation> {
        let mut floors = BTreeMap::new();
        for d in m.decisions() {
            let width = m.domain(&d)?.len();
            let n_ctx = context_count(&m.parent_dims(&d)?);
            floors.insert(d, vec![vec![eps.clone(); width]; n_ctx]);
        }
        let p = Perturbation { floors };
        p.validate(m)?;
        Ok(p)
    }

    pub fn validate(&self, m: &GameModel) -> Result<()> {
        for (d, rows) in &self.floors {
            let width = m.domain(d)?.len();
            let n_ctx = context_count(&m.parent_dims(d)?);
            if rows.len() != n_ctx || rows.iter().any(|r| r.len() != width) {
                return Err(Error::InvalidModel(format!(
                    "perturbation shape for {d} does not match its contexts"
                )));
            }
            for row in rows {
                let mut sum = Q::zero();
                for e in row {
                    if *e <= Q::zero() || *e >= Q::one() {
                        return Err(Error::InvalidModel(format!(
                            "perturbation floor for {d} outside (0, 1)"
                        )));
                    }
                    sum += e.clone();
                }
                if sum > Q::one() {
                    return Err(Error::InvalidModel(format!(
                        "perturbation floors for {d} sum past 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

type FloatRules = BTreeMap<String, Vec<Vec<f64>>>;

fn float_state(profile: &PolicyProfile, pert: &Perturbation) -> FloatRules {
    let mut state = FloatRules::new();
    for (d, rule) in &profile.rules {
        let floors = &pert.floors[d];
        let rows = rule
            .table
            .iter()
            .enumerate()
            .map(|(ctx, row)| {
                let mut out: Vec<f64> = row
                    .iter()
                    .zip(&floors[ctx])
                    .map(|(p, f)| rational_to_f64(p).max(rational_to_f64(f)))
                    .collect();
                let sum: f64 = out.iter().sum();
                for x in out.iter_mut() {
                    *x /= sum;
                }
                out
            })
            .collect();
        state.insert(d.clone(), rows);
    }
    state
}

fn state_profile(m: &GameModel, state: &FloatRules) -> Result<PolicyProfile> {
    let mut rules = BTreeMap::new();
    for (d, rows) in state {
        let parents = m.graph.parents(d)?;
        let table: Vec<Vec<Q>> = rows
            .iter()
            .map(|row| {
                let mut qrow: Vec<Q> = row
                    .iter()
                    .map(|&x| Q::from_float(x).ok_or(Error::NumericNonConvergence))
                    .collect::<Result<_>>()?;
                let sum: Q = qrow.iter().cloned().sum();
                for x in qrow.iter_mut() {
                    *x /= sum.clone();
                }
                Ok(qrow)
            })
            .collect::<Result<_>>()?;
        rules.insert(d.clone(), Cpd { child: d.clone(), parents, table });
    }
    Ok(PolicyProfile { rules })
}

/// Damped best-response iteration in the floored policy space.
fn perturbed_fixed_point(
    m: &GameModel,
    start: &PolicyProfile,
    pert: &Perturbation,
) -> Result<FloatRules> {
    let decisions = m.decisions();
    let mut state = float_state(start, pert);
    for _ in 0..5000 {
        let profile = state_profile(m, &state)?;
        let mut delta = 0f64;
        for d in &decisions {
            let br = best_responses(m, &profile, d)?;
            let floors = &pert.floors[d];
            let rows = state.get_mut(d).unwrap();
            for (ctx, c) in br.per_context.iter().enumerate() {
                let width = rows[ctx].len();
                let target: Vec<f64> = if br.indifferent || !c.feasible {
                    rows[ctx].clone()
                } else {
                    let mut t: Vec<f64> = floors[ctx].iter().map(rational_to_f64).collect();
                    let slack = 1.0 - t.iter().sum::<f64>();
                    let vals: Vec<f64> = c.values.iter().map(rational_to_f64).collect();
                    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let arg: Vec<usize> =
                        (0..width).filter(|&a| vals[a] >= best - 1e-12).collect();
                    for &a in &arg {
                        t[a] += slack / arg.len() as f64;
                    }
                    t
                };
                for a in 0..width {
                    let new = 0.5 * rows[ctx][a] + 0.5 * target[a];
                    delta = delta.max((new - rows[ctx][a]).abs());
                    rows[ctx][a] = new;
                }
            }
        }
        if delta < 1e-12 {
            return Ok(state);
        }
    }
    Err(Error::NumericNonConvergence)
}

/// Distance between the unfloored fixed point and the candidate profile.
fn unfloored_distance(profile: &PolicyProfile, state: &FloatRules, eps: f64) -> f64 {
    let mut dist = 0f64;
    for (d, rows) in state {
        let table = &profile.rules[d].table;
        for (ctx, row) in rows.iter().enumerate() {
            let width = row.len() as f64;
            for (a, &x) in row.iter().enumerate() {
                let unfloored = (x - eps) / (1.0 - width * eps);
                dist = dist.max((unfloored - rational_to_f64(&table[ctx][a])).abs());
            }
        }
    }
    dist
}

/// Product-measure weight of each pure policy under a behavioural profile.
fn policy_weights(policies: &[PureAgentPolicy], profile: &PolicyProfile) -> Vec<Q> {
    policies
        .iter()
        .map(|policy| {
            let mut w = Q::one();
            for (d, rule) in policy {
                let table = &profile.rules[d].table;
                for (ctx, &a) in rule.iter().enumerate() {
                    w *= table[ctx][a].clone();
                }
            }
            w
        })
        .collect()
}

fn objective(rhs: &[Q], basis: &[usize], cost: &[Q]) -> Q {
    basis.iter().zip(rhs).map(|(&bi, v)| cost[bi].clone() * v.clone()).sum()
}

fn pivot(rows: &mut [Vec<Q>], rhs: &mut [Q], basis: &mut [usize], r: usize, j: usize) {
    let pv = rows[r][j].clone();
    for x in rows[r].iter_mut() {
        *x /= pv.clone();
    }
    rhs[r] /= pv;
    for rr in 0..rows.len() {
        if rr == r || rows[rr][j].is_zero() {
            continue;
        }
        let f = rows[rr][j].clone();
        let pivot_row = rows[r].clone();
        for (x, p) in rows[rr].iter_mut().zip(&pivot_row) {
            *x -= f.clone() * p.clone();
        }
        let sub = f * rhs[r].clone();
        rhs[rr] -= sub;
    }
    basis[r] = j;
}

/// Primal simplex with Bland's rule on an equality-form tableau.
fn run_simplex(rows: &mut [Vec<Q>], rhs: &mut [Q], basis: &mut [usize], cost: &[Q]) {
    let total = cost.len();
    loop {
        let mut entering = None;
        for j in 0..total {
            if basis.contains(&j) {
                continue;
            }
            let mut rc = cost[j].clone();
            for (r, &bi) in basis.iter().enumerate() {
                rc -= cost[bi].clone() * rows[r][j].clone();
            }
            if rc > Q::zero() {
                entering = Some(j);
                break;
            }
        }
        let Some(j) = entering else { return };
        let mut leave: Option<(usize, Q)> = None;
        for r in 0..rows.len() {
            if rows[r][j] > Q::zero() {
                let ratio = rhs[r].clone() / rows[r][j].clone();
                let better = match &leave {
                    None => true,
                    Some((lr, lratio)) => {
                        ratio < *lratio || (ratio == *lratio && basis[r] < basis[*lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, _)) = leave else { return };
        pivot(rows, rhs, basis, r, j);
    }
}

/// Maximize c.x subject to A x = b, x >= 0. Returns None when infeasible.
fn simplex_max(a: Vec<Vec<Q>>, b: Vec<Q>, c: Vec<Q>) -> Option<Q> {
    let m_rows = a.len();
    let n_cols = c.len();
    let total = n_cols + m_rows;
    let mut rows: Vec<Vec<Q>> = Vec::with_capacity(m_rows);
    let mut rhs: Vec<Q> = Vec::with_capacity(m_rows);
    for r in 0..m_rows {
        let (mut row, v) = if b[r] < Q::zero() {
            (a[r].iter().map(|x| -x.clone()).collect::<Vec<Q>>(), -b[r].clone())
        } else {
            (a[r].clone(), b[r].clone())
        };
        row.extend((0..m_rows).map(|k| if k == r { Q::one() } else { Q::zero() }));
        rows.push(row);
        rhs.push(v);
    }
    let mut basis: Vec<usize> = (n_cols..total).collect();
    let mut phase1 = vec![Q::zero(); total];
    for slot in phase1.iter_mut().skip(n_cols) {
        *slot = -Q::one();
    }
    run_simplex(&mut rows, &mut rhs, &mut basis, &phase1);
    if objective(&rhs, &basis, &phase1) < Q::zero() {
        return None;
    }
    for r in 0..m_rows {
        if basis[r] >= n_cols {
            if let Some(col) = (0..n_cols).find(|&cc| !rows[r][cc].is_zero()) {
                pivot(&mut rows, &mut rhs, &mut basis, r, col);
            }
        }
    }
    for row in rows.iter_mut() {
        for slot in row.iter_mut().skip(n_cols) {
            *slot = Q::zero();
        }
    }
    let mut phase2 = c;
    phase2.extend(vec![Q::zero(); m_rows]);
    run_simplex(&mut rows, &mut rhs, &mut basis, &phase2);
    Some(objective(&rhs, &basis, &phase2))
}

/// Does some mixture over the rows weakly dominate the value vector v?
/// `payoff[p][j]` is the row player's utility for pure policy p against
/// opponent column j.
fn is_weakly_dominated(payoff: &[Vec<Q>], v: &[Q]) -> bool {
    let np = payoff.len();
    let nj = v.len();
    let mut a = Vec::with_capacity(nj + 1);
    let mut b = Vec::with_capacity(nj + 1);
    for j in 0..nj {
        let mut row = vec![Q::zero(); np + nj];
        for p in 0..np {
            row[p] = payoff[p][j].clone();
        }
        row[np + j] = -Q::one();
        a.push(row);
        b.push(v[j].clone());
    }
    let mut row = vec![Q::zero(); np + nj];
    for slot in row.iter_mut().take(np) {
        *slot = Q::one();
    }
    a.push(row);
    b.push(Q::one());
    let mut c = vec![Q::zero(); np + nj];
    for slot in c.iter_mut().skip(np) {
        *slot = Q::one();
    }
    match simplex_max(a, b, c) {
        Some(opt) => opt > Q::zero(),
        None => false,
    }
}

pub fn thpe(m: &GameModel) -> Result<EquilibriumSet> {
    thpe_capped(m, DEFAULT_PROFILE_CAP)
}

/// Trembling-hand perfect equilibria. With at most two strategic agents
/// this is the exact screen: Nash equilibria in which no agent's policy
/// is weakly dominated. With more agents, candidates are re-solved in
/// uniformly floored perturbed games at eps of 1e-2, 1e-3, and 1e-4 and
/// kept when the unfloored fixed points land within 1e-6.
pub fn thpe_capped(m: &GameModel, cap: u128) -> Result<EquilibriumSet> {
    let split = strategic_split(m)?;
    if split.agents.len() <= 1 {
        // Nothing can tremble against a lone strategic agent: chance is
        // fixed and unreached contexts stay unreached.
        return behavioural_ne_capped(m, cap);
    }
    if split.agents.len() == 2 {
        let base = behavioural_ne_capped(m, cap)?;
        let nf = normal_form(&split.bound, &split.agents, cap)?;
        let (na, nb) = (nf.policies[0].len(), nf.policies[1].len());
        let mut kept = Vec::new();
        'candidate: for profile in &base.profiles {
            for side in 0..2 {
                let (rows, cols) = if side == 0 { (na, nb) } else { (nb, na) };
                let payoff: Vec<Vec<Q>> = (0..rows)
                    .map(|p| {
                        (0..cols)
                            .map(|j| {
                                let idx = if side == 0 { p * nb + j } else { j * nb + p };
                                nf.payoffs[side][idx].clone()
                            })
                            .collect()
                    })
                    .collect();
                let weights = policy_weights(&nf.policies[side], profile);
                let v: Vec<Q> = (0..cols)
                    .map(|j| {
                        weights
                            .iter()
                            .zip(&payoff)
                            .map(|(w, row)| w.clone() * row[j].clone())
                            .sum()
                    })
                    .collect();
                if is_weakly_dominated(&payoff, &v) {
                    continue 'candidate;
                }
            }
            kept.push(profile.clone());
        }
        let annotations = vec![Vec::new(); kept.len()];
        return Ok(EquilibriumSet {
            profiles: kept,
            annotations,
            mixed: Vec::new(),
            stats: base.stats,
            may_not_exist: false,
        });
    }

    // Numeric path: candidates come from the stagewise solver.
    let candidates = match spe_capped(m, cap) {
        Ok(es) => es.profiles,
        Err(Error::NoSpeFound) => pure_ne_capped(m, cap)?.profiles,
        Err(e) => return Err(e),
    };
    let mb = &split.bound;
    let eps_list = [
        crate::rational::q(1, 100),
        crate::rational::q(1, 1000),
        crate::rational::q(1, 10000),
    ];
    let mut builder = SetBuilder::new();
    for profile in candidates {
        let strategic_part = PolicyProfile {
            rules: profile
                .rules
                .iter()
                .filter(|(d, _)| split.decisions.contains(d))
                .map(|(d, r)| (d.clone(), r.clone()))
                .collect(),
        };
        let mut dist = f64::INFINITY;
        for eps in &eps_list {
            let pert = Perturbation::uniform(mb, eps)?;
            let state = perturbed_fixed_point(mb, &strategic_part, &pert)?;
            dist = unfloored_distance(&strategic_part, &state, rational_to_f64(eps));
        }
        if dist <= 1e-6 {
            builder.push(profile);
        }
    }
    Ok(builder.set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{
        absent_minded_pair, decl, forgetful_chain, job_market, pennies_chain, sym2, warehouse,
    };
    use crate::model::{GameModel, Level, VarKind, VariableDecl};
    use crate::rational::{q, qi, Value};

    fn pure_profile(m: &GameModel, rules: &[(&str, &[usize])]) -> PolicyProfile {
        let pure: BTreeMap<String, Vec<usize>> =
            rules.iter().map(|(d, r)| (d.to_string(), r.to_vec())).collect();
        PolicyProfile::from_pure(m, &pure).unwrap()
    }

    fn contains(set: &EquilibriumSet, profile: &PolicyProfile) -> bool {
        set.profiles.iter().any(|p| p == profile)
    }

    #[test]
    fn verify_and_enumerate_pure_nash() {
        let m = warehouse();
        let query_repair = pure_profile(&m, &[("D1", &[0]), ("D2", &[0, 0])]);
        let (ok, _) = verify_ne(&m, &query_repair, 1000).unwrap();
        assert!(ok);
        let skip_repair = pure_profile(&m, &[("D1", &[1]), ("D2", &[0, 0])]);
        let (ok, witness) = verify_ne(&m, &skip_repair, 1000).unwrap();
        assert!(!ok);
        assert_eq!(witness.unwrap().agent, "r2");

        let es = pure_ne(&m).unwrap();
        assert!(es.stats.flat_enumeration_used);
        let expected = [
            pure_profile(&m, &[("D1", &[0]), ("D2", &[0, 0])]),
            pure_profile(&m, &[("D1", &[0]), ("D2", &[0, 1])]),
            pure_profile(&m, &[("D1", &[1]), ("D2", &[0, 1])]),
        ];
        assert_eq!(es.profiles.len(), 3);
        for p in &expected {
            assert!(contains(&es, p));
        }
    }

    #[test]
    fn warehouse_family_annotations() {
        let m = warehouse();
        let es = behavioural_ne(&m).unwrap();
        let d1_family = FamilyAnnotation {
            decision: "D1".into(),
            context: 0,
            action: 1,
            other: 0,
            low: qi(0),
            high: qi(1),
        };
        let threat_family = FamilyAnnotation {
            decision: "D2".into(),
            context: 1,
            action: 1,
            other: 0,
            low: qi(0),
            high: qi(1),
        };
        // (q, p-np) sits on two segments: robot 1 may mix when r2 answers
        // nq with np, and r2's row at the unreached nq context is free
        // while r1 plays q.
        let anchored = pure_profile(&m, &[("D1", &[0]), ("D2", &[0, 1])]);
        let idx = es.profiles.iter().position(|p| *p == anchored).unwrap();
        let mut got = es.annotations[idx].clone();
        got.sort_by_key(|a| (a.decision.clone(), a.context));
        assert_eq!(got, vec![d1_family.clone(), threat_family.clone()]);
        // (q, pp) only carries the free off-path row.
        let threat = pure_profile(&m, &[("D1", &[0]), ("D2", &[0, 0])]);
        let idx = es.profiles.iter().position(|p| *p == threat).unwrap();
        assert_eq!(es.annotations[idx], vec![threat_family]);
        // (nq, p-np) only carries robot 1's mixing segment.
        let lazy = pure_profile(&m, &[("D1", &[1]), ("D2", &[0, 1])]);
        let idx = es.profiles.iter().position(|p| *p == lazy).unwrap();
        assert_eq!(es.annotations[idx], vec![d1_family]);
        for p in &es.profiles {
            assert!(verify_ne(&m, p, 1000).unwrap().0);
        }
    }

    #[test]
    fn warehouse_refinements() {
        let m = warehouse();
        let es = spe(&m).unwrap();
        assert!(!es.may_not_exist);
        assert!(!es.stats.flat_enumeration_used);
        assert_eq!(es.stats.per_stage, vec![4, 2]);
        let careful = pure_profile(&m, &[("D1", &[0]), ("D2", &[0, 1])]);
        let lazy = pure_profile(&m, &[("D1", &[1]), ("D2", &[0, 1])]);
        assert!(contains(&es, &careful));
        assert!(contains(&es, &lazy));
        assert!(!contains(&es, &pure_profile(&m, &[("D1", &[0]), ("D2", &[0, 0])])));
        for p in &es.profiles {
            assert!(verify_spe(&m, p, 1000).unwrap().0);
        }

        let th = thpe(&m).unwrap();
        assert!(contains(&th, &careful));
        assert!(!contains(&th, &lazy));
    }

    #[test]
    fn job_market_equilibrium_families() {
        let m = job_market(false);
        let es = behavioural_ne(&m).unwrap();
        for p in &es.profiles {
            assert!(verify_ne(&m, p, 1000).unwrap().0);
        }

        let f1_q0 = pure_profile(&m, &[("D1", &[1, 1]), ("D2", &[1, 0])]);
        let f1_q1 = pure_profile(&m, &[("D1", &[1, 1]), ("D2", &[0, 0])]);
        let f3_q0 = pure_profile(&m, &[("D1", &[0, 0]), ("D2", &[0, 1])]);
        let f3_edge = f3_q0.with_rule(
            "D2",
            Cpd {
                child: "D2".into(),
                parents: vec!["D1".into()],
                table: vec![vec![qi(1), qi(0)], vec![q(3, 5), q(2, 5)]],
            },
        );
        let f2 = PolicyProfile {
            rules: [
                (
                    "D1".to_string(),
                    Cpd {
                        child: "D1".into(),
                        parents: vec!["T".into()],
                        table: vec![vec![q(1, 3), q(2, 3)], vec![qi(0), qi(1)]],
                    },
                ),
                (
                    "D2".to_string(),
                    Cpd {
                        child: "D2".into(),
                        parents: vec!["D1".into()],
                        table: vec![vec![qi(1), qi(0)], vec![q(4, 5), q(1, 5)]],
                    },
                ),
            ]
            .into(),
        };
        for p in [&f1_q0, &f1_q1, &f3_q0, &f3_edge, &f2] {
            assert!(contains(&es, p), "missing representative");
        }

        let worker_eu: std::collections::BTreeSet<Q> = es
            .profiles
            .iter()
            .map(|p| profile_utilities(&m, p).unwrap().remove("w").unwrap())
            .collect();
        assert_eq!(worker_eu, [qi(5), qi(4), q(7, 2)].into_iter().collect());

        let idx = es.profiles.iter().position(|p| *p == f1_q0).unwrap();
        assert!(es.annotations[idx].contains(&FamilyAnnotation {
            decision: "D2".into(),
            context: 0,
            action: 1,
            other: 0,
            low: qi(0),
            high: qi(1),
        }));
        let idx = es.profiles.iter().position(|p| *p == f3_q0).unwrap();
        assert!(es.annotations[idx].contains(&FamilyAnnotation {
            decision: "D2".into(),
            context: 1,
            action: 1,
            other: 0,
            low: q(2, 5),
            high: qi(1),
        }));

        // Observing the type turns the game into a unique pure SPE.
        let mt = job_market(true);
        let es = spe(&mt).unwrap();
        assert_eq!(es.profiles.len(), 1);
        let d2_parents = mt.graph.parents("D2").unwrap();
        let t_pos = d2_parents.iter().position(|p| p == "T").unwrap();
        let dims = mt.parent_dims("D2").unwrap();
        let rule: Vec<usize> =
            (0..context_count(&dims)).map(|c| digits_of(&dims, c)[t_pos]).collect();
        let expected = pure_profile(&mt, &[("D1", &[1, 1]), ("D2", &rule)]);
        assert!(contains(&es, &expected));
    }

    #[test]
    fn mixed_without_behavioural_equivalent() {
        let m = absent_minded_pair();
        assert!(pure_ne(&m).unwrap().profiles.is_empty());
        let es = behavioural_ne(&m).unwrap();
        assert!(es.profiles.is_empty());
        assert_eq!(es.mixed.len(), 1);
        let finding = &es.mixed[0];
        assert_eq!(finding.behavioural, None);
        for mu in &finding.policies {
            for (_, w) in &mu.support {
                assert_eq!(*w, q(1, 2));
            }
        }
        // The witness joint is the correlated outcome (a, b) under a
        // uniform completion: the mixed policy doubles its product-form
        // probability.
        let (asg, mixed_p, behavioural_p) = finding.witness.as_ref().unwrap();
        assert_eq!(asg["A"], Value::sym("a"));
        assert_eq!(asg["B"], Value::sym("b"));
        assert_eq!(*mixed_p, q(1, 4));
        assert_eq!(*behavioural_p, q(1, 8));
    }

    #[test]
    fn no_spe_without_behavioural_stage_solution() {
        let m = forgetful_chain();
        assert!(matches!(spe(&m), Err(Error::NoSpeFound)));
    }

    #[test]
    fn stage_counts_grow_linearly() {
        let m = pennies_chain(2);
        let es = spe(&m).unwrap();
        assert_eq!(es.stats.per_stage, vec![4, 4, 2]);
        assert!(!es.stats.flat_enumeration_used);
        assert_eq!(es.profiles.len(), 1);
        let p = &es.profiles[0];
        for d in ["A1", "B1", "A2", "B2"] {
            assert_eq!(p.rules[d].table[0], vec![q(1, 2), q(1, 2)]);
        }
        assert_eq!(p.rules["D0"].table[0], vec![qi(1), qi(0)]);
    }

    #[test]
    fn rule_space_representatives_pin_unreached_contexts() {
        // A rule space couples a reached and an unreached context: rules
        // agreeing on the reached context tie exactly.
        let m = GameModel::build(
            vec!["1".into()],
            vec![
                decl("C", VarKind::Chance, sym2("c", "nc")),
                decl("D", VarKind::Decision { agent: "1".into() }, sym2("go", "stay")),
                decl("U", VarKind::Utility { agent: "1".into() }, vec![
                    Value::num(qi(0)),
                    Value::num(qi(1)),
                ]),
            ],
            vec![("C".into(), "D".into()), ("C".into(), "U".into()), ("D".into(), "U".into())],
            [
                (
                    "C".to_string(),
                    Cpd { child: "C".into(), parents: vec![], table: vec![vec![qi(1), qi(0)]] },
                ),
                (
                    "U".to_string(),
                    Cpd::deterministic("U", vec!["C".into(), "D".into()], vec![1, 0, 0, 0], 2),
                ),
            ]
            .into(),
            Level::Causal,
            [("D".to_string(), vec![vec![0, 0], vec![1, 1], vec![0, 1]])].into(),
        )
        .unwrap();
        let es = behavioural_ne(&m).unwrap();
        assert_eq!(es.profiles.len(), 2);
        for rule in [vec![0, 0], vec![0, 1]] {
            assert!(contains(&es, &pure_profile(&m, &[("D", &rule)])));
        }
    }

    #[test]
    fn dominated_mixtures_found_exactly() {
        let two = |a: i64, b: i64| vec![qi(a), qi(b)];
        assert!(is_weakly_dominated(&[two(1, 1), two(0, 0)], &two(0, 0)));
        assert!(!is_weakly_dominated(&[two(1, 1), two(0, 0)], &two(1, 1)));
        // Only a strict mixture dominates (9/10, 9/10).
        let rows = vec![two(2, 0), two(0, 2), vec![q(9, 10), q(9, 10)]];
        assert!(is_weakly_dominated(&rows, &[q(9, 10), q(9, 10)]));
        // The midpoint itself is on the Pareto frontier.
        let rows = vec![two(2, 0), two(0, 2), two(1, 1)];
        assert!(!is_weakly_dominated(&rows, &two(1, 1)));
    }

    #[test]
    fn numeric_trembles_keep_interior_profile() {
        // Three strategic agents force the perturbed-game path: a pennies
        // pair plus a bystander with a strictly dominant action.
        let m = GameModel::build(
            vec!["1".into(), "2".into(), "3".into()],
            vec![
                decl("A", VarKind::Decision { agent: "1".into() }, sym2("h", "t")),
                decl("B", VarKind::Decision { agent: "2".into() }, sym2("h", "t")),
                decl("D", VarKind::Decision { agent: "3".into() }, sym2("on", "off")),
                decl("U1", VarKind::Utility { agent: "1".into() }, nums2(-1, 1)),
                decl("U2", VarKind::Utility { agent: "2".into() }, nums2(-1, 1)),
                decl("U3", VarKind::Utility { agent: "3".into() }, nums2(0, 1)),
            ],
            vec![
                ("A".into(), "U1".into()),
                ("B".into(), "U1".into()),
                ("A".into(), "U2".into()),
                ("B".into(), "U2".into()),
                ("D".into(), "U3".into()),
            ],
            [
                (
                    "U1".to_string(),
                    Cpd::deterministic("U1", vec!["A".into(), "B".into()], vec![1, 0, 0, 1], 2),
                ),
                (
                    "U2".to_string(),
                    Cpd::deterministic("U2", vec!["A".into(), "B".into()], vec![0, 1, 1, 0], 2),
                ),
                ("U3".to_string(), Cpd::deterministic("U3", vec!["D".into()], vec![1, 0], 2)),
            ]
            .into(),
            Level::Causal,
            BTreeMap::new(),
        )
        .unwrap();
        let th = thpe(&m).unwrap();
        assert_eq!(th.profiles.len(), 1);
        let p = &th.profiles[0];
        assert_eq!(p.rules["A"].table[0], vec![q(1, 2), q(1, 2)]);
        assert_eq!(p.rules["B"].table[0], vec![q(1, 2), q(1, 2)]);
        assert_eq!(p.rules["D"].table[0], vec![qi(1), qi(0)]);
    }

    fn nums2(a: i64, b: i64) -> Vec<Value> {
        vec![Value::num(qi(a)), Value::num(qi(b))]
    }

    #[test]
    fn positive_rescaling_preserves_equilibria() {
        let m = warehouse();
        let mut decls = Vec::new();
        for v in m.graph.nodes() {
            let domain = if v == "U2" {
                m.domain(v)
                    .unwrap()
                    .iter()
                    .map(|val| match val {
                        Value::Num(x) => Value::num(x.clone() * qi(3) + qi(7)),
                        other => other.clone(),
                    })
                    .collect()
            } else {
                m.domain(v).unwrap().to_vec()
            };
            decls.push(VariableDecl { name: v.clone(), kind: m.kind(v).unwrap().clone(), domain });
        }
        let scaled = GameModel::build(
            m.agents.clone(),
            decls,
            m.graph.edges(),
            m.cpds.clone(),
            Level::Causal,
            m.allowed_rules.clone(),
        )
        .unwrap();
        let a = spe(&m).unwrap();
        let b = spe(&scaled).unwrap();
        assert_eq!(a.profiles, b.profiles);
        assert_eq!(thpe(&m).unwrap().profiles, thpe(&scaled).unwrap().profiles);
    }
}
