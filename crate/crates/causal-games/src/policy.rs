//! Decision rules and policies: pure, behavioural, and mixed, plus
//! best-response computation and the mixed-to-behavioural construction.

use crate::inference::JointContext;
use crate::model::{context_count, digits_of, Assignment, Cpd, GameModel, Level, VarKind};
use crate::rational::{rational_from_json, show_rational, Q};
use crate::{Error, Result};
use num::{One, Zero};
use std::collections::{BTreeMap, BTreeSet};

pub const DEFAULT_PROFILE_CAP: u128 = 1_000_000;

/// One action index per decision context.
pub type PureRule = Vec<usize>;

/// A pure policy for one agent: decision name to pure rule.
pub type PureAgentPolicy = BTreeMap<String, PureRule>;

/// Behavioural policy profile: one rule CPD per decision of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyProfile {
    pub rules: BTreeMap<String, Cpd>,
}

impl PolicyProfile {
    pub fn uniform(m: &GameModel) -> Result<PolicyProfile> {
        let mut rules = BTreeMap::new();
        for d in m.decisions() {
            rules.insert(d.clone(), uniform_rule(m, &d)?);
        }
        Ok(PolicyProfile { rules })
    }

    pub fn from_pure(m: &GameModel, pure: &BTreeMap<String, PureRule>) -> Result<PolicyProfile> {
        let mut rules = BTreeMap::new();
        for d in m.decisions() {
            let rule = pure
                .get(&d)
                .ok_or_else(|| Error::InvalidModel(format!("pure policy misses decision {d}")))?;
            rules.insert(d.clone(), rule_cpd(m, &d, rule)?);
        }
        Ok(PolicyProfile { rules })
    }

    pub fn with_rule(&self, d: &str, rule: Cpd) -> PolicyProfile {
        let mut rules = self.rules.clone();
        rules.insert(d.to_string(), rule);
        PolicyProfile { rules }
    }

    pub fn is_pure(&self) -> bool {
        self.rules.values().all(|r| r.is_deterministic())
    }

    /// The pure rule tables, if every rule is deterministic.
    pub fn pure_rules(&self) -> Option<BTreeMap<String, PureRule>> {
        let mut out = BTreeMap::new();
        for (d, cpd) in &self.rules {
            let mut rule = Vec::with_capacity(cpd.table.len());
            for r in 0..cpd.table.len() {
                rule.push(cpd.forced_value(r)?);
            }
            out.insert(d.clone(), rule);
        }
        Some(out)
    }

    pub fn context<'a>(&self, m: &'a GameModel) -> Result<JointContext<'a>> {
        JointContext::new(m, self.rules.clone())
    }

    pub fn to_json(&self, m: &GameModel) -> Result<serde_json::Value> {
        let mut out = serde_json::Map::new();
        for (d, cpd) in &self.rules {
            let dom = m.domain(d)?;
            let mut rows = serde_json::Map::new();
            for (r, row) in cpd.table.iter().enumerate() {
                let mut cells = serde_json::Map::new();
                for (i, p) in row.iter().enumerate() {
                    if !p.is_zero() {
                        cells.insert(dom[i].to_string(), show_rational(p).into());
                    }
                }
                rows.insert(m.context_key(d, r)?, serde_json::Value::Object(cells));
            }
            out.insert(d.clone(), serde_json::Value::Object(rows));
        }
        Ok(serde_json::Value::Object(out))
    }

    pub fn from_json(m: &GameModel, v: &serde_json::Value) -> Result<PolicyProfile> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidModel("policy file must be an object".into()))?;
        let mut rules = BTreeMap::new();
        for d in m.decisions() {
            let rows_v = obj
                .get(&d)
                .and_then(|x| x.as_object())
                .ok_or_else(|| Error::InvalidModel(format!("policy misses decision {d}")))?;
            let n_ctx = context_count(&m.parent_dims(&d)?);
            let width = m.domain(&d)?.len();
            let mut table = vec![None; n_ctx];
            for (key, cells) in rows_v {
                let ctx = m.parse_context_key(&d, key)?;
                let cells = cells
                    .as_object()
                    .ok_or_else(|| Error::InvalidModel(format!("bad policy row for {d}")))?;
                let mut row = vec![Q::zero(); width];
                for (val, p) in cells {
                    let vi = m.val_idx(&d, &crate::rational::Value::parse(val))?;
                    row[vi] = rational_from_json(p)?;
                }
                let sum: Q = row.iter().fold(Q::zero(), |a, b| a + b);
                if !sum.is_one() {
                    return Err(Error::RowNotNormalized(d.clone(), key.clone()));
                }
                table[ctx] = Some(row);
            }
            let table: Vec<Vec<Q>> = table
                .into_iter()
                .enumerate()
                .map(|(r, row)| {
                    row.ok_or_else(|| {
                        Error::InvalidModel(format!(
                            "policy for {d} misses context {}",
                            m.context_key(&d, r).unwrap_or_default()
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            rules.insert(
                d.clone(),
                Cpd { child: d.clone(), parents: m.graph.parents(&d)?, table },
            );
        }
        // Unknown decision names are rejected.
        for k in obj.keys() {
            if !rules.contains_key(k) {
                return Err(Error::InvalidModel(format!("policy names unknown decision {k}")));
            }
        }
        Ok(PolicyProfile { rules })
    }
}

pub fn uniform_rule(m: &GameModel, d: &str) -> Result<Cpd> {
    let n_ctx = context_count(&m.parent_dims(d)?);
    let width = m.domain(d)?.len();
    let p = Q::one() / Q::from_integer(width.into());
    Ok(Cpd {
        child: d.to_string(),
        parents: m.graph.parents(d)?,
        table: vec![vec![p; width]; n_ctx],
    })
}

/// A profile giving positive probability to everything some policy could
/// play: uniform over actions, or the average of the allowed rules where the
/// rule space is restricted.
pub fn fully_mixed_profile(m: &GameModel) -> Result<PolicyProfile> {
    let mut rules = BTreeMap::new();
    for d in m.decisions() {
        let rule = match m.allowed_rules.get(&d) {
            None => uniform_rule(m, &d)?,
            Some(rs) => {
                let n_ctx = context_count(&m.parent_dims(&d)?);
                let width = m.domain(&d)?.len();
                let share = Q::one() / Q::from_integer(rs.len().into());
                let mut table = vec![vec![Q::zero(); width]; n_ctx];
                for rule in rs {
                    for (ctx, &a) in rule.iter().enumerate() {
                        table[ctx][a] += share.clone();
                    }
                }
                Cpd { child: d.clone(), parents: m.graph.parents(&d)?, table }
            }
        };
        rules.insert(d, rule);
    }
    Ok(PolicyProfile { rules })
}

/// Rebuild with the listed decisions converted into chance variables driven
/// by the given rules. Their agents keep any other variables they own.
pub fn bind_decisions(
    m: &GameModel,
    bound: &BTreeMap<String, Cpd>,
) -> Result<GameModel> {
    let mut decls = m.decls.clone();
    let mut cpds = m.cpds.clone();
    let mut allowed = m.allowed_rules.clone();
    for (d, rule) in bound {
        let decl = decls
            .iter_mut()
            .find(|x| x.name == *d)
            .ok_or_else(|| Error::UnknownNode(d.clone()))?;
        if !matches!(decl.kind, VarKind::Decision { .. }) {
            return Err(Error::InvalidModel(format!("{d} is not a decision")));
        }
        decl.kind = VarKind::Chance;
        cpds.insert(d.clone(), rule.clone());
        allowed.remove(d);
    }
    // Bound rules may be stochastic, so the result is causal-level even when
    // the source was structural; solver-internal use only cares about the
    // induced distribution.
    GameModel::build(m.agents.clone(), decls, m.graph.edges(), cpds, Level::Causal, allowed)
}

pub fn rule_cpd(m: &GameModel, d: &str, rule: &PureRule) -> Result<Cpd> {
    let n_ctx = context_count(&m.parent_dims(d)?);
    let width = m.domain(d)?.len();
    if rule.len() != n_ctx || rule.iter().any(|&a| a >= width) {
        return Err(Error::InvalidModel(format!("malformed rule for {d}")));
    }
    Ok(Cpd::deterministic(d, m.graph.parents(d)?, rule.clone(), width))
}

/// All pure rules available at d: the explicit allowed list when the model
/// restricts it, otherwise every function from contexts to actions.
pub fn pure_rules_for(m: &GameModel, d: &str) -> Result<Vec<PureRule>> {
    if let Some(rules) = m.allowed_rules.get(d) {
        return Ok(rules.clone());
    }
    let n_ctx = context_count(&m.parent_dims(d)?);
    let width = m.domain(d)?.len();
    let total = (width as u128).checked_pow(n_ctx as u32).unwrap_or(u128::MAX);
    if total > DEFAULT_PROFILE_CAP {
        return Err(Error::ExplosionGuard(total, DEFAULT_PROFILE_CAP));
    }
    let dims = vec![width; n_ctx];
    Ok((0..total as usize).map(|k| digits_of(&dims, k)).collect())
}

pub fn count_pure_policies(m: &GameModel, agent: &str) -> Result<u128> {
    let mut total: u128 = 1;
    for d in m.decisions_of(agent) {
        let n = pure_rules_for(m, &d)?.len() as u128;
        total = total.saturating_mul(n);
    }
    Ok(total)
}

/// Every pure policy of the agent, in deterministic odometer order over its
/// decisions (declaration order, later decisions fastest).
pub fn enumerate_pure_policies(
    m: &GameModel,
    agent: &str,
    cap: u128,
) -> Result<Vec<PureAgentPolicy>> {
    let decisions = m.decisions_of(agent);
    let per: Vec<Vec<PureRule>> = decisions
        .iter()
        .map(|d| pure_rules_for(m, d))
        .collect::<Result<_>>()?;
    let total = per.iter().map(|r| r.len() as u128).product::<u128>();
    if total > cap {
        return Err(Error::ExplosionGuard(total, cap));
    }
    let dims: Vec<usize> = per.iter().map(|r| r.len()).collect();
    let mut out = Vec::with_capacity(total as usize);
    for k in 0..total as usize {
        let picks = digits_of(&dims, k);
        let mut pol = PureAgentPolicy::new();
        for (i, d) in decisions.iter().enumerate() {
            pol.insert(d.clone(), per[i][picks[i]].clone());
        }
        out.push(pol);
    }
    Ok(out)
}

/// Every pure profile over all decisions, odometer order (declaration order,
/// later decisions fastest).
pub fn enumerate_pure_profiles(m: &GameModel, cap: u128) -> Result<Vec<PolicyProfile>> {
    let decisions = m.decisions();
    let per: Vec<Vec<PureRule>> = decisions
        .iter()
        .map(|d| pure_rules_for(m, d))
        .collect::<Result<_>>()?;
    let total = per.iter().map(|r| r.len() as u128).product::<u128>();
    if total > cap {
        return Err(Error::ExplosionGuard(total, cap));
    }
    let dims: Vec<usize> = per.iter().map(|r| r.len()).collect();
    let mut out = Vec::with_capacity(total as usize);
    for k in 0..total as usize {
        let picks = digits_of(&dims, k);
        let mut rules = BTreeMap::new();
        for (i, d) in decisions.iter().enumerate() {
            rules.insert(d.clone(), rule_cpd(m, d, &per[i][picks[i]])?);
        }
        out.push(PolicyProfile { rules });
    }
    Ok(out)
}

/// Per-context best-response analysis for one decision against a fixed
/// profile for everything else.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub decision: String,
    /// For each decision context: feasibility, the optimal action set, and
    /// the expected downstream utility of each action (empty if infeasible).
    pub per_context: Vec<ContextResponse>,
    /// Rule-level argmax when the decision carries an allowed-rules list
    /// (contextwise decomposition does not apply there).
    pub rule_level: Option<Vec<PureRule>>,
    /// True when the agent's downstream utility never depends on the action.
    pub indifferent: bool,
}

#[derive(Debug, Clone)]
pub struct ContextResponse {
    pub context: usize,
    pub feasible: bool,
    pub optimal: Vec<usize>,
    pub values: Vec<Q>,
}

impl BestResponse {
    /// The full set of optimal pure rules (product of per-context optimal
    /// sets, every action at infeasible contexts), capped.
    pub fn optimal_rules(&self, width: usize, cap: u128) -> Result<Vec<PureRule>> {
        if let Some(rules) = &self.rule_level {
            return Ok(rules.clone());
        }
        let sets: Vec<Vec<usize>> = self
            .per_context
            .iter()
            .map(|c| if c.feasible { c.optimal.clone() } else { (0..width).collect() })
            .collect();
        let total = sets.iter().map(|s| s.len() as u128).product::<u128>();
        if total > cap {
            return Err(Error::ExplosionGuard(total, cap));
        }
        let dims: Vec<usize> = sets.iter().map(|s| s.len()).collect();
        Ok((0..total as usize)
            .map(|k| {
                let picks = digits_of(&dims, k);
                picks.iter().zip(&sets).map(|(&p, s)| s[p]).collect()
            })
            .collect())
    }

    pub fn contains_rule(&self, rule: &PureRule) -> bool {
        if let Some(rules) = &self.rule_level {
            return rules.contains(rule);
        }
        self.per_context
            .iter()
            .all(|c| !c.feasible || c.optimal.contains(&rule[c.context]))
    }
}

/// Utilities of the deciding agent that are descendants of d.
pub fn downstream_utilities(m: &GameModel, d: &str) -> Result<Vec<String>> {
    let agent = m
        .agent_of(d)
        .ok_or_else(|| Error::InvalidModel(format!("{d} is not a decision")))?
        .to_string();
    let desc = m.graph.descendants(d)?;
    Ok(m.utilities_of(&agent).into_iter().filter(|u| desc.contains(u)).collect())
}

/// Expected downstream utility for the agent of `d` when `d` plays `action`
/// in context `ctx`, everything else fixed by `profile`.
fn action_value(
    m: &GameModel,
    profile: &PolicyProfile,
    d: &str,
    ctx: usize,
    action: usize,
    utilities: &[String],
) -> Result<Q> {
    let n_ctx = context_count(&m.parent_dims(d)?);
    let constant = rule_cpd(m, d, &vec![action; n_ctx])?;
    let bound = profile.with_rule(d, constant);
    let jc = bound.context(m)?;
    let parents = m.graph.parents(d)?;
    let dims = m.parent_dims(d)?;
    let digits = digits_of(&dims, ctx);
    let mut given = Assignment::new();
    for (p, &k) in parents.iter().zip(&digits) {
        given.insert(p.clone(), m.domain(p)?[k].clone());
    }
    let mut acc = Q::zero();
    for u in utilities {
        acc += jc.expected_value(u, &given)?;
    }
    Ok(acc)
}

/// Pr(pa_D = ctx) under the profile; the rule at d itself cannot matter.
pub fn context_probability(
    m: &GameModel,
    profile: &PolicyProfile,
    d: &str,
    ctx: usize,
) -> Result<Q> {
    let parents = m.graph.parents(d)?;
    if parents.is_empty() {
        return Ok(Q::one());
    }
    let dims = m.parent_dims(d)?;
    let digits = digits_of(&dims, ctx);
    let mut event = Assignment::new();
    for (p, &k) in parents.iter().zip(&digits) {
        event.insert(p.clone(), m.domain(p)?[k].clone());
    }
    let jc = profile.context(m)?;
    jc.prob_of(&event)
}

pub fn best_responses(m: &GameModel, profile: &PolicyProfile, d: &str) -> Result<BestResponse> {
    let utilities = downstream_utilities(m, d)?;
    let width = m.domain(d)?.len();
    let n_ctx = context_count(&m.parent_dims(d)?);
    if utilities.is_empty() {
        let per_context = (0..n_ctx)
            .map(|context| ContextResponse {
                context,
                feasible: true,
                optimal: (0..width).collect(),
                values: vec![Q::zero(); width],
            })
            .collect();
        let rule_level = m.allowed_rules.get(d).cloned();
        return Ok(BestResponse { decision: d.to_string(), per_context, rule_level, indifferent: true });
    }
    let mut per_context = Vec::with_capacity(n_ctx);
    for ctx in 0..n_ctx {
        let feas = !context_probability(m, profile, d, ctx)?.is_zero();
        if !feas {
            per_context.push(ContextResponse {
                context: ctx,
                feasible: false,
                optimal: (0..width).collect(),
                values: vec![],
            });
            continue;
        }
        let values: Vec<Q> = (0..width)
            .map(|a| action_value(m, profile, d, ctx, a, &utilities))
            .collect::<Result<_>>()?;
        let best = values.iter().max().unwrap().clone();
        let optimal: Vec<usize> = (0..width).filter(|&a| values[a] == best).collect();
        per_context.push(ContextResponse { context: ctx, feasible: true, optimal, values });
    }
    let indifferent = per_context
        .iter()
        .all(|c| !c.feasible || c.optimal.len() == width);
    let rule_level = match m.allowed_rules.get(d) {
        None => None,
        Some(rules) => {
            // Rule EU = sum over feasible contexts of Pr(pa) * action value.
            let mut scored: Vec<(Q, &PureRule)> = Vec::new();
            for rule in rules {
                let mut eu = Q::zero();
                for c in &per_context {
                    if !c.feasible {
                        continue;
                    }
                    let w = context_probability(m, profile, d, c.context)?;
                    eu += w * c.values.get(rule[c.context]).cloned().unwrap_or_else(Q::zero);
                }
                scored.push((eu, rule));
            }
            let best = scored.iter().map(|(v, _)| v.clone()).max().unwrap();
            Some(
                scored
                    .into_iter()
                    .filter(|(v, _)| *v == best)
                    .map(|(_, r)| r.clone())
                    .collect(),
            )
        }
    };
    Ok(BestResponse { decision: d.to_string(), per_context, rule_level, indifferent })
}

/// Perfect recall for one agent: the agent's decisions admit an ordering
/// where each later decision observes the earlier one's family.
pub fn has_perfect_recall(m: &GameModel, agent: &str) -> Result<bool> {
    let ds = m.decisions_of(agent);
    let mut remaining: Vec<String> = ds.clone();
    let mut ordered: Vec<String> = Vec::new();
    while !remaining.is_empty() {
        let mut picked = None;
        'cand: for (i, cand) in remaining.iter().enumerate() {
            for other in remaining.iter().filter(|o| *o != cand) {
                // cand must be orderable before other: Fa_cand ⊆ Pa_other.
                let fa: BTreeSet<String> = m.graph.family(cand)?.into_iter().collect();
                let pa: BTreeSet<String> = m.graph.parents(other)?.into_iter().collect();
                if !fa.is_subset(&pa) {
                    continue 'cand;
                }
            }
            picked = Some(i);
            break;
        }
        match picked {
            Some(i) => ordered.push(remaining.remove(i)),
            None => return Ok(false),
        }
    }
    Ok(true)
}

#[derive(Debug, Clone)]
pub enum BehaviouralEquivalent {
    Equivalent(BTreeMap<String, Cpd>),
    NoEquivalent { witness: Assignment, mixed: Q, behavioural: Q },
}

#[derive(Debug, Clone)]
pub struct MixedPolicy {
    pub agent: String,
    pub support: Vec<(PureAgentPolicy, Q)>,
}

impl MixedPolicy {
    pub fn validate(&self, m: &GameModel) -> Result<()> {
        if self.support.is_empty() {
            return Err(Error::InvalidModel("mixed policy has empty support".into()));
        }
        let decisions = m.decisions_of(&self.agent);
        let mut total = Q::zero();
        for (pol, p) in &self.support {
            if p < &Q::zero() {
                return Err(Error::InvalidModel("negative mixed weight".into()));
            }
            total += p.clone();
            for d in &decisions {
                let rule = pol
                    .get(d)
                    .ok_or_else(|| Error::InvalidModel(format!("mixed support misses {d}")))?;
                rule_cpd(m, d, rule)?;
            }
        }
        if !total.is_one() {
            return Err(Error::InvalidModel("mixed weights do not sum to 1".into()));
        }
        Ok(())
    }
}

/// Lemma-style construction: behavioural probabilities from the support
/// weights, each scaled by how likely that pure policy is to reach the
/// decision context (other agents fully mixing). With perfect recall the
/// construction is exact; otherwise the induced joints are compared
/// (against a uniform completion for the other agents, which decides
/// equality against every completion) and a witness is returned on failure.
pub fn behavioural_from_mixed(m: &GameModel, mu: &MixedPolicy) -> Result<BehaviouralEquivalent> {
    mu.validate(m)?;
    let decisions = m.decisions_of(&mu.agent);
    let uniform = PolicyProfile::uniform(m)?;
    let mut rules: BTreeMap<String, Cpd> = BTreeMap::new();
    for d in &decisions {
        let n_ctx = context_count(&m.parent_dims(d)?);
        let width = m.domain(d)?.len();
        let mut table = Vec::with_capacity(n_ctx);
        for ctx in 0..n_ctx {
            let mut total = Q::zero();
            let mut per_action = vec![Q::zero(); width];
            for (pol, weight) in &mu.support {
                if weight.is_zero() {
                    continue;
                }
                // Scale by the probability this pure policy reaches the
                // context, other agents fully mixing.
                let mut bound = uniform.clone();
                for (bd, rule) in pol {
                    bound = bound.with_rule(bd, rule_cpd(m, bd, rule)?);
                }
                let w = weight.clone() * context_probability(m, &bound, d, ctx)?;
                if w.is_zero() {
                    continue;
                }
                total += w.clone();
                per_action[pol[d][ctx]] += w;
            }
            if total.is_zero() {
                let p = Q::one() / Q::from_integer(width.into());
                table.push(vec![p; width]);
            } else {
                table.push(per_action.into_iter().map(|w| w / total.clone()).collect());
            }
        }
        rules.insert(
            d.clone(),
            Cpd { child: d.clone(), parents: m.graph.parents(d)?, table },
        );
    }
    if has_perfect_recall(m, &mu.agent)? {
        return Ok(BehaviouralEquivalent::Equivalent(rules));
    }
    // Verify: full-joint equality under a uniform completion.
    let mut behavioural = uniform.clone();
    for (d, r) in &rules {
        behavioural = behavioural.with_rule(d, r.clone());
    }
    let b_jc = behavioural.context(m)?;
    let b_support: BTreeMap<String, Q> = b_jc
        .support()?
        .into_iter()
        .map(|(a, p)| (fmt_key(&a), p))
        .collect();
    let mut mixed_support: BTreeMap<String, (Assignment, Q)> = BTreeMap::new();
    for (pol, weight) in &mu.support {
        if weight.is_zero() {
            continue;
        }
        let mut bound = uniform.clone();
        for (bd, rule) in pol {
            bound = bound.with_rule(bd, rule_cpd(m, bd, rule)?);
        }
        for (a, p) in bound.context(m)?.support()? {
            let e = mixed_support.entry(fmt_key(&a)).or_insert_with(|| (a, Q::zero()));
            e.1 += weight.clone() * p;
        }
    }
    for (key, (asg, mp)) in &mixed_support {
        let bp = b_support.get(key).cloned().unwrap_or_else(Q::zero);
        if &bp != mp {
            return Ok(BehaviouralEquivalent::NoEquivalent {
                witness: asg.clone(),
                mixed: mp.clone(),
                behavioural: bp,
            });
        }
    }
    for (key, bp) in &b_support {
        if !mixed_support.contains_key(key) {
            let asg = b_jc
                .support()?
                .into_iter()
                .find(|(a, _)| &fmt_key(a) == key)
                .map(|(a, _)| a)
                .unwrap_or_default();
            return Ok(BehaviouralEquivalent::NoEquivalent {
                witness: asg,
                mixed: Q::zero(),
                behavioural: bp.clone(),
            });
        }
    }
    Ok(BehaviouralEquivalent::Equivalent(rules))
}

fn fmt_key(a: &Assignment) -> String {
    a.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

/// Expected utility of each agent under a profile.
pub fn profile_utilities(m: &GameModel, profile: &PolicyProfile) -> Result<BTreeMap<String, Q>> {
    let jc = profile.context(m)?;
    let mut out = BTreeMap::new();
    for a in &m.agents {
        out.insert(a.clone(), jc.expected_utility(a, &Assignment::new())?);
    }
    Ok(out)
}
