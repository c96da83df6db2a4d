//! Counterfactual queries over structural causal games.
//!
//! Every stochastic rule row gets one exogenous cell distributed like that
//! row; the rule itself becomes a deterministic selector over its cells.
//! A counterfactual is then evaluated on a twin network: both worlds share
//! the model's exogenous variables and the cells of every rule that is the
//! same in both worlds, so conditioning on the actual world moves posterior
//! mass in the counterfactual one. Rules that differ between the worlds keep
//! their own randomness, and stochastic interventions on the counterfactual
//! side draw from fresh `eps_star` cells.
//!
//! Pre-policy changes re-solve the modified game; which rules must then
//! agree across the worlds is set by the chosen principle.

use std::collections::{BTreeMap, BTreeSet};

use num::{One, Zero};
use serde_json::json;

use crate::equilibrium::{rule_is_best_response, rule_is_subgame_perfect};
use crate::inference::{intervene, JointContext, ObjectIntervention};
use crate::mechanism::{
    best_response_relations, decision_relevance, mech_name, mechanise, rational_outcomes,
    rule_node, subgame_perfect_relations, EdgeMode, PolicySpace, Reachability,
    RationalityRelation,
};
use crate::model::{
    context_count, digits_of, index_of, Assignment, Cpd, GameModel, Level, VarKind, VariableDecl,
};
use crate::policy::{bind_decisions, fully_mixed_profile, PolicyProfile};
use crate::query::{
    apply_ban, apply_pre, filter_consistent, resolve_outcomes, set_parameter, BanStyle, Evidence,
    Intervention, MechanismChange, OutcomeSpec, Target,
};
use crate::rational::{show_rational, Q};
use crate::{Error, Result};

const CF_SUFFIX: &str = "__cf";
const CELL_CAP: u128 = 1 << 22;

fn suffixed(v: &str) -> String {
    format!("{v}{CF_SUFFIX}")
}

/// How much of the actual policy profile survives a pre-policy intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Principle {
    /// Nothing is carried over; the counterfactual game is re-solved freely.
    Simplicity,
    /// Rules provably undisturbed by the intervention are carried over.
    ClosestPossibleWorld,
}

/// A counterfactual question: evidence is collected in the actual world,
/// interventions land in the counterfactual one, and the target is read off
/// the counterfactual world.
#[derive(Debug, Clone)]
pub struct CfQuery {
    pub target: Target,
    pub evidence: Evidence,
    pub pre: Option<Intervention>,
    pub post: Option<Intervention>,
    pub principle: Principle,
    /// Post-policy only: drop actual outcomes whose rules stop being rational
    /// once the object intervention is applied.
    pub world_rationality: bool,
}

impl CfQuery {
    pub fn new(target: Target) -> CfQuery {
        CfQuery {
            target,
            evidence: Evidence::default(),
            pre: None,
            post: None,
            principle: Principle::Simplicity,
            world_rationality: false,
        }
    }
}

/// Counterfactual answer: one value per surviving world pair. The empty set
/// carries a diagnostic saying which side vanished.
#[derive(Debug, Clone)]
pub struct CfAnswer {
    pub values: Vec<Q>,
    pub trace: Vec<(PolicyProfile, PolicyProfile, Q)>,
    pub invariant: BTreeSet<String>,
    pub diagnostic: Option<String>,
}

impl CfAnswer {
    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    pub fn to_json(&self, m: &GameModel) -> Result<serde_json::Value> {
        let values: Vec<String> = self.values.iter().map(show_rational).collect();
        let mut rows = Vec::with_capacity(self.trace.len());
        for (actual, cf, v) in &self.trace {
            let mut cfr = serde_json::Map::new();
            for (d, c) in &cf.rules {
                cfr.insert(d.clone(), rule_json(m, d, c)?);
            }
            rows.push(json!({
                "actual": actual.to_json(m)?,
                "counterfactual": serde_json::Value::Object(cfr),
                "value": show_rational(v),
            }));
        }
        Ok(json!({
            "values": values,
            "invariantRules": self.invariant.iter().cloned().collect::<Vec<_>>(),
            "perOutcomeTrace": rows,
            "diagnostic": self.diagnostic,
        }))
    }
}

/// Per-context rule serialization when the rule still fits the base model,
/// raw rows otherwise (a pre-bound or rewired rule need not fit).
fn rule_json(m: &GameModel, d: &str, cpd: &Cpd) -> Result<serde_json::Value> {
    let fits = match m.decl(d) {
        Ok(decl) => {
            m.graph.parents(d)? == cpd.parents
                && cpd.table.len() == context_count(&m.parent_dims(d)?)
                && cpd.table.iter().all(|r| r.len() == decl.domain.len())
        }
        Err(_) => false,
    };
    if fits {
        let single = PolicyProfile { rules: [(d.to_string(), cpd.clone())].into() };
        return Ok(single.to_json(m)?[d].clone());
    }
    Ok(json!({
        "parents": cpd.parents,
        "rows": cpd
            .table
            .iter()
            .map(|r| r.iter().map(show_rational).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    }))
}

/// Cells and selector for one conditional table: each stochastic row becomes
/// an exogenous cell distributed like the row, and the table becomes a
/// deterministic selector reading the cell of its context. Tables without
/// stochastic rows pass through unchanged.
struct CellPlan {
    cells: Vec<(String, Vec<Q>)>,
    /// Cell names first, then the original parents.
    parents: Vec<String>,
    table: Vec<Vec<Q>>,
}

fn plan_cells(
    prefix: &str,
    var: &str,
    width: usize,
    parents: &[String],
    pa_dims: &[usize],
    rule: &[Vec<Q>],
) -> Result<CellPlan> {
    let n_ctx = context_count(pa_dims);
    if rule.len() != n_ctx || rule.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidModel(format!("rule table shape mismatch for {var}")));
    }
    let mut cells: Vec<(String, Vec<Q>)> = Vec::new();
    let mut cell_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut forced: BTreeMap<usize, usize> = BTreeMap::new();
    for (r, row) in rule.iter().enumerate() {
        let support: Vec<usize> = (0..width).filter(|&a| !row[a].is_zero()).collect();
        if support.len() == 1 {
            forced.insert(r, support[0]);
        } else {
            cell_of.insert(r, cells.len());
            cells.push((format!("{prefix}_{var}_{r}"), row.clone()));
        }
    }
    if cells.is_empty() {
        return Ok(CellPlan { cells, parents: parents.to_vec(), table: rule.to_vec() });
    }
    let k = cells.len();
    let rows = (width as u128)
        .checked_pow(k as u32)
        .and_then(|c| c.checked_mul(n_ctx as u128))
        .unwrap_or(u128::MAX);
    if rows > CELL_CAP {
        return Err(Error::ExplosionGuard(rows, CELL_CAP));
    }
    let mut all_parents: Vec<String> = cells.iter().map(|(n, _)| n.clone()).collect();
    all_parents.extend(parents.iter().cloned());
    let mut all_dims = vec![width; k];
    all_dims.extend_from_slice(pa_dims);
    let mut table = Vec::with_capacity(context_count(&all_dims));
    for idx in 0..context_count(&all_dims) {
        let digits = digits_of(&all_dims, idx);
        let r = index_of(pa_dims, &digits[k..]);
        let a = match cell_of.get(&r) {
            Some(&j) => digits[j],
            None => forced[&r],
        };
        let mut row = vec![Q::zero(); width];
        row[a] = Q::one();
        table.push(row);
    }
    let plan = CellPlan { cells, parents: all_parents, table };
    if marginal_of_plan(&plan, width, pa_dims) != rule {
        return Err(Error::InvalidModel(format!("canonical representation drift for {var}")));
    }
    Ok(plan)
}

/// Sum the cells back out of a selector.
fn marginal_of_plan(plan: &CellPlan, width: usize, pa_dims: &[usize]) -> Vec<Vec<Q>> {
    let k = plan.cells.len();
    if k == 0 {
        return plan.table.clone();
    }
    let n_ctx = context_count(pa_dims);
    let cell_dims = vec![width; k];
    let mut all_dims = cell_dims.clone();
    all_dims.extend_from_slice(pa_dims);
    let mut out = vec![vec![Q::zero(); width]; n_ctx];
    for combo in 0..context_count(&cell_dims) {
        let cd = digits_of(&cell_dims, combo);
        let mut w = Q::one();
        for (j, (_, prior)) in plan.cells.iter().enumerate() {
            w *= prior[cd[j]].clone();
        }
        if w.is_zero() {
            continue;
        }
        for (r, dist) in out.iter_mut().enumerate() {
            let mut digits = cd.clone();
            digits.extend(digits_of(pa_dims, r));
            let row = &plan.table[index_of(&all_dims, &digits)];
            for (a, p) in row.iter().enumerate() {
                if !p.is_zero() {
                    dist[a] += w.clone() * p.clone();
                }
            }
        }
    }
    out
}

/// Does the cell construction for `rule` marginalize back to the rule
/// exactly? False for malformed rules (wrong shape, rows that are not
/// probability distributions).
pub fn verify_canonical(m: &GameModel, d: &str, rule: &Cpd) -> Result<bool> {
    if !matches!(m.kind(d)?, VarKind::Decision { .. }) {
        return Err(Error::InvalidModel(format!("{d} is not a decision")));
    }
    if rule.parents != m.graph.parents(d)? {
        return Ok(false);
    }
    let width = m.domain(d)?.len();
    let pa_dims = m.parent_dims(d)?;
    if rule.table.len() != context_count(&pa_dims) || rule.table.iter().any(|r| r.len() != width) {
        return Ok(false);
    }
    for row in &rule.table {
        let total = row.iter().fold(Q::zero(), |a, b| a + b.clone());
        if total != Q::one() || row.iter().any(|p| p < &Q::zero()) {
            return Ok(false);
        }
    }
    let plan = plan_cells("eps", d, width, &rule.parents, &pa_dims, &rule.table)?;
    Ok(marginal_of_plan(&plan, width, &pa_dims) == rule.table)
}

/// The counterfactual half of a twin network.
struct CfSide<'a> {
    model: &'a GameModel,
    rules: &'a BTreeMap<String, Cpd>,
    params: &'a BTreeMap<String, Cpd>,
    object: &'a [ObjectIntervention],
}

/// Build a single- or twin-world model. The actual world keeps its variable
/// names; decisions in `materialize` are routed through shared cells, the
/// rest keep their rules inline. The counterfactual world, when present,
/// copies every non-exogenous variable under a suffix, reuses the shared
/// exogenous variables and cells, and applies its interventions with fresh
/// cells for any stochastic rows.
fn assemble(
    ms: &GameModel,
    actual_rules: &BTreeMap<String, Cpd>,
    materialize: &BTreeSet<String>,
    cf: Option<&CfSide>,
) -> Result<GameModel> {
    let mut decls: Vec<VariableDecl> = Vec::new();
    let mut logical: Vec<(String, Vec<String>, Vec<Vec<Q>>)> = Vec::new();

    let mut selectors: BTreeMap<String, CellPlan> = BTreeMap::new();
    for d in materialize {
        let rule = actual_rules
            .get(d)
            .ok_or_else(|| Error::InvalidModel(format!("no rule bound for decision {d}")))?;
        let width = ms.domain(d)?.len();
        let pa_dims: Vec<usize> =
            rule.parents.iter().map(|p| Ok(ms.domain(p)?.len())).collect::<Result<_>>()?;
        let plan = plan_cells("eps", d, width, &rule.parents, &pa_dims, &rule.table)?;
        for (name, prior) in &plan.cells {
            decls.push(VariableDecl {
                name: name.clone(),
                kind: VarKind::Exogenous,
                domain: ms.domain(d)?.to_vec(),
            });
            logical.push((name.clone(), vec![], vec![prior.clone()]));
        }
        selectors.insert(d.clone(), plan);
    }

    // Fresh randomness for stochastic counterfactual-side changes.
    let mut star: BTreeMap<String, CellPlan> = BTreeMap::new();
    if let Some(side) = cf {
        let mut pending: Vec<(String, Vec<String>, Vec<Vec<Q>>)> = Vec::new();
        for o in side.object {
            let parents = match &o.new_parents {
                Some(p) => p.clone(),
                None => side.model.graph.parents(&o.child)?,
            };
            pending.push((o.child.clone(), parents, o.table.clone()));
        }
        for (v, c) in side.params {
            if side.object.iter().any(|o| &o.child == v) {
                return Err(Error::InvalidInterventionSets(format!(
                    "{v} is both object- and parameter-intervened"
                )));
            }
            if c.parents != side.model.graph.parents(v)? {
                return Err(Error::InvalidModel(format!("parameter CPD parents mismatch for {v}")));
            }
            pending.push((v.clone(), c.parents.clone(), c.table.clone()));
        }
        for (v, parents, table) in pending {
            let width = side.model.domain(&v)?.len();
            let pa_dims: Vec<usize> = parents
                .iter()
                .map(|p| Ok(side.model.domain(p)?.len()))
                .collect::<Result<_>>()?;
            let plan = plan_cells("eps_star", &v, width, &parents, &pa_dims, &table)?;
            for (name, prior) in &plan.cells {
                decls.push(VariableDecl {
                    name: name.clone(),
                    kind: VarKind::Exogenous,
                    domain: side.model.domain(&v)?.to_vec(),
                });
                logical.push((name.clone(), vec![], vec![prior.clone()]));
            }
            star.insert(v, plan);
        }
    }

    // Actual world.
    for dc in &ms.decls {
        match &dc.kind {
            VarKind::Decision { .. } => {
                decls.push(VariableDecl {
                    name: dc.name.clone(),
                    kind: VarKind::Chance,
                    domain: dc.domain.clone(),
                });
                if let Some(plan) = selectors.get(&dc.name) {
                    logical.push((dc.name.clone(), plan.parents.clone(), plan.table.clone()));
                } else {
                    let rule = actual_rules.get(&dc.name).ok_or_else(|| {
                        Error::InvalidModel(format!("no rule bound for decision {}", dc.name))
                    })?;
                    logical.push((dc.name.clone(), rule.parents.clone(), rule.table.clone()));
                }
            }
            VarKind::Utility { .. } if cf.is_some() => {
                // Only the counterfactual world's utilities stay utilities,
                // so per-agent sums read the right copy.
                decls.push(VariableDecl {
                    name: dc.name.clone(),
                    kind: VarKind::Chance,
                    domain: dc.domain.clone(),
                });
                let c = &ms.cpds[&dc.name];
                logical.push((dc.name.clone(), c.parents.clone(), c.table.clone()));
            }
            _ => {
                decls.push(dc.clone());
                let c = &ms.cpds[&dc.name];
                logical.push((dc.name.clone(), c.parents.clone(), c.table.clone()));
            }
        }
    }

    // Counterfactual world.
    if let Some(side) = cf {
        let map = |p: &str| -> Result<String> {
            Ok(match side.model.kind(p)? {
                VarKind::Exogenous => p.to_string(),
                _ => suffixed(p),
            })
        };
        let emit = |plan: &CellPlan, map: &dyn Fn(&str) -> Result<String>| -> Result<Vec<String>> {
            let k = plan.cells.len();
            let mut out = plan.parents[..k].to_vec();
            for p in &plan.parents[k..] {
                out.push(map(p)?);
            }
            Ok(out)
        };
        for dc in &side.model.decls {
            if matches!(dc.kind, VarKind::Exogenous) {
                continue;
            }
            let name = suffixed(&dc.name);
            let kind = match &dc.kind {
                VarKind::Utility { agent } => VarKind::Utility { agent: agent.clone() },
                _ => VarKind::Chance,
            };
            decls.push(VariableDecl { name: name.clone(), kind, domain: dc.domain.clone() });
            if let Some(plan) = star.get(&dc.name) {
                logical.push((name, emit(plan, &map)?, plan.table.clone()));
            } else if let Some(plan) = selectors.get(&dc.name) {
                logical.push((name, emit(plan, &map)?, plan.table.clone()));
            } else if matches!(dc.kind, VarKind::Decision { .. }) {
                let rule = side.rules.get(&dc.name).ok_or_else(|| {
                    Error::InvalidModel(format!("no counterfactual rule for {}", dc.name))
                })?;
                let parents: Vec<String> =
                    rule.parents.iter().map(|p| map(p)).collect::<Result<_>>()?;
                logical.push((name, parents, rule.table.clone()));
            } else {
                let c = &side.model.cpds[&dc.name];
                let parents: Vec<String> =
                    c.parents.iter().map(|p| map(p)).collect::<Result<_>>()?;
                logical.push((name, parents, c.table.clone()));
            }
        }
    }

    let mut pos: BTreeMap<String, usize> = BTreeMap::new();
    for (i, d) in decls.iter().enumerate() {
        if pos.insert(d.name.clone(), i).is_some() {
            return Err(Error::InvalidModel(format!("twin name collision on {}", d.name)));
        }
    }
    let dims: BTreeMap<String, usize> =
        decls.iter().map(|d| (d.name.clone(), d.domain.len())).collect();
    let mut cpds: BTreeMap<String, Cpd> = BTreeMap::new();
    let mut edges: Vec<(String, String)> = Vec::new();
    for (child, parents, table) in logical {
        for p in &parents {
            if !pos.contains_key(p) {
                return Err(Error::UnknownNode(p.clone()));
            }
            edges.push((p.clone(), child.clone()));
        }
        let mut sorted = parents.clone();
        sorted.sort_by_key(|p| pos[p]);
        let table = permute_table(&table, &parents, &sorted, &dims)?;
        cpds.insert(child.clone(), Cpd { child: child.clone(), parents: sorted, table });
    }
    GameModel::build(ms.agents.clone(), decls, edges, cpds, Level::Causal, BTreeMap::new())
}

/// Rebuild rows for a permuted parent ordering.
fn permute_table(
    table: &[Vec<Q>],
    old: &[String],
    new: &[String],
    dims: &BTreeMap<String, usize>,
) -> Result<Vec<Vec<Q>>> {
    if new == old {
        return Ok(table.to_vec());
    }
    let old_dims: Vec<usize> = old.iter().map(|p| dims[p]).collect();
    let new_dims: Vec<usize> = new.iter().map(|p| dims[p]).collect();
    let slot: Vec<usize> = old
        .iter()
        .map(|p| {
            new.iter()
                .position(|x| x == p)
                .ok_or_else(|| Error::UnknownNode(p.clone()))
        })
        .collect::<Result<_>>()?;
    let n = context_count(&new_dims);
    if table.len() != n {
        return Err(Error::InvalidModel("table does not match its parents".into()));
    }
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let nd = digits_of(&new_dims, idx);
        let od: Vec<usize> = slot.iter().map(|&s| nd[s]).collect();
        out.push(table[index_of(&old_dims, &od)].clone());
    }
    Ok(out)
}

fn cell_world(m: &GameModel, rules: &BTreeMap<String, Cpd>) -> Result<GameModel> {
    let materialize: BTreeSet<String> = m.decisions().into_iter().collect();
    assemble(m, rules, &materialize, None)
}

fn show_event(z: &Assignment) -> String {
    z.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
}

/// Exact posterior over the exogenous variables, rule cells included, given
/// object evidence under one outcome.
pub fn abduce(
    m: &GameModel,
    profile: &PolicyProfile,
    z: &Assignment,
) -> Result<Vec<(Assignment, Q)>> {
    if m.level != Level::Structural {
        return Err(Error::InvalidModel(
            "abduction needs a structural model; call to_structural first".into(),
        ));
    }
    let world = cell_world(m, &profile.rules)?;
    let exo: BTreeSet<String> = world
        .decls
        .iter()
        .filter(|d| matches!(d.kind, VarKind::Exogenous))
        .map(|d| d.name.clone())
        .collect();
    let ctx = JointContext::new(&world, BTreeMap::new())?;
    let f = ctx.marginal(&exo, z)?;
    let total = f.total();
    if total.is_zero() {
        return Err(Error::ZeroProbabilityEvidence(show_event(z)));
    }
    let mut out = Vec::new();
    for (idx, p) in f.data.iter().enumerate() {
        if p.is_zero() {
            continue;
        }
        let digits = digits_of(&f.dims, idx);
        let mut a = Assignment::new();
        for (v, &g) in f.vars.iter().zip(digits.iter()) {
            a.insert(v.clone(), world.domain(v)?[g].clone());
        }
        out.push((a, p.clone() / total.clone()));
    }
    Ok(out)
}

fn relations_for(m: &GameModel, under: &OutcomeSpec) -> Vec<RationalityRelation> {
    match under {
        OutcomeSpec::Spe => subgame_perfect_relations(m),
        _ => best_response_relations(m),
    }
}

/// Which decision rules must agree between the worlds. Fully post-policy
/// interventions keep every rule. With a pre-policy component the simplicity
/// principle keeps none, and the closest-possible-world principle keeps the
/// rules whose response sets the intervention leaves untouched.
pub fn invariant_rules(
    m: &GameModel,
    under: &OutcomeSpec,
    z: &Evidence,
    pre: Option<&Intervention>,
    principle: Principle,
) -> Result<BTreeSet<String>> {
    if pre.map_or(true, Intervention::is_empty) {
        return Ok(m.decisions().into_iter().collect());
    }
    match principle {
        Principle::Simplicity => Ok(BTreeSet::new()),
        Principle::ClosestPossibleWorld => closest_world_invariants(m, under, z, pre.unwrap()),
    }
}

fn closest_world_invariants(
    m: &GameModel,
    under: &OutcomeSpec,
    z: &Evidence,
    pre: &Intervention,
) -> Result<BTreeSet<String>> {
    // Parameter changes land in both worlds; rule fixes, bans, and object
    // interventions stay on the counterfactual side.
    let mut m_act = m.clone();
    for (v, ch) in &pre.mechanism {
        if let MechanismChange::SetParameter(c) = ch {
            m_act = set_parameter(&m_act, v, c)?;
        }
    }
    let mut m_cf = m_act.clone();
    let mut pinned: BTreeMap<String, Cpd> = BTreeMap::new();
    for (v, ch) in &pre.mechanism {
        match ch {
            MechanismChange::BanParents { banned, replacement } => {
                // Restriction style keeps rule shapes comparable across sides.
                m_cf = apply_ban(&m_cf, v, banned, replacement.as_deref(), BanStyle::Restriction)?;
            }
            MechanismChange::FixRule(c) => {
                pinned.insert(v.clone(), c.clone());
            }
            MechanismChange::SetParameter(_) => {}
        }
    }
    if !pre.object.is_empty() {
        let mut probe = m_cf;
        probe.level = Level::Causal;
        m_cf = intervene(&probe, &pre.object)?;
    }

    // Rules downstream of an intervened node in the mechanised graph start
    // outside the invariant set.
    let relations = relations_for(m, under);
    let mg = mechanise(m, &relations, EdgeMode::Minimal)?;
    let mut y: BTreeSet<String> = BTreeSet::new();
    for (v, ch) in &pre.mechanism {
        y.insert(match ch {
            MechanismChange::SetParameter(_) => mech_name(m, v)?,
            _ => rule_node(v),
        });
    }
    for o in &pre.object {
        y.insert(o.child.clone());
    }
    let mut closed = mg.graph.descendants_of_set(&y)?;
    closed.extend(y);
    let mut invariant: BTreeSet<String> = m
        .decisions()
        .into_iter()
        .filter(|d| !closed.contains(&rule_node(d)))
        .collect();

    // Walk the relevance components in solve order; a disturbed component
    // whose joint response set is unchanged rejoins the invariant set.
    let actual_maps: Vec<BTreeMap<String, Cpd>> =
        filter_consistent(m, resolve_outcomes(m, under)?, z)?
            .into_iter()
            .map(|p| p.rules)
            .collect();
    let mut pre_r = pre.clone();
    pre_r.ban_style = BanStyle::Restriction;
    let (_, cf_maps) = augmented_cf_outcomes(m, under, &pre_r)?;
    let crit = Reachability::for_relations(&relations);
    let cond = decision_relevance(m, &crit)?.condense();
    for &ci in &cond.topo_order {
        let comp = &cond.components[ci];
        if comp.iter().all(|d| invariant.contains(d)) {
            continue;
        }
        let a = response_union(&m_act, under, &actual_maps, comp, &BTreeMap::new())?;
        let b = response_union(&m_cf, under, &cf_maps, comp, &pinned)?;
        if !a.is_empty() && a == b {
            invariant.extend(comp.iter().cloned());
        }
    }
    Ok(invariant)
}

/// Joint responses of one relevance component, with everything outside it
/// bound from an outcome map, as a set of canonical signatures.
fn response_union(
    model: &GameModel,
    under: &OutcomeSpec,
    rule_maps: &[BTreeMap<String, Cpd>],
    comp: &[String],
    pinned: &BTreeMap<String, Cpd>,
) -> Result<BTreeSet<String>> {
    let decisions = model.decisions();
    let free: Vec<String> = comp
        .iter()
        .filter(|d| decisions.contains(d) && !pinned.contains_key(*d))
        .cloned()
        .collect();
    let mixed = fully_mixed_profile(model)?;
    let mut out = BTreeSet::new();
    for map in rule_maps {
        let mut bound: BTreeMap<String, Cpd> = BTreeMap::new();
        for d in &decisions {
            if free.contains(d) {
                continue;
            }
            let rule = pinned
                .get(d)
                .or_else(|| map.get(d))
                .cloned()
                .unwrap_or_else(|| mixed.rules[d].clone());
            bound.insert(d.clone(), rule);
        }
        let responses: Vec<BTreeMap<String, Cpd>> = if free.is_empty() {
            vec![BTreeMap::new()]
        } else {
            let mb = bind_decisions(model, &bound)?;
            rational_outcomes(&mb, &relations_for(&mb, under), PolicySpace::RepresentativeEquilibria)?
                .into_iter()
                .map(|p| p.rules)
                .collect()
        };
        for r in responses {
            out.insert(component_signature(comp, &r, pinned, map));
        }
    }
    Ok(out)
}

fn component_signature(
    comp: &[String],
    responses: &BTreeMap<String, Cpd>,
    pinned: &BTreeMap<String, Cpd>,
    map: &BTreeMap<String, Cpd>,
) -> String {
    let mut s = String::new();
    for d in comp {
        s.push_str(d);
        s.push('|');
        match responses.get(d).or_else(|| pinned.get(d)).or_else(|| map.get(d)) {
            Some(c) => {
                s.push_str(&c.parents.join(","));
                for row in &c.table {
                    s.push('[');
                    s.push_str(&row.iter().map(show_rational).collect::<Vec<_>>().join(","));
                    s.push(']');
                }
            }
            None => s.push('-'),
        }
        s.push(';');
    }
    s
}

/// Counterfactual outcomes of a pre-policy intervention, each augmented with
/// the fixed rules so pairing can compare them.
fn augmented_cf_outcomes(
    m: &GameModel,
    under: &OutcomeSpec,
    pre: &Intervention,
) -> Result<(GameModel, Vec<BTreeMap<String, Cpd>>)> {
    let s = apply_pre(m, pre)?;
    let outs = resolve_outcomes(&s, under)?;
    let mut maps = Vec::with_capacity(outs.len());
    for o in outs {
        let mut rules = o.rules;
        for (d, ch) in &pre.mechanism {
            if let MechanismChange::FixRule(c) = ch {
                rules.insert(d.clone(), c.clone());
            }
        }
        maps.push(rules);
    }
    Ok((s, maps))
}

/// Are the profile's rules still rational once the object intervention is
/// applied? Subgame perfection is probed for SPE outcome sets, best response
/// otherwise.
fn rational_after(
    m: &GameModel,
    under: &OutcomeSpec,
    pi: &PolicyProfile,
    object: &[ObjectIntervention],
) -> Result<bool> {
    let mut probe = m.clone();
    probe.level = Level::Causal;
    let mi = intervene(&probe, object)?;
    let spe_like = matches!(under, OutcomeSpec::Spe);
    for d in mi.decisions() {
        let ok = if spe_like {
            rule_is_subgame_perfect(&mi, pi, &d)?
        } else {
            rule_is_best_response(&mi, pi, &d)?
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

fn eval_twin(twin: &GameModel, target: &Target, given: &Assignment) -> Result<Q> {
    let ctx = JointContext::new(twin, BTreeMap::new())?;
    match target {
        Target::Probability(x) => {
            let mut mapped = Assignment::new();
            for (k, v) in x {
                let name = suffixed(k);
                let key = if twin.decl(&name).is_ok() { name } else { k.clone() };
                mapped.insert(key, v.clone());
            }
            ctx.prob(&mapped, given)
        }
        Target::Utility(agent) => ctx.expected_utility(agent, given),
        Target::Expectation(var) => {
            let name = suffixed(var);
            let key = if twin.decl(&name).is_ok() { name } else { var.to_string() };
            ctx.expected_value(&key, given)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_pair(
    ms: &GameModel,
    actual: &BTreeMap<String, Cpd>,
    cf_model: &GameModel,
    cf_rules: &BTreeMap<String, Cpd>,
    cf_params: &BTreeMap<String, Cpd>,
    cf_object: &[ObjectIntervention],
    target: &Target,
    given: &Assignment,
) -> Result<Q> {
    let intervened: BTreeSet<&str> = cf_object.iter().map(|o| o.child.as_str()).collect();
    let mut shared: BTreeSet<String> = BTreeSet::new();
    for d in ms.decisions() {
        if intervened.contains(d.as_str()) {
            continue;
        }
        let mine = match actual.get(&d) {
            Some(c) => c,
            None => return Err(Error::InvalidModel(format!("no rule bound for decision {d}"))),
        };
        let theirs = match cf_model.kind(&d) {
            Ok(VarKind::Decision { .. }) => cf_rules.get(&d),
            Ok(_) => cf_model.cpds.get(&d),
            Err(_) => None,
        };
        if let Some(c) = theirs {
            if c.parents == mine.parents && c.table == mine.table {
                shared.insert(d.clone());
            }
        }
    }
    let side = CfSide { model: cf_model, rules: cf_rules, params: cf_params, object: cf_object };
    let twin = assemble(ms, actual, &shared, Some(&side))?;
    eval_twin(&twin, target, given)
}

/// Answer a counterfactual query over a rational-outcome set: abduct from
/// the evidence in each actual world, pair it with the counterfactual worlds
/// that agree on the invariant rules, and evaluate the target under the
/// intervention with shared exogenous state.
pub fn counterfactual(m: &GameModel, under: &OutcomeSpec, q: &CfQuery) -> Result<CfAnswer> {
    if m.level != Level::Structural {
        return Err(Error::InvalidModel(
            "counterfactual queries need a structural model; call to_structural first".into(),
        ));
    }
    if let (Some(pre), Some(post)) = (&q.pre, &q.post) {
        for v in pre.mechanism.keys() {
            if post.mechanism.contains_key(v) {
                return Err(Error::InvalidInterventionSets(format!(
                    "{v} is intervened both pre- and post-policy"
                )));
            }
        }
    }
    let actual = filter_consistent(m, resolve_outcomes(m, under)?, &q.evidence)?;
    let fully_post = q.pre.as_ref().map_or(true, Intervention::is_empty);
    let invariant = invariant_rules(m, under, &q.evidence, q.pre.as_ref(), q.principle)?;

    let post_object: Vec<ObjectIntervention> =
        q.post.as_ref().map(|iv| iv.object.clone()).unwrap_or_default();
    let mut post_fixes: BTreeMap<String, Cpd> = BTreeMap::new();
    let mut post_params: BTreeMap<String, Cpd> = BTreeMap::new();
    if let Some(post) = &q.post {
        for (v, ch) in &post.mechanism {
            match ch {
                MechanismChange::FixRule(c) => {
                    post_fixes.insert(v.clone(), c.clone());
                }
                MechanismChange::SetParameter(c) => {
                    post_params.insert(v.clone(), c.clone());
                }
                MechanismChange::BanParents { .. } => {
                    return Err(Error::InvalidModel(format!(
                        "parent ban on {v} is a pre-policy intervention"
                    )));
                }
            }
        }
    }

    let (cf_model, pairs): (GameModel, Vec<(PolicyProfile, BTreeMap<String, Cpd>)>) =
        if fully_post {
            let mut ps = Vec::new();
            for pi in &actual {
                if q.world_rationality
                    && !post_object.is_empty()
                    && !rational_after(m, under, pi, &post_object)?
                {
                    continue;
                }
                ps.push((pi.clone(), pi.rules.clone()));
            }
            (m.clone(), ps)
        } else {
            let (s, maps) = augmented_cf_outcomes(m, under, q.pre.as_ref().unwrap())?;
            let mut ps = Vec::new();
            for pi in &actual {
                for rules in &maps {
                    let agree = invariant.iter().all(|d| match (pi.rules.get(d), rules.get(d)) {
                        (Some(a), Some(b)) => a.parents == b.parents && a.table == b.table,
                        _ => false,
                    });
                    if agree {
                        ps.push((pi.clone(), rules.clone()));
                    }
                }
            }
            (s, ps)
        };

    let mut diagnostic = None;
    if pairs.is_empty() {
        diagnostic = Some(if actual.is_empty() {
            "evidence is inconsistent with every rational outcome".to_string()
        } else if fully_post && q.world_rationality {
            "every actual outcome becomes irrational under the intervention".to_string()
        } else {
            "no counterfactual outcome agrees with an actual outcome on the invariant rules"
                .to_string()
        });
    }

    let mut trace = Vec::with_capacity(pairs.len());
    for (pi, mut cf_rules) in pairs {
        for (d, c) in &post_fixes {
            if !matches!(cf_model.kind(d)?, VarKind::Decision { .. }) {
                return Err(Error::InvalidModel(format!("{d} is not a decision")));
            }
            cf_rules.insert(d.clone(), c.clone());
        }
        let v = evaluate_pair(
            m,
            &pi.rules,
            &cf_model,
            &cf_rules,
            &post_params,
            &post_object,
            &q.target,
            &q.evidence.object,
        )?;
        trace.push((pi, PolicyProfile { rules: cf_rules }, v));
    }
    let mut values: Vec<Q> = trace.iter().map(|(_, _, v)| v.clone()).collect();
    values.sort();
    values.dedup();
    Ok(CfAnswer { values, trace, invariant, diagnostic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{decl, job_market, sym2};
    use crate::query::{self, Timing};
    use crate::rational::{q, qi, Value};

    fn structural_jm() -> GameModel {
        job_market(false).to_structural().unwrap()
    }

    fn f2_profile() -> PolicyProfile {
        PolicyProfile {
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
        }
    }

    fn never_g() -> Cpd {
        Cpd::deterministic("D1", vec!["T".into()], vec![1, 1], 2)
    }

    fn always_g() -> Cpd {
        Cpd::deterministic("D1", vec!["T".into()], vec![0, 0], 2)
    }

    /// Two independent agents: the first decision drives both utilities, the
    /// second agent's optimum either ignores the first decision or, when
    /// coupled, tracks it.
    fn dominant_pair(coupled: bool) -> GameModel {
        let u2_rows = if coupled { vec![1, 0, 0, 1] } else { vec![1, 0, 1, 0] };
        GameModel::build(
            vec!["a1".into(), "a2".into()],
            vec![
                decl("D", VarKind::Decision { agent: "a1".into() }, sym2("d0", "d1")),
                decl("E", VarKind::Decision { agent: "a2".into() }, sym2("e0", "e1")),
                decl(
                    "U1",
                    VarKind::Utility { agent: "a1".into() },
                    vec![Value::num(qi(0)), Value::num(qi(1))],
                ),
                decl(
                    "U2",
                    VarKind::Utility { agent: "a2".into() },
                    vec![Value::num(qi(0)), Value::num(qi(1))],
                ),
            ],
            vec![
                ("D".into(), "U1".into()),
                ("D".into(), "U2".into()),
                ("E".into(), "U2".into()),
            ],
            [
                (
                    "U1".to_string(),
                    Cpd::deterministic("U1", vec!["D".into()], vec![1, 0], 2),
                ),
                (
                    "U2".to_string(),
                    Cpd::deterministic("U2", vec!["D".into(), "E".into()], u2_rows, 2),
                ),
            ]
            .into(),
            Level::Causal,
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn canonical_cells_reproduce_the_rule() {
        let lottery = vec![vec![q(1, 2), q(1, 2)], vec![q(1, 2), q(1, 2)]];
        let plan = plan_cells("eps", "D1", 2, &["T".to_string()], &[2], &lottery).unwrap();
        assert_eq!(plan.cells.len(), 2);
        assert_eq!(plan.cells[0].0, "eps_D1_0");
        assert_eq!(plan.cells[1].0, "eps_D1_1");
        assert_eq!(plan.cells[0].1, vec![q(1, 2), q(1, 2)]);
        assert_eq!(marginal_of_plan(&plan, 2, &[2]), lottery);

        let m = job_market(false);
        let rule = Cpd { child: "D1".into(), parents: vec!["T".into()], table: lottery };
        assert!(verify_canonical(&m, "D1", &rule).unwrap());
        let skew = Cpd {
            child: "D1".into(),
            parents: vec!["T".into()],
            table: vec![vec![q(2, 3), q(2, 3)], vec![q(1, 2), q(1, 2)]],
        };
        assert!(!verify_canonical(&m, "D1", &skew).unwrap());
        assert!(verify_canonical(&m, "D1", &f2_profile().rules["D1"]).unwrap());
    }

    #[test]
    fn abduction_posterior_is_exact() {
        let ms = structural_jm();
        let pi = f2_profile();

        let prior = abduce(&ms, &pi, &Assignment::new()).unwrap();
        let total = prior.iter().fold(Q::zero(), |a, (_, p)| a + p.clone());
        assert_eq!(total, qi(1));
        let h_mass = prior
            .iter()
            .filter(|(a, _)| a["eps_T"] == Value::sym("h"))
            .fold(Q::zero(), |acc, (_, p)| acc + p.clone());
        assert_eq!(h_mass, q(1, 2));

        let z: Assignment = [("D1".to_string(), Value::sym("ng"))].into();
        let posterior = abduce(&ms, &pi, &z).unwrap();
        let h_mass = posterior
            .iter()
            .filter(|(a, _)| a["eps_T"] == Value::sym("h"))
            .fold(Q::zero(), |acc, (_, p)| acc + p.clone());
        assert_eq!(h_mass, q(2, 5));

        let causal = job_market(false);
        assert!(matches!(abduce(&causal, &pi, &z), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn counterfactual_world_is_consistent_without_intervention() {
        let ms = structural_jm();
        let under = OutcomeSpec::Explicit(vec![f2_profile()]);
        let ng: Assignment = [("D1".to_string(), Value::sym("ng"))].into();

        let mut cq =
            CfQuery::new(Target::Probability([("D1".to_string(), Value::sym("g"))].into()));
        cq.evidence = Evidence::object(ng.clone());
        let ans = counterfactual(&ms, &under, &cq).unwrap();
        assert_eq!(ans.values, vec![qi(0)]);

        let mut cq = CfQuery::new(Target::Probability(ng.clone()));
        cq.evidence = Evidence::object(ng);
        let ans = counterfactual(&ms, &under, &cq).unwrap();
        assert_eq!(ans.values, vec![qi(1)]);
    }

    #[test]
    fn qualification_counterfactual_matches_hand_computation() {
        let ms = structural_jm();
        let mut cq = CfQuery::new(Target::Utility("w".into()));
        cq.evidence = Evidence::object([("D1".to_string(), Value::sym("ng"))].into());
        cq.post = Some(Intervention::fix_object(&ms, "D1", &Value::sym("g")).unwrap());
        let ans = counterfactual(&ms, &OutcomeSpec::BehaviouralNe, &cq).unwrap();
        assert_eq!(ans.values, vec![q(-3, 2), q(17, 5), q(7, 2)]);
        assert_eq!(ans.trace.len(), 3);
        assert!(ans.diagnostic.is_none());
    }

    #[test]
    fn world_rationality_prunes_irrational_pairings() {
        let ms = structural_jm();
        let mut cq = CfQuery::new(Target::Utility("w".into()));
        cq.evidence = Evidence::rule("D1", never_g());
        cq.post = Some(Intervention::fix_object(&ms, "D1", &Value::sym("g")).unwrap());

        let ans = counterfactual(&ms, &OutcomeSpec::BehaviouralNe, &cq).unwrap();
        assert_eq!(ans.values, vec![q(-3, 2), q(7, 2)]);
        assert_eq!(ans.trace.len(), 2);

        cq.world_rationality = true;
        let ans = counterfactual(&ms, &OutcomeSpec::BehaviouralNe, &cq).unwrap();
        assert_eq!(ans.values, vec![q(7, 2)]);
        assert_eq!(ans.trace.len(), 1);
    }

    #[test]
    fn pre_policy_rule_replacement_under_simplicity() {
        let ms = structural_jm();
        let mut cq = CfQuery::new(Target::Utility("w".into()));
        cq.evidence = Evidence::rule("D1", never_g());
        cq.pre = Some(Intervention::fix_rule("D1", always_g()));
        let ans = counterfactual(&ms, &OutcomeSpec::BehaviouralNe, &cq).unwrap();
        assert_eq!(ans.values, vec![q(7, 2)]);
        // Two actual outcomes satisfy the rule evidence; the replaced game has
        // one representative (its D2 row off the forced path stays pinned).
        assert_eq!(ans.trace.len(), 2);
        for (_, cf, v) in &ans.trace {
            assert_eq!(*v, q(7, 2));
            assert_eq!(cf.rules["D1"].table, always_g().table);
        }
        assert!(ans.invariant.is_empty());
        assert!(ans.diagnostic.is_none());
    }

    #[test]
    fn post_only_counterfactual_matches_interventional_query() {
        let ms = structural_jm();
        let iv = Intervention::fix_object(&ms, "D1", &Value::sym("g")).unwrap();
        let reference = query::interventional(
            &ms,
            &OutcomeSpec::BehaviouralNe,
            &Target::Utility("w".into()),
            iv.clone(),
            Timing::Post,
        )
        .unwrap();

        let mut cq = CfQuery::new(Target::Utility("w".into()));
        cq.post = Some(iv);
        let ans = counterfactual(&ms, &OutcomeSpec::BehaviouralNe, &cq).unwrap();
        assert_eq!(ans.values, reference.values);
        assert_eq!(ans.trace.len(), reference.trace.len());
    }

    #[test]
    fn invariant_sets_by_principle() {
        let jm = job_market(false);
        let all: BTreeSet<String> = ["D1".to_string(), "D2".to_string()].into();
        let none = Evidence::default();
        let under = OutcomeSpec::BehaviouralNe;

        assert_eq!(
            invariant_rules(&jm, &under, &none, None, Principle::Simplicity).unwrap(),
            all
        );
        assert_eq!(
            invariant_rules(&jm, &under, &none, None, Principle::ClosestPossibleWorld).unwrap(),
            all
        );

        let fix = Intervention::fix_rule("D1", always_g());
        assert!(invariant_rules(&jm, &under, &none, Some(&fix), Principle::Simplicity)
            .unwrap()
            .is_empty());
        // The firm's beliefs track the worker's rule, so nothing survives.
        assert!(invariant_rules(&jm, &under, &none, Some(&fix), Principle::ClosestPossibleWorld)
            .unwrap()
            .is_empty());

        // A dominant second mover is undisturbed by fixing the first.
        let dp = dominant_pair(false);
        let fix_d =
            Intervention::fix_rule("D", Cpd::deterministic("D", vec![], vec![1], 2));
        let cpw =
            invariant_rules(&dp, &under, &none, Some(&fix_d), Principle::ClosestPossibleWorld)
                .unwrap();
        assert_eq!(cpw, ["E".to_string()].into());
        let simple =
            invariant_rules(&dp, &under, &none, Some(&fix_d), Principle::Simplicity).unwrap();
        assert!(simple.is_subset(&cpw));

        // Coupling the second mover's optimum to the first breaks invariance.
        let coupled = dominant_pair(true);
        let cpw = invariant_rules(
            &coupled,
            &under,
            &none,
            Some(&fix_d),
            Principle::ClosestPossibleWorld,
        )
        .unwrap();
        assert!(cpw.is_empty());
    }

    #[test]
    fn empty_pairings_carry_a_diagnostic() {
        let ms = dominant_pair(true).to_structural().unwrap();
        let under = OutcomeSpec::BehaviouralNe;

        let mut cq = CfQuery::new(Target::Expectation("U2".into()));
        cq.post = Some(Intervention::fix_object(&ms, "D", &Value::sym("d1")).unwrap());
        let ans = counterfactual(&ms, &under, &cq).unwrap();
        assert_eq!(ans.values, vec![qi(0)]);

        cq.world_rationality = true;
        let ans = counterfactual(&ms, &under, &cq).unwrap();
        assert!(ans.values.is_empty());
        assert!(ans.diagnostic.as_deref().unwrap().contains("irrational"));

        let mut cq = CfQuery::new(Target::Expectation("U2".into()));
        cq.evidence = Evidence::object([("D".to_string(), Value::sym("d1"))].into());
        let ans = counterfactual(&ms, &under, &cq).unwrap();
        assert!(ans.values.is_empty());
        assert!(ans.diagnostic.as_deref().unwrap().contains("inconsistent"));
    }

    #[test]
    fn counterfactuals_require_structural_models() {
        let causal = job_market(false);
        let cq = CfQuery::new(Target::Utility("w".into()));
        assert!(matches!(
            counterfactual(&causal, &OutcomeSpec::BehaviouralNe, &cq),
            Err(Error::InvalidModel(_))
        ));
    }
}
