//! Exact probabilistic inference over a closed model (every decision bound
//! to a rule): factors, variable elimination, conditional probabilities,
//! expected utilities, and object-level interventions.

use crate::model::{context_count, digits_of, index_of, Assignment, Cpd, GameModel, VarKind};
use crate::rational::{Value, Q};
use crate::{Error, Result};
use num::{One, Zero};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub vars: Vec<String>,
    pub dims: Vec<usize>,
    pub data: Vec<Q>,
}

impl Factor {
    pub fn constant(x: Q) -> Factor {
        Factor { vars: vec![], dims: vec![], data: vec![x] }
    }

    pub fn from_cpd(m: &GameModel, cpd: &Cpd) -> Result<Factor> {
        let mut vars = cpd.parents.clone();
        vars.push(cpd.child.clone());
        let dims: Vec<usize> = vars.iter().map(|v| Ok(m.domain(v)?.len())).collect::<Result<_>>()?;
        let width = *dims.last().unwrap();
        let mut data = Vec::with_capacity(cpd.table.len() * width);
        for row in &cpd.table {
            data.extend(row.iter().cloned());
        }
        Ok(Factor { vars, dims, data })
    }

    pub fn product(&self, other: &Factor) -> Factor {
        let mut vars = self.vars.clone();
        let mut dims = self.dims.clone();
        for (v, d) in other.vars.iter().zip(&other.dims) {
            if !vars.contains(v) {
                vars.push(v.clone());
                dims.push(*d);
            }
        }
        let pos_a: Vec<usize> =
            self.vars.iter().map(|v| vars.iter().position(|x| x == v).unwrap()).collect();
        let pos_b: Vec<usize> =
            other.vars.iter().map(|v| vars.iter().position(|x| x == v).unwrap()).collect();
        let total = context_count(&dims);
        let mut data = Vec::with_capacity(total);
        for idx in 0..total {
            let digits = digits_of(&dims, idx);
            let ia = index_of(&self.dims, &pos_a.iter().map(|&p| digits[p]).collect::<Vec<_>>());
            let ib = index_of(&other.dims, &pos_b.iter().map(|&p| digits[p]).collect::<Vec<_>>());
            data.push(self.data[ia].clone() * other.data[ib].clone());
        }
        Factor { vars, dims, data }
    }

    pub fn sum_out(&self, var: &str) -> Factor {
        let Some(pos) = self.vars.iter().position(|v| v == var) else {
            return self.clone();
        };
        let mut vars = self.vars.clone();
        let mut dims = self.dims.clone();
        vars.remove(pos);
        let removed = dims.remove(pos);
        let total = context_count(&dims);
        let mut data = vec![Q::zero(); total];
        for idx in 0..total {
            let digits = digits_of(&dims, idx);
            let mut acc = Q::zero();
            for k in 0..removed {
                let mut full = digits.clone();
                full.insert(pos, k);
                acc += self.data[index_of(&self.dims, &full)].clone();
            }
            data[idx] = acc;
        }
        Factor { vars, dims, data }
    }

    /// Fixes var to the given index, dropping it from the factor.
    pub fn reduce(&self, var: &str, value: usize) -> Factor {
        let Some(pos) = self.vars.iter().position(|v| v == var) else {
            return self.clone();
        };
        let mut vars = self.vars.clone();
        let mut dims = self.dims.clone();
        vars.remove(pos);
        dims.remove(pos);
        let total = context_count(&dims);
        let mut data = Vec::with_capacity(total);
        for idx in 0..total {
            let mut full = digits_of(&dims, idx);
            full.insert(pos, value);
            data.push(self.data[index_of(&self.dims, &full)].clone());
        }
        Factor { vars, dims, data }
    }

    pub fn total(&self) -> Q {
        self.data.iter().fold(Q::zero(), |a, b| a + b)
    }

    pub fn get(&self, digits: &[usize]) -> &Q {
        &self.data[index_of(&self.dims, digits)]
    }
}

/// A model together with one CPD per decision variable.
#[derive(Debug, Clone)]
pub struct JointContext<'a> {
    pub model: &'a GameModel,
    pub rules: BTreeMap<String, Cpd>,
}

impl<'a> JointContext<'a> {
    pub fn new(model: &'a GameModel, rules: BTreeMap<String, Cpd>) -> Result<JointContext<'a>> {
        for d in model.decisions() {
            let rule = rules
                .get(&d)
                .ok_or_else(|| Error::InvalidModel(format!("no rule bound for decision {d}")))?;
            if rule.parents != model.graph.parents(&d)? {
                return Err(Error::InvalidModel(format!("rule parents mismatch for {d}")));
            }
            if rule.table.len() != context_count(&model.parent_dims(&d)?) {
                return Err(Error::InvalidModel(format!("rule table shape mismatch for {d}")));
            }
        }
        Ok(JointContext { model, rules })
    }

    fn all_factors(&self) -> Result<Vec<Factor>> {
        let mut out = Vec::new();
        for decl in &self.model.decls {
            let cpd = match &decl.kind {
                VarKind::Decision { .. } => &self.rules[&decl.name],
                _ => &self.model.cpds[&decl.name],
            };
            out.push(Factor::from_cpd(self.model, cpd)?);
        }
        Ok(out)
    }

    /// Unnormalized joint over `keep` with all other variables eliminated and
    /// `evidence` fixed. Entry mass equals P(keep assignment, evidence).
    pub fn marginal(&self, keep: &BTreeSet<String>, evidence: &Assignment) -> Result<Factor> {
        for v in keep {
            self.model.decl(v)?;
        }
        let mut factors = Vec::new();
        for f in self.all_factors()? {
            let mut g = f;
            for (var, val) in evidence {
                let vi = self.model.val_idx(var, val)?;
                g = g.reduce(var, vi);
            }
            factors.push(g);
        }
        let mut to_eliminate: BTreeSet<String> = self
            .model
            .decls
            .iter()
            .map(|d| d.name.clone())
            .filter(|v| !keep.contains(v) && !evidence.contains_key(v))
            .collect();
        while let Some(var) = pick_min_fill(&factors, &to_eliminate) {
            to_eliminate.remove(&var);
            let (touching, rest): (Vec<Factor>, Vec<Factor>) =
                factors.into_iter().partition(|f| f.vars.contains(&var));
            let merged = touching
                .into_iter()
                .reduce(|a, b| a.product(&b))
                .unwrap_or_else(|| Factor::constant(Q::one()));
            factors = rest;
            factors.push(merged.sum_out(&var));
        }
        let mut result = factors
            .into_iter()
            .reduce(|a, b| a.product(&b))
            .unwrap_or_else(|| Factor::constant(Q::one()));
        // Stable var order for callers: model declaration order.
        let order: Vec<String> = self
            .model
            .decls
            .iter()
            .map(|d| d.name.clone())
            .filter(|v| result.vars.contains(v))
            .collect();
        result = reorder(&result, &order);
        Ok(result)
    }

    /// P(x | given); errors when the conditioning event has probability zero.
    pub fn prob(&self, x: &Assignment, given: &Assignment) -> Result<Q> {
        for v in x.keys() {
            if given.contains_key(v) {
                return Err(Error::OverlappingSets(v.clone()));
            }
        }
        let keep: BTreeSet<String> = x.keys().cloned().collect();
        let f = self.marginal(&keep, given)?;
        let denom = f.total();
        if denom.is_zero() {
            return Err(Error::ZeroProbabilityEvidence(fmt_assignment(given)));
        }
        let digits: Vec<usize> = f
            .vars
            .iter()
            .map(|v| self.model.val_idx(v, &x[v]))
            .collect::<Result<_>>()?;
        Ok(f.get(&digits).clone() / denom)
    }

    /// Probability of the full evidence event itself.
    pub fn prob_of(&self, event: &Assignment) -> Result<Q> {
        if event.is_empty() {
            return Ok(Q::one());
        }
        let keep: BTreeSet<String> = event.keys().cloned().collect();
        let f = self.marginal(&keep, &Assignment::new())?;
        let digits: Vec<usize> = f
            .vars
            .iter()
            .map(|v| self.model.val_idx(v, &event[v]))
            .collect::<Result<_>>()?;
        Ok(f.get(&digits).clone())
    }

    /// E[V | given] for a numeric-domain variable.
    pub fn expected_value(&self, var: &str, given: &Assignment) -> Result<Q> {
        let dom = self.model.domain(var)?.to_vec();
        let keep: BTreeSet<String> = [var.to_string()].into();
        let f = self.marginal(&keep, given)?;
        let denom = f.total();
        if denom.is_zero() {
            return Err(Error::ZeroProbabilityEvidence(fmt_assignment(given)));
        }
        let mut acc = Q::zero();
        for (i, v) in dom.iter().enumerate() {
            let num = v.as_num().ok_or_else(|| {
                Error::InvalidModel(format!("{var} has non-numeric value {v}"))
            })?;
            acc += f.get(&[i]).clone() * num.clone();
        }
        Ok(acc / denom)
    }

    /// Σ_{U ∈ utilities(agent)} E[U | given].
    pub fn expected_utility(&self, agent: &str, given: &Assignment) -> Result<Q> {
        let mut acc = Q::zero();
        for u in self.model.utilities_of(agent) {
            acc += self.expected_value(&u, given)?;
        }
        Ok(acc)
    }

    /// Full-joint support enumeration: assignments with positive probability.
    pub fn support(&self) -> Result<Vec<(Assignment, Q)>> {
        let vars: Vec<String> = self.model.decls.iter().map(|d| d.name.clone()).collect();
        let keep: BTreeSet<String> = vars.iter().cloned().collect();
        let f = self.marginal(&keep, &Assignment::new())?;
        let mut out = Vec::new();
        for idx in 0..f.data.len() {
            if f.data[idx].is_zero() {
                continue;
            }
            let digits = digits_of(&f.dims, idx);
            let mut asg = Assignment::new();
            for (v, &d) in f.vars.iter().zip(&digits) {
                asg.insert(v.clone(), self.model.domain(v)?[d].clone());
            }
            out.push((asg, f.data[idx].clone()));
        }
        Ok(out)
    }
}

fn reorder(f: &Factor, order: &[String]) -> Factor {
    if f.vars == order {
        return f.clone();
    }
    let pos: Vec<usize> = order.iter().map(|v| f.vars.iter().position(|x| x == v).unwrap()).collect();
    let dims: Vec<usize> = pos.iter().map(|&p| f.dims[p]).collect();
    let total = context_count(&dims);
    let mut data = Vec::with_capacity(total);
    for idx in 0..total {
        let digits = digits_of(&dims, idx);
        let mut old = vec![0; f.dims.len()];
        for (k, &p) in pos.iter().enumerate() {
            old[p] = digits[k];
        }
        data.push(f.data[index_of(&f.dims, &old)].clone());
    }
    Factor { vars: order.to_vec(), dims, data }
}

fn pick_min_fill(factors: &[Factor], candidates: &BTreeSet<String>) -> Option<String> {
    let mut best: Option<(usize, String)> = None;
    for var in candidates {
        let mut neighbours: BTreeSet<&String> = BTreeSet::new();
        for f in factors.iter().filter(|f| f.vars.contains(var)) {
            neighbours.extend(f.vars.iter().filter(|v| *v != var));
        }
        let score = neighbours.len();
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((score, var.clone()));
        }
    }
    best.map(|(_, v)| v)
}

fn fmt_assignment(a: &Assignment) -> String {
    if a.is_empty() {
        return "(empty)".into();
    }
    a.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

/// Replaces the target's CPD (and optionally its parent set), turning an
/// intervened decision into a chance variable.
#[derive(Debug, Clone)]
pub struct ObjectIntervention {
    pub child: String,
    pub new_parents: Option<Vec<String>>,
    pub table: Vec<Vec<Q>>,
}

impl ObjectIntervention {
    /// Hard do(V = v): degenerate, parentless.
    pub fn fix(m: &GameModel, var: &str, value: &Value) -> Result<ObjectIntervention> {
        let width = m.domain(var)?.len();
        let vi = m.val_idx(var, value)?;
        let mut row = vec![Q::zero(); width];
        row[vi] = Q::one();
        Ok(ObjectIntervention {
            child: var.to_string(),
            new_parents: Some(vec![]),
            table: vec![row],
        })
    }
}

/// Applies object interventions, rewiring edges as requested. Intervened
/// decisions become chance variables and lose any rule restrictions.
pub fn intervene(m: &GameModel, interventions: &[ObjectIntervention]) -> Result<GameModel> {
    let mut decls = m.decls.clone();
    let mut cpds = m.cpds.clone();
    let mut allowed = m.allowed_rules.clone();
    let mut edges: Vec<(String, String)> = m.graph.edges();
    for iv in interventions {
        let decl = m.decl(&iv.child)?;
        let idx = decls.iter().position(|d| d.name == iv.child).unwrap();
        if matches!(decl.kind, VarKind::Decision { .. }) {
            decls[idx].kind = VarKind::Chance;
            allowed.remove(&iv.child);
        }
        let parents = match &iv.new_parents {
            Some(ps) => {
                for p in ps {
                    m.decl(p)?;
                }
                edges.retain(|(_, b)| b != &iv.child);
                for p in ps {
                    edges.push((p.clone(), iv.child.clone()));
                }
                ps.clone()
            }
            None => m.graph.parents(&iv.child)?,
        };
        // CPD parent order must match graph order (sorted by declaration).
        let graph_order: Vec<String> = decls
            .iter()
            .map(|d| d.name.clone())
            .filter(|n| parents.contains(n))
            .collect();
        let table = if graph_order == parents {
            iv.table.clone()
        } else {
            let dims: Vec<usize> =
                parents.iter().map(|p| m.domain(p).map(|d| d.len())).collect::<Result<_>>()?;
            let new_dims: Vec<usize> = graph_order
                .iter()
                .map(|p| m.domain(p).map(|d| d.len()))
                .collect::<Result<_>>()?;
            let pos: Vec<usize> = parents
                .iter()
                .map(|p| graph_order.iter().position(|x| x == p).unwrap())
                .collect();
            (0..context_count(&new_dims))
                .map(|r| {
                    let digits = digits_of(&new_dims, r);
                    let old: Vec<usize> = pos.iter().map(|&p| digits[p]).collect();
                    iv.table[index_of(&dims, &old)].clone()
                })
                .collect()
        };
        cpds.insert(
            iv.child.clone(),
            Cpd { child: iv.child.clone(), parents: graph_order, table },
        );
    }
    let names: Vec<String> = decls.iter().map(|d| d.name.clone()).collect();
    let probe = crate::graph::Digraph::new(&names, &edges)?;
    if probe.find_cycle().is_some() {
        return Err(Error::CycleIntroduced(
            interventions.iter().map(|i| i.child.clone()).collect::<Vec<_>>().join(","),
        ));
    }
    GameModel::build(m.agents.clone(), decls, edges, cpds, m.level, allowed)
}
