//! Game models: variable declarations, CPD tables, levels, construction
//! checks, structural conversion, and restriction surgery.

use crate::graph::{Dag, NodeStyle};
use crate::rational::{rational_from_json, show_rational, Value, Q};
use crate::{Error, Result};
use num::{One, Zero};
use std::collections::{BTreeMap, BTreeSet};

pub type Assignment = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarKind {
    Chance,
    Decision { agent: String },
    Utility { agent: String },
    Exogenous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableDecl {
    pub name: String,
    pub kind: VarKind,
    pub domain: Vec<Value>,
}

/// Conditional probability table. Rows are indexed by the mixed-radix parent
/// context (first parent slowest), columns by the child's domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cpd {
    pub child: String,
    pub parents: Vec<String>,
    pub table: Vec<Vec<Q>>,
}

pub fn index_of(dims: &[usize], digits: &[usize]) -> usize {
    debug_assert_eq!(dims.len(), digits.len());
    let mut idx = 0;
    for (d, &digit) in dims.iter().zip(digits) {
        debug_assert!(digit < *d);
        idx = idx * d + digit;
    }
    idx
}

pub fn digits_of(dims: &[usize], mut idx: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for i in (0..dims.len()).rev() {
        out[i] = idx % dims[i];
        idx /= dims[i];
    }
    out
}

pub fn context_count(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl Cpd {
    pub fn deterministic(child: &str, parents: Vec<String>, rows: Vec<usize>, width: usize) -> Cpd {
        let table = rows
            .into_iter()
            .map(|k| {
                let mut row = vec![Q::zero(); width];
                row[k] = Q::one();
                row
            })
            .collect();
        Cpd { child: child.to_string(), parents, table }
    }

    pub fn is_deterministic(&self) -> bool {
        self.table.iter().all(|row| row.iter().filter(|p| !p.is_zero()).count() == 1)
    }

    /// Index of the single supported value in a degenerate row.
    pub fn forced_value(&self, row: usize) -> Option<usize> {
        let mut found = None;
        for (i, p) in self.table[row].iter().enumerate() {
            if !p.is_zero() {
                if found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Causal,
    Structural,
}

/// A (structural) causal game: agents, typed variables over a DAG, CPD
/// parameters for every non-decision variable, and optional restrictions on
/// the pure rules available at each decision.
#[derive(Debug, Clone)]
pub struct GameModel {
    pub agents: Vec<String>,
    pub decls: Vec<VariableDecl>,
    pub graph: Dag,
    pub cpds: BTreeMap<String, Cpd>,
    pub level: Level,
    /// Per decision: an optional explicit list of pure rules, each rule given
    /// as one action index per parent context.
    pub allowed_rules: BTreeMap<String, Vec<Vec<usize>>>,
}

impl GameModel {
    pub fn build(
        agents: Vec<String>,
        decls: Vec<VariableDecl>,
        edges: Vec<(String, String)>,
        cpds: BTreeMap<String, Cpd>,
        level: Level,
        allowed_rules: BTreeMap<String, Vec<Vec<usize>>>,
    ) -> Result<GameModel> {
        let names: Vec<String> = decls.iter().map(|d| d.name.clone()).collect();
        let graph = Dag::new(&names, &edges)?;
        let m = GameModel { agents, decls, graph, cpds, level, allowed_rules };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for d in &self.decls {
            if !seen.insert(&d.name) {
                return Err(Error::InvalidModel(format!("duplicate variable {}", d.name)));
            }
            if d.domain.is_empty() {
                return Err(Error::InvalidModel(format!("{} has an empty domain", d.name)));
            }
            let mut dv = BTreeSet::new();
            for v in &d.domain {
                if !dv.insert(v) {
                    return Err(Error::InvalidModel(format!("{} repeats domain value {v}", d.name)));
                }
            }
            match &d.kind {
                VarKind::Decision { agent } | VarKind::Utility { agent } => {
                    if !self.agents.contains(agent) {
                        return Err(Error::InvalidModel(format!(
                            "{} belongs to undeclared agent {agent}",
                            d.name
                        )));
                    }
                }
                _ => {}
            }
        }
        for d in &self.decls {
            match &d.kind {
                VarKind::Decision { .. } => {
                    if self.cpds.contains_key(&d.name) {
                        return Err(Error::InvalidModel(format!(
                            "decision {} must not carry a CPD",
                            d.name
                        )));
                    }
                }
                VarKind::Utility { .. } => {
                    if !self.graph.children(&d.name)?.is_empty() {
                        return Err(Error::UtilityHasChild(d.name.clone()));
                    }
                    if d.domain.iter().any(|v| v.as_num().is_none()) {
                        return Err(Error::InvalidModel(format!(
                            "utility {} has a non-numeric domain value",
                            d.name
                        )));
                    }
                    self.check_cpd(&d.name)?;
                }
                VarKind::Chance => self.check_cpd(&d.name)?,
                VarKind::Exogenous => {
                    if !self.graph.parents(&d.name)?.is_empty() {
                        return Err(Error::StructuralDiscipline(
                            d.name.clone(),
                            "exogenous variables must be parentless".into(),
                        ));
                    }
                    self.check_cpd(&d.name)?;
                }
            }
        }
        if self.level == Level::Structural {
            for d in &self.decls {
                let endo = matches!(d.kind, VarKind::Chance | VarKind::Utility { .. });
                if endo && !self.cpds[&d.name].is_deterministic() {
                    return Err(Error::StructuralDiscipline(
                        d.name.clone(),
                        "endogenous variables must be deterministic at the structural level".into(),
                    ));
                }
            }
        }
        for (dname, rules) in &self.allowed_rules {
            let decl = self.decl(dname)?;
            if !matches!(decl.kind, VarKind::Decision { .. }) {
                return Err(Error::InvalidModel(format!("allowed rules listed for non-decision {dname}")));
            }
            let n_ctx = context_count(&self.parent_dims(dname)?);
            if rules.is_empty() {
                return Err(Error::InvalidModel(format!("empty rule list for {dname}")));
            }
            for rule in rules {
                if rule.len() != n_ctx || rule.iter().any(|&a| a >= decl.domain.len()) {
                    return Err(Error::InvalidModel(format!("malformed rule for {dname}")));
                }
            }
        }
        Ok(())
    }

    fn check_cpd(&self, v: &str) -> Result<()> {
        let cpd = self.cpds.get(v).ok_or_else(|| Error::MissingCpd(v.to_string()))?;
        let parents = self.graph.parents(v)?;
        if cpd.parents != parents {
            return Err(Error::InvalidModel(format!(
                "CPD parents for {v} are {:?}, graph says {:?}",
                cpd.parents, parents
            )));
        }
        let dims = self.parent_dims(v)?;
        let width = self.domain(v)?.len();
        if cpd.table.len() != context_count(&dims) {
            return Err(Error::InvalidModel(format!(
                "CPD for {v} has {} rows, expected {}",
                cpd.table.len(),
                context_count(&dims)
            )));
        }
        for (r, row) in cpd.table.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidModel(format!("CPD row width mismatch for {v}")));
            }
            if row.iter().any(|p| p < &Q::zero()) {
                return Err(Error::InvalidModel(format!("negative probability in CPD for {v}")));
            }
            let sum: Q = row.iter().fold(Q::zero(), |a, b| a + b);
            if !sum.is_one() {
                return Err(Error::RowNotNormalized(v.to_string(), self.context_key(v, r)?));
            }
        }
        Ok(())
    }

    pub fn decl(&self, v: &str) -> Result<&VariableDecl> {
        self.decls
            .iter()
            .find(|d| d.name == v)
            .ok_or_else(|| Error::UnknownNode(v.to_string()))
    }

    pub fn domain(&self, v: &str) -> Result<&[Value]> {
        Ok(&self.decl(v)?.domain)
    }

    pub fn val_idx(&self, v: &str, value: &Value) -> Result<usize> {
        self.domain(v)?
            .iter()
            .position(|x| x == value)
            .ok_or_else(|| Error::InvalidModel(format!("{value} is not in the domain of {v}")))
    }

    pub fn kind(&self, v: &str) -> Result<&VarKind> {
        Ok(&self.decl(v)?.kind)
    }

    pub fn agent_of(&self, v: &str) -> Option<&str> {
        match &self.decl(v).ok()?.kind {
            VarKind::Decision { agent } | VarKind::Utility { agent } => Some(agent),
            _ => None,
        }
    }

    pub fn decisions(&self) -> Vec<String> {
        self.decls
            .iter()
            .filter(|d| matches!(d.kind, VarKind::Decision { .. }))
            .map(|d| d.name.clone())
            .collect()
    }

    pub fn decisions_of(&self, agent: &str) -> Vec<String> {
        self.decls
            .iter()
            .filter(|d| matches!(&d.kind, VarKind::Decision { agent: a } if a == agent))
            .map(|d| d.name.clone())
            .collect()
    }

    pub fn utilities_of(&self, agent: &str) -> Vec<String> {
        self.decls
            .iter()
            .filter(|d| matches!(&d.kind, VarKind::Utility { agent: a } if a == agent))
            .map(|d| d.name.clone())
            .collect()
    }

    pub fn utility_vars(&self) -> Vec<String> {
        self.decls
            .iter()
            .filter(|d| matches!(d.kind, VarKind::Utility { .. }))
            .map(|d| d.name.clone())
            .collect()
    }

    pub fn chance_vars(&self) -> Vec<String> {
        self.decls
            .iter()
            .filter(|d| matches!(d.kind, VarKind::Chance))
            .map(|d| d.name.clone())
            .collect()
    }

    pub fn exogenous_vars(&self) -> Vec<String> {
        self.decls
            .iter()
            .filter(|d| matches!(d.kind, VarKind::Exogenous))
            .map(|d| d.name.clone())
            .collect()
    }

    pub fn parent_dims(&self, v: &str) -> Result<Vec<usize>> {
        self.graph
            .parents(v)?
            .iter()
            .map(|p| Ok(self.domain(p)?.len()))
            .collect()
    }

    /// "P1=v1,P2=v2" in graph parent order; "" for a parentless variable.
    pub fn context_key(&self, v: &str, ctx: usize) -> Result<String> {
        let parents = self.graph.parents(v)?;
        let dims = self.parent_dims(v)?;
        let digits = digits_of(&dims, ctx);
        Ok(parents
            .iter()
            .zip(&digits)
            .map(|(p, &d)| format!("{p}={}", self.domain(p).unwrap()[d]))
            .collect::<Vec<_>>()
            .join(","))
    }

    pub fn parse_context_key(&self, v: &str, key: &str) -> Result<usize> {
        let parents = self.graph.parents(v)?;
        let dims = self.parent_dims(v)?;
        let mut by_name: BTreeMap<String, Value> = BTreeMap::new();
        let key = key.trim();
        if !key.is_empty() {
            for part in key.split(',') {
                let (name, val) = part
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidModel(format!("bad context term {part:?}")))?;
                by_name.insert(name.trim().to_string(), Value::parse(val.trim()));
            }
        }
        if by_name.len() != parents.len() {
            return Err(Error::InvalidModel(format!(
                "context {key:?} for {v} must assign exactly its parents {parents:?}"
            )));
        }
        let mut digits = Vec::with_capacity(parents.len());
        for p in &parents {
            let val = by_name
                .get(p)
                .ok_or_else(|| Error::InvalidModel(format!("context {key:?} misses parent {p}")))?;
            digits.push(self.val_idx(p, val)?);
        }
        Ok(index_of(&dims, &digits))
    }

    /// Splits every stochastic CPD into an exogenous parent carrying its
    /// randomness plus a deterministic endogenous CPD; deterministic CPDs get
    /// a degenerate single-value parent. Decisions are untouched.
    pub fn to_structural(&self) -> Result<GameModel> {
        if self.level == Level::Structural {
            return Ok(self.clone());
        }
        let mut decls = Vec::new();
        let mut edges = self.graph.edges();
        let mut cpds: BTreeMap<String, Cpd> = BTreeMap::new();
        let mut stash: BTreeMap<String, (String, Vec<Vec<usize>>, Vec<usize>)> = BTreeMap::new();
        for d in &self.decls {
            if !matches!(d.kind, VarKind::Chance | VarKind::Utility { .. }) {
                decls.push(d.clone());
                if let Some(c) = self.cpds.get(&d.name) {
                    cpds.insert(d.name.clone(), c.clone());
                }
                continue;
            }
            let cpd = &self.cpds[&d.name];
            let width = d.domain.len();
            // Per-context supports; the exogenous domain is their product.
            let supports: Vec<Vec<usize>> = cpd
                .table
                .iter()
                .map(|row| (0..width).filter(|&i| !row[i].is_zero()).collect())
                .collect();
            let exo_name = format!("eps_{}", d.name);
            let combos = supports.iter().map(|s| s.len()).product::<usize>();
            let mut exo_domain = Vec::with_capacity(combos);
            let mut exo_probs = Vec::with_capacity(combos);
            let sup_dims: Vec<usize> = supports.iter().map(|s| s.len()).collect();
            for k in 0..combos {
                let picks = digits_of(&sup_dims, k);
                let vals: Vec<usize> =
                    picks.iter().zip(&supports).map(|(&pi, s)| s[pi]).collect();
                let label = vals
                    .iter()
                    .map(|&vi| d.domain[vi].to_string())
                    .collect::<Vec<_>>()
                    .join(";");
                exo_domain.push(Value::Sym(label));
                let p = vals
                    .iter()
                    .enumerate()
                    .fold(Q::one(), |acc, (ctx, &vi)| acc * cpd.table[ctx][vi].clone());
                exo_probs.push(p);
            }
            decls.push(VariableDecl {
                name: exo_name.clone(),
                kind: VarKind::Exogenous,
                domain: exo_domain.clone(),
            });
            decls.push(d.clone());
            cpds.insert(
                exo_name.clone(),
                Cpd { child: exo_name.clone(), parents: vec![], table: vec![exo_probs] },
            );
            edges.push((exo_name.clone(), d.name.clone()));
            // The deterministic table is filled in after the graph is rebuilt
            // so parent order matches the new graph.
            stash.insert(d.name.clone(), (exo_name, supports, sup_dims));
        }
        let names: Vec<String> = decls.iter().map(|d| d.name.clone()).collect();
        let graph = Dag::new(&names, &edges)?;
        for d in &decls {
            if let Some((exo_name, supports, sup_dims)) = stash.get(&d.name) {
                let parents = graph.parents(&d.name)?;
                let old_parents = self.graph.parents(&d.name)?;
                let width = d.domain.len();
                let dims: Vec<usize> = parents
                    .iter()
                    .map(|p| {
                        decls
                            .iter()
                            .find(|x| &x.name == p)
                            .map(|x| x.domain.len())
                            .unwrap()
                    })
                    .collect();
                let old_dims: Vec<usize> =
                    old_parents.iter().map(|p| self.domain(p).unwrap().len()).collect();
                let exo_pos = parents.iter().position(|p| p == exo_name).unwrap();
                let n_rows = context_count(&dims);
                let mut rows = Vec::with_capacity(n_rows);
                for r in 0..n_rows {
                    let digits = digits_of(&dims, r);
                    let exo_idx = digits[exo_pos];
                    let picks = digits_of(sup_dims, exo_idx);
                    let mut old_digits = Vec::with_capacity(old_parents.len());
                    for p in &old_parents {
                        let pos = parents.iter().position(|x| x == p).unwrap();
                        old_digits.push(digits[pos]);
                    }
                    let old_ctx = index_of(&old_dims, &old_digits);
                    rows.push(supports[old_ctx][picks[old_ctx]]);
                }
                let cpd = Cpd::deterministic(&d.name, parents, rows, width);
                cpds.insert(d.name.clone(), cpd);
            }
        }
        GameModel::build(
            self.agents.clone(),
            decls,
            graph.edges(),
            cpds,
            Level::Structural,
            self.allowed_rules.clone(),
        )
    }

    /// Keeps `keep`, fixing every dropped parent of a kept variable to its
    /// value in `context`. CPD rows are sliced accordingly.
    pub fn restrict(&self, keep: &BTreeSet<String>, context: &Assignment) -> Result<GameModel> {
        for v in keep {
            self.decl(v)?;
        }
        let mut decls = Vec::new();
        let mut cpds = BTreeMap::new();
        let mut allowed = BTreeMap::new();
        for d in &self.decls {
            if !keep.contains(&d.name) {
                continue;
            }
            decls.push(d.clone());
            let old_parents = self.graph.parents(&d.name)?;
            let kept_parents: Vec<String> =
                old_parents.iter().filter(|p| keep.contains(*p)).cloned().collect();
            let dropped: Vec<&String> =
                old_parents.iter().filter(|p| !keep.contains(*p)).collect();
            let mut fixed: BTreeMap<&String, usize> = BTreeMap::new();
            for p in &dropped {
                let val = context
                    .get(*p)
                    .ok_or_else(|| Error::ContextIncomplete((*p).clone()))?;
                fixed.insert(*p, self.val_idx(p, val)?);
            }
            let old_dims = self.parent_dims(&d.name)?;
            let kept_dims: Vec<usize> =
                kept_parents.iter().map(|p| self.domain(p).unwrap().len()).collect();
            let slice_row = |kept_ctx: usize| -> usize {
                let kept_digits = digits_of(&kept_dims, kept_ctx);
                let mut digits = Vec::with_capacity(old_parents.len());
                let mut ki = 0;
                for p in &old_parents {
                    if let Some(&f) = fixed.get(p) {
                        digits.push(f);
                    } else {
                        digits.push(kept_digits[ki]);
                        ki += 1;
                    }
                }
                index_of(&old_dims, &digits)
            };
            let n_ctx = context_count(&kept_dims);
            if let Some(cpd) = self.cpds.get(&d.name) {
                let table: Vec<Vec<Q>> =
                    (0..n_ctx).map(|c| cpd.table[slice_row(c)].clone()).collect();
                cpds.insert(
                    d.name.clone(),
                    Cpd { child: d.name.clone(), parents: kept_parents.clone(), table },
                );
            }
            if let Some(rules) = self.allowed_rules.get(&d.name) {
                let mut sliced: Vec<Vec<usize>> = rules
                    .iter()
                    .map(|rule| (0..n_ctx).map(|c| rule[slice_row(c)]).collect())
                    .collect();
                sliced.sort();
                sliced.dedup();
                allowed.insert(d.name.clone(), sliced);
            }
        }
        let edges: Vec<(String, String)> = self
            .graph
            .edges()
            .into_iter()
            .filter(|(a, b)| keep.contains(a) && keep.contains(b))
            .collect();
        let agents: Vec<String> = self
            .agents
            .iter()
            .filter(|a| {
                decls.iter().any(|d| {
                    matches!(&d.kind, VarKind::Decision { agent } | VarKind::Utility { agent } if agent == *a)
                })
            })
            .cloned()
            .collect();
        GameModel::build(agents, decls, edges, cpds, self.level, allowed)
    }

    pub fn node_style(&self, v: &str) -> NodeStyle {
        match self.kind(v) {
            Ok(VarKind::Decision { .. }) => NodeStyle::Decision,
            Ok(VarKind::Utility { .. }) => NodeStyle::Utility,
            _ => NodeStyle::Chance,
        }
    }

    pub fn to_dot(&self) -> String {
        self.graph.to_dot(&|v| self.node_style(v), "game")
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut vars = Vec::new();
        for d in &self.decls {
            let mut v = serde_json::Map::new();
            v.insert("name".into(), d.name.clone().into());
            let (kind, agent) = match &d.kind {
                VarKind::Chance => ("chance", None),
                VarKind::Decision { agent } => ("decision", Some(agent.clone())),
                VarKind::Utility { agent } => ("utility", Some(agent.clone())),
                VarKind::Exogenous => ("exogenous", None),
            };
            v.insert("kind".into(), kind.into());
            if let Some(a) = agent {
                v.insert("agent".into(), a.into());
            }
            v.insert(
                "domain".into(),
                d.domain.iter().map(|x| serde_json::Value::from(x.to_string())).collect(),
            );
            vars.push(serde_json::Value::Object(v));
        }
        let edges: Vec<serde_json::Value> = self
            .graph
            .edges()
            .into_iter()
            .map(|(a, b)| serde_json::Value::from(vec![a, b]))
            .collect();
        let mut cpds = serde_json::Map::new();
        for (name, cpd) in &self.cpds {
            let mut rows = serde_json::Map::new();
            for (r, row) in cpd.table.iter().enumerate() {
                let key = self.context_key(name, r).unwrap_or_default();
                let mut cells = serde_json::Map::new();
                let dom = self.domain(name).unwrap();
                for (i, p) in row.iter().enumerate() {
                    if !p.is_zero() {
                        cells.insert(dom[i].to_string(), show_rational(p).into());
                    }
                }
                rows.insert(key, serde_json::Value::Object(cells));
            }
            cpds.insert(name.clone(), serde_json::Value::Object(rows));
        }
        let mut out = serde_json::Map::new();
        out.insert("agents".into(), self.agents.clone().into());
        out.insert("variables".into(), serde_json::Value::Array(vars));
        out.insert("edges".into(), serde_json::Value::Array(edges));
        out.insert("cpds".into(), serde_json::Value::Object(cpds));
        out.insert(
            "level".into(),
            match self.level {
                Level::Causal => "causal",
                Level::Structural => "structural",
            }
            .into(),
        );
        if !self.allowed_rules.is_empty() {
            let mut ar = serde_json::Map::new();
            for (d, rules) in &self.allowed_rules {
                let dom = self.domain(d).unwrap();
                let list: Vec<serde_json::Value> = rules
                    .iter()
                    .map(|rule| {
                        serde_json::Value::from(
                            rule.iter().map(|&a| dom[a].to_string()).collect::<Vec<_>>(),
                        )
                    })
                    .collect();
                ar.insert(d.clone(), serde_json::Value::Array(list));
            }
            out.insert("allowed_rules".into(), serde_json::Value::Object(ar));
        }
        serde_json::Value::Object(out)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<GameModel> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidModel("top level must be an object".into()))?;
        for k in obj.keys() {
            if !["agents", "variables", "edges", "cpds", "level", "allowed_rules"].contains(&k.as_str()) {
                return Err(Error::InvalidModel(format!("unknown key {k:?}")));
            }
        }
        let agents: Vec<String> = obj
            .get("agents")
            .and_then(|a| a.as_array())
            .ok_or_else(|| Error::InvalidModel("missing agents".into()))?
            .iter()
            .map(|a| a.as_str().map(str::to_string).ok_or_else(|| Error::InvalidModel("agent ids must be strings".into())))
            .collect::<Result<_>>()?;
        let mut decls = Vec::new();
        for var in obj
            .get("variables")
            .and_then(|a| a.as_array())
            .ok_or_else(|| Error::InvalidModel("missing variables".into()))?
        {
            let vo = var
                .as_object()
                .ok_or_else(|| Error::InvalidModel("variable entries must be objects".into()))?;
            for k in vo.keys() {
                if !["name", "kind", "agent", "domain"].contains(&k.as_str()) {
                    return Err(Error::InvalidModel(format!("unknown variable key {k:?}")));
                }
            }
            let name = vo
                .get("name")
                .and_then(|x| x.as_str())
                .ok_or_else(|| Error::InvalidModel("variable missing name".into()))?
                .to_string();
            let kind_s = vo
                .get("kind")
                .and_then(|x| x.as_str())
                .ok_or_else(|| Error::InvalidModel(format!("{name} missing kind")))?;
            let agent = vo.get("agent").and_then(|x| x.as_str()).map(str::to_string);
            let kind = match (kind_s, agent) {
                ("chance", None) => VarKind::Chance,
                ("exogenous", None) => VarKind::Exogenous,
                ("decision", Some(a)) => VarKind::Decision { agent: a },
                ("utility", Some(a)) => VarKind::Utility { agent: a },
                _ => {
                    return Err(Error::InvalidModel(format!(
                        "{name}: kind {kind_s:?} and agent field do not match"
                    )))
                }
            };
            let domain: Vec<Value> = vo
                .get("domain")
                .and_then(|x| x.as_array())
                .ok_or_else(|| Error::InvalidModel(format!("{name} missing domain")))?
                .iter()
                .map(|x| match x {
                    serde_json::Value::String(s) => Ok(Value::parse(s)),
                    serde_json::Value::Number(n) => {
                        rational_from_json(&serde_json::Value::Number(n.clone())).map(Value::Num)
                    }
                    other => Err(Error::InvalidModel(format!("{name}: bad domain literal {other}"))),
                })
                .collect::<Result<_>>()?;
            decls.push(VariableDecl { name, kind, domain });
        }
        let edges: Vec<(String, String)> = obj
            .get("edges")
            .and_then(|a| a.as_array())
            .ok_or_else(|| Error::InvalidModel("missing edges".into()))?
            .iter()
            .map(|e| {
                let pair = e.as_array().filter(|p| p.len() == 2);
                match pair {
                    Some(p) => match (p[0].as_str(), p[1].as_str()) {
                        (Some(a), Some(b)) => Ok((a.to_string(), b.to_string())),
                        _ => Err(Error::InvalidModel("edge endpoints must be strings".into())),
                    },
                    None => Err(Error::InvalidModel("edges must be 2-element arrays".into())),
                }
            })
            .collect::<Result<_>>()?;
        let level = match obj.get("level").and_then(|x| x.as_str()) {
            Some("structural") => Level::Structural,
            Some("causal") | None => Level::Causal,
            Some(other) => return Err(Error::InvalidModel(format!("unknown level {other:?}"))),
        };

        // CPDs need the graph for context parsing, so build a probe first.
        let names: Vec<String> = decls.iter().map(|d| d.name.clone()).collect();
        let graph = Dag::new(&names, &edges)?;
        let probe = GameModel {
            agents: agents.clone(),
            decls: decls.clone(),
            graph,
            cpds: BTreeMap::new(),
            level,
            allowed_rules: BTreeMap::new(),
        };
        let mut cpds = BTreeMap::new();
        if let Some(cpd_obj) = obj.get("cpds") {
            let cpd_obj = cpd_obj
                .as_object()
                .ok_or_else(|| Error::InvalidModel("cpds must be an object".into()))?;
            for (child, rows_v) in cpd_obj {
                let decl = probe.decl(child)?;
                let rows_v = rows_v
                    .as_object()
                    .ok_or_else(|| Error::InvalidModel(format!("CPD for {child} must be an object")))?;
                let parents = probe.graph.parents(child)?;
                let n_ctx = context_count(&probe.parent_dims(child)?);
                let width = decl.domain.len();
                let mut table = vec![None; n_ctx];
                for (key, cells) in rows_v {
                    let ctx = probe.parse_context_key(child, key)?;
                    let cells = cells.as_object().ok_or_else(|| {
                        Error::InvalidModel(format!("CPD row {key:?} for {child} must be an object"))
                    })?;
                    let mut row = vec![Q::zero(); width];
                    for (val_s, p) in cells {
                        let vi = probe.val_idx(child, &Value::parse(val_s))?;
                        row[vi] = rational_from_json(p)?;
                    }
                    if table[ctx].replace(row).is_some() {
                        return Err(Error::InvalidModel(format!(
                            "duplicate CPD row {key:?} for {child}"
                        )));
                    }
                }
                let table: Vec<Vec<Q>> = table
                    .into_iter()
                    .enumerate()
                    .map(|(r, row)| {
                        row.ok_or_else(|| {
                            Error::InvalidModel(format!(
                                "CPD for {child} missing context {}",
                                probe.context_key(child, r).unwrap_or_default()
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                cpds.insert(child.clone(), Cpd { child: child.clone(), parents, table });
            }
        }
        let mut allowed_rules = BTreeMap::new();
        if let Some(ar) = obj.get("allowed_rules") {
            let ar = ar
                .as_object()
                .ok_or_else(|| Error::InvalidModel("allowed_rules must be an object".into()))?;
            for (d, rules_v) in ar {
                let decl = probe.decl(d)?;
                let rules_v = rules_v
                    .as_array()
                    .ok_or_else(|| Error::InvalidModel(format!("allowed_rules[{d}] must be an array")))?;
                let mut rules = Vec::new();
                for rule_v in rules_v {
                    let actions = rule_v.as_array().ok_or_else(|| {
                        Error::InvalidModel(format!("each rule for {d} must be an array"))
                    })?;
                    let rule: Vec<usize> = actions
                        .iter()
                        .map(|a| {
                            let s = a
                                .as_str()
                                .map(str::to_string)
                                .unwrap_or_else(|| a.to_string());
                            decl.domain
                                .iter()
                                .position(|x| *x == Value::parse(&s))
                                .ok_or_else(|| {
                                    Error::InvalidModel(format!("{s} not in domain of {d}"))
                                })
                        })
                        .collect::<Result<_>>()?;
                    rules.push(rule);
                }
                allowed_rules.insert(d.clone(), rules);
            }
        }
        GameModel::build(agents, decls, edges, cpds, level, allowed_rules)
    }

    pub fn from_json_str(s: &str) -> Result<GameModel> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        GameModel::from_json(&v)
    }

    pub fn load(path: &std::path::Path) -> Result<GameModel> {
        let s = std::fs::read_to_string(path)?;
        GameModel::from_json_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qi};

    fn coin() -> GameModel {
        GameModel::build(
            vec!["1".into()],
            vec![
                VariableDecl {
                    name: "X".into(),
                    kind: VarKind::Chance,
                    domain: vec![Value::sym("h"), Value::sym("t")],
                },
                VariableDecl {
                    name: "D".into(),
                    kind: VarKind::Decision { agent: "1".into() },
                    domain: vec![Value::sym("a"), Value::sym("b")],
                },
                VariableDecl {
                    name: "U".into(),
                    kind: VarKind::Utility { agent: "1".into() },
                    domain: vec![Value::num(qi(0)), Value::num(qi(1))],
                },
            ],
            vec![("X".into(), "D".into()), ("X".into(), "U".into()), ("D".into(), "U".into())],
            [
                (
                    "X".to_string(),
                    Cpd {
                        child: "X".into(),
                        parents: vec![],
                        table: vec![vec![q(1, 2), q(1, 2)]],
                    },
                ),
                (
                    "U".to_string(),
                    Cpd::deterministic("U", vec!["X".into(), "D".into()], vec![1, 0, 0, 1], 2),
                ),
            ]
            .into(),
            Level::Causal,
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn build_and_domains() {
        let m = coin();
        assert_eq!(m.decisions(), vec!["D"]);
        assert_eq!(m.utilities_of("1"), vec!["U"]);
        assert_eq!(m.context_key("U", 1).unwrap(), "X=h,D=b");
        assert_eq!(m.parse_context_key("U", "D=b,X=h").unwrap(), 1);
    }

    #[test]
    fn rejects_bad_rows() {
        let mut m = coin();
        m.cpds.get_mut("X").unwrap().table[0][0] = q(1, 3);
        assert!(matches!(m.validate(), Err(Error::RowNotNormalized(_, _))));
    }

    #[test]
    fn structural_split() {
        let m = coin().to_structural().unwrap();
        assert_eq!(m.level, Level::Structural);
        assert!(m.exogenous_vars().contains(&"eps_X".to_string()));
        assert!(m.cpds["X"].is_deterministic());
        assert!(m.cpds["U"].is_deterministic());
        // The degenerate parent for the deterministic U carries one value.
        assert_eq!(m.domain("eps_U").unwrap().len(), 1);
        assert_eq!(m.domain("eps_X").unwrap().len(), 2);
    }

    #[test]
    fn json_roundtrip() {
        let m = coin();
        let j = m.to_json();
        let back = GameModel::from_json(&j).unwrap();
        assert_eq!(back.decls, m.decls);
        assert_eq!(back.cpds, m.cpds);
        assert_eq!(back.graph.edges(), m.graph.edges());
    }

    #[test]
    fn restriction_slices() {
        let m = coin();
        let keep: BTreeSet<String> = ["D".to_string(), "U".to_string()].into();
        let ctx: Assignment = [("X".to_string(), Value::sym("h"))].into();
        let r = m.restrict(&keep, &ctx).unwrap();
        assert_eq!(r.graph.parents("U").unwrap(), vec!["D"]);
        assert_eq!(r.cpds["U"].table.len(), 2);
        assert_eq!(r.cpds["U"].forced_value(0), Some(1));
        let missing = m.restrict(&keep, &Assignment::new());
        assert!(matches!(missing, Err(Error::ContextIncomplete(_))));
    }
}
