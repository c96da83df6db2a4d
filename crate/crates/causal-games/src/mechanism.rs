//! Mechanised graphs, rationality relations, relevance graphs, graphical
//! reachability criteria, and recall classification.
//!
//! Mechanism nodes are named `Pi::<D>` for decision-rule variables and
//! `Theta::<V>` for parameter variables. The object-level subgraph is never
//! altered; mechanism edges only ever point into rule nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::graph::Digraph;
use crate::model::{GameModel, VarKind};
use crate::policy::{enumerate_pure_profiles, has_perfect_recall, PolicyProfile};
use crate::{Error, Result};

/// Name of the mechanism node attached to an object variable.
pub fn mech_name(m: &GameModel, v: &str) -> Result<String> {
    Ok(match m.kind(v)? {
        VarKind::Decision { .. } => format!("Pi::{v}"),
        _ => format!("Theta::{v}"),
    })
}

pub fn rule_node(d: &str) -> String {
    format!("Pi::{d}")
}

/// A conditional-independence query template P(targets | conditioners) used
/// to derive reachability from requisite-node checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTemplate {
    pub targets: Vec<String>,
    pub conditioners: Vec<String>,
}

/// Outcome-level acceptance test for custom relations: does the profile's
/// rule at this decision satisfy the relation?
pub type ResponseTest = fn(&GameModel, &PolicyProfile, &str) -> Result<bool>;

#[derive(Debug, Clone)]
pub enum RelationKind {
    BestResponse,
    SubgamePerfect,
    /// Query set drives relevance (requisite-node checks); the predicate is
    /// only consulted when outcomes are evaluated.
    Custom {
        queries: Vec<QueryTemplate>,
        accepts: ResponseTest,
    },
}

#[derive(Debug, Clone)]
pub struct RationalityRelation {
    pub decision: String,
    pub kind: RelationKind,
}

pub fn best_response_relations(m: &GameModel) -> Vec<RationalityRelation> {
    m.decisions()
        .into_iter()
        .map(|decision| RationalityRelation { decision, kind: RelationKind::BestResponse })
        .collect()
}

pub fn subgame_perfect_relations(m: &GameModel) -> Vec<RationalityRelation> {
    m.decisions()
        .into_iter()
        .map(|decision| RationalityRelation { decision, kind: RelationKind::SubgamePerfect })
        .collect()
}

/// Reachability criterion used for relevance edges and subdiagram closure.
#[derive(Debug, Clone)]
pub enum Reachability {
    S,
    Br,
    Custom(BTreeMap<String, Vec<QueryTemplate>>),
}

impl Reachability {
    pub fn for_relations(relations: &[RationalityRelation]) -> Reachability {
        // Mixed relation sets fall back to the most inclusive built-in
        // criterion present; custom queries win when every relation is
        // custom.
        if relations.iter().all(|r| matches!(r.kind, RelationKind::Custom { .. })) {
            let map = relations
                .iter()
                .map(|r| match &r.kind {
                    RelationKind::Custom { queries, .. } => (r.decision.clone(), queries.clone()),
                    _ => unreachable!(),
                })
                .collect();
            Reachability::Custom(map)
        } else if relations.iter().any(|r| matches!(r.kind, RelationKind::BestResponse)) {
            Reachability::Br
        } else {
            Reachability::S
        }
    }
}

fn own_downstream_utilities(m: &GameModel, d: &str) -> Result<BTreeSet<String>> {
    let agent = match m.kind(d)? {
        VarKind::Decision { agent } => agent.clone(),
        _ => return Err(Error::UnknownNode(format!("{d} is not a decision"))),
    };
    let desc = m.graph.descendants(d)?;
    Ok(m.utilities_of(&agent).into_iter().filter(|u| desc.contains(u)).collect())
}

/// Is the mechanism of `source` s-relevant to the rule of `d`? True iff the
/// mechanism is d-connected to the agent's downstream utilities given the
/// decision and its parents. Decisions with no downstream own utility are
/// universally indifferent and nothing is relevant to them.
pub fn s_reachable(m: &GameModel, source: &str, d: &str) -> Result<bool> {
    m.decl(source)?;
    if source == d {
        return Ok(false);
    }
    let targets = own_downstream_utilities(m, d)?;
    if targets.is_empty() {
        return Ok(false);
    }
    let mut cond: BTreeSet<String> = m.graph.parents(d)?.into_iter().collect();
    cond.insert(d.to_string());
    m.graph.requisite_node(source, &targets, &cond)
}

/// Best-response relevance: the s-criterion, or dependence of the decision
/// context distribution on the source mechanism.
pub fn r_br_reachable(m: &GameModel, source: &str, d: &str) -> Result<bool> {
    m.decl(source)?;
    if source == d {
        return Ok(false);
    }
    if own_downstream_utilities(m, d)?.is_empty() {
        return Ok(false);
    }
    if s_reachable(m, source, d)? {
        return Ok(true);
    }
    let pa: BTreeSet<String> = m.graph.parents(d)?.into_iter().collect();
    if pa.is_empty() {
        return Ok(false);
    }
    m.graph.requisite_node(source, &pa, &BTreeSet::new())
}

/// Reachability from a caller-supplied query set: the source mechanism is
/// relevant iff it is a requisite node for some listed query.
pub fn custom_reachable(
    m: &GameModel,
    queries: &[QueryTemplate],
    source: &str,
    d: &str,
) -> Result<bool> {
    m.decl(source)?;
    if source == d {
        return Ok(false);
    }
    for q in queries {
        let x: BTreeSet<String> = q.targets.iter().cloned().collect();
        if x.is_empty() {
            continue;
        }
        let y: BTreeSet<String> = q.conditioners.iter().cloned().collect();
        if m.graph.requisite_node(source, &x, &y)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// The query set whose requisite nodes are exactly the s-relevant mechanisms.
pub fn s_query_templates(m: &GameModel, d: &str) -> Result<Vec<QueryTemplate>> {
    let targets = own_downstream_utilities(m, d)?;
    if targets.is_empty() {
        return Ok(vec![]);
    }
    let mut conditioners: Vec<String> = m.graph.parents(d)?;
    conditioners.push(d.to_string());
    Ok(vec![QueryTemplate { targets: targets.into_iter().collect(), conditioners }])
}

/// The query set characterising best-response relevance.
pub fn br_query_templates(m: &GameModel, d: &str) -> Result<Vec<QueryTemplate>> {
    let mut qs = s_query_templates(m, d)?;
    if qs.is_empty() {
        return Ok(qs);
    }
    let pa = m.graph.parents(d)?;
    if !pa.is_empty() {
        qs.push(QueryTemplate { targets: pa, conditioners: vec![] });
    }
    Ok(qs)
}

pub fn reaches(m: &GameModel, crit: &Reachability, source: &str, d: &str) -> Result<bool> {
    match crit {
        Reachability::S => s_reachable(m, source, d),
        Reachability::Br => r_br_reachable(m, source, d),
        Reachability::Custom(map) => {
            let queries = map.get(d).map(|v| v.as_slice()).unwrap_or(&[]);
            custom_reachable(m, queries, source, d)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMode {
    Maximal,
    Minimal,
}

#[derive(Debug, Clone)]
pub struct MechanisedGraph {
    /// Object and mechanism nodes; mechanism-to-object edges plus mechanism
    /// edges into rule nodes.
    pub graph: Digraph,
    pub mech_of: BTreeMap<String, String>,
    pub mech_edges: Vec<(String, String)>,
    /// Edges a maximal graph would carry that the chosen mode dropped.
    pub pruned: Vec<(String, String)>,
}

impl MechanisedGraph {
    /// The independent mechanised graph: every object variable gains a
    /// parentless mechanism node and there are no mechanism edges.
    pub fn independent(m: &GameModel) -> Result<MechanisedGraph> {
        build_mechanised(m, |_, _| Ok(false), true)
    }

    pub fn to_dot(&self, m: &GameModel, name: &str) -> String {
        let mech: BTreeSet<&String> = self.mech_of.values().collect();
        let mut s = self.graph.to_dot(
            &|n| {
                if mech.contains(&n.to_string()) {
                    crate::graph::NodeStyle::Mechanism
                } else {
                    m.node_style(n)
                }
            },
            name,
        );
        if !self.pruned.is_empty() {
            s.truncate(s.trim_end_matches("}\n").len());
            for (a, b) in &self.pruned {
                let _ = writeln!(s, "  \"{a}\" -> \"{b}\" [style=dotted];");
            }
            s.push_str("}\n");
        }
        s
    }
}

fn build_mechanised(
    m: &GameModel,
    mut edge: impl FnMut(&str, &str) -> Result<bool>,
    track_pruned: bool,
) -> Result<MechanisedGraph> {
    let object: Vec<String> = m.graph.nodes().to_vec();
    let mut nodes = object.clone();
    let mut edges: Vec<(String, String)> = m.graph.edges();
    let mut mech_of = BTreeMap::new();
    for v in &object {
        let mv = mech_name(m, v)?;
        nodes.push(mv.clone());
        edges.push((mv.clone(), v.clone()));
        mech_of.insert(v.clone(), mv);
    }
    let mut mech_edges = Vec::new();
    let mut pruned = Vec::new();
    for d in m.decisions() {
        let rule = rule_node(&d);
        for v in &object {
            if *v == d {
                continue;
            }
            if edge(v, &d)? {
                edges.push((mech_of[v].clone(), rule.clone()));
                mech_edges.push((mech_of[v].clone(), rule.clone()));
            } else if track_pruned {
                pruned.push((mech_of[v].clone(), rule.clone()));
            }
        }
    }
    Ok(MechanisedGraph { graph: Digraph::new(&nodes, &edges)?, mech_of, mech_edges, pruned })
}

/// Build the mechanised graph for a relation set. Maximal mode wires every
/// other mechanism into each rule node; minimal mode keeps exactly the edges
/// whose reachability criterion fires, recording the rest as pruned.
pub fn mechanise(
    m: &GameModel,
    relations: &[RationalityRelation],
    mode: EdgeMode,
) -> Result<MechanisedGraph> {
    let mut by_decision: BTreeMap<&str, &RationalityRelation> = BTreeMap::new();
    for r in relations {
        m.decl(&r.decision)?;
        if by_decision.insert(r.decision.as_str(), r).is_some() {
            return Err(Error::InvalidModel(format!("two relations for {}", r.decision)));
        }
    }
    for d in m.decisions() {
        if !by_decision.contains_key(d.as_str()) {
            return Err(Error::InvalidModel(format!("no relation for {d}")));
        }
    }
    build_mechanised(
        m,
        |v, d| match mode {
            EdgeMode::Maximal => Ok(true),
            EdgeMode::Minimal => match &by_decision[d].kind {
                RelationKind::BestResponse => r_br_reachable(m, v, d),
                RelationKind::SubgamePerfect => s_reachable(m, v, d),
                RelationKind::Custom { queries, .. } => custom_reachable(m, queries, v, d),
            },
        },
        mode == EdgeMode::Minimal,
    )
}

/// Relevance graph over all mechanism nodes: an edge into Pi::D marks a
/// mechanism the criterion deems relevant to D.
pub fn relevance_graph(m: &GameModel, crit: &Reachability) -> Result<Digraph> {
    let object: Vec<String> = m.graph.nodes().to_vec();
    let mut nodes = Vec::new();
    for v in &object {
        nodes.push(mech_name(m, v)?);
    }
    let mut edges = Vec::new();
    for d in m.decisions() {
        for v in &object {
            if *v != d && reaches(m, crit, v, &d)? {
                edges.push((mech_name(m, v)?, rule_node(&d)));
            }
        }
    }
    Digraph::new(&nodes, &edges)
}

/// Relevance restricted to decisions, named by the decisions themselves:
/// edge D' -> D iff D' is relevant to D. Sources-first topological order is
/// the backward-induction solve order.
pub fn decision_relevance(m: &GameModel, crit: &Reachability) -> Result<Digraph> {
    let ds = m.decisions();
    let mut edges = Vec::new();
    for d in &ds {
        for s in &ds {
            if s != d && reaches(m, crit, s, d)? {
                edges.push((s.clone(), d.clone()));
            }
        }
    }
    Digraph::new(&ds, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recall {
    Perfect,
    Sufficient,
    Insufficient,
}

/// Per-agent recall: perfect (an ordering where each later decision observes
/// the earlier's family), sufficient (the agent's own s-relevance subgraph is
/// acyclic), or insufficient.
pub fn recall(m: &GameModel) -> Result<BTreeMap<String, Recall>> {
    let rel = decision_relevance(m, &Reachability::S)?;
    let mut out = BTreeMap::new();
    for agent in &m.agents {
        let class = if has_perfect_recall(m, agent)? {
            Recall::Perfect
        } else {
            let own: BTreeSet<String> = m.decisions_of(agent).into_iter().collect();
            if rel.induced(&own)?.is_acyclic() {
                Recall::Sufficient
            } else {
                Recall::Insufficient
            }
        };
        out.insert(agent.clone(), class);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub enum PolicySpace {
    PurePolicies { cap: u128 },
    RepresentativeEquilibria,
    Explicit(Vec<PolicyProfile>),
}

/// Does the profile's rule at `d` satisfy the relation, holding the rest of
/// the profile fixed?
pub fn relation_accepts(
    m: &GameModel,
    rel: &RationalityRelation,
    profile: &PolicyProfile,
    d: &str,
) -> Result<bool> {
    match &rel.kind {
        RelationKind::BestResponse => crate::equilibrium::rule_is_best_response(m, profile, d),
        RelationKind::SubgamePerfect => {
            crate::equilibrium::rule_is_subgame_perfect(m, profile, d)
        }
        RelationKind::Custom { accepts, .. } => accepts(m, profile, d),
    }
}

/// Profiles where every decision rule satisfies its relation. An empty
/// result is a valid answer, not an error.
pub fn rational_outcomes(
    m: &GameModel,
    relations: &[RationalityRelation],
    space: PolicySpace,
) -> Result<Vec<PolicyProfile>> {
    let by_decision: BTreeMap<&str, &RationalityRelation> =
        relations.iter().map(|r| (r.decision.as_str(), r)).collect();
    for d in m.decisions() {
        if !by_decision.contains_key(d.as_str()) {
            return Err(Error::InvalidModel(format!("no relation for {d}")));
        }
    }
    let candidates = match space {
        PolicySpace::PurePolicies { cap } => enumerate_pure_profiles(m, cap)?,
        PolicySpace::RepresentativeEquilibria => {
            if relations.iter().all(|r| matches!(r.kind, RelationKind::SubgamePerfect)) {
                return Ok(crate::equilibrium::spe(m)?.profiles);
            }
            if relations.iter().all(|r| matches!(r.kind, RelationKind::BestResponse)) {
                return Ok(crate::equilibrium::behavioural_ne(m)?.profiles);
            }
            // Mixed or custom relation sets: filter the pure space.
            enumerate_pure_profiles(m, crate::policy::DEFAULT_PROFILE_CAP)?
        }
        PolicySpace::Explicit(list) => list,
    };
    let mut out = Vec::new();
    'outer: for profile in candidates {
        for d in m.decisions() {
            if !relation_accepts(m, by_decision[d.as_str()], &profile, &d)? {
                continue 'outer;
            }
        }
        out.push(profile);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{decl, job_market, sym2};
    use crate::model::{Cpd, Level};
    use crate::rational::{q, qi, Value};

    #[test]
    fn s_reachability_cases() {
        let m = job_market(false);
        assert!(s_reachable(&m, "D2", "D1").unwrap());
        // The context observation opens the collider at D1, so the worker's
        // rule stays relevant to the hiring decision.
        assert!(s_reachable(&m, "D1", "D2").unwrap());
        assert!(!s_reachable(&m, "T", "D1").unwrap());
        assert!(s_reachable(&m, "T", "D2").unwrap());
        assert!(s_reachable(&m, "U1", "D1").unwrap());
        assert!(!s_reachable(&m, "U2", "D1").unwrap());
        assert!(!s_reachable(&m, "U1", "D2").unwrap());
    }

    #[test]
    fn br_reachability_cases() {
        let m = job_market(false);
        assert!(r_br_reachable(&m, "T", "D1").unwrap());
        assert!(!r_br_reachable(&m, "U2", "D1").unwrap());
        assert!(!r_br_reachable(&m, "U1", "D2").unwrap());
        assert!(r_br_reachable(&m, "D1", "D2").unwrap());
    }

    #[test]
    fn observing_type_breaks_the_cycle() {
        let m = job_market(true);
        assert!(s_reachable(&m, "D2", "D1").unwrap());
        assert!(!s_reachable(&m, "D1", "D2").unwrap());
        let rel = decision_relevance(&m, &Reachability::S).unwrap();
        assert!(rel.is_acyclic());
        let cyclic = decision_relevance(&job_market(false), &Reachability::S).unwrap();
        assert!(!cyclic.is_acyclic());
    }

    #[test]
    fn minimal_mechanised_graph_edges() {
        let m = job_market(false);
        let g = mechanise(&m, &best_response_relations(&m), EdgeMode::Minimal).unwrap();
        let has = |a: &str, b: &str| g.mech_edges.contains(&(a.to_string(), b.to_string()));
        assert!(has("Theta::T", "Pi::D1"));
        assert!(has("Theta::T", "Pi::D2"));
        assert!(has("Theta::U1", "Pi::D1"));
        assert!(has("Theta::U2", "Pi::D2"));
        assert!(has("Pi::D2", "Pi::D1"));
        assert!(has("Pi::D1", "Pi::D2"));
        assert!(!has("Theta::U1", "Pi::D2"));
        assert!(!has("Theta::U2", "Pi::D1"));
        assert!(g.pruned.contains(&("Theta::U2".to_string(), "Pi::D1".to_string())));

        let s = mechanise(&m, &subgame_perfect_relations(&m), EdgeMode::Minimal).unwrap();
        assert!(!s.mech_edges.contains(&("Theta::T".to_string(), "Pi::D1".to_string())));
        assert!(s.mech_edges.contains(&("Theta::T".to_string(), "Pi::D2".to_string())));

        let maximal = mechanise(&m, &best_response_relations(&m), EdgeMode::Maximal).unwrap();
        // 4 other mechanisms wired into each of the two rule nodes.
        assert_eq!(maximal.mech_edges.len(), 8);
        assert!(maximal.pruned.is_empty());
    }

    #[test]
    fn template_builders_match_direct_criteria() {
        for m in [job_market(false), job_market(true)] {
            for d in m.decisions() {
                let s_q = s_query_templates(&m, &d).unwrap();
                let br_q = br_query_templates(&m, &d).unwrap();
                for v in m.graph.nodes() {
                    if *v == d {
                        continue;
                    }
                    assert_eq!(
                        custom_reachable(&m, &s_q, v, &d).unwrap(),
                        s_reachable(&m, v, &d).unwrap()
                    );
                    assert_eq!(
                        custom_reachable(&m, &br_q, v, &d).unwrap(),
                        r_br_reachable(&m, v, &d).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn recall_classes() {
        let m = job_market(false);
        let r = recall(&m).unwrap();
        assert_eq!(r["w"], Recall::Perfect);
        assert_eq!(r["f"], Recall::Perfect);

        // Two parentless decisions for one agent, opposed utilities: each is
        // relevant to the other, so recall is insufficient.
        let forgetful = GameModel::build(
            vec!["1".into(), "2".into()],
            vec![
                decl("A", VarKind::Decision { agent: "1".into() }, sym2("a", "na")),
                decl("B", VarKind::Decision { agent: "1".into() }, sym2("b", "nb")),
                decl("D", VarKind::Decision { agent: "2".into() }, sym2("d", "nd")),
                decl(
                    "U1",
                    VarKind::Utility { agent: "1".into() },
                    vec![Value::num(qi(-1)), Value::num(qi(1))],
                ),
                decl(
                    "U2",
                    VarKind::Utility { agent: "2".into() },
                    vec![Value::num(qi(-1)), Value::num(qi(1))],
                ),
            ],
            vec![
                ("A".into(), "U1".into()),
                ("B".into(), "U1".into()),
                ("D".into(), "U1".into()),
                ("A".into(), "U2".into()),
                ("B".into(), "U2".into()),
                ("D".into(), "U2".into()),
            ],
            [
                (
                    "U1".to_string(),
                    Cpd::deterministic(
                        "U1",
                        vec!["A".into(), "B".into(), "D".into()],
                        vec![1, 0, 0, 1, 0, 1, 1, 0],
                        2,
                    ),
                ),
                (
                    "U2".to_string(),
                    Cpd::deterministic(
                        "U2",
                        vec!["A".into(), "B".into(), "D".into()],
                        vec![0, 1, 1, 0, 1, 0, 0, 1],
                        2,
                    ),
                ),
            ]
            .into(),
            Level::Causal,
            std::collections::BTreeMap::new(),
        )
        .unwrap();
        let r = recall(&forgetful).unwrap();
        assert_eq!(r["1"], Recall::Insufficient);

        // X -> A -> B chain, one agent, B does not see X: relevance between
        // the two decisions only runs from B's rule to A's.
        let chain = GameModel::build(
            vec!["1".into()],
            vec![
                decl("X", VarKind::Chance, sym2("x", "nx")),
                decl("A", VarKind::Decision { agent: "1".into() }, sym2("a", "na")),
                decl("B", VarKind::Decision { agent: "1".into() }, sym2("b", "nb")),
                decl(
                    "U1",
                    VarKind::Utility { agent: "1".into() },
                    vec![Value::num(qi(0)), Value::num(qi(1))],
                ),
            ],
            vec![
                ("X".into(), "A".into()),
                ("A".into(), "B".into()),
                ("A".into(), "U1".into()),
                ("B".into(), "U1".into()),
            ],
            [
                (
                    "X".to_string(),
                    Cpd { child: "X".into(), parents: vec![], table: vec![vec![q(1, 2), q(1, 2)]] },
                ),
                (
                    "U1".to_string(),
                    Cpd::deterministic("U1", vec!["A".into(), "B".into()], vec![1, 0, 0, 1], 2),
                ),
            ]
            .into(),
            Level::Causal,
            std::collections::BTreeMap::new(),
        )
        .unwrap();
        let r = recall(&chain).unwrap();
        assert_eq!(r["1"], Recall::Sufficient);
    }
}
