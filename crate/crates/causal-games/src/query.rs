//! Conditional and interventional queries over rational-outcome sets.
//!
//! A query runs against a finite set of representative outcomes (equilibria
//! of a chosen kind). Conditional queries filter the set by evidence and
//! evaluate the target once per surviving outcome. Interventional queries
//! are split by timing: pre-policy parts modify the game before it is
//! solved, post-policy parts are applied to each solved outcome unchanged.
//! Answers keep a per-outcome trace so callers can audit which outcome
//! produced which value.

use std::collections::BTreeMap;

use num::{One, Zero};
use serde_json::json;

use crate::equilibrium;
use crate::inference::{intervene, JointContext, ObjectIntervention};
use crate::model::{
    context_count, digits_of, index_of, Assignment, Cpd, GameModel, VarKind,
};
use crate::policy::{bind_decisions, PolicyProfile, PureRule, DEFAULT_PROFILE_CAP};
use crate::rational::{show_rational, Q};
use crate::{Error, Result};

/// What a query measures per outcome.
#[derive(Debug, Clone)]
pub enum Target {
    /// Probability of a joint event.
    Probability(Assignment),
    /// Total expected utility of one agent.
    Utility(String),
    /// Expectation of a numeric-domain variable.
    Expectation(String),
}

/// Evidence over object and mechanism variables. Object evidence keeps the
/// outcomes that give it positive probability; rule evidence keeps outcomes
/// whose rule matches exactly; parameter evidence is vacuous when it matches
/// the model (the parameter distribution is a point mass) and inconsistent
/// otherwise.
#[derive(Debug, Clone, Default)]
pub struct Evidence {
    pub object: Assignment,
    pub rules: BTreeMap<String, Cpd>,
    pub parameters: BTreeMap<String, Cpd>,
}

impl Evidence {
    pub fn object(object: Assignment) -> Evidence {
        Evidence { object, ..Evidence::default() }
    }

    pub fn rule(d: &str, rule: Cpd) -> Evidence {
        Evidence { rules: [(d.to_string(), rule)].into(), ..Evidence::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.object.is_empty() && self.rules.is_empty() && self.parameters.is_empty()
    }
}

/// A change to one mechanism variable.
#[derive(Debug, Clone)]
pub enum MechanismChange {
    /// Fix a decision's rule. Pre-policy this binds the rule before solving;
    /// post-policy it is swapped into each outcome.
    FixRule(Cpd),
    /// Shrink a decision's rule space to rules constant in the banned
    /// parents. `replacement` optionally pins the surviving rules, given over
    /// the contexts of the remaining parents. Pre-policy only.
    BanParents { banned: Vec<String>, replacement: Option<Vec<PureRule>> },
    /// Replace the CPD of a chance or utility variable.
    SetParameter(Cpd),
}

/// How a parent ban is realized. Both give the same answer sets: a rule
/// constant in a parent induces the same joint as the rule with the parent
/// edge removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BanStyle {
    /// Keep the graph, restrict the allowed rules.
    Restriction,
    /// Drop the banned edges, reindex the rules.
    EdgeRemoval,
}

#[derive(Debug, Clone)]
pub struct Intervention {
    pub object: Vec<ObjectIntervention>,
    pub mechanism: BTreeMap<String, MechanismChange>,
    pub ban_style: BanStyle,
}

impl Default for Intervention {
    fn default() -> Intervention {
        Intervention {
            object: Vec::new(),
            mechanism: BTreeMap::new(),
            ban_style: BanStyle::Restriction,
        }
    }
}

impl Intervention {
    pub fn fix_object(m: &GameModel, var: &str, value: &crate::rational::Value) -> Result<Intervention> {
        Ok(Intervention {
            object: vec![ObjectIntervention::fix(m, var, value)?],
            ..Intervention::default()
        })
    }

    pub fn fix_rule(d: &str, rule: Cpd) -> Intervention {
        Intervention {
            mechanism: [(d.to_string(), MechanismChange::FixRule(rule))].into(),
            ..Intervention::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.object.is_empty() && self.mechanism.is_empty()
    }
}

/// Whether an intervention lands before or after the game is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    Pre,
    Post,
}

/// A full query: target, evidence, and optional interventions on either
/// side of solving. Filling both slots gives a mixed-timing query.
#[derive(Debug, Clone)]
pub struct Query {
    pub target: Target,
    pub evidence: Evidence,
    pub pre: Option<Intervention>,
    pub post: Option<Intervention>,
}

impl Query {
    pub fn new(target: Target) -> Query {
        Query { target, evidence: Evidence::default(), pre: None, post: None }
    }
}

/// Which rational-outcome set the query ranges over.
#[derive(Debug, Clone)]
pub enum OutcomeSpec {
    BehaviouralNe,
    Spe,
    Thpe,
    PureNe,
    Explicit(Vec<PolicyProfile>),
}

pub fn resolve_outcomes(m: &GameModel, under: &OutcomeSpec) -> Result<Vec<PolicyProfile>> {
    Ok(match under {
        OutcomeSpec::BehaviouralNe => equilibrium::behavioural_ne(m)?.profiles,
        OutcomeSpec::Spe => equilibrium::spe(m)?.profiles,
        OutcomeSpec::Thpe => equilibrium::thpe(m)?.profiles,
        OutcomeSpec::PureNe => equilibrium::pure_ne(m)?.profiles,
        OutcomeSpec::Explicit(list) => list.clone(),
    })
}

/// Query result: the deduplicated value set plus one (outcome, value) row
/// per surviving outcome. The empty answer is representable.
#[derive(Debug, Clone, Default)]
pub struct AnswerSet {
    pub values: Vec<Q>,
    pub trace: Vec<(PolicyProfile, Q)>,
}

impl AnswerSet {
    pub fn from_trace(trace: Vec<(PolicyProfile, Q)>) -> AnswerSet {
        let mut values: Vec<Q> = trace.iter().map(|(_, v)| v.clone()).collect();
        values.sort();
        values.dedup();
        AnswerSet { values, trace }
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    pub fn to_json(&self, m: &GameModel) -> Result<serde_json::Value> {
        let values: Vec<String> = self.values.iter().map(show_rational).collect();
        let mut rows = Vec::with_capacity(self.trace.len());
        for (pi, v) in &self.trace {
            rows.push(json!({ "outcome": pi.to_json(m)?, "value": show_rational(v) }));
        }
        Ok(json!({ "values": values, "perOutcomeTrace": rows }))
    }
}

/// Evidence-filtered evaluation over a fixed outcome set.
pub fn conditional(
    m: &GameModel,
    outcomes: Vec<PolicyProfile>,
    target: &Target,
    z: &Evidence,
) -> Result<AnswerSet> {
    let kept = filter_consistent(m, outcomes, z)?;
    let mut trace = Vec::with_capacity(kept.len());
    for pi in kept {
        let v = evaluate_outcome(m, &pi, None, target, &z.object)?;
        trace.push((pi, v));
    }
    Ok(AnswerSet::from_trace(trace))
}

/// Single-timing interventional query without evidence.
pub fn interventional(
    m: &GameModel,
    under: &OutcomeSpec,
    target: &Target,
    iv: Intervention,
    timing: Timing,
) -> Result<AnswerSet> {
    let mut q = Query::new(target.clone());
    match timing {
        Timing::Pre => q.pre = Some(iv),
        Timing::Post => q.post = Some(iv),
    }
    answer(m, under, &q)
}

/// Full pipeline: pre-policy interventions, solve, evidence filter,
/// post-policy interventions, evaluate.
pub fn answer(m: &GameModel, under: &OutcomeSpec, q: &Query) -> Result<AnswerSet> {
    if let (Some(pre), Some(post)) = (&q.pre, &q.post) {
        for v in pre.mechanism.keys() {
            if post.mechanism.contains_key(v) {
                return Err(Error::InvalidInterventionSets(format!(
                    "{v} is intervened both pre- and post-policy"
                )));
            }
        }
    }
    let base = match &q.pre {
        Some(iv) => apply_pre(m, iv)?,
        None => m.clone(),
    };
    let outcomes = resolve_outcomes(&base, under)?;
    let kept = filter_consistent(&base, outcomes, &q.evidence)?;
    let mut trace = Vec::with_capacity(kept.len());
    for pi in kept {
        let v = evaluate_outcome(&base, &pi, q.post.as_ref(), &q.target, &q.evidence.object)?;
        trace.push((pi, v));
    }
    Ok(AnswerSet::from_trace(trace))
}

/// Parent ban as a rule-space restriction on the unchanged graph.
pub fn ban_by_restriction(m: &GameModel, d: &str, banned: &[String]) -> Result<GameModel> {
    apply_ban(m, d, banned, None, BanStyle::Restriction)
}

/// Parent ban as edge removal.
pub fn ban_by_edge_removal(m: &GameModel, d: &str, banned: &[String]) -> Result<GameModel> {
    apply_ban(m, d, banned, None, BanStyle::EdgeRemoval)
}

pub(crate) fn apply_pre(m: &GameModel, iv: &Intervention) -> Result<GameModel> {
    let mut cur = m.clone();
    for (v, change) in &iv.mechanism {
        cur = match change {
            MechanismChange::FixRule(rule) => {
                if !matches!(cur.kind(v)?, VarKind::Decision { .. }) {
                    return Err(Error::InvalidModel(format!("{v} is not a decision")));
                }
                bind_decisions(&cur, &[(v.clone(), rule.clone())].into())?
            }
            MechanismChange::BanParents { banned, replacement } => {
                apply_ban(&cur, v, banned, replacement.as_deref(), iv.ban_style)?
            }
            MechanismChange::SetParameter(cpd) => set_parameter(&cur, v, cpd)?,
        };
    }
    if iv.object.is_empty() {
        Ok(cur)
    } else {
        intervene(&cur, &iv.object)
    }
}

pub(crate) fn set_parameter(m: &GameModel, v: &str, cpd: &Cpd) -> Result<GameModel> {
    if matches!(m.kind(v)?, VarKind::Decision { .. }) {
        return Err(Error::InvalidModel(format!("{v} is a decision; fix its rule instead")));
    }
    let mut cpds = m.cpds.clone();
    cpds.insert(v.to_string(), cpd.clone());
    GameModel::build(
        m.agents.clone(),
        m.decls.clone(),
        m.graph.edges(),
        cpds,
        m.level,
        m.allowed_rules.clone(),
    )
}

pub(crate) fn apply_ban(
    m: &GameModel,
    d: &str,
    banned: &[String],
    replacement: Option<&[PureRule]>,
    style: BanStyle,
) -> Result<GameModel> {
    if !matches!(m.kind(d)?, VarKind::Decision { .. }) {
        return Err(Error::InvalidModel(format!("{d} is not a decision")));
    }
    let parents = m.graph.parents(d)?;
    if banned.is_empty() {
        return Err(Error::InvalidModel(format!("empty parent ban on {d}")));
    }
    for b in banned {
        if !parents.contains(b) {
            return Err(Error::InvalidModel(format!("{b} is not a parent of {d}")));
        }
    }
    let dims = m.parent_dims(d)?;
    let width = m.domain(d)?.len();
    let keep_pos: Vec<usize> =
        (0..parents.len()).filter(|&i| !banned.contains(&parents[i])).collect();
    let kept_dims: Vec<usize> = keep_pos.iter().map(|&i| dims[i]).collect();
    let kept_ctx = context_count(&kept_dims);

    // The surviving rules, over the kept contexts. None means the space was
    // unrestricted and stays so (after the edges go).
    let kept_rules: Option<Vec<PureRule>> = match replacement {
        Some(rs) => {
            for r in rs {
                if r.len() != kept_ctx || r.iter().any(|&a| a >= width) {
                    return Err(Error::InvalidModel(format!(
                        "malformed replacement rule for {d}"
                    )));
                }
            }
            Some(rs.to_vec())
        }
        None => match m.allowed_rules.get(d) {
            Some(existing) => {
                let mut out: Vec<PureRule> = Vec::new();
                for rule in existing {
                    if let Some(p) = project_constant(rule, &dims, &keep_pos, &kept_dims) {
                        if !out.contains(&p) {
                            out.push(p);
                        }
                    }
                }
                Some(out)
            }
            None => None,
        },
    };

    match style {
        BanStyle::EdgeRemoval => {
            let edges: Vec<(String, String)> = m
                .graph
                .edges()
                .into_iter()
                .filter(|(a, b)| !(b == d && banned.contains(a)))
                .collect();
            let mut allowed = m.allowed_rules.clone();
            match kept_rules {
                Some(rs) => {
                    allowed.insert(d.to_string(), rs);
                }
                None => {
                    allowed.remove(d);
                }
            }
            GameModel::build(m.agents.clone(), m.decls.clone(), edges, m.cpds.clone(), m.level, allowed)
        }
        BanStyle::Restriction => {
            let rs = match kept_rules {
                Some(rs) => rs,
                None => enumerate_rules(width, kept_ctx)?,
            };
            let expanded =
                rs.iter().map(|r| expand_rule(r, &dims, &keep_pos, &kept_dims)).collect();
            let mut allowed = m.allowed_rules.clone();
            allowed.insert(d.to_string(), expanded);
            GameModel::build(
                m.agents.clone(),
                m.decls.clone(),
                m.graph.edges(),
                m.cpds.clone(),
                m.level,
                allowed,
            )
        }
    }
}

/// Project a full-context rule onto the kept parents, or None if it is not
/// constant in the banned ones.
fn project_constant(
    rule: &PureRule,
    dims: &[usize],
    keep_pos: &[usize],
    kept_dims: &[usize],
) -> Option<PureRule> {
    let mut out: Vec<Option<usize>> = vec![None; context_count(kept_dims)];
    for (ctx, &a) in rule.iter().enumerate() {
        let digits = digits_of(dims, ctx);
        let kd: Vec<usize> = keep_pos.iter().map(|&i| digits[i]).collect();
        let slot = &mut out[index_of(kept_dims, &kd)];
        match slot {
            None => *slot = Some(a),
            Some(prev) if *prev == a => {}
            Some(_) => return None,
        }
    }
    out.into_iter().collect()
}

fn expand_rule(
    kept_rule: &PureRule,
    dims: &[usize],
    keep_pos: &[usize],
    kept_dims: &[usize],
) -> PureRule {
    (0..context_count(dims))
        .map(|ctx| {
            let digits = digits_of(dims, ctx);
            let kd: Vec<usize> = keep_pos.iter().map(|&i| digits[i]).collect();
            kept_rule[index_of(kept_dims, &kd)]
        })
        .collect()
}

fn enumerate_rules(width: usize, n_ctx: usize) -> Result<Vec<PureRule>> {
    let total = (width as u128).checked_pow(n_ctx as u32).unwrap_or(u128::MAX);
    if total > DEFAULT_PROFILE_CAP {
        return Err(Error::ExplosionGuard(total, DEFAULT_PROFILE_CAP));
    }
    let dims = vec![width; n_ctx];
    Ok((0..total as usize).map(|k| digits_of(&dims, k)).collect())
}

fn cpd_matches(have: &Cpd, want: &Cpd) -> bool {
    have.parents == want.parents && have.table == want.table
}

pub(crate) fn filter_consistent(
    m: &GameModel,
    outcomes: Vec<PolicyProfile>,
    z: &Evidence,
) -> Result<Vec<PolicyProfile>> {
    let mut out = Vec::new();
    'next: for pi in outcomes {
        for (d, want) in &z.rules {
            // A rule bound before solving lives in the model's CPDs.
            let have = pi.rules.get(d).or_else(|| m.cpds.get(d));
            match have {
                Some(cpd) if cpd_matches(cpd, want) => {}
                _ => continue 'next,
            }
        }
        for (v, want) in &z.parameters {
            match m.cpds.get(v) {
                Some(cpd) if cpd_matches(cpd, want) => {}
                _ => continue 'next,
            }
        }
        if !z.object.is_empty() && pi.context(m)?.prob_of(&z.object)?.is_zero() {
            continue;
        }
        out.push(pi);
    }
    Ok(out)
}

fn evaluate_outcome(
    m: &GameModel,
    pi: &PolicyProfile,
    post: Option<&Intervention>,
    target: &Target,
    given: &Assignment,
) -> Result<Q> {
    let mut model = m.clone();
    let mut rules = pi.rules.clone();
    if let Some(iv) = post {
        for (v, change) in &iv.mechanism {
            match change {
                MechanismChange::FixRule(rule) => {
                    if !matches!(model.kind(v)?, VarKind::Decision { .. }) {
                        return Err(Error::InvalidModel(format!("{v} is not a decision")));
                    }
                    rules.insert(v.clone(), rule.clone());
                }
                MechanismChange::SetParameter(cpd) => {
                    model = set_parameter(&model, v, cpd)?;
                }
                MechanismChange::BanParents { .. } => {
                    return Err(Error::InvalidModel(format!(
                        "parent ban on {v} is a pre-policy intervention"
                    )));
                }
            }
        }
        if !iv.object.is_empty() {
            model = intervene(&model, &iv.object)?;
        }
    }
    let ctx = JointContext::new(&model, rules)?;
    match target {
        Target::Probability(x) => ctx.prob(x, given),
        Target::Utility(agent) => ctx.expected_utility(agent, given),
        Target::Expectation(var) => ctx.expected_value(var, given),
    }
}

/// Comparison operator for the boolean quantifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl Cmp {
    pub fn holds(&self, a: &Q, b: &Q) -> bool {
        match self {
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Eq => a == b,
            Cmp::Ge => a >= b,
            Cmp::Gt => a > b,
        }
    }
}

/// Quantifier over an answer set. Mean averages per outcome, uniformly or
/// by a supplied prior aligned with the trace.
#[derive(Debug, Clone)]
pub enum Quantifier {
    Exists(Cmp, Q),
    Forall(Cmp, Q),
    Min,
    Max,
    Mean(Option<Vec<Q>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Quantified {
    Bool(bool),
    Value(Q),
}

pub fn quantify(ans: &AnswerSet, mode: &Quantifier) -> Result<Quantified> {
    match mode {
        Quantifier::Exists(c, b) => {
            Ok(Quantified::Bool(ans.values.iter().any(|v| c.holds(v, b))))
        }
        Quantifier::Forall(c, b) => {
            Ok(Quantified::Bool(ans.values.iter().all(|v| c.holds(v, b))))
        }
        Quantifier::Min => ans
            .values
            .first()
            .cloned()
            .map(Quantified::Value)
            .ok_or_else(|| Error::EmptyAnswerSet("min over no outcomes".into())),
        Quantifier::Max => ans
            .values
            .last()
            .cloned()
            .map(Quantified::Value)
            .ok_or_else(|| Error::EmptyAnswerSet("max over no outcomes".into())),
        Quantifier::Mean(prior) => {
            if ans.trace.is_empty() {
                return Err(Error::EmptyAnswerSet("mean over no outcomes".into()));
            }
            let weights = match prior {
                None => vec![Q::one(); ans.trace.len()],
                Some(w) => {
                    if w.len() != ans.trace.len() {
                        return Err(Error::InvalidModel(format!(
                            "prior has {} weights for {} outcomes",
                            w.len(),
                            ans.trace.len()
                        )));
                    }
                    if w.iter().any(|x| x < &Q::zero()) {
                        return Err(Error::InvalidModel("negative prior weight".into()));
                    }
                    w.clone()
                }
            };
            let total: Q = weights.iter().cloned().sum();
            if total.is_zero() {
                return Err(Error::InvalidModel("prior weights sum to zero".into()));
            }
            let mut acc = Q::zero();
            for ((_, v), w) in ans.trace.iter().zip(&weights) {
                acc += v.clone() * w.clone();
            }
            Ok(Quantified::Value(acc / total))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::job_market;
    use crate::policy::rule_cpd;
    use crate::rational::{q, qi, Value};

    fn ev(pairs: &[(&str, &str)]) -> Assignment {
        pairs.iter().map(|(k, v)| (k.to_string(), Value::sym(v))).collect()
    }

    fn ne_outcomes(m: &GameModel) -> Vec<PolicyProfile> {
        equilibrium::behavioural_ne(m).unwrap().profiles
    }

    #[test]
    fn conditional_filters_by_event_probability() {
        let m = job_market(false);
        let outs = ne_outcomes(&m);
        assert_eq!(outs.len(), 5);
        let ans = conditional(
            &m,
            outs,
            &Target::Utility("w".into()),
            &Evidence::object(ev(&[("D1", "g")])),
        )
        .unwrap();
        // Outcomes where the worker never studies have no mass on D1=g.
        assert_eq!(ans.trace.len(), 3);
        assert_eq!(ans.values, vec![q(7, 2), qi(4)]);
    }

    #[test]
    fn rule_evidence_filters_exactly() {
        let m = job_market(false);
        let always_g = rule_cpd(&m, "D1", &vec![0, 0]).unwrap();
        let ans = conditional(
            &m,
            ne_outcomes(&m),
            &Target::Utility("w".into()),
            &Evidence::rule("D1", always_g),
        )
        .unwrap();
        assert_eq!(ans.trace.len(), 2);
        assert_eq!(ans.values, vec![q(7, 2)]);

        let lottery = Cpd {
            child: "D1".into(),
            parents: vec!["T".into()],
            table: vec![vec![q(1, 2), q(1, 2)], vec![q(1, 2), q(1, 2)]],
        };
        let none = conditional(
            &m,
            ne_outcomes(&m),
            &Target::Utility("w".into()),
            &Evidence::rule("D1", lottery),
        )
        .unwrap();
        assert!(none.is_empty());
        assert!(none.values.is_empty());
    }

    #[test]
    fn parameter_evidence_is_vacuous_when_matching() {
        let m = job_market(false);
        let base = conditional(
            &m,
            ne_outcomes(&m),
            &Target::Utility("w".into()),
            &Evidence::default(),
        )
        .unwrap();
        assert_eq!(base.values, vec![q(7, 2), qi(4), qi(5)]);

        let matching = Evidence {
            parameters: [("T".to_string(), m.cpds["T"].clone())].into(),
            ..Evidence::default()
        };
        let same =
            conditional(&m, ne_outcomes(&m), &Target::Utility("w".into()), &matching).unwrap();
        assert_eq!(same.values, base.values);

        let skewed = Cpd { child: "T".into(), parents: vec![], table: vec![vec![q(1, 3), q(2, 3)]] };
        let off = Evidence {
            parameters: [("T".to_string(), skewed)].into(),
            ..Evidence::default()
        };
        let none = conditional(&m, ne_outcomes(&m), &Target::Utility("w".into()), &off).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn post_policy_do_keeps_outcome_keys() {
        let m = job_market(false);
        let outs = ne_outcomes(&m);
        let iv = Intervention::fix_object(&m, "D1", &Value::sym("g")).unwrap();
        let ans = interventional(
            &m,
            &OutcomeSpec::Explicit(outs.clone()),
            &Target::Utility("w".into()),
            iv,
            Timing::Post,
        )
        .unwrap();
        assert_eq!(ans.values, vec![q(-3, 2), q(7, 2)]);
        assert_eq!(ans.trace.len(), outs.len());
        for ((pi, _), out) in ans.trace.iter().zip(&outs) {
            assert_eq!(pi, out);
        }
    }

    #[test]
    fn pre_policy_rule_fix_resolves_the_modified_game() {
        let m = job_market(false);
        let lottery = Cpd {
            child: "D1".into(),
            parents: vec!["T".into()],
            table: vec![vec![q(1, 2), q(1, 2)], vec![q(1, 2), q(1, 2)]],
        };
        let ans = interventional(
            &m,
            &OutcomeSpec::BehaviouralNe,
            &Target::Utility("w".into()),
            Intervention::fix_rule("D1", lottery),
            Timing::Pre,
        )
        .unwrap();
        assert_eq!(ans.values, vec![q(17, 4)]);
        assert_eq!(ans.trace.len(), 1);
    }

    #[test]
    fn empty_intervention_matches_plain_conditional() {
        let m = job_market(false);
        let outs = ne_outcomes(&m);
        let plain = conditional(&m, outs.clone(), &Target::Utility("w".into()), &Evidence::default())
            .unwrap();
        for timing in [Timing::Pre, Timing::Post] {
            let ans = interventional(
                &m,
                &OutcomeSpec::Explicit(outs.clone()),
                &Target::Utility("w".into()),
                Intervention::default(),
                timing,
            )
            .unwrap();
            assert_eq!(ans.values, plain.values);
            assert_eq!(ans.trace.len(), plain.trace.len());
        }
    }

    #[test]
    fn quantifier_results() {
        let m = job_market(false);
        let outs = ne_outcomes(&m);
        let given_g = conditional(
            &m,
            outs.clone(),
            &Target::Utility("w".into()),
            &Evidence::object(ev(&[("D1", "g")])),
        )
        .unwrap();
        assert_eq!(
            quantify(&given_g, &Quantifier::Exists(Cmp::Ge, qi(4))).unwrap(),
            Quantified::Bool(true)
        );
        assert_eq!(
            quantify(&given_g, &Quantifier::Forall(Cmp::Ge, qi(4))).unwrap(),
            Quantified::Bool(false)
        );
        assert_eq!(
            quantify(&given_g, &Quantifier::Forall(Cmp::Ge, q(7, 2))).unwrap(),
            Quantified::Bool(true)
        );

        let plain =
            conditional(&m, outs, &Target::Utility("w".into()), &Evidence::default()).unwrap();
        assert_eq!(quantify(&plain, &Quantifier::Min).unwrap(), Quantified::Value(q(7, 2)));
        assert_eq!(quantify(&plain, &Quantifier::Max).unwrap(), Quantified::Value(qi(5)));
        assert_eq!(
            quantify(&plain, &Quantifier::Mean(None)).unwrap(),
            Quantified::Value(q(21, 5))
        );
        let mut weights = vec![Q::zero(); plain.trace.len()];
        weights[0] = Q::one();
        assert_eq!(
            quantify(&plain, &Quantifier::Mean(Some(weights))).unwrap(),
            Quantified::Value(plain.trace[0].1.clone())
        );

        let empty = AnswerSet::default();
        assert!(matches!(
            quantify(&empty, &Quantifier::Mean(None)),
            Err(Error::EmptyAnswerSet(_))
        ));
        assert!(matches!(quantify(&empty, &Quantifier::Min), Err(Error::EmptyAnswerSet(_))));
        assert_eq!(
            quantify(&empty, &Quantifier::Exists(Cmp::Ge, qi(0))).unwrap(),
            Quantified::Bool(false)
        );
        assert_eq!(
            quantify(&empty, &Quantifier::Forall(Cmp::Ge, qi(0))).unwrap(),
            Quantified::Bool(true)
        );
    }

    #[test]
    fn parent_ban_styles_agree() {
        let m = job_market(false);
        let banned = vec!["T".to_string()];
        let target = Target::Utility("w".into());

        let restricted = ban_by_restriction(&m, "D1", &banned).unwrap();
        let removed = ban_by_edge_removal(&m, "D1", &banned).unwrap();
        assert_eq!(restricted.allowed_rules["D1"].len(), 2);
        assert!(removed.graph.parents("D1").unwrap().is_empty());

        let a = conditional(
            &restricted,
            ne_outcomes(&restricted),
            &target,
            &Evidence::default(),
        )
        .unwrap();
        let b =
            conditional(&removed, ne_outcomes(&removed), &target, &Evidence::default()).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a.values, b.values);

        // Same pair of answers through the intervention plumbing.
        for (style, oracle) in [(BanStyle::Restriction, &a), (BanStyle::EdgeRemoval, &b)] {
            let iv = Intervention {
                mechanism: [(
                    "D1".to_string(),
                    MechanismChange::BanParents { banned: banned.clone(), replacement: None },
                )]
                .into(),
                ban_style: style,
                ..Intervention::default()
            };
            let ans =
                interventional(&m, &OutcomeSpec::BehaviouralNe, &target, iv, Timing::Pre).unwrap();
            assert_eq!(ans.values, oracle.values);
        }
    }

    #[test]
    fn rewiring_cycles_are_reported() {
        let m = job_market(false);
        let loopy = ObjectIntervention {
            child: "T".into(),
            new_parents: Some(vec!["D2".into()]),
            table: vec![vec![Q::one(), Q::zero()], vec![Q::zero(), Q::one()]],
        };
        let iv = Intervention { object: vec![loopy], ..Intervention::default() };
        let err = interventional(
            &m,
            &OutcomeSpec::Explicit(ne_outcomes(&m)),
            &Target::Utility("w".into()),
            iv,
            Timing::Post,
        )
        .unwrap_err();
        assert!(matches!(err, Error::CycleIntroduced(_)));
    }
}
