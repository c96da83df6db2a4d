//! Hand-sized models shared across unit tests.

use std::collections::BTreeMap;

use crate::model::{Cpd, GameModel, Level, VarKind, VariableDecl};
use crate::rational::{q, qi, Value};

pub(crate) fn decl(name: &str, kind: VarKind, domain: Vec<Value>) -> VariableDecl {
    VariableDecl { name: name.into(), kind, domain }
}

pub(crate) fn sym2(a: &str, b: &str) -> Vec<Value> {
    vec![Value::sym(a), Value::sym(b)]
}

fn nums(vals: &[i64]) -> Vec<Value> {
    vals.iter().map(|&v| Value::num(qi(v))).collect()
}

/// Signalling game: a worker of hidden ability chooses whether to study for
/// a qualification, a firm observes the qualification (and, when the flag is
/// set, the ability itself) and decides whether to hire.
pub(crate) fn job_market(hiring_sees_t: bool) -> GameModel {
    let mut edges = vec![
        ("T".to_string(), "D1".to_string()),
        ("D1".to_string(), "D2".to_string()),
        ("T".to_string(), "U1".to_string()),
        ("D1".to_string(), "U1".to_string()),
        ("D2".to_string(), "U1".to_string()),
        ("T".to_string(), "U2".to_string()),
        ("D2".to_string(), "U2".to_string()),
    ];
    if hiring_sees_t {
        edges.push(("T".to_string(), "D2".to_string()));
    }
    GameModel::build(
        vec!["w".into(), "f".into()],
        vec![
            decl("T", VarKind::Chance, sym2("h", "l")),
            decl("D1", VarKind::Decision { agent: "w".into() }, sym2("g", "ng")),
            decl("D2", VarKind::Decision { agent: "f".into() }, sym2("j", "nj")),
            decl("U1", VarKind::Utility { agent: "w".into() }, nums(&[-2, -1, 0, 3, 4, 5])),
            decl("U2", VarKind::Utility { agent: "f".into() }, nums(&[-2, 0, 3])),
        ],
        edges,
        [
            (
                "T".to_string(),
                Cpd { child: "T".into(), parents: vec![], table: vec![vec![q(1, 2), q(1, 2)]] },
            ),
            (
                "U1".to_string(),
                Cpd::deterministic(
                    "U1",
                    vec!["T".into(), "D1".into(), "D2".into()],
                    vec![4, 1, 5, 2, 3, 0, 5, 2],
                    6,
                ),
            ),
            (
                "U2".to_string(),
                Cpd::deterministic("U2", vec!["T".into(), "D2".into()], vec![2, 1, 0, 1], 3),
            ),
        ]
        .into(),
        Level::Causal,
        BTreeMap::new(),
    )
    .unwrap()
}

/// Two robots: 1 queries a diagnostic or not, brake wear depends on the
/// query, 2 sees only the query choice and repairs or not.
pub(crate) fn warehouse() -> GameModel {
    GameModel::build(
        vec!["r1".into(), "r2".into()],
        vec![
            decl("D1", VarKind::Decision { agent: "r1".into() }, sym2("q", "nq")),
            decl("B", VarKind::Chance, sym2("b", "nb")),
            decl("D2", VarKind::Decision { agent: "r2".into() }, sym2("p", "np")),
            decl(
                "U1",
                VarKind::Utility { agent: "r1".into() },
                vec![
                    Value::num(qi(-1)),
                    Value::num(q(-1, 2)),
                    Value::num(qi(1)),
                    Value::num(qi(2)),
                    Value::num(q(5, 2)),
                    Value::num(qi(5)),
                ],
            ),
            decl("U2", VarKind::Utility { agent: "r2".into() }, nums(&[0, 5, 6])),
        ],
        vec![
            ("D1".into(), "B".into()),
            ("D1".into(), "D2".into()),
            ("D1".into(), "U1".into()),
            ("B".into(), "U1".into()),
            ("D2".into(), "U1".into()),
            ("B".into(), "U2".into()),
            ("D2".into(), "U2".into()),
        ],
        [
            (
                "B".to_string(),
                Cpd {
                    child: "B".into(),
                    parents: vec!["D1".into()],
                    table: vec![vec![q(1, 3), q(2, 3)], vec![qi(0), qi(1)]],
                },
            ),
            (
                // Rows over (D1, B, D2): repairing halves output, wear
                // costs 3, querying lifts base output from 2 to 5.
                "U1".to_string(),
                Cpd::deterministic(
                    "U1",
                    vec!["D1".into(), "B".into(), "D2".into()],
                    vec![2, 3, 4, 5, 1, 0, 2, 3],
                    6,
                ),
            ),
            (
                "U2".to_string(),
                Cpd::deterministic("U2", vec!["B".into(), "D2".into()], vec![1, 0, 1, 2], 3),
            ),
        ]
        .into(),
        Level::Causal,
        BTreeMap::new(),
    )
    .unwrap()
}

/// Agent 1 picks A and B without remembering A; agent 2 guesses. Agent 1
/// wants A = B with the guess wrong, loses twice as much on A != B.
pub(crate) fn absent_minded_pair() -> GameModel {
    GameModel::build(
        vec!["1".into(), "2".into()],
        vec![
            decl("A", VarKind::Decision { agent: "1".into() }, sym2("a", "na")),
            decl("B", VarKind::Decision { agent: "1".into() }, sym2("b", "nb")),
            decl("D2", VarKind::Decision { agent: "2".into() }, sym2("d", "nd")),
            decl("U1", VarKind::Utility { agent: "1".into() }, nums(&[-2, -1, 1])),
            decl("U2", VarKind::Utility { agent: "2".into() }, nums(&[-1, 1, 2])),
        ],
        vec![
            ("A".into(), "U1".into()),
            ("B".into(), "U1".into()),
            ("D2".into(), "U1".into()),
            ("A".into(), "U2".into()),
            ("B".into(), "U2".into()),
            ("D2".into(), "U2".into()),
        ],
        [
            (
                "U1".to_string(),
                Cpd::deterministic(
                    "U1",
                    vec!["A".into(), "B".into(), "D2".into()],
                    vec![2, 1, 0, 0, 0, 0, 1, 2],
                    3,
                ),
            ),
            (
                "U2".to_string(),
                Cpd::deterministic(
                    "U2",
                    vec!["A".into(), "B".into(), "D2".into()],
                    vec![0, 1, 2, 2, 2, 2, 1, 0],
                    3,
                ),
            ),
        ]
        .into(),
        Level::Causal,
        BTreeMap::new(),
    )
    .unwrap()
}

/// The absent-minded pair extended with an upstream reporter (3) whose
/// choice decides whether X copies or flips A, and a downstream guesser (4)
/// who sees X and is paid for predicting B.
pub(crate) fn forgetful_chain() -> GameModel {
    GameModel::build(
        vec!["1".into(), "2".into(), "3".into(), "4".into()],
        vec![
            decl("A", VarKind::Decision { agent: "1".into() }, sym2("a", "na")),
            decl("B", VarKind::Decision { agent: "1".into() }, sym2("b", "nb")),
            decl("D2", VarKind::Decision { agent: "2".into() }, sym2("d", "nd")),
            decl("D3", VarKind::Decision { agent: "3".into() }, sym2("copy", "flip")),
            decl("X", VarKind::Chance, sym2("x", "nx")),
            decl("D4", VarKind::Decision { agent: "4".into() }, sym2("gb", "gnb")),
            decl("U1", VarKind::Utility { agent: "1".into() }, nums(&[-2, -1, 1])),
            decl("U2", VarKind::Utility { agent: "2".into() }, nums(&[-1, 1, 2])),
            decl("U3", VarKind::Utility { agent: "3".into() }, nums(&[0, 1])),
            decl("U4", VarKind::Utility { agent: "4".into() }, nums(&[0, 1])),
        ],
        vec![
            ("A".into(), "U1".into()),
            ("B".into(), "U1".into()),
            ("D2".into(), "U1".into()),
            ("A".into(), "U2".into()),
            ("B".into(), "U2".into()),
            ("D2".into(), "U2".into()),
            ("D3".into(), "X".into()),
            ("A".into(), "X".into()),
            ("D3".into(), "U3".into()),
            ("X".into(), "D4".into()),
            ("D4".into(), "U4".into()),
            ("B".into(), "U4".into()),
        ],
        [
            (
                "U1".to_string(),
                Cpd::deterministic(
                    "U1",
                    vec!["A".into(), "B".into(), "D2".into()],
                    vec![2, 1, 0, 0, 0, 0, 1, 2],
                    3,
                ),
            ),
            (
                "U2".to_string(),
                Cpd::deterministic(
                    "U2",
                    vec!["A".into(), "B".into(), "D2".into()],
                    vec![0, 1, 2, 2, 2, 2, 1, 0],
                    3,
                ),
            ),
            (
                "X".to_string(),
                Cpd::deterministic("X", vec!["A".into(), "D3".into()], vec![0, 1, 1, 0], 2),
            ),
            ("U3".to_string(), Cpd::deterministic("U3", vec!["D3".into()], vec![1, 0], 2)),
            (
                "U4".to_string(),
                Cpd::deterministic("U4", vec!["B".into(), "D4".into()], vec![1, 0, 0, 1], 2),
            ),
        ]
        .into(),
        Level::Causal,
        BTreeMap::new(),
    )
    .unwrap()
}

/// k independent matching-pennies blocks plus one free coordination choice,
/// all upstream-independent, so stagewise solving stays linear in k.
pub(crate) fn pennies_chain(k: usize) -> GameModel {
    let mut decls = Vec::new();
    let mut edges = Vec::new();
    let mut cpds = BTreeMap::new();
    for i in 1..=k {
        let (a, b) = (format!("A{i}"), format!("B{i}"));
        let (u1, u2) = (format!("V{i}"), format!("W{i}"));
        decls.push(decl(&a, VarKind::Decision { agent: "1".into() }, sym2("h", "t")));
        decls.push(decl(&b, VarKind::Decision { agent: "2".into() }, sym2("h", "t")));
        decls.push(decl(&u1, VarKind::Utility { agent: "1".into() }, nums(&[-1, 1])));
        decls.push(decl(&u2, VarKind::Utility { agent: "2".into() }, nums(&[-1, 1])));
        edges.push((a.clone(), u1.clone()));
        edges.push((b.clone(), u1.clone()));
        edges.push((a.clone(), u2.clone()));
        edges.push((b.clone(), u2.clone()));
        cpds.insert(
            u1.clone(),
            Cpd::deterministic(&u1, vec![a.clone(), b.clone()], vec![1, 0, 0, 1], 2),
        );
        cpds.insert(u2.clone(), Cpd::deterministic(&u2, vec![a, b], vec![0, 1, 1, 0], 2));
    }
    decls.push(decl("D0", VarKind::Decision { agent: "1".into() }, sym2("on", "off")));
    decls.push(decl("U0", VarKind::Utility { agent: "1".into() }, nums(&[0, 1])));
    edges.push(("D0".into(), "U0".into()));
    cpds.insert("U0".to_string(), Cpd::deterministic("U0", vec!["D0".into()], vec![1, 0], 2));
    GameModel::build(
        vec!["1".into(), "2".into()],
        decls,
        edges,
        cpds,
        Level::Causal,
        BTreeMap::new(),
    )
    .unwrap()
}
