//! Directed-graph substrate: validation, family queries, d-separation,
//! requisite-node checks, and strongly-connected-component condensation.

use crate::{Error, Result};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

/// Directed graph, possibly cyclic. Node order is declaration order and every
/// traversal below iterates in a deterministic order derived from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Digraph {
    pub fn new<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Digraph> {
        let mut names = Vec::new();
        let mut index = BTreeMap::new();
        for n in nodes {
            let n = n.as_ref().to_string();
            if index.insert(n.clone(), names.len()).is_some() {
                return Err(Error::InvalidModel(format!("duplicate node {n}")));
            }
            names.push(n);
        }
        let mut parents = vec![Vec::new(); names.len()];
        let mut children = vec![Vec::new(); names.len()];
        let mut seen = BTreeSet::new();
        for (a, b) in edges {
            let (a, b) = (a.as_ref(), b.as_ref());
            let ia = *index.get(a).ok_or_else(|| Error::DanglingEndpoint(a.to_string()))?;
            let ib = *index.get(b).ok_or_else(|| Error::DanglingEndpoint(b.to_string()))?;
            if ia == ib {
                return Err(Error::CycleDetected(format!("{a} -> {b}")));
            }
            if !seen.insert((ia, ib)) {
                continue;
            }
            children[ia].push(ib);
            parents[ib].push(ia);
        }
        for v in &mut parents {
            v.sort_unstable();
        }
        for v in &mut children {
            v.sort_unstable();
        }
        Ok(Digraph { names, index, parents, children })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn nodes(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, v: &str) -> bool {
        self.index.contains_key(v)
    }

    pub fn idx(&self, v: &str) -> Result<usize> {
        self.index.get(v).copied().ok_or_else(|| Error::UnknownNode(v.to_string()))
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (i, chs) in self.children.iter().enumerate() {
            for &c in chs {
                out.push((self.names[i].clone(), self.names[c].clone()));
            }
        }
        out
    }

    pub fn parents(&self, v: &str) -> Result<Vec<String>> {
        let i = self.idx(v)?;
        Ok(self.parents[i].iter().map(|&p| self.names[p].clone()).collect())
    }

    pub fn children(&self, v: &str) -> Result<Vec<String>> {
        let i = self.idx(v)?;
        Ok(self.children[i].iter().map(|&c| self.names[c].clone()).collect())
    }

    fn closure(&self, starts: &[usize], step: &[Vec<usize>]) -> BTreeSet<usize> {
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut queue: VecDeque<usize> = starts.iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            for &n in &step[v] {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// Ancestors of v, excluding v itself.
    pub fn ancestors(&self, v: &str) -> Result<BTreeSet<String>> {
        let i = self.idx(v)?;
        Ok(self.closure(&[i], &self.parents).into_iter().map(|j| self.names[j].clone()).collect())
    }

    /// Descendants of v, excluding v itself.
    pub fn descendants(&self, v: &str) -> Result<BTreeSet<String>> {
        let i = self.idx(v)?;
        Ok(self.closure(&[i], &self.children).into_iter().map(|j| self.names[j].clone()).collect())
    }

    pub fn ancestors_of_set(&self, vs: &BTreeSet<String>) -> Result<BTreeSet<String>> {
        let starts: Vec<usize> = vs.iter().map(|v| self.idx(v)).collect::<Result<_>>()?;
        Ok(self.closure(&starts, &self.parents).into_iter().map(|j| self.names[j].clone()).collect())
    }

    pub fn descendants_of_set(&self, vs: &BTreeSet<String>) -> Result<BTreeSet<String>> {
        let starts: Vec<usize> = vs.iter().map(|v| self.idx(v)).collect::<Result<_>>()?;
        Ok(self.closure(&starts, &self.children).into_iter().map(|j| self.names[j].clone()).collect())
    }

    /// True iff a directed path (one or more edges) runs from a to b.
    pub fn has_path(&self, a: &str, b: &str) -> Result<bool> {
        Ok(self.descendants(a)?.contains(b))
    }

    /// Induced subgraph on `keep`, preserving declaration order.
    pub fn induced(&self, keep: &BTreeSet<String>) -> Result<Digraph> {
        for v in keep {
            self.idx(v)?;
        }
        let nodes: Vec<String> = self.names.iter().filter(|n| keep.contains(*n)).cloned().collect();
        let edges: Vec<(String, String)> = self
            .edges()
            .into_iter()
            .filter(|(a, b)| keep.contains(a) && keep.contains(b))
            .collect();
        Digraph::new(&nodes, &edges)
    }

    pub fn with_edge_removed(&self, a: &str, b: &str) -> Result<Digraph> {
        let edges: Vec<(String, String)> = self
            .edges()
            .into_iter()
            .filter(|(x, y)| !(x == a && y == b))
            .collect();
        Digraph::new(&self.names.iter().cloned().collect::<Vec<_>>(), &edges)
    }

    fn kahn(&self) -> (Vec<usize>, bool) {
        let mut indeg: Vec<usize> = self.parents.iter().map(|p| p.len()).collect();
        let mut ready: BTreeSet<usize> = (0..self.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(&v) = ready.iter().next() {
            ready.remove(&v);
            order.push(v);
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        let acyclic = order.len() == self.len();
        (order, acyclic)
    }

    pub fn is_acyclic(&self) -> bool {
        self.kahn().1
    }

    /// One explicit directed cycle, if any exists.
    pub fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let mut mark = vec![Mark::White; self.len()];
        let mut stack: Vec<usize> = Vec::new();
        fn dfs(
            g: &Digraph,
            v: usize,
            mark: &mut [Mark],
            stack: &mut Vec<usize>,
        ) -> Option<Vec<usize>> {
            mark[v] = Mark::Grey;
            stack.push(v);
            for &c in &g.children[v] {
                match mark[c] {
                    Mark::Grey => {
                        let pos = stack.iter().position(|&x| x == c).unwrap();
                        return Some(stack[pos..].to_vec());
                    }
                    Mark::White => {
                        if let Some(cy) = dfs(g, c, mark, stack) {
                            return Some(cy);
                        }
                    }
                    Mark::Black => {}
                }
            }
            stack.pop();
            mark[v] = Mark::Black;
            None
        }
        for v in 0..self.len() {
            if mark[v] == Mark::White {
                if let Some(cy) = dfs(self, v, &mut mark, &mut stack) {
                    return Some(cy.into_iter().map(|i| self.names[i].clone()).collect());
                }
            }
        }
        None
    }

    pub fn condense(&self) -> Condensation {
        let comps_raw = tarjan(&self.children);
        // Normalize: sort each component's members, then order components so
        // the topological order breaks ties on the smallest member name.
        let mut comp_of = vec![0usize; self.len()];
        let mut comps: Vec<Vec<usize>> = comps_raw;
        for c in &mut comps {
            c.sort_unstable();
        }
        comps.sort_by(|a, b| self.names[a[0]].cmp(&self.names[b[0]]));
        for (ci, c) in comps.iter().enumerate() {
            for &v in c {
                comp_of[v] = ci;
            }
        }
        let mut comp_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (v, chs) in self.children.iter().enumerate() {
            for &c in chs {
                if comp_of[v] != comp_of[c] {
                    comp_edges.insert((comp_of[v], comp_of[c]));
                }
            }
        }
        let mut indeg = vec![0usize; comps.len()];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); comps.len()];
        for &(a, b) in &comp_edges {
            succ[a].push(b);
            indeg[b] += 1;
        }
        let mut ready: BTreeSet<(String, usize)> = (0..comps.len())
            .filter(|&i| indeg[i] == 0)
            .map(|i| (self.names[comps[i][0]].clone(), i))
            .collect();
        let mut topo = Vec::with_capacity(comps.len());
        while let Some(first) = ready.iter().next().cloned() {
            ready.remove(&first);
            let i = first.1;
            topo.push(i);
            for &j in &succ[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert((self.names[comps[j][0]].clone(), j));
                }
            }
        }
        Condensation {
            components: comps
                .iter()
                .map(|c| c.iter().map(|&v| self.names[v].clone()).collect())
                .collect(),
            component_edges: comp_edges.into_iter().collect(),
            topo_order: topo,
        }
    }

    pub fn to_dot(&self, style: &dyn Fn(&str) -> NodeStyle, name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph {name} {{");
        let _ = writeln!(s, "  rankdir=TB;");
        for n in &self.names {
            let attrs = match style(n) {
                NodeStyle::Chance => "shape=ellipse",
                NodeStyle::Decision => "shape=box",
                NodeStyle::Utility => "shape=diamond",
                NodeStyle::Mechanism => "shape=box, style=rounded",
            };
            let _ = writeln!(s, "  \"{n}\" [{attrs}];");
        }
        for (a, b) in self.edges() {
            let _ = writeln!(s, "  \"{a}\" -> \"{b}\";");
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStyle {
    Chance,
    Decision,
    Utility,
    Mechanism,
}

fn tarjan(children: &[Vec<usize>]) -> Vec<Vec<usize>> {
    struct State<'a> {
        children: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }
    fn strongconnect(st: &mut State, v: usize) {
        st.index[v] = Some(st.next);
        st.low[v] = st.next;
        st.next += 1;
        st.stack.push(v);
        st.on_stack[v] = true;
        for w in st.children[v].clone() {
            if st.index[w].is_none() {
                strongconnect(st, w);
                st.low[v] = st.low[v].min(st.low[w]);
            } else if st.on_stack[w] {
                st.low[v] = st.low[v].min(st.index[w].unwrap());
            }
        }
        if st.low[v] == st.index[v].unwrap() {
            let mut comp = Vec::new();
            loop {
                let w = st.stack.pop().unwrap();
                st.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            st.out.push(comp);
        }
    }
    let n = children.len();
    let mut st = State {
        children,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if st.index[v].is_none() {
            strongconnect(&mut st, v);
        }
    }
    st.out
}

/// Strongly-connected-component condensation with a deterministic
/// topological order over components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condensation {
    pub components: Vec<Vec<String>>,
    pub component_edges: Vec<(usize, usize)>,
    pub topo_order: Vec<usize>,
}

impl Condensation {
    pub fn component_of(&self, v: &str) -> Option<usize> {
        self.components.iter().position(|c| c.iter().any(|n| n == v))
    }
}

/// Acyclic directed graph. Construction validates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    g: Digraph,
}

impl Dag {
    pub fn new<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Dag> {
        let g = Digraph::new(nodes, edges)?;
        if let Some(cy) = g.find_cycle() {
            return Err(Error::CycleDetected(cy.join(" -> ")));
        }
        Ok(Dag { g })
    }

    pub fn from_digraph(g: Digraph) -> Result<Dag> {
        if let Some(cy) = g.find_cycle() {
            return Err(Error::CycleDetected(cy.join(" -> ")));
        }
        Ok(Dag { g })
    }

    pub fn digraph(&self) -> &Digraph {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn nodes(&self) -> &[String] {
        self.g.nodes()
    }

    pub fn contains(&self, v: &str) -> bool {
        self.g.contains(v)
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        self.g.edges()
    }

    pub fn parents(&self, v: &str) -> Result<Vec<String>> {
        self.g.parents(v)
    }

    pub fn children(&self, v: &str) -> Result<Vec<String>> {
        self.g.children(v)
    }

    pub fn ancestors(&self, v: &str) -> Result<BTreeSet<String>> {
        self.g.ancestors(v)
    }

    pub fn descendants(&self, v: &str) -> Result<BTreeSet<String>> {
        self.g.descendants(v)
    }

    pub fn ancestors_of_set(&self, vs: &BTreeSet<String>) -> Result<BTreeSet<String>> {
        self.g.ancestors_of_set(vs)
    }

    pub fn descendants_of_set(&self, vs: &BTreeSet<String>) -> Result<BTreeSet<String>> {
        self.g.descendants_of_set(vs)
    }

    pub fn has_path(&self, a: &str, b: &str) -> Result<bool> {
        self.g.has_path(a, b)
    }

    /// parents ∪ {v}
    pub fn family(&self, v: &str) -> Result<Vec<String>> {
        let mut f = self.g.parents(v)?;
        f.push(v.to_string());
        Ok(f)
    }

    /// Declaration-order-stable topological order.
    pub fn topological_order(&self) -> Vec<String> {
        let (order, _) = self.g.kahn();
        order.into_iter().map(|i| self.g.names[i].clone()).collect()
    }

    pub fn induced(&self, keep: &BTreeSet<String>) -> Result<Dag> {
        Dag::from_digraph(self.g.induced(keep)?)
    }

    pub fn to_dot(&self, style: &dyn Fn(&str) -> NodeStyle, name: &str) -> String {
        self.g.to_dot(style, name)
    }

    /// X ⊥ Z | Y. The three sets must be pairwise disjoint.
    pub fn d_separated(
        &self,
        x: &BTreeSet<String>,
        z: &BTreeSet<String>,
        y: &BTreeSet<String>,
    ) -> Result<bool> {
        for v in x.iter().chain(z).chain(y) {
            self.g.idx(v)?;
        }
        for v in x {
            if z.contains(v) || y.contains(v) {
                return Err(Error::OverlappingSets(v.clone()));
            }
        }
        for v in z {
            if y.contains(v) {
                return Err(Error::OverlappingSets(v.clone()));
            }
        }
        Ok(!self.d_connected_reach(x, y)?.intersection(z).next().is_some())
    }

    /// Nodes reachable from X by an active trail given conditioning set Y.
    fn d_connected_reach(
        &self,
        x: &BTreeSet<String>,
        y: &BTreeSet<String>,
    ) -> Result<BTreeSet<String>> {
        let g = &self.g;
        let xs: Vec<usize> = x.iter().map(|v| g.idx(v)).collect::<Result<_>>()?;
        let ys: BTreeSet<usize> = y.iter().map(|v| g.idx(v)).collect::<Result<_>>()?;
        let mut anc_y: BTreeSet<usize> = ys.clone();
        anc_y.extend(g.closure(&ys.iter().copied().collect::<Vec<_>>(), &g.parents));

        const UP: usize = 0;
        const DOWN: usize = 1;
        let mut visited = vec![[false; 2]; g.len()];
        let mut reached: BTreeSet<usize> = BTreeSet::new();
        let mut queue: VecDeque<(usize, usize)> = xs.iter().map(|&v| (v, UP)).collect();
        while let Some((v, dir)) = queue.pop_front() {
            if visited[v][dir] {
                continue;
            }
            visited[v][dir] = true;
            if !ys.contains(&v) {
                reached.insert(v);
            }
            if dir == UP && !ys.contains(&v) {
                for &p in &g.parents[v] {
                    queue.push_back((p, UP));
                }
                for &c in &g.children[v] {
                    queue.push_back((c, DOWN));
                }
            } else if dir == DOWN {
                if !ys.contains(&v) {
                    for &c in &g.children[v] {
                        queue.push_back((c, DOWN));
                    }
                }
                if anc_y.contains(&v) {
                    for &p in &g.parents[v] {
                        queue.push_back((p, UP));
                    }
                }
            }
        }
        Ok(reached.into_iter().map(|i| g.names[i].clone()).collect())
    }

    /// Is the (implicit, independent) mechanism parent of v d-connected to X
    /// given Y? Decides whether v's parameters matter for the query P(X | Y).
    pub fn requisite_node(
        &self,
        v: &str,
        x: &BTreeSet<String>,
        y: &BTreeSet<String>,
    ) -> Result<bool> {
        self.g.idx(v)?;
        let theta = "\u{3b8}::probe";
        let mut nodes: Vec<String> = self.g.names.clone();
        nodes.push(theta.to_string());
        let mut edges = self.g.edges();
        edges.push((theta.to_string(), v.to_string()));
        let aug = Dag::new(&nodes, &edges)?;
        let mut src = BTreeSet::new();
        src.insert(theta.to_string());
        Ok(!aug.d_separated(&src, x, y)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(vs: &[&str]) -> BTreeSet<String> {
        vs.iter().map(|s| s.to_string()).collect()
    }

    fn fig1a() -> Dag {
        Dag::new(
            &["C", "D", "A", "B"],
            &[("C", "A"), ("C", "D"), ("D", "A"), ("D", "B")],
        )
        .unwrap()
    }

    #[test]
    fn dag_validation() {
        assert!(Dag::new(&["A"], &[]).is_ok());
        assert!(fig1a().topological_order().len() == 4);
        let e = Dag::new(&["A", "B"], &[("A", "B"), ("B", "A")]).unwrap_err();
        assert!(matches!(e, Error::CycleDetected(_)));
        let e = Dag::new(&["A"], &[("A", "B")]).unwrap_err();
        assert!(matches!(e, Error::DanglingEndpoint(_)));
    }

    #[test]
    fn family_queries() {
        let g = fig1a();
        assert_eq!(g.parents("D").unwrap(), vec!["C"]);
        assert_eq!(g.children("D").unwrap(), vec!["A", "B"]);
        assert_eq!(g.ancestors("A").unwrap(), set(&["C", "D"]));
        assert_eq!(g.descendants("C").unwrap(), set(&["A", "B", "D"]));
        assert_eq!(g.family("A").unwrap(), vec!["C", "D", "A"]);
        assert!(matches!(g.parents("Z"), Err(Error::UnknownNode(_))));
        let iso = Dag::new(&["X", "Y"], &[]).unwrap();
        assert!(iso.ancestors("X").unwrap().is_empty());
        assert_eq!(iso.family("X").unwrap(), vec!["X"]);
        let chain = Dag::new(&["X", "Y", "Z"], &[("X", "Y"), ("Y", "Z")]).unwrap();
        assert_eq!(chain.ancestors("Y").unwrap(), set(&["X"]));
        assert_eq!(chain.descendants("Y").unwrap(), set(&["Z"]));
    }

    #[test]
    fn d_separation_examples() {
        let g = fig1a();
        assert!(!g.d_separated(&set(&["A"]), &set(&["B"]), &set(&["C"])).unwrap());
        assert!(g.d_separated(&set(&["A"]), &set(&["B"]), &set(&["D"])).unwrap());
        let disc = Dag::new(&["P", "Q"], &[]).unwrap();
        assert!(disc.d_separated(&set(&["P"]), &set(&["Q"]), &set(&[])).unwrap());
        assert!(matches!(
            g.d_separated(&set(&["A"]), &set(&["A"]), &set(&[])),
            Err(Error::OverlappingSets(_))
        ));
    }

    #[test]
    fn collider_cases() {
        let g = Dag::new(&["X", "Y", "W"], &[("X", "W"), ("Y", "W")]).unwrap();
        assert!(g.d_separated(&set(&["X"]), &set(&["Y"]), &set(&[])).unwrap());
        assert!(!g.d_separated(&set(&["X"]), &set(&["Y"]), &set(&["W"])).unwrap());
        let g2 = Dag::new(&["X", "Y", "W", "S"], &[("X", "W"), ("Y", "W"), ("W", "S")]).unwrap();
        assert!(!g2.d_separated(&set(&["X"]), &set(&["Y"]), &set(&["S"])).unwrap());
    }

    #[test]
    fn requisite_examples() {
        let g = fig1a();
        assert!(!g.requisite_node("C", &set(&["B"]), &set(&["D"])).unwrap());
        assert!(g.requisite_node("B", &set(&["B"]), &set(&[])).unwrap());
        assert!(g.requisite_node("D", &set(&["A"]), &set(&[])).unwrap());
    }

    #[test]
    fn condensation() {
        let g = Digraph::new(
            &["PiA", "PiB", "PiD2", "PiD3", "PiD4"],
            &[
                ("PiA", "PiB"),
                ("PiB", "PiD2"),
                ("PiD2", "PiA"),
                ("PiD3", "PiA"),
                ("PiD2", "PiD4"),
            ],
        )
        .unwrap();
        let c = g.condense();
        assert_eq!(c.components.len(), 3);
        let big = c.components.iter().find(|c| c.len() == 3).unwrap();
        assert_eq!(big, &vec!["PiA", "PiB", "PiD2"]);
        let dag = Dag::new(&["A", "B", "C"], &[("A", "B"), ("B", "C")]).unwrap();
        let c2 = dag.digraph().condense();
        assert_eq!(c2.components.len(), 3);
        assert_eq!(c2.topo_order, vec![0, 1, 2]);
        let two = Digraph::new(&["P1", "P2"], &[("P1", "P2"), ("P2", "P1")]).unwrap();
        assert_eq!(two.condense().components, vec![vec!["P1", "P2"]]);
    }
}
