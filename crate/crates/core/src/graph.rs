//! Directed acyclic graphs, d-separation and the back-door and
//! front-door-like identification criteria.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type VertexSet = BTreeSet<usize>;

/// Default cap on the number of (mediator set, z1, z2) combinations examined
/// by [`Dag::minimal_mediator_sets`].
pub const DEFAULT_SEARCH_BUDGET: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    /// Builds a DAG over `names` with edges `(tail, head)` given as indices.
    pub fn new(names: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate vertex `{name}`")));
            }
        }
        let q = names.len();
        let mut parents = vec![Vec::new(); q];
        let mut children = vec![Vec::new(); q];
        for &(t, h) in edges {
            if t >= q || h >= q {
                return Err(Error::InvalidGraph(format!("edge ({t}, {h}) out of range")));
            }
            if t == h {
                return Err(Error::InvalidGraph(format!("self-loop on `{}`", names[t])));
            }
            if children[t].contains(&h) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge {} -> {}",
                    names[t], names[h]
                )));
            }
            children[t].push(h);
            parents[h].push(t);
        }
        let dag = Self {
            names,
            index,
            parents,
            children,
        };
        if dag.topological_order_inner().is_none() {
            return Err(Error::InvalidGraph("graph contains a directed cycle".into()));
        }
        Ok(dag)
    }

    pub fn from_named_edges(names: &[&str], edges: &[(&str, &str)]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let lookup: HashMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut idx = Vec::with_capacity(edges.len());
        for (t, h) in edges {
            let ti = *lookup.get(t).ok_or_else(|| Error::UnknownVertex(t.to_string()))?;
            let hi = *lookup.get(h).ok_or_else(|| Error::UnknownVertex(h.to_string()))?;
            idx.push((ti, hi));
        }
        Self::new(names, &idx)
    }

    /// Parses the edge-list format: one `tail -> head` per line, a bare
    /// identifier declares an isolated vertex, `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut intern = |name: &str, line: usize| -> Result<usize> {
            if name.is_empty()
                || !name
                    .chars()
                    .all(|c| c.is_alphanumeric() || c == '_' || c == '.' || c == '\'')
            {
                return Err(Error::Parse {
                    line,
                    message: format!("invalid vertex name `{name}`"),
                });
            }
            if let Some(&i) = index.get(name) {
                return Ok(i);
            }
            names.push(name.to_string());
            index.insert(name.to_string(), names.len() - 1);
            Ok(names.len() - 1)
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once("->") {
                Some((t, h)) => {
                    let t = intern(t.trim(), lineno + 1)?;
                    let h = intern(h.trim(), lineno + 1)?;
                    edges.push((t, h));
                }
                None => {
                    intern(line, lineno + 1)?;
                }
            }
        }
        Self::new(names, &edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for v in 0..self.len() {
            if self.parents[v].is_empty() && self.children[v].is_empty() {
                let _ = writeln!(out, "{}", self.names[v]);
            }
            for &c in &self.children[v] {
                let _ = writeln!(out, "{} -> {}", self.names[v], self.names[c]);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn vertex(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }

    pub fn vertex_set<S: AsRef<str>>(&self, names: &[S]) -> Result<VertexSet> {
        names.iter().map(|n| self.vertex(n.as_ref())).collect()
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|t| self.children[t].iter().map(move |&h| (t, h)))
            .collect()
    }

    pub fn has_edge(&self, tail: usize, head: usize) -> bool {
        self.children[tail].contains(&head)
    }

    fn topological_order_inner(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..self.len()).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == self.len()).then_some(order)
    }

    /// Vertices in an order where every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        self.topological_order_inner()
            .expect("acyclicity is checked on construction")
    }

    fn check(&self, v: usize) -> Result<()> {
        if v < self.len() {
            Ok(())
        } else {
            Err(Error::UnknownVertex(format!("#{v}")))
        }
    }

    fn closure(&self, start: impl IntoIterator<Item = usize>, up: bool) -> VertexSet {
        let mut seen = VertexSet::new();
        let mut stack: Vec<usize> = start.into_iter().collect();
        while let Some(v) = stack.pop() {
            let next = if up { &self.parents[v] } else { &self.children[v] };
            for &w in next {
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        seen
    }

    /// Proper ancestors of `v`.
    pub fn ancestors(&self, v: usize) -> Result<VertexSet> {
        self.check(v)?;
        let mut s = self.closure([v], true);
        s.remove(&v);
        Ok(s)
    }

    /// Proper descendants of `v`.
    pub fn descendants(&self, v: usize) -> Result<VertexSet> {
        self.check(v)?;
        let mut s = self.closure([v], false);
        s.remove(&v);
        Ok(s)
    }

    /// Copy of the graph without the edges leaving any vertex of `sources`.
    pub fn without_edges_out_of(&self, sources: &VertexSet) -> Dag {
        let mut g = self.clone();
        for &s in sources {
            for c in std::mem::take(&mut g.children[s]) {
                g.parents[c].retain(|&p| p != s);
            }
        }
        g
    }

    /// `true` iff `z` d-separates `a` from `b`.
    ///
    /// Reachability search over (vertex, direction) states: a trail may pass
    /// a non-collider only when it is unconditioned, and a collider only when
    /// it is an ancestor of (or in) `z`.
    pub fn d_separated(&self, a: &VertexSet, b: &VertexSet, z: &VertexSet) -> Result<bool> {
        for &v in a.iter().chain(b).chain(z) {
            self.check(v)?;
        }
        if !a.is_disjoint(b) || !a.is_disjoint(z) || !b.is_disjoint(z) {
            return Err(Error::OverlappingSets);
        }
        if a.is_empty() || b.is_empty() {
            return Ok(true);
        }
        let mut anc_z = self.closure(z.iter().copied(), true);
        anc_z.extend(z.iter().copied());

        // direction: true = arrived from a child (travelling up),
        //            false = arrived from a parent (travelling down)
        let mut visited = vec![[false; 2]; self.len()];
        let mut queue: VecDeque<(usize, bool)> = a.iter().map(|&v| (v, true)).collect();
        while let Some((v, up)) = queue.pop_front() {
            let slot = &mut visited[v][up as usize];
            if *slot {
                continue;
            }
            *slot = true;
            let conditioned = z.contains(&v);
            if !conditioned && b.contains(&v) {
                return Ok(false);
            }
            if up {
                if !conditioned {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                    queue.extend(self.children[v].iter().map(|&c| (c, false)));
                }
            } else {
                if !conditioned {
                    queue.extend(self.children[v].iter().map(|&c| (c, false)));
                }
                if anc_z.contains(&v) {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                }
            }
        }
        Ok(true)
    }

    /// Back-door criterion for (possibly set-valued) treatment and outcome:
    /// no member of `z` descends from a treatment, and `z` d-separates
    /// treatments from outcomes once every edge out of a treatment is cut.
    pub fn satisfies_back_door_sets(
        &self,
        treatments: &VertexSet,
        outcomes: &VertexSet,
        z: &VertexSet,
    ) -> Result<bool> {
        for &v in treatments.iter().chain(outcomes).chain(z) {
            self.check(v)?;
        }
        if !treatments.is_disjoint(outcomes) || !treatments.is_disjoint(z) || !outcomes.is_disjoint(z) {
            return Err(Error::OverlappingSets);
        }
        let desc = self.closure(treatments.iter().copied(), false);
        if !z.is_disjoint(&desc) {
            return Ok(false);
        }
        self.without_edges_out_of(treatments)
            .d_separated(treatments, outcomes, z)
    }

    pub fn satisfies_back_door(&self, x: usize, y: usize, z: &VertexSet) -> Result<bool> {
        if x == y {
            return Err(Error::OverlappingSets);
        }
        self.satisfies_back_door_sets(&[x].into(), &[y].into(), z)
    }

    /// `true` iff every directed path from `x` to `y` passes through `s`.
    pub fn intercepts_directed_paths(&self, x: usize, y: usize, s: &VertexSet) -> Result<bool> {
        self.check(x)?;
        self.check(y)?;
        let mut seen = vec![false; self.len()];
        let mut stack = vec![x];
        seen[x] = true;
        while let Some(v) = stack.pop() {
            for &c in &self.children[v] {
                if c == y {
                    return Ok(false);
                }
                if !seen[c] && !s.contains(&c) {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        Ok(true)
    }

    /// Front-door-like criterion of `s` relative to `(x, y)` with `z1 ∪ z2`.
    pub fn satisfies_front_door_like(
        &self,
        x: usize,
        y: usize,
        s: &VertexSet,
        z1: &VertexSet,
        z2: &VertexSet,
    ) -> Result<bool> {
        for &v in [x, y].iter().chain(s).chain(z1).chain(z2) {
            self.check(v)?;
        }
        let xy: VertexSet = [x, y].into();
        let z: VertexSet = z1.union(z2).copied().collect();
        if x == y || !xy.is_disjoint(s) || !xy.is_disjoint(&z) || !s.is_disjoint(&z) {
            return Err(Error::OverlappingSets);
        }
        self.front_door_like_unchecked(x, y, s, z1, z2)
    }

    fn front_door_like_unchecked(
        &self,
        x: usize,
        y: usize,
        s: &VertexSet,
        z1: &VertexSet,
        z2: &VertexSet,
    ) -> Result<bool> {
        if !self.intercepts_directed_paths(x, y, s)? {
            return Ok(false);
        }
        if !self.satisfies_back_door_sets(&[x].into(), s, z1)? {
            return Ok(false);
        }
        let mut z2x = z2.clone();
        z2x.insert(x);
        self.satisfies_back_door_sets(s, &[y].into(), &z2x)
    }

    /// All inclusion-minimal sets of intermediate variables of `(x, y)` that
    /// satisfy the front-door-like criterion for some `z1, z2 ⊆ candidate_z`.
    ///
    /// Shared conditioning sets (`z1 = z2`) are tried first; independent
    /// pairs only when no shared set works. `budget` caps the number of
    /// criterion evaluations.
    pub fn minimal_mediator_sets(
        &self,
        x: usize,
        y: usize,
        candidate_z: &VertexSet,
        budget: usize,
    ) -> Result<Vec<MediatorSet>> {
        self.check(x)?;
        self.check(y)?;
        let mediators: Vec<usize> = self
            .descendants(x)?
            .intersection(&self.ancestors(y)?)
            .copied()
            .collect();
        let zs: Vec<usize> = candidate_z
            .iter()
            .copied()
            .filter(|v| *v != x && *v != y && !mediators.contains(v))
            .collect();
        let z_subsets = subsets_by_size(&zs);
        let mut spent = 0usize;
        let mut charge = |k: usize| -> Result<()> {
            spent += k;
            if spent > budget {
                Err(Error::SearchBudgetExceeded(budget))
            } else {
                Ok(())
            }
        };

        let mut found: Vec<MediatorSet> = Vec::new();
        for s in subsets_by_size(&mediators) {
            if found.iter().any(|f| f.mediators.is_subset(&s)) {
                continue;
            }
            charge(1)?;
            if !self.intercepts_directed_paths(x, y, &s)? {
                continue;
            }
            let mut witness = None;
            for z in &z_subsets {
                charge(1)?;
                if self.front_door_like_unchecked(x, y, &s, z, z)? {
                    witness = Some((z.clone(), z.clone()));
                    break;
                }
            }
            if witness.is_none() {
                'outer: for z1 in &z_subsets {
                    for z2 in &z_subsets {
                        if z1 == z2 {
                            continue;
                        }
                        charge(1)?;
                        if self.front_door_like_unchecked(x, y, &s, z1, z2)? {
                            witness = Some((z1.clone(), z2.clone()));
                            break 'outer;
                        }
                    }
                }
            }
            if let Some((z1, z2)) = witness {
                found.push(MediatorSet {
                    mediators: s,
                    z1,
                    z2,
                });
            }
        }
        Ok(found)
    }
}

/// A sufficient mediator set together with the conditioning sets that
/// witness the front-door-like criterion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediatorSet {
    pub mediators: VertexSet,
    pub z1: VertexSet,
    pub z2: VertexSet,
}

/// All subsets of `items`, smallest first.
fn subsets_by_size(items: &[usize]) -> Vec<VertexSet> {
    let k = items.len();
    assert!(k < 31, "subset enumeration limited to 30 items");
    let mut masks: Vec<u32> = (0..(1u32 << k)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    masks
        .into_iter()
        .map(|m| {
            (0..k)
                .filter(|i| m & (1 << i) != 0)
                .map(|i| items[i])
                .collect()
        })
        .collect()
}
