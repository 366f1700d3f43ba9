//! Causal DAGs and the graphical queries that configure collider regression.
//!
//! A [`Dag`] is parsed from a plain edge list (`parent -> child`, one edge per
//! line, `#` comments). From it we derive the Markov boundary of a target,
//! decide d-separation with the reachability ("Bayes-ball") traversal, find the
//! colliders inside the boundary and partition the boundary into children,
//! parents and everything else.

use std::collections::{BTreeSet, HashMap, VecDeque};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("directed cycle through vertex '{0}'")]
    Cycle(String),

    #[error("malformed line {line}: '{text}'")]
    MalformedLine { line: usize, text: String },

    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),

    #[error("unknown vertex '{0}'")]
    UnknownVertex(String),

    #[error("vertex sets overlap on '{0}'")]
    OverlappingSets(String),

    #[error("invalid collider partition: {0}")]
    PartitionInvalid(String),

    #[error("Markov boundary of '{0}' is empty")]
    EmptyBoundary(String),
}

/// Directed acyclic graph over named vertices. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    names: Vec<String>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

/// Split of a Markov boundary around a target `Y`.
///
/// `children` are the children of `Y`, `parents` its parents and `others`
/// every remaining boundary vertex (spouses that are not parents).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColliderPartition {
    pub target: usize,
    pub children: Vec<usize>,
    pub others: Vec<usize>,
    pub parents: Vec<usize>,
}

/// Parses the edge-list format. Vertex order is first-appearance order.
pub fn parse_dag(text: &str) -> Result<Dag, GraphError> {
    Dag::parse(text)
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '.' | '-' | '\''))
}

impl Dag {
    /// Builds a DAG from vertex names and `(parent, child)` index pairs.
    pub fn new(names: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        let n = names.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(p, c) in &edges {
            if p >= n {
                return Err(GraphError::UnknownVertex(format!("#{p}")));
            }
            if c >= n {
                return Err(GraphError::UnknownVertex(format!("#{c}")));
            }
            if p == c {
                return Err(GraphError::Cycle(names[p].clone()));
            }
            if !seen.insert((p, c)) {
                return Err(GraphError::DuplicateEdge(names[p].clone(), names[c].clone()));
            }
            parents[c].push(p);
            children[p].push(c);
        }
        for v in parents.iter_mut().chain(children.iter_mut()) {
            v.sort_unstable();
        }
        let dag = Dag {
            names,
            edges,
            parents,
            children,
        };
        dag.check_acyclic()?;
        Ok(dag)
    }

    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut intern = |name: &str, names: &mut Vec<String>| -> usize {
            *index.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                names.len() - 1
            })
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let malformed = || GraphError::MalformedLine {
                line: lineno + 1,
                text: raw.to_string(),
            };
            let parts: Vec<&str> = line.split("->").map(str::trim).collect();
            match parts.as_slice() {
                // A bare name declares an isolated vertex.
                [single] if valid_name(single) => {
                    intern(single, &mut names);
                }
                [p, c] if valid_name(p) && valid_name(c) => {
                    let pi = intern(p, &mut names);
                    let ci = intern(c, &mut names);
                    edges.push((pi, ci));
                }
                _ => return Err(malformed()),
            }
        }
        Dag::new(names, edges)
    }

    fn check_acyclic(&self) -> Result<(), GraphError> {
        let order = self.kahn_order();
        if order.len() == self.len() {
            return Ok(());
        }
        let placed: BTreeSet<usize> = order.into_iter().collect();
        let stuck = (0..self.len()).find(|v| !placed.contains(v)).unwrap_or(0);
        Err(GraphError::Cycle(self.names[stuck].clone()))
    }

    fn kahn_order(&self) -> Vec<usize> {
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
        order
    }

    pub fn topological_order(&self) -> Vec<usize> {
        self.kahn_order()
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

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn index(&self, name: &str) -> Result<usize, GraphError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| GraphError::UnknownVertex(name.to_string()))
    }

    /// Resolves a list of names to indices.
    pub fn indices(&self, names: &[&str]) -> Result<Vec<usize>, GraphError> {
        names.iter().map(|n| self.index(n)).collect()
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.children[from].binary_search(&to).is_ok()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    fn check_vertex(&self, v: usize) -> Result<(), GraphError> {
        if v < self.len() {
            Ok(())
        } else {
            Err(GraphError::UnknownVertex(format!("#{v}")))
        }
    }

    /// Membership mask of `seeds` and all their ancestors.
    pub fn ancestors_mask(&self, seeds: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        let mut stack: Vec<usize> = seeds.to_vec();
        while let Some(v) = stack.pop() {
            if !mask[v] {
                mask[v] = true;
                stack.extend_from_slice(&self.parents[v]);
            }
        }
        mask
    }

    /// Membership mask of `seeds` and all their descendants.
    pub fn descendants_mask(&self, seeds: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        let mut stack: Vec<usize> = seeds.to_vec();
        while let Some(v) = stack.pop() {
            if !mask[v] {
                mask[v] = true;
                stack.extend_from_slice(&self.children[v]);
            }
        }
        mask
    }

    /// `Pa(y) ∪ Ch(y) ∪ Sp(y)` where spouses are the other parents of `y`'s children.
    pub fn markov_boundary(&self, y: usize) -> Result<BTreeSet<usize>, GraphError> {
        self.check_vertex(y)?;
        let mut mb: BTreeSet<usize> = self.parents[y].iter().copied().collect();
        for &c in &self.children[y] {
            mb.insert(c);
            mb.extend(self.parents[c].iter().copied().filter(|&p| p != y));
        }
        Ok(mb)
    }

    /// Whether `a` and `b` are d-separated given `s`.
    ///
    /// Reachability formulation: a trail is followed through `(vertex,
    /// direction)` states. Non-colliders pass only when unobserved, colliders
    /// pass only when they or one of their descendants is observed.
    pub fn d_separated(&self, a: &[usize], b: &[usize], s: &[usize]) -> Result<bool, GraphError> {
        let n = self.len();
        for &v in a.iter().chain(b).chain(s) {
            self.check_vertex(v)?;
        }
        let mut role = vec![0u8; n];
        for (tag, set) in [(1u8, a), (2, b), (4, s)] {
            for &v in set {
                if role[v] & !tag != 0 {
                    return Err(GraphError::OverlappingSets(self.names[v].clone()));
                }
                role[v] |= tag;
            }
        }
        let observed: Vec<bool> = role.iter().map(|r| r & 4 != 0).collect();
        let observed_anc = self.ancestors_mask(s);

        // direction 0: arrived from a child (moving up), 1: arrived from a parent (moving down)
        let mut visited = vec![[false; 2]; n];
        let mut queue: VecDeque<(usize, usize)> = a.iter().map(|&v| (v, 0)).collect();
        while let Some((v, dir)) = queue.pop_front() {
            if visited[v][dir] {
                continue;
            }
            visited[v][dir] = true;
            if !observed[v] && role[v] & 2 != 0 {
                return Ok(false);
            }
            if dir == 0 {
                if !observed[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, 0)));
                    queue.extend(self.children[v].iter().map(|&c| (c, 1)));
                }
            } else {
                if !observed[v] {
                    queue.extend(self.children[v].iter().map(|&c| (c, 1)));
                }
                if observed_anc[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, 0)));
                }
            }
        }
        Ok(true)
    }

    /// Boundary vertices acting as colliders that admit a conditional
    /// independence with `y` inside the boundary.
    ///
    /// A vertex qualifies when it has at least two parents in `Mb(y) ∪ {y}`
    /// and one of them (other than `y`) is not adjacent to `y`.
    pub fn boundary_colliders(&self, y: usize) -> Result<Vec<usize>, GraphError> {
        let mb = self.markov_boundary(y)?;
        let out = mb
            .iter()
            .copied()
            .filter(|&v| {
                let inside: Vec<usize> = self.parents[v]
                    .iter()
                    .copied()
                    .filter(|p| *p == y || mb.contains(p))
                    .collect();
                inside.len() >= 2 && inside.iter().any(|&p| p != y && !self.adjacent(p, y))
            })
            .collect();
        Ok(out)
    }

    /// Partitions `Mb(y)` into children, parents and others, validating that
    /// no child points into `others` and that `y ⟂ others | parents`.
    pub fn collider_partition(&self, y: usize) -> Result<ColliderPartition, GraphError> {
        let mb = self.markov_boundary(y)?;
        if mb.is_empty() {
            return Err(GraphError::EmptyBoundary(self.names[y].clone()));
        }
        let children: Vec<usize> = self.children[y].clone();
        let parents: Vec<usize> = self.parents[y].clone();
        let others: Vec<usize> = mb
            .iter()
            .copied()
            .filter(|v| !children.contains(v) && !parents.contains(v))
            .collect();
        for &c in &children {
            for &o in &others {
                if self.has_edge(c, o) {
                    return Err(GraphError::PartitionInvalid(format!(
                        "edge {} -> {} from a child of {} into the remaining boundary",
                        self.names[c], self.names[o], self.names[y]
                    )));
                }
            }
        }
        if !others.is_empty() && !self.d_separated(&[y], &others, &parents)? {
            return Err(GraphError::PartitionInvalid(format!(
                "{} is not d-separated from the remaining boundary given its parents",
                self.names[y]
            )));
        }
        Ok(ColliderPartition {
            target: y,
            children,
            others,
            parents,
        })
    }
}
