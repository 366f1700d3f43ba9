//! Brute-force graph oracles: path enumeration for d-separation, subset
//! search for Markov boundaries and both sides of the boundary-collider
//! equivalence.

use std::collections::BTreeSet;

use collider_core::graph::{parse_dag, Dag, GraphError};
use collider_core::numerics::RngStream;

const FIG2: &str = "X2 -> X1\nX2 -> X3\nX1 -> Y\nX3 -> Y\nY -> X6\nX4 -> X6\nX5 -> X6\nX3 -> X5\nX6 -> X7\n";
const FIG4: &str = "X3 -> Y\nY -> X1\nX2 -> X1\nX3 -> X1\nX3 -> X2";

// Adjacency rebuilt from the edge list, so the oracle shares nothing with the
// library's own bookkeeping.
struct Skeleton {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    desc: Vec<Vec<bool>>,
}

impl Skeleton {
    fn new(dag: &Dag) -> Self {
        let n = dag.len();
        let edges: BTreeSet<(usize, usize)> = dag.edges().iter().copied().collect();
        let mut desc = vec![vec![false; n]; n];
        for (v, row) in desc.iter_mut().enumerate() {
            let mut stack = vec![v];
            while let Some(u) = stack.pop() {
                if row[u] {
                    continue;
                }
                row[u] = true;
                stack.extend(edges.iter().filter(|e| e.0 == u).map(|e| e.1));
            }
        }
        Skeleton { n, edges, desc }
    }

    fn linked(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a, b)) || self.edges.contains(&(b, a))
    }

    fn active(&self, path: &[usize], s: &[bool]) -> bool {
        for w in path.windows(3) {
            let (p, v, q) = (w[0], w[1], w[2]);
            let collider = self.edges.contains(&(p, v)) && self.edges.contains(&(q, v));
            if collider {
                if !(0..self.n).any(|d| self.desc[v][d] && s[d]) {
                    return false;
                }
            } else if s[v] {
                return false;
            }
        }
        true
    }

    fn any_active(&self, path: &mut Vec<usize>, on: &mut [bool], target: usize, s: &[bool]) -> bool {
        let last = *path.last().unwrap();
        if last == target {
            return self.active(path, s);
        }
        for next in 0..self.n {
            if on[next] || !self.linked(last, next) {
                continue;
            }
            path.push(next);
            on[next] = true;
            let found = self.any_active(path, on, target, s);
            on[next] = false;
            path.pop();
            if found {
                return true;
            }
        }
        false
    }

    /// No active simple path between `a` and `b` given `s`.
    fn separated(&self, a: usize, b: usize, s: &[usize]) -> bool {
        let mut mask = vec![false; self.n];
        s.iter().for_each(|&v| mask[v] = true);
        let mut on = vec![false; self.n];
        on[a] = true;
        !self.any_active(&mut vec![a], &mut on, b, &mask)
    }

    fn separated_sets(&self, a: &[usize], b: &[usize], s: &[usize]) -> bool {
        a.iter().all(|&x| b.iter().all(|&y| self.separated(x, y, s)))
    }
}

fn subsets(items: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    (0u32..1 << items.len()).map(move |m| (0..items.len()).filter(|i| m >> i & 1 == 1).map(|i| items[i]).collect())
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("V{i}")).collect()
}

/// Every labeled DAG on `n` vertices.
pub fn all_dags(n: usize) -> Vec<Dag> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut out = Vec::new();
    let total = 3usize.pow(pairs.len() as u32);
    for code in 0..total {
        let mut c = code;
        let mut edges = Vec::new();
        for &(i, j) in &pairs {
            match c % 3 {
                1 => edges.push((i, j)),
                2 => edges.push((j, i)),
                _ => {}
            }
            c /= 3;
        }
        match Dag::new(names(n), edges) {
            Ok(d) => out.push(d),
            Err(GraphError::Cycle(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    out
}

/// Random DAG: a random vertex order with each forward pair joined with
/// probability `p`.
pub fn random_dag(rng: &mut RngStream, n: usize, p: f64) -> Dag {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.uniform() < p {
                edges.push((order[i], order[j]));
            }
        }
    }
    Dag::new(names(n), edges).expect("forward edges are acyclic")
}

/// Checks one DAG against every oracle; returns the first disagreement.
pub fn check_dag(dag: &Dag) -> Result<(), String> {
    let sk = Skeleton::new(dag);
    let n = dag.len();
    let all: Vec<usize> = (0..n).collect();
    // d-separation of every vertex pair given every subset of the rest
    for a in 0..n {
        for b in a + 1..n {
            let rest: Vec<usize> = all.iter().copied().filter(|&v| v != a && v != b).collect();
            for s in subsets(&rest) {
                let want = sk.separated(a, b, &s);
                let got = dag.d_separated(&[a], &[b], &s).map_err(|e| e.to_string())?;
                let sym = dag.d_separated(&[b], &[a], &s).map_err(|e| e.to_string())?;
                if got != want || sym != want {
                    return Err(format!("{dag:?}: d_separated({a}, {b} | {s:?}) = {got}/{sym}, oracle {want}"));
                }
            }
        }
    }
    for y in 0..n {
        let others: Vec<usize> = all.iter().copied().filter(|&v| v != y).collect();
        // Markov boundary: the unique inclusion-minimal shielding set
        let shielding: Vec<BTreeSet<usize>> = subsets(&others)
            .filter(|s| {
                let rest: Vec<usize> = others.iter().copied().filter(|v| !s.contains(v)).collect();
                sk.separated_sets(&[y], &rest, s)
            })
            .map(|s| s.into_iter().collect())
            .collect();
        let minimal: Vec<&BTreeSet<usize>> = shielding
            .iter()
            .filter(|s| !shielding.iter().any(|t| t.len() < s.len() && t.is_subset(s)))
            .collect();
        let mb = dag.markov_boundary(y).map_err(|e| e.to_string())?;
        if minimal.len() != 1 || *minimal[0] != mb {
            return Err(format!("{dag:?}: boundary of {y} is {mb:?}, minimal shielding sets {minimal:?}"));
        }
        // boundary colliders exist iff some boundary vertex is separable
        // from y inside the boundary
        let mbv: Vec<usize> = mb.iter().copied().collect();
        let separable = mbv.iter().any(|&z| {
            let rest: Vec<usize> = mbv.iter().copied().filter(|&v| v != z).collect();
            let found = subsets(&rest).any(|s| sk.separated(y, z, &s));
            found
        });
        let colliders = dag.boundary_colliders(y).map_err(|e| e.to_string())?;
        if colliders.is_empty() == separable {
            return Err(format!("{dag:?}: colliders of {y} {colliders:?}, separable {separable}"));
        }
        check_partition(dag, &sk, y, &mb)?;
    }
    Ok(())
}

fn check_partition(dag: &Dag, sk: &Skeleton, y: usize, mb: &BTreeSet<usize>) -> Result<(), String> {
    let children: BTreeSet<usize> = (0..dag.len()).filter(|&v| sk.edges.contains(&(y, v))).collect();
    let parents: BTreeSet<usize> = (0..dag.len()).filter(|&v| sk.edges.contains(&(v, y))).collect();
    let others: Vec<usize> = mb.iter().copied().filter(|v| !children.contains(v) && !parents.contains(v)).collect();
    let blocked = children.iter().any(|&c| others.iter().any(|&o| sk.edges.contains(&(c, o))));
    let pv: Vec<usize> = parents.iter().copied().collect();
    let valid = !blocked && (others.is_empty() || sk.separated_sets(&[y], &others, &pv));
    match dag.collider_partition(y) {
        Ok(p) => {
            let got_c: BTreeSet<usize> = p.children.iter().copied().collect();
            let got_p: BTreeSet<usize> = p.parents.iter().copied().collect();
            let got_o: BTreeSet<usize> = p.others.iter().copied().collect();
            let disjoint = got_c.is_disjoint(&got_p) && got_c.is_disjoint(&got_o) && got_p.is_disjoint(&got_o);
            let union: BTreeSet<usize> = got_c.union(&got_p).chain(got_o.iter()).copied().collect();
            if mb.is_empty() || !valid || !disjoint || union != *mb || got_c != children || got_p != parents {
                return Err(format!("{dag:?}: partition of {y} is {p:?}"));
            }
        }
        Err(GraphError::EmptyBoundary(_)) if mb.is_empty() => {}
        Err(GraphError::PartitionInvalid(_)) if !mb.is_empty() && !valid => {}
        Err(e) => return Err(format!("{dag:?}: partition of {y} failed: {e}")),
    }
    Ok(())
}

/// The published figure fixtures, checked exactly.
pub fn check_fixtures() -> Result<(), String> {
    let dag = parse_dag(FIG2).map_err(|e| e.to_string())?;
    let ix = |s: &str| dag.index(s).unwrap();
    let y = ix("Y");
    let mb: Vec<&str> = dag.markov_boundary(y).unwrap().iter().map(|&v| dag.name(v)).collect();
    let mut mb_sorted = mb.clone();
    mb_sorted.sort();
    let sk = Skeleton::new(&dag);
    let checks = [
        (mb_sorted == ["X1", "X3", "X4", "X5", "X6"], "boundary of Y"),
        (dag.len() == 8 && dag.edges().len() == 9, "size"),
        (dag.d_separated(&[y], &[ix("X4")], &[]).unwrap(), "Y ⟂ X4"),
        (!dag.d_separated(&[y], &[ix("X4")], &[ix("X6")]).unwrap(), "Y not ⟂ X4 | X6"),
        (dag.d_separated(&[y], &[ix("X5")], &[ix("X3")]).unwrap(), "Y ⟂ X5 | X3"),
        (sk.separated(y, ix("X4"), &[]) && !sk.separated(y, ix("X4"), &[ix("X6")]), "path oracle on X4"),
        (sk.separated(y, ix("X5"), &[ix("X3")]), "path oracle on X5"),
        (dag.boundary_colliders(y).unwrap().contains(&ix("X6")), "X6 is a boundary collider"),
    ];
    if let Some((_, what)) = checks.iter().find(|(ok, _)| !ok) {
        return Err(format!("figure 2 fixture: {what}"));
    }
    check_dag(&dag)?;

    let simple = parse_dag("Y -> X1\nX2 -> X1").unwrap();
    let p = simple.collider_partition(0).unwrap();
    if (p.children.clone(), p.others.clone(), p.parents.clone()) != (vec![1], vec![2], vec![]) {
        return Err(format!("simple collider partition {p:?}"));
    }
    let general = parse_dag(FIG4).unwrap();
    let gi = |s: &str| general.index(s).unwrap();
    let p = general.collider_partition(gi("Y")).unwrap();
    if (p.children.clone(), p.others.clone(), p.parents.clone()) != (vec![gi("X1")], vec![gi("X2")], vec![gi("X3")]) {
        return Err(format!("general partition {p:?}"));
    }
    // the spouse X2 is also reached from the child X1
    let broken = parse_dag("Y -> X1\nY -> X4\nX2 -> X4\nX1 -> X2").unwrap();
    if !matches!(broken.collider_partition(broken.index("Y").unwrap()), Err(GraphError::PartitionInvalid(_))) {
        return Err("child-to-other edge was accepted".into());
    }
    let chain = parse_dag("A -> Y\nY -> B").unwrap();
    if !chain.boundary_colliders(chain.index("Y").unwrap()).unwrap().is_empty() {
        return Err("chain reported a collider".into());
    }
    Ok(())
}

/// Exhaustive sweep over all DAGs of up to five vertices, 200 random DAGs on
/// six or seven vertices and the figure fixtures.
pub fn graph_suite() -> Result<String, String> {
    // labeled DAG counts 1, 3, 25, 543, 29281
    let expected = [1usize, 1, 3, 25, 543, 29281];
    let mut checked = 0;
    for (n, &count) in expected.iter().enumerate().skip(1) {
        let dags = all_dags(n);
        if dags.len() != count {
            return Err(format!("{} DAGs on {n} vertices, expected {count}", dags.len()));
        }
        for d in &dags {
            check_dag(d)?;
        }
        checked += dags.len();
    }
    let mut rng = RngStream::new(2024, 0);
    for i in 0..200 {
        let n = 6 + i % 2;
        let p = 0.2 + 0.3 * rng.uniform();
        check_dag(&random_dag(&mut rng, n, p))?;
    }
    check_fixtures()?;
    Ok(format!("{checked} exhaustive and 200 random DAGs agree with the path and subset oracles"))
}
