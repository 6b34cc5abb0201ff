//! Causal DAGs read from edge lists, d-separation, and minimal backdoor
//! adjustment sets.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::CausalError;

const HIDDEN_PREFIX: &str = "hidden:";

/// Directed acyclic graph over named variables. Hidden nodes may appear on
/// paths but never in an adjustment set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CausalDag {
    names: Vec<String>,
    index: HashMap<String, usize>,
    hidden: Vec<bool>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl CausalDag {
    fn node(&mut self, token: &str, line: usize) -> Result<usize, CausalError> {
        let (name, hidden) = match token.strip_prefix(HIDDEN_PREFIX) {
            Some(rest) => (rest.trim(), true),
            None => (token, false),
        };
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(CausalError::DagSyntax {
                line,
                message: format!("bad node name {token:?}"),
            });
        }
        let id = match self.index.get(name) {
            Some(&id) => id,
            None => {
                let id = self.names.len();
                self.names.push(name.to_string());
                self.index.insert(name.to_string(), id);
                self.hidden.push(false);
                self.parents.push(vec![]);
                self.children.push(vec![]);
                id
            }
        };
        self.hidden[id] |= hidden;
        Ok(id)
    }

    /// One `from -> to` edge per line. A `hidden:` prefix on a node marks it
    /// unobservable; a line holding a single node just declares it. Blank
    /// lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, CausalError> {
        let mut dag = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let parts: Vec<&str> = content.split("->").map(str::trim).collect();
            match parts.as_slice() {
                [single] => {
                    dag.node(single, line)?;
                }
                [from, to] => {
                    let (a, b) = (dag.node(from, line)?, dag.node(to, line)?);
                    if !dag.children[a].contains(&b) {
                        dag.children[a].push(b);
                        dag.parents[b].push(a);
                    }
                }
                _ => {
                    return Err(CausalError::DagSyntax {
                        line,
                        message: "expected `from -> to`".into(),
                    })
                }
            }
        }
        if let Some(cycle) = dag.find_cycle() {
            let names: Vec<&str> = cycle.iter().map(|&v| dag.names[v].as_str()).collect();
            return Err(CausalError::Cycle(names.join(" -> ")));
        }
        Ok(dag)
    }

    pub fn load(path: &Path) -> Result<Self, CausalError> {
        let text = std::fs::read_to_string(path).map_err(|source| CausalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn node_names(&self) -> &[String] {
        &self.names
    }

    pub fn n_edges(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn is_hidden(&self, name: &str) -> Result<bool, CausalError> {
        Ok(self.hidden[self.id(name)?])
    }

    fn id(&self, name: &str) -> Result<usize, CausalError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| CausalError::UnknownNode(name.to_string()))
    }

    /// A directed cycle closed on its first node, if the graph has one.
    fn find_cycle(&self) -> Option<Vec<usize>> {
        // Kahn's algorithm; whatever survives lies on or upstream of a cycle
        let n = self.names.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut removed = vec![false; n];
        while let Some(v) = queue.pop() {
            removed[v] = true;
            for &c in &self.children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        let start = (0..n).find(|&v| !removed[v])?;
        // every survivor has a surviving parent; walk parents until a repeat
        let mut seen = vec![usize::MAX; n];
        let mut walk = vec![start];
        let mut v = start;
        loop {
            seen[v] = walk.len() - 1;
            v = *self.parents[v].iter().find(|&&p| !removed[p]).expect("survivor has a surviving parent");
            if seen[v] != usize::MAX {
                let mut cycle: Vec<usize> = walk[seen[v]..].to_vec();
                cycle.reverse();
                cycle.push(cycle[0]);
                return Some(cycle);
            }
            walk.push(v);
        }
    }

    fn closure(&self, start: &[usize], up: bool, cut: Option<usize>) -> Vec<bool> {
        let mut mark = vec![false; self.names.len()];
        let mut stack: Vec<usize> = start.to_vec();
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut mark[v], true) {
                continue;
            }
            let next = if up { &self.parents[v] } else { &self.children[v] };
            for &w in next {
                let edge_cut = if up { Some(w) == cut } else { Some(v) == cut };
                if !edge_cut {
                    stack.push(w);
                }
            }
        }
        mark
    }

    /// Whether `x` and `y` are d-separated by `z`, optionally after deleting
    /// every edge out of `cut`.
    fn d_separated(&self, x: usize, y: usize, z: &[bool], cut: Option<usize>) -> bool {
        let z_nodes: Vec<usize> = (0..z.len()).filter(|&v| z[v]).collect();
        let z_ancestors = self.closure(&z_nodes, true, cut);
        let parents = |v: usize| self.parents[v].iter().copied().filter(move |&p| Some(p) != cut);
        let children = |v: usize| {
            let kept = Some(v) != cut;
            self.children[v].iter().copied().filter(move |_| kept)
        };
        // (node, arrived travelling up from a child)
        let mut visited = vec![[false; 2]; self.names.len()];
        let mut stack = vec![(x, true)];
        while let Some((v, up)) = stack.pop() {
            if std::mem::replace(&mut visited[v][up as usize], true) {
                continue;
            }
            if v == y && !z[v] {
                return false;
            }
            if up && !z[v] {
                stack.extend(parents(v).map(|p| (p, true)));
                stack.extend(children(v).map(|c| (c, false)));
            } else if !up {
                if !z[v] {
                    stack.extend(children(v).map(|c| (c, false)));
                }
                if z_ancestors[v] {
                    stack.extend(parents(v).map(|p| (p, true)));
                }
            }
        }
        true
    }

    /// Whether `set` satisfies the backdoor criterion for `exposure → outcome`.
    pub fn is_backdoor_set(&self, exposure: &str, outcome: &str, set: &BTreeSet<String>) -> Result<bool, CausalError> {
        let (x, y) = (self.id(exposure)?, self.id(outcome)?);
        let mut z = vec![false; self.names.len()];
        for name in set {
            z[self.id(name)?] = true;
        }
        let descendants = self.closure(&[x], false, None);
        if (0..z.len()).any(|v| z[v] && descendants[v]) || z[y] {
            return Ok(false);
        }
        Ok(self.d_separated(x, y, &z, Some(x)))
    }

    /// All minimal observed backdoor sets, smallest first and lexicographic
    /// within a size. `[∅]` when no backdoor path exists.
    pub fn backdoor_adjustment_sets(
        &self,
        exposure: &str,
        outcome: &str,
    ) -> Result<Vec<BTreeSet<String>>, CausalError> {
        let (x, y) = (self.id(exposure)?, self.id(outcome)?);
        if x == y {
            return Err(CausalError::SameNode(exposure.to_string()));
        }
        let descendants = self.closure(&[x], false, None);
        // minimal separators lie inside the ancestors of {x, y}
        let ancestors = self.closure(&[x, y], true, None);
        let mut candidates: Vec<usize> = (0..self.names.len())
            .filter(|&v| ancestors[v] && !descendants[v] && v != y && !self.hidden[v])
            .collect();
        candidates.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
        if candidates.len() > 24 {
            log::warn!(
                "{} candidate adjustment nodes for {exposure}; the subset search may be slow",
                candidates.len()
            );
        }

        let mut minimal: Vec<Vec<usize>> = Vec::new();
        let mut z = vec![false; self.names.len()];
        for size in 0..=candidates.len() {
            for combo in Combinations::new(candidates.len(), size) {
                let set: Vec<usize> = combo.iter().map(|&i| candidates[i]).collect();
                if minimal.iter().any(|m| m.iter().all(|v| set.contains(v))) {
                    continue;
                }
                set.iter().for_each(|&v| z[v] = true);
                if self.d_separated(x, y, &z, Some(x)) {
                    minimal.push(set.clone());
                }
                set.iter().for_each(|&v| z[v] = false);
            }
        }
        if minimal.is_empty() {
            return Err(CausalError::NotIdentifiable {
                exposure: exposure.to_string(),
                outcome: outcome.to_string(),
            });
        }
        Ok(minimal
            .into_iter()
            .map(|set| set.into_iter().map(|v| self.names[v].clone()).collect())
            .collect())
    }
}

/// k-subsets of `0..n` in lexicographic order.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let advanced = (0..k).rev().find(|&i| next[i] < self.n - k + i);
        self.current = advanced.map(|i| {
            next[i] += 1;
            for j in i + 1..k {
                next[j] = next[j - 1] + 1;
            }
            next
        });
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const LOW_DENSITY: &str = "impervious -> low_density\nimpervious -> score\nlow_density -> score\n";
    pub(crate) const HS_GRAD: &str =
        "pct_minority -> hs_grad\npct_minority -> canopy\ncanopy -> score\nhs_grad -> score\n";

    fn sets(names: &[&[&str]]) -> Vec<BTreeSet<String>> {
        names
            .iter()
            .map(|s| s.iter().map(|n| n.to_string()).collect())
            .collect()
    }

    #[test]
    fn confounded_low_density() {
        let dag = CausalDag::parse(LOW_DENSITY).unwrap();
        assert_eq!(dag.node_names().len(), 3);
        assert_eq!(dag.n_edges(), 3);
        assert_eq!(
            dag.backdoor_adjustment_sets("low_density", "score").unwrap(),
            sets(&[&["impervious"]])
        );
    }

    #[test]
    fn either_confounder_on_a_single_path() {
        let dag = CausalDag::parse(HS_GRAD).unwrap();
        assert_eq!(
            dag.backdoor_adjustment_sets("hs_grad", "score").unwrap(),
            sets(&[&["canopy"], &["pct_minority"]])
        );
    }

    #[test]
    fn no_incoming_edge_needs_no_adjustment() {
        let dag = CausalDag::parse("a -> b\nb -> c\na -> c").unwrap();
        assert_eq!(dag.backdoor_adjustment_sets("a", "c").unwrap(), sets(&[&[]]));
    }

    #[test]
    fn hidden_confounder_is_not_identifiable() {
        let dag = CausalDag::parse("hidden:u -> x\nu -> y\nx -> y").unwrap();
        assert!(dag.is_hidden("u").unwrap());
        assert!(matches!(
            dag.backdoor_adjustment_sets("x", "y"),
            Err(CausalError::NotIdentifiable { .. })
        ));
        // an observed node on the hidden path restores identification
        let dag = CausalDag::parse("hidden:u -> w\nw -> x\nu -> y\nx -> y").unwrap();
        assert_eq!(dag.backdoor_adjustment_sets("x", "y").unwrap(), sets(&[&["w"]]));
    }

    #[test]
    fn cycles_are_listed() {
        match CausalDag::parse("a -> b\nb -> a") {
            Err(CausalError::Cycle(c)) => assert!(c == "a -> b -> a" || c == "b -> a -> b", "{c}"),
            other => panic!("{other:?}"),
        }
        match CausalDag::parse("s -> a\na -> b\nb -> c\nc -> a") {
            Err(CausalError::Cycle(c)) => {
                let nodes: Vec<&str> = c.split(" -> ").collect();
                assert_eq!(nodes.len(), 4);
                assert_eq!(nodes[0], nodes[3]);
                assert!(!nodes.contains(&"s"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(CausalDag::parse("a -> a"), Err(CausalError::Cycle(_))));
    }

    #[test]
    fn empty_and_malformed_input() {
        let dag = CausalDag::parse("# nothing\n\n").unwrap();
        assert!(dag.node_names().is_empty());
        assert!(matches!(dag.backdoor_adjustment_sets("x", "score"), Err(CausalError::UnknownNode(n)) if n == "x"));
        assert!(matches!(
            CausalDag::parse("a -> b -> c"),
            Err(CausalError::DagSyntax { line: 1, .. })
        ));
        assert!(matches!(CausalDag::parse("a b -> c"), Err(CausalError::DagSyntax { .. })));
        let dag = CausalDag::parse("hidden: u\nx -> y").unwrap();
        assert!(dag.is_hidden("u").unwrap());
    }

    #[test]
    fn combinations_in_order() {
        let all: Vec<Vec<usize>> = Combinations::new(4, 2).collect();
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(Combinations::new(3, 0).count(), 1);
        assert_eq!(Combinations::new(2, 3).count(), 0);
    }

    /// Backdoor validity by listing every simple path that starts with an
    /// edge into the exposure and checking each one for a block.
    fn valid_by_paths(dag: &CausalDag, x: usize, y: usize, z: &[bool]) -> bool {
        let n = dag.names.len();
        let mut descendants = vec![false; n];
        let mut stack = vec![x];
        while let Some(v) = stack.pop() {
            if !std::mem::replace(&mut descendants[v], true) {
                stack.extend(&dag.children[v]);
            }
        }
        if (0..n).any(|v| z[v] && descendants[v]) {
            return false;
        }
        let has_z_descendant = |v: usize| {
            let mut seen = vec![false; n];
            let mut stack = vec![v];
            while let Some(w) = stack.pop() {
                if z[w] {
                    return true;
                }
                if !std::mem::replace(&mut seen[w], true) {
                    stack.extend(&dag.children[w]);
                }
            }
            false
        };
        // path as nodes; edge i joins path[i] and path[i + 1]
        fn extend(
            dag: &CausalDag,
            path: &mut Vec<usize>,
            y: usize,
            out: &mut Vec<Vec<usize>>,
        ) {
            let v = *path.last().unwrap();
            if v == y {
                out.push(path.clone());
                return;
            }
            let neighbours: Vec<usize> = dag.parents[v].iter().chain(&dag.children[v]).copied().collect();
            for w in neighbours {
                if !path.contains(&w) {
                    path.push(w);
                    extend(dag, path, y, out);
                    path.pop();
                }
            }
        }
        let mut paths = Vec::new();
        for &p in &dag.parents[x] {
            let mut path = vec![x, p];
            extend(dag, &mut path, y, &mut paths);
        }
        let edge = |a: usize, b: usize| dag.children[a].contains(&b);
        paths.iter().all(|path| {
            (1..path.len() - 1).any(|i| {
                let (a, v, b) = (path[i - 1], path[i], path[i + 1]);
                let collider = edge(a, v) && edge(b, v);
                if collider {
                    !has_z_descendant(v)
                } else {
                    z[v]
                }
            })
        })
    }

    fn oracle_sets(dag: &CausalDag, x: usize, y: usize) -> Vec<BTreeSet<String>> {
        let n = dag.names.len();
        let observed: Vec<usize> = (0..n).filter(|&v| v != x && v != y && !dag.hidden[v]).collect();
        let valid: Vec<u32> = (0u32..1 << observed.len())
            .filter(|&mask| {
                let mut z = vec![false; n];
                for (i, &v) in observed.iter().enumerate() {
                    z[v] = mask >> i & 1 == 1;
                }
                valid_by_paths(dag, x, y, &z)
            })
            .collect();
        let mut out: Vec<BTreeSet<String>> = valid
            .iter()
            .filter(|&&m| !valid.iter().any(|&s| s != m && s & m == s))
            .map(|&m| {
                (0..observed.len())
                    .filter(|i| m >> i & 1 == 1)
                    .map(|i| dag.names[observed[i]].clone())
                    .collect()
            })
            .collect();
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        out
    }

    fn random_dag(n: usize, edges: &[bool], hidden: &[bool]) -> CausalDag {
        let name = |v: usize| if hidden[v] { format!("hidden:V{v}") } else { format!("V{v}") };
        // declare every node first so node ids follow the indices
        let mut text: String = (0..n).map(|v| name(v) + "\n").collect();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if edges[k] {
                    text.push_str(&format!("{} -> {}\n", name(i), name(j)));
                }
                k += 1;
            }
        }
        CausalDag::parse(&text).unwrap()
    }

    #[test]
    fn fixtures_match_path_enumeration() {
        for (text, x, y) in [(LOW_DENSITY, "low_density", "score"), (HS_GRAD, "hs_grad", "score")] {
            let dag = CausalDag::parse(text).unwrap();
            let (xi, yi) = (dag.id(x).unwrap(), dag.id(y).unwrap());
            assert_eq!(dag.backdoor_adjustment_sets(x, y).unwrap(), oracle_sets(&dag, xi, yi));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn minimal_sets_match_path_enumeration(
            n in 2usize..=10,
            edges in prop::collection::vec(prop::bool::weighted(0.3), 45),
            hidden in prop::collection::vec(prop::bool::weighted(0.15), 10),
            pick in (0usize..10, 0usize..10),
        ) {
            let dag = random_dag(n, &edges, &hidden);
            let (a, b) = (pick.0 % n, pick.1 % n);
            prop_assume!(a != b);
            let (x, y) = (a, b);
            let (xn, yn) = (format!("V{x}"), format!("V{y}"));
            let expected = oracle_sets(&dag, x, y);
            match dag.backdoor_adjustment_sets(&xn, &yn) {
                Ok(got) => {
                    prop_assert_eq!(&got, &expected);
                    for set in &got {
                        prop_assert!(dag.is_backdoor_set(&xn, &yn, set).unwrap());
                    }
                }
                Err(CausalError::NotIdentifiable { .. }) => prop_assert!(expected.is_empty()),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
