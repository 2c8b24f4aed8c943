use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Length of the branch to the parent; zero at the root.
    pub branch_length: f64,
    pub name: Option<String>,
}

/// Rooted bifurcating tree with fixed branch lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyloTree {
    nodes: Vec<Node>,
    root: usize,
    leaves: Vec<usize>,
    post_order: Vec<usize>,
}

impl PhyloTree {
    /// Validate and index a node list.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidArgument(format!("tree needs exactly one root, found {}", roots.len())));
        }
        let root = roots[0];
        for (i, n) in nodes.iter().enumerate() {
            if !(n.children.is_empty() || n.children.len() == 2) {
                return Err(Error::InvalidArgument(format!("node {i} has {} children", n.children.len())));
            }
            if !(n.branch_length.is_finite() && n.branch_length >= 0.0) {
                return Err(Error::InvalidArgument(format!("node {i} has branch length {}", n.branch_length)));
            }
            for &c in &n.children {
                if c >= nodes.len() || nodes[c].parent != Some(i) {
                    return Err(Error::InvalidArgument(format!("inconsistent parent link at node {c}")));
                }
            }
        }
        let mut post_order = Vec::with_capacity(nodes.len());
        let mut stack = vec![(root, false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded || nodes[v].children.is_empty() {
                post_order.push(v);
            } else {
                stack.push((v, true));
                for &c in nodes[v].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        if post_order.len() != nodes.len() {
            return Err(Error::InvalidArgument("tree is not connected".into()));
        }
        let leaves = post_order.iter().copied().filter(|&v| nodes[v].children.is_empty()).collect();
        Ok(Self { nodes, root, leaves, post_order })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, v: usize) -> &Node {
        &self.nodes[v]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Leaf node ids, left to right.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_names(&self) -> Vec<String> {
        self.leaves.iter().map(|&v| self.nodes[v].name.clone().unwrap_or_default()).collect()
    }

    /// Children before parents.
    pub fn post_order(&self) -> &[usize] {
        &self.post_order
    }

    /// Parents before children.
    pub fn pre_order(&self) -> impl Iterator<Item = usize> + '_ {
        self.post_order.iter().rev().copied()
    }

    /// Non-root nodes, each standing for the branch above it.
    pub fn branches(&self) -> impl Iterator<Item = usize> + '_ {
        self.post_order.iter().copied().filter(move |&v| v != self.root)
    }

    pub fn sibling(&self, v: usize) -> Option<usize> {
        let p = self.nodes[v].parent?;
        self.nodes[p].children.iter().copied().find(|&c| c != v)
    }

    pub fn to_newick(&self) -> String {
        fn write(t: &PhyloTree, v: usize, out: &mut String) {
            let n = &t.nodes[v];
            if !n.children.is_empty() {
                out.push('(');
                write(t, n.children[0], out);
                out.push(',');
                write(t, n.children[1], out);
                out.push(')');
            }
            if let Some(name) = &n.name {
                out.push_str(name);
            }
            out.push(':');
            out.push_str(&format!("{}", n.branch_length));
        }
        let mut s = String::new();
        write(self, self.root, &mut s);
        s.push(';');
        s
    }
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    nodes: Vec<Node>,
}

impl Parser<'_> {
    fn err<T>(&self, expected: &str) -> Result<T> {
        Err(Error::Parse { position: self.pos, expected: expected.to_string() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn label(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.text.len() && !b"():,;".contains(&self.text[self.pos]) && !self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| String::from_utf8_lossy(&self.text[start..self.pos]).into_owned())
    }

    fn length(&mut self, required: bool) -> Result<f64> {
        if !self.eat(b':') {
            return if required { self.err("':' and a branch length") } else { Ok(0.0) };
        }
        let at = self.pos;
        match self.label().and_then(|s| s.parse::<f64>().ok()) {
            Some(x) if x.is_finite() && x >= 0.0 => Ok(x),
            _ => Err(Error::Parse { position: at, expected: "non-negative branch length".into() }),
        }
    }

    fn subtree(&mut self, parent: Option<usize>) -> Result<usize> {
        let id = self.nodes.len();
        self.nodes.push(Node { parent, children: vec![], branch_length: 0.0, name: None });
        if self.eat(b'(') {
            let a = self.subtree(Some(id))?;
            if !self.eat(b',') {
                return self.err("',' (internal nodes must have exactly two children)");
            }
            let b = self.subtree(Some(id))?;
            if !self.eat(b')') {
                return self.err("')' (internal nodes must have exactly two children)");
            }
            self.nodes[id].children = vec![a, b];
            self.nodes[id].name = self.label();
        } else {
            match self.label() {
                Some(name) => self.nodes[id].name = Some(name),
                None => return self.err("leaf label"),
            }
        }
        self.nodes[id].branch_length = self.length(parent.is_some())?;
        Ok(id)
    }
}

/// Parse a rooted bifurcating Newick tree; every non-root branch needs a length.
pub fn parse_newick(text: &str) -> Result<PhyloTree> {
    let mut p = Parser { text: text.as_bytes(), pos: 0, nodes: Vec::new() };
    if p.peek() != Some(b'(') {
        return p.err("'('");
    }
    p.subtree(None)?;
    if !p.eat(b';') {
        return p.err("';'");
    }
    if p.peek().is_some() {
        return p.err("end of input");
    }
    PhyloTree::from_nodes(p.nodes)
}

/// Random topology built by repeatedly joining two uniformly chosen
/// subtrees, with independent exponential branch lengths of the given mean.
/// Leaves are named `L0`, `L1`, ...
pub fn random_tree<R: Rng + ?Sized>(n_leaves: usize, mean_branch: f64, rng: &mut R) -> Result<PhyloTree> {
    if n_leaves < 2 || !(mean_branch > 0.0) {
        return Err(Error::InvalidArgument("need at least two leaves and a positive mean branch length".into()));
    }
    let lengths = Exp::new(1.0 / mean_branch).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut nodes: Vec<Node> = (0..n_leaves)
        .map(|k| Node { parent: None, children: vec![], branch_length: 0.0, name: Some(format!("L{k}")) })
        .collect();
    let mut free: Vec<usize> = (0..n_leaves).collect();
    while free.len() > 1 {
        let a = free.swap_remove(rng.random_range(0..free.len()));
        let b = free.swap_remove(rng.random_range(0..free.len()));
        let id = nodes.len();
        for c in [a, b] {
            nodes[c].parent = Some(id);
            nodes[c].branch_length = lengths.sample(rng);
        }
        nodes.push(Node { parent: None, children: vec![a, b], branch_length: 0.0, name: None });
        free.push(id);
    }
    PhyloTree::from_nodes(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_tree_shape() {
        let mut rng = crate::ensembles::SeededRng::new(1, 0).rng();
        let t = random_tree(8, 0.5, &mut rng).unwrap();
        assert_eq!(t.n_leaves(), 8);
        assert_eq!(t.nodes().len(), 15);
        assert!(t.nodes().iter().all(|n| n.children.is_empty() || n.children.len() == 2));
    }

    #[test]
    fn cherry() {
        let t = parse_newick("(A:1.0,B:2.0):0.0;").unwrap();
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(t.leaf_names(), vec!["A", "B"]);
        let root = t.node(t.root());
        assert_eq!(root.children.len(), 2);
        assert_eq!(t.node(root.children[1]).branch_length, 2.0);
    }

    #[test]
    fn three_leaves() {
        let t = parse_newick("((A:1,B:1):1,C:2):0;").unwrap();
        assert_eq!(t.n_leaves(), 3);
        assert_eq!(t.nodes().len(), 5);
        assert_eq!(t.nodes().iter().filter(|n| !n.children.is_empty()).count(), 2);
        assert_eq!(t.branches().count(), 4);
        assert_eq!(*t.post_order().last().unwrap(), t.root());
    }

    #[test]
    fn rejects_unary_root() {
        let err = parse_newick("(A:1);").unwrap_err();
        assert!(matches!(err, Error::Parse { position: 4, .. }), "{err:?}");
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["(A:1,B:1)", "(A,B:1);", "(A:1,B:-1);", "(A:1,B:1,C:1);", "((A:1,B:1):1,C:1);x"] {
            assert!(matches!(parse_newick(bad), Err(Error::Parse { .. })), "{bad}");
        }
    }

    #[test]
    fn root_length_optional_and_round_trip() {
        let t = parse_newick(" ( (A:0.5, B:1.5)X:0.25 , C:2 ) ; ").unwrap();
        let again = parse_newick(&t.to_newick()).unwrap();
        assert_eq!(t, again);
        assert_eq!(t.node(t.node(t.root()).children[0]).name.as_deref(), Some("X"));
    }
}
