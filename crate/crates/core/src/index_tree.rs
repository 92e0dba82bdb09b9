//! Plaintext index tree over dataset columns and the count-query oracles.
//!
//! Level `k` of the tree holds the values of column `k`. Each node carries the
//! column id, the encoded value and the number of records sharing the path from
//! the root to that node. Siblings keep insertion order.

use std::fmt::{self, Write as _};

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::genomics::{Dataset, GenotypeCode, Phenotype, Record, SnpId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("cannot build an index tree from an empty dataset")]
    EmptyDataset,
    #[error("record has {found} columns, tree expects {expected}")]
    DepthMismatch { expected: usize, found: usize },
    #[error("SNP id {sid} is outside the indexed columns 1..={depth}")]
    SidOutOfRange { sid: u32, depth: usize },
    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),
}

pub type Result<T, E = TreeError> = std::result::Result<T, E>;

/// Index of a node in the tree's arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub sid: SnpId,
    pub val: u8,
    pub count: u64,
    children: Vec<NodeId>,
}

impl TreeNode {
    pub fn children(&self) -> &[NodeId] {
        &self.children
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTree {
    nodes: Vec<TreeNode>,
    roots: Vec<NodeId>,
    depth: usize,
    n_records: u64,
}

impl IndexTree {
    /// An empty tree for records with `n_snps` SNP columns plus a phenotype.
    pub fn empty(n_snps: usize) -> Self {
        Self {
            nodes: Vec::new(),
            roots: Vec::new(),
            depth: n_snps + 1,
            n_records: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_records(&self) -> u64 {
        self.n_records
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Level-1 nodes, the children of the sentinel root.
    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.index()]
    }

    /// Children of `parent`, or of the sentinel root when `None`.
    pub fn children_of(&self, parent: Option<NodeId>) -> &[NodeId] {
        match parent {
            None => &self.roots,
            Some(id) => &self.nodes[id.index()].children,
        }
    }

    /// Adds one record, incrementing the counts along its existing prefix and
    /// appending new nodes where the path diverges.
    pub fn insert_record(&mut self, record: &Record) -> Result<()> {
        if record.width() != self.depth {
            return Err(TreeError::DepthMismatch {
                expected: self.depth,
                found: record.width(),
            });
        }
        let mut parent: Option<NodeId> = None;
        for (level, val) in record.values().enumerate() {
            let existing = self
                .children_of(parent)
                .iter()
                .copied()
                .find(|&c| self.nodes[c.index()].val == val);
            let id = match existing {
                Some(id) => {
                    self.nodes[id.index()].count += 1;
                    id
                }
                None => {
                    let id = NodeId(self.nodes.len() as u32);
                    self.nodes.push(TreeNode {
                        sid: SnpId(level as u32 + 1),
                        val,
                        count: 1,
                        children: Vec::new(),
                    });
                    match parent {
                        None => self.roots.push(id),
                        Some(p) => self.nodes[p.index()].children.push(id),
                    }
                    id
                }
            };
            parent = Some(id);
        }
        self.n_records += 1;
        Ok(())
    }

    /// Node ids in depth-first preorder, siblings in stored order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<NodeId> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            order.push(id);
            stack.extend(self.node(id).children.iter().rev());
        }
        order
    }

    /// Maps each arena id to its position in [`IndexTree::preorder`].
    pub fn preorder_positions(&self) -> Vec<u32> {
        let mut positions = vec![0; self.nodes.len()];
        for (pos, id) in self.preorder().into_iter().enumerate() {
            positions[id.index()] = pos as u32;
        }
        positions
    }

    /// Sum of counts of all nodes at `level` (1-based).
    pub fn level_count(&self, level: usize) -> u64 {
        self.nodes
            .iter()
            .filter(|n| n.sid.get() as usize == level)
            .map(|n| n.count)
            .sum()
    }

    /// Every root-to-leaf path as column values, with the leaf's count.
    pub fn paths(&self) -> Vec<(Vec<u8>, u64)> {
        let mut out = Vec::new();
        let mut stack: Vec<(NodeId, Vec<u8>)> =
            self.roots.iter().rev().map(|&r| (r, Vec::new())).collect();
        while let Some((id, mut prefix)) = stack.pop() {
            let node = self.node(id);
            prefix.push(node.val);
            if node.children.is_empty() {
                out.push((prefix, node.count));
            } else {
                for &c in node.children.iter().rev() {
                    stack.push((c, prefix.clone()));
                }
            }
        }
        out
    }

    fn format_val(&self, sid: SnpId, val: u8) -> String {
        if sid.get() as usize == self.depth {
            match Phenotype::from_code(val) {
                Some(p) => p.to_string(),
                None => val.to_string(),
            }
        } else {
            match GenotypeCode::new(val) {
                Ok(g) => g.to_string(),
                Err(_) => val.to_string(),
            }
        }
    }

    /// Indented text dump, one `sid=.. val=.. count=..` line per node.
    pub fn to_debug_string(&self) -> String {
        let mut out = String::new();
        for id in self.preorder() {
            let node = self.node(id);
            let indent = 2 * (node.sid.get() as usize - 1);
            let _ = writeln!(
                out,
                "{:indent$}sid={} val={} count={}",
                "",
                node.sid,
                self.format_val(node.sid, node.val),
                node.count,
            );
        }
        out
    }

    fn check_predicate(&self, predicate: &QueryPredicate) -> Result<()> {
        match predicate.max_sid() {
            Some(sid) if sid.get() as usize > self.depth => Err(TreeError::SidOutOfRange {
                sid: sid.get(),
                depth: self.depth,
            }),
            _ => Ok(()),
        }
    }
}

pub fn build_tree(dataset: &Dataset) -> Result<IndexTree> {
    if dataset.is_empty() {
        return Err(TreeError::EmptyDataset);
    }
    let mut tree = IndexTree::empty(dataset.n_snps());
    for record in dataset.records() {
        tree.insert_record(record)?;
    }
    Ok(tree)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Term {
    pub sid: SnpId,
    pub val: u8,
}

/// Conjunction of `column = value` terms with distinct columns, kept sorted
/// by column id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryPredicate {
    terms: Vec<Term>,
}

impl QueryPredicate {
    pub fn new(terms: impl IntoIterator<Item = (SnpId, u8)>) -> Result<Self> {
        let mut terms: Vec<Term> = terms
            .into_iter()
            .map(|(sid, val)| Term { sid, val })
            .collect();
        terms.sort_by_key(|t| t.sid);
        for t in &terms {
            if t.sid.get() == 0 {
                return Err(TreeError::InvalidPredicate("SNP ids start at 1".into()));
            }
            if GenotypeCode::new(t.val).is_err() {
                return Err(TreeError::InvalidPredicate(format!(
                    "value {} for SNP {} is not a valid code",
                    t.val, t.sid
                )));
            }
        }
        if let Some(w) = terms.windows(2).find(|w| w[0].sid == w[1].sid) {
            return Err(TreeError::InvalidPredicate(format!(
                "SNP {} appears more than once",
                w[0].sid
            )));
        }
        Ok(Self { terms })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses `SNP2=CC,SNP3=TT,PHENO=Positive`. `PHENO` resolves to column
    /// `n_snps + 1`; SNP ids are not checked against `n_snps`.
    pub fn parse(spec: &str, n_snps: usize) -> Result<Self> {
        let bad = |msg: String| TreeError::InvalidPredicate(msg);
        let mut terms = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected KEY=VALUE, got {part:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.eq_ignore_ascii_case("PHENO") {
                let p: Phenotype = value.parse().map_err(|e| bad(format!("{e}")))?;
                terms.push((SnpId(n_snps as u32 + 1), p.code()));
                continue;
            }
            let digits = key
                .strip_prefix("SNP")
                .or_else(|| key.strip_prefix("snp"))
                .map(|d| d.trim_start_matches('_'))
                .ok_or_else(|| bad(format!("unknown column {key:?}")))?;
            let sid: u32 = digits
                .parse()
                .map_err(|_| bad(format!("unknown column {key:?}")))?;
            let g: GenotypeCode = value.parse().map_err(|e| bad(format!("{e}")))?;
            terms.push((SnpId(sid), g.get()));
        }
        Self::new(terms)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_sid(&self) -> Option<SnpId> {
        self.terms.last().map(|t| t.sid)
    }

    /// Position of the term on `sid`, if the predicate constrains it.
    pub fn position(&self, sid: SnpId) -> Option<usize> {
        self.terms.binary_search_by_key(&sid, |t| t.sid).ok()
    }

    pub fn matches(&self, record: &Record) -> bool {
        self.terms
            .iter()
            .all(|t| record.value(t.sid) == Some(t.val))
    }

    /// Renders in the [`QueryPredicate::parse`] syntax.
    pub fn to_spec(&self, n_snps: usize) -> String {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|t| {
                if t.sid.get() as usize == n_snps + 1 {
                    let p = Phenotype::from_code(t.val).map_or("?", Phenotype::as_str);
                    format!("PHENO={p}")
                } else {
                    let g = GenotypeCode::new(t.val).map_or("??", GenotypeCode::as_str);
                    format!("SNP{}={g}", t.sid)
                }
            })
            .collect();
        parts.join(",")
    }
}

impl fmt::Display for QueryPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|t| format!("{}={}", t.sid, t.val))
            .collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Picks `size` distinct columns uniformly and takes their values from a
/// uniformly chosen record, so the predicate matches at least one record.
pub fn sample_predicate<R: Rng + ?Sized>(
    dataset: &Dataset,
    size: usize,
    rng: &mut R,
) -> QueryPredicate {
    let depth = dataset.depth();
    let size = size.min(depth);
    if dataset.is_empty() || size == 0 {
        return QueryPredicate::empty();
    }
    let record = &dataset.records()[rng.gen_range(0..dataset.len())];
    let terms = index::sample(rng, depth, size).into_iter().map(|i| {
        let sid = SnpId(i as u32 + 1);
        (sid, record.value(sid).expect("column within depth"))
    });
    QueryPredicate::new(terms).expect("sampled columns are distinct")
}

/// Reference count: scans every record.
pub fn naive_count(dataset: &Dataset, predicate: &QueryPredicate) -> Result<u64> {
    if let Some(sid) = predicate.max_sid() {
        if sid.get() as usize > dataset.depth() {
            return Err(TreeError::SidOutOfRange {
                sid: sid.get(),
                depth: dataset.depth(),
            });
        }
    }
    Ok(dataset
        .records()
        .iter()
        .filter(|r| predicate.matches(r))
        .count() as u64)
}

/// What a plaintext run of the tree search touched.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Traversal {
    pub count: u64,
    /// Every node reached, in visiting order.
    pub visited: Vec<NodeId>,
    /// Nodes on a queried column and whether their value matched.
    pub compared: Vec<(NodeId, bool)>,
    /// Matched nodes on the deepest queried column, whose counts form the result.
    pub accumulated: Vec<NodeId>,
}

/// Depth-first search identical in shape to the encrypted search: compare at
/// queried columns and prune on mismatch, descend unconditionally elsewhere,
/// and sum counts of matched nodes on the deepest queried column.
pub fn traverse_plaintext(tree: &IndexTree, predicate: &QueryPredicate) -> Result<Traversal> {
    tree.check_predicate(predicate)?;
    let mut out = Traversal::default();
    let Some(max_sid) = predicate.max_sid() else {
        out.count = tree.roots.iter().map(|&r| tree.node(r).count).sum();
        out.accumulated = tree.roots.clone();
        return Ok(out);
    };
    let mut stack: Vec<NodeId> = tree.roots.iter().rev().copied().collect();
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        out.visited.push(id);
        if let Some(pos) = predicate.position(node.sid) {
            let hit = predicate.terms[pos].val == node.val;
            out.compared.push((id, hit));
            if !hit {
                continue;
            }
            if node.sid == max_sid {
                out.count += node.count;
                out.accumulated.push(id);
                continue;
            }
        }
        stack.extend(node.children.iter().rev());
    }
    Ok(out)
}

pub fn tree_count_plaintext(tree: &IndexTree, predicate: &QueryPredicate) -> Result<u64> {
    traverse_plaintext(tree, predicate).map(|t| t.count)
}
