//! Tree partitions of the biomarker space.
//!
//! A partition is built by up to `max_rounds` rounds of binary splits: in
//! each round every current subset either stays a leaf or is split on one of
//! the `K` markers at that marker's conditional median. [`PartitionLayout`]
//! records the shape and the marker of every split; binding a layout to data
//! fixes the thresholds and gives a [`ThresholdedPartition`].
//!
//! The catalog of all layouts for `(K, max_rounds)` is finite. Its size obeys
//! `T(r) = 1 + K·T(r+1)²` with `T(max_rounds + 1) = 1`, which is 40,805 for
//! four markers and three rounds.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{check_vector, BiomarkerMatrix, DataError};

pub const DEFAULT_MAX_ROUNDS: usize = 3;

/// Default guard on catalog size.
pub const DEFAULT_LAYOUT_CAP: u64 = 10_000_000;

const CATALOG_HEADER: &str = "# suba partition catalog v1";

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("invalid prior parameters: {0}")]
    InvalidPrior(String),
    #[error("{count} layouts for this marker count and depth exceeds the cap of {cap}")]
    TooManyLayouts { count: u128, cap: u64 },
    #[error("need at least one marker and one round of splits")]
    EmptySpace,
    #[error("layout uses marker {marker} but only {n_markers} markers exist")]
    MarkerOutOfRange { marker: usize, n_markers: usize },
    #[error("layout is deeper than {max_rounds} rounds")]
    TooDeep { max_rounds: usize },
    #[error("catalog priors have not been normalized")]
    NotNormalized,
    #[error("cannot parse layout: {0}")]
    Parse(String),
    #[error("catalog file: {0}")]
    Format(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for PartitionError {
    fn from(e: std::io::Error) -> Self {
        PartitionError::Io(e.to_string())
    }
}

/// Hyperparameters of the partition prior.
///
/// `split_probs[0]` is the probability of leaving a subset unsplit and
/// `split_probs[k]` the probability of splitting it on marker `k` (one-based,
/// so marker index `k - 1` in code). `phi` multiplies the prior once per
/// distinct marker a layout uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    split_probs: Vec<f64>,
    phi: f64,
    max_rounds: usize,
}

impl PriorParams {
    pub fn new(split_probs: Vec<f64>, phi: f64, max_rounds: usize) -> Result<Self, PartitionError> {
        let p = Self {
            split_probs,
            phi,
            max_rounds,
        };
        p.validate()?;
        Ok(p)
    }

    /// Equal probability `1/(K+1)` for "no split" and for every marker.
    pub fn uniform(n_markers: usize, phi: f64) -> Result<Self, PartitionError> {
        let v = 1.0 / (n_markers as f64 + 1.0);
        Self::new(vec![v; n_markers + 1], phi, DEFAULT_MAX_ROUNDS)
    }

    pub fn with_max_rounds(mut self, max_rounds: usize) -> Result<Self, PartitionError> {
        self.max_rounds = max_rounds;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), PartitionError> {
        let bad = |m: &str| Err(PartitionError::InvalidPrior(m.to_string()));
        if self.split_probs.len() < 2 {
            return bad("need a no-split probability and at least one marker");
        }
        if self.split_probs.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("split probabilities must be non-negative");
        }
        let total: f64 = self.split_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad("split probabilities must sum to 1");
        }
        if !(self.phi > 0.0 && self.phi <= 1.0) {
            return bad("phi must lie in (0, 1]");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1");
        }
        Ok(())
    }

    pub fn n_markers(&self) -> usize {
        self.split_probs.len() - 1
    }

    pub fn split_probs(&self) -> &[f64] {
        &self.split_probs
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn max_rounds(&self) -> usize {
        self.max_rounds
    }
}

/// One node of a layout in preorder: a leaf, or a split on a zero-based marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayoutNode {
    Leaf,
    Split(u8),
}

/// Shape of a split tree, stored in preorder with the lower child before the
/// upper child.
///
/// The canonical text form writes a leaf as `.` and a split on (one-based)
/// marker `k` as `k(lower,upper)`; the partition with a root split on marker
/// 1 and an upper child split again on marker 2 is `1(.,2(.,.))`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartitionLayout {
    nodes: Vec<LayoutNode>,
}

impl PartitionLayout {
    pub fn trivial() -> Self {
        Self {
            nodes: vec![LayoutNode::Leaf],
        }
    }

    /// Split on zero-based `marker` with the given lower and upper subtrees.
    pub fn split(marker: usize, lower: PartitionLayout, upper: PartitionLayout) -> Self {
        let mut nodes = Vec::with_capacity(1 + lower.nodes.len() + upper.nodes.len());
        nodes.push(LayoutNode::Split(marker as u8));
        nodes.extend(lower.nodes);
        nodes.extend(upper.nodes);
        Self { nodes }
    }

    pub fn from_nodes(nodes: Vec<LayoutNode>) -> Result<Self, PartitionError> {
        let end = subtree_end(&nodes, 0).ok_or_else(|| PartitionError::Parse("truncated preorder".into()))?;
        if end != nodes.len() {
            return Err(PartitionError::Parse("trailing nodes after the root subtree".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[LayoutNode] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| **n == LayoutNode::Leaf).count()
    }

    pub fn is_trivial(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Number of split rounds on the deepest path.
    pub fn depth(&self) -> usize {
        self.node_depths().into_iter().max().unwrap_or(0)
    }

    /// Depth of every node, in preorder.
    pub fn node_depths(&self) -> Vec<usize> {
        let mut depths = Vec::with_capacity(self.nodes.len());
        // remaining children to visit for each open split
        let mut stack: Vec<usize> = Vec::new();
        for node in &self.nodes {
            depths.push(stack.len());
            if let Some(top) = stack.last_mut() {
                *top -= 1;
            }
            match node {
                LayoutNode::Split(_) => stack.push(2),
                LayoutNode::Leaf => {
                    while stack.last() == Some(&0) {
                        stack.pop();
                    }
                }
            }
        }
        depths
    }

    /// Bit set of the zero-based markers used by at least one split.
    pub fn marker_set(&self) -> u64 {
        self.nodes.iter().fold(0u64, |acc, n| match n {
            LayoutNode::Split(k) => acc | (1u64 << k),
            LayoutNode::Leaf => acc,
        })
    }

    pub fn distinct_markers(&self) -> u32 {
        self.marker_set().count_ones()
    }

    /// Checks marker indices and depth against the model dimensions.
    pub fn validate(&self, n_markers: usize, max_rounds: usize) -> Result<(), PartitionError> {
        for n in &self.nodes {
            if let LayoutNode::Split(k) = n {
                if *k as usize >= n_markers {
                    return Err(PartitionError::MarkerOutOfRange {
                        marker: *k as usize + 1,
                        n_markers,
                    });
                }
            }
        }
        if self.depth() > max_rounds {
            return Err(PartitionError::TooDeep { max_rounds });
        }
        Ok(())
    }

    /// Same shape with every marker `k` replaced by `perm[k]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self {
            nodes: self
                .nodes
                .iter()
                .map(|n| match n {
                    LayoutNode::Split(k) => LayoutNode::Split(perm[*k as usize] as u8),
                    LayoutNode::Leaf => LayoutNode::Leaf,
                })
                .collect(),
        }
    }

    /// Preorder index of the upper child of every split node (zero for leaves).
    pub(crate) fn upper_children(&self) -> Vec<usize> {
        let mut upper = vec![0; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let LayoutNode::Split(_) = n {
                upper[i] = subtree_end(&self.nodes, i + 1).expect("validated layout");
            }
        }
        upper
    }
}

/// One past the last preorder index of the subtree rooted at `start`.
fn subtree_end(nodes: &[LayoutNode], start: usize) -> Option<usize> {
    let mut pending = 1usize;
    let mut i = start;
    while pending > 0 {
        match nodes.get(i)? {
            LayoutNode::Leaf => pending -= 1,
            LayoutNode::Split(_) => pending += 1,
        }
        i += 1;
    }
    Some(i)
}

impl fmt::Display for PartitionLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn write_at(nodes: &[LayoutNode], i: usize, f: &mut fmt::Formatter<'_>) -> Result<usize, fmt::Error> {
            match nodes[i] {
                LayoutNode::Leaf => {
                    f.write_str(".")?;
                    Ok(i + 1)
                }
                LayoutNode::Split(k) => {
                    write!(f, "{}(", k as usize + 1)?;
                    let next = write_at(nodes, i + 1, f)?;
                    f.write_str(",")?;
                    let next = write_at(nodes, next, f)?;
                    f.write_str(")")?;
                    Ok(next)
                }
            }
        }
        write_at(&self.nodes, 0, f).map(|_| ())
    }
}

impl FromStr for PartitionLayout {
    type Err = PartitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        struct Parser<'a> {
            bytes: &'a [u8],
            pos: usize,
            nodes: Vec<LayoutNode>,
        }
        impl Parser<'_> {
            fn err(&self, what: &str) -> PartitionError {
                PartitionError::Parse(format!("{what} at byte {}", self.pos))
            }
            fn expect(&mut self, c: u8) -> Result<(), PartitionError> {
                if self.bytes.get(self.pos) == Some(&c) {
                    self.pos += 1;
                    Ok(())
                } else {
                    Err(self.err(&format!("expected '{}'", c as char)))
                }
            }
            fn node(&mut self) -> Result<(), PartitionError> {
                match self.bytes.get(self.pos) {
                    Some(b'.') => {
                        self.pos += 1;
                        self.nodes.push(LayoutNode::Leaf);
                        Ok(())
                    }
                    Some(c) if c.is_ascii_digit() => {
                        let start = self.pos;
                        while self.bytes.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                            self.pos += 1;
                        }
                        let label: usize = std::str::from_utf8(&self.bytes[start..self.pos])
                            .unwrap()
                            .parse()
                            .map_err(|_| self.err("bad marker"))?;
                        if label == 0 || label > 64 {
                            return Err(self.err("marker labels run from 1 to 64"));
                        }
                        self.nodes.push(LayoutNode::Split((label - 1) as u8));
                        self.expect(b'(')?;
                        self.node()?;
                        self.expect(b',')?;
                        self.node()?;
                        self.expect(b')')
                    }
                    _ => Err(self.err("expected '.' or a marker")),
                }
            }
        }
        let mut p = Parser {
            bytes: s.trim().as_bytes(),
            pos: 0,
            nodes: Vec::new(),
        };
        p.node()?;
        if p.pos != p.bytes.len() {
            return Err(p.err("trailing input"));
        }
        Ok(Self { nodes: p.nodes })
    }
}

/// Number of layouts with at most `max_rounds` rounds over `n_markers`
/// markers, or `None` on overflow.
pub fn layout_count(n_markers: usize, max_rounds: usize) -> Option<u128> {
    let mut t: u128 = 1;
    for _ in 0..max_rounds {
        t = t.checked_mul(t)?.checked_mul(n_markers as u128)?.checked_add(1)?;
    }
    Some(t)
}

/// Every layout for `(n_markers, max_rounds)` in canonical catalog order:
/// the trivial layout first, then splits by marker, lower subtree, upper
/// subtree.
pub fn enumerate_layouts(n_markers: usize, max_rounds: usize, cap: u64) -> Result<Vec<PartitionLayout>, PartitionError> {
    if n_markers == 0 || max_rounds == 0 {
        return Err(PartitionError::EmptySpace);
    }
    if n_markers > 64 {
        return Err(PartitionError::MarkerOutOfRange {
            marker: n_markers,
            n_markers: 64,
        });
    }
    let count = layout_count(n_markers, max_rounds).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(PartitionError::TooManyLayouts { count, cap });
    }
    let mut level: Vec<Vec<LayoutNode>> = vec![vec![LayoutNode::Leaf]];
    for _ in 0..max_rounds {
        let mut next = Vec::with_capacity(1 + n_markers * level.len() * level.len());
        next.push(vec![LayoutNode::Leaf]);
        for k in 0..n_markers {
            for lower in &level {
                for upper in &level {
                    let mut nodes = Vec::with_capacity(1 + lower.len() + upper.len());
                    nodes.push(LayoutNode::Split(k as u8));
                    nodes.extend_from_slice(lower);
                    nodes.extend_from_slice(upper);
                    next.push(nodes);
                }
            }
        }
        level = next;
    }
    Ok(level.into_iter().map(|nodes| PartitionLayout { nodes }).collect())
}

/// Unnormalized log prior weight of a layout.
///
/// Every node above the depth cap contributes `ln v_0` when it is a leaf and
/// `ln v_k` when it splits on marker `k`; nodes at the cap have no choice and
/// contribute nothing. The penalty adds `K̄·ln φ` for the `K̄` distinct
/// markers in use.
pub fn log_prior(layout: &PartitionLayout, params: &PriorParams) -> f64 {
    let v = params.split_probs();
    let mut lp = 0.0;
    for (node, depth) in layout.nodes().iter().zip(layout.node_depths()) {
        if depth >= params.max_rounds() {
            continue;
        }
        lp += match node {
            LayoutNode::Leaf => v[0].ln(),
            LayoutNode::Split(k) => v[*k as usize + 1].ln(),
        };
    }
    lp + layout.distinct_markers() as f64 * params.phi().ln()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sentinel for "no child" in [`CellIndex`].
const NO_CELL: u32 = u32::MAX;

/// Shared index of every subset a split path can reach.
///
/// A cell is identified by the sequence of `(marker, side)` decisions from
/// the root. Thresholds are conditional medians computed on the data routed
/// into a cell, so a cell's data, threshold and counts are the same in every
/// layout that contains it. The posterior engine works on cells and maps
/// layouts to their leaf cells.
#[derive(Debug, Clone)]
pub struct CellIndex {
    n_markers: usize,
    max_rounds: usize,
    depth: Vec<u8>,
    children: Vec<u32>,
    layout_leaf_cells: Vec<u32>,
    layout_offsets: Vec<u32>,
}

impl CellIndex {
    fn build(n_markers: usize, max_rounds: usize, layouts: &[PartitionLayout]) -> Self {
        let fan = 2 * n_markers;
        let mut depth = vec![0u8];
        let mut children: Vec<u32> = Vec::new();
        let mut frontier = vec![0u32];
        for d in 0..max_rounds {
            let mut next = Vec::with_capacity(frontier.len() * fan);
            for &c in &frontier {
                debug_assert_eq!(children.len(), c as usize * fan);
                for _ in 0..fan {
                    let id = depth.len() as u32;
                    depth.push(d as u8 + 1);
                    children.push(id);
                    next.push(id);
                }
            }
            frontier = next;
        }
        children.resize(depth.len() * fan, NO_CELL);

        let mut index = Self {
            n_markers,
            max_rounds,
            depth,
            children,
            layout_leaf_cells: Vec::new(),
            layout_offsets: vec![0],
        };
        for layout in layouts {
            let mut leaves = Vec::new();
            index.walk(layout.nodes(), 0, 0, &mut leaves);
            index.layout_leaf_cells.extend(leaves);
            index.layout_offsets.push(index.layout_leaf_cells.len() as u32);
        }
        index
    }

    fn walk(&self, nodes: &[LayoutNode], i: usize, cell: u32, leaves: &mut Vec<u32>) -> usize {
        match nodes[i] {
            LayoutNode::Leaf => {
                leaves.push(cell);
                i + 1
            }
            LayoutNode::Split(k) => {
                let next = self.walk(nodes, i + 1, self.child(cell, k as usize, false), leaves);
                self.walk(nodes, next, self.child(cell, k as usize, true), leaves)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn n_markers(&self) -> usize {
        self.n_markers
    }

    pub fn max_rounds(&self) -> usize {
        self.max_rounds
    }

    pub fn depth(&self, cell: u32) -> usize {
        self.depth[cell as usize] as usize
    }

    pub fn can_split(&self, cell: u32) -> bool {
        self.depth(cell) < self.max_rounds
    }

    /// Child of `cell` split on `marker`; `upper` selects the `x ≥ cut` side.
    pub fn child(&self, cell: u32, marker: usize, upper: bool) -> u32 {
        let c = self.children[cell as usize * 2 * self.n_markers + 2 * marker + upper as usize];
        debug_assert_ne!(c, NO_CELL);
        c
    }

    /// Leaf cells of layout `r`, in the layout's leaf order.
    pub fn leaf_cells(&self, r: usize) -> &[u32] {
        let a = self.layout_offsets[r] as usize;
        let b = self.layout_offsets[r + 1] as usize;
        &self.layout_leaf_cells[a..b]
    }
}

/// All layouts for `(K, max_rounds)` plus their normalized log priors.
#[derive(Debug, Clone)]
pub struct PartitionCatalog {
    n_markers: usize,
    max_rounds: usize,
    layouts: Vec<PartitionLayout>,
    log_priors: Option<Vec<f64>>,
    cells: CellIndex,
}

impl PartitionCatalog {
    /// Enumerates layouts under the default size cap. Priors are unset.
    pub fn enumerate(n_markers: usize, max_rounds: usize) -> Result<Self, PartitionError> {
        Self::enumerate_with_cap(n_markers, max_rounds, DEFAULT_LAYOUT_CAP)
    }

    pub fn enumerate_with_cap(n_markers: usize, max_rounds: usize, cap: u64) -> Result<Self, PartitionError> {
        let layouts = enumerate_layouts(n_markers, max_rounds, cap)?;
        Ok(Self::from_layouts_unchecked(n_markers, max_rounds, layouts))
    }

    /// A catalog restricted to the given layouts, e.g. a single supported
    /// partition for a degenerate posterior.
    pub fn from_layouts(n_markers: usize, max_rounds: usize, layouts: Vec<PartitionLayout>) -> Result<Self, PartitionError> {
        if n_markers == 0 || max_rounds == 0 {
            return Err(PartitionError::EmptySpace);
        }
        for l in &layouts {
            l.validate(n_markers, max_rounds)?;
        }
        Ok(Self::from_layouts_unchecked(n_markers, max_rounds, layouts))
    }

    fn from_layouts_unchecked(n_markers: usize, max_rounds: usize, layouts: Vec<PartitionLayout>) -> Self {
        let cells = CellIndex::build(n_markers, max_rounds, &layouts);
        Self {
            n_markers,
            max_rounds,
            layouts,
            log_priors: None,
            cells,
        }
    }

    /// Enumerates and normalizes in one step.
    pub fn with_prior(params: &PriorParams) -> Result<Self, PartitionError> {
        let mut c = Self::enumerate(params.n_markers(), params.max_rounds())?;
        c.normalize(params)?;
        Ok(c)
    }

    /// Sets `log_priors` to the log prior of each layout minus their
    /// log-sum-exp, so the priors sum to one.
    pub fn normalize(&mut self, params: &PriorParams) -> Result<(), PartitionError> {
        params.validate()?;
        if params.n_markers() != self.n_markers {
            return Err(PartitionError::InvalidPrior(format!(
                "prior has {} markers, catalog has {}",
                params.n_markers(),
                self.n_markers
            )));
        }
        let raw: Vec<f64> = self.layouts.iter().map(|l| log_prior(l, params)).collect();
        let z = log_sum_exp(&raw);
        self.log_priors = Some(raw.into_iter().map(|v| v - z).collect());
        Ok(())
    }

    pub fn n_markers(&self) -> usize {
        self.n_markers
    }

    pub fn max_rounds(&self) -> usize {
        self.max_rounds
    }

    pub fn len(&self) -> usize {
        self.layouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layouts.is_empty()
    }

    pub fn layouts(&self) -> &[PartitionLayout] {
        &self.layouts
    }

    pub fn layout(&self, r: usize) -> &PartitionLayout {
        &self.layouts[r]
    }

    pub fn log_priors(&self) -> Result<&[f64], PartitionError> {
        self.log_priors.as_deref().ok_or(PartitionError::NotNormalized)
    }

    pub fn is_normalized(&self) -> bool {
        self.log_priors.is_some()
    }

    pub fn cells(&self) -> &CellIndex {
        &self.cells
    }

    /// Writes the catalog as versioned text: a header, the dimensions, then
    /// one `layout<TAB>log_prior` line per layout (`-` when unnormalized).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PartitionError> {
        writeln!(w, "{CATALOG_HEADER}")?;
        writeln!(w, "markers {}", self.n_markers)?;
        writeln!(w, "max_rounds {}", self.max_rounds)?;
        for (i, layout) in self.layouts.iter().enumerate() {
            match &self.log_priors {
                Some(lp) => writeln!(w, "{layout}\t{}", lp[i])?,
                None => writeln!(w, "{layout}\t-")?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, PartitionError> {
        let mut lines = r.lines();
        let mut next_line = || -> Result<String, PartitionError> {
            lines
                .next()
                .ok_or_else(|| PartitionError::Format("unexpected end of file".into()))?
                .map_err(PartitionError::from)
        };
        if next_line()?.trim() != CATALOG_HEADER {
            return Err(PartitionError::Format("missing or unsupported header".into()));
        }
        let field = |line: String, key: &str| -> Result<usize, PartitionError> {
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| PartitionError::Format(format!("expected '{key} <n>'")))
        };
        let n_markers = field(next_line()?, "markers")?;
        let max_rounds = field(next_line()?, "max_rounds")?;
        let mut layouts = Vec::new();
        let mut priors = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (layout, prior) = line
                .split_once('\t')
                .ok_or_else(|| PartitionError::Format(format!("malformed line '{line}'")))?;
            layouts.push(layout.parse::<PartitionLayout>()?);
            priors.push(match prior.trim() {
                "-" => None,
                p => Some(p.parse::<f64>().map_err(|e| PartitionError::Format(e.to_string()))?),
            });
        }
        let mut catalog = Self::from_layouts(n_markers, max_rounds, layouts)?;
        if priors.iter().all(Option::is_some) && !priors.is_empty() {
            catalog.log_priors = Some(priors.into_iter().map(Option::unwrap).collect());
        }
        Ok(catalog)
    }
}

/// Median with the midpoint convention for even counts; zero for no data.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let (lower, mid, _) = values.select_nth_unstable_by(n / 2, f64::total_cmp);
    let mid = *mid;
    if n % 2 == 1 {
        mid
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + mid)
    }
}

/// A layout with concrete thresholds; routes any biomarker vector to a leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedPartition {
    layout: PartitionLayout,
    n_markers: usize,
    cuts: Vec<f64>,
    upper: Vec<usize>,
    leaf_ids: Vec<usize>,
}

impl ThresholdedPartition {
    /// Builds from one threshold per node in preorder (leaf entries ignored).
    pub fn from_cuts(layout: PartitionLayout, n_markers: usize, cuts: Vec<f64>) -> Self {
        assert_eq!(cuts.len(), layout.nodes().len());
        let upper = layout.upper_children();
        let mut next_leaf = 0;
        let leaf_ids = layout
            .nodes()
            .iter()
            .map(|n| match n {
                LayoutNode::Leaf => {
                    next_leaf += 1;
                    next_leaf - 1
                }
                LayoutNode::Split(_) => usize::MAX,
            })
            .collect();
        let cuts = layout
            .nodes()
            .iter()
            .zip(cuts)
            .map(|(n, c)| if *n == LayoutNode::Leaf { f64::NAN } else { c })
            .collect();
        Self {
            layout,
            n_markers,
            cuts,
            upper,
            leaf_ids,
        }
    }

    pub fn layout(&self) -> &PartitionLayout {
        &self.layout
    }

    pub fn leaf_count(&self) -> usize {
        self.layout.leaf_count()
    }

    /// Threshold of every node in preorder; `NaN` at leaves.
    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub(crate) fn upper_child(&self, node: usize) -> usize {
        self.upper[node]
    }

    pub(crate) fn leaf_id(&self, node: usize) -> usize {
        self.leaf_ids[node]
    }

    /// Zero-based leaf containing `x`. Values equal to a threshold go to the
    /// upper side.
    pub fn leaf_of(&self, x: &[f64]) -> Result<usize, PartitionError> {
        check_vector(x, self.n_markers)?;
        Ok(self.route(x))
    }

    pub(crate) fn route(&self, x: &[f64]) -> usize {
        let nodes = self.layout.nodes();
        let mut i = 0;
        loop {
            match nodes[i] {
                LayoutNode::Leaf => return self.leaf_ids[i],
                LayoutNode::Split(k) => {
                    i = if x[k as usize] >= self.cuts[i] {
                        self.upper[i]
                    } else {
                        i + 1
                    };
                }
            }
        }
    }
}

/// Binds `layout` to `data`: every split threshold is the median of its
/// marker over the rows routed into that node. Empty nodes get threshold 0.
pub fn bind_thresholds(layout: &PartitionLayout, data: &BiomarkerMatrix) -> ThresholdedPartition {
    fn bind(
        nodes: &[LayoutNode],
        i: usize,
        rows: &[usize],
        data: &BiomarkerMatrix,
        cuts: &mut [f64],
    ) -> usize {
        match nodes[i] {
            LayoutNode::Leaf => i + 1,
            LayoutNode::Split(k) => {
                let k = k as usize;
                let mut col: Vec<f64> = rows.iter().map(|&r| data.get(r, k)).collect();
                let cut = median(&mut col);
                cuts[i] = cut;
                let (upper, lower): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| data.get(r, k) >= cut);
                let next = bind(nodes, i + 1, &lower, data, cuts);
                bind(nodes, next, &upper, data, cuts)
            }
        }
    }
    let mut cuts = vec![f64::NAN; layout.nodes().len()];
    let rows: Vec<usize> = (0..data.len()).collect();
    bind(layout.nodes(), 0, &rows, data, &mut cuts);
    ThresholdedPartition::from_cuts(layout.clone(), data.n_markers(), cuts)
}
