//! Exact posterior over the partition catalog.
//!
//! With independent `Beta(a, b)` priors on every leaf/arm response rate the
//! rates integrate out, and the posterior weight of a layout is its prior
//! times a product of Beta-function ratios over its leaves. The predictive
//! response probability for arm `t` at `x` averages the leaf posterior means
//! `(a + n_mt1) / (a + b + n_mt)` over layouts.
//!
//! A rebuild never loops over patients per layout. Thresholds are conditional
//! medians of the data routed into a node, so a subset reached by a given
//! sequence of `(marker, side)` decisions has the same data in every layout
//! that contains it. The engine computes thresholds, counts and marginal
//! likelihoods once per such cell (585 cells for four markers and three
//! rounds) and then sums cell terms per layout.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;
use thiserror::Error;

use crate::data::{check_vector, Arm, DataError, TrialData};
use crate::partition::{median, CellIndex, LayoutNode, PartitionCatalog, PartitionError, ThresholdedPartition};

#[derive(Debug, Error, PartialEq)]
pub enum PosteriorError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("data has {data} markers but the catalog has {catalog}")]
    MarkerMismatch { data: usize, catalog: usize },
    #[error("Beta hyperparameters must be positive")]
    InvalidHyper,
    #[error("at least one enrolled patient is required")]
    NoPatients,
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for PosteriorError {
    fn from(e: std::io::Error) -> Self {
        PosteriorError::Io(e.to_string())
    }
}

/// `Beta(a, b)` prior shared by every leaf/arm response rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaHyper {
    pub a: f64,
    pub b: f64,
}

impl BetaHyper {
    pub fn new(a: f64, b: f64) -> Result<Self, PosteriorError> {
        let h = Self { a, b };
        h.validate()?;
        Ok(h)
    }

    pub fn uniform() -> Self {
        Self { a: 1.0, b: 1.0 }
    }

    pub fn validate(&self) -> Result<(), PosteriorError> {
        if self.a.is_finite() && self.b.is_finite() && self.a > 0.0 && self.b > 0.0 {
            Ok(())
        } else {
            Err(PosteriorError::InvalidHyper)
        }
    }

    pub fn posterior_mean(&self, tally: ArmTally) -> f64 {
        (self.a + tally.responders as f64) / (self.a + self.b + tally.total() as f64)
    }
}

impl Default for BetaHyper {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Responders and non-responders for one arm within one subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArmTally {
    pub responders: u32,
    pub non_responders: u32,
}

impl ArmTally {
    pub fn total(&self) -> u32 {
        self.responders + self.non_responders
    }

    pub fn record(&mut self, y: bool) {
        if y {
            self.responders += 1;
        } else {
            self.non_responders += 1;
        }
    }
}

/// Outcome counts of one leaf, indexed by arm.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LeafCounts {
    pub arms: Vec<ArmTally>,
}

impl LeafCounts {
    pub fn new(n_arms: usize) -> Self {
        Self {
            arms: vec![ArmTally::default(); n_arms],
        }
    }

    /// Patients in the leaf with an observed outcome.
    pub fn total(&self) -> u32 {
        self.arms.iter().map(ArmTally::total).sum()
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `Σ_m Σ_t [ln B(a + n_mt1, b + n_mt0) − ln B(a, b)]`.
pub fn log_marginal_likelihood(leaves: &[LeafCounts], hyper: BetaHyper) -> f64 {
    let base = ln_beta(hyper.a, hyper.b);
    leaves
        .iter()
        .flat_map(|leaf| leaf.arms.iter())
        .filter(|t| t.total() > 0)
        .map(|t| ln_beta(hyper.a + t.responders as f64, hyper.b + t.non_responders as f64) - base)
        .sum()
}

/// `ln B(a + s, b + f) − ln B(a, b)` from cached log-gamma values.
struct LnBetaTable {
    ln_a: Vec<f64>,
    ln_b: Vec<f64>,
    ln_ab: Vec<f64>,
}

impl LnBetaTable {
    fn new(hyper: BetaHyper, max_count: usize) -> Self {
        let table = |base: f64, len: usize| (0..len).map(|i| ln_gamma(base + i as f64)).collect::<Vec<_>>();
        Self {
            ln_a: table(hyper.a, max_count + 1),
            ln_b: table(hyper.b, max_count + 1),
            ln_ab: table(hyper.a + hyper.b, max_count + 1),
        }
    }

    fn ratio(&self, t: ArmTally) -> f64 {
        let (s, f) = (t.responders as usize, t.non_responders as usize);
        if s + f == 0 {
            return 0.0;
        }
        (self.ln_a[s] + self.ln_b[f] - self.ln_ab[s + f]) - (self.ln_a[0] + self.ln_b[0] - self.ln_ab[0])
    }
}

/// Which matrix distance the partition summary minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryCriterion {
    /// `‖G^Π − Ĝ‖²`, distance to the posterior mean association matrix.
    #[default]
    LeastSquares,
    /// `E‖G^Π − G^Π'‖²` under the posterior.
    PosteriorMeanDistance,
}

/// Posterior mean co-clustering matrix over enrolled patients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoClustering {
    n: usize,
    values: Vec<f64>,
}

impl CoClustering {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Dense comma-separated matrix, one row per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| self.get(i, j).to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Per-arm summary of one leaf of the reported partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafArmSummary {
    pub arm: Arm,
    pub n: u32,
    pub responders: u32,
    pub posterior_mean: f64,
}

/// The reported partition as a tree, with one-based marker and leaf labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum SummaryNode {
    Split {
        marker: usize,
        threshold: f64,
        lower: Box<SummaryNode>,
        upper: Box<SummaryNode>,
    },
    Leaf {
        leaf: usize,
        arms: Vec<LeafArmSummary>,
        best_arm: Arm,
    },
}

/// Point summary of the partition posterior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionSummary {
    pub criterion: SummaryCriterion,
    pub layout_index: usize,
    pub layout: String,
    pub posterior_weight: f64,
    pub score: f64,
    pub tree: SummaryNode,
    #[serde(skip)]
    pub partition: Option<ThresholdedPartition>,
    #[serde(skip)]
    pub co_clustering: CoClustering,
}

#[derive(Debug, Clone)]
struct CellStats {
    /// `[cell * K + k]`: threshold when the cell splits on marker `k`.
    cuts: Vec<f64>,
    /// `[cell * T + t]`
    tallies: Vec<ArmTally>,
    /// `[cell * T + t]`: leaf posterior mean of the response rate.
    means: Vec<f64>,
    /// Σ over arms of the log Beta ratio.
    log_lik: Vec<f64>,
}

/// Exact joint posterior over the catalog for one data snapshot.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    catalog: Arc<PartitionCatalog>,
    hyper: BetaHyper,
    n_arms: usize,
    snapshot: u64,
    n_patients: usize,
    data_markers: Vec<f64>,
    cells: CellStats,
    log_weights: Vec<f64>,
    cell_weights: Vec<f64>,
}

impl PosteriorState {
    /// Re-binds every threshold to the current data, recounts, and weighs
    /// every layout by prior × marginal likelihood.
    pub fn rebuild(
        catalog: Arc<PartitionCatalog>,
        data: &TrialData,
        hyper: BetaHyper,
        n_arms: usize,
    ) -> Result<Self, PosteriorError> {
        Self::build(catalog, data, hyper, n_arms, None)
    }

    /// Rebuild that keeps this state's thresholds instead of recomputing
    /// medians. Only meant for tests that need counts to move while the
    /// partition geometry stays put.
    #[doc(hidden)]
    pub fn rebuild_frozen(&self, data: &TrialData) -> Result<Self, PosteriorError> {
        Self::build(
            Arc::clone(&self.catalog),
            data,
            self.hyper,
            self.n_arms,
            Some(&self.cells.cuts),
        )
    }

    fn build(
        catalog: Arc<PartitionCatalog>,
        data: &TrialData,
        hyper: BetaHyper,
        n_arms: usize,
        frozen: Option<&[f64]>,
    ) -> Result<Self, PosteriorError> {
        hyper.validate()?;
        let log_priors = catalog.log_priors()?;
        let n_markers = catalog.n_markers();
        if data.n_markers() != n_markers {
            return Err(PosteriorError::MarkerMismatch {
                data: data.n_markers(),
                catalog: n_markers,
            });
        }
        for i in 0..data.len() {
            if let Some(arm) = data.arm(i) {
                if arm.index() >= n_arms {
                    return Err(DataError::ArmOutOfRange(arm).into());
                }
            }
        }

        let index = catalog.cells();
        let n_cells = index.len();
        let mut cells = CellStats {
            cuts: vec![f64::NAN; n_cells * n_markers],
            tallies: vec![ArmTally::default(); n_cells * n_arms],
            means: Vec::new(),
            log_lik: vec![0.0; n_cells],
        };
        let members: Vec<u32> = (0..data.len() as u32).collect();
        let mut scratch = Vec::with_capacity(data.len());
        fill_cell(index, &mut cells, 0, &members, data, n_arms, frozen, &mut scratch, &mut Vec::new());

        let table = LnBetaTable::new(hyper, data.n_observed());
        cells.means = cells.tallies.iter().map(|t| hyper.posterior_mean(*t)).collect();
        for (c, ll) in cells.log_lik.iter_mut().enumerate() {
            *ll = cells.tallies[c * n_arms..(c + 1) * n_arms]
                .iter()
                .map(|t| table.ratio(*t))
                .sum();
        }

        let mut log_weights: Vec<f64> = log_priors
            .iter()
            .enumerate()
            .map(|(r, lp)| lp + index.leaf_cells(r).iter().map(|&c| cells.log_lik[c as usize]).sum::<f64>())
            .collect();
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let log_total = total.ln();
        let mut cell_weights = vec![0.0; n_cells];
        for (r, (lw, w)) in log_weights.iter_mut().zip(weights.iter_mut()).enumerate() {
            *lw -= max + log_total;
            *w /= total;
            if *w == 0.0 {
                continue;
            }
            for &c in index.leaf_cells(r) {
                cell_weights[c as usize] += *w;
            }
        }

        let data_markers = data.markers().rows().flatten().copied().collect();
        Ok(Self {
            catalog,
            hyper,
            n_arms,
            snapshot: data.version(),
            n_patients: data.len(),
            data_markers,
            cells,
            log_weights,
            cell_weights,
        })
    }

    pub fn catalog(&self) -> &Arc<PartitionCatalog> {
        &self.catalog
    }

    pub fn hyper(&self) -> BetaHyper {
        self.hyper
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn n_markers(&self) -> usize {
        self.catalog.n_markers()
    }

    /// Version of the [`TrialData`] this state was built from.
    pub fn snapshot(&self) -> u64 {
        self.snapshot
    }

    pub fn n_patients(&self) -> usize {
        self.n_patients
    }

    /// Normalized log posterior weight of each layout, in catalog order.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weight(&self, r: usize) -> f64 {
        self.log_weights[r].exp()
    }

    /// Layout `r` bound to the thresholds of this snapshot.
    pub fn thresholded(&self, r: usize) -> ThresholdedPartition {
        let layout = self.catalog.layout(r);
        let index = self.catalog.cells();
        let k_count = self.n_markers();
        let mut cuts = vec![f64::NAN; layout.nodes().len()];
        fn walk(nodes: &[LayoutNode], i: usize, cell: u32, index: &CellIndex, all: &[f64], k_count: usize, cuts: &mut [f64]) -> usize {
            match nodes[i] {
                LayoutNode::Leaf => i + 1,
                LayoutNode::Split(k) => {
                    let k = k as usize;
                    cuts[i] = all[cell as usize * k_count + k];
                    let next = walk(nodes, i + 1, index.child(cell, k, false), index, all, k_count, cuts);
                    walk(nodes, next, index.child(cell, k, true), index, all, k_count, cuts)
                }
            }
        }
        walk(layout.nodes(), 0, 0, index, &self.cells.cuts, k_count, &mut cuts);
        ThresholdedPartition::from_cuts(layout.clone(), k_count, cuts)
    }

    /// Outcome counts of every leaf of layout `r`.
    pub fn leaf_counts(&self, r: usize) -> Vec<LeafCounts> {
        self.catalog
            .cells()
            .leaf_cells(r)
            .iter()
            .map(|&c| LeafCounts {
                arms: self.cell_tallies(c).to_vec(),
            })
            .collect()
    }

    fn cell_tallies(&self, c: u32) -> &[ArmTally] {
        &self.cells.tallies[c as usize * self.n_arms..(c as usize + 1) * self.n_arms]
    }

    /// Visits every cell containing `x` in a fixed order that depends only
    /// on the catalog shape.
    fn for_each_cell_on_path(&self, x: &[f64], mut f: impl FnMut(u32)) {
        let index = self.catalog.cells();
        let k_count = self.n_markers();
        let mut stack = vec![0u32];
        while let Some(c) = stack.pop() {
            f(c);
            if index.can_split(c) {
                for k in (0..k_count).rev() {
                    let upper = x[k] >= self.cells.cuts[c as usize * k_count + k];
                    stack.push(index.child(c, k, upper));
                }
            }
        }
    }

    /// Predictive response probability at `x` for every arm of the universe.
    pub fn predictive_all(&self, x: &[f64]) -> Result<Vec<f64>, PosteriorError> {
        check_vector(x, self.n_markers())?;
        let mut q = vec![0.0; self.n_arms];
        let t_count = self.n_arms;
        self.for_each_cell_on_path(x, |c| {
            let w = self.cell_weights[c as usize];
            let means = &self.cells.means[c as usize * t_count..(c as usize + 1) * t_count];
            for (qt, m) in q.iter_mut().zip(means) {
                *qt += w * m;
            }
        });
        Ok(q)
    }

    /// `q(t, x)`: posterior predictive probability of response under `arm`.
    pub fn predictive(&self, x: &[f64], arm: Arm) -> Result<f64, PosteriorError> {
        if arm.index() >= self.n_arms {
            return Err(DataError::ArmOutOfRange(arm).into());
        }
        Ok(self.predictive_all(x)?[arm.index()])
    }

    /// Predictive probabilities on the Cartesian product of `axes` (each
    /// sorted ascending), returned per requested arm with the last marker
    /// varying fastest.
    ///
    /// Every cell is an axis-aligned box, so its contribution is added with
    /// a multi-dimensional difference array and recovered by prefix sums.
    pub fn predictive_grid(&self, axes: &[Vec<f64>], arms: &[Arm]) -> Result<Vec<Vec<f64>>, PosteriorError> {
        let k_count = self.n_markers();
        if axes.len() != k_count {
            return Err(DataError::Dimension {
                expected: k_count,
                got: axes.len(),
            }
            .into());
        }
        for arm in arms {
            if arm.index() >= self.n_arms {
                return Err(DataError::ArmOutOfRange(*arm).into());
            }
        }
        let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
        let mut stride = vec![1usize; k_count];
        for k in (0..k_count.saturating_sub(1)).rev() {
            stride[k] = stride[k + 1] * dims[k + 1];
        }
        let total: usize = dims.iter().product();
        let mut grid = GridAccumulator {
            state: self,
            axes,
            arms,
            dims: &dims,
            stride: &stride,
            diff: vec![vec![0.0; total]; arms.len()],
        };
        let mut lo = vec![0usize; k_count];
        let mut hi = dims.clone();
        if total > 0 {
            grid.visit(0, &mut lo, &mut hi);
        }
        let mut diff = grid.diff;

        // Running sums along each axis in turn, without index arithmetic.
        for d in diff.iter_mut() {
            for k in 0..k_count {
                let (n, s) = (dims[k], stride[k]);
                for block in d.chunks_mut(n * s) {
                    for i in 1..n {
                        let (prev, cur) = block[(i - 1) * s..(i + 1) * s].split_at_mut(s);
                        for (c, p) in cur.iter_mut().zip(prev.iter()) {
                            *c += *p;
                        }
                    }
                }
            }
        }
        Ok(diff)
    }

    /// Cell ids on every patient's routing path, `P` per patient.
    fn patient_paths(&self) -> (Vec<u32>, usize) {
        let k_count = self.n_markers();
        let mut paths = Vec::new();
        for i in 0..self.n_patients {
            let x = &self.data_markers[i * k_count..(i + 1) * k_count];
            self.for_each_cell_on_path(x, |c| paths.push(c));
        }
        let per = if self.n_patients == 0 { 0 } else { paths.len() / self.n_patients };
        (paths, per)
    }

    /// `Ĝ_ij`: posterior probability that patients `i` and `j` share a leaf.
    pub fn co_clustering(&self) -> Result<CoClustering, PosteriorError> {
        if self.n_patients == 0 {
            return Err(PosteriorError::NoPatients);
        }
        let n = self.n_patients;
        let (paths, per) = self.patient_paths();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            let pi = &paths[i * per..(i + 1) * per];
            values[i * n + i] = pi.iter().map(|&c| self.cell_weights[c as usize]).sum();
            for j in 0..i {
                let pj = &paths[j * per..(j + 1) * per];
                let g: f64 = pi
                    .iter()
                    .zip(pj)
                    .filter(|(a, b)| a == b)
                    .map(|(&c, _)| self.cell_weights[c as usize])
                    .sum();
                values[i * n + j] = g;
                values[j * n + i] = g;
            }
        }
        Ok(CoClustering { n, values })
    }

    /// Least-squares partition with leaf recommendations over all arms.
    pub fn least_squares_partition(&self) -> Result<PartitionSummary, PosteriorError> {
        self.summarize(SummaryCriterion::LeastSquares, &Arm::all(self.n_arms))
    }

    /// Layout minimizing the chosen distance to the posterior, ties to the
    /// lowest catalog index, with each leaf's best arm among `candidates`.
    pub fn summarize(&self, criterion: SummaryCriterion, candidates: &[Arm]) -> Result<PartitionSummary, PosteriorError> {
        let g = self.co_clustering()?;
        let n = self.n_patients;
        let index = self.catalog.cells();
        let (paths, per) = self.patient_paths();

        // A_c = Σ_{i,j ∈ c} (1 − 2 Ĝ_ij); a layout's score is Σ over its
        // leaf cells plus a constant.
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); index.len()];
        for i in 0..n {
            for &c in &paths[i * per..(i + 1) * per] {
                members[c as usize].push(i as u32);
            }
        }
        let cell_term: Vec<f64> = members
            .iter()
            .map(|m| {
                let mut s = 0.0;
                for &i in m {
                    for &j in m {
                        s += 1.0 - 2.0 * g.get(i as usize, j as usize);
                    }
                }
                s
            })
            .collect();
        let constant: f64 = match criterion {
            SummaryCriterion::LeastSquares => g.values.iter().map(|v| v * v).sum(),
            SummaryCriterion::PosteriorMeanDistance => g.values.iter().sum(),
        };

        let mut best = (0usize, f64::INFINITY);
        for r in 0..self.catalog.len() {
            let score = constant + index.leaf_cells(r).iter().map(|&c| cell_term[c as usize]).sum::<f64>();
            if score < best.1 {
                best = (r, score);
            }
        }
        let (r, score) = best;
        let partition = self.thresholded(r);
        let leaves = self.leaf_counts(r);
        let tree = self.summary_tree(&partition, &leaves, candidates);
        Ok(PartitionSummary {
            criterion,
            layout_index: r,
            layout: self.catalog.layout(r).to_string(),
            posterior_weight: self.weight(r),
            score: score.max(0.0),
            tree,
            partition: Some(partition),
            co_clustering: g,
        })
    }

    fn summary_tree(&self, partition: &ThresholdedPartition, leaves: &[LeafCounts], candidates: &[Arm]) -> SummaryNode {
        fn build(
            s: &PosteriorState,
            p: &ThresholdedPartition,
            leaves: &[LeafCounts],
            candidates: &[Arm],
            i: usize,
        ) -> (SummaryNode, usize) {
            match p.layout().nodes()[i] {
                LayoutNode::Leaf => {
                    let leaf = p.leaf_id(i);
                    let arms: Vec<LeafArmSummary> = leaves[leaf]
                        .arms
                        .iter()
                        .enumerate()
                        .map(|(t, tally)| LeafArmSummary {
                            arm: Arm(t),
                            n: tally.total(),
                            responders: tally.responders,
                            posterior_mean: s.hyper.posterior_mean(*tally),
                        })
                        .collect();
                    let mut best_arm = candidates.first().copied().unwrap_or(Arm(0));
                    for &a in candidates {
                        if arms[a.index()].posterior_mean > arms[best_arm.index()].posterior_mean {
                            best_arm = a;
                        }
                    }
                    (
                        SummaryNode::Leaf {
                            leaf: leaf + 1,
                            arms,
                            best_arm,
                        },
                        i + 1,
                    )
                }
                LayoutNode::Split(k) => {
                    let (lower, _) = build(s, p, leaves, candidates, i + 1);
                    let (upper, next) = build(s, p, leaves, candidates, p.upper_child(i));
                    (
                        SummaryNode::Split {
                            marker: k as usize + 1,
                            threshold: p.cuts()[i],
                            lower: Box::new(lower),
                            upper: Box::new(upper),
                        },
                        next,
                    )
                }
            }
        }
        build(self, partition, leaves, candidates, 0).0
    }

    /// Text dump for audit: one line per layout with its log weight and the
    /// `responders/total` of every leaf and arm.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<(), PosteriorError> {
        writeln!(w, "# suba posterior dump v1")?;
        writeln!(
            w,
            "# snapshot {} patients {} arms {} a {} b {}",
            self.snapshot, self.n_patients, self.n_arms, self.hyper.a, self.hyper.b
        )?;
        for r in 0..self.catalog.len() {
            let leaves: Vec<String> = self
                .leaf_counts(r)
                .iter()
                .map(|leaf| {
                    leaf.arms
                        .iter()
                        .map(|t| format!("{}/{}", t.responders, t.total()))
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .collect();
            writeln!(
                w,
                "{r}\t{}\t{}\t{}",
                self.catalog.layout(r),
                self.log_weights[r],
                leaves.join(" | ")
            )?;
        }
        Ok(())
    }
}

/// Difference-array accumulation for [`PosteriorState::predictive_grid`].
/// Corners that fall past the last grid point are dropped since their
/// prefix sums never reach a grid point.
struct GridAccumulator<'a> {
    state: &'a PosteriorState,
    axes: &'a [Vec<f64>],
    arms: &'a [Arm],
    dims: &'a [usize],
    stride: &'a [usize],
    diff: Vec<Vec<f64>>,
}

impl GridAccumulator<'_> {
    fn visit(&mut self, c: u32, lo: &mut [usize], hi: &mut [usize]) {
        if lo.iter().zip(hi.iter()).any(|(l, h)| l >= h) {
            return;
        }
        let state = self.state;
        let k_count = lo.len();
        let w = state.cell_weights[c as usize];
        if w > 0.0 {
            for mask in 0..(1usize << k_count) {
                let mut idx = 0;
                let mut inside = true;
                for k in 0..k_count {
                    let i = if mask >> k & 1 == 1 { hi[k] } else { lo[k] };
                    if i == self.dims[k] {
                        inside = false;
                        break;
                    }
                    idx += self.stride[k] * i;
                }
                if !inside {
                    continue;
                }
                let sign = if mask.count_ones() % 2 == 0 { w } else { -w };
                let means = &state.cells.means[c as usize * state.n_arms..(c as usize + 1) * state.n_arms];
                for (d, arm) in self.diff.iter_mut().zip(self.arms) {
                    d[idx] += sign * means[arm.index()];
                }
            }
        }
        let index = state.catalog.cells();
        if !index.can_split(c) {
            return;
        }
        for k in 0..k_count {
            let cut = state.cells.cuts[c as usize * k_count + k];
            let s = self.axes[k].partition_point(|g| *g < cut);
            let saved_hi = hi[k];
            hi[k] = saved_hi.min(s);
            self.visit(index.child(c, k, false), lo, hi);
            hi[k] = saved_hi;
            let saved_lo = lo[k];
            lo[k] = saved_lo.max(s);
            self.visit(index.child(c, k, true), lo, hi);
            lo[k] = saved_lo;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fill_cell(
    index: &CellIndex,
    cells: &mut CellStats,
    cell: u32,
    members: &[u32],
    data: &TrialData,
    n_arms: usize,
    frozen: Option<&[f64]>,
    scratch: &mut Vec<f64>,
    pool: &mut Vec<Vec<u32>>,
) {
    let base = cell as usize * n_arms;
    for &i in members {
        if let Some((arm, y)) = data.observed(i as usize) {
            cells.tallies[base + arm.index()].record(y);
        }
    }
    if !index.can_split(cell) {
        return;
    }
    let k_count = index.n_markers();
    let markers = data.markers();
    for k in 0..k_count {
        let slot = cell as usize * k_count + k;
        let cut = match frozen {
            Some(f) => f[slot],
            None => {
                scratch.clear();
                scratch.extend(members.iter().map(|&i| markers.get(i as usize, k)));
                median(scratch)
            }
        };
        cells.cuts[slot] = cut;
        for upper in [false, true] {
            let mut side = pool.pop().unwrap_or_default();
            side.clear();
            side.extend(members.iter().filter(|&&i| (markers.get(i as usize, k) >= cut) == upper));
            fill_cell(index, cells, index.child(cell, k, upper), &side, data, n_arms, frozen, scratch, pool);
            pool.push(side);
        }
    }
}
