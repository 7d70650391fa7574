//! Second-order regression trees: exact greedy splits on gradient and
//! hessian sums with no regularization terms.

use crate::error::{Error, Result};

/// Row-major feature matrix with per-column sort orders computed once.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    sorted: Vec<Vec<usize>>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} feature matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("feature matrix contains NaN".into()));
        }
        let sorted = (0..cols)
            .map(|c| {
                let mut order: Vec<usize> = (0..rows).collect();
                order.sort_by(|&a, &b| {
                    data[a * cols + c]
                        .total_cmp(&data[b * cols + c])
                        .then(a.cmp(&b))
                });
                order
            })
            .collect();
        Ok(FeatureMatrix {
            rows,
            cols,
            data,
            sorted,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("feature rows have different lengths".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] < *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    /// Number of split nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Preorder traversal.
    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            if let TreeNode::Split { left, right, .. } = node {
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

/// Relative floor below which a gain counts as rounding noise.
const GAIN_EPSILON: f64 = 1e-10;

/// Gains this close (relative) are ties. Prefix sums accumulate in a
/// different order per feature, so two features inducing the same partition
/// can differ in the last bits.
const TIE_TOLERANCE: f64 = 1e-12;

fn leaf_value(g: f64, h: f64) -> f64 {
    if h > 0.0 {
        -g / h
    } else {
        0.0
    }
}

/// Fits one tree to per-row gradients and hessians.
///
/// Splits maximize `½[G_L²/H_L + G_R²/H_R − G²/H]` over thresholds placed
/// midway between adjacent distinct values; ties (equal up to rounding) keep
/// the lowest feature and then the lowest threshold. Growth stops at
/// `max_depth` or when no split has positive gain. Leaves hold `−G/H`.
pub fn fit_tree(
    features: &FeatureMatrix,
    gradients: &[f64],
    hessians: &[f64],
    params: &TreeParams,
) -> Result<TreeNode> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot fit a tree to zero rows".into(),
        ));
    }
    if gradients.len() != n || hessians.len() != n {
        return Err(Error::Shape(format!(
            "{n} rows but {} gradients and {} hessians",
            gradients.len(),
            hessians.len()
        )));
    }
    if hessians.iter().any(|h| !(*h >= 0.0)) || gradients.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(
            "hessians must be non-negative and gradients finite".into(),
        ));
    }
    if params.max_depth == 0 || params.min_samples_leaf == 0 {
        return Err(Error::InvalidArgument(
            "max_depth and min_samples_leaf must be at least 1".into(),
        ));
    }
    let mut builder = Builder {
        features,
        gradients,
        hessians,
        params,
        side: vec![false; n],
    };
    Ok(builder.grow(features.sorted.clone(), 0))
}

struct Builder<'a> {
    features: &'a FeatureMatrix,
    gradients: &'a [f64],
    hessians: &'a [f64],
    params: &'a TreeParams,
    /// Scratch: true when a row of the current node goes left.
    side: Vec<bool>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    /// `orders[f]` lists the node's rows sorted by feature `f`.
    fn grow(&mut self, orders: Vec<Vec<usize>>, depth: usize) -> TreeNode {
        let rows = orders.first().map_or(&[][..], Vec::as_slice);
        // Sum in row order so leaf values do not depend on column order.
        let mut by_index = rows.to_vec();
        by_index.sort_unstable();
        let (g, h) = by_index.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.gradients[r], h + self.hessians[r])
        });
        let leaf = TreeNode::Leaf {
            value: leaf_value(g, h),
        };
        if depth >= self.params.max_depth
            || rows.len() < 2 * self.params.min_samples_leaf
            || h <= 0.0
        {
            return leaf;
        }
        let Some(best) = self.best_split(&orders, g, h) else {
            return leaf;
        };
        let f = best.feature;
        for &r in rows {
            self.side[r] = self.features.get(r, f) < best.threshold;
        }
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for order in orders {
            let (l, r): (Vec<usize>, Vec<usize>) =
                order.into_iter().partition(|&row| self.side[row]);
            left.push(l);
            right.push(r);
        }
        TreeNode::Split {
            feature: f,
            threshold: best.threshold,
            gain: best.gain,
            left: Box::new(self.grow(left, depth + 1)),
            right: Box::new(self.grow(right, depth + 1)),
        }
    }

    fn best_split(&self, orders: &[Vec<usize>], g: f64, h: f64) -> Option<Candidate> {
        let parent = g * g / h;
        let floor = GAIN_EPSILON * (1.0 + parent.abs());
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<Candidate> = None;
        for (f, order) in orders.iter().enumerate() {
            let n = order.len();
            let (mut gl, mut hl) = (0.0, 0.0);
            for i in 0..n - 1 {
                let row = order[i];
                gl += self.gradients[row];
                hl += self.hessians[row];
                let here = self.features.get(row, f);
                let next = self.features.get(order[i + 1], f);
                if here == next || i + 1 < min_leaf || n - i - 1 < min_leaf {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl <= 0.0 || hr <= 0.0 {
                    continue;
                }
                let gain = 0.5 * (gl * gl / hl + gr * gr / hr - parent);
                let improves =
                    |b: &Candidate| gain - b.gain > TIE_TOLERANCE * b.gain.abs().max(1.0);
                if gain > floor && best.as_ref().is_none_or(improves) {
                    best = Some(Candidate {
                        feature: f,
                        threshold: here + (next - here) / 2.0,
                        gain,
                    });
                }
            }
        }
        best
    }
}
