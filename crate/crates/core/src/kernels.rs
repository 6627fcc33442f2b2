//! Covariance functions over document metadata.
//!
//! Two families are supported: a rational quadratic kernel over numeric
//! features (typically a single time axis) with an extra fixed distance
//! between documents by different authors, and a squared-exponential kernel
//! over shortest-path embeddings of a link graph. A constant kernel exists
//! for tests.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("invalid feature: {0}")]
    InvalidFeature(String),
}

pub type Result<T> = std::result::Result<T, KernelError>;

/// Kernel family and its positive parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelSpec {
    RationalQuadratic {
        amplitude: f64,
        /// In the units of the numeric features (years for time).
        length_scale: f64,
        mixture_shape: f64,
        author_mismatch_distance: f64,
    },
    GraphEmbedding {
        amplitude: f64,
        /// Diagonal of the precision-like matrix `S`, one entry per node.
        scales: Vec<f64>,
    },
    /// `k(a, b) = value` everywhere. No derivatives.
    Constant { value: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::RationalQuadratic {
            amplitude: 1.0,
            length_scale: 5.0,
            mixture_shape: 1.0,
            author_mismatch_distance: 5.0,
        }
    }
}

/// Borrowed view of one metadata location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointRef<'a> {
    Euclidean {
        values: &'a [f64],
        author: Option<usize>,
    },
    /// A row of a shortest-path embedding.
    Embedded(&'a [f64]),
}

/// Owned metadata location, used for queries.
#[derive(Debug, Clone, PartialEq)]
pub enum FeaturePoint {
    Euclidean {
        values: Vec<f64>,
        author: Option<usize>,
    },
    Node(usize),
}

/// Shortest-path embedding of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbedding {
    /// N x N hop counts; unreachable pairs hold `cap`.
    pub distances: DMatrix<f64>,
    /// Whether any pair was unreachable.
    pub disconnected: bool,
    /// Distance assigned to unreachable pairs: largest finite distance + 1.
    pub cap: f64,
}

/// Metadata for the training documents.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSpace {
    Euclidean {
        /// Names of the numeric columns.
        columns: Vec<String>,
        /// Row-major D x F feature values.
        values: Vec<f64>,
        /// Author index per document, when an author column is present.
        authors: Option<Vec<usize>>,
        author_names: Vec<String>,
    },
    Graph {
        node_names: Vec<String>,
        embedding: GraphEmbedding,
        /// Node index of every document.
        doc_nodes: Vec<usize>,
    },
}

impl FeatureSpace {
    /// Numeric features only, no author column.
    pub fn euclidean(values: DMatrix<f64>) -> Result<Self> {
        let columns = (0..values.ncols()).map(|f| format!("x{f}")).collect();
        Self::euclidean_with_authors(columns, values, None, Vec::new())
    }

    /// `values` is D x F; `authors[d]` indexes `author_names`.
    pub fn euclidean_with_authors(
        columns: Vec<String>,
        values: DMatrix<f64>,
        authors: Option<Vec<usize>>,
        author_names: Vec<String>,
    ) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::InvalidFeature(
                "feature matrix contains a non-finite entry".into(),
            ));
        }
        if values.ncols() == 0 {
            return Err(KernelError::InvalidFeature(
                "at least one numeric feature column is required".into(),
            ));
        }
        if columns.len() != values.ncols() {
            return Err(KernelError::InvalidFeature(format!(
                "{} column names for {} feature columns",
                columns.len(),
                values.ncols()
            )));
        }
        if let Some(a) = &authors {
            if a.len() != values.nrows() {
                return Err(KernelError::InvalidFeature(format!(
                    "{} authors for {} documents",
                    a.len(),
                    values.nrows()
                )));
            }
            if a.iter().any(|&i| i >= author_names.len()) {
                return Err(KernelError::InvalidFeature("author index out of range".into()));
            }
        }
        let values = values.transpose().as_slice().to_vec();
        Ok(FeatureSpace::Euclidean {
            columns,
            values,
            authors,
            author_names,
        })
    }

    pub fn graph(
        node_names: Vec<String>,
        embedding: GraphEmbedding,
        doc_nodes: Vec<usize>,
    ) -> Result<Self> {
        let n = node_names.len();
        if embedding.distances.nrows() != n || embedding.distances.ncols() != n {
            return Err(KernelError::InvalidFeature(format!(
                "embedding is {}x{} for {n} nodes",
                embedding.distances.nrows(),
                embedding.distances.ncols()
            )));
        }
        if doc_nodes.iter().any(|&i| i >= n) {
            return Err(KernelError::InvalidFeature("document node out of range".into()));
        }
        Ok(FeatureSpace::Graph {
            node_names,
            embedding,
            doc_nodes,
        })
    }

    /// Number of documents.
    pub fn len(&self) -> usize {
        match self {
            FeatureSpace::Euclidean {
                values, columns, ..
            } => values.len() / columns.len(),
            FeatureSpace::Graph { doc_nodes, .. } => doc_nodes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature of document `d`.
    pub fn point(&self, d: usize) -> PointRef<'_> {
        match self {
            FeatureSpace::Euclidean {
                values,
                columns,
                authors,
                ..
            } => {
                let f = columns.len();
                PointRef::Euclidean {
                    values: &values[d * f..(d + 1) * f],
                    author: authors.as_ref().map(|a| a[d]),
                }
            }
            FeatureSpace::Graph {
                embedding,
                doc_nodes,
                ..
            } => PointRef::Embedded(column_slice(&embedding.distances, doc_nodes[d])),
        }
    }

    /// Feature of document `d` as an owned query point.
    pub fn point_owned(&self, d: usize) -> FeaturePoint {
        match (self, self.point(d)) {
            (FeatureSpace::Graph { doc_nodes, .. }, _) => FeaturePoint::Node(doc_nodes[d]),
            (_, PointRef::Euclidean { values, author }) => FeaturePoint::Euclidean {
                values: values.to_vec(),
                author,
            },
            _ => unreachable!(),
        }
    }

    /// D x F matrix of the numeric features (Euclidean spaces only).
    pub fn values_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            FeatureSpace::Euclidean {
                values, columns, ..
            } => Some(DMatrix::from_row_slice(
                values.len() / columns.len().max(1),
                columns.len(),
                values,
            )),
            FeatureSpace::Graph { .. } => None,
        }
    }

    /// Resolves a query point against this space.
    pub fn resolve<'a>(&'a self, query: &'a FeaturePoint) -> Result<PointRef<'a>> {
        match (self, query) {
            (
                FeatureSpace::Euclidean {
                    columns,
                    author_names,
                    ..
                },
                FeaturePoint::Euclidean { values: q, author },
            ) => {
                if q.len() != columns.len() {
                    return Err(KernelError::InvalidFeature(format!(
                        "query has {} features, training data has {}",
                        q.len(),
                        columns.len()
                    )));
                }
                if q.iter().any(|v| !v.is_finite()) {
                    return Err(KernelError::InvalidFeature("query is not finite".into()));
                }
                if let Some(a) = author {
                    if *a >= author_names.len() {
                        return Err(KernelError::InvalidFeature("unknown author index".into()));
                    }
                }
                Ok(PointRef::Euclidean {
                    values: q,
                    author: *author,
                })
            }
            (
                FeatureSpace::Graph {
                    embedding,
                    node_names,
                    ..
                },
                FeaturePoint::Node(i),
            ) => {
                if *i >= node_names.len() {
                    return Err(KernelError::Unsupported(format!(
                        "node {i} is not part of the graph embedding"
                    )));
                }
                Ok(PointRef::Embedded(column_slice(&embedding.distances, *i)))
            }
            _ => Err(KernelError::InvalidFeature(
                "query kind does not match the feature space".into(),
            )),
        }
    }

    /// Reorders documents: document `i` of the result has the feature of
    /// document `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(KernelError::InvalidFeature("permutation length mismatch".into()));
        }
        match self {
            FeatureSpace::Euclidean {
                columns,
                values,
                authors,
                author_names,
            } => {
                let f = columns.len();
                let v = perm
                    .iter()
                    .flat_map(|&p| values[p * f..(p + 1) * f].iter().copied())
                    .collect();
                let a = authors.as_ref().map(|a| perm.iter().map(|&p| a[p]).collect());
                Ok(FeatureSpace::Euclidean {
                    columns: columns.clone(),
                    values: v,
                    authors: a,
                    author_names: author_names.clone(),
                })
            }
            FeatureSpace::Graph {
                node_names,
                embedding,
                doc_nodes,
            } => Self::graph(
                node_names.clone(),
                embedding.clone(),
                perm.iter().map(|&p| doc_nodes[p]).collect(),
            ),
        }
    }
}

// The embedding is symmetric, so column i equals row i and is contiguous.
fn column_slice(m: &DMatrix<f64>, i: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[i * n..(i + 1) * n]
}

/// Kernel matrix and its derivatives with respect to the log parameters.
#[derive(Debug, Clone)]
pub struct Gram {
    pub matrix: DMatrix<f64>,
    pub derivatives: Vec<DMatrix<f64>>,
}

/// Rational quadratic kernel between two `(time, author)` documents.
pub fn rq_time_author(spec: &KernelSpec, a: (f64, usize), b: (f64, usize)) -> f64 {
    spec.eval(
        PointRef::Euclidean {
            values: &[a.0],
            author: Some(a.1),
        },
        PointRef::Euclidean {
            values: &[b.0],
            author: Some(b.1),
        },
    )
    .expect("rational quadratic kernel on euclidean points")
}

/// `s * exp(-0.5 * sum_i S_i (x_a,i - x_b,i)^2)`.
pub fn graph_kernel(spec: &KernelSpec, x_a: &[f64], x_b: &[f64]) -> Result<f64> {
    spec.eval(PointRef::Embedded(x_a), PointRef::Embedded(x_b))
}

/// Unweighted all-pairs shortest paths by breadth-first search.
pub fn graph_embed(nodes: usize, edges: &[(usize, usize)]) -> Result<GraphEmbedding> {
    if nodes == 0 {
        return Err(KernelError::InvalidFeature("graph has no nodes".into()));
    }
    let mut adj = vec![Vec::new(); nodes];
    for &(a, b) in edges {
        if a >= nodes || b >= nodes {
            return Err(KernelError::InvalidFeature(format!(
                "edge ({a}, {b}) references a node outside 0..{nodes}"
            )));
        }
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut hops = vec![usize::MAX; nodes * nodes];
    let mut queue = VecDeque::new();
    for src in 0..nodes {
        let row = &mut hops[src * nodes..(src + 1) * nodes];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let next = row[u] + 1;
            for &v in &adj[u] {
                if row[v] == usize::MAX {
                    row[v] = next;
                    queue.push_back(v);
                }
            }
        }
    }
    let diameter = hops.iter().filter(|&&h| h != usize::MAX).max().copied().unwrap_or(0);
    let cap = (diameter + 1) as f64;
    let disconnected = hops.iter().any(|&h| h == usize::MAX);
    let distances = DMatrix::from_fn(nodes, nodes, |r, c| match hops[r * nodes + c] {
        usize::MAX => cap,
        h => h as f64,
    });
    Ok(GraphEmbedding {
        distances,
        disconnected,
        cap,
    })
}

/// Builds an embedding from named nodes and named edges. Edge endpoints not in
/// `nodes` are appended.
pub fn graph_embed_named(
    mut nodes: Vec<String>,
    edges: &[(String, String)],
) -> Result<(Vec<String>, GraphEmbedding)> {
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if index.insert(n.clone(), i).is_some() {
            return Err(KernelError::InvalidFeature(format!("duplicate node {n:?}")));
        }
    }
    let mut idx_edges = Vec::with_capacity(edges.len());
    for (a, b) in edges {
        let mut lookup = |name: &String| {
            *index.entry(name.clone()).or_insert_with(|| {
                nodes.push(name.clone());
                nodes.len() - 1
            })
        };
        let ia = lookup(a);
        let ib = lookup(b);
        idx_edges.push((ia, ib));
    }
    let embedding = graph_embed(nodes.len(), &idx_edges)?;
    Ok((nodes, embedding))
}

impl KernelSpec {
    /// Default graph kernel for `n` nodes: unit amplitude, `S_i = 1/n`.
    pub fn default_graph(n: usize) -> Self {
        KernelSpec::GraphEmbedding {
            amplitude: 1.0,
            scales: vec![1.0 / n as f64; n],
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            KernelSpec::RationalQuadratic {
                amplitude,
                length_scale,
                mixture_shape,
                author_mismatch_distance,
            } => vec![*amplitude, *length_scale, *mixture_shape, *author_mismatch_distance],
            KernelSpec::GraphEmbedding { amplitude, scales } => {
                let mut p = Vec::with_capacity(scales.len() + 1);
                p.push(*amplitude);
                p.extend_from_slice(scales);
                p
            }
            KernelSpec::Constant { value } => vec![*value],
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            KernelSpec::RationalQuadratic { .. } => [
                "amplitude",
                "length_scale",
                "mixture_shape",
                "author_mismatch_distance",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            KernelSpec::GraphEmbedding { scales, .. } => std::iter::once("amplitude".to_string())
                .chain((0..scales.len()).map(|i| format!("scale_{i}")))
                .collect(),
            KernelSpec::Constant { .. } => vec!["value".into()],
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            KernelSpec::RationalQuadratic { .. } => 4,
            KernelSpec::GraphEmbedding { scales, .. } => scales.len() + 1,
            KernelSpec::Constant { .. } => 1,
        }
    }

    /// Same family with new parameter values (in [`KernelSpec::params`] order).
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        if p.len() != self.num_params() {
            return Err(KernelError::InvalidParameter(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                p.len()
            )));
        }
        let spec = match self {
            KernelSpec::RationalQuadratic { .. } => KernelSpec::RationalQuadratic {
                amplitude: p[0],
                length_scale: p[1],
                mixture_shape: p[2],
                author_mismatch_distance: p[3],
            },
            KernelSpec::GraphEmbedding { .. } => KernelSpec::GraphEmbedding {
                amplitude: p[0],
                scales: p[1..].to_vec(),
            },
            KernelSpec::Constant { .. } => KernelSpec::Constant { value: p[0] },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn log_params(&self) -> Vec<f64> {
        self.params().iter().map(|p| p.ln()).collect()
    }

    pub fn with_log_params(&self, log_p: &[f64]) -> Result<Self> {
        let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        self.with_params(&p)
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.param_names();
        for (name, p) in names.iter().zip(self.params()) {
            if !(p.is_finite() && p > 0.0) {
                return Err(KernelError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn supports_derivatives(&self) -> bool {
        !matches!(self, KernelSpec::Constant { .. })
    }

    /// Kernel value `k(a, b)`.
    pub fn eval(&self, a: PointRef<'_>, b: PointRef<'_>) -> Result<f64> {
        match (self, a, b) {
            (KernelSpec::Constant { value }, _, _) => Ok(*value),
            (
                KernelSpec::RationalQuadratic {
                    amplitude,
                    length_scale,
                    mixture_shape,
                    author_mismatch_distance,
                },
                PointRef::Euclidean { values: xa, author: aa },
                PointRef::Euclidean { values: xb, author: ab },
            ) => {
                let r2 = rq_r2(xa, aa, xb, ab, *length_scale, *author_mismatch_distance)?;
                Ok(amplitude * (1.0 + r2 / (2.0 * mixture_shape)).powf(-mixture_shape))
            }
            (
                KernelSpec::GraphEmbedding { amplitude, scales },
                PointRef::Embedded(xa),
                PointRef::Embedded(xb),
            ) => {
                check_embedded(scales, xa, xb)?;
                let q: f64 = scales
                    .iter()
                    .zip(xa.iter().zip(xb))
                    .map(|(s, (a, b))| s * (a - b) * (a - b))
                    .sum();
                Ok(amplitude * (-0.5 * q).exp())
            }
            _ => Err(KernelError::Unsupported(
                "kernel variant does not match the feature kind".into(),
            )),
        }
    }

    /// Kernel value and its gradient with respect to the log parameters.
    pub fn eval_with_grad(&self, a: PointRef<'_>, b: PointRef<'_>, grad: &mut [f64]) -> Result<f64> {
        if grad.len() != self.num_params() {
            return Err(KernelError::InvalidParameter(format!(
                "gradient buffer has {} slots, kernel has {} parameters",
                grad.len(),
                self.num_params()
            )));
        }
        match (self, a, b) {
            (KernelSpec::Constant { .. }, _, _) => Err(KernelError::Unsupported(
                "the constant kernel has no parameter derivatives".into(),
            )),
            (
                KernelSpec::RationalQuadratic {
                    amplitude,
                    length_scale,
                    mixture_shape,
                    author_mismatch_distance,
                },
                PointRef::Euclidean { values: xa, author: aa },
                PointRef::Euclidean { values: xb, author: ab },
            ) => {
                let ell = *length_scale;
                let shape = *mixture_shape;
                let r2 = rq_r2(xa, aa, xb, ab, ell, *author_mismatch_distance)?;
                let mismatch = matches!((aa, ab), (Some(x), Some(y)) if x != y);
                let u = r2 / (2.0 * shape);
                let base = 1.0 + u;
                let k = amplitude * base.powf(-shape);
                let dk_dr2 = -0.5 * amplitude * base.powf(-shape - 1.0);
                grad[0] = k;
                grad[1] = dk_dr2 * (-2.0 * r2);
                grad[2] = k * shape * (u / base - base.ln());
                grad[3] = if mismatch {
                    let m2 = (author_mismatch_distance / ell).powi(2);
                    dk_dr2 * 2.0 * m2
                } else {
                    0.0
                };
                Ok(k)
            }
            (
                KernelSpec::GraphEmbedding { amplitude, scales },
                PointRef::Embedded(xa),
                PointRef::Embedded(xb),
            ) => {
                check_embedded(scales, xa, xb)?;
                let q: f64 = scales
                    .iter()
                    .zip(xa.iter().zip(xb))
                    .map(|(s, (a, b))| s * (a - b) * (a - b))
                    .sum();
                let k = amplitude * (-0.5 * q).exp();
                grad[0] = k;
                for (i, s) in scales.iter().enumerate() {
                    let d = xa[i] - xb[i];
                    grad[i + 1] = -0.5 * k * s * d * d;
                }
                Ok(k)
            }
            _ => Err(KernelError::Unsupported(
                "kernel variant does not match the feature kind".into(),
            )),
        }
    }

    fn check_space(&self, features: &FeatureSpace) -> Result<()> {
        match (self, features) {
            (KernelSpec::Constant { .. }, _)
            | (KernelSpec::RationalQuadratic { .. }, FeatureSpace::Euclidean { .. }) => Ok(()),
            (KernelSpec::GraphEmbedding { scales, .. }, FeatureSpace::Graph { node_names, .. }) => {
                if scales.len() != node_names.len() {
                    Err(KernelError::InvalidParameter(format!(
                        "graph kernel has {} scales for an embedding of {} nodes",
                        scales.len(),
                        node_names.len()
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Err(KernelError::Unsupported(
                "kernel variant does not match the feature space".into(),
            )),
        }
    }

    /// Kernel matrix over the documents in `subset`.
    pub fn gram_matrix(&self, features: &FeatureSpace, subset: &[usize]) -> Result<DMatrix<f64>> {
        self.check_space(features)?;
        check_subset(features, subset)?;
        let n = subset.len();
        let mut m = DMatrix::zeros(n, n);
        with_points(features, subset, |pts| {
            for i in 0..n {
                for j in 0..=i {
                    let v = self.eval(pts[i], pts[j])?;
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            Ok(())
        })?;
        Ok(m)
    }

    /// Kernel matrix plus one derivative matrix per log parameter.
    pub fn gram(&self, features: &FeatureSpace, subset: &[usize]) -> Result<Gram> {
        self.check_space(features)?;
        check_subset(features, subset)?;
        if !self.supports_derivatives() {
            return Err(KernelError::Unsupported(
                "the constant kernel has no parameter derivatives".into(),
            ));
        }
        let n = subset.len();
        let p = self.num_params();
        let mut matrix = DMatrix::zeros(n, n);
        let mut derivatives = vec![DMatrix::zeros(n, n); p];
        let mut g = vec![0.0; p];
        with_points(features, subset, |pts| {
            for i in 0..n {
                for j in 0..=i {
                    let v = self.eval_with_grad(pts[i], pts[j], &mut g)?;
                    matrix[(i, j)] = v;
                    matrix[(j, i)] = v;
                    for (dm, gv) in derivatives.iter_mut().zip(&g) {
                        dm[(i, j)] = *gv;
                        dm[(j, i)] = *gv;
                    }
                }
            }
            Ok(())
        })?;
        Ok(Gram {
            matrix,
            derivatives,
        })
    }

    /// Contracts every log-parameter derivative matrix with a symmetric
    /// weight matrix: `out[j] = sum_ab W_ab dK_ab/dxi_j`. Avoids materialising
    /// the derivative matrices.
    pub fn contract_derivatives(
        &self,
        features: &FeatureSpace,
        subset: &[usize],
        weights: &DMatrix<f64>,
    ) -> Result<Vec<f64>> {
        self.check_space(features)?;
        check_subset(features, subset)?;
        if !self.supports_derivatives() {
            return Err(KernelError::Unsupported(
                "the constant kernel has no parameter derivatives".into(),
            ));
        }
        let n = subset.len();
        let p = self.num_params();
        let mut out = vec![0.0; p];
        let mut g = vec![0.0; p];
        with_points(features, subset, |pts| {
            for i in 0..n {
                for j in 0..=i {
                    self.eval_with_grad(pts[i], pts[j], &mut g)?;
                    let w = if i == j {
                        weights[(i, i)]
                    } else {
                        weights[(i, j)] + weights[(j, i)]
                    };
                    for (o, gv) in out.iter_mut().zip(&g) {
                        *o += w * gv;
                    }
                }
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Cross-covariances between the documents in `subset` and a query.
    pub fn cross(
        &self,
        features: &FeatureSpace,
        subset: &[usize],
        query: PointRef<'_>,
    ) -> Result<DVector<f64>> {
        self.check_space(features)?;
        check_subset(features, subset)?;
        let mut out = DVector::zeros(subset.len());
        with_points(features, subset, |pts| {
            for (i, p) in pts.iter().enumerate() {
                out[i] = self.eval(*p, query)?;
            }
            Ok(())
        })?;
        Ok(out)
    }
}

fn rq_r2(
    xa: &[f64],
    aa: Option<usize>,
    xb: &[f64],
    ab: Option<usize>,
    length_scale: f64,
    mismatch: f64,
) -> Result<f64> {
    if xa.len() != xb.len() {
        return Err(KernelError::InvalidFeature(format!(
            "feature lengths differ: {} vs {}",
            xa.len(),
            xb.len()
        )));
    }
    let mut r2: f64 = xa
        .iter()
        .zip(xb)
        .map(|(a, b)| ((a - b) / length_scale).powi(2))
        .sum();
    if let (Some(a), Some(b)) = (aa, ab) {
        if a != b {
            r2 += (mismatch / length_scale).powi(2);
        }
    }
    Ok(r2)
}

fn check_embedded(scales: &[f64], xa: &[f64], xb: &[f64]) -> Result<()> {
    if xa.len() != scales.len() || xb.len() != scales.len() {
        return Err(KernelError::InvalidFeature(format!(
            "embedding rows of length {} and {} for {} scales",
            xa.len(),
            xb.len(),
            scales.len()
        )));
    }
    Ok(())
}

fn check_subset(features: &FeatureSpace, subset: &[usize]) -> Result<()> {
    if let Some(&i) = subset.iter().find(|&&i| i >= features.len()) {
        return Err(KernelError::InvalidFeature(format!(
            "document index {i} outside 0..{}",
            features.len()
        )));
    }
    Ok(())
}

fn with_points<F>(features: &FeatureSpace, subset: &[usize], f: F) -> Result<()>
where
    F: FnOnce(&[PointRef<'_>]) -> Result<()>,
{
    let pts: Vec<PointRef<'_>> = subset.iter().map(|&d| features.point(d)).collect();
    f(&pts)
}
