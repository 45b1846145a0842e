//! Synthetic generators, connectome ingestion and file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::diffusion::{DiffusionConfig, DiffusionKernel, KernelKind};
use crate::error::{Error, Result};
use crate::graph::{Graph, Hypergraph, Structure};
use crate::rng::{self, StreamRng};
use crate::sparse::CsrMatrix;

type M = Matrix<f64>;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const SBM_NOISE_STD: f64 = 0.1;

/// Instances with names and optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub instances: Vec<Structure<f64>>,
    pub labels: Option<Vec<usize>>,
    pub names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        instances: Vec<Structure<f64>>,
        labels: Option<Vec<usize>>,
        names: Vec<String>,
    ) -> Result<Self> {
        if names.len() != instances.len() {
            return Err(Error::Data(format!(
                "{} names for {} instances",
                names.len(),
                instances.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != instances.len() {
                return Err(Error::Data(format!(
                    "{} labels for {} instances",
                    l.len(),
                    instances.len()
                )));
            }
        }
        Ok(Self {
            instances,
            labels,
            names,
        })
    }

    /// Unnamed instances get `instance-{i}`.
    pub fn unlabeled(instances: Vec<Structure<f64>>) -> Self {
        let names = (0..instances.len())
            .map(|i| format!("instance-{i}"))
            .collect();
        Self {
            instances,
            labels: None,
            names,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }
}

fn community_of(i: usize, n: usize, c: usize) -> usize {
    i * c / n
}

fn check_sbm(
    n_nodes: usize,
    n_communities: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
) -> Result<()> {
    if n_communities == 0 || n_communities > n_nodes {
        return Err(Error::Config(format!(
            "{n_communities} communities for {n_nodes} nodes"
        )));
    }
    if !(0.0 <= p_out && p_out <= p_in && p_in <= 1.0) {
        return Err(Error::Config(format!(
            "need 0 <= p_out <= p_in <= 1, got {p_out}, {p_in}"
        )));
    }
    if feature_dim < n_communities {
        return Err(Error::Config(format!(
            "feature_dim {feature_dim} cannot hold {n_communities} community indicators"
        )));
    }
    Ok(())
}

fn sbm_with_rng(
    n_nodes: usize,
    n_communities: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    r: &mut StreamRng,
) -> Result<Graph<f64>> {
    check_sbm(n_nodes, n_communities, p_in, p_out, feature_dim)?;
    let mut edges = Vec::new();
    for i in 0..n_nodes {
        for j in i + 1..n_nodes {
            let same =
                community_of(i, n_nodes, n_communities) == community_of(j, n_nodes, n_communities);
            if r.gen_bool(if same { p_in } else { p_out }) {
                edges.push((i, j, 1.0));
            }
        }
    }
    let noise = Normal::new(0.0, SBM_NOISE_STD).expect("valid std");
    let mut x = M::zeros(n_nodes, feature_dim);
    for i in 0..n_nodes {
        for v in x.row_mut(i) {
            *v = noise.sample(r);
        }
        x[(i, community_of(i, n_nodes, n_communities))] += 1.0;
    }
    Graph::from_edges(n_nodes, &edges, x)
}

/// Stochastic block model with contiguous balanced communities. Features are
/// one-hot community ids padded to `feature_dim` plus Gaussian noise.
pub fn generate_sbm(
    n_nodes: usize,
    n_communities: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    seed: u64,
) -> Result<Graph<f64>> {
    sbm_with_rng(
        n_nodes,
        n_communities,
        p_in,
        p_out,
        feature_dim,
        &mut rng::stream(seed, "sbm", 0, 0),
    )
}

/// Block-model parameters of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmClass {
    pub n_communities: usize,
    pub p_in: f64,
    pub p_out: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmDatasetConfig {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub feature_dim: usize,
    /// One entry per class; instance `g` belongs to class `g mod classes.len()`.
    /// The default classes share the expected degree and differ only in how
    /// strongly edges stay inside communities.
    pub classes: Vec<SbmClass>,
    pub seed: u64,
}

impl Default for SbmDatasetConfig {
    fn default() -> Self {
        Self {
            n_graphs: 200,
            n_nodes: 20,
            feature_dim: 8,
            classes: vec![
                SbmClass {
                    n_communities: 2,
                    p_in: 0.45,
                    p_out: 0.1,
                },
                SbmClass {
                    n_communities: 2,
                    p_in: 0.35,
                    p_out: 0.19,
                },
            ],
            seed: 0,
        }
    }
}

/// Labeled block-model graphs, one independent stream per graph.
pub fn generate_sbm_dataset(config: &SbmDatasetConfig) -> Result<LabeledDataset> {
    if config.classes.is_empty() {
        return Err(Error::Config("at least one class is required".into()));
    }
    let mut instances = Vec::with_capacity(config.n_graphs);
    let mut labels = Vec::with_capacity(config.n_graphs);
    for g in 0..config.n_graphs {
        let label = g % config.classes.len();
        let c = &config.classes[label];
        let mut r = rng::stream(config.seed, "sbm", g as u64, 0);
        instances.push(Structure::Graph(sbm_with_rng(
            config.n_nodes,
            c.n_communities,
            c.p_in,
            c.p_out,
            config.feature_dim,
            &mut r,
        )?));
        labels.push(label);
    }
    let names = (0..config.n_graphs).map(|g| format!("sbm-{g}")).collect();
    LabeledDataset::new(instances, Some(labels), names)
}

/// How a correlation matrix becomes an edge set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectomeRule {
    /// Keep `|C_ij| ≥ θ`.
    Threshold(f64),
    /// Keep each row's `k` strongest entries, symmetrized by union.
    TopK(usize),
}

const CONNECTOME_SYMMETRY_TOL: f64 = 1e-9;

fn check_square_symmetric(c: &M) -> Result<()> {
    let n = c.rows();
    if c.cols() != n {
        return Err(Error::Shape(format!(
            "connectivity matrix is {}x{}",
            n,
            c.cols()
        )));
    }
    if !c.is_finite() {
        return Err(Error::NonFinite("connectivity matrix".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if (c[(i, j)] - c[(j, i)]).abs() > CONNECTOME_SYMMETRY_TOL {
                return Err(Error::Structure(format!(
                    "connectivity matrix asymmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn strength(c: &M, i: usize, j: usize) -> f64 {
    (c[(i, j)].abs() + c[(j, i)].abs()) / 2.0
}

fn zero_diagonal(c: &M) -> M {
    let mut x = c.clone();
    for i in 0..c.rows() {
        x[(i, i)] = 0.0;
    }
    x
}

/// Strongest `k` off-diagonal partners of `i`, ties broken by index.
fn strongest(c: &M, i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..c.rows()).filter(|&j| j != i).collect();
    others.sort_by(|&a, &b| {
        strength(c, i, b)
            .total_cmp(&strength(c, i, a))
            .then(a.cmp(&b))
    });
    others.truncate(k);
    others
}

/// Weighted graph from a symmetric connectivity matrix. Node features are the
/// rows of `C` with the diagonal zeroed.
pub fn connectome_from_matrix(c: &M, rule: ConnectomeRule) -> Result<Graph<f64>> {
    check_square_symmetric(c)?;
    let n = c.rows();
    let mut keep = vec![vec![false; n]; n];
    match rule {
        ConnectomeRule::Threshold(t) => {
            if t.is_nan() || t < 0.0 {
                return Err(Error::Config(format!(
                    "threshold must be nonnegative, got {t}"
                )));
            }
            for (i, row) in keep.iter_mut().enumerate() {
                for (j, k) in row.iter_mut().enumerate() {
                    *k = i != j && strength(c, i, j) >= t;
                }
            }
        }
        ConnectomeRule::TopK(k) =>
        {
            #[allow(clippy::needless_range_loop)]
            for i in 0..n {
                for j in strongest(c, i, k) {
                    keep[i][j] = true;
                    keep[j][i] = true;
                }
            }
        }
    }
    let mut edges = Vec::new();
    for (i, row) in keep.iter().enumerate() {
        for (j, _) in row.iter().enumerate().skip(i + 1).filter(|(_, &k)| k) {
            if strength(c, i, j) > 0.0 {
                edges.push((i, j, strength(c, i, j)));
            }
        }
    }
    Graph::from_edges(n, &edges, zero_diagonal(c))
}

/// One hyperedge per node: the node and its `k` strongest partners.
pub fn hypergraph_from_knn(c: &M, k: usize) -> Result<Hypergraph<f64>> {
    check_square_symmetric(c)?;
    let n = c.rows();
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "k must satisfy 1 <= k < {n}, got {k}"
        )));
    }
    let hyperedges: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut e = strongest(c, i, k);
            e.push(i);
            e.sort_unstable();
            e
        })
        .collect();
    Hypergraph::from_hyperedges(n, &hyperedges, None, zero_diagonal(c))
}

/// Comma-separated rows with 17 significant digits.
pub fn matrix_to_csv(m: &M) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

/// Parses matrix CSV. A first line starting with `#` is a header.
pub fn parse_matrix_csv(text: &str) -> Result<M> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut blank_at = None;
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let trimmed = line.trim();
        if k == 0 && trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            blank_at.get_or_insert(line_no);
            continue;
        }
        if let Some(b) = blank_at {
            return Err(Error::Parse {
                line: b,
                msg: "blank line inside matrix".into(),
            });
        }
        let row = trimmed
            .split(',')
            .enumerate()
            .map(|(c, f)| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("column {}: {e} ({:?})", c + 1, f.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {} values, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            msg: "no matrix rows".into(),
        });
    }
    M::from_rows(&rows)
}

pub fn save_matrix_csv(path: &Path, m: &M) -> Result<()> {
    fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

pub fn load_matrix_csv(path: &Path) -> Result<M> {
    parse_matrix_csv(&fs::read_to_string(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Graph,
    Hypergraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub name: String,
    pub kind: InstanceKind,
    pub n: usize,
    /// Graph edges `[i, j]` with `i < j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    /// Hyperedge member lists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incidence: Option<Vec<Vec<usize>>>,
    /// Edge or hyperedge weights, aligned with `edges` / `incidence`.
    pub weights: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub format_version: u32,
    pub instances: Vec<InstanceRecord>,
    #[serde(default)]
    pub labels: Option<Vec<usize>>,
}

impl InstanceRecord {
    pub fn from_structure(name: &str, s: &Structure<f64>) -> Self {
        let features = s.features().to_rows();
        match s {
            Structure::Graph(g) => {
                let edges = g.edges();
                Self {
                    name: name.to_string(),
                    kind: InstanceKind::Graph,
                    n: g.node_count(),
                    weights: edges.iter().map(|e| e.2).collect(),
                    edges: Some(edges.iter().map(|e| [e.0, e.1]).collect()),
                    incidence: None,
                    features,
                }
            }
            Structure::Hypergraph(h) => Self {
                name: name.to_string(),
                kind: InstanceKind::Hypergraph,
                n: h.node_count(),
                edges: None,
                incidence: Some(h.hyperedges().to_vec()),
                weights: h.hyperedge_weights().to_vec(),
                features,
            },
        }
    }

    pub fn to_structure(&self) -> Result<Structure<f64>> {
        let ctx = |e: Error| Error::Data(format!("instance {:?}: {e}", self.name));
        if self.features.len() != self.n {
            return Err(ctx(Error::Shape(format!(
                "{} feature rows for n = {}",
                self.features.len(),
                self.n
            ))));
        }
        let x = if self.n == 0 {
            M::zeros(0, 0)
        } else {
            M::from_rows(&self.features).map_err(ctx)?
        };
        match self.kind {
            InstanceKind::Graph => {
                let edges = self
                    .edges
                    .as_ref()
                    .ok_or_else(|| ctx(Error::Data("graph without edges".into())))?;
                if self.incidence.is_some() {
                    return Err(ctx(Error::Data("graph with incidence".into())));
                }
                if edges.len() != self.weights.len() {
                    return Err(ctx(Error::Data("edge and weight counts differ".into())));
                }
                let triples: Vec<(usize, usize, f64)> = edges
                    .iter()
                    .zip(&self.weights)
                    .map(|(e, &w)| (e[0], e[1], w))
                    .collect();
                Ok(Structure::Graph(
                    Graph::from_edges(self.n, &triples, x).map_err(ctx)?,
                ))
            }
            InstanceKind::Hypergraph => {
                let inc = self
                    .incidence
                    .as_ref()
                    .ok_or_else(|| ctx(Error::Data("hypergraph without incidence".into())))?;
                if self.edges.is_some() {
                    return Err(ctx(Error::Data("hypergraph with edges".into())));
                }
                if inc.len() != self.weights.len() {
                    return Err(ctx(Error::Data(
                        "hyperedge and weight counts differ".into(),
                    )));
                }
                Ok(Structure::Hypergraph(
                    Hypergraph::from_hyperedges(self.n, inc, Some(self.weights.clone()), x)
                        .map_err(ctx)?,
                ))
            }
        }
    }
}

fn json_parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        msg: format!("column {}: {e}", e.column()),
    }
}

pub fn dataset_to_json(d: &LabeledDataset) -> Result<String> {
    let file = DatasetFile {
        format_version: DATASET_FORMAT_VERSION,
        instances: d
            .instances
            .iter()
            .zip(&d.names)
            .map(|(s, n)| InstanceRecord::from_structure(n, s))
            .collect(),
        labels: d.labels.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn dataset_from_json(text: &str) -> Result<LabeledDataset> {
    let file: DatasetFile = serde_json::from_str(text).map_err(json_parse_error)?;
    if file.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset format_version {}",
            file.format_version
        )));
    }
    let instances = file
        .instances
        .iter()
        .map(InstanceRecord::to_structure)
        .collect::<Result<Vec<_>>>()?;
    let names = file.instances.into_iter().map(|r| r.name).collect();
    LabeledDataset::new(instances, file.labels, names)
}

pub fn save_dataset(path: &Path, d: &LabeledDataset) -> Result<()> {
    fs::write(path, dataset_to_json(d)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    dataset_from_json(&fs::read_to_string(path)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoTopology {
    #[default]
    Clique,
    Path,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub topology: DemoTopology,
    pub community_size: usize,
    /// Kernel settings; `kind` is overridden for each of the three kernels.
    pub diffusion: DiffusionConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            topology: DemoTopology::Clique,
            community_size: 4,
            diffusion: DiffusionConfig::default(),
        }
    }
}

/// Inter-block kernel mass before and after bridging, for one kernel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemoStage {
    pub kind: KernelKind,
    /// Largest inter-community entry with disconnected blocks.
    pub intra_inter_max: f64,
    /// Largest and smallest inter-community entries after bridging.
    pub bridged_inter_max: f64,
    pub bridged_inter_min: f64,
    pub files: Vec<PathBuf>,
}

impl DemoStage {
    pub fn passed(&self) -> bool {
        self.intra_inter_max == 0.0 && self.bridged_inter_max > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemoReport {
    pub stages: Vec<DemoStage>,
}

impl DemoReport {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(DemoStage::passed)
    }

    pub fn stage(&self, kind: KernelKind) -> Option<&DemoStage> {
        self.stages.iter().find(|s| s.kind == kind)
    }
}

/// The two-community graphs of the demo: disconnected, and bridged by one
/// edge between the last node of the first block and the first of the second.
pub fn demo_graphs(config: &DemoConfig) -> Result<(Graph<f64>, Graph<f64>)> {
    let c = config.community_size;
    if c == 0 {
        return Err(Error::Config("community_size must be positive".into()));
    }
    let n = 2 * c;
    let mut edges = Vec::new();
    for block in 0..2 {
        let o = block * c;
        match config.topology {
            DemoTopology::Clique => {
                for i in 0..c {
                    for j in i + 1..c {
                        edges.push((o + i, o + j, 1.0));
                    }
                }
            }
            DemoTopology::Path => edges.extend((1..c).map(|i| (o + i - 1, o + i, 1.0))),
        }
    }
    let split = Graph::from_edges(n, &edges, M::identity(n))?;
    edges.push((c - 1, c, 1.0));
    let bridged = Graph::from_edges(n, &edges, M::identity(n))?;
    Ok((split, bridged))
}

fn inter_block(k: &CsrMatrix<f64>, c: usize) -> (f64, f64) {
    let n = k.n_rows();
    let (mut max, mut min) = (0.0f64, f64::INFINITY);
    let dense = k.to_dense();
    for i in 0..n {
        for j in 0..n {
            if (i < c) != (j < c) {
                max = max.max(dense[(i, j)]);
                min = min.min(dense[(i, j)]);
            }
        }
    }
    (max, min)
}

/// Runs the demo for all three kernels. With `out_dir` set, writes
/// `{kind}_adjacency.csv`, `{kind}_intra.csv` and `{kind}_cross.csv`.
pub fn community_diffusion_demo(config: &DemoConfig, out_dir: Option<&Path>) -> Result<DemoReport> {
    let (split, bridged) = demo_graphs(config)?;
    let c = config.community_size;
    let mut stages = Vec::new();
    for kind in KernelKind::ALL {
        let dc = DiffusionConfig {
            kind,
            ..config.diffusion.clone()
        };
        let k_split = DiffusionKernel::build(&Structure::Graph(split.clone()), &dc)?;
        let k_bridged = DiffusionKernel::build(&Structure::Graph(bridged.clone()), &dc)?;
        let (intra_inter_max, _) = inter_block(&k_split.matrix, c);
        let (bridged_inter_max, bridged_inter_min) = inter_block(&k_bridged.matrix, c);
        let mut files = Vec::new();
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir)?;
            for (stage, m) in [
                ("adjacency", split.adjacency().to_dense()),
                ("intra", k_split.matrix.to_dense()),
                ("cross", k_bridged.matrix.to_dense()),
            ] {
                let p = dir.join(format!("{}_{stage}.csv", kind.name()));
                save_matrix_csv(&p, &m)?;
                files.push(p);
            }
        }
        stages.push(DemoStage {
            kind,
            intra_inter_max,
            bridged_inter_max,
            bridged_inter_min,
            files,
        });
    }
    Ok(DemoReport { stages })
}
