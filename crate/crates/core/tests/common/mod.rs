#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use diffgraph::dense::Matrix;
use diffgraph::diffusion::{DiffusionConfig, DiffusionKernel, KernelKind};
use diffgraph::graph::{Graph, Hypergraph, Structure};

pub type M = Matrix<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_features(r: &mut ChaCha8Rng, n: usize, d: usize) -> M {
    M::from_vec(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_graph(r: &mut ChaCha8Rng, n: usize, p: f64, d: usize) -> Graph<f64> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.gen_bool(p) {
                edges.push((i, j, r.gen_range(0.1..2.0)));
            }
        }
    }
    Graph::from_edges(n, &edges, random_features(r, n, d)).unwrap()
}

pub fn random_hypergraph(r: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> Hypergraph<f64> {
    let mut edges = Vec::new();
    for _ in 0..m {
        let size = r.gen_range(1..=n.min(5));
        let mut e: Vec<usize> = Vec::new();
        while e.len() < size {
            let v = r.gen_range(0..n);
            if !e.contains(&v) {
                e.push(v);
            }
        }
        edges.push(e);
    }
    let w = (0..m).map(|_| r.gen_range(0.2..3.0)).collect();
    Hypergraph::from_hyperedges(n, &edges, Some(w), random_features(r, n, d)).unwrap()
}

/// Mix of graphs and hypergraphs with `n` in `1..=max_n`.
pub fn random_structure(r: &mut ChaCha8Rng, max_n: usize, d: usize) -> Structure<f64> {
    let n = r.gen_range(1..=max_n);
    if r.gen_bool(0.5) {
        let p = r.gen_range(0.1..0.8);
        Structure::Graph(random_graph(r, n, p, d))
    } else {
        let m = r.gen_range(1..=n + 2);
        Structure::Hypergraph(random_hypergraph(r, n, m, d))
    }
}

pub fn random_permutation(r: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(r);
    p
}

pub fn to_na(m: &M) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Dense transition matrix computed from the raw structure.
pub fn oracle_transition(s: &Structure<f64>) -> DMatrix<f64> {
    match s {
        Structure::Graph(g) => {
            let n = g.node_count();
            let a = to_na(&g.adjacency().to_dense()) + DMatrix::identity(n, n);
            let mut p = a.clone();
            for i in 0..n {
                let d: f64 = a.row(i).sum();
                p.row_mut(i).scale_mut(1.0 / d);
            }
            p
        }
        Structure::Hypergraph(h) => {
            let n = h.node_count();
            let (b, dv) = hyper_blocks(h);
            let mut p = b;
            for i in 0..n {
                if dv[i] > 0.0 {
                    p.row_mut(i).scale_mut(1.0 / dv[i]);
                } else {
                    p[(i, i)] = 1.0;
                }
            }
            p
        }
    }
}

/// `I W D_e^{-1} Iᵀ` and the weighted node degrees.
fn hyper_blocks(h: &Hypergraph<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = h.node_count();
    let m = h.hyperedge_count();
    let inc = to_na(&h.incidence().to_dense());
    let w = h.hyperedge_weights();
    let mut middle = DMatrix::zeros(m, m);
    let mut dv = vec![0.0; n];
    for e in 0..m {
        let de: f64 = inc.column(e).sum();
        middle[(e, e)] = w[e] / de;
        for i in 0..n {
            dv[i] += inc[(i, e)] * w[e];
        }
    }
    (&inc * middle * inc.transpose(), dv)
}

/// Symmetric normalized Laplacian computed from the raw structure.
pub fn oracle_laplacian(s: &Structure<f64>) -> DMatrix<f64> {
    let n = s.node_count();
    let (op, d) = match s {
        Structure::Graph(g) => {
            let a = to_na(&g.adjacency().to_dense()) + DMatrix::identity(n, n);
            let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
            (a, d)
        }
        Structure::Hypergraph(h) => hyper_blocks(h),
    };
    let mut theta = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if d[i] > 0.0 && d[j] > 0.0 {
                theta[(i, j)] = op[(i, j)] / (d[i] * d[j]).sqrt();
            }
        }
        if d[i] == 0.0 {
            theta[(i, i)] = 1.0;
        }
    }
    DMatrix::identity(n, n) - theta
}

/// `Σ_k β_k Pᵏ` by explicit powers.
pub fn oracle_power_series(p: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let n = p.nrows();
    let mut power = DMatrix::identity(n, n);
    let mut acc = DMatrix::zeros(n, n);
    for (k, &b) in weights.iter().enumerate() {
        if k > 0 {
            power = &power * p;
        }
        acc += &power * b;
    }
    acc
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: `(values, vectors)`
/// with eigenvectors in columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = (a + a.transpose()) * 0.5;
    let mut v = DMatrix::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

pub fn oracle_heat(l: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let (values, vectors) = jacobi_eigen(l);
    let rebuilt =
        &vectors * DMatrix::from_diagonal(&DVector::from_vec(values.clone())) * vectors.transpose();
    assert!(
        (rebuilt - l).abs().max() < 1e-12,
        "eigendecomposition does not reproduce L"
    );
    let e = DMatrix::from_diagonal(&DVector::from_vec(
        values.iter().map(|v| (-t * v).exp()).collect(),
    ));
    &vectors * e * vectors.transpose()
}

pub fn oracle_kernel(s: &Structure<f64>, c: &DiffusionConfig) -> DMatrix<f64> {
    match c.kind {
        KernelKind::RandomWalk => {
            let w: Vec<f64> = (0..=c.order).map(|k| c.lambda.powi(k as i32)).collect();
            oracle_power_series(&oracle_transition(s), &w)
        }
        KernelKind::Ppr => {
            let w: Vec<f64> = (0..=c.order)
                .map(|k| c.alpha * (1.0 - c.alpha).powi(k as i32))
                .collect();
            oracle_power_series(&oracle_transition(s), &w)
        }
        KernelKind::Heat => oracle_heat(&oracle_laplacian(s), c.time),
    }
}

pub fn max_abs_diff(a: &M, b: &DMatrix<f64>) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.nrows(), b.ncols()));
    let mut m = 0.0f64;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

/// Relative error used by the gradient checks; differences below the floor
/// are measured absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn fd_relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

use diffgraph::data::{generate_sbm_dataset, SbmDatasetConfig};
use diffgraph::encoder::{init_encoder, EncoderConfig};
use diffgraph::gcl::{self, GclConfig, InstancePlan};
use diffgraph::gmae::{self, GmaeConfig, InstanceCache};
use diffgraph::params::{GradientBundle, ParameterStore};
use diffgraph::readout::{ReadoutConfig, ReadoutKind};

/// Central-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Worst relative error and number of coordinates checked.
pub struct FdReport {
    pub max_rel: f64,
    pub coords: usize,
    /// Largest analytic gradient magnitude seen, to rule out a vacuous pass.
    pub max_grad: f64,
}

/// Central differences with step `h` on `n` coordinates drawn across every
/// tensor (round-robin so each tensor is covered).
pub fn fd_check(
    params: &ParameterStore,
    grads: &GradientBundle,
    loss: impl Fn(&ParameterStore) -> f64,
    n: usize,
    h: f64,
    seed: u64,
) -> FdReport {
    let mut r = rng(seed);
    let names: Vec<String> = params.names().cloned().collect();
    let mut max_rel = 0.0f64;
    let mut max_grad = 0.0f64;
    for k in 0..n {
        let name = &names[k % names.len()];
        let size = params.get(name).unwrap().as_slice().len();
        let idx = r.gen_range(0..size);
        let mut plus = params.clone();
        plus.get_mut(name).unwrap().as_mut_slice()[idx] += h;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().as_mut_slice()[idx] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let analytic = grads.grads[name].as_slice()[idx];
        let rel = fd_relative_error(analytic, numeric);
        assert!(rel.is_finite());
        max_rel = max_rel.max(rel);
        max_grad = max_grad.max(analytic.abs());
    }
    FdReport {
        max_rel,
        coords: n,
        max_grad,
    }
}

pub fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden_dim: 12,
        out_dim: 8,
        ..EncoderConfig::default()
    }
}

pub fn hypergraph_dataset(seed: u64, count: usize) -> Vec<Structure<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let n = r.gen_range(6..=10);
            Structure::Hypergraph(random_hypergraph(&mut r, n, n / 2 + 1, 4))
        })
        .collect()
}

pub fn sbm_instances(n_graphs: usize, seed: u64) -> Vec<Structure<f64>> {
    generate_sbm_dataset(&SbmDatasetConfig {
        n_graphs,
        n_nodes: 10,
        feature_dim: 4,
        seed,
        ..SbmDatasetConfig::default()
    })
    .unwrap()
    .instances
}

/// GCL loss gradient check on fixed views of `data`.
pub fn gcl_fd(data: &[Structure<f64>], readout: ReadoutKind, coords: usize, seed: u64) -> FdReport {
    let readout = match readout {
        ReadoutKind::Diffusion => ReadoutConfig::default(),
        k => ReadoutConfig::simple(k),
    };
    let config = GclConfig {
        readout,
        encoder: small_encoder(),
        seed,
        ..GclConfig::default()
    };
    let encoder = gcl::encoder_for(data, &config.encoder).unwrap();
    let params = init_encoder(&encoder, seed).unwrap();
    let pairs: Vec<_> = data
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let plan = InstancePlan::new(s, &config).unwrap();
            gcl::make_views(s, &plan, &config, 0, i).unwrap()
        })
        .collect();
    let (grads, _) = gcl::batch_loss(&params, &encoder, &pairs, &config).unwrap();
    fd_check(
        &params,
        &grads,
        |p| {
            gcl::batch_loss(p, &encoder, &pairs, &config)
                .unwrap()
                .1
                .loss
        },
        coords,
        FD_STEP,
        seed,
    )
}

/// GMAE loss gradient check on fixed masks and targets of `data`.
pub fn gmae_fd(data: &[Structure<f64>], coords: usize, seed: u64) -> FdReport {
    let config = GmaeConfig {
        encoder: small_encoder(),
        mask_ratio: 0.4,
        seed,
        ..GmaeConfig::default()
    };
    let encoder = gcl::encoder_for(data, &config.encoder).unwrap();
    let mut params = init_encoder(&encoder, seed).unwrap();
    // a nonzero mask token and biases so their gradients are exercised away from 0
    let mut r = rng(seed ^ 0xabc);
    for name in params.names().cloned().collect::<Vec<_>>() {
        for v in params.get_mut(&name).unwrap().as_mut_slice() {
            *v += r.gen_range(-0.1..0.1);
        }
    }
    let items: Vec<_> = data
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cache = InstanceCache::new(s, &config.diffusion).unwrap();
            gmae::prepare_item(s, &cache, &config, 0, i).unwrap()
        })
        .collect();
    let eta = config.structure_loss_weight;
    let (grads, _) = gmae::batch_loss(&params, &encoder, &items, eta).unwrap();
    fd_check(
        &params,
        &grads,
        |p| gmae::batch_loss(p, &encoder, &items, eta).unwrap().1.total,
        coords,
        FD_STEP,
        seed,
    )
}

use diffgraph::encoder::encode;
use diffgraph::graph::permute_rows;
use diffgraph::readout::graph_readout;

fn max_vec_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `‖K(πS) - P K(S) Pᵀ‖_max`.
pub fn kernel_perm_error(s: &Structure<f64>, c: &DiffusionConfig, perm: &[usize]) -> f64 {
    let k = DiffusionKernel::build(s, c).unwrap().matrix;
    let kp = DiffusionKernel::build(&s.permute(perm).unwrap(), c)
        .unwrap()
        .matrix;
    k.permute_symmetric(perm)
        .to_dense()
        .max_abs_diff(&kp.to_dense())
}

/// `‖f(πS) - P f(S)‖_max` for the encoder with freshly initialized weights.
pub fn encoder_perm_error(s: &Structure<f64>, perm: &[usize], seed: u64) -> f64 {
    let config = gcl::encoder_for(std::slice::from_ref(s), &small_encoder()).unwrap();
    let params = init_encoder(&config, seed).unwrap();
    let sp = s.permute(perm).unwrap();
    let z = encode(&params, &config, s.features(), s).unwrap();
    let zp = encode(&params, &config, sp.features(), &sp).unwrap();
    permute_rows(&z, perm).max_abs_diff(&zp)
}

/// Worst readout change under permutation over all four readout kinds.
pub fn readout_perm_error(s: &Structure<f64>, perm: &[usize], seed: u64) -> f64 {
    let mut r = rng(seed);
    let z = random_features(&mut r, s.node_count(), 5);
    let zp = permute_rows(&z, perm);
    let sp = s.permute(perm).unwrap();
    let att: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut worst = 0.0f64;
    for kind in [
        ReadoutKind::Mean,
        ReadoutKind::Max,
        ReadoutKind::Attention,
        ReadoutKind::Diffusion,
    ] {
        let cfg = match kind {
            ReadoutKind::Diffusion => ReadoutConfig::default(),
            k => ReadoutConfig::simple(k),
        };
        let a = graph_readout(&z, &cfg, s, Some(&att)).unwrap();
        let b = graph_readout(&zp, &cfg, &sp, Some(&att)).unwrap();
        worst = worst.max(max_vec_diff(&a, &b));
    }
    worst
}

/// Permutes one GMAE item: the mask, edge pairs and features move with the
/// nodes; hyperedge order is kept.
pub fn permute_item(
    item: &gmae::GmaeBatchItem,
    permuted: &Structure<f64>,
    config: &GmaeConfig,
    perm: &[usize],
) -> gmae::GmaeBatchItem {
    let cache = InstanceCache::new(permuted, &config.diffusion).unwrap();
    let mut out = gmae::prepare_item(permuted, &cache, config, 0, 0).unwrap();
    let mut masked: Vec<usize> = item
        .selection
        .masked_nodes
        .iter()
        .map(|&i| perm[i])
        .collect();
    masked.sort_unstable();
    out.selection.masked_nodes = masked;
    out.targets = item.targets.clone().map(|t| match t {
        gmae::StructureTargets::Edges { pairs, targets } => gmae::StructureTargets::Edges {
            pairs: pairs.iter().map(|&(i, j)| (perm[i], perm[j])).collect(),
            targets,
        },
        h => h,
    });
    out
}

/// GMAE loss change when the whole instance, mask and targets are permuted.
pub fn gmae_perm_error(s: &Structure<f64>, perm: &[usize], seed: u64) -> f64 {
    let config = GmaeConfig {
        encoder: small_encoder(),
        mask_ratio: 0.5,
        seed,
        ..GmaeConfig::default()
    };
    let encoder = gcl::encoder_for(std::slice::from_ref(s), &config.encoder).unwrap();
    let params = init_encoder(&encoder, seed).unwrap();
    let cache = InstanceCache::new(s, &config.diffusion).unwrap();
    let item = gmae::prepare_item(s, &cache, &config, 0, 0).unwrap();
    let sp = s.permute(perm).unwrap();
    let item_p = permute_item(&item, &sp, &config, perm);
    let (_, a) = gmae::batch_loss(&params, &encoder, &[item], 1.0).unwrap();
    let (_, b) = gmae::batch_loss(&params, &encoder, &[item_p], 1.0).unwrap();
    (a.total - b.total).abs()
}

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && v[idx[end + 1]] == v[idx[k]] {
            end += 1;
        }
        for &i in &idx[k..=end] {
            out[i] = (k + end) as f64 / 2.0 + 1.0;
        }
        k = end + 1;
    }
    out
}

/// Pearson correlation of the rank vectors.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// Pair-counting AUC: P(score_pos > score_neg) + ½ P(tie).
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut total) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / total
}
