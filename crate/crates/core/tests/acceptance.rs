//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if an asserted criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use diffgraph::augment::{drop_probabilities, sample_node_mask, AugmentationMode};
use diffgraph::checkpoint::{Checkpoint, CheckpointConfig};
use diffgraph::data::{
    community_diffusion_demo, generate_sbm_dataset, DemoConfig, DemoTopology, LabeledDataset,
    SbmClass, SbmDatasetConfig,
};
use diffgraph::diffusion::{DiffusionConfig, DiffusionKernel};
use diffgraph::encoder::EncoderConfig;
use diffgraph::eval::{embed_dataset, linear_probe, probe_seeds, ProbeConfig};
use diffgraph::gcl::{train_gcl, GclConfig, GCL_TELEMETRY_HEADER};
use diffgraph::gmae::{train_gmae, GmaeConfig, GMAE_TELEMETRY_HEADER};
use diffgraph::graph::Structure;
use diffgraph::readout::{ReadoutConfig, ReadoutKind};
use rand::Rng;

const RW_PPR_TOL: f64 = 1e-10;
const HEAT_TOL: f64 = 1e-8;
const ROW_SUM_TOL: f64 = 1e-12;
const PPR_MASS_TOL: f64 = 1e-9;
const PERM_TOL: f64 = 1e-10;
const FD_TOL: f64 = 1e-4;
const FD_COORDS: usize = 120;
const DESCENT_RATIO: f64 = 0.5;
const PROBE_ACCURACY: f64 = 0.85;

/// Directional outcomes that are reported but do not fail the gate.
const REPORT_ONLY: &[&str] = &["9b"];

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.2}s", e.as_secs_f64()))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut r = rng(101);
    let (mut rw, mut ppr, mut heat) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let s = random_structure(&mut r, 16, 2);
        let order = r.gen_range(1..=8);
        let cases = [
            DiffusionConfig::random_walk(r.gen_range(0.05..0.95), order),
            DiffusionConfig::ppr(r.gen_range(0.05..0.95), order),
            DiffusionConfig::heat(r.gen_range(0.1..5.0), order),
        ];
        let errs: Vec<f64> = cases
            .iter()
            .map(|c| {
                max_abs_diff(
                    &DiffusionKernel::build(&s, c).unwrap().matrix.to_dense(),
                    &oracle_kernel(&s, c),
                )
            })
            .collect();
        rw = rw.max(errs[0]);
        ppr = ppr.max(errs[1]);
        heat = heat.max(errs[2]);
    }
    let (fast, elapsed) = within(t, Duration::from_secs(10));
    outcome(
        "1",
        rw <= RW_PPR_TOL && ppr <= RW_PPR_TOL && heat <= HEAT_TOL && fast,
        format!("kernel oracles: rw {rw:.1e}, ppr {ppr:.1e}, heat {heat:.1e}, {elapsed}"),
    )
}

fn criterion_2() -> Outcome {
    let mut r = rng(102);
    let (mut row, mut mass) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let s = random_structure(&mut r, 16, 1);
        row = s
            .transition()
            .row_sums()
            .iter()
            .map(|v| (v - 1.0).abs())
            .fold(row, f64::max);
        let alpha = r.gen_range(0.05..0.95);
        let order = r.gen_range(0..=10);
        let k = DiffusionKernel::build(&s, &DiffusionConfig::ppr(alpha, order)).unwrap();
        let want = 1.0 - (1.0 - alpha).powi(order as i32 + 1);
        mass = k
            .matrix
            .row_sums()
            .iter()
            .map(|v| (v - want).abs())
            .fold(mass, f64::max);
    }
    outcome(
        "2",
        row <= ROW_SUM_TOL && mass <= PPR_MASS_TOL,
        format!("stochasticity over 200 structures: row sums {row:.1e}, ppr mass {mass:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut r = rng(103);
    let structures: Vec<Structure<f64>> = (0..4)
        .map(|k| {
            let n = r.gen_range(8..=14);
            if k % 2 == 0 {
                Structure::Graph(random_graph(&mut r, n, 0.35, 3))
            } else {
                Structure::Hypergraph(random_hypergraph(&mut r, n, n / 2 + 2, 3))
            }
        })
        .collect();
    let configs = [
        DiffusionConfig::random_walk(0.6, 6),
        DiffusionConfig::ppr(0.15, 10),
        DiffusionConfig::heat(2.0, 12),
    ];
    let (mut kern, mut enc, mut read) = (0.0f64, 0.0f64, 0.0f64);
    for (k, s) in structures.iter().enumerate() {
        for p in 0..20 {
            let perm = random_permutation(&mut r, s.node_count());
            for c in &configs {
                kern = kern.max(kernel_perm_error(s, c, &perm));
            }
            enc = enc.max(encoder_perm_error(s, &perm, (k * 20 + p) as u64));
            read = read.max(readout_perm_error(s, &perm, (k * 20 + p) as u64));
        }
    }
    outcome(
        "3",
        kern <= PERM_TOL && enc <= PERM_TOL && read <= PERM_TOL,
        format!("permutations: kernel {kern:.1e}, encoder {enc:.1e}, readout {read:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let graphs = sbm_instances(4, 104);
    let hypers = hypergraph_dataset(105, 4);
    let reports = [
        (
            "gcl graph",
            gcl_fd(&graphs, ReadoutKind::Diffusion, FD_COORDS, 1),
        ),
        (
            "gcl hypergraph",
            gcl_fd(&hypers, ReadoutKind::Diffusion, FD_COORDS, 2),
        ),
        ("gmae graph", gmae_fd(&graphs, FD_COORDS, 3)),
        ("gmae hypergraph", gmae_fd(&hypers, FD_COORDS, 4)),
    ];
    let pass = reports
        .iter()
        .all(|(_, r)| r.max_rel <= FD_TOL && r.coords >= 100 && r.max_grad > 0.0);
    let detail = reports
        .iter()
        .map(|(n, r)| format!("{n} {:.1e} on {}", r.max_rel, r.coords))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        "4",
        pass,
        format!("gradient gate (h={FD_STEP:e}): {detail}"),
    )
}

fn criterion_5() -> Outcome {
    let mut r = rng(106);
    let mut bad = 0;
    let mut checked = 0;
    for n in 1..=20usize {
        for tenths in 0..=10usize {
            for mode in [AugmentationMode::DiffusionGuided, AugmentationMode::Uniform] {
                let scores = random_features(&mut r, n, 1).into_vec();
                let sel = sample_node_mask(&scores, tenths as f64 / 10.0, mode, &mut r).unwrap();
                checked += 1;
                if sel.len() != (tenths * n).div_ceil(10) {
                    bad += 1;
                }
            }
        }
    }
    outcome(
        "5",
        bad == 0,
        format!("mask size: {bad} of {checked} (rho, N, mode) cases off"),
    )
}

fn criterion_6() -> Outcome {
    let mut r = rng(107);
    let mut worst = -1.0f64;
    for _ in 0..500 {
        let n = r.gen_range(2..=60);
        let mut s: Vec<f64> = (0..n)
            .map(|k| k as f64 * r.gen_range(0.01..10.0) - 7.0)
            .collect();
        use rand::seq::SliceRandom;
        s.shuffle(&mut r);
        let p = drop_probabilities(&s, 0.05, 0.4);
        worst = worst.max(spearman(&s, &p));
    }
    outcome(
        "6",
        (worst + 1.0).abs() <= 1e-12,
        format!("drop monotonicity: max Spearman {worst}"),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    for topology in [DemoTopology::Clique, DemoTopology::Path] {
        let report = community_diffusion_demo(
            &DemoConfig {
                topology,
                ..DemoConfig::default()
            },
            None,
        )
        .unwrap();
        pass &= report.passed() && report.stages.len() == 3;
    }
    let (fast, elapsed) = within(t, Duration::from_secs(1));
    outcome(
        "7",
        pass && fast,
        format!("community demo, three kernels, two topologies: {elapsed}"),
    )
}

fn descent_data() -> LabeledDataset {
    generate_sbm_dataset(&SbmDatasetConfig {
        n_graphs: 32,
        classes: vec![SbmClass {
            n_communities: 2,
            p_in: 0.8,
            p_out: 0.05,
        }],
        ..SbmDatasetConfig::default()
    })
    .unwrap()
}

fn gcl_benchmark_config(seed: u64, augmentation: AugmentationMode) -> GclConfig {
    GclConfig {
        batch_size: 4,
        lr: 1e-3,
        epochs: 50,
        seed,
        augmentation,
        ..GclConfig::default()
    }
}

fn gmae_benchmark_config(seed: u64, augmentation: AugmentationMode) -> GmaeConfig {
    GmaeConfig {
        epochs: 50,
        seed,
        augmentation,
        ..GmaeConfig::default()
    }
}

fn criterion_8() -> Outcome {
    let data = descent_data();
    let mut pass = true;
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let t = Instant::now();
        let g = train_gcl(
            &data.instances,
            &gcl_benchmark_config(seed, AugmentationMode::DiffusionGuided),
            1,
        )
        .unwrap();
        let (fast_g, _) = within(t, Duration::from_secs(120));
        let t = Instant::now();
        let m = train_gmae(
            &data.instances,
            &gmae_benchmark_config(seed, AugmentationMode::DiffusionGuided),
            1,
        )
        .unwrap();
        let (fast_m, _) = within(t, Duration::from_secs(120));
        let rg = g.telemetry.last().unwrap().loss / g.telemetry[0].loss;
        let rm = m.telemetry.last().unwrap().total_loss / m.telemetry[0].total_loss;
        pass &= rg < DESCENT_RATIO && rm < DESCENT_RATIO && fast_g && fast_m;
        ratios.push(format!("{rg:.3}/{rm:.3}"));
    }
    outcome(
        "8",
        pass,
        format!(
            "descent (gcl/gmae final over first epoch): {}",
            ratios.join(" ")
        ),
    )
}

fn checkpoint(
    pipeline: &str,
    encoder: &EncoderConfig,
    diffusion: &DiffusionConfig,
    out: &diffgraph::params::ParameterStore,
    seed: u64,
    epochs: usize,
) -> Checkpoint {
    let config = CheckpointConfig {
        pipeline: pipeline.into(),
        encoder: encoder.clone(),
        input_diffusion: Some(diffusion.clone()),
        settings: serde_json::Value::Null,
    };
    Checkpoint::capture(config, out, seed, epochs)
}

fn probe_accuracy(
    ck: &Checkpoint,
    data: &LabeledDataset,
    readout: &ReadoutConfig,
    seed: u64,
) -> f64 {
    let emb = embed_dataset(ck, &data.instances, readout, 1).unwrap();
    linear_probe(
        &emb,
        data.labels.as_ref().unwrap(),
        &ProbeConfig::default(),
        seed,
    )
    .unwrap()
    .accuracy
}

fn gcl_accuracy(data: &LabeledDataset, seed: u64, mode: AugmentationMode) -> f64 {
    let cfg = gcl_benchmark_config(seed, mode);
    let out = train_gcl(&data.instances, &cfg, 1).unwrap();
    let ck = checkpoint(
        "gcl",
        &out.encoder,
        &cfg.diffusion,
        &out.params,
        seed,
        cfg.epochs,
    );
    probe_accuracy(&ck, data, &cfg.readout, seed)
}

fn gmae_accuracy(data: &LabeledDataset, seed: u64, mode: AugmentationMode) -> f64 {
    let cfg = gmae_benchmark_config(seed, mode);
    let out = train_gmae(&data.instances, &cfg, 1).unwrap();
    let ck = checkpoint(
        "gmae",
        &out.encoder,
        &cfg.diffusion,
        &out.params,
        seed,
        cfg.epochs,
    );
    probe_accuracy(&ck, data, &ReadoutConfig::default(), seed)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn spread(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn criterion_9() -> (Outcome, Outcome) {
    let t = Instant::now();
    let data = generate_sbm_dataset(&SbmDatasetConfig::default()).unwrap();
    let (mut gcl_g, mut gcl_u, mut gmae_g, mut gmae_u) = (vec![], vec![], vec![], vec![]);
    for seed in 0..10 {
        gcl_g.push(gcl_accuracy(&data, seed, AugmentationMode::DiffusionGuided));
        gcl_u.push(gcl_accuracy(&data, seed, AugmentationMode::Uniform));
        gmae_g.push(gmae_accuracy(
            &data,
            seed,
            AugmentationMode::DiffusionGuided,
        ));
        gmae_u.push(gmae_accuracy(&data, seed, AugmentationMode::Uniform));
    }
    let (fast, elapsed) = within(t, Duration::from_secs(600));
    let a = mean(&gcl_g[..5]);
    let first = outcome(
        "9a",
        a >= PROBE_ACCURACY && fast,
        format!("diffusion-GCL probe accuracy over 5 seeds {a:.3} (need >= {PROBE_ACCURACY}), {elapsed}"),
    );
    let (gg, gu, mg, mu) = (mean(&gcl_g), mean(&gcl_u), mean(&gmae_g), mean(&gmae_u));
    let second = outcome(
        "9b",
        gg >= gu && mg >= mu && fast,
        format!(
            "guided vs random over 10 seeds: gcl drop {gg:.3} vs {gu:.3} (sd {:.3}/{:.3}), gmae mask {mg:.3} vs {mu:.3} (sd {:.3}/{:.3})",
            spread(&gcl_g),
            spread(&gcl_u),
            spread(&gmae_g),
            spread(&gmae_u)
        ),
    );
    (first, second)
}

/// Serialized checkpoint, telemetry and probe results of both pipelines.
fn pipeline_artifacts(workers: usize) -> Vec<String> {
    let data = generate_sbm_dataset(&SbmDatasetConfig {
        n_graphs: 16,
        n_nodes: 12,
        ..SbmDatasetConfig::default()
    })
    .unwrap();
    let hyper = LabeledDataset::unlabeled(hypergraph_dataset(108, 6));
    let labels = data.labels.clone().unwrap();
    let mut out = Vec::new();

    let cfg = GclConfig {
        epochs: 4,
        ..gcl_benchmark_config(7, AugmentationMode::DiffusionGuided)
    };
    let g = train_gcl(&data.instances, &cfg, workers).unwrap();
    let ck = checkpoint("gcl", &g.encoder, &cfg.diffusion, &g.params, 7, cfg.epochs);
    out.push(ck.to_json().unwrap());
    out.push(
        std::iter::once(GCL_TELEMETRY_HEADER.to_string())
            .chain(g.telemetry.iter().map(|r| r.csv_row()))
            .collect::<Vec<_>>()
            .join("\n"),
    );
    let emb = embed_dataset(&ck, &data.instances, &cfg.readout, workers).unwrap();
    out.push(
        serde_json::to_string(
            &probe_seeds(&emb, &labels, &ProbeConfig::default(), &[0, 1, 2]).unwrap(),
        )
        .unwrap(),
    );

    for set in [&data, &hyper] {
        let cfg = GmaeConfig {
            epochs: 4,
            ..gmae_benchmark_config(7, AugmentationMode::DiffusionGuided)
        };
        let m = train_gmae(&set.instances, &cfg, workers).unwrap();
        let ck = checkpoint("gmae", &m.encoder, &cfg.diffusion, &m.params, 7, cfg.epochs);
        out.push(ck.to_json().unwrap());
        out.push(
            std::iter::once(GMAE_TELEMETRY_HEADER.to_string())
                .chain(m.telemetry.iter().map(|r| r.csv_row()))
                .collect::<Vec<_>>()
                .join("\n"),
        );
    }
    out
}

fn criterion_10() -> Outcome {
    let a = pipeline_artifacts(1);
    let b = pipeline_artifacts(1);
    let c = pipeline_artifacts(3);
    outcome(
        "10",
        a == b && a == c,
        format!(
            "determinism: {} artifacts identical on rerun and with 3 workers",
            a.len()
        ),
    )
}

fn main() {
    let mut results = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
    ];
    let (a, b) = criterion_9();
    results.push(a);
    results.push(b);
    results.push(criterion_10());

    let mut failed = Vec::new();
    for r in &results {
        let tag = if r.pass { "PASS" } else { "FAIL" };
        let note = if REPORT_ONLY.contains(&r.id) {
            " [reported only]"
        } else {
            ""
        };
        println!("criterion {:<3} {tag}  {}{note}", r.id, r.detail);
        if !r.pass && !REPORT_ONLY.contains(&r.id) {
            failed.push(r.id);
        }
    }
    if !failed.is_empty() {
        eprintln!("acceptance failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
