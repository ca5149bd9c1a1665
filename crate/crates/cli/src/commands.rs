use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use laplora::checkpoint::Checkpoint;
use laplora::datasets::{generate, graph_hash, load_dataset, save_dataset, FeatureMode, GraphKind, SyntheticSpec};
use laplora::diagnostics::diagnose as diagnose_model;
use laplora::eigen::{partial_eigen, EigenOptions};
use laplora::graph::laplacian_with;
use laplora::{EigenBasis, Variant};

use crate::manifest::{absolute, DatasetInfo, DiagnosePlan, Invocation, Manifest};
use crate::{DiagnoseArgs, EigenArgs, GenArgs, KindArg};

pub fn eigen(args: &EigenArgs) -> Result<()> {
    let start = Instant::now();
    let data = load_dataset(&args.data)?;
    let laplacian = laplacian_with(&data, Default::default());
    let opts = EigenOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        seed: args.seed,
    };
    let basis = partial_eigen(&laplacian, args.k, &opts)?.with_graph_hash(graph_hash(&data));
    let residual = basis.residuals(&laplacian)?.into_iter().fold(0.0, f64::max);
    basis.save(&args.out)?;
    println!(
        "k={} max_residual={residual:.3e} elapsed={:.2}s -> {}",
        basis.k(),
        start.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<()> {
    let plan = DiagnosePlan {
        data: absolute(&args.data)?,
        eigen: absolute(&args.eigen)?,
        model: absolute(&args.model)?,
        energy_depth: args.depth,
        max_depth: args.max_depth,
        layer: args.layer.into(),
        results: args.results.as_deref().map(absolute).transpose()?,
    };
    run_diagnose(&plan, &args.out)
}

/// Seed-averaged `embed_variance` per depth for one variant of a sweep.
fn variance_by_depth(results: &Path, variant: Variant) -> Result<BTreeMap<usize, f64>> {
    let mut rdr = csv::Reader::from_path(results).with_context(|| format!("reading {}", results.display()))?;
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(0) != Some(variant.as_str()) {
            continue;
        }
        let depth: usize = rec.get(1).context("missing depth column")?.parse()?;
        let v: f64 = rec.get(6).context("missing embed_variance column")?.parse()?;
        let slot = acc.entry(depth).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
    }
    Ok(acc.into_iter().map(|(d, (s, n))| (d, s / n as f64)).collect())
}

pub fn run_diagnose(plan: &DiagnosePlan, out: &Path) -> Result<()> {
    let start = Instant::now();
    let data = load_dataset(&plan.data)?;
    let hash = graph_hash(&data);
    let basis = EigenBasis::load(&plan.eigen, hash)?;
    let ckpt = Checkpoint::load(&plan.model, hash)?;
    let mut report = diagnose_model(&basis, &ckpt.model, plan.layer, plan.energy_depth, plan.max_depth)?;
    if let Some(results) = &plan.results {
        report.per_depth_variance = variance_by_depth(results, ckpt.model.config.variant())?;
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let json = out.join("diagnostics.json");
    let csv = out.join("diagnostics.csv");
    fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(&csv, report.to_csv())?;

    let mut manifest = Manifest::new(Invocation::Diagnose(plan.clone()), DatasetInfo::of(&data));
    manifest.seeds = vec![ckpt.model.config.seed];
    manifest.outputs = vec![json, csv];
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(out)?;
    println!(
        "stability sup={:.6} stable={} ({} mode)",
        report.stability.sup,
        report.stability.stable,
        match report.stability.combine {
            laplora::filters::Combine::Sum => "sum",
            laplora::filters::Combine::Mean => "mean",
        }
    );
    Ok(())
}

pub fn gen(args: &GenArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let (Some(kind), Some(n)) = (args.kind, args.n) else {
                bail!("--kind and --n are required without --spec");
            };
            let kind = match kind {
                KindArg::Path => GraphKind::Path,
                KindArg::Cycle => GraphKind::Cycle,
                KindArg::Complete => GraphKind::Complete,
                KindArg::TwoCliques => GraphKind::TwoCliques,
                KindArg::Sbm => GraphKind::Sbm {
                    block_sizes: args.blocks.clone(),
                    p_in: args.p_in,
                    p_out: args.p_out,
                },
            };
            let features = match args.gaussian_dim {
                Some(dim) => FeatureMode::RandomGaussian { dim },
                None => FeatureMode::OneHotBlock,
            };
            SyntheticSpec::new(kind, n).with_seed(args.seed).with_features(features)
        }
    };
    run_gen(&spec, &args.out)
}

pub fn run_gen(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    let start = Instant::now();
    let data = generate(spec)?;
    save_dataset(&data, out)?;
    let mut manifest = Manifest::new(Invocation::Gen { spec: spec.clone() }, DatasetInfo::of(&data));
    manifest.seeds = vec![spec.seed];
    manifest.outputs = ["meta.json", "edges.csv", "features.csv", "labels.csv", "masks.csv"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(out)?;
    println!(
        "{}: {} nodes, {} edges, {} classes -> {}",
        data.name,
        data.n_nodes,
        data.edges.len(),
        data.n_classes,
        out.display()
    );
    Ok(())
}
