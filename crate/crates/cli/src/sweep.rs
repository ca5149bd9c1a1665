use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use laplora::checkpoint::Checkpoint;
use laplora::datasets::{graph_hash, load_dataset, row_normalize};
use laplora::diagnostics::format_real;
use laplora::model::{run_protocol, ProtocolOptions, ProtocolResult};
use laplora::{EigenBasis, GcnModel, ModelConfig, TrainConfig, Variant};

use crate::manifest::{absolute, DatasetInfo, Invocation, Manifest, SweepPlan};
use crate::SweepArgs;

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let mut variants = args.variants.clone();
    variants.sort();
    variants.dedup();
    if variants.contains(&Variant::Lora) && args.eigen.is_none() {
        bail!("--eigen is required when --variants includes lora");
    }
    if args.depths.is_empty() || args.variants.is_empty() || args.seeds == 0 {
        bail!("--depths, --variants and --seeds must be non-empty");
    }
    let model = ModelConfig {
        hidden_dim: args.hidden,
        dropout: args.dropout,
        alpha: args.alpha,
        combine: args.combine,
        k: args.k,
        lora_on_output: !args.no_output_branch,
        ..ModelConfig::default()
    };
    let plan = SweepPlan {
        data: absolute(&args.data)?,
        eigen: args.eigen.as_deref().map(absolute).transpose()?,
        depths: args.depths.clone(),
        variants,
        model,
        train: TrainConfig {
            lr: args.lr,
            weight_decay: args.weight_decay,
            max_epochs: args.epochs,
            patience: args.patience,
            n_seeds: args.seeds,
        },
        row_normalize: args.row_normalize,
        save_models: args.save_models,
    };
    run(&plan, &args.out, args.jobs)
}

/// `LAPLORA_JOBS` wins over `--jobs`; neither means one job per core.
fn resolve_jobs(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("LAPLORA_JOBS") {
        Ok(v) => {
            let jobs: usize = v.trim().parse().with_context(|| format!("LAPLORA_JOBS={v:?}"))?;
            Ok(Some(jobs))
        }
        Err(_) => Ok(flag),
    }
}

pub fn run(plan: &SweepPlan, out: &Path, jobs: Option<usize>) -> Result<()> {
    let start = Instant::now();
    let mut data = load_dataset(&plan.data)?;
    if plan.row_normalize {
        data = row_normalize(&data);
    }
    let hash = graph_hash(&data);
    let basis = match &plan.eigen {
        Some(path) => {
            let basis = EigenBasis::load(path, hash)?;
            if basis.k() < plan.model.k {
                bail!(
                    "{} holds {} eigenpairs but k={} was requested",
                    path.display(),
                    basis.k(),
                    plan.model.k
                );
            }
            Some(Arc::new(basis))
        }
        None => None,
    };
    plan.model.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let models_dir = out.join("models");
    let on_model: Option<Arc<dyn Fn(&laplora::model::RunRecord, &GcnModel) -> laplora::Result<()> + Send + Sync>> =
        if plan.save_models {
            fs::create_dir_all(&models_dir)?;
            let dir = models_dir.clone();
            Some(Arc::new(move |record, model| {
                let path = dir.join(format!("{}_L{}_s{}.llck", record.variant, record.depth, record.seed));
                Checkpoint {
                    graph_hash: hash,
                    model: model.clone(),
                }
                .save(path)
            }))
        } else {
            None
        };
    let opts = ProtocolOptions {
        variants: plan.variants.clone(),
        keep_embeddings: false,
        on_model,
    };

    let jobs = resolve_jobs(jobs)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build()?;
    let result = pool.install(|| run_protocol(&data, &plan.depths, &plan.train, &plan.model, basis, &opts))?;

    write_results(&result, &out.join("results.csv"))?;
    write_summary(&result, &out.join("summary.csv"))?;

    let mut manifest = Manifest::new(Invocation::Sweep(plan.clone()), DatasetInfo::of(&data));
    manifest.seeds = (0..plan.train.n_seeds as u64).collect();
    manifest.jobs = jobs;
    manifest.outputs = vec![out.join("results.csv"), out.join("summary.csv")];
    if plan.save_models {
        manifest.outputs.push(models_dir);
    }
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(out)?;

    for row in &result.summary {
        println!(
            "{:<5} L={:<3} test_acc {:.4} ± {:.4}  embed_var {:.4e}",
            row.variant, row.depth, row.mean_test_acc, row.std_test_acc, row.mean_embed_variance
        );
    }
    Ok(())
}

pub fn write_results(result: &ProtocolResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variant", "depth", "seed", "test_acc", "val_acc", "best_epoch", "embed_variance"])?;
    for r in &result.runs {
        w.write_record([
            r.variant.to_string(),
            r.depth.to_string(),
            r.seed.to_string(),
            format_real(r.test_acc),
            format_real(r.val_acc),
            r.best_epoch.to_string(),
            format_real(r.embed_variance),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(result: &ProtocolResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "variant",
        "depth",
        "n_seeds",
        "mean_test_acc",
        "std_test_acc",
        "mean_embed_variance",
        "std_embed_variance",
    ])?;
    for s in &result.summary {
        w.write_record([
            s.variant.to_string(),
            s.depth.to_string(),
            s.n_seeds.to_string(),
            format_real(s.mean_test_acc),
            format_real(s.std_test_acc),
            format_real(s.mean_embed_variance),
            format_real(s.std_embed_variance),
        ])?;
    }
    w.flush()?;
    Ok(())
}
