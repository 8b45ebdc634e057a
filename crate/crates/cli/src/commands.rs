use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use cmf_core::bench::run_bench;
use cmf_core::data::write_coo;
use cmf_core::implicit::{implicit_objective, implicit_train, mean_percentile_rank};
use cmf_core::model::{load_model, save_model};
use cmf_core::parallel::with_threads;
use cmf_core::sgd::sgd_train;
use cmf_core::{gen_synthetic, objective, rmse, split_holdout, train, Delimiter, SparseRatings, SynthConfig, TrainOutput};

use crate::dataset::{load, load_split, Loaded, Split};
use crate::manifest::{BenchPlan, EngineConfig, EvalObjective, EvalPlan, Plan, SynthPlan, TrainPlan};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Runs `plan`. `loaded` may carry the inputs already read while building
/// the manifest.
pub fn execute(plan: &Plan, threads: usize, loaded: Option<Split>) -> Result<()> {
    with_threads(threads, || match plan {
        Plan::Synth(p) => synth(p),
        Plan::Train(p) => run_train(p, loaded),
        Plan::Eval(p) => eval(p),
        Plan::Bench(p) => bench(p, loaded),
    })?
}

fn synth(p: &SynthPlan) -> Result<()> {
    let cfg = SynthConfig {
        m: p.m,
        n: p.n,
        f: p.f,
        density: p.density,
        noise_sigma: p.noise,
        seed: p.seed,
    };
    let (triples, truth) = gen_synthetic(&cfg)?;
    let ratings = SparseRatings::build(&triples, p.m, p.n)?;
    let path = |name: &str| p.out_dir.join(name);

    let mut w = create(&path("ratings.tsv"))?;
    write_coo(&mut w, &triples, Delimiter::Tab)?;
    w.flush()?;
    ratings.write_cache(create(&path("ratings.cmfc"))?)?;
    save_model(&path("truth.cmfm"), &truth.x_true, &truth.theta_true)?;

    if p.holdout > 0.0 {
        let (train_t, test_t) = split_holdout(&triples, p.holdout, p.seed)?;
        SparseRatings::build(&train_t, p.m, p.n)?.write_cache(create(&path("train.cmfc"))?)?;
        let mut w = create(&path("test.tsv"))?;
        write_coo(&mut w, &test_t, Delimiter::Tab)?;
        w.flush()?;
        println!("train_nnz\t{}", train_t.len());
        println!("test_nnz\t{}", test_t.len());
    }
    let (hash, _) = crate::dataset::sha256_file(&path("ratings.tsv"))?;
    println!("nnz\t{}", triples.len());
    println!("sha256\t{hash}");
    Ok(())
}

fn run_train(p: &TrainPlan, loaded: Option<Split>) -> Result<()> {
    let split = match loaded {
        Some(s) => s,
        None => load_split(&p.train, p.test.as_deref(), p.format, Some(p.dims))?,
    };
    let out: TrainOutput = match &p.engine {
        EngineConfig::Als(c) => train(&split.train, &split.test, c)?,
        EngineConfig::Implicit(c) => implicit_train(&split.train, &split.test, c)?,
        EngineConfig::Sgd(c) => sgd_train(&split.train, &split.test, c)?,
    };
    if let Some(path) = &p.model_out {
        save_model(path, &out.x, &out.theta)?;
    }
    if let Some(path) = &p.report_out {
        let mut w = create(path)?;
        serde_json::to_writer(&mut w, &serde_json::json!({"record": "roofline", "estimate": out.roofline}))?;
        w.write_all(b"\n")?;
        out.report.write_jsonl(&mut w)?;
    }
    for e in &out.report.epochs {
        let metric = match (e.test_rmse, e.test_mpr) {
            (Some(r), _) => format!("\trmse {r:.6}"),
            (None, Some(mpr)) => format!("\tmpr {mpr:.6}"),
            _ => String::new(),
        };
        println!(
            "epoch {}\t{}\tobjective {:.6e}{metric}\t{:.3}s",
            e.epoch,
            e.solver,
            e.train_objective,
            e.phases.total()
        );
    }
    if let Some(r) = out.report.final_rmse() {
        println!("final_rmse\t{r}");
    }
    Ok(())
}

fn eval(p: &EvalPlan) -> Result<()> {
    let model = load_model(&p.model).with_context(|| format!("reading {}", p.model.display()))?;
    let dims = Some((model.m(), model.n()));
    let test = match load(&p.test, p.format, dims)? {
        Loaded::Cache(r) => r.to_triples(),
        Loaded::Text(c) => c.triples,
    };
    println!("rmse\t{}", rmse(&model.x, &model.theta, &test)?);
    if p.objective == EvalObjective::Implicit {
        println!("mpr\t{}", mean_percentile_rank(&model.x, &model.theta, &test)?);
    }
    if let Some(train_path) = &p.train {
        let train_r = load_split(train_path, None, p.format, dims)?.train;
        anyhow::ensure!(
            (train_r.m(), train_r.n()) == dims.unwrap(),
            crate::DataError(format!(
                "training data is {}x{} but the model is {}x{}",
                train_r.m(),
                train_r.n(),
                model.m(),
                model.n()
            ))
        );
        let obj = match p.objective {
            EvalObjective::Als => objective(&model.x, &model.theta, &train_r, p.lambda)?,
            EvalObjective::Implicit => implicit_objective(&model.x, &model.theta, &train_r, p.alpha, p.lambda)?,
        };
        println!("objective\t{obj}");
    }
    Ok(())
}

fn bench(p: &BenchPlan, loaded: Option<Split>) -> Result<()> {
    let split = match loaded {
        Some(s) => s,
        None => load_split(&p.train, Some(&p.test), p.format, Some(p.dims))?,
    };
    let report = run_bench(&split.train, &split.test, &p.bench)?;
    if let Some(path) = &p.out {
        report.write_jsonl(create(path)?)?;
    }
    print!("{}", report.table());
    Ok(())
}
