use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};

use rig_inverse::io::{read_weights_csv, write_timing_csv, write_weights_csv};
use rig_inverse::metrics::{metrics_csv, select_elbow, tradeoff_csv, tradeoff_table};
use rig_inverse::ranking::PairwiseMatrix;
use rig_inverse::{
    bradley_terry, build_cache, generate_synthetic, load_model, save_model, BlendshapeModel, FrameArray, FrameMetrics,
    SequenceMetrics, SolverRun, SpectralCache, SynthConfig, WeightVector,
};

use crate::solvers::solve_frames;
use crate::{ensure_parent, CompareArgs, FitArgs, MetricsArgs, PrecomputeArgs, RankArgs, SynthArgs};

/// Per-step slack allowed before an objective increase is reported.
const DESCENT_SLACK: f64 = 1e-10;

pub fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        m: a.m,
        n: a.vertices,
        pair_count: a.pairs,
        frames: a.frames,
        seed: a.seed,
        noise_std: a.noise,
        activation_sparsity: a.sparsity,
        corrective_scale: a.corrective_scale,
    };
    let data = generate_synthetic(&config)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    save_model(&data.model, a.out_dir.join("model.json"))?;
    FrameArray::from_rows(config.m, &data.truth)?.save(a.out_dir.join("truth_weights.rigframe"))?;
    data.targets.save(a.out_dir.join("targets.rigframe"))?;
    println!(
        "wrote model (m = {}, n = {}, {} pairs) and {} frames to {}",
        config.m,
        config.n,
        data.model.num_pairs(),
        config.frames,
        a.out_dir.display()
    );
    Ok(())
}

pub fn precompute(a: PrecomputeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let start = Instant::now();
    let cache = build_cache(&model)?;
    let seconds = start.elapsed().as_secs_f64();
    ensure_parent(&a.out)?;
    cache.save(&a.out)?;
    println!("s = {:e}; {} coordinates in {seconds:.3} s", cache.s_coefficient, cache.num_coordinates());
    Ok(())
}

fn load_targets(path: &Path, model: &BlendshapeModel) -> Result<FrameArray> {
    let targets = FrameArray::load(path)?;
    ensure!(
        targets.dim() == model.num_coordinates(),
        "{}: frames have {} values, model has {} coordinates",
        path.display(),
        targets.dim(),
        model.num_coordinates()
    );
    Ok(targets)
}

/// Loads the cache when a path is given (rejecting a fingerprint mismatch),
/// builds it when a solver needs one and none was given.
fn resolve_cache(path: Option<&Path>, model: &BlendshapeModel, needed: bool) -> Result<Option<SpectralCache>> {
    match path {
        Some(p) => {
            let cache = SpectralCache::load(p)?;
            cache.check_model(model).with_context(|| format!("{} was built for a different model", p.display()))?;
            Ok(Some(cache))
        }
        None if needed => {
            warn!("no --cache given; building the spectral cache in memory");
            Ok(Some(build_cache(model)?))
        }
        None => Ok(None),
    }
}

fn timing_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("weights");
    out.with_file_name(format!("{stem}.timing.csv"))
}

pub fn fit(a: FitArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let targets = load_targets(&a.targets, &model)?;
    let cache = resolve_cache(a.cache.as_deref(), &model, a.solver.needs_cache())?;

    let results = solve_frames(a.solver, &model, cache.as_ref(), &targets, a.alpha, &a.tuning)?;

    let mut trace_csv = String::from("frame,iteration,objective\n");
    for (f, r) in results.iter().enumerate() {
        let first = r.trace[0];
        let last = *r.trace.last().expect("trace holds the initial objective");
        let increases = r.trace.windows(2).filter(|s| s[1] > s[0] + DESCENT_SLACK).count();
        info!(
            "frame {f}: objective {first:.6e} -> {last:.6e} over {} iterations{}{}",
            r.trace.len() - 1,
            if r.converged { "" } else { " (iteration budget reached)" },
            if increases > 0 { format!(", {increases} increasing steps") } else { String::new() }
        );
        for (it, value) in r.trace.iter().enumerate() {
            let _ = writeln!(trace_csv, "{f},{it},{value}");
        }
    }

    ensure_parent(&a.out)?;
    let weights: Vec<WeightVector> = results.iter().map(|r| r.weights.clone()).collect();
    write_weights_csv(&a.out, model.names(), &weights)?;
    let seconds: Vec<f64> = results.iter().map(|r| r.seconds).collect();
    write_timing_csv(timing_path(&a.out), &seconds)?;
    if let Some(path) = &a.trace {
        ensure_parent(path)?;
        fs::write(path, trace_csv).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{}: {} frames, {:.4} s/frame, weights in {}",
        a.solver.label(),
        results.len(),
        seconds.iter().sum::<f64>() / results.len().max(1) as f64,
        a.out.display()
    );
    Ok(())
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let targets = load_targets(&a.targets, &model)?;
    let (names, weights) = read_weights_csv(&a.weights)?;
    ensure!(names == model.names(), "{}: blendshape names do not match the model", a.weights.display());
    ensure!(
        weights.len() == targets.frames(),
        "{} has {} frames, {} has {}",
        a.weights.display(),
        weights.len(),
        a.targets.display(),
        targets.frames()
    );

    let truth = match &a.truth {
        Some(path) => {
            let t = FrameArray::load(path)?;
            ensure!(
                t.frames() == targets.frames() && t.dim() == model.num_blendshapes(),
                "{}: expected {} frames of {} weights",
                path.display(),
                targets.frames(),
                model.num_blendshapes()
            );
            Some(t)
        }
        None => None,
    };

    let n = model.num_vertices();
    let mut per_frame = Vec::with_capacity(weights.len());
    for (f, w) in weights.iter().enumerate() {
        let predicted = model.quadratic_offset(w)?;
        let reference = match &truth {
            Some(t) => model.quadratic_offset(&WeightVector::new(t.frame(f).to_vec())?)?,
            None => targets.frame(f).to_vec(),
        };
        per_frame.push(FrameMetrics::compute(&predicted, &reference, n, w, a.epsilon)?);
    }
    let seq = SequenceMetrics::new(per_frame, &weights)?;

    let mut out = String::from("frame,rmse,p95,cardinality,l1\n");
    for (f, m) in seq.per_frame.iter().enumerate() {
        let _ = writeln!(out, "{f},{},{},{},{}", m.rmse_coord, m.err_p95_vertex, m.cardinality, m.l1_norm);
    }
    ensure_parent(&a.out)?;
    fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;

    let frames = seq.per_frame.len().max(1) as f64;
    let mean = |f: fn(&FrameMetrics) -> f64| seq.per_frame.iter().map(f).sum::<f64>() / frames;
    println!(
        "mean rmse {:.6}, mean p95 {:.6}, mean cardinality {:.2}, mean l1 {:.4}, mean smoothness {:.6e}",
        mean(|m| m.rmse_coord),
        mean(|m| m.err_p95_vertex),
        mean(|m| m.cardinality as f64),
        mean(|m| m.l1_norm),
        seq.mean_smoothness()
    );
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    ensure!(a.subsample_gap >= 1, "--subsample-gap must be at least 1");
    ensure!(!a.solvers.is_empty(), "--solvers is empty");
    ensure!(!a.alphas.is_empty(), "--alphas is empty");
    let model = load_model(&a.model)?;
    let all_targets = load_targets(&a.targets, &model)?;
    let needs_cache = a.solvers.iter().any(|s| s.needs_cache());
    let cache = resolve_cache(a.cache.as_deref(), &model, needs_cache)?;

    let frames: Vec<usize> = (0..all_targets.frames()).step_by(a.subsample_gap).collect();
    let targets = all_targets.select(&frames);
    info!("{} of {} frames after subsampling", frames.len(), all_targets.frames());
    if let Some(dir) = &a.weights_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let mut alphas = a.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let n = model.num_vertices();
    let mut runs = Vec::new();
    for &kind in &a.solvers {
        let sweep: &[f64] = if kind.uses_alpha() { &alphas } else { &[0.0] };
        for &alpha in sweep {
            let start = Instant::now();
            let results = solve_frames(kind, &model, cache.as_ref(), &targets, alpha, &a.tuning)?;
            let weights: Vec<WeightVector> = results.iter().map(|r| r.weights.clone()).collect();
            let mut per_frame = Vec::with_capacity(results.len());
            for (f, w) in weights.iter().enumerate() {
                let predicted = model.quadratic_offset(w)?;
                per_frame.push(FrameMetrics::compute(&predicted, targets.frame(f), n, w, a.epsilon)?);
            }
            if let Some(dir) = &a.weights_dir {
                write_weights_csv(dir.join(format!("{}_alpha{alpha}.csv", kind.label())), model.names(), &weights)?;
            }
            info!("{} alpha {alpha}: {:.2} s", kind.label(), start.elapsed().as_secs_f64());
            runs.push(SolverRun {
                solver: kind.label().to_string(),
                alpha,
                frames: frames.clone(),
                metrics: SequenceMetrics::new(per_frame, &weights)?,
                seconds: results.iter().map(|r| r.seconds).collect(),
            });
        }
    }

    let rows = tradeoff_table(&runs)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, tradeoff_csv(&rows)).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.metrics_out {
        ensure_parent(path)?;
        fs::write(path, metrics_csv(&runs)).with_context(|| format!("writing {}", path.display()))?;
    }

    for &kind in &a.solvers {
        let group: Vec<_> = rows.iter().filter(|r| r.solver == kind.label()).collect();
        if let Some(i) = select_elbow(&group) {
            let r = group[i];
            println!(
                "elbow {}: alpha {} rmse {:.6} p95 {:.6} cardinality {:.2}",
                r.solver, r.alpha, r.rmse_mean, r.p95_mean, r.cardinality_mean
            );
        }
    }
    Ok(())
}

pub fn rank(a: RankArgs) -> Result<()> {
    let text = fs::read_to_string(&a.pairwise).with_context(|| format!("reading {}", a.pairwise.display()))?;
    let matrix = PairwiseMatrix::from_csv(&text, &a.pairwise)?;
    let strengths = bradley_terry(&matrix, a.max_iters, a.tol)?;
    if !strengths.converged {
        bail!("no convergence within {} iterations", a.max_iters);
    }
    ensure_parent(&a.out)?;
    fs::write(&a.out, strengths.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    for (place, i) in strengths.ranking().into_iter().enumerate() {
        println!("{}. {} {:.4}", place + 1, strengths.labels[i], strengths.strengths[i]);
    }
    Ok(())
}
