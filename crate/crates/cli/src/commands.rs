use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use msf_core::bench::bench_pooling;
use msf_core::sim::{generate, recall_table, SceneConfig};
use msf_core::{run_pipeline, NetworkWeights, PipelineConfig, RunOptions};

use crate::args::{BenchArgs, GenArgs, InitWeightsArgs, RecallArgs, RunArgs, VerifyArgs};
use crate::error::{CliError, EXIT_MISMATCH, EXIT_OK};
use crate::manifest::{config_hash, versions, write_json, RunManifest};
use crate::scene_dir::{load_scene, parse_json, write_scene};
use crate::verify::{verify_pooling, VerifyOptions, VerifyReport};

/// What a command leaves behind: its manifest, an exit code and a one-line
/// summary for the terminal.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub exit_code: u8,
    pub summary: String,
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(
    dir: &Path,
    name: &str,
    text: &str,
    outputs: &mut Vec<String>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

fn manifest(
    command: &str,
    hash: String,
    seed: u64,
    start: Instant,
    outputs: Vec<String>,
) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config_hash: hash,
        seed,
        versions: versions(),
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
        outputs,
    }
}

impl Outcome {
    fn written(
        manifest: RunManifest,
        out: &Path,
        exit_code: u8,
        summary: String,
    ) -> Result<Self, CliError> {
        manifest.write(out)?;
        Ok(Self {
            manifest,
            exit_code,
            summary,
        })
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let (mut config, text): (SceneConfig, String) = parse_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(frames) = args.frames {
        config.frames = frames;
    }
    let scene = generate(&config).map_err(CliError::input)?;
    let outputs = write_scene(&args.out, &scene)?;
    let summary = format!(
        "{} frames, {} points, {} proposals -> {}",
        scene.window.frames().len(),
        scene.window.total_points(),
        scene.proposals.len(),
        args.out.display()
    );
    let hash = config_hash(&config, &[text.as_bytes()]);
    Outcome::written(
        manifest("gen", hash, config.seed, start, outputs),
        &args.out,
        EXIT_OK,
        summary,
    )
}

pub const VERIFY_FILE: &str = "verify.json";

pub fn cmd_verify(args: &VerifyArgs) -> Result<(Outcome, VerifyReport), CliError> {
    let start = Instant::now();
    let scene = load_scene(&args.scene)?.tail(args.frames)?;
    let opts = VerifyOptions {
        seed: args.seed,
        gamma: args.gamma,
        points_per_proposal: args.pooling.points_per_proposal,
        voxel_size: args.pooling.voxel_size,
        points_per_voxel: args.pooling.points_per_voxel,
    };
    let report = verify_pooling(&scene.window, &scene.proposals, &opts)?;
    create_out(&args.out)?;
    write_json(&args.out.join(VERIFY_FILE), &report)?;
    let summary = format!(
        "{}: {} regions, {} candidate mismatches, {}/{} element mismatches, {}/{} membership failures, {} truncated by retention",
        if report.passed { "PASS" } else { "MISMATCH" },
        report.regions_checked,
        report.candidate_set_mismatches,
        report.element_mismatches,
        report.element_comparisons,
        report.membership_failures,
        report.membership_checked,
        report.truncated_regions,
    );
    let exit = if report.passed {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    };
    let hash = config_hash(&opts, &[scene.proposals_text.as_bytes()]);
    let outcome = Outcome::written(
        manifest("verify", hash, args.seed, start, vec![VERIFY_FILE.into()]),
        &args.out,
        exit,
        summary,
    )?;
    Ok((outcome, report))
}

pub fn cmd_bench(args: &BenchArgs, workers: usize) -> Result<Outcome, CliError> {
    let start = Instant::now();
    if args.reps < 3 {
        return Err(CliError::Input(format!(
            "at least 3 repetitions required, got {}",
            args.reps
        )));
    }
    let report = bench_pooling(
        &args.sizes,
        args.proposals,
        args.points_per_proposal,
        args.reps,
        args.seed,
        workers,
    )
    .map_err(CliError::input)?;
    create_out(&args.out)?;
    let mut outputs = Vec::new();
    let csv = report.to_csv();
    write_text(&args.out, "bench.csv", &csv, &mut outputs)?;
    write_json(&args.out.join("bench.json"), &report)?;
    outputs.push("bench.json".into());
    #[derive(Serialize)]
    struct Params<'a> {
        args: &'a BenchArgs,
        workers: usize,
    }
    let hash = config_hash(&Params { args, workers }, &[]);
    Outcome::written(
        manifest("bench", hash, args.seed, start, outputs),
        &args.out,
        EXIT_OK,
        csv.trim_end().to_string(),
    )
}

pub fn cmd_recall(args: &RecallArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let files = load_scene(&args.scene)?;
    let text = files.proposals_text.clone();
    let scene = files.into_scene()?;
    let table = recall_table(&scene, &args.gammas, &args.frames).map_err(CliError::input)?;
    create_out(&args.out)?;
    let mut outputs = Vec::new();
    let csv = table.to_csv();
    write_text(&args.out, "recall.csv", &csv, &mut outputs)?;
    write_text(
        &args.out,
        "recall_by_class.csv",
        &table.by_class_csv(),
        &mut outputs,
    )?;
    write_json(&args.out.join("recall.json"), &table)?;
    outputs.push("recall.json".into());
    let hash = config_hash(args, &[text.as_bytes()]);
    Outcome::written(
        manifest("recall", hash, 0, start, outputs),
        &args.out,
        EXIT_OK,
        csv.trim_end().to_string(),
    )
}

fn pipeline_config(path: Option<&Path>) -> Result<(PipelineConfig, String), CliError> {
    match path {
        Some(p) => parse_json(p),
        None => Ok((PipelineConfig::default(), String::new())),
    }
}

pub const OUTPUTS_FILE: &str = "outputs.json";

pub fn cmd_run(args: &RunArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let scene = load_scene(&args.scene)?.tail(args.frames)?;
    let (mut config, config_text) = pipeline_config(args.config.as_deref())?;
    config.points_per_proposal = args.pooling.points_per_proposal;
    let frames = scene.window.frames().len();
    let (weights, weights_text) = match &args.weights {
        Some(p) => parse_json::<NetworkWeights>(p)?,
        None => (
            NetworkWeights::seeded(&config, frames, args.seed),
            String::new(),
        ),
    };
    let truth = scene
        .truth
        .as_ref()
        .filter(|_| scene.has_masks())
        .map(|t| t.current_boxes().to_vec());
    let options = RunOptions {
        gamma: args.gamma,
        voxel_size: args.pooling.voxel_size,
        points_per_voxel: args.pooling.points_per_voxel,
        seed: args.seed,
        permute_points: args.permute_points,
    };
    let output = run_pipeline(
        &scene.window,
        &scene.proposals,
        truth.as_deref(),
        &weights,
        &config,
        &options,
    )
    .map_err(CliError::input)?;
    create_out(&args.out)?;
    write_json(&args.out.join(OUTPUTS_FILE), &output)?;
    let finite = output
        .proposals
        .iter()
        .all(|p| p.confidence.is_finite() && p.residuals.iter().all(|r| r.is_finite()));
    let summary = format!(
        "K={} D={} H={} T={}: {} proposals, outputs {}{}",
        output.points_per_proposal,
        output.feature_dim,
        output.heads,
        output.frames,
        output.proposals.len(),
        if finite { "finite" } else { "NON-FINITE" },
        output
            .loss
            .map_or(String::new(), |l| format!(", total loss {:.6}", l.total)),
    );
    let hash = config_hash(
        args,
        &[
            scene.proposals_text.as_bytes(),
            config_text.as_bytes(),
            weights_text.as_bytes(),
        ],
    );
    Outcome::written(
        manifest("run", hash, args.seed, start, vec![OUTPUTS_FILE.into()]),
        &args.out,
        EXIT_OK,
        summary,
    )
}

pub fn cmd_init_weights(args: &InitWeightsArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    if args.frames == 0 {
        return Err(CliError::Input("window length must be at least 1".into()));
    }
    let (config, config_text) = pipeline_config(args.config.as_deref())?;
    let weights = NetworkWeights::seeded(&config, args.frames, args.seed);
    create_out(&args.out)?;
    write_json(&args.out.join("weights.json"), &weights)?;
    let summary = format!(
        "D={} H={} blocks={} T={} -> {}",
        config.feature_dim,
        config.heads,
        config.blocks,
        args.frames,
        args.out.join("weights.json").display()
    );
    let hash = config_hash(args, &[config_text.as_bytes()]);
    Outcome::written(
        manifest(
            "init-weights",
            hash,
            args.seed,
            start,
            vec!["weights.json".into()],
        ),
        &args.out,
        EXIT_OK,
        summary,
    )
}
