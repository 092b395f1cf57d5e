//! `lanenas` command-line front end.

// negated comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use lanenas_core::arch_space::{
    parse_backbone, space_cardinality, ArchEncoding, ArchError, BackboneSpec, BlockKind, FusionLayer, FusionSpec,
    MutationConfig, SpaceConfig, DEFAULT_FUSION_CHANNELS,
};
use lanenas_core::cost_model::{candidate_cost, CostConfig, DEFAULT_ANCHOR_ROWS};
use lanenas_core::data_io::{
    export_front_csv, front_csv, load_archive, read_culane_lines, read_proposals, read_scenes, snapshot_archive,
    write_history_jsonl, write_proposals, write_scenes, DataError, ProposalScene, SceneRecord,
};
use lanenas_core::lane_model::{LaneError, LaneLine};
use lanenas_core::metrics::{
    match_and_score, tusimple_accuracy, MatchConfig, MetricsReport, DEFAULT_TUSIMPLE_TOLERANCE,
};
use lanenas_core::point_blend::{plain_line_nms, postprocess, BlendParamSet, BlendParamSpace};
use lanenas_core::search::{
    resume_search, run_blend_inner_search, BlendSearchConfig, BlendSearchError, CostClass, Evaluator,
    ExternalEvaluator, MutationProbs, ParetoArchive, ReplayScene, SearchConfig, SyntheticEvaluator,
};
use lanenas_core::synth::{generate_synthetic_scenes, SynthSceneConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "lanenas", version, about = "Lane detector architecture search and point-blending tools")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a backbone encoding string.
    ParseArch {
        encoding: String,
    },
    /// FLOPS and parameter count of a candidate.
    Cost(CostArgs),
    /// Size of the search space under the counting assumptions.
    SpaceSize {
        /// Quote backbones without head placement.
        #[arg(long)]
        no_heads: bool,
        /// Number of fusion layers.
        #[arg(long, default_value_t = lanenas_core::arch_space::DEFAULT_FUSION_LAYERS)]
        fusion_layers: usize,
    },
    /// Multi-objective architecture search.
    Search(SearchArgs),
    /// Run post-processing on proposal dumps.
    Blend(BlendArgs),
    /// CULane-style F1 of a prediction directory against ground truth.
    EvalF1(EvalArgs),
    /// TuSimple-style point accuracy.
    EvalTusimple(EvalArgs),
    /// Generate a synthetic proposal corpus with ground truth.
    GenSynth(SynthArgs),
    /// Export the Pareto front of an archive snapshot.
    ParetoExport {
        archive: PathBuf,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CostArgs {
    encoding: String,
    /// Input resolution, WxH.
    #[arg(long, default_value = "512x288", value_parser = parse_size)]
    resolution: (u32, u32),
    /// Head levels, comma separated. Defaults to the last level.
    #[arg(long)]
    heads: Option<String>,
    /// Fusion layers as `a+b>o` items separated by commas, e.g. `1+3>2,2+3>3`.
    #[arg(long, default_value = "")]
    fusion: String,
    #[arg(long, default_value_t = DEFAULT_FUSION_CHANNELS)]
    fusion_channels: u32,
    #[arg(long, default_value_t = DEFAULT_ANCHOR_ROWS)]
    anchor_rows: u32,
}

#[derive(Args)]
struct SearchArgs {
    /// Evaluations after the initial population.
    #[arg(long, default_value_t = 100)]
    budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "LANENAS_WORKERS", default_value_t = 1)]
    workers: usize,
    /// `builtin:synthetic` or `exec:<shell command>`.
    #[arg(long, default_value = "builtin:synthetic")]
    evaluator: String,
    /// Output directory for history, snapshots and the front.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    initial_population: usize,
    /// `full`, `reduced`, or a path to a JSON space config.
    #[arg(long, default_value = "full")]
    space: String,
    /// Mutation weights `backbone,fusion,blend`.
    #[arg(long, value_parser = parse_probs)]
    mutation: Option<MutationProbs>,
    /// Write a snapshot every N evaluations (0 disables).
    #[arg(long, default_value_t = 50)]
    snapshot_every: u64,
    /// Seconds before an external evaluation is killed.
    #[arg(long, default_value_t = 3600.0)]
    eval_timeout: f64,
    /// Treat the external evaluator as deterministic (skip repeats).
    #[arg(long)]
    deterministic: bool,
    /// Continue from `<out>/archive.json` if it exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct BlendArgs {
    /// Proposal dump (JSON lines).
    #[arg(long)]
    proposals: PathBuf,
    /// Blend parameters as JSON; defaults otherwise.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Identity masks and no locality weighting.
    #[arg(long)]
    plain_nms: bool,
    #[arg(long)]
    score_threshold: Option<f64>,
    #[arg(long)]
    group_distance: Option<f64>,
    /// Locality scale in px, or `inf`.
    #[arg(long)]
    locality_sigma: Option<f64>,
    /// Ground truth scenes (JSON lines); enables scoring.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Tune parameters on the scenes for this many iterations first (needs --gt).
    #[arg(long)]
    tune: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write predictions (JSON lines) here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the parameters used here.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted `.lines.txt` files.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth `.lines.txt` files, same relative layout.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, default_value_t = 30.0)]
    width: f64,
    #[arg(long, default_value = "1640x590", value_parser = parse_size)]
    canvas: (u32, u32),
    /// Horizontal tolerance for point accuracy, px.
    #[arg(long, default_value_t = DEFAULT_TUSIMPLE_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    num_scenes: usize,
    /// Error scale on remote rows, px.
    #[arg(long, default_value_t = 20.0)]
    noise: f64,
    #[arg(long, default_value_t = 4)]
    lanes: usize,
    #[arg(long, default_value_t = -4e-4, allow_hyphen_values = true)]
    curvature_min: f64,
    #[arg(long, default_value_t = 4e-4, allow_hyphen_values = true)]
    curvature_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Bad input that is not a parse error of a known format.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().ok().filter(|&v| v > 0);
    match (parse(w), parse(h)) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(format!("expected positive WxH, got {s:?}")),
    }
}

fn parse_probs(s: &str) -> Result<MutationProbs, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [backbone, fusion, blend] => Ok(MutationProbs { backbone, fusion, blend }),
        _ => Err(format!("expected three weights, got {s:?}")),
    }
}

fn parse_levels(s: &str) -> Result<BTreeSet<u32>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|e| input_error(format!("head level {t:?}: {e}")))
        })
        .collect()
}

fn parse_fusion_layers(s: &str) -> Result<Vec<FusionLayer>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|item| {
            let bad = || input_error(format!("fusion layer {item:?} is not of the form a+b>o"));
            let (inputs, out) = item.split_once('>').ok_or_else(bad)?;
            let (a, b) = inputs.split_once('+').ok_or_else(bad)?;
            let num = |v: &str| v.trim().parse::<u32>().map_err(|_| bad());
            Ok(FusionLayer {
                input_a: num(a)?,
                input_b: num(b)?,
                output_level: num(out)?,
            })
        })
        .collect()
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_arch(encoding: &str, as_json: bool) -> Result<()> {
    let spec = parse_backbone(encoding)?;
    let layout = spec.stage_layout();
    if as_json {
        return print_json(&json!({
            "encoding": spec.encode(),
            "block_kind": spec.block_kind(),
            "base_channels": spec.base_channels(),
            "num_blocks": spec.num_blocks(),
            "downsample_at": spec.downsample_at(),
            "double_channels_at": spec.double_channels_at(),
            "stages": spec.stage_count(),
            "layout": layout,
        }));
    }
    println!("encoding            {}", spec.encode());
    println!("block kind          {:?}", spec.block_kind());
    println!("base channels       {}", spec.base_channels());
    println!("blocks              {}", spec.num_blocks());
    println!("downsample at       {:?}", spec.downsample_at());
    println!("double channels at  {:?}", spec.double_channels_at());
    println!("stages              {}", spec.stage_count());
    println!("block  stage  stride  width");
    for s in layout {
        println!("{:>5}  {:>5}  {:>6}  {:>5}", s.block, s.stage, s.downsample_factor, s.channels);
    }
    Ok(())
}

fn cost(args: &CostArgs, as_json: bool) -> Result<()> {
    let backbone: BackboneSpec = parse_backbone(&args.encoding)?;
    let heads_at = match &args.heads {
        Some(h) => parse_levels(h)?,
        None => BTreeSet::from([backbone.stage_count()]),
    };
    let fusion = FusionSpec {
        layers: parse_fusion_layers(&args.fusion)?,
        channels: args.fusion_channels,
        heads_at,
    };
    let blend = BlendParamSet::defaults(fusion.heads_at.iter().copied(), args.resolution);
    let arch = ArchEncoding::new(backbone, fusion, blend)?;
    let cfg = CostConfig {
        resolution: args.resolution,
        anchor_rows: args.anchor_rows,
    };
    let report = candidate_cost(&arch, &cfg)?;
    if as_json {
        return print_json(&report);
    }
    println!("{:<20} {:>16} {:>12}", "component", "flops", "params");
    for c in &report.per_component {
        println!("{:<20} {:>16} {:>12}", c.label, c.flops, c.params);
    }
    println!(
        "{:<20} {:>16} {:>12}",
        "total", report.total_flops, report.total_params
    );
    println!(
        "{:.3} GFLOPS at {}x{}",
        report.total_flops as f64 / 1e9,
        report.input_resolution.0,
        report.input_resolution.1
    );
    Ok(())
}

fn space_size(no_heads: bool, fusion_layers: usize, as_json: bool) -> Result<()> {
    let config = SpaceConfig {
        include_head_placement: !no_heads,
        fusion_layers,
        ..SpaceConfig::default()
    };
    let report = space_cardinality(&config);
    if as_json {
        // u128 does not fit JSON numbers everywhere; counts go out as strings
        return print_json(&json!({
            "backbone": report.backbone.to_string(),
            "backbone_with_heads": report.backbone_with_heads.to_string(),
            "headline_backbone": report.headline_backbone.to_string(),
            "fusion_by_stages": report
                .fusion_by_stages
                .iter()
                .map(|(t, n)| json!({"stages": t, "count": n.to_string()}))
                .collect::<Vec<_>>(),
            "assumptions": report.assumptions,
        }));
    }
    println!("backbone genomes         {}", report.backbone);
    println!("with head placement      {}", report.backbone_with_heads);
    println!("headline                 {:.3e}", report.headline_backbone as f64);
    for (t, n) in &report.fusion_by_stages {
        println!("fusion specs, {t} stages   {n}");
    }
    println!("assumptions:");
    for a in &report.assumptions {
        println!("  - {a}");
    }
    Ok(())
}

/// The narrowed space used for exhaustive checks: basic blocks, widths 48
/// and 64, 10 to 14 blocks, three stages, no fusion layers.
fn reduced_space() -> SpaceConfig {
    SpaceConfig {
        block_kinds: vec![BlockKind::Basic],
        base_channels: vec![48, 64],
        min_blocks: 10,
        max_blocks: 14,
        stage_counts: vec![3],
        fusion_layers: 0,
        include_head_placement: true,
    }
}

fn load_space(spec: &str) -> Result<(SpaceConfig, bool)> {
    match spec {
        "full" => Ok((SpaceConfig::default(), false)),
        "reduced" => Ok((reduced_space(), true)),
        path => {
            let text = fs::read_to_string(path).map_err(|e| DataError::io(Path::new(path), e))?;
            let space: SpaceConfig = serde_json::from_str(&text)
                .map_err(|e| DataError::schema(path.to_string(), e.to_string()))?;
            space.validate()?;
            Ok((space, false))
        }
    }
}

fn make_evaluator(args: &SearchArgs, cost: CostConfig) -> Result<Box<dyn Evaluator>> {
    if args.evaluator == "builtin:synthetic" {
        return Ok(Box::new(SyntheticEvaluator { cost }));
    }
    if let Some(cmd) = args.evaluator.strip_prefix("exec:") {
        if cmd.trim().is_empty() {
            bail!(input_error("exec: evaluator needs a command"));
        }
        if !(args.eval_timeout > 0.0 && args.eval_timeout.is_finite()) {
            bail!(input_error("--eval-timeout must be positive"));
        }
        let mut ev = ExternalEvaluator::new(cmd, Duration::from_secs_f64(args.eval_timeout));
        ev.resolution = cost.resolution;
        ev.deterministic = args.deterministic;
        return Ok(Box::new(ev));
    }
    Err(input_error(format!(
        "unknown evaluator {:?}; use builtin:synthetic or exec:<command>",
        args.evaluator
    )))
}

fn save_outputs(out: &Path, archive: &ParetoArchive) -> Result<()> {
    write_history_jsonl(&out.join("history.jsonl"), archive)?;
    snapshot_archive(&out.join("archive.json"), archive)?;
    Ok(())
}

fn search(args: &SearchArgs, as_json: bool) -> Result<()> {
    if args.workers == 0 {
        bail!(input_error("--workers must be at least 1"));
    }
    let (space, reduced) = load_space(&args.space)?;
    let cost = CostConfig::default();
    let evaluator = make_evaluator(args, cost)?;
    let mutation = args.mutation.unwrap_or(if reduced {
        // blend parameters do not change the score of the builtin evaluator
        MutationProbs {
            backbone: 0.7,
            fusion: 0.3,
            blend: 0.0,
        }
    } else {
        MutationProbs::EXPENSIVE
    });
    let config = SearchConfig {
        budget: args.budget,
        initial_population: args.initial_population,
        workers: args.workers,
        seed: args.seed,
        mutation,
        backbone_mutation: MutationConfig::default(),
        space,
        cost,
        blend_space: BlendParamSpace::for_image(cost.resolution),
        max_redraws: 32,
    };
    config.validate().map_err(|e| input_error(e.to_string()))?;

    fs::create_dir_all(&args.out).map_err(|e| DataError::io(&args.out, e))?;
    let snapshot = args.out.join("archive.json");
    let start = if args.resume && snapshot.exists() {
        load_archive(&snapshot)?
    } else {
        ParetoArchive::new()
    };
    let resumed_from = start.history().len();

    let mut write_error = None;
    let archive = resume_search(start, &config, evaluator.as_ref(), |archive, c| {
        if let Some(err) = &c.error {
            eprintln!("eval {} failed: {err}", c.eval_id);
        }
        let n = archive.history().len() as u64;
        if args.snapshot_every > 0 && n.is_multiple_of(args.snapshot_every) && write_error.is_none() {
            write_error = save_outputs(&args.out, archive).err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    save_outputs(&args.out, &archive)?;
    export_front_csv(&args.out.join("front.csv"), &archive)?;

    let failed = archive.history().iter().filter(|c| c.score.is_none()).count();
    let summary = json!({
        "evaluations": archive.history().len(),
        "resumed_from": resumed_from,
        "failed": failed,
        "front_size": archive.members().len(),
        "evaluator_cost_class": match evaluator.cost_class() {
            CostClass::Cheap => "cheap",
            CostClass::Expensive => "expensive",
        },
        "out": args.out,
    });
    if as_json {
        return print_json(&summary);
    }
    println!(
        "{} evaluations ({} failed), front of {} written to {}",
        archive.history().len(),
        failed,
        archive.members().len(),
        args.out.display()
    );
    print!("{}", front_csv(&archive));
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    version: u32,
    image_id: &'a str,
    lanes: Vec<Vec<(f64, f64)>>,
    scores: Vec<f64>,
}

fn blend(args: &BlendArgs, as_json: bool) -> Result<()> {
    let scenes: Vec<ProposalScene> = read_proposals(&args.proposals)?.collect::<Result<_, _>>()?;
    if scenes.is_empty() {
        bail!(input_error(format!("{} holds no scenes", args.proposals.display())));
    }
    let image_size = scenes[0].proposals.layout.image_size;
    let levels: BTreeSet<u32> = scenes
        .iter()
        .flat_map(|s| s.proposals.heads.iter().map(|h| h.level))
        .collect();

    let mut params = match &args.params {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
            serde_json::from_str::<BlendParamSet>(&text)
                .map_err(|e| DataError::schema(path.display().to_string(), e.to_string()))?
        }
        None => BlendParamSet::defaults(levels.iter().copied(), image_size),
    };
    params.fit_to_levels(&levels, image_size);
    if let Some(v) = args.score_threshold {
        params.score_threshold = v;
    }
    if let Some(v) = args.group_distance {
        params.group_distance = v;
    }
    if let Some(v) = args.locality_sigma {
        params.locality_sigma = v;
    }
    params.validate().map_err(|e| input_error(e.to_string()))?;

    let gt: Option<Vec<SceneRecord>> = args.gt.as_deref().map(read_scenes).transpose()?;
    if let Some(gt) = &gt {
        if gt.len() != scenes.len() {
            bail!(input_error(format!(
                "{} proposal scenes but {} ground-truth scenes",
                scenes.len(),
                gt.len()
            )));
        }
        for (s, g) in scenes.iter().zip(gt) {
            if s.image_id != g.image_id {
                bail!(input_error(format!(
                    "scene order differs: proposals have {:?}, ground truth {:?}",
                    s.image_id, g.image_id
                )));
            }
        }
    }

    let mut tuned = None;
    if let Some(iterations) = args.tune {
        let gt = gt
            .as_ref()
            .ok_or_else(|| input_error("--tune needs --gt"))?;
        let replay: Vec<ReplayScene> = scenes
            .iter()
            .zip(gt)
            .map(|(s, g)| (s.proposals.clone(), g.lanes()))
            .collect();
        let cfg = BlendSearchConfig {
            iterations,
            matching: MatchConfig {
                canvas: image_size,
                ..MatchConfig::default()
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let result = run_blend_inner_search(&replay, &BlendParamSpace::for_image(image_size), &cfg, &mut rng)
            .map_err(|e: BlendSearchError| input_error(e.to_string()))?;
        params = result.params.clone();
        tuned = Some(result);
    }
    if args.plain_nms {
        params = params.plain_nms();
    }

    let predictions: Vec<Vec<LaneLine>> = scenes
        .iter()
        .map(|s| {
            if args.plain_nms {
                plain_line_nms(&s.proposals, params.score_threshold, params.group_distance)
            } else {
                postprocess(&s.proposals, &params)
            }
        })
        .collect();

    if let Some(out) = &args.out {
        let mut text = String::new();
        for (s, lanes) in scenes.iter().zip(&predictions) {
            text.push_str(&serde_json::to_string(&PredictionLine {
                version: lanenas_core::data_io::FORMAT_VERSION,
                image_id: &s.image_id,
                lanes: lanes.iter().map(|l| l.xy().collect()).collect(),
                scores: lanes.iter().map(|l| l.score).collect(),
            })?);
            text.push('\n');
        }
        lanenas_core::data_io::write_atomic(out, text.as_bytes())?;
    }
    if let Some(path) = &args.params_out {
        lanenas_core::data_io::write_atomic(path, serde_json::to_string_pretty(&params)?.as_bytes())?;
    }

    let metrics: Option<MetricsReport> = gt.as_ref().map(|gt| {
        let gt_lanes: Vec<Vec<LaneLine>> = gt.iter().map(SceneRecord::lanes).collect();
        let cfg = MatchConfig {
            canvas: image_size,
            ..MatchConfig::default()
        };
        match_and_score(
            predictions.iter().zip(&gt_lanes).map(|(p, g)| (p.as_slice(), g.as_slice())),
            &cfg,
        )
    });
    let lanes_out: usize = predictions.iter().map(Vec::len).sum();
    if as_json {
        return print_json(&json!({
            "scenes": scenes.len(),
            "lanes": lanes_out,
            "params": params,
            "tuned": tuned.as_ref().map(|t| json!({"default_f1": t.default_f1, "f1": t.f1})),
            "metrics": metrics.as_ref().map(|m| json!({
                "tp": m.tp, "fp": m.fp, "fn": m.fn_,
                "precision": m.precision, "recall": m.recall, "f1": m.f1,
            })),
        }));
    }
    println!("{} scenes, {} lanes", scenes.len(), lanes_out);
    if let Some(t) = &tuned {
        println!("tuned F1 {:.4} (defaults {:.4})", t.f1, t.default_f1);
    }
    if let Some(m) = &metrics {
        println!(
            "tp {} fp {} fn {}  precision {:.4} recall {:.4} F1 {:.4}",
            m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1
        );
    }
    Ok(())
}

fn collect_lines_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| DataError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_lines_files(root, &path, out)?;
        } else if path.to_string_lossy().ends_with(".lines.txt") {
            out.push(path.strip_prefix(root).expect("walked from root").to_path_buf());
        }
    }
    Ok(())
}

/// Relative path, predicted lanes and ground-truth lanes of one file.
type LanePair = (PathBuf, Vec<LaneLine>, Vec<LaneLine>);

/// Ground truth and predictions for every `.lines.txt` under `gt`, in
/// sorted path order.
fn load_pairs(args: &EvalArgs) -> Result<Vec<LanePair>> {
    let mut rel = Vec::new();
    collect_lines_files(&args.gt, &args.gt, &mut rel)?;
    rel.sort();
    if rel.is_empty() {
        bail!(input_error(format!("no .lines.txt files under {}", args.gt.display())));
    }
    rel.into_iter()
        .map(|r| {
            let pred_path = args.pred.join(&r);
            if !pred_path.is_file() {
                bail!(input_error(format!("missing prediction file {}", pred_path.display())));
            }
            let gt = read_culane_lines(&args.gt.join(&r))?;
            let pred = read_culane_lines(&pred_path)?;
            Ok((r, pred, gt))
        })
        .collect()
}

fn eval_f1(args: &EvalArgs, as_json: bool) -> Result<()> {
    if !(args.width > 0.0) {
        bail!(input_error("--width must be positive"));
    }
    let pairs = load_pairs(args)?;
    let cfg = MatchConfig {
        iou_threshold: args.iou,
        lane_width: args.width,
        canvas: args.canvas,
    };
    let report = match_and_score(pairs.iter().map(|(_, p, g)| (p.as_slice(), g.as_slice())), &cfg);
    if as_json {
        let files: Vec<String> = pairs.iter().map(|(r, _, _)| r.display().to_string()).collect();
        return print_json(&json!({"files": files, "report": report}));
    }
    println!("scenes     {}", pairs.len());
    println!("tp fp fn   {} {} {}", report.tp, report.fp, report.fn_);
    println!("precision  {:.4}", report.precision);
    println!("recall     {:.4}", report.recall);
    println!("F1         {:.4}", report.f1);
    Ok(())
}

fn eval_tusimple(args: &EvalArgs, as_json: bool) -> Result<()> {
    let pairs = load_pairs(args)?;
    let accuracy = tusimple_accuracy(
        pairs.iter().map(|(_, p, g)| (p.as_slice(), g.as_slice())),
        args.tolerance,
    );
    if as_json {
        return print_json(&json!({
            "scenes": pairs.len(),
            "tolerance": args.tolerance,
            "accuracy": accuracy,
        }));
    }
    println!("scenes    {}", pairs.len());
    println!("accuracy  {accuracy:.4}");
    Ok(())
}

fn gen_synth(args: &SynthArgs, as_json: bool) -> Result<()> {
    let cfg = SynthSceneConfig {
        num_scenes: args.num_scenes,
        curvature: (args.curvature_min, args.curvature_max),
        remote_noise: args.noise,
        lanes_per_scene: args.lanes,
        seed: args.seed,
        ..SynthSceneConfig::default()
    };
    cfg.validate().map_err(input_error)?;
    fs::create_dir_all(&args.out).map_err(|e| DataError::io(&args.out, e))?;
    let (proposals, scenes): (Vec<ProposalScene>, Vec<SceneRecord>) = generate_synthetic_scenes(&cfg)
        .into_iter()
        .map(|(p, s)| {
            (
                ProposalScene {
                    image_id: s.image_id.clone(),
                    proposals: p,
                },
                s,
            )
        })
        .unzip();
    let proposals_path = args.out.join("proposals.jsonl");
    let gt_path = args.out.join("gt.jsonl");
    write_proposals(&proposals_path, &proposals)?;
    write_scenes(&gt_path, &scenes)?;
    if as_json {
        return print_json(&json!({
            "scenes": scenes.len(),
            "proposals": proposals_path,
            "gt": gt_path,
            "config": cfg,
        }));
    }
    println!(
        "{} scenes written to {} and {}",
        scenes.len(),
        proposals_path.display(),
        gt_path.display()
    );
    Ok(())
}

fn pareto_export(archive: &Path, out: Option<&Path>, as_json: bool) -> Result<()> {
    let archive = load_archive(archive)?;
    if let Some(out) = out {
        export_front_csv(out, &archive)?;
    }
    if as_json {
        let front: Vec<_> = archive
            .sorted_front()
            .into_iter()
            .map(|c| {
                json!({
                    "eval_id": c.eval_id,
                    "encoding": c.arch.backbone.encode(),
                    "heads_at": c.arch.fusion.heads_at,
                    "flops": c.flops,
                    "score": c.score,
                })
            })
            .collect();
        return print_json(&json!({"front": front}));
    }
    if out.is_none() {
        print!("{}", front_csv(&archive));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let j = cli.json;
    match &cli.command {
        Command::ParseArch { encoding } => parse_arch(encoding, j),
        Command::Cost(args) => cost(args, j),
        Command::SpaceSize {
            no_heads,
            fusion_layers,
        } => space_size(*no_heads, *fusion_layers, j),
        Command::Search(args) => search(args, j),
        Command::Blend(args) => blend(args, j),
        Command::EvalF1(args) => eval_f1(args, j),
        Command::EvalTusimple(args) => eval_tusimple(args, j),
        Command::GenSynth(args) => gen_synth(args, j),
        Command::ParetoExport { archive, out } => pareto_export(archive, out.as_deref(), j),
    }
}

/// 2 for bad input data, 3 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let data = err.chain().any(|e| {
        e.is::<DataError>()
            || e.is::<ArchError>()
            || e.is::<LaneError>()
            || e.is::<InputError>()
            || e.is::<serde_json::Error>()
            || e.is::<std::io::Error>()
    });
    if data {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err);
            ExitCode::from(exit_code(&err))
        }
    }
}
