use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use catn_core::evaluator::{role_map, ApMethod, EvalImage, Partition, DEFAULT_IOU_THRESHOLD};
use catn_core::matcher::{external_term, hungarian, pair_terms, Assignment, CostMatrix, CostTerms, GroundTruthTriplet};
use catn_core::pipeline::{
    run_batch, scene_priors, sweep, sweep_csv, ForwardFile, PredictionFile, RunConfig, SweepParam,
};
use catn_core::postprocess::{apply_nms, HoiTriplet, NmsMode};
use catn_core::priors::{
    filter_detections, score_categories, select_priors, CategoryRef, DetectionRecord, EmbeddingTable, PriorCategories,
};
use catn_core::scene::{
    load_table, read_json, synth_embedding_table, synth_scene, to_canonical_json, write_json, Scene, SynthParams,
};
use catn_core::tensor::Matrix;
use catn_core::transformer::{ModelFile, ModelParams};
use catn_core::{CatnError, Result};

#[derive(Parser)]
#[command(name = "catn", version, about = "Category-aware HOI detection pipeline")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes, and optionally an embedding table and model.
    Synth(SynthArgs),
    /// Compute prior categories for a scene or a detection list.
    Priors(PriorsArgs),
    /// Raw per-query predictions for a scene.
    Forward(ModelArgs),
    /// Category-aware assignment of ground truth to predictions.
    Match(MatchArgs),
    /// HOI-NMS or HOI-SoftNMS over a triplet list.
    Nms(NmsArgs),
    /// Role mAP of prediction files against scenes.
    Eval(EvalArgs),
    /// Full pipeline; writes prediction files.
    Run(RunArgs),
    /// Sweep one hyper-parameter over synthetic scenes.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SceneShape {
    #[arg(long)]
    k_obj: Option<u32>,
    #[arg(long)]
    k_verb: Option<u32>,
    #[arg(long, default_value_t = 4)]
    n_gt: usize,
    #[arg(long, default_value_t = 4)]
    h: usize,
    #[arg(long, default_value_t = 4)]
    w: usize,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    n_spurious: usize,
    #[arg(long)]
    human_category: Option<u32>,
}

impl SceneShape {
    fn params(&self, cfg: &RunConfig) -> SynthParams {
        SynthParams {
            k_obj: self.k_obj.unwrap_or(cfg.model.k_obj as u32),
            k_verb: self.k_verb.unwrap_or(cfg.model.k_verb as u32),
            n_gt: self.n_gt,
            h: self.h,
            w: self.w,
            d_feat: cfg.model.d_model,
            detector_noise: self.noise,
            n_spurious: self.n_spurious,
            human_category: self.human_category,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    shape: SceneShape,
    /// Number of scenes (seeds `seed..seed+count`); more than one writes an array.
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Also write a synthetic embedding table here.
    #[arg(long)]
    table_out: Option<PathBuf>,
    /// Also write freshly initialized model parameters here.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct PriorsArgs {
    #[arg(long, conflicts_with = "detections")]
    scene: Option<PathBuf>,
    /// JSON array of detection records.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Take priors from the scene's ground truth.
    #[arg(long, requires = "scene")]
    oracle: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    table: PathBuf,
    /// Model file; initialized from the seed when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    /// Output of `forward`.
    #[arg(long)]
    pred: PathBuf,
    /// Scene whose ground truth is matched.
    #[arg(long)]
    gt: PathBuf,
    /// Prior slots to repeat over queries; defaults to the priors in the prediction file.
    #[arg(long)]
    priors: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliNmsMode {
    Hard,
    Soft,
}

#[derive(Args)]
struct NmsArgs {
    /// JSON array of triplets.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: CliNmsMode,
    #[arg(long)]
    t_iou: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction file or array of them.
    #[arg(long)]
    pred: PathBuf,
    /// Scene or array of scenes, matched to predictions by id.
    #[arg(long)]
    gt: PathBuf,
    /// Category split list; all categories count as non-rare when omitted.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou: f64,
    #[arg(long, default_value_t = false)]
    eleven_point: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Write per-stage timings here.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliSweepParam {
    TDet,
    TCan,
    NC,
    TIou,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: CliSweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Number of synthetic scenes.
    #[arg(long, default_value_t = 20)]
    scenes: u64,
    #[command(flatten)]
    shape: SceneShape,
    /// Embedding table; synthesized from the seed when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Serialize)]
struct PriorsReport {
    priors: PriorCategories,
    scores: Vec<(u32, f64)>,
}

#[derive(Serialize)]
struct PairReport {
    gt: usize,
    query: usize,
    prior: Option<CategoryRef>,
    terms: CostTerms,
    base: f64,
    external: f64,
    total: f64,
}

#[derive(Serialize)]
struct MatchReport {
    assignment: Assignment,
    pairs: Vec<PairReport>,
}

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
    format: Format,
}

impl Ctx {
    fn emit_text(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => std::fs::write(p, text)?,
            None => print!("{text}"),
        }
        Ok(())
    }

    fn emit_json<T: Serialize>(&self, what: &str, value: &T) -> Result<()> {
        if self.format == Format::Csv {
            return Err(CatnError::Config(format!("{what} output is JSON only")));
        }
        self.emit_text(&to_canonical_json(value)?)
    }

    fn model(&self, path: Option<&Path>) -> Result<ModelParams> {
        match path {
            Some(p) => {
                let params = ModelParams::from_file(read_json::<ModelFile>(p)?)?;
                if params.config != self.cfg.model {
                    return Err(CatnError::Config(format!(
                        "{} was built for a different model config",
                        p.display()
                    )));
                }
                Ok(params)
            }
            None => ModelParams::init(&self.cfg.model, self.cfg.seed),
        }
    }
}

fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let scenes = read_json::<OneOrMany<Scene>>(path)?.into_vec();
    for s in &scenes {
        s.validate()?;
    }
    Ok(scenes)
}

fn cmd_synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let p = a.shape.params(&ctx.cfg);
    let seed = ctx.cfg.seed;
    let scenes = (seed..seed + a.count.max(1))
        .map(|s| synth_scene(s, &p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = &a.table_out {
        write_json(path, &synth_embedding_table(seed, p.k_obj, ctx.cfg.model.d_word)?)?;
    }
    if let Some(path) = &a.model_out {
        write_json(path, &ModelParams::init(&ctx.cfg.model, seed)?.to_file())?;
    }
    if scenes.len() == 1 {
        ctx.emit_json("synth", &scenes[0])
    } else {
        ctx.emit_json("synth", &scenes)
    }
}

fn cmd_priors(ctx: &Ctx, a: &PriorsArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let (priors, dets) = match (&a.scene, &a.detections) {
        (Some(path), _) => {
            let scene: Scene = read_json(path)?;
            scene.validate()?;
            let mut c = cfg.clone();
            if a.oracle {
                c.query_init = catn_core::pipeline::QueryInit::Oracle;
            }
            (scene_priors(&scene, &c)?, scene.detections)
        }
        (None, Some(path)) => {
            let dets: Vec<DetectionRecord> = read_json(path)?;
            for d in &dets {
                d.validate(None)?;
            }
            let kept = filter_detections(&dets, cfg.t_det, cfg.drop_category);
            (select_priors(&score_categories(&kept), cfg.t_can, cfg.n_c)?, dets)
        }
        (None, None) => return Err(CatnError::Config("priors needs --scene or --detections".into())),
    };
    let kept = filter_detections(&dets, cfg.t_det, cfg.drop_category);
    let report = PriorsReport {
        priors,
        scores: score_categories(&kept).into_iter().collect(),
    };
    ctx.emit_json("priors", &report)
}

fn load_run_inputs(ctx: &Ctx, a: &ModelArgs) -> Result<(Vec<Scene>, EmbeddingTable, ModelParams)> {
    Ok((
        load_scenes(&a.scene)?,
        load_table(&a.table)?,
        ctx.model(a.model.as_deref())?,
    ))
}

fn cmd_forward(ctx: &Ctx, a: &ModelArgs) -> Result<()> {
    let (scenes, table, params) = load_run_inputs(ctx, a)?;
    let outs = run_batch(&scenes, &table, &ctx.cfg, &params)?;
    let files: Vec<ForwardFile> = outs.iter().map(|o| o.forward_file()).collect();
    if files.len() == 1 {
        ctx.emit_json("forward", &files[0])
    } else {
        ctx.emit_json("forward", &files)
    }
}

fn cmd_match(ctx: &Ctx, a: &MatchArgs) -> Result<()> {
    let fwd: ForwardFile = read_json(&a.pred)?;
    for p in &fwd.predictions {
        p.validate()?;
    }
    let scene: Scene = read_json(&a.gt)?;
    scene.validate()?;
    let n_q = fwd.predictions.len();
    let prior_of_query: Option<Vec<CategoryRef>> = match &a.priors {
        Some(path) => {
            let p: PriorCategories = read_json(path)?;
            p.validate()?;
            Some((0..n_q).map(|j| p.slots[j % p.len()]).collect())
        }
        None => fwd.prior_of_query.clone(),
    };
    if let Some(pq) = &prior_of_query {
        if pq.len() != n_q {
            return Err(CatnError::Validation(format!(
                "{} query priors for {n_q} predictions",
                pq.len()
            )));
        }
    }
    let gts: &[GroundTruthTriplet] = &scene.gts;
    if gts.len() > n_q {
        return Err(CatnError::Infeasible { n_gt: gts.len(), n_q });
    }
    let cfg = &ctx.cfg;
    let mut terms = Vec::with_capacity(gts.len() * n_q);
    let mut values = Matrix::zeros(gts.len(), n_q);
    for (i, gt) in gts.iter().enumerate() {
        for (j, p) in fwd.predictions.iter().enumerate() {
            let t = pair_terms(p, gt)?;
            let ext = prior_of_query
                .as_ref()
                .map_or(0.0, |pq| external_term(pq[j], gt.object_category, cfg.v));
            values.set(i, j, t.weighted(&cfg.weights) + ext);
            terms.push((t, ext));
        }
    }
    let assignment = hungarian(&CostMatrix { values })?;
    let pairs = assignment
        .pairs
        .iter()
        .map(|&(g, q)| {
            let (t, ext) = terms[g * n_q + q];
            let base = t.weighted(&cfg.weights);
            PairReport {
                gt: g,
                query: q,
                prior: prior_of_query.as_ref().map(|pq| pq[q]),
                terms: t,
                base,
                external: ext,
                total: base + ext,
            }
        })
        .collect();
    ctx.emit_json("match", &MatchReport { assignment, pairs })
}

fn triplets_csv(ts: &[HoiTriplet]) -> String {
    let mut s = String::from("hx1,hy1,hx2,hy2,ox1,oy1,ox2,oy2,object_category,verb,score\n");
    for t in ts {
        let b: Vec<String> = t.human_box.iter().chain(&t.object_box).map(f64::to_string).collect();
        s.push_str(&format!(
            "{},{},{},{}\n",
            b.join(","),
            t.object_category,
            t.verb,
            t.score
        ));
    }
    s
}

fn cmd_nms(ctx: &Ctx, a: &NmsArgs) -> Result<()> {
    let triplets: Vec<HoiTriplet> = read_json(&a.input)?;
    for t in &triplets {
        t.validate()?;
    }
    let mode = match a.mode {
        CliNmsMode::Hard => NmsMode::Hard,
        CliNmsMode::Soft => NmsMode::Soft,
    };
    let out = apply_nms(
        &triplets,
        mode,
        a.t_iou.unwrap_or(ctx.cfg.t_iou),
        a.sigma.unwrap_or(ctx.cfg.sigma),
    )?;
    match ctx.format {
        Format::Json => ctx.emit_json("nms", &out),
        Format::Csv => ctx.emit_text(&triplets_csv(&out)),
    }
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let preds = read_json::<OneOrMany<PredictionFile>>(&a.pred)?.into_vec();
    let scenes = load_scenes(&a.gt)?;
    let mut images = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let p = preds.iter().find(|p| p.scene_id == scene.id);
        let preds = p.map(|p| p.triplets.clone()).unwrap_or_default();
        for t in &preds {
            t.validate()?;
        }
        images.push(EvalImage {
            preds,
            gts: scene.gts.iter().flat_map(HoiTriplet::from_ground_truth).collect(),
        });
    }
    if let Some(orphan) = preds.iter().find(|p| !scenes.iter().any(|s| s.id == p.scene_id)) {
        return Err(CatnError::Validation(format!(
            "predictions for unknown scene {:?}",
            orphan.scene_id
        )));
    }
    let partition = match &a.partition {
        Some(p) => read_json::<Partition>(p)?,
        None => Partition::all_nonrare(images.iter().flat_map(|i| &i.gts)),
    };
    let method = if a.eleven_point {
        ApMethod::ElevenPoint
    } else {
        ApMethod::AllPoint
    };
    ctx.emit_json("eval", &role_map(&images, &partition, a.iou, method)?)
}

fn cmd_run(ctx: &Ctx, a: &RunArgs) -> Result<()> {
    let (scenes, table, params) = load_run_inputs(ctx, &a.model)?;
    let outs = run_batch(&scenes, &table, &ctx.cfg, &params)?;
    if let Some(path) = &a.timings {
        let t: Vec<_> = outs
            .iter()
            .map(|o| (o.prediction.scene_id.clone(), o.timings.clone()))
            .collect();
        write_json(path, &t)?;
    }
    let files: Vec<&PredictionFile> = outs.iter().map(|o| &o.prediction).collect();
    if files.len() == 1 {
        ctx.emit_json("run", files[0])
    } else {
        ctx.emit_json("run", &files)
    }
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let p = a.shape.params(cfg);
    let scenes = (cfg.seed..cfg.seed + a.scenes)
        .map(|s| synth_scene(s, &p))
        .collect::<Result<Vec<_>>>()?;
    let table = match &a.table {
        Some(path) => load_table(path)?,
        None => synth_embedding_table(cfg.seed, p.k_obj, cfg.model.d_word)?,
    };
    let params = ctx.model(a.model.as_deref())?;
    let param = match a.param {
        CliSweepParam::TDet => SweepParam::TDet,
        CliSweepParam::TCan => SweepParam::TCan,
        CliSweepParam::NC => SweepParam::NC,
        CliSweepParam::TIou => SweepParam::TIou,
    };
    let rows = sweep(param, &a.values, &scenes, &table, cfg, &params)?;
    match ctx.format {
        Format::Json => ctx.emit_json("sweep", &rows),
        Format::Csv => ctx.emit_text(&sweep_csv(&rows)),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg: RunConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ctx = Ctx {
        cfg,
        out: cli.out,
        format: cli.format,
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Priors(a) => cmd_priors(&ctx, a),
        Command::Forward(a) => cmd_forward(&ctx, a),
        Command::Match(a) => cmd_match(&ctx, a),
        Command::Nms(a) => cmd_nms(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Run(a) => cmd_run(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("catn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
