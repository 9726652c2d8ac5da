//! `splatseg` command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use splatseg_core::config::ENV_PREFIX;
use splatseg_core::io::checkpoint;
use splatseg_core::io::manifest::{load_scene, LoadedScene, Split};
use splatseg_core::io::{rawmap, save_image, save_mask_pgm, RgbImage};
use splatseg_core::language::InstanceTable;
use splatseg_core::pipeline::{self, EmbedderSpec, Metric};
use splatseg_core::raster::{render, render_instance_ids, Channels};
use splatseg_core::synth::{generate, SynthSpec};
use splatseg_core::{Error, Precision, SceneConfig};

#[derive(Parser, Debug)]
#[command(name = "splatseg", version, about = "Instance segmentation of Gaussian splatting scenes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override `section.key=value`; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Render and accumulate in 64-bit floats.
    #[arg(long = "f64", global = true)]
    f64: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Optimize a Gaussian cloud from a scene's initial points.
    Train(TrainArgs),
    /// Cluster a trained cloud into instances.
    Cluster(ClusterArgs),
    /// Attach language embeddings to instances.
    Embed(EmbedArgs),
    /// Rank instances against a text query.
    Query(QueryArgs),
    /// Render channel maps of a cloud from a scene's cameras.
    Render(RenderArgs),
    /// Score a cloud and its instances against ground truth.
    Eval(EvalArgs),
    /// Train, cluster, embed and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    objects: usize,
    /// JSON synthetic scene spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    train_views: Option<usize>,
    #[arg(long)]
    test_views: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Cut each training mask region into at most this many parts.
    #[arg(long)]
    over_segment: Option<usize>,
    /// Erode training mask regions by this many pixels.
    #[arg(long)]
    erode: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Scene manifest or `synth://<n>obj`.
    #[arg(long)]
    scene: String,
    #[arg(long)]
    out: PathBuf,
    /// Iteration budget; overrides `trainer.iterations`.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    cloud: PathBuf,
    /// Instance table, rewritten in place.
    #[arg(long)]
    instances: PathBuf,
    /// `mock` or a precomputed embedding index (JSON).
    #[arg(long, default_value = "mock")]
    embedder: String,
    /// Also write every crop (image and mask) into this directory.
    #[arg(long)]
    export_crops: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    text: String,
    #[arg(long, default_value = "mock")]
    embedder: String,
    /// Directory for the result JSON and silhouettes.
    #[arg(long)]
    out: PathBuf,
    /// Scene whose views the silhouettes are rendered from.
    #[arg(long, requires = "cloud")]
    scene: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    cloud: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of color, alpha, depth, feature, variance, ids.
    #[arg(long, default_value = "color")]
    channels: String,
    /// Which views to render: train, test or all.
    #[arg(long, default_value = "all")]
    views: String,
    /// Instance table, needed for the `ids` channel.
    #[arg(long)]
    instances: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of psnr, miou3d, ap, query, or `all`.
    #[arg(long, default_value = "all")]
    metrics: String,
    #[arg(long, default_value = "mock")]
    embedder: String,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Scene manifest or `synth://<n>obj`.
    #[arg(long)]
    scene: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    /// Comma-separated subset of psnr, miou3d, ap, query, or `all`.
    #[arg(long = "eval", default_value = "all")]
    metrics: String,
    #[arg(long, default_value = "mock")]
    embedder: String,
}

/// Failure kinds: usage errors exit with 2, everything else with 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(format!("config error: {m}")),
            e => Failure::Runtime(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(Failure::Usage(e.render().to_string())),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let (kind, message, code) = match f {
        Failure::Usage(m) => ("usage", m, 2),
        Failure::Runtime(e) => ("runtime", e.to_string(), 1),
    };
    let r = ErrorReport {
        error: kind,
        message: message.trim_end().to_string(),
    };
    eprintln!("{}", serde_json::to_string(&r).expect("error report serializes"));
    ExitCode::from(code)
}

fn load_config(g: &Global) -> CliResult<SceneConfig> {
    let mut cfg = match &g.config {
        Some(p) => SceneConfig::from_toml(&read_input(p)?)?,
        None => SceneConfig::default(),
    };
    cfg = cfg.with_env(std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)))?;
    let mut pairs = Vec::with_capacity(g.set.len());
    for s in &g.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        pairs.push((k.trim(), v.trim()));
    }
    cfg = cfg.with_overrides(pairs)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if g.f64 {
        cfg.raster.precision = Precision::F64;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_input(p: &Path) -> CliResult<String> {
    check_input(p)?;
    Ok(fs::read_to_string(p)?)
}

fn check_input(p: &Path) -> CliResult<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input {} does not exist", p.display())))
    }
}

fn check_scene_arg(s: &str) -> CliResult<()> {
    if s.starts_with("synth://") {
        SynthSpec::from_uri(s).map(|_| ()).map_err(|e| Failure::Usage(e.to_string()))
    } else {
        check_input(Path::new(s))
    }
}

fn embedder_spec(s: &str) -> CliResult<EmbedderSpec> {
    let spec: EmbedderSpec = s.parse()?;
    if let EmbedderSpec::File(p) = &spec {
        check_input(p)?;
    }
    Ok(spec)
}

fn metrics(s: &str) -> CliResult<Vec<Metric>> {
    Metric::parse_list(s).map_err(|e| Failure::Usage(e.to_string()))
}

fn sha256_file(p: &Path) -> CliResult<String> {
    let digest = Sha256::digest(fs::read(p)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Record of one invocation, written as `<out>/run_<command>.json`.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config_hash: String,
    seed: u64,
    threads: usize,
    /// SHA-256 of every input file, keyed by path.
    inputs: BTreeMap<String, String>,
    result: serde_json::Value,
}

struct Run {
    command: &'static str,
    cfg: SceneConfig,
    inputs: Vec<PathBuf>,
}

impl Run {
    fn input(&mut self, p: &Path) -> CliResult<()> {
        check_input(p)?;
        self.inputs.push(p.to_path_buf());
        Ok(())
    }

    /// Adds a manifest and every file it references.
    fn scene_inputs(&mut self, manifest: &Path, scene: &LoadedScene) -> CliResult<()> {
        self.input(manifest)?;
        let m = &scene.manifest;
        let mut rel: Vec<&String> = Vec::new();
        for v in &m.views {
            rel.push(&v.image);
            rel.extend(v.mask.iter());
            rel.extend(v.gt_mask.iter());
        }
        rel.extend(m.init_points.iter());
        rel.extend(m.gt_points.iter());
        for r in rel {
            self.input(&scene.resolve(r))?;
        }
        Ok(())
    }

    /// Writes the run manifest and the resolved config into `out`.
    fn finish(self, out: &Path, result: impl Serialize) -> CliResult<()> {
        fs::create_dir_all(out)?;
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let m = RunManifest {
            command: self.command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            threads: rayon::current_num_threads(),
            inputs,
            result: serde_json::to_value(result).map_err(Error::from)?,
        };
        fs::write(out.join("config.toml"), self.cfg.to_toml())?;
        let path = out.join(format!("run_{}.json", self.command));
        fs::write(path, serde_json::to_string_pretty(&m).map_err(Error::from)?)?;
        Ok(())
    }
}

/// Prints to stdout; a closed pipe is not an error.
fn print_json(v: &impl Serialize) -> CliResult<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).map_err(Error::from)?;
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(Error::InvalidParameter(e.to_string())))?;
    }
    let cfg = load_config(&cli.global)?;
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Cluster(_) => "cluster",
        Command::Embed(_) => "embed",
        Command::Query(_) => "query",
        Command::Render(_) => "render",
        Command::Eval(_) => "eval",
        Command::Pipeline(_) => "pipeline",
    };
    let mut run = Run {
        command: name,
        cfg,
        inputs: cli.global.config.iter().cloned().collect(),
    };
    match cli.command {
        Command::Synth(a) => synth(run, a),
        Command::Train(a) => {
            check_scene_arg(&a.scene)?;
            if let Some(n) = a.iters {
                run.cfg.trainer.iterations = n;
            }
            let manifest = pipeline::resolve_scene(&a.scene, &a.out, run.cfg.seed)?;
            let scene = load_scene(&manifest)?;
            run.scene_inputs(&manifest, &scene)?;
            let summary = pipeline::train_stage(&scene, &run.cfg, &a.out)?;
            print_json(&summary)?;
            run.finish(&a.out, summary)
        }
        Command::Cluster(a) => {
            run.input(&a.cloud)?;
            let summary = pipeline::cluster_stage(&a.cloud, &run.cfg, &a.out)?;
            print_json(&summary)?;
            run.finish(&a.out, summary)
        }
        Command::Embed(a) => {
            let spec = embedder_spec(&a.embedder)?;
            check_input(&a.scene)?;
            let scene = load_scene(&a.scene)?;
            run.scene_inputs(&a.scene, &scene)?;
            run.input(&a.cloud)?;
            run.input(&a.instances)?;
            if let EmbedderSpec::File(p) = &spec {
                run.input(p)?;
            }
            let embedder = spec.open()?;
            let mut result = serde_json::json!({});
            if let Some(dir) = &a.export_crops {
                let cloud = checkpoint::load(&a.cloud)?;
                let table = InstanceTable::load(&a.instances)?;
                result["crops"] = pipeline::export_crops(&scene, &cloud, &table, &run.cfg, dir)?.len().into();
            }
            let n = pipeline::embed_stage(&scene, &a.cloud, &a.instances, embedder.as_ref(), &run.cfg)?;
            result["embedded"] = n.into();
            print_json(&result)?;
            let out = a.instances.parent().map(Path::to_path_buf).unwrap_or_default();
            run.finish(&out, result)
        }
        Command::Query(a) => query(run, a),
        Command::Render(a) => render_cmd(run, a),
        Command::Eval(a) => {
            let ms = metrics(&a.metrics)?;
            let spec = embedder_spec(&a.embedder)?;
            check_input(&a.scene)?;
            let scene = load_scene(&a.scene)?;
            run.scene_inputs(&a.scene, &scene)?;
            run.input(&a.cloud)?;
            run.input(&a.instances)?;
            let cloud = checkpoint::load(&a.cloud)?;
            let table = InstanceTable::load(&a.instances)?;
            let embedder = spec.open()?;
            let m = pipeline::eval_stage(&scene, &cloud, &table, Some(embedder.as_ref()), &run.cfg, &ms)?;
            fs::create_dir_all(&a.out)?;
            fs::write(a.out.join("metrics.json"), serde_json::to_string_pretty(&m).map_err(Error::from)?)?;
            print_json(&m)?;
            run.finish(&a.out, m)
        }
        Command::Pipeline(a) => {
            check_scene_arg(&a.scene)?;
            let ms = metrics(&a.metrics)?;
            let spec = embedder_spec(&a.embedder)?;
            if let Some(n) = a.iters {
                run.cfg.trainer.iterations = n;
            }
            if !a.scene.starts_with("synth://") {
                let p = Path::new(&a.scene);
                run.scene_inputs(p, &load_scene(p)?)?;
            }
            if let EmbedderSpec::File(p) = &spec {
                run.input(p)?;
            }
            let report = pipeline::run_pipeline(&a.scene, &run.cfg, &a.out, &spec, &ms)?;
            print_json(&report)?;
            run.finish(&a.out, report)
        }
    }
}

fn synth(run: Run, a: SynthArgs) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&read_input(p)?).map_err(|e| Failure::Usage(format!("bad synth spec: {e}")))?,
        None => SynthSpec {
            objects: a.objects,
            ..SynthSpec::default()
        },
    };
    spec.seed = run.cfg.seed;
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut spec.train_views, a.train_views);
    set(&mut spec.test_views, a.test_views);
    set(&mut spec.width, a.width);
    set(&mut spec.height, a.height);
    set(&mut spec.over_segment, a.over_segment);
    if let Some(e) = a.erode {
        spec.erode = e;
    }
    let scene = generate(&spec).map_err(|e| match e {
        Error::InvalidParameter(m) => Failure::Usage(m),
        e => Failure::Runtime(e),
    })?;
    let manifest = scene.write(&a.out)?;
    let result = serde_json::json!({
        "manifest": manifest.display().to_string(),
        "objects": scene.objects.iter().map(|o| o.name()).collect::<Vec<_>>(),
        "gaussians": scene.cloud.len(),
    });
    print_json(&result)?;
    run.finish(&a.out, result)
}

fn query(mut run: Run, a: QueryArgs) -> CliResult<()> {
    let spec = embedder_spec(&a.embedder)?;
    run.input(&a.instances)?;
    let table = InstanceTable::load(&a.instances)?;
    let embedder = spec.open()?;
    let q = pipeline::query_stage(&table, &a.text, embedder.as_ref(), &run.cfg)?;
    fs::create_dir_all(&a.out)?;
    let mut silhouettes = Vec::new();
    if let (Some(scene_path), Some(cloud_path)) = (&a.scene, &a.cloud) {
        check_input(scene_path)?;
        let scene = load_scene(scene_path)?;
        run.scene_inputs(scene_path, &scene)?;
        run.input(cloud_path)?;
        let cloud = checkpoint::load(cloud_path)?;
        for v in &scene.views {
            let mask = pipeline::selection_silhouette(
                &cloud,
                &table.labels,
                &q.selected,
                v,
                run.cfg.language.silhouette_threshold,
                &run.cfg.raster,
            )?;
            let name = format!("silhouette_{:03}.pgm", v.camera.view_id);
            save_mask_pgm(&a.out.join(&name), v.camera.width, v.camera.height, &mask)?;
            silhouettes.push(name);
        }
    }
    let result = serde_json::json!({
        "text": q.text,
        "ranking": q.ranking.iter().map(|(i, s)| serde_json::json!({"instance": i, "score": s})).collect::<Vec<_>>(),
        "selected": q.selected,
        "silhouettes": silhouettes,
    });
    fs::write(a.out.join("query.json"), serde_json::to_string_pretty(&result).map_err(Error::from)?)?;
    print_json(&result)?;
    run.finish(&a.out, result)
}

fn render_cmd(mut run: Run, a: RenderArgs) -> CliResult<()> {
    let mut want = Vec::new();
    for c in a.channels.split(',').map(str::trim).filter(|c| !c.is_empty()) {
        match c {
            "color" | "alpha" | "depth" | "feature" | "variance" | "ids" => want.push(c),
            other => return Err(Failure::Usage(format!("unknown channel {other:?}"))),
        }
    }
    let splits: &[Split] = match a.views.as_str() {
        "train" => &[Split::Train],
        "test" => &[Split::Test],
        "all" => &[Split::Train, Split::Test],
        other => return Err(Failure::Usage(format!("--views must be train, test or all, got {other:?}"))),
    };
    let has = |c: &str| want.contains(&c);
    let table = match (&a.instances, has("ids")) {
        (Some(p), _) => {
            run.input(p)?;
            Some(InstanceTable::load(p)?)
        }
        (None, true) => return Err(Failure::Usage("the ids channel needs --instances".into())),
        (None, false) => None,
    };
    check_input(&a.scene)?;
    let scene = load_scene(&a.scene)?;
    run.scene_inputs(&a.scene, &scene)?;
    run.input(&a.cloud)?;
    let cloud = checkpoint::load(&a.cloud)?;
    fs::create_dir_all(&a.out)?;
    let channels = Channels {
        color: has("color"),
        // Variance is computed from the composited features, so both get written.
        features: has("feature"),
        variance: has("variance"),
    };
    let mut written = Vec::new();
    for v in scene.views.iter().filter(|v| splits.contains(&v.split)) {
        let cam = &v.camera;
        let stem = format!("view_{:03}", cam.view_id);
        let out = render(&cloud, cam, channels, &run.cfg.raster)?;
        let mut write_raw = |name: &str, ch: usize, data: &[f64]| -> CliResult<()> {
            let file = format!("{stem}_{name}.raw");
            rawmap::write(&a.out.join(&file), cam.width, cam.height, ch, data)?;
            written.push(file);
            Ok(())
        };
        if has("alpha") {
            write_raw("alpha", 1, &out.alpha)?;
        }
        if has("depth") {
            write_raw("depth", 1, &out.depth)?;
        }
        if let Some(f) = &out.feature {
            write_raw("feature", out.feature_dim, f)?;
        }
        if let Some(var) = &out.variance {
            write_raw("variance", out.feature_dim, var)?;
        }
        if let Some(c) = out.color {
            let file = format!("{stem}_color.ppm");
            save_image(&a.out.join(&file), &RgbImage::new(cam.width, cam.height, c)?)?;
            written.push(file);
        }
        if let (true, Some(t)) = (has("ids"), &table) {
            if t.gaussian_count != cloud.len() {
                return Err(Failure::Runtime(Error::Contract("instance table belongs to a different cloud".into())));
            }
            let ids = render_instance_ids(&cloud, &t.labels, t.instances.len(), cam, 0.5, &run.cfg.raster)?;
            let px: Vec<u16> = ids.iter().map(|i| i.map_or(0, |i| i as u16 + 1)).collect();
            let file = format!("{stem}_ids.pgm");
            splatseg_core::io::pnm::write_pgm16(&a.out.join(&file), cam.width, cam.height, &px)?;
            written.push(file);
        }
    }
    let result = serde_json::json!({ "files": written });
    print_json(&result)?;
    run.finish(&a.out, result)
}
