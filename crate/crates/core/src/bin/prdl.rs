use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prdl_core::bench::{run_distance_ablation, run_loss_comparison, ScenarioKind, ScenarioSpec};
use prdl_core::config::RunConfig;
use prdl_core::fitting::{fit, FitProblem, GeometricLoss, LossWeights, Termination};
use prdl_core::gradcheck::run_grad_check;
use prdl_core::ingest::{prepare_targets, LabelMap, LandmarkSet, Manifest, PartMask};
use prdl_core::metrics::{predicted_masks, render_label_map};
use prdl_core::model::{annotate_parts, format_annotation, load_model, toy_camera, write_model, Camera, ShapeParams};
use prdl_core::prdl::{compute_descriptor, AnchorGrid, DistanceFn, DistanceFunctionSet};
use prdl_core::{svg, Error, PartLabel};

/// Part re-projection distance toolkit.
#[derive(Parser, Debug)]
#[command(name = "prdl", version)]
struct Cli {
    /// Print the default run configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a toy model bundle (model, truth, label map, landmarks, manifest, config).
    GenToy(GenToyArgs),
    /// Fit the model to a label map and write a JSON report.
    Fit(FitArgs),
    /// Finite-difference check of every analytic gradient.
    GradCheck(GradCheckArgs),
    /// Run several losses on a scenario battery.
    Compare(BenchArgs),
    /// Distance-function ablation on a scenario battery.
    Ablate(BenchArgs),
    /// Transfer a part segmentation onto model vertices.
    Annotate(AnnotateArgs),
    /// Export one part's descriptor as a PGM image or CSV table.
    Descriptor(DescriptorArgs),
}

#[derive(Args, Debug)]
struct GenToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    vertices: usize,
    #[arg(long, default_value_t = 8)]
    k_id: usize,
    #[arg(long, default_value_t = 6)]
    k_exp: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    label_map: Option<PathBuf>,
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Initial parameters as JSON; zeros when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight preset: default or prdl-only.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    loss: Option<GeometricLoss>,
    /// Comma list of min,max,ave or "all".
    #[arg(long)]
    functions: Option<DistanceFunctionSet>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Also write overlay.svg and curve.svg.
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    /// Write the table to this file as well.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Test hook: negate one check's analytic gradient.
    #[arg(long, hide = true)]
    inject_sign_flip: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Scenario TOML; defaults to the built-in scenario for --kind.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "toy")]
    kind: KindArg,
    /// Number of seeds (0..n), overriding the scenario.
    #[arg(long)]
    seeds: Option<u64>,
    /// First seed of the battery.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved scenario as TOML and exit.
    #[arg(long)]
    dump_scenario: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum KindArg {
    Toy,
    Disc,
    Decoy,
}

#[derive(Args, Debug)]
struct AnnotateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    label_map: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Parameters the label map was rendered with (JSON); zeros when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DescriptorArgs {
    #[arg(long)]
    label_map: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    part: PartLabel,
    /// Column exported to PGM.
    #[arg(long, default_value = "min")]
    function: DistanceFn,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `.csv` writes every function; anything else writes a PGM.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::NumericalAbort(_)))) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.dump_config {
        print!("{}", RunConfig::default().to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let Some(cmd) = cli.cmd else {
        bail!("no command given; see --help");
    };
    match cmd {
        Cmd::GenToy(a) => gen_toy(a),
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::GradCheck(a) => grad_check(a),
        Cmd::Compare(a) => compare(a, false),
        Cmd::Ablate(a) => compare(a, true),
        Cmd::Annotate(a) => annotate(a),
        Cmd::Descriptor(a) => descriptor(a),
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what}: file not found: {}", path.display());
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            require(p, "config")?;
            RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))
        }
        None => Ok(RunConfig::default()),
    }
}

fn read_params(path: &Path) -> Result<ShapeParams> {
    require(path, "parameters")?;
    let text = fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    // Accept either bare params or a truth file wrapping them.
    let inner = v.get("params").cloned().unwrap_or(v);
    serde_json::from_value(inner).with_context(|| format!("parsing {}", path.display()))
}

fn read_manifest(path: Option<&Path>, map: &LabelMap) -> Result<Manifest> {
    match path {
        Some(p) => {
            require(p, "manifest")?;
            Ok(Manifest::load(p).with_context(|| format!("reading manifest {}", p.display()))?)
        }
        None => Ok(Manifest::standard(map.width, map.height)),
    }
}

fn read_label_map(path: &Path) -> Result<LabelMap> {
    require(path, "label map")?;
    LabelMap::read(path).with_context(|| format!("reading label map {}", path.display()))
}

fn gen_toy(a: GenToyArgs) -> Result<ExitCode> {
    let mut spec = ScenarioSpec::toy();
    spec.n_vertices = a.vertices;
    spec.k_id = a.k_id;
    spec.k_exp = a.k_exp;
    spec.width = a.width;
    spec.height = a.height;
    let sc = spec.build(a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let out = |name: &str| a.out.join(name);
    let seed_line = format!("# seed {}\n", a.seed);

    write(&out("model.txt"), format!("{seed_line}{}", write_model(&sc.model)))?;
    let truth = serde_json::json!({ "seed": a.seed, "width": sc.width, "height": sc.height, "params": sc.truth });
    write(&out("truth.json"), serde_json::to_string_pretty(&truth)? + "\n")?;
    let seed_text = a.seed.to_string();
    write(&out("label_map.png"), sc.label_map.encode_png_with_text(Some(("seed", &seed_text)))?)?;
    write(&out("landmarks.txt"), format!("{seed_line}{}", sc.landmarks.to_text()))?;
    write(&out("manifest.txt"), format!("{seed_line}{}", Manifest::standard(sc.width, sc.height).to_text()))?;

    // Neutral face at three times the resolution, one pixel per vertex, for
    // annotation transfer.
    let (aw, ah) = (3 * sc.width, 3 * sc.height);
    let acam = toy_camera(aw, ah);
    let amap = render_label_map(&sc.model, &acam, &sc.model.zero_params(), aw, ah, 0.0)?;
    write(&out("annotate.png"), amap.encode_png_with_text(Some(("seed", &seed_text)))?)?;

    let mut cfg = RunConfig {
        camera: Some(sc.camera),
        weights: sc.weights.clone(),
        fit: sc.config.clone(),
        preprocess: sc.preprocess.clone(),
        ..RunConfig::default()
    };
    cfg.annotate.camera = Some(acam);
    cfg.paths.model = Some("model.txt".into());
    cfg.paths.label_map = Some("label_map.png".into());
    cfg.paths.landmarks = Some("landmarks.txt".into());
    cfg.paths.manifest = Some("manifest.txt".into());
    cfg.paths.out = Some("fit".into());
    write(&out("config.toml"), format!("{seed_line}{}", cfg.to_toml()))?;
    println!("seed {}: wrote toy bundle to {}", a.seed, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn union_mask(masks: &std::collections::BTreeMap<PartLabel, PartMask>, w: usize, h: usize) -> Result<PartMask> {
    let mut u = PartMask::new(w, h)?;
    for m in masks.values() {
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) {
                    u.set(x, y, true);
                }
            }
        }
    }
    Ok(u)
}

fn cmd_fit(a: FitArgs) -> Result<ExitCode> {
    let mut cfg = load_config(a.config.as_deref())?;
    let p = &mut cfg.paths;
    for (slot, v) in [
        (&mut p.model, a.model),
        (&mut p.label_map, a.label_map),
        (&mut p.landmarks, a.landmarks),
        (&mut p.manifest, a.manifest),
        (&mut p.out, a.out),
    ] {
        if v.is_some() {
            *slot = v;
        }
    }
    if let Some(s) = a.seed {
        cfg.fit.seed = s;
    }
    if let Some(w) = &a.weights {
        cfg.weights = LossWeights::preset(w)?;
    }
    if let Some(l) = a.loss {
        cfg.fit.loss = l;
    }
    if let Some(f) = a.functions {
        cfg.fit.functions = f;
    }
    if let Some(n) = a.max_iters {
        cfg.fit.max_iters = n;
    }
    if let Some(lr) = a.lr {
        cfg.fit.lr = lr;
    }
    cfg.validate()?;

    let model_path = cfg.paths.model.clone().ok_or_else(|| anyhow!("no model given (--model or paths.model)"))?;
    let map_path = cfg.paths.label_map.clone().ok_or_else(|| anyhow!("no label map given (--label-map or paths.label_map)"))?;
    let out_dir = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("."));
    require(&model_path, "model")?;
    let model = load_model(&model_path).with_context(|| format!("reading model {}", model_path.display()))?;
    let map = read_label_map(&map_path)?;
    let manifest = read_manifest(cfg.paths.manifest.as_deref(), &map)?;
    let landmarks = match &cfg.paths.landmarks {
        Some(p) => {
            require(p, "landmarks")?;
            prdl_core::ingest::load_landmarks(p).with_context(|| format!("reading landmarks {}", p.display()))?
        }
        None => LandmarkSet::default(),
    };
    let camera = cfg.camera.unwrap_or_else(|| toy_camera(map.width, map.height));
    let init = match &a.init {
        Some(p) => read_params(p)?,
        None => model.zero_params(),
    };

    let targets = prepare_targets(&map, &manifest, &cfg.preprocess)?;
    let eval = map.part_masks(&manifest)?;
    let problem = FitProblem::new(targets, Some(eval.clone()), landmarks, &cfg.fit)?;
    let report = fit(&model, &camera, &problem, &cfg.fit, &cfg.weights, &init)?;

    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write(&out_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    write(&out_dir.join("curve.csv"), report.loss_curve_csv())?;
    if a.svg {
        let pred = predicted_masks(&model, &camera, &report.final_params, map.width, map.height, cfg.fit.splat_radius)?;
        let t = union_mask(&eval, map.width, map.height)?;
        let p = union_mask(&pred, map.width, map.height)?;
        write(&out_dir.join("overlay.svg"), svg::mask_overlay(&t, &p, 4))?;
        let series = vec![(cfg.fit.loss.name().to_string(), report.iterations.iter().map(|r| r.total).collect())];
        write(&out_dir.join("curve.svg"), svg::loss_curves(&series, &format!("seed {}", report.seed)))?;
    }
    println!(
        "seed {}: {:?} after {} iterations, total loss {:.6e}, mean IoU {:.4}, {:.2}s",
        report.seed,
        report.termination,
        report.iterations.len(),
        report.final_total(),
        report.mean_iou(),
        report.wall_time_s
    );
    if report.termination == Termination::NumericalAbort {
        eprintln!("error: numerical abort: {}", report.message.as_deref().unwrap_or("non-finite loss"));
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn grad_check(a: GradCheckArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let mut gc = cfg.grad_check;
    if let Some(s) = a.seed {
        gc.seed = s;
    }
    if let Some(n) = a.instances {
        gc.instances = n;
    }
    if a.inject_sign_flip.is_some() {
        gc.flip_sign = a.inject_sign_flip;
    }
    let t = Instant::now();
    let report = run_grad_check(&gc)?;
    let table = report.to_table();
    print!("{table}");
    println!("{:.1}s", t.elapsed().as_secs_f64());
    if let Some(p) = &a.out {
        write(p, &table)?;
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn compare(a: BenchArgs, ablation: bool) -> Result<ExitCode> {
    let mut spec = match &a.scenario {
        Some(p) => {
            require(p, "scenario")?;
            let text = fs::read_to_string(p)?;
            toml::from_str::<ScenarioSpec>(&text).with_context(|| format!("parsing scenario {}", p.display()))?
        }
        None => ScenarioSpec::for_kind(match a.kind {
            KindArg::Toy => ScenarioKind::Toy,
            KindArg::Disc => ScenarioKind::DisplacedDisc,
            KindArg::Decoy => ScenarioKind::Decoy,
        }),
    };
    if let Some(n) = a.seeds {
        spec.seeds = (a.seed..a.seed + n).collect();
    }
    if let Some(n) = a.max_iters {
        spec.fit.max_iters = n;
    }
    if a.dump_scenario {
        print!("{}", toml::to_string(&spec)?);
        return Ok(ExitCode::SUCCESS);
    }
    spec.validate()?;
    let scenarios = spec.build_all()?;
    let t = Instant::now();
    let out_dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let seeds = format!("# seeds={:?}\n", spec.seeds);
    if ablation {
        let table = run_distance_ablation(&scenarios, a.jobs)?;
        write(&out_dir.join("ablation.csv"), format!("{seeds}{}", table.to_csv()))?;
        let json = serde_json::json!({ "seeds": spec.seeds, "rows": table.rows });
        write(&out_dir.join("ablation.json"), serde_json::to_string_pretty(&json)? + "\n")?;
        for r in &table.rows {
            println!("{{{}}}: mean IoU {:.4}", r.functions.names(), r.mean_iou);
        }
    } else {
        let table = run_loss_comparison(&scenarios, &spec.losses, a.jobs)?;
        write(&out_dir.join("comparison.csv"), format!("{seeds}{}", table.to_csv()))?;
        let json = serde_json::json!({ "seeds": spec.seeds, "kind": table.kind, "rows": table.rows });
        write(&out_dir.join("comparison.json"), serde_json::to_string_pretty(&json)? + "\n")?;
        let first = spec.seeds[0];
        let series: Vec<(String, Vec<f64>)> =
            table.rows.iter().filter(|r| r.seed == first).map(|r| (r.loss.name().to_string(), r.curve.clone())).collect();
        write(&out_dir.join("curves.svg"), svg::loss_curves(&series, &format!("seed {first}")))?;
        for (loss, iou) in table.mean_iou_by_loss() {
            println!("{:<20} mean IoU {:.4}", loss.name(), iou);
        }
        let wall: f64 = table.rows.iter().map(|r| r.wall_time_s).sum();
        println!("fit time {:.1}s over {} runs", wall, table.rows.len());
    }
    println!("elapsed {:.1}s; tables in {}", t.elapsed().as_secs_f64(), out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn annotate(a: AnnotateArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let model_path = a.model.or(cfg.paths.model.clone()).ok_or_else(|| anyhow!("no model given"))?;
    let map_path = a.label_map.ok_or_else(|| anyhow!("no label map given (--label-map)"))?;
    require(&model_path, "model")?;
    let model = load_model(&model_path).with_context(|| format!("reading model {}", model_path.display()))?;
    let map = read_label_map(&map_path)?;
    let manifest = read_manifest(a.manifest.as_deref(), &map)?;
    let camera: Camera = cfg.annotate.camera.or(cfg.camera).unwrap_or_else(|| toy_camera(map.width, map.height));
    let params = match &a.params {
        Some(p) => read_params(p)?,
        None => model.zero_params(),
    };
    let targets = map.to_point_sets(&manifest)?;
    let k = a.k.unwrap_or(cfg.annotate.k);
    let parts = annotate_parts(&model, &camera, &params, &targets, k, cfg.annotate.visibility_slack)?;
    write(&a.out, format!("# seed {}\n{}", a.seed, format_annotation(&parts)))?;
    let matched = parts.iter().filter(|(p, idx)| model.part_indices(**p) == idx.as_slice()).count();
    println!("annotated {} vertices; {matched}/{} parts identical to the model file", parts.values().map(Vec::len).sum::<usize>(), parts.len());
    Ok(ExitCode::SUCCESS)
}

fn descriptor(a: DescriptorArgs) -> Result<ExitCode> {
    let map = read_label_map(&a.label_map)?;
    let manifest = read_manifest(a.manifest.as_deref(), &map)?;
    let sets = map.to_point_sets(&manifest)?;
    let set = sets.get(a.part);
    if set.is_empty() {
        bail!("part {} is empty in {}", a.part, a.label_map.display());
    }
    let anchors = AnchorGrid::lattice(map.width, map.height)?;
    let csv = a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let fns = if csv { DistanceFunctionSet::all() } else { DistanceFunctionSet::single(a.function) };
    let d = compute_descriptor(set, &anchors, &fns)?;
    if csv {
        write(&a.out, format!("# seed={}\n{}", a.seed, d.to_csv(&anchors)))?;
    } else {
        let pgm = d.to_pgm(&anchors, a.function)?;
        // Comment line right after the magic number.
        let mut bytes = format!("P5\n# seed {}\n", a.seed).into_bytes();
        bytes.extend_from_slice(&pgm[3..]);
        write(&a.out, bytes)?;
    }
    println!("{} points of {}; wrote {}", set.len(), a.part, a.out.display());
    Ok(ExitCode::SUCCESS)
}
