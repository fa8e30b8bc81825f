//! Command-line front end: `synth`, `train-geometry`, `train-appearance`,
//! `export` and `eval`.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{resolve, Override, Profile, RunConfig};

use crate::appearance::{prepare_bake_mesh, render_view, AppearanceLog, AppearanceModel, AppearanceTrainer, BakedModel};
use crate::dataset::{generate_synthetic_scene, load_dataset, save_dataset, Albedo, Dataset, Primitive};
use crate::error::{Error, Result};
use crate::eval::chamfer::DEFAULT_POINTS;
use crate::eval::{chamfer_surfaces, error_map, psnr, ssim, MeshSurface, MetricReport, ViewMetrics};
use crate::geometry::train::{StepLog, TrainedGeometry};
use crate::geometry::{extract_mesh, FieldAt, GeometryTrainer, ScalarField};
use crate::imaging::Image;
use crate::package::{export_package, import_package};
use crate::raster::{read_obj, write_obj, TriangleMesh, UvAtlas};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Unexpected internal failure.
    pub const INTERNAL: u8 = 1;
    /// Bad command line (clap's own code).
    pub const USAGE: u8 = 2;
    /// Inputs or configuration fail validation.
    pub const VALIDATION: u8 = 3;
    /// Training produced a non-finite loss.
    pub const DIVERGENCE: u8 = 4;
    /// Reading or writing a file failed.
    pub const IO: u8 = 5;
    /// A file was read but is malformed or from another format version.
    pub const FORMAT: u8 = 6;
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Capacity(_) | Error::EmptyMesh => exit::VALIDATION,
        Error::Usage(_) => exit::USAGE,
        Error::Divergence { .. } => exit::DIVERGENCE,
        Error::Io { .. } | Error::Image { .. } => exit::IO,
        Error::Format { .. } | Error::Version { .. } => exit::FORMAT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "surfbake", version, about = "Neural surface reconstruction and appearance baking")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; its keys win over conflicting flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Train the appearance stage without the view-aware encoding.
    #[arg(long, global = true)]
    pub no_view_encoding: bool,
    /// Texture channel count K.
    #[arg(long, global = true, value_name = "K")]
    pub channels: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrimitiveArg {
    Sphere,
    Box,
    Bowl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlbedoArg {
    Checker,
    Solid,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render an analytic oracle scene into a dataset directory.
    Synth {
        #[arg(long, value_enum)]
        primitive: Option<PrimitiveArg>,
        #[arg(long, value_enum)]
        albedo: Option<AlbedoArg>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        resolution: Option<u32>,
        /// Phong lobe strength in [0, 1].
        #[arg(long)]
        specular: Option<f64>,
        #[arg(long)]
        shininess: Option<f64>,
    },
    /// Stage 1: fit the SDF field, write a checkpoint, mesh and loss curve.
    TrainGeometry {
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a geometry checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Stage 2: bake texture and shader onto a stage-1 surface.
    TrainAppearance {
        #[arg(long)]
        steps: Option<usize>,
        /// Geometry checkpoint to extract the surface from.
        #[arg(long, value_name = "CKPT", conflicts_with_all = ["mesh", "resume"])]
        geometry: Option<PathBuf>,
        /// External OBJ mesh instead of a geometry checkpoint.
        #[arg(long, value_name = "OBJ", conflicts_with = "resume")]
        mesh: Option<PathBuf>,
        /// Continue from an appearance checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Write a render package from an appearance checkpoint.
    Export {
        #[arg(long, value_name = "CKPT")]
        appearance: PathBuf,
    },
    /// Score renders against a dataset and report PSNR, SSIM and Chamfer.
    Eval {
        #[arg(long, value_name = "DIR", conflicts_with_all = ["appearance", "images"])]
        package: Option<PathBuf>,
        #[arg(long, value_name = "CKPT", conflicts_with = "images")]
        appearance: Option<PathBuf>,
        /// Another dataset whose images are scored frame by frame.
        #[arg(long, value_name = "DIR")]
        images: Option<PathBuf>,
        /// Mesh for the Chamfer distance (default: the model's mesh).
        #[arg(long, value_name = "OBJ")]
        mesh: Option<PathBuf>,
        /// Surface samples per side for the Chamfer distance.
        #[arg(long, default_value_t = DEFAULT_POINTS)]
        chamfer_points: usize,
    },
}

impl Cli {
    /// Flag values as config overrides, in a fixed order.
    pub fn overrides(&self) -> Vec<Override> {
        let g = &self.global;
        let mut o = Vec::new();
        if let Some(s) = g.seed {
            o.push(Override::new("--seed", &["seed"], s as i64));
        }
        if let Some(t) = g.threads {
            o.push(Override::new("--threads", &["threads"], t as i64));
        }
        if let Some(p) = g.profile {
            o.push(Override::from_serde("--profile", &["profile"], &p));
        }
        if g.no_view_encoding {
            o.push(Override::new("--no-view-encoding", &["appearance", "view_encoding"], false));
        }
        if let Some(k) = g.channels {
            o.push(Override::new("--channels", &["appearance", "channels"], k as i64));
        }
        if let Some(d) = &g.out {
            o.push(Override::new("--out", &["out"], d.display().to_string()));
        }
        if let Some(d) = &g.dataset {
            o.push(Override::new("--dataset", &["dataset"], d.display().to_string()));
        }
        match &self.command {
            Command::Synth {
                primitive,
                albedo,
                views,
                resolution,
                specular,
                shininess,
            } => {
                if let Some(p) = primitive {
                    let name = format!("{p:?}").to_lowercase();
                    let prim = Primitive::parse(&name).expect("every primitive flag names a primitive");
                    o.push(Override::from_serde("--primitive", &["scene", "primitive"], &prim));
                }
                if let Some(a) = albedo {
                    let name = format!("{a:?}").to_lowercase();
                    let alb = Albedo::parse(&name).expect("every albedo flag names a pattern");
                    o.push(Override::from_serde("--albedo", &["scene", "albedo"], &alb));
                }
                if let Some(v) = views {
                    o.push(Override::new("--views", &["scene", "views"], *v as i64));
                }
                if let Some(r) = resolution {
                    o.push(Override::new("--resolution", &["scene", "resolution"], *r as i64));
                }
                if let Some(s) = specular {
                    o.push(Override::new("--specular", &["scene", "specular"], *s));
                }
                if let Some(s) = shininess {
                    o.push(Override::new("--shininess", &["scene", "shininess"], *s));
                }
            }
            Command::TrainGeometry { steps: Some(s), .. } => {
                o.push(Override::new("--steps", &["geometry", "steps"], *s as i64));
            }
            Command::TrainAppearance { steps: Some(s), .. } => {
                o.push(Override::new("--steps", &["appearance", "steps"], *s as i64));
            }
            _ => {}
        }
        o
    }

    /// Resolve flags and the config file, logging file-over-flag conflicts.
    pub fn run_config(&self) -> Result<RunConfig> {
        let file = self.global.config.as_deref().map(config::parse_config_file).transpose()?;
        let (cfg, warnings) = resolve(&self.overrides(), file.as_ref())?;
        for w in warnings {
            log::warn!("{w}");
        }
        Ok(cfg)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Usage(format!("{flag} is required (flag or config file)")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn set_threads(n: usize) {
    if n > 0 {
        // Only the first call in a process can size the global pool.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialised; --threads ignored");
        }
    }
}

/// Run one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.run_config()?;
    set_threads(cfg.threads);
    match &cli.command {
        Command::Synth { .. } => cmd_synth(&cfg).map(|_| ()),
        Command::TrainGeometry { resume, .. } => cmd_train_geometry(&cfg, resume.as_deref()),
        Command::TrainAppearance {
            geometry, mesh, resume, ..
        } => cmd_train_appearance(&cfg, geometry.as_deref(), mesh.as_deref(), resume.as_deref()),
        Command::Export { appearance } => cmd_export(&cfg, appearance).map(|_| ()),
        Command::Eval {
            package,
            appearance,
            images,
            mesh,
            chamfer_points,
        } => {
            let source = match (package, appearance, images) {
                (Some(p), _, _) => Source::Package(p.clone()),
                (_, Some(a), _) => Source::Checkpoint(a.clone()),
                (_, _, Some(i)) => Source::Images(i.clone()),
                _ => return Err(Error::Usage("eval needs --package, --appearance or --images".into())),
            };
            cmd_eval(&cfg, &source, mesh.as_deref(), *chamfer_points).map(|_| ())
        }
    }
}

/// Binary entry point: parse, run, map errors to exit codes.
pub fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Dataset> {
    let out = required(&cfg.out, "--out")?;
    let data = generate_synthetic_scene(&cfg.scene)?;
    save_dataset(&data, out)?;
    log::info!(
        "wrote {} frames ({}×{}, depth priors: {}) to {}",
        data.frames.len(),
        cfg.scene.resolution,
        cfg.scene.resolution,
        if data.has_depth_priors() { "yes" } else { "no" },
        out.display()
    );
    Ok(data)
}

pub fn geometry_csv(history: &[StepLog]) -> String {
    let mut s = String::from("step,total,rgb,eikonal,mask,depth,normal,beta,occupancy\n");
    for l in history {
        let t = &l.losses;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            l.step, t.total, t.rgb, t.eikonal, t.mask, t.depth, t.normal, l.beta, l.occupancy
        )
        .unwrap();
    }
    s
}

pub fn appearance_csv(history: &[AppearanceLog]) -> String {
    let mut s = String::from("step,loss,psnr\n");
    for l in history {
        writeln!(s, "{},{},{}", l.step, l.loss, l.psnr()).unwrap();
    }
    s
}

pub const GEOMETRY_CKPT: &str = "geometry.ckpt";
pub const GEOMETRY_MESH: &str = "mesh.obj";
pub const GEOMETRY_CSV: &str = "geometry_loss.csv";
pub const APPEARANCE_CKPT: &str = "appearance.ckpt";
pub const APPEARANCE_CSV: &str = "appearance_psnr.csv";

fn progress_every(total: usize) -> usize {
    (total / 20).max(1)
}

pub fn cmd_train_geometry(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let out = required(&cfg.out, "--out")?;
    let data = load_dataset(required(&cfg.dataset, "--dataset")?)?;
    create_dir(out)?;
    let mut trainer = match resume {
        Some(ckpt) => {
            let t = GeometryTrainer::resume(&data, ckpt)?;
            log::info!("resuming at step {} of {}", t.step, t.config.steps);
            t
        }
        None => GeometryTrainer::new(&data, cfg.geometry.clone())?,
    };
    let every = progress_every(trainer.config.steps);
    let start = Instant::now();
    trainer.run(None, |l| {
        if l.step % every == 0 {
            log::info!(
                "geometry step {:>6}  loss {:.5}  eikonal {:.4}  beta {:.2}  {:.0}s",
                l.step,
                l.losses.total,
                l.losses.eikonal,
                l.beta,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    trainer.save_checkpoint(&out.join(GEOMETRY_CKPT))?;
    write_text(&out.join(GEOMETRY_CSV), &geometry_csv(&trainer.history))?;
    let at = FieldAt {
        field: &trainer.field,
        beta: trainer.final_beta(),
    };
    let mesh = extract_mesh(&at, &trainer.field.bounds, cfg.extract_resolution)?;
    write_obj(&out.join(GEOMETRY_MESH), &mesh, None, None)?;
    log::info!(
        "geometry done in {:.0}s: {} vertices, {} faces → {}",
        start.elapsed().as_secs_f64(),
        mesh.vertex_count(),
        mesh.face_count(),
        out.display()
    );
    Ok(())
}

fn bake_surface(cfg: &RunConfig, dense: &TriangleMesh, field: Option<&dyn ScalarField>) -> Result<(TriangleMesh, UvAtlas)> {
    let (mesh, atlas) = prepare_bake_mesh(dense, field, cfg.appearance.face_budget, cfg.appearance.resolution)?;
    log::info!(
        "bake mesh: {} faces from {}, atlas utilization {:.3}",
        mesh.face_count(),
        dense.face_count(),
        atlas.utilization()
    );
    Ok((mesh, atlas))
}

pub fn cmd_train_appearance(cfg: &RunConfig, geometry: Option<&Path>, mesh: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let out = required(&cfg.out, "--out")?;
    let data = load_dataset(required(&cfg.dataset, "--dataset")?)?;
    create_dir(out)?;
    let baked_in;
    let (surface, atlas);
    let mut trainer = if let Some(ckpt) = resume {
        baked_in = BakedModel::load(ckpt)?;
        let t = AppearanceTrainer::resume(&data, &baked_in)?;
        log::info!("resuming at step {} of {}", t.step, t.config.steps);
        t
    } else {
        (surface, atlas) = match (geometry, mesh) {
            (Some(g), _) => {
                let trained = TrainedGeometry::load(g)?;
                let at = FieldAt {
                    field: &trained.field,
                    beta: trained.beta(),
                };
                let dense = extract_mesh(&at, &trained.field.bounds, cfg.extract_resolution)?;
                bake_surface(cfg, &dense, Some(&at))?
            }
            (None, Some(m)) => bake_surface(cfg, &read_obj(m)?.mesh, None)?,
            (None, None) => {
                return Err(Error::Usage(
                    "train-appearance needs --geometry, --mesh or --resume".into(),
                ))
            }
        };
        AppearanceTrainer::new(&data, &surface, &atlas, cfg.appearance.clone())?
    };
    let every = progress_every(trainer.config.steps);
    let start = Instant::now();
    trainer.run(None, |l| {
        if l.step % every == 0 {
            log::info!(
                "appearance step {:>6}  loss {:.5}  PSNR {:.2} dB  {:.0}s",
                l.step,
                l.loss,
                l.psnr(),
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    trainer.save_checkpoint(&out.join(APPEARANCE_CKPT))?;
    write_text(&out.join(APPEARANCE_CSV), &appearance_csv(&trainer.history))?;
    log::info!("appearance done in {:.0}s → {}", start.elapsed().as_secs_f64(), out.display());
    Ok(())
}

pub fn cmd_export(cfg: &RunConfig, appearance: &Path) -> Result<crate::package::SizeReport> {
    let out = required(&cfg.out, "--out")?;
    let baked = BakedModel::load(appearance)?;
    let report = export_package(&baked.mesh, &baked.atlas, &baked.model, out)?;
    println!("{report}");
    Ok(report)
}

/// What `eval` renders.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Package(PathBuf),
    Checkpoint(PathBuf),
    Images(PathBuf),
}

enum Renderer {
    Model(TriangleMesh, UvAtlas, AppearanceModel),
    Images(Dataset),
}

impl Renderer {
    fn load(source: &Source) -> Result<Self> {
        Ok(match source {
            Source::Package(dir) => {
                let p = import_package(dir)?;
                Renderer::Model(p.mesh, p.atlas, p.model)
            }
            Source::Checkpoint(path) => {
                let b = BakedModel::load(path)?;
                Renderer::Model(b.mesh, b.atlas, b.model)
            }
            Source::Images(dir) => Renderer::Images(load_dataset(dir)?),
        })
    }

    fn render(&self, frame: &crate::dataset::Frame) -> Result<Image> {
        match self {
            Renderer::Model(mesh, atlas, model) => render_view(mesh, atlas, model, &frame.camera),
            Renderer::Images(d) => d
                .frames
                .iter()
                .find(|f| f.name == frame.name)
                .map(|f| f.image.clone())
                .ok_or_else(|| Error::validation(format!("no frame named {} to compare against", frame.name))),
        }
    }

    fn mesh(&self) -> Option<&TriangleMesh> {
        match self {
            Renderer::Model(m, ..) => Some(m),
            Renderer::Images(_) => None,
        }
    }
}

pub fn cmd_eval(cfg: &RunConfig, source: &Source, mesh: Option<&Path>, chamfer_points: usize) -> Result<MetricReport> {
    let start = Instant::now();
    let data = load_dataset(required(&cfg.dataset, "--dataset")?)?;
    let renderer = Renderer::load(source)?;
    let maps_dir = cfg.out.as_ref().map(|o| o.join("error_maps"));
    if let Some(d) = &maps_dir {
        create_dir(d)?;
    }
    let mut views = Vec::with_capacity(data.frames.len());
    for f in &data.frames {
        let img = renderer.render(f)?;
        views.push(ViewMetrics {
            name: f.name.clone(),
            psnr: psnr(&img, &f.image)?,
            ssim: ssim(&img, &f.image)?,
        });
        if let Some(d) = &maps_dir {
            error_map(&img, &f.image)?.save_png(&d.join(format!("{}.png", f.name)))?;
        }
    }
    let external;
    let chamfer_mesh = match mesh {
        Some(p) => {
            external = read_obj(p)?.mesh;
            Some(&external)
        }
        None => renderer.mesh(),
    };
    let chamfer = match (&data.oracle, chamfer_mesh) {
        (Some(spec), Some(m)) => Some(chamfer_surfaces(&MeshSurface::new(m)?, &spec.primitive, chamfer_points)?),
        _ => None,
    };
    let report = MetricReport::new(views, chamfer, start.elapsed().as_secs_f64());
    print!("{}", report.to_text());
    if let Some(out) = &cfg.out {
        report.write_json(&out.join("report.json"))?;
        write_text(&out.join("report.txt"), &report.to_text())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("surfbake").chain(args.iter().copied()))
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::validation("x")),
            exit_code(&Error::Divergence {
                step: 1,
                message: "nan".into(),
            }),
            exit_code(&Error::io("p", std::io::Error::other("x"))),
            exit_code(&Error::format("c", "m")),
        ];
        assert_eq!(codes, [exit::VALIDATION, exit::DIVERGENCE, exit::IO, exit::FORMAT]);
        let mut sorted = codes.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        assert!(!codes.contains(&exit::OK));
    }

    #[test]
    fn bad_primitive_is_a_usage_error() {
        let e = parse(&["synth", "--primitive", "torus", "--out", "x"]).unwrap_err();
        assert_eq!(e.exit_code(), exit::USAGE as i32);
    }

    #[test]
    fn flags_map_to_config() {
        let cli = parse(&["--seed", "4", "--channels", "8", "--no-view-encoding", "train-appearance", "--steps", "7", "--mesh", "m.obj"]).unwrap();
        let cfg = cli.run_config().unwrap();
        assert_eq!(cfg.appearance.channels, 8);
        assert!(!cfg.appearance.view_encoding);
        assert_eq!(cfg.appearance.steps, 7);
        assert_eq!(cfg.appearance.seed, 4);
        let cli = parse(&["synth", "--primitive", "bowl", "--views", "9", "--specular", "0.5"]).unwrap();
        let cfg = cli.run_config().unwrap();
        assert_eq!(cfg.scene.primitive, Primitive::parse("bowl").unwrap());
        assert_eq!((cfg.scene.views, cfg.scene.specular), (9, 0.5));
    }

    #[test]
    fn missing_dataset_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cli = parse(&["train-geometry", "--dataset", dir.path().join("nope").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).unwrap();
        let e = run(&cli).unwrap_err();
        assert!(e.to_string().contains("nope"), "{e}");
        let cli = parse(&["train-geometry"]).unwrap();
        assert!(matches!(run(&cli), Err(Error::Usage(_))));
    }

    #[test]
    fn csv_headers() {
        // Loss sums three channels: 0.03 is a per-channel MSE of 0.01, i.e. 20 dB.
        let csv = appearance_csv(&[AppearanceLog { step: 0, loss: 0.03 }]);
        let psnr: f64 = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
        assert!(csv.starts_with("step,loss,psnr\n0,0.03,"));
        assert!((psnr - 20.0).abs() < 1e-12);
        assert!(geometry_csv(&[]).starts_with("step,total,"));
    }
}
