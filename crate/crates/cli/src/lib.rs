//! The `cloudatelier` operator command line.

pub mod error;
pub mod serve;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cloudatelier_core::collab::{Project, User, CONFIG_ENV};
use cloudatelier_core::ingest::open_source;
use cloudatelier_core::segment::{run_byproduct, ByproductConfig};
use cloudatelier_core::{
    build_index, export_layer, import_layer, Action, BuildConfig, CollabError, IndexManifest,
    LayerFormat, Payload, ProjectConfig, Role, SegmentConfig, SessionOp,
};
use uuid::Uuid;

pub use crate::error::{CliError, EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE};
use crate::serve::COLLAB_DIR;

#[derive(Debug, Parser)]
#[command(
    name = "cloudatelier",
    version,
    about = "Convert, inspect and serve survey point clouds"
)]
struct Cli {
    /// Emit logs as newline-delimited JSON.
    #[arg(long, global = true)]
    json_logs: bool,
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a project config and create its data directories.
    Init(InitArgs),
    /// Build the octree index and the byproduct cloud from a LAS, PLY or XYZ file.
    Convert(ConvertArgs),
    /// Print a summary of an index from its manifest.
    Info { dir: PathBuf },
    /// Re-run plane segmentation over an existing index.
    Segment(SegmentArgs),
    /// Write one layer of a project as measure/1 JSON or DXF.
    ExportLayer(ExportArgs),
    /// Validate a measure/1 JSON layer and optionally import it into a project.
    ImportLayer(ImportArgs),
    /// Serve tiles over HTTP and the collab protocol over TCP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct InitArgs {
    /// Path of the config file to create.
    config: PathBuf,
    #[arg(long)]
    project_id: String,
    /// Data directory, relative to the config file.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// A user as name:token:role, role one of curator, contributor, viewer.
    #[arg(long = "user", required = true, value_parser = parse_user)]
    users: Vec<User>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    input: PathBuf,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Root spacing is the root cube diagonal divided by this.
    #[arg(long)]
    spacing_div: Option<f64>,
    #[arg(long)]
    node_capacity: Option<usize>,
    #[arg(long)]
    max_depth: Option<u32>,
    /// Inputs above this many points are sharded first.
    #[arg(long)]
    chunk_threshold: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Points kept in the byproduct cloud.
    #[arg(long, default_value_t = ByproductConfig::default().target_points)]
    byproduct_points: u64,
    /// Seed for decimation and segmentation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    dir: PathBuf,
    #[arg(long, default_value_t = SegmentConfig::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = SegmentConfig::default().min_inliers)]
    min_inliers: u32,
    #[arg(long, default_value_t = SegmentConfig::default().max_planes)]
    max_planes: u32,
    #[arg(long, default_value_t = SegmentConfig::default().iterations_per_plane)]
    iterations: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ByproductConfig::default().target_points)]
    byproduct_points: u64,
}

#[derive(Debug, Args)]
struct ExportArgs {
    layer: Uuid,
    /// Project config; falls back to the CLOUDATELIER_CONFIG variable.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: LayerFormat,
    /// Output file; stdout when omitted.
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImportArgs {
    file: PathBuf,
    /// Project config; falls back to the CLOUDATELIER_CONFIG variable.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Token of the importing user. Without it the file is only validated.
    #[arg(long)]
    token: Option<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Project config; falls back to the CLOUDATELIER_CONFIG variable.
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    http: u16,
    #[arg(long, default_value_t = 9070)]
    collab: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
}

fn parse_user(s: &str) -> Result<User, String> {
    let parts: Vec<&str> = s.splitn(3, ':').collect();
    let [name, token, role] = parts[..] else {
        return Err(format!("expected name:token:role, got {s:?}"));
    };
    let role = match role {
        "curator" => Role::Curator,
        "contributor" => Role::Contributor,
        "viewer" => Role::Viewer,
        other => return Err(format!("unknown role {other:?}")),
    };
    Ok(User {
        name: name.into(),
        token: token.into(),
        role,
    })
}

/// Runs the command line with process stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let detail = if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                "a subcommand is required".to_string()
            } else {
                usage_detail(&e.to_string())
            };
            let _ = writeln!(err, "{}", CliError::usage(detail));
            return EXIT_USAGE;
        }
    };
    init_logging(cli.json_logs, cli.verbose);
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            tracing::debug!(code = %e.code, "command failed");
            let _ = writeln!(err, "{e}");
            e.exit
        }
    }
}

/// The clap message without its usage and help trailer, on one line.
fn usage_detail(rendered: &str) -> String {
    let body: Vec<&str> = rendered
        .lines()
        .take_while(|l| !l.starts_with("Usage:"))
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("For more information"))
        .collect();
    body.join(" ").trim_start_matches("error: ").to_string()
}

fn init_logging(json: bool, verbose: u8) {
    use tracing_subscriber::EnvFilter;
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr);
    // A second in-process run keeps the first subscriber.
    let _ = if json {
        builder.json().try_init()
    } else {
        builder.try_init()
    };
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Init(a) => init(a, out),
        Command::Convert(a) => convert(a, out),
        Command::Info { dir } => info(&dir, out),
        Command::Segment(a) => segment(a, out),
        Command::ExportLayer(a) => export(a, out),
        Command::ImportLayer(a) => import(a, out),
        Command::Serve(a) => serve(a, out),
    }
}

/// Prefixes the error detail with the path it concerns.
fn at_path(path: &Path, e: impl Into<CliError>) -> CliError {
    let mut e = e.into();
    e.detail = format!("{}: {}", path.display(), e.detail);
    e
}

fn config_path(given: Option<PathBuf>) -> Result<PathBuf, CliError> {
    given
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            CliError::usage(format!("no project config given and {CONFIG_ENV} is unset"))
        })
}

fn init(a: InitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.config.exists() {
        return Err(CliError::data(
            "IO",
            format!("{} already exists", a.config.display()),
        ));
    }
    let cfg = ProjectConfig::new(a.project_id, a.data_dir, a.users);
    cfg.validate()?;
    cfg.save(&a.config)?;
    let loaded = ProjectConfig::load(&a.config)?;
    fs::create_dir_all(loaded.data_dir.join(COLLAB_DIR))?;
    writeln!(
        out,
        "project {} initialized, data in {}",
        loaded.project_id,
        loaded.data_dir.display()
    )?;
    Ok(())
}

fn convert(a: ConvertArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let base = BuildConfig::default();
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    let cfg = BuildConfig {
        root_spacing_divisor: a.spacing_div.unwrap_or(base.root_spacing_divisor),
        node_capacity: a.node_capacity.unwrap_or(base.node_capacity),
        max_depth: a.max_depth.unwrap_or(base.max_depth),
        chunk_threshold: a.chunk_threshold.unwrap_or(base.chunk_threshold),
        threads,
        ..base
    };
    cfg.validate()?;
    let byproduct = ByproductConfig {
        target_points: a.byproduct_points,
        segment: SegmentConfig {
            seed: a.seed,
            ..SegmentConfig::default()
        },
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::data("IO", e))?;
    let (manifest, planes) = pool.install(|| -> Result<_, CliError> {
        let (stream, summary) = open_source(&a.input).map_err(|e| at_path(&a.input, e))?;
        tracing::info!(points = summary.point_count, input = %a.input.display(), "converting");
        let manifest = build_index(stream, &summary, &a.out, &cfg)?;
        let result = run_byproduct(&a.out, &manifest, &byproduct)?;
        Ok((manifest, result.planes.len()))
    })?;
    writeln!(
        out,
        "converted {} points into {} nodes, {} planes",
        manifest.total_points,
        manifest.nodes.len(),
        planes
    )?;
    Ok(())
}

/// Summary line computed from `manifest.json` alone.
pub fn info_line(manifest: &IndexManifest) -> String {
    format!(
        "points: {}, nodes: {}, spacing: {}",
        manifest.total_points,
        manifest.nodes.len(),
        manifest.root_spacing
    )
}

fn info(dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = IndexManifest::load(dir).map_err(|e| at_path(dir, e))?;
    writeln!(out, "{}", info_line(&manifest))?;
    Ok(())
}

fn segment(a: SegmentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = IndexManifest::load(&a.dir).map_err(|e| at_path(&a.dir, e))?;
    let cfg = ByproductConfig {
        target_points: a.byproduct_points,
        segment: SegmentConfig {
            epsilon: a.epsilon,
            min_inliers: a.min_inliers,
            max_planes: a.max_planes,
            iterations_per_plane: a.iterations,
            seed: a.seed,
        },
    };
    let result = run_byproduct(&a.dir, &manifest, &cfg)?;
    let assigned = result.labels.iter().filter(|l| **l != 0).count();
    writeln!(
        out,
        "planes: {}, points: {}, assigned: {}",
        result.planes.len(),
        result.points.len(),
        assigned
    )?;
    Ok(())
}

fn open_project(config: Option<PathBuf>) -> Result<(ProjectConfig, Project), CliError> {
    let cfg = ProjectConfig::load(&config_path(config)?)?;
    let project = Project::open(
        &cfg.data_dir.join(COLLAB_DIR),
        &cfg.project_id,
        cfg.snapshot_every,
    )?;
    Ok((cfg, project))
}

fn export(a: ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, project) = open_project(a.config)?;
    let entry = project
        .state()
        .layer(&a.layer)
        .ok_or_else(|| CliError::from(CollabError::UnknownTarget(format!("layer {}", a.layer))))?;
    let bytes = export_layer(&entry.document, a.format);
    match a.out {
        Some(path) => fs::write(path, bytes)?,
        None => out.write_all(&bytes)?,
    }
    Ok(())
}

fn import(a: ImportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let format = match a.file.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("dxf") => LayerFormat::Dxf,
        _ => LayerFormat::Json,
    };
    let bytes = fs::read(&a.file).map_err(|e| at_path(&a.file, e))?;
    let doc = import_layer(&bytes, format)?;
    let Some(token) = a.token else {
        writeln!(out, "valid layer {} ({} series)", doc.id, doc.series.len())?;
        return Ok(());
    };
    let (cfg, mut project) = open_project(a.config)?;
    let actor = cfg
        .authenticate(&token)
        .ok_or_else(|| CliError::from(CollabError::Unauthorized("unknown token".into())))?;
    let client = format!("cli:{}", actor.name);
    let seq = project.state().clients.get(&client).copied().unwrap_or(0) + 1;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::data("ValidationFailed", e))?;
    let op = SessionOp::new(client, seq, Action::ImportLayer, Uuid::nil())
        .with_payload(Payload::Document(value));
    let (applied, _) = project.submit(&actor, &op)?;
    let imported = project
        .state()
        .live
        .values()
        .find(|l| l.document.base_version == applied.seq && l.document.imported_from.is_some())
        .map(|l| l.document.id)
        .expect("import created a layer");
    writeln!(
        out,
        "imported layer {imported} ({} series) at seq {}",
        doc.series.len(),
        applied.seq
    )?;
    Ok(())
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ProjectConfig::load(&config_path(a.config)?)?;
    let running = serve::start(
        &cfg,
        SocketAddr::new(a.bind, a.http),
        SocketAddr::new(a.bind, a.collab),
    )?;
    writeln!(
        out,
        "http: http://{}/projects/{}/manifest.json",
        running.http_addr, cfg.project_id
    )?;
    writeln!(out, "collab: {}", running.collab_addr)?;
    out.flush()?;
    running.wait();
    Ok(())
}
