//! `mm`: run the studio API, seed the demo story, extract palettes in
//! batch and validate story bundles.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage error.

use clap::{Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use mm_core::palette::{extract_palette, DEFAULT_K};
use mm_core::store::validate_bundle;
use mm_core::{
    BundleStore, Error, GenerationSettings, MetaphorEngine, ProviderConfig, ProviderMode, Providers,
    Studio,
};
use mm_server::ServerConfig;

#[derive(Debug, Parser)]
#[command(name = "mm", version, about = "Metaphor story studio")]
struct Cli {
    /// Directory holding story bundles.
    #[arg(long, global = true, env = "MM_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Provider mode for both chat and image providers.
    #[arg(long, global = true, env = "MM_PROVIDER_MODE", value_parser = parse_mode)]
    provider_mode: Option<ProviderMode>,
    /// Prompt template file replacing the built-in one.
    #[arg(long, global = true, env = "MM_TEMPLATES")]
    templates: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = "MM_BIND", default_value = mm_server::DEFAULT_BIND)]
        bind: SocketAddr,
        /// Allowed CORS origin; repeat for several. Defaults to any origin.
        #[arg(long = "cors-origin", env = "MM_CORS_ORIGINS", value_delimiter = ',')]
        cors_origins: Vec<String>,
        /// Seconds in-flight requests may run after a shutdown signal.
        #[arg(long, default_value_t = mm_server::DEFAULT_DRAIN.as_secs())]
        drain_secs: u64,
    },
    /// Create the example story with mock providers and print its bundle path.
    SeedDemo,
    /// Print the dominant colours of each image.
    Palette {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(short, long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Check a bundle against every story and store invariant.
    ValidateBundle {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Tsv,
    Json,
}

fn parse_mode(s: &str) -> Result<ProviderMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn build_studio(cli: &Cli) -> Result<Studio, Error> {
    let mut cfg = ProviderConfig::from_env()?;
    if let Some(mode) = cli.provider_mode {
        cfg.chat_mode = mode;
        cfg.image_mode = mode;
    }
    let engine = match &cli.templates {
        Some(path) => MetaphorEngine::from_template_file(path)?,
        None => MetaphorEngine::default(),
    };
    Studio::open(
        BundleStore::open(&cli.data_dir)?,
        Providers::from_config(&cfg)?,
        engine,
        GenerationSettings::from_config(&cfg),
    )
}

fn palette_batch(images: &[PathBuf], k: usize, format: Format) -> ExitCode {
    let mut out = std::io::stdout().lock();
    let mut failed = false;
    let mut json = Vec::new();
    if format == Format::Tsv {
        let _ = writeln!(out, "path\thex\tweight");
    }
    for path in images {
        let result = std::fs::read(path)
            .map_err(|e| Error::io(path, e))
            .and_then(|bytes| extract_palette(&bytes, k));
        let shown = path.display();
        match (result, format) {
            (Ok(p), Format::Table) => {
                let _ = writeln!(out, "{shown}");
                for e in &p.entries {
                    let _ = writeln!(out, "  {}  {:.4}", e.color.hex(), e.weight);
                }
            }
            (Ok(p), Format::Tsv) => {
                for e in &p.entries {
                    let _ = writeln!(out, "{shown}\t{}\t{:.4}", e.color.hex(), e.weight);
                }
            }
            (Ok(p), Format::Json) => json.push(serde_json::json!({
                "path": path, "entries": p.entries,
            })),
            (Err(e), fmt) => {
                failed = true;
                let code = e.code();
                match fmt {
                    Format::Table => {
                        let _ = writeln!(out, "{shown}\n  error  {code}: {e}");
                    }
                    Format::Tsv => {
                        let _ = writeln!(out, "{shown}\terror\t{code}");
                    }
                    Format::Json => json.push(serde_json::json!({
                        "path": path, "error": e.to_api_error(),
                    })),
                }
                eprintln!("mm: {shown}: {e}");
            }
        }
    }
    if format == Format::Json {
        let _ = writeln!(out, "{}", serde_json::Value::Array(json));
    }
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn validate(path: &Path, format: Format) -> ExitCode {
    let report = validate_bundle(path);
    let mut out = std::io::stdout().lock();
    match format {
        Format::Json => {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
        }
        Format::Tsv => {
            for v in &report.violations {
                let _ = writeln!(out, "{}\t{v}", report.path.display());
            }
        }
        Format::Table if report.is_clean() => {
            let _ = writeln!(out, "clean: {}", report.path.display());
        }
        Format::Table => {
            let _ = writeln!(
                out,
                "{} violation(s) in {}",
                report.violations.len(),
                report.path.display()
            );
            for v in &report.violations {
                let _ = writeln!(out, "  - {v}");
            }
        }
    }
    if report.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("mm: {e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    match &cli.command {
        Command::Palette { images, k, format } => palette_batch(images, *k, *format),
        Command::ValidateBundle { path, format } => validate(path, *format),
        Command::SeedDemo => {
            let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
            match runtime.block_on(mm_core::demo::seed_demo(&cli.data_dir)) {
                Ok(path) => {
                    println!("{}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Serve {
            bind,
            cors_origins,
            drain_secs,
        } => {
            let studio = match build_studio(&cli) {
                Ok(s) => Arc::new(s),
                Err(e) => return fail(e),
            };
            let cfg = ServerConfig {
                bind: *bind,
                cors_origins: cors_origins.clone(),
                drain: Duration::from_secs(*drain_secs),
            };
            let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
            match runtime.block_on(mm_server::serve(studio, cfg)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
    }
}
