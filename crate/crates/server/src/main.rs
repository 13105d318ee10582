use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use tutorgen_core::course_io::{export_course, import_course, CourseFormat};
use tutorgen_core::model::{validate_course, ValidationMode};
use tutorgen_server::auth::{generate_token, PrincipalSeed, Principals, Role};
use tutorgen_server::config::{ServeArgs, Settings, StoreLayout};
use tutorgen_server::courses::{CourseRecord, CourseRepository};
use tutorgen_server::router;

#[derive(Parser)]
#[command(name = "tutorgen", version, about = "Personalized course content service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Import a course file into a store root.
    Import {
        file: PathBuf,
        #[arg(long)]
        store_root: PathBuf,
        #[arg(long)]
        principals: PathBuf,
        /// Display name of the owning teacher; optional if there is only one.
        #[arg(long)]
        teacher: Option<String>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Publish after import (requires the course to pass publish checks).
        #[arg(long)]
        publish: bool,
    },
    /// Write a stored course to a file or stdout.
    Export {
        course_id: String,
        #[arg(long)]
        store_root: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a course file; exits 1 if it has violations.
    Validate {
        file: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long, value_enum, default_value = "publish")]
        mode: Mode,
    },
    /// Create a principals file with fresh random tokens.
    InitPrincipals {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "teacher", default_values = ["Teacher"])]
        teachers: Vec<String>,
        #[arg(long = "student", default_values = ["Student"])]
        students: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for CourseFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => CourseFormat::Json,
            Format::Csv => CourseFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Draft,
    Publish,
}

fn file_format(path: &Path, explicit: Option<Format>) -> anyhow::Result<CourseFormat> {
    match explicit {
        Some(f) => Ok(f.into()),
        None => CourseFormat::detect(&path.to_string_lossy())
            .with_context(|| format!("cannot tell the format of {}; pass --format", path.display())),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    match run(Cli::parse().command).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

async fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Serve(args) => {
            let settings = Settings::from_args(&args)?;
            let state = settings.build_state()?;
            let listener = tokio::net::TcpListener::bind(settings.listen)
                .await
                .with_context(|| format!("binding {}", settings.listen))?;
            tracing::info!(
                listen = %listener.local_addr()?,
                workers = settings.workers,
                stub = matches!(settings.provider, tutorgen_server::config::ProviderChoice::Stub { .. }),
                "serving"
            );
            axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Import {
            file,
            store_root,
            principals,
            teacher,
            format,
            publish,
        } => {
            let principals = Principals::load(&principals)?;
            let teachers: Vec<_> = principals
                .iter()
                .filter(|p| p.role == Role::Teacher)
                .filter(|p| teacher.as_deref().is_none_or(|n| p.display_name == n))
                .collect();
            let owner = match teachers.as_slice() {
                [one] => one.id.clone(),
                [] => bail!("no matching teacher in the principals file"),
                _ => bail!("several teachers match; pass --teacher NAME"),
            };
            let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let course = import_course(&bytes, file_format(&file, format)?)?;
            if publish {
                let report = validate_course(&course, ValidationMode::Publish);
                if !report.is_valid() {
                    bail!("course cannot be published: {report}");
                }
            }
            let repo = CourseRepository::open(StoreLayout::new(&store_root).courses)?;
            let id = course.id.clone();
            repo.insert(CourseRecord {
                course,
                published: publish,
                owner,
            })?;
            println!("imported {id}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Export {
            course_id,
            store_root,
            format,
            out,
        } => {
            let repo = CourseRepository::open(StoreLayout::new(&store_root).courses)?;
            let record = repo
                .get(&course_id)
                .with_context(|| format!("no course '{course_id}' in {}", store_root.display()))?;
            let bytes = export_course(&record.course, format.into());
            match out {
                Some(path) => {
                    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?
                }
                None => {
                    use std::io::Write;
                    std::io::stdout().write_all(&bytes)?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { file, format, mode } => {
            let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let course = match import_course(&bytes, file_format(&file, format)?) {
                Ok(c) => c,
                Err(e) => {
                    println!("{}: {e}", e.location());
                    return Ok(ExitCode::FAILURE);
                }
            };
            let mode = match mode {
                Mode::Draft => ValidationMode::Draft,
                Mode::Publish => ValidationMode::Publish,
            };
            let report = validate_course(&course, mode);
            if report.is_valid() {
                println!("ok: {} ({} sections)", course.id, course.sections.len());
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &report.violations {
                    println!("{}: {}", v.path, v.message);
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::InitPrincipals {
            out,
            teachers,
            students,
        } => {
            if out.exists() {
                bail!("{} already exists", out.display());
            }
            let seeds: Vec<_> = teachers
                .into_iter()
                .map(|n| (n, Role::Teacher))
                .chain(students.into_iter().map(|n| (n, Role::Student)))
                .map(|(display_name, role)| PrincipalSeed {
                    token: generate_token(),
                    role,
                    display_name,
                })
                .collect();
            std::fs::write(&out, Principals::to_toml(&seeds))
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} principals to {}", seeds.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
