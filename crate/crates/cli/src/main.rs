use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use iccr::channel_model::{classify_condition, AntennaConfig, FeedbackKind, FeedbackMode};
use iccr::dof_regions::{
    achievable_region_no_cr_feedback, cognitive_ic_bounds, region_csi, region_no, region_outer_delayed, region_output,
    region_perfect_siso, region_shannon, sum_dof, sum_dof_comparison, symmetric_point, to_f64, Rational,
    RationalPolytope2D, SumDofRow,
};
use iccr::montecarlo::{
    estimate_dof_sweep, reference_sum_dof, run_batch, write_batch_csv, NoiseSetting, TrialBatchSpec,
};
use iccr::schemes::build_scheme;

const USAGE: u8 = 2;
const VERIFY_FAILED: u8 = 1;

#[derive(Parser)]
#[command(
    name = "iccr",
    version,
    about = "Interference channel with a cognitive relay under delayed feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a DoF region: halfspaces, vertices and maximum sum DoF.
    Region {
        #[command(flatten)]
        antennas: Antennas,
        #[arg(long, value_enum, default_value_t = Regime::Csi)]
        regime: Regime,
        #[command(flatten)]
        output: Output,
    },
    /// Run noiseless (or fixed-SNR) decoding trials and report statistics.
    Simulate {
        #[command(flatten)]
        antennas: Antennas,
        #[command(flatten)]
        feedback: Feedback,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated SNR points in dB; noiseless when absent.
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Check that the scheme decodes and sits on its region's symmetric vertex.
    Verify {
        #[command(flatten)]
        antennas: Antennas,
        #[command(flatten)]
        feedback: Feedback,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Sum rate against SNR, with the log-SNR slope as a DoF estimate.
    Sweep {
        #[command(flatten)]
        antennas: Antennas,
        #[command(flatten)]
        feedback: Feedback,
        #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![30.0, 40.0, 50.0, 60.0])]
        snr: Vec<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Sum DoF of the broadcast channel, the ICCR and the interference channel.
    Table2 {
        #[arg(long, requires_all = ["mc", "mr"], conflicts_with = "grid")]
        mt: Option<usize>,
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long)]
        mr: Option<usize>,
        /// Every configuration with 1..=N antennas per node.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=16))]
        grid: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Lower and upper region bounds for the cognitive interference channel.
    CognitiveIc {
        #[arg(long)]
        mt: usize,
        #[arg(long)]
        mcog: usize,
        #[arg(long)]
        mr: usize,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args, Clone, Copy)]
struct Antennas {
    #[arg(long)]
    mt: usize,
    #[arg(long)]
    mc: usize,
    #[arg(long)]
    mr: usize,
}

#[derive(Args, Clone, Copy)]
struct Feedback {
    #[arg(long, value_enum, default_value_t = Mode::Csit)]
    mode: Mode,
    /// The relay gets no feedback.
    #[arg(long)]
    no_relay_feedback: bool,
}

#[derive(Args, Clone)]
struct Output {
    /// Output file; defaults to `$ICCR_OUT_DIR/<command>.<format>` when that
    /// variable is set, otherwise stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy)]
enum Mode {
    Csit,
    Output,
    Shannon,
    None,
}

#[derive(ValueEnum, Clone, Copy)]
enum Regime {
    Csi,
    Output,
    Shannon,
    No,
    Perfect,
    Outer,
    NoCrFeedback,
}

impl Regime {
    fn label(self) -> &'static str {
        match self {
            Regime::Csi => "csi",
            Regime::Output => "output",
            Regime::Shannon => "shannon",
            Regime::No => "no",
            Regime::Perfect => "perfect",
            Regime::Outer => "outer",
            Regime::NoCrFeedback => "no-cr-feedback",
        }
    }
}

/// Errors the user can fix by changing flags.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl Antennas {
    fn config(self) -> Result<AntennaConfig> {
        AntennaConfig::new(self.mt, self.mc, self.mr).map_err(|e| usage(e.to_string()))
    }
}

impl Feedback {
    fn mode(self) -> Result<FeedbackMode> {
        let kind = match self.mode {
            Mode::Csit => FeedbackKind::DelayedCsit,
            Mode::Output => FeedbackKind::DelayedOutput,
            Mode::Shannon => FeedbackKind::DelayedShannon,
            Mode::None => FeedbackKind::NoFeedback,
        };
        if kind == FeedbackKind::NoFeedback {
            return Ok(FeedbackMode::everywhere(kind));
        }
        FeedbackMode::new(kind, !self.no_relay_feedback).map_err(|e| usage(e.to_string()))
    }
}

fn rational(x: Rational) -> Value {
    json!({"exact": x.to_string(), "value": to_f64(x)})
}

fn region_json(config: Option<AntennaConfig>, label: &str, poly: &RationalPolytope2D) -> Value {
    let mut v = poly.to_json();
    v["regime"] = json!(label);
    if let Some(c) = config {
        v["config"] = json!(c.to_string());
        v["condition"] = json!(classify_condition(c).to_string());
    }
    v["max_sum_dof"] = json!(sum_dof(poly).to_string());
    v["max_sum_dof_float"] = json!(to_f64(sum_dof(poly)));
    v["symmetric_point"] = rational(symmetric_point(poly));
    v
}

fn region_csv(poly: &RationalPolytope2D) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["d_a", "d_b", "d_a_float", "d_b_float"])?;
    for &(a, b) in poly.vertices() {
        w.write_record([
            a.to_string(),
            b.to_string(),
            to_f64(a).to_string(),
            to_f64(b).to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn table_csv(rows: &[SumDofRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SumDofRow::CSV_HEADER)?;
    for row in rows {
        w.write_record(row.csv_record())?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn emit(
    output: &Output,
    command: &str,
    json_body: impl FnOnce() -> Value,
    csv_body: impl FnOnce() -> Result<String>,
) -> Result<()> {
    let text = match output.format {
        Format::Json => serde_json::to_string_pretty(&json_body())? + "\n",
        Format::Csv => csv_body()?,
    };
    let path = output.out.clone().or_else(|| {
        std::env::var_os("ICCR_OUT_DIR").map(|dir| {
            let ext = if output.format == Format::Json { "json" } else { "csv" };
            PathBuf::from(dir).join(format!("{command}.{ext}"))
        })
    });
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn select_region(config: AntennaConfig, regime: Regime) -> Result<RationalPolytope2D> {
    Ok(match regime {
        Regime::Csi => region_csi(config),
        Regime::Output => region_output(config),
        Regime::Shannon => region_shannon(config),
        Regime::No => region_no(config),
        Regime::Outer => region_outer_delayed(config),
        Regime::NoCrFeedback => achievable_region_no_cr_feedback(config),
        Regime::Perfect => {
            if config != AntennaConfig::siso() {
                return Err(usage(
                    "the perfect-CSIT region is defined for --mt 1 --mc 1 --mr 1 only",
                ));
            }
            region_perfect_siso()
        }
    })
}

/// The region a simulated scheme is compared against.
fn scheme_region(config: AntennaConfig, mode: FeedbackMode) -> RationalPolytope2D {
    if mode.kind == FeedbackKind::NoFeedback {
        region_no(config)
    } else if !mode.relay_has_feedback {
        achievable_region_no_cr_feedback(config)
    } else {
        region_csi(config)
    }
}

/// Returns whether verification passed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Region {
            antennas,
            regime,
            output,
        } => {
            let config = antennas.config()?;
            let poly = select_region(config, regime)?;
            emit(
                &output,
                "region",
                || region_json(Some(config), regime.label(), &poly),
                || region_csv(&poly),
            )?;
        }
        Command::Simulate {
            antennas,
            feedback,
            trials,
            seed,
            snr,
            output,
        } => {
            let spec = TrialBatchSpec {
                config: antennas.config()?,
                mode: feedback.mode()?,
                trials: trials as usize,
                base_seed: seed,
                noise: if snr.is_empty() {
                    NoiseSetting::Noiseless
                } else {
                    NoiseSetting::SnrDb(snr)
                },
            };
            let stats = run_batch(&spec)?;
            emit(
                &output,
                "simulate",
                || serde_json::to_value(&stats).expect("plain data"),
                || {
                    let mut buf = Vec::new();
                    write_batch_csv(&mut buf, &stats)?;
                    Ok(String::from_utf8(buf)?)
                },
            )?;
        }
        Command::Verify {
            antennas,
            feedback,
            trials,
            seed,
            output,
        } => {
            let config = antennas.config()?;
            let mode = feedback.mode()?;
            let plan = build_scheme(config, mode);
            let stats = run_batch(&TrialBatchSpec::noiseless(config, mode, trials as usize, seed))?.remove(0);
            let per_user = Rational::new(plan.symbols_per_user as i64, plan.frame_length as i64);
            let vertex = symmetric_point(&scheme_region(config, mode));
            let all_decoded = stats.decodable == stats.trials;
            let pass = all_decoded && per_user == vertex;
            emit(
                &output,
                "verify",
                || {
                    json!({
                        "config": config.to_string(),
                        "mode": mode.label(),
                        "condition": plan.condition.to_string(),
                        "symbols_per_user": plan.symbols_per_user,
                        "frame_length": plan.frame_length,
                        "per_user_dof": rational(per_user),
                        "region_symmetric_vertex": rational(vertex),
                        "trials": stats.trials,
                        "decodable": stats.decodable,
                        "pass": pass,
                    })
                },
                || {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record([
                        "config",
                        "mode",
                        "per_user_dof",
                        "region_symmetric_vertex",
                        "trials",
                        "decodable",
                        "pass",
                    ])?;
                    w.write_record([
                        config.to_string(),
                        mode.label(),
                        per_user.to_string(),
                        vertex.to_string(),
                        stats.trials.to_string(),
                        stats.decodable.to_string(),
                        pass.to_string(),
                    ])?;
                    Ok(String::from_utf8(w.into_inner()?)?)
                },
            )?;
            return Ok(pass);
        }
        Command::Sweep {
            antennas,
            feedback,
            trials,
            seed,
            snr,
            output,
        } => {
            let config = antennas.config()?;
            let mode = feedback.mode()?;
            let spec = TrialBatchSpec {
                config,
                mode,
                trials: trials as usize,
                base_seed: seed,
                noise: NoiseSetting::SnrDb(snr),
            };
            let result = estimate_dof_sweep(&spec).map_err(|e| usage(e.to_string()))?;
            debug_assert_eq!(result.region_sum_dof, reference_sum_dof(config, mode));
            emit(
                &output,
                "sweep",
                || result.to_json(),
                || {
                    let mut buf = Vec::new();
                    result.write_csv(&mut buf)?;
                    Ok(String::from_utf8(buf)?)
                },
            )?;
        }
        Command::Table2 {
            mt,
            mc,
            mr,
            grid,
            output,
        } => {
            let configs: Vec<AntennaConfig> = match (mt, mc, mr, grid) {
                (Some(t), Some(c), Some(r), None) => {
                    vec![AntennaConfig::new(t, c, r).map_err(|e| usage(e.to_string()))?]
                }
                (None, None, None, Some(n)) => {
                    let n = n as usize;
                    (1..=n)
                        .flat_map(|t| {
                            (1..=n).flat_map(move |c| (1..=n).map(move |r| AntennaConfig { m_t: t, m_c: c, m_r: r }))
                        })
                        .collect()
                }
                _ => return Err(usage("table2 needs either --mt, --mc and --mr, or --grid")),
            };
            let rows: Vec<SumDofRow> = configs.into_iter().map(sum_dof_comparison).collect();
            emit(
                &output,
                "table2",
                || {
                    if rows.len() == 1 {
                        rows[0].to_json()
                    } else {
                        Value::Array(rows.iter().map(SumDofRow::to_json).collect())
                    }
                },
                || table_csv(&rows),
            )?;
        }
        Command::CognitiveIc { mt, mcog, mr, output } => {
            if mt == 0 || mr == 0 {
                return Err(usage("antenna counts must be positive"));
            }
            let (lower, upper) = cognitive_ic_bounds(mt, mcog, mr).map_err(|e| usage(e.to_string()))?;
            emit(
                &output,
                "cognitive-ic",
                || {
                    json!({
                        "m_t": mt,
                        "m_cog": mcog,
                        "m_r": mr,
                        "lower": region_json(Some(AntennaConfig { m_t: mt, m_c: mcog - mt, m_r: mr }), "csi", &lower),
                        "upper": region_json(Some(AntennaConfig { m_t: mt, m_c: mcog, m_r: mr }), "csi", &upper),
                    })
                },
                || {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record([
                        "bound",
                        "max_sum_dof",
                        "max_sum_dof_float",
                        "symmetric_point",
                        "vertices",
                    ])?;
                    for (name, poly) in [("lower", &lower), ("upper", &upper)] {
                        let verts: Vec<String> = poly.vertices().iter().map(|(a, b)| format!("{a}:{b}")).collect();
                        w.write_record([
                            name.to_string(),
                            sum_dof(poly).to_string(),
                            to_f64(sum_dof(poly)).to_string(),
                            symmetric_point(poly).to_string(),
                            verts.join(" "),
                        ])?;
                    }
                    Ok(String::from_utf8(w.into_inner()?)?)
                },
            )?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(VERIFY_FAILED),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(USAGE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(VERIFY_FAILED)
        }
    }
}
