use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use impactfd_core::impact::{fig1_set, fig1_table, Status};
use impactfd_core::props::{classify, replay_core, CheckerConfig, ClassVerdict};
use impactfd_core::sim::{run, EventKind, Scenario, Trace};
use impactfd_core::wire::{LiveConfig, Sender, WatchStats, Watcher};
use impactfd_core::Event;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Success = 0,
    Violated = 1,
    Usage = 2,
    Inconclusive = 3,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> ExitCode {
        ExitCode::from(e as u8)
    }
}

#[derive(Parser)]
#[command(
    name = "impactfd",
    version,
    about = "Impact-weighted failure detection: simulated and live trust levels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace as JSON Lines
    Sim {
        /// Scenario file (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Seed for the simulator's random generator
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output trace file
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the detector properties on a trace
    Check {
        /// Trace file (JSON Lines)
        #[arg(long)]
        trace: PathBuf,
        /// Trailing window a stabilized property must cover, ms
        #[arg(long = "stab-window")]
        stab_window: Option<u64>,
        /// Trace extent required after the last crash, ms
        #[arg(long = "min-post-crash")]
        min_post_crash: Option<u64>,
        /// Also write the report as JSON to this file
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Recompute the four-process worked example and verify it
    Fig1,
    /// Run a live heartbeat sender or watcher over UDP
    Live {
        mode: LiveMode,
        /// Live config file (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Process to send heartbeats for (send mode)
        #[arg(long)]
        id: Option<String>,
    },
    /// Export the sampled trust level of a trace as CSV
    Export {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LiveMode {
    Send,
    Watch,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim { config, seed, out } => cmd_sim(&config, seed, &out),
        Command::Check {
            trace,
            stab_window,
            min_post_crash,
            report,
        } => cmd_check(&trace, stab_window, min_post_crash, report.as_deref()),
        Command::Fig1 => Ok(cmd_fig1()),
        Command::Live { mode, config, id } => cmd_live(mode, &config, id.as_deref()),
        Command::Export { trace, csv } => cmd_export(&trace, &csv),
    };
    match result {
        Ok(code) => code.into(),
        Err(e) => {
            eprintln!("impactfd: {e:#}");
            Exit::Usage.into()
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_trace(path: &Path) -> Result<Trace> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Trace::deserialize(&bytes).with_context(|| format!("malformed trace {}", path.display()))
}

fn cmd_sim(config: &Path, seed: u64, out: &Path) -> Result<Exit> {
    let scenario = Scenario::from_json(&read_text(config)?)
        .with_context(|| format!("bad scenario {}", config.display()))?;
    let trace =
        run(&scenario, seed).with_context(|| format!("bad scenario {}", config.display()))?;
    fs::write(out, trace.serialize()).with_context(|| format!("cannot write {}", out.display()))?;

    let crashes = trace
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Crash { .. }))
        .count();
    let last = trace.samples().last();
    let final_status = last.map_or_else(
        || "no samples".to_owned(),
        |(t, _, level, status)| format!("final status {status} (level {level} at {t} ms)"),
    );
    println!(
        "{}: {} events, {} crashes, {final_status} -> {}",
        scenario.name,
        trace.events.len(),
        crashes,
        out.display()
    );
    Ok(Exit::Success)
}

fn cmd_check(
    path: &Path,
    stab_window: Option<u64>,
    min_post_crash: Option<u64>,
    report_path: Option<&Path>,
) -> Result<Exit> {
    let trace = read_trace(path)?;
    let mut cfg = CheckerConfig::for_trace(&trace);
    if let Some(w) = stab_window {
        cfg.stab_window_ms = w;
    }
    if let Some(m) = min_post_crash {
        cfg.min_post_crash_ms = m;
    }
    if cfg.stab_window_ms == 0 || cfg.min_post_crash_ms == 0 {
        return Err(anyhow!(
            "--stab-window and --min-post-crash must be positive"
        ));
    }
    let report =
        classify(&trace, &cfg).with_context(|| format!("malformed trace {}", path.display()))?;
    let mismatches =
        replay_core(&trace).with_context(|| format!("malformed trace {}", path.display()))?;

    print!("{}", report.render_table());
    for m in &mismatches {
        println!(
            "replay mismatch at t={}: {} expected {} found {}",
            m.t, m.field, m.expected, m.found
        );
    }
    if let Some(out) = report_path {
        let doc = json!({
            "config": cfg,
            "report": report,
            "replay_mismatches": mismatches,
        });
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        fs::write(out, text).with_context(|| format!("cannot write {}", out.display()))?;
    }

    Ok(
        if !mismatches.is_empty() || report.class == ClassVerdict::Inconsistent {
            Exit::Violated
        } else if report.class == ClassVerdict::Inconclusive {
            Exit::Inconclusive
        } else {
            Exit::Success
        },
    )
}

/// The example's published rows: (trusted processes, trust level, status).
const FIG1_EXPECTED: [(&[&str], &str, Status); 5] = [
    (&["q2", "q3", "q4"], "2.4", Status::Trusted),
    (&["q3", "q4"], "1.6", Status::NotTrusted),
    (&["q1", "q2", "q3"], "2", Status::Trusted),
    (&["q2", "q4"], "1.4", Status::NotTrusted),
    (&["q1", "q2", "q4"], "1.6", Status::NotTrusted),
];

fn braces<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    format!("{{{}}}", ids.collect::<Vec<_>>().join(","))
}

fn cmd_fig1() -> Exit {
    let set = fig1_set();
    let impacts: Vec<String> = set
        .members()
        .iter()
        .map(|(q, i)| format!("I_{q}={i}"))
        .collect();
    println!(
        "S={}  {}",
        braces(set.ids().map(|q| q.as_str())),
        impacts.join("; ")
    );
    println!(
        "{:<3} {:<10} {:<13} {:<12} status",
        "t", "F(t)", "trusted", "trust_level"
    );

    let mut all_match = true;
    for (row, (want_trusted, want_level, want_status)) in fig1_table().iter().zip(FIG1_EXPECTED) {
        let snap = &row.snapshot;
        let label = match snap.status {
            Status::Trusted => "TRUSTED",
            Status::NotTrusted => "NOT TRUSTED",
        };
        let matches = snap.trust_level.to_string() == want_level
            && snap.status == want_status
            && snap
                .trusted
                .iter()
                .map(|q| q.as_str())
                .eq(want_trusted.iter().copied());
        all_match &= matches;
        println!(
            "{:<3} {:<10} {:<13} {:<12} {label}{}",
            snap.at,
            braces(row.failed.iter().map(|q| q.as_str())),
            braces(snap.trusted.iter().map(|q| q.as_str())),
            snap.trust_level.to_string(),
            if matches { "" } else { "   <-- MISMATCH" }
        );
    }
    println!(
        "fault_margin={}; sum(S)={}; trust_limit={}",
        set.fault_margin(),
        set.total(),
        set.trust_limit()
    );
    if all_match {
        println!("all 5 rows match");
        Exit::Success
    } else {
        println!("MISMATCH against the expected table");
        Exit::Violated
    }
}

fn cmd_live(mode: LiveMode, config_path: &Path, id: Option<&str>) -> Result<Exit> {
    let config = LiveConfig::from_json(&read_text(config_path)?)
        .with_context(|| format!("bad live config {}", config_path.display()))?;
    let never = AtomicBool::new(false);
    match mode {
        LiveMode::Send => {
            let id = id.ok_or_else(|| anyhow!("live send needs --id"))?;
            let sender = Sender::new(&config, id)
                .with_context(|| format!("bad live config {}", config_path.display()))?;
            sender.run(&never)?;
        }
        LiveMode::Watch => {
            let watcher = Watcher::bind(&config)?;
            eprintln!("watching on {}", watcher.local_addr()?);
            let mut last_stats = WatchStats::default();
            let stdout = io::stdout();
            watcher.run(&never, |snapshot, stats| {
                let mut out = stdout.lock();
                // A closed stdout only loses reports; monitoring continues.
                let _ = writeln!(out, "{}", Event::sample(snapshot).to_json_line());
                let _ = out.flush();
                if stats.malformed != last_stats.malformed
                    || stats.unknown_sender != last_stats.unknown_sender
                {
                    eprintln!(
                        "ignored datagrams: {} malformed, {} from unknown senders",
                        stats.malformed, stats.unknown_sender
                    );
                }
                last_stats = *stats;
            })?;
        }
    }
    Ok(Exit::Success)
}

fn cmd_export(trace_path: &Path, csv_path: &Path) -> Result<Exit> {
    let trace = read_trace(trace_path)?;
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(csv_path)
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    writer.write_record(["t_ms", "trust_level", "status", "trusted_count"])?;
    for (t, trusted, level, status) in trace.samples() {
        writer.write_record([
            t.to_string(),
            level.to_string(),
            status.to_string(),
            trusted.len().to_string(),
        ])?;
    }
    writer
        .flush()
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    Ok(Exit::Success)
}
