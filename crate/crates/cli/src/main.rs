use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use atomic_sdn::apb::{build_association, build_collection, build_dissemination, build_reaction};
use atomic_sdn::control::OpportunityKind;
use atomic_sdn::harness::{emit_metrics, run_scenario, scaling_sweep, sweep_csv, ScenarioConfig};
use atomic_sdn::timing::{collect_bound, configuration_bound, react_bound, ProtocolTiming};
use clap::{Parser, Subcommand};

const SEED_ENV: &str = "ATOMIC_SIM_SEED";

#[derive(Parser)]
#[command(name = "atomic-sim", version, about = "Synchronous-flooding SDN control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write summary.csv and opportunities.csv.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides both the scenario seed and ATOMIC_SIM_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write trace.log.
        #[arg(long)]
        trace: bool,
    },
    /// Worst-case lossless opportunities for each size and kind.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "30,40,50,60,70")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "collect,configure,react")]
        kinds: Vec<OpportunityKind>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// JSON file with protocol timing overrides.
        #[arg(long)]
        timing: Option<PathBuf>,
    },
    /// Print closed-form opportunity lengths, or one phase schedule.
    Bounds {
        /// min:max[:step]
        #[arg(long, default_value = "0:100:10")]
        nodes: String,
        #[arg(long)]
        timing: Option<PathBuf>,
        /// Print the worst-case schedule of this opportunity kind instead.
        #[arg(long, value_name = "KIND")]
        dump_schedule: Option<OpportunityKind>,
        /// Participants for --dump-schedule.
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
}

fn load_timing(path: Option<&Path>) -> Result<ProtocolTiming> {
    let Some(path) = path else {
        return Ok(ProtocolTiming::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let t: ProtocolTiming = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    t.validate()?;
    Ok(t)
}

fn parse_range(s: &str) -> Result<Vec<u64>> {
    let parts = s
        .split(':')
        .map(|p| p.trim().parse::<u64>().with_context(|| format!("bad number {p:?} in range {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi, step) = match parts[..] {
        [lo, hi] => (lo, hi, 1),
        [lo, hi, step] => (lo, hi, step),
        _ => bail!("range must be min:max or min:max:step, got {s:?}"),
    };
    if step == 0 || lo > hi {
        bail!("empty range {s:?}");
    }
    Ok((lo..=hi).step_by(step as usize).collect())
}

fn run(scenario: &Path, seed: Option<u64>, out: &Path, trace: bool) -> Result<()> {
    let mut cfg = ScenarioConfig::load(scenario).with_context(|| format!("loading {}", scenario.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    } else if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s.trim().parse().with_context(|| format!("{SEED_ENV}={s:?} is not a u64"))?;
    }
    cfg.trace |= trace;
    let res = run_scenario(&cfg)?;
    let m = &res.metrics;
    let written = emit_metrics(m, Some(&res.trace), out)?;
    let pdr = m.pdr().map_or("n/a".to_string(), |p| format!("{p:.4}"));
    let mut stdout = io::stdout().lock();
    writeln!(
        stdout,
        "seed {}: {} opportunities, {} exchanges completed, {} failed, PDR {pdr}, mean RDC {:.3}%",
        cfg.seed,
        m.opportunities.len(),
        m.completed(),
        m.failed(),
        m.mean_rdc() * 100.0
    )?;
    for p in written {
        writeln!(stdout, "wrote {}", p.display())?;
    }
    Ok(())
}

fn sweep(sizes: &[usize], kinds: &[OpportunityKind], out: &Path, timing: Option<&Path>) -> Result<()> {
    let t = load_timing(timing)?;
    let rows = scaling_sweep(sizes, kinds, &t)?;
    let csv = sweep_csv(&rows);
    fs::create_dir_all(out)?;
    let path = out.join("sweep.csv");
    fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    io::stdout().lock().write_all(csv.as_bytes())?;
    Ok(())
}

fn bounds(nodes: &str, timing: Option<&Path>, dump: Option<OpportunityKind>, n: usize) -> Result<()> {
    let t = load_timing(timing)?;
    if let Some(kind) = dump {
        let schedule = match kind {
            OpportunityKind::None => build_dissemination(0, &t),
            OpportunityKind::Configure => build_dissemination(n, &t),
            OpportunityKind::Collect => build_collection(n, &t),
            OpportunityKind::React => build_reaction(n, &t),
            OpportunityKind::Associate => build_association(n, &t),
        };
        io::stdout().lock().write_all(schedule.dump_csv().as_bytes())?;
        return Ok(());
    }
    let pt = t.phase_timings();
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "n,delta_config_us,delta_collect_us,delta_react_us")?;
    for n in parse_range(nodes)? {
        writeln!(stdout, "{n},{},{},{}", configuration_bound(n, &pt), collect_bound(n, &pt), react_bound(n, &pt))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, seed, out, trace } => run(&scenario, seed, &out, trace),
        Command::Sweep { sizes, kinds, out, timing } => sweep(&sizes, &kinds, &out, timing.as_deref()),
        Command::Bounds { nodes, timing, dump_schedule, n } => bounds(&nodes, timing.as_deref(), dump_schedule, n),
    }
}
