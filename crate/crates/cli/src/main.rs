mod selector;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lyagate_core::conformance::{check_sound, dwell_tolerance, SoundnessSettings};
use lyagate_core::game::{synthesize, Objective};
use lyagate_core::partition::build_cells;
use lyagate_core::pipeline::validate;
use lyagate_core::sim::{default_step, simulate, CellPolicy};
use lyagate_core::tga::{restrict, Mode, TimedGameAutomaton};
use lyagate_core::{exec, Analysis, Error, SystemSpecFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const EXIT_VALIDATION: u8 = 1;
const EXIT_UNSOUND: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "lyagate", version, about = "Timed-game abstraction and controller synthesis from level-set partitions")]
struct Cli {
    /// Cap on worker threads for the data-parallel stages.
    #[arg(long, global = true, env = "LYAGATE_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// One location per cell and control.
    Cells,
    /// One location per slice tuple and control.
    Extended,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Cells => Mode::Cells,
            ModeArg::Extended => Mode::Extended,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check level regularity, slice coverage and admissibility of every control.
    Validate { spec: PathBuf },
    /// Write timing bounds and the timed game automaton as JSON.
    Abstract {
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "cells")]
        mode: ModeArg,
        /// Output directory for `bounds.json` and `automaton.json`.
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
    /// Synthesize a memoryless cell strategy for a reach or safety objective.
    Synthesize {
        spec: PathBuf,
        /// Goal cells (reach objective).
        #[arg(long, allow_hyphen_values = true)]
        reach: Vec<String>,
        /// Cells to avoid (the sink is always avoided).
        #[arg(long, allow_hyphen_values = true)]
        avoid: Vec<String>,
        /// Initial cells; defaults to every cell not avoided.
        #[arg(long, allow_hyphen_values = true)]
        from: Vec<String>,
        /// Deadline for reach objectives.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, value_enum, default_value = "cells")]
        mode: ModeArg,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Simulate the closed loop under a strategy and write one CSV per run.
    Simulate {
        spec: PathBuf,
        /// Strategy JSON file, or the name of a control applied everywhere.
        #[arg(long)]
        strategy: String,
        /// Initial state, comma separated.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "samples")]
        x0: Option<String>,
        /// Number of initial states sampled from `--from`.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        from: Vec<String>,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        /// Integration step; derived from the system when omitted.
        #[arg(long)]
        step: Option<f64>,
        /// Output directory for `trace_<k>.csv`.
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
    /// Replay sampled closed-loop traces on the restricted automaton.
    CheckSound {
        spec: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        #[arg(long)]
        step: Option<f64>,
        /// Initial cells; defaults to the strategy's winning cells, or all cells.
        #[arg(long, allow_hyphen_values = true)]
        from: Vec<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Export the automaton graph.
    Export {
        spec: PathBuf,
        /// Graphviz DOT output.
        #[arg(long, required = true)]
        dot: bool,
        #[arg(long, value_enum, default_value = "cells")]
        mode: ModeArg,
        /// Restrict the automaton to a strategy first.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }

    fn pipeline(path: &Path, e: Error) -> Self {
        let message = format!("{}: {e}", path.display());
        if e.is_validation() {
            Failure::validation(message)
        } else {
            Failure::internal(message)
        }
    }
}

type Outcome = Result<(), Failure>;

struct Loaded {
    spec: SystemSpecFile,
    analysis: Analysis,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let spec = SystemSpecFile::from_path(path).map_err(|e| Failure::pipeline(path, e.into()))?;
    let model = spec.to_model().map_err(|e| Failure::pipeline(path, e.into()))?;
    let analysis = Analysis::new(model, spec.settings.clone()).map_err(|e| Failure::pipeline(path, e))?;
    Ok(Loaded { spec, analysis })
}

fn automaton(loaded: &Loaded, mode: Mode, path: &Path) -> Result<TimedGameAutomaton, Failure> {
    loaded
        .analysis
        .automaton(mode)
        .map_err(|e| Failure::pipeline(path, e.into()))
}

fn emit(text: &str, out: Option<&Path>) -> Outcome {
    match out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::internal(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::internal(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::internal(e.to_string()))
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Cells => "cells",
        Mode::Extended => "extended",
    }
}

/// Cells named by the selectors, as automaton regions.
fn regions(selectors: &[String], loaded: &Loaded, tga: &TimedGameAutomaton) -> Result<BTreeSet<usize>, Failure> {
    let cells = selector::resolve(selectors, &loaded.analysis.complex).map_err(Failure::validation)?;
    Ok(cells.iter().map(|&c| tga.regions.region_of_cell[c]).collect())
}

/// A strategy per region plus the cells it wins from, if recorded.
struct Strategy {
    mode: Mode,
    choice: Vec<usize>,
    winning: Option<Vec<String>>,
}

/// `--strategy` is either a control name (applied everywhere) or a file written by
/// `synthesize`.
fn load_strategy(arg: &str, loaded: &Loaded) -> Result<Strategy, Failure> {
    let model = &loaded.analysis.model;
    if let Some(c) = model.control_index(arg) {
        let regions = loaded.analysis.complex.len();
        return Ok(Strategy {
            mode: Mode::Cells,
            choice: vec![c; regions],
            winning: None,
        });
    }
    let text = fs::read_to_string(arg)
        .map_err(|e| Failure::validation(format!("{arg}: neither a control name nor a readable strategy file ({e})")))?;
    let json: Value = serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{arg}: {e}")))?;
    let mode = match json.get("mode").and_then(Value::as_str) {
        Some("extended") => Mode::Extended,
        Some("cells") | None => Mode::Cells,
        Some(other) => return Err(Failure::validation(format!("{arg}: unknown mode `{other}`"))),
    };
    let map = json
        .get("strategy")
        .and_then(Value::as_object)
        .ok_or_else(|| Failure::validation(format!("{arg}: missing `strategy` object")))?;
    let tga_regions = lyagate_core::tga::Regions::new(&loaded.analysis.complex, mode, 1);
    let mut choice = vec![None; tga_regions.len()];
    for (region, control) in map {
        let r = tga_regions
            .by_name(region)
            .ok_or_else(|| Failure::validation(format!("{arg}: unknown region `{region}`")))?;
        let name = control.as_str().unwrap_or_default();
        let c = model
            .control_index(name)
            .ok_or_else(|| Failure::validation(format!("{arg}: unknown control `{name}` for `{region}`")))?;
        choice[r] = Some(c);
    }
    let choice = choice
        .into_iter()
        .enumerate()
        .map(|(r, c)| c.ok_or_else(|| Failure::validation(format!("{arg}: no control for `{}`", tga_regions.regions[r].name))))
        .collect::<Result<Vec<_>, _>>()?;
    let winning = json.get("winning").and_then(Value::as_array).map(|w| {
        w.iter().filter_map(Value::as_str).map(str::to_string).collect()
    });
    Ok(Strategy { mode, choice, winning })
}

fn cell_policy(strategy: &Strategy, tga: &TimedGameAutomaton) -> Vec<usize> {
    tga.regions.region_of_cell.iter().map(|&r| strategy.choice[r]).collect()
}

fn run_validate(path: &Path) -> Outcome {
    let spec = SystemSpecFile::from_path(path).map_err(|e| Failure::pipeline(path, e.into()))?;
    let model = spec.to_model().map_err(|e| Failure::pipeline(path, e.into()))?;
    let validation = validate(&model, &spec.settings).map_err(|e| Failure::pipeline(path, e.into()))?;
    let complex = build_cells(&model, &spec.settings).map_err(|e| Failure::pipeline(path, e.into()))?;
    let mut report = String::new();
    let _ = writeln!(
        report,
        "{}: valid ({} families, {} controls, {} cells)",
        path.display(),
        model.families.len(),
        model.controls.len(),
        complex.len()
    );
    for (c, tables) in validation.signs.iter().enumerate() {
        for table in tables {
            let signs: Vec<String> = (0..table.slices.len())
                .map(|h| table.sign(h).map_or("·".to_string(), |s| s.to_string()))
                .collect();
            let _ = writeln!(
                report,
                "  {} family {}: slice signs [{}], {} critical points",
                table.control,
                table.family,
                signs.join(" "),
                validation.critical[c].len()
            );
        }
    }
    print!("{report}");
    Ok(())
}

fn run_abstract(path: &Path, mode: Mode, out: &Path) -> Outcome {
    let loaded = load(path)?;
    let tga = automaton(&loaded, mode, path)?;
    write_file(&out.join("bounds.json"), &to_json(&loaded.analysis.bounds)?)?;
    write_file(&out.join("automaton.json"), &to_json(&tga)?)?;
    println!(
        "{} cells, {} regions, {} non-sink locations, {} transitions, {} refused switches",
        loaded.analysis.complex.len(),
        tga.regions.len(),
        tga.non_sink_locations(),
        tga.transitions.len(),
        tga.refused.len()
    );
    Ok(())
}

struct SynthesisArgs<'a> {
    reach: &'a [String],
    avoid: &'a [String],
    from: &'a [String],
    horizon: Option<f64>,
    mode: Mode,
    out: Option<&'a Path>,
}

fn run_synthesize(path: &Path, args: SynthesisArgs<'_>) -> Outcome {
    let loaded = load(path)?;
    let tga = automaton(&loaded, args.mode, path)?;
    let avoid = regions(args.avoid, &loaded, &tga)?;
    let objective = if args.reach.is_empty() {
        if args.horizon.is_some() {
            return Err(Failure::validation("--horizon only applies to --reach objectives"));
        }
        Objective::Safety { avoid }
    } else {
        Objective::Reach {
            goal: regions(args.reach, &loaded, &tga)?,
            avoid,
            horizon: args.horizon,
        }
    };
    let initial: Option<Vec<usize>> = if args.from.is_empty() {
        None
    } else {
        Some(regions(args.from, &loaded, &tga)?.into_iter().collect())
    };
    let result = synthesize(&tga, &objective, initial.as_deref());
    let mut json = serde_json::to_value(&result).map_err(|e| Failure::internal(e.to_string()))?;
    if let Value::Object(map) = &mut json {
        map.insert("mode".into(), Value::from(mode_name(args.mode)));
        map.insert("system".into(), Value::from(loaded.spec.name.clone()));
    }
    emit(&to_json(&json)?, args.out)?;
    if result.realizable {
        Ok(())
    } else {
        Err(Failure::validation(format!(
            "objective not realizable from {}",
            result.losing_initial.join(", ")
        )))
    }
}

fn step_for(loaded: &Loaded, step: Option<f64>) -> Result<f64, Failure> {
    match step {
        Some(h) if h > 0.0 && h.is_finite() => Ok(h),
        Some(h) => Err(Failure::validation(format!("--step must be positive, got {h}"))),
        None => default_step(&loaded.analysis.model, &loaded.analysis.complex)
            .map_err(|e| Failure::internal(e.to_string())),
    }
}

struct SimulateArgs<'a> {
    strategy: &'a str,
    x0: Option<&'a str>,
    samples: Option<usize>,
    from: &'a [String],
    horizon: f64,
    step: Option<f64>,
    out: &'a Path,
}

fn run_simulate(path: &Path, args: SimulateArgs<'_>) -> Outcome {
    let loaded = load(path)?;
    let a = &loaded.analysis;
    let strategy = load_strategy(args.strategy, &loaded)?;
    let tga = automaton(&loaded, strategy.mode, path)?;
    let policy = cell_policy(&strategy, &tga);
    let h = step_for(&loaded, args.step)?;
    let starts: Vec<Vec<f64>> = match (args.x0, args.samples) {
        (Some(text), _) => {
            let x = text
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Failure::validation(format!("bad --x0 `{text}`")))?;
            if x.len() != a.model.system.n {
                return Err(Failure::validation(format!("--x0 has {} components, state has {}", x.len(), a.model.system.n)));
            }
            vec![x]
        }
        (None, Some(n)) => {
            let cells: Vec<usize> = if args.from.is_empty() {
                (0..a.complex.len()).collect()
            } else {
                selector::resolve(args.from, &a.complex).map_err(Failure::validation)?.into_iter().collect()
            };
            (0..n)
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(loaded.spec.seed);
                    rng.set_stream(k as u64);
                    let cell = cells[rng.random_range(0..cells.len())];
                    a.complex
                        .sample_in_cell(cell, &mut rng)
                        .ok_or_else(|| Failure::internal(format!("could not sample a point in c{cell}")))
                })
                .collect::<Result<_, _>>()?
        }
        (None, None) => return Err(Failure::validation("simulate needs --x0 or --samples")),
    };
    let names: Vec<String> = a.model.controls.iter().map(|c| c.name.clone()).collect();
    let traces = a.config.execution.map(&starts, |x0| {
        simulate(&a.model, &a.complex, &mut CellPolicy(policy.clone()), x0, args.horizon, h)
    });
    for (k, trace) in traces.into_iter().enumerate() {
        let trace = trace.map_err(|e| Failure::internal(format!("run {k}: {e}")))?;
        write_file(&args.out.join(format!("trace_{k}.csv")), &trace.to_csv(&a.complex, &names))?;
        let cells: Vec<String> = trace.cell_sequence().iter().map(|(c, _)| format!("c{c}")).collect();
        println!("trace_{k}: {} ({:?} at t = {})", cells.join(" -> "), trace.end, trace.end_time);
    }
    Ok(())
}

struct SoundArgs<'a> {
    strategy: &'a str,
    samples: usize,
    horizon: f64,
    step: Option<f64>,
    from: &'a [String],
    out: Option<&'a Path>,
}

fn run_check_sound(path: &Path, args: SoundArgs<'_>) -> Outcome {
    let loaded = load(path)?;
    let a = &loaded.analysis;
    let strategy = load_strategy(args.strategy, &loaded)?;
    let tga = automaton(&loaded, strategy.mode, path)?;
    let initial: Vec<usize> = if !args.from.is_empty() {
        selector::resolve(args.from, &a.complex).map_err(Failure::validation)?.into_iter().collect()
    } else if let Some(winning) = &strategy.winning {
        (0..a.complex.len())
            .filter(|&c| winning.contains(&tga.regions.regions[tga.regions.region_of_cell[c]].name))
            .collect()
    } else {
        (0..a.complex.len()).collect()
    };
    let step = step_for(&loaded, args.step)?;
    let settings = SoundnessSettings {
        samples: args.samples,
        horizon: args.horizon,
        step,
        seed: loaded.spec.seed,
        tolerance: dwell_tolerance(step),
        execution: a.config.execution,
    };
    let report = check_sound(&a.model, &a.complex, &tga, &strategy.choice, &initial, &settings);
    emit(&to_json(&report)?, args.out)?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_UNSOUND,
            message: format!(
                "soundness check failed: {} embedding, {} guard, {} invariant violations, {} simulation errors",
                report.embedding_violations, report.guard_violations, report.invariant_violations, report.simulation_errors
            ),
        })
    }
}

fn run_export(path: &Path, mode: Mode, strategy: Option<&str>, out: Option<&Path>) -> Outcome {
    let loaded = load(path)?;
    let (mode, choice) = match strategy {
        Some(s) => {
            let s = load_strategy(s, &loaded)?;
            (s.mode, Some(s.choice))
        }
        None => (mode, None),
    };
    let tga = automaton(&loaded, mode, path)?;
    let tga = match choice {
        Some(choice) => restrict(&tga, &choice),
        None => tga,
    };
    emit(&tga.to_dot(), out)
}

fn run(cli: Cli) -> Outcome {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::validation("--jobs must be at least 1"));
        }
        exec::set_max_jobs(jobs);
    }
    match cli.command {
        Command::Validate { spec } => run_validate(&spec),
        Command::Abstract { spec, mode, out } => run_abstract(&spec, mode.into(), &out),
        Command::Synthesize {
            spec,
            reach,
            avoid,
            from,
            horizon,
            mode,
            out,
        } => run_synthesize(
            &spec,
            SynthesisArgs {
                reach: &reach,
                avoid: &avoid,
                from: &from,
                horizon,
                mode: mode.into(),
                out: out.as_deref(),
            },
        ),
        Command::Simulate {
            spec,
            strategy,
            x0,
            samples,
            from,
            horizon,
            step,
            out,
        } => run_simulate(
            &spec,
            SimulateArgs {
                strategy: &strategy,
                x0: x0.as_deref(),
                samples,
                from: &from,
                horizon,
                step,
                out: &out,
            },
        ),
        Command::CheckSound {
            spec,
            strategy,
            samples,
            horizon,
            step,
            from,
            out,
        } => run_check_sound(
            &spec,
            SoundArgs {
                strategy: &strategy,
                samples,
                horizon,
                step,
                from: &from,
                out: out.as_deref(),
            },
        ),
        Command::Export {
            spec,
            dot: _,
            mode,
            strategy,
            out,
        } => run_export(&spec, mode.into(), strategy.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
