//! Command-line front end: model validation, classical strategy synthesis,
//! permissive synthesis (native or via LP export/import), multi-strategy
//! evaluation, and benchmark generation.
//!
//! Machine-readable `key=value` report lines go to standard output; human
//! diagnostics go to standard error. Exit codes: 0 success/sound,
//! 1 infeasible/unsound, 2 usage error, 3 model error, 4 time budget
//! exhausted without an incumbent.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use num::Zero;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use permissive::analysis::{
    self, check_sound_objective, extract_strategy, static_penalty, total_reward_values,
    ObjectiveMode, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use permissive::game::{
    MultiStrategy, PenaltyKind, PenaltyScheme, Property, Relation, StochasticGame,
};
use permissive::io::{self, ParsedModel};
use permissive::milp;
use permissive::randomized;
use permissive::rational::{format_rational, rat, to_f64, Rational};
use permissive::solver::{self, Incumbent, Problem, SolverConfig};

const EXIT_OK: i32 = 0;
const EXIT_INFEASIBLE: i32 = 1;
const EXIT_USAGE: i32 = 2;
const EXIT_MODEL: i32 = 3;
const EXIT_BUDGET: i32 = 4;

#[derive(Parser)]
#[command(
    name = "permissive",
    about = "Permissive controller synthesis for stochastic two-player games",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PenaltyArg {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Native,
    Export,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptArg {
    Bounds,
    Zeropen,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a game model.
    Validate { model: PathBuf },
    /// Compute an optimal classical (single-action) strategy.
    Synth {
        model: PathBuf,
        /// Property text or path to a property file.
        #[arg(long)]
        prop: String,
        /// Output path for the strategy (serialised as a deterministic
        /// multi-strategy).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Synthesise an optimally permissive sound multi-strategy.
    Permissive {
        model: PathBuf,
        #[arg(long)]
        prop: String,
        #[arg(long, value_enum, default_value = "static")]
        penalty: PenaltyArg,
        /// Search granularity-limited randomised multi-strategies.
        #[arg(long)]
        rand: bool,
        /// Granularity M for --rand.
        #[arg(short = 'M', long, default_value_t = 2)]
        granularity: u64,
        #[arg(long, value_enum, default_value = "native")]
        solver: SolverArg,
        /// Verify and decode an external solver's solution file.
        #[arg(long)]
        import: Option<PathBuf>,
        /// Time budget in whole seconds.
        #[arg(long)]
        time_limit: Option<u64>,
        /// Encoding tightenings (comma-separated): bounds, zeropen.
        #[arg(long, value_delimiter = ',')]
        opt: Vec<OptArg>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Parallel workers for the native solver.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a multi-strategy: soundness and both penalties.
    Eval {
        model: PathBuf,
        #[arg(long)]
        prop: String,
        #[arg(long)]
        multistrategy: PathBuf,
        /// Penalty kind reported as the headline `penalty=` value.
        #[arg(long, value_enum, default_value = "static")]
        penalty: PenaltyArg,
    },
    /// Generate benchmark model families.
    Gen {
        #[command(subcommand)]
        family: GenFamily,
    },
}

#[derive(Subcommand)]
enum GenFamily {
    /// A 0/1 knapsack instance reduced to a synthesis problem.
    Knapsack {
        /// Number of items.
        #[arg(short = 'n', long)]
        items: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output prefix: writes <prefix>.game and <prefix>.prop.
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { model } => cmd_validate(&model),
        Command::Synth {
            model,
            prop,
            output,
        } => cmd_synth(&model, &prop, output.as_deref()),
        Command::Permissive {
            model,
            prop,
            penalty,
            rand,
            granularity,
            solver,
            import,
            time_limit,
            opt,
            output,
            jobs,
        } => cmd_permissive(PermissiveArgs {
            model,
            prop,
            penalty,
            rand,
            granularity,
            solver,
            import,
            time_limit,
            opt,
            output,
            jobs,
        }),
        Command::Eval {
            model,
            prop,
            multistrategy,
            penalty,
        } => cmd_eval(&model, &prop, &multistrategy, penalty),
        Command::Gen { family } => match family {
            GenFamily::Knapsack { items, seed, output } => cmd_gen_knapsack(items, seed, &output),
        },
    };
    std::process::exit(code);
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Reads an input file; missing files are usage errors (exit 2).
fn read_input(path: &Path) -> Result<(String, String), i32> {
    match std::fs::read(path) {
        Ok(bytes) => {
            let digest = sha256_hex(&bytes);
            match String::from_utf8(bytes) {
                Ok(text) => Ok((text, digest)),
                Err(_) => {
                    eprintln!("error: {} is not valid UTF-8", path.display());
                    Err(EXIT_MODEL)
                }
            }
        }
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            Err(EXIT_USAGE)
        }
    }
}

fn load_model(path: &Path) -> Result<(ParsedModel, String), i32> {
    let (text, digest) = read_input(path)?;
    match io::parse_game(&text) {
        Ok(m) => Ok((m, digest)),
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            Err(EXIT_MODEL)
        }
    }
}

/// A property argument is either inline text or the path of a property file.
fn load_property(arg: &str) -> Result<Property, i32> {
    let text = if Path::new(arg).is_file() {
        match std::fs::read_to_string(arg) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {arg}: {e}");
                return Err(EXIT_USAGE);
            }
        }
    } else {
        arg.to_string()
    };
    io::parse_property(&text).map_err(|e| {
        eprintln!("error: property: {e}");
        EXIT_MODEL
    })
}

fn write_output(path: &Path, text: &str) -> Result<(), i32> {
    std::fs::write(path, text).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn cmd_validate(model: &Path) -> i32 {
    match load_model(model) {
        Ok((parsed, digest)) => {
            println!("command=validate");
            println!("model_sha256={digest}");
            println!("states={}", parsed.game.num_states());
            println!(
                "controller_states={}",
                parsed.game.controller_states().count()
            );
            println!("rewards={}", parsed.rewards.len());
            EXIT_OK
        }
        Err(code) => code,
    }
}

fn cmd_synth(model: &Path, prop_arg: &str, output: Option<&Path>) -> i32 {
    let start = Instant::now();
    let (parsed, digest) = match load_model(model) {
        Ok(x) => x,
        Err(c) => return c,
    };
    let prop = match load_property(prop_arg) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let obj = match analysis::build_objective(&parsed.game, &prop, &parsed.rewards) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_MODEL;
        }
    };
    let mode = match obj.relation {
        Relation::AtLeast => ObjectiveMode::MAX_MIN,
        Relation::AtMost => ObjectiveMode::MIN_MAX,
    };
    let values = total_reward_values(&obj.game, &obj.reward, mode, DEFAULT_TOL, DEFAULT_MAX_ITER);
    let value = values.at(obj.game.initial);
    let b = to_f64(&obj.threshold);
    let slack = (DEFAULT_TOL * 1e3).max(1e-6);
    let sound = match obj.relation {
        Relation::AtLeast => value >= b - slack,
        Relation::AtMost => value <= b + slack,
    };
    println!("command=synth");
    println!("model_sha256={digest}");
    println!("property={prop}");
    println!("value={value}");
    println!("sound={sound}");
    println!("wall_time_ms={}", start.elapsed().as_millis());
    if !sound {
        eprintln!("no sound classical strategy: optimal value {value} misses the bound {b}");
        return EXIT_INFEASIBLE;
    }
    let choice = extract_strategy(&obj.game, &obj.reward, mode, &values, DEFAULT_TOL);
    let mut sets: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for s in parsed.game.controller_states() {
        let a = choice.get(&s).copied().unwrap_or(0);
        let a = if a < parsed.game.actions(s).len() { a } else { 0 };
        sets.insert(s, BTreeSet::from([a]));
    }
    let theta = MultiStrategy::from_sets(sets);
    let text = io::write_multistrategy(&theta, &parsed.game);
    match output {
        Some(p) => {
            if let Err(c) = write_output(p, &text) {
                return c;
            }
            println!("output={}", p.display());
        }
        None => eprint!("{text}"),
    }
    EXIT_OK
}

struct PermissiveArgs {
    model: PathBuf,
    prop: String,
    penalty: PenaltyArg,
    rand: bool,
    granularity: u64,
    solver: SolverArg,
    import: Option<PathBuf>,
    time_limit: Option<u64>,
    opt: Vec<OptArg>,
    output: Option<PathBuf>,
    jobs: usize,
}

/// The MILP encoding of a problem, rebuilt identically for export and
/// import.
struct Encoding {
    model: milp::MilpModel,
    vm: milp::VarMap,
    encoded_game: StochasticGame,
    mapping: Option<randomized::GadgetMapping>,
}

fn build_encoding(
    problem: &Problem,
    rand: bool,
    granularity: u64,
    opts: &[OptArg],
) -> Result<Encoding, String> {
    let relation = problem.obj.relation;
    if rand {
        if problem.psi.kind != PenaltyKind::Static {
            return Err("randomised LP export supports static penalties only".into());
        }
        let (gp, mapping) = randomized::build_gadget_game(&problem.obj.game, granularity)?;
        let rp = randomized::transform_reward(&problem.obj.game, &mapping, &problem.obj.reward);
        let empty = PenaltyScheme::new(PenaltyKind::Static);
        let mut ri = milp::rescale(&gp, &rp, &problem.obj.threshold, &empty)?;
        // The penalty scale comes from the original penalties.
        ri.kappa_psi = milp::rescale(
            &problem.obj.game,
            &problem.obj.reward,
            &problem.obj.threshold,
            &problem.eval_psi,
        )?
        .kappa_psi;
        let (mut model, vm) =
            milp::encode_transformed_static(&gp, &mapping, &ri, &problem.eval_psi, relation)?;
        if opts.contains(&OptArg::Bounds) {
            milp::apply_bounds_optimisation(&mut model, &vm, &gp, &ri);
        }
        // The zero-penalty tightening is never applied to transformed
        // models: it would forbid allowing both selector branches.
        Ok(Encoding {
            model,
            vm,
            encoded_game: gp,
            mapping: Some(mapping),
        })
    } else {
        let ri = milp::rescale(
            &problem.obj.game,
            &problem.obj.reward,
            &problem.obj.threshold,
            &problem.eval_psi,
        )?;
        let (mut model, vm) = match problem.psi.kind {
            PenaltyKind::Static => milp::encode_static(&problem.obj.game, &ri, relation)?,
            PenaltyKind::Dynamic => {
                let (c, _) = milp::compute_c(&problem.obj.game, &ri.psi)?;
                milp::encode_dynamic(&problem.obj.game, &ri, relation, &c)?
            }
        };
        if opts.contains(&OptArg::Bounds) {
            milp::apply_bounds_optimisation(&mut model, &vm, &problem.obj.game, &ri);
        }
        if opts.contains(&OptArg::Zeropen) {
            milp::apply_zero_penalty_optimisation(&mut model, &vm, &problem.obj.game, &ri);
        }
        Ok(Encoding {
            model,
            vm,
            encoded_game: problem.obj.game.clone(),
            mapping: None,
        })
    }
}

fn report_incumbent(problem: &Problem, inc: &Incumbent) {
    println!("penalty={}", inc.penalty);
    match &inc.penalty_exact {
        Some(p) => println!("penalty_exact={}", format_rational(p)),
        None => println!("penalty_exact=-"),
    }
    println!("margin={}", inc.margin);
    println!("value={}", inc.value);
    let _ = problem;
}

fn cmd_permissive(args: PermissiveArgs) -> i32 {
    let start = Instant::now();
    let (parsed, digest) = match load_model(&args.model) {
        Ok(x) => x,
        Err(c) => return c,
    };
    let prop = match load_property(&args.prop) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let kind = match args.penalty {
        PenaltyArg::Static => PenaltyKind::Static,
        PenaltyArg::Dynamic => PenaltyKind::Dynamic,
    };
    if args.rand && args.granularity < 2 {
        eprintln!("error: --rand requires a granularity of at least 2");
        return EXIT_USAGE;
    }
    let psi = parsed.penalties.with_kind(kind);
    let problem = match Problem::build(&parsed.game, &prop, &parsed.rewards, &psi) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_MODEL;
        }
    };
    println!("command=permissive");
    println!("model_sha256={digest}");
    println!("property={prop}");
    println!(
        "penalty_kind={}",
        if kind == PenaltyKind::Static { "static" } else { "dynamic" }
    );
    println!("rand={}", args.rand);
    if args.rand {
        println!("granularity={}", args.granularity);
    }

    if let Some(import) = &args.import {
        let enc = match build_encoding(&problem, args.rand, args.granularity, &args.opt) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_MODEL;
            }
        };
        let (text, sol_digest) = match read_input(import) {
            Ok(x) => x,
            Err(c) => return c,
        };
        println!("solver=import");
        println!("solution_sha256={sol_digest}");
        let inc = match solver::import_solution(
            &text,
            &enc.model,
            &enc.vm,
            &enc.encoded_game,
            &problem,
            enc.mapping.as_ref(),
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        ) {
            Ok(i) => i,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_INFEASIBLE;
            }
        };
        report_incumbent(&problem, &inc);
        println!("optimal=-");
        println!("wall_time_ms={}", start.elapsed().as_millis());
        return finish_with_theta(&problem, &inc, args.output.as_deref());
    }

    match args.solver {
        SolverArg::Export => {
            let out = match &args.output {
                Some(o) => o.clone(),
                None => {
                    eprintln!("error: --solver export requires -o");
                    return EXIT_USAGE;
                }
            };
            let enc = match build_encoding(&problem, args.rand, args.granularity, &args.opt) {
                Ok(e) => e,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_MODEL;
                }
            };
            let lp = match milp::write_lp(&enc.model) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_MODEL;
                }
            };
            if let Err(c) = write_output(&out, &lp) {
                return c;
            }
            let vars = milp::write_varmap(&enc.model, &enc.vm, &enc.encoded_game);
            let vars_path = out.with_extension("vars");
            if let Err(c) = write_output(&vars_path, &vars) {
                return c;
            }
            println!("solver=export");
            println!("variables={}", enc.model.variables.len());
            println!("constraints={}", enc.model.constraints.len());
            println!("output={}", out.display());
            println!("varmap={}", vars_path.display());
            if let Some(mapping) = &enc.mapping {
                let map_path = out.with_extension("map");
                let text = randomized::write_mapping(mapping, &enc.encoded_game);
                if let Err(c) = write_output(&map_path, &text) {
                    return c;
                }
                println!("mapping={}", map_path.display());
            }
            println!("wall_time_ms={}", start.elapsed().as_millis());
            EXIT_OK
        }
        SolverArg::Native => {
            let budget = match args.time_limit {
                Some(s) => Some(Duration::from_secs(s)),
                None => {
                    if parsed.game.controller_states().count() <= 10 {
                        None
                    } else {
                        Some(Duration::from_secs(300))
                    }
                }
            };
            let cfg = SolverConfig {
                budget,
                jobs: args.jobs.max(1),
                ..Default::default()
            };
            let on_improve = |inc: &Incumbent| {
                eprintln!(
                    "incumbent: penalty {} after {} ms",
                    inc.penalty,
                    inc.found_at.as_millis()
                );
            };
            let outcome = if args.rand {
                solver::solve_native_rand(&problem, args.granularity, &cfg, &on_improve)
            } else {
                solver::solve_native(&problem, &cfg, &on_improve)
            };
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_MODEL;
                }
            };
            println!("solver=native");
            println!("nodes={}", outcome.nodes);
            println!("optimal={}", outcome.optimal);
            match outcome.incumbent {
                Some(inc) => {
                    report_incumbent(&problem, &inc);
                    println!("wall_time_ms={}", start.elapsed().as_millis());
                    finish_with_theta(&problem, &inc, args.output.as_deref())
                }
                None => {
                    println!("wall_time_ms={}", start.elapsed().as_millis());
                    if outcome.optimal {
                        eprintln!("no sound multi-strategy exists for this property");
                        EXIT_INFEASIBLE
                    } else {
                        eprintln!("time limit reached before any sound multi-strategy was found");
                        EXIT_BUDGET
                    }
                }
            }
        }
    }
}

fn finish_with_theta(problem: &Problem, inc: &Incumbent, output: Option<&Path>) -> i32 {
    let text = io::write_multistrategy(&inc.theta, &problem.game);
    match output {
        Some(p) => {
            if let Err(c) = write_output(p, &text) {
                return c;
            }
            println!("output={}", p.display());
            EXIT_OK
        }
        None => {
            eprint!("{text}");
            EXIT_OK
        }
    }
}

fn cmd_eval(model: &Path, prop_arg: &str, theta_path: &Path, headline: PenaltyArg) -> i32 {
    let start = Instant::now();
    let (parsed, digest) = match load_model(model) {
        Ok(x) => x,
        Err(c) => return c,
    };
    let prop = match load_property(prop_arg) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let (theta_text, theta_digest) = match read_input(theta_path) {
        Ok(x) => x,
        Err(c) => return c,
    };
    let theta = match io::parse_multistrategy(&theta_text, &parsed.game) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", theta_path.display());
            return EXIT_MODEL;
        }
    };
    let psi_static = parsed.penalties.with_kind(PenaltyKind::Static);
    let psi_dynamic = parsed.penalties.with_kind(PenaltyKind::Dynamic);
    let problem = match Problem::build(&parsed.game, &prop, &parsed.rewards, &psi_dynamic) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_MODEL;
        }
    };
    let sound = match check_sound_objective(&problem.obj, &theta, DEFAULT_TOL, DEFAULT_MAX_ITER) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_MODEL;
        }
    };
    let pen_sta = match static_penalty(&parsed.game, &theta, &psi_static) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_MODEL;
        }
    };
    let adapted = problem.obj.adapt(&theta);
    let pen_dyn = match analysis::dynamic_penalty(
        &problem.obj.game,
        &adapted,
        &problem.eval_psi,
        DEFAULT_TOL,
        DEFAULT_MAX_ITER,
    ) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_MODEL;
        }
    };
    let render_dyn = if pen_dyn.is_infinite() {
        "inf".to_string()
    } else {
        format!("{pen_dyn}")
    };
    println!("command=eval");
    println!("model_sha256={digest}");
    println!("multistrategy_sha256={theta_digest}");
    println!("property={prop}");
    println!("sound={}", sound.sound);
    println!("margin={}", sound.margin);
    println!("value={}", sound.value);
    println!("pen_sta={}", format_rational(&pen_sta));
    println!("pen_sta_decimal={}", to_f64(&pen_sta));
    println!("pen_dyn={render_dyn}");
    match headline {
        PenaltyArg::Static => println!("penalty={}", to_f64(&pen_sta)),
        PenaltyArg::Dynamic => println!("penalty={render_dyn}"),
    }
    println!("wall_time_ms={}", start.elapsed().as_millis());
    if sound.sound {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    }
}

fn cmd_gen_knapsack(n: usize, seed: u64, output: &Path) -> i32 {
    if n == 0 {
        eprintln!("error: need at least one item");
        return EXIT_USAGE;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<permissive::fixtures::KnapsackItem> = (0..n)
        .map(|_| permissive::fixtures::KnapsackItem {
            value: rat(rng.gen_range(1..=4), 4),
            weight: rat(rng.gen_range(0..=6), 2),
        })
        .collect();
    let total_value: Rational = items.iter().map(|i| i.value.clone()).sum();
    let total_weight: Rational = items.iter().map(|i| i.weight.clone()).sum();
    let target_value = total_value / rat(2, 1);
    let target_weight = if total_weight.is_zero() {
        Rational::zero()
    } else {
        total_weight / rat(2, 1)
    };
    let (game, reward, psi, prop, pen_bound) =
        match permissive::fixtures::gen_knapsack_game(&items, &target_value, &target_weight) {
            Ok(x) => x,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_MODEL;
            }
        };
    let mut rewards = BTreeMap::new();
    rewards.insert(reward.name.clone(), reward);
    let game_text = io::write_game(&game, &rewards, &psi);
    let game_path = output.with_extension("game");
    if let Err(c) = write_output(&game_path, &game_text) {
        return c;
    }
    let prop_path = output.with_extension("prop");
    if let Err(c) = write_output(&prop_path, &format!("{prop}\n")) {
        return c;
    }
    println!("command=gen");
    println!("family=knapsack");
    println!("items={n}");
    println!("seed={seed}");
    println!("penalty_kind=dynamic");
    println!("penalty_bound={}", format_rational(&pen_bound));
    println!("game={}", game_path.display());
    println!("prop={}", prop_path.display());
    EXIT_OK
}
