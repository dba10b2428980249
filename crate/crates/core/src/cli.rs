//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input or validation
//! error, 3 iteration budget exhausted.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde::Serialize;

use crate::axioms::check_axioms;
use crate::model::{load_model, MdpModel, Policy};
use crate::nested::{
    check_decomposition, check_uniform_bound, rho_limit, rho_trace, TreeDocument, TreeError,
};
use crate::risk::RiskSpec;
use crate::solver::{check_contraction, check_contraction_against, evaluate_policy, value_iteration, SolveError};
use crate::verify::{run_verify, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "riskdp", version, about = "Risk-averse discounted dynamic programming")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Risk spec: expectation | cvar:<alpha> | mean-cvar:<lambda>:<alpha> | worst-case.
    /// Overrides the model file.
    #[arg(long)]
    pub risk: Option<String>,
    #[arg(long, default_value_t = 1e-8, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run value iteration on a model.
    Solve {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fixed-policy value by the single-action Bellman recursion.
    EvaluatePolicy {
        #[arg(long)]
        model: PathBuf,
        /// JSON object mapping state to action; defaults to the first
        /// admissible action everywhere.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Empirical sup-norm contraction check of the Bellman operator.
    CheckContraction {
        #[arg(long)]
        model: PathBuf,
        /// Amplitude of the random value functions.
        #[arg(long, default_value_t = 10.0)]
        amplitude: f64,
        /// Check an operator with an inflated discount against the declared
        /// one; the harness must report violations.
        #[arg(long)]
        self_test: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Coherence axioms and support-boundedness on random distributions.
    CheckAxioms {
        #[command(flatten)]
        common: Common,
    },
    /// Nested risk trace and limit checks on a scenario tree file.
    NestedEval {
        #[arg(long)]
        tree: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every harness on the built-in fixtures.
    Verify {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Run against deliberately corrupted fixtures; must fail.
        #[arg(long)]
        self_test: bool,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure carrying its exit code; the message goes to the error stream.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

struct Output {
    body: String,
    code: i32,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let common = match &cli.command {
        Command::Solve { common, .. }
        | Command::EvaluatePolicy { common, .. }
        | Command::CheckContraction { common, .. }
        | Command::CheckAxioms { common }
        | Command::NestedEval { common, .. }
        | Command::Verify { common, .. } => common,
    };
    match dispatch(&cli.command, common, stderr) {
        Ok(out) => {
            let written = match &common.output {
                Some(path) => fs::write(path, &out.body).map_err(|e| e.to_string()),
                None => stdout.write_all(out.body.as_bytes()).map_err(|e| e.to_string()),
            };
            match written {
                Ok(()) => out.code,
                Err(e) => {
                    let _ = writeln!(stderr, "error: cannot write output: {e}");
                    EXIT_INPUT
                }
            }
        }
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: &Command, common: &Common, stderr: &mut dyn Write) -> Result<Output, Failure> {
    if !(common.theta.is_finite() && common.theta > 0.0) {
        return Err(input_error(format!("--theta must be positive, got {}", common.theta)));
    }
    let risk = parse_risk(common)?;
    match command {
        Command::Solve { model, .. } => cmd_solve(&read_model(model, risk)?, common, stderr),
        Command::EvaluatePolicy { model, policy, .. } => {
            cmd_evaluate_policy(&read_model(model, risk)?, policy.as_ref(), common)
        }
        Command::CheckContraction {
            model,
            amplitude,
            self_test,
            ..
        } => cmd_check_contraction(&read_model(model, risk)?, *amplitude, *self_test, common),
        Command::CheckAxioms { .. } => cmd_check_axioms(risk.unwrap_or_default(), common),
        Command::NestedEval { tree, .. } => cmd_nested_eval(tree, risk.unwrap_or_default(), common),
        Command::Verify { model, self_test, .. } => {
            let extra = match model {
                Some(path) => Some((path.display().to_string(), read_model(path, risk)?)),
                None => None,
            };
            cmd_verify(risk.unwrap_or_default(), extra, *self_test, common)
        }
    }
}

fn parse_risk(common: &Common) -> Result<Option<RiskSpec>, Failure> {
    common
        .risk
        .as_deref()
        .map(|s| s.parse::<RiskSpec>().map_err(|e| input_error(format!("--risk: {e}"))))
        .transpose()
}

fn read_text(path: &PathBuf) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn read_model(path: &PathBuf, risk: Option<RiskSpec>) -> Result<MdpModel, Failure> {
    let model = load_model(&read_text(path)?)
        .map_err(|e| input_error(format!("{}: [{}] {e}", path.display(), e.code())))?;
    Ok(match risk {
        Some(r) => model.with_risk(r),
        None => model,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialises");
    s.push('\n');
    s
}

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_only(common: &Common, what: &str) -> Result<(), Failure> {
    match common.format {
        Format::Json => Ok(()),
        Format::Csv => Err(input_error(format!("{what} has no csv output"))),
    }
}

fn solve_failure(e: SolveError) -> Failure {
    let code = match e {
        SolveError::MaxItersExceeded { .. } => EXIT_BUDGET,
        _ => EXIT_INPUT,
    };
    Failure {
        code,
        message: format!("[{}] {e}", e.code()),
    }
}

fn cmd_solve(model: &MdpModel, common: &Common, stderr: &mut dyn Write) -> Result<Output, Failure> {
    let zero = crate::model::ValueFunction::zeros(model.n_states());
    let report = value_iteration(model, &zero, common.theta, common.max_iters).map_err(solve_failure)?;
    let _ = writeln!(
        stderr,
        "converged after {} iterations in {:?}",
        report.iterations, report.elapsed
    );
    let body = match common.format {
        Format::Json => {
            let mut doc = report.to_json(model);
            doc.as_object_mut()
                .expect("report is an object")
                .insert("risk".into(), serde_json::Value::String(model.risk().to_string()));
            to_json(&doc)
        }
        Format::Csv => {
            let mut s = String::from("iteration,residual,banach_bound\n");
            for (k, residual, bound) in report.trace_rows() {
                s.push_str(&format!("{k},{},{}\n", num(residual), num(bound)));
            }
            s
        }
    };
    Ok(Output { body, code: EXIT_OK })
}

fn cmd_evaluate_policy(
    model: &MdpModel,
    policy_path: Option<&PathBuf>,
    common: &Common,
) -> Result<Output, Failure> {
    json_only(common, "evaluate-policy")?;
    let choice = match policy_path {
        None => vec![0; model.n_states()],
        Some(path) => {
            let map: IndexMap<String, String> = serde_json::from_str(&read_text(path)?)
                .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            let mut choice = Vec::with_capacity(model.n_states());
            for (s, name) in model.state_names().iter().enumerate() {
                let action = map
                    .get(name)
                    .ok_or_else(|| input_error(format!("policy has no action for state `{name}`")))?;
                let a = model.action_index(s, action).ok_or_else(|| {
                    input_error(format!("action `{action}` is not admissible in state `{name}`"))
                })?;
                choice.push(a);
            }
            choice
        }
    };
    let policy = Policy::new(model, choice).map_err(|e| input_error(e.to_string()))?;
    let (values, iterations) =
        evaluate_policy(model, &policy, common.theta, common.max_iters).map_err(solve_failure)?;
    #[derive(Serialize)]
    struct Out {
        risk: RiskSpec,
        policy: IndexMap<String, String>,
        values: IndexMap<String, f64>,
        iterations: usize,
    }
    Ok(Output {
        body: to_json(&Out {
            risk: model.risk(),
            policy: policy.named(model),
            values: values.named(model),
            iterations,
        }),
        code: EXIT_OK,
    })
}

fn cmd_check_contraction(
    model: &MdpModel,
    amplitude: f64,
    self_test: bool,
    common: &Common,
) -> Result<Output, Failure> {
    json_only(common, "check-contraction")?;
    if !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(input_error(format!("--amplitude must be positive, got {amplitude}")));
    }
    if common.trials == 0 {
        return Err(input_error("--trials must be at least 1"));
    }
    let report = if self_test {
        let gamma = model.gamma();
        let inflated = model.clone().with_gamma_unchecked(gamma + (1.0 - gamma) / 2.0);
        check_contraction_against(&inflated, gamma, common.trials, amplitude, common.seed)
    } else {
        check_contraction(model, common.trials, amplitude, common.seed)
    };
    let code = if report.holds() { EXIT_OK } else { EXIT_VERIFY_FAILED };
    Ok(Output {
        body: to_json(&report),
        code,
    })
}

fn cmd_check_axioms(risk: RiskSpec, common: &Common) -> Result<Output, Failure> {
    json_only(common, "check-axioms")?;
    let report = check_axioms(risk, common.trials, common.seed);
    let code = if report.all_passed() { EXIT_OK } else { EXIT_VERIFY_FAILED };
    Ok(Output {
        body: to_json(&report),
        code,
    })
}

#[derive(Debug, Serialize)]
struct CheckVerdict {
    check: &'static str,
    applicable: bool,
    passed: Option<bool>,
    detail: String,
}

fn not_applicable(check: &'static str, why: String) -> CheckVerdict {
    CheckVerdict {
        check,
        applicable: false,
        passed: None,
        detail: why,
    }
}

fn cmd_nested_eval(path: &PathBuf, risk: RiskSpec, common: &Common) -> Result<Output, Failure> {
    let doc: TreeDocument = serde_json::from_str(&read_text(path)?)
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let (tree, process) = doc
        .build()
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let trace = rho_trace(&tree, &process, &risk);

    let mut checks = Vec::new();
    checks.push(match rho_limit(&tree, &process, &risk) {
        Ok(r) => CheckVerdict {
            check: "nested-limit-monotone",
            applicable: true,
            passed: Some(r.holds()),
            detail: format!(
                "trace non-increasing: {}, within [{}, {}]: {}",
                r.trace_non_increasing, r.bounds.lo, r.bounds.hi, r.trace_bounded
            ),
        },
        Err(e) => not_applicable("nested-limit-monotone", e.to_string()),
    });
    checks.push(match &doc.eps {
        None => not_applicable("uniform-tail-bound", "no eps in tree file".into()),
        Some(eps) => match check_uniform_bound(&tree, &process, &risk, eps) {
            Ok(r) => CheckVerdict {
                check: "uniform-tail-bound",
                applicable: true,
                passed: Some(r.holds()),
                detail: format!("{} pairs, min upper slack {:e}", r.pairs, r.min_upper_slack),
            },
            Err(e @ (TreeError::EpsLength { .. } | TreeError::BadEps { .. })) => {
                return Err(input_error(format!("{}: {e}", path.display())))
            }
            Err(e) => not_applicable("uniform-tail-bound", e.to_string()),
        },
    });
    checks.push(match check_decomposition(&tree, &process, &risk) {
        Ok(r) => CheckVerdict {
            check: "one-step-decomposition",
            applicable: true,
            passed: Some(r.holds()),
            detail: format!("lhs {}, rhs {}, residual {:e}", r.lhs, r.rhs, r.residual()),
        },
        Err(e) => not_applicable("one-step-decomposition", e.to_string()),
    });
    let code = if checks.iter().all(|c| c.passed != Some(false)) {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    };

    let body = match common.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                risk: RiskSpec,
                depth: usize,
                trace: &'a [f64],
                checks: &'a [CheckVerdict],
            }
            to_json(&Out {
                risk,
                depth: tree.depth(),
                trace: &trace,
                checks: &checks,
            })
        }
        Format::Csv => {
            let mut s = String::from("t,rho\n");
            for (t, r) in trace.iter().enumerate() {
                s.push_str(&format!("{t},{}\n", num(*r)));
            }
            s
        }
    };
    Ok(Output { body, code })
}

fn cmd_verify(
    risk: RiskSpec,
    extra_model: Option<(String, MdpModel)>,
    corrupt: bool,
    common: &Common,
) -> Result<Output, Failure> {
    json_only(common, "verify")?;
    let report = run_verify(&VerifyConfig {
        risk,
        seed: common.seed,
        trials: common.trials,
        extra_model,
        corrupt,
    });
    let code = if report.all_passed() { EXIT_OK } else { EXIT_VERIFY_FAILED };
    Ok(Output {
        body: to_json(&report),
        code,
    })
}
