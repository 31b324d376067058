//! Command-line front end for the qconnect library: evaluate the scalar
//! special functions, reduce systems to constant form, build connection
//! data, inspect flat objects and the Galois action, run the q -> 1
//! confluence scans, and run the runtime invariant suite.
//!
//! Every invocation prints one JSON result document (see doc.rs); `--pretty`
//! renders it indented, and the grid/scan subcommands emit CSV instead when
//! `--csv` is given. Exit codes: 0 success, 1 input or contract violation,
//! 2 numeric failure (pole proximity, non-convergence, ambiguous
//! clustering, failed self-test).

mod doc;
mod sysfile;

use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};
use qconnect::confluence::{
    char_limit_scan, connection_limit_scan, default_eps_list, errors_to_rows, local_gen_limit,
    log_limit_scan, rows_to_csv, ScanRow,
};
use qconnect::connection::{
    build_triple, connection_group_sample, connection_p, ellipticity_defect, gamma_path, pbreve,
};
use qconnect::flatcat::{hom_space, hom_window, jordan_tensor_decompose, naturality_check, act, FlatObject, GaloisElement};
use qconnect::qcore::{CharacterSpec, QParameter};
use qconnect::ratsys::BasePoint;
use qconnect::reduction::{eval_gauge, reduce_at_infty, reduce_at_zero, TruncatedMatrixSeries};
use qconnect::selftest::run_checks;
use qconnect::theta::{cocycle_phi, psi, qchar, qlog, theta, SeriesTolerance};
use qconnect::{C64, QError};
use serde_json::{json, Value};

type Result<T> = std::result::Result<T, QError>;

#[derive(Parser)]
#[command(
    name = "qconnect",
    version,
    about = "Fuchsian q-difference systems: local solutions, Birkhoff connection data, and q -> 1 confluence scans",
    long_about = None
)]
struct Cli {
    /// Pretty-print the result document.
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a scalar special function at a point or over a grid.
    Special {
        #[command(subcommand)]
        function: SpecialFn,
    },
    /// Reduce a system to constant form at 0 and infinity.
    Reduce(ReduceArgs),
    /// Build the connection triple and evaluate its matrices at points.
    Connect(ConnectArgs),
    /// Inspect a flat object and the Galois action on it.
    Flat(FlatArgs),
    /// Run a q -> 1 confluence scan.
    Confluence(ConfluenceArgs),
    /// Run the runtime invariant suite.
    Selftest {
        /// Only run checks whose name contains this string (e.g. a module
        /// name like "theta" or "confluence").
        #[arg(long)]
        filter: Option<String>,
    },
}

/// Flags shared by the special-function subcommands. The swept argument
/// under --grid is z (or the shift a for psi); grid values are moduli along
/// the ray through that argument.
#[derive(Args)]
struct PointArgs {
    /// Base q as re[,im]; default 4. Ignored when --tau is given.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    q: Option<C64>,

    /// Base tau as re[,im], giving q = e^{-2 i pi tau}; wins over --q.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    tau: Option<C64>,

    /// Series tolerance target (must be at least 1e-15).
    #[arg(long, default_value_t = 1e-15)]
    tol: f64,

    /// Sweep specification start,stop,count,log|linear: count moduli from
    /// start to stop along the ray of the swept argument.
    #[arg(long)]
    grid: Option<String>,

    /// With --grid: emit CSV with columns point_re,point_im,value_re,value_im
    /// instead of a result document.
    #[arg(long)]
    csv: bool,
}

#[derive(Subcommand)]
enum SpecialFn {
    /// Jacobi theta function at z.
    Theta {
        #[command(flatten)]
        common: PointArgs,
        /// Evaluation point z as re[,im].
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        z: C64,
    },
    /// Theta-based q-logarithm at z.
    Qlog {
        #[command(flatten)]
        common: PointArgs,
        /// Evaluation point z as re[,im].
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        z: C64,
    },
    /// q-character with label c at z.
    Qchar {
        #[command(flatten)]
        common: PointArgs,
        /// Character label c as re[,im].
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        c: C64,
        /// Evaluation point z as re[,im].
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        z: C64,
    },
    /// Character cocycle phi_{c,d} at z.
    Phi {
        #[command(flatten)]
        common: PointArgs,
        /// First character label c as re[,im].
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        c: C64,
        /// Second character label d as re[,im].
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        d: C64,
        /// Evaluation point z as re[,im].
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        z: C64,
    },
    /// Shifted theta quotient psi with shift a and label c.
    Psi {
        #[command(flatten)]
        common: PointArgs,
        /// Shift a as re[,im]; the swept argument under --grid.
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        a: C64,
        /// Character label c as re[,im].
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        c: C64,
    },
}

#[derive(Args)]
struct ReduceArgs {
    /// Path to the system file (see the README for the JSON format).
    #[arg(long)]
    system: String,

    /// Truncation order K of the reducing gauge series.
    #[arg(long, default_value_t = 40)]
    order: usize,
}

#[derive(Args)]
struct ConnectArgs {
    /// Path to the system file.
    #[arg(long)]
    system: String,

    /// Truncation order K of the local reductions.
    #[arg(long, default_value_t = 40)]
    order: usize,

    /// Evaluation point, repeatable: --point re[,im] --point re[,im] ...
    #[arg(long = "point", value_parser = parse_complex, allow_hyphen_values = true, required = true)]
    points: Vec<C64>,

    /// Sample the twisted connection component (consecutive Pbreve ratios)
    /// instead of the plain one.
    #[arg(long)]
    twisted: bool,

    /// Series tolerance target for the theta evaluations.
    #[arg(long, default_value_t = 1e-15)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum End {
    Zero,
    Infinity,
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaKind {
    Gamma1,
    Gamma2,
}

#[derive(Args)]
struct FlatArgs {
    /// Path to the system file; the flat object is the system value at --at.
    #[arg(long)]
    system: String,

    /// Which end of the system supplies the constant matrix.
    #[arg(long, value_enum, default_value_t = End::Zero)]
    at: End,

    /// Character component of the Galois element.
    #[arg(long, value_enum, default_value_t = GammaKind::Gamma1)]
    gamma: GammaKind,

    /// Unipotent exponent lambda of the Galois element, as re[,im].
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true, default_value = "0")]
    lambda: C64,

    /// Base fiber point z0 for the naturality residuals.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true, default_value = "0.8,0.3")]
    z0: C64,

    /// Also decompose a Jordan tensor product: two block sizes as n,p.
    #[arg(long)]
    jordan: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScanKind {
    /// |e_{q_eps, q_eps^gamma}(z) - z^gamma| over the eps list.
    Char,
    /// |(q_eps - 1) l_{q_eps}(z) - log z| over the eps list.
    Log,
    /// Local generator powers against the differential monodromy.
    LocalGen,
    /// Connection matrices against their locally constant limit.
    Connection,
}

#[derive(Args)]
struct ConfluenceArgs {
    /// Which scan to run.
    #[arg(long, value_enum)]
    scan: ScanKind,

    /// tau0 of the base q0 = e^{-2 i pi tau0}, as re[,im] (char/log scans).
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true, default_value = "0,0.25")]
    tau0: C64,

    /// Character exponent gamma as re[,im] (char scan).
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    gamma: Option<C64>,

    /// Scan point z as re[,im] (char/log scans).
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    z: Option<C64>,

    /// Path to the family file: tau is tau0 and the matrix is Btilde
    /// (local-gen/connection scans).
    #[arg(long)]
    family: Option<String>,

    /// Comma-separated eps values in (0, 1]; default 2^-k for k = 2..7.
    /// Processed in decreasing order.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,

    /// Connection probe, repeatable: five comma-separated fields
    /// z1_re,z1_im,z2_re,z2_im,same|across.
    #[arg(long = "probe", allow_hyphen_values = true)]
    probes: Vec<String>,

    /// Emit the error table as CSV with columns eps,probe,error instead of a
    /// result document. For the local-gen scan, probe 0 is gamma1 and probe
    /// 1 is gamma2.
    #[arg(long)]
    csv: bool,
}

fn parse_complex(s: &str) -> std::result::Result<C64, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let field = |t: &str| -> std::result::Result<f64, String> {
        t.trim()
            .parse::<f64>()
            .map_err(|_| format!("expected a number, got {t:?}"))
    };
    match parts.as_slice() {
        [re] => Ok(C64::new(field(re)?, 0.0)),
        [re, im] => Ok(C64::new(field(re)?, field(im)?)),
        _ => Err(format!("expected re or re,im, got {s:?}")),
    }
}

/// Series tolerance for the requested target, honoring the
/// QCONNECT_MAX_TERMS override.
fn tolerance(target: f64) -> Result<SeriesTolerance> {
    let max_terms = match std::env::var("QCONNECT_MAX_TERMS") {
        Ok(s) => s.trim().parse::<usize>().map_err(|_| {
            QError::Domain(format!(
                "QCONNECT_MAX_TERMS must be a positive integer, got {s:?}"
            ))
        })?,
        Err(_) => 200,
    };
    SeriesTolerance::new(target, max_terms)
}

fn base_parameter(q: Option<C64>, tau: Option<C64>) -> Result<QParameter> {
    if let Some(t) = tau {
        return QParameter::from_tau(t);
    }
    QParameter::from_q(q.unwrap_or(C64::new(4.0, 0.0)))
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| QError::Domain(format!("grid spec {spec:?}: {msg}"));
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 4 {
        return Err(bad("expected start,stop,count,log|linear"));
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad("start is not a number"))?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad("stop is not a number"))?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad("count is not an integer"))?;
    if count == 0 {
        return Err(bad("count must be positive"));
    }
    let values = match parts[3].trim() {
        "linear" => (0..count)
            .map(|i| {
                if count == 1 {
                    start
                } else {
                    start + (stop - start) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
        "log" => {
            if start <= 0.0 || stop <= 0.0 {
                return Err(bad("log spacing needs positive start and stop"));
            }
            (0..count)
                .map(|i| {
                    if count == 1 {
                        start
                    } else {
                        start * (stop / start).powf(i as f64 / (count - 1) as f64)
                    }
                })
                .collect()
        }
        other => return Err(bad(&format!("unknown spacing {other:?}"))),
    };
    Ok(values)
}

fn parse_probe(s: &str) -> Result<(C64, C64, bool)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 5 {
        return Err(QError::Domain(format!(
            "probe {s:?}: expected z1_re,z1_im,z2_re,z2_im,same|across"
        )));
    }
    let field = |t: &str| -> Result<f64> {
        t.trim()
            .parse::<f64>()
            .map_err(|_| QError::Domain(format!("probe {s:?}: {t:?} is not a number")))
    };
    let same = match parts[4].trim() {
        "same" => true,
        "across" => false,
        other => {
            return Err(QError::Domain(format!(
                "probe {s:?}: expected same or across, got {other:?}"
            )))
        }
    };
    Ok((
        C64::new(field(parts[0])?, field(parts[1])?),
        C64::new(field(parts[2])?, field(parts[3])?),
        same,
    ))
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{e}");
            return 1;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Special { function } => run_special(function, cli.pretty),
        Command::Reduce(args) => run_reduce(args, cli.pretty),
        Command::Connect(args) => run_connect(args, cli.pretty),
        Command::Flat(args) => run_flat(args, cli.pretty),
        Command::Confluence(args) => run_confluence(args, cli.pretty),
        Command::Selftest { filter } => run_selftest(filter.as_deref(), cli.pretty),
    }
}

fn run_special(function: &SpecialFn, pretty: bool) -> Result<i32> {
    // (name, shared flags, swept argument, fixed labels, evaluator)
    let (name, common, swept, labels): (&str, &PointArgs, C64, Vec<(&str, C64)>) = match function {
        SpecialFn::Theta { common, z } => ("theta", common, *z, vec![]),
        SpecialFn::Qlog { common, z } => ("qlog", common, *z, vec![]),
        SpecialFn::Qchar { common, c, z } => ("qchar", common, *z, vec![("c", *c)]),
        SpecialFn::Phi { common, c, d, z } => ("phi", common, *z, vec![("c", *c), ("d", *d)]),
        SpecialFn::Psi { common, a, c } => ("psi", common, *a, vec![("c", *c)]),
    };
    let q = base_parameter(common.q, common.tau)?;
    let tol = tolerance(common.tol)?;
    let eval = |point: C64| -> Result<C64> {
        match function {
            SpecialFn::Theta { .. } => theta(&q, point, &tol),
            SpecialFn::Qlog { .. } => qlog(&q, point, &tol),
            SpecialFn::Qchar { c, .. } => qchar(&q, *c, point, &tol),
            SpecialFn::Phi { c, d, .. } => cocycle_phi(&q, *c, *d, point, &tol),
            SpecialFn::Psi { c, .. } => psi(&q, point, *c, &tol),
        }
    };

    let mut parameters = serde_json::Map::new();
    parameters.insert("q".into(), doc::complex(q.q()));
    parameters.insert("tolerance_target".into(), json!(common.tol));
    for (key, value) in &labels {
        parameters.insert((*key).into(), doc::complex(*value));
    }
    let swept_name = if matches!(function, SpecialFn::Psi { .. }) { "a" } else { "z" };

    if let Some(spec) = &common.grid {
        let moduli = parse_grid(spec)?;
        if swept.norm() == 0.0 {
            return Err(QError::Domain(format!(
                "--grid sweeps along the ray of --{swept_name}, which must be nonzero"
            )));
        }
        let ray = swept / swept.norm();
        let points: Vec<C64> = moduli.iter().map(|&t| ray * t).collect();
        if common.csv {
            doc::print_line("point_re,point_im,value_re,value_im");
            for &p in &points {
                let v = eval(p)?;
                doc::print_line(&format!("{},{},{},{}", p.re, p.im, v.re, v.im));
            }
            return Ok(0);
        }
        let mut values = Vec::with_capacity(points.len());
        for &p in &points {
            values.push(doc::complex(eval(p)?));
        }
        parameters.insert("grid".into(), json!(spec));
        parameters.insert(swept_name.into(), doc::complex(swept));
        let outputs = json!({
            "points": points.iter().map(|&p| doc::complex(p)).collect::<Vec<_>>(),
            "values": values,
        });
        let diagnostics = json!({ "max_terms": tol.max_terms() });
        doc::emit(
            &doc::document(&format!("special {name}"), Value::Object(parameters), outputs, diagnostics),
            pretty,
        );
        return Ok(0);
    }
    if common.csv {
        return Err(QError::Domain("--csv needs --grid".into()));
    }

    parameters.insert(swept_name.into(), doc::complex(swept));
    let value = eval(swept)?;
    let outputs = json!({ "value": doc::complex(value) });
    let diagnostics = json!({ "max_terms": tol.max_terms() });
    doc::emit(
        &doc::document(&format!("special {name}"), Value::Object(parameters), outputs, diagnostics),
        pretty,
    );
    Ok(0)
}

/// Gauge functional-equation residual ||F(qz) C - A(z) F(z)|| at a sample
/// point inside the trust region, trying several ray angles in case one
/// lands near a singular spiral.
fn recurrence_residual(series: &TruncatedMatrixSeries) -> Result<(f64, C64)> {
    let sys = series.system();
    let q = sys.q().q();
    let constant = series.constant_form().matrix().clone();
    let modulus = match series.base_point() {
        BasePoint::Zero => 0.3 * series.trust_radius(),
        BasePoint::Infinity => 1.0 / (0.3 * series.trust_radius()),
    };
    let mut last = QError::Domain("no sample angle tried".into());
    for angle in [0.7, 1.3, 2.1, 2.9, 0.3] {
        let z = C64::from_polar(modulus, angle);
        let attempt = (|| -> Result<f64> {
            let lhs = eval_gauge(series, q * z)? * &constant;
            let rhs = sys.matrix().eval(z)? * eval_gauge(series, z)?;
            Ok((lhs - rhs).norm())
        })();
        match attempt {
            Ok(r) => return Ok((r, z)),
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn run_reduce(args: &ReduceArgs, pretty: bool) -> Result<i32> {
    let sys = sysfile::load_system(&args.system)?;
    let mut outputs = serde_json::Map::new();
    for (key, series) in [
        ("zero", reduce_at_zero(&sys, args.order)?),
        ("infinity", reduce_at_infty(&sys, args.order)?),
    ] {
        let (residual, at) = recurrence_residual(&series)?;
        outputs.insert(
            key.into(),
            json!({
                "constant_form": doc::matrix(series.constant_form().matrix()),
                "order": series.order(),
                "trust_radius": series.trust_radius(),
                "recurrence_residual": residual,
                "residual_point": doc::complex(at),
            }),
        );
    }
    let parameters = json!({
        "system": args.system,
        "q": doc::complex(sys.q().q()),
        "order": args.order,
    });
    let locus = sys.singular_locus()?;
    let diagnostics = json!({
        "singular_locus": locus
            .points
            .iter()
            .map(|(p, mult)| json!({ "point": doc::complex(*p), "multiplicity": mult }))
            .collect::<Vec<_>>(),
    });
    doc::emit(
        &doc::document("reduce", parameters, Value::Object(outputs), diagnostics),
        pretty,
    );
    Ok(0)
}

fn run_connect(args: &ConnectArgs, pretty: bool) -> Result<i32> {
    let sys = sysfile::load_system(&args.system)?;
    let tol = tolerance(args.tol)?;
    let triple = build_triple(&sys, args.order)?;
    let mut per_point = Vec::with_capacity(args.points.len());
    for &z in &args.points {
        per_point.push(json!({
            "z": doc::complex(z),
            "m": doc::matrix(&triple.m(z)?),
            "p": doc::matrix(&connection_p(&triple, z, &tol)?),
            "pbreve": doc::matrix(&pbreve(&triple, z, &tol)?),
            "gamma_path": doc::matrix(&gamma_path(&triple, z)?),
        }));
    }
    let samples: Vec<Value> = if args.points.len() >= 2 {
        connection_group_sample(&triple, &args.points, args.twisted, &tol)?
            .iter()
            .map(doc::matrix)
            .collect()
    } else {
        Vec::new()
    };
    let ellipticity = ellipticity_defect(&triple, &args.points, &tol)?;
    let singular: Vec<Value> = triple
        .sigma_set()
        .points
        .iter()
        .map(|(s, mult)| json!({ "point": doc::complex(*s), "multiplicity": mult }))
        .collect();
    let outputs = json!({
        "points": per_point,
        "group_samples": samples,
        "ellipticity_defect": ellipticity,
    });
    let parameters = json!({
        "system": args.system,
        "q": doc::complex(sys.q().q()),
        "order": args.order,
        "twisted": args.twisted,
        "tolerance_target": args.tol,
        "points": args.points.iter().map(|&p| doc::complex(p)).collect::<Vec<_>>(),
    });
    let diagnostics = json!({
        "max_terms": tol.max_terms(),
        "singular_locus": singular,
        "exponent_group_generators": triple
            .exponent_group_gens()
            .iter()
            .map(|&g| doc::complex(g))
            .collect::<Vec<_>>(),
    });
    doc::emit(
        &doc::document("connect", parameters, outputs, diagnostics),
        pretty,
    );
    Ok(0)
}

fn run_flat(args: &FlatArgs, pretty: bool) -> Result<i32> {
    let sys = sysfile::load_system(&args.system)?;
    let at = match args.at {
        End::Zero => BasePoint::Zero,
        End::Infinity => BasePoint::Infinity,
    };
    let x = FlatObject::new(sys.q().clone(), sys.value_at(at)?)?;
    let spec = match args.gamma {
        GammaKind::Gamma1 => CharacterSpec::gamma1(),
        GammaKind::Gamma2 => CharacterSpec::gamma2(),
    };
    let g = GaloisElement::new(spec, args.lambda);

    let spectrum: Vec<Value> = x
        .annulus_spectrum()
        .iter()
        .map(|d| json!({ "epsilon": d.epsilon, "reduced": doc::complex(d.reduced) }))
        .collect();
    let basis = hom_space(&x, &x, hom_window(&x, &x))?;
    let mut worst_naturality = 0.0f64;
    let mut basis_json = Vec::with_capacity(basis.len());
    for f in &basis {
        worst_naturality = worst_naturality.max(naturality_check(&g, f, &x, &x, args.z0, None)?);
        let terms: Vec<Value> = f
            .terms()
            .iter()
            .map(|(k, m)| json!({ "degree": k, "coeff": doc::matrix(m) }))
            .collect();
        basis_json.push(json!({ "terms": terms }));
    }

    let mut outputs = serde_json::Map::new();
    outputs.insert("matrix".into(), doc::matrix(x.matrix()));
    outputs.insert("semisimple".into(), doc::matrix(x.dunford().semisimple()));
    outputs.insert("unipotent".into(), doc::matrix(x.dunford().unipotent()));
    outputs.insert("annulus_spectrum".into(), Value::Array(spectrum));
    outputs.insert("galois_action".into(), doc::matrix(&act(&g, &x)?));
    outputs.insert("endomorphism_basis".into(), Value::Array(basis_json));
    outputs.insert("naturality_residual".into(), json!(worst_naturality));
    if let Some(spec) = &args.jordan {
        let parts: Vec<&str> = spec.split(',').collect();
        let sizes: Result<Vec<usize>> = parts
            .iter()
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| QError::Domain(format!("--jordan {spec:?}: expected n,p")))
            })
            .collect();
        let sizes = sizes?;
        if sizes.len() != 2 {
            return Err(QError::Domain(format!("--jordan {spec:?}: expected n,p")));
        }
        outputs.insert(
            "jordan_tensor_blocks".into(),
            json!(jordan_tensor_decompose(sizes[0], sizes[1])?),
        );
    }

    let gamma_name = match args.gamma {
        GammaKind::Gamma1 => "gamma1",
        GammaKind::Gamma2 => "gamma2",
    };
    let parameters = json!({
        "system": args.system,
        "q": doc::complex(sys.q().q()),
        "at": match args.at { End::Zero => "zero", End::Infinity => "infinity" },
        "gamma": gamma_name,
        "lambda": doc::complex(args.lambda),
        "z0": doc::complex(args.z0),
    });
    let diagnostics = json!({
        "hom_window": hom_window(&x, &x),
        "basis_dimension": basis.len(),
    });
    doc::emit(
        &doc::document("flat", parameters, Value::Object(outputs), diagnostics),
        pretty,
    );
    Ok(0)
}

fn run_confluence(args: &ConfluenceArgs, pretty: bool) -> Result<i32> {
    let mut eps = if args.eps.is_empty() {
        default_eps_list()
    } else {
        args.eps.clone()
    };
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));

    let need = |flag: &str, ok: bool| -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(QError::Domain(format!("this scan needs {flag}")))
        }
    };
    let (name, rows): (&str, Vec<ScanRow>) = match args.scan {
        ScanKind::Char => {
            need("--gamma", args.gamma.is_some())?;
            need("--z", args.z.is_some())?;
            let q0 = QParameter::from_tau(args.tau0)?;
            let errors = char_limit_scan(&q0, args.gamma.unwrap(), args.z.unwrap(), &eps)?;
            ("char", errors_to_rows(&eps, 0, &errors))
        }
        ScanKind::Log => {
            need("--z", args.z.is_some())?;
            let q0 = QParameter::from_tau(args.tau0)?;
            let errors = log_limit_scan(&q0, args.z.unwrap(), &eps)?;
            ("log", errors_to_rows(&eps, 0, &errors))
        }
        ScanKind::LocalGen => {
            need("--family", args.family.is_some())?;
            let family = sysfile::load_family(args.family.as_ref().unwrap())?;
            let (g1, g2) = local_gen_limit(&family, &eps)?;
            let mut rows = errors_to_rows(&eps, 0, &g1);
            rows.extend(errors_to_rows(&eps, 1, &g2));
            ("local-gen", rows)
        }
        ScanKind::Connection => {
            need("--family", args.family.is_some())?;
            need("at least one --probe", !args.probes.is_empty())?;
            let family = sysfile::load_family(args.family.as_ref().unwrap())?;
            let probes: Result<Vec<(C64, C64, bool)>> =
                args.probes.iter().map(|s| parse_probe(s)).collect();
            ("connection", connection_limit_scan(&family, &eps, &probes?)?)
        }
    };

    if args.csv {
        doc::print_line(rows_to_csv(&rows).trim_end());
        return Ok(0);
    }

    let rows_json: Vec<Value> = rows
        .iter()
        .map(|r| json!({ "eps": r.eps, "probe": r.probe, "error": r.error }))
        .collect();
    let mut parameters = serde_json::Map::new();
    parameters.insert("scan".into(), json!(name));
    parameters.insert("eps".into(), json!(eps));
    parameters.insert("tau0".into(), doc::complex(args.tau0));
    if let Some(g) = args.gamma {
        parameters.insert("gamma".into(), doc::complex(g));
    }
    if let Some(z) = args.z {
        parameters.insert("z".into(), doc::complex(z));
    }
    if let Some(f) = &args.family {
        parameters.insert("family".into(), json!(f));
    }
    if !args.probes.is_empty() {
        parameters.insert("probes".into(), json!(args.probes));
    }
    let outputs = json!({ "rows": rows_json });
    let diagnostics = json!({
        "eps_count": eps.len(),
        "slack_reference": 1.2,
    });
    doc::emit(
        &doc::document(
            &format!("confluence {name}"),
            Value::Object(parameters),
            outputs,
            diagnostics,
        ),
        pretty,
    );
    Ok(0)
}

fn run_selftest(filter: Option<&str>, pretty: bool) -> Result<i32> {
    let reports = run_checks(filter);
    if reports.is_empty() {
        return Err(QError::Domain(format!(
            "no self-test checks match filter {:?}",
            filter.unwrap_or("")
        )));
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    let rows: Vec<Value> = reports
        .iter()
        .map(|r| json!({ "name": r.name, "passed": r.passed, "detail": r.detail }))
        .collect();
    let parameters = match filter {
        Some(f) => json!({ "filter": f }),
        None => json!({}),
    };
    let outputs = json!({ "reports": rows });
    let diagnostics = json!({
        "total": reports.len(),
        "failed": failed,
    });
    doc::emit(
        &doc::document("selftest", parameters, outputs, diagnostics),
        pretty,
    );
    Ok(if failed > 0 { 2 } else { 0 })
}
