use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use cdkn::cd_verify::{
    check_cd, check_density_bound_cd, check_density_bound_strong, check_strong_displacement_convexity, evi_check,
    random_pair, CdConfig, FlowTrajectory, Verdict,
};
use cdkn::entropy::{beta_at_distance, beta_lower_bound, evaluate_entropy, Dim, DistortionParams, EntropySpec};
use cdkn::examples::{generate_example, ExampleParams};
use cdkn::geodesics::ChainOptions;
use cdkn::poincare::{
    certify_strong_poincare, certify_weak_poincare, poincare_sweep, slope_gradient, standard_suite, FunctionSpec,
};
use cdkn::space::{ball, doubling_constant, validate_metric};
use cdkn::space_file::SpaceFile;
use cdkn::transport::{interpolate_at, optimal_dynamical_plan, w2, ProbMeasure};
use cdkn::uniqueness::{branch_violation_search, multiplicity_report, BranchOutcome, SearchParams};
use cdkn::FiniteMetricMeasureSpace;

use crate::output::{self, CliError, Outcome, Plot, Status};
use crate::{Cli, Command, Common, Format, Pair};

type Res<T> = std::result::Result<T, CliError>;

struct Loaded {
    space: FiniteMetricMeasureSpace,
    file: SpaceFile,
}

impl Loaded {
    fn kappa(&self, c: &Common) -> f64 {
        c.kappa.or(self.file.metadata.kappa).unwrap_or(0.0)
    }

    fn dim(&self, c: &Common) -> Dim {
        c.dim.or(self.file.metadata.dim).unwrap_or(Dim::Finite(1.0))
    }

    fn params(&self, c: &Common) -> DistortionParams {
        DistortionParams::new(self.kappa(c), self.dim(c))
    }
}

fn load(c: &Common) -> Res<Loaded> {
    let path = c.space.as_ref().ok_or_else(|| CliError::Usage("this command needs --space".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input { path: path.display().to_string(), message: e.to_string() })?;
    let file = SpaceFile::from_json(&text)?;
    let space = file.to_space()?;
    Ok(Loaded { space, file })
}

fn chain_options(c: &Common, space: &FiniteMetricMeasureSpace) -> Res<ChainOptions> {
    if c.k == 0 {
        return Err(CliError::Usage("--k must be positive".into()));
    }
    let mut opts = ChainOptions::for_space(space, c.k);
    if let Some(eps) = c.eps_geo {
        opts = opts.with_eps(eps);
    }
    if let Some(cap) = c.cap {
        opts = opts.with_cap(cap);
    }
    Ok(opts)
}

fn point(space: &FiniteMetricMeasureSpace, id: &str) -> Res<usize> {
    if let Some(i) = space.index_of(id) {
        return Ok(i);
    }
    match id.parse::<usize>() {
        Ok(i) if i < space.len() => Ok(i),
        _ => Err(CliError::Usage(format!("unknown point `{id}`"))),
    }
}

fn check_point(space: &FiniteMetricMeasureSpace, p: usize) -> Res<usize> {
    if p < space.len() {
        Ok(p)
    } else {
        Err(CliError::Usage(format!("point {p} out of range (space has {} points)", space.len())))
    }
}

fn parse_measure(space: &FiniteMetricMeasureSpace, spec: &str) -> Res<ProbMeasure> {
    let spec = spec.trim();
    if spec == "uniform" {
        return Ok(ProbMeasure::uniform(space));
    }
    if let Some(id) = spec.strip_prefix("dirac:") {
        return Ok(ProbMeasure::dirac(space, point(space, id)?));
    }
    let weights: Vec<f64> = spec
        .split(',')
        .map(|w| w.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("not a weight: `{w}`"))))
        .collect::<Res<_>>()?;
    Ok(ProbMeasure::from_unnormalized(space, weights)?)
}

/// The supplied pair, or the seeded random pair for missing sides.
fn measures(space: &FiniteMetricMeasureSpace, pair: &Pair, seed: u64) -> Res<(ProbMeasure, ProbMeasure)> {
    let (r0, r1) = random_pair(space, seed, 0)?;
    let mu = pair.mu.as_deref().map(|m| parse_measure(space, m)).transpose()?.unwrap_or(r0);
    let nu = pair.nu.as_deref().map(|m| parse_measure(space, m)).transpose()?.unwrap_or(r1);
    Ok((mu, nu))
}

fn parse_function(space: &FiniteMetricMeasureSpace, spec: &str) -> Res<FunctionSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| CliError::Usage(format!("not a number: `{s}`")));
    match parts.as_slice() {
        ["distance", p] => Ok(FunctionSpec::Distance { from: point(space, p)? }),
        ["lipschitz", seed] => Ok(FunctionSpec::Lipschitz {
            seed: seed.parse().map_err(|_| CliError::Usage(format!("not a seed: `{seed}`")))?,
            anchors: 8,
            lipschitz: 1.0,
        }),
        ["ramp", p, start, width] => Ok(FunctionSpec::Ramp { from: point(space, p)?, start: num(start)?, width: num(width)? }),
        _ => Err(CliError::Usage(format!("unknown function `{spec}`"))),
    }
}

/// One chain hop plus the slack: the smallest slope radius no hop can skip.
fn hop_radius(space: &FiniteMetricMeasureSpace, opts: &ChainOptions) -> f64 {
    space.diam() / opts.k as f64 + opts.slack
}

fn critical(dim: Dim) -> EntropySpec {
    EntropySpec::critical(dim)
}

fn to_value<T: serde::Serialize>(v: &T) -> Res<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Output(e.to_string()))
}

fn config(cli: &Cli) -> Value {
    let c = &cli.common;
    json!({
        "space": c.space.as_ref().map(|p| p.display().to_string()),
        "k": c.k,
        "eps_geo": c.eps_geo.unwrap_or(1.5 / c.k.max(1) as f64),
        "kappa": c.kappa,
        "dim": c.dim.map(|d| d.to_string()),
        "seed": c.seed,
        "samples": c.samples,
        "cap": c.cap,
        "tol": c.tol,
        "args": serde_json::to_value(&cli.command).unwrap_or(Value::Null),
    })
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Validate => "validate",
        Command::Generate { .. } => "generate",
        Command::W2 { .. } => "w2",
        Command::Interpolate { .. } => "interpolate",
        Command::Entropy { .. } => "entropy",
        Command::Beta { .. } => "beta",
        Command::CdCheck => "cd-check",
        Command::ConvexityCheck { .. } => "convexity-check",
        Command::DensityCheck { .. } => "density-check",
        Command::EviCheck { .. } => "evi-check",
        Command::PoincareCertify { .. } => "poincare-certify",
        Command::PoincareSweep { .. } => "poincare-sweep",
        Command::Uniqueness { .. } => "uniqueness",
        Command::BranchSearch { .. } => "branch-search",
        Command::Doubling { .. } => "doubling",
    }
}

/// Runs the command, writes its report and returns the exit code.
pub fn run(cli: &Cli) -> u8 {
    let command = name(&cli.command);
    let cfg = config(cli);
    let out = cli.common.out.as_deref();
    let result = execute(cli).and_then(|outcome| {
        let text = match cli.common.format {
            Format::Json if outcome.raw => pretty(&outcome.result)?,
            Format::Json => pretty(&output::envelope(command, &cfg, &outcome))?,
            Format::Csv => output::to_csv(&outcome.rows)?,
        };
        if let (Some(path), Some(plot)) = (&cli.common.plot, &outcome.plot) {
            output::render_plot(plot, path)?;
        }
        output::emit(&text, out)?;
        Ok(outcome.status.exit_code())
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let text = pretty(&output::error_envelope(command, &cfg, &e)).unwrap_or_else(|_| e.to_string());
            if output::emit(&text, out).is_err() {
                eprintln!("{text}");
            }
            e.exit_code()
        }
    }
}

fn pretty(v: &Value) -> Res<String> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Output(e.to_string()))
}

fn execute(cli: &Cli) -> Res<Outcome> {
    let c = &cli.common;
    match &cli.command {
        Command::Generate { name, n, arm_length, arm_separation, subdivisions } => {
            let p = ExampleParams {
                n: *n,
                arm_length: *arm_length,
                arm_separation: *arm_separation,
                subdivisions: *subdivisions,
                seed: c.seed,
            };
            let file = generate_example(name, &p)?;
            // fail here rather than in a later load
            file.to_space()?;
            let mut outcome = Outcome::new(Status::Ok, to_value(&file)?);
            outcome.raw = true;
            Ok(outcome)
        }
        Command::Beta { t, dist, diameter } => {
            let params = DistortionParams::new(c.kappa.unwrap_or(0.0), c.dim.unwrap_or(Dim::Finite(1.0)));
            let value = beta_at_distance(*t, *dist, params)?;
            let lower = if params.k <= 0.0 { Some(beta_lower_bound(params, diameter.unwrap_or(*dist))?) } else { None };
            Ok(Outcome::new(Status::Ok, json!({ "t": t, "distance": dist, "beta": value, "lower_bound": lower })))
        }
        cmd => {
            let loaded = load(c)?;
            with_space(cli, cmd, &loaded)
        }
    }
}

fn with_space(cli: &Cli, cmd: &Command, l: &Loaded) -> Res<Outcome> {
    let c = &cli.common;
    let s = &l.space;
    match cmd {
        Command::Validate => {
            let report = validate_metric(s);
            let status = if report.is_empty() { Status::Ok } else { Status::Negative };
            Ok(Outcome::new(
                status,
                json!({
                    "points": s.len(),
                    "diameter": s.diam(),
                    "min_distance": s.min_positive_distance(),
                    "total_mass": s.total_mass(),
                    "metadata": to_value(&l.file.metadata)?,
                    "violations": to_value(&report)?,
                }),
            ))
        }
        Command::W2 { pair } => {
            let (mu, nu) = measures(s, pair, c.seed)?;
            let (d, coupling) = w2(s, &mu, &nu)?;
            let rows: Vec<Value> = coupling.cells().iter().map(|&(i, j, m)| json!({ "from": i, "to": j, "mass": m })).collect();
            Ok(Outcome::new(Status::Ok, json!({ "w2": d, "mu": mu.weights(), "nu": nu.weights(), "coupling": rows }))
                .rows(rows))
        }
        Command::Interpolate { pair } => {
            let (mu, nu) = measures(s, pair, c.seed)?;
            let opts = chain_options(c, s)?;
            let plan = optimal_dynamical_plan(s, &mu, &nu, &opts)?;
            let spec = critical(l.dim(c));
            let mut rows = Vec::new();
            let mut curve = Vec::new();
            for i in 0..=opts.k {
                let m = interpolate_at(&plan, i, s)?;
                let t = i as f64 / opts.k as f64;
                let e = evaluate_entropy(&spec, &m, s);
                curve.push((t, e));
                rows.push(json!({ "t": t, "entropy": e, "max_density": m.max_density(), "weights": m.weights() }));
            }
            let chord: Vec<(f64, f64)> =
                curve.iter().map(|&(t, _)| (t, (1.0 - t) * curve[0].1 + t * curve[curve.len() - 1].1)).collect();
            let plot = Plot {
                title: format!("{} along the interpolation", spec.label()),
                x_label: "t".into(),
                y_label: "entropy".into(),
                series: vec![(spec.label(), curve), ("chord".into(), chord)],
            };
            Ok(Outcome::new(Status::Ok, json!({ "functional": spec.label(), "plan": to_value(&plan)?, "steps": rows }))
                .rows(rows)
                .plot(plot))
        }
        Command::Entropy { mu, power } => {
            let m = match mu {
                Some(m) => parse_measure(s, m)?,
                None => ProbMeasure::uniform(s),
            };
            let spec = match power {
                Some(p) => EntropySpec::power(*p)?,
                None => critical(l.dim(c)),
            };
            Ok(Outcome::new(Status::Ok, json!({ "functional": spec.label(), "value": evaluate_entropy(&spec, &m, s) })))
        }
        Command::CdCheck => {
            let mut cfg = CdConfig::new(chain_options(c, s)?, c.samples, c.seed);
            cfg.tol = c.tol;
            if let Some(cap) = c.cap {
                cfg.plan_cap = cap;
            }
            let report = check_cd(s, l.params(c), &cfg)?;
            let status = match report.verdict {
                Verdict::Consistent => Status::Ok,
                Verdict::Violated => Status::Negative,
                Verdict::Inconclusive => Status::Limit,
            };
            let rows: Vec<Value> = report
                .samples
                .iter()
                .map(|x| {
                    json!({ "index": x.index, "plans_tried": x.plans_tried, "best_margin": x.best_margin,
                            "consistent": x.consistent, "complete": x.complete })
                })
                .collect();
            let plot = Plot {
                title: format!("CD({}, {}) margins", report.kappa, report.dim),
                x_label: "sample".into(),
                y_label: "best margin + slack".into(),
                series: vec![("margin".into(), report.samples.iter().map(|x| (x.index as f64, x.best_margin)).collect())],
            };
            Ok(Outcome::new(status, to_value(&report)?).rows(rows).plot(plot))
        }
        Command::ConvexityCheck { pair } => {
            let opts = chain_options(c, s)?;
            let spec = critical(l.dim(c));
            let tol = c.tol.unwrap_or(0.05);
            let pairs: Vec<(ProbMeasure, ProbMeasure)> = if pair.mu.is_some() || pair.nu.is_some() {
                vec![measures(s, pair, c.seed)?]
            } else {
                (0..c.samples).map(|i| random_pair(s, c.seed, i)).collect::<cdkn::Result<_>>()?
            };
            let cap = c.cap.unwrap_or(cdkn::cd_verify::DEFAULT_PLAN_CAP);
            let reports = pairs
                .iter()
                .map(|(mu, nu)| check_strong_displacement_convexity(s, &spec, mu, nu, &opts, cap, tol))
                .collect::<cdkn::Result<Vec<_>>>()?;
            let violation = reports.iter().position(|r| !r.consistent());
            let complete = reports.iter().all(|r| r.complete);
            let status = match (violation, complete) {
                (Some(_), _) => Status::Negative,
                (None, false) => Status::Limit,
                (None, true) => Status::Ok,
            };
            let rows: Vec<Value> = reports
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    json!({ "pair": i, "plans_checked": r.plans_checked, "worst_margin": r.worst_margin,
                            "consistent": r.consistent(), "complete": r.complete })
                })
                .collect();
            let result = json!({
                "functional": spec.label(),
                "tolerance": tol,
                "first_violation": violation,
                "reports": to_value(&reports)?,
            });
            Ok(Outcome::new(status, result).rows(rows))
        }
        Command::DensityCheck { pair } => {
            let (mu, nu) = measures(s, pair, c.seed)?;
            let opts = chain_options(c, s)?;
            let plan = optimal_dynamical_plan(s, &mu, &nu, &opts)?;
            let bound = mu.max_density().max(nu.max_density());
            let tol = c.tol.unwrap_or(0.1);
            let params = l.params(c);
            let (report, extra) = if params.k <= 0.0 {
                (check_density_bound_cd(&plan, bound, params, s.diam(), s, tol)?, Value::Null)
            } else {
                let strong = check_density_bound_strong(&plan, bound, s, tol)?;
                (strong.report.clone(), to_value(&strong)?)
            };
            let rows: Vec<Value> = report
                .max_density
                .iter()
                .enumerate()
                .map(|(i, m)| json!({ "t": i as f64 / opts.k as f64, "max_density": m, "bound": report.bound }))
                .collect();
            let status = if report.pass { Status::Ok } else { Status::Negative };
            Ok(Outcome::new(status, json!({ "endpoint_bound": bound, "report": to_value(&report)?, "strong": extra }))
                .rows(rows))
        }
        Command::EviCheck { flow, mu, nu } => {
            let nu = match nu {
                Some(n) => parse_measure(s, n)?,
                None => ProbMeasure::uniform(s),
            };
            let trajectory = match flow {
                Some(path) => read_flow(s, path)?,
                None => {
                    let m = match mu {
                        Some(m) => parse_measure(s, m)?,
                        None => ProbMeasure::uniform(s),
                    };
                    FlowTrajectory::new((0..5).map(|i| (0.25 * i as f64, m.clone())).collect())?
                }
            };
            let spec = critical(l.dim(c));
            let report = evi_check(s, &trajectory, &nu, &spec, c.tol.unwrap_or(1e-9))?;
            let rows: Vec<Value> = report
                .steps
                .iter()
                .map(|x| json!({ "t": x.t, "h": x.h, "lhs": x.lhs, "rhs": x.rhs, "residual": x.residual, "pass": x.pass }))
                .collect();
            let status = if report.pass { Status::Ok } else { Status::Negative };
            Ok(Outcome::new(status, to_value(&report)?).rows(rows))
        }
        Command::PoincareCertify { center, radius, function, strong, neighbor_radius } => {
            let opts = chain_options(c, s)?;
            let b = ball(s, check_point(s, *center)?, *radius)?;
            let f = parse_function(s, function)?;
            let u = f.field(s)?;
            let g = slope_gradient(s, &u, neighbor_radius.unwrap_or_else(|| hop_radius(s, &opts)), &opts)?;
            let tol = c.tol.unwrap_or(0.1);
            let cert = if *strong {
                certify_strong_poincare(s, &b, l.dim(c), &u, &g, &opts, tol)?
            } else {
                certify_weak_poincare(s, &b, l.params(c), &u, &g, &opts, tol)?
            };
            let rows: Vec<Value> = cert
                .steps
                .iter()
                .map(|x| json!({ "step": x.name, "lhs": x.lhs, "rhs": x.rhs, "holds": x.holds, "exact": x.exact }))
                .collect();
            let status = if cert.pass { Status::Ok } else { Status::Negative };
            Ok(Outcome::new(status, json!({ "function": f.label(), "certificate": to_value(&cert)? })).rows(rows))
        }
        Command::PoincareSweep { balls, neighbor_radius } => {
            let opts = chain_options(c, s)?;
            let centers = sweep_balls(s, *balls, c.seed);
            let suite = standard_suite(s, c.seed);
            let radius = neighbor_radius.unwrap_or_else(|| hop_radius(s, &opts));
            let report = poincare_sweep(s, l.params(c), &centers, &suite, &opts, radius, c.tol.unwrap_or(0.1))?;
            let rows: Vec<Value> = report
                .entries
                .iter()
                .map(|e| {
                    json!({
                        "center": e.center,
                        "radius": e.radius,
                        "function": e.function,
                        "ratio": e.certificate.as_ref().map(|x| x.measured_ratio),
                        "constant": e.certificate.as_ref().map(|x| x.constant),
                        "pass": e.certificate.as_ref().map(|x| x.pass),
                        "error": e.error,
                    })
                })
                .collect();
            let plot = Plot {
                title: "worst certificate ratio per ball".into(),
                x_label: "ball".into(),
                y_label: "ratio".into(),
                series: vec![(
                    "worst ratio".into(),
                    report.worst_per_ball.iter().enumerate().map(|(i, w)| (i as f64, w.2)).collect(),
                )],
            };
            let status = if report.all_pass { Status::Ok } else { Status::Negative };
            Ok(Outcome::new(status, to_value(&report)?).rows(rows).plot(plot))
        }
        Command::Uniqueness { base } => {
            let opts = chain_options(c, s)?;
            let report = multiplicity_report(s, check_point(s, *base)?, &opts, None)?;
            let rows: Vec<Value> = report
                .counts
                .iter()
                .enumerate()
                .map(|(p, n)| json!({ "point": s.points()[p], "distinct_chains": n }))
                .collect();
            let status = if report.truncated { Status::Limit } else { Status::Ok };
            Ok(Outcome::new(status, to_value(&report)?).rows(rows))
        }
        Command::BranchSearch { base } => {
            let spec = match l.dim(c) {
                Dim::Finite(n) => EntropySpec::Renyi { n },
                Dim::Infinite => EntropySpec::Shannon,
            };
            let opts = chain_options(c, s)?;
            let bases: Vec<usize> = match base {
                Some(b) => vec![check_point(s, *b)?],
                None => (0..s.len()).collect(),
            };
            let mut last: Option<(usize, BranchOutcome)> = None;
            for x in bases {
                let out = branch_violation_search(s, x, &spec, &opts, &SearchParams::default())?;
                let found = out.violation().is_some();
                last = Some((x, out));
                if found {
                    break;
                }
            }
            let (x, out) = last.ok_or_else(|| CliError::Usage("the space has no points".into()))?;
            let status = if out.violation().is_some() { Status::Ok } else { Status::Negative };
            let rows: Vec<Value> = out
                .violation()
                .map(|v| vec![json!({ "base": x, "t": v.t, "lhs": v.lhs, "rhs": v.rhs, "defect": v.defect })])
                .unwrap_or_default();
            Ok(Outcome::new(status, json!({ "base": x, "search": to_value(&out)? })).rows(rows))
        }
        Command::Doubling { radii } => {
            let radii: Vec<f64> = match radii {
                Some(list) => list
                    .split(',')
                    .map(|r| r.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("not a radius: `{r}`"))))
                    .collect::<Res<_>>()?,
                None => {
                    let pitch = s.min_positive_distance();
                    (0..20).map(|i| pitch * (3.0 + 0.7 * i as f64)).filter(|&r| r <= s.diam()).collect()
                }
            };
            if radii.is_empty() {
                return Err(CliError::Usage("no radii to sweep".into()));
            }
            let constant = doubling_constant(s, &radii)?;
            let (bound, status) = match c.dim.or(l.file.metadata.dim) {
                Some(Dim::Finite(n)) => {
                    // default allowance for lattice rounding: 8 pitches over the diameter
                    let allowance = c.tol.unwrap_or(8.0 * s.min_positive_distance() / s.diam());
                    let b = 2f64.powf(n) * (1.0 + allowance);
                    (Some(b), if constant <= b { Status::Ok } else { Status::Negative })
                }
                _ => (None, Status::Ok),
            };
            Ok(Outcome::new(status, json!({ "radii": radii, "constant": constant, "bound": bound })))
        }
        Command::Generate { .. } | Command::Beta { .. } => unreachable!("handled without a space"),
    }
}

/// Seeded centers with radii spread over a quarter to a half of the diameter.
fn sweep_balls(space: &FiniteMetricMeasureSpace, count: usize, seed: u64) -> Vec<(usize, f64)> {
    let n = space.len() as u64;
    let diam = space.diam();
    (0..count as u64)
        .map(|i| {
            let c = (seed.wrapping_mul(31).wrapping_add(i * 7 + 3) % n) as usize;
            (c, diam * (0.08 + 0.17 * (i % 5) as f64 / 4.0))
        })
        .collect()
}

#[derive(Deserialize)]
struct FlowFile {
    samples: Vec<FlowSample>,
}

#[derive(Deserialize)]
struct FlowSample {
    t: f64,
    weights: Vec<f64>,
}

fn read_flow(space: &FiniteMetricMeasureSpace, path: &Path) -> Res<FlowTrajectory> {
    let input = |message: String| CliError::Input { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| input(e.to_string()))?;
    let file: FlowFile = serde_json::from_str(&text).map_err(|e| input(e.to_string()))?;
    let samples = file
        .samples
        .into_iter()
        .map(|x| Ok((x.t, ProbMeasure::new(space, x.weights)?)))
        .collect::<cdkn::Result<Vec<_>>>()?;
    Ok(FlowTrajectory::new(samples)?)
}
