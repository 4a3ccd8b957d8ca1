//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::time::{Duration, Instant};

use cdkn::cd_verify::{check_cd, check_strong_displacement_convexity, evi_check, random_pair, CdConfig, FlowTrajectory, Verdict};
use cdkn::entropy::{beta_at_distance, beta_lower_bound, Dim, DistortionParams, EntropySpec};
use cdkn::examples::{circle, grid2d, segment, theta, tripod};
use cdkn::geodesics::ChainOptions;
use cdkn::poincare::{
    certify_strong_poincare, certify_weak_poincare, poincare_sweep, slope_gradient, standard_suite,
};
use cdkn::space::{ball, doubling_constant};
use cdkn::transport::{w2, w2_brute_force, ProbMeasure};
use cdkn::uniqueness::{branch_violation_search, multiplicity_report, SearchParams};
use cdkn::{FiniteMetricMeasureSpace, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SLACK: f64 = 0.10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn flat(n: f64) -> DistortionParams {
    DistortionParams::new(0.0, Dim::Finite(n))
}

/// Slopes over one chain hop, so that no hop can jump across a steep stretch.
fn slope_radius(space: &FiniteMetricMeasureSpace, k: usize) -> f64 {
    space.diam() / k as f64 + 1.5 * space.min_positive_distance()
}

fn euclidean(points: &[(f64, f64)], mass: Vec<f64>) -> Result<FiniteMetricMeasureSpace> {
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
        .collect();
    FiniteMetricMeasureSpace::from_matrix((0..points.len()).map(|i| format!("p{i}")).collect(), &rows, mass)
}

fn transport_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=4);
        let points: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let space = euclidean(&points, (0..n).map(|_| 0.5 + rng.random::<f64>()).collect())?;
        let all: Vec<usize> = (0..n).collect();
        let mu = ProbMeasure::random_on(&space, &all, &mut rng)?;
        let nu = ProbMeasure::random_on(&space, &all, &mut rng)?;
        let (fast, _) = w2(&space, &mu, &nu)?;
        worst = worst.max((fast - w2_brute_force(&space, &mu, &nu)?).abs());
    }
    outcome(worst <= 1e-9, format!("max |w2 - oracle| = {worst:.2e} over 200 instances"))
}

fn entropy_convexity() -> Result<Outcome> {
    let space = segment(65);
    let opts = ChainOptions::for_space(&space, 16);
    let specs = [EntropySpec::Shannon, EntropySpec::Renyi { n: 1.0 }, EntropySpec::Renyi { n: 2.0 }, EntropySpec::Renyi { n: 4.0 }];
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    let mut plans = 0;
    for i in 0..50 {
        let (mu0, mu1) = random_pair(&space, 2024, i)?;
        for spec in &specs {
            let r = check_strong_displacement_convexity(&space, spec, &mu0, &mu1, &opts, 64, 0.05)?;
            plans += r.plans_checked;
            worst = worst.min(r.worst_margin);
            failures += usize::from(!r.consistent());
        }
    }
    outcome(failures == 0, format!("{plans} plans, worst margin {worst:.3e}, {failures} failures (slack 0.05)"))
}

fn segment_balls(space: &FiniteMetricMeasureSpace, count: usize) -> Vec<(usize, f64)> {
    let n = space.len();
    (0..count).map(|i| ((i * 7 + 3) % n, 0.08 + 0.17 * (i % 5) as f64 / 4.0)).collect()
}

fn median_split_density() -> Result<Outcome> {
    let space = segment(65);
    let opts = ChainOptions::for_space(&space, 16);
    let suite = standard_suite(&space, 3);
    let mut worst = 0.0f64;
    for (i, &(c, r)) in segment_balls(&space, 20).iter().enumerate() {
        let b = ball(&space, c, r)?;
        let u = suite[i % suite.len()].field(&space)?;
        let g = slope_gradient(&space, &u, slope_radius(&space, 16), &opts)?;
        let cert = certify_weak_poincare(&space, &b, flat(1.0), &u, &g, &opts, SLACK)?;
        for (rho, _) in &cert.densities {
            worst = worst.max(rho * b.mass / 2.0);
        }
    }
    outcome(worst <= 1.0 + SLACK, format!("max ρ_t / (2/m(B)) = {worst:.4} over 20 balls"))
}

fn sweep_constants() -> Result<Outcome> {
    let seg = segment(65);
    let seg_report = poincare_sweep(
        &seg,
        flat(1.0),
        &segment_balls(&seg, 10),
        &standard_suite(&seg, 5),
        &ChainOptions::for_space(&seg, 16),
        slope_radius(&seg, 16),
        SLACK,
    )?;
    let grid = grid2d(17);
    let balls: Vec<(usize, f64)> = [(8, 8), (4, 4), (8, 3), (12, 10), (2, 13)]
        .iter()
        .flat_map(|&(a, b)| [(a * 17 + b, 0.15), (a * 17 + b, 0.3)])
        .collect();
    let grid_report = poincare_sweep(
        &grid,
        flat(2.0),
        &balls,
        &standard_suite(&grid, 5),
        &ChainOptions::for_space(&grid, 8),
        slope_radius(&grid, 8),
        SLACK,
    )?;
    let errors = seg_report.entries.iter().chain(&grid_report.entries).filter(|e| e.error.is_some()).count();
    let pass = errors == 0 && seg_report.worst_ratio <= 8.0 * (1.0 + SLACK) && grid_report.worst_ratio <= 16.0 * (1.0 + SLACK);
    outcome(
        pass,
        format!(
            "segment worst {:.3} (≤ 8), grid2d worst {:.3} (≤ 16), {} certificates, {errors} errors",
            seg_report.worst_ratio,
            grid_report.worst_ratio,
            seg_report.entries.len() + grid_report.entries.len()
        ),
    )
}

fn strong_certificates() -> Result<Outcome> {
    let mut worst_ratio = 0.0f64;
    let mut worst_density = 0.0f64;
    let mut failures = 0;
    let cases: [(FiniteMetricMeasureSpace, usize, f64, usize); 2] = [(segment(65), 32, 1.0, 16), (grid2d(17), 8 * 17 + 8, 2.0, 8)];
    for (space, center, n, k) in cases {
        let opts = ChainOptions::for_space(&space, k);
        let suite = standard_suite(&space, 11);
        for i in 0..10 {
            let r = 0.06 + 0.04 * i as f64;
            let b = ball(&space, center, r)?;
            let u = suite[i % suite.len()].field(&space)?;
            let g = slope_gradient(&space, &u, slope_radius(&space, k), &opts)?;
            let cert = certify_strong_poincare(&space, &b, Dim::Finite(n), &u, &g, &opts, SLACK)?;
            worst_ratio = worst_ratio.max(cert.measured_ratio / cert.constant);
            let bound = 2f64.powf(n + 1.0) / b.mass;
            for (rho, _) in &cert.densities {
                worst_density = worst_density.max(rho / bound);
            }
            failures += usize::from(!cert.pass);
        }
    }
    let pass = failures == 0 && worst_density <= 1.0 + SLACK;
    outcome(
        pass,
        format!("20 balls, worst ratio/2^(N+2) = {worst_ratio:.3}, worst ρ/(2^(N+1)/m(B)) = {worst_density:.3}"),
    )
}

fn doubling() -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut pass = true;
    for (space, n, side) in [(segment(65), 1.0, 65.0), (grid2d(17), 2.0, 17.0)] {
        // below a few grid pitches ball counts are dominated by rounding
        let pitch = space.min_positive_distance();
        let radii: Vec<f64> = (0..20).map(|i| pitch * (3.0 + 0.7 * i as f64)).collect();
        let c = doubling_constant(&space, &radii)?;
        let bound = 2f64.powf(n) * (1.0 + 8.0 / side);
        pass &= c <= bound;
        lines.push(format!("N={n}: {c:.3} ≤ {bound:.3}"));
    }
    outcome(pass, lines.join(", "))
}

fn beta_soundness() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    let mut flat_ok = true;
    for i in 0..10_000 {
        let diameter = 0.1 + 4.0 * rng.random::<f64>();
        let d = diameter * rng.random::<f64>();
        let t = rng.random::<f64>();
        let n = if i % 10 == 0 { Dim::Infinite } else { Dim::Finite(1.0 + 6.0 * rng.random::<f64>()) };
        let k = if i % 7 == 0 { 0.0 } else { -3.0 * rng.random::<f64>() };
        let p = DistortionParams::new(k, n);
        let b = beta_at_distance(t, d, p)?;
        worst = worst.min(b - beta_lower_bound(p, diameter)?);
        if k == 0.0 && n.is_finite() {
            flat_ok &= b == 1.0;
        }
    }
    outcome(worst >= -1e-12 && flat_ok, format!("min β - bound = {worst:.3e}, K=0 exact: {flat_ok}"))
}

fn branch_search() -> Result<Outcome> {
    let spec = EntropySpec::Renyi { n: 1.0 };
    let t = theta(1.0, 0.5, 16)?;
    let opts = ChainOptions::for_space(&t.space, 16);
    let out = branch_violation_search(&t.space, t.junctions.0, &spec, &opts, &SearchParams::default())?;
    let (defect, replay_err) = match out.violation() {
        Some(v) => (v.defect, (v.replay(&t.space)? - v.defect).abs()),
        None => (0.0, f64::INFINITY),
    };
    let mut quiet = true;
    let seg = segment(17);
    let tri = tripod(1.0, 6)?;
    for space in [&seg, &tri] {
        let opts = ChainOptions::for_space(space, 16);
        for x in 0..space.len() {
            quiet &= branch_violation_search(space, x, &spec, &opts, &SearchParams::default())?.violation().is_none();
        }
    }
    outcome(
        defect > 0.0 && replay_err <= 1e-9 && quiet,
        format!("theta defect {defect:.4e}, replay error {replay_err:.1e}, segment/tripod none_found: {quiet}"),
    )
}

fn multiplicity() -> Result<Outcome> {
    let exhaustive = |space: &FiniteMetricMeasureSpace, k: usize| ChainOptions::for_space(space, k);
    let mut truncated = false;
    let mut tree_max = 0.0f64;
    for space in [segment(17), tripod(1.0, 4)?] {
        let opts = exhaustive(&space, 16);
        for x in 0..space.len() {
            let r = multiplicity_report(&space, x, &opts, None)?;
            tree_max = tree_max.max(r.fraction);
            truncated |= r.truncated;
        }
    }
    let circ = circle(16)?;
    let opts = exhaustive(&circ, 16);
    let mut circle_err = 0.0f64;
    for x in 0..circ.len() {
        let r = multiplicity_report(&circ, x, &opts, None)?;
        circle_err = circle_err.max((r.fraction - 1.0 / 16.0).abs());
        truncated |= r.truncated;
    }
    let t = theta(1.0, 0.5, 16)?;
    let r = multiplicity_report(&t.space, t.junctions.0, &exhaustive(&t.space, 16), None)?;
    truncated |= r.truncated;
    let pass = tree_max == 0.0 && circle_err < 1e-12 && r.fraction > 0.0 && !truncated;
    outcome(
        pass,
        format!("trees max {tree_max}, circle(16) |f - 1/16| = {circle_err:.1e}, theta {:.3}, truncated: {truncated}", r.fraction),
    )
}

fn evi() -> Result<Outcome> {
    let space = FiniteMetricMeasureSpace::from_matrix(
        vec!["a".into(), "b".into()],
        &[vec![0.0, 1.0], vec![1.0, 0.0]],
        vec![0.5, 0.5],
    )?;
    let uniform = ProbMeasure::uniform(&space);
    let constant = |mu: &ProbMeasure| FlowTrajectory::new((0..4).map(|i| (0.25 * i as f64, mu.clone())).collect());
    let spec = EntropySpec::Shannon;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut minimizer_ok = true;
    for _ in 0..50 {
        let nu = ProbMeasure::random_on(&space, &[0, 1], &mut rng)?;
        minimizer_ok &= evi_check(&space, &constant(&uniform)?, &nu, &spec, 1e-9)?.pass;
    }
    let report = evi_check(&space, &constant(&ProbMeasure::dirac(&space, 0))?, &uniform, &spec, 1e-9)?;
    let residual = report.steps.iter().map(|s| s.residual).fold(f64::NEG_INFINITY, f64::max);
    let flagged = !report.pass && (residual - std::f64::consts::LN_2).abs() <= 1e-9;
    outcome(minimizer_ok && flagged, format!("uniform flow passes: {minimizer_ok}, non-minimizer residual {residual:.12}"))
}

fn cd_monotonicity() -> Result<Outcome> {
    let space = segment(17);
    let cfg = CdConfig::new(ChainOptions::for_space(&space, 8), 12, 11);
    let mut lines = Vec::new();
    let mut pass = true;
    for n in [1.0, 2.0] {
        let base = check_cd(&space, flat(n), &cfg)?.verdict;
        if base != Verdict::Consistent {
            lines.push(format!("(0,{n}) {base:?}"));
            continue;
        }
        let curved = check_cd(&space, DistortionParams::new(-1.0, Dim::Finite(n)), &cfg)?.verdict;
        let higher = check_cd(&space, flat(n + 1.0), &cfg)?.verdict;
        pass &= curved == Verdict::Consistent && higher == Verdict::Consistent;
        lines.push(format!("(0,{n}) ⇒ (-1,{n}) {curved:?}, (0,{}) {higher:?}", n + 1.0));
    }
    outcome(pass && !lines.is_empty(), lines.join("; "))
}

type Criterion = (&'static str, u64, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 11] = [
    ("transport oracle equivalence", 10, transport_oracle),
    ("entropy convexity on the segment", 300, entropy_convexity),
    ("median-split density bound", 120, median_split_density),
    ("weak Poincaré constants at K=0", 600, sweep_constants),
    ("strong Poincaré certificates", 600, strong_certificates),
    ("doubling constant", 60, doubling),
    ("distortion lower bound", 5, beta_soundness),
    ("branching violation search", 300, branch_search),
    ("geodesic multiplicity", 300, multiplicity),
    ("EVI checker", 5, evi),
    ("CD monotonicity", 300, cd_monotonicity),
];

fn main() {
    let mut failed = 0;
    for (i, (name, budget, run)) in CRITERIA.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let (pass, detail) = match result {
            Ok(o) => (o.pass && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} {:>2} {name}: {detail} [{:.2}s of {budget}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria pass", CRITERIA.len() - failed, CRITERIA.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
