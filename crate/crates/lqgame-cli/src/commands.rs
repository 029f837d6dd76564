use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use lqgame::certifier::{
    certify as run_certifier, e_trinv, example1_ra_chains, example1_trace_bounds, example_conditions, CertVerdict,
    Certificate, ExampleReport, ExampleSpec, XiPolicy,
};
use lqgame::matrix_core::{sym_norm, Mat};
use lqgame::mgare::{solve_fixed_point, MgareSolution, SolveOptions, Verdict};
use lqgame::policy::{
    alpha, beta, build_saddle_policy, game_value, ms_stabilizing_check, simulate as run_sim, Beta, CostReport, MsCheck,
    PolicySpec, PolicyTrace, SimOptions,
};
use lqgame::report::fmt_f64;
use lqgame::scenarios::{example1_section6, example2, example3};
use lqgame::{Model, Scenario};

use crate::{config_err, IterArgs, Source};

fn example_scenario(n: u8, delta: f64) -> anyhow::Result<Scenario> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(config_err(format!("--delta must lie in [0, 1], got {delta}")));
    }
    Ok(match n {
        1 => example1_section6(delta),
        2 => example2([delta; 3]),
        _ => example3([delta; 3], false),
    })
}

fn example_spec(n: u8, delta: f64) -> ExampleSpec {
    match n {
        1 => ExampleSpec::Ex1 { delta },
        2 => ExampleSpec::Ex2 { deltas: vec![delta; 3], block_sizes: vec![2; 3] },
        _ => ExampleSpec::Ex3 { deltas: vec![delta; 3] },
    }
}

fn load(src: &Source, delta: f64) -> anyhow::Result<Scenario> {
    let mut scn = match (&src.scenario, src.example) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(n)) => example_scenario(n, delta)?,
        (None, None) => return Err(config_err("one of --scenario or --example is required")),
    };
    if let Some(seed) = src.seed {
        scn.seed = seed;
    }
    if let Some(m) = src.samples {
        if m == 0 {
            return Err(config_err("--samples must be positive"));
        }
        scn.samples = m;
    }
    scn.validate()?;
    Ok(scn)
}

fn solve_opts(iter: IterArgs) -> anyhow::Result<SolveOptions> {
    if iter.tol.is_nan() || iter.tol <= 0.0 {
        return Err(config_err(format!("--tol must be positive, got {}", iter.tol)));
    }
    if iter.kmax == 0 {
        return Err(config_err("--kmax must be positive"));
    }
    Ok(SolveOptions { tol: iter.tol, k_max: iter.kmax, ..SolveOptions::default() })
}

/// Scenario, model and, for built-in examples, the certificate whose attacker
/// weight replaces the placeholder.
struct Prepared {
    scn: Scenario,
    model: Model,
    ra_source: &'static str,
}

fn prepare(src: &Source, delta: f64) -> anyhow::Result<Prepared> {
    let scn = load(src, delta)?;
    let mut model = Model::from_scenario(&scn)?;
    let mut ra_source = "scenario";
    if src.scenario.is_none() {
        let cert = run_certifier(&model, XiPolicy::Auto)?;
        ra_source = "default";
        if let (CertVerdict::Certified, Some(ra)) = (cert.verdict, cert.ra_chosen) {
            model = model.with_ra(ra);
            ra_source = "certificate";
        }
    }
    Ok(Prepared { scn, model, ra_source })
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())).map_err(io_err),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn io_err(e: anyhow::Error) -> anyhow::Error {
    lqgame::Error::Io(format!("{e:#}")).into()
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

#[derive(Serialize)]
struct ExistenceReport<'a> {
    scenario: &'a str,
    ra_source: &'a str,
    #[serde(flatten)]
    solution: &'a MgareSolution,
}

pub fn check(src: &Source, iter: IterArgs, out: Option<&Path>) -> anyhow::Result<bool> {
    let opts = solve_opts(iter)?;
    let p = prepare(src, src.delta)?;
    let sol = solve_fixed_point(&p.model, &opts);
    emit_json(out, &ExistenceReport { scenario: &p.scn.name, ra_source: p.ra_source, solution: &sol })?;
    Ok(sol.verdict == Verdict::Exists)
}

#[derive(Serialize)]
struct CertifyReport<'a> {
    scenario: &'a str,
    certificate: &'a Certificate,
    example: Option<ExampleReport>,
}

pub fn certify(src: &Source, out: Option<&Path>) -> anyhow::Result<bool> {
    let scn = load(src, src.delta)?;
    let model = Model::from_scenario(&scn)?;
    let cert = run_certifier(&model, XiPolicy::Auto)?;
    let example = match src.example.filter(|_| src.scenario.is_none()) {
        Some(n) => match example_conditions(&example_spec(n, src.delta), &model.a) {
            Ok(r) => Some(r),
            Err(e) => {
                eprintln!("warning: example conditions unavailable: {e}");
                None
            }
        },
        None => None,
    };
    emit_json(out, &CertifyReport { scenario: &scn.name, certificate: &cert, example })?;
    Ok(cert.is_certified())
}

#[derive(Serialize)]
struct SolveReport<'a> {
    scenario: &'a str,
    ra_source: &'a str,
    #[serde(flatten)]
    solution: &'a MgareSolution,
    game_value: Option<f64>,
    ms_check: Option<MsCheck>,
    t0: usize,
    alpha: Option<f64>,
    beta: Option<Beta>,
}

pub fn solve(src: &Source, iter: IterArgs, t0: usize, out: Option<&Path>) -> anyhow::Result<bool> {
    let opts = solve_opts(iter)?;
    let p = prepare(src, src.delta)?;
    let sol = solve_fixed_point(&p.model, &opts);
    let exists = sol.verdict == Verdict::Exists;
    let mut report = SolveReport {
        scenario: &p.scn.name,
        ra_source: p.ra_source,
        solution: &sol,
        game_value: None,
        ms_check: None,
        t0,
        alpha: None,
        beta: None,
    };
    if exists {
        report.game_value = Some(game_value(&p.model, &sol.p_star));
        report.ms_check = Some(ms_stabilizing_check(&p.model, &sol)?);
        let a = alpha(&p.model, &sol.p_star, t0)?;
        report.alpha = Some(a);
        report.beta = Some(beta(&p.model, &sol.p_star, t0, a)?);
    }
    emit_json(out, &report)?;
    Ok(exists)
}

pub struct SimArgs {
    pub horizon: usize,
    pub burn_in: Option<usize>,
    pub runs: usize,
    pub t0: Option<usize>,
    pub trace: Option<PathBuf>,
}

#[derive(Serialize)]
struct SimReport<'a> {
    scenario: &'a str,
    ra_source: &'a str,
    verdict: Verdict,
    policy: &'static str,
    game_value: Option<f64>,
    cost: Option<CostReport>,
}

pub fn simulate(src: &Source, iter: IterArgs, sim: &SimArgs, out: Option<&Path>) -> anyhow::Result<bool> {
    if sim.horizon == 0 || sim.runs == 0 {
        return Err(config_err("--horizon and --runs must be positive"));
    }
    let opts = solve_opts(iter)?;
    let p = prepare(src, src.delta)?;
    let sol = solve_fixed_point(&p.model, &opts);
    let mut report = SimReport {
        scenario: &p.scn.name,
        ra_source: p.ra_source,
        verdict: sol.verdict,
        policy: if sim.t0.is_some() { "saddle" } else { "steady" },
        game_value: None,
        cost: None,
    };
    if sol.verdict != Verdict::Exists {
        emit_json(out, &report)?;
        return Ok(false);
    }
    let burn_in = sim.burn_in.unwrap_or(sim.horizon / 10);
    let policy = match sim.t0 {
        Some(t0) => {
            let pol = build_saddle_policy(&p.model, t0, &sol)?;
            if let Some(limit) = pol.horizon_limit().filter(|&l| burn_in + sim.horizon > l) {
                return Err(config_err(format!("saddle schedule covers {limit} slots; burn-in + horizon is {}", burn_in + sim.horizon)));
            }
            pol
        }
        None => PolicySpec::steady(sol.p_star.clone()),
    };
    let sim_opts = SimOptions { horizon: sim.horizon, burn_in, runs: sim.runs, seed: p.scn.seed, record: usize::from(sim.trace.is_some()) };
    let (traces, cost) = run_sim(&p.model, &policy, &sim_opts)?;
    if let (Some(path), Some(tr)) = (&sim.trace, traces.first()) {
        emit(Some(path), &trace_csv(tr))?;
    }
    report.game_value = Some(game_value(&p.model, &sol.p_star));
    report.cost = Some(cost);
    emit_json(out, &report)?;
    Ok(true)
}

fn trace_csv(tr: &PolicyTrace) -> String {
    let s = tr.states.first().map_or(0, Vec::len);
    let nc = tr.u_c.first().map_or(0, Vec::len);
    let na = tr.u_a.first().map_or(0, Vec::len);
    let mut head = vec!["k".to_string()];
    head.extend((0..s).map(|i| format!("x{i}")));
    head.extend((0..nc).map(|i| format!("uc{i}")));
    head.extend((0..na).map(|i| format!("ua{i}")));
    head.extend(["stage_cost", "bc_atom", "ba_atom"].map(String::from));
    let mut text = head.join(",");
    text.push('\n');
    for k in 0..tr.u_c.len() {
        let mut cells = vec![k.to_string()];
        cells.extend(tr.states[k].iter().map(|&v| fmt_f64(v)));
        cells.extend(tr.u_c[k].iter().map(|&v| fmt_f64(v)));
        cells.extend(tr.u_a[k].iter().map(|&v| fmt_f64(v)));
        cells.push(fmt_f64(tr.stage_costs[k]));
        cells.push(tr.bc_index[k].to_string());
        cells.push(tr.ba_index[k].to_string());
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    text
}

// ---- sweeps ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum Param {
    Delta,
    Ra,
}

/// Parses `PARAM=a:b:step` (or `PARAM=x` for one point) into an inclusive grid.
fn parse_grid(spec: &str) -> anyhow::Result<(Param, Vec<f64>)> {
    let bad = |why: &str| config_err(format!("--sweep {spec:?}: {why}"));
    let (name, range) = spec.split_once('=').ok_or_else(|| bad("expected PARAM=a:b:step"))?;
    let param = match name.trim() {
        "delta" => Param::Delta,
        "ra" => Param::Ra,
        other => return Err(bad(&format!("unknown parameter {other:?} (expected delta or ra)"))),
    };
    let nums = range.split(':').map(|t| t.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("bounds must be numbers"))?;
    let grid = match nums[..] {
        [x] => vec![x],
        [a, b, step] => {
            if !a.is_finite() || !b.is_finite() || step.is_nan() || step <= 0.0 || b < a {
                return Err(bad("need a <= b and step > 0"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            (0..n).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect()
        }
        _ => return Err(bad("expected a:b:step")),
    };
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite grid value"));
    }
    Ok((param, grid))
}

fn verdict_cell(v: &Verdict) -> String {
    match v {
        Verdict::Exists => "Exists".into(),
        Verdict::DivergedAt(k) => format!("DivergedAt({k})"),
        Verdict::ConcavityViolatedAt(k) => format!("ConcavityViolatedAt({k})"),
        Verdict::UndecidedAtKmax => "UndecidedAtKmax".into(),
    }
}

fn cert_cell(v: &CertVerdict) -> String {
    match v {
        CertVerdict::Certified => "Certified".into(),
        CertVerdict::ConditionFailed(c) => format!("ConditionFailed({c:?})"),
    }
}

/// Logs a per-point failure and substitutes NaN so the sweep can continue.
fn or_nan(label: &str, what: &str, r: lqgame::Result<f64>) -> f64 {
    r.unwrap_or_else(|e| {
        eprintln!("warning: {label}: {what}: {e}");
        f64::NAN
    })
}

fn delta_row(src: &Source, n: u8, delta: f64, opts: &SolveOptions) -> anyhow::Result<String> {
    let label = format!("delta={delta}");
    let scn = load(src, delta)?;
    let model = Model::from_scenario(&scn)?;
    let cond = or_nan(&label, "example conditions", example_conditions(&example_spec(n, delta), &model.a).map(|r| r.condition_value));
    let (mut lower, mut upper, mut suf, mut nec) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    if n == 1 {
        let e = e_trinv(&model);
        match e.and_then(|e| example1_trace_bounds(&model.a, &model.q, &[delta], 1.0, |_| Ok(e))) {
            Ok(tb) => (lower, upper) = (tb[0].lower, tb[0].upper),
            Err(err) => eprintln!("warning: {label}: trace bounds: {err}"),
        }
        match example1_ra_chains(&model, delta, 1.0) {
            Ok(c) => (suf, nec) = (c.sufficient, c.necessary),
            Err(err) => eprintln!("warning: {label}: attacker-weight chains: {err}"),
        }
    }
    let (ra_bound, cert_s, solve_model) = match run_certifier(&model, XiPolicy::Auto) {
        Ok(cert) => {
            let bound = cert.ra_bound.as_ref().map_or(f64::NAN, sym_norm);
            let m = match (&cert.verdict, &cert.ra_chosen) {
                (CertVerdict::Certified, Some(ra)) => model.with_ra(ra.clone()),
                _ => model.clone(),
            };
            (bound, cert_cell(&cert.verdict), m)
        }
        Err(err) => {
            eprintln!("warning: {label}: certifier: {err}");
            (f64::NAN, "error".into(), model.clone())
        }
    };
    let sol = solve_fixed_point(&solve_model, opts);
    let nums = [delta, cond, lower, upper, suf, nec, ra_bound].map(fmt_f64).join(",");
    Ok(format!("{nums},{cert_s},{},{}", verdict_cell(&sol.verdict), sol.iterations))
}

fn ra_row(model: &Model, ra: f64, opts: &SolveOptions) -> String {
    let na = model.ra.nrows();
    let m = model.with_ra(Mat::identity(na, na) * ra);
    let sol = solve_fixed_point(&m, opts);
    let (tr, value) = if sol.verdict == Verdict::Exists { (sol.p_star.trace(), game_value(&m, &sol.p_star)) } else { (f64::NAN, f64::NAN) };
    let nums = [ra, sol.residual, tr, value].map(fmt_f64).join(",");
    format!("{nums},{},{}", verdict_cell(&sol.verdict), sol.iterations)
}

pub fn sweep(src: &Source, iter: IterArgs, spec: &str, out: Option<&Path>) -> anyhow::Result<bool> {
    let opts = solve_opts(iter)?;
    let (param, grid) = parse_grid(spec)?;
    let mut text = String::new();
    match param {
        Param::Delta => {
            let n = match (src.example, &src.scenario) {
                (Some(n), None) => n,
                _ => return Err(config_err("a delta sweep needs --example")),
            };
            text.push_str("delta,condition_value,trace_lower,trace_upper,ra_sufficient,ra_necessary,ra_bound,certificate,mgare_verdict,iterations\n");
            for &d in &grid {
                match delta_row(src, n, d, &opts) {
                    Ok(row) => writeln!(text, "{row}")?,
                    Err(e) => {
                        // configuration problems abort, numeric ones only cost the point
                        if e.downcast_ref::<crate::ConfigError>().is_some() {
                            return Err(e);
                        }
                        eprintln!("warning: delta={d}: {e:#}");
                        let nan = fmt_f64(f64::NAN);
                        writeln!(text, "{},{nan},{nan},{nan},{nan},{nan},{nan},error,error,0", fmt_f64(d))?;
                    }
                }
            }
        }
        Param::Ra => {
            if grid.iter().any(|&r| r <= 0.0) {
                return Err(config_err("ra grid values must be positive"));
            }
            let p = prepare(src, src.delta)?;
            text.push_str("ra,residual,trace_p_star,game_value,mgare_verdict,iterations\n");
            for &r in &grid {
                writeln!(text, "{}", ra_row(&p.model, r, &opts))?;
            }
        }
    }
    emit(out, &text)?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let (p, g) = parse_grid("delta=0.62:0.95:0.01").unwrap();
        assert_eq!(p, Param::Delta);
        assert_eq!(g.len(), 34);
        assert_eq!(g[3], 0.65);
        assert_eq!(*g.last().unwrap(), 0.95);
        assert_eq!(parse_grid("delta=0.8:0.8:0.1").unwrap().1, vec![0.8]);
        assert_eq!(parse_grid("ra=5").unwrap(), (Param::Ra, vec![5.0]));
        for bad in ["delta", "gamma=1:2:1", "delta=0.9:0.1:0.1", "delta=0.1:0.2:0", "delta=a:b:c", "delta=1:2"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }
}
