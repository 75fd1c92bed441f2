use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use twostep::effective::{compare_traces, effective_trace_at, extract_effective, Channel, EffectiveModel};
use twostep::model::{build_hamiltonian, mld_diagnostics, ModulationSchedule, QuantumState, SystemSpec, DEFAULT_MLD_THRESHOLD};
use twostep::propagation::{extrema, period_propagator, stroboscopic_evolve, Extremum, PopulationTrace};
use twostep::scenarios::{
    build_scenario, deformation_sweep, perturbation_sweep, schedule_horizon, spike_scan, stirap_sweep, Dynamics,
    Horizon, Params, Scenario, SweepGrid,
};
use twostep::spectral::{eigendecompose, perturbative_three_level, transition_interval};

use crate::config::{Command, InlineSystem, RunPlan, Source, Sweep};
use crate::emit::{csv_text, json_text, write_file};
use crate::CliError;

/// A plan's system after scenario construction.
enum Prepared {
    Scenario(Scenario),
    Inline {
        schedule: ModulationSchedule,
        initial: usize,
        targets: Vec<usize>,
    },
}

impl Prepared {
    fn schedule(&self) -> Option<&ModulationSchedule> {
        match self {
            Prepared::Scenario(sc) => sc.schedule(),
            Prepared::Inline { schedule, .. } => Some(schedule),
        }
    }

    fn initial(&self) -> usize {
        match self {
            Prepared::Scenario(sc) => sc.initial,
            Prepared::Inline { initial, .. } => *initial,
        }
    }

    fn targets(&self) -> &[usize] {
        match self {
            Prepared::Scenario(sc) => &sc.targets,
            Prepared::Inline { targets, .. } => targets,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Prepared::Scenario(sc) => sc.dim(),
            Prepared::Inline { schedule, .. } => schedule.dim(),
        }
    }
}

struct Ctx {
    label: String,
}

impl Ctx {
    fn wrap(&self) -> impl Fn(twostep::Error) -> CliError + '_ {
        move |source| CliError::Model {
            context: self.label.clone(),
            source,
        }
    }
}

fn source_name(source: &Source) -> String {
    match source {
        Source::Scenario { kind, .. } => kind.to_string(),
        Source::Inline(_) => "inline".to_string(),
    }
}

fn prepare(plan: &RunPlan, ctx: &Ctx) -> Result<Prepared, CliError> {
    let err = ctx.wrap();
    match &plan.source {
        Source::Scenario { kind, params } => {
            let mut sc = build_scenario(*kind, params).map_err(&err)?;
            if let (Dynamics::Waveform { substep, .. }, Some(s)) = (&mut sc.dynamics, plan.sampling.substep) {
                *substep = s;
            }
            Ok(Prepared::Scenario(sc))
        }
        Source::Inline(sys) => {
            let InlineSystem {
                step_a,
                step_b,
                tau_a,
                tau_b,
                target,
                n,
                initial,
            } = sys.clone();
            let step_b = step_b.unwrap_or_else(|| step_a.clone());
            let tau = |given: Option<f64>, spec: &SystemSpec| -> Result<f64, CliError> {
                match (given, target) {
                    (Some(t), _) => Ok(t),
                    (None, Some(k)) => transition_interval(&build_hamiltonian(spec), k - 1, n).map_err(&err),
                    (None, None) => Err(CliError::Config("inline system needs 'target' or explicit durations".into())),
                }
            };
            let ta = tau(tau_a, &step_a)?;
            let tb = tau(tau_b, &step_b)?;
            let schedule = ModulationSchedule::new(step_a, step_b, ta, tb).map_err(&err)?;
            Ok(Prepared::Inline {
                schedule,
                initial: initial - 1,
                targets: target.map(|k| vec![k - 1]).unwrap_or_default(),
            })
        }
    }
}

fn one_based(levels: &[usize]) -> Vec<usize> {
    levels.iter().map(|k| k + 1).collect()
}

fn params_json(plan: &RunPlan, prepared: &Prepared) -> Value {
    match prepared {
        Prepared::Scenario(sc) => json!(sc.params),
        Prepared::Inline { .. } => match &plan.source {
            Source::Inline(sys) => json!({ "n": sys.n }),
            Source::Scenario { params, .. } => json!(params),
        },
    }
}

fn dressed_energies(spec: &SystemSpec) -> Value {
    let s = eigendecompose(&build_hamiltonian(spec));
    json!({
        "eigenvalues": s.eigenvalues(),
        "bare_map": one_based(s.bare_map()),
    })
}

fn dynamics_json(prepared: &Prepared) -> Value {
    match prepared {
        Prepared::Scenario(Scenario {
            dynamics:
                Dynamics::Waveform {
                    base,
                    edges,
                    waveform,
                    t_start,
                    t_final,
                    substep,
                },
            ..
        }) => json!({
            "kind": "waveform",
            "base": base,
            "edges": edges.iter().map(|&(i, j)| [i + 1, j + 1]).collect::<Vec<_>>(),
            "waveform": waveform,
            "t_start": t_start,
            "t_final": t_final,
            "substep": substep,
            "dressed": { "base": dressed_energies(base) },
        }),
        _ => {
            let s = prepared.schedule().expect("non-waveform runs carry a schedule");
            json!({
                "kind": "two-step",
                "step_a": s.step_a(),
                "step_b": s.step_b(),
                "tau_a": s.tau_a(),
                "tau_b": s.tau_b(),
                "period": s.period(),
                "dressed": {
                    "step_a": dressed_energies(s.step_a()),
                    "step_b": dressed_energies(s.step_b()),
                },
            })
        }
    }
}

fn extrema_json(ex: &[Extremum]) -> Value {
    Value::Array(
        ex.iter()
            .map(|e| json!({ "level": e.level + 1, "max": e.max, "time": e.time }))
            .collect(),
    )
}

fn sidecar_head(plan: &RunPlan, prepared: &Prepared, data: &str) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("data".into(), json!(data));
    m.insert("command".into(), json!(plan.command.name()));
    m.insert("source".into(), json!(source_name(&plan.source)));
    m.insert("params".into(), params_json(plan, prepared));
    m.insert("initial".into(), json!(prepared.initial() + 1));
    m.insert("targets".into(), json!(one_based(prepared.targets())));
    if let Prepared::Scenario(sc) = prepared {
        m.insert("declared_ts".into(), json!(sc.declared_ts));
    }
    m.insert("samples_per_period".into(), json!(plan.sampling.samples_per_period));
    m.insert("dynamics".into(), dynamics_json(prepared));
    m
}

fn run_trace(plan: &RunPlan, prepared: &Prepared, ctx: &Ctx) -> Result<(PopulationTrace, Horizon), CliError> {
    let err = ctx.wrap();
    let spp = plan.sampling.samples_per_period;
    match prepared {
        Prepared::Scenario(sc) => {
            let run = sc.run(spp, plan.sampling.horizon).map_err(&err)?;
            Ok((run.trace, run.horizon))
        }
        Prepared::Inline { schedule, initial, .. } => {
            let horizon = match plan.sampling.horizon {
                Some(t) => Horizon {
                    t_final: t,
                    rabi_period: None,
                    capped: false,
                },
                None => schedule_horizon(schedule, *initial).map_err(&err)?,
            };
            let psi0 = QuantumState::basis(schedule.dim(), *initial).map_err(&err)?;
            let n_periods = (horizon.t_final / schedule.period()).ceil().max(1.0) as usize;
            let trace = stroboscopic_evolve(schedule, &psi0, n_periods, spp).map_err(&err)?;
            Ok((trace, horizon))
        }
    }
}

fn simulate(plan: &RunPlan, prepared: &Prepared, out: &Path, ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let (trace, horizon) = run_trace(plan, prepared, ctx)?;
    let ex = extrema(&trace);
    let csv_name = format!("{}.csv", plan.name);
    let meta_name = format!("{}.meta.json", plan.name);

    let mut header = vec!["t".to_string()];
    header.extend((1..=trace.dim()).map(|k| format!("P{k}")));
    let rows = trace.times().iter().zip(trace.populations()).map(|(&t, p)| {
        let mut row = Vec::with_capacity(p.len() + 1);
        row.push(t);
        row.extend_from_slice(p);
        row
    });
    let csv = csv_text(&header, rows);

    let mut meta = sidecar_head(plan, prepared, &csv_name);
    meta.insert("horizon".into(), json!(horizon));
    meta.insert("samples".into(), json!(trace.len()));
    meta.insert("norm_drift".into(), json!(trace.norm_drift()));
    meta.insert("extrema".into(), extrema_json(&ex));

    let csv_path = out.join(&csv_name);
    let meta_path = out.join(&meta_name);
    write_file(&csv_path, &csv)?;
    write_file(&meta_path, &json_text(Value::Object(meta)))?;
    Ok(vec![csv_path, meta_path])
}

fn require_scenario<'a>(prepared: &'a Prepared, what: &str) -> Result<&'a Scenario, CliError> {
    match prepared {
        Prepared::Scenario(sc) => Ok(sc),
        Prepared::Inline { .. } => Err(CliError::Config(format!("{what} sweep needs a named scenario"))),
    }
}

fn sweep_t_s(plan: &RunPlan, sc: &Scenario) -> Result<f64, CliError> {
    plan.t_s
        .or(sc.declared_ts)
        .ok_or_else(|| CliError::Config(format!("scenario {} has no known transfer time; set 't_s'", sc.kind)))
}

fn stirap_params(params: &Params) -> Params {
    let mut p = params.clone();
    p.remove("delta2");
    p
}

fn sweep(plan: &RunPlan, prepared: &Prepared, out: &Path, ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let err = ctx.wrap();
    let sweep = plan.sweep.as_ref().ok_or_else(|| CliError::Config("sweep needs 'axes'".into()))?;
    let spp = plan.sampling.samples_per_period;
    let mut extra = serde_json::Map::new();
    let grid: SweepGrid = match sweep {
        Sweep::Deformation { gamma } => {
            let sc = require_scenario(prepared, sweep.name())?;
            let t_s = sweep_t_s(plan, sc)?;
            let horizon = match plan.sampling.horizon {
                Some(h) => h,
                None => sc.default_horizon().map_err(&err)?.t_final.max(t_s),
            };
            extra.insert("t_s".into(), json!(t_s));
            extra.insert("horizon".into(), json!(horizon));
            deformation_sweep(sc, gamma, t_s, horizon).map_err(&err)?
        }
        Sweep::Perturbation { d_omega1, d_omega2 } => {
            let sc = require_scenario(prepared, sweep.name())?;
            let t_s = sweep_t_s(plan, sc)?;
            extra.insert("t_s".into(), json!(t_s));
            perturbation_sweep(sc, d_omega1, d_omega2, t_s).map_err(&err)?
        }
        Sweep::Stirap { delta2 } => {
            let params = match &plan.source {
                Source::Scenario { params, .. } => stirap_params(params),
                Source::Inline(_) => return Err(CliError::Config("stirap sweep needs a named scenario".into())),
            };
            let mut params = params;
            if let Some(s) = plan.sampling.substep {
                params.insert("substep".into(), s);
            }
            stirap_sweep(delta2, &params).map_err(&err)?
        }
        Sweep::Spike { ratio } => {
            let params = match &plan.source {
                Source::Scenario { params, .. } => params.clone(),
                Source::Inline(_) => return Err(CliError::Config("spike sweep needs a named scenario".into())),
            };
            extra.insert("horizon".into(), json!("default per point"));
            spike_scan(&params, ratio, spp).map_err(&err)?
        }
    };

    let csv_name = format!("{}.csv", plan.name);
    let meta_name = format!("{}.meta.json", plan.name);
    let mut header: Vec<String> = grid.axes.iter().map(|(name, _)| name.clone()).collect();
    header.extend(grid.columns.iter().cloned());
    let rows = (0..grid.len()).map(|i| {
        let mut row = grid.point(i);
        row.extend_from_slice(&grid.rows[i]);
        row
    });
    let csv = csv_text(&header, rows);

    let mut meta = sidecar_head(plan, prepared, &csv_name);
    meta.insert("sweep".into(), json!(sweep.name()));
    meta.insert(
        "axes".into(),
        Value::Object(grid.axes.iter().map(|(n, v)| (n.clone(), json!(v))).collect()),
    );
    meta.insert("columns".into(), json!(grid.columns));
    meta.insert("points".into(), json!(grid.len()));
    meta.extend(extra);

    let csv_path = out.join(&csv_name);
    let meta_path = out.join(&meta_name);
    write_file(&csv_path, &csv)?;
    write_file(&meta_path, &json_text(Value::Object(meta)))?;
    Ok(vec![csv_path, meta_path])
}

fn step_report(spec: &SystemSpec, tau: Option<f64>) -> Value {
    let h = build_hamiltonian(spec);
    let s = eigendecompose(&h);
    let suggested: Vec<Value> = (1..spec.dim())
        .map(|k| match transition_interval(&h, k, 0) {
            Ok(t) => json!({ "target": k + 1, "tau": t }),
            Err(e) => json!({ "target": k + 1, "error": e.to_string() }),
        })
        .collect();
    // The perturbative ladder needs a duration; fall back to the level-3 interval.
    let duration = tau.or_else(|| transition_interval(&h, 2, 0).ok());
    let perturbative = match duration.map(|t| perturbative_three_level(spec, t)) {
        Some(Ok(p)) => json!(p),
        Some(Err(e)) => json!({ "error": e.to_string() }),
        None => Value::Null,
    };
    let mld = match mld_diagnostics(spec, DEFAULT_MLD_THRESHOLD) {
        Ok(r) => json!({
            "threshold": r.threshold,
            "min_ratio": r.min_ratio,
            "flagged": r.flagged,
            "edges": r.edges.iter().map(|e| json!({
                "edge": [e.i + 1, e.j + 1],
                "detuning": e.detuning,
                "coupling": e.coupling,
                "ratio": if e.ratio.is_finite() { json!(e.ratio) } else { Value::Null },
                "flagged": e.flagged,
            })).collect::<Vec<_>>(),
        }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    json!({
        "spec": spec,
        "eigenvalues": s.eigenvalues(),
        "bare_map": one_based(s.bare_map()),
        "overlaps": s.overlaps(),
        "ambiguous": s.ambiguous(),
        "mld": mld,
        "perturbative": perturbative,
        "suggested_tau": suggested,
    })
}

fn spectrum(plan: &RunPlan, prepared: &Prepared) -> Value {
    let steps = match prepared {
        Prepared::Scenario(Scenario {
            dynamics: Dynamics::Waveform { base, .. },
            ..
        }) => json!({ "base": step_report(base, None) }),
        _ => {
            let s = prepared.schedule().expect("non-waveform runs carry a schedule");
            json!({
                "step_a": step_report(s.step_a(), Some(s.tau_a())),
                "step_b": step_report(s.step_b(), Some(s.tau_b())),
            })
        }
    };
    json!({
        "command": "spectrum",
        "source": source_name(&plan.source),
        "params": params_json(plan, prepared),
        "steps": steps,
    })
}

fn matrix_json(model: &EffectiveModel) -> Value {
    let m = model.h_eff.matrix();
    let part = |f: fn(&twostep::C64) -> f64| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect()
    };
    json!({
        "re": part(|z| z.re),
        "im": part(|z| z.im),
        "abs": part(|z| z.norm()),
    })
}

fn effective(plan: &RunPlan, prepared: &Prepared, ctx: &Ctx) -> Result<Value, CliError> {
    let err = ctx.wrap();
    let s = prepared
        .schedule()
        .ok_or_else(|| CliError::Config(format!("{} has no two-step schedule", source_name(&plan.source))))?;
    let mut model = extract_effective(&period_propagator(s), s.period()).map_err(&err)?;

    // Analytic rotation angles exist for three-level ladders targeting level 2 or 3.
    let channel = match prepared.targets().first() {
        Some(1) => Some(Channel::OneTwo),
        Some(2) => Some(Channel::OneThree),
        _ => None,
    };
    let mut analytic_error = None;
    if let (3, Some(channel)) = (prepared.dim(), channel) {
        let attempt = perturbative_three_level(s.step_a(), s.tau_a())
            .and_then(|p| model.clone().with_analytic(&p, s.step_a().coupling(0, 1), channel));
        match attempt {
            Ok(m) => model = m,
            Err(e) => analytic_error = Some(e.to_string()),
        }
    }

    let (trace, horizon) = run_trace(plan, prepared, ctx)?;
    let psi0 = QuantumState::basis(s.dim(), prepared.initial()).map_err(&err)?;
    let eff = effective_trace_at(&model, &psi0, trace.times()).map_err(&err)?;
    let deviation = compare_traces(&trace, &eff).map_err(&err)?;

    Ok(json!({
        "command": "effective",
        "source": source_name(&plan.source),
        "params": params_json(plan, prepared),
        "period": model.period,
        "h_eff": matrix_json(&model),
        "eigenphases": model.eigenphases,
        "branch_valid": model.branch_valid,
        "residual": model.residual,
        "analytic": model.analytic,
        "analytic_error": analytic_error,
        "rabi_period": model.rabi_period(prepared.initial()),
        "horizon": horizon,
        "deviation": deviation,
    }))
}

/// Execute a plan. File-writing commands put `<name>.csv` and
/// `<name>.meta.json` under `out` and return their paths; the others print
/// one JSON document to `stdout`.
pub fn run(plan: &RunPlan, out: Option<&Path>, stdout: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let ctx = Ctx {
        label: format!("{} {}", plan.command, source_name(&plan.source)),
    };
    let prepared = prepare(plan, &ctx)?;
    let print = |stdout: &mut dyn Write, v: Value| {
        stdout
            .write_all(json_text(v).as_bytes())
            .map_err(|e| CliError::Io(e.to_string()))
    };
    match plan.command {
        Command::Simulate | Command::Sweep => {
            let out = out.ok_or_else(|| CliError::Config(format!("{} needs an output directory", plan.command)))?;
            std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
            if plan.command == Command::Simulate {
                simulate(plan, &prepared, out, &ctx)
            } else {
                sweep(plan, &prepared, out, &ctx)
            }
        }
        Command::Spectrum => {
            print(stdout, spectrum(plan, &prepared))?;
            Ok(Vec::new())
        }
        Command::Effective => {
            let v = effective(plan, &prepared, &ctx)?;
            print(stdout, v)?;
            Ok(Vec::new())
        }
    }
}

