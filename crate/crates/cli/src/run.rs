//! Subcommands. Each stage is labelled so a failure can be located in the
//! manifest; artifacts written before the failure are kept.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use twoscale_core::analysis::{
    antiderivative_lemma_1d, energy_difference, holder_seminorm, interior_gradient_sup, norm_h1, norm_linf,
    ErrorReport, ErrorRow, FluxContext, RATE_COLUMNS,
};
use twoscale_core::cell::{CellSolver, CorrectorSet, HomogenizedTensor};
use twoscale_core::coefficients::{Coefficient, CoefficientModel};
use twoscale_core::grid::{CellGrid, Grid, MacroField, MacroGrid};
use twoscale_core::macro_solver::{solve_homogenized, PicardReport};
use twoscale_core::two_scale::{fine_grid_for, periods, reconstruct, remainder, solve_fine, ExpansionField};

use crate::config::{ExperimentConfig, Format};
use crate::output::{Artifacts, Csv};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Cell,
    Homogenize,
    /// Fine-scale solve at one eps; `None` takes the smallest study eps.
    Reference { eps: Option<f64> },
    Study,
    Lemma,
    Invariance,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Cell => "cell",
            Command::Homogenize => "homogenize",
            Command::Reference { .. } => "reference",
            Command::Study => "study",
            Command::Lemma => "lemma",
            Command::Invariance => "invariance",
        }
    }
}

/// One property evaluated after a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, value: f64, min: Option<f64>, max: Option<f64>) -> Self {
        let passed = value.is_finite() && min.is_none_or(|m| value >= m) && max.is_none_or(|m| value <= m);
        Self {
            name: name.into(),
            value,
            min,
            max,
            passed,
        }
    }

    fn describe(&self) -> String {
        format!(
            "{} = {} outside [{}, {}]",
            self.name,
            self.value,
            self.min.map_or("-inf".into(), |v| v.to_string()),
            self.max.map_or("inf".into(), |v| v.to_string())
        )
    }
}

/// Results of a successful run.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Contents of `report.json`.
    pub report: Value,
    pub checks: Vec<CheckResult>,
}

/// Runs `cmd`, writing artifacts under `out_dir`. With `check`, violated
/// properties turn into [`CliError::Check`].
pub fn run_command(cmd: &Command, cfg: &ExperimentConfig, out_dir: &Path, check: bool) -> Result<Outcome, CliError> {
    let mut art = Artifacts::create(out_dir)?;
    let mut stage = String::from("setup");
    let result = dispatch(cmd, cfg, &mut art, &mut stage);
    match result {
        Ok(outcome) => {
            art.finish(cmd.name(), None)?;
            let failed: Vec<String> = outcome.checks.iter().filter(|c| !c.passed).map(|c| c.describe()).collect();
            if check && !failed.is_empty() {
                return Err(CliError::Check(failed));
            }
            Ok(outcome)
        }
        Err(e) => {
            if let Err(io) = art.finish(cmd.name(), Some((&stage, &e))) {
                log::error!("could not write manifest: {io}");
            }
            Err(e)
        }
    }
}

fn dispatch(cmd: &Command, cfg: &ExperimentConfig, art: &mut Artifacts, stage: &mut String) -> Result<Outcome, CliError> {
    match cmd {
        Command::Lemma => return lemma(cfg, art, stage),
        Command::Invariance => return invariance(cfg, art, stage),
        _ => {}
    }
    *stage = "model".into();
    let model = cfg.model()?;
    if let Command::Reference { eps } = cmd {
        return reference(cfg, &model, *eps, art, stage);
    }
    *stage = "cell problems".into();
    let (tables, tensor) = build_tables(cfg, &model)?;
    let mut checks = cell_checks(cfg, &model, &tables, &tensor);
    let mut results = serde_json::Map::new();
    results.insert("cell".into(), cell_summary(&tables, &tensor));
    if *cmd == Command::Cell {
        write_cell_files(cfg, &tables, &tensor, art)?;
        return finish_report(cmd, cfg, art, Value::Object(results), checks);
    }
    *stage = "homogenized problem".into();
    let macro_grid = MacroGrid::new(cfg.problem.dim, cfg.discretization.m_x)?;
    let (u0, macro_report) = solve_homogenized(&tensor, &model, &macro_grid, tables.grid(), &cfg.macro_options())?;
    warn_picard("homogenized", &macro_report);
    results.insert("macro_picard".into(), to_value(&macro_report));
    if *cmd == Command::Homogenize {
        if cfg.wants(Format::Csv) {
            art.write("u0.csv", &field_csv(&u0, &[("u0", u0.values())]))?;
        }
        return finish_report(cmd, cfg, art, Value::Object(results), checks);
    }
    let report = study(cfg, &model, &tables, &tensor, &u0, &macro_report, art, stage)?;
    for (col, min) in &cfg.checks.min_slopes {
        let slope = report.slope(col).unwrap_or(f64::NAN);
        checks.push(CheckResult::new(format!("slope {col}"), slope, Some(*min), None));
    }
    if cfg.wants(Format::Csv) {
        art.write("report.csv", &study_csv(cfg, &report))?;
    }
    results.insert("rows".into(), to_value(&report.rows));
    let rates: Vec<_> = report.rates.iter().filter(|r| column_requested(cfg, &r.column)).collect();
    results.insert("rates".into(), to_value(&rates));
    results.insert("holder_seed".into(), json!(cfg.output.seed));
    finish_report(cmd, cfg, art, Value::Object(results), checks)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn finish_report(
    cmd: &Command,
    cfg: &ExperimentConfig,
    art: &mut Artifacts,
    results: Value,
    checks: Vec<CheckResult>,
) -> Result<Outcome, CliError> {
    let report = json!({
        "command": cmd.name(),
        "config": to_value(cfg),
        "results": results,
        "checks": to_value(&checks),
    });
    if cfg.wants(Format::Json) {
        art.write_json("report.json", &report)?;
    }
    Ok(Outcome { report, checks })
}

fn warn_picard(which: &str, r: &PicardReport) {
    if r.non_monotone {
        log::warn!("{which} Picard increments were not monotone");
    }
    if r.out_of_range {
        log::warn!("{which} solution left the admissible u range");
    }
}

pub fn build_tables(cfg: &ExperimentConfig, model: &CoefficientModel) -> Result<(CorrectorSet, HomogenizedTensor), CliError> {
    let grid = CellGrid::new(cfg.problem.dim, cfg.discretization.m_c)?;
    let solver = CellSolver::new(model, grid, cfg.cell_options())?;
    let params = cfg.parameter_grid(model)?;
    Ok(solver.build_tables(&params)?)
}

fn cell_checks(
    cfg: &ExperimentConfig,
    model: &CoefficientModel,
    tables: &CorrectorSet,
    tensor: &HomogenizedTensor,
) -> Vec<CheckResult> {
    let d = tables.diagnostics();
    let slack = 1e-10 * model.ellipticity()[1].max(1.0);
    vec![
        CheckResult::new("voigt_reuss_margin", tensor.bound_margin(), Some(-slack), None),
        CheckResult::new(
            "max_rhs_relative_mean",
            d.max_rhs_relative_mean,
            None,
            Some(cfg.checks.max_rhs_relative_mean),
        ),
        CheckResult::new("max_corrector_mean", d.max_corrector_mean, None, Some(cfg.checks.max_corrector_mean)),
    ]
}

fn cell_summary(tables: &CorrectorSet, tensor: &HomogenizedTensor) -> Value {
    let samples: Vec<Value> = tensor
        .samples()
        .iter()
        .zip(tables.samples())
        .map(|(a, s)| {
            json!({
                "u": s.u,
                "x": s.x,
                "a0": a.a0,
                "voigt": a.voigt,
                "reuss": a.reuss,
                "asymmetry": a.asymmetry,
            })
        })
        .collect();
    json!({
        "samples": samples,
        "diagnostics": to_value(tables.diagnostics()),
        "bound_margin": tensor.bound_margin(),
    })
}

fn matrix_columns(prefix: &str, dim: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..dim {
        for j in 0..dim {
            out.push(format!("{prefix}{}{}", i + 1, j + 1));
        }
    }
    out
}

fn write_cell_files(
    cfg: &ExperimentConfig,
    tables: &CorrectorSet,
    tensor: &HomogenizedTensor,
    art: &mut Artifacts,
) -> Result<(), CliError> {
    if !cfg.wants(Format::Csv) {
        return Ok(());
    }
    let dim = cfg.problem.dim;
    let mut header = vec!["u".to_string()];
    header.extend((0..dim).map(|d| format!("x{}", d + 1)));
    for p in ["a0_", "voigt_", "reuss_"] {
        header.extend(matrix_columns(p, dim));
    }
    header.push("asymmetry".into());
    let mut csv = Csv::new(&header);
    for (a, s) in tensor.samples().iter().zip(tables.samples()) {
        let mut row = vec![s.u];
        row.extend(&s.x[..dim]);
        for m in [&a.a0, &a.voigt, &a.reuss] {
            for i in 0..dim {
                row.extend(&m[i][..dim]);
            }
        }
        row.push(a.asymmetry);
        csv.row(&row);
    }
    art.write("a0.csv", &csv.into_string())?;

    let grid = tables.grid();
    let mut index = Vec::new();
    for (s, smp) in tables.samples().iter().enumerate() {
        let fields = smp.named_fields();
        let mut header: Vec<String> = (0..dim).map(|d| format!("y{}", d + 1)).collect();
        header.extend(fields.iter().map(|f| f.0.clone()));
        let mut csv = Csv::new(&header);
        for dof in 0..grid.dof_count() {
            let y = grid.dof_coords(dof);
            let mut row: Vec<f64> = y[..dim].to_vec();
            row.extend(fields.iter().map(|f| f.1.values()[dof]));
            csv.row(&row);
        }
        let name = format!("correctors/sample_{s:04}.csv");
        art.write(&name, &csv.into_string())?;
        index.push(json!({"file": name, "u": smp.u, "x": smp.x}));
    }
    art.write_json("correctors/index.json", &Value::Array(index))
}

fn field_csv(field: &MacroField, columns: &[(&str, &[f64])]) -> String {
    let grid = field.grid();
    let dim = grid.dim();
    let mut header: Vec<String> = (0..dim).map(|d| format!("x{}", d + 1)).collect();
    header.extend(columns.iter().map(|c| c.0.to_string()));
    let mut csv = Csv::new(&header);
    for n in 0..grid.node_count() {
        let x = grid.node_coords(n);
        let mut row: Vec<f64> = x[..dim].to_vec();
        row.extend(columns.iter().map(|c| c.1[n]));
        csv.row(&row);
    }
    csv.into_string()
}

fn reference(
    cfg: &ExperimentConfig,
    model: &CoefficientModel,
    eps: Option<f64>,
    art: &mut Artifacts,
    stage: &mut String,
) -> Result<Outcome, CliError> {
    let eps = eps.unwrap_or_else(|| *cfg.study.eps.last().expect("validated non-empty"));
    let k = periods(eps).map_err(|e| CliError::Config(e.to_string()))?;
    *stage = format!("fine problem eps = 1/{k}");
    let fine = fine_grid_for(cfg.problem.dim, eps, cfg.discretization.cells_per_period)?;
    let (u_eps, rep) = solve_fine(model, eps, &fine, &cfg.fine_options())?;
    warn_picard("fine", &rep);
    if cfg.wants(Format::Csv) {
        art.write("u_eps.csv", &field_csv(&u_eps, &[("u_eps", u_eps.values())]))?;
    }
    let results = json!({"eps": eps, "fine_picard": to_value(&rep)});
    finish_report(&Command::Reference { eps: Some(eps) }, cfg, art, results, Vec::new())
}

fn column_requested(cfg: &ExperimentConfig, column: &str) -> bool {
    match column.strip_prefix("linf_order") {
        Some(o) => o.parse::<usize>().map_or(true, |o| cfg.study.orders.contains(&o)),
        None => true,
    }
}

#[allow(clippy::too_many_arguments)]
fn study(
    cfg: &ExperimentConfig,
    model: &CoefficientModel,
    tables: &CorrectorSet,
    tensor: &HomogenizedTensor,
    u0: &MacroField,
    macro_report: &PicardReport,
    art: &mut Artifacts,
    stage: &mut String,
) -> Result<ErrorReport, CliError> {
    let dim = cfg.problem.dim;
    let sub = cfg.study.subdomain;
    let mut rows = Vec::new();
    for &eps in &cfg.study.eps {
        let k = periods(eps)?;
        *stage = format!("fine problem eps = 1/{k}");
        let fine = fine_grid_for(dim, eps, cfg.discretization.cells_per_period)?;
        let (u_eps, fine_report) = solve_fine(model, eps, &fine, &cfg.fine_options())?;
        warn_picard("fine", &fine_report);
        *stage = format!("reconstruction eps = 1/{k}");
        let expansion = reconstruct(u0, tables, eps, &fine)?;
        *stage = format!("error measures eps = 1/{k}");
        let z0 = remainder(&u_eps, &expansion, 0)?;
        let z1 = remainder(&u_eps, &expansion, 1)?;
        let z2 = remainder(&u_eps, &expansion, 2)?;
        let flux = FluxContext {
            model,
            eps,
            u_eps: &u_eps,
        };
        let row = ErrorRow {
            eps,
            linf_order0: norm_linf(&z0.z, None)?,
            linf_order1: norm_linf(&z1.z, None)?,
            linf_order2: norm_linf(&z2.z, None)?,
            energy: energy_difference(model, &u_eps, eps, tensor, u0)?,
            h1_order1: norm_h1(&z1.z),
            grad_interior: interior_gradient_sup(&z1.z, &sub, None)?,
            flux_interior: interior_gradient_sup(&z1.z, &sub, Some(&flux))?,
            holder: holder_seminorm(&z2.z, &sub, cfg.study.beta, cfg.output.seed)?.value,
            boundary_max: z2.boundary_max,
            picard_fine: fine_report.iterations,
            picard_macro: macro_report.iterations,
        };
        log::info!(
            "eps = 1/{k}: |u_eps - u0|_inf = {:e}, energy = {:e}",
            row.linf_order0,
            row.energy
        );
        if cfg.study.fields && cfg.wants(Format::Csv) {
            art.write(&format!("fields/eps_{k}.csv"), &fields_csv(&u_eps, &expansion))?;
        }
        rows.push(row);
    }
    *stage = "rates".into();
    Ok(ErrorReport::from_rows(rows))
}

fn fields_csv(u_eps: &MacroField, e: &ExpansionField) -> String {
    field_csv(
        u_eps,
        &[("u_eps", u_eps.values()), ("u0", &e.u0), ("u1", &e.u1), ("u2", &e.u2)],
    )
}

fn study_csv(cfg: &ExperimentConfig, report: &ErrorReport) -> String {
    let mut cols: Vec<&str> = vec!["eps"];
    cols.extend(RATE_COLUMNS.iter().copied().filter(|c| column_requested(cfg, c)));
    cols.extend(["boundary_max", "picard_fine", "picard_macro"]);
    let mut csv = Csv::new(&cols);
    for r in &report.rows {
        let row: Vec<f64> = cols
            .iter()
            .map(|&c| match c {
                "eps" => r.eps,
                "picard_fine" => r.picard_fine as f64,
                "picard_macro" => r.picard_macro as f64,
                other => r.column(other).expect("known column"),
            })
            .collect();
        csv.row(&row);
    }
    csv.into_string()
}

fn lemma(cfg: &ExperimentConfig, art: &mut Artifacts, stage: &mut String) -> Result<Outcome, CliError> {
    *stage = "lemma".into();
    let l = cfg.lemma.clone();
    let freq = l.frequency as f64;
    let g = move |x: f64, y: f64| l.amplitude * (1.0 + l.x_quadratic * x * x) * (2.0 * PI * freq * y).sin();
    let p = cfg.lemma.p.unwrap_or(f64::INFINITY);
    let rep = antiderivative_lemma_1d(g, &cfg.lemma.eps, p, cfg.lemma.cells_per_period)?;
    let mut checks = Vec::new();
    if let Some(fit) = &rep.fit {
        let [lo, hi] = cfg.checks.lemma_slope;
        checks.push(CheckResult::new("lemma_slope", fit.slope, Some(lo), Some(hi)));
    }
    if cfg.wants(Format::Csv) {
        let mut csv = Csv::new(&["eps", "norm"]);
        for &(e, n) in &rep.rows {
            csv.row(&[e, n]);
        }
        art.write("lemma.csv", &csv.into_string())?;
    }
    let results = json!({
        "p": cfg.lemma.p,
        "rows": rep.rows,
        "fit": to_value(&rep.fit),
    });
    finish_report(&Command::Lemma, cfg, art, results, checks)
}

fn invariance(cfg: &ExperimentConfig, art: &mut Artifacts, stage: &mut String) -> Result<Outcome, CliError> {
    *stage = "model".into();
    let model = cfg.model()?;
    let grid = CellGrid::new(cfg.problem.dim, cfg.discretization.m_c)?;
    let solver = CellSolver::new(&model, grid, cfg.cell_options())?;
    let [lo, hi] = model.u_range();
    let u = cfg.invariance.u.unwrap_or(0.5 * (lo + hi));
    let x = cfg.invariance.x;
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    for z in &cfg.invariance.shifts {
        *stage = format!("translation ({}, {})", z[0], z[1]);
        let r = solver.check_translation_invariance(u, &x, z)?;
        checks.push(CheckResult::new(
            format!("translation ({}, {})", z[0], z[1]),
            r.discrepancy,
            None,
            Some(r.tolerance),
        ));
        reports.push(r);
    }
    if cfg.wants(Format::Csv) {
        let mut csv = Csv::new(&["z1", "z2", "aligned", "discrepancy", "tolerance"]);
        for r in &reports {
            csv.row(&[r.shift[0], r.shift[1], r.aligned as u8 as f64, r.discrepancy, r.tolerance]);
        }
        art.write("invariance.csv", &csv.into_string())?;
    }
    let results = json!({"u": u, "x": x, "shifts": to_value(&reports)});
    finish_report(&Command::Invariance, cfg, art, results, checks)
}
