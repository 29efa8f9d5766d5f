//! Implementations of the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use agca::bench::{
    self, cagca_to_csv, plot, results_to_csv, CoarseningMode, ExperimentResult, MeshExtent,
    SinkerProblem,
};
use agca::coarsening::{build_agca_hierarchy, select_macros, DiffusionKernel};
use agca::fem::{assemble_scalar_load, quadrature, CoefficientEval, ScalarFn};
use agca::mesh::MeshHierarchy;
use agca::selftest::run_selftest;
use agca::solvers::{MgSolver, SolveReport};
use agca::stokes::solve_stokes;
use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;

fn ensure_out(dir: &str) -> Result<PathBuf> {
    let path = PathBuf::from(dir);
    fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Echoes the effective configuration so the run can be reproduced from the
/// output directory alone.
fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_file(&out.join("config.toml"), &cfg.to_toml())
}

fn residuals_csv(report: &SolveReport) -> String {
    let mut s = String::from("iteration,res_l2,res_rel\n");
    let r0 = report.residuals.first().copied().unwrap_or(0.0);
    for (i, r) in report.residuals.iter().enumerate() {
        let rel = if r0 > 0.0 { r / r0 } else { 0.0 };
        s.push_str(&format!("{i},{r:.12e},{rel:.12e}\n"));
    }
    s
}

#[derive(Serialize)]
struct ReportJson<'a> {
    problem: &'a str,
    coarsening_mode: &'a str,
    nu: f64,
    c_agca: f64,
    #[serde(flatten)]
    report: &'a SolveReport,
}

fn write_report(
    out: &Path,
    problem: &str,
    mode: &str,
    nu: f64,
    c_agca: f64,
    report: &SolveReport,
) -> Result<()> {
    let json = serde_json::to_string_pretty(&ReportJson {
        problem,
        coarsening_mode: mode,
        nu,
        c_agca,
        report,
    })?;
    write_file(&out.join("report.json"), &json)?;
    write_file(&out.join("residuals.csv"), &residuals_csv(report))
}

fn scalar_solution_csv(mesh: &MeshHierarchy, level: usize, u: &[f64]) -> String {
    let mut s = String::from("x,y,u\n");
    let (nxl, nyl) = mesh.lattice_dims(level);
    for iy in 0..=nyl as i64 {
        for ix in 0..=nxl as i64 {
            let [x, y] = mesh.vertex_coord(level, ix, iy);
            s.push_str(&format!(
                "{x:.12e},{y:.12e},{:.12e}\n",
                u[mesh.vertex_index(level, ix, iy)]
            ));
        }
    }
    s
}

fn velocity_csv(mesh: &MeshHierarchy, level: usize, u: &[f64]) -> String {
    let n = mesh.n_vertices(level);
    let mut s = String::from("x,y,u_x,u_y\n");
    let (nxl, nyl) = mesh.lattice_dims(level);
    for iy in 0..=nyl as i64 {
        for ix in 0..=nxl as i64 {
            let [x, y] = mesh.vertex_coord(level, ix, iy);
            let k = mesh.vertex_index(level, ix, iy);
            s.push_str(&format!(
                "{x:.12e},{y:.12e},{:.12e},{:.12e}\n",
                u[k],
                u[n + k]
            ));
        }
    }
    s
}

fn pressure_csv(mesh: &MeshHierarchy, level: usize, p: &[f64]) -> String {
    let mut s = String::from("x,y,p\n");
    let (nxl, nyl) = mesh.lattice_dims(level);
    for iy in 0..=nyl as i64 {
        for ix in 0..=nxl as i64 {
            let [x, y] = mesh.vertex_coord(level, ix, iy);
            s.push_str(&format!(
                "{x:.12e},{y:.12e},{:.12e}\n",
                p[mesh.vertex_index(level, ix, iy)]
            ));
        }
    }
    s
}

/// `solve`: one Stokes solve, or the scalar diffusion validation problem
/// when `problem.family = "poisson"`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<u8> {
    let out = ensure_out(&cfg.output.dir)?;
    echo_config(cfg, &out)?;
    let extent = MeshExtent {
        nx: cfg.mesh.nx,
        ny: cfg.mesh.ny,
        level: cfg.mesh.levels,
    };
    let mesh = extent.build()?;
    let problem = SinkerProblem::new(
        cfg.family_index(),
        cfg.problem.dr,
        cfg.problem.omega,
        cfg.problem.n_sinkers,
        cfg.problem.eval_mode,
    )
    .map(|mut p| {
        p.rhs_sign = cfg.problem.rhs_sign;
        p.xi6_literal_product = cfg.problem.xi6_literal_product;
        p
    })?;
    let eta = problem.viscosity();
    let plan = cfg.coarsening.mode.plan(&eta, &mesh, cfg.coarsening.nu);
    let c_agca = plan.c_agca();
    let nu = cfg.coarsening.nu;
    if cfg.is_poisson() {
        let eval = CoefficientEval::new(cfg.problem.eval_mode, eta, mesh.clone())?;
        let hier = build_agca_hierarchy(mesh.clone(), DiffusionKernel::default(), eval, plan)?;
        let mg = MgSolver::new(&hier, cfg.vcycle())?;
        let quad = quadrature(2)?;
        let one: ScalarFn = std::sync::Arc::new(|_, _| 1.0);
        let b = assemble_scalar_load(&mesh, cfg.mesh.levels, &one, &quad);
        let (u, report) = mg.solve(&b, cfg.solver.tol, cfg.solver.max_iter);
        write_report(
            &out,
            "poisson",
            cfg.coarsening.mode.name(),
            nu,
            c_agca,
            &report,
        )?;
        if cfg.output.solution_csv {
            write_file(
                &out.join("solution.csv"),
                &scalar_solution_csv(&mesh, cfg.mesh.levels, &u),
            )?;
        }
        println!(
            "poisson solve: {} V-cycles, converged = {}",
            report.iterations, report.converged
        );
        return Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED });
    }
    let eval = CoefficientEval::new(cfg.problem.eval_mode, eta, mesh.clone())?;
    let rhs = problem.rhs();
    let sol = solve_stokes(mesh.clone(), eval, plan, &rhs, &cfg.stokes_cfg())?;
    write_report(
        &out,
        &cfg.problem.family,
        cfg.coarsening.mode.name(),
        nu,
        c_agca,
        &sol.report,
    )?;
    if cfg.output.solution_csv {
        write_file(
            &out.join("velocity.csv"),
            &velocity_csv(&mesh, cfg.mesh.levels, &sol.u),
        )?;
        write_file(
            &out.join("pressure.csv"),
            &pressure_csv(&mesh, cfg.mesh.levels - 1, &sol.p),
        )?;
    }
    println!(
        "stokes solve: {} FGMRES iterations, converged = {}",
        sol.report.iterations, sol.report.converged
    );
    Ok(if sol.report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// `sweep`: the convergence sweep over the configured grid.
pub fn cmd_sweep(cfg: &RunConfig, threads: usize) -> Result<u8> {
    let out = ensure_out(&cfg.output.dir)?;
    echo_config(cfg, &out)?;
    let extent = MeshExtent {
        nx: cfg.mesh.nx,
        ny: cfg.mesh.ny,
        level: cfg.mesh.levels,
    };
    let grid = agca::bench::SweepGrid {
        family: cfg.sweep.family,
        dr: cfg.sweep.dr.clone(),
        omega: cfg.sweep.omega.clone(),
        n_sinkers: cfg.sweep.n_sinkers.clone(),
        eval_modes: cfg.sweep.eval_modes.clone(),
        modes: cfg.sweep.modes.clone(),
    };
    let results =
        bench::run_convergence_sweep(extent, &grid, cfg.coarsening.nu, &cfg.stokes_cfg(), threads)?;
    let csv = results_to_csv(&results, cfg.output.zero_timings);
    write_file(&out.join("sweep.csv"), &csv)?;
    println!("{} runs written to {}", results.len(), out.join("sweep.csv").display());
    Ok(EXIT_OK)
}

/// `nu-sweep`: the adaptive-tolerance sweep for one problem.
pub fn cmd_nu_sweep(cfg: &RunConfig) -> Result<u8> {
    let out = ensure_out(&cfg.output.dir)?;
    echo_config(cfg, &out)?;
    let extent = MeshExtent {
        nx: cfg.mesh.nx,
        ny: cfg.mesh.ny,
        level: cfg.mesh.levels,
    };
    let family = if cfg.is_poisson() { 3 } else { cfg.family_index() };
    let problem = SinkerProblem::new(
        family,
        cfg.problem.dr,
        cfg.problem.omega,
        cfg.problem.n_sinkers,
        cfg.problem.eval_mode,
    )?;
    let rows = bench::run_nu_sweep(extent, &problem, &cfg.nu_sweep.nus, &cfg.stokes_cfg())?;
    let csv = results_to_csv(&rows, cfg.output.zero_timings);
    write_file(&out.join("nu_sweep.csv"), &csv)?;
    for r in &rows {
        println!(
            "nu {:>9}: c_agca {:.4}, stored {} bytes, {} iterations, converged {}",
            r.nu, r.c_agca, r.stored_bytes, r.iterations, r.converged
        );
    }
    Ok(EXIT_OK)
}

/// `cagca`: the macro-size study of the Galerkin-coarsened fraction.
pub fn cmd_cagca(cfg: &RunConfig) -> Result<u8> {
    let out = ensure_out(&cfg.output.dir)?;
    echo_config(cfg, &out)?;
    let problem = SinkerProblem::new(
        cfg.cagca.family,
        cfg.problem.dr,
        cfg.problem.omega,
        cfg.problem.n_sinkers,
        cfg.problem.eval_mode,
    )?;
    let rows = bench::run_cagca_study(
        &problem,
        &cfg.cagca.macro_sizes,
        cfg.mesh.levels,
        cfg.coarsening.nu,
    )?;
    write_file(&out.join("cagca.csv"), &cagca_to_csv(&rows))?;
    for r in &rows {
        println!(
            "{:>3}x{:<3} macros: {} of {} Galerkin-coarsened, c_agca = {:.4}",
            r.macro_nx, r.macro_nx, r.n_gca, r.n_macros, r.c_agca
        );
    }
    Ok(EXIT_OK)
}

/// `memory-model`: the analytic coarse-operator memory table, plus the
/// measured 2D tally of the configured problem for comparison.
pub fn cmd_memory_model(cfg: &RunConfig) -> Result<u8> {
    let m = bench::memory_model_3d(
        cfg.memory_model.n_fill_in,
        cfg.memory_model.n_restart,
        cfg.memory_model.c_agca,
    )?;
    print!("{}", m.table());
    let out = ensure_out(&cfg.output.dir)?;
    write_file(&out.join("memory_model.json"), &serde_json::to_string_pretty(&m)?)?;

    // Measured counterpart on the configured mesh and problem.
    let extent = MeshExtent {
        nx: cfg.mesh.nx,
        ny: cfg.mesh.ny,
        level: cfg.mesh.levels,
    };
    let mesh = extent.build()?;
    let problem = SinkerProblem::new(
        cfg.family_index(),
        cfg.problem.dr,
        cfg.problem.omega,
        cfg.problem.n_sinkers,
        cfg.problem.eval_mode,
    )?;
    let eta = problem.viscosity();
    let plan = cfg.coarsening.mode.plan(&eta, &mesh, cfg.coarsening.nu);
    let eval = CoefficientEval::new(cfg.problem.eval_mode, eta, mesh.clone())?;
    let hier = build_agca_hierarchy(
        mesh,
        agca::coarsening::ViscousKernel::default(),
        eval,
        plan,
    )?;
    let tally = bench::tally_hierarchy(&hier);
    println!(
        "measured 2D tally ({}x{} macros, L = {}, {} coarsening, nu = {}):",
        cfg.mesh.nx,
        cfg.mesh.ny,
        cfg.mesh.levels,
        cfg.coarsening.mode.name(),
        cfg.coarsening.nu
    );
    println!(
        "  c_agca = {:.4}; {} stored matrices, {} reals ({} bytes)",
        tally.c_agca, tally.stored_matrices, tally.stored_entries, tally.stored_bytes
    );
    for (l, n) in &tally.per_level {
        println!("    level {l}: {n} matrices");
    }
    println!(
        "  measured {:.3} reals per N_L vs 2D elementwise estimate {:.3} \
         (c_u = {:.3}, 2 cells/vertex, coarse factor 1/4)",
        tally.measured_per_nl, tally.elementwise_model_2d, tally.c_u_2d
    );
    write_file(&out.join("memory_tally_2d.json"), &serde_json::to_string_pretty(&tally)?)?;
    Ok(EXIT_OK)
}

/// `selftest`: the oracle/invariant suite, one pass/fail line per check.
pub fn cmd_selftest() -> Result<u8> {
    let results = run_selftest();
    let mut all_ok = true;
    for r in &results {
        println!(
            "[{}] {} - {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        all_ok &= r.passed;
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_ERROR })
}

/// `report`: render simple SVG plots from a sweep CSV.
pub fn cmd_report(input: &Path, out_dir: &str, x_col: &str, y_col: &str) -> Result<u8> {
    let out = ensure_out(out_dir)?;
    let text = fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .context("empty CSV")?
        .split(',')
        .collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| *h == name)
            .with_context(|| format!("column {name:?} not in {header:?}"))
    };
    let xi = col(x_col)?;
    let yi = col(y_col)?;
    let mode_i = col("coarsening_mode").ok();
    let eval_i = col("eval_mode").ok();
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let x: f64 = fields[xi].parse().unwrap_or(f64::NAN);
        let y: f64 = fields[yi].parse().unwrap_or(f64::NAN);
        let mut label = String::new();
        if let Some(i) = mode_i {
            label.push_str(fields[i]);
        }
        if let Some(i) = eval_i {
            if !label.is_empty() {
                label.push(' ');
            }
            label.push_str(fields[i]);
        }
        if label.is_empty() {
            label.push_str("data");
        }
        match series.iter_mut().find(|(l, _)| *l == label) {
            Some((_, pts)) => pts.push((x, y)),
            None => series.push((label, vec![(x, y)])),
        }
    }
    let plot_series: Vec<plot::Series> = series
        .into_iter()
        .map(|(label, points)| plot::Series { label, points })
        .collect();
    let log_x = matches!(x_col, "DR" | "nu");
    let svg = plot::line_chart_svg(
        &format!("{y_col} vs {x_col}"),
        x_col,
        y_col,
        &plot_series,
        log_x,
        false,
    );
    let name = format!(
        "{}_vs_{}.svg",
        y_col.replace(|c: char| !c.is_alphanumeric(), "_"),
        x_col.replace(|c: char| !c.is_alphanumeric(), "_")
    );
    let path = out.join(name);
    write_file(&path, &svg)?;
    println!("plot written to {}", path.display());
    Ok(EXIT_OK)
}

/// `dump`: plain-text mesh listing plus the coarsening plan summary.
pub fn cmd_dump(cfg: &RunConfig, level: Option<usize>) -> Result<u8> {
    let extent = MeshExtent {
        nx: cfg.mesh.nx,
        ny: cfg.mesh.ny,
        level: cfg.mesh.levels,
    };
    let mesh = extent.build()?;
    let lv = level.unwrap_or(0);
    if lv > cfg.mesh.levels {
        bail!("dump level {lv} exceeds mesh.levels {}", cfg.mesh.levels);
    }
    println!(
        "macro grid {}x{} ({} triangles, {} vertices), {} refinement levels",
        cfg.mesh.nx,
        cfg.mesh.ny,
        mesh.macro_grid.macro_elements.len(),
        mesh.macro_grid.vertices.len(),
        cfg.mesh.levels
    );
    for l in 0..=cfg.mesh.levels {
        println!(
            "  level {l}: {} vertices, {} elements",
            mesh.n_vertices(l),
            mesh.macro_grid.macro_elements.len() * mesh.micro_count(l)
        );
    }
    println!("vertices at level {lv}:");
    let (nxl, nyl) = mesh.lattice_dims(lv);
    for iy in 0..=nyl as i64 {
        for ix in 0..=nxl as i64 {
            let [x, y] = mesh.vertex_coord(lv, ix, iy);
            let b = if mesh.is_boundary(lv, ix, iy) { " boundary" } else { "" };
            println!("  v{} ({x:.6}, {y:.6}){b}", mesh.vertex_index(lv, ix, iy));
        }
    }
    println!("elements at level {lv} (vertex indices):");
    for m in 0..mesh.macro_grid.macro_elements.len() {
        for (k, el) in mesh.micro_elements(m, lv)?.enumerate() {
            let ids = el.vertex_ids(&mesh);
            println!("  macro {m} elem {k}: {} {} {}", ids[0], ids[1], ids[2]);
        }
    }
    // coarsening plan summary
    let problem = SinkerProblem::new(
        cfg.family_index(),
        cfg.problem.dr,
        cfg.problem.omega,
        cfg.problem.n_sinkers,
        cfg.problem.eval_mode,
    )?;
    let eta = problem.viscosity();
    let plan = select_macros(&eta, &mesh, cfg.coarsening.nu);
    println!(
        "coarsening plan (nu = {}): c_agca = {:.4}, {} of {} macros Galerkin-coarsened",
        cfg.coarsening.nu,
        plan.c_agca(),
        plan.n_gca(),
        plan.gca.len()
    );
    println!("GCA macro set: {:?}", plan.gca_macros());
    for l in 0..cfg.mesh.levels {
        let count: usize = plan.n_gca() * mesh.micro_count(l);
        println!("  level {l}: {count} stored matrices if built");
    }
    let _ = CoarseningMode::Agca;
    let _: Option<ExperimentResult> = None;
    Ok(EXIT_OK)
}
