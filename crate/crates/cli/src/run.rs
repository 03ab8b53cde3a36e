//! The four commands behind the CLI: solve one configuration, sweep a grid
//! of them, export the assembled system, dump the aggregate partition.
//! Every artifact is deterministic for a fixed config and seed — reports
//! carry no clocks, sweeps collect concurrently but write in order.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use aggmg_core::dg::assemble;
use aggmg_core::hierarchy::build;
use aggmg_core::linalg::{write_matrix_market, write_vector, BlockDiagonalLu};
use aggmg_core::meshgraph::{build_cartesian, save_graph};
use aggmg_core::partition::build_hierarchy;
use aggmg_core::solver::{pcg, pgmres, solve_mg, vcycle, SolveReport};

use crate::config::{ExperimentConfig, Method};

/// Result of driving one configuration to completion.
pub struct RunOutcome {
    pub report: SolveReport,
    pub dof: usize,
}

/// Assemble, set up and solve one experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let spec = cfg.problem.problem_spec()?;
    let sys = assemble(&spec).context("assembling the discrete system")?;
    let dof = sys.n_dofs();
    let a = &sys.a;

    if cfg.method == Method::BlockJacobiGmres {
        // single-level baseline: no hierarchy, the block inverse alone
        let bj = BlockDiagonalLu::factor(a, &sys.blocks)?;
        let (_, report) = pgmres(|x| a.spmv(x), |r| Ok(bj.apply_inv(r)), &sys.f, &cfg.cycle)?;
        return Ok(RunOutcome { report, dof });
    }

    let (graph, _) = build_cartesian(&spec.mesh)?;
    let agg = build_hierarchy(&graph, spec.mesh.dimension)?;
    let h = build(a.clone(), &graph, &agg, &cfg.setup).context("multigrid setup")?;
    let (_, mut report) = match cfg.method {
        Method::Mg => solve_mg(&h, &sys.f, &cfg.cycle)?,
        Method::Pcg => pcg(
            |x| a.spmv(x),
            |r| vcycle(&h, 0, r, &cfg.cycle),
            &sys.f,
            &cfg.cycle,
        )?,
        Method::Pgmres => pgmres(
            |x| a.spmv(x),
            |r| vcycle(&h, 0, r, &cfg.cycle),
            &sys.f,
            &cfg.cycle,
        )?,
        Method::BlockJacobiGmres => unreachable!("handled above"),
    };
    if report.levels.is_empty() {
        report.levels = h.summary();
    }
    Ok(RunOutcome { report, dof })
}

/// The solve report file: the fully-resolved config next to the outcome.
#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a ExperimentConfig,
    report: &'a SolveReport,
}

/// `solve`: run one config, write `report.json` and `levels.csv`.
/// Returns the process exit code: 0 converged, 2 not.
pub fn cmd_solve(cfg: &ExperimentConfig, out_dir: &Path) -> Result<u8> {
    let outcome = run(cfg)?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let report_path = out_dir.join("report.json");
    let file = ReportFile {
        config: cfg,
        report: &outcome.report,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(&report_path, text)
        .with_context(|| format!("writing {}", report_path.display()))?;

    let levels_path = out_dir.join("levels.csv");
    let mut csv = String::from("k,dof,nnz\n");
    for lv in &outcome.report.levels {
        csv.push_str(&format!("{},{},{}\n", lv.k, lv.dof, lv.nnz));
    }
    fs::write(&levels_path, csv)
        .with_context(|| format!("writing {}", levels_path.display()))?;

    let r = &outcome.report;
    println!(
        "{}: {} in {} iterations, final residual {:e} ({} unknowns)",
        cfg.method.label(),
        if r.converged { "converged" } else { "did not converge" },
        r.iterations,
        r.final_residual(),
        outcome.dof,
    );
    println!("wrote {}", report_path.display());
    println!("wrote {}", levels_path.display());
    Ok(if r.converged { 0 } else { 2 })
}

/// One sweep axis: a known parameter name and its raw value tokens.
pub struct Axis {
    pub name: String,
    pub values: Vec<String>,
}

/// Parse `name=v1,v2,...` from the command line.
pub fn parse_axis(text: &str) -> Result<Axis> {
    let (name, list) = text
        .split_once('=')
        .with_context(|| format!("axis `{text}` must look like name=v1,v2,..."))?;
    let values: Vec<String> = list
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        bail!("axis `{name}` lists no values");
    }
    check_axis_name(name)?;
    Ok(Axis {
        name: name.to_string(),
        values,
    })
}

fn check_axis_name(name: &str) -> Result<()> {
    match name {
        "M" | "p" | "n_cut" | "Pe" | "method" => Ok(()),
        other => bail!("unknown sweep axis `{other}` (expected M, p, n_cut, Pe or method)"),
    }
}

fn apply_axis(cfg: &mut ExperimentConfig, name: &str, value: &str) -> Result<()> {
    match name {
        "M" => {
            cfg.problem.refinement = value
                .parse()
                .with_context(|| format!("axis M: `{value}` is not a refinement level"))?
        }
        "p" => {
            cfg.problem.degree = value
                .parse()
                .with_context(|| format!("axis p: `{value}` is not a degree"))?
        }
        "n_cut" => {
            cfg.setup.n_cut = Some(
                value
                    .parse()
                    .with_context(|| format!("axis n_cut: `{value}` is not a count"))?,
            )
        }
        "Pe" => {
            cfg.problem.peclet = Some(
                value
                    .parse()
                    .with_context(|| format!("axis Pe: `{value}` is not a number"))?,
            )
        }
        "method" => cfg.method = parse_method(value)?,
        other => bail!("unknown sweep axis `{other}`"),
    }
    Ok(())
}

fn parse_method(value: &str) -> Result<Method> {
    Ok(match value {
        "mg" => Method::Mg,
        "pcg" => Method::Pcg,
        "pgmres" => Method::Pgmres,
        "block_jacobi_gmres" => Method::BlockJacobiGmres,
        other => bail!("unknown method `{other}`"),
    })
}

struct CellRow {
    values: Vec<String>,
    outcome: Result<RunOutcome>,
}

/// `sweep`: run the cross product of up to two axes, one row per cell.
/// Cells run concurrently; a failing cell is recorded in its row and the
/// sweep continues. Writes `sweep.csv` and the resolved base `config.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig, axes: &[Axis], out_dir: &Path) -> Result<u8> {
    if axes.len() > 2 {
        bail!("at most two sweep axes are supported, got {}", axes.len());
    }

    let mut cells: Vec<(Vec<String>, ExperimentConfig)> = Vec::new();
    match axes {
        [] => cells.push((Vec::new(), cfg.clone())),
        [a] => {
            for v in &a.values {
                let mut c = cfg.clone();
                apply_axis(&mut c, &a.name, v)?;
                cells.push((vec![v.clone()], c));
            }
        }
        [a, b] => {
            for va in &a.values {
                for vb in &b.values {
                    let mut c = cfg.clone();
                    apply_axis(&mut c, &a.name, va)?;
                    apply_axis(&mut c, &b.name, vb)?;
                    cells.push((vec![va.clone(), vb.clone()], c));
                }
            }
        }
        _ => unreachable!(),
    }

    let rows: Vec<CellRow> = cells
        .par_iter()
        .map(|(values, c)| CellRow {
            values: values.clone(),
            outcome: c.validate().and_then(|()| run(c)),
        })
        .collect();

    let mut csv = String::new();
    for a in axes {
        csv.push_str(&a.name);
        csv.push(',');
    }
    csv.push_str("iterations,converged,dof,final_residual,error\n");
    for row in &rows {
        for v in &row.values {
            csv.push_str(v);
            csv.push(',');
        }
        match &row.outcome {
            Ok(out) => {
                let r = &out.report;
                csv.push_str(&format!(
                    "{},{},{},{:e},\n",
                    r.iterations,
                    r.converged,
                    out.dof,
                    r.final_residual(),
                ));
            }
            Err(e) => {
                let msg = format!("{e:#}").replace(',', ";").replace('\n', " ");
                csv.push_str(&format!(",false,,,{msg}\n"));
            }
        }
    }

    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let csv_path = out_dir.join("sweep.csv");
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    let cfg_path = out_dir.join("config.json");
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(&cfg_path, text).with_context(|| format!("writing {}", cfg_path.display()))?;

    let failures = rows.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "wrote {} ({} rows, {} failed cells)",
        csv_path.display(),
        rows.len(),
        failures
    );
    Ok(0)
}

/// `export`: write the assembled system for outside tools — MatrixMarket
/// operator, plain-text right-hand side, element graph, dof-block offsets.
pub fn cmd_export(cfg: &ExperimentConfig, out_dir: &Path) -> Result<u8> {
    let spec = cfg.problem.problem_spec()?;
    let sys = assemble(&spec).context("assembling the discrete system")?;
    let (graph, _) = build_cartesian(&spec.mesh)?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let mtx_path = out_dir.join("matrix.mtx");
    let file =
        fs::File::create(&mtx_path).with_context(|| format!("creating {}", mtx_path.display()))?;
    write_matrix_market(&mut BufWriter::new(file), &sys.a)?;

    let rhs_path = out_dir.join("rhs.txt");
    let file =
        fs::File::create(&rhs_path).with_context(|| format!("creating {}", rhs_path.display()))?;
    write_vector(&mut BufWriter::new(file), &sys.f)?;

    let graph_path = out_dir.join("graph.txt");
    save_graph(&graph_path, &graph)?;

    let blocks_path = out_dir.join("blocks.json");
    let mut text = serde_json::to_string_pretty(&serde_json::json!({
        "block_offsets": sys.blocks.block_offsets,
    }))?;
    text.push('\n');
    fs::write(&blocks_path, text)
        .with_context(|| format!("writing {}", blocks_path.display()))?;

    for p in [&mtx_path, &rhs_path, &graph_path, &blocks_path] {
        println!("wrote {}", p.display());
    }
    Ok(0)
}

/// `partition`: dump the nested aggregate hierarchy as JSON.
pub fn cmd_partition(cfg: &ExperimentConfig, out_dir: &Path) -> Result<u8> {
    let spec = cfg.problem.problem_spec()?;
    let (graph, _) = build_cartesian(&spec.mesh)?;
    let agg = build_hierarchy(&graph, spec.mesh.dimension)?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join("aggregates.json");
    let mut text = serde_json::to_string_pretty(&agg)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(0)
}
