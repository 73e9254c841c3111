//! Subcommand implementations and CSV rendering.
//!
//! Exit codes: 0 success (all FORCED identities pass), 1 usage error,
//! 2 scenario/expression parse error, 3 numeric failure (unusable sampling
//! or integration breakdown), 4 FORCED identity failure.

use crate::scenario::{load_file, Scenario};
use gchs_core::audit::{run_audit, AuditConfig, AuditReport, AuditScenario};
use gchs_core::dynamics::{integrate, RhsConvention, TrajectoryConfig};
use gchs_core::expr::parse as parse_expr;
use std::io::Write;
use std::path::Path;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_FORCED_FAIL: i32 = 4;

/// Full-precision float formatting: 17 significant digits round-trip
/// exactly through decimal.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_csv(report: &AuditReport) -> String {
    let mut out = String::from(
        "identity_id,class,samples,rejected,max_residual,mean_residual,sign_note,verdict\n",
    );
    for r in &report.results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.id,
            r.class,
            r.samples,
            r.rejected,
            fmt_f64(r.max_residual),
            fmt_f64(r.mean_residual),
            csv_field(&r.sign_note),
            csv_field(&r.verdict_text()),
        ));
    }
    out
}

fn write_output(out: Option<&Path>, data: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, data).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            // tolerate a closed pipe (e.g. piped into head)
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(data.as_bytes());
            let _ = stdout.flush();
            Ok(())
        }
    }
}

fn eprint_and(code: i32, msg: &str) -> i32 {
    eprintln!("{msg}");
    code
}

pub fn cmd_check(path: &Path) -> i32 {
    let scn = match load_file(path) {
        Ok(s) => s,
        Err(e) => return eprint_and(EXIT_PARSE, &format!("error: {e}")),
    };
    print_echo(&scn);
    EXIT_OK
}

fn print_echo(s: &Scenario) {
    use std::fmt::Write as _;
    let mut text = String::new();
    let w = &mut text;
    let _ = writeln!(w, "scenario {}", s.name);
    let _ = writeln!(w, "[manifold]");
    let _ = writeln!(w, "dim = {}", s.dim);
    if let Some(coords) = &s.coords {
        let _ = writeln!(w, "coords = {}", coords.join(", "));
    }
    let _ = writeln!(w, "chi = \"{}\"", s.chi_text);
    let _ = writeln!(w, "J = {}", s.j_kind);
    if !s.frame_rows.is_empty() {
        let _ = writeln!(w, "[frame]");
        for (i, row) in s.frame_rows.iter().enumerate() {
            let _ = writeln!(w, "E{} = \"{}\"", i + 1, row);
        }
    }
    let _ = writeln!(w, "[hamiltonian]");
    let _ = writeln!(w, "H = \"{}\"", s.hamiltonian_text);
    if let Some(a) = &s.audit {
        let _ = writeln!(w, "[audit]");
        let box_text: Vec<String> = a
            .box_
            .iter()
            .map(|(lo, hi)| format!("{lo}..{hi}"))
            .collect();
        let _ = writeln!(w, "box = {}", box_text.join(", "));
        let _ = writeln!(w, "samples = {}", a.samples);
        let _ = writeln!(w, "seed = {}", a.seed);
        match &a.identities {
            None => {
                let _ = writeln!(w, "identities = all");
            }
            Some(list) => {
                let _ = writeln!(w, "identities = {}", list.join(", "));
            }
        }
        let quoted: Vec<String> = a.pool_texts.iter().map(|t| format!("\"{t}\"")).collect();
        let _ = writeln!(w, "test_functions = {}", quoted.join(", "));
    }
    if let Some(sim) = &s.simulate {
        let _ = writeln!(w, "[simulate]");
        let x0: Vec<String> = sim.x0.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(w, "x0 = {}", x0.join(", "));
        let _ = writeln!(w, "t0 = {}", sim.t0);
        let _ = writeln!(w, "t1 = {}", sim.t1);
        let _ = writeln!(w, "h = {}", sim.h);
        let _ = writeln!(
            w,
            "method = {}",
            match sim.method {
                gchs_core::dynamics::Method::Rk4 => "rk4",
                gchs_core::dynamics::Method::Rk45 { .. } => "rk45",
            }
        );
        let _ = writeln!(w, "convention = {}", sim.convention.name());
        if !sim.observables.is_empty() {
            let quoted: Vec<String> = sim
                .observables
                .iter()
                .map(|(t, _)| format!("\"{t}\""))
                .collect();
            let _ = writeln!(w, "observables = {}", quoted.join(", "));
        }
        if let Some(v) = &sim.qsu_vector {
            let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(w, "v = {}", text.join(", "));
        }
    }
    let _ = write_output(None, &text);
}

pub fn cmd_audit(
    path: &Path,
    out: Option<&Path>,
    threads: Option<usize>,
    seed_override: Option<u64>,
) -> i32 {
    let scn = match load_file(path) {
        Ok(s) => s,
        Err(e) => return eprint_and(EXIT_PARSE, &format!("error: {e}")),
    };
    let Some(audit) = &scn.audit else {
        return eprint_and(
            EXIT_PARSE,
            &format!("error: {}: scenario has no [audit] section", path.display()),
        );
    };
    let audit_scenario = AuditScenario {
        name: scn.name.clone(),
        manifold: scn.manifold.clone(),
        hamiltonian: scn.hamiltonian.clone(),
        pool: audit.pool.clone(),
        qsu_vector: scn.simulate.as_ref().and_then(|s| s.qsu_vector.clone()),
    };
    let cfg = AuditConfig {
        box_: audit.box_.clone(),
        samples: audit.samples,
        seed: seed_override.unwrap_or(audit.seed),
        threads,
        identities: audit.identities.clone(),
    };
    let report = match run_audit(&audit_scenario, &cfg) {
        Ok(r) => r,
        Err(e) => return eprint_and(EXIT_NUMERIC, &format!("error: audit failed: {e}")),
    };
    let csv = report_csv(&report);
    if let Err(e) = write_output(out, &csv) {
        return eprint_and(EXIT_NUMERIC, &format!("error: cannot write output: {e}"));
    }
    let forced_failures: Vec<&str> = report
        .results
        .iter()
        .filter(|r| r.verdict == gchs_core::audit::Verdict::Fail)
        .map(|r| r.id.as_str())
        .collect();
    eprintln!(
        "audit {}: {} identities, {} unusable points (seed {})",
        report.scenario,
        report.results.len(),
        report.unusable_points,
        report.seed
    );
    if 2 * report.unusable_points > report.samples_requested {
        return eprint_and(
            EXIT_NUMERIC,
            &format!(
                "error: {} of {} sample points unusable",
                report.unusable_points, report.samples_requested
            ),
        );
    }
    if !forced_failures.is_empty() {
        return eprint_and(
            EXIT_FORCED_FAIL,
            &format!("error: FORCED identities failed: {}", forced_failures.join(", ")),
        );
    }
    EXIT_OK
}

pub fn cmd_simulate(path: &Path, out: Option<&Path>, convention: Option<&str>) -> i32 {
    let scn = match load_file(path) {
        Ok(s) => s,
        Err(e) => return eprint_and(EXIT_PARSE, &format!("error: {e}")),
    };
    let Some(sim) = &scn.simulate else {
        return eprint_and(
            EXIT_PARSE,
            &format!(
                "error: {}: scenario has no [simulate] section",
                path.display()
            ),
        );
    };
    let convention = match convention {
        None => sim.convention,
        Some(text) => match RhsConvention::parse(text) {
            Some(c) => c,
            None => {
                return eprint_and(
                    EXIT_USAGE,
                    &format!("error: unknown convention '{text}'"),
                )
            }
        },
    };
    let cfg = TrajectoryConfig {
        hamiltonian: scn.hamiltonian.clone(),
        x0: sim.x0.clone(),
        t0: sim.t0,
        t1: sim.t1,
        step: sim.h,
        method: sim.method,
        convention,
        observables: sim.observables.iter().map(|(_, e)| e.clone()).collect(),
    };
    let traj = match integrate(&scn.manifold, &cfg) {
        Ok(t) => t,
        Err(e) => return eprint_and(EXIT_NUMERIC, &format!("error: {e}")),
    };

    let mut csv = String::from("t");
    for i in 1..=scn.dim {
        csv.push_str(&format!(",x{i}"));
    }
    csv.push_str(",w,H,s,I");
    for (text, _) in &sim.observables {
        csv.push(',');
        csv.push_str(&csv_field(text));
    }
    csv.push('\n');
    for k in 0..traj.len() {
        csv.push_str(&fmt_f64(traj.times[k]));
        for v in &traj.states[k] {
            csv.push(',');
            csv.push_str(&fmt_f64(*v));
        }
        csv.push(',');
        csv.push_str(&fmt_f64(traj.w[k]));
        csv.push(',');
        csv.push_str(&fmt_f64(traj.hamiltonian[k]));
        csv.push(',');
        csv.push_str(&fmt_f64(traj.s[k]));
        csv.push(',');
        csv.push_str(&fmt_f64(traj.invariant[k]));
        for series in &traj.observables {
            csv.push(',');
            csv.push_str(&fmt_f64(series[k]));
        }
        csv.push('\n');
    }
    if let Err(e) = write_output(out, &csv) {
        return eprint_and(EXIT_NUMERIC, &format!("error: cannot write output: {e}"));
    }
    eprintln!(
        "simulate {}: {} rows over [{}, {}], convention {}",
        scn.name,
        traj.len(),
        sim.t0,
        sim.t1,
        convention.name()
    );
    EXIT_OK
}

pub fn cmd_bracket(path: &Path, f_text: &str, g_text: &str, at_text: &str) -> i32 {
    let scn = match load_file(path) {
        Ok(s) => s,
        Err(e) => return eprint_and(EXIT_PARSE, &format!("error: {e}")),
    };
    let names = scn.coords.as_deref();
    let f = match parse_expr(f_text, scn.dim, names) {
        Ok(e) => e,
        Err(e) => return eprint_and(EXIT_PARSE, &format!("error: --f: {e}")),
    };
    let g = match parse_expr(g_text, scn.dim, names) {
        Ok(e) => e,
        Err(e) => return eprint_and(EXIT_PARSE, &format!("error: --g: {e}")),
    };
    let coords: Result<Vec<f64>, _> = at_text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect();
    let x = match coords {
        Ok(v) if v.len() == scn.dim => v,
        Ok(v) => {
            return eprint_and(
                EXIT_USAGE,
                &format!("error: --at has {} coordinates, dim = {}", v.len(), scn.dim),
            )
        }
        Err(e) => return eprint_and(EXIT_USAGE, &format!("error: --at: {e}")),
    };

    let bracket = scn.manifold.gpwb(&f, &g, &x);
    let parts = scn.manifold.gpwb_decomposed(&f, &g, &x);
    let w = scn.manifold.w_dynamics(&scn.hamiltonian, &x);
    match (bracket, parts, w) {
        (Ok(b), Ok((ghs, xchi)), Ok(w)) => {
            let text = format!(
                "{{f,g}} = {}\nghs_part = {}\nxchi_part = {}\nw = {}\n",
                fmt_f64(b),
                fmt_f64(ghs),
                fmt_f64(xchi),
                fmt_f64(w)
            );
            let _ = write_output(None, &text);
            EXIT_OK
        }
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
            eprint_and(EXIT_NUMERIC, &format!("error: {e}"))
        }
    }
}
