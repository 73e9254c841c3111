//! Scenario files: INI-style, `#` comments, case-sensitive keys, expression
//! values double-quoted.
//!
//! ```ini
//! [manifold]
//! dim = 2
//! chi = "0.3*q1"
//! J = canonical            # or explicit entries: J12 = "1", J21 = "-1"
//!
//! [frame]                  # optional anholonomic frame, one row per field
//! E1 = "1, 0, 0"
//!
//! [hamiltonian]
//! H = "0.5*(q1^2+p1^2)"
//!
//! [audit]
//! box = -1..1, -1..1       # one interval per axis (a single one replicates)
//! samples = 600
//! seed = 42
//! identities = all         # or a comma list of identity ids
//! test_functions = "q1", "p1", ...   # fixed audit pool (defaulted if absent)
//!
//! [simulate]
//! x0 = 1.0, 0.0
//! t0 = 0.0
//! t1 = 10.0
//! h = 0.001
//! method = rk4             # rk4 | rk45
//! convention = transport   # transport | eq1-literal | nghs-literal
//! observables = "q1^2+p1^2"
//! v = 0.0, 1.0             # optional Qsu contraction vector
//! ```

use gchs_core::audit::default_pool;
use gchs_core::dynamics::{Method, RhsConvention, RK45_DEFAULT_ABS_TOL, RK45_DEFAULT_REL_TOL};
use gchs_core::expr::{parse as parse_expr, ScalarExpr};
use gchs_core::PoissonWManifold;
use std::fmt;
use std::path::Path;

/// Parse/validation failure with the position in the scenario file.
#[derive(Debug, Clone)]
pub struct ScenarioError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.col, self.msg)
    }
}

impl std::error::Error for ScenarioError {}

type SResult<T> = Result<T, ScenarioError>;

fn err<T>(line: usize, col: usize, msg: impl Into<String>) -> SResult<T> {
    Err(ScenarioError {
        line,
        col,
        msg: msg.into(),
    })
}

#[derive(Clone, Debug)]
pub struct AuditSection {
    pub box_: Vec<(f64, f64)>,
    pub samples: usize,
    pub seed: u64,
    pub identities: Option<Vec<String>>,
    pub pool: Vec<ScalarExpr>,
    pub pool_texts: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SimulateSection {
    pub x0: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub h: f64,
    pub method: Method,
    pub convention: RhsConvention,
    pub observables: Vec<(String, ScalarExpr)>,
    pub qsu_vector: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub coords: Option<Vec<String>>,
    pub chi_text: String,
    pub j_kind: String,
    pub frame_rows: Vec<String>,
    pub hamiltonian_text: String,
    pub manifold: PoissonWManifold,
    pub hamiltonian: ScalarExpr,
    pub audit: Option<AuditSection>,
    pub simulate: Option<SimulateSection>,
}

struct RawEntry {
    section: String,
    key: String,
    value: String,
    line: usize,
    value_col: usize,
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn tokenize_file(text: &str) -> SResult<Vec<RawEntry>> {
    let mut entries = Vec::new();
    let mut section = String::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw_line);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) if !name.trim().is_empty() => {
                    section = name.trim().to_string();
                    continue;
                }
                _ => {
                    return err(line_no, 1, "malformed section header");
                }
            }
        }
        let eq = match trimmed.find('=') {
            Some(p) => p,
            None => {
                return err(line_no, 1, format!("expected 'key = value', got '{trimmed}'"));
            }
        };
        if section.is_empty() {
            return err(line_no, 1, "key outside of any [section]");
        }
        let key = trimmed[..eq].trim().to_string();
        if key.is_empty() {
            return err(line_no, 1, "empty key");
        }
        let value = trimmed[eq + 1..].trim().to_string();
        let value_col = raw_line.find('=').map(|p| p + 2).unwrap_or(1);
        if entries
            .iter()
            .any(|e: &RawEntry| e.section == section && e.key == key)
        {
            return err(
                line_no,
                1,
                format!("duplicate key '{key}' in section [{section}]"),
            );
        }
        entries.push(RawEntry {
            section: section.clone(),
            key,
            value,
            line: line_no,
            value_col,
        });
    }
    Ok(entries)
}

struct Entries(Vec<RawEntry>);

impl Entries {
    fn get(&self, section: &str, key: &str) -> Option<&RawEntry> {
        self.0
            .iter()
            .find(|e| e.section == section && e.key == key)
    }

    fn require(&self, section: &str, key: &str) -> SResult<&RawEntry> {
        self.get(section, key).ok_or(ScenarioError {
            line: 0,
            col: 0,
            msg: format!("missing required key '{key}' in section [{section}]"),
        })
    }

    fn has_section(&self, section: &str) -> bool {
        self.0.iter().any(|e| e.section == section)
    }

    fn keys_in(&self, section: &str) -> Vec<&RawEntry> {
        self.0.iter().filter(|e| e.section == section).collect()
    }
}

/// Splits a value at top-level commas (commas inside quotes don't count).
fn split_top_level(value: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    for c in value.chars() {
        match c {
            '"' => {
                in_quotes = !in_quotes;
                current.push(c);
            }
            ',' if !in_quotes => {
                parts.push(current.trim().to_string());
                current.clear();
            }
            _ => current.push(c),
        }
    }
    if !current.trim().is_empty() || !parts.is_empty() {
        parts.push(current.trim().to_string());
    }
    parts
}

fn unquote(e: &RawEntry, part: &str) -> SResult<String> {
    let t = part.trim();
    if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') {
        Ok(t[1..t.len() - 1].to_string())
    } else {
        err(
            e.line,
            e.value_col,
            format!("expected a double-quoted expression, got '{t}'"),
        )
    }
}

fn quoted_list(e: &RawEntry) -> SResult<Vec<String>> {
    split_top_level(&e.value)
        .iter()
        .map(|p| unquote(e, p))
        .collect()
}

fn number_list(e: &RawEntry) -> SResult<Vec<f64>> {
    split_top_level(&e.value)
        .iter()
        .map(|p| {
            p.parse::<f64>().map_err(|_| ScenarioError {
                line: e.line,
                col: e.value_col,
                msg: format!("expected a number, got '{p}'"),
            })
        })
        .collect()
}

fn number(e: &RawEntry) -> SResult<f64> {
    e.value.trim().parse::<f64>().map_err(|_| ScenarioError {
        line: e.line,
        col: e.value_col,
        msg: format!("expected a number, got '{}'", e.value),
    })
}

fn integer(e: &RawEntry) -> SResult<u64> {
    e.value.trim().parse::<u64>().map_err(|_| ScenarioError {
        line: e.line,
        col: e.value_col,
        msg: format!("expected a non-negative integer, got '{}'", e.value),
    })
}

fn parse_box(e: &RawEntry, dim: usize) -> SResult<Vec<(f64, f64)>> {
    let parts = split_top_level(&e.value);
    let mut axes = Vec::new();
    for p in &parts {
        let (lo, hi) = match p.split_once("..") {
            Some(pair) => pair,
            None => {
                return err(
                    e.line,
                    e.value_col,
                    format!("expected 'lo..hi' interval, got '{p}'"),
                )
            }
        };
        let lo: f64 = lo.trim().parse().map_err(|_| ScenarioError {
            line: e.line,
            col: e.value_col,
            msg: format!("bad interval bound '{lo}'"),
        })?;
        let hi: f64 = hi.trim().parse().map_err(|_| ScenarioError {
            line: e.line,
            col: e.value_col,
            msg: format!("bad interval bound '{hi}'"),
        })?;
        if hi <= lo {
            return err(e.line, e.value_col, format!("empty interval '{p}'"));
        }
        axes.push((lo, hi));
    }
    if axes.len() == 1 {
        return Ok(vec![axes[0]; dim]);
    }
    if axes.len() != dim {
        return err(
            e.line,
            e.value_col,
            format!("box has {} axes but dim = {dim}", axes.len()),
        );
    }
    Ok(axes)
}

fn expr_in(e: &RawEntry, text: &str, dim: usize, names: Option<&[String]>) -> SResult<ScalarExpr> {
    parse_expr(text, dim, names).map_err(|pe| ScenarioError {
        line: e.line,
        col: e.value_col + pe.pos,
        msg: format!("in '{text}': {}", pe.msg),
    })
}

pub fn load_str(text: &str, name: &str) -> SResult<Scenario> {
    let entries = Entries(tokenize_file(text)?);

    // [manifold]
    let dim_entry = entries.require("manifold", "dim")?;
    let dim = integer(dim_entry)? as usize;
    if dim == 0 || dim > 9 {
        return err(
            dim_entry.line,
            dim_entry.value_col,
            "dim must be between 1 and 9",
        );
    }

    let coords: Option<Vec<String>> = match entries.get("manifold", "coords") {
        Some(e) => {
            let names: Vec<String> = split_top_level(&e.value);
            if names.len() != dim {
                return err(
                    e.line,
                    e.value_col,
                    format!("coords lists {} names but dim = {dim}", names.len()),
                );
            }
            Some(names)
        }
        None => None,
    };
    let names = coords.as_deref();

    let chi_entry = entries.require("manifold", "chi")?;
    let chi_text = unquote(chi_entry, &chi_entry.value)?;
    let chi = expr_in(chi_entry, &chi_text, dim, names)?;

    // structure matrix: canonical or explicit J{i}{j} entries
    let j_entry = entries.require("manifold", "J")?;
    let (j_kind, j_exprs) = if j_entry.value.trim() == "canonical" {
        if dim % 2 != 0 {
            return err(
                j_entry.line,
                j_entry.value_col,
                format!("canonical J needs an even dim, got {dim}"),
            );
        }
        let m = dim / 2;
        let mut j = vec![ScalarExpr::constant(0.0); dim * dim];
        for i in 0..m {
            j[i * dim + (m + i)] = ScalarExpr::constant(1.0);
            j[(m + i) * dim + i] = ScalarExpr::constant(-1.0);
        }
        ("canonical".to_string(), j)
    } else if j_entry.value.trim() == "explicit" {
        let mut j = vec![ScalarExpr::constant(0.0); dim * dim];
        let mut given = vec![false; dim * dim];
        for e in entries.keys_in("manifold") {
            let Some(idx) = e.key.strip_prefix('J') else {
                continue;
            };
            if idx.is_empty() {
                continue; // the `J = explicit` marker itself
            }
            let digits: Vec<u32> = idx.chars().filter_map(|c| c.to_digit(10)).collect();
            if digits.len() != 2 || digits.len() != idx.chars().count() {
                return err(
                    e.line,
                    1,
                    format!("bad structure-matrix key '{}' (expected Jij)", e.key),
                );
            }
            let (r, c) = (digits[0] as usize, digits[1] as usize);
            if r == 0 || c == 0 || r > dim || c > dim {
                return err(
                    e.line,
                    1,
                    format!("structure-matrix index out of range in '{}'", e.key),
                );
            }
            let text = unquote(e, &e.value)?;
            j[(r - 1) * dim + (c - 1)] = expr_in(e, &text, dim, names)?;
            given[(r - 1) * dim + (c - 1)] = true;
        }
        // mirror entries that were given on one side only
        for r in 0..dim {
            for c in 0..dim {
                if given[r * dim + c] && !given[c * dim + r] && r != c {
                    j[c * dim + r] = ScalarExpr::Unary(
                        gchs_core::expr::UnaryOp::Neg,
                        Box::new(j[r * dim + c].clone()),
                    );
                }
            }
        }
        ("explicit".to_string(), j)
    } else {
        return err(
            j_entry.line,
            j_entry.value_col,
            format!(
                "J must be 'canonical' or 'explicit' (with Jij keys), got '{}'",
                j_entry.value
            ),
        );
    };

    let mut manifold = PoissonWManifold::new(dim, j_exprs, chi.clone()).map_err(|e| {
        ScenarioError {
            line: j_entry.line,
            col: 1,
            msg: e.to_string(),
        }
    })?;

    // [frame]
    let mut frame_rows = Vec::new();
    if entries.has_section("frame") {
        let mut rows = vec![None; dim];
        for e in entries.keys_in("frame") {
            let Some(idx) = e.key.strip_prefix('E') else {
                return err(e.line, 1, format!("unexpected key '{}' in [frame]", e.key));
            };
            let i: usize = idx.parse().map_err(|_| ScenarioError {
                line: e.line,
                col: 1,
                msg: format!("bad frame key '{}'", e.key),
            })?;
            if i == 0 || i > dim {
                return err(e.line, 1, format!("frame row E{i} out of range"));
            }
            let text = unquote(e, &e.value)?;
            rows[i - 1] = Some((e, text));
        }
        let mut flat = Vec::with_capacity(dim * dim);
        for (i, slot) in rows.iter().enumerate() {
            let Some((e, text)) = slot else {
                return err(0, 0, format!("missing frame row E{}", i + 1));
            };
            let comps = split_top_level(text);
            if comps.len() != dim {
                return err(
                    e.line,
                    e.value_col,
                    format!("frame row E{} has {} components, dim = {dim}", i + 1, comps.len()),
                );
            }
            frame_rows.push(text.clone());
            for comp in comps {
                flat.push(expr_in(e, &comp, dim, names)?);
            }
        }
        manifold = manifold.with_frame(flat).map_err(|er| ScenarioError {
            line: 0,
            col: 0,
            msg: er.to_string(),
        })?;
    }

    // negative-test fixture: sever A = E chi
    if let Some(e) = entries.get("manifold", "override_structural_derivative") {
        let texts = quoted_list(e)?;
        if texts.len() != dim {
            return err(
                e.line,
                e.value_col,
                format!("override needs {dim} components, got {}", texts.len()),
            );
        }
        let mut exprs = Vec::with_capacity(dim);
        for t in &texts {
            exprs.push(expr_in(e, t, dim, names)?);
        }
        manifold = manifold
            .with_structural_derivative_override(exprs)
            .map_err(|er| ScenarioError {
                line: e.line,
                col: 1,
                msg: er.to_string(),
            })?;
    }

    // [hamiltonian]
    let h_entry = entries.require("hamiltonian", "H")?;
    let hamiltonian_text = unquote(h_entry, &h_entry.value)?;
    let hamiltonian = expr_in(h_entry, &hamiltonian_text, dim, names)?;

    // [audit]
    let audit = if entries.has_section("audit") {
        let box_ = parse_box(entries.require("audit", "box")?, dim)?;
        let samples_entry = entries.require("audit", "samples")?;
        let samples = integer(samples_entry)? as usize;
        let seed = match entries.get("audit", "seed") {
            Some(e) => integer(e)?,
            None => 0,
        };
        let identities = match entries.get("audit", "identities") {
            None => None,
            Some(e) if e.value.trim() == "all" => None,
            Some(e) => Some(
                split_top_level(&e.value)
                    .into_iter()
                    .map(|s| s.trim().to_string())
                    .collect(),
            ),
        };
        let (pool, pool_texts) = match entries.get("audit", "test_functions") {
            Some(e) => {
                let texts = quoted_list(e)?;
                let mut pool = Vec::with_capacity(texts.len());
                for t in &texts {
                    pool.push(expr_in(e, t, dim, names)?);
                }
                (pool, texts)
            }
            None => {
                let pool = default_pool(dim);
                let texts = pool.iter().map(|p| p.to_string()).collect();
                (pool, texts)
            }
        };
        Some(AuditSection {
            box_,
            samples,
            seed,
            identities,
            pool,
            pool_texts,
        })
    } else {
        None
    };

    // [simulate]
    let simulate = if entries.has_section("simulate") {
        let x0_entry = entries.require("simulate", "x0")?;
        let x0 = number_list(x0_entry)?;
        if x0.len() != dim {
            return err(
                x0_entry.line,
                x0_entry.value_col,
                format!("x0 has {} entries, dim = {dim}", x0.len()),
            );
        }
        let t0 = number(entries.require("simulate", "t0")?)?;
        let t1_entry = entries.require("simulate", "t1")?;
        let t1 = number(t1_entry)?;
        if t1 <= t0 {
            return err(t1_entry.line, t1_entry.value_col, "t1 must exceed t0");
        }
        let h_entry2 = entries.require("simulate", "h")?;
        let h = number(h_entry2)?;
        if h <= 0.0 {
            return err(h_entry2.line, h_entry2.value_col, "h must be positive");
        }
        let method = match entries.get("simulate", "method") {
            None => Method::Rk4,
            Some(e) => match e.value.trim() {
                "rk4" => Method::Rk4,
                "rk45" => Method::Rk45 {
                    rel_tol: RK45_DEFAULT_REL_TOL,
                    abs_tol: RK45_DEFAULT_ABS_TOL,
                },
                other => {
                    return err(
                        e.line,
                        e.value_col,
                        format!("method must be rk4 or rk45, got '{other}'"),
                    )
                }
            },
        };
        let convention = match entries.get("simulate", "convention") {
            None => RhsConvention::Transport,
            Some(e) => match RhsConvention::parse(e.value.trim()) {
                Some(c) => c,
                None => {
                    return err(
                        e.line,
                        e.value_col,
                        format!(
                            "convention must be transport, eq1-literal or nghs-literal, got '{}'",
                            e.value
                        ),
                    )
                }
            },
        };
        let observables = match entries.get("simulate", "observables") {
            None => Vec::new(),
            Some(e) => {
                let texts = quoted_list(e)?;
                let mut obs = Vec::with_capacity(texts.len());
                for t in texts {
                    let parsed = expr_in(e, &t, dim, names)?;
                    obs.push((t, parsed));
                }
                obs
            }
        };
        let qsu_vector = match entries.get("simulate", "v") {
            None => None,
            Some(e) => {
                let v = number_list(e)?;
                if v.len() != dim {
                    return err(
                        e.line,
                        e.value_col,
                        format!("v has {} entries, dim = {dim}", v.len()),
                    );
                }
                Some(v)
            }
        };
        Some(SimulateSection {
            x0,
            t0,
            t1,
            h,
            method,
            convention,
            observables,
            qsu_vector,
        })
    } else {
        None
    };

    Ok(Scenario {
        name: name.to_string(),
        dim,
        coords,
        chi_text,
        j_kind,
        frame_rows,
        hamiltonian_text,
        manifold,
        hamiltonian,
        audit,
        simulate,
    })
}

pub fn load_file(path: &Path) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string());
    load_str(&text, &name).map_err(|e| format!("{}: {e}", path.display()))
}
