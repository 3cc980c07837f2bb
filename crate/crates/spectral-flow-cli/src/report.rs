//! Deterministic structured-text reports and CSV curve emission.
//!
//! Reports are plain `key: value` text with stable line order; every float
//! uses the shortest representation that parses back to the identical
//! value, so two runs with the same inputs produce byte-identical output.
//! The timestamp line is the single nondeterministic element and is omitted
//! when requested.

use std::fmt::Write as _;

use spectral_flow::ham::HamiltonianReport;
use spectral_flow::pde::{BranchSearch, PdeReport};
use spectral_flow::selftest::SelftestReport;
use spectral_flow::sflcore::{Crossing, CrossingKind, EquivariantFlow, PartitionFlow, Verdict};

use crate::config::CommonRun;
use crate::error::{CliError, CliResult};

pub fn fmt_f(x: f64) -> String {
    format!("{x}")
}

fn fmt_pair(pair: (f64, f64)) -> String {
    format!("[{}, {}]", fmt_f(pair.0), fmt_f(pair.1))
}

fn fmt_list(xs: &[f64]) -> String {
    let body: Vec<String> = xs.iter().map(|&x| fmt_f(x)).collect();
    format!("[{}]", body.join(", "))
}

fn kind_name(kind: CrossingKind) -> &'static str {
    match kind {
        CrossingKind::SignChange => "sign-change",
        CrossingKind::Dip => "dip",
    }
}

/// A report under construction.
pub struct Report {
    lines: Vec<String>,
}

impl Report {
    pub fn new(command: &str, timestamp: bool) -> Report {
        let mut lines = vec!["# sflow report".to_owned(), format!("command: {command}")];
        if timestamp {
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            lines.push(format!("timestamp: {now}"));
        }
        Report { lines }
    }

    pub fn line(&mut self, text: impl Into<String>) {
        self.lines.push(text.into());
    }

    pub fn text(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}

fn crossing_lines(report: &mut Report, crossings: &[Crossing]) {
    report.line(format!("crossings: {}", crossings.len()));
    for c in crossings {
        report.line(format!(
            "  crossing at lambda = {}: kind = {}, kernel_dim = {}, forms = {}, \
             signature = {}, regular = {}",
            fmt_f(c.lambda),
            kind_name(c.kind),
            c.form_eigenvalues.len(),
            fmt_list(&c.form_eigenvalues),
            c.signature,
            c.regular,
        ));
    }
}

fn equivariant_lines(report: &mut Report, eq: &EquivariantFlow) {
    report.line(format!("sfl_G = {}", eq.flow));
    report.line(format!(
        "  split: fixed sfl = {}, antifixed sfl = {}, unsplit sfl = {} ({} method)",
        eq.fixed, eq.anti, eq.unsplit, eq.unsplit_method,
    ));
}

/// `path` subcommand report body.
#[allow(clippy::too_many_arguments)]
pub fn render_path(
    report: &mut Report,
    file: &str,
    dim: usize,
    samples: usize,
    lambda_range: (f64, f64),
    endpoint_margins: (f64, f64),
    partition: &PartitionFlow,
    morse: Option<i64>,
    crossings: Option<&[Crossing]>,
    skipped: &[String],
    equivariant: Option<&EquivariantFlow>,
    verdict: Verdict,
) {
    report.line(format!("file: {file}"));
    report.line(format!("dim: {dim}"));
    report.line(format!("samples: {samples}"));
    report.line(format!("lambda_range: {}", fmt_pair(lambda_range)));
    report.line(format!("endpoint_margins: {}", fmt_pair(endpoint_margins)));
    report.line(format!(
        "partition: subintervals = {}, max_depth = {}, samples = {}",
        partition.subintervals, partition.max_depth_used, partition.samples_used,
    ));
    if let Some(m) = morse {
        report.line(format!("morse difference: {m}"));
    }
    report.line(format!("sfl = {}", partition.flow));
    if let Some(eq) = equivariant {
        equivariant_lines(report, eq);
    }
    match crossings {
        Some(list) => crossing_lines(report, list),
        None => report.line("crossings: unavailable"),
    }
    for note in skipped {
        report.line(format!("note: {note}"));
    }
    report.line(format!("verdict: {verdict}"));
}

/// `pde` subcommand report body.
pub fn render_pde(
    report: &mut Report,
    preset: Option<&str>,
    pde: &PdeReport,
    branches: &[(f64, BranchSearch)],
) {
    match preset {
        Some(name) => report.line(format!("preset: {name}")),
        None => report.line("family: custom"),
    }
    report.line(format!("modes: {}", pde.modes));
    report.line(format!("lambda_range: {}", fmt_pair(pde.lambda_range)));
    report.line(format!("endpoint_margins: {}", fmt_pair(pde.endpoint_margins)));
    report.line(format!("sfl = {}", pde.flow));
    if let Some(eq) = &pde.equivariant {
        equivariant_lines(report, eq);
    }
    if let Some((m0, m1)) = pde.fixed_morse {
        report.line(format!("fixed-block morse indices: {m0} -> {m1}"));
    }
    crossing_lines(report, &pde.crossings);
    report.line(format!("mechanism: {}", pde.mechanism));
    for (lambda_star, search) in branches {
        report.line(format!(
            "branch search at lambda = {}: attempts = {}, converged = {}, trivial = {}, points = {}",
            fmt_f(*lambda_star),
            search.attempts,
            search.converged,
            search.trivial,
            search.points.len(),
        ));
        if search.points.is_empty() {
            report.line("  no nontrivial solutions above the noise floor");
        }
        for point in &search.points {
            report.line(format!(
                "  branch point: lambda = {}, norm = {}, residual = {}",
                fmt_f(point.lambda),
                fmt_f(point.norm),
                fmt_f(point.residual),
            ));
        }
    }
    report.line(format!("verdict: {}", pde.verdict));
}

/// `ham` subcommand report body.
pub fn render_ham(report: &mut Report, preset: Option<&str>, dim: usize, ham: &HamiltonianReport) {
    match preset {
        Some(name) => report.line(format!("preset: {name}")),
        None => report.line("family: custom"),
    }
    report.line(format!("dim: {dim}"));
    report.line(format!("truncation: {}", fmt_f(ham.truncation)));
    report.line(format!("grid: {}", ham.grid));
    report.line(format!("lambda_range: {}", fmt_pair(ham.lambda_range)));
    report.line(format!("endpoint_margins: {}", fmt_pair(ham.endpoint_margins)));
    report.line(format!("raw matrix flow: {}", ham.raw_total_flow));
    report.line(format!("sfl = {}", ham.flow));
    if let Some(eq) = ham.equivariant {
        report.line(format!("sfl_G = {eq}"));
        report.line(format!(
            "  split: fixed sfl = {}, antifixed sfl = {}",
            eq.fixed_part(),
            eq.anti_part(),
        ));
    }
    for block in &ham.blocks {
        let coords: Vec<String> = block.coordinates.iter().map(|c| c.to_string()).collect();
        report.line(format!(
            "block {} (coordinates [{}]):",
            block.name,
            coords.join(", ")
        ));
        report.line(format!("  shooting crossings: {}", block.shooting.len()));
        for s in &block.shooting {
            report.line(format!(
                "    crossing at lambda = {}: form = {}, signature = {}, tangential = {}, regular = {}",
                fmt_f(s.lambda),
                fmt_f(s.form),
                s.signature,
                s.tangential,
                s.regular,
            ));
        }
        report.line(format!("  shooting sfl = {}", block.shooting_flow));
        report.line(format!("  matrix crossings: {}", block.matrix_crossings.len()));
        for c in &block.matrix_crossings {
            report.line(format!(
                "    crossing at lambda = {}: kind = {}, kernel_dim = {}, physical_modes = {}, \
                 spurious_modes = {}, physical_flow = {}, roughness = {}",
                fmt_f(c.lambda),
                kind_name(c.kind),
                c.kernel_dim,
                c.physical_modes,
                c.spurious_modes,
                c.physical_flow,
                fmt_list(&c.roughness),
            ));
        }
        report.line(format!("  raw matrix sfl = {}", block.raw_partition_flow));
        report.line(format!("  classified sfl = {}", block.classified_flow));
        report.line(format!("  block sfl = {}", block.flow));
        report.line(format!(
            "  endpoint_margins: {}",
            fmt_pair(block.endpoint_margins)
        ));
    }
    if let Some(check) = &ham.convergence {
        report.line(format!(
            "convergence check at truncation {}, grid {}:",
            fmt_f(check.truncation),
            check.grid,
        ));
        for (name, shooting, classified) in &check.block_flows {
            report.line(format!(
                "  block {name}: shooting sfl = {shooting}, classified sfl = {classified}"
            ));
        }
        report.line(format!("  raw matrix flow: {}", check.raw_total_flow));
        report.line(format!("  agrees: {}", check.agrees));
    }
    report.line(format!("verdict: {}", ham.verdict));
}

/// `selftest` subcommand report body.
pub fn render_selftest(
    report: &mut Report,
    agreement_cases: usize,
    property_cases: usize,
    max_dim: usize,
    outcome: &SelftestReport,
) {
    report.line(format!("seed: {}", outcome.seed));
    report.line(format!("agreement_cases: {agreement_cases}"));
    report.line(format!("property_cases: {property_cases}"));
    report.line(format!("max_dim: {max_dim}"));
    for line in outcome.to_string().lines() {
        report.line(line);
    }
}

/// Render eigenvalue curves as CSV: header `lambda,mu_1,...,mu_n`, one row
/// per sampled parameter, eigenvalues ascending within each row.
pub fn csv_text(rows: &[(f64, Vec<f64>)]) -> CliResult<String> {
    let n = rows
        .first()
        .map(|(_, mus)| mus.len())
        .ok_or_else(|| CliError::Numerical("no eigenvalue samples to emit".into()))?;
    let mut out = String::from("lambda");
    for k in 1..=n {
        let _ = write!(out, ",mu_{k}");
    }
    out.push('\n');
    for (lambda, mus) in rows {
        if mus.len() != n {
            return Err(CliError::Numerical(
                "eigenvalue rows have inconsistent lengths".into(),
            ));
        }
        let _ = write!(out, "{}", fmt_f(*lambda));
        for mu in mus {
            let _ = write!(out, ",{}", fmt_f(*mu));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Print the report to stdout and, when an output directory is configured,
/// write `report.txt` plus the named CSV files into it.
pub fn emit(run: &CommonRun, report: &Report, csvs: &[(String, String)]) -> CliResult<()> {
    let text = report.text();
    print!("{text}");
    if let Some(dir) = &run.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create output directory {}: {e}", dir.display())))?;
        let write = |name: &str, body: &str| -> CliResult<()> {
            let target = dir.join(name);
            std::fs::write(&target, body)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", target.display())))
        };
        write("report.txt", &text)?;
        for (name, body) in csvs {
            write(name, body)?;
        }
    }
    Ok(())
}

/// File name for a block curve, kept stable for consumers.
pub fn curve_file_name(block: &str) -> String {
    format!("curves_{block}.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_the_contract_header_and_shortest_floats() {
        let rows = vec![
            (0.0, vec![-1.5, 2.25]),
            (0.5, vec![-0.5, 3.0]),
            (1.0, vec![0.1, 0.30000000000000004]),
        ];
        let text = csv_text(&rows).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("lambda,mu_1,mu_2"));
        assert_eq!(lines.next(), Some("0,-1.5,2.25"));
        assert_eq!(lines.next(), Some("0.5,-0.5,3"));
        assert_eq!(lines.next(), Some("1,0.1,0.30000000000000004"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let rows = vec![(0.0, vec![1.0]), (1.0, vec![1.0, 2.0])];
        assert!(csv_text(&rows).is_err());
    }

    #[test]
    fn report_skips_the_timestamp_on_request() {
        let with = Report::new("selftest", true).text();
        let without = Report::new("selftest", false).text();
        assert!(with.contains("timestamp: "));
        assert!(!without.contains("timestamp: "));
        assert!(without.starts_with("# sflow report\ncommand: selftest\n"));
    }

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.0, -0.0, 1.0 / 3.0, std::f64::consts::PI, 1e-300, -2.5e17] {
            let printed = fmt_f(x);
            let back: f64 = printed.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

}
