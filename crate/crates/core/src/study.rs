//! Reference spectra, error measures and multi-level convergence studies.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_condensed, CondensedSystem};
use crate::basis::ScalarBasis;
use crate::eigensolve::{solve_condensed_nonlinear, solve_linear_surrogate, NonlinearOptions};
use crate::error::{HdgError, Result};
use crate::field::{l2_distance, l2_norm};
use crate::localsolve::{MaterialSpec, SpaceCase, SpaceConfig, TauSpec};
use crate::mesh::{build_mesh, Domain, Mesh};
use crate::recovery::{postprocess, recover_fields};

/// Finest refinement level accepted by studies and solves.
pub const MAX_LEVEL: usize = 6;

/// First L-shape eigenvalue (reference value from the literature).
pub const LSHAPE_LAMBDA_1: f64 = 9.63972384464540;

/// Third L-shape eigenvalue, `2 pi^2`.
pub const LSHAPE_LAMBDA_3: f64 = 2.0 * PI * PI;

/// Exact eigenpair data for one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMode {
    pub domain: Domain,
    /// One-based position in the ascending spectrum.
    pub index: usize,
    pub value: f64,
    pub multiplicity: usize,
    /// `(m, n)` of `sin(m x) sin(n y)` when the mode is simple and known in
    /// closed form.
    pub wavenumbers: Option<(u32, u32)>,
    /// False for modes with a corner singularity.
    pub smooth: bool,
}

impl ExactMode {
    pub fn has_eigenfunction(&self) -> bool {
        self.wavenumbers.is_some()
    }

    /// Exact eigenfunction scaled to unit `L^2` norm.
    pub fn eigenfunction(&self) -> Option<impl Fn([f64; 2]) -> f64 + Sync + Copy> {
        let (m, n) = self.wavenumbers?;
        let (m, n) = (m as f64, n as f64);
        // ||sin(mx) sin(ny)|| on (0, pi)^2 is pi / 2
        Some(move |x: [f64; 2]| (m * x[0]).sin() * (n * x[1]).sin() * 2.0 / PI)
    }
}

/// The `count` smallest eigenvalues `m^2 + n^2` of the square, with
/// multiplicity.
pub fn exact_square_spectrum(count: usize) -> Vec<ExactMode> {
    let c = count as u32;
    let mut pairs: Vec<(u32, u32, u32)> = (1..=c.max(1))
        .flat_map(|m| (1..=c.max(1)).map(move |n| (m * m + n * n, m, n)))
        .collect();
    pairs.sort();
    pairs
        .iter()
        .take(count)
        .enumerate()
        .map(|(i, &(v, m, n))| {
            let multiplicity = pairs.iter().filter(|p| p.0 == v).count();
            ExactMode {
                domain: Domain::Square,
                index: i + 1,
                value: v as f64,
                multiplicity,
                wavenumbers: (multiplicity == 1).then_some((m, n)),
                smooth: true,
            }
        })
        .collect()
}

/// The L-shape eigenvalues with reference values: modes 1 and 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LShapeValues {
    pub mode1: f64,
    pub mode3: f64,
}

pub fn exact_lshape_values() -> LShapeValues {
    LShapeValues {
        mode1: LSHAPE_LAMBDA_1,
        mode3: LSHAPE_LAMBDA_3,
    }
}

/// Reference data for mode `index` (one-based), if known.
pub fn exact_mode(domain: Domain, index: usize) -> Option<ExactMode> {
    match domain {
        Domain::Square => exact_square_spectrum(index).pop().filter(|_| index >= 1),
        Domain::LShape => {
            let v = exact_lshape_values();
            let (value, smooth) = match index {
                1 => (v.mode1, false),
                3 => (v.mode3, true),
                _ => return None,
            };
            Some(ExactMode {
                domain,
                index,
                value,
                multiplicity: 1,
                wavenumbers: None,
                smooth,
            })
        }
    }
}

/// `min_s || s u / ||u|| - u_exact ||` for a field in the orthonormal
/// basis `basis`, with the exact eigenfunction of unit norm.
pub fn eigenfunction_error(
    mesh: &Mesh,
    basis: &ScalarBasis,
    coeffs: &[DVector<f64>],
    mode: &ExactMode,
) -> Result<f64> {
    let exact = mode.eigenfunction().ok_or_else(|| {
        HdgError::Unsupported(format!(
            "mode {} of the {} domain has no closed-form simple eigenfunction",
            mode.index,
            mode.domain.name()
        ))
    })?;
    let norm = l2_norm(mesh, coeffs);
    if !(norm > 0.0) {
        return Err(HdgError::Degenerate("field has zero norm".into()));
    }
    let plus = l2_distance(mesh, basis, coeffs, 1.0 / norm, exact)?;
    let minus = l2_distance(mesh, basis, coeffs, -1.0 / norm, exact)?;
    Ok(plus.min(minus))
}

/// `log2(e_{l-1} / e_l)` for consecutive entries; undefined where either
/// error is missing or not positive.
pub fn estimate_order(errors: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(errors.len());
    for i in 0..errors.len() {
        let order = match (i.checked_sub(1).and_then(|j| errors[j]), errors[i]) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
            _ => None,
        };
        out.push(order);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = HdgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(HdgError::InvalidConfig(format!(
                "unknown output format '{other}' (expected markdown|csv|json)"
            ))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Markdown => "markdown",
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub domain: Domain,
    pub k: usize,
    pub case: SpaceCase,
    pub tau: TauSpec,
    /// First and last level, inclusive.
    pub levels: (usize, usize),
    /// One-based mode indices.
    pub modes: Vec<usize>,
    pub postprocess: bool,
    pub alpha: [[f64; 2]; 2],
    pub nonlinear: NonlinearOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Square,
            k: 1,
            case: SpaceCase::Equal,
            tau: TauSpec::Constant(1.0),
            levels: (0, 3),
            modes: vec![1, 2, 4, 6],
            postprocess: true,
            alpha: [[1.0, 0.0], [0.0, 1.0]],
            nonlinear: NonlinearOptions::default(),
        }
    }
}

impl StudyConfig {
    pub fn spaces(&self) -> Result<SpaceConfig> {
        SpaceConfig::new(self.case, self.k)
    }

    pub fn material(&self) -> Result<MaterialSpec> {
        MaterialSpec::new(self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.levels;
        if lo > hi {
            return Err(HdgError::InvalidConfig(format!(
                "level range {lo}:{hi} is empty"
            )));
        }
        if hi > MAX_LEVEL {
            return Err(HdgError::SizeGuard {
                size: hi,
                limit: MAX_LEVEL,
            });
        }
        if self.modes.is_empty() || self.modes.contains(&0) {
            return Err(HdgError::InvalidConfig(
                "modes must be a nonempty list of one-based indices".into(),
            ));
        }
        if !(self.nonlinear.rel_tol > 0.0) || self.nonlinear.max_iter == 0 {
            return Err(HdgError::InvalidConfig(
                "nonlinear tolerance and iteration budget must be positive".into(),
            ));
        }
        self.tau.validate()?;
        self.spaces()?.validate_tau(&self.tau)?;
        self.material()?;
        Ok(())
    }
}

/// Results for one mode on one level. Errors are absolute.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeCell {
    pub level: usize,
    pub lambda: Option<f64>,
    pub lambda_surrogate: Option<f64>,
    pub lambda_star: Option<f64>,
    pub lambda_error: Option<f64>,
    pub lambda_star_error: Option<f64>,
    pub u_error: Option<f64>,
    pub u_star_error: Option<f64>,
    /// `|lambda_h - lambda_surrogate|`.
    pub gap: Option<f64>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub failure: Option<String>,
}

/// Observed orders per level, aligned with the cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesOrders {
    pub lambda: Vec<Option<f64>>,
    pub lambda_star: Vec<Option<f64>>,
    pub u: Vec<Option<f64>>,
    pub u_star: Vec<Option<f64>>,
    pub gap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSeries {
    pub mode: usize,
    pub exact: Option<ExactMode>,
    pub cells: Vec<ModeCell>,
    pub orders: SeriesOrders,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub level: usize,
    /// Largest element diameter.
    pub h: f64,
    pub elements: usize,
    pub n_dofs: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: StudyConfig,
    pub levels: Vec<LevelInfo>,
    pub modes: Vec<ModeSeries>,
}

impl ConvergenceReport {
    /// Cell of `mode` on `level`, if the study covered it.
    pub fn cell(&self, mode: usize, level: usize) -> Option<&ModeCell> {
        self.modes
            .iter()
            .find(|s| s.mode == mode)?
            .cells
            .iter()
            .find(|c| c.level == level)
    }

    /// Order of a quantity for `mode` on `level`.
    pub fn order(&self, mode: usize, level: usize, pick: impl Fn(&SeriesOrders) -> &Vec<Option<f64>>) -> Option<f64> {
        let s = self.modes.iter().find(|s| s.mode == mode)?;
        let i = s.cells.iter().position(|c| c.level == level)?;
        pick(&s.orders)[i]
    }
}

fn abs_err(x: Option<f64>, exact: Option<f64>) -> Option<f64> {
    Some((x? - exact?).abs())
}

/// Fills every field of `cell` that can be computed for one mode.
fn solve_cell(
    sys: &CondensedSystem,
    seed: &crate::eigensolve::SurrogatePair,
    exact: Option<&ExactMode>,
    config: &StudyConfig,
    cell: &mut ModeCell,
) -> Result<()> {
    cell.lambda_surrogate = Some(seed.lambda);
    let pair = solve_condensed_nonlinear(sys, seed, config.nonlinear)?;
    cell.lambda = Some(pair.lambda);
    cell.iterations = Some(pair.iterations);
    cell.residual = Some(pair.residual);
    cell.gap = Some((pair.lambda - seed.lambda).abs());
    let exact_value = exact.map(|e| e.value);
    cell.lambda_error = abs_err(cell.lambda, exact_value);
    let with_function = exact.filter(|e| e.has_eigenfunction());
    if with_function.is_none() && !config.postprocess {
        return Ok(());
    }
    let fields = recover_fields(sys, &pair)?;
    if let Some(e) = with_function {
        cell.u_error = Some(eigenfunction_error(&sys.mesh, &sys.tables.w_basis, &fields.u, e)?);
    }
    if config.postprocess {
        let pp = postprocess(sys, &fields)?;
        cell.lambda_star = pp.lambda_star;
        cell.lambda_star_error = abs_err(pp.lambda_star, exact_value);
        if let Some(e) = with_function {
            let basis = ScalarBasis::new(sys.spaces.k + 1)?;
            cell.u_star_error = Some(eigenfunction_error(&sys.mesh, &basis, &pp.u_star, e)?);
        }
    }
    Ok(())
}

/// Runs the configured study level by level. Failures of individual cells
/// are recorded in the report; only invalid configurations are errors.
pub fn run_convergence_study(config: &StudyConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let spaces = config.spaces()?;
    let mat = config.material()?;
    let (lo, hi) = config.levels;
    let max_mode = *config.modes.iter().max().expect("validated nonempty");
    let exact: Vec<Option<ExactMode>> =
        config.modes.iter().map(|&m| exact_mode(config.domain, m)).collect();
    let mut series: Vec<ModeSeries> = config
        .modes
        .iter()
        .zip(&exact)
        .map(|(&mode, e)| ModeSeries {
            mode,
            exact: *e,
            cells: Vec::new(),
            orders: SeriesOrders::default(),
        })
        .collect();
    let mut levels = Vec::new();
    let mut mesh = build_mesh(config.domain, lo);

    for level in lo..=hi {
        if level > lo {
            mesh = mesh.refine();
        }
        let start = Instant::now();
        let mesh_arc = Arc::new(mesh.clone());
        let mut cells: Vec<ModeCell> = config
            .modes
            .iter()
            .map(|_| ModeCell {
                level,
                ..ModeCell::default()
            })
            .collect();
        let mut n_dofs = 0;
        let setup = assemble_condensed(mesh_arc, spaces, config.tau, mat).and_then(|sys| {
            let seeds = solve_linear_surrogate(&sys, max_mode)?;
            Ok((sys, seeds))
        });
        match setup {
            Ok((sys, seeds)) => {
                n_dofs = sys.n_dofs();
                for ((cell, &mode), e) in cells.iter_mut().zip(&config.modes).zip(&exact) {
                    if let Err(err) = solve_cell(&sys, &seeds[mode - 1], e.as_ref(), config, cell) {
                        cell.failure = Some(err.to_string());
                    }
                }
            }
            Err(err) => {
                for cell in &mut cells {
                    cell.failure = Some(err.to_string());
                }
            }
        }
        for (s, c) in series.iter_mut().zip(cells) {
            s.cells.push(c);
        }
        levels.push(LevelInfo {
            level,
            h: mesh.h,
            elements: mesh.num_elements(),
            n_dofs,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    for s in &mut series {
        let col = |f: fn(&ModeCell) -> Option<f64>| -> Vec<Option<f64>> {
            estimate_order(&s.cells.iter().map(f).collect::<Vec<_>>())
        };
        s.orders = SeriesOrders {
            lambda: col(|c| c.lambda_error),
            lambda_star: col(|c| c.lambda_star_error),
            u: col(|c| c.u_error),
            u_star: col(|c| c.u_star_error),
            gap: col(|c| c.gap),
        };
    }
    Ok(ConvergenceReport {
        config: config.clone(),
        levels,
        modes: series,
    })
}

/// Eigenvalues of the lowest modes on one mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSolution {
    pub domain: Domain,
    pub level: usize,
    pub k: usize,
    pub case: SpaceCase,
    pub tau: TauSpec,
    pub n_dofs: usize,
    pub modes: Vec<ModeSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSolution {
    /// One-based.
    pub mode: usize,
    pub lambda: f64,
    pub lambda_surrogate: f64,
    pub lambda_star: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Settings of a single-mesh solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub domain: Domain,
    pub level: usize,
    pub k: usize,
    pub case: SpaceCase,
    pub tau: TauSpec,
    /// Number of lowest modes.
    pub count: usize,
    pub postprocess: bool,
    pub alpha: [[f64; 2]; 2],
    pub nonlinear: NonlinearOptions,
}

impl Default for SolveConfig {
    fn default() -> Self {
        let s = StudyConfig::default();
        Self {
            domain: s.domain,
            level: 0,
            k: s.k,
            case: s.case,
            tau: s.tau,
            count: 6,
            postprocess: s.postprocess,
            alpha: s.alpha,
            nonlinear: s.nonlinear,
        }
    }
}

/// Solves for the lowest modes on one level.
pub fn solve_eigen(config: &SolveConfig) -> Result<EigenSolution> {
    if config.level > MAX_LEVEL {
        return Err(HdgError::SizeGuard {
            size: config.level,
            limit: MAX_LEVEL,
        });
    }
    if config.count == 0 {
        return Err(HdgError::InvalidConfig("at least one mode is required".into()));
    }
    let spaces = SpaceConfig::new(config.case, config.k)?;
    let mat = MaterialSpec::new(config.alpha)?;
    config.tau.validate()?;
    spaces.validate_tau(&config.tau)?;
    let mesh = Arc::new(build_mesh(config.domain, config.level));
    let sys = assemble_condensed(mesh, spaces, config.tau, mat)?;
    let seeds = solve_linear_surrogate(&sys, config.count)?;
    let modes = seeds
        .iter()
        .map(|seed| {
            let pair = solve_condensed_nonlinear(&sys, seed, config.nonlinear)?;
            let lambda_star = if config.postprocess {
                let fields = recover_fields(&sys, &pair)?;
                postprocess(&sys, &fields)?.lambda_star
            } else {
                None
            };
            Ok(ModeSolution {
                mode: seed.index + 1,
                lambda: pair.lambda,
                lambda_surrogate: seed.lambda,
                lambda_star,
                iterations: pair.iterations,
                residual: pair.residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EigenSolution {
        domain: config.domain,
        level: config.level,
        k: spaces.k,
        case: spaces.case,
        tau: config.tau,
        n_dofs: sys.n_dofs(),
        modes,
    })
}

fn sci(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.3e}"))
}

fn ord(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.2}"))
}

fn csv_num<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

type Column = (&'static str, fn(&ModeCell) -> Option<f64>, fn(&SeriesOrders) -> &Vec<Option<f64>>);

const QUANTITIES: [Column; 5] = [
    ("lambda_h", |c| c.lambda_error, |o| &o.lambda),
    ("lambda_star", |c| c.lambda_star_error, |o| &o.lambda_star),
    ("u_h", |c| c.u_error, |o| &o.u),
    ("u_star", |c| c.u_star_error, |o| &o.u_star),
    ("gap", |c| c.gap, |o| &o.gap),
];

fn emit_markdown(r: &ConvergenceReport) -> String {
    let c = &r.config;
    let mut out = format!(
        "# {} k={} case={} tau={}\n",
        c.domain.name(),
        c.k,
        c.case,
        c.tau
    );
    let titles = [
        "|lambda - lambda_h|",
        "|lambda - lambda*|",
        "||u - u_h||",
        "||u - u*||",
        "|lambda_h - lambda~_h|",
    ];
    for ((_, value, order), title) in QUANTITIES.iter().zip(titles) {
        let present = r.modes.iter().any(|s| s.cells.iter().any(|c| value(c).is_some()));
        if !present && !r.modes.is_empty() {
            continue;
        }
        let _ = write!(out, "\n## {title}\n\n| level | h |");
        for s in &r.modes {
            let _ = write!(out, " mode {} error | order |", s.mode);
        }
        out.push_str("\n|---|---|");
        for _ in &r.modes {
            out.push_str("---|---|");
        }
        out.push('\n');
        for (i, info) in r.levels.iter().enumerate() {
            let _ = write!(out, "| {} | {:.3e} |", info.level, info.h);
            for s in &r.modes {
                let cell = &s.cells[i];
                let v = if cell.failure.is_some() && value(cell).is_none() {
                    "fail".to_string()
                } else {
                    sci(value(cell))
                };
                let _ = write!(out, " {v} | {} |", ord(order(&s.orders)[i]));
            }
            out.push('\n');
        }
    }
    let failures: Vec<String> = r
        .modes
        .iter()
        .flat_map(|s| {
            s.cells.iter().filter_map(move |c| {
                c.failure
                    .as_ref()
                    .map(|f| format!("- mode {} level {}: {f}", s.mode, c.level))
            })
        })
        .collect();
    if !failures.is_empty() {
        out.push_str("\n## failures\n\n");
        out.push_str(&failures.join("\n"));
        out.push('\n');
    }
    out
}

fn emit_csv(r: &ConvergenceReport) -> String {
    let mut header = vec!["k".to_string(), "level".into(), "h".into(), "n_dofs".into()];
    for s in &r.modes {
        let m = s.mode;
        header.push(format!("m{m}_lambda"));
        header.push(format!("m{m}_lambda_surrogate"));
        header.push(format!("m{m}_lambda_star"));
        for (name, _, _) in QUANTITIES {
            header.push(format!("m{m}_{name}_error"));
            header.push(format!("m{m}_{name}_order"));
        }
        header.push(format!("m{m}_iterations"));
        header.push(format!("m{m}_failure"));
    }
    let mut out = header.join(",");
    out.push('\n');
    for (i, info) in r.levels.iter().enumerate() {
        let mut row = vec![
            r.config.k.to_string(),
            info.level.to_string(),
            info.h.to_string(),
            info.n_dofs.to_string(),
        ];
        for s in &r.modes {
            let c = &s.cells[i];
            row.push(csv_num(c.lambda));
            row.push(csv_num(c.lambda_surrogate));
            row.push(csv_num(c.lambda_star));
            for (_, value, order) in QUANTITIES {
                row.push(csv_num(value(c)));
                row.push(csv_num(order(&s.orders)[i]));
            }
            row.push(csv_num(c.iterations));
            row.push(
                c.failure
                    .as_ref()
                    .map_or_else(String::new, |f| format!("\"{}\"", f.replace('"', "'"))),
            );
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Renders a report. JSON is the full serialised report; Markdown and CSV
/// omit timings so that repeated runs render identically.
pub fn emit_table(report: &ConvergenceReport, format: OutputFormat) -> String {
    match format {
        OutputFormat::Markdown => emit_markdown(report),
        OutputFormat::Csv => emit_csv(report),
        OutputFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serialises") + "\n"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_spectrum_with_multiplicity() {
        let s = exact_square_spectrum(11);
        let values: Vec<f64> = s.iter().map(|m| m.value).collect();
        assert_eq!(&values[..6], &[2.0, 5.0, 5.0, 8.0, 10.0, 10.0]);
        assert_eq!(values[10], 18.0);
        assert_eq!(s[0].wavenumbers, Some((1, 1)));
        assert!(s[1].wavenumbers.is_none() && s[1].multiplicity == 2);
        assert!(exact_mode(Domain::Square, 0).is_none());
        assert_eq!(exact_mode(Domain::LShape, 3).unwrap().value, 2.0 * PI * PI);
        assert!(!exact_mode(Domain::LShape, 1).unwrap().smooth);
        assert!(exact_mode(Domain::LShape, 2).is_none());
    }

    #[test]
    fn order_estimates() {
        let o = estimate_order(&[Some(4e-2), Some(1e-2), Some(1e-2), None, Some(1.0)]);
        assert_eq!(o[0], None);
        assert!((o[1].unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(o[2], Some(0.0));
        assert_eq!(o[3], None);
        assert_eq!(o[4], None);
        let o = estimate_order(&[Some(5.97e-3), Some(8.44e-4)]);
        assert!((o[1].unwrap() - 2.82).abs() < 5e-3);
    }

    #[test]
    fn config_validation() {
        assert!(StudyConfig::default().validate().is_ok());
        let bad = StudyConfig { levels: (2, 1), ..StudyConfig::default() };
        assert!(matches!(bad.validate(), Err(HdgError::InvalidConfig(_))));
        let big = StudyConfig { levels: (0, MAX_LEVEL + 1), ..StudyConfig::default() };
        assert!(matches!(big.validate(), Err(HdgError::SizeGuard { .. })));
        let zero = StudyConfig { k: 0, tau: TauSpec::Zero, ..StudyConfig::default() };
        assert!(zero.validate().unwrap_err().is_config_error());
    }

    #[test]
    fn empty_report_renders_headers_only() {
        let r = ConvergenceReport {
            config: StudyConfig::default(),
            levels: Vec::new(),
            modes: Vec::new(),
        };
        assert_eq!(emit_table(&r, OutputFormat::Csv), "k,level,h,n_dofs\n");
        let md = emit_table(&r, OutputFormat::Markdown);
        assert!(md.lines().all(|l| !l.starts_with("| 0")));
    }

    #[test]
    fn small_study_renders_consistently() {
        let cfg = StudyConfig {
            levels: (0, 1),
            modes: vec![1, 2],
            ..StudyConfig::default()
        };
        let r = run_convergence_study(&cfg).unwrap();
        let c = r.cell(1, 1).unwrap();
        assert!(c.failure.is_none());
        assert!((c.lambda.unwrap() - 2.0).abs() < 0.01);
        assert!(c.u_error.is_some() && r.cell(2, 1).unwrap().u_error.is_none());
        assert!(r.order(1, 1, |o| &o.lambda).unwrap() > 1.5);

        let json = emit_table(&r, OutputFormat::Json);
        let back: ConvergenceReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);

        let md = emit_table(&r, OutputFormat::Markdown);
        let header = md.lines().find(|l| l.starts_with("| level")).unwrap();
        assert_eq!(header.matches("error |").count(), 2);
        assert_eq!(header.matches("order |").count(), 2);
        assert_eq!(md, emit_markdown(&run_convergence_study(&cfg).unwrap()));

        let csv = emit_table(&r, OutputFormat::Csv);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 3);
        let width = rows[0].split(',').count();
        assert!(rows.iter().all(|l| l.split(',').count() == width));
    }

    #[test]
    fn solve_reports_requested_modes() {
        let sol = solve_eigen(&SolveConfig {
            level: 1,
            count: 4,
            ..SolveConfig::default()
        })
        .unwrap();
        assert_eq!(sol.modes.len(), 4);
        for (m, e) in sol.modes.iter().zip([2.0, 5.0, 5.0, 8.0]) {
            assert!((m.lambda - e).abs() < 0.05 * e);
            assert!(m.lambda_star.is_some());
        }
    }
}
