use membrane_tree::classes::{class_kernels, finer_bound_check, ClassKernels, MAX_CLASS_DEPTH};
use membrane_tree::extremes::extremes_report;
use membrane_tree::greens::{greens_origin, greens_table};
use membrane_tree::linalg::DenseMatrix;
use membrane_tree::operators::{
    en_crude_bound_shape, error_matrix, finite_covariance, gbar_matrix, BoundConstants,
};
use membrane_tree::sampler::sample_law;
use membrane_tree::{build_tree, RegularTree, TreeParams};
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::{write_json, write_matrix, Artifacts, CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GreensEntry {
    pub d: u32,
    pub g_statement: f64,
    pub g_proof: f64,
    pub g_series: f64,
    pub abs_proof_minus_series: f64,
}

pub fn greens_entries(m: u32, max_d: u32) -> CliResult<Vec<GreensEntry>> {
    Ok(greens_table(m, max_d)?
        .into_iter()
        .map(|r| GreensEntry {
            d: r.d,
            g_statement: r.statement,
            g_proof: r.proof,
            g_series: r.series,
            abs_proof_minus_series: r.discrepancy(),
        })
        .collect())
}

pub fn greens(config: &RunConfig) -> CliResult<Artifacts> {
    let rows = greens_entries(config.m, config.max_d)?;
    let stem = format!("greens_m{}", config.m);
    let path = if config.format == Format::Json {
        let path = config.out.join(format!("{stem}.json"));
        write_json(&path, &rows)?;
        path
    } else {
        let table = DenseMatrix::from_fn(rows.len(), 5, |i, j| {
            let r = &rows[i];
            [r.d as f64, r.g_statement, r.g_proof, r.g_series, r.abs_proof_minus_series][j]
        });
        let header: Vec<String> = ["d", "g_statement", "g_proof", "g_series", "abs_proof_minus_series"]
            .map(String::from)
            .to_vec();
        write_matrix(&config.out, &stem, &table, Some(&header), config.format)?
    };
    Ok(Artifacts { files: vec![path] })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RootEntries {
    pub g_n: f64,
    pub gbar: f64,
    pub e_n: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Residuals {
    /// `‖Δ²_Λ G_n - I‖_max`, when matrices are built.
    pub g_n: Option<f64>,
    /// `‖(I-Q)² Ḡ_n - I‖_max`, when matrices are built.
    pub gbar: Option<f64>,
    /// Largest relative residual of the pair-class solves.
    pub quotient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinerBoundStatus {
    pub status: String,
    pub pairs: Option<u128>,
    pub violations: Option<u128>,
    pub worst_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceSummary {
    pub m: u32,
    pub n: u32,
    pub vertex_count: u128,
    pub g00: f64,
    pub root: RootEntries,
    pub residuals: Residuals,
    pub variance_floor: f64,
    pub variance_max: f64,
    pub max_abs_e_n: f64,
    /// `max E_n² / (dx² dy² (m-1)^{-max(dx,dy)})` over all pairs.
    pub crude_bound_fit: f64,
    pub bound_constants: BoundConstants,
    pub bound_ratio: f64,
    /// `1 - C_1 C_2 / ((m-1)(1 - C_1/m))`, in the large-degree regime.
    pub explicit_variance_floor: Option<f64>,
    pub finer_bound: FinerBoundStatus,
    pub finer_bound_violations: Option<u128>,
    pub matrices_written: bool,
}

pub(crate) const SKIPPED_REGIME: &str = "skipped: regime";
pub(crate) const SKIPPED_DISABLED: &str = "skipped: disabled";

pub fn covariance_summary(
    kernels: &ClassKernels,
    large_m_assertions: bool,
    dense_residuals: Option<(f64, f64)>,
) -> CliResult<CovarianceSummary> {
    let p = kernels.params;
    let root = kernels
        .get(0, 0, 0)
        .ok_or_else(|| CliError::Compute(membrane_tree::Error::Internal("root class missing".into())))?;
    let diag = kernels.diagonal();
    let mut crude: f64 = 0.0;
    for c in &kernels.classes {
        let (dx, dy) = c.boundary_distances(p.n);
        crude = crude.max(c.e * c.e / en_crude_bound_shape(p.m, dx, dy)?);
    }
    let constants = BoundConstants::new(p.m)?;
    let in_regime = constants.check_regime().is_ok();
    let finer = if !large_m_assertions {
        FinerBoundStatus {
            status: SKIPPED_DISABLED.into(),
            pairs: None,
            violations: None,
            worst_ratio: None,
        }
    } else if !in_regime {
        FinerBoundStatus {
            status: SKIPPED_REGIME.into(),
            pairs: None,
            violations: None,
            worst_ratio: None,
        }
    } else {
        let check = finer_bound_check(kernels, 0)?;
        FinerBoundStatus {
            status: "checked".into(),
            pairs: Some(check.pairs),
            violations: Some(check.violations),
            worst_ratio: Some(check.worst_ratio),
        }
    };
    Ok(CovarianceSummary {
        m: p.m,
        n: p.n,
        vertex_count: p.vertex_count_u128().unwrap_or(u128::MAX),
        g00: greens_origin(p.m)?,
        root: RootEntries {
            g_n: root.g,
            gbar: root.gbar,
            e_n: root.e,
        },
        residuals: Residuals {
            g_n: dense_residuals.map(|r| r.0),
            gbar: dense_residuals.map(|r| r.1),
            quotient: kernels.residual,
        },
        variance_floor: diag.iter().copied().fold(f64::INFINITY, f64::min),
        variance_max: diag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_abs_e_n: kernels.classes.iter().map(|c| c.e.abs()).fold(0.0, f64::max),
        crude_bound_fit: crude,
        bound_constants: constants,
        bound_ratio: constants.ratio(),
        explicit_variance_floor: if in_regime {
            Some(constants.explicit_variance_floor()?)
        } else {
            None
        },
        finer_bound_violations: finer.violations,
        finer_bound: finer,
        matrices_written: dense_residuals.is_some(),
    })
}

fn dense_tree(params: TreeParams, cap: usize) -> CliResult<RegularTree> {
    match params.vertex_count_u128() {
        Some(n) if n <= cap as u128 => Ok(build_tree(params)?),
        _ => Err(CliError::Cap(format!(
            "N = {} exceeds the dense-matrix cap of {cap}",
            params.vertex_count_f64()
        ))),
    }
}

pub fn covariance(config: &RunConfig) -> CliResult<Artifacts> {
    let params = TreeParams::new(config.m, config.n)?;
    if config.n > MAX_CLASS_DEPTH {
        return Err(CliError::Invalid(format!(
            "covariance summary handles n <= {MAX_CLASS_DEPTH}"
        )));
    }
    let mut files = Vec::new();
    let residuals = if config.matrices {
        let tree = dense_tree(params, config.cap_n)?;
        let gn = finite_covariance(&tree, config.cap_n)?;
        let gbar = gbar_matrix(&tree, config.cap_n)?;
        let en = error_matrix(&gn, &gbar)?;
        for (stem, c) in [("g_n", &gn), ("gbar_n", &gbar), ("e_n", &en)] {
            files.push(write_matrix(&config.out, stem, &c.matrix, None, config.format)?);
        }
        Some((gn.residual.unwrap_or(f64::NAN), gbar.residual.unwrap_or(f64::NAN)))
    } else {
        None
    };
    let kernels = class_kernels(params)?;
    let summary = covariance_summary(&kernels, config.large_m_assertions, residuals)?;
    let path = config.out.join("covariance_summary.json");
    write_json(&path, &summary)?;
    files.push(path);
    Ok(Artifacts { files })
}

pub fn extremes(config: &RunConfig) -> CliResult<Artifacts> {
    let params = TreeParams::new(config.m, config.n)?;
    let tree = dense_tree(params, config.cap_n)?;
    let batch = sample_law(&tree, config.law, config.samples, config.seed, config.cap_n)?;
    let (report, maxima) = extremes_report(&batch, &config.theta)?;
    let json = config.out.join("extremes.json");
    write_json(&json, &report)?;
    let column = DenseMatrix::from_row_major(maxima.len(), 1, maxima)?;
    let csv = write_matrix(
        &config.out,
        "rescaled_maxima",
        &column,
        Some(&["rescaled_max".to_string()]),
        config.format,
    )?;
    Ok(Artifacts {
        files: vec![json, csv],
    })
}
