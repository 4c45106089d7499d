//! Subcommand implementations. Each returns the files it wrote and a JSON
//! summary for the manifest.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde_json::{json, Value};

use deconv_core::analysis::{
    empirical_ise, oracle_bandwidth_with, rate_experiment, OracleChoice, RateExperiment,
};
use deconv_core::density::{deconv_kde, deconv_kde_batched, default_grid, kde, ModelTag};
use deconv_core::error_models::{estimate_abs_phi_u, ErrorSpec};
use deconv_core::io;
use deconv_core::min_contrast::{compare_on_probes, default_probes, pce_estimate, PceConfig};
use deconv_core::quadrature::{linspace, logspace};
use deconv_core::regression::{
    deconv_local_polynomial, local_linear_closed_form, local_polynomial, EvalPath,
    RegressionConfig,
};
use deconv_core::simulation::{generate, generate_replicated, Scenario};
use deconv_core::{
    ContaminatedSample, CurveEstimate, DeconvKernelPlan, ErrorModel, KernelSpec, TrueDensity,
};

use crate::config::{config_error, read_path, with_key, Bandwidth, RunConfig};

pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: Value,
    /// Set when the run finished but a verified property failed.
    pub failed_check: Option<String>,
}

/// Observed data plus whatever is known about how it was generated.
struct Input {
    sample: ContaminatedSample,
    truth: Option<TrueDensity>,
    error: Option<ErrorModel>,
    seed: Option<u64>,
}

fn load_input(cfg: &RunConfig, model: ModelTag) -> Result<Input> {
    if let Some(path) = &cfg.data.path {
        read_path(path, "data.path")?;
        let sample = with_key(io::read_sample_csv(path, model), "data.path")?;
        let error = match &cfg.data.error {
            Some(e) => {
                let spec: ErrorSpec = with_key(e.parse(), "data.error")?;
                Some(with_key(spec.resolve(None), "data.error")?)
            }
            None => None,
        };
        return Ok(Input {
            sample,
            truth: None,
            error,
            seed: None,
        });
    }
    let Some(scn_cfg) = &cfg.scenario else {
        return Err(config_error(
            "missing input: set data.path, `preset`, or a [scenario] table",
        ));
    };
    let scn = with_key(scn_cfg.resolve(), "scenario")?;
    let sample = generate(&scn)?;
    Ok(Input {
        sample,
        truth: Some(scn.truth),
        error: Some(scn.error),
        seed: Some(scn.seed),
    })
}

fn kernel_of(text: &str, key: &str) -> Result<KernelSpec> {
    with_key(text.parse::<KernelSpec>(), key)
}

fn oracle_grids(cfg: &RunConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let o = &cfg.oracle;
    if !(o.h_min > 0.0 && o.h_max > o.h_min) || o.ise_hi <= o.ise_lo || o.ise_points < 2 {
        return Err(config_error("oracle: need 0 < h_min < h_max and ise_lo < ise_hi"));
    }
    Ok((
        logspace(o.h_min, o.h_max, o.h_points),
        linspace(o.ise_lo, o.ise_hi, o.ise_points),
    ))
}

fn resolve_bandwidth(
    cfg: &RunConfig,
    truth: Option<&TrueDensity>,
    fit: impl Fn(f64, &[f64]) -> deconv_core::Result<CurveEstimate>,
) -> Result<(f64, Option<OracleChoice>)> {
    match &cfg.estimate.h {
        Bandwidth::Value(h) if *h > 0.0 && h.is_finite() => Ok((*h, None)),
        Bandwidth::Value(h) => Err(config_error(format!("estimate.h must be positive, got {h}"))),
        Bandwidth::Rule(r) if r == "oracle" => {
            let truth = truth.ok_or_else(|| {
                config_error("estimate.h = \"oracle\" needs a simulated scenario with a known truth")
            })?;
            let (h_grid, ise_grid) = oracle_grids(cfg)?;
            let choice = with_key(
                oracle_bandwidth_with(truth, &h_grid, |h| fit(h, &ise_grid)),
                "oracle",
            )?;
            Ok((choice.h, Some(choice)))
        }
        Bandwidth::Rule(r) => Err(config_error(format!(
            "estimate.h must be a number or \"oracle\", got {r:?}"
        ))),
    }
}

fn output_grid(cfg: &RunConfig, w: &[f64], h: f64) -> Result<Vec<f64>> {
    let g = &cfg.grid;
    if g.points < 2 {
        return Err(config_error("grid.points must be at least 2"));
    }
    match (g.lo, g.hi) {
        (Some(lo), Some(hi)) if lo < hi => Ok(linspace(lo, hi, g.points)),
        (None, None) => {
            let d = default_grid(w, h)?;
            Ok(linspace(d[0], d[d.len() - 1], g.points))
        }
        _ => Err(config_error("grid.lo and grid.hi must be given together with lo < hi")),
    }
}

fn need_error(input: &Input, what: &str) -> Result<ErrorModel> {
    input
        .error
        .ok_or_else(|| config_error(format!("{what} needs an error model: set data.error")))
}

fn eval_path(cfg: &RunConfig) -> Result<EvalPath> {
    match cfg.estimate.path.as_str() {
        "direct" => Ok(EvalPath::Direct),
        "batched" => Ok(EvalPath::Batched),
        other => Err(config_error(format!(
            "estimate.path must be direct or batched, got {other:?}"
        ))),
    }
}

fn oracle_json(choice: &Option<OracleChoice>) -> Value {
    match choice {
        Some(c) => json!({ "h": c.h, "ise": c.ise, "index": c.index }),
        None => Value::Null,
    }
}

pub fn estimate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let kind = cfg.estimate.estimator.as_str();
    let model = match kind {
        "kde" | "deconv-kde" | "pce" => ModelTag::Classical,
        "local-constant" | "local-linear" | "deconv-local-constant" | "deconv-local-linear" => {
            ModelTag::Classical
        }
        other => {
            return Err(config_error(format!(
                "estimate.estimator: unknown estimator {other:?}"
            )))
        }
    };
    let input = load_input(cfg, model)?;
    let kernel = kernel_of(&cfg.estimate.kernel, "estimate.kernel")?;
    let nodes = cfg.quad.nodes;
    let path = eval_path(cfg)?;
    let w = input.sample.w().to_vec();
    let mut artifacts = Vec::new();
    let curve_path = out.join("curve.csv");

    let (curve, choice) = match kind {
        "kde" => {
            let (h, choice) = resolve_bandwidth(cfg, input.truth.as_ref(), |h, g| kde(&w, kernel, h, g))?;
            (kde(&w, kernel, h, &output_grid(cfg, &w, h)?)?, choice)
        }
        "deconv-kde" => {
            let error = need_error(&input, "deconv-kde")?;
            let plan_for = |h| DeconvKernelPlan::with_order(kernel, error, h, nodes, 0);
            let (h, choice) = resolve_bandwidth(cfg, input.truth.as_ref(), |h, g| {
                deconv_kde_batched(&input.sample, &plan_for(h)?, g)
            })?;
            let plan = plan_for(h)?;
            let grid = output_grid(cfg, &w, h)?;
            let est = match path {
                EvalPath::Direct => deconv_kde(&input.sample, &plan, &grid)?,
                EvalPath::Batched => deconv_kde_batched(&input.sample, &plan, &grid)?,
            };
            (est, choice)
        }
        "pce" => {
            let error = need_error(&input, "pce")?;
            let sinc = KernelSpec::sinc();
            let (h, choice) = resolve_bandwidth(cfg, input.truth.as_ref(), |h, g| {
                let plan = DeconvKernelPlan::with_order(sinc, error, h, nodes, 0)?;
                deconv_kde_batched(&input.sample, &plan, g)
            })?;
            let pce_cfg = pce_config(cfg, h)?;
            let est = pce_estimate(&input.sample, error, &pce_cfg, &output_grid(cfg, &w, h)?)?;
            let coef = out.join("coefficients.csv");
            io::write_coefficients_csv(&coef, &est)?;
            artifacts.push(coef);
            (est.curve, choice)
        }
        _ => {
            let y = input
                .sample
                .y()
                .ok_or_else(|| config_error(format!("{kind} needs responses: a y column or a regression scenario")))?
                .to_vec();
            let h = match &cfg.estimate.h {
                Bandwidth::Value(h) if *h > 0.0 => *h,
                _ => {
                    return Err(config_error(
                        "estimate.h must be a positive number for regression estimators",
                    ))
                }
            };
            let p = match kind {
                "local-constant" | "deconv-local-constant" => 0,
                _ => cfg.estimate.p.unwrap_or(1),
            };
            let rcfg = RegressionConfig {
                p,
                kernel,
                h,
                ridge: cfg.estimate.ridge,
                path,
            };
            let grid = output_grid(cfg, &w, h)?;
            let est = match kind {
                "local-constant" | "local-linear" if p == 1 => {
                    local_linear_closed_form(&w, &y, &rcfg, &grid)?
                }
                "local-constant" | "local-linear" => local_polynomial(&w, &y, &rcfg, &grid)?,
                _ => {
                    let error = need_error(&input, kind)?;
                    deconv_local_polynomial(&input.sample, &rcfg, error, &grid)?
                }
            };
            (est, None)
        }
    };
    let mut curve = curve;
    curve.meta.seed = input.seed;
    io::write_curve(&curve_path, &curve)?;
    artifacts.push(curve_path.clone());
    artifacts.push(curve_path.with_extension("json"));
    let ise = match &input.truth {
        Some(t) if matches!(kind, "kde" | "deconv-kde" | "pce") => Some(empirical_ise(&curve, t)?),
        _ => None,
    };
    let flagged = curve
        .flags()
        .map(|f| f.iter().filter(|f| **f != deconv_core::PointFlag::Ok).count())
        .unwrap_or(0);
    Ok(Outcome {
        artifacts,
        summary: json!({
            "estimator": kind,
            "h": curve.meta.h,
            "oracle": oracle_json(&choice),
            "grid_points": curve.grid().len(),
            "ise": ise,
            "flagged_points": flagged,
        }),
        failed_check: None,
    })
}

fn pce_config(cfg: &RunConfig, h: f64) -> Result<PceConfig> {
    let ell = cfg.pce.ell.unwrap_or(1.0 / h);
    let mut pc = with_key(PceConfig::new(cfg.pce.k0, ell), "pce")?;
    pc.n_quad = cfg.quad.nodes;
    Ok(pc)
}

pub fn compare_pce(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let input = load_input(cfg, ModelTag::Classical)?;
    let error = need_error(&input, "compare-pce")?;
    let sinc = KernelSpec::sinc();
    let nodes = cfg.quad.nodes;
    let (h, choice) = match cfg.pce.ell {
        Some(ell) if ell > 0.0 => (1.0 / ell, None),
        Some(ell) => return Err(config_error(format!("pce.ell must be positive, got {ell}"))),
        None => resolve_bandwidth(cfg, input.truth.as_ref(), |h, g| {
            let plan = DeconvKernelPlan::with_order(sinc, error, h, nodes, 0)?;
            deconv_kde_batched(&input.sample, &plan, g)
        })?,
    };
    let pce_cfg = pce_config(cfg, h)?;
    let probes = default_probes(pce_cfg.k0, cfg.pce.extra_probes);
    let cmp = compare_on_probes(&input.sample, error, &pce_cfg, &probes)?;
    let files = [
        ("pce_curve.csv", &cmp.pce.curve),
        ("decon_curve.csv", &cmp.decon),
    ];
    let mut artifacts = Vec::new();
    for (name, curve) in files {
        let p = out.join(name);
        io::write_curve(&p, curve)?;
        artifacts.push(p.clone());
        artifacts.push(p.with_extension("json"));
    }
    let coef = out.join("coefficients.csv");
    io::write_coefficients_csv(&coef, &cmp.pce)?;
    artifacts.push(coef);
    let report_path = out.join("theorem.json");
    io::write_json(&report_path, &cmp.report)?;
    artifacts.push(report_path);
    let failed_check = (!cmp.report.pass).then(|| {
        format!(
            "estimators disagree on the grid: inside {:e}, outside {:e}",
            cmp.report.inside_max_diff, cmp.report.outside_max_abs
        )
    });
    Ok(Outcome {
        artifacts,
        summary: json!({
            "h": h,
            "ell": pce_cfg.ell,
            "k0": pce_cfg.k0,
            "oracle": oracle_json(&choice),
            "report": cmp.report,
        }),
        failed_check,
    })
}

pub fn rates(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let r = &cfg.rates;
    if r.sizes.len() < 3 {
        return Err(config_error(format!(
            "rates.sizes needs at least 3 sample sizes, got {}",
            r.sizes.len()
        )));
    }
    if r.replicates == 0 {
        return Err(config_error("rates.replicates must be positive"));
    }
    let scn = with_key(cfg.require_scenario("rates")?.resolve(), "scenario")?;
    let kernel = kernel_of(&r.kernel, "rates.kernel")?;
    let (h_grid, grid) = oracle_grids(cfg)?;
    let exp = RateExperiment {
        h_grid,
        grid,
        ..RateExperiment::new(scn.truth, scn.error, kernel, r.sizes.clone(), r.replicates, scn.seed)
    };
    with_key(exp.validate(), "rates")?;
    let result = rate_experiment(&exp)?;
    let table = out.join("rates.csv");
    io::write_rates_csv(&table, &result.rows)?;
    let slope_path = out.join("slope.json");
    let median_h: Vec<f64> = result
        .rows
        .iter()
        .map(|row| {
            let mut h = row.oracle_h.clone();
            h.sort_by(f64::total_cmp);
            deconv_core::simulation::quantile_sorted(&h, 0.5)
        })
        .collect();
    let slope = json!({
        "slope": result.slope,
        "ci_low": result.slope_ci.0,
        "ci_high": result.slope_ci.1,
        "bootstrap_resamples": deconv_core::analysis::BOOTSTRAP_RESAMPLES,
        "kernel": kernel.to_string(),
        "error": scn.error.to_string(),
        "sizes": r.sizes,
        "replicates": r.replicates,
        "median_oracle_h": median_h,
    });
    io::write_json(&slope_path, &slope)?;
    Ok(Outcome {
        artifacts: vec![table, slope_path],
        summary: slope,
        failed_check: None,
    })
}

pub fn phiu(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let p = &cfg.phiu;
    if !(p.t_max > 0.0) || p.t_points < 2 {
        return Err(config_error("phiu: need t_max > 0 and t_points >= 2"));
    }
    let data = if let Some(path) = &cfg.data.replicated {
        read_path(path, "data.replicated")?;
        io::read_replicated_csv(path)?
    } else {
        let scn: Scenario = with_key(cfg.require_scenario("phiu")?.resolve(), "scenario")?;
        generate_replicated(&scn.truth, &scn.error, scn.n, p.m, scn.seed)?
    };
    let t = linspace(0.0, p.t_max, p.t_points);
    let est = estimate_abs_phi_u(&data, &t)?;
    let table = out.join("phiu.csv");
    io::write_table_csv(&table, ["t", "abs_phi_hat"], &t, &est)?;
    Ok(Outcome {
        artifacts: vec![table],
        summary: json!({ "subjects": data.len(), "replicates": data.replicates(), "t_points": t.len() }),
        failed_check: None,
    })
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let scn = with_key(cfg.require_scenario("simulate")?.resolve(), "scenario")?;
    let sample = generate(&scn)?;
    let path = out.join("sample.csv");
    io::write_sample_csv(&path, &sample)?;
    Ok(Outcome {
        artifacts: vec![path],
        summary: json!({ "n": sample.len(), "seed": scn.seed }),
        failed_check: None,
    })
}
