//! Command implementations.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use streamdebt_core::error_prob::{
    build_sum_projectors, error_probability_for, expected_decoded_per_round,
    expected_errors_per_round,
};
use streamdebt_core::rng::shard_seed;
use streamdebt_core::stationary::{RenewalModel, PMF_K_MAX};
use streamdebt_core::{
    cross_validate, estimate_error_probability_mc, parse_pattern, run_invariant_suite,
    validate_config, CrossValidationReport, NetworkConfig, RawConfig, TheoryRecord,
};

use crate::args::{Cli, Command, Format};
use crate::output::{sweep_csv, to_json, SweepRow};
use crate::CliError;

pub struct Rendered {
    pub text: String,
    pub suite_failed: bool,
}

impl Rendered {
    fn ok(text: String) -> Self {
        Rendered {
            text,
            suite_failed: false,
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<Rendered, CliError> {
    match &cli.command {
        Command::Theory { config } => {
            let cfg = load_config(config)?;
            let record = theory(&cfg)?;
            Ok(Rendered::ok(to_json(&record)))
        }
        Command::Mc {
            config,
            slots,
            seed,
            shards,
        } => {
            let cfg = load_config(config)?;
            let record = mc(&cfg, *slots, *seed, *shards);
            Ok(Rendered::ok(to_json(&record)))
        }
        Command::Oracle {
            config,
            horizon,
            seeds,
            pattern,
        } => {
            let cfg = load_config(config)?;
            let record = oracle(&cfg, *horizon, *seeds, pattern.as_deref())?;
            Ok(Rendered::ok(to_json(&record)))
        }
        Command::Validate { config, slots } => {
            let cfg = load_config(config)?;
            let record = validate(&cfg, *slots)?;
            let failed = !record.passed;
            Ok(Rendered {
                text: to_json(&record),
                suite_failed: failed,
            })
        }
        Command::Sweep {
            config,
            param,
            values,
            slots,
            seed,
            seeds,
            shards,
        } => {
            let cfg = load_config(config)?;
            let table = sweep(
                &cfg,
                param,
                values,
                SweepMcSettings {
                    slots: *slots,
                    seed: seed.unwrap_or(cfg.seed),
                    seeds: (*seeds).max(1),
                    shards: (*shards).max(1),
                },
            )?;
            let text = match cli.format {
                Format::Csv => sweep_csv(&table.points),
                Format::Json => to_json(&table),
            };
            Ok(Rendered::ok(text))
        }
    }
}

pub fn load_config(path: &Path) -> Result<NetworkConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw: RawConfig = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(to_json(&json!({
            "error": "malformed_config",
            "message": e.to_string(),
        })))
    })?;
    validate_config(&raw, false).map_err(|e| {
        CliError::Config(to_json(&json!({
            "error": "invalid_config",
            "violations": e.violations,
        })))
    })
}

pub fn theory(cfg: &NetworkConfig) -> Result<TheoryRecord, CliError> {
    let model = RenewalModel::build(cfg)?;
    Ok(error_probability_for(&model)?)
}

#[derive(Debug, Serialize)]
pub struct McRecord {
    pub p_e_hat: f64,
    pub errors: u64,
    pub decodes: u64,
    pub rounds: u64,
    pub seed: u64,
    pub slots: u64,
    pub shards: u64,
    pub config: RawConfig,
}

pub fn mc(cfg: &NetworkConfig, slots: Option<u64>, seed: Option<u64>, shards: u64) -> McRecord {
    let slots = slots.unwrap_or(cfg.slots);
    let seed = seed.unwrap_or(cfg.seed);
    let report = estimate_error_probability_mc(cfg, slots, seed, shards.max(1));
    McRecord {
        p_e_hat: report.p_e_hat,
        errors: report.errors,
        decodes: report.decodes,
        rounds: report.rounds,
        seed,
        slots,
        shards: report.shards,
        config: cfg.raw(),
    }
}

#[derive(Debug, Serialize)]
pub struct OracleRecord {
    pub instances: u64,
    pub compared_slots: u64,
    pub mismatched_slots: u64,
    pub gmds_suspects: u64,
    pub horizon: u64,
    pub scripted: bool,
    #[serde(flatten)]
    pub detail: OracleDetail,
    pub config: RawConfig,
}

#[derive(Debug, Serialize)]
pub struct OracleDetail {
    pub mismatches: Vec<streamdebt_core::field::MismatchRecord>,
}

pub fn oracle(
    cfg: &NetworkConfig,
    horizon: u64,
    seeds: u64,
    pattern_path: Option<&Path>,
) -> Result<OracleRecord, CliError> {
    let (report, horizon, scripted): (CrossValidationReport, u64, bool) = match pattern_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let bits = parse_pattern(&text, cfg.hops).map_err(|e| {
                CliError::Config(to_json(&json!({
                    "error": "malformed_pattern",
                    "message": e.to_string(),
                })))
            })?;
            let h = bits.len() as u64;
            (cross_validate(cfg, h, 1, Some(&bits), None), h, true)
        }
        None => (
            cross_validate(cfg, horizon, seeds, None, None),
            horizon,
            false,
        ),
    };
    Ok(OracleRecord {
        instances: report.instances,
        compared_slots: report.compared_slots,
        mismatched_slots: report.mismatched_slots,
        gmds_suspects: report.gmds_suspects,
        horizon,
        scripted,
        detail: OracleDetail {
            mismatches: report.mismatches,
        },
        config: cfg.raw(),
    })
}

#[derive(Debug, Serialize)]
pub struct ValidateRecord {
    pub passed: bool,
    pub checks: Vec<streamdebt_core::validation::CheckResult>,
    pub zero_unknown_renewal_mass: f64,
    pub config: RawConfig,
}

pub fn validate(cfg: &NetworkConfig, slots: Option<u64>) -> Result<ValidateRecord, CliError> {
    let report = run_invariant_suite(cfg, slots.unwrap_or(cfg.slots))?;
    Ok(ValidateRecord {
        passed: report.passed,
        checks: report.checks,
        zero_unknown_renewal_mass: report.zero_unknown_renewal_mass,
        config: cfg.raw(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SweepMcSettings {
    pub slots: Option<u64>,
    pub seed: u64,
    pub seeds: u64,
    pub shards: u64,
}

#[derive(Debug, Serialize)]
pub struct SweepTable {
    pub param: String,
    pub points: Vec<SweepRow>,
    pub config: RawConfig,
}

#[derive(Debug, Clone)]
enum SweepParam {
    Delta,
    Epsilon,
    QLink(usize),
    Hops,
    Rate,
    Slots,
}

fn parse_param(cfg: &NetworkConfig, name: &str) -> Result<SweepParam, CliError> {
    match name {
        "delta" => Ok(SweepParam::Delta),
        "epsilon" => Ok(SweepParam::Epsilon),
        "hops" => Ok(SweepParam::Hops),
        "rate" => Ok(SweepParam::Rate),
        "slots" => Ok(SweepParam::Slots),
        _ => {
            if let Some(idx) = name.strip_prefix('q') {
                let l: usize = idx.parse().map_err(|_| bad_param(name))?;
                if l < cfg.hops {
                    return Ok(SweepParam::QLink(l));
                }
            }
            Err(bad_param(name))
        }
    }
}

fn bad_param(name: &str) -> CliError {
    CliError::Config(to_json(&json!({
        "error": "unknown_sweep_parameter",
        "parameter": name,
    })))
}

fn parse_values(spec: &str) -> Result<Vec<String>, CliError> {
    let spec = spec.trim();
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: i64 = lo.trim().parse().map_err(|_| bad_values(spec))?;
        let hi: i64 = hi.trim().parse().map_err(|_| bad_values(spec))?;
        if lo > hi {
            return Err(bad_values(spec));
        }
        return Ok((lo..=hi).map(|v| v.to_string()).collect());
    }
    let vals: Vec<String> = spec
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if vals.is_empty() {
        return Err(bad_values(spec));
    }
    Ok(vals)
}

fn bad_values(spec: &str) -> CliError {
    CliError::Config(to_json(&json!({
        "error": "malformed_sweep_values",
        "values": spec,
    })))
}

fn point_config(
    base: &NetworkConfig,
    param: &SweepParam,
    token: &str,
) -> Result<NetworkConfig, CliError> {
    let mut raw = base.raw();
    let parse_f = |s: &str| -> Result<f64, CliError> { s.parse().map_err(|_| bad_values(s)) };
    let parse_u = |s: &str| -> Result<u64, CliError> { s.parse().map_err(|_| bad_values(s)) };
    match param {
        SweepParam::Delta => raw.delta = parse_u(token)?,
        SweepParam::Epsilon => {
            let eps = parse_f(token)?;
            raw.q = vec![1.0 - eps; raw.hops];
        }
        SweepParam::QLink(l) => raw.q[*l] = parse_f(token)?,
        SweepParam::Hops => {
            let hops = parse_u(token)? as usize;
            raw.hops = hops;
            raw.q = vec![base.q[0]; hops];
            raw.m = vec![base.m[0]; hops];
        }
        SweepParam::Rate => {
            let (k, n) = token.split_once('/').ok_or_else(|| bad_values(token))?;
            raw.k_per_slot = parse_u(k)?;
            raw.n_dest = parse_u(n)?;
        }
        SweepParam::Slots => raw.slots = Some(parse_u(token)?),
    }
    validate_config(&raw, false).map_err(|e| {
        CliError::Config(to_json(&json!({
            "error": "invalid_config",
            "sweep_value": token,
            "violations": e.violations,
        })))
    })
}

fn mc_mean(cfg: &NetworkConfig, slots: u64, settings: &SweepMcSettings) -> f64 {
    let total: f64 = (0..settings.seeds)
        .map(|i| {
            let seed = if i == 0 {
                settings.seed
            } else {
                shard_seed(settings.seed, 0x5eed_0000 + i)
            };
            estimate_error_probability_mc(cfg, slots, seed, settings.shards).p_e_hat
        })
        .sum();
    total / settings.seeds as f64
}

fn rel_err(p_e: f64, p_e_hat: f64) -> Option<f64> {
    (p_e_hat != 0.0).then(|| (p_e - p_e_hat).abs() / p_e_hat)
}

pub fn sweep(
    cfg: &NetworkConfig,
    param_name: &str,
    values_spec: &str,
    settings: SweepMcSettings,
) -> Result<SweepTable, CliError> {
    let param = parse_param(cfg, param_name)?;
    let tokens = parse_values(values_spec)?;
    let points: Vec<SweepRow> = match &param {
        SweepParam::Delta => {
            // One model serves every deadline.
            let model = RenewalModel::build(cfg)?;
            let proj = build_sum_projectors(&model.pi, cfg);
            let den = expected_decoded_per_round(&model)?;
            let pmf = model.round_length_pmf(PMF_K_MAX);
            tokens
                .iter()
                .map(|tok| -> Result<SweepRow, CliError> {
                    let point = point_config(cfg, &param, tok)?;
                    let num = expected_errors_per_round(&model, &proj, point.delta)?;
                    let p_e = (num / den).clamp(0.0, 1.0);
                    let (p_e_hat, slots) = match settings.slots {
                        Some(s) => (Some(mc_mean(&point, s, &settings)), s),
                        None => (None, 0),
                    };
                    Ok(SweepRow {
                        sweep_value: tok.clone(),
                        p_e,
                        p_e_hat,
                        rel_err: p_e_hat.and_then(|h| rel_err(p_e, h)),
                        tail_mass: pmf.tail_mass,
                        pi_residual: model.pi_residual,
                        seed: settings.seed,
                        slots,
                    })
                })
                .collect::<Result<_, _>>()?
        }
        SweepParam::Slots => {
            let record = theory(cfg)?;
            tokens
                .par_iter()
                .map(|tok| -> Result<SweepRow, CliError> {
                    let point = point_config(cfg, &param, tok)?;
                    let slots = point.slots;
                    let p_e_hat = mc_mean(&point, slots, &settings);
                    Ok(SweepRow {
                        sweep_value: tok.clone(),
                        p_e: record.p_e,
                        p_e_hat: Some(p_e_hat),
                        rel_err: rel_err(record.p_e, p_e_hat),
                        tail_mass: record.tail_mass,
                        pi_residual: record.pi_residual,
                        seed: settings.seed,
                        slots,
                    })
                })
                .collect::<Result<_, _>>()?
        }
        _ => tokens
            .par_iter()
            .map(|tok| -> Result<SweepRow, CliError> {
                let point = point_config(cfg, &param, tok)?;
                let record = theory(&point)?;
                let (p_e_hat, slots) = match settings.slots {
                    Some(s) => (Some(mc_mean(&point, s, &settings)), s),
                    None => (None, 0),
                };
                Ok(SweepRow {
                    sweep_value: tok.clone(),
                    p_e: record.p_e,
                    p_e_hat,
                    rel_err: p_e_hat.and_then(|h| rel_err(record.p_e, h)),
                    tail_mass: record.tail_mass,
                    pi_residual: record.pi_residual,
                    seed: settings.seed,
                    slots,
                })
            })
            .collect::<Result<_, _>>()?,
    };
    Ok(SweepTable {
        param: param_name.to_string(),
        points,
        config: cfg.raw(),
    })
}
