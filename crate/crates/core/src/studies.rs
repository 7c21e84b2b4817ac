//! The experiment pipeline: matchup evaluation, presence-probability and
//! design-space sweeps, slope extraction, and the welfare arithmetic that
//! turns reward slopes into dollar figures.
//!
//! Episodes at different attacker presence probabilities are statistically
//! independent given presence, so a defender's average reward at any
//! intermediate probability is the linear mix of its rewards at p=0 and
//! p=1. The sweeps exploit that: each design cell is simulated only at the
//! two endpoints and mixed afterwards, and both endpoint evaluations reuse
//! the same episode seeds so their difference is estimated with common
//! random numbers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{Level0Attacker, Level0Defender, PlayerKind, StateCodec, TabularAttacker, TabularDefender, TabularPolicy};
use crate::exec;
use crate::learning::{train_level_k, TrainConfig, TrainError};
use crate::powerflow::ScenarioParams;
use crate::rng::{child_seed, stream, tag};
use crate::snfg::{run_episode, EngineError, StepRecord};

#[derive(Debug, thiserror::Error)]
pub enum StudiesError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("slope fit needs at least {needed} points, found {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("sweep has no record at p2_max={p2_max}, p3_max={p3_max}, sim_p={sim_p}")]
    MissingEndpoint { p2_max: f64, p3_max: f64, sim_p: f64 },
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("bad sweep CSV at line {line}: {reason}")]
    BadSweepCsv { line: usize, reason: String },
}

/// Which decision rule plays a side in an evaluation.
pub enum DefenderSpec<'p> {
    Level0,
    Trained(&'p TabularPolicy),
}

pub enum AttackerSpec<'p> {
    Level0,
    Trained(&'p TabularPolicy),
}

/// Outcome of one matchup evaluation, aggregated over episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchupStats {
    /// Mean defender reward per step across episodes.
    pub mean_step_reward: f64,
    /// Standard error of the per-episode means.
    pub stderr: f64,
    /// Mean divided by the presence probability: reward per step of actual
    /// attacker presence. Undefined when the attacker never shows up.
    pub normalized: Option<f64>,
    pub episodes: usize,
}

fn episode_defender_mean(records: &[StepRecord]) -> f64 {
    records.iter().map(|r| r.r_d).sum::<f64>() / records.len() as f64
}

/// Plays `episodes` independent episodes of a fixed matchup and aggregates
/// the defender's reward. Each episode gets its own seed derived from
/// `seed`, so results are independent of thread count and batch order.
pub fn evaluate_matchup(
    params: &ScenarioParams,
    defender: &DefenderSpec,
    attacker: &AttackerSpec,
    sim_p: f64,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<MatchupStats, StudiesError> {
    if !(0.0..=1.0).contains(&sim_p) {
        return Err(StudiesError::BadProbability(sim_p));
    }
    assert!(episodes > 0 && steps > 0, "evaluation needs at least one episode and step");

    let means: Vec<Result<f64, EngineError>> = exec::map_indexed(episodes, |i| {
        let mut rng = stream(seed, tag::MATCHUP, i as u64);
        let records = match (defender, attacker) {
            (DefenderSpec::Level0, AttackerSpec::Level0) => {
                let mut d = Level0Defender::new(params);
                let mut a = Level0Attacker::new(params);
                run_episode(params, sim_p, &mut d, &mut a, steps, &mut rng)?
            }
            (DefenderSpec::Level0, AttackerSpec::Trained(pa)) => {
                let mut d = Level0Defender::new(params);
                let mut a = TabularAttacker::new(pa, params);
                run_episode(params, sim_p, &mut d, &mut a, steps, &mut rng)?
            }
            (DefenderSpec::Trained(pd), AttackerSpec::Level0) => {
                let mut d = TabularDefender::new(pd, params);
                let mut a = Level0Attacker::new(params);
                run_episode(params, sim_p, &mut d, &mut a, steps, &mut rng)?
            }
            (DefenderSpec::Trained(pd), AttackerSpec::Trained(pa)) => {
                let mut d = TabularDefender::new(pd, params);
                let mut a = TabularAttacker::new(pa, params);
                run_episode(params, sim_p, &mut d, &mut a, steps, &mut rng)?
            }
        };
        Ok(episode_defender_mean(&records))
    });

    let mut values = Vec::with_capacity(episodes);
    for m in means {
        values.push(m?);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        (var / values.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(MatchupStats {
        mean_step_reward: mean,
        stderr,
        normalized: (sim_p > 0.0).then(|| mean / sim_p),
        episodes,
    })
}

/// Average reward at an intermediate presence probability, from the two
/// endpoint measurements: episodes are independent draws, so the value at
/// `p` is exactly the presence-weighted mix.
pub fn mix_rewards(r_at_p0: f64, r_at_p1: f64, p: f64) -> f64 {
    (1.0 - p) * r_at_p0 + p * r_at_p1
}

/// One sweep measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub p2_max: f64,
    pub p3_max: f64,
    pub train_p: f64,
    pub sim_p: f64,
    pub mean_reward: f64,
    pub stderr: f64,
    pub n_episodes: usize,
    /// Whether every training in this cell's ladder converged.
    pub converged: bool,
}

impl SweepRecord {
    /// Reward per step of actual attacker presence; undefined at sim_p=0.
    pub fn normalized_reward(&self) -> Option<f64> {
        (self.sim_p > 0.0).then(|| self.mean_reward / self.sim_p)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

/// Trains one level-1 defender at `train_p` and evaluates it against the
/// level-0 attacker at every `sim_ps` entry.
pub fn p_sweep_cell(
    params: &ScenarioParams,
    codec: StateCodec,
    train_p: f64,
    sim_ps: &[f64],
    train_cfg: &TrainConfig,
    eval_episodes: usize,
    cell_seed: u64,
) -> Result<Vec<SweepRecord>, StudiesError> {
    if !(0.0..=1.0).contains(&train_p) {
        return Err(StudiesError::BadProbability(train_p));
    }
    let outcome = train_level_k(
        params,
        codec,
        PlayerKind::Defender,
        1,
        train_p,
        train_cfg,
        child_seed(cell_seed, tag::TRAIN, 0),
    )?;
    let converged = outcome.all_converged();
    let defender = &outcome.target().result.policy;

    let mut records = Vec::with_capacity(sim_ps.len());
    for (j, &sim_p) in sim_ps.iter().enumerate() {
        let stats = evaluate_matchup(
            params,
            &DefenderSpec::Trained(defender),
            &AttackerSpec::Level0,
            sim_p,
            eval_episodes,
            train_cfg.steps_per_episode,
            child_seed(cell_seed, tag::MATCHUP, j as u64),
        )?;
        records.push(SweepRecord {
            p2_max: params.p2_max,
            p3_max: params.p3_max,
            train_p,
            sim_p,
            mean_reward: stats.mean_step_reward,
            stderr: stats.stderr,
            n_episodes: stats.episodes,
            converged,
        });
    }
    Ok(records)
}

/// Sweeps attacker presence during training against presence during
/// evaluation: one trained defender per `train_ps` entry, each scored at
/// every `sim_ps` entry.
pub fn p_sweep(
    params: &ScenarioParams,
    codec: StateCodec,
    train_ps: &[f64],
    sim_ps: &[f64],
    train_cfg: &TrainConfig,
    eval_episodes: usize,
    seed: u64,
) -> Result<SweepResult, StudiesError> {
    if train_ps.is_empty() || sim_ps.is_empty() {
        return Err(StudiesError::EmptyGrid);
    }
    let mut records = Vec::with_capacity(train_ps.len() * sim_ps.len());
    for (i, &train_p) in train_ps.iter().enumerate() {
        let cell_seed = child_seed(seed, tag::SWEEP_CELL, i as u64);
        records.extend(p_sweep_cell(params, codec, train_p, sim_ps, train_cfg, eval_episodes, cell_seed)?);
    }
    Ok(SweepResult { records })
}

/// Builds the scenario for one design cell. The generator's reactive
/// capability is what the design sweep varies; its fixed real output stays
/// at the base value unless `couple_p3` also moves it.
pub fn design_cell_params(base: &ScenarioParams, p2_max: f64, p3_max: f64, couple_p3: bool) -> ScenarioParams {
    let params = base.with_p2_max(p2_max);
    if couple_p3 {
        params.with_generator(p3_max)
    } else {
        params.with_p3_max(p3_max)
    }
}

/// Trains one defender for a (p2_max, p3_max) design cell at `train_p` and
/// measures it at the two presence endpoints. Both endpoint evaluations use
/// the same episode seeds, so intermediate-p mixes difference out common
/// episode noise.
#[allow(clippy::too_many_arguments)]
pub fn design_sweep_cell(
    base: &ScenarioParams,
    codec: StateCodec,
    p2_max: f64,
    p3_max: f64,
    train_p: f64,
    couple_p3: bool,
    train_cfg: &TrainConfig,
    eval_episodes: usize,
    cell_seed: u64,
) -> Result<Vec<SweepRecord>, StudiesError> {
    let params = design_cell_params(base, p2_max, p3_max, couple_p3);
    let outcome = train_level_k(
        &params,
        codec,
        PlayerKind::Defender,
        1,
        train_p,
        train_cfg,
        child_seed(cell_seed, tag::TRAIN, 0),
    )?;
    let converged = outcome.all_converged();
    let defender = &outcome.target().result.policy;

    let eval_seed = child_seed(cell_seed, tag::MATCHUP, 0);
    let mut records = Vec::with_capacity(2);
    for sim_p in [0.0, 1.0] {
        let stats = evaluate_matchup(
            &params,
            &DefenderSpec::Trained(defender),
            &AttackerSpec::Level0,
            sim_p,
            eval_episodes,
            train_cfg.steps_per_episode,
            eval_seed,
        )?;
        records.push(SweepRecord {
            p2_max,
            p3_max,
            train_p,
            sim_p,
            mean_reward: stats.mean_step_reward,
            stderr: stats.stderr,
            n_episodes: stats.episodes,
            converged,
        });
    }
    Ok(records)
}

/// Sweeps the design space: one defender per (p2_max, p3_max) cell, scored
/// at the presence endpoints for later mixing.
#[allow(clippy::too_many_arguments)]
pub fn design_sweep(
    base: &ScenarioParams,
    codec: StateCodec,
    p2_grid: &[f64],
    p3_grid: &[f64],
    train_p: f64,
    couple_p3: bool,
    train_cfg: &TrainConfig,
    eval_episodes: usize,
    seed: u64,
) -> Result<SweepResult, StudiesError> {
    if p2_grid.is_empty() || p3_grid.is_empty() {
        return Err(StudiesError::EmptyGrid);
    }
    let mut records = Vec::with_capacity(2 * p2_grid.len() * p3_grid.len());
    for (i, &p2_max) in p2_grid.iter().enumerate() {
        for (j, &p3_max) in p3_grid.iter().enumerate() {
            let cell = i * p3_grid.len() + j;
            let cell_seed = child_seed(seed, tag::SWEEP_CELL, cell as u64);
            records.extend(design_sweep_cell(
                base,
                codec,
                p2_max,
                p3_max,
                train_p,
                couple_p3,
                train_cfg,
                eval_episodes,
                cell_seed,
            )?);
        }
    }
    Ok(SweepResult { records })
}

/// An ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1.0 for a constant series, which the
    /// fitted constant line reproduces without residual.
    pub r2: f64,
    pub n_points: usize,
}

fn ols(points: &[(f64, f64)]) -> SlopeFit {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points.iter().map(|(x, y)| (y - (intercept + slope * x)).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    SlopeFit {
        slope,
        intercept,
        r2,
        n_points: points.len(),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Fits mean reward against p3_max for one p2_max row of a design sweep.
///
/// Records are first mixed from their p in {0, 1} endpoints to the single
/// presence probability `mix_p`, then an OLS line is fitted over the cells
/// with `p3_max <= p3_cutoff` (the regime where the falloff is near
/// linear). Slope is reward per step per unit of reactive capability.
pub fn extract_slope(result: &SweepResult, p2_max: f64, p3_cutoff: f64, mix_p: f64) -> Result<SlopeFit, StudiesError> {
    let mut endpoints: BTreeMap<u64, (f64, Option<f64>, Option<f64>)> = BTreeMap::new();
    for rec in &result.records {
        if !close(rec.p2_max, p2_max) || rec.p3_max > p3_cutoff + 1e-9 {
            continue;
        }
        let entry = endpoints.entry(rec.p3_max.to_bits()).or_insert((rec.p3_max, None, None));
        if close(rec.sim_p, 0.0) {
            entry.1 = Some(rec.mean_reward);
        } else if close(rec.sim_p, 1.0) {
            entry.2 = Some(rec.mean_reward);
        }
    }
    let mut points = Vec::with_capacity(endpoints.len());
    for (_, (p3_max, r0, r1)) in endpoints {
        let (Some(r0), Some(r1)) = (r0, r1) else {
            return Err(StudiesError::MissingEndpoint {
                p2_max,
                p3_max,
                sim_p: if r0.is_none() { 0.0 } else { 1.0 },
            });
        };
        points.push((p3_max, mix_rewards(r0, r1, mix_p)));
    }
    if points.len() < 3 {
        return Err(StudiesError::InsufficientPoints {
            needed: 3,
            got: points.len(),
        });
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(ols(&points))
}

/// Dollar-figure inputs for the welfare analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelfareParams {
    /// Value of delivered energy, $/MW-hr.
    pub c_e: f64,
    /// Cost per sensitive customer per power-quality event, $.
    pub c_pq: f64,
    pub sensitive_customers: u32,
    /// Wall-clock minutes represented by one simulation step.
    pub step_minutes: f64,
    /// Attacker presence probability the analysis mixes rewards to.
    pub attack_probability: f64,
    /// Only cells with p3_max at or below this enter the linear fit.
    pub p3_cutoff: f64,
}

impl Default for WelfareParams {
    fn default() -> Self {
        Self {
            c_e: 80.0,
            c_pq: 300.0,
            sensitive_customers: 1,
            step_minutes: 1.0,
            attack_probability: 0.01,
            p3_cutoff: 1.5,
        }
    }
}

impl WelfareParams {
    pub fn validate(&self) -> Result<(), crate::config::ConfigError> {
        use crate::config::ConfigError::Invalid;
        if self.c_e < 0.0 || self.c_pq < 0.0 {
            return Err(Invalid("welfare dollar rates must be non-negative".to_string()));
        }
        if !(self.step_minutes > 0.0) {
            return Err(Invalid(format!("step_minutes must be positive, got {}", self.step_minutes)));
        }
        if !(0.0..=1.0).contains(&self.attack_probability) {
            return Err(Invalid(format!(
                "attack_probability must be in [0, 1], got {}",
                self.attack_probability
            )));
        }
        if self.p3_cutoff <= 0.0 {
            return Err(Invalid(format!("p3_cutoff must be positive, got {}", self.p3_cutoff)));
        }
        Ok(())
    }
}

/// Steps per hour at the configured cadence.
fn steps_per_hour(w: &WelfareParams) -> f64 {
    60.0 / w.step_minutes
}

/// Social welfare cost of reactive capability, $/MW/hr: each unit of slope
/// is reward lost per step per MW, each unit of reward magnitude is read as
/// one power-quality event fraction billed at c_pq per sensitive customer.
pub fn welfare_cost_rate(slope: f64, w: &WelfareParams) -> f64 {
    slope.abs() * steps_per_hour(w) * w.c_pq * w.sensitive_customers as f64
}

/// The power-quality event cost at which the generator's energy value
/// exactly offsets its attack-induced welfare cost, $/event. `None` when
/// the slope is zero: a harmless generator has no finite break-even.
pub fn break_even_cpq(slope: f64, c_e: f64, w: &WelfareParams) -> Option<f64> {
    if slope == 0.0 {
        return None;
    }
    Some(c_e / (slope.abs() * steps_per_hour(w) * w.sensitive_customers as f64))
}

/// One p2_max row of the welfare analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelfareRow {
    pub p2_max: f64,
    pub slope: f64,
    pub r2: f64,
    pub welfare_cost_rate: f64,
    pub break_even_cpq: Option<f64>,
}

/// Runs slope extraction and the dollar conversions for every p2_max value
/// present in a design sweep, in ascending order.
pub fn analyze_welfare(result: &SweepResult, w: &WelfareParams) -> Result<Vec<WelfareRow>, StudiesError> {
    let mut p2_values: Vec<f64> = result.records.iter().map(|r| r.p2_max).collect();
    p2_values.sort_by(f64::total_cmp);
    p2_values.dedup_by(|a, b| a.to_bits() == b.to_bits());
    if p2_values.is_empty() {
        return Err(StudiesError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(p2_values.len());
    for p2_max in p2_values {
        let fit = extract_slope(result, p2_max, w.p3_cutoff, w.attack_probability)?;
        rows.push(WelfareRow {
            p2_max,
            slope: fit.slope,
            r2: fit.r2,
            welfare_cost_rate: welfare_cost_rate(fit.slope, w),
            break_even_cpq: break_even_cpq(fit.slope, w.c_e, w),
        });
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &[&str] = &[
    "p2_max", "p3_max", "train_p", "sim_p", "mean_reward", "stderr", "n_episodes", "converged",
];

pub fn write_sweep_csv<P: AsRef<Path>>(path: P, result: &SweepResult) -> Result<(), StudiesError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in &result.records {
        w.write_record(&[
            r.p2_max.to_string(),
            r.p3_max.to_string(),
            r.train_p.to_string(),
            r.sim_p.to_string(),
            r.mean_reward.to_string(),
            r.stderr.to_string(),
            r.n_episodes.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<P: AsRef<Path>>(path: P) -> Result<SweepResult, StudiesError> {
    let mut reader = csv::Reader::from_path(path)?;
    let bad = |line: usize, reason: &str| StudiesError::BadSweepCsv {
        line,
        reason: reason.to_string(),
    };
    {
        let headers = reader.headers()?;
        if headers.iter().ne(SWEEP_HEADER.iter().copied()) {
            return Err(bad(1, "unexpected header row"));
        }
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        if row.len() != SWEEP_HEADER.len() {
            return Err(bad(line, "wrong column count"));
        }
        let f = |idx: usize| -> Result<f64, StudiesError> {
            row[idx].parse::<f64>().map_err(|_| bad(line, SWEEP_HEADER[idx]))
        };
        records.push(SweepRecord {
            p2_max: f(0)?,
            p3_max: f(1)?,
            train_p: f(2)?,
            sim_p: f(3)?,
            mean_reward: f(4)?,
            stderr: f(5)?,
            n_episodes: row[6].parse().map_err(|_| bad(line, "n_episodes"))?,
            converged: row[7].parse().map_err(|_| bad(line, "converged"))?,
        });
    }
    Ok(SweepResult { records })
}

pub const WELFARE_HEADER: &[&str] = &["p2_max", "slope", "r2", "welfare_cost_rate", "break_even_cpq"];

pub fn write_welfare_csv<P: AsRef<Path>>(path: P, rows: &[WelfareRow]) -> Result<(), StudiesError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(WELFARE_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.p2_max.to_string(),
            r.slope.to_string(),
            r.r2.to_string(),
            r.welfare_cost_rate.to_string(),
            r.break_even_cpq.map_or("inf".to_string(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ScenarioParams {
        ScenarioParams::default()
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            episodes_per_round: 4,
            steps_per_episode: 6,
            max_rounds: 4,
            visit_threshold: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn mixing_is_linear_interpolation() {
        assert_eq!(mix_rewards(-0.1, -1.0, 0.0), -0.1);
        assert_eq!(mix_rewards(-0.1, -1.0, 1.0), -1.0);
        assert!((mix_rewards(-0.1, -1.0, 0.01) - (-0.109)).abs() < 1e-12);
    }

    #[test]
    fn matchup_normalization_contract() {
        let p = params();
        let stats = evaluate_matchup(&p, &DefenderSpec::Level0, &AttackerSpec::Level0, 1.0, 12, 10, 5).unwrap();
        assert_eq!(stats.normalized, Some(stats.mean_step_reward));
        assert!(stats.stderr >= 0.0);
        assert_eq!(stats.episodes, 12);

        let stats = evaluate_matchup(&p, &DefenderSpec::Level0, &AttackerSpec::Level0, 0.0, 12, 10, 5).unwrap();
        assert_eq!(stats.normalized, None);

        let stats = evaluate_matchup(&p, &DefenderSpec::Level0, &AttackerSpec::Level0, 0.5, 12, 10, 5).unwrap();
        assert!((stats.normalized.unwrap() - stats.mean_step_reward / 0.5).abs() < 1e-15);

        assert!(matches!(
            evaluate_matchup(&p, &DefenderSpec::Level0, &AttackerSpec::Level0, 1.5, 4, 4, 5),
            Err(StudiesError::BadProbability(_))
        ));
    }

    #[test]
    fn matchup_is_reproducible() {
        let p = params();
        let a = evaluate_matchup(&p, &DefenderSpec::Level0, &AttackerSpec::Level0, 0.7, 20, 15, 99).unwrap();
        let b = evaluate_matchup(&p, &DefenderSpec::Level0, &AttackerSpec::Level0, 0.7, 20, 15, 99).unwrap();
        assert_eq!(a, b);
        let c = evaluate_matchup(&p, &DefenderSpec::Level0, &AttackerSpec::Level0, 0.7, 20, 15, 100).unwrap();
        assert_ne!(a.mean_step_reward, c.mean_step_reward);
    }

    #[test]
    fn p_sweep_emits_full_grid() {
        let p = params();
        let result = p_sweep(
            &p,
            StateCodec::default(),
            &[0.2, 1.0],
            &[0.5, 1.0],
            &tiny_train(),
            6,
            11,
        )
        .unwrap();
        assert_eq!(result.records.len(), 4);
        for r in &result.records {
            assert_eq!(r.p2_max, p.p2_max);
            assert!(r.n_episodes == 6 && r.stderr >= 0.0);
            assert!(r.normalized_reward().is_some());
        }
        assert!(matches!(
            p_sweep(&p, StateCodec::default(), &[], &[0.5], &tiny_train(), 4, 1),
            Err(StudiesError::EmptyGrid)
        ));
    }

    #[test]
    fn design_cell_leaves_real_output_alone_unless_coupled() {
        let base = params();
        let cell = design_cell_params(&base, 2.0, 0.5, false);
        assert_eq!(cell.p2_max, 2.0);
        assert_eq!(cell.p3_max, 0.5);
        assert_eq!(cell.p3, base.p3);
        // Load band keeps its width when the ceiling moves.
        assert!((cell.p2_max - cell.p2_min - (base.p2_max - base.p2_min)).abs() < 1e-12);
        let coupled = design_cell_params(&base, 2.0, 0.5, true);
        assert_eq!(coupled.p3, 0.5);
    }

    #[test]
    fn powerless_attacker_cell_matches_exactly_across_presence() {
        // With zero reactive capability every attacker setting is the same
        // 0 MVar, and both presence endpoints share episode seeds, so the
        // two records must agree to the bit.
        let base = params();
        let records = design_sweep_cell(&base, StateCodec::default(), 1.4, 0.0, 0.2, false, &tiny_train(), 8, 17).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].sim_p, 0.0);
        assert_eq!(records[1].sim_p, 1.0);
        assert_eq!(records[0].mean_reward, records[1].mean_reward);
        assert_eq!(records[0].stderr, records[1].stderr);
    }

    #[test]
    fn slope_extraction_recovers_synthetic_line() {
        // Build endpoint records lying exactly on lines so the p=0.01 mix
        // is the line y = -0.02 - 0.006 x.
        let mut records = Vec::new();
        for i in 0..6 {
            let p3 = 0.25 * (i + 1) as f64;
            let r0 = -0.02 - 0.004 * p3;
            // Choose r1 so that (1-p) r0 + p r1 = -0.02 - 0.006 p3 at p=0.01.
            let target = -0.02 - 0.006 * p3;
            let r1 = (target - 0.99 * r0) / 0.01;
            for (sim_p, reward) in [(0.0, r0), (1.0, r1)] {
                records.push(SweepRecord {
                    p2_max: 1.4,
                    p3_max: p3,
                    train_p: 0.2,
                    sim_p,
                    mean_reward: reward,
                    stderr: 0.0,
                    n_episodes: 1,
                    converged: true,
                });
            }
        }
        let result = SweepResult { records };
        let fit = extract_slope(&result, 1.4, 1.5, 0.01).unwrap();
        assert!((fit.slope - (-0.006)).abs() < 1e-12, "slope {}", fit.slope);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert_eq!(fit.n_points, 6);

        // The cutoff excludes the tail: with cutoff 0.5 only two points
        // remain, not enough for a fit.
        assert!(matches!(
            extract_slope(&result, 1.4, 0.5, 0.01),
            Err(StudiesError::InsufficientPoints { needed: 3, got: 2 })
        ));
        // No records at this p2_max at all.
        assert!(matches!(
            extract_slope(&result, 9.9, 1.5, 0.01),
            Err(StudiesError::InsufficientPoints { got: 0, .. })
        ));
    }

    #[test]
    fn slope_extraction_flags_missing_endpoints() {
        let records = (0..4)
            .map(|i| SweepRecord {
                p2_max: 1.4,
                p3_max: 0.25 * (i + 1) as f64,
                train_p: 0.2,
                sim_p: 0.0,
                mean_reward: -0.1,
                stderr: 0.0,
                n_episodes: 1,
                converged: true,
            })
            .collect();
        let result = SweepResult { records };
        assert!(matches!(
            extract_slope(&result, 1.4, 1.5, 0.01),
            Err(StudiesError::MissingEndpoint { sim_p, .. }) if sim_p == 1.0
        ));
    }

    #[test]
    fn constant_rewards_fit_a_flat_perfect_line() {
        let records = (0..5)
            .flat_map(|i| {
                let p3 = 0.25 * (i + 1) as f64;
                [(0.0, -0.5), (1.0, -0.5)].map(|(sim_p, mean_reward)| SweepRecord {
                    p2_max: 1.4,
                    p3_max: p3,
                    train_p: 0.2,
                    sim_p,
                    mean_reward,
                    stderr: 0.0,
                    n_episodes: 1,
                    converged: true,
                })
            })
            .collect();
        let fit = extract_slope(&SweepResult { records }, 1.4, 1.5, 0.3).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r2, 1.0);
    }

    #[test]
    fn welfare_arithmetic_matches_frozen_figures() {
        let w = WelfareParams::default();
        // 0.006 * 60 * 300 * 1 = 108 $/MW/hr.
        assert!((welfare_cost_rate(-0.006, &w) - 108.0).abs() < 1e-9);
        assert_eq!(welfare_cost_rate(0.0, &w), 0.0);
        let zero_cost = WelfareParams { c_pq: 0.0, ..w };
        assert_eq!(welfare_cost_rate(-0.006, &zero_cost), 0.0);

        // 80 / (0.006 * 60) = 222.22... $/event.
        let be = break_even_cpq(-0.006, 80.0, &w).unwrap();
        assert!((be - 222.22).abs() < 0.01);
        let be = break_even_cpq(-0.012, 80.0, &w).unwrap();
        assert!((be - 111.11).abs() < 0.01);
        assert_eq!(break_even_cpq(0.0, 80.0, &w), None);
        assert_eq!(break_even_cpq(-0.5, 0.0, &w), Some(0.0));
    }

    #[test]
    fn break_even_inverts_the_cost_rate() {
        let slopes = [-0.0005, -0.006, -0.02, -0.18, -1.5];
        for (i, &slope) in slopes.iter().enumerate() {
            let w = WelfareParams {
                step_minutes: 1.0 + i as f64,
                sensitive_customers: 1 + i as u32,
                ..WelfareParams::default()
            };
            let c_pq = break_even_cpq(slope, w.c_e, &w).unwrap();
            let at_break_even = WelfareParams { c_pq, ..w };
            let rate = welfare_cost_rate(slope, &at_break_even);
            assert!((rate - w.c_e).abs() < 1e-9 * w.c_e.max(1.0), "slope {slope}: rate {rate}");
        }
    }

    #[test]
    fn welfare_analysis_walks_p2_rows_in_order() {
        let mut records = Vec::new();
        for &p2 in &[2.0, 1.4] {
            for i in 0..4 {
                let p3 = 0.5 * (i + 1) as f64;
                let y = if p2 == 1.4 { -0.01 * p3 } else { -0.02 * p3 };
                for sim_p in [0.0, 1.0] {
                    records.push(SweepRecord {
                        p2_max: p2,
                        p3_max: p3,
                        train_p: 0.2,
                        sim_p,
                        mean_reward: y,
                        stderr: 0.0,
                        n_episodes: 1,
                        converged: true,
                    });
                }
            }
        }
        let rows = analyze_welfare(&SweepResult { records }, &WelfareParams::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].p2_max, 1.4);
        assert_eq!(rows[1].p2_max, 2.0);
        assert!((rows[0].slope - (-0.01)).abs() < 1e-12);
        assert!((rows[1].slope - (-0.02)).abs() < 1e-12);
        assert!(rows[0].break_even_cpq.unwrap() > rows[1].break_even_cpq.unwrap());
    }

    #[test]
    fn sweep_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let result = SweepResult {
            records: vec![
                SweepRecord {
                    p2_max: 1.4,
                    p3_max: 0.25,
                    train_p: 0.2,
                    sim_p: 0.0,
                    mean_reward: -0.185,
                    stderr: 0.004,
                    n_episodes: 2000,
                    converged: true,
                },
                SweepRecord {
                    p2_max: 2.45,
                    p3_max: 2.5,
                    train_p: 0.2,
                    sim_p: 1.0,
                    mean_reward: -1.75,
                    stderr: 0.02,
                    n_episodes: 2000,
                    converged: false,
                },
            ],
        };
        write_sweep_csv(&path, &result).unwrap();
        let back = read_sweep_csv(&path).unwrap();
        assert_eq!(back, result);

        std::fs::write(&path, "nope\n1,2\n").unwrap();
        assert!(matches!(read_sweep_csv(&path), Err(StudiesError::BadSweepCsv { .. }) | Err(StudiesError::Csv(_))));
    }
}
