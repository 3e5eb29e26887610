//! Agent types, reporting strategies, privacy-cost bounds, and Monte Carlo
//! estimates of expected payments.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, ensure_probability, Error, Result};
use crate::mechanism::{MechanismConfig, Report};
use crate::priors::PriorSpec;
use crate::privacy::clamp_unit;
use crate::rng::SimRng;
use crate::scoring::{scaled_score, ScoringParams};
use crate::stats::{par_trials, MeanEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentType {
    pub bit: u8,
    /// Privacy cost coefficient, in utility per unit of epsilon.
    pub cost: f64,
}

impl AgentType {
    pub fn new(bit: u8, cost: f64) -> Result<Self> {
        if bit > 1 {
            return Err(Error::invalid("bit", format!("{bit} is not a bit")));
        }
        if !(cost >= 0.0) {
            return Err(Error::invalid("cost", format!("{cost} is negative")));
        }
        Ok(Self { bit, cost })
    }
}

/// What a threshold strategy does above its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffThreshold {
    #[default]
    Abstain,
    Lie,
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Report truthfully iff `cost <= tau`.
    Threshold {
        tau: f64,
        #[serde(default)]
        off: OffThreshold,
    },
    AlwaysTruth,
    AlwaysLie,
    AlwaysAbstain,
    ConstantBit {
        value: u8,
    },
}

impl Strategy {
    pub fn threshold(tau: f64) -> Self {
        Strategy::Threshold {
            tau,
            off: OffThreshold::Abstain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Threshold { tau, .. } if !(tau >= 0.0) => {
                Err(Error::invalid("strategy.tau", format!("{tau} is negative")))
            }
            Strategy::ConstantBit { value } if value > 1 => Err(Error::invalid(
                "strategy.value",
                format!("{value} is not a bit"),
            )),
            _ => Ok(()),
        }
    }
}

pub fn apply_strategy(strategy: &Strategy, agent: &AgentType) -> Report {
    let truth = Report::from_bit(agent.bit);
    let lie = Report::from_bit(1 - agent.bit);
    match *strategy {
        Strategy::Threshold { tau, off } => {
            if agent.cost <= tau {
                truth
            } else {
                match off {
                    OffThreshold::Abstain => Report::Abstain,
                    OffThreshold::Lie => lie,
                    OffThreshold::Truth => truth,
                }
            }
        }
        Strategy::AlwaysTruth => truth,
        Strategy::AlwaysLie => lie,
        Strategy::AlwaysAbstain => Report::Abstain,
        Strategy::ConstantBit { value } => Report::from_bit(value),
    }
}

/// Strategies for a whole population, indexed by agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategyProfile {
    Symmetric(Strategy),
    PerAgent(Vec<Strategy>),
}

impl StrategyProfile {
    /// Strategy of agent `i`; per-agent profiles repeat their last entry.
    pub fn strategy_for(&self, i: usize) -> &Strategy {
        match self {
            StrategyProfile::Symmetric(s) => s,
            StrategyProfile::PerAgent(v) => &v[i.min(v.len() - 1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StrategyProfile::Symmetric(s) => s.validate(),
            StrategyProfile::PerAgent(v) if v.is_empty() => {
                Err(Error::invalid("strategy", "empty per-agent profile"))
            }
            StrategyProfile::PerAgent(v) => v.iter().try_for_each(Strategy::validate),
        }
    }

    pub fn apply(&self, agents: &[AgentType]) -> Vec<Report> {
        agents
            .iter()
            .enumerate()
            .map(|(i, a)| apply_strategy(self.strategy_for(i), a))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostModelKind {
    /// Realized cost at most `epsilon * c`.
    #[serde(rename = "linear")]
    LinearBound,
    /// Cost difference between actions at most `4 c epsilon^2` (requires
    /// `epsilon <= 1`).
    #[serde(rename = "chen")]
    ChenBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub kind: CostModelKind,
    /// Realized cost as a fraction of the bound; 1 is the worst case.
    #[serde(default = "worst_case")]
    pub eta: f64,
}

fn worst_case() -> f64 {
    1.0
}

impl CostModel {
    pub fn linear() -> Self {
        Self {
            kind: CostModelKind::LinearBound,
            eta: 1.0,
        }
    }

    pub fn chen() -> Self {
        Self {
            kind: CostModelKind::ChenBound,
            eta: 1.0,
        }
    }
}

pub fn privacy_cost_bound(model: &CostModel, cost: f64, epsilon: f64) -> Result<f64> {
    ensure_probability("eta", model.eta)?;
    ensure_positive("epsilon", epsilon)?;
    if !(cost >= 0.0) {
        return Err(Error::invalid("cost", format!("{cost} is negative")));
    }
    match model.kind {
        CostModelKind::LinearBound => Ok(model.eta * epsilon * cost),
        CostModelKind::ChenBound if epsilon > 1.0 => Err(Error::invalid(
            "epsilon",
            format!("{epsilon} > 1; the quadratic bound needs epsilon <= 1"),
        )),
        CostModelKind::ChenBound => Ok(model.eta * 4.0 * cost * epsilon * epsilon),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Truth,
    Lie,
    Abstain,
}

impl Action {
    pub fn report(self, bit: u8) -> Report {
        match self {
            Action::Truth => Report::from_bit(bit),
            Action::Lie => Report::from_bit(1 - bit),
            Action::Abstain => Report::Abstain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub mean_payment: f64,
    /// 99% confidence halfwidth of `mean_payment`.
    pub payment_ci_halfwidth: f64,
    pub privacy_cost: f64,
    pub utility_lower_bound: f64,
}

/// Draws of agent `i`'s leave-one-out estimate `p~_{-i}` given only its
/// bit. The estimate does not depend on agent `i`'s own report, so the
/// same draws price every action.
pub fn sample_peer_estimates(
    bit: u8,
    others: &StrategyProfile,
    prior: &PriorSpec,
    config: &MechanismConfig,
    trials: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    prior.validate()?;
    others.validate()?;
    config.validate()?;
    if bit > 1 {
        return Err(Error::invalid("bit", format!("{bit} is not a bit")));
    }
    let noise = config.noise_spec();
    let others_n = config.n - 1;
    Ok(par_trials(trials, seed, |_, rng: &mut SimRng| {
        let theta = prior.sample_theta_given_bit(rng, bit);
        let mut ones = 0u64;
        // Agent 0 is the probe; peers are agents 1..n.
        for j in 1..=others_n {
            let agent = prior.sample_agent(theta, rng);
            if apply_strategy(others.strategy_for(j), &agent) == Report::One {
                ones += 1;
            }
        }
        clamp_unit((ones as f64 + noise.draw(rng)) / others_n as f64)
    }))
}

pub(crate) fn payment_for(params: &ScoringParams, clamp: bool, peer: f64, report: Report) -> f64 {
    match report.bit() {
        None => 0.0,
        Some(b) => {
            let pay = scaled_score(params, peer, params.prediction(b));
            if clamp {
                pay.max(0.0)
            } else {
                pay
            }
        }
    }
}

/// Expected payment for `action` and the resulting lower bound on utility,
/// given the peer estimates from [`sample_peer_estimates`].
pub fn utility_from_samples(
    agent: &AgentType,
    action: Action,
    peers: &[f64],
    config: &MechanismConfig,
    cost_model: &CostModel,
) -> Result<UtilityEstimate> {
    let privacy_cost = privacy_cost_bound(cost_model, agent.cost, config.epsilon)?;
    let (mean_payment, payment_ci_halfwidth) = if action == Action::Abstain {
        (0.0, 0.0)
    } else {
        let params = config.scoring_params()?;
        let report = action.report(agent.bit);
        let pays: Vec<f64> = peers
            .iter()
            .map(|&p| payment_for(&params, config.clamp_payments, p, report))
            .collect();
        let est = MeanEstimate::from_values(&pays);
        (est.mean, est.ci99())
    };
    Ok(UtilityEstimate {
        mean_payment,
        payment_ci_halfwidth,
        privacy_cost,
        utility_lower_bound: mean_payment - privacy_cost,
    })
}

/// Monte Carlo estimate of an agent's expected payment for `action` when
/// the other agents follow `others`, conditioning on the agent's bit only.
#[allow(clippy::too_many_arguments)]
pub fn expected_utility(
    agent: &AgentType,
    action: Action,
    others: &StrategyProfile,
    prior: &PriorSpec,
    config: &MechanismConfig,
    cost_model: &CostModel,
    trials: u64,
    seed: u64,
) -> Result<UtilityEstimate> {
    if trials < 1000 {
        return Err(Error::invalid("trials", "need at least 1000 trials"));
    }
    config.scoring_params()?;
    let peers = if action == Action::Abstain {
        Vec::new()
    } else {
        sample_peer_estimates(agent.bit, others, prior, config, trials, seed)?
    };
    utility_from_samples(agent, action, &peers, config, cost_model)
}
