//! JSON experiment configs and the commands the CLI dispatches to.
//!
//! Every command returns a JSON report and a CSV of per-trial records.
//! Both are pure functions of the config and the effective seed. JSON
//! floats use the shortest representation that round-trips; CSV floats
//! are written with 17 significant digits.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::agents::{CostModel, CostModelKind, OffThreshold, Strategy, StrategyProfile};
use crate::equilibrium::{
    accuracy_experiment, accuracy_target_met, alpha_prime, best_response_audit_with,
    cost_scaling_experiment, epsilon_rule, ResolvedParams, Scenario, DEFAULT_POSTERIOR_SAMPLES,
    DEFAULT_THRESHOLD_TRIALS,
};
use crate::error::{Error, Result};
use crate::mechanism::{true_statistic, Mechanism, MechanismConfig, Report};
use crate::priors::{
    cost_threshold, posterior_bit_prob, posterior_clamped_mean, Population, PriorSpec,
};
use crate::privacy::{dp_audit_histograms, AuditSettings, NoiseMode, NoiseSpec};
use crate::rng::derive_seed;
use crate::stats::{par_trials, MeanEstimate, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Posterior,
    Threshold,
    AuditDp,
    AuditEquilibrium,
    Accuracy,
    CostScaling,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Run,
        Command::Posterior,
        Command::Threshold,
        Command::AuditDp,
        Command::AuditEquilibrium,
        Command::Accuracy,
        Command::CostScaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Posterior => "posterior",
            Command::Threshold => "threshold",
            Command::AuditDp => "audit-dp",
            Command::AuditEquilibrium => "audit-equilibrium",
            Command::Accuracy => "accuracy",
            Command::CostScaling => "cost-scaling",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    fn default_trials(self) -> u64 {
        match self {
            Command::AuditDp => 1_000_000,
            Command::AuditEquilibrium => 100_000,
            _ => 1000,
        }
    }
}

/// A number, or `"auto"` to derive it from the other settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Setting {
    #[default]
    Auto,
    Value(f64),
}

/// Strategy profile, where a threshold of `"auto"` means the computed
/// equilibrium threshold.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategySetting {
    AutoThreshold { off: OffThreshold },
    Fixed(StrategyProfile),
}

impl Default for StrategySetting {
    fn default() -> Self {
        StrategySetting::AutoThreshold {
            off: OffThreshold::Abstain,
        }
    }
}

impl StrategySetting {
    fn off_threshold(&self) -> OffThreshold {
        match self {
            StrategySetting::AutoThreshold { off } => *off,
            StrategySetting::Fixed(_) => OffThreshold::Abstain,
        }
    }

    pub fn resolve(&self, tau: f64) -> StrategyProfile {
        match self {
            StrategySetting::AutoThreshold { off } => {
                StrategyProfile::Symmetric(Strategy::Threshold { tau, off: *off })
            }
            StrategySetting::Fixed(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMechanism {
    Laplace,
    /// Publishes the exact average. Must fail any audit.
    NoNoise,
    /// Ignores its input. Passes any audit.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Estimate,
    Payment(usize),
}

/// The `audit` section used by `audit-dp`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub mechanism: AuditMechanism,
    pub n: usize,
    /// The first `ones` agents report 1, the rest report 0.
    pub ones: usize,
    pub index: usize,
    /// Report at `index` in the neighbouring input. Defaults to the other bit.
    pub flipped: Option<Report>,
    pub bins: usize,
    pub observable: Observable,
    pub p0: f64,
    pub p1: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            mechanism: AuditMechanism::Laplace,
            n: 4,
            ones: 2,
            index: 2,
            flipped: None,
            bins: 20,
            observable: Observable::Estimate,
            p0: 1.0 / 3.0,
            p1: 2.0 / 3.0,
            alpha: 0.1,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub prior: Option<PriorSpec>,
    pub n: Option<usize>,
    pub ns: Option<Vec<usize>>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Setting,
    pub beta: Setting,
    pub cost_model: Option<CostModel>,
    pub strategy: StrategySetting,
    pub trials: Option<u64>,
    pub seed: u64,
    pub posterior_samples: Option<u64>,
    pub threshold_trials: Option<u64>,
    pub csv_out: Option<String>,
    pub test_disable_noise: bool,
    pub clamp_payments: bool,
    pub audit: AuditConfig,
}

/// Removes keys from a JSON object one at a time so leftovers can be
/// reported as unknown.
struct Fields {
    map: Map<String, Value>,
    prefix: &'static str,
}

impl Fields {
    fn new(value: Value, prefix: &'static str) -> Result<Self> {
        match value {
            Value::Object(map) => Ok(Self { map, prefix }),
            _ => Err(config_error(format!(
                "expected a JSON object{}",
                if prefix.is_empty() {
                    String::new()
                } else {
                    format!(" for key `{}`", prefix.trim_end_matches('.'))
                }
            ))),
        }
    }

    fn take<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>> {
        self.map
            .remove(key)
            .map(|v| {
                serde_json::from_value(v)
                    .map_err(|e| config_error(format!("invalid key `{}{key}`: {e}", self.prefix)))
            })
            .transpose()
    }

    fn take_raw(&mut self, key: &str) -> Option<Value> {
        self.map.remove(key)
    }

    fn setting(&mut self, key: &str) -> Result<Setting> {
        match self.take_raw(key) {
            None => Ok(Setting::Auto),
            Some(Value::String(s)) if s == "auto" => Ok(Setting::Auto),
            Some(Value::Number(x)) => Ok(Setting::Value(x.as_f64().unwrap_or(f64::NAN))),
            Some(other) => Err(config_error(format!(
                "invalid key `{}{key}`: expected a number or \"auto\", got {other}",
                self.prefix
            ))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(config_error(format!("unknown key `{}{k}`", self.prefix))),
            None => Ok(()),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_strategy(value: Value) -> Result<StrategySetting> {
    let auto = value.get("tau").and_then(Value::as_str) == Some("auto");
    if auto {
        let mut fields = Fields::new(value, "strategy.")?;
        let kind: String = fields.take("kind")?.unwrap_or_default();
        if kind != "threshold" {
            return Err(config_error(
                "invalid key `strategy.tau`: \"auto\" needs kind \"threshold\"",
            ));
        }
        fields.take_raw("tau");
        let off = fields.take("off")?.unwrap_or_default();
        fields.finish()?;
        return Ok(StrategySetting::AutoThreshold { off });
    }
    let profile: StrategyProfile = serde_json::from_value(value)
        .map_err(|e| config_error(format!("invalid key `strategy`: {e}")))?;
    profile
        .validate()
        .map_err(|e| config_error(format!("invalid key `strategy`: {e}")))?;
    Ok(StrategySetting::Fixed(profile))
}

fn parse_observable(value: Value) -> Result<Observable> {
    match &value {
        Value::String(s) if s == "estimate" => return Ok(Observable::Estimate),
        Value::Object(m) if m.len() == 1 => {
            if let Some(j) = m.get("payment").and_then(Value::as_u64) {
                return Ok(Observable::Payment(j as usize));
            }
        }
        _ => {}
    }
    Err(config_error(format!(
        "invalid key `audit.observable`: expected \"estimate\" or {{\"payment\": j}}, got {value}"
    )))
}

fn parse_audit(value: Value) -> Result<AuditConfig> {
    let mut f = Fields::new(value, "audit.")?;
    let d = AuditConfig::default();
    let n = f.take("n")?.unwrap_or(d.n);
    let audit = AuditConfig {
        mechanism: f.take("mechanism")?.unwrap_or(d.mechanism),
        ones: f.take("ones")?.unwrap_or(n / 2),
        index: f.take("index")?.unwrap_or(n / 2),
        n,
        flipped: f.take("flipped")?,
        bins: f.take("bins")?.unwrap_or(d.bins),
        observable: f
            .take_raw("observable")
            .map(parse_observable)
            .transpose()?
            .unwrap_or(d.observable),
        p0: f.take("p0")?.unwrap_or(d.p0),
        p1: f.take("p1")?.unwrap_or(d.p1),
        alpha: f.take("alpha")?.unwrap_or(d.alpha),
        beta: f.take("beta")?.unwrap_or(d.beta),
    };
    f.finish()?;
    Ok(audit)
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| config_error(format!("malformed JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let mut f = Fields::new(value, "")?;
        let prior: Option<PriorSpec> = f.take("prior")?;
        if let Some(p) = &prior {
            p.validate()
                .map_err(|e| config_error(format!("invalid key `prior`: {e}")))?;
        }
        let config = Self {
            prior,
            n: f.take("n")?,
            ns: f.take("ns")?,
            alpha: f.take("alpha")?,
            delta: f.take("delta")?,
            epsilon: f.setting("epsilon")?,
            beta: f.setting("beta")?,
            cost_model: f.take("cost_model")?,
            strategy: f
                .take_raw("strategy")
                .map(parse_strategy)
                .transpose()?
                .unwrap_or_default(),
            trials: f.take("trials")?,
            seed: f.take("seed")?.unwrap_or(0),
            posterior_samples: f.take("posterior_samples")?,
            threshold_trials: f.take("threshold_trials")?,
            csv_out: f.take("csv_out")?,
            test_disable_noise: f.take("test_disable_noise")?.unwrap_or(false),
            clamp_payments: f.take("clamp_payments")?.unwrap_or(false),
            audit: f
                .take_raw("audit")
                .map(parse_audit)
                .transpose()?
                .unwrap_or_default(),
        };
        f.finish()?;
        Ok(config)
    }

    fn prior(&self) -> Result<&PriorSpec> {
        self.prior.as_ref().ok_or_else(|| missing("prior"))
    }

    fn n(&self) -> Result<usize> {
        self.n.ok_or_else(|| missing("n"))
    }

    fn alpha(&self) -> Result<f64> {
        self.alpha.ok_or_else(|| missing("alpha"))
    }

    fn delta(&self) -> Result<f64> {
        self.delta.ok_or_else(|| missing("delta"))
    }

    fn epsilon(&self, n: usize) -> Result<f64> {
        match self.epsilon {
            Setting::Value(e) => Ok(e),
            Setting::Auto => epsilon_rule(self.alpha()?, self.delta()?, n),
        }
    }

    fn noise(&self) -> NoiseMode {
        if self.test_disable_noise {
            NoiseMode::Disabled
        } else {
            NoiseMode::Sample
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let n = self.n()?;
        let mut scenario = Scenario::new(
            self.prior()?.clone(),
            n,
            self.alpha()?,
            self.delta()?,
            self.epsilon(n)?,
            self.cost_model.unwrap_or_else(CostModel::linear),
        );
        if let Setting::Value(b) = self.beta {
            scenario.beta_override = Some(b);
        }
        scenario.posterior_samples = self.posterior_samples.unwrap_or(DEFAULT_POSTERIOR_SAMPLES);
        scenario.threshold_trials = self.threshold_trials.unwrap_or(DEFAULT_THRESHOLD_TRIALS);
        scenario.off_threshold = self.strategy.off_threshold();
        scenario.clamp_payments = self.clamp_payments;
        scenario.noise = self.noise();
        Ok(scenario)
    }
}

fn missing(key: &str) -> Error {
    config_error(format!("missing key `{key}`"))
}

/// Rendered output of one command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub json: String,
    pub csv: String,
    /// `None` for commands that only compute.
    pub verdict: Option<Verdict>,
}

impl CommandOutput {
    /// 0 when complete or passing, 2 on Fail, 3 on Inconclusive.
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            None | Some(Verdict::Pass) => 0,
            Some(Verdict::Fail) => 2,
            Some(Verdict::Inconclusive) => 3,
        }
    }
}

/// Executes `command`. A `seed_override` replaces the config's seed.
pub fn run_command(
    command: Command,
    config: &ExperimentConfig,
    seed_override: Option<u64>,
) -> Result<CommandOutput> {
    let seed = seed_override.unwrap_or(config.seed);
    let trials = config.trials.unwrap_or(command.default_trials());
    let (body, csv, verdict) = match command {
        Command::Run => run_trials(config, trials, seed)?,
        Command::Posterior => posterior(config, seed)?,
        Command::Threshold => threshold(config, seed)?,
        Command::AuditDp => audit_dp(config, trials, seed)?,
        Command::AuditEquilibrium => audit_equilibrium(config, trials, seed)?,
        Command::Accuracy => accuracy(config, trials, seed)?,
        Command::CostScaling => cost_scaling(config, trials, seed)?,
    };
    let mut doc = Map::new();
    doc.insert("command".into(), json!(command.name()));
    doc.insert("seed".into(), json!(seed));
    if !matches!(command, Command::Posterior | Command::Threshold) {
        doc.insert("trials".into(), json!(trials));
    }
    if let Some(v) = verdict {
        doc.insert("verdict".into(), to_value(v)?);
    }
    for (k, v) in body {
        doc.insert(k, v);
    }
    let mut json = serde_json::to_string_pretty(&Value::Object(doc))
        .map_err(|e| config_error(format!("serializing report: {e}")))?;
    json.push('\n');
    Ok(CommandOutput { json, csv, verdict })
}

type Rendered = (Map<String, Value>, String, Option<Verdict>);

fn to_value<T: Serialize>(x: T) -> Result<Value> {
    serde_json::to_value(x).map_err(|e| config_error(format!("serializing report: {e}")))
}

fn body(entries: Vec<(&str, Value)>) -> Map<String, Value> {
    entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Float with 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

struct Csv(csv::Writer<Vec<u8>>);

impl Csv {
    fn new(header: &[&str]) -> Result<Self> {
        let mut w = Self(csv::Writer::from_writer(Vec::new()));
        w.row(header.iter().map(|s| s.to_string()))?;
        Ok(w)
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<()> {
        self.0
            .write_record(fields)
            .map_err(|e| config_error(format!("writing csv: {e}")))
    }

    fn finish(self) -> Result<String> {
        let bytes = self
            .0
            .into_inner()
            .map_err(|e| config_error(format!("writing csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| config_error(format!("writing csv: {e}")))
    }
}

const RESOLVED_COLUMNS: [&str; 5] = ["epsilon", "beta", "tau", "p0", "p1"];

fn resolved_fields(r: &ResolvedParams) -> [String; 5] {
    [
        num(r.epsilon),
        num(r.beta),
        num(r.tau),
        num(r.p0),
        num(r.p1),
    ]
}

fn with_resolved<'a>(columns: &[&'a str]) -> Vec<&'a str> {
    columns.iter().copied().chain(RESOLVED_COLUMNS).collect()
}

fn resolved_json(scenario: &Scenario, r: &ResolvedParams) -> Result<Value> {
    let mut v = to_value(r)?;
    let radius = alpha_prime(scenario.alpha, scenario.delta, r.epsilon, scenario.n);
    v["alpha_prime"] = json!(radius);
    v["accuracy_target_met"] = json!(accuracy_target_met(
        scenario.alpha,
        scenario.delta,
        r.epsilon,
        scenario.n
    ));
    Ok(v)
}

fn run_trials(config: &ExperimentConfig, trials: u64, seed: u64) -> Result<Rendered> {
    let scenario = config.scenario()?;
    let resolved = scenario.resolve(seed)?;
    let profile = config.strategy.resolve(resolved.tau);
    let mechanism = Mechanism::new(scenario.mechanism_config(&resolved)?)?;
    let n = scenario.n;
    let rows = par_trials(trials, derive_seed(seed, "run"), |trial, rng| {
        let population = Population::sample_with(&scenario.prior, n, rng);
        let reports = profile.apply(&population.agents);
        let outcome = mechanism.run(&reports, rng).expect("length matches n");
        let p_hat = true_statistic(&population).expect("nonempty");
        let paid: Vec<f64> = reports
            .iter()
            .zip(&outcome.payments)
            .filter(|(r, _)| **r != Report::Abstain)
            .map(|(_, &p)| p)
            .collect();
        let min = paid.iter().copied().reduce(f64::min).unwrap_or(0.0);
        let max = paid.iter().copied().reduce(f64::max).unwrap_or(0.0);
        (
            trial,
            p_hat,
            outcome.estimate,
            outcome.total_payment(),
            min,
            max,
            paid.len(),
        )
    });
    let mut csv = Csv::new(&[
        "trial",
        "p_hat",
        "p_tilde",
        "abs_error",
        "total_payment",
        "min_payment",
        "max_payment",
        "participants",
    ])?;
    for &(trial, p_hat, p_tilde, total, min, max, participants) in &rows {
        csv.row([
            trial.to_string(),
            num(p_hat),
            num(p_tilde),
            num((p_hat - p_tilde).abs()),
            num(total),
            num(min),
            num(max),
            participants.to_string(),
        ])?;
    }
    let errors: Vec<f64> = rows.iter().map(|r| (r.1 - r.2).abs()).collect();
    let totals: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let participants: Vec<f64> = rows.iter().map(|r| r.6 as f64).collect();
    Ok((
        body(vec![
            ("n", json!(n)),
            ("resolved", resolved_json(&scenario, &resolved)?),
            ("abs_error", to_value(MeanEstimate::from_values(&errors))?),
            (
                "total_payment",
                to_value(MeanEstimate::from_values(&totals))?,
            ),
            (
                "participants",
                to_value(MeanEstimate::from_values(&participants))?,
            ),
        ]),
        csv.finish()?,
        None,
    ))
}

fn posterior(config: &ExperimentConfig, seed: u64) -> Result<Rendered> {
    let prior = config.prior()?;
    let n = config.n()?;
    let epsilon = config.epsilon(n)?;
    let noise = if config.test_disable_noise {
        NoiseSpec::disabled_for_tests()
    } else {
        NoiseSpec::laplace(epsilon)?
    };
    let samples = config
        .posterior_samples
        .unwrap_or(DEFAULT_POSTERIOR_SAMPLES);
    let mut csv = Csv::new(&[
        "bit",
        "posterior_bit_prob",
        "clamped_mean",
        "std_err",
        "samples",
        "epsilon",
        "n",
    ])?;
    let mut per_bit = Vec::new();
    for bit in [0u8, 1] {
        let exact = posterior_bit_prob(prior, bit)?;
        let est = posterior_clamped_mean(
            prior,
            bit,
            n,
            &noise,
            samples,
            derive_seed(seed, &format!("posterior-{bit}")),
        )?;
        csv.row([
            bit.to_string(),
            num(exact),
            num(est.mean),
            num(est.std_err),
            samples.to_string(),
            num(noise.epsilon),
            n.to_string(),
        ])?;
        per_bit.push(json!({
            "bit": bit,
            "posterior_bit_prob": exact,
            "clamped_mean": est,
            "difference": est.mean - exact,
        }));
    }
    Ok((
        body(vec![
            ("n", json!(n)),
            ("epsilon", json!(noise.epsilon)),
            ("samples", json!(samples)),
            ("per_bit", Value::Array(per_bit)),
        ]),
        csv.finish()?,
        None,
    ))
}

fn threshold(config: &ExperimentConfig, seed: u64) -> Result<Rendered> {
    let (alpha, delta, n) = (config.alpha()?, config.delta()?, config.n()?);
    let trials = config.threshold_trials.unwrap_or(DEFAULT_THRESHOLD_TRIALS);
    let t = cost_threshold(
        config.prior()?,
        alpha,
        delta,
        n,
        trials,
        derive_seed(seed, "threshold"),
    )?;
    let mut csv = Csv::new(&[
        "alpha",
        "delta",
        "n",
        "tau_population",
        "tau_conditional",
        "tau",
    ])?;
    csv.row([
        num(alpha),
        num(delta),
        n.to_string(),
        num(t.tau_population),
        num(t.tau_conditional),
        num(t.tau),
    ])?;
    Ok((
        body(vec![
            ("alpha", json!(alpha)),
            ("delta", json!(delta)),
            ("n", json!(n)),
            ("threshold", to_value(t)?),
        ]),
        csv.finish()?,
        None,
    ))
}

fn audit_dp(config: &ExperimentConfig, trials: u64, seed: u64) -> Result<Rendered> {
    let a = &config.audit;
    let epsilon = match config.epsilon {
        Setting::Value(e) => e,
        Setting::Auto => {
            return Err(config_error(
                "invalid key `epsilon`: audit-dp needs the claimed epsilon as a number",
            ))
        }
    };
    if a.ones > a.n {
        return Err(config_error(format!(
            "invalid key `audit.ones`: {} exceeds audit.n = {}",
            a.ones, a.n
        )));
    }
    if a.index >= a.n {
        return Err(config_error(format!(
            "invalid key `audit.index`: {} is not below audit.n = {}",
            a.index, a.n
        )));
    }
    let reports: Vec<Report> = (0..a.n)
        .map(|i| {
            if i < a.ones {
                Report::One
            } else {
                Report::Zero
            }
        })
        .collect();
    let flipped = a.flipped.unwrap_or(match reports[a.index] {
        Report::One => Report::Zero,
        _ => Report::One,
    });
    let noise = match a.mechanism {
        AuditMechanism::NoNoise => NoiseMode::Disabled,
        _ => NoiseMode::Sample,
    };
    let mcfg = MechanismConfig::new(a.n, a.alpha, a.beta, epsilon, a.p0, a.p1)
        .map_err(|e| config_error(format!("invalid key `audit`: {e}")))?
        .with_clamped_payments(config.clamp_payments)
        .with_test_noise(noise);
    let mechanism = Mechanism::new(mcfg)?;
    let mut settings = AuditSettings::new(trials, a.bins, seed);
    if let Observable::Payment(j) = a.observable {
        if j >= a.n || j == a.index {
            return Err(config_error(format!(
                "invalid key `audit.observable`: payment index {j} must be another agent below {}",
                a.n
            )));
        }
        // The payment is monotone in the clamped peer estimate, so its
        // extremes sit at the clamp boundaries.
        let lo = mechanism.billboard_payment(reports[j], f64::NEG_INFINITY);
        let hi = mechanism.billboard_payment(reports[j], f64::INFINITY);
        if lo == hi {
            return Err(config_error(format!(
                "invalid key `audit.observable`: payment {j} is constant"
            )));
        }
        settings = settings.with_range(lo.min(hi), lo.max(hi));
    }
    let constant = a.mechanism == AuditMechanism::Constant;
    let observable = a.observable;
    let mech = move |r: &[Report], rng: &mut crate::rng::SimRng| -> f64 {
        if constant {
            return 0.5;
        }
        let out = mechanism.run(r, rng).expect("length matches n");
        match observable {
            Observable::Estimate => out.estimate,
            Observable::Payment(j) => out.payments[j],
        }
    };
    let audit = dp_audit_histograms(mech, &reports, a.index, flipped, epsilon, &settings)?;
    let (lo, hi) = settings.range;
    let width = (hi - lo) / a.bins as f64;
    let mut csv = Csv::new(&["bin", "lo", "hi", "original", "neighbour"])?;
    for (b, (x, y)) in audit.original.iter().zip(&audit.neighbour).enumerate() {
        csv.row([
            b.to_string(),
            num(lo + width * b as f64),
            num(lo + width * (b + 1) as f64),
            x.to_string(),
            y.to_string(),
        ])?;
    }
    let verdict = audit.report.verdict;
    Ok((
        body(vec![
            ("mechanism", to_value(format!("{:?}", a.mechanism))?),
            ("index", json!(a.index)),
            ("flipped", to_value(flipped)?),
            ("report", to_value(&audit.report)?),
        ]),
        csv.finish()?,
        Some(verdict),
    ))
}

fn audit_equilibrium(config: &ExperimentConfig, trials: u64, seed: u64) -> Result<Rendered> {
    let scenario = config.scenario()?;
    let resolved = scenario.resolve(seed)?;
    let (report, records) = best_response_audit_with(&scenario, &resolved, trials, seed)?;
    let mut csv = Csv::new(&with_resolved(&[
        "bit",
        "trial",
        "peer_estimate",
        "truth_payment",
        "lie_payment",
    ]))?;
    let tail = resolved_fields(&resolved);
    for r in &records {
        csv.row(
            [
                r.bit.to_string(),
                r.trial.to_string(),
                num(r.peer_estimate),
                num(r.truth_payment),
                num(r.lie_payment),
            ]
            .into_iter()
            .chain(tail.iter().cloned()),
        )?;
    }
    let verdict = report.overall();
    Ok((
        body(vec![
            ("resolved", resolved_json(&scenario, &resolved)?),
            ("report", to_value(&report)?),
        ]),
        csv.finish()?,
        Some(verdict),
    ))
}

fn accuracy(config: &ExperimentConfig, trials: u64, seed: u64) -> Result<Rendered> {
    let scenario = config.scenario()?;
    let resolved = scenario.resolve(seed)?;
    let profile = config.strategy.resolve(resolved.tau);
    let (report, records) = accuracy_experiment(&scenario, &resolved, &profile, trials, seed)?;
    let mut csv = Csv::new(&with_resolved(&[
        "trial",
        "p_hat",
        "p_tilde",
        "abs_error",
        "success",
        "non_truthful",
        "participants",
    ]))?;
    let tail = resolved_fields(&resolved);
    for r in &records {
        csv.row(
            [
                r.trial.to_string(),
                num(r.p_hat),
                num(r.p_tilde),
                num(r.abs_error),
                r.success.to_string(),
                r.non_truthful.to_string(),
                r.participants.to_string(),
            ]
            .into_iter()
            .chain(tail.iter().cloned()),
        )?;
    }
    let non_truthful: Vec<f64> = records.iter().map(|r| r.non_truthful as f64).collect();
    let verdict = report.verdict;
    Ok((
        body(vec![
            ("resolved", resolved_json(&scenario, &resolved)?),
            (
                "non_truthful",
                to_value(MeanEstimate::from_values(&non_truthful))?,
            ),
            ("report", to_value(&report)?),
        ]),
        csv.finish()?,
        Some(verdict),
    ))
}

fn cost_scaling(config: &ExperimentConfig, trials: u64, seed: u64) -> Result<Rendered> {
    let ns = config.ns.as_ref().ok_or_else(|| missing("ns"))?;
    if ns.is_empty() {
        return Err(config_error("invalid key `ns`: empty list"));
    }
    if config.epsilon != Setting::Auto {
        return Err(config_error(
            "invalid key `epsilon`: cost-scaling sets epsilon by rule, use \"auto\"",
        ));
    }
    if config.beta != Setting::Auto {
        return Err(config_error(
            "invalid key `beta`: cost-scaling sets beta by rule, use \"auto\"",
        ));
    }
    if let Some(m) = config.cost_model {
        if m.kind != CostModelKind::ChenBound {
            return Err(config_error(
                "invalid key `cost_model`: cost-scaling uses the chen model",
            ));
        }
    }
    if config.n.is_some() {
        return Err(config_error(
            "invalid key `n`: cost-scaling takes population sizes from `ns`",
        ));
    }
    let base = ExperimentConfig {
        n: Some(ns[0]),
        cost_model: Some(config.cost_model.unwrap_or_else(CostModel::chen)),
        ..config.clone()
    }
    .scenario()?;
    let (report, records) = cost_scaling_experiment(&base, ns, trials, seed)?;
    let mut csv = Csv::new(&with_resolved(&[
        "n",
        "trial",
        "total_payment",
        "participants",
    ]))?;
    for r in &records {
        let row = report
            .rows
            .iter()
            .find(|row| row.n == r.n)
            .expect("every record has a row");
        csv.row(
            [
                r.n.to_string(),
                r.trial.to_string(),
                num(r.total_payment),
                r.participants.to_string(),
            ]
            .into_iter()
            .chain(resolved_fields(&row.resolved)),
        )?;
    }
    let verdict = report.verdict;
    Ok((
        body(vec![("report", to_value(&report)?)]),
        csv.finish()?,
        Some(verdict),
    ))
}
