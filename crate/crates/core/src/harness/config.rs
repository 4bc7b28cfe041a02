//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Dotted prefixes group sections (`instance.a_true = 2`). Every key must be
//! consumed by the selected method: unknown or foreign-method keys are
//! errors, as are missing required keys. Defaults are documented in the
//! README key table.

use std::collections::HashMap;
use std::path::PathBuf;

use crate::baselines::{PgConfig, QLearnConfig, RsConfig};
use crate::clc_dp::{GridAxis, GridSpec};
use crate::error::{Error, Result};
use crate::model::{CostSchedule, SystemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Riccati,
    Clc,
    LearnBeta,
    Pg,
    Rs,
    Q,
    SweepBeta,
    Compare,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Riccati => "riccati",
            Method::Clc => "clc",
            Method::LearnBeta => "learn-beta",
            Method::Pg => "pg",
            Method::Rs => "rs",
            Method::Q => "q",
            Method::SweepBeta => "sweep-beta",
            Method::Compare => "compare",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "riccati" => Method::Riccati,
            "clc" => Method::Clc,
            "learn-beta" => Method::LearnBeta,
            "pg" => Method::Pg,
            "rs" => Method::Rs,
            "q" => Method::Q,
            "sweep-beta" => Method::SweepBeta,
            "compare" => Method::Compare,
            other => return Err(Error::config(format!("unknown method `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Grid,
    ClosedForm,
}

impl BackendChoice {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "grid" => BackendChoice::Grid,
            "closed-form" => BackendChoice::ClosedForm,
            other => {
                return Err(Error::config(format!(
                    "unknown backend `{other}` (expected `grid` or `closed-form`)"
                )))
            }
        })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            BackendChoice::Grid => "grid",
            BackendChoice::ClosedForm => "closed-form",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClcMethodConfig {
    pub beta: Vec<f64>,
    pub backend: BackendChoice,
    pub refine_sweeps: usize,
    pub candidate_budget: u64,
    pub residual_threshold: Option<f64>,
    pub trace_path: Option<PathBuf>,
    pub table_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct LearnBetaMethodConfig {
    pub beta_init: Vec<f64>,
    pub alpha: f64,
    pub alpha_kappa: Option<f64>,
    pub fd_delta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub fix_terminal: bool,
    pub divergence_factor: f64,
    pub backend: BackendChoice,
    pub candidate_budget: u64,
    pub residual_threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub a_true_values: Vec<f64>,
    pub beta1_min: f64,
    pub beta1_max: f64,
    pub beta1_count: usize,
    pub backend: BackendChoice,
}

#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub seeds: u64,
    pub learn_beta: LearnBetaMethodConfig,
    pub pg: PgConfig,
    pub rs: RsConfig,
    pub q: QLearnConfig,
}

#[derive(Debug, Clone)]
pub enum MethodConfig {
    Riccati,
    Clc(ClcMethodConfig),
    LearnBeta(LearnBetaMethodConfig),
    Pg(PgConfig),
    Rs(RsConfig),
    Q(QLearnConfig),
    SweepBeta(SweepConfig),
    Compare(CompareConfig),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub output: PathBuf,
    pub instance: SystemInstance,
    pub cost: CostSchedule,
    pub grids: GridSpec,
    pub method_config: MethodConfig,
    /// Raw key/value pairs in file order, echoed into the manifest.
    pub raw: Vec<(String, String)>,
}

/// Tracks which keys were consumed so leftovers can be reported as errors.
struct KeyBag {
    values: HashMap<String, String>,
    order: Vec<String>,
    consumed: HashMap<String, bool>,
}

impl KeyBag {
    fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        let mut order = Vec::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", lineno + 1)));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(Error::config(format!("duplicate key `{key}`")));
            }
            order.push(key);
        }
        let consumed = order.iter().map(|k| (k.clone(), false)).collect();
        Ok(Self {
            values,
            order,
            consumed,
        })
    }

    fn raw(&self) -> Vec<(String, String)> {
        self.order
            .iter()
            .map(|k| (k.clone(), self.values[k].clone()))
            .collect()
    }

    fn touch(&mut self, key: &str) -> Option<&str> {
        if let Some(flag) = self.consumed.get_mut(key) {
            *flag = true;
        }
        self.values.get(key).map(|s| s.as_str())
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.touch(key)
            .map(str::to_string)
            .ok_or_else(|| Error::config(format!("missing key `{key}`")))
    }

    fn f64(&mut self, key: &str) -> Result<f64> {
        parse_f64(key, &self.require(key)?)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.touch(key) {
            Some(v) => parse_f64(key, &v.to_string()),
            None => Ok(default),
        }
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.touch(key) {
            Some(v) => parse_f64(key, &v.to_string()).map(Some),
            None => Ok(None),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.touch(key) {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::config(format!("key `{key}`: expected an integer"))),
            None => Ok(default),
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.touch(key) {
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| Error::config(format!("key `{key}`: expected an integer"))),
            None => Ok(default),
        }
    }

    fn usize_req(&mut self, key: &str) -> Result<usize> {
        self.require(key)?
            .parse::<usize>()
            .map_err(|_| Error::config(format!("key `{key}`: expected an integer")))
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.touch(key) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::config(format!(
                "key `{key}`: expected true/false, got `{v}`"
            ))),
            None => Ok(default),
        }
    }

    fn list_f64(&mut self, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|part| parse_f64(key, part.trim()))
            .collect()
    }

    fn string_opt(&mut self, key: &str) -> Option<String> {
        self.touch(key).map(str::to_string)
    }

    fn leftovers(&self) -> Option<String> {
        self.order
            .iter()
            .find(|k| !self.consumed[k.as_str()])
            .cloned()
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::config(format!("key `{key}`: expected a number, got `{value}`")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, None, None)
    }

    pub fn parse_with_overrides(
        text: &str,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<Self> {
        let mut bag = KeyBag::parse(text)?;
        let raw = bag.raw();
        let method = Method::parse(&bag.require("method")?)?;
        let seed = seed_override.map(Ok).unwrap_or_else(|| bag.u64_or("seed", 0))?;
        if seed_override.is_some() {
            bag.touch("seed");
        }
        let config_output = bag.string_opt("output").map(PathBuf::from);
        let output = out_override
            .or(config_output)
            .unwrap_or_else(|| PathBuf::from(format!("{}.csv", method.tag())));

        let instance = SystemInstance::new(
            bag.f64("instance.a_true")?,
            bag.f64("instance.b_true")?,
            bag.f64("instance.a_model")?,
            bag.f64("instance.b_model")?,
            bag.f64("instance.x0")?,
            bag.usize_req("instance.horizon")?,
        )?;
        let cost = CostSchedule::new(bag.list_f64("cost.q")?, bag.list_f64("cost.r")?)?;
        if cost.horizon() != instance.horizon {
            return Err(Error::config(format!(
                "cost horizon {} does not match instance.horizon {}",
                cost.horizon(),
                instance.horizon
            )));
        }
        let grids = GridSpec::new(
            bag.f64_or("grids.x_min", -2.0)?,
            bag.f64_or("grids.x_max", 2.0)?,
            bag.usize_or("grids.n_x", 81)?,
            bag.f64_or("grids.u_min", -3.0)?,
            bag.f64_or("grids.u_max", 3.0)?,
            bag.usize_or("grids.n_u", 241)?,
            bag.f64_or("grids.xhat_min", -2.0)?,
            bag.f64_or("grids.xhat_max", 2.0)?,
            bag.usize_or("grids.n_xhat", 81)?,
        )?;

        let method_config = match method {
            Method::Riccati => MethodConfig::Riccati,
            Method::Clc => MethodConfig::Clc(ClcMethodConfig {
                beta: bag.list_f64("clc.beta")?,
                backend: BackendChoice::parse(
                    bag.touch("clc.backend").unwrap_or("grid").to_string().as_str(),
                )?,
                refine_sweeps: bag.usize_or("clc.refine_sweeps", 0)?,
                candidate_budget: bag.u64_or("clc.candidate_budget", 1_000_000)?,
                residual_threshold: bag.f64_opt("clc.residual_threshold")?,
                trace_path: bag.string_opt("clc.trace").map(PathBuf::from),
                table_path: bag.string_opt("clc.table_out").map(PathBuf::from),
            }),
            Method::LearnBeta => MethodConfig::LearnBeta(parse_learn_beta(&mut bag)?),
            Method::Pg => MethodConfig::Pg(parse_pg(&mut bag, seed)?),
            Method::Rs => MethodConfig::Rs(parse_rs(&mut bag, seed)?),
            Method::Q => MethodConfig::Q(parse_q(&mut bag, seed)?),
            Method::SweepBeta => MethodConfig::SweepBeta(SweepConfig {
                a_true_values: bag.list_f64("sweep.a_true_values")?,
                beta1_min: bag.f64_or("sweep.beta1_min", -3.0)?,
                beta1_max: bag.f64_or("sweep.beta1_max", 1.0)?,
                beta1_count: bag.usize_or("sweep.beta1_count", 41)?,
                backend: BackendChoice::parse(
                    bag.touch("sweep.backend")
                        .unwrap_or("closed-form")
                        .to_string()
                        .as_str(),
                )?,
            }),
            Method::Compare => MethodConfig::Compare(CompareConfig {
                seeds: bag.u64_or("compare.seeds", 10)?,
                learn_beta: parse_learn_beta(&mut bag)?,
                pg: parse_pg(&mut bag, seed)?,
                rs: parse_rs(&mut bag, seed)?,
                q: parse_q(&mut bag, seed)?,
            }),
        };

        if let Some(key) = bag.leftovers() {
            return Err(Error::config(format!(
                "unknown key `{key}` for method `{}`",
                method.tag()
            )));
        }

        let config = Self {
            method,
            seed,
            output,
            instance,
            cost,
            grids,
            method_config,
            raw,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let horizon = self.instance.horizon;
        match &self.method_config {
            MethodConfig::Clc(c) => {
                if c.beta.len() != horizon {
                    return Err(Error::config(format!(
                        "clc.beta has {} entries, horizon is {horizon}",
                        c.beta.len()
                    )));
                }
            }
            MethodConfig::LearnBeta(c) => {
                if c.beta_init.len() != horizon {
                    return Err(Error::config(format!(
                        "learn_beta.beta_init has {} entries, horizon is {horizon}",
                        c.beta_init.len()
                    )));
                }
            }
            MethodConfig::SweepBeta(c) => {
                if horizon != 2 {
                    return Err(Error::config(
                        "sweep-beta requires a two-stage instance".to_string(),
                    ));
                }
                if c.beta1_count < 2 {
                    return Err(Error::config("sweep.beta1_count must be >= 2".to_string()));
                }
                if c.a_true_values.is_empty() {
                    return Err(Error::config("sweep.a_true_values is empty".to_string()));
                }
            }
            MethodConfig::Compare(c) => {
                if c.learn_beta.beta_init.len() != horizon {
                    return Err(Error::config(format!(
                        "learn_beta.beta_init has {} entries, horizon is {horizon}",
                        c.learn_beta.beta_init.len()
                    )));
                }
                if c.seeds == 0 {
                    return Err(Error::config("compare.seeds must be >= 1".to_string()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn parse_learn_beta(bag: &mut KeyBag) -> Result<LearnBetaMethodConfig> {
    Ok(LearnBetaMethodConfig {
        beta_init: bag.list_f64("learn_beta.beta_init")?,
        alpha: bag.f64_or("learn_beta.alpha", 0.8)?,
        alpha_kappa: bag.f64_opt("learn_beta.alpha_kappa")?,
        fd_delta: bag.f64_or("learn_beta.fd_delta", 0.01)?,
        max_iters: bag.usize_or("learn_beta.max_iters", 25)?,
        tol: bag.f64_or("learn_beta.tol", 1e-6)?,
        fix_terminal: bag.bool_or("learn_beta.fix_terminal", true)?,
        divergence_factor: bag.f64_or("learn_beta.divergence_factor", 100.0)?,
        backend: BackendChoice::parse(
            bag.touch("learn_beta.backend")
                .unwrap_or("closed-form")
                .to_string()
                .as_str(),
        )?,
        candidate_budget: bag.u64_or("learn_beta.candidate_budget", 1_000_000)?,
        residual_threshold: bag.f64_opt("learn_beta.residual_threshold")?,
    })
}

fn parse_pg(bag: &mut KeyBag, seed: u64) -> Result<PgConfig> {
    let defaults = PgConfig::default();
    Ok(PgConfig {
        k_init: bag.f64_or("pg.k_init", defaults.k_init)?,
        sigma: bag.f64_or("pg.sigma", defaults.sigma)?,
        step_size: bag.f64_or("pg.step_size", defaults.step_size)?,
        episodes_per_update: bag.usize_or("pg.episodes_per_update", defaults.episodes_per_update)?,
        max_updates: bag.usize_or("pg.max_updates", defaults.max_updates)?,
        seed,
    })
}

fn parse_rs(bag: &mut KeyBag, seed: u64) -> Result<RsConfig> {
    let defaults = RsConfig::default();
    Ok(RsConfig {
        k_init: bag.f64_or("rs.k_init", defaults.k_init)?,
        sigma: bag.f64_or("rs.sigma", defaults.sigma)?,
        step_size: bag.f64_or("rs.step_size", defaults.step_size)?,
        directions_per_update: bag
            .usize_or("rs.directions_per_update", defaults.directions_per_update)?,
        max_updates: bag.usize_or("rs.max_updates", defaults.max_updates)?,
        seed,
    })
}

fn parse_q(bag: &mut KeyBag, seed: u64) -> Result<QLearnConfig> {
    let state_axis = GridAxis::new(
        bag.f64_or("q.x_min", -2.5)?,
        bag.f64_or("q.x_max", 4.5)?,
        bag.usize_or("q.n_x", 71)?,
    )?;
    let action_axis = GridAxis::new(
        bag.f64_or("q.u_min", -3.0)?,
        bag.f64_or("q.u_max", 3.0)?,
        bag.usize_or("q.n_u", 61)?,
    )?;
    let defaults = QLearnConfig::new(state_axis, action_axis);
    Ok(QLearnConfig {
        a_step: bag.f64_or("q.a_step", defaults.a_step)?,
        b_step: bag.f64_or("q.b_step", defaults.b_step)?,
        explore_eps: bag.f64_or("q.explore_eps", defaults.explore_eps)?,
        max_episodes: bag.usize_or("q.max_episodes", defaults.max_episodes)?,
        eval_every: bag.usize_or("q.eval_every", defaults.eval_every)?,
        seed,
        ..defaults
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
method = clc
instance.a_true = 2
instance.b_true = 1
instance.a_model = 1
instance.b_model = 1
instance.x0 = 0.5
instance.horizon = 2
cost.q = 0,1,1
cost.r = 1,1
clc.beta = -1.5,-1
";

    #[test]
    fn parses_a_minimal_clc_config() {
        let config = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(config.method, Method::Clc);
        assert_eq!(config.instance.a_true, 2.0);
        assert_eq!(config.grids.u.n, 241); // default
        match &config.method_config {
            MethodConfig::Clc(c) => {
                assert_eq!(c.beta, vec![-1.5, -1.0]);
                assert_eq!(c.backend, BackendChoice::Grid);
            }
            other => panic!("wrong method config: {other:?}"),
        }
    }

    #[test]
    fn missing_required_key_is_named() {
        let text = BASE.replace("clc.beta = -1.5,-1\n", "");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("clc.beta"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{BASE}bogus.key = 1\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("bogus.key"), "{err}");
    }

    #[test]
    fn foreign_method_key_is_rejected() {
        let text = format!("{BASE}pg.sigma = 0.5\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("pg.sigma"), "{err}");
    }

    #[test]
    fn comments_blank_lines_and_overrides() {
        let text = format!("# header\n\n{BASE}seed = 7\noutput = custom.csv\n");
        let config = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.output, PathBuf::from("custom.csv"));
        let config = ExperimentConfig::parse_with_overrides(
            &text,
            Some(11),
            Some(PathBuf::from("o.csv")),
        )
        .unwrap();
        assert_eq!(config.seed, 11);
        assert_eq!(config.output, PathBuf::from("o.csv"));
    }

    #[test]
    fn beta_length_must_match_horizon() {
        let text = BASE.replace("clc.beta = -1.5,-1", "clc.beta = -1.5");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("horizon"), "{err}");
    }

    #[test]
    fn duplicate_keys_rejected() {
        let text = format!("{BASE}instance.x0 = 0.7\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn sweep_requires_two_stages() {
        let text = "\
method = sweep-beta
instance.a_true = 2
instance.b_true = 1
instance.a_model = 1
instance.b_model = 1
instance.x0 = 0.5
instance.horizon = 1
cost.q = 0,1
cost.r = 1
sweep.a_true_values = 1.5,2.0
";
        assert!(ExperimentConfig::parse(text).is_err());
    }
}
