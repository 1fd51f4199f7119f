//! Run parameters: the `[run]` section of the config file, overridden by flags.

use std::path::PathBuf;

use clap::Args;
use ini::{Ini, Properties};
use thermoflow::partition::{t_grid, PartitionOptions};
use thermoflow::{Error, Result, Scales};

/// Flags shared by every backend-driven subcommand.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Backend description (INI).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for artifacts and the orbit cache.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub rho1: Option<f64>,
    #[arg(long)]
    pub tmin: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub tsteps: Option<usize>,
    /// Samples per Bowen trace on sampled backends.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Probes per point for `Φ_ε` and distortion estimates.
    #[arg(long)]
    pub n_probe: Option<usize>,
    /// Random restarts for the shadowing search.
    #[arg(long)]
    pub search_budget: Option<usize>,
    /// Cap on the candidate cloud per slice.
    #[arg(long)]
    pub max_candidates: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub scales: Scales,
    pub eps: f64,
    pub tmin: f64,
    pub tmax: f64,
    pub tsteps: usize,
    pub n_samples: Option<usize>,
    pub n_probe: usize,
    pub search_budget: usize,
    pub max_candidates: Option<usize>,
}

fn bad(key: &str, raw: &str) -> Error {
    Error::Config(format!("run.{key} = {raw:?} is not valid"))
}

fn read<T: std::str::FromStr>(run: Option<&Properties>, key: &str) -> Result<Option<T>> {
    match run.and_then(|r| r.get(key)) {
        Some(raw) => raw.trim().parse().map(Some).map_err(|_| bad(key, raw)),
        None => Ok(None),
    }
}

fn pick<T: std::str::FromStr>(
    flag: Option<T>,
    run: Option<&Properties>,
    key: &str,
) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => read(run, key),
    }
}

impl RunConfig {
    /// Flags win over `[run]` keys, which win over defaults.
    pub fn resolve(c: &Common, text: &str, config_seed: u64, symbolic: bool) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let run = ini.section(Some("run"));
        let delta = pick(c.delta, run, "delta")?.unwrap_or(0.05);
        let mut scales = Scales::from_delta(delta);
        if let Some(v) = pick(c.rho, run, "rho")? {
            scales.rho = v;
        }
        if let Some(v) = pick(c.rho1, run, "rho1")? {
            scales.rho1 = v;
        }
        if let Some(v) = pick(c.gamma, run, "gamma")? {
            scales.gamma = v;
        }
        let out_dir = match &c.out_dir {
            Some(p) => p.clone(),
            None => read::<String>(run, "out")?
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("out")),
        };
        let cfg = RunConfig {
            out_dir,
            seed: c.seed.unwrap_or(config_seed),
            scales,
            eps: pick(c.eps, run, "eps")?.unwrap_or(0.0),
            tmin: pick(c.tmin, run, "tmin")?.unwrap_or(4.0),
            tmax: pick(c.tmax, run, "tmax")?.unwrap_or(16.0),
            tsteps: pick(c.tsteps, run, "tsteps")?.unwrap_or(7),
            n_samples: pick(c.n_samples, run, "n_samples")?,
            n_probe: pick(c.n_probe, run, "n_probe")?.unwrap_or(16),
            search_budget: pick(c.search_budget, run, "search_budget")?.unwrap_or(64),
            max_candidates: pick(c.max_candidates, run, "max_candidates")?.or(if symbolic {
                None
            } else {
                Some(20_000)
            }),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.scales;
        for (name, v) in [
            ("delta", s.delta),
            ("rho", s.rho),
            ("rho1", s.rho1),
            ("gamma", s.gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Config(format!("eps must be ≥ 0, got {}", self.eps)));
        }
        if !(self.tmin.is_finite() && self.tmin > 0.0 && self.tmin < self.tmax) {
            return Err(Error::Config(format!(
                "need 0 < tmin < tmax, got [{}, {}]",
                self.tmin, self.tmax
            )));
        }
        if self.tmax.is_infinite() || self.tsteps < 2 {
            return Err(Error::Config(
                "t-grid needs a finite tmax and tsteps ≥ 2".into(),
            ));
        }
        Ok(())
    }

    pub fn t_grid(&self) -> Vec<f64> {
        t_grid(self.tmin, self.tmax, self.tsteps)
    }

    pub fn options(&self) -> PartitionOptions {
        PartitionOptions {
            n_probe: self.n_probe,
            seed: self.seed,
            n_samples: self.n_samples,
            max_candidates: self.max_candidates,
            ..PartitionOptions::default()
        }
    }

    /// Scale-relation guardrails; violations are reported, never fatal.
    pub fn warnings(&self) -> Vec<String> {
        let s = &self.scales;
        let mut out = Vec::new();
        if self.eps < 1000.0 * s.delta {
            out.push(format!(
                "eps = {} is below 1000·delta = {}",
                self.eps,
                1000.0 * s.delta
            ));
        }
        if !(8.0 * s.delta..=200.0 * s.delta).contains(&s.gamma) {
            out.push(format!(
                "gamma = {} is outside [8·delta, 200·delta] = [{}, {}]",
                s.gamma,
                8.0 * s.delta,
                200.0 * s.delta
            ));
        }
        if s.rho != 22.0 * s.delta {
            out.push(format!("rho = {} overrides 22·delta", s.rho));
        }
        if s.rho1 != 20.0 * s.delta {
            out.push(format!("rho1 = {} overrides 20·delta", s.rho1));
        }
        out
    }
}
