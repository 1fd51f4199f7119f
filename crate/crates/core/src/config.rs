//! INI backend specifications: `[flow]`, `[potential]`, `[neighborhoods]` and an optional `[run]`.

use std::path::Path;

use ini::{Ini, Properties};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{
    lorenz_cloud, BallUnion, Flow, Neighborhood, OdeFlow, OdePoint, Potential, RegionLabel, Sft,
    SymbolicSuspension, VectorField,
};
use crate::segments::CloudSlices;

#[derive(Clone, Debug, PartialEq)]
pub enum FlowSpec {
    Symbolic {
        transitions: Vec<Vec<bool>>,
        lambda_transitions: Option<Vec<Vec<bool>>>,
        roof: Vec<f64>,
        theta: f64,
    },
    Ode {
        field: VectorField,
        dt: f64,
        bound: f64,
        burn_in: f64,
        cloud_points: usize,
        cloud_dt: f64,
        cloud_file: Option<String>,
    },
}

/// Radii of `Λ`-hull, `U₁` and `U`: window radii on symbolic backends, ball
/// radii around the cloud on ODE backends.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodSpec {
    pub lambda_radius: f64,
    pub u1_radius: f64,
    pub u_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendSpec {
    pub flow: FlowSpec,
    pub potential: Potential,
    pub neighborhoods: NeighborhoodSpec,
    pub seed: u64,
    /// The source text, used for cache keys.
    pub canonical: String,
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn get<'a>(p: &'a Properties, section: &str, key: &str) -> Result<&'a str> {
    p.get(key)
        .map(str::trim)
        .ok_or_else(|| cfg(format!("missing key {section}.{key}")))
}

fn num(p: &Properties, section: &str, key: &str) -> Result<f64> {
    let raw = get(p, section, key)?;
    raw.parse()
        .map_err(|_| cfg(format!("{section}.{key} = {raw:?} is not a number")))
}

fn num_or(p: &Properties, section: &str, key: &str, default: f64) -> Result<f64> {
    if p.contains_key(key) {
        num(p, section, key)
    } else {
        Ok(default)
    }
}

fn list(p: &Properties, section: &str, key: &str) -> Result<Vec<f64>> {
    get(p, section, key)?
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| cfg(format!("{section}.{key} has a non-numeric entry {v:?}")))
        })
        .collect()
}

/// `"full:k"`, `"golden-mean"` or rows of 0/1 digits separated by commas (`"11,10"`).
fn matrix(raw: &str) -> Result<Vec<Vec<bool>>> {
    let raw = raw.trim();
    if let Some(k) = raw.strip_prefix("full:") {
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| cfg(format!("bad alphabet size in {raw:?}")))?;
        return Ok(vec![vec![true; k]; k]);
    }
    if raw == "golden-mean" {
        return Ok(Sft::golden_mean().matrix().to_vec());
    }
    raw.split(',')
        .map(|row| {
            row.trim()
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    _ => Err(cfg(format!(
                        "transition rows must be 0/1 digits, got {row:?}"
                    ))),
                })
                .collect()
        })
        .collect()
}

impl BackendSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| cfg(format!("malformed config: {e}")))?;
        let section = |name: &str| {
            ini.section(Some(name))
                .ok_or_else(|| cfg(format!("missing [{name}] section")))
        };
        let f = section("flow")?;
        let flow = match get(f, "flow", "kind")? {
            "symbolic-suspension" | "symbolic" => {
                let transitions = matrix(get(f, "flow", "transitions")?)?;
                let lambda_transitions = f.get("lambda_transitions").map(matrix).transpose()?;
                let k = transitions.len();
                let roof = if f.contains_key("roof") {
                    let r = list(f, "flow", "roof")?;
                    if r.len() == 1 {
                        vec![r[0]; k]
                    } else {
                        r
                    }
                } else {
                    vec![1.0; k]
                };
                FlowSpec::Symbolic {
                    transitions,
                    lambda_transitions,
                    roof,
                    theta: num_or(f, "flow", "theta", 0.01)?,
                }
            }
            "ode" | "lorenz" => {
                let field = match f.get("field").unwrap_or("lorenz").trim() {
                    "lorenz" => VectorField::Lorenz {
                        sigma: num_or(f, "flow", "sigma", 10.0)?,
                        rho: num_or(f, "flow", "rho", 28.0)?,
                        beta: num_or(f, "flow", "beta", 8.0 / 3.0)?,
                    },
                    "rotation" => VectorField::rotation(),
                    "linear" => {
                        let m = list(f, "flow", "matrix")?;
                        if m.len() != 9 {
                            return Err(cfg("flow.matrix needs 9 entries"));
                        }
                        VectorField::Linear([
                            [m[0], m[1], m[2]],
                            [m[3], m[4], m[5]],
                            [m[6], m[7], m[8]],
                        ])
                    }
                    other => return Err(cfg(format!("unknown vector field {other:?}"))),
                };
                FlowSpec::Ode {
                    field,
                    dt: num_or(f, "flow", "dt", 1e-3)?,
                    bound: num_or(f, "flow", "bound", 200.0)?,
                    burn_in: num_or(f, "flow", "burn_in", 100.0)?,
                    cloud_points: num_or(f, "flow", "cloud_points", 200_000.0)? as usize,
                    cloud_dt: num_or(f, "flow", "cloud_dt", 0.01)?,
                    cloud_file: f.get("cloud_file").map(|s| s.trim().to_string()),
                }
            }
            other => return Err(cfg(format!("unknown flow.kind {other:?}"))),
        };

        let p = section("potential")?;
        let potential = match get(p, "potential", "kind")? {
            "constant" => Potential::Constant {
                value: num_or(p, "potential", "value", 0.0)?,
            },
            "zero" => Potential::zero(),
            "first-symbol" => Potential::FirstSymbol {
                values: list(p, "potential", "values")?,
            },
            "symbol-holder" => Potential::SymbolHolder {
                weights: list(p, "potential", "weights")?,
                decay: num(p, "potential", "decay")?,
                depth: num(p, "potential", "depth")? as usize,
            },
            "coordinate" => Potential::Coordinate {
                index: num(p, "potential", "index")? as usize,
            },
            "affine" => Potential::Affine {
                offset: num_or(p, "potential", "offset", 0.0)?,
                coeffs: list(p, "potential", "coeffs")?,
            },
            other => return Err(cfg(format!("unknown potential.kind {other:?}"))),
        };

        let n = section("neighborhoods")?;
        let symbolic = matches!(flow, FlowSpec::Symbolic { .. });
        let neighborhoods = NeighborhoodSpec {
            lambda_radius: num_or(
                n,
                "neighborhoods",
                "lambda.radius",
                if symbolic { 8.0 } else { 0.5 },
            )?,
            u1_radius: num_or(n, "neighborhoods", "u1.radius", 1.0)?,
            u_radius: num_or(
                n,
                "neighborhoods",
                "u.radius",
                if symbolic { 0.0 } else { 2.0 },
            )?,
        };
        let seed = match ini.section(Some("run")) {
            Some(r) if r.contains_key("seed") => {
                let raw = get(r, "run", "seed")?;
                raw.parse()
                    .map_err(|_| cfg(format!("run.seed = {raw:?} is not an unsigned integer")))?
            }
            _ => 0,
        };
        Ok(BackendSpec {
            flow,
            potential,
            neighborhoods,
            seed,
            canonical: text.to_string(),
        })
    }

    pub fn is_symbolic(&self) -> bool {
        matches!(self.flow, FlowSpec::Symbolic { .. })
    }

    pub fn build_symbolic(&self) -> Result<SymbolicSuspension> {
        let FlowSpec::Symbolic {
            transitions,
            lambda_transitions,
            roof,
            theta,
        } = &self.flow
        else {
            return Err(Error::Backend("not a symbolic backend".into()));
        };
        let ambient = Sft::new(transitions.clone())?;
        let lambda = match lambda_transitions {
            Some(m) => Sft::new(m.clone())?,
            None => ambient.clone(),
        };
        let nb = &self.neighborhoods;
        SymbolicSuspension::with_lambda(
            ambient,
            lambda,
            roof.clone(),
            *theta,
            nb.u1_radius as usize,
            nb.u_radius as usize,
        )
    }

    pub fn build_ode(&self) -> Result<OdeSystem> {
        let FlowSpec::Ode {
            field,
            dt,
            bound,
            burn_in,
            cloud_points,
            cloud_dt,
            cloud_file,
        } = &self.flow
        else {
            return Err(Error::Backend("not an ODE backend".into()));
        };
        let flow = OdeFlow::new(field.clone(), *dt, *bound)?;
        let cloud = match cloud_file {
            Some(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| Error::Backend(format!("cannot open cloud {path}: {e}")))?;
                crate::io::read_cloud(std::io::BufReader::new(file))?
            }
            None => lorenz_cloud(&flow, *cloud_points, *burn_in, *cloud_dt)
                .map_err(|e| Error::Backend(e.to_string()))?,
        };
        OdeSystem::new(flow, cloud, &self.neighborhoods)
    }
}

/// An ODE flow with its sampled `Λ` and the ball-union neighborhoods around it.
#[derive(Clone, Debug)]
pub struct OdeSystem {
    pub flow: OdeFlow,
    pub cloud: Vec<OdePoint>,
    pub lambda: Neighborhood<OdePoint>,
    pub u1: Neighborhood<OdePoint>,
    pub u: Neighborhood<OdePoint>,
    radii: NeighborhoodSpec,
}

impl OdeSystem {
    pub fn new(flow: OdeFlow, cloud: Vec<OdePoint>, radii: &NeighborhoodSpec) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::Backend("empty point cloud".into()));
        }
        if !(radii.lambda_radius <= radii.u1_radius && radii.u1_radius < radii.u_radius) {
            return Err(Error::Config(
                "need Λ-hull radius ≤ U₁ radius < U radius".into(),
            ));
        }
        let region = |r: f64| BallUnion::new(cloud.clone(), r);
        Ok(OdeSystem {
            lambda: Neighborhood::new(RegionLabel::Lambda, region(radii.lambda_radius)),
            u1: Neighborhood::new(RegionLabel::U1, region(radii.u1_radius)),
            u: Neighborhood::new(RegionLabel::U, region(radii.u_radius)),
            flow,
            cloud,
            radii: radii.clone(),
        })
    }

    pub fn neighborhood(&self, label: RegionLabel) -> &Neighborhood<OdePoint> {
        match label {
            RegionLabel::Lambda => &self.lambda,
            RegionLabel::U1 => &self.u1,
            RegionLabel::U => &self.u,
        }
    }

    /// Candidate cloud for `(C)_t`: an even subsample of `Λ`, plus one seeded
    /// jittered copy per point for `O(U₁)` and `O(U)` (jitter up to half the radius).
    pub fn slices(&self, label: RegionLabel, cap: usize, seed: u64) -> CloudSlices<OdePoint> {
        let base = crate::partition::subsample(self.cloud.clone(), Some(cap));
        let mut points = base.clone();
        let jitter = match label {
            RegionLabel::Lambda => None,
            RegionLabel::U1 => Some(0.5 * self.radii.u1_radius),
            RegionLabel::U => Some(0.5 * self.radii.u_radius),
        };
        if let Some(r) = jitter {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            points.extend(base.iter().map(|x| self.flow.perturb(x, r, &mut rng)));
        }
        CloudSlices {
            points,
            neighborhood: self.neighborhood(label).clone(),
            n_samples: None,
        }
    }
}
