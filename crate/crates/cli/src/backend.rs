//! Backend construction and the on-disk orbit cache.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thermoflow::config::{FlowSpec, OdeSystem};
use thermoflow::flow::lorenz_cloud;
use thermoflow::io::{read_cloud, write_cloud};
use thermoflow::segments::{CylinderSlices, SliceSource};
use thermoflow::{
    BackendSpec, Error, Flow, Neighborhood, OdeFlow, OdePoint, Potential, RegionLabel, Result,
    SymbolicSuspension,
};

use crate::settings::RunConfig;

pub const LABELS: [RegionLabel; 3] = [RegionLabel::Lambda, RegionLabel::U1, RegionLabel::U];

fn slot(label: RegionLabel) -> usize {
    match label {
        RegionLabel::Lambda => 0,
        RegionLabel::U1 => 1,
        RegionLabel::U => 2,
    }
}

/// A flow with its potential, slice sources and neighborhoods.
pub struct Ctx<F: Flow> {
    pub flow: F,
    pub phi: Potential,
    sources: Vec<Box<dyn SliceSource<F>>>,
    regions: Vec<Neighborhood<F::Point>>,
    /// Exact pressure on `Λ`, when a closed form exists.
    pub oracle: Option<f64>,
    /// Distances and memberships are exact rather than sampled.
    pub exact: bool,
}

impl<F: Flow> Ctx<F> {
    pub fn source(&self, label: RegionLabel) -> &dyn SliceSource<F> {
        self.sources[slot(label)].as_ref()
    }

    pub fn region(&self, label: RegionLabel) -> &Neighborhood<F::Point> {
        &self.regions[slot(label)]
    }
}

pub enum Backend {
    Symbolic(Ctx<SymbolicSuspension>),
    Ode(Ctx<OdeFlow>),
}

/// Hex digest of everything that determines orbits.
pub fn backend_hash(spec: &BackendSpec) -> String {
    let digest = Sha256::digest(format!("{:?}", spec.flow).as_bytes());
    hex::encode(&digest[..8])
}

pub fn load(spec: &BackendSpec, run: &RunConfig) -> Result<Backend> {
    let phi = spec.potential.clone();
    if spec.is_symbolic() {
        let flow = spec.build_symbolic()?;
        return Ok(Backend::Symbolic(Ctx {
            sources: LABELS
                .iter()
                .map(|&l| Box::new(CylinderSlices(l)) as Box<dyn SliceSource<_>>)
                .collect(),
            regions: LABELS
                .iter()
                .map(|&l| Neighborhood::new(l, flow.region(l)))
                .collect(),
            oracle: flow.oracle_pressure(&phi),
            exact: true,
            flow,
            phi,
        }));
    }
    let sys = ode_system(spec, run)?;
    let cap = run.max_candidates.unwrap_or(sys.cloud.len());
    Ok(Backend::Ode(Ctx {
        sources: LABELS
            .iter()
            .map(|&l| Box::new(sys.slices(l, cap, run.seed)) as Box<dyn SliceSource<_>>)
            .collect(),
        regions: LABELS
            .iter()
            .map(|&l| sys.neighborhood(l).clone())
            .collect(),
        oracle: None,
        exact: false,
        flow: sys.flow,
        phi,
    }))
}

fn ode_system(spec: &BackendSpec, run: &RunConfig) -> Result<OdeSystem> {
    let FlowSpec::Ode {
        field,
        dt,
        bound,
        burn_in,
        cloud_points,
        cloud_dt,
        cloud_file,
    } = &spec.flow
    else {
        return Err(Error::Backend("not an ODE backend".into()));
    };
    let flow = OdeFlow::new(field.clone(), *dt, *bound)?;
    let cloud = match cloud_file {
        Some(path) => read_cloud_file(Path::new(path))?,
        None => {
            let span = burn_in + *cloud_points as f64 * cloud_dt;
            let name = format!("{}-x0-t{span}-dt{cloud_dt}.tfpc", backend_hash(spec));
            let path = run.out_dir.join("cache").join(name);
            cached_cloud(&path, || {
                lorenz_cloud(&flow, *cloud_points, *burn_in, *cloud_dt)
                    .map_err(|e| Error::Backend(e.to_string()))
            })?
        }
    };
    OdeSystem::new(flow, cloud, &spec.neighborhoods)
}

fn read_cloud_file(path: &Path) -> Result<Vec<OdePoint>> {
    let file = File::open(path)
        .map_err(|e| Error::Backend(format!("cannot open cloud {}: {e}", path.display())))?;
    read_cloud(BufReader::new(file)).map_err(|e| Error::Backend(e.to_string()))
}

/// Loads the cloud at `path`, or computes and stores it. Unreadable cache
/// entries are recomputed.
pub fn cached_cloud(
    path: &Path,
    compute: impl FnOnce() -> Result<Vec<OdePoint>>,
) -> Result<Vec<OdePoint>> {
    if let Ok(cloud) = read_cloud_file(path) {
        return Ok(cloud);
    }
    let cloud = compute()?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp: PathBuf = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp)?);
    write_cloud(&mut w, &cloud)?;
    w.flush()?;
    fs::rename(&tmp, path)?;
    Ok(cloud)
}
