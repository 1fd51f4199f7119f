//! Backend-driven subcommands. Each writes its artifacts into the output directory.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thermoflow::decomposition::decompose_collection;
use thermoflow::equilibrium::{
    gibbs_lower, gibbs_upper, invariance_defect, limit_candidate, MeasureKind,
};
use thermoflow::io;
use thermoflow::partition::pressure as estimate_pressure;
use thermoflow::regularity::{
    bowen_distortion, obstruction_pressure_proxy, obstruction_pressure_symbolic, ExpansivityReport,
};
use thermoflow::specification::{verify, GlueParams, SearchBudget};
use thermoflow::{
    Error, Flow, Glue, OrbitSegment, Potential, Provenance, RegionLabel, SegmentCollection,
    Splitter, SymbolicSuspension,
};

use crate::backend::Ctx;
use crate::failure::{Failure, Outcome};
use crate::output::{from_num, num, sig12, write_bytes, write_json, write_lines};
use crate::settings::RunConfig;

pub fn parse_label(s: &str) -> Result<RegionLabel, String> {
    RegionLabel::parse(s).ok_or_else(|| format!("expected lambda, u1 or u, got {s:?}"))
}

/// Independent random stream per purpose, all derived from the run seed.
fn rng_for(run: &RunConfig, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    rng.set_stream(stream);
    rng
}

/// `count` segments `(x, t)` with `t` drawn from `times` and `x` from `(C)_t`.
fn draw_segments<F: Flow>(
    ctx: &Ctx<F>,
    label: RegionLabel,
    times: &[f64],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> thermoflow::Result<Vec<OrbitSegment<F::Point>>> {
    let mut slices: BTreeMap<u64, Vec<F::Point>> = BTreeMap::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t = *times.choose(rng).ok_or(Error::EmptySlice(0.0))?;
        let slice = match slices.entry(t.to_bits()) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(ctx.source(label).slice(&ctx.flow, t)?),
        };
        let x = slice.choose(rng).ok_or(Error::EmptySlice(t))?;
        out.push(OrbitSegment::new(x.clone(), t));
    }
    Ok(out)
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Config(format!("cannot open {what} {}: {e}", path.display())))
}

fn read_segments<F: Flow>(
    ctx: &Ctx<F>,
    path: &Path,
) -> Result<SegmentCollection<F::Point>, Failure> {
    io::read_segments(&ctx.flow, open(path, "segments")?)
        .map_err(|e| Failure::Config(format!("malformed segments {}: {e}", path.display())))
}

#[derive(Args, Debug)]
pub struct PressureArgs {
    #[arg(long, default_value = "lambda", value_parser = parse_label)]
    pub collection: RegionLabel,
    /// JSON-lines output (default: <out-dir>/results.jsonl).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn pressure<F: Flow>(ctx: &Ctx<F>, run: &RunConfig, a: &PressureArgs) -> Outcome {
    let est = estimate_pressure(
        &ctx.flow,
        &ctx.phi,
        ctx.source(a.collection),
        run.scales.delta,
        run.eps,
        &run.t_grid(),
        &run.options(),
    )?;
    let records: Vec<Value> = est
        .t_grid
        .iter()
        .zip(&est.log_lambda)
        .zip(&est.n_points)
        .map(|((t, l), n)| {
            json!({
                "t": t,
                "log_lambda": num(*l),
                "n_points": n,
                "delta": est.delta,
                "eps": est.eps,
            })
        })
        .collect();
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| run.out_dir.join("results.jsonl"));
    write_lines(&path, &records)?;
    write_json(
        &run.out_dir.join("pressure.json"),
        &json!({
            "collection": a.collection.as_str(),
            "value": est.value,
            "intercept": est.intercept,
            "residual": est.residual,
            "delta": est.delta,
            "eps": est.eps,
            "t_grid": est.t_grid,
            "oracle": ctx.oracle,
        }),
    )?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SpecArgs {
    /// `lambda` glues segments of Λ×ℝ⁺ inside O(U₁); `u1` glues segments of O(U₁) inside O(U).
    #[arg(long, default_value = "lambda", value_parser = parse_label)]
    pub collection: RegionLabel,
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long, default_value_t = 5.0)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t0: f64,
    /// Segments to glue (JSON lines); drawn from the collection when absent.
    #[arg(long)]
    pub segments: Option<PathBuf>,
}

pub fn spec<F: Glue>(ctx: &Ctx<F>, run: &RunConfig, a: &SpecArgs) -> Outcome {
    let (hypothesis, container) = match a.collection {
        RegionLabel::Lambda => ("I0", RegionLabel::U1),
        RegionLabel::U1 => ("I1", RegionLabel::U),
        RegionLabel::U => {
            return Err(Failure::Config(
                "spec takes --collection lambda or u1".into(),
            ))
        }
    };
    let segments = match &a.segments {
        Some(p) => read_segments(ctx, p)?.segments,
        None => draw_segments(
            ctx,
            a.collection,
            &run.t_grid(),
            a.count,
            &mut rng_for(run, 1),
        )?,
    };
    let params = GlueParams {
        delta: run.scales.delta,
        tau_max: a.tau_max,
        t0: a.t0,
        container: ctx.region(container).clone(),
        budget: SearchBudget {
            starts: run.search_budget,
            seed: run.seed,
            ..SearchBudget::default()
        },
        n_samples: run.n_samples,
    };
    let cert = ctx.flow.glue(&segments, &params)?;
    let report = verify(
        &ctx.flow,
        &cert,
        ctx.region(container),
        a.tau_max,
        run.n_samples,
    )?;
    let status = match (report.passed, ctx.exact) {
        (true, true) => "certified",
        (true, false) => "proxy",
        _ => "unchecked",
    };
    let strings = |v: &[f64]| v.iter().map(|m| sig12(*m)).collect::<Vec<_>>();
    let inputs: Vec<Value> = cert
        .inputs
        .iter()
        .map(|s| json!({ "point": ctx.flow.point_to_json(&s.start), "t": s.t }))
        .collect();
    write_json(
        &run.out_dir
            .join(format!("spec-{}.json", a.collection.as_str())),
        &json!({
            "hypothesis": hypothesis,
            "collection": a.collection.as_str(),
            "container": container.as_str(),
            "status": status,
            "delta": cert.delta,
            "tau_max": a.tau_max,
            "t0": a.t0,
            "inputs": inputs,
            "y": ctx.flow.point_to_json(&cert.y),
            "gluing": cert.gluing,
            "transfer": cert.transfer,
            "margins": strings(&cert.margins),
            "verify": {
                "passed": report.passed,
                "gluing_ok": report.gluing_ok,
                "container_ok": report.container_ok,
                "margins": strings(&report.margins),
            },
        }),
    )?;
    if !report.passed {
        return Err(Failure::Compute(
            "certificate failed independent verification".into(),
        ));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExpansivityArgs {
    /// Half-width of the time window.
    #[arg(long, default_value_t = 4.0)]
    pub window: f64,
    /// Probes per tested point.
    #[arg(long, default_value_t = 16)]
    pub probes: usize,
    /// Points of Λ to test.
    #[arg(long, default_value_t = 64)]
    pub points: usize,
}

fn lambda_points<F: Flow>(
    ctx: &Ctx<F>,
    run: &RunConfig,
    a: &ExpansivityArgs,
) -> Result<Vec<F::Point>, Failure> {
    if run.eps <= 0.0 {
        return Err(Failure::Config("expansivity needs --eps > 0".into()));
    }
    let slice = ctx.source(RegionLabel::Lambda).slice(&ctx.flow, run.tmin)?;
    Ok(slice
        .choose_multiple(&mut rng_for(run, 2), a.points)
        .cloned()
        .collect())
}

pub fn expansivity_exact(
    ctx: &Ctx<SymbolicSuspension>,
    run: &RunConfig,
    a: &ExpansivityArgs,
) -> Outcome {
    let points = lambda_points(ctx, run, a)?;
    let r = obstruction_pressure_symbolic(
        &ctx.flow, &ctx.phi, &points, run.eps, a.window, a.probes, run.seed,
    )?;
    write_expansivity(ctx, run, r)
}

pub fn expansivity_proxy<F: Flow>(ctx: &Ctx<F>, run: &RunConfig, a: &ExpansivityArgs) -> Outcome {
    let points = lambda_points(ctx, run, a)?;
    let r = obstruction_pressure_proxy(
        &ctx.flow,
        &ctx.phi,
        &points,
        run.eps,
        a.window,
        a.probes,
        &run.t_grid(),
        run.scales.delta,
        &run.options(),
    )?;
    write_expansivity(ctx, run, r)
}

fn write_expansivity<F: Flow>(ctx: &Ctx<F>, run: &RunConfig, r: ExpansivityReport) -> Outcome {
    let below = r.p_perp == f64::NEG_INFINITY || ctx.oracle.is_some_and(|p| r.p_perp < p);
    let gap = match (below, ctx.exact) {
        (true, true) => "certified",
        (true, false) => "proxy",
        _ => "unchecked",
    };
    let mut doc = serde_json::to_value(&r)?;
    doc["p_lambda"] = ctx.oracle.map_or(Value::Null, num);
    doc["gap_status"] = json!(gap);
    write_json(&run.out_dir.join("expansivity.json"), &doc)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[arg(long, default_value = "u1", value_parser = parse_label)]
    pub collection: RegionLabel,
    /// Segments drawn per grid time.
    #[arg(long, default_value_t = 8)]
    pub per_t: usize,
    /// Radius of the excluded ball around the singularity (ODE backends).
    #[arg(long, default_value_t = 3.0)]
    pub r0: f64,
    /// Domain segments (JSON lines); drawn from the collection when absent.
    #[arg(long)]
    pub segments: Option<PathBuf>,
}

/// Potentials with the Bowen property on every suspension backend.
fn bowen_regular(phi: &Potential) -> bool {
    matches!(
        phi,
        Potential::Constant { .. } | Potential::FirstSymbol { .. } | Potential::SymbolHolder { .. }
    )
}

pub fn decompose<F: Flow, S: Splitter<F>>(
    ctx: &Ctx<F>,
    run: &RunConfig,
    a: &DecomposeArgs,
    splitter: &S,
    splitter_name: &str,
) -> Outcome
where
    F::Point: PartialEq,
{
    let domain = match &a.segments {
        Some(p) => read_segments(ctx, p)?,
        None => {
            let mut rng = rng_for(run, 3);
            let mut segments = Vec::new();
            for t in run.t_grid() {
                let slice = ctx.source(a.collection).slice(&ctx.flow, t)?;
                segments.extend(
                    slice
                        .choose_multiple(&mut rng, a.per_t)
                        .map(|x| OrbitSegment::new(x.clone(), t)),
                );
            }
            SegmentCollection::new(segments, a.collection.into())
        }
    };
    let d = decompose_collection(&ctx.flow, splitter, domain)?;
    let mut buf = Vec::new();
    io::write_segments(&ctx.flow, &mut buf, &d.domain)?;
    write_bytes(&run.out_dir.join("segments.jsonl"), &buf)?;
    let mut buf = Vec::new();
    io::write_decomposition(&mut buf, &d)?;
    write_bytes(&run.out_dir.join("decomposition.jsonl"), &buf)?;

    let induced = d.induce_on_lambda(&ctx.flow, ctx.region(RegionLabel::Lambda), run.n_samples)?;
    let cores = d.cores(&ctx.flow)?;
    let cores = SegmentCollection::new(
        cores.segments.into_iter().filter(|s| s.t > 0.0).collect(),
        Provenance::Derived,
    );
    let distortion = if run.eps > 0.0 && !cores.is_empty() {
        Some(bowen_distortion(
            &ctx.flow,
            &ctx.phi,
            &cores,
            run.eps,
            run.n_probe,
            run.seed,
        )?)
    } else {
        None
    };
    let bowen_status = match &distortion {
        None => "unchecked",
        Some(b) if b.unbounded => "unchecked",
        Some(_) if ctx.exact && bowen_regular(&ctx.phi) => "certified",
        Some(_) => "proxy",
    };
    let total: f64 = d.splits.iter().map(|s| s.total()).sum();
    let bad: f64 = d.splits.iter().map(|s| s.p + s.s).sum();
    let trivial = d.splits.iter().all(|s| s.p == 0.0 && s.s == 0.0);
    let gap_status = if d.is_empty() {
        "unchecked"
    } else if trivial && ctx.exact {
        "certified"
    } else {
        "proxy"
    };
    let fold_max = |f: fn(&thermoflow::Split) -> f64| d.splits.iter().map(f).fold(0.0, f64::max);
    write_json(
        &run.out_dir.join("decompose.json"),
        &json!({
            "collection": a.collection.as_str(),
            "splitter": splitter_name,
            "segments": d.len(),
            "induced": { "segments": induced.decomposition.len(), "empty": induced.empty },
            "max_prefix": fold_max(|s| s.p),
            "max_suffix": fold_max(|s| s.s),
            "bad_time_fraction": if total > 0.0 { bad / total } else { 0.0 },
            "distortion": distortion.as_ref().map(|b| json!({
                "eps": b.eps,
                "n_samples": b.n_samples,
                "k_hat": b.k_hat,
                "variation": b.variation,
                "growth_slope": b.growth_slope,
                "unbounded": b.unbounded,
            })),
            "checklist": { "II": bowen_status, "III": gap_status },
        }),
    )?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ConstructArgs {
    #[arg(long, default_value = "u1", value_parser = parse_label)]
    pub collection: RegionLabel,
    /// Riemann-sum slices per unit time in the time average.
    #[arg(long, default_value_t = 8.0)]
    pub slices_per_unit: f64,
}

pub fn construct<F: Flow>(ctx: &Ctx<F>, run: &RunConfig, a: &ConstructArgs) -> Outcome {
    let (mu, diagnostics, dict) = limit_candidate(
        &ctx.flow,
        &ctx.phi,
        ctx.source(a.collection),
        &run.t_grid(),
        a.slices_per_unit,
        run.scales.rho1,
        &run.options(),
    )?;
    let defect = invariance_defect(&ctx.flow, &mu, &dict, 1.0)?;
    let mut buf = Vec::new();
    io::write_measure(&ctx.flow, &mut buf, &mu)?;
    write_bytes(&run.out_dir.join("measure.jsonl"), &buf)?;
    write_json(
        &run.out_dir.join("construct.json"),
        &json!({
            "collection": a.collection.as_str(),
            "kind": mu.kind,
            "t": mu.t,
            "atoms": mu.len(),
            "total_mass": mu.total_mass(),
            "rho1": run.scales.rho1,
            "slices_per_unit": a.slices_per_unit,
            "invariance_shift": 1.0,
            "invariance_defect": defect,
            "fraction_lambda": mu.fraction_in(ctx.region(RegionLabel::Lambda)),
            "fraction_u1": mu.fraction_in(ctx.region(RegionLabel::U1)),
            "diagnostics": diagnostics,
        }),
    )?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct GibbsArgs {
    /// Segments of Λ×ℝ⁺ to test.
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Measure atoms (default: <out-dir>/measure.jsonl).
    #[arg(long)]
    pub measure: Option<PathBuf>,
    /// Pressure in the bounds; defaults to the exact value, then pressure.json, then a fresh estimate.
    #[arg(long)]
    pub p_hat: Option<f64>,
    /// Pass threshold for the smallest lower ratio.
    #[arg(long)]
    pub floor: Option<f64>,
    /// Pass threshold for the largest upper ratio.
    #[arg(long)]
    pub ceiling: Option<f64>,
}

fn read_json(path: &Path) -> Option<Value> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn p_hat<F: Flow>(ctx: &Ctx<F>, run: &RunConfig, a: &GibbsArgs) -> Result<(f64, String), Failure> {
    if let Some(p) = a.p_hat {
        return Ok((p, "given".into()));
    }
    if let Some(p) = ctx.oracle {
        return Ok((p, "oracle".into()));
    }
    if let Some(p) = read_json(&run.out_dir.join("pressure.json"))
        .and_then(|v| v.get("value").and_then(from_num))
    {
        return Ok((p, "estimate".into()));
    }
    let est = estimate_pressure(
        &ctx.flow,
        &ctx.phi,
        ctx.source(RegionLabel::Lambda),
        run.scales.delta,
        run.eps,
        &run.t_grid(),
        &run.options(),
    )?;
    Ok((est.value, "estimate".into()))
}

pub fn gibbs<F: Flow>(ctx: &Ctx<F>, run: &RunConfig, a: &GibbsArgs) -> Outcome {
    let path = a
        .measure
        .clone()
        .unwrap_or_else(|| run.out_dir.join("measure.jsonl"));
    let t = read_json(&run.out_dir.join("construct.json"))
        .and_then(|v| v.get("t").and_then(Value::as_f64))
        .unwrap_or(0.0);
    let mu = io::read_measure(
        &ctx.flow,
        open(&path, "measure")?,
        MeasureKind::LimitCandidate,
        t,
    )
    .map_err(|e| Failure::Config(format!("malformed measure {}: {e}", path.display())))?;
    let (p_hat, source) = p_hat(ctx, run, a)?;
    let segments = draw_segments(
        ctx,
        RegionLabel::Lambda,
        &run.t_grid(),
        a.count,
        &mut rng_for(run, 4),
    )?;
    let lower = gibbs_lower(
        &ctx.flow,
        &ctx.phi,
        &mu,
        &segments,
        run.scales.rho,
        p_hat,
        &source,
        a.floor,
    )?;
    let upper = gibbs_upper(
        &ctx.flow,
        &ctx.phi,
        &mu,
        &segments,
        run.scales.gamma,
        p_hat,
        &source,
        None,
        &run.options(),
        a.ceiling,
    )?;
    write_json(
        &run.out_dir.join("gibbs.json"),
        &json!({
            "p_hat": p_hat,
            "p_source": source,
            "segments": segments.len(),
            "lower": lower,
            "upper": upper,
        }),
    )?;
    Ok(())
}
