//! Scenario runners, one per scenario kind, looked up by name at run time.
//!
//! A run parses and validates the scenario before touching the output
//! directory, writes the manifest, streams records to `results.jsonl`, and
//! finalizes the manifest with every file it produced.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::analysis::{self, lr_bound};
use crate::calibration::{
    alignment_loop, assign_idle_frequencies, idle_violations, optimize_interferometer, DeviceTwin,
    IdleOption, IdleRules, InterferometerConfig, OptimizerConfig, ShotNoise,
};
use crate::config::{Override, ScenarioConfig};
use crate::device::{sample_disorder, DeviceModel, DisorderMap, QubitId, DEFAULT_DISORDER_BOUND_MHZ};
use crate::error::{Error, Result};
use crate::evolution::{self, time_series_populations, Snapshot};
use crate::io::{
    write_matrix_csv, ColorScale, Heatmap, RecordKind, RecordSink, ResultRecord, RunManifest, RESULTS_FILE,
};
use crate::measurement::{post_select, sample_distribution_stream, ReadoutModel};
use crate::rng;
use crate::scenarios::{
    ctqw_scenario, disorder_sweep, mz_scenario, ring_decoherence, step_range, velocity_study,
    DisorderStepProtocol, MZLayout, VariantFlags, VelocityStudyConfig, SINGLE_WALKER_READOUT_NS,
    TWO_WALKER_READOUT_NS,
};

/// Output directory, record sink and the list of produced files.
pub struct RunContext {
    pub out_dir: PathBuf,
    pub device: DeviceModel,
    sink: RecordSink,
    outputs: Vec<String>,
}

impl RunContext {
    pub fn record(&mut self, record: &ResultRecord) -> Result<()> {
        self.sink.write(record)
    }

    pub fn emit(&mut self, kind: RecordKind, payload: impl Serialize, coords: &[(&str, f64)]) -> Result<()> {
        let mut r = ResultRecord::new(kind, payload)?;
        for (k, v) in coords {
            r = r.at(k, *v);
        }
        self.sink.write(&r)
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn write_csv(&mut self, name: &str, corner: &str, rows: &[String], cols: &[String], m: &DMatrix<f64>) -> Result<()> {
        let p = self.path(name);
        write_matrix_csv(&p, corner, rows, cols, m)
    }

    pub fn write_svg(&mut self, name: &str, heatmap: &Heatmap) -> Result<()> {
        let svg = heatmap.render()?;
        self.write_text(name, &svg)
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }
}

pub trait Runner: Send + Sync {
    fn kind(&self) -> &'static str;
    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()>;
}

type RunnerFactory = fn() -> Arc<dyn Runner>;

pub struct RunnerRegistry {
    factories: BTreeMap<String, RunnerFactory>,
}

impl Default for RunnerRegistry {
    fn default() -> Self {
        let mut r = RunnerRegistry { factories: BTreeMap::new() };
        r.register("ctqw", || Arc::new(CtqwRunner));
        r.register("front_velocity", || Arc::new(FrontVelocityRunner));
        r.register("mz", || Arc::new(MzRunner));
        r.register("mz_sweep", || Arc::new(MzSweepRunner));
        r.register("ring_decoherence", || Arc::new(RingDecoherenceRunner));
        r.register("velocity_study", || Arc::new(VelocityStudyRunner));
        r.register("alignment", || Arc::new(AlignmentRunner));
        r.register("interferometer_opt", || Arc::new(InterferometerRunner));
        r.register("idle_frequencies", || Arc::new(IdleFrequencyRunner));
        r
    }
}

impl RunnerRegistry {
    pub fn register(&mut self, kind: &str, factory: RunnerFactory) {
        self.factories.insert(kind.to_string(), factory);
    }

    pub fn kinds(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn get(&self, kind: &str) -> Result<Arc<dyn Runner>> {
        self.factories
            .get(kind)
            .map(|f| f())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "scenario kind",
                name: kind.to_string(),
                available: self.kinds().join(", "),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub records: usize,
    pub outputs: Vec<String>,
}

/// Loads, validates and executes a scenario file. Nothing is written unless
/// the scenario parses and its kind is known.
pub fn run(scenario_path: &Path, overrides: &[String], out_dir: &Path) -> Result<RunSummary> {
    run_restricted(scenario_path, overrides, out_dir, None)
}

/// As [`run`], refusing kinds outside `allowed`.
pub fn run_restricted(
    scenario_path: &Path,
    overrides: &[String],
    out_dir: &Path,
    allowed: Option<&[&str]>,
) -> Result<RunSummary> {
    let parsed: Vec<Override> = overrides.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let cfg = ScenarioConfig::load(scenario_path, &parsed)?;
    if let Some(allowed) = allowed {
        if !allowed.contains(&cfg.kind.as_str()) {
            return Err(Error::UnknownStrategy {
                kind: "scenario kind for this command",
                name: cfg.kind.clone(),
                available: allowed.join(", "),
            });
        }
    }
    let runner = RunnerRegistry::default().get(&cfg.kind)?;
    evolution::propagator(&cfg.method)?;
    let device = match &cfg.device_file {
        Some(f) => {
            let base = scenario_path.parent().unwrap_or(Path::new("."));
            DeviceModel::load(base.join(f))?
        }
        None => crate::device::default_device(),
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = RunManifest::begin(
        &scenario_path.display().to_string(),
        &cfg.name,
        &cfg.kind,
        cfg.seed,
        overrides.to_vec(),
    );
    manifest.write(out_dir)?;
    let mut ctx = RunContext {
        out_dir: out_dir.to_path_buf(),
        device,
        sink: RecordSink::create(out_dir.join(RESULTS_FILE))?,
        outputs: vec![RESULTS_FILE.to_string()],
    };
    let outcome = runner.run(&cfg, &mut ctx);
    if let Err(e) = &outcome {
        ctx.emit(RecordKind::Error, json!({ "kind": e.kind(), "message": e.to_string() }), &[])?;
    }
    ctx.sink.flush()?;
    manifest.outputs = ctx.outputs.clone();
    manifest.finish(outcome.as_ref().map(|_| ()).map_err(|e| e.to_string()));
    manifest.write(out_dir)?;
    outcome?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        records: ctx.sink.written(),
        outputs: ctx.outputs,
    })
}

fn qubits(labels: &[String]) -> Result<Vec<QubitId>> {
    labels.iter().map(|s| s.parse()).collect()
}

fn time_labels(times: &[f64]) -> Vec<String> {
    times.iter().map(|t| format!("{t}")).collect()
}

fn emit_populations(ctx: &mut RunContext, labels: &[String], snaps: &[Snapshot]) -> Result<DMatrix<f64>> {
    let m = time_series_populations(snaps)?;
    for (k, s) in snaps.iter().enumerate() {
        let pops: BTreeMap<&str, f64> = labels.iter().map(String::as_str).zip(m.column(k).iter().copied()).collect();
        ctx.emit(RecordKind::Populations, json!({ "populations": pops }), &[("time_ns", s.time_ns)])?;
    }
    Ok(m)
}

/// Walkers on the whole functional array.
pub struct CtqwRunner;

impl Runner for CtqwRunner {
    fn kind(&self) -> &'static str {
        "ctqw"
    }

    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
        let walkers = qubits(&cfg.param("walkers", vec!["U00Q0".to_string(), "U33Q2".to_string()])?)?;
        let t_max: f64 = cfg.param("t_max_ns", 600.0)?;
        let step: f64 = cfg.param("step_ns", 10.0)?;
        let shots: Option<u64> = cfg.optional_param("shots")?;
        let readout_errors: bool = cfg.param("readout_errors", false)?;
        let thermal: bool = cfg.param("thermal_excitation", false)?;
        let post: bool = cfg.param("post_select", false)?;

        let mut scenario = ctqw_scenario(&ctx.device, &walkers, t_max, step)?;
        scenario.method = cfg.method.clone();
        let (prepared, snaps) = scenario.evolve(&ctx.device)?;
        let labels = prepared.graph.labels();
        let m = emit_populations(ctx, &labels, &snaps)?;
        ctx.write_csv("populations.csv", "qubit", &labels, &time_labels(&scenario.times_ns), &m)?;

        let last = snaps.last().expect("time grid is nonempty");
        let final_pops: BTreeMap<QubitId, f64> = labels
            .iter()
            .zip(last.state.populations())
            .map(|(l, p)| Ok((l.parse()?, p)))
            .collect::<Result<_>>()?;
        let map = Heatmap::device(&ctx.device, &final_pops, ColorScale::Sequential).titled(
            &format!("populations at {} ns", last.time_ns),
            "column",
            "row",
        );
        ctx.write_svg("final_populations.svg", &map)?;

        if let Some(n_shots) = shots {
            let readout = if readout_errors {
                ReadoutModel::from_device(&ctx.device, &prepared.graph, thermal)?
            } else {
                ReadoutModel::perfect(prepared.graph.n_sites())
            };
            for (k, s) in snaps.iter().enumerate() {
                let counts = sample_distribution_stream(
                    s.state.basis().states(),
                    &s.state.probabilities(),
                    &readout,
                    n_shots,
                    cfg.seed,
                    k as u64,
                )?;
                let (kept, retention) = if post {
                    post_select(&counts, walkers.len())?
                } else {
                    (counts, 1.0)
                };
                let pops: BTreeMap<&str, f64> = labels.iter().map(String::as_str).zip(kept.populations()).collect();
                ctx.emit(
                    RecordKind::Populations,
                    json!({ "measured": pops, "shots": n_shots, "retained_shots": kept.n_shots, "retention": retention }),
                    &[("time_ns", s.time_ns)],
                )?;
            }
        }
        Ok(())
    }
}

/// Correlation fronts along the diagonal from a single walker and the linear
/// velocity fit through them.
pub struct FrontVelocityRunner;

impl Runner for FrontVelocityRunner {
    fn kind(&self) -> &'static str {
        "front_velocity"
    }

    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
        let source: QubitId = cfg.param("source", "U00Q0".to_string())?.parse()?;
        let steps: usize = cfg.param("diagonal_steps", 4usize)?;
        let t_max: f64 = cfg.param("t_max_ns", 600.0)?;
        let step: f64 = cfg.param("step_ns", 2.0)?;
        let signal_name: String = cfg.param("signal", "correlation".to_string())?;
        let floor: f64 = cfg.param("noise_floor", analysis::DEFAULT_NOISE_FLOOR)?;
        let u: f64 = cfg.param("anharmonicity_mhz", -248.9)?;

        let mut scenario = ctqw_scenario(&ctx.device, &[source], t_max, step)?;
        scenario.method = cfg.method.clone();
        let (prepared, snaps) = scenario.evolve(&ctx.device)?;
        let (r0, c0) = source.grid_position();
        let s = prepared.graph.require(&source.to_string())?;
        let mut targets = Vec::new();
        for k in 1..=steps {
            let q = QubitId::from_grid(r0 + k, c0 + k)?;
            targets.push((q, prepared.graph.require(&q.to_string())?, k as f64 * SQRT_2));
        }
        let signal = analysis::front_signal(&signal_name)?;
        for &(q, j, d) in &targets {
            for snap in &snaps {
                let c = analysis::correlation(&snap.state, s, j)?;
                ctx.emit(
                    RecordKind::Correlation,
                    json!({ "source": source, "target": q, "distance": d, "value": c }),
                    &[("time_ns", snap.time_ns)],
                )?;
            }
        }
        let pairs: Vec<(usize, f64)> = targets.iter().map(|&(_, j, d)| (j, d)).collect();
        let fronts = analysis::extract_fronts(&snaps, s, &pairs, &*signal, floor)?;
        for f in &fronts {
            ctx.emit(RecordKind::Fit, json!({ "front": f, "signal": signal.name() }), &[("distance", f.distance)])?;
        }
        let v = analysis::fit_velocity(&fronts)?;
        let j = prepared.graph.edges().first().map(|e| e.j_mhz).unwrap_or(crate::device::DEFAULT_J_EFF_MHZ);
        let vmax = lr_bound(j, u)?;
        ctx.emit(RecordKind::Fit, json!({ "velocity": v, "lr_bound": vmax, "below_bound": v.velocity < vmax }), &[])?;
        Ok(())
    }
}

fn variant(cfg: &ScenarioConfig) -> Result<VariantFlags> {
    Ok(VariantFlags {
        blocked: cfg.param("blocked", false)?,
        removed: cfg.param("removed", false)?,
    })
}

fn source_names(cfg: &ScenarioConfig) -> Result<Vec<String>> {
    cfg.param("sources", vec!["S".to_string()])
}

/// Time series of one interferometer configuration.
pub struct MzRunner;

impl Runner for MzRunner {
    fn kind(&self) -> &'static str {
        "mz"
    }

    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
        let layout = MZLayout::default();
        let sources = source_names(cfg)?;
        let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
        let protocol = DisorderStepProtocol {
            d_l: cfg.param("d_l_mhz", 0.0)?,
            d_r: cfg.param("d_r_mhz", 0.0)?,
        };
        let times = evolution::time_grid(0.0, cfg.param("t_max_ns", 1000.0)?, cfg.param("step_ns", 5.0)?)?;
        let mut scenario = mz_scenario(&ctx.device, &layout, &refs, protocol, variant(cfg)?, times)?;
        scenario.method = cfg.method.clone();
        let (prepared, snaps) = scenario.evolve(&ctx.device)?;
        let labels = prepared.graph.labels();
        let m = emit_populations(ctx, &labels, &snaps)?;
        ctx.write_csv("populations.csv", "qubit", &labels, &time_labels(&scenario.times_ns), &m)?;
        let d = prepared.graph.require(&layout.d.to_string())?;
        let (k, peak) = m.row(d).iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
        ctx.emit(
            RecordKind::Fit,
            json!({ "destination": layout.d, "peak_population": peak, "peak_time_ns": scenario.times_ns[k] }),
            &[],
        )?;
        Ok(())
    }
}

/// D population over the (d_L, d_R) disorder-step grid.
pub struct MzSweepRunner;

impl Runner for MzSweepRunner {
    fn kind(&self) -> &'static str {
        "mz_sweep"
    }

    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
        let layout = MZLayout::default();
        let sources = source_names(cfg)?;
        let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
        let n: usize = cfg.param("n_steps", 11usize)?;
        let max: f64 = cfg.param("max_step_mhz", 1.0)?;
        let default_readout = if refs.len() > 1 { TWO_WALKER_READOUT_NS } else { SINGLE_WALKER_READOUT_NS };
        let readout: f64 = cfg.param("readout_ns", default_readout)?;
        let flags = variant(cfg)?;
        let steps = step_range(max, n);
        let grid = disorder_sweep(&ctx.device, &layout, &refs, flags, &steps, &steps, readout, &cfg.method)?;

        let labels = time_labels(&steps);
        emit_grid(ctx, "fringe_grid", &grid, &steps, readout, ColorScale::Sequential, &labels)?;

        if cfg.param("interaction_signature", false)? && refs.len() == 2 {
            let singles = refs
                .iter()
                .map(|s| disorder_sweep(&ctx.device, &layout, &[s], flags, &steps, &steps, readout, &cfg.method))
                .collect::<Result<Vec<_>>>()?;
            let sig = analysis::interaction_signature(&grid, &singles[0], &singles[1])?;
            emit_grid(ctx, "interaction_signature", &sig, &steps, readout, ColorScale::Diverging, &labels)?;
        }
        Ok(())
    }
}

fn emit_grid(
    ctx: &mut RunContext,
    stem: &str,
    grid: &DMatrix<f64>,
    steps: &[f64],
    readout: f64,
    scale: ColorScale,
    labels: &[String],
) -> Result<()> {
    for a in 0..grid.nrows() {
        for b in 0..grid.ncols() {
            ctx.emit(
                RecordKind::FringeGrid,
                json!({ "grid": stem, "d_population": grid[(a, b)] }),
                &[("d_l_mhz", steps[a]), ("d_r_mhz", steps[b]), ("time_ns", readout)],
            )?;
        }
    }
    let stats = analysis::fringe_stats(grid)?;
    ctx.emit(RecordKind::Fit, json!({ "grid": stem, "fringe_stats": stats }), &[])?;
    ctx.write_csv(&format!("{stem}.csv"), "d_l\\d_r", labels, labels, grid)?;
    let map = Heatmap::from_matrix(grid, scale).titled(&format!("D population at {readout} ns"), "d_R step", "d_L step");
    ctx.write_svg(&format!("{stem}.svg"), &map)
}

/// Ring walk with and without T1/Tφ decoherence.
pub struct RingDecoherenceRunner;

impl Runner for RingDecoherenceRunner {
    fn kind(&self) -> &'static str {
        "ring_decoherence"
    }

    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
        let t1: f64 = cfg.param("t1_us", f64::INFINITY)?;
        let tphi: f64 = cfg.param("t_phi_us", 1.6)?;
        let times = evolution::time_grid(0.0, cfg.param("t_max_ns", 1000.0)?, cfg.param("step_ns", 5.0)?)?;
        let r = ring_decoherence(&ctx.device, t1, tphi, &times)?;
        for (k, &t) in times.iter().enumerate() {
            ctx.emit(
                RecordKind::Populations,
                json!({ "d_ideal": r.ideal[k], "d_decohered": r.noisy[k] }),
                &[("time_ns", t)],
            )?;
        }
        let m = DMatrix::from_fn(2, times.len(), |i, k| if i == 0 { r.ideal[k] } else { r.noisy[k] });
        ctx.write_csv("ring_destination.csv", "run", &["ideal".into(), "decohered".into()], &time_labels(&times), &m)?;
        ctx.emit(
            RecordKind::Fit,
            json!({
                "t1_us": if t1.is_finite() { Some(t1) } else { None },
                "t_phi_us": if tphi.is_finite() { Some(tphi) } else { None },
                "ideal_peak": r.ideal_peak,
                "decohered_peak": r.noisy_peak,
                "reduction": r.reduction,
            }),
            &[],
        )?;
        Ok(())
    }
}

/// Disorder-ensemble windowed velocities on a square lattice.
pub struct VelocityStudyRunner;

impl Runner for VelocityStudyRunner {
    fn kind(&self) -> &'static str {
        "velocity_study"
    }

    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
        let d = VelocityStudyConfig::default();
        let study = VelocityStudyConfig {
            size: cfg.param("size", d.size)?,
            seeds: cfg.param("seeds", d.seeds)?,
            bound_mhz: cfg.param("bound_mhz", d.bound_mhz)?,
            j_mhz: cfg.param("j_mhz", d.j_mhz)?,
            t_max_ns: cfg.param("t_max_ns", d.t_max_ns)?,
            step_ns: cfg.param("step_ns", d.step_ns)?,
            max_window_index: cfg.param("max_window_index", d.max_window_index)?,
            signal: cfg.param("signal", d.signal)?,
            master_seed: cfg.seed,
        };
        let r = velocity_study(&study)?;
        for (s, fronts) in r.fronts.iter().enumerate() {
            for f in fronts {
                ctx.emit(RecordKind::Fit, json!({ "front": f }), &[("seed_index", s as f64), ("distance", f.distance)])?;
            }
        }
        for (k, &d0) in r.d0.iter().enumerate() {
            ctx.emit(
                RecordKind::Fit,
                json!({ "window_start": d0, "mean_velocity": r.mean[k], "std_velocity": r.std[k] }),
                &[("d0", d0)],
            )?;
        }
        let m = DMatrix::from_fn(r.per_seed.len(), r.d0.len(), |s, k| r.per_seed[s][k]);
        let rows: Vec<String> = (0..r.per_seed.len()).map(|s| s.to_string()).collect();
        ctx.write_csv("window_velocities.csv", "seed\\d0", &rows, &time_labels(&r.d0), &m)
    }
}

fn twin_region(cfg: &ScenarioConfig, device: &DeviceModel) -> Result<(DeviceTwin, f64)> {
    let bound: f64 = cfg.param("bound_mhz", DEFAULT_DISORDER_BOUND_MHZ)?;
    let (r0, c0) = (cfg.param("row", 0usize)?, cfg.param("col", 0usize)?);
    let (rows, cols) = (cfg.param("rows", 3usize)?, cfg.param("cols", 3usize)?);
    let probe = DeviceTwin::block(device.clone(), DisorderMap::default(), r0, c0, rows, cols)?;
    let hidden = sample_disorder(probe.region.iter().copied(), bound, cfg.seed)?;
    Ok((DeviceTwin { hidden, ..probe }, bound))
}

fn optimizer(cfg: &ScenarioConfig, base: OptimizerConfig) -> Result<OptimizerConfig> {
    Ok(OptimizerConfig {
        max_iterations: cfg.param("max_iterations", base.max_iterations)?,
        init_scale: cfg.param("init_scale_mhz", base.init_scale)?,
        cost_tolerance: cfg.param("cost_tolerance", base.cost_tolerance)?,
        x_tolerance: cfg.param("x_tolerance_mhz", base.x_tolerance)?,
        restarts: cfg.param("restarts", base.restarts)?,
    })
}

/// Swap-data fitting and sign-checked corrections on a planted twin.
pub struct AlignmentRunner;

impl Runner for AlignmentRunner {
    fn kind(&self) -> &'static str {
        "alignment"
    }

    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
        let (twin, bound) = twin_region(cfg, &ctx.device)?;
        let rounds: usize = cfg.param("rounds", 5usize)?;
        let noise = cfg
            .optional_param::<u64>("shots")?
            .map(|shots| ShotNoise { shots, seed: cfg.seed });
        let opt = optimizer(cfg, OptimizerConfig::default())?;
        let report = alignment_loop(&twin, rounds, &opt, noise)?;
        for step in &report.log {
            ctx.emit(RecordKind::CalibrationStep, step, &[("round", step.round as f64)])?;
        }
        let residual = twin.true_offsets(&report.correction);
        ctx.emit(
            RecordKind::Fit,
            json!({
                "planted_bound_mhz": bound,
                "hidden": twin.hidden,
                "correction": report.correction,
                "distances": report.distances,
                "residual_max_mhz": report.residual_max_mhz,
                "frequency_config": report.config,
            }),
            &[],
        )?;
        let mean = residual.offsets.values().sum::<f64>() / residual.offsets.len() as f64;
        let centered: BTreeMap<QubitId, f64> = residual.offsets.iter().map(|(q, v)| (*q, v - mean)).collect();
        let map = Heatmap::device(&ctx.device, &centered, ColorScale::Diverging).titled("residual disorder (MHz)", "column", "row");
        ctx.write_svg("residual_disorder.svg", &map)
    }
}

/// Two-stage interferometer tuning on a planted twin.
pub struct InterferometerRunner;

impl Runner for InterferometerRunner {
    fn kind(&self) -> &'static str {
        "interferometer_opt"
    }

    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
        let layout = MZLayout::default();
        let bound: f64 = cfg.param("bound_mhz", DEFAULT_DISORDER_BOUND_MHZ)?;
        let hidden = sample_disorder(layout.sites(), bound, cfg.seed)?;
        let twin = DeviceTwin::new(ctx.device.clone(), hidden, layout.sites())?;
        let base = InterferometerConfig::default();
        let config = InterferometerConfig {
            stage1: optimizer(cfg, base.stage1)?,
            stage2: OptimizerConfig {
                init_scale: cfg.param("stage2_init_scale_mhz", base.stage2.init_scale)?,
                ..optimizer(cfg, base.stage2)?
            },
            target: cfg.param("target", base.target)?,
            arm_floor: cfg.param("arm_floor", base.arm_floor)?,
            ..base
        };
        let report = optimize_interferometer(&twin, &layout, &config)?;
        for (stage, res) in [("stage1", &report.stage1), ("stage2", &report.stage2)] {
            for h in &res.history {
                ctx.emit(
                    RecordKind::CalibrationStep,
                    json!({ "stage": stage, "iteration": h.iteration, "cost": h.best_cost, "step": h.step }),
                    &[("iteration", h.iteration as f64)],
                )?;
            }
            ctx.emit(
                RecordKind::CalibrationStep,
                json!({ "stage": stage, "final_cost": res.cost, "parameters": res.x, "accepted": true }),
                &[],
            )?;
        }
        ctx.emit(
            RecordKind::Fit,
            json!({
                "d_before": report.d_before,
                "d_after_stage1": report.d_after_stage1,
                "d_after": report.d_after,
                "arm_ends_after_stage1": report.arm_ends_after_stage1,
                "met_target": report.met_target,
                "correction": report.correction,
            }),
            &[],
        )?;
        Ok(())
    }
}

/// Synthetic per-qubit frequency tables and a constraint-satisfying pick.
pub struct IdleFrequencyRunner;

pub fn synthetic_idle_tables(device: &DeviceModel, lo_ghz: f64, hi_ghz: f64, step_mhz: f64, seed: u64) -> Result<BTreeMap<QubitId, Vec<IdleOption>>> {
    if !(step_mhz > 0.0 && hi_ghz > lo_ghz) {
        return Err(Error::InvalidArgument("idle table range must be increasing with a positive step".into()));
    }
    let n = ((hi_ghz - lo_ghz) * 1e3 / step_mhz).floor() as usize + 1;
    device
        .functional_qubits()
        .enumerate()
        .map(|(i, q)| {
            let mut r = rng::task_rng(seed, i as u64);
            let t1 = rng::uniform_offsets(&mut r, n, 1.0);
            let max = device.params(q)?.max_frequency_ghz;
            let table: Vec<IdleOption> = (0..n)
                .map(|k| IdleOption {
                    frequency_ghz: lo_ghz + k as f64 * step_mhz * 1e-3,
                    t1_us: 12.0 + 6.0 * t1[k],
                })
                .filter(|o| o.frequency_ghz <= max)
                .collect();
            Ok((q, table))
        })
        .collect()
}

impl Runner for IdleFrequencyRunner {
    fn kind(&self) -> &'static str {
        "idle_frequencies"
    }

    fn run(&self, cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
        let tables = synthetic_idle_tables(
            &ctx.device,
            cfg.param("low_ghz", 4.9)?,
            cfg.param("high_ghz", 5.4)?,
            cfg.param("step_mhz", 5.0)?,
            cfg.seed,
        )?;
        let rules = IdleRules::default();
        let assignment = assign_idle_frequencies(&ctx.device, &tables, &rules, cfg.seed, cfg.param("restarts", 200usize)?)?;
        let violations = idle_violations(&ctx.device, &assignment, &rules);
        ctx.emit(RecordKind::Fit, json!({ "assignment": assignment, "violations": violations }), &[])?;
        let map = Heatmap::device(&ctx.device, &assignment, ColorScale::Sequential).titled("idle frequency (GHz)", "column", "row");
        ctx.write_svg("idle_frequencies.svg", &map)?;
        if !violations.is_empty() {
            return Err(Error::Infeasible { restarts: 0, constraint: violations.join("; ") });
        }
        Ok(())
    }
}

/// Re-derives front fits and velocity from stored correlation records, and
/// fringe statistics from stored grid records.
pub fn analyze_records(records: &[ResultRecord]) -> Result<Vec<ResultRecord>> {
    let mut series: BTreeMap<String, (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut grids: BTreeMap<String, BTreeMap<(u64, u64), f64>> = BTreeMap::new();
    for r in records {
        match r.kind {
            RecordKind::Correlation => {
                let target = r.payload["target"].as_str().unwrap_or_default().to_string();
                let d = r.payload["distance"].as_f64().unwrap_or(f64::NAN);
                let (Some(&t), Some(v)) = (r.coordinates.get("time_ns"), r.payload["value"].as_f64()) else {
                    return Err(Error::Config("correlation record without time or value".into()));
                };
                let e = series.entry(target).or_insert((d, Vec::new(), Vec::new()));
                e.1.push(t);
                e.2.push(v.abs());
            }
            RecordKind::FringeGrid => {
                let name = r.payload["grid"].as_str().unwrap_or("fringe_grid").to_string();
                let (Some(a), Some(b), Some(v)) = (
                    r.coordinates.get("d_l_mhz"),
                    r.coordinates.get("d_r_mhz"),
                    r.payload["d_population"].as_f64(),
                ) else {
                    return Err(Error::Config("fringe record without coordinates".into()));
                };
                grids.entry(name).or_default().insert((a.to_bits(), b.to_bits()), v);
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    let mut fronts = Vec::new();
    for (target, (d, t, y)) in &series {
        let f = analysis::fit_front_signal(t, y, *d, analysis::DEFAULT_NOISE_FLOOR)?;
        out.push(ResultRecord::new(RecordKind::Fit, json!({ "target": target, "front": f }))?.at("distance", *d));
        fronts.push(f);
    }
    if fronts.len() >= 2 {
        fronts.sort_by(|a, b| a.distance.total_cmp(&b.distance));
        out.push(ResultRecord::new(RecordKind::Fit, json!({ "velocity": analysis::fit_velocity(&fronts)? }))?);
    }
    for (name, cells) in grids {
        let mut rows: Vec<u64> = cells.keys().map(|k| k.0).collect();
        let mut cols: Vec<u64> = cells.keys().map(|k| k.1).collect();
        let key = |b: &u64| f64::from_bits(*b);
        rows.sort_by(|a, b| key(a).total_cmp(&key(b)));
        rows.dedup();
        cols.sort_by(|a, b| key(a).total_cmp(&key(b)));
        cols.dedup();
        let mut m = DMatrix::zeros(rows.len(), cols.len());
        for (i, a) in rows.iter().enumerate() {
            for (j, b) in cols.iter().enumerate() {
                m[(i, j)] = *cells
                    .get(&(*a, *b))
                    .ok_or_else(|| Error::Config(format!("grid {name} is missing a cell")))?;
            }
        }
        out.push(ResultRecord::new(RecordKind::Fit, json!({ "grid": name, "fringe_stats": analysis::fringe_stats(&m)? }))?);
    }
    Ok(out)
}
