//! Experiment stages: HDM, POD, ROM, ECSW, HPROM and comparison.
//!
//! Each stage reads what earlier stages left in a [`PipelineState`] and adds
//! its own products. A stage whose inputs are missing fails with
//! [`HarnessError::Pipeline`]; a model that blows up or whose solver fails is
//! *not* an error, it is recorded as [`Classification::DivergedAt`].

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use pmor::hyper::{assemble_training, nnls_solve, EcswSampleSet, HyperreducedBackend};
use pmor::rom::{
    build_pod, precompute_quadratic, FullOrderBackend, LeftBasisStrategy, PodCriterion, PromSystem, QuadraticBackend,
    ReducedBackend, ReducedBasis, SnapshotRecorder, SnapshotSchedule, SnapshotSet, StrategyKind,
};
use pmor::timeint::{dirk2_tableau, dirk3_tableau, HdmSystem, ImplicitSystem, Integrator, Scheme, StageRecorder};
use pmor::ParamPoint;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, RomBackendKind, Stage};
use crate::error::{HarnessError, HarnessResult};
use crate::flow::FlowModel;
use crate::qoi::{relative_error, BoundQoi};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Classification {
    Completed,
    DivergedAt { t: f64, reason: DivergenceReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceReason {
    NonFinite,
    SolverFailure,
}

impl Classification {
    pub fn completed(&self) -> bool {
        matches!(self, Classification::Completed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Hdm,
    Prom,
    Hprom,
}

/// One simulated trajectory, reduced to QoI histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub kind: RunKind,
    pub strategy: Option<String>,
    pub basis: Option<String>,
    pub reduced_dim: Option<usize>,
    pub classification: Classification,
    /// Seconds spent inside the time-stepping loop.
    pub wall_clock: f64,
    pub newton_iterations: usize,
    pub steps: usize,
    pub times: Vec<f64>,
    /// QoI label to history, sampled at `times`.
    pub histories: BTreeMap<String, Vec<f64>>,
    /// Sampled cells and their share of all cells (HPROM only).
    pub sample_size: Option<usize>,
    pub sample_fraction: Option<f64>,
}

/// A labelled POD basis.
#[derive(Debug, Clone)]
pub struct NamedBasis {
    pub label: String,
    pub basis: ReducedBasis,
}

#[derive(Debug, Clone)]
pub struct NamedSample {
    /// `{strategy}_{basis label}`.
    pub label: String,
    pub strategy: String,
    pub basis: String,
    pub sample: EcswSampleSet,
}

/// Everything produced so far.
#[derive(Debug, Clone, Default)]
pub struct PipelineState {
    pub snapshots: Option<SnapshotSet>,
    pub hdm: Option<RunRecord>,
    pub bases: Vec<NamedBasis>,
    pub roms: Vec<RunRecord>,
    pub samples: Vec<NamedSample>,
    pub hproms: Vec<RunRecord>,
    /// Run label to QoI label to relative error in percent.
    pub errors: BTreeMap<String, BTreeMap<String, f64>>,
    /// Full HDM states at the QoI sampling times, kept when requested.
    pub hdm_states: Option<Vec<DVector<f64>>>,
    /// Reconstructed reduced-model states at the QoI sampling times, by run label.
    pub rom_states: BTreeMap<String, Vec<DVector<f64>>>,
}

/// A configured experiment bound to its model.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub flow: FlowModel,
    pub initial: DVector<f64>,
    qois: Vec<(String, BoundQoi)>,
    /// Keep full states in the pipeline state (tests and consistency checks).
    pub keep_states: bool,
}

struct SimOutput {
    classification: Classification,
    wall_clock: f64,
    steps: usize,
    times: Vec<f64>,
    histories: BTreeMap<String, Vec<f64>>,
    states: Vec<DVector<f64>>,
}

/// `a_ii · Δt` of the scheme's stage equations.
pub fn stage_gamma(scheme: Scheme, dt: f64) -> f64 {
    match scheme {
        Scheme::Dirk2 => dirk2_tableau().a[(0, 0)] * dt,
        Scheme::Dirk3 => dirk3_tableau().a[(0, 0)] * dt,
        Scheme::Bdf3 => 6.0 * dt / 11.0,
    }
}

fn strategy_label(s: &LeftBasisStrategy) -> &'static str {
    s.name()
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> HarnessResult<Self> {
        config.validate()?;
        let flow = FlowModel::from_config(&config.model)?;
        let initial = flow.initial_condition(&config.model)?;
        let qois = config
            .qoi
            .probes
            .iter()
            .map(|p| Ok((p.label(), p.bind(&flow)?)))
            .collect::<HarnessResult<Vec<_>>>()?;
        Ok(Self { config, flow, initial, qois, keep_states: false })
    }

    fn steps(&self) -> usize {
        (self.config.time.t_max / self.config.time.dt).round() as usize
    }

    fn qoi_stride(&self) -> usize {
        (self.config.qoi.delta_s / self.config.time.dt).round() as usize
    }

    pub fn qoi_labels(&self) -> Vec<String> {
        self.qois.iter().map(|(l, _)| l.clone()).collect()
    }

    /// Integrates `system` over `[0, t_max]`, sampling QoIs of the lifted state.
    fn simulate<S: ImplicitSystem>(
        &self,
        system: &mut S,
        x0: DVector<f64>,
        lift: impl Fn(&DVector<f64>) -> DVector<f64>,
        mut observe_step: impl FnMut(usize, &DVector<f64>),
    ) -> HarnessResult<SimOutput> {
        let dt = self.config.time.dt;
        let stride = self.qoi_stride();
        let mut integ = Integrator::new(self.config.time.scheme, dt, 0.0, x0)?;
        let mut times = Vec::new();
        let mut histories: BTreeMap<String, Vec<f64>> = self.qois.iter().map(|(l, _)| (l.clone(), Vec::new())).collect();
        let mut states = Vec::new();
        let mut record = |t: f64, u: &DVector<f64>| {
            times.push(t);
            for (label, q) in &self.qois {
                histories.get_mut(label).expect("history per QoI").push(q.evaluate(u));
            }
            if self.keep_states {
                states.push(u.clone());
            }
        };
        let u0 = lift(integ.state());
        record(0.0, &u0);
        observe_step(0, integ.state());
        let mut elapsed = Duration::ZERO;
        let mut classification = Classification::Completed;
        let mut steps = 0;
        for k in 1..=self.steps() {
            let start = Instant::now();
            let result = integ.step(system).map(|x| x.clone());
            elapsed += start.elapsed();
            let t = k as f64 * dt;
            match result {
                Ok(x) if x.iter().all(|v| v.is_finite()) => {
                    steps = k;
                    observe_step(k, &x);
                    if k % stride == 0 {
                        let u = lift(&x);
                        if !u.iter().all(|v| v.is_finite()) {
                            classification =
                                Classification::DivergedAt { t, reason: DivergenceReason::NonFinite };
                            break;
                        }
                        record(t, &u);
                    }
                }
                Ok(_) => {
                    classification = Classification::DivergedAt { t, reason: DivergenceReason::NonFinite };
                    break;
                }
                Err(_) => {
                    classification = Classification::DivergedAt { t, reason: DivergenceReason::SolverFailure };
                    break;
                }
            }
        }
        Ok(SimOutput { classification, wall_clock: elapsed.as_secs_f64(), steps, times, histories, states })
    }

    fn record(
        &self,
        label: String,
        kind: RunKind,
        out: &SimOutput,
        newton_iterations: usize,
        strategy: Option<&LeftBasisStrategy>,
        basis: Option<&NamedBasis>,
    ) -> RunRecord {
        RunRecord {
            label,
            kind,
            strategy: strategy.map(|s| strategy_label(s).to_string()),
            basis: basis.map(|b| b.label.clone()),
            reduced_dim: basis.map(|b| b.basis.dim()),
            classification: out.classification,
            wall_clock: out.wall_clock,
            newton_iterations,
            steps: out.steps,
            times: out.times.clone(),
            histories: out.histories.clone(),
            sample_size: None,
            sample_fraction: None,
        }
    }

    /// Runs the HDM over `[0, t_max]` and collects training snapshots.
    pub fn run_hdm(&self, state: &mut PipelineState) -> HarnessResult<()> {
        let model = self.flow.as_model();
        let cfg = &self.config;
        let hdm = HdmSystem::new(model, ParamPoint::empty(), cfg.rom.hdm_newton.to_config())?;
        let schedule = SnapshotSchedule::new(0.0, cfg.time.dt, cfg.snapshots.delta_s, cfg.time.train_end)?;
        let mut recorder = SnapshotRecorder::new(schedule);
        let (out, iterations, snapshots) = if cfg.snapshots.every_stage {
            let mut sys = StageRecorder::new(hdm);
            let out = self.simulate(&mut sys, self.initial.clone(), |x| x.clone(), |_, _| {})?;
            let mut times = vec![0.0];
            let mut cols = vec![self.initial.clone()];
            for (t, x) in sys.times.iter().zip(&sys.states) {
                if *t <= cfg.time.train_end + 1e-12 {
                    times.push(*t);
                    cols.push(x.clone());
                }
            }
            (out, sys.inner.total_iterations, SnapshotSet::from_columns(times, &cols)?)
        } else {
            let mut sys = hdm;
            let out = self.simulate(&mut sys, self.initial.clone(), |x| x.clone(), |k, x| recorder.observe(k, x))?;
            (out, sys.total_iterations, recorder.finish()?)
        };
        if !out.classification.completed() {
            return Err(HarnessError::Pipeline(format!("the HDM itself did not complete: {:?}", out.classification)));
        }
        let record = self.record("hdm".into(), RunKind::Hdm, &out, iterations, None, None);
        state.hdm_states = self.keep_states.then_some(out.states);
        state.snapshots = Some(snapshots);
        state.hdm = Some(record);
        Ok(())
    }

    /// Builds one basis per configured tier from the snapshots.
    pub fn run_pod(&self, state: &mut PipelineState) -> HarnessResult<()> {
        let snaps = state.snapshots.as_ref().ok_or_else(|| missing("pod", "snapshots (run hdm first)"))?;
        let pod = &self.config.pod;
        let offset = self.offset();
        let criteria: Vec<(String, PodCriterion)> = if pod.untruncated {
            vec![("full".into(), PodCriterion::Untruncated)]
        } else if !pod.ranks.is_empty() {
            pod.ranks.iter().map(|&n| (format!("r{n}"), PodCriterion::Rank(n))).collect()
        } else {
            pod.energy_tiers.iter().map(|&e| (format!("e{e}"), PodCriterion::Energy(e))).collect()
        };
        state.bases.clear();
        for (label, criterion) in criteria {
            let basis = build_pod(snaps, &offset, criterion, pod.normalization)?;
            state.bases.push(NamedBasis { label, basis });
        }
        Ok(())
    }

    /// Affine offset: the initial condition for Burgers, zero for flows.
    pub fn offset(&self) -> DVector<f64> {
        match self.flow {
            FlowModel::Burgers(_) => self.initial.clone(),
            FlowModel::Spectral(_) => DVector::zeros(self.initial.len()),
        }
    }

    fn run_reduced<B: ReducedBackend>(
        &self,
        backend: B,
        strategy: &LeftBasisStrategy,
        basis: &NamedBasis,
        kind: RunKind,
        label: String,
    ) -> HarnessResult<(RunRecord, Vec<DVector<f64>>)> {
        let mut sys = PromSystem::new(backend, self.config.rom.newton.to_config(), strategy.recompute)?;
        let y0 = basis.basis.project(&self.initial);
        let out = self.simulate(&mut sys, y0, |y| basis.basis.reconstruct(y), |_, _| {})?;
        let record = self.record(label, kind, &out, sys.total_iterations, Some(strategy), Some(basis));
        Ok((record, out.states))
    }

    fn use_quadratic(&self, strategy: &LeftBasisStrategy) -> HarnessResult<bool> {
        let supported = matches!(self.flow, FlowModel::Spectral(_))
            && matches!(strategy.kind, StrategyKind::Galerkin | StrategyKind::Lspg);
        match self.config.rom.backend {
            RomBackendKind::Auto => Ok(supported),
            RomBackendKind::FullOrder => Ok(false),
            RomBackendKind::Quadratic if supported => Ok(true),
            RomBackendKind::Quadratic => Err(HarnessError::Config(format!(
                "quadratic pre-computation is unavailable for this model with strategy {}",
                strategy.name()
            ))),
        }
    }

    /// One PROM per (basis, strategy).
    pub fn run_roms(&self, state: &mut PipelineState) -> HarnessResult<()> {
        if state.bases.is_empty() {
            return Err(missing("rom", "a reduced basis (run pod first)"));
        }
        let strategies = self.config.rom.strategies()?;
        state.roms.clear();
        for nb in &state.bases {
            for strategy in &strategies {
                let label = format!("prom_{}_{}", strategy_label(strategy), nb.label);
                let (record, states) = if self.use_quadratic(strategy)? {
                    let FlowModel::Spectral(m) = &self.flow else { unreachable!("checked by use_quadratic") };
                    let ops = precompute_quadratic(m, &nb.basis)?;
                    self.run_reduced(QuadraticBackend::new(ops, strategy)?, strategy, nb, RunKind::Prom, label)?
                } else {
                    let backend =
                        FullOrderBackend::new(self.flow.as_model(), &nb.basis, ParamPoint::empty(), strategy.clone())?;
                    self.run_reduced(backend, strategy, nb, RunKind::Prom, label)?
                };
                if self.keep_states {
                    state.rom_states.insert(record.label.clone(), states);
                }
                state.roms.push(record);
            }
        }
        Ok(())
    }

    /// Trains one ECSW sample per (basis, hyperreduced strategy).
    pub fn run_ecsw(&self, state: &mut PipelineState) -> HarnessResult<()> {
        let snaps = state.snapshots.as_ref().ok_or_else(|| missing("ecsw", "snapshots (run hdm first)"))?;
        if state.bases.is_empty() {
            return Err(missing("ecsw", "a reduced basis (run pod first)"));
        }
        let training = snaps.every(self.config.ecsw.training_stride)?;
        let shift = 1.0 / stage_gamma(self.config.time.scheme, self.config.time.dt);
        state.samples.clear();
        for name in &self.config.ecsw.strategies {
            let strategy = LeftBasisStrategy::from_name(name, self.config.rom.recompute)?;
            for nb in &state.bases {
                let system =
                    assemble_training(self.flow.as_model(), &nb.basis, &strategy, &training, shift, &ParamPoint::empty())?;
                let sample = nnls_solve(&system, self.config.ecsw.epsilon)?;
                state.samples.push(NamedSample {
                    label: format!("{}_{}", strategy_label(&strategy), nb.label),
                    strategy: strategy_label(&strategy).into(),
                    basis: nb.label.clone(),
                    sample,
                });
            }
        }
        Ok(())
    }

    /// Hyperreduced runs, one per trained sample.
    pub fn run_hproms(&self, state: &mut PipelineState) -> HarnessResult<()> {
        if state.samples.is_empty() {
            return Err(missing("hprom", "an ECSW sample (run ecsw first)"));
        }
        let cells = self.flow.as_model().cell_count();
        state.hproms.clear();
        for ns in &state.samples {
            let nb = state
                .bases
                .iter()
                .find(|b| b.label == ns.basis)
                .ok_or_else(|| missing("hprom", &format!("basis '{}' used to train sample {}", ns.basis, ns.label)))?;
            let strategy = LeftBasisStrategy::from_name(&ns.strategy, self.config.rom.recompute)?;
            let backend = HyperreducedBackend::new(
                self.flow.as_model(),
                &nb.basis,
                ParamPoint::empty(),
                &strategy,
                ns.sample.clone(),
            )?;
            let label = format!("hprom_{}", ns.label);
            let (mut record, states) = self.run_reduced(backend, &strategy, nb, RunKind::Hprom, label)?;
            record.sample_size = Some(ns.sample.len());
            record.sample_fraction = Some(ns.sample.len() as f64 / cells as f64);
            if self.keep_states {
                state.rom_states.insert(record.label.clone(), states);
            }
            state.hproms.push(record);
        }
        Ok(())
    }

    /// Relative errors of every completed reduced run against the HDM.
    pub fn run_compare(&self, state: &mut PipelineState) -> HarnessResult<()> {
        let hdm = state.hdm.as_ref().ok_or_else(|| missing("compare", "the HDM reference (run hdm first)"))?;
        if state.roms.is_empty() && state.hproms.is_empty() {
            return Err(missing("compare", "reduced-model runs (run rom or hprom first)"));
        }
        state.errors = compare_runs(hdm, state.roms.iter().chain(&state.hproms))?;
        Ok(())
    }

    pub fn run_stage(&self, stage: Stage, state: &mut PipelineState) -> HarnessResult<()> {
        match stage {
            Stage::Hdm => self.run_hdm(state),
            Stage::Pod => self.run_pod(state),
            Stage::Rom => self.run_roms(state),
            Stage::Ecsw => self.run_ecsw(state),
            Stage::Hprom => self.run_hproms(state),
            Stage::Compare => self.run_compare(state),
        }
    }

    /// Runs the configured stages in order.
    pub fn run(&self, state: &mut PipelineState) -> HarnessResult<()> {
        for &stage in &self.config.stages {
            self.run_stage(stage, state)?;
        }
        Ok(())
    }
}

fn missing(stage: &str, what: &str) -> HarnessError {
    HarnessError::Pipeline(format!("stage '{stage}' needs {what}"))
}

/// Relative errors of completed runs; diverged runs have no error entry.
pub fn compare_runs<'a>(
    hdm: &RunRecord,
    runs: impl Iterator<Item = &'a RunRecord>,
) -> HarnessResult<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut errors = BTreeMap::new();
    for run in runs {
        if !run.classification.completed() {
            continue;
        }
        if run.times.len() != hdm.times.len() {
            return Err(HarnessError::Pipeline(format!("run {} is sampled differently from the HDM", run.label)));
        }
        let mut per = BTreeMap::new();
        for (q, reference) in &hdm.histories {
            let approx = run
                .histories
                .get(q)
                .ok_or_else(|| HarnessError::Pipeline(format!("run {} lacks QoI {q}", run.label)))?;
            per.insert(q.clone(), relative_error(reference, approx)?);
        }
        errors.insert(run.label.clone(), per);
    }
    Ok(errors)
}
