//! The three built-in studies: channel convergence against a fine reference
//! run, the focused-ultrasound quantity of interest, and a manufactured
//! solution of the linear equation.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::convergence::{
    fit_power, fit_start, order, Comparator, ErrorAccumulator, ExactErrors, Norms, OrderTable, PowerFit, SnapshotErrors,
};
use crate::error::Result;
use crate::exec::Exec;
use crate::fespace::FeSpace;
use crate::linalg::SolverConfig;
use crate::mesh::{channel_mesh, focus_mesh};
use crate::wavesolver::{
    channel_initial_data, focus_source, mms_exact, MmsCase, Model, Operators, Problem, SolverSettings, StepRecord,
    WaveSolver, WaveState,
};

/// Per-level run diagnostics.
#[derive(Clone, Debug)]
pub struct LevelSummary {
    pub level: usize,
    pub h: f64,
    pub n_dofs: usize,
    pub records: Vec<StepRecord>,
}

impl LevelSummary {
    pub const HEADER: &'static str = "step,t,fp_iters,max_abs_u,margin";

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * self.records.len());
        s.push_str(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{:e},{},{:e},{}", r.step, r.t, r.fp_iters, r.max_abs_u, r.margin);
        }
        s
    }

    pub fn max_abs_u(&self) -> f64 {
        self.records.iter().map(|r| r.max_abs_u).fold(0.0, f64::max)
    }

    pub fn min_margin(&self) -> f64 {
        self.records.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn max_fp_iters(&self) -> usize {
        self.records.iter().map(|r| r.fp_iters).max().unwrap_or(0)
    }
}

fn settings(cfg: &ExperimentConfig) -> SolverSettings {
    SolverSettings {
        newmark: cfg.newmark,
        pcg: SolverConfig { tol: cfg.pcg_tol, ..SolverConfig::default() },
        fixed_point: cfg.fixed_point,
        margin_min: cfg.margin_min,
    }
}

/// Westervelt run on the channel mesh of `level`, from Ritz-projected Gaussian data.
pub fn channel_problem(cfg: &ExperimentConfig, level: usize) -> Result<Problem> {
    let space = Arc::new(FeSpace::new(Arc::new(channel_mesh(level)?)));
    let settings = settings(cfg);
    let (u0, v0) = channel_initial_data(&space, &cfg.channel, &settings.pcg)?;
    Ok(Problem {
        ops: Operators::new(space, cfg.material, None),
        model: Model::Westervelt,
        time: cfg.time_grid()?,
        settings,
        u0,
        v0,
    })
}

/// Westervelt run on the focus mesh of `level` from rest, driven by the transducer flux.
pub fn focus_problem(cfg: &ExperimentConfig, level: usize) -> Result<Problem> {
    let space = Arc::new(FeSpace::new(Arc::new(focus_mesh(level)?)));
    let n = space.n_dofs();
    Ok(Problem {
        ops: Operators::new(space, cfg.material, Some(focus_source(&cfg.focus))),
        model: Model::Westervelt,
        time: cfg.time_grid()?,
        settings: settings(cfg),
        u0: vec![0.0; n],
        v0: vec![0.0; n],
    })
}

/// The manufactured case with the wave speed and diffusivity of `cfg`.
pub fn mms_case(cfg: &ExperimentConfig) -> MmsCase {
    MmsCase { c: cfg.material.c, b: cfg.material.b, variable: cfg.mms.variable }
}

/// Linear run on `[0, 1]` with `2^level` elements.
pub fn mms_problem(cfg: &ExperimentConfig, level: usize) -> Result<Problem> {
    let mesh = crate::mesh::interval_mesh(1.0, 1 << level, crate::mesh::BoundaryTag::Dirichlet)?;
    let space = Arc::new(FeSpace::new(Arc::new(mesh)));
    let case = mms_case(cfg);
    let settings = settings(cfg);
    let (u0, v0) = case.initial_data(&space, &settings.pcg)?;
    Ok(Problem {
        ops: Operators::new(space, cfg.material, None),
        model: Model::Linear(case.coefficients()),
        time: cfg.time_grid()?,
        settings,
        u0,
        v0,
    })
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Snapshot CSV `t,node_index,x[,y],u,v,a`, renamed into place when finished.
struct SnapshotFile {
    path: PathBuf,
    w: BufWriter<File>,
    stride: usize,
    dim: usize,
}

impl SnapshotFile {
    fn create(path: PathBuf, stride: usize, dim: usize) -> Result<Self> {
        let mut w = BufWriter::new(File::create(tmp_path(&path))?);
        let header = if dim == 1 { "t,node_index,x,u,v,a" } else { "t,node_index,x,y,u,v,a" };
        writeln!(w, "{header}")?;
        Ok(SnapshotFile { path, w, stride, dim })
    }

    fn observe(&mut self, space: &FeSpace, step: usize, last: bool, s: &WaveState) -> Result<()> {
        if !step.is_multiple_of(self.stride) && !last {
            return Ok(());
        }
        for (i, p) in space.mesh().nodes().iter().enumerate() {
            if self.dim == 1 {
                writeln!(self.w, "{:e},{i},{:e},{:e},{:e},{:e}", s.t, p[0], s.u[i], s.v[i], s.a[i])?;
            } else {
                writeln!(self.w, "{:e},{i},{:e},{:e},{:e},{:e},{:e}", s.t, p[0], p[1], s.u[i], s.v[i], s.a[i])?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        drop(self.w);
        fs::rename(tmp_path(&self.path), &self.path)?;
        Ok(())
    }
}

fn snapshot_file(cfg: &ExperimentConfig, out: Option<&Path>, name: String, dim: usize) -> Result<Option<SnapshotFile>> {
    match out {
        Some(dir) if cfg.snapshot_stride > 0 => {
            Ok(Some(SnapshotFile::create(dir.join(name), cfg.snapshot_stride, dim)?))
        }
        _ => Ok(None),
    }
}

fn prepare_out(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    }
    Ok(())
}

/// One level marching in lockstep with the others.
struct Runner {
    level: usize,
    h: f64,
    solver: WaveSolver,
    records: Vec<StepRecord>,
    acc: ErrorAccumulator,
    cmp: Option<Comparator>,
    snapshots: Option<SnapshotFile>,
    status: Result<()>,
}

impl Runner {
    fn new(level: usize, problem: Problem, snapshots: Option<SnapshotFile>) -> Result<Self> {
        let h = problem.ops.space.h();
        let solver = WaveSolver::new(problem)?;
        let mut r = Runner {
            level,
            h,
            records: vec![solver.record()],
            solver,
            acc: ErrorAccumulator::new(),
            cmp: None,
            snapshots,
            status: Ok(()),
        };
        r.observe()?;
        Ok(r)
    }

    fn observe(&mut self) -> Result<()> {
        if let Some(s) = &mut self.snapshots {
            let last = self.solver.is_finished();
            s.observe(self.solver.space(), self.solver.step_index(), last, self.solver.state())?;
        }
        Ok(())
    }

    fn advance(&mut self) {
        self.status = self
            .solver
            .advance()
            .map(|r| self.records.push(r))
            .and_then(|_| self.observe())
            .map_err(|e| e.at_level(self.level));
    }

    fn summary(&self) -> LevelSummary {
        LevelSummary {
            level: self.level,
            h: self.h,
            n_dofs: self.solver.space().n_dofs(),
            records: self.records.clone(),
        }
    }

    fn finish(self) -> Result<()> {
        match self.snapshots {
            Some(s) => s.finish(),
            None => Ok(()),
        }
    }
}

fn first_error(runners: &mut [Runner]) -> Result<()> {
    for r in runners.iter_mut() {
        std::mem::replace(&mut r.status, Ok(()))?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ChannelOutcome {
    pub table: OrderTable,
    pub levels: Vec<LevelSummary>,
    pub reference: LevelSummary,
}

/// Runs every level and the reference level in lockstep on the shared time
/// grid and accumulates errors against the reference at every step.
pub fn run_channel(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ChannelOutcome> {
    cfg.validate()?;
    prepare_out(cfg, out)?;
    let mut levels = cfg.levels.clone();
    levels.sort_unstable();
    levels.push(cfg.ref_level);

    let exec = Exec::default();
    let built = exec.map_collect(levels.len(), |i| -> Result<Runner> {
        let level = levels[i];
        let build = || {
            let problem = channel_problem(cfg, level)?;
            let snaps = snapshot_file(cfg, out, format!("snapshots_level{level}.csv"), 1)?;
            Runner::new(level, problem, snaps)
        };
        build().map_err(|e| e.at_level(level))
    });
    let mut runners = built.into_iter().collect::<Result<Vec<_>>>()?;
    let (coarse, reference) = runners.split_at_mut(levels.len() - 1);
    let ref_runner = &mut reference[0];
    let norms = Arc::new(Norms::new(ref_runner.solver.space().clone()));
    for r in coarse.iter_mut() {
        r.cmp = Some(Comparator::new(r.solver.space(), norms.clone()).map_err(|e| e.at_level(r.level))?);
    }

    let n_steps = cfg.time_steps;
    loop {
        let (coarse, reference) = runners.split_at_mut(levels.len() - 1);
        let ref_state = reference[0].solver.state();
        exec.for_each_mut(coarse, |_, r| {
            let cmp = r.cmp.as_ref().expect("comparator set");
            match cmp.errors(r.solver.state(), ref_state) {
                Ok(e) => r.acc.push(ref_state.t, e),
                Err(e) => r.status = Err(e.at_level(r.level)),
            }
        });
        first_error(&mut runners)?;
        if runners[0].solver.is_finished() {
            break;
        }
        exec.for_each_mut(&mut runners, |_, r| r.advance());
        first_error(&mut runners)?;
        let step = runners[0].solver.step_index();
        if step % 100 == 0 || step == n_steps {
            info!("channel: step {step}/{n_steps}");
        }
    }

    let reference = runners.pop().expect("reference runner");
    let table = OrderTable::new(runners.iter().map(|r| (r.level, r.acc.finish())).collect());
    let summaries: Vec<LevelSummary> = runners.iter().map(Runner::summary).collect();
    let ref_summary = reference.summary();
    for r in runners {
        r.finish()?;
    }
    reference.finish()?;
    let outcome = ChannelOutcome { table, levels: summaries, reference: ref_summary };
    if let Some(dir) = out {
        write_atomic(&dir.join("order_table.csv"), outcome.table.to_csv().as_bytes())?;
        for s in outcome.levels.iter().chain(std::iter::once(&outcome.reference)) {
            write_atomic(&dir.join(format!("summary_level{}.csv", s.level)), s.to_csv().as_bytes())?;
        }
    }
    Ok(outcome)
}

/// `(h, q)` of one focus level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocusPoint {
    pub level: usize,
    pub h: f64,
    pub q: f64,
}

#[derive(Clone, Debug)]
pub struct FocusOutcome {
    pub points: Vec<FocusPoint>,
    /// `None` with fewer than three levels.
    pub fit: Option<PowerFit>,
    pub levels: Vec<LevelSummary>,
}

impl FocusOutcome {
    pub const HEADER: &'static str = "level,h,q,diff_to_finest,order";

    /// `|q(finest) - q(level)|` for all but the finest level.
    pub fn differences(&self) -> Vec<f64> {
        let finest = self.points.last().map(|p| p.q).unwrap_or(0.0);
        self.points[..self.points.len().saturating_sub(1)].iter().map(|p| (finest - p.q).abs()).collect()
    }

    /// Orders of [`FocusOutcome::differences`] between consecutive levels.
    pub fn difference_orders(&self) -> Vec<f64> {
        self.differences().windows(2).map(|w| order(w[0], w[1]).unwrap_or(f64::NAN)).collect()
    }

    pub fn to_csv(&self) -> String {
        let diffs = self.differences();
        let orders = self.difference_orders();
        let mut s = String::new();
        s.push_str(Self::HEADER);
        s.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(s, "{},{:e},{:.12e}", p.level, p.h, p.q);
            match diffs.get(i) {
                Some(d) => {
                    let _ = write!(s, ",{d:.6e}");
                }
                None => s.push(','),
            }
            match i.checked_sub(1).and_then(|k| orders.get(k)) {
                Some(o) if o.is_finite() => {
                    let _ = write!(s, ",{o:.4}");
                }
                Some(_) => s.push_str(",NaN"),
                None => s.push(','),
            }
            s.push('\n');
        }
        s
    }
}

/// Runs every focus level (concurrently) and records `q(u_h)` per level.
pub fn run_focus(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<FocusOutcome> {
    cfg.validate()?;
    if cfg.levels.len() < 3 {
        log::warn!("fewer than three focus levels: the power-law fit will be skipped");
    }
    prepare_out(cfg, out)?;
    let mut levels = cfg.levels.clone();
    levels.sort_unstable();

    let results = Exec::default().map_collect(levels.len(), |i| -> Result<(FocusPoint, LevelSummary)> {
        let level = levels[i];
        let run = || -> Result<(FocusPoint, LevelSummary)> {
            let problem = focus_problem(cfg, level)?;
            let space = problem.ops.space.clone();
            let norms = Norms::new(space.clone());
            let mut snaps = snapshot_file(cfg, out, format!("snapshots_level{level}.csv"), 2)?;
            let mut q: f64 = 0.0;
            let mut solver = WaveSolver::new(problem)?;
            let mut records = vec![solver.record()];
            loop {
                q = q.max(norms.l2(&solver.state().u));
                if let Some(s) = &mut snaps {
                    s.observe(&space, solver.step_index(), solver.is_finished(), solver.state())?;
                }
                if solver.is_finished() {
                    break;
                }
                records.push(solver.advance()?);
                if solver.step_index() % 500 == 0 {
                    info!("focus level {level}: step {}", solver.step_index());
                }
            }
            if let Some(s) = snaps {
                s.finish()?;
            }
            let h = space.h();
            Ok((FocusPoint { level, h, q }, LevelSummary { level, h, n_dofs: space.n_dofs(), records }))
        };
        run().map_err(|e| e.at_level(level))
    });
    let (points, summaries): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();

    let fit = if points.len() >= 3 {
        let h: Vec<f64> = points.iter().map(|p| p.h).collect();
        let q: Vec<f64> = points.iter().map(|p| p.q).collect();
        Some(fit_power(&h, &q, fit_start(&h, &q))?)
    } else {
        None
    };
    let outcome = FocusOutcome { points, fit, levels: summaries };
    if let Some(dir) = out {
        write_atomic(&dir.join("q_vs_h.csv"), outcome.to_csv().as_bytes())?;
        if let Some(fit) = &outcome.fit {
            write_atomic(&dir.join("fit.csv"), fit.to_csv().as_bytes())?;
        }
        for s in &outcome.levels {
            write_atomic(&dir.join(format!("summary_level{}.csv", s.level)), s.to_csv().as_bytes())?;
        }
    }
    Ok(outcome)
}

#[derive(Clone, Debug)]
pub struct MmsOutcome {
    pub table: OrderTable,
    pub levels: Vec<LevelSummary>,
}

/// Runs the manufactured solution on every level and measures errors
/// against the exact solution at every step.
pub fn run_mms(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<MmsOutcome> {
    cfg.validate()?;
    prepare_out(cfg, out)?;
    let mut levels = cfg.levels.clone();
    levels.sort_unstable();

    let results = Exec::default().map_collect(levels.len(), |i| -> Result<(usize, ErrorAccumulator, LevelSummary)> {
        let level = levels[i];
        let run = || -> Result<(usize, ErrorAccumulator, LevelSummary)> {
            let problem = mms_problem(cfg, level)?;
            let space = problem.ops.space.clone();
            let exact = ExactErrors::new(space.clone());
            let mut snaps = snapshot_file(cfg, out, format!("snapshots_level{level}.csv"), 1)?;
            let mut acc = ErrorAccumulator::new();
            let mut solver = WaveSolver::new(problem)?;
            let mut records = vec![solver.record()];
            loop {
                let s = solver.state();
                let t = s.t;
                let (l2_u, h1_u) = exact.errors(&s.u, |p| mms_exact(p[0], t).0[0], |p| [mms_exact(p[0], t).1[0], 0.0]);
                let (l2_v, h1_v) = exact.errors(&s.v, |p| mms_exact(p[0], t).0[1], |p| [mms_exact(p[0], t).1[1], 0.0]);
                let (l2_a, _) = exact.errors(&s.a, |p| mms_exact(p[0], t).0[2], |_| [0.0; 2]);
                acc.push(t, SnapshotErrors { l2_u, h1_u, l2_v, h1_v, l2_a });
                if let Some(f) = &mut snaps {
                    f.observe(&space, solver.step_index(), solver.is_finished(), s)?;
                }
                if solver.is_finished() {
                    break;
                }
                records.push(solver.advance()?);
            }
            if let Some(f) = snaps {
                f.finish()?;
            }
            Ok((level, acc, LevelSummary { level, h: space.h(), n_dofs: space.n_dofs(), records }))
        };
        run().map_err(|e| e.at_level(level))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let table = OrderTable::new(results.iter().map(|(l, acc, _)| (*l, acc.finish())).collect());
    let outcome = MmsOutcome { table, levels: results.into_iter().map(|r| r.2).collect() };
    if let Some(dir) = out {
        write_atomic(&dir.join("order_table.csv"), outcome.table.to_csv().as_bytes())?;
        for s in &outcome.levels {
            write_atomic(&dir.join(format!("summary_level{}.csv", s.level)), s.to_csv().as_bytes())?;
        }
    }
    Ok(outcome)
}

/// Dispatches on `cfg.kind`, writing all outputs to `cfg.out_dir`.
pub fn run_study(cfg: &ExperimentConfig) -> Result<()> {
    let out = Some(cfg.out_dir.as_path());
    match cfg.kind {
        ExperimentKind::Channel => run_channel(cfg, out).map(|_| ()),
        ExperimentKind::Focus => run_focus(cfg, out).map(|_| ()),
        ExperimentKind::Mms => run_mms(cfg, out).map(|_| ()),
    }
}
