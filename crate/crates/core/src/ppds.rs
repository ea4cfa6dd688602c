//! Preconditioned primal-dual splitting with operator-norm-based diagonal
//! stepsizes.
//!
//! Solves
//!
//! ```text
//! minimize  Σᵢ gᵢ(yᵢ) + Σⱼ hⱼ(zⱼ)   subject to  zⱼ = Σᵢ G_{j,i} yᵢ
//! ```
//!
//! with `γ₁,ᵢ = 1 / Σⱼ ‖G_{j,i}‖²` and `γ₂,ⱼ = 1 / (number of primal slots)`.
//! Dual proxes always go through the Moreau identity, so each `hⱼ` only needs
//! its own prox.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linops::LinearOperator;
use crate::prox::Prox;

pub struct Slot {
    pub name: String,
    pub dim: usize,
    pub func: Arc<dyn Prox>,
}

pub struct Edge {
    pub dual: usize,
    pub primal: usize,
    pub op: Arc<dyn LinearOperator>,
}

/// Primal slots, dual slots, and the operator blocks coupling them.
#[derive(Default)]
pub struct ProblemGraph {
    primals: Vec<Slot>,
    duals: Vec<Slot>,
    edges: Vec<Edge>,
    exec: Exec,
}

impl ProblemGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn add_primal(&mut self, name: impl Into<String>, dim: usize, g: Arc<dyn Prox>) -> usize {
        self.primals.push(Slot {
            name: name.into(),
            dim,
            func: g,
        });
        self.primals.len() - 1
    }

    pub fn add_dual(&mut self, name: impl Into<String>, dim: usize, h: Arc<dyn Prox>) -> usize {
        self.duals.push(Slot {
            name: name.into(),
            dim,
            func: h,
        });
        self.duals.len() - 1
    }

    /// Registers `G_{dual, primal} = op`.
    pub fn add_edge(&mut self, dual: usize, primal: usize, op: Arc<dyn LinearOperator>) -> Result<()> {
        let p = self
            .primals
            .get(primal)
            .ok_or_else(|| Error::InvalidParameter(format!("no primal slot {primal}")))?;
        let d = self
            .duals
            .get(dual)
            .ok_or_else(|| Error::InvalidParameter(format!("no dual slot {dual}")))?;
        if op.input_len() != p.dim || op.output_len() != d.dim {
            return Err(Error::Geometry(format!(
                "edge {} maps {} -> {}, but slots {} / {} have dims {} / {}",
                op.name(),
                op.input_len(),
                op.output_len(),
                p.name,
                d.name,
                p.dim,
                d.dim
            )));
        }
        self.edges.push(Edge { dual, primal, op });
        Ok(())
    }

    pub fn primals(&self) -> &[Slot] {
        &self.primals
    }

    pub fn duals(&self) -> &[Slot] {
        &self.duals
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    fn validate(&self) -> Result<()> {
        if self.primals.is_empty() || self.duals.is_empty() {
            return Err(Error::InvalidParameter(
                "problem needs at least one primal and one dual slot".into(),
            ));
        }
        Ok(())
    }

    /// `Σᵢ G_{j,i} yᵢ` for dual slot `j`.
    pub fn apply_dual_row(&self, j: usize, ys: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = vec![0.0; self.duals[j].dim];
        for (n, e) in self.edges.iter().filter(|e| e.dual == j).enumerate() {
            if n == 0 {
                e.op.apply(&ys[e.primal], &mut acc);
            } else {
                e.op.apply_add(1.0, &ys[e.primal], &mut acc);
            }
        }
        acc
    }

    /// `Σⱼ G_{j,i}ᵀ zⱼ` for primal slot `i`.
    pub fn apply_primal_column_adjoint(&self, i: usize, zs: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = vec![0.0; self.primals[i].dim];
        self.add_primal_column_adjoint(i, zs, 1.0, &mut acc);
        acc
    }

    /// `out += alpha Σⱼ G_{j,i}ᵀ zⱼ`.
    fn add_primal_column_adjoint(&self, i: usize, zs: &[Vec<f64>], alpha: f64, out: &mut [f64]) {
        for e in self.edges.iter().filter(|e| e.primal == i) {
            e.op.apply_adjoint_add(alpha, &zs[e.dual], out);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stepsizes {
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
}

pub fn compute_stepsizes(graph: &ProblemGraph) -> Result<Stepsizes> {
    graph.validate()?;
    let primal = graph
        .primals
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let s: f64 = graph
                .edges
                .iter()
                .filter(|e| e.primal == i)
                .map(|e| e.op.norm_sq_bound())
                .sum();
            if s > 0.0 {
                Ok(1.0 / s)
            } else {
                Err(Error::UndefinedStepsize {
                    slot: slot.name.clone(),
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let dual = vec![1.0 / graph.primals.len() as f64; graph.duals.len()];
    Ok(Stepsizes { primal, dual })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub primal: Vec<Vec<f64>>,
    pub dual: Vec<Vec<f64>>,
    pub iteration: usize,
    pub last_rel_change: f64,
}

impl SolverState {
    /// Caller-supplied primal values with all duals at zero.
    pub fn with_zero_duals(graph: &ProblemGraph, primal: Vec<Vec<f64>>) -> Result<Self> {
        let dual = graph.duals.iter().map(|d| vec![0.0; d.dim]).collect();
        let s = SolverState {
            primal,
            dual,
            iteration: 0,
            last_rel_change: f64::INFINITY,
        };
        s.check_dims(graph)?;
        Ok(s)
    }

    /// All-zero primal and dual values.
    pub fn zeros(graph: &ProblemGraph) -> Self {
        let primal = graph.primals.iter().map(|p| vec![0.0; p.dim]).collect();
        Self::with_zero_duals(graph, primal).expect("zero state matches graph")
    }

    fn check_dims(&self, graph: &ProblemGraph) -> Result<()> {
        let check = |slots: &[Slot], vs: &[Vec<f64>]| -> Result<()> {
            if slots.len() != vs.len() {
                return Err(Error::DimensionMismatch {
                    expected: slots.len(),
                    actual: vs.len(),
                });
            }
            for (s, v) in slots.iter().zip(vs) {
                if s.dim != v.len() {
                    return Err(Error::DimensionMismatch {
                        expected: s.dim,
                        actual: v.len(),
                    });
                }
            }
            Ok(())
        };
        check(&graph.primals, &self.primal)?;
        check(&graph.duals, &self.dual)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StoppingRule {
    /// Threshold on the largest relative change over all slots: `‖Δy‖ / max(‖y‖, 1e−12)`
    /// for primal slots and `‖Δz‖ / max(‖z‖, ‖z⁺‖, 1)` for dual slots.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            tol: 1e-5,
            max_iters: 20_000,
        }
    }
}

/// One row per iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// Largest relative change over all primal and dual slots.
    pub rel_change: f64,
    /// Σ of the finite-valued parts of all gᵢ(yᵢ) and hⱼ(Σᵢ G_{j,i} yᵢ).
    pub objective: f64,
    /// Per dual slot: violation of hⱼ's constraint set by Σᵢ G_{j,i} yᵢ.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub dual_names: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "iter,rel_change,objective")?;
        for j in 1..=self.dual_names.len() {
            write!(w, ",residual_{j}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(w, "{},{:e},{:e}", r.iter, r.rel_change, r.objective)?;
            for v in &r.residuals {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}

pub struct RunOutcome {
    pub state: SolverState,
    pub trace: Trace,
    pub converged: bool,
}

/// Growth of a primal slot beyond this multiple of its size aborts the run.
const DIVERGENCE_RATIO: f64 = 1e6;

struct StepReport {
    rel_change: f64,
    objective: f64,
    residuals: Vec<f64>,
}

/// Iteration engine. Keeps `Σᵢ G_{j,i} yᵢ` for the current iterate so the
/// per-iteration diagnostics cost no extra operator applications.
struct Engine<'g> {
    graph: &'g ProblemGraph,
    steps: Stepsizes,
    gy: Vec<Vec<f64>>,
}

impl<'g> Engine<'g> {
    fn new(graph: &'g ProblemGraph, steps: Stepsizes, state: &SolverState) -> Result<Self> {
        state.check_dims(graph)?;
        let gy = graph
            .exec
            .map_tasks(graph.duals.len(), |j| graph.apply_dual_row(j, &state.primal));
        Ok(Engine { graph, steps, gy })
    }

    fn step(&mut self, state: &mut SolverState) -> Result<StepReport> {
        let g = self.graph;
        let exec = g.exec;
        let iteration = state.iteration + 1;

        // primal: ȳᵢ = yᵢ − γ₁ᵢ Σⱼ Gᵀ zⱼ, yᵢ⁺ = prox(ȳᵢ)
        let new_primal: Vec<Vec<f64>> = exec.map_tasks(g.primals.len(), |i| {
            let gamma = self.steps.primal[i];
            let mut y = state.primal[i].clone();
            g.add_primal_column_adjoint(i, &state.dual, -gamma, &mut y);
            g.primals[i].func.prox(&mut y, gamma);
            y
        });

        let mut rel_change: f64 = 0.0;
        for (i, (new, old)) in new_primal.iter().zip(&state.primal).enumerate() {
            let diff = exec.dist_sq(new, old).sqrt();
            let size = exec.norm(old);
            if !diff.is_finite() {
                return Err(Error::NonFiniteIterate {
                    slot: g.primals[i].name.clone(),
                    iteration,
                });
            }
            if diff > DIVERGENCE_RATIO * size.max(1.0) {
                return Err(Error::Diverged {
                    slot: g.primals[i].name.clone(),
                    iteration,
                    change: diff / size.max(1e-12),
                });
            }
            rel_change = rel_change.max(diff / size.max(1e-12));
        }

        // reflected points vᵢ = 2yᵢ⁺ − yᵢ
        let reflected: Vec<Vec<f64>> = exec.map_tasks(g.primals.len(), |i| {
            let mut v = new_primal[i].clone();
            exec.zip_apply(&mut v, &state.primal[i], |a, b| 2.0 * a - b);
            v
        });

        // dual: z̄ⱼ = zⱼ + γ₂ⱼ Σᵢ G vᵢ, zⱼ⁺ = z̄ⱼ − γ₂ⱼ prox_{hⱼ/γ₂ⱼ}(z̄ⱼ/γ₂ⱼ)
        let dual_out: Vec<(Vec<f64>, Vec<f64>)> = exec.map_tasks(g.duals.len(), |j| {
            let gamma = self.steps.dual[j];
            let gv = g.apply_dual_row(j, &reflected);
            let mut zbar = state.dual[j].clone();
            exec.axpy(gamma, &gv, &mut zbar);
            let mut w = zbar.clone();
            exec.scale(1.0 / gamma, &mut w);
            g.duals[j].func.prox(&mut w, 1.0 / gamma);
            exec.axpy(-gamma, &w, &mut zbar);
            // G y⁺ = (G v + G y) / 2
            let mut gy_new = gv;
            exec.zip_apply(&mut gy_new, &self.gy[j], |a, b| 0.5 * (a + b));
            (zbar, gy_new)
        });

        let mut residuals = Vec::with_capacity(g.duals.len());
        let mut objective: f64 = g
            .primals
            .iter()
            .zip(&new_primal)
            .map(|(s, y)| s.func.value(y))
            .sum();
        for (j, (z, gy)) in dual_out.into_iter().enumerate() {
            if !exec.norm_sq(&z).is_finite() {
                return Err(Error::NonFiniteIterate {
                    slot: g.duals[j].name.clone(),
                    iteration,
                });
            }
            // small duals are measured by their absolute change
            let size = exec.norm(&state.dual[j]).max(exec.norm(&z));
            rel_change = rel_change.max(exec.dist_sq(&z, &state.dual[j]).sqrt() / size.max(1.0));
            residuals.push(g.duals[j].func.violation(&gy));
            objective += g.duals[j].func.value(&gy);
            state.dual[j] = z;
            self.gy[j] = gy;
        }
        state.primal = new_primal;
        state.iteration = iteration;
        state.last_rel_change = rel_change;
        Ok(StepReport {
            rel_change,
            objective,
            residuals,
        })
    }
}

/// One full primal-then-dual sweep.
pub fn iterate(graph: &ProblemGraph, state: &SolverState, steps: &Stepsizes) -> Result<SolverState> {
    let mut next = state.clone();
    Engine::new(graph, steps.clone(), state)?.step(&mut next)?;
    Ok(next)
}

/// Iterates until the relative change of every primal and dual slot drops below `stop.tol` or
/// `stop.max_iters` sweeps have run.
pub fn run(graph: &ProblemGraph, init: SolverState, stop: StoppingRule) -> Result<RunOutcome> {
    let steps = compute_stepsizes(graph)?;
    run_with_steps(graph, init, &steps, stop)
}

pub fn run_with_steps(
    graph: &ProblemGraph,
    init: SolverState,
    steps: &Stepsizes,
    stop: StoppingRule,
) -> Result<RunOutcome> {
    let mut state = init;
    let mut engine = Engine::new(graph, steps.clone(), &state)?;
    let mut trace = Trace {
        dual_names: graph.duals.iter().map(|d| d.name.clone()).collect(),
        rows: Vec::new(),
    };
    let mut converged = false;
    for _ in 0..stop.max_iters {
        let report = engine.step(&mut state)?;
        trace.rows.push(TraceRow {
            iter: state.iteration,
            rel_change: report.rel_change,
            objective: report.objective,
            residuals: report.residuals,
        });
        if report.rel_change < stop.tol {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome {
        state,
        trace,
        converged,
    })
}
