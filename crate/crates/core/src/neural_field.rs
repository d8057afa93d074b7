//! Shunting neurodynamics on the grid lattice.
//!
//! Each cell is a neuron whose activity obeys
//!
//! ```text
//! dζ/dt = -A·ζ + (B - ζ)·([I]⁺ + Σ w·[ζₗ]⁺) - (D + ζ)·([I]⁻ + Σ β·w·[ζₗ - σ]⁻)
//! ```
//!
//! over its in-bounds 8-neighborhood. Targets inject `+E`, obstacles `-E`.
//! Positive activity spreads across the whole lattice, while the `σ`
//! threshold keeps inhibition confined to a halo around obstacles.
//!
//! The update is synchronous: every cell reads the previous buffer, so the
//! result does not depend on sweep order.

use crate::environment::Environment;
use crate::grid::{Cell, GridSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuntingParams {
    /// Passive decay rate.
    pub a: f64,
    /// Upper activity bound.
    pub b: f64,
    /// Magnitude of the lower activity bound.
    pub d: f64,
    /// Lateral weight scale.
    pub mu: f64,
    /// External input magnitude.
    pub e: f64,
    /// Inhibitory propagation threshold, negative.
    pub sigma: f64,
    /// Inhibitory weight as a fraction of the excitatory one.
    pub beta: f64,
    /// Receptive field radius in cell units.
    pub r0: f64,
    pub dt_neural: f64,
    /// Euler steps per simulation tick.
    pub relax_iters: usize,
    /// Early-exit threshold on the largest per-cell change.
    pub tol: f64,
}

impl Default for ShuntingParams {
    fn default() -> Self {
        ShuntingParams {
            a: 5.0,
            b: 1.0,
            d: 1.0,
            mu: 1.0,
            e: 70.0,
            sigma: -0.5,
            beta: 1.0,
            r0: std::f64::consts::SQRT_2,
            dt_neural: 0.005,
            relax_iters: 10,
            tol: 1e-6,
        }
    }
}

impl ShuntingParams {
    /// Bound on `dt·(A + E + 8·μ·max(B, D))` required for a stable explicit step.
    pub fn stability_number(&self) -> f64 {
        self.dt_neural * (self.a + self.e + 8.0 * self.mu * self.b.max(self.d))
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let finite = [
            self.a,
            self.b,
            self.d,
            self.mu,
            self.e,
            self.sigma,
            self.beta,
            self.r0,
            self.dt_neural,
            self.tol,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(ParamError::NonFinite);
        }
        let check = |ok: bool, name: &'static str, value: f64| {
            if ok {
                Ok(())
            } else {
                Err(ParamError::OutOfRange { name, value })
            }
        };
        check(self.a > 0.0, "A", self.a)?;
        check(self.b > 0.0, "B", self.b)?;
        check(self.d > 0.0, "D", self.d)?;
        check(self.mu > 0.0, "mu", self.mu)?;
        check(self.e > 0.0, "E", self.e)?;
        check(self.sigma < 0.0, "sigma", self.sigma)?;
        check((0.0..=1.0).contains(&self.beta), "beta", self.beta)?;
        check(self.r0 >= 1.0, "r0", self.r0)?;
        check(self.dt_neural > 0.0, "dt_neural", self.dt_neural)?;
        check(self.tol >= 0.0, "tol", self.tol)?;
        check(self.relax_iters >= 1, "relax_iters", self.relax_iters as f64)?;
        let s = self.stability_number();
        if s >= 1.0 {
            return Err(ParamError::Unstable(s));
        }
        Ok(())
    }

    /// `μ ∈ (0, 1]`; larger values amplify propagated activity into saturation.
    pub fn mu_in_recommended_range(&self) -> bool {
        self.mu > 0.0 && self.mu <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("parameter {name} out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("non-finite shunting parameter")]
    NonFinite,
    #[error("explicit step unstable: dt·(A+E+8μ·max(B,D)) = {0:.4} ≥ 1")]
    Unstable(f64),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("self-connection of cell ({}, {}) is undefined", .0.x, .0.y)]
    SelfConnection(Cell),
    #[error("cell ({}, {}) is both a target and an obstacle", .0.x, .0.y)]
    ContradictoryInput(Cell),
    #[error("activity at cell ({}, {}) became non-finite", .0.x, .0.y)]
    NumericalInstability(Cell),
    #[error("input vector has {got} entries, grid has {expected}")]
    InputSize { expected: usize, got: usize },
}

/// Lateral weight between two cells: `μ/|kl|` inside the receptive field, 0 beyond.
pub fn connection_weight(k: Cell, l: Cell, params: &ShuntingParams) -> Result<f64, FieldError> {
    if k == l {
        return Err(FieldError::SelfConnection(k));
    }
    Ok(weight_at_distance(k.distance_cells(l), params))
}

fn weight_at_distance(dist: f64, params: &ShuntingParams) -> f64 {
    // Small slack so r0 = √2 admits diagonal neighbors despite rounding.
    if dist > 0.0 && dist <= params.r0 + 1e-12 {
        params.mu / dist
    } else {
        0.0
    }
}

/// Neural activity and external input on one lattice.
///
/// Storage is padded with a ring of zero-activity cells. A zero neighbor
/// contributes neither excitation (`[0]⁺ = 0`) nor inhibition
/// (`[0 - σ]⁻ = 0` for `σ < 0`), so the padding is equivalent to summing over
/// in-bounds neighbors only.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralField {
    grid: GridSpec,
    stride: usize,
    zeta: Vec<f64>,
    scratch: Vec<f64>,
    external: Vec<f64>,
}

impl NeuralField {
    pub fn new(grid: GridSpec) -> Self {
        let stride = grid.width + 2;
        let n = stride * (grid.height + 2);
        NeuralField {
            grid,
            stride,
            zeta: vec![0.0; n],
            scratch: vec![0.0; n],
            external: vec![0.0; n],
        }
    }

    #[inline]
    fn padded(&self, cell: Cell) -> usize {
        (cell.y + 1) * self.stride + cell.x + 1
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn activity(&self, cell: Cell) -> f64 {
        self.zeta[self.padded(cell)]
    }

    pub fn set_activity(&mut self, cell: Cell, value: f64) {
        let i = self.padded(cell);
        self.zeta[i] = value;
    }

    #[inline]
    pub fn input(&self, cell: Cell) -> f64 {
        self.external[self.padded(cell)]
    }

    /// Activities in row-major order, unpadded.
    pub fn activities(&self) -> Vec<f64> {
        self.grid.cells().map(|c| self.activity(c)).collect()
    }

    pub fn inputs(&self) -> Vec<f64> {
        self.grid.cells().map(|c| self.input(c)).collect()
    }

    /// Replaces the external input, given row-major and unpadded.
    pub fn set_inputs(&mut self, inputs: &[f64]) -> Result<(), FieldError> {
        if inputs.len() != self.grid.len() {
            return Err(FieldError::InputSize {
                expected: self.grid.len(),
                got: inputs.len(),
            });
        }
        for (i, &v) in inputs.iter().enumerate() {
            let p = self.padded(self.grid.cell_at(i));
            self.external[p] = v;
        }
        Ok(())
    }

    pub fn reset_activity(&mut self) {
        self.zeta.iter_mut().for_each(|z| *z = 0.0);
    }

    /// Copies the activity state of another field on the same grid.
    pub fn copy_activity_from(&mut self, other: &NeuralField) {
        debug_assert_eq!(self.grid, other.grid);
        self.zeta.copy_from_slice(&other.zeta);
    }

    pub fn max_activity(&self) -> f64 {
        self.grid
            .cells()
            .map(|c| self.activity(c))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Builds the external input: `+E` at each target cell, `-E` at each blocked
/// cell and each extra inhibitory cell (other robots), 0 elsewhere.
pub fn external_input(
    grid: &GridSpec,
    blocked: &[bool],
    target_cells: &[Cell],
    inhibitory_cells: &[Cell],
    e: f64,
) -> Result<Vec<f64>, FieldError> {
    let mut input: Vec<f64> = blocked.iter().map(|&b| if b { -e } else { 0.0 }).collect();
    for &c in inhibitory_cells {
        input[grid.index(c)] = -e;
    }
    for &c in target_cells {
        let i = grid.index(c);
        if input[i] < 0.0 {
            return Err(FieldError::ContradictoryInput(c));
        }
        input[i] = e;
    }
    Ok(input)
}

/// Input for the field a robot navigates by. Designated targets excite
/// (rescued ones are skipped), obstacles active at `tick` and every robot other
/// than `robot` inhibit. With `robot == None` no robots are injected.
pub fn assemble_external_input(
    env: &Environment,
    robot: Option<usize>,
    designated_targets: &[usize],
    tick: u64,
    params: &ShuntingParams,
) -> Result<Vec<f64>, FieldError> {
    let blocked = env.occupancy_at(tick);
    let targets: Vec<Cell> = designated_targets
        .iter()
        .filter(|&&t| env.targets[t].is_live())
        .map(|&t| env.target_cell(t))
        .collect();
    let others: Vec<Cell> = match robot {
        Some(me) => env
            .robots
            .iter()
            .filter(|r| r.id != me)
            .map(|r| r.cell(&env.grid))
            .collect(),
        None => Vec::new(),
    };
    external_input(&env.grid, &blocked, &targets, &others, params.e)
}

/// One explicit Euler step of the safety-aware shunting equation, applied
/// synchronously, then clamped to `[-D, B]`. Returns the largest `|Δζ|`.
pub fn step_field(field: &mut NeuralField, params: &ShuntingParams) -> Result<f64, FieldError> {
    let w_ax = weight_at_distance(1.0, params);
    let w_dg = weight_at_distance(std::f64::consts::SQRT_2, params);
    let (v_ax, v_dg) = (params.beta * w_ax, params.beta * w_dg);
    let (a, b, d, sigma, dt) = (params.a, params.b, params.d, params.sigma, params.dt_neural);
    let s = field.stride;
    let (w, h) = (field.grid.width, field.grid.height);
    let mut max_delta = 0.0f64;
    {
        let cur = &field.zeta;
        let next = &mut field.scratch;
        let ext = &field.external;
        for y in 0..h {
            let row = (y + 1) * s + 1;
            for k in row..row + w {
                let z = cur[k];
                let i = ext[k];
                let (n, so, e, we) = (cur[k + s], cur[k - s], cur[k + 1], cur[k - 1]);
                let (ne, nw, se, sw) = (cur[k + s + 1], cur[k + s - 1], cur[k - s + 1], cur[k - s - 1]);
                let exc = i.max(0.0)
                    + w_ax * (n.max(0.0) + so.max(0.0) + e.max(0.0) + we.max(0.0))
                    + w_dg * (ne.max(0.0) + nw.max(0.0) + se.max(0.0) + sw.max(0.0));
                let inh = (-i).max(0.0)
                    + v_ax
                        * ((sigma - n).max(0.0)
                            + (sigma - so).max(0.0)
                            + (sigma - e).max(0.0)
                            + (sigma - we).max(0.0))
                    + v_dg
                        * ((sigma - ne).max(0.0)
                            + (sigma - nw).max(0.0)
                            + (sigma - se).max(0.0)
                            + (sigma - sw).max(0.0));
                let rate = -a * z + (b - z) * exc - (d + z) * inh;
                let raw = z + dt * rate;
                if !raw.is_finite() {
                    let x = k - row;
                    return Err(FieldError::NumericalInstability(Cell::new(x, y)));
                }
                let nz = raw.clamp(-d, b);
                max_delta = max_delta.max((nz - z).abs());
                next[k] = nz;
            }
        }
    }
    std::mem::swap(&mut field.zeta, &mut field.scratch);
    Ok(max_delta)
}

/// Steps the field up to `relax_iters` times, stopping once the largest
/// per-cell change drops below `tol`. Returns the number of steps taken.
pub fn relax(field: &mut NeuralField, params: &ShuntingParams) -> Result<usize, FieldError> {
    relax_for(field, params, params.relax_iters)
}

pub fn relax_for(
    field: &mut NeuralField,
    params: &ShuntingParams,
    max_iters: usize,
) -> Result<usize, FieldError> {
    for it in 1..=max_iters.max(1) {
        if step_field(field, params)? < params.tol {
            return Ok(it);
        }
    }
    Ok(max_iters.max(1))
}

/// Steady state of an isolated neuron under fixed excitatory and inhibitory drive.
pub fn isolated_equilibrium(excitation: f64, inhibition: f64, params: &ShuntingParams) -> f64 {
    (params.b * excitation - params.d * inhibition) / (params.a + excitation + inhibition)
}
