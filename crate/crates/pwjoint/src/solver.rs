//! ADMM for the joint beamforming/deconvolution problem
//!
//! ```text
//! min_x  γ_D/2 ‖y_DAS − Hx‖² + γ_B/2 ‖y_ch − Φx‖² + μ‖x‖₁
//! ```
//!
//! split as `u` (deconvolution side), `z` (beamforming side) and `w` (sparse
//! side) with consensus constraints `u = w`, `u = z`. Each outer iteration
//! updates u, then z, then w, then the two multiplier blocks.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acquisition::ImagingGrid;
use crate::error::{check_len, invalid, Error, Result};
use crate::forward::SystemMatrix;
use crate::image::RfImage;
use crate::psf::{Convolver, Psf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Joint,
    BeamformOnly,
    DeconvOnly,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSettings {
    pub max_iter: usize,
    /// Relative gradient-norm tolerance.
    pub tol: f64,
}

impl Default for InnerSettings {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gamma_d: f64,
    pub gamma_b: f64,
    pub mu: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub mode: Mode,
    pub inner: InnerSettings,
}

impl SolverConfig {
    pub fn joint(gamma_d: f64, gamma_b: f64, mu: f64, beta: f64) -> Self {
        Self {
            gamma_d,
            gamma_b,
            mu,
            beta,
            epsilon: 1e-3,
            max_iter: 100,
            mode: Mode::Joint,
            inner: InnerSettings::default(),
        }
    }

    pub fn beamform_only(mu: f64, beta: f64) -> Self {
        Self {
            mode: Mode::BeamformOnly,
            ..Self::joint(0.0, 1.0, mu, beta)
        }
    }

    pub fn deconv_only(mu: f64, beta: f64) -> Self {
        Self {
            mode: Mode::DeconvOnly,
            ..Self::joint(1.0, 0.0, mu, beta)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_d >= 0.0) || !(self.gamma_b >= 0.0) {
            return Err(invalid("gamma", "fidelity weights must be non-negative"));
        }
        if self.gamma_d + self.gamma_b == 0.0 {
            return Err(invalid("gamma", "at least one fidelity weight must be positive"));
        }
        if !(self.mu >= 0.0) {
            return Err(invalid("mu", "must be non-negative"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(invalid("beta", "must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        if self.max_iter == 0 || self.inner.max_iter == 0 {
            return Err(invalid("max_iter", "must be positive"));
        }
        if !(self.inner.tol > 0.0) {
            return Err(invalid("inner.tol", "must be positive"));
        }
        match self.mode {
            Mode::BeamformOnly if self.gamma_d != 0.0 => {
                Err(invalid("gamma_d", "beamform-only mode requires gamma_d = 0"))
            }
            Mode::DeconvOnly if self.gamma_b != 0.0 => {
                Err(invalid("gamma_b", "deconv-only mode requires gamma_b = 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub lam1: Vec<f64>,
    pub lam2: Vec<f64>,
    pub iter: usize,
    pub objective_history: Vec<f64>,
    /// `(‖u − z‖, ‖u − w‖)` after each iteration.
    pub primal_residuals: Vec<(f64, f64)>,
}

impl SolverState {
    pub fn new(n: usize) -> Self {
        Self::from_init(&vec![0.0; n])
    }

    /// `u = w = z = init`, multipliers zero.
    pub fn from_init(init: &[f64]) -> Self {
        let n = init.len();
        Self {
            u: init.to_vec(),
            w: init.to_vec(),
            z: init.to_vec(),
            lam1: vec![0.0; n],
            lam2: vec![0.0; n],
            iter: 0,
            objective_history: Vec::new(),
            primal_residuals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub result: RfImage,
    pub state: SolverState,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time: f64,
    pub config: SolverConfig,
    /// Sequential mode only: the beamform-only stage and the scale applied to
    /// its output before deconvolution.
    pub first_stage: Option<Box<SolveReport>>,
    pub handoff_scale: Option<f64>,
}

/// JSON-friendly view of a [`SolveReport`] without the image payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub config: SolverConfig,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time: f64,
    pub objective_history: Vec<f64>,
    pub residual_uz: Vec<f64>,
    pub residual_uw: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub handoff_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_stage: Option<Box<ReportSummary>>,
}

impl SolveReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            config: self.config,
            converged: self.converged,
            iterations: self.iterations,
            wall_time: self.wall_time,
            objective_history: self.state.objective_history.clone(),
            residual_uz: self.state.primal_residuals.iter().map(|r| r.0).collect(),
            residual_uw: self.state.primal_residuals.iter().map(|r| r.1).collect(),
            handoff_scale: self.handoff_scale,
            first_stage: self.first_stage.as_ref().map(|r| Box::new(r.summary())),
        }
    }

    pub fn final_objective(&self) -> f64 {
        *self.state.objective_history.last().unwrap_or(&f64::NAN)
    }
}

struct ChannelTerm<'a> {
    model: &'a SystemMatrix,
    y: &'a [f64],
    phi_t_y: Vec<f64>,
}

struct ImageTerm<'a> {
    psf: &'a Psf,
    conv: Convolver,
    y: &'a RfImage,
    h_t_y: Vec<f64>,
}

/// Data and operators for one reconstruction. Either term may be absent when
/// its weight is zero.
pub struct Problem<'a> {
    grid: ImagingGrid,
    channel: Option<ChannelTerm<'a>>,
    image: Option<ImageTerm<'a>>,
}

impl<'a> Problem<'a> {
    pub fn new(grid: ImagingGrid) -> Self {
        Self {
            grid,
            channel: None,
            image: None,
        }
    }

    pub fn with_channel(mut self, model: &'a SystemMatrix, y_ch: &'a [f64]) -> Result<Self> {
        check_len("Problem (model columns)", self.grid.len(), model.num_cols())?;
        let phi_t_y = model.apply_adjoint(y_ch)?;
        self.channel = Some(ChannelTerm {
            model,
            y: y_ch,
            phi_t_y,
        });
        Ok(self)
    }

    pub fn with_image(mut self, psf: &'a Psf, y_das: &'a RfImage) -> Result<Self> {
        check_len("Problem (y_das)", self.grid.len(), y_das.len())?;
        let conv = Convolver::new(psf, self.grid.nz, self.grid.nx)?;
        let h_t_y = conv.apply(y_das.as_slice(), true)?;
        self.image = Some(ImageTerm {
            psf,
            conv,
            y: y_das,
            h_t_y,
        });
        Ok(self)
    }

    pub fn grid(&self) -> &ImagingGrid {
        &self.grid
    }

    fn need_channel(&self) -> Result<&ChannelTerm<'a>> {
        self.channel
            .as_ref()
            .ok_or_else(|| invalid("model", "gamma_b > 0 needs a system matrix and channel data"))
    }

    fn need_image(&self) -> Result<&ImageTerm<'a>> {
        self.image
            .as_ref()
            .ok_or_else(|| invalid("psf", "gamma_d > 0 needs a PSF and a DAS image"))
    }

    fn image_misfit(&self, x: &[f64]) -> Result<f64> {
        let t = self.need_image()?;
        let hx = t.conv.apply(x, false)?;
        Ok(sq_dist(t.y.as_slice(), &hx))
    }

    fn channel_misfit(&self, x: &[f64]) -> Result<f64> {
        let t = self.need_channel()?;
        let px = t.model.apply_forward(x)?;
        Ok(sq_dist(t.y, &px))
    }

    /// Full objective at a single image `x`.
    pub fn objective(&self, x: &[f64], cfg: &SolverConfig) -> Result<f64> {
        self.split_objective(x, x, x, cfg)
    }

    /// Objective with each term evaluated on its own split variable:
    /// image fidelity at `u`, channel fidelity at `z`, sparsity at `w`.
    fn split_objective(&self, u: &[f64], z: &[f64], w: &[f64], cfg: &SolverConfig) -> Result<f64> {
        check_len("objective", self.grid.len(), u.len())?;
        let mut total = cfg.mu * w.iter().map(|v| v.abs()).sum::<f64>();
        if cfg.gamma_d > 0.0 {
            total += 0.5 * cfg.gamma_d * self.image_misfit(u)?;
        }
        if cfg.gamma_b > 0.0 {
            total += 0.5 * cfg.gamma_b * self.channel_misfit(z)?;
        }
        Ok(total)
    }
}

/// `γ_D/2‖y_DAS − Hx‖² + γ_B/2‖y_ch − Φx‖² + μ‖x‖₁`.
pub fn objective(
    x: &[f64],
    y_das: &RfImage,
    psf: &Psf,
    model: &SystemMatrix,
    y_ch: &[f64],
    cfg: &SolverConfig,
) -> Result<f64> {
    Problem::new(y_das.grid)
        .with_channel(model, y_ch)?
        .with_image(psf, y_das)?
        .objective(x, cfg)
}

/// Result of the inner z-solve.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub z: Vec<f64>,
    /// Gradient norm at the start and after every inner iteration.
    pub grad_norms: Vec<f64>,
}

/// Minimizes `γ_B/2‖y − Φz‖² + β/2‖u − z + λ₂/β‖²` by conjugate residuals on
/// `(γ_B ΦᵀΦ + βI) z = γ_B Φᵀy + βu + λ₂`, warm-started at `z0`.
#[allow(clippy::too_many_arguments)]
pub fn beamform_update(
    model: &SystemMatrix,
    y_ch: &[f64],
    u: &[f64],
    lam2: &[f64],
    gamma_b: f64,
    beta: f64,
    inner: &InnerSettings,
    z0: Option<&[f64]>,
) -> Result<InnerOutcome> {
    let phi_t_y = model.apply_adjoint(y_ch)?;
    beamform_update_pre(model, &phi_t_y, u, lam2, gamma_b, beta, inner, z0)
}

#[allow(clippy::too_many_arguments)]
fn beamform_update_pre(
    model: &SystemMatrix,
    phi_t_y: &[f64],
    u: &[f64],
    lam2: &[f64],
    gamma_b: f64,
    beta: f64,
    inner: &InnerSettings,
    z0: Option<&[f64]>,
) -> Result<InnerOutcome> {
    if !(beta > 0.0) {
        return Err(invalid("beta", "must be positive"));
    }
    let n = model.num_cols();
    check_len("beamform_update (u)", n, u.len())?;
    check_len("beamform_update (lam2)", n, lam2.len())?;
    if gamma_b == 0.0 {
        let z = (0..n).map(|k| u[k] + lam2[k] / beta).collect();
        return Ok(InnerOutcome {
            z,
            grad_norms: vec![0.0],
        });
    }
    let b: Vec<f64> = (0..n)
        .map(|k| gamma_b * phi_t_y[k] + beta * u[k] + lam2[k])
        .collect();
    let mut x = match z0 {
        Some(z) => {
            check_len("beamform_update (z0)", n, z.len())?;
            z.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut scratch = vec![0.0; model.num_rows()];
    let mut apply = |v: &[f64], out: &mut [f64]| {
        model.apply_normal(v, &mut scratch, out);
        for k in 0..n {
            out[k] = gamma_b * out[k] + beta * v[k];
        }
    };

    let stop = inner.tol * (1.0 + norm(&b));
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = (0..n).map(|k| b[k] - ax[k]).collect();
    let mut trace = vec![norm(&r)];
    if trace[0] <= stop {
        return Ok(InnerOutcome { z: x, grad_norms: trace });
    }
    let mut ar = vec![0.0; n];
    apply(&r, &mut ar);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut r_ar = dot(&r, &ar);

    for _ in 0..inner.max_iter {
        let ap_ap = dot(&ap, &ap);
        if ap_ap == 0.0 {
            break;
        }
        let alpha = r_ar / ap_ap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rn = norm(&r);
        trace.push(rn);
        if !rn.is_finite() {
            return Err(Error::NonFinite {
                iterations: trace.len() - 1,
                trace,
            });
        }
        if rn <= stop {
            break;
        }
        apply(&r, &mut ar);
        let r_ar_new = dot(&r, &ar);
        let gamma = r_ar_new / r_ar;
        r_ar = r_ar_new;
        for k in 0..n {
            p[k] = r[k] + gamma * p[k];
            ap[k] = ar[k] + gamma * ap[k];
        }
    }
    Ok(InnerOutcome { z: x, grad_norms: trace })
}

/// Soft thresholding of `u + λ₁/β` at `μ/β`.
pub fn sparsity_update(u: &[f64], lam1: &[f64], mu: f64, beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(invalid("beta", "must be positive"));
    }
    check_len("sparsity_update", u.len(), lam1.len())?;
    let t = mu / beta;
    Ok(u.iter()
        .zip(lam1)
        .map(|(&a, &l)| soft_threshold(a + l / beta, t))
        .collect())
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// `λ₁ += β(u − w)`, `λ₂ += β(u − z)`.
pub fn multiplier_update(state: &mut SolverState, beta: f64) {
    for k in 0..state.u.len() {
        state.lam1[k] += beta * (state.u[k] - state.w[k]);
        state.lam2[k] += beta * (state.u[k] - state.z[k]);
    }
}

/// Runs the configured mode from zero initial values.
pub fn solve(
    cfg: &SolverConfig,
    model: Option<&SystemMatrix>,
    y_ch: Option<&[f64]>,
    psf: Option<&Psf>,
    y_das: &RfImage,
) -> Result<SolveReport> {
    let mut problem = Problem::new(y_das.grid);
    if let (Some(m), Some(y)) = (model, y_ch) {
        problem = problem.with_channel(m, y)?;
    }
    if let Some(h) = psf {
        problem = problem.with_image(h, y_das)?;
    }
    match cfg.mode {
        Mode::Sequential => {
            let mut bf = SolverConfig {
                mode: Mode::BeamformOnly,
                gamma_d: 0.0,
                ..*cfg
            };
            if bf.gamma_b == 0.0 {
                bf.gamma_b = 1.0;
            }
            let dc = SolverConfig {
                mode: Mode::DeconvOnly,
                gamma_b: 0.0,
                gamma_d: if cfg.gamma_d == 0.0 { 1.0 } else { cfg.gamma_d },
                ..*cfg
            };
            solve_sequential(&bf, &dc, &problem)
        }
        _ => solve_problem(cfg, &problem, None),
    }
}

/// ADMM on a prepared problem, starting from `init` (zeros when `None`).
pub fn solve_problem(
    cfg: &SolverConfig,
    problem: &Problem<'_>,
    init: Option<&[f64]>,
) -> Result<SolveReport> {
    cfg.validate()?;
    if cfg.mode == Mode::Sequential {
        return Err(invalid("mode", "use solve_sequential for the two-stage mode"));
    }
    let n = problem.grid.len();
    let image = if cfg.gamma_d > 0.0 {
        Some(problem.need_image()?)
    } else {
        None
    };
    let channel = if cfg.gamma_b > 0.0 {
        Some(problem.need_channel()?)
    } else {
        None
    };
    let mut st = match init {
        Some(x) => {
            check_len("initial image", n, x.len())?;
            SolverState::from_init(x)
        }
        None => SolverState::new(n),
    };

    let start = Instant::now();
    let beta = cfg.beta;
    let obj0 = problem.split_objective(&st.u, &st.z, &st.w, cfg)?;
    st.objective_history.push(obj0);
    let mut converged = false;

    while st.iter < cfg.max_iter {
        st.u = match image {
            Some(t) => t
                .conv
                .solve_u(&t.h_t_y, &st.w, &st.z, &st.lam1, &st.lam2, cfg.gamma_d, beta),
            None => (0..n)
                .map(|k| (beta * st.w[k] + beta * st.z[k] - st.lam1[k] - st.lam2[k]) / (2.0 * beta))
                .collect(),
        };
        st.z = match channel {
            Some(t) => {
                beamform_update_pre(
                    t.model,
                    &t.phi_t_y,
                    &st.u,
                    &st.lam2,
                    cfg.gamma_b,
                    beta,
                    &cfg.inner,
                    Some(&st.z),
                )?
                .z
            }
            None => (0..n).map(|k| st.u[k] + st.lam2[k] / beta).collect(),
        };
        st.w = sparsity_update(&st.u, &st.lam1, cfg.mu, beta)?;
        multiplier_update(&mut st, beta);
        st.iter += 1;

        let obj = problem.split_objective(&st.u, &st.z, &st.w, cfg)?;
        st.primal_residuals
            .push((dist(&st.u, &st.z), dist(&st.u, &st.w)));
        let prev = *st.objective_history.last().unwrap();
        st.objective_history.push(obj);
        if !obj.is_finite() || (obj0 > 0.0 && obj > 1e6 * obj0) {
            return Err(Error::Diverged {
                iteration: st.iter,
                objective: obj,
                initial: obj0,
                history: st.objective_history,
            });
        }
        if (obj - prev).abs() / prev.max(1e-30) <= cfg.epsilon {
            converged = true;
            break;
        }
    }

    let out = if cfg.mode == Mode::BeamformOnly {
        st.z.clone()
    } else {
        st.u.clone()
    };
    Ok(SolveReport {
        result: RfImage::from_vec(problem.grid, out)?,
        converged,
        iterations: st.iter,
        wall_time: start.elapsed().as_secs_f64(),
        config: *cfg,
        state: st,
        first_stage: None,
        handoff_scale: None,
    })
}

/// Beamform-only to convergence, then deconvolution of its output. The
/// intermediate image is rescaled by the least-squares gain that best matches
/// it to the DAS image, so the second stage sees data on the DAS amplitude
/// scale its PSF was calibrated for.
pub fn solve_sequential(
    beamform: &SolverConfig,
    deconv: &SolverConfig,
    problem: &Problem<'_>,
) -> Result<SolveReport> {
    if beamform.mode != Mode::BeamformOnly || deconv.mode != Mode::DeconvOnly {
        return Err(invalid("mode", "sequential stages must be beamform-only then deconv-only"));
    }
    let t0 = Instant::now();
    let first = solve_problem(beamform, problem, None)?;
    let image = problem.need_image()?;
    let z = first.result.as_slice();
    let zz = dot(z, z);
    let scale = if zz > 0.0 {
        dot(z, image.y.as_slice()) / zz
    } else {
        1.0
    };
    let handoff = first.result.clone().scaled(scale);
    let stage2 = Problem::new(problem.grid).with_image(image.psf, &handoff)?;
    let mut second = solve_problem(deconv, &stage2, None)?;
    second.wall_time = t0.elapsed().as_secs_f64();
    second.config.mode = Mode::Sequential;
    second.handoff_scale = Some(scale);
    second.first_stage = Some(Box::new(first));
    Ok(second)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}
