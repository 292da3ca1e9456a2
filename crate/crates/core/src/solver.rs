//! Unified ADMM super-resolution loop.
//!
//! Per outer iteration:
//!   x-update: solve (L + rho I) x = (1/sigma^2)(SH)^T y + rho (v - u) by
//!             warm-started matrix-free conjugate gradient, with
//!             L = (1/sigma^2)(SH)^T SH;
//!   v-update: one denoiser call D(x + u, sqrt(beta/rho)) (PPP), or the
//!             fixed-point recursion
//!             z_j = (beta D(z_{j-1}, sqrt(beta/rho)) + rho (x + u)) / (beta + rho)
//!             started at z_0 = v (RED);
//!   rho/dual: dual gap g = ||rho (v_new - v_old)||^2 drives the schedule --
//!             rho shrinks by `rho_decrease_factor` after
//!             `rho_decrease_window` consecutive strict gap increases
//!             (history resets), otherwise rho grows by alpha; u is rescaled
//!             by rho_old/rho_new on every change.
//!
//! Initialization: x0 = v0 = bicubic upscale of y, u0 = 0, rho = rho0.

use crate::denoisers::{denoise, DenoiserSpec};
use crate::error::{Error, Result};
use crate::metrics::{bicubic_resize, psnr, PsnrOptions, ResizeDirection};
use crate::operators::{forward_adjoint, normal_apply, DegradationModel};
use crate::volume::{elementwise_axpy, ImageVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Ppp,
    Red,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub rho0: f64,
    pub beta: f64,
    pub alpha: f64,
    pub iter: usize,
    /// RED inner fixed-point steps (1 = RED-1, 2 = RED-2); ignored by PPP.
    pub iter_inner: usize,
    /// Relative residual target for the x-update CG.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Consecutive strict dual-gap increases that trigger a rho decrease.
    pub rho_decrease_window: usize,
    pub rho_decrease_factor: f64,
    /// Substituted for the model's noise sigma when that is smaller.
    pub sigma_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Red,
            rho0: 0.0001,
            beta: 0.2048,
            alpha: 1.2,
            iter: 40,
            iter_inner: 1,
            cg_tol: 1e-6,
            cg_max_iter: 400,
            rho_decrease_window: 3,
            rho_decrease_factor: 0.5,
            sigma_min: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.rho0 > 0.0) {
            return bad(format!("rho0 must be > 0, got {}", self.rho0));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        // alpha = 1 freezes rho and reduces the loop to the plain ADMM updates
        if !(self.alpha >= 1.0) {
            return bad(format!("alpha must be >= 1, got {}", self.alpha));
        }
        if self.iter == 0 {
            return bad("iter must be >= 1".into());
        }
        if self.iter_inner == 0 {
            return bad("iter_inner must be >= 1".into());
        }
        if !(self.cg_tol > 0.0) {
            return bad(format!("cg_tol must be > 0, got {}", self.cg_tol));
        }
        if self.cg_max_iter == 0 {
            return bad("cg_max_iter must be >= 1".into());
        }
        if self.rho_decrease_window == 0 {
            return bad("rho_decrease_window must be >= 1".into());
        }
        if !(self.rho_decrease_factor > 0.0 && self.rho_decrease_factor < 1.0) {
            return bad(format!(
                "rho_decrease_factor must be in (0,1), got {}",
                self.rho_decrease_factor
            ));
        }
        if !(self.sigma_min > 0.0) {
            return bad(format!("sigma_min must be > 0, got {}", self.sigma_min));
        }
        Ok(())
    }

    /// Noise sigma used in the likelihood, never below sigma_min.
    pub fn effective_sigma(&self, m: &DegradationModel) -> f64 {
        if m.noise_sigma < self.sigma_min {
            log::warn!(
                "noise sigma {} below sigma_min, substituting {}",
                m.noise_sigma,
                self.sigma_min
            );
            self.sigma_min
        } else {
            m.noise_sigma
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: ImageVolume,
    pub v: ImageVolume,
    pub u: ImageVolume,
    pub rho: f64,
    pub k: usize,
    pub dual_gap_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub rho: f64,
    pub primal_residual: f64,
    pub dual_gap: f64,
    pub cg_iters: usize,
    pub psnr_vs_truth: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    /// Total denoiser invocations over the run (instrumentation, not part of
    /// the CSV schema).
    pub denoiser_calls: usize,
}

impl ConvergenceTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,rho,primal_residual,dual_gap,cg_iters,psnr\n");
        for r in &self.records {
            let psnr = r
                .psnr_vs_truth
                .map(|p| format!("{p:.6}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{},{}\n",
                r.iter, r.rho, r.primal_residual, r.dual_gap, r.cg_iters, psnr
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// x0 = v0 = bicubic upscale of y by the model's scale, u0 = 0, rho = rho0.
pub fn initialize(y: &ImageVolume, m: &DegradationModel, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate()?;
    let x0 = bicubic_resize(y, m.scale, ResizeDirection::Up)?;
    let (h, w, t) = x0.shape();
    Ok(SolverState {
        v: x0.clone(),
        u: ImageVolume::zeros(h, w, t),
        x: x0,
        rho: cfg.rho0,
        k: 0,
        dual_gap_history: Vec::new(),
    })
}

/// Matrix-free CG for (L + rho I) x = b, warm-started from `x0`.
fn conjugate_gradient(
    b: &ImageVolume,
    x0: &ImageVolume,
    m: &DegradationModel,
    sigma: f64,
    rho: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(ImageVolume, CgStats)> {
    let model = DegradationModel {
        kernel: m.kernel.clone(),
        scale: m.scale,
        noise_sigma: sigma,
    };
    let apply = |v: &ImageVolume| -> Result<ImageVolume> {
        elementwise_axpy(rho, v, &normal_apply(v, &model)?)
    };
    let bnorm = b.norm();
    if bnorm == 0.0 {
        let (h, w, t) = b.shape();
        return Ok((
            ImageVolume::zeros(h, w, t),
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        ));
    }
    let mut x = x0.clone();
    let mut r = b.sub(&apply(&x)?)?;
    let mut p = r.clone();
    let mut rs = r.dot(&r)?;
    let mut iterations = 0;
    while rs.sqrt() / bnorm > tol && iterations < max_iter {
        let ap = apply(&p)?;
        let alpha = rs / p.dot(&ap)?;
        x = elementwise_axpy(alpha, &p, &x)?;
        r = elementwise_axpy(-alpha, &ap, &r)?;
        let rs_new = r.dot(&r)?;
        p = elementwise_axpy(rs_new / rs, &p, &r)?;
        rs = rs_new;
        iterations += 1;
    }
    let relative_residual = rs.sqrt() / bnorm;
    Ok((
        x,
        CgStats {
            iterations,
            relative_residual,
            converged: relative_residual <= tol,
        },
    ))
}

/// Solves the data-fit subproblem (L + rho I) x = (1/sigma^2)(SH)^T y + rho (v - u).
/// Returns the new x and the CG statistics; non-convergence is reported in
/// the stats, the caller decides whether to treat it as fatal.
pub fn x_update(
    state: &SolverState,
    y: &ImageVolume,
    m: &DegradationModel,
    cfg: &SolverConfig,
) -> Result<(ImageVolume, CgStats)> {
    let sigma = cfg.effective_sigma(m);
    let data_term = forward_adjoint(y, m)?.scale(1.0 / (sigma * sigma))?;
    let b = elementwise_axpy(state.rho, &state.v.sub(&state.u)?, &data_term)?;
    conjugate_gradient(&b, &state.x, m, sigma, state.rho, cfg.cg_tol, cfg.cg_max_iter)
}

/// PPP v-update: one denoiser call on x + u at noise level sqrt(beta/rho).
pub fn v_update_ppp(
    state: &SolverState,
    cfg: &SolverConfig,
    d: &DenoiserSpec,
) -> Result<(ImageVolume, usize)> {
    let sigma_d = (cfg.beta / state.rho).sqrt();
    let v = denoise(&state.x.add(&state.u)?, sigma_d, d)?;
    Ok((v, 1))
}

/// RED v-update: `iter_inner` fixed-point steps
/// z_j = (beta f(z_{j-1}) + rho (x + u)) / (beta + rho), z_0 = v, with the
/// denoiser held at sqrt(beta/rho) on every inner step.
pub fn v_update_red(
    state: &SolverState,
    cfg: &SolverConfig,
    d: &DenoiserSpec,
) -> Result<(ImageVolume, usize)> {
    let sigma_d = (cfg.beta / state.rho).sqrt();
    let rho = state.rho;
    let beta = cfg.beta;
    // z_j = (beta f(z_{j-1}) + rho (x + u)) / (beta + rho), evaluated in that
    // literal order so the identity-denoiser step reproduces the formula bitwise
    let anchor = state.x.add(&state.u)?.scale(rho)?;
    let mut z = state.v.clone();
    for _ in 0..cfg.iter_inner {
        let fz = denoise(&z, sigma_d, d)?;
        z = fz.map(|s| s * beta)?.add(&anchor)?.map(|s| s / (beta + rho))?;
    }
    Ok((z, cfg.iter_inner))
}

/// Applies the rho schedule and the rescaled dual update. `x_new`/`v_new` are
/// the just-computed iterates; `state.v` still holds the previous v, and
/// `state.rho` the rho they were produced under. Returns
/// (new_rho, new_u, dual_gap).
pub fn rho_and_dual_update(
    state: &mut SolverState,
    x_new: &ImageVolume,
    v_new: &ImageVolume,
    cfg: &SolverConfig,
) -> Result<(f64, ImageVolume, f64)> {
    let gap = {
        let d = v_new.sub(&state.v)?;
        let g = state.rho * d.norm();
        g * g
    };
    let increased = state
        .dual_gap_history
        .last()
        .map(|&prev| gap > prev)
        .unwrap_or(false);
    state.dual_gap_history.push(gap);
    // trigger: the last `window` gaps are pairwise strictly increasing
    let w = cfg.rho_decrease_window;
    let trigger = increased && state.dual_gap_history.len() >= w && {
        let tail = &state.dual_gap_history[state.dual_gap_history.len() - w..];
        tail.windows(2).all(|p| p[1] > p[0])
    };
    let new_rho = if trigger {
        state.dual_gap_history.clear();
        cfg.rho_decrease_factor * state.rho
    } else {
        cfg.alpha * state.rho
    };
    let residual = x_new.sub(v_new)?;
    let new_u = state
        .u
        .add(&residual)?
        .scale(state.rho / new_rho)?;
    Ok((new_rho, new_u, gap))
}

/// Runs `cfg.iter` outer iterations and returns the final v with the full
/// per-iteration trace. CG non-convergence is logged and recorded, not fatal.
pub fn solve(
    y: &ImageVolume,
    m: &DegradationModel,
    cfg: &SolverConfig,
    d: &DenoiserSpec,
    truth: Option<&ImageVolume>,
) -> Result<(ImageVolume, ConvergenceTrace)> {
    cfg.validate()?;
    d.validate()?;
    let mut state = initialize(y, m, cfg)?;
    let mut trace = ConvergenceTrace::default();
    let psnr_opt = PsnrOptions::default();
    for k in 0..cfg.iter {
        let (x_new, cg) = x_update(&state, y, m, cfg)?;
        if !cg.converged {
            log::warn!(
                "iteration {k}: CG stopped at {} iterations, relative residual {:.3e}",
                cg.iterations,
                cg.relative_residual
            );
        }
        state.x = x_new;
        let (v_new, calls) = match cfg.scheme {
            Scheme::Ppp => v_update_ppp(&state, cfg, d)?,
            Scheme::Red => v_update_red(&state, cfg, d)?,
        };
        trace.denoiser_calls += calls;
        let rho_old = state.rho;
        let x_new = state.x.clone();
        let (new_rho, new_u, gap) = rho_and_dual_update(&mut state, &x_new, &v_new, cfg)?;
        let primal_residual = state.x.sub(&v_new)?.norm();
        state.v = v_new;
        state.u = new_u;
        state.rho = new_rho;
        state.k = k + 1;
        let psnr_vs_truth = match truth {
            Some(t) => Some(psnr(&state.v, t, &psnr_opt)?),
            None => None,
        };
        trace.records.push(TraceRecord {
            iter: k,
            rho: rho_old,
            primal_residual,
            dual_gap: gap,
            cg_iters: cg.iterations,
            psnr_vs_truth,
        });
    }
    Ok((state.v, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::BlurKernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_volume(h: usize, w: usize, t: usize, seed: u64) -> ImageVolume {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ImageVolume::new(h, w, t, (0..h * w * t).map(|_| rng.gen_range(0.0..255.0)).collect())
            .unwrap()
    }

    fn identity_model(sigma: f64) -> DegradationModel {
        DegradationModel::new(BlurKernel::identity(), 1, sigma).unwrap()
    }

    const IDENTITY_DENOISER: DenoiserSpec = DenoiserSpec::GaussianSmooth { kappa: 0.0 };

    #[test]
    fn initialize_contract() {
        let cfg = SolverConfig::default();
        let y = random_volume(8, 8, 3, 1);
        let m = DegradationModel::new(BlurKernel::gaussian(1.0, 3).unwrap(), 2, 1.0).unwrap();
        let st = initialize(&y, &m, &cfg).unwrap();
        assert_eq!(st.x.shape(), (16, 16, 3));
        assert_eq!(st.x, st.v);
        assert_eq!(st.u, ImageVolume::zeros(16, 16, 3));
        assert_eq!(st.rho, cfg.rho0);

        // s=1, identity blur: bicubic at scale 1 is the identity
        let m1 = identity_model(1.0);
        let st1 = initialize(&y, &m1, &cfg).unwrap();
        assert_eq!(st1.x, y);
    }

    #[test]
    fn x_update_diagonal_closed_form() {
        // H = S = I: (1/sigma^2 + rho) x = y/sigma^2 + rho (v - u)
        let sigma = 2.0;
        let m = identity_model(sigma);
        let cfg = SolverConfig {
            cg_tol: 1e-12,
            ..SolverConfig::default()
        };
        let y = random_volume(8, 8, 1, 2);
        let mut st = initialize(&y, &m, &cfg).unwrap();
        st.v = random_volume(8, 8, 1, 3);
        st.u = random_volume(8, 8, 1, 4).scale(0.01).unwrap();
        st.rho = 0.3;
        let (x, cg) = x_update(&st, &y, &m, &cfg).unwrap();
        assert!(cg.converged);
        let c = 1.0 / (sigma * sigma) + st.rho;
        for ((xs, ys), (vs, us)) in x
            .data()
            .iter()
            .zip(y.data())
            .zip(st.v.data().iter().zip(st.u.data()))
        {
            let expect = (ys / (sigma * sigma) + st.rho * (vs - us)) / c;
            assert!((xs - expect).abs() <= 1e-8 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn x_update_large_rho_pins_x_to_v_minus_u() {
        let m = DegradationModel::new(BlurKernel::gaussian(1.0, 3).unwrap(), 2, 1.0).unwrap();
        let cfg = SolverConfig::default();
        let y = random_volume(6, 6, 1, 5);
        let mut st = initialize(&y, &m, &cfg).unwrap();
        st.v = random_volume(12, 12, 1, 6);
        st.u = random_volume(12, 12, 1, 7).scale(0.1).unwrap();
        st.rho = 1e12;
        let (x, _) = x_update(&st, &y, &m, &cfg).unwrap();
        let target = st.v.sub(&st.u).unwrap();
        let rel = x.sub(&target).unwrap().norm() / target.norm();
        assert!(rel < 1e-4, "rel {rel}");
    }

    #[test]
    fn ppp_v_update_sigma_and_identity() {
        let m = identity_model(1.0);
        let y = random_volume(8, 8, 1, 8);
        let cfg = SolverConfig {
            beta: 0.2048,
            ..SolverConfig::default()
        };
        let mut st = initialize(&y, &m, &cfg).unwrap();
        st.rho = 0.0512;
        // sqrt(0.2048/0.0512) = 2 exactly
        assert_eq!((cfg.beta / st.rho).sqrt(), 2.0);
        st.u = random_volume(8, 8, 1, 9).scale(0.05).unwrap();
        let (v, calls) = v_update_ppp(&st, &cfg, &IDENTITY_DENOISER).unwrap();
        assert_eq!(calls, 1);
        assert_eq!(v, st.x.add(&st.u).unwrap());
    }

    #[test]
    fn ppp_constancy() {
        let m = identity_model(1.0);
        let y = ImageVolume::constant(8, 8, 1, 40.0).unwrap();
        let cfg = SolverConfig::default();
        let st = initialize(&y, &m, &cfg).unwrap();
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.2 };
        let (v, _) = v_update_ppp(&st, &cfg, &spec).unwrap();
        for &s in v.data() {
            assert!((s - 40.0).abs() < 1e-9);
        }
    }

    #[test]
    fn red_one_step_identity_closed_form() {
        let m = identity_model(1.0);
        let y = random_volume(8, 8, 1, 10);
        let cfg = SolverConfig {
            iter_inner: 1,
            ..SolverConfig::default()
        };
        let mut st = initialize(&y, &m, &cfg).unwrap();
        st.rho = 0.7;
        st.v = random_volume(8, 8, 1, 11);
        st.u = random_volume(8, 8, 1, 12).scale(0.1).unwrap();
        let (z, calls) = v_update_red(&st, &cfg, &IDENTITY_DENOISER).unwrap();
        assert_eq!(calls, 1);
        let (beta, rho) = (cfg.beta, st.rho);
        for ((zs, vs), (xs, us)) in z
            .data()
            .iter()
            .zip(st.v.data())
            .zip(st.x.data().iter().zip(st.u.data()))
        {
            let expect = (beta * vs + rho * (xs + us)) / (beta + rho);
            assert!((zs - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn red_identity_converges_geometrically_to_x_plus_u() {
        let m = identity_model(1.0);
        let y = random_volume(6, 6, 1, 13);
        let mut cfg = SolverConfig::default();
        let mut st = initialize(&y, &m, &cfg).unwrap();
        st.rho = 0.5;
        st.v = random_volume(6, 6, 1, 14);
        let target = st.x.add(&st.u).unwrap();
        let ratio = cfg.beta / (cfg.beta + st.rho);
        let e0 = st.v.sub(&target).unwrap().norm();
        for inner in [1usize, 5, 20] {
            cfg.iter_inner = inner;
            let (z, _) = v_update_red(&st, &cfg, &IDENTITY_DENOISER).unwrap();
            let err = z.sub(&target).unwrap().norm();
            let bound = ratio.powi(inner as i32) * e0;
            // roundoff floor scales with ||target||, not with the shrinking error
            let tol = 1e-6 * bound + 1e-11 * target.norm();
            assert!((err - bound).abs() <= tol, "{err} vs {bound}");
        }
    }

    #[test]
    fn red_linear_denoiser_matches_dense_solve() {
        // fixed point of z -> (beta A z + rho c)/(beta+rho) solves
        // (beta (I - A) + rho I) v = rho c for linear A
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.25 };
        let m = identity_model(1.0);
        let y = random_volume(8, 8, 1, 15);
        let cfg = SolverConfig {
            iter_inner: 200,
            ..SolverConfig::default()
        };
        let mut st = initialize(&y, &m, &cfg).unwrap();
        st.rho = 1.0;
        st.v = random_volume(8, 8, 1, 16);
        st.u = random_volume(8, 8, 1, 17).scale(0.1).unwrap();
        let (z, _) = v_update_red(&st, &cfg, &spec).unwrap();

        // materialize A column by column (64 unknowns) and solve densely
        let n = 64usize;
        let sigma_d = (cfg.beta / st.rho).sqrt();
        let mut a = vec![vec![0.0; n]; n];
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            let ev = ImageVolume::new(8, 8, 1, e).unwrap();
            let ae = denoise(&ev, sigma_d, &spec).unwrap();
            for row in 0..n {
                a[row][col] = ae.data()[row];
            }
        }
        // system M v = rho (x + u), M = beta (I - A) + rho I
        let mut mat = vec![vec![0.0; n + 1]; n];
        let rhs = st.x.add(&st.u).unwrap().scale(st.rho).unwrap();
        for row in 0..n {
            for col in 0..n {
                mat[row][col] = -cfg.beta * a[row][col];
            }
            mat[row][row] += cfg.beta + st.rho;
            mat[row][n] = rhs.data()[row];
        }
        // Gaussian elimination with partial pivoting
        for col in 0..n {
            let piv = (col..n).max_by(|&r1, &r2| {
                mat[r1][col].abs().partial_cmp(&mat[r2][col].abs()).unwrap()
            }).unwrap();
            mat.swap(col, piv);
            for row in col + 1..n {
                let f = mat[row][col] / mat[col][col];
                for c2 in col..=n {
                    mat[row][c2] -= f * mat[col][c2];
                }
            }
        }
        let mut sol = vec![0.0; n];
        for row in (0..n).rev() {
            let mut acc = mat[row][n];
            for c2 in row + 1..n {
                acc -= mat[row][c2] * sol[c2];
            }
            sol[row] = acc / mat[row][row];
        }
        let dense = ImageVolume::new(8, 8, 1, sol).unwrap();
        let rel = z.sub(&dense).unwrap().norm() / dense.norm();
        assert!(rel < 1e-6, "rel {rel}");
    }

    #[test]
    fn rho_schedule_grows_by_alpha() {
        let cfg = SolverConfig::default();
        let m = identity_model(1.0);
        let y = random_volume(4, 4, 1, 18);
        let mut st = initialize(&y, &m, &cfg).unwrap();
        st.rho = 0.0001;
        let v_new = st.v.clone();
        let x_new = st.x.clone();
        let (rho, _, _) = rho_and_dual_update(&mut st, &x_new, &v_new, &cfg).unwrap();
        assert_eq!(rho, 1.2 * 0.0001);
    }

    #[test]
    fn rho_unchanged_recovers_plain_dual_update() {
        // with alpha = 1 the rescale factor is 1: u_new = u + x - v
        let cfg = SolverConfig::default();
        let m = identity_model(1.0);
        let y = random_volume(4, 4, 1, 19);
        let mut st = initialize(&y, &m, &cfg).unwrap();
        st.u = random_volume(4, 4, 1, 20).scale(0.1).unwrap();
        let v_new = random_volume(4, 4, 1, 21);
        let x_new = st.x.clone();
        let (rho, u, _) = rho_and_dual_update(&mut st, &x_new, &v_new, &cfg).unwrap();
        let plain = st.u.add(&x_new.sub(&v_new).unwrap()).unwrap();
        let expect = plain.scale(st.rho / rho).unwrap();
        for (a, b) in u.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rho_decreases_after_window_of_increasing_gaps() {
        let cfg = SolverConfig::default(); // window 3, factor 0.5
        let m = identity_model(1.0);
        let y = random_volume(4, 4, 1, 22);
        let mut st = initialize(&y, &m, &cfg).unwrap();
        st.rho = 1.0;
        let x_new = st.x.clone();
        // manufacture strictly growing gaps by scaling v displacement
        let dir = random_volume(4, 4, 1, 23).scale(0.01).unwrap();
        let mut rhos = Vec::new();
        for step in 1..=3usize {
            let v_new = st.v.add(&dir.scale(step as f64).unwrap()).unwrap();
            let (rho, u, _) = rho_and_dual_update(&mut st, &x_new, &v_new, &cfg).unwrap();
            rhos.push(rho);
            st.v = v_new;
            st.u = u;
            st.rho = rho;
        }
        // first two steps grow (history too short / still filling), third
        // completes the window of 3 strictly increasing gaps
        assert!(rhos[0] > 1.0);
        assert!(rhos[1] > rhos[0]);
        assert_eq!(rhos[2], 0.5 * rhos[1]);
        assert!(st.dual_gap_history.is_empty(), "window resets after decrease");
    }

    #[test]
    fn solve_degenerate_noop_returns_input() {
        let y = random_volume(8, 8, 1, 24);
        let m = identity_model(0.0); // sigma_min substituted
        let cfg = SolverConfig {
            scheme: Scheme::Ppp,
            iter: 1,
            ..SolverConfig::default()
        };
        let (out, trace) = solve(&y, &m, &cfg, &IDENTITY_DENOISER, None).unwrap();
        assert_eq!(trace.records.len(), 1);
        let rel = out.sub(&y).unwrap().norm() / y.norm();
        assert!(rel < 1e-3, "rel {rel}");
    }

    #[test]
    fn solve_trace_lengths_and_determinism() {
        let y = random_volume(8, 8, 2, 25);
        let m = DegradationModel::new(BlurKernel::gaussian(1.0, 3).unwrap(), 2, 1.5).unwrap();
        for scheme in [Scheme::Ppp, Scheme::Red] {
            let cfg = SolverConfig {
                scheme,
                iter: 5,
                iter_inner: 1,
                ..SolverConfig::default()
            };
            let spec = DenoiserSpec::GaussianSmooth { kappa: 0.05 };
            let (a, ta) = solve(&y, &m, &cfg, &spec, None).unwrap();
            let (b, tb) = solve(&y, &m, &cfg, &spec, None).unwrap();
            assert_eq!(ta.records.len(), 5);
            assert_eq!(a, b);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn solve_preserves_hr_shape_and_x_update_residual() {
        let y = random_volume(6, 6, 2, 26);
        let m = DegradationModel::new(BlurKernel::gaussian(1.0, 3).unwrap(), 2, 1.5).unwrap();
        let cfg = SolverConfig {
            iter: 4,
            ..SolverConfig::default()
        };
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.1 };
        // run manually to check the CG residual claim via operator application
        let mut st = initialize(&y, &m, &cfg).unwrap();
        for _ in 0..cfg.iter {
            let sigma = cfg.effective_sigma(&m);
            let data_term = forward_adjoint(&y, &m).unwrap().scale(1.0 / (sigma * sigma)).unwrap();
            let b = elementwise_axpy(st.rho, &st.v.sub(&st.u).unwrap(), &data_term).unwrap();
            let (x_new, cg) = x_update(&st, &y, &m, &cfg).unwrap();
            assert!(cg.converged);
            let ax = elementwise_axpy(st.rho, &x_new, &normal_apply(&x_new, &m).unwrap()).unwrap();
            let res = b.sub(&ax).unwrap().norm() / b.norm();
            assert!(res <= cfg.cg_tol * 1.01, "res {res}");
            st.x = x_new;
            assert_eq!(st.x.shape(), (12, 12, 2));
            let (v_new, _) = v_update_red(&st, &cfg, &spec).unwrap();
            let x_clone = st.x.clone();
            let (rho, u, _) = rho_and_dual_update(&mut st, &x_clone, &v_new, &cfg).unwrap();
            st.v = v_new;
            st.u = u;
            st.rho = rho;
            assert_eq!(st.v.shape(), (12, 12, 2));
            assert_eq!(st.u.shape(), (12, 12, 2));
            assert!(st.rho > 0.0);
        }
    }

    #[test]
    fn monotone_rho_growth_without_triggers() {
        let y = random_volume(6, 6, 1, 27);
        let m = identity_model(1.0);
        let cfg = SolverConfig {
            iter: 8,
            // window longer than the run: decrease can never trigger
            rho_decrease_window: 9,
            ..SolverConfig::default()
        };
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.3 };
        let (_, trace) = solve(&y, &m, &cfg, &spec, None).unwrap();
        // without decrease triggers, rho_k = alpha^k rho0 exactly (as
        // computed by repeated multiplication)
        let mut expect = cfg.rho0;
        for r in &trace.records {
            assert_eq!(r.rho, expect, "trace: {:?}", trace.records);
            expect *= cfg.alpha;
        }
    }

    #[test]
    fn csv_schema() {
        let trace = ConvergenceTrace {
            records: vec![TraceRecord {
                iter: 0,
                rho: 0.1,
                primal_residual: 1.0,
                dual_gap: 2.0,
                cg_iters: 3,
                psnr_vs_truth: None,
            }],
            denoiser_calls: 1,
        };
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "iter,rho,primal_residual,dual_gap,cg_iters,psnr");
        assert_eq!(lines.clone().count(), 1);
        assert!(lines.next().unwrap().ends_with(",3,"));
    }
}
