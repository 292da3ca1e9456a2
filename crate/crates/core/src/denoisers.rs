//! Black-box denoisers D(x, sigma) pluggable into the ADMM loop, the RED
//! prior built from them, and numerical probes for the RED regularity
//! conditions (differentiability/symmetry of the Jacobian, local homogeneity,
//! spectral radius <= 1).
//!
//! `sigma` is in the same [0, 255] intensity units as the volumes. The video
//! NLM searches a spatio-temporal window and never computes motion vectors;
//! with temporal radius 0 it reduces sample-for-sample to per-frame NLM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operators::{apply_blur, mirror, BlurKernel};
use crate::volume::ImageVolume;

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    /// Gaussian convolution with kernel std = kappa * sigma. kappa = 0 is the
    /// identity denoiser.
    GaussianSmooth { kappa: f64 },
    /// Fixed-iteration gradient descent on the smoothed ROF objective
    /// 1/2 ||u - x||^2 + lambda TV(u), lambda = lambda_mult * sigma^2.
    Tv {
        step: f64,
        iters: usize,
        lambda_mult: f64,
    },
    /// Per-frame non-local means: patches of radius `patch_radius`, spatial
    /// search radius `search_radius`, bandwidth h = bandwidth_mult * sigma.
    NlmImage {
        patch_radius: usize,
        search_radius: usize,
        bandwidth_mult: f64,
    },
    /// Spatio-temporal non-local means over a
    /// (2w+1) x (2w+1) x (2w_t+1) search window.
    NlmVideo {
        patch_radius: usize,
        search_radius: usize,
        temporal_radius: usize,
        bandwidth_mult: f64,
    },
}

impl DenoiserSpec {
    /// Default NLM bandwidth multiplier for patch radius p: 0.4 * (2p + 1).
    pub fn default_nlm_bandwidth_mult(patch_radius: usize) -> f64 {
        0.4 * (2.0 * patch_radius as f64 + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match *self {
            DenoiserSpec::GaussianSmooth { kappa } => {
                if !(kappa >= 0.0) || !kappa.is_finite() {
                    return bad(format!("gaussian_smooth kappa must be >= 0, got {kappa}"));
                }
            }
            DenoiserSpec::Tv {
                step,
                iters,
                lambda_mult,
            } => {
                if !(step > 0.0) {
                    return bad(format!("tv step must be > 0, got {step}"));
                }
                if iters == 0 {
                    return bad("tv iters must be >= 1".into());
                }
                if !(lambda_mult > 0.0) {
                    return bad(format!("tv lambda_mult must be > 0, got {lambda_mult}"));
                }
            }
            DenoiserSpec::NlmImage {
                patch_radius,
                search_radius,
                bandwidth_mult,
            } => {
                if patch_radius == 0 || search_radius == 0 {
                    return bad("nlm radii must be >= 1".into());
                }
                if !(bandwidth_mult > 0.0) {
                    return bad(format!("nlm bandwidth_mult must be > 0, got {bandwidth_mult}"));
                }
            }
            DenoiserSpec::NlmVideo {
                patch_radius,
                search_radius,
                bandwidth_mult,
                ..
            } => {
                if patch_radius == 0 || search_radius == 0 {
                    return bad("nlm radii must be >= 1".into());
                }
                if !(bandwidth_mult > 0.0) {
                    return bad(format!("nlm bandwidth_mult must be > 0, got {bandwidth_mult}"));
                }
            }
        }
        Ok(())
    }
}

/// Applies the selected denoiser at noise level `sigma`. Pure and
/// deterministic; outputs do not depend on the degree of parallelism.
pub fn denoise(v: &ImageVolume, sigma: f64, spec: &DenoiserSpec) -> Result<ImageVolume> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "denoiser sigma must be > 0, got {sigma}"
        )));
    }
    spec.validate()?;
    match *spec {
        DenoiserSpec::GaussianSmooth { kappa } => gaussian_smooth(v, kappa * sigma),
        DenoiserSpec::Tv {
            step,
            iters,
            lambda_mult,
        } => tv_denoise(v, step, iters, lambda_mult * sigma * sigma),
        DenoiserSpec::NlmImage {
            patch_radius,
            search_radius,
            bandwidth_mult,
        } => nlm(v, patch_radius, search_radius, 0, bandwidth_mult * sigma),
        DenoiserSpec::NlmVideo {
            patch_radius,
            search_radius,
            temporal_radius,
            bandwidth_mult,
        } => nlm(
            v,
            patch_radius,
            search_radius,
            temporal_radius,
            bandwidth_mult * sigma,
        ),
    }
}

fn gaussian_smooth(v: &ImageVolume, std: f64) -> Result<ImageVolume> {
    // cap the support so the kernel always fits the frame
    let max_radius = (v.height().min(v.width()) - 1) / 2;
    let radius = ((3.0 * std).ceil() as usize).min(max_radius);
    if radius == 0 {
        return Ok(v.clone());
    }
    apply_blur(v, &BlurKernel::gaussian(std, 2 * radius + 1)?)
}

/// Explicit gradient descent on 1/2||u - x||^2 + lambda * sum sqrt(|grad u|^2 + eps^2),
/// forward differences with Neumann boundary. Fixed iteration count keeps the
/// runtime bounded inside the ADMM loop and the output deterministic.
fn tv_denoise(x: &ImageVolume, step: f64, iters: usize, lambda: f64) -> Result<ImageVolume> {
    const EPS2: f64 = 1e-6;
    let (h, w, t) = x.shape();
    let mut u = x.clone();
    for _ in 0..iters {
        // p = grad u / |grad u|_eps, per frame, forward differences
        let mut px = vec![0.0; h * w * t];
        let mut py = vec![0.0; h * w * t];
        for frame in 0..t {
            for j in 0..w {
                for i in 0..h {
                    let c = u.get(i, j, frame);
                    let gx = if i + 1 < h { u.get(i + 1, j, frame) - c } else { 0.0 };
                    let gy = if j + 1 < w { u.get(i, j + 1, frame) - c } else { 0.0 };
                    let mag = (gx * gx + gy * gy + EPS2).sqrt();
                    let idx = frame * h * w + j * h + i;
                    px[idx] = gx / mag;
                    py[idx] = gy / mag;
                }
            }
        }
        // u <- u - step * ((u - x) - lambda * div p)
        let mut next = u.clone();
        for frame in 0..t {
            for j in 0..w {
                for i in 0..h {
                    let idx = frame * h * w + j * h + i;
                    let div = px[idx] - if i > 0 { px[idx - 1] } else { 0.0 } + py[idx]
                        - if j > 0 { py[idx - h] } else { 0.0 };
                    let g = (u.get(i, j, frame) - x.get(i, j, frame)) - lambda * div;
                    next.data_mut()[idx] -= step * g;
                }
            }
        }
        u = next;
    }
    Ok(u)
}

/// Non-local means over a spatio-temporal search window. Patch distances use
/// uniform patch weighting; the self-weight is set to the maximum neighbor
/// weight. Mirror extension at all spatial and temporal borders.
fn nlm(
    v: &ImageVolume,
    patch_radius: usize,
    search_radius: usize,
    temporal_radius: usize,
    bandwidth: f64,
) -> Result<ImageVolume> {
    let (h, w, t) = v.shape();
    let p = patch_radius as isize;
    let sw = search_radius as isize;
    let st = temporal_radius as isize;
    let inv_h2 = 1.0 / (bandwidth * bandwidth);
    let patch_n = ((2 * p + 1) * (2 * p + 1)) as f64;
    let mut out = ImageVolume::zeros(h, w, t);
    let plane = h * w;

    let patch_dist2 = |i: isize, j: isize, ti: usize, ni: isize, nj: isize, nt: usize| -> f64 {
        let mut acc = 0.0;
        for a in -p..=p {
            for b in -p..=p {
                let s0 = v.get(mirror(i + a, h), mirror(j + b, w), ti);
                let s1 = v.get(mirror(ni + a, h), mirror(nj + b, w), nt);
                let d = s0 - s1;
                acc += d * d;
            }
        }
        acc / patch_n
    };

    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(frame, chunk)| {
            for j in 0..w as isize {
                for i in 0..h as isize {
                    let mut wsum = 0.0;
                    let mut acc = 0.0;
                    let mut wmax = 0.0;
                    for dt in -st..=st {
                        let nt = mirror(frame as isize + dt, t);
                        for dj in -sw..=sw {
                            for di in -sw..=sw {
                                if dt == 0 && di == 0 && dj == 0 {
                                    continue;
                                }
                                let (ni, nj) = (i + di, j + dj);
                                let d2 = patch_dist2(i, j, frame, ni, nj, nt);
                                let wt = (-d2 * inv_h2).exp();
                                if wt > wmax {
                                    wmax = wt;
                                }
                                wsum += wt;
                                acc += wt * v.get(mirror(ni, h), mirror(nj, w), nt);
                            }
                        }
                    }
                    // self weight: maximum neighbor weight (1 if no neighbors)
                    let self_w = if wmax > 0.0 { wmax } else { 1.0 };
                    wsum += self_w;
                    acc += self_w * v.get(i as usize, j as usize, frame);
                    chunk[(j as usize) * h + i as usize] = acc / wsum;
                }
            }
        });
    Ok(out)
}

/// RED prior value R(v) = 1/2 <v, v - f(v)>.
pub fn red_prior_value(v: &ImageVolume, sigma: f64, spec: &DenoiserSpec) -> Result<f64> {
    let fv = denoise(v, sigma, spec)?;
    Ok(0.5 * v.dot(&v.sub(&fv)?)?)
}

/// RED gradient under the regularity conditions: grad R(v) = v - f(v).
pub fn red_gradient(v: &ImageVolume, sigma: f64, spec: &DenoiserSpec) -> Result<ImageVolume> {
    let fv = denoise(v, sigma, spec)?;
    v.sub(&fv)
}

/// Worst-case numerical defects of the RED regularity conditions across a set
/// of fixtures. Pure diagnostic; never gates the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct RedConditionReport {
    /// ||f(cx) - c f(x)|| / ||x|| at c = 1 + 1e-3.
    pub homogeneity_defect: f64,
    /// Relative defect of <J a, b> vs <a, J b> via directional finite
    /// differences of the denoiser.
    pub jacobian_asymmetry: f64,
    /// Power-iteration estimate of the spectral radius of the
    /// finite-difference Jacobian.
    pub spectral_radius_estimate: f64,
}

fn unit_direction(shape: (usize, usize, usize), seed: u64) -> ImageVolume {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let (h, w, t) = shape;
    let raw: Vec<f64> = (0..h * w * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = raw.iter().map(|s| s * s).sum::<f64>().sqrt();
    ImageVolume::new(h, w, t, raw.into_iter().map(|s| s / norm).collect()).unwrap()
}

/// Directional finite-difference Jacobian-vector product of f at x along the
/// unit direction d.
fn jacobian_vec(
    x: &ImageVolume,
    d: &ImageVolume,
    sigma: f64,
    spec: &DenoiserSpec,
    eps: f64,
) -> Result<ImageVolume> {
    let plus = denoise(&crate::volume::elementwise_axpy(eps, d, x)?, sigma, spec)?;
    let minus = denoise(&crate::volume::elementwise_axpy(-eps, d, x)?, sigma, spec)?;
    plus.sub(&minus)?.scale(1.0 / (2.0 * eps))
}

pub fn probe_red_conditions(
    spec: &DenoiserSpec,
    sigma: f64,
    fixtures: &[ImageVolume],
) -> Result<RedConditionReport> {
    if fixtures.is_empty() {
        return Err(Error::InvalidParameter(
            "probe_red_conditions needs at least one fixture".into(),
        ));
    }
    let mut report = RedConditionReport {
        homogeneity_defect: 0.0,
        jacobian_asymmetry: 0.0,
        spectral_radius_estimate: 0.0,
    };
    for (fi, x) in fixtures.iter().enumerate() {
        let xnorm = x.norm().max(1e-30);
        let eps = 1e-3 * xnorm;

        // local homogeneity at c = 1 + 1e-3
        let c = 1.0 + 1e-3;
        let fx = denoise(x, sigma, spec)?;
        let fcx = denoise(&x.scale(c)?, sigma, spec)?;
        let defect = fcx.sub(&fx.scale(c)?)?.norm() / xnorm;
        report.homogeneity_defect = report.homogeneity_defect.max(defect);

        // Jacobian symmetry along random direction pairs
        let a = unit_direction(x.shape(), 17 + fi as u64);
        let b = unit_direction(x.shape(), 9001 + fi as u64);
        let ja = jacobian_vec(x, &a, sigma, spec, eps)?;
        let jb = jacobian_vec(x, &b, sigma, spec, eps)?;
        let lhs = ja.dot(&b)?;
        let rhs = a.dot(&jb)?;
        let denom = (ja.norm() + jb.norm()).max(1e-30);
        report.jacobian_asymmetry = report.jacobian_asymmetry.max((lhs - rhs).abs() / denom);

        // power iteration on the finite-difference Jacobian
        let mut q = unit_direction(x.shape(), 4242 + fi as u64);
        let mut radius = 0.0;
        for _ in 0..20 {
            let jq = jacobian_vec(x, &q, sigma, spec, eps)?;
            radius = jq.norm();
            if radius < 1e-30 {
                break;
            }
            q = jq.scale(1.0 / radius)?;
        }
        report.spectral_radius_estimate = report.spectral_radius_estimate.max(radius);
    }
    if !(report.homogeneity_defect.is_finite()
        && report.jacobian_asymmetry.is_finite()
        && report.spectral_radius_estimate.is_finite())
    {
        return Err(Error::InvalidParameter(
            "red condition probe produced non-finite values".into(),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::add_noise;

    fn texture(h: usize, w: usize, t: usize) -> ImageVolume {
        ImageVolume::from_fn(h, w, t, |i, j, fr| {
            let x = i as f64;
            let y = j as f64;
            127.0
                + 60.0 * ((0.7 * x + 0.3 * y + fr as f64).sin())
                + 40.0 * ((0.23 * x * y / (w as f64)).cos())
        })
        .unwrap()
    }

    fn all_specs() -> Vec<DenoiserSpec> {
        vec![
            DenoiserSpec::GaussianSmooth { kappa: 0.2 },
            DenoiserSpec::Tv {
                step: 0.2,
                iters: 10,
                lambda_mult: 0.05,
            },
            DenoiserSpec::NlmImage {
                patch_radius: 1,
                search_radius: 2,
                bandwidth_mult: 1.2,
            },
            DenoiserSpec::NlmVideo {
                patch_radius: 1,
                search_radius: 2,
                temporal_radius: 1,
                bandwidth_mult: 1.2,
            },
        ]
    }

    #[test]
    fn constancy_preserved_by_every_denoiser() {
        let c = ImageVolume::constant(8, 8, 2, 77.0).unwrap();
        for spec in all_specs() {
            let out = denoise(&c, 5.0, &spec).unwrap();
            for &s in out.data() {
                assert!((s - 77.0).abs() < 1e-12, "{spec:?}");
            }
        }
    }

    #[test]
    fn denoise_rejects_nonpositive_sigma() {
        let v = ImageVolume::zeros(4, 4, 1);
        for spec in all_specs() {
            assert!(denoise(&v, 0.0, &spec).is_err());
            assert!(denoise(&v, -1.0, &spec).is_err());
        }
    }

    #[test]
    fn determinism() {
        let v = add_noise(&texture(12, 12, 2), 10.0, 3).unwrap();
        for spec in all_specs() {
            let a = denoise(&v, 8.0, &spec).unwrap();
            let b = denoise(&v, 8.0, &spec).unwrap();
            assert_eq!(a, b, "{spec:?}");
        }
    }

    #[test]
    fn nlm_video_identical_frames_stay_identical() {
        let base = texture(10, 10, 1);
        let v = ImageVolume::from_fn(10, 10, 3, |i, j, _| base.get(i, j, 0)).unwrap();
        let spec = DenoiserSpec::NlmVideo {
            patch_radius: 1,
            search_radius: 2,
            temporal_radius: 1,
            bandwidth_mult: 1.2,
        };
        let out = denoise(&v, 5.0, &spec).unwrap();
        for j in 0..10 {
            for i in 0..10 {
                let s0 = out.get(i, j, 0);
                assert_eq!(s0, out.get(i, j, 1));
                assert_eq!(s0, out.get(i, j, 2));
            }
        }
    }

    #[test]
    fn nlm_video_temporal_radius_zero_equals_per_frame_nlm() {
        let v = add_noise(&texture(10, 10, 3), 5.0, 7).unwrap();
        let video = denoise(
            &v,
            6.0,
            &DenoiserSpec::NlmVideo {
                patch_radius: 1,
                search_radius: 2,
                temporal_radius: 0,
                bandwidth_mult: 1.2,
            },
        )
        .unwrap();
        let image = denoise(
            &v,
            6.0,
            &DenoiserSpec::NlmImage {
                patch_radius: 1,
                search_radius: 2,
                bandwidth_mult: 1.2,
            },
        )
        .unwrap();
        assert_eq!(video, image);
    }

    #[test]
    fn gaussian_smooth_reduces_mse_on_noisy_fixture() {
        // smooth clean content, so mild blurring removes more noise than signal
        let clean = ImageVolume::from_fn(64, 64, 1, |i, j, _| {
            127.0 + 60.0 * (0.15 * i as f64).sin() + 40.0 * (0.11 * j as f64).cos()
        })
        .unwrap();
        let noisy = add_noise(&clean, 10.0, 11).unwrap();
        let out = denoise(&noisy, 10.0, &DenoiserSpec::GaussianSmooth { kappa: 0.12 }).unwrap();
        let mse = |a: &ImageVolume, b: &ImageVolume| {
            a.sub(b).unwrap().data().iter().map(|s| s * s).sum::<f64>() / a.len() as f64
        };
        assert!(mse(&out, &clean) < mse(&noisy, &clean));
    }

    #[test]
    fn gaussian_smooth_total_variation_monotone() {
        let tv = |v: &ImageVolume| -> f64 {
            let (h, w, t) = v.shape();
            let mut acc = 0.0;
            for fr in 0..t {
                for j in 0..w {
                    for i in 0..h {
                        let c = v.get(i, j, fr);
                        let gx = if i + 1 < h { v.get(i + 1, j, fr) - c } else { 0.0 };
                        let gy = if j + 1 < w { v.get(i, j + 1, fr) - c } else { 0.0 };
                        acc += (gx * gx + gy * gy).sqrt();
                    }
                }
            }
            acc
        };
        let fixtures = [
            add_noise(&texture(16, 16, 1), 10.0, 1).unwrap(),
            add_noise(&texture(24, 16, 2), 20.0, 2).unwrap(),
        ];
        for v in &fixtures {
            let out = denoise(v, 8.0, &DenoiserSpec::GaussianSmooth { kappa: 0.2 }).unwrap();
            assert!(tv(&out) <= tv(v));
        }
    }

    #[test]
    fn red_prior_value_and_gradient_trivial_cases() {
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.3 };
        let c = ImageVolume::constant(8, 8, 1, 50.0).unwrap();
        assert!(red_prior_value(&c, 4.0, &spec).unwrap().abs() < 1e-9);
        let z = ImageVolume::zeros(8, 8, 1);
        assert_eq!(red_prior_value(&z, 4.0, &spec).unwrap(), 0.0);
        let g = red_gradient(&c, 4.0, &spec).unwrap();
        assert!(g.norm() < 1e-9);
    }

    #[test]
    fn red_prior_value_matches_independent_inner_product() {
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.3 };
        let v = add_noise(&texture(8, 8, 1), 12.0, 21).unwrap();
        let got = red_prior_value(&v, 4.0, &spec).unwrap();
        // independent recomputation of 1/2 sum v_i (v_i - f(v)_i)
        let fv = denoise(&v, 4.0, &spec).unwrap();
        let mut acc = 0.0;
        for (a, b) in v.data().iter().zip(fv.data()) {
            acc += a * (a - b);
        }
        assert!((got - 0.5 * acc).abs() <= 1e-12 * got.abs().max(1.0));
    }

    #[test]
    fn red_gradient_matches_finite_difference_for_linear_denoiser() {
        // gaussian_smooth is linear with a symmetric Jacobian, so
        // grad R = v - f(v) must match the directional finite difference of R.
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.3 };
        let v = add_noise(&texture(8, 8, 1), 12.0, 33).unwrap();
        let g = red_gradient(&v, 4.0, &spec).unwrap();
        let d = unit_direction(v.shape(), 5);
        let eps = 1e-4 * v.norm();
        let rp = red_prior_value(&crate::volume::elementwise_axpy(eps, &d, &v).unwrap(), 4.0, &spec)
            .unwrap();
        let rm = red_prior_value(&crate::volume::elementwise_axpy(-eps, &d, &v).unwrap(), 4.0, &spec)
            .unwrap();
        let fd = (rp - rm) / (2.0 * eps);
        let analytic = g.dot(&d).unwrap();
        assert!(
            (fd - analytic).abs() <= 1e-3 * analytic.abs().max(1e-12),
            "fd {fd} vs analytic {analytic}"
        );
    }

    #[test]
    fn red_gradient_exact_for_4x4_linear_case() {
        // for f(x) = Ax with A symmetric, grad of 1/2 x^T (I - A) x is (I-A)x
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.25 };
        let v = ImageVolume::from_fn(4, 4, 1, |i, j, _| ((i * 4 + j) as f64) * 3.0 + 1.0).unwrap();
        let g = red_gradient(&v, 4.0, &spec).unwrap();
        let fv = denoise(&v, 4.0, &spec).unwrap();
        assert_eq!(g, v.sub(&fv).unwrap());
    }

    #[test]
    fn probe_linear_filter_is_clean() {
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.3 };
        let fixtures = vec![texture(12, 12, 1), add_noise(&texture(12, 12, 1), 8.0, 2).unwrap()];
        let report = probe_red_conditions(&spec, 4.0, &fixtures).unwrap();
        assert!(report.homogeneity_defect < 1e-10, "{report:?}");
        assert!(report.jacobian_asymmetry < 1e-8, "{report:?}");
        assert!(report.spectral_radius_estimate <= 1.0 + 1e-6, "{report:?}");
    }

    #[test]
    fn probe_identity_denoiser_radius_one() {
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.0 };
        let fixtures = vec![texture(10, 10, 1)];
        let report = probe_red_conditions(&spec, 4.0, &fixtures).unwrap();
        assert!((report.spectral_radius_estimate - 1.0).abs() < 1e-6, "{report:?}");
    }

    #[test]
    fn probe_nlm_reports_finite_baseline() {
        let spec = DenoiserSpec::NlmImage {
            patch_radius: 1,
            search_radius: 2,
            bandwidth_mult: 1.2,
        };
        let fixtures = vec![add_noise(&texture(12, 12, 1), 6.0, 4).unwrap()];
        let report = probe_red_conditions(&spec, 6.0, &fixtures).unwrap();
        assert!(report.homogeneity_defect.is_finite());
        assert!(report.jacobian_asymmetry.is_finite());
        assert!(report.spectral_radius_estimate.is_finite());
    }

    #[test]
    fn probe_rejects_empty_fixture_list() {
        let spec = DenoiserSpec::GaussianSmooth { kappa: 0.3 };
        assert!(probe_red_conditions(&spec, 4.0, &[]).is_err());
    }
}
