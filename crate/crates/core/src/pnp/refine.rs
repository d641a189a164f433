use nalgebra::{Matrix6, Vector6};

use super::{reproj_residual, residual_jacobian, Correspondence2D3D, RobustKernel};
use crate::scene::{Camera, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub max_iters: usize,
    /// Stop once the accepted increment norm falls below this.
    pub tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub pose: Pose,
    pub cost: f64,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    /// Normal equations became too ill-conditioned to continue.
    pub ill_conditioned: bool,
}

const MAX_CONDITION: f64 = 1e14;

/// Robust cost over points in front of the camera; `None` when any listed
/// point leaves the front of the camera.
fn robust_cost(pose: &Pose, corr: &[Correspondence2D3D], active: &[usize], camera: &Camera, kernel: &RobustKernel) -> Option<f64> {
    let mut cost = 0.0;
    for &i in active {
        let r = reproj_residual(pose, &corr[i], camera)?;
        cost += corr[i].weight * kernel.rho(r.norm());
    }
    Some(cost)
}

/// Levenberg–Marquardt with iteratively reweighted least squares over left
/// se(3) increments. Points behind the initial camera are ignored.
pub fn refine_robust(
    initial: &Pose,
    correspondences: &[Correspondence2D3D],
    camera: &Camera,
    kernel: &RobustKernel,
    opts: &RefineOptions,
) -> RefineResult {
    let active: Vec<usize> = (0..correspondences.len())
        .filter(|i| correspondences[*i].weight > 0.0 && reproj_residual(initial, &correspondences[*i], camera).is_some())
        .collect();
    let mut pose = *initial;
    let mut cost = robust_cost(&pose, correspondences, &active, camera, kernel).unwrap_or(0.0);
    let mut trace = vec![cost];
    let mut lambda = 1e-4;
    let mut ill_conditioned = false;
    let mut iterations = 0;
    if active.len() < 3 {
        return RefineResult {
            pose,
            cost,
            iterations,
            cost_trace: trace,
            ill_conditioned: true,
        };
    }
    while iterations < opts.max_iters {
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for &i in &active {
            let c = &correspondences[i];
            let (Some(r), Some(j)) = (reproj_residual(&pose, c, camera), residual_jacobian(&pose, &c.world, camera)) else {
                continue;
            };
            let w = c.weight * kernel.weight(r.norm());
            h += j.transpose() * j * w;
            g += j.transpose() * r * w;
        }
        let eig = h.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo <= hi / MAX_CONDITION {
            ill_conditioned = true;
            break;
        }
        let mut accepted = false;
        let mut small_step = false;
        for _ in 0..12 {
            let mut damped = h;
            for d in 0..6 {
                damped[(d, d)] += lambda * h[(d, d)];
            }
            let Some(step) = damped.cholesky().map(|ch| -ch.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            if step.norm() < opts.tol {
                small_step = true;
                break;
            }
            let candidate = pose.retract(&step);
            match robust_cost(&candidate, correspondences, &active, camera, kernel) {
                Some(c) if c <= cost => {
                    pose = candidate;
                    cost = c;
                    trace.push(c);
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                    small_step = step.norm() < opts.tol;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if small_step || !accepted {
            break;
        }
    }
    RefineResult {
        pose,
        cost,
        iterations,
        cost_trace: trace,
        ill_conditioned,
    }
}
