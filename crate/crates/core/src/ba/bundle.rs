//! Levenberg-Marquardt bundle adjustment over extracted tracks.
//!
//! Minimizes the visibility-weighted robust reprojection error
//! `sum_i sum_j v_i^j rho(|proj_i(x_j) - y_i^j|)` over camera poses
//! (axis-angle increments, left-multiplied), optionally a shared or per-view
//! focal length, and track points. The point blocks are eliminated by a
//! Schur complement, leaving a dense reduced camera system (view counts are
//! small). The gauge is fixed by freezing the view-0 pose and renormalizing
//! the scene scale about the view-0 center so the view-0 to view-1 baseline
//! keeps its initial length; that rescaling leaves every reprojection exactly
//! unchanged.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{CameraRig, MatchSet};
use crate::error::{GbrError, Result};
use crate::geometry::{umeyama_weighted, CameraPose, SimilarityTransform, MIN_CAMERA_Z};

/// Cost added per observation whose point falls behind the camera, keeping
/// the objective finite while strongly repelling such steps.
const BEHIND_PENALTY: f64 = 1e6;

/// Initial robust RMSE below which the input is already optimal and the
/// solver returns without iterating.
const DONE_RMSE_PX: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BAMode {
    /// Optimize poses (and optionally focal) together with points.
    Full,
    /// Hold all cameras fixed; refine points only.
    PointsOnly,
}

/// Focal-length treatment during optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FocalMode {
    /// Keep intrinsics as given (fx and fy may differ).
    #[default]
    Fixed,
    /// One focal length shared by all views (sets fx = fy).
    Shared,
    /// An independent focal length per view (sets fx = fy).
    PerView,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BAConfig {
    /// Huber threshold in pixels; `None` disables the robust kernel.
    pub huber_delta: Option<f64>,
    pub max_iterations: usize,
    /// Relative cost decrease below which the solve is converged.
    pub rel_tolerance: f64,
    pub initial_lambda: f64,
    /// Consecutive rejected damped steps before giving up on the best iterate.
    pub max_fail_streak: usize,
    pub focal: FocalMode,
}

impl Default for BAConfig {
    fn default() -> Self {
        BAConfig {
            huber_delta: Some(2.0),
            max_iterations: 100,
            rel_tolerance: 1e-10,
            initial_lambda: 1e-3,
            max_fail_streak: 10,
            focal: FocalMode::Fixed,
        }
    }
}

/// Outcome summary. RMSE values are square roots of the mean robustified
/// squared residual in pixels (equal to the plain reprojection RMSE whenever
/// the Huber kernel is disabled or inactive), so `final_rmse_px <=
/// initial_rmse_px` holds for every accepted step sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BAReport {
    pub initial_rmse_px: f64,
    pub final_rmse_px: f64,
    /// Number of accepted LM steps.
    pub iterations: usize,
    pub converged: bool,
    /// Set when the fail streak ended the solve; the best iterate is returned.
    pub stalled: bool,
    pub n_tracks: usize,
    pub n_observations: usize,
    /// Rotation change per view between input and output, degrees.
    pub pose_rotation_deg: Vec<f64>,
    /// Camera-center displacement per view between input and output.
    pub pose_center_delta: Vec<f64>,
    /// Accepted costs, starting at the initial cost; non-increasing.
    pub cost_trace: Vec<f64>,
}

/// Per-track Schur blocks for one linearization.
struct TrackBlocks {
    v: Matrix3<f64>,
    gp: Vector3<f64>,
    /// Camera-point couplings keyed by camera-parameter column start.
    w: Vec<(usize, DMatrix<f64>)>,
}

struct Problem<'a> {
    matches: &'a MatchSet,
    rig_cx: Vec<f64>,
    rig_cy: Vec<f64>,
    rig_fx: Vec<f64>,
    rig_fy: Vec<f64>,
    /// Column start of each view's 6 pose parameters, if optimized.
    pose_col: Vec<Option<usize>>,
    /// Column of each view's focal parameter, if optimized.
    focal_col: Vec<Option<usize>>,
    n_cam_params: usize,
    huber: Option<f64>,
}

#[derive(Clone)]
struct State {
    poses: Vec<CameraPose>,
    /// Current focal per view (used only when the view's focal is optimized).
    focals: Vec<f64>,
    points: Vec<Vector3<f64>>,
}

impl Problem<'_> {
    fn focal_axes(&self, view: usize, focals: &[f64]) -> (f64, f64) {
        if self.focal_col[view].is_some() {
            (focals[view], focals[view])
        } else {
            (self.rig_fx[view], self.rig_fy[view])
        }
    }

    /// Robustified squared residual for a residual of norm `e`.
    fn rho(&self, e: f64) -> f64 {
        match self.huber {
            Some(d) if e > d => 2.0 * d * e - d * d,
            _ => e * e,
        }
    }

    /// IRLS weight `rho'(e) / (2e)`.
    fn weight(&self, e: f64) -> f64 {
        match self.huber {
            Some(d) if e > d => d / e,
            _ => 1.0,
        }
    }

    /// Total cost plus the robust mean-square residual over visible
    /// observations; behind-camera observations incur a fixed penalty.
    fn evaluate(&self, state: &State) -> (f64, f64) {
        let mut cost = 0.0;
        let mut robust_sq = 0.0;
        let mut n = 0usize;
        for (track, point) in self.matches.tracks.iter().zip(&state.points) {
            for obs in &track.observations {
                if !obs.visibility {
                    continue;
                }
                let pose = &state.poses[obs.view];
                let p = pose.to_camera(point);
                if p.z <= MIN_CAMERA_Z {
                    cost += BEHIND_PENALTY;
                    continue;
                }
                let (fx, fy) = self.focal_axes(obs.view, &state.focals);
                let pred = Vector2::new(
                    fx * p.x / p.z + self.rig_cx[obs.view],
                    fy * p.y / p.z + self.rig_cy[obs.view],
                );
                let e = (pred - obs.pixel).norm();
                let r = self.rho(e);
                cost += r;
                robust_sq += r;
                n += 1;
            }
        }
        let rmse = if n == 0 {
            0.0
        } else {
            (robust_sq / n as f64).sqrt()
        };
        (cost, rmse)
    }

    /// Build the damped-normal-equation ingredients at `state`.
    fn linearize(&self, state: &State) -> (DMatrix<f64>, DVector<f64>, Vec<TrackBlocks>) {
        let c = self.n_cam_params;
        let mut u = DMatrix::zeros(c, c);
        let mut gc = DVector::zeros(c);
        let mut blocks = Vec::with_capacity(self.matches.tracks.len());

        for (track, point) in self.matches.tracks.iter().zip(&state.points) {
            let mut tb = TrackBlocks {
                v: Matrix3::zeros(),
                gp: Vector3::zeros(),
                w: Vec::new(),
            };
            for obs in &track.observations {
                if !obs.visibility {
                    continue;
                }
                let pose = &state.poses[obs.view];
                let p = pose.to_camera(point);
                if p.z <= MIN_CAMERA_Z {
                    continue;
                }
                let (fx, fy) = self.focal_axes(obs.view, &state.focals);
                let inv_z = 1.0 / p.z;
                let pred = Vector2::new(
                    fx * p.x * inv_z + self.rig_cx[obs.view],
                    fy * p.y * inv_z + self.rig_cy[obs.view],
                );
                let r = pred - obs.pixel;
                let w = self.weight(r.norm());

                // d(pixel)/d(camera point)
                let a = SMatrix::<f64, 2, 3>::new(
                    fx * inv_z,
                    0.0,
                    -fx * p.x * inv_z * inv_z,
                    0.0,
                    fy * inv_z,
                    -fy * p.y * inv_z * inv_z,
                );
                let j_point = a * pose.rotation.matrix();
                tb.v += w * j_point.transpose() * j_point;
                tb.gp += w * j_point.transpose() * r;

                let j_pose = self.pose_col[obs.view].map(|col| {
                    // Left-multiplicative increment: d(Rx)/d(omega) = -[Rx]x.
                    let q = p - pose.translation;
                    let mut j = SMatrix::<f64, 2, 6>::zeros();
                    j.fixed_view_mut::<2, 3>(0, 0)
                        .copy_from(&(a * (-skew(&q))));
                    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&a);
                    (col, j)
                });
                let j_focal = self.focal_col[obs.view]
                    .map(|col| (col, Vector2::new(p.x * inv_z, p.y * inv_z)));

                if let Some((col, j)) = &j_pose {
                    let jt = j.transpose();
                    add_block(&mut u, *col, *col, &(w * jt * *j));
                    for k in 0..6 {
                        gc[col + k] += w * (jt * r)[k];
                    }
                    add_w(&mut tb.w, *col, dmat(&(w * jt * j_point)));
                }
                if let Some((col, jf)) = &j_focal {
                    u[(*col, *col)] += w * jf.dot(jf);
                    gc[*col] += w * jf.dot(&r);
                    add_w(&mut tb.w, *col, dmat(&(w * jf.transpose() * j_point)));
                    if let Some((pcol, j)) = &j_pose {
                        let cross = w * j.transpose() * *jf; // 6x1
                        for k in 0..6 {
                            u[(pcol + k, *col)] += cross[k];
                            u[(*col, pcol + k)] += cross[k];
                        }
                    }
                }
            }
            blocks.push(tb);
        }
        (u, gc, blocks)
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation angle via the clamped trace; `Rotation3::angle` yields NaN when
/// rounding pushes the trace of a near-identity rotation above 3.
fn rotation_angle(r: &Rotation3<f64>) -> f64 {
    (((r.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

fn add_block<const R: usize, const C: usize>(
    m: &mut DMatrix<f64>,
    row: usize,
    col: usize,
    b: &SMatrix<f64, R, C>,
) {
    for i in 0..R {
        for j in 0..C {
            m[(row + i, col + j)] += b[(i, j)];
        }
    }
}

fn dmat<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_fn(R, C, |i, j| m[(i, j)])
}

fn add_w(w: &mut Vec<(usize, DMatrix<f64>)>, col: usize, block: DMatrix<f64>) {
    if let Some((_, existing)) = w
        .iter_mut()
        .find(|(c, b)| *c == col && b.nrows() == block.nrows())
    {
        *existing += block;
    } else {
        w.push((col, block));
    }
}

/// Solve the damped system for one lambda; `None` signals an indefinite
/// reduced system (treated as a failed step).
fn solve_step(
    u: &DMatrix<f64>,
    gc: &DVector<f64>,
    blocks: &[TrackBlocks],
    lambda: f64,
) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
    let c = u.nrows();
    let mut vd_inv = Vec::with_capacity(blocks.len());
    for tb in blocks {
        let mut vd = tb.v;
        for k in 0..3 {
            vd[(k, k)] += lambda * tb.v[(k, k)] + 1e-300;
        }
        vd_inv.push(vd.try_inverse()?);
    }

    let delta_c = if c > 0 {
        let mut s = u.clone();
        for k in 0..c {
            s[(k, k)] += lambda * u[(k, k)] + 1e-300;
        }
        let mut rhs = -gc.clone();
        for (tb, vi) in blocks.iter().zip(&vd_inv) {
            for (ca, wa) in &tb.w {
                let y = wa * vi; // ncols_a x 3
                let contrib = &y * tb.gp;
                for i in 0..wa.nrows() {
                    rhs[ca + i] += contrib[i];
                }
                for (cb, wb) in &tb.w {
                    let block = &y * wb.transpose();
                    for i in 0..block.nrows() {
                        for j in 0..block.ncols() {
                            s[(ca + i, cb + j)] -= block[(i, j)];
                        }
                    }
                }
            }
        }
        s.cholesky()?.solve(&rhs)
    } else {
        DVector::zeros(0)
    };

    let mut delta_p = Vec::with_capacity(blocks.len());
    for (tb, vi) in blocks.iter().zip(&vd_inv) {
        let mut rhs = -tb.gp;
        for (ca, wa) in &tb.w {
            let seg = delta_c.rows(*ca, wa.nrows());
            let coupled = wa.transpose() * seg;
            rhs -= Vector3::new(coupled[0], coupled[1], coupled[2]);
        }
        delta_p.push(vi * rhs);
    }
    Some((delta_c, delta_p))
}

fn apply_step(
    problem: &Problem,
    state: &State,
    delta_c: &DVector<f64>,
    delta_p: &[Vector3<f64>],
) -> Option<State> {
    let mut next = state.clone();
    for (view, col) in problem.pose_col.iter().enumerate() {
        if let Some(col) = col {
            let omega = Vector3::new(delta_c[*col], delta_c[col + 1], delta_c[col + 2]);
            let dt = Vector3::new(delta_c[col + 3], delta_c[col + 4], delta_c[col + 5]);
            let pose = &state.poses[view];
            next.poses[view] = CameraPose::from_rotation(
                Rotation3::from_scaled_axis(omega) * pose.rotation,
                pose.translation + dt,
            );
        }
    }
    for (view, col) in problem.focal_col.iter().enumerate() {
        if let Some(col) = col {
            let f = state.focals[view] + delta_c[*col];
            if !(f > 0.0) {
                return None;
            }
            next.focals[view] = f;
        }
    }
    for (p, d) in next.points.iter_mut().zip(delta_p) {
        *p += d;
    }
    Some(next)
}

/// Rescale the scene about the view-0 camera center so the view-0 to view-1
/// baseline recovers `baseline`. Pure gauge motion: reprojections unchanged.
fn renormalize_baseline(state: &mut State, baseline: f64) {
    if state.poses.len() < 2 || !(baseline > 0.0) {
        return;
    }
    let c0 = state.poses[0].center();
    let d = (state.poses[1].center() - c0).norm();
    if !(d > 0.0) {
        return;
    }
    let s = baseline / d;
    if (s - 1.0).abs() < 1e-15 {
        return;
    }
    for pose in state.poses.iter_mut().skip(1) {
        let c = c0 + s * (pose.center() - c0);
        *pose = CameraPose::from_rotation(pose.rotation, -(pose.rotation * c));
    }
    for p in state.points.iter_mut() {
        *p = c0 + s * (*p - c0);
    }
}

/// Bundle-adjust `rig` and `cloud` against the observations in `matches`.
///
/// `cloud` supplies the initial 3D point per track (same order and length as
/// `matches.tracks`). Returns the refined rig, refined cloud, and a report.
pub fn bundle_adjust(
    matches: &MatchSet,
    rig: &CameraRig,
    cloud: &[Vector3<f64>],
    mode: BAMode,
    config: &BAConfig,
) -> Result<(CameraRig, Vec<Vector3<f64>>, BAReport)> {
    if matches.tracks.len() < 6 {
        return Err(GbrError::Invalid(format!(
            "bundle adjustment needs at least 6 tracks, got {}",
            matches.tracks.len()
        )));
    }
    if cloud.len() != matches.tracks.len() {
        return Err(GbrError::Dimension(format!(
            "{} cloud points for {} tracks",
            cloud.len(),
            matches.tracks.len()
        )));
    }
    let mut obs_per_view = vec![0usize; rig.len()];
    let mut n_observations = 0usize;
    for track in &matches.tracks {
        for obs in &track.observations {
            if obs.view >= rig.len() {
                return Err(GbrError::Invalid(format!(
                    "observation references view {} but the rig has {} views",
                    obs.view,
                    rig.len()
                )));
            }
            if obs.visibility {
                obs_per_view[obs.view] += 1;
                n_observations += 1;
            }
        }
    }
    if obs_per_view.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(GbrError::Invalid(
            "tracks must span at least 2 views".into(),
        ));
    }

    // Parameter layout: observed non-anchor poses, then focal parameters.
    let mut pose_col = vec![None; rig.len()];
    let mut focal_col = vec![None; rig.len()];
    let mut n_cam_params = 0usize;
    if mode == BAMode::Full {
        for v in 1..rig.len() {
            if obs_per_view[v] > 0 {
                pose_col[v] = Some(n_cam_params);
                n_cam_params += 6;
            }
        }
        match config.focal {
            FocalMode::Fixed => {}
            FocalMode::Shared => {
                for v in 0..rig.len() {
                    if obs_per_view[v] > 0 {
                        focal_col[v] = Some(n_cam_params);
                    }
                }
                n_cam_params += 1;
            }
            FocalMode::PerView => {
                for v in 0..rig.len() {
                    if obs_per_view[v] > 0 {
                        focal_col[v] = Some(n_cam_params);
                        n_cam_params += 1;
                    }
                }
            }
        }
    }

    let problem = Problem {
        matches,
        rig_cx: rig.intrinsics.iter().map(|k| k.cx).collect(),
        rig_cy: rig.intrinsics.iter().map(|k| k.cy).collect(),
        rig_fx: rig.intrinsics.iter().map(|k| k.fx).collect(),
        rig_fy: rig.intrinsics.iter().map(|k| k.fy).collect(),
        pose_col,
        focal_col,
        n_cam_params,
        huber: config.huber_delta,
    };
    let mut state = State {
        poses: rig.poses.clone(),
        focals: rig
            .intrinsics
            .iter()
            .map(|k| 0.5 * (k.fx + k.fy))
            .collect(),
        points: cloud.to_vec(),
    };
    // Shared focal starts from the mean of the per-view initial values.
    if config.focal == FocalMode::Shared && mode == BAMode::Full {
        let shared = state.focals.iter().sum::<f64>() / state.focals.len() as f64;
        state.focals.iter_mut().for_each(|f| *f = shared);
    }

    let baseline = if rig.len() >= 2 {
        (rig.poses[1].center() - rig.poses[0].center()).norm()
    } else {
        0.0
    };

    let (mut cost, initial_rmse) = problem.evaluate(&state);
    let mut trace = vec![cost];
    let mut converged = false;
    let mut stalled = false;
    let mut accepted = 0usize;

    if initial_rmse < DONE_RMSE_PX {
        converged = true;
    } else {
        let mut lambda = config.initial_lambda;
        let mut fail_streak = 0usize;
        'outer: while accepted < config.max_iterations {
            let (u, gc, blocks) = problem.linearize(&state);
            loop {
                let step = solve_step(&u, &gc, &blocks, lambda)
                    .and_then(|(dc, dp)| apply_step(&problem, &state, &dc, &dp));
                let candidate = step.map(|mut s| {
                    if mode == BAMode::Full {
                        renormalize_baseline(&mut s, baseline);
                    }
                    let (c, _) = problem.evaluate(&s);
                    (s, c)
                });
                match candidate {
                    Some((s, new_cost)) if new_cost < cost => {
                        let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                        state = s;
                        cost = new_cost;
                        trace.push(cost);
                        accepted += 1;
                        lambda = (lambda / 10.0).max(1e-12);
                        fail_streak = 0;
                        if rel < config.rel_tolerance {
                            converged = true;
                            break 'outer;
                        }
                        break;
                    }
                    _ => {
                        lambda *= 10.0;
                        fail_streak += 1;
                        if fail_streak >= config.max_fail_streak {
                            stalled = true;
                            break 'outer;
                        }
                    }
                }
            }
        }
    }

    let (_, final_rmse) = problem.evaluate(&state);
    let mut intrinsics = rig.intrinsics.clone();
    for (view, col) in problem.focal_col.iter().enumerate() {
        if col.is_some() {
            intrinsics[view].fx = state.focals[view];
            intrinsics[view].fy = state.focals[view];
        }
    }
    let pose_rotation_deg = rig
        .poses
        .iter()
        .zip(&state.poses)
        .map(|(a, b)| rotation_angle(&(b.rotation * a.rotation.inverse())).to_degrees())
        .collect();
    let pose_center_delta = rig
        .poses
        .iter()
        .zip(&state.poses)
        .map(|(a, b)| (b.center() - a.center()).norm())
        .collect();
    let report = BAReport {
        initial_rmse_px: initial_rmse,
        final_rmse_px: final_rmse,
        iterations: accepted,
        converged,
        stalled,
        n_tracks: matches.tracks.len(),
        n_observations,
        pose_rotation_deg,
        pose_center_delta,
        cost_trace: trace,
    };
    let out_rig = CameraRig::new(intrinsics, state.poses)?;
    Ok((out_rig, state.points, report))
}

/// Union of the first-round cloud with points recovered at the lowered
/// confidence threshold; order preserved (first round first).
pub fn merge_second_round(
    first: Vec<Vector3<f64>>,
    second: Vec<Vector3<f64>>,
) -> Vec<Vector3<f64>> {
    let mut out = first;
    out.extend(second);
    out
}

/// Least-squares transform carrying `initial` onto `optimized`.
///
/// Rigid by default; `with_scale` additionally estimates a global scale for
/// the case where a fixed-baseline gauge left the clouds at different scales.
pub fn rigid_align(
    initial: &[Vector3<f64>],
    optimized: &[Vector3<f64>],
    with_scale: bool,
) -> Result<SimilarityTransform> {
    if initial.len() != optimized.len() {
        return Err(GbrError::Dimension(format!(
            "{} initial points for {} optimized points",
            initial.len(),
            optimized.len()
        )));
    }
    if initial.len() < 3 {
        return Err(GbrError::Invalid(format!(
            "rigid alignment needs at least 3 correspondences, got {}",
            initial.len()
        )));
    }
    umeyama_weighted(initial, optimized, None, with_scale)
}
