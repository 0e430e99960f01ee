//! Registration of per-view point maps into one unified frame.
//!
//! Each observed pair (anchor i, source j) contributes a pixelwise
//! correspondence between view j's own map and the cross map of j's pixels
//! expressed in i's frame. Pairs are first solved independently by
//! confidence-weighted Umeyama, chained over a spanning tree rooted at view
//! 0, then all per-view similarities are refined jointly by gradient descent
//! with backtracking line search. View 0 stays pinned to the identity.

use nalgebra::{Rotation3, Vector3};

use crate::error::{GbrError, Result};
use crate::geometry::{umeyama_weighted, PointMapFrame, SimilarityTransform};

/// One registered pair: the source view's own map plus the same pixels
/// expressed in the anchor view's frame.
#[derive(Clone, Copy, Debug)]
pub struct PairObservation<'a> {
    pub anchor: usize,
    pub source: usize,
    pub source_own: &'a PointMapFrame,
    pub cross: &'a PointMapFrame,
}

#[derive(Clone, Copy, Debug)]
pub struct AlignConfig {
    /// Cells at or below this confidence are excluded.
    pub min_confidence: f64,
    /// Pairs with fewer correspondences are dropped with a warning.
    pub min_correspondences: usize,
    /// Joint refinement iteration budget.
    pub refine_iterations: usize,
    /// Correspondences per pair retained for joint refinement.
    pub refine_subsample: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            min_confidence: 0.0,
            min_correspondences: 3,
            refine_iterations: 200,
            refine_subsample: 3000,
        }
    }
}

/// Result of [`pairwise_align`].
#[derive(Clone, Debug)]
pub struct Alignment {
    /// Per-view similarity into the unified frame; entry 0 is the identity.
    pub transforms: Vec<SimilarityTransform>,
    /// Mean weighted squared residual before/after joint refinement.
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Pairs dropped for lacking confident correspondences.
    pub dropped_pairs: Vec<(usize, usize)>,
}

struct PairData {
    anchor: usize,
    source: usize,
    /// (source-own point, cross point in anchor frame, weight)
    corr: Vec<(Vector3<f64>, Vector3<f64>, f64)>,
    transform: SimilarityTransform,
}

fn collect_correspondences(
    obs: &PairObservation,
    min_conf: f64,
) -> Vec<(Vector3<f64>, Vector3<f64>, f64)> {
    let own = obs.source_own;
    let cross = obs.cross;
    let mut corr = Vec::new();
    if own.width() != cross.width() || own.height() != cross.height() {
        return corr;
    }
    for ((p_own, p_cross), (c_own, c_cross)) in own
        .points()
        .data()
        .iter()
        .zip(cross.points().data())
        .zip(own.confidence().data().iter().zip(cross.confidence().data()))
    {
        if *c_own > min_conf && *c_cross > min_conf {
            corr.push((*p_own, *p_cross, c_own * c_cross));
        }
    }
    corr
}

fn connected_components(n_views: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n_views).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut comps: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for v in 0..n_views {
        let r = find(&mut parent, v);
        comps.entry(r).or_default().push(v);
    }
    comps.into_values().collect()
}

/// Weighted mean squared residual over all pairs, normalized by total weight.
fn joint_cost(pairs: &[PairData], q: &[SimilarityTransform]) -> f64 {
    let mut cost = 0.0;
    let mut weight = 0.0;
    for p in pairs {
        let (qi, qj) = (&q[p.anchor], &q[p.source]);
        for (s, c, w) in &p.corr {
            cost += w * (qi.apply(c) - qj.apply(s)).norm_squared();
            weight += w;
        }
    }
    if weight > 0.0 {
        cost / weight
    } else {
        0.0
    }
}

/// Register all views into view 0's frame.
pub fn pairwise_align(
    n_views: usize,
    observations: &[PairObservation],
    cfg: &AlignConfig,
) -> Result<Alignment> {
    if n_views == 0 {
        return Err(GbrError::Empty("no views to align".into()));
    }
    let mut dropped = Vec::new();
    let mut pairs: Vec<PairData> = Vec::new();
    for obs in observations {
        if obs.anchor >= n_views || obs.source >= n_views {
            return Err(GbrError::Invalid(format!(
                "pair ({}, {}) exceeds view count {n_views}",
                obs.anchor, obs.source
            )));
        }
        let corr = collect_correspondences(obs, cfg.min_confidence);
        if corr.len() < cfg.min_correspondences {
            log::warn!(
                "pair ({}, {}): only {} confident correspondences, dropping",
                obs.anchor,
                obs.source,
                corr.len()
            );
            dropped.push((obs.anchor, obs.source));
            continue;
        }
        let src: Vec<Vector3<f64>> = corr.iter().map(|(s, _, _)| *s).collect();
        let dst: Vec<Vector3<f64>> = corr.iter().map(|(_, c, _)| *c).collect();
        let w: Vec<f64> = corr.iter().map(|(_, _, w)| *w).collect();
        let transform = umeyama_weighted(&src, &dst, Some(&w), true)?;
        pairs.push(PairData {
            anchor: obs.anchor,
            source: obs.source,
            corr,
            transform,
        });
    }

    let edges: Vec<(usize, usize)> = pairs.iter().map(|p| (p.anchor, p.source)).collect();
    let comps = connected_components(n_views, &edges);
    if comps.len() > 1 {
        let listing = comps
            .iter()
            .map(|c| format!("{c:?}"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(GbrError::Invalid(format!(
            "pair graph is disconnected; components: {listing}"
        )));
    }

    // Chain pair transforms over a BFS tree rooted at view 0.
    let mut q: Vec<Option<SimilarityTransform>> = vec![None; n_views];
    q[0] = Some(SimilarityTransform::identity());
    let mut frontier = vec![0usize];
    while let Some(v) = frontier.pop() {
        let qv = q[v].clone().unwrap();
        for p in &pairs {
            // Pair transform maps source-own coordinates into anchor frame.
            if p.anchor == v && q[p.source].is_none() {
                q[p.source] = Some(qv.compose(&p.transform));
                frontier.push(p.source);
            } else if p.source == v && q[p.anchor].is_none() {
                q[p.anchor] = Some(qv.compose(&p.transform.inverse()));
                frontier.push(p.anchor);
            }
        }
    }
    let mut transforms: Vec<SimilarityTransform> =
        q.into_iter().map(|t| t.expect("graph connected")).collect();

    // Subsample correspondences for the joint pass, highest weight first.
    for p in &mut pairs {
        if p.corr.len() > cfg.refine_subsample {
            let mut idx: Vec<usize> = (0..p.corr.len()).collect();
            idx.sort_by(|&a, &b| p.corr[b].2.total_cmp(&p.corr[a].2).then(a.cmp(&b)));
            idx.truncate(cfg.refine_subsample);
            idx.sort_unstable();
            p.corr = idx.into_iter().map(|i| p.corr[i]).collect();
        }
    }

    let initial_cost = joint_cost(&pairs, &transforms);
    let mut cost = initial_cost;

    // Joint gradient descent over (log scale, rotation, translation) of
    // every view but the anchor.
    let dof = 7;
    for _ in 0..cfg.refine_iterations {
        if cost <= 1e-30 {
            break;
        }
        let mut grad = vec![0.0f64; n_views * dof];
        let mut weight = 0.0;
        for p in &pairs {
            let (qi, qj) = (&transforms[p.anchor], &transforms[p.source]);
            for (s, c, w) in &p.corr {
                let pi = qi.apply(c);
                let pj = qj.apply(s);
                let r = pi - pj;
                weight += w;
                if p.anchor > 0 {
                    let v = pi - qi.translation();
                    let base = p.anchor * dof;
                    grad[base] += 2.0 * w * r.dot(&v);
                    let gphi = 2.0 * w * v.cross(&r);
                    let gt = 2.0 * w * r;
                    for k in 0..3 {
                        grad[base + 1 + k] += gphi[k];
                        grad[base + 4 + k] += gt[k];
                    }
                }
                if p.source > 0 {
                    let v = pj - qj.translation();
                    let base = p.source * dof;
                    grad[base] -= 2.0 * w * r.dot(&v);
                    let gphi = 2.0 * w * v.cross(&r);
                    let gt = 2.0 * w * r;
                    for k in 0..3 {
                        grad[base + 1 + k] -= gphi[k];
                        grad[base + 4 + k] -= gt[k];
                    }
                }
            }
        }
        if weight > 0.0 {
            for g in &mut grad {
                *g /= weight;
            }
        }
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 < 1e-28 * (1.0 + cost) {
            break;
        }

        // Backtracking line search along the negative gradient.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<SimilarityTransform> = transforms
                .iter()
                .enumerate()
                .map(|(v, t)| {
                    if v == 0 {
                        return t.clone();
                    }
                    let base = v * dof;
                    let ds = -alpha * grad[base];
                    let dphi = Vector3::new(
                        -alpha * grad[base + 1],
                        -alpha * grad[base + 2],
                        -alpha * grad[base + 3],
                    );
                    let dt = Vector3::new(
                        -alpha * grad[base + 4],
                        -alpha * grad[base + 5],
                        -alpha * grad[base + 6],
                    );
                    SimilarityTransform::from_parts(
                        t.scale() * ds.exp(),
                        Rotation3::from_scaled_axis(dphi) * t.rotation(),
                        t.translation() + dt,
                    )
                })
                .collect();
            let trial_cost = joint_cost(&pairs, &trial);
            if trial_cost <= cost - 1e-4 * alpha * gnorm2 {
                transforms = trial;
                cost = trial_cost;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if (initial_cost - cost).abs() > 0.0 && gnorm2 < 1e-24 {
            break;
        }
    }

    Ok(Alignment {
        transforms,
        initial_cost,
        final_cost: cost,
        dropped_pairs: dropped,
    })
}
