//! Multi-view match extraction from unified point maps.
//!
//! Confident cells (primary confidence at or above one threshold, secondary
//! match confidence at or above another) are matched between paired views by
//! exact reciprocal nearest neighbour in 3D. Matches are capped per view by
//! descending combined confidence (primary times secondary, multiplied
//! across both endpoints) and merged into multi-view tracks by transitive
//! closure; a merge that would observe one view twice is refused, splitting
//! the track. All steps are deterministic and independent of pair order.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};

use crate::error::{GbrError, Result};
use crate::geometry::{PointMapFrame, Raster};
use crate::spatial::PointGrid;

#[derive(Clone, Copy, Debug)]
pub struct MatchConfig {
    /// Primary (point-map) confidence threshold; both endpoints must reach it.
    pub conf_primary: f64,
    /// Secondary (match-confidence raster) threshold.
    pub conf_secondary: f64,
    /// Maximum matches retained per view.
    pub cap_per_view: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            conf_primary: 3.0,
            conf_secondary: 0.05,
            cap_per_view: 50_000,
        }
    }
}

/// One view's sighting of a track.
#[derive(Clone, Copy, Debug)]
pub struct Observation {
    pub view: usize,
    pub pixel: Vector2<f64>,
    /// Combined (primary x secondary) confidence of the source cell.
    pub confidence: f64,
    pub visibility: bool,
}

/// A 3D point with its sightings; observations are sorted by view and each
/// view appears at most once.
#[derive(Clone, Debug)]
pub struct Track {
    pub point: Vector3<f64>,
    pub observations: Vec<Observation>,
}

/// The extracted correspondence set.
#[derive(Clone, Debug, Default)]
pub struct MatchSet {
    pub tracks: Vec<Track>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Concatenate two sets (second-round merging).
    pub fn merged(mut self, mut other: MatchSet) -> MatchSet {
        self.tracks.append(&mut other.tracks);
        self
    }
}

/// A confident cell eligible for matching.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    cell: usize,
    point: Vector3<f64>,
    combined: f64,
}

fn view_candidates(
    frame: &PointMapFrame,
    match_conf: &Raster<f64>,
    roi: Option<&Raster<bool>>,
    cfg: &MatchConfig,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for ((idx, p), (c, m)) in frame
        .points()
        .data()
        .iter()
        .enumerate()
        .zip(frame.confidence().data().iter().zip(match_conf.data()))
    {
        if *c >= cfg.conf_primary && *m >= cfg.conf_secondary {
            if let Some(mask) = roi {
                if !mask.data()[idx] {
                    continue;
                }
            }
            out.push(Candidate {
                cell: idx,
                point: *p,
                combined: c * m,
            });
        }
    }
    out
}

/// A reciprocal pair of candidate cells.
#[derive(Clone, Copy, Debug)]
struct PairMatch {
    view_a: usize,
    cand_a: usize,
    view_b: usize,
    cand_b: usize,
    strength: f64,
}

/// Extract reciprocal-NN matches and merge them into tracks.
///
/// `frames` must all be in the unified coordinate frame. `match_conf` holds
/// one secondary-confidence raster per view (use all-ones when absent) and
/// `roi` optionally restricts candidate cells per view.
pub fn extract_matches(
    frames: &[PointMapFrame],
    match_conf: &[Raster<f64>],
    pairs: &[(usize, usize)],
    roi: Option<&[Raster<bool>]>,
    cfg: &MatchConfig,
) -> Result<MatchSet> {
    if frames.len() != match_conf.len() {
        return Err(GbrError::Dimension(format!(
            "{} frames with {} match-confidence rasters",
            frames.len(),
            match_conf.len()
        )));
    }
    if let Some(masks) = roi {
        if masks.len() != frames.len() {
            return Err(GbrError::Dimension(format!(
                "{} frames with {} region masks",
                frames.len(),
                masks.len()
            )));
        }
    }

    // Canonicalize and dedupe the pair list so results cannot depend on its
    // order or orientation.
    let mut canon: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(i, j)| (i.min(j), i.max(j)))
        .collect();
    canon.sort_unstable();
    canon.dedup();

    let candidates: Vec<Vec<Candidate>> = frames
        .iter()
        .enumerate()
        .map(|(v, f)| view_candidates(f, &match_conf[v], roi.map(|m| &m[v]), cfg))
        .collect();
    let grids: Vec<PointGrid> = candidates
        .iter()
        .map(|c| PointGrid::with_auto_cell(c.iter().map(|c| c.point).collect()))
        .collect();

    let mut matches: Vec<PairMatch> = Vec::new();
    for &(i, j) in &canon {
        if i >= frames.len() || j >= frames.len() {
            return Err(GbrError::Invalid(format!(
                "pair ({i}, {j}) exceeds view count {}",
                frames.len()
            )));
        }
        let (ci, cj) = (&candidates[i], &candidates[j]);
        if ci.is_empty() || cj.is_empty() {
            continue;
        }
        let fwd: Vec<usize> = ci
            .iter()
            .map(|c| grids[j].nearest(&c.point).expect("non-empty").0)
            .collect();
        let back: Vec<usize> = cj
            .iter()
            .map(|c| grids[i].nearest(&c.point).expect("non-empty").0)
            .collect();
        for (a, &b) in fwd.iter().enumerate() {
            if back[b] == a {
                matches.push(PairMatch {
                    view_a: i,
                    cand_a: a,
                    view_b: j,
                    cand_b: b,
                    strength: ci[a].combined * cj[b].combined,
                });
            }
        }
    }

    // Per-view cap: admit strongest matches first; a match needs headroom in
    // both of its views.
    matches.sort_by(|x, y| {
        y.strength
            .total_cmp(&x.strength)
            .then_with(|| (x.view_a, x.view_b, x.cand_a, x.cand_b).cmp(&(y.view_a, y.view_b, y.cand_a, y.cand_b)))
    });
    let mut view_counts = vec![0usize; frames.len()];
    let mut admitted: Vec<PairMatch> = Vec::with_capacity(matches.len());
    for m in matches {
        if view_counts[m.view_a] < cfg.cap_per_view && view_counts[m.view_b] < cfg.cap_per_view {
            view_counts[m.view_a] += 1;
            view_counts[m.view_b] += 1;
            admitted.push(m);
        }
    }

    if admitted.is_empty() {
        return Err(GbrError::Empty(format!(
            "no reciprocal matches passed the confidence filters (primary >= {}, secondary >= \
             {}); consider lowering the thresholds",
            cfg.conf_primary, cfg.conf_secondary
        )));
    }

    // Transitive closure over (view, cell) endpoints with conflict refusal.
    let mut node_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut node_info: Vec<(usize, usize)> = Vec::new();
    let mut id_of = |view: usize, cand: usize, info: &mut Vec<(usize, usize)>| -> usize {
        *node_ids.entry((view, cand)).or_insert_with(|| {
            info.push((view, cand));
            info.len() - 1
        })
    };
    let mut edges = Vec::with_capacity(admitted.len());
    for m in &admitted {
        let a = id_of(m.view_a, m.cand_a, &mut node_info);
        let b = id_of(m.view_b, m.cand_b, &mut node_info);
        edges.push((a, b));
    }

    let n_nodes = node_info.len();
    let mut parent: Vec<usize> = (0..n_nodes).collect();
    // Views seen by each root, mapping view -> candidate index.
    let mut views: Vec<BTreeMap<usize, usize>> = node_info
        .iter()
        .map(|&(v, c)| BTreeMap::from([(v, c)]))
        .collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            continue;
        }
        // Refuse merges that would observe one view at two different cells.
        let conflict = views[ra]
            .iter()
            .any(|(v, c)| views[rb].get(v).is_some_and(|c2| c2 != c));
        if conflict {
            continue;
        }
        let (big, small) = if views[ra].len() >= views[rb].len() {
            (ra, rb)
        } else {
            (rb, ra)
        };
        parent[small] = big;
        let moved = std::mem::take(&mut views[small]);
        views[big].extend(moved);
    }

    // Assemble tracks from components with at least two views.
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for n in 0..n_nodes {
        let r = find(&mut parent, n);
        by_root.entry(r).or_default().push(n);
    }
    let mut tracks = Vec::new();
    for (_, members) in by_root {
        if members.len() < 2 {
            continue;
        }
        let mut point = Vector3::zeros();
        let mut weight = 0.0;
        let mut observations = Vec::with_capacity(members.len());
        for &n in &members {
            let (view, ci) = node_info[n];
            let cand = &candidates[view][ci];
            point += cand.point * cand.combined;
            weight += cand.combined;
            let w = frames[view].width();
            observations.push(Observation {
                view,
                pixel: Vector2::new((cand.cell % w) as f64, (cand.cell / w) as f64),
                confidence: cand.combined,
                visibility: true,
            });
        }
        if weight <= 0.0 {
            continue;
        }
        observations.sort_by_key(|o| o.view);
        tracks.push(Track {
            point: point / weight,
            observations,
        });
    }

    // Canonical order: by first observation (view, pixel).
    tracks.sort_by(|a, b| {
        let ka = (
            a.observations[0].view,
            a.observations[0].pixel.y as i64,
            a.observations[0].pixel.x as i64,
        );
        let kb = (
            b.observations[0].view,
            b.observations[0].pixel.y as i64,
            b.observations[0].pixel.x as i64,
        );
        ka.cmp(&kb)
    });

    if tracks.is_empty() {
        return Err(GbrError::Empty(
            "all matches were filtered during track merging; consider lowering the confidence \
             thresholds"
                .into(),
        ));
    }
    Ok(MatchSet { tracks })
}
