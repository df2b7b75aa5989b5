//! Synthetic structural-error injection for tree-structure labels.
//!
//! Two airway error types (missing terminal branches, discontinuities in
//! branches weighted toward high generations) and vessel centerline gaps with
//! per-length-group gap tables. Every injection is a pure removal and is
//! logged in a [`CorruptionRecord`]: run-length-encoded removal masks, the
//! affected branch ids, and the sampled rates, so the exact voxel diff can be
//! reconstructed and verified.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::skeleton::{terminal_branches, CenterlineGraph};
use crate::volume::{dilate_cube3, BinaryMask};
use rand::Rng as _;

/// Parameters for airway-style errors.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AirwayErrorParams {
    /// Upper bound for the "missing terminal branches" rate.
    pub max_rate_terminal: f64,
    /// Upper bound for the "discontinuity in branches" rate.
    pub max_rate_discontinuity: f64,
    /// Minimum discontinuity mask length, clamped to the branch length.
    pub min_gap_len_vox: usize,
    /// Cylinder mask diameter as a multiple of the branch diameter.
    pub mask_width_factor: f64,
    /// Generations never selected for discontinuities.
    pub excluded_generations: BTreeSet<u32>,
}

impl Default for AirwayErrorParams {
    fn default() -> Self {
        AirwayErrorParams {
            max_rate_terminal: 0.75,
            max_rate_discontinuity: 0.3,
            min_gap_len_vox: 10,
            mask_width_factor: 3.0,
            excluded_generations: BTreeSet::from([0, 1, 2]),
        }
    }
}

/// Gap table for one vessel length group.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VesselGroupTable {
    pub max_gaps: usize,
    pub gap_len: (usize, usize),
}

/// Parameters for vessel centerline gaps.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VesselErrorParams {
    pub max_rate: f64,
    pub long: VesselGroupTable,
    pub medium: VesselGroupTable,
    pub short: VesselGroupTable,
}

impl Default for VesselErrorParams {
    fn default() -> Self {
        VesselErrorParams {
            max_rate: 0.6,
            long: VesselGroupTable { max_gaps: 6, gap_len: (10, 35) },
            medium: VesselGroupTable { max_gaps: 4, gap_len: (10, 20) },
            short: VesselGroupTable { max_gaps: 2, gap_len: (6, 15) },
        }
    }
}

/// Which error family to inject.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum ErrorParams {
    Airway(AirwayErrorParams),
    Vessel(VesselErrorParams),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Terminal,
    Discontinuity,
    VesselGap,
}

/// Run-length-encoded voxel set over the x-fastest linear order.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
pub struct RleMask {
    pub dims: [usize; 3],
    pub runs: Vec<(u64, u32)>,
}

impl RleMask {
    /// Voxels set in `before` but not in `after`.
    pub fn from_diff(before: &BinaryMask, after: &BinaryMask) -> RleMask {
        assert_eq!(before.dims, after.dims);
        let mut runs = Vec::new();
        let mut start = None;
        for i in 0..before.data.len() {
            let removed = before.data[i] != 0 && after.data[i] == 0;
            match (removed, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s as u64, (i - s) as u32));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s as u64, (before.data.len() - s) as u32));
        }
        RleMask { dims: before.dims, runs }
    }

    pub fn count(&self) -> usize {
        self.runs.iter().map(|&(_, len)| len as usize).sum()
    }

    pub fn to_mask(&self, spacing: [f64; 3]) -> BinaryMask {
        let mut m = BinaryMask::zeros(self.dims, spacing);
        for &(start, len) in &self.runs {
            for i in start as usize..start as usize + len as usize {
                m.data[i] = 1;
            }
        }
        m
    }
}

/// One removed-voxel subset within a gap or terminal mask.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GapInfo {
    pub branch_id: usize,
    /// Start index within the branch path.
    pub start: usize,
    /// Masked length in path voxels.
    pub len: usize,
}

/// Removals performed by one injection pass.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RemovalEntry {
    pub error_type: ErrorKind,
    pub sampled_rate: f64,
    pub affected_branches: Vec<usize>,
    pub gaps: Vec<GapInfo>,
    /// Voxels this pass actually removed from the label.
    pub removed: RleMask,
    pub removed_voxels: usize,
}

/// Full provenance of a `corrupt` call.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CorruptionRecord {
    pub seed: u64,
    pub entries: Vec<RemovalEntry>,
    pub warnings: Vec<String>,
}

impl CorruptionRecord {
    pub fn save_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Union of all removal masks.
    pub fn removed_union(&self, spacing: [f64; 3]) -> Option<BinaryMask> {
        let dims = self.entries.first()?.removed.dims;
        let mut out = BinaryMask::zeros(dims, spacing);
        for e in &self.entries {
            for &(start, len) in &e.removed.runs {
                for i in start as usize..start as usize + len as usize {
                    out.data[i] = 1;
                }
            }
        }
        Some(out)
    }

    pub fn total_removed(&self) -> usize {
        self.entries.iter().map(|e| e.removed_voxels).sum()
    }
}

/// Uniform error rate in `[0, upper]`.
pub fn sample_error_rate(upper: f64, rng: &mut Rng) -> f64 {
    debug_assert!((0.0..=1.0).contains(&upper));
    rng.random::<f64>() * upper
}

/// Select `round(rate * N)` distinct candidates with probability proportional
/// to their weights, renormalizing after each draw.
///
/// If the weights run out mid-selection (all remaining are zero) the rest are
/// drawn uniformly; starting with all-zero weights is an error.
pub fn select_branches_weighted(
    candidates: &[(usize, u32)],
    rate: f64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    debug_assert!((0.0..=1.0).contains(&rate));
    let n = candidates.len();
    let k = ((rate * n as f64).round() as usize).min(n);
    if k == 0 {
        return Ok(Vec::new());
    }
    if candidates.iter().all(|&(_, w)| w == 0) {
        return Err(Error::AllZeroWeights);
    }
    let mut remaining: Vec<(usize, f64)> =
        candidates.iter().map(|&(id, w)| (id, w as f64)).collect();
    let mut selected = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&(_, w)| w).sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = remaining.len() - 1;
            for (i, &(_, w)) in remaining.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..remaining.len())
        };
        selected.push(remaining.remove(pick).0);
    }
    Ok(selected)
}

/// Voxels within Euclidean distance `width_vox / 2` of any segment voxel
/// center, clipped to `dims`.
pub fn cylinder_mask(
    segment: &[[usize; 3]],
    width_vox: f64,
    dims: [usize; 3],
    spacing: [f64; 3],
) -> BinaryMask {
    let mut out = BinaryMask::zeros(dims, spacing);
    let radius = width_vox / 2.0;
    let r2 = radius * radius;
    let reach = radius.floor() as i64;
    for &[px, py, pz] in segment {
        for dz in -reach..=reach {
            let z = pz as i64 + dz;
            if z < 0 || z >= dims[2] as i64 {
                continue;
            }
            for dy in -reach..=reach {
                let y = py as i64 + dy;
                if y < 0 || y >= dims[1] as i64 {
                    continue;
                }
                for dx in -reach..=reach {
                    let x = px as i64 + dx;
                    if x < 0 || x >= dims[0] as i64 {
                        continue;
                    }
                    let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                    if d2 <= r2 {
                        out.set(x as usize, y as usize, z as usize, 1);
                    }
                }
            }
        }
    }
    out
}

/// Full voxel run of a branch: its path plus the distal node voxel.
fn branch_run(g: &CenterlineGraph, branch_id: usize) -> Vec<[usize; 3]> {
    let b = &g.branches[branch_id];
    let mut run = b.path.clone();
    run.push(g.nodes[b.node_to].xyz);
    run
}

fn apply_removal(label: &mut BinaryMask, mask: &BinaryMask) {
    for (l, &m) in label.data.iter_mut().zip(&mask.data) {
        if m != 0 {
            *l = 0;
        }
    }
}

/// Remove `round(rate * n_terminal)` terminal branches, partially or totally.
///
/// The mask starts at a uniform position in the proximal half of the branch,
/// runs to the branch end, and is `mask_width_factor` times the branch
/// diameter wide.
pub fn inject_airway_terminal_errors(
    label: &BinaryMask,
    g: &CenterlineGraph,
    rate: f64,
    params: &AirwayErrorParams,
    rng: &mut Rng,
) -> Result<(BinaryMask, RemovalEntry)> {
    check_graph_in_bounds(g, label)?;
    let terminals = terminal_branches(g);
    let k = ((rate * terminals.len() as f64).round() as usize).min(terminals.len());
    let selected = sample_uniform_without_replacement(&terminals, k, rng);

    let mut out = label.clone();
    let mut gaps = Vec::new();
    for &bid in &selected {
        let run = branch_run(g, bid);
        let mid = (run.len() - 1) / 2;
        let start = rng.random_range(0..=mid);
        let width = params.mask_width_factor * g.branches[bid].mean_diameter_vox;
        let mask = cylinder_mask(&run[start..], width, label.dims, label.spacing);
        apply_removal(&mut out, &mask);
        gaps.push(GapInfo { branch_id: bid, start, len: run.len() - start });
    }
    let removed = RleMask::from_diff(label, &out);
    let removed_voxels = removed.count();
    Ok((
        out,
        RemovalEntry {
            error_type: ErrorKind::Terminal,
            sampled_rate: rate,
            affected_branches: selected,
            gaps,
            removed,
            removed_voxels,
        },
    ))
}

/// Create gaps in non-excluded branches, sampled with probability
/// proportional to their generation.
pub fn inject_airway_discontinuities(
    label: &BinaryMask,
    g: &CenterlineGraph,
    rate: f64,
    params: &AirwayErrorParams,
    rng: &mut Rng,
) -> Result<(BinaryMask, RemovalEntry, Option<String>)> {
    check_graph_in_bounds(g, label)?;
    let candidates: Vec<(usize, u32)> = g
        .branches
        .iter()
        .filter(|b| !params.excluded_generations.contains(&b.generation))
        .map(|b| (b.id, b.generation))
        .collect();

    let mut entry = RemovalEntry {
        error_type: ErrorKind::Discontinuity,
        sampled_rate: rate,
        affected_branches: Vec::new(),
        gaps: Vec::new(),
        removed: RleMask { dims: label.dims, runs: Vec::new() },
        removed_voxels: 0,
    };

    if candidates.is_empty() {
        let warning = (rate > 0.0).then(|| "no eligible branches for discontinuity errors".to_string());
        return Ok((label.clone(), entry, warning));
    }

    let selected = select_branches_weighted(&candidates, rate, rng)?;
    let mut out = label.clone();
    for &bid in &selected {
        let path = &g.branches[bid].path;
        if path.is_empty() {
            continue;
        }
        let len_vox = path.len();
        let lo = params.min_gap_len_vox.min(len_vox);
        let gap_len = rng.random_range(lo..=len_vox);
        let center = rng.random_range(0..len_vox);
        // keep the whole window inside the branch so the sampled length is realized
        let start = center.saturating_sub((gap_len - 1) / 2).min(len_vox - gap_len);
        let end = start + gap_len;
        let width = params.mask_width_factor * g.branches[bid].mean_diameter_vox;
        let mask = cylinder_mask(&path[start..end], width, label.dims, label.spacing);
        apply_removal(&mut out, &mask);
        entry.gaps.push(GapInfo { branch_id: bid, start, len: end - start });
    }
    entry.affected_branches = selected;
    entry.removed = RleMask::from_diff(label, &out);
    entry.removed_voxels = entry.removed.count();
    Ok((out, entry, None))
}

/// Length group of a vessel branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthGroup {
    Long,
    Medium,
    Short,
}

/// Rank branches by path length (ties by id) and split them into three
/// equal-sized groups; the leftover of a non-divisible count goes to the
/// longer groups first.
pub fn length_groups(g: &CenterlineGraph) -> Vec<(usize, LengthGroup)> {
    let mut order: Vec<usize> = g.branches.iter().map(|b| b.id).collect();
    order.sort_by_key(|&id| (std::cmp::Reverse(g.branches[id].path.len()), id));
    let n = order.len();
    let n_long = n.div_ceil(3);
    let n_medium = (n + 1) / 3;
    order
        .into_iter()
        .enumerate()
        .map(|(rank, id)| {
            let group = if rank < n_long {
                LengthGroup::Long
            } else if rank < n_long + n_medium {
                LengthGroup::Medium
            } else {
                LengthGroup::Short
            };
            (id, group)
        })
        .collect()
}

/// Inject gaps into a 1-voxel-wide centerline and dilate the result with the
/// 3x3x3 cube to produce the final vessel label.
pub fn inject_vessel_gaps(
    centerline_mask: &BinaryMask,
    g: &CenterlineGraph,
    params: &VesselErrorParams,
    rate: f64,
    rng: &mut Rng,
) -> Result<(BinaryMask, RemovalEntry)> {
    check_graph_in_bounds(g, centerline_mask)?;
    let baseline = dilate_cube3(centerline_mask);

    let groups = length_groups(g);
    let group_of: std::collections::BTreeMap<usize, LengthGroup> = groups.into_iter().collect();
    let all_ids: Vec<usize> = g.branches.iter().map(|b| b.id).collect();
    let k = ((rate * all_ids.len() as f64).round() as usize).min(all_ids.len());
    let selected = sample_uniform_without_replacement(&all_ids, k, rng);

    let mut thin = centerline_mask.clone();
    let mut gaps = Vec::new();
    for &bid in &selected {
        let path = &g.branches[bid].path;
        if path.is_empty() {
            continue;
        }
        let table = match group_of[&bid] {
            LengthGroup::Long => &params.long,
            LengthGroup::Medium => &params.medium,
            LengthGroup::Short => &params.short,
        };
        let n_gaps = rng.random_range(0..=table.max_gaps);
        for _ in 0..n_gaps {
            let len_vox = path.len();
            let lo = table.gap_len.0.min(len_vox);
            let hi = table.gap_len.1.min(len_vox);
            let gap_len = rng.random_range(lo..=hi);
            let center = rng.random_range(0..len_vox);
            let start = center.saturating_sub((gap_len - 1) / 2).min(len_vox - gap_len);
            let end = start + gap_len;
            for &[x, y, z] in &path[start..end] {
                thin.set(x, y, z, 0);
            }
            gaps.push(GapInfo { branch_id: bid, start, len: end - start });
        }
    }

    let label = dilate_cube3(&thin);
    let removed = RleMask::from_diff(&baseline, &label);
    let removed_voxels = removed.count();
    Ok((
        label,
        RemovalEntry {
            error_type: ErrorKind::VesselGap,
            sampled_rate: rate,
            affected_branches: selected,
            gaps,
            removed,
            removed_voxels,
        },
    ))
}

/// Sample each rate from its upper bound and apply the relevant injectors.
///
/// For airway params, `label` is the segmentation mask and terminal errors
/// are applied before discontinuities. For vessel params, `label` must be the
/// 1-voxel-wide centerline; the returned label (and the baseline that removal
/// masks are diffed against) is its 3x3x3 dilation.
pub fn corrupt(
    label: &BinaryMask,
    g: &CenterlineGraph,
    params: &ErrorParams,
    seed: u64,
) -> Result<(BinaryMask, CorruptionRecord)> {
    let mut rng = crate::rng::sub_rng(seed, &["corrupt"]);
    let mut record = CorruptionRecord { seed, entries: Vec::new(), warnings: Vec::new() };
    match params {
        ErrorParams::Airway(p) => {
            let rate_terminal = sample_error_rate(p.max_rate_terminal, &mut rng);
            let rate_disc = sample_error_rate(p.max_rate_discontinuity, &mut rng);
            let (after_terminal, entry) =
                inject_airway_terminal_errors(label, g, rate_terminal, p, &mut rng)?;
            record.entries.push(entry);
            let (after_disc, entry, warning) =
                inject_airway_discontinuities(&after_terminal, g, rate_disc, p, &mut rng)?;
            record.entries.push(entry);
            record.warnings.extend(warning);
            Ok((after_disc, record))
        }
        ErrorParams::Vessel(p) => {
            let rate = sample_error_rate(p.max_rate, &mut rng);
            let (out, entry) = inject_vessel_gaps(label, g, p, rate, &mut rng)?;
            record.entries.push(entry);
            Ok((out, record))
        }
    }
}

fn sample_uniform_without_replacement(ids: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = ids.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k.min(pool.len()) {
        let i = rng.random_range(0..pool.len());
        out.push(pool.remove(i));
    }
    out
}

fn check_graph_in_bounds(g: &CenterlineGraph, label: &BinaryMask) -> Result<()> {
    let ok = |p: &[usize; 3]| p[0] < label.dims[0] && p[1] < label.dims[1] && p[2] < label.dims[2];
    for n in &g.nodes {
        if !ok(&n.xyz) {
            return Err(Error::GraphLabelMismatch(format!(
                "node {} at {:?} is outside the label volume {:?}",
                n.id, n.xyz, label.dims
            )));
        }
    }
    for b in &g.branches {
        if let Some(p) = b.path.iter().find(|p| !ok(p)) {
            return Err(Error::GraphLabelMismatch(format!(
                "branch {} voxel {:?} is outside the label volume {:?}",
                b.id, p, label.dims
            )));
        }
    }
    Ok(())
}
