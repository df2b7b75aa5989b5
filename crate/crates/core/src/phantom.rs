//! Synthetic binary tree phantoms with known centerline graphs.
//!
//! A phantom is a binary bifurcating tree of straight capsule branches:
//! per-level radii shrink geometrically, the split plane rotates around the
//! parent direction, and deviation angles are jittered. The generator owns
//! the exact branch decomposition (no skeletonization involved), so phantoms
//! double as ground truth for the skeleton and error-injection modules.
//! Everything is bit-deterministic per (spec, seed).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::skeleton::{Branch, CenterlineGraph, Node, NodeKind};
use crate::volume::{
    distance_transform, read_mhd, write_mhd, BinaryMask, ElementType, Grid, Volume,
};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    /// Number of bifurcation levels (0 = a single trunk).
    pub depth: u32,
    pub trunk_radius_vox: f64,
    /// Per-level radius multiplier in (0, 1].
    pub radius_decay: f64,
    /// Branch length range in voxels.
    pub branch_len_range: (f64, f64),
    /// Child deviation angle range from the parent direction, degrees.
    pub branch_angle_range: (f64, f64),
    pub foreground_intensity: f32,
    pub background_intensity: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 64],
            depth: 3,
            trunk_radius_vox: 2.5,
            radius_decay: 0.75,
            branch_len_range: (10.0, 14.0),
            branch_angle_range: (25.0, 40.0),
            foreground_intensity: 0.65,
            background_intensity: 0.35,
            noise_sigma: 0.15,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 8) {
            return Err(Error::Config("phantom dims must be at least 8 per axis".into()));
        }
        if !(self.trunk_radius_vox > 0.0) {
            return Err(Error::Config("trunk radius must be positive".into()));
        }
        if !(self.radius_decay > 0.0 && self.radius_decay <= 1.0) {
            return Err(Error::Config("radius decay must be in (0, 1]".into()));
        }
        if self.branch_len_range.0 > self.branch_len_range.1 || self.branch_len_range.0 < 3.0 {
            return Err(Error::Config("branch length range must be non-empty and >= 3".into()));
        }
        if self.branch_angle_range.0 > self.branch_angle_range.1 {
            return Err(Error::Config("branch angle range must be non-empty".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Depth after truncating levels whose radius would drop below 0.5 voxels.
    pub fn effective_depth(&self) -> u32 {
        let mut depth = 0;
        while depth < self.depth && self.trunk_radius_vox * self.radius_decay.powi(depth as i32 + 1) >= 0.5
        {
            depth += 1;
        }
        depth
    }
}

#[derive(Clone, Debug)]
pub struct PhantomSample {
    pub image: Volume,
    pub gt_mask: BinaryMask,
    pub gt_centerline: BinaryMask,
    pub graph: CenterlineGraph,
    pub bounding_mask: BinaryMask,
}

impl PhantomSample {
    /// Trunk-start voxel, usable as the root hint for graph extraction.
    pub fn root_hint(&self) -> [i64; 3] {
        let p = self.graph.nodes[self.graph.root].xyz;
        [p[0] as i64, p[1] as i64, p[2] as i64]
    }
}

// ---------------------------------------------------------------------------
// geometry helpers

type Vec3 = [f64; 3];

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    scale(a, 1.0 / n)
}

/// Rotate `v` around unit axis `u` by `angle` radians (Rodrigues).
fn rotate(v: Vec3, u: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let cu = cross(u, v);
    let du = dot(u, v) * (1.0 - c);
    [
        v[0] * c + cu[0] * s + u[0] * du,
        v[1] * c + cu[1] * s + u[1] * du,
        v[2] * c + cu[2] * s + u[2] * du,
    ]
}

/// Orthonormal basis perpendicular to `d`.
fn perp_basis(d: Vec3) -> (Vec3, Vec3) {
    let pick = if d[0].abs() <= d[1].abs() && d[0].abs() <= d[2].abs() {
        [1.0, 0.0, 0.0]
    } else if d[1].abs() <= d[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let e1 = normalize(cross(d, pick));
    let e2 = cross(d, e1);
    (e1, e2)
}

fn point_segment_dist(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub3(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return norm(sub3(p, a));
    }
    let t = (dot(sub3(p, a), ab) / len2).clamp(0.0, 1.0);
    norm(sub3(p, add(a, scale(ab, t))))
}

/// 26-connected integer line between two voxels, inclusive.
pub fn voxel_line(a: [i64; 3], b: [i64; 3]) -> Vec<[i64; 3]> {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let n = d.iter().map(|v| v.abs()).max().unwrap();
    let mut out = Vec::with_capacity(n as usize + 1);
    if n == 0 {
        out.push(a);
        return out;
    }
    for i in 0..=n {
        let t = i as f64 / n as f64;
        out.push([
            (a[0] as f64 + d[0] as f64 * t).round() as i64,
            (a[1] as f64 + d[1] as f64 * t).round() as i64,
            (a[2] as f64 + d[2] as f64 * t).round() as i64,
        ]);
    }
    out.dedup();
    out
}

// ---------------------------------------------------------------------------
// tree construction

#[derive(Clone, Debug)]
struct TreeBranch {
    level: u32,
    start: Vec3,
    end: Vec3,
    radius: f64,
    parent: Option<usize>,
}

const FIT_RETRIES: usize = 80;

fn build_continuous_tree(spec: &PhantomSpec, attempt: usize, shrink: f64) -> Vec<TreeBranch> {
    let mut rng = rng::sub_rng(spec.seed, &["phantom-tree", &attempt.to_string()]);
    let depth = spec.effective_depth();
    // integer center: an axis-aligned trunk at a half-integer center would
    // rasterize to an even square tube with no central voxel
    let cx = (spec.dims[0] / 2) as f64;
    let cy = (spec.dims[1] / 2) as f64;
    let z0 = spec.trunk_radius_vox + 2.0;

    let mut branches: Vec<TreeBranch> = Vec::new();
    // (branch index, direction) frontier
    let mut frontier: Vec<(usize, Vec3)> = Vec::new();

    let sample_len = |rng: &mut Rng, shrink: f64| {
        let (lo, hi) = spec.branch_len_range;
        (lo + rng.random::<f64>() * (hi - lo)) * shrink
    };

    let trunk_dir = [0.0, 0.0, 1.0];
    // thinning retreats a capsule's free end by about its radius, so the
    // trunk needs extra length to survive as a branch of its own
    let trunk_len = sample_len(&mut rng, shrink) * 1.5 + spec.trunk_radius_vox;
    branches.push(TreeBranch {
        level: 0,
        start: [cx, cy, z0],
        end: add([cx, cy, z0], scale(trunk_dir, trunk_len)),
        radius: spec.trunk_radius_vox,
        parent: None,
    });
    frontier.push((0, trunk_dir));

    // golden-angle azimuth sequence keeps sibling planes spread out
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut junction_count = 0usize;

    for level in 1..=depth {
        let radius = spec.trunk_radius_vox * spec.radius_decay.powi(level as i32);
        let mut next = Vec::new();
        for (parent_idx, parent_dir) in frontier {
            let q = branches[parent_idx].end;
            let (e1, e2) = perp_basis(parent_dir);
            let phi = golden * junction_count as f64 + (rng.random::<f64>() - 0.5) * 0.6;
            junction_count += 1;
            let axis = normalize(add(scale(e1, phi.cos()), scale(e2, phi.sin())));
            let (alo, ahi) = spec.branch_angle_range;
            for side in [1.0, -1.0] {
                let angle = (alo + rng.random::<f64>() * (ahi - alo)).to_radians() * side;
                let dir = normalize(rotate(parent_dir, axis, angle));
                let len = sample_len(&mut rng, shrink);
                let idx = branches.len();
                branches.push(TreeBranch {
                    level,
                    start: q,
                    end: add(q, scale(dir, len)),
                    radius,
                    parent: Some(parent_idx),
                });
                next.push((idx, dir));
            }
        }
        frontier = next;
    }
    branches
}

fn tree_fits(spec: &PhantomSpec, tree: &[TreeBranch]) -> bool {
    let margin = 1.5;
    for b in tree {
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let p = add(b.start, scale(sub3(b.end, b.start), t));
            for a in 0..3 {
                if p[a] < b.radius + margin || p[a] > spec.dims[a] as f64 - 1.0 - b.radius - margin {
                    return false;
                }
            }
        }
    }
    true
}

/// Non-incident tube pairs must stay separated; incident pairs (parent-child,
/// siblings) are checked away from the shared junction point.
fn tree_separated(tree: &[TreeBranch]) -> bool {
    let steps = 14usize;
    let sample = |b: &TreeBranch| -> Vec<Vec3> {
        (0..=steps)
            .map(|i| add(b.start, scale(sub3(b.end, b.start), i as f64 / steps as f64)))
            .collect()
    };
    let pts: Vec<Vec<Vec3>> = tree.iter().map(sample).collect();
    for i in 0..tree.len() {
        for j in i + 1..tree.len() {
            let (bi, bj) = (&tree[i], &tree[j]);
            let clearance = bi.radius + bj.radius + 2.0;
            // shared junction if incident
            let shared = if bj.parent == Some(i) {
                Some(bi.end)
            } else if bi.parent == bj.parent && bi.parent.is_some() {
                Some(bi.start)
            } else if bi.parent == Some(j) {
                Some(bj.end)
            } else {
                None
            };
            let exclusion = clearance + 1.5;
            for p in &pts[i] {
                if let Some(q) = shared {
                    if norm(sub3(*p, q)) < exclusion {
                        continue;
                    }
                }
                for r in &pts[j] {
                    if let Some(q) = shared {
                        if norm(sub3(*r, q)) < exclusion {
                            continue;
                        }
                    }
                    if norm(sub3(*p, *r)) < clearance {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn round_vox(p: Vec3) -> [i64; 3] {
    [p[0].round() as i64, p[1].round() as i64, p[2].round() as i64]
}

/// Rasterize the tree into (centerline, graph); fails when paths collide.
fn rasterize_graph(spec: &PhantomSpec, tree: &[TreeBranch]) -> Option<(BinaryMask, CenterlineGraph)> {
    let dims = spec.dims;
    let spacing = [1.0; 3];
    let mut centerline = BinaryMask::zeros(dims, spacing);
    let mut claimed: BTreeMap<[i64; 3], ()> = BTreeMap::new();

    // nodes: trunk start, every junction (= end of non-leaf branch), every leaf end
    let depth = spec.effective_depth();
    let mut nodes: Vec<Node> = Vec::new();
    let mut node_at: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    let push_node = |p: [i64; 3], kind: NodeKind, nodes: &mut Vec<Node>,
                         node_at: &mut BTreeMap<[i64; 3], usize>|
     -> Option<usize> {
        if node_at.contains_key(&p) {
            return None; // node collision
        }
        let id = nodes.len();
        node_at.insert(p, id);
        nodes.push(Node {
            id,
            xyz: [p[0] as usize, p[1] as usize, p[2] as usize],
            kind,
            voxels: vec![[p[0] as usize, p[1] as usize, p[2] as usize]],
        });
        Some(id)
    };

    let trunk_start = round_vox(tree[0].start);
    push_node(trunk_start, NodeKind::Endpoint, &mut nodes, &mut node_at)?;
    for b in tree {
        let kind = if b.level == depth { NodeKind::Endpoint } else { NodeKind::Bifurcation };
        push_node(round_vox(b.end), kind, &mut nodes, &mut node_at)?;
    }
    for p in node_at.keys() {
        centerline.set(p[0] as usize, p[1] as usize, p[2] as usize, 1);
    }

    let mut branches: Vec<Branch> = Vec::new();
    for (i, b) in tree.iter().enumerate() {
        let from_vox = round_vox(b.start);
        let to_vox = round_vox(b.end);
        let node_from = *node_at.get(&from_vox)?;
        let node_to = *node_at.get(&to_vox)?;
        let line = voxel_line(from_vox, to_vox);
        if line.len() < 4 {
            return None; // too short to leave a path between the node voxels
        }
        let mut path = Vec::with_capacity(line.len() - 2);
        for &p in &line[1..line.len() - 1] {
            if node_at.contains_key(&p) || claimed.insert(p, ()).is_some() {
                return None; // path collision
            }
            centerline.set(p[0] as usize, p[1] as usize, p[2] as usize, 1);
            path.push([p[0] as usize, p[1] as usize, p[2] as usize]);
        }
        branches.push(Branch {
            id: i,
            node_from,
            node_to,
            path,
            generation: b.level,
            is_terminal: b.level == depth,
            mean_diameter_vox: 2.0 * b.radius,
        });
    }

    let graph = CenterlineGraph { nodes, branches, root: 0 };
    Some((centerline, graph))
}

fn rasterize_mask(spec: &PhantomSpec, tree: &[TreeBranch], centerline: &BinaryMask) -> BinaryMask {
    let dims = spec.dims;
    let mut mask = centerline.clone();
    for b in tree {
        let r = b.radius;
        let lo = [
            (b.start[0].min(b.end[0]) - r - 1.0).floor().max(0.0) as usize,
            (b.start[1].min(b.end[1]) - r - 1.0).floor().max(0.0) as usize,
            (b.start[2].min(b.end[2]) - r - 1.0).floor().max(0.0) as usize,
        ];
        let hi = [
            (b.start[0].max(b.end[0]) + r + 1.0).ceil().min(dims[0] as f64 - 1.0) as usize,
            (b.start[1].max(b.end[1]) + r + 1.0).ceil().min(dims[1] as f64 - 1.0) as usize,
            (b.start[2].max(b.end[2]) + r + 1.0).ceil().min(dims[2] as f64 - 1.0) as usize,
        ];
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    if mask.get(x, y, z) != 0 {
                        continue;
                    }
                    let p = [x as f64, y as f64, z as f64];
                    if point_segment_dist(p, b.start, b.end) <= r {
                        mask.set(x, y, z, 1);
                    }
                }
            }
        }
    }
    mask
}

/// Chebyshev dilation by `r` voxels (separable per-axis window OR).
pub fn dilate_chebyshev(m: &BinaryMask, r: usize) -> BinaryMask {
    let mut cur = m.clone();
    let [nx, ny, nz] = m.dims;
    for axis in 0..3 {
        let mut next = BinaryMask::zeros(m.dims, m.spacing);
        let n = m.dims[axis];
        crate::par::fill_indexed(&mut next.data, |i| {
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            let c = [x, y, z];
            let lo = c[axis].saturating_sub(r);
            let hi = (c[axis] + r).min(n - 1);
            for v in lo..=hi {
                let mut q = c;
                q[axis] = v;
                if cur.get(q[0], q[1], q[2]) != 0 {
                    return 1;
                }
            }
            0
        });
        cur = next;
    }
    let _ = nz;
    cur
}

/// Generate the binary tree geometry: mask, centerline, graph, bounding mask.
/// The image field is zero-filled; call [`render_image`] to fill it.
pub fn generate_tree(spec: &PhantomSpec) -> Result<PhantomSample> {
    spec.validate()?;
    for attempt in 0..FIT_RETRIES {
        // shrink branch lengths gradually on retries
        let shrink = 0.96f64.powi((attempt / 4) as i32);
        let tree = build_continuous_tree(spec, attempt, shrink);
        if !tree_fits(spec, &tree) || !tree_separated(&tree) {
            continue;
        }
        let Some((centerline, graph)) = rasterize_graph(spec, &tree) else {
            continue;
        };
        let gt_mask = rasterize_mask(spec, &tree, &centerline);
        let bounding_mask = dilate_chebyshev(&gt_mask, 8);
        return Ok(PhantomSample {
            image: Volume::zeros(spec.dims, [1.0; 3]),
            gt_mask,
            gt_centerline: centerline,
            graph,
            bounding_mask,
        });
    }
    Err(Error::PhantomFit(FIT_RETRIES))
}

/// Render the intensity image: background plus a soft foreground with a
/// one-voxel linear falloff at the mask surface, plus Gaussian noise, clamped
/// to [0, 1].
pub fn render_image(sample: &PhantomSample, spec: &PhantomSpec) -> Volume {
    let edt_in = distance_transform(&sample.gt_mask);
    let inverted = Grid {
        dims: sample.gt_mask.dims,
        spacing: sample.gt_mask.spacing,
        data: sample.gt_mask.data.iter().map(|&v| 1 - v).collect(),
    };
    let edt_out = distance_transform(&inverted);

    let mut img = Volume::zeros(spec.dims, [1.0; 3]);
    let fg = spec.foreground_intensity;
    let bg = spec.background_intensity;
    crate::par::fill_indexed(&mut img.data, |i| {
        let soft = (0.5 + edt_in.data[i] as f64 - edt_out.data[i] as f64).clamp(0.0, 1.0) as f32;
        bg + (fg - bg) * soft
    });

    if spec.noise_sigma > 0.0 {
        let mut rng = rng::sub_rng(spec.seed, &["phantom-noise"]);
        let normal = Normal::new(0.0f64, spec.noise_sigma as f64).unwrap();
        for v in &mut img.data {
            *v = (*v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
        }
    } else {
        for v in &mut img.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
    img
}

/// Generate a full sample, image included.
pub fn generate(spec: &PhantomSpec) -> Result<PhantomSample> {
    let mut sample = generate_tree(spec)?;
    sample.image = render_image(&sample, spec);
    Ok(sample)
}

// ---------------------------------------------------------------------------
// dataset I/O

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestCase {
    pub id: String,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub cases: Vec<ManifestCase>,
}

/// Per-case file names inside a dataset directory.
pub const IMAGE_FILE: &str = "image.mhd";
pub const GT_FILE: &str = "gt.mhd";
pub const CENTERLINE_FILE: &str = "centerline.mhd";
pub const BOUNDS_FILE: &str = "bounds.mhd";
pub const GRAPH_FILE: &str = "graph.json";

fn mask_as_volume(m: &BinaryMask) -> Volume {
    Volume {
        dims: m.dims,
        spacing: m.spacing,
        data: m.data.iter().map(|&v| v as f32).collect(),
    }
}

fn volume_as_mask(v: &Volume) -> Result<BinaryMask> {
    let mut data = Vec::with_capacity(v.data.len());
    for &x in &v.data {
        if x == 0.0 {
            data.push(0);
        } else if x == 1.0 {
            data.push(1);
        } else {
            return Err(Error::Data(format!("mask volume contains non-binary value {x}")));
        }
    }
    Ok(BinaryMask { dims: v.dims, spacing: v.spacing, data })
}

impl PhantomSample {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_mhd(&self.image, dir.join(IMAGE_FILE), ElementType::Float32)?;
        write_mhd(&mask_as_volume(&self.gt_mask), dir.join(GT_FILE), ElementType::Uint8)?;
        write_mhd(
            &mask_as_volume(&self.gt_centerline),
            dir.join(CENTERLINE_FILE),
            ElementType::Uint8,
        )?;
        write_mhd(&mask_as_volume(&self.bounding_mask), dir.join(BOUNDS_FILE), ElementType::Uint8)?;
        self.graph.save_json(dir.join(GRAPH_FILE))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<PhantomSample> {
        let dir = dir.as_ref();
        let image = read_mhd(dir.join(IMAGE_FILE))?;
        let gt_mask = volume_as_mask(&read_mhd(dir.join(GT_FILE))?)?;
        let gt_centerline = volume_as_mask(&read_mhd(dir.join(CENTERLINE_FILE))?)?;
        let bounding_mask = volume_as_mask(&read_mhd(dir.join(BOUNDS_FILE))?)?;
        let graph = CenterlineGraph::load_json(dir.join(GRAPH_FILE))?;
        Ok(PhantomSample { image, gt_mask, gt_centerline, graph, bounding_mask })
    }
}

/// Seed for the i-th case of a dataset derived from a master seed.
pub fn case_seed(master: u64, index: usize) -> u64 {
    let bytes = rng::derive_seed(master, &["phantom-case", &index.to_string()]);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

/// Generate `n` phantoms under `dir/case_XXX/` and write a manifest.
pub fn generate_dataset(spec: &PhantomSpec, n: usize, master_seed: u64, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut cases = Vec::new();
    for i in 0..n {
        let id = format!("case_{i:03}");
        let seed = case_seed(master_seed, i);
        let mut case_spec = spec.clone();
        case_spec.seed = seed;
        let sample = generate(&case_spec)?;
        sample.save(dir.join(&id))?;
        cases.push(ManifestCase { id, seed });
    }
    let manifest = Manifest { cases };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_zero_is_one_branch() {
        let spec = PhantomSpec { depth: 0, ..Default::default() };
        let s = generate_tree(&spec).unwrap();
        assert_eq!(s.graph.branches.len(), 1);
        assert_eq!(s.graph.nodes.len(), 2);
        assert!(s.graph.nodes.iter().all(|n| n.kind == NodeKind::Endpoint));
        assert!(s.graph.branches[0].is_terminal);
    }

    #[test]
    fn depth_three_is_fifteen_branches() {
        let spec = PhantomSpec::default();
        let s = generate_tree(&spec).unwrap();
        assert_eq!(s.graph.branches.len(), 15);
        let bifs = s.graph.nodes.iter().filter(|n| n.kind == NodeKind::Bifurcation).count();
        assert_eq!(bifs, 7);
        assert_eq!(crate::skeleton::terminal_branches(&s.graph).len(), 8);
    }

    #[test]
    fn node_count_matches_binary_tree_formula() {
        let spec = PhantomSpec::default();
        let s = generate_tree(&spec).unwrap();
        let n_branches = s.graph.branches.len();
        assert_eq!(s.graph.nodes.len(), 2 + (n_branches - 1));
    }

    #[test]
    fn centerline_is_inside_mask_and_bounds_contain_mask() {
        let s = generate_tree(&PhantomSpec::default()).unwrap();
        assert!(s.gt_centerline.subset_of(&s.gt_mask));
        assert!(s.gt_mask.subset_of(&s.bounding_mask));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = PhantomSpec { seed: 1234, ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.gt_mask.data, b.gt_mask.data);
        assert_eq!(a.image.data, b.image.data);
        assert_eq!(a.graph.branches.len(), b.graph.branches.len());
        for (x, y) in a.graph.branches.iter().zip(&b.graph.branches) {
            assert_eq!(x.path, y.path);
        }
    }

    #[test]
    fn radii_decrease_with_level() {
        let spec = PhantomSpec::default();
        let s = generate_tree(&spec).unwrap();
        for b in &s.graph.branches {
            let expect = 2.0 * spec.trunk_radius_vox * spec.radius_decay.powi(b.generation as i32);
            assert!((b.mean_diameter_vox - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn render_hits_exact_intensities_without_noise() {
        let spec = PhantomSpec { noise_sigma: 0.0, ..Default::default() };
        let s = generate(&spec).unwrap();
        let edt = distance_transform(&s.gt_mask);
        let mut checked_fg = false;
        for i in 0..s.image.data.len() {
            if edt.data[i] >= 1.5 {
                assert_eq!(s.image.data[i], spec.foreground_intensity);
                checked_fg = true;
            }
        }
        assert!(checked_fg);
        // far corner is pure background
        assert_eq!(s.image.get(0, 0, spec.dims[2] - 1), spec.background_intensity);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let spec = PhantomSpec { noise_sigma: 0.05, dims: [48, 48, 48], ..Default::default() };
        let clean_spec = PhantomSpec { noise_sigma: 0.0, ..spec.clone() };
        let noisy = generate(&spec).unwrap();
        let clean = generate(&clean_spec).unwrap();
        let mut diffs = Vec::new();
        for (a, b) in noisy.image.data.iter().zip(&clean.image.data) {
            // skip voxels clamped at the intensity bounds
            if *a > 0.0 && *a < 1.0 {
                diffs.push((*a - *b) as f64);
            }
        }
        assert!(diffs.len() > 100_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
        let std = var.sqrt();
        assert!((std - 0.05).abs() < 0.005, "std {std}");
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate(&PhantomSpec { dims: [32, 32, 32], depth: 1, ..Default::default() }).unwrap();
        s.save(dir.path()).unwrap();
        let back = PhantomSample::load(dir.path()).unwrap();
        assert_eq!(back.gt_mask.data, s.gt_mask.data);
        assert_eq!(back.image.data, s.image.data);
        assert_eq!(back.graph.branches.len(), s.graph.branches.len());
    }
}
