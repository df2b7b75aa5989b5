//! Branch-graph decomposition of a thinned skeleton.
//!
//! Nodes are skeleton voxels with a neighbor count other than 2: endpoints
//! (<= 1 neighbor) and bifurcations (>= 3). Adjacent bifurcation voxels are
//! merged into one node whose representative is the lowest linear index.
//! Branches are the maximal degree-2 chains between nodes, oriented away
//! from the root.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{distance_transform, BinaryMask, NEIGHBORS_26};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Endpoint,
    Bifurcation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    /// Representative voxel (lowest linear index of the merged cluster).
    pub xyz: [usize; 3],
    pub kind: NodeKind,
    /// All voxels merged into this node.
    #[serde(skip, default)]
    pub voxels: Vec<[usize; 3]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub node_from: usize,
    pub node_to: usize,
    /// Ordered voxels strictly between the two nodes, proximal to distal.
    pub path: Vec<[usize; 3]>,
    pub generation: u32,
    pub is_terminal: bool,
    pub mean_diameter_vox: f64,
}

impl Branch {
    pub fn length_vox(&self) -> usize {
        self.path.len()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CenterlineGraph {
    pub nodes: Vec<Node>,
    pub branches: Vec<Branch>,
    pub root: usize,
}

impl CenterlineGraph {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Total number of voxels accounted for by branch paths and node voxels.
    pub fn covered_voxels(&self) -> usize {
        let node_vox: usize = self.nodes.iter().map(|n| n.voxels.len().max(1)).sum();
        let path_vox: usize = self.branches.iter().map(|b| b.path.len()).sum();
        node_vox + path_vox
    }
}

/// Ids of the branches whose distal node is an endpoint.
pub fn terminal_branches(g: &CenterlineGraph) -> Vec<usize> {
    g.branches
        .iter()
        .filter(|b| b.is_terminal)
        .map(|b| b.id)
        .collect()
}

const NONE: u32 = u32::MAX;

struct SkeletonIndex {
    dims: [usize; 3],
    /// Degree of each skeleton voxel under 26-adjacency (0 for background).
    degree: Vec<u8>,
    fg: Vec<bool>,
}

impl SkeletonIndex {
    fn new(skel: &BinaryMask) -> Self {
        let fg: Vec<bool> = skel.data.iter().map(|&v| v != 0).collect();
        let mut degree = vec![0u8; fg.len()];
        for i in 0..fg.len() {
            if !fg[i] {
                continue;
            }
            let [x, y, z] = skel.coord(i);
            let mut d = 0u8;
            for off in NEIGHBORS_26 {
                let p = [x as i64 + off[0], y as i64 + off[1], z as i64 + off[2]];
                if skel.in_bounds(p) && fg[skel.index(p[0] as usize, p[1] as usize, p[2] as usize)] {
                    d += 1;
                }
            }
            degree[i] = d;
        }
        SkeletonIndex { dims: skel.dims, degree, fg }
    }

    #[inline]
    fn coord(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    fn neighbors(&self, idx: usize) -> Vec<usize> {
        let [nx, ny, nz] = self.dims;
        let [x, y, z] = self.coord(idx);
        let mut out = Vec::with_capacity(8);
        for off in NEIGHBORS_26 {
            let p = [x as i64 + off[0], y as i64 + off[1], z as i64 + off[2]];
            if p[0] >= 0
                && p[1] >= 0
                && p[2] >= 0
                && (p[0] as usize) < nx
                && (p[1] as usize) < ny
                && (p[2] as usize) < nz
            {
                let ni = p[0] as usize + nx * (p[1] as usize + ny * p[2] as usize);
                if self.fg[ni] {
                    out.push(ni);
                }
            }
        }
        out
    }
}

/// Decompose a thin skeleton into nodes and branches.
///
/// The root becomes the node nearest `root_hint` (ties to the lower id).
/// Branch orientation, terminal flags, and root-relative ordering are set
/// here; generations and diameters are filled by [`assign_generations`] and
/// [`estimate_diameters`].
pub fn build_graph(skel: &BinaryMask, root_hint: [i64; 3]) -> Result<CenterlineGraph> {
    let ix = SkeletonIndex::new(skel);
    let n_fg = ix.fg.iter().filter(|&&v| v).count();
    if n_fg == 0 {
        return Err(Error::EmptySkeleton);
    }

    // Node construction in ascending index order.
    let mut node_of = vec![NONE; ix.fg.len()];
    let mut nodes: Vec<Node> = Vec::new();
    for i in 0..ix.fg.len() {
        if !ix.fg[i] || node_of[i] != NONE {
            continue;
        }
        match ix.degree[i] {
            0 | 1 => {
                let id = nodes.len();
                node_of[i] = id as u32;
                nodes.push(Node {
                    id,
                    xyz: ix.coord(i),
                    kind: NodeKind::Endpoint,
                    voxels: vec![ix.coord(i)],
                });
            }
            2 => {}
            _ => {
                // flood the adjacent cluster of junction voxels
                let id = nodes.len();
                let mut cluster = vec![i];
                node_of[i] = id as u32;
                let mut stack = vec![i];
                while let Some(v) = stack.pop() {
                    for w in ix.neighbors(v) {
                        if ix.degree[w] >= 3 && node_of[w] == NONE {
                            node_of[w] = id as u32;
                            cluster.push(w);
                            stack.push(w);
                        }
                    }
                }
                cluster.sort_unstable();
                nodes.push(Node {
                    id,
                    xyz: ix.coord(cluster[0]),
                    kind: NodeKind::Bifurcation,
                    voxels: cluster.iter().map(|&v| ix.coord(v)).collect(),
                });
            }
        }
    }

    // Branch tracing.
    let mut claimed = vec![false; ix.fg.len()];
    let mut branches: Vec<Branch> = Vec::new();
    let mut direct_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut node_members: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for i in 0..ix.fg.len() {
        if ix.fg[i] && node_of[i] != NONE {
            node_members[node_of[i] as usize].push(i);
        }
    }

    let trace_from_node = |node_id: usize,
                           node_of: &[u32],
                           claimed: &mut [bool],
                           branches: &mut Vec<Branch>,
                           direct_pairs: &mut BTreeSet<(usize, usize)>,
                           members: &[usize]| {
        for &v in members {
            for w in ix.neighbors(v) {
                let w_node = node_of[w];
                if w_node != NONE {
                    // direct node-to-node contact: one zero-length branch per pair
                    let other = w_node as usize;
                    if other != node_id {
                        let key = (node_id.min(other), node_id.max(other));
                        if direct_pairs.insert(key) {
                            branches.push(Branch {
                                id: branches.len(),
                                node_from: node_id,
                                node_to: other,
                                path: Vec::new(),
                                generation: 0,
                                is_terminal: false,
                                mean_diameter_vox: 0.0,
                            });
                        }
                    }
                    continue;
                }
                if claimed[w] {
                    continue;
                }
                // walk the degree-2 chain
                let mut path = vec![w];
                claimed[w] = true;
                let mut prev = v;
                let mut cur = w;
                let end_node;
                loop {
                    let next = ix
                        .neighbors(cur)
                        .into_iter()
                        .find(|&n| n != prev && (node_of[n] != NONE || !claimed[n]));
                    let Some(next) = next else {
                        // chain ends without a node voxel (should not happen
                        // in a well-formed skeleton); close it on this node
                        end_node = node_id;
                        break;
                    };
                    if node_of[next] != NONE {
                        end_node = node_of[next] as usize;
                        break;
                    }
                    claimed[next] = true;
                    path.push(next);
                    prev = cur;
                    cur = next;
                }
                branches.push(Branch {
                    id: branches.len(),
                    node_from: node_id,
                    node_to: end_node,
                    path: path.iter().map(|&p| ix.coord(p)).collect(),
                    generation: 0,
                    is_terminal: false,
                    mean_diameter_vox: 0.0,
                });
            }
        }
    };

    for node_id in 0..nodes.len() {
        let members = node_members[node_id].clone();
        trace_from_node(
            node_id,
            &node_of,
            &mut claimed,
            &mut branches,
            &mut direct_pairs,
            &members,
        );
    }

    // Pure cycles have no natural node; seed one at the lowest index.
    for i in 0..ix.fg.len() {
        if !ix.fg[i] || claimed[i] || node_of[i] != NONE {
            continue;
        }
        let id = nodes.len();
        node_of[i] = id as u32;
        nodes.push(Node {
            id,
            xyz: ix.coord(i),
            kind: NodeKind::Endpoint,
            voxels: vec![ix.coord(i)],
        });
        node_members.push(vec![i]);
        trace_from_node(id, &node_of, &mut claimed, &mut branches, &mut direct_pairs, &[i]);
    }

    // Digital junctions often carry a stray voxel whose two neighbors both
    // sit in the same cluster, which traces as a micro self-loop. Absorb
    // those voxels into the node instead of keeping a fake cycle.
    branches.retain(|b| {
        if b.node_from == b.node_to && b.path.len() <= 2 {
            nodes[b.node_from].voxels.extend(b.path.iter().copied());
            false
        } else {
            true
        }
    });
    for (i, b) in branches.iter_mut().enumerate() {
        b.id = i;
    }

    // Root: node nearest the hint.
    let root = nodes
        .iter()
        .min_by_key(|n| {
            let d = [
                n.xyz[0] as i64 - root_hint[0],
                n.xyz[1] as i64 - root_hint[1],
                n.xyz[2] as i64 - root_hint[2],
            ];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], n.id)
        })
        .map(|n| n.id)
        .unwrap();

    let mut graph = CenterlineGraph { nodes, branches, root };
    orient_from_roots(&mut graph);
    Ok(graph)
}

/// Orient every branch away from its component root and set terminal flags.
fn orient_from_roots(g: &mut CenterlineGraph) {
    let n_nodes = g.nodes.len();
    // adjacency: node -> branch ids
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for b in &g.branches {
        adj[b.node_from].push(b.id);
        adj[b.node_to].push(b.id);
    }

    let mut visited_node = vec![false; n_nodes];
    let mut visited_branch = vec![false; g.branches.len()];

    // Root component first, then remaining components from their lowest node.
    let mut seeds = vec![g.root];
    seeds.extend(0..n_nodes);
    for seed in seeds {
        if visited_node[seed] {
            continue;
        }
        visited_node[seed] = true;
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(n) = queue.pop_front() {
            let mut branch_ids = adj[n].clone();
            branch_ids.sort_unstable();
            for bid in branch_ids {
                if visited_branch[bid] {
                    continue;
                }
                visited_branch[bid] = true;
                let b = &mut g.branches[bid];
                if b.node_from != n {
                    std::mem::swap(&mut b.node_from, &mut b.node_to);
                    b.path.reverse();
                }
                let distal = b.node_to;
                if !visited_node[distal] {
                    visited_node[distal] = true;
                    queue.push_back(distal);
                }
            }
        }
    }

    for b in &mut g.branches {
        b.is_terminal = g.nodes[b.node_to].kind == NodeKind::Endpoint;
    }
}

/// Fill branch generations: the number of bifurcation nodes on the node path
/// from the component root to the branch's proximal node, inclusive.
///
/// Errors if the component containing the root has a cycle.
pub fn assign_generations(mut g: CenterlineGraph) -> Result<CenterlineGraph> {
    let n_nodes = g.nodes.len();
    let mut out_branches: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for b in &g.branches {
        out_branches[b.node_from].push(b.id);
    }

    let mut bif_count = vec![u32::MAX; n_nodes];
    let mut visited_branch = vec![false; g.branches.len()];
    let mut gens = vec![0u32; g.branches.len()];

    // Orientation makes every branch point away from its component root, so a
    // BFS along node_from -> node_to that re-reaches a visited node has found
    // a cycle. That is an error only in the root's own component.
    let mut seeds = vec![g.root];
    seeds.extend(0..n_nodes);
    for seed in seeds {
        if bif_count[seed] != u32::MAX {
            continue;
        }
        bif_count[seed] = u32::from(g.nodes[seed].kind == NodeKind::Bifurcation);
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(n) = queue.pop_front() {
            let mut ids = out_branches[n].clone();
            ids.sort_unstable();
            for bid in ids {
                if visited_branch[bid] {
                    continue;
                }
                visited_branch[bid] = true;
                gens[bid] = bif_count[n];
                let distal = g.branches[bid].node_to;
                if bif_count[distal] != u32::MAX {
                    if seed == g.root {
                        return Err(Error::CycleDetected);
                    }
                    continue;
                }
                bif_count[distal] =
                    bif_count[n] + u32::from(g.nodes[distal].kind == NodeKind::Bifurcation);
                queue.push_back(distal);
            }
        }
    }

    for b in &mut g.branches {
        b.generation = gens[b.id];
    }
    Ok(g)
}

/// Set each branch's mean diameter to twice the mean distance-transform value
/// sampled along its path (or at its node voxels for zero-length branches).
pub fn estimate_diameters(mut g: CenterlineGraph, m: &BinaryMask) -> Result<CenterlineGraph> {
    let edt = distance_transform(m);
    for b in &mut g.branches {
        let samples: Vec<[usize; 3]> = if b.path.is_empty() {
            vec![g.nodes[b.node_from].xyz, g.nodes[b.node_to].xyz]
        } else {
            b.path.clone()
        };
        let mut sum = 0.0f64;
        for &[x, y, z] in &samples {
            let d = edt.get(x, y, z) as f64;
            if d <= 0.0 {
                return Err(Error::GraphLabelMismatch(format!(
                    "branch {} path voxel ({x},{y},{z}) is outside the mask foreground",
                    b.id
                )));
            }
            sum += d;
        }
        b.mean_diameter_vox = 2.0 * sum / samples.len() as f64;
    }
    Ok(g)
}

/// Skeletonize a mask and build its fully annotated branch graph.
pub fn extract_graph(mask: &BinaryMask, root_hint: [i64; 3]) -> Result<CenterlineGraph> {
    let skel = super::skeletonize(mask);
    let g = build_graph(&skel, root_hint)?;
    let g = assign_generations(g)?;
    estimate_diameters(g, mask)
}
