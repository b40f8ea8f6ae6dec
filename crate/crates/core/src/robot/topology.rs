use super::LinkJoint;

/// Precomputed tree structure used to skip work in gradient and Jacobian passes.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyCache {
    /// Ancestor links of each link, ordered root → link (inclusive).
    pub link_chain: Vec<Vec<usize>>,
    /// `affects[j][e]`: actuated joint `j` moves link `e`.
    pub affects: Vec<Vec<bool>>,
    /// Links driven directly by each actuated joint (mimic links included).
    pub connected_links: Vec<Vec<usize>>,
    /// Actuated joint driving each link's parent joint, if any.
    pub joint_map: Vec<Option<usize>>,
    /// Links grouped by depth in the tree.
    pub level_order: Vec<Vec<usize>>,
    /// Sphere index pairs `(i, j)`, `i < j`, checked for self collision.
    pub self_collision_pairs: Vec<(usize, usize)>,
}

impl TopologyCache {
    pub(crate) fn build(
        link_joints: &[Option<LinkJoint>],
        dof: usize,
        sphere_link: &[usize],
        body_of_link: &[usize],
    ) -> Self {
        let n = link_joints.len();
        let mut link_chain: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut depth = vec![0usize; n];
        for (l, lj) in link_joints.iter().enumerate() {
            let chain = match lj {
                Some(j) => {
                    depth[l] = depth[j.parent] + 1;
                    let mut c = link_chain[j.parent].clone();
                    c.push(l);
                    c
                }
                None => vec![l],
            };
            link_chain.push(chain);
        }

        let joint_map: Vec<Option<usize>> = link_joints
            .iter()
            .map(|lj| lj.as_ref().and_then(|j| j.dof))
            .collect();
        let mut connected_links = vec![Vec::new(); dof];
        for (l, d) in joint_map.iter().enumerate() {
            if let Some(d) = d {
                connected_links[*d].push(l);
            }
        }
        let affects = (0..dof)
            .map(|j| {
                link_chain
                    .iter()
                    .map(|chain| chain.iter().any(|l| joint_map[*l] == Some(j)))
                    .collect()
            })
            .collect();

        let levels = depth.iter().copied().max().map_or(0, |d| d + 1);
        let mut level_order = vec![Vec::new(); levels];
        for (l, d) in depth.iter().enumerate() {
            level_order[*d].push(l);
        }

        let pairs = neighbor_filtered_pairs(link_joints, sphere_link, body_of_link);
        Self {
            link_chain,
            affects,
            connected_links,
            joint_map,
            level_order,
            self_collision_pairs: pairs,
        }
    }
}

/// Parent body of each rigid body (`None` for the root body).
pub(crate) fn body_parents(link_joints: &[Option<LinkJoint>], body_of_link: &[usize]) -> Vec<Option<usize>> {
    let bodies = body_of_link.iter().copied().max().map_or(0, |b| b + 1);
    let mut parent = vec![None; bodies];
    for (l, lj) in link_joints.iter().enumerate() {
        if let Some(j) = lj {
            let (b, pb) = (body_of_link[l], body_of_link[j.parent]);
            if b != pb {
                parent[b] = Some(pb);
            }
        }
    }
    parent
}

/// All sphere pairs except those on the same rigid body or on adjacent bodies.
pub(crate) fn neighbor_filtered_pairs(
    link_joints: &[Option<LinkJoint>],
    sphere_link: &[usize],
    body_of_link: &[usize],
) -> Vec<(usize, usize)> {
    let parent = body_parents(link_joints, body_of_link);
    let mut pairs = Vec::new();
    for i in 0..sphere_link.len() {
        let bi = body_of_link[sphere_link[i]];
        for j in i + 1..sphere_link.len() {
            let bj = body_of_link[sphere_link[j]];
            if bi == bj || parent[bi] == Some(bj) || parent[bj] == Some(bi) {
                continue;
            }
            pairs.push((i, j));
        }
    }
    pairs
}
