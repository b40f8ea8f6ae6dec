//! Block-sparse TSDF with a fused depth channel and an analytic geometry
//! channel.
//!
//! Space is divided into voxels of edge `voxel_size`; voxel `i` covers
//! `[i·v, (i+1)·v)` with its center at `(i + ½)·v`. Voxels are grouped into
//! 8³ blocks addressed through an open-addressing hash table.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Shape;
use crate::pose::Pose;

pub mod io;

pub const BLOCK_EDGE: usize = 8;
pub const BLOCK_VOXELS: usize = BLOCK_EDGE * BLOCK_EDGE * BLOCK_EDGE;

pub type BlockKey = [i32; 3];

#[derive(Debug, Error, PartialEq)]
pub enum TsdfError {
    #[error("block pool exhausted: {required} blocks required, {available} available")]
    PoolExhausted { required: usize, available: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite primitive")]
    InvalidShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfConfig {
    pub voxel_size: f64,
    pub truncation: f64,
    pub alpha_time: f64,
    pub alpha_frustum: f64,
    pub weight_threshold: f64,
    pub capacity: usize,
}

impl TsdfConfig {
    /// Defaults: truncation 4 voxels, decay 0.99 / 0.5, threshold 1.
    pub fn new(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            truncation: 4.0 * voxel_size,
            alpha_time: 0.99,
            alpha_frustum: 0.5,
            weight_threshold: 1.0,
            capacity: 1 << 16,
        }
    }

    fn validate(&self) -> Result<(), TsdfError> {
        let bad = |m: &str| Err(TsdfError::InvalidConfig(m.into()));
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad("voxel_size must be positive");
        }
        if !(self.truncation >= self.voxel_size && self.truncation.is_finite()) {
            return bad("truncation must be at least one voxel");
        }
        for a in [self.alpha_time, self.alpha_frustum] {
            if !(a > 0.0 && a <= 1.0) {
                return bad("decay factors must lie in (0, 1]");
            }
        }
        if !(self.weight_threshold >= 0.0) {
            return bad("weight_threshold must be non-negative");
        }
        if self.capacity == 0 {
            return bad("capacity must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelBlock {
    pub depth_sum: Box<[f64; BLOCK_VOXELS]>,
    pub depth_wt: Box<[f64; BLOCK_VOXELS]>,
    pub geom_sdf: Box<[f64; BLOCK_VOXELS]>,
}

impl Default for VoxelBlock {
    fn default() -> Self {
        Self {
            depth_sum: Box::new([0.0; BLOCK_VOXELS]),
            depth_wt: Box::new([0.0; BLOCK_VOXELS]),
            geom_sdf: Box::new([f64::INFINITY; BLOCK_VOXELS]),
        }
    }
}

impl VoxelBlock {
    pub fn total_weight(&self) -> f64 {
        self.depth_wt.iter().sum()
    }

    pub fn has_geometry(&self) -> bool {
        self.geom_sdf.iter().any(|g| g.is_finite())
    }

    /// Effective signed distance of voxel `i`, `None` when both channels are unset.
    pub fn effective(&self, i: usize) -> Option<f64> {
        let depth = (self.depth_wt[i] > 0.0).then(|| self.depth_sum[i] / self.depth_wt[i]);
        let geom = self.geom_sdf[i].is_finite().then_some(self.geom_sdf[i]);
        match (depth, geom) {
            (Some(d), Some(g)) => Some(d.min(g)),
            (d, g) => d.or(g),
        }
    }
}

pub fn voxel_index(local: [usize; 3]) -> usize {
    (local[2] * BLOCK_EDGE + local[1]) * BLOCK_EDGE + local[0]
}

pub fn voxel_local(i: usize) -> [usize; 3] {
    [i % BLOCK_EDGE, (i / BLOCK_EDGE) % BLOCK_EDGE, i / (BLOCK_EDGE * BLOCK_EDGE)]
}

/// World center of voxel `i` of block `key`.
pub fn voxel_center(voxel_size: f64, key: &BlockKey, i: usize) -> Vector3<f64> {
    let l = voxel_local(i);
    let e = BLOCK_EDGE as f64;
    Vector3::new(
        (key[0] as f64 * e + l[0] as f64 + 0.5) * voxel_size,
        (key[1] as f64 * e + l[1] as f64 + 0.5) * voxel_size,
        (key[2] as f64 * e + l[2] as f64 + 0.5) * voxel_size,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Empty,
    Tombstone,
    Live(BlockKey, usize),
}

/// Open-addressing map from block keys to pool indices.
#[derive(Debug, Clone)]
pub struct BlockHashTable {
    slots: Vec<Slot>,
    live: usize,
    tombstones: usize,
    pub free_list: Vec<usize>,
}

fn spatial_hash(k: &BlockKey) -> u64 {
    let x = (k[0] as i64 as u64).wrapping_mul(73_856_093);
    let y = (k[1] as i64 as u64).wrapping_mul(19_349_663);
    let z = (k[2] as i64 as u64).wrapping_mul(83_492_791);
    x ^ y ^ z
}

impl BlockHashTable {
    fn with_slots(n: usize) -> Self {
        Self {
            slots: vec![Slot::Empty; n],
            live: 0,
            tombstones: 0,
            free_list: Vec::new(),
        }
    }

    fn home(&self, k: &BlockKey) -> usize {
        (spatial_hash(k) % self.slots.len() as u64) as usize
    }

    pub fn get(&self, k: &BlockKey) -> Option<usize> {
        let n = self.slots.len();
        let mut s = self.home(k);
        for _ in 0..n {
            match self.slots[s] {
                Slot::Empty => return None,
                Slot::Live(key, idx) if key == *k => return Some(idx),
                _ => s = (s + 1) % n,
            }
        }
        None
    }

    fn insert(&mut self, k: BlockKey, idx: usize) {
        debug_assert!(self.get(&k).is_none());
        if (self.live + self.tombstones + 1) * 2 > self.slots.len() {
            self.rehash();
        }
        let n = self.slots.len();
        let mut s = self.home(&k);
        loop {
            match self.slots[s] {
                Slot::Empty => break,
                Slot::Tombstone => {
                    self.tombstones -= 1;
                    break;
                }
                Slot::Live(..) => s = (s + 1) % n,
            }
        }
        self.slots[s] = Slot::Live(k, idx);
        self.live += 1;
    }

    fn remove(&mut self, k: &BlockKey) -> Option<usize> {
        let n = self.slots.len();
        let mut s = self.home(k);
        for _ in 0..n {
            match self.slots[s] {
                Slot::Empty => return None,
                Slot::Live(key, idx) if key == *k => {
                    self.slots[s] = Slot::Tombstone;
                    self.live -= 1;
                    self.tombstones += 1;
                    return Some(idx);
                }
                _ => s = (s + 1) % n,
            }
        }
        None
    }

    fn rehash(&mut self) {
        let entries: Vec<(BlockKey, usize)> = self.entries().collect();
        let n = (self.slots.len()).max(4 * (entries.len() + 1));
        let free = std::mem::take(&mut self.free_list);
        *self = Self::with_slots(n);
        self.free_list = free;
        for (k, i) in entries {
            self.insert(k, i);
        }
    }

    /// Live `(key, pool index)` pairs in slot order.
    pub fn entries(&self) -> impl Iterator<Item = (BlockKey, usize)> + '_ {
        self.slots.iter().filter_map(|s| match s {
            Slot::Live(k, i) => Some((*k, *i)),
            _ => None,
        })
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }
}

/// Pinhole intrinsics; the camera looks along its +z axis with x right and
/// y down, and pixel `(u, v)` has its center at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), TsdfError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(TsdfError::InvalidCamera(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(TsdfError::InvalidCamera("principal point must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(TsdfError::InvalidCamera("image must be non-empty".into()));
        }
        Ok(())
    }

    /// Camera-frame ray direction through pixel `(u, v)` with unit z.
    pub fn ray(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new((u as f64 - self.cx) / self.fx, (v as f64 - self.cy) / self.fy, 1.0)
    }

    /// Nearest pixel of a camera-frame point in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(usize, usize)> {
        if p.z <= 0.0 {
            return None;
        }
        let u = (self.fx * p.x / p.z + self.cx).round();
        let v = (self.fy * p.y / p.z + self.cy).round();
        (u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64).then_some((u as usize, v as usize))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world.
    pub pose: Pose,
    /// Row-major depth along the optical axis; 0 or non-finite is invalid.
    pub depth: Vec<f32>,
}

impl DepthFrame {
    pub fn depth_at(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.depth[v * self.intrinsics.width + u] as f64;
        (d.is_finite() && d > 0.0).then_some(d)
    }

    fn validate(&self) -> Result<(), TsdfError> {
        self.intrinsics.validate()?;
        let n = self.intrinsics.width * self.intrinsics.height;
        if self.depth.len() != n {
            return Err(TsdfError::InvalidCamera(format!("{} depths for a {n}-pixel image", self.depth.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SparseTsdf {
    pub config: TsdfConfig,
    table: BlockHashTable,
    pool: Vec<VoxelBlock>,
    /// Key of the block occupying each pool index, `None` when free.
    owners: Vec<Option<BlockKey>>,
    peak_blocks: usize,
}

impl SparseTsdf {
    pub fn new(config: TsdfConfig) -> Result<Self, TsdfError> {
        config.validate()?;
        let slots = (2 * config.capacity).clamp(64, 1 << 22);
        Ok(Self {
            config,
            table: BlockHashTable::with_slots(slots),
            pool: Vec::new(),
            owners: Vec::new(),
            peak_blocks: 0,
        })
    }

    pub fn allocated_blocks(&self) -> usize {
        self.table.len()
    }

    /// Largest number of simultaneously allocated blocks so far.
    pub fn peak_blocks(&self) -> usize {
        self.peak_blocks
    }

    pub fn table(&self) -> &BlockHashTable {
        &self.table
    }

    pub fn block(&self, k: &BlockKey) -> Option<&VoxelBlock> {
        self.table.get(k).map(|i| &self.pool[i])
    }

    pub fn block_index(&self, k: &BlockKey) -> Option<usize> {
        self.table.get(k)
    }

    /// Live blocks sorted by key.
    pub fn blocks(&self) -> Vec<(BlockKey, &VoxelBlock)> {
        let mut v: Vec<(BlockKey, &VoxelBlock)> = self.table.entries().map(|(k, i)| (k, &self.pool[i])).collect();
        v.sort_by_key(|e| e.0);
        v
    }

    pub fn voxel_of(&self, p: &Vector3<f64>) -> [i64; 3] {
        let v = self.config.voxel_size;
        [(p.x / v).floor() as i64, (p.y / v).floor() as i64, (p.z / v).floor() as i64]
    }

    pub fn block_of_voxel(g: [i64; 3]) -> (BlockKey, usize) {
        let e = BLOCK_EDGE as i64;
        let key = [g[0].div_euclid(e) as i32, g[1].div_euclid(e) as i32, g[2].div_euclid(e) as i32];
        let local = [g[0].rem_euclid(e) as usize, g[1].rem_euclid(e) as usize, g[2].rem_euclid(e) as usize];
        (key, voxel_index(local))
    }

    pub fn voxel_center(&self, key: &BlockKey, i: usize) -> Vector3<f64> {
        voxel_center(self.config.voxel_size, key, i)
    }

    fn block_center(&self, key: &BlockKey) -> (Vector3<f64>, f64) {
        let edge = BLOCK_EDGE as f64 * self.config.voxel_size;
        let c = Vector3::new(key[0] as f64 + 0.5, key[1] as f64 + 0.5, key[2] as f64 + 0.5) * edge;
        (c, 0.5 * edge * 3f64.sqrt())
    }

    /// Allocates every missing key, reusing recycled pool indices first.
    fn allocate(&mut self, keys: &BTreeSet<BlockKey>) -> Result<(), TsdfError> {
        let missing: Vec<BlockKey> = keys.iter().filter(|k| self.table.get(k).is_none()).copied().collect();
        let available = self.config.capacity - self.table.len();
        if missing.len() > available {
            return Err(TsdfError::PoolExhausted {
                required: missing.len(),
                available,
            });
        }
        for k in missing {
            let idx = match self.table.free_list.pop() {
                Some(i) => {
                    self.pool[i] = VoxelBlock::default();
                    self.owners[i] = Some(k);
                    i
                }
                None => {
                    self.pool.push(VoxelBlock::default());
                    self.owners.push(Some(k));
                    self.pool.len() - 1
                }
            };
            self.table.insert(k, idx);
        }
        self.peak_blocks = self.peak_blocks.max(self.table.len());
        Ok(())
    }

    /// Fuses one depth frame; returns the number of blocks touched.
    pub fn integrate_depth(&mut self, frame: &DepthFrame) -> Result<usize, TsdfError> {
        frame.validate()?;
        let cam = &frame.intrinsics;
        let trunc = self.config.truncation;
        let v = self.config.voxel_size;

        // block discovery along each valid ray, deduplicated
        let n_samples = ((2.0 * trunc / (4.0 * v)).ceil() as usize + 1).max(3);
        let mut keys = BTreeSet::new();
        for py in 0..cam.height {
            for px in 0..cam.width {
                let Some(z) = frame.depth_at(px, py) else { continue };
                let ray = cam.ray(px, py);
                for s in 0..n_samples {
                    let depth = z - trunc + 2.0 * trunc * s as f64 / (n_samples - 1) as f64;
                    if depth <= 0.0 {
                        continue;
                    }
                    let w = frame.pose.transform_point(&(ray * depth));
                    keys.insert(Self::block_of_voxel(self.voxel_of(&w)).0);
                }
            }
        }
        if keys.is_empty() {
            return Ok(0);
        }
        self.allocate(&keys)?;

        // voxel-centric update; each block is owned by one worker
        let touched: Vec<bool> = {
            let mut t = vec![false; self.pool.len()];
            for k in &keys {
                t[self.table.get(k).unwrap()] = true;
            }
            t
        };
        let owners = &self.owners;
        self.pool.par_iter_mut().enumerate().filter(|(i, _)| touched[*i]).for_each(|(i, block)| {
            let key = owners[i].unwrap();
            for vi in 0..BLOCK_VOXELS {
                let c = frame.pose.inverse_transform_point(&voxel_center(v, &key, vi));
                let Some((u, r)) = cam.project(&c) else { continue };
                let Some(zp) = frame.depth_at(u, r) else { continue };
                let sdf = zp - c.z;
                if sdf < -trunc {
                    continue;
                }
                let w = ((cam.fx * v / c.z) * (cam.fy * v / c.z)).max(1.0);
                block.depth_sum[vi] += w * sdf.min(trunc);
                block.depth_wt[vi] += w;
            }
        });
        Ok(keys.len())
    }

    /// Writes an analytic primitive into the geometry channel.
    pub fn stamp_primitive(&mut self, shape: &Shape) -> Result<usize, TsdfError> {
        if !shape.is_finite() {
            return Err(TsdfError::InvalidShape);
        }
        let trunc = self.config.truncation;
        let (lo, hi) = shape.aabb();
        let lo = Self::block_of_voxel(self.voxel_of(&lo.add_scalar(-trunc))).0;
        let hi = Self::block_of_voxel(self.voxel_of(&hi.add_scalar(trunc))).0;
        let mut keys = BTreeSet::new();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let k = [x, y, z];
                    let (c, r) = self.block_center(&k);
                    if shape.sdf(&c).abs() <= trunc + r {
                        keys.insert(k);
                    }
                }
            }
        }
        self.allocate(&keys)?;
        for k in &keys {
            let i = self.table.get(k).unwrap();
            for vi in 0..BLOCK_VOXELS {
                let d = shape.sdf(&self.voxel_center(k, vi));
                let g = &mut self.pool[i].geom_sdf[vi];
                *g = g.min(d);
            }
        }
        Ok(keys.len())
    }

    /// Multiplies depth weights (and their sums, so the stored mean is kept)
    /// by `α_t`, and additionally by `α_f` for
    /// blocks whose bounding sphere meets the camera frustum.
    pub fn decay_weights(&mut self, cam: &CameraIntrinsics, pose: &Pose) -> Result<(), TsdfError> {
        cam.validate()?;
        let (at, af) = (self.config.alpha_time, self.config.alpha_frustum);
        let entries: Vec<(BlockKey, usize)> = self.table.entries().collect();
        for (k, i) in entries {
            let (c, r) = self.block_center(&k);
            let factor = if sphere_in_frustum(cam, pose, &c, r) { at * af } else { at };
            for w in self.pool[i].depth_wt.iter_mut() {
                *w *= factor;
            }
            for s in self.pool[i].depth_sum.iter_mut() {
                *s *= factor;
            }
        }
        Ok(())
    }

    /// Frees blocks whose depth weight fell below the threshold and which
    /// hold no stamped geometry.
    pub fn recycle_blocks(&mut self) -> usize {
        let mut entries: Vec<(BlockKey, usize)> = self.table.entries().collect();
        entries.sort();
        let mut n = 0;
        for (k, i) in entries {
            let b = &self.pool[i];
            if b.total_weight() < self.config.weight_threshold && !b.has_geometry() {
                self.table.remove(&k);
                self.table.free_list.push(i);
                self.owners[i] = None;
                self.pool[i] = VoxelBlock::default();
                n += 1;
            }
        }
        n
    }

    /// Effective signed distance at the voxel containing `p`.
    pub fn query(&self, p: &Vector3<f64>) -> Option<f64> {
        let (k, i) = Self::block_of_voxel(self.voxel_of(p));
        self.block(&k).and_then(|b| b.effective(i))
    }

    /// Geometry-channel value at the voxel containing `p`.
    pub fn query_geometry(&self, p: &Vector3<f64>) -> Option<f64> {
        let (k, i) = Self::block_of_voxel(self.voxel_of(p));
        self.block(&k).map(|b| b.geom_sdf[i]).filter(|g| g.is_finite())
    }

    /// Full structural check of the hash table and pool.
    pub fn audit(&self) -> Result<(), String> {
        let mut seen_keys = BTreeSet::new();
        let mut seen_idx = BTreeSet::new();
        for (k, i) in self.table.entries() {
            if !seen_keys.insert(k) {
                return Err(format!("duplicate key {k:?}"));
            }
            if !seen_idx.insert(i) {
                return Err(format!("pool index {i} reachable twice"));
            }
            if self.owners.get(i) != Some(&Some(k)) {
                return Err(format!("owner mismatch at {i}"));
            }
            if self.table.get(&k) != Some(i) {
                return Err(format!("key {k:?} not reachable by probing"));
            }
        }
        let free: BTreeSet<usize> = self.table.free_list.iter().copied().collect();
        if free.len() != self.table.free_list.len() {
            return Err("duplicate free-list entry".into());
        }
        if free.intersection(&seen_idx).next().is_some() {
            return Err("free list overlaps live blocks".into());
        }
        if free.len() + seen_idx.len() != self.pool.len() {
            return Err("pool indices are neither live nor free".into());
        }
        if self.table.len() > self.config.capacity {
            return Err("capacity exceeded".into());
        }
        for b in &self.pool {
            if b.depth_wt.iter().any(|w| *w < 0.0) {
                return Err("negative weight".into());
            }
        }
        Ok(())
    }
}

/// Conservative bounding-sphere test against the four side planes and the
/// image plane of the camera frustum.
pub fn sphere_in_frustum(cam: &CameraIntrinsics, pose: &Pose, center: &Vector3<f64>, radius: f64) -> bool {
    let c = pose.inverse_transform_point(center);
    if c.z + radius <= 0.0 {
        return false;
    }
    let (u0, u1) = (-0.5, cam.width as f64 - 0.5);
    let (v0, v1) = (-0.5, cam.height as f64 - 0.5);
    // inward normals of the planes x/z = (u − cx)/fx etc.
    let planes = [
        Vector3::new(1.0, 0.0, -(u0 - cam.cx) / cam.fx),
        Vector3::new(-1.0, 0.0, (u1 - cam.cx) / cam.fx),
        Vector3::new(0.0, 1.0, -(v0 - cam.cy) / cam.fy),
        Vector3::new(0.0, -1.0, (v1 - cam.cy) / cam.fy),
    ];
    planes.iter().all(|n| n.dot(&c) / n.norm() >= -radius)
}
