//! Dense Euclidean signed distance field over a workspace box.
//!
//! Built in three stages: surface sites are seeded from the TSDF (scatter or
//! gather), an exact Voronoi assignment is propagated with separable
//! per-axis sweeps (a flood along z, then Maurer lower-envelope stacks along
//! y and x, all on integer squared distances), and interior signs are
//! recovered from the TSDF geometry channel.
//!
//! Cell `(x, y, z)` has its center at `origin + (idx + ½)·voxel_size` and
//! flat index `(z·ny + y)·nx + x`.

use std::io::{Read, Write};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::Shape;
use crate::tsdf::{SparseTsdf, TsdfConfig, TsdfError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Seeding {
    Scatter,
    Gather,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsdfConfig {
    pub origin: Vector3<f64>,
    /// Cell counts along x, y, z.
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub seeding: Seeding,
}

impl EsdfConfig {
    /// Grid covering `[lo, hi]` with cells of edge `voxel_size`.
    pub fn covering(lo: Vector3<f64>, hi: Vector3<f64>, voxel_size: f64, seeding: Seeding) -> Self {
        let n = |i: usize| (((hi[i] - lo[i]) / voxel_size).ceil() as usize).max(1);
        Self {
            origin: lo,
            dims: [n(0), n(1), n(2)],
            voxel_size,
            seeding,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn center(&self, c: [usize; 3]) -> Vector3<f64> {
        self.origin + Vector3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.voxel_size
    }

    /// Cell containing `p`, if inside the box.
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut c = [0; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[i] as f64) {
                return None;
            }
            c[i] = f as usize;
        }
        Some(c)
    }

    fn validate(&self) {
        assert!(self.dims.iter().all(|&d| d >= 1), "ESDF dims must be positive");
        assert!(self.voxel_size > 0.0 && self.voxel_size.is_finite(), "ESDF voxel size must be positive");
    }
}

/// Cells marked as surface sites.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub dims: [usize; 3],
    pub mask: Vec<bool>,
}

impl SeedSet {
    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            mask: vec![false; dims.iter().product()],
        }
    }

    pub fn from_cells(dims: [usize; 3], cells: &[[usize; 3]]) -> Self {
        let mut s = Self::empty(dims);
        for c in cells {
            s.mask[(c[2] * dims[1] + c[1]) * dims[0] + c[0]] = true;
        }
        s
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Surface band threshold on the effective TSDF value.
pub fn surface_threshold(tsdf: &SparseTsdf) -> f64 {
    0.9 * tsdf.config.voxel_size
}

/// Marks the ESDF cell of every TSDF voxel center lying in the surface band.
pub fn seed_scatter(tsdf: &SparseTsdf, config: &EsdfConfig) -> SeedSet {
    config.validate();
    let thr = surface_threshold(tsdf);
    let mut seeds = SeedSet::empty(config.dims);
    for (key, block) in tsdf.blocks() {
        for i in 0..crate::tsdf::BLOCK_VOXELS {
            let Some(d) = block.effective(i) else { continue };
            if d.abs() >= thr {
                continue;
            }
            if let Some(c) = config.cell_of(&tsdf.voxel_center(&key, i)) {
                seeds.mask[config.index(c)] = true;
            }
        }
    }
    seeds
}

/// Offsets of the seven gather probes in units of the ESDF voxel size.
pub const GATHER_STENCIL: [[f64; 3]; 7] = [
    [0.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
    [-0.5, 0.0, 0.0],
    [0.0, 0.5, 0.0],
    [0.0, -0.5, 0.0],
    [0.0, 0.0, 0.5],
    [0.0, 0.0, -0.5],
];

/// Marks each ESDF cell whose center or face-center probes read a TSDF
/// value in the surface band.
pub fn seed_gather(tsdf: &SparseTsdf, config: &EsdfConfig) -> SeedSet {
    config.validate();
    let thr = surface_threshold(tsdf);
    let v = config.voxel_size;
    let mask = (0..config.len())
        .into_par_iter()
        .map(|i| {
            let c = config.center(config.coords(i));
            GATHER_STENCIL.iter().any(|o| {
                let p = c + Vector3::from(*o) * v;
                tsdf.query(&p).is_some_and(|d| d.abs() < thr)
            })
        })
        .collect();
    SeedSet { dims: config.dims, mask }
}

pub fn seed(tsdf: &SparseTsdf, config: &EsdfConfig) -> SeedSet {
    match config.seeding {
        Seeding::Scatter => seed_scatter(tsdf, config),
        Seeding::Gather => seed_gather(tsdf, config),
    }
}

const NO_SITE: [i32; 3] = [-1, -1, -1];

#[derive(Debug, Clone, PartialEq)]
pub struct DenseEsdf {
    pub config: EsdfConfig,
    /// Nearest site of each cell, `[-1, -1, -1]` when there are no seeds.
    pub site: Vec<[i32; 3]>,
    /// Exact squared distance to the site in cells².
    pub sq_dist: Vec<i64>,
    /// Signed distance in voxel units; `+∞` when there are no seeds.
    pub distance: Vec<f64>,
    pub signed: bool,
}

/// Result of a point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsdfQuery {
    /// Meters; `+∞` for an empty field.
    pub distance: f64,
    pub gradient: Vector3<f64>,
    /// The point lay outside the box and was clamped to it.
    pub clamped: bool,
}

/// One candidate of a 1-D lower-envelope problem: position along the line,
/// perpendicular squared distance, and the index of the full site.
#[derive(Clone, Copy)]
struct Candidate {
    pos: i64,
    g: i64,
    id: usize,
}

/// For each `t in 0..n`, the candidate minimizing `g + (t − pos)²`;
/// ties keep the candidate earlier along the line. Candidates must be
/// sorted by strictly increasing position.
fn lower_envelope(cands: &[Candidate], n: usize, out: &mut [Option<usize>]) {
    let mut stack: Vec<Candidate> = Vec::with_capacity(cands.len());
    for &w in cands {
        while stack.len() >= 2 {
            let u = stack[stack.len() - 2];
            let v = stack[stack.len() - 1];
            let a = v.pos - u.pos;
            let b = w.pos - v.pos;
            let c = a + b;
            // v lies strictly above the envelope of u and w everywhere
            if c * v.g - b * u.g - a * w.g - a * b * c > 0 {
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(w);
    }
    if stack.is_empty() {
        out.iter_mut().for_each(|o| *o = None);
        return;
    }
    let f = |c: &Candidate, t: i64| c.g + (t - c.pos) * (t - c.pos);
    let mut l = 0;
    for t in 0..n {
        let ti = t as i64;
        while l + 1 < stack.len() && f(&stack[l + 1], ti) < f(&stack[l], ti) {
            l += 1;
        }
        out[t] = Some(stack[l].id);
    }
}

/// Exact nearest-site assignment. Returns an unsigned field.
pub fn propagate(seeds: &SeedSet, config: &EsdfConfig) -> DenseEsdf {
    config.validate();
    assert_eq!(seeds.dims, config.dims, "seed set dimensions differ from the grid");
    let [nx, ny, nz] = config.dims;
    let n = config.len();
    let idx = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;

    // phase 1: nearest seed along each z column, bidirectional flood
    let mut zsite = vec![-1i32; n];
    let cols: Vec<(usize, Vec<i32>)> = (0..nx * ny)
        .into_par_iter()
        .map(|c| {
            let (x, y) = (c % nx, c / nx);
            let mut col = vec![-1i32; nz];
            let mut last = -1i32;
            for z in 0..nz {
                if seeds.mask[idx(x, y, z)] {
                    last = z as i32;
                }
                col[z] = last;
            }
            let mut next = -1i32;
            for z in (0..nz).rev() {
                if seeds.mask[idx(x, y, z)] {
                    next = z as i32;
                }
                if next >= 0 {
                    let up = next - z as i32;
                    let down = if col[z] >= 0 { z as i32 - col[z] } else { i32::MAX };
                    // ties keep the earlier (lower) site
                    if up < down {
                        col[z] = next;
                    }
                }
            }
            (c, col)
        })
        .collect();
    for (c, col) in cols {
        let (x, y) = (c % nx, c / nx);
        for z in 0..nz {
            zsite[idx(x, y, z)] = col[z];
        }
    }

    // phase 2: along y for each (x, z), sites (y', zsite) → 2-D site per cell
    let mut site_yz = vec![(-1i32, -1i32); n];
    let lines: Vec<(usize, Vec<(i32, i32)>)> = (0..nx * nz)
        .into_par_iter()
        .map(|c| {
            let (x, z) = (c % nx, c / nx);
            let cands: Vec<Candidate> = (0..ny)
                .filter_map(|y| {
                    let s = zsite[idx(x, y, z)];
                    (s >= 0).then(|| {
                        let dz = s as i64 - z as i64;
                        Candidate { pos: y as i64, g: dz * dz, id: y }
                    })
                })
                .collect();
            let mut win = vec![None; ny];
            lower_envelope(&cands, ny, &mut win);
            let line = win
                .iter()
                .map(|w| w.map_or((-1, -1), |y| (y as i32, zsite[idx(x, y, z)])))
                .collect();
            (c, line)
        })
        .collect();
    for (c, line) in lines {
        let (x, z) = (c % nx, c / nx);
        for y in 0..ny {
            site_yz[idx(x, y, z)] = line[y];
        }
    }

    // phase 3: along x for each (y, z)
    let mut site = vec![NO_SITE; n];
    let rows: Vec<(usize, Vec<[i32; 3]>)> = (0..ny * nz)
        .into_par_iter()
        .map(|c| {
            let (y, z) = (c % ny, c / ny);
            let cands: Vec<Candidate> = (0..nx)
                .filter_map(|x| {
                    let (sy, sz) = site_yz[idx(x, y, z)];
                    (sy >= 0).then(|| {
                        let dy = sy as i64 - y as i64;
                        let dz = sz as i64 - z as i64;
                        Candidate { pos: x as i64, g: dy * dy + dz * dz, id: x }
                    })
                })
                .collect();
            let mut win = vec![None; nx];
            lower_envelope(&cands, nx, &mut win);
            let row = win
                .iter()
                .map(|w| {
                    w.map_or(NO_SITE, |x| {
                        let (sy, sz) = site_yz[idx(x, y, z)];
                        [x as i32, sy, sz]
                    })
                })
                .collect();
            (c, row)
        })
        .collect();
    for (c, row) in rows {
        let (y, z) = (c % ny, c / ny);
        for x in 0..nx {
            site[idx(x, y, z)] = row[x];
        }
    }

    let mut sq_dist = vec![i64::MAX; n];
    let mut distance = vec![f64::INFINITY; n];
    for i in 0..n {
        let s = site[i];
        if s == NO_SITE {
            continue;
        }
        let c = config.coords(i);
        let d2: i64 = (0..3).map(|k| (s[k] as i64 - c[k] as i64).pow(2)).sum();
        sq_dist[i] = d2;
        distance[i] = (d2 as f64).sqrt();
    }
    DenseEsdf {
        config: config.clone(),
        site,
        sq_dist,
        distance,
        signed: false,
    }
}

/// Assigns interior signs using the TSDF: the geometry channel one ESDF
/// voxel from the site toward the query, else the combined value at the
/// query itself, else exterior.
pub fn recover_signs(mut esdf: DenseEsdf, tsdf: &SparseTsdf) -> DenseEsdf {
    let cfg = esdf.config.clone();
    let v = cfg.voxel_size;
    let site = &esdf.site;
    esdf.distance.par_iter_mut().enumerate().for_each(|(i, d)| {
        if !d.is_finite() || *d == 0.0 {
            return;
        }
        let s = site[i];
        let q = cfg.center(cfg.coords(i));
        let sc = cfg.center([s[0] as usize, s[1] as usize, s[2] as usize]);
        let dir = (q - sc).normalize();
        let inside = match tsdf.query_geometry(&(sc + dir * v)) {
            Some(g) => g < 0.0,
            None => tsdf.query(&q).is_some_and(|e| e < 0.0),
        };
        if inside {
            *d = -*d;
        }
    });
    esdf.signed = true;
    esdf
}

/// Seeds per the configured strategy, propagates and recovers signs.
pub fn build(tsdf: &SparseTsdf, config: &EsdfConfig) -> DenseEsdf {
    recover_signs(propagate(&seed(tsdf, config), config), tsdf)
}

/// ESDF of analytic primitives stamped into a TSDF with voxels half the
/// ESDF voxel size.
pub fn from_shapes(shapes: &[Shape], config: &EsdfConfig) -> Result<DenseEsdf, TsdfError> {
    let mut tc = TsdfConfig::new(0.5 * config.voxel_size);
    tc.capacity = 1 << 18;
    let mut tsdf = SparseTsdf::new(tc)?;
    for s in shapes {
        tsdf.stamp_primitive(s)?;
    }
    Ok(build(&tsdf, config))
}

/// Nearest-seed squared cell distances by exhaustive search, `i64::MAX`
/// everywhere when there are no seeds. O(cells · seeds).
pub fn brute_force_sq_dist(seeds: &SeedSet) -> Vec<i64> {
    let [nx, ny, _] = seeds.dims;
    let coords = |i: usize| [(i % nx) as i64, ((i / nx) % ny) as i64, (i / (nx * ny)) as i64];
    let sites: Vec<[i64; 3]> = (0..seeds.mask.len()).filter(|i| seeds.mask[*i]).map(coords).collect();
    (0..seeds.mask.len())
        .into_par_iter()
        .map(|i| {
            let c = coords(i);
            sites
                .iter()
                .map(|s| (0..3).map(|k| (s[k] - c[k]).pow(2)).sum::<i64>())
                .min()
                .unwrap_or(i64::MAX)
        })
        .collect()
}

/// Probe spheres that truly overlap an obstacle and how many of them the
/// field also reports as colliding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recall {
    pub colliding: usize,
    pub detected: usize,
}

impl Recall {
    /// Detected fraction; 1 when nothing collides.
    pub fn value(&self) -> f64 {
        if self.colliding == 0 {
            1.0
        } else {
            self.detected as f64 / self.colliding as f64
        }
    }
}

/// Recall of the field against a ground-truth distance for spheres of
/// `radius` centered at `probes`.
pub fn collision_recall(esdf: &DenseEsdf, probes: &[Vector3<f64>], radius: f64, truth: impl Fn(&Vector3<f64>) -> f64) -> Recall {
    let mut r = Recall { colliding: 0, detected: 0 };
    for p in probes {
        if truth(p) < radius {
            r.colliding += 1;
            if esdf.query(p).distance < radius {
                r.detected += 1;
            }
        }
    }
    r
}

impl DenseEsdf {
    pub fn has_seeds(&self) -> bool {
        self.site.first().is_some_and(|s| *s != NO_SITE)
    }

    /// Signed distance of a cell in meters.
    pub fn cell_distance(&self, c: [usize; 3]) -> f64 {
        self.distance[self.config.index(c)] * self.config.voxel_size
    }

    /// Trilinear distance and its analytic gradient. Outside the box the
    /// point is clamped to it; near faces the interpolant is extended from
    /// the boundary cells.
    pub fn query(&self, p: &Vector3<f64>) -> EsdfQuery {
        let cfg = &self.config;
        let v = cfg.voxel_size;
        let mut clamped = false;
        let mut i0 = [0usize; 3];
        let mut i1 = [0usize; 3];
        let mut f = [0.0; 3];
        for k in 0..3 {
            let n = cfg.dims[k];
            let rel = (p[k] - cfg.origin[k]) / v;
            if !(rel >= 0.0 && rel <= n as f64) {
                clamped = true;
            }
            let c = (rel - 0.5).clamp(0.0, (n - 1) as f64);
            if n == 1 {
                f[k] = 0.0;
                continue;
            }
            let lo = (c.floor() as usize).min(n - 2);
            i0[k] = lo;
            i1[k] = lo + 1;
            f[k] = c - lo as f64;
        }
        if !self.has_seeds() {
            return EsdfQuery {
                distance: f64::INFINITY,
                gradient: Vector3::zeros(),
                clamped,
            };
        }
        let val = |x: usize, y: usize, z: usize| self.distance[cfg.index([x, y, z])];
        let mut dist = 0.0;
        let mut grad = Vector3::zeros();
        for corner in 0..8 {
            let b = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let x = if b[0] == 1 { i1[0] } else { i0[0] };
            let y = if b[1] == 1 { i1[1] } else { i0[1] };
            let z = if b[2] == 1 { i1[2] } else { i0[2] };
            let w = |k: usize| if b[k] == 1 { f[k] } else { 1.0 - f[k] };
            let dw = |k: usize| if cfg.dims[k] == 1 { 0.0 } else if b[k] == 1 { 1.0 } else { -1.0 };
            let d = val(x, y, z);
            dist += w(0) * w(1) * w(2) * d;
            grad.x += dw(0) * w(1) * w(2) * d;
            grad.y += w(0) * dw(1) * w(2) * d;
            grad.z += w(0) * w(1) * dw(2) * d;
        }
        // distances are in voxel units; gradient is dimensionless
        EsdfQuery {
            distance: dist * v,
            gradient: grad,
            clamped,
        }
    }
}

pub const ESDF_MAGIC: &[u8; 7] = b"KSESDF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsdfHeader {
    pub origin: [f64; 3],
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

/// Writes the magic, a little-endian `u32` header length, the JSON header
/// and the signed distances in meters as row-major little-endian `f32`.
pub fn write_esdf<W: Write>(mut w: W, esdf: &DenseEsdf) -> std::io::Result<()> {
    let header = serde_json::to_vec(&EsdfHeader {
        origin: esdf.config.origin.into(),
        dims: esdf.config.dims,
        voxel_size: esdf.config.voxel_size,
    })?;
    w.write_all(ESDF_MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(esdf.distance.len() * 4);
    for d in &esdf.distance {
        body.extend_from_slice(&((d * esdf.config.voxel_size) as f32).to_le_bytes());
    }
    w.write_all(&body)
}

/// Reads an exported field back as `(header, distances in meters)`.
pub fn read_esdf<R: Read>(mut r: R) -> std::io::Result<(EsdfHeader, Vec<f32>)> {
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != ESDF_MAGIC {
        return Err(bad("not an ESDF file"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let h: EsdfHeader = serde_json::from_slice(&header)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 4 * h.dims.iter().product::<usize>() {
        return Err(bad("distance payload has the wrong length"));
    }
    Ok((h, body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect()))
}
