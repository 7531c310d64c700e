//! Out-of-core construction of the additive octree.
//!
//! Every point walks down from the root and is stored in the first node
//! whose occupancy grid (cell edge = node spacing) still has its cell free.
//! Rejected points continue into the child octant. Nodes at `max_depth`
//! accept everything.
//!
//! Because the outcome for a point only depends on the points that reached
//! the same node before it, subtrees can be built independently as long as
//! input order is preserved inside each subtree. Large inputs therefore go
//! through streaming passes: the top `STREAM_STRIDE` levels are decided with
//! fixed-size bit grids while rejected points are spilled, in order, into one
//! chunk file per subtree. Chunks that fit in `flush_threshold` points are
//! then built in memory, larger ones get another streaming pass.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::hash::{BuildHasherDefault, Hasher};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::code::{child_bounds, octant_of};
use super::manifest::{
    order_key, tile_attributes, IndexManifest, OctreeNode, MANIFEST_FILE, MANIFEST_VERSION,
    NODES_DIR,
};
use super::{tile, IndexError, NodeCode};
use crate::ingest::{IngestError, SourceSummary};
use crate::point::{Aabb, PointRecord};

/// Levels decided per streaming pass. 8^3 = 512 chunk files at most.
const STREAM_STRIDE: u32 = 3;
/// Occupancy grids above this many cells fall back to hash sets.
const MAX_BITGRID_CELLS: u64 = 1 << 26;
const SPILL_FLUSH_BYTES: usize = 64 * 1024;
const SPILL_RECORD_SIZE: usize = 30;
const TMP_DIR: &str = ".build-chunks";

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    /// Root spacing is the cubified root diagonal divided by this.
    pub root_spacing_divisor: f64,
    /// Explicit root spacing, overriding the divisor.
    pub root_spacing: Option<f64>,
    /// Points buffered per node before its tile is flushed to disk.
    pub node_capacity: usize,
    pub max_depth: u32,
    /// Inputs above this size are sharded first and flagged `entwineMode`.
    pub chunk_threshold: u64,
    /// Largest subtree, in points, that is built fully in memory.
    pub flush_threshold: usize,
    /// Worker threads for independent subtrees; 0 means available parallelism.
    pub threads: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            root_spacing_divisor: 250.0,
            root_spacing: None,
            node_capacity: 20_000,
            max_depth: 16,
            chunk_threshold: 100_000_000,
            flush_threshold: 500_000,
            threads: 1,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        let bad = |m: &str| Err(IndexError::InvalidConfig(m.to_string()));
        if !(self.root_spacing_divisor > 0.0 && self.root_spacing_divisor.is_finite()) {
            return bad("root_spacing_divisor must be > 0");
        }
        if let Some(s) = self.root_spacing {
            if !(s > 0.0 && s.is_finite()) {
                return bad("root_spacing must be > 0");
            }
        }
        if self.node_capacity < 1000 {
            return bad("node_capacity must be at least 1000");
        }
        if self.max_depth > 30 {
            return bad("max_depth must be at most 30");
        }
        if self.flush_threshold == 0 {
            return bad("flush_threshold must be positive");
        }
        Ok(())
    }

    fn thread_count(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }
}

/// Shared, read-only geometry of the hierarchy.
#[derive(Debug, Clone, Copy)]
struct Grid {
    root_spacing: f64,
    cells: u64,
    max_depth: u32,
}

impl Grid {
    fn new(root: &Aabb, root_spacing: f64, max_depth: u32) -> Self {
        let edge = root.extent()[0];
        let cells = ((edge / root_spacing) - 1e-9).ceil().max(1.0) as u64;
        Grid {
            root_spacing,
            cells: cells.min(1 << 20),
            max_depth,
        }
    }

    #[inline]
    fn spacing(&self, level: u32) -> f64 {
        self.root_spacing / (1u64 << level) as f64
    }

    #[inline]
    fn cell(&self, b: &Aabb, level: u32, p: [f64; 3]) -> u64 {
        let s = self.spacing(level);
        let idx = |i: usize| {
            let v = ((p[i] - b.min[i]) / s).floor();
            if v <= 0.0 {
                0
            } else {
                (v as u64).min(self.cells - 1)
            }
        };
        (idx(0) * self.cells + idx(1)) * self.cells + idx(2)
    }

    fn new_occupancy(&self) -> Occupancy {
        let n = self.cells * self.cells * self.cells;
        if n <= MAX_BITGRID_CELLS {
            Occupancy::Bits(vec![0u64; n.div_ceil(64) as usize])
        } else {
            Occupancy::Set(CellSet::default())
        }
    }
}

#[derive(Default)]
struct CellHasher(u64);

impl Hasher for CellHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 = (self.0.rotate_left(5) ^ *b as u64).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
        }
    }
    fn write_u64(&mut self, v: u64) {
        self.0 = (self.0.rotate_left(5) ^ v).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }
}

type CellSet = HashSet<u64, BuildHasherDefault<CellHasher>>;

enum Occupancy {
    Bits(Vec<u64>),
    Set(CellSet),
}

impl Occupancy {
    /// Marks the cell and reports whether it was free.
    #[inline]
    fn claim(&mut self, key: u64) -> bool {
        match self {
            Occupancy::Bits(words) => {
                let (w, bit) = ((key / 64) as usize, 1u64 << (key % 64));
                let free = words[w] & bit == 0;
                words[w] |= bit;
                free
            }
            Occupancy::Set(set) => set.insert(key),
        }
    }
}

fn io_err(e: io::Error) -> IndexError {
    IndexError::from(e)
}

/// Builds the index for `points` under `out`, writing `manifest.json` and
/// one `nodes/<code>.bin` tile per node.
pub fn build_index<I>(
    points: I,
    summary: &SourceSummary,
    out: &Path,
    cfg: &BuildConfig,
) -> Result<IndexManifest, IndexError>
where
    I: IntoIterator<Item = Result<PointRecord, IngestError>>,
{
    cfg.validate()?;
    if summary.point_count == 0 {
        return Err(IndexError::EmptySource);
    }
    let root = summary.aabb.cubify();
    let root_spacing = cfg
        .root_spacing
        .unwrap_or_else(|| root.diagonal() / cfg.root_spacing_divisor);
    let grid = Grid::new(&root, root_spacing, cfg.max_depth);
    let entwine_mode = summary.point_count > cfg.chunk_threshold;

    let nodes_dir = out.join(NODES_DIR);
    if nodes_dir.exists() {
        fs::remove_dir_all(&nodes_dir).map_err(io_err)?;
    }
    fs::create_dir_all(&nodes_dir).map_err(io_err)?;
    let tmp = out.join(TMP_DIR);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err)?;
    }

    let ctx = Ctx {
        grid,
        nodes_dir,
        tmp: tmp.clone(),
        node_capacity: cfg.node_capacity,
        flush_threshold: cfg.flush_threshold,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.thread_count())
        .build()
        .map_err(|e| IndexError::InvalidConfig(e.to_string()))?;

    let mut seen = 0u64;
    let mut outside = None;
    let checked = points.into_iter().map(|r| {
        r.inspect(|p| {
            seen += 1;
            if outside.is_none() && !root.contains(p.position()) {
                outside = Some(p.position());
            }
        })
    });

    let stream_first = entwine_mode || summary.point_count > cfg.flush_threshold as u64;
    let mut entries = if stream_first {
        let mut pass = StreamPass::new(&ctx, NodeCode::root(), root);
        for p in checked {
            pass.push(p?)?;
        }
        let (mut top, chunks) = pass.finish()?;
        check_source(seen, summary.point_count, outside)?;
        top.extend(pool.install(|| process_chunks(&ctx, chunks))?);
        top
    } else {
        let mut tree = MemTree::new(&ctx, NodeCode::root(), root);
        for p in checked {
            tree.insert(p?);
        }
        check_source(seen, summary.point_count, outside)?;
        tree.write_tiles(&ctx)?
    };

    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err)?;
    }

    entries.sort_by(|a, b| order_key(&a.code).cmp(&order_key(&b.code)));
    let total_points: u64 = entries.iter().map(|n| n.count as u64).sum();
    for n in entries.iter().filter(|n| n.overflow) {
        tracing::warn!(node = %n.code, "depth limit reached; sampling grid waived");
    }
    let manifest = IndexManifest {
        version: MANIFEST_VERSION.to_string(),
        aabb: root,
        root_spacing,
        total_points,
        attributes: tile_attributes(),
        entwine_mode,
        nodes: entries,
    };
    manifest.validate()?;
    fs::write(out.join(MANIFEST_FILE), manifest.to_json()).map_err(io_err)?;
    Ok(manifest)
}

fn check_source(seen: u64, claimed: u64, outside: Option<[f64; 3]>) -> Result<(), IndexError> {
    if seen != claimed {
        return Err(IndexError::SourceMismatch(format!(
            "summary claims {claimed} points, stream yielded {seen}"
        )));
    }
    if let Some(p) = outside {
        return Err(IndexError::SourceMismatch(format!(
            "point {p:?} lies outside the summary bounds"
        )));
    }
    Ok(())
}

struct Ctx {
    grid: Grid,
    nodes_dir: PathBuf,
    tmp: PathBuf,
    node_capacity: usize,
    flush_threshold: usize,
}

impl Ctx {
    fn tile_path(&self, code: &NodeCode) -> PathBuf {
        self.nodes_dir.join(format!("{code}.bin"))
    }

    fn chunk_path(&self, code: &NodeCode) -> PathBuf {
        self.tmp.join(format!("{code}.pts"))
    }
}

/// Spilled subtree waiting to be built.
struct Chunk {
    code: NodeCode,
    bounds: Aabb,
    count: u64,
}

fn process_chunks(ctx: &Ctx, chunks: Vec<Chunk>) -> Result<Vec<OctreeNode>, IndexError> {
    let per_chunk: Vec<Result<Vec<OctreeNode>, IndexError>> = chunks
        .into_par_iter()
        .map(|c| process_chunk(ctx, c))
        .collect();
    let mut out = Vec::new();
    for r in per_chunk {
        out.extend(r?);
    }
    Ok(out)
}

fn process_chunk(ctx: &Ctx, chunk: Chunk) -> Result<Vec<OctreeNode>, IndexError> {
    let path = ctx.chunk_path(&chunk.code);
    let reader = SpillReader::open(&path)?;
    let out = if chunk.count as usize <= ctx.flush_threshold {
        let mut tree = MemTree::new(ctx, chunk.code, chunk.bounds);
        for p in reader {
            tree.insert(p?);
        }
        tree.write_tiles(ctx)?
    } else {
        let mut pass = StreamPass::new(ctx, chunk.code, chunk.bounds);
        for p in reader {
            pass.push(p?)?;
        }
        let (mut top, chunks) = pass.finish()?;
        fs::remove_file(&path).map_err(io_err)?;
        top.extend(process_chunks(ctx, chunks)?);
        return Ok(top);
    };
    fs::remove_file(&path).map_err(io_err)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// In-memory subtree

struct MemNode {
    bounds: Aabb,
    occupied: CellSet,
    points: Vec<PointRecord>,
    children: [Option<Box<MemNode>>; 8],
    overflow: bool,
}

impl MemNode {
    fn new(bounds: Aabb) -> Self {
        MemNode {
            bounds,
            occupied: CellSet::default(),
            points: Vec::new(),
            children: Default::default(),
            overflow: false,
        }
    }
}

struct MemTree {
    grid: Grid,
    code: NodeCode,
    root: MemNode,
}

impl MemTree {
    fn new(ctx: &Ctx, code: NodeCode, bounds: Aabb) -> Self {
        MemTree {
            grid: ctx.grid,
            code,
            root: MemNode::new(bounds),
        }
    }

    fn insert(&mut self, p: PointRecord) {
        let pos = p.position();
        let mut level = self.code.level();
        let mut node = &mut self.root;
        loop {
            let cell = self.grid.cell(&node.bounds, level, pos);
            if level >= self.grid.max_depth {
                if !node.occupied.insert(cell) {
                    node.overflow = true;
                }
                node.points.push(p);
                return;
            }
            if node.occupied.insert(cell) {
                node.points.push(p);
                return;
            }
            let o = octant_of(&node.bounds, pos) as usize;
            let bounds = node.bounds;
            node = node.children[o]
                .get_or_insert_with(|| Box::new(MemNode::new(child_bounds(&bounds, o as u8))));
            level += 1;
        }
    }

    fn write_tiles(self, ctx: &Ctx) -> Result<Vec<OctreeNode>, IndexError> {
        let mut entries = Vec::new();
        let mut stack = vec![(self.code, Box::new(self.root))];
        let mut buf = Vec::new();
        while let Some((code, mut node)) = stack.pop() {
            buf.clear();
            for p in &node.points {
                tile::encode_into(&mut buf, p, node.bounds.min);
            }
            fs::write(ctx.tile_path(&code), &buf).map_err(io_err)?;
            entries.push(OctreeNode {
                code: code.clone(),
                count: node.points.len() as u32,
                aabb: node.bounds,
                overflow: node.overflow,
            });
            for (o, child) in node.children.iter_mut().enumerate() {
                if let Some(c) = child.take() {
                    stack.push((code.child(o as u8), c));
                }
            }
        }
        Ok(entries)
    }
}

// ---------------------------------------------------------------------------
// Streaming pass

struct StreamNode {
    bounds: Aabb,
    occupied: Occupancy,
    count: u64,
    buf: Vec<u8>,
    buffered: usize,
    children: [Option<Box<StreamNode>>; 8],
    overflow: bool,
}

struct Spill {
    bounds: Aabb,
    count: u64,
    buf: Vec<u8>,
}

struct StreamPass<'a> {
    ctx: &'a Ctx,
    code: NodeCode,
    /// Last level decided in this pass; deeper points are spilled.
    bottom: u32,
    root: StreamNode,
    spills: HashMap<NodeCode, Spill>,
}

impl<'a> StreamPass<'a> {
    fn new(ctx: &'a Ctx, code: NodeCode, bounds: Aabb) -> Self {
        let level = code.level();
        let bottom = (level + STREAM_STRIDE - 1).min(ctx.grid.max_depth);
        StreamPass {
            ctx,
            code,
            bottom,
            root: StreamNode::new(bounds, &ctx.grid),
            spills: HashMap::new(),
        }
    }

    fn push(&mut self, p: PointRecord) -> Result<(), IndexError> {
        let pos = p.position();
        let grid = self.ctx.grid;
        let mut level = self.code.level();
        let mut node = &mut self.root;
        let mut path: Vec<u8> = Vec::with_capacity(STREAM_STRIDE as usize);
        loop {
            let cell = grid.cell(&node.bounds, level, pos);
            let free = node.occupied.claim(cell);
            if free || level >= grid.max_depth {
                if !free {
                    node.overflow = true;
                }
                node.count += 1;
                tile::encode_into(&mut node.buf, &p, node.bounds.min);
                node.buffered += 1;
                if node.buffered >= self.ctx.node_capacity {
                    let code = path_code(&self.code, &path);
                    flush_append(&self.ctx.tile_path(&code), &mut node.buf)?;
                    node.buffered = 0;
                }
                return Ok(());
            }
            let o = octant_of(&node.bounds, pos);
            let child_b = child_bounds(&node.bounds, o);
            path.push(o);
            if level == self.bottom {
                let code = path_code(&self.code, &path);
                let ctx = self.ctx;
                let spill = self.spills.entry(code.clone()).or_insert_with(|| Spill {
                    bounds: child_b,
                    count: 0,
                    buf: Vec::new(),
                });
                spill.count += 1;
                write_spill_record(&mut spill.buf, &p);
                if spill.buf.len() >= SPILL_FLUSH_BYTES {
                    fs::create_dir_all(&ctx.tmp).map_err(io_err)?;
                    flush_append(&ctx.chunk_path(&code), &mut spill.buf)?;
                }
                return Ok(());
            }
            node = node.children[o as usize]
                .get_or_insert_with(|| Box::new(StreamNode::new(child_b, &grid)));
            level += 1;
        }
    }

    /// Flushes every buffer and returns the finished node entries and the
    /// spilled chunks in code order.
    fn finish(mut self) -> Result<(Vec<OctreeNode>, Vec<Chunk>), IndexError> {
        let mut entries = Vec::new();
        let root = std::mem::replace(&mut self.root, StreamNode::empty());
        let mut stack = vec![(self.code.clone(), Box::new(root))];
        while let Some((code, mut node)) = stack.pop() {
            flush_append(&self.ctx.tile_path(&code), &mut node.buf)?;
            entries.push(OctreeNode {
                code: code.clone(),
                count: u32::try_from(node.count).map_err(|_| {
                    IndexError::SourceMismatch(format!("node {code} exceeds u32 points"))
                })?,
                aabb: node.bounds,
                overflow: node.overflow,
            });
            for (o, child) in node.children.iter_mut().enumerate() {
                if let Some(c) = child.take() {
                    stack.push((code.child(o as u8), c));
                }
            }
        }
        let mut chunks = Vec::with_capacity(self.spills.len());
        if !self.spills.is_empty() {
            fs::create_dir_all(&self.ctx.tmp).map_err(io_err)?;
        }
        for (code, mut spill) in self.spills.drain() {
            flush_append(&self.ctx.chunk_path(&code), &mut spill.buf)?;
            chunks.push(Chunk {
                code,
                bounds: spill.bounds,
                count: spill.count,
            });
        }
        chunks.sort_by(|a, b| a.code.cmp(&b.code));
        Ok((entries, chunks))
    }
}

impl StreamNode {
    fn new(bounds: Aabb, grid: &Grid) -> Self {
        StreamNode {
            bounds,
            occupied: grid.new_occupancy(),
            count: 0,
            buf: Vec::new(),
            buffered: 0,
            children: Default::default(),
            overflow: false,
        }
    }

    fn empty() -> Self {
        StreamNode {
            bounds: Aabb::empty(),
            occupied: Occupancy::Set(CellSet::default()),
            count: 0,
            buf: Vec::new(),
            buffered: 0,
            children: Default::default(),
            overflow: false,
        }
    }
}

fn path_code(base: &NodeCode, path: &[u8]) -> NodeCode {
    path.iter().fold(base.clone(), |c, o| c.child(*o))
}

fn flush_append(path: &Path, buf: &mut Vec<u8>) -> Result<(), IndexError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    f.write_all(buf).map_err(io_err)?;
    buf.clear();
    Ok(())
}

fn write_spill_record(out: &mut Vec<u8>, p: &PointRecord) {
    out.extend_from_slice(&p.x.to_le_bytes());
    out.extend_from_slice(&p.y.to_le_bytes());
    out.extend_from_slice(&p.z.to_le_bytes());
    out.extend_from_slice(&[p.r, p.g, p.b]);
    out.extend_from_slice(&p.intensity.to_le_bytes());
    out.push(p.classification);
}

struct SpillReader {
    inner: BufReader<File>,
    rec: [u8; SPILL_RECORD_SIZE],
}

impl SpillReader {
    fn open(path: &Path) -> Result<Self, IndexError> {
        Ok(SpillReader {
            inner: BufReader::with_capacity(1 << 16, File::open(path).map_err(io_err)?),
            rec: [0; SPILL_RECORD_SIZE],
        })
    }
}

impl Iterator for SpillReader {
    type Item = Result<PointRecord, IndexError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.inner.read_exact(&mut self.rec) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return None,
            Err(e) => return Some(Err(io_err(e))),
        }
        let r = &self.rec;
        let f = |o: usize| f64::from_le_bytes(r[o..o + 8].try_into().unwrap());
        Some(Ok(PointRecord {
            x: f(0),
            y: f(8),
            z: f(16),
            r: r[24],
            g: r[25],
            b: r[26],
            intensity: u16::from_le_bytes([r[27], r[28]]),
            classification: r[29],
        }))
    }
}
