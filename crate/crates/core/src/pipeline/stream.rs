//! Out-of-core Lloyd driver.
//!
//! Points are pulled from a [`PointSource`] in contiguous chunks by an
//! ingestion thread that fills one of two buffers while the compute side
//! drains the other. Per-chunk contributions are combined in ascending chunk
//! order and centroids move once per full pass, so a streamed run matches the
//! in-core driver bitwise.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use tempfile::NamedTempFile;

use super::{max_shift, resolve_tiling, FlashEngine, LloydEngine};
use crate::baseline::normalize_block;
use crate::config::{EmptyClusterPolicy, InitMethod, KMeansConfig};
use crate::counters::{CounterSnapshot, Counters};
use crate::element::Element;
use crate::error::{KMeansError, Result};
use crate::format::{sibling_temp, AssignmentsHeader, DatasetFile};
use crate::init::{batch_rng, random_distinct};
use crate::matrix::{Assignments, Centroids, DataMatrix};
use crate::objective::block_objective;
use crate::stats::{max_abs, AccumGrid, ClusterStats};

/// Random-access row reader.
pub trait PointSource<T>: Send {
    fn batch(&self) -> usize;
    fn points(&self) -> usize;
    fn dims(&self) -> usize;
    /// Reads rows `start..start + rows` of batch element `b` into `dst`.
    fn read_rows(&mut self, b: usize, start: usize, rows: usize, dst: &mut [T]) -> Result<()>;
}

impl<T: Element> PointSource<T> for DatasetFile<T> {
    fn batch(&self) -> usize {
        self.header().batch
    }

    fn points(&self) -> usize {
        self.header().points
    }

    fn dims(&self) -> usize {
        self.header().dims
    }

    fn read_rows(&mut self, b: usize, start: usize, rows: usize, dst: &mut [T]) -> Result<()> {
        DatasetFile::read_rows(self, b, start, rows, dst)
    }
}

/// Serves rows of a resident matrix.
#[derive(Debug, Clone, Copy)]
pub struct MemorySource<'a, T> {
    pub data: &'a DataMatrix<T>,
}

impl<T: Element> PointSource<T> for MemorySource<'_, T> {
    fn batch(&self) -> usize {
        self.data.batch()
    }

    fn points(&self) -> usize {
        self.data.points()
    }

    fn dims(&self) -> usize {
        self.data.dims()
    }

    fn read_rows(&mut self, b: usize, start: usize, rows: usize, dst: &mut [T]) -> Result<()> {
        let d = self.data.dims();
        if start + rows > self.data.points() {
            return Err(KMeansError::contract("row range outside the dataset"));
        }
        dst[..rows * d].copy_from_slice(&self.data.batch_slice(b)[start * d..(start + rows) * d]);
        Ok(())
    }
}

/// Sleeps for `delay` before every read, simulating a slow device.
#[derive(Debug)]
pub struct DelayedSource<S> {
    pub inner: S,
    pub delay: Duration,
}

impl<T, S: PointSource<T>> PointSource<T> for DelayedSource<S> {
    fn batch(&self) -> usize {
        self.inner.batch()
    }

    fn points(&self) -> usize {
        self.inner.points()
    }

    fn dims(&self) -> usize {
        self.inner.dims()
    }

    fn read_rows(&mut self, b: usize, start: usize, rows: usize, dst: &mut [T]) -> Result<()> {
        thread::sleep(self.delay);
        self.inner.read_rows(b, start, rows, dst)
    }
}

/// Byte gauge for resident point buffers.
#[derive(Debug, Default)]
pub struct ResidentTracker {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl ResidentTracker {
    pub fn current(&self) -> usize {
        self.current.load(AtomicOrdering::Relaxed)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(AtomicOrdering::Relaxed)
    }

    fn alloc<T: Element>(&self, len: usize) -> TrackedBuf<'_, T> {
        let bytes = len * T::BYTES;
        let now = self.current.fetch_add(bytes, AtomicOrdering::Relaxed) + bytes;
        self.peak.fetch_max(now, AtomicOrdering::Relaxed);
        TrackedBuf {
            data: vec![T::zero(); len],
            tracker: self,
        }
    }
}

struct TrackedBuf<'a, T> {
    data: Vec<T>,
    tracker: &'a ResidentTracker,
}

impl<T> Drop for TrackedBuf<'_, T> {
    fn drop(&mut self) {
        let bytes = self.data.len() * std::mem::size_of::<T>();
        self.tracker.current.fetch_sub(bytes, AtomicOrdering::Relaxed);
    }
}

/// A source split into contiguous chunks of `chunk_points` rows.
#[derive(Debug)]
pub struct ChunkStream<S> {
    source: S,
    chunk_points: usize,
    resident: ResidentTracker,
}

impl<S> ChunkStream<S> {
    pub fn new<T>(source: S, chunk_points: usize) -> Result<Self>
    where
        S: PointSource<T>,
    {
        if chunk_points == 0 {
            return Err(KMeansError::invalid("chunk_points must be at least 1"));
        }
        Ok(Self {
            source,
            chunk_points,
            resident: ResidentTracker::default(),
        })
    }

    pub fn chunk_points(&self) -> usize {
        self.chunk_points
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn into_source(self) -> S {
        self.source
    }

    /// Peak bytes of point data held at once, across all passes so far.
    pub fn peak_resident_bytes(&self) -> usize {
        self.resident.peak()
    }

    /// `(start, rows)` of every chunk in a pass of `points` rows.
    pub fn ranges(&self, points: usize) -> Vec<(usize, usize)> {
        (0..points)
            .step_by(self.chunk_points)
            .map(|s| (s, self.chunk_points.min(points - s)))
            .collect()
    }

    /// One pass over batch element `b`: `consume(chunk_index, start, rows)`
    /// sees every chunk in ascending order while the next one is being read.
    pub fn pass<T, F>(&mut self, b: usize, mut consume: F) -> Result<()>
    where
        T: Element,
        S: PointSource<T>,
        F: FnMut(usize, usize, &[T]) -> Result<()>,
    {
        let (n, d) = (self.source.points(), self.source.dims());
        let ranges = self.ranges(n);
        let slots = ranges.len().min(2);
        let cap = self.chunk_points.min(n) * d;
        let source = &mut self.source;
        let resident = &self.resident;
        thread::scope(|scope| {
            let (full_tx, full_rx) = mpsc::sync_channel::<Result<(usize, TrackedBuf<'_, T>)>>(slots);
            let (free_tx, free_rx) = mpsc::channel::<TrackedBuf<'_, T>>();
            for _ in 0..slots {
                free_tx.send(resident.alloc(cap)).expect("receiver alive");
            }
            let ranges_ref = &ranges;
            scope.spawn(move || {
                for (idx, &(start, rows)) in ranges_ref.iter().enumerate() {
                    let Ok(mut buf) = free_rx.recv() else {
                        return;
                    };
                    let item = match source.read_rows(b, start, rows, &mut buf.data[..rows * d]) {
                        Ok(()) => Ok((idx, buf)),
                        Err(e) => Err(KMeansError::Ingest {
                            chunk: idx,
                            source: Box::new(e),
                        }),
                    };
                    let failed = item.is_err();
                    if full_tx.send(item).is_err() || failed {
                        return;
                    }
                }
            });
            for _ in 0..ranges.len() {
                let (idx, buf) = match full_rx.recv() {
                    Ok(item) => item?,
                    Err(_) => return Err(KMeansError::contract("ingestion thread stopped early")),
                };
                let (start, rows) = ranges[idx];
                consume(idx, start, &buf.data[..rows * d])?;
                // The ingestion thread may already be gone after its last chunk.
                let _ = free_tx.send(buf);
            }
            Ok(())
        })
    }
}

/// Per-chunk contribution to an iteration's cluster stats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialStats {
    pub stats: ClusterStats,
    pub points_seen: u64,
}

impl PartialStats {
    pub fn zeros(clusters: usize, dims: usize, grid: AccumGrid) -> Self {
        Self {
            stats: ClusterStats::zeros(clusters, dims, vec![grid]),
            points_seen: 0,
        }
    }

    pub fn combine(&mut self, other: &PartialStats) -> Result<()> {
        self.stats.combine(&other.stats)?;
        self.points_seen += other.points_seen;
        Ok(())
    }
}

/// Chunk-addressed storage for assignments of a streamed run.
pub trait AssignmentStore {
    fn write_chunk(&mut self, b: usize, start: usize, ids: &[u32]) -> Result<()>;
    fn read_chunk(&mut self, b: usize, start: usize, dst: &mut [u32]) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct MemoryAssignmentStore {
    batch: usize,
    points: usize,
    ids: Vec<u32>,
}

impl MemoryAssignmentStore {
    pub fn new(batch: usize, points: usize) -> Self {
        Self {
            batch,
            points,
            ids: vec![0; batch * points],
        }
    }

    pub fn into_assignments(self, clusters: usize) -> Result<Assignments> {
        Assignments::new(self.batch, self.points, clusters, self.ids)
    }
}

impl AssignmentStore for MemoryAssignmentStore {
    fn write_chunk(&mut self, b: usize, start: usize, ids: &[u32]) -> Result<()> {
        let at = b * self.points + start;
        self.ids[at..at + ids.len()].copy_from_slice(ids);
        Ok(())
    }

    fn read_chunk(&mut self, b: usize, start: usize, dst: &mut [u32]) -> Result<()> {
        let at = b * self.points + start;
        dst.copy_from_slice(&self.ids[at..at + dst.len()]);
        Ok(())
    }
}

/// `FKA1` file written in place chunk by chunk and renamed into its final
/// path by [`FileAssignmentStore::finish`].
#[derive(Debug)]
pub struct FileAssignmentStore {
    file: NamedTempFile,
    path: PathBuf,
    points: usize,
    scratch: Vec<u8>,
}

impl FileAssignmentStore {
    pub fn create(path: &Path, batch: usize, points: usize) -> Result<Self> {
        let header = AssignmentsHeader { batch, points };
        let mut file = sibling_temp(path)?;
        let f = file.as_file_mut();
        f.write_all(&header.encode()).map_err(|e| KMeansError::io(path, e))?;
        f.set_len(header.file_bytes()).map_err(|e| KMeansError::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
            points,
            scratch: Vec::new(),
        })
    }

    fn seek(&mut self, b: usize, start: usize) -> Result<&mut File> {
        let offset = 32 + 4 * (b * self.points + start) as u64;
        let f = self.file.as_file_mut();
        f.seek(SeekFrom::Start(offset)).map_err(|e| KMeansError::io(&self.path, e))?;
        Ok(f)
    }

    pub fn finish(self) -> Result<()> {
        self.file
            .as_file()
            .sync_all()
            .map_err(|e| KMeansError::io(&self.path, e))?;
        self.file
            .persist(&self.path)
            .map_err(|e| KMeansError::io(&self.path, e.error))?;
        Ok(())
    }
}

impl AssignmentStore for FileAssignmentStore {
    fn write_chunk(&mut self, b: usize, start: usize, ids: &[u32]) -> Result<()> {
        let mut bytes = std::mem::take(&mut self.scratch);
        bytes.clear();
        bytes.extend(ids.iter().flat_map(|v| v.to_le_bytes()));
        let path = self.path.clone();
        let res = self.seek(b, start)?.write_all(&bytes).map_err(|e| KMeansError::io(path, e));
        self.scratch = bytes;
        res
    }

    fn read_chunk(&mut self, b: usize, start: usize, dst: &mut [u32]) -> Result<()> {
        let mut bytes = std::mem::take(&mut self.scratch);
        bytes.resize(dst.len() * 4, 0);
        let path = self.path.clone();
        let res = self.seek(b, start)?.read_exact(&mut bytes).map_err(|e| KMeansError::io(path, e));
        for (v, c) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = u32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        self.scratch = bytes;
        res
    }
}

/// A reseed candidate. `Ord` puts the preferred candidate last: larger
/// distance first, then lower index.
#[derive(Debug, Clone)]
struct Farthest<T> {
    dist: T,
    index: usize,
    row: Vec<T>,
}

impl<T: Element> Ord for Farthest<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .as_f64()
            .total_cmp(&other.dist.as_f64())
            .then(other.index.cmp(&self.index))
    }
}

impl<T: Element> PartialOrd for Farthest<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Element> PartialEq for Farthest<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Element> Eq for Farthest<T> {}

/// Keeps the `cap` best reseed candidates seen so far.
struct FarthestTracker<T> {
    cap: usize,
    heap: BinaryHeap<std::cmp::Reverse<Farthest<T>>>,
}

impl<T: Element> FarthestTracker<T> {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            heap: BinaryHeap::with_capacity(cap + 1),
        }
    }

    fn offer(&mut self, index: usize, dist: T, row: &[T]) {
        if self.cap == 0 {
            return;
        }
        if self.heap.len() == self.cap {
            let worst = &self.heap.peek().expect("non-empty").0;
            let probe = Farthest {
                dist,
                index,
                row: Vec::new(),
            };
            if probe <= *worst {
                return;
            }
            self.heap.pop();
        }
        self.heap.push(std::cmp::Reverse(Farthest {
            dist,
            index,
            row: row.to_vec(),
        }));
    }

    /// Best first.
    fn into_sorted(self) -> Vec<Farthest<T>> {
        let mut v: Vec<_> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_by(|a, b| b.cmp(a));
        v
    }
}

/// Outcome of one streamed pass over one batch element.
struct PassOutcome<T> {
    centroids: Vec<T>,
    objective: f64,
    unchanged: bool,
    empty: Vec<usize>,
}

/// Streamed Lloyd state shared by every pass of a run.
struct Streamer<'a, S, A> {
    stream: &'a mut ChunkStream<S>,
    store: &'a mut A,
    engine: FlashEngine,
    counters: &'a Counters,
    policy: EmptyClusterPolicy,
}

impl<S, A: AssignmentStore> Streamer<'_, S, A> {
    /// Largest magnitude per batch element, for the accumulation grids.
    fn grids<T: Element>(&mut self) -> Result<Vec<AccumGrid>>
    where
        S: PointSource<T>,
    {
        let (batch, d) = (self.stream.source.batch(), self.stream.source.dims());
        let counters = self.counters;
        let mut grids = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut m = 0.0f64;
            self.stream.pass::<T, _>(b, |_, _, chunk| {
                m = m.max(max_abs(chunk));
                counters.add_streamed((chunk.len() / d) as u64);
                Ok(())
            })?;
            grids.push(AccumGrid::from_max_abs(m));
        }
        Ok(grids)
    }

    fn iterate<T: Element>(
        &mut self,
        b: usize,
        centroids: &[T],
        grid: AccumGrid,
        compare_previous: bool,
    ) -> Result<PassOutcome<T>>
    where
        S: PointSource<T>,
    {
        let d = self.stream.source.dims();
        let k = centroids.len() / d;
        let mut total = PartialStats::zeros(k, d, grid);
        let mut objective = 0.0f64;
        let mut unchanged = compare_previous;
        let mut previous = Vec::new();
        let mut farthest = FarthestTracker::new(match self.policy {
            EmptyClusterPolicy::Keep => 0,
            EmptyClusterPolicy::ReseedFarthest => k,
        });
        let (engine, counters, store) = (&self.engine, self.counters, &mut *self.store);
        self.stream.pass::<T, _>(b, |_, start, chunk| {
            let rows = chunk.len() / d;
            let (assign, min_dists) = engine.assign(chunk, centroids, d, counters)?;
            objective = block_objective(chunk, centroids, &assign, d, objective);
            let mut part = PartialStats::zeros(k, d, grid);
            {
                let (sums, counts) = part.stats.batch_parts_mut(0);
                engine.update(chunk, &assign, d, grid, sums, counts, counters)?;
            }
            part.points_seen = rows as u64;
            total.combine(&part)?;
            if unchanged {
                previous.resize(rows, 0);
                store.read_chunk(b, start, &mut previous)?;
                unchanged = previous == assign;
            }
            store.write_chunk(b, start, &assign)?;
            for (i, &m) in min_dists.iter().enumerate() {
                farthest.offer(start + i, m, &chunk[i * d..(i + 1) * d]);
            }
            counters.add_streamed(rows as u64);
            Ok(())
        })?;
        let mut next = centroids.to_vec();
        let empty = normalize_block(&total.stats, 0, centroids, &mut next);
        if self.policy == EmptyClusterPolicy::ReseedFarthest && !empty.is_empty() {
            for (&kk, cand) in empty.iter().zip(farthest.into_sorted()) {
                next[kk * d..(kk + 1) * d].copy_from_slice(&cand.row);
            }
        }
        Ok(PassOutcome {
            centroids: next,
            objective,
            unchanged,
            empty,
        })
    }
}

/// Result of a streamed run. Assignments live in the store passed to it.
#[derive(Debug, Clone)]
pub struct StreamRunResult<T> {
    pub centroids: Centroids<T>,
    pub objective_history: Vec<Vec<f64>>,
    pub iterations_run: usize,
    pub counters: CounterSnapshot,
    pub peak_resident_bytes: usize,
}

impl<T> StreamRunResult<T> {
    pub fn final_objective(&self) -> Vec<f64> {
        self.objective_history
            .iter()
            .map(|h| *h.last().expect("at least one iteration"))
            .collect()
    }
}

/// Output of [`out_of_core_iteration`].
#[derive(Debug, Clone)]
pub struct StreamIteration<T> {
    pub centroids: Centroids<T>,
    /// Objective of the assignment made against the input centroids.
    pub objective: Vec<f64>,
    /// Per batch element, clusters that received no points.
    pub empty: Vec<Vec<usize>>,
}

fn check_stream<T: Element, S: PointSource<T>>(stream: &ChunkStream<S>, c: &Centroids<T>) -> Result<()> {
    let s = &stream.source;
    if s.batch() != c.batch() || s.dims() != c.dims() {
        return Err(KMeansError::contract(format!(
            "centroids are {}x{}x{}, stream is {}x{}x{}",
            c.batch(),
            c.clusters(),
            c.dims(),
            s.batch(),
            s.points(),
            s.dims()
        )));
    }
    if c.clusters() > s.points() {
        return Err(KMeansError::contract("more centroids than streamed points"));
    }
    Ok(())
}

fn engine_for<T: Element>(cfg: &KMeansConfig, points: usize, dims: usize, batch: usize) -> FlashEngine {
    FlashEngine {
        tiling: resolve_tiling::<T>(cfg, points, dims, batch),
        merge_mode: cfg.merge_mode,
    }
}

/// One Lloyd iteration over a stream, writing assignments to `store`.
///
/// The accumulation grid needs every point's magnitude before the first sum,
/// so a scan pass precedes the iteration and is counted in
/// `elements_streamed`.
pub fn out_of_core_iteration<T, S, A>(
    stream: &mut ChunkStream<S>,
    c: &Centroids<T>,
    cfg: &KMeansConfig,
    store: &mut A,
    counters: &Counters,
) -> Result<StreamIteration<T>>
where
    T: Element,
    S: PointSource<T>,
    A: AssignmentStore,
{
    check_stream(stream, c)?;
    let (n, d, batch) = (stream.source.points(), c.dims(), c.batch());
    let mut st = Streamer {
        engine: engine_for::<T>(cfg, n, d, batch),
        policy: cfg.empty_cluster_policy,
        stream,
        store,
        counters,
    };
    let grids = st.grids::<T>()?;
    let mut centroids = Vec::with_capacity(c.as_slice().len());
    let mut objective = Vec::with_capacity(batch);
    let mut empty = Vec::with_capacity(batch);
    for (b, &grid) in grids.iter().enumerate() {
        let out = st.iterate(b, c.batch_slice(b), grid, false)?;
        centroids.extend_from_slice(&out.centroids);
        objective.push(out.objective);
        empty.push(out.empty);
    }
    Ok(StreamIteration {
        centroids: Centroids::new(batch, c.clusters(), d, centroids)?,
        objective,
        empty,
    })
}

/// Seeds centroids from a stream by reading the sampled rows directly.
pub fn stream_init_centroids<T: Element, S: PointSource<T>>(
    stream: &mut ChunkStream<S>,
    clusters: usize,
    seed: u64,
    method: InitMethod,
) -> Result<Centroids<T>> {
    let s = &mut stream.source;
    let (n, d) = (s.points(), s.dims());
    if clusters == 0 || clusters > n {
        return Err(KMeansError::invalid(format!(
            "cannot seed K={clusters} centroids from N={n} points"
        )));
    }
    if method != InitMethod::RandomDistinct {
        return Err(KMeansError::invalid(
            "streamed runs support random_distinct seeding only",
        ));
    }
    let mut data = vec![T::zero(); s.batch() * clusters * d];
    for b in 0..s.batch() {
        let picks = random_distinct(&mut batch_rng(seed, b), n, clusters);
        for (k, i) in picks.into_iter().enumerate() {
            let at = (b * clusters + k) * d;
            s.read_rows(b, i, 1, &mut data[at..at + d])?;
        }
    }
    Centroids::new(s.batch(), clusters, d, data)
}

/// Full Lloyd run over a stream.
pub fn chunked_stream_run<T, S, A>(
    stream: &mut ChunkStream<S>,
    cfg: &KMeansConfig,
    store: &mut A,
) -> Result<StreamRunResult<T>>
where
    T: Element,
    S: PointSource<T>,
    A: AssignmentStore,
{
    cfg.validate(stream.source.points())?;
    let init = stream_init_centroids(stream, cfg.clusters, cfg.seed, cfg.init)?;
    chunked_stream_run_from(stream, &init, cfg, store)
}

/// Full Lloyd run over a stream from explicit starting centroids.
pub fn chunked_stream_run_from<T, S, A>(
    stream: &mut ChunkStream<S>,
    init: &Centroids<T>,
    cfg: &KMeansConfig,
    store: &mut A,
) -> Result<StreamRunResult<T>>
where
    T: Element,
    S: PointSource<T>,
    A: AssignmentStore,
{
    cfg.validate(stream.source.points())?;
    check_stream(stream, init)?;
    let counters = Counters::new();
    let (n, d, batch, k) = (stream.source.points(), init.dims(), init.batch(), init.clusters());
    let mut st = Streamer {
        engine: engine_for::<T>(cfg, n, d, batch),
        policy: cfg.empty_cluster_policy,
        stream,
        store,
        counters: &counters,
    };
    let grids = st.grids::<T>()?;
    let mut centroids = Vec::with_capacity(init.as_slice().len());
    let mut history = Vec::with_capacity(batch);
    for (b, &grid) in grids.iter().enumerate() {
        let mut c = init.batch_slice(b).to_vec();
        let mut h = Vec::new();
        loop {
            let out = st.iterate(b, &c, grid, !h.is_empty())?;
            h.push(out.objective);
            let shift = max_shift(&c, &out.centroids, d);
            c = out.centroids;
            if out.unchanged || shift <= cfg.shift_tol || h.len() >= cfg.max_iters {
                break;
            }
        }
        centroids.extend_from_slice(&c);
        history.push(h);
    }
    let peak_resident_bytes = st.stream.peak_resident_bytes();
    Ok(StreamRunResult {
        centroids: Centroids::new(batch, k, d, centroids)?,
        iterations_run: history.iter().map(Vec::len).max().unwrap_or(0),
        objective_history: history,
        counters: counters.snapshot(),
        peak_resident_bytes,
    })
}
