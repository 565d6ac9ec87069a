//! Versioned parameter vectors shared between SGD worker threads.
//!
//! A [`ParameterVector`] is a dense `f32` payload plus a small header of
//! atomic metadata: the update sequence number `t`, the number of active
//! readers, a stale flag set once a newer version has been published, and a
//! deleted flag guarding payload reclamation.
//!
//! Published versions are installed in a [`VersionSlot`] by compare-and-swap.
//! Readers obtain the latest version through [`VersionSlot::acquire_latest`],
//! which registers the read before validating that the version is not stale.
//! A stale version whose reader count drops to zero has its payload returned
//! to the owning [`PayloadPool`] by whichever thread observes that state
//! first. Headers are never freed while the slot is alive, so a thread that
//! raced with reclamation can still touch the header of a recycled version.
//!
//! The reader/reclaimer handshake relies on a total order over four accesses
//! (reader increment, reader stale check, publisher stale store, reclaimer
//! reader-count load); those use `SeqCst`. Payload publication uses
//! release/acquire on the slot pointer.

use std::fmt;
use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_queue::SegQueue;
use crossbeam_utils::CachePadded;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Standard deviation of the initial parameter distribution.
pub const INIT_STD_DEV: f32 = 0.01;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParamError {
    #[error("parameter dimension must be at least 1")]
    ZeroDimension,
    #[error("length mismatch: expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("payload has been reclaimed")]
    Reclaimed,
}

/// Point-in-time view of a pool's allocation census.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CensusSnapshot {
    pub allocations: u64,
    pub reclamations: u64,
    pub live_payloads: usize,
    pub live_bytes: usize,
    pub max_live_payloads: usize,
}

/// Free list and allocation census for payloads of one fixed length.
///
/// Every payload handed out by [`PayloadPool::take`] counts as live until it
/// is given back, whether through reclamation of a stale version, discard of
/// an unpublished candidate, or drop of its owning vector.
pub struct PayloadPool {
    len: usize,
    free: SegQueue<Box<[f32]>>,
    allocations: CachePadded<AtomicU64>,
    reclamations: CachePadded<AtomicU64>,
    live: CachePadded<AtomicUsize>,
    max_live: AtomicUsize,
    read_after_reclaim: AtomicU64,
}

impl PayloadPool {
    pub fn new(len: usize) -> Result<Arc<Self>, ParamError> {
        if len == 0 {
            return Err(ParamError::ZeroDimension);
        }
        Ok(Arc::new(PayloadPool {
            len,
            free: SegQueue::new(),
            allocations: CachePadded::new(AtomicU64::new(0)),
            reclamations: CachePadded::new(AtomicU64::new(0)),
            live: CachePadded::new(AtomicUsize::new(0)),
            max_live: AtomicUsize::new(0),
            read_after_reclaim: AtomicU64::new(0),
        }))
    }

    /// Payload length `d` served by this pool.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Takes a payload from the free list, or allocates one. Recycled buffers
    /// keep their previous contents unless `zeroed` is set.
    fn take(&self, zeroed: bool) -> Box<[f32]> {
        let buf = match self.free.pop() {
            Some(mut buf) => {
                if zeroed {
                    buf.fill(0.0);
                }
                buf
            }
            None => vec![0.0f32; self.len].into_boxed_slice(),
        };
        self.allocations.fetch_add(1, Ordering::Relaxed);
        let live = self.live.fetch_add(1, Ordering::Relaxed) + 1;
        self.max_live.fetch_max(live, Ordering::Relaxed);
        buf
    }

    fn give(&self, buf: Box<[f32]>) {
        debug_assert_eq!(buf.len(), self.len);
        self.free.push(buf);
        self.reclamations.fetch_add(1, Ordering::Relaxed);
        self.live.fetch_sub(1, Ordering::Relaxed);
    }

    pub fn live_payloads(&self) -> usize {
        self.live.load(Ordering::Relaxed)
    }

    pub fn max_live_payloads(&self) -> usize {
        self.max_live.load(Ordering::Relaxed)
    }

    /// Number of times a registered, validated reader found its version
    /// reclaimed underneath it. Always zero unless the protocol is broken.
    pub fn read_after_reclaim_events(&self) -> u64 {
        self.read_after_reclaim.load(Ordering::Relaxed)
    }

    pub fn census(&self) -> CensusSnapshot {
        let live = self.live.load(Ordering::Relaxed);
        CensusSnapshot {
            allocations: self.allocations.load(Ordering::Relaxed),
            reclamations: self.reclamations.load(Ordering::Relaxed),
            live_payloads: live,
            live_bytes: live * self.len * std::mem::size_of::<f32>(),
            max_live_payloads: self.max_live.load(Ordering::Relaxed),
        }
    }
}

impl fmt::Debug for PayloadPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PayloadPool")
            .field("len", &self.len)
            .field("census", &self.census())
            .finish()
    }
}

/// A versioned parameter payload with atomic reader/staleness metadata.
pub struct ParameterVector {
    payload: AtomicPtr<f32>,
    len: usize,
    t: AtomicU64,
    n_rdrs: AtomicUsize,
    stale_flag: AtomicBool,
    deleted: AtomicBool,
    reclaim_count: AtomicU32,
    // Version this one replaced in its slot; links the published chain so the
    // slot can free every header at teardown.
    predecessor: *mut ParameterVector,
    pool: Arc<PayloadPool>,
}

// SAFETY: all shared mutation goes through atomics; payload access is
// governed by the read/publish protocol documented on each accessor.
unsafe impl Send for ParameterVector {}
unsafe impl Sync for ParameterVector {}

impl ParameterVector {
    /// Allocates a zeroed vector of dimension `d` backed by a fresh pool.
    pub fn new(d: usize) -> Result<Self, ParamError> {
        let pool = PayloadPool::new(d)?;
        Ok(Self::with_pool(&pool))
    }

    /// Allocates a zeroed vector from `pool`.
    pub fn with_pool(pool: &Arc<PayloadPool>) -> Self {
        Self::from_buf(pool, pool.take(true))
    }

    /// Allocates a vector from `pool` whose payload contents are unspecified.
    /// Used for candidates that are immediately overwritten by a copy.
    pub fn with_pool_uninit(pool: &Arc<PayloadPool>) -> Self {
        Self::from_buf(pool, pool.take(false))
    }

    fn from_buf(pool: &Arc<PayloadPool>, buf: Box<[f32]>) -> Self {
        let len = buf.len();
        let raw = Box::into_raw(buf) as *mut f32;
        ParameterVector {
            payload: AtomicPtr::new(raw),
            len,
            t: AtomicU64::new(0),
            n_rdrs: AtomicUsize::new(0),
            stale_flag: AtomicBool::new(false),
            deleted: AtomicBool::new(false),
            reclaim_count: AtomicU32::new(0),
            predecessor: ptr::null_mut(),
            pool: Arc::clone(pool),
        }
    }

    pub fn dim(&self) -> usize {
        self.len
    }

    pub fn pool(&self) -> &Arc<PayloadPool> {
        &self.pool
    }

    /// Sequence number (count of updates applied along this version's history).
    pub fn seq(&self) -> u64 {
        self.t.load(Ordering::Acquire)
    }

    pub fn set_seq(&mut self, t: u64) {
        *self.t.get_mut() = t;
    }

    pub fn readers(&self) -> usize {
        self.n_rdrs.load(Ordering::SeqCst)
    }

    pub fn is_stale(&self) -> bool {
        self.stale_flag.load(Ordering::SeqCst)
    }

    pub fn is_deleted(&self) -> bool {
        self.deleted.load(Ordering::SeqCst)
    }

    /// How many times this instance's payload has been reclaimed (0 or 1).
    pub fn reclaim_count(&self) -> u32 {
        self.reclaim_count.load(Ordering::SeqCst)
    }

    /// Marks this version as superseded.
    pub fn mark_stale(&self) {
        self.stale_flag.store(true, Ordering::SeqCst);
    }

    /// Fills the payload with independent `N(0, 0.01^2)` draws.
    pub fn rand_init(&mut self, seed: u64) {
        let normal = Normal::new(0.0f32, INIT_STD_DEV).expect("valid normal parameters");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in self.theta_mut() {
            *x = normal.sample(&mut rng);
        }
    }

    pub fn start_reading(&self) {
        self.n_rdrs.fetch_add(1, Ordering::SeqCst);
    }

    /// Drops a read registration and attempts reclamation. Returns whether
    /// this call reclaimed the payload.
    pub fn stop_reading(&self) -> bool {
        let prev = self.n_rdrs.fetch_sub(1, Ordering::SeqCst);
        debug_assert!(prev > 0, "stop_reading without matching start_reading");
        self.safe_delete()
    }

    /// Reclaims the payload iff the version is stale, has no readers, and no
    /// other thread has reclaimed it yet. The header stays valid.
    pub fn safe_delete(&self) -> bool {
        if !self.stale_flag.load(Ordering::SeqCst) || self.n_rdrs.load(Ordering::SeqCst) != 0 {
            return false;
        }
        if self
            .deleted
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return false;
        }
        self.reclaim_payload();
        true
    }

    /// Unconditionally reclaims the payload of a vector that is exclusively
    /// owned (an unpublished candidate). Returns false if already reclaimed.
    pub fn discard(&mut self) -> bool {
        if *self.deleted.get_mut() {
            return false;
        }
        *self.deleted.get_mut() = true;
        self.reclaim_payload();
        true
    }

    fn reclaim_payload(&self) {
        let raw = self.payload.swap(ptr::null_mut(), Ordering::AcqRel);
        if raw.is_null() {
            return;
        }
        self.reclaim_count.fetch_add(1, Ordering::SeqCst);
        // SAFETY: `raw` came from `Box::<[f32]>::into_raw` with length
        // `self.len` and the swap above guarantees we are its only owner.
        let buf = unsafe { Box::from_raw(ptr::slice_from_raw_parts_mut(raw, self.len)) };
        self.pool.give(buf);
    }

    /// Exclusive access to the payload.
    ///
    /// Panics if the payload was reclaimed.
    pub fn theta_mut(&mut self) -> &mut [f32] {
        let raw = *self.payload.get_mut();
        assert!(!raw.is_null(), "payload accessed after reclamation");
        // SAFETY: `&mut self` excludes every other accessor.
        unsafe { std::slice::from_raw_parts_mut(raw, self.len) }
    }

    /// Exclusive read access to the payload.
    pub fn theta_exclusive(&mut self) -> &[f32] {
        self.theta_mut()
    }

    /// Shared read access to the payload.
    ///
    /// # Safety
    /// No thread may write the payload for the lifetime of the returned
    /// slice, and the payload must not be reclaimed during that time (the
    /// caller holds a validated read registration or otherwise prevents it).
    pub unsafe fn theta_unchecked(&self) -> &[f32] {
        let raw = self.payload.load(Ordering::Acquire);
        assert!(!raw.is_null(), "payload accessed after reclamation");
        std::slice::from_raw_parts(raw, self.len)
    }

    /// Applies `theta[i] -= eta * delta[i]` and increments `t`.
    pub fn update(&mut self, delta: &[f32], eta: f32) -> Result<u64, ParamError> {
        if delta.len() != self.len {
            return Err(ParamError::LengthMismatch {
                expected: self.len,
                actual: delta.len(),
            });
        }
        let t = self.t.fetch_add(1, Ordering::AcqRel) + 1;
        for (x, g) in self.theta_mut().iter_mut().zip(delta) {
            *x = sgd_step(*x, *g, eta);
        }
        Ok(t)
    }

    /// Overwrites the payload and sequence number with those of `src`.
    pub fn copy_from(&mut self, src: &[f32], t: u64) -> Result<(), ParamError> {
        if src.len() != self.len {
            return Err(ParamError::LengthMismatch {
                expected: self.len,
                actual: src.len(),
            });
        }
        self.theta_mut().copy_from_slice(src);
        *self.t.get_mut() = t;
        Ok(())
    }
}

/// One SGD step on a single component. Every optimizer routes through this
/// so that single-threaded runs agree bitwise.
#[inline(always)]
pub fn sgd_step(x: f32, g: f32, eta: f32) -> f32 {
    x - eta * g
}

impl Drop for ParameterVector {
    fn drop(&mut self) {
        let raw = *self.payload.get_mut();
        if !raw.is_null() {
            *self.payload.get_mut() = ptr::null_mut();
            // SAFETY: we own the payload exclusively at drop.
            let buf = unsafe { Box::from_raw(ptr::slice_from_raw_parts_mut(raw, self.len)) };
            self.pool.give(buf);
        }
    }
}

impl fmt::Debug for ParameterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterVector")
            .field("d", &self.len)
            .field("t", &self.t.load(Ordering::Relaxed))
            .field("n_rdrs", &self.n_rdrs.load(Ordering::Relaxed))
            .field("stale", &self.stale_flag.load(Ordering::Relaxed))
            .field("deleted", &self.deleted.load(Ordering::Relaxed))
            .finish()
    }
}

/// Opaque identity of a published version, comparable after its read
/// registration has been dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VersionId(*const ParameterVector);

unsafe impl Send for VersionId {}
unsafe impl Sync for VersionId {}

/// A registered, validated read of a published version. Dropping the guard
/// calls `stop_reading`, which may reclaim the payload.
pub struct ReadGuard<'a> {
    pv: &'a ParameterVector,
}

impl<'a> ReadGuard<'a> {
    pub fn id(&self) -> VersionId {
        VersionId(self.pv as *const _)
    }

    pub fn seq(&self) -> u64 {
        self.pv.seq()
    }

    pub fn header(&self) -> &'a ParameterVector {
        self.pv
    }

    pub fn theta(&self) -> &[f32] {
        if self.pv.is_deleted() {
            self.pv
                .pool
                .read_after_reclaim
                .fetch_add(1, Ordering::Relaxed);
        }
        // SAFETY: published versions are never written again, and the
        // validated registration held by this guard prevents reclamation.
        unsafe { self.pv.theta_unchecked() }
    }
}

impl Drop for ReadGuard<'_> {
    fn drop(&mut self) {
        if self.pv.is_deleted() {
            self.pv
                .pool
                .read_after_reclaim
                .fetch_add(1, Ordering::Relaxed);
        }
        self.pv.stop_reading();
    }
}

/// Result of a publication attempt.
pub enum PublishOutcome {
    /// The candidate is now the latest version. `seq` is its sequence number
    /// and `reclaimed_predecessor` tells whether this thread recycled the
    /// version it replaced.
    Published {
        seq: u64,
        reclaimed_predecessor: bool,
    },
    /// Another version was published first; the candidate is handed back.
    Rejected(Box<ParameterVector>),
}

impl fmt::Debug for PublishOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PublishOutcome::Published {
                seq,
                reclaimed_predecessor,
            } => f
                .debug_struct("Published")
                .field("seq", seq)
                .field("reclaimed_predecessor", reclaimed_predecessor)
                .finish(),
            PublishOutcome::Rejected(pv) => f.debug_tuple("Rejected").field(pv).finish(),
        }
    }
}

/// Single shared word holding the latest published version.
///
/// Owns every version ever published through it; headers are freed when the
/// slot is dropped, payloads earlier through reclamation.
pub struct VersionSlot {
    latest: CachePadded<AtomicPtr<ParameterVector>>,
    pool: Arc<PayloadPool>,
}

unsafe impl Send for VersionSlot {}
unsafe impl Sync for VersionSlot {}

impl VersionSlot {
    pub fn new(initial: ParameterVector) -> Self {
        let pool = Arc::clone(&initial.pool);
        let raw = Box::into_raw(Box::new(initial));
        VersionSlot {
            latest: CachePadded::new(AtomicPtr::new(raw)),
            pool,
        }
    }

    pub fn pool(&self) -> &Arc<PayloadPool> {
        &self.pool
    }

    /// Returns a validated read of the latest version. Loops while the
    /// fetched version turns out stale; each retry implies a concurrent
    /// publication, so the loop is lock-free.
    pub fn acquire_latest(&self) -> ReadGuard<'_> {
        loop {
            let raw = self.latest.load(Ordering::Acquire);
            // SAFETY: headers reachable from the slot live as long as the slot.
            let pv = unsafe { &*raw };
            pv.start_reading();
            if !pv.is_stale() {
                return ReadGuard { pv };
            }
            pv.stop_reading();
        }
    }

    /// Sequence number of the current latest version, without registering a read.
    pub fn latest_seq(&self) -> u64 {
        let raw = self.latest.load(Ordering::Acquire);
        // SAFETY: header lifetime is tied to the slot.
        unsafe { (*raw).seq() }
    }

    /// Attempts to install `candidate` in place of `expected`. On success the
    /// replaced version is marked stale and reclaimed if it has no readers.
    pub fn try_publish(
        &self,
        expected: VersionId,
        mut candidate: Box<ParameterVector>,
    ) -> PublishOutcome {
        debug_assert!(Arc::ptr_eq(&candidate.pool, &self.pool));
        let expected_raw = expected.0 as *mut ParameterVector;
        candidate.predecessor = expected_raw;
        let seq = *candidate.t.get_mut();
        let raw = Box::into_raw(candidate);
        match self
            .latest
            .compare_exchange(expected_raw, raw, Ordering::AcqRel, Ordering::Acquire)
        {
            Ok(_) => {
                // SAFETY: `expected_raw` was published through this slot.
                let prev = unsafe { &*expected_raw };
                prev.mark_stale();
                let reclaimed_predecessor = prev.safe_delete();
                PublishOutcome::Published {
                    seq,
                    reclaimed_predecessor,
                }
            }
            Err(_) => {
                // SAFETY: the candidate was never made visible.
                let mut candidate = unsafe { Box::from_raw(raw) };
                candidate.predecessor = ptr::null_mut();
                PublishOutcome::Rejected(candidate)
            }
        }
    }

    /// Visits every version published through this slot, newest first.
    /// Requires exclusive access, so no publication can race with the walk.
    pub fn for_each_version(&mut self, mut f: impl FnMut(&ParameterVector)) {
        let mut cur = *self.latest.get_mut();
        while let Some(pv) = NonNull::new(cur) {
            // SAFETY: exclusive access; chain links point at live headers.
            let pv = unsafe { pv.as_ref() };
            f(pv);
            cur = pv.predecessor;
        }
    }

    /// Copies the latest payload into `dst`, returning its sequence number.
    pub fn snapshot_into(&self, dst: &mut Vec<f32>) -> u64 {
        let guard = self.acquire_latest();
        dst.clear();
        dst.extend_from_slice(guard.theta());
        guard.seq()
    }
}

impl Drop for VersionSlot {
    fn drop(&mut self) {
        let mut cur = *self.latest.get_mut();
        while !cur.is_null() {
            // SAFETY: every header in the chain was leaked by `new` or
            // `try_publish` and is freed exactly once here.
            let pv = unsafe { Box::from_raw(cur) };
            cur = pv.predecessor;
        }
    }
}

impl fmt::Debug for VersionSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VersionSlot")
            .field("latest_seq", &self.latest_seq())
            .field("pool", &self.pool)
            .finish()
    }
}

/// Shared parameters for lock-free, race-tolerant (Hogwild!) access.
///
/// Elements are accessed as relaxed 32-bit atomics: no element is ever torn,
/// but a reader may observe a mix of old and new components.
pub struct RacyParams {
    pv: ParameterVector,
}

impl RacyParams {
    pub fn new(pv: ParameterVector) -> Self {
        RacyParams { pv }
    }

    fn cells(&self) -> &[AtomicU32] {
        let raw = self.pv.payload.load(Ordering::Relaxed);
        assert!(!raw.is_null());
        // SAFETY: `f32` and `AtomicU32` share size and alignment, the payload
        // is owned by `self.pv` for our lifetime and every access to it while
        // shared goes through this atomic view.
        unsafe { std::slice::from_raw_parts(raw as *const AtomicU32, self.pv.len) }
    }

    pub fn dim(&self) -> usize {
        self.pv.len
    }

    pub fn seq(&self) -> u64 {
        self.pv.t.load(Ordering::Relaxed)
    }

    /// Component-wise copy without synchronization; returns `t` as read
    /// before the copy.
    pub fn copy_into(&self, dst: &mut Vec<f32>) -> u64 {
        let t = self.pv.t.load(Ordering::Relaxed);
        dst.clear();
        dst.extend(
            self.cells()
                .iter()
                .map(|c| f32::from_bits(c.load(Ordering::Relaxed))),
        );
        t
    }

    /// Like [`copy_into`](Self::copy_into) for a preallocated buffer of
    /// exactly `dim` components.
    pub fn read_into(&self, dst: &mut [f32]) -> Result<u64, ParamError> {
        if dst.len() != self.pv.len {
            return Err(ParamError::LengthMismatch {
                expected: self.pv.len,
                actual: dst.len(),
            });
        }
        let t = self.pv.t.load(Ordering::Relaxed);
        for (d, c) in dst.iter_mut().zip(self.cells()) {
            *d = f32::from_bits(c.load(Ordering::Relaxed));
        }
        Ok(t)
    }

    /// Increments `t` and applies `theta[i] -= eta * delta[i]` element by
    /// element. Returns the sequence number claimed by this update.
    pub fn update(&self, delta: &[f32], eta: f32) -> Result<u64, ParamError> {
        if delta.len() != self.pv.len {
            return Err(ParamError::LengthMismatch {
                expected: self.pv.len,
                actual: delta.len(),
            });
        }
        let t = self.pv.t.fetch_add(1, Ordering::Relaxed) + 1;
        for (cell, g) in self.cells().iter().zip(delta) {
            let x = f32::from_bits(cell.load(Ordering::Relaxed));
            cell.store(sgd_step(x, *g, eta).to_bits(), Ordering::Relaxed);
        }
        Ok(t)
    }

    /// Applies an update touching only the listed components.
    pub fn update_sparse(&self, indices: &[usize], values: &[f32], eta: f32) -> u64 {
        let t = self.pv.t.fetch_add(1, Ordering::Relaxed) + 1;
        let cells = self.cells();
        for (&i, g) in indices.iter().zip(values) {
            let x = f32::from_bits(cells[i].load(Ordering::Relaxed));
            cells[i].store(sgd_step(x, *g, eta).to_bits(), Ordering::Relaxed);
        }
        t
    }

    pub fn into_inner(self) -> ParameterVector {
        self.pv
    }
}

impl fmt::Debug for RacyParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("RacyParams").field(&self.pv).finish()
    }
}
