//! Backward-pass memory contract: the backward of a large logical matrix
//! allocates O(tile) + O(m) extra, never anything on the order of the
//! recovered H×O weight matrix. Verified with a counting global allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicIsize, AtomicUsize, Ordering};

use ndarray::Array2;
use roast_core::matmul::{roast_mm_backward, roast_mm_forward, MatmulPlan};
use roast_core::store::{CompressedStore, ModuleSpec, SharingMode, TileConfig};

struct CountingAlloc;

static LIVE: AtomicIsize = AtomicIsize::new(0);
static PEAK: AtomicIsize = AtomicIsize::new(0);
static TRACKING: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if TRACKING.load(Ordering::Relaxed) == 1 {
            let live =
                LIVE.fetch_add(layout.size() as isize, Ordering::Relaxed) + layout.size() as isize;
            PEAK.fetch_max(live, Ordering::Relaxed);
        }
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        if TRACKING.load(Ordering::Relaxed) == 1 {
            LIVE.fetch_sub(layout.size() as isize, Ordering::Relaxed);
        }
        unsafe { System.dealloc(ptr, layout) }
    }
}

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[test]
fn backward_peak_memory_stays_near_store_size() {
    // 4096×4096 logical weights (128 MB if ever materialized) on a 2^20-slot
    // store: backward extra memory must stay below 2m slots plus tile-scale
    // slack.
    let (h, o) = (4096usize, 4096usize);
    let m = 1usize << 20;
    let batch = 8usize;
    let mut store = CompressedStore::create(m, 1.0, 42, SharingMode::Global).unwrap();
    let binding = store
        .register_module(&ModuleSpec::matmul(h, o, h).with_tile(TileConfig::tiles(8, 32, 32)))
        .unwrap();
    let plan = MatmulPlan::new(&binding).unwrap();
    let x = Array2::from_shape_fn((batch, h), |(i, j)| {
        ((i * 31 + j) % 17) as f64 * 0.01 - 0.08
    });
    let y = roast_mm_forward(&store, &plan, &x.view()).unwrap();

    store.zero_grads();
    LIVE.store(0, Ordering::SeqCst);
    PEAK.store(0, Ordering::SeqCst);
    TRACKING.store(1, Ordering::SeqCst);
    let gx = roast_mm_backward(&mut store, &plan, &x.view(), &y.view()).unwrap();
    TRACKING.store(0, Ordering::SeqCst);
    drop(gx);

    let peak = PEAK.load(Ordering::SeqCst) as usize;
    // 2m f64 slots, plus grad_X/tile buffers and batch-shaped temporaries.
    let slack = (batch * (h + o) + 4 * 32 * 32) * 8 + (1 << 20);
    let bound = 2 * m * 8 + slack;
    assert!(
        peak < bound,
        "peak backward allocation {peak} bytes exceeds bound {bound} \
         (H·O would be {} bytes)",
        h * o * 8
    );
    // And the bound itself is far below materializing the weights.
    assert!(bound < h * o * 8 / 4);
}
