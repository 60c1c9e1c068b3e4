use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use pinn_balls::cli::{run, MemoryProbe};

/// System allocator that tracks live and peak heap bytes.
struct CountingAlloc {
    current: AtomicUsize,
    peak: AtomicUsize,
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = self.current.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            self.peak.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        self.current.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

impl MemoryProbe for CountingAlloc {
    fn reset_peak(&self) {
        self.peak.store(self.current.load(Ordering::Relaxed), Ordering::Relaxed);
    }

    fn peak_bytes(&self) -> usize {
        self.peak.load(Ordering::Relaxed)
    }

    fn current_bytes(&self) -> usize {
        self.current.load(Ordering::Relaxed)
    }
}

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc { current: AtomicUsize::new(0), peak: AtomicUsize::new(0) };

fn main() {
    std::process::exit(run(std::env::args_os(), &ALLOC));
}
