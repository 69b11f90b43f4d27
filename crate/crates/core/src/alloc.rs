//! Heap tuning for long training loops.
//!
//! Every training step allocates and frees activation buffers of a few
//! megabytes. With glibc's default thresholds those blocks are mapped and
//! unmapped each time, so each step pays page faults to touch them again.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Keeps large freed blocks on the heap for reuse. Idempotent; a no-op
/// outside glibc.
pub fn retain_freed_memory() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator thresholds.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
            libc::mallopt(libc::M_TOP_PAD, 64 << 20);
        }
    });
}
