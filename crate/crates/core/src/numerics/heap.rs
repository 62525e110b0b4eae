//! glibc returns large freed blocks to the kernel, so a training step that
//! frees and reallocates multi-megabyte activations page-faults them back in
//! every time. Keeping freed memory in the process removes that cost.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Raises glibc's mmap and trim thresholds once per process. A no-op on
/// other platforms.
pub fn retain_freed_memory() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator parameters.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TOP_PAD, 64 << 20);
        }
    });
}
