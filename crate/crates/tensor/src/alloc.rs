/// Keeps freed heap memory in the process instead of returning it to the OS.
///
/// Every step of a training loop allocates and frees the same few hundred
/// megabytes of tensors; with glibc's default thresholds those pages are
/// unmapped on free and faulted back in on the next step. Only has an effect
/// with glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tuning parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
