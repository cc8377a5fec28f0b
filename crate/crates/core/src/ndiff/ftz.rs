//! Scoped flush-to-zero for subnormal floats.
//!
//! Back-propagated gradients through long recurrences decay into the
//! subnormal range, where x86 arithmetic is many times slower.

/// Run `f` with subnormal inputs and results treated as zero on this thread.
/// The previous floating-point control state is restored afterwards. A no-op
/// on targets other than x86_64.
pub fn without_subnormals<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        struct Restore(u32);
        impl Drop for Restore {
            fn drop(&mut self) {
                set_csr(self.0);
            }
        }
        let old = get_csr();
        // FTZ (bit 15) and DAZ (bit 6)
        set_csr(old | 0x8040);
        let _restore = Restore(old);
        f()
    }
    #[cfg(not(target_arch = "x86_64"))]
    f()
}

#[cfg(target_arch = "x86_64")]
fn get_csr() -> u32 {
    let mut v = 0u32;
    // SAFETY: stmxcsr writes four bytes to a valid stack slot
    unsafe { std::arch::asm!("stmxcsr [{}]", in(reg) &mut v, options(nostack)) };
    v
}

#[cfg(target_arch = "x86_64")]
fn set_csr(v: u32) {
    // SAFETY: only the FTZ/DAZ bits differ from a state read back from the CPU
    unsafe { std::arch::asm!("ldmxcsr [{}]", in(reg) &v, options(nostack, readonly)) };
}
