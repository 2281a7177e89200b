//! Element types for tensors: `f32` for training, `f64` for oracles.
//!
//! Matrix products go through OpenBLAS, loaded with `dlopen` at first
//! use rather than linked at build time. OpenBLAS picks its compute
//! kernel from CPUID inside a load-time constructor, and that probe
//! misfires on some VMs (falls back to a pre-AVX kernel an order of
//! magnitude slower), so `OPENBLAS_CORETYPE` has to be in the
//! environment before the library is loaded. Loading lazily is the
//! only way to set it from inside the process.
//!
//! Transcendentals used in hot loops (softmax, GELU) have branchless
//! polynomial versions for `f32` that auto-vectorize; the `f64` impl
//! calls libm so finite-difference oracles see the exact function.

use std::ffi::c_void;
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::OnceLock;

#[allow(non_camel_case_types)]
type blasint = i32;

type SgemmFn = unsafe extern "C" fn(
    i32,
    i32,
    i32,
    blasint,
    blasint,
    blasint,
    f32,
    *const f32,
    blasint,
    *const f32,
    blasint,
    f32,
    *mut f32,
    blasint,
);
type DgemmFn = unsafe extern "C" fn(
    i32,
    i32,
    i32,
    blasint,
    blasint,
    blasint,
    f64,
    *const f64,
    blasint,
    *const f64,
    blasint,
    f64,
    *mut f64,
    blasint,
);

struct Blas {
    sgemm: SgemmFn,
    dgemm: DgemmFn,
}

unsafe impl Send for Blas {}
unsafe impl Sync for Blas {}

const CBLAS_ROW_MAJOR: i32 = 101;
const CBLAS_NO_TRANS: i32 = 111;
const CBLAS_TRANS: i32 = 112;

static BLAS: OnceLock<Blas> = OnceLock::new();

fn load_blas() -> Blas {
    #[cfg(target_arch = "x86_64")]
    if std::env::var_os("OPENBLAS_CORETYPE").is_none()
        && is_x86_feature_detected!("avx512f")
    {
        std::env::set_var("OPENBLAS_CORETYPE", "SKYLAKEX");
    }
    // Large activation buffers churn through glibc's mmap threshold
    // (fresh pages every training step); pinning the threshold high
    // keeps them on the reusable heap.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
    }

    unsafe {
        let mut handle: *mut c_void = std::ptr::null_mut();
        for name in ["libopenblas.so.0\0", "libopenblas.so\0"] {
            handle = libc::dlopen(name.as_ptr().cast(), libc::RTLD_NOW | libc::RTLD_LOCAL);
            if !handle.is_null() {
                break;
            }
        }
        assert!(!handle.is_null(), "could not load OpenBLAS");
        let sym = |name: &str| {
            let p = libc::dlsym(handle, name.as_ptr().cast());
            assert!(!p.is_null(), "missing BLAS symbol {name}");
            p
        };
        let sgemm: SgemmFn = std::mem::transmute(sym("cblas_sgemm\0"));
        let dgemm: DgemmFn = std::mem::transmute(sym("cblas_dgemm\0"));
        // BLAS-internal threading off; parallelism lives at the batch
        // level where reduction order is fixed.
        let set_threads: unsafe extern "C" fn(i32) =
            std::mem::transmute(sym("openblas_set_num_threads\0"));
        set_threads(1);
        Blas { sgemm, dgemm }
    }
}

/// Force BLAS setup now instead of at the first matmul.
pub fn init_blas() {
    BLAS.get_or_init(load_blas);
}

/// Scalar element of a tensor.
pub trait Scalar:
    Copy
    + Clone
    + Debug
    + Default
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn max_s(self, other: Self) -> Self;
    fn min_s(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// exp(); polynomial approximation for f32, libm for f64.
    fn exp_s(self) -> Self;
    /// tanh(); rational approximation for f32, libm for f64.
    fn tanh_s(self) -> Self;

    /// c[m x n] = alpha * op(a) . op(b) + beta * c, all row-major.
    /// `ta`/`tb` select op = transpose; `a` is stored [m x k] when
    /// `!ta` and [k x m] when `ta` (likewise for `b`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        ta: bool,
        tb: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    ) {
        let (ar, ac) = if ta { (k, m) } else { (m, k) };
        let (br, bc) = if tb { (n, k) } else { (k, n) };
        debug_assert_eq!(a.len(), ar * ac);
        debug_assert_eq!(b.len(), br * bc);
        Self::gemm_ld(
            ta, tb, m, n, k, alpha, a, 0, ac, b, 0, bc, beta, c, 0, n,
        );
    }

    /// gemm over row-major subviews: `*_off` is the element offset of
    /// the view's first row, `ld*` its row stride. Lets attention read
    /// per-head column bands without copying them out.
    #[allow(clippy::too_many_arguments)]
    fn gemm_ld(
        ta: bool,
        tb: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        a_off: usize,
        lda: usize,
        b: &[Self],
        b_off: usize,
        ldb: usize,
        beta: Self,
        c: &mut [Self],
        c_off: usize,
        ldc: usize,
    );
}

/// exp for f32 via exponent extraction + degree-6 polynomial on the
/// reduced argument. The round-to-int goes through the add-magic
/// trick (adding 1.5*2^23 forces round-to-even and leaves the integer
/// in the mantissa bits), which keeps the whole body in plain
/// float/int ops so slice loops over it turn into SIMD.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const MAGIC: f32 = 12_582_912.0; // 1.5 * 2^23
    const MAGIC_BITS: i32 = 0x4B40_0000;
    const LN2_HI: f32 = 0.693_359_375;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // exp overflows above ~88.72, underflows below ~-87.3
    let x = x.min(88.0).max(-87.0);
    let biased = x * LOG2E + MAGIC;
    let n = biased - MAGIC;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r / 720.0)))));
    // biased's bit pattern is MAGIC_BITS + round(x*log2e); wrapping
    // ops so overflow checks don't break SIMD in debug-assert builds
    let n_int = (biased.to_bits() as i32).wrapping_sub(MAGIC_BITS);
    let bits = n_int.wrapping_add(127) << 23;
    p * f32::from_bits(bits as u32)
}

/// tanh for f32 as an odd rational p(x^2)*x / q(x^2) on a clamped
/// argument. Branchless; max abs error vs libm under 1e-6.
#[inline(always)]
fn tanh_f32(x: f32) -> f32 {
    const A13: f32 = -2.76076847742355e-16;
    const A11: f32 = 2.00018790482477e-13;
    const A9: f32 = -8.60467152213735e-11;
    const A7: f32 = 5.12229709037114e-08;
    const A5: f32 = 1.48572235717979e-05;
    const A3: f32 = 6.37261928875436e-04;
    const A1: f32 = 4.89352455891786e-03;
    const B6: f32 = 1.19825839466702e-06;
    const B4: f32 = 1.18534705686654e-04;
    const B2: f32 = 2.26843463243900e-03;
    const B0: f32 = 4.89352518554385e-03;
    let x = x.min(7.99881172).max(-7.99881172);
    let x2 = x * x;
    let num = ((((((A13 * x2 + A11) * x2 + A9) * x2 + A7) * x2 + A5) * x2 + A3) * x2 + A1) * x;
    let den = ((B6 * x2 + B4) * x2 + B2) * x2 + B0;
    num / den
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f32::ln(self)
    }
    #[inline(always)]
    fn powi(self, n: i32) -> Self {
        f32::powi(self, n)
    }
    #[inline(always)]
    fn max_s(self, other: Self) -> Self {
        f32::max(self, other)
    }
    #[inline(always)]
    fn min_s(self, other: Self) -> Self {
        f32::min(self, other)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    #[inline(always)]
    fn exp_s(self) -> Self {
        exp_f32(self)
    }
    #[inline(always)]
    fn tanh_s(self) -> Self {
        tanh_f32(self)
    }

    fn gemm_ld(
        ta: bool,
        tb: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        a_off: usize,
        lda: usize,
        b: &[Self],
        b_off: usize,
        ldb: usize,
        beta: Self,
        c: &mut [Self],
        c_off: usize,
        ldc: usize,
    ) {
        check_views(ta, tb, m, n, k, a.len(), a_off, lda, b.len(), b_off, ldb, c.len(), c_off, ldc);
        let blas = BLAS.get_or_init(load_blas);
        unsafe {
            (blas.sgemm)(
                CBLAS_ROW_MAJOR,
                if ta { CBLAS_TRANS } else { CBLAS_NO_TRANS },
                if tb { CBLAS_TRANS } else { CBLAS_NO_TRANS },
                m as blasint,
                n as blasint,
                k as blasint,
                alpha,
                a.as_ptr().add(a_off),
                lda as blasint,
                b.as_ptr().add(b_off),
                ldb as blasint,
                beta,
                c.as_mut_ptr().add(c_off),
                ldc as blasint,
            );
        }
    }
}

/// Bounds checks for gemm_ld views; the last touched element of each
/// view must sit inside its slice.
#[allow(clippy::too_many_arguments)]
fn check_views(
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    a_len: usize,
    a_off: usize,
    lda: usize,
    b_len: usize,
    b_off: usize,
    ldb: usize,
    c_len: usize,
    c_off: usize,
    ldc: usize,
) {
    let (ar, ac) = if ta { (k, m) } else { (m, k) };
    let (br, bc) = if tb { (n, k) } else { (k, n) };
    assert!(lda >= ac && ldb >= bc && ldc >= n, "gemm_ld stride too small");
    assert!(ar == 0 || a_off + (ar - 1) * lda + ac <= a_len, "gemm_ld a view out of bounds");
    assert!(br == 0 || b_off + (br - 1) * ldb + bc <= b_len, "gemm_ld b view out of bounds");
    assert!(m == 0 || c_off + (m - 1) * ldc + n <= c_len, "gemm_ld c view out of bounds");
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline(always)]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline(always)]
    fn max_s(self, other: Self) -> Self {
        f64::max(self, other)
    }
    #[inline(always)]
    fn min_s(self, other: Self) -> Self {
        f64::min(self, other)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline(always)]
    fn exp_s(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn tanh_s(self) -> Self {
        f64::tanh(self)
    }

    fn gemm_ld(
        ta: bool,
        tb: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        a_off: usize,
        lda: usize,
        b: &[Self],
        b_off: usize,
        ldb: usize,
        beta: Self,
        c: &mut [Self],
        c_off: usize,
        ldc: usize,
    ) {
        check_views(ta, tb, m, n, k, a.len(), a_off, lda, b.len(), b_off, ldb, c.len(), c_off, ldc);
        let blas = BLAS.get_or_init(load_blas);
        unsafe {
            (blas.dgemm)(
                CBLAS_ROW_MAJOR,
                if ta { CBLAS_TRANS } else { CBLAS_NO_TRANS },
                if tb { CBLAS_TRANS } else { CBLAS_NO_TRANS },
                m as blasint,
                n as blasint,
                k as blasint,
                alpha,
                a.as_ptr().add(a_off),
                lda as blasint,
                b.as_ptr().add(b_off),
                ldb as blasint,
                beta,
                c.as_mut_ptr().add(c_off),
                ldc as blasint,
            );
        }
    }
}
