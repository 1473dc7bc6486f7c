use super::Scalar;

/// Strided matrix view: `offset` into a buffer plus row and column strides.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Row-major `rows × cols` block starting at `offset` with row stride `ld`.
    pub fn rm(offset: usize, ld: usize) -> Self {
        Self { offset, rs: ld, cs: 1 }
    }

    /// Transposed view of a row-major block with row stride `ld`.
    pub fn tr(offset: usize, ld: usize) -> Self {
        Self { offset, rs: 1, cs: ld }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c[m×n] = alpha · a[m×k] · b[k×n] + beta · c`, with every operand a strided
/// view into a slice. Panics if a view reaches past its slice.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    av: View,
    b: &[T],
    bv: View,
    beta: T,
    c: &mut [T],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(av.last(m, k) < a.len(), "gemm: lhs view out of bounds");
        assert!(bv.last(k, n) < b.len(), "gemm: rhs view out of bounds");
    }
    assert!(cv.last(m, n) < c.len(), "gemm: output view out of bounds");
    // SAFETY: all three views were bounds-checked above and `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}
