//! Dot-product kernels with a fixed accumulation structure.
//!
//! Every dot product accumulates into `LANES` independent partial sums using
//! fused multiply-add, adds the `len % LANES` tail into a separate fused
//! scalar sum, then reduces the lanes with a fixed pairwise tree. The result
//! is a function of the inputs alone: the scalar, AVX2 and AVX-512 paths
//! agree bit for bit, as do the batched and single-row entry points.

const LANES: usize = 16;

/// Rows of the embedding matrix streamed per tile in the batched kernel.
const TILE_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Level {
    Scalar,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

/// Widest kernel the running CPU supports.
pub(crate) fn detected_level() -> Level {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") {
            return Level::Avx512;
        }
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            return Level::Avx2;
        }
    }
    Level::Scalar
}

#[inline(always)]
fn reduce16_f32(acc: &[f32; LANES]) -> f32 {
    let mut w = *acc;
    let mut width = LANES / 2;
    while width > 0 {
        for l in 0..width {
            w[l] += w[l + width];
        }
        width /= 2;
    }
    w[0]
}

#[inline(always)]
fn reduce16_f64(acc: &[f64; LANES]) -> f64 {
    let mut w = *acc;
    let mut width = LANES / 2;
    while width > 0 {
        for l in 0..width {
            w[l] += w[l + width];
        }
        width /= 2;
    }
    w[0]
}

#[inline(always)]
fn tail_f32(a: &[f32], b: &[f32], from: usize) -> f32 {
    let mut t = 0f32;
    for (x, y) in a[from..].iter().zip(&b[from..]) {
        t = x.mul_add(*y, t);
    }
    t
}

fn dot_f32_scalar(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let body = a.len() / LANES * LANES;
    let mut acc = [0f32; LANES];
    for (ca, cb) in a[..body]
        .chunks_exact(LANES)
        .zip(b[..body].chunks_exact(LANES))
    {
        for l in 0..LANES {
            acc[l] = ca[l].mul_add(cb[l], acc[l]);
        }
    }
    reduce16_f32(&acc) + tail_f32(a, b, body)
}

fn dot_f64_scalar(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let body = a.len() / LANES * LANES;
    let mut acc = [0f64; LANES];
    for (ca, cb) in a[..body]
        .chunks_exact(LANES)
        .zip(b[..body].chunks_exact(LANES))
    {
        for l in 0..LANES {
            acc[l] = ca[l].mul_add(cb[l], acc[l]);
        }
    }
    let mut tail = 0f64;
    for (x, y) in a[body..].iter().zip(&b[body..]) {
        tail = x.mul_add(*y, tail);
    }
    reduce16_f64(&acc) + tail
}

#[inline(always)]
fn dots_block_scalar<const CB: usize, const VB: usize>(
    c: [&[f32]; CB],
    v: [&[f32]; VB],
) -> [[f32; VB]; CB] {
    let mut out = [[0f32; VB]; CB];
    for i in 0..CB {
        for j in 0..VB {
            out[i][j] = dot_f32_scalar(c[i], v[j]);
        }
    }
    out
}

/// Batched coverage gains over f32 unit embeddings.
///
/// For each candidate `a`, computes `Σ_chunks Σ_{v in chunk} max(0, s(a,v) − cur_max[v])`
/// where `s(a,v) = clamp(dot(a,v), 0, 1)` and `s(a,a) = 1`, chunk partials
/// being added in order. `block` computes `CB × VB` dots at once.
#[inline(always)]
fn coverage_gains_driver<const CB: usize, const VB: usize>(
    emb: &[f32],
    dim: usize,
    cur_max: &[f64],
    candidates: &[usize],
    chunk: usize,
    out: &mut [f64],
    block: impl Fn([&[f32]; CB], [&[f32]; VB]) -> [[f32; VB]; CB],
) {
    let n = cur_max.len();
    let row = |i: usize| &emb[i * dim..(i + 1) * dim];
    let mut part = vec![0f64; candidates.len()];
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut tile_start = 0;
    while tile_start < n {
        let chunk_end = (tile_start / chunk + 1) * chunk;
        let tile_end = (tile_start + TILE_ROWS).min(chunk_end).min(n);
        let flush = tile_end == chunk_end || tile_end == n;
        for b in (0..candidates.len()).step_by(CB) {
            let cw = CB.min(candidates.len() - b);
            let mut idx = [candidates[b]; CB];
            idx[..cw].copy_from_slice(&candidates[b..b + cw]);
            let crow = idx.map(row);
            let mut acc = [0f64; CB];
            acc[..cw].copy_from_slice(&part[b..b + cw]);
            let mut v0 = tile_start;
            while v0 < tile_end {
                let vw = VB.min(tile_end - v0);
                let vrow: [&[f32]; VB] = std::array::from_fn(|j| row(v0 + j.min(vw - 1)));
                let dots = block(crow, vrow);
                for j in 0..vw {
                    let v = v0 + j;
                    let c = cur_max[v];
                    for i in 0..cw {
                        let s = if idx[i] == v {
                            1.0
                        } else {
                            dots[i][j].clamp(0.0, 1.0) as f64
                        };
                        acc[i] += (s - c).max(0.0);
                    }
                }
                v0 += vw;
            }
            if flush {
                for i in 0..cw {
                    out[b + i] += acc[i];
                    part[b + i] = 0.0;
                }
            } else {
                part[b..b + cw].copy_from_slice(&acc[..cw]);
            }
        }
        tile_start = tile_end;
    }
}

#[inline(always)]
fn sim_row_driver<const VB: usize>(
    emb: &[f32],
    dim: usize,
    a: usize,
    range: std::ops::Range<usize>,
    out: &mut [f64],
    block: impl Fn([&[f32]; 1], [&[f32]; VB]) -> [[f32; VB]; 1],
) {
    let row = |i: usize| &emb[i * dim..(i + 1) * dim];
    let ra = [row(a)];
    let (start, end) = (range.start, range.end);
    let mut v0 = start;
    while v0 < end {
        let vw = VB.min(end - v0);
        let vrow: [&[f32]; VB] = std::array::from_fn(|j| row(v0 + j.min(vw - 1)));
        let dots = block(ra, vrow);
        for j in 0..vw {
            let v = v0 + j;
            out[v - start] = if v == a {
                1.0
            } else {
                dots[0][j].clamp(0.0, 1.0) as f64
            };
        }
        v0 += vw;
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use super::{tail_f32, LANES};
    use std::arch::x86_64::*;

    #[inline]
    #[target_feature(enable = "avx2,fma")]
    fn reduce_ps(lo: __m256, hi: __m256) -> f32 {
        let t = _mm256_add_ps(lo, hi);
        let u = _mm_add_ps(_mm256_castps256_ps128(t), _mm256_extractf128_ps::<1>(t));
        let w = _mm_add_ps(u, _mm_movehl_ps(u, u));
        _mm_cvtss_f32(_mm_add_ss(w, _mm_movehdup_ps(w)))
    }

    #[inline]
    #[target_feature(enable = "avx2,fma")]
    pub(super) fn dots_block<const CB: usize, const VB: usize>(
        c: [&[f32]; CB],
        v: [&[f32]; VB],
    ) -> [[f32; VB]; CB] {
        let dim = v[0].len();
        let body = dim / LANES * LANES;
        let mut lo = [[_mm256_setzero_ps(); VB]; CB];
        let mut hi = [[_mm256_setzero_ps(); VB]; CB];
        let mut k = 0;
        while k < body {
            // SAFETY: k + 16 <= body <= every row length.
            unsafe {
                let vl: [__m256; VB] =
                    std::array::from_fn(|j| _mm256_loadu_ps(v[j].as_ptr().add(k)));
                let vh: [__m256; VB] =
                    std::array::from_fn(|j| _mm256_loadu_ps(v[j].as_ptr().add(k + 8)));
                for i in 0..CB {
                    let cl = _mm256_loadu_ps(c[i].as_ptr().add(k));
                    let ch = _mm256_loadu_ps(c[i].as_ptr().add(k + 8));
                    for j in 0..VB {
                        lo[i][j] = _mm256_fmadd_ps(cl, vl[j], lo[i][j]);
                        hi[i][j] = _mm256_fmadd_ps(ch, vh[j], hi[i][j]);
                    }
                }
            }
            k += LANES;
        }
        let mut out = [[0f32; VB]; CB];
        for i in 0..CB {
            for j in 0..VB {
                out[i][j] = reduce_ps(lo[i][j], hi[i][j]) + tail_f32(c[i], v[j], body);
            }
        }
        out
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
        let body = a.len() / LANES * LANES;
        let mut acc = [_mm256_setzero_pd(); 4];
        let mut k = 0;
        while k < body {
            for (q, r) in acc.iter_mut().enumerate() {
                // SAFETY: k + 16 <= body <= len.
                unsafe {
                    let x = _mm256_loadu_pd(a.as_ptr().add(k + 4 * q));
                    let y = _mm256_loadu_pd(b.as_ptr().add(k + 4 * q));
                    *r = _mm256_fmadd_pd(x, y, *r);
                }
            }
            k += LANES;
        }
        let mut tail = 0f64;
        for (x, y) in a[body..].iter().zip(&b[body..]) {
            tail = x.mul_add(*y, tail);
        }
        let b0 = _mm256_add_pd(acc[0], acc[2]);
        let b1 = _mm256_add_pd(acc[1], acc[3]);
        let c = _mm256_add_pd(b0, b1);
        let d = _mm_add_pd(_mm256_castpd256_pd128(c), _mm256_extractf128_pd::<1>(c));
        _mm_cvtsd_f64(_mm_add_sd(d, _mm_unpackhi_pd(d, d))) + tail
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) fn coverage_gains(
        emb: &[f32],
        dim: usize,
        cur_max: &[f64],
        candidates: &[usize],
        chunk: usize,
        out: &mut [f64],
    ) {
        super::coverage_gains_driver::<2, 2>(emb, dim, cur_max, candidates, chunk, out, |c, v| {
            dots_block(c, v)
        })
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) fn sim_row(
        emb: &[f32],
        dim: usize,
        a: usize,
        range: std::ops::Range<usize>,
        out: &mut [f64],
    ) {
        super::sim_row_driver::<4>(emb, dim, a, range, out, |c, v| dots_block(c, v))
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::{tail_f32, LANES};
    use std::arch::x86_64::*;

    #[inline]
    #[target_feature(enable = "avx512f")]
    fn reduce_ps(z: __m512) -> f32 {
        let lo = _mm512_castps512_ps256(z);
        let hi = _mm256_castpd_ps(_mm512_extractf64x4_pd::<1>(_mm512_castps_pd(z)));
        let t = _mm256_add_ps(lo, hi);
        let u = _mm_add_ps(_mm256_castps256_ps128(t), _mm256_extractf128_ps::<1>(t));
        let w = _mm_add_ps(u, _mm_movehl_ps(u, u));
        _mm_cvtss_f32(_mm_add_ss(w, _mm_movehdup_ps(w)))
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    pub(super) fn dots_block<const CB: usize, const VB: usize>(
        c: [&[f32]; CB],
        v: [&[f32]; VB],
    ) -> [[f32; VB]; CB] {
        let dim = v[0].len();
        let body = dim / LANES * LANES;
        let mut acc = [[_mm512_setzero_ps(); VB]; CB];
        let mut k = 0;
        while k < body {
            // SAFETY: k + 16 <= body <= every row length.
            unsafe {
                let vv: [__m512; VB] =
                    std::array::from_fn(|j| _mm512_loadu_ps(v[j].as_ptr().add(k)));
                for i in 0..CB {
                    let cc = _mm512_loadu_ps(c[i].as_ptr().add(k));
                    for j in 0..VB {
                        acc[i][j] = _mm512_fmadd_ps(cc, vv[j], acc[i][j]);
                    }
                }
            }
            k += LANES;
        }
        let mut out = [[0f32; VB]; CB];
        for i in 0..CB {
            for j in 0..VB {
                out[i][j] = reduce_ps(acc[i][j]) + tail_f32(c[i], v[j], body);
            }
        }
        out
    }

    #[target_feature(enable = "avx512f")]
    pub(super) fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
        let body = a.len() / LANES * LANES;
        let mut z0 = _mm512_setzero_pd();
        let mut z1 = _mm512_setzero_pd();
        let mut k = 0;
        while k < body {
            // SAFETY: k + 16 <= body <= len.
            unsafe {
                z0 = _mm512_fmadd_pd(
                    _mm512_loadu_pd(a.as_ptr().add(k)),
                    _mm512_loadu_pd(b.as_ptr().add(k)),
                    z0,
                );
                z1 = _mm512_fmadd_pd(
                    _mm512_loadu_pd(a.as_ptr().add(k + 8)),
                    _mm512_loadu_pd(b.as_ptr().add(k + 8)),
                    z1,
                );
            }
            k += LANES;
        }
        let mut tail = 0f64;
        for (x, y) in a[body..].iter().zip(&b[body..]) {
            tail = x.mul_add(*y, tail);
        }
        let t = _mm512_add_pd(z0, z1);
        let u = _mm256_add_pd(_mm512_castpd512_pd256(t), _mm512_extractf64x4_pd::<1>(t));
        let d = _mm_add_pd(_mm256_castpd256_pd128(u), _mm256_extractf128_pd::<1>(u));
        _mm_cvtsd_f64(_mm_add_sd(d, _mm_unpackhi_pd(d, d))) + tail
    }

    #[target_feature(enable = "avx512f")]
    pub(super) fn coverage_gains(
        emb: &[f32],
        dim: usize,
        cur_max: &[f64],
        candidates: &[usize],
        chunk: usize,
        out: &mut [f64],
    ) {
        super::coverage_gains_driver::<4, 4>(emb, dim, cur_max, candidates, chunk, out, |c, v| {
            dots_block(c, v)
        })
    }

    #[target_feature(enable = "avx512f")]
    pub(super) fn sim_row(
        emb: &[f32],
        dim: usize,
        a: usize,
        range: std::ops::Range<usize>,
        out: &mut [f64],
    ) {
        super::sim_row_driver::<8>(emb, dim, a, range, out, |c, v| dots_block(c, v))
    }
}

fn dot_f64_at(level: Level, a: &[f64], b: &[f64]) -> f64 {
    match level {
        Level::Scalar => dot_f64_scalar(a, b),
        // SAFETY: a level is only ever chosen when the CPU supports it.
        #[cfg(target_arch = "x86_64")]
        Level::Avx2 => unsafe { avx2::dot_f64(a, b) },
        #[cfg(target_arch = "x86_64")]
        Level::Avx512 => unsafe { avx512::dot_f64(a, b) },
    }
}

fn coverage_gains_at(
    level: Level,
    emb: &[f32],
    dim: usize,
    cur_max: &[f64],
    candidates: &[usize],
    chunk: usize,
    out: &mut [f64],
) {
    match level {
        Level::Scalar => coverage_gains_driver::<1, 1>(
            emb,
            dim,
            cur_max,
            candidates,
            chunk,
            out,
            dots_block_scalar,
        ),
        // SAFETY: as above.
        #[cfg(target_arch = "x86_64")]
        Level::Avx2 => unsafe { avx2::coverage_gains(emb, dim, cur_max, candidates, chunk, out) },
        #[cfg(target_arch = "x86_64")]
        Level::Avx512 => unsafe {
            avx512::coverage_gains(emb, dim, cur_max, candidates, chunk, out)
        },
    }
}

fn sim_row_at(
    level: Level,
    emb: &[f32],
    dim: usize,
    a: usize,
    range: std::ops::Range<usize>,
    out: &mut [f64],
) {
    match level {
        Level::Scalar => sim_row_driver::<1>(emb, dim, a, range, out, dots_block_scalar),
        // SAFETY: as above.
        #[cfg(target_arch = "x86_64")]
        Level::Avx2 => unsafe { avx2::sim_row(emb, dim, a, range, out) },
        #[cfg(target_arch = "x86_64")]
        Level::Avx512 => unsafe { avx512::sim_row(emb, dim, a, range, out) },
    }
}

/// f64 dot product with the fixed lane structure.
pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    dot_f64_at(detected_level(), a, b)
}

/// Unnormalized coverage gains of `candidates`, one per entry of `out`.
pub(crate) fn coverage_gains_f32(
    emb: &[f32],
    dim: usize,
    cur_max: &[f64],
    candidates: &[usize],
    chunk: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(candidates.len(), out.len());
    coverage_gains_at(detected_level(), emb, dim, cur_max, candidates, chunk, out)
}

/// Clamped similarities of point `a` to the points in `range`, written to `out`.
pub(crate) fn sim_row_f32(
    emb: &[f32],
    dim: usize,
    a: usize,
    range: std::ops::Range<usize>,
    out: &mut [f64],
) {
    sim_row_at(detected_level(), emb, dim, a, range, out)
}
