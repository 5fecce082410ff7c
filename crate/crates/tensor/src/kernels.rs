//! Numeric kernels behind the graph operations.

use crate::real::{gemm, MatRef};
use crate::tensor::{numel, strides};
use crate::{Real, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Below this many weight planes a convolution runs as whole-plane shifted
/// updates; im2col packing dominates a GEMM with so few output channels.
const DIRECT_MAX_PLANES: usize = 1024;

fn use_direct(g: &ConvGeom, cout: usize) -> bool {
    g.cin * cout <= DIRECT_MAX_PLANES
}

/// Polyphase layout for direct convolution. The zero-padded input is split
/// into `stride²` phase planes of `hq×wq`, and output planes use row pitch
/// `wq`, so every kernel tap becomes one contiguous update of length `span`
/// on one phase plane. Output columns past `wo` in each row are scratch.
struct Padded {
    s: usize,
    hq: usize,
    wq: usize,
    span: usize,
}

impl Padded {
    fn new(g: &ConvGeom) -> Self {
        let s = g.stride;
        let reach = (g.k - 1) / s;
        let (hp, wp) = (g.h + 2 * g.pad, g.w + 2 * g.pad);
        let hq = hp.div_ceil(s).max(g.ho + reach);
        let wq = wp.div_ceil(s).max(g.wo + reach);
        Self {
            s,
            hq,
            wq,
            span: (g.ho - 1) * wq + g.wo,
        }
    }

    fn phase_len(&self) -> usize {
        self.hq * self.wq
    }

    /// Buffer length for one channel: all phases.
    fn plane(&self) -> usize {
        self.s * self.s * self.phase_len()
    }

    /// Offset of a tap's source window inside a channel buffer.
    fn tap(&self, ky: usize, kx: usize) -> usize {
        let phase = (ky % self.s) * self.s + kx % self.s;
        phase * self.phase_len() + (ky / self.s) * self.wq + kx / self.s
    }

    /// Offset of unpadded input pixel `(y, x)` inside a channel buffer.
    fn input_pos(&self, g: &ConvGeom, y: usize, x: usize) -> usize {
        let (py, px) = (y + g.pad, x + g.pad);
        let phase = (py % self.s) * self.s + px % self.s;
        phase * self.phase_len() + (py / self.s) * self.wq + px / self.s
    }
}

fn pad_planes<T: Real>(x: &[T], g: &ConvGeom, p: &Padded, out: &mut [T]) {
    out.fill(T::zero());
    for c in 0..g.cin {
        let dst = &mut out[c * p.plane()..(c + 1) * p.plane()];
        for y in 0..g.h {
            let src = &x[(c * g.h + y) * g.w..(c * g.h + y + 1) * g.w];
            if p.s == 1 {
                let o = p.input_pos(g, y, 0);
                dst[o..o + g.w].copy_from_slice(src);
            } else {
                for (xx, &v) in src.iter().enumerate() {
                    dst[p.input_pos(g, y, xx)] = v;
                }
            }
        }
    }
}

fn unpad_planes<T: Real>(xp: &[T], g: &ConvGeom, p: &Padded, out: &mut [T]) {
    for c in 0..g.cin {
        let src = &xp[c * p.plane()..(c + 1) * p.plane()];
        for y in 0..g.h {
            let dst = &mut out[(c * g.h + y) * g.w..(c * g.h + y + 1) * g.w];
            if p.s == 1 {
                let o = p.input_pos(g, y, 0);
                dst.copy_from_slice(&src[o..o + g.w]);
            } else {
                for (xx, v) in dst.iter_mut().enumerate() {
                    *v = src[p.input_pos(g, y, xx)];
                }
            }
        }
    }
}

#[inline(always)]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 16];
    let (ca, cb) = (a.chunks_exact(16), b.chunks_exact(16));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..16 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Output elements accumulated in registers per pass.
const CHUNK: usize = 32;

/// `acc[j..j+len] = Σ w·src[t+j..t+j+len]` over the `(w, t)` terms, with
/// the running sums kept in a fixed-size block.
#[inline(always)]
fn gather_chunks<T: Real>(acc: &mut [T], src: &[T], terms: &[(T, usize)]) {
    assert!(terms.iter().all(|&(_, t)| t + acc.len() <= src.len()));
    let mut j = 0;
    while j < acc.len() {
        let len = CHUNK.min(acc.len() - j);
        let mut a = [T::zero(); CHUNK];
        if len == CHUNK {
            // SAFETY: `j + CHUNK <= acc.len()`, and `t + acc.len() <= src.len()`
            // for every term by the assertion above.
            let base = unsafe { src.as_ptr().add(j) };
            for &(w, t) in terms {
                let s = unsafe { &*(base.add(t) as *const [T; CHUNK]) };
                for i in 0..CHUNK {
                    a[i] += w * s[i];
                }
            }
        } else {
            for &(w, t) in terms {
                for i in 0..len {
                    a[i] += w * src[t + j + i];
                }
            }
        }
        acc[j..j + len].copy_from_slice(&a[..len]);
        j += CHUNK;
    }
}

/// `[dot(a, src[o..o+len]) for o in offs]`, sharing each load of `a`.
#[inline(always)]
fn dot_multi<T: Real, const M: usize>(a: &[T], src: &[T], offs: &[usize]) -> [T; M] {
    const L: usize = 8;
    let offs: [usize; M] = offs.try_into().unwrap();
    assert!(offs.iter().all(|&o| o + a.len() <= src.len()));
    let mut acc = [[T::zero(); L]; M];
    let full = a.len() / L * L;
    let mut j = 0;
    while j < full {
        // SAFETY: `j + L <= a.len()` and `o + a.len() <= src.len()` for every offset.
        let av = unsafe { &*(a.as_ptr().add(j) as *const [T; L]) };
        let base = unsafe { src.as_ptr().add(j) };
        for m in 0..M {
            let sv = unsafe { &*(base.add(offs[m]) as *const [T; L]) };
            for i in 0..L {
                acc[m][i] += av[i] * sv[i];
            }
        }
        j += L;
    }
    let mut out = [T::zero(); M];
    for m in 0..M {
        let tail: T = (full..a.len()).map(|i| a[i] * src[offs[m] + i]).sum();
        out[m] = acc[m].iter().copied().sum::<T>() + tail;
    }
    out
}

/// Weight gradients for one `(co, ci)` pair, one entry per tap.
#[inline(always)]
fn weight_grads<T: Real>(gplane: &[T], plane: &[T], taps: &[usize], dw: &mut [T]) {
    let mut put = |start: usize, vals: &[T]| {
        for (d, v) in dw[start..start + vals.len()].iter_mut().zip(vals) {
            *d += *v;
        }
    };
    match taps.len() {
        9 => put(0, &dot_multi::<T, 9>(gplane, plane, taps)),
        _ => {
            for (ti, &t) in taps.iter().enumerate() {
                put(ti, &[dot(gplane, &plane[t..t + gplane.len()])]);
            }
        }
    }
}

fn tap_offsets(g: &ConvGeom, p: &Padded) -> Vec<usize> {
    (0..g.k * g.k).map(|i| p.tap(i / g.k, i % g.k)).collect()
}

#[inline(always)]
fn direct_forward_body<T: Real>(xp: &[T], g: &ConvGeom, p: &Padded, weight: &[T], cout: usize, acc: &mut [T], out: &mut [T]) {
    let kk = g.k * g.k;
    let taps = tap_offsets(g, p);
    let mut terms = Vec::with_capacity(g.cin * kk);
    for co in 0..cout {
        let wco = &weight[co * g.cin * kk..(co + 1) * g.cin * kk];
        terms.clear();
        for ci in 0..g.cin {
            terms.extend(taps.iter().enumerate().map(|(ti, &t)| (wco[ci * kk + ti], ci * p.plane() + t)));
        }
        gather_chunks(&mut acc[..p.span], xp, &terms);
        let oplane = &mut out[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
        for oy in 0..g.ho {
            oplane[oy * g.wo..(oy + 1) * g.wo].copy_from_slice(&acc[oy * p.wq..oy * p.wq + g.wo]);
        }
    }
}

/// `dye` holds `cout` output-gradient planes in the pitch layout, each
/// preceded by `margin` zeros and zero-filled up to `margin + phase_len`;
/// `dxp` receives polyphase input gradients.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn direct_backward_body<T: Real>(
    xp: &[T],
    g: &ConvGeom,
    p: &Padded,
    weight: &[T],
    cout: usize,
    dye: &[T],
    margin: usize,
    dxp: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    let kk = g.k * g.k;
    let taps = tap_offsets(g, p);
    let ext = margin + p.phase_len();
    if let Some(dw) = dw {
        for co in 0..cout {
            let gplane = &dye[co * ext + margin..co * ext + margin + p.span];
            for ci in 0..g.cin {
                let plane = &xp[ci * p.plane()..(ci + 1) * p.plane()];
                let at = (co * g.cin + ci) * kk;
                weight_grads(gplane, plane, &taps, &mut dw[at..at + kk]);
            }
        }
    }
    if let Some(dxp) = dxp {
        let pl = p.phase_len();
        for ci in 0..g.cin {
            for ph in 0..p.s * p.s {
                let dst = &mut dxp[ci * p.plane() + ph * pl..ci * p.plane() + (ph + 1) * pl];
                let mut terms = Vec::with_capacity(cout * kk);
                for co in 0..cout {
                    for (ti, &t) in taps.iter().enumerate().filter(|(_, &t)| t / pl == ph) {
                        terms.push((weight[(co * g.cin + ci) * kk + ti], co * ext + margin - t % pl));
                    }
                }
                gather_chunks(dst, dye, &terms);
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn direct_forward_avx2<T: Real>(xp: &[T], g: &ConvGeom, p: &Padded, weight: &[T], cout: usize, acc: &mut [T], out: &mut [T]) {
    direct_forward_body(xp, g, p, weight, cout, acc, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn direct_backward_avx2<T: Real>(
    xp: &[T],
    g: &ConvGeom,
    p: &Padded,
    weight: &[T],
    cout: usize,
    dye: &[T],
    margin: usize,
    dxp: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    direct_backward_body(xp, g, p, weight, cout, dye, margin, dxp, dw)
}

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn direct_forward<T: Real>(x: &[T], n: usize, g: &ConvGeom, weight: &[T], cout: usize, out: &mut [T]) {
    let p = Padded::new(g);
    let mut xp = vec![T::zero(); g.cin * p.plane()];
    let mut acc = vec![T::zero(); p.span];
    let (in_per, out_per) = (g.cin * g.h * g.w, cout * g.ho * g.wo);
    for b in 0..n {
        pad_planes(&x[b * in_per..(b + 1) * in_per], g, &p, &mut xp);
        let ob = &mut out[b * out_per..(b + 1) * out_per];
        #[cfg(target_arch = "x86_64")]
        if has_avx2() {
            // SAFETY: the CPU supports the enabled features.
            unsafe { direct_forward_avx2(&xp, g, &p, weight, cout, &mut acc, ob) };
            continue;
        }
        direct_forward_body(&xp, g, &p, weight, cout, &mut acc, ob);
    }
}

fn direct_backward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    cout: usize,
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let p = Padded::new(g);
    let mut xp = vec![T::zero(); g.cin * p.plane()];
    let margin = (g.k - 1) / p.s * (p.wq + 1);
    let ext = margin + p.phase_len();
    let mut dye = vec![T::zero(); cout * ext];
    let mut dxp = dx.as_ref().map(|_| vec![T::zero(); g.cin * p.plane()]);
    let (in_per, out_per) = (g.cin * g.h * g.w, cout * g.ho * g.wo);
    for b in 0..n {
        pad_planes(&x[b * in_per..(b + 1) * in_per], g, &p, &mut xp);
        for co in 0..cout {
            let dst = &mut dye[co * ext + margin..];
            for oy in 0..g.ho {
                let src = &dy[b * out_per + (co * g.ho + oy) * g.wo..][..g.wo];
                dst[oy * p.wq..oy * p.wq + g.wo].copy_from_slice(src);
            }
        }
        #[cfg(target_arch = "x86_64")]
        let done = if has_avx2() {
            // SAFETY: the CPU supports the enabled features.
            unsafe { direct_backward_avx2(&xp, g, &p, weight, cout, &dye, margin, dxp.as_deref_mut(), dw.as_deref_mut()) };
            true
        } else {
            false
        };
        #[cfg(not(target_arch = "x86_64"))]
        let done = false;
        if !done {
            direct_backward_body(&xp, g, &p, weight, cout, &dye, margin, dxp.as_deref_mut(), dw.as_deref_mut());
        }
        if let (Some(dx), Some(dxp)) = (dx.as_deref_mut(), dxp.as_ref()) {
            unpad_planes(dxp, g, &p, &mut dx[b * in_per..(b + 1) * in_per]);
        }
    }
}

/// Unfolds one `C×H×W` image into a `(C·k·k) × (Ho·Wo)` column matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (hw_out, k) = (g.col_cols(), g.k);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an image.
fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (hw_out, k) = (g.col_cols(), g.k);
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = w ⋆ x + b` for a batch, zero padding.
pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    cout: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let in_per = g.cin * g.h * g.w;
    let out_per = cout * g.col_cols();
    let mut out = vec![T::zero(); n * out_per];
    let direct = use_direct(g, cout);
    let mut cols = if g.is_pointwise() || direct {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * g.col_cols()]
    };
    let wmat = MatRef::row_major(weight, cout, g.col_rows());
    for b in 0..n {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let ob = &mut out[b * out_per..(b + 1) * out_per];
        if direct {
            direct_forward(xb, 1, g, weight, cout, ob);
        } else {
            let colmat = if g.is_pointwise() {
                MatRef::row_major(xb, g.col_rows(), g.col_cols())
            } else {
                im2col(xb, g, &mut cols);
                MatRef::row_major(&cols, g.col_rows(), g.col_cols())
            };
            gemm(T::one(), wmat, colmat, T::zero(), ob);
        }
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(g.col_cols()).enumerate() {
                let bv = bias[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    cout: usize,
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads<T> {
    let in_per = g.cin * g.h * g.w;
    let out_per = cout * g.col_cols();
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut dx = want_dx.then(|| vec![T::zero(); n * in_per]);
    let mut dw = want_dw.then(|| vec![T::zero(); cout * rows]);
    let db = want_db.then(|| {
        let mut db = vec![T::zero(); cout];
        for b in 0..n {
            for (co, chunk) in dy[b * out_per..(b + 1) * out_per].chunks(ncols).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
        db
    });
    if use_direct(g, cout) {
        direct_backward(x, n, g, weight, cout, dy, dx.as_deref_mut(), dw.as_deref_mut());
        return ConvGrads { dx, dw, db };
    }
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * ncols }];
    let mut dcols = vec![T::zero(); if want_dx && !g.is_pointwise() { rows * ncols } else { 0 }];
    let wmat = MatRef::row_major(weight, cout, rows);
    for b in 0..n {
        let dyb = MatRef::row_major(&dy[b * out_per..(b + 1) * out_per], cout, ncols);
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_per..(b + 1) * in_per];
            let colmat = if g.is_pointwise() {
                MatRef::row_major(xb, rows, ncols)
            } else {
                im2col(xb, g, &mut cols);
                MatRef::row_major(&cols, rows, ncols)
            };
            gemm(T::one(), dyb, colmat.t(), T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_per..(b + 1) * in_per];
            if g.is_pointwise() {
                gemm(T::one(), wmat.t(), dyb, T::zero(), dxb);
            } else {
                gemm(T::one(), wmat.t(), dyb, T::zero(), &mut dcols);
                col2im_add(&dcols, g, dxb);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Per-group statistics saved by the group-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn group_norm_forward<T: Real>(
    x: &[T],
    shape: Shape,
    groups: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, GroupStats<T>) {
    let [n, c, h, w] = shape;
    let cpg = c / groups;
    let block = cpg * h * w;
    let inv = T::one() / T::of(block as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut stats = GroupStats {
        mean: Vec::with_capacity(n * groups),
        rstd: Vec::with_capacity(n * groups),
    };
    for b in 0..n {
        for gi in 0..groups {
            let off = (b * c + gi * cpg) * h * w;
            let xs = &x[off..off + block];
            let mean = xs.iter().copied().sum::<T>() * inv;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv;
            let rstd = T::one() / (var + eps).sqrt();
            stats.mean.push(mean);
            stats.rstd.push(rstd);
            for cc in 0..cpg {
                let ch = gi * cpg + cc;
                let (ga, be) = (gamma[ch], beta[ch]);
                let s = cc * h * w;
                for i in s..s + h * w {
                    out[off + i] = (xs[i] - mean) * rstd * ga + be;
                }
            }
        }
    }
    (out, stats)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<T: Real>(
    x: &[T],
    shape: Shape,
    groups: usize,
    gamma: &[T],
    stats: &GroupStats<T>,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = shape;
    let cpg = c / groups;
    let hw = h * w;
    let block = cpg * hw;
    let inv = T::one() / T::of(block as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for gi in 0..groups {
            let si = b * groups + gi;
            let (mean, rstd) = (stats.mean[si], stats.rstd[si]);
            let off = (b * c + gi * cpg) * hw;
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for cc in 0..cpg {
                let ch = gi * cpg + cc;
                let ga = gamma[ch];
                let mut dg = T::zero();
                let mut dbt = T::zero();
                for i in off + cc * hw..off + (cc + 1) * hw {
                    let xhat = (x[i] - mean) * rstd;
                    dg += dy[i] * xhat;
                    dbt += dy[i];
                    let dxhat = dy[i] * ga;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                dgamma[ch] += dg;
                dbeta[ch] += dbt;
            }
            let m1 = sum_dxhat * inv;
            let m2 = sum_dxhat_xhat * inv;
            for cc in 0..cpg {
                let ga = gamma[gi * cpg + cc];
                for i in off + cc * hw..off + (cc + 1) * hw {
                    let xhat = (x[i] - mean) * rstd;
                    dx[i] = rstd * (dy[i] * ga - m1 - xhat * m2);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Output shape of a broadcasting binary op, if compatible.
pub(crate) fn broadcast_shape(a: &Shape, b: &Shape) -> Option<Shape> {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` as seen from `out`: zero along broadcast axes.
fn bcast_strides(shape: &Shape, out: &Shape) -> [usize; 4] {
    let s = strides(shape);
    let mut r = [0; 4];
    for d in 0..4 {
        r[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { s[d] };
    }
    r
}

/// Broadcast iteration as rows: the longest trailing run of axes on which
/// each operand is either fully present or fully broadcast. Within a row an
/// operand is a contiguous slice (`full`) or a single repeated value.
struct RowPlan {
    row: usize,
    rows: usize,
    prefix: [usize; 4],
    nprefix: usize,
    ta: [usize; 4],
    tb: [usize; 4],
    a_full: bool,
    b_full: bool,
}

impl RowPlan {
    fn new(sa: &Shape, sb: &Shape, out: &Shape) -> Self {
        let (ta, tb) = (bcast_strides(sa, out), bcast_strides(sb, out));
        let status = |d: usize| (sa[d] == out[d], sb[d] == out[d]);
        let mut split = 4;
        let mut run: Option<(bool, bool)> = None;
        while split > 0 {
            let d = split - 1;
            if out[d] != 1 {
                match run {
                    None => run = Some(status(d)),
                    Some(st) if st != status(d) => break,
                    _ => {}
                }
            }
            split -= 1;
        }
        let (a_full, b_full) = run.unwrap_or((true, true));
        let row: usize = out[split..].iter().product();
        let mut prefix = [1; 4];
        prefix[..split].copy_from_slice(&out[..split]);
        Self {
            row,
            rows: numel(out) / row.max(1),
            prefix,
            nprefix: split,
            ta,
            tb,
            a_full,
            b_full,
        }
    }

    /// Starting offsets of row `r` in each operand.
    fn offsets(&self, r: usize) -> (usize, usize) {
        let (mut rem, mut oa, mut ob) = (r, 0, 0);
        for d in (0..self.nprefix).rev() {
            let i = rem % self.prefix[d];
            rem /= self.prefix[d];
            oa += i * self.ta[d];
            ob += i * self.tb[d];
        }
        (oa, ob)
    }
}

pub(crate) fn broadcast_zip<T: Real>(
    a: &[T],
    sa: &Shape,
    b: &[T],
    sb: &Shape,
    out: &Shape,
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if sa == out && sb == out {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let plan = RowPlan::new(sa, sb, out);
    let mut res = Vec::with_capacity(numel(out));
    let l = plan.row;
    for r in 0..plan.rows {
        let (oa, ob) = plan.offsets(r);
        match (plan.a_full, plan.b_full) {
            (true, true) => res.extend(a[oa..oa + l].iter().zip(&b[ob..ob + l]).map(|(&x, &y)| f(x, y))),
            (true, false) => {
                let y = b[ob];
                res.extend(a[oa..oa + l].iter().map(|&x| f(x, y)));
            }
            (false, true) => {
                let x = a[oa];
                res.extend(b[ob..ob + l].iter().map(|&y| f(x, y)));
            }
            (false, false) => {
                let v = f(a[oa], b[ob]);
                res.extend(std::iter::repeat_n(v, l));
            }
        }
    }
    res
}

/// Sums a tensor of shape `from` down to the broadcast-compatible `to`.
pub(crate) fn sum_to_shape<T: Real>(x: &[T], from: &Shape, to: &Shape) -> Vec<T> {
    if from == to {
        return x.to_vec();
    }
    let plan = RowPlan::new(to, from, from);
    let mut res = vec![T::zero(); numel(to)];
    let l = plan.row;
    for r in 0..plan.rows {
        let (o, _) = plan.offsets(r);
        let src = &x[r * l..(r + 1) * l];
        if plan.a_full {
            res[o..o + l].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
        } else {
            res[o] += src.iter().copied().sum::<T>();
        }
    }
    res
}

/// Splits `shape` around `axis` into `(outer, len, inner)` extents.
pub(crate) fn axis_split(shape: &Shape, axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
