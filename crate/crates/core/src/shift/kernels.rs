//! Single-plane shift kernels. A plane is a row-major `h x w` slice.
//!
//! Integer shifts are one flat memory move by `dy*w + dx` followed by zeroing
//! the rows and columns whose source fell outside the plane.

#[inline]
fn fully_outside(h: usize, w: usize, dy: isize, dx: isize) -> bool {
    dy.unsigned_abs() >= h || dx.unsigned_abs() >= w
}

/// Zero every cell whose source `(i + dy, j + dx)` lies outside the plane.
fn zero_border(plane: &mut [f32], h: usize, w: usize, dy: isize, dx: isize) {
    let (dyu, dxu) = (dy.unsigned_abs(), dx.unsigned_abs());
    let rows = if dy > 0 { h - dyu..h } else { 0..dyu };
    plane[rows.start * w..rows.end * w].fill(0.0);
    if dx == 0 {
        return;
    }
    let cols = if dx > 0 { w - dxu..w } else { 0..dxu };
    let live = if dy > 0 { 0..h - dyu } else { dyu..h };
    for i in live {
        plane[i * w + cols.start..i * w + cols.end].fill(0.0);
    }
}

/// `dst[i, j] = src[i + dy, j + dx]`, zero outside.
pub fn shift_plane(src: &[f32], dst: &mut [f32], h: usize, w: usize, dy: isize, dx: isize) {
    debug_assert_eq!(src.len(), h * w);
    debug_assert_eq!(dst.len(), h * w);
    if dy == 0 && dx == 0 {
        dst.copy_from_slice(src);
        return;
    }
    if fully_outside(h, w, dy, dx) {
        dst.fill(0.0);
        return;
    }
    let len = h * w;
    let offset = dy * w as isize + dx;
    let k = offset.unsigned_abs();
    if offset >= 0 {
        dst[..len - k].copy_from_slice(&src[k..]);
        dst[len - k..].fill(0.0);
    } else {
        dst[k..].copy_from_slice(&src[..len - k]);
        dst[..k].fill(0.0);
    }
    zero_border(dst, h, w, dy, dx);
}

/// In-place variant of [`shift_plane`].
pub fn shift_plane_in_place(plane: &mut [f32], h: usize, w: usize, dy: isize, dx: isize) {
    debug_assert_eq!(plane.len(), h * w);
    if dy == 0 && dx == 0 {
        return;
    }
    if fully_outside(h, w, dy, dx) {
        plane.fill(0.0);
        return;
    }
    let len = h * w;
    let offset = dy * w as isize + dx;
    let k = offset.unsigned_abs();
    if offset >= 0 {
        plane.copy_within(k.., 0);
        plane[len - k..].fill(0.0);
    } else {
        plane.copy_within(..len - k, k);
        plane[..k].fill(0.0);
    }
    zero_border(plane, h, w, dy, dx);
}

/// Integer part and fraction of a real displacement, chosen so the fraction is in `(0, 1]`.
///
/// The two sampled neighbours along an axis are `i + d` and `i + d + 1`, weighted
/// `1 - f` and `f`. At integral displacements this puts the sampled position on the
/// upper neighbour, so a one-sided slope sign of `+1` at zero distance gives the
/// left derivative of the interpolant.
#[inline]
pub(crate) fn split_displacement(v: f64) -> (isize, f64) {
    let d = v.ceil() - 1.0;
    (d as isize, v - d)
}

/// Source row (or column) pair for output index `i`, with out-of-range entries as `None`.
#[inline]
fn neighbours(i: usize, d: isize, len: usize) -> [Option<usize>; 2] {
    let base = (i as isize).saturating_add(d);
    let pick = |p: isize| (p >= 0 && (p as usize) < len).then_some(p as usize);
    [pick(base), pick(base.saturating_add(1))]
}

/// Bilinear sampling `dst[i, j] = sum over 4 neighbours of src * weight`, zero outside.
pub fn bilinear_plane(src: &[f32], dst: &mut [f32], h: usize, w: usize, alpha: f32, beta: f32) {
    let (da, fa) = split_displacement(alpha as f64);
    let (db, fb) = split_displacement(beta as f64);
    let wr = [1.0 - fa, fa];
    let wc = [1.0 - fb, fb];
    for i in 0..h {
        let rows = neighbours(i, da, h);
        for j in 0..w {
            let cols = neighbours(j, db, w);
            let mut acc = 0.0f64;
            for (r, wr) in rows.iter().zip(wr) {
                let Some(r) = r else { continue };
                for (c, wc) in cols.iter().zip(wc) {
                    if let Some(c) = c {
                        acc += src[r * w + c] as f64 * wr * wc;
                    }
                }
            }
            dst[i * w + j] = acc as f32;
        }
    }
}

/// Transpose of [`bilinear_plane`]: scatters `grad` back onto `dst` (accumulating).
pub fn bilinear_plane_adjoint(grad: &[f32], dst: &mut [f32], h: usize, w: usize, alpha: f32, beta: f32) {
    let (da, fa) = split_displacement(alpha as f64);
    let (db, fb) = split_displacement(beta as f64);
    let wr = [1.0 - fa, fa];
    let wc = [1.0 - fb, fb];
    let mut acc = vec![0.0f64; h * w];
    for i in 0..h {
        let rows = neighbours(i, da, h);
        for j in 0..w {
            let g = grad[i * w + j] as f64;
            if g == 0.0 {
                continue;
            }
            let cols = neighbours(j, db, w);
            for (r, wr) in rows.iter().zip(wr) {
                let Some(r) = r else { continue };
                for (c, wc) in cols.iter().zip(wc) {
                    if let Some(c) = c {
                        acc[r * w + c] += g * wr * wc;
                    }
                }
            }
        }
    }
    for (d, a) in dst.iter_mut().zip(acc) {
        *d += a as f32;
    }
}

/// `sum(grad[i, j] * src[i + dy, j + dx])` over the positions where the source is inside the plane.
fn shifted_dot(src: &[f32], grad: &[f32], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    if fully_outside(h, w, dy, dx) {
        return 0.0;
    }
    let (rows, cols) = (overlap(h, dy), overlap(w, dx));
    let mut total = 0.0f64;
    for i in rows {
        let si = (i as isize + dy) as usize;
        let g = &grad[i * w + cols.start..i * w + cols.end];
        let start = si * w + (cols.start as isize + dx) as usize;
        total += crate::nn::conv::dot_lanes(g, &src[start..start + g.len()]) as f64;
    }
    total
}

/// Output indices `i` in `0..len` whose source `i + d` is also in `0..len`.
#[inline]
fn overlap(len: usize, d: isize) -> std::ops::Range<usize> {
    let du = d.unsigned_abs().min(len);
    if d >= 0 {
        0..len - du
    } else {
        du..len
    }
}

/// Gradient of `sum(grad * bilinear(src))` with respect to `(alpha, beta)`.
///
/// With neighbour products `D(r, c) = <grad, src shifted by (da + r, db + c)>` the
/// interpolant is `sum wr[r] wc[c] D(r, c)`, so the row slope is
/// `sum_c wc[c] (D(1, c) - D(0, c))` and the column slope is symmetric. The upper
/// neighbour sits at or above the sampled position, which makes the slope one-sided
/// from the left at integral displacements.
pub fn displacement_grad_plane(src: &[f32], grad: &[f32], h: usize, w: usize, alpha: f32, beta: f32) -> (f64, f64) {
    let (da, fa) = split_displacement(alpha as f64);
    let (db, fb) = split_displacement(beta as f64);
    let wr = [1.0 - fa, fa];
    let wc = [1.0 - fb, fb];
    let d = |r: isize, c: isize| shifted_dot(src, grad, h, w, da.saturating_add(r), db.saturating_add(c));
    let table = [[d(0, 0), d(0, 1)], [d(1, 0), d(1, 1)]];
    let ga = (0..2).map(|c| wc[c] * (table[1][c] - table[0][c])).sum();
    let gb = (0..2).map(|r| wr[r] * (table[r][1] - table[r][0])).sum();
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp() -> Vec<f32> {
        (1..=9).map(|v| v as f32).collect()
    }

    #[test]
    fn down_one_row() {
        let mut out = vec![0.0; 9];
        shift_plane(&ramp(), &mut out, 3, 3, 1, 0);
        assert_eq!(out, vec![4., 5., 6., 7., 8., 9., 0., 0., 0.]);
    }

    #[test]
    fn column_shift_zero_fills() {
        let mut out = vec![0.0; 9];
        shift_plane(&ramp(), &mut out, 3, 3, 0, -1);
        assert_eq!(out, vec![0., 1., 2., 0., 4., 5., 0., 7., 8.]);
        shift_plane(&ramp(), &mut out, 3, 3, -1, 1);
        assert_eq!(out, vec![0., 0., 0., 2., 3., 0., 5., 6., 0.]);
    }

    #[test]
    fn shift_beyond_plane_is_zero() {
        let mut out = vec![1.0; 9];
        shift_plane(&ramp(), &mut out, 3, 3, 3, 0);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_pixel_row_average() {
        let mut out = vec![0.0; 3];
        bilinear_plane(&[0.0, 2.0, 4.0], &mut out, 1, 3, 0.0, 0.5);
        assert_eq!(out, vec![1.0, 3.0, 2.0]);
    }

    #[test]
    fn split_keeps_fraction_in_half_open_unit() {
        assert_eq!(split_displacement(1.0), (0, 1.0));
        assert_eq!(split_displacement(0.0), (-1, 1.0));
        assert_eq!(split_displacement(0.25), (0, 0.25));
        assert_eq!(split_displacement(-0.25), (-1, 0.75));
    }

    #[test]
    fn integral_grad_is_left_derivative() {
        // Row samples [0, 2, 4]; the slope just left of beta=0 uses the (j-1, j) pair.
        let src = [0.0, 2.0, 4.0];
        let grad = [1.0, 0.0, 0.0];
        let (_, gb) = displacement_grad_plane(&src, &grad, 1, 3, 0.0, 0.0);
        assert_eq!(gb, 0.0);
        let grad = [0.0, 1.0, 0.0];
        let (_, gb) = displacement_grad_plane(&src, &grad, 1, 3, 0.0, 0.0);
        assert_eq!(gb, 2.0);
    }

    /// Per-output-pixel evaluation of the four neighbour slopes.
    fn per_pixel_grad(src: &[f32], grad: &[f32], h: usize, w: usize, alpha: f32, beta: f32) -> (f64, f64) {
        let (da, fa) = split_displacement(alpha as f64);
        let (db, fb) = split_displacement(beta as f64);
        let (wr, wc) = ([1.0 - fa, fa], [1.0 - fb, fb]);
        let sign = [-1.0, 1.0];
        let (mut ga, mut gb) = (0.0, 0.0);
        for i in 0..h {
            for j in 0..w {
                for (ri, r) in neighbours(i, da, h).iter().enumerate() {
                    for (ci, c) in neighbours(j, db, w).iter().enumerate() {
                        if let (Some(r), Some(c)) = (r, c) {
                            let v = src[r * w + c] as f64 * grad[i * w + j] as f64;
                            ga += v * wc[ci] * sign[ri];
                            gb += v * wr[ri] * sign[ci];
                        }
                    }
                }
            }
        }
        (ga, gb)
    }

    proptest! {
        #[test]
        fn grad_matches_per_pixel_reference(
            h in 1usize..9, w in 1usize..9, alpha in -9.0f32..9.0, beta in -9.0f32..9.0, seed in 0u64..1000
        ) {
            let src: Vec<f32> = (0..h * w).map(|k| ((k as u64 * 7919 + seed) % 97) as f32 / 9.0 - 5.0).collect();
            let grad: Vec<f32> = (0..h * w).map(|k| ((k as u64 * 104729 + seed) % 89) as f32 / 11.0 - 4.0).collect();
            let (ga, gb) = displacement_grad_plane(&src, &grad, h, w, alpha, beta);
            let (ra, rb) = per_pixel_grad(&src, &grad, h, w, alpha, beta);
            prop_assert!((ga - ra).abs() <= 1e-3 * (1.0 + ra.abs()), "{} vs {}", ga, ra);
            prop_assert!((gb - rb).abs() <= 1e-3 * (1.0 + rb.abs()), "{} vs {}", gb, rb);
        }

        #[test]
        fn in_place_matches_out_of_place(
            h in 1usize..7, w in 1usize..7, dy in -7isize..8, dx in -7isize..8, seed in 0u64..1000
        ) {
            let src: Vec<f32> = (0..h * w).map(|k| ((k as u64 * 7919 + seed) % 97) as f32 - 48.0).collect();
            let mut a = vec![f32::NAN; h * w];
            shift_plane(&src, &mut a, h, w, dy, dx);
            let mut b = src.clone();
            shift_plane_in_place(&mut b, h, w, dy, dx);
            prop_assert_eq!(&a, &b);
            for i in 0..h {
                for j in 0..w {
                    let (si, sj) = (i as isize + dy, j as isize + dx);
                    let expect = if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                        src[si as usize * w + sj as usize]
                    } else {
                        0.0
                    };
                    prop_assert_eq!(a[i * w + j], expect);
                }
            }
        }
    }
}
