//! Shift operations: integer, bilinear and quantized forwards, their gradients,
//! the displacement penalty, and in-place inference kernels.

pub mod kernels;
mod params;
mod penalty;

pub use params::{grouped_displacements, round_displacement, shift_sparsity, GroupAssignment, ShiftMode, ShiftParams};
pub use penalty::{penalty_grad_accumulate, penalty_value, Norm, PenaltyConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_channels(op: &'static str, input: &Tensor, sp: &ShiftParams) -> Result<()> {
    if input.shape().c != sp.channels() {
        return Err(Error::dim(op, "c", sp.channels(), input.shape().c));
    }
    Ok(())
}

/// Integer shift by per-channel `(dy, dx)` pixels with zero fill.
pub fn shift_integer(input: &Tensor, offsets: &[(isize, isize)]) -> Result<Tensor> {
    let s = input.shape();
    if offsets.len() != s.c {
        return Err(Error::dim("shift_integer", "c", offsets.len(), s.c));
    }
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for (c, &(dy, dx)) in offsets.iter().enumerate() {
            kernels::shift_plane(input.plane(n, c), out.plane_mut(n, c), s.h, s.w, dy, dx);
        }
    }
    Ok(out)
}

/// In-place integer shift; channels with `(0, 0)` are never touched.
pub fn shift_integer_in_place(t: &mut Tensor, offsets: &[(isize, isize)]) -> Result<()> {
    let s = t.shape();
    if offsets.len() != s.c {
        return Err(Error::dim("shift_integer_in_place", "c", offsets.len(), s.c));
    }
    for n in 0..s.n {
        for (c, &(dy, dx)) in offsets.iter().enumerate() {
            if dy != 0 || dx != 0 {
                kernels::shift_plane_in_place(t.plane_mut(n, c), s.h, s.w, dy, dx);
            }
        }
    }
    Ok(())
}

/// Bilinear shift by real-valued displacements.
///
/// When every displacement is integral the result is bitwise identical to
/// [`shift_integer`].
pub fn shift_bilinear(input: &Tensor, sp: &ShiftParams) -> Result<Tensor> {
    check_channels("shift_bilinear", input, sp)?;
    let integral = sp.alpha.iter().chain(&sp.beta).all(|v| v.fract() == 0.0);
    if integral {
        return shift_integer(input, &sp.rounded());
    }
    let s = input.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let (a, b) = (sp.alpha[c], sp.beta[c]);
            if a.fract() == 0.0 && b.fract() == 0.0 {
                kernels::shift_plane(input.plane(n, c), out.plane_mut(n, c), s.h, s.w, a as isize, b as isize);
            } else {
                kernels::bilinear_plane(input.plane(n, c), out.plane_mut(n, c), s.h, s.w, a, b);
            }
        }
    }
    Ok(out)
}

/// Forward of the sparse shift layer: displacements rounded half away from zero.
pub fn shift_quantized(input: &Tensor, sp: &ShiftParams) -> Result<Tensor> {
    check_channels("shift_quantized", input, sp)?;
    shift_integer(input, &sp.rounded())
}

/// Dispatches on `mode`: bilinear for the active shift, rounded integer otherwise.
pub fn shift_forward(input: &Tensor, sp: &ShiftParams, mode: ShiftMode) -> Result<Tensor> {
    match mode {
        ShiftMode::ActiveBilinear => shift_bilinear(input, sp),
        ShiftMode::Grouped { .. } | ShiftMode::SparseQuantized => shift_quantized(input, sp),
    }
}

/// Input gradient of the quantized shift: the reverse integer movement.
pub fn shift_backward_input(sp: &ShiftParams, grad_out: &Tensor) -> Result<Tensor> {
    check_channels("shift_backward_input", grad_out, sp)?;
    let reversed: Vec<_> = sp.rounded().into_iter().map(|(a, b)| (a.saturating_neg(), b.saturating_neg())).collect();
    shift_integer(grad_out, &reversed)
}

/// Input gradient of the bilinear shift (exact transpose).
pub fn shift_bilinear_backward_input(sp: &ShiftParams, grad_out: &Tensor) -> Result<Tensor> {
    check_channels("shift_bilinear_backward_input", grad_out, sp)?;
    let s = grad_out.shape();
    let mut gin = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            kernels::bilinear_plane_adjoint(
                grad_out.plane(n, c),
                gin.plane_mut(n, c),
                s.h,
                s.w,
                sp.alpha[c],
                sp.beta[c],
            );
        }
    }
    Ok(gin)
}

/// Accumulates displacement gradients into `sp.grad_alpha` / `sp.grad_beta`.
///
/// The slope is taken from the bilinear interpolant at the current real-valued
/// displacement, for both the bilinear and the quantized forward. Frozen
/// parameters are left untouched.
pub fn shift_backward_params(input: &Tensor, grad_out: &Tensor, sp: &mut ShiftParams) -> Result<()> {
    check_channels("shift_backward_params", input, sp)?;
    crate::tensor::check_same_shape("shift_backward_params", input.shape(), grad_out.shape())?;
    if sp.frozen {
        return Ok(());
    }
    let s = input.shape();
    for c in 0..s.c {
        let (mut ga, mut gb) = (0.0f64, 0.0f64);
        for n in 0..s.n {
            let (a, b) = kernels::displacement_grad_plane(
                input.plane(n, c),
                grad_out.plane(n, c),
                s.h,
                s.w,
                sp.alpha[c],
                sp.beta[c],
            );
            ga += a;
            gb += b;
        }
        sp.grad_alpha[c] += ga as f32;
        sp.grad_beta[c] += gb as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use crate::testing::{fd_check, naive_bilinear_f64, rel_err, seeded};
    use proptest::prelude::*;
    use rand::Rng;

    fn ramp() -> Tensor {
        Tensor::new(Shape::new(1, 1, 3, 3), (1..=9).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn ramp_shift_down() {
        let sp = ShiftParams::from_displacements(vec![1.0], vec![0.0]).unwrap();
        let out = shift_quantized(&ramp(), &sp).unwrap();
        assert_eq!(out.data(), &[4., 5., 6., 7., 8., 9., 0., 0., 0.]);
    }

    #[test]
    fn quantized_rounds_before_moving() {
        let sp = ShiftParams::from_displacements(vec![0.6], vec![-0.4]).unwrap();
        let out = shift_quantized(&ramp(), &sp).unwrap();
        assert_eq!(out.data(), &[4., 5., 6., 7., 8., 9., 0., 0., 0.]);
    }

    #[test]
    fn zero_displacement_is_identity() {
        let mut rng = seeded(40);
        let x = Tensor::randn(Shape::new(2, 4, 5, 6), 1.0, &mut rng);
        let sp = ShiftParams::zeros(4);
        assert_eq!(shift_quantized(&x, &sp).unwrap(), x);
        assert_eq!(shift_bilinear(&x, &sp).unwrap(), x);
    }

    #[test]
    fn half_pixel_bilinear() {
        let x = Tensor::new(Shape::new(1, 1, 1, 3), vec![0.0, 2.0, 4.0]).unwrap();
        let sp = ShiftParams::from_displacements(vec![0.0], vec![0.5]).unwrap();
        assert_eq!(shift_bilinear(&x, &sp).unwrap().data(), &[1.0, 3.0, 2.0]);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = Tensor::zeros(Shape::new(1, 3, 2, 2));
        let sp = ShiftParams::zeros(4);
        assert_eq!(shift_quantized(&x, &sp).unwrap_err(), Error::dim("shift_quantized", "c", 4, 3));
    }

    #[test]
    fn bilinear_matches_oracle() {
        let mut rng = seeded(41);
        let x = Tensor::randn(Shape::new(2, 5, 6, 7), 1.0, &mut rng);
        let alpha: Vec<f32> = (0..5).map(|_| rng.random_range(-2.5f32..2.5)).collect();
        let beta: Vec<f32> = (0..5).map(|_| rng.random_range(-2.5f32..2.5)).collect();
        let sp = ShiftParams::from_displacements(alpha.clone(), beta.clone()).unwrap();
        let ours = shift_bilinear(&x, &sp).unwrap();
        let a64: Vec<f64> = alpha.iter().map(|&v| v as f64).collect();
        let b64: Vec<f64> = beta.iter().map(|&v| v as f64).collect();
        let oracle = naive_bilinear_f64(&x, &a64, &b64);
        for (o, e) in ours.data().iter().zip(&oracle) {
            assert!((*o as f64 - e).abs() < 1e-6, "{o} vs {e}");
        }
    }

    #[test]
    fn displacement_grad_matches_fd() {
        let mut rng = seeded(42);
        let x = Tensor::randn(Shape::new(2, 4, 6, 6), 1.0, &mut rng);
        let g = Tensor::randn(x.shape(), 1.0, &mut rng);
        // Keep displacements away from integer and half-integer kinks.
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| {
            let base = rng.random_range(-2i32..2) as f32;
            let frac = rng.random_range(0.1f32..0.4) + if rng.random::<bool>() { 0.5 } else { 0.0 };
            base + frac
        };
        let alpha: Vec<f32> = (0..4).map(|_| pick(&mut rng)).collect();
        let beta: Vec<f32> = (0..4).map(|_| pick(&mut rng)).collect();
        let mut sp = ShiftParams::from_displacements(alpha.clone(), beta.clone()).unwrap();
        shift_backward_params(&x, &g, &mut sp).unwrap();

        let objective = |a: &[f64], b: &[f64]| -> f64 {
            naive_bilinear_f64(&x, a, b).iter().zip(g.data()).map(|(y, &gv)| y * gv as f64).sum()
        };
        let a64: Vec<f64> = alpha.iter().map(|&v| v as f64).collect();
        let b64: Vec<f64> = beta.iter().map(|&v| v as f64).collect();
        for c in 0..4 {
            let fd_a = fd_check(a64[c], 1e-4, |v| {
                let mut a = a64.clone();
                a[c] = v;
                objective(&a, &b64)
            });
            let fd_b = fd_check(b64[c], 1e-4, |v| {
                let mut b = b64.clone();
                b[c] = v;
                objective(&a64, &b)
            });
            assert!(rel_err(sp.grad_alpha[c] as f64, fd_a) < 1e-3, "alpha {c}: {} vs {fd_a}", sp.grad_alpha[c]);
            assert!(rel_err(sp.grad_beta[c] as f64, fd_b) < 1e-3, "beta {c}: {} vs {fd_b}", sp.grad_beta[c]);
        }
    }

    #[test]
    fn frozen_params_get_no_grad() {
        let mut rng = seeded(43);
        let x = Tensor::randn(Shape::new(1, 2, 4, 4), 1.0, &mut rng);
        let mut sp = ShiftParams::from_displacements(vec![0.3, -0.7], vec![0.2, 1.4]).unwrap();
        sp.frozen = true;
        shift_backward_params(&x, &x, &mut sp).unwrap();
        assert_eq!(sp.grad_alpha, vec![0.0, 0.0]);
        assert_eq!(sp.grad_beta, vec![0.0, 0.0]);
    }

    #[test]
    fn bilinear_adjoint_exact() {
        let mut rng = seeded(44);
        let x = Tensor::randn(Shape::new(2, 3, 5, 5), 1.0, &mut rng);
        let g = Tensor::randn(x.shape(), 1.0, &mut rng);
        let sp = ShiftParams::from_displacements(vec![0.3, -1.6, 2.2], vec![-0.45, 0.9, 0.0]).unwrap();
        let y = shift_bilinear(&x, &sp).unwrap();
        let gx = shift_bilinear_backward_input(&sp, &g).unwrap();
        assert!(rel_err(y.dot(&g).unwrap(), x.dot(&gx).unwrap()) < 1e-5);
    }

    #[test]
    fn half_rounds_up_to_full_row() {
        let half = ShiftParams::from_displacements(vec![0.5], vec![0.0]).unwrap();
        let one = ShiftParams::from_displacements(vec![1.0], vec![0.0]).unwrap();
        assert_eq!(shift_quantized(&ramp(), &half).unwrap(), shift_quantized(&ramp(), &one).unwrap());
    }

    #[test]
    fn constant_field_interior_grad_is_zero() {
        let x = Tensor::full(Shape::new(1, 1, 8, 8), 3.0);
        let mut g = Tensor::zeros(x.shape());
        for i in 2..6 {
            for j in 2..6 {
                g.set(0, 0, i, j, 1.0);
            }
        }
        let mut sp = ShiftParams::from_displacements(vec![0.25], vec![0.25]).unwrap();
        shift_backward_params(&x, &g, &mut sp).unwrap();
        let objective = |a: f64, b: f64| -> f64 {
            naive_bilinear_f64(&x, &[a], &[b]).iter().zip(g.data()).map(|(y, &gv)| y * gv as f64).sum()
        };
        let fd_a = fd_check(0.25, 1e-4, |v| objective(v, 0.25));
        assert!(fd_a.abs() < 1e-9);
        assert!(sp.grad_alpha[0].abs() < 1e-6);
        assert!(sp.grad_beta[0].abs() < 1e-6);
    }

    #[test]
    fn zero_grad_out_gives_zero_displacement_grad() {
        let mut rng = seeded(45);
        let x = Tensor::randn(Shape::new(1, 3, 4, 4), 1.0, &mut rng);
        let mut sp = ShiftParams::from_displacements(vec![0.3, 1.0, -0.6], vec![0.0, 0.7, 0.2]).unwrap();
        shift_backward_params(&x, &Tensor::zeros(x.shape()), &mut sp).unwrap();
        assert!(sp.grad_alpha.iter().chain(&sp.grad_beta).all(|&g| g == 0.0));
    }

    #[test]
    fn reverse_movement_restores_interior() {
        let mut rng = seeded(46);
        let x = Tensor::randn(Shape::new(1, 1, 5, 5), 1.0, &mut rng);
        let sp = ShiftParams::from_displacements(vec![1.0], vec![-2.0]).unwrap();
        let back = shift_backward_input(&sp, &shift_quantized(&x, &sp).unwrap()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let kept = i >= 1 && j < 3;
                let expect = if kept { x.at(0, 0, i, j) } else { 0.0 };
                assert_eq!(back.at(0, 0, i, j), expect);
            }
        }
    }

    #[test]
    fn pass_through_grad_at_zero() {
        let mut rng = seeded(47);
        let g = Tensor::randn(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
        assert_eq!(shift_backward_input(&ShiftParams::zeros(3), &g).unwrap(), g);
    }

    #[test]
    fn sub_half_displacement_is_identity_with_nonzero_pull() {
        let mut rng = seeded(48);
        let x = Tensor::randn(Shape::new(1, 2, 4, 4), 1.0, &mut rng);
        let mut sp = ShiftParams::from_displacements(vec![0.3, -0.45], vec![-0.2, 0.1]).unwrap();
        assert_eq!(shift_quantized(&x, &sp).unwrap(), x);
        for norm in [Norm::L1, Norm::L2] {
            sp.zero_grad();
            penalty_grad_accumulate(&mut sp, &PenaltyConfig { lambda: 1e-3, norm });
            for c in 0..2 {
                assert!(sp.grad_alpha[c] != 0.0 && sp.grad_alpha[c].signum() == sp.alpha[c].signum());
                assert!(sp.grad_beta[c] != 0.0 && sp.grad_beta[c].signum() == sp.beta[c].signum());
            }
        }
    }

    fn shifted_tensor() -> impl Strategy<Value = (Tensor, ShiftParams)> {
        (1usize..3, 1usize..5, 1usize..8, 1usize..8, any::<u64>()).prop_flat_map(|(n, c, h, w, seed)| {
            let disp = proptest::collection::vec(-4.0f32..4.0, c);
            (disp.clone(), disp).prop_map(move |(a, b)| {
                let x = Tensor::randn(Shape::new(n, c, h, w), 1.0, &mut seeded(seed));
                (x, ShiftParams::from_displacements(a, b).unwrap())
            })
        })
    }

    proptest! {
        #[test]
        fn quantized_equals_rounded_integer_shift((x, sp) in shifted_tensor()) {
            let rounded = ShiftParams::from_displacements(
                sp.alpha.iter().map(|v| v.round()).collect(),
                sp.beta.iter().map(|v| v.round()).collect(),
            ).unwrap();
            let a = shift_quantized(&x, &sp).unwrap();
            let b = shift_bilinear(&x, &rounded).unwrap();
            prop_assert_eq!(
                a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn quantized_adjoint_is_exact((x, sp) in shifted_tensor(), seed in any::<u64>()) {
            let g = Tensor::randn(x.shape(), 1.0, &mut seeded(seed));
            let y = shift_quantized(&x, &sp).unwrap();
            let gx = shift_backward_input(&sp, &g).unwrap();
            prop_assert!(rel_err(y.dot(&g).unwrap(), x.dot(&gx).unwrap()) < 1e-6);
        }

        #[test]
        fn shift_never_adds_energy((x, sp) in shifted_tensor()) {
            let y = shift_quantized(&x, &sp).unwrap();
            prop_assert!(y.dot(&y).unwrap() <= x.dot(&x).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn bilinear_keeps_max_norm_of_nonnegative((x, sp) in shifted_tensor()) {
            let x = x.map(f32::abs);
            let y = shift_bilinear(&x, &sp).unwrap();
            prop_assert!(y.max_abs() <= x.max_abs() * (1.0 + 1e-6));
        }

        #[test]
        fn sparsity_ignores_sub_half_perturbations(
            a in proptest::collection::vec(-3i32..4, 1..12),
            seed in any::<u64>(),
        ) {
            let mut rng = seeded(seed);
            let beta: Vec<f32> = a.iter().map(|_| rng.random_range(-1i32..2) as f32).collect();
            let base = ShiftParams::from_displacements(a.iter().map(|&v| v as f32).collect(), beta.clone()).unwrap();
            let jitter = |v: f32, rng: &mut rand_chacha::ChaCha8Rng| v + rng.random_range(-0.499f32..0.499);
            let moved = ShiftParams::from_displacements(
                base.alpha.iter().map(|&v| jitter(v, &mut rng)).collect(),
                beta.iter().map(|&v| jitter(v, &mut rng)).collect(),
            ).unwrap();
            prop_assert_eq!(shift_sparsity(&base), shift_sparsity(&moved));
        }

        #[test]
        fn in_place_matches_functional((x, sp) in shifted_tensor()) {
            let mut t = x.clone();
            shift_integer_in_place(&mut t, &sp.rounded()).unwrap();
            prop_assert_eq!(t, shift_quantized(&x, &sp).unwrap());
        }
    }
}
