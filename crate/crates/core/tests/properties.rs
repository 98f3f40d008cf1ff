use flowsr::degradation::{degrade_bd, degrade_bi, DegradationSpec};
use flowsr::flow_ops::{depth_to_space, space_to_depth, total_variation, warp};
use flowsr::frames::Dihedral;
use flowsr::{FlowField, FlowLevel, Frame};
use proptest::prelude::*;

fn frame_strategy(max: usize) -> impl Strategy<Value = Frame> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..1.0, h * w).prop_map(move |v| Frame::new(h, w, v).unwrap())
    })
}

fn lincomb(a: f64, x: &Frame, b: f64, y: &Frame) -> Frame {
    let v = x.luma().iter().zip(y.luma()).map(|(p, q)| a * p + b * q).collect();
    Frame::new(x.height(), x.width(), v).unwrap()
}

fn max_abs_diff(x: &Frame, y: &Frame) -> f64 {
    x.luma().iter().zip(y.luma()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dihedral_inverse_restores_frame(f in frame_strategy(9), k in 0usize..8) {
        let d = Dihedral::ALL[k];
        let g = d.apply(&f);
        prop_assert_eq!(g.dims(), d.output_dims(f.height(), f.width()));
        prop_assert_eq!(d.inverse().apply(&g), f);
    }

    #[test]
    fn space_to_depth_permutes_dyadic_fields(
        s in 2usize..=4,
        (h, w) in (1usize..5, 1usize..5),
        seed in prop::collection::vec(-4096i32..4096, 2 * 16 * 16),
    ) {
        // multiples of s/64 so that division by s is exact
        let (hh, ww) = (h * s, w * s);
        let flow = FlowField::from_fn(FlowLevel::Hr, hh, ww, |y, x| {
            let i = y * ww + x;
            (seed[i] as f64 * s as f64 / 64.0, seed[i + 256] as f64 * s as f64 / 64.0)
        });
        let cube = space_to_depth(&flow, s).unwrap();
        prop_assert_eq!(cube.dims(), (h, w));
        let back = depth_to_space(&cube);
        prop_assert_eq!(back.u(), flow.u());
        prop_assert_eq!(back.v(), flow.v());
        let mut folded: Vec<f64> = cube.tensor().data.clone();
        let mut expected: Vec<f64> = flow.u().iter().chain(flow.v()).map(|x| x / s as f64).collect();
        folded.sort_by(f64::total_cmp);
        expected.sort_by(f64::total_cmp);
        prop_assert_eq!(folded, expected);
    }

    #[test]
    fn power_of_two_folding_is_exact_for_any_values(
        e in 1u32..=2,
        vals in prop::collection::vec(-50.0f64..50.0, 2 * 8 * 8),
    ) {
        let s = 1usize << e;
        let n = 8 / s * s;
        let flow = FlowField::from_fn(FlowLevel::Hr, n, n, |y, x| (vals[y * n + x], vals[64 + y * n + x]));
        let back = depth_to_space(&space_to_depth(&flow, s).unwrap());
        prop_assert_eq!(back, flow);
    }

    #[test]
    fn integer_warp_shifts_indices(
        f in frame_strategy(10),
        du in -2i32..=2,
        dv in -2i32..=2,
    ) {
        let (h, w) = f.dims();
        let flow = FlowField::constant(FlowLevel::Hr, h, w, du as f64, dv as f64);
        let out = warp(&f, &flow).unwrap();
        for y in 0..h as i32 {
            for x in 0..w as i32 {
                let (sy, sx) = (y + dv, x + du);
                if sy >= 0 && sx >= 0 && sy < h as i32 && sx < w as i32 {
                    prop_assert_eq!(out.at(y as usize, x as usize), f.at(sy as usize, sx as usize));
                }
            }
        }
    }

    #[test]
    fn total_variation_is_absolutely_homogeneous(
        vals in prop::collection::vec(-5.0f64..5.0, 2 * 6 * 7),
        a in -3.0f64..3.0,
    ) {
        let f = FlowField::from_fn(FlowLevel::Lr, 6, 7, |y, x| (vals[y * 7 + x], vals[42 + y * 7 + x]));
        let g = FlowField::from_fn(FlowLevel::Lr, 6, 7, |y, x| {
            let (u, v) = f.at(y, x);
            (a * u, a * v)
        });
        let (tf, tg) = (total_variation(&f), total_variation(&g));
        prop_assert!((tg - a.abs() * tf).abs() <= 1e-12 * (1.0 + tg.abs()));
    }

    #[test]
    fn degradation_is_linear(
        s in 2usize..=4,
        (h, w) in (1usize..5, 1usize..5),
        data in prop::collection::vec(0.0f64..1.0, 2 * 16 * 16),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let (hh, ww) = (h * s, w * s);
        let x = Frame::new(hh, ww, data[..hh * ww].to_vec()).unwrap();
        let y = Frame::new(hh, ww, data[256..256 + hh * ww].to_vec()).unwrap();
        let mix = lincomb(a, &x, b, &y);
        let bd = DegradationSpec::blur_decimate(s, None);
        let lhs = degrade_bi(&mix, s).unwrap();
        let rhs = lincomb(a, &degrade_bi(&x, s).unwrap(), b, &degrade_bi(&y, s).unwrap());
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
        let lhs = degrade_bd(&mix, &bd).unwrap();
        let rhs = lincomb(a, &degrade_bd(&x, &bd).unwrap(), b, &degrade_bd(&y, &bd).unwrap());
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn degradation_preserves_constants(s in 2usize..=4, c in 0.0f64..1.0, sigma in 0.5f64..3.0) {
        let f = Frame::filled(4 * s, 3 * s, c);
        for lr in [
            degrade_bi(&f, s).unwrap(),
            degrade_bd(&f, &DegradationSpec::blur_decimate(s, Some(sigma))).unwrap(),
        ] {
            prop_assert_eq!(lr.dims(), (4, 3));
            prop_assert!(lr.luma().iter().all(|v| (v - c).abs() < 1e-12));
        }
    }

    #[test]
    fn blur_decimate_stays_within_input_range(
        s in 2usize..=4,
        data in prop::collection::vec(0.0f64..1.0, 16 * 16),
    ) {
        let n = 4 * s;
        let f = Frame::new(n, n, data[..n * n].to_vec()).unwrap();
        let (lo, hi) = f.luma().iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let lr = degrade_bd(&f, &DegradationSpec::blur_decimate(s, None)).unwrap();
        prop_assert!(lr.luma().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}
