use nbb_core::device::{sample_device, DeviceParams, MemristorCell};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn pulse() -> impl Strategy<Value = (f64, f64)> {
    (-3.0f64..3.0, 0.0f64..1e-5)
}

#[test]
fn one_microsecond_set_pulse_moves_a_quarter() {
    let mut cell = MemristorCell::new(DeviceParams::default().noiseless());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for expected in [0.25, 0.5, 0.75, 1.0, 1.0] {
        cell.apply_pulse(1.4, 1e-6, &mut rng);
        assert!((cell.state() - expected).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn state_stays_in_unit_interval(
        x0 in 0.0f64..=1.0,
        pulses in prop::collection::vec(pulse(), 0..40),
        seed in any::<u64>(),
    ) {
        let mut cell = MemristorCell::with_state(DeviceParams::default(), x0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (v, w) in pulses {
            cell.apply_pulse(v, w, &mut rng);
            prop_assert!((0.0..=1.0).contains(&cell.state()));
            let g = cell.conductance();
            let p = cell.params();
            prop_assert!(g >= p.g_hrs() * (1.0 - 1e-12) && g <= p.g_lrs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn update_direction_follows_polarity(x0 in 0.0f64..=1.0, (v, w) in pulse(), seed in any::<u64>()) {
        let p = DeviceParams::default();
        let mut cell = MemristorCell::with_state(p, x0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dx = cell.apply_pulse(v, w, &mut rng);
        if v > p.v_set {
            prop_assert!(dx >= 0.0);
        } else if v < p.v_reset {
            prop_assert!(dx <= 0.0);
        } else {
            prop_assert_eq!(dx, 0.0);
            prop_assert_eq!(cell.state(), x0);
        }
    }

    #[test]
    fn noiseless_update_matches_power_law(x0 in 0.0f64..=1.0, (v, w) in pulse()) {
        let p = DeviceParams::default().noiseless();
        let mut cell = MemristorCell::with_state(p, x0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        cell.apply_pulse(v, w, &mut rng);
        let raw = if v > 0.9 {
            1e6 * (v - 0.9) * (v - 0.9) * w
        } else if v < -0.9 {
            -1e6 * (-v - 0.9) * (-v - 0.9) * w
        } else {
            0.0
        };
        let expected = (x0 + raw).clamp(0.0, 1.0);
        prop_assert!((cell.state() - expected).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_trajectory(pulses in prop::collection::vec(pulse(), 1..30), seed in any::<u64>()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cell = sample_device(&DeviceParams::default(), &mut rng).unwrap();
            pulses.iter().map(|&(v, w)| { cell.apply_pulse(v, w, &mut rng); cell.state() }).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn stronger_drive_moves_further(x0 in 0.0f64..=1.0, v in 0.9f64..2.0, extra in 0.0f64..1.0, w in 1e-9f64..1e-5) {
        let p = DeviceParams::default().noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = MemristorCell::with_state(p, x0);
        let mut b = MemristorCell::with_state(p, x0);
        a.apply_pulse(v, w, &mut rng);
        b.apply_pulse(v + extra, w, &mut rng);
        prop_assert!(b.state() >= a.state());
        let mut a = MemristorCell::with_state(p, x0);
        let mut b = MemristorCell::with_state(p, x0);
        a.apply_pulse(-v, w, &mut rng);
        b.apply_pulse(-v - extra, w, &mut rng);
        prop_assert!(b.state() <= a.state());
    }

    #[test]
    fn conductance_is_monotone_in_state(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let p = DeviceParams::default();
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(MemristorCell::with_state(p, lo).conductance() <= MemristorCell::with_state(p, hi).conductance());
    }
}
