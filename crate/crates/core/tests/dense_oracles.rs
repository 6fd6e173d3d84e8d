//! Generator and I/O checks against independent oracles.

mod support;

use caqr_core::dense::{
    generate, generate_with_condition, read_matrix, write_matrix, GeneratorKind,
};
use proptest::prelude::*;
use support::measured_condition;

#[test]
fn condition_one_gives_orthonormal_columns() {
    let a = generate_with_condition(50, 50, 1.0, 7).unwrap();
    let kappa = measured_condition(&a);
    assert!((kappa - 1.0).abs() <= 1e-10, "kappa = {}", kappa);
}

#[test]
fn requested_condition_hit_within_factor_two() {
    for (m, n, kappa, seed) in [
        (50usize, 50usize, 1.0f64, 3u64),
        (100, 20, 1e3, 4),
        (500, 50, 1e8, 5),
        (8, 3, 10.0, 6),
    ] {
        let a = generate_with_condition(m, n, kappa, seed).unwrap();
        let measured = measured_condition(&a);
        assert!(
            measured >= kappa / 2.0 && measured <= kappa * 2.0,
            "({}, {}, {:e}): measured {:e}",
            m,
            n,
            kappa,
            measured
        );
    }
}

#[test]
fn explicit_three_value_spectrum() {
    // (8, 3, kappa=10): log-spaced singular values 1, 10^{-1/2}, 10^{-1}
    let a = generate_with_condition(8, 3, 10.0, 11).unwrap();
    let sv = support::jacobi_singular_values(&a);
    let expect = [1.0, 10f64.powf(-0.5), 0.1];
    for (got, want) in sv.iter().zip(expect.iter()) {
        assert!((got - want).abs() <= 1e-10 * want, "{} vs {}", got, want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn text_format_round_trips(m in 1usize..12, n in 1usize..9, seed in 0u64..1000) {
        let a = generate(GeneratorKind::Uniform, m, n, seed).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        let b = read_matrix(&mut &buf[..]).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn block_owner_round_trip(pr in 1usize..5, pc in 1usize..5, gi in 1usize..9, gj in 1usize..9) {
        let layout = caqr_core::BlockCyclicLayout::new(pr, pc, 1).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..gi {
            for j in 0..gj {
                prop_assert!(seen.insert(caqr_core::block_owner(i, j, &layout)));
            }
        }
    }
}
