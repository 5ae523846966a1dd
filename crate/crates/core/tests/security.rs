use mpcc_core::security::is_prime;
use mpcc_core::{brute_force_counts, secrecy_table, verify_perfect_secrecy};

#[test]
fn perfect_secrecy_for_every_small_prime() {
    for p in (2..=31).filter(|&p| is_prime(p)) {
        let report = verify_perfect_secrecy(p).unwrap();
        assert!(report.holds, "p={p}");
        let expected = 1.0 / (p - 1) as f64;
        assert!(report
            .probabilities
            .iter()
            .flatten()
            .all(|&q| q == expected));
    }
}

#[test]
fn f5_table_matches_the_published_one() {
    let expected = vec![
        vec![1, 2, 3, 4],
        vec![2, 4, 1, 3],
        vec![3, 1, 4, 2],
        vec![4, 3, 2, 1],
    ];
    assert_eq!(secrecy_table(5).unwrap(), expected);
}

#[test]
fn ordered_position_count_against_the_power_bound() {
    for n in 2..=64u64 {
        for k in 1..n {
            let c = brute_force_counts(n, k, 16).unwrap();
            // a single factor meets the bound with equality
            if k == 1 {
                assert_eq!(c.index_count, c.lower_bound, "n={n}");
            } else {
                assert!(c.index_count > c.lower_bound, "n={n} k={k}");
            }
        }
    }
}
