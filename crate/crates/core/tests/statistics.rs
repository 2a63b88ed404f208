mod common;

use common::{cohens_d_oracle, stat_pairs, t_two_sided_p, welch_oracle};
use edsim::experiments::{cohens_d, welch_t};

#[test]
fn oracle_reproduces_hand_values() {
    let (t, df, p) = welch_oracle(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!((t + 1.0).abs() < 1e-12);
    assert!((df - 8.0).abs() < 1e-12);
    assert!((p - 0.3466).abs() < 5e-5);
    // Standard normal limit of the t tail.
    assert!((t_two_sided_p(1.959963984540054, 1e5) - 0.05).abs() < 1e-5);
    assert!((cohens_d_oracle(&[8.0, 10.0, 12.0], &[10.0, 12.0, 14.0]) + 1.0).abs() < 1e-12);
}

#[test]
fn welch_matches_oracle_on_fixed_pairs() {
    for (a, b) in stat_pairs() {
        let w = welch_t(&a, &b).unwrap();
        let (t, df, p) = welch_oracle(&a, &b);
        assert!((w.t - t).abs() < 1e-9, "t {} vs {}", w.t, t);
        assert!((w.df - df).abs() < 1e-9, "df {} vs {}", w.df, df);
        assert!((w.p - p).abs() < 1e-9, "p {} vs {}", w.p, p);
    }
}

#[test]
fn cohens_d_matches_oracle_on_fixed_pairs() {
    for (a, b) in stat_pairs() {
        assert!((cohens_d(&a, &b).unwrap() - cohens_d_oracle(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn frozen_values() {
    let pairs = stat_pairs();
    let expected = [
        (-1.0, 8.0, 0.34659350708731973, -0.6324555320336759),
        (-1.224744871391589, 4.0, 0.2878641347266774, -1.0),
        (
            10.35686864972722,
            9.514001539823413,
            1.7224647024249862e-6,
            5.875073081247535,
        ),
        (
            -13.607061311884204,
            6.350902618584541,
            6.186942238639581e-6,
            -8.202982275112188,
        ),
        (
            0.353904660814635,
            11.103498226867556,
            0.7300391382571041,
            0.17188791273808202,
        ),
    ];
    for ((a, b), (t, df, p, d)) in pairs.iter().zip(expected) {
        let w = welch_t(a, b).unwrap();
        assert!((w.t - t).abs() < 1e-9 && (w.df - df).abs() < 1e-9 && (w.p - p).abs() < 1e-9);
        assert!((cohens_d(a, b).unwrap() - d).abs() < 1e-9);
    }
}

#[test]
fn improvement_gives_positive_d() {
    let baseline_los = [210.0, 205.0, 220.0, 199.0];
    let intervention_los = [150.0, 160.0, 155.0, 149.0];
    assert!(cohens_d(&baseline_los, &intervention_los).unwrap() > 0.0);
}
