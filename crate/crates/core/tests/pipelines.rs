use cwlab_core::gmm::{separation_stats, Mixture};
use cwlab_core::hierarchy::{critical_schedule, synthesize_tree, validate_tree, verify_schedule_empirical, MixtureTree};
use cwlab_core::io::{mixture_from_toml, mixture_to_toml};
use cwlab_core::sim::{occupancy_curve, Integrator};
use cwlab_core::windows::{bounds_identity, WINDOW_CSV_HEADER};
use cwlab_core::{StreamKey, SubsetSpec, TrajectoryConfig};

fn fig() -> Mixture<f64> {
    Mixture::isotropic_equal(vec![vec![-15100.0], vec![-14900.0], vec![14900.0], vec![15100.0]]).unwrap()
}

fn sub(ix: &[usize]) -> SubsetSpec {
    SubsetSpec::new(ix.to_vec(), 4).unwrap()
}

#[test]
fn figure_config_survives_toml_and_drives_occupancy() {
    let m: Mixture<f64> = mixture_from_toml(&mixture_to_toml(&fig())).unwrap();
    assert_eq!(m, fig());
    let narrow = bounds_identity(&separation_stats(&m, &sub(&[1]), &sub(&[0, 1])).unwrap(), 0.1).unwrap();
    let row = narrow.to_csv_row("1", "0;1");
    assert_eq!(row.split(',').count(), WINDOW_CSV_HEADER.split(',').count());
    let mid = 0.5 * (narrow.t_lower.unwrap() + narrow.t_upper.unwrap());
    let cfg = TrajectoryConfig::new(1.0).with_steps(2000).with_integrator(Integrator::Exponential);
    let curve = occupancy_curve(&m, &sub(&[1]), &[0.5, mid], &cfg, 300, 5.0, StreamKey::new(51)).unwrap();
    // before any window the samples stay in cluster 1; between the thresholds
    // they split over {0, 1}
    assert!(curve.proportions[0][1] >= 0.95);
    let pair = curve.proportions[1][0] + curve.proportions[1][1];
    assert!(pair >= 0.95 && (0.3..=0.7).contains(&curve.proportions[1][0]), "{:?}", curve.proportions[1]);
}

#[test]
fn synthesized_tree_round_trips_and_validates() {
    let (tree, m) = synthesize_tree(3, 1e6, 8, 1e-3, StreamKey::new(52)).unwrap();
    let back = MixtureTree::from_toml(&tree.to_toml()).unwrap();
    let m2: Mixture<f64> = mixture_from_toml(&mixture_to_toml(&m)).unwrap();
    assert!(validate_tree(&back, &m2).is_empty());
}

#[test]
fn deep_tree_schedule_is_realized_by_the_sampler() {
    let eps = 0.2;
    let (tree, m) = synthesize_tree(6, 3e10, 64, 1e-3, StreamKey::new(53)).unwrap();
    assert!(validate_tree(&tree, &m).is_empty());
    let s = critical_schedule(&tree, 0, eps).unwrap();
    assert!(s.k >= 2);
    let cfg = TrajectoryConfig::new(1.0).with_steps(2000).with_integrator(Integrator::Exponential);
    let checks = verify_schedule_empirical(&tree, &m, 0, &s, 200, 12.0, &cfg, StreamKey::new(54)).unwrap();
    for c in &checks {
        // 1 − 5ε is vacuous at ε = 0.2; the samples should miss f(u) at most
        // at the TV scale
        assert!(c.inside >= 1.0 - eps, "level {}: {}", c.level, c.inside);
    }
}
