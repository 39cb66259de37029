mod common;

use coldlab_core::metrics::{explained_variance, mape, nrmse, r2, spearman, MetricReport};
use common::{ev_ref, mape_ref, nrmse_ref, r2_ref, random_pair, spearman_ref};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * b.abs().max(1.0)
}

#[test]
fn all_metrics_match_bruteforce_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for i in 0..1000 {
        let (y, p) = random_pair(&mut rng);
        assert!(close(explained_variance(&y, &p).unwrap(), ev_ref(&y, &p)), "pair {i}: ev");
        assert!(close(mape(&y, &p).unwrap().percent, mape_ref(&y, &p)), "pair {i}: mape");
        assert!(close(nrmse(&y, &p).unwrap(), nrmse_ref(&y, &p)), "pair {i}: nrmse");
        assert!(close(r2(&y, &p).unwrap(), r2_ref(&y, &p)), "pair {i}: r2");
        assert!(close(spearman(&y, &p).unwrap(), spearman_ref(&y, &p)), "pair {i}: spearman");
    }
}

#[test]
fn hand_fixtures() {
    let y = [1.0, 2.0, 3.0];
    let flat = [2.0, 2.0, 2.0];
    assert!((nrmse(&y, &flat).unwrap() - 0.408_248_290_463_863).abs() < TOL);
    assert!((spearman(&y, &[10.0, 30.0, 20.0]).unwrap() - 0.5).abs() < TOL);
    assert!((mape(&y, &flat).unwrap().percent - 400.0 / 9.0).abs() < TOL);
    assert_eq!(spearman(&y, &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    let rep = MetricReport::compute(&y, &flat, true).unwrap();
    assert_eq!(rep.spearman, None);
    assert!(rep.undefined.iter().any(|u| u.contains("Spearman")));
}
