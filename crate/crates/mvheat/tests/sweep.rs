use std::path::PathBuf;

use mvheat::experiments::{cmd_alpha_sweep, RunConfig, SweepRow};
use mvheat::Scheme;

fn coarse(points: usize) -> RunConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", "coarse.toml"].iter().collect();
    let mut cfg = RunConfig::from_path(&path).unwrap();
    cfg.sweep.points = points;
    cfg
}

fn sweep(cfg: &RunConfig) -> Vec<SweepRow> {
    let dir = std::env::temp_dir().join(format!("mvheat-sweep-test-{}-{}", std::process::id(), cfg.sweep.points));
    let (rows, summaries) = cmd_alpha_sweep(cfg, &[Scheme::Vd, Scheme::Dg], &dir).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    for s in &summaries {
        let first = rows.iter().find(|r| r.scheme == s.scheme).unwrap();
        assert_eq!(first.alpha, s.alpha_critical);
        assert!(first.measure_norm < 1e-10, "{}: {}", s.scheme, first.measure_norm);
        assert_eq!(first.support_size, 0);
    }
    rows
}

#[test]
fn norm_grows_and_tracking_error_shrinks_as_alpha_decreases() {
    let rows = sweep(&coarse(40));
    for scheme in [Scheme::Vd, Scheme::Dg] {
        let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.scheme == scheme).collect();
        assert_eq!(sel.len(), 40);
        for w in sel.windows(2) {
            assert!(w[1].alpha < w[0].alpha);
            assert!(w[1].measure_norm >= w[0].measure_norm, "{scheme} alpha={}", w[1].alpha);
            assert!(w[1].tracking_error <= w[0].tracking_error, "{scheme} alpha={}", w[1].alpha);
            assert!(w[1].duality_gap.abs() < 1e-8);
        }
    }
}

#[test]
fn coarse_steps_in_alpha_still_converge() {
    // few points: large jumps from the critical alpha
    let rows = sweep(&coarse(6));
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.duality_gap.abs() < 1e-8));
}
