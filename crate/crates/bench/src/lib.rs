//! Benchmark fixtures shared by the criterion targets.

use relaydex::RelayParams;

/// A stable, stressful single-relay instance: deep buffer, moderate load.
pub fn deep_buffer_relay() -> RelayParams {
    RelayParams::new(0.3, 0.6, 1.0, 500)
}

/// The relay mix used by the simulator benchmarks.
pub fn five_relay_mix() -> Vec<RelayParams> {
    let f = [0.68, 0.63, 0.55, 0.44, 0.38];
    let l = [0.71, 0.64, 0.60, 0.56, 0.47];
    let c = [92.0, 79.0, 56.0, 38.0, 25.0];
    (0..5).map(|i| RelayParams::new(f[i], l[i], c[i], 500)).collect()
}
