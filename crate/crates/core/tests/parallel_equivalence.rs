//! The concurrency contract: campaign results are bit-identical across
//! thread-pool sizes because every cell derives its own seed. Runs the
//! real workloads under a 1-thread and an 8-thread pool.

use crcal_core::calibration::{run_full_calibration, CalibrationConfig};
use crcal_core::clifford::CliffordGroup;
use crcal_core::device::DeviceConfig;
use crcal_core::pulse::{EchoedCrSchedule, PulseParams};
use crcal_core::rb::{run_rb_curve, RbConfig, RbVariant};
use crcal_core::tomography::run_tomography;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
}

#[test]
fn tomography_is_identical_across_pool_sizes() {
    let dev = DeviceConfig::default_virtual();
    let cr = PulseParams::flat_top_gaussian(0.25, 0.1, 200.0, 20.0).unwrap();
    let schedule = EchoedCrSchedule::new(cr, None, 0.0).unwrap();
    let widths: Vec<f64> = (0..16).map(|k| k as f64 * 250.0).collect();

    let serial = pool(1).install(|| run_tomography(&dev, &schedule, &widths, 5000, 3).unwrap());
    let parallel = pool(8).install(|| run_tomography(&dev, &schedule, &widths, 5000, 3).unwrap());
    assert_eq!(serial, parallel);
}

#[test]
fn calibration_is_identical_across_pool_sizes() {
    let dev = DeviceConfig::default_virtual();
    let config = CalibrationConfig {
        sweep_shots: 3000,
        tomography_shots: 3000,
        ..CalibrationConfig::with_seed(21)
    };
    let theta = 0.7;
    let serial = pool(1).install(|| run_full_calibration(&dev, theta, &config).unwrap());
    let parallel = pool(8).install(|| run_full_calibration(&dev, theta, &config).unwrap());
    assert_eq!(serial.gate, parallel.gate);
    assert_eq!(serial.verification.summary, parallel.verification.summary);
}

#[test]
fn rb_curve_is_identical_across_pool_sizes() {
    let dev = DeviceConfig::default_virtual();
    let group = CliffordGroup::enumerate();
    let cfg = RbConfig {
        n_seeds: 4,
        shots: 2000,
        n_max: 33,
        ..RbConfig::default()
    };
    let serial = pool(1)
        .install(|| run_rb_curve(&dev, &group, &cfg, 5, RbVariant::StandardInterleaved).unwrap());
    let parallel = pool(8)
        .install(|| run_rb_curve(&dev, &group, &cfg, 5, RbVariant::StandardInterleaved).unwrap());
    assert_eq!(serial, parallel);
}
