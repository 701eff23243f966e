use std::sync::OnceLock;

use ddfilt::calibration::{calibrate, GoldenOptions, RecordingProbe, SimulatedProbe};
use ddfilt::coherence::{coherence_threshold, Strategy};
use ddfilt::optimize::build_ofdd_set;
use ddfilt::{NoiseSpectrum, OptimizerConfig, SequenceSet, TauGrid};

fn set() -> &'static SequenceSet {
    static SET: OnceLock<SequenceSet> = OnceLock::new();
    SET.get_or_init(|| {
        let cfg = OptimizerConfig { grid: TauGrid::new(0.01, 40.0, 400), ..OptimizerConfig::default() };
        build_ofdd_set(6, 0.0, &cfg).unwrap().set
    })
}

fn probe(omega_d: f64, shots: Option<u64>, seed: u64) -> SimulatedProbe {
    let spec = NoiseSpectrum::ohmic(1.0).with_omega_d(omega_d).unwrap();
    SimulatedProbe::new(spec, 0.0, shots, seed).unwrap()
}

#[test]
fn noiseless_probe_recovers_cutoff() {
    let mut p = probe(1.0e4, None, 0);
    let (tc, r) = calibrate(&mut p, set(), Strategy::Cpmg, &GoldenOptions::default()).unwrap();
    assert!((r.omega_d_estimate / 1.0e4 - 1.0).abs() < 0.05, "{}", r.omega_d_estimate);
    assert!(r.error < coherence_threshold(), "optimized error {} above the CPMG threshold", r.error);
    assert!(tc.tau_c > 0.0);
}

#[test]
fn noisy_probe_recovers_cutoff() {
    let mut p = probe(1.0e4, Some(1000), 7);
    let (_, r) = calibrate(&mut p, set(), Strategy::Cpmg, &GoldenOptions::default()).unwrap();
    assert!((r.omega_d_estimate / 1.0e4 - 1.0).abs() < 0.15, "{}", r.omega_d_estimate);
}

#[test]
fn halving_the_cutoff_doubles_the_coherence_time() {
    let opts = GoldenOptions::default();
    let (a, ra) = calibrate(&mut probe(1.0e4, None, 0), set(), Strategy::Cpmg, &opts).unwrap();
    let (b, rb) = calibrate(&mut probe(5.0e3, None, 0), set(), Strategy::Cpmg, &opts).unwrap();
    assert!((b.tau_c / a.tau_c - 2.0).abs() < 1e-6);
    assert_eq!(ra.entry_index, rb.entry_index);
    assert!((rb.omega_d_estimate / ra.omega_d_estimate - 0.5).abs() < 1e-6);
}

#[test]
fn same_seed_gives_same_transcript() {
    let run = || {
        let mut rec = RecordingProbe::new(probe(2.0e4, Some(500), 11));
        let (_, r) = calibrate(&mut rec, set(), Strategy::Udd, &GoldenOptions::default()).unwrap();
        (r.entry_index, rec.transcript)
    };
    assert_eq!(run(), run());
}
