use taf::keyframes::{hand_speed, local_minima, suggest_cutoff, SelectionMode, detect_hs_dc};
use taf::skeleton::Side;
use taf::synth::{generate_sequence, SynthSpec};

#[test]
fn probe() {
    let mut spec = SynthSpec::new(10, 5, 1, 2024);
    spec.noise_sigma = 0.0;
    let (seq, truth) = generate_sequence(0, 3, 0, &spec).unwrap();
    let k = truth.hold_centers.len();
    let dc = detect_hs_dc(&seq, SelectionMode::FixedLength(k)).unwrap();
    let sig = hand_speed(&seq, Side::Right).unwrap();
    let m = local_minima(&sig.values);
    let t_len = seq.len();
    let pts: Vec<[f64;2]> = m.iter().map(|&t| [t as f64/(t_len-1) as f64, sig.values[t]]).collect();
    let d_c = suggest_cutoff(&pts);
    eprintln!("holds={:?} got={:?} d_c={d_c:.4}", truth.hold_centers, dc.indices);
    let n = pts.len();
    let dist = |i: usize, j: usize| ((pts[i][0]-pts[j][0]).powi(2) + (pts[i][1]-pts[j][1]).powi(2)).sqrt();
    let rho: Vec<f64> = (0..n).map(|i| (0..n).filter(|&j| j != i).map(|j| (-(dist(i,j)/d_c).powi(2)).exp()).sum()).collect();
    for i in 0..n {
        let denser: Vec<usize> = (0..n).filter(|&j| j != i && rho[j] > rho[i]).collect();
        let delta = if denser.is_empty() {
            (0..n).filter(|&j| j != i).map(|j| dist(i,j)).fold(0.0, f64::max)
        } else {
            denser.iter().map(|&j| dist(i,j)).fold(f64::INFINITY, f64::min)
        };
        eprintln!("  t={:3} speed={:.4} rho={:.5} delta={:.4} gamma={:.5}", m[i], pts[i][1], rho[i], delta, rho[i]*delta);
    }
}
