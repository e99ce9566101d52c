//! Invariants over randomized inputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;

use qwalk::config::{Override, ScenarioConfig};
use qwalk::device::*;
use qwalk::evolution::{self, EvolutionPlan};
use qwalk::hamiltonian::HamiltonianMatrix;
use qwalk::lattice::LatticeGraph;
use qwalk::measurement::*;
use qwalk::scenarios::{disorder_sweep, step_range, DisorderStepProtocol, MZLayout, VariantFlags, MZ_PATH_LENGTH, SINGLE_WALKER_READOUT_NS};
use qwalk::sector::{binomial, QuantumState, SectorBasis};

fn lattice_and_disorder() -> impl Strategy<Value = (LatticeGraph, Vec<f64>, usize)> {
    (1usize..=3, 2usize..=4, 1usize..=3).prop_flat_map(|(r, c, k)| {
        let n = r * c;
        (
            Just(LatticeGraph::square(r, c, 2.01).unwrap()),
            prop::collection::vec(-1.6f64..1.6, n),
            Just(k.min(n)),
        )
    })
}

fn random_state(basis: Arc<SectorBasis>, raw: &[(f64, f64)]) -> QuantumState {
    let amps: Vec<Complex64> = (0..basis.dim()).map(|i| {
        let (re, im) = raw[i % raw.len()];
        Complex64::new(re + 1e-3 * i as f64, im)
    }).collect();
    let mut s = QuantumState::new(basis, amps).unwrap();
    s.normalize();
    s
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn basis_dimension_is_binomial(n in 1usize..=20, k in 0usize..=4) {
        prop_assume!(k <= n);
        let b = SectorBasis::new(n, k).unwrap();
        prop_assert_eq!(b.dim(), binomial(n, k).unwrap());
        prop_assert!(b.states().windows(2).all(|w| w[0] < w[1]));
        for (i, &w) in b.states().iter().enumerate() {
            prop_assert_eq!(w.count_ones() as usize, k);
            prop_assert_eq!(b.index_of(w), Some(i));
        }
    }

    #[test]
    fn hamiltonian_is_hermitian((g, d, k) in lattice_and_disorder(), raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..8)) {
        let basis = Arc::new(SectorBasis::new(g.n_sites(), k).unwrap());
        let h = HamiltonianMatrix::build(&g, basis.clone(), &d).unwrap();
        let dense = h.to_dense();
        prop_assert!((&dense - dense.adjoint()).iter().all(|z| z.norm() < 1e-12));
        let v = random_state(basis, &raw);
        prop_assert!(h.expectation(v.amplitudes()).unwrap().im.abs() < 1e-12);
    }

    #[test]
    fn evolution_is_unitary_and_reversible((g, d, k) in lattice_and_disorder(), t in 1.0f64..800.0, method in prop::sample::select(vec!["krylov", "dense_expm", "spectral"])) {
        let basis = Arc::new(SectorBasis::new(g.n_sites(), k).unwrap());
        let h = Arc::new(HamiltonianMatrix::build(&g, basis.clone(), &d).unwrap());
        let excited: Vec<usize> = (0..k).collect();
        let psi0 = QuantumState::basis_state(basis, &excited).unwrap();
        let snaps = evolution::evolve_unitary(&EvolutionPlan::new(h.clone(), vec![0.0, t]).with_method(method), &psi0).unwrap();
        let start = snaps[0].state.amplitudes().iter().zip(psi0.amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(start < 1e-12);
        let end = &snaps[1].state;
        prop_assert!((end.norm() - 1.0).abs() < 1e-9);
        let total: f64 = end.populations().iter().sum();
        prop_assert!((total - k as f64).abs() < 1e-9);
        let back = evolution::evolve_for(method, &h, end, -t, 1e-12).unwrap();
        let err = back.amplitudes().iter().zip(psi0.amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-8, "{method}: {err}");
    }

    #[test]
    fn snapshot_round_trip(n in 2usize..=8, k in 1usize..=3, raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..8)) {
        prop_assume!(k <= n);
        let s = random_state(Arc::new(SectorBasis::new(n, k).unwrap()), &raw);
        let back = QuantumState::from_snapshot(&s.snapshot()).unwrap();
        prop_assert_eq!(back.amplitudes(), s.amplitudes());
    }

    #[test]
    fn post_selection_keeps_exact_weight(counts in prop::collection::btree_map("[01]{4}", 1u64..50, 1..16), k in 0usize..=4) {
        let c = ShotCounts::from_counts(4, counts.clone()).unwrap();
        prop_assert_eq!(ShotCounts::from_text(&c.to_text()).unwrap().counts, c.counts.clone());
        let expected: u64 = counts.iter().filter(|(b, _)| b.matches('1').count() == k).map(|(_, n)| n).sum();
        if expected == 0 {
            prop_assert!(post_select(&c, k).is_err());
            return Ok(());
        }
        let (kept, retention) = post_select(&c, k).unwrap();
        prop_assert!(kept.counts.keys().all(|b| b.matches('1').count() == k));
        prop_assert_eq!(kept.n_shots, expected);
        prop_assert!((retention - expected as f64 / c.n_shots as f64).abs() < 1e-12);
        let (again, r2) = post_select(&kept, k).unwrap();
        prop_assert_eq!(again.counts, kept.counts);
        prop_assert_eq!(r2, 1.0);
    }

    #[test]
    fn sampling_conserves_shots(p in prop::collection::vec(0.0f64..1.0, 4), shots in 1u64..2000, seed in any::<u64>()) {
        prop_assume!(p.iter().sum::<f64>() > 0.0);
        let words = vec![0b0001, 0b0010, 0b0100, 0b1000];
        let perfect = ReadoutModel::perfect(4);
        let c = sample_distribution(&words, &p, &perfect, shots, seed).unwrap();
        prop_assert_eq!(c.counts.values().sum::<u64>(), shots);
        prop_assert!(c.counts.keys().all(|b| b.matches('1').count() == 1));
        let again = sample_distribution(&words, &p, &perfect, shots, seed).unwrap();
        prop_assert_eq!(again.counts, c.counts);
    }

    #[test]
    fn overlap_is_symmetric_and_bounded(p in prop::collection::vec(0.0f64..1.0, 2..8), q in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let n = p.len().min(q.len());
        let (p, q) = (&p[..n], &q[..n]);
        prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
        let a = overlap_fidelity(p, q).unwrap();
        let b = overlap_fidelity(q, p).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((overlap_fidelity(p, p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disorder_respects_bound(bound in 0.0f64..5.0, seed in any::<u64>()) {
        let qs: Vec<QubitId> = default_device().functional_qubits().collect();
        let m = sample_disorder(qs.iter().copied(), bound, seed).unwrap();
        prop_assert!(m.offsets.values().all(|v| v.abs() <= bound));
        prop_assert_eq!(m.clone(), sample_disorder(qs, bound, seed).unwrap());
    }

    #[test]
    fn protocol_ramp_is_symmetric(d_l in -1.0f64..1.0, d_r in -1.0f64..1.0) {
        let layout = MZLayout::default();
        let map = DisorderStepProtocol { d_l, d_r }.offsets(&layout);
        for k in 0..MZ_PATH_LENGTH {
            let mirror = MZ_PATH_LENGTH - 1 - k;
            prop_assert_eq!(map.get(layout.left[k]), map.get(layout.left[mirror]));
            prop_assert_eq!(map.get(layout.right[k]), map.get(layout.right[mirror]));
        }
        let swapped = DisorderStepProtocol { d_l: d_r, d_r: d_l }.offsets(&layout.mirrored());
        prop_assert_eq!(swapped, map);
    }

    #[test]
    fn overrides_apply_last_value(t1 in 1.0f64..1000.0, t2 in 1.0f64..1000.0, seed in any::<u32>()) {
        let base = "schema_version = 1\nname = \"p\"\nkind = \"ctqw\"\n[params]\nt_max_ns = 5.0\n";
        let ovs: Vec<Override> = [format!("params.t_max_ns={t1:?}"), format!("params.t_max_ns={t2:?}"), format!("seed={seed}")]
            .iter().map(|s| s.parse().unwrap()).collect();
        let cfg = ScenarioConfig::parse(base, &ovs).unwrap();
        prop_assert_eq!(cfg.param::<f64>("t_max_ns", 0.0).unwrap(), t2);
        prop_assert_eq!(cfg.seed, seed as u64);
        prop_assert_eq!(ScenarioConfig::parse(&cfg.to_toml().unwrap(), &[]).unwrap(), cfg);
    }
}

#[test]
fn mirrored_sweep_is_transposed() {
    let device = default_device();
    let layout = MZLayout::default();
    let d_l = step_range(1.0, 4);
    let d_r = step_range(0.6, 3);
    let flags = VariantFlags::default();
    let grid = disorder_sweep(&device, &layout, &["S"], flags, &d_l, &d_r, SINGLE_WALKER_READOUT_NS, "auto").unwrap();
    let swapped = disorder_sweep(&device, &layout.mirrored(), &["S"], flags, &d_r, &d_l, SINGLE_WALKER_READOUT_NS, "auto").unwrap();
    assert_eq!(grid.shape(), (4, 3));
    let err = (&grid - swapped.transpose()).abs().max();
    assert!(err < 1e-10, "{err}");
    let one = disorder_sweep(&device, &layout, &["S"], flags, &[0.0], &[0.0], SINGLE_WALKER_READOUT_NS, "auto").unwrap();
    assert_eq!(one[(0, 0)], grid[(0, 0)]);
}

#[test]
fn perfect_readout_of_basis_state() {
    let basis = Arc::new(SectorBasis::new(2, 1).unwrap());
    let s = QuantumState::basis_state(basis, &[0]).unwrap();
    let c = sample_shots(&s, &ReadoutModel::perfect(2), 1000, 1).unwrap();
    assert_eq!(c.counts, BTreeMap::from([("10".to_string(), 1000)]));
}

#[test]
fn readout_fidelity_is_binomial() {
    let shots = 50_000u64;
    let c = sample_distribution(&[1], &[1.0], &ReadoutModel::uniform(1, 1.0, 0.919), shots, 3).unwrap();
    let f = c.frequency("1");
    let sigma = (0.919 * 0.081 / shots as f64).sqrt();
    assert!((f - 0.919).abs() < 3.0 * sigma, "{f}");

    let basis = Arc::new(SectorBasis::new(2, 1).unwrap());
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = QuantumState::new(basis, vec![Complex64::new(h, 0.0), Complex64::new(0.0, h)]).unwrap();
    let c = sample_shots(&s, &ReadoutModel::perfect(2), shots, 8).unwrap();
    let sigma = (0.25 / shots as f64).sqrt();
    for bits in ["10", "01"] {
        assert!((c.frequency(bits) - 0.5).abs() < 3.0 * sigma);
    }
}
