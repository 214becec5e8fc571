use proptest::prelude::*;

use rfspin::anharmonic::QuadOptions;
use rfspin::contour::{beta, extract_contour};
use rfspin::image::{brute_force_image, SmallVolume};
use rfspin::lattice::connected_components;
use rfspin::potential::select_parameters;
use rfspin::runner::{Mode, RunConfig};
use rfspin::simulation::{run_chain, sample_disorder, Algorithm, DisorderLaw, DisorderSpec};
use rfspin::walk::walk_kernel;
use rfspin::{BoundaryField, DisorderField, GaussianModel, IsingConfig, LatticeVolume, ModelParams, SiteModel, SiteSet};

fn small_box() -> impl Strategy<Value = Vec<usize>> {
    (1usize..=3).prop_flat_map(|d| proptest::collection::vec(1usize..=4, d))
}

fn subset(n: usize, bits: u64) -> SiteSet {
    (0..n).filter(|&i| bits >> (i % 64) & 1 == 1).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn index_map_is_a_bijection_and_neighbors_are_symmetric(ext in small_box()) {
        let lat = LatticeVolume::new(&ext).unwrap();
        for i in 0..lat.len() {
            prop_assert_eq!(lat.index(&lat.site(i)), Some(i));
            for j in lat.neighbors(i) {
                prop_assert_eq!(lat.site(i).l1(&lat.site(j)), 1);
                prop_assert!(lat.neighbors(j).any(|k| k == i));
            }
        }
    }

    #[test]
    fn components_partition_the_set(ext in small_box(), bits in any::<u64>()) {
        let lat = LatticeVolume::new(&ext).unwrap();
        let s = subset(lat.len(), bits);
        let comps = connected_components(&lat, &s);
        let mut all: Vec<usize> = comps.iter().flat_map(|c| c.iter().collect::<Vec<_>>()).collect();
        all.sort_unstable();
        prop_assert_eq!(all.as_slice(), s.as_slice());
        for (a, ca) in comps.iter().enumerate() {
            for cb in comps.iter().skip(a + 1) {
                prop_assert!(ca.iter().all(|x| lat.neighbors(x).all(|y| !cb.contains(y))));
            }
        }
    }

    #[test]
    fn resolvent_inverts_the_operator(ext in small_box(), bits in any::<u64>(), c in 0.05f64..30.0) {
        let lat = LatticeVolume::new(&ext).unwrap();
        let v = subset(lat.len(), bits);
        prop_assume!(!v.is_empty());
        let r = rfspin::gaussian::resolvent_direct(&lat, &v, c).unwrap();
        let d = lat.dim();
        for i in 0..v.len() {
            let s: f64 = v.iter().enumerate()
                .map(|(j, y)| r[(i, j)] * (c + (2 * d - lat.neighbors(y).filter(|&z| v.contains(z)).count()) as f64))
                .sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn walk_kernels_are_nonnegative_with_bounded_rows(n in 1usize..=5, c in 0.2f64..10.0) {
        let lat = LatticeVolume::chain(n).unwrap();
        let k = walk_kernel(&lat, &lat.all(), c, 60).unwrap();
        let rho = 2.0 / (c + 2.0);
        let bound = rho.powi(n as i32 - 1) / c;
        for x in 0..n {
            prop_assert!(k.matrix.row(x).iter().all(|&v| v >= 0.0));
            prop_assert!(k.row_sum(x) <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn walk_kernel_is_the_inclusion_exclusion_of_resolvents(bits in 1u64..512, c in 0.3f64..6.0) {
        let lat = LatticeVolume::new(&[3, 3]).unwrap();
        let range = subset(9, bits);
        prop_assume!(range.len() <= 6);
        let k = walk_kernel(&lat, &range, c, 400).unwrap();
        let n = range.len();
        let mut oracle = vec![vec![0.0; n]; n];
        for sub in 1u64..(1 << n) {
            let s = SiteSet::from_mask(&range, sub);
            let sign = if (n - s.len()) % 2 == 0 { 1.0 } else { -1.0 };
            let r = rfspin::gaussian::resolvent_direct(&lat, &s, c).unwrap();
            for (i, x) in s.iter().enumerate() {
                for (j, y) in s.iter().enumerate() {
                    oracle[range.position(x).unwrap()][range.position(y).unwrap()] += sign * r[(i, j)];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                prop_assert!((k.matrix[(i, j)] - oracle[i][j]).abs() <= k.truncation_bound + 1e-12);
            }
        }
    }

    #[test]
    fn energy_split_reassembles(ext in small_box(), bits in any::<u64>(), q in 0.05f64..1.0, seed in any::<u64>()) {
        let lat = LatticeVolume::new(&ext).unwrap();
        let n = lat.len();
        let g = subset(n, bits);
        prop_assume!(!g.is_empty());
        let p = ModelParams::new(lat.dim(), q, 3.0, 1.0, 0.0, 0.2, 0.5).unwrap();
        let sigma = IsingConfig::from_bits(n, seed);
        let eta = DisorderField((0..n).map(|i| 0.2 * ((seed >> (i % 60)) as f64).sin()).collect());
        let gm = GaussianModel::new(&lat, &p, &sigma, &eta, &BoundaryField::Constant(-2.0)).unwrap();
        let m: Vec<f64> = (0..n).map(|i| 4.0 * ((i as f64 + 1.0) * (seed % 97) as f64).cos()).collect();
        let h = gm.energy(&lat.all(), &m, None).unwrap();
        let split = gm.energy_split(&g).unwrap();
        let (h1, h2) = split.evaluate(&m);
        prop_assert!(h1 >= -1e-9 && h2 >= -1e-9);
        prop_assert!((h - (h1 + h2 + split.min_energy)).abs() <= 1e-9 * (1.0 + h.abs()));
        let spec = &split.boundary;
        prop_assert!((spec.matrix.clone() - spec.matrix.transpose()).amax() < 1e-12);
        prop_assert!(spec.matrix.clone().cholesky().is_some());
        prop_assert!((spec.evaluate(spec.center.as_slice()) - spec.constant).abs() < 1e-12);
    }

    #[test]
    fn certificate_has_the_closed_form_well(eps0 in 0.01f64..0.5, m_star in 5.0f64..500.0, d in 1usize..=3) {
        let c = select_parameters(eps0, m_star, d).unwrap();
        let eps1 = (eps0 * m_star).cbrt() / m_star;
        prop_assert!((c.eps1 - eps1).abs() <= 1e-12 * eps1);
        prop_assert!((c.a - (2.0 + eps1).powi(2) / 4.0).abs() <= 1e-12);
        prop_assert!(c.b > 0.0 && c.q_max > 0.0 && c.delta_max > 0.0);
        prop_assert!(beta(&c.params_at_threshold()) > 0.0);
    }

    #[test]
    fn contour_complement_is_sign_constant(ext in small_box(), bits in any::<u64>(), r in 1u32..=2) {
        let lat = LatticeVolume::new(&ext).unwrap();
        let n = lat.len();
        let sigma = IsingConfig((0..n).map(|i| if bits >> (i % 64) & 1 == 1 { -1 } else { 1 }).collect());
        let c = extract_contour(&lat, &sigma, r).unwrap();
        for x in (0..n).filter(|&x| !c.support.contains(x)) {
            if lat.exterior_degree(x) > 0 {
                prop_assert_eq!(sigma.0[x], 1);
            }
            for y in lat.neighbors(x).filter(|&y| !c.support.contains(y)) {
                prop_assert_eq!(sigma.0[x], sigma.0[y]);
            }
        }
    }

    #[test]
    fn disorder_is_bounded_and_sign_symmetric_in_law(delta in 0.0f64..2.0, seed in any::<u64>()) {
        let lat = LatticeVolume::cube(2, 6).unwrap();
        for law in [DisorderLaw::TruncatedGaussian, DisorderLaw::Uniform] {
            let eta = sample_disorder(&lat, &DisorderSpec { delta, sigma2: 1.0, seed, law }).unwrap();
            prop_assert!(eta.0.iter().all(|v| v.abs() <= delta));
        }
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), m_star in 10.0f64..200.0) {
        let mut cfg = RunConfig::for_mode(Mode::Constants);
        cfg.seeds.base = seed;
        cfg.params.m_star = m_star;
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), cfg.to_json());
        prop_assert_eq!(back.hash(), cfg.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn image_weights_are_positive_and_flip_covariant(n in 1usize..=2, b in -3.0f64..3.0, e0 in -0.1f64..0.1, e1 in -0.1f64..0.1) {
        let p = ModelParams::new(1, 0.05, 2.0, 1.0, 0.0, 0.1, 0.5).unwrap();
        let model = SiteModel::quartic(p);
        let lat = LatticeVolume::chain(n).unwrap();
        let eta = DisorderField([e0, e1][..n].to_vec());
        let bc = BoundaryField::Constant(b);
        let (neta, nbc) = (eta.negated(), bc.negated());
        let plus = brute_force_image(&SmallVolume::new(&lat, &model, &eta, &bc).unwrap(), QuadOptions::default()).unwrap();
        let minus = brute_force_image(&SmallVolume::new(&lat, &model, &neta, &nbc).unwrap(), QuadOptions::default()).unwrap();
        let mask = (1u64 << n) - 1;
        for bits in 0..1u64 << n {
            prop_assert!(plus.log_weights[bits as usize].is_finite());
            let gap = plus.log_weights[bits as usize] - minus.log_weights[(!bits & mask) as usize];
            prop_assert!(gap.abs() < 1e-8, "flip gap {}", gap);
        }
    }

    #[test]
    fn trajectories_are_reproducible(seed in any::<u64>()) {
        let p = ModelParams::new(1, 0.1, 2.0, 1.0, 0.0, 0.1, 0.5).unwrap();
        let model = SiteModel::quartic(p);
        let lat = LatticeVolume::chain(6).unwrap();
        let eta = DisorderField::zeros(6);
        let bc = BoundaryField::Constant(2.0);
        for alg in [Algorithm::HeatBath, Algorithm::Metropolis] {
            let a = run_chain(&lat, &model, &eta, &bc, 20, seed, alg, |_, _| {}).unwrap();
            let b = run_chain(&lat, &model, &eta, &bc, 20, seed, alg, |_, _| {}).unwrap();
            prop_assert_eq!(a.field.0, b.field.0);
        }
    }
}
