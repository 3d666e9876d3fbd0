//! Property tests over random models, instances and formulae.

mod common;

use num_traits::Zero;
use proptest::prelude::*;

use cfsat_core::compile::{counterfactual_formula, path_formulae, to_single_assignment, DEFAULT_PATH_CAP};
use cfsat_core::constraints::{plausibility_formula, ConstraintSpec};
use cfsat_core::distance::{distance_formula, distance_value, DistanceConfig, NormPreset};
use cfsat_core::formula::Formula;
use cfsat_core::rational::{int, ratio, Rational};
use cfsat_core::search::{CompiledModel, Explainer, SearchConfig, SearchError};
use cfsat_core::solver::check_sat;

use common::*;

fn preset(i: usize) -> DistanceConfig {
    DistanceConfig::preset([NormPreset::L0, NormPreset::L1, NormPreset::Linf, NormPreset::Combined][i % 4])
}

fn sat(f: &Formula) -> bool {
    check_sat(f).unwrap().is_sat()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn program_matches_model(seed in any::<u64>(), k in 0usize..4) {
        let schema = mixed_schema();
        let mut r = rng(seed);
        let spec = random_model(&mut r, &schema, KINDS[k]);
        let program = spec.build_program();
        let sa = to_single_assignment(&program).unwrap();
        for _ in 0..20 {
            let env = inputs(&schema, &random_raw(&mut r, &schema));
            let y = int(spec.predict(&env) as i64);
            prop_assert_eq!(&program.evaluate(&env).unwrap(), &y);
            prop_assert_eq!(&sa.evaluate(&env).unwrap(), &y);
        }
    }

    #[test]
    fn exactly_one_path_holds(seed in any::<u64>()) {
        let schema = mixed_schema();
        let mut r = rng(seed);
        let kind = if seed % 2 == 0 { "mlp-relu" } else { "decision-tree" };
        let spec = random_model(&mut r, &schema, kind);
        let sa = to_single_assignment(&spec.build_program()).unwrap();
        let paths = path_formulae(&sa, DEFAULT_PATH_CAP).unwrap();
        let sorts = sa.input_sorts();
        for _ in 0..5 {
            let env = inputs(&schema, &random_raw(&mut r, &schema));
            let mut holding = 0;
            for p in &paths {
                let mut s = sorts.clone();
                let term = p.term();
                let mut vars = Vec::new();
                term.for_each_atom(&mut |a| vars.extend(a.vars().cloned()));
                for v in vars {
                    s.entry(v).or_insert(cfsat_core::Sort::Real);
                }
                let f = Formula::new(term, s).unwrap().substitute(&env);
                holding += usize::from(sat(&f));
            }
            prop_assert_eq!(holding, 1);
        }
    }

    #[test]
    fn distance_formula_agrees_with_value(seed in any::<u64>(), n in 0usize..4, num in 0i64..=40) {
        let schema = mixed_schema();
        let mut r = rng(seed);
        let cfg = preset(n);
        let x = random_raw(&mut r, &schema);
        let x_hat = random_raw(&mut r, &schema);
        let delta = ratio(num, 40);
        let d = distance_value(&cfg, &schema, &x, &x_hat);
        prop_assert!(d >= Rational::zero() && d <= int(1));
        let f = distance_formula(&cfg, &schema, &x_hat, &delta).unwrap();
        let fixed = f.substitute(&inputs(&schema, &x));
        prop_assert_eq!(sat(&fixed), d <= delta);
    }

    #[test]
    fn encodings_satisfy_structure(seed in any::<u64>()) {
        let schema = mixed_schema();
        let mut r = rng(seed);
        let x = random_raw(&mut r, &schema);
        let env = inputs(&schema, &x);
        let phi = plausibility_formula(&schema, &x, &ConstraintSpec::none());
        prop_assert!(phi.eval(&env).unwrap());
        prop_assert_eq!(schema.decode(&env).unwrap(), x);
    }

    #[test]
    fn larger_threshold_keeps_satisfiability(seed in any::<u64>(), a in 0i64..=16, b in 0i64..=16) {
        let schema = mixed_schema();
        let mut r = rng(seed);
        let spec = random_model(&mut r, &schema, "decision-tree");
        let model = CompiledModel::new(spec).unwrap();
        let x_hat = random_raw(&mut r, &schema);
        let y_hat = model.predict(&x_hat).unwrap();
        let cf = counterfactual_formula(&model.formula, y_hat);
        let (lo, hi) = (ratio(a.min(b), 16), ratio(a.max(b), 16));
        let cfg = DistanceConfig::l1();
        let at = |d: &Rational| {
            let f = Formula::and([cf.clone(), distance_formula(&cfg, &schema, &x_hat, d).unwrap()]).unwrap();
            sat(&f)
        };
        prop_assert!(!at(&lo) || at(&hi));
    }

    #[test]
    fn solver_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let f = random_formula(&mut r, false);
        let a = check_sat(&f).unwrap();
        let b = check_sat(&f).unwrap();
        prop_assert_eq!(a.is_sat(), b.is_sat());
        prop_assert_eq!(a.witness().cloned(), b.witness().cloned());
        if let Some(w) = a.witness() {
            prop_assert!(f.eval(w).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn brackets_replay_and_refine(seed in any::<u64>(), k in 0usize..4, n in 0usize..4) {
        let schema = mixed_schema();
        let mut r = rng(seed);
        let model = CompiledModel::new(random_model(&mut r, &schema, KINDS[k])).unwrap();
        let x_hat = random_raw(&mut r, &schema);
        let cfg = preset(n);
        let mut ex = Explainer::new(&model, cfg.clone());
        let mut previous: Option<Rational> = None;
        for eps in [ratio(1, 10), ratio(1, 1000), ratio(1, 100000)] {
            ex.search = SearchConfig::new(eps.clone()).unwrap();
            let res = match ex.nearest(&x_hat) {
                Ok(res) => res,
                Err(SearchError::OverConstrained { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            prop_assert!(&res.delta_max - &res.delta_min <= eps);
            prop_assert!(res.distance <= res.delta_max);
            prop_assert_ne!(model.predict(&res.counterfactual).unwrap(), model.predict(&x_hat).unwrap());
            let y_hat = model.predict(&x_hat).unwrap();
            let cf = counterfactual_formula(&model.formula, y_hat);
            let phi_g = plausibility_formula(&schema, &x_hat, &ConstraintSpec::none());
            let at = |d: &Rational| {
                let f = Formula::and([cf.clone(), distance_formula(&cfg, &schema, &x_hat, d).unwrap(), phi_g.clone()]).unwrap();
                sat(&f)
            };
            if !res.probed() {
                prop_assert!(!at(&res.delta_min));
            }
            prop_assert!(at(&res.delta_max));
            if let Some(p) = &previous {
                prop_assert!(&res.delta_max <= p);
            }
            previous = Some(res.delta_max);
        }
    }

    #[test]
    fn constraints_never_shorten_and_diversity_differs(seed in any::<u64>(), k in 0usize..4) {
        let schema = mixed_schema();
        let mut r = rng(seed);
        let model = CompiledModel::new(random_model(&mut r, &schema, KINDS[k])).unwrap();
        let x_hat = random_raw(&mut r, &schema);
        let eps = ratio(1, 1000);
        let mut ex = Explainer::new(&model, DistanceConfig::l1());
        ex.search = SearchConfig::new(eps.clone()).unwrap();
        let free = ex.nearest(&x_hat);
        ex.constraints = ConstraintSpec::immutable(&["age", "job"]);
        let fixed = ex.nearest(&x_hat);
        if let (Ok(f), Ok(c)) = (&free, &fixed) {
            prop_assert!(c.delta_min >= &f.delta_min - &eps);
            prop_assert_eq!(&c.counterfactual[1], &x_hat[1]);
            prop_assert_eq!(&c.counterfactual[3], &x_hat[3]);
        }
        if free.is_err() {
            prop_assert!(fixed.is_err());
        }
        let out = ex.diverse(&x_hat, 3, None);
        for (i, a) in out.results.iter().enumerate() {
            for b in &out.results[i + 1..] {
                prop_assert_ne!(&a.counterfactual, &b.counterfactual);
            }
        }
    }
}
