use chrono::NaiveDate;
use proptest::prelude::*;

use mefcast_core::ingest::FuelKind;
use mefcast_core::series::{derive_all, total_generation, DEFAULT_EPS_G};
use mefcast_core::synth::{
    generate_scenario, merit_order_dispatch, three_unit_fleet, write_sidecar_csv, GeneratorUnit, ScenarioConfig,
    SIDECAR_CSV_HEADER,
};

fn arb_fleet() -> impl Strategy<Value = Vec<GeneratorUnit>> {
    prop::collection::vec((1.0f64..200.0, 0.0f64..1.2, 0.0f64..100.0), 1..7).prop_map(|units| {
        units
            .into_iter()
            .enumerate()
            .map(|(i, (cap, rate, cost))| {
                let fuel = if rate == 0.0 { FuelKind::Nuclear } else { FuelKind::NaturalGas };
                GeneratorUnit::new(&format!("U{i}"), fuel, cap, rate, cost)
            })
            .collect()
    })
}

fn cost(fleet: &[GeneratorUnit], outputs: &[f64]) -> f64 {
    fleet.iter().zip(outputs).map(|(u, o)| u.marginal_cost * o).sum()
}

proptest! {
    #[test]
    fn dispatch_balances_and_respects_capacity(fleet in arb_fleet(), frac in 0.0f64..=1.0) {
        let capacity: f64 = fleet.iter().map(|u| u.capacity).sum();
        let demand = frac * capacity;
        let d = merit_order_dispatch(&fleet, demand).unwrap();
        let served: f64 = d.outputs.iter().sum();
        prop_assert!((served - demand).abs() <= 1e-9 * capacity);
        for (o, u) in d.outputs.iter().zip(&fleet) {
            prop_assert!(*o >= 0.0 && *o <= u.capacity);
        }
        let e: f64 = d.outputs.iter().zip(&fleet).map(|(o, u)| o * u.emission_rate).sum();
        prop_assert!((e - d.emissions).abs() <= 1e-12 * e.max(1.0));
        // the marginal unit is the one left partially loaded, or the last one used
        for (i, (o, u)) in d.outputs.iter().zip(&fleet).enumerate() {
            if *o > 0.0 && *o < u.capacity {
                prop_assert_eq!(i, d.marginal_index);
            }
        }
    }

    #[test]
    fn dispatch_is_cheapest_among_feasible_allocations(fleet in arb_fleet(), frac in 0.0f64..=1.0, weights in prop::collection::vec(0.0f64..1.0, 7)) {
        let capacity: f64 = fleet.iter().map(|u| u.capacity).sum();
        let demand = frac * capacity;
        let d = merit_order_dispatch(&fleet, demand).unwrap();

        // Pour demand into units in a random priority order, which is
        // always feasible but generally not cheapest.
        let mut order: Vec<usize> = (0..fleet.len()).collect();
        order.sort_by(|a, b| weights[*a].total_cmp(&weights[*b]));
        let mut other = vec![0.0; fleet.len()];
        let mut left = demand;
        for i in order {
            let take = left.min(fleet[i].capacity);
            other[i] = take;
            left -= take;
        }
        prop_assert!(cost(&fleet, &d.outputs) <= cost(&fleet, &other) + 1e-9 * cost(&fleet, &other).max(1.0));
    }

    #[test]
    fn unit_outputs_and_emissions_rise_with_demand(fleet in arb_fleet(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let capacity: f64 = fleet.iter().map(|u| u.capacity).sum();
        let (lo, hi) = (a.min(b) * capacity, a.max(b) * capacity);
        let dl = merit_order_dispatch(&fleet, lo).unwrap();
        let dh = merit_order_dispatch(&fleet, hi).unwrap();
        for (x, y) in dl.outputs.iter().zip(&dh.outputs) {
            prop_assert!(x <= y);
        }
        prop_assert!(dl.emissions <= dh.emissions + 1e-12);
    }

    #[test]
    fn infeasible_demand_is_rejected(fleet in arb_fleet(), extra in 1e-6f64..100.0) {
        let capacity: f64 = fleet.iter().map(|u| u.capacity).sum();
        prop_assert!(merit_order_dispatch(&fleet, capacity + extra).is_err());
        prop_assert!(merit_order_dispatch(&fleet, -extra).is_err());
    }
}

#[test]
fn noise_free_scenarios_recover_the_true_marginal_rate() {
    let configs = [
        ScenarioConfig { days: 20, ..ScenarioConfig::default() },
        ScenarioConfig { days: 20, utc_offset_hours: -8, ..ScenarioConfig::default() },
        ScenarioConfig { days: 20, utc_offset_hours: 5, demand_phase_hour: 14.0, ..ScenarioConfig::default() },
        ScenarioConfig { days: 20, diurnal_amplitude: 80.0, solar_depth: 20.0, ..ScenarioConfig::default() },
        ScenarioConfig { days: 20, start: NaiveDate::from_ymd_opt(2024, 2, 27).unwrap(), ..ScenarioConfig::default() },
    ];
    for cfg in configs {
        let s = generate_scenario(&cfg).unwrap();
        let derived = derive_all(&s.series, DEFAULT_EPS_G, cfg.clock());
        let mut matched = 0;
        for (i, truth) in s.truth.iter().enumerate() {
            let (mef, dg) = (derived.mef[i], derived.delta_g_fossil[i]);
            if truth.true_mef.is_nan() {
                continue;
            }
            let fossil_marginal = cfg.fleet[s.dispatch[i].marginal_index].emission_rate > 0.0;
            if fossil_marginal && dg.abs() >= DEFAULT_EPS_G {
                assert!((mef - truth.true_mef).abs() <= 1e-9, "hour {i}: {mef} vs {}", truth.true_mef);
                matched += 1;
            }
        }
        assert!(matched > 20 * 24 / 2, "{matched} hours checked");
    }
}

#[test]
fn scenario_energy_balance() {
    let cfg = ScenarioConfig { days: 10, noise_sigma: 6.0, forecast_noise_sigma: 2.0, seed: 4, ..ScenarioConfig::default() };
    let s = generate_scenario(&cfg).unwrap();
    for (o, net) in s.series.observations.iter().zip(&s.net_demand) {
        assert!((total_generation(o) - o.demand).abs() <= 1e-9 * o.demand);
        assert!(*net <= o.demand);
        assert_eq!(o.net_imports, 0.0);
    }
}

#[test]
fn same_seed_same_scenario_other_seed_differs() {
    let cfg = ScenarioConfig { days: 5, noise_sigma: 6.0, forecast_noise_sigma: 2.0, seed: 12, ..ScenarioConfig::default() };
    let a = generate_scenario(&cfg).unwrap();
    let b = generate_scenario(&cfg).unwrap();
    assert!(a.series.same_observations(&b.series));
    assert_eq!(a.dispatch, b.dispatch);
    let c = generate_scenario(&ScenarioConfig { seed: 13, ..cfg }).unwrap();
    assert!(!a.series.same_observations(&c.series));
}

#[test]
fn infeasible_hour_names_the_timestamp() {
    let cfg = ScenarioConfig { days: 2, base_demand: 290.0, ..ScenarioConfig::default() };
    let err = generate_scenario(&cfg).unwrap_err().to_string();
    assert!(err.contains("2023-01-01T"), "{err}");
}

#[test]
fn sidecar_rows_and_blanks() {
    let cfg = ScenarioConfig { days: 2, fleet: three_unit_fleet(), ..ScenarioConfig::default() };
    let s = generate_scenario(&cfg).unwrap();
    let mut out = Vec::new();
    write_sidecar_csv(&s.truth, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], SIDECAR_CSV_HEADER);
    assert_eq!(lines.len(), 1 + 48);
    // the first hour has no predecessor, so its true rate is blank
    assert!(lines[1].starts_with("2023-01-01T00:00Z,") && lines[1].ends_with(','));
    assert!(lines.iter().skip(2).any(|l| l.ends_with(",0.4") || l.ends_with(",0.9")));
}
