mod common;

use proptest::prelude::*;
use storex_core::config::Config;
use storex_core::dispatch::{outage_cost, simulate_outage, StorageFleet, StorageUnit};
use storex_core::outage::Outage;

fn unit() -> impl Strategy<Value = StorageUnit> {
    (20.0f64..4000.0, 0.3f64..=1.0, 0.5f64..=1.0).prop_map(|(b, d, e)| StorageUnit::full(b, d, e))
}

proptest! {
    #[test]
    fn units_fill_together(units in prop::collection::vec(unit(), 1..6), input in 5.0f64..500.0) {
        let mut fleet = StorageFleet::new(units);
        for u in &mut fleet.units {
            u.energy = u.min_energy();
        }
        let p = fleet.proportions().unwrap();
        // Charge until the next hour would overflow some unit.
        while fleet.units.iter().zip(&p.charge).all(|(u, s)| u.energy + s * u.efficiency * input <= u.capacity) {
            fleet.absorb(&p, input);
        }
        for (u, s) in fleet.units.iter().zip(&p.charge) {
            let room = u.capacity - u.energy;
            prop_assert!(room >= -1e-9);
            prop_assert!(room <= s * u.efficiency * input * (1.0 + 1e-9) + 1e-9);
        }
    }

    #[test]
    fn absorbing_never_overfills(units in prop::collection::vec(unit(), 1..6), input in 0.0f64..1e6) {
        let mut fleet = StorageFleet::new(units);
        let p = fleet.proportions().unwrap();
        fleet.absorb(&p, input);
        for u in &fleet.units {
            prop_assert!(u.energy <= u.capacity);
        }
    }

    #[test]
    fn case_study_outages_keep_charge_in_bounds(
        caps in prop::collection::vec(0.0f64..6000.0, 4),
        period in 1usize..=4,
        start in 0usize..8000,
        duration in 1usize..30,
    ) {
        let c = Config::case_study();
        let grid = common::case_grid(&c);
        let fleet = StorageFleet::for_period(&c, period, &caps);
        let outage = Outage { start_hour: start, duration_hours: duration };
        let r = simulate_outage(&fleet, &outage, &grid);
        prop_assert_eq!(r.hours.len(), duration);
        for u in &r.final_fleet.units {
            prop_assert!(u.energy >= u.min_energy() - 1e-6 && u.energy <= u.capacity + 1e-9);
        }
        let logged = r.lost_cost(&grid);
        prop_assert!((logged - outage_cost(&fleet, &outage, &grid)).abs() <= 1e-9 * logged.max(1.0));
        prop_assert!(logged <= common::no_storage_cost(&grid, [&outage]) * (1.0 + 1e-12));
    }
}
