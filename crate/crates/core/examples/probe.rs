use leofl_core::constellation::{ConstellationSpec, SatId};
use leofl_core::learnkit::{gen_synthetic, ModelArch, SyntheticParams, TrainConfig};
use leofl_core::orchestrator::{
    run_fedisl, run_fedmega, run_hlsgd, waiting_time_s, LinkMode, SimEnv,
};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "wait" {
        probe_waiting();
    } else if which == "scan" {
        probe_scan();
    } else {
        probe_convergence();
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn probe_scan() {
    let spec = ConstellationSpec {
        num_planes: 4,
        sats_per_plane: 5,
        ..ConstellationSpec::default()
    };
    let owners: Vec<SatId> = spec.sats().collect();
    for (eta, t, e, batch) in [
        (0.005, 2usize, 5usize, 25usize),
        (0.01, 2, 5, 25),
        (0.01, 2, 10, 10),
        (0.005, 2, 20, 10),
        (0.02, 2, 5, 25),
        (0.005, 3, 20, 25),
        (0.03, 10, 5, 25),
        (0.04, 10, 5, 25),
    ] {
        let mut acc = vec![vec![]; 3];
        let mut t60 = vec![vec![]; 3];
        for seed in [0u64, 1, 2] {
            let (datasets, test) =
                gen_synthetic(&SyntheticParams::default(), &owners, seed).unwrap();
            let mut env = SimEnv::new(spec, ModelArch::mlp_default(), datasets, test);
            env.link_mode = LinkMode::Ideal;
            env.t_wait_override_s = Some(10.0);
            env.measure_download = false;
            let cfg = TrainConfig {
                rounds: 200,
                intra_rounds: t,
                local_updates: e,
                eta,
                batch,
                seed,
            };
            for (i, r) in [
                run_fedmega(&env, &cfg).unwrap(),
                run_hlsgd(&env, &cfg).unwrap(),
                run_fedisl(&env, &cfg).unwrap(),
            ]
            .iter()
            .enumerate()
            {
                acc[i].push(r.accuracy_at_round(200).unwrap());
                t60[i].push(r.time_to_accuracy(0.60).unwrap_or(f64::INFINITY));
            }
        }
        let m_acc: Vec<f64> = acc.iter().map(|v| median(v.clone())).collect();
        let m_t60: Vec<f64> = t60.iter().map(|v| median(v.clone())).collect();
        let better_baseline = m_t60[1].min(m_t60[2]);
        println!(
            "eta={eta} T={t} E={e} B={batch}: acc200 fm={:.3} hl={:.3} isl={:.3} | t60 fm={:.0} hl={:.0} isl={:.0} | margin={:.2}",
            m_acc[0], m_acc[1], m_acc[2], m_t60[0], m_t60[1], m_t60[2],
            1.0 - m_t60[0] / better_baseline
        );
    }
}

fn probe_waiting() {
    let spec = ConstellationSpec::default(); // 80/4/1
    let stations = leofl_core::constellation::reference_stations();
    let period = spec.orbital_period_s();
    println!("orbital period: {period:.1} s");
    for start in [0.0, 900.0, 2000.0, 3500.0, 5000.0, 8000.0] {
        match waiting_time_s(&spec, &stations, start, 45.0, 1.0, 2.5 * period) {
            Ok(w) => println!("t={start:>7.0}  wait={w:>8.1} s  ({:.2} periods)", w / period),
            Err(e) => println!("t={start:>7.0}  STALL: {e}"),
        }
    }
}

fn probe_convergence() {
    let spec = ConstellationSpec {
        num_planes: 4,
        sats_per_plane: 5,
        ..ConstellationSpec::default()
    };
    let owners: Vec<SatId> = spec.sats().collect();
    for seed in [0u64, 1, 2] {
        let (datasets, test) = gen_synthetic(&SyntheticParams::default(), &owners, seed).unwrap();
        let mut env = SimEnv::new(spec, ModelArch::mlp_default(), datasets, test);
        env.link_mode = LinkMode::Ideal;
        env.t_wait_override_s = Some(10.0);
        env.measure_download = false;
        let cfg = TrainConfig {
            rounds: 200,
            intra_rounds: 10,
            local_updates: 5,
            eta: 0.01,
            batch: 25,
            seed,
        };
        let t0 = std::time::Instant::now();
        let fm = run_fedmega(&env, &cfg).unwrap();
        let hl = run_hlsgd(&env, &cfg).unwrap();
        let il = run_fedisl(&env, &cfg).unwrap();
        println!(
            "seed {seed}: elapsed {:.1}s  acc@200 fm={:.3} hl={:.3} isl={:.3}",
            t0.elapsed().as_secs_f64(),
            fm.accuracy_at_round(200).unwrap(),
            hl.accuracy_at_round(200).unwrap(),
            il.accuracy_at_round(200).unwrap(),
        );
        for (name, r) in [("fm", &fm), ("hl", &hl), ("isl", &il)] {
            let t60 = r.time_to_accuracy(0.60);
            let t65 = r.time_to_accuracy(0.65);
            let round_s = r.ledger[0].round_total_s;
            println!(
                "  {name}: round_total={round_s:.2}s  t60={t60:?}  t65={t65:?}  max_acc={:.3}",
                r.metrics.iter().map(|m| m.test_acc).fold(0.0, f64::max)
            );
        }
    }
}
