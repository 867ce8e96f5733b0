// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod support;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hymos_core::bundled;
use hymos_core::p4ir::Executable;
use hymos_core::sched::{enumerate_matchings, max_weight_matching, DemandMatrix, NUM_PRIORITIES};
use hymos_core::sim::{
    render_csv, sweep, ArrivalProcess, Dist, Experiment, Simulation, SlotTrace, StatsReport, SweepParam,
};
use hymos_core::switchcore::{check_nonblocking, link_bandwidth, LinkRateModel, LANE_WIDTHS};
use hymos_core::xlate::{translate, DistributedSwitch, LinkSpec, Topology, TranslateOptions};

use support::{hungarian_max, random_demand, random_frame, testbed_profile};

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Result<Duration, String> {
    let e = t.elapsed();
    ensure(e < limit, || format!("took {e:.1?}, limit {limit:?}"))?;
    Ok(e)
}

/// 1. Distributed execution on four cards matches the monolithic program.
fn translator_equivalence() -> Verdict {
    let t = Instant::now();
    let topo = Topology::parse(bundled::QUAD_TOPOLOGY).map_err(|e| e.to_string())?;
    ensure(topo.num_cards() == 4 && topo.port_map().all_ports().count() == 16, || "quad topology shape".into())?;
    let program = bundled::l3_router();
    let entries = bundled::l3_router_entries();
    let mono = Executable::new(&program, &entries).map_err(|e| e.to_string())?;
    let result = translate(&program, &topo, &entries, TranslateOptions::default()).map_err(|e| e.to_string())?;
    let dist = DistributedSwitch::new(result, &entries).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0001);
    let (mut forwarded, mut fabric) = (0, 0);
    for k in 0..10_000 {
        let bytes = random_frame(&mut rng);
        let port = rng.gen_range(0..16u16);
        let want = mono.execute(&bytes, port);
        let got = dist.process(&bytes, port).map_err(|e| format!("packet {k}: {e}"))?;
        ensure(got.disposition == want.disposition && got.bytes == want.bytes, || {
            format!("packet {k} on port {port}: {} vs monolithic {}", got.disposition, want.disposition)
        })?;
        forwarded += usize::from(matches!(want.disposition, hymos_core::p4ir::Disposition::Forward(_)));
        fabric += usize::from(got.fabric_bytes.is_some());
    }
    let e = within(t, Duration::from_secs(30))?;
    Ok(format!("10000/10000 identical ({forwarded} forwarded, {fabric} over the fabric) in {e:.1?}"))
}

/// 2. Enumeration matcher against the Hungarian oracle.
fn mwm_oracle() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0002);
    for n in 2..=5 {
        let ms = enumerate_matchings(n).map_err(|e| e.to_string())?;
        let all: Vec<usize> = (0..n).collect();
        for k in 0..1_000 {
            let w = random_demand(&mut rng, n);
            let mut d = DemandMatrix::zeros(n);
            for (i, row) in w.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    d.set(i, j, v);
                }
            }
            let m = max_weight_matching(&d, &all, &all, &ms).map_err(|e| e.to_string())?;
            let oracle = hungarian_max(&w);
            ensure(m.weight == oracle, || format!("N={n} matrix {k}: {} vs oracle {oracle}", m.weight))?;
        }
    }
    let e = within(t, Duration::from_secs(10))?;
    Ok(format!("4000/4000 weights equal in {e:.1?}"))
}

fn experiment_on(topo: Topology, profile: hymos_core::sim::TrafficProfile, slots: u64, seed: u64) -> Experiment {
    let mut e = Experiment::testbed(profile, slots, seed);
    e.topology = topo;
    e
}

/// 3. Every card owns 8(N-1) VOQs.
fn voq_law() -> Verdict {
    for n in 2..=8usize {
        let per_card = 16usize.div_ceil(n);
        let topo = Topology::uniform(n, per_card, LinkSpec { gen: 3, lanes: 8 }, 10.0);
        let e = experiment_on(topo, testbed_profile(ArrivalProcess::Cbr, 0.1, 64), 10, 0);
        let sim = Simulation::new(&e).map_err(|e| format!("N={n}: {e}"))?;
        ensure(sim.cards().len() == n, || format!("N={n}: {} cards", sim.cards().len()))?;
        for c in sim.cards() {
            let want = NUM_PRIORITIES * (n - 1);
            ensure(c.voq_count() == want, || format!("N={n} card {}: {} VOQs, want {want}", c.id, c.voq_count()))?;
        }
    }
    Ok("8(N-1) VOQs per card for N=2..8".into())
}

#[derive(Default)]
struct SlotChecks {
    slots: u64,
    grants: u64,
    violations: Vec<String>,
    /// Grants on a pair that also had demand at a higher class.
    strictness: u64,
}

impl SlotChecks {
    fn observe(&mut self, t: &SlotTrace, n: usize) {
        self.slots += 1;
        let Some((d, g)) = &t.applied else { return };
        self.grants += g.grants.len() as u64;
        if !g.is_valid_matching(n) {
            self.violations.push(format!("slot {}: invalid matching", t.slot));
        }
        for gr in &g.grants {
            if d.get(usize::from(gr.priority), gr.input, gr.output) == 0 {
                self.violations.push(format!("slot {}: zero-demand grant {gr}", t.slot));
            }
            if (usize::from(gr.priority) + 1..NUM_PRIORITIES).any(|p| d.get(p, gr.input, gr.output) > 0) {
                self.strictness += 1;
            }
        }
        let mut outs = vec![0; n];
        let mut ins = vec![0; n];
        for (gr, tr) in &t.transfers {
            if tr.packets > 0 {
                outs[gr.input] += 1;
                ins[gr.output] += 1;
            }
        }
        if outs.iter().chain(&ins).any(|&c| c > 1) {
            self.violations.push(format!("slot {}: a card used its link twice", t.slot));
        }
    }
}

fn full_run() -> (Experiment, SlotChecks, StatsReport, Duration) {
    let mut profile = testbed_profile(ArrivalProcess::Bernoulli, 0.95, 800);
    profile.sources = None;
    profile.sinks = None;
    let e = Experiment::testbed(profile, 100_000, 5);
    let t = Instant::now();
    let mut checks = SlotChecks::default();
    let report = Simulation::new(&e).expect("experiment builds").run_with(|tr| checks.observe(tr, 2));
    (e, checks, report, t.elapsed())
}

/// 4. Grants form matchings; PCP 7 is served strictly before PCP 0.
fn validity_and_strictness(checks: &SlotChecks) -> Verdict {
    ensure(checks.slots >= 100_000, || format!("only {} slots", checks.slots))?;
    ensure(checks.violations.is_empty(), || checks.violations[..checks.violations.len().min(3)].join("; "))?;
    ensure(checks.strictness == 0, || format!("{} grants below a busier class", checks.strictness))?;

    let topo = Topology::uniform(2, 8, LinkSpec { gen: 1, lanes: 1 }, 10.0);
    let mut profile = testbed_profile(ArrivalProcess::Bernoulli, 0.1, 800);
    profile.sources = Some(vec![0, 1, 2, 3]);
    profile.sinks = Some([8, 9, 10, 11].into_iter().map(hymos_core::sim::SinkSpec::Port).collect());
    profile.pcp = Dist::Mix { mix: vec![(7, 0.25), (0, 0.75)] };
    let mut e = experiment_on(topo, profile, 20_000, 9);
    e.cfg.drain_cap_slots = Some(40_000);
    let mut over = SlotChecks::default();
    let mut contended = 0u64;
    let r = Simulation::new(&e).map_err(|e| e.to_string())?.run_with(|t| {
        over.observe(t, 2);
        if let Some((d, _)) = &t.applied {
            contended += u64::from(d.get(7, 0, 1) > 0 && d.get(0, 0, 1) > 0);
        }
    });
    ensure(over.violations.is_empty(), || over.violations[0].clone())?;
    ensure(over.strictness == 0, || format!("{} slots granted PCP 0 over PCP 7 demand", over.strictness))?;
    ensure(contended > 1_000, || format!("overload never contended ({contended} slots)"))?;
    let l7 = r.per_priority[7].mean_latency_us.ok_or("no PCP 7 latency")?;
    let l0 = r.per_priority[0].mean_latency_us.ok_or("no PCP 0 latency")?;
    ensure(l7 < l0, || format!("PCP 7 mean {l7:.3} us not below PCP 0 mean {l0:.3} us"))?;
    Ok(format!(
        "{} slots, {} grants, 0 violations; overload: {contended} contended slots, 0 inversions, PCP7 {l7:.2} us < PCP0 {l0:.2} us",
        checks.slots, checks.grants
    ))
}

/// 5. 95% uniform load on 16 ports is carried with bounded queues.
fn stability(e: &Experiment, r: &StatsReport, elapsed: Duration) -> Verdict {
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    ensure(r.conserved(), || "conservation broken".into())?;
    let ratio = r.delivered_gbps / r.offered_gbps;
    ensure(ratio >= 0.93, || format!("delivered/offered {ratio:.4}"))?;
    let d = e.cfg.duration_slots as usize;
    let series = &r.voq_series[..d];
    let q2 = series[d / 4..d / 2].iter().copied().max().unwrap_or(0);
    let h2 = series[d / 2..].iter().copied().max().unwrap_or(0);
    ensure(h2 <= 2 * q2, || format!("last-half max VOQ {h2} B exceeds 2 x second-quarter max {q2} B"))?;
    Ok(format!(
        "offered {:.2} Gb/s, delivered/offered {ratio:.4}, max VOQ {q2} B (Q2) / {h2} B (H2), {elapsed:.1?}",
        r.offered_gbps
    ))
}

/// 6. PCI-e bandwidth table and the two worked capacity checks.
fn table_one() -> Verdict {
    let table = [[0.5, 1.0, 2.0, 4.0, 8.0], [1.0, 2.0, 4.0, 8.0, 16.0], [2.0, 4.0, 8.0, 16.0, 32.0]];
    for (g, row) in table.iter().enumerate() {
        for (l, &want) in row.iter().enumerate() {
            let got = link_bandwidth(g as u8 + 1, LANE_WIDTHS[l]).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("Gen{} x{}: {got} GB/s, want {want}", g + 1, LANE_WIDTHS[l]))?;
        }
    }
    let testbed = Topology::parse(bundled::TESTBED_TOPOLOGY).map_err(|e| e.to_string())?;
    let rep = check_nonblocking(&testbed, LinkRateModel::Table).map_err(|e| e.to_string())?;
    ensure(rep.iter().all(|c| c.nonblocking && (c.utilization - 0.625).abs() < 1e-12), || {
        format!("8x10G on Gen3 x8: {rep:?}")
    })?;
    let heavy = Topology::parse(
        r#"{"cards": [
            {"id": 0, "link": {"gen": 2, "lanes": 8}, "ports": [{"global_id": 0, "rate_gbps": 100}, {"global_id": 1, "rate_gbps": 100}]},
            {"id": 1, "link": {"gen": 2, "lanes": 8}, "ports": [{"global_id": 2, "rate_gbps": 100}, {"global_id": 3, "rate_gbps": 100}]}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let rep = check_nonblocking(&heavy, LinkRateModel::Table).map_err(|e| e.to_string())?;
    ensure(rep.iter().all(|c| !c.nonblocking && c.link_gbps == 64.0), || format!("2x100G on Gen2 x8: {rep:?}"))?;
    Ok("15/15 cells; 8x10G on Gen3 x8 non-blocking at 62.5%; 2x100G on Gen2 x8 blocking".into())
}

fn column(csv: &str, name: &str) -> Result<Vec<Option<f64>>, String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or("empty CSV")?.split(',').collect();
    let idx = header.iter().position(|h| *h == name).ok_or_else(|| format!("no column {name}"))?;
    Ok(lines.map(|l| l.split(',').nth(idx).and_then(|v| v.parse().ok())).collect())
}

fn curve_csvs() -> Result<(String, String), String> {
    let load_exp = Experiment::testbed(testbed_profile(ArrivalProcess::Cbr, 0.2, 800), 20_000, 42);
    let loads = sweep(&load_exp, SweepParam::Load, &[0.2, 0.4, 0.6, 0.8, 1.0], true).map_err(|e| e.to_string())?;
    let size_exp = Experiment::testbed(testbed_profile(ArrivalProcess::Cbr, 1.0, 800), 5_000, 42);
    let sizes =
        sweep(&size_exp, SweepParam::PacketSize, &[64.0, 256.0, 800.0, 1500.0], true).map_err(|e| e.to_string())?;
    Ok((render_csv(&loads), render_csv(&sizes)))
}

/// 7. Latency curve shapes against the single-card baseline.
fn curve_shapes(load_csv: &str, size_csv: &str) -> Verdict {
    let mean = column(load_csv, "mean_lat_us")?;
    ensure(mean.len() == 5 && mean.iter().all(Option::is_some), || format!("load rows {mean:?}"))?;
    let mean: Vec<f64> = mean.into_iter().flatten().collect();
    ensure(mean.windows(2).all(|w| w[0] <= w[1]), || format!("mean latency not monotone in load: {mean:?}"))?;
    let norm_l: Vec<Option<f64>> = column(load_csv, "norm_latency")?;
    let norm_s: Vec<Option<f64>> = column(size_csv, "norm_latency")?;
    ensure(norm_s.len() == 4, || format!("{} size rows", norm_s.len()))?;
    let norms: Vec<f64> = norm_l.iter().chain(&norm_s).map(|v| v.unwrap_or(f64::NAN)).collect();
    ensure(norms.iter().all(|&n| n >= 1.0), || format!("normalized latency below 1: {norms:?}"))?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    Ok(format!("mean us by load {}; norm by load {}; norm by size {}", fmt(&mean), fmt(&norms[..5]), fmt(&norms[5..])))
}

/// 8. Fixed seeds give byte-identical CSV.
fn determinism(first: &(String, String)) -> Verdict {
    let second = curve_csvs()?;
    ensure(first.0 == second.0, || "load sweep CSV differs between runs".into())?;
    ensure(first.1 == second.1, || "size sweep CSV differs between runs".into())?;
    let e = Experiment::testbed(testbed_profile(ArrivalProcess::Bernoulli, 0.7, 256), 3_000, 42);
    let a = render_csv(&sweep(&e, SweepParam::Load, &[0.7], false).map_err(|e| e.to_string())?);
    let b = render_csv(&sweep(&e, SweepParam::Load, &[0.7], false).map_err(|e| e.to_string())?);
    ensure(a == b, || "single run CSV differs".into())?;
    Ok(format!("{} + {} + {} bytes identical", first.0.len(), first.1.len(), a.len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, v: Verdict| match &v {
        Ok(m) => println!("PASS  {n}. {name}: {m}"),
        Err(m) => {
            failed += 1;
            println!("FAIL  {n}. {name}: {m}");
        }
    };
    report(1, "translator equivalence", translator_equivalence());
    report(2, "matching oracle", mwm_oracle());
    report(3, "VOQ law", voq_law());
    let (exp, checks, stats, elapsed) = full_run();
    report(4, "matching validity and priority strictness", validity_and_strictness(&checks));
    report(5, "stability at 95% load", stability(&exp, &stats, elapsed));
    report(6, "PCI-e table", table_one());
    match curve_csvs() {
        Ok(csvs) => {
            report(7, "curve shapes", curve_shapes(&csvs.0, &csvs.1));
            report(8, "determinism", determinism(&csvs));
        }
        Err(e) => {
            report(7, "curve shapes", Err(e.clone()));
            report(8, "determinism", Err(e));
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
