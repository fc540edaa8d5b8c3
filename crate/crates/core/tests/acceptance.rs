//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `COLORA_ACCEPTANCE_ONLY=1,4,8` restricts the run to a subset.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use colora_core::harness::{
    self, ablate, adapt_task, evaluate_registry, run_continual, Axis, ContinualReport,
};
use colora_core::metrics::default_multiplier;
use colora_core::registry::save_base;
use colora_core::{count_params, ArchSpec, GeneratorWeights, Registry, RunConfig};

use common::checks::{self, Check};
use common::{alpha_table, best_multipliers};

const CONTINUAL_SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_ITERATIONS: usize = 300;
const ABLATION_TASK: &str = "palette";

/// State shared between the end-to-end criteria.
struct Continual {
    cfg: RunConfig,
    base: GeneratorWeights<f32>,
    report: ContinualReport,
    _dir: tempfile::TempDir,
}

fn continual_config() -> RunConfig {
    let mut cfg = RunConfig::synthetic_benchmark("mini");
    cfg.run.seed = CONTINUAL_SEEDS[0];
    cfg
}

fn c1() -> Check {
    checks::adapter_oracle(128)
}

fn c2() -> Check {
    let mini = checks::zero_init_identity(&ArchSpec::mini(), &[0, 1, 2, 3])?;
    let desk = checks::zero_init_identity(&ArchSpec::desk(), &[5])?;
    Ok(format!("mini: {mini}; desk: {desk}"))
}

fn c3() -> Check {
    checks::gradient_integrity()
}

fn c4() -> Check {
    let arch = ArchSpec::stylegan2_256();
    let r1 = count_params(&arch, 1);
    let base = r1.base_params as f64;
    let ratio1 = r1.adapter_params as f64 / base;
    let mut scaling = Vec::new();
    for r in [2usize, 4, 8] {
        let q = count_params(&arch, r).adapter_params as f64 / r1.adapter_params as f64;
        scaling.push((r, q));
    }
    let msg = format!(
        "base {} ({:.2}M); r=1 adapters {} ({:.3}%); count(r)/count(1): {}",
        r1.base_params,
        base / 1e6,
        r1.adapter_params,
        100.0 * ratio1,
        scaling
            .iter()
            .map(|(r, q)| format!("r={r}: {q:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let base_ok = (21.0e6..=39.0e6).contains(&base);
    let ratio_ok = ratio1 <= 0.0025;
    let scale_ok = scaling
        .iter()
        .all(|&(r, q)| q >= 0.95 * r as f64 && q <= 1.05 * r as f64);
    if base_ok && ratio_ok && scale_ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5() -> Check {
    let rows = alpha_table();
    let best = best_multipliers(&rows);
    if best.len() != 5 {
        return Err(format!("fixture has {} datasets, expected 5", best.len()));
    }
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, l, m) in &best {
        let chosen = default_multiplier(*l);
        ok &= chosen == *m as f64;
        parts.push(format!("{name} {l}->{chosen} (best {m})"));
    }
    if ok {
        Ok(parts.join(", "))
    } else {
        Err(parts.join(", "))
    }
}

fn run_continual_experiment() -> Result<Continual, String> {
    std::env::set_var("COLORA_REFERENCE_MODE", "1");
    let cfg = continual_config();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = harness::pretrain(&cfg).map_err(|e| e.to_string())?.weights;
    let base_path = dir.path().join("base.clrg");
    save_base(&base, &base_path).map_err(|e| e.to_string())?;
    let root = dir.path().join("registry");
    let (_, report) = run_continual(&cfg, &base, &base_path, &root).map_err(|e| e.to_string())?;

    let reopened = Registry::open(&root).map_err(|e| e.to_string())?;
    let table = evaluate_registry(&reopened, &cfg.run).map_err(|e| e.to_string())?;
    let first = &report.outcomes[0];
    let again = table.rows[0].1[0];
    if again.proxy_fid.to_bits() != first.after_training.proxy_fid.to_bits()
        || again.diversity.to_bits() != first.after_training.diversity.to_bits()
    {
        return Err(format!(
            "re-opened registry evaluates task 1 to {again:?}, expected {:?}",
            first.after_training
        ));
    }
    Ok(Continual {
        cfg,
        base,
        report,
        _dir: dir,
    })
}

fn c6(state: &Result<Continual, String>) -> Check {
    let st = state
        .as_ref()
        .map_err(|e| format!("continual run failed: {e}"))?;
    let first = &st.report.outcomes[0];
    let (a, b) = (first.after_training, first.after_final);
    let same = a.proxy_fid.to_bits() == b.proxy_fid.to_bits()
        && a.diversity.to_bits() == b.diversity.to_bits();
    let msg = format!(
        "task {:?} after task 1: fid {} div {}; after task {}: fid {} div {}",
        first.task_id,
        a.proxy_fid,
        a.diversity,
        st.report.outcomes.len(),
        b.proxy_fid,
        b.diversity
    );
    let all_same = st.report.outcomes.iter().all(|o| {
        o.after_training.proxy_fid.to_bits() == o.after_final.proxy_fid.to_bits()
            && o.after_training.diversity.to_bits() == o.after_final.diversity.to_bits()
    });
    if same && all_same && st.report.outcomes.len() == 3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c7(state: &Result<Continual, String>) -> Check {
    let st = state
        .as_ref()
        .map_err(|e| format!("continual run failed: {e}"))?;
    let mut wins = vec![0usize; st.report.outcomes.len()];
    let mut lines = Vec::new();
    for (i, o) in st.report.outcomes.iter().enumerate() {
        let better = o.after_final.proxy_fid < o.base.proxy_fid;
        wins[i] += better as usize;
        lines.push(format!(
            "s0 {} {:.4}->{:.4}",
            o.task_id, o.base.proxy_fid, o.after_final.proxy_fid
        ));
    }
    for &seed in &CONTINUAL_SEEDS[1..] {
        let mut cfg = st.cfg.clone();
        cfg.run.seed = seed;
        for (i, task) in cfg.tasks.iter().enumerate() {
            let (res, _) = adapt_task(&cfg, &st.base, task, None).map_err(|e| e.to_string())?;
            let base_fid = st.report.outcomes[i].base.proxy_fid;
            wins[i] += (res.metrics.proxy_fid < base_fid) as usize;
            lines.push(format!(
                "s{seed} {} {:.4}->{:.4}",
                task.id, base_fid, res.metrics.proxy_fid
            ));
        }
    }
    let msg = format!("wins per task {wins:?} of 3; {}", lines.join(", "));
    if wins.iter().all(|&w| w >= 2) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8() -> Check {
    checks::frechet_checks(50)
}

fn c9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let arch = ArchSpec::mini();
    let rt = checks::checkpoint_roundtrips(&arch, 1000, dir.path())?;
    let hc = checks::header_corruption(&arch)?;
    Ok(format!("{rt}; {hc}"))
}

fn c10(state: &Result<Continual, String>) -> Check {
    let st = state
        .as_ref()
        .map_err(|e| format!("continual run failed: {e}"))?;
    let mut cfg = st.cfg.clone();
    cfg.train.iterations = ABLATION_ITERATIONS;
    cfg.run.seeds = CONTINUAL_SEEDS.to_vec();
    let task = cfg.task(ABLATION_TASK).map_err(|e| e.to_string())?.clone();
    let mut shapes = Vec::new();
    let mut shape_ok = true;
    let mut dominance = Vec::new();
    for (axis, rows) in [
        (Axis::Rank, 4),
        (Axis::Alpha, 5),
        (Axis::Activation, 2),
        (Axis::Placement, 3),
    ] {
        let table = ablate(
            &cfg,
            &st.base,
            axis,
            std::slice::from_ref(&task),
            &cfg.run.seeds,
        )
        .map_err(|e| e.to_string())?;
        let csv_rows = table.to_csv().lines().count() - 1;
        shape_ok &= table.row_labels.len() == rows && csv_rows == rows;
        shapes.push(format!("{} {csv_rows}", axis.name()));
        if axis == Axis::Placement {
            dominance = table.placement_dominance();
            let fids: Vec<String> = table
                .cells
                .iter()
                .map(|c| format!("{}/s{} {:.4}", c.row, c.seed, c.metrics.proxy_fid))
                .collect();
            shapes.push(format!("placement cells: {}", fids.join(" ")));
        }
    }
    let wins = dominance.iter().filter(|(_, ok)| *ok).count();
    let msg = format!(
        "rows: {}; both dominates in {wins}/3 seeds",
        shapes.join(", ")
    );
    if shape_ok && wins >= 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn selected() -> Option<Vec<usize>> {
    let v = std::env::var("COLORA_ACCEPTANCE_ONLY").ok()?;
    Some(v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn report(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let res = f();
    let elapsed = t.elapsed();
    let within = elapsed <= budget;
    let (tag, detail) = match &res {
        Ok(m) if within => ("PASS", m.clone()),
        Ok(m) => ("FAIL", format!("{m}; over budget {budget:?}")),
        Err(m) => ("FAIL", m.clone()),
    };
    println!(
        "{tag} [{n:>2}] {name}: {detail} ({:.1}s)",
        elapsed.as_secs_f64()
    );
    tag == "PASS"
}

fn main() -> ExitCode {
    let only = selected();
    let want = |n: usize| only.as_ref().map_or(true, |o| o.contains(&n));
    let mins = |m: u64| Duration::from_secs(60 * m);
    let secs = Duration::from_secs;
    let mut ok = true;

    if want(1) {
        ok &= report(1, "adapter-math oracle equivalence", secs(10), c1);
    }
    if want(2) {
        ok &= report(2, "zero-init identity", secs(60), c2);
    }
    if want(3) {
        ok &= report(3, "gradient integrity", secs(60), c3);
    }
    if want(4) {
        ok &= report(4, "parameter accounting", secs(1), c4);
    }
    if want(5) {
        ok &= report(5, "alpha heuristic argmax consistency", secs(1), c5);
    }
    let needs_run = [6, 7, 10].iter().any(|&n| want(n));
    let t_run = Instant::now();
    let state = if needs_run {
        run_continual_experiment()
    } else {
        Err("not run".into())
    };
    let run_time = t_run.elapsed();
    if want(6) {
        ok &= report(
            6,
            "zero forgetting",
            mins(15).saturating_sub(run_time),
            || c6(&state),
        );
    }
    if want(7) {
        ok &= report(7, "adaptation effectiveness", mins(15), || c7(&state));
    }
    if want(8) {
        ok &= report(8, "frechet distance correctness", secs(10), c8);
    }
    if want(9) {
        ok &= report(9, "checkpoint durability", secs(30), c9);
    }
    if want(10) {
        ok &= report(10, "ablation harness shape", mins(45), || c10(&state));
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
