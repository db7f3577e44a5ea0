//! Acceptance suite. One test per criterion; each prints a PASS line on
//! success (run with `--nocapture` to see them).
//!
//! 1. Exact per-step reproduction of the published example traces.
//! 2. Optimal schedule discovery with stable output.
//! 3. Search vs. brute force over >= 500 random DAGs, 100% agreement.
//! 4. Compacting-allocator peak == working-set peak; buffers never overlap.
//! 5. Static vs. dynamic footprints on the example graph.
//! 6. Round-trip identity and byte-identical golden files.
//! 7. Designated errors exit nonzero.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use opsched_cli::emit::{render_trace_csv, render_trace_svg};
use opsched_cli::model::{load_model, save_graph_with_schedule};
use opsched_core::alloc::{
    simulate_compacting, simulate_static, AllocationReport, ArenaConfig, EventKind,
};
use opsched_core::corpus::{has_branch, GraphGen, Rng};
use opsched_core::graph::Graph;
use opsched_core::sched::{
    brute_force_min_peak, enumerate_schedules, min_peak_memory, working_set_trace, DpConfig,
    EnumConfig, Schedule,
};

const CORPUS_SIZE: usize = 500;
const MAX_ORDERS_PER_GRAPH: usize = 3000;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/paper_fig1.json")
}

fn opsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opsched"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// 500 random DAGs: <= 8 operators, sizes uniform in [1, 1000]. Graphs with
/// more than MAX_ORDERS_PER_GRAPH topological orders are re-rolled so the
/// exhaustive passes stay bounded.
fn corpus() -> &'static Vec<Graph> {
    static CORPUS: OnceLock<Vec<Graph>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let gen = GraphGen::default();
        let mut rng = Rng::new(0x5eed_cafe);
        let mut graphs = Vec::with_capacity(CORPUS_SIZE);
        while graphs.len() < CORPUS_SIZE {
            let g = gen.generate(&mut rng);
            let orders = enumerate_schedules(&g, &EnumConfig::default())
                .unwrap()
                .take(MAX_ORDERS_PER_GRAPH + 1)
                .count();
            if orders <= MAX_ORDERS_PER_GRAPH {
                graphs.push(g);
            }
        }
        graphs
    })
}

#[test]
fn criterion_1_exact_trace_reproduction() {
    let started = Instant::now();
    let out = stdout_of(&opsched(&[
        "analyze",
        fixture().to_str().unwrap(),
        "--schedule",
        "1,2,3,4,5,6,7",
    ]));
    assert!(
        out.contains("per-step bytes: 4704,4704,5216,4160,1280,1024,1024"),
        "{out}"
    );
    assert!(out.contains("peak: 5216 B at step 2"), "{out}");

    let out = stdout_of(&opsched(&[
        "analyze",
        fixture().to_str().unwrap(),
        "--schedule",
        "1,4,6,2,3,5,7",
    ]));
    assert!(
        out.contains("per-step bytes: 4704,3648,3904,4960,2336,1024,1024"),
        "{out}"
    );
    assert!(out.contains("peak: 4960 B at step 3"), "{out}");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!("ACCEPTANCE 1 exact trace reproduction: PASS ({elapsed:?})");
}

#[test]
fn criterion_2_optimal_schedule_discovery() {
    let started = Instant::now();
    let first = stdout_of(&opsched(&["optimize", fixture().to_str().unwrap()]));
    assert!(first.contains("optimal order peak: 4960 B"), "{first}");
    assert!(first.contains("optimal schedule: 1,4,6,2,3,5,7"), "{first}");

    // Deterministic across runs.
    let second = stdout_of(&opsched(&["optimize", fixture().to_str().unwrap()]));
    assert_eq!(first, second);

    // The reported schedule achieves the reported peak.
    let model = load_model(&fixture(), true).unwrap();
    let result = min_peak_memory(&model.graph, &DpConfig::default()).unwrap();
    assert_eq!(result.min_peak_bytes, 4960);
    let achieved = working_set_trace(&model.graph, &result.schedule)
        .unwrap()
        .peak_bytes;
    assert_eq!(achieved, 4960);

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!("ACCEPTANCE 2 optimal schedule discovery: PASS ({elapsed:?})");
}

#[test]
fn criterion_3_search_equals_brute_force_on_500_dags() {
    let started = Instant::now();
    let graphs = corpus();
    assert_eq!(graphs.len(), CORPUS_SIZE);

    let branching = graphs.iter().filter(|g| has_branch(g)).count();
    assert!(
        branching * 5 >= CORPUS_SIZE,
        "only {branching}/{CORPUS_SIZE} graphs branch (need >= 20%)"
    );

    let mut agreements = 0;
    for (i, g) in graphs.iter().enumerate() {
        let brute = brute_force_min_peak(g, &EnumConfig::default()).unwrap();
        let dp = min_peak_memory(g, &DpConfig::default()).unwrap();
        assert_eq!(
            dp.min_peak_bytes, brute.min_peak_bytes,
            "graph {i} disagrees: {g:?}"
        );
        let achieved = working_set_trace(g, &dp.schedule).unwrap().peak_bytes;
        assert_eq!(
            achieved, dp.min_peak_bytes,
            "graph {i} schedule misses its peak"
        );
        agreements += 1;
    }
    assert_eq!(agreements, CORPUS_SIZE);

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "ACCEPTANCE 3 search == brute force on {CORPUS_SIZE} DAGs \
         ({branching} branching): PASS ({elapsed:?})"
    );
}

#[test]
fn criterion_4_allocator_consistency_on_every_schedule() {
    let started = Instant::now();
    let config = ArenaConfig {
        capacity_bytes: None,
        alignment_bytes: 1,
    };
    let mut pairs = 0u64;
    for (i, g) in corpus().iter().enumerate() {
        for schedule in enumerate_schedules(g, &EnumConfig::default()).unwrap() {
            let trace = working_set_trace(g, &schedule).unwrap();
            let report = simulate_compacting(g, &schedule, &config).unwrap();
            assert_eq!(
                report.peak_address_bytes, trace.peak_bytes,
                "graph {i}, schedule {schedule}"
            );
            check_no_overlap(&report);
            pairs += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "ACCEPTANCE 4 allocator peak == trace peak on {pairs} (graph, schedule) \
         pairs, no overlaps: PASS ({elapsed:?})"
    );
}

/// Interval checks over every step: the post-compaction snapshot is
/// disjoint, the reconstructed pre-compaction layout is disjoint, moves
/// preserve sizes, and compaction preserves relative order.
fn check_no_overlap(report: &AllocationReport) {
    let mut moves_by_step: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, e) in report.events.iter().enumerate() {
        if e.kind == EventKind::Move {
            moves_by_step.entry(e.step).or_default().push(i);
        }
    }
    for (step, layout) in report.per_step_layout.iter().enumerate() {
        assert_disjoint(layout.iter().map(|b| (b.offset, b.size)));
        let Some(move_ids) = moves_by_step.get(&step) else {
            continue;
        };
        let mut before = layout.clone();
        for &i in move_ids {
            let event = &report.events[i];
            let buf = before
                .iter_mut()
                .find(|b| b.tensor == event.tensor)
                .expect("moved buffer is live after compaction");
            assert_eq!(Some(buf.offset), event.to_offset);
            assert_eq!(buf.size, event.size, "moves never resize");
            buf.offset = event.from_offset.expect("moves record a source");
        }
        before.sort_by_key(|b| b.offset);
        assert_disjoint(before.iter().map(|b| (b.offset, b.size)));
        let order_before: Vec<_> = before.iter().map(|b| b.tensor).collect();
        let order_after: Vec<_> = layout.iter().map(|b| b.tensor).collect();
        assert_eq!(order_before, order_after, "compaction reordered buffers");
    }
}

fn assert_disjoint(intervals: impl Iterator<Item = (u64, u64)>) {
    let mut sorted: Vec<(u64, u64)> = intervals.collect();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        assert!(
            pair[0].0 + pair[0].1 <= pair[1].0 || pair[1].1 == 0,
            "buffers overlap: {pair:?}"
        );
    }
}

#[test]
fn criterion_5_static_vs_dynamic_on_the_example() {
    let model = load_model(&fixture(), true).unwrap();
    let byte_arena = ArenaConfig {
        capacity_bytes: None,
        alignment_bytes: 1,
    };
    let static_peak = simulate_static(&model.graph, &byte_arena).unwrap();
    assert_eq!(static_peak, 8320);

    let optimal = min_peak_memory(&model.graph, &DpConfig::default()).unwrap();
    let dynamic = simulate_compacting(&model.graph, &optimal.schedule, &byte_arena)
        .unwrap()
        .peak_address_bytes;
    assert_eq!(dynamic, 4960);

    let ratio = static_peak as f64 / dynamic as f64;
    assert!(
        (ratio - 8320.0 / 4960.0).abs() < 1e-9 && ratio > 1.6,
        "static/dynamic ratio {ratio}"
    );

    // The CLI report agrees.
    let json = stdout_of(&opsched(&[
        "compare",
        fixture().to_str().unwrap(),
        "--json",
    ]));
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["static_peak"], 8320);
    assert_eq!(report["dynamic_peak_optimal"], 4960);
    assert_eq!(report["savings_bytes"], 256);

    println!("ACCEPTANCE 5 static 8320 B vs dynamic 4960 B (ratio {ratio:.2}x): PASS");
}

#[test]
fn criterion_6_round_trip_and_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let model = load_model(&fixture(), true).unwrap();

    // load -> save -> load structural identity.
    let saved = dir.path().join("fig1_again.json");
    save_graph_with_schedule(&model, &model.graph.default_schedule(), &saved).unwrap();
    let again = load_model(&saved, true).unwrap();
    assert_eq!(model.graph, again.graph);

    // Emitted CSV and SVG are byte-identical to the checked-in goldens.
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let optimal = Schedule::new(
        [0u32, 3, 5, 1, 2, 4, 6]
            .iter()
            .map(|&i| opsched_core::graph::OperatorId(i))
            .collect(),
    );
    let cases = [
        ("fig1_default.csv", model.graph.default_schedule(), "csv"),
        ("fig1_optimal.csv", optimal.clone(), "csv"),
        ("fig1_default.svg", model.graph.default_schedule(), "svg"),
        ("fig1_optimal.svg", optimal, "svg"),
    ];
    for (name, schedule, kind) in cases {
        let trace = working_set_trace(&model.graph, &schedule).unwrap();
        let rendered = match kind {
            "csv" => render_trace_csv(&model, &trace),
            _ => render_trace_svg(&model, &trace),
        };
        let golden = std::fs::read_to_string(golden_dir.join(name)).unwrap();
        assert_eq!(rendered, golden, "{name} is not byte-identical");
    }

    println!("ACCEPTANCE 6 round-trip identity and golden files: PASS");
}

#[test]
fn criterion_7_designated_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        path
    };

    let cycle = write(
        "cycle.json",
        r#"{"version":1,"tensors":[{"id":0,"size_bytes":4,"storage":"ram"},
            {"id":1,"size_bytes":4,"storage":"ram"}],
            "operators":[{"id":0,"opcode":"A","inputs":[1],"output":0},
            {"id":1,"opcode":"B","inputs":[0],"output":1}]}"#,
    );
    let dup = write(
        "dup.json",
        r#"{"version":1,"tensors":[{"id":0,"size_bytes":4,"storage":"ram"},
            {"id":1,"size_bytes":4,"storage":"ram"}],
            "operators":[{"id":0,"opcode":"A","inputs":[0],"output":1},
            {"id":1,"opcode":"B","inputs":[0],"output":1}]}"#,
    );
    let order = write(
        "order.json",
        r#"{"version":1,"tensors":[{"id":0,"size_bytes":4,"storage":"ram"},
            {"id":1,"size_bytes":4,"storage":"ram"},{"id":2,"size_bytes":4,"storage":"ram"}],
            "operators":[{"id":1,"opcode":"B","inputs":[1],"output":2},
            {"id":0,"opcode":"A","inputs":[0],"output":1}]}"#,
    );

    let fixture = fixture();
    let fixture = fixture.to_str().unwrap();
    let cases: [(&[&str], &str); 5] = [
        (&["analyze", cycle.to_str().unwrap()], "cycle"),
        (&["analyze", dup.to_str().unwrap()], "produced by both"),
        (&["analyze", order.to_str().unwrap()], "not topological"),
        (&["optimize", fixture, "--dp-limit", "3"], "O(|V| * 2^|V|)"),
        (
            &["simulate", fixture, "--capacity", "4000"],
            "capacity of 4000 B exceeded",
        ),
    ];
    for (args, needle) in cases {
        let out = opsched(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{args:?}: {err}");
    }

    println!("ACCEPTANCE 7 designated errors exit nonzero: PASS");
}
