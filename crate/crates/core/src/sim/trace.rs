//! Trace invariants, Chrome trace-event export, and the text report.

use serde_json::{json, Value};

use super::{SimError, SimReport, SimTrace};

const OVERLAP_TOLERANCE: f64 = 1e-9;

/// Checks the structural invariants every emitted trace must satisfy:
/// finite nonnegative times, disjoint intervals per GPU, and per-GPU busy
/// time consistent with the report.
pub fn validate_trace(trace: &SimTrace, report: &SimReport) -> Result<(), SimError> {
    let fail = |msg: String| Err(SimError::InvariantViolated(msg));
    let mut per_gpu: Vec<Vec<(f64, f64)>> = vec![Vec::new(); trace.gpus];
    for e in &trace.events {
        if e.gpu >= trace.gpus {
            return fail(format!("event on gpu {} of {}", e.gpu, trace.gpus));
        }
        if !e.start.is_finite() || !e.end.is_finite() || e.start < 0.0 || e.end < e.start {
            return fail(format!("bad interval [{}, {}]", e.start, e.end));
        }
        per_gpu[e.gpu].push((e.start, e.end));
    }
    for (gpu, intervals) in per_gpu.iter_mut().enumerate() {
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for pair in intervals.windows(2) {
            if pair[1].0 < pair[0].1 - OVERLAP_TOLERANCE {
                return fail(format!(
                    "gpu {gpu}: [{}, {}] overlaps [{}, {}]",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                ));
            }
        }
        // work conservation: busy time equals the sum of assigned durations
        let busy: f64 = intervals.iter().map(|(s, e)| e - s).sum();
        let reported = report.busy_fraction[gpu] * report.makespan;
        if (busy - reported).abs() > 1e-6 * busy.max(1.0) {
            return fail(format!(
                "gpu {gpu}: busy {busy} disagrees with report {reported}"
            ));
        }
    }
    if let Some(&max_latency) = report
        .per_prompt_latency
        .iter()
        .max_by(|a, b| a.total_cmp(b))
        .as_ref()
    {
        if report.makespan < max_latency - OVERLAP_TOLERANCE {
            return fail(format!(
                "makespan {} below slowest prompt {}",
                report.makespan, max_latency
            ));
        }
    }
    Ok(())
}

/// Chrome trace-event JSON: paired begin/end events, one process per GPU
/// group, one thread lane per GPU, timestamps in microseconds.
pub fn chrome_trace_json(trace: &SimTrace) -> String {
    let pid_of = |gpu: usize| usize::from(gpu >= trace.denoise_gpus);
    let mut events: Vec<Value> = Vec::new();
    let denoise_name = if trace.denoise_gpus == trace.gpus {
        "cluster"
    } else {
        "denoise-group"
    };
    events.push(json!({
        "name": "process_name", "ph": "M", "pid": 0, "tid": 0,
        "args": {"name": denoise_name}
    }));
    if trace.denoise_gpus < trace.gpus {
        events.push(json!({
            "name": "process_name", "ph": "M", "pid": 1, "tid": 0,
            "args": {"name": "decode-group"}
        }));
    }
    let mut timed: Vec<(f64, u8, Value)> = Vec::new();
    for e in &trace.events {
        let ts = e.start * 1e6;
        let end = e.end * 1e6;
        let common = json!({
            "name": e.kind.name(), "cat": "sim",
            "pid": pid_of(e.gpu), "tid": e.gpu,
        });
        let mut begin = common.clone();
        begin["ph"] = json!("B");
        begin["ts"] = json!(ts);
        begin["args"] = json!({"prompt": e.prompt});
        let mut finish = common;
        finish["ph"] = json!("E");
        finish["ts"] = json!(end);
        timed.push((ts, 1, begin));
        timed.push((end, 0, finish));
    }
    // ends sort before begins at equal timestamps so lanes never nest
    timed.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then_with(|| {
            let key = |v: &Value| (v["tid"].as_u64(), v["name"].as_str().map(String::from));
            key(&a.2).cmp(&key(&b.2))
        })
    });
    events.extend(timed.into_iter().map(|(_, _, v)| v));
    serde_json::to_string_pretty(&events).expect("trace serializes")
}

/// Structural check for an emitted Chrome trace: every lane's begin/end
/// events pair up and timestamps never go backwards within a lane.
pub fn validate_chrome_trace(payload: &str) -> Result<(), String> {
    let events: Vec<Value> =
        serde_json::from_str(payload).map_err(|e| format!("not a JSON array: {e}"))?;
    use std::collections::HashMap;
    let mut lanes: HashMap<(u64, u64), (i64, f64)> = HashMap::new();
    for e in &events {
        let ph = e["ph"].as_str().ok_or("event without ph")?;
        if ph == "M" {
            continue;
        }
        let pid = e["pid"].as_u64().ok_or("event without pid")?;
        let tid = e["tid"].as_u64().ok_or("event without tid")?;
        let ts = e["ts"].as_f64().ok_or("event without ts")?;
        let lane = lanes.entry((pid, tid)).or_insert((0, f64::NEG_INFINITY));
        if ts < lane.1 {
            return Err(format!("lane ({pid},{tid}): clock moved backwards at {ts}"));
        }
        lane.1 = ts;
        match ph {
            "B" => lane.0 += 1,
            "E" => {
                lane.0 -= 1;
                if lane.0 < 0 {
                    return Err(format!("lane ({pid},{tid}): end without begin at {ts}"));
                }
            }
            other => return Err(format!("unsupported phase {other:?}")),
        }
    }
    for ((pid, tid), (depth, _)) in lanes {
        if depth != 0 {
            return Err(format!("lane ({pid},{tid}): {depth} unclosed begin events"));
        }
    }
    Ok(())
}

/// Plain-text report: one `key value` line per scalar, then one line per
/// prompt and per GPU.
pub fn render_report(report: &SimReport, trace: &SimTrace) -> String {
    let mut out = String::new();
    out.push_str("# simulation report\n");
    out.push_str(&format!("prompts {}\n", report.per_prompt_latency.len()));
    out.push_str(&format!("gpus {}\n", trace.gpus));
    out.push_str(&format!("makespan_s {:.6}\n", report.makespan));
    out.push_str(&format!("oom {}\n", report.oom));
    for (i, latency) in report.per_prompt_latency.iter().enumerate() {
        out.push_str(&format!("prompt {i} latency_s {latency:.6}\n"));
    }
    for gpu in 0..trace.gpus {
        let role = if gpu < trace.denoise_gpus {
            if trace.denoise_gpus == trace.gpus {
                "colocated"
            } else {
                "denoise"
            }
        } else {
            "decode"
        };
        out.push_str(&format!(
            "gpu {gpu} role {role} busy_fraction {:.6} peak_gb {:.6}\n",
            report.busy_fraction[gpu], report.peak_memory[gpu]
        ));
    }
    out
}
