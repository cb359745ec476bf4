//! Request counters, a latency histogram and an in-flight gauge, rendered in
//! the Prometheus text exposition format.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::atomic::{AtomicI64, Ordering};

use parking_lot::Mutex;

pub const REQUESTS_TOTAL: &str = "dietwise_http_requests_total";
pub const DURATION_MS: &str = "dietwise_http_request_duration_ms";
pub const IN_FLIGHT: &str = "dietwise_http_requests_in_flight";

/// Upper bucket bounds in milliseconds; `+Inf` is implicit.
pub const BUCKETS_MS: [f64; 9] = [5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0, 1000.0, 2500.0];

pub const STATUS_CLASSES: [&str; 3] = ["2xx", "4xx", "5xx"];

/// Label for requests that match no route.
pub const OTHER_ENDPOINT: &str = "other";

/// Route template as an `endpoint` label: `{id}` becomes `:id`, so label
/// values never carry braces.
pub fn endpoint_label(route: &str) -> String {
    route.replace('{', ":").replace('}', "")
}

pub fn status_class(status: u16) -> &'static str {
    match status {
        100..=199 => "1xx",
        200..=299 => "2xx",
        300..=399 => "3xx",
        400..=499 => "4xx",
        _ => "5xx",
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Histogram {
    /// Per-bucket (non-cumulative) counts; the last slot is `+Inf`.
    buckets: [u64; BUCKETS_MS.len() + 1],
    sum: f64,
    count: u64,
}

impl Histogram {
    fn observe(&mut self, ms: f64) {
        let slot = BUCKETS_MS.iter().position(|&b| ms <= b).unwrap_or(BUCKETS_MS.len());
        self.buckets[slot] += 1;
        self.sum += ms;
        self.count += 1;
    }
}

#[derive(Default)]
struct Series {
    requests: BTreeMap<(String, &'static str), u64>,
    durations: BTreeMap<String, Histogram>,
}

pub struct Telemetry {
    series: Mutex<Series>,
    in_flight: AtomicI64,
}

/// Snapshot of one endpoint, for tests and health output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EndpointCounts {
    pub requests: u64,
    pub histogram_count: u64,
}

impl Telemetry {
    /// Registers every `(endpoint, status class)` counter and every endpoint
    /// histogram at zero so a fresh scrape shows all series.
    pub fn new<'a>(endpoints: impl IntoIterator<Item = &'a str>) -> Self {
        let mut series = Series::default();
        for ep in endpoints.into_iter().chain([OTHER_ENDPOINT]).map(endpoint_label) {
            for class in STATUS_CLASSES {
                series.requests.insert((ep.clone(), class), 0);
            }
            series.durations.insert(ep, Histogram::default());
        }
        Self { series: Mutex::new(series), in_flight: AtomicI64::new(0) }
    }

    /// Marks a request in flight until the guard drops.
    pub fn start(&self) -> InFlight<'_> {
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        InFlight(self)
    }

    pub fn record(&self, endpoint: &str, status: u16, elapsed_ms: f64) {
        let endpoint = endpoint_label(endpoint);
        let mut s = self.series.lock();
        *s.requests.entry((endpoint.clone(), status_class(status))).or_default() += 1;
        s.durations.entry(endpoint).or_default().observe(elapsed_ms);
    }

    pub fn in_flight(&self) -> i64 {
        self.in_flight.load(Ordering::SeqCst)
    }

    pub fn counts(&self, endpoint: &str) -> EndpointCounts {
        let endpoint = endpoint_label(endpoint);
        let s = self.series.lock();
        EndpointCounts {
            requests: s.requests.iter().filter(|((ep, _), _)| *ep == endpoint).map(|(_, &n)| n).sum(),
            histogram_count: s.durations.get(&endpoint).map_or(0, |h| h.count),
        }
    }

    pub fn render(&self) -> String {
        let s = self.series.lock();
        let mut out = String::new();
        let _ = writeln!(out, "# HELP {REQUESTS_TOTAL} HTTP requests handled, by endpoint and status class.");
        let _ = writeln!(out, "# TYPE {REQUESTS_TOTAL} counter");
        for ((ep, class), n) in &s.requests {
            let _ = writeln!(out, "{REQUESTS_TOTAL}{{endpoint=\"{}\",status_class=\"{class}\"}} {n}", escape(ep));
        }
        let _ = writeln!(out, "# HELP {DURATION_MS} HTTP response time in milliseconds.");
        let _ = writeln!(out, "# TYPE {DURATION_MS} histogram");
        for (ep, h) in &s.durations {
            let ep = escape(ep);
            let mut cumulative = 0;
            for (i, n) in h.buckets.iter().enumerate() {
                cumulative += n;
                let le = BUCKETS_MS.get(i).map_or_else(|| "+Inf".to_string(), |b| b.to_string());
                let _ = writeln!(out, "{DURATION_MS}_bucket{{endpoint=\"{ep}\",le=\"{le}\"}} {cumulative}");
            }
            let _ = writeln!(out, "{DURATION_MS}_sum{{endpoint=\"{ep}\"}} {}", h.sum);
            let _ = writeln!(out, "{DURATION_MS}_count{{endpoint=\"{ep}\"}} {}", h.count);
        }
        let _ = writeln!(out, "# HELP {IN_FLIGHT} HTTP requests currently being handled.");
        let _ = writeln!(out, "# TYPE {IN_FLIGHT} gauge");
        let _ = writeln!(out, "{IN_FLIGHT} {}", self.in_flight());
        out
    }
}

pub struct InFlight<'a>(&'a Telemetry);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Label-value escaping: backslash, double quote and newline.
fn escape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}
