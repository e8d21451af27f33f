//! Partition-aware coverage accounting with bounded call-chain context.
//!
//! Instances track coverage in a fixed 2^16-entry hit map, the size used by
//! AFL-style fuzzers. The classic index for a block transition is
//! `cur_block XOR (prev_block >> 1)`. To distinguish the same transition
//! reached through different call chains, the index is additionally XORed
//! with a hash of the top `context_depth` call-stack frames. Each instance
//! bounds that depth by the average shortest path length of its assigned
//! partition: deep enough to capture meaningful context, shallow enough to
//! avoid path explosion and hash collisions in the fixed-size map.
//!
//! A map only records transitions whose current block belongs to one of the
//! instance's instrumented functions; replaying a test case answers the
//! retention question "did this input exercise anything new inside my
//! partition?".

use thiserror::Error;

use crate::callgraph::CallGraph;

/// Number of entries in the hit map.
pub const MAP_SIZE: usize = 1 << 16;

/// Bytes in a serialized map (one bit per entry).
pub const MAP_BYTES: usize = MAP_SIZE / 8;

/// Context depth is clamped to this range: zero would disable context
/// entirely, and very deep bounds recreate the path-explosion problem the
/// bound exists to avoid.
pub const DEPTH_RANGE: (usize, usize) = (1, 16);

/// Classic block-transition index: `(cur XOR (prev >> 1)) mod 2^16`.
/// The shift happens at full width; only the final index is masked.
#[inline]
pub fn edge_index(prev_block: u64, cur_block: u64) -> u16 {
    ((cur_block ^ (prev_block >> 1)) & 0xFFFF) as u16
}

/// FNV-1a-64 over a function name, XOR-folded to 16 bits. Stable across
/// runs and platforms.
#[inline]
pub fn function_hash(name: &str) -> u16 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 32;
    h ^= h >> 16;
    (h & 0xFFFF) as u16
}

/// XOR of the hashes of the top `min(depth_bound, len)` stack frames.
/// An empty effective stack hashes to 0. XOR makes the hash insensitive to
/// frame order and cancels repeated frames of even multiplicity; that is a
/// documented property of this scheme, not an accident.
pub fn hash_callstack<S: AsRef<str>>(stack: &[S], depth_bound: usize) -> u16 {
    let take = depth_bound.min(stack.len());
    stack[stack.len() - take..]
        .iter()
        .fold(0u16, |acc, f| acc ^ function_hash(f.as_ref()))
}

/// Context-sensitive bitmap index: the transition index XORed with the
/// bounded call-stack hash. With `depth_bound = 0` this is exactly
/// [`edge_index`].
pub fn context_index<S: AsRef<str>>(
    prev_block: u64,
    cur_block: u64,
    stack: &[S],
    depth_bound: usize,
) -> u16 {
    edge_index(prev_block, cur_block) ^ hash_callstack(stack, depth_bound)
}

/// Context depth for a partition: the average directed shortest-path length
/// (hop count) over all ordered reachable pairs of its induced subgraph,
/// rounded half-up and clamped to [`DEPTH_RANGE`]. A subgraph with no
/// reachable pairs gets depth 1.
pub fn compute_context_depth(partition_subgraph: &CallGraph) -> usize {
    let n = partition_subgraph.len();
    let mut total_hops: u64 = 0;
    let mut pairs: u64 = 0;
    let mut dist = vec![u32::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for src in partition_subgraph.ids() {
        dist.iter_mut().for_each(|d| *d = u32::MAX);
        dist[src.index()] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in partition_subgraph.callees(u) {
                if dist[v.index()] == u32::MAX {
                    dist[v.index()] = dist[u.index()] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (i, &d) in dist.iter().enumerate() {
            if d != u32::MAX && i != src.index() {
                total_hops += d as u64;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return DEPTH_RANGE.0;
    }
    let mean = total_hops as f64 / pairs as f64;
    let rounded = (mean + 0.5).floor() as usize;
    rounded.clamp(DEPTH_RANGE.0, DEPTH_RANGE.1)
}

/// One event of an execution trace. Function names are interned in the
/// owning [`ExecutionTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Enter(u32),
    Exit(u32),
    Block(u32, u64),
}

/// A replayable execution: enter/exit events with balanced stack discipline
/// plus block events attributed to the function on top of the stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    functions: Vec<String>,
    events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace event {position}: {message}")]
    Malformed { position: usize, message: String },
}

impl ExecutionTrace {
    pub fn new() -> Self {
        ExecutionTrace {
            functions: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn functions(&self) -> &[String] {
        &self.functions
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn intern(&mut self, name: &str) -> u32 {
        // Traces touch few distinct functions; linear scan beats a map here.
        if let Some(pos) = self.functions.iter().position(|f| f == name) {
            return pos as u32;
        }
        self.functions.push(name.to_string());
        (self.functions.len() - 1) as u32
    }

    pub fn push_enter(&mut self, function: &str) {
        let f = self.intern(function);
        self.events.push(TraceEvent::Enter(f));
    }

    pub fn push_exit(&mut self, function: &str) {
        let f = self.intern(function);
        self.events.push(TraceEvent::Exit(f));
    }

    pub fn push_block(&mut self, function: &str, block_id: u64) {
        let f = self.intern(function);
        self.events.push(TraceEvent::Block(f, block_id));
    }

    /// Parse the trace file format: one event per line, `E <fn>`, `X <fn>`,
    /// or `B <fn> <block_id>`; `#` comments and blank lines ignored.
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut trace = ExecutionTrace::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| TraceError::Parse {
                line: lineno + 1,
                message,
            };
            let mut fields = line.split_whitespace();
            let kind = fields.next().unwrap();
            let function = fields
                .next()
                .ok_or_else(|| err("missing function name".into()))?;
            match kind {
                "E" => trace.push_enter(function),
                "X" => trace.push_exit(function),
                "B" => {
                    let id: u64 = fields
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err("missing or invalid block id".into()))?;
                    trace.push_block(function, id);
                }
                other => return Err(err(format!("unknown event kind `{other}`"))),
            }
            if fields.next().is_some() {
                return Err(err("trailing fields".into()));
            }
        }
        Ok(trace)
    }

    /// Render in the trace file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            match *ev {
                TraceEvent::Enter(f) => {
                    out.push_str(&format!("E {}\n", self.functions[f as usize]))
                }
                TraceEvent::Exit(f) => out.push_str(&format!("X {}\n", self.functions[f as usize])),
                TraceEvent::Block(f, id) => {
                    out.push_str(&format!("B {} {}\n", self.functions[f as usize], id))
                }
            }
        }
        out
    }

    /// Build a trace that carries call pairs only: each pair becomes one
    /// nested enter/exit with no block events. Lets pair-format profiler
    /// output (`caller<TAB>callee` lines) drive graph updates.
    pub fn from_call_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Self {
        let mut trace = ExecutionTrace::new();
        for (caller, callee) in pairs {
            trace.push_enter(caller.as_ref());
            trace.push_enter(callee.as_ref());
            trace.push_exit(callee.as_ref());
            trace.push_exit(caller.as_ref());
        }
        trace
    }

    /// Derive dynamic call pairs (caller, callee) from the enter events.
    /// Entering `f` with `g` on top of the stack records the pair `(g, f)`.
    pub fn call_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = Vec::new();
        let mut stack: Vec<u32> = Vec::new();
        for ev in &self.events {
            match *ev {
                TraceEvent::Enter(f) => {
                    if let Some(&caller) = stack.last() {
                        pairs.push((
                            self.functions[caller as usize].clone(),
                            self.functions[f as usize].clone(),
                        ));
                    }
                    stack.push(f);
                }
                TraceEvent::Exit(_) => {
                    stack.pop();
                }
                TraceEvent::Block(..) => {}
            }
        }
        pairs
    }
}

impl Default for ExecutionTrace {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of replaying one trace against a map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    /// Bits that were not set before this replay.
    pub new_bits: u64,
    /// Every index recorded during this replay (new or not).
    pub indices: std::collections::BTreeSet<u16>,
}

/// Seed retention rule: keep a test case iff its replay set at least one new
/// bit in the instance's partition-restricted map.
pub fn retain_decision(outcome: &ReplayOutcome) -> bool {
    outcome.new_bits > 0
}

/// Per-instance coverage map restricted to an instrumented function set.
#[derive(Clone)]
pub struct CoverageMap {
    bits: Box<[u8; MAP_BYTES]>,
    instrumented: std::collections::HashSet<String>,
    context_depth: usize,
}

impl CoverageMap {
    pub fn new<S: Into<String>>(
        instrumented: impl IntoIterator<Item = S>,
        context_depth: usize,
    ) -> Self {
        CoverageMap {
            bits: Box::new([0u8; MAP_BYTES]),
            instrumented: instrumented.into_iter().map(Into::into).collect(),
            context_depth,
        }
    }

    pub fn context_depth(&self) -> usize {
        self.context_depth
    }

    pub fn is_instrumented(&self, function: &str) -> bool {
        self.instrumented.contains(function)
    }

    pub fn count_bits(&self) -> u64 {
        self.bits.iter().map(|b| b.count_ones() as u64).sum()
    }

    #[inline]
    fn test_and_set(&mut self, index: u16) -> bool {
        let byte = (index / 8) as usize;
        let mask = 1u8 << (index % 8);
        let fresh = self.bits[byte] & mask == 0;
        self.bits[byte] |= mask;
        fresh
    }

    /// Serialized map: 8192 bytes, bit `i` of byte `b` holds index `8b + i`.
    pub fn to_bytes(&self) -> &[u8; MAP_BYTES] {
        &self.bits
    }

    /// Load a previously dumped map.
    pub fn load_bytes(&mut self, bytes: &[u8; MAP_BYTES]) {
        self.bits.copy_from_slice(bytes);
    }

    /// Walk a trace, record the context-sensitive index of every block event
    /// whose function is instrumented, and report how many previously-unset
    /// bits this replay set. `prev_block` starts at 0 and is only advanced
    /// by instrumented block events, mirroring selective instrumentation:
    /// uninstrumented code leaves no mark in the map.
    pub fn replay(&mut self, trace: &ExecutionTrace) -> Result<ReplayOutcome, TraceError> {
        // Resolve instrumentation and hashes once per distinct function.
        let resolved: Vec<(bool, u16)> = trace
            .functions()
            .iter()
            .map(|name| (self.instrumented.contains(name), function_hash(name)))
            .collect();
        let mut stack: Vec<u32> = Vec::new();
        let mut stack_hash_window = StackHasher::new(self.context_depth);
        let mut prev_block: u64 = 0;
        let mut outcome = ReplayOutcome {
            new_bits: 0,
            indices: Default::default(),
        };
        for (position, ev) in trace.events().iter().enumerate() {
            match *ev {
                TraceEvent::Enter(f) => {
                    stack.push(f);
                    stack_hash_window.invalidate();
                }
                TraceEvent::Exit(f) => match stack.pop() {
                    Some(top) if top == f => stack_hash_window.invalidate(),
                    Some(top) => {
                        return Err(TraceError::Malformed {
                            position,
                            message: format!(
                                "exit from `{}` but `{}` is on top of the stack",
                                trace.functions()[f as usize],
                                trace.functions()[top as usize]
                            ),
                        })
                    }
                    None => {
                        return Err(TraceError::Malformed {
                            position,
                            message: format!(
                                "exit from `{}` with an empty call stack",
                                trace.functions()[f as usize]
                            ),
                        })
                    }
                },
                TraceEvent::Block(f, block_id) => {
                    match stack.last() {
                        Some(&top) if top == f => {}
                        Some(&top) => {
                            return Err(TraceError::Malformed {
                                position,
                                message: format!(
                                    "block event in `{}` but `{}` is executing",
                                    trace.functions()[f as usize],
                                    trace.functions()[top as usize]
                                ),
                            })
                        }
                        None => {
                            return Err(TraceError::Malformed {
                                position,
                                message: format!(
                                    "block event in `{}` before any function was entered",
                                    trace.functions()[f as usize]
                                ),
                            })
                        }
                    }
                    let (instrumented, _) = resolved[f as usize];
                    if !instrumented {
                        continue;
                    }
                    let ctx = stack_hash_window.hash(&stack, &resolved);
                    let index = edge_index(prev_block, block_id) ^ ctx;
                    outcome.indices.insert(index);
                    if self.test_and_set(index) {
                        outcome.new_bits += 1;
                    }
                    prev_block = block_id;
                }
            }
        }
        Ok(outcome)
    }
}

/// Caches the XOR of the top `depth` frame hashes between stack changes, so
/// consecutive block events in the same frame pay for one XOR, not `depth`.
struct StackHasher {
    depth: usize,
    cached: Option<u16>,
}

impl StackHasher {
    fn new(depth: usize) -> Self {
        StackHasher {
            depth,
            cached: None,
        }
    }

    fn invalidate(&mut self) {
        self.cached = None;
    }

    fn hash(&mut self, stack: &[u32], resolved: &[(bool, u16)]) -> u16 {
        if let Some(h) = self.cached {
            return h;
        }
        let take = self.depth.min(stack.len());
        let h = stack[stack.len() - take..]
            .iter()
            .fold(0u16, |acc, &f| acc ^ resolved[f as usize].1);
        self.cached = Some(h);
        h
    }
}

/// Parse an 8192-byte bitmap dump.
pub fn bitmap_from_bytes(bytes: &[u8]) -> Result<Box<[u8; MAP_BYTES]>, String> {
    if bytes.len() != MAP_BYTES {
        return Err(format!(
            "bitmap dump must be exactly {MAP_BYTES} bytes, got {}",
            bytes.len()
        ));
    }
    let mut out = Box::new([0u8; MAP_BYTES]);
    out.copy_from_slice(bytes);
    Ok(out)
}
